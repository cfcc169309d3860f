//! Central finite-difference verification of analytic gradients.
//!
//! The checker never touches the reverse-mode path: it evaluates the loss
//! twice per coordinate with the coordinate nudged by ±h and compares the
//! quotient against the analytic gradient. This is the independent oracle
//! behind every gradient claim in the crate.

use crate::graph::{Graph, NodeId, Tensor};
use rand::Rng;

/// Relative error with a floor so near-zero gradients compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[derive(Debug, Clone)]
pub struct FdSummary {
    pub checked: usize,
    pub max_rel_err: f64,
    /// (tensor index, coordinate) of the worst disagreement.
    pub worst: (usize, usize),
}

/// Check every coordinate of every input of a scalar graph function.
/// Panics on disagreement; used by op-level unit tests.
pub fn check_scalar_fn<F>(inputs: &[Tensor], build: F, h: f64, tol: f64)
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let eval = |tensors: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = build(&mut g, &ids);
        g.value(loss).item()
    };

    // analytic pass
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &ids);
    let grads = g.backward(loss).expect("backward failed");

    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(ids[ti], t.rows, t.cols);
        for ci in 0..t.len() {
            let orig = work[ti].data[ci];
            work[ti].data[ci] = orig + h;
            let lp = eval(&work);
            work[ti].data[ci] = orig - h;
            let lm = eval(&work);
            work[ti].data[ci] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = analytic.data[ci];
            let e = rel_err(fd, an);
            assert!(
                e <= tol,
                "fd mismatch tensor {ti} coord {ci}: analytic {an:.3e} vs fd {fd:.3e} (rel {e:.3e})"
            );
        }
    }
}

/// Compare analytic gradients against central differences at sampled
/// coordinates of a parameter list. `loss_fn` must be a pure function of
/// the parameters. Sampling is deterministic in `seed` and spreads across
/// all tensors proportionally to their size.
pub fn check_sampled<F>(
    mut loss_fn: F,
    params: &mut [Tensor],
    analytic: &[Tensor],
    h: f64,
    samples: usize,
    seed: u64,
) -> FdSummary
where
    F: FnMut(&[Tensor]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "param/grad tensor count mismatch");
    let total: usize = params.iter().map(|t| t.len()).sum();
    let samples = samples.min(total);
    let mut rng = crate::rng::stream1(seed, "fdcheck", 0);

    // Evenly spaced global offsets with a small random jitter keep the
    // sample spread over every tensor while staying deterministic.
    let mut picks: Vec<usize> = (0..samples)
        .map(|i| {
            let base = i * total / samples;
            let jitter = rng.gen_range(0..(total / samples).max(1));
            (base + jitter).min(total - 1)
        })
        .collect();
    picks.dedup();

    let mut max_rel = 0.0;
    let mut worst = (0, 0);
    let mut checked = 0;
    for global in picks {
        // locate (tensor, coord)
        let mut remaining = global;
        let mut ti = 0;
        while remaining >= params[ti].len() {
            remaining -= params[ti].len();
            ti += 1;
        }
        let ci = remaining;

        let orig = params[ti].data[ci];
        params[ti].data[ci] = orig + h;
        let lp = loss_fn(params);
        params[ti].data[ci] = orig - h;
        let lm = loss_fn(params);
        params[ti].data[ci] = orig;
        let fd = (lp - lm) / (2.0 * h);
        let an = analytic[ti].data[ci];
        let e = rel_err(fd, an);
        if e > max_rel {
            max_rel = e;
            worst = (ti, ci);
        }
        checked += 1;
    }
    FdSummary {
        checked,
        max_rel_err: max_rel,
        worst,
    }
}
