//! Intermediate-layer InfoNCE losses over end-of-segment states.
//!
//! Three losses share one kernel `f(a,b) = exp(cos(a,b)/τ)`:
//!
//! * video-to-video: anchor `e_v`, positive the dropout-perturbed second
//!   view `ẽ_v`, negatives the degraded state `ê_v` plus the other items'
//!   video states;
//! * text-to-video: anchor `e_t`, positive `e_v`, negatives `ê_v` plus
//!   the other items' video states;
//! * video-to-text: anchor `e_v`, positive `e_t`, negatives the other
//!   items' text states.
//!
//! All three are built on the same tape as the SFT cross-entropy so the
//! combined objective optimizes jointly in one backward pass.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use serde::{Deserialize, Serialize};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Per-item EOS states at the contrastive block, as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct ContrastiveItem {
    pub e_v: NodeId,
    pub e_vdeg: NodeId,
    pub e_vtilde: NodeId,
    pub e_t: NodeId,
}

#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    pub items: Vec<ContrastiveItem>,
    pub temperature: f64,
}

impl ContrastiveBatch {
    fn validate(&self) -> Result<()> {
        if self.items.len() < 2 {
            return Err(Error::Contract(
                "contrastive batch needs at least 2 items for in-batch negatives".into(),
            ));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Contract("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Similarity kernel `f(a, b) = exp(cos(a, b) / τ)`, in `(0, e^{1/τ}]`.
pub fn kernel_f(g: &mut Graph, a: NodeId, b: NodeId, tau: f64) -> Result<NodeId> {
    if tau <= 0.0 {
        return Err(Error::Contract("temperature must be positive".into()));
    }
    let zero_a = g.value(a).data.iter().all(|v| *v == 0.0);
    let zero_b = g.value(b).data.iter().all(|v| *v == 0.0);
    if zero_a || zero_b {
        return Err(Error::Contract("kernel_f on a zero vector".into()));
    }
    let c = g.cosine(a, b);
    let s = g.scale(c, 1.0 / tau);
    Ok(g.exp(s))
}

/// One InfoNCE term `-ln(pos / (pos + Σ negs))` as a scalar node.
fn info_nce_term(g: &mut Graph, pos: NodeId, negs: &[NodeId]) -> NodeId {
    let mut den = pos;
    for &n in negs {
        den = g.add(den, n);
    }
    let frac = g.div(pos, den);
    let l = g.ln(frac);
    g.scale(l, -1.0)
}

/// Video-to-video loss: mean over items of
/// `-ln[ f(e_v, ẽ_v) / (f(e_v, ê_v) + f(e_v, ẽ_v) + Σ_{k≠i} f(e_v^i, e_v^k)) ]`.
pub fn loss_v2v(g: &mut Graph, batch: &ContrastiveBatch) -> Result<NodeId> {
    batch.validate()?;
    let tau = batch.temperature;
    let mut terms = Vec::with_capacity(batch.items.len());
    for (i, item) in batch.items.iter().enumerate() {
        let pos = kernel_f(g, item.e_v, item.e_vtilde, tau)?;
        let mut negs = vec![kernel_f(g, item.e_v, item.e_vdeg, tau)?];
        for (k, other) in batch.items.iter().enumerate() {
            if k != i {
                negs.push(kernel_f(g, item.e_v, other.e_v, tau)?);
            }
        }
        terms.push(info_nce_term(g, pos, &negs));
    }
    let s = g.add_n(&terms);
    Ok(g.scale(s, 1.0 / batch.items.len() as f64))
}

/// Text-to-video loss: anchor `e_t`, positive `e_v`, negatives
/// `{ê_v^i} ∪ {e_v^k}_{k≠i}`.
pub fn loss_t2v(g: &mut Graph, batch: &ContrastiveBatch) -> Result<NodeId> {
    batch.validate()?;
    let tau = batch.temperature;
    let mut terms = Vec::with_capacity(batch.items.len());
    for (i, item) in batch.items.iter().enumerate() {
        let pos = kernel_f(g, item.e_t, item.e_v, tau)?;
        let mut negs = vec![kernel_f(g, item.e_t, item.e_vdeg, tau)?];
        for (k, other) in batch.items.iter().enumerate() {
            if k != i {
                negs.push(kernel_f(g, item.e_t, other.e_v, tau)?);
            }
        }
        terms.push(info_nce_term(g, pos, &negs));
    }
    let s = g.add_n(&terms);
    Ok(g.scale(s, 1.0 / batch.items.len() as f64))
}

/// Video-to-text loss: anchor `e_v`, positive `e_t`, negatives the
/// unpaired text states `{e_t^j}_{j≠i}`.
pub fn loss_v2t(g: &mut Graph, batch: &ContrastiveBatch) -> Result<NodeId> {
    batch.validate()?;
    let tau = batch.temperature;
    let mut terms = Vec::with_capacity(batch.items.len());
    for (i, item) in batch.items.iter().enumerate() {
        let pos = kernel_f(g, item.e_v, item.e_t, tau)?;
        let mut negs = Vec::with_capacity(batch.items.len() - 1);
        for (j, other) in batch.items.iter().enumerate() {
            if j != i {
                negs.push(kernel_f(g, item.e_v, other.e_t, tau)?);
            }
        }
        terms.push(info_nce_term(g, pos, &negs));
    }
    let s = g.add_n(&terms);
    Ok(g.scale(s, 1.0 / batch.items.len() as f64))
}

/// Scalar node for the combined objective
/// `l_sft + w · (l_v2v + l_t2v + l_v2t) / 3`.
pub fn combined_node(
    g: &mut Graph,
    l_sft: NodeId,
    l_v2v: NodeId,
    l_t2v: NodeId,
    l_v2t: NodeId,
    w: f64,
) -> NodeId {
    let cl = g.add_n(&[l_v2v, l_t2v, l_v2t]);
    let cl = g.scale(cl, w / 3.0);
    g.add(l_sft, cl)
}

/// Loss components of one step, as logged to the metrics stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_sft: f64,
    pub l_v2v: f64,
    pub l_t2v: f64,
    pub l_v2t: f64,
    pub combined: f64,
    pub weight: f64,
}

impl LossBundle {
    pub fn new(l_sft: f64, l_v2v: f64, l_t2v: f64, l_v2t: f64, w: f64) -> Result<Self> {
        if w < 0.0 {
            return Err(Error::Contract("contrastive weight must be nonnegative".into()));
        }
        let combined = l_sft + w * (l_v2v + l_t2v + l_v2t) / 3.0;
        let bundle = LossBundle {
            l_sft,
            l_v2v,
            l_t2v,
            l_v2t,
            combined,
            weight: w,
        };
        if ![l_sft, l_v2v, l_t2v, l_v2t, combined]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Numeric("non-finite loss component".into()));
        }
        Ok(bundle)
    }
}
