//! A small pre-norm decoder with per-block hidden-state taps.
//!
//! The model is deliberately tiny and runs entirely in `f64` on the
//! [`crate::graph`] tape, so every loss in the crate is differentiated
//! exactly and checkable against finite differences. Video tokens are
//! input-only; the output head covers the text block of the vocabulary.
//!
//! Dropout sites (attention output, feed-forward output) draw their masks
//! as a pure function of a dropout seed, which is what makes the
//! two-view trick reproducible: the same input under two seeds yields two
//! deterministic perturbed encodings.

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, NodeId, Tensor};
use crate::rng::stream;
use crate::vocab::TokenId;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PRCV";
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_TRAILER: &[u8; 4] = b"PEND";

// ── configuration ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Block count L.
    pub depth: usize,
    /// Hidden dimension; divisible by `heads`.
    pub width: usize,
    pub heads: usize,
    /// Total input vocabulary (text block + video block).
    pub vocab: usize,
    /// Output head covers token ids `[0, text_vocab)`.
    pub text_vocab: usize,
    /// Learned positions; inputs longer than this are rejected.
    pub max_seq: usize,
    /// Dropout probability in [0, 1); 0 disables the sites entirely.
    pub dropout_rate: f64,
    /// 1-based block index m whose states feed contrastive supervision.
    pub contrast_block: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 8,
            width: 32,
            heads: 4,
            vocab: 300,
            text_vocab: 44,
            max_seq: 256,
            dropout_rate: 0.1,
            contrast_block: 4,
        }
    }
}

impl ModelConfig {
    pub fn for_vocab(v: &crate::vocab::Vocab) -> Self {
        ModelConfig {
            vocab: v.total_size(),
            text_vocab: v.text_size(),
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.heads == 0 {
            return Err(Error::Config("depth, width, heads must be positive".into()));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config("width must be divisible by heads".into()));
        }
        if self.contrast_block == 0 || self.contrast_block > self.depth {
            return Err(Error::Config("contrast_block must lie in [1, depth]".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must lie in [0, 1)".into()));
        }
        if self.text_vocab == 0 || self.text_vocab > self.vocab {
            return Err(Error::Config("text_vocab must lie in [1, vocab]".into()));
        }
        if self.max_seq == 0 {
            return Err(Error::Config("max_seq must be positive".into()));
        }
        Ok(())
    }

    /// Parameter count implied by the shapes; a pure function of the config.
    pub fn param_count(&self) -> usize {
        let w = self.width;
        let per_block = w          // attn norm gain
            + 4 * w * w            // wq wk wv wo
            + w                    // ff norm gain
            + w * 4 * w            // ff w1
            + 4 * w * w;           // ff w2
        self.vocab * w + self.max_seq * w + self.depth * per_block + w + w * self.text_vocab
    }
}

// ── parameters ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    /// FNV-1a over every parameter bit; used by update-gating checks.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, t) in &self.entries {
            eat(name.as_bytes());
            for v in &t.data {
                eat(&v.to_le_bytes());
            }
        }
        h
    }
}

// ── the model ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct TinyModel {
    pub cfg: ModelConfig,
    pub params: ParamSet,
}

/// Parameter leaves bound into one graph; index-parallel to
/// `params.entries` so gradients map back by position.
#[derive(Debug)]
pub struct ModelBinding {
    pub ids: Vec<NodeId>,
}

impl ModelBinding {
    fn id(&self, model: &TinyModel, name: &str) -> NodeId {
        let idx = model
            .params
            .entries
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.ids[idx]
    }
}

/// Per-block hidden states of one forward pass, addressable by the
/// 1-based block index m.
#[derive(Debug)]
pub struct BlockStates {
    pub per_block: Vec<NodeId>,
}

impl BlockStates {
    /// Full state matrix after block m (1-based).
    pub fn block(&self, m: usize) -> NodeId {
        self.per_block[m - 1]
    }

    /// Hidden row at `pos` after block m, as a fresh `1×width` node.
    pub fn state_at(&self, g: &mut Graph, m: usize, pos: usize) -> NodeId {
        let b = self.block(m);
        g.row(b, pos)
    }
}

#[derive(Debug)]
pub struct ForwardOut {
    pub states: BlockStates,
    /// `n × text_vocab` output logits.
    pub logits: NodeId,
}

impl TinyModel {
    pub fn new(cfg: ModelConfig, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.width;
        let bound = 1.0 / (w as f64).sqrt();
        let mut rng = stream(init_seed, "init", 0, 0, 0);
        let mut uniform = |rows: usize, cols: usize| -> Tensor {
            Tensor::new(
                rows,
                cols,
                (0..rows * cols)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect(),
            )
        };
        let mut entries: Vec<(String, Tensor)> = Vec::new();
        entries.push(("embed.tok".into(), uniform(cfg.vocab, w)));
        entries.push(("embed.pos".into(), uniform(cfg.max_seq, w)));
        for b in 0..cfg.depth {
            entries.push((format!("block{b}.attn.norm_gain"), Tensor::new(1, w, vec![1.0; w])));
            entries.push((format!("block{b}.attn.wq"), uniform(w, w)));
            entries.push((format!("block{b}.attn.wk"), uniform(w, w)));
            entries.push((format!("block{b}.attn.wv"), uniform(w, w)));
            entries.push((format!("block{b}.attn.wo"), uniform(w, w)));
            entries.push((format!("block{b}.ff.norm_gain"), Tensor::new(1, w, vec![1.0; w])));
            entries.push((format!("block{b}.ff.w1"), uniform(w, 4 * w)));
            entries.push((format!("block{b}.ff.w2"), uniform(4 * w, w)));
        }
        entries.push(("final.norm_gain".into(), Tensor::new(1, w, vec![1.0; w])));
        entries.push(("head".into(), uniform(w, cfg.text_vocab)));
        let params = ParamSet { entries };
        debug_assert_eq!(params.scalar_count(), cfg.param_count());
        Ok(TinyModel { cfg, params })
    }

    /// Insert every parameter as a leaf of `g`. All forwards recorded on
    /// the same graph share these leaves, so gradients accumulate across
    /// batch items in one backward pass.
    pub fn bind(&self, g: &mut Graph) -> ModelBinding {
        let ids = self
            .params
            .entries
            .iter()
            .map(|(_, t)| g.leaf(t.clone()))
            .collect();
        ModelBinding { ids }
    }

    fn dropout_mask(&self, n: usize, seed: u64, block: u64, site: u64) -> Tensor {
        let p = self.cfg.dropout_rate;
        let keep = 1.0 - p;
        let mut rng = stream(seed, "dropout", block, site, 0);
        let data: Vec<f64> = (0..n * self.cfg.width)
            .map(|_| {
                if rng.gen_range(0.0..1.0) < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        Tensor::new(n, self.cfg.width, data)
    }

    /// One forward pass over a token sequence. `dropout_seed: None` (or a
    /// zero dropout rate) leaves activations untouched.
    pub fn forward(
        &self,
        g: &mut Graph,
        binding: &ModelBinding,
        tokens: &[TokenId],
        dropout_seed: Option<u64>,
    ) -> Result<ForwardOut> {
        let n = tokens.len();
        if n == 0 {
            return Err(Error::Contract("forward on empty token sequence".into()));
        }
        if n > self.cfg.max_seq {
            return Err(Error::Contract(format!(
                "sequence length {n} exceeds max_seq {}",
                self.cfg.max_seq
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.cfg.vocab) {
            return Err(Error::Contract(format!(
                "token id {bad} out of vocabulary {}",
                self.cfg.vocab
            )));
        }
        let dropout = match dropout_seed {
            Some(s) if self.cfg.dropout_rate > 0.0 => Some(s),
            _ => None,
        };

        let tok_table = binding.id(self, "embed.tok");
        let pos_table = binding.id(self, "embed.pos");
        let te = g.embed(tok_table, tokens);
        let pos_ids: Vec<TokenId> = (0..n as TokenId).collect();
        let pe = g.embed(pos_table, &pos_ids);
        let mut x = g.add(te, pe);

        let mut per_block = Vec::with_capacity(self.cfg.depth);
        for b in 0..self.cfg.depth {
            let gain_a = binding.id(self, &format!("block{b}.attn.norm_gain"));
            let normed = g.rmsnorm(x, gain_a);
            let wq = binding.id(self, &format!("block{b}.attn.wq"));
            let wk = binding.id(self, &format!("block{b}.attn.wk"));
            let wv = binding.id(self, &format!("block{b}.attn.wv"));
            let wo = binding.id(self, &format!("block{b}.attn.wo"));
            let q = g.matmul(normed, wq);
            let k = g.matmul(normed, wk);
            let v = g.matmul(normed, wv);
            let attn = g.causal_attention(q, k, v, self.cfg.heads);
            let mut attn = g.matmul(attn, wo);
            if let Some(s) = dropout {
                let mask = g.leaf(self.dropout_mask(n, s, b as u64, 0));
                attn = g.mul(attn, mask);
            }
            x = g.add(x, attn);

            let gain_f = binding.id(self, &format!("block{b}.ff.norm_gain"));
            let normed = g.rmsnorm(x, gain_f);
            let w1 = binding.id(self, &format!("block{b}.ff.w1"));
            let w2 = binding.id(self, &format!("block{b}.ff.w2"));
            let h = g.matmul(normed, w1);
            let h = g.gelu(h);
            let mut h = g.matmul(h, w2);
            if let Some(s) = dropout {
                let mask = g.leaf(self.dropout_mask(n, s, b as u64, 1));
                h = g.mul(h, mask);
            }
            x = g.add(x, h);
            per_block.push(x);
        }

        let final_gain = binding.id(self, "final.norm_gain");
        let fs = g.rmsnorm(x, final_gain);
        let head = binding.id(self, "head");
        let logits = g.matmul(fs, head);
        Ok(ForwardOut {
            states: BlockStates { per_block },
            logits,
        })
    }

    /// Scalar node: mean cross-entropy of next-token prediction at the
    /// given positions. `positions[i]` predicts `targets[i]`, i.e. the
    /// logits row `positions[i]` scores token `targets[i]`.
    pub fn cross_entropy_node(
        &self,
        g: &mut Graph,
        logits: NodeId,
        positions: &[usize],
        targets: &[TokenId],
    ) -> Result<NodeId> {
        if positions.is_empty() {
            return Err(Error::Contract("cross entropy over no positions".into()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t as usize >= self.cfg.text_vocab) {
            return Err(Error::Contract(format!(
                "supervised target {bad} outside the text head"
            )));
        }
        let ls = g.log_softmax_rows(logits);
        let picked = g.pick(ls, positions, targets);
        let m = g.mean(picked);
        Ok(g.scale(m, -1.0))
    }

    /// Scalar node: total log-probability of `response` after `prefix`,
    /// under temperature-scaled logits, dropout disabled.
    pub fn response_logprob_node(
        &self,
        g: &mut Graph,
        binding: &ModelBinding,
        prefix: &[TokenId],
        response: &[TokenId],
        temperature: f64,
    ) -> Result<NodeId> {
        if temperature <= 0.0 {
            return Err(Error::Contract("temperature must be positive".into()));
        }
        if prefix.is_empty() {
            return Err(Error::Contract("logprob needs a non-empty prefix".into()));
        }
        if response.is_empty() {
            return Ok(g.scalar(0.0));
        }
        let mut seq = prefix.to_vec();
        seq.extend_from_slice(response);
        let out = self.forward(g, binding, &seq, None)?;
        let scaled = g.scale(out.logits, 1.0 / temperature);
        let ls = g.log_softmax_rows(scaled);
        let positions: Vec<usize> = (0..response.len()).map(|t| prefix.len() - 1 + t).collect();
        let picked = g.pick(ls, &positions, response);
        Ok(g.sum(picked))
    }

    /// Total log-probability as a plain number (throwaway graph).
    pub fn logprob(&self, prefix: &[TokenId], response: &[TokenId], temperature: f64) -> Result<f64> {
        let mut g = Graph::new();
        let binding = self.bind(&mut g);
        let node = self.response_logprob_node(&mut g, &binding, prefix, response, temperature)?;
        Ok(g.value(node).item())
    }

    /// Batched recomputation in a single graph with shared parameter
    /// leaves; item results are independent and match the per-item loop.
    pub fn logprob_batch(
        &self,
        items: &[(Vec<TokenId>, Vec<TokenId>)],
        temperature: f64,
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let binding = self.bind(&mut g);
        let mut out = Vec::with_capacity(items.len());
        for (prefix, response) in items {
            let node =
                self.response_logprob_node(&mut g, &binding, prefix, response, temperature)?;
            out.push(g.value(node).item());
        }
        Ok(out)
    }

    /// Autoregressive sampling from `prefix` until `eos` or `max_len`
    /// generated tokens. Greedy mode takes the argmax (lowest id wins
    /// ties); otherwise tokens are drawn from temperature-scaled softmax
    /// using the caller's RNG. Returns the generated tokens (including
    /// the terminating `eos` when produced) and their total log-probability.
    pub fn sample_response(
        &self,
        prefix: &[TokenId],
        temperature: f64,
        greedy: bool,
        max_len: usize,
        eos: TokenId,
        rng: &mut ChaCha12Rng,
    ) -> Result<(Vec<TokenId>, f64)> {
        if temperature <= 0.0 {
            return Err(Error::Contract("temperature must be positive".into()));
        }
        if prefix.is_empty() {
            return Err(Error::Contract("sampling needs a non-empty prefix".into()));
        }
        let mut seq = prefix.to_vec();
        let mut response = Vec::new();
        let mut logprob = 0.0;
        for _ in 0..max_len {
            let mut g = Graph::new();
            let binding = self.bind(&mut g);
            let out = self.forward(&mut g, &binding, &seq, None)?;
            let logits = g.value(out.logits).row(seq.len() - 1).to_vec();
            let scaled: Vec<f64> = logits.iter().map(|v| v / temperature).collect();
            let maxv = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = scaled.iter().map(|v| (v - maxv).exp()).sum::<f64>().ln() + maxv;
            let logp: Vec<f64> = scaled.iter().map(|v| v - lse).collect();
            let tok = if greedy {
                logp.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap() as TokenId
            } else {
                let dart: f64 = rng.gen_range(0.0..1.0);
                let mut acc = 0.0;
                let mut chosen = logp.len() - 1;
                for (i, lp) in logp.iter().enumerate() {
                    acc += lp.exp();
                    if dart < acc {
                        chosen = i;
                        break;
                    }
                }
                chosen as TokenId
            };
            logprob += logp[tok as usize];
            response.push(tok);
            seq.push(tok);
            if tok == eos {
                break;
            }
        }
        Ok((response, logprob))
    }

    /// Extract per-parameter gradient tensors from a backward pass,
    /// verifying every entry is finite.
    pub fn grads_from(&self, grads: &Gradients, binding: &ModelBinding) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(self.params.entries.len());
        for ((name, t), id) in self.params.entries.iter().zip(&binding.ids) {
            let gt = grads.get_or_zeros(*id, t.rows, t.cols);
            if !gt.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter {name}"
                )));
            }
            out.push(gt);
        }
        Ok(out)
    }
}

// ── optimizer ─────────────────────────────────────────────────────────────

/// Plain stochastic gradient descent with optional momentum. Momentum
/// buffers live here and are checkpointed so resume is bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub velocity: Option<Vec<Tensor>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.entries.len() {
            return Err(Error::Contract("gradient/parameter count mismatch".into()));
        }
        if self.momentum > 0.0 && self.velocity.is_none() {
            self.velocity = Some(
                params
                    .entries
                    .iter()
                    .map(|(_, t)| Tensor::zeros(t.rows, t.cols))
                    .collect(),
            );
        }
        for (i, (_, t)) in params.entries.iter_mut().enumerate() {
            match &mut self.velocity {
                Some(vel) => {
                    let v = &mut vel[i];
                    for (vj, gj) in v.data.iter_mut().zip(&grads[i].data) {
                        *vj = self.momentum * *vj + gj;
                    }
                    for (wj, vj) in t.data.iter_mut().zip(&v.data) {
                        *wj -= self.lr * vj;
                    }
                }
                None => {
                    for (wj, gj) in t.data.iter_mut().zip(&grads[i].data) {
                        *wj -= self.lr * gj;
                    }
                }
            }
        }
        Ok(())
    }
}

// ── checkpointing ─────────────────────────────────────────────────────────

/// Everything needed to resume: model config echo, arbitrary run metadata,
/// parameters, and optimizer momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub meta: serde_json::Value,
    pub params: ParamSet,
    pub velocity: Option<Vec<Tensor>>,
}

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(&(t.rows as u32).to_le_bytes())?;
    w.write_all(&(t.cols as u32).to_le_bytes())?;
    for v in &t.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Corrupt(format!("truncated checkpoint: {e}")))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    if rows.saturating_mul(cols) > 100_000_000 {
        return Err(Error::Corrupt("implausible tensor shape".into()));
    }
    let mut data = Vec::with_capacity(rows * cols);
    let mut b = [0u8; 8];
    for _ in 0..rows * cols {
        read_exact(r, &mut b)?;
        data.push(f64::from_le_bytes(b));
    }
    Ok(Tensor::new(rows, cols, data))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let meta = serde_json::json!({ "model": ckpt.config, "run": ckpt.meta });
    let meta_bytes = serde_json::to_vec(&meta).map_err(|e| Error::Serde(e.to_string()))?;
    w.write_all(&(meta_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&meta_bytes)?;
    w.write_all(&(ckpt.params.entries.len() as u32).to_le_bytes())?;
    for (name, t) in &ckpt.params.entries {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u32).to_le_bytes())?;
        w.write_all(nb)?;
        write_tensor(&mut w, t)?;
    }
    match &ckpt.velocity {
        Some(vel) => {
            w.write_all(&(vel.len() as u32).to_le_bytes())?;
            for t in vel {
                write_tensor(&mut w, t)?;
            }
        }
        None => w.write_all(&0u32.to_le_bytes())?,
    }
    w.write_all(CHECKPOINT_TRAILER)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = std::fs::File::open(path)?;
    let mut r = BufReader::new(f);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Corrupt("bad checkpoint magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Corrupt(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let meta_len = read_u32(&mut r)? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    read_exact(&mut r, &mut meta_bytes)?;
    let meta: serde_json::Value = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::Corrupt(format!("bad checkpoint metadata: {e}")))?;
    let config: ModelConfig = serde_json::from_value(meta["model"].clone())
        .map_err(|e| Error::Corrupt(format!("bad model config echo: {e}")))?;
    let run = meta["run"].clone();

    let n_params = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(Error::Corrupt("implausible parameter name".into()));
        }
        let mut nb = vec![0u8; name_len];
        read_exact(&mut r, &mut nb)?;
        let name = String::from_utf8(nb).map_err(|e| Error::Corrupt(e.to_string()))?;
        let t = read_tensor(&mut r)?;
        entries.push((name, t));
    }
    let n_vel = read_u32(&mut r)? as usize;
    let velocity = if n_vel == 0 {
        None
    } else {
        let mut vel = Vec::with_capacity(n_vel);
        for _ in 0..n_vel {
            vel.push(read_tensor(&mut r)?);
        }
        Some(vel)
    };
    let mut trailer = [0u8; 4];
    read_exact(&mut r, &mut trailer)?;
    if &trailer != CHECKPOINT_TRAILER {
        return Err(Error::Corrupt("bad checkpoint trailer".into()));
    }
    Ok(Checkpoint {
        config,
        meta: run,
        params: ParamSet { entries },
        velocity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdcheck;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            depth: 2,
            width: 8,
            heads: 2,
            vocab: 24,
            text_vocab: 12,
            max_seq: 32,
            dropout_rate: 0.1,
            contrast_block: 1,
        }
    }

    fn logits_of(model: &TinyModel, tokens: &[TokenId], seed: Option<u64>) -> Vec<f64> {
        let mut g = Graph::new();
        let b = model.bind(&mut g);
        let out = model.forward(&mut g, &b, tokens, seed).unwrap();
        g.value(out.logits).data.clone()
    }

    #[test]
    fn forward_is_deterministic_per_seed() {
        let model = TinyModel::new(tiny_cfg(), 5).unwrap();
        let toks = [1u32, 5, 9, 2];
        assert_eq!(logits_of(&model, &toks, Some(3)), logits_of(&model, &toks, Some(3)));
    }

    #[test]
    fn zero_dropout_ignores_the_seed() {
        let cfg = ModelConfig {
            dropout_rate: 0.0,
            ..tiny_cfg()
        };
        let model = TinyModel::new(cfg, 5).unwrap();
        let toks = [1u32, 5, 9, 2];
        assert_eq!(logits_of(&model, &toks, Some(1)), logits_of(&model, &toks, Some(2)));
        assert_eq!(logits_of(&model, &toks, Some(1)), logits_of(&model, &toks, None));
    }

    #[test]
    fn distinct_dropout_seeds_perturb_the_states() {
        let model = TinyModel::new(tiny_cfg(), 5).unwrap();
        let toks = [1u32, 5, 9, 2];
        let mut g = Graph::new();
        let b = model.bind(&mut g);
        let o1 = model.forward(&mut g, &b, &toks, Some(1)).unwrap();
        let o2 = model.forward(&mut g, &b, &toks, Some(2)).unwrap();
        let s1 = o1.states.state_at(&mut g, 1, 3);
        let s2 = o2.states.state_at(&mut g, 1, 3);
        assert_ne!(g.value(s1).data, g.value(s2).data);
    }

    #[test]
    fn out_of_vocab_token_is_a_contract_violation() {
        let model = TinyModel::new(tiny_cfg(), 5).unwrap();
        let mut g = Graph::new();
        let b = model.bind(&mut g);
        let err = model.forward(&mut g, &b, &[1, 99], None).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn param_count_is_a_pure_function_of_config() {
        let cfg = tiny_cfg();
        let model = TinyModel::new(cfg.clone(), 5).unwrap();
        assert_eq!(model.params.scalar_count(), cfg.param_count());
        let model2 = TinyModel::new(cfg.clone(), 99).unwrap();
        assert_eq!(model2.params.scalar_count(), cfg.param_count());
    }

    #[test]
    fn block_states_have_expected_shape() {
        let cfg = tiny_cfg();
        let model = TinyModel::new(cfg.clone(), 5).unwrap();
        let toks = [1u32, 5, 9, 2];
        let mut g = Graph::new();
        let b = model.bind(&mut g);
        let out = model.forward(&mut g, &b, &toks, None).unwrap();
        assert_eq!(out.states.per_block.len(), cfg.depth);
        for m in 1..=cfg.depth {
            let s = out.states.block(m);
            assert_eq!(g.value(s).rows, toks.len());
            assert_eq!(g.value(s).cols, cfg.width);
        }
        assert_eq!(g.value(out.logits).cols, cfg.text_vocab);
    }

    #[test]
    fn sft_cross_entropy_gradient_matches_finite_differences() {
        let cfg = ModelConfig {
            dropout_rate: 0.0,
            ..tiny_cfg()
        };
        let model = TinyModel::new(cfg, 7).unwrap();
        let toks: Vec<TokenId> = vec![13, 14, 2, 15, 5, 1];
        let positions = [3usize, 4];
        let targets = [5u32, 1];

        let loss_of = |params: &[Tensor]| -> f64 {
            let mut m = model.clone();
            for (i, t) in params.iter().enumerate() {
                m.params.entries[i].1 = t.clone();
            }
            let mut g = Graph::new();
            let b = m.bind(&mut g);
            let out = m.forward(&mut g, &b, &toks, None).unwrap();
            let l = m
                .cross_entropy_node(&mut g, out.logits, &positions, &targets)
                .unwrap();
            g.value(l).item()
        };

        let mut g = Graph::new();
        let b = model.bind(&mut g);
        let out = model.forward(&mut g, &b, &toks, None).unwrap();
        let loss = model
            .cross_entropy_node(&mut g, out.logits, &positions, &targets)
            .unwrap();
        let grads = g.backward(loss).unwrap();
        let analytic = model.grads_from(&grads, &b).unwrap();

        let mut work = model.params.tensors();
        let summary = fdcheck::check_sampled(loss_of, &mut work, &analytic, 1e-5, 150, 42);
        assert!(
            summary.max_rel_err <= 1e-4,
            "max relative error {} at {:?}",
            summary.max_rel_err,
            summary.worst
        );
    }

    #[test]
    fn greedy_sampling_is_deterministic() {
        let model = TinyModel::new(tiny_cfg(), 5).unwrap();
        let prefix = [13u32, 14, 2];
        let mut rng1 = crate::rng::stream1(0, "sample", 1);
        let mut rng2 = crate::rng::stream1(0, "sample", 1);
        let (a, la) = model
            .sample_response(&prefix, 1.0, true, 6, 3, &mut rng1)
            .unwrap();
        let (b, lb) = model
            .sample_response(&prefix, 1.0, true, 6, 3, &mut rng2)
            .unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn seeded_sampling_is_reproducible_and_logprob_recomputes() {
        let model = TinyModel::new(tiny_cfg(), 5).unwrap();
        let prefix = [13u32, 14, 2];
        let mut rng1 = crate::rng::stream1(9, "sample", 1);
        let mut rng2 = crate::rng::stream1(9, "sample", 1);
        let (a, la) = model
            .sample_response(&prefix, 0.8, false, 6, 3, &mut rng1)
            .unwrap();
        let (b, _) = model
            .sample_response(&prefix, 0.8, false, 6, 3, &mut rng2)
            .unwrap();
        assert_eq!(a, b);
        let recomputed = model.logprob(&prefix, &a, 0.8).unwrap();
        assert!((la - recomputed).abs() < 1e-10);
    }

    #[test]
    fn empty_response_logprob_is_zero() {
        let model = TinyModel::new(tiny_cfg(), 5).unwrap();
        assert_eq!(model.logprob(&[1, 2], &[], 1.0).unwrap(), 0.0);
    }

    #[test]
    fn uniform_logits_give_log_inverse_vocab() {
        let mut model = TinyModel::new(tiny_cfg(), 5).unwrap();
        // zero head -> all logits equal -> uniform over the text head
        let head = model.params.get_mut("head").unwrap();
        for v in head.data.iter_mut() {
            *v = 0.0;
        }
        let lp = model.logprob(&[1, 2, 3], &[4], 1.0).unwrap();
        let expected = (1.0 / model.cfg.text_vocab as f64).ln();
        assert!((lp - expected).abs() < 1e-12);
    }

    #[test]
    fn batch_logprob_matches_per_item_loop() {
        let model = TinyModel::new(tiny_cfg(), 5).unwrap();
        let items: Vec<(Vec<TokenId>, Vec<TokenId>)> = vec![
            (vec![13, 14, 2], vec![5, 3]),
            (vec![13, 15], vec![1]),
            (vec![20, 21, 22, 23], vec![7, 2, 3]),
        ];
        let batch = model.logprob_batch(&items, 1.0).unwrap();
        for (i, (p, r)) in items.iter().enumerate() {
            let single = model.logprob(p, r, 1.0).unwrap();
            assert!((batch[i] - single).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_with_momentum_follows_the_loop_oracle() {
        let cfg = tiny_cfg();
        let model = TinyModel::new(cfg, 5).unwrap();
        let mut params = model.params.clone();
        let mut opt = Sgd::new(0.1, 0.9);
        let g0: Vec<Tensor> = params
            .entries
            .iter()
            .map(|(_, t)| Tensor::new(t.rows, t.cols, vec![1.0; t.len()]))
            .collect();
        opt.step(&mut params, &g0).unwrap();
        opt.step(&mut params, &g0).unwrap();
        // velocity after two unit-gradient steps: 1, then 1.9
        let w_new = params.entries[0].1.data[0];
        let w_old = model.params.entries[0].1.data[0];
        assert!((w_old - w_new - 0.1 * (1.0 + 1.9)).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = TinyModel::new(tiny_cfg(), 5).unwrap();
        let ckpt = Checkpoint {
            config: model.cfg.clone(),
            meta: serde_json::json!({"step": 7}),
            params: model.params.clone(),
            velocity: Some(vec![Tensor::new(1, 3, vec![0.1, -0.2, 0.3])]),
        };
        save_checkpoint(&path, &ckpt).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt, back);
        // save -> load -> save yields identical bytes
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_checkpoint_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = TinyModel::new(tiny_cfg(), 5).unwrap();
        let ckpt = Checkpoint {
            config: model.cfg.clone(),
            meta: serde_json::Value::Null,
            params: model.params.clone(),
            velocity: None,
        };
        save_checkpoint(&path, &ckpt).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Corrupt(_))));
    }

    #[test]
    fn content_hash_tracks_parameter_changes() {
        let model = TinyModel::new(tiny_cfg(), 5).unwrap();
        let h1 = model.params.content_hash();
        let mut changed = model.params.clone();
        changed.entries[0].1.data[0] += 1e-12;
        assert_ne!(h1, changed.content_hash());
        assert_eq!(h1, model.params.content_hash());
    }
}
