//! Canonical token vocabulary and frame quantization.
//!
//! Text tokens are fixed words (counts, template words, segment EOS
//! markers) plus the world's event-type names. Video tokens follow the
//! text block: each frame vector is quantized per coordinate into `Q`
//! bins over a fixed range and the bin tuple indexes a finite video
//! vocabulary of size `Q^D`. Video tokens are input-only; the model's
//! output head covers the text block.

use crate::error::{Error, Result};
use std::collections::HashMap;

pub type TokenId = u32;

/// Number of canonical count tokens ("0".."31").
pub const COUNT_TOKENS: usize = 32;

pub const W_EOS_V: &str = "<eos_v>";
pub const W_EOS_VD: &str = "<eos_vd>";
pub const W_EOS_T: &str = "<eos_t>";
pub const W_HOW: &str = "how";
pub const W_MANY: &str = "many";
pub const W_DESCRIBE: &str = "describe";
pub const W_NO: &str = "no";
pub const W_NOTABLE: &str = "notable";
pub const W_EVENTS: &str = "events";
pub const W_EVENT: &str = "event";
pub const W_THEN: &str = "then";
pub const W_REFOCUS: &str = "refocus";

const FIXED_WORDS: [&str; 12] = [
    W_EOS_V, W_EOS_VD, W_EOS_T, W_HOW, W_MANY, W_DESCRIBE, W_NO, W_NOTABLE, W_EVENTS, W_EVENT,
    W_THEN, W_REFOCUS,
];

#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
    /// First video token id; equals the text vocabulary size.
    pub video_base: TokenId,
    pub video_dim: usize,
    pub video_bins: usize,
    quant_lo: f64,
    quant_hi: f64,
}

impl Vocab {
    /// Build the vocabulary for a set of event types and a quantizer.
    /// `quant_range` must cover every coordinate value the world can emit.
    pub fn new(
        event_types: &[String],
        video_dim: usize,
        video_bins: usize,
        quant_range: (f64, f64),
    ) -> Result<Self> {
        if video_dim < 2 {
            return Err(Error::Config("video_dim must be at least 2".into()));
        }
        if video_bins < 2 {
            return Err(Error::Config("video_bins must be at least 2".into()));
        }
        let video_size = (video_bins as u64).checked_pow(video_dim as u32);
        match video_size {
            Some(s) if s <= 65_536 => {}
            _ => {
                return Err(Error::Config(format!(
                    "video vocabulary {video_bins}^{video_dim} exceeds 65536"
                )))
            }
        }
        if quant_range.0 >= quant_range.1 {
            return Err(Error::Config("empty quantization range".into()));
        }

        let mut words: Vec<String> = (0..COUNT_TOKENS).map(|k| k.to_string()).collect();
        words.extend(FIXED_WORDS.iter().map(|w| w.to_string()));
        for t in event_types {
            if words.iter().any(|w| w == t) {
                return Err(Error::Config(format!(
                    "event type {t:?} collides with a reserved word"
                )));
            }
            words.push(t.clone());
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        let video_base = words.len() as TokenId;
        Ok(Vocab {
            words,
            index,
            video_base,
            video_dim,
            video_bins,
            quant_lo: quant_range.0,
            quant_hi: quant_range.1,
        })
    }

    pub fn text_size(&self) -> usize {
        self.words.len()
    }

    pub fn total_size(&self) -> usize {
        self.words.len() + (self.video_bins as u64).pow(self.video_dim as u32) as usize
    }

    pub fn eos_v(&self) -> TokenId {
        self.index[W_EOS_V]
    }

    pub fn eos_vd(&self) -> TokenId {
        self.index[W_EOS_VD]
    }

    pub fn eos_t(&self) -> TokenId {
        self.index[W_EOS_T]
    }

    pub fn count_token(&self, k: usize) -> Result<TokenId> {
        if k >= COUNT_TOKENS {
            return Err(Error::Contract(format!("count {k} exceeds count vocabulary")));
        }
        Ok(k as TokenId)
    }

    pub fn word(&self, w: &str) -> Result<TokenId> {
        self.index
            .get(w)
            .copied()
            .ok_or_else(|| Error::Contract(format!("unknown token {w:?}")))
    }

    pub fn encode_words(&self, ws: &[String]) -> Result<Vec<TokenId>> {
        ws.iter().map(|w| self.word(w)).collect()
    }

    pub fn token_str(&self, id: TokenId) -> String {
        if (id as usize) < self.words.len() {
            self.words[id as usize].clone()
        } else {
            format!("v{}", id - self.video_base)
        }
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&id| self.token_str(id)).collect()
    }

    /// Quantize a frame vector into its video token id.
    pub fn frame_token(&self, frame: &[f64]) -> Result<TokenId> {
        if frame.len() != self.video_dim {
            return Err(Error::Contract(format!(
                "frame dimension {} does not match tokenizer dimension {}",
                frame.len(),
                self.video_dim
            )));
        }
        let q = self.video_bins as f64;
        let span = self.quant_hi - self.quant_lo;
        let mut id: u64 = 0;
        let mut mult: u64 = 1;
        for &x in frame {
            let bin = (((x - self.quant_lo) / span) * q).floor();
            let bin = bin.clamp(0.0, q - 1.0) as u64;
            id += bin * mult;
            mult *= self.video_bins as u64;
        }
        Ok(self.video_base + id as TokenId)
    }

    pub fn is_video_token(&self, id: TokenId) -> bool {
        id >= self.video_base
    }
}
