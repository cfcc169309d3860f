//! Key-information-absent input construction.
//!
//! Keywords pooled into a single embedding are scored against every frame
//! by cosine similarity; frames at strict local maxima of the trace are
//! keyframes; the degraded twin replaces each keyframe with its immediate
//! predecessor (itself at the first frame). The original, the degraded
//! twin, and the text are concatenated into one token sequence with a
//! dedicated end-of-segment token after each part.

use crate::error::{Error, Result};
use crate::synthworld::{EventSpec, FrameSequence};
use crate::vocab::{TokenId, Vocab};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::ops::Range;

// ── embedding and keyword providers ──────────────────────────────────────

/// Maps a frame feature vector to the embedding space used for scoring.
/// The default is the identity: synthetic features are their own
/// embeddings. Stateful implementations must synchronize internally.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, frame: &[f64]) -> Vec<f64>;
}

pub struct IdentityEmbedding;

impl EmbeddingProvider for IdentityEmbedding {
    fn embed(&self, frame: &[f64]) -> Vec<f64> {
        frame.to_vec()
    }
}

/// Produces the keyword set for an annotated sequence. The default
/// implementation passes through the planted event types with their
/// signature vectors; richer extractors can be substituted.
pub trait KeywordExtractor: Send + Sync {
    fn extract(&self, caption: &[String], specs: &[EventSpec], dim: usize) -> Result<KeywordSet>;
}

pub struct DefaultKeywordExtractor;

impl KeywordExtractor for DefaultKeywordExtractor {
    fn extract(&self, caption: &[String], specs: &[EventSpec], dim: usize) -> Result<KeywordSet> {
        extract_keywords(caption, specs, dim)
    }
}

// ── domain types ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordSet {
    pub keywords: Vec<String>,
    pub embeddings: Vec<Vec<f64>>,
    /// True when no event vocabulary was available and a neutral random
    /// keyword was substituted.
    pub fallback: bool,
}

impl KeywordSet {
    pub fn validate(&self) -> Result<()> {
        if self.keywords.is_empty() {
            return Err(Error::Contract("keyword set must be non-empty".into()));
        }
        if self.keywords.len() != self.embeddings.len() {
            return Err(Error::Contract("keyword/embedding count mismatch".into()));
        }
        let d = self.embeddings[0].len();
        if self.embeddings.iter().any(|e| e.len() != d) {
            return Err(Error::Contract("keyword embedding dimensions differ".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for k in &self.keywords {
            if !seen.insert(k) {
                return Err(Error::Contract(format!("duplicate keyword {k:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTrace {
    pub scores: Vec<f64>,
    /// Frames whose embedding had zero norm; scored 0 by convention.
    pub zero_norm_frames: Vec<usize>,
}

/// Sorted, non-adjacent keyframe indices (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyFrameSet {
    pub indices: Vec<usize>,
}

impl KeyFrameSet {
    pub fn empty() -> Self {
        KeyFrameSet { indices: Vec::new() }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    Video,
    DegradedVideo,
    Text,
}

/// Concatenated token sequence with per-segment spans and the position of
/// the end-of-segment token that closes each span.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSequence {
    pub tokens: Vec<TokenId>,
    pub segments: Vec<(SegmentKind, Range<usize>)>,
    pub eos_positions: Vec<usize>,
}

impl JointSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// EOS position of the segment with the given kind (first match).
    pub fn eos_of(&self, kind: SegmentKind) -> Option<usize> {
        self.segments
            .iter()
            .zip(&self.eos_positions)
            .find(|((k, _), _)| *k == kind)
            .map(|(_, &p)| p)
    }
}

// ── operations ────────────────────────────────────────────────────────────

/// Default keyword extraction: planted event types paired with their
/// signature embeddings, deduplicated in order of first appearance. An
/// empty event vocabulary yields one flagged neutral keyword with a fixed
/// zero-mean random embedding so the pipeline stays total.
pub fn extract_keywords(
    caption: &[String],
    specs: &[EventSpec],
    dim: usize,
) -> Result<KeywordSet> {
    if caption.is_empty() {
        return Err(Error::Contract("annotation caption must be non-empty".into()));
    }
    let mut keywords = Vec::new();
    let mut embeddings = Vec::new();
    for spec in specs {
        if keywords.contains(&spec.event_type) {
            continue;
        }
        if spec.signature.len() != dim {
            return Err(Error::Contract("signature dimension mismatch".into()));
        }
        keywords.push(spec.event_type.clone());
        embeddings.push(spec.signature.clone());
    }
    if keywords.is_empty() {
        let mut rng = crate::rng::stream(0, "neutral_keyword", dim as u64, 0, 0);
        let emb: Vec<f64> = (0..dim)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                x
            })
            .collect();
        return Ok(KeywordSet {
            keywords: vec!["neutral".into()],
            embeddings: vec![emb],
            fallback: true,
        });
    }
    Ok(KeywordSet {
        keywords,
        embeddings,
        fallback: false,
    })
}

/// Coordinate-wise arithmetic mean of the keyword embeddings.
pub fn pool_keywords(ks: &KeywordSet) -> Result<Vec<f64>> {
    ks.validate()?;
    let d = ks.embeddings[0].len();
    let n = ks.embeddings.len() as f64;
    let mut pooled = vec![0.0; d];
    for emb in &ks.embeddings {
        for (p, e) in pooled.iter_mut().zip(emb) {
            *p += e;
        }
    }
    for p in pooled.iter_mut() {
        *p /= n;
    }
    Ok(pooled)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-frame cosine similarity against the pooled keyword embedding.
pub fn score_frames(
    seq: &FrameSequence,
    pooled: &[f64],
    embed: &dyn EmbeddingProvider,
) -> Result<SimilarityTrace> {
    let kn = norm(pooled);
    if kn == 0.0 {
        return Err(Error::Contract("pooled keyword embedding is zero".into()));
    }
    let mut scores = Vec::with_capacity(seq.len());
    let mut zero_norm_frames = Vec::new();
    for (i, frame) in seq.frames.iter().enumerate() {
        let f = embed.embed(frame);
        if f.len() != pooled.len() {
            return Err(Error::Contract(format!(
                "frame embedding dimension {} != keyword dimension {}",
                f.len(),
                pooled.len()
            )));
        }
        let fn_ = norm(&f);
        if fn_ == 0.0 {
            zero_norm_frames.push(i);
            scores.push(0.0);
            continue;
        }
        let dot: f64 = f.iter().zip(pooled).map(|(a, b)| a * b).sum();
        scores.push(dot / (fn_ * kn));
    }
    Ok(SimilarityTrace {
        scores,
        zero_norm_frames,
    })
}

/// Strict local maxima of the similarity trace. Interior index t needs
/// s[t] > s[t-1] and s[t] > s[t+1]; the first frame qualifies iff it
/// strictly beats its successor, the last iff it strictly beats its
/// predecessor. Ties never qualify, so plateaus yield no keyframe and
/// two keyframes are never adjacent.
pub fn find_keyframes(trace: &SimilarityTrace) -> Result<KeyFrameSet> {
    let s = &trace.scores;
    let n = s.len();
    if n < 3 {
        return Err(Error::Contract("trace must cover at least 3 frames".into()));
    }
    let mut indices = Vec::new();
    if s[0] > s[1] {
        indices.push(0);
    }
    for t in 1..n - 1 {
        if s[t] > s[t - 1] && s[t] > s[t + 1] {
            indices.push(t);
        }
    }
    if s[n - 1] > s[n - 2] {
        indices.push(n - 1);
    }
    Ok(KeyFrameSet { indices })
}

/// Replace each keyframe with its immediate predecessor (the frame itself
/// at index 0). Annotations travel with their frames so the degraded
/// sequence stays internally consistent. The input is untouched.
pub fn build_degraded(seq: &FrameSequence, keys: &KeyFrameSet) -> Result<FrameSequence> {
    let n = seq.len();
    if let Some(&bad) = keys.indices.iter().find(|&&i| i >= n) {
        return Err(Error::Contract(format!(
            "keyframe index {bad} out of range for {n} frames"
        )));
    }
    let mut out = seq.clone();
    for &t in &keys.indices {
        if t == 0 {
            continue; // self-replacement at the first frame
        }
        out.frames[t] = seq.frames[t - 1].clone();
        out.annotations[t] = seq.annotations[t - 1].clone();
    }
    Ok(out)
}

/// Quantize a frame sequence into video token ids.
pub fn video_tokens(seq: &FrameSequence, vocab: &Vocab) -> Result<Vec<TokenId>> {
    seq.frames.iter().map(|f| vocab.frame_token(f)).collect()
}

/// Eq-layout joint sequence: `[video; EOS_v; degraded; EOS_vd; text; EOS_t]`.
pub fn assemble_joint(
    seq: &FrameSequence,
    degraded: &FrameSequence,
    text: &[TokenId],
    vocab: &Vocab,
) -> Result<JointSequence> {
    if seq.len() != degraded.len() {
        return Err(Error::Contract(format!(
            "original ({}) and degraded ({}) lengths differ",
            seq.len(),
            degraded.len()
        )));
    }
    let v = video_tokens(seq, vocab)?;
    let vd = video_tokens(degraded, vocab)?;
    let mut tokens = Vec::with_capacity(v.len() + vd.len() + text.len() + 3);
    let mut segments = Vec::new();
    let mut eos_positions = Vec::new();

    let start = tokens.len();
    tokens.extend_from_slice(&v);
    segments.push((SegmentKind::Video, start..tokens.len()));
    eos_positions.push(tokens.len());
    tokens.push(vocab.eos_v());

    let start = tokens.len();
    tokens.extend_from_slice(&vd);
    segments.push((SegmentKind::DegradedVideo, start..tokens.len()));
    eos_positions.push(tokens.len());
    tokens.push(vocab.eos_vd());

    let start = tokens.len();
    tokens.extend_from_slice(text);
    segments.push((SegmentKind::Text, start..tokens.len()));
    eos_positions.push(tokens.len());
    tokens.push(vocab.eos_t());

    Ok(JointSequence {
        tokens,
        segments,
        eos_positions,
    })
}

/// Single-video variant used for policy sampling and evaluation:
/// `[video; EOS_v; text; EOS_t]`.
pub fn assemble_single(
    seq: &FrameSequence,
    text: &[TokenId],
    vocab: &Vocab,
) -> Result<JointSequence> {
    let v = video_tokens(seq, vocab)?;
    let mut tokens = Vec::with_capacity(v.len() + text.len() + 2);
    let mut segments = Vec::new();
    let mut eos_positions = Vec::new();

    let start = tokens.len();
    tokens.extend_from_slice(&v);
    segments.push((SegmentKind::Video, start..tokens.len()));
    eos_positions.push(tokens.len());
    tokens.push(vocab.eos_v());

    let start = tokens.len();
    tokens.extend_from_slice(text);
    segments.push((SegmentKind::Text, start..tokens.len()));
    eos_positions.push(tokens.len());
    tokens.push(vocab.eos_t());

    Ok(JointSequence {
        tokens,
        segments,
        eos_positions,
    })
}

/// Open generation prefix: `[video; EOS_v; prompt]` with no closing EOS.
pub fn assemble_prompt_prefix(
    seq: &FrameSequence,
    prompt: &[TokenId],
    vocab: &Vocab,
) -> Result<Vec<TokenId>> {
    let mut tokens = video_tokens(seq, vocab)?;
    tokens.push(vocab.eos_v());
    tokens.extend_from_slice(prompt);
    Ok(tokens)
}

/// Full degradation pipeline for one annotated sequence: keywords →
/// pooled embedding → similarity trace → keyframes → degraded twin.
pub fn degrade_pipeline(
    seq: &FrameSequence,
    caption: &[String],
    specs: &[EventSpec],
    embed: &dyn EmbeddingProvider,
) -> Result<(FrameSequence, KeyFrameSet, SimilarityTrace)> {
    let ks = extract_keywords(caption, specs, seq.dim())?;
    let pooled = pool_keywords(&ks)?;
    let trace = score_frames(seq, &pooled, embed)?;
    let keys = find_keyframes(&trace)?;
    let degraded = build_degraded(seq, &keys)?;
    Ok((degraded, keys, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{generate_world, WorldConfig};
    use proptest::prelude::*;
    use rand::Rng;

    fn trace(scores: Vec<f64>) -> SimilarityTrace {
        SimilarityTrace {
            scores,
            zero_norm_frames: Vec::new(),
        }
    }

    fn seq_of(frames: Vec<Vec<f64>>) -> FrameSequence {
        let n = frames.len();
        FrameSequence {
            frames,
            fps_tag: 1.0,
            annotations: vec![Vec::new(); n],
        }
    }

    #[test]
    fn keywords_pass_through_event_types() {
        let config = WorldConfig::default();
        let ds = generate_world(&config, 3).unwrap();
        for item in &ds.items {
            let ks = extract_keywords(&item.caption, &item.events, config.feature_dim).unwrap();
            if item.events.is_empty() {
                assert!(ks.fallback);
                assert_eq!(ks.keywords, vec!["neutral"]);
            } else {
                assert!(!ks.fallback);
                let mut expected: Vec<String> =
                    item.events.iter().map(|e| e.event_type.clone()).collect();
                expected.dedup();
                let mut got = ks.keywords.clone();
                got.sort();
                expected.sort();
                expected.dedup();
                assert_eq!(got, expected);
            }
        }
    }

    #[test]
    fn pooling_matches_direct_summation() {
        let single = KeywordSet {
            keywords: vec!["a".into()],
            embeddings: vec![vec![0.0, 1.0, 0.5]],
            fallback: false,
        };
        assert_eq!(pool_keywords(&single).unwrap(), vec![0.0, 1.0, 0.5]);

        let opposite = KeywordSet {
            keywords: vec!["a".into(), "b".into()],
            embeddings: vec![vec![0.0, 1.0, 0.0], vec![0.0, -1.0, 0.0]],
            fallback: false,
        };
        assert_eq!(pool_keywords(&opposite).unwrap(), vec![0.0, 0.0, 0.0]);

        let mut rng = crate::rng::stream1(1, "pool_test", 0);
        let embs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let ks = KeywordSet {
            keywords: vec!["a".into(), "b".into(), "c".into()],
            embeddings: embs.clone(),
            fallback: false,
        };
        let pooled = pool_keywords(&ks).unwrap();
        for j in 0..4 {
            let direct = (embs[0][j] + embs[1][j] + embs[2][j]) / 3.0;
            assert!((pooled[j] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_rejects_dimension_mismatch() {
        let ks = KeywordSet {
            keywords: vec!["a".into(), "b".into()],
            embeddings: vec![vec![1.0, 0.0], vec![1.0, 0.0, 0.0]],
            fallback: false,
        };
        assert!(matches!(pool_keywords(&ks), Err(Error::Contract(_))));
    }

    #[test]
    fn scores_hit_cosine_landmarks() {
        let pooled = vec![0.0, 1.0, 0.0];
        let seq = seq_of(vec![
            vec![0.0, 2.0, 0.0],  // parallel -> 1
            vec![1.0, 0.0, 0.0],  // orthogonal -> 0
            vec![0.0, -3.0, 0.0], // antiparallel -> -1
        ]);
        let trace = score_frames(&seq, &pooled, &IdentityEmbedding).unwrap();
        assert!((trace.scores[0] - 1.0).abs() < 1e-12);
        assert!(trace.scores[1].abs() < 1e-12);
        assert!((trace.scores[2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_frames_score_zero_and_are_flagged() {
        let pooled = vec![0.0, 1.0];
        let seq = seq_of(vec![vec![0.0, 1.0], vec![0.0, 0.0], vec![1.0, 0.0]]);
        let trace = score_frames(&seq, &pooled, &IdentityEmbedding).unwrap();
        assert_eq!(trace.scores[1], 0.0);
        assert_eq!(trace.zero_norm_frames, vec![1]);
    }

    #[test]
    fn argmax_lands_in_event_span_on_strong_world() {
        let config = WorldConfig {
            amplitude_range: (5.0, 5.0),
            noise: 0.01,
            events_range: (1, 1),
            num_sequences: 30,
            ..WorldConfig::default()
        };
        let ds = generate_world(&config, 21).unwrap();
        for item in &ds.items {
            let ks = extract_keywords(&item.caption, &item.events, config.feature_dim).unwrap();
            let pooled = pool_keywords(&ks).unwrap();
            let trace = score_frames(&item.seq, &pooled, &IdentityEmbedding).unwrap();
            let argmax = trace
                .scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert!(item.seq.is_event_frame(argmax));
        }
    }

    #[test]
    fn keyframes_boundary_and_plateau_rules() {
        // strictly increasing: only the last frame qualifies
        let ks = find_keyframes(&trace(vec![0.1, 0.2, 0.3, 0.4])).unwrap();
        assert_eq!(ks.indices, vec![3]);
        // constant: strict inequality never holds
        let ks = find_keyframes(&trace(vec![0.5, 0.5, 0.5, 0.5])).unwrap();
        assert!(ks.indices.is_empty());
        // first frame beats successor
        let ks = find_keyframes(&trace(vec![0.9, 0.1, 0.5])).unwrap();
        assert_eq!(ks.indices, vec![0, 2]);
    }

    #[test]
    fn keyframes_match_definitional_oracle_on_random_traces() {
        let mut rng = crate::rng::stream1(0, "kf_oracle", 0);
        for _ in 0..1000 {
            let n = rng.gen_range(3..40);
            let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = find_keyframes(&trace(s.clone())).unwrap();
            // independent exhaustive per-index check
            let mut expected = Vec::new();
            for t in 0..n {
                let left_ok = t == 0 || s[t] > s[t - 1];
                let right_ok = t == n - 1 || s[t] > s[t + 1];
                let boundary_ok = if t == 0 {
                    s[0] > s[1]
                } else if t == n - 1 {
                    s[n - 1] > s[n - 2]
                } else {
                    true
                };
                if left_ok && right_ok && boundary_ok {
                    expected.push(t);
                }
            }
            assert_eq!(got.indices, expected);
        }
    }

    proptest! {
        #[test]
        fn keyframes_are_never_adjacent(s in proptest::collection::vec(-1.0f64..1.0, 3..64)) {
            let ks = find_keyframes(&trace(s)).unwrap();
            for w in ks.indices.windows(2) {
                prop_assert!(w[1] > w[0] + 1);
            }
        }

        #[test]
        fn scoring_is_scale_invariant(c in 0.1f64..10.0) {
            let config = WorldConfig::default();
            let ds = generate_world(&config, 17).unwrap();
            let item = &ds.items[0];
            let ks = extract_keywords(&item.caption, &item.events, config.feature_dim).unwrap();
            let pooled = pool_keywords(&ks).unwrap();

            struct Scaled(f64);
            impl EmbeddingProvider for Scaled {
                fn embed(&self, frame: &[f64]) -> Vec<f64> {
                    frame.iter().map(|x| x * self.0).collect()
                }
            }
            let base = score_frames(&item.seq, &pooled, &IdentityEmbedding).unwrap();
            let scaled = score_frames(&item.seq, &pooled, &Scaled(c)).unwrap();
            for (a, b) in base.scores.iter().zip(&scaled.scores) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            prop_assert_eq!(
                find_keyframes(&base).unwrap(),
                find_keyframes(&scaled).unwrap()
            );
        }
    }

    #[test]
    fn degraded_follows_predecessor_rule() {
        let a = vec![1.0, 0.0];
        let b = vec![2.0, 0.0];
        let c = vec![3.0, 0.0];
        let d = vec![4.0, 0.0];
        let seq = seq_of(vec![a.clone(), b.clone(), c, d.clone()]);

        // no keys: identity
        let out = build_degraded(&seq, &KeyFrameSet::empty()).unwrap();
        assert_eq!(out, seq);

        // key at first frame: self-replacement
        let out = build_degraded(&seq, &KeyFrameSet { indices: vec![0] }).unwrap();
        assert_eq!(out, seq);

        // key at index 2 (third frame): [a, b, b, d]
        let out = build_degraded(&seq, &KeyFrameSet { indices: vec![2] }).unwrap();
        assert_eq!(out.frames, vec![a, b.clone(), b, d]);

        // out of range is a contract violation
        let err = build_degraded(&seq, &KeyFrameSet { indices: vec![9] }).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn degraded_changes_only_key_positions() {
        let config = WorldConfig::default();
        let ds = generate_world(&config, 8).unwrap();
        for item in &ds.items {
            let (degraded, keys, _) = degrade_pipeline(
                &item.seq,
                &item.caption,
                &item.events,
                &IdentityEmbedding,
            )
            .unwrap();
            for i in 0..item.seq.len() {
                if keys.contains(i) && i > 0 {
                    assert_eq!(degraded.frames[i], item.seq.frames[i - 1]);
                } else {
                    assert_eq!(degraded.frames[i], item.seq.frames[i]);
                }
            }
        }
    }

    #[test]
    fn detected_keyframes_contain_singleton_events() {
        let config = WorldConfig {
            amplitude_range: (5.0, 5.0),
            noise: 0.01,
            events_range: (1, 1),
            duration_range: (1, 1),
            num_sequences: 50,
            ..WorldConfig::default()
        };
        let ds = generate_world(&config, 33).unwrap();
        for item in &ds.items {
            let (_, keys, _) = degrade_pipeline(
                &item.seq,
                &item.caption,
                &item.events,
                &IdentityEmbedding,
            )
            .unwrap();
            let ev = item.events[0].start;
            assert!(keys.contains(ev), "event frame {ev} missed in {:?}", keys);
        }
    }

    #[test]
    fn joint_assembly_matches_concatenation_arithmetic() {
        let vocab = Vocab::new(&["a".into()], 2, 4, (-6.0, 6.0)).unwrap();
        let video = seq_of(vec![vec![0.5, 0.0]; 4]);
        let degraded = video.clone();
        let text: Vec<TokenId> = vec![3, 4, 5, 6, 7];
        let joint = assemble_joint(&video, &degraded, &text, &vocab).unwrap();
        // 4 + 1 + 4 + 1 + 5 + 1 tokens
        assert_eq!(joint.len(), 16);
        assert_eq!(joint.eos_positions, vec![4, 9, 15]);
        assert_eq!(joint.tokens[4], vocab.eos_v());
        assert_eq!(joint.tokens[9], vocab.eos_vd());
        assert_eq!(joint.tokens[15], vocab.eos_t());
        // no keys -> identical first and second segments
        let (k1, s1) = &joint.segments[0];
        let (k2, s2) = &joint.segments[1];
        assert_eq!(*k1, SegmentKind::Video);
        assert_eq!(*k2, SegmentKind::DegradedVideo);
        assert_eq!(joint.tokens[s1.clone()], joint.tokens[s2.clone()]);
    }

    #[test]
    fn joint_spans_partition_the_token_range() {
        let config = WorldConfig::default();
        let ds = generate_world(&config, 4).unwrap();
        let vocab = config.vocab().unwrap();
        for item in &ds.items {
            let (degraded, _, _) = degrade_pipeline(
                &item.seq,
                &item.caption,
                &item.events,
                &IdentityEmbedding,
            )
            .unwrap();
            let text = vocab.encode_words(&item.caption).unwrap();
            let joint = assemble_joint(&item.seq, &degraded, &text, &vocab).unwrap();
            // segments and their EOS tokens tile [0, len) exactly
            let mut cursor = 0usize;
            for ((_, span), &eos) in joint.segments.iter().zip(&joint.eos_positions) {
                assert_eq!(span.start, cursor);
                assert_eq!(eos, span.end);
                cursor = eos + 1;
            }
            assert_eq!(cursor, joint.len());
        }
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let vocab = Vocab::new(&["a".into()], 2, 4, (-6.0, 6.0)).unwrap();
        let video = seq_of(vec![vec![0.5, 0.0]; 4]);
        let degraded = seq_of(vec![vec![0.5, 0.0]; 5]);
        let err = assemble_joint(&video, &degraded, &[1, 2], &vocab).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
