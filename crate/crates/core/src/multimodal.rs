//! The full model: frozen visual experts, trainable projection and skip
//! embedding, and the sparse-MoE language model. Also turns conversation
//! records into model-ready samples.

use std::collections::HashMap;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::dialog::record::ConversationRecord;
use crate::dialog::tokenize::{tokenize_prompt, tokenize_with_loss_mask, Special, TokenizedDialog, Tokenizer};
use crate::error::{Error, Result};
use crate::moe::model::{masked_cross_entropy, BalanceStats, LmCache};
use crate::moe::{MoeConfig, MoeLm, RouteOptions, TraceSink};
use crate::nn::Mat;
use crate::routing::trace::{Modality, RoutingTrace, Tag};
use crate::synth;
use crate::vision::mov::FrontendGrads;
use crate::vision::{Image, MovConfig, VisualFeatures, VisualFrontend};

/// Loads images named by conversation records.
pub trait MediaResolver {
    fn load(&self, path: &str) -> Result<Image>;
}

/// Resolves `synth:` scene references procedurally and everything else as
/// files relative to `root`.
#[derive(Clone, Debug, Default)]
pub struct DefaultResolver {
    pub root: PathBuf,
}

impl MediaResolver for DefaultResolver {
    fn load(&self, path: &str) -> Result<Image> {
        if let Some(spec) = path.strip_prefix("synth:") {
            return synth::render_reference(spec);
        }
        Image::open(&self.root.join(path))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Token(u32),
    /// Row `row` of the visual sequence of image `image`.
    Visual { image: usize, row: usize },
}

/// A tokenized record with its visual features resolved, ready for the model.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub id: String,
    pub domain: String,
    pub rows: Vec<RowKind>,
    /// `(position, target id)`: logits at `position` predict `target id`.
    pub targets: Vec<(usize, u32)>,
    pub images: Vec<VisualFeatures>,
}

impl PreparedSample {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Vision tag for visual and skip rows, language for everything else.
    pub fn tags(&self) -> Vec<Tag> {
        self.rows
            .iter()
            .map(|r| match r {
                RowKind::Token(_) => Tag::new(Modality::Language, self.domain.clone()),
                RowKind::Visual { .. } => Tag::new(Modality::Vision, self.domain.clone()),
            })
            .collect()
    }

    fn token_positions(&self) -> Vec<(usize, u32)> {
        self.rows
            .iter()
            .enumerate()
            .filter_map(|(p, r)| match r {
                RowKind::Token(id) => Some((p, *id)),
                RowKind::Visual { .. } => None,
            })
            .collect()
    }
}

/// Cache of frozen encoder outputs keyed by media path.
#[derive(Default)]
pub struct FeatureCache {
    map: HashMap<String, VisualFeatures>,
}

impl FeatureCache {
    pub fn get_or_compute(
        &mut self,
        path: &str,
        frontend: &VisualFrontend,
        resolver: &dyn MediaResolver,
    ) -> Result<VisualFeatures> {
        if let Some(f) = self.map.get(path) {
            return Ok(f.clone());
        }
        let f = frontend.features(&resolver.load(path)?)?;
        self.map.insert(path.to_string(), f.clone());
        Ok(f)
    }
}

#[derive(Clone, Debug)]
pub struct MultimodalModel {
    pub frontend: VisualFrontend,
    pub lm: MoeLm,
}

#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub frontend: FrontendGrads,
    pub lm: MoeLm,
}

impl ModelGrads {
    /// Same order as [`MultimodalModel::trainable_named`].
    pub fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = vec![&mut self.frontend.projection, &mut self.frontend.skip];
        out.extend(self.lm.params_mut());
        out
    }

    pub fn params(&self) -> Vec<&Mat> {
        let mut out = vec![&self.frontend.projection, &self.frontend.skip];
        out.extend(self.lm.named_params().into_iter().map(|(_, m)| m));
        out
    }
}

/// Per-sample forward state kept for the backward pass.
pub struct SampleForward {
    pub logits: Mat,
    pub cache: LmCache,
    /// start row of each image's visual sequence
    image_starts: Vec<usize>,
}

impl SampleForward {
    pub fn balance_stats(&self) -> Vec<BalanceStats> {
        self.cache.balance_stats()
    }
}

pub fn params_hash<'a>(params: impl IntoIterator<Item = (String, &'a Mat)>) -> String {
    let mut h = Sha256::new();
    for (name, m) in params {
        h.update(name.as_bytes());
        h.update((m.nrows() as u64).to_le_bytes());
        h.update((m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl MultimodalModel {
    pub fn init(moe: MoeConfig, mov: MovConfig, seed: u64) -> Result<Self> {
        if mov.d_llm != moe.d_model {
            return Err(Error::Config(format!("visual d_llm {} != language d_model {}", mov.d_llm, moe.d_model)));
        }
        let frontend = VisualFrontend::init(mov, seed.wrapping_mul(31).wrapping_add(7))?;
        let lm = MoeLm::init(moe, seed)?;
        Ok(MultimodalModel { frontend, lm })
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads { frontend: self.frontend.zero_grads(), lm: self.lm.zeros_like() }
    }

    pub fn trainable_named(&self) -> Vec<(String, &Mat)> {
        let mut out = self.frontend.trainable_named();
        out.extend(self.lm.named_params());
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = vec![&mut self.frontend.projection.weight, &mut self.frontend.skip];
        out.extend(self.lm.params_mut());
        out
    }

    pub fn frozen_named(&self) -> Vec<(String, &Mat)> {
        self.frontend.encoders.named_params()
    }

    /// Frozen encoder arrays followed by the trainable ones.
    pub fn all_named(&self) -> Vec<(String, &Mat)> {
        let mut out = self.frozen_named();
        out.extend(self.trainable_named());
        out
    }

    /// Same order as [`MultimodalModel::all_named`].
    pub fn all_params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = self.frontend.encoders.params_mut();
        out.push(&mut self.frontend.projection.weight);
        out.push(&mut self.frontend.skip);
        out.extend(self.lm.params_mut());
        out
    }

    pub fn frozen_hash(&self) -> String {
        params_hash(self.frozen_named())
    }

    pub fn projection_hash(&self) -> String {
        params_hash(self.frontend.trainable_named())
    }

    pub fn lm_hash(&self) -> String {
        params_hash(self.lm.named_params())
    }

    /// Tokenizes a record and resolves its images through the frozen encoders.
    pub fn prepare(
        &self,
        record: &ConversationRecord,
        tok: &dyn Tokenizer,
        resolver: &dyn MediaResolver,
        cache: &mut FeatureCache,
    ) -> Result<PreparedSample> {
        let t = tokenize_with_loss_mask(record, tok)?;
        self.prepare_tokens(record, &t, resolver, cache)
    }

    /// Prompt-only sample for generating assistant turn `turn_index`.
    pub fn prepare_prompt(
        &self,
        record: &ConversationRecord,
        turn_index: usize,
        tok: &dyn Tokenizer,
        resolver: &dyn MediaResolver,
        cache: &mut FeatureCache,
    ) -> Result<PreparedSample> {
        let t = tokenize_prompt(record, turn_index, tok)?;
        self.prepare_tokens(record, &t, resolver, cache)
    }

    fn prepare_tokens(
        &self,
        record: &ConversationRecord,
        t: &TokenizedDialog,
        resolver: &dyn MediaResolver,
        cache: &mut FeatureCache,
    ) -> Result<PreparedSample> {
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        let mut images = Vec::new();
        let mut slots = t.media_slots.iter().peekable();
        for (j, (&id, &m)) in t.ids.iter().zip(&t.mask).enumerate() {
            while let Some(slot) = slots.next_if(|s| s.position == j) {
                let path = &record.media[slot.media].path;
                let feats = cache.get_or_compute(path, &self.frontend, resolver)?;
                let n = feats.sequence_len();
                let image = images.len();
                rows.extend((0..n).map(|row| RowKind::Visual { image, row }));
                images.push(feats);
            }
            if m == 1 && !rows.is_empty() {
                targets.push((rows.len() - 1, id));
            }
            rows.push(RowKind::Token(id));
        }
        for slot in slots {
            let path = &record.media[slot.media].path;
            let feats = cache.get_or_compute(path, &self.frontend, resolver)?;
            let image = images.len();
            rows.extend((0..feats.sequence_len()).map(|row| RowKind::Visual { image, row }));
            images.push(feats);
        }
        Ok(PreparedSample { id: record.id.clone(), domain: record.tags.domain.clone(), rows, targets, images })
    }

    /// Input embeddings for the language model.
    pub fn embed(&self, sample: &PreparedSample) -> Result<(Mat, Vec<usize>)> {
        let d = self.lm.config.d_model;
        let mut x = Mat::zeros((sample.len(), d));
        let visual = sample.images.iter().map(|f| self.frontend.embed(f)).collect::<Result<Vec<_>>>()?;
        let mut image_starts = vec![usize::MAX; sample.images.len()];
        for (p, r) in sample.rows.iter().enumerate() {
            match *r {
                RowKind::Token(id) => {
                    if id as usize >= self.lm.config.vocab_size {
                        return Err(Error::Input(format!("token id {id} outside vocabulary")));
                    }
                    x.row_mut(p).assign(&self.lm.tok_emb.row(id as usize));
                }
                RowKind::Visual { image, row } => {
                    if row == 0 {
                        image_starts[image] = p;
                    }
                    x.row_mut(p).assign(&visual[image].row(row));
                }
            }
        }
        Ok((x, image_starts))
    }

    pub fn logits(&self, sample: &PreparedSample, route: &RouteOptions, sink: Option<&mut TraceSink>) -> Result<Mat> {
        let (x, _) = self.embed(sample)?;
        self.lm.forward(&x, route, sink)
    }

    pub fn forward_train(&self, sample: &PreparedSample, route: &RouteOptions) -> Result<SampleForward> {
        let (x, image_starts) = self.embed(sample)?;
        let (logits, cache) = self.lm.forward_cached(&x, route)?;
        Ok(SampleForward { logits, cache, image_starts })
    }

    /// Backpropagates a logits gradient through the LM, token embeddings, and
    /// the trainable visual projection and skip embedding.
    pub fn backward(
        &self,
        sample: &PreparedSample,
        fwd: &SampleForward,
        dlogits: &Mat,
        prob_grad: Option<&[Vec<f64>]>,
        grads: &mut ModelGrads,
    ) {
        let dx = self.lm.backward(&fwd.cache, dlogits, prob_grad, &mut grads.lm);
        self.lm.accumulate_token_grads(&sample.token_positions(), &dx, &mut grads.lm);
        for (feats, &start) in sample.images.iter().zip(&fwd.image_starts) {
            let n = feats.sequence_len();
            let d_rows = dx.slice(ndarray::s![start..start + n, ..]).to_owned();
            self.frontend.backward(feats, &d_rows, &mut grads.frontend);
        }
    }

    /// Mean masked next-token loss of one sample.
    pub fn sample_loss(&self, sample: &PreparedSample, route: &RouteOptions) -> Result<f64> {
        let logits = self.logits(sample, route, None)?;
        Ok(masked_cross_entropy(&logits, &sample.targets, sample.targets.len() as f64).0)
    }

    /// Loss summed over all targets of all samples divided by the target count.
    pub fn dataset_loss(&self, samples: &[PreparedSample], route: &RouteOptions) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for s in samples {
            let logits = self.logits(s, route, None)?;
            total += masked_cross_entropy(&logits, &s.targets, 1.0).0;
            n += s.targets.len();
        }
        Ok(if n == 0 { 0.0 } else { total / n as f64 })
    }

    /// Runs every sample through the model, recording routing decisions
    /// under each position's tag.
    pub fn trace_samples(&self, samples: &[PreparedSample], route: &RouteOptions, trace: &mut RoutingTrace) -> Result<()> {
        for s in samples {
            let tags = s.tags();
            let mut sink = TraceSink { trace: &mut *trace, tags: &tags, log: None };
            self.logits(s, route, Some(&mut sink))?;
        }
        Ok(())
    }

    /// Greedy decoding until end-of-turn or `max_new` tokens. Recomputes the
    /// full prefix each step.
    pub fn generate(
        &self,
        prompt: &PreparedSample,
        tok: &dyn Tokenizer,
        route: &RouteOptions,
        max_new: usize,
    ) -> Result<String> {
        let eot = tok.special(Special::EndOfTurn);
        let mut sample = prompt.clone();
        let mut out = Vec::new();
        for _ in 0..max_new {
            if sample.len() >= self.lm.config.max_seq_len {
                break;
            }
            let logits = self.logits(&sample, route, None)?;
            let last = logits.row(logits.nrows() - 1);
            let next = last
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0 as u32;
            if next == eot {
                break;
            }
            out.push(next);
            sample.rows.push(RowKind::Token(next));
        }
        Ok(tok.decode(&out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialog::convert::{convert_grounding, ImageRef};
    use crate::dialog::tokenize::ByteTokenizer;

    fn tiny_model() -> MultimodalModel {
        let moe = MoeConfig {
            n_experts: 4,
            k_active: 2,
            d_model: 16,
            d_ff: 16,
            n_layers: 1,
            n_heads: 2,
            vocab_size: 261,
            max_seq_len: 256,
            aux_loss_weight: 0.0,
        };
        let mov = MovConfig { d_attn: 8, d_conv: 8, ..MovConfig::nano(16) };
        MultimodalModel::init(moe, mov, 3).unwrap()
    }

    fn record() -> ConversationRecord {
        let img = ImageRef { path: "synth:scene/5".into(), width: 128, height: 64 };
        convert_grounding(&img, &[("the thing".into(), [10.0, 5.0, 60.0, 40.0])], "t").unwrap()
    }

    #[test]
    fn prepared_sample_layout() {
        let m = tiny_model();
        let mut cache = FeatureCache::default();
        let s = m.prepare(&record(), &ByteTokenizer, &DefaultResolver::default(), &mut cache).unwrap();
        let n_visual = s.rows.iter().filter(|r| matches!(r, RowKind::Visual { .. })).count();
        // 2:1 image on a 2×2 grid: global + 2 real blocks of 16 plus 2 skip rows
        assert_eq!(n_visual, 16 + 2 * 16 + 2);
        let answer = record().first_assistant_text().unwrap();
        assert_eq!(s.targets.len(), answer.len() + 1);
        for &(p, id) in &s.targets {
            assert_eq!(s.rows[p + 1], RowKind::Token(id));
        }
        let tags = s.tags();
        assert_eq!(tags[2].modality, Modality::Vision);
        assert_eq!(tags[0].modality, Modality::Language);
    }

    #[test]
    fn gradient_reaches_projection_and_skip() {
        let m = tiny_model();
        let mut cache = FeatureCache::default();
        let s = m.prepare(&record(), &ByteTokenizer, &DefaultResolver::default(), &mut cache).unwrap();
        let route = m.lm.default_route();
        let fwd = m.forward_train(&s, &route).unwrap();
        let (_, dlogits) = masked_cross_entropy(&fwd.logits, &s.targets, s.targets.len() as f64);
        let mut g = m.zero_grads();
        m.backward(&s, &fwd, &dlogits, None, &mut g);
        let loss = |m: &MultimodalModel| m.sample_loss(&s, &route).unwrap();
        let h = 1e-5;
        for (r, c) in [(0, 0), (5, 3)] {
            let mut p = m.clone();
            p.frontend.projection.weight[[r, c]] += h;
            let mut q = m.clone();
            q.frontend.projection.weight[[r, c]] -= h;
            let fd = (loss(&p) - loss(&q)) / (2.0 * h);
            assert!((fd - g.frontend.projection[[r, c]]).abs() < 1e-6 + 1e-4 * fd.abs());
        }
        let mut p = m.clone();
        p.frontend.skip[[0, 2]] += h;
        let mut q = m.clone();
        q.frontend.skip[[0, 2]] -= h;
        let fd = (loss(&p) - loss(&q)) / (2.0 * h);
        assert!((fd - g.frontend.skip[[0, 2]]).abs() < 1e-6 + 1e-4 * fd.abs());
        let tok = s.token_positions()[3].1 as usize;
        let mut p = m.clone();
        p.lm.tok_emb[[tok, 1]] += h;
        let mut q = m.clone();
        q.lm.tok_emb[[tok, 1]] -= h;
        let fd = (loss(&p) - loss(&q)) / (2.0 * h);
        assert!((fd - g.lm.tok_emb[[tok, 1]]).abs() < 1e-6 + 1e-4 * fd.abs());
    }

    #[test]
    fn generation_is_deterministic_and_bounded() {
        let m = tiny_model();
        let mut cache = FeatureCache::default();
        let p = m.prepare_prompt(&record(), 1, &ByteTokenizer, &DefaultResolver::default(), &mut cache).unwrap();
        let route = m.lm.default_route();
        let a = m.generate(&p, &ByteTokenizer, &route, 5).unwrap();
        let b = m.generate(&p, &ByteTokenizer, &route, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.len() <= 5 * 4);
    }

    #[test]
    fn named_and_mutable_params_align() {
        let mut m = tiny_model();
        let shapes: Vec<_> = m.all_named().iter().map(|(_, p)| p.dim()).collect();
        let names: Vec<_> = m.all_named().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        let muts: Vec<_> = m.all_params_mut().iter().map(|p| p.dim()).collect();
        assert_eq!(shapes, muts);
        // poke each array through the mutable view and find it under its name
        for (i, p) in m.all_params_mut().into_iter().enumerate() {
            p[[0, 0]] = 1000.0 + i as f64;
        }
        for (i, (_, p)) in m.all_named().into_iter().enumerate() {
            assert_eq!(p[[0, 0]], 1000.0 + i as f64);
        }
    }

    #[test]
    fn hashes_track_parameter_groups() {
        let mut m = tiny_model();
        let (f, p, l) = (m.frozen_hash(), m.projection_hash(), m.lm_hash());
        m.lm.lm_head[[0, 0]] += 1.0;
        assert_eq!((m.frozen_hash(), m.projection_hash()), (f, p));
        assert_ne!(m.lm_hash(), l);
    }
}
