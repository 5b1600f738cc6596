//! The training step, the training loop, metrics and checkpoints.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::mixture::Mixture;
use super::optim::{AdamW, AdamWHyper};
use super::schedule::{lr_at, warmup_steps};
use crate::dialog::record::ConversationRecord;
use crate::dialog::tokenize::ByteTokenizer;
use crate::error::{Error, Result};
use crate::jsonl::read_jsonl;
use crate::moe::model::{masked_cross_entropy, mean_balance_loss, BalanceStats};
use crate::multimodal::{FeatureCache, MediaResolver, MultimodalModel, PreparedSample};
use crate::nn::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub aux_loss: f64,
    pub n_targets: usize,
    pub updated: bool,
}

/// One optimizer step on a batch. The loss is the masked next-token
/// cross-entropy averaged over every supervised position in the batch, plus
/// `aux_loss_weight` times the layer-mean load-balance loss. Gradients reach
/// the language model, the projection and the skip embedding; the visual
/// encoders are never touched.
pub fn train_step(
    model: &mut MultimodalModel,
    batch: &[&PreparedSample],
    opt: &mut AdamW,
    lr: f64,
    grad_clip: f64,
) -> Result<StepMetrics> {
    let n_targets: usize = batch.iter().map(|s| s.targets.len()).sum();
    let mut metrics = StepMetrics { step: 0, loss: 0.0, lr, grad_norm: 0.0, aux_loss: 0.0, n_targets, updated: false };
    if n_targets == 0 {
        log::warn!("batch has no supervised tokens; loss defined as 0, no update");
        return Ok(metrics);
    }
    let route = model.lm.default_route();
    let forwards = batch.iter().map(|s| model.forward_train(s, &route)).collect::<Result<Vec<_>>>()?;

    let n_layers = model.lm.config.n_layers;
    let e = model.lm.config.n_experts;
    let mut stats = vec![BalanceStats::empty(e); n_layers];
    for f in &forwards {
        for (acc, s) in stats.iter_mut().zip(f.balance_stats()) {
            acc.merge(&s);
        }
    }
    let aux_w = model.lm.config.aux_loss_weight;
    let aux = mean_balance_loss(&stats);
    let prob_grad: Option<Vec<Vec<f64>>> =
        (aux_w > 0.0).then(|| stats.iter().map(|s| s.prob_grad(aux_w, n_layers)).collect());

    let mut grads = model.zero_grads();
    let mut ce_total = 0.0;
    let mut per_sample = Vec::with_capacity(batch.len());
    for (s, f) in batch.iter().zip(&forwards) {
        let (ce, dlogits) = masked_cross_entropy(&f.logits, &s.targets, n_targets as f64);
        ce_total += ce;
        per_sample.push((s.id.clone(), ce));
        model.backward(s, f, &dlogits, prob_grad.as_deref(), &mut grads);
    }
    let loss = ce_total + aux_w * aux;
    let grad_sq: f64 = grads.params().iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum();
    let grad_norm = grad_sq.sqrt();
    if !loss.is_finite() || !grad_norm.is_finite() {
        let dump = serde_json::json!({ "loss": loss, "aux_loss": aux, "grad_norm": grad_norm, "samples": per_sample });
        return Err(Error::NonFinite(dump.to_string()));
    }
    if grad_clip > 0.0 && grad_norm > grad_clip {
        let scale = grad_clip / grad_norm;
        for g in grads.params_mut() {
            *g *= scale;
        }
    }
    let grad_refs: Vec<&Mat> = grads.params();
    opt.step(model.trainable_mut(), &grad_refs, lr)?;
    metrics.loss = loss;
    metrics.aux_loss = aux;
    metrics.grad_norm = grad_norm;
    metrics.updated = true;
    Ok(metrics)
}

/// Reads, validates and prepares every configured source, relative to `base`.
pub fn prepare_sources(
    config: &TrainConfig,
    model: &MultimodalModel,
    resolver: &dyn MediaResolver,
    base: &Path,
) -> Result<Vec<Vec<PreparedSample>>> {
    if config.sources.is_empty() {
        return Err(Error::Config("no data sources configured".into()));
    }
    let mut cache = FeatureCache::default();
    config
        .sources
        .iter()
        .map(|src| {
            let records: Vec<ConversationRecord> = read_jsonl(&base.join(&src.path))?;
            prepare_records(model, &records, resolver, &mut cache)
        })
        .collect()
}

pub fn prepare_records(
    model: &MultimodalModel,
    records: &[ConversationRecord],
    resolver: &dyn MediaResolver,
    cache: &mut FeatureCache,
) -> Result<Vec<PreparedSample>> {
    records
        .iter()
        .map(|r| {
            r.validate()?;
            model.prepare(r, &ByteTokenizer, resolver, cache)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: [usize; 2],
    frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    step: usize,
    optimizer: AdamWHyper,
    params: Vec<ParamEntry>,
    frozen_hash: String,
    projection_hash: String,
    lm_hash: String,
}

fn write_f64(path: &Path, m: &Mat) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.len() * 8);
    for v in m.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f64(path: &Path, target: &mut Mat) -> Result<()> {
    let bytes = fs::read(path)?;
    if bytes.len() != target.len() * 8 {
        return Err(Error::Validation(format!("{}: expected {} values", path.display(), target.len())));
    }
    for (dst, chunk) in target.iter_mut().zip(bytes.chunks_exact(8)) {
        *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
    }
    Ok(())
}

/// Saves a checkpoint directory: `config.json` and `train.cfg`, a
/// `manifest.json`, `params/<name>.f64` little-endian arrays (row-major) and
/// the optimizer moments under `optim/`.
pub fn save_checkpoint(dir: &Path, config: &TrainConfig, model: &MultimodalModel, opt: &AdamW, step: usize) -> Result<()> {
    fs::create_dir_all(dir.join("params"))?;
    fs::create_dir_all(dir.join("optim/m"))?;
    fs::create_dir_all(dir.join("optim/v"))?;
    let mut params = Vec::new();
    for (frozen, list) in [(true, model.frozen_named()), (false, model.trainable_named())] {
        for (name, m) in list {
            write_f64(&dir.join("params").join(format!("{name}.f64")), m)?;
            params.push(ParamEntry { name, shape: [m.nrows(), m.ncols()], frozen });
        }
    }
    for ((name, _), (m, v)) in model.trainable_named().iter().zip(opt.m.iter().zip(&opt.v)) {
        write_f64(&dir.join("optim/m").join(format!("{name}.f64")), m)?;
        write_f64(&dir.join("optim/v").join(format!("{name}.f64")), v)?;
    }
    let manifest = Manifest {
        format: 1,
        step,
        optimizer: opt.hyper(),
        params,
        frozen_hash: model.frozen_hash(),
        projection_hash: model.projection_hash(),
        lm_hash: model.lm_hash(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
    fs::write(dir.join("train.cfg"), config.to_text())?;
    Ok(())
}

pub struct LoadedCheckpoint {
    pub config: TrainConfig,
    pub model: MultimodalModel,
    pub optimizer: AdamW,
    pub step: usize,
}

pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let config: TrainConfig = serde_json::from_str(&fs::read_to_string(dir.join("config.json"))?)?;
    config.validate()?;
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut model = MultimodalModel::init(config.moe.clone(), config.mov.clone(), config.seed)?;
    let names: Vec<String> = model.all_named().into_iter().map(|(n, _)| n).collect();
    if names.len() != manifest.params.len() {
        return Err(Error::Validation(format!(
            "checkpoint has {} arrays, model expects {}",
            manifest.params.len(),
            names.len()
        )));
    }
    for (name, p) in names.iter().zip(model.all_params_mut()) {
        let entry = manifest
            .params
            .iter()
            .find(|e| &e.name == name)
            .ok_or_else(|| Error::Validation(format!("checkpoint lacks {name}")))?;
        if entry.shape != [p.nrows(), p.ncols()] {
            return Err(Error::Validation(format!("{name}: shape {:?} vs {:?}", entry.shape, p.shape())));
        }
        read_f64(&dir.join("params").join(format!("{name}.f64")), p)?;
    }
    let trainable: Vec<(String, [usize; 2])> =
        model.trainable_named().into_iter().map(|(n, m)| (n, [m.nrows(), m.ncols()])).collect();
    let shapes: Vec<(usize, usize)> = trainable.iter().map(|(_, s)| (s[0], s[1])).collect();
    let h = manifest.optimizer;
    let mut optimizer = AdamW::new(&shapes, (h.beta1, h.beta2), h.eps, h.weight_decay);
    optimizer.t = h.t;
    for ((name, _), (m, v)) in trainable.iter().zip(optimizer.m.iter_mut().zip(optimizer.v.iter_mut())) {
        read_f64(&dir.join("optim/m").join(format!("{name}.f64")), m)?;
        read_f64(&dir.join("optim/v").join(format!("{name}.f64")), v)?;
    }
    if model.frozen_hash() != manifest.frozen_hash || model.lm_hash() != manifest.lm_hash {
        return Err(Error::Validation(format!("{}: parameter hashes do not match the manifest", dir.display())));
    }
    Ok(LoadedCheckpoint { config, model, optimizer, step: manifest.step })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub steps_run: usize,
    pub final_step: usize,
    pub last_loss: f64,
    pub eval_loss: Option<f64>,
    pub stopped_early: bool,
    pub checkpoint: PathBuf,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: MultimodalModel,
    pub optimizer: AdamW,
    /// Index of the next step to run.
    pub step: usize,
    pub samples: Vec<Vec<PreparedSample>>,
    mixture: Mixture,
    warmup: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: MultimodalModel, samples: Vec<Vec<PreparedSample>>) -> Result<Self> {
        let shapes: Vec<(usize, usize)> = model.trainable_named().iter().map(|(_, m)| m.dim()).collect();
        let optimizer = AdamW::new(&shapes, config.betas, config.eps, config.weight_decay);
        Self::assemble(config, model, optimizer, 0, samples)
    }

    pub fn resume(dir: &Path, samples: Vec<Vec<PreparedSample>>) -> Result<Self> {
        let c = load_checkpoint(dir)?;
        Self::assemble(c.config, c.model, c.optimizer, c.step, samples)
    }

    fn assemble(
        config: TrainConfig,
        model: MultimodalModel,
        optimizer: AdamW,
        step: usize,
        samples: Vec<Vec<PreparedSample>>,
    ) -> Result<Self> {
        config.validate()?;
        let sizes: Vec<usize> = samples.iter().map(Vec::len).collect();
        let weights: Option<Vec<f64>> = if config.sources.iter().any(|s| s.weight.is_some()) {
            Some(config.sources.iter().map(|s| s.weight.unwrap_or(1.0)).collect())
        } else {
            None
        };
        let mixture = Mixture::new(sizes, weights, config.seed)?;
        let steps_per_epoch = mixture.epoch_len().div_ceil(config.batch_size);
        let warmup = warmup_steps(config.warmup_frac, steps_per_epoch);
        lr_at(0, config.total_steps, warmup, config.lr_peak)?;
        Ok(Trainer { config, model, optimizer, step, samples, mixture, warmup })
    }

    pub fn warmup(&self) -> usize {
        self.warmup
    }

    pub fn lr(&self, step: usize) -> f64 {
        lr_at(step, self.config.total_steps, self.warmup, self.config.lr_peak).expect("validated at construction")
    }

    pub fn all_samples(&self) -> impl Iterator<Item = &PreparedSample> {
        self.samples.iter().flatten()
    }

    /// Runs the next step.
    pub fn step_once(&mut self) -> Result<StepMetrics> {
        let refs = self.mixture.batch(self.step, self.config.batch_size);
        let batch: Vec<&PreparedSample> = refs.iter().map(|&(s, i)| &self.samples[s][i]).collect();
        let lr = self.lr(self.step);
        let mut m = train_step(&mut self.model, &batch, &mut self.optimizer, lr, self.config.grad_clip)?;
        m.step = self.step;
        self.step += 1;
        Ok(m)
    }

    /// Masked loss over every training sample.
    pub fn eval_loss(&self) -> Result<f64> {
        let all: Vec<PreparedSample> = self.all_samples().cloned().collect();
        self.model.dataset_loss(&all, &self.model.lm.default_route())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_checkpoint(dir, &self.config, &self.model, &self.optimizer, self.step)
    }

    /// Trains until `total_steps`, `stop_at` or the stop loss, appending to
    /// `out/metrics.csv` and writing `out/checkpoint` at the end.
    pub fn run(&mut self, out: &Path, stop_at: Option<usize>) -> Result<TrainReport> {
        fs::create_dir_all(out)?;
        let metrics_path = out.join("metrics.csv");
        let fresh = self.step == 0 || !metrics_path.exists();
        let mut file = OpenOptions::new().create(true).append(!fresh).write(true).truncate(fresh).open(&metrics_path)?;
        if fresh {
            writeln!(file, "step,loss,lr,grad_norm,aux_loss")?;
        }
        let end = stop_at.unwrap_or(self.config.total_steps).min(self.config.total_steps);
        let start = self.step;
        let mut last_loss = f64::NAN;
        let mut eval_loss = None;
        let mut stopped_early = false;
        while self.step < end {
            let m = match self.step_once() {
                Ok(m) => m,
                Err(e @ Error::NonFinite(_)) => {
                    fs::write(out.join("diagnostics.json"), e.to_string())?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            writeln!(file, "{},{},{},{},{}", m.step, m.loss, m.lr, m.grad_norm, m.aux_loss)?;
            last_loss = m.loss;
            if m.step % 50 == 0 {
                log::info!("step {} loss {:.4} lr {:.3e} grad_norm {:.3}", m.step, m.loss, m.lr, m.grad_norm);
            }
            if self.config.checkpoint_every > 0 && self.step.is_multiple_of(self.config.checkpoint_every) {
                self.save(&out.join(format!("checkpoint-{}", self.step)))?;
            }
            if self.config.eval_every > 0 && self.step.is_multiple_of(self.config.eval_every) {
                let l = self.eval_loss()?;
                log::info!("step {} eval loss {l:.4}", self.step);
                eval_loss = Some(l);
                if self.config.stop_loss.is_some_and(|t| l < t) {
                    stopped_early = true;
                    break;
                }
            }
        }
        file.flush()?;
        let checkpoint = out.join("checkpoint");
        self.save(&checkpoint)?;
        Ok(TrainReport { steps_run: self.step - start, final_step: self.step, last_loss, eval_loss, stopped_early, checkpoint })
    }
}
