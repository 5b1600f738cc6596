//! Training configuration as a flat `key = value` file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moe::{ModelPreset, MoeConfig};
use crate::vision::MovConfig;

/// One data source of the mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    pub path: String,
    /// Sampling weight; `None` means size-proportional.
    pub weight: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub preset: String,
    pub lr_peak: f64,
    /// Warmup length as a fraction of one epoch.
    pub warmup_frac: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub seed: u64,
    pub freeze_visual_encoders: bool,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Write a checkpoint every this many steps; 0 = final only.
    pub checkpoint_every: usize,
    /// Evaluate full-training-set loss every this many steps; 0 = never.
    pub eval_every: usize,
    /// Stop once the evaluated loss drops below this.
    pub stop_loss: Option<f64>,
    pub moe: MoeConfig,
    pub mov: MovConfig,
    pub sources: Vec<SourceSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let moe = MoeConfig::nano();
        TrainConfig {
            preset: ModelPreset::MoeNano.name().into(),
            lr_peak: 5e-6,
            warmup_frac: 0.01,
            betas: (0.9, 0.95),
            weight_decay: 0.0,
            eps: 1e-8,
            batch_size: 8,
            total_steps: 2000,
            seed: 0,
            freeze_visual_encoders: true,
            grad_clip: 1.0,
            checkpoint_every: 0,
            eval_every: 0,
            stop_loss: None,
            mov: MovConfig::nano(moe.d_model),
            moe,
            sources: Vec::new(),
        }
    }
}

/// Peak learning rate by backbone family: 5e-6 for sparse MoE, 2e-5 for dense.
pub fn default_lr_for(preset: ModelPreset) -> f64 {
    if preset.config().n_experts > 1 {
        5e-6
    } else {
        2e-5
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

fn json_scalar(v: &str) -> serde_json::Value {
    serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()))
}

/// Sets `field` of a serializable struct through its JSON form.
fn set_field<T: Serialize + for<'de> Deserialize<'de>>(target: &mut T, prefix: &str, field: &str, v: &str) -> Result<()> {
    let mut value = serde_json::to_value(&*target).map_err(|e| Error::Internal(e.to_string()))?;
    let map = value.as_object_mut().expect("struct serializes to a map");
    if !map.contains_key(field) {
        return Err(Error::Config(format!("unknown key {prefix}.{field}")));
    }
    map.insert(field.to_string(), json_scalar(v));
    *target = serde_json::from_value(value).map_err(|e| Error::Config(format!("{prefix}.{field} = {v}: {e}")))?;
    Ok(())
}

impl TrainConfig {
    /// Parses the flat format: `key = value` lines, `#` comments, and
    /// repeatable `source = <name> <path> [weight]` lines. `preset` is applied
    /// before any `moe.*` override regardless of line order.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = TrainConfig::default();
        let mut mov_d_llm_set = false;
        if let Some((_, p)) = entries.iter().find(|(k, _)| k == "preset") {
            let preset = ModelPreset::from_name(p)?;
            cfg.preset = p.clone();
            cfg.moe = preset.config();
            cfg.lr_peak = default_lr_for(preset);
        }
        for (k, v) in &entries {
            match k.as_str() {
                "preset" => {}
                "lr_peak" => cfg.lr_peak = parse_value(k, v)?,
                "warmup_frac" => cfg.warmup_frac = parse_value(k, v)?,
                "betas" => {
                    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                    if parts.len() != 2 {
                        return Err(Error::Config(format!("betas must be two numbers, got {v:?}")));
                    }
                    cfg.betas = (parse_value(k, parts[0])?, parse_value(k, parts[1])?);
                }
                "weight_decay" => cfg.weight_decay = parse_value(k, v)?,
                "eps" => cfg.eps = parse_value(k, v)?,
                "batch_size" => cfg.batch_size = parse_value(k, v)?,
                "total_steps" => cfg.total_steps = parse_value(k, v)?,
                "seed" => cfg.seed = parse_value(k, v)?,
                "freeze.visual_encoders" | "freeze_visual_encoders" => cfg.freeze_visual_encoders = parse_value(k, v)?,
                "grad_clip" => cfg.grad_clip = parse_value(k, v)?,
                "checkpoint_every" => cfg.checkpoint_every = parse_value(k, v)?,
                "eval_every" => cfg.eval_every = parse_value(k, v)?,
                "stop_loss" => cfg.stop_loss = if v == "none" { None } else { Some(parse_value(k, v)?) },
                "source" => {
                    let parts: Vec<&str> = v.split_whitespace().collect();
                    let weight = match parts.as_slice() {
                        [_, _] => None,
                        [_, _, w] => Some(parse_value(k, w)?),
                        _ => return Err(Error::Config(format!("source needs `<name> <path> [weight]`, got {v:?}"))),
                    };
                    cfg.sources.push(SourceSpec { name: parts[0].into(), path: parts[1].into(), weight });
                }
                other => {
                    if let Some(f) = other.strip_prefix("moe.") {
                        set_field(&mut cfg.moe, "moe", f, v)?;
                    } else if let Some(f) = other.strip_prefix("mov.") {
                        mov_d_llm_set |= f == "d_llm";
                        set_field(&mut cfg.mov, "mov", f, v)?;
                    } else {
                        return Err(Error::Config(format!("unknown key {other:?}")));
                    }
                }
            }
        }
        if !mov_d_llm_set {
            cfg.mov.d_llm = cfg.moe.d_model;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Writes every key; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut out = vec![
            format!("preset = {}", self.preset),
            format!("lr_peak = {:e}", self.lr_peak),
            format!("warmup_frac = {}", self.warmup_frac),
            format!("betas = {}, {}", self.betas.0, self.betas.1),
            format!("weight_decay = {}", self.weight_decay),
            format!("eps = {:e}", self.eps),
            format!("batch_size = {}", self.batch_size),
            format!("total_steps = {}", self.total_steps),
            format!("seed = {}", self.seed),
            format!("freeze.visual_encoders = {}", self.freeze_visual_encoders),
            format!("grad_clip = {}", self.grad_clip),
            format!("checkpoint_every = {}", self.checkpoint_every),
            format!("eval_every = {}", self.eval_every),
            format!("stop_loss = {}", self.stop_loss.map_or("none".to_string(), |v| v.to_string())),
        ];
        for (prefix, value) in [("moe", serde_json::to_value(&self.moe)), ("mov", serde_json::to_value(&self.mov))] {
            if let Ok(serde_json::Value::Object(map)) = value {
                for (k, v) in map {
                    out.push(format!("{prefix}.{k} = {v}"));
                }
            }
        }
        for s in &self.sources {
            match s.weight {
                Some(w) => out.push(format!("source = {} {} {w}", s.name, s.path)),
                None => out.push(format!("source = {} {}", s.name, s.path)),
            }
        }
        out.join("\n") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_peak > 0.0 && self.lr_peak.is_finite()) {
            return Err(Error::Config(format!("lr_peak must be > 0, got {}", self.lr_peak)));
        }
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return Err(Error::Config(format!("warmup_frac must lie in (0, 1), got {}", self.warmup_frac)));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!("betas must lie in [0, 1), got ({b1}, {b2})")));
        }
        if self.weight_decay < 0.0 || self.eps <= 0.0 || self.grad_clip < 0.0 {
            return Err(Error::Config("weight_decay, eps and grad_clip must be nonnegative (eps positive)".into()));
        }
        if self.batch_size == 0 || self.total_steps == 0 {
            return Err(Error::Config("batch_size and total_steps must be positive".into()));
        }
        if !self.freeze_visual_encoders {
            return Err(Error::Config("the visual encoders are always frozen; freeze.visual_encoders must be true".into()));
        }
        if self.mov.d_llm != self.moe.d_model {
            return Err(Error::Config(format!("mov.d_llm {} must equal moe.d_model {}", self.mov.d_llm, self.moe.d_model)));
        }
        if let Some(s) = self.sources.iter().find(|s| s.weight.is_some_and(|w| !(w > 0.0 && w.is_finite()))) {
            return Err(Error::Config(format!("source {} has non-positive weight", s.name)));
        }
        self.moe.validate()?;
        self.mov.validate()
    }
}
