use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Warmup length in steps: `round(warmup_frac · steps_per_epoch)`, at least 1.
pub fn warmup_steps(warmup_frac: f64, steps_per_epoch: usize) -> usize {
    ((warmup_frac * steps_per_epoch as f64).round() as usize).max(1)
}

/// Linear warmup from 0 to `lr_peak`, then cosine decay to 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup: usize, lr_peak: f64) -> Result<f64> {
    if warmup >= total_steps {
        return Err(Error::Config(format!("warmup {warmup} must be below total steps {total_steps}")));
    }
    if step > total_steps {
        return Err(Error::Config(format!("step {step} beyond total steps {total_steps}")));
    }
    if step < warmup {
        return Ok(lr_peak * step as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    Ok(lr_peak * 0.5 * (1.0 + (PI * progress).cos()))
}
