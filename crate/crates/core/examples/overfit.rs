//! Overfits moe-nano with the toy visual front end on 32 synthetic samples
//! and reports loss and grounding accuracy on the training set.

use std::time::Instant;

use mllm_core::eval::{eval_rec, generate_answers};
use mllm_core::moe::MoeConfig;
use mllm_core::multimodal::{DefaultResolver, FeatureCache, MultimodalModel};
use mllm_core::synth::scene_dataset;
use mllm_core::train::{prepare_records, TrainConfig, Trainer};
use mllm_core::vision::MovConfig;

fn main() -> mllm_core::Result<()> {
    let moe = MoeConfig::nano();
    let cfg = TrainConfig {
        lr_peak: 2e-3,
        total_steps: 2000,
        eval_every: 25,
        stop_loss: Some(std::env::var("STOP").ok().and_then(|s| s.parse().ok()).unwrap_or(0.02)),
        mov: MovConfig::nano(moe.d_model),
        moe,
        ..TrainConfig::default()
    };
    let model = MultimodalModel::init(cfg.moe.clone(), cfg.mov.clone(), cfg.seed)?;
    let mut records = scene_dataset(0, 11, "toy")?;
    records.truncate(32);
    let resolver = DefaultResolver::default();
    let samples = prepare_records(&model, &records, &resolver, &mut FeatureCache::default())?;
    let lens: Vec<usize> = samples.iter().map(|s| s.len()).collect();
    println!("sequence lengths {lens:?}");
    let mut trainer = Trainer::new(cfg, model, vec![samples])?;
    let t0 = Instant::now();
    let out = std::env::temp_dir().join("mllm-overfit");
    let report = trainer.run(&out, None)?;
    println!("{report:?} in {:.1}s", t0.elapsed().as_secs_f64());
    let grounding: Vec<_> = records.iter().filter(|r| r.tags.domain == "grounding").cloned().collect();
    let t1 = Instant::now();
    let answers = generate_answers(&trainer.model, &grounding, &resolver, &trainer.model.lm.default_route(), 64)?;
    let rec = eval_rec(&grounding, &answers)?;
    println!("{rec:?} in {:.1}s", t1.elapsed().as_secs_f64());
    for (r, a) in grounding.iter().zip(&answers) {
        println!("{} | {}", r.first_assistant_text().unwrap_or_default(), a);
    }
    Ok(())
}
