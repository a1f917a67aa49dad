//! The full pipeline as library calls, end to end in memory: generate a
//! synthetic storm sequence, extract extrapolation-error features, split
//! train/test in time, train briefly, and score with rare-event metrics.
//!
//! Run with: `cargo run --example end_to_end` (takes a minute or two)

use chrono::Duration;
use stormcast::data::{gen_sequence, SynthConfig};
use stormcast::eval::metrics;
use stormcast::flow::FlowParams;
use stormcast::model::{Model, ModelConfig, Variant};
use stormcast::preprocess::build_frame_features;
use stormcast::train::{evaluate_model, make_folds, train, Dataset, FrameData, TrainConfig};

fn main() -> stormcast::Result<()> {
    // 1. Synthetic storms: 48 frames of drifting cells in 3 channels.
    let cfg = SynthConfig {
        h: 48,
        w: 48,
        channels: 3,
        n_frames: 48,
        seed: 1,
        target_positive_fraction: 0.003,
        ..SynthConfig::default()
    };
    let (frames, events) = gen_sequence(&cfg)?;
    println!("generated {} frames, {} events", frames.len(), events.len());

    // 2. Features: per-channel extrapolation errors + recent lightning.
    let raw: Vec<_> = frames.into_iter().map(|f| (f.timestamp, f.channels)).collect();
    let produced = build_frame_features(&raw, &events, cfg.step(), &FlowParams::default())?;
    let mut data = Dataset {
        frames: produced
            .into_iter()
            .map(|(stack, target)| FrameData {
                timestamp: stack.timestamp,
                channels: stack.channels,
                target,
            })
            .collect(),
    };
    println!("built {} feature frames", data.frames.len());

    // 3. Temporal split: test on the first quarter, train on the rest,
    //    with a one-hour buffer between them against leakage.
    let timeline: Vec<_> = data.frames.iter().map(|f| f.timestamp).collect();
    let fold = make_folds(&timeline, Duration::hours(1))?[0];
    let stats = data.filter(|t| fold.is_train(t)).channel_stats()?;
    data.normalize(&stats)?;
    let train_set = data.filter(|t| fold.is_train(t));
    let test_set = data.filter(|t| fold.is_test(t));
    println!(
        "fold 1: {} train / {} test frames",
        train_set.frames.len(),
        test_set.frames.len()
    );

    // 4. A small residual network, trained for a handful of epochs.
    let model = Model::new(ModelConfig {
        variant: Variant::Runetpp,
        base_width: 4,
        in_channels: train_set.frames[0].channels.len(),
        seed: 3,
        ..ModelConfig::default()
    })?;
    let tc = TrainConfig {
        epochs: 4,
        eval_every: 2,
        tile_h: 48,
        tile_w: 48,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train(model, &train_set, Some(&test_set), &tc)?;
    assert!(out.aborted.is_none(), "training aborted: {:?}", out.aborted);
    for log in &out.logs {
        match (log.tpr, log.tnr) {
            (Some(tpr), Some(tnr)) => println!(
                "epoch {}: loss {:.4}, test tpr {tpr:.3} tnr {tnr:.3}",
                log.epoch, log.loss
            ),
            _ => println!("epoch {}: loss {:.4}", log.epoch, log.loss),
        }
    }

    // 5. Final held-out score.
    let cm = evaluate_model(&out.model, &test_set, 0.5, 48, 48)?;
    let m = metrics(&cm, 0.5)?;
    println!(
        "held-out: tpr {} tnr {} accuracy {}",
        m.tpr.map_or("undefined".into(), |v| format!("{v:.3}")),
        m.tnr.map_or("undefined".into(), |v| format!("{v:.3}")),
        m.accuracy.map_or("undefined".into(), |v| format!("{v:.3}")),
    );
    Ok(())
}
