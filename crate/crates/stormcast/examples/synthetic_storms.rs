//! Generates a synthetic storm sequence and summarizes it: drifting
//! convective cells in several correlated channels, plus point lightning
//! events concentrated around young, growing cells.
//!
//! Run with: `cargo run --example synthetic_storms`

use stormcast::data::{gen_sequence, SynthConfig};
use stormcast::preprocess::build_target;

fn main() -> stormcast::Result<()> {
    let cfg = SynthConfig {
        h: 64,
        w: 64,
        channels: 3,
        n_frames: 96,
        seed: 42,
        ..SynthConfig::default()
    };
    let (frames, events) = gen_sequence(&cfg)?;
    println!(
        "{} frames of {}x{} ({} channels), {} lightning events",
        frames.len(),
        cfg.h,
        cfg.w,
        cfg.channels,
        events.len()
    );

    // Label each frame with "lightning somewhere in the next step" and
    // count positive pixels, the quantity the network later predicts.
    let step = cfg.step();
    let mut positive = 0usize;
    let mut total = 0usize;
    for frame in &frames {
        let (target, _) =
            build_target(&events, (frame.timestamp, frame.timestamp + step), cfg.h, cfg.w);
        positive += target.data().iter().filter(|&&v| v == 1.0).count();
        total += target.data().len();
    }
    println!(
        "positive pixels: {positive} of {total} ({:.4}%)",
        100.0 * positive as f64 / total as f64
    );

    // Show the cell activity over a few frames: mean brightness tracks the
    // storm life cycle, event counts track initiation.
    println!("\n{:<22} {:>12} {:>8}", "frame", "mean ch0", "events");
    for frame in frames.iter().take(8) {
        let n_events = events
            .iter()
            .filter(|e| e.timestamp >= frame.timestamp && e.timestamp < frame.timestamp + step)
            .count();
        println!(
            "{:<22} {:>12.4} {:>8}",
            frame.timestamp.format("%Y-%m-%d %H:%M"),
            frame.channels[0].mean(),
            n_events
        );
    }
    Ok(())
}
