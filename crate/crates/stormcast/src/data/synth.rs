//! Synthetic storm sequences with lightning, standing in for satellite and
//! lightning-network feeds.
//!
//! A latent storm field of Gaussian cells advects over a smoothly textured
//! background; nine "satellite" channels are correlated affine views of
//! that field. Cells ramp up over their first two frames, hold, then decay
//! over their last three. Lightning fires only while a cell is young (ages
//! 0-1) — exactly the frames where its brightness is still changing, so
//! extrapolating the past by optical flow underestimates it and the
//! nowcast-error feature lights up where the labels are. Decaying cells
//! produce milder extrapolation errors with no lightning, supplying hard
//! negatives. Everything is a pure function of the config and seed.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::data::events::LightningEvent;
use crate::error::{Error, Result};
use crate::grid::Raster;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub h: usize,
    pub w: usize,
    /// Number of "satellite" channels (the pipeline expects 9).
    pub channels: usize,
    pub n_frames: usize,
    pub start: DateTime<Utc>,
    pub step_minutes: i64,
    /// Mature storm cells present at the first frame.
    pub initial_blobs: usize,
    /// Peak amplitude of a mature cell in latent units.
    pub blob_amplitude: f64,
    /// Gaussian radius of a cell in pixels.
    pub blob_radius: f64,
    /// Uniform scene motion in pixels per step: (columns, rows).
    pub advection: (f64, f64),
    /// Expected newly initiated cells per step.
    pub initiation_rate: f64,
    /// Expected lightning events per young cell per step.
    pub lightning_rate: f64,
    /// Positive-pixel fraction the defaults are tuned to produce.
    pub target_positive_fraction: f64,
    /// Probability of a frame being dropped from the output, emulating
    /// corrupt source files.
    pub frame_drop_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            h: 64,
            w: 64,
            channels: 9,
            n_frames: 96,
            start: Utc.with_ymd_and_hms(2017, 6, 1, 0, 0, 0).unwrap(),
            step_minutes: 15,
            initial_blobs: 3,
            blob_amplitude: 0.9,
            blob_radius: 3.5,
            advection: (1.2, 0.6),
            initiation_rate: 1.0,
            lightning_rate: 3.0,
            target_positive_fraction: 0.001,
            frame_drop_rate: 0.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h < 8 || self.w < 8 {
            return Err(Error::Config(format!(
                "synth frames must be at least 8x8, got {}x{}",
                self.h, self.w
            )));
        }
        if self.channels == 0 || self.n_frames == 0 || self.step_minutes <= 0 {
            return Err(Error::Config(
                "synth channels, n_frames and step_minutes must be positive".into(),
            ));
        }
        if self.initiation_rate < 0.0
            || self.lightning_rate < 0.0
            || self.frame_drop_rate < 0.0
            || self.frame_drop_rate >= 1.0
        {
            return Err(Error::Config(
                "synth rates must be >= 0 (drop rate < 1)".into(),
            ));
        }
        if self.blob_amplitude <= 0.0 || self.blob_radius <= 0.0 {
            return Err(Error::Config(
                "synth blob amplitude and radius must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn step(&self) -> Duration {
        Duration::minutes(self.step_minutes)
    }
}

/// One generated multi-channel frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub timestamp: DateTime<Utc>,
    pub channels: Vec<Raster>,
}

#[derive(Debug, Clone)]
struct Blob {
    x: f64,
    y: f64,
    age: i64,
    lifetime: i64,
    peak: f64,
}

impl Blob {
    /// Amplitude ramps 0.35 -> 0.7 -> 1.0 over ages 0-2 and fades linearly
    /// over the last three frames of the lifetime.
    fn amplitude(&self) -> f64 {
        let up = match self.age {
            0 => 0.35,
            1 => 0.7,
            _ => 1.0,
        };
        let rem = self.lifetime - self.age;
        let down = (rem.clamp(0, 3) as f64) / 3.0;
        self.peak * up * down
    }

    fn young(&self) -> bool {
        self.age <= 1
    }
}

/// Per-channel affine view of the latent field, scaled so values stay in
/// [0, 1].
struct ChannelMix {
    alpha: f64,
    beta: f64,
    gamma: f64,
    scale: f64,
}

/// Generate a frame sequence and its lightning events.
///
/// Frame `i` carries timestamp `start + i*step`; events attributed to a
/// young cell at frame `i` are timestamped inside `[t_i, t_i + step)`, so
/// they fall into the prediction window of frame `i` and depend only on
/// state at `t_i`.
pub fn gen_sequence(cfg: &SynthConfig) -> Result<(Vec<SynthFrame>, Vec<LightningEvent>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let step_secs = cfg.step_minutes * 60;

    let mixes: Vec<ChannelMix> = (0..cfg.channels)
        .map(|_| {
            let alpha = rng.random_range(0.7..1.1);
            let beta = rng.random_range(0.6..1.0);
            let gamma = rng.random_range(0.0..0.15);
            // latent can overshoot its nominal peak where cells overlap
            let scale = 1.0 / (alpha * 1.4 + beta * 0.5 + gamma + 0.05);
            ChannelMix {
                alpha,
                beta,
                gamma,
                scale,
            }
        })
        .collect();
    let (bg_ox, bg_oy) = (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));

    let margin = 6.0;
    let mut blobs: Vec<Blob> = (0..cfg.initial_blobs)
        .map(|_| Blob {
            x: rng.random_range(margin..cfg.w as f64 - margin),
            y: rng.random_range(margin..cfg.h as f64 - margin),
            age: 2,
            lifetime: rng.random_range(12..=16),
            peak: cfg.blob_amplitude * rng.random_range(0.85..1.15),
        })
        .collect();

    let noise = Normal::new(0.0, 0.005).expect("valid noise sigma");
    let jitter = Normal::new(0.0, cfg.blob_radius * 0.5).expect("valid jitter sigma");

    let mut frames = Vec::with_capacity(cfg.n_frames);
    let mut events: Vec<LightningEvent> = Vec::new();

    for i in 0..cfg.n_frames {
        let t = cfg.start + Duration::seconds(i as i64 * step_secs);

        // Latent storm field.
        let mut latent = vec![0.0f64; cfg.h * cfg.w];
        for b in &blobs {
            let a = b.amplitude();
            if a <= 0.0 {
                continue;
            }
            splat_gaussian(&mut latent, cfg.h, cfg.w, b.y, b.x, cfg.blob_radius, a);
        }

        // Channels: affine mixes of latent + advecting background + noise.
        let tf = i as f64;
        let mut channels = Vec::with_capacity(cfg.channels);
        for mix in &mixes {
            let mut data = vec![0.0f64; cfg.h * cfg.w];
            for y in 0..cfg.h {
                for x in 0..cfg.w {
                    let xp = x as f64 - cfg.advection.0 * tf + bg_ox;
                    let yp = y as f64 - cfg.advection.1 * tf + bg_oy;
                    let bg = 0.25
                        + 0.25
                            * 0.5
                            * ((0.11 * xp + 0.3).sin() * (0.07 * yp - 0.2).cos()
                                + (0.055 * xp - 0.13 * yp + 1.0).sin());
                    let idx = y * cfg.w + x;
                    let v = (mix.alpha * latent[idx] + mix.beta * bg + mix.gamma
                        + noise.sample(&mut rng))
                        * mix.scale;
                    data[idx] = v.clamp(0.0, 1.0);
                }
            }
            channels.push(Raster::from_vec(cfg.h, cfg.w, data)?);
        }

        // Lightning for young cells, timestamped inside this frame's
        // prediction window.
        for b in &blobs {
            if !b.young() || b.amplitude() <= 0.0 {
                continue;
            }
            let mean = cfg.lightning_rate * if b.age == 0 { 0.6 } else { 1.0 };
            if mean <= 0.0 {
                continue;
            }
            let n = Poisson::new(mean).expect("positive mean").sample(&mut rng) as usize;
            for _ in 0..n {
                let row = (b.y + jitter.sample(&mut rng))
                    .round()
                    .clamp(0.0, cfg.h as f64 - 1.0) as usize;
                let col = (b.x + jitter.sample(&mut rng))
                    .round()
                    .clamp(0.0, cfg.w as f64 - 1.0) as usize;
                let offset = rng.random_range(0..step_secs);
                events.push(LightningEvent {
                    timestamp: t + Duration::seconds(offset),
                    row,
                    col,
                });
            }
        }

        let dropped = cfg.frame_drop_rate > 0.0 && rng.random_bool(cfg.frame_drop_rate);
        if !dropped {
            frames.push(SynthFrame {
                timestamp: t,
                channels,
            });
        }

        // Advance state for the next frame.
        for b in blobs.iter_mut() {
            b.age += 1;
            b.x += cfg.advection.0;
            b.y += cfg.advection.1;
        }
        let bound = 3.0 * cfg.blob_radius;
        blobs.retain(|b| {
            b.age <= b.lifetime
                && b.x > -bound
                && b.y > -bound
                && b.x < cfg.w as f64 + bound
                && b.y < cfg.h as f64 + bound
        });
        if cfg.initiation_rate > 0.0 {
            let born = Poisson::new(cfg.initiation_rate)
                .expect("positive rate")
                .sample(&mut rng) as usize;
            for _ in 0..born {
                blobs.push(Blob {
                    x: rng.random_range(margin..cfg.w as f64 - margin),
                    y: rng.random_range(margin..cfg.h as f64 - margin),
                    age: 0,
                    lifetime: rng.random_range(10..=16),
                    peak: cfg.blob_amplitude * rng.random_range(0.85..1.15),
                });
            }
        }
    }

    events.sort_by_key(|e| (e.timestamp, e.row, e.col));
    Ok((frames, events))
}

/// Add a 2D Gaussian bump, truncated at four radii.
fn splat_gaussian(field: &mut [f64], h: usize, w: usize, cy: f64, cx: f64, r: f64, a: f64) {
    let cut = 4.0 * r;
    let y0 = ((cy - cut).floor().max(0.0)) as usize;
    let y1 = ((cy + cut).ceil().min(h as f64 - 1.0)) as usize;
    let x0 = ((cx - cut).floor().max(0.0)) as usize;
    let x1 = ((cx + cut).ceil().min(w as f64 - 1.0)) as usize;
    if y0 > y1 || x0 > x1 {
        return;
    }
    let inv2r2 = 1.0 / (2.0 * r * r);
    for y in y0..=y1 {
        let dy2 = (y as f64 - cy) * (y as f64 - cy);
        for x in x0..=x1 {
            let dx2 = (x as f64 - cx) * (x as f64 - cx);
            field[y * w + x] += a * (-(dy2 + dx2) * inv2r2).exp();
        }
    }
}
