//! Weighted-BCE deep-supervised training with a plateau learning-rate
//! schedule and leakage-free temporal cross-validation folds.

use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::raster::read_raster;
use crate::error::{Error, Result};
use crate::eval::{confuse, metrics, ConfusionMatrix};
use crate::grid::Raster;
use crate::model::{Model, ParamKind};
use crate::preprocess::{
    feature_path, list_feature_timestamps, stitch_predictions, target_path, tile_frame, NormStats,
};
use crate::tensor::{Graph, Shape, Tensor, TensorRef};

/// Tiles evaluated per inference graph; keeps peak memory bounded.
const EVAL_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub lr_drop_factor: f64,
    pub plateau_window: usize,
    /// Relative improvement below this fraction triggers an lr drop.
    pub plateau_threshold: f64,
    pub weight_decay: f64,
    /// Consecutive frames per batch; the batch size is this times the
    /// tiles per frame (2 x 56 = 112 at full scale).
    pub batch_frames: usize,
    /// Positive-class weight; `None` computes #neg/#pos from the data.
    pub pos_weight: Option<f64>,
    pub seed: u64,
    /// Test metrics are logged every this many epochs.
    pub eval_every: usize,
    pub threshold: f64,
    pub tile_h: usize,
    pub tile_w: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr0: 0.01,
            lr_drop_factor: 10.0,
            plateau_window: 5,
            plateau_threshold: 0.01,
            weight_decay: 0.1,
            batch_frames: 2,
            pos_weight: None,
            seed: 0,
            eval_every: 5,
            threshold: 0.5,
            tile_h: crate::preprocess::TILE_H,
            tile_w: crate::preprocess::TILE_W,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0
            || self.lr0 <= 0.0
            || self.lr_drop_factor <= 1.0
            || self.plateau_window == 0
            || self.plateau_threshold <= 0.0
            || self.weight_decay < 0.0
            || self.batch_frames == 0
            || self.eval_every == 0
        {
            return Err(Error::Config("training hyperparameters out of range".into()));
        }
        if let Some(p) = self.pos_weight {
            if p <= 0.0 {
                return Err(Error::Config("pos_weight must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One preprocessed frame: ten feature channels plus the binary target.
#[derive(Debug, Clone)]
pub struct FrameData {
    pub timestamp: DateTime<Utc>,
    pub channels: Vec<Raster>,
    pub target: Raster,
}

/// An ordered set of preprocessed frames.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub frames: Vec<FrameData>,
}

impl Dataset {
    /// Read every feature/target pair from a preprocess output directory.
    pub fn load(dir: &Path) -> Result<Dataset> {
        let mut frames = Vec::new();
        for ts in list_feature_timestamps(dir)? {
            let channels = read_raster(&feature_path(dir, ts))?;
            let mut target = read_raster(&target_path(dir, ts))?;
            if target.len() != 1 {
                return Err(Error::Data(format!(
                    "target for {ts} has {} channels, expected 1",
                    target.len()
                )));
            }
            let target = target.remove(0);
            if channels.is_empty()
                || channels[0].h() != target.h()
                || channels[0].w() != target.w()
            {
                return Err(Error::Shape(format!("feature/target size mismatch at {ts}")));
            }
            frames.push(FrameData {
                timestamp: ts,
                channels,
                target,
            });
        }
        if frames.is_empty() {
            return Err(Error::Data(format!(
                "no preprocessed frames in {}",
                dir.display()
            )));
        }
        Ok(Dataset { frames })
    }

    /// Keep only frames selected by `keep`.
    pub fn filter(&self, keep: impl Fn(DateTime<Utc>) -> bool) -> Dataset {
        Dataset {
            frames: self
                .frames
                .iter()
                .filter(|f| keep(f.timestamp))
                .cloned()
                .collect(),
        }
    }

    /// Min-max normalize all feature channels in place.
    pub fn normalize(&mut self, stats: &NormStats) -> Result<()> {
        for f in &mut self.frames {
            stats.normalize(&mut f.channels)?;
        }
        Ok(())
    }

    pub fn channel_stats(&self) -> Result<NormStats> {
        NormStats::compute(self.frames.iter().map(|f| f.channels.as_slice()))
    }
}

/// p = #negative / #positive over all target pixels.
pub fn class_weight<'a>(targets: impl IntoIterator<Item = &'a Raster>) -> Result<f64> {
    let (mut pos, mut neg) = (0u64, 0u64);
    for t in targets {
        for &v in t.data() {
            if v == 1.0 {
                pos += 1;
            } else {
                neg += 1;
            }
        }
    }
    if pos == 0 {
        return Err(Error::Data(
            "no positive pixels in the training targets; widen the time range \
             or raise the event rate so the positive class is represented"
                .into(),
        ));
    }
    Ok(neg as f64 / pos as f64)
}

/// Deep-supervision loss: the sum of the three per-head weighted BCEs.
pub fn deep_loss(
    g: &mut Graph,
    heads: &[TensorRef; 3],
    target: TensorRef,
    pos_weight: f64,
) -> Result<TensorRef> {
    let l1 = g.weighted_bce_mean(heads[0], target, pos_weight)?;
    let l2 = g.weighted_bce_mean(heads[1], target, pos_weight)?;
    let l3 = g.weighted_bce_mean(heads[2], target, pos_weight)?;
    let s = g.add(l1, l2)?;
    g.add(s, l3)
}

/// w <- w - lr * (g + wd * w), with weight decay applied to conv weights
/// only (never biases or batchnorm affine terms).
pub fn sgd_step(model: &mut Model, grads: &[Vec<f64>], lr: f64, weight_decay: f64) -> Result<()> {
    let params = model.params_mut();
    if grads.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} gradient blocks for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if g.len() != p.values.len() {
            return Err(Error::Shape(format!("gradient size mismatch for {}", p.name)));
        }
        if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient {bad} in {}",
                p.name
            )));
        }
    }
    for (p, g) in params.iter_mut().zip(grads) {
        let wd = if p.kind == ParamKind::ConvWeight {
            weight_decay
        } else {
            0.0
        };
        for (w, &gv) in p.values.iter_mut().zip(g) {
            *w -= lr * (gv + wd * *w);
        }
    }
    Ok(())
}

/// Drop the learning rate by `drop_factor` when the best loss of the last
/// `window` epochs improves on the best before them by less than
/// `threshold` (relative); otherwise keep it.
pub fn plateau_lr(
    history: &[f64],
    lr: f64,
    window: usize,
    threshold: f64,
    drop_factor: f64,
) -> f64 {
    if history.len() < window + 1 {
        return lr;
    }
    let split = history.len() - window;
    let best_prev = history[..split].iter().cloned().fold(f64::INFINITY, f64::min);
    let best_recent = history[split..].iter().cloned().fold(f64::INFINITY, f64::min);
    if best_prev <= 0.0 {
        return lr;
    }
    if (best_prev - best_recent) / best_prev < threshold {
        lr / drop_factor
    } else {
        lr
    }
}

/// A temporal cross-validation fold: a contiguous test range plus a
/// training predicate that excludes everything within `margin` of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FoldSpec {
    pub fold: u8,
    pub test_start: DateTime<Utc>,
    pub test_end: DateTime<Utc>,
    pub margin: Duration,
}

impl FoldSpec {
    pub fn is_test(&self, t: DateTime<Utc>) -> bool {
        t >= self.test_start && t <= self.test_end
    }

    pub fn is_train(&self, t: DateTime<Utc>) -> bool {
        t <= self.test_start - self.margin || t >= self.test_end + self.margin
    }
}

/// Divide a timeline into four equal test ranges separated by one margin,
/// so each fold's training data is everything at least `margin` away.
pub fn make_folds(timeline: &[DateTime<Utc>], margin: Duration) -> Result<[FoldSpec; 4]> {
    let (&first, &last) = match (timeline.iter().min(), timeline.iter().max()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Data("empty sample timeline".into())),
    };
    let span = last - first;
    if span < margin * 4 {
        return Err(Error::Data(format!(
            "timeline span {span} too short for 4 folds with a {margin} margin"
        )));
    }
    let quarter = (span - margin * 3) / 4;
    let mut folds = Vec::with_capacity(4);
    for k in 0..4u8 {
        let test_start = first + (quarter + margin) * k as i32;
        folds.push(FoldSpec {
            fold: k + 1,
            test_start,
            test_end: test_start + quarter,
            margin,
        });
    }
    Ok([
        folds[0].clone(),
        folds[1].clone(),
        folds[2].clone(),
        folds[3].clone(),
    ])
}

/// One epoch of the training log; test metrics appear on eval epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
}

pub fn write_epoch_logs(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["epoch", "loss", "lr", "tpr", "tnr"])?;
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    for l in logs {
        wtr.write_record([
            l.epoch.to_string(),
            format!("{:.12e}", l.loss),
            format!("{:e}", l.lr),
            opt(l.tpr),
            opt(l.tnr),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Stitched per-frame probability map from tiled inference.
pub fn predict_frame(
    model: &Model,
    channels: &[Raster],
    tile_h: usize,
    tile_w: usize,
) -> Result<Raster> {
    let (h, w) = (channels[0].h(), channels[0].w());
    let (tiles, indices) = tile_frame(channels, DateTime::<Utc>::MIN_UTC, tile_h, tile_w)?;
    let c = channels.len();
    let mut predictions = Vec::with_capacity(tiles.len());
    for (chunk_tiles, chunk_idx) in tiles.chunks(EVAL_CHUNK).zip(indices.chunks(EVAL_CHUNK)) {
        let b = chunk_tiles.len();
        let shape = Shape { b, c, h: tile_h, w: tile_w };
        let mut data = Vec::with_capacity(shape.numel());
        for tile in chunk_tiles {
            for ch in tile {
                data.extend_from_slice(ch.data());
            }
        }
        let mut g = Graph::inference();
        let x = g.leaf(Tensor::from_vec(shape, data)?);
        let bind = model.bind(&mut g)?;
        let logits = model.forward_infer(&mut g, x, &bind)?;
        let probs = g.sigmoid(logits);
        let plane = tile_h * tile_w;
        let pd = g.data(probs);
        for (bi, idx) in chunk_idx.iter().enumerate() {
            let tile = Raster::from_vec(tile_h, tile_w, pd[bi * plane..(bi + 1) * plane].to_vec())?;
            predictions.push((*idx, tile));
        }
    }
    stitch_predictions(&predictions, h, w)
}

/// Confusion counts of stitched predictions over a whole dataset.
pub fn evaluate_model(
    model: &Model,
    data: &Dataset,
    threshold: f64,
    tile_h: usize,
    tile_w: usize,
) -> Result<ConfusionMatrix> {
    let mut total = ConfusionMatrix::zero();
    for f in &data.frames {
        let probs = predict_frame(model, &f.channels, tile_h, tile_w)?;
        total.add(&confuse(probs.data(), f.target.data(), threshold)?);
    }
    Ok(total)
}

pub struct TrainOutcome {
    pub model: Model,
    pub logs: Vec<EpochLog>,
    /// Diagnostic when training aborted on a numeric failure; the model
    /// is then the last state that completed an epoch.
    pub aborted: Option<String>,
}

fn assemble_batch(
    frames: &[&FrameData],
    tile_h: usize,
    tile_w: usize,
) -> Result<(Tensor, Tensor)> {
    let c = frames[0].channels.len();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut b = 0;
    for f in frames {
        let (tiles, _) = tile_frame(&f.channels, f.timestamp, tile_h, tile_w)?;
        let (target_tiles, _) =
            tile_frame(std::slice::from_ref(&f.target), f.timestamp, tile_h, tile_w)?;
        for (tile, tt) in tiles.iter().zip(&target_tiles) {
            for ch in tile {
                xs.extend_from_slice(ch.data());
            }
            ys.extend_from_slice(tt[0].data());
            b += 1;
        }
    }
    let x = Tensor::from_vec(Shape { b, c, h: tile_h, w: tile_w }, xs)?;
    let y = Tensor::from_vec(Shape { b, c: 1, h: tile_h, w: tile_w }, ys)?;
    Ok((x, y))
}

/// Run the full training loop for one fold's data.
pub fn train(
    mut model: Model,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.frames.is_empty() {
        return Err(Error::Data("empty training dataset".into()));
    }
    let pos_weight = match cfg.pos_weight {
        Some(p) => p,
        None => class_weight(data.frames.iter().map(|f| &f.target))?,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let groups: Vec<Vec<usize>> = (0..data.frames.len())
        .collect::<Vec<_>>()
        .chunks(cfg.batch_frames)
        .map(|c| c.to_vec())
        .collect();

    let mut lr = cfg.lr0;
    let mut history: Vec<f64> = Vec::new();
    let mut logs: Vec<EpochLog> = Vec::new();
    let mut snapshot = model.clone();

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        let mut failure: Option<String> = None;
        for &gi in &order {
            let frames: Vec<&FrameData> = groups[gi].iter().map(|&i| &data.frames[i]).collect();
            let (x, y) = assemble_batch(&frames, cfg.tile_h, cfg.tile_w)?;
            let mut g = Graph::new();
            let x = g.leaf(x);
            let y = g.leaf(y);
            let bind = model.bind(&mut g)?;
            let fwd = model.forward_train(&mut g, x, &bind)?;
            let loss = deep_loss(&mut g, &fwd.heads, y, pos_weight)?;
            let loss_value = g.value(loss);
            if !loss_value.is_finite() {
                failure = Some(format!("non-finite loss {loss_value} in epoch {epoch}"));
                break;
            }
            g.backward(loss)?;
            let grads: Vec<Vec<f64>> = bind
                .iter()
                .map(|r| {
                    g.grad(*r)
                        .map(|s| s.to_vec())
                        .unwrap_or_else(|| vec![0.0; g.shape(*r).numel()])
                })
                .collect();
            if let Err(e) = sgd_step(&mut model, &grads, lr, cfg.weight_decay) {
                failure = Some(format!("{e} in epoch {epoch}"));
                break;
            }
            model.apply_bn_updates(&fwd.bn_batch);
            epoch_loss += loss_value;
            batches += 1;
        }
        if let Some(diag) = failure {
            eprintln!("warning: aborting training: {diag}");
            return Ok(TrainOutcome {
                model: snapshot,
                logs,
                aborted: Some(diag),
            });
        }

        let mean_loss = epoch_loss / batches.max(1) as f64;
        history.push(mean_loss);

        let (mut tpr, mut tnr) = (None, None);
        if epoch % cfg.eval_every == 0 {
            if let Some(test) = test {
                let cm = evaluate_model(&model, test, cfg.threshold, cfg.tile_h, cfg.tile_w)?;
                let m = metrics(&cm, cfg.threshold)?;
                tpr = m.tpr;
                tnr = m.tnr;
            }
        }
        logs.push(EpochLog {
            epoch,
            loss: mean_loss,
            lr,
            tpr,
            tnr,
        });
        lr = plateau_lr(
            &history,
            lr,
            cfg.plateau_window,
            cfg.plateau_threshold,
            cfg.lr_drop_factor,
        );
        snapshot = model.clone();
    }

    Ok(TrainOutcome {
        model,
        logs,
        aborted: None,
    })
}
