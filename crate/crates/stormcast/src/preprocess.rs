//! Feature assembly: per-channel nowcast-error maps plus a lightning
//! accumulation channel, min-max normalization, and the sliding-window
//! tiling that turns full frames into training samples.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};

use crate::data::events::LightningEvent;
use crate::error::{Error, Result};
use crate::flow::{nowcast_error, FlowParams};
use crate::grid::Raster;

/// Tile height (rows) matching the full-scale frame split.
pub const TILE_H: usize = 144;
/// Tile width (columns) matching the full-scale frame split.
pub const TILE_W: usize = 160;
/// Lightning counts are clipped here before scaling to [0,1].
pub const LIGHTNING_CLIP: f64 = 10.0;

/// A ten-channel feature frame: channels 0-8 are nowcast-error maps of the
/// nine source channels, channel 9 is the scaled lightning accumulation of
/// the last window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    pub timestamp: DateTime<Utc>,
    pub channels: Vec<Raster>,
}

/// Location of one tile within its source frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileIndex {
    pub timestamp: DateTime<Utc>,
    pub tile_row: usize,
    pub tile_col: usize,
    /// Pixel origin (top row, left column) of the tile window.
    pub r0: usize,
    pub c0: usize,
}

/// Per-channel (min, max) over the training split, used for min-max
/// normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub stats: Vec<(f64, f64)>,
}

impl NormStats {
    /// Scan per-channel extrema over a set of frames.
    pub fn compute<'a, I>(frames: I) -> Result<NormStats>
    where
        I: IntoIterator<Item = &'a [Raster]>,
    {
        let mut stats: Vec<(f64, f64)> = Vec::new();
        let mut seen = false;
        for channels in frames {
            if !seen {
                stats = vec![(f64::INFINITY, f64::NEG_INFINITY); channels.len()];
                seen = true;
            }
            if channels.len() != stats.len() {
                return Err(Error::Shape(format!(
                    "frame has {} channels, expected {}",
                    channels.len(),
                    stats.len()
                )));
            }
            for (c, r) in channels.iter().enumerate() {
                for &v in r.data() {
                    if v < stats[c].0 {
                        stats[c].0 = v;
                    }
                    if v > stats[c].1 {
                        stats[c].1 = v;
                    }
                }
            }
        }
        if !seen {
            return Err(Error::Data("no frames to compute stats over".into()));
        }
        Ok(NormStats { stats })
    }

    /// Min-max normalize in place; out-of-range values clamp to [0,1].
    /// Constant channels (min = max) become all zeros with a warning.
    pub fn normalize(&self, channels: &mut [Raster]) -> Result<()> {
        if channels.len() != self.stats.len() {
            return Err(Error::Shape(format!(
                "normalizing {} channels with stats for {}",
                channels.len(),
                self.stats.len()
            )));
        }
        for (c, r) in channels.iter_mut().enumerate() {
            let (lo, hi) = self.stats[c];
            if hi <= lo {
                eprintln!("warning: channel {c} is constant in the training split; emitting zeros");
                r.data_mut().iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            let inv = 1.0 / (hi - lo);
            for v in r.data_mut() {
                *v = ((*v - lo) * inv).clamp(0.0, 1.0);
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        wtr.write_record(["channel", "min", "max"])?;
        for (c, (lo, hi)) in self.stats.iter().enumerate() {
            wtr.write_record([c.to_string(), format!("{lo:e}"), format!("{hi:e}")])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<NormStats> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut stats = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let lo: f64 = rec
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data(format!("bad stats row in {}", path.display())))?;
            let hi: f64 = rec
                .get(2)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data(format!("bad stats row in {}", path.display())))?;
            stats.push((lo, hi));
        }
        if stats.is_empty() {
            return Err(Error::Data(format!("empty stats file {}", path.display())));
        }
        Ok(NormStats { stats })
    }
}

/// Count events per cell within `[t0, t1)`. Events outside the frame are
/// rejected; the rejection count is returned alongside.
pub fn accumulate_lightning(
    events: &[LightningEvent],
    window: (DateTime<Utc>, DateTime<Utc>),
    h: usize,
    w: usize,
) -> (Raster, usize) {
    let mut out = Raster::new(h, w);
    let mut rejected = 0;
    for e in events {
        if e.timestamp < window.0 || e.timestamp >= window.1 {
            continue;
        }
        if e.row >= h || e.col >= w {
            rejected += 1;
            continue;
        }
        let v = out.get(e.row, e.col);
        out.set(e.row, e.col, v + 1.0);
    }
    (out, rejected)
}

/// Binary occurrence map over `[t0, t1)`: 1 where at least one event fell
/// in the cell. Out-of-frame events are rejected and counted.
pub fn build_target(
    events: &[LightningEvent],
    window: (DateTime<Utc>, DateTime<Utc>),
    h: usize,
    w: usize,
) -> (Raster, usize) {
    let (mut counts, rejected) = accumulate_lightning(events, window, h, w);
    for v in counts.data_mut() {
        *v = if *v > 0.0 { 1.0 } else { 0.0 };
    }
    (counts, rejected)
}

/// Compute the raw (unnormalized) ten-channel feature stack for the frame
/// at `t0` from the triplet (t0 - 2 steps, t0 - 1 step, t0).
///
/// Channels 0..n are per-channel nowcast errors; the last channel is the
/// lightning accumulation over `[t0 - step, t0)`, clipped at
/// [`LIGHTNING_CLIP`] counts and scaled to [0,1].
pub fn compute_raw_features(
    prev2: &[Raster],
    prev1: &[Raster],
    current: &[Raster],
    timestamp: DateTime<Utc>,
    step: Duration,
    events: &[LightningEvent],
    flow: &FlowParams,
) -> Result<FeatureStack> {
    if prev2.len() != current.len() || prev1.len() != current.len() || current.is_empty() {
        return Err(Error::Shape(format!(
            "feature triplet channel counts differ: {}, {}, {}",
            prev2.len(),
            prev1.len(),
            current.len()
        )));
    }
    let (h, w) = (current[0].h(), current[0].w());
    let mut channels = Vec::with_capacity(current.len() + 1);
    for k in 0..current.len() {
        channels.push(nowcast_error(&prev2[k], &prev1[k], &current[k], flow)?);
    }
    let (mut lightning, _) = accumulate_lightning(events, (timestamp - step, timestamp), h, w);
    for v in lightning.data_mut() {
        *v = v.min(LIGHTNING_CLIP) / LIGHTNING_CLIP;
    }
    channels.push(lightning);
    Ok(FeatureStack {
        timestamp,
        channels,
    })
}

/// Map a frame sequence to raw per-frame feature stacks and targets.
///
/// A frame at `t` is usable when both predecessors at `t - step` and
/// `t - 2*step` exist; frames broken by drops are skipped. The returned
/// target covers `[t, t + step)`.
pub fn build_frame_features(
    frames: &[(DateTime<Utc>, Vec<Raster>)],
    events: &[LightningEvent],
    step: Duration,
    flow: &FlowParams,
) -> Result<Vec<(FeatureStack, Raster)>> {
    let mut out = Vec::new();
    for k in 2..frames.len() {
        let (t0, ref prev2) = frames[k - 2];
        let (t1, ref prev1) = frames[k - 1];
        let (t2, ref cur) = frames[k];
        if t1 - t0 != step || t2 - t1 != step {
            continue;
        }
        let stack = compute_raw_features(prev2, prev1, cur, t2, step, events, flow)?;
        let (h, w) = (cur[0].h(), cur[0].w());
        let (target, _) = build_target(events, (t2, t2 + step), h, w);
        out.push((stack, target));
    }
    Ok(out)
}

/// Tile counts and stride along one axis: the smallest number of tiles
/// whose uniform integer stride covers the extent exactly.
pub fn tile_grid(extent: usize, tile: usize) -> Result<(usize, usize)> {
    if extent < tile {
        return Err(Error::Shape(format!(
            "frame extent {extent} smaller than tile {tile}"
        )));
    }
    if extent == tile {
        return Ok((1, 0));
    }
    let span = extent - tile;
    for d in 1..=span {
        if span % d == 0 && span / d <= tile {
            return Ok((d + 1, span / d));
        }
    }
    unreachable!("d = span always yields stride 1");
}

/// Split a frame into the deterministic tile grid (row-major order).
pub fn tile_frame(
    channels: &[Raster],
    timestamp: DateTime<Utc>,
    tile_h: usize,
    tile_w: usize,
) -> Result<(Vec<Vec<Raster>>, Vec<TileIndex>)> {
    let first = channels
        .first()
        .ok_or_else(|| Error::Shape("tiling an empty channel stack".into()))?;
    let (h, w) = (first.h(), first.w());
    let (n_rows, stride_r) = tile_grid(h, tile_h)?;
    let (n_cols, stride_c) = tile_grid(w, tile_w)?;
    let mut tiles = Vec::with_capacity(n_rows * n_cols);
    let mut indices = Vec::with_capacity(n_rows * n_cols);
    for tr in 0..n_rows {
        for tc in 0..n_cols {
            let r0 = tr * stride_r;
            let c0 = tc * stride_c;
            let mut tile_channels = Vec::with_capacity(channels.len());
            for ch in channels {
                let mut t = Raster::new(tile_h, tile_w);
                for y in 0..tile_h {
                    let src = &ch.data()[(r0 + y) * w + c0..(r0 + y) * w + c0 + tile_w];
                    t.data_mut()[y * tile_w..(y + 1) * tile_w].copy_from_slice(src);
                }
                tile_channels.push(t);
            }
            tiles.push(tile_channels);
            indices.push(TileIndex {
                timestamp,
                tile_row: tr,
                tile_col: tc,
                r0,
                c0,
            });
        }
    }
    Ok((tiles, indices))
}

/// Reassemble a full frame from per-tile predictions; pixels covered by
/// several tiles take the maximum (alarm-conservative).
pub fn stitch_predictions(
    tiles: &[(TileIndex, Raster)],
    frame_h: usize,
    frame_w: usize,
) -> Result<Raster> {
    let first = tiles
        .first()
        .ok_or_else(|| Error::Data("stitching an empty tile set".into()))?;
    let (tile_h, tile_w) = (first.1.h(), first.1.w());
    let (n_rows, _) = tile_grid(frame_h, tile_h)?;
    let (n_cols, _) = tile_grid(frame_w, tile_w)?;
    let mut present = vec![false; n_rows * n_cols];
    let mut out_data = vec![f64::NEG_INFINITY; frame_h * frame_w];
    for (idx, tile) in tiles {
        if tile.h() != tile_h || tile.w() != tile_w {
            return Err(Error::Shape(format!(
                "tile ({},{}) is {}x{}, expected {tile_h}x{tile_w}",
                idx.tile_row,
                idx.tile_col,
                tile.h(),
                tile.w()
            )));
        }
        if idx.tile_row >= n_rows || idx.tile_col >= n_cols {
            return Err(Error::Data(format!(
                "tile ({},{}) outside the {n_rows}x{n_cols} grid",
                idx.tile_row, idx.tile_col
            )));
        }
        present[idx.tile_row * n_cols + idx.tile_col] = true;
        for y in 0..tile_h {
            for x in 0..tile_w {
                let o = (idx.r0 + y) * frame_w + idx.c0 + x;
                let v = tile.get(y, x);
                if v > out_data[o] {
                    out_data[o] = v;
                }
            }
        }
    }
    if let Some(i) = present.iter().position(|p| !p) {
        return Err(Error::Data(format!(
            "missing tile ({},{}) of the {n_rows}x{n_cols} grid",
            i / n_cols,
            i % n_cols
        )));
    }
    Raster::from_vec(frame_h, frame_w, out_data)
}

/// Canonical feature/target file names for a frame timestamp.
pub fn frame_stamp(ts: DateTime<Utc>) -> String {
    ts.format("%Y%m%dT%H%M%SZ").to_string()
}

pub fn frame_path(dir: &Path, ts: DateTime<Utc>) -> PathBuf {
    dir.join(format!("frame_{}.scr", frame_stamp(ts)))
}

pub fn feature_path(dir: &Path, ts: DateTime<Utc>) -> PathBuf {
    dir.join(format!("features_{}.scr", frame_stamp(ts)))
}

pub fn target_path(dir: &Path, ts: DateTime<Utc>) -> PathBuf {
    dir.join(format!("target_{}.scr", frame_stamp(ts)))
}

/// Timestamps of all `<prefix>_<stamp>.scr` files in a directory, sorted.
fn list_stamped(dir: &Path, prefix: &str) -> Result<Vec<DateTime<Utc>>> {
    let mut out = BTreeSet::new();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(stamp) = name
            .strip_prefix(prefix)
            .and_then(|s| s.strip_prefix('_'))
            .and_then(|s| s.strip_suffix(".scr"))
        {
            let ts = DateTime::parse_from_str(&format!("{stamp} +0000"), "%Y%m%dT%H%M%SZ %z")
                .map_err(|e| Error::Data(format!("unparseable file name {name}: {e}")))?;
            out.insert(ts.with_timezone(&Utc));
        }
    }
    Ok(out.into_iter().collect())
}

/// Timestamps of all feature files in a directory, sorted ascending.
pub fn list_feature_timestamps(dir: &Path) -> Result<Vec<DateTime<Utc>>> {
    list_stamped(dir, "features")
}

/// Timestamps of all raw frame files in a directory, sorted ascending.
pub fn list_frame_timestamps(dir: &Path) -> Result<Vec<DateTime<Utc>>> {
    list_stamped(dir, "frame")
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2017, 6, 1, 0, 30, 0).unwrap()
    }

    fn ev(ts: DateTime<Utc>, row: usize, col: usize) -> LightningEvent {
        LightningEvent {
            timestamp: ts,
            row,
            col,
        }
    }

    #[test]
    fn accumulate_counts_and_rejects() {
        let w0 = t0();
        let w1 = w0 + Duration::minutes(15);
        let events = vec![
            ev(w0, 2, 3),
            ev(w0 + Duration::minutes(1), 2, 3),
            ev(w0 + Duration::minutes(2), 2, 3),
            ev(w0 + Duration::minutes(3), 5, 5),
            ev(w0 + Duration::minutes(4), 5, 5),
            ev(w0 + Duration::minutes(5), 99, 0), // outside the frame
            ev(w1, 1, 1),                         // outside the window
        ];
        let (r, rejected) = accumulate_lightning(&events, (w0, w1), 8, 8);
        assert_eq!(r.get(2, 3), 3.0);
        assert_eq!(r.get(5, 5), 2.0);
        assert_eq!(r.data().iter().sum::<f64>(), 5.0);
        assert_eq!(rejected, 1);
    }

    #[test]
    fn empty_window_gives_zero_maps() {
        let w0 = t0();
        let w1 = w0 + Duration::minutes(15);
        let (acc, _) = accumulate_lightning(&[], (w0, w1), 4, 4);
        assert!(acc.data().iter().all(|&v| v == 0.0));
        let (tgt, _) = build_target(&[], (w0, w1), 4, 4);
        assert!(tgt.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn target_is_binary_with_single_positive() {
        let w0 = t0();
        let w1 = w0 + Duration::minutes(15);
        let events = vec![ev(w0 + Duration::minutes(7), 3, 2), ev(w0 + Duration::minutes(8), 3, 2)];
        let (tgt, _) = build_target(&events, (w0, w1), 6, 6);
        assert_eq!(tgt.get(3, 2), 1.0);
        assert_eq!(tgt.data().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn boundary_event_splits_causally() {
        // an event exactly at t belongs to the prediction window [t, t+15)
        // and not to the history window [t-15, t)
        let t = t0();
        let step = Duration::minutes(15);
        let events = vec![ev(t, 1, 1)];
        let (hist, _) = accumulate_lightning(&events, (t - step, t), 4, 4);
        let (fut, _) = build_target(&events, (t, t + step), 4, 4);
        assert_eq!(hist.get(1, 1), 0.0);
        assert_eq!(fut.get(1, 1), 1.0);
    }

    #[test]
    fn paper_scale_tiling_geometry() {
        // 956 rows x 1114 cols split into 8 x 7 = 56 tiles of 144 x 160
        assert_eq!(tile_grid(956, TILE_H).unwrap(), (8, 116));
        assert_eq!(tile_grid(1114, TILE_W).unwrap(), (7, 159));
        let chans = vec![Raster::new(956, 1114)];
        let (tiles, idx) = tile_frame(&chans, t0(), TILE_H, TILE_W).unwrap();
        assert_eq!(tiles.len(), 56);
        assert_eq!(idx.len(), 56);
        assert_eq!(idx[0], TileIndex { timestamp: t0(), tile_row: 0, tile_col: 0, r0: 0, c0: 0 });
        assert_eq!(idx[55].r0, 7 * 116);
        assert_eq!(idx[55].c0, 6 * 159);
        // two frames' worth of tiles fill one reference batch of 112
        assert_eq!(2 * tiles.len(), 112);
    }

    #[test]
    fn tile_coverage_is_complete() {
        // every pixel is covered by at least one tile window
        for (h, w, th, tw) in [(956, 1114, TILE_H, TILE_W), (64, 64, 64, 64), (100, 70, 64, 64)] {
            let (nr, sr) = tile_grid(h, th).unwrap();
            let (nc, sc) = tile_grid(w, tw).unwrap();
            let mut covered = vec![0u32; h * w];
            for tr in 0..nr {
                for tc in 0..nc {
                    for y in 0..th {
                        for x in 0..tw {
                            covered[(tr * sr + y) * w + tc * sc + x] += 1;
                        }
                    }
                }
            }
            assert!(covered.iter().all(|&c| c >= 1), "{h}x{w} tiles {th}x{tw}");
        }
    }

    #[test]
    fn single_tile_frame_is_identity() {
        let data: Vec<f64> = (0..64 * 64).map(|i| (i as f64 * 0.13).sin()).collect();
        let frame = vec![Raster::from_vec(64, 64, data).unwrap()];
        let (tiles, idx) = tile_frame(&frame, t0(), 64, 64).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0][0], frame[0]);
        assert_eq!((idx[0].r0, idx[0].c0), (0, 0));
    }

    #[test]
    fn too_small_frame_rejected() {
        let frame = vec![Raster::new(100, 100)];
        assert!(tile_frame(&frame, t0(), TILE_H, TILE_W).is_err());
    }

    #[test]
    fn stitch_inverts_tiling() {
        let data: Vec<f64> = (0..100 * 70).map(|i| ((i * 37) % 113) as f64 / 113.0).collect();
        let frame = Raster::from_vec(100, 70, data).unwrap();
        let (tiles, idx) = tile_frame(&[frame.clone()], t0(), 64, 64).unwrap();
        let paired: Vec<(TileIndex, Raster)> = idx
            .iter()
            .cloned()
            .zip(tiles.into_iter().map(|mut t| t.remove(0)))
            .collect();
        let back = stitch_predictions(&paired, 100, 70).unwrap();
        assert_eq!(back, frame);
    }

    #[test]
    fn stitch_resolves_overlap_by_maximum() {
        // frame 100x64 -> two 64x64 tiles overlapping on rows 36..64
        let lo = Raster::from_vec(64, 64, vec![0.2; 64 * 64]).unwrap();
        let hi = Raster::from_vec(64, 64, vec![0.7; 64 * 64]).unwrap();
        let mk = |tr, r0| TileIndex { timestamp: t0(), tile_row: tr, tile_col: 0, r0, c0: 0 };
        let out = stitch_predictions(&[(mk(0, 0), lo), (mk(1, 36), hi)], 100, 64).unwrap();
        assert_eq!(out.get(40, 10), 0.7);
        assert_eq!(out.get(10, 10), 0.2);
    }

    #[test]
    fn stitch_missing_tile_rejected() {
        let tile = Raster::new(64, 64);
        let idx = TileIndex { timestamp: t0(), tile_row: 0, tile_col: 0, r0: 0, c0: 0 };
        let res = stitch_predictions(&[(idx, tile)], 100, 64);
        assert!(matches!(res, Err(Error::Data(_))));
    }

    #[test]
    fn normalization_examples() {
        let stats = NormStats { stats: vec![(2.0, 4.0)] };
        let mut chans = vec![Raster::from_vec(2, 2, vec![2.0, 4.0, 3.0, 9.0]).unwrap()];
        stats.normalize(&mut chans).unwrap();
        // min -> 0, max -> 1, midpoint -> 0.5, above-range clamps to 1
        assert_eq!(chans[0].data(), &[0.0, 1.0, 0.5, 1.0]);
    }

    #[test]
    fn normalization_is_idempotent_with_unit_stats() {
        let unit = NormStats { stats: vec![(0.0, 1.0); 2] };
        let data: Vec<f64> = (0..16).map(|i| i as f64 / 15.0).collect();
        let mut chans = vec![
            Raster::from_vec(4, 4, data.clone()).unwrap(),
            Raster::from_vec(4, 4, data).unwrap(),
        ];
        let before = chans.clone();
        unit.normalize(&mut chans).unwrap();
        assert_eq!(chans, before);
    }

    #[test]
    fn constant_channel_becomes_zeros() {
        let stats = NormStats { stats: vec![(3.0, 3.0)] };
        let mut chans = vec![Raster::from_vec(2, 2, vec![3.0; 4]).unwrap()];
        stats.normalize(&mut chans).unwrap();
        assert!(chans[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stats_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.csv");
        let stats = NormStats {
            stats: vec![(0.0, 0.731), (-1.5e-3, 2.25), (0.1, 0.9)],
        };
        stats.write(&path).unwrap();
        assert_eq!(NormStats::read(&path).unwrap(), stats);
    }

    #[test]
    fn stats_computation_scans_all_frames() {
        let f1 = vec![Raster::from_vec(2, 2, vec![0.5, 0.6, 0.7, 0.8]).unwrap()];
        let f2 = vec![Raster::from_vec(2, 2, vec![0.1, 0.2, 0.9, 0.3]).unwrap()];
        let stats = NormStats::compute([f1.as_slice(), f2.as_slice()]).unwrap();
        assert_eq!(stats.stats, vec![(0.1, 0.9)]);
    }

    #[test]
    fn feature_stack_has_ten_channels_and_causal_lightning() {
        let step = Duration::minutes(15);
        let ts = t0();
        let frame: Vec<Raster> = (0..9)
            .map(|c| {
                let data: Vec<f64> =
                    (0..32 * 32).map(|i| (((i + c) as f64) * 0.21).sin().abs() * 0.5).collect();
                Raster::from_vec(32, 32, data).unwrap()
            })
            .collect();
        let events = vec![
            ev(ts - Duration::minutes(7), 4, 4), // inside the history window
            ev(ts + Duration::minutes(1), 5, 5), // future: must not appear
        ];
        let fs = compute_raw_features(
            &frame,
            &frame,
            &frame,
            ts,
            step,
            &events,
            &FlowParams::default(),
        )
        .unwrap();
        assert_eq!(fs.channels.len(), 10);
        assert_eq!(fs.channels[9].get(4, 4), 1.0 / LIGHTNING_CLIP);
        assert_eq!(fs.channels[9].get(5, 5), 0.0);
    }

    #[test]
    fn sequence_features_skip_dropped_frames() {
        let step = Duration::minutes(15);
        let base = t0();
        let mk = |seed: u64| -> Vec<Raster> {
            let data: Vec<f64> = (0..32 * 32)
                .map(|i| ((i as f64 + seed as f64) * 0.173).sin().abs() * 0.4)
                .collect();
            vec![Raster::from_vec(32, 32, data).unwrap()]
        };
        // timestamps 0,1,2,3 then a gap (4 missing), then 5,6,7
        let mut frames = Vec::new();
        for k in [0i64, 1, 2, 3, 5, 6, 7] {
            frames.push((base + step * k as i32, mk(k as u64)));
        }
        let out = build_frame_features(&frames, &[], step, &FlowParams::default()).unwrap();
        // usable: t2, t3 (full triplets), then t7 (t5,t6,t7); t5 and t6 are broken
        let stamps: Vec<DateTime<Utc>> = out.iter().map(|(f, _)| f.timestamp).collect();
        assert_eq!(
            stamps,
            vec![base + step * 2, base + step * 3, base + step * 7]
        );
        for (f, tgt) in &out {
            assert_eq!(f.channels.len(), 2); // 1 error channel + lightning
            assert_eq!((tgt.h(), tgt.w()), (32, 32));
        }
    }

    #[test]
    fn file_name_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = t0();
        let b = t0() + Duration::minutes(15);
        for ts in [b, a] {
            std::fs::write(feature_path(dir.path(), ts), b"x").unwrap();
        }
        std::fs::write(dir.path().join("unrelated.txt"), b"y").unwrap();
        assert_eq!(list_feature_timestamps(dir.path()).unwrap(), vec![a, b]);
    }
}
