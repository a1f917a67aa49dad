//! Finite-difference verification of the backward pass.
//!
//! Every differentiable op is checked against a central-difference oracle:
//! perturb one input element by ±h, re-run the forward pass, and compare
//! `(L(x+h) - L(x-h)) / 2h` with the analytic gradient. Losses are scalarized
//! as a fixed pseudo-random weighted sum of the op output so that every
//! output element influences the check with a distinct weight.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Graph, Shape, Tensor, TensorRef};

/// Step used for the central difference.
pub const DEFAULT_STEP: f64 = 1e-3;
/// Acceptance tolerance for single ops.
pub const OP_TOL: f64 = 1e-4;
/// Acceptance tolerance for deep compositions (full model).
pub const MODEL_TOL: f64 = 1e-3;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    /// Number of scalar partial derivatives compared.
    pub points: usize,
}

impl CheckResult {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error with an absolute floor so that near-zero pairs compare
/// cleanly.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// A set of leaf tensors feeding a forward function under test.
pub struct Harness {
    leaves: Vec<(Shape, Vec<f64>, bool)>,
}

impl Default for Harness {
    fn default() -> Self {
        Self::new()
    }
}

impl Harness {
    pub fn new() -> Self {
        Harness { leaves: Vec::new() }
    }

    /// Leaf whose gradient is verified.
    pub fn leaf(&mut self, shape: Shape, data: Vec<f64>) -> usize {
        self.leaves.push((shape, data, true));
        self.leaves.len() - 1
    }

    /// Leaf treated as a constant (e.g. loss targets).
    pub fn constant(&mut self, shape: Shape, data: Vec<f64>) -> usize {
        self.leaves.push((shape, data, false));
        self.leaves.len() - 1
    }

    fn eval<F>(&self, f: &F, edit: Option<(usize, usize, f64)>) -> Result<f64>
    where
        F: Fn(&mut Graph, &[TensorRef]) -> Result<TensorRef>,
    {
        let mut g = Graph::inference();
        let mut refs = Vec::with_capacity(self.leaves.len());
        for (li, (shape, data, _)) in self.leaves.iter().enumerate() {
            let mut d = data.clone();
            if let Some((l, i, dh)) = edit {
                if l == li {
                    d[i] += dh;
                }
            }
            refs.push(g.leaf(Tensor::from_vec(*shape, d)?));
        }
        let loss = f(&mut g, &refs)?;
        Ok(g.value(loss))
    }

    /// Compare analytic gradients against central differences on every
    /// element of every differentiable leaf (or a random sample of
    /// `sample` elements when given).
    pub fn check<F>(
        &self,
        name: &str,
        f: F,
        h: f64,
        sample: Option<(u64, usize)>,
    ) -> Result<CheckResult>
    where
        F: Fn(&mut Graph, &[TensorRef]) -> Result<TensorRef>,
    {
        // Analytic pass.
        let mut g = Graph::new();
        let mut refs = Vec::with_capacity(self.leaves.len());
        for (shape, data, diff) in &self.leaves {
            let mut t = Tensor::from_vec(*shape, data.clone())?;
            if *diff {
                t = t.requires_grad();
            }
            refs.push(g.leaf(t));
        }
        let loss = f(&mut g, &refs)?;
        g.backward(loss)?;
        let grads: Vec<Option<Vec<f64>>> = refs
            .iter()
            .zip(&self.leaves)
            .map(|(r, (shape, _, diff))| {
                if *diff {
                    Some(
                        g.grad(*r)
                            .map(|s| s.to_vec())
                            .unwrap_or_else(|| vec![0.0; shape.numel()]),
                    )
                } else {
                    None
                }
            })
            .collect();
        drop(g);

        // Candidate (leaf, element) points.
        let mut points = Vec::new();
        for (li, (shape, _, diff)) in self.leaves.iter().enumerate() {
            if *diff {
                for i in 0..shape.numel() {
                    points.push((li, i));
                }
            }
        }
        if let Some((seed, n)) = sample {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = Vec::with_capacity(n.min(points.len()));
            while picked.len() < n.min(points.len()) {
                let p = points[rng.random_range(0..points.len())];
                if !picked.contains(&p) {
                    picked.push(p);
                }
            }
            points = picked;
        }

        let mut max_rel = 0.0f64;
        for &(li, i) in &points {
            let lp = self.eval(&f, Some((li, i, h)))?;
            let lm = self.eval(&f, Some((li, i, -h)))?;
            let fd = (lp - lm) / (2.0 * h);
            let a = grads[li].as_ref().unwrap()[i];
            max_rel = max_rel.max(rel_err(a, fd));
        }
        Ok(CheckResult {
            name: name.to_string(),
            max_rel_err: max_rel,
            points: points.len(),
        })
    }
}

/// Scalarize a tensor as sum(out * r) with fixed pseudo-random weights, so
/// every element contributes to the loss with a distinct coefficient.
pub fn weighted_sum(g: &mut Graph, y: TensorRef, seed: u64) -> Result<TensorRef> {
    let shape = g.shape(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..shape.numel())
        .map(|_| rng.random_range(0.25..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let wr = g.leaf(Tensor::from_vec(shape, w)?);
    let prod = g.mul(y, wr)?;
    Ok(g.sum(prod))
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values bounded away from zero, for ops with a kink at the origin.
fn uniform_nonzero(rng: &mut ChaCha8Rng, n: usize, min_abs: f64, max_abs: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = rng.random_range(min_abs..max_abs);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

/// Pool input where every 2x2 window has a clear winner, so a ±h nudge
/// cannot flip the argmax and break the finite-difference comparison.
fn pool_friendly(rng: &mut ChaCha8Rng, shape: Shape) -> Vec<f64> {
    loop {
        let data = uniform(rng, shape.numel(), -1.0, 1.0);
        let mut ok = true;
        'scan: for p in 0..shape.b * shape.c {
            let base = p * shape.h * shape.w;
            for oy in 0..shape.h / 2 {
                for ox in 0..shape.w / 2 {
                    let i = base + 2 * oy * shape.w + 2 * ox;
                    let mut v = [
                        data[i],
                        data[i + 1],
                        data[i + shape.w],
                        data[i + shape.w + 1],
                    ];
                    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    if v[0] - v[1] < 0.05 {
                        ok = false;
                        break 'scan;
                    }
                }
            }
        }
        if ok {
            return data;
        }
    }
}

/// Check every graph op against central finite differences.
///
/// Returns one result per op; all should sit well below [`OP_TOL`].
pub fn op_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();
    let h = DEFAULT_STEP;

    // conv2d 3x3 with bias
    {
        let xs = Shape::new(2, 3, 6, 5);
        let ws = Shape::new(4, 3, 3, 3);
        let mut hn = Harness::new();
        let x = hn.leaf(xs, uniform(&mut rng, xs.numel(), -1.0, 1.0));
        let w = hn.leaf(ws, uniform(&mut rng, ws.numel(), -0.5, 0.5));
        let b = hn.leaf(Shape::new(1, 4, 1, 1), uniform(&mut rng, 4, -0.5, 0.5));
        results.push(hn.check(
            "conv2d_3x3",
            move |g, r| {
                let y = g.conv2d(r[x], r[w], Some(r[b]), 1)?;
                weighted_sum(g, y, 11)
            },
            h,
            None,
        )?);
    }

    // conv2d 1x1 with bias
    {
        let xs = Shape::new(2, 3, 5, 4);
        let ws = Shape::new(2, 3, 1, 1);
        let mut hn = Harness::new();
        let x = hn.leaf(xs, uniform(&mut rng, xs.numel(), -1.0, 1.0));
        let w = hn.leaf(ws, uniform(&mut rng, ws.numel(), -0.5, 0.5));
        let b = hn.leaf(Shape::new(1, 2, 1, 1), uniform(&mut rng, 2, -0.5, 0.5));
        results.push(hn.check(
            "conv2d_1x1",
            move |g, r| {
                let y = g.conv2d(r[x], r[w], Some(r[b]), 0)?;
                weighted_sum(g, y, 12)
            },
            h,
            None,
        )?);
    }

    // maxpool2
    {
        let xs = Shape::new(2, 2, 6, 4);
        let mut hn = Harness::new();
        let x = hn.leaf(xs, pool_friendly(&mut rng, xs));
        results.push(hn.check(
            "maxpool2",
            move |g, r| {
                let y = g.maxpool2(r[x])?;
                weighted_sum(g, y, 13)
            },
            h,
            None,
        )?);
    }

    // upsample_bilinear2
    {
        let xs = Shape::new(2, 2, 4, 3);
        let mut hn = Harness::new();
        let x = hn.leaf(xs, uniform(&mut rng, xs.numel(), -1.0, 1.0));
        results.push(hn.check(
            "upsample_bilinear2",
            move |g, r| {
                let y = g.upsample_bilinear2(r[x])?;
                weighted_sum(g, y, 14)
            },
            h,
            None,
        )?);
    }

    // batchnorm, training mode
    {
        let xs = Shape::new(2, 3, 4, 4);
        let mut hn = Harness::new();
        let x = hn.leaf(xs, uniform(&mut rng, xs.numel(), -2.0, 2.0));
        let gm = hn.leaf(Shape::new(1, 3, 1, 1), uniform(&mut rng, 3, 0.5, 1.5));
        let bt = hn.leaf(Shape::new(1, 3, 1, 1), uniform(&mut rng, 3, -0.5, 0.5));
        results.push(hn.check(
            "batchnorm_train",
            move |g, r| {
                let (y, _) = g.batchnorm_train(r[x], r[gm], r[bt], 1e-5)?;
                weighted_sum(g, y, 15)
            },
            h,
            None,
        )?);
    }

    // batchnorm, eval mode with frozen stats
    {
        let xs = Shape::new(2, 3, 4, 4);
        let mut hn = Harness::new();
        let x = hn.leaf(xs, uniform(&mut rng, xs.numel(), -2.0, 2.0));
        let gm = hn.leaf(Shape::new(1, 3, 1, 1), uniform(&mut rng, 3, 0.5, 1.5));
        let bt = hn.leaf(Shape::new(1, 3, 1, 1), uniform(&mut rng, 3, -0.5, 0.5));
        let rm = uniform(&mut rng, 3, -0.3, 0.3);
        let rv = uniform(&mut rng, 3, 0.5, 1.5);
        results.push(hn.check(
            "batchnorm_eval",
            move |g, r| {
                let y = g.batchnorm_eval(r[x], r[gm], r[bt], &rm, &rv, 1e-5)?;
                weighted_sum(g, y, 16)
            },
            h,
            None,
        )?);
    }

    // relu, inputs bounded away from the kink at 0
    {
        let xs = Shape::new(2, 3, 4, 4);
        let mut hn = Harness::new();
        let x = hn.leaf(xs, uniform_nonzero(&mut rng, xs.numel(), 0.05, 1.0));
        results.push(hn.check(
            "relu",
            move |g, r| {
                let y = g.relu(r[x]);
                weighted_sum(g, y, 17)
            },
            h,
            None,
        )?);
    }

    // sigmoid
    {
        let xs = Shape::new(2, 3, 4, 4);
        let mut hn = Harness::new();
        let x = hn.leaf(xs, uniform(&mut rng, xs.numel(), -3.0, 3.0));
        results.push(hn.check(
            "sigmoid",
            move |g, r| {
                let y = g.sigmoid(r[x]);
                weighted_sum(g, y, 18)
            },
            h,
            None,
        )?);
    }

    // concat_channels
    {
        let sa = Shape::new(2, 2, 3, 3);
        let sb = Shape::new(2, 3, 3, 3);
        let mut hn = Harness::new();
        let a = hn.leaf(sa, uniform(&mut rng, sa.numel(), -1.0, 1.0));
        let b = hn.leaf(sb, uniform(&mut rng, sb.numel(), -1.0, 1.0));
        results.push(hn.check(
            "concat_channels",
            move |g, r| {
                let y = g.concat_channels(&[r[a], r[b]])?;
                weighted_sum(g, y, 19)
            },
            h,
            None,
        )?);
    }

    // add / mul, with shared-input fan-out exercised via x used twice
    {
        let xs = Shape::new(2, 2, 3, 3);
        let mut hn = Harness::new();
        let a = hn.leaf(xs, uniform(&mut rng, xs.numel(), -1.0, 1.0));
        let b = hn.leaf(xs, uniform(&mut rng, xs.numel(), -1.0, 1.0));
        results.push(hn.check(
            "add",
            move |g, r| {
                let y = g.add(r[a], r[b])?;
                weighted_sum(g, y, 20)
            },
            h,
            None,
        )?);
        let mut hn = Harness::new();
        let a = hn.leaf(xs, uniform(&mut rng, xs.numel(), -1.0, 1.0));
        let b = hn.leaf(xs, uniform(&mut rng, xs.numel(), -1.0, 1.0));
        results.push(hn.check(
            "mul",
            move |g, r| {
                let p = g.mul(r[a], r[b])?;
                let q = g.add(p, r[a])?; // fan-out of a
                weighted_sum(g, q, 21)
            },
            h,
            None,
        )?);
    }

    // sum
    {
        let xs = Shape::new(2, 3, 4, 4);
        let mut hn = Harness::new();
        let x = hn.leaf(xs, uniform(&mut rng, xs.numel(), -1.0, 1.0));
        results.push(hn.check("sum", move |g, r| Ok(g.sum(r[x])), h, None)?);
    }

    // weighted BCE with binary targets and a large positive-class weight
    {
        let xs = Shape::new(2, 1, 4, 4);
        let mut hn = Harness::new();
        let x = hn.leaf(xs, uniform(&mut rng, xs.numel(), -3.0, 3.0));
        let targets: Vec<f64> = (0..xs.numel())
            .map(|_| if rng.random_bool(0.2) { 1.0 } else { 0.0 })
            .collect();
        let t = hn.constant(xs, targets);
        results.push(hn.check(
            "weighted_bce_mean",
            move |g, r| g.weighted_bce_mean(r[x], r[t], 1500.0),
            h,
            None,
        )?);
    }

    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_matches_finite_differences() {
        let results = op_suite(7).unwrap();
        assert_eq!(results.len(), 13);
        for r in &results {
            assert!(
                r.passes(OP_TOL),
                "{} max rel err {:.3e} over {} points",
                r.name,
                r.max_rel_err,
                r.points
            );
        }
    }

    #[test]
    fn rel_err_floor_keeps_tiny_pairs_quiet() {
        assert_eq!(rel_err(0.0, 0.0), 0.0);
        assert!(rel_err(1e-9, 0.0) < 1e-2);
        assert!(rel_err(1.0, 1.0 + 2e-4) > 1e-4);
    }
}
