use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Handle to a tensor stored in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(usize);

/// Per-channel batch statistics produced by a training-mode batchnorm.
///
/// Variance is the biased (population) estimate; the same convention is used
/// for normalization and for the running averages kept by the model layer.
#[derive(Debug, Clone)]
pub struct BnStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

enum Record {
    Conv2d {
        x: TensorRef,
        weight: TensorRef,
        bias: Option<TensorRef>,
        out: TensorRef,
        pad: usize,
    },
    MaxPool2 {
        x: TensorRef,
        out: TensorRef,
        /// Linear index of the winning cell inside its input plane, one per
        /// output cell.
        argmax: Vec<u32>,
    },
    Upsample2 {
        x: TensorRef,
        out: TensorRef,
    },
    BnTrain {
        x: TensorRef,
        gamma: TensorRef,
        beta: TensorRef,
        out: TensorRef,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BnEval {
        x: TensorRef,
        gamma: TensorRef,
        beta: TensorRef,
        out: TensorRef,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu {
        x: TensorRef,
        out: TensorRef,
    },
    Sigmoid {
        x: TensorRef,
        out: TensorRef,
    },
    Concat {
        xs: Vec<TensorRef>,
        out: TensorRef,
    },
    Add {
        a: TensorRef,
        b: TensorRef,
        out: TensorRef,
    },
    Mul {
        a: TensorRef,
        b: TensorRef,
        out: TensorRef,
    },
    Sum {
        x: TensorRef,
        out: TensorRef,
    },
    WeightedBce {
        logits: TensorRef,
        targets: TensorRef,
        out: TensorRef,
        pos_weight: f64,
    },
}

/// Tape-recorded computation over rank-4 tensors.
///
/// Ops execute eagerly; the record of executed ops doubles as the reverse
/// topological order for [`Graph::backward`], which visits each record
/// exactly once. Gradients of tensors consumed several times accumulate by
/// summation. A graph built with [`Graph::inference`] records nothing and
/// only supports forward evaluation.
pub struct Graph {
    nodes: Vec<Tensor>,
    grads: Vec<Option<Vec<f64>>>,
    /// Whether the node lies on a path from a differentiable leaf.
    tracked: Vec<bool>,
    leaf: Vec<bool>,
    records: Vec<Record>,
    recording: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            tracked: Vec::new(),
            leaf: Vec::new(),
            records: Vec::new(),
            recording: true,
        }
    }

    /// Forward-only graph: no tape, no gradients, less memory.
    pub fn inference() -> Self {
        Graph {
            recording: false,
            ..Self::new()
        }
    }

    pub fn leaf(&mut self, t: Tensor) -> TensorRef {
        let tracked = self.recording && t.requires_grad_flag();
        self.push(t, tracked, true)
    }

    fn push(&mut self, t: Tensor, tracked: bool, leaf: bool) -> TensorRef {
        self.nodes.push(t);
        self.grads.push(None);
        self.tracked.push(tracked);
        self.leaf.push(leaf);
        TensorRef(self.nodes.len() - 1)
    }

    fn out(&mut self, shape: Shape, data: Vec<f64>, inputs: &[TensorRef]) -> TensorRef {
        let tracked = self.recording && inputs.iter().any(|r| self.tracked[r.0]);
        let t = Tensor::from_vec(shape, data).expect("op produced wrong-size buffer");
        self.push(t, tracked, false)
    }

    pub fn shape(&self, r: TensorRef) -> Shape {
        self.nodes[r.0].shape()
    }

    pub fn data(&self, r: TensorRef) -> &[f64] {
        self.nodes[r.0].data()
    }

    /// First element; convenient for scalar losses.
    pub fn value(&self, r: TensorRef) -> f64 {
        self.nodes[r.0].data()[0]
    }

    pub fn grad(&self, r: TensorRef) -> Option<&[f64]> {
        self.grads[r.0].as_deref()
    }

    /// Copy a node out of the graph, attaching its gradient if one was
    /// computed.
    pub fn extract(&self, r: TensorRef) -> Tensor {
        let mut t = self.nodes[r.0].clone();
        if let Some(g) = &self.grads[r.0] {
            *t.grad_mut() = g.clone();
        }
        t
    }

    // ---------------------------------------------------------------- conv2d

    /// 2D cross-correlation with zero padding `pad = (k-1)/2`, stride 1.
    ///
    /// `x` is `[B,M,H,W]`, `weight` `[N,M,kh,kw]` with `kh,kw` in {1,3},
    /// `bias` (shape `[1,N,1,1]`) is added per output channel. Spatial
    /// dimensions are preserved.
    pub fn conv2d(
        &mut self,
        x: TensorRef,
        weight: TensorRef,
        bias: Option<TensorRef>,
        pad: usize,
    ) -> Result<TensorRef> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        let (kh, kw) = (ws.h, ws.w);
        if !(kh == 1 || kh == 3) || !(kw == 1 || kw == 3) {
            return Err(Error::Shape(format!(
                "conv2d kernel must be 1x1 or 3x3, got {kh}x{kw}"
            )));
        }
        if pad != (kh - 1) / 2 || pad != (kw - 1) / 2 {
            return Err(Error::Shape(format!(
                "conv2d pad {pad} does not preserve spatial dims for a {kh}x{kw} kernel"
            )));
        }
        if ws.c != xs.c {
            return Err(Error::Shape(format!(
                "conv2d input has {} channels but weight expects {}",
                xs.c, ws.c
            )));
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if (bs.b, bs.c, bs.h, bs.w) != (1, ws.b, 1, 1) {
                return Err(Error::Shape(format!(
                    "conv2d bias shape {bs} does not match [1,{},1,1]",
                    ws.b
                )));
            }
        }

        let os = Shape::new(xs.b, ws.b, xs.h, xs.w);
        let mut out = vec![0.0; os.numel()];
        conv2d_forward(
            self.data(x),
            xs,
            self.data(weight),
            ws,
            bias.map(|b| self.data(b)),
            pad,
            &mut out,
        );

        let mut inputs = vec![x, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        let o = self.out(os, out, &inputs);
        if self.tracked[o.0] {
            self.records.push(Record::Conv2d {
                x,
                weight,
                bias,
                out: o,
                pad,
            });
        }
        Ok(o)
    }

    // -------------------------------------------------------------- maxpool2

    /// 2x2 max pooling with stride 2; halves H and W.
    pub fn maxpool2(&mut self, x: TensorRef) -> Result<TensorRef> {
        let xs = self.shape(x);
        if xs.h % 2 != 0 || xs.w % 2 != 0 {
            return Err(Error::Shape(format!(
                "maxpool2 needs even spatial dims, got {}x{}",
                xs.h, xs.w
            )));
        }
        let os = Shape::new(xs.b, xs.c, xs.h / 2, xs.w / 2);
        let mut out = vec![0.0; os.numel()];
        let mut argmax = vec![0u32; os.numel()];
        {
            let xd = self.data(x);
            let (h, w) = (xs.h, xs.w);
            let (oh, ow) = (os.h, os.w);
            for p in 0..xs.b * xs.c {
                let xp = &xd[p * h * w..(p + 1) * h * w];
                let op = p * oh * ow;
                for oy in 0..oh {
                    let r0 = 2 * oy * w;
                    let r1 = r0 + w;
                    for ox in 0..ow {
                        let i00 = r0 + 2 * ox;
                        let i01 = i00 + 1;
                        let i10 = r1 + 2 * ox;
                        let i11 = i10 + 1;
                        let mut best = i00;
                        if xp[i01] > xp[best] {
                            best = i01;
                        }
                        if xp[i10] > xp[best] {
                            best = i10;
                        }
                        if xp[i11] > xp[best] {
                            best = i11;
                        }
                        out[op + oy * ow + ox] = xp[best];
                        argmax[op + oy * ow + ox] = best as u32;
                    }
                }
            }
        }
        let o = self.out(os, out, &[x]);
        if self.tracked[o.0] {
            self.records.push(Record::MaxPool2 { x, out: o, argmax });
        }
        Ok(o)
    }

    // ------------------------------------------------------------- upsample

    /// Bilinear upsampling by a factor of two with half-pixel-center
    /// coordinate mapping and edge clamping.
    pub fn upsample_bilinear2(&mut self, x: TensorRef) -> Result<TensorRef> {
        let xs = self.shape(x);
        let os = Shape::new(xs.b, xs.c, 2 * xs.h, 2 * xs.w);
        let ymap = upsample_axis_map(xs.h);
        let xmap = upsample_axis_map(xs.w);
        let mut out = vec![0.0; os.numel()];
        {
            let xd = self.data(x);
            let (h, w) = (xs.h, xs.w);
            let (oh, ow) = (os.h, os.w);
            for p in 0..xs.b * xs.c {
                let xp = &xd[p * h * w..(p + 1) * h * w];
                let op = &mut out[p * oh * ow..(p + 1) * oh * ow];
                for oy in 0..oh {
                    let (y0, y1, fy) = ymap[oy];
                    let row0 = &xp[y0 * w..y0 * w + w];
                    let row1 = &xp[y1 * w..y1 * w + w];
                    let orow = &mut op[oy * ow..oy * ow + ow];
                    for ox in 0..ow {
                        let (x0, x1, fx) = xmap[ox];
                        let top = row0[x0] * (1.0 - fx) + row0[x1] * fx;
                        let bot = row1[x0] * (1.0 - fx) + row1[x1] * fx;
                        orow[ox] = top * (1.0 - fy) + bot * fy;
                    }
                }
            }
        }
        let o = self.out(os, out, &[x]);
        if self.tracked[o.0] {
            self.records.push(Record::Upsample2 { x, out: o });
        }
        Ok(o)
    }

    // ------------------------------------------------------------ batchnorm

    /// Training-mode batch normalization over `(B,H,W)` per channel.
    ///
    /// Returns the normalized output and the batch statistics so the caller
    /// can maintain running averages. `gamma` and `beta` have shape
    /// `[1,C,1,1]`.
    pub fn batchnorm_train(
        &mut self,
        x: TensorRef,
        gamma: TensorRef,
        beta: TensorRef,
        eps: f64,
    ) -> Result<(TensorRef, BnStats)> {
        let xs = self.shape(x);
        self.check_bn_affine(xs.c, gamma, beta)?;
        let m = xs.b * xs.h * xs.w;
        if m < 2 {
            return Err(Error::Shape(format!(
                "batchnorm training mode needs at least 2 values per channel, got {m}"
            )));
        }

        let hw = xs.h * xs.w;
        let mut mean = vec![0.0; xs.c];
        let mut var = vec![0.0; xs.c];
        let mut out = vec![0.0; xs.numel()];
        {
            let xd = self.data(x);
            for c in 0..xs.c {
                let mut s = 0.0;
                for b in 0..xs.b {
                    let plane = &xd[xs.plane(b, c)..xs.plane(b, c) + hw];
                    for &v in plane {
                        s += v;
                    }
                }
                let mu = s / m as f64;
                let mut sq = 0.0;
                for b in 0..xs.b {
                    let plane = &xd[xs.plane(b, c)..xs.plane(b, c) + hw];
                    for &v in plane {
                        let d = v - mu;
                        sq += d * d;
                    }
                }
                mean[c] = mu;
                var[c] = sq / m as f64;
            }
            let gd = self.data(gamma);
            let bd = self.data(beta);
            for c in 0..xs.c {
                let inv = 1.0 / (var[c] + eps).sqrt();
                let (g, bet, mu) = (gd[c], bd[c], mean[c]);
                for b in 0..xs.b {
                    let base = xs.plane(b, c);
                    for i in 0..hw {
                        out[base + i] = (xd[base + i] - mu) * inv * g + bet;
                    }
                }
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let o = self.out(xs, out, &[x, gamma, beta]);
        if self.tracked[o.0] {
            self.records.push(Record::BnTrain {
                x,
                gamma,
                beta,
                out: o,
                mean: mean.clone(),
                inv_std,
            });
        }
        Ok((o, BnStats { mean, var }))
    }

    /// Inference-mode batch normalization using frozen running statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: TensorRef,
        gamma: TensorRef,
        beta: TensorRef,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<TensorRef> {
        let xs = self.shape(x);
        self.check_bn_affine(xs.c, gamma, beta)?;
        if running_mean.len() != xs.c || running_var.len() != xs.c {
            return Err(Error::Shape(format!(
                "batchnorm running stats have {} channels, input has {}",
                running_mean.len(),
                xs.c
            )));
        }
        let inv_std: Vec<f64> = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let hw = xs.h * xs.w;
        let mut out = vec![0.0; xs.numel()];
        {
            let xd = self.data(x);
            let gd = self.data(gamma);
            let bd = self.data(beta);
            for b in 0..xs.b {
                for c in 0..xs.c {
                    let base = xs.plane(b, c);
                    let (g, bet, mu, inv) = (gd[c], bd[c], running_mean[c], inv_std[c]);
                    for i in 0..hw {
                        out[base + i] = (xd[base + i] - mu) * inv * g + bet;
                    }
                }
            }
        }
        let o = self.out(xs, out, &[x, gamma, beta]);
        if self.tracked[o.0] {
            self.records.push(Record::BnEval {
                x,
                gamma,
                beta,
                out: o,
                mean: running_mean.to_vec(),
                inv_std,
            });
        }
        Ok(o)
    }

    fn check_bn_affine(&self, c: usize, gamma: TensorRef, beta: TensorRef) -> Result<()> {
        for (name, r) in [("gamma", gamma), ("beta", beta)] {
            let s = self.shape(r);
            if (s.b, s.c, s.h, s.w) != (1, c, 1, 1) {
                return Err(Error::Shape(format!(
                    "batchnorm {name} shape {s} does not match [1,{c},1,1]"
                )));
            }
        }
        Ok(())
    }

    // ------------------------------------------------------------ pointwise

    /// Elementwise max(x, 0); the subgradient at 0 is taken as 0.
    pub fn relu(&mut self, x: TensorRef) -> TensorRef {
        let xs = self.shape(x);
        let out: Vec<f64> = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        let o = self.out(xs, out, &[x]);
        if self.tracked[o.0] {
            self.records.push(Record::Relu { x, out: o });
        }
        o
    }

    /// Elementwise logistic function, evaluated in overflow-safe form.
    pub fn sigmoid(&mut self, x: TensorRef) -> TensorRef {
        let xs = self.shape(x);
        let out: Vec<f64> = self.data(x).iter().map(|&v| sigmoid(v)).collect();
        let o = self.out(xs, out, &[x]);
        if self.tracked[o.0] {
            self.records.push(Record::Sigmoid { x, out: o });
        }
        o
    }

    // --------------------------------------------------------------- concat

    /// Concatenate along the channel axis; order follows the argument order.
    pub fn concat_channels(&mut self, xs: &[TensorRef]) -> Result<TensorRef> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let fs = self.shape(*first);
        let mut c_total = 0;
        for r in xs {
            let s = self.shape(*r);
            if (s.b, s.h, s.w) != (fs.b, fs.h, fs.w) {
                return Err(Error::Shape(format!(
                    "concat input {s} does not match batch/spatial dims of {fs}"
                )));
            }
            c_total += s.c;
        }
        let os = Shape::new(fs.b, c_total, fs.h, fs.w);
        let hw = fs.h * fs.w;
        let mut out = vec![0.0; os.numel()];
        for b in 0..fs.b {
            let mut c_off = 0;
            for r in xs {
                let s = self.shape(*r);
                let src = &self.data(*r)[s.plane(b, 0)..s.plane(b, 0) + s.c * hw];
                let dst_base = os.plane(b, c_off);
                out[dst_base..dst_base + s.c * hw].copy_from_slice(src);
                c_off += s.c;
            }
        }
        let o = self.out(os, out, xs);
        if self.tracked[o.0] {
            self.records.push(Record::Concat {
                xs: xs.to_vec(),
                out: o,
            });
        }
        Ok(o)
    }

    // ----------------------------------------------------------- elementwise

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("add of {sa} and {sb}")));
        }
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let o = self.out(sa, out, &[a, b]);
        if self.tracked[o.0] {
            self.records.push(Record::Add { a, b, out: o });
        }
        Ok(o)
    }

    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("mul of {sa} and {sb}")));
        }
        let out: Vec<f64> = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let o = self.out(sa, out, &[a, b]);
        if self.tracked[o.0] {
            self.records.push(Record::Mul { a, b, out: o });
        }
        Ok(o)
    }

    /// Full reduction to a `[1,1,1,1]` scalar.
    pub fn sum(&mut self, x: TensorRef) -> TensorRef {
        let s: f64 = self.data(x).iter().sum();
        let o = self.out(Shape::new(1, 1, 1, 1), vec![s], &[x]);
        if self.tracked[o.0] {
            self.records.push(Record::Sum { x, out: o });
        }
        o
    }

    // ------------------------------------------------------------------ loss

    /// Weighted binary cross entropy from logits, mean-reduced over every
    /// element: `mean(p*y*softplus(-x) + (1-y)*softplus(x))`.
    ///
    /// The softplus form never materializes `log(0)`, so the loss and its
    /// gradient stay finite for arbitrarily large |x|. Targets must be
    /// exactly 0 or 1.
    pub fn weighted_bce_mean(
        &mut self,
        logits: TensorRef,
        targets: TensorRef,
        pos_weight: f64,
    ) -> Result<TensorRef> {
        let (sl, st) = (self.shape(logits), self.shape(targets));
        if sl != st {
            return Err(Error::Shape(format!(
                "loss logits {sl} and targets {st} differ"
            )));
        }
        if !(pos_weight > 0.0) {
            return Err(Error::Data(format!(
                "positive-class weight must be > 0, got {pos_weight}"
            )));
        }
        let mut acc = 0.0;
        for (&x, &y) in self.data(logits).iter().zip(self.data(targets)) {
            if y != 0.0 && y != 1.0 {
                return Err(Error::Data(format!(
                    "loss target {y} is outside {{0,1}}"
                )));
            }
            acc += pos_weight * y * softplus(-x) + (1.0 - y) * softplus(x);
        }
        let n = sl.numel() as f64;
        let o = self.out(Shape::new(1, 1, 1, 1), vec![acc / n], &[logits, targets]);
        if self.tracked[o.0] {
            self.records.push(Record::WeightedBce {
                logits,
                targets,
                out: o,
                pos_weight,
            });
        }
        Ok(o)
    }

    // -------------------------------------------------------------- backward

    /// Reverse-mode sweep from a scalar loss; fills the gradient of every
    /// reachable leaf that was inserted with `requires_grad`.
    pub fn backward(&mut self, loss: TensorRef) -> Result<()> {
        if !self.recording {
            return Err(Error::Numeric(
                "backward called on an inference-only graph".into(),
            ));
        }
        if self.shape(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward requires a scalar loss, got {}",
                self.shape(loss)
            )));
        }
        self.grads[loss.0] = Some(vec![1.0]);

        let records = std::mem::take(&mut self.records);
        for rec in records.iter().rev() {
            self.step_backward(rec);
        }
        self.records = records;
        Ok(())
    }

    fn wants_grad(&self, r: TensorRef) -> bool {
        self.tracked[r.0]
    }

    fn grad_buf(&mut self, r: TensorRef) -> &mut Vec<f64> {
        let n = self.nodes[r.0].shape().numel();
        self.grads[r.0].get_or_insert_with(|| vec![0.0; n])
    }

    fn step_backward(&mut self, rec: &Record) {
        match rec {
            Record::Conv2d {
                x,
                weight,
                bias,
                out,
                pad,
            } => {
                let Some(gy) = self.grads[out.0].take() else {
                    return;
                };
                let xs = self.shape(*x);
                let ws = self.shape(*weight);
                if self.wants_grad(*x) {
                    let mut gx = std::mem::take(self.grad_buf(*x));
                    conv2d_backward_input(&gy, self.data(*weight), ws, xs, *pad, &mut gx);
                    self.grads[x.0] = Some(gx);
                }
                if self.wants_grad(*weight) {
                    let mut gw = std::mem::take(self.grad_buf(*weight));
                    conv2d_backward_weight(&gy, self.data(*x), xs, ws, *pad, &mut gw);
                    self.grads[weight.0] = Some(gw);
                }
                if let Some(b) = bias {
                    if self.wants_grad(*b) {
                        let hw = xs.h * xs.w;
                        let gb = self.grad_buf(*b);
                        for bi in 0..xs.b {
                            for n in 0..ws.b {
                                let base = (bi * ws.b + n) * hw;
                                let mut s = 0.0;
                                for &g in &gy[base..base + hw] {
                                    s += g;
                                }
                                gb[n] += s;
                            }
                        }
                    }
                }
            }
            Record::MaxPool2 { x, out, argmax } => {
                let Some(gy) = self.grads[out.0].take() else {
                    return;
                };
                if !self.wants_grad(*x) {
                    return;
                }
                let xs = self.shape(*x);
                let os = self.shape(*out);
                let hw = xs.h * xs.w;
                let ohw = os.h * os.w;
                let gx = self.grad_buf(*x);
                for p in 0..xs.b * xs.c {
                    let src = &gy[p * ohw..(p + 1) * ohw];
                    let am = &argmax[p * ohw..(p + 1) * ohw];
                    let dst = &mut gx[p * hw..(p + 1) * hw];
                    for (g, &i) in src.iter().zip(am) {
                        dst[i as usize] += g;
                    }
                }
            }
            Record::Upsample2 { x, out } => {
                let Some(gy) = self.grads[out.0].take() else {
                    return;
                };
                if !self.wants_grad(*x) {
                    return;
                }
                let xs = self.shape(*x);
                let os = self.shape(*out);
                let ymap = upsample_axis_map(xs.h);
                let xmap = upsample_axis_map(xs.w);
                let (h, w) = (xs.h, xs.w);
                let (oh, ow) = (os.h, os.w);
                let gx = self.grad_buf(*x);
                for p in 0..xs.b * xs.c {
                    let src = &gy[p * oh * ow..(p + 1) * oh * ow];
                    let dst = &mut gx[p * h * w..(p + 1) * h * w];
                    for oy in 0..oh {
                        let (y0, y1, fy) = ymap[oy];
                        for ox in 0..ow {
                            let (x0, x1, fx) = xmap[ox];
                            let g = src[oy * ow + ox];
                            dst[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                            dst[y0 * w + x1] += g * (1.0 - fy) * fx;
                            dst[y1 * w + x0] += g * fy * (1.0 - fx);
                            dst[y1 * w + x1] += g * fy * fx;
                        }
                    }
                }
            }
            Record::BnTrain {
                x,
                gamma,
                beta,
                out,
                mean,
                inv_std,
            } => {
                let Some(gy) = self.grads[out.0].take() else {
                    return;
                };
                let xs = self.shape(*x);
                let hw = xs.h * xs.w;
                let m = (xs.b * hw) as f64;
                let gd = self.data(*gamma).to_vec();
                let xd_needed = self.wants_grad(*x) || self.wants_grad(*gamma);

                // Per channel: sum(g), sum(g * xhat), then the standard
                // batch-stat backward for x.
                for c in 0..xs.c {
                    let (mu, inv) = (mean[c], inv_std[c]);
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    if xd_needed || self.wants_grad(*beta) {
                        let xd = self.data(*x);
                        for b in 0..xs.b {
                            let base = xs.plane(b, c);
                            for i in 0..hw {
                                let g = gy[base + i];
                                sum_g += g;
                                sum_gx += g * (xd[base + i] - mu) * inv;
                            }
                        }
                    }
                    if self.wants_grad(*gamma) {
                        self.grad_buf(*gamma)[c] += sum_gx;
                    }
                    if self.wants_grad(*beta) {
                        self.grad_buf(*beta)[c] += sum_g;
                    }
                    if self.wants_grad(*x) {
                        let xd = self.nodes[x.0].data();
                        let scale = gd[c] * inv;
                        let mean_g = sum_g / m;
                        let mean_gx = sum_gx / m;
                        let mut gx = std::mem::take(&mut self.grads[x.0])
                            .unwrap_or_else(|| vec![0.0; xs.numel()]);
                        for b in 0..xs.b {
                            let base = xs.plane(b, c);
                            for i in 0..hw {
                                let xhat = (xd[base + i] - mu) * inv;
                                gx[base + i] +=
                                    scale * (gy[base + i] - mean_g - xhat * mean_gx);
                            }
                        }
                        self.grads[x.0] = Some(gx);
                    }
                }
            }
            Record::BnEval {
                x,
                gamma,
                beta,
                out,
                mean,
                inv_std,
            } => {
                let Some(gy) = self.grads[out.0].take() else {
                    return;
                };
                let xs = self.shape(*x);
                let hw = xs.h * xs.w;
                let gd = self.data(*gamma).to_vec();
                for c in 0..xs.c {
                    let (mu, inv) = (mean[c], inv_std[c]);
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    {
                        let xd = self.data(*x);
                        for b in 0..xs.b {
                            let base = xs.plane(b, c);
                            for i in 0..hw {
                                let g = gy[base + i];
                                sum_g += g;
                                sum_gx += g * (xd[base + i] - mu) * inv;
                            }
                        }
                    }
                    if self.wants_grad(*gamma) {
                        self.grad_buf(*gamma)[c] += sum_gx;
                    }
                    if self.wants_grad(*beta) {
                        self.grad_buf(*beta)[c] += sum_g;
                    }
                    if self.wants_grad(*x) {
                        let scale = gd[c] * inv;
                        let mut gx = std::mem::take(&mut self.grads[x.0])
                            .unwrap_or_else(|| vec![0.0; xs.numel()]);
                        for b in 0..xs.b {
                            let base = xs.plane(b, c);
                            for i in 0..hw {
                                gx[base + i] += scale * gy[base + i];
                            }
                        }
                        self.grads[x.0] = Some(gx);
                    }
                }
            }
            Record::Relu { x, out } => {
                let Some(gy) = self.grads[out.0].take() else {
                    return;
                };
                if !self.wants_grad(*x) {
                    return;
                }
                let xd = self.nodes[x.0].data().to_vec();
                let gx = self.grad_buf(*x);
                for ((g, &v), go) in gx.iter_mut().zip(&xd).zip(&gy) {
                    if v > 0.0 {
                        *g += go;
                    }
                }
            }
            Record::Sigmoid { x, out } => {
                let Some(gy) = self.grads[out.0].take() else {
                    return;
                };
                if !self.wants_grad(*x) {
                    return;
                }
                let yd = self.nodes[out.0].data().to_vec();
                let gx = self.grad_buf(*x);
                for ((g, &y), go) in gx.iter_mut().zip(&yd).zip(&gy) {
                    *g += go * y * (1.0 - y);
                }
            }
            Record::Concat { xs, out } => {
                let Some(gy) = self.grads[out.0].take() else {
                    return;
                };
                let os = self.shape(*out);
                let hw = os.h * os.w;
                for b in 0..os.b {
                    let mut c_off = 0;
                    for r in xs {
                        let s = self.shape(*r);
                        let src_base = os.plane(b, c_off);
                        if self.wants_grad(*r) {
                            let dst_base = s.plane(b, 0);
                            let gx = self.grad_buf(*r);
                            for i in 0..s.c * hw {
                                gx[dst_base + i] += gy[src_base + i];
                            }
                        }
                        c_off += s.c;
                    }
                }
            }
            Record::Add { a, b, out } => {
                let Some(gy) = self.grads[out.0].take() else {
                    return;
                };
                for r in [a, b] {
                    if self.wants_grad(*r) {
                        let g = self.grad_buf(*r);
                        for (gi, go) in g.iter_mut().zip(&gy) {
                            *gi += go;
                        }
                    }
                }
            }
            Record::Mul { a, b, out } => {
                let Some(gy) = self.grads[out.0].take() else {
                    return;
                };
                if self.wants_grad(*a) {
                    let bd = self.nodes[b.0].data().to_vec();
                    let ga = self.grad_buf(*a);
                    for ((g, &v), go) in ga.iter_mut().zip(&bd).zip(&gy) {
                        *g += go * v;
                    }
                }
                if self.wants_grad(*b) {
                    let ad = self.nodes[a.0].data().to_vec();
                    let gb = self.grad_buf(*b);
                    for ((g, &v), go) in gb.iter_mut().zip(&ad).zip(&gy) {
                        *g += go * v;
                    }
                }
            }
            Record::Sum { x, out } => {
                let Some(gy) = self.grads[out.0].take() else {
                    return;
                };
                if !self.wants_grad(*x) {
                    return;
                }
                let g0 = gy[0];
                let gx = self.grad_buf(*x);
                for g in gx.iter_mut() {
                    *g += g0;
                }
            }
            Record::WeightedBce {
                logits,
                targets,
                out,
                pos_weight,
            } => {
                let Some(gy) = self.grads[out.0].take() else {
                    return;
                };
                if !self.wants_grad(*logits) {
                    return;
                }
                let n = self.shape(*logits).numel() as f64;
                let scale = gy[0] / n;
                let p = *pos_weight;
                let xd = self.nodes[logits.0].data().to_vec();
                let td = self.nodes[targets.0].data().to_vec();
                let gx = self.grad_buf(*logits);
                for ((g, (&x, &y)), _) in gx.iter_mut().zip(xd.iter().zip(&td)).zip(0..) {
                    let s = sigmoid(x);
                    *g += scale * (p * y * (s - 1.0) + (1.0 - y) * s);
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^t) without overflow.
#[inline]
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Output coordinate -> (lo index, hi index, hi weight) for 2x upsampling
/// with half-pixel centers, clamped at the edges.
fn upsample_axis_map(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let s = (o as f64 + 0.5) / 2.0 - 0.5;
            let i0 = s.floor();
            let f = s - i0;
            let lo = (i0.max(0.0) as usize).min(n - 1);
            let hi = ((i0 + 1.0).max(0.0) as usize).min(n - 1);
            (lo, hi, f)
        })
        .collect()
}

/// Copy an HxW plane into a zero-filled (H+2)x(W+2) buffer. The padded form
/// lets the 3x3 kernels run branch-free over full rows.
fn pad_plane(src: &[f64], h: usize, w: usize, dst: &mut [f64]) {
    let pw = w + 2;
    dst[..pw].iter_mut().for_each(|v| *v = 0.0);
    dst[(h + 1) * pw..].iter_mut().for_each(|v| *v = 0.0);
    for y in 0..h {
        let d = &mut dst[(y + 1) * pw..(y + 2) * pw];
        d[0] = 0.0;
        d[w + 1] = 0.0;
        d[1..w + 1].copy_from_slice(&src[y * w..(y + 1) * w]);
    }
}

/// One output row of a 3x3 correlation: all nine taps fused per element so
/// each accumulator round-trip carries nine FMAs.
#[inline]
fn row_fma9(acc: &mut [f64], r0: &[f64], r1: &[f64], r2: &[f64], k: &[f64]) {
    let n = acc.len();
    let a0 = &r0[..n + 2];
    let a1 = &r1[..n + 2];
    let a2 = &r2[..n + 2];
    for j in 0..n {
        acc[j] += k[0] * a0[j]
            + k[1] * a0[j + 1]
            + k[2] * a0[j + 2]
            + k[3] * a1[j]
            + k[4] * a1[j + 1]
            + k[5] * a1[j + 2]
            + k[6] * a2[j]
            + k[7] * a2[j + 1]
            + k[8] * a2[j + 2];
    }
}

/// Nine shifted dot products of one gradient row against three padded input
/// rows; accumulates into the 3x3 weight-gradient tile.
#[inline]
fn row_dot9(g: &[f64], r0: &[f64], r1: &[f64], r2: &[f64], out: &mut [f64]) {
    let n = g.len();
    let a0 = &r0[..n + 2];
    let a1 = &r1[..n + 2];
    let a2 = &r2[..n + 2];
    let mut s = [0.0f64; 9];
    for j in 0..n {
        let gv = g[j];
        s[0] += gv * a0[j];
        s[1] += gv * a0[j + 1];
        s[2] += gv * a0[j + 2];
        s[3] += gv * a1[j];
        s[4] += gv * a1[j + 1];
        s[5] += gv * a1[j + 2];
        s[6] += gv * a2[j];
        s[7] += gv * a2[j + 1];
        s[8] += gv * a2[j + 2];
    }
    for (o, v) in out.iter_mut().zip(s) {
        *o += v;
    }
}

fn conv2d_forward(
    x: &[f64],
    xs: Shape,
    w: &[f64],
    ws: Shape,
    bias: Option<&[f64]>,
    pad: usize,
    out: &mut [f64],
) {
    let (h, wd) = (xs.h, xs.w);
    let hw = h * wd;
    if ws.h == 1 {
        // 1x1: per-channel scaled accumulation
        for b in 0..xs.b {
            for n in 0..ws.b {
                let obase = (b * ws.b + n) * hw;
                let b0 = bias.map_or(0.0, |bv| bv[n]);
                out[obase..obase + hw].iter_mut().for_each(|v| *v = b0);
                for m in 0..xs.c {
                    let wv = w[n * xs.c + m];
                    let xp = &x[xs.plane(b, m)..xs.plane(b, m) + hw];
                    let op = &mut out[obase..obase + hw];
                    for (o, xv) in op.iter_mut().zip(xp) {
                        *o += wv * xv;
                    }
                }
            }
        }
        return;
    }
    debug_assert_eq!(pad, 1);
    let pw = wd + 2;
    let mut padded = vec![0.0; (h + 2) * pw];
    let mut acc = vec![0.0; hw];
    for b in 0..xs.b {
        for n in 0..ws.b {
            let b0 = bias.map_or(0.0, |bv| bv[n]);
            acc.iter_mut().for_each(|a| *a = b0);
            for m in 0..xs.c {
                pad_plane(&x[xs.plane(b, m)..xs.plane(b, m) + hw], h, wd, &mut padded);
                let kw9 = &w[ws.plane(n, m)..ws.plane(n, m) + 9];
                for oy in 0..h {
                    let r0 = &padded[oy * pw..];
                    let r1 = &padded[(oy + 1) * pw..];
                    let r2 = &padded[(oy + 2) * pw..];
                    row_fma9(&mut acc[oy * wd..(oy + 1) * wd], r0, r1, r2, kw9);
                }
            }
            let obase = (b * ws.b + n) * hw;
            out[obase..obase + hw].copy_from_slice(&acc);
        }
    }
}

fn conv2d_backward_input(
    gy: &[f64],
    w: &[f64],
    ws: Shape,
    xs: Shape,
    _pad: usize,
    gx: &mut [f64],
) {
    let (h, wd) = (xs.h, xs.w);
    let hw = h * wd;
    if ws.h == 1 {
        for b in 0..xs.b {
            for m in 0..xs.c {
                let base = xs.plane(b, m);
                for n in 0..ws.b {
                    let wv = w[n * xs.c + m];
                    let gp = &gy[(b * ws.b + n) * hw..(b * ws.b + n + 1) * hw];
                    let dst = &mut gx[base..base + hw];
                    for (d, g) in dst.iter_mut().zip(gp) {
                        *d += wv * g;
                    }
                }
            }
        }
        return;
    }
    // correlation adjoint: convolve the output gradient with the 180-degree
    // rotated kernel
    let pw = wd + 2;
    let mut padded = vec![0.0; (h + 2) * pw];
    let mut acc = vec![0.0; hw];
    let mut kflip = [0.0f64; 9];
    for b in 0..xs.b {
        for m in 0..xs.c {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for n in 0..ws.b {
                let gbase = (b * ws.b + n) * hw;
                pad_plane(&gy[gbase..gbase + hw], h, wd, &mut padded);
                let kw9 = &w[ws.plane(n, m)..ws.plane(n, m) + 9];
                for (i, v) in kw9.iter().rev().enumerate() {
                    kflip[i] = *v;
                }
                for oy in 0..h {
                    let r0 = &padded[oy * pw..];
                    let r1 = &padded[(oy + 1) * pw..];
                    let r2 = &padded[(oy + 2) * pw..];
                    row_fma9(&mut acc[oy * wd..(oy + 1) * wd], r0, r1, r2, &kflip);
                }
            }
            let base = xs.plane(b, m);
            for (g, a) in gx[base..base + hw].iter_mut().zip(&acc) {
                *g += a;
            }
        }
    }
}

fn conv2d_backward_weight(
    gy: &[f64],
    x: &[f64],
    xs: Shape,
    ws: Shape,
    _pad: usize,
    gw: &mut [f64],
) {
    let (h, wd) = (xs.h, xs.w);
    let hw = h * wd;
    if ws.h == 1 {
        for n in 0..ws.b {
            for m in 0..xs.c {
                let mut s = 0.0;
                for b in 0..xs.b {
                    let gp = &gy[(b * ws.b + n) * hw..(b * ws.b + n + 1) * hw];
                    let xp = &x[xs.plane(b, m)..xs.plane(b, m) + hw];
                    for (g, v) in gp.iter().zip(xp) {
                        s += g * v;
                    }
                }
                gw[n * xs.c + m] += s;
            }
        }
        return;
    }
    let pw = wd + 2;
    let mut padded = vec![0.0; (h + 2) * pw];
    for b in 0..xs.b {
        for m in 0..xs.c {
            pad_plane(&x[xs.plane(b, m)..xs.plane(b, m) + hw], h, wd, &mut padded);
            for n in 0..ws.b {
                let gp = &gy[(b * ws.b + n) * hw..(b * ws.b + n + 1) * hw];
                let tile = &mut gw[ws.plane(n, m)..ws.plane(n, m) + 9];
                for oy in 0..h {
                    let r0 = &padded[oy * pw..];
                    let r1 = &padded[(oy + 1) * pw..];
                    let r2 = &padded[(oy + 2) * pw..];
                    row_dot9(&gp[oy * wd..(oy + 1) * wd], r0, r1, r2, tile);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph, shape: Shape, data: Vec<f64>) -> TensorRef {
        g.leaf(Tensor::from_vec(shape, data).unwrap().requires_grad())
    }

    #[test]
    fn conv_identity_1x1() {
        // identity matrix over channels, zero bias -> output equals input
        let mut g = Graph::new();
        let xs = Shape::new(1, 2, 3, 3);
        let data: Vec<f64> = (0..xs.numel()).map(|i| i as f64 * 0.37 - 2.0).collect();
        let x = leaf(&mut g, xs, data.clone());
        let w = leaf(
            &mut g,
            Shape::new(2, 2, 1, 1),
            vec![1.0, 0.0, 0.0, 1.0],
        );
        let b = leaf(&mut g, Shape::new(1, 2, 1, 1), vec![0.0, 0.0]);
        let y = g.conv2d(x, w, Some(b), 0).unwrap();
        assert_eq!(g.data(y), data.as_slice());
    }

    #[test]
    fn conv_all_ones_kernel_counts_neighbors() {
        // constant-1 input, single 3x3 all-ones kernel with zero padding:
        // center sees 9 neighbors, a corner only 4
        let mut g = Graph::new();
        let x = leaf(&mut g, Shape::new(1, 1, 5, 5), vec![1.0; 25]);
        let w = leaf(&mut g, Shape::new(1, 1, 3, 3), vec![1.0; 9]);
        let y = g.conv2d(x, w, None, 1).unwrap();
        let d = g.data(y);
        assert_eq!(d[2 * 5 + 2], 9.0);
        assert_eq!(d[0], 4.0);
        assert_eq!(d[4], 4.0);
        assert_eq!(d[1], 6.0);
    }

    #[test]
    fn conv_channel_mismatch_rejected() {
        let mut g = Graph::new();
        let x = leaf(&mut g, Shape::new(1, 3, 4, 4), vec![0.0; 48]);
        let w = leaf(&mut g, Shape::new(2, 2, 1, 1), vec![0.0; 4]);
        assert!(matches!(g.conv2d(x, w, None, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_shape_16_of_48() {
        // 48 input channels reduced by 16 1x1 kernels, spatial dims kept
        let mut g = Graph::new();
        let xs = Shape::new(1, 48, 10, 9);
        let x = leaf(&mut g, xs, vec![0.5; xs.numel()]);
        let ws = Shape::new(16, 48, 1, 1);
        let w = leaf(&mut g, ws, vec![0.01; ws.numel()]);
        let y = g.conv2d(x, w, None, 0).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 16, 10, 9));
    }

    #[test]
    fn maxpool_block() {
        let mut g = Graph::new();
        let x = leaf(&mut g, Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]);
        let y = g.maxpool2(x).unwrap();
        assert_eq!(g.data(y), &[4.0]);
    }

    #[test]
    fn maxpool_halves_dims() {
        let mut g = Graph::new();
        let xs = Shape::new(2, 16, 16, 12);
        let x = leaf(&mut g, xs, vec![0.0; xs.numel()]);
        let y = g.maxpool2(x).unwrap();
        assert_eq!(g.shape(y), Shape::new(2, 16, 8, 6));
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        let mut g = Graph::new();
        let x = leaf(&mut g, Shape::new(1, 1, 3, 4), vec![0.0; 12]);
        assert!(matches!(g.maxpool2(x), Err(Error::Shape(_))));
    }

    #[test]
    fn maxpool_gradient_goes_to_argmax_only() {
        let mut g = Graph::new();
        let x = leaf(&mut g, Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]);
        let y = g.maxpool2(x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let mut g = Graph::new();
        let x = leaf(&mut g, Shape::new(1, 2, 3, 4), vec![2.5; 24]);
        let y = g.upsample_bilinear2(x).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 2, 6, 8));
        assert!(g.data(y).iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn upsample_ramp_interpolation() {
        // ramp [0,1] along x -> [0, 0.25, 0.75, 1.0] with edge clamping
        let mut g = Graph::new();
        let x = leaf(&mut g, Shape::new(1, 1, 1, 2), vec![0.0, 1.0]);
        let y = g.upsample_bilinear2(x).unwrap();
        let d = g.data(y);
        let expect = [0.0, 0.25, 0.75, 1.0];
        for (row, e) in d.chunks(4).zip([expect, expect].iter()) {
            for (a, b) in row.iter().zip(e) {
                assert!((a - b).abs() < 1e-12, "{row:?}");
            }
        }
    }

    #[test]
    fn batchnorm_constant_channel_is_zeroed() {
        let mut g = Graph::new();
        let x = leaf(&mut g, Shape::new(2, 1, 2, 2), vec![3.0; 8]);
        let gamma = leaf(&mut g, Shape::new(1, 1, 1, 1), vec![1.0]);
        let beta = leaf(&mut g, Shape::new(1, 1, 1, 1), vec![0.0]);
        let (y, stats) = g.batchnorm_train(x, gamma, beta, 1e-5).unwrap();
        assert!(g.data(y).iter().all(|&v| v.abs() < 1e-12));
        assert_eq!(stats.mean, vec![3.0]);
        assert_eq!(stats.var, vec![0.0]);
    }

    #[test]
    fn batchnorm_normalizes_to_unit_stats() {
        let mut g = Graph::new();
        let xs = Shape::new(2, 2, 4, 4);
        let data: Vec<f64> = (0..xs.numel()).map(|i| (i as f64 * 0.7).sin() * 3.0 + 1.0).collect();
        let x = leaf(&mut g, xs, data);
        let gamma = leaf(&mut g, Shape::new(1, 2, 1, 1), vec![1.0, 1.0]);
        let beta = leaf(&mut g, Shape::new(1, 2, 1, 1), vec![0.0, 0.0]);
        let (y, _) = g.batchnorm_train(x, gamma, beta, 1e-5).unwrap();
        let d = g.data(y);
        for c in 0..2 {
            let mut vals = Vec::new();
            for b in 0..2 {
                let base = xs.plane(b, c);
                vals.extend_from_slice(&d[base..base + 16]);
            }
            let m: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let v: f64 = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn pointwise_examples() {
        let mut g = Graph::new();
        let x = leaf(&mut g, Shape::new(1, 1, 1, 4), vec![-3.0, 3.0, 0.0, 1.0]);
        let r = g.relu(x);
        assert_eq!(g.data(r), &[0.0, 3.0, 0.0, 1.0]);
        let z = leaf(&mut g, Shape::new(1, 1, 1, 1), vec![0.0]);
        let s = g.sigmoid(z);
        assert_eq!(g.data(s), &[0.5]);
    }

    #[test]
    fn concat_widths_add_up() {
        let mut g = Graph::new();
        let a = leaf(&mut g, Shape::new(2, 16, 4, 4), vec![1.0; 2 * 16 * 16]);
        let b = leaf(&mut g, Shape::new(2, 32, 4, 4), vec![2.0; 2 * 32 * 16]);
        let y = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.shape(y), Shape::new(2, 48, 4, 4));
        // channel order follows argument order
        let d = g.data(y);
        assert_eq!(d[0], 1.0);
        let s = g.shape(y);
        assert_eq!(d[s.idx(0, 16, 0, 0)], 2.0);
        assert_eq!(d[s.idx(1, 47, 3, 3)], 2.0);
    }

    #[test]
    fn concat_single_input_is_identity() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..32).map(|i| i as f64).collect();
        let a = leaf(&mut g, Shape::new(1, 2, 4, 4), data.clone());
        let y = g.concat_channels(&[a]).unwrap();
        assert_eq!(g.data(y), data.as_slice());
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let mut g = Graph::new();
        let a = leaf(&mut g, Shape::new(1, 1, 4, 4), vec![0.0; 16]);
        let b = leaf(&mut g, Shape::new(1, 1, 2, 2), vec![0.0; 4]);
        assert!(matches!(
            g.concat_channels(&[a, b]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn concat_gradient_slices() {
        // d(sum(out))/d(xs[1]) = ones of xs[1]'s shape
        let mut g = Graph::new();
        let a = leaf(&mut g, Shape::new(1, 2, 2, 2), vec![0.0; 8]);
        let b = leaf(&mut g, Shape::new(1, 3, 2, 2), vec![0.0; 12]);
        let y = g.concat_channels(&[a, b]).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(b).unwrap(), vec![1.0; 12].as_slice());
        assert_eq!(g.grad(a).unwrap(), vec![1.0; 8].as_slice());
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut g = Graph::new();
        let x = leaf(&mut g, Shape::new(1, 1, 2, 3), vec![5.0; 6]);
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), vec![1.0; 6].as_slice());
    }

    #[test]
    fn backward_quadratic() {
        // loss = sum(x*x) at x=[1,2] -> grad [2,4]
        let mut g = Graph::new();
        let x = leaf(&mut g, Shape::new(1, 1, 1, 2), vec![1.0, 2.0]);
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = leaf(&mut g, Shape::new(1, 1, 1, 2), vec![1.0, 2.0]);
        let y = g.relu(x);
        assert!(matches!(g.backward(y), Err(Error::Shape(_))));
    }

    #[test]
    fn fanout_accumulates_both_paths() {
        // z = x + x is algebraically 2x, so dz/dx = 2
        let mut g = Graph::new();
        let x = leaf(&mut g, Shape::new(1, 1, 1, 2), vec![1.5, -0.5]);
        let y = g.add(x, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn inference_graph_records_nothing() {
        let mut g = Graph::inference();
        let x = g.leaf(
            Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0])
                .unwrap()
                .requires_grad(),
        );
        let y = g.maxpool2(x).unwrap();
        let s = g.sum(y);
        assert!(g.backward(s).is_err());
    }

    #[test]
    fn bce_handbook_values() {
        let ln2 = std::f64::consts::LN_2;
        for (y, p, expect) in [(1.0, 1.0, ln2), (0.0, 7.0, ln2), (1.0, 1500.0, 1500.0 * ln2)] {
            let mut g = Graph::new();
            let x = leaf(&mut g, Shape::new(1, 1, 1, 1), vec![0.0]);
            let t = g.leaf(Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![y]).unwrap());
            let l = g.weighted_bce_mean(x, t, p).unwrap();
            assert!((g.value(l) - expect).abs() < 1e-9, "y={y} p={p}");
        }
    }

    #[test]
    fn bce_rejects_soft_targets() {
        let mut g = Graph::new();
        let x = leaf(&mut g, Shape::new(1, 1, 1, 1), vec![0.0]);
        let t = g.leaf(Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![0.5]).unwrap());
        assert!(matches!(
            g.weighted_bce_mean(x, t, 1.0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn bce_finite_at_extreme_logits() {
        let mut g = Graph::new();
        let x = leaf(&mut g, Shape::new(1, 1, 1, 2), vec![50.0, -50.0]);
        let t = g.leaf(Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.0, 1.0]).unwrap());
        let l = g.weighted_bce_mean(x, t, 1500.0).unwrap();
        let v = g.value(l);
        assert!(v.is_finite());
        g.backward(l).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut g = Graph::new();
            let xs = Shape::new(2, 3, 8, 8);
            let data: Vec<f64> = (0..xs.numel()).map(|i| ((i * 37) % 101) as f64 / 17.0).collect();
            let x = leaf(&mut g, xs, data);
            let ws = Shape::new(4, 3, 3, 3);
            let wdata: Vec<f64> = (0..ws.numel()).map(|i| ((i * 13) % 23) as f64 / 7.0 - 1.0).collect();
            let w = leaf(&mut g, ws, wdata);
            let y = g.conv2d(x, w, None, 1).unwrap();
            let p = g.maxpool2(y).unwrap();
            let u = g.upsample_bilinear2(p).unwrap();
            let r = g.relu(u);
            g.data(r).to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "bit-identical forward outputs for identical inputs");
    }
}
