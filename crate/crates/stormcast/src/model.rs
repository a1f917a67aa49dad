//! Residual UNet++ segmentation network and its plain UNet++ ablation.
//!
//! The node grid R(i,j) for (i,j) in {(0,0..3),(1,0..2),(2,0..1),(3,0)} is
//! connected by max-pool down edges, bilinear up edges, and dense skip
//! connections; three 1x1 heads on R(0,1..3) provide deep supervision.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::checkpoint::{Checkpoint, ParamBlob};
use crate::error::{Error, Result};
use crate::preprocess::NormStats;
use crate::tensor::gradcheck::{op_suite, weighted_sum, CheckResult, Harness, MODEL_TOL, OP_TOL};
use crate::tensor::{BnStats, Graph, Shape, Tensor, TensorRef};

/// Node coordinates in evaluation order: column-major by skip index j,
/// then by depth i. This is a valid topological order of the grid.
pub const NODES: [(usize, usize); 10] = [
    (0, 0),
    (1, 0),
    (2, 0),
    (3, 0),
    (0, 1),
    (1, 1),
    (2, 1),
    (0, 2),
    (1, 2),
    (0, 3),
];

/// Network variant: residual blocks or the plain two-conv ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Runetpp,
    Unetpp,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Variant> {
        match s {
            "runetpp" => Ok(Variant::Runetpp),
            "unetpp" => Ok(Variant::Unetpp),
            other => Err(Error::Usage(format!(
                "unknown variant `{other}` (expected runetpp or unetpp)"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Runetpp => "runetpp",
            Variant::Unetpp => "unetpp",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub base_width: usize,
    pub in_channels: usize,
    pub seed: u64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Runetpp,
            base_width: 16,
            in_channels: 10,
            seed: 0,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 {
            return Err(Error::Config("base_width must be >= 1".into()));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be >= 1".into()));
        }
        if !(self.bn_eps > 0.0) || !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::Config(
                "bn_eps must be > 0 and bn_momentum in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Width N(i) = base_width * 2^i at depth i.
    pub fn width(&self, i: usize) -> usize {
        self.base_width << i
    }

    /// Input channel count M(i,j): the sum of the widths of all in-edges.
    pub fn in_channels_of(&self, i: usize, j: usize) -> usize {
        if j == 0 {
            if i == 0 {
                self.in_channels
            } else {
                self.width(i - 1)
            }
        } else {
            j * self.width(i) + self.width(i + 1)
        }
    }
}

/// What a learnable parameter is, for optimizer policy (weight decay
/// applies to conv weights only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    BnGamma,
    BnBeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub dims: [usize; 4],
    pub values: Vec<f64>,
    pub kind: ParamKind,
}

impl Param {
    fn shape(&self) -> Shape {
        Shape {
            b: self.dims[0],
            c: self.dims[1],
            h: self.dims[2],
            w: self.dims[3],
        }
    }
}

/// Running batchnorm statistics, updated as an exponential moving average
/// during training and used verbatim in inference mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BnState {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BnState {
    fn fresh(c: usize) -> BnState {
        BnState {
            mean: vec![0.0; c],
            var: vec![1.0; c],
        }
    }
}

/// Parameter indices of one node block (into `Model::params` for convs
/// and affine terms, into `Model::bns` for running statistics).
#[derive(Debug, Clone)]
enum BlockIdx {
    Residual {
        fusion_w: usize,
        fusion_b: usize,
        conv1_w: usize,
        bn1_gamma: usize,
        bn1_beta: usize,
        bn1: usize,
        conv2_w: usize,
        bn2_gamma: usize,
        bn2_beta: usize,
        bn2: usize,
    },
    Plain {
        conva_w: usize,
        bn1_gamma: usize,
        bn1_beta: usize,
        bn1: usize,
        convb_w: usize,
        bn2_gamma: usize,
        bn2_beta: usize,
        bn2: usize,
    },
}

/// Graph references for a free-standing residual block evaluation.
pub struct ResidualRefs {
    pub fusion_w: TensorRef,
    pub fusion_b: TensorRef,
    pub conv1_w: TensorRef,
    pub bn1_gamma: TensorRef,
    pub bn1_beta: TensorRef,
    pub conv2_w: TensorRef,
    pub bn2_gamma: TensorRef,
    pub bn2_beta: TensorRef,
}

/// Graph references for a free-standing plain block evaluation.
pub struct PlainRefs {
    pub conva_w: TensorRef,
    pub bn1_gamma: TensorRef,
    pub bn1_beta: TensorRef,
    pub convb_w: TensorRef,
    pub bn2_gamma: TensorRef,
    pub bn2_beta: TensorRef,
}

/// Batchnorm evaluation mode for a block: compute batch statistics
/// (training) or use the provided frozen running statistics (inference).
pub enum BnMode<'a> {
    Train,
    Eval(&'a BnState, &'a BnState),
}

/// y = relu(bn2(conv3x3(relu(bn1(conv3x3(s))))) + s) with s = conv1x1(x).
/// Returns the output and, in training mode, the two batch statistics.
pub fn residual_block(
    g: &mut Graph,
    x: TensorRef,
    p: &ResidualRefs,
    mode: BnMode<'_>,
    eps: f64,
) -> Result<(TensorRef, Option<(BnStats, BnStats)>)> {
    let s = g.conv2d(x, p.fusion_w, Some(p.fusion_b), 0)?;
    let h = g.conv2d(s, p.conv1_w, None, 1)?;
    let (h, st1) = match &mode {
        BnMode::Train => {
            let (h, st) = g.batchnorm_train(h, p.bn1_gamma, p.bn1_beta, eps)?;
            (h, Some(st))
        }
        BnMode::Eval(bn1, _) => (
            g.batchnorm_eval(h, p.bn1_gamma, p.bn1_beta, &bn1.mean, &bn1.var, eps)?,
            None,
        ),
    };
    let h = g.relu(h);
    let h = g.conv2d(h, p.conv2_w, None, 1)?;
    let (h, st2) = match &mode {
        BnMode::Train => {
            let (h, st) = g.batchnorm_train(h, p.bn2_gamma, p.bn2_beta, eps)?;
            (h, Some(st))
        }
        BnMode::Eval(_, bn2) => (
            g.batchnorm_eval(h, p.bn2_gamma, p.bn2_beta, &bn2.mean, &bn2.var, eps)?,
            None,
        ),
    };
    let y = g.add(h, s)?;
    let y = g.relu(y);
    Ok((y, st1.zip(st2)))
}

/// y = relu(bn2(conv3x3_b(relu(bn1(conv3x3_a(x)))))), conv_a: M->N.
pub fn plain_block(
    g: &mut Graph,
    x: TensorRef,
    p: &PlainRefs,
    mode: BnMode<'_>,
    eps: f64,
) -> Result<(TensorRef, Option<(BnStats, BnStats)>)> {
    let h = g.conv2d(x, p.conva_w, None, 1)?;
    let (h, st1) = match &mode {
        BnMode::Train => {
            let (h, st) = g.batchnorm_train(h, p.bn1_gamma, p.bn1_beta, eps)?;
            (h, Some(st))
        }
        BnMode::Eval(bn1, _) => (
            g.batchnorm_eval(h, p.bn1_gamma, p.bn1_beta, &bn1.mean, &bn1.var, eps)?,
            None,
        ),
    };
    let h = g.relu(h);
    let h = g.conv2d(h, p.convb_w, None, 1)?;
    let (h, st2) = match &mode {
        BnMode::Train => {
            let (h, st) = g.batchnorm_train(h, p.bn2_gamma, p.bn2_beta, eps)?;
            (h, Some(st))
        }
        BnMode::Eval(_, bn2) => (
            g.batchnorm_eval(h, p.bn2_gamma, p.bn2_beta, &bn2.mean, &bn2.var, eps)?,
            None,
        ),
    };
    let y = g.relu(h);
    Ok((y, st1.zip(st2)))
}

/// Training forward pass result: three deep-supervision heads (logits)
/// plus the batch statistics for each batchnorm layer, in layer order.
pub struct TrainForward {
    pub heads: [TensorRef; 3],
    pub bn_batch: Vec<BnStats>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    params: Vec<Param>,
    bns: Vec<BnState>,
    blocks: Vec<BlockIdx>,
    /// (weight, bias) parameter indices for heads on R(0,1), R(0,2), R(0,3).
    heads: [(usize, usize); 3],
}

impl Model {
    /// Build a model with fan-in-scaled normal conv weights
    /// (std = sqrt(2/fan_in)), zero biases, and identity batchnorm,
    /// deterministically from the config seed.
    pub fn new(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::new();
        let mut bns = Vec::new();
        let mut blocks = Vec::new();

        let conv = |params: &mut Vec<Param>,
                        rng: &mut ChaCha8Rng,
                        name: String,
                        out_c: usize,
                        in_c: usize,
                        k: usize|
         -> Result<usize> {
            let fan_in = in_c * k * k;
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .map_err(|e| Error::Numeric(e.to_string()))?;
            let values = (0..out_c * in_c * k * k)
                .map(|_| dist.sample(rng))
                .collect();
            params.push(Param {
                name,
                dims: [out_c, in_c, k, k],
                values,
                kind: ParamKind::ConvWeight,
            });
            Ok(params.len() - 1)
        };
        let bias = |params: &mut Vec<Param>, name: String, c: usize| -> usize {
            params.push(Param {
                name,
                dims: [1, c, 1, 1],
                values: vec![0.0; c],
                kind: ParamKind::ConvBias,
            });
            params.len() - 1
        };
        let bn_affine = |params: &mut Vec<Param>,
                         bns: &mut Vec<BnState>,
                         prefix: &str,
                         c: usize|
         -> (usize, usize, usize) {
            params.push(Param {
                name: format!("{prefix}.gamma"),
                dims: [1, c, 1, 1],
                values: vec![1.0; c],
                kind: ParamKind::BnGamma,
            });
            let gamma = params.len() - 1;
            params.push(Param {
                name: format!("{prefix}.beta"),
                dims: [1, c, 1, 1],
                values: vec![0.0; c],
                kind: ParamKind::BnBeta,
            });
            let beta = params.len() - 1;
            bns.push(BnState::fresh(c));
            (gamma, beta, bns.len() - 1)
        };

        for &(i, j) in &NODES {
            let m = config.in_channels_of(i, j);
            let n = config.width(i);
            let pre = format!("r{i}{j}");
            let block = match config.variant {
                Variant::Runetpp => {
                    let fusion_w = conv(&mut params, &mut rng, format!("{pre}.fusion.w"), n, m, 1)?;
                    let fusion_b = bias(&mut params, format!("{pre}.fusion.b"), n);
                    let conv1_w = conv(&mut params, &mut rng, format!("{pre}.conv1.w"), n, n, 3)?;
                    let (bn1_gamma, bn1_beta, bn1) =
                        bn_affine(&mut params, &mut bns, &format!("{pre}.bn1"), n);
                    let conv2_w = conv(&mut params, &mut rng, format!("{pre}.conv2.w"), n, n, 3)?;
                    let (bn2_gamma, bn2_beta, bn2) =
                        bn_affine(&mut params, &mut bns, &format!("{pre}.bn2"), n);
                    BlockIdx::Residual {
                        fusion_w,
                        fusion_b,
                        conv1_w,
                        bn1_gamma,
                        bn1_beta,
                        bn1,
                        conv2_w,
                        bn2_gamma,
                        bn2_beta,
                        bn2,
                    }
                }
                Variant::Unetpp => {
                    let conva_w = conv(&mut params, &mut rng, format!("{pre}.conva.w"), n, m, 3)?;
                    let (bn1_gamma, bn1_beta, bn1) =
                        bn_affine(&mut params, &mut bns, &format!("{pre}.bn1"), n);
                    let convb_w = conv(&mut params, &mut rng, format!("{pre}.convb.w"), n, n, 3)?;
                    let (bn2_gamma, bn2_beta, bn2) =
                        bn_affine(&mut params, &mut bns, &format!("{pre}.bn2"), n);
                    BlockIdx::Plain {
                        conva_w,
                        bn1_gamma,
                        bn1_beta,
                        bn1,
                        convb_w,
                        bn2_gamma,
                        bn2_beta,
                        bn2,
                    }
                }
            };
            blocks.push(block);
        }

        let n0 = config.width(0);
        let mut heads = [(0, 0); 3];
        for (h, slot) in heads.iter_mut().enumerate() {
            let w = conv(&mut params, &mut rng, format!("head{}.w", h + 1), 1, n0, 1)?;
            let b = bias(&mut params, format!("head{}.b", h + 1), 1);
            *slot = (w, b);
        }

        Ok(Model {
            config,
            params,
            bns,
            blocks,
            heads,
        })
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn bn_states(&self) -> &[BnState] {
        &self.bns
    }

    /// Total learnable scalars (convs plus batchnorm affine terms).
    pub fn count_parameters(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    /// (i, j, M) for every node in evaluation order.
    pub fn in_channel_table(&self) -> Vec<(usize, usize, usize)> {
        NODES
            .iter()
            .map(|&(i, j)| (i, j, self.config.in_channels_of(i, j)))
            .collect()
    }

    /// Insert every learnable parameter into the graph as a
    /// gradient-tracked leaf; the returned refs parallel `params()`.
    pub fn bind(&self, g: &mut Graph) -> Result<Vec<TensorRef>> {
        self.params
            .iter()
            .map(|p| {
                Ok(g.leaf(Tensor::from_vec(p.shape(), p.values.clone())?.requires_grad()))
            })
            .collect()
    }

    fn check_input(&self, g: &Graph, x: TensorRef) -> Result<()> {
        let s = g.shape(x);
        if s.c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, model expects {}",
                s.c, self.config.in_channels
            )));
        }
        if s.h % 8 != 0 || s.w % 8 != 0 {
            return Err(Error::Shape(format!(
                "input {}x{} not divisible by 8 (three pooling stages)",
                s.h, s.w
            )));
        }
        Ok(())
    }

    fn block_output(
        &self,
        g: &mut Graph,
        block: &BlockIdx,
        bind: &[TensorRef],
        input: TensorRef,
        train: bool,
        bn_batch: &mut Vec<BnStats>,
    ) -> Result<TensorRef> {
        let eps = self.config.bn_eps;
        let (y, stats) = match block {
            BlockIdx::Residual {
                fusion_w,
                fusion_b,
                conv1_w,
                bn1_gamma,
                bn1_beta,
                bn1,
                conv2_w,
                bn2_gamma,
                bn2_beta,
                bn2,
            } => {
                let refs = ResidualRefs {
                    fusion_w: bind[*fusion_w],
                    fusion_b: bind[*fusion_b],
                    conv1_w: bind[*conv1_w],
                    bn1_gamma: bind[*bn1_gamma],
                    bn1_beta: bind[*bn1_beta],
                    conv2_w: bind[*conv2_w],
                    bn2_gamma: bind[*bn2_gamma],
                    bn2_beta: bind[*bn2_beta],
                };
                let mode = if train {
                    BnMode::Train
                } else {
                    BnMode::Eval(&self.bns[*bn1], &self.bns[*bn2])
                };
                residual_block(g, input, &refs, mode, eps)?
            }
            BlockIdx::Plain {
                conva_w,
                bn1_gamma,
                bn1_beta,
                bn1,
                convb_w,
                bn2_gamma,
                bn2_beta,
                bn2,
            } => {
                let refs = PlainRefs {
                    conva_w: bind[*conva_w],
                    bn1_gamma: bind[*bn1_gamma],
                    bn1_beta: bind[*bn1_beta],
                    convb_w: bind[*convb_w],
                    bn2_gamma: bind[*bn2_gamma],
                    bn2_beta: bind[*bn2_beta],
                };
                let mode = if train {
                    BnMode::Train
                } else {
                    BnMode::Eval(&self.bns[*bn1], &self.bns[*bn2])
                };
                plain_block(g, input, &refs, mode, eps)?
            }
        };
        if let Some((s1, s2)) = stats {
            bn_batch.push(s1);
            bn_batch.push(s2);
        }
        Ok(y)
    }

    fn forward_nodes(
        &self,
        g: &mut Graph,
        x: TensorRef,
        bind: &[TensorRef],
        train: bool,
    ) -> Result<(Vec<TensorRef>, Vec<BnStats>)> {
        self.check_input(g, x)?;
        let pos = |i: usize, j: usize| NODES.iter().position(|&n| n == (i, j)).unwrap();
        let mut out: Vec<Option<TensorRef>> = vec![None; NODES.len()];
        let mut bn_batch = Vec::with_capacity(self.bns.len());
        for (k, &(i, j)) in NODES.iter().enumerate() {
            let input = if j == 0 {
                if i == 0 {
                    x
                } else {
                    g.maxpool2(out[pos(i - 1, 0)].unwrap())?
                }
            } else {
                let mut parts: Vec<TensorRef> =
                    (0..j).map(|k2| out[pos(i, k2)].unwrap()).collect();
                let up = g.upsample_bilinear2(out[pos(i + 1, j - 1)].unwrap())?;
                parts.push(up);
                g.concat_channels(&parts)?
            };
            let y = self.block_output(g, &self.blocks[k], bind, input, train, &mut bn_batch)?;
            out[k] = Some(y);
        }
        Ok((out.into_iter().map(|o| o.unwrap()).collect(), bn_batch))
    }

    /// Training-mode forward: all three head logits plus batch statistics
    /// for every batchnorm layer. Running statistics are not modified;
    /// apply them afterwards with [`Model::apply_bn_updates`].
    pub fn forward_train(
        &self,
        g: &mut Graph,
        x: TensorRef,
        bind: &[TensorRef],
    ) -> Result<TrainForward> {
        let (nodes, bn_batch) = self.forward_nodes(g, x, bind, true)?;
        let pos = |i: usize, j: usize| NODES.iter().position(|&n| n == (i, j)).unwrap();
        let mut heads = Vec::with_capacity(3);
        for (h, &(w, b)) in self.heads.iter().enumerate() {
            heads.push(g.conv2d(nodes[pos(0, h + 1)], bind[w], Some(bind[b]), 0)?);
        }
        Ok(TrainForward {
            heads: [heads[0], heads[1], heads[2]],
            bn_batch,
        })
    }

    /// Inference-mode forward: frozen batchnorm statistics, final head only.
    pub fn forward_infer(&self, g: &mut Graph, x: TensorRef, bind: &[TensorRef]) -> Result<TensorRef> {
        let (nodes, _) = self.forward_nodes(g, x, bind, false)?;
        let pos = |i: usize, j: usize| NODES.iter().position(|&n| n == (i, j)).unwrap();
        let (w, b) = self.heads[2];
        g.conv2d(nodes[pos(0, 3)], bind[w], Some(bind[b]), 0)
    }

    /// Blend batch statistics into the running statistics:
    /// r <- (1 - momentum) * r + momentum * batch.
    pub fn apply_bn_updates(&mut self, bn_batch: &[BnStats]) {
        assert_eq!(bn_batch.len(), self.bns.len(), "one update per bn layer");
        let mom = self.config.bn_momentum;
        for (state, batch) in self.bns.iter_mut().zip(bn_batch) {
            for (r, &b) in state.mean.iter_mut().zip(&batch.mean) {
                *r = (1.0 - mom) * *r + mom * b;
            }
            for (r, &b) in state.var.iter_mut().zip(&batch.var) {
                *r = (1.0 - mom) * *r + mom * b;
            }
        }
    }

    /// Serialize parameters, running statistics, and normalization stats.
    pub fn to_checkpoint(&self, norm: &NormStats, config_echo: String) -> Checkpoint {
        let mut blobs = Vec::with_capacity(self.params.len() + 2 * self.bns.len());
        for p in &self.params {
            blobs.push(ParamBlob::new(
                p.name.clone(),
                p.dims.iter().map(|&d| d as u32).collect(),
                p.values.clone(),
            ));
        }
        for (k, bn) in self.bns.iter().enumerate() {
            blobs.push(ParamBlob::new(
                format!("bnstate{k}.rmean"),
                vec![bn.mean.len() as u32],
                bn.mean.clone(),
            ));
            blobs.push(ParamBlob::new(
                format!("bnstate{k}.rvar"),
                vec![bn.var.len() as u32],
                bn.var.clone(),
            ));
        }
        Checkpoint {
            variant: self.config.variant.to_string(),
            base_width: self.config.base_width as u32,
            in_channels: self.config.in_channels as u32,
            seed: self.config.seed,
            bn_eps: self.config.bn_eps,
            bn_momentum: self.config.bn_momentum,
            norm_stats: norm.stats.clone(),
            config_echo,
            blobs,
        }
    }

    /// Rebuild a model from a checkpoint. Present blobs with wrong shapes
    /// are reported before missing blobs; unknown blobs are rejected.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Model, NormStats)> {
        let config = ModelConfig {
            variant: ck.variant.parse()?,
            base_width: ck.base_width as usize,
            in_channels: ck.in_channels as usize,
            seed: ck.seed,
            bn_eps: ck.bn_eps,
            bn_momentum: ck.bn_momentum,
        };
        let mut model = Model::new(config)?;

        let mut expected: BTreeMap<String, Vec<u32>> = model
            .params
            .iter()
            .map(|p| (p.name.clone(), p.dims.iter().map(|&d| d as u32).collect()))
            .collect();
        for (k, bn) in model.bns.iter().enumerate() {
            expected.insert(format!("bnstate{k}.rmean"), vec![bn.mean.len() as u32]);
            expected.insert(format!("bnstate{k}.rvar"), vec![bn.var.len() as u32]);
        }
        for blob in &ck.blobs {
            match expected.get(&blob.name) {
                Some(dims) if *dims != blob.dims => {
                    return Err(Error::BlobShape {
                        name: blob.name.clone(),
                        expected: format!("{dims:?}"),
                        found: format!("{:?}", blob.dims),
                    });
                }
                Some(_) => {}
                None => {
                    return Err(Error::Corrupt(format!(
                        "unexpected parameter blob `{}`",
                        blob.name
                    )));
                }
            }
        }
        for name in expected.keys() {
            if ck.get(name).is_none() {
                return Err(Error::MissingBlob(name.clone()));
            }
        }

        for p in &mut model.params {
            p.values = ck.get(&p.name).unwrap().values.clone();
        }
        for (k, bn) in model.bns.iter_mut().enumerate() {
            bn.mean = ck.get(&format!("bnstate{k}.rmean")).unwrap().values.clone();
            bn.var = ck.get(&format!("bnstate{k}.rvar")).unwrap().values.clone();
        }
        Ok((
            model,
            NormStats {
                stats: ck.norm_stats.clone(),
            },
        ))
    }
}

/// Finite-difference check of a single residual block in training mode.
pub fn residual_block_check() -> Result<CheckResult> {
    let (m, n, eps) = (3usize, 2usize, 1e-5);
    let mut h = Harness::new();
    let shape = Shape { b: 2, c: m, h: 5, w: 4 };
    let xs: Vec<f64> = (0..shape.numel()).map(|i| ((i as f64) * 0.713).sin() * 0.8).collect();
    let x = h.leaf(shape, xs);
    let fw = h.leaf(
        Shape { b: n, c: m, h: 1, w: 1 },
        (0..n * m).map(|i| 0.3 + 0.1 * (i as f64)).collect(),
    );
    let fb = h.leaf(Shape { b: 1, c: n, h: 1, w: 1 }, vec![0.05, -0.04]);
    let c1: Vec<f64> = (0..9 * n * n).map(|i| ((i as f64) * 0.517).cos() * 0.3).collect();
    let c1 = h.leaf(Shape { b: n, c: n, h: 3, w: 3 }, c1);
    let g1 = h.leaf(Shape { b: 1, c: n, h: 1, w: 1 }, vec![1.1, 0.9]);
    let b1 = h.leaf(Shape { b: 1, c: n, h: 1, w: 1 }, vec![0.02, -0.03]);
    let c2: Vec<f64> = (0..9 * n * n).map(|i| ((i as f64) * 0.391).sin() * 0.3).collect();
    let c2 = h.leaf(Shape { b: n, c: n, h: 3, w: 3 }, c2);
    let g2 = h.leaf(Shape { b: 1, c: n, h: 1, w: 1 }, vec![0.95, 1.05]);
    let b2 = h.leaf(Shape { b: 1, c: n, h: 1, w: 1 }, vec![0.01, 0.02]);
    h.check(
        "residual_block",
        move |g, refs| {
            let p = ResidualRefs {
                fusion_w: refs[fw],
                fusion_b: refs[fb],
                conv1_w: refs[c1],
                bn1_gamma: refs[g1],
                bn1_beta: refs[b1],
                conv2_w: refs[c2],
                bn2_gamma: refs[g2],
                bn2_beta: refs[b2],
            };
            let (y, _) = residual_block(g, refs[x], &p, BnMode::Train, eps)?;
            weighted_sum(g, y, 99)
        },
        1e-3,
        None,
    )
}

/// Sampled finite-difference check of the complete network on a
/// [1, 10, 16, 16] input, probing 50 randomly chosen parameters.
///
/// The finite-difference probe needs a smooth loss surface at the step
/// scale, so the model is built with a generous bn_eps; the analytic
/// gradients under test are the same code paths regardless of eps.
pub fn full_model_check() -> Result<CheckResult> {
    let model = Model::new(ModelConfig {
        variant: Variant::Runetpp,
        base_width: 8,
        in_channels: 10,
        seed: 5,
        bn_eps: 1e-2,
        ..ModelConfig::default()
    })?;
    let mut h = Harness::new();
    let shape = Shape { b: 1, c: 10, h: 16, w: 16 };
    let xs: Vec<f64> = (0..shape.numel())
        .map(|i| (((i * 2654435761) % 1000) as f64) / 1000.0)
        .collect();
    let x = h.constant(shape, xs);
    for p in model.params() {
        h.leaf(p.shape(), p.values.clone());
    }
    h.check(
        "full_model",
        |g, refs| {
            let bind = &refs[1..];
            let out = model.forward_train(g, refs[x], bind)?;
            let h1 = weighted_sum(g, out.heads[0], 31)?;
            let h2 = weighted_sum(g, out.heads[1], 32)?;
            let h3 = weighted_sum(g, out.heads[2], 33)?;
            let s = g.add(h1, h2)?;
            g.add(s, h3)
        },
        3e-4,
        Some((17, 50)),
    )
}

/// The complete gradient-verification suite: every differentiable op, one
/// residual block, and a 50-parameter sample of the full network. Each
/// result is paired with the tolerance it must satisfy.
pub fn gradient_suite(seed: u64) -> Result<Vec<(CheckResult, f64)>> {
    let mut out: Vec<(CheckResult, f64)> =
        op_suite(seed)?.into_iter().map(|r| (r, OP_TOL)).collect();
    out.push((residual_block_check()?, OP_TOL));
    out.push((full_model_check()?, MODEL_TOL));
    Ok(out)
}
