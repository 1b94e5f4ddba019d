//! Network architectures and losses.
//!
//! Each sensor gets its own small CNN tower (the sensors differ in channel
//! count and statistics) producing a `backbone_dim` feature, plus a two-layer
//! projection head down to the 64-d latent the contrastive loss operates on.
//! Downstream probes consume the pre-projection backbone feature; the
//! projection is only for the loss.

use crate::autodiff::{AutodiffError, Axis, Tape, Var};
use crate::params::ParamSet;
use crate::rng::StreamRng;
use crate::scalar::Scalar;
use crate::sensorsim::{SensorKind, TactileFrame};
use crate::tensor::{InitScheme, Tensor};

/// Latent dimension the contrastive loss operates in.
pub const PROJECTION_DIM: usize = 64;
/// Hidden width of the projection head.
pub const PROJECTION_HIDDEN: usize = 128;
/// Hidden width of the pose probe's two layers.
pub const POSE_HIDDEN: usize = 256;
/// Default backbone feature dimension.
pub const DEFAULT_BACKBONE_DIM: usize = 128;
/// Degrees of theta that weigh like one millimetre in the pose loss:
/// +-30 degrees maps onto +-8, matching the +-8 mm translation range.
pub const THETA_SCALE: f64 = 3.75;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("frame from sensor {got} fed to the {expected} tower")]
    SensorMismatch {
        expected: SensorKind,
        got: SensorKind,
    },
    #[error("contrastive batch needs at least 2 pairs, got {0}")]
    BatchTooSmall(usize),
    #[error("temperature must be positive, got {0}")]
    BadTau(f64),
    #[error("cosine similarity of a zero vector is undefined")]
    ZeroVector,
    #[error("checkpoint is missing tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?} has shape {got:?}, expected {expected:?}")]
    BadTensorShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("no frames to encode")]
    EmptyBatch,
}

/// InfoNCE settings.
#[derive(Clone, Copy, Debug)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub symmetric: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: 0.07,
            symmetric: true,
        }
    }
}

// ---- parameter construction ----

const ENCODER_SPEC: [(&str, &str); 8] = [
    ("conv1.w", "conv"),
    ("conv1.b", "bias"),
    ("conv2.w", "conv"),
    ("conv2.b", "bias"),
    ("conv3.w", "conv"),
    ("conv3.b", "bias"),
    ("fc.w", "linear"),
    ("fc.b", "bias"),
];

fn conv_init<S: Scalar>(shape: [usize; 4], seed: u64, stream: &str) -> Tensor<S> {
    let fan_in = shape[1] * shape[2] * shape[3];
    let mut rng = StreamRng::new(seed, stream);
    Tensor::seeded_init(&shape, InitScheme::UniformFanIn { fan_in }, &mut rng)
}

fn linear_init<S: Scalar>(shape: [usize; 2], seed: u64, stream: &str) -> Tensor<S> {
    let mut rng = StreamRng::new(seed, stream);
    Tensor::seeded_init(&shape, InitScheme::UniformFanIn { fan_in: shape[0] }, &mut rng)
}

/// One sensor's encoder plus projection head.
#[derive(Clone, Debug, PartialEq)]
pub struct Tower<S> {
    pub sensor: SensorKind,
    pub backbone_dim: usize,
    /// conv1.w/b, conv2.w/b, conv3.w/b, fc.w/b — in this order.
    pub encoder: ParamSet<S>,
    /// proj.w1/b1, proj.w2/b2 — in this order.
    pub projection: ParamSet<S>,
}

impl<S: Scalar> Tower<S> {
    /// Deterministic initialization from named streams
    /// `init/<sensor>/<tensor>`.
    pub fn init(sensor: SensorKind, backbone_dim: usize, seed: u64) -> Self {
        let ch = sensor.channels();
        let pfx = sensor.name();
        let mut encoder = ParamSet::new();
        let shapes: [Vec<usize>; 8] = [
            vec![16, ch, 3, 3],
            vec![16],
            vec![32, 16, 3, 3],
            vec![32],
            vec![64, 32, 3, 3],
            vec![64],
            vec![64, backbone_dim],
            vec![backbone_dim],
        ];
        for ((name, kind), shape) in ENCODER_SPEC.iter().zip(shapes.iter()) {
            let stream = format!("init/{pfx}/{name}");
            let t = match *kind {
                "conv" => conv_init([shape[0], shape[1], shape[2], shape[3]], seed, &stream),
                "linear" => linear_init([shape[0], shape[1]], seed, &stream),
                _ => Tensor::zeros(shape),
            };
            encoder.push(*name, t).expect("fixed names");
        }
        let mut projection = ParamSet::new();
        projection
            .push(
                "proj.w1",
                linear_init([backbone_dim, PROJECTION_HIDDEN], seed, &format!("init/{pfx}/proj.w1")),
            )
            .expect("fixed names");
        projection.push("proj.b1", Tensor::zeros(&[PROJECTION_HIDDEN])).expect("fixed names");
        projection
            .push(
                "proj.w2",
                linear_init([PROJECTION_HIDDEN, PROJECTION_DIM], seed, &format!("init/{pfx}/proj.w2")),
            )
            .expect("fixed names");
        projection.push("proj.b2", Tensor::zeros(&[PROJECTION_DIM])).expect("fixed names");
        Self {
            sensor,
            backbone_dim,
            encoder,
            projection,
        }
    }
}

/// Both towers; the unit a checkpoint stores.
#[derive(Clone, Debug, PartialEq)]
pub struct DualTowers<S> {
    pub gel: Tower<S>,
    pub membrane: Tower<S>,
}

impl<S: Scalar> DualTowers<S> {
    pub fn init(backbone_dim: usize, seed: u64) -> Self {
        Self {
            gel: Tower::init(SensorKind::Gel, backbone_dim, seed),
            membrane: Tower::init(SensorKind::Membrane, backbone_dim, seed),
        }
    }

    pub fn tower(&self, sensor: SensorKind) -> &Tower<S> {
        match sensor {
            SensorKind::Gel => &self.gel,
            SensorKind::Membrane => &self.membrane,
        }
    }

    /// Flattens to checkpoint naming: `gel/conv1.w`, `membrane/proj.w2`, ...
    pub fn to_params(&self) -> ParamSet<S> {
        let mut out = ParamSet::new();
        for tower in [&self.gel, &self.membrane] {
            let pfx = tower.sensor.name();
            out.extend_prefixed(pfx, &tower.encoder).expect("unique prefixes");
            out.extend_prefixed(pfx, &tower.projection).expect("unique prefixes");
        }
        out
    }

    pub fn from_params(params: &ParamSet<S>) -> Result<Self, ModelError> {
        let tower = |sensor: SensorKind| -> Result<Tower<S>, ModelError> {
            let pfx = sensor.name();
            let fetch = |name: &str| -> Result<Tensor<S>, ModelError> {
                params
                    .get(&format!("{pfx}/{name}"))
                    .cloned()
                    .ok_or_else(|| ModelError::MissingTensor(format!("{pfx}/{name}")))
            };
            let fc_w = fetch("fc.w")?;
            if fc_w.shape().len() != 2 || fc_w.shape()[0] != 64 {
                return Err(ModelError::BadTensorShape {
                    name: format!("{pfx}/fc.w"),
                    expected: vec![64, 0],
                    got: fc_w.shape().to_vec(),
                });
            }
            let backbone_dim = fc_w.shape()[1];
            let mut encoder = ParamSet::new();
            for (name, _) in ENCODER_SPEC {
                encoder.push(name, fetch(name)?).expect("fixed names");
            }
            let mut projection = ParamSet::new();
            for name in ["proj.w1", "proj.b1", "proj.w2", "proj.b2"] {
                projection.push(name, fetch(name)?).expect("fixed names");
            }
            Ok(Tower {
                sensor,
                backbone_dim,
                encoder,
                projection,
            })
        };
        Ok(Self {
            gel: tower(SensorKind::Gel)?,
            membrane: tower(SensorKind::Membrane)?,
        })
    }
}

// ---- graph builders ----

/// Tape handles for one tower's parameters.
pub struct BoundTower {
    pub encoder: Vec<Var>,
    pub projection: Vec<Var>,
}

/// Registers the tower's tensors on the tape, trainable or frozen.
pub fn bind_tower<S: Scalar>(tape: &mut Tape<S>, tower: &Tower<S>, trainable: bool) -> BoundTower {
    let mut bind = |set: &ParamSet<S>| -> Vec<Var> {
        (0..set.len())
            .map(|i| {
                let t = set.tensor(i).clone();
                if trainable {
                    tape.param(t)
                } else {
                    tape.input(t)
                }
            })
            .collect()
    };
    BoundTower {
        encoder: bind(&tower.encoder),
        projection: bind(&tower.projection),
    }
}

/// Registers a plain parameter set, trainable or frozen.
pub fn bind_params<S: Scalar>(tape: &mut Tape<S>, set: &ParamSet<S>, trainable: bool) -> Vec<Var> {
    (0..set.len())
        .map(|i| {
            let t = set.tensor(i).clone();
            if trainable {
                tape.param(t)
            } else {
                tape.input(t)
            }
        })
        .collect()
}

/// conv(s2,p1) -> relu, three times, then global average pool and a linear
/// layer to the backbone feature.
pub fn encoder_forward<S: Scalar>(
    tape: &mut Tape<S>,
    enc: &[Var],
    frames: Var,
) -> Result<Var, AutodiffError> {
    let mut x = frames;
    for layer in 0..3 {
        let c = tape.conv2d(x, enc[2 * layer], 2, 1)?;
        let c = tape.bias_add(c, enc[2 * layer + 1])?;
        x = tape.relu(c)?;
    }
    let pooled = tape.global_avg_pool(x)?;
    let f = tape.matmul(pooled, enc[6])?;
    tape.bias_add(f, enc[7])
}

/// Two-layer MLP projection head to the 64-d latent.
pub fn projection_forward<S: Scalar>(
    tape: &mut Tape<S>,
    proj: &[Var],
    backbone: Var,
) -> Result<Var, AutodiffError> {
    let h = tape.matmul(backbone, proj[0])?;
    let h = tape.bias_add(h, proj[1])?;
    let h = tape.relu(h)?;
    let z = tape.matmul(h, proj[2])?;
    tape.bias_add(z, proj[3])
}

/// Stacks frames into an `[n, ch, h, w]` tensor, checking the sensor kind.
pub fn frames_tensor<S: Scalar>(
    frames: &[&TactileFrame],
    sensor: SensorKind,
) -> Result<Tensor<S>, ModelError> {
    if frames.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let (h, w) = (frames[0].height, frames[0].width);
    let ch = sensor.channels();
    let mut data = Vec::with_capacity(frames.len() * ch * h * w);
    for f in frames {
        if f.sensor != sensor {
            return Err(ModelError::SensorMismatch {
                expected: sensor,
                got: f.sensor,
            });
        }
        data.extend(f.data.iter().map(|&v| S::from_acc(v as f64)));
    }
    Ok(Tensor::from_vec(&[frames.len(), ch, h, w], data).expect("homogeneous frames"))
}

/// Backbone feature and projected latent for one frame.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub backbone: Vec<f32>,
    pub projected: Vec<f32>,
}

/// Runs one frame through a tower (no gradients recorded).
pub fn encode(frame: &TactileFrame, tower: &Tower<f32>) -> Result<Embedding, ModelError> {
    let (backbone, projected) = encode_batch(&[frame], tower)?;
    Ok(Embedding {
        backbone: backbone.data().to_vec(),
        projected: projected.data().to_vec(),
    })
}

/// Encodes a batch of frames; returns `([n, D_b], [n, 64])` value tensors.
pub fn encode_batch(
    frames: &[&TactileFrame],
    tower: &Tower<f32>,
) -> Result<(Tensor<f32>, Tensor<f32>), ModelError> {
    let mut tape = Tape::new();
    let bound = bind_tower(&mut tape, tower, false);
    let input = tape.input(frames_tensor(frames, tower.sensor)?);
    let backbone = encoder_forward(&mut tape, &bound.encoder, input)?;
    let projected = projection_forward(&mut tape, &bound.projection, backbone)?;
    Ok((tape.value(backbone).clone(), tape.value(projected).clone()))
}

/// Plain cosine similarity; errors on a zero vector.
pub fn cosine_sim<S: Scalar>(a: &[S], b: &[S]) -> Result<f64, ModelError> {
    let na = a.iter().map(|v| v.to_acc() * v.to_acc()).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v.to_acc() * v.to_acc()).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(ModelError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x.to_acc() * y.to_acc()).sum();
    Ok(dot / (na * nb))
}

/// Symmetric InfoNCE over a batch of paired latents (rows of `z1`/`z2`).
///
/// Rows are L2-normalized inside; the softmax for anchor i runs over all
/// cross-sensor similarities in the batch (the positive j = i plus every
/// j != i as negatives), via log-sum-exp. With `symmetric` both directions
/// are averaged.
pub fn infonce_loss<S: Scalar>(
    tape: &mut Tape<S>,
    z1: Var,
    z2: Var,
    cfg: &ContrastiveConfig,
) -> Result<Var, ModelError> {
    if cfg.tau <= 0.0 {
        return Err(ModelError::BadTau(cfg.tau));
    }
    let n = tape.value(z1).shape()[0];
    if n < 2 {
        return Err(ModelError::BatchTooSmall(n));
    }
    let z1n = tape.l2_normalize_rows(z1)?;
    let z2n = tape.l2_normalize_rows(z2)?;
    let sims = tape.matmul_nt(z1n, z2n)?;
    let scaled = tape.mul_scalar(sims, 1.0 / cfg.tau)?;
    let eye = tape.input(Tensor::eye(n));
    let diag_m = tape.mul(scaled, eye)?;
    let diag = tape.sum_axis(diag_m, Axis::Cols)?;
    let lse_rows = tape.logsumexp(scaled, Axis::Cols)?;
    let per_anchor_12 = tape.sub(lse_rows, diag)?;
    let loss_12 = tape.mean_all(per_anchor_12)?;
    if !cfg.symmetric {
        return Ok(loss_12);
    }
    let lse_cols = tape.logsumexp(scaled, Axis::Rows)?;
    let per_anchor_21 = tape.sub(lse_cols, diag)?;
    let loss_21 = tape.mean_all(per_anchor_21)?;
    let sum = tape.add(loss_12, loss_21)?;
    Ok(tape.mul_scalar(sum, 0.5)?)
}

// ---- heads ----

/// Single linear layer: the classification probe.
pub fn init_classifier<S: Scalar>(d_b: usize, classes: usize, seed: u64, stream: &str) -> ParamSet<S> {
    let mut p = ParamSet::new();
    p.push("w", linear_init([d_b, classes], seed, &format!("{stream}/w"))).expect("fixed");
    p.push("b", Tensor::zeros(&[classes])).expect("fixed");
    p
}

pub fn classifier_forward<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &[Var],
    features: Var,
) -> Result<Var, AutodiffError> {
    let l = tape.matmul(features, vars[0])?;
    tape.bias_add(l, vars[1])
}

/// Argmax per row of a logits tensor.
pub fn argmax_rows<S: Scalar>(logits: &Tensor<S>) -> Vec<usize> {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    (0..n)
        .map(|i| {
            let row = &logits.data()[i * k..(i + 1) * k];
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// MLP with two 256-wide hidden layers: the pose probe.
pub fn init_pose_head<S: Scalar>(d_b: usize, seed: u64, stream: &str) -> ParamSet<S> {
    let mut p = ParamSet::new();
    p.push("w1", linear_init([d_b, POSE_HIDDEN], seed, &format!("{stream}/w1"))).expect("fixed");
    p.push("b1", Tensor::zeros(&[POSE_HIDDEN])).expect("fixed");
    p.push("w2", linear_init([POSE_HIDDEN, POSE_HIDDEN], seed, &format!("{stream}/w2"))).expect("fixed");
    p.push("b2", Tensor::zeros(&[POSE_HIDDEN])).expect("fixed");
    p.push("w3", linear_init([POSE_HIDDEN, 3], seed, &format!("{stream}/w3"))).expect("fixed");
    p.push("b3", Tensor::zeros(&[3])).expect("fixed");
    p
}

pub fn pose_forward<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &[Var],
    features: Var,
) -> Result<Var, AutodiffError> {
    let h = tape.matmul(features, vars[0])?;
    let h = tape.bias_add(h, vars[1])?;
    let h = tape.relu(h)?;
    let h = tape.matmul(h, vars[2])?;
    let h = tape.bias_add(h, vars[3])?;
    let h = tape.relu(h)?;
    let out = tape.matmul(h, vars[4])?;
    tape.bias_add(out, vars[5])
}

/// Builds the `[n, 3]` scaled pose target matrix: (y mm, z mm, theta/3.75).
pub fn pose_targets<S: Scalar>(poses: &[(f32, f32, f32)]) -> Tensor<S> {
    let mut data = Vec::with_capacity(poses.len() * 3);
    for &(y, z, theta) in poses {
        data.push(S::from_acc(y as f64));
        data.push(S::from_acc(z as f64));
        data.push(S::from_acc(theta as f64 / THETA_SCALE));
    }
    Tensor::from_vec(&[poses.len(), 3], data).expect("3 per pose")
}

/// Linear decoder from the backbone feature back to a flattened frame.
pub fn init_recon_head<S: Scalar>(
    d_b: usize,
    sensor: SensorKind,
    img_size: usize,
    seed: u64,
    stream: &str,
) -> ParamSet<S> {
    let out = sensor.channels() * img_size * img_size;
    let mut p = ParamSet::new();
    p.push("w", linear_init([d_b, out], seed, &format!("{stream}/w"))).expect("fixed");
    p.push("b", Tensor::zeros(&[out])).expect("fixed");
    p
}

pub fn recon_forward<S: Scalar>(
    tape: &mut Tape<S>,
    vars: &[Var],
    features: Var,
) -> Result<Var, AutodiffError> {
    let r = tape.matmul(features, vars[0])?;
    tape.bias_add(r, vars[1])
}

/// Flattens an `[n, ch, h, w]` frame tensor to `[n, ch*h*w]` for the
/// reconstruction target.
pub fn flatten_frames<S: Scalar>(frames: &Tensor<S>) -> Tensor<S> {
    let shape = frames.shape();
    let n = shape[0];
    let rest: usize = shape[1..].iter().product();
    Tensor::from_vec(&[n, rest], frames.data().to_vec()).expect("same numel")
}
