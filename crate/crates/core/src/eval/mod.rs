//! Downstream evaluation of frozen representations.
//!
//! Probes train on one sensor's backbone features and are evaluated both on
//! that sensor (within) and on the other one (across) — the across case is
//! what exposes whether the two towers' latent spaces are aligned. Regimes
//! pair that sensor choice with a split choice: fresh grasps of the
//! pretraining tools, or entirely held-out tools.

pub mod projection;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, AutodiffError, Tape};
use crate::dataio::{
    ClassCell, DataError, FullReport, InsertionCell, Manifest, MethodReport, PoseCell,
    RetrievalCell,
};
use crate::model::{
    argmax_rows, bind_params, classifier_forward, encode_batch, init_classifier, init_pose_head,
    pose_forward, pose_targets, DualTowers, ModelError, Tower, THETA_SCALE,
};
use crate::params::ParamSet;
use crate::pretrain::PretrainMode;
use crate::sensorsim::{PairedRecord, SensorKind};
use crate::tensor::Tensor;
use projection::{tsne_2d, ProjectionError, TsneConfig};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Adam(#[from] crate::autodiff::AdamError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error("split {0:?} needs at least 2 records")]
    SplitTooSmall(String),
    #[error("evaluation record uses tool {0} which the probe was not trained on")]
    UnknownTool(u32),
    #[error("missing checkpoints for modes: {0}")]
    MissingCheckpoints(String),
}

/// Which train/test split pair a probe runs on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitPair {
    /// Fresh grasps of the 9 pretraining tools (probe-train / probe-test).
    UnseenGrasps,
    /// The 3 held-out tools (unseen-tools-train / unseen-tools-test).
    UnseenTools,
}

impl SplitPair {
    pub const ALL: [SplitPair; 2] = [SplitPair::UnseenGrasps, SplitPair::UnseenTools];

    pub fn name(self) -> &'static str {
        match self {
            SplitPair::UnseenGrasps => "unseen-grasps",
            SplitPair::UnseenTools => "unseen-tools",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// A probe regime: where the probe trains, where it is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProbeRegime {
    pub train_sensor: SensorKind,
    pub eval_sensor: SensorKind,
    pub split_pair: SplitPair,
}

impl ProbeRegime {
    pub fn is_within(&self) -> bool {
        self.train_sensor == self.eval_sensor
    }

    /// Report key, e.g. `within/unseen-grasps`.
    pub fn key(&self) -> String {
        let kind = if self.is_within() { "within" } else { "across" };
        format!("{kind}/{}", self.split_pair.name())
    }
}

/// Which frozen representation the probes consume. The contrastive loss
/// aligns the two sensors only after the projection heads, so the projected
/// latent is the space where cross-sensor transfer is even defined; the
/// pre-projection backbone remains available for comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeFeature {
    Projected,
    Backbone,
}

impl ProbeFeature {
    pub fn name(self) -> &'static str {
        match self {
            ProbeFeature::Projected => "projected",
            ProbeFeature::Backbone => "backbone",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "projected" => Some(Self::Projected),
            "backbone" => Some(Self::Backbone),
            _ => None,
        }
    }
}

/// Probe optimizer settings, fixed across methods so comparisons vary only
/// in the frozen features.
#[derive(Clone, Copy, Debug)]
pub struct ProbeSettings {
    pub lr: f64,
    pub class_epochs: usize,
    pub pose_epochs: usize,
    pub seed: u64,
    pub feature: ProbeFeature,
    /// Z-score the features with statistics fit on the probe's train split.
    pub standardize: bool,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            lr: 0.02,
            class_epochs: 800,
            pose_epochs: 1000,
            seed: 42,
            feature: ProbeFeature::Projected,
            standardize: true,
        }
    }
}

/// Per-dimension z-scoring fit on the probe's training features and applied
/// unchanged to whatever split and sensor the probe is evaluated on.
#[derive(Clone, Debug)]
pub struct Standardizer {
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Tensor<f32>) -> Self {
        let (n, d) = (x.shape()[0], x.shape()[1]);
        let mut means = vec![0.0; d];
        let mut stds = vec![0.0; d];
        for j in 0..d {
            let mut sum = 0.0;
            for i in 0..n {
                sum += x.data()[i * d + j] as f64;
            }
            let mean = sum / n as f64;
            let mut var = 0.0;
            for i in 0..n {
                let v = x.data()[i * d + j] as f64 - mean;
                var += v * v;
            }
            means[j] = mean;
            stds[j] = (var / n as f64).sqrt().max(1e-6);
        }
        Self { means, stds }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            means: vec![0.0; d],
            stds: vec![1.0; d],
        }
    }

    pub fn apply(&self, x: &Tensor<f32>) -> Tensor<f32> {
        let (n, d) = (x.shape()[0], x.shape()[1]);
        let mut out = x.clone();
        for i in 0..n {
            for j in 0..d {
                out.data_mut()[i * d + j] =
                    ((x.data()[i * d + j] as f64 - self.means[j]) / self.stds[j]) as f32;
            }
        }
        out
    }
}

fn probe_matrix<'a>(fs: &'a FeatureSet, feature: ProbeFeature) -> &'a Tensor<f32> {
    match feature {
        ProbeFeature::Projected => &fs.projected,
        ProbeFeature::Backbone => &fs.backbone,
    }
}

/// Pose-gate tolerances for the simulated insertion task.
#[derive(Clone, Copy, Debug)]
pub struct InsertionTolerances {
    pub trans_mm: f64,
    pub theta_deg: f64,
}

impl Default for InsertionTolerances {
    fn default() -> Self {
        Self {
            trans_mm: 3.0,
            theta_deg: 5.0,
        }
    }
}

/// All five splits of a generated dataset, in memory.
pub struct DatasetSplits {
    pub pretrain: Vec<PairedRecord>,
    pub probe_train: Vec<PairedRecord>,
    pub probe_test: Vec<PairedRecord>,
    pub unseen_tools_train: Vec<PairedRecord>,
    pub unseen_tools_test: Vec<PairedRecord>,
}

impl DatasetSplits {
    pub fn load(dir: &std::path::Path, manifest: &Manifest) -> Result<Self, DataError> {
        let read = |name: &str| crate::dataio::read_split_by_name(dir, manifest, name);
        Ok(Self {
            pretrain: read("pretrain")?,
            probe_train: read("probe-train")?,
            probe_test: read("probe-test")?,
            unseen_tools_train: read("unseen-tools-train")?,
            unseen_tools_test: read("unseen-tools-test")?,
        })
    }

    /// (train, test) record slices for a split pair.
    pub fn pair(&self, pair: SplitPair) -> (&[PairedRecord], &[PairedRecord]) {
        match pair {
            SplitPair::UnseenGrasps => (&self.probe_train, &self.probe_test),
            SplitPair::UnseenTools => (&self.unseen_tools_train, &self.unseen_tools_test),
        }
    }
}

/// Frozen features of one sensor over one split.
pub struct FeatureSet {
    pub backbone: Tensor<f32>,
    pub projected: Tensor<f32>,
    pub tool_ids: Vec<u32>,
    pub poses: Vec<(f32, f32, f32)>,
}

/// Runs the tower over a split in chunks; towers are never mutated.
pub fn extract_features(tower: &Tower<f32>, records: &[PairedRecord]) -> Result<FeatureSet, EvalError> {
    let mut backbone: Vec<f32> = Vec::with_capacity(records.len() * tower.backbone_dim);
    let mut projected: Vec<f32> = Vec::with_capacity(records.len() * 64);
    for chunk in records.chunks(256) {
        let frames: Vec<_> = chunk
            .iter()
            .map(|r| match tower.sensor {
                SensorKind::Gel => &r.gel,
                SensorKind::Membrane => &r.membrane,
            })
            .collect();
        let (bb, pj) = encode_batch(&frames, tower)?;
        backbone.extend_from_slice(bb.data());
        projected.extend_from_slice(pj.data());
    }
    Ok(FeatureSet {
        backbone: Tensor::from_vec(&[records.len(), tower.backbone_dim], backbone).expect("chunk sizes add up"),
        projected: Tensor::from_vec(&[records.len(), 64], projected).expect("chunk sizes add up"),
        tool_ids: records.iter().map(|r| r.grasp.tool_id).collect(),
        poses: records
            .iter()
            .map(|r| (r.grasp.y, r.grasp.z, r.grasp.theta_deg))
            .collect(),
    })
}

fn class_labels(tool_ids: &[u32], tool_set: &[u32]) -> Result<Vec<usize>, EvalError> {
    tool_ids
        .iter()
        .map(|t| {
            tool_set
                .iter()
                .position(|s| s == t)
                .ok_or(EvalError::UnknownTool(*t))
        })
        .collect()
}

fn sorted_tool_set(tool_ids: &[u32]) -> Vec<u32> {
    let mut set: Vec<u32> = tool_ids.to_vec();
    set.sort_unstable();
    set.dedup();
    set
}

/// A trained linear classification probe, including the feature choice and
/// standardization it was trained under.
pub struct TrainedClassProbe {
    pub params: ParamSet<f32>,
    pub tool_set: Vec<u32>,
    pub train_top1: f64,
    pub feature: ProbeFeature,
    pub standardizer: Standardizer,
}

/// Trains the single linear layer with full-batch Adam and cross-entropy.
pub fn train_class_probe(
    features: &FeatureSet,
    settings: &ProbeSettings,
    stream: &str,
) -> Result<TrainedClassProbe, EvalError> {
    let tool_set = sorted_tool_set(&features.tool_ids);
    let labels = class_labels(&features.tool_ids, &tool_set)?;
    let raw = probe_matrix(features, settings.feature);
    let standardizer = if settings.standardize {
        Standardizer::fit(raw)
    } else {
        Standardizer::identity(raw.shape()[1])
    };
    let x_train = standardizer.apply(raw);
    let d = x_train.shape()[1];
    let mut params = init_classifier::<f32>(d, tool_set.len(), settings.seed, stream);
    let mut adam = AdamState::new(&params);
    let adam_cfg = AdamConfig::with_lr(settings.lr);
    for _ in 0..settings.class_epochs {
        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, &params, true);
        let x = tape.input(x_train.clone());
        let logits = classifier_forward(&mut tape, &vars, x)?;
        let loss = tape.softmax_cross_entropy(logits, &labels)?;
        tape.backward(loss)?;
        let grads: Vec<Option<Tensor<f32>>> = vars.iter().map(|&v| tape.grad(v).cloned()).collect();
        adam.update(&mut params, &grads, &adam_cfg)?;
    }
    let probe = TrainedClassProbe {
        params,
        tool_set,
        train_top1: 0.0,
        feature: settings.feature,
        standardizer,
    };
    let train_top1 = eval_class_probe(&probe, features)?.top1;
    Ok(TrainedClassProbe {
        train_top1,
        ..probe
    })
}

/// Top-1 accuracy of a trained probe on a feature set.
pub fn eval_class_probe(probe: &TrainedClassProbe, features: &FeatureSet) -> Result<ClassCell, EvalError> {
    let labels = class_labels(&features.tool_ids, &probe.tool_set)?;
    let x = probe.standardizer.apply(probe_matrix(features, probe.feature));
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, &probe.params, false);
    let x = tape.input(x);
    let logits = classifier_forward(&mut tape, &vars, x)?;
    let pred = argmax_rows(tape.value(logits));
    let correct = pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
    let classes = probe.tool_set.len();
    Ok(ClassCell {
        task: "class".to_string(),
        top1: correct as f64 / labels.len() as f64,
        correct,
        total: labels.len(),
        classes,
        chance: 1.0 / classes as f64,
    })
}

/// The spec-level classification probe: train on the regime's train split
/// under `train_sensor`, evaluate top-1 on the test split under
/// `eval_sensor`.
pub fn class_probe(
    towers: &DualTowers<f32>,
    splits: &DatasetSplits,
    regime: &ProbeRegime,
    settings: &ProbeSettings,
) -> Result<ClassCell, EvalError> {
    let (train, test) = splits.pair(regime.split_pair);
    let train_features = extract_features(towers.tower(regime.train_sensor), train)?;
    let stream = format!("probe/class/{}/{}", regime.split_pair.name(), regime.train_sensor);
    let probe = train_class_probe(&train_features, settings, &stream)?;
    let test_features = extract_features(towers.tower(regime.eval_sensor), test)?;
    eval_class_probe(&probe, &test_features)
}

/// A trained pose probe: the MLP, the feature preprocessing it was trained
/// under, and the single target scale used to condition the regression.
pub struct TrainedPoseProbe {
    pub params: ParamSet<f32>,
    pub feature: ProbeFeature,
    pub standardizer: Standardizer,
    /// Pooled std of the scaled training targets; the network regresses
    /// targets divided by this, so the per-component weighting of the loss
    /// (y mm, z mm, theta/3.75) is preserved exactly.
    pub target_scale: f64,
}

/// Trains the pose MLP on a raw feature matrix (also used directly by the
/// pipeline-validity tests with injected features).
pub fn train_pose_probe_matrix(
    features: &Tensor<f32>,
    poses: &[(f32, f32, f32)],
    settings: &ProbeSettings,
    stream: &str,
) -> Result<TrainedPoseProbe, EvalError> {
    let standardizer = if settings.standardize {
        Standardizer::fit(features)
    } else {
        Standardizer::identity(features.shape()[1])
    };
    let x_train = standardizer.apply(features);
    let d = x_train.shape()[1];
    let raw_targets: Tensor<f32> = pose_targets(poses);
    let pooled: f64 = raw_targets.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>()
        / raw_targets.numel() as f64;
    let target_scale = pooled.sqrt().max(1e-6);
    let targets = raw_targets.map(|v| v / target_scale as f32);
    let mut params = init_pose_head::<f32>(d, settings.seed, stream);
    let mut adam = AdamState::new(&params);
    let adam_cfg = AdamConfig::with_lr(settings.lr);
    for _ in 0..settings.pose_epochs {
        let mut tape = Tape::new();
        let vars = bind_params(&mut tape, &params, true);
        let x = tape.input(x_train.clone());
        let t = tape.input(targets.clone());
        let pred = pose_forward(&mut tape, &vars, x)?;
        let loss = tape.mse(pred, t)?;
        tape.backward(loss)?;
        let grads: Vec<Option<Tensor<f32>>> = vars.iter().map(|&v| tape.grad(v).cloned()).collect();
        adam.update(&mut params, &grads, &adam_cfg)?;
    }
    Ok(TrainedPoseProbe {
        params,
        feature: settings.feature,
        standardizer,
        target_scale,
    })
}

/// Predicted poses (y mm, z mm, theta deg) for a raw feature matrix.
pub fn predict_poses(probe: &TrainedPoseProbe, features: &Tensor<f32>) -> Result<Vec<(f64, f64, f64)>, EvalError> {
    let x = probe.standardizer.apply(features);
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, &probe.params, false);
    let x = tape.input(x);
    let pred = pose_forward(&mut tape, &vars, x)?;
    let data = tape.value(pred).data();
    Ok((0..features.shape()[0])
        .map(|i| {
            (
                data[i * 3] as f64 * probe.target_scale,
                data[i * 3 + 1] as f64 * probe.target_scale,
                data[i * 3 + 2] as f64 * probe.target_scale * THETA_SCALE,
            )
        })
        .collect())
}

/// Signed-error summary of pose predictions against ground truth.
pub fn pose_error_summary(
    predictions: &[(f64, f64, f64)],
    poses: &[(f32, f32, f32)],
    tol: &InsertionTolerances,
) -> PoseCell {
    let n = predictions.len();
    let mut ey = Vec::with_capacity(n);
    let mut ez = Vec::with_capacity(n);
    let mut et = Vec::with_capacity(n);
    let mut trans_ok = 0usize;
    let mut theta_ok = 0usize;
    for (p, t) in predictions.iter().zip(poses) {
        let dy = p.0 - t.0 as f64;
        let dz = p.1 - t.1 as f64;
        let dt = p.2 - t.2 as f64;
        if dy.abs() <= tol.trans_mm && dz.abs() <= tol.trans_mm {
            trans_ok += 1;
        }
        if dt.abs() <= tol.theta_deg {
            theta_ok += 1;
        }
        ey.push(dy);
        ez.push(dz);
        et.push(dt);
    }
    PoseCell {
        task: "pose".to_string(),
        y_mm: crate::dataio::mean_std(&ey),
        z_mm: crate::dataio::mean_std(&ez),
        theta_deg: crate::dataio::mean_std(&et),
        frac_trans_within_3mm: trans_ok as f64 / n as f64,
        frac_theta_within_5deg: theta_ok as f64 / n as f64,
        n,
    }
}

/// The spec-level pose probe over a regime.
pub fn pose_probe(
    towers: &DualTowers<f32>,
    splits: &DatasetSplits,
    regime: &ProbeRegime,
    settings: &ProbeSettings,
) -> Result<PoseCell, EvalError> {
    let (train, test) = splits.pair(regime.split_pair);
    let train_features = extract_features(towers.tower(regime.train_sensor), train)?;
    let stream = format!("probe/pose/{}/{}", regime.split_pair.name(), regime.train_sensor);
    let probe = train_pose_probe_matrix(
        probe_matrix(&train_features, settings.feature),
        &train_features.poses,
        settings,
        &stream,
    )?;
    let test_features = extract_features(towers.tower(regime.eval_sensor), test)?;
    let predictions = predict_poses(&probe, probe_matrix(&test_features, settings.feature))?;
    Ok(pose_error_summary(
        &predictions,
        &test_features.poses,
        &InsertionTolerances::default(),
    ))
}

/// recall@1 between two projected embedding matrices whose rows are paired.
pub fn recall_from_projected(membrane: &Tensor<f32>, gel: &Tensor<f32>) -> Result<RetrievalCell, EvalError> {
    let n = membrane.shape()[0];
    if n < 2 {
        return Err(EvalError::SplitTooSmall(format!("{n} records")));
    }
    let d = membrane.shape()[1];
    let normalize = |t: &Tensor<f32>| -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0f64; n * d];
        for i in 0..n {
            let row = &t.data()[i * d..(i + 1) * d];
            let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(EvalError::Model(ModelError::ZeroVector));
            }
            for j in 0..d {
                out[i * d + j] = row[j] as f64 / norm;
            }
        }
        Ok(out)
    };
    let m = normalize(membrane)?;
    let g = normalize(gel)?;
    let recall_dir = |from: &[f64], to: &[f64]| -> f64 {
        let mut hits = 0usize;
        for i in 0..n {
            let query = &from[i * d..(i + 1) * d];
            let mut best = 0usize;
            let mut best_sim = f64::NEG_INFINITY;
            for j in 0..n {
                let cand = &to[j * d..(j + 1) * d];
                let sim: f64 = query.iter().zip(cand).map(|(a, b)| a * b).sum();
                if sim > best_sim {
                    best_sim = sim;
                    best = j;
                }
            }
            if best == i {
                hits += 1;
            }
        }
        hits as f64 / n as f64
    };
    let m2g = recall_dir(&m, &g);
    let g2m = recall_dir(&g, &m);
    Ok(RetrievalCell {
        task: "retrieval".to_string(),
        membrane_to_gel: m2g,
        gel_to_membrane: g2m,
        mean: 0.5 * (m2g + g2m),
        n_pairs: n,
    })
}

/// Cross-sensor retrieval over a paired split: for each membrane record the
/// nearest gel record by cosine over projected embeddings (and vice versa).
pub fn retrieval_recall(towers: &DualTowers<f32>, records: &[PairedRecord]) -> Result<RetrievalCell, EvalError> {
    if records.len() < 2 {
        return Err(EvalError::SplitTooSmall(format!("{} records", records.len())));
    }
    let mem = extract_features(&towers.membrane, records)?;
    let gel = extract_features(&towers.gel, records)?;
    recall_from_projected(&mem.projected, &gel.projected)
}

/// One simulated insertion attempt.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialLog {
    pub grasp_id: u32,
    pub true_tool: u32,
    pub pred_tool: u32,
    pub class_ok: bool,
    pub dy_mm: f64,
    pub dz_mm: f64,
    pub dtheta_deg: f64,
    pub pose_ok: bool,
    pub success: bool,
}

pub struct InsertionOutcome {
    pub cell: InsertionCell,
    pub trials: Vec<TrialLog>,
}

/// Simulated insertion gate: classification must be right and all three pose
/// errors inside tolerance. Probes must already be trained for the regime.
pub fn insertion_gate(
    class_probe: &TrainedClassProbe,
    pose_probe: &TrainedPoseProbe,
    towers: &DualTowers<f32>,
    eval_sensor: SensorKind,
    records: &[PairedRecord],
    tol: &InsertionTolerances,
) -> Result<InsertionOutcome, EvalError> {
    let features = extract_features(towers.tower(eval_sensor), records)?;
    let labels = class_labels(&features.tool_ids, &class_probe.tool_set)?;
    let x = class_probe.standardizer.apply(probe_matrix(&features, class_probe.feature));
    let mut tape = Tape::new();
    let vars = bind_params(&mut tape, &class_probe.params, false);
    let x = tape.input(x);
    let logits = classifier_forward(&mut tape, &vars, x)?;
    let preds = argmax_rows(tape.value(logits));
    let poses = predict_poses(pose_probe, probe_matrix(&features, pose_probe.feature))?;
    let mut trials = Vec::with_capacity(records.len());
    let (mut successes, mut class_correct) = (0usize, 0usize);
    let (mut f_class, mut f_pose, mut f_both) = (0usize, 0usize, 0usize);
    for (i, r) in records.iter().enumerate() {
        let class_ok = preds[i] == labels[i];
        let dy = poses[i].0 - r.grasp.y as f64;
        let dz = poses[i].1 - r.grasp.z as f64;
        let dt = poses[i].2 - r.grasp.theta_deg as f64;
        let pose_ok = dy.abs() <= tol.trans_mm && dz.abs() <= tol.trans_mm && dt.abs() <= tol.theta_deg;
        let success = class_ok && pose_ok;
        if success {
            successes += 1;
        }
        if class_ok {
            class_correct += 1;
        }
        match (class_ok, pose_ok) {
            (false, true) => f_class += 1,
            (true, false) => f_pose += 1,
            (false, false) => f_both += 1,
            (true, true) => {}
        }
        trials.push(TrialLog {
            grasp_id: r.grasp.grasp_id,
            true_tool: r.grasp.tool_id,
            pred_tool: class_probe.tool_set[preds[i]],
            class_ok,
            dy_mm: dy,
            dz_mm: dz,
            dtheta_deg: dt,
            pose_ok,
            success,
        });
    }
    Ok(InsertionOutcome {
        cell: InsertionCell {
            task: "insertion".to_string(),
            success_rate: successes as f64 / records.len() as f64,
            successes,
            trials: records.len(),
            class_correct,
            class_total: records.len(),
            failures_class_only: f_class,
            failures_pose_only: f_pose,
            failures_both: f_both,
        },
        trials,
    })
}

/// Settings for a full evaluation run.
#[derive(Clone, Copy, Debug)]
pub struct EvalSettings {
    pub probe: ProbeSettings,
    /// Sensor the probes train on; the other sensor is the across case.
    pub train_sensor: SensorKind,
    pub tolerances: InsertionTolerances,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            probe: ProbeSettings::default(),
            train_sensor: SensorKind::Membrane,
            tolerances: InsertionTolerances::default(),
        }
    }
}

fn other_sensor(s: SensorKind) -> SensorKind {
    match s {
        SensorKind::Gel => SensorKind::Membrane,
        SensorKind::Membrane => SensorKind::Gel,
    }
}

/// Runs every probe cell (class and pose, within and across, both split
/// pairs), retrieval, and the cross-sensor insertion gate for each method.
/// Probes are trained once per (method, split pair) and evaluated on both
/// sensors. Requires all five pretraining modes.
pub fn full_eval(
    methods: &[(String, DualTowers<f32>)],
    splits: &DatasetSplits,
    settings: &EvalSettings,
    seed: u64,
) -> Result<(FullReport, BTreeMap<String, Vec<TrialLog>>), EvalError> {
    let missing: Vec<&str> = PretrainMode::ALL
        .iter()
        .map(|m| m.name())
        .filter(|name| !methods.iter().any(|(n, _)| n == name))
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingCheckpoints(missing.join(", ")));
    }
    let mut report = FullReport::new(seed);
    let mut trial_logs = BTreeMap::new();
    for (name, towers) in methods {
        let mut method_report = MethodReport::default();
        for pair in SplitPair::ALL {
            let (train, test) = splits.pair(pair);
            let train_features = extract_features(towers.tower(settings.train_sensor), train)?;
            let class_stream = format!("probe/class/{}/{}", pair.name(), settings.train_sensor);
            let pose_stream = format!("probe/pose/{}/{}", pair.name(), settings.train_sensor);
            let cls = train_class_probe(&train_features, &settings.probe, &class_stream)?;
            let pose = train_pose_probe_matrix(
                probe_matrix(&train_features, settings.probe.feature),
                &train_features.poses,
                &settings.probe,
                &pose_stream,
            )?;
            for eval_sensor in [settings.train_sensor, other_sensor(settings.train_sensor)] {
                let regime = ProbeRegime {
                    train_sensor: settings.train_sensor,
                    eval_sensor,
                    split_pair: pair,
                };
                let test_features = extract_features(towers.tower(eval_sensor), test)?;
                let class_cell = eval_class_probe(&cls, &test_features)?;
                let predictions = predict_poses(&pose, probe_matrix(&test_features, settings.probe.feature))?;
                let pose_cell =
                    pose_error_summary(&predictions, &test_features.poses, &settings.tolerances);
                method_report.class.insert(regime.key(), class_cell);
                method_report.pose.insert(regime.key(), pose_cell);
            }
            if pair == SplitPair::UnseenTools {
                let outcome = insertion_gate(
                    &cls,
                    &pose,
                    towers,
                    other_sensor(settings.train_sensor),
                    test,
                    &settings.tolerances,
                )?;
                method_report.insertion = Some(outcome.cell);
                trial_logs.insert(name.clone(), outcome.trials);
            }
        }
        method_report.retrieval = Some(retrieval_recall(towers, &splits.probe_test)?);
        report.methods.insert(name.clone(), method_report);
    }
    Ok((report, trial_logs))
}

// ---- 2-d projection of embeddings ----

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionMethod {
    Pca,
    Tsne,
}

impl ProjectionMethod {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pca" => Some(Self::Pca),
            "tsne" => Some(Self::Tsne),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
    pub tool_id: u32,
    pub sensor: SensorKind,
    pub unseen: bool,
}

/// Projects both sensors' backbone features of the seen and unseen test
/// splits into 2-d; two points (gel, membrane) per record.
pub fn project_2d(
    towers: &DualTowers<f32>,
    seen: &[PairedRecord],
    unseen: &[PairedRecord],
    method: ProjectionMethod,
    tsne_cfg: &TsneConfig,
) -> Result<Vec<ProjectedPoint>, EvalError> {
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut meta: Vec<(u32, SensorKind, bool)> = Vec::new();
    for (records, unseen_flag) in [(seen, false), (unseen, true)] {
        for sensor in [SensorKind::Gel, SensorKind::Membrane] {
            let fs = extract_features(towers.tower(sensor), records)?;
            let d = fs.backbone.shape()[1];
            for (i, r) in records.iter().enumerate() {
                features.push(
                    fs.backbone.data()[i * d..(i + 1) * d]
                        .iter()
                        .map(|&v| v as f64)
                        .collect(),
                );
                meta.push((r.grasp.tool_id, sensor, unseen_flag));
            }
        }
    }
    let coords: Vec<[f64; 2]> = match method {
        ProjectionMethod::Pca => projection::pca_2d(&features),
        ProjectionMethod::Tsne => tsne_2d(&features, tsne_cfg)?.embedding,
    };
    Ok(coords
        .into_iter()
        .zip(meta)
        .map(|(c, (tool_id, sensor, unseen))| ProjectedPoint {
            x: c[0],
            y: c[1],
            tool_id,
            sensor,
            unseen,
        })
        .collect())
}

/// CSV with header `x,y,tool_id,sensor,unseen`.
pub fn projection_csv(points: &[ProjectedPoint]) -> String {
    let mut out = String::from("x,y,tool_id,sensor,unseen\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.x,
            p.y,
            p.tool_id,
            p.sensor,
            if p.unseen { 1 } else { 0 }
        ));
    }
    out
}
