//! Training loops for contrastive pretraining and the baseline modes.
//!
//! All modes share one parameter layout: the full dual-tower checkpoint
//! (both encoders and both projection heads) plus mode-specific heads. The
//! optimizer sees every tensor each step, but gradient only flows into what
//! the mode's loss touches, so inactive parts stay bit-identical to their
//! initialization. Heads are dropped from the returned checkpoint.

use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, AutodiffError, Tape, Var};
use crate::model::{
    bind_params, classifier_forward, encoder_forward, flatten_frames, frames_tensor,
    infonce_loss, init_classifier, init_pose_head, init_recon_head, pose_forward, pose_targets,
    projection_forward, recon_forward, ContrastiveConfig, DualTowers, ModelError,
    DEFAULT_BACKBONE_DIM,
};
use crate::params::ParamSet;
use crate::rng::StreamRng;
use crate::sensorsim::{PairedRecord, SensorKind};
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum PretrainError {
    #[error("split has {records} records, fewer than one batch of {batch}")]
    SplitTooSmall { records: usize, batch: usize },
    #[error("contrastive training needs batch_size >= 2, got {0}")]
    BatchTooSmall(usize),
    #[error("mode {0} is not a baseline mode")]
    NotBaseline(String),
    #[error("mode {0} is not the contrastive mode")]
    NotCttp(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Adam(#[from] crate::autodiff::AdamError),
    #[error(transparent)]
    Eval(#[from] Box<crate::eval::EvalError>),
}

impl From<crate::eval::EvalError> for PretrainError {
    fn from(e: crate::eval::EvalError) -> Self {
        PretrainError::Eval(Box::new(e))
    }
}

/// Pretraining objective selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PretrainMode {
    Cttp,
    Recon,
    SupClass,
    SupPose,
    Random,
}

impl PretrainMode {
    pub const ALL: [PretrainMode; 5] = [
        PretrainMode::Cttp,
        PretrainMode::Recon,
        PretrainMode::SupClass,
        PretrainMode::SupPose,
        PretrainMode::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PretrainMode::Cttp => "cttp",
            PretrainMode::Recon => "recon",
            PretrainMode::SupClass => "sup-class",
            PretrainMode::SupPose => "sup-pose",
            PretrainMode::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl std::fmt::Display for PretrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub mode: PretrainMode,
    pub batch_size: usize,
    /// Desk default 30; the full-length reference setting is 100.
    pub epochs: usize,
    pub lr: f64,
    pub tau: f64,
    pub symmetric: bool,
    pub backbone_dim: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            mode: PretrainMode::Cttp,
            batch_size: 128,
            epochs: 30,
            lr: 3e-4,
            tau: 0.07,
            symmetric: true,
            backbone_dim: DEFAULT_BACKBONE_DIM,
            seed: 42,
        }
    }
}

/// Per-step losses plus per-epoch means, serialized next to checkpoints.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LossTrace {
    pub mode: String,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub steps: Vec<f64>,
    pub epoch_means: Vec<f64>,
}

pub struct PretrainOutput {
    pub towers: DualTowers<f32>,
    pub trace: LossTrace,
}

/// Shuffles record indices for one epoch (stream `train-shuffle/<epoch>`)
/// and partitions them into full batches, dropping the remainder so every
/// anchor sees the same number of in-batch negatives.
pub fn build_batches(
    n_records: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>, PretrainError> {
    if n_records < batch_size {
        return Err(PretrainError::SplitTooSmall {
            records: n_records,
            batch: batch_size,
        });
    }
    let mut indices: Vec<usize> = (0..n_records).collect();
    let mut rng = StreamRng::new(seed, &format!("train-shuffle/{epoch}"));
    rng.shuffle(&mut indices);
    indices.truncate(n_records - n_records % batch_size);
    Ok(indices.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// One batch of paired frames with supervision labels.
pub struct BatchPairs {
    pub gel: Tensor<f32>,
    pub membrane: Tensor<f32>,
    pub tool_ids: Vec<usize>,
    pub poses: Vec<(f32, f32, f32)>,
}

pub fn gather_batch(records: &[PairedRecord], idx: &[usize]) -> Result<BatchPairs, ModelError> {
    let gel_frames: Vec<_> = idx.iter().map(|&i| &records[i].gel).collect();
    let mem_frames: Vec<_> = idx.iter().map(|&i| &records[i].membrane).collect();
    Ok(BatchPairs {
        gel: frames_tensor(&gel_frames, SensorKind::Gel)?,
        membrane: frames_tensor(&mem_frames, SensorKind::Membrane)?,
        tool_ids: idx.iter().map(|&i| records[i].grasp.tool_id as usize).collect(),
        poses: idx
            .iter()
            .map(|&i| {
                let g = &records[i].grasp;
                (g.y, g.z, g.theta_deg)
            })
            .collect(),
    })
}

// Parameter layout offsets within the assembled training set. The dual-tower
// checkpoint contributes 24 tensors in a fixed order.
const GEL_ENC: std::ops::Range<usize> = 0..8;
const GEL_PROJ: std::ops::Range<usize> = 8..12;
const MEM_ENC: std::ops::Range<usize> = 12..20;
const MEM_PROJ: std::ops::Range<usize> = 20..24;
const TOWER_TENSORS: usize = 24;

struct ModeHeads {
    gel: ParamSet<f32>,
    membrane: ParamSet<f32>,
}

fn init_heads(cfg: &PretrainConfig, img_size: usize) -> Option<ModeHeads> {
    let d = cfg.backbone_dim;
    match cfg.mode {
        PretrainMode::Cttp | PretrainMode::Random => None,
        PretrainMode::Recon => Some(ModeHeads {
            gel: init_recon_head(d, SensorKind::Gel, img_size, cfg.seed, "init/head/gel"),
            membrane: init_recon_head(d, SensorKind::Membrane, img_size, cfg.seed, "init/head/membrane"),
        }),
        PretrainMode::SupClass => Some(ModeHeads {
            gel: init_classifier(d, 9, cfg.seed, "init/head/gel"),
            membrane: init_classifier(d, 9, cfg.seed, "init/head/membrane"),
        }),
        PretrainMode::SupPose => Some(ModeHeads {
            gel: init_pose_head(d, cfg.seed, "init/head/gel"),
            membrane: init_pose_head(d, cfg.seed, "init/head/membrane"),
        }),
    }
}

/// Contrastive pretraining of both towers. Errors if `cfg.mode` is not cttp.
pub fn pretrain_cttp(
    cfg: &PretrainConfig,
    records: &[PairedRecord],
) -> Result<PretrainOutput, PretrainError> {
    if cfg.mode != PretrainMode::Cttp {
        return Err(PretrainError::NotCttp(cfg.mode.name().to_string()));
    }
    if cfg.batch_size < 2 {
        return Err(PretrainError::BatchTooSmall(cfg.batch_size));
    }
    run_training(cfg, records)
}

/// Baseline pretraining (random / recon / sup-class / sup-pose). Each tower
/// trains on its own sensor's frames only; heads are discarded afterwards.
/// Errors if `cfg.mode` is cttp.
pub fn pretrain_baseline(
    cfg: &PretrainConfig,
    records: &[PairedRecord],
) -> Result<PretrainOutput, PretrainError> {
    if cfg.mode == PretrainMode::Cttp {
        return Err(PretrainError::NotBaseline(cfg.mode.name().to_string()));
    }
    run_training(cfg, records)
}

/// Dispatches on `cfg.mode`.
pub fn pretrain(cfg: &PretrainConfig, records: &[PairedRecord]) -> Result<PretrainOutput, PretrainError> {
    if cfg.mode == PretrainMode::Cttp {
        pretrain_cttp(cfg, records)
    } else {
        pretrain_baseline(cfg, records)
    }
}

fn run_training(cfg: &PretrainConfig, records: &[PairedRecord]) -> Result<PretrainOutput, PretrainError> {
    let towers = DualTowers::<f32>::init(cfg.backbone_dim, cfg.seed);
    let mut trace = LossTrace {
        mode: cfg.mode.name().to_string(),
        batch_size: cfg.batch_size,
        ..LossTrace::default()
    };
    if cfg.mode == PretrainMode::Random {
        return Ok(PretrainOutput { towers, trace });
    }
    let img_size = records.first().map(|r| r.gel.height).unwrap_or(32);
    let heads = init_heads(cfg, img_size);
    let mut train = towers.to_params();
    if let Some(h) = &heads {
        train.extend_prefixed("heads/gel", &h.gel).expect("unique prefixes");
        train.extend_prefixed("heads/membrane", &h.membrane).expect("unique prefixes");
    }
    let head_len = heads.as_ref().map_or(0, |h| h.gel.len());
    let gel_head = TOWER_TENSORS..TOWER_TENSORS + head_len;
    let mem_head = TOWER_TENSORS + head_len..TOWER_TENSORS + 2 * head_len;

    let mut adam = AdamState::new(&train);
    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let nce = ContrastiveConfig {
        tau: cfg.tau,
        symmetric: cfg.symmetric,
    };
    trace.steps_per_epoch = records.len() / cfg.batch_size;
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let batches = build_batches(records.len(), cfg.batch_size, cfg.seed, epoch)?;
        let mut epoch_sum = 0.0;
        for batch_idx in &batches {
            let batch = gather_batch(records, batch_idx)?;
            let mut tape = Tape::new();
            let vars = bind_params(&mut tape, &train, true);
            let loss = build_loss(cfg, &mut tape, &vars, &batch, &nce, &gel_head, &mem_head)
                .map_err(|e| match e {
                    PretrainError::Autodiff(AutodiffError::NonFinite { .. }) => {
                        PretrainError::NonFiniteLoss { step }
                    }
                    PretrainError::Model(ModelError::Autodiff(AutodiffError::NonFinite { .. })) => {
                        PretrainError::NonFiniteLoss { step }
                    }
                    other => other,
                })?;
            let loss_value = tape.value(loss).scalar_value() as f64;
            if !loss_value.is_finite() {
                return Err(PretrainError::NonFiniteLoss { step });
            }
            tape.backward(loss)?;
            let grads: Vec<Option<Tensor<f32>>> = vars.iter().map(|&v| tape.grad(v).cloned()).collect();
            adam.update(&mut train, &grads, &adam_cfg)?;
            trace.steps.push(loss_value);
            epoch_sum += loss_value;
            step += 1;
        }
        trace.epoch_means.push(epoch_sum / batches.len() as f64);
    }
    let towers = DualTowers::from_params(&train)?;
    Ok(PretrainOutput { towers, trace })
}

#[allow(clippy::too_many_arguments)]
fn build_loss(
    cfg: &PretrainConfig,
    tape: &mut Tape<f32>,
    vars: &[Var],
    batch: &BatchPairs,
    nce: &ContrastiveConfig,
    gel_head: &std::ops::Range<usize>,
    mem_head: &std::ops::Range<usize>,
) -> Result<Var, PretrainError> {
    let gel_in = tape.input(batch.gel.clone());
    let mem_in = tape.input(batch.membrane.clone());
    let gel_bb = encoder_forward(tape, &vars[GEL_ENC], gel_in)?;
    let mem_bb = encoder_forward(tape, &vars[MEM_ENC], mem_in)?;
    match cfg.mode {
        PretrainMode::Cttp => {
            let z_gel = projection_forward(tape, &vars[GEL_PROJ], gel_bb)?;
            let z_mem = projection_forward(tape, &vars[MEM_PROJ], mem_bb)?;
            Ok(infonce_loss(tape, z_gel, z_mem, nce)?)
        }
        PretrainMode::Recon => {
            let gel_target = tape.input(flatten_frames(&batch.gel));
            let mem_target = tape.input(flatten_frames(&batch.membrane));
            let gel_rec = recon_forward(tape, &vars[gel_head.clone()], gel_bb)?;
            let mem_rec = recon_forward(tape, &vars[mem_head.clone()], mem_bb)?;
            let lg = tape.mse(gel_rec, gel_target)?;
            let lm = tape.mse(mem_rec, mem_target)?;
            Ok(tape.add(lg, lm)?)
        }
        PretrainMode::SupClass => {
            let gel_logits = classifier_forward(tape, &vars[gel_head.clone()], gel_bb)?;
            let mem_logits = classifier_forward(tape, &vars[mem_head.clone()], mem_bb)?;
            let lg = tape.softmax_cross_entropy(gel_logits, &batch.tool_ids)?;
            let lm = tape.softmax_cross_entropy(mem_logits, &batch.tool_ids)?;
            Ok(tape.add(lg, lm)?)
        }
        PretrainMode::SupPose => {
            let targets = tape.input(pose_targets(&batch.poses));
            let gel_pred = pose_forward(tape, &vars[gel_head.clone()], gel_bb)?;
            let mem_pred = pose_forward(tape, &vars[mem_head.clone()], mem_bb)?;
            let lg = tape.mse(gel_pred, targets)?;
            let lm = tape.mse(mem_pred, targets)?;
            Ok(tape.add(lg, lm)?)
        }
        PretrainMode::Random => unreachable!("random mode never reaches the training loop"),
    }
}

// ---- batch-size sweep ----

/// One row of the batch-size comparison: classification within and across
/// sensors (unseen-grasps regime) plus cross-sensor retrieval recall@1.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub batch_size: usize,
    pub within_top1: f64,
    pub across_top1: f64,
    pub recall_at_1: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema: String,
    pub rows: Vec<SweepRow>,
    /// Whether alignment at batch 256 stayed at or below batch 128; an
    /// expectation that is logged, never a gate. `None` when either size
    /// is absent from the sweep.
    pub alignment_256_not_above_128: Option<bool>,
}

pub struct SweepOutput {
    pub report: SweepReport,
    /// Per-size training outputs in the order the sizes were given.
    pub runs: Vec<(usize, PretrainOutput)>,
}

fn sweep_eval_row(
    batch_size: usize,
    towers: &crate::model::DualTowers<f32>,
    splits: &crate::eval::DatasetSplits,
    settings: &crate::eval::EvalSettings,
) -> Result<SweepRow, PretrainError> {
    use crate::eval::{class_probe, retrieval_recall, ProbeRegime, SplitPair};
    let other = match settings.train_sensor {
        SensorKind::Gel => SensorKind::Membrane,
        SensorKind::Membrane => SensorKind::Gel,
    };
    let within = class_probe(
        towers,
        splits,
        &ProbeRegime {
            train_sensor: settings.train_sensor,
            eval_sensor: settings.train_sensor,
            split_pair: SplitPair::UnseenGrasps,
        },
        &settings.probe,
    )?;
    let across = class_probe(
        towers,
        splits,
        &ProbeRegime {
            train_sensor: settings.train_sensor,
            eval_sensor: other,
            split_pair: SplitPair::UnseenGrasps,
        },
        &settings.probe,
    )?;
    let recall = retrieval_recall(towers, &splits.probe_test)?;
    Ok(SweepRow {
        batch_size,
        within_top1: within.top1,
        across_top1: across.top1,
        recall_at_1: recall.mean,
    })
}

/// Trains one contrastive model per batch size (shared seed, so every run
/// starts from identical towers) and evaluates each with the classification
/// probe and retrieval. `jobs` > 1 runs sizes on separate threads; results
/// are identical either way since each run is self-contained and seeded.
pub fn batch_size_sweep(
    sizes: &[usize],
    base: &PretrainConfig,
    splits: &crate::eval::DatasetSplits,
    settings: &crate::eval::EvalSettings,
    jobs: usize,
) -> Result<SweepOutput, PretrainError> {
    if base.mode != PretrainMode::Cttp {
        return Err(PretrainError::NotCttp(base.mode.name().to_string()));
    }
    if let Some(&bad) = sizes.iter().find(|&&s| s < 2) {
        return Err(PretrainError::BatchTooSmall(bad));
    }
    let jobs = jobs.max(1).min(sizes.len().max(1));
    let mut slots: Vec<Option<Result<(usize, PretrainOutput, SweepRow), PretrainError>>> =
        (0..sizes.len()).map(|_| None).collect();
    if jobs <= 1 {
        for (i, &size) in sizes.iter().enumerate() {
            let cfg = PretrainConfig {
                batch_size: size,
                ..base.clone()
            };
            slots[i] = Some(pretrain_cttp(&cfg, &splits.pretrain).and_then(|out| {
                let row = sweep_eval_row(size, &out.towers, splits, settings)?;
                Ok((size, out, row))
            }));
        }
    } else {
        let slot_refs = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for worker in 0..jobs {
                let slot_refs = &slot_refs;
                scope.spawn(move || {
                    for (i, &size) in sizes.iter().enumerate() {
                        if i % jobs != worker {
                            continue;
                        }
                        let cfg = PretrainConfig {
                            batch_size: size,
                            ..base.clone()
                        };
                        let res = pretrain_cttp(&cfg, &splits.pretrain).and_then(|out| {
                            let row = sweep_eval_row(size, &out.towers, splits, settings)?;
                            Ok((size, out, row))
                        });
                        slot_refs.lock().unwrap()[i] = Some(res);
                    }
                });
            }
        });
    }
    let mut rows = Vec::with_capacity(sizes.len());
    let mut runs = Vec::with_capacity(sizes.len());
    for slot in slots {
        let (size, out, row) = slot.expect("every size was processed")?;
        rows.push(row);
        runs.push((size, out));
    }
    let recall_of = |target: usize| rows.iter().find(|r| r.batch_size == target).map(|r| r.recall_at_1);
    let alignment = match (recall_of(256), recall_of(128)) {
        (Some(r256), Some(r128)) => Some(r256 <= r128),
        _ => None,
    };
    Ok(SweepOutput {
        report: SweepReport {
            schema: "cttp-sweep-v1".to_string(),
            rows,
            alignment_256_not_above_128: alignment,
        },
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensorsim::{generate_dataset, DatasetConfig, SplitCounts};

    fn tiny_records(per_tool: usize) -> Vec<PairedRecord> {
        let cfg = DatasetConfig {
            counts: SplitCounts {
                pretrain: per_tool,
                probe_train: 1,
                probe_test: 1,
                unseen_tools_train: 1,
                unseen_tools_test: 1,
            },
            ..DatasetConfig::default()
        };
        generate_dataset(&cfg).unwrap().splits.remove(0).1
    }

    fn tiny_config(mode: PretrainMode) -> PretrainConfig {
        PretrainConfig {
            mode,
            batch_size: 6,
            epochs: 2,
            backbone_dim: 16,
            seed: 7,
            ..PretrainConfig::default()
        }
    }

    #[test]
    fn batch_arithmetic_drops_remainder() {
        let batches = build_batches(1800, 128, 1, 0).unwrap();
        assert_eq!(batches.len(), 14);
        assert!(batches.iter().all(|b| b.len() == 128));
        let used: usize = batches.iter().map(|b| b.len()).sum();
        assert_eq!(used, 1792);
    }

    #[test]
    fn batches_are_a_partition_and_deterministic() {
        let a = build_batches(50, 8, 3, 2).unwrap();
        let b = build_batches(50, 8, 3, 2).unwrap();
        assert_eq!(a, b);
        let mut seen = std::collections::HashSet::new();
        for batch in &a {
            for &i in batch {
                assert!(seen.insert(i), "index {i} repeated within the epoch");
            }
        }
        let c = build_batches(50, 8, 3, 3).unwrap();
        assert_ne!(a, c, "different epochs should shuffle differently");
    }

    #[test]
    fn split_smaller_than_batch_errors() {
        assert!(matches!(
            build_batches(5, 8, 1, 0),
            Err(PretrainError::SplitTooSmall { .. })
        ));
    }

    #[test]
    fn cttp_needs_batch_of_two() {
        let cfg = PretrainConfig {
            batch_size: 1,
            ..tiny_config(PretrainMode::Cttp)
        };
        assert!(matches!(
            pretrain_cttp(&cfg, &tiny_records(1)),
            Err(PretrainError::BatchTooSmall(1))
        ));
    }

    #[test]
    fn mode_dispatch_guards() {
        let records = tiny_records(1);
        assert!(matches!(
            pretrain_baseline(&tiny_config(PretrainMode::Cttp), &records),
            Err(PretrainError::NotBaseline(_))
        ));
        assert!(matches!(
            pretrain_cttp(&tiny_config(PretrainMode::Random), &records),
            Err(PretrainError::NotCttp(_))
        ));
    }

    #[test]
    fn random_mode_equals_seeded_init() {
        let cfg = tiny_config(PretrainMode::Random);
        let out = pretrain(&cfg, &tiny_records(1)).unwrap();
        let expect = DualTowers::<f32>::init(cfg.backbone_dim, cfg.seed);
        assert_eq!(out.towers, expect);
        assert!(out.trace.steps.is_empty());
    }

    #[test]
    fn cttp_deterministic_across_runs() {
        let records = tiny_records(2);
        let cfg = tiny_config(PretrainMode::Cttp);
        let a = pretrain(&cfg, &records).unwrap();
        let b = pretrain(&cfg, &records).unwrap();
        assert_eq!(a.towers, b.towers);
        assert_eq!(a.trace.steps, b.trace.steps);
        // traces equal to the last bit
        for (x, y) in a.trace.steps.iter().zip(&b.trace.steps) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn initial_cttp_loss_near_log_batch() {
        let records = tiny_records(2); // 18 records
        let cfg = PretrainConfig {
            batch_size: 16,
            epochs: 1,
            ..tiny_config(PretrainMode::Cttp)
        };
        let out = pretrain(&cfg, &records).unwrap();
        let first = out.trace.steps[0];
        let expect = 16f64.ln();
        assert!(
            (first - expect).abs() < 0.15 * expect,
            "first loss {first}, expected about {expect}"
        );
    }

    #[test]
    fn inactive_parts_stay_at_init() {
        let records = tiny_records(1);
        let cfg = PretrainConfig {
            epochs: 1,
            ..tiny_config(PretrainMode::Recon)
        };
        let out = pretrain(&cfg, &records).unwrap();
        let init = DualTowers::<f32>::init(cfg.backbone_dim, cfg.seed);
        // projections are not part of the reconstruction objective
        assert_eq!(out.towers.gel.projection, init.gel.projection);
        assert_eq!(out.towers.membrane.projection, init.membrane.projection);
        // encoders are, and must have moved
        assert_ne!(out.towers.gel.encoder, init.gel.encoder);
        assert_ne!(out.towers.membrane.encoder, init.membrane.encoder);
    }

    #[test]
    fn supervised_modes_reduce_loss() {
        let records = tiny_records(3); // 27 records
        for mode in [PretrainMode::SupClass, PretrainMode::SupPose, PretrainMode::Recon] {
            let cfg = PretrainConfig {
                batch_size: 9,
                epochs: 10,
                lr: 3e-3,
                ..tiny_config(mode)
            };
            let out = pretrain(&cfg, &records).unwrap();
            let first = out.trace.epoch_means[0];
            let last = *out.trace.epoch_means.last().unwrap();
            assert!(
                last < first,
                "{mode}: epoch means did not decrease ({first} -> {last})"
            );
            assert!(out.trace.steps.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn sweep_rejects_tiny_sizes_and_runs_degenerate_case() {
        use crate::eval::{DatasetSplits, EvalSettings, ProbeSettings};
        let cfg = DatasetConfig {
            counts: SplitCounts {
                pretrain: 2,
                probe_train: 2,
                probe_test: 2,
                unseen_tools_train: 2,
                unseen_tools_test: 2,
            },
            ..DatasetConfig::default()
        };
        let mut ds = generate_dataset(&cfg).unwrap();
        let splits = DatasetSplits {
            pretrain: std::mem::take(&mut ds.splits[0].1),
            probe_train: std::mem::take(&mut ds.splits[1].1),
            probe_test: std::mem::take(&mut ds.splits[2].1),
            unseen_tools_train: std::mem::take(&mut ds.splits[3].1),
            unseen_tools_test: std::mem::take(&mut ds.splits[4].1),
        };
        let base = PretrainConfig {
            epochs: 1,
            backbone_dim: 16,
            ..tiny_config(PretrainMode::Cttp)
        };
        let eval = EvalSettings {
            probe: ProbeSettings {
                class_epochs: 5,
                pose_epochs: 5,
                ..ProbeSettings::default()
            },
            ..EvalSettings::default()
        };
        assert!(matches!(
            batch_size_sweep(&[8, 1], &base, &splits, &eval, 1),
            Err(PretrainError::BatchTooSmall(1))
        ));
        // degenerate single-size sweep reproduces the plain run
        let sweep = batch_size_sweep(&[6], &base, &splits, &eval, 1).unwrap();
        assert_eq!(sweep.report.rows.len(), 1);
        assert_eq!(sweep.report.rows[0].batch_size, 6);
        assert!(sweep.report.alignment_256_not_above_128.is_none());
        let plain = pretrain_cttp(&base, &splits.pretrain).unwrap();
        assert_eq!(sweep.runs[0].1.towers, plain.towers);
    }

    #[test]
    fn epoch_one_steps_match_floor_division() {
        let records = tiny_records(2); // 18
        let cfg = PretrainConfig {
            batch_size: 4,
            epochs: 1,
            ..tiny_config(PretrainMode::Cttp)
        };
        let out = pretrain(&cfg, &records).unwrap();
        assert_eq!(out.trace.steps.len(), 18 / 4);
        assert_eq!(out.trace.steps_per_epoch, 4);
    }
}
