//! Command implementations and exit-code mapping.

use std::path::{Path, PathBuf};
use std::time::Instant;

use cttp_core::config::{parse_sizes, ConfigError, ExperimentConfig};
use cttp_core::dataio::{self, DataError};
use cttp_core::eval::{
    self, class_probe, full_eval, insertion_gate, pose_probe, retrieval_recall, DatasetSplits,
    EvalError, ProbeRegime, ProjectionMethod, SplitPair,
};
use cttp_core::eval::projection::TsneConfig;
use cttp_core::model::{DualTowers, ModelError};
use cttp_core::pretrain::{self, batch_size_sweep, PretrainError, PretrainMode, PretrainOutput};
use cttp_core::sensorsim::{generate_dataset, SensorKind};

use crate::{EvalArgs, GenArgs, GradcheckArgs, PaperArgs, PretrainArgs, ProjectArgs, SweepArgs};

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Data(DataError),
    Numeric(String),
    Usage(String),
    Io(std::io::Error),
    GradCheckFailed,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Io(_) => 3,
            CliError::Numeric(_) | CliError::GradCheckFailed => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "configuration: {e}"),
            CliError::Data(e) => write!(f, "data: {e}"),
            CliError::Numeric(e) => write!(f, "numeric: {e}"),
            CliError::Usage(e) => write!(f, "usage: {e}"),
            CliError::Io(e) => write!(f, "io: {e}"),
            CliError::GradCheckFailed => write!(f, "gradient check failed"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<PretrainError> for CliError {
    fn from(e: PretrainError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Data(d) => CliError::Data(d),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

fn resolve_config(file: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = file {
        cfg.apply_file(path)?;
    }
    cfg.apply_env()?;
    Ok(cfg)
}

/// Errors on an existing non-empty directory unless `force` is set.
fn prepare_out_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() && dir.read_dir()?.next().is_some() && !force {
        return Err(CliError::Usage(format!(
            "output directory {} is not empty (use --force to overwrite)",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write_resolved(cfg: &ExperimentConfig, path: &Path) -> Result<(), CliError> {
    std::fs::write(path, cfg.resolved_text())?;
    Ok(())
}

fn parse_sensor(s: &str) -> Result<SensorKind, CliError> {
    match s {
        "gel" => Ok(SensorKind::Gel),
        "membrane" => Ok(SensorKind::Membrane),
        other => Err(CliError::Usage(format!("unknown sensor {other:?} (gel|membrane)"))),
    }
}

fn load_splits(dir: &Path) -> Result<DatasetSplits, CliError> {
    let manifest = dataio::load_manifest(dir)?;
    Ok(DatasetSplits::load(dir, &manifest)?)
}

fn save_pretrain_output(out_dir: &Path, output: &PretrainOutput) -> Result<(), CliError> {
    dataio::save_checkpoint(&out_dir.join("checkpoint.bin"), &output.towers.to_params())?;
    let trace = serde_json::to_string_pretty(&output.trace).map_err(DataError::from)?;
    std::fs::write(out_dir.join("loss_trace.json"), trace)?;
    Ok(())
}

// ---- commands ----

pub fn gen(args: GenArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(args.config.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.set("dataset", "seed", &seed.to_string())?;
    }
    prepare_out_dir(&args.out, args.force)?;
    let started = Instant::now();
    let ds = generate_dataset(&cfg.dataset_config()).map_err(|e| CliError::Numeric(e.to_string()))?;
    let manifest = dataio::write_dataset(&args.out, &ds)?;
    write_resolved(&cfg, &args.out.join("config.resolved"))?;
    let total: u32 = manifest.splits.iter().map(|s| s.count).sum();
    println!(
        "generated {total} records over {} splits into {} ({:.1}s)",
        manifest.splits.len(),
        args.out.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn pretrain(args: PretrainArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(args.config.config.as_deref())?;
    cfg.set("pretrain", "mode", &args.mode)?;
    if let Some(v) = args.epochs {
        cfg.set("pretrain", "epochs", &v.to_string())?;
    }
    if let Some(v) = args.batch_size {
        cfg.set("pretrain", "batch_size", &v.to_string())?;
    }
    if let Some(v) = args.lr {
        cfg.set("pretrain", "lr", &v.to_string())?;
    }
    if let Some(v) = args.tau {
        cfg.set("model", "tau", &v.to_string())?;
    }
    if let Some(v) = args.seed {
        cfg.set("pretrain", "seed", &v.to_string())?;
    }
    prepare_out_dir(&args.out, args.force)?;
    let splits = load_splits(&args.data)?;
    let started = Instant::now();
    let output = pretrain::pretrain(&cfg.pretrain_config(), &splits.pretrain)?;
    save_pretrain_output(&args.out, &output)?;
    write_resolved(&cfg, &args.out.join("config.resolved"))?;
    println!(
        "pretrained mode={} for {} steps in {:.1}s (final epoch mean loss {})",
        cfg.mode,
        output.trace.steps.len(),
        started.elapsed().as_secs_f64(),
        output
            .trace
            .epoch_means
            .last()
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "n/a".to_string()),
    );
    Ok(())
}

fn load_towers(path: &Path) -> Result<DualTowers<f32>, CliError> {
    let params = dataio::load_checkpoint(path)?;
    Ok(DualTowers::from_params(&params)?)
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args.config.config.as_deref())?;
    let splits = load_splits(&args.data)?;
    let settings = cfg.eval_settings();
    let named: Vec<(Option<String>, PathBuf)> = args
        .ckpts
        .iter()
        .map(|spec| match spec.split_once('=') {
            Some((mode, path)) => (Some(mode.to_string()), PathBuf::from(path)),
            None => (None, PathBuf::from(spec)),
        })
        .collect();
    let json = if let Some(task) = &args.task {
        if named.len() != 1 || named[0].0.is_some() {
            return Err(CliError::Usage(
                "single-cell evaluation takes exactly one bare --ckpt PATH".into(),
            ));
        }
        let towers = load_towers(&named[0].1)?;
        single_cell(task, &args, &towers, &splits, &cfg)?
    } else {
        let mut methods = Vec::new();
        for (mode, path) in &named {
            let Some(mode) = mode else {
                return Err(CliError::Usage(
                    "full evaluation takes --ckpt MODE=PATH entries (or pass --task for one cell)".into(),
                ));
            };
            if PretrainMode::parse(mode).is_none() {
                return Err(CliError::Usage(format!("unknown mode {mode:?} in --ckpt")));
            }
            methods.push((mode.clone(), load_towers(path)?));
        }
        let (report, trials) = full_eval(&methods, &splits, &settings, cfg.dataset_seed)?;
        let trials_json = serde_json::to_string_pretty(&trials).map_err(DataError::from)?;
        std::fs::write(trials_path(&args.report), trials_json)?;
        dataio::emit_report(&report)?
    };
    if let Some(parent) = args.report.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&args.report, &json)?;
    write_resolved(&cfg, &resolved_sibling(&args.report))?;
    println!("wrote {}", args.report.display());
    Ok(())
}

fn trials_path(report: &Path) -> PathBuf {
    let mut name = report.file_stem().unwrap_or_default().to_os_string();
    name.push(".trials.json");
    report.with_file_name(name)
}

fn resolved_sibling(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".config.resolved");
    output.with_file_name(name)
}

fn single_cell(
    task: &str,
    args: &EvalArgs,
    towers: &DualTowers<f32>,
    splits: &DatasetSplits,
    cfg: &ExperimentConfig,
) -> Result<String, CliError> {
    let settings = cfg.eval_settings();
    let train_sensor = match &args.train_sensor {
        Some(s) => parse_sensor(s)?,
        None => settings.train_sensor,
    };
    let default_eval = if task == "insertion" {
        match train_sensor {
            SensorKind::Gel => SensorKind::Membrane,
            SensorKind::Membrane => SensorKind::Gel,
        }
    } else {
        train_sensor
    };
    let eval_sensor = match &args.eval_sensor {
        Some(s) => parse_sensor(s)?,
        None => default_eval,
    };
    let default_split = if task == "insertion" { "unseen-tools" } else { "unseen-grasps" };
    let split_name = args.split.as_deref().unwrap_or(default_split);
    let split_pair = SplitPair::parse(split_name)
        .ok_or_else(|| CliError::Usage(format!("unknown split {split_name:?} (unseen-grasps|unseen-tools)")))?;
    let regime = ProbeRegime {
        train_sensor,
        eval_sensor,
        split_pair,
    };
    let mut cell = serde_json::Map::new();
    cell.insert("task".into(), task.into());
    cell.insert("train_sensor".into(), train_sensor.name().into());
    cell.insert("eval_sensor".into(), eval_sensor.name().into());
    cell.insert("split".into(), split_pair.name().into());
    cell.insert("regime".into(), regime.key().into());
    let result = match task {
        "class" => serde_json::to_value(class_probe(towers, splits, &regime, &settings.probe)?)
            .map_err(DataError::from)?,
        "pose" => serde_json::to_value(pose_probe(towers, splits, &regime, &settings.probe)?)
            .map_err(DataError::from)?,
        "retrieval" => {
            let (_, test) = splits.pair(split_pair);
            serde_json::to_value(retrieval_recall(towers, test)?).map_err(DataError::from)?
        }
        "insertion" => {
            let (train, test) = splits.pair(split_pair);
            let train_features = eval::extract_features(towers.tower(train_sensor), train)?;
            let class_stream = format!("probe/class/{}/{}", split_pair.name(), train_sensor);
            let pose_stream = format!("probe/pose/{}/{}", split_pair.name(), train_sensor);
            let cls = eval::train_class_probe(&train_features, &settings.probe, &class_stream)?;
            let pose = eval::train_pose_probe_matrix(
                &train_features.backbone,
                &train_features.poses,
                &settings.probe,
                &pose_stream,
            )?;
            let outcome = insertion_gate(&cls, &pose, towers, eval_sensor, test, &settings.tolerances)?;
            cell.insert(
                "trials".into(),
                serde_json::to_value(&outcome.trials).map_err(DataError::from)?,
            );
            serde_json::to_value(&outcome.cell).map_err(DataError::from)?
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown task {other:?} (class|pose|retrieval|insertion)"
            )))
        }
    };
    cell.insert("result".into(), result);
    Ok(serde_json::to_string_pretty(&serde_json::Value::Object(cell)).map_err(DataError::from)?)
}

pub fn sweep(args: SweepArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(args.config.config.as_deref())?;
    if let Some(sizes) = &args.sizes {
        if parse_sizes(sizes).is_none() {
            return Err(CliError::Usage(format!(
                "--sizes {sizes:?} must be strictly comma-separated positive integers"
            )));
        }
        cfg.set("sweep", "sizes", sizes)?;
    }
    prepare_out_dir(&args.out, args.force)?;
    let splits = load_splits(&args.data)?;
    let mut base = cfg.pretrain_config();
    base.mode = PretrainMode::Cttp;
    let settings = cfg.eval_settings();
    let started = Instant::now();
    let sweep = batch_size_sweep(&cfg.sweep_sizes, &base, &splits, &settings, args.jobs)?;
    for (size, output) in &sweep.runs {
        let dir = args.out.join(format!("bs{size}"));
        std::fs::create_dir_all(&dir)?;
        save_pretrain_output(&dir, output)?;
    }
    let report_json = serde_json::to_string_pretty(&sweep.report).map_err(DataError::from)?;
    std::fs::write(args.out.join("sweep_report.json"), &report_json)?;
    write_resolved(&cfg, &args.out.join("config.resolved"))?;
    for row in &sweep.report.rows {
        println!(
            "batch {:>4}: within {:.3}  across {:.3}  recall@1 {:.3}",
            row.batch_size, row.within_top1, row.across_top1, row.recall_at_1
        );
    }
    match sweep.report.alignment_256_not_above_128 {
        Some(true) => println!("alignment expectation met: recall@1 at 256 did not exceed 128"),
        Some(false) => println!("alignment expectation NOT met this run: recall@1 at 256 exceeded 128 (logged, not a gate)"),
        None => {}
    }
    println!("sweep finished in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

pub fn project(args: ProjectArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args.config.config.as_deref())?;
    let splits = load_splits(&args.data)?;
    let towers = load_towers(&args.ckpt)?;
    let method = ProjectionMethod::parse(&args.method)
        .ok_or_else(|| CliError::Usage(format!("unknown method {:?} (pca|tsne)", args.method)))?;
    let points = eval::project_2d(
        &towers,
        &splits.probe_test,
        &splits.unseen_tools_test,
        method,
        &TsneConfig::default(),
    )?;
    let csv = eval::projection_csv(&points);
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&args.out, csv)?;
    write_resolved(&cfg, &resolved_sibling(&args.out))?;
    println!("wrote {} points to {}", points.len(), args.out.display());
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let suite = cttp_core::verify::standard_grad_checks(1e-3, 1e-4);
    for case in &suite.cases {
        println!(
            "{:<32} max rel err {:>12.3e}  {}",
            case.name,
            case.max_rel_err,
            if case.pass { "PASS" } else { "FAIL" }
        );
    }
    if let Some(path) = &args.report {
        let json = serde_json::to_string_pretty(&suite).map_err(DataError::from)?;
        std::fs::write(path, json)?;
    }
    if suite.passed() {
        println!("all {} gradient checks passed at tol {:.0e}", suite.cases.len(), suite.tol);
        Ok(())
    } else {
        Err(CliError::GradCheckFailed)
    }
}

pub fn paper(args: PaperArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args.config.config.as_deref())?;
    prepare_out_dir(&args.out, args.force)?;
    let overall = Instant::now();

    println!("[1/5] generating dataset");
    let ds = generate_dataset(&cfg.dataset_config()).map_err(|e| CliError::Numeric(e.to_string()))?;
    let data_dir = args.out.join("dataset");
    std::fs::create_dir_all(&data_dir)?;
    dataio::write_dataset(&data_dir, &ds)?;
    let splits = load_splits(&data_dir)?;

    println!("[2/5] pretraining all modes");
    let mut methods = Vec::new();
    for mode in PretrainMode::ALL {
        let started = Instant::now();
        let mut pc = cfg.pretrain_config();
        pc.mode = mode;
        let output = pretrain::pretrain(&pc, &splits.pretrain)?;
        let dir = args.out.join(format!("pretrain-{mode}"));
        std::fs::create_dir_all(&dir)?;
        save_pretrain_output(&dir, &output)?;
        println!("  {mode}: {:.1}s", started.elapsed().as_secs_f64());
        methods.push((mode.name().to_string(), output.towers));
    }

    println!("[3/5] full evaluation");
    let settings = cfg.eval_settings();
    let (report, trials) = full_eval(&methods, &splits, &settings, cfg.dataset_seed)?;
    std::fs::write(args.out.join("report.json"), dataio::emit_report(&report)?)?;
    std::fs::write(
        args.out.join("report.trials.json"),
        serde_json::to_string_pretty(&trials).map_err(DataError::from)?,
    )?;

    println!("[4/5] batch-size sweep {:?}", cfg.sweep_sizes);
    let mut base = cfg.pretrain_config();
    base.mode = PretrainMode::Cttp;
    let sweep = batch_size_sweep(&cfg.sweep_sizes, &base, &splits, &settings, args.jobs)?;
    let sweep_dir = args.out.join("sweep");
    std::fs::create_dir_all(&sweep_dir)?;
    for (size, output) in &sweep.runs {
        let dir = sweep_dir.join(format!("bs{size}"));
        std::fs::create_dir_all(&dir)?;
        save_pretrain_output(&dir, output)?;
    }
    std::fs::write(
        sweep_dir.join("sweep_report.json"),
        serde_json::to_string_pretty(&sweep.report).map_err(DataError::from)?,
    )?;

    println!("[5/5] projections");
    let cttp_towers = &methods.iter().find(|(n, _)| n == "cttp").expect("cttp trained").1;
    for (method, name) in [(ProjectionMethod::Pca, "pca"), (ProjectionMethod::Tsne, "tsne")] {
        let points = eval::project_2d(
            cttp_towers,
            &splits.probe_test,
            &splits.unseen_tools_test,
            method,
            &TsneConfig::default(),
        )?;
        std::fs::write(args.out.join(format!("projection_{name}.csv")), eval::projection_csv(&points))?;
    }
    write_resolved(&cfg, &args.out.join("config.resolved"))?;
    println!(
        "study complete in {:.1}s; report at {}",
        overall.elapsed().as_secs_f64(),
        args.out.join("report.json").display()
    );
    Ok(())
}
