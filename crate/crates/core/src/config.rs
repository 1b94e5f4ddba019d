//! Flat sectioned key=value experiment configuration.
//!
//! Precedence: built-in defaults < config file < `CTTP_*` environment
//! overrides < command-line flags. Unknown sections or keys are errors, not
//! warnings. Every command writes its fully resolved config next to its
//! outputs; re-running from that file reproduces the run.
//!
//! Environment override naming: `CTTP_<SECTION>_<KEY>` with the key
//! uppercased, e.g. `CTTP_PRETRAIN_BATCH_SIZE=64`.

use crate::eval::{EvalSettings, InsertionTolerances, ProbeSettings};
use crate::pretrain::{PretrainConfig, PretrainMode};
use crate::sensorsim::{DatasetConfig, GraspRanges, SensorKind, SensorParams, SplitCounts};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: cannot parse {text:?}: expected `[section]` or `key = value`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: unknown section [{0}]", .section)]
    UnknownSection { section: String, line: usize },
    #[error("line {line}: key {key:?} outside any section")]
    KeyOutsideSection { key: String, line: usize },
    #[error("unknown key {section}.{key}")]
    UnknownKey { section: String, key: String },
    #[error("bad value for {section}.{key}: {value:?} ({expected})")]
    BadValue {
        section: String,
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("environment variable {0} does not name a known config key")]
    UnknownEnvKey(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    // dataset
    pub dataset_seed: u64,
    pub pretrain_grasps: usize,
    pub probe_train_grasps: usize,
    pub probe_test_grasps: usize,
    pub unseen_train_grasps: usize,
    pub unseen_test_grasps: usize,
    pub noise_std: f64,
    pub membrane_sigma: f64,
    pub gel_sigma: f64,
    pub falloff_width_mm: f64,
    pub y_abs_mm: f64,
    pub theta_abs_deg: f64,
    pub depth_min_mm: f64,
    pub depth_max_mm: f64,
    // model
    pub backbone_dim: usize,
    pub tau: f64,
    pub symmetric: bool,
    // pretrain
    pub mode: PretrainMode,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub train_seed: u64,
    // probes
    pub probe_lr: f64,
    pub class_epochs: usize,
    pub pose_epochs: usize,
    pub train_sensor: SensorKind,
    pub probe_seed: u64,
    // eval
    pub tol_trans_mm: f64,
    pub tol_theta_deg: f64,
    // sweep
    pub sweep_sizes: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_seed: 42,
            pretrain_grasps: 200,
            probe_train_grasps: 100,
            probe_test_grasps: 50,
            unseen_train_grasps: 100,
            unseen_test_grasps: 50,
            noise_std: 0.01,
            membrane_sigma: 2.5,
            gel_sigma: 0.8,
            falloff_width_mm: 1.5,
            y_abs_mm: 8.0,
            theta_abs_deg: 30.0,
            depth_min_mm: 0.5,
            depth_max_mm: 2.0,
            backbone_dim: 128,
            tau: 0.07,
            symmetric: true,
            mode: PretrainMode::Cttp,
            batch_size: 128,
            epochs: 30,
            lr: 3e-4,
            train_seed: 42,
            probe_lr: 0.01,
            class_epochs: 200,
            pose_epochs: 300,
            train_sensor: SensorKind::Membrane,
            probe_seed: 42,
            tol_trans_mm: 3.0,
            tol_theta_deg: 5.0,
            sweep_sizes: vec![8, 32, 128, 256],
        }
    }
}

pub const SECTIONS: [&str; 6] = ["dataset", "model", "pretrain", "probes", "eval", "sweep"];

fn parse_t<T: std::str::FromStr>(
    section: &str,
    key: &str,
    value: &str,
    expected: &'static str,
) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::BadValue {
        section: section.to_string(),
        key: key.to_string(),
        value: value.to_string(),
        expected,
    })
}

/// Strict comma-separated positive integers; rejects empty items such as a
/// trailing comma.
pub fn parse_sizes(value: &str) -> Option<Vec<usize>> {
    let parts: Vec<&str> = value.split(',').collect();
    if parts.is_empty() {
        return None;
    }
    let mut out = Vec::with_capacity(parts.len());
    for p in parts {
        let p = p.trim();
        if p.is_empty() {
            return None;
        }
        out.push(p.parse().ok()?);
    }
    Some(out)
}

impl ExperimentConfig {
    /// Applies one `section.key = value` assignment.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let bad = |expected: &'static str| ConfigError::BadValue {
            section: section.to_string(),
            key: key.to_string(),
            value: value.to_string(),
            expected,
        };
        match (section, key) {
            ("dataset", "seed") => self.dataset_seed = parse_t(section, key, v, "u64")?,
            ("dataset", "pretrain_grasps") => self.pretrain_grasps = parse_t(section, key, v, "usize")?,
            ("dataset", "probe_train_grasps") => self.probe_train_grasps = parse_t(section, key, v, "usize")?,
            ("dataset", "probe_test_grasps") => self.probe_test_grasps = parse_t(section, key, v, "usize")?,
            ("dataset", "unseen_train_grasps") => self.unseen_train_grasps = parse_t(section, key, v, "usize")?,
            ("dataset", "unseen_test_grasps") => self.unseen_test_grasps = parse_t(section, key, v, "usize")?,
            ("dataset", "noise_std") => self.noise_std = parse_t(section, key, v, "f64")?,
            ("dataset", "membrane_sigma") => self.membrane_sigma = parse_t(section, key, v, "f64")?,
            ("dataset", "gel_sigma") => self.gel_sigma = parse_t(section, key, v, "f64")?,
            ("dataset", "falloff_width_mm") => self.falloff_width_mm = parse_t(section, key, v, "f64")?,
            ("dataset", "y_abs_mm") => self.y_abs_mm = parse_t(section, key, v, "f64")?,
            ("dataset", "theta_abs_deg") => self.theta_abs_deg = parse_t(section, key, v, "f64")?,
            ("dataset", "depth_min_mm") => self.depth_min_mm = parse_t(section, key, v, "f64")?,
            ("dataset", "depth_max_mm") => self.depth_max_mm = parse_t(section, key, v, "f64")?,
            ("model", "backbone_dim") => self.backbone_dim = parse_t(section, key, v, "usize")?,
            ("model", "tau") => self.tau = parse_t(section, key, v, "f64")?,
            ("model", "symmetric") => self.symmetric = parse_t(section, key, v, "bool")?,
            ("pretrain", "mode") => {
                self.mode = PretrainMode::parse(v)
                    .ok_or_else(|| bad("one of cttp|recon|sup-class|sup-pose|random"))?
            }
            ("pretrain", "batch_size") => self.batch_size = parse_t(section, key, v, "usize")?,
            ("pretrain", "epochs") => self.epochs = parse_t(section, key, v, "usize")?,
            ("pretrain", "lr") => self.lr = parse_t(section, key, v, "f64")?,
            ("pretrain", "seed") => self.train_seed = parse_t(section, key, v, "u64")?,
            ("probes", "lr") => self.probe_lr = parse_t(section, key, v, "f64")?,
            ("probes", "class_epochs") => self.class_epochs = parse_t(section, key, v, "usize")?,
            ("probes", "pose_epochs") => self.pose_epochs = parse_t(section, key, v, "usize")?,
            ("probes", "train_sensor") => {
                self.train_sensor = match v {
                    "gel" => SensorKind::Gel,
                    "membrane" => SensorKind::Membrane,
                    _ => return Err(bad("gel|membrane")),
                }
            }
            ("probes", "seed") => self.probe_seed = parse_t(section, key, v, "u64")?,
            ("eval", "tol_trans_mm") => self.tol_trans_mm = parse_t(section, key, v, "f64")?,
            ("eval", "tol_theta_deg") => self.tol_theta_deg = parse_t(section, key, v, "f64")?,
            ("sweep", "sizes") => {
                self.sweep_sizes = parse_sizes(v).ok_or_else(|| bad("comma-separated positive integers"))?
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    section: section.to_string(),
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Parses a config file's text on top of the current values.
    pub fn apply_file_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let stripped = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if stripped.is_empty() {
                continue;
            }
            if let Some(name) = stripped.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim();
                if !SECTIONS.contains(&name) {
                    return Err(ConfigError::UnknownSection {
                        section: name.to_string(),
                        line,
                    });
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = stripped.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line,
                    text: stripped.to_string(),
                });
            };
            let key = key.trim();
            let Some(section) = section.as_deref() else {
                return Err(ConfigError::KeyOutsideSection {
                    key: key.to_string(),
                    line,
                });
            };
            self.set(section, key, value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &std::path::Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)?;
        self.apply_file_text(&text)
    }

    /// Applies every `CTTP_<SECTION>_<KEY>` environment variable; an
    /// unrecognized variable with that prefix is an error.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        let mut vars: Vec<(String, String)> = std::env::vars()
            .filter(|(k, _)| k.starts_with("CTTP_"))
            .collect();
        vars.sort();
        for (name, value) in vars {
            let rest = &name["CTTP_".len()..];
            let Some((section, key)) = rest.split_once('_') else {
                return Err(ConfigError::UnknownEnvKey(name));
            };
            let section = section.to_lowercase();
            let key = key.to_lowercase();
            if !SECTIONS.contains(&section.as_str()) {
                return Err(ConfigError::UnknownEnvKey(name));
            }
            self.set(&section, &key, &value).map_err(|e| match e {
                ConfigError::UnknownKey { .. } => ConfigError::UnknownEnvKey(name.clone()),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Canonical resolved text: every key in a fixed order with a short
    /// description. Parsing this text reproduces the config exactly.
    pub fn resolved_text(&self) -> String {
        format!(
            "# Resolved experiment configuration. Re-running any command with\n\
             # --config pointing here reproduces the run bit for bit.\n\
             \n\
             [dataset]\n\
             seed = {}                  # master seed for data generation streams\n\
             pretrain_grasps = {}      # grasps per training tool in the pretrain split\n\
             probe_train_grasps = {}\n\
             probe_test_grasps = {}\n\
             unseen_train_grasps = {}  # grasps per held-out tool, probe training side\n\
             unseen_test_grasps = {}\n\
             noise_std = {}            # sensor noise std, both sensors\n\
             membrane_sigma = {}       # membrane blur sigma, px\n\
             gel_sigma = {}            # gel blur sigma, px\n\
             falloff_width_mm = {}     # indentation falloff outside the shape\n\
             y_abs_mm = {}             # |y|,|z| translation range\n\
             theta_abs_deg = {}        # |theta| rotation range\n\
             depth_min_mm = {}\n\
             depth_max_mm = {}\n\
             \n\
             [model]\n\
             backbone_dim = {}         # pre-projection feature width\n\
             tau = {}                  # contrastive temperature\n\
             symmetric = {}            # average both InfoNCE directions\n\
             \n\
             [pretrain]\n\
             mode = {}                 # cttp|recon|sup-class|sup-pose|random\n\
             batch_size = {}\n\
             epochs = {}               # desk default 30; full-length setting is 100\n\
             lr = {}\n\
             seed = {}                 # init and shuffle streams\n\
             \n\
             [probes]\n\
             lr = {}                   # probe optimizer step size\n\
             class_epochs = {}         # full-batch steps for the linear probe\n\
             pose_epochs = {}          # full-batch steps for the pose probe\n\
             train_sensor = {}         # probes train here; the other sensor is the across case\n\
             seed = {}\n\
             \n\
             [eval]\n\
             tol_trans_mm = {}         # insertion gate translation tolerance\n\
             tol_theta_deg = {}        # insertion gate orientation tolerance\n\
             \n\
             [sweep]\n\
             sizes = {}\n",
            self.dataset_seed,
            self.pretrain_grasps,
            self.probe_train_grasps,
            self.probe_test_grasps,
            self.unseen_train_grasps,
            self.unseen_test_grasps,
            self.noise_std,
            self.membrane_sigma,
            self.gel_sigma,
            self.falloff_width_mm,
            self.y_abs_mm,
            self.theta_abs_deg,
            self.depth_min_mm,
            self.depth_max_mm,
            self.backbone_dim,
            self.tau,
            self.symmetric,
            self.mode,
            self.batch_size,
            self.epochs,
            self.lr,
            self.train_seed,
            self.probe_lr,
            self.class_epochs,
            self.pose_epochs,
            self.train_sensor,
            self.probe_seed,
            self.tol_trans_mm,
            self.tol_theta_deg,
            self.sweep_sizes
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(","),
        )
    }

    // ---- conversions into module configs ----

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            seed: self.dataset_seed,
            counts: SplitCounts {
                pretrain: self.pretrain_grasps,
                probe_train: self.probe_train_grasps,
                probe_test: self.probe_test_grasps,
                unseen_tools_train: self.unseen_train_grasps,
                unseen_tools_test: self.unseen_test_grasps,
            },
            ranges: GraspRanges {
                y_abs_mm: self.y_abs_mm,
                theta_abs_deg: self.theta_abs_deg,
                depth_min_mm: self.depth_min_mm,
                depth_max_mm: self.depth_max_mm,
            },
            sensor: SensorParams {
                noise_std: self.noise_std,
                membrane_sigma_px: self.membrane_sigma,
                gel_sigma_px: self.gel_sigma,
                falloff_width_mm: self.falloff_width_mm,
                ..SensorParams::default()
            },
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            mode: self.mode,
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            tau: self.tau,
            symmetric: self.symmetric,
            backbone_dim: self.backbone_dim,
            seed: self.train_seed,
        }
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            probe: ProbeSettings {
                lr: self.probe_lr,
                class_epochs: self.class_epochs,
                pose_epochs: self.pose_epochs,
                seed: self.probe_seed,
            },
            train_sensor: self.train_sensor,
            tolerances: InsertionTolerances {
                trans_mm: self.tol_trans_mm,
                theta_deg: self.tol_theta_deg,
            },
        }
    }
}
