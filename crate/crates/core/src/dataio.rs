//! Bit-exact binary formats plus the JSON manifest and report schemas.
//!
//! Split files (`CTTPDS01`) and checkpoint files (`CTTPCK01`) are flat
//! little-endian layouts with no external dependencies; golden files in the
//! repository pin the byte layout. Round-trips are exact.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::params::ParamSet;
use crate::sdf::ToolShape;
use crate::sensorsim::{
    DatasetConfig, GeneratedDataset, GraspRanges, GraspSample, PairedRecord, SensorKind,
    SensorParams, SplitCounts, TactileFrame,
};
use crate::tensor::Tensor;

pub const SPLIT_MAGIC: &[u8; 8] = b"CTTPDS01";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CTTPCK01";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated file while reading {0}")]
    Truncated(&'static str),
    #[error("file length {found} does not match header-implied {expected}")]
    LengthMismatch { expected: u64, found: u64 },
    #[error("payload checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("duplicate tensor name {0:?}")]
    DuplicateTensorName(String),
    #[error("tensor name is not valid UTF-8")]
    BadTensorName,
    #[error("records are not homogeneous in frame size")]
    MixedFrameSizes,
    #[error("empty result set; refusing to emit an empty report")]
    EmptyReport,
    #[error("manifest references missing split file {0}")]
    MissingSplitFile(PathBuf),
    #[error("split {name}: manifest count {manifest} != file header count {header}")]
    ManifestCountMismatch {
        name: String,
        manifest: u32,
        header: u32,
    },
    #[error("unknown split {0:?}")]
    UnknownSplit(String),
}

// ---- little-endian cursor helpers ----

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DataError> {
        if self.pos + n > self.buf.len() {
            return Err(DataError::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, DataError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, DataError> {
        Ok(self.take(1, what)?[0])
    }

    fn f32(&mut self, what: &'static str) -> Result<f32, DataError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32_slice(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>, DataError> {
        let raw = self.take(4 * n, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn check_magic(cursor: &mut Cursor, expected: &[u8; 8]) -> Result<(), DataError> {
    let found = cursor.take(8, "magic")?;
    if found != expected {
        return Err(DataError::BadMagic {
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    Ok(())
}

// ---- split files ----

/// Serializes records to the `CTTPDS01` layout. Empty splits produce the
/// 20-byte header alone (with the default 32x32 frame size).
pub fn split_to_bytes(records: &[PairedRecord]) -> Result<Vec<u8>, DataError> {
    let (h, w) = records
        .first()
        .map(|r| (r.gel.height, r.gel.width))
        .unwrap_or((32, 32));
    for r in records {
        if r.gel.height != h
            || r.gel.width != w
            || r.membrane.height != h
            || r.membrane.width != w
        {
            return Err(DataError::MixedFrameSizes);
        }
    }
    let mut buf = Vec::with_capacity(20 + records.len() * (24 + 16 * h * w));
    buf.extend_from_slice(SPLIT_MAGIC);
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    for r in records {
        buf.extend_from_slice(&r.grasp.tool_id.to_le_bytes());
        buf.extend_from_slice(&r.grasp.grasp_id.to_le_bytes());
        for v in [r.grasp.y, r.grasp.z, r.grasp.theta_deg, r.grasp.depth] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &r.gel.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &r.membrane.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn split_from_bytes(bytes: &[u8]) -> Result<Vec<PairedRecord>, DataError> {
    let mut c = Cursor::new(bytes);
    check_magic(&mut c, SPLIT_MAGIC)?;
    let count = c.u32("record count")?;
    let h = c.u32("height")? as usize;
    let w = c.u32("width")? as usize;
    let expected = 20u64 + count as u64 * (24 + 16 * h as u64 * w as u64);
    if bytes.len() as u64 != expected {
        return Err(DataError::LengthMismatch {
            expected,
            found: bytes.len() as u64,
        });
    }
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let tool_id = c.u32("tool id")?;
        let grasp_id = c.u32("grasp id")?;
        let y = c.f32("y")?;
        let z = c.f32("z")?;
        let theta_deg = c.f32("theta")?;
        let depth = c.f32("depth")?;
        let gel = c.f32_slice(3 * h * w, "gel frame")?;
        let membrane = c.f32_slice(h * w, "membrane frame")?;
        records.push(PairedRecord {
            grasp: GraspSample {
                tool_id,
                grasp_id,
                y,
                z,
                theta_deg,
                depth,
            },
            gel: TactileFrame {
                sensor: SensorKind::Gel,
                height: h,
                width: w,
                data: gel,
            },
            membrane: TactileFrame {
                sensor: SensorKind::Membrane,
                height: h,
                width: w,
                data: membrane,
            },
        });
    }
    Ok(records)
}

pub fn write_split(path: &Path, records: &[PairedRecord]) -> Result<(), DataError> {
    let bytes = split_to_bytes(records)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_split(path: &Path) -> Result<Vec<PairedRecord>, DataError> {
    split_from_bytes(&std::fs::read(path)?)
}

// ---- checkpoint files ----

/// Serializes named f32 tensors to the `CTTPCK01` layout, with a trailing
/// u64 checksum (sum of payload bytes mod 2^64).
pub fn checkpoint_to_bytes(params: &ParamSet<f32>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    let mut checksum: u64 = 0;
    for (name, tensor) in params.iter() {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in tensor.data() {
            let b = v.to_le_bytes();
            for byte in b {
                checksum = checksum.wrapping_add(byte as u64);
            }
            buf.extend_from_slice(&b);
        }
    }
    buf.extend_from_slice(&checksum.to_le_bytes());
    buf
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ParamSet<f32>, DataError> {
    let mut c = Cursor::new(bytes);
    check_magic(&mut c, CHECKPOINT_MAGIC)?;
    let count = c.u32("tensor count")?;
    let mut params = ParamSet::new();
    let mut checksum: u64 = 0;
    for _ in 0..count {
        let name_len = c.u16("name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| DataError::BadTensorName)?
            .to_string();
        let ndim = c.u8("ndim")? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(c.u32("dim")? as usize);
        }
        let numel: usize = dims.iter().product();
        let raw = c.take(4 * numel, "payload")?;
        for &b in raw {
            checksum = checksum.wrapping_add(b as u64);
        }
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|ch| f32::from_le_bytes(ch.try_into().unwrap()))
            .collect();
        let tensor = Tensor::from_vec(&dims, data).expect("numel matches dims");
        params
            .push(name.clone(), tensor)
            .map_err(|_| DataError::DuplicateTensorName(name))?;
    }
    let stored = c.u64("checksum")?;
    if c.pos != bytes.len() {
        return Err(DataError::LengthMismatch {
            expected: c.pos as u64,
            found: bytes.len() as u64,
        });
    }
    if stored != checksum {
        return Err(DataError::ChecksumMismatch {
            stored,
            computed: checksum,
        });
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ParamSet<f32>) -> Result<(), DataError> {
    std::fs::write(path, checkpoint_to_bytes(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet<f32>, DataError> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

// ---- manifest ----

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitEntry {
    pub name: String,
    pub file: String,
    pub count: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub image_size: usize,
    pub tools: Vec<ToolShape>,
    pub splits: Vec<SplitEntry>,
    pub sensor: SensorParams,
    pub ranges: GraspRanges,
    pub counts: SplitCounts,
}

/// Writes all split files plus `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, ds: &GeneratedDataset) -> Result<Manifest, DataError> {
    std::fs::create_dir_all(dir)?;
    let mut splits = Vec::new();
    for (name, records) in &ds.splits {
        let file = format!("{name}.bin");
        write_split(&dir.join(&file), records)?;
        splits.push(SplitEntry {
            name: name.clone(),
            file,
            count: records.len() as u32,
        });
    }
    let manifest = Manifest {
        version: 1,
        seed: ds.config.seed,
        image_size: ds.config.sensor.img_size,
        tools: ds.tools.clone(),
        splits,
        sensor: ds.config.sensor.clone(),
        ranges: ds.config.ranges.clone(),
        counts: ds.config.counts.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), json.as_bytes())?;
    Ok(manifest)
}

/// Loads and validates `manifest.json`: every referenced split file must
/// exist and its header count must match the manifest.
pub fn load_manifest(dir: &Path) -> Result<Manifest, DataError> {
    let manifest: Manifest = serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
    for entry in &manifest.splits {
        let path = dir.join(&entry.file);
        if !path.exists() {
            return Err(DataError::MissingSplitFile(path));
        }
        let bytes = std::fs::read(&path)?;
        let mut c = Cursor::new(&bytes);
        check_magic(&mut c, SPLIT_MAGIC)?;
        let header = c.u32("record count")?;
        if header != entry.count {
            return Err(DataError::ManifestCountMismatch {
                name: entry.name.clone(),
                manifest: entry.count,
                header,
            });
        }
    }
    Ok(manifest)
}

/// Reads one split of a dataset directory by its manifest name.
pub fn read_split_by_name(
    dir: &Path,
    manifest: &Manifest,
    name: &str,
) -> Result<Vec<PairedRecord>, DataError> {
    let entry = manifest
        .splits
        .iter()
        .find(|s| s.name == name)
        .ok_or_else(|| DataError::UnknownSplit(name.to_string()))?;
    read_split(&dir.join(&entry.file))
}

/// Reconstructs the generator config recorded in a manifest.
pub fn manifest_dataset_config(manifest: &Manifest) -> DatasetConfig {
    DatasetConfig {
        seed: manifest.seed,
        counts: manifest.counts.clone(),
        ranges: manifest.ranges.clone(),
        sensor: manifest.sensor.clone(),
    }
}

// ---- report schema ----

/// Arithmetic mean and population standard deviation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassCell {
    pub task: String,
    pub top1: f64,
    pub correct: usize,
    pub total: usize,
    pub classes: usize,
    pub chance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoseCell {
    pub task: String,
    pub y_mm: MeanStd,
    pub z_mm: MeanStd,
    pub theta_deg: MeanStd,
    pub frac_trans_within_3mm: f64,
    pub frac_theta_within_5deg: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RetrievalCell {
    pub task: String,
    pub membrane_to_gel: f64,
    pub gel_to_membrane: f64,
    pub mean: f64,
    pub n_pairs: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InsertionCell {
    pub task: String,
    pub success_rate: f64,
    pub successes: usize,
    pub trials: usize,
    pub class_correct: usize,
    pub class_total: usize,
    pub failures_class_only: usize,
    pub failures_pose_only: usize,
    pub failures_both: usize,
}

/// All evaluation cells for one pretraining method. Regime keys look like
/// `"within/unseen-grasps"` / `"across/unseen-tools"`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MethodReport {
    pub class: BTreeMap<String, ClassCell>,
    pub pose: BTreeMap<String, PoseCell>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalCell>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub insertion: Option<InsertionCell>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FullReport {
    pub schema: String,
    pub seed: u64,
    pub methods: BTreeMap<String, MethodReport>,
}

impl FullReport {
    pub fn new(seed: u64) -> Self {
        Self {
            schema: "cttp-report-v1".to_string(),
            seed,
            methods: BTreeMap::new(),
        }
    }
}

/// Renders the report as JSON. Refuses to emit an empty report.
pub fn emit_report(report: &FullReport) -> Result<String, DataError> {
    if report.methods.is_empty() {
        return Err(DataError::EmptyReport);
    }
    Ok(serde_json::to_string_pretty(report)?)
}
