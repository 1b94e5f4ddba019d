//! Paired synthetic tactile data.
//!
//! A grasp presses a tool cross-section into a soft surface; the resulting
//! indentation height field drives two very different sensor models:
//!
//! * `membrane` — a depth sensor: heavy Gaussian blur of the height field
//!   (one channel, millimetres).
//! * `gel` — a photometric sensor: light blur, surface normals, and three
//!   directional lights 120 degrees apart mapped to RGB.
//!
//! Both frames of a [`PairedRecord`] come from the same [`GraspSample`], so
//! pairing is exact by construction. Noise is drawn from a per-record seeded
//! substream, making records independent of generation order.

use serde::{Deserialize, Serialize};

use crate::rng::StreamRng;
use crate::sdf::{all_tools, eval_sdf, SdfNode, ToolShape};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("no tool ids supplied to the grasp sampler")]
    NoTools,
    #[error("unknown tool id {0}")]
    UnknownTool(u32),
}

/// Which simulated sensor produced a frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    Gel,
    Membrane,
}

impl SensorKind {
    pub fn channels(self) -> usize {
        match self {
            SensorKind::Gel => 3,
            SensorKind::Membrane => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SensorKind::Gel => "gel",
            SensorKind::Membrane => "membrane",
        }
    }
}

impl std::fmt::Display for SensorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ground-truth grasp: tool identity plus SE(2) pose and indentation depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspSample {
    pub tool_id: u32,
    /// Unique within a dataset; splits are disjoint by construction.
    pub grasp_id: u32,
    /// Translation along image x, millimetres.
    pub y: f32,
    /// Translation along image y, millimetres.
    pub z: f32,
    /// In-plane rotation, degrees.
    pub theta_deg: f32,
    /// Indentation depth, millimetres.
    pub depth: f32,
}

/// One sensor reading: channels x H x W, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TactileFrame {
    pub sensor: SensorKind,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl TactileFrame {
    pub fn channels(&self) -> usize {
        self.sensor.channels()
    }
}

/// The paired observation: both sensors at the identical grasp.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedRecord {
    pub grasp: GraspSample,
    pub gel: TactileFrame,
    pub membrane: TactileFrame,
}

/// Geometry and photometric constants of both sensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorParams {
    pub img_size: usize,
    pub pixel_pitch_mm: f64,
    /// Indentation falloff width outside the shape boundary, millimetres.
    pub falloff_width_mm: f64,
    pub membrane_sigma_px: f64,
    pub gel_sigma_px: f64,
    /// Gaussian noise std applied to both sensors' outputs.
    pub noise_std: f64,
    pub gel_base: f64,
    pub gel_gain: f64,
    /// z component of the (unnormalized) light directions.
    pub light_z: f64,
    /// Light azimuths for the R, G, B channels, degrees.
    pub light_phases_deg: [f64; 3],
}

impl Default for SensorParams {
    fn default() -> Self {
        Self {
            img_size: 32,
            pixel_pitch_mm: 1.0,
            falloff_width_mm: 1.5,
            membrane_sigma_px: 2.5,
            gel_sigma_px: 0.8,
            noise_std: 0.01,
            gel_base: 0.35,
            gel_gain: 1.5,
            light_z: 0.4,
            light_phases_deg: [0.0, 120.0, 240.0],
        }
    }
}

/// Uniform sampling ranges for grasp parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraspRanges {
    pub y_abs_mm: f64,
    pub theta_abs_deg: f64,
    pub depth_min_mm: f64,
    pub depth_max_mm: f64,
}

impl Default for GraspRanges {
    fn default() -> Self {
        Self {
            y_abs_mm: 8.0,
            theta_abs_deg: 30.0,
            depth_min_mm: 0.5,
            depth_max_mm: 2.0,
        }
    }
}

/// Renders the indentation height field (millimetres) for one grasp.
///
/// Pixel centers sit at `(i + 0.5 - size/2) * pitch`; the tool frame is
/// reached by undoing the grasp translation and rotation, and the height is
/// `depth * clamp(1 - sdf/w, 0, 1)` with falloff width `w`.
pub fn render_heightfield(grasp: &GraspSample, sdf: &SdfNode, params: &SensorParams) -> Vec<f64> {
    let n = params.img_size;
    let half = n as f64 / 2.0 - 0.5;
    let theta = (grasp.theta_deg as f64).to_radians();
    let (cos_t, sin_t) = (theta.cos(), theta.sin());
    let depth = grasp.depth as f64;
    let w = params.falloff_width_mm;
    let mut out = vec![0.0f64; n * n];
    if depth == 0.0 {
        return out;
    }
    for row in 0..n {
        let pz = (row as f64 - half) * params.pixel_pitch_mm - grasp.z as f64;
        for col in 0..n {
            let py = (col as f64 - half) * params.pixel_pitch_mm - grasp.y as f64;
            // rotate by -theta into the tool frame
            let qx = cos_t * py + sin_t * pz;
            let qy = -sin_t * py + cos_t * pz;
            let s = eval_sdf(sdf, qx, qy);
            out[row * n + col] = depth * (1.0 - s / w).clamp(0.0, 1.0);
        }
    }
    out
}

/// Separable Gaussian blur with replicate boundary, kernel radius ceil(3σ),
/// kernel normalized to unit sum.
pub fn gaussian_blur(src: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    assert_eq!(src.len(), width * height);
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for k in -radius..=radius {
        kernel.push((-((k * k) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }
    let mut tmp = vec![0.0f64; width * height];
    for row in 0..height {
        for col in 0..width {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let c = (col as isize + ki as isize - radius).clamp(0, width as isize - 1);
                acc += k * src[row * width + c as usize];
            }
            tmp[row * width + col] = acc;
        }
    }
    let mut out = vec![0.0f64; width * height];
    for row in 0..height {
        for col in 0..width {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let r = (row as isize + ki as isize - radius).clamp(0, height as isize - 1);
                acc += k * tmp[r as usize * width + col];
            }
            out[row * width + col] = acc;
        }
    }
    out
}

/// Membrane sensor: blurred height field plus seeded noise, floored at zero.
pub fn render_membrane(h: &[f64], params: &SensorParams, rng: &mut StreamRng) -> TactileFrame {
    let n = params.img_size;
    let blurred = gaussian_blur(h, n, n, params.membrane_sigma_px);
    let data = blurred
        .iter()
        .map(|&v| (v + params.noise_std * rng.normal()).max(0.0) as f32)
        .collect();
    TactileFrame {
        sensor: SensorKind::Membrane,
        height: n,
        width: n,
        data,
    }
}

/// Gel sensor: photometric shading of the lightly blurred height field under
/// three directional lights, one per RGB channel, plus seeded noise.
pub fn render_gel(h: &[f64], params: &SensorParams, rng: &mut StreamRng) -> TactileFrame {
    let n = params.img_size;
    let g = gaussian_blur(h, n, n, params.gel_sigma_px);
    let pitch = params.pixel_pitch_mm;
    let grad = |row: usize, col: usize| -> (f64, f64) {
        let gx = if col == 0 {
            (g[row * n + 1] - g[row * n]) / pitch
        } else if col == n - 1 {
            (g[row * n + n - 1] - g[row * n + n - 2]) / pitch
        } else {
            (g[row * n + col + 1] - g[row * n + col - 1]) / (2.0 * pitch)
        };
        let gy = if row == 0 {
            (g[n + col] - g[col]) / pitch
        } else if row == n - 1 {
            (g[(n - 1) * n + col] - g[(n - 2) * n + col]) / pitch
        } else {
            (g[(row + 1) * n + col] - g[(row - 1) * n + col]) / (2.0 * pitch)
        };
        (gx, gy)
    };
    let lights: Vec<[f64; 3]> = params
        .light_phases_deg
        .iter()
        .map(|phi| {
            let phi = phi.to_radians();
            let v = [phi.cos(), phi.sin(), params.light_z];
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / norm, v[1] / norm, v[2] / norm]
        })
        .collect();
    let mut data = vec![0.0f32; 3 * n * n];
    let mut shaded = vec![0.0f64; 3 * n * n];
    for row in 0..n {
        for col in 0..n {
            let (gx, gy) = grad(row, col);
            let inv = 1.0 / (gx * gx + gy * gy + 1.0).sqrt();
            let normal = [-gx * inv, -gy * inv, inv];
            for (c, light) in lights.iter().enumerate() {
                let ndl = normal[0] * light[0] + normal[1] * light[1] + normal[2] * light[2];
                // flat-surface reference: n0 = (0,0,1)
                let rest = light[2];
                let v = (params.gel_base + params.gel_gain * (ndl - rest)).clamp(0.0, 1.0);
                shaded[c * n * n + row * n + col] = v;
            }
        }
    }
    // noise is drawn pixel-by-pixel in channel-major order
    for (i, v) in shaded.iter().enumerate() {
        data[i] = (v + params.noise_std * rng.normal()).clamp(0.0, 1.0) as f32;
    }
    TactileFrame {
        sensor: SensorKind::Gel,
        height: n,
        width: n,
        data,
    }
}

/// Renders both sensors for one grasp; noise comes from the per-record
/// substream `("noise", grasp_id)` so output is order-independent.
pub fn render_record(
    grasp: &GraspSample,
    sdf: &SdfNode,
    params: &SensorParams,
    seed: u64,
) -> PairedRecord {
    let h = render_heightfield(grasp, sdf, params);
    let mut rng = StreamRng::new_indexed(seed, "noise", grasp.grasp_id as u64);
    let gel = render_gel(&h, params, &mut rng);
    let membrane = render_membrane(&h, params, &mut rng);
    PairedRecord {
        grasp: *grasp,
        gel,
        membrane,
    }
}

/// Draws `n_per_tool` uniform grasps for every tool id, tagging each with a
/// unique grasp id from `next_grasp_id`.
pub fn sample_grasps(
    tool_ids: &[u32],
    n_per_tool: usize,
    ranges: &GraspRanges,
    rng: &mut StreamRng,
    next_grasp_id: &mut u32,
) -> Result<Vec<GraspSample>, SimError> {
    if tool_ids.is_empty() {
        return Err(SimError::NoTools);
    }
    let mut out = Vec::with_capacity(tool_ids.len() * n_per_tool);
    for &tool_id in tool_ids {
        for _ in 0..n_per_tool {
            let grasp_id = *next_grasp_id;
            *next_grasp_id += 1;
            out.push(GraspSample {
                tool_id,
                grasp_id,
                y: rng.uniform(-ranges.y_abs_mm, ranges.y_abs_mm) as f32,
                z: rng.uniform(-ranges.y_abs_mm, ranges.y_abs_mm) as f32,
                theta_deg: rng.uniform(-ranges.theta_abs_deg, ranges.theta_abs_deg) as f32,
                depth: rng.uniform(ranges.depth_min_mm, ranges.depth_max_mm) as f32,
            });
        }
    }
    Ok(out)
}

/// Per-split grasp counts (per tool).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub pretrain: usize,
    pub probe_train: usize,
    pub probe_test: usize,
    pub unseen_tools_train: usize,
    pub unseen_tools_test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            pretrain: 200,
            probe_train: 100,
            probe_test: 50,
            unseen_tools_train: 100,
            unseen_tools_test: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub counts: SplitCounts,
    pub ranges: GraspRanges,
    pub sensor: SensorParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            counts: SplitCounts::default(),
            ranges: GraspRanges::default(),
            sensor: SensorParams::default(),
        }
    }
}

/// A fully rendered dataset, ready to be written by `dataio`.
pub struct GeneratedDataset {
    pub config: DatasetConfig,
    pub tools: Vec<ToolShape>,
    /// (split name, records); names are fixed, see [`SPLIT_NAMES`].
    pub splits: Vec<(String, Vec<PairedRecord>)>,
}

pub const SPLIT_NAMES: [&str; 5] = [
    "pretrain",
    "probe-train",
    "probe-test",
    "unseen-tools-train",
    "unseen-tools-test",
];

/// Generates all five splits: three on the 9 training tools (pretrain plus
/// the two probe splits, all with fresh grasps) and two on the 3 held-out
/// tools. Grasp ids are globally unique, so splits are disjoint by
/// construction.
pub fn generate_dataset(config: &DatasetConfig) -> Result<GeneratedDataset, SimError> {
    let tools = all_tools();
    let train_ids: Vec<u32> = (0..9).collect();
    let heldout_ids: Vec<u32> = (9..12).collect();
    let plan: [(&str, &[u32], usize); 5] = [
        (SPLIT_NAMES[0], &train_ids, config.counts.pretrain),
        (SPLIT_NAMES[1], &train_ids, config.counts.probe_train),
        (SPLIT_NAMES[2], &train_ids, config.counts.probe_test),
        (SPLIT_NAMES[3], &heldout_ids, config.counts.unseen_tools_train),
        (SPLIT_NAMES[4], &heldout_ids, config.counts.unseen_tools_test),
    ];
    let mut next_grasp_id = 0u32;
    let mut splits = Vec::new();
    for (name, ids, per_tool) in plan {
        let mut rng = StreamRng::new(config.seed, &format!("data/{name}"));
        let grasps = sample_grasps(ids, per_tool, &config.ranges, &mut rng, &mut next_grasp_id)?;
        let records: Vec<PairedRecord> = grasps
            .iter()
            .map(|g| {
                let tool = tools
                    .iter()
                    .find(|t| t.id == g.tool_id)
                    .ok_or(SimError::UnknownTool(g.tool_id))?;
                Ok(render_record(g, &tool.sdf, &config.sensor, config.seed))
            })
            .collect::<Result<_, SimError>>()?;
        splits.push((name.to_string(), records));
    }
    Ok(GeneratedDataset {
        config: config.clone(),
        tools,
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdf::SdfNode;

    fn params() -> SensorParams {
        SensorParams::default()
    }

    fn quiet_params() -> SensorParams {
        SensorParams {
            noise_std: 0.0,
            ..SensorParams::default()
        }
    }

    fn grasp(y: f32, z: f32, theta: f32, depth: f32) -> GraspSample {
        GraspSample {
            tool_id: 0,
            grasp_id: 0,
            y,
            z,
            theta_deg: theta,
            depth,
        }
    }

    #[test]
    fn zero_depth_renders_zero() {
        let h = render_heightfield(&grasp(1.0, -2.0, 10.0, 0.0), &SdfNode::Circle { r: 5.0 }, &params());
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn circle_center_pixel_is_full_depth() {
        let h = render_heightfield(&grasp(0.0, 0.0, 0.0, 1.0), &SdfNode::Circle { r: 5.0 }, &params());
        // pixel (15,15) sits at (-0.5,-0.5), deep inside the r=5 circle
        assert_eq!(h[15 * 32 + 15], 1.0);
    }

    #[test]
    fn translation_equivariance_is_exact() {
        // +1.0 mm in y equals a one-pixel shift, bit for bit, on interior
        // pixels; y values are chosen on a grid where y+1 is exact in f32
        let sdf = SdfNode::Circle { r: 5.0 };
        let p = params();
        for step in 0..8 {
            let y = -4.0 + step as f32 * 0.875;
            let theta = -25.0 + step as f32 * 7.0;
            let base = render_heightfield(&grasp(y, 0.5, theta, 1.3), &sdf, &p);
            let shifted = render_heightfield(&grasp(y + 1.0, 0.5, theta, 1.3), &sdf, &p);
            for row in 0..32 {
                for col in 1..32 {
                    assert_eq!(
                        shifted[row * 32 + col],
                        base[row * 32 + col - 1],
                        "row {row} col {col} y {y}"
                    );
                }
            }
        }
    }

    /// Direct (non-separable) convolution with replicate boundary; the
    /// independent oracle for the blur.
    fn blur_oracle(src: &[f64], n: usize, sigma: f64) -> Vec<f64> {
        let radius = (3.0 * sigma).ceil() as isize;
        let mut k1 = Vec::new();
        for k in -radius..=radius {
            k1.push((-((k * k) as f64) / (2.0 * sigma * sigma)).exp());
        }
        let s: f64 = k1.iter().sum();
        for k in &mut k1 {
            *k /= s;
        }
        let mut out = vec![0.0; n * n];
        for row in 0..n as isize {
            for col in 0..n as isize {
                let mut acc = 0.0;
                for (i, ki) in k1.iter().enumerate() {
                    for (j, kj) in k1.iter().enumerate() {
                        let r = (row + i as isize - radius).clamp(0, n as isize - 1);
                        let c = (col + j as isize - radius).clamp(0, n as isize - 1);
                        acc += ki * kj * src[(r * n as isize + c) as usize];
                    }
                }
                out[(row * n as isize + col) as usize] = acc;
            }
        }
        out
    }

    #[test]
    fn blur_matches_direct_convolution_oracle() {
        let mut rng = StreamRng::new(21, "blur");
        let src: Vec<f64> = (0..32 * 32).map(|_| rng.uniform(0.0, 2.0)).collect();
        let fast = gaussian_blur(&src, 32, 32, 2.5);
        let slow = blur_oracle(&src, 32, 2.5);
        for i in 0..src.len() {
            assert!((fast[i] - slow[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_preserves_mass_on_interior_support() {
        // support at least 8 px (= kernel radius for sigma 2.5) from border
        let mut src = vec![0.0f64; 32 * 32];
        let mut rng = StreamRng::new(22, "mass");
        for row in 12..20 {
            for col in 12..20 {
                src[row * 32 + col] = rng.uniform(0.2, 2.0);
            }
        }
        let blurred = gaussian_blur(&src, 32, 32, 2.5);
        let sum_src: f64 = src.iter().sum();
        let sum_blur: f64 = blurred.iter().sum();
        assert!(((sum_blur - sum_src) / sum_src).abs() < 1e-3);
    }

    #[test]
    fn impulse_peak_equals_kernel_center_weight() {
        let mut src = vec![0.0f64; 32 * 32];
        src[16 * 32 + 16] = 1.0;
        let blurred = gaussian_blur(&src, 32, 32, 2.5);
        // discrete kernel oracle: center weight of the normalized 1-d kernel,
        // squared for the separable 2-d kernel
        let radius = 8;
        let sigma = 2.5f64;
        let mut s = 0.0;
        for k in -radius..=radius {
            s += (-((k * k) as f64) / (2.0 * sigma * sigma)).exp();
        }
        let center_2d = (1.0 / s) * (1.0 / s);
        let max = blurred.iter().cloned().fold(0.0, f64::max);
        assert!((max - center_2d).abs() < 1e-12, "{max} vs {center_2d}");
    }

    #[test]
    fn membrane_zero_field_zero_noise_is_zero() {
        let p = quiet_params();
        let mut rng = StreamRng::new(1, "noise");
        let frame = render_membrane(&vec![0.0; 32 * 32], &p, &mut rng);
        assert!(frame.data.iter().all(|&v| v == 0.0));
        assert_eq!(frame.sensor, SensorKind::Membrane);
        assert_eq!(frame.channels(), 1);
    }

    #[test]
    fn membrane_values_stay_non_negative() {
        let p = params();
        let mut rng = StreamRng::new(2, "noise");
        let frame = render_membrane(&vec![0.0; 32 * 32], &p, &mut rng);
        assert!(frame.data.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn flat_field_gel_is_uniform_base() {
        let p = quiet_params();
        let mut rng = StreamRng::new(3, "noise");
        let frame = render_gel(&vec![0.7; 32 * 32], &p, &mut rng);
        assert!(frame.data.iter().all(|&v| v == 0.35));
        assert_eq!(frame.channels(), 3);
    }

    #[test]
    fn ramp_sign_follows_shading_formula() {
        // Height decreasing along +x tilts normals toward +x, into the
        // R-channel light at azimuth 0; that side of the slope brightens.
        // The mirrored ramp darkens below base. Both signs follow from the
        // formula with a hand-computed normal: for h = -a*x, gx = -a,
        // n ∝ (a, 0, 1), and n·L - n0·L > 0 for L = (cos0, sin0, 0.4)/|..|.
        let p = quiet_params();
        let n = p.img_size;
        let mut down = vec![0.0f64; n * n];
        let mut up = vec![0.0f64; n * n];
        for row in 0..n {
            for col in 0..n {
                down[row * n + col] = 2.0 - 0.05 * col as f64;
                up[row * n + col] = 0.5 + 0.05 * col as f64;
            }
        }
        let mut rng = StreamRng::new(4, "noise");
        let fd = render_gel(&down, &p, &mut rng);
        let fu = render_gel(&up, &p, &mut rng);
        // interior pixel, R channel
        let idx = 16 * n + 16;
        assert!(fd.data[idx] > 0.35, "downhill-to-light slope must brighten R");
        assert!(fu.data[idx] < 0.35, "uphill slope must darken R");
    }

    /// Independent straightforward gel shading oracle (direct blur, direct
    /// differences, direct lighting), used for the rotation test.
    fn gel_oracle(h: &[f64], p: &SensorParams) -> Vec<f64> {
        let n = p.img_size;
        let g = blur_oracle(h, n, p.gel_sigma_px);
        let mut out = vec![0.0; 3 * n * n];
        for c in 0..3 {
            let phi = p.light_phases_deg[c].to_radians();
            let l = [phi.cos(), phi.sin(), p.light_z];
            let ln = (l[0] * l[0] + l[1] * l[1] + l[2] * l[2]).sqrt();
            let l = [l[0] / ln, l[1] / ln, l[2] / ln];
            for row in 1..n - 1 {
                for col in 1..n - 1 {
                    let gx = (g[row * n + col + 1] - g[row * n + col - 1]) / 2.0;
                    let gy = (g[(row + 1) * n + col] - g[(row - 1) * n + col]) / 2.0;
                    let inv = 1.0 / (gx * gx + gy * gy + 1.0).sqrt();
                    let ndl = -gx * inv * l[0] - gy * inv * l[1] + inv * l[2];
                    out[c * n * n + row * n + col] =
                        (p.gel_base + p.gel_gain * (ndl - l[2])).clamp(0.0, 1.0);
                }
            }
        }
        out
    }

    #[test]
    fn rotated_heightfield_matches_oracle() {
        let p = quiet_params();
        let n = p.img_size;
        let g = grasp(1.5, -2.0, 20.0, 1.5);
        let h = render_heightfield(&g, &SdfNode::Rect { hx: 4.5, hy: 3.0 }, &p);
        // rotate 90° counterclockwise: (row, col) <- (col, n-1-row)
        let mut rot = vec![0.0; n * n];
        for row in 0..n {
            for col in 0..n {
                rot[row * n + col] = h[col * n + (n - 1 - row)];
            }
        }
        let mut rng = StreamRng::new(5, "noise");
        let rendered = render_gel(&rot, &p, &mut rng);
        let oracle = gel_oracle(&rot, &p);
        for c in 0..3 {
            for row in 2..n - 2 {
                for col in 2..n - 2 {
                    let i = c * n * n + row * n + col;
                    assert!(
                        (rendered.data[i] as f64 - oracle[i]).abs() < 1e-6,
                        "c{c} r{row} c{col}"
                    );
                }
            }
        }
    }

    #[test]
    fn sample_grasps_deterministic_and_bounded() {
        let ranges = GraspRanges::default();
        let run = || {
            let mut rng = StreamRng::new(13, "data/test");
            let mut id = 0;
            sample_grasps(&[0, 1], 50, &ranges, &mut rng, &mut id).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.iter().all(|g| g.y.abs() <= 8.0
            && g.z.abs() <= 8.0
            && g.theta_deg.abs() <= 30.0
            && (0.5..=2.0).contains(&g.depth)));
    }

    #[test]
    fn sample_grasps_mean_near_zero() {
        let ranges = GraspRanges::default();
        let mut rng = StreamRng::new(14, "data/mc");
        let mut id = 0;
        let grasps = sample_grasps(&[0], 1000, &ranges, &mut rng, &mut id).unwrap();
        let my: f64 = grasps.iter().map(|g| g.y as f64).sum::<f64>() / 1000.0;
        let mz: f64 = grasps.iter().map(|g| g.z as f64).sum::<f64>() / 1000.0;
        // 3 sigma of the uniform(-8,8) mean estimator is ~0.44 mm
        assert!(my.abs() < 0.8, "mean y {my}");
        assert!(mz.abs() < 0.8, "mean z {mz}");
    }

    #[test]
    fn degenerate_ranges_collapse() {
        let ranges = GraspRanges {
            y_abs_mm: 0.0,
            theta_abs_deg: 0.0,
            depth_min_mm: 1.0,
            depth_max_mm: 1.0,
        };
        let mut rng = StreamRng::new(15, "data/deg");
        let mut id = 0;
        let grasps = sample_grasps(&[3], 10, &ranges, &mut rng, &mut id).unwrap();
        assert!(grasps.iter().all(|g| g.y == 0.0 && g.z == 0.0 && g.theta_deg == 0.0 && g.depth == 1.0));
    }

    #[test]
    fn empty_tool_list_errors() {
        let mut rng = StreamRng::new(16, "data/err");
        let mut id = 0;
        assert!(matches!(
            sample_grasps(&[], 5, &GraspRanges::default(), &mut rng, &mut id),
            Err(SimError::NoTools)
        ));
    }

    #[test]
    fn record_noise_is_per_record_not_per_order() {
        let p = params();
        let g0 = GraspSample { grasp_id: 7, ..grasp(1.0, 1.0, 5.0, 1.0) };
        let sdf = SdfNode::Circle { r: 5.0 };
        let a = render_record(&g0, &sdf, &p, 42);
        let _other = render_record(&grasp(0.0, 0.0, 0.0, 1.0), &sdf, &p, 42);
        let b = render_record(&g0, &sdf, &p, 42);
        assert_eq!(a, b);
    }

    #[test]
    fn default_dataset_counts_and_splits() {
        let cfg = DatasetConfig {
            counts: SplitCounts {
                pretrain: 4,
                probe_train: 2,
                probe_test: 1,
                unseen_tools_train: 2,
                unseen_tools_test: 1,
            },
            ..DatasetConfig::default()
        };
        let ds = generate_dataset(&cfg).unwrap();
        let total: usize = ds.splits.iter().map(|(_, r)| r.len()).sum();
        assert_eq!(total, 9 * 4 + 9 * 2 + 9 + 3 * 2 + 3);
        // grasp ids are globally unique
        let mut seen = std::collections::HashSet::new();
        for (_, records) in &ds.splits {
            for r in records {
                assert!(seen.insert(r.grasp.grasp_id), "duplicate grasp id");
            }
        }
        // unseen splits hold only held-out tools
        for (name, records) in &ds.splits {
            if name.starts_with("unseen") {
                assert!(records.iter().all(|r| r.grasp.tool_id >= 9));
            } else {
                assert!(records.iter().all(|r| r.grasp.tool_id < 9));
            }
        }
    }
}
