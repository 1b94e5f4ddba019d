//! Central-finite-difference verification of the tape's gradients.
//!
//! The checker rebuilds the graph from scratch for every probe, so it is
//! independent of any single tape instance. It is normally run with the f64
//! instantiation of the generic ops, where finite-difference noise is far
//! below the pass tolerance.

use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{AutodiffError, Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
    /// Set when a probe produced a non-finite value instead of a number.
    pub non_finite: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }
}

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Checks the analytic gradient of `build` (a scalar-valued graph over the
/// given parameters) against central finite differences with step `h`,
/// probing every element of every parameter. Non-finite evaluations are
/// reported per parameter, never panicked on.
pub fn grad_check<S: Scalar>(
    params: &ParamSet<S>,
    build: impl Fn(&mut Tape<S>, &[Var]) -> Result<Var, AutodiffError>,
    h: f64,
    tol: f64,
) -> GradCheckReport {
    grad_check_sampled(params, build, h, tol, None, 0)
}

const EXHAUSTIVE_DENOM_FLOOR: f64 = 1e-6;
/// Elements whose gradient magnitude sits below this floor are compared at
/// the floor: under sampled large-graph checks their finite differences are
/// dominated by f64 evaluation noise, not by the backward rule under test.
const SAMPLED_DENOM_FLOOR: f64 = 1e-4;

/// Like [`grad_check`] but probing at most `max_per_tensor` seeded-random
/// elements of each parameter, for large graphs where exhaustive probing
/// would both take long and make some probe straddle a ReLU kink.
pub fn grad_check_sampled<S: Scalar>(
    params: &ParamSet<S>,
    build: impl Fn(&mut Tape<S>, &[Var]) -> Result<Var, AutodiffError>,
    h: f64,
    tol: f64,
    max_per_tensor: Option<usize>,
    sample_seed: u64,
) -> GradCheckReport {
    let denom_floor = if max_per_tensor.is_some() {
        SAMPLED_DENOM_FLOOR
    } else {
        EXHAUSTIVE_DENOM_FLOOR
    };
    let bind = |params: &ParamSet<S>| -> Result<(Tape<S>, Vec<Var>), AutodiffError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = (0..params.len()).map(|i| tape.param(params.tensor(i).clone())).collect();
        Ok((tape, vars))
    };

    let eval_loss = |params: &ParamSet<S>| -> Option<f64> {
        let (mut tape, vars) = bind(params).ok()?;
        let loss = build(&mut tape, &vars).ok()?;
        let v = tape.value(loss).scalar_value().to_acc();
        v.is_finite().then_some(v)
    };

    // Analytic gradients from one backward pass.
    let analytic: Option<Vec<Option<Tensor<S>>>> = (|| {
        let (mut tape, vars) = bind(params).ok()?;
        let loss = build(&mut tape, &vars).ok()?;
        tape.backward(loss).ok()?;
        Some(vars.iter().map(|&v| tape.grad(v).cloned()).collect())
    })();

    let mut entries = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let name = params.name(i).to_string();
        let Some(analytic) = analytic.as_ref() else {
            entries.push(GradCheckEntry {
                name,
                max_rel_err: f64::INFINITY,
                pass: false,
                non_finite: true,
            });
            continue;
        };
        let grad = analytic[i].clone().unwrap_or_else(|| Tensor::zeros(params.tensor(i).shape()));
        let numel = params.tensor(i).numel();
        let elements: Vec<usize> = match max_per_tensor {
            Some(cap) if cap < numel => {
                let mut rng = crate::rng::StreamRng::new(sample_seed, &format!("gradcheck/{}", params.name(i)));
                let mut idx: Vec<usize> = (0..numel).collect();
                rng.shuffle(&mut idx);
                idx.truncate(cap);
                idx.sort_unstable();
                idx
            }
            _ => (0..numel).collect(),
        };
        let mut max_err = 0.0f64;
        let mut non_finite = false;
        let mut probe = params.clone();
        for j in elements {
            let base = probe.tensor(i).data()[j].to_acc();
            probe.tensor_mut(i).data_mut()[j] = S::from_acc(base + h);
            let fp = eval_loss(&probe);
            probe.tensor_mut(i).data_mut()[j] = S::from_acc(base - h);
            let fm = eval_loss(&probe);
            probe.tensor_mut(i).data_mut()[j] = params.tensor(i).data()[j];
            match (fp, fm) {
                (Some(fp), Some(fm)) => {
                    let numeric = (fp - fm) / (2.0 * h);
                    max_err = max_err.max(rel_err(grad.data()[j].to_acc(), numeric, denom_floor));
                }
                _ => {
                    non_finite = true;
                    max_err = f64::INFINITY;
                }
            }
        }
        entries.push(GradCheckEntry {
            name,
            pass: max_err <= tol && !non_finite,
            max_rel_err: max_err,
            non_finite,
        });
    }
    GradCheckReport { tol, entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Axis;
    use crate::rng::StreamRng;
    use crate::tensor::InitScheme;

    fn rand_tensor(shape: &[usize], rng: &mut StreamRng) -> Tensor<f64> {
        Tensor::from_vec(
            shape,
            (0..shape.iter().product()).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn linear_layer_passes() {
        let mut rng = StreamRng::new(10, "gc-linear");
        let x = rand_tensor(&[4, 5], &mut rng);
        let mut params = ParamSet::new();
        params.push("w", rand_tensor(&[5, 3], &mut rng)).unwrap();
        params.push("b", rand_tensor(&[3], &mut rng)).unwrap();
        let report = grad_check(
            &params,
            |tape, vars| {
                let xv = tape.input(x.clone());
                let h = tape.matmul(xv, vars[0])?;
                let h = tape.bias_add(h, vars[1])?;
                let sq = tape.mul(h, h)?;
                tape.mean_all(sq)
            },
            1e-3,
            1e-4,
        );
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn two_layer_mlp_matches_finite_differences() {
        // random 2-layer MLP with ReLU; inputs nudged away from 0 so the
        // kink never sits exactly on a sample point
        let mut rng = StreamRng::new(77, "gc-mlp");
        let mut x = rand_tensor(&[3, 6], &mut rng);
        for v in x.data_mut() {
            if v.abs() < 0.1 {
                *v += 0.1;
            }
        }
        let mut params = ParamSet::new();
        params
            .push(
                "w1",
                Tensor::seeded_init(&[6, 8], InitScheme::UniformFanIn { fan_in: 6 }, &mut rng),
            )
            .unwrap();
        params.push("b1", rand_tensor(&[8], &mut rng)).unwrap();
        params
            .push(
                "w2",
                Tensor::seeded_init(&[8, 2], InitScheme::UniformFanIn { fan_in: 8 }, &mut rng),
            )
            .unwrap();
        params.push("b2", rand_tensor(&[2], &mut rng)).unwrap();
        let report = grad_check(
            &params,
            |tape, vars| {
                let xv = tape.input(x.clone());
                let h = tape.matmul(xv, vars[0])?;
                let h = tape.bias_add(h, vars[1])?;
                let h = tape.relu(h)?;
                let h = tape.matmul(h, vars[2])?;
                let h = tape.bias_add(h, vars[3])?;
                let sq = tape.mul(h, h)?;
                tape.mean_all(sq)
            },
            1e-3,
            1e-4,
        );
        assert!(report.passed(), "max rel err {}", report.max_rel_err());
    }

    #[test]
    fn corrupted_gradient_fails() {
        // negative control: flip the gradient sign by checking -mean against
        // the finite differences of +mean via a sign-flipped build pair
        let mut rng = StreamRng::new(5, "gc-neg");
        let mut params = ParamSet::new();
        params.push("w", rand_tensor(&[2, 2], &mut rng)).unwrap();
        // grad_check builds the graph once for the analytic pass and then
        // once per numeric probe; flipping the sign for the probes only is
        // equivalent to a sign-flipped backward rule
        let calls = std::cell::Cell::new(0usize);
        let report = grad_check(
            &params,
            |tape, vars| {
                let n = calls.get();
                calls.set(n + 1);
                let sq = tape.mul(vars[0], vars[0])?;
                let m = tape.mean_all(sq)?;
                // first build is the analytic pass; later builds (numeric
                // probes) get a flipped sign, i.e. a corrupted relationship
                tape.mul_scalar(m, if n == 0 { 1.0 } else { -1.0 })
            },
            1e-3,
            1e-4,
        );
        assert!(!report.passed());
    }

    #[test]
    fn every_op_kind_passes_randomized_checks() {
        // 100 random trials spread over the op set
        let mut rng = StreamRng::new(2024, "gc-ops");
        for trial in 0..100 {
            let kind = trial % 10;
            let mut params = ParamSet::new();
            match kind {
                0 => {
                    // matmul + bias
                    params.push("a", rand_tensor(&[3, 4], &mut rng)).unwrap();
                    params.push("b", rand_tensor(&[4, 2], &mut rng)).unwrap();
                    let r = grad_check(
                        &params,
                        |t, v| {
                            let m = t.matmul(v[0], v[1])?;
                            let sq = t.mul(m, m)?;
                            t.mean_all(sq)
                        },
                        1e-3,
                        1e-4,
                    );
                    assert!(r.passed(), "matmul trial {trial}: {r:?}");
                }
                1 => {
                    params.push("a", rand_tensor(&[3, 4], &mut rng)).unwrap();
                    params.push("b", rand_tensor(&[2, 4], &mut rng)).unwrap();
                    let r = grad_check(
                        &params,
                        |t, v| {
                            let m = t.matmul_nt(v[0], v[1])?;
                            let sq = t.mul(m, m)?;
                            t.mean_all(sq)
                        },
                        1e-3,
                        1e-4,
                    );
                    assert!(r.passed(), "matmul_nt trial {trial}: {r:?}");
                }
                2 => {
                    params.push("x", rand_tensor(&[2, 2, 5, 5], &mut rng)).unwrap();
                    params.push("w", rand_tensor(&[3, 2, 3, 3], &mut rng)).unwrap();
                    params.push("b", rand_tensor(&[3], &mut rng)).unwrap();
                    let stride = 1 + trial % 2;
                    let r = grad_check(
                        &params,
                        move |t, v| {
                            let c = t.conv2d(v[0], v[1], stride, 1)?;
                            let c = t.bias_add(c, v[2])?;
                            let sq = t.mul(c, c)?;
                            t.mean_all(sq)
                        },
                        1e-3,
                        1e-4,
                    );
                    assert!(r.passed(), "conv trial {trial}: {r:?}");
                }
                3 => {
                    // relu away from the kink
                    let mut x = rand_tensor(&[4, 4], &mut rng);
                    for v in x.data_mut() {
                        if v.abs() < 0.05 {
                            *v += 0.1;
                        }
                    }
                    params.push("x", x).unwrap();
                    let r = grad_check(
                        &params,
                        |t, v| {
                            let h = t.relu(v[0])?;
                            let sq = t.mul(h, h)?;
                            t.mean_all(sq)
                        },
                        1e-3,
                        1e-4,
                    );
                    assert!(r.passed(), "relu trial {trial}: {r:?}");
                }
                4 => {
                    params.push("a", rand_tensor(&[3, 3], &mut rng)).unwrap();
                    params.push("b", rand_tensor(&[3, 3], &mut rng)).unwrap();
                    let r = grad_check(
                        &params,
                        |t, v| {
                            let s = t.add(v[0], v[1])?;
                            let d = t.sub(s, v[1])?;
                            let p = t.mul(d, v[1])?;
                            let sc = t.mul_scalar(p, 1.7)?;
                            t.mean_all(sc)
                        },
                        1e-3,
                        1e-4,
                    );
                    assert!(r.passed(), "elementwise trial {trial}: {r:?}");
                }
                5 => {
                    params.push("x", rand_tensor(&[2, 3, 4, 4], &mut rng)).unwrap();
                    let r = grad_check(
                        &params,
                        |t, v| {
                            let p = t.global_avg_pool(v[0])?;
                            let sq = t.mul(p, p)?;
                            t.mean_all(sq)
                        },
                        1e-3,
                        1e-4,
                    );
                    assert!(r.passed(), "gap trial {trial}: {r:?}");
                }
                6 => {
                    // normalize rows away from zero norm
                    let mut x = rand_tensor(&[3, 5], &mut rng);
                    x.data_mut()[0] += 1.0;
                    params.push("x", x).unwrap();
                    let r = grad_check(
                        &params,
                        |t, v| {
                            let nrm = t.l2_normalize_rows(v[0])?;
                            let w = t.input(Tensor::from_vec(&[3, 5], (0..15).map(|i| 0.1 * i as f64).collect()).unwrap());
                            let p = t.mul(nrm, w)?;
                            t.mean_all(p)
                        },
                        1e-3,
                        1e-4,
                    );
                    assert!(r.passed(), "l2norm trial {trial}: {r:?}");
                }
                7 => {
                    params.push("x", rand_tensor(&[3, 4], &mut rng)).unwrap();
                    let axis = if trial % 2 == 0 { Axis::Cols } else { Axis::Rows };
                    let r = grad_check(
                        &params,
                        move |t, v| {
                            let l = t.logsumexp(v[0], axis)?;
                            let sq = t.mul(l, l)?;
                            let s = t.sum_axis(v[0], axis)?;
                            let both = t.add(sq, s)?;
                            t.mean_all(both)
                        },
                        1e-3,
                        1e-4,
                    );
                    assert!(r.passed(), "lse trial {trial}: {r:?}");
                }
                8 => {
                    params.push("logits", rand_tensor(&[4, 3], &mut rng)).unwrap();
                    let targets = vec![0usize, 2, 1, 2];
                    let r = grad_check(
                        &params,
                        move |t, v| t.softmax_cross_entropy(v[0], &targets),
                        1e-3,
                        1e-4,
                    );
                    assert!(r.passed(), "xent trial {trial}: {r:?}");
                }
                _ => {
                    params.push("a", rand_tensor(&[3, 4], &mut rng)).unwrap();
                    params.push("b", rand_tensor(&[3, 4], &mut rng)).unwrap();
                    let r = grad_check(&params, |t, v| t.mse(v[0], v[1]), 1e-3, 1e-4);
                    assert!(r.passed(), "mse trial {trial}: {r:?}");
                }
            }
        }
    }

    #[test]
    fn non_finite_reports_instead_of_crashing() {
        let mut params = ParamSet::new();
        params.push("w", Tensor::scalar(1.0e3)).unwrap();
        let report = grad_check(
            &params,
            |t, v| {
                // exp-ish blowup via repeated squaring overflows to inf
                let mut cur = v[0];
                for _ in 0..7 {
                    cur = t.mul(cur, cur)?;
                }
                t.mean_all(cur)
            },
            1e-3,
            1e-4,
        );
        assert!(!report.passed());
        assert!(report.entries.iter().any(|e| e.non_finite));
    }
}
