//! 2-d projections of feature sets: PCA and exact t-SNE.
//!
//! The t-SNE here is the exact O(n^2) formulation: per-point bandwidths are
//! bisected until the conditional distribution's entropy hits ln(perplexity),
//! the joint P is the symmetrized conditional, and the embedding descends the
//! KL gradient with early exaggeration and momentum. Everything is f64 and
//! fully deterministic (initialization comes from scaled PCA, not noise).

#[derive(Debug, thiserror::Error)]
pub enum ProjectionError {
    #[error("{0} points exceed the exact-method limit of {1}; subsample the splits first")]
    TooManyPoints(usize, usize),
    #[error("{0} points are too few for perplexity {1}")]
    TooFewPoints(usize, f64),
    #[error("bandwidth search failed to reach the target entropy for point {point} (|H - ln perp| = {residual:.3e})")]
    BandwidthSearch { point: usize, residual: f64 },
    #[error("feature rows have inconsistent dimensions")]
    RaggedFeatures,
}

pub const TSNE_MAX_POINTS: usize = 2000;

#[derive(Clone, Copy, Debug)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub steps: usize,
    pub early_exaggeration: f64,
    pub exaggeration_steps: usize,
    pub learning_rate: f64,
    pub momentum_start: f64,
    pub momentum_final: f64,
    pub momentum_switch: usize,
    pub entropy_tol: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            steps: 1000,
            early_exaggeration: 12.0,
            exaggeration_steps: 250,
            learning_rate: 200.0,
            momentum_start: 0.5,
            momentum_final: 0.8,
            momentum_switch: 250,
            entropy_tol: 1e-5,
        }
    }
}

/// Everything the t-SNE run produced, kept for inspection and tests.
pub struct TsneModel {
    pub n: usize,
    /// Row-normalized conditional probabilities, n x n, zero diagonal.
    pub p_conditional: Vec<f64>,
    /// Symmetrized joint probabilities, n x n; sums to 1.
    pub p_joint: Vec<f64>,
    pub betas: Vec<f64>,
    pub embedding: Vec<[f64; 2]>,
}

fn pairwise_sq_dists(x: &[Vec<f64>]) -> Result<Vec<f64>, ProjectionError> {
    let n = x.len();
    let d = x[0].len();
    if x.iter().any(|row| row.len() != d) {
        return Err(ProjectionError::RaggedFeatures);
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for k in 0..d {
                let diff = x[i][k] - x[j][k];
                s += diff * diff;
            }
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    Ok(out)
}

/// Shannon entropy (nats) and row of conditionals for one point at a given
/// precision beta = 1/(2 sigma^2).
fn conditional_row(dists: &[f64], i: usize, n: usize, beta: f64, row: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for j in 0..n {
        if j == i {
            row[j] = 0.0;
            continue;
        }
        let p = (-beta * dists[i * n + j]).exp();
        row[j] = p;
        sum += p;
    }
    let mut entropy = 0.0;
    for (j, r) in row.iter_mut().enumerate() {
        if j == i {
            continue;
        }
        *r /= sum;
        if *r > 0.0 {
            entropy -= *r * r.ln();
        }
    }
    entropy
}

/// Exact t-SNE to 2-d.
pub fn tsne_2d(x: &[Vec<f64>], cfg: &TsneConfig) -> Result<TsneModel, ProjectionError> {
    let n = x.len();
    if n > TSNE_MAX_POINTS {
        return Err(ProjectionError::TooManyPoints(n, TSNE_MAX_POINTS));
    }
    // entropy of a uniform over n-1 neighbors caps at ln(n-1)
    if n < 3 || ((n - 1) as f64) < cfg.perplexity {
        return Err(ProjectionError::TooFewPoints(n, cfg.perplexity));
    }
    let dists = pairwise_sq_dists(x)?;
    let target = cfg.perplexity.ln();

    // per-point bandwidth by bisection on beta
    let mut p_conditional = vec![0.0; n * n];
    let mut betas = vec![0.0; n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        let mut beta = 1.0;
        let mut lo = 0.0f64;
        let mut hi = f64::INFINITY;
        let mut residual = f64::INFINITY;
        for _ in 0..200 {
            let entropy = conditional_row(&dists, i, n, beta, &mut row);
            residual = (entropy - target).abs();
            if residual <= cfg.entropy_tol {
                break;
            }
            if entropy > target {
                // too flat: increase beta
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        if residual > cfg.entropy_tol {
            return Err(ProjectionError::BandwidthSearch { point: i, residual });
        }
        betas[i] = beta;
        conditional_row(&dists, i, n, beta, &mut row);
        p_conditional[i * n..(i + 1) * n].copy_from_slice(&row);
    }

    // symmetrize; sums to 1 by construction
    let mut p_joint = vec![0.0; n * n];
    let norm = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in 0..n {
            p_joint[i * n + j] = (p_conditional[i * n + j] + p_conditional[j * n + i]) * norm;
        }
    }

    // init from PCA, columns rescaled to std 1e-4
    let pca = pca_2d(x);
    let mut y: Vec<[f64; 2]> = vec![[0.0; 2]; n];
    for c in 0..2 {
        let mean = pca.iter().map(|p| p[c]).sum::<f64>() / n as f64;
        let var = pca.iter().map(|p| (p[c] - mean) * (p[c] - mean)).sum::<f64>() / n as f64;
        let scale = if var > 0.0 { 1e-4 / var.sqrt() } else { 0.0 };
        for i in 0..n {
            y[i][c] = (pca[i][c] - mean) * scale;
        }
    }

    let mut velocity = vec![[0.0f64; 2]; n];
    let mut grad = vec![[0.0f64; 2]; n];
    let mut w = vec![0.0f64; n * n];
    for step in 0..cfg.steps {
        let exaggeration = if step < cfg.exaggeration_steps {
            cfg.early_exaggeration
        } else {
            1.0
        };
        // student-t weights and their total
        let mut w_total = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let wij = 1.0 / (1.0 + dx * dx + dy * dy);
                w[i * n + j] = wij;
                w[j * n + i] = wij;
                w_total += 2.0 * wij;
            }
        }
        for g in grad.iter_mut() {
            *g = [0.0; 2];
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let wij = w[i * n + j];
                let qij = wij / w_total;
                let coeff = 4.0 * (exaggeration * p_joint[i * n + j] - qij) * wij;
                grad[i][0] += coeff * (y[i][0] - y[j][0]);
                grad[i][1] += coeff * (y[i][1] - y[j][1]);
            }
        }
        let momentum = if step < cfg.momentum_switch {
            cfg.momentum_start
        } else {
            cfg.momentum_final
        };
        let mut mean = [0.0f64; 2];
        for i in 0..n {
            for c in 0..2 {
                velocity[i][c] = momentum * velocity[i][c] - cfg.learning_rate * grad[i][c];
                y[i][c] += velocity[i][c];
                mean[c] += y[i][c];
            }
        }
        for i in 0..n {
            for c in 0..2 {
                y[i][c] -= mean[c] / n as f64;
            }
        }
    }

    Ok(TsneModel {
        n,
        p_conditional,
        p_joint,
        betas,
        embedding: y,
    })
}

/// Projects onto the top-2 principal components of the mean-centered data.
/// Component signs are fixed so the largest-magnitude loading is positive.
pub fn pca_2d(x: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = x.len();
    let d = x[0].len();
    let mut mean = vec![0.0; d];
    for row in x {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    // covariance (population)
    let mut cov = vec![0.0; d * d];
    for row in x {
        for a in 0..d {
            let ca = row[a] - mean[a];
            for b in a..d {
                cov[a * d + b] += ca * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / n as f64;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    let (eigvals, eigvecs) = jacobi_eigen(&cov, d);
    // indices of the two largest eigenvalues
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigvals[b].partial_cmp(&eigvals[a]).unwrap());
    let mut components = [vec![0.0; d], vec![0.0; d]];
    for (c, comp) in components.iter_mut().enumerate() {
        let col = order[c.min(d - 1)];
        for r in 0..d {
            comp[r] = eigvecs[r * d + col];
        }
        // deterministic sign: largest |loading| positive
        let mut lead = 0;
        for r in 1..d {
            if comp[r].abs() > comp[lead].abs() {
                lead = r;
            }
        }
        if comp[lead] < 0.0 {
            for v in comp.iter_mut() {
                *v = -*v;
            }
        }
    }
    x.iter()
        .map(|row| {
            let mut out = [0.0; 2];
            for (c, comp) in components.iter().enumerate() {
                out[c] = row
                    .iter()
                    .zip(comp)
                    .zip(&mean)
                    .map(|((v, w), m)| (v - m) * w)
                    .sum();
            }
            out
        })
        .collect()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues and column-major eigenvectors.
fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = (0..n).map(|i| m[i * n + i]).collect();
    (eig, v)
}
