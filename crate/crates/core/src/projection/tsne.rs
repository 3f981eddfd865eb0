//! Exact t-SNE: dense O(n²) affinities and gradients.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Embedding2D, ProjectionError, ProjectionMethod};
use crate::corpus::Upos;

pub const MAX_POINTS: usize = 20_000;
const SEARCH_STEPS: usize = 200;
const ENTROPY_TOL: f64 = 1e-5;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

fn squared_distances(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows();
    let norms: Vec<f64> = (0..n).map(|i| x.row(i).norm_squared()).collect();
    let gram = x * x.transpose();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                d[i * n + j] = (norms[i] + norms[j] - 2.0 * gram[(i, j)]).max(0.0);
            }
        }
    }
    d
}

/// Conditional affinities of point `i` at precision `beta`, and their
/// Shannon entropy in nats.
fn conditional_row(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    // Shifting by the smallest distance keeps exp() from underflowing.
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (&d, o)) in dist.iter().zip(out.iter_mut()).enumerate() {
        *o = if j == i { 0.0 } else { (-(d - dmin) * beta).exp() };
        sum += *o;
    }
    let mut h = 0.0;
    for o in out.iter_mut() {
        *o /= sum;
        if *o > 0.0 {
            h -= *o * o.ln();
        }
    }
    h
}

/// Binary search on the Gaussian precision of each point so its
/// conditional distribution has the requested perplexity.
fn affinities(dist: &[f64], n: usize, perplexity: f64) -> Result<Vec<f64>, ProjectionError> {
    let target = perplexity.ln();
    let rows: Vec<Result<Vec<f64>, ProjectionError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d = &dist[i * n..(i + 1) * n];
            let mut row = vec![0.0; n];
            let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
            for _ in 0..SEARCH_STEPS {
                let h = conditional_row(d, i, beta, &mut row);
                if (h - target).abs() < ENTROPY_TOL {
                    return Ok(row);
                }
                if h > target {
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
                if !beta.is_finite() || beta == 0.0 {
                    break;
                }
            }
            Err(ProjectionError::PerplexitySearch { point: i })
        })
        .collect();
    let mut p = vec![0.0; n * n];
    for (i, row) in rows.into_iter().enumerate() {
        p[i * n..(i + 1) * n].copy_from_slice(&row?);
    }
    Ok(p)
}

/// Embeds rows of `x` in 2D. Deterministic for a fixed `cfg.seed`.
pub fn tsne_2d(x: &DMatrix<f64>, labels: &[Upos], cfg: &TsneConfig) -> Result<Embedding2D, ProjectionError> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(ProjectionError::LabelMismatch {
            points: n,
            labels: labels.len(),
        });
    }
    if n < 3 {
        return Err(ProjectionError::TooFewPoints { needed: 3, got: n });
    }
    if n > MAX_POINTS {
        return Err(ProjectionError::TooManyPoints { max: MAX_POINTS, got: n });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ProjectionError::NonFinite);
    }
    let limit = n as f64 / 3.0;
    if !(cfg.perplexity > 0.0 && cfg.perplexity < limit) {
        return Err(ProjectionError::InvalidPerplexity {
            perplexity: cfg.perplexity,
            limit,
        });
    }

    let dist = squared_distances(x);
    let cond = affinities(&dist, n, cfg.perplexity)?;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];

    for iter in 0..cfg.iterations {
        let exaggeration = if iter < cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        let momentum = if iter < cfg.exaggeration_iters { cfg.initial_momentum } else { cfg.final_momentum };

        let mut zsum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v = if i == j {
                    0.0
                } else {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    1.0 / (1.0 + dx * dx + dy * dy)
                };
                num[i * n + j] = v;
                zsum += v;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                let q = (num[i * n + j] / zsum).max(1e-12);
                let m = (exaggeration * p[i * n + j] - q) * num[i * n + j];
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for c in 0..2 {
                let same_sign = (grad[i][c] > 0.0) == (update[i][c] > 0.0);
                gains[i][c] = if same_sign { gains[i][c] * 0.8 } else { gains[i][c] + 0.2 };
                gains[i][c] = gains[i][c].max(MIN_GAIN);
                update[i][c] = momentum * update[i][c] - cfg.learning_rate * gains[i][c] * grad[i][c];
                y[i][c] += update[i][c];
            }
        }
        let mean = [
            y.iter().map(|v| v[0]).sum::<f64>() / n as f64,
            y.iter().map(|v| v[1]).sum::<f64>() / n as f64,
        ];
        for v in &mut y {
            v[0] -= mean[0];
            v[1] -= mean[1];
        }
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ProjectionError::NonFinite);
    }

    Ok(Embedding2D {
        coords: y,
        labels: labels.to_vec(),
        method: ProjectionMethod::Tsne,
        params: vec![
            ("perplexity".into(), cfg.perplexity.to_string()),
            ("iterations".into(), cfg.iterations.to_string()),
            ("learning_rate".into(), cfg.learning_rate.to_string()),
            ("seed".into(), cfg.seed.to_string()),
        ],
    })
}
