use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{Embedding2D, ProjectionError, ProjectionMethod};
use crate::corpus::Upos;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub embedding: Embedding2D,
    /// Unit principal directions, largest variance first.
    pub components: [DVector<f64>; 2],
    /// Sample variance along each component.
    pub explained_variance: [f64; 2],
    /// Sum of the per-dimension sample variances.
    pub total_variance: f64,
}

/// Projects mean-centred rows onto the top two eigenvectors of their
/// covariance. Each component's largest-magnitude coordinate is positive.
pub fn pca_2d(x: &DMatrix<f64>, labels: &[Upos]) -> Result<PcaProjection, ProjectionError> {
    let (n, d) = x.shape();
    if n < 3 {
        return Err(ProjectionError::TooFewPoints { needed: 3, got: n });
    }
    if d < 2 {
        return Err(ProjectionError::TooFewDims(d));
    }
    if labels.len() != n {
        return Err(ProjectionError::LabelMismatch {
            points: n,
            labels: labels.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ProjectionError::NonFinite);
    }
    let mean = x.row_mean();
    let mut centred = x.clone();
    for mut row in centred.row_iter_mut() {
        row -= &mean;
    }
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    let total_variance = cov.trace();
    if total_variance <= 0.0 {
        return Err(ProjectionError::ZeroVariance);
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let component = |i: usize| {
        let mut v = eig.eigenvectors.column(order[i]).into_owned();
        let pivot = v.iter().copied().fold(0.0f64, |best, c| if c.abs() > best.abs() { c } else { best });
        if pivot < 0.0 {
            v.neg_mut();
        }
        v
    };
    let components = [component(0), component(1)];
    let p0 = &centred * &components[0];
    let p1 = &centred * &components[1];
    let coords = (0..n).map(|i| [p0[i], p1[i]]).collect();
    let explained_variance = [eig.eigenvalues[order[0]].max(0.0), eig.eigenvalues[order[1]].max(0.0)];

    Ok(PcaProjection {
        embedding: Embedding2D {
            coords,
            labels: labels.to_vec(),
            method: ProjectionMethod::Pca,
            params: Vec::new(),
        },
        components,
        explained_variance,
        total_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(n: usize) -> Vec<Upos> {
        vec![Upos::Noun; n]
    }

    fn sample_variance(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    }

    /// Cyclic Jacobi rotations; returns eigenvalues in descending order.
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j].powi(2)).sum();
            if off < 1e-22 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev
    }

    #[test]
    fn points_on_a_line() {
        let x = DMatrix::from_fn(20, 3, |i, j| (i as f64) * [1.0, -2.0, 0.5][j] + 4.0);
        let p = pca_2d(&x, &labels(20)).unwrap();
        let second: Vec<f64> = p.embedding.coords.iter().map(|c| c[1]).collect();
        assert!(sample_variance(&second) < 1e-9);
    }

    #[test]
    fn two_dimensional_input_keeps_all_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(40, 2, |_, j| rng.random_range(-1.0..1.0) * (j + 1) as f64);
        let p = pca_2d(&x, &labels(40)).unwrap();
        let sum = p.explained_variance[0] + p.explained_variance[1];
        assert!((sum - p.total_variance).abs() < 1e-9);
    }

    #[test]
    fn matches_independent_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(50, 10, |_, _| rng.random_range(-1.0..1.0));
        let p = pca_2d(&x, &labels(50)).unwrap();

        let rows: Vec<Vec<f64>> = (0..50).map(|i| (0..10).map(|j| x[(i, j)]).collect()).collect();
        let means: Vec<f64> = (0..10).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / 50.0).collect();
        let cov: Vec<Vec<f64>> = (0..10)
            .map(|a| {
                (0..10)
                    .map(|b| rows.iter().map(|r| (r[a] - means[a]) * (r[b] - means[b])).sum::<f64>() / 49.0)
                    .collect()
            })
            .collect();
        let ev = jacobi_eigenvalues(cov);
        assert!((p.explained_variance[0] - ev[0]).abs() < 1e-9, "{:?} vs {:?}", p.explained_variance, &ev[..2]);
        assert!((p.explained_variance[1] - ev[1]).abs() < 1e-9);
        // Projected variances agree with the eigenvalues too.
        for c in 0..2 {
            let col: Vec<f64> = p.embedding.coords.iter().map(|v| v[c]).collect();
            assert!((sample_variance(&col) - ev[c]).abs() < 1e-9);
        }
        assert!((p.components[0].norm() - 1.0).abs() < 1e-12);
        assert!(p.components[0].dot(&p.components[1]).abs() < 1e-9);
    }

    #[test]
    fn translation_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = DMatrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
        let shifted = x.map(|v| v + 100.0);
        let a = pca_2d(&x, &labels(30)).unwrap();
        let b = pca_2d(&shifted, &labels(30)).unwrap();
        for (u, v) in a.embedding.coords.iter().zip(&b.embedding.coords) {
            assert!((u[0] - v[0]).abs() < 1e-8 && (u[1] - v[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn sign_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(30, 5, |_, _| rng.random_range(-1.0..1.0));
        let p = pca_2d(&x, &labels(30)).unwrap();
        for c in &p.components {
            let pivot = c.iter().copied().fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
            assert!(pivot > 0.0);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let same = DMatrix::from_element(5, 3, 1.5);
        assert!(matches!(pca_2d(&same, &labels(5)), Err(ProjectionError::ZeroVariance)));
        let two = DMatrix::from_element(2, 3, 0.0);
        assert!(matches!(pca_2d(&two, &labels(2)), Err(ProjectionError::TooFewPoints { .. })));
        let one_dim = DMatrix::from_fn(5, 1, |i, _| i as f64);
        assert!(matches!(pca_2d(&one_dim, &labels(5)), Err(ProjectionError::TooFewDims(1))));
    }
}
