use std::ops::Range;

use super::{MoeError, MoeModel};

/// Agreement between analytic and central-difference gradients for one
/// parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub name: String,
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂)`, 0 when both vanish.
    pub rel_error: f64,
    pub max_abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.rel_error).fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.groups.iter().all(|g| g.rel_error.is_finite() && g.max_abs_diff.is_finite())
    }
}

/// Compares `objective`'s analytic gradient at `params` against central
/// finite differences with step `eps`, group by group.
pub fn gradient_check<F>(params: &[f64], groups: &[(String, Range<usize>)], eps: f64, mut objective: F) -> GradCheckReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = objective(params);
    assert_eq!(analytic.len(), params.len(), "gradient length");
    let mut work = params.to_vec();
    let mut numeric = vec![0.0; params.len()];
    for i in 0..params.len() {
        work[i] = params[i] + eps;
        let plus = objective(&work).0;
        work[i] = params[i] - eps;
        let minus = objective(&work).0;
        work[i] = params[i];
        numeric[i] = (plus - minus) / (2.0 * eps);
    }

    let groups = groups
        .iter()
        .map(|(name, range)| {
            let a = &analytic[range.clone()];
            let n = &numeric[range.clone()];
            let diff = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let norm_a = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let norm_n = n.iter().map(|x| x * x).sum::<f64>().sqrt();
            let denom = norm_a.max(norm_n);
            let rel_error = if diff == 0.0 { 0.0 } else { diff / denom };
            let max_abs_diff = a.iter().zip(n).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            GroupError {
                name: name.clone(),
                rel_error,
                max_abs_diff,
            }
        })
        .collect();
    GradCheckReport { groups }
}

/// Finite-difference check of [`MoeModel::loss_and_grad`], one group per
/// parameter tensor.
pub fn model_gradient_check(model: &MoeModel, tokens: &[u32], aux_weight: f64, eps: f64) -> Result<GradCheckReport, MoeError> {
    // Surface input errors before the closure, which cannot return them.
    model.loss(tokens, aux_weight)?;
    let mut offset = 0;
    let groups: Vec<(String, Range<usize>)> = model
        .tensors()
        .into_iter()
        .map(|(name, t)| {
            let r = offset..offset + t.len();
            offset += t.len();
            (name, r)
        })
        .collect();
    let params = model.to_flat();
    let mut scratch = model.clone();
    Ok(gradient_check(&params, &groups, eps, |p| {
        scratch.set_flat(p);
        let (loss, grad) = scratch.loss_and_grad(tokens, aux_weight).expect("validated input");
        (loss, grad.to_flat())
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moe::ModelConfig;

    #[test]
    fn linear_least_squares_is_exact() {
        // loss = ½‖A w − b‖²
        let a = [[1.0, 2.0, -1.0], [0.5, -0.3, 2.0], [3.0, 0.1, 0.0], [-1.0, 1.0, 1.0]];
        let b = [1.0, -2.0, 0.5, 0.0];
        let objective = |w: &[f64]| {
            let r: Vec<f64> = a.iter().zip(&b).map(|(row, bi)| row.iter().zip(w).map(|(x, y)| x * y).sum::<f64>() - bi).collect();
            let loss = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
            let grad = (0..3).map(|j| a.iter().zip(&r).map(|(row, ri)| row[j] * ri).sum()).collect();
            (loss, grad)
        };
        let report = gradient_check(&[0.3, -0.7, 1.1], &[("w".into(), 0..3)], 1e-4, objective);
        assert!(report.max_rel_error() < 1e-8, "{report:?}");
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_experts: 4,
            k: 2,
            d_model: 6,
            d_ff: 5,
            vocab_size: 10,
            seed: 5,
        }
    }

    #[test]
    fn toy_moe_gradients_match_finite_differences() {
        let model = MoeModel::new(small_config()).unwrap();
        assert!(model.parameter_count() <= 10_000);
        let report = model_gradient_check(&model, &[1, 4, 7, 2, 9, 4], 0.3, 1e-4).unwrap();
        assert!(report.max_rel_error() < 1e-4, "{:?}", report.groups.iter().filter(|g| g.rel_error > 1e-5).collect::<Vec<_>>());
    }

    #[test]
    fn zero_input_gradients_are_finite() {
        let mut model = MoeModel::new(small_config()).unwrap();
        model.embed = crate::linalg::Matrix::zeros(10, 6);
        let (loss, grad) = model.loss_and_grad(&[0, 1, 2], 1.0).unwrap();
        assert!(loss.is_finite());
        assert!(grad.all_finite());
        let report = model_gradient_check(&model, &[0, 1, 2], 1.0, 1e-4).unwrap();
        assert!(report.all_finite());
    }
}
