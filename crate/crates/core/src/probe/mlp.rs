use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConfusionMatrix, Encoding, ProbeConfig, ProbeError};
use crate::corpus::Upos;
use crate::moe::{gradient_check, GradCheckReport};

const ADAM_EPS: f64 = 1e-8;

/// One hidden ReLU layer and a softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub classes: Vec<Upos>,
    pub encoding: Encoding,
    /// `input_dim × hidden`.
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// `hidden × classes`.
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub epochs_run: usize,
    /// Mean training loss per epoch.
    pub loss_curve: Vec<f64>,
}

impl ProbeModel {
    /// Glorot-uniform weights and biases, as scikit-learn initializes them.
    pub fn init(input_dim: usize, classes: Vec<Upos>, cfg: &ProbeConfig, rng: &mut impl Rng) -> Self {
        let h = cfg.hidden_width;
        let c = classes.len();
        let mut uniform = |rows: usize, cols: usize, fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
        };
        let w1 = uniform(input_dim, h, input_dim, h);
        let b1 = uniform(h, 1, input_dim, h).column(0).into_owned();
        let w2 = uniform(h, c, h, c);
        let b2 = uniform(c, 1, h, c).column(0).into_owned();
        ProbeModel {
            classes,
            encoding: cfg.encoding,
            w1,
            b1,
            w2,
            b2,
            epochs_run: 0,
            loss_curve: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    fn hidden(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = x * &self.w1;
        for (j, mut col) in h.column_iter_mut().enumerate() {
            let b = self.b1[j];
            col.apply(|v| *v = (*v + b).max(0.0));
        }
        h
    }

    fn output(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = h * &self.w2;
        for (j, mut col) in z.column_iter_mut().enumerate() {
            let b = self.b2[j];
            col.add_scalar_mut(b);
        }
        for i in 0..z.nrows() {
            let max = z.row(i).max();
            let mut sum = 0.0;
            for j in 0..z.ncols() {
                let e = (z[(i, j)] - max).exp();
                z[(i, j)] = e;
                sum += e;
            }
            for j in 0..z.ncols() {
                z[(i, j)] /= sum;
            }
        }
        z
    }

    /// Class probabilities, one row per input row.
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, ProbeError> {
        if x.ncols() != self.input_dim() {
            return Err(ProbeError::DimMismatch {
                expected: self.input_dim(),
                found: x.ncols(),
            });
        }
        Ok(self.output(&self.hidden(x)))
    }

    /// Arg-max class per row; ties go to the lower class index.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>, ProbeError> {
        let p = self.predict_proba(x)?;
        Ok((0..p.nrows())
            .map(|i| {
                let mut best = 0;
                for j in 1..p.ncols() {
                    if p[(i, j)] > p[(i, best)] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Mean cross-entropy plus `alpha / (2n) · ‖W‖²`, and its gradient in
    /// the layout of [`ProbeModel::to_flat`].
    pub fn loss_and_grad(&self, x: &DMatrix<f64>, y: &[usize], alpha: f64) -> (f64, Vec<f64>) {
        let n = x.nrows() as f64;
        let h = self.hidden(x);
        let p = self.output(&h);
        let mut loss = 0.0;
        let mut delta = p;
        for (i, &label) in y.iter().enumerate() {
            loss -= delta[(i, label)].max(f64::MIN_POSITIVE).ln();
            delta[(i, label)] -= 1.0;
        }
        loss /= n;
        loss += alpha / (2.0 * n) * (self.w1.norm_squared() + self.w2.norm_squared());
        delta /= n;

        let gw2 = h.transpose() * &delta + &self.w2 * (alpha / n);
        let gb2: Vec<f64> = delta.column_iter().map(|c| c.sum()).collect();
        let mut dh = &delta * self.w2.transpose();
        dh.zip_apply(&h, |d, hv| {
            if hv <= 0.0 {
                *d = 0.0
            }
        });
        let gw1 = x.transpose() * &dh + &self.w1 * (alpha / n);
        let gb1: Vec<f64> = dh.column_iter().map(|c| c.sum()).collect();

        let mut grad = Vec::with_capacity(self.param_count());
        grad.extend_from_slice(gw1.as_slice());
        grad.extend_from_slice(&gb1);
        grad.extend_from_slice(gw2.as_slice());
        grad.extend_from_slice(&gb2);
        (loss, grad)
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Named parameter ranges in the flat layout.
    pub fn param_groups(&self) -> Vec<(String, Range<usize>)> {
        let mut out = Vec::new();
        let mut off = 0;
        for (name, len) in [("w1", self.w1.len()), ("b1", self.b1.len()), ("w2", self.w2.len()), ("b2", self.b2.len())] {
            out.push((name.to_string(), off..off + len));
            off += len;
        }
        out
    }

    /// `w1`, `b1`, `w2`, `b2`, matrices column-major.
    pub fn to_flat(&self) -> Vec<f64> {
        [self.w1.as_slice(), self.b1.as_slice(), self.w2.as_slice(), self.b2.as_slice()].concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut rest = flat;
        for dst in [
            self.w1.as_mut_slice(),
            self.b1.as_mut_slice(),
            self.w2.as_mut_slice(),
            self.b2.as_mut_slice(),
        ] {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
    }
}

fn check_inputs(x: &DMatrix<f64>, y: &[usize], n_classes: usize) -> Result<(), ProbeError> {
    if x.nrows() == 0 {
        return Err(ProbeError::Empty);
    }
    if x.nrows() != y.len() {
        return Err(ProbeError::LengthMismatch {
            rows: x.nrows(),
            labels: y.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(ProbeError::NonFiniteInput);
    }
    if let Some(&label) = y.iter().find(|&&l| l >= n_classes) {
        return Err(ProbeError::LabelOutOfRange {
            label,
            classes: n_classes,
        });
    }
    Ok(())
}

/// Mini-batch Adam on softmax cross-entropy. Stops after `max_epochs` or
/// once the epoch loss has failed to improve by `convergence_tol` for
/// `patience` consecutive epochs.
pub fn train_probe(x: &DMatrix<f64>, y: &[usize], classes: Vec<Upos>, cfg: &ProbeConfig) -> Result<ProbeModel, ProbeError> {
    cfg.validate()?;
    check_inputs(x, y, classes.len())?;
    if y.len() < classes.len() {
        return Err(ProbeError::TooFewSamples {
            samples: y.len(),
            classes: classes.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ProbeModel::init(x.ncols(), classes, cfg, &mut rng);
    let mut params = model.to_flat();
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut t = 0i32;
    let mut best = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select_rows(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let (loss, grad) = model.loss_and_grad(&xb, &yb, cfg.alpha);
            if !loss.is_finite() {
                return Err(ProbeError::NonFinite { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            t += 1;
            let lr_t = cfg.learning_rate * (1.0 - cfg.beta2.powi(t)).sqrt() / (1.0 - cfg.beta1.powi(t));
            for i in 0..params.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                params[i] -= lr_t * m[i] / (v[i].sqrt() + ADAM_EPS);
            }
            model.set_flat(&params);
        }
        let epoch_loss = epoch_loss / y.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(ProbeError::NonFinite { epoch });
        }
        model.loss_curve.push(epoch_loss);
        model.epochs_run = epoch + 1;

        if epoch_loss > best - cfg.convergence_tol {
            stale += 1;
        } else {
            stale = 0;
        }
        best = best.min(epoch_loss);
        if stale >= cfg.patience {
            break;
        }
    }
    Ok(model)
}

/// Accuracy and confusion matrix of `model` on labelled rows.
pub fn evaluate_probe(model: &ProbeModel, x: &DMatrix<f64>, y: &[usize]) -> Result<(f64, ConfusionMatrix), ProbeError> {
    check_inputs(x, y, model.classes.len())?;
    let predicted = model.predict(x)?;
    let cm = ConfusionMatrix::from_predictions(model.classes.clone(), y, &predicted);
    Ok((cm.accuracy(), cm))
}

/// Central-difference check of [`ProbeModel::loss_and_grad`], one group
/// per weight or bias tensor.
pub fn probe_gradient_check(model: &ProbeModel, x: &DMatrix<f64>, y: &[usize], alpha: f64, eps: f64) -> GradCheckReport {
    let mut work = model.clone();
    gradient_check(&model.to_flat(), &model.param_groups(), eps, |p| {
        work.set_flat(p);
        work.loss_and_grad(x, y, alpha)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class() -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200;
        let mut y = Vec::with_capacity(n);
        let x = DMatrix::from_fn(n, 2, |i, j| {
            let class = i % 2;
            if j == 0 {
                y.push(class);
            }
            let centre = if class == 0 { -2.0 } else { 2.0 };
            centre + rng.random_range(-1.0..1.0)
        });
        (x, y)
    }

    #[test]
    fn separable_two_class_reaches_full_training_accuracy() {
        let (x, y) = two_class();
        let model = train_probe(&x, &y, vec![Upos::Noun, Upos::Verb], &ProbeConfig::default()).unwrap();
        let (acc, cm) = evaluate_probe(&model, &x, &y).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(cm.counts, vec![vec![100, 0], vec![0, 100]]);
    }

    #[test]
    fn probabilities_sum_to_one() {
        let (x, y) = two_class();
        let cfg = ProbeConfig {
            max_epochs: 3,
            ..Default::default()
        };
        let model = train_probe(&x, &y, vec![Upos::Noun, Upos::Verb], &cfg).unwrap();
        let p = model.predict_proba(&x).unwrap();
        for i in 0..p.nrows() {
            assert!((p.row(i).sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (x, y) = two_class();
        let cfg = ProbeConfig {
            max_epochs: 20,
            seed: 9,
            ..Default::default()
        };
        let a = train_probe(&x, &y, vec![Upos::Noun, Upos::Verb], &cfg).unwrap();
        let b = train_probe(&x, &y, vec![Upos::Noun, Upos::Verb], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(12, 5, |_, _| rng.random_range(0.0..8.0));
        let y: Vec<usize> = (0..12).map(|i| i % 4).collect();
        let cfg = ProbeConfig {
            hidden_width: 7,
            ..Default::default()
        };
        let model = ProbeModel::init(5, vec![Upos::Noun, Upos::Verb, Upos::Adj, Upos::Det], &cfg, &mut rng);
        let report = probe_gradient_check(&model, &x, &y, 0.1, 1e-6);
        assert!(report.max_rel_error() < 1e-6, "{report:?}");
    }

    #[test]
    fn input_errors() {
        let (x, y) = two_class();
        let classes = vec![Upos::Noun, Upos::Verb];
        assert!(matches!(
            train_probe(&x, &y[..10], classes.clone(), &ProbeConfig::default()),
            Err(ProbeError::LengthMismatch { .. })
        ));
        let bad: Vec<usize> = y.iter().map(|&l| l + 1).collect();
        assert!(matches!(
            train_probe(&x, &bad, classes.clone(), &ProbeConfig::default()),
            Err(ProbeError::LabelOutOfRange { .. })
        ));
        let x1 = x.rows(0, 1).into_owned();
        assert!(matches!(
            train_probe(&x1, &y[..1], classes, &ProbeConfig::default()),
            Err(ProbeError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let x = DMatrix::from_element(4, 2, f64::NAN);
        let r = train_probe(&x, &[0, 1, 0, 1], vec![Upos::Noun, Upos::Verb], &ProbeConfig::default());
        assert!(matches!(r, Err(ProbeError::NonFiniteInput)));
    }

    #[test]
    fn exploding_learning_rate_reports_non_finite_loss() {
        let (x, y) = two_class();
        let cfg = ProbeConfig {
            learning_rate: 1e300,
            ..Default::default()
        };
        let r = train_probe(&x, &y, vec![Upos::Noun, Upos::Verb], &cfg);
        assert!(matches!(r, Err(ProbeError::NonFinite { .. })), "{r:?}");
    }
}
