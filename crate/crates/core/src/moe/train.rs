use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MoeError, MoeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    /// Adam step size.
    pub lr: f64,
    /// Weight of the load-balancing term `N · Σ_i f_i · P_i`.
    pub aux_weight: f64,
    /// Sequences per step.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            lr: 3e-3,
            aux_weight: 0.01,
            batch_size: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss over the corpus before the first step.
    pub initial_loss: f64,
    /// Mean loss over the corpus after the last step.
    pub final_loss: f64,
    /// Mini-batch loss per step.
    pub step_losses: Vec<f64>,
}

fn corpus_loss(model: &MoeModel, corpus: &[Vec<u32>], aux_weight: f64) -> Result<f64, MoeError> {
    let mut total = 0.0;
    for seq in corpus {
        total += model.loss(seq, aux_weight)?;
    }
    Ok(total / corpus.len() as f64)
}

fn diverged(e: MoeError, step: usize) -> MoeError {
    match e {
        MoeError::NonFinite(_) => MoeError::Diverged { step, loss: f64::NAN },
        other => other,
    }
}

/// Trains `model` in place on next-token prediction with Adam.
pub fn train_toy(model: &mut MoeModel, corpus: &[Vec<u32>], cfg: &TrainConfig) -> Result<TrainReport, MoeError> {
    let corpus: Vec<Vec<u32>> = corpus.iter().filter(|s| !s.is_empty()).cloned().collect();
    if corpus.is_empty() {
        return Err(MoeError::EmptyInput);
    }
    let initial_loss = corpus_loss(model, &corpus, cfg.aux_weight)?;
    if cfg.steps == 0 {
        return Ok(TrainReport {
            initial_loss,
            final_loss: initial_loss,
            step_losses: Vec::new(),
        });
    }

    let (beta1, beta2, adam_eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut params = model.to_flat();
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let batch = cfg.batch_size.max(1);
    let mut step_losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut grad_sum = vec![0.0; params.len()];
        let mut loss_sum = 0.0;
        for _ in 0..batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let seq = &corpus[order[cursor]];
            cursor += 1;
            let (loss, grad) = model.loss_and_grad(seq, cfg.aux_weight).map_err(|e| diverged(e, step))?;
            loss_sum += loss;
            for (g, x) in grad_sum.iter_mut().zip(grad.to_flat()) {
                *g += x;
            }
        }
        let loss = loss_sum / batch as f64;
        if !loss.is_finite() {
            return Err(MoeError::Diverged { step, loss });
        }
        step_losses.push(loss);

        let t = (step + 1) as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let g = grad_sum[i] / batch as f64;
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            params[i] -= cfg.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + adam_eps);
        }
        model.set_flat(&params);
        if !model.all_finite() {
            return Err(MoeError::Diverged { step, loss: f64::NAN });
        }
    }

    let final_loss = corpus_loss(model, &corpus, cfg.aux_weight).map_err(|e| diverged(e, cfg.steps))?;
    if !final_loss.is_finite() {
        return Err(MoeError::Diverged {
            step: cfg.steps,
            loss: final_loss,
        });
    }
    Ok(TrainReport {
        initial_loss,
        final_loss,
        step_losses,
    })
}
