//! Toy decoder-only transformer with MoE feed-forward layers.
//!
//! Block layout (pre-norm, single-head causal attention):
//!
//! ```text
//! h = x + Wo · Attn(RMSNorm(x))
//! x' = h + Σ_j g_j · E_j(RMSNorm(h))
//! ```
//!
//! followed by a final RMSNorm and an untied output projection. Gradients
//! are computed by hand; TopK selection is treated as constant.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{route_logits, Expert, ExpertCache, RouterLayer, RoutingDecision};
use super::{ModelConfig, MoeError};
use crate::linalg::{axpy, dot, softmax, softmax_backward, Matrix};

const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub attn_norm: Vec<f64>,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ffn_norm: Vec<f64>,
    pub router: RouterLayer,
    pub experts: Vec<Expert>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoeModel {
    config: ModelConfig,
    pub embed: Matrix,
    pub blocks: Vec<Block>,
    pub final_norm: Vec<f64>,
    pub unembed: Matrix,
}

/// Per-token, per-layer routing decisions: `trace[token][layer]`.
pub type RoutingTrace = Vec<Vec<RoutingDecision>>;

struct NormCache {
    normed: Vec<f64>,
    rms: f64,
}

fn rms_norm(x: &[f64], gain: &[f64]) -> (Vec<f64>, NormCache) {
    let ms = dot(x, x) / x.len() as f64;
    let rms = (ms + NORM_EPS).sqrt();
    let normed: Vec<f64> = x.iter().map(|v| v / rms).collect();
    let out = normed.iter().zip(gain).map(|(n, g)| n * g).collect();
    (out, NormCache { normed, rms })
}

/// Returns dL/dx and accumulates dL/dgain.
fn rms_norm_backward(dout: &[f64], gain: &[f64], cache: &NormCache, dgain: &mut [f64]) -> Vec<f64> {
    let dn: Vec<f64> = dout.iter().zip(gain).map(|(d, g)| d * g).collect();
    for ((dg, d), n) in dgain.iter_mut().zip(dout).zip(&cache.normed) {
        *dg += d * n;
    }
    let mean = dot(&dn, &cache.normed) / dn.len() as f64;
    dn.iter()
        .zip(&cache.normed)
        .map(|(d, n)| (d - n * mean) / cache.rms)
        .collect()
}

struct BlockCache {
    attn_norm: Vec<NormCache>,
    attn_in: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    attn_probs: Vec<Vec<f64>>,
    attn_out: Vec<Vec<f64>>,
    ffn_norm: Vec<NormCache>,
    ffn_in: Vec<Vec<f64>>,
    router_probs: Vec<Vec<f64>>,
    decisions: Vec<RoutingDecision>,
    experts: Vec<Vec<ExpertCache>>,
}

struct ForwardPass {
    logits: Vec<Vec<f64>>,
    blocks: Vec<BlockCache>,
    final_norm: Vec<NormCache>,
    final_out: Vec<Vec<f64>>,
}

impl Block {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        let std = 1.0 / (d as f64).sqrt();
        Block {
            attn_norm: vec![1.0; d],
            wq: Matrix::random_normal(d, d, std, rng),
            wk: Matrix::random_normal(d, d, std, rng),
            wv: Matrix::random_normal(d, d, std, rng),
            wo: Matrix::random_normal(d, d, std, rng),
            ffn_norm: vec![1.0; d],
            router: RouterLayer::new(Matrix::random_normal(cfg.n_experts, d, std, rng)),
            experts: (0..cfg.n_experts).map(|_| Expert::init(d, cfg.d_ff, rng)).collect(),
        }
    }

    fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        Block {
            attn_norm: vec![0.0; d],
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
            ffn_norm: vec![0.0; d],
            router: RouterLayer::new(Matrix::zeros(cfg.n_experts, d)),
            experts: (0..cfg.n_experts)
                .map(|_| Expert {
                    w1: Matrix::zeros(cfg.d_ff, d),
                    b1: vec![0.0; cfg.d_ff],
                    w2: Matrix::zeros(d, cfg.d_ff),
                    b2: vec![0.0; d],
                })
                .collect(),
        }
    }
}

impl MoeModel {
    /// Randomly initialized model, seeded from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self, MoeError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let embed = Matrix::random_normal(config.vocab_size, d, 1.0, &mut rng);
        let blocks = (0..config.n_layers).map(|_| Block::init(&config, &mut rng)).collect();
        let unembed = Matrix::random_normal(config.vocab_size, d, 1.0 / (d as f64).sqrt(), &mut rng);
        Ok(MoeModel {
            embed,
            blocks,
            final_norm: vec![1.0; d],
            unembed,
            config,
        })
    }

    /// Same shapes as `self`, all parameters zero. Used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let cfg = &self.config;
        MoeModel {
            config: cfg.clone(),
            embed: Matrix::zeros(cfg.vocab_size, cfg.d_model),
            blocks: (0..cfg.n_layers).map(|_| Block::zeros(cfg)).collect(),
            final_norm: vec![0.0; cfg.d_model],
            unembed: Matrix::zeros(cfg.vocab_size, cfg.d_model),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Named parameter tensors in declaration order (the checkpoint order).
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![("embed".into(), self.embed.as_slice())];
        for (l, b) in self.blocks.iter().enumerate() {
            out.push((format!("blocks.{l}.attn_norm"), &b.attn_norm));
            out.push((format!("blocks.{l}.wq"), b.wq.as_slice()));
            out.push((format!("blocks.{l}.wk"), b.wk.as_slice()));
            out.push((format!("blocks.{l}.wv"), b.wv.as_slice()));
            out.push((format!("blocks.{l}.wo"), b.wo.as_slice()));
            out.push((format!("blocks.{l}.ffn_norm"), &b.ffn_norm));
            out.push((format!("blocks.{l}.router"), b.router.weight.as_slice()));
            for (e, ex) in b.experts.iter().enumerate() {
                out.push((format!("blocks.{l}.experts.{e}.w1"), ex.w1.as_slice()));
                out.push((format!("blocks.{l}.experts.{e}.b1"), &ex.b1));
                out.push((format!("blocks.{l}.experts.{e}.w2"), ex.w2.as_slice()));
                out.push((format!("blocks.{l}.experts.{e}.b2"), &ex.b2));
            }
        }
        out.push(("final_norm".into(), &self.final_norm));
        out.push(("unembed".into(), self.unembed.as_slice()));
        out
    }

    /// Mutable tensors, same order as [`MoeModel::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.embed.as_mut_slice()];
        for b in &mut self.blocks {
            out.push(&mut b.attn_norm);
            out.push(b.wq.as_mut_slice());
            out.push(b.wk.as_mut_slice());
            out.push(b.wv.as_mut_slice());
            out.push(b.wo.as_mut_slice());
            out.push(&mut b.ffn_norm);
            out.push(b.router.weight.as_mut_slice());
            for ex in &mut b.experts {
                out.push(ex.w1.as_mut_slice());
                out.push(&mut ex.b1);
                out.push(ex.w2.as_mut_slice());
                out.push(&mut ex.b2);
            }
        }
        out.push(&mut self.final_norm);
        out.push(self.unembed.as_mut_slice());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length");
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<(), MoeError> {
        if tokens.is_empty() {
            return Err(MoeError::EmptyInput);
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(MoeError::TokenOutOfRange {
                token: t,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Runs the model and records the routing decision of every token at
    /// every layer. Returns next-token logits per position and the trace,
    /// indexed `[token][layer]`.
    pub fn forward_with_trace(&self, tokens: &[u32]) -> Result<(Vec<Vec<f64>>, RoutingTrace), MoeError> {
        self.check_tokens(tokens)?;
        let pass = self.forward(tokens)?;
        let n = tokens.len();
        let mut trace: RoutingTrace = vec![Vec::with_capacity(self.config.n_layers); n];
        for block in pass.blocks {
            for (t, d) in block.decisions.into_iter().enumerate() {
                trace[t].push(d);
            }
        }
        Ok((pass.logits, trace))
    }

    fn forward(&self, tokens: &[u32]) -> Result<ForwardPass, MoeError> {
        let d = self.config.d_model;
        let k_route = self.config.k;
        let scale = 1.0 / (d as f64).sqrt();
        let mut x: Vec<Vec<f64>> = tokens.iter().map(|&t| self.embed.row(t as usize).to_vec()).collect();
        let mut caches = Vec::with_capacity(self.blocks.len());

        for block in &self.blocks {
            let (attn_in, attn_norm): (Vec<_>, Vec<_>) = x.iter().map(|xt| rms_norm(xt, &block.attn_norm)).unzip();
            let q: Vec<Vec<f64>> = attn_in.iter().map(|a| block.wq.matvec(a)).collect();
            let k: Vec<Vec<f64>> = attn_in.iter().map(|a| block.wk.matvec(a)).collect();
            let v: Vec<Vec<f64>> = attn_in.iter().map(|a| block.wv.matvec(a)).collect();
            let mut attn_probs = Vec::with_capacity(x.len());
            let mut attn_out = Vec::with_capacity(x.len());
            let mut h = Vec::with_capacity(x.len());
            for t in 0..x.len() {
                let scores: Vec<f64> = (0..=t).map(|j| dot(&q[t], &k[j]) * scale).collect();
                let probs = softmax(&scores);
                let mut o = vec![0.0; d];
                for (j, &p) in probs.iter().enumerate() {
                    axpy(p, &v[j], &mut o);
                }
                let mut ht = block.wo.matvec(&o);
                axpy(1.0, &x[t], &mut ht);
                attn_probs.push(probs);
                attn_out.push(o);
                h.push(ht);
            }

            let (ffn_in, ffn_norm): (Vec<_>, Vec<_>) = h.iter().map(|ht| rms_norm(ht, &block.ffn_norm)).unzip();
            let mut router_probs = Vec::with_capacity(x.len());
            let mut decisions = Vec::with_capacity(x.len());
            let mut expert_caches = Vec::with_capacity(x.len());
            let mut next = h;
            for (t, m) in ffn_in.iter().enumerate() {
                let logits = block.router.logits(m);
                let decision = route_logits(&logits, k_route)?;
                let mut per_token = Vec::with_capacity(k_route);
                for (&e, &g) in decision.selected.iter().zip(&decision.gates) {
                    let c = block.experts[e].forward_cached(m);
                    axpy(g, &c.out, &mut next[t]);
                    per_token.push(c);
                }
                router_probs.push(softmax(&logits));
                decisions.push(decision);
                expert_caches.push(per_token);
            }
            caches.push(BlockCache {
                attn_norm,
                attn_in,
                q,
                k,
                v,
                attn_probs,
                attn_out,
                ffn_norm,
                ffn_in,
                router_probs,
                decisions,
                experts: expert_caches,
            });
            x = next;
        }

        let (final_out, final_norm): (Vec<_>, Vec<_>) = x.iter().map(|xt| rms_norm(xt, &self.final_norm)).unzip();
        let logits = final_out.iter().map(|f| self.unembed.matvec(f)).collect();
        Ok(ForwardPass {
            logits,
            blocks: caches,
            final_norm,
            final_out,
        })
    }

    /// Next-token cross-entropy (mean over the first `n − 1` positions)
    /// plus `aux_weight` times the load-balancing loss.
    pub fn loss(&self, tokens: &[u32], aux_weight: f64) -> Result<f64, MoeError> {
        self.check_tokens(tokens)?;
        let pass = self.forward(tokens)?;
        Ok(self.loss_terms(tokens, &pass, aux_weight).0)
    }

    /// Returns (total, cross-entropy, auxiliary) loss and the per-layer
    /// expert dispatch fractions used by the auxiliary term.
    fn loss_terms(&self, tokens: &[u32], pass: &ForwardPass, aux_weight: f64) -> (f64, f64, f64, Vec<Vec<f64>>) {
        let n_targets = tokens.len().saturating_sub(1);
        let mut ce = 0.0;
        for t in 0..n_targets {
            let p = softmax(&pass.logits[t]);
            ce -= p[tokens[t + 1] as usize].max(f64::MIN_POSITIVE).ln();
        }
        if n_targets > 0 {
            ce /= n_targets as f64;
        }
        let fractions: Vec<Vec<f64>> = pass.blocks.iter().map(|b| self.dispatch_fractions(b)).collect();
        let n_exp = self.config.n_experts as f64;
        let mut aux = 0.0;
        for (b, f) in pass.blocks.iter().zip(&fractions) {
            let tokens_n = b.router_probs.len() as f64;
            for (i, fi) in f.iter().enumerate() {
                let pi: f64 = b.router_probs.iter().map(|p| p[i]).sum::<f64>() / tokens_n;
                aux += n_exp * fi * pi;
            }
        }
        aux /= pass.blocks.len() as f64;
        (ce + aux_weight * aux, ce, aux, fractions)
    }

    fn dispatch_fractions(&self, block: &BlockCache) -> Vec<f64> {
        let mut f = vec![0.0; self.config.n_experts];
        for d in &block.decisions {
            for &e in &d.selected {
                f[e] += 1.0;
            }
        }
        let total = (block.decisions.len() * self.config.k) as f64;
        f.iter_mut().for_each(|v| *v /= total);
        f
    }

    /// Loss and analytic gradient, with TopK selection held fixed.
    pub fn loss_and_grad(&self, tokens: &[u32], aux_weight: f64) -> Result<(f64, MoeModel), MoeError> {
        self.check_tokens(tokens)?;
        let pass = self.forward(tokens)?;
        let (loss, _, _, fractions) = self.loss_terms(tokens, &pass, aux_weight);
        let mut grad = self.zeros_like();
        let n = tokens.len();
        let d = self.config.d_model;
        let n_targets = n.saturating_sub(1);
        let scale = 1.0 / (d as f64).sqrt();

        // Output head and final norm.
        let mut dx: Vec<Vec<f64>> = vec![vec![0.0; d]; n];
        for t in 0..n_targets {
            let mut dlogits = softmax(&pass.logits[t]);
            dlogits[tokens[t + 1] as usize] -= 1.0;
            dlogits.iter_mut().for_each(|v| *v /= n_targets as f64);
            grad.unembed.add_outer(&dlogits, &pass.final_out[t]);
            let mut df = vec![0.0; d];
            self.unembed.matvec_t_acc(&dlogits, &mut df);
            dx[t] = rms_norm_backward(&df, &self.final_norm, &pass.final_norm[t], &mut grad.final_norm);
        }

        let n_layers = self.blocks.len() as f64;
        let n_exp = self.config.n_experts as f64;
        for (l, (block, cache)) in self.blocks.iter().zip(&pass.blocks).enumerate().rev() {
            let gblock = &mut grad.blocks[l];

            // MoE feed-forward: x' = h + Σ g_j E_j(m).
            let mut dh = dx.clone();
            let aux_dp: Vec<f64> = fractions[l]
                .iter()
                .map(|fi| aux_weight * n_exp * fi / (n as f64 * n_layers))
                .collect();
            for t in 0..n {
                let m = &cache.ffn_in[t];
                let dy = &dx[t];
                let decision = &cache.decisions[t];
                let mut dm = vec![0.0; d];
                let mut dgates = Vec::with_capacity(decision.selected.len());
                for (j, (&e, &g)) in decision.selected.iter().zip(&decision.gates).enumerate() {
                    let ec = &cache.experts[t][j];
                    dgates.push(dot(dy, &ec.out));
                    let dout: Vec<f64> = dy.iter().map(|v| v * g).collect();
                    block.experts[e].backward(m, ec, &dout, &mut gblock.experts[e], &mut dm);
                }
                let dsel = softmax_backward(&decision.gates, &dgates);
                let mut dlogits = vec![0.0; self.config.n_experts];
                for (&e, ds) in decision.selected.iter().zip(&dsel) {
                    dlogits[e] += ds;
                }
                if aux_weight != 0.0 {
                    let dr = softmax_backward(&cache.router_probs[t], &aux_dp);
                    axpy(1.0, &dr, &mut dlogits);
                }
                gblock.router.weight.add_outer(&dlogits, m);
                block.router.weight.matvec_t_acc(&dlogits, &mut dm);
                let dres = rms_norm_backward(&dm, &block.ffn_norm, &cache.ffn_norm[t], &mut gblock.ffn_norm);
                axpy(1.0, &dres, &mut dh[t]);
            }

            // Attention: h = x + Wo · Σ_j a_tj v_j.
            let mut dq = vec![vec![0.0; d]; n];
            let mut dk = vec![vec![0.0; d]; n];
            let mut dv = vec![vec![0.0; d]; n];
            for t in 0..n {
                gblock.wo.add_outer(&dh[t], &cache.attn_out[t]);
                let mut d_o = vec![0.0; d];
                block.wo.matvec_t_acc(&dh[t], &mut d_o);
                let probs = &cache.attn_probs[t];
                let dprobs: Vec<f64> = (0..=t).map(|j| dot(&d_o, &cache.v[j])).collect();
                for (j, &p) in probs.iter().enumerate() {
                    axpy(p, &d_o, &mut dv[j]);
                }
                let dscores = softmax_backward(probs, &dprobs);
                for (j, &ds) in dscores.iter().enumerate() {
                    axpy(ds * scale, &cache.k[j], &mut dq[t]);
                    axpy(ds * scale, &cache.q[t], &mut dk[j]);
                }
            }
            let mut dx_prev = dh;
            for t in 0..n {
                let a = &cache.attn_in[t];
                gblock.wq.add_outer(&dq[t], a);
                gblock.wk.add_outer(&dk[t], a);
                gblock.wv.add_outer(&dv[t], a);
                let mut da = vec![0.0; d];
                block.wq.matvec_t_acc(&dq[t], &mut da);
                block.wk.matvec_t_acc(&dk[t], &mut da);
                block.wv.matvec_t_acc(&dv[t], &mut da);
                let dres = rms_norm_backward(&da, &block.attn_norm, &cache.attn_norm[t], &mut gblock.attn_norm);
                axpy(1.0, &dres, &mut dx_prev[t]);
            }
            dx = dx_prev;
        }

        for (t, &tok) in tokens.iter().enumerate() {
            axpy(1.0, &dx[t], grad.embed.row_mut(tok as usize));
        }
        Ok((loss, grad))
    }

    /// Per-layer expert assignment counts over a set of sequences,
    /// `counts[layer][expert]`.
    pub fn assignment_counts(&self, sequences: &[Vec<u32>]) -> Result<Vec<Vec<u64>>, MoeError> {
        let mut counts = vec![vec![0u64; self.config.n_experts]; self.config.n_layers];
        for seq in sequences.iter().filter(|s| !s.is_empty()) {
            let (_, trace) = self.forward_with_trace(seq)?;
            for per_token in trace {
                for (l, d) in per_token.iter().enumerate() {
                    for &e in &d.selected {
                        counts[l][e] += 1;
                    }
                }
            }
        }
        Ok(counts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n_layers: usize, n_experts: usize, k: usize) -> ModelConfig {
        ModelConfig {
            n_layers,
            n_experts,
            k,
            d_model: 8,
            d_ff: 6,
            vocab_size: 16,
            seed: 11,
        }
    }

    #[test]
    fn mixtral_shaped_path_matrix() {
        let model = MoeModel::new(ModelConfig {
            d_model: 4,
            d_ff: 4,
            ..tiny(32, 8, 2)
        })
        .unwrap();
        let (logits, trace) = model.forward_with_trace(&[3]).unwrap();
        assert_eq!(logits.len(), 1);
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0].len(), 32);
        assert!(trace[0].iter().all(|d| d.selected.len() == 2));
        assert_eq!(trace[0].len() * trace[0][0].selected.len(), 64);
    }

    #[test]
    fn trace_is_deterministic() {
        let model = MoeModel::new(tiny(3, 4, 2)).unwrap();
        let a = model.forward_with_trace(&[1, 5, 2, 9]).unwrap();
        let b = model.forward_with_trace(&[1, 5, 2, 9]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_and_out_of_range_input() {
        let model = MoeModel::new(tiny(1, 2, 1)).unwrap();
        assert!(matches!(model.forward_with_trace(&[]), Err(MoeError::EmptyInput)));
        assert!(matches!(
            model.forward_with_trace(&[16]),
            Err(MoeError::TokenOutOfRange { token: 16, .. })
        ));
    }

    #[test]
    fn hand_set_router_picks_sign_of_dot_product() {
        // L=1, N=2, k=1. Router row 0 = u, row 1 = -u, so expert 0 wins
        // exactly when u · RMSNorm(h) > 0. With zeroed attention output,
        // h equals the token embedding, and the norm preserves sign.
        let mut model = MoeModel::new(ModelConfig {
            d_model: 2,
            ..tiny(1, 2, 1)
        })
        .unwrap();
        let block = &mut model.blocks[0];
        block.wo = Matrix::zeros(2, 2);
        block.router.weight = Matrix::from_vec(2, 2, vec![1.0, -2.0, -1.0, 2.0]);
        model.embed.row_mut(0).copy_from_slice(&[3.0, 1.0]); // 3 - 2 = 1 > 0
        model.embed.row_mut(1).copy_from_slice(&[1.0, 1.0]); // 1 - 2 = -1 < 0
        let (_, trace) = model.forward_with_trace(&[0, 1]).unwrap();
        assert_eq!(trace[0][0].selected, vec![0]);
        assert_eq!(trace[1][0].selected, vec![1]);
    }

    #[test]
    fn flat_round_trip() {
        let model = MoeModel::new(tiny(2, 3, 2)).unwrap();
        let flat = model.to_flat();
        assert_eq!(flat.len(), model.parameter_count());
        let mut other = model.zeros_like();
        other.set_flat(&flat);
        assert_eq!(other, model);
    }
}
