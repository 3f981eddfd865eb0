use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MoeError;
use crate::linalg::{softmax, Matrix};

/// Linear router: one logit per expert, `h(x) = W_r · x`.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterLayer {
    pub weight: Matrix,
}

impl RouterLayer {
    pub fn new(weight: Matrix) -> Self {
        RouterLayer { weight }
    }

    pub fn n_experts(&self) -> usize {
        self.weight.rows()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weight.matvec(x)
    }
}

/// The experts chosen for one token at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    /// Expert indices in descending logit order.
    pub selected: Vec<usize>,
    /// Softmax over the selected logits, aligned with `selected`.
    pub gates: Vec<f64>,
}

impl RoutingDecision {
    /// Uniform `1/k` gates over the given experts.
    pub fn uniform(selected: Vec<usize>) -> Self {
        let k = selected.len() as f64;
        RoutingDecision {
            gates: vec![1.0 / k; selected.len()],
            selected,
        }
    }
}

/// Indices of the `k` largest logits, largest first; equal logits go to
/// the lower index.
pub fn top_k_indices(logits: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Top-k selection followed by a softmax over the kept logits: every
/// logit outside the top k is treated as −∞.
pub fn route_logits(logits: &[f64], k: usize) -> Result<RoutingDecision, MoeError> {
    if k == 0 || k > logits.len() {
        return Err(MoeError::InvalidK { k, n: logits.len() });
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(MoeError::NonFinite("router logits"));
    }
    let selected = top_k_indices(logits, k);
    let kept: Vec<f64> = selected.iter().map(|&i| logits[i]).collect();
    Ok(RoutingDecision {
        gates: softmax(&kept),
        selected,
    })
}

pub fn route(layer: &RouterLayer, x: &[f64], k: usize) -> Result<RoutingDecision, MoeError> {
    if x.len() != layer.weight.cols() {
        return Err(MoeError::DimMismatch {
            expected: layer.weight.cols(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(MoeError::NonFinite("router input"));
    }
    route_logits(&layer.logits(x), k)
}

/// Two-layer feed-forward expert with a SiLU nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

pub(crate) struct ExpertCache {
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
    pub out: Vec<f64>,
}

pub(crate) fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

impl Expert {
    pub fn init<R: Rng>(d_model: usize, d_ff: usize, rng: &mut R) -> Self {
        Expert {
            w1: Matrix::random_normal(d_ff, d_model, 1.0 / (d_model as f64).sqrt(), rng),
            b1: vec![0.0; d_ff],
            w2: Matrix::random_normal(d_model, d_ff, 1.0 / (d_ff as f64).sqrt(), rng),
            b2: vec![0.0; d_model],
        }
    }

    pub fn d_model(&self) -> usize {
        self.w1.cols()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).out
    }

    pub(crate) fn forward_cached(&self, x: &[f64]) -> ExpertCache {
        let mut pre = self.w1.matvec(x);
        for (p, b) in pre.iter_mut().zip(&self.b1) {
            *p += b;
        }
        let act: Vec<f64> = pre.iter().map(|&p| silu(p)).collect();
        let mut out = self.w2.matvec(&act);
        for (o, b) in out.iter_mut().zip(&self.b2) {
            *o += b;
        }
        ExpertCache { pre, act, out }
    }

    /// Accumulates parameter gradients into `grad` and the input gradient
    /// into `dx`, given the upstream gradient `dout` at this expert's output.
    pub(crate) fn backward(&self, x: &[f64], cache: &ExpertCache, dout: &[f64], grad: &mut Expert, dx: &mut [f64]) {
        grad.w2.add_outer(dout, &cache.act);
        for (g, d) in grad.b2.iter_mut().zip(dout) {
            *g += d;
        }
        let mut dact = vec![0.0; cache.act.len()];
        self.w2.matvec_t_acc(dout, &mut dact);
        let dpre: Vec<f64> = dact.iter().zip(&cache.pre).map(|(d, &p)| d * silu_grad(p)).collect();
        grad.w1.add_outer(&dpre, x);
        for (g, d) in grad.b1.iter_mut().zip(&dpre) {
            *g += d;
        }
        self.w1.matvec_t_acc(&dpre, dx);
    }
}

/// `y = Σ_j gates[j] · E_{selected[j]}(x)`.
pub fn moe_layer_forward(experts: &[Expert], decision: &RoutingDecision, x: &[f64]) -> Result<Vec<f64>, MoeError> {
    let d = experts.first().map(Expert::d_model).ok_or(MoeError::NoExperts)?;
    if x.len() != d {
        return Err(MoeError::DimMismatch { expected: d, got: x.len() });
    }
    let mut y = vec![0.0; d];
    for (&e, &g) in decision.selected.iter().zip(&decision.gates) {
        let expert = experts.get(e).ok_or(MoeError::ExpertOutOfRange { expert: e, n: experts.len() })?;
        crate::linalg::axpy(g, &expert.forward(x), &mut y);
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_expert_identity() {
        let d = route_logits(&[0.3], 1).unwrap();
        assert_eq!(d.selected, vec![0]);
        assert_eq!(d.gates, vec![1.0]);
    }

    #[test]
    fn two_of_n_closed_form() {
        let logits = [2.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let d = route_logits(&logits, 2).unwrap();
        assert_eq!(d.selected, vec![0, 1]);
        let e2 = 2f64.exp();
        let e1 = 1f64.exp();
        assert!((d.gates[0] - e2 / (e2 + e1)).abs() < 1e-12);
        assert!((d.gates[0] - 0.7311).abs() < 1e-4);
        assert!((d.gates[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn k_equals_n_is_full_softmax() {
        let logits = [0.5, -1.0, 2.0, 0.1];
        let d = route_logits(&logits, 4).unwrap();
        let full = softmax(&logits);
        for (&i, g) in d.selected.iter().zip(&d.gates) {
            assert!((full[i] - g).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_go_to_lower_index() {
        let d = route_logits(&[1.0, 3.0, 3.0, 1.0], 3).unwrap();
        assert_eq!(d.selected, vec![1, 2, 0]);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let layer = RouterLayer::new(Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        assert!(matches!(route(&layer, &[f64::NAN, 0.0], 1), Err(MoeError::NonFinite(_))));
        assert!(matches!(route(&layer, &[0.0, 0.0], 3), Err(MoeError::InvalidK { .. })));
    }

    #[test]
    fn single_expert_layer_is_dense_ffn() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = Expert::init(4, 6, &mut rng);
        let x = [0.1, -0.2, 0.3, 0.4];
        let y = moe_layer_forward(std::slice::from_ref(&e), &RoutingDecision::uniform(vec![0]), &x).unwrap();
        assert_eq!(y, e.forward(&x));
    }

    #[test]
    fn identical_experts_any_gates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = Expert::init(3, 5, &mut rng);
        let experts = vec![e.clone(), e.clone()];
        let x = [1.0, 0.5, -0.5];
        let dec = RoutingDecision {
            selected: vec![1, 0],
            gates: vec![0.83, 0.17],
        };
        let y = moe_layer_forward(&experts, &dec, &x).unwrap();
        for (a, b) in y.iter().zip(e.forward(&x)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn three_experts_match_explicit_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let experts: Vec<Expert> = (0..3).map(|_| Expert::init(4, 3, &mut rng)).collect();
        let x = [0.3, -0.7, 0.2, 0.9];
        let router = RouterLayer::new(Matrix::random_normal(3, 4, 1.0, &mut rng));
        let dec = route(&router, &x, 2).unwrap();
        let y = moe_layer_forward(&experts, &dec, &x).unwrap();

        // Independent path: explicit per-expert arithmetic, no shared helpers.
        let logits: Vec<f64> = (0..3)
            .map(|i| (0..4).map(|j| router.weight.get(i, j) * x[j]).sum())
            .collect();
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap());
        let z = logits[idx[0]].exp() + logits[idx[1]].exp();
        let mut expected = [0.0; 4];
        for &i in &idx[..2] {
            let p = logits[i].exp() / z;
            let e = &experts[i];
            let hidden: Vec<f64> = (0..3)
                .map(|h| {
                    let u: f64 = (0..4).map(|j| e.w1.get(h, j) * x[j]).sum::<f64>() + e.b1[h];
                    u / (1.0 + (-u).exp())
                })
                .collect();
            for (o, out) in expected.iter_mut().enumerate() {
                let v: f64 = (0..3).map(|h| e.w2.get(o, h) * hidden[h]).sum::<f64>() + e.b2[o];
                *out += p * v;
            }
        }
        for (a, b) in y.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn k_equals_n_is_dense_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let experts: Vec<Expert> = (0..4).map(|_| Expert::init(3, 4, &mut rng)).collect();
        let router = RouterLayer::new(Matrix::random_normal(4, 3, 1.0, &mut rng));
        let x = [0.2, 0.1, -0.4];
        let y = moe_layer_forward(&experts, &route(&router, &x, 4).unwrap(), &x).unwrap();
        let p = softmax(&router.logits(&x));
        let mut dense = vec![0.0; 3];
        for (e, pi) in experts.iter().zip(p) {
            crate::linalg::axpy(pi, &e.forward(&x), &mut dense);
        }
        for (a, b) in y.iter().zip(dense) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn routing_invariants(
            logits in proptest::collection::vec(-20.0f64..20.0, 1..24),
            k_frac in 0.0f64..1.0,
            shift in -50.0f64..50.0,
            scale in 0.01f64..100.0,
        ) {
            let n = logits.len();
            let k = 1 + ((n - 1) as f64 * k_frac) as usize;
            let d = route_logits(&logits, k).unwrap();
            prop_assert_eq!(d.selected.len(), k);
            prop_assert!((d.gates.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(d.gates.iter().all(|&g| g > 0.0));
            let mut uniq = d.selected.clone();
            uniq.sort_unstable();
            uniq.dedup();
            prop_assert_eq!(uniq.len(), k);

            let mut sel = d.selected.clone();
            sel.sort_unstable();
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let mut s2 = route_logits(&shifted, k).unwrap().selected;
            s2.sort_unstable();
            // Float rounding of the shift can only reorder exact ties.
            let kth = logits[*d.selected.last().unwrap()];
            let near_tie = logits.iter().enumerate().any(|(i, &l)| !d.selected.contains(&i) && (l - kth).abs() < 1e-9);
            if !near_tie {
                prop_assert_eq!(&s2, &sel);
                let scaled: Vec<f64> = logits.iter().map(|l| l * scale).collect();
                let mut s3 = route_logits(&scaled, k).unwrap().selected;
                s3.sort_unstable();
                prop_assert_eq!(&s3, &sel);
            }
        }
    }
}
