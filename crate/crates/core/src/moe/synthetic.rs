//! Routers with known behavior, used to produce traces whose metric values
//! are known in advance.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MoeError, RoutingDecision, RoutingTrace};
use crate::corpus::{PosTagset, Upos};
use crate::tokenizer::AlignedToken;

/// Deterministic POS → experts routing, one expert list per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PosOracle {
    table: BTreeMap<Upos, Vec<Vec<usize>>>,
}

impl PosOracle {
    /// `table[tag][layer]` lists the `k` experts (in gate order) used for
    /// every token of `tag` at `layer`.
    pub fn new(table: BTreeMap<Upos, Vec<Vec<usize>>>, n_layers: usize, n_experts: usize, k: usize) -> Result<Self, MoeError> {
        for (tag, layers) in &table {
            if layers.len() != n_layers {
                return Err(MoeError::InvalidOracle(format!("{tag}: {} layers, expected {n_layers}", layers.len())));
            }
            for experts in layers {
                let mut uniq = experts.clone();
                uniq.sort_unstable();
                uniq.dedup();
                if experts.len() != k || uniq.len() != k || experts.iter().any(|&e| e >= n_experts) {
                    return Err(MoeError::InvalidOracle(format!("{tag}: bad expert list {experts:?}")));
                }
            }
        }
        Ok(PosOracle { table })
    }

    /// Same `k` experts for a tag at every layer.
    pub fn constant(map: BTreeMap<Upos, Vec<usize>>, n_layers: usize, n_experts: usize, k: usize) -> Result<Self, MoeError> {
        let table = map.into_iter().map(|(t, e)| (t, vec![e; n_layers])).collect();
        Self::new(table, n_layers, n_experts, k)
    }

    /// Assigns each tag of `tagset` a path that differs from every other
    /// tag's path in its top-1 expert sequence (given enough layers) and in
    /// its layer-0 expert list (given `k ≥ 2` and enough experts).
    ///
    /// Tag index `t` is written as `t = a + N·b`; at layer `l` the top
    /// expert is `(a + l·b) mod N` and the rest follow at stride `1 + b`.
    pub fn spread(tagset: &PosTagset, n_layers: usize, n_experts: usize, k: usize) -> Result<Self, MoeError> {
        if k == 0 || k > n_experts {
            return Err(MoeError::InvalidK { k, n: n_experts });
        }
        let table = tagset
            .tags()
            .iter()
            .enumerate()
            .map(|(t, &tag)| {
                let (a, b) = (t % n_experts, t / n_experts);
                let layers = (0..n_layers)
                    .map(|l| {
                        let top = (a + l * b) % n_experts;
                        let mut experts = vec![top];
                        let mut c = top;
                        while experts.len() < k {
                            c = (c + 1 + b) % n_experts;
                            while experts.contains(&c) {
                                c = (c + 1) % n_experts;
                            }
                            experts.push(c);
                        }
                        experts
                    })
                    .collect();
                (tag, layers)
            })
            .collect();
        Self::new(table, n_layers, n_experts, k)
    }

    pub fn experts(&self, tag: Upos, layer: usize) -> Option<&[usize]> {
        self.table.get(&tag).and_then(|l| l.get(layer)).map(Vec::as_slice)
    }
}

/// Source of routing decisions that ignores model internals.
#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticRouter {
    /// `k` distinct experts drawn uniformly per (token, layer).
    UniformRandom { seed: u64 },
    /// Route by the token's POS tag.
    PosOracle(PosOracle),
    /// Route by a hash of the token id: equal ids share a path.
    TokenIdHash { seed: u64 },
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SyntheticRouter {
    /// Routes every token at every layer; gates are uniform `1/k`.
    pub fn route_tokens(&self, tokens: &[AlignedToken], n_layers: usize, n_experts: usize, k: usize) -> Result<RoutingTrace, MoeError> {
        if k == 0 || k > n_experts {
            return Err(MoeError::InvalidK { k, n: n_experts });
        }
        match self {
            SyntheticRouter::UniformRandom { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok(tokens
                    .iter()
                    .map(|_| {
                        (0..n_layers)
                            .map(|_| RoutingDecision::uniform(sample(&mut rng, n_experts, k).into_vec()))
                            .collect()
                    })
                    .collect())
            }
            SyntheticRouter::PosOracle(oracle) => tokens
                .iter()
                .map(|t| {
                    (0..n_layers)
                        .map(|l| {
                            let experts = oracle.experts(t.upos, l).ok_or(MoeError::MissingOracleTag(t.upos))?;
                            if experts.len() != k || experts.iter().any(|&e| e >= n_experts) {
                                return Err(MoeError::InvalidOracle(format!("oracle shape does not match {n_experts} experts, k = {k}")));
                            }
                            Ok(RoutingDecision::uniform(experts.to_vec()))
                        })
                        .collect()
                })
                .collect(),
            SyntheticRouter::TokenIdHash { seed } => Ok(tokens
                .iter()
                .map(|t| {
                    (0..n_layers)
                        .map(|l| {
                            let key = splitmix64(seed ^ splitmix64(u64::from(t.token_id)) ^ splitmix64(l as u64).rotate_left(17));
                            let mut rng = ChaCha8Rng::seed_from_u64(key);
                            RoutingDecision::uniform(sample(&mut rng, n_experts, k).into_vec())
                        })
                        .collect()
                })
                .collect()),
        }
    }
}
