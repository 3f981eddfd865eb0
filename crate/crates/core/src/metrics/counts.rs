use std::collections::HashSet;

use rayon::prelude::*;

use crate::corpus::{CorpusError, PosDistribution, PosTagset, Upos};
use crate::trace::{TokenRecord, TraceHeader};

/// Routing-event counts indexed `[layer][expert][pos]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentCounts {
    n_layers: usize,
    n_experts: usize,
    k: usize,
    tags: Vec<Upos>,
    counts: Vec<u64>,
}

impl AssignmentCounts {
    pub fn new(n_layers: usize, n_experts: usize, k: usize, tags: Vec<Upos>) -> Self {
        AssignmentCounts {
            n_layers,
            n_experts,
            k,
            counts: vec![0; n_layers * n_experts * tags.len()],
            tags,
        }
    }

    pub fn for_header(header: &TraceHeader) -> Self {
        Self::new(header.n_layers, header.n_experts, header.k, header.tagset.clone())
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_experts(&self) -> usize {
        self.n_experts
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn tags(&self) -> &[Upos] {
        &self.tags
    }

    pub fn tag_index(&self, tag: Upos) -> Option<usize> {
        self.tags.iter().position(|&t| t == tag)
    }

    fn idx(&self, layer: usize, expert: usize, pos: usize) -> usize {
        (layer * self.n_experts + expert) * self.tags.len() + pos
    }

    pub fn get(&self, layer: usize, expert: usize, pos: usize) -> u64 {
        self.counts[self.idx(layer, expert, pos)]
    }

    pub fn set(&mut self, layer: usize, expert: usize, pos: usize, value: u64) {
        let i = self.idx(layer, expert, pos);
        self.counts[i] = value;
    }

    /// Counts of `pos` per expert at `layer`.
    pub fn expert_counts(&self, layer: usize, pos: usize) -> Vec<u64> {
        (0..self.n_experts).map(|e| self.get(layer, e, pos)).collect()
    }

    /// Counts per tag for one expert at one layer.
    pub fn pos_counts(&self, layer: usize, expert: usize) -> &[u64] {
        let start = self.idx(layer, expert, 0);
        &self.counts[start..start + self.tags.len()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one record's events. Records are assumed validated against the
    /// same header; tags outside the tagset are ignored.
    pub fn add_record(&mut self, record: &TokenRecord) {
        let Some(p) = self.tag_index(record.upos) else {
            return;
        };
        for (l, pairs) in record.layers.iter().enumerate().take(self.n_layers) {
            for &(e, _) in pairs {
                if e < self.n_experts {
                    let i = self.idx(l, e, p);
                    self.counts[i] += 1;
                }
            }
        }
    }

    /// Element-wise sum with counts of the same shape.
    pub fn merge(&mut self, other: &AssignmentCounts) {
        assert_eq!(
            (self.n_layers, self.n_experts, &self.tags),
            (other.n_layers, other.n_experts, &other.tags),
            "merging counts of different shapes"
        );
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

const SHARD: usize = 4096;

/// Counts every routing event of a validated trace. Records are sharded
/// across threads and the partial arrays summed.
pub fn count_assignments(header: &TraceHeader, records: &[TokenRecord]) -> AssignmentCounts {
    let empty = || AssignmentCounts::for_header(header);
    records
        .par_chunks(SHARD)
        .map(|chunk| {
            let mut c = empty();
            for r in chunk {
                c.add_record(r);
            }
            c
        })
        .reduce(empty, |mut a, b| {
            a.merge(&b);
            a
        })
}

/// Tag distribution over the tokens of a trace.
pub fn token_distribution(records: &[TokenRecord], tagset: &PosTagset) -> Result<PosDistribution, CorpusError> {
    PosDistribution::from_tags(records.iter().map(|r| r.upos), tagset)
}

/// Tag distribution over the words of a trace: subtokens of one word
/// (same sentence and word index) count once.
pub fn word_distribution(records: &[TokenRecord], tagset: &PosTagset) -> Result<PosDistribution, CorpusError> {
    let mut seen = HashSet::new();
    PosDistribution::from_tags(
        records
            .iter()
            .filter(|r| seen.insert((r.sentence_id, r.word_index)))
            .map(|r| r.upos),
        tagset,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(upos: Upos, layers: Vec<Vec<usize>>) -> TokenRecord {
        let k = layers[0].len();
        TokenRecord {
            sentence_id: 0,
            word_index: 0,
            token_surface: "Ġx".into(),
            token_id: 0,
            upos,
            layers: layers
                .into_iter()
                .map(|l| l.into_iter().map(|e| (e, 1.0 / k as f64)).collect())
                .collect(),
        }
    }

    fn header(l: usize, n: usize, k: usize) -> TraceHeader {
        TraceHeader::new("t", l, n, k, "x", &PosTagset::default())
    }

    #[test]
    fn one_token_two_layers_two_experts() {
        let c = count_assignments(&header(2, 4, 2), &[rec(Upos::Noun, vec![vec![0, 1], vec![2, 3]])]);
        assert_eq!(c.total(), 4);
    }

    #[test]
    fn five_token_hand_tally() {
        let records = vec![
            rec(Upos::Noun, vec![vec![0, 1], vec![1, 2]]),
            rec(Upos::Noun, vec![vec![0, 2], vec![1, 0]]),
            rec(Upos::Verb, vec![vec![3, 0], vec![2, 3]]),
            rec(Upos::Noun, vec![vec![1, 0], vec![1, 3]]),
            rec(Upos::Verb, vec![vec![3, 2], vec![3, 2]]),
        ];
        let c = count_assignments(&header(2, 4, 2), &records);
        let noun = c.tag_index(Upos::Noun).unwrap();
        let verb = c.tag_index(Upos::Verb).unwrap();
        assert_eq!(c.expert_counts(0, noun), vec![3, 2, 1, 0]);
        assert_eq!(c.expert_counts(1, noun), vec![1, 3, 1, 1]);
        assert_eq!(c.expert_counts(0, verb), vec![1, 0, 1, 2]);
        assert_eq!(c.expert_counts(1, verb), vec![0, 0, 2, 2]);
        assert_eq!(c.total(), 20);
    }

    #[test]
    fn sharded_count_equals_sequential() {
        let records: Vec<_> = (0..10_000)
            .map(|i| {
                let tag = PosTagset::default().tags()[i % 15];
                rec(tag, vec![vec![i % 8, (i + 3) % 8], vec![(i * 7) % 8, (i * 7 + 1) % 8]])
            })
            .collect();
        let h = header(2, 8, 2);
        let mut seq = AssignmentCounts::for_header(&h);
        for r in &records {
            seq.add_record(r);
        }
        assert_eq!(count_assignments(&h, &records), seq);
    }

    #[test]
    fn per_pos_sum_is_k_times_tokens() {
        let records: Vec<_> = (0..300)
            .map(|i| rec(if i % 3 == 0 { Upos::Adj } else { Upos::Det }, vec![vec![i % 5, (i + 1) % 5]; 3]))
            .collect();
        let c = count_assignments(&header(3, 5, 2), &records);
        let adj = c.tag_index(Upos::Adj).unwrap();
        for l in 0..3 {
            assert_eq!(c.expert_counts(l, adj).iter().sum::<u64>(), 2 * 100);
        }
    }

    #[test]
    fn word_level_counts_words_once() {
        let mut a = rec(Upos::Noun, vec![vec![0]]);
        let mut b = a.clone();
        b.token_surface = "ities".into();
        let mut c = rec(Upos::Verb, vec![vec![0]]);
        c.word_index = 1;
        a.word_index = 0;
        let ts = PosTagset::default();
        let recs = [a, b, c];
        assert_eq!(token_distribution(&recs, &ts).unwrap().probability(Upos::Noun), 2.0 / 3.0);
        assert_eq!(word_distribution(&recs, &ts).unwrap().probability(Upos::Noun), 0.5);
    }
}
