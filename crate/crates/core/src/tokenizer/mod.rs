//! Byte-level BPE tokenizer and word-to-subtoken POS alignment.
//!
//! Every word is prefixed with a space byte (rendered `Ġ` in vocab text)
//! before segmentation, so word-initial pieces are distinguishable from
//! continuation pieces.

mod bytes;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Sentence, Upos};

pub use bytes::{decode as decode_token_text, encode as encode_token_text};

/// Byte prepended to every word before segmentation.
pub const WORD_MARKER: u8 = b' ';
pub const UNK_TEXT: &str = "<unk>";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("vocab size {requested} is smaller than the base alphabet ({alphabet} entries incl. unk)")]
    VocabTooSmall { requested: usize, alphabet: usize },
    #[error("empty training stream")]
    EmptyCorpus,
    #[error("invalid vocab: {0}")]
    InvalidVocab(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A trained subword vocabulary. Id 0 is the unknown token, ids
/// `1..=alphabet` are single bytes in ascending byte order, merged tokens
/// follow in merge order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocab {
    tokens: Vec<Vec<u8>>,
    merges: Vec<Merge>,
    by_bytes: HashMap<Vec<u8>, u32>,
    ranks: HashMap<(u32, u32), usize>,
    unk: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Merge {
    left: u32,
    right: u32,
    result: u32,
}

/// One piece of a segmented word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubToken {
    pub id: u32,
    /// Raw bytes covered by this piece. For unknown bytes this keeps the
    /// original input byte, not the unk text.
    pub bytes: Vec<u8>,
}

impl SubToken {
    /// Display form in vocab notation (`Ġhuman`).
    pub fn text(&self) -> String {
        bytes::encode(&self.bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct VocabJson {
    merges: Vec<(String, String)>,
    vocab: BTreeMap<String, u32>,
    unk: u32,
}

impl SubwordVocab {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> u32 {
        self.unk
    }

    pub fn merge_count(&self) -> usize {
        self.merges.len()
    }

    /// Merge pairs in rank order, as raw bytes.
    pub fn merges(&self) -> impl Iterator<Item = (&[u8], &[u8])> {
        self.merges
            .iter()
            .map(|m| (self.tokens[m.left as usize].as_slice(), self.tokens[m.right as usize].as_slice()))
    }

    pub fn id_of(&self, bytes: &[u8]) -> Option<u32> {
        self.by_bytes.get(bytes).copied()
    }

    pub fn token_text(&self, id: u32) -> Option<String> {
        if id == self.unk {
            return Some(UNK_TEXT.to_string());
        }
        self.tokens.get(id as usize).map(|b| bytes::encode(b))
    }

    /// Stable identifier for trace headers: size plus an FNV-1a digest of
    /// the serialized vocab.
    pub fn fingerprint(&self) -> String {
        let json = self.to_json();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("bpe{}-{:016x}", self.len(), h)
    }

    pub fn to_json(&self) -> String {
        let vocab = self
            .tokens
            .iter()
            .enumerate()
            .map(|(id, b)| {
                let text = if id as u32 == self.unk { UNK_TEXT.to_string() } else { bytes::encode(b) };
                (text, id as u32)
            })
            .collect();
        let merges = self
            .merges
            .iter()
            .map(|m| {
                (
                    bytes::encode(&self.tokens[m.left as usize]),
                    bytes::encode(&self.tokens[m.right as usize]),
                )
            })
            .collect();
        serde_json::to_string(&VocabJson {
            merges,
            vocab,
            unk: self.unk,
        })
        .expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TokenizerError> {
        let raw: VocabJson = serde_json::from_str(text)?;
        let n = raw.vocab.len();
        if raw.unk as usize >= n {
            return Err(TokenizerError::InvalidVocab(format!("unk id {} out of range", raw.unk)));
        }
        let mut slots: Vec<Option<Vec<u8>>> = vec![None; n];
        for (text, &id) in &raw.vocab {
            let slot = slots
                .get_mut(id as usize)
                .ok_or_else(|| TokenizerError::InvalidVocab(format!("id {id} is not dense in [0, {n})")))?;
            if slot.is_some() {
                return Err(TokenizerError::InvalidVocab(format!("id {id} assigned twice")));
            }
            *slot = Some(if id == raw.unk {
                Vec::new()
            } else {
                bytes::decode(text)
                    .filter(|b| !b.is_empty())
                    .ok_or_else(|| TokenizerError::InvalidVocab(format!("undecodable token {text:?}")))?
            });
        }
        let tokens: Vec<Vec<u8>> = slots.into_iter().map(|s| s.expect("dense ids")).collect();
        let mut vocab = SubwordVocab {
            by_bytes: tokens
                .iter()
                .enumerate()
                .filter(|&(id, _)| id as u32 != raw.unk)
                .map(|(id, b)| (b.clone(), id as u32))
                .collect(),
            tokens,
            merges: Vec::with_capacity(raw.merges.len()),
            ranks: HashMap::new(),
            unk: raw.unk,
        };
        for (l, r) in &raw.merges {
            let lookup = |t: &str| {
                bytes::decode(t)
                    .and_then(|b| vocab.by_bytes.get(&b).copied())
                    .ok_or_else(|| TokenizerError::InvalidVocab(format!("merge references unknown token {t:?}")))
            };
            let (left, right) = (lookup(l)?, lookup(r)?);
            let mut joined = vocab.tokens[left as usize].clone();
            joined.extend_from_slice(&vocab.tokens[right as usize]);
            let result = *vocab
                .by_bytes
                .get(&joined)
                .ok_or_else(|| TokenizerError::InvalidVocab(format!("merge result {l}{r} missing from vocab")))?;
            vocab.push_merge(Merge { left, right, result })?;
        }
        Ok(vocab)
    }

    fn push_merge(&mut self, m: Merge) -> Result<(), TokenizerError> {
        let rank = self.merges.len();
        if self.ranks.insert((m.left, m.right), rank).is_some() {
            return Err(TokenizerError::InvalidVocab("duplicate merge".into()));
        }
        self.merges.push(m);
        Ok(())
    }

    /// Segments one word (the word marker is added here). Bytes that were
    /// never seen in training become unk pieces.
    pub fn tokenize_word(&self, surface: &str) -> Vec<SubToken> {
        let mut input = Vec::with_capacity(surface.len() + 1);
        input.push(WORD_MARKER);
        input.extend_from_slice(surface.as_bytes());
        let mut pieces: Vec<SubToken> = input
            .iter()
            .map(|&b| SubToken {
                id: self.by_bytes.get(&[b][..]).copied().unwrap_or(self.unk),
                bytes: vec![b],
            })
            .collect();

        loop {
            let best = pieces
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].id, w[1].id)).copied())
                .min();
            let Some(rank) = best else { break };
            let m = self.merges[rank];
            let mut merged = Vec::with_capacity(pieces.len());
            let mut iter = pieces.into_iter().peekable();
            while let Some(mut cur) = iter.next() {
                if cur.id == m.left {
                    if let Some(next) = iter.peek() {
                        if next.id == m.right {
                            let next = iter.next().expect("peeked");
                            cur.bytes.extend_from_slice(&next.bytes);
                            cur.id = m.result;
                        }
                    }
                }
                merged.push(cur);
            }
            pieces = merged;
        }
        pieces
    }
}

/// Reassembles a word from its pieces, dropping the word marker.
pub fn detokenize(pieces: &[SubToken]) -> Vec<u8> {
    let mut out: Vec<u8> = pieces.iter().flat_map(|p| p.bytes.iter().copied()).collect();
    if out.first() == Some(&WORD_MARKER) {
        out.remove(0);
    }
    out
}

/// Learns a byte-level BPE vocabulary of at most `vocab_size` entries.
///
/// The base alphabet is the unk token plus every byte observed in the
/// stream (marker included). Each step merges the most frequent adjacent
/// pair; ties go to the lexicographically smallest `(left, right)` byte pair.
pub fn train_bpe<'a, I>(words: I, vocab_size: usize) -> Result<SubwordVocab, TokenizerError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut freq: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    for w in words {
        let mut b = Vec::with_capacity(w.len() + 1);
        b.push(WORD_MARKER);
        b.extend_from_slice(w.as_bytes());
        *freq.entry(b).or_default() += 1;
    }
    if freq.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let alphabet: BTreeSet<u8> = freq.keys().flatten().copied().collect();
    let base = alphabet.len() + 1;
    if vocab_size < base {
        return Err(TokenizerError::VocabTooSmall {
            requested: vocab_size,
            alphabet: base,
        });
    }

    let mut tokens: Vec<Vec<u8>> = vec![Vec::new()];
    tokens.extend(alphabet.iter().map(|&b| vec![b]));
    let mut vocab = SubwordVocab {
        by_bytes: tokens.iter().enumerate().skip(1).map(|(i, b)| (b.clone(), i as u32)).collect(),
        tokens,
        merges: Vec::new(),
        ranks: HashMap::new(),
        unk: 0,
    };

    let mut words: Vec<(Vec<u32>, u64)> = freq
        .into_iter()
        .map(|(b, f)| (b.iter().map(|x| vocab.by_bytes[&vec![*x]]).collect(), f))
        .collect();

    // Pairs whose concatenation would collide with the unk text.
    let mut banned: BTreeSet<(u32, u32)> = BTreeSet::new();
    while vocab.len() < vocab_size {
        let mut pairs: HashMap<(u32, u32), u64> = HashMap::new();
        for (syms, f) in &words {
            for w in syms.windows(2) {
                if !banned.contains(&(w[0], w[1])) {
                    *pairs.entry((w[0], w[1])).or_default() += f;
                }
            }
        }
        let best = pairs.into_iter().max_by(|a, b| {
            a.1.cmp(&b.1).then_with(|| {
                let ka = (&vocab.tokens[a.0 .0 as usize], &vocab.tokens[a.0 .1 as usize]);
                let kb = (&vocab.tokens[b.0 .0 as usize], &vocab.tokens[b.0 .1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some(((left, right), _)) = best else { break };

        let mut joined = vocab.tokens[left as usize].clone();
        joined.extend_from_slice(&vocab.tokens[right as usize]);
        if joined == UNK_TEXT.as_bytes() {
            banned.insert((left, right));
            continue;
        }
        let result = match vocab.by_bytes.get(&joined) {
            Some(&id) => id,
            None => {
                let id = vocab.tokens.len() as u32;
                vocab.by_bytes.insert(joined.clone(), id);
                vocab.tokens.push(joined);
                id
            }
        };
        vocab.push_merge(Merge { left, right, result })?;

        for (syms, _) in &mut words {
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == left && syms[i + 1] == right {
                    out.push(result);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
        }
    }
    Ok(vocab)
}

/// A subtoken carrying the POS tag of the word it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedToken {
    pub token_id: u32,
    /// Piece text in vocab notation.
    pub surface: String,
    pub sentence_id: usize,
    pub word_index: usize,
    pub upos: Upos,
}

/// Tokenizes every word and tags each piece with its parent word's UPOS.
/// Output follows word order, then piece order within a word.
pub fn align_pos(sentences: &[Sentence], vocab: &SubwordVocab) -> Vec<AlignedToken> {
    sentences
        .iter()
        .flat_map(|s| s.words.iter())
        .flat_map(|w| {
            vocab.tokenize_word(&w.surface).into_iter().map(move |p| AlignedToken {
                token_id: p.id,
                surface: p.text(),
                sentence_id: w.sentence_id,
                word_index: w.word_index,
                upos: w.upos,
            })
        })
        .collect()
}
