use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Universal Dependencies part-of-speech tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Upos {
    Adj,
    Adp,
    Adv,
    Aux,
    Cconj,
    Det,
    Intj,
    Noun,
    Num,
    Part,
    Pron,
    Propn,
    Punct,
    Sconj,
    Sym,
    Verb,
    X,
}

impl Upos {
    pub const ALL: [Upos; 17] = [
        Upos::Adj,
        Upos::Adp,
        Upos::Adv,
        Upos::Aux,
        Upos::Cconj,
        Upos::Det,
        Upos::Intj,
        Upos::Noun,
        Upos::Num,
        Upos::Part,
        Upos::Pron,
        Upos::Propn,
        Upos::Punct,
        Upos::Sconj,
        Upos::Sym,
        Upos::Verb,
        Upos::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Upos::Adj => "ADJ",
            Upos::Adp => "ADP",
            Upos::Adv => "ADV",
            Upos::Aux => "AUX",
            Upos::Cconj => "CCONJ",
            Upos::Det => "DET",
            Upos::Intj => "INTJ",
            Upos::Noun => "NOUN",
            Upos::Num => "NUM",
            Upos::Part => "PART",
            Upos::Pron => "PRON",
            Upos::Propn => "PROPN",
            Upos::Punct => "PUNCT",
            Upos::Sconj => "SCONJ",
            Upos::Sym => "SYM",
            Upos::Verb => "VERB",
            Upos::X => "X",
        }
    }
}

impl fmt::Display for Upos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Upos {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Upos::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| CorpusError::UnknownTag(s.to_string()))
    }
}

impl TryFrom<String> for Upos {
    type Error = CorpusError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Upos> for String {
    fn from(value: Upos) -> Self {
        value.as_str().to_string()
    }
}

/// Penn Treebank to UD conversion, transcribed from the UD English
/// `en-penn-uposf` table. Tags absent from the table fall back to `X`.
const PENN_TO_UD: &[(&str, Upos)] = &[
    ("#", Upos::Sym),
    ("$", Upos::Sym),
    ("''", Upos::Punct),
    (",", Upos::Punct),
    ("-LRB-", Upos::Punct),
    ("-RRB-", Upos::Punct),
    ("-LCB-", Upos::Punct),
    ("-RCB-", Upos::Punct),
    ("-LSB-", Upos::Punct),
    ("-RSB-", Upos::Punct),
    ("(", Upos::Punct),
    (")", Upos::Punct),
    (".", Upos::Punct),
    (":", Upos::Punct),
    ("``", Upos::Punct),
    ("ADD", Upos::X),
    ("AFX", Upos::Adj),
    ("CC", Upos::Cconj),
    ("CD", Upos::Num),
    ("DT", Upos::Det),
    ("EX", Upos::Pron),
    ("FW", Upos::X),
    ("GW", Upos::X),
    ("HYPH", Upos::Punct),
    ("IN", Upos::Adp),
    ("JJ", Upos::Adj),
    ("JJR", Upos::Adj),
    ("JJS", Upos::Adj),
    ("LS", Upos::X),
    ("MD", Upos::Verb),
    ("NFP", Upos::Punct),
    ("NIL", Upos::X),
    ("NN", Upos::Noun),
    ("NNP", Upos::Propn),
    ("NNPS", Upos::Propn),
    ("NNS", Upos::Noun),
    ("PDT", Upos::Det),
    ("POS", Upos::Part),
    ("PRP", Upos::Pron),
    ("PRP$", Upos::Det),
    ("RB", Upos::Adv),
    ("RBR", Upos::Adv),
    ("RBS", Upos::Adv),
    ("RP", Upos::Adp),
    ("SYM", Upos::Sym),
    ("TO", Upos::Part),
    ("UH", Upos::Intj),
    ("VB", Upos::Verb),
    ("VBD", Upos::Verb),
    ("VBG", Upos::Verb),
    ("VBN", Upos::Verb),
    ("VBP", Upos::Verb),
    ("VBZ", Upos::Verb),
    ("WDT", Upos::Det),
    ("WP", Upos::Pron),
    ("WP$", Upos::Det),
    ("WRB", Upos::Adv),
    ("XX", Upos::X),
    ("-NONE-", Upos::X),
];

/// Maps a Penn Treebank tag to its UD tag. Total: unknown tags map to `X`.
pub fn convert_penn_to_ud(xpos: &str) -> Upos {
    PENN_TO_UD
        .iter()
        .find(|(penn, _)| *penn == xpos)
        .map(|&(_, ud)| ud)
        .unwrap_or(Upos::X)
}

/// Ordered list of POS classes used for analysis, with the subset left out
/// of the global specialization mean.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosTagset {
    tags: Vec<Upos>,
    excluded_from_global: Vec<Upos>,
}

impl Default for PosTagset {
    /// The 15 classes remaining after Penn conversion (no AUX or SCONJ),
    /// with SYM and X excluded from the global mean.
    fn default() -> Self {
        let tags = Upos::ALL
            .iter()
            .copied()
            .filter(|t| !matches!(t, Upos::Aux | Upos::Sconj))
            .collect();
        PosTagset {
            tags,
            excluded_from_global: vec![Upos::Sym, Upos::X],
        }
    }
}

impl PosTagset {
    pub fn new(tags: Vec<Upos>, excluded_from_global: Vec<Upos>) -> Result<Self, CorpusError> {
        if tags.is_empty() {
            return Err(CorpusError::InvalidTagset("tagset is empty".into()));
        }
        for (i, t) in tags.iter().enumerate() {
            if tags[..i].contains(t) {
                return Err(CorpusError::InvalidTagset(format!("duplicate tag {t}")));
            }
        }
        if let Some(t) = excluded_from_global.iter().find(|t| !tags.contains(t)) {
            return Err(CorpusError::InvalidTagset(format!(
                "excluded tag {t} is not part of the tagset"
            )));
        }
        if excluded_from_global.len() >= tags.len() {
            return Err(CorpusError::InvalidTagset(
                "every tag is excluded from the global score".into(),
            ));
        }
        Ok(PosTagset {
            tags,
            excluded_from_global,
        })
    }

    /// Parses the tagset override format: one tag per line, a leading `!`
    /// marks the tag as excluded from the global score. Blank lines and
    /// `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut tags = Vec::new();
        let mut excluded = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, is_excluded) = match line.strip_prefix('!') {
                Some(rest) => (rest.trim(), true),
                None => (line, false),
            };
            let tag: Upos = name.parse().map_err(|_| CorpusError::Parse {
                line: lineno + 1,
                message: format!("unknown UD tag {name:?}"),
            })?;
            tags.push(tag);
            if is_excluded {
                excluded.push(tag);
            }
        }
        PosTagset::new(tags, excluded)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tags {
            if self.is_excluded(*t) {
                out.push('!');
            }
            out.push_str(t.as_str());
            out.push('\n');
        }
        out
    }

    pub fn tags(&self) -> &[Upos] {
        &self.tags
    }

    pub fn excluded_from_global(&self) -> &[Upos] {
        &self.excluded_from_global
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn index_of(&self, tag: Upos) -> Option<usize> {
        self.tags.iter().position(|&t| t == tag)
    }

    pub fn contains(&self, tag: Upos) -> bool {
        self.tags.contains(&tag)
    }

    pub fn is_excluded(&self, tag: Upos) -> bool {
        self.excluded_from_global.contains(&tag)
    }

    /// Tags that enter the global specialization mean.
    pub fn global_tags(&self) -> impl Iterator<Item = Upos> + '_ {
        self.tags.iter().copied().filter(|t| !self.is_excluded(*t))
    }

    /// Folds a tag into this tagset: AUX collapses to VERB and SCONJ to ADP
    /// when absent, anything else missing becomes X.
    pub fn fold(&self, tag: Upos) -> Option<Upos> {
        if self.contains(tag) {
            return Some(tag);
        }
        let folded = match tag {
            Upos::Aux => Upos::Verb,
            Upos::Sconj => Upos::Adp,
            _ => Upos::X,
        };
        if self.contains(folded) {
            Some(folded)
        } else if self.contains(Upos::X) {
            Some(Upos::X)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_tagset_has_thirteen_global_tags() {
        let ts = PosTagset::default();
        assert_eq!(ts.len(), 15);
        assert_eq!(ts.global_tags().count(), 13);
        assert!(!ts.contains(Upos::Aux));
        assert!(!ts.contains(Upos::Sconj));
    }

    #[test]
    fn unknown_penn_tag_is_x() {
        assert_eq!(convert_penn_to_ud("ZZZ"), Upos::X);
        assert_eq!(convert_penn_to_ud("NNS"), Upos::Noun);
    }

    #[test]
    fn every_mapped_tag_is_in_default_tagset() {
        let ts = PosTagset::default();
        for (_, ud) in PENN_TO_UD {
            assert!(ts.contains(*ud), "{ud} missing");
        }
    }

    #[test]
    fn tagset_file_round_trip() {
        let text = "NOUN\nVERB\n# comment\n\n!X\n";
        let ts = PosTagset::parse(text).unwrap();
        assert_eq!(ts.tags(), &[Upos::Noun, Upos::Verb, Upos::X]);
        assert_eq!(ts.excluded_from_global(), &[Upos::X]);
        assert_eq!(PosTagset::parse(&ts.to_text()).unwrap(), ts);
    }

    #[test]
    fn tagset_rejects_bad_input() {
        assert!(PosTagset::parse("NOUN\nFOO\n").is_err());
        assert!(PosTagset::parse("NOUN\nNOUN\n").is_err());
        assert!(PosTagset::parse("!NOUN\n").is_err());
        assert!(PosTagset::parse("").is_err());
    }

    #[test]
    fn fold_collapses_aux_and_sconj() {
        let ts = PosTagset::default();
        assert_eq!(ts.fold(Upos::Aux), Some(Upos::Verb));
        assert_eq!(ts.fold(Upos::Sconj), Some(Upos::Adp));
        assert_eq!(ts.fold(Upos::Noun), Some(Upos::Noun));
        let small = PosTagset::new(vec![Upos::Noun, Upos::Verb], vec![]).unwrap();
        assert_eq!(small.fold(Upos::Det), None);
    }
}
