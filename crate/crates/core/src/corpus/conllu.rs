//! CoNLL-U reader.
//!
//! Only the columns the analysis needs are retained (ID, FORM, UPOS, XPOS).
//! Multiword ranges (`3-4`) and empty nodes (`5.1`) are skipped.

use super::tagset::{convert_penn_to_ud, PosTagset, Upos};
use super::{CorpusError, Sentence, Word};

const COLUMNS: usize = 10;

/// Where a word's UD tag comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TagSource {
    /// Keep a valid UPOS column as-is, convert XPOS otherwise.
    #[default]
    PreferUpos,
    /// Always convert the Penn XPOS column, ignoring UPOS unless XPOS is `_`.
    ConvertXpos,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    pub tag_source: TagSource,
    pub tagset: PosTagset,
}

/// Parses a CoNLL-U document with the default tagset and tag source.
pub fn parse_conllu(text: &str) -> Result<Vec<Sentence>, CorpusError> {
    parse_conllu_with(text, &ParseOptions::default())
}

pub fn parse_conllu_with(text: &str, opts: &ParseOptions) -> Result<Vec<Sentence>, CorpusError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut sentences = Vec::new();
    let mut current: Vec<Word> = Vec::new();

    let flush = |current: &mut Vec<Word>, sentences: &mut Vec<Sentence>| {
        if !current.is_empty() {
            let id = sentences.len();
            let words = std::mem::take(current)
                .into_iter()
                .map(|w| Word { sentence_id: id, ..w })
                .collect();
            sentences.push(Sentence { id, words });
        }
    };

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            flush(&mut current, &mut sentences);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != COLUMNS {
            return Err(CorpusError::Parse {
                line: lineno,
                message: format!("expected {COLUMNS} tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        if id.parse::<u32>().map_or(true, |v| v == 0) {
            return Err(CorpusError::Parse {
                line: lineno,
                message: format!("invalid token id {id:?}"),
            });
        }
        let surface = cols[1];
        if surface.is_empty() {
            return Err(CorpusError::Parse {
                line: lineno,
                message: "empty FORM column".into(),
            });
        }
        let upos_col = cols[3];
        let xpos = cols[4];
        let raw = resolve_tag(upos_col, xpos, opts.tag_source);
        let upos = opts.tagset.fold(raw).ok_or_else(|| CorpusError::Parse {
            line: lineno,
            message: format!("tag {raw} cannot be mapped into the tagset"),
        })?;
        current.push(Word {
            sentence_id: 0,
            word_index: current.len(),
            surface: surface.to_string(),
            xpos: xpos.to_string(),
            upos,
        });
    }
    flush(&mut current, &mut sentences);
    Ok(sentences)
}

fn resolve_tag(upos_col: &str, xpos: &str, source: TagSource) -> Upos {
    let from_upos = upos_col.parse::<Upos>().ok();
    match source {
        TagSource::PreferUpos => from_upos.unwrap_or_else(|| convert_penn_to_ud(xpos)),
        TagSource::ConvertXpos if xpos == "_" => from_upos.unwrap_or(Upos::X),
        TagSource::ConvertXpos => convert_penn_to_ud(xpos),
    }
}
