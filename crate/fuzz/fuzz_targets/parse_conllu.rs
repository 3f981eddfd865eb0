#![no_main]

use libfuzzer_sys::fuzz_target;
use routeprobe::corpus::{parse_conllu_with, ParseOptions, TagSource};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for tag_source in [TagSource::PreferUpos, TagSource::ConvertXpos] {
        let opts = ParseOptions {
            tag_source,
            ..Default::default()
        };
        if let Ok(sentences) = parse_conllu_with(text, &opts) {
            for (i, s) in sentences.iter().enumerate() {
                assert_eq!(s.id, i);
                assert!(!s.words.is_empty());
                for (j, w) in s.words.iter().enumerate() {
                    assert_eq!((w.sentence_id, w.word_index), (i, j));
                    assert!(opts.tagset.contains(w.upos));
                }
            }
        }
    }
});
