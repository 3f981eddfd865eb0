#![no_main]

use libfuzzer_sys::fuzz_target;
use routeprobe::tokenizer::SubwordVocab;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(vocab) = SubwordVocab::from_json(text) {
        let json = vocab.to_json();
        let again = SubwordVocab::from_json(&json).expect("serialized vocab parses");
        assert_eq!(again.to_json(), json);
        // Tokenizing arbitrary text never panics and yields known ids.
        for piece in vocab.tokenize_word(text) {
            assert!((piece.id as usize) < vocab.len());
        }
    }
});
