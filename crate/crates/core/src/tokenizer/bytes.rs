//! Reversible byte <-> printable character mapping used for vocab text.
//!
//! Printable Latin-1 bytes map to themselves; the remaining 68 bytes are
//! shifted into the range starting at U+0100, so the space byte shows up
//! as `Ġ`.

use std::sync::OnceLock;

fn tables() -> &'static ([char; 256], std::collections::HashMap<char, u8>) {
    static TABLES: OnceLock<([char; 256], std::collections::HashMap<char, u8>)> = OnceLock::new();
    TABLES.get_or_init(|| {
        let printable = |b: u8| (b'!'..=b'~').contains(&b) || (0xA1..=0xAC).contains(&b) || b >= 0xAE;
        let mut forward = ['\0'; 256];
        let mut next = 256u32;
        for b in 0..=255u8 {
            forward[b as usize] = if printable(b) {
                char::from(b)
            } else {
                let c = char::from_u32(next).expect("valid scalar");
                next += 1;
                c
            };
        }
        let inverse = forward.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        (forward, inverse)
    })
}

pub fn encode(bytes: &[u8]) -> String {
    let (forward, _) = tables();
    bytes.iter().map(|&b| forward[b as usize]).collect()
}

/// Inverse of [`encode`]; `None` if a character is outside the mapping.
pub fn decode(text: &str) -> Option<Vec<u8>> {
    let (_, inverse) = tables();
    text.chars().map(|c| inverse.get(&c).copied()).collect()
}
