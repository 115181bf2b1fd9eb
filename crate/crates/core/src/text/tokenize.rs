use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

/// Normalizes and splits a sentence into word tokens.
///
/// Text is NFC-composed (so `u` + U+0323 and the precomposed `ụ` unify),
/// lowercased with full Unicode case mapping, stripped of ASCII digits, and
/// split on whitespace. Characters in any Unicode punctuation category act
/// as separators. Diacritics and non-ASCII letters are kept.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut cleaned = String::with_capacity(text.len());
    for ch in text.nfc().flat_map(char::to_lowercase) {
        if ch.is_ascii_digit() {
            continue;
        }
        if is_punctuation(ch) {
            cleaned.push(' ');
        } else {
            cleaned.push(ch);
        }
    }
    cleaned
        .split_whitespace()
        .map(|w| w.nfc().collect::<String>())
        .collect()
}

pub fn is_punctuation(ch: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(ch),
        ConnectorPunctuation
            | DashPunctuation
            | OpenPunctuation
            | ClosePunctuation
            | InitialPunctuation
            | FinalPunctuation
            | OtherPunctuation
    )
}
