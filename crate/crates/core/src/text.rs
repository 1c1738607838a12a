//! Small text helpers shared across modules: normalization, hashing,
//! whitespace word counts, sentence detection and a coarse script guess.

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

/// NFC-normalizes a string. All stored text goes through this.
pub fn nfc(s: &str) -> String {
    s.nfc().collect()
}

/// Lowercase hex SHA-256 of the given bytes.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    let mut h = Sha256::new();
    h.update(bytes.as_ref());
    hex::encode(h.finalize())
}

/// Hash of several fields joined with an unambiguous separator.
pub fn key_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Number of whitespace-delimited tokens.
pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

const TERMINATORS: &[char] = &['.', '!', '?', '。', '！', '？', '؟', '।'];

/// Splits text into sentences at terminal punctuation. A terminator only ends a
/// sentence when followed by whitespace or end of text (CJK full stops end a
/// sentence unconditionally). Trailing closing quotes stay with their sentence.
pub fn split_sentences(s: &str) -> Vec<String> {
    let chars: Vec<char> = s.trim().chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        cur.push(c);
        if TERMINATORS.contains(&c) {
            let mut j = i + 1;
            while j < chars.len() && TERMINATORS.contains(&chars[j]) {
                cur.push(chars[j]);
                j += 1;
            }
            while j < chars.len() && matches!(chars[j], '"' | '\'' | '”' | '’' | '»' | ')') {
                cur.push(chars[j]);
                j += 1;
            }
            let cjk = matches!(c, '。' | '！' | '？');
            if j >= chars.len() || chars[j].is_whitespace() || cjk {
                let t = cur.trim().to_string();
                if !t.is_empty() {
                    out.push(t);
                }
                cur.clear();
            }
            i = j;
            continue;
        }
        i += 1;
    }
    let t = cur.trim().to_string();
    if !t.is_empty() {
        out.push(t);
    }
    out
}

pub fn is_single_sentence(s: &str) -> bool {
    split_sentences(s).len() == 1
}

/// Dominant writing system of a text, used as a cheap language-family check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Script {
    Latin,
    Arabic,
    Hebrew,
    Han,
    Kana,
    Hangul,
    Cyrillic,
    Other,
}

fn char_script(c: char) -> Option<Script> {
    let u = c as u32;
    let s = match u {
        0x0041..=0x005A | 0x0061..=0x007A | 0x00C0..=0x024F | 0x1E00..=0x1EFF => Script::Latin,
        0x0600..=0x06FF | 0x0750..=0x077F | 0xFB50..=0xFDFF | 0xFE70..=0xFEFF => Script::Arabic,
        0x0590..=0x05FF => Script::Hebrew,
        0x3040..=0x30FF => Script::Kana,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF => Script::Han,
        0xAC00..=0xD7AF | 0x1100..=0x11FF | 0x3130..=0x318F => Script::Hangul,
        0x0400..=0x04FF => Script::Cyrillic,
        _ => {
            if c.is_alphabetic() {
                Script::Other
            } else {
                return None;
            }
        }
    };
    Some(s)
}

/// Most frequent script among alphabetic characters. Japanese text mixing
/// kana and kanji reports `Kana` when any kana is present.
pub fn dominant_script(s: &str) -> Option<Script> {
    let mut counts: Vec<(Script, usize)> = Vec::new();
    for sc in s.chars().filter_map(char_script) {
        match counts.iter_mut().find(|(k, _)| *k == sc) {
            Some((_, n)) => *n += 1,
            None => counts.push((sc, 1)),
        }
    }
    if counts.iter().any(|(k, _)| *k == Script::Kana) {
        return Some(Script::Kana);
    }
    counts.into_iter().max_by_key(|(_, n)| *n).map(|(k, _)| k)
}

/// Script expected for an ISO-639-1 code.
pub fn expected_script(language_code: &str) -> Script {
    match language_code {
        "ar" | "fa" | "ur" => Script::Arabic,
        "he" | "yi" => Script::Hebrew,
        "ja" => Script::Kana,
        "zh" => Script::Han,
        "ko" => Script::Hangul,
        "ru" | "uk" | "bg" | "sr" => Script::Cyrillic,
        _ => Script::Latin,
    }
}

/// Capitalizes the first character.
pub fn capitalize_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}
