use std::collections::HashMap;

use encoding_rs::EUC_JP;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Placeholder glyph for characters outside the inventory (〓, the geta mark).
pub const GETA: char = '\u{3013}';

/// Index reserved for padding. It has no glyph and embeds to the zero vector.
pub const PAD: u32 = u32::MAX;

/// JIS X 0208 row 1 symbols that commonly appear in headlines.
const EXTRA_SYMBOLS: &[char] = &[
    '、', '。', '・', 'ー', '「', '」', '『', '』', '【', '】', '々', '〜', GETA,
];

/// Ordered, duplicate-free character inventory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Charset {
    entries: Vec<char>,
    index: HashMap<char, u32>,
}

impl Charset {
    /// Sorts and deduplicates `chars`. The geta mark must be present.
    pub fn from_chars<I: IntoIterator<Item = char>>(chars: I) -> Result<Self> {
        let mut entries: Vec<char> = chars.into_iter().collect();
        entries.sort_unstable();
        entries.dedup();
        if entries.binary_search(&GETA).is_err() {
            return Err(Error::Config("charset must contain the geta mark U+3013".into()));
        }
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i as u32))
            .collect();
        Ok(Charset { entries, index })
    }

    /// JIS level-1 and level-2 kanji, hiragana, katakana, printable ASCII and
    /// a handful of Japanese punctuation marks.
    pub fn build_default() -> Self {
        let mut chars = Vec::with_capacity(6700);
        // rows 4 (hiragana), 5 (katakana), 16..=47 (level 1), 48..=84 (level 2)
        for row in [4u8, 5].into_iter().chain(16..=84) {
            for cell in 1u8..=94 {
                let bytes = [row + 0xA0, cell + 0xA0];
                let (text, had_errors) = EUC_JP.decode_without_bom_handling(&bytes);
                if had_errors {
                    continue;
                }
                if let Some(c) = text.chars().next() {
                    chars.push(c);
                }
            }
        }
        chars.extend((0x21u8..=0x7E).map(char::from));
        chars.extend_from_slice(EXTRA_SYMBOLS);
        Charset::from_chars(chars).expect("default charset contains the geta mark")
    }

    pub fn entries(&self) -> &[char] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, c: char) -> bool {
        self.index.contains_key(&c)
    }

    pub fn index_of(&self, c: char) -> Option<u32> {
        self.index.get(&c).copied()
    }

    pub fn unknown_index(&self) -> u32 {
        self.index[&GETA]
    }

    /// Index used for text encoding: out-of-inventory characters map to the geta mark.
    pub fn encode_char(&self, c: char) -> u32 {
        self.index_of(c).unwrap_or_else(|| self.unknown_index())
    }

    pub fn char_at(&self, index: u32) -> Option<char> {
        self.entries.get(index as usize).copied()
    }

    /// SHA-256 over the little-endian codepoints.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for &c in &self.entries {
            h.update((c as u32).to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn hash_hex(&self) -> String {
        hex_string(&self.hash())
    }

    /// `n` evenly strided entries (always including the geta mark).
    pub fn subset(&self, n: usize) -> Result<Charset> {
        if n < 2 || n > self.len() {
            return Err(Error::Config(format!(
                "subset size {n} outside [2, {}]",
                self.len()
            )));
        }
        let others: Vec<char> = self.entries.iter().copied().filter(|&c| c != GETA).collect();
        let take = n - 1;
        let picked = (0..take).map(|i| others[i * others.len() / take]);
        Charset::from_chars(picked.chain(std::iter::once(GETA)))
    }

    /// Up to `k` members closest to `c` by codepoint.
    pub fn nearest(&self, c: char, k: usize) -> Vec<char> {
        let mut v: Vec<char> = self.entries.clone();
        v.sort_by_key(|&e| ((e as i64 - c as i64).abs(), e));
        v.truncate(k);
        v
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_charset_size_and_members() {
        let cs = Charset::build_default();
        // 2965 level-1 + 3390 level-2 kanji, 83 hiragana, 86 katakana,
        // 94 printable ASCII, 13 punctuation marks.
        assert_eq!(cs.len(), 6631);
        for c in ['迫', '追', '綱', '縄', 'A', '0', 'あ', 'ア', GETA] {
            assert!(cs.contains(c), "missing {c}");
        }
    }

    #[test]
    fn entries_sorted_unique_and_pad_not_member() {
        let cs = Charset::build_default();
        assert!(cs.entries().windows(2).all(|w| w[0] < w[1]));
        assert!(cs.char_at(PAD).is_none());
    }

    #[test]
    fn unknown_characters_encode_to_geta() {
        let cs = Charset::build_default();
        assert_eq!(cs.encode_char('😀'), cs.unknown_index());
        assert_eq!(cs.char_at(cs.unknown_index()), Some(GETA));
    }

    #[test]
    fn subset_keeps_geta_and_size() {
        let cs = Charset::build_default();
        let sub = cs.subset(200).unwrap();
        assert_eq!(sub.len(), 200);
        assert!(sub.contains(GETA));
        assert!(sub.entries().iter().all(|&c| cs.contains(c)));
        assert!(cs.subset(1).is_err());
    }

    #[test]
    fn charset_without_geta_rejected() {
        assert!(Charset::from_chars("abc".chars()).is_err());
    }

    #[test]
    fn hash_changes_with_contents() {
        let a = Charset::from_chars(['a', GETA]).unwrap();
        let b = Charset::from_chars(['b', GETA]).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), Charset::from_chars([GETA, 'a', 'a']).unwrap().hash());
    }

    #[test]
    fn nearest_by_codepoint() {
        let cs = Charset::from_chars(['a', 'c', 'z', GETA]).unwrap();
        assert_eq!(cs.nearest('b', 2), vec!['a', 'c']);
    }
}
