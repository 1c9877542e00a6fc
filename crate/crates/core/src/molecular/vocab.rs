use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const UNK: usize = 2;

const SYMBOLS: &[&str] = &[
    "Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I", "c", "n", "o", "s", "p", "=", "#", "-", "/", "\\", "(", ")",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "%", "[", "]", "@", "+", "H",
];

/// Character-level SMILES vocabulary with two-letter halogens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmilesVocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for SmilesVocabulary {
    fn default() -> Self {
        let tokens: Vec<String> = ["<pad>", "<cls>", "<unk>"]
            .iter()
            .chain(SYMBOLS)
            .map(|s| s.to_string())
            .collect();
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        SmilesVocabulary { tokens, ids }
    }
}

impl SmilesVocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Longest-match scan: `CLS` first, then symbols, truncated to
    /// `max_len` and right-padded with `PAD`. Unknown characters become `UNK`.
    pub fn tokenize(&self, smiles: &str, max_len: usize) -> Result<Vec<usize>> {
        if smiles.is_empty() {
            return Err(Error::EmptySmiles);
        }
        if max_len < 2 {
            return Err(Error::InvalidArgument(format!(
                "max_len {max_len} leaves no room after CLS"
            )));
        }
        let mut out = Vec::with_capacity(max_len);
        out.push(CLS);
        let chars: Vec<char> = smiles.chars().collect();
        let mut i = 0;
        while i < chars.len() && out.len() < max_len {
            if i + 1 < chars.len() {
                let two: String = chars[i..i + 2].iter().collect();
                if let Some(id) = self.id(&two) {
                    out.push(id);
                    i += 2;
                    continue;
                }
            }
            out.push(self.id(chars[i].encode_utf8(&mut [0; 4])).unwrap_or(UNK));
            i += 1;
        }
        out.resize(max_len, PAD);
        Ok(out)
    }
}

pub fn tokenize_smiles(smiles: &str, vocab: &SmilesVocabulary, max_len: usize) -> Result<Vec<usize>> {
    vocab.tokenize(smiles, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &SmilesVocabulary, toks: &[&str]) -> Vec<usize> {
        toks.iter().map(|t| v.id(t).unwrap()).collect()
    }

    #[test]
    fn examples() {
        let v = SmilesVocabulary::default();
        let mut want = vec![CLS];
        want.extend(ids(&v, &["C", "C", "O"]));
        want.resize(8, PAD);
        assert_eq!(v.tokenize("CCO", 8).unwrap(), want);

        let mut want = vec![CLS];
        want.extend(ids(&v, &["Cl", "C", "C"]));
        want.resize(8, PAD);
        assert_eq!(v.tokenize("ClCC", 8).unwrap(), want);

        let c = v.id("C").unwrap();
        assert_eq!(v.tokenize("C?C", 5).unwrap(), vec![CLS, c, UNK, c, PAD]);
    }

    #[test]
    fn bijective_with_distinct_specials() {
        let v = SmilesVocabulary::default();
        for id in 0..v.len() {
            assert_eq!(v.id(v.token(id).unwrap()), Some(id));
        }
        assert_eq!(v.len(), 3 + SYMBOLS.len());
    }

    #[test]
    fn truncates_and_rejects_empty() {
        let v = SmilesVocabulary::default();
        assert_eq!(v.tokenize("CCCCCC", 3).unwrap().len(), 3);
        assert!(matches!(v.tokenize("", 8), Err(Error::EmptySmiles)));
    }

    #[test]
    fn trailing_single_character_is_kept() {
        let v = SmilesVocabulary::default();
        let t = v.tokenize("CBr", 6).unwrap();
        assert_eq!(&t[..3], &[CLS, v.id("C").unwrap(), v.id("Br").unwrap()]);
        let t = v.tokenize("CB", 6).unwrap();
        assert_eq!(&t[..3], &[CLS, v.id("C").unwrap(), v.id("B").unwrap()]);
    }
}
