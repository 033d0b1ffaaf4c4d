use crate::error::{Error, Result};

/// Output index reserved for the CTC blank.
pub const BLANK: usize = 0;

/// CTC output symbols: index 0 is the blank, characters follow from index 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    chars: Vec<char>,
}

impl Vocabulary {
    pub fn new(chars: Vec<char>) -> Result<Self> {
        for (i, c) in chars.iter().enumerate() {
            if chars[..i].contains(c) {
                return Err(Error::Data(format!("duplicate vocabulary symbol {c:?}")));
            }
        }
        if chars.is_empty() {
            return Err(Error::Data("empty vocabulary".into()));
        }
        Ok(Self { chars })
    }

    /// Lowercase letters, space and apostrophe.
    pub fn characters() -> Self {
        let mut chars: Vec<char> = ('a'..='z').collect();
        chars.push(' ');
        chars.push('\'');
        Self { chars }
    }

    /// Number of output classes, blank included.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Position of `c` among the characters (0-based, blank excluded).
    pub fn char_index(&self, c: char) -> Option<usize> {
        self.chars.iter().position(|&x| x == c)
    }

    /// Output index of `c` (1-based, since 0 is the blank).
    pub fn index_of(&self, c: char) -> Option<usize> {
        self.char_index(c).map(|i| i + 1)
    }

    pub fn symbol(&self, index: usize) -> Option<char> {
        index.checked_sub(1).and_then(|i| self.chars.get(i).copied())
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.index_of(c)
                    .ok_or_else(|| Error::Data(format!("character {c:?} not in vocabulary")))
            })
            .collect()
    }

    /// Maps output indices to text, skipping blanks.
    pub fn decode(&self, indices: &[usize]) -> String {
        indices.iter().filter_map(|&i| self.symbol(i)).collect()
    }

    pub fn contains_all(&self, text: &str) -> bool {
        text.chars().all(|c| self.char_index(c).is_some())
    }
}
