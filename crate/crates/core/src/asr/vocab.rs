use std::path::Path;

use crate::error::{Error, Result};

pub const BLANK: &str = "<blank>";
pub const WORD_DELIMITER: &str = "|";
const HEADER: &str = "# ctc vocabulary: blank, word delimiter, characters";

/// Character vocabulary for CTC: index 0 is the blank, index 1 the word
/// delimiter `|` standing for a space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from the characters of `texts`, sorted by code
    /// point. Whitespace maps to the word delimiter.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut chars: Vec<char> = texts.into_iter().flat_map(|t| t.chars()).filter(|c| !c.is_whitespace()).collect();
        chars.sort_unstable();
        chars.dedup();
        let mut symbols = vec![BLANK.to_string(), WORD_DELIMITER.to_string()];
        symbols.extend(chars.into_iter().filter(|&c| c != '|').map(String::from));
        Self { symbols }
    }

    pub fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        if symbols.first().map(String::as_str) != Some(BLANK) || symbols.get(1).map(String::as_str) != Some(WORD_DELIMITER) {
            return Err(Error::Data(format!("vocabulary must start with `{BLANK}` and `{WORD_DELIMITER}`")));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &symbols {
            if !seen.insert(s) {
                return Err(Error::Data(format!("duplicate vocabulary symbol `{s}`")));
            }
        }
        Ok(Self { symbols })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, sym: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == sym)
    }

    /// Label indices of `text`; runs of whitespace become one delimiter and
    /// leading or trailing whitespace is dropped.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            if !out.is_empty() {
                out.push(1);
            }
            for c in word.chars() {
                let mut buf = [0u8; 4];
                let i = self
                    .index_of(c.encode_utf8(&mut buf))
                    .filter(|&i| i > 0)
                    .ok_or_else(|| Error::Data(format!("character `{c}` is not in the vocabulary")))?;
                out.push(i);
            }
        }
        Ok(out)
    }

    /// Text for label indices with the delimiter shown as a space; blanks are
    /// skipped.
    pub fn decode(&self, labels: &[usize]) -> String {
        let s: String = labels
            .iter()
            .filter(|&&i| i != 0 && i < self.symbols.len())
            .map(|&i| if i == 1 { " " } else { self.symbols[i].as_str() })
            .collect();
        s.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::from(HEADER);
        text.push('\n');
        for s in &self.symbols {
            text.push_str(s);
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_symbols(text.lines().skip(1).map(str::to_string).collect())
    }
}
