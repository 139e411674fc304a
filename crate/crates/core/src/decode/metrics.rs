use crate::error::{Error, Result};

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit operations and reference length, summable over a corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ErrorCounts {
    pub edits: usize,
    pub reference_len: usize,
}

impl ErrorCounts {
    pub fn add(&mut self, other: ErrorCounts) {
        self.edits += other.edits;
        self.reference_len += other.reference_len;
    }

    pub fn rate(&self) -> Result<f64> {
        if self.reference_len == 0 {
            return Err(Error::invalid("error_rate", "reference is empty"));
        }
        Ok(self.edits as f64 / self.reference_len as f64)
    }
}

pub fn word_errors(reference: &str, hypothesis: &str) -> ErrorCounts {
    let r: Vec<&str> = reference.split_whitespace().collect();
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    ErrorCounts { edits: edit_distance(&r, &h), reference_len: r.len() }
}

/// Character errors ignoring whitespace.
pub fn char_errors(reference: &str, hypothesis: &str) -> ErrorCounts {
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let h: Vec<char> = hypothesis.chars().filter(|c| !c.is_whitespace()).collect();
    ErrorCounts { edits: edit_distance(&r, &h), reference_len: r.len() }
}

pub fn wer(reference: &str, hypothesis: &str) -> Result<f64> {
    word_errors(reference, hypothesis).rate()
}

pub fn cer(reference: &str, hypothesis: &str) -> Result<f64> {
    char_errors(reference, hypothesis).rate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert!((wer("a b c", "a x c").unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(wer("same words", "same words").unwrap(), 0.0);
        assert!((cer("abc", "ab").unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(wer("", "a").is_err());
        assert!(cer("  ", "a").is_err());
    }

    #[test]
    fn distance_basics() {
        assert_eq!(edit_distance(b"kitten", b"sitting"), 3);
        assert_eq!(edit_distance::<u8>(b"", b"abc"), 3);
    }
}
