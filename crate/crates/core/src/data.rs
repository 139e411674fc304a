//! In-memory utterances shared by the training and evaluation loops.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance<S> {
    pub id: String,
    pub language: String,
    pub samples: Vec<S>,
    pub transcript: Option<String>,
}

impl<S: Scalar> Utterance<S> {
    pub fn new(id: impl Into<String>, language: impl Into<String>, samples: Vec<S>) -> Self {
        Self { id: id.into(), language: language.into(), samples, transcript: None }
    }

    pub fn with_transcript(mut self, t: impl Into<String>) -> Self {
        self.transcript = Some(t.into());
        self
    }
}
