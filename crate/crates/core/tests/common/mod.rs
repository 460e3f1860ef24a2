//! Oracles and criterion checks shared by the integration tests.

#![allow(dead_code)]

pub mod oracles;
pub mod checks;

/// Outcome of one acceptance check.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}
