//! Verbal uncertainty from character n-gram similarity to prototype phrases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SHIPPED_BANK: &str = include_str!("../../resources/prototype_bank.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BankFile {
    uncertain: Vec<String>,
    certain: Vec<String>,
    ngram: usize,
    dim: usize,
}

/// Hedging and certainty prototypes with their unit n-gram hash vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    pub uncertain: Vec<String>,
    pub certain: Vec<String>,
    pub ngram: usize,
    pub dim: usize,
    uncertain_vecs: Vec<Vec<f64>>,
    certain_vecs: Vec<Vec<f64>>,
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Lowercase, trimmed, whitespace-collapsed text used for n-gram extraction.
pub fn scoring_text(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Character n-grams of the scoring text; a text shorter than `n` forms a
/// single gram.
pub fn char_ngrams(text: &str, n: usize) -> Vec<String> {
    let chars: Vec<char> = scoring_text(text).chars().collect();
    if chars.is_empty() {
        return Vec::new();
    }
    if chars.len() < n {
        return vec![chars.iter().collect()];
    }
    chars.windows(n).map(|w| w.iter().collect()).collect()
}

/// Unit-norm hashed bag of character n-grams.
pub fn embed(text: &str, n: usize, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for g in char_ngrams(text, n) {
        v[(fnv1a(&g) % dim as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn max_cosine(v: &[f64], protos: &[Vec<f64>]) -> f64 {
    protos
        .iter()
        .map(|p| p.iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
        .fold(0.0, f64::max)
}

impl PrototypeBank {
    pub fn new(
        uncertain: Vec<String>,
        certain: Vec<String>,
        ngram: usize,
        dim: usize,
    ) -> Result<Self> {
        if uncertain.is_empty() || certain.is_empty() {
            return Err(Error::Config(
                "prototype bank needs phrases on both sides".into(),
            ));
        }
        if ngram == 0 || dim == 0 {
            return Err(Error::Config(
                "n-gram size and hash dimension must be positive".into(),
            ));
        }
        let uncertain_vecs = uncertain.iter().map(|p| embed(p, ngram, dim)).collect();
        let certain_vecs = certain.iter().map(|p| embed(p, ngram, dim)).collect();
        Ok(Self {
            uncertain,
            certain,
            ngram,
            dim,
            uncertain_vecs,
            certain_vecs,
        })
    }

    /// The bank bundled with the crate.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_BANK).expect("bundled prototype bank is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: BankFile = serde_json::from_str(text)?;
        Self::new(f.uncertain, f.certain, f.ngram, f.dim)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&BankFile {
            uncertain: self.uncertain.clone(),
            certain: self.certain.clone(),
            ngram: self.ngram,
            dim: self.dim,
        })?)
    }

    /// `(max cos to uncertain, max cos to certain)` for an answer.
    pub fn similarities(&self, answer: &str) -> (f64, f64) {
        let v = embed(answer, self.ngram, self.dim);
        (
            max_cosine(&v, &self.uncertain_vecs),
            max_cosine(&v, &self.certain_vecs),
        )
    }
}

/// `clamp((s_uncertain − s_certain + 1) / 2, 0, 1)`.
pub fn score_vu_lexical(answer: &str, bank: &PrototypeBank) -> Result<f64> {
    if answer.trim().is_empty() {
        return Err(Error::Input("cannot score an empty answer".into()));
    }
    let (u, c) = bank.similarities(answer);
    Ok(((u - c + 1.0) / 2.0).clamp(0.0, 1.0))
}
