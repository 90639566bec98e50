//! Semantic and verbal uncertainty of sampled answers.

mod cluster;
mod lexical;

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

pub use cluster::{
    cluster_semantic, cluster_sizes, normalize_answer, normalize_su, semantic_entropy,
    ContainmentOracle, EquivalenceOracle,
};
pub use lexical::{char_ngrams, embed, score_vu_lexical, scoring_text, PrototypeBank};

use crate::error::{Error, Result};
use crate::tinylm::{generate, GenerationSample, ModelWeights, SamplingParams};
use crate::vuf::Activations;

const SHIPPED_ABSTENTION: &str = include_str!("../../resources/abstention_phrases.txt");

/// Default number of high-temperature samples per question.
pub const DEFAULT_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub seed: u64,
    pub sum_logprob: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstained: Option<bool>,
}

impl Answer {
    fn from_sample(s: &GenerationSample) -> Self {
        Self {
            text: s.text.clone(),
            seed: s.params.rng_seed,
            sum_logprob: s.logprobs.iter().sum(),
            vu: None,
            abstained: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerSet {
    pub question_id: String,
    pub question: String,
    pub most_likely: Answer,
    pub samples: Vec<Answer>,
    /// Cluster id of each sample, once clustered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<usize>>,
    /// Last-prompt-token residual stream, when captured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activations: Option<Activations>,
}

impl AnswerSet {
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Data(format!("{}: no samples", self.question_id)));
        }
        if let Some(c) = &self.clusters {
            if c.len() != self.samples.len() {
                return Err(Error::Data(format!(
                    "{}: {} cluster ids for {} samples",
                    self.question_id,
                    c.len(),
                    self.samples.len()
                )));
            }
            let used: BTreeSet<usize> = c.iter().copied().collect();
            if used.iter().enumerate().any(|(i, &id)| i != id) {
                return Err(Error::Data(format!(
                    "{}: cluster ids are not contiguous",
                    self.question_id
                )));
            }
        }
        for a in std::iter::once(&self.most_likely).chain(&self.samples) {
            if let Some(v) = a.vu {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Data(format!(
                        "{}: VU {v} outside [0, 1]",
                        self.question_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sample_texts(&self) -> Vec<String> {
        self.samples.iter().map(|a| a.text.clone()).collect()
    }

    /// Mean VU over scored samples.
    pub fn question_vu(&self) -> Result<f64> {
        let vus: Vec<f64> = self
            .samples
            .iter()
            .map(|a| {
                a.vu.ok_or_else(|| {
                    Error::Input(format!("{}: samples not scored", self.question_id))
                })
            })
            .collect::<Result<_>>()?;
        question_vu(&vus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScores {
    /// Semantic entropy in nats.
    pub su: f64,
    pub su_norm: f64,
    /// Mean VU over the high-temperature samples.
    pub vu: f64,
    /// VU of the most-likely answer.
    pub vu_most_likely: f64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `n` distinct seeds derived from `base`.
pub fn derive_seeds(base: u64, n: usize) -> Vec<u64> {
    // splitmix64 is a bijection, so distinct counters give distinct seeds
    (0..n as u64)
        .map(|i| splitmix64(base ^ splitmix64(i)))
        .collect()
}

/// Samples `n` answers with seeds derived from `high.rng_seed` plus one
/// most-likely answer under `low`.
pub fn sample_answers(
    weights: &ModelWeights,
    question_id: &str,
    question: &str,
    n: usize,
    high: &SamplingParams,
    low: &SamplingParams,
    capture: &BTreeSet<usize>,
) -> Result<AnswerSet> {
    let seeds = derive_seeds(high.rng_seed, n);
    sample_answers_with_seeds(weights, question_id, question, &seeds, high, low, capture)
}

/// As [`sample_answers`] with an explicit seed per sample.
pub fn sample_answers_with_seeds(
    weights: &ModelWeights,
    question_id: &str,
    question: &str,
    seeds: &[u64],
    high: &SamplingParams,
    low: &SamplingParams,
    capture: &BTreeSet<usize>,
) -> Result<AnswerSet> {
    if seeds.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 samples, got {}",
            seeds.len()
        )));
    }
    let mut seen = HashSet::new();
    for &s in seeds {
        if !seen.insert(s) {
            return Err(Error::SeedCollision { seed: s });
        }
    }
    if question.is_empty() {
        return Err(Error::Input(format!("{question_id}: empty question")));
    }
    let prompt = weights.config.vocab().encode_prompt(question);
    let ml = generate(weights, &prompt, low, &[], capture)?;
    let samples = seeds
        .iter()
        .map(|&s| {
            generate(weights, &prompt, &high.with_seed(s), &[], &BTreeSet::new())
                .map(|g| Answer::from_sample(&g))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnswerSet {
        question_id: question_id.to_string(),
        question: question.to_string(),
        most_likely: Answer::from_sample(&ml),
        samples,
        clusters: None,
        activations: ml.activations,
    })
}

/// Arithmetic mean of per-answer VU scores.
pub fn question_vu(answer_vus: &[f64]) -> Result<f64> {
    if answer_vus.is_empty() {
        return Err(Error::Input("no VU scores to average".into()));
    }
    Ok(answer_vus.iter().sum::<f64>() / answer_vus.len() as f64)
}

/// The abstention phrase list bundled with the crate.
pub fn shipped_abstention_phrases() -> Vec<String> {
    parse_phrase_list(SHIPPED_ABSTENTION)
}

/// One phrase per line; blank lines and `#` comments are ignored.
pub fn parse_phrase_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// True iff some normalised phrase occurs in the normalised answer.
pub fn detect_abstention(answer: &str, phrases: &[String]) -> bool {
    let a = normalize_answer(answer);
    if a.is_empty() {
        return false;
    }
    phrases
        .iter()
        .map(|p| normalize_answer(p))
        .any(|p| !p.is_empty() && a.contains(&p))
}

/// Assigns a verbal-uncertainty score to an answer.
pub trait VuScorer: Sync {
    fn score(&self, question: &str, answer: &str) -> Result<f64>;

    /// Scores many `(question, answer)` pairs, preserving order.
    fn score_batch(&self, items: &[(String, String)]) -> Result<Vec<f64>> {
        items.iter().map(|(q, a)| self.score(q, a)).collect()
    }
}

/// Prototype-similarity scorer. An empty answer punts and scores 1.
#[derive(Debug, Clone)]
pub struct LexicalScorer {
    pub bank: PrototypeBank,
}

impl LexicalScorer {
    pub fn new(bank: PrototypeBank) -> Self {
        Self { bank }
    }

    pub fn shipped() -> Self {
        Self::new(PrototypeBank::shipped())
    }
}

impl VuScorer for LexicalScorer {
    fn score(&self, _question: &str, answer: &str) -> Result<f64> {
        if answer.trim().is_empty() {
            return Ok(1.0);
        }
        score_vu_lexical(answer, &self.bank)
    }
}

/// Fills in VU, abstention flags and clusters, and returns the scores.
pub fn score_answer_set(
    set: &mut AnswerSet,
    scorer: &dyn VuScorer,
    oracle: &dyn EquivalenceOracle,
    abstention_phrases: &[String],
) -> Result<UncertaintyScores> {
    let mut items = vec![(set.question.clone(), set.most_likely.text.clone())];
    items.extend(
        set.samples
            .iter()
            .map(|a| (set.question.clone(), a.text.clone())),
    );
    let vus = scorer.score_batch(&items)?;
    for (a, &v) in std::iter::once(&mut set.most_likely)
        .chain(set.samples.iter_mut())
        .zip(&vus)
    {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Invariant(format!(
                "scorer returned VU {v} outside [0, 1]"
            )));
        }
        a.vu = Some(v);
        a.abstained = Some(detect_abstention(&a.text, abstention_phrases));
    }
    let assignment = cluster_semantic(&set.sample_texts(), oracle)?;
    let su = semantic_entropy(&assignment)?;
    let su_norm = normalize_su(su, assignment.len())?;
    set.clusters = Some(assignment);
    Ok(UncertaintyScores {
        su,
        su_norm,
        vu: set.question_vu()?,
        vu_most_likely: vus[0],
    })
}

/// Scores of an already scored answer set.
pub fn scores_of(set: &AnswerSet) -> Result<UncertaintyScores> {
    let assignment = set
        .clusters
        .as_ref()
        .ok_or_else(|| Error::Input(format!("{}: samples not clustered", set.question_id)))?;
    let su = semantic_entropy(assignment)?;
    Ok(UncertaintyScores {
        su,
        su_norm: normalize_su(su, assignment.len())?,
        vu: set.question_vu()?,
        vu_most_likely: set.most_likely.vu.ok_or_else(|| {
            Error::Input(format!(
                "{}: most-likely answer not scored",
                set.question_id
            ))
        })?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_distinct() {
        let s = derive_seeds(7, 1000);
        assert_eq!(s.iter().collect::<HashSet<_>>().len(), 1000);
        assert_eq!(s, derive_seeds(7, 1000));
    }

    #[test]
    fn question_vu_cases() {
        assert!((question_vu(&[0.2, 0.4]).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(question_vu(&[0.0; 5]).unwrap(), 0.0);
        assert!(question_vu(&[]).is_err());
    }

    #[test]
    fn abstention_detection() {
        let p = shipped_abstention_phrases();
        assert!(detect_abstention(
            "I am unable to verify the name of the third river.",
            &p
        ));
        assert!(detect_abstention("I don't know.", &p));
        assert!(!detect_abstention("Paris.", &p));
        assert!(!detect_abstention("", &p));
        assert!(!detect_abstention(
            "I'm not certain, but maybe it is Paris.",
            &p
        ));
    }

    #[test]
    fn shipped_phrases_cover_required_entries() {
        let p = shipped_abstention_phrases();
        for need in [
            "i don't know",
            "i'm not sure",
            "unable to verify",
            "i do not have information",
            "i'm not aware",
        ] {
            assert!(p.iter().any(|x| x == need), "{need}");
        }
    }

    #[test]
    fn hedged_answer_scores_above_plain() {
        let bank = PrototypeBank::shipped();
        let hedged = score_vu_lexical("I'm not sure, but maybe Bournemouth?", &bank).unwrap();
        let plain = score_vu_lexical("It's Bournemouth.", &bank).unwrap();
        assert!(hedged > plain, "{hedged} vs {plain}");
    }
}
