use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{emit, ExperimentConfig, QARecord};
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::tinylm::{build_planted_model, forward, ModelConfig, ModelWeights, TokenId};

/// Shape of the synthetic question set.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOptions {
    pub n_questions: usize,
    /// Largest number of distinct letters in one question; more letters mix
    /// more clues and raise semantic uncertainty.
    pub max_distinct: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of questions prefixed with the uncertain mode marker, and
    /// likewise for the certain marker.
    pub marked_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticOptions {
    fn default() -> Self {
        Self {
            n_questions: 200,
            max_distinct: 8,
            min_len: 6,
            max_len: 14,
            marked_fraction: 1.0 / 3.0,
            seed: 0,
        }
    }
}

/// Random lowercase string over `distinct` letters, then `?`.
pub fn synthetic_question(
    rng: &mut ChaCha8Rng,
    distinct: usize,
    min_len: usize,
    max_len: usize,
) -> String {
    let mut letters: Vec<char> = ('a'..='z').collect();
    letters.shuffle(rng);
    let pool = &letters[..distinct.clamp(1, 26)];
    let len = rng.random_range(min_len..=max_len.max(min_len));
    let mut q: String = (0..len)
        .map(|_| *pool.choose(rng).expect("nonempty pool"))
        .collect();
    q.push('?');
    q
}

/// Questions for a planted model, each with a gold entity drawn from the
/// model's own answer distribution, so low-entropy questions are usually
/// answered correctly and high-entropy ones often are not.
pub fn synthetic_dataset(weights: &ModelWeights, opts: &SyntheticOptions) -> Result<Vec<QARecord>> {
    if opts.min_len == 0 || opts.max_distinct == 0 {
        return Err(Error::Config(
            "synthetic questions need positive length and alphabet".into(),
        ));
    }
    if !(0.0..=0.5).contains(&opts.marked_fraction) {
        return Err(Error::Config("marked_fraction must lie in [0, 0.5]".into()));
    }
    let vocab = weights.config.vocab();
    let entities = vocab.entity_ids();
    if entities.is_empty() {
        return Err(Error::Config(
            "model vocabulary has no entity tokens".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut out = Vec::with_capacity(opts.n_questions);
    for i in 0..opts.n_questions {
        let distinct = rng.random_range(1..=opts.max_distinct);
        let body = synthetic_question(&mut rng, distinct, opts.min_len, opts.max_len);
        let u: f64 = rng.random();
        let marker = if u < opts.marked_fraction {
            "<|uncertain|>"
        } else if u < 2.0 * opts.marked_fraction {
            "<|certain|>"
        } else {
            ""
        };
        // gold from the entity distribution of the unmarked question
        let logits = forward(weights, &vocab.encode_prompt(&body), &[], &BTreeSet::new())?.logits;
        let el: Vec<f64> = entities
            .iter()
            .map(|&e| logits[e as usize] as f64)
            .collect();
        let max = el.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let p: Vec<f64> = el.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = p.iter().sum();
        let mut draw = rng.random::<f64>() * z;
        let mut gold = entities.len() - 1;
        for (j, pj) in p.iter().enumerate() {
            if draw < *pj {
                gold = j;
                break;
            }
            draw -= pj;
        }
        let name = vocab.entity_name(entities[gold]).expect("entity name");
        out.push(QARecord {
            id: format!("q{i:04}"),
            question: format!("{marker}{body}"),
            gold: vec![name.to_string()],
        });
    }
    Ok(out)
}

/// Files written by [`init_toy`].
#[derive(Debug, Clone, PartialEq)]
pub struct ToyFiles {
    pub model: PathBuf,
    pub dataset: PathBuf,
    pub config: PathBuf,
}

/// Writes a planted model, a synthetic dataset for it and a config that ties
/// them together into `dir`.
pub fn init_toy(dir: &Path, seed: u64, n_questions: usize) -> Result<ToyFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = ModelConfig::planted_default(seed);
    let hedges: BTreeSet<TokenId> = cfg.vocab().hedge_ids().into_iter().collect();
    let weights = build_planted_model(&cfg, &hedges, cfg.n_layers / 2 - 1)?;
    let data = synthetic_dataset(
        &weights,
        &SyntheticOptions {
            n_questions,
            seed,
            ..SyntheticOptions::default()
        },
    )?;
    let files = ToyFiles {
        model: dir.join("model.json"),
        dataset: dir.join("dataset.jsonl"),
        config: dir.join("config.json"),
    };
    weights.save(&files.model)?;
    atomic_write(&files.dataset, emit(&data)?.as_bytes())?;
    let config = ExperimentConfig {
        model_path: "model.json".into(),
        dataset_path: "dataset.jsonl".into(),
        output_dir: "out".into(),
        seed,
        ..ExperimentConfig::default()
    };
    atomic_write(&files.config, config.to_json()?.as_bytes())?;
    Ok(files)
}
