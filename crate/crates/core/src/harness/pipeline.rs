use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::artifacts::{
    load_artifact, load_generations, save_artifact, save_generations, ArtifactKind, Manifest,
};
use super::config::{ExperimentConfig, ScorerChoice};
use super::{ingest, QARecord};
use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, sha256_hex};
use crate::judge::{JudgeClient, JudgeScorer};
use crate::metrics::{
    categorize, mitigation_report, report_csv, select_threshold, ContainmentCorrectness,
    MetricRecord, MetricsReport,
};
use crate::probes::{
    accuracy, auroc, hidden_features, label_examples, predict, train_detector, train_regressor,
    Detector, Probe, ProbeLayout, ProbeTarget,
};
use crate::steering::{
    muc_pipeline, sweep_alpha, Gate, SteeringConfig, SteeringMode, SweepQuestion, SweepResult,
};
use crate::tinylm::{ModelWeights, Positions};
use crate::uncertainty::{
    derive_seeds, detect_abstention, sample_answers, score_answer_set, scores_of,
    shipped_abstention_phrases, AnswerSet, ContainmentOracle, LexicalScorer, UncertaintyScores,
    VuScorer,
};
use crate::vuf::{
    build_contrastive_sets, cosine, extract_vuf, pca_separability, ContrastiveSets,
    FeatureDirection, Projection2D, ScoredActivations,
};

const GENERATIONS: &str = "generations.jsonl";
const FEATURES: &str = "features.json";
const PROBE_SU: &str = "probes/probe_su.json";
const PROBE_VU: &str = "probes/probe_vu.json";
const DETECTOR: &str = "probes/detector.json";
const DETECTOR_PROBE: &str = "probes/detector_probe.json";
const DETECTION: &str = "probes/detection.json";
const CALIBRATED: &str = "generations_after.jsonl";
const REPORT_BEFORE: &str = "report_before.json";
const REPORT_AFTER: &str = "report_after.json";
const REPORT_CSV: &str = "report.csv";
const SWEEP: &str = "sweep.csv";

/// A validated configuration bound to its output directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub config: ExperimentConfig,
    pub hash: String,
}

impl Workspace {
    /// Validates the configuration before any compute.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        Ok(Self { config, hash })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.config.output_dir.join(rel)
    }

    fn record(&self, rel: &str, sha: String) -> Result<()> {
        let mut m = Manifest::load(&self.config.output_dir)?;
        m.config_hash = self.hash.clone();
        m.record(rel, sha);
        m.save(&self.config.output_dir)
    }

    fn save<T: Serialize>(&self, rel: &str, kind: ArtifactKind, value: &T) -> Result<()> {
        let sha = save_artifact(&self.path(rel), kind, &self.hash, value)?;
        self.record(rel, sha)
    }

    fn save_lines<T: Serialize>(&self, rel: &str, kind: ArtifactKind, values: &[T]) -> Result<()> {
        let sha = save_generations(&self.path(rel), kind, &self.hash, values)?;
        self.record(rel, sha)
    }

    fn save_text(&self, rel: &str, text: &str) -> Result<()> {
        atomic_write(&self.path(rel), text.as_bytes())?;
        self.record(rel, sha256_hex(text.as_bytes()))
    }

    fn load<T: serde::de::DeserializeOwned>(&self, rel: &str, kind: ArtifactKind) -> Result<T> {
        Ok(load_artifact(&self.path(rel), kind)?.0)
    }

    pub fn model(&self) -> Result<ModelWeights> {
        ModelWeights::load(&self.config.model_path)
    }

    pub fn dataset(&self) -> Result<Vec<QARecord>> {
        let d = ingest(&self.config.dataset_path)?;
        if d.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        Ok(d)
    }

    pub fn generations(&self) -> Result<Vec<AnswerSet>> {
        Ok(load_generations(&self.path(GENERATIONS), ArtifactKind::Generations)?.0)
    }

    pub fn features(&self) -> Result<FeatureDirection> {
        self.load(FEATURES, ArtifactKind::Features)
    }

    pub fn calibrated(&self) -> Result<Vec<CalibratedRecord>> {
        Ok(load_generations(&self.path(CALIBRATED), ArtifactKind::Calibration)?.0)
    }

    fn scorer(&self) -> Result<Box<dyn VuScorer>> {
        Ok(match self.config.scorer {
            ScorerChoice::Lexical => Box::new(LexicalScorer::shipped()),
            ScorerChoice::Judge => Box::new(JudgeScorer {
                client: JudgeClient::http(self.config.judge())?,
            }),
        })
    }

    /// `(high, low)` base seeds of record `i`.
    fn record_seeds(&self, n: usize) -> Vec<(u64, u64)> {
        derive_seeds(self.config.seed, 2 * n)
            .chunks(2)
            .map(|c| (c[0], c[1]))
            .collect()
    }

    fn scored(&self) -> Result<Vec<(AnswerSet, UncertaintyScores)>> {
        self.generations()?
            .into_iter()
            .map(|s| {
                let sc = scores_of(&s)?;
                Ok((s, sc))
            })
            .collect()
    }
}

/// Samples answers for every record and writes them unscored.
pub fn stage_sample(ws: &Workspace) -> Result<Vec<AnswerSet>> {
    let run = || {
        let weights = ws.model()?;
        let data = ws.dataset()?;
        let capture: BTreeSet<usize> = (0..weights.config.n_layers).collect();
        let seeds = ws.record_seeds(data.len());
        let sets = data
            .iter()
            .zip(seeds)
            .map(|(r, (hi, lo))| {
                sample_answers(
                    &weights,
                    &r.id,
                    &r.question,
                    ws.config.n_samples,
                    &ws.config.high_params(hi),
                    &ws.config.low_params(lo),
                    &capture,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        ws.save_lines(GENERATIONS, ArtifactKind::Generations, &sets)?;
        Ok(sets)
    };
    run().map_err(|e: Error| e.in_stage("sample"))
}

/// Scores VU, abstention and clusters of the sampled answers in place.
pub fn stage_score(ws: &Workspace) -> Result<Vec<(AnswerSet, UncertaintyScores)>> {
    let run = || {
        let scorer = ws.scorer()?;
        let phrases = shipped_abstention_phrases();
        let mut out = Vec::new();
        for mut s in ws.generations()? {
            let sc = score_answer_set(&mut s, scorer.as_ref(), &ContainmentOracle, &phrases)?;
            out.push((s, sc));
        }
        let sets: Vec<&AnswerSet> = out.iter().map(|(s, _)| s).collect();
        ws.save_lines(GENERATIONS, ArtifactKind::Generations, &sets)?;
        Ok(out)
    };
    run().map_err(|e: Error| e.in_stage("score"))
}

impl Workspace {
    /// Contrastive sets selected from the scored generations.
    pub fn contrastive_sets(&self) -> Result<ContrastiveSets> {
        let items = self
            .scored()?
            .into_iter()
            .map(|(s, sc)| {
                let activations = s.activations.ok_or_else(|| {
                    Error::Data(format!("{}: no activations captured", s.question_id))
                })?;
                Ok(ScoredActivations {
                    activations,
                    vu: sc.vu,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let policy = self.config.policy_for(items.len())?;
        build_contrastive_sets(&items, &policy, scorer_name(self.config.scorer))
    }
}

/// Difference-in-means direction from the most and least hedged questions.
pub fn stage_extract(ws: &Workspace) -> Result<FeatureDirection> {
    let run = || {
        let dir = extract_vuf(&ws.contrastive_sets()?)?;
        ws.save(FEATURES, ArtifactKind::Features, &dir)?;
        Ok(dir)
    };
    run().map_err(|e: Error| e.in_stage("extract-vuf"))
}

/// Per-layer cosine between the extracted feature and the model's planted
/// direction. Nothing is written.
pub fn stage_cosine(ws: &Workspace) -> Result<BTreeMap<usize, Option<f64>>> {
    let run = || {
        let weights = ws.model()?;
        let planted = weights.planted.as_ref().ok_or_else(|| {
            Error::Input("model has no planted direction to compare against".into())
        })?;
        let dir = ws.features()?;
        Ok(dir
            .layers
            .iter()
            .map(|(&l, v)| (l, cosine(v, &planted.direction)))
            .collect())
    };
    run().map_err(|e: Error| e.in_stage("cosine"))
}

/// Two-component projection of the contrastive sets at `layer`, written to
/// `pca_layer<L>.json`.
pub fn stage_pca(ws: &Workspace, layer: usize) -> Result<Projection2D> {
    let run = || {
        let p = pca_separability(&ws.contrastive_sets()?, layer)?;
        ws.save(&format!("pca_layer{layer}.json"), ArtifactKind::Report, &p)?;
        Ok(p)
    };
    run().map_err(|e: Error| e.in_stage("pca"))
}

fn scorer_name(s: ScorerChoice) -> &'static str {
    match s {
        ScorerChoice::Lexical => "lexical",
        ScorerChoice::Judge => "judge",
    }
}

fn probe_inputs(
    ws: &Workspace,
    scored: &[(AnswerSet, UncertaintyScores)],
    d_model: usize,
) -> Result<Vec<Vec<f64>>> {
    let window = ws.config.probe_window(ws.model()?.config.n_layers);
    scored
        .iter()
        .map(|(s, _)| {
            let a = s.activations.as_ref().ok_or_else(|| {
                Error::Data(format!("{}: no activations captured", s.question_id))
            })?;
            hidden_features(a, &window, d_model)
        })
        .collect()
}

/// Ridge probes for normalised SU and question VU.
pub fn stage_train_probes(ws: &Workspace) -> Result<(Probe, Probe)> {
    let run = || {
        let cfg = ws.model()?.config;
        let scored = ws.scored()?;
        let x = probe_inputs(ws, &scored, cfg.d_model)?;
        let window = ws.config.probe_window(cfg.n_layers);
        let su: Vec<f64> = scored.iter().map(|(_, s)| s.su_norm).collect();
        let vu: Vec<f64> = scored.iter().map(|(_, s)| s.vu).collect();
        let lam = ws.config.probe_ridge;
        let p_su = train_regressor(
            &x,
            &su,
            lam,
            ProbeLayout::new(ProbeTarget::Su, window.clone(), cfg.d_model),
        )?;
        let p_vu = train_regressor(
            &x,
            &vu,
            lam,
            ProbeLayout::new(ProbeTarget::Vu, window, cfg.d_model),
        )?;
        ws.save(PROBE_SU, ArtifactKind::Probe, &p_su)?;
        ws.save(PROBE_VU, ArtifactKind::Probe, &p_vu)?;
        Ok((p_su, p_vu))
    };
    run().map_err(|e: Error| e.in_stage("train-probe"))
}

struct DetectorData {
    calculated: Vec<Vec<f64>>,
    predicted: Vec<Vec<f64>>,
    labels: Vec<bool>,
}

fn detector_data(ws: &Workspace) -> Result<DetectorData> {
    let cfg = ws.model()?.config;
    let scored = ws.scored()?;
    let data = ws.dataset()?;
    if data.len() != scored.len() {
        return Err(Error::Data(
            "dataset and generations differ in length".into(),
        ));
    }
    let p_su: Probe = ws.load(PROBE_SU, ArtifactKind::Probe)?;
    let p_vu: Probe = ws.load(PROBE_VU, ArtifactKind::Probe)?;
    let x = probe_inputs(ws, &scored, cfg.d_model)?;
    let calculated: Vec<Vec<f64>> = scored.iter().map(|(_, s)| vec![s.su_norm, s.vu]).collect();
    let predicted = x
        .iter()
        .map(|h| Ok(vec![predict(&p_su, h)?, predict(&p_vu, h)?]))
        .collect::<Result<Vec<_>>>()?;
    let sets: Vec<AnswerSet> = scored.into_iter().map(|(s, _)| s).collect();
    let golds: Vec<Vec<String>> = data.into_iter().map(|r| r.gold).collect();
    let labels = label_examples(&sets, &golds, &calculated, &ContainmentCorrectness)?
        .into_iter()
        .map(|e| e.hallucinated)
        .collect();
    Ok(DetectorData {
        calculated,
        predicted,
        labels,
    })
}

/// Logistic detectors over calculated and probe-predicted `(su, vu)`.
pub fn stage_train_detector(ws: &Workspace) -> Result<(Detector, Detector)> {
    let run = || {
        let d = detector_data(ws)?;
        let calc = train_detector(&d.calculated, &d.labels, &["su", "vu"], "calculated")?;
        let pred = train_detector(&d.predicted, &d.labels, &["su", "vu"], "probe")?;
        ws.save(DETECTOR, ArtifactKind::Detector, &calc)?;
        ws.save(DETECTOR_PROBE, ArtifactKind::Detector, &pred)?;
        Ok((calc, pred))
    };
    run().map_err(|e: Error| e.in_stage("train-detector"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub n: usize,
    pub n_hallucinated: usize,
    pub auroc_combined: f64,
    pub auroc_su_only: f64,
    pub auroc_vu_only: f64,
    pub accuracy_combined: f64,
    pub auroc_probe_combined: f64,
    pub accuracy_probe_combined: f64,
}

/// Training-set AUROC and accuracy of the saved detectors, alongside
/// single-feature baselines.
pub fn stage_detect(ws: &Workspace) -> Result<DetectionSummary> {
    let run = || {
        let d = detector_data(ws)?;
        let calc: Detector = ws.load(DETECTOR, ArtifactKind::Detector)?;
        let pred: Detector = ws.load(DETECTOR_PROBE, ArtifactKind::Detector)?;
        let eval = |det: &Detector, x: &[Vec<f64>]| -> Result<(f64, f64)> {
            let p = x
                .iter()
                .map(|r| det.probability(r))
                .collect::<Result<Vec<_>>>()?;
            let flags: Vec<bool> = p.iter().map(|&v| v >= det.threshold).collect();
            Ok((auroc(&p, &d.labels)?, accuracy(&flags, &d.labels)))
        };
        let single = |j: usize, name: &str| -> Result<f64> {
            let x: Vec<Vec<f64>> = d.calculated.iter().map(|r| vec![r[j]]).collect();
            let det = train_detector(&x, &d.labels, &[name], "calculated")?;
            Ok(eval(&det, &x)?.0)
        };
        let (auroc_combined, accuracy_combined) = eval(&calc, &d.calculated)?;
        let (auroc_probe_combined, accuracy_probe_combined) = eval(&pred, &d.predicted)?;
        let s = DetectionSummary {
            n: d.labels.len(),
            n_hallucinated: d.labels.iter().filter(|&&l| l).count(),
            auroc_combined,
            auroc_su_only: single(0, "su")?,
            auroc_vu_only: single(1, "vu")?,
            accuracy_combined,
            auroc_probe_combined,
            accuracy_probe_combined,
        };
        ws.save(DETECTION, ArtifactKind::Report, &s)?;
        Ok(s)
    };
    run().map_err(|e: Error| e.in_stage("detect"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedRecord {
    pub question_id: String,
    pub alpha: f64,
    pub text: String,
    pub vu: f64,
    pub abstained: bool,
}

fn steering_config(ws: &Workspace, dir: &FeatureDirection, n_layers: usize) -> SteeringConfig {
    SteeringConfig {
        direction: dir.clone(),
        window: ws.config.steering_window(n_layers),
        mode: SteeringMode::Adaptive {
            max_alpha: ws.config.max_alpha,
        },
        positions: Positions::AllTokens,
    }
}

/// Regenerates each most-likely answer under adaptive steering.
pub fn stage_calibrate(ws: &Workspace) -> Result<Vec<CalibratedRecord>> {
    let run = || {
        let weights = ws.model()?;
        let dir = ws.features()?;
        let sc = steering_config(ws, &dir, weights.config.n_layers);
        sc.validate()?;
        let scorer = ws.scorer()?;
        let phrases = shipped_abstention_phrases();
        let gate: Option<Detector> = if ws.config.gate_detector {
            Some(ws.load(DETECTOR, ArtifactKind::Detector)?)
        } else {
            None
        };
        let mut out = Vec::new();
        for (set, scores) in ws.scored()? {
            let features = [scores.su_norm, scores.vu];
            let g = gate.as_ref().map(|d| Gate {
                detector: d,
                features: &features,
            });
            let low = ws.config.low_params(set.most_likely.seed);
            let m = muc_pipeline(&weights, &set, &sc, &scores, ws.config.max_alpha, g, &low)?;
            let vu = scorer.score(&set.question, &m.sample.text)?;
            out.push(CalibratedRecord {
                question_id: set.question_id.clone(),
                alpha: m.alpha,
                abstained: detect_abstention(&m.sample.text, &phrases),
                text: m.sample.text,
                vu,
            });
        }
        ws.save_lines(CALIBRATED, ArtifactKind::Calibration, &out)?;
        Ok(out)
    };
    run().map_err(|e: Error| e.in_stage("calibrate"))
}

/// Before and after reports; thresholds are selected on the before data.
pub fn stage_report(ws: &Workspace) -> Result<(MetricsReport, MetricsReport)> {
    let run = || {
        let scored = ws.scored()?;
        let data = ws.dataset()?;
        let calibrated = ws.calibrated()?;
        if data.len() != scored.len() || calibrated.len() != scored.len() {
            return Err(Error::Data(
                "dataset, generations and calibrated records differ in length".into(),
            ));
        }
        let oracle = ContainmentCorrectness;
        let mut before = Vec::new();
        let mut after = Vec::new();
        for (((set, sc), rec), cal) in scored.iter().zip(&data).zip(&calibrated) {
            if set.question_id != rec.id || cal.question_id != rec.id {
                return Err(Error::Data(format!("record order mismatch at {}", rec.id)));
            }
            before.push(MetricRecord {
                category: categorize(set, &rec.gold, &oracle)?,
                su_norm: sc.su_norm,
                vu: sc.vu_most_likely,
            });
            let mut steered = set.clone();
            steered.most_likely.text = cal.text.clone();
            steered.most_likely.abstained = Some(cal.abstained);
            after.push(MetricRecord {
                category: categorize(&steered, &rec.gold, &oracle)?,
                su_norm: sc.su_norm,
                vu: cal.vu,
            });
        }
        let su: Vec<f64> = before.iter().map(|r| r.su_norm).collect();
        let vu: Vec<f64> = before.iter().map(|r| r.vu).collect();
        let tau_su = select_threshold(&su)?.value;
        let tau_vu = select_threshold(&vu)?.value;
        let b = mitigation_report(&before, tau_su, tau_vu)?;
        let a = mitigation_report(&after, tau_su, tau_vu)?;
        ws.save(REPORT_BEFORE, ArtifactKind::Report, &b)?;
        ws.save(REPORT_AFTER, ArtifactKind::Report, &a)?;
        ws.save_text(REPORT_CSV, &report_csv(&b, &a))?;
        Ok((b, a))
    };
    run().map_err(|e: Error| e.in_stage("report"))
}

/// Constant-α sweep over the first `sweep_questions` records.
pub fn stage_sweep(ws: &Workspace) -> Result<SweepResult> {
    let run = || {
        let weights = ws.model()?;
        let dir = ws.features()?;
        let data = ws.dataset()?;
        let n = ws.config.sweep_questions.min(data.len()).max(1);
        let qs: Vec<SweepQuestion> = data
            .iter()
            .zip(ws.record_seeds(data.len()))
            .take(n)
            .map(|(r, (hi, _))| SweepQuestion {
                id: r.id.clone(),
                question: r.question.clone(),
                seed: hi,
            })
            .collect();
        let mut sc = steering_config(ws, &dir, weights.config.n_layers);
        sc.mode = SteeringMode::Constant { alpha: 0.0 };
        let scorer = ws.scorer()?;
        let r = sweep_alpha(
            &weights,
            &qs,
            &sc,
            &ws.config.sweep_alphas,
            scorer.as_ref(),
            ws.config.n_samples,
            &ws.config.high_params(0),
        )?;
        ws.save_text(SWEEP, &r.to_csv())?;
        Ok(r)
    };
    run().map_err(|e: Error| e.in_stage("sweep"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub before: MetricsReport,
    pub after: MetricsReport,
    pub detection: DetectionSummary,
    pub sweep: SweepResult,
    pub manifest: Manifest,
}

/// Every stage in order. A failing stage aborts with its name; artifacts of
/// earlier stages stay on disk.
pub fn run_pipeline(config: ExperimentConfig) -> Result<PipelineOutput> {
    let ws = Workspace::new(config)?;
    std::fs::create_dir_all(&ws.config.output_dir)
        .map_err(|e| Error::io(&ws.config.output_dir, e))?;
    // a fresh manifest per run
    Manifest {
        config_hash: ws.hash.clone(),
        ..Manifest::default()
    }
    .save(&ws.config.output_dir)?;
    stage_sample(&ws)?;
    stage_score(&ws)?;
    stage_extract(&ws)?;
    stage_train_probes(&ws)?;
    stage_train_detector(&ws)?;
    let detection = stage_detect(&ws)?;
    stage_calibrate(&ws)?;
    let (before, after) = stage_report(&ws)?;
    let sweep = stage_sweep(&ws)?;
    Ok(PipelineOutput {
        before,
        after,
        detection,
        sweep,
        manifest: Manifest::load(&ws.config.output_dir)?,
    })
}
