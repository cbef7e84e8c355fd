//! Synthetic worlds with a tunable leak of contemporaneous outcomes into the
//! goal-aware score before the knowledge cutoff.
//!
//! For firm `i` and outcome period `t`, with `s` the signal observed at
//! `t - 1`:
//!
//! ```text
//! r     = beta * s + eta
//! blind = scale * (s + e_b)
//! aware = scale * (s + lambda * z(r) * 1[t < cutoff] + e_a)
//! ```
//!
//! where `z` standardizes `r` across firms within the period. Draws come from
//! ChaCha8 in a fixed order, so equal seeds give identical worlds on every
//! platform.

use crate::corpus::{Corpus, CorpusError, CorpusPaths, ReturnRecord, TranscriptRecord};
use crate::diag::Diagnostic;
use crate::period::Period;
use crate::prompting::Regime;
use crate::scoring::{CompletionProvider, ProviderError, ScoreKey, ScoreRequest};
use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_firms: usize,
    pub n_periods: usize,
    /// Index of the first post-cutoff period.
    pub cutoff_period: usize,
    pub beta: f64,
    pub lambda: f64,
    pub noise_sd_outcome: f64,
    pub noise_sd_blind: f64,
    pub noise_sd_aware: f64,
    /// Multiplier on both scores, keeping them inside [-1, 1] before clipping.
    pub score_scale: f64,
    pub seed: u64,
    /// Calendar month of period index 0.
    pub start_period: Period,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_firms: 200,
            n_periods: 36,
            cutoff_period: 24,
            beta: 0.3,
            lambda: 0.5,
            noise_sd_outcome: 1.0,
            noise_sd_blind: 0.02,
            noise_sd_aware: 0.02,
            score_scale: 0.25,
            seed: 0,
            start_period: Period::month(2021, 10),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("invalid synthetic config: {0}")]
    Invalid(String),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Invalid(m.to_string()));
        if self.n_firms == 0 {
            return bad("n_firms must be positive");
        }
        if self.cutoff_period < 1 || self.cutoff_period >= self.n_periods {
            return bad("cutoff_period must satisfy 1 <= cutoff_period < n_periods");
        }
        if !(self.noise_sd_outcome > 0.0 && self.noise_sd_blind > 0.0 && self.noise_sd_aware > 0.0) {
            return bad("noise standard deviations must be positive");
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 || !self.beta.is_finite() {
            return bad("lambda must be finite and non-negative; beta finite");
        }
        if !(self.score_scale > 0.0 && self.score_scale.is_finite()) {
            return bad("score_scale must be positive");
        }
        if !matches!(self.start_period, Period::Month { .. }) {
            return bad("start_period must be a month");
        }
        Ok(())
    }

    /// First day of the first post-cutoff period.
    pub fn cutoff_date(&self) -> NaiveDate {
        self.start_period.offset(self.cutoff_period as i64).start_date()
    }
}

/// Values are stored firm-major: index `i * n_periods + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimWorld {
    pub config: SimConfig,
    pub firms: Vec<String>,
    pub periods: Vec<Period>,
    pub signal: Vec<f64>,
    pub outcome: Vec<f64>,
    pub blind: Vec<f64>,
    pub aware: Vec<f64>,
}

pub fn generate_world(config: &SimConfig) -> Result<SimWorld, SimError> {
    config.validate()?;
    let (n, t_max) = (config.n_firms, config.n_periods);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let size = n * t_max;
    let (mut signal, mut outcome) = (vec![0.0; size], vec![0.0; size]);
    let (mut e_b, mut e_a) = (vec![0.0; size], vec![0.0; size]);
    for t in 0..t_max {
        for i in 0..n {
            let k = i * t_max + t;
            signal[k] = draw();
            outcome[k] = config.beta * signal[k] + config.noise_sd_outcome * draw();
            e_b[k] = config.noise_sd_blind * draw();
            e_a[k] = config.noise_sd_aware * draw();
        }
    }
    let mut blind = vec![0.0; size];
    let mut aware = vec![0.0; size];
    for t in 0..t_max {
        let r: Vec<f64> = (0..n).map(|i| outcome[i * t_max + t]).collect();
        let m = r.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt()
        } else {
            0.0
        };
        let leaking = t < config.cutoff_period;
        for i in 0..n {
            let k = i * t_max + t;
            let z = if sd > 0.0 { (r[i] - m) / sd } else { 0.0 };
            let leak = if leaking { config.lambda * z } else { 0.0 };
            blind[k] = config.score_scale * (signal[k] + e_b[k]);
            aware[k] = config.score_scale * (signal[k] + leak + e_a[k]);
        }
    }
    let width = n.to_string().len().max(3);
    Ok(SimWorld {
        config: config.clone(),
        firms: (0..n).map(|i| format!("F{:0width$}", i + 1)).collect(),
        periods: (0..t_max).map(|t| config.start_period.offset(t as i64)).collect(),
        signal,
        outcome,
        blind,
        aware,
    })
}

impl SimWorld {
    fn idx(&self, firm: usize, t: usize) -> usize {
        firm * self.periods.len() + t
    }

    pub fn ticker(&self, firm: usize) -> String {
        format!("SYN{}", &self.firms[firm][1..])
    }

    pub fn cutoff_date(&self) -> NaiveDate {
        self.config.cutoff_date()
    }

    /// Unclipped score for one firm-period-regime.
    pub fn score(&self, firm: usize, t: usize, regime: Regime) -> f64 {
        let k = self.idx(firm, t);
        match regime {
            Regime::GoalBlind => self.blind[k],
            Regime::GoalAware => self.aware[k],
        }
    }

    pub fn score_map(&self) -> HashMap<ScoreKey, f64> {
        let mut m = HashMap::with_capacity(2 * self.blind.len());
        for (i, firm) in self.firms.iter().enumerate() {
            for (t, &period) in self.periods.iter().enumerate() {
                for regime in Regime::BOTH {
                    m.insert(
                        ScoreKey {
                            firm_id: firm.clone(),
                            period,
                            regime,
                        },
                        self.score(i, t, regime),
                    );
                }
            }
        }
        m
    }

    /// Share of stored scores outside [-1, 1].
    pub fn clip_rate(&self) -> f64 {
        let total = self.blind.len() + self.aware.len();
        let clipped = self.blind.iter().chain(&self.aware).filter(|v| v.abs() > 1.0).count();
        clipped as f64 / total as f64
    }

    /// One transcript per firm on the 15th of the month before each period,
    /// plus the monthly returns.
    pub fn to_corpus(&self) -> Result<Corpus, CorpusError> {
        let mut transcripts = Vec::with_capacity(self.outcome.len());
        let mut returns = Vec::with_capacity(self.outcome.len());
        for (i, firm) in self.firms.iter().enumerate() {
            let ticker = self.ticker(i);
            for (t, &period) in self.periods.iter().enumerate() {
                let prev = period.prev();
                let start = prev.start_date();
                transcripts.push(TranscriptRecord {
                    firm_id: firm.clone(),
                    ticker: ticker.clone(),
                    doc_id: format!("{firm}-{prev}"),
                    event_time: NaiveDate::from_ymd_opt(start.year(), start.month(), 15).expect("valid day"),
                    text: format!("Synthetic earnings call of {ticker} held in {prev}."),
                });
                returns.push(ReturnRecord {
                    firm_id: firm.clone(),
                    period,
                    excess_return: self.outcome[self.idx(i, t)],
                    controls: BTreeMap::new(),
                });
            }
        }
        Corpus::from_records(transcripts, returns, Vec::new())
    }

    /// Writes `transcripts.jsonl` and `returns.csv` in the default schema.
    pub fn write_corpus_files(&self, dir: &Path) -> std::io::Result<CorpusPaths> {
        std::fs::create_dir_all(dir)?;
        let corpus = self.to_corpus().map_err(std::io::Error::other)?;
        let tpath = dir.join("transcripts.jsonl");
        let mut w = BufWriter::new(File::create(&tpath)?);
        for t in &corpus.transcripts {
            let line = serde_json::json!({
                "firm_id": t.firm_id,
                "ticker": t.ticker,
                "doc_id": t.doc_id,
                "event_time": t.event_time.format("%Y-%m-%d").to_string(),
                "text": t.text,
            });
            writeln!(w, "{line}")?;
        }
        w.flush()?;
        let rpath = dir.join("returns.csv");
        let mut csv = csv::Writer::from_path(&rpath)?;
        csv.write_record(["firm_id", "period", "excess_return"])?;
        for r in &corpus.returns {
            csv.write_record([r.firm_id.clone(), r.period.to_string(), format!("{:?}", r.excess_return)])?;
        }
        csv.flush()?;
        Ok(CorpusPaths {
            transcripts: tpath,
            returns: Some(rpath),
            earnings: None,
        })
    }
}


/// Answers score requests from a world's stored scores, clipped to [-1, 1]
/// and formatted as the JSON answer object.
pub struct SyntheticProvider {
    model_name: String,
    scores: HashMap<ScoreKey, f64>,
}

impl SyntheticProvider {
    pub fn new(world: &SimWorld) -> Self {
        Self {
            model_name: format!("synthetic-seed-{}", world.config.seed),
            scores: world.score_map(),
        }
    }

    /// One diagnostic per clipped score, in key order.
    pub fn clip_diagnostics(&self) -> Vec<Diagnostic> {
        let clipped: BTreeMap<&ScoreKey, f64> = self.scores.iter().filter(|(_, v)| v.abs() > 1.0).map(|(k, v)| (k, *v)).collect();
        clipped
            .into_iter()
            .map(|(k, v)| {
                Diagnostic::new(
                    "synthetic_provider",
                    format!("{} {} {}: score {v} clipped to {}", k.firm_id, k.period, k.regime.as_str(), v.clamp(-1.0, 1.0)),
                )
            })
            .collect()
    }
}

impl CompletionProvider for SyntheticProvider {
    fn model_name(&self) -> &str {
        &self.model_name
    }

    fn complete(&self, request: &ScoreRequest) -> Result<String, ProviderError> {
        let v = self
            .scores
            .get(&request.key)
            .ok_or_else(|| ProviderError::UnknownKey(request.key.clone()))?;
        Ok(serde_json::json!({ "answer": v.clamp(-1.0, 1.0) }).to_string())
    }
}
