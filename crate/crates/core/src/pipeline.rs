//! End-to-end audit orchestration: ingest, prompt, score, transform, the four
//! analyses and the report, with intermediates persisted for replay.

use crate::config::{AuditConfig, ProviderKind, ScoreScale};
use crate::corpus::{build_panel, load_corpus, Corpus, ObservationPanel, PanelRow};
use crate::diag::Diagnostic;
use crate::forecast::{
    build_stacked_panel, expanding_forecast, mean_r2_by_period, stacked_panel_fe, ForecastInput, ForecastOptions,
    ForecastRun,
};
use crate::period::Period;
use crate::portfolio::{cumulative_curve, long_short_returns, sort_all_periods, spread_tests};
use crate::prompting::{sha256_hex, template_file_name, Regime, TaskKind, TemplateSet};
use crate::regression::{fama_macbeth, FixedEffects, FmbOptions};
use crate::report::{
    emit_plotdata, emit_tables, FmbColumn, LeakageVerdict, OosReport, PanelColumn, Provenance, RegimeCurve,
    SortsReport, TableFormat, TableKind, TOOL_VERSION,
};
use crate::report::AuditReport;
use crate::scoring::{
    batch_score, BatchError, CompletionProvider, HttpProvider, RetryPolicy, ScoreCache, ScoreKey, ScoreOutcome,
    ScorePanel, ScoreRequest, ScoreStats, Scorer,
};
use crate::synthetic::{generate_world, SimWorld, SyntheticProvider};
use crate::transforms::{build_score_pairs, market_proxy, rolling_betas, RawScore, ScorePair};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

pub const PANEL_FILE: &str = "panel.json";
pub const SCORES_FILE: &str = "scores.json";
pub const SCORE_PAIRS_FILE: &str = "score_pairs.csv";
pub const REPORT_FILE: &str = "report.json";

/// Name of the rolling-beta control column.
pub const BETA_CONTROL: &str = "beta";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Prompt,
    Score,
    Transform,
    Sorts,
    Fmb,
    Forecast,
    Panel,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Prompt => "prompt",
            Stage::Score => "score",
            Stage::Transform => "transform",
            Stage::Sorts => "sorts",
            Stage::Fmb => "fmb",
            Stage::Forecast => "forecast",
            Stage::Panel => "panel",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A stage failure. `replay_token` names the stage and the configuration it
/// ran under, so a rerun can be matched to the failed one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditError {
    pub stage: Stage,
    pub message: String,
    pub replay_token: String,
}

impl AuditError {
    fn new(stage: Stage, cfg: &AuditConfig, message: impl Into<String>) -> Self {
        Self {
            stage,
            message: message.into(),
            replay_token: format!("{}-{}", stage.as_str(), &cfg.digest()[..12]),
        }
    }
}

impl fmt::Display for AuditError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {} [replay token {}]", self.stage, self.message, self.replay_token)
    }
}

impl std::error::Error for AuditError {}

/// Output of the ingest stage.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub corpus: Corpus,
    pub panel: ObservationPanel,
    /// Keyed by input role.
    pub input_digests: BTreeMap<String, String>,
    /// Present when the provider is synthetic.
    pub world: Option<SimWorld>,
}

/// Output of the prompt and score stages.
#[derive(Debug, Clone)]
pub struct Scored {
    pub scores: ScorePanel,
    pub stats: ScoreStats,
    pub template_digests: BTreeMap<String, String>,
    pub diagnostics: Vec<Diagnostic>,
}

/// The cutoff the analyses use. A synthetic world carries its own.
pub fn effective_cutoff(cfg: &AuditConfig) -> chrono::NaiveDate {
    match cfg.provider.kind {
        ProviderKind::Synthetic => cfg.synthetic.cutoff_date(),
        _ => cfg.cutoff_date,
    }
}

fn file_digest(path: &Path) -> Result<String, std::io::Error> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub fn ingest(cfg: &AuditConfig) -> Result<Ingested, AuditError> {
    cfg.validate().map_err(|e| AuditError::new(Stage::Config, cfg, e.to_string()))?;
    let cutoff = effective_cutoff(cfg);
    let mut input_digests = BTreeMap::new();
    let mut extra = Vec::new();
    let (corpus, world) = match cfg.provider.kind {
        ProviderKind::Synthetic => {
            let world = generate_world(&cfg.synthetic).map_err(|e| AuditError::new(Stage::Config, cfg, e.to_string()))?;
            let corpus = world.to_corpus().map_err(|e| AuditError::new(Stage::Ingest, cfg, e.to_string()))?;
            let canon = serde_json::to_string(&cfg.synthetic).expect("sim config serializes");
            input_digests.insert("synthetic".to_string(), sha256_hex(canon.as_bytes()));
            if cutoff != cfg.cutoff_date {
                extra.push(Diagnostic::new(
                    "pipeline",
                    format!("synthetic world cutoff {cutoff} overrides configured cutoff_date {}", cfg.cutoff_date),
                ));
            }
            (corpus, Some(world))
        }
        ProviderKind::Live | ProviderKind::CacheOnly => {
            let paths = cfg.corpus_paths().map_err(|e| AuditError::new(Stage::Config, cfg, e.to_string()))?;
            let corpus = load_corpus(&paths, &cfg.data.schema).map_err(|e| AuditError::new(Stage::Ingest, cfg, e.to_string()))?;
            let roles = [
                ("transcripts", Some(&paths.transcripts)),
                ("returns", paths.returns.as_ref()),
                ("earnings", paths.earnings.as_ref()),
            ];
            for (role, path) in roles {
                if let Some(p) = path {
                    let d = file_digest(p).map_err(|e| AuditError::new(Stage::Ingest, cfg, format!("{}: {e}", p.display())))?;
                    input_digests.insert(role.to_string(), d);
                }
            }
            (corpus, None)
        }
    };
    let mut panel = build_panel(&corpus, cfg.task, cutoff).map_err(|e| AuditError::new(Stage::Ingest, cfg, e.to_string()))?;
    panel.diagnostics.splice(0..0, corpus.diagnostics.iter().cloned());
    panel.diagnostics.extend(extra);
    if panel.rows.is_empty() {
        return Err(AuditError::new(Stage::Ingest, cfg, "no firm-period has both a prior transcript and an outcome"));
    }
    if cfg.analysis.rolling_beta {
        let market = match &cfg.data.market_column {
            Some(col) => {
                let mut m = BTreeMap::new();
                for r in &corpus.returns {
                    if let Some(v) = r.controls.get(col) {
                        m.entry(r.period).or_insert(*v);
                    }
                }
                if m.is_empty() {
                    return Err(AuditError::new(
                        Stage::Config,
                        cfg,
                        format!("market column `{col}` not found in the returns file (list it under data.schema)"),
                    ));
                }
                m
            }
            None => market_proxy(&corpus.returns),
        };
        let betas = rolling_betas(&corpus.returns, &market, cfg.analysis.beta_window, cfg.analysis.beta_min_obs);
        panel.add_control(BETA_CONTROL, &betas);
    }
    for c in cfg.referenced_controls() {
        if !panel.rows.iter().any(|r| r.controls.contains_key(&c)) {
            return Err(AuditError::new(
                Stage::Config,
                cfg,
                format!("control `{c}` is not present in any input row"),
            ));
        }
    }
    panel.check_invariants().map_err(|e| AuditError::new(Stage::Ingest, cfg, e))?;
    Ok(Ingested {
        corpus,
        panel,
        input_digests,
        world,
    })
}

fn templates(cfg: &AuditConfig) -> Result<TemplateSet, AuditError> {
    match &cfg.analysis.templates_dir {
        Some(dir) => TemplateSet::from_dir(dir).map_err(|e| AuditError::new(Stage::Prompt, cfg, e.to_string())),
        None => Ok(TemplateSet::default()),
    }
}

fn template_digests(cfg: &AuditConfig, set: &TemplateSet) -> BTreeMap<String, String> {
    Regime::BOTH
        .iter()
        .map(|&r| (template_file_name(cfg.task, r), set.digest(cfg.task, r)))
        .collect()
}

/// Renders both prompts for every panel row. Rows whose transcript cannot be
/// rendered are skipped with a diagnostic.
pub fn render_requests(
    cfg: &AuditConfig,
    ingested: &Ingested,
) -> Result<(Vec<ScoreRequest>, BTreeMap<String, String>, Vec<Diagnostic>), AuditError> {
    let set = templates(cfg)?;
    let mut requests = Vec::with_capacity(2 * ingested.panel.rows.len());
    let mut diagnostics = Vec::new();
    for row in &ingested.panel.rows {
        let Some(t) = ingested.corpus.transcript_by_firm(&row.firm_id, &row.transcript_ref) else {
            diagnostics.push(Diagnostic::new(
                "prompt",
                format!("{} {}: transcript {} not found; row unscored", row.firm_id, row.period, row.transcript_ref),
            ));
            continue;
        };
        for regime in Regime::BOTH {
            match set.render(cfg.task, regime, &row.ticker, row.period.end_date(), &t.text) {
                Ok(prompt) => requests.push(ScoreRequest {
                    key: ScoreKey {
                        firm_id: row.firm_id.clone(),
                        period: row.period,
                        regime,
                    },
                    prompt,
                }),
                Err(e) => diagnostics.push(Diagnostic::new(
                    "prompt",
                    format!("{} {} {}: {e}; prompt skipped", row.firm_id, row.period, regime.as_str()),
                )),
            }
        }
    }
    if requests.is_empty() {
        return Err(AuditError::new(Stage::Prompt, cfg, "no prompt could be rendered"));
    }
    Ok((requests, template_digests(cfg, &set), diagnostics))
}

pub fn score(cfg: &AuditConfig, ingested: &Ingested) -> Result<Scored, AuditError> {
    let (requests, template_digests, mut diagnostics) = render_requests(cfg, ingested)?;
    let http = &cfg.provider.http;
    let retry = RetryPolicy {
        max_retries: http.max_retries,
        backoff_base: Duration::from_millis(http.backoff_base_ms),
    };
    let fail = |e: BatchError| AuditError::new(Stage::Score, cfg, e.to_string());
    let open_cache = || -> Result<ScoreCache, AuditError> {
        let path = cfg.provider.cache_path.as_deref().expect("validated");
        ScoreCache::open(path).map_err(|e| AuditError::new(Stage::Score, cfg, e.to_string()))
    };
    let (scores, stats) = match cfg.provider.kind {
        ProviderKind::Synthetic => {
            let world = ingested.world.as_ref().ok_or_else(|| {
                AuditError::new(Stage::Score, cfg, "synthetic provider needs the synthetic world from ingest")
            })?;
            let provider = SyntheticProvider::new(world);
            diagnostics.extend(provider.clip_diagnostics());
            let scorer = Scorer::new(&provider).with_retry(retry);
            (batch_score(&scorer, &requests, http.max_parallel).map_err(fail)?, scorer.stats())
        }
        ProviderKind::Live => {
            let cache = open_cache()?;
            let provider = HttpProvider::new(http.clone()).map_err(|e| AuditError::new(Stage::Score, cfg, e.to_string()))?;
            let dynp: &dyn CompletionProvider = &provider;
            let scorer = Scorer::new(dynp).with_cache(&cache).with_retry(retry);
            (batch_score(&scorer, &requests, http.max_parallel).map_err(fail)?, scorer.stats())
        }
        ProviderKind::CacheOnly => {
            let cache = open_cache()?;
            let scorer = Scorer::cache_only(&cache, &http.model_name);
            let panel = batch_score(&scorer, &requests, http.max_parallel).map_err(|e| match e {
                BatchError::AllFailed { count, .. } => AuditError::new(
                    Stage::Score,
                    cfg,
                    format!(
                        "cache-only provider found none of the {count} prompts in {} for model `{}`; \
                         run once with `--provider live` to populate the cache",
                        cfg.provider.cache_path.as_deref().map(Path::display).expect("validated"),
                        http.model_name
                    ),
                ),
                other => fail(other),
            })?;
            (panel, scorer.stats())
        }
    };
    let missing = scores.missing();
    if missing > 0 {
        diagnostics.push(Diagnostic::new("score", format!("{missing} of {} prompts left unscored", scores.entries.len())));
    }
    Ok(Scored {
        scores,
        stats,
        template_digests,
        diagnostics,
    })
}

/// Joins scores back to panel rows and splits them by regime.
pub fn raw_scores(cfg: &AuditConfig, panel: &ObservationPanel, scores: &ScorePanel) -> (Vec<RawScore>, Vec<RawScore>, Vec<Diagnostic>) {
    let kind = cfg.cohort_kind();
    let rows: HashMap<(&str, Period), &PanelRow> = panel.rows.iter().map(|r| ((r.firm_id.as_str(), r.period), r)).collect();
    let (mut blind, mut aware, mut diags) = (Vec::new(), Vec::new(), Vec::new());
    for e in &scores.entries {
        let Some(row) = rows.get(&(e.key.firm_id.as_str(), e.key.period)) else {
            diags.push(Diagnostic::new("transform", format!("{} {}: score has no panel row", e.key.firm_id, e.key.period)));
            continue;
        };
        let Some(cohort) = kind.key_for(row) else {
            diags.push(Diagnostic::new("transform", format!("{} {}: no cohort (missing SIC code)", row.firm_id, row.period)));
            continue;
        };
        let raw = RawScore {
            firm_id: row.firm_id.clone(),
            period: row.period,
            cohort,
            value: match &e.outcome {
                ScoreOutcome::Scored { value } => Some(value.get()),
                ScoreOutcome::Missing { .. } => None,
            },
        };
        match e.key.regime {
            Regime::GoalBlind => blind.push(raw),
            Regime::GoalAware => aware.push(raw),
        }
    }
    (blind, aware, diags)
}

fn pick(scale: ScoreScale, pair: &ScorePair, regime: Regime) -> f64 {
    match (scale, regime) {
        (ScoreScale::Raw, Regime::GoalBlind) => pair.blind_raw,
        (ScoreScale::Raw, Regime::GoalAware) => pair.aware_raw,
        (ScoreScale::Percentile, Regime::GoalBlind) => pair.blind_pct,
        (ScoreScale::Percentile, Regime::GoalAware) => pair.aware_pct,
    }
}

fn run_sorts(
    cfg: &AuditConfig,
    panel: &ObservationPanel,
    pairs: &[ScorePair],
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<SortsReport, AuditError> {
    let err = |m: String| AuditError::new(Stage::Sorts, cfg, m);
    let returns: HashMap<(String, Period), f64> = panel.rows.iter().map(|r| ((r.firm_id.clone(), r.period), r.outcome)).collect();
    let mut series = Vec::new();
    let mut curves = Vec::new();
    for regime in [Regime::GoalAware, Regime::GoalBlind] {
        let mut by_period: BTreeMap<Period, Vec<(String, f64)>> = BTreeMap::new();
        for p in pairs {
            by_period.entry(p.period).or_default().push((p.firm_id.clone(), pick(cfg.analysis.sort_on, p, regime)));
        }
        let (assignments, d) = sort_all_periods(regime, &by_period);
        diagnostics.extend(d);
        let s = long_short_returns(regime, &assignments, &returns);
        diagnostics.extend(s.diagnostics.iter().cloned());
        let points = cumulative_curve(&s, panel.cutoff_date).map_err(|e| err(format!("{regime}: {e}")))?;
        curves.push(RegimeCurve { regime, points });
        series.push(s);
    }
    let tests = spread_tests(&series[0], &series[1], panel.cutoff_date).map_err(|e| err(e.to_string()))?;
    Ok(SortsReport { tests, curves })
}

fn forecast_inputs(cfg: &AuditConfig, panel: &ObservationPanel, pairs: &[ScorePair], regime: Regime) -> Vec<ForecastInput> {
    let targets: HashMap<(&str, Period), Option<f64>> =
        panel.rows.iter().map(|r| ((r.firm_id.as_str(), r.period), r.oos_target)).collect();
    pairs
        .iter()
        .filter_map(|p| {
            let target = (*targets.get(&(p.firm_id.as_str(), p.period))?)?;
            Some(ForecastInput {
                firm_id: p.firm_id.clone(),
                period: p.period,
                score: pick(cfg.analysis.forecast_on, p, regime),
                target,
            })
        })
        .collect()
}

fn run_forecasts(cfg: &AuditConfig, panel: &ObservationPanel, pairs: &[ScorePair]) -> Result<(ForecastRun, ForecastRun), AuditError> {
    let opts = ForecastOptions {
        min_train_periods: cfg.min_train_periods(),
        form: cfg.analysis.r2_form,
        r2_floor: cfg.analysis.r2_floor,
    };
    let run = |regime| {
        expanding_forecast(&forecast_inputs(cfg, panel, pairs, regime), regime, opts)
            .map_err(|e| AuditError::new(Stage::Forecast, cfg, format!("{regime}: {e}")))
    };
    Ok((run(Regime::GoalAware)?, run(Regime::GoalBlind)?))
}

/// Runs every enabled analysis on a scored panel and assembles the report.
pub fn analyze(
    cfg: &AuditConfig,
    panel: &ObservationPanel,
    scored: &Scored,
    input_digests: BTreeMap<String, String>,
) -> Result<AuditReport, AuditError> {
    let mut diagnostics = panel.diagnostics.clone();
    diagnostics.extend(scored.diagnostics.iter().cloned());
    let (blind, aware, d) = raw_scores(cfg, panel, &scored.scores);
    diagnostics.extend(d);
    let (pairs, d) = build_score_pairs(&blind, &aware, cfg.analysis.exclude_singletons)
        .map_err(|e| AuditError::new(Stage::Transform, cfg, e.to_string()))?;
    diagnostics.extend(d);
    let cutoff = panel.cutoff_date;

    let sorts = match (cfg.analysis.sorts, cfg.task) {
        (false, _) => None,
        (true, TaskKind::SentimentReturn) => Some(run_sorts(cfg, panel, &pairs, &mut diagnostics)?),
        (true, TaskKind::CompetitionEarnings) => {
            diagnostics.push(Diagnostic::new("pipeline", "portfolio sorts apply to the return task only; skipped"));
            None
        }
    };

    let fmb = if cfg.analysis.fmb {
        let opts = FmbOptions {
            newey_west_lags: cfg.analysis.fmb_newey_west_lags,
        };
        let mut cols = Vec::new();
        for controls in &cfg.control_sets {
            let result = fama_macbeth(panel, &pairs, controls, opts)
                .map_err(|e| AuditError::new(Stage::Fmb, cfg, format!("controls {controls:?}: {e}")))?;
            diagnostics.extend(result.diagnostics.iter().cloned());
            cols.push(FmbColumn {
                controls: controls.clone(),
                result,
            });
        }
        Some(cols)
    } else {
        None
    };

    let forecasts = if cfg.analysis.oos || cfg.analysis.panel {
        Some(run_forecasts(cfg, panel, &pairs)?)
    } else {
        None
    };
    let mut oos = None;
    let mut panel_cols = None;
    if let Some((aware_run, blind_run)) = &forecasts {
        diagnostics.extend(aware_run.diagnostics.iter().cloned());
        diagnostics.extend(blind_run.diagnostics.iter().cloned());
        let mut stacked = build_stacked_panel(&aware_run.records, &blind_run.records, cutoff)
            .map_err(|e| AuditError::new(Stage::Forecast, cfg, e.to_string()))?;
        diagnostics.extend(stacked.diagnostics.iter().cloned());
        if cfg.analysis.oos {
            let mut series = mean_r2_by_period(aware_run);
            series.extend(mean_r2_by_period(blind_run));
            series.sort_by(|a, b| a.period.cmp(&b.period).then(a.regime.cmp(&b.regime)));
            oos = Some(OosReport {
                series,
                n_forecasts_aware: aware_run.records.len(),
                n_forecasts_blind: blind_run.records.len(),
                stacked_rows: stacked.rows.len(),
                unmatched: stacked.unmatched,
            });
        }
        if cfg.analysis.panel {
            stacked.attach_controls(panel, &cfg.panel_controls);
            let mut cols = Vec::new();
            for fe in [FixedEffects::TIME, FixedEffects::FIRM_TIME] {
                let result = stacked_panel_fe(&stacked, &cfg.panel_controls, fe, cfg.analysis.cluster)
                    .map_err(|e| AuditError::new(Stage::Panel, cfg, e.to_string()))?;
                diagnostics.extend(result.diagnostics.iter().cloned());
                cols.push(PanelColumn {
                    fixed_effects: fe,
                    controls: cfg.panel_controls.clone(),
                    result,
                });
            }
            panel_cols = Some(cols);
        }
    }

    let leakage = LeakageVerdict::assess(
        fmb.as_ref().and_then(|c| c.first()).map(|c| &c.result),
        panel_cols.as_ref().and_then(|c| c.last()).map(|c| &c.result),
    );
    Ok(AuditReport {
        task: cfg.task,
        cutoff_date: cutoff,
        provenance: Provenance {
            tool_version: TOOL_VERSION.to_string(),
            config_digest: cfg.digest(),
            template_digests: scored.template_digests.clone(),
            input_digests,
            model_name: scored.scores.model_name.clone(),
            cache: scored.stats,
        },
        panel_rows: panel.rows.len(),
        score_pairs: pairs.len(),
        missing_scores: scored.scores.missing(),
        sorts,
        fmb,
        oos,
        panel: panel_cols,
        leakage,
        diagnostics,
    })
}

/// Ingest, score and analyze without touching the filesystem beyond reading
/// inputs and the score cache.
pub fn audit_in_memory(cfg: &AuditConfig) -> Result<AuditReport, AuditError> {
    let ingested = ingest(cfg)?;
    let scored = score(cfg, &ingested)?;
    analyze(cfg, &ingested.panel, &scored, ingested.input_digests.clone())
}

fn write_json<T: Serialize>(cfg: &AuditConfig, stage: Stage, path: &Path, value: &T) -> Result<(), AuditError> {
    let mut text = serde_json::to_string_pretty(value).expect("intermediate serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| AuditError::new(stage, cfg, format!("writing {}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(cfg: &AuditConfig, stage: Stage, path: &Path) -> Result<T, AuditError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AuditError::new(stage, cfg, format!("reading {}: {e}; run the earlier stage first", path.display())))?;
    serde_json::from_str(&text).map_err(|e| AuditError::new(stage, cfg, format!("parsing {}: {e}", path.display())))
}

fn out_dir(cfg: &AuditConfig, stage: Stage) -> Result<&Path, AuditError> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| AuditError::new(stage, cfg, format!("creating {}: {e}", cfg.out_dir.display())))?;
    Ok(&cfg.out_dir)
}

/// The persisted score stage: scores plus what the report needs from the
/// stages before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistedScores {
    pub scores: ScorePanel,
    pub stats: ScoreStats,
    pub template_digests: BTreeMap<String, String>,
    pub input_digests: BTreeMap<String, String>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Runs ingest and writes `panel.json`.
pub fn run_ingest(cfg: &AuditConfig) -> Result<(Ingested, PathBuf), AuditError> {
    let ingested = ingest(cfg)?;
    let path = out_dir(cfg, Stage::Ingest)?.join(PANEL_FILE);
    write_json(cfg, Stage::Ingest, &path, &ingested.panel)?;
    Ok((ingested, path))
}

/// Runs ingest and scoring and writes `panel.json` and `scores.json`.
pub fn run_score(cfg: &AuditConfig) -> Result<(Ingested, Scored, PathBuf), AuditError> {
    let (ingested, _) = run_ingest(cfg)?;
    let scored = score(cfg, &ingested)?;
    let path = out_dir(cfg, Stage::Score)?.join(SCORES_FILE);
    let persisted = PersistedScores {
        scores: scored.scores.clone(),
        stats: scored.stats,
        template_digests: scored.template_digests.clone(),
        input_digests: ingested.input_digests.clone(),
        diagnostics: scored.diagnostics.clone(),
    };
    write_json(cfg, Stage::Score, &path, &persisted)?;
    Ok((ingested, scored, path))
}

fn write_score_pairs(cfg: &AuditConfig, panel: &ObservationPanel, scored: &Scored) -> Result<(), AuditError> {
    let (blind, aware, _) = raw_scores(cfg, panel, &scored.scores);
    let Ok((pairs, _)) = build_score_pairs(&blind, &aware, cfg.analysis.exclude_singletons) else {
        return Ok(());
    };
    let path = cfg.out_dir.join(SCORE_PAIRS_FILE);
    let io = |e: csv::Error| AuditError::new(Stage::Report, cfg, format!("writing {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(io)?;
    w.write_record([
        "firm_id", "period", "cohort", "blind_raw", "aware_raw", "blind_pct", "aware_pct", "diff", "singleton_cohort",
    ])
    .map_err(io)?;
    for p in &pairs {
        w.write_record([
            p.firm_id.clone(),
            p.period.to_string(),
            p.cohort.to_string(),
            p.blind_raw.to_string(),
            p.aware_raw.to_string(),
            p.blind_pct.to_string(),
            p.aware_pct.to_string(),
            p.diff.to_string(),
            p.singleton_cohort.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| AuditError::new(Stage::Report, cfg, format!("writing {}: {e}", path.display())))
}

/// Writes `report.json`, every table whose analysis ran and the plot data.
pub fn write_report(cfg: &AuditConfig, report: &AuditReport) -> Result<Vec<PathBuf>, AuditError> {
    let dir = out_dir(cfg, Stage::Report)?;
    let path = dir.join(REPORT_FILE);
    std::fs::write(&path, report.to_json())
        .map_err(|e| AuditError::new(Stage::Report, cfg, format!("writing {}: {e}", path.display())))?;
    let mut written = vec![path];
    let kinds: Vec<TableKind> = TableKind::ALL
        .into_iter()
        .filter(|k| match k {
            TableKind::Spreads => report.sorts.is_some(),
            TableKind::Fmb => report.fmb.is_some(),
            TableKind::OosPanel => report.panel.is_some(),
        })
        .collect();
    let report_err = |e: crate::report::ReportError| AuditError::new(Stage::Report, cfg, e.to_string());
    written.extend(emit_tables(report, dir, &kinds, &TableFormat::ALL).map_err(report_err)?);
    written.extend(emit_plotdata(report, dir).map_err(report_err)?);
    Ok(written)
}

/// The full audit with every intermediate persisted under `out_dir`.
pub fn run_audit(cfg: &AuditConfig) -> Result<AuditReport, AuditError> {
    let (ingested, scored, _) = run_score(cfg)?;
    if cfg.dump_scores {
        write_score_pairs(cfg, &ingested.panel, &scored)?;
    }
    let report = analyze(cfg, &ingested.panel, &scored, ingested.input_digests.clone())?;
    write_report(cfg, &report)?;
    Ok(report)
}

/// Reruns the analyses from persisted `panel.json` and `scores.json` without
/// scoring again.
pub fn resume_audit(cfg: &AuditConfig) -> Result<AuditReport, AuditError> {
    cfg.validate().map_err(|e| AuditError::new(Stage::Config, cfg, e.to_string()))?;
    let panel: ObservationPanel = read_json(cfg, Stage::Ingest, &cfg.out_dir.join(PANEL_FILE))?;
    if panel.task != cfg.task {
        return Err(AuditError::new(
            Stage::Ingest,
            cfg,
            format!("persisted panel is for task {} but the config asks for {}", panel.task, cfg.task),
        ));
    }
    let persisted: PersistedScores = read_json(cfg, Stage::Score, &cfg.out_dir.join(SCORES_FILE))?;
    let scored = Scored {
        scores: persisted.scores,
        stats: persisted.stats,
        template_digests: persisted.template_digests,
        diagnostics: persisted.diagnostics,
    };
    if cfg.dump_scores {
        write_score_pairs(cfg, &panel, &scored)?;
    }
    let report = analyze(cfg, &panel, &scored, persisted.input_digests)?;
    write_report(cfg, &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::SimConfig;

    fn small(lambda: f64, seed: u64) -> AuditConfig {
        AuditConfig {
            synthetic: SimConfig {
                n_firms: 40,
                n_periods: 18,
                cutoff_period: 12,
                lambda,
                seed,
                ..SimConfig::default()
            },
            ..AuditConfig::default()
        }
    }

    #[test]
    fn synthetic_audit_runs_all_analyses() {
        let report = audit_in_memory(&small(0.5, 1)).unwrap();
        assert!(report.sorts.is_some() && report.fmb.is_some() && report.oos.is_some() && report.panel.is_some());
        assert_eq!(report.panel_rows, 40 * 18);
        assert_eq!(report.score_pairs, report.panel_rows);
        assert_eq!(report.provenance.cache.provider_calls as usize, 2 * report.panel_rows);
        assert_eq!(report.missing_scores, 0);
    }

    #[test]
    fn toggles_skip_analyses() {
        let mut cfg = small(0.5, 2);
        cfg.analysis.sorts = false;
        cfg.analysis.panel = false;
        let report = audit_in_memory(&cfg).unwrap();
        assert!(report.sorts.is_none() && report.panel.is_none());
        assert!(report.oos.is_some());
        assert_eq!(report.leakage.interaction_negative, None);
    }

    #[test]
    fn unknown_control_is_a_config_error() {
        let mut cfg = small(0.5, 3);
        cfg.control_sets = vec![vec!["size".into()]];
        let err = audit_in_memory(&cfg).unwrap_err();
        assert_eq!(err.stage, Stage::Config);
        assert!(err.replay_token.starts_with("config-"));
    }

    #[test]
    fn rolling_beta_control_feeds_fmb() {
        let mut cfg = small(0.5, 4);
        cfg.analysis.rolling_beta = true;
        cfg.analysis.beta_window = 6;
        cfg.analysis.beta_min_obs = 4;
        cfg.control_sets = vec![vec![], vec![BETA_CONTROL.into()]];
        let report = audit_in_memory(&cfg).unwrap();
        let cols = report.fmb.unwrap();
        assert_eq!(cols.len(), 2);
        assert!(cols[1].result.regressors.iter().any(|r| r == BETA_CONTROL));
    }

    #[test]
    fn cold_cache_aborts_at_score() {
        let dir = tempfile::tempdir().unwrap();
        let world = generate_world(&small(0.5, 5).synthetic).unwrap();
        let paths = world.write_corpus_files(dir.path()).unwrap();
        let mut cfg = small(0.5, 5);
        cfg.provider.kind = ProviderKind::CacheOnly;
        cfg.provider.cache_path = Some(dir.path().join("cache.jsonl"));
        cfg.data.transcripts = Some(paths.transcripts);
        cfg.data.returns = paths.returns;
        cfg.cutoff_date = world.cutoff_date();
        let err = audit_in_memory(&cfg).unwrap_err();
        assert_eq!(err.stage, Stage::Score);
        assert!(err.message.contains("--provider live"), "{}", err.message);
    }

    #[test]
    fn persisted_run_resumes_identically() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(0.5, 6);
        cfg.out_dir = dir.path().to_path_buf();
        cfg.dump_scores = true;
        let first = run_audit(&cfg).unwrap();
        let text = std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
        assert!(dir.path().join(SCORE_PAIRS_FILE).exists());
        let resumed = resume_audit(&cfg).unwrap();
        assert_eq!(first, resumed);
        assert_eq!(text, std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap());
    }
}
