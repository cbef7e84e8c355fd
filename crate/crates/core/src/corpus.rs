//! Input ingestion and firm-period alignment.
//!
//! Returns and earnings are comma-separated files with a header row;
//! transcripts are JSON lines. Any column beyond the required ones in the
//! returns or earnings file is carried through as a named numeric control
//! (blank, `NA` or `.` cells are treated as missing).

use crate::diag::Diagnostic;
use crate::forecast::{yoy_eps_growth, GrowthError};
use crate::period::{Frequency, Period};
use crate::prompting::TaskKind;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub firm_id: String,
    pub ticker: String,
    pub doc_id: String,
    pub event_time: NaiveDate,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnRecord {
    pub firm_id: String,
    pub period: Period,
    pub excess_return: f64,
    #[serde(default)]
    pub controls: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarningsRecord {
    pub firm_id: String,
    pub fiscal_quarter: Period,
    pub eps: f64,
    pub sic4: String,
    #[serde(default)]
    pub controls: BTreeMap<String, f64>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("input file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: required column {column:?} not in header", path.display())]
    MissingColumn { path: PathBuf, column: String },
    #[error("{}:{line}: malformed row: {reason}", path.display())]
    Malformed {
        path: PathBuf,
        line: u64,
        reason: String,
    },
    #[error("{}:{line}: duplicate key {key}", path.display())]
    DuplicateKey {
        path: PathBuf,
        line: u64,
        key: String,
    },
    #[error("unknown firm_id {0:?}: no transcripts on file")]
    UnknownFirm(String),
    #[error("cutoff date {cutoff} lies outside the corpus range {first} .. {last}")]
    CutoffOutOfRange {
        cutoff: NaiveDate,
        first: NaiveDate,
        last: NaiveDate,
    },
    #[error("no firm-period could be aligned with a prior transcript and an outcome")]
    EmptyPanel,
}

/// Column-name remapping for the three input files. Defaults match the
/// documented schemas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct SchemaConfig {
    pub transcripts: TranscriptColumns,
    pub returns: ReturnColumns,
    pub earnings: EarningsColumns,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranscriptColumns {
    pub firm_id: String,
    pub ticker: String,
    pub doc_id: String,
    pub event_time: String,
    pub text: String,
}

impl Default for TranscriptColumns {
    fn default() -> Self {
        Self {
            firm_id: "firm_id".into(),
            ticker: "ticker".into(),
            doc_id: "doc_id".into(),
            event_time: "event_time".into(),
            text: "text".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReturnColumns {
    pub firm_id: String,
    pub period: String,
    pub excess_return: String,
}

impl Default for ReturnColumns {
    fn default() -> Self {
        Self {
            firm_id: "firm_id".into(),
            period: "period".into(),
            excess_return: "excess_return".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EarningsColumns {
    pub firm_id: String,
    pub fiscal_quarter: String,
    pub eps: String,
    pub sic4: String,
}

impl Default for EarningsColumns {
    fn default() -> Self {
        Self {
            firm_id: "firm_id".into(),
            fiscal_quarter: "fiscal_quarter".into(),
            eps: "eps".into(),
            sic4: "sic4".into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CorpusPaths {
    pub transcripts: PathBuf,
    pub returns: Option<PathBuf>,
    pub earnings: Option<PathBuf>,
}

/// All validated input records. Transcripts are indexed per firm in
/// `(event_time, doc_id)` order.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub transcripts: Vec<TranscriptRecord>,
    pub returns: Vec<ReturnRecord>,
    pub earnings: Vec<EarningsRecord>,
    pub diagnostics: Vec<Diagnostic>,
    by_firm: BTreeMap<String, Vec<usize>>,
}

impl Corpus {
    /// Assemble a corpus from in-memory records, enforcing key uniqueness.
    pub fn from_records(
        transcripts: Vec<TranscriptRecord>,
        returns: Vec<ReturnRecord>,
        earnings: Vec<EarningsRecord>,
    ) -> Result<Self, CorpusError> {
        let mem = PathBuf::from("<memory>");
        let mut seen = HashSet::new();
        for (i, t) in transcripts.iter().enumerate() {
            if !seen.insert((t.firm_id.clone(), t.doc_id.clone())) {
                return Err(dup(&mem, i as u64 + 1, format!("({}, {})", t.firm_id, t.doc_id)));
            }
        }
        let mut seen = HashSet::new();
        for (i, r) in returns.iter().enumerate() {
            if !seen.insert((r.firm_id.clone(), r.period)) {
                return Err(dup(&mem, i as u64 + 1, format!("({}, {})", r.firm_id, r.period)));
            }
        }
        let mut seen = HashSet::new();
        for (i, e) in earnings.iter().enumerate() {
            if !seen.insert((e.firm_id.clone(), e.fiscal_quarter)) {
                return Err(dup(
                    &mem,
                    i as u64 + 1,
                    format!("({}, {})", e.firm_id, e.fiscal_quarter),
                ));
            }
        }
        let mut corpus = Corpus {
            transcripts,
            returns,
            earnings,
            diagnostics: Vec::new(),
            by_firm: BTreeMap::new(),
        };
        corpus.reindex();
        Ok(corpus)
    }

    fn reindex(&mut self) {
        let mut by_firm: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, t) in self.transcripts.iter().enumerate() {
            by_firm.entry(t.firm_id.clone()).or_default().push(i);
        }
        for idx in by_firm.values_mut() {
            idx.sort_by(|&a, &b| {
                let (ta, tb) = (&self.transcripts[a], &self.transcripts[b]);
                ta.event_time
                    .cmp(&tb.event_time)
                    .then_with(|| ta.doc_id.cmp(&tb.doc_id))
            });
        }
        self.by_firm = by_firm;
    }

    pub fn transcript(&self, doc_id: &str) -> Option<&TranscriptRecord> {
        self.transcripts.iter().find(|t| t.doc_id == doc_id)
    }

    pub fn transcript_by_firm(&self, firm_id: &str, doc_id: &str) -> Option<&TranscriptRecord> {
        self.by_firm
            .get(firm_id)?
            .iter()
            .map(|&i| &self.transcripts[i])
            .find(|t| t.doc_id == doc_id)
    }
}

fn dup(path: &Path, line: u64, key: String) -> CorpusError {
    CorpusError::DuplicateKey {
        path: path.to_path_buf(),
        line,
        key,
    }
}

fn malformed(path: &Path, line: u64, reason: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn open(path: &Path) -> Result<File, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_corpus(paths: &CorpusPaths, schema: &SchemaConfig) -> Result<Corpus, CorpusError> {
    let mut diagnostics = Vec::new();
    let transcripts = load_transcripts(&paths.transcripts, &schema.transcripts, &mut diagnostics)?;
    let returns = match &paths.returns {
        Some(p) => load_returns(p, &schema.returns, &mut diagnostics)?,
        None => Vec::new(),
    };
    let earnings = match &paths.earnings {
        Some(p) => load_earnings(p, &schema.earnings, &mut diagnostics)?,
        None => Vec::new(),
    };
    let mut corpus = Corpus::from_records(transcripts, returns, earnings)?;
    corpus.diagnostics = diagnostics;
    Ok(corpus)
}

fn json_str<'a>(
    obj: &'a serde_json::Map<String, serde_json::Value>,
    key: &str,
    path: &Path,
    line: u64,
) -> Result<&'a str, CorpusError> {
    match obj.get(key) {
        Some(serde_json::Value::String(s)) => Ok(s),
        Some(other) => Err(malformed(path, line, format!("field {key:?} is not a string: {other}"))),
        None => Err(malformed(path, line, format!("missing field {key:?}"))),
    }
}

pub fn load_transcripts(
    path: &Path,
    cols: &TranscriptColumns,
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<Vec<TranscriptRecord>, CorpusError> {
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i as u64 + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| malformed(path, lineno, format!("invalid JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed(path, lineno, "record is not a JSON object"))?;
        let firm_id = json_str(obj, &cols.firm_id, path, lineno)?.to_string();
        let ticker = json_str(obj, &cols.ticker, path, lineno)?.to_string();
        let doc_id = json_str(obj, &cols.doc_id, path, lineno)?.to_string();
        let raw_time = json_str(obj, &cols.event_time, path, lineno)?;
        let event_time = NaiveDate::parse_from_str(raw_time, "%Y-%m-%d")
            .map_err(|e| malformed(path, lineno, format!("event_time {raw_time:?}: {e}")))?;
        let text = json_str(obj, &cols.text, path, lineno)?.to_string();
        if text.trim().is_empty() {
            diagnostics.push(Diagnostic::new(
                "corpus",
                format!("{}:{lineno}: rejected transcript {doc_id:?}: empty text", path.display()),
            ));
            continue;
        }
        if !seen.insert((firm_id.clone(), doc_id.clone())) {
            return Err(dup(path, lineno, format!("({firm_id}, {doc_id})")));
        }
        out.push(TranscriptRecord {
            firm_id,
            ticker,
            doc_id,
            event_time,
            text,
        });
    }
    Ok(out)
}

/// Header lookup shared by the two delimited loaders. Returns the indices of
/// the required columns and `(index, name)` for every extra column.
fn header_layout(
    path: &Path,
    headers: &csv::StringRecord,
    required: &[&str],
) -> Result<(Vec<usize>, Vec<(usize, String)>), CorpusError> {
    let mut idx = Vec::with_capacity(required.len());
    for &name in required {
        let pos = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CorpusError::MissingColumn {
                path: path.to_path_buf(),
                column: name.to_string(),
            })?;
        idx.push(pos);
    }
    let extras = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| !idx.contains(i))
        .map(|(i, h)| (i, h.trim().to_string()))
        .collect();
    Ok((idx, extras))
}

fn parse_controls(
    path: &Path,
    line: u64,
    rec: &csv::StringRecord,
    extras: &[(usize, String)],
) -> Result<BTreeMap<String, f64>, CorpusError> {
    let mut controls = BTreeMap::new();
    for (i, name) in extras {
        let cell = rec.get(*i).unwrap_or("").trim();
        if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell == "." {
            continue;
        }
        let v: f64 = cell
            .parse()
            .map_err(|_| malformed(path, line, format!("control {name:?} not numeric: {cell:?}")))?;
        if v.is_finite() {
            controls.insert(name.clone(), v);
        }
    }
    Ok(controls)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>, CorpusError> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?))
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(0)
}

pub fn load_returns(
    path: &Path,
    cols: &ReturnColumns,
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<Vec<ReturnRecord>, CorpusError> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| malformed(path, 1, e.to_string()))?
        .clone();
    let (idx, extras) = header_layout(
        path,
        &headers,
        &[&cols.firm_id, &cols.period, &cols.excess_return],
    )?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(path, line, e.to_string())
        })?;
        let line = record_line(&rec);
        let firm_id = rec[idx[0]].to_string();
        let period: Period = rec[idx[1]]
            .parse()
            .map_err(|e: crate::period::PeriodParseError| malformed(path, line, e.to_string()))?;
        if period.frequency() != Frequency::Monthly {
            return Err(malformed(path, line, format!("return period {period} is not a month")));
        }
        let raw = &rec[idx[2]];
        let excess_return: f64 = raw
            .parse()
            .map_err(|_| malformed(path, line, format!("excess_return not numeric: {raw:?}")))?;
        if !excess_return.is_finite() {
            diagnostics.push(Diagnostic::new(
                "corpus",
                format!("{}:{line}: rejected return row: non-finite excess_return", path.display()),
            ));
            continue;
        }
        if !seen.insert((firm_id.clone(), period)) {
            return Err(dup(path, line, format!("({firm_id}, {period})")));
        }
        let controls = parse_controls(path, line, &rec, &extras)?;
        out.push(ReturnRecord {
            firm_id,
            period,
            excess_return,
            controls,
        });
    }
    Ok(out)
}

pub fn load_earnings(
    path: &Path,
    cols: &EarningsColumns,
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<Vec<EarningsRecord>, CorpusError> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| malformed(path, 1, e.to_string()))?
        .clone();
    let (idx, extras) = header_layout(
        path,
        &headers,
        &[&cols.firm_id, &cols.fiscal_quarter, &cols.eps, &cols.sic4],
    )?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(path, line, e.to_string())
        })?;
        let line = record_line(&rec);
        let firm_id = rec[idx[0]].to_string();
        let fiscal_quarter: Period = rec[idx[1]]
            .parse()
            .map_err(|e: crate::period::PeriodParseError| malformed(path, line, e.to_string()))?;
        if fiscal_quarter.frequency() != Frequency::Quarterly {
            return Err(malformed(
                path,
                line,
                format!("fiscal_quarter {fiscal_quarter} is not a quarter"),
            ));
        }
        let raw = &rec[idx[2]];
        let eps: f64 = raw
            .parse()
            .map_err(|_| malformed(path, line, format!("eps not numeric: {raw:?}")))?;
        let sic4 = rec[idx[3]].to_string();
        if !eps.is_finite() {
            diagnostics.push(Diagnostic::new(
                "corpus",
                format!("{}:{line}: rejected earnings row: non-finite eps", path.display()),
            ));
            continue;
        }
        if sic4.len() != 4 || !sic4.bytes().all(|b| b.is_ascii_digit()) {
            diagnostics.push(Diagnostic::new(
                "corpus",
                format!("{}:{line}: rejected earnings row: sic4 {sic4:?} is not 4 digits", path.display()),
            ));
            continue;
        }
        if !seen.insert((firm_id.clone(), fiscal_quarter)) {
            return Err(dup(path, line, format!("({firm_id}, {fiscal_quarter})")));
        }
        let controls = parse_controls(path, line, &rec, &extras)?;
        out.push(EarningsRecord {
            firm_id,
            fiscal_quarter,
            eps,
            sic4,
            controls,
        });
    }
    Ok(out)
}

/// The most recent transcript whose event date falls strictly before the
/// first day of `period`. Same-day transcripts resolve to the greater
/// `doc_id`.
pub fn align_latest_transcript<'a>(
    corpus: &'a Corpus,
    firm_id: &str,
    period: Period,
) -> Result<Option<&'a TranscriptRecord>, CorpusError> {
    let idx = corpus
        .by_firm
        .get(firm_id)
        .ok_or_else(|| CorpusError::UnknownFirm(firm_id.to_string()))?;
    let start = period.start_date();
    let n_before = idx.partition_point(|&i| corpus.transcripts[i].event_time < start);
    Ok(n_before
        .checked_sub(1)
        .map(|k| &corpus.transcripts[idx[k]]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub firm_id: String,
    pub ticker: String,
    pub period: Period,
    /// Excess return (return task) or EPS (earnings task).
    pub outcome: f64,
    /// Out-of-sample forecast target: the excess return itself, or YoY EPS
    /// growth for earnings. `None` when the growth ratio is undefined.
    pub oos_target: Option<f64>,
    pub transcript_ref: String,
    pub transcript_time: NaiveDate,
    pub pre_cutoff: bool,
    pub sic4: Option<String>,
    pub controls: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationPanel {
    pub task: TaskKind,
    pub cutoff_date: NaiveDate,
    pub rows: Vec<PanelRow>,
    #[serde(default)]
    pub diagnostics: Vec<Diagnostic>,
}

impl ObservationPanel {
    /// Checks the structural invariants; returns the first violation found.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut keys = HashSet::new();
        for r in &self.rows {
            if r.transcript_time >= r.period.start_date() {
                return Err(format!(
                    "{} {}: transcript {} dated {} does not precede the period",
                    r.firm_id, r.period, r.transcript_ref, r.transcript_time
                ));
            }
            if r.pre_cutoff != r.period.is_pre_cutoff(self.cutoff_date) {
                return Err(format!("{} {}: pre_cutoff flag mismatch", r.firm_id, r.period));
            }
            if !keys.insert((r.firm_id.as_str(), r.period)) {
                return Err(format!("duplicate row {} {}", r.firm_id, r.period));
            }
        }
        Ok(())
    }

    pub fn periods(&self) -> Vec<Period> {
        let mut p: Vec<Period> = self.rows.iter().map(|r| r.period).collect();
        p.sort();
        p.dedup();
        p
    }

    /// Attach a computed control column. Rows absent from `values` are left
    /// without it (missing).
    pub fn add_control(&mut self, name: &str, values: &BTreeMap<(String, Period), f64>) {
        for r in &mut self.rows {
            if let Some(v) = values.get(&(r.firm_id.clone(), r.period)) {
                r.controls.insert(name.to_string(), *v);
            }
        }
    }
}

/// One row per firm-period that has both an aligned prior transcript and a
/// non-missing outcome, ordered by `(firm_id, period)`.
pub fn build_panel(
    corpus: &Corpus,
    task: TaskKind,
    cutoff_date: NaiveDate,
) -> Result<ObservationPanel, CorpusError> {
    struct Candidate<'a> {
        firm_id: &'a str,
        period: Period,
        outcome: f64,
        oos_target: Option<f64>,
        sic4: Option<&'a str>,
        controls: &'a BTreeMap<String, f64>,
    }

    let mut diagnostics = Vec::new();
    let candidates: Vec<Candidate<'_>> = match task {
        TaskKind::SentimentReturn => corpus
            .returns
            .iter()
            .map(|r| Candidate {
                firm_id: &r.firm_id,
                period: r.period,
                outcome: r.excess_return,
                oos_target: Some(r.excess_return),
                sic4: None,
                controls: &r.controls,
            })
            .collect(),
        TaskKind::CompetitionEarnings => {
            let mut history: BTreeMap<&str, BTreeMap<Period, f64>> = BTreeMap::new();
            for e in &corpus.earnings {
                history
                    .entry(e.firm_id.as_str())
                    .or_default()
                    .insert(e.fiscal_quarter, e.eps);
            }
            corpus
                .earnings
                .iter()
                .map(|e| {
                    let growth = match yoy_eps_growth(&history[e.firm_id.as_str()], e.fiscal_quarter) {
                        Ok(g) => Some(g),
                        Err(GrowthError::MissingLag) => None,
                        Err(err) => {
                            diagnostics.push(Diagnostic::new(
                                "corpus",
                                format!("{} {}: growth target excluded: {err}", e.firm_id, e.fiscal_quarter),
                            ));
                            None
                        }
                    };
                    Candidate {
                        firm_id: &e.firm_id,
                        period: e.fiscal_quarter,
                        outcome: e.eps,
                        oos_target: growth,
                        sic4: Some(&e.sic4),
                        controls: &e.controls,
                    }
                })
                .collect()
        }
    };

    if let (Some(first), Some(last)) = (
        candidates.iter().map(|c| c.period).min(),
        candidates.iter().map(|c| c.period).max(),
    ) {
        let (lo, hi) = (first.start_date(), last.end_date());
        if cutoff_date < lo || cutoff_date > hi {
            return Err(CorpusError::CutoffOutOfRange {
                cutoff: cutoff_date,
                first: lo,
                last: hi,
            });
        }
    }

    let mut rows: BTreeMap<(String, Period), PanelRow> = BTreeMap::new();
    for c in candidates {
        let doc = match align_latest_transcript(corpus, c.firm_id, c.period) {
            Ok(Some(doc)) => doc,
            Ok(None) | Err(CorpusError::UnknownFirm(_)) => continue,
            Err(e) => return Err(e),
        };
        rows.insert(
            (c.firm_id.to_string(), c.period),
            PanelRow {
                firm_id: c.firm_id.to_string(),
                ticker: doc.ticker.clone(),
                period: c.period,
                outcome: c.outcome,
                oos_target: c.oos_target,
                transcript_ref: doc.doc_id.clone(),
                transcript_time: doc.event_time,
                pre_cutoff: c.period.is_pre_cutoff(cutoff_date),
                sic4: c.sic4.map(str::to_string),
                controls: c.controls.clone(),
            },
        );
    }
    if rows.is_empty() {
        return Err(CorpusError::EmptyPanel);
    }
    Ok(ObservationPanel {
        task,
        cutoff_date,
        rows: rows.into_values().collect(),
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn tr(firm: &str, doc: &str, t: NaiveDate) -> TranscriptRecord {
        TranscriptRecord {
            firm_id: firm.into(),
            ticker: format!("T{firm}"),
            doc_id: doc.into(),
            event_time: t,
            text: "call text".into(),
        }
    }

    fn ret(firm: &str, p: Period, r: f64) -> ReturnRecord {
        ReturnRecord {
            firm_id: firm.into(),
            period: p,
            excess_return: r,
            controls: BTreeMap::new(),
        }
    }

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn loads_three_returns_with_controls() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(
            dir.path(),
            "r.csv",
            "firm_id,period,excess_return,size\nA,2023-01,0.01,5.5\nA,2023-02,-0.02,\nB,2023-01,0.03,NA\n",
        );
        let mut d = Vec::new();
        let rows = load_returns(&r, &ReturnColumns::default(), &mut d).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].controls.get("size"), Some(&5.5));
        assert!(rows[1].controls.is_empty());
        assert!(d.is_empty());
    }

    #[test]
    fn duplicate_return_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(
            dir.path(),
            "r.csv",
            "firm_id,period,excess_return\nA,2023-01,0.01\nA,2023-01,0.02\n",
        );
        let err = load_returns(&r, &ReturnColumns::default(), &mut Vec::new()).unwrap_err();
        match err {
            CorpusError::DuplicateKey { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let r = write(
            dir.path(),
            "r.csv",
            "firm_id,period,excess_return\nA,2023-01,0.01\nA,2023-02,abc\n",
        );
        let err = load_returns(&r, &ReturnColumns::default(), &mut Vec::new()).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 3, .. }), "{err}");
    }

    #[test]
    fn empty_transcript_text_rejected_with_diagnostic() {
        let dir = tempfile::tempdir().unwrap();
        let t = write(
            dir.path(),
            "t.jsonl",
            concat!(
                r#"{"firm_id":"A","ticker":"AAA","doc_id":"d1","event_time":"2023-01-05","text":"hello"}"#,
                "\n",
                r#"{"firm_id":"A","ticker":"AAA","doc_id":"d2","event_time":"2023-02-03","text":"  "}"#,
                "\n"
            ),
        );
        let mut d = Vec::new();
        let rows = load_transcripts(&t, &TranscriptColumns::default(), &mut d).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains(":2:"), "{}", d[0]);
    }

    #[test]
    fn missing_file_and_column() {
        let err = load_returns(Path::new("/nonexistent/x.csv"), &ReturnColumns::default(), &mut Vec::new())
            .unwrap_err();
        assert!(matches!(err, CorpusError::MissingFile(_)));
        let dir = tempfile::tempdir().unwrap();
        let r = write(dir.path(), "r.csv", "firm,period,excess_return\nA,2023-01,0.1\n");
        let err = load_returns(&r, &ReturnColumns::default(), &mut Vec::new()).unwrap_err();
        assert!(matches!(err, CorpusError::MissingColumn { .. }));
        let cols = ReturnColumns {
            firm_id: "firm".into(),
            ..Default::default()
        };
        assert_eq!(load_returns(&r, &cols, &mut Vec::new()).unwrap().len(), 1);
    }

    #[test]
    fn bad_sic4_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(
            dir.path(),
            "e.csv",
            "firm_id,fiscal_quarter,eps,sic4\nA,2023Q1,1.0,3571\nB,2023Q1,1.0,357\n",
        );
        let mut d = Vec::new();
        let rows = load_earnings(&e, &EarningsColumns::default(), &mut d).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn alignment_picks_latest_prior() {
        let c = Corpus::from_records(
            vec![tr("A", "d1", date(2023, 1, 5)), tr("A", "d2", date(2023, 2, 3))],
            vec![],
            vec![],
        )
        .unwrap();
        let got = align_latest_transcript(&c, "A", Period::month(2023, 3)).unwrap().unwrap();
        assert_eq!(got.doc_id, "d2");
        let c = Corpus::from_records(vec![tr("A", "d2", date(2023, 2, 3))], vec![], vec![]).unwrap();
        assert!(align_latest_transcript(&c, "A", Period::month(2023, 1)).unwrap().is_none());
        assert!(matches!(
            align_latest_transcript(&c, "Z", Period::month(2023, 1)),
            Err(CorpusError::UnknownFirm(_))
        ));
    }

    #[test]
    fn alignment_is_strict_and_breaks_ties_by_doc_id() {
        let c = Corpus::from_records(
            vec![
                tr("A", "b", date(2023, 1, 10)),
                tr("A", "a", date(2023, 1, 10)),
                tr("A", "z", date(2023, 2, 1)),
            ],
            vec![],
            vec![],
        )
        .unwrap();
        // The Feb-01 call is not available for February itself.
        let got = align_latest_transcript(&c, "A", Period::month(2023, 2)).unwrap().unwrap();
        assert_eq!(got.doc_id, "b");
    }

    #[test]
    fn panel_rows_follow_alignment_and_cutoff() {
        let c = Corpus::from_records(
            vec![tr("A", "jan", date(2023, 1, 10)), tr("A", "mar", date(2023, 3, 15))],
            vec![
                ret("A", Period::month(2023, 2), 0.01),
                ret("A", Period::month(2023, 3), 0.02),
                ret("A", Period::month(2023, 4), 0.03),
                ret("A", Period::month(2023, 6), 0.03),
            ],
            vec![],
        )
        .unwrap();
        let p = build_panel(&c, TaskKind::SentimentReturn, date(2023, 4, 1)).unwrap();
        let refs: Vec<&str> = p.rows.iter().map(|r| r.transcript_ref.as_str()).collect();
        assert_eq!(refs, ["jan", "jan", "mar", "mar"]);
        let pre: Vec<bool> = p.rows.iter().map(|r| r.pre_cutoff).collect();
        assert_eq!(pre, [true, true, false, false]);
        p.check_invariants().unwrap();
        // May is absent from the returns file, so no row.
        assert!(p.rows.iter().all(|r| r.period != Period::month(2023, 5)));
    }

    #[test]
    fn knowledge_cutoff_month_is_post() {
        let c = Corpus::from_records(
            vec![tr("A", "d", date(2023, 8, 10))],
            vec![
                ret("A", Period::month(2023, 9), 0.0),
                ret("A", Period::month(2023, 10), 0.0),
            ],
            vec![],
        )
        .unwrap();
        let p = build_panel(&c, TaskKind::SentimentReturn, date(2023, 10, 1)).unwrap();
        assert!(p.rows[0].pre_cutoff);
        assert!(!p.rows[1].pre_cutoff);
    }

    #[test]
    fn empty_panel_and_cutoff_range_errors() {
        let c = Corpus::from_records(
            vec![tr("A", "d", date(2024, 1, 10))],
            vec![ret("A", Period::month(2023, 9), 0.0)],
            vec![],
        )
        .unwrap();
        assert!(matches!(
            build_panel(&c, TaskKind::SentimentReturn, date(2023, 9, 15)),
            Err(CorpusError::EmptyPanel)
        ));
        assert!(matches!(
            build_panel(&c, TaskKind::SentimentReturn, date(2025, 1, 1)),
            Err(CorpusError::CutoffOutOfRange { .. })
        ));
    }

    #[test]
    fn earnings_panel_carries_growth_and_sic() {
        let e = |q: Period, eps: f64| EarningsRecord {
            firm_id: "A".into(),
            fiscal_quarter: q,
            eps,
            sic4: "3571".into(),
            controls: BTreeMap::new(),
        };
        let c = Corpus::from_records(
            vec![tr("A", "d", date(2021, 12, 1))],
            vec![],
            vec![
                e(Period::quarter(2022, 1), 1.0),
                e(Period::quarter(2022, 2), 0.0),
                e(Period::quarter(2023, 1), 2.0),
                e(Period::quarter(2023, 2), 1.0),
            ],
        )
        .unwrap();
        let p = build_panel(&c, TaskKind::CompetitionEarnings, date(2022, 10, 1)).unwrap();
        assert_eq!(p.rows.len(), 4);
        assert_eq!(p.rows[2].oos_target, Some(2.0));
        assert_eq!(p.rows[3].oos_target, None);
        assert_eq!(p.rows[0].sic4.as_deref(), Some("3571"));
        assert_eq!(p.diagnostics.len(), 1);
    }
}
