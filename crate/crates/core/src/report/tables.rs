use super::{write_file, AuditReport, ReportError};
use crate::forecast::{AWARE_X_POST, GOAL_AWARE, POST_CUTOFF};
use crate::portfolio::{EraPanel, OneSidedTest};
use crate::regression::{BLIND_SCORE, DIFF};
use crate::stats::stars;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    /// Quintile long-short spreads.
    Spreads,
    /// Fama-MacBeth slopes by era.
    Fmb,
    /// R²_OOS panel regressions.
    OosPanel,
}

impl TableKind {
    pub const ALL: [TableKind; 3] = [TableKind::Spreads, TableKind::Fmb, TableKind::OosPanel];

    pub fn file_stem(self) -> &'static str {
        match self {
            TableKind::Spreads => "table_spreads",
            TableKind::Fmb => "table_fmb",
            TableKind::OosPanel => "table_oos_panel",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Text,
    Csv,
    Json,
}

impl TableFormat {
    pub const ALL: [TableFormat; 3] = [TableFormat::Text, TableFormat::Csv, TableFormat::Json];

    fn extension(self) -> &'static str {
        match self {
            TableFormat::Text => "txt",
            TableFormat::Csv => "csv",
            TableFormat::Json => "json",
        }
    }
}

struct Row {
    label: String,
    cells: Vec<String>,
    highlight: bool,
}

struct Grid {
    title: String,
    header: Vec<String>,
    rows: Vec<Row>,
}

impl Grid {
    fn row(&mut self, label: impl Into<String>, cells: Vec<String>) {
        self.rows.push(Row {
            label: label.into(),
            cells,
            highlight: false,
        });
    }

    fn highlighted(&mut self, label: impl Into<String>, cells: Vec<String>) {
        self.rows.push(Row {
            label: label.into(),
            cells,
            highlight: true,
        });
    }

    fn text(&self) -> String {
        let label_w = self.rows.iter().map(|r| r.label.chars().count() + 2).max().unwrap_or(0).max(12);
        let ncol = self.header.len();
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for r in &self.rows {
            for (j, c) in r.cells.iter().enumerate().take(ncol) {
                widths[j] = widths[j].max(c.chars().count());
            }
        }
        let mut out = format!("{}\n", self.title);
        let rule = "-".repeat(label_w + widths.iter().map(|w| w + 2).sum::<usize>());
        out.push_str(&rule);
        out.push('\n');
        out.push_str(&format!("{:label_w$}", ""));
        for (h, w) in self.header.iter().zip(&widths) {
            out.push_str(&format!("  {h:>w$}"));
        }
        out.push('\n');
        out.push_str(&rule);
        out.push('\n');
        for r in &self.rows {
            let label = if r.highlight { format!("> {}", r.label) } else { format!("  {}", r.label) };
            let mut line = format!("{label:label_w$}");
            for (j, w) in widths.iter().enumerate() {
                let c = r.cells.get(j).map_or("", String::as_str);
                line.push_str(&format!("  {c:>w$}"));
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out.push_str(&rule);
        out.push('\n');
        out.push_str("Significance: *** 1%, ** 5%, * 10%.\n");
        out
    }

    fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["row".to_string()];
        header.extend(self.header.iter().cloned());
        header.push("highlight".into());
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![r.label.clone()];
            rec.extend((0..self.header.len()).map(|j| r.cells.get(j).cloned().unwrap_or_default()));
            rec.push(r.highlight.to_string());
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

fn coef(x: f64, p: Option<f64>) -> String {
    format!("{x:.3}{}", stars(p))
}

fn se(x: f64) -> String {
    format!("({x:.3})")
}

fn pct(x: f64) -> String {
    format!("{:.3}%", x * 100.0)
}

fn pct_starred(t: &OneSidedTest) -> String {
    format!("{}{}", pct(t.mean), stars(Some(t.p_value)))
}

fn spreads_grid(report: &AuditReport) -> Result<Grid, ReportError> {
    let sorts = report.sorts.as_ref().ok_or(ReportError::NotRun("portfolio sort"))?;
    let t = &sorts.tests;
    let mut g = Grid {
        title: "Quintile long-short spreads (one-sided paired t-tests)".into(),
        header: ["High", "Low", "Spread"]
            .iter()
            .flat_map(|h| [format!("Pre-Cutoff {h}")])
            .chain(["High", "Low", "Spread"].iter().map(|h| format!("Post-Cutoff {h}")))
            .collect(),
        rows: Vec::new(),
    };
    let cells = |pick: fn(&EraPanel) -> &crate::portfolio::RegimeCell| -> Vec<String> {
        [&t.pre, &t.post]
            .iter()
            .flat_map(|era| {
                let c = pick(era);
                [pct(c.mean_high), pct(c.mean_low), pct_starred(&c.spread)]
            })
            .collect()
    };
    g.row("Goal-aware", cells(|e| &e.aware));
    g.row("Goal-blind", cells(|e| &e.blind));
    g.highlighted(
        "Difference",
        vec![
            String::new(),
            String::new(),
            pct_starred(&t.pre.difference),
            String::new(),
            String::new(),
            pct_starred(&t.post.difference),
        ],
    );
    g.row(
        "Periods",
        vec![String::new(), String::new(), t.pre.periods.len().to_string(), String::new(), String::new(), t.post.periods.len().to_string()],
    );
    Ok(g)
}

fn fmb_grid(report: &AuditReport) -> Result<Grid, ReportError> {
    let cols = report.fmb.as_ref().ok_or(ReportError::NotRun("Fama-MacBeth"))?;
    let mut g = Grid {
        title: "Fama-MacBeth regressions with era-specific slopes".into(),
        header: (1..=cols.len()).map(|i| format!("({i})")).collect(),
        rows: Vec::new(),
    };
    for (name, label) in [(BLIND_SCORE, "Goal-Blind Score"), (DIFF, "Diff")] {
        for (pre, era) in [(true, "Pre-Cutoff"), (false, "Post-Cutoff")] {
            let est: Vec<_> = cols
                .iter()
                .map(|c| if pre { c.result.pre(name) } else { c.result.post(name) })
                .collect();
            let vals = est.iter().map(|e| e.map_or(String::new(), |e| coef(e.mean, e.p_value))).collect();
            let ses = est.iter().map(|e| e.map_or(String::new(), |e| se(e.se))).collect();
            let label = format!("{label} x {era}");
            if name == DIFF {
                g.highlighted(label, vals);
                g.highlighted("", ses);
            } else {
                g.row(label, vals);
                g.row("", ses);
            }
        }
    }
    g.row("Testing Coefficient Pre- and Post-Cutoff", vec![]);
    for (name, label) in [(BLIND_SCORE, "Goal-blind Score"), (DIFF, "Diff")] {
        g.row(
            format!("{label}: P(Pre-Cutoff=Post-Cutoff)"),
            cols.iter()
                .map(|c| c.result.equality_p(name).map_or("n/a".into(), |p| format!("{p:.3}")))
                .collect(),
        );
    }
    g.row(
        "Control Predictors",
        cols.iter()
            .map(|c| if c.controls.is_empty() { "None".into() } else { c.controls.join(", ") })
            .collect(),
    );
    g.row("N", cols.iter().map(|c| c.result.n_obs.to_string()).collect());
    Ok(g)
}

fn oos_panel_grid(report: &AuditReport) -> Result<Grid, ReportError> {
    let cols = report.panel.as_ref().ok_or(ReportError::NotRun("R²_OOS panel"))?;
    let mut g = Grid {
        title: "Panel regressions of observation-level R²_OOS".into(),
        header: (1..=cols.len()).map(|i| format!("({i})")).collect(),
        rows: Vec::new(),
    };
    for (name, label) in [(AWARE_X_POST, "Goal-aware x Post Cutoff"), (GOAL_AWARE, "Goal-aware"), (POST_CUTOFF, "Post Cutoff")] {
        let coefs: Vec<_> = cols.iter().map(|c| c.result.coefficient(name)).collect();
        let vals = coefs
            .iter()
            .map(|c| c.map_or("absorbed".into(), |c| coef(c.estimate, c.p_value)))
            .collect();
        let ses = coefs.iter().map(|c| c.map_or(String::new(), |c| se(c.se))).collect();
        if name == AWARE_X_POST {
            g.highlighted(label, vals);
            g.highlighted("", ses);
        } else {
            g.row(label, vals);
            g.row("", ses);
        }
    }
    let yes_no = |b: bool| if b { "Yes".to_string() } else { "No".to_string() };
    g.row("Controls", cols.iter().map(|c| yes_no(!c.controls.is_empty())).collect());
    g.row("Firm FE", cols.iter().map(|c| yes_no(c.fixed_effects.firm)).collect());
    g.row("Time FE", cols.iter().map(|c| yes_no(c.fixed_effects.time)).collect());
    g.row("Observations", cols.iter().map(|c| c.result.n_obs.to_string()).collect());
    g.row("Within R-squared", cols.iter().map(|c| format!("{:.3}", c.result.within_r_squared)).collect());
    Ok(g)
}

fn json_for(report: &AuditReport, kind: TableKind) -> Result<String, ReportError> {
    let v = match kind {
        TableKind::Spreads => serde_json::to_value(&report.sorts.as_ref().ok_or(ReportError::NotRun("portfolio sort"))?.tests),
        TableKind::Fmb => serde_json::to_value(report.fmb.as_ref().ok_or(ReportError::NotRun("Fama-MacBeth"))?),
        TableKind::OosPanel => serde_json::to_value(report.panel.as_ref().ok_or(ReportError::NotRun("R²_OOS panel"))?),
    }
    .expect("table serializes");
    let mut s = serde_json::to_string_pretty(&v).expect("json");
    s.push('\n');
    Ok(s)
}

/// Renders one table in one format.
pub fn render_table(report: &AuditReport, kind: TableKind, format: TableFormat) -> Result<String, ReportError> {
    if format == TableFormat::Json {
        return json_for(report, kind);
    }
    let grid = match kind {
        TableKind::Spreads => spreads_grid(report)?,
        TableKind::Fmb => fmb_grid(report)?,
        TableKind::OosPanel => oos_panel_grid(report)?,
    };
    Ok(match format {
        TableFormat::Text => grid.text(),
        TableFormat::Csv => grid.csv(),
        TableFormat::Json => unreachable!(),
    })
}

/// Writes `<stem>.<ext>` for each requested table and format.
pub fn emit_tables(
    report: &AuditReport,
    dir: &Path,
    kinds: &[TableKind],
    formats: &[TableFormat],
) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.to_path_buf(), source })?;
    let mut written = Vec::new();
    for &kind in kinds {
        for &format in formats {
            let text = render_table(report, kind, format)?;
            written.push(write_file(dir.join(format!("{}.{}", kind.file_stem(), format.extension())), &text)?);
        }
    }
    Ok(written)
}
