use super::{write_file, AuditReport, ReportError};
use std::path::{Path, PathBuf};

/// Writes the cumulative long-short curves and the per-period mean R²_OOS
/// as CSV, one row per (period, regime), with values at full precision.
/// Analyses that did not run produce no file.
pub fn emit_plotdata(report: &AuditReport, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.to_path_buf(), source })?;
    let mut written = Vec::new();
    if let Some(sorts) = &report.sorts {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["period", "regime", "cumulative", "post_cutoff"]).expect("in-memory write");
        let n = sorts.curves.iter().map(|c| c.points.len()).max().unwrap_or(0);
        for i in 0..n {
            for c in &sorts.curves {
                if let Some(p) = c.points.get(i) {
                    w.write_record([
                        p.period.to_string(),
                        c.regime.as_str().to_string(),
                        p.value.to_string(),
                        p.post_cutoff.to_string(),
                    ])
                    .expect("in-memory write");
                }
            }
        }
        let text = String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
        written.push(write_file(dir.join("plot_cumulative_spreads.csv"), &text)?);
    }
    if let Some(oos) = &report.oos {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["period", "regime", "mean_r2_oos", "n", "post_cutoff"]).expect("in-memory write");
        for p in &oos.series {
            w.write_record([
                p.period.to_string(),
                p.regime.as_str().to_string(),
                p.mean_r2_oos.to_string(),
                p.n.to_string(),
                (!p.period.is_pre_cutoff(report.cutoff_date)).to_string(),
            ])
            .expect("in-memory write");
        }
        let text = String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
        written.push(write_file(dir.join("plot_oos_r2.csv"), &text)?);
    }
    Ok(written)
}
