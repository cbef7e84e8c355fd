//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use goalaudit_core::config::AuditConfig;
use goalaudit_core::forecast::{expanding_forecast_observed, oos_r2, ForecastInput, ForecastOptions, AWARE_X_POST};
use goalaudit_core::period::Period;
use goalaudit_core::pipeline::{audit_in_memory, run_audit};
use goalaudit_core::portfolio::{assign_quintiles, long_short_returns, quintile_sizes};
use goalaudit_core::prompting::{render_prompt, single_insertion, Regime, TaskKind};
use goalaudit_core::regression::{
    fmb_estimate, panel_fe, ClusterDim, FixedEffects, FmbObservation, FmbOptions, PanelData, PanelObservation, DIFF,
};
use goalaudit_core::synthetic::{generate_world, SimConfig};
use goalaudit_core::transforms::percentile_within_cohort;
use goalaudit_core::AuditReport;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// Independent least-squares oracle: normal equations solved by Gaussian
// elimination with partial pivoting.

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        let scale = a.iter().map(|r| r[col].abs()).fold(0.0, f64::max);
        if a[piv][col].abs() <= 1e-10 * scale.max(1.0) {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for i in col + 1..n {
            let f = a[i][col] / a[col][col];
            for j in col..n {
                a[i][j] -= f * a[col][j];
            }
            b[i] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let k = rows[0].len();
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for (r, &yi) in rows.iter().zip(y) {
        for i in 0..k {
            xty[i] += r[i] * yi;
            for j in 0..k {
                xtx[i][j] += r[i] * r[j];
            }
        }
    }
    solve(xtx, xty)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the oracle free of the library's sampling code.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn fmb_instance(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_pre, n_post) = (rng.random_range(2..=3), rng.random_range(2..=3));
    let per = 50 / (n_pre + n_post);
    let k = 2;
    let names = vec!["x1".to_string(), "x2".to_string()];
    let mut obs = Vec::new();
    for t in 0..n_pre + n_post {
        let n = rng.random_range(k + 3..=per);
        for _ in 0..n {
            let mut regs: Vec<Option<f64>> = (0..k).map(|_| Some(normal(&mut rng))).collect();
            if rng.random_bool(0.05) {
                regs[1] = None;
            }
            let y = 0.3 + regs.iter().map(|r| r.unwrap_or(0.0)).sum::<f64>() * 0.7 + normal(&mut rng);
            obs.push(FmbObservation {
                period: Period::month(2020, 1).offset(t as i64),
                pre_cutoff: t < n_pre,
                outcome: y,
                regressors: regs,
            });
        }
    }
    let result = fmb_estimate(&obs, &names, FmbOptions::default());
    let mut pre_sum = vec![0.0; k];
    let mut post_sum = vec![0.0; k];
    let (mut n_pre_used, mut n_post_used) = (0usize, 0usize);
    for t in 0..n_pre + n_post {
        let p = Period::month(2020, 1).offset(t as i64);
        let rows: Vec<&FmbObservation> = obs
            .iter()
            .filter(|o| o.period == p && o.regressors.iter().all(Option::is_some))
            .collect();
        let x: Vec<Vec<f64>> = rows
            .iter()
            .map(|o| std::iter::once(1.0).chain(o.regressors.iter().map(|r| r.unwrap())).collect())
            .collect();
        // A cross-section needs two residual degrees of freedom beyond the
        // intercept and slopes.
        if rows.len() < k + 3 {
            continue;
        }
        let y: Vec<f64> = rows.iter().map(|o| o.outcome).collect();
        let b = least_squares(&x, &y).ok_or("oracle singular")?;
        let (sums, count) = if t < n_pre { (&mut pre_sum, &mut n_pre_used) } else { (&mut post_sum, &mut n_post_used) };
        *count += 1;
        for j in 0..k {
            sums[j] += b[j + 1];
        }
    }
    if n_pre_used < 2 || n_post_used < 2 {
        return match result {
            Err(_) => Ok(()),
            Ok(_) => Err(format!("seed {seed}: estimated with fewer than two periods in an era")),
        };
    }
    let result = result.map_err(|e| format!("seed {seed}: {e}"))?;
    for (j, name) in names.iter().enumerate() {
        let pre = result.pre(name).ok_or("missing pre estimate")?.mean;
        let post = result.post(name).ok_or("missing post estimate")?.mean;
        let (opre, opost) = (pre_sum[j] / n_pre_used as f64, post_sum[j] / n_post_used as f64);
        if (pre - opre).abs() > 1e-10 || (post - opost).abs() > 1e-10 {
            return Err(format!("seed {seed} {name}: {pre} vs {opre}, {post} vs {opost}"));
        }
    }
    Ok(())
}

/// `None` when the random draw leaves the dummy design singular (a
/// disconnected firm-period graph); the caller draws again.
fn panel_instance(seed: u64) -> Option<Result<(), String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nf, nt) = (rng.random_range(3..=6), rng.random_range(3..=7));
    let k = 2;
    let fe_f: Vec<f64> = (0..nf).map(|_| normal(&mut rng)).collect();
    let fe_t: Vec<f64> = (0..nt).map(|_| normal(&mut rng)).collect();
    let mut rows = Vec::new();
    for f in 0..nf {
        for t in 0..nt {
            if rows.len() < 50 && rng.random_bool(0.8) {
                let x: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
                let y = 0.5 * x[0] - 1.5 * x[1] + fe_f[f] + fe_t[t] + normal(&mut rng);
                rows.push((f, t, x, y));
            }
        }
    }
    let levels = |pick: fn(&(usize, usize, Vec<f64>, f64)) -> usize| {
        let mut v: Vec<usize> = rows.iter().map(pick).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let (firms, times) = (levels(|r| r.0), levels(|r| r.1));
    let design: Vec<Vec<f64>> = rows
        .iter()
        .map(|(f, t, x, _)| {
            let mut r = x.clone();
            r.push(1.0);
            r.extend(firms[1..].iter().map(|g| f64::from(u8::from(g == f))));
            r.extend(times[1..].iter().map(|s| f64::from(u8::from(s == t))));
            r
        })
        .collect();
    if design.len() <= design[0].len() + 1 {
        return None;
    }
    let y: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let oracle = least_squares(&design, &y)?;
    let data = PanelData {
        names: vec!["x1".into(), "x2".into()],
        rows: rows
            .iter()
            .map(|(f, t, x, y)| PanelObservation {
                firm_id: format!("F{f}"),
                period: Period::month(2020, 1).offset(*t as i64),
                outcome: *y,
                regressors: x.clone(),
            })
            .collect(),
        protected: vec![],
    };
    let fit = match panel_fe(&data, FixedEffects::FIRM_TIME, ClusterDim::Firm) {
        Ok(f) => f,
        Err(e) => return Some(Err(format!("seed {seed}: {e}"))),
    };
    for (j, name) in ["x1", "x2"].iter().enumerate() {
        let Some(c) = fit.coefficient(name) else {
            return Some(Err(format!("seed {seed}: {name} dropped")));
        };
        if (c.estimate - oracle[j]).abs() > 1e-8 {
            return Some(Err(format!("seed {seed} {name}: {} vs {}", c.estimate, oracle[j])));
        }
    }
    Some(Ok(()))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    for seed in 0..100 {
        if let Err(e) = fmb_instance(seed) {
            failures.push(format!("fmb {e}"));
        }
    }
    let mut done = 0;
    let mut seed = 1_000;
    while done < 100 {
        seed += 1;
        match panel_instance(seed) {
            None => continue,
            Some(r) => {
                done += 1;
                if let Err(e) = r {
                    failures.push(format!("panel {e}"));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "100 FMB + 100 panel instances, {} mismatches, {:.2}s{}",
            failures.len(),
            elapsed.as_secs_f64(),
            failures.first().map_or(String::new(), |f| format!("; first: {f}"))
        ),
    )
}

fn criterion_2() -> Outcome {
    let r2 = [oos_r2(1.0, 1.0, 0.0), oos_r2(1.0, 0.0, 0.0), oos_r2(0.0, 0.5, 1.0)];
    let r2_ok = r2 == [Some(1.0), Some(0.0), Some(0.75)];
    let pct: Vec<f64> = percentile_within_cohort(&[(0, 0.2), (1, 0.5), (2, 0.9)]).into_iter().map(|p| p.1).collect();
    let pct_ok = pct == [1.0 / 6.0, 3.0 / 6.0, 5.0 / 6.0];
    let q_ok = quintile_sizes(12) == [2, 2, 2, 3, 3];
    outcome(r2_ok && pct_ok && q_ok, format!("oos_r2 {r2:?}, percentiles {pct:?}, quintiles {:?}", quintile_sizes(12)))
}

const SENTIMENT_BLIND: &str = "For the following tasks, all dates are expressed in the format MM/DD/YYYY (month/day/year).\n\
Below is the earnings call transcript of {ticker}. Please provide a continuous sentiment score in [-1, 1] about the firm's business sentiment for the month ending on {date}.\n\
Provide a precise numerical answer. Format as a JSON object with the following fields:\n\
- answer: The precise numerical answer to the question. No strings.\n\
{transcript}";

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let words = ["revenue", "grew", "{date}", "margin", "guidance", "Q3", "we", "expect", "{ticker}", "headwinds."];
    let mut failures = Vec::new();
    for i in 0..20 {
        let ticker: String = (0..rng.random_range(1..=5)).map(|_| rng.random_range(b'A'..=b'Z') as char).collect();
        let date = chrono::NaiveDate::from_ymd_opt(rng.random_range(2000..2030), rng.random_range(1..=12), rng.random_range(1..=28)).unwrap();
        let transcript: String = (0..rng.random_range(5..60)).map(|_| words[rng.random_range(0..words.len())]).collect::<Vec<_>>().join(" ");
        let expected = SENTIMENT_BLIND
            .replace("{ticker}", &ticker)
            .replace("{date}", &date.format("%m/%d/%Y").to_string())
            .replace("{transcript}", &transcript);
        for task in TaskKind::ALL {
            let blind = render_prompt(task, Regime::GoalBlind, &ticker, date, &transcript).unwrap();
            let aware = render_prompt(task, Regime::GoalAware, &ticker, date, &transcript).unwrap();
            if task == TaskKind::SentimentReturn && blind.body != expected {
                failures.push(format!("triple {i}: blind sentiment prompt differs from template"));
            }
            match single_insertion(&blind.body, &aware.body) {
                Some(range) => {
                    let inserted = aware.body[range].trim();
                    let one_sentence = inserted.ends_with('.')
                        && inserted.starts_with(char::is_uppercase)
                        && !inserted[..inserted.len() - 1].contains(". ");
                    if !one_sentence {
                        failures.push(format!("triple {i} {task}: insertion is not one sentence: {inserted:?}"));
                    }
                }
                None => failures.push(format!("triple {i} {task}: not a single insertion")),
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("20 triples x 2 tasks, {} failures{}", failures.len(), failures.first().map_or(String::new(), |f| format!("; first: {f}"))),
    )
}

fn monte_carlo(lambda: f64, seeds: u64) -> (Vec<AuditReport>, Duration) {
    let start = Instant::now();
    let next = AtomicUsize::new(0);
    let results = Mutex::new(BTreeMap::new());
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let seed = next.fetch_add(1, Ordering::Relaxed) as u64;
                if seed >= seeds {
                    break;
                }
                let mut cfg = AuditConfig::default();
                cfg.synthetic = SimConfig {
                    lambda,
                    seed,
                    ..SimConfig::default()
                };
                cfg.analysis.r2_floor = Some(R2_FLOOR);
                cfg.provider.http.max_parallel = 1;
                let report = audit_in_memory(&cfg).expect("synthetic audit");
                results.lock().unwrap().insert(seed, report);
            });
        }
    });
    (results.into_inner().unwrap().into_values().collect(), start.elapsed())
}

fn count(reports: &[AuditReport], f: impl Fn(&AuditReport) -> bool) -> usize {
    reports.iter().filter(|r| f(r)).count()
}

/// Lower bound on observation-level R²_OOS for the synthetic audits. The
/// ratio is unbounded below, so without a bound the panel means are driven by
/// the few firm-periods whose outcome lands on the benchmark.
const R2_FLOOR: f64 = -1.0;

fn criterion_4() -> Outcome {
    let (reports, elapsed) = monte_carlo(SimConfig::default().lambda, 100);
    let diff_pre = count(&reports, |r| {
        let e = r.fmb.as_ref().unwrap()[0].result.pre(DIFF).unwrap().clone();
        e.mean > 0.0 && e.p_value.is_some_and(|p| p < 0.05)
    });
    let diff_post = count(&reports, |r| {
        r.fmb.as_ref().unwrap()[0].result.post(DIFF).unwrap().t.is_some_and(|t| t.abs() < 2.0)
    });
    let theta = count(&reports, |r| {
        let c = r.panel.as_ref().unwrap().last().unwrap().result.coefficient(AWARE_X_POST).unwrap().clone();
        c.estimate < 0.0 && c.p_value.is_some_and(|p| p < 0.05)
    });
    let spread = count(&reports, |r| {
        let d = &r.sorts.as_ref().unwrap().tests.pre.difference;
        d.mean > 0.0 && d.p_value < 0.05
    });
    let pass = diff_pre >= 90 && diff_post >= 90 && theta >= 90 && spread >= 80 && elapsed < Duration::from_secs(120);
    outcome(
        pass,
        format!(
            "lambda {}, r2 floor {R2_FLOOR}: Diff x Pre {diff_pre}/100 (>=90), |t| Diff x Post < 2 {diff_post}/100 (>=90), theta1 < 0 {theta}/100 (>=90), pre spread difference {spread}/100 (>=80), {:.1}s",
            SimConfig::default().lambda,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Outcome {
    let (reports, elapsed) = monte_carlo(0.0, 100);
    let flagged = count(&reports, |r| r.leakage.diff_pre_significant == Some(true));
    outcome(flagged <= 10, format!("lambda 0: Diff x Pre significant at 5% in {flagged}/100 (<=10), {:.1}s", elapsed.as_secs_f64()))
}

fn criterion_6() -> Outcome {
    let world = generate_world(&SimConfig::default()).unwrap();
    let mut violations = 0usize;
    let mut windows = 0usize;
    for regime in Regime::BOTH {
        let inputs: Vec<ForecastInput> = (0..world.firms.len())
            .flat_map(|i| {
                let world = &world;
                (0..world.periods.len()).map(move |t| ForecastInput {
                    firm_id: world.firms[i].clone(),
                    period: world.periods[t],
                    score: world.score(i, t, regime),
                    target: world.outcome[i * world.periods.len() + t],
                })
            })
            .collect();
        expanding_forecast_observed(&inputs, regime, ForecastOptions::default(), |target, train| {
            windows += 1;
            violations += train.iter().filter(|r| r.period >= target).count();
        })
        .unwrap();
    }
    outcome(violations == 0 && windows > 0, format!("{windows} windows observed, {violations} training rows dated at or after the forecast period"))
}

fn dir_contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let mut cfg = AuditConfig::default();
        cfg.synthetic.seed = 7;
        cfg.dump_scores = true;
        cfg.out_dir = d.path().to_path_buf();
        run_audit(&cfg).expect("synthetic audit");
    }
    let (fa, fb) = (dir_contents(a.path()), dir_contents(b.path()));
    let differing: Vec<&String> = fa.keys().filter(|k| fb.get(*k) != fa.get(*k)).collect();
    let pass = fa.keys().eq(fb.keys()) && differing.is_empty() && fa.contains_key("report.json");
    outcome(pass, format!("{} files compared, {} differ", fa.len(), differing.len()))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let period = Period::month(2022, 6);
    let (mut flip_fail, mut shift_fail, mut scale_fail) = (0, 0, 0);
    for _ in 0..50 {
        let n = 5 * rng.random_range(1..=20);
        let scores: Vec<(String, f64)> = (0..n).map(|i| (format!("F{i:03}"), normal(&mut rng))).collect();
        let returns: HashMap<(String, Period), f64> = scores.iter().map(|(f, _)| ((f.clone(), period), 0.05 * normal(&mut rng))).collect();
        let flipped: Vec<(String, f64)> = scores.iter().map(|(f, s)| (f.clone(), -s)).collect();
        let spread = |s: &[(String, f64)]| {
            let a = assign_quintiles(period, Regime::GoalBlind, s).unwrap();
            long_short_returns(Regime::GoalBlind, &[a], &returns).points[0].spread
        };
        if spread(&flipped) != -spread(&scores) {
            flip_fail += 1;
        }

        let c = rng.random_range(-10.0..10.0);
        let shifted: Vec<(String, f64)> = scores.iter().map(|(f, s)| (f.clone(), s + c)).collect();
        let q = |s: &[(String, f64)]| assign_quintiles(period, Regime::GoalBlind, s).unwrap().members;
        if q(&scores) != q(&shifted) || percentile_within_cohort(&scores) != percentile_within_cohort(&shifted) {
            shift_fail += 1;
        }

        let (y, y_hat, bench) = (normal(&mut rng), normal(&mut rng), normal(&mut rng));
        let mag = rng.random_range(0.1..10.0);
        let c = if rng.random_bool(0.5) { mag } else { -mag };
        let (r, rc) = (oos_r2(y, y_hat, bench).unwrap(), oos_r2(c * y, c * y_hat, c * bench).unwrap());
        if (r - rc).abs() > 1e-9 * r.abs().max(1.0) {
            scale_fail += 1;
        }
    }
    outcome(
        flip_fail + shift_fail + scale_fail == 0,
        format!("50 instances each: sign-flip {flip_fail}, shift {shift_fail}, r2 scale {scale_fail} failures"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 estimator oracle equivalence", criterion_1),
        ("2 formula exactness", criterion_2),
        ("3 prompt byte-exactness", criterion_3),
        ("4 leakage detection power", criterion_4),
        ("5 size control", criterion_5),
        ("6 look-ahead guard", criterion_6),
        ("7 determinism", criterion_7),
        ("8 invariance suite", criterion_8),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(o.as_str())) {
            continue;
        }
        let o = run();
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
