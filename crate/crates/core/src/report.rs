//! Metrics CSV and plain-text run summaries.

use std::fmt::Write as _;
use std::path::Path;

use crate::jsonl::DataError;
use crate::mgrd::detect_collapse;
use crate::types::TrainingMetrics;

pub const METRICS_HEADER: &str = "iteration,mean_reward,think_tokens,clip_fraction,think_fraction";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{0}: no metrics or cognition results found")]
    Empty(String),
}

/// One row per RL step, 1-based, floats in shortest round-trip form.
pub fn metrics_csv_string(m: &TrainingMetrics) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(f64::NAN);
    for i in 0..m.len() {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            i + 1,
            m.mean_reward[i],
            get(&m.think_tokens, i),
            get(&m.clip_fraction, i),
            get(&m.think_fraction, i)
        );
    }
    s
}

pub fn write_metrics_csv(path: &Path, m: &TrainingMetrics) -> Result<(), DataError> {
    std::fs::write(path, metrics_csv_string(m)).map_err(|source| DataError::Io { path: path.display().to_string(), source })
}

pub fn read_metrics_csv(path: &Path) -> Result<TrainingMetrics, ReportError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io { path: p.clone(), source })?;
    let bad = |line: usize, msg: String| ReportError::Parse { path: p.clone(), line, msg };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => return Err(bad(1, format!("expected header {METRICS_HEADER:?}"))),
    }
    let mut m = TrainingMetrics::default();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(bad(i + 1, format!("expected 5 columns, got {}", cols.len())));
        }
        let mut vals = [0.0; 4];
        for (v, c) in vals.iter_mut().zip(&cols[1..]) {
            *v = c.trim().parse().map_err(|e| bad(i + 1, format!("{c:?}: {e}")))?;
        }
        m.push(vals[0], vals[1], vals[2], vals[3]);
    }
    Ok(m)
}

/// Human-readable digest of a metrics series, with a collapse check on the
/// reasoning-length series when it is long enough.
pub fn summarize(m: &TrainingMetrics, window: usize, threshold: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "steps: {}", m.len());
    for (name, v) in [
        ("mean_reward", &m.mean_reward),
        ("think_tokens", &m.think_tokens),
        ("clip_fraction", &m.clip_fraction),
        ("think_fraction", &m.think_fraction),
    ] {
        if let (Some(first), Some(last)) = (v.first(), v.last()) {
            let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            let _ = writeln!(s, "{name:<15} first {first:.4}  last {last:.4}  min {lo:.4}  max {hi:.4}");
        }
    }
    match detect_collapse(&m.think_tokens, window, threshold) {
        Ok(r) => {
            let _ = writeln!(
                s,
                "collapse: {} (window {window}, threshold {threshold}, start {:.4}, current {:.4}, ratio {:.4})",
                if r.collapsed { "yes" } else { "no" },
                r.start_mean,
                r.current_mean,
                r.ratio
            );
        }
        Err(e) => {
            let _ = writeln!(s, "collapse: not evaluated ({e})");
        }
    }
    s
}

/// Named series discovered in a run directory: `loop` from `metrics.csv`
/// and one per `ablation/<variant>/metrics.csv`, in name order.
pub fn discover_series(run_dir: &Path) -> Result<Vec<(String, TrainingMetrics)>, ReportError> {
    let mut out = Vec::new();
    let main = run_dir.join("metrics.csv");
    if main.is_file() {
        out.push(("loop".to_string(), read_metrics_csv(&main)?));
    }
    let abl = run_dir.join("ablation");
    if abl.is_dir() {
        let entries = std::fs::read_dir(&abl).map_err(|source| ReportError::Io { path: abl.display().to_string(), source })?;
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("metrics.csv").is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        for n in names {
            let m = read_metrics_csv(&abl.join(&n).join("metrics.csv"))?;
            out.push((n, m));
        }
    }
    Ok(out)
}

/// Aligned curve table: `iteration,<name>...`, blank where a series ended.
pub fn curve_csv(series: &[(String, TrainingMetrics)], pick: impl Fn(&TrainingMetrics) -> &[f64]) -> String {
    let mut s = String::from("iteration");
    for (n, _) in series {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    let rows = series.iter().map(|(_, m)| pick(m).len()).max().unwrap_or(0);
    for i in 0..rows {
        let _ = write!(s, "{}", i + 1);
        for (_, m) in series {
            s.push(',');
            if let Some(v) = pick(m).get(i) {
                let _ = write!(s, "{v}");
            }
        }
        s.push('\n');
    }
    s
}

/// Files written by [`write_report`], relative to the run directory.
pub const REWARD_CURVE: &str = "report/reward_curve.csv";
pub const THINK_CURVE: &str = "report/think_tokens_curve.csv";
pub const SUMMARY: &str = "report/summary.txt";
pub const COGNITION_TABLE: &str = "cognition/report.txt";
pub const COGNITION_ROWS: &str = "cognition/report.jsonl";

/// Write curve files and a summary for everything found in `run_dir`.
/// Returns the summary text.
pub fn write_report(run_dir: &Path, window: usize, threshold: f64) -> Result<String, ReportError> {
    let series = discover_series(run_dir)?;
    let cognition = std::fs::read_to_string(run_dir.join(COGNITION_TABLE)).ok();
    if series.is_empty() && cognition.is_none() {
        return Err(ReportError::Empty(run_dir.display().to_string()));
    }
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| ReportError::Io { path, source }
    };
    let dir = run_dir.join("report");
    std::fs::create_dir_all(&dir).map_err(io(&dir))?;
    let mut summary = String::new();
    if !series.is_empty() {
        for (rel, pick) in [
            (REWARD_CURVE, (|m: &TrainingMetrics| m.mean_reward.as_slice()) as fn(&TrainingMetrics) -> &[f64]),
            (THINK_CURVE, |m: &TrainingMetrics| m.think_tokens.as_slice()),
        ] {
            let path = run_dir.join(rel);
            std::fs::write(&path, curve_csv(&series, pick)).map_err(io(&path))?;
        }
        for (name, m) in &series {
            let _ = writeln!(summary, "== {name}");
            summary.push_str(&summarize(m, window, threshold));
        }
    }
    if let Some(table) = cognition {
        let _ = writeln!(summary, "== cognition");
        summary.push_str(&table);
    }
    let path = run_dir.join(SUMMARY);
    std::fs::write(&path, &summary).map_err(io(&path))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let mut m = TrainingMetrics::default();
        m.push(0.1 + 0.2, 3.0, 0.0, 1.0 / 3.0);
        m.push(1e-17, 2.5, 0.125, 0.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics_csv(&path, &m).unwrap();
        assert_eq!(read_metrics_csv(&path).unwrap(), m);
        assert!(metrics_csv_string(&m).starts_with(METRICS_HEADER));
    }

    #[test]
    fn bad_csv_is_reported_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, format!("{METRICS_HEADER}\n1,0.5,x,0,0\n")).unwrap();
        match read_metrics_csv(&path) {
            Err(ReportError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn aligned_curves_and_empty_dir() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(write_report(dir.path(), 2, 0.5), Err(ReportError::Empty(_))));
        let mut a = TrainingMetrics::default();
        let mut b = TrainingMetrics::default();
        for i in 0..3 {
            a.push(0.5, 6.0, 0.0, 1.0);
            if i < 2 {
                b.push(1.0, 0.0, 0.0, 0.0);
            }
        }
        for (n, m) in [("accuracy_only", &b), ("with_format_reward", &a)] {
            let d = dir.path().join("ablation").join(n);
            std::fs::create_dir_all(&d).unwrap();
            write_metrics_csv(&d.join("metrics.csv"), m).unwrap();
        }
        let summary = write_report(dir.path(), 2, 0.5).unwrap();
        assert!(summary.contains("== accuracy_only") && summary.contains("== with_format_reward"));
        let curve = std::fs::read_to_string(dir.path().join(THINK_CURVE)).unwrap();
        assert_eq!(curve, "iteration,accuracy_only,with_format_reward\n1,0,6\n2,0,6\n3,,6\n");
    }

    #[test]
    fn summary_mentions_collapse() {
        let mut m = TrainingMetrics::default();
        for i in 0..30 {
            m.push(0.5, if i < 15 { 6.0 } else { 1.0 }, 0.0, 1.0);
        }
        assert!(summarize(&m, 10, 0.5).contains("collapse: yes"));
        assert!(summarize(&TrainingMetrics::default(), 10, 0.5).contains("not evaluated"));
    }
}
