use std::io::Write;
use std::path::Path;

use crate::analysis::{compare, ComparisonSummary, TTest};
use crate::csv_io::{load_results, Meta};
use crate::error::{CliError, Result};

fn p(t: Option<TTest>) -> String {
    t.map(|t| format!("{}", t.p)).unwrap_or_default()
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

/// Writes a comparison as CSV: metric rows, the immediate-impact row and one
/// row per threshold bucket.
pub fn save_summary(path: &Path, meta: &Meta, s: &ComparisonSummary) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(CliError::io(path))?;
    let mut text = format!("{}\n", meta.line());
    text.push_str("section,name,episodes,fraction,baseline_mean,baseline_sd,ii_mean,ii_sd,diff,p_paired,p_welch,significant\n");
    for r in &s.metrics {
        text.push_str(&format!(
            "metric,{},{},,{},{},{},{},{},{},{},{}\n",
            r.metric.name(),
            r.pairs,
            r.baseline_mean,
            r.baseline_sd,
            r.ii_mean,
            r.ii_sd,
            r.diff(),
            p(r.paired),
            p(r.welch),
            r.significant()
        ));
    }
    if let Some(im) = s.immediate {
        text.push_str(&format!(
            "immediate,mse_steps,{},,,,{},{},{},{},,{}\n",
            im.steps,
            im.mean,
            im.sd_steps,
            im.mean,
            p(im.test),
            im.test.is_some_and(|t| t.p < crate::analysis::SIGNIFICANCE)
        ));
        text.push_str(&format!("immediate,mse_episodes,,,,,{},{},,,,\n", im.mean, im.sd_episodes));
    }
    for b in &s.buckets {
        let diff = b.baseline_mean.zip(b.ii_mean).map(|(a, c)| c - a);
        text.push_str(&format!(
            "bucket,{},{},{},{},,{},,{},{},,{}\n",
            b.threshold,
            b.episodes,
            b.fraction,
            opt(b.baseline_mean),
            opt(b.ii_mean),
            opt(diff),
            p(b.test),
            b.significant()
        ));
    }
    f.write_all(text.as_bytes()).map_err(CliError::io(path))
}

/// Compares two results files. With `out`, also writes `summary.csv` there.
pub fn cmd_compare(baseline: &Path, ii: &Path, thresholds: &[f64], out: Option<&Path>) -> Result<ComparisonSummary> {
    let (mb, a) = load_results(baseline)?;
    let (mi, b) = load_results(ii)?;
    if a.is_empty() || b.is_empty() {
        return Err(CliError::Data("a results file holds no episodes".into()));
    }
    let summary = compare(&a, &b, thresholds);
    if let Some(dir) = out {
        super::ensure_dir(dir)?;
        let meta = Meta::new(mb.config_hash.clone()).with("kind", "summary").with("ii_config", &mi.config_hash);
        save_summary(&dir.join("summary.csv"), &meta, &summary)?;
    }
    Ok(summary)
}
