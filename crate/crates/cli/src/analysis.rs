//! Significance tests, arm comparison and the score-threshold breakdown.

use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::csv_io::EpisodeSummary;

pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn two_sided(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Ratio with the degenerate zero-variance cases resolved: no difference is
/// t = 0, a difference with no spread is infinitely significant.
fn ratio(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

/// Welch's unequal-variance test of `mean(b) − mean(a)`.
pub fn welch(a: &[f64], b: &[f64]) -> Option<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (std_dev(a).powi(2) / na, std_dev(b).powi(2) / nb);
    let se = (va + vb).sqrt();
    let t = ratio(mean(b) - mean(a), se);
    let df = if va + vb > 0.0 {
        (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0))
    } else {
        na + nb - 2.0
    };
    Some(TTest { t, df, p: two_sided(t, df) })
}

/// Paired test of `mean(b − a)`.
pub fn paired(a: &[f64], b: &[f64]) -> Option<TTest> {
    assert_eq!(a.len(), b.len(), "paired samples differ in length");
    if a.len() < 2 {
        return None;
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let n = d.len() as f64;
    let t = ratio(mean(&d), std_dev(&d) / n.sqrt());
    Some(TTest { t, df: n - 1.0, p: two_sided(t, n - 1.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Score,
    Mse,
    Psnr,
    Ssim,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Score, Metric::Mse, Metric::Psnr, Metric::Ssim];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Score => "score",
            Metric::Mse => "mse",
            Metric::Psnr => "psnr",
            Metric::Ssim => "ssim",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Mse)
    }

    pub fn of(self, e: &EpisodeSummary) -> f64 {
        match self {
            Metric::Score => e.score,
            Metric::Mse => e.mse(),
            Metric::Psnr => e.psnr(),
            Metric::Ssim => e.ssim(),
        }
    }

    /// Whether a difference `ii − baseline` points the right way.
    pub fn improves(self, diff: f64) -> bool {
        if self.higher_is_better() {
            diff > 0.0
        } else {
            diff < 0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: Metric,
    pub baseline_mean: f64,
    pub baseline_sd: f64,
    pub ii_mean: f64,
    pub ii_sd: f64,
    pub welch: Option<TTest>,
    pub paired: Option<TTest>,
    pub pairs: usize,
}

impl MetricRow {
    pub fn diff(&self) -> f64 {
        self.ii_mean - self.baseline_mean
    }

    /// Paired p-value when seeds match, otherwise Welch.
    pub fn p(&self) -> Option<f64> {
        self.paired.or(self.welch).map(|t| t.p)
    }

    pub fn significant(&self) -> bool {
        self.p().is_some_and(|p| p < SIGNIFICANCE)
    }

    pub fn significant_improvement(&self) -> bool {
        self.significant() && self.metric.improves(self.diff())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bucket {
    pub threshold: f64,
    pub episodes: usize,
    /// Share of pairs whose baseline score is at or below the threshold.
    pub fraction: f64,
    pub baseline_mean: Option<f64>,
    pub ii_mean: Option<f64>,
    pub test: Option<TTest>,
}

impl Bucket {
    pub fn significant(&self) -> bool {
        self.test.is_some_and(|t| t.p < SIGNIFICANCE)
    }
}

/// Immediate-impact statistics over all refined steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Immediate {
    pub steps: usize,
    pub mean: f64,
    /// Measured over all environment steps.
    pub sd_steps: f64,
    /// Measured across per-episode means.
    pub sd_episodes: f64,
    /// One-sample test on per-episode means against zero.
    pub test: Option<TTest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSummary {
    pub baseline_episodes: usize,
    pub ii_episodes: usize,
    pub metrics: Vec<MetricRow>,
    pub buckets: Vec<Bucket>,
    pub immediate: Option<Immediate>,
    /// Fewer than two episodes in an arm; no p-values.
    pub insufficient: bool,
}

impl ComparisonSummary {
    pub fn row(&self, m: Metric) -> &MetricRow {
        self.metrics.iter().find(|r| r.metric == m).expect("every metric is compared")
    }
}

/// Pairs episodes sharing a seed, in ascending seed order.
pub fn match_seeds<'a>(a: &'a [EpisodeSummary], b: &'a [EpisodeSummary]) -> Vec<(&'a EpisodeSummary, &'a EpisodeSummary)> {
    let by_seed: BTreeMap<u64, &EpisodeSummary> = b.iter().map(|e| (e.seed, e)).collect();
    let mut out: Vec<_> = a.iter().filter_map(|x| by_seed.get(&x.seed).map(|y| (x, *y))).collect();
    out.sort_by_key(|(x, _)| x.seed);
    out
}

pub fn one_sample(xs: &[f64]) -> Option<TTest> {
    let zeros = vec![0.0; xs.len()];
    paired(&zeros, xs)
}

pub fn immediate(ii: &[EpisodeSummary]) -> Option<Immediate> {
    let steps: Vec<f64> = ii.iter().flat_map(|e| e.immediate.iter().copied()).collect();
    if steps.is_empty() {
        return None;
    }
    let per_episode: Vec<f64> = ii.iter().filter_map(EpisodeSummary::immediate_mse).collect();
    Some(Immediate {
        steps: steps.len(),
        mean: mean(&steps),
        sd_steps: std_dev(&steps),
        sd_episodes: std_dev(&per_episode),
        test: one_sample(&per_episode),
    })
}

pub fn compare(baseline: &[EpisodeSummary], ii: &[EpisodeSummary], thresholds: &[f64]) -> ComparisonSummary {
    let pairs = match_seeds(baseline, ii);
    let metrics = Metric::ALL
        .iter()
        .map(|&m| {
            let a: Vec<f64> = baseline.iter().map(|e| m.of(e)).collect();
            let b: Vec<f64> = ii.iter().map(|e| m.of(e)).collect();
            let pa: Vec<f64> = pairs.iter().map(|(x, _)| m.of(x)).collect();
            let pb: Vec<f64> = pairs.iter().map(|(_, y)| m.of(y)).collect();
            MetricRow {
                metric: m,
                baseline_mean: if a.is_empty() { f64::NAN } else { mean(&a) },
                baseline_sd: std_dev(&a),
                ii_mean: if b.is_empty() { f64::NAN } else { mean(&b) },
                ii_sd: std_dev(&b),
                welch: welch(&a, &b),
                paired: paired(&pa, &pb),
                pairs: pairs.len(),
            }
        })
        .collect();
    ComparisonSummary {
        baseline_episodes: baseline.len(),
        ii_episodes: ii.len(),
        metrics,
        buckets: threshold_analysis(&pairs, thresholds),
        immediate: immediate(ii),
        insufficient: baseline.len() < 2 || ii.len() < 2,
    }
}

/// For each threshold, the matched pairs whose baseline score is at or
/// below it, with arm means and a paired test on scores.
pub fn threshold_analysis(pairs: &[(&EpisodeSummary, &EpisodeSummary)], thresholds: &[f64]) -> Vec<Bucket> {
    thresholds
        .iter()
        .map(|&threshold| {
            let inside: Vec<_> = pairs.iter().filter(|(b, _)| b.score <= threshold).collect();
            let a: Vec<f64> = inside.iter().map(|(b, _)| b.score).collect();
            let c: Vec<f64> = inside.iter().map(|(_, i)| i.score).collect();
            Bucket {
                threshold,
                episodes: inside.len(),
                fraction: if pairs.is_empty() { 0.0 } else { inside.len() as f64 / pairs.len() as f64 },
                baseline_mean: (!a.is_empty()).then(|| mean(&a)),
                ii_mean: (!c.is_empty()).then(|| mean(&c)),
                test: paired(&a, &c),
            }
        })
        .collect()
}

/// Median of the baseline scores of `pairs`.
pub fn median_baseline(pairs: &[(&EpisodeSummary, &EpisodeSummary)]) -> f64 {
    let mut s: Vec<f64> = pairs.iter().map(|(b, _)| b.score).collect();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Splits pairs into those with baseline score below the median and the
/// rest, returning the `ii − baseline` score differences of each half.
pub fn median_split(pairs: &[(&EpisodeSummary, &EpisodeSummary)]) -> (Vec<f64>, Vec<f64>) {
    let med = median_baseline(pairs);
    let mut below = Vec::new();
    let mut above = Vec::new();
    for (b, i) in pairs {
        let d = i.score - b.score;
        if b.score < med {
            below.push(d);
        } else {
            above.push(d);
        }
    }
    (below, above)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestLambda {
    /// `None` when no rollout length improved significantly.
    pub lambda: Option<usize>,
    pub value: f64,
}

/// Best rollout length for one metric: the best significant improvement
/// over the baseline, else the baseline value.
pub fn best_lambda(cells: &[(usize, &ComparisonSummary)], metric: Metric) -> Option<BestLambda> {
    let baseline = cells.first()?.1.row(metric).baseline_mean;
    let better = |x: f64, y: f64| if metric.higher_is_better() { x > y } else { x < y };
    let mut best = BestLambda { lambda: None, value: baseline };
    for (lambda, summary) in cells {
        let row = summary.row(metric);
        if row.significant_improvement() && (best.lambda.is_none() || better(row.ii_mean, best.value)) {
            best = BestLambda { lambda: Some(*lambda), value: row.ii_mean };
        }
    }
    Some(best)
}

/// Aligned plain-text rendering of a comparison.
pub fn render(s: &ComparisonSummary) -> String {
    let fmt_p = |p: Option<f64>| p.map_or("-".to_string(), |p| format!("{p:.4}"));
    let mut out = format!(
        "{:<8}{:>12}{:>10}{:>12}{:>10}{:>12}{:>10}{:>10}  sig\n",
        "metric", "baseline", "sd", "ii", "sd", "diff", "p_pair", "p_welch"
    );
    for r in &s.metrics {
        out.push_str(&format!(
            "{:<8}{:>12.5}{:>10.5}{:>12.5}{:>10.5}{:>12.5}{:>10}{:>10}  {}\n",
            r.metric.name(),
            r.baseline_mean,
            r.baseline_sd,
            r.ii_mean,
            r.ii_sd,
            r.diff(),
            fmt_p(r.paired.map(|t| t.p)),
            fmt_p(r.welch.map(|t| t.p)),
            if r.significant() { "*" } else { "" }
        ));
    }
    if let Some(im) = s.immediate {
        out.push_str(&format!(
            "immediate mse impact {:.6} (sd over steps {:.6}, across episodes {:.6}, p {})\n",
            im.mean,
            im.sd_steps,
            im.sd_episodes,
            fmt_p(im.test.map(|t| t.p))
        ));
    }
    out.push_str(&format!("\n{:>10}{:>10}{:>12}{:>12}{:>10}\n", "threshold", "% eps", "baseline", "ii", "p"));
    for b in &s.buckets {
        let m = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let t = if b.threshold.is_infinite() { "all".to_string() } else { format!("{}", b.threshold) };
        out.push_str(&format!(
            "{:>10}{:>10.1}{:>12}{:>12}{:>10}{}\n",
            t,
            100.0 * b.fraction,
            m(b.baseline_mean),
            m(b.ii_mean),
            fmt_p(b.test.map(|t| t.p)),
            if b.significant() { " *" } else { "" }
        ));
    }
    if s.insufficient {
        out.push_str("fewer than two episodes in an arm: no p-values\n");
    }
    out
}
