use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::metrics::{compute_metrics, MetricKind, Metrics};
use super::module::ReasoningModule;
use super::record::EpisodeRecord;
use super::HarnessError;

/// Flat per-episode metrics row, the unit of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub env: u8,
    pub module: ReasoningModule,
    pub seed: u64,
    pub t_ab: Option<usize>,
    pub t_50: Option<usize>,
    pub t_95: Option<usize>,
    pub ttpl: f64,
    pub completed: bool,
    pub tainted: bool,
}

impl MetricRow {
    pub fn new(record: &EpisodeRecord, m: &Metrics) -> Self {
        Self {
            env: record.header.scenario.environment,
            module: record.header.module,
            seed: record.header.scenario.seed,
            t_ab: m.t_ab,
            t_50: m.t_50,
            t_95: m.t_95,
            ttpl: m.ttpl,
            completed: m.completed,
            tainted: record.outcome.tainted,
        }
    }

    pub fn of(record: &EpisodeRecord) -> Self {
        Self::new(record, &compute_metrics(record))
    }

    pub fn metrics(&self) -> Metrics {
        Metrics { t_ab: self.t_ab, t_50: self.t_50, t_95: self.t_95, ttpl: self.ttpl, completed: self.completed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStat {
    /// `None` when fewer than two values are available.
    pub mean: Option<f64>,
    /// Sample standard deviation (n - 1).
    pub std: Option<f64>,
    pub count: usize,
    /// Records in the cell without this metric.
    pub excluded: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl MetricStat {
    fn from_values(values: &[f64], records: usize) -> Self {
        let count = values.len();
        let excluded = records - count;
        if count < 2 {
            return Self {
                mean: None,
                std: None,
                count,
                excluded,
                note: Some(format!("missing: {count} value(s), need 2")),
            };
        }
        let (mean, std) = mean_std(values);
        let note = (excluded > 0).then(|| format!("{excluded} record(s) excluded"));
        Self { mean: Some(mean), std: Some(std), count, excluded, note }
    }
}

/// Sample mean and (n - 1) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub env: u8,
    pub module: ReasoningModule,
    pub records: usize,
    pub stats: BTreeMap<MetricKind, MetricStat>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub cells: Vec<SummaryCell>,
}

/// Groups rows by environment and module; T_AB only applies where it was
/// measured at all.
pub fn aggregate(rows: &[MetricRow]) -> Summary {
    let mut groups: BTreeMap<(u8, ReasoningModule), Vec<&MetricRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.env, r.module)).or_default().push(r);
    }
    let cells = groups
        .into_iter()
        .map(|((env, module), rows)| {
            let stats = MetricKind::ALL
                .into_iter()
                .map(|kind| {
                    let values: Vec<f64> = rows.iter().filter_map(|r| r.metrics().get(kind)).collect();
                    (kind, MetricStat::from_values(&values, rows.len()))
                })
                .collect();
            SummaryCell { env, module, records: rows.len(), stats }
        })
        .collect();
    Summary { cells }
}

impl Summary {
    pub fn cell(&self, env: u8, module: ReasoningModule) -> Option<&SummaryCell> {
        self.cells.iter().find(|c| c.env == env && c.module == module)
    }

    pub fn envs(&self) -> Vec<u8> {
        let mut e: Vec<u8> = self.cells.iter().map(|c| c.env).collect();
        e.dedup();
        e
    }

    pub fn modules(&self) -> Vec<ReasoningModule> {
        let mut m: Vec<ReasoningModule> = self.cells.iter().map(|c| c.module).collect();
        m.sort();
        m.dedup();
        m
    }

    /// Text table: one block per environment, one row per metric, one column
    /// per module, cells as `mean±std`.
    pub fn table(&self) -> String {
        let modules = self.modules();
        let mut out = String::new();
        let _ = write!(out, "{:<5} {:<6}", "Env", "Metric");
        for m in &modules {
            let _ = write!(out, " {:>17}", m.heading());
        }
        out.push('\n');
        for env in self.envs() {
            for kind in MetricKind::ALL {
                let present = modules.iter().any(|&m| self.cell(env, m).is_some_and(|c| c.stats[&kind].count > 0));
                if kind == MetricKind::TAb && !present {
                    continue;
                }
                let _ = write!(out, "{:<5} {:<6}", env, kind.name());
                for &m in &modules {
                    let text = match self.cell(env, m).map(|c| &c.stats[&kind]) {
                        Some(MetricStat { mean: Some(mu), std: Some(sd), .. }) if kind == MetricKind::Ttpl => {
                            format!("{mu:.3}±{sd:.3}")
                        }
                        Some(MetricStat { mean: Some(mu), std: Some(sd), .. }) => format!("{mu:.0}±{sd:.0}"),
                        Some(s) => format!("- (n={})", s.count),
                        None => "-".to_string(),
                    };
                    let _ = write!(out, " {text:>17}");
                }
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
    pub mean_a: f64,
    pub mean_b: f64,
}

pub const MIN_SAMPLES: usize = 5;

/// Welch's unequal-variance t-test of A against B.
pub fn compare_modules(a: &[f64], b: &[f64]) -> Result<WelchTest, HarnessError> {
    if a.len() < MIN_SAMPLES || b.len() < MIN_SAMPLES {
        return Err(HarnessError::Stats(format!(
            "need at least {MIN_SAMPLES} samples per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(HarnessError::Stats("samples must be finite".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mean_a, sa) = mean_std(a);
    let (mean_b, sb) = mean_std(b);
    let (qa, qb) = (sa * sa / na, sb * sb / nb);
    let se2 = qa + qb;
    if se2 == 0.0 {
        let (t, p) = if mean_a == mean_b { (0.0, 1.0) } else { ((mean_a - mean_b).signum() * f64::INFINITY, 0.0) };
        return Ok(WelchTest { t, df: na + nb - 2.0, p, mean_a, mean_b });
    }
    let t = (mean_a - mean_b) / se2.sqrt();
    let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| HarnessError::Stats(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(WelchTest { t, df, p, mean_a, mean_b })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(env: u8, module: ReasoningModule, t_50: Option<usize>) -> MetricRow {
        MetricRow { env, module, seed: 0, t_ab: None, t_50, t_95: None, ttpl: 1.0, completed: false, tainted: false }
    }

    #[test]
    fn two_records_mean_std() {
        let s = aggregate(&[row(1, ReasoningModule::Rule, Some(100)), row(1, ReasoningModule::Rule, Some(200))]);
        let st = &s.cells[0].stats[&MetricKind::T50];
        assert_eq!(st.mean, Some(150.0));
        assert!((st.std.unwrap() - 70.710678118654755).abs() < 1e-9);
    }

    #[test]
    fn single_record_is_missing() {
        let s = aggregate(&[row(2, ReasoningModule::Random, Some(100))]);
        let st = &s.cells[0].stats[&MetricKind::T50];
        assert_eq!((st.mean, st.count), (None, 1));
        assert!(st.note.as_deref().unwrap().contains("missing"));
    }

    #[test]
    fn incomplete_metrics_are_counted_out() {
        let rows = [
            row(1, ReasoningModule::Rule, Some(10)),
            row(1, ReasoningModule::Rule, None),
            row(1, ReasoningModule::Rule, Some(30)),
        ];
        let st = &aggregate(&rows).cells[0].stats[&MetricKind::T50];
        assert_eq!((st.mean, st.count, st.excluded), (Some(20.0), 2, 1));
    }

    #[test]
    fn table_layout() {
        let mut rows = Vec::new();
        for env in 1..=4u8 {
            for m in [ReasoningModule::Random, ReasoningModule::None, ReasoningModule::Rule] {
                for k in 0..3 {
                    let mut r = row(env, m, Some(100 + k));
                    if env % 2 == 0 {
                        r.t_ab = Some(50 + k);
                    }
                    rows.push(r);
                }
            }
        }
        let table = aggregate(&rows).table();
        let lines: Vec<&str> = table.lines().collect();
        assert!(lines[0].starts_with("Env") && lines[0].contains("RR") && lines[0].contains("RULE"));
        // T_50, T_95, TTPL everywhere; T_AB only for the bleeding environments.
        assert_eq!(lines.len(), 1 + 4 * 3 + 2);
        assert_eq!(lines.iter().filter(|l| l.contains("T_AB")).count(), 2);
    }

    #[test]
    fn identical_samples_p_one() {
        let a = [3.0, 3.0, 3.0, 3.0, 3.0];
        let w = compare_modules(&a, &a).unwrap();
        assert_eq!((w.t, w.p), (0.0, 1.0));
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((compare_modules(&v, &v).unwrap().p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn separated_samples() {
        let a: Vec<f64> = (1..=20).map(f64::from).collect();
        let b: Vec<f64> = (101..=120).map(f64::from).collect();
        let w = compare_modules(&a, &b).unwrap();
        assert!(w.p < 1e-6 && w.t < 0.0);
    }

    /// Two-sided tail of Student's t by Simpson quadrature of the density.
    fn t_tail_quadrature(t: f64, df: f64) -> f64 {
        use statrs::function::gamma::ln_gamma;
        let c = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp() / (df * std::f64::consts::PI).sqrt();
        let pdf = |x: f64| c * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
        let n = 20_000;
        let h = t.abs() / n as f64;
        let mut acc = pdf(0.0) + pdf(t.abs());
        for i in 1..n {
            acc += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        2.0 * (0.5 - acc * h / 3.0)
    }

    #[test]
    fn welch_reference_value() {
        // Means 3 and 6.4, sample variances 2.5 and 14.8, n = 5 each.
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 4.0, 6.0, 8.0, 12.0];
        let w = compare_modules(&a, &b).unwrap();
        let se2: f64 = 2.5 / 5.0 + 14.8 / 5.0;
        assert!((w.t - (3.0 - 6.4) / se2.sqrt()).abs() < 1e-12);
        let df = se2 * se2 / (0.5f64.powi(2) / 4.0 + 2.96f64.powi(2) / 4.0);
        assert!((w.df - df).abs() < 1e-12);
        assert!((w.p - t_tail_quadrature(w.t, w.df)).abs() < 1e-9);
    }

    #[test]
    fn too_few_samples() {
        assert!(compare_modules(&[1.0; 4], &[1.0; 5]).is_err());
    }
}
