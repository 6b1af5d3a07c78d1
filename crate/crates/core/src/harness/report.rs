use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Once;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::MetricKind;
use super::module::ReasoningModule;
use super::record::EpisodeRecord;
use super::stats::{aggregate, mean_std, MetricRow, Summary};
use super::HarnessError;

pub const METRICS_CSV: &str = "metrics.csv";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const TABLE_TXT: &str = "table.txt";
pub const RECORDS_DIR: &str = "records";

const METRICS_HEADER: [&str; 9] = ["env", "module", "seed", "t_ab", "t_50", "t_95", "ttpl", "completed", "tainted"];
const SUMMARY_HEADER: [&str; 9] = ["env", "module", "records", "metric", "mean", "std", "count", "excluded", "note"];

/// Most points drawn per curve.
const PLOT_POINTS: usize = 400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub metrics_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub summary_json: PathBuf,
    pub table: PathBuf,
    pub plots: Vec<PathBuf>,
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    HarnessError::Csv(format!("{}: {e}", path.display()))
}

pub fn write_metrics_csv(rows: &[MetricRow], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(METRICS_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(HarnessError::Csv(format!("{}: unexpected header {:?}", path.display(), header)));
    }
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

fn write_summary_csv(summary: &Summary, path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(SUMMARY_HEADER).map_err(|e| csv_err(path, e))?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in &summary.cells {
        for kind in MetricKind::ALL {
            let s = &c.stats[&kind];
            w.write_record([
                c.env.to_string(),
                c.module.tag().to_string(),
                c.records.to_string(),
                kind.name().to_string(),
                opt(s.mean),
                opt(s.std),
                s.count.to_string(),
                s.excluded.to_string(),
                s.note.clone().unwrap_or_default(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Mean and sample std of the remaining fraction per step across records.
/// Records that ended early hold their last value.
pub fn remaining_band(records: &[&EpisodeRecord]) -> Vec<(usize, f64, f64)> {
    let horizon = records.iter().filter_map(|r| r.samples.last().map(|s| s.step)).max().unwrap_or(0);
    let stride = (horizon / PLOT_POINTS).max(1);
    let mut out = Vec::new();
    let mut at = vec![0usize; records.len()];
    let mut t = 0;
    while t <= horizon {
        let values: Vec<f64> = records
            .iter()
            .zip(at.iter_mut())
            .filter(|(r, _)| !r.samples.is_empty())
            .map(|(r, i)| {
                while *i + 1 < r.samples.len() && r.samples[*i + 1].step <= t {
                    *i += 1;
                }
                r.samples[*i].remaining
            })
            .collect();
        if !values.is_empty() {
            let (m, s) = mean_std(&values);
            out.push((t, m, s));
        }
        if t == horizon {
            break;
        }
        t = (t + stride).min(horizon);
    }
    out
}

fn register_font() {
    static FONT: Once = Once::new();
    FONT.call_once(|| {
        let bytes: &'static [u8] = include_bytes!("../../assets/DejaVuSans.ttf");
        if plotters::style::register_font("sans-serif", FontStyle::Normal, bytes).is_err() {
            log::warn!("bundled plot font rejected; labels will be missing");
        }
    });
}

fn palette(module: ReasoningModule) -> RGBColor {
    match module {
        ReasoningModule::Random => RGBColor(214, 96, 77),
        ReasoningModule::None => RGBColor(120, 120, 120),
        ReasoningModule::LlmWithoutContext => RGBColor(67, 147, 195),
        ReasoningModule::LlmWithContext => RGBColor(33, 102, 172),
        ReasoningModule::Rule => RGBColor(27, 158, 119),
        ReasoningModule::RuleClotFirst => RGBColor(217, 95, 2),
    }
}

/// Blood-remaining curves of one environment: one mean line and one shaded
/// standard-deviation band per module.
pub fn plot_remaining(env: u8, records: &[&EpisodeRecord], path: &Path) -> Result<usize, HarnessError> {
    let mut by_module: BTreeMap<ReasoningModule, Vec<&EpisodeRecord>> = BTreeMap::new();
    for r in records {
        by_module.entry(r.header.module).or_default().push(r);
    }
    let bands: Vec<(ReasoningModule, Vec<(usize, f64, f64)>)> =
        by_module.into_iter().map(|(m, rs)| (m, remaining_band(&rs))).collect();
    let horizon = bands.iter().flat_map(|(_, b)| b.last().map(|p| p.0)).max().unwrap_or(1).max(1);
    let plot_err = |e: String| HarnessError::Plot(format!("{}: {e}", path.display()));
    register_font();

    let root = SVGBackend::new(path, (900, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("Environment {env}: blood remaining"), ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(0f64..horizon as f64, 0f64..100f64)
        .map_err(|e| plot_err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc("time step")
        .y_desc("blood remaining (%)")
        .draw()
        .map_err(|e| plot_err(e.to_string()))?;
    for (module, band) in &bands {
        let color = palette(*module);
        let upper = band.iter().map(|&(t, m, s)| (t as f64, ((m + s) * 100.0).min(100.0)));
        let lower = band.iter().rev().map(|&(t, m, s)| (t as f64, ((m - s) * 100.0).max(0.0)));
        chart
            .draw_series(std::iter::once(Polygon::new(upper.chain(lower).collect::<Vec<_>>(), color.mix(0.18))))
            .map_err(|e| plot_err(e.to_string()))?;
        chart
            .draw_series(LineSeries::new(band.iter().map(|&(t, m, _)| (t as f64, m * 100.0)), color.stroke_width(2)))
            .map_err(|e| plot_err(e.to_string()))?
            .label(module.heading())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.85))
        .draw()
        .map_err(|e| plot_err(e.to_string()))?;
    root.present().map_err(|e| plot_err(e.to_string()))?;
    Ok(bands.len())
}

/// Writes the metrics CSV, the summary as CSV, JSON and a text table, and
/// one blood-remaining plot per environment present in `records`.
pub fn emit_report(
    summary: &Summary,
    rows: &[MetricRow],
    records: &[EpisodeRecord],
    out_dir: &Path,
) -> Result<ReportBundle, HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let metrics_csv = out_dir.join(METRICS_CSV);
    write_metrics_csv(rows, &metrics_csv)?;
    let summary_csv = out_dir.join(SUMMARY_CSV);
    write_summary_csv(summary, &summary_csv)?;
    let summary_json = out_dir.join(SUMMARY_JSON);
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    std::fs::write(&summary_json, json + "\n").map_err(|e| HarnessError::io(&summary_json, e))?;
    let table = out_dir.join(TABLE_TXT);
    std::fs::write(&table, summary.table()).map_err(|e| HarnessError::io(&table, e))?;

    let mut by_env: BTreeMap<u8, Vec<&EpisodeRecord>> = BTreeMap::new();
    for r in records {
        by_env.entry(r.header.scenario.environment).or_default().push(r);
    }
    let mut plots = Vec::new();
    for (env, rs) in by_env {
        let path = out_dir.join(format!("remaining_env{env}.svg"));
        plot_remaining(env, &rs, &path)?;
        plots.push(path);
    }
    Ok(ReportBundle { metrics_csv, summary_csv, summary_json, table, plots })
}

fn batch_key(r: &EpisodeRecord) -> (u8, u64, Option<usize>) {
    let module = ReasoningModule::ALL.iter().position(|m| *m == r.header.module);
    (r.header.scenario.environment, r.header.scenario.seed, module)
}

/// Loads every `*.ndjson` record under `dir`, ordered by environment, scene
/// seed, then module.
pub fn load_records(dir: &Path) -> Result<Vec<EpisodeRecord>, HarnessError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ndjson"))
        .collect();
    paths.sort();
    let mut records = paths.iter().map(|p| EpisodeRecord::load(p)).collect::<Result<Vec<_>, _>>()?;
    records.sort_by_key(batch_key);
    Ok(records)
}

/// Persists records under `out_dir/records` and emits the report next to them.
pub fn write_run(records: &[EpisodeRecord], out_dir: &Path) -> Result<ReportBundle, HarnessError> {
    let dir = out_dir.join(RECORDS_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let mut records = records.to_vec();
    records.sort_by_key(batch_key);
    for r in &records {
        r.save(&dir.join(r.file_name()))?;
    }
    let rows: Vec<MetricRow> = records.iter().map(MetricRow::of).collect();
    emit_report(&aggregate(&rows), &rows, &records, out_dir)
}

/// Rebuilds the report of a previous run from its persisted records.
pub fn report_dir(run_dir: &Path) -> Result<ReportBundle, HarnessError> {
    let records = load_records(&run_dir.join(RECORDS_DIR))?;
    let rows: Vec<MetricRow> = records.iter().map(MetricRow::of).collect();
    emit_report(&aggregate(&rows), &rows, &records, run_dir)
}
