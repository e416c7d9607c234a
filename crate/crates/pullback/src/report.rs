//! Evaluation reports: JSON (schema `pullback-eval/1`) with a CSV mirror.

use std::path::Path;

use pullback_core::eval::{ErrorStats, EvalConfig, EvalReport};
use serde::Serialize;

use crate::config::TrainConfigFile;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_csv};

pub const EVAL_SCHEMA: &str = "pullback-eval/1";

#[derive(Serialize)]
struct Stats {
    mean: f64,
    std: f64,
    pairs: usize,
    excluded: usize,
}

impl From<&ErrorStats> for Stats {
    fn from(s: &ErrorStats) -> Self {
        Stats {
            mean: s.mean,
            std: s.std,
            pairs: s.pairs,
            excluded: s.excluded,
        }
    }
}

#[derive(Serialize)]
struct EvalSettings {
    pairs: usize,
    steps: usize,
    perturbation: f64,
    test_fraction: f64,
    seed: u64,
}

#[derive(Serialize)]
struct CellOut {
    dataset: String,
    variant: &'static str,
    seed: u64,
    train_config: TrainConfigFile,
    geodesic: Option<Stats>,
    variation: Option<Stats>,
    error: Option<String>,
}

#[derive(Serialize)]
struct SummaryOut {
    dataset: String,
    variant: &'static str,
    seeds: usize,
    geodesic_mean: f64,
    geodesic_std: f64,
    variation_mean: f64,
    variation_std: f64,
}

#[derive(Serialize)]
struct ReportOut {
    schema: &'static str,
    eval: EvalSettings,
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<serde_json::Value>,
    cells: Vec<CellOut>,
    summary: Vec<SummaryOut>,
}

fn settings(c: &EvalConfig) -> EvalSettings {
    EvalSettings {
        pairs: c.pairs,
        steps: c.steps,
        perturbation: c.perturbation,
        test_fraction: c.test_fraction,
        seed: c.seed,
    }
}

/// JSON document for `report`; `data` carries extra settings such as the
/// dataset generator parameters.
pub fn report_to_json(report: &EvalReport, data: Option<serde_json::Value>) -> String {
    let cells = report
        .cells
        .iter()
        .map(|c| {
            let (geodesic, variation, error) = match &c.outcome {
                Ok((g, v)) => (Some(g.into()), Some(v.into()), None),
                Err(e) => (None, None, Some(e.clone())),
            };
            CellOut {
                dataset: c.dataset.clone(),
                variant: c.variant.name(),
                seed: c.seed,
                train_config: TrainConfigFile::from_config(&c.config, Some(&c.dataset)),
                geodesic,
                variation,
                error,
            }
        })
        .collect();
    let summary = report
        .summary()
        .into_iter()
        .map(|s| SummaryOut {
            dataset: s.dataset,
            variant: s.variant.name(),
            seeds: s.seeds,
            geodesic_mean: s.geodesic_mean,
            geodesic_std: s.geodesic_std,
            variation_mean: s.variation_mean,
            variation_std: s.variation_std,
        })
        .collect();
    let out = ReportOut {
        schema: EVAL_SCHEMA,
        eval: settings(&report.config),
        data,
        cells,
        summary,
    };
    serde_json::to_string_pretty(&out).expect("report serializes")
}

pub const CSV_HEADER: [&str; 10] = [
    "dataset",
    "variant",
    "seed",
    "geodesic_mean",
    "geodesic_std",
    "variation_mean",
    "variation_std",
    "pairs",
    "excluded",
    "error",
];

/// Writes `<stem>.json` and `<stem>.csv` next to each other.
pub fn save_report(json_path: &Path, report: &EvalReport, data: Option<serde_json::Value>) -> Result<()> {
    let text = report_to_json(report, data);
    std::fs::write(json_path, text + "\n").map_err(|e| Error::io(json_path, e))?;
    let csv_path = json_path.with_extension("csv");
    let rows = report.cells.iter().map(|c| {
        let mut row = vec![c.dataset.clone(), c.variant.name().to_string(), c.seed.to_string()];
        match &c.outcome {
            Ok((g, v)) => {
                row.extend([g.mean, g.std, v.mean, v.std].map(fmt_f64));
                row.extend([g.pairs.to_string(), g.excluded.to_string(), String::new()]);
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push(e.clone());
            }
        }
        row
    });
    let header: Vec<String> = CSV_HEADER.iter().map(|s| s.to_string()).collect();
    write_csv(&csv_path, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pullback_core::eval::TableCell;
    use pullback_core::training::{TrainConfig, Variant};

    #[test]
    fn report_records_every_setting() {
        let stats = ErrorStats {
            mean: 0.5,
            std: 0.1,
            pairs: 3,
            excluded: 0,
        };
        let cell = |variant, outcome| TableCell {
            dataset: "banana".into(),
            variant,
            seed: 1,
            config: TrainConfig::default().with_variant(variant),
            outcome,
        };
        let report = EvalReport {
            config: EvalConfig::default(),
            cells: vec![
                cell(Variant::Ours, Ok((stats, stats))),
                cell(Variant::StandardNf, Err("boom".into())),
            ],
        };
        let v: serde_json::Value = serde_json::from_str(&report_to_json(&report, None)).unwrap();
        assert_eq!(v["schema"], EVAL_SCHEMA);
        assert_eq!(v["eval"]["pairs"], 100);
        assert_eq!(v["cells"][0]["train_config"]["learning_rate"], 3e-4);
        assert_eq!(v["cells"][1]["error"], "boom");
        assert_eq!(v["summary"].as_array().unwrap().len(), 1);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        save_report(&path, &report, None).unwrap();
        let csv = std::fs::read_to_string(path.with_extension("csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("banana,ours,1,0.5,0.1"));
    }
}
