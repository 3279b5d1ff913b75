//! Variant sweeps over shared splits and seeds, summarized as a matrix of
//! RSD errors (rows: metric x experience group, columns: variants).

use std::collections::BTreeMap;
use std::path::Path;

use catanet_core::baselines::{build_variant, VariantId};
use catanet_core::dataset::{split_dataset, VideoSequence};
use catanet_core::evaluation::{write_report, MetricsReport, GROUPS};
use catanet_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::pipeline::{evaluate, save_trained, train_variant, TrainedVariant, VideoPredictor};

pub const METRICS: [&str; 4] = ["MAE@Hyd", "MAE-5", "MAE-2", "MAE"];

/// Group mean of `metric` in `report`; `None` when the group is omitted or
/// the metric is undefined for every video in it.
pub fn metric_value(report: &MetricsReport, metric: &str, group: &str) -> Option<f64> {
    let m = report.groups.get(group)?.metrics()?;
    match metric {
        "MAE@Hyd" => m.mae_hyd.as_ref().map(|s| s.mean),
        "MAE-5" => Some(m.mae5.mean),
        "MAE-2" => Some(m.mae2.mean),
        "MAE" => Some(m.mae.mean),
        _ => None,
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub metric: String,
    pub group: String,
    /// Median over seeds, one per variant.
    pub cells: Vec<Option<f64>>,
    /// `per_seed[v][s]` for variant `v` and seed `s`.
    pub per_seed: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationMatrix {
    pub unit: String,
    pub variants: Vec<String>,
    pub seeds: Vec<u64>,
    pub rows: Vec<MatrixRow>,
}

/// Builds the matrix from per-variant, per-seed reports (seed order shared).
pub fn build_matrix(variants: &[String], seeds: &[u64], reports: &BTreeMap<String, Vec<MetricsReport>>) -> Result<AblationMatrix> {
    let unit = reports
        .values()
        .flat_map(|r| r.first())
        .map(|r| r.unit.clone())
        .next()
        .ok_or_else(|| Error::validation("no reports"))?;
    let mut rows = Vec::new();
    for metric in METRICS {
        for group in GROUPS {
            let per_seed: Vec<Vec<Option<f64>>> = variants
                .iter()
                .map(|v| reports[v].iter().map(|r| metric_value(r, metric, group)).collect())
                .collect();
            let cells = per_seed
                .iter()
                .map(|vals| median(&vals.iter().flatten().copied().collect::<Vec<_>>()))
                .collect();
            rows.push(MatrixRow {
                metric: metric.into(),
                group: group.into(),
                cells,
                per_seed,
            });
        }
    }
    Ok(AblationMatrix {
        unit,
        variants: variants.to_vec(),
        seeds: seeds.to_vec(),
        rows,
    })
}

impl AblationMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = format!("metric_{},group,{}\n", self.unit, self.variants.join(","));
        for r in &self.rows {
            let cells: Vec<String> = r.cells.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()).collect();
            out.push_str(&format!("{},{},{}\n", r.metric, r.group, cells.join(",")));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("| metric ({}) | group | {} |\n", self.unit, self.variants.join(" | "));
        out.push_str(&format!("|---|---|{}\n", "---|".repeat(self.variants.len())));
        for r in &self.rows {
            let cells: Vec<String> = r
                .cells
                .iter()
                .map(|c| c.map_or_else(|| "-".to_string(), |v| format!("{v:.3}")))
                .collect();
            out.push_str(&format!("| {} | {} | {} |\n", r.metric, r.group, cells.join(" | ")));
        }
        out
    }

    pub fn cell(&self, metric: &str, group: &str, variant: &str) -> Option<f64> {
        let v = self.variants.iter().position(|x| x == variant)?;
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.group == group)
            .and_then(|r| r.cells[v])
    }
}

#[derive(Debug, Clone)]
pub struct AblationRun {
    pub matrix: AblationMatrix,
    /// Test-set reports per variant, in seed order.
    pub reports: BTreeMap<String, Vec<MetricsReport>>,
}

/// Trains and evaluates each variant for each seed. The seed selects the
/// test/fold split and the training seed; all variants share both. With
/// `out`, each run is saved under `<out>/<variant>/seed-<seed>/`.
pub fn run_ablation(
    videos: &[VideoSequence],
    config: &RunConfig,
    variants: &[VariantId],
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<AblationRun> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::validation("need at least one variant and one seed"));
    }
    let time_scale = videos.first().ok_or_else(|| Error::validation("empty dataset"))?.time_scale;
    let mut reports: BTreeMap<String, Vec<MetricsReport>> = BTreeMap::new();
    for &seed in seeds {
        let split = split_dataset(videos, config.split.n_test_per_surgeon, config.split.k_folds, seed)?;
        let test: Vec<&VideoSequence> = videos.iter().filter(|v| split.test_ids.contains(&v.video_id)).collect();
        for &id in variants {
            let spec = build_variant(id, &config.model, &config.schedule.clone().with_seed(seed));
            let trained = train_variant(videos, &split, &spec, 4, None)?;
            let predictors: Vec<&dyn VideoPredictor> = match &trained {
                TrainedVariant::Network(folds) => folds.iter().map(|f| &f.net as &dyn VideoPredictor).collect(),
                TrainedVariant::Naive(p) => vec![p as &dyn VideoPredictor],
            };
            let (report, _) = evaluate(&predictors, &test, id.as_str(), None)?;
            if let Some(out) = out {
                let dir = out.join(id.as_str()).join(format!("seed-{seed}"));
                save_trained(&trained, &spec, &split, time_scale, &dir)?;
                write_report(&report, &dir)?;
            }
            reports.entry(id.as_str().to_string()).or_default().push(report);
        }
    }
    let names: Vec<String> = variants.iter().map(|v| v.as_str().to_string()).collect();
    let matrix = build_matrix(&names, seeds, &reports)?;
    Ok(AblationRun { matrix, reports })
}
