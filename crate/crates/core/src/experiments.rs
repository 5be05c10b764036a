//! Generalization-gap estimation and sweeps over filter kind, depth, width
//! and seed.
//!
//! Cells that share a seed share the dataset, the SGD index sequence and,
//! when their widths agree, the initialization, so comparisons across a
//! single axis are paired.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{AssumptionConstants, BoundReport, BoundValue, Provenance, Source};
use crate::datasets::{gen_csbm, load_dataset, split, BinaryReduction, CsbmParams, Dataset, DatasetFiles};
use crate::error::{Error, Result};
use crate::graph::{build_filter, FilterKind, FilterMatrix};
use crate::loss::Loss;
use crate::model::{Activation, ModelParams};
use crate::training::{init_params, risk, train, TrainConfig};

/// `(R_emp, R_test, |R_test - R_emp|)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapEstimate {
    pub r_emp: f64,
    pub r_test: f64,
    pub gap: f64,
}

pub fn estimate_gap(params: &ModelParams, filter: &FilterMatrix, dataset: &Dataset, loss: &Loss) -> Result<GapEstimate> {
    let train = dataset.train_samples();
    let test = dataset.test_samples();
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let r_emp = risk(params, filter, dataset.features(), &train, loss)?;
    let r_test = risk(params, filter, dataset.features(), &test, loss)?;
    Ok(GapEstimate {
        r_emp,
        r_test,
        gap: (r_test - r_emp).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSpec {
    Csbm(CsbmParams),
    Files {
        #[serde(flatten)]
        files: DatasetFiles,
        #[serde(default)]
        reduction: BinaryReduction,
        /// Used when `files.split` is absent.
        #[serde(default = "default_fraction")]
        train_fraction: f64,
    },
}

fn default_fraction() -> f64 {
    0.5
}

impl DatasetSpec {
    /// The dataset seen by every cell with this seed.
    pub fn materialize(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSpec::Csbm(p) => gen_csbm(p, seed),
            DatasetSpec::Files {
                files,
                reduction,
                train_fraction,
            } => {
                let d = load_dataset(files, reduction)?;
                if files.split.is_some() {
                    Ok(d)
                } else {
                    split(d, *train_fraction, seed)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// The seed field is replaced per cell.
    pub train: TrainConfig,
    pub dataset: DatasetSpec,
    pub activation: Activation,
    pub filters: Vec<FilterKind>,
    #[serde(rename = "K")]
    pub depths: Vec<usize>,
    /// Hidden width `d`; all hidden layers share it.
    pub widths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub delta: f64,
}

/// The filter comparison: both normalizations at `K = 5`, `d = 32`, ten
/// seeds on the default CSBM.
impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            train: TrainConfig {
                record_every: 10,
                ..TrainConfig::default()
            },
            dataset: DatasetSpec::Csbm(CsbmParams::default()),
            activation: Activation::Tanh,
            filters: vec![FilterKind::SymSelfloop, FilterKind::RwPlusId],
            depths: vec![5],
            widths: vec![32],
            seeds: (0..10).collect(),
            delta: 0.05,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.filters.is_empty() || self.depths.is_empty() || self.widths.is_empty() || self.seeds.is_empty() {
            return Err(Error::invalid("sweep axes", "filters, K, widths and seeds must be non-empty"));
        }
        let mut s = self.seeds.clone();
        s.sort_unstable();
        if s.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("seeds", "seeds must be distinct"));
        }
        if let Some(&d) = self.widths.iter().find(|&&d| d == 0) {
            return Err(Error::invalid("widths", format!("width {d} must be positive")));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta", format!("{} not in (0, 1)", self.delta)));
        }
        self.train.validate()
    }

    /// Cells in output order: filter, then K, then width, then seed.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &filter in &self.filters {
            for &k in &self.depths {
                for &d in &self.widths {
                    for &seed in &self.seeds {
                        out.push(Cell { filter, k, d, seed });
                    }
                }
            }
        }
        out
    }
}

/// Coordinates of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub filter: FilterKind,
    #[serde(rename = "K")]
    pub k: usize,
    pub d: usize,
    pub seed: u64,
}

/// `[d0, d, ..., d]` with `K` hidden widths.
pub fn layer_widths(d0: usize, k: usize, d: usize) -> Vec<usize> {
    std::iter::once(d0).chain(std::iter::repeat_n(d, k)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub estimate: GapEstimate,
    pub c_g: f64,
    pub b: f64,
    pub c_x: f64,
    pub report: BoundReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRecord {
    pub cell: Cell,
    /// `Err` holds the failure message of a failed cell.
    pub result: std::result::Result<CellResult, String>,
}

impl GapRecord {
    pub fn gap(&self) -> Option<f64> {
        self.result.as_ref().ok().map(|r| r.estimate.gap)
    }
}

/// Trains one cell on an already materialized dataset and evaluates every
/// bound from the measured constants.
pub fn run_cell(cfg: &SweepConfig, cell: Cell, dataset: &Dataset) -> Result<CellResult> {
    let filter = build_filter(dataset.graph(), cell.filter)?;
    let widths = layer_widths(dataset.feature_dim(), cell.k, cell.d);
    let init = init_params(&widths, cfg.activation, cell.seed)?;
    let config = TrainConfig {
        seed: cell.seed,
        ..cfg.train
    };
    let (params, summary) = train(dataset, &filter, &init, &config)?;
    let estimate = estimate_gap(&params, &filter, dataset, &config.loss)?;
    let c = AssumptionConstants::from_parts(
        cfg.activation,
        &config.loss.constants()?,
        summary.measured_b,
        filter.c_g(),
        dataset.c_x(),
        cell.k,
        config.eta,
        config.t,
        dataset.train_indices().len(),
    );
    let report = BoundReport::evaluate(&c, cfg.delta, Provenance::all(Source::Measured))?;
    Ok(CellResult {
        estimate,
        c_g: filter.c_g(),
        b: summary.measured_b,
        c_x: dataset.c_x(),
        report,
    })
}

/// Runs every cell, at most `jobs` at a time (`None`: rayon's default).
/// Failed cells are kept as failures; the sweep errors only when every cell
/// fails.
pub fn run_sweep(cfg: &SweepConfig, jobs: Option<usize>) -> Result<Vec<GapRecord>> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid("jobs", e.to_string()))?;
    pool.install(|| {
        let datasets: BTreeMap<u64, std::result::Result<Dataset, String>> = cfg
            .seeds
            .par_iter()
            .map(|&s| (s, cfg.dataset.materialize(s).map_err(|e| e.to_string())))
            .collect();
        let records: Vec<GapRecord> = cfg
            .cells()
            .into_par_iter()
            .map(|cell| {
                let result = match &datasets[&cell.seed] {
                    Ok(d) => run_cell(cfg, cell, d).map_err(|e| e.to_string()),
                    Err(e) => Err(e.clone()),
                };
                GapRecord { cell, result }
            })
            .collect();
        if let Some(first) = records.iter().find_map(|r| r.result.as_ref().err()) {
            if records.iter().all(|r| r.result.is_err()) {
                return Err(Error::SweepFailed(first.clone()));
            }
        }
        Ok(records)
    })
}

pub const SWEEP_CSV_HEADER: &str = "filter,K,d,seed,R_emp,R_test,gap,C_g,B,C_X,kappa1,kappa2,mu_m,gap_bound,status";

fn text(v: &BoundValue) -> String {
    v.to_text()
}

pub fn records_to_csv(records: &[GapRecord]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in records {
        let c = &r.cell;
        out.push_str(&format!("{},{},{},{},", c.filter, c.k, c.d, c.seed));
        match &r.result {
            Ok(x) => out.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e},{:e},{},{},{},{},ok\n",
                x.estimate.r_emp,
                x.estimate.r_test,
                x.estimate.gap,
                x.c_g,
                x.b,
                x.c_x,
                text(&x.report.kappa1),
                text(&x.report.kappa2),
                text(&x.report.mu_m),
                text(&x.report.gap_bound),
            )),
            Err(e) => {
                let msg: String = e.chars().map(|ch| if ch == ',' || ch == '\n' { ';' } else { ch }).collect();
                out.push_str(&format!(",,,,,,,,,,failed: {msg}\n"));
            }
        }
    }
    out
}

/// Gap per seed for the successful cells at one `(filter, K, d)`.
pub fn gaps_by_seed(records: &[GapRecord], filter: FilterKind, k: usize, d: usize) -> BTreeMap<u64, f64> {
    records
        .iter()
        .filter(|r| r.cell.filter == filter && r.cell.k == k && r.cell.d == d)
        .filter_map(|r| r.gap().map(|g| (r.cell.seed, g)))
        .collect()
}

/// Mean of the values, `None` when empty.
pub fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// How many seeds present in both maps have `a < b`, and how many are
/// compared.
pub fn sign_count(a: &BTreeMap<u64, f64>, b: &BTreeMap<u64, f64>) -> (usize, usize) {
    let mut agree = 0;
    let mut total = 0;
    for (s, x) in a {
        if let Some(y) = b.get(s) {
            total += 1;
            if x < y {
                agree += 1;
            }
        }
    }
    (agree, total)
}
