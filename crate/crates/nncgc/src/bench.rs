//! Benchmark data: the four synthetic scenarios, CSV ingestion for
//! semi-synthetic datasets, and seeded train/validation/test splits.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

use crate::linalg::Matrix;
use crate::rng::{derive_seed, seeded_rng};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("rows disagree in length: {0}")]
    RaggedData(String),
    #[error("treatment must be 0 or 1, found {value} at data row {row}")]
    NonBinaryTreatment { row: usize, value: f64 },
    #[error("experimental flag must be 0 or 1, found {value} at data row {row}")]
    NonBinaryFlag { row: usize, value: f64 },
    #[error("{n} samples with d={d}, sigma={sigma} is outside the benchmark grid (n in {{500,1000}}, d in {{6,12}}, sigma in {{0.5,1,2,4}}); set allow_off_grid to override")]
    OffGrid { n: usize, d: usize, sigma: f64 },
    #[error("scenario generators need at least 5 covariates, got d={0}")]
    TooFewCovariates(usize),
    #[error("csv {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("csv {path}: missing column {column}")]
    MissingColumn { path: String, column: String },
    #[error("csv {path} data row {row}, column {column}: expected a number, got {value:?}")]
    BadCell { path: String, row: usize, column: String, value: String },
    #[error("csv {path}: no data rows")]
    Empty { path: String },
    #[error("io {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("split ratios must be positive and sum to 1, got ({0}, {1}, {2})")]
    BadRatios(f64, f64, f64),
    #[error("split produced an empty {0} part")]
    EmptySplit(&'static str),
    #[error("non-finite value at data row {row}, column {column}")]
    NonFinite { row: usize, column: String },
}

/// Observational dataset with optional ground truth. `mu0`/`mu1` are the
/// noise-free conditional potential-outcome means; `exp_flag` marks
/// membership in an experimental subsample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub x: Matrix,
    pub t: Vec<u8>,
    pub y: Vec<f64>,
    pub mu0: Option<Vec<f64>>,
    pub mu1: Option<Vec<f64>>,
    pub e_true: Option<Vec<f64>>,
    pub exp_flag: Option<Vec<u8>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_covariates(&self) -> usize {
        self.x.cols()
    }

    /// True unit-level effect, defined when both potential-outcome means
    /// are present.
    pub fn true_ite(&self) -> Option<Vec<f64>> {
        match (&self.mu0, &self.mu1) {
            (Some(m0), Some(m1)) => Some(m1.iter().zip(m0).map(|(a, b)| a - b).collect()),
            _ => None,
        }
    }

    /// Rows selected by index, preserving optional columns.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let pick_u8 = |v: &Vec<u8>| idx.iter().map(|&i| v[i]).collect::<Vec<u8>>();
        Dataset {
            columns: self.columns.clone(),
            x: self.x.select_rows(idx),
            t: pick_u8(&self.t),
            y: pick(&self.y),
            mu0: self.mu0.as_ref().map(pick),
            mu1: self.mu1.as_ref().map(pick),
            e_true: self.e_true.as_ref().map(pick),
            exp_flag: self.exp_flag.as_ref().map(pick_u8),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    A,
    B,
    C,
    D,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Scenario::A => 'A',
            Scenario::B => 'B',
            Scenario::C => 'C',
            Scenario::D => 'D',
        };
        write!(f, "{c}")
    }
}

/// Synthetic benchmark configuration. The grids mirror the reference
/// experimental design; arbitrary values require `allow_off_grid`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub allow_off_grid: bool,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.d < 5 {
            return Err(BenchError::TooFewCovariates(self.d));
        }
        let on_grid = matches!(self.n, 500 | 1000)
            && matches!(self.d, 6 | 12)
            && [0.5, 1.0, 2.0, 4.0].contains(&self.sigma);
        if !on_grid && !self.allow_off_grid {
            return Err(BenchError::OffGrid { n: self.n, d: self.d, sigma: self.sigma });
        }
        Ok(())
    }
}

/// Scenario-specific structural functions: propensity, baseline and
/// effect at a covariate row.
fn structural(scenario: Scenario, x: &[f64]) -> (f64, f64, f64) {
    let sigmoid = |z: f64| 1.0 / (1.0 + (-z).exp());
    let softplus = |z: f64| {
        // ln(1 + e^z) computed stably.
        if z > 30.0 {
            z
        } else {
            z.exp().ln_1p()
        }
    };
    match scenario {
        Scenario::A => {
            let e = (std::f64::consts::PI * x[0] * x[1]).sin().clamp(0.1, 0.9);
            let b = (std::f64::consts::PI * x[0] * x[1]).sin()
                + 2.0 * (x[2] - 0.5) * (x[2] - 0.5)
                + x[3]
                + 0.5 * x[4];
            let tau = (x[0] + x[1]) / 2.0;
            (e, b, tau)
        }
        Scenario::B => {
            let e = 0.5;
            let b = (x[0] + x[1]).max(x[2]).max(0.0) + (x[3] + x[4]).max(0.0);
            let tau = x[0] + softplus(x[1]);
            (e, b, tau)
        }
        Scenario::C => {
            let e = sigmoid(-(x[1] + x[2]));
            let b = 2.0 * softplus(x[0] + x[1] + x[2]);
            let tau = 1.0;
            (e, b, tau)
        }
        Scenario::D => {
            let e = 1.0 / (1.0 + (-x[0]).exp() + (-x[1]).exp());
            let b = 0.5 * ((x[0] + x[1] + x[2]).max(0.0) + (x[3] + x[4]).max(0.0));
            let tau = (x[0] + x[1] + x[2]).max(0.0) - (x[3] + x[4]).max(0.0);
            (e, b, tau)
        }
    }
}

/// Draws a train and an equally sized test set. Covariates and treatment
/// come from the structural stream; the outcome noise has its own stream,
/// so the potential-outcome means are independent of the noise seed.
pub fn generate(cfg: &SyntheticConfig) -> Result<(Dataset, Dataset), BenchError> {
    generate_with_noise_seed(cfg, derive_seed(cfg.seed, 1))
}

pub fn generate_with_noise_seed(
    cfg: &SyntheticConfig,
    noise_seed: u64,
) -> Result<(Dataset, Dataset), BenchError> {
    cfg.validate()?;
    let mut structure_rng = seeded_rng(derive_seed(cfg.seed, 0));
    let mut noise_rng = seeded_rng(noise_seed);
    let columns: Vec<String> = (1..=cfg.d).map(|i| format!("x{i}")).collect();
    let mut make = |n: usize| -> Dataset {
        let mut x = Matrix::zeros(n, cfg.d);
        let mut t = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut mu0 = Vec::with_capacity(n);
        let mut mu1 = Vec::with_capacity(n);
        let mut e_true = Vec::with_capacity(n);
        for r in 0..n {
            for c in 0..cfg.d {
                let v = match cfg.scenario {
                    Scenario::A => structure_rng.random_range(0.0..1.0),
                    _ => structure_rng.sample(StandardNormal),
                };
                x.set(r, c, v);
            }
            let (e, b, tau) = structural(cfg.scenario, x.row(r));
            let treated = structure_rng.random_bool(e);
            let m0 = b - 0.5 * tau;
            let m1 = b + 0.5 * tau;
            let noise: f64 = noise_rng.sample(StandardNormal);
            let outcome = if treated { m1 } else { m0 } + cfg.sigma * noise;
            t.push(u8::from(treated));
            y.push(outcome);
            mu0.push(m0);
            mu1.push(m1);
            e_true.push(e);
        }
        Dataset {
            columns: columns.clone(),
            x,
            t,
            y,
            mu0: Some(mu0),
            mu1: Some(mu1),
            e_true: Some(e_true),
            exp_flag: None,
        }
    };
    let train = make(cfg.n);
    let test = make(cfg.n);
    Ok((train, test))
}

/// Column bindings for CSV ingestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub covariates: Vec<String>,
    pub treatment: String,
    pub outcome: String,
    #[serde(default)]
    pub mu0: Option<String>,
    #[serde(default)]
    pub mu1: Option<String>,
    #[serde(default)]
    pub e_true: Option<String>,
    #[serde(default)]
    pub exp_flag: Option<String>,
}

impl CsvSchema {
    /// Plain `x1..xd,t,y` with any of `mu0,mu1,e_true,exp` that are present
    /// in the header.
    pub fn standard(d: usize) -> CsvSchema {
        CsvSchema {
            covariates: (1..=d).map(|i| format!("x{i}")).collect(),
            treatment: "t".into(),
            outcome: "y".into(),
            mu0: Some("mu0".into()),
            mu1: Some("mu1".into()),
            e_true: Some("e_true".into()),
            exp_flag: Some("exp".into()),
        }
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset, BenchError> {
    let pstr = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|source| BenchError::Csv { path: pstr.clone(), source })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|source| BenchError::Csv { path: pstr.clone(), source })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let require = |name: &str| {
        find(name).ok_or_else(|| BenchError::MissingColumn {
            path: pstr.clone(),
            column: name.to_string(),
        })
    };
    let cov_idx: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| require(c))
        .collect::<Result<_, _>>()?;
    let t_idx = require(&schema.treatment)?;
    let y_idx = require(&schema.outcome)?;
    // Optional columns are used when both declared and present.
    let opt_idx = |name: &Option<String>| name.as_ref().and_then(|n| find(n));
    let mu0_idx = opt_idx(&schema.mu0);
    let mu1_idx = opt_idx(&schema.mu1);
    let e_idx = opt_idx(&schema.e_true);
    let exp_idx = opt_idx(&schema.exp_flag);

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut mu0 = mu0_idx.map(|_| Vec::new());
    let mut mu1 = mu1_idx.map(|_| Vec::new());
    let mut e_true = e_idx.map(|_| Vec::new());
    let mut exp_flag = exp_idx.map(|_| Vec::new());

    for (row_no, record) in reader.records().enumerate() {
        let record = record.map_err(|source| BenchError::Csv { path: pstr.clone(), source })?;
        let row = row_no + 1;
        let cell = |idx: usize, column: &str| -> Result<f64, BenchError> {
            let raw = record.get(idx).unwrap_or("").trim();
            let v: f64 = raw.parse().map_err(|_| BenchError::BadCell {
                path: pstr.clone(),
                row,
                column: column.to_string(),
                value: raw.to_string(),
            })?;
            if !v.is_finite() {
                return Err(BenchError::NonFinite { row, column: column.to_string() });
            }
            Ok(v)
        };
        let mut xrow = Vec::with_capacity(cov_idx.len());
        for (i, &idx) in cov_idx.iter().enumerate() {
            xrow.push(cell(idx, &schema.covariates[i])?);
        }
        rows.push(xrow);
        let tv = cell(t_idx, &schema.treatment)?;
        if tv != 0.0 && tv != 1.0 {
            return Err(BenchError::NonBinaryTreatment { row, value: tv });
        }
        t.push(tv as u8);
        y.push(cell(y_idx, &schema.outcome)?);
        if let (Some(v), Some(idx)) = (mu0.as_mut(), mu0_idx) {
            v.push(cell(idx, schema.mu0.as_deref().unwrap())?);
        }
        if let (Some(v), Some(idx)) = (mu1.as_mut(), mu1_idx) {
            v.push(cell(idx, schema.mu1.as_deref().unwrap())?);
        }
        if let (Some(v), Some(idx)) = (e_true.as_mut(), e_idx) {
            v.push(cell(idx, schema.e_true.as_deref().unwrap())?);
        }
        if let (Some(v), Some(idx)) = (exp_flag.as_mut(), exp_idx) {
            let f = cell(idx, schema.exp_flag.as_deref().unwrap())?;
            if f != 0.0 && f != 1.0 {
                return Err(BenchError::NonBinaryFlag { row, value: f });
            }
            v.push(f as u8);
        }
    }
    if rows.is_empty() {
        return Err(BenchError::Empty { path: pstr });
    }
    let x = Matrix::from_rows(&rows).map_err(|e| BenchError::RaggedData(e.to_string()))?;
    Ok(Dataset { columns: schema.covariates.clone(), x, t, y, mu0, mu1, e_true, exp_flag })
}

/// Writes `x1..xd,t,y[,mu0,mu1,e_true,exp]` with a header row. Numbers use
/// the shortest exact decimal form, so identical datasets produce
/// byte-identical files.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<(), BenchError> {
    let pstr = path.display().to_string();
    let mut w =
        csv::Writer::from_path(path).map_err(|source| BenchError::Csv { path: pstr.clone(), source })?;
    let mut header: Vec<String> = ds.columns.clone();
    header.push("t".into());
    header.push("y".into());
    if ds.mu0.is_some() {
        header.push("mu0".into());
    }
    if ds.mu1.is_some() {
        header.push("mu1".into());
    }
    if ds.e_true.is_some() {
        header.push("e_true".into());
    }
    if ds.exp_flag.is_some() {
        header.push("exp".into());
    }
    w.write_record(&header).map_err(|source| BenchError::Csv { path: pstr.clone(), source })?;
    for r in 0..ds.len() {
        let mut rec: Vec<String> = ds.x.row(r).iter().map(|v| v.to_string()).collect();
        rec.push(ds.t[r].to_string());
        rec.push(ds.y[r].to_string());
        if let Some(v) = &ds.mu0 {
            rec.push(v[r].to_string());
        }
        if let Some(v) = &ds.mu1 {
            rec.push(v[r].to_string());
        }
        if let Some(v) = &ds.e_true {
            rec.push(v[r].to_string());
        }
        if let Some(v) = &ds.exp_flag {
            rec.push(v[r].to_string());
        }
        w.write_record(&rec).map_err(|source| BenchError::Csv { path: pstr.clone(), source })?;
    }
    w.flush().map_err(|source| BenchError::Io { path: pstr, source })?;
    Ok(())
}

/// Two-way partition used when a generator already supplies the test set:
/// `val_fraction` of the rows (floored) become validation, the remainder
/// trains.
pub fn split_two(
    ds: &Dataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), BenchError> {
    if !(0.0..1.0).contains(&val_fraction) || val_fraction <= 0.0 {
        return Err(BenchError::BadRatios(1.0 - val_fraction, val_fraction, 0.0));
    }
    let n = ds.len();
    let n_val = (n as f64 * val_fraction).floor() as usize;
    let n_train = n - n_val;
    if n_val == 0 {
        return Err(BenchError::EmptySplit("validation"));
    }
    if n_train == 0 {
        return Err(BenchError::EmptySplit("train"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let mut train_idx = idx[..n_train].to_vec();
    let mut val_idx = idx[n_train..].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok((ds.subset(&train_idx), ds.subset(&val_idx)))
}

/// Schema inferred from a CSV header: the standard role names bind when
/// present, all other columns are covariates in header order.
pub fn infer_schema(path: &Path) -> Result<CsvSchema, BenchError> {
    let pstr = path.display().to_string();
    let mut reader = csv::Reader::from_path(path)
        .map_err(|source| BenchError::Csv { path: pstr.clone(), source })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|source| BenchError::Csv { path: pstr, source })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let roles = ["t", "y", "mu0", "mu1", "e_true", "exp"];
    let covariates: Vec<String> =
        headers.iter().filter(|h| !roles.contains(&h.as_str())).cloned().collect();
    let has = |name: &str| headers.iter().any(|h| h == name).then(|| name.to_string());
    Ok(CsvSchema {
        covariates,
        treatment: "t".into(),
        outcome: "y".into(),
        mu0: has("mu0"),
        mu1: has("mu1"),
        e_true: has("e_true"),
        exp_flag: has("exp"),
    })
}

/// Uniform random partition into train/validation/test. Validation and
/// test sizes are floors of their ratios; the remainder goes to train.
pub fn split(
    ds: &Dataset,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), BenchError> {
    let (rt, rv, rs) = ratios;
    if rt <= 0.0 || rv <= 0.0 || rs <= 0.0 || ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(BenchError::BadRatios(rt, rv, rs));
    }
    let n = ds.len();
    let n_val = (n as f64 * rv).floor() as usize;
    let n_test = (n as f64 * rs).floor() as usize;
    let n_train = n - n_val - n_test;
    if n_train == 0 {
        return Err(BenchError::EmptySplit("train"));
    }
    if n_val == 0 {
        return Err(BenchError::EmptySplit("validation"));
    }
    if n_test == 0 {
        return Err(BenchError::EmptySplit("test"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(seed);
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let mut train_idx = idx[..n_train].to_vec();
    let mut val_idx = idx[n_train..n_train + n_val].to_vec();
    let mut test_idx = idx[n_train + n_val..].to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((ds.subset(&train_idx), ds.subset(&val_idx), ds.subset(&test_idx)))
}
