//! Metrics, stratified cross-validation and parameter sweeps.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{classify_proba, Dataset, PenaltyConfig};
use crate::optimizer::{fit, SolverConfig};
use crate::sim::{default_template, generate_all, shuffle, SimConfig, TemplateName};
use crate::tensor::ShapeConfig;

/// Mann-Whitney estimate of the area under the ROC curve, counting ties as
/// one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUC scores".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid_rank = (start + end + 1) as f64 / 2.0;
        let pos_in_tie = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum += mid_rank * pos_in_tie as f64;
        start = end;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Fraction of samples whose thresholded probability equals the label.
pub fn accuracy(probs: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| classify_proba(p, threshold) == y)
        .count();
    Ok(correct as f64 / probs.len() as f64)
}

/// A `(train, validation)` pair of ascending index lists.
pub type Fold = (Vec<usize>, Vec<usize>);

/// Splits indices into `k` folds. Each class is shuffled and dealt round-robin,
/// with the second class continuing where the first stopped, so per-fold class
/// counts differ by at most one.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; labels.len()];
    let mut next = 0;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} members for {k} folds",
                idx.len()
            )));
        }
        shuffle(&mut idx, &mut rng);
        for i in idx {
            assignment[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (valid, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| assignment[i] == f);
            (train, valid)
        })
        .collect())
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-fold metrics with their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: Vec<f64>,
    pub auc: Vec<f64>,
    pub mean_acc: f64,
    pub sd_acc: f64,
    pub mean_auc: f64,
    pub sd_auc: f64,
}

impl MetricSummary {
    pub fn from_folds(accuracy: Vec<f64>, auc: Vec<f64>) -> Self {
        let (mean_acc, sd_acc) = mean_sd(&accuracy);
        let (mean_auc, sd_auc) = mean_sd(&auc);
        Self {
            accuracy,
            auc,
            mean_acc,
            sd_acc,
            mean_auc,
            sd_auc,
        }
    }

    pub fn folds(&self) -> usize {
        self.auc.len()
    }
}

/// Everything needed to fit one model besides the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub cfg: ShapeConfig,
    pub rank: usize,
    pub penalties: PenaltyConfig,
    pub use_shift: bool,
    pub solver: SolverConfig,
}

/// Test metrics of a model fitted on `train`.
pub fn holdout(train: &Dataset, test: &Dataset, settings: &FitSettings) -> Result<(f64, f64)> {
    let (model, _) = fit(
        train,
        &settings.cfg,
        settings.rank,
        settings.penalties,
        settings.use_shift,
        &settings.solver,
    )?;
    let probs = model.predict_proba_batch(test)?;
    let labels = test.label_bytes();
    Ok((accuracy(&probs, &labels, 0.5)?, auc(&probs, &labels)?))
}

/// Stratified `folds`-fold cross-validation of the fit settings.
pub fn cross_validate(data: &Dataset, settings: &FitSettings, folds: usize, seed: u64) -> Result<MetricSummary> {
    let splits = stratified_kfold(&data.label_bytes(), folds, seed)?;
    let mut accs = Vec::with_capacity(folds);
    let mut aucs = Vec::with_capacity(folds);
    for (train, valid) in splits {
        let (acc, a) = holdout(&data.subset(&train)?, &data.subset(&valid)?, settings)?;
        accs.push(acc);
        aucs.push(a);
    }
    Ok(MetricSummary::from_folds(accs, aucs))
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for a named sub-task, stable across runs and platforms.
pub fn derive_seed(master: u64, key: &str) -> u64 {
    splitmix64(master ^ fnv1a(key.as_bytes()))
}

/// Where the sweep gets its data.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepData {
    /// One simulated dataset per noise level.
    Simulated {
        template: TemplateName,
        shape: Vec<usize>,
        n: usize,
        label_noise_std: f64,
    },
    /// A fixed dataset; the noise axis is ignored.
    Fixed(Dataset),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub data: SweepData,
    /// Grid (`A`) sizes; the patch size follows from the data dims.
    pub grids: Vec<[usize; 3]>,
    pub sigmas: Vec<f64>,
    pub shifts: Vec<bool>,
    pub lambda_a: Vec<f64>,
    pub lambda_b: Vec<f64>,
    pub alpha: Vec<f64>,
    pub lambda_gamma: f64,
    pub rank: usize,
    pub folds: usize,
    pub solver: SolverConfig,
    pub seed: u64,
}

/// Coordinates of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub grid: [usize; 3],
    pub patch: [usize; 3],
    pub sigma: Option<f64>,
    pub shift: bool,
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub alpha: f64,
}

impl CellKey {
    /// Key of the data-generating part; cells that differ only in model
    /// settings share data and folds.
    fn data_key(&self) -> String {
        match self.sigma {
            Some(s) => format!("data/sigma={:016x}", s.to_bits()),
            None => "data/fixed".into(),
        }
    }

    fn full_key(&self) -> String {
        format!(
            "{}/grid={:?}/shift={}/la={:016x}/lb={:016x}/alpha={:016x}",
            self.data_key(),
            self.grid,
            self.shift,
            self.lambda_a.to_bits(),
            self.lambda_b.to_bits(),
            self.alpha.to_bits()
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub key: CellKey,
    /// Fit or data errors are kept per cell; the sweep carries on.
    pub result: std::result::Result<MetricSummary, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
}

impl SweepSpec {
    fn validate(&self) -> Result<()> {
        if self.grids.is_empty()
            || self.shifts.is_empty()
            || self.lambda_a.is_empty()
            || self.lambda_b.is_empty()
            || self.alpha.is_empty()
        {
            return Err(Error::InvalidConfig("every sweep axis needs at least one value".into()));
        }
        if matches!(self.data, SweepData::Simulated { .. }) && self.sigmas.is_empty() {
            return Err(Error::InvalidConfig("simulated sweeps need at least one sigma".into()));
        }
        Ok(())
    }

    fn data_dims(&self) -> [usize; 3] {
        match &self.data {
            SweepData::Simulated { shape, .. } => {
                let mut d = [1; 3];
                d[..shape.len()].copy_from_slice(shape);
                d
            }
            SweepData::Fixed(data) => data.dims(),
        }
    }

    /// Cells in grid order: noise level outermost, then grid, shift and the
    /// penalty axes.
    pub fn cells(&self) -> Vec<CellKey> {
        let sigmas: Vec<Option<f64>> = match self.data {
            SweepData::Simulated { .. } => self.sigmas.iter().map(|&s| Some(s)).collect(),
            SweepData::Fixed(_) => vec![None],
        };
        let dims = self.data_dims();
        let mut keys = Vec::new();
        for &sigma in &sigmas {
            for &grid in &self.grids {
                let patch = [0, 1, 2].map(|k| dims[k].checked_div(grid[k]).unwrap_or(0));
                for &shift in &self.shifts {
                    for &lambda_a in &self.lambda_a {
                        for &lambda_b in &self.lambda_b {
                            for &alpha in &self.alpha {
                                keys.push(CellKey {
                                    grid,
                                    patch,
                                    sigma,
                                    shift,
                                    lambda_a,
                                    lambda_b,
                                    alpha,
                                });
                            }
                        }
                    }
                }
            }
        }
        keys
    }

    fn dataset_for(&self, key: &CellKey) -> Result<Dataset> {
        match &self.data {
            SweepData::Fixed(d) => Ok(d.clone()),
            SweepData::Simulated {
                template,
                shape,
                n,
                label_noise_std,
            } => {
                let cfg = SimConfig {
                    label_noise_std: *label_noise_std,
                    ..SimConfig::new(
                        default_template(*template, shape)?,
                        *n,
                        key.sigma.unwrap_or(0.0),
                        derive_seed(self.seed, &key.data_key()),
                    )
                };
                generate_all(&cfg)
            }
        }
    }

    fn run_cell(&self, key: &CellKey, data: &Dataset) -> Result<MetricSummary> {
        let cfg = ShapeConfig::from_full_dims(data.dims(), key.grid)?;
        let settings = FitSettings {
            cfg,
            rank: self.rank,
            penalties: PenaltyConfig::new(key.lambda_a, key.lambda_b, self.lambda_gamma, key.alpha)?,
            use_shift: key.shift,
            solver: SolverConfig {
                seed: derive_seed(self.seed, &key.full_key()),
                ..self.solver
            },
        };
        let fold_seed = derive_seed(self.seed, &format!("{}/folds", key.data_key()));
        cross_validate(data, &settings, self.folds, fold_seed)
    }
}

/// Runs cross-validation for every cell. Each cell depends only on its key and
/// the master seed, so reordering the axes leaves the numbers unchanged.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepTable> {
    run_sweep_with(spec, |_, _| {})
}

/// [`run_sweep`] with a callback after every finished cell.
pub fn run_sweep_with(spec: &SweepSpec, mut progress: impl FnMut(usize, &SweepCell)) -> Result<SweepTable> {
    spec.validate()?;
    let keys = spec.cells();
    let mut cells = Vec::with_capacity(keys.len());
    // Reuse a generated dataset across consecutive cells with the same data key.
    let mut cached: Option<(String, std::result::Result<Dataset, String>)> = None;
    for (i, key) in keys.iter().enumerate() {
        let data_key = key.data_key();
        if cached.as_ref().map(|(k, _)| k != &data_key).unwrap_or(true) {
            cached = Some((data_key, spec.dataset_for(key).map_err(|e| e.to_string())));
        }
        let data = &cached.as_ref().expect("dataset cached above").1;
        let result = match data {
            Ok(d) => spec.run_cell(key, d).map_err(|e| e.to_string()),
            Err(e) => Err(e.clone()),
        };
        let cell = SweepCell { key: *key, result };
        progress(i, &cell);
        cells.push(cell);
    }
    Ok(SweepTable { cells })
}

fn dims_label(d: [usize; 3]) -> String {
    if d[2] == 1 {
        format!("{}x{}", d[0], d[1])
    } else {
        format!("{}x{}x{}", d[0], d[1], d[2])
    }
}

fn sigma_label(s: Option<f64>) -> String {
    s.map(|s| s.to_string()).unwrap_or_else(|| "-".into())
}

pub const CSV_HEADER: &str = "grid,patch,sigma,shift,lambda_a,lambda_b,alpha,fold,accuracy,auc,error";

impl SweepTable {
    pub fn get(&self, pred: impl Fn(&CellKey) -> bool) -> Option<&SweepCell> {
        self.cells.iter().find(|c| pred(&c.key))
    }

    /// One row per (cell, fold), then `mean` and `sd` summary rows per cell.
    /// Failed cells get a single row with the error message.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for cell in &self.cells {
            let k = &cell.key;
            let prefix = format!(
                "{},{},{},{},{},{},{}",
                dims_label(k.grid),
                dims_label(k.patch),
                sigma_label(k.sigma),
                k.shift,
                k.lambda_a,
                k.lambda_b,
                k.alpha
            );
            match &cell.result {
                Ok(m) => {
                    for (f, (acc, a)) in m.accuracy.iter().zip(&m.auc).enumerate() {
                        let _ = writeln!(out, "{prefix},{f},{acc},{a},");
                    }
                    let _ = writeln!(out, "{prefix},mean,{},{},", m.mean_acc, m.mean_auc);
                    let _ = writeln!(out, "{prefix},sd,{},{},", m.sd_acc, m.sd_auc);
                }
                Err(e) => {
                    let _ = writeln!(out, "{prefix},,,,\"{}\"", e.replace('"', "'"));
                }
            }
        }
        out
    }

    /// Aligned plain-text table with `mean (sd)` columns.
    pub fn to_text(&self) -> String {
        let header = [
            "A grid", "B patch", "sigma", "shift", "lambda_a", "lambda_b", "alpha", "AUC mean (SD)",
            "Accuracy mean (SD)",
        ];
        let rows: Vec<Vec<String>> = self
            .cells
            .iter()
            .map(|c| {
                let k = &c.key;
                let (auc, acc) = match &c.result {
                    Ok(m) => (
                        format!("{:.4} ({:.4})", m.mean_auc, m.sd_auc),
                        format!("{:.4} ({:.4})", m.mean_acc, m.sd_acc),
                    ),
                    Err(_) => ("failed".into(), "failed".into()),
                };
                vec![
                    dims_label(k.grid),
                    dims_label(k.patch),
                    sigma_label(k.sigma),
                    if k.shift { "cyclic".into() } else { "none".into() },
                    k.lambda_a.to_string(),
                    k.lambda_b.to_string(),
                    k.alpha.to_string(),
                    auc,
                    acc,
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|j| rows.iter().map(|r| r[j].len()).chain([header[j].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: Vec<&str>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(header.to_vec());
        out.push('\n');
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for r in &rows {
            out.push_str(&line(r.iter().map(String::as_str).collect()));
            out.push('\n');
        }
        out
    }
}
