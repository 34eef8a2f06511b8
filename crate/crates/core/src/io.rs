//! On-disk formats: the `KTEN` tensor container, dataset directories (one
//! container per sample plus a `samples.csv` index), the binary model file,
//! fit reports, and `key = value` experiment configs.
//!
//! Everything is little-endian and uncompressed.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::{SweepData, SweepSpec};
use crate::model::{Dataset, FactorSet, PenaltyConfig, Sample, SkpdModel};
use crate::optimizer::{FitReport, SolverConfig};
use crate::pipeline::CovariateScaler;
use crate::shift::ShiftSpec;
use crate::sim::{default_template, SimConfig, TemplateName};
use crate::tensor::{DenseTensor, ShapeConfig};

pub const TENSOR_MAGIC: [u8; 4] = *b"KTEN";
pub const TENSOR_VERSION: u32 = 1;
pub const MODEL_MAGIC: [u8; 4] = *b"SKPD";
pub const MODEL_VERSION: u32 = 1;
/// Bit 0 of the container flags byte: a CRC32 of the payload follows it.
const FLAG_CRC: u8 = 1;
const TENSOR_HEADER: usize = 4 + 4 + 1 + 1 + 12;

/// Index file of a dataset directory.
pub const SAMPLES_FILE: &str = "samples.csv";

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Little-endian cursor over a byte slice.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format_err(format!("unexpected end of data at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::DimensionOverflow(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes `t` as a `KTEN` container, optionally followed by a CRC32 of
/// the payload.
pub fn encode_tensor(t: &DenseTensor, checksum: bool) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(TENSOR_HEADER + 8 * t.len() + 4);
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.push(t.order());
    out.push(if checksum { FLAG_CRC } else { 0 });
    for d in t.dims() {
        push_u32(&mut out, d)?;
    }
    push_f64s(&mut out, t.data());
    if checksum {
        let crc = crc32fast::hash(&out[TENSOR_HEADER..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<DenseTensor> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != TENSOR_MAGIC {
        return Err(format_err("not a KTEN container (bad magic)"));
    }
    let version = r.u32()?;
    if version != TENSOR_VERSION {
        return Err(format_err(format!("unsupported KTEN version {version}")));
    }
    let order = r.u8()?;
    let flags = r.u8()?;
    if !(1..=3).contains(&order) {
        return Err(format_err(format!("invalid tensor order {order}")));
    }
    if flags & !FLAG_CRC != 0 {
        return Err(format_err(format!("unknown container flags {flags:#04x}")));
    }
    let dims = [r.usize()?, r.usize()?, r.usize()?];
    if dims[order as usize..].iter().any(|&d| d != 1) {
        return Err(format_err(format!("dims {dims:?} inconsistent with order {order}")));
    }
    let volume = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| Error::DimensionOverflow(format!("{dims:?}")))?;
    let rest = &bytes[TENSOR_HEADER..];
    let payload = if flags & FLAG_CRC != 0 {
        if rest.len() < 4 {
            return Err(format_err("container ends before its checksum"));
        }
        let (payload, tail) = rest.split_at(rest.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        payload
    } else {
        rest
    };
    if payload.len() != volume {
        return Err(format_err(format!(
            "payload has {} bytes, dims {dims:?} need {volume}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseTensor::from_vec(&dims[..order as usize], data)
}

/// Writes `t` with a checksum.
pub fn save_tensor(path: &Path, t: &DenseTensor) -> Result<()> {
    fs::write(path, encode_tensor(t, true)?)?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<DenseTensor> {
    decode_tensor(&fs::read(path)?)
}

/// Which CSV columns hold the file name, the label and the covariates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub file: String,
    pub label: String,
    /// Covariate columns in order; `None` takes every other column in header
    /// order.
    pub covariates: Option<Vec<String>>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            file: "file".into(),
            label: "y".into(),
            covariates: None,
        }
    }
}

/// Parsed rows of a sample index.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTable {
    pub files: Vec<String>,
    pub labels: Vec<u8>,
    pub names: Vec<String>,
    pub covariates: Vec<Vec<f64>>,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Reads a sample index. Rows must all have the header's width and labels
/// must be exactly `0` or `1`.
pub fn read_covariate_csv(path: &Path, map: &ColumnMap) -> Result<CovariateTable> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format_err(format!("{}: no column `{name}`", path.display())))
    };
    let file_col = column(&map.file)?;
    let label_col = column(&map.label)?;
    let names: Vec<String> = match &map.covariates {
        Some(c) => c.clone(),
        None => header
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != file_col && *i != label_col)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    let cov_cols = names.iter().map(|n| column(n)).collect::<Result<Vec<_>>>()?;
    let mut table = CovariateTable {
        files: Vec::new(),
        labels: Vec::new(),
        names,
        covariates: Vec::new(),
    };
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let line = row + 2;
        table.files.push(record[file_col].to_string());
        table.labels.push(match &record[label_col] {
            "0" => 0,
            "1" => 1,
            other => return Err(format_err(format!("line {line}: label `{other}` is not 0 or 1"))),
        });
        let z = cov_cols
            .iter()
            .map(|&c| {
                record[c]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| format_err(format!("line {line}: bad covariate `{}`", &record[c])))
            })
            .collect::<Result<Vec<_>>>()?;
        table.covariates.push(z);
    }
    Ok(table)
}

/// Writes `data` as `sample_NNNNN.kten` files plus a `samples.csv` index with
/// columns `file,y,z1,…,zq`.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut writer = csv::Writer::from_path(dir.join(SAMPLES_FILE)).map_err(csv_err)?;
    let mut header = vec!["file".to_string(), "y".to_string()];
    header.extend((1..=data.q()).map(|j| format!("z{j}")));
    writer.write_record(&header).map_err(csv_err)?;
    for (i, s) in data.samples().iter().enumerate() {
        let name = format!("sample_{i:05}.kten");
        save_tensor(&dir.join(&name), &s.x)?;
        let mut record = vec![name, s.y.to_string()];
        record.extend(s.z.iter().map(|v| v.to_string()));
        writer.write_record(&record).map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a dataset directory with the default column names.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    Ok(read_dataset_with(dir, &ColumnMap::default(), false)?.0)
}

/// Reads a dataset directory. With `standardize`, continuous covariates are
/// centred and scaled and the fitted scaler is returned. Nothing is returned
/// unless every sample loads.
pub fn read_dataset_with(
    dir: &Path,
    map: &ColumnMap,
    standardize: bool,
) -> Result<(Dataset, Option<CovariateScaler>)> {
    let table = read_covariate_csv(&dir.join(SAMPLES_FILE), map)?;
    let samples = table
        .files
        .iter()
        .zip(&table.labels)
        .zip(&table.covariates)
        .map(|((file, &y), z)| {
            Ok(Sample {
                x: load_tensor(&dir.join(file))?,
                z: z.clone(),
                y,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let data = Dataset::new(samples)?;
    if !standardize {
        return Ok((data, None));
    }
    let scaler = CovariateScaler::fit_dataset(&data)?;
    Ok((scaler.apply(&data)?, Some(scaler)))
}

/// Binary model file: header, shape, penalties, covariate coefficients, all
/// factors, then a CRC32 of everything before it.
pub fn encode_model(model: &SkpdModel) -> Result<Vec<u8>> {
    let cfg = model.cfg();
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.push(if cfg.is_2d() { 2 } else { 3 });
    out.push(model.n_views() as u8);
    for v in cfg.grid.iter().chain(&cfg.patch).chain(&model.shift_spec().offsets) {
        push_u32(&mut out, *v)?;
    }
    push_u32(&mut out, model.rank())?;
    push_u32(&mut out, model.q())?;
    let pen = model.penalties();
    push_f64s(&mut out, &[pen.lambda_a, pen.lambda_b, pen.lambda_gamma, pen.alpha, model.intercept()]);
    push_f64s(&mut out, model.gamma());
    for view in model.views() {
        for (a, b) in view.a().iter().zip(view.b()) {
            push_f64s(&mut out, a.data());
            push_f64s(&mut out, b.data());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<SkpdModel> {
    if bytes.len() < 8 || bytes[..4] != MODEL_MAGIC {
        return Err(format_err("not an SKPD model file (bad magic)"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader::new(body);
    r.take(4)?;
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(format_err(format!("unsupported model version {version}")));
    }
    let order = r.u8()?;
    let n_views = r.u8()? as usize;
    let mut dims = [0usize; 9];
    for d in &mut dims {
        *d = r.usize()?;
    }
    let grid = [dims[0], dims[1], dims[2]];
    let patch = [dims[3], dims[4], dims[5]];
    let cfg = ShapeConfig::new(grid, patch)?;
    if (order == 2) != cfg.is_2d() {
        return Err(format_err(format!("order {order} inconsistent with grid {grid:?} and patch {patch:?}")));
    }
    let shift = ShiftSpec::new([dims[6], dims[7], dims[8]]);
    let rank = r.usize()?;
    let q = r.usize()?;
    let [lambda_a, lambda_b, lambda_gamma, alpha, intercept]: [f64; 5] = r.f64s(5)?.try_into().unwrap();
    let penalties = PenaltyConfig::new(lambda_a, lambda_b, lambda_gamma, alpha)?;
    let gamma = r.f64s(q)?;
    let mut views = Vec::with_capacity(n_views);
    for _ in 0..n_views {
        let mut a = Vec::with_capacity(rank);
        let mut b = Vec::with_capacity(rank);
        for _ in 0..rank {
            a.push(DenseTensor::from_vec(&cfg.grid_shape(), r.f64s(cfg.p())?)?);
            b.push(DenseTensor::from_vec(&cfg.patch_shape(), r.f64s(cfg.d())?)?);
        }
        views.push(FactorSet::new(&cfg, a, b)?);
    }
    if r.pos != body.len() {
        return Err(format_err(format!("{} trailing bytes in model file", body.len() - r.pos)));
    }
    SkpdModel::new(cfg, shift, views, gamma, intercept, penalties)
}

pub fn save_model(path: &Path, model: &SkpdModel) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SkpdModel> {
    decode_model(&fs::read(path)?)
}

/// Pretty-printed JSON.
pub fn report_to_json(report: &FitReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| format_err(format!("report: {e}")))
}

pub fn report_from_json(text: &str) -> Result<FitReport> {
    serde_json::from_str(text).map_err(|e| format_err(format!("report: {e}")))
}

/// One row per trace entry.
pub fn trace_to_csv(report: &FitReport) -> String {
    let mut out = String::from("step,outer,block,objective,inner_iterations,inner_converged\n");
    for (i, t) in report.trace.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{}",
            t.outer, t.block, t.objective, t.inner_iterations, t.inner_converged
        );
    }
    out
}

/// Per-sample probabilities with the observed label.
pub fn predictions_to_csv(probs: &[f64], labels: &[u8]) -> String {
    let mut out = String::from("index,y,probability\n");
    for (i, (p, y)) in probs.iter().zip(labels).enumerate() {
        let _ = writeln!(out, "{i},{y},{p}");
    }
    out
}

/// Parsed `index,y,probability` rows.
pub fn read_predictions_csv(path: &Path) -> Result<(Vec<u8>, Vec<f64>)> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut labels = Vec::new();
    let mut probs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let parse_err = |what: &str| format_err(format!("bad {what} in prediction row"));
        labels.push(record[1].parse().map_err(|_| parse_err("label"))?);
        probs.push(record[2].parse().map_err(|_| parse_err("probability"))?);
    }
    Ok((labels, probs))
}

/// Everything a run needs. Serializes to and parses from a `key = value`
/// manifest; `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Dataset directory; when absent, data are simulated.
    pub data: Option<PathBuf>,
    pub template: TemplateName,
    pub alternative: Option<TemplateName>,
    pub shape: Vec<usize>,
    pub n: usize,
    pub sigma: f64,
    pub label_noise_std: f64,
    pub train_fraction: f64,
    /// Grid extents; the patch follows from the data dims when `patch` is
    /// empty.
    pub grid: Vec<usize>,
    pub patch: Vec<usize>,
    pub rank: usize,
    pub penalties: PenaltyConfig,
    pub solver: SolverConfig,
    pub shift: bool,
    pub folds: usize,
    pub seed: u64,
    pub standardize: bool,
    pub sweep_grids: Vec<Vec<usize>>,
    pub sweep_sigmas: Vec<f64>,
    pub sweep_shifts: Vec<bool>,
    pub sweep_lambda_a: Vec<f64>,
    pub sweep_lambda_b: Vec<f64>,
    pub sweep_alpha: Vec<f64>,
    pub grid2d: Vec<usize>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: None,
            template: TemplateName::Disks,
            alternative: None,
            shape: vec![128, 128],
            n: 1000,
            sigma: 1.0,
            label_noise_std: 1.0,
            train_fraction: 0.8,
            grid: vec![32, 32],
            patch: vec![],
            rank: 1,
            penalties: PenaltyConfig::default(),
            solver: SolverConfig::default(),
            shift: true,
            folds: 5,
            seed: 0,
            standardize: false,
            sweep_grids: vec![],
            sweep_sigmas: vec![],
            sweep_shifts: vec![],
            sweep_lambda_a: vec![],
            sweep_lambda_b: vec![],
            sweep_alpha: vec![],
            grid2d: vec![8, 8],
            out: PathBuf::from("out"),
        }
    }
}

/// Every accepted key, in manifest order.
pub const CONFIG_KEYS: &[&str] = &[
    "data",
    "sim.template",
    "sim.alternative",
    "sim.shape",
    "sim.n",
    "sim.sigma",
    "sim.label_noise_std",
    "sim.train_fraction",
    "grid",
    "patch",
    "rank",
    "lambda_a",
    "lambda_b",
    "lambda_gamma",
    "alpha",
    "shift",
    "folds",
    "seed",
    "standardize",
    "solver.max_outer",
    "solver.outer_tol",
    "solver.inner_max_iter",
    "solver.inner_tol",
    "solver.line_search_beta",
    "solver.accelerate",
    "solver.rebalance",
    "solver.seed",
    "sweep.grids",
    "sweep.sigmas",
    "sweep.shifts",
    "sweep.lambda_a",
    "sweep.lambda_b",
    "sweep.alpha",
    "slices.grid2d",
    "out",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("`{key}`: expected on/off, got `{v}`"))),
    }
}

/// `128x128` style extents; empty or `auto` gives an empty list.
pub fn parse_extents(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.is_empty() || v == "auto" {
        return Ok(vec![]);
    }
    let dims = v
        .split('x')
        .map(|d| parse_num::<usize>(key, d.trim()))
        .collect::<Result<Vec<_>>>()?;
    if dims.len() > 3 || dims.contains(&0) {
        return Err(Error::InvalidConfig(format!("`{key}`: invalid extents `{v}`")));
    }
    Ok(dims)
}

fn parse_list<T>(v: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(vec![]);
    }
    v.split(',').map(|s| item(s.trim())).collect()
}

fn fmt_extents(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn fmt_list<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

fn pad3(key: &str, dims: &[usize]) -> Result<[usize; 3]> {
    match dims {
        [a, b] => Ok([*a, *b, 1]),
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(Error::InvalidConfig(format!("`{key}` needs 2 or 3 extents, got {dims:?}"))),
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "data" => self.data = (!v.is_empty() && v != "none").then(|| PathBuf::from(v)),
            "sim.template" => self.template = v.parse()?,
            "sim.alternative" => {
                self.alternative = if v.is_empty() || v == "none" { None } else { Some(v.parse()?) }
            }
            "sim.shape" => self.shape = parse_extents(key, v)?,
            "sim.n" => self.n = parse_num(key, v)?,
            "sim.sigma" => self.sigma = parse_num(key, v)?,
            "sim.label_noise_std" => self.label_noise_std = parse_num(key, v)?,
            "sim.train_fraction" => self.train_fraction = parse_num(key, v)?,
            "grid" => self.grid = parse_extents(key, v)?,
            "patch" => self.patch = parse_extents(key, v)?,
            "rank" => self.rank = parse_num(key, v)?,
            "lambda_a" => self.penalties.lambda_a = parse_num(key, v)?,
            "lambda_b" => self.penalties.lambda_b = parse_num(key, v)?,
            "lambda_gamma" => self.penalties.lambda_gamma = parse_num(key, v)?,
            "alpha" => self.penalties.alpha = parse_num(key, v)?,
            "shift" => self.shift = parse_bool(key, v)?,
            "folds" => self.folds = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "standardize" => self.standardize = parse_bool(key, v)?,
            "solver.max_outer" => self.solver.max_outer = parse_num(key, v)?,
            "solver.outer_tol" => self.solver.outer_tol = parse_num(key, v)?,
            "solver.inner_max_iter" => self.solver.inner_max_iter = parse_num(key, v)?,
            "solver.inner_tol" => self.solver.inner_tol = parse_num(key, v)?,
            "solver.line_search_beta" => self.solver.line_search_beta = parse_num(key, v)?,
            "solver.accelerate" => self.solver.accelerate = parse_bool(key, v)?,
            "solver.rebalance" => self.solver.rebalance = parse_bool(key, v)?,
            "solver.seed" => self.solver.seed = parse_num(key, v)?,
            "sweep.grids" => self.sweep_grids = parse_list(v, |s| parse_extents(key, s))?,
            "sweep.sigmas" => self.sweep_sigmas = parse_list(v, |s| parse_num(key, s))?,
            "sweep.shifts" => self.sweep_shifts = parse_list(v, |s| parse_bool(key, s))?,
            "sweep.lambda_a" => self.sweep_lambda_a = parse_list(v, |s| parse_num(key, s))?,
            "sweep.lambda_b" => self.sweep_lambda_b = parse_list(v, |s| parse_num(key, s))?,
            "sweep.alpha" => self.sweep_alpha = parse_list(v, |s| parse_num(key, s))?,
            "slices.grid2d" => self.grid2d = parse_extents(key, v)?,
            "out" => self.out = PathBuf::from(v),
            other => return Err(Error::InvalidConfig(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a manifest on top of the defaults. Unknown and repeated keys
    /// are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::InvalidConfig(format!("line {}: `{key}` set twice", n + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Value of `key` as written to a manifest. Reals use the shortest
    /// representation that parses back to the same bits.
    pub fn get(&self, key: &str) -> Result<String> {
        let s = &self.solver;
        let p = &self.penalties;
        Ok(match key {
            "data" => self.data.as_ref().map_or("none".into(), |d| d.display().to_string()),
            "sim.template" => self.template.as_str().into(),
            "sim.alternative" => self.alternative.map_or("none", |t| t.as_str()).into(),
            "sim.shape" => fmt_extents(&self.shape),
            "sim.n" => self.n.to_string(),
            "sim.sigma" => self.sigma.to_string(),
            "sim.label_noise_std" => self.label_noise_std.to_string(),
            "sim.train_fraction" => self.train_fraction.to_string(),
            "grid" => fmt_extents(&self.grid),
            "patch" if self.patch.is_empty() => "auto".into(),
            "patch" => fmt_extents(&self.patch),
            "rank" => self.rank.to_string(),
            "lambda_a" => p.lambda_a.to_string(),
            "lambda_b" => p.lambda_b.to_string(),
            "lambda_gamma" => p.lambda_gamma.to_string(),
            "alpha" => p.alpha.to_string(),
            "shift" => on_off(self.shift).into(),
            "folds" => self.folds.to_string(),
            "seed" => self.seed.to_string(),
            "standardize" => on_off(self.standardize).into(),
            "solver.max_outer" => s.max_outer.to_string(),
            "solver.outer_tol" => s.outer_tol.to_string(),
            "solver.inner_max_iter" => s.inner_max_iter.to_string(),
            "solver.inner_tol" => s.inner_tol.to_string(),
            "solver.line_search_beta" => s.line_search_beta.to_string(),
            "solver.accelerate" => on_off(s.accelerate).into(),
            "solver.rebalance" => on_off(s.rebalance).into(),
            "solver.seed" => s.seed.to_string(),
            "sweep.grids" => fmt_list(&self.sweep_grids, |g| fmt_extents(g)),
            "sweep.sigmas" => fmt_list(&self.sweep_sigmas, f64::to_string),
            "sweep.shifts" => fmt_list(&self.sweep_shifts, |b| on_off(*b).to_string()),
            "sweep.lambda_a" => fmt_list(&self.sweep_lambda_a, f64::to_string),
            "sweep.lambda_b" => fmt_list(&self.sweep_lambda_b, f64::to_string),
            "sweep.alpha" => fmt_list(&self.sweep_alpha, f64::to_string),
            "slices.grid2d" => fmt_extents(&self.grid2d),
            "out" => self.out.display().to_string(),
            other => return Err(Error::InvalidConfig(format!("unknown config key `{other}`"))),
        })
    }

    /// Every key with its value; parsing the result gives back `self`.
    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    /// Checks the settings shared by every subcommand.
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be positive".into()));
        }
        PenaltyConfig::new(
            self.penalties.lambda_a,
            self.penalties.lambda_b,
            self.penalties.lambda_gamma,
            self.penalties.alpha,
        )?;
        if !(0.0..=1.0).contains(&self.penalties.alpha) {
            return Err(Error::InvalidConfig("alpha must lie in [0, 1]".into()));
        }
        self.solver.validate()
    }

    /// Grid/patch configuration for data of extent `dims`.
    pub fn shape_config(&self, dims: [usize; 3]) -> Result<ShapeConfig> {
        match (self.grid.is_empty(), self.patch.is_empty()) {
            (false, true) => ShapeConfig::from_full_dims(dims, pad3("grid", &self.grid)?),
            (true, false) => {
                let patch = pad3("patch", &self.patch)?;
                let mut grid = [0; 3];
                for k in 0..3 {
                    if !dims[k].is_multiple_of(patch[k]) {
                        return Err(Error::InvalidConfig(format!(
                            "patch extent {} does not divide dimension {}",
                            patch[k], dims[k]
                        )));
                    }
                    grid[k] = dims[k] / patch[k];
                }
                ShapeConfig::new(grid, patch)
            }
            (false, false) => {
                let cfg = ShapeConfig::new(pad3("grid", &self.grid)?, pad3("patch", &self.patch)?)?;
                if cfg.full_dims() != dims {
                    return Err(Error::InvalidConfig(format!(
                        "grid × patch = {:?} does not match data dims {dims:?}",
                        cfg.full_dims()
                    )));
                }
                Ok(cfg)
            }
            (true, true) => Err(Error::InvalidConfig("set a grid or a patch size".into())),
        }
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let mut cfg = SimConfig::new(default_template(self.template, &self.shape)?, self.n, self.sigma, self.seed);
        cfg.alternative = self
            .alternative
            .map(|t| default_template(t, &self.shape))
            .transpose()?;
        cfg.label_noise_std = self.label_noise_std;
        cfg.train_fraction = self.train_fraction;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sweep over the `sweep.*` lists; an empty list falls back to the
    /// single-valued setting. `fixed` replaces simulation with a dataset.
    pub fn sweep_spec(&self, fixed: Option<Dataset>) -> Result<SweepSpec> {
        let or_single = |list: &[f64], single: f64| if list.is_empty() { vec![single] } else { list.to_vec() };
        let grids = if self.sweep_grids.is_empty() {
            vec![pad3("grid", &self.grid)?]
        } else {
            self.sweep_grids
                .iter()
                .map(|g| pad3("sweep.grids", g))
                .collect::<Result<Vec<_>>>()?
        };
        let data = match fixed {
            Some(d) => SweepData::Fixed(d),
            None => SweepData::Simulated {
                template: self.template,
                shape: self.shape.clone(),
                n: self.n,
                label_noise_std: self.label_noise_std,
            },
        };
        Ok(SweepSpec {
            data,
            grids,
            sigmas: or_single(&self.sweep_sigmas, self.sigma),
            shifts: if self.sweep_shifts.is_empty() {
                vec![self.shift]
            } else {
                self.sweep_shifts.clone()
            },
            lambda_a: or_single(&self.sweep_lambda_a, self.penalties.lambda_a),
            lambda_b: or_single(&self.sweep_lambda_b, self.penalties.lambda_b),
            alpha: or_single(&self.sweep_alpha, self.penalties.alpha),
            lambda_gamma: self.penalties.lambda_gamma,
            rank: self.rank,
            folds: self.folds,
            solver: self.solver,
            seed: self.seed,
        })
    }

    pub fn grid2d(&self) -> Result<[usize; 2]> {
        match self.grid2d[..] {
            [a, b] => Ok([a, b]),
            _ => Err(Error::InvalidConfig(format!("slices.grid2d needs 2 extents, got {:?}", self.grid2d))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::fit;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
        let n: usize = shape.iter().product();
        DenseTensor::from_vec(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn tensor_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for shape in [&[16, 16, 16][..], &[5, 7], &[9]] {
            let t = random_tensor(shape, &mut rng);
            for checksum in [true, false] {
                let back = decode_tensor(&encode_tensor(&t, checksum).unwrap()).unwrap();
                assert_eq!(back.shape(), t.shape());
                assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }

    #[test]
    fn container_layout() {
        let t = DenseTensor::from_vec(&[2, 1], vec![1.0, -2.0]).unwrap();
        let bytes = encode_tensor(&t, true).unwrap();
        assert_eq!(&bytes[..4], b"KTEN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(bytes[8], 2);
        assert_eq!(bytes[9], 1);
        assert_eq!(bytes.len(), TENSOR_HEADER + 16 + 4);
        assert_eq!(&bytes[22..30], &1.0f64.to_le_bytes());
    }

    #[test]
    fn truncated_or_corrupt_containers_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = random_tensor(&[4, 4, 4], &mut rng);
        let bytes = encode_tensor(&t, true).unwrap();
        assert!(matches!(
            decode_tensor(&bytes[..bytes.len() - 9]),
            Err(Error::Checksum { .. })
        ));
        let mut flipped = bytes.clone();
        flipped[40] ^= 0x10;
        assert!(matches!(decode_tensor(&flipped), Err(Error::Checksum { .. })));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_tensor(&magic), Err(Error::Format(_))));
        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(decode_tensor(&version), Err(Error::Format(_))));
        let plain = encode_tensor(&t, false).unwrap();
        assert!(matches!(decode_tensor(&plain[..plain.len() - 8]), Err(Error::Format(_))));
    }

    fn small_dataset(n: usize, q: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Dataset::new(
            (0..n)
                .map(|i| Sample {
                    x: random_tensor(&[4, 6], &mut rng),
                    z: (0..q).map(|_| rng.sample(StandardNormal)).collect(),
                    y: (i % 2) as u8,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = small_dataset(100, 5, 3);
        write_dataset(dir.path(), &data).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!((back.len(), back.q()), (100, 5));
        assert_eq!(back, data);
    }

    #[test]
    fn csv_column_mapping_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(&path, "age,label,path,sex\n71.5,1,a.kten,0\n64,0,b.kten,1\n").unwrap();
        let map = ColumnMap {
            file: "path".into(),
            label: "label".into(),
            covariates: Some(vec!["sex".into(), "age".into()]),
        };
        let t = read_covariate_csv(&path, &map).unwrap();
        assert_eq!(t.files, vec!["a.kten", "b.kten"]);
        assert_eq!(t.labels, vec![1, 0]);
        assert_eq!(t.covariates, vec![vec![0.0, 71.5], vec![1.0, 64.0]]);

        fs::write(&path, "file,y,z1\na,1,2\nb,0\n").unwrap();
        assert!(matches!(read_covariate_csv(&path, &ColumnMap::default()), Err(Error::Format(_))));
        fs::write(&path, "file,y,z1\na,2,2\n").unwrap();
        assert!(matches!(read_covariate_csv(&path, &ColumnMap::default()), Err(Error::Format(_))));
        fs::write(&path, "file,z1\na,2\n").unwrap();
        assert!(read_covariate_csv(&path, &ColumnMap::default()).is_err());
    }

    #[test]
    fn damaged_sample_yields_no_dataset() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &small_dataset(6, 1, 4)).unwrap();
        let victim = dir.path().join("sample_00003.kten");
        let bytes = fs::read(&victim).unwrap();
        fs::write(&victim, &bytes[..bytes.len() - 12]).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Checksum { .. })));
    }

    #[test]
    fn standardized_load_returns_scaler() {
        let dir = tempfile::tempdir().unwrap();
        let data = small_dataset(20, 2, 5);
        write_dataset(dir.path(), &data).unwrap();
        let (scaled, scaler) = read_dataset_with(dir.path(), &ColumnMap::default(), true).unwrap();
        let scaler = scaler.unwrap();
        for (a, b) in scaled.samples().iter().zip(data.samples()) {
            let back = scaler.inverse_transform(&a.z);
            assert!(back.iter().zip(&b.z).all(|(u, v)| (u - v).abs() < 1e-12));
        }
    }

    #[test]
    fn model_round_trip_is_byte_identical() {
        let data = small_dataset(40, 2, 6);
        let cfg = ShapeConfig::new_2d([2, 3], [2, 2]).unwrap();
        let solver = SolverConfig {
            max_outer: 3,
            ..SolverConfig::default()
        };
        let (model, report) = fit(&data, &cfg, 2, PenaltyConfig::default(), true, &solver).unwrap();
        let bytes = encode_model(&model).unwrap();
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(encode_model(&back).unwrap(), bytes);
        let mut bad = bytes.clone();
        bad[30] ^= 1;
        assert!(matches!(decode_model(&bad), Err(Error::Checksum { .. })));

        let json = report_to_json(&report).unwrap();
        assert_eq!(report_from_json(&json).unwrap(), report);
        let csv = trace_to_csv(&report);
        assert_eq!(csv.lines().count(), report.trace.len() + 1);
    }

    #[test]
    fn prediction_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let probs = [0.1, 0.123456789012345, 1.0 / 3.0];
        fs::write(&path, predictions_to_csv(&probs, &[0, 1, 1])).unwrap();
        let (labels, back) = read_predictions_csv(&path).unwrap();
        assert_eq!(labels, vec![0, 1, 1]);
        assert_eq!(back, probs);
    }

    #[test]
    fn config_manifest_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("sim.sigma", "0.1").unwrap();
        cfg.set("lambda_a", "0.30000000000000004").unwrap();
        cfg.set("sweep.grids", "64x64,32x32,2x2").unwrap();
        cfg.set("sweep.shifts", "on,off").unwrap();
        cfg.set("sim.alternative", "one_ball").unwrap();
        cfg.set("data", "some/dir").unwrap();
        let manifest = cfg.to_manifest();
        assert_eq!(ExperimentConfig::parse(&manifest).unwrap(), cfg);
        assert_eq!(manifest.lines().count(), CONFIG_KEYS.len());
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn config_rejects_unknown_and_repeated_keys() {
        assert!(ExperimentConfig::parse("lambda = 1\n").is_err());
        assert!(ExperimentConfig::parse("rank = 2\nrank = 3\n").is_err());
        assert!(ExperimentConfig::parse("rank 2\n").is_err());
        assert!(ExperimentConfig::parse("shift = maybe\n").is_err());
        let cfg = ExperimentConfig::parse("# comment\nrank = 3 # trailing\n\n").unwrap();
        assert_eq!(cfg.rank, 3);
    }

    #[test]
    fn shape_config_from_grid_or_patch() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(
            cfg.shape_config([128, 128, 1]).unwrap(),
            ShapeConfig::new_2d([32, 32], [4, 4]).unwrap()
        );
        cfg.grid = vec![];
        cfg.patch = vec![8, 8];
        assert_eq!(
            cfg.shape_config([128, 128, 1]).unwrap(),
            ShapeConfig::new_2d([16, 16], [8, 8]).unwrap()
        );
        cfg.grid = vec![4, 4];
        assert!(cfg.shape_config([128, 128, 1]).is_err());
        cfg.grid = vec![3, 3];
        cfg.patch = vec![];
        assert!(cfg.shape_config([128, 128, 1]).is_err());
    }

    proptest! {
        #[test]
        fn container_round_trip(d0 in 1usize..6, d1 in 1usize..6, d2 in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_tensor(&[d0, d1, d2], &mut rng);
            prop_assert_eq!(decode_tensor(&encode_tensor(&t, true).unwrap()).unwrap(), t);
        }

        #[test]
        fn reals_survive_the_manifest(sigma in 0.0f64..1e6, la in 0.0f64..10.0) {
            let mut cfg = ExperimentConfig { sigma, ..ExperimentConfig::default() };
            cfg.penalties.lambda_a = la;
            prop_assert_eq!(ExperimentConfig::parse(&cfg.to_manifest()).unwrap(), cfg);
        }
    }
}
