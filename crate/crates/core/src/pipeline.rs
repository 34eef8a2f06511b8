//! Two-stage modelling of volumes: fit a 3-D model, pick the most informative
//! slice in each anatomical plane from the coefficient magnitudes, then fit one
//! 2-D model per plane on the selected slices.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{cross_validate, FitSettings, MetricSummary};
use crate::model::{Dataset, PenaltyConfig, Sample, SkpdModel};
use crate::optimizer::{fit, FitReport, SolverConfig};
use crate::tensor::{DenseTensor, ShapeConfig};

/// Slicing direction; the plane's slices are indexed along `axis()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    /// Slices along the first axis.
    Axial,
    /// Slices along the second axis.
    Coronal,
    /// Slices along the third axis.
    Sagittal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Axial, Plane::Coronal, Plane::Sagittal];

    pub fn axis(&self) -> usize {
        match self {
            Plane::Axial => 0,
            Plane::Coronal => 1,
            Plane::Sagittal => 2,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Plane::Axial => "axial",
            Plane::Coronal => "coronal",
            Plane::Sagittal => "sagittal",
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Plane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "axial" => Ok(Plane::Axial),
            "coronal" => Ok(Plane::Coronal),
            "sagittal" => Ok(Plane::Sagittal),
            other => Err(Error::InvalidConfig(format!("unknown plane `{other}`"))),
        }
    }
}

/// Per-plane slice scores and the selected slice of each plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSelection {
    /// `scores[p][k]`: total absolute coefficient mass of slice `k` of plane `p`.
    pub scores: [Vec<f64>; 3],
    /// Argmax per plane, lowest index on ties.
    pub selected: [usize; 3],
    /// Planes whose maximal score was attained by more than one slice.
    pub ties: [bool; 3],
}

impl SliceSelection {
    pub fn slice(&self, plane: Plane) -> usize {
        self.selected[plane.axis()]
    }

    /// True when every score is zero, i.e. the selection carries no
    /// information.
    pub fn is_degenerate(&self) -> bool {
        self.scores.iter().all(|s| s.iter().all(|v| *v == 0.0))
    }

    /// `plane,slice,score,selected` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("plane,slice,score,selected\n");
        for plane in Plane::ALL {
            let p = plane.axis();
            for (k, s) in self.scores[p].iter().enumerate() {
                out.push_str(&format!("{plane},{k},{s},{}\n", u8::from(k == self.selected[p])));
            }
        }
        out
    }
}

/// Sums `|c|` over every slice of every plane and picks the argmax per plane.
pub fn slice_scores(c_hat: &DenseTensor) -> Result<SliceSelection> {
    if c_hat.order() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "slice scoring needs a 3-D tensor, got order {}",
            c_hat.order()
        )));
    }
    let [d0, d1, d2] = c_hat.dims();
    let mut scores = [vec![0.0; d0], vec![0.0; d1], vec![0.0; d2]];
    for i in 0..d0 {
        for j in 0..d1 {
            for k in 0..d2 {
                let v = c_hat.get(i, j, k).abs();
                scores[0][i] += v;
                scores[1][j] += v;
                scores[2][k] += v;
            }
        }
    }
    let mut selected = [0; 3];
    let mut ties = [false; 3];
    for p in 0..3 {
        let max = scores[p].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        selected[p] = scores[p].iter().position(|&s| s == max).unwrap_or(0);
        ties[p] = scores[p].iter().filter(|&&s| s == max).count() > 1;
    }
    Ok(SliceSelection { scores, selected, ties })
}

/// Slice `k` of `x` in the given plane, as a 2-D tensor with the two remaining
/// axes in their original order.
pub fn extract_slice(x: &DenseTensor, plane: Plane, k: usize) -> Result<DenseTensor> {
    if x.order() != 3 {
        return Err(Error::ShapeMismatch("slices are taken from 3-D tensors".into()));
    }
    let [d0, d1, d2] = x.dims();
    let axis = plane.axis();
    if k >= x.dims()[axis] {
        return Err(Error::InvalidConfig(format!(
            "slice {k} out of range for {plane} extent {}",
            x.dims()[axis]
        )));
    }
    match plane {
        Plane::Axial => DenseTensor::from_fn(&[d1, d2], |j, l, _| x.get(k, j, l)),
        Plane::Coronal => DenseTensor::from_fn(&[d0, d2], |i, l, _| x.get(i, k, l)),
        Plane::Sagittal => DenseTensor::from_fn(&[d0, d1], |i, j, _| x.get(i, j, k)),
    }
}

/// Standardizes continuous covariate columns; 0/1 columns and constant
/// columns pass through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns that are standardized.
    pub scaled: Vec<bool>,
}

impl CovariateScaler {
    /// Column means and (population) standard deviations of `rows`.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let q = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != q) {
            return Err(Error::ShapeMismatch("ragged covariate rows".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; q];
        let mut std = vec![1.0; q];
        let mut scaled = vec![false; q];
        for j in 0..q {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("covariate column {j}")));
            }
            let binary = col.iter().all(|&v| v == 0.0 || v == 1.0);
            let m = col.iter().sum::<f64>() / n;
            let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
            if !binary && s > 0.0 {
                mean[j] = m;
                std[j] = s;
                scaled[j] = true;
            }
        }
        Ok(Self { mean, std, scaled })
    }

    pub fn fit_dataset(data: &Dataset) -> Result<Self> {
        let rows: Vec<Vec<f64>> = data.samples().iter().map(|s| s.z.clone()).collect();
        Self::fit(&rows)
    }

    pub fn transform(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(j, &v)| if self.scaled[j] { (v - self.mean[j]) / self.std[j] } else { v })
            .collect()
    }

    pub fn inverse_transform(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(j, &v)| if self.scaled[j] { v * self.std[j] + self.mean[j] } else { v })
            .collect()
    }

    /// Copy of `data` with transformed covariates.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.q() != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "scaler fitted on {} columns, data has {}",
                self.mean.len(),
                data.q()
            )));
        }
        Dataset::new(
            data.samples()
                .iter()
                .map(|s| Sample {
                    x: s.x.clone(),
                    z: self.transform(&s.z),
                    y: s.y,
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageConfig {
    pub cfg3d: ShapeConfig,
    /// Grid of the 2-D models; the patch size follows from the plane extents.
    pub grid2d: [usize; 2],
    pub rank: usize,
    pub penalties: PenaltyConfig,
    pub solver: SolverConfig,
    pub folds: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneResult {
    pub plane: Plane,
    pub slice: usize,
    pub cfg: ShapeConfig,
    pub model: SkpdModel,
    pub report: FitReport,
    pub cv: MetricSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageResult {
    pub model3d: SkpdModel,
    pub report3d: FitReport,
    /// `C₁ + unshift(C₂)` of the 3-D model.
    pub c_hat: DenseTensor,
    pub selection: SliceSelection,
    pub planes: Vec<PlaneResult>,
    pub warnings: Vec<String>,
}

/// Stage 1 only: fits the 3-D cyclic-shift model and scores its slices.
pub fn select_slices(
    data3d: &Dataset,
    cfg: &TwoStageConfig,
) -> Result<(SkpdModel, FitReport, DenseTensor, SliceSelection)> {
    if data3d.shape().len() != 3 {
        return Err(Error::ShapeMismatch("two-stage modelling needs 3-D samples".into()));
    }
    let (model, report) = fit(data3d, &cfg.cfg3d, cfg.rank, cfg.penalties, true, &cfg.solver)?;
    let c_hat = model.effective_coefficient()?;
    let selection = slice_scores(&c_hat)?;
    Ok((model, report, c_hat, selection))
}

/// The 2-D dataset made of slice `k` of every subject; covariates and labels
/// are copied unchanged.
pub fn slice_dataset(data3d: &Dataset, plane: Plane, k: usize) -> Result<Dataset> {
    Dataset::new(
        data3d
            .samples()
            .iter()
            .map(|s| {
                Ok(Sample {
                    x: extract_slice(&s.x, plane, k)?,
                    z: s.z.clone(),
                    y: s.y,
                })
            })
            .collect::<Result<Vec<_>>>()?,
    )
}

/// Runs both stages. An all-zero 3-D coefficient tensor does not stop the
/// run; slice 0 is used for every plane and a warning is recorded.
pub fn run_two_stage(data3d: &Dataset, cfg: &TwoStageConfig) -> Result<TwoStageResult> {
    let (model3d, report3d, c_hat, selection) = select_slices(data3d, cfg)?;
    let mut warnings = Vec::new();
    if selection.is_degenerate() {
        warnings.push("3-D coefficient tensor is zero; selecting slice 0 in every plane".to_string());
    }
    for plane in Plane::ALL {
        if selection.ties[plane.axis()] && !selection.is_degenerate() {
            warnings.push(format!(
                "{plane} slice scores tie at the maximum; using the lowest index {}",
                selection.slice(plane)
            ));
        }
    }
    let mut planes = Vec::with_capacity(3);
    for plane in Plane::ALL {
        let slice = selection.slice(plane);
        let data2d = slice_dataset(data3d, plane, slice)?;
        let dims = data2d.dims();
        let cfg2d = ShapeConfig::from_full_dims(dims, [cfg.grid2d[0], cfg.grid2d[1], 1])?;
        let settings = FitSettings {
            cfg: cfg2d,
            rank: cfg.rank,
            penalties: cfg.penalties,
            use_shift: true,
            solver: cfg.solver,
        };
        let (model, report) = fit(&data2d, &cfg2d, cfg.rank, cfg.penalties, true, &cfg.solver)?;
        let cv = cross_validate(&data2d, &settings, cfg.folds, cfg.seed)?;
        planes.push(PlaneResult {
            plane,
            slice,
            cfg: cfg2d,
            model,
            report,
            cv,
        });
    }
    Ok(TwoStageResult {
        model3d,
        report3d,
        c_hat,
        selection,
        planes,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapFormat {
    /// 8-bit binary PGM of `|c|` plus a sidecar text file with the scaling.
    Pgm,
    /// The signed coefficients with shortest round-trip formatting.
    Csv,
}

/// Writes a 2-D coefficient slice. Returns the paths written.
pub fn export_coefficient_map(
    c_hat: &DenseTensor,
    plane: Plane,
    slice_index: usize,
    format: MapFormat,
    path: &Path,
) -> Result<Vec<PathBuf>> {
    let slice = extract_slice(c_hat, plane, slice_index)?;
    let [rows, cols, _] = slice.dims();
    match format {
        MapFormat::Csv => {
            let mut out = String::new();
            for i in 0..rows {
                let row: Vec<String> = (0..cols).map(|j| slice.get(i, j, 0).to_string()).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
            fs::write(path, out)?;
            Ok(vec![path.to_path_buf()])
        }
        MapFormat::Pgm => {
            let mags: Vec<f64> = slice.data().iter().map(|v| v.abs()).collect();
            let min = mags.iter().copied().fold(f64::INFINITY, f64::min);
            let max = mags.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let range = max - min;
            let pixels: Vec<u8> = mags
                .iter()
                .map(|&m| if range > 0.0 { (255.0 * (m - min) / range).round() as u8 } else { 0 })
                .collect();
            let mut file = fs::File::create(path)?;
            write!(file, "P5\n{cols} {rows}\n255\n")?;
            file.write_all(&pixels)?;
            let sidecar = path.with_extension("txt");
            let mut note = format!(
                "plane={plane}\nslice={slice_index}\nrows={rows}\ncols={cols}\nmin_abs={min}\nmax_abs={max}\n"
            );
            if range > 0.0 {
                note.push_str(&format!("scale=255/{range}\n"));
            } else {
                note.push_str("scale=none (zero dynamic range; all pixels 0)\n");
            }
            fs::write(&sidecar, note)?;
            Ok(vec![path.to_path_buf(), sidecar])
        }
    }
}

/// Parses a CSV written by [`export_coefficient_map`].
pub fn read_coefficient_csv(path: &Path) -> Result<DenseTensor> {
    let text = fs::read_to_string(path)?;
    let mut rows = 0;
    let mut cols = None;
    let mut data = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let values = line
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        match cols {
            None => cols = Some(values.len()),
            Some(c) if c != values.len() => {
                return Err(Error::Format(format!("ragged row at line {}", n + 1)));
            }
            _ => {}
        }
        data.extend(values);
        rows += 1;
    }
    DenseTensor::from_vec(&[rows, cols.unwrap_or(0)], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_tensor(shape: &[usize], seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        DenseTensor::from_vec(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    #[test]
    fn single_voxel_selects_its_coordinates() {
        let mut c = DenseTensor::zeros(&[6, 7, 8]).unwrap();
        c.set(4, 2, 5, -3.0);
        let s = slice_scores(&c).unwrap();
        assert_eq!(s.selected, [4, 2, 5]);
        assert_eq!(s.ties, [false; 3]);
        assert_eq!(s.scores[0][4], 3.0);
    }

    #[test]
    fn zero_tensor_falls_back_to_first_slice() {
        let s = slice_scores(&DenseTensor::zeros(&[4, 4, 4]).unwrap()).unwrap();
        assert_eq!(s.selected, [0, 0, 0]);
        assert!(s.is_degenerate());
        assert_eq!(s.ties, [true; 3]);
    }

    #[test]
    fn scores_match_triple_loop() {
        let c = random_tensor(&[8, 8, 8], 1);
        let s = slice_scores(&c).unwrap();
        for k in 0..8 {
            let mut axial = 0.0;
            let mut coronal = 0.0;
            let mut sagittal = 0.0;
            for a in 0..8 {
                for b in 0..8 {
                    axial += c.get(k, a, b).abs();
                    coronal += c.get(a, k, b).abs();
                    sagittal += c.get(a, b, k).abs();
                }
            }
            assert!((s.scores[0][k] - axial).abs() < 1e-12);
            assert!((s.scores[1][k] - coronal).abs() < 1e-12);
            assert!((s.scores[2][k] - sagittal).abs() < 1e-12);
        }
        assert!(slice_scores(&random_tensor(&[4, 4], 2)).is_err());
    }

    #[test]
    fn slices_keep_remaining_axes() {
        let x = DenseTensor::from_fn(&[2, 3, 4], |i, j, k| (100 * i + 10 * j + k) as f64).unwrap();
        let a = extract_slice(&x, Plane::Axial, 1).unwrap();
        assert_eq!(a.shape(), &[3, 4]);
        assert_eq!(a.get(2, 3, 0), 123.0);
        let c = extract_slice(&x, Plane::Coronal, 2).unwrap();
        assert_eq!(c.shape(), &[2, 4]);
        assert_eq!(c.get(1, 3, 0), 123.0);
        let s = extract_slice(&x, Plane::Sagittal, 3).unwrap();
        assert_eq!(s.shape(), &[2, 3]);
        assert_eq!(s.get(1, 2, 0), 123.0);
        assert!(extract_slice(&x, Plane::Axial, 2).is_err());
    }

    #[test]
    fn scaler_round_trip_and_binary_columns() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![i as f64 * 1.7 - 3.0, f64::from(i % 2 == 0), 5.0])
            .collect();
        let s = CovariateScaler::fit(&rows).unwrap();
        assert_eq!(s.scaled, vec![true, false, false]);
        for r in &rows {
            let t = s.transform(r);
            assert_eq!(t[1], r[1]);
            let back = s.inverse_transform(&t);
            for (a, b) in back.iter().zip(r) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
        let col0: Vec<f64> = rows.iter().map(|r| s.transform(r)[0]).collect();
        let mean = col0.iter().sum::<f64>() / 10.0;
        let var = col0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert!(CovariateScaler::fit(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn pgm_export_of_hot_voxel_and_constant_slice() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = DenseTensor::zeros(&[3, 4, 5]).unwrap();
        c.set(1, 2, 3, -0.25);
        let path = dir.path().join("hot.pgm");
        let written = export_coefficient_map(&c, Plane::Axial, 1, MapFormat::Pgm, &path).unwrap();
        assert_eq!(written.len(), 2);
        let bytes = fs::read(&path).unwrap();
        let header = b"P5\n5 4\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let pixels = &bytes[header.len()..];
        assert_eq!(pixels.len(), 20);
        assert_eq!(pixels.iter().filter(|&&p| p == 255).count(), 1);
        assert_eq!(pixels[2 * 5 + 3], 255);
        assert_eq!(pixels.iter().filter(|&&p| p == 0).count(), 19);

        let path = dir.path().join("flat.pgm");
        export_coefficient_map(&c, Plane::Axial, 0, MapFormat::Pgm, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes[header.len()..].iter().all(|&p| p == 0));
        let note = fs::read_to_string(path.with_extension("txt")).unwrap();
        assert!(note.contains("zero dynamic range"));
    }

    #[test]
    fn csv_export_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let c = random_tensor(&[5, 6, 7], 3).map(|v| v * 1e-7 + 1.0 / 3.0);
        for plane in Plane::ALL {
            let path = dir.path().join(format!("{plane}.csv"));
            export_coefficient_map(&c, plane, 2, MapFormat::Csv, &path).unwrap();
            assert_eq!(read_coefficient_csv(&path).unwrap(), extract_slice(&c, plane, 2).unwrap());
        }
    }

    #[test]
    fn slice_datasets_inherit_labels_and_covariates() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples = (0..6)
            .map(|i| Sample {
                x: random_tensor(&[4, 5, 6], i),
                z: vec![rng.sample(StandardNormal)],
                y: (i % 2) as u8,
            })
            .collect();
        let data = Dataset::new(samples).unwrap();
        let d = slice_dataset(&data, Plane::Coronal, 3).unwrap();
        assert_eq!(d.len(), 6);
        assert_eq!(d.shape(), &[4, 6]);
        assert_eq!(d.label_bytes(), data.label_bytes());
        for (a, b) in d.samples().iter().zip(data.samples()) {
            assert_eq!(a.z, b.z);
        }
    }

    proptest! {
        #[test]
        fn permuting_slices_permutes_scores(seed in any::<u64>(), shift in 0usize..6) {
            let c = random_tensor(&[6, 5, 4], seed);
            let perm: Vec<usize> = (0..6).map(|k| (k + shift) % 6).collect();
            let permuted = DenseTensor::from_fn(&[6, 5, 4], |i, j, k| c.get(perm[i], j, k)).unwrap();
            let a = slice_scores(&c).unwrap();
            let b = slice_scores(&permuted).unwrap();
            for (k, &src) in perm.iter().enumerate() {
                prop_assert!((b.scores[0][k] - a.scores[0][src]).abs() <= 1e-12);
            }
        }
    }
}
