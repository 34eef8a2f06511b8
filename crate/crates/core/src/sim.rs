//! Synthetic signal-plus-noise datasets.
//!
//! Half of the samples carry the signal template on top of Gaussian noise, the
//! other half carry an alternative base (zero by default). Labels come from
//! thresholding the sigmoid of the standardized score `⟨X, template⟩ + ε`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sigmoid, Dataset, Sample};
use crate::tensor::{dot, DenseTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    Disks,
    Rings,
    Lobes,
    TwoBalls,
    OneBall,
    Custom,
}

impl TemplateName {
    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateName::Disks => "disks",
            TemplateName::Rings => "rings",
            TemplateName::Lobes => "lobes",
            TemplateName::TwoBalls => "two_balls",
            TemplateName::OneBall => "one_ball",
            TemplateName::Custom => "custom",
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "disks" => TemplateName::Disks,
            "rings" => TemplateName::Rings,
            "lobes" => TemplateName::Lobes,
            "two_balls" => TemplateName::TwoBalls,
            "one_ball" => TemplateName::OneBall,
            "custom" => TemplateName::Custom,
            other => return Err(Error::InvalidConfig(format!("unknown template `{other}`"))),
        })
    }
}

/// A filled disk (2-D) or ball (3-D): every voxel whose index lies strictly
/// within `radius` of `center` takes the gray level `value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: [f64; 3],
    pub radius: f64,
    pub value: f64,
}

/// Voxels with `inner ≤ distance < outer`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub center: [f64; 2],
    pub inner: f64,
    pub outer: f64,
    pub value: f64,
}

/// Shape parameters for [`make_template`].
#[derive(Debug, Clone, PartialEq)]
pub enum TemplateParams {
    Disks(Vec<Ball>),
    Rings(Vec<Ring>),
    /// Four ellipses mirrored about the image centre: semi-axes `(a, b)`,
    /// centred `offset` pixels from the middle along each diagonal.
    Lobes { a: f64, b: f64, offset: f64, value: f64 },
    Balls(Vec<Ball>),
    Custom(DenseTensor),
}

/// A signal pattern with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalTemplate {
    pub name: TemplateName,
    pub tensor: DenseTensor,
}

impl SignalTemplate {
    pub fn dims(&self) -> [usize; 3] {
        self.tensor.dims()
    }
}

fn check_inside(center: &[f64], radius: f64, dims: &[usize]) -> Result<()> {
    for (c, &d) in center.iter().zip(dims) {
        if !(c - radius >= -0.5 && c + radius <= d as f64 - 0.5) {
            return Err(Error::InvalidConfig(format!(
                "shape at {center:?} with radius {radius} leaves a {dims:?} grid"
            )));
        }
    }
    if radius.is_nan() || radius < 0.0 {
        return Err(Error::InvalidConfig(format!("negative radius {radius}")));
    }
    Ok(())
}

fn check_level(value: f64) -> Result<()> {
    if !(value > 0.0 && value <= 1.0) {
        return Err(Error::InvalidConfig(format!("gray level {value} outside (0, 1]")));
    }
    Ok(())
}

/// Largest gray level among the shapes covering a voxel, 0 when none does.
fn max_level(levels: impl Iterator<Item = Option<f64>>) -> f64 {
    levels.flatten().fold(0.0, f64::max)
}

fn dist2(idx: [usize; 3], center: &[f64]) -> f64 {
    center
        .iter()
        .zip(idx)
        .map(|(c, i)| (i as f64 - c).powi(2))
        .sum()
}

/// Rasterizes a template. 2-D names (`disks`, `rings`, `lobes`) need a 2-D
/// shape; the ball templates need 3-D.
pub fn make_template(name: TemplateName, shape: &[usize], params: &TemplateParams) -> Result<SignalTemplate> {
    let two_d = shape.len() == 2;
    let tensor = match (name, params) {
        (TemplateName::Disks, TemplateParams::Disks(disks)) if two_d => {
            for d in disks {
                check_inside(&d.center[..2], d.radius, shape)?;
                check_level(d.value)?;
            }
            DenseTensor::from_fn(shape, |i, j, _| {
                max_level(
                    disks
                        .iter()
                        .map(|d| (dist2([i, j, 0], &d.center[..2]) < d.radius * d.radius).then_some(d.value)),
                )
            })?
        }
        (TemplateName::Rings, TemplateParams::Rings(rings)) if two_d => {
            for r in rings {
                check_inside(&r.center, r.outer, shape)?;
                if r.inner > r.outer {
                    return Err(Error::InvalidConfig("ring inner radius exceeds outer".into()));
                }
                check_level(r.value)?;
            }
            DenseTensor::from_fn(shape, |i, j, _| {
                max_level(rings.iter().map(|r| {
                    let d2 = dist2([i, j, 0], &r.center);
                    (d2 >= r.inner * r.inner && d2 < r.outer * r.outer).then_some(r.value)
                }))
            })?
        }
        (TemplateName::Lobes, &TemplateParams::Lobes { a, b, offset, value }) if two_d => {
            check_level(value)?;
            let mid = [(shape[0] as f64 - 1.0) / 2.0, (shape[1] as f64 - 1.0) / 2.0];
            let diag = offset / std::f64::consts::SQRT_2;
            let centers = [
                [mid[0] - diag, mid[1] - diag],
                [mid[0] - diag, mid[1] + diag],
                [mid[0] + diag, mid[1] - diag],
                [mid[0] + diag, mid[1] + diag],
            ];
            for c in &centers {
                check_inside(c, a.max(b), shape)?;
            }
            // Upper lobes lean outward along their diagonal, lower ones mirror
            // them; `a` is the semi-axis along the diagonal.
            DenseTensor::from_fn(shape, |i, j, _| {
                let inside = centers.iter().any(|c| {
                    let (di, dj) = (i as f64 - c[0], j as f64 - c[1]);
                    let sign = if (c[0] < mid[0]) == (c[1] < mid[1]) { 1.0 } else { -1.0 };
                    let along = (di + sign * dj) / std::f64::consts::SQRT_2;
                    let across = (di - sign * dj) / std::f64::consts::SQRT_2;
                    (along / a).powi(2) + (across / b).powi(2) < 1.0
                });
                if inside {
                    value
                } else {
                    0.0
                }
            })?
        }
        (TemplateName::TwoBalls | TemplateName::OneBall, TemplateParams::Balls(balls)) if shape.len() == 3 => {
            let expected = if name == TemplateName::TwoBalls { 2 } else { 1 };
            if balls.len() != expected {
                return Err(Error::InvalidConfig(format!(
                    "{name} needs {expected} balls, got {}",
                    balls.len()
                )));
            }
            for b in balls {
                check_inside(&b.center, b.radius, shape)?;
                check_level(b.value)?;
            }
            DenseTensor::from_fn(shape, |i, j, k| {
                max_level(
                    balls
                        .iter()
                        .map(|b| (dist2([i, j, k], &b.center) < b.radius * b.radius).then_some(b.value)),
                )
            })?
        }
        (TemplateName::Custom, TemplateParams::Custom(t)) => {
            if t.shape() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "custom template has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if t.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidConfig("custom template values must lie in [0,1]".into()));
            }
            t.clone()
        }
        _ => {
            return Err(Error::InvalidConfig(format!(
                "template `{name}` does not accept these parameters for shape {shape:?}"
            )))
        }
    };
    Ok(SignalTemplate { name, tensor })
}

/// Seed of the fixed disk scatter used by the default `disks` template.
const DISK_SCATTER_SEED: u64 = 0xd15c_5ca7;

/// Parameters scaled to the grid (reference size 128 for 2-D, 32 for 3-D):
///
/// * `disks`: 80 disks of radius 4 at gray level 0.4, scattered uniformly by
///   a fixed seed. Many small low-contrast disks spread the signal over the
///   whole image, so classification degrades gradually over noise levels
///   1 to 15.
/// * `rings`: two annuli; `lobes`: four mirrored ellipses.
/// * `two_balls` / `one_ball`: balls of radius 7 stacked along the first axis;
///   the `one_ball` variant keeps the upper one.
pub fn default_params(name: TemplateName, shape: &[usize]) -> Result<TemplateParams> {
    let s = |k: usize| shape.get(k).copied().unwrap_or(1) as f64;
    match name {
        TemplateName::Disks if shape.len() == 2 => {
            let radius = 4.0 * s(0).min(s(1)) / 128.0;
            let mut rng = ChaCha8Rng::seed_from_u64(DISK_SCATTER_SEED);
            let disks = (0..80)
                .map(|_| {
                    let ci = rng.random_range(radius..=s(0) - 1.0 - radius);
                    let cj = rng.random_range(radius..=s(1) - 1.0 - radius);
                    Ball { center: [ci, cj, 0.0], radius, value: 0.4 }
                })
                .collect();
            Ok(TemplateParams::Disks(disks))
        }
        TemplateName::Rings if shape.len() == 2 => {
            let u = s(0).min(s(1)) / 128.0;
            Ok(TemplateParams::Rings(vec![
                Ring { center: [42.0 * s(0) / 128.0, 44.0 * s(1) / 128.0], inner: 9.0 * u, outer: 16.0 * u, value: 1.0 },
                Ring { center: [86.0 * s(0) / 128.0, 84.0 * s(1) / 128.0], inner: 12.0 * u, outer: 20.0 * u, value: 1.0 },
            ]))
        }
        TemplateName::Lobes if shape.len() == 2 => {
            let u = s(0).min(s(1)) / 128.0;
            Ok(TemplateParams::Lobes { a: 20.0 * u, b: 11.0 * u, offset: 30.0 * u, value: 1.0 })
        }
        TemplateName::TwoBalls | TemplateName::OneBall if shape.len() == 3 => {
            let r = s(0).min(s(1)).min(s(2)) * 7.0 / 32.0;
            let (c1, c2) = (s(1) / 2.0 - 0.5, s(2) / 2.0 - 0.5);
            let upper = Ball { center: [s(0) * 0.25 - 0.5, c1, c2], radius: r, value: 1.0 };
            let lower = Ball { center: [s(0) * 0.75 - 0.5, c1, c2], radius: r, value: 1.0 };
            Ok(TemplateParams::Balls(if name == TemplateName::TwoBalls {
                vec![upper, lower]
            } else {
                vec![upper]
            }))
        }
        _ => Err(Error::InvalidConfig(format!(
            "no default parameters for `{name}` on shape {shape:?}"
        ))),
    }
}

/// [`make_template`] with [`default_params`].
pub fn default_template(name: TemplateName, shape: &[usize]) -> Result<SignalTemplate> {
    make_template(name, shape, &default_params(name, shape)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Base of the signal group; also the direction of the label score.
    pub template: SignalTemplate,
    /// Base of the other group; zero when absent.
    pub alternative: Option<SignalTemplate>,
    pub n: usize,
    pub sigma: f64,
    pub label_noise_std: f64,
    pub seed: u64,
    /// Fraction of each class assigned to the training split by [`generate`].
    pub train_fraction: f64,
}

impl SimConfig {
    pub fn new(template: SignalTemplate, n: usize, sigma: f64, seed: u64) -> Self {
        Self {
            template,
            alternative: None,
            n,
            sigma,
            label_noise_std: 1.0,
            seed,
            train_fraction: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || !self.n.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!("n = {} must be positive and even", self.n)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma = {} must be non-negative", self.sigma)));
        }
        if !(self.label_noise_std >= 0.0 && self.label_noise_std.is_finite()) {
            return Err(Error::InvalidConfig("label_noise_std must be non-negative".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_fraction = {} outside (0, 1]",
                self.train_fraction
            )));
        }
        if let Some(alt) = &self.alternative {
            if alt.tensor.shape() != self.template.tensor.shape() {
                return Err(Error::ShapeMismatch("alternative template shape differs".into()));
            }
        }
        Ok(())
    }
}

const LABEL_STREAM_SALT: u64 = 0x1abe_15a1_7000_0000;
const SPLIT_SALT: u64 = 0x5b11_7000_0000_0001;
const MAX_LABEL_DRAWS: u64 = 10;

/// Group of sample `i`: odd indices carry the signal template.
pub fn signal_group(i: usize) -> bool {
    i % 2 == 1
}

/// All `n` samples in generation order, with labels.
pub fn generate_all(cfg: &SimConfig) -> Result<Dataset> {
    cfg.validate()?;
    let shape = cfg.template.tensor.shape().to_vec();
    let noise = Normal::new(0.0, cfg.sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut tensors = Vec::with_capacity(cfg.n);
    let mut base_scores = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        // Independent stream per sample.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64 + 1);
        let base = if signal_group(i) {
            Some(&cfg.template.tensor)
        } else {
            cfg.alternative.as_ref().map(|a| &a.tensor)
        };
        let data: Vec<f64> = match base {
            Some(b) => b.data().iter().map(|v| v + noise.sample(&mut rng)).collect(),
            None => (0..cfg.template.tensor.len()).map(|_| noise.sample(&mut rng)).collect(),
        };
        base_scores.push(dot(&data, cfg.template.tensor.data()));
        tensors.push(DenseTensor::from_vec(&shape, data)?);
    }

    let labels = (0..MAX_LABEL_DRAWS)
        .map(|attempt| draw_labels(&base_scores, cfg, attempt))
        .find(|labels| {
            let pos = labels.iter().filter(|&&y| y == 1).count();
            pos > 0 && pos < labels.len()
        })
        .ok_or(Error::SingleClass)?;

    Dataset::new(
        tensors
            .into_iter()
            .zip(labels)
            .map(|(x, y)| Sample { x, z: vec![], y })
            .collect(),
    )
}

fn draw_labels(base_scores: &[f64], cfg: &SimConfig, attempt: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ LABEL_STREAM_SALT);
    rng.set_stream(attempt);
    let scores: Vec<f64> = base_scores
        .iter()
        .map(|t| t + cfg.label_noise_std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sd = (scores.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
    scores
        .iter()
        .map(|t| {
            let z = if sd > 0.0 { (t - mean) / sd } else { 0.0 };
            u8::from(sigmoid(z) >= 0.5)
        })
        .collect()
}

/// Generates the samples and splits them into stratified train and test sets.
/// Requires `train_fraction < 1` so that both splits are non-empty.
pub fn generate(cfg: &SimConfig) -> Result<(Dataset, Dataset)> {
    if cfg.train_fraction >= 1.0 {
        return Err(Error::InvalidConfig(
            "train_fraction must be below 1 to leave a test split".into(),
        ));
    }
    let all = generate_all(cfg)?;
    let (train, test) = stratified_split(&all.label_bytes(), cfg.train_fraction, cfg.seed ^ SPLIT_SALT);
    if train.is_empty() || test.is_empty() {
        return Err(Error::InsufficientData("a split is empty".into()));
    }
    Ok((all.subset(&train)?, all.subset(&test)?))
}

/// Shuffles each class and assigns `round(fraction · count)` members to the
/// first split. Both index lists are returned in ascending order.
pub fn stratified_split(labels: &[u8], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        shuffle(&mut idx, &mut rng);
        let cut = (fraction * idx.len() as f64).round() as usize;
        first.extend_from_slice(&idx[..cut]);
        second.extend_from_slice(&idx[cut..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    (first, second)
}

/// Fisher-Yates with the given generator.
pub(crate) fn shuffle<T>(v: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(center: [f64; 2], radius: f64) -> TemplateParams {
        TemplateParams::Disks(vec![Ball { center: [center[0], center[1], 0.0], radius, value: 1.0 }])
    }

    #[test]
    fn zero_radius_disk_is_empty() {
        let t = make_template(TemplateName::Disks, &[16, 16], &disk([8.0, 8.0], 0.0)).unwrap();
        assert_eq!(t.tensor.count_nonzero(), 0);
    }

    #[test]
    fn disk_area_matches_pi_r_squared() {
        for r in [3.0, 7.5, 12.0, 20.0] {
            let t = make_template(TemplateName::Disks, &[64, 64], &disk([31.5, 30.2], r)).unwrap();
            let area = t.tensor.count_nonzero() as f64;
            assert!((area - std::f64::consts::PI * r * r).abs() <= 4.0 * r, "r={r}: {area}");
        }
    }

    #[test]
    fn out_of_bounds_shapes_are_rejected() {
        assert!(make_template(TemplateName::Disks, &[16, 16], &disk([2.0, 8.0], 4.0)).is_err());
        assert!(make_template(TemplateName::Disks, &[16, 16, 4], &disk([8.0, 8.0], 2.0)).is_err());
        assert!(make_template(TemplateName::Rings, &[16, 16], &disk([8.0, 8.0], 2.0)).is_err());
        assert!("stars".parse::<TemplateName>().is_err());
    }

    #[test]
    fn two_balls_minus_one_ball_is_second_ball() {
        let shape = [32, 32, 32];
        let two = default_template(TemplateName::TwoBalls, &shape).unwrap();
        let one = default_template(TemplateName::OneBall, &shape).unwrap();
        let TemplateParams::Balls(balls) = default_params(TemplateName::TwoBalls, &shape).unwrap() else {
            unreachable!()
        };
        let lower = balls[1];
        let diff = two.tensor.axpy(-1.0, &one.tensor).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                for k in 0..32 {
                    let inside = dist2([i, j, k], &lower.center) < lower.radius * lower.radius;
                    assert_eq!(diff.get(i, j, k), f64::from(u8::from(inside)));
                }
            }
        }
        assert!(diff.count_nonzero() > 1000);
    }

    #[test]
    fn default_templates_are_two_level_and_nonempty() {
        for (name, level) in [(TemplateName::Disks, 0.4), (TemplateName::Rings, 1.0), (TemplateName::Lobes, 1.0)] {
            let t = default_template(name, &[128, 128]).unwrap();
            assert!(t.tensor.data().iter().all(|v| *v == 0.0 || *v == level));
            assert!(t.tensor.count_nonzero() > 500, "{name}");
        }
    }

    #[test]
    fn gray_levels_are_validated_and_overlaps_take_the_maximum() {
        let two = TemplateParams::Disks(vec![
            Ball { center: [8.0, 8.0, 0.0], radius: 3.0, value: 0.3 },
            Ball { center: [8.0, 9.0, 0.0], radius: 3.0, value: 0.7 },
        ]);
        let t = make_template(TemplateName::Disks, &[16, 16], &two).unwrap();
        assert_eq!(t.tensor.get(8, 8, 0), 0.7);
        assert_eq!(t.tensor.get(8, 6, 0), 0.3);
        let bad = TemplateParams::Disks(vec![Ball { center: [8.0, 8.0, 0.0], radius: 3.0, value: 1.5 }]);
        assert!(make_template(TemplateName::Disks, &[16, 16], &bad).is_err());
    }

    #[test]
    fn lobes_are_mirror_symmetric() {
        let t = default_template(TemplateName::Lobes, &[64, 64]).unwrap();
        for i in 0..64 {
            for j in 0..64 {
                assert_eq!(t.tensor.get(i, j, 0), t.tensor.get(63 - i, j, 0));
                assert_eq!(t.tensor.get(i, j, 0), t.tensor.get(i, 63 - j, 0));
            }
        }
    }

    fn small_cfg(sigma: f64, label_noise_std: f64, seed: u64) -> SimConfig {
        let template = make_template(TemplateName::Disks, &[16, 16], &disk([7.5, 7.5], 4.0)).unwrap();
        SimConfig {
            label_noise_std,
            ..SimConfig::new(template, 40, sigma, seed)
        }
    }

    #[test]
    fn noiseless_labels_match_groups() {
        let data = generate_all(&small_cfg(0.0, 0.0, 1)).unwrap();
        for (i, s) in data.samples().iter().enumerate() {
            assert_eq!(s.y == 1, signal_group(i));
        }
        assert_eq!(data.class_counts(), (20, 20));
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg(1.0, 1.0, 7);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = generate_all(&small_cfg(1.0, 1.0, 8)).unwrap();
        assert_ne!(generate_all(&cfg).unwrap(), other);
    }

    #[test]
    fn noise_moments() {
        let template = make_template(TemplateName::Disks, &[32, 32], &disk([15.5, 15.5], 6.0)).unwrap();
        let cfg = SimConfig::new(template.clone(), 1000, 2.5, 3);
        let data = generate_all(&cfg).unwrap();
        let noise_only: Vec<&Sample> = data
            .samples()
            .iter()
            .enumerate()
            .filter(|(i, _)| !signal_group(*i))
            .map(|(_, s)| s)
            .collect();
        assert_eq!(noise_only.len(), 500);
        let values: Vec<f64> = noise_only.iter().flat_map(|s| s.x.data().iter().copied()).collect();
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt();
        assert!((sd - 2.5).abs() <= 0.02 * 2.5, "{sd}");
        // template purity
        let ips: Vec<f64> = noise_only.iter().map(|s| dot(s.x.data(), template.tensor.data())).collect();
        let ip_mean = ips.iter().sum::<f64>() / ips.len() as f64;
        let bound = 3.0 * 2.5 * template.tensor.frobenius_norm() / (500f64).sqrt();
        assert!(ip_mean.abs() <= bound);
    }

    #[test]
    fn split_is_stratified_and_complete() {
        let cfg = SimConfig {
            train_fraction: 0.75,
            ..small_cfg(1.0, 1.0, 5)
        };
        let (train, test) = generate(&cfg).unwrap();
        assert_eq!(train.len() + test.len(), 40);
        let all = generate_all(&cfg).unwrap();
        let (n0, n1) = all.class_counts();
        let (t0, t1) = train.class_counts();
        assert_eq!(t0, (0.75 * n0 as f64).round() as usize);
        assert_eq!(t1, (0.75 * n1 as f64).round() as usize);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = small_cfg(1.0, 1.0, 1);
        cfg.n = 41;
        assert!(generate_all(&cfg).is_err());
        let mut cfg = small_cfg(-1.0, 1.0, 1);
        cfg.n = 40;
        assert!(generate_all(&cfg).is_err());
        let cfg = SimConfig {
            train_fraction: 1.0,
            ..small_cfg(1.0, 1.0, 1)
        };
        assert!(generate(&cfg).is_err());
        assert!(generate_all(&cfg).is_ok());
    }

    #[test]
    fn alternative_base_shifts_noise_group() {
        let shape = [16, 16, 16];
        let two = make_template(
            TemplateName::TwoBalls,
            &shape,
            &TemplateParams::Balls(vec![
                Ball { center: [4.0, 7.5, 7.5], radius: 3.0, value: 1.0 },
                Ball { center: [11.0, 7.5, 7.5], radius: 3.0, value: 1.0 },
            ]),
        )
        .unwrap();
        let one = make_template(
            TemplateName::OneBall,
            &shape,
            &TemplateParams::Balls(vec![Ball { center: [4.0, 7.5, 7.5], radius: 3.0, value: 1.0 }]),
        )
        .unwrap();
        let cfg = SimConfig {
            alternative: Some(one.clone()),
            label_noise_std: 0.0,
            ..SimConfig::new(two, 20, 0.0, 2)
        };
        let data = generate_all(&cfg).unwrap();
        assert_eq!(data.samples()[0].x, one.tensor);
        for (i, s) in data.samples().iter().enumerate() {
            assert_eq!(s.y == 1, signal_group(i));
        }
    }
}
