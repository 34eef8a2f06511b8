//! The two-view logistic SKPD model.
//!
//! The linear predictor of a sample `(x, z)` is
//!
//! ```text
//! η = Σ_r vec(A₁,r)ᵀ K(x) vec(B₁,r) + Σ_r vec(A₂,r)ᵀ K(shift(x)) vec(B₂,r) + ⟨z, γ⟩ + b₀
//! ```
//!
//! where `K` is the block rearrangement and the second view is present only
//! when the model was built with the cyclic shift. The intercept `b₀` is not
//! penalized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shift::{shift, unshift, ShiftSpec};
use crate::tensor::{dot, kron, rearrange, DenseTensor, ShapeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub lambda_gamma: f64,
    /// L1 share of the elastic net on `B`.
    pub alpha: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            lambda_a: 0.1,
            lambda_b: 0.001,
            lambda_gamma: 0.01,
            alpha: 0.2,
        }
    }
}

impl PenaltyConfig {
    /// Rejects negative or non-finite strengths; `alpha` is clamped to `[0, 1]`.
    pub fn new(lambda_a: f64, lambda_b: f64, lambda_gamma: f64, alpha: f64) -> Result<Self> {
        for (name, v) in [
            ("lambda_a", lambda_a),
            ("lambda_b", lambda_b),
            ("lambda_gamma", lambda_gamma),
            ("alpha", alpha),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite")));
            }
        }
        if lambda_a < 0.0 || lambda_b < 0.0 || lambda_gamma < 0.0 {
            return Err(Error::InvalidConfig("penalty strengths must be non-negative".into()));
        }
        Ok(Self {
            lambda_a,
            lambda_b,
            lambda_gamma,
            alpha: alpha.clamp(0.0, 1.0),
        })
    }
}

/// `R` location factors `A_r` (grid shaped) and dictionaries `B_r` (patch shaped).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    pub(crate) a: Vec<DenseTensor>,
    pub(crate) b: Vec<DenseTensor>,
}

impl FactorSet {
    pub fn new(cfg: &ShapeConfig, a: Vec<DenseTensor>, b: Vec<DenseTensor>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::InvalidConfig(format!(
                "factor lists must be non-empty and equally long ({} A, {} B)",
                a.len(),
                b.len()
            )));
        }
        for t in &a {
            if t.dims() != cfg.grid {
                return Err(Error::ShapeMismatch(format!(
                    "A factor {:?} vs grid {:?}",
                    t.dims(),
                    cfg.grid
                )));
            }
        }
        for t in &b {
            if t.dims() != cfg.patch {
                return Err(Error::ShapeMismatch(format!(
                    "B factor {:?} vs patch {:?}",
                    t.dims(),
                    cfg.patch
                )));
            }
        }
        Ok(Self { a, b })
    }

    pub fn zeros(cfg: &ShapeConfig, rank: usize) -> Result<Self> {
        let a = (0..rank)
            .map(|_| DenseTensor::zeros(&cfg.grid_shape()))
            .collect::<Result<Vec<_>>>()?;
        let b = (0..rank)
            .map(|_| DenseTensor::zeros(&cfg.patch_shape()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cfg, a, b)
    }

    pub fn rank(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &[DenseTensor] {
        &self.a
    }

    pub fn b(&self) -> &[DenseTensor] {
        &self.b
    }

    /// `Σ_r A_r ⊗ B_r`.
    pub fn coefficient(&self) -> Result<DenseTensor> {
        let mut c = kron(&self.a[0], &self.b[0])?;
        for (a, b) in self.a.iter().zip(&self.b).skip(1) {
            c = c.axpy(1.0, &kron(a, b)?)?;
        }
        Ok(c)
    }
}

/// A fitted (or hand-built) classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct SkpdModel {
    pub(crate) cfg: ShapeConfig,
    pub(crate) shift: ShiftSpec,
    pub(crate) views: Vec<FactorSet>,
    pub(crate) gamma: Vec<f64>,
    pub(crate) intercept: f64,
    pub(crate) penalties: PenaltyConfig,
}

impl SkpdModel {
    pub fn new(
        cfg: ShapeConfig,
        shift: ShiftSpec,
        views: Vec<FactorSet>,
        gamma: Vec<f64>,
        intercept: f64,
        penalties: PenaltyConfig,
    ) -> Result<Self> {
        if views.is_empty() || views.len() > 2 {
            return Err(Error::InvalidConfig(format!("{} views; expected 1 or 2", views.len())));
        }
        let rank = views[0].rank();
        for v in &views {
            if v.rank() != rank {
                return Err(Error::InvalidConfig("views must share the same rank".into()));
            }
            FactorSet::new(&cfg, v.a.clone(), v.b.clone())?;
        }
        if gamma.iter().any(|g| !g.is_finite()) || !intercept.is_finite() {
            return Err(Error::NonFinite("covariate coefficients".into()));
        }
        Ok(Self {
            cfg,
            shift,
            views,
            gamma,
            intercept,
            penalties,
        })
    }

    /// Model with every coefficient zero.
    pub fn zeros(cfg: ShapeConfig, rank: usize, q: usize, use_shift: bool, penalties: PenaltyConfig) -> Result<Self> {
        let n_views = if use_shift { 2 } else { 1 };
        let views = (0..n_views)
            .map(|_| FactorSet::zeros(&cfg, rank))
            .collect::<Result<Vec<_>>>()?;
        let shift = if use_shift {
            crate::shift::default_shift(&cfg)
        } else {
            ShiftSpec::default()
        };
        Self::new(cfg, shift, views, vec![0.0; q], 0.0, penalties)
    }

    pub fn cfg(&self) -> &ShapeConfig {
        &self.cfg
    }

    pub fn shift_spec(&self) -> &ShiftSpec {
        &self.shift
    }

    pub fn views(&self) -> &[FactorSet] {
        &self.views
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn rank(&self) -> usize {
        self.views[0].rank()
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn q(&self) -> usize {
        self.gamma.len()
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn penalties(&self) -> &PenaltyConfig {
        &self.penalties
    }

    /// `C_v = Σ_r A_{v,r} ⊗ B_{v,r}` in the coordinates of view `v`.
    pub fn coefficient_tensor(&self, view: usize) -> Result<DenseTensor> {
        self.views
            .get(view)
            .ok_or_else(|| Error::InvalidConfig(format!("view {view} out of range")))?
            .coefficient()
    }

    /// The single tensor `C` with `⟨x, C⟩` equal to the image part of the
    /// predictor: `C₁ + unshift(C₂)`, all in original coordinates.
    pub fn effective_coefficient(&self) -> Result<DenseTensor> {
        let mut c = self.coefficient_tensor(0)?;
        if self.views.len() == 2 {
            c = c.axpy(1.0, &unshift(&self.coefficient_tensor(1)?, &self.shift))?;
        }
        Ok(c)
    }

    fn check_sample(&self, x: &DenseTensor, z: &[f64]) -> Result<()> {
        self.cfg.check_tensor(x)?;
        if z.len() != self.gamma.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} covariates for a model with q={}",
                z.len(),
                self.gamma.len()
            )));
        }
        Ok(())
    }

    /// Linear predictor through the rearranged bilinear form of each view.
    pub fn linear_predictor(&self, x: &DenseTensor, z: &[f64]) -> Result<f64> {
        self.check_sample(x, z)?;
        let mut eta = dot(z, &self.gamma) + self.intercept;
        for (v, factors) in self.views.iter().enumerate() {
            let xt = if v == 0 {
                rearrange(x, &self.cfg)?
            } else {
                rearrange(&shift(x, &self.shift), &self.cfg)?
            };
            for (a, b) in factors.a.iter().zip(&factors.b) {
                eta += xt.bilinear(a.data(), b.data());
            }
        }
        Ok(eta)
    }

    pub fn predict_proba(&self, x: &DenseTensor, z: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.linear_predictor(x, z)?))
    }

    /// 1 iff the predicted probability is at least `threshold` (ties go to 1).
    pub fn classify(&self, x: &DenseTensor, z: &[f64], threshold: f64) -> Result<u8> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidConfig(format!("threshold {threshold} outside (0,1)")));
        }
        Ok(classify_proba(self.predict_proba(x, z)?, threshold))
    }

    /// Linear predictors for a whole dataset via the effective coefficient.
    pub fn linear_predictors(&self, data: &Dataset) -> Result<Vec<f64>> {
        let c = self.effective_coefficient()?;
        data.samples
            .iter()
            .map(|s| {
                self.check_sample(&s.x, &s.z)?;
                Ok(dot(s.x.data(), c.data()) + dot(&s.z, &self.gamma) + self.intercept)
            })
            .collect()
    }

    pub fn predict_proba_batch(&self, data: &Dataset) -> Result<Vec<f64>> {
        Ok(self.linear_predictors(data)?.into_iter().map(sigmoid).collect())
    }

    /// `λ_a Σ‖A‖₁ + λ_b Σ[α‖B‖₁ + (1−α)‖B‖²_F] + λ_γ‖γ‖₁` over both views.
    pub fn penalty_value(&self) -> f64 {
        let p = &self.penalties;
        let mut total = 0.0;
        for view in &self.views {
            for a in &view.a {
                total += p.lambda_a * a.l1_norm();
            }
            for b in &view.b {
                let fro = b.frobenius_norm();
                total += p.lambda_b * (p.alpha * b.l1_norm() + (1.0 - p.alpha) * fro * fro);
            }
        }
        total + p.lambda_gamma * self.gamma.iter().map(|g| g.abs()).sum::<f64>()
    }

    /// Mean negative log-likelihood over `data`.
    pub fn data_loss(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InsufficientData("empty dataset".into()));
        }
        let eta = self.linear_predictors(data)?;
        Ok(mean_logistic_loss(&eta, &data.labels()))
    }

    /// Penalized objective: `data_loss + penalty_value`.
    pub fn objective(&self, data: &Dataset) -> Result<f64> {
        Ok(self.data_loss(data)? + self.penalty_value())
    }
}

pub fn classify_proba(p: f64, threshold: f64) -> u8 {
    u8::from(p >= threshold)
}

/// `1 / (1 + e^{−t})`, evaluated without overflow for either sign.
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)`.
#[inline]
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// `−[y ln σ(η) + (1−y) ln(1−σ(η))] = softplus(η) − y η`.
#[inline]
pub fn logistic_loss(eta: f64, y: f64) -> f64 {
    softplus(eta) - y * eta
}

pub fn mean_logistic_loss(eta: &[f64], y: &[f64]) -> f64 {
    eta.iter().zip(y).map(|(&e, &y)| logistic_loss(e, y)).sum::<f64>() / eta.len() as f64
}

/// One observation: tensor covariate, vector covariates and a 0/1 label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: DenseTensor,
    pub z: Vec<f64>,
    pub y: u8,
}

/// Samples with uniform tensor dimensions and covariate count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dims: [usize; 3],
    q: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InsufficientData("a dataset needs at least one sample".into()))?;
        let dims = first.x.dims();
        let q = first.z.len();
        for (i, s) in samples.iter().enumerate() {
            if s.x.dims() != dims {
                return Err(Error::ShapeMismatch(format!(
                    "sample {i} has dims {:?}, expected {dims:?}",
                    s.x.dims()
                )));
            }
            if s.z.len() != q {
                return Err(Error::ShapeMismatch(format!(
                    "sample {i} has {} covariates, expected {q}",
                    s.z.len()
                )));
            }
            if s.y > 1 {
                return Err(Error::Format(format!("sample {i} has label {}", s.y)));
            }
            if s.z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("covariates of sample {i}")));
            }
        }
        Ok(Self { samples, dims, q })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn shape(&self) -> &[usize] {
        self.samples[0].x.shape()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn labels(&self) -> Vec<f64> {
        self.samples.iter().map(|s| f64::from(s.y)).collect()
    }

    pub fn label_bytes(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.y).collect()
    }

    /// `(#y=0, #y=1)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.samples.iter().filter(|s| s.y == 1).count();
        (self.samples.len() - pos, pos)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidConfig(format!("sample index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples)
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::inner;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
        let n: usize = shape.iter().product();
        DenseTensor::from_vec(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    fn random_model(cfg: ShapeConfig, rank: usize, q: usize, use_shift: bool, seed: u64) -> SkpdModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = SkpdModel::zeros(cfg, rank, q, use_shift, PenaltyConfig::default()).unwrap();
        for view in &mut m.views {
            view.a = (0..rank).map(|_| random_tensor(&cfg.grid_shape(), &mut rng)).collect();
            view.b = (0..rank).map(|_| random_tensor(&cfg.patch_shape(), &mut rng)).collect();
        }
        m.gamma = (0..q).map(|_| rng.sample(StandardNormal)).collect();
        m
    }

    #[test]
    fn coefficient_of_indicator_location() {
        let cfg = ShapeConfig::new_2d([2, 3], [2, 2]).unwrap();
        let mut m = SkpdModel::zeros(cfg, 1, 0, false, PenaltyConfig::default()).unwrap();
        m.views[0].a[0].set(0, 0, 0, 1.0);
        m.views[0].b[0] = DenseTensor::filled(&[2, 2], 1.0).unwrap();
        let c = m.coefficient_tensor(0).unwrap();
        assert_eq!(c.shape(), &[4, 6]);
        for i in 0..4 {
            for j in 0..6 {
                let expected = if i < 2 && j < 2 { 1.0 } else { 0.0 };
                assert_eq!(c.get(i, j, 0), expected);
            }
        }
        m.views[0].a[0] = DenseTensor::zeros(&[2, 3]).unwrap();
        assert!(m.coefficient_tensor(0).unwrap().data().iter().all(|v| *v == 0.0));
        assert!(m.coefficient_tensor(1).is_err());
    }

    #[test]
    fn coefficient_rank_two_against_loop() {
        let cfg = ShapeConfig::new([2, 2, 2], [2, 3, 1]).unwrap();
        let m = random_model(cfg, 2, 0, false, 1);
        let c = m.coefficient_tensor(0).unwrap();
        let v = &m.views[0];
        for i in 0..4 {
            for j in 0..6 {
                for k in 0..2 {
                    let expected: f64 = (0..2)
                        .map(|r| v.a[r].get(i / 2, j / 3, k) * v.b[r].get(i % 2, j % 3, 0))
                        .sum();
                    assert!((c.get(i, j, k) - expected).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn zero_model_predicts_zero() {
        let cfg = ShapeConfig::new_2d([2, 2], [3, 3]).unwrap();
        let m = SkpdModel::zeros(cfg, 2, 3, true, PenaltyConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&[6, 6], &mut rng);
        assert_eq!(m.linear_predictor(&x, &[1.0, -2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(m.predict_proba(&x, &[0.0; 3]).unwrap(), 0.5);
        assert_eq!(m.penalty_value(), 0.0);
        assert!(m.linear_predictor(&x, &[1.0]).is_err());
        assert!(m.linear_predictor(&random_tensor(&[6, 5], &mut rng), &[0.0; 3]).is_err());
    }

    #[test]
    fn predictor_of_kron_input_equals_direct_inner_product() {
        let cfg = ShapeConfig::new_2d([3, 2], [2, 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = SkpdModel::zeros(cfg, 1, 0, false, PenaltyConfig::default()).unwrap();
        let mut a = random_tensor(&[3, 2], &mut rng);
        let mut b = random_tensor(&[2, 4], &mut rng);
        a = a.scale(1.0 / a.frobenius_norm());
        b = b.scale(1.0 / b.frobenius_norm());
        m.views[0].a[0] = a.clone();
        m.views[0].b[0] = b.clone();
        let x = kron(&a, &b).unwrap();
        let eta = m.linear_predictor(&x, &[]).unwrap();
        let direct = inner(&x, &m.coefficient_tensor(0).unwrap()).unwrap();
        assert!((eta - direct).abs() < 1e-12);
        // ‖vec A‖² ‖vec B‖² = 1
        assert!((eta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_view_predictor_equals_stacked_single_views() {
        let cfg = ShapeConfig::new_2d([4, 2], [2, 3]).unwrap();
        let two = random_model(cfg, 2, 2, true, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&[8, 6], &mut rng);
        let z = [0.3, -1.2];
        let mut first = two.clone();
        first.views.truncate(1);
        let mut second = two.clone();
        second.views.remove(0);
        second.gamma = vec![0.0; 2];
        let xs = shift(&x, &two.shift);
        let stacked = first.linear_predictor(&x, &z).unwrap() + second.linear_predictor(&xs, &z).unwrap();
        let eta = two.linear_predictor(&x, &z).unwrap();
        assert!((eta - stacked).abs() < 1e-12 * eta.abs().max(1.0));
        // effective coefficient route
        let data = Dataset::new(vec![Sample { x, z: z.to_vec(), y: 1 }]).unwrap();
        let batch = two.linear_predictors(&data).unwrap()[0];
        assert!((eta - batch).abs() < 1e-10 * eta.abs().max(1.0));
    }

    #[test]
    fn empty_second_view_matches_single_view() {
        let cfg = ShapeConfig::new_2d([2, 2], [2, 2]).unwrap();
        let mut two = random_model(cfg, 1, 1, true, 6);
        two.views[1] = FactorSet::zeros(&cfg, 1).unwrap();
        let mut one = two.clone();
        one.views.truncate(1);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let x = random_tensor(&[4, 4], &mut rng);
            let z = [rng.sample::<f64, _>(StandardNormal)];
            assert_eq!(two.predict_proba(&x, &z).unwrap(), one.predict_proba(&x, &z).unwrap());
        }
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(50.0) >= 1.0 - 1e-20);
        assert!(sigmoid(700.0).is_finite() && sigmoid(-700.0) >= 0.0);
        assert!(sigmoid(-750.0) >= 0.0 && sigmoid(-750.0).is_finite());
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        for t in [-30.0, -2.5, -0.1, 0.0, 0.7, 4.0, 36.0] {
            assert!((sigmoid(-t) - (1.0 - sigmoid(t))).abs() <= 1e-15);
        }
    }

    #[test]
    fn threshold_convention() {
        assert_eq!(classify_proba(0.5, 0.5), 1);
        assert_eq!(classify_proba(0.49, 0.5), 0);
        assert_eq!(classify_proba(0.51, 0.5), 1);
        let cfg = ShapeConfig::new_2d([1, 1], [2, 2]).unwrap();
        let m = SkpdModel::zeros(cfg, 1, 0, false, PenaltyConfig::default()).unwrap();
        let x = DenseTensor::zeros(&[2, 2]).unwrap();
        assert_eq!(m.classify(&x, &[], 0.5).unwrap(), 1);
        assert!(m.classify(&x, &[], 1.0).is_err());
    }

    #[test]
    fn penalty_arithmetic() {
        let cfg = ShapeConfig::new_2d([1, 2], [2, 2]).unwrap();
        let mut m = SkpdModel::zeros(cfg, 1, 0, false, PenaltyConfig::new(1.0, 0.0, 0.0, 0.5).unwrap()).unwrap();
        m.views[0].a[0] = DenseTensor::matrix(1, 2, vec![1.0, -2.0]).unwrap();
        assert_eq!(m.penalty_value(), 3.0);

        let mut m = SkpdModel::zeros(cfg, 1, 0, false, PenaltyConfig::new(0.0, 1.0, 0.0, 0.0).unwrap()).unwrap();
        m.views[0].b[0] = DenseTensor::filled(&[2, 2], 1.0).unwrap();
        assert_eq!(m.penalty_value(), 4.0);

        let mut m = SkpdModel::zeros(cfg, 1, 2, true, PenaltyConfig::new(0.5, 2.0, 3.0, 0.25).unwrap()).unwrap();
        m.views[1].a[0] = DenseTensor::matrix(1, 2, vec![2.0, 0.0]).unwrap();
        m.views[1].b[0] = DenseTensor::matrix(2, 2, vec![1.0, -1.0, 0.0, 2.0]).unwrap();
        m.gamma = vec![1.0, -0.5];
        m.intercept = 10.0;
        // 0.5*2 + 2*(0.25*4 + 0.75*6) + 3*1.5
        assert!((m.penalty_value() - (1.0 + 11.0 + 4.5)).abs() < 1e-12);
    }

    #[test]
    fn penalty_config_validation() {
        assert!(PenaltyConfig::new(-1.0, 0.0, 0.0, 0.5).is_err());
        assert!(PenaltyConfig::new(0.0, f64::NAN, 0.0, 0.5).is_err());
        assert_eq!(PenaltyConfig::new(0.0, 0.0, 0.0, 1.7).unwrap().alpha, 1.0);
        assert_eq!(PenaltyConfig::new(0.0, 0.0, 0.0, -0.2).unwrap().alpha, 0.0);
    }

    fn small_dataset(n: usize, seed: u64, labels: impl Fn(usize) -> u8) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|i| Sample {
                x: random_tensor(&[4, 4], &mut rng),
                z: vec![rng.sample(StandardNormal)],
                y: labels(i),
            })
            .collect();
        Dataset::new(samples).unwrap()
    }

    #[test]
    fn objective_of_zero_model_is_log2() {
        let cfg = ShapeConfig::new_2d([2, 2], [2, 2]).unwrap();
        let m = SkpdModel::zeros(cfg, 1, 1, true, PenaltyConfig::default()).unwrap();
        let data = small_dataset(10, 8, |i| (i % 2) as u8);
        assert!((m.objective(&data).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_separation_leaves_only_penalty() {
        let cfg = ShapeConfig::new_2d([1, 1], [4, 4]).unwrap();
        let mut m = SkpdModel::zeros(cfg, 1, 1, false, PenaltyConfig::default()).unwrap();
        m.gamma = vec![1e4];
        let mut data = small_dataset(6, 9, |_| 0);
        let samples: Vec<Sample> = data
            .samples
            .iter()
            .map(|s| {
                let mut s = s.clone();
                s.y = u8::from(s.z[0] > 0.0);
                s.z[0] = if s.y == 1 { 1.0 } else { -1.0 };
                s
            })
            .collect();
        data = Dataset::new(samples).unwrap();
        let obj = m.objective(&data).unwrap();
        assert!((obj - m.penalty_value()).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_naive_formula() {
        let cfg = ShapeConfig::new_2d([2, 2], [2, 2]).unwrap();
        let m = random_model(cfg, 2, 1, true, 10);
        let data = small_dataset(12, 11, |i| u8::from(i % 3 == 0));
        let mut naive = 0.0;
        for s in data.samples() {
            let p = 1.0 / (1.0 + (-m.linear_predictor(&s.x, &s.z).unwrap()).exp());
            let y = f64::from(s.y);
            naive -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        naive /= data.len() as f64;
        let loss = m.data_loss(&data).unwrap();
        assert!((loss - naive).abs() < 1e-10 * naive.abs().max(1.0));
        assert!((m.objective(&data).unwrap() - (loss + m.penalty_value())).abs() < 1e-15);
    }

    #[test]
    fn dataset_validation() {
        let x = DenseTensor::zeros(&[2, 2]).unwrap();
        let bad_label = Sample { x: x.clone(), z: vec![], y: 2 };
        assert!(Dataset::new(vec![bad_label]).is_err());
        let a = Sample { x: x.clone(), z: vec![1.0], y: 0 };
        let b = Sample { x: x.clone(), z: vec![], y: 1 };
        assert!(Dataset::new(vec![a.clone(), b]).is_err());
        let c = Sample { x: DenseTensor::zeros(&[2, 3]).unwrap(), z: vec![1.0], y: 1 };
        assert!(Dataset::new(vec![a.clone(), c]).is_err());
        assert!(Dataset::new(vec![]).is_err());
        let d = Dataset::new(vec![a.clone(), a]).unwrap();
        assert_eq!(d.class_counts(), (2, 0));
        assert!(d.subset(&[3]).is_err());
    }
}
