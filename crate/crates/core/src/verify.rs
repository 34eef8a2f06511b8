//! Self-checks that can be run from an installed binary: rearrangement
//! identities, shift laws, block gradients against finite differences, and
//! the best rank-`R` error of a block that straddles four cells.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::model::{Dataset, FactorSet, PenaltyConfig, Sample, SkpdModel};
use crate::optimizer::{PenalizedLogisticProblem, Workspace};
use crate::shift::{default_shift, shift, unshift, ShiftSpec};
use crate::tensor::{inner, kron, kron_best_rank_r_error, rearrange, DenseTensor, Matrix, ShapeConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed deviation and the tolerance it was held to.
    pub detail: String,
}

impl Check {
    fn from_error(name: &str, worst: f64, tol: f64) -> Self {
        Self {
            name: name.to_string(),
            passed: worst <= tol,
            detail: format!("max deviation {worst:.3e} (tol {tol:.0e})"),
        }
    }
}

/// Measured and predicted relative best rank-`R` error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub rank: usize,
    pub measured: f64,
    pub expected: f64,
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
    let n: usize = shape.iter().product();
    DenseTensor::from_vec(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).expect("finite samples")
}

fn random_cfg(rng: &mut ChaCha8Rng) -> ShapeConfig {
    let three_d = rng.random_bool(0.5);
    let mut grid = [1; 3];
    let mut patch = [1; 3];
    for k in 0..if three_d { 3 } else { 2 } {
        grid[k] = rng.random_range(1..5);
        patch[k] = rng.random_range(1..5);
    }
    ShapeConfig::new(grid, patch).expect("small shapes")
}

/// Square image of `grid · patch` pixels holding one patch-sized block of ones
/// offset by one and a half patches, so it covers parts of four cells.
pub fn straddling_block(grid: usize, patch: usize) -> Result<DenseTensor> {
    let n = grid * patch;
    let start = patch + patch / 2;
    let inside = |i: usize| (start..start + patch).contains(&i);
    DenseTensor::from_fn(&[n, n], |i, j, _| if inside(i) && inside(j) { 1.0 } else { 0.0 })
}

/// Relative best rank-`R` error of [`straddling_block`] on a 4×4 grid of 4×4
/// patches, against `√((4 − R)/4)`.
pub fn straddling_block_errors() -> Result<Vec<BoundRow>> {
    let cfg = ShapeConfig::new_2d([4, 4], [4, 4])?;
    let c = straddling_block(4, 4)?;
    let norm = c.frobenius_norm();
    (1..=4)
        .map(|rank| {
            Ok(BoundRow {
                rank,
                measured: kron_best_rank_r_error(&c, &cfg, rank)? / norm,
                expected: ((4 - rank) as f64 / 4.0).sqrt(),
            })
        })
        .collect()
}

fn check_rearrangement(rng: &mut ChaCha8Rng, trials: usize) -> Result<Vec<Check>> {
    let mut outer_err: f64 = 0.0;
    let mut bilinear_err: f64 = 0.0;
    for _ in 0..trials {
        let cfg = random_cfg(rng);
        let a = random_tensor(&cfg.grid_shape(), rng);
        let b = random_tensor(&cfg.patch_shape(), rng);
        let c = kron(&a, &b)?;
        let m = rearrange(&c, &cfg)?;
        let o = Matrix::outer(a.data(), b.data());
        for (x, y) in m.data().iter().zip(o.data()) {
            outer_err = outer_err.max((x - y).abs());
        }
        let x = random_tensor(&cfg.full_shape(), rng);
        let direct = inner(&x, &c)?;
        let via = rearrange(&x, &cfg)?.bilinear(a.data(), b.data());
        bilinear_err = bilinear_err.max((direct - via).abs() / direct.abs().max(1.0));
    }
    Ok(vec![
        Check::from_error("rearrange(A ⊗ B) = vec(A) vec(B)ᵀ", outer_err, 1e-12),
        Check::from_error("⟨X, A ⊗ B⟩ = vec(A)ᵀ K(X) vec(B)", bilinear_err, 1e-10),
    ])
}

fn check_shift_laws(rng: &mut ChaCha8Rng, trials: usize) -> Vec<Check> {
    let mut group = true;
    let mut inverse = true;
    let mut norm_err: f64 = 0.0;
    let mut matrix = true;
    for _ in 0..trials {
        let dims = [rng.random_range(1..7), rng.random_range(1..7), rng.random_range(1..4)];
        let x = random_tensor(&dims, rng);
        let s = ShiftSpec::new([rng.random_range(0..12), rng.random_range(0..12), rng.random_range(0..12)]);
        let t = ShiftSpec::new([rng.random_range(0..12), rng.random_range(0..12), rng.random_range(0..12)]);
        let st = ShiftSpec::new([
            s.offsets[0] + t.offsets[0],
            s.offsets[1] + t.offsets[1],
            s.offsets[2] + t.offsets[2],
        ]);
        group &= shift(&shift(&x, &s), &t) == shift(&x, &st);
        inverse &= unshift(&shift(&x, &s), &s) == x;
        norm_err = norm_err.max((shift(&x, &s).frobenius_norm() - x.frobenius_norm()).abs());

        // Matrix form: shifting rows by s₁ and columns by s₂ permutes entries
        // as (Qᵀ)^{s₁} X Q^{s₂}.
        let (r, c) = (dims[0], dims[1]);
        let m = random_tensor(&[r, c], rng);
        let (s1, s2) = (s.offsets[0], s.offsets[1]);
        let qt = |n: usize, p: usize| {
            nalgebra::DMatrix::<f64>::from_fn(n, n, |i, j| if (j + p) % n == i { 1.0 } else { 0.0 })
        };
        let dense = nalgebra::DMatrix::from_row_slice(r, c, m.data());
        let expected = qt(r, s1) * dense * qt(c, s2).transpose();
        let shifted = shift(&m, &ShiftSpec::new([s1, s2, 0]));
        matrix &= (0..r).all(|i| (0..c).all(|j| shifted.get(i, j, 0) == expected[(i, j)]));
    }
    let flag = |name: &str, ok: bool| Check {
        name: name.to_string(),
        passed: ok,
        detail: if ok { "exact".into() } else { "mismatch".into() },
    };
    vec![
        flag("shift(shift(X, s), t) = shift(X, s + t)", group),
        flag("unshift(shift(X, s), s) = X", inverse),
        Check::from_error("‖shift(X)‖ = ‖X‖", norm_err, 1e-12),
        flag("shift agrees with cyclic-shift matrix products", matrix),
    ]
}

/// Largest relative gap between the analytic gradient of the data term and
/// central differences over `points` random points.
fn gradient_gap(problem: &PenalizedLogisticProblem, rng: &mut ChaCha8Rng, points: usize) -> f64 {
    let m = problem.design.cols();
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let w: Vec<f64> = (0..m).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let g = problem.gradient(&w);
        for j in 0..m {
            let h = 1e-5 * w[j].abs().max(1.0);
            let mut plus = w.clone();
            let mut minus = w.clone();
            plus[j] += h;
            minus[j] -= h;
            let fd = (problem.data_loss(&plus) - problem.data_loss(&minus)) / (2.0 * h);
            worst = worst.max((fd - g[j]).abs() / g[j].abs().max(1e-3));
        }
    }
    worst
}

fn check_gradients(rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let cfg = ShapeConfig::new_2d([3, 2], [2, 3])?;
    let full = cfg.full_shape();
    let samples = (0..30)
        .map(|i| Sample {
            x: random_tensor(&full, rng),
            z: (0..2).map(|_| rng.sample(StandardNormal)).collect(),
            y: (i % 2) as u8,
        })
        .collect();
    let data = Dataset::new(samples)?;
    let views = (0..2)
        .map(|_| {
            FactorSet::new(
                &cfg,
                vec![random_tensor(&cfg.grid_shape(), rng)],
                vec![random_tensor(&cfg.patch_shape(), rng)],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let model = SkpdModel::new(cfg, default_shift(&cfg), views, vec![0.3, -0.2], 0.1, PenaltyConfig::default())?;
    let ws = Workspace::new(&data, &cfg, true)?;
    Ok(vec![
        Check::from_error("B-block gradient vs central differences", gradient_gap(&ws.b_problem(&model, 1)?, rng, 10), 1e-6),
        Check::from_error("A-block gradient vs central differences", gradient_gap(&ws.a_problem(&model, 0)?, rng, 10), 1e-6),
        Check::from_error("γ-block gradient vs central differences", gradient_gap(&ws.gamma_problem(&model)?, rng, 10), 1e-6),
    ])
}

/// Runs every check. The returned bound rows are also folded into a check.
pub fn run_all(seed: u64) -> Result<(Vec<Check>, Vec<BoundRow>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = check_rearrangement(&mut rng, 200)?;
    checks.extend(check_shift_laws(&mut rng, 100));
    checks.extend(check_gradients(&mut rng)?);
    let rows = straddling_block_errors()?;
    let worst = rows.iter().map(|r| (r.measured - r.expected).abs()).fold(0.0, f64::max);
    checks.push(Check::from_error("best rank-R error of a straddling block = √((4−R)/4)", worst, 1e-9));
    Ok((checks, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        let (checks, rows) = run_all(7).unwrap();
        for c in &checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
        let expected = [3f64.sqrt() / 2.0, std::f64::consts::FRAC_1_SQRT_2, 0.5, 0.0];
        for (row, e) in rows.iter().zip(expected) {
            assert!((row.measured - e).abs() < 1e-9);
        }
    }

    #[test]
    fn block_covers_four_cells() {
        let c = straddling_block(4, 4).unwrap();
        assert_eq!(c.l1_norm(), 16.0);
        let cfg = ShapeConfig::new_2d([4, 4], [4, 4]).unwrap();
        let m = rearrange(&c, &cfg).unwrap();
        let touched = (0..16).filter(|&k| m.row(k).iter().any(|v| *v != 0.0)).count();
        assert_eq!(touched, 4);
    }
}
