//! Dense tensors of order 1 to 3, Kronecker products and the block
//! rearrangement that turns a Kronecker sum into a low-rank matrix.
//!
//! All tensors are stored row-major (last index fastest). A matrix is a
//! tensor with `D₃ = 1` and a vector has `D₂ = D₃ = 1`. The same ordering is
//! used for `vec(·)` everywhere, which is what makes
//! `rearrange(A ⊗ B) = vec(A) vec(B)ᵀ` hold exactly.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense tensor with up to three axes.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: [usize; 3],
    order: u8,
    data: Vec<f64>,
}

fn padded_dims(shape: &[usize]) -> Result<[usize; 3]> {
    if shape.is_empty() || shape.len() > 3 {
        return Err(Error::ShapeMismatch(format!(
            "tensor order must be 1, 2 or 3, got {}",
            shape.len()
        )));
    }
    let mut dims = [1usize; 3];
    dims[..shape.len()].copy_from_slice(shape);
    if dims.contains(&0) {
        return Err(Error::ShapeMismatch(format!("zero-sized axis in {shape:?}")));
    }
    Ok(dims)
}

fn checked_volume(dims: &[usize; 3]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::DimensionOverflow(format!("{dims:?}")))
}

impl DenseTensor {
    /// Builds a tensor from a shape of length 1–3 and row-major data.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let dims = padded_dims(shape)?;
        let volume = checked_volume(&dims)?;
        if data.len() != volume {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match shape {shape:?}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor entry {pos}")));
        }
        Ok(Self {
            dims,
            order: shape.len() as u8,
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let dims = padded_dims(shape)?;
        let volume = checked_volume(&dims)?;
        Ok(Self {
            dims,
            order: shape.len() as u8,
            data: vec![0.0; volume],
        })
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        if !value.is_finite() {
            return Err(Error::NonFinite("fill value".into()));
        }
        t.data.iter_mut().for_each(|v| *v = value);
        Ok(t)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let dims = padded_dims(shape)?;
        let volume = checked_volume(&dims)?;
        let mut data = Vec::with_capacity(volume);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::from_vec(shape, data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(&[rows, cols], data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// The shape without padding, e.g. `[4, 4]` for a matrix.
    pub fn shape(&self) -> &[usize] {
        &self.dims[..self.order as usize]
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row-major entries, i.e. `vec(self)`.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = value;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims,
            order: self.order,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &DenseTensor) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!(
                "axpy on {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        Ok(Self {
            dims: self.dims,
            order: self.order.max(other.order),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        })
    }
}

/// Grid (`p₁,p₂,p₃`) and patch (`d₁,d₂,d₃`) extents of a Kronecker factorization.
/// The full tensor has extents `D_k = p_k · d_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShapeConfig {
    pub grid: [usize; 3],
    pub patch: [usize; 3],
}

impl ShapeConfig {
    pub fn new(grid: [usize; 3], patch: [usize; 3]) -> Result<Self> {
        if grid.iter().chain(patch.iter()).any(|&v| v == 0) {
            return Err(Error::InvalidConfig(format!(
                "grid {grid:?} and patch {patch:?} must be positive"
            )));
        }
        let cfg = Self { grid, patch };
        for k in 0..3 {
            grid[k]
                .checked_mul(patch[k])
                .ok_or_else(|| Error::DimensionOverflow(format!("{cfg:?}")))?;
        }
        checked_volume(&cfg.full_dims())?;
        Ok(cfg)
    }

    /// 2D configuration: `p₃ = d₃ = 1`.
    pub fn new_2d(grid: [usize; 2], patch: [usize; 2]) -> Result<Self> {
        Self::new([grid[0], grid[1], 1], [patch[0], patch[1], 1])
    }

    /// Derives the patch from full dimensions and a grid; each grid extent must
    /// divide the matching full extent.
    pub fn from_full_dims(full: [usize; 3], grid: [usize; 3]) -> Result<Self> {
        let mut patch = [0usize; 3];
        for k in 0..3 {
            if grid[k] == 0 || !full[k].is_multiple_of(grid[k]) {
                return Err(Error::InvalidConfig(format!(
                    "grid extent {} does not divide dimension {} on axis {k}",
                    grid[k], full[k]
                )));
            }
            patch[k] = full[k] / grid[k];
        }
        Self::new(grid, patch)
    }

    pub fn full_dims(&self) -> [usize; 3] {
        [
            self.grid[0] * self.patch[0],
            self.grid[1] * self.patch[1],
            self.grid[2] * self.patch[2],
        ]
    }

    /// Number of blocks, `p = p₁p₂p₃`.
    pub fn p(&self) -> usize {
        self.grid.iter().product()
    }

    /// Block volume, `d = d₁d₂d₃`.
    pub fn d(&self) -> usize {
        self.patch.iter().product()
    }

    pub fn is_2d(&self) -> bool {
        self.grid[2] == 1 && self.patch[2] == 1
    }

    /// Tensor shape of the location factor `A`.
    pub fn grid_shape(&self) -> Vec<usize> {
        if self.is_2d() {
            self.grid[..2].to_vec()
        } else {
            self.grid.to_vec()
        }
    }

    /// Tensor shape of the dictionary factor `B`.
    pub fn patch_shape(&self) -> Vec<usize> {
        if self.is_2d() {
            self.patch[..2].to_vec()
        } else {
            self.patch.to_vec()
        }
    }

    pub fn full_shape(&self) -> Vec<usize> {
        let full = self.full_dims();
        if self.is_2d() {
            full[..2].to_vec()
        } else {
            full.to_vec()
        }
    }

    /// Fails unless `t` has exactly the full dimensions of this configuration.
    pub fn check_tensor(&self, t: &DenseTensor) -> Result<()> {
        if t.dims() != self.full_dims() {
            return Err(Error::ShapeMismatch(format!(
                "tensor dims {:?} do not match configuration dims {:?}",
                t.dims(),
                self.full_dims()
            )));
        }
        Ok(())
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let mut data = Vec::with_capacity(u.len() * v.len());
        for &a in u {
            data.extend(v.iter().map(|&b| a * b));
        }
        Self {
            rows: u.len(),
            cols: v.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `M v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `Mᵀ u`.
    pub fn matvec_t(&self, u: &[f64]) -> Vec<f64> {
        debug_assert_eq!(u.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &ui) in u.iter().enumerate() {
            if ui != 0.0 {
                axpy_slice(&mut out, ui, self.row(i));
            }
        }
        out
    }

    /// `uᵀ M v`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter()
            .enumerate()
            .filter(|(_, &ui)| ui != 0.0)
            .map(|(i, &ui)| ui * dot(self.row(i), v))
            .sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Adds `alpha * other` in place.
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        axpy_slice(&mut self.data, alpha, &other.data);
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy_slice(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
pub(crate) fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Kronecker product. The output extent on each axis is the product of the
/// input extents; the entry at block `(k,l,m)`, offset `(u,v,w)` is
/// `a[k,l,m] · b[u,v,w]`.
pub fn kron(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    let (ad, bd) = (a.dims(), b.dims());
    let mut dims = [0usize; 3];
    for k in 0..3 {
        dims[k] = ad[k]
            .checked_mul(bd[k])
            .ok_or_else(|| Error::DimensionOverflow(format!("kron of {ad:?} and {bd:?}")))?;
    }
    let volume = checked_volume(&dims)?;
    let order = a.order().max(b.order()) as usize;
    let mut out = DenseTensor {
        dims,
        order: order as u8,
        data: vec![0.0; volume],
    };
    for k in 0..ad[0] {
        for l in 0..ad[1] {
            for m in 0..ad[2] {
                let av = a.get(k, l, m);
                if av == 0.0 {
                    continue;
                }
                for u in 0..bd[0] {
                    for v in 0..bd[1] {
                        let row = out.offset(k * bd[0] + u, l * bd[1] + v, m * bd[2]);
                        let src = b.offset(u, v, 0);
                        for w in 0..bd[2] {
                            out.data[row + w] = av * b.data[src + w];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Rearranges `c` into the `p × d` matrix whose row `(k,l,m)` (lexicographic)
/// holds the row-major vectorization of the `(k,l,m)`-th `d₁×d₂×d₃` block.
pub fn rearrange(c: &DenseTensor, cfg: &ShapeConfig) -> Result<Matrix> {
    cfg.check_tensor(c)?;
    let mut out = Matrix::zeros(cfg.p(), cfg.d());
    rearrange_into(c.data(), cfg, &mut out.data);
    Ok(out)
}

/// Unchecked rearrangement of row-major `src` (full dims of `cfg`) into `dst`.
pub(crate) fn rearrange_into(src: &[f64], cfg: &ShapeConfig, dst: &mut [f64]) {
    let [p1, p2, p3] = cfg.grid;
    let [d1, d2, d3] = cfg.patch;
    let [_, full2, full3] = cfg.full_dims();
    let d = cfg.d();
    for k in 0..p1 {
        for l in 0..p2 {
            for m in 0..p3 {
                let row = ((k * p2 + l) * p3 + m) * d;
                for u in 0..d1 {
                    for v in 0..d2 {
                        let s = ((k * d1 + u) * full2 + l * d2 + v) * full3 + m * d3;
                        let t = row + (u * d2 + v) * d3;
                        dst[t..t + d3].copy_from_slice(&src[s..s + d3]);
                    }
                }
            }
        }
    }
}

/// Inverse of [`rearrange`].
pub fn rearrange_inverse(m: &Matrix, cfg: &ShapeConfig) -> Result<DenseTensor> {
    if m.rows() != cfg.p() || m.cols() != cfg.d() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} matrix for a configuration with p={} d={}",
            m.rows(),
            m.cols(),
            cfg.p(),
            cfg.d()
        )));
    }
    let [p1, p2, p3] = cfg.grid;
    let [d1, d2, d3] = cfg.patch;
    let mut out = DenseTensor::zeros(&cfg.full_shape())?;
    let [_, full2, full3] = cfg.full_dims();
    let d = cfg.d();
    for k in 0..p1 {
        for l in 0..p2 {
            for mm in 0..p3 {
                let row = ((k * p2 + l) * p3 + mm) * d;
                for u in 0..d1 {
                    for v in 0..d2 {
                        let s = ((k * d1 + u) * full2 + l * d2 + v) * full3 + mm * d3;
                        let t = row + (u * d2 + v) * d3;
                        out.data[s..s + d3].copy_from_slice(&m.data[t..t + d3]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Frobenius inner product.
pub fn inner(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "inner product of {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(dot(a.data(), b.data()))
}

/// Top left singular vectors and the matching singular values.
#[derive(Debug, Clone, PartialEq)]
pub struct LeftSingular {
    pub vectors: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

/// Block power (subspace) iteration on `M Mᵀ` with a Rayleigh-Ritz step.
#[derive(Debug, Clone, Copy)]
pub struct PowerIteration {
    pub max_iter: usize,
    /// Accept a pair once `‖M v − σ u‖ ≤ tol · ‖M‖_F`.
    pub tol: f64,
    pub seed: u64,
}

impl Default for PowerIteration {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            tol: 1e-9,
            seed: 0x5eed,
        }
    }
}

impl PowerIteration {
    pub fn left_singular(&self, m: &Matrix, r: usize) -> Result<LeftSingular> {
        let rows = m.rows();
        if r > rows.min(m.cols()) {
            return Err(Error::InvalidConfig(format!(
                "rank {r} exceeds min dimension of a {}x{} matrix",
                rows,
                m.cols()
            )));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidConfig(format!("tolerance {} must be positive", self.tol)));
        }
        if r == 0 {
            return Ok(LeftSingular { vectors: vec![], values: vec![] });
        }
        let m_norm = m.frobenius_norm();
        let null = f64::EPSILON * m_norm;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let start = DMatrix::from_fn(rows, r, |_, _| rng.random::<f64>() - 0.5);
        let mut u = start.qr().q();

        let mut accepted = Vec::new();
        for _ in 0..self.max_iter {
            // W = M Mᵀ U, then Rayleigh-Ritz on span(U).
            let mut w = DMatrix::zeros(rows, r);
            for k in 0..r {
                let col: Vec<f64> = u.column(k).iter().copied().collect();
                let mw = m.matvec(&m.matvec_t(&col));
                w.set_column(k, &nalgebra::DVector::from_vec(mw));
            }
            let h = u.transpose() * &w;
            let h = (&h + h.transpose()) * 0.5;
            let eig = h.symmetric_eigen();
            let mut order: Vec<usize> = (0..r).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let rot = DMatrix::from_fn(r, r, |i, j| eig.eigenvectors[(i, order[j])]);
            let u_rot = &u * &rot;
            let w_rot = &w * &rot;

            accepted.clear();
            for (k, &idx) in order.iter().enumerate() {
                let sigma = eig.eigenvalues[idx].max(0.0).sqrt();
                let converged = if sigma <= null {
                    true
                } else {
                    let res = (w_rot.column(k) - u_rot.column(k) * (sigma * sigma)).norm() / sigma;
                    res <= self.tol * m_norm
                };
                if !converged {
                    break;
                }
                accepted.push((u_rot.column(k).iter().copied().collect::<Vec<f64>>(), if sigma <= null { 0.0 } else { sigma }));
            }
            if accepted.len() == r {
                let (mut vectors, values): (Vec<_>, Vec<_>) = accepted.drain(..).unzip();
                vectors.iter_mut().for_each(|v| fix_sign(v));
                return Ok(LeftSingular { vectors, values });
            }
            u = w_rot.qr().q();
            // Columns of W may vanish when rank(M) < r; the Householder Q
            // still spans an orthonormal completion.
            if u.ncols() < r {
                break;
            }
        }
        let mut partial: Vec<Vec<f64>> = accepted.into_iter().map(|(v, _)| v).collect();
        partial.iter_mut().for_each(|v| fix_sign(v));
        Err(Error::SvdNotConverged {
            iterations: self.max_iter,
            requested: r,
            partial,
        })
    }
}

/// Top-`r` left singular vectors of `m` with the default iteration budget and
/// a fixed start-vector seed.
pub fn top_r_left_singular(m: &Matrix, r: usize, tol: f64) -> Result<Vec<Vec<f64>>> {
    PowerIteration {
        tol,
        ..Default::default()
    }
    .left_singular(m, r)
    .map(|s| s.vectors)
}

/// Makes the first non-negligible component (above `1e-6` of the largest)
/// positive.
pub(crate) fn fix_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-6 * max) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Singular values of `m` in non-increasing order (full SVD).
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    let svd = m
        .to_nalgebra()
        .try_svd(false, false, f64::EPSILON, 10_000)
        .ok_or(Error::SvdFailed)?;
    let mut values: Vec<f64> = svd.singular_values.iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// Smallest achievable `‖Σ_r A_r ⊗ B_r − c_star‖_F` over rank-`r` Kronecker
/// sums with the geometry of `cfg`: the norm of the singular values of
/// `rearrange(c_star)` beyond the first `r`.
pub fn kron_best_rank_r_error(c_star: &DenseTensor, cfg: &ShapeConfig, r: usize) -> Result<f64> {
    if r == 0 {
        return Err(Error::InvalidConfig("rank must be at least 1".into()));
    }
    let values = singular_values(&rearrange(c_star, cfg)?)?;
    Ok(values.iter().skip(r).map(|s| s * s).sum::<f64>().sqrt())
}
