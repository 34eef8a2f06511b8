//! Cyclic translation of tensors with wrap-around.
//!
//! `shift` moves every entry forward by the offsets: rows downward, columns
//! rightward and so on, so that `out[i,j,k] = x[(i−s₁) mod D₁, (j−s₂) mod D₂,
//! (k−s₃) mod D₃]`. For matrices this is `(Qᵀ)^{s₁} X Q^{s₂}` with `Q` the
//! cyclic-shift matrix (ones on the superdiagonal and in the bottom-left
//! corner); the matrix form is only materialized in tests.

use serde::{Deserialize, Serialize};

use crate::tensor::{DenseTensor, ShapeConfig};

/// Per-axis voxel offsets of the shifted view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub offsets: [usize; 3],
}

impl ShiftSpec {
    pub fn new(offsets: [usize; 3]) -> Self {
        Self { offsets }
    }

    /// Offsets reduced modulo the given dimensions.
    pub fn reduced(&self, dims: [usize; 3]) -> [usize; 3] {
        [
            self.offsets[0] % dims[0],
            self.offsets[1] % dims[1],
            self.offsets[2] % dims[2],
        ]
    }

    /// The shift that undoes this one on tensors of extent `dims`.
    pub fn inverse(&self, dims: [usize; 3]) -> Self {
        let s = self.reduced(dims);
        Self {
            offsets: [
                (dims[0] - s[0]) % dims[0],
                (dims[1] - s[1]) % dims[1],
                (dims[2] - s[2]) % dims[2],
            ],
        }
    }

    pub fn is_identity(&self, dims: [usize; 3]) -> bool {
        self.reduced(dims) == [0, 0, 0]
    }
}

/// Half a cell on every axis with patch extent above one; `floor(d/2)` for odd
/// extents.
pub fn default_shift(cfg: &ShapeConfig) -> ShiftSpec {
    ShiftSpec {
        offsets: cfg.patch.map(|d| d / 2),
    }
}

/// Cyclic translation by `s`.
pub fn shift(x: &DenseTensor, s: &ShiftSpec) -> DenseTensor {
    let mut out = x.clone();
    shift_into(x.data(), x.dims(), s, out.data_mut());
    out
}

/// Inverse of [`shift`].
pub fn unshift(x: &DenseTensor, s: &ShiftSpec) -> DenseTensor {
    shift(x, &s.inverse(x.dims()))
}

pub(crate) fn shift_into(src: &[f64], dims: [usize; 3], s: &ShiftSpec, dst: &mut [f64]) {
    let [d1, d2, d3] = dims;
    let [s1, s2, s3] = s.reduced(dims);
    for i in 0..d1 {
        let ti = (i + s1) % d1;
        for j in 0..d2 {
            let tj = (j + s2) % d2;
            let src_row = (i * d2 + j) * d3;
            let dst_row = (ti * d2 + tj) * d3;
            // Split the innermost axis into the two contiguous runs.
            let head = d3 - s3;
            dst[dst_row + s3..dst_row + d3].copy_from_slice(&src[src_row..src_row + head]);
            dst[dst_row..dst_row + s3].copy_from_slice(&src[src_row + head..src_row + d3]);
        }
    }
}
