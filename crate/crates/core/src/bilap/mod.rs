//! Edge-weighted embedding smoothing.
//!
//! Each channel `v` of an embedding map is replaced by
//!
//! ```text
//! u* = argmin_u ‖D_x u‖²_{w_x} + ‖D_y u‖²_{w_y} + ‖u − v‖²
//! ```
//!
//! i.e. the solution of `(I + D_xᵀ W_x D_x + D_yᵀ W_y D_y) u* = v`. `D_x` and
//! `D_y` are forward differences whose last column (row) is zero, so constant
//! maps lie in their null space. The system matrix depends only on the edge
//! weights and is factored once for all channels.

mod cholesky;
mod ordering;

use rayon::prelude::*;

pub use cholesky::{CscMatrix, SparseCholesky};
pub use ordering::GridOrdering;

use crate::dense_se3::EmbeddingField;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Non-negative weights on horizontal (`wx`, between `(r, c)` and
/// `(r, c + 1)`) and vertical (`wy`, between `(r, c)` and `(r + 1, c)`)
/// pixel differences. Entries on the last column of `wx` and the last row of
/// `wy` have no edge and are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWeights {
    pub wx: Grid<f64>,
    pub wy: Grid<f64>,
}

impl EdgeWeights {
    pub fn uniform(height: usize, width: usize, value: f64) -> Self {
        Self {
            wx: Grid::filled(height, width, value),
            wy: Grid::filled(height, width, value),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.wx.shape()
    }

    pub fn validate(&self) -> Result<()> {
        self.wx.check_shape(&self.wy, "vertical edge weights")?;
        for (index, &value) in self.wx.iter().chain(self.wy.iter()).enumerate() {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::NegativeWeight { index, value });
            }
        }
        Ok(())
    }
}

/// `(D_x u)_{r,c} = u_{r,c+1} − u_{r,c}`, zero on the last column.
pub fn diff_x(u: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; height * width];
    for r in 0..height {
        for c in 0..width.saturating_sub(1) {
            let p = r * width + c;
            out[p] = u[p + 1] - u[p];
        }
    }
    out
}

/// `(D_y u)_{r,c} = u_{r+1,c} − u_{r,c}`, zero on the last row.
pub fn diff_y(u: &[f64], height: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; height * width];
    for r in 0..height.saturating_sub(1) {
        for c in 0..width {
            let p = r * width + c;
            out[p] = u[p + width] - u[p];
        }
    }
    out
}

/// Assembled `A = I + D_xᵀ W_x D_x + D_yᵀ W_y D_y`.
#[derive(Clone, Debug)]
pub struct BilapSystem {
    height: usize,
    width: usize,
    matrix: CscMatrix,
}

impl BilapSystem {
    pub fn build(weights: &EdgeWeights) -> Result<Self> {
        weights.validate()?;
        let (h, w) = weights.shape();
        let mut triplets = Vec::with_capacity(5 * h * w);
        for r in 0..h {
            for c in 0..w {
                let p = r * w + c;
                triplets.push((p, p, 1.0));
                // each edge contributes w·[1 −1; −1 1] on its two endpoints
                if c + 1 < w {
                    let e = *weights.wx.get(r, c);
                    triplets.extend([(p, p, e), (p + 1, p + 1, e), (p, p + 1, -e), (p + 1, p, -e)]);
                }
                if r + 1 < h {
                    let e = *weights.wy.get(r, c);
                    triplets.extend([(p, p, e), (p + w, p + w, e), (p, p + w, -e), (p + w, p, -e)]);
                }
            }
        }
        Ok(Self {
            height: h,
            width: w,
            matrix: CscMatrix::from_triplets(h * w, &triplets),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn matrix(&self) -> &CscMatrix {
        &self.matrix
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.mul_vec(u)
    }

    pub fn factorize(&self) -> Result<BilapFactor> {
        self.factorize_with(GridOrdering::default())
    }

    pub fn factorize_with(&self, ordering: GridOrdering) -> Result<BilapFactor> {
        let perm = ordering.permutation(self.height, self.width);
        Ok(BilapFactor {
            height: self.height,
            width: self.width,
            chol: SparseCholesky::factor(&self.matrix, perm)?,
        })
    }
}

/// Immutable factorization, shareable across threads for per-channel solves.
#[derive(Clone, Debug)]
pub struct BilapFactor {
    height: usize,
    width: usize,
    chol: SparseCholesky,
}

impl BilapFactor {
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn factor_nnz(&self) -> usize {
        self.chol.nnz()
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.height * self.width {
            return Err(Error::ShapeMismatch(format!(
                "right-hand side of length {} for a {}x{} system",
                rhs.len(),
                self.height,
                self.width
            )));
        }
        Ok(self.chol.solve(rhs))
    }

    /// Solves every channel against the same factorization.
    pub fn solve_channels(&self, v: &EmbeddingField) -> Result<EmbeddingField> {
        if v.shape() != self.shape() {
            return Err(Error::ShapeMismatch(format!(
                "embedding {:?} vs system {:?}",
                v.shape(),
                self.shape()
            )));
        }
        let solved: Vec<Vec<f64>> = (0..v.channels())
            .into_par_iter()
            .map(|c| self.chol.solve(&v.channel(c)))
            .collect();
        let mut out = EmbeddingField::zeros(self.height, self.width, v.channels());
        for (c, u) in solved.iter().enumerate() {
            out.set_channel(c, u);
        }
        Ok(out)
    }
}

/// Smoothed embedding `u*` for every channel of `v`.
pub fn smooth(v: &EmbeddingField, weights: &EdgeWeights) -> Result<EmbeddingField> {
    if v.shape() != weights.shape() {
        return Err(Error::ShapeMismatch(format!(
            "embedding {:?} vs edge weights {:?}",
            v.shape(),
            weights.shape()
        )));
    }
    BilapSystem::build(weights)?.factorize()?.solve_channels(v)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BilapGradients {
    pub grad_v: EmbeddingField,
    pub grad_wx: Grid<f64>,
    pub grad_wy: Grid<f64>,
}

/// Backward pass of [`smooth`].
///
/// With `d_v = A⁻¹ ∂L/∂u*` (A is symmetric, so the forward factorization
/// serves), `∂L/∂v = d_v` and
/// `∂L/∂w_x = −(D_x u*) ⊙ (D_x d_v)`, summed over channels; likewise for
/// `w_y`. The negative sign follows from `∂L/∂A = −d_v u*ᵀ`.
pub fn smooth_backward(
    u_star: &EmbeddingField,
    weights: &EdgeWeights,
    grad_u: &EmbeddingField,
) -> Result<BilapGradients> {
    let factor = BilapSystem::build(weights)?.factorize()?;
    smooth_backward_with(&factor, u_star, grad_u)
}

/// [`smooth_backward`] reusing an existing factorization.
pub fn smooth_backward_with(
    factor: &BilapFactor,
    u_star: &EmbeddingField,
    grad_u: &EmbeddingField,
) -> Result<BilapGradients> {
    let (h, w) = factor.shape();
    if u_star.shape() != (h, w) || grad_u.shape() != (h, w) || u_star.channels() != grad_u.channels()
    {
        return Err(Error::ShapeMismatch(format!(
            "u* {:?}x{}, gradient {:?}x{}, system {:?}",
            u_star.shape(),
            u_star.channels(),
            grad_u.shape(),
            grad_u.channels(),
            (h, w)
        )));
    }
    let grad_v = factor.solve_channels(grad_u)?;
    let mut grad_wx = vec![0.0; h * w];
    let mut grad_wy = vec![0.0; h * w];
    for c in 0..u_star.channels() {
        let u = u_star.channel(c);
        let d = grad_v.channel(c);
        let (ux, dx) = (diff_x(&u, h, w), diff_x(&d, h, w));
        let (uy, dy) = (diff_y(&u, h, w), diff_y(&d, h, w));
        for p in 0..h * w {
            grad_wx[p] -= ux[p] * dx[p];
            grad_wy[p] -= uy[p] * dy[p];
        }
    }
    Ok(BilapGradients {
        grad_v,
        grad_wx: Grid::from_vec(h, w, grad_wx)?,
        grad_wy: Grid::from_vec(h, w, grad_wy)?,
    })
}
