//! Compressed sparse column storage and an up-looking sparse Cholesky
//! factorization `P A Pᵀ = L Lᵀ`.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Square sparse matrix in compressed sparse column layout. Symmetric
/// matrices store both triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix {
    n: usize,
    colptr: Vec<usize>,
    rowidx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(_, c, _) in triplets {
            counts[c + 1] += 1;
        }
        for c in 0..n {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let p = next[c];
            rows[p] = r;
            vals[p] = v;
            next[c] += 1;
        }

        // sort each column by row and merge duplicates
        let mut colptr = vec![0usize; n + 1];
        let mut rowidx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for c in 0..n {
            scratch.clear();
            scratch.extend((counts[c]..counts[c + 1]).map(|p| (rows[p], vals[p])));
            scratch.sort_by_key(|e| e.0);
            for &(r, v) in &scratch {
                if rowidx.len() > colptr[c] && *rowidx.last().unwrap() == r {
                    *values.last_mut().unwrap() += v;
                } else {
                    rowidx.push(r);
                    values.push(v);
                }
            }
            colptr[c + 1] = rowidx.len();
        }
        Self {
            n,
            colptr,
            rowidx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.rowidx.len()
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.colptr[c]..self.colptr[c + 1]).map(move |p| (self.rowidx[p], self.values[p]))
    }

    pub fn column_nnz(&self, c: usize) -> usize {
        self.colptr[c + 1] - self.colptr[c]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let rows = &self.rowidx[self.colptr[col]..self.colptr[col + 1]];
        match rows.binary_search(&row) {
            Ok(p) => self.values[self.colptr[col] + p],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for c in 0..self.n {
            let xc = x[c];
            for (r, v) in self.column(c) {
                y[r] += v * xc;
            }
        }
        y
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|c| self.column(c).all(|(r, v)| (self.get(c, r) - v).abs() <= tol))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for c in 0..self.n {
            for (r, v) in self.column(c) {
                d[r][c] = v;
            }
        }
        d
    }
}

/// Lower-triangular factor of a symmetrically permuted SPD matrix.
#[derive(Clone, Debug)]
pub struct SparseCholesky {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    colptr: Vec<usize>,
    rowidx: Vec<usize>,
    values: Vec<f64>,
}

/// Upper triangle of `P A Pᵀ`, column by column.
fn permuted_upper(a: &CscMatrix, perm: &[usize], iperm: &[usize]) -> CscMatrix {
    let n = a.dim();
    let mut colptr = vec![0usize; n + 1];
    let mut rowidx = Vec::with_capacity(a.nnz() / 2 + n);
    let mut values = Vec::with_capacity(a.nnz() / 2 + n);
    for (new_col, &old_col) in perm.iter().enumerate() {
        for (old_row, v) in a.column(old_col) {
            let new_row = iperm[old_row];
            if new_row <= new_col {
                rowidx.push(new_row);
                values.push(v);
            }
        }
        colptr[new_col + 1] = rowidx.len();
    }
    CscMatrix {
        n,
        colptr,
        rowidx,
        values,
    }
}

fn elimination_tree(upper: &CscMatrix) -> Vec<usize> {
    let n = upper.dim();
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for k in 0..n {
        for (mut i, _) in upper.column(k) {
            while i != NONE && i < k {
                let next = ancestor[i];
                ancestor[i] = k;
                if next == NONE {
                    parent[i] = k;
                }
                i = next;
            }
        }
    }
    parent
}

/// Nonzero pattern of row `k` of `L` (excluding the diagonal), written to
/// `stack[top..]` in topological order. Returns `top`.
fn row_pattern(
    upper: &CscMatrix,
    k: usize,
    parent: &[usize],
    stack: &mut [usize],
    mark: &mut [usize],
) -> usize {
    let n = upper.dim();
    let mut top = n;
    mark[k] = k;
    for (mut i, _) in upper.column(k) {
        if i > k {
            continue;
        }
        let mut len = 0;
        while mark[i] != k {
            stack[len] = i;
            len += 1;
            mark[i] = k;
            i = parent[i];
        }
        while len > 0 {
            len -= 1;
            top -= 1;
            stack[top] = stack[len];
        }
    }
    top
}

impl SparseCholesky {
    /// Factors `A` under the ordering `perm` (`perm[new] = old`).
    pub fn factor(a: &CscMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.dim();
        if perm.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "ordering of length {} for a {n}x{n} matrix",
                perm.len()
            )));
        }
        let mut iperm = vec![NONE; n];
        for (new, &old) in perm.iter().enumerate() {
            if old >= n || iperm[old] != NONE {
                return Err(Error::InvalidParameter("ordering is not a permutation".into()));
            }
            iperm[old] = new;
        }

        let upper = permuted_upper(a, &perm, &iperm);
        let parent = elimination_tree(&upper);

        // symbolic pass: column counts of L
        let mut stack = vec![0usize; n];
        let mut mark = vec![NONE; n];
        let mut counts = vec![1usize; n];
        for k in 0..n {
            let top = row_pattern(&upper, k, &parent, &mut stack, &mut mark);
            for &j in &stack[top..] {
                counts[j] += 1;
            }
        }
        let mut colptr = vec![0usize; n + 1];
        for j in 0..n {
            colptr[j + 1] = colptr[j] + counts[j];
        }
        let nnz = colptr[n];
        let mut rowidx = vec![0usize; nnz];
        let mut values = vec![0.0; nnz];

        // numeric pass, one row of L at a time
        let mut next: Vec<usize> = colptr[..n].to_vec();
        let mut x = vec![0.0; n];
        mark.fill(NONE);
        for k in 0..n {
            let top = row_pattern(&upper, k, &parent, &mut stack, &mut mark);
            x[k] = 0.0;
            for (i, v) in upper.column(k) {
                if i <= k {
                    x[i] += v;
                }
            }
            let mut diag = x[k];
            x[k] = 0.0;
            for &i in &stack[top..] {
                let lki = x[i] / values[colptr[i]];
                x[i] = 0.0;
                for p in colptr[i] + 1..next[i] {
                    x[rowidx[p]] -= values[p] * lki;
                }
                diag -= lki * lki;
                let p = next[i];
                next[i] += 1;
                rowidx[p] = k;
                values[p] = lki;
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    column: perm[k],
                    pivot: diag,
                });
            }
            let p = next[k];
            next[k] += 1;
            rowidx[p] = k;
            values[p] = diag.sqrt();
        }

        Ok(Self {
            n,
            perm,
            colptr,
            rowidx,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries of `L`, diagonal included.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for j in 0..self.n {
            let start = self.colptr[j];
            y[j] /= self.values[start];
            let yj = y[j];
            for p in start + 1..self.colptr[j + 1] {
                y[self.rowidx[p]] -= self.values[p] * yj;
            }
        }
        for j in (0..self.n).rev() {
            let start = self.colptr[j];
            let mut acc = y[j];
            for p in start + 1..self.colptr[j + 1] {
                acc -= self.values[p] * y[self.rowidx[p]];
            }
            y[j] = acc / self.values[start];
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = y[new];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
