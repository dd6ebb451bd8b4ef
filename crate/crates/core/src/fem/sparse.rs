//! Compressed-row sparse matrices and a Jacobi-preconditioned CG solver.

use super::FemError;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_offsets: Vec<usize>,
    /// Column indices, sorted within each row.
    pub col_indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Symmetric pattern with the diagonal plus both directions of every pair.
    pub fn from_pattern(n: usize, pairs: &[(usize, usize)]) -> Self {
        let mut degree = vec![1usize; n];
        for &(a, b) in pairs {
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut row_offsets = Vec::with_capacity(n + 1);
        row_offsets.push(0);
        for d in &degree {
            row_offsets.push(row_offsets.last().unwrap() + d);
        }
        let mut fill: Vec<usize> = row_offsets[..n].to_vec();
        let mut col_indices = vec![0; row_offsets[n]];
        for (i, f) in fill.iter_mut().enumerate() {
            col_indices[*f] = i;
            *f += 1;
        }
        for &(a, b) in pairs {
            col_indices[fill[a]] = b;
            fill[a] += 1;
            col_indices[fill[b]] = a;
            fill[b] += 1;
        }
        for i in 0..n {
            col_indices[row_offsets[i]..row_offsets[i + 1]].sort_unstable();
        }
        let nnz = col_indices.len();
        Self { n, row_offsets, col_indices, values: vec![0.0; nnz] }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        (&self.col_indices[r.clone()], &self.values[r])
    }

    /// Storage slot of entry `(i, j)`, if it is in the pattern.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let start = self.row_offsets[i];
        self.col_indices[start..self.row_offsets[i + 1]].binary_search(&j).ok().map(|k| start + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            y[i] = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// Largest `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves `A x = b` for symmetric positive-definite `A` to relative residual
/// `tol`. Restarts from the current iterate when the recursively updated
/// residual drifts away from the true one.
pub fn conjugate_gradient(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>, FemError> {
    conjugate_gradient_polished(a, b, tol, tol, max_iter)
}

/// Like [`conjugate_gradient`], but keeps iterating towards `target` and
/// only fails when the true residual stays above `tol`.
pub fn conjugate_gradient_polished(
    a: &CsrMatrix,
    b: &[f64],
    target: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, FemError> {
    let n = a.n;
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut r = b.to_vec();
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    let mut restarts = 0;
    loop {
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while norm(&r) > target * bnorm && iterations < max_iter {
            a.mul_vec_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(FemError::NotConverged { iterations, residual: norm(&r) / bnorm });
            }
            let step = rz / pap;
            for i in 0..n {
                x[i] += step * p[i];
                r[i] -= step * ap[i];
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
            iterations += 1;
        }
        a.mul_vec_into(&x, &mut ap);
        for i in 0..n {
            r[i] = b[i] - ap[i];
        }
        let residual = norm(&r) / bnorm;
        if residual <= target {
            return Ok(x);
        }
        if iterations >= max_iter || restarts >= 3 {
            return if residual <= tol { Ok(x) } else { Err(FemError::NotConverged { iterations, residual }) };
        }
        restarts += 1;
    }
}
