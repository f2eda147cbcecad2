//! Symmetric eigenvalues by cyclic Jacobi rotations and the singular-value
//! spectrum of channel × spatial feature matrices.

use crate::error::{Error, Result};

/// Maximum number of full Jacobi sweeps.
pub const MAX_SWEEPS: usize = 100;
/// Off-diagonal Frobenius norm target, relative to ‖G‖_F.
pub const OFF_DIAG_TOL: f64 = 1e-12;
/// Eigenvalues below this fraction of λ_max are exact zeros.
pub const RANK_TOL: f64 = 1e-14;
/// Maximum |G_ij - G_ji| accepted as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Row-major `rows × cols` real matrix; rows are channels, columns are spatial positions.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Shape {
                op: "feature_matrix",
                detail: format!("{rows}x{cols} needs {} entries, got {}", rows * cols, data.len()),
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite entry at index {i}")));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape { op: "feature_matrix", detail: "ragged rows".into() });
        }
        Self::new(rows.len(), cols, rows.concat())
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> FeatureMatrix {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        FeatureMatrix { rows: self.cols, cols: self.rows, data }
    }

    /// Sub-matrix made of the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let data = idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        FeatureMatrix { rows: idx.len(), cols: self.cols, data }
    }

    pub fn scaled(&self, k: f64) -> FeatureMatrix {
        FeatureMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * k).collect() }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

/// Dense symmetric `n × n` matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Wraps a square matrix; symmetry is checked by [`sym_eig`], not here.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape { op: "sym_matrix", detail: format!("{n}x{n} needs {} entries", n * n) });
        }
        Ok(SymMatrix { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape { op: "sym_matrix", detail: "not square".into() });
        }
        Self::new(n, rows.concat())
    }

    pub fn diag(d: &[f64]) -> Self {
        let n = d.len();
        let mut data = vec![0.0; n * n];
        for (i, &x) in d.iter().enumerate() {
            data[i * n + i] = x;
        }
        SymMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// `X·Xᵀ`, symmetrized.
pub fn gram(x: &FeatureMatrix) -> SymMatrix {
    let n = x.rows;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let ri = x.row(i);
        for j in i..n {
            let s: f64 = ri.iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
            data[i * n + j] = s;
            data[j * n + i] = s;
        }
    }
    SymMatrix { n, data }
}

/// `Xᵀ·X`, symmetrized.
pub fn gram_transposed(x: &FeatureMatrix) -> SymMatrix {
    gram(&x.transpose())
}

/// Eigenvalues of a symmetric matrix in ascending order.
///
/// Cyclic Jacobi: sweeps over all (p, q) pairs, annihilating each
/// off-diagonal entry with a plane rotation, until the off-diagonal
/// Frobenius norm falls below `OFF_DIAG_TOL · ‖G‖_F`. Eigenvalues whose
/// magnitude is below `RANK_TOL · max|λ|` (including negative round-off on
/// PSD input) are set to exactly zero.
pub fn sym_eig(g: &SymMatrix) -> Result<Vec<f64>> {
    let n = g.n;
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (g.get(i, j) - g.get(j, i)).abs();
            if gap.is_nan() || gap > SYMMETRY_TOL {
                return Err(Error::NotSymmetric { row: i, col: j, gap });
            }
        }
    }
    // upper triangle holds the (symmetrized) off-diagonal; the diagonal lives in `d`
    let mut a = g.data.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            a[i * n + j] = 0.5 * (a[i * n + j] + a[j * n + i]);
        }
    }
    let norm: f64 = g.data.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = OFF_DIAG_TOL * norm;
    let mut d: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    let mut b = d.clone();
    let mut z = vec![0.0; n];

    let mut sweeps = 0;
    loop {
        let mut off_sq = 0.0;
        let mut off_abs = 0.0;
        for p in 0..n {
            for &x in &a[p * n + p + 1..(p + 1) * n] {
                off_sq += 2.0 * x * x;
                off_abs += x.abs();
            }
        }
        if off_sq.sqrt() <= target {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps });
        }
        // early sweeps only rotate the larger entries
        let tresh = if sweeps < 3 { 0.2 * off_abs / (n * n) as f64 } else { 0.0 };
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                let g100 = 100.0 * apq.abs();
                if sweeps > 3 && d[p].abs() + g100 == d[p].abs() && d[q].abs() + g100 == d[q].abs() {
                    a[p * n + q] = 0.0;
                    continue;
                }
                if apq.abs() <= tresh || apq == 0.0 {
                    continue;
                }
                let h = d[q] - d[p];
                let t = if h.abs() + g100 == h.abs() {
                    apq / h
                } else {
                    let theta = 0.5 * h / apq;
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                let h = t * apq;
                z[p] -= h;
                z[q] += h;
                d[p] -= h;
                d[q] += h;
                a[p * n + q] = 0.0;
                let mut rot = |i: usize, j: usize| {
                    let (x, y) = (a[i], a[j]);
                    a[i] = x - s * (y + x * tau);
                    a[j] = y + s * (x - y * tau);
                };
                for k in 0..p {
                    rot(k * n + p, k * n + q);
                }
                for k in (p + 1)..q {
                    rot(p * n + k, k * n + q);
                }
                for k in (q + 1)..n {
                    rot(p * n + k, q * n + k);
                }
            }
        }
        for i in 0..n {
            b[i] += z[i];
            d[i] = b[i];
            z[i] = 0.0;
        }
        sweeps += 1;
    }

    let mut eig = d;
    let scale = eig.iter().fold(0.0, |m: f64, e| m.max(e.abs()));
    for e in &mut eig {
        if e.abs() < RANK_TOL * scale {
            *e = 0.0;
        }
    }
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumResult {
    /// Descending, length `min(rows, cols)`.
    pub singular_values: Vec<f64>,
    pub sigma_max: f64,
    pub sigma_min: f64,
    /// σ_min / σ_max, or 0 when σ_max is 0.
    pub inv_cond: f64,
}

impl SpectrumResult {
    fn from_eigenvalues(eig: &[f64]) -> Self {
        let singular_values: Vec<f64> = eig.iter().rev().map(|&l| l.max(0.0).sqrt()).collect();
        let sigma_max = singular_values.first().copied().unwrap_or(0.0);
        let sigma_min = singular_values.last().copied().unwrap_or(0.0);
        let inv_cond = if sigma_max > 0.0 { (sigma_min / sigma_max).clamp(0.0, 1.0) } else { 0.0 };
        SpectrumResult { singular_values, sigma_max, sigma_min, inv_cond }
    }
}

/// Singular values of `x` via the eigenvalues of the smaller gram matrix.
pub fn spectrum(x: &FeatureMatrix) -> Result<SpectrumResult> {
    let g = if x.rows <= x.cols { gram(x) } else { gram_transposed(x) };
    Ok(SpectrumResult::from_eigenvalues(&sym_eig(&g)?))
}
