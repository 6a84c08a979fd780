//! Lowest eigenpairs of real symmetric sparse operators.
//!
//! The iterative path runs Lanczos on `(H − σ)⁻¹` with σ below the Gershgorin
//! bound, so the shifted operator is positive definite and a banded Cholesky
//! factor serves every solve.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discretization::SparseOperator;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigenOptions {
    /// Residual target relative to the operator norm bound.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Smallest allowed spacing between tracked levels, GHz.
    pub degeneracy: f64,
    /// Operators at or below this dimension go straight to dense diagonalization.
    pub dense_below: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { tol: 1e-11, max_iter: 400, seed: 0x5eed, degeneracy: 1e-8, dense_below: 64 }
    }
}

impl EigenOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1e-3) {
            return Err(Error::validation("solver.eigen_tol", "must lie in (0, 1e-3)"));
        }
        if self.max_iter < 10 {
            return Err(Error::validation("solver.eigen_max_iter", "must be at least 10"));
        }
        if !(self.degeneracy >= 0.0) {
            return Err(Error::validation("solver.degeneracy", "must be non-negative"));
        }
        Ok(())
    }
}

/// Ascending eigenvalues with unit eigenvectors and their absolute residuals.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    /// Lanczos steps taken (0 for the dense path).
    pub iterations: usize,
}

impl EigenPairs {
    fn sort(&mut self) {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]));
        self.values = idx.iter().map(|&i| self.values[i]).collect();
        self.vectors = idx.iter().map(|&i| self.vectors[i].clone()).collect();
        self.residuals = idx.iter().map(|&i| self.residuals[i]).collect();
    }

    fn truncate(&mut self, k: usize) {
        self.values.truncate(k);
        self.vectors.truncate(k);
        self.residuals.truncate(k);
    }

    fn check_spacing(&self, threshold: f64) -> Result<()> {
        for a in 1..self.values.len() {
            let spacing = self.values[a] - self.values[a - 1];
            if spacing < threshold {
                return Err(Error::DegenerateSubspace { lower: a - 1, upper: a, spacing });
            }
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `‖H v − λ v‖` for each pair.
pub fn residual_norms(h: &SparseOperator, values: &[f64], vectors: &[Vec<f64>]) -> Vec<f64> {
    let mut hv = vec![0.0; h.dim()];
    values
        .iter()
        .zip(vectors)
        .map(|(&e, v)| {
            h.matvec(v, &mut hv);
            axpy(-e, v, &mut hv);
            norm(&hv)
        })
        .collect()
}

/// Cholesky factor of a symmetric positive-definite band matrix, stored row-wise.
pub struct BandCholesky {
    n: usize,
    b: usize,
    // l[i * (b + 1) + (j + b - i)] holds L[i][j] for i - b <= j <= i
    l: Vec<f64>,
}

impl BandCholesky {
    /// Factors `H − σ I`.
    pub fn factor(h: &SparseOperator, shift: f64) -> Result<Self> {
        let n = h.dim();
        let b = h.bandwidth();
        let w = b + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in h.row(i) {
                if j <= i {
                    l[i * w + j + b - i] = if i == j { v - shift } else { v };
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(b);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(b));
                let mut sum = l[i * w + j + b - i];
                let ri = i * w + b - i;
                let rj = j * w + b - j;
                for k in k0..j {
                    sum -= l[ri + k] * l[rj + k];
                }
                if i == j {
                    if !(sum > 0.0) {
                        return Err(Error::InvalidInput(format!(
                            "shifted operator is not positive definite (pivot {sum:e} at row {i})"
                        )));
                    }
                    l[ri + i] = sum.sqrt();
                } else {
                    l[ri + j] = sum / l[rj + j];
                }
            }
        }
        Ok(Self { n, b, l })
    }

    /// Solves `(H − σ) x = rhs` in place.
    pub fn solve(&self, x: &mut [f64]) {
        let (n, b, w) = (self.n, self.b, self.b + 1);
        for i in 0..n {
            let ri = i * w + b - i;
            let mut sum = x[i];
            for k in i.saturating_sub(b)..i {
                sum -= self.l[ri + k] * x[k];
            }
            x[i] = sum / self.l[ri + i];
        }
        for i in (0..n).rev() {
            let ri = i * w + b - i;
            x[i] /= self.l[ri + i];
            let xi = x[i];
            for k in i.saturating_sub(b)..i {
                x[k] -= self.l[ri + k] * xi;
            }
        }
    }
}

/// Dense full diagonalization; the reference oracle.
pub fn dense_lowest(h: &SparseOperator, k: usize) -> Result<EigenPairs> {
    let n = h.dim();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("cannot extract {k} eigenpairs from dimension {n}")));
    }
    let eig = SymmetricEigen::new(h.to_dense());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = idx[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors: Vec<Vec<f64>> = idx[..k].iter().map(|&i| eig.eigenvectors.column(i).iter().copied().collect()).collect();
    let residuals = residual_norms(h, &values, &vectors);
    Ok(EigenPairs { values, vectors, residuals, iterations: 0 })
}

/// All eigenvalues by dense diagonalization, ascending.
pub fn dense_spectrum(h: &SparseOperator) -> Vec<f64> {
    let mut e: Vec<f64> = h.to_dense().symmetric_eigenvalues().iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

/// Lowest `k` eigenpairs, iterative unless the operator is small.
pub fn lowest_eigenpairs(h: &SparseOperator, k: usize, opts: &EigenOptions) -> Result<EigenPairs> {
    let n = h.dim();
    if !h.is_symmetric() {
        return Err(Error::InvalidInput("eigensolver requires a symmetric operator".into()));
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidInput(format!("need 0 < k < dimension, got k = {k}, dimension {n}")));
    }
    let pairs = if n <= opts.dense_below { dense_lowest(h, k)? } else { shift_invert_lanczos(h, k, opts)? };
    pairs.check_spacing(opts.degeneracy)?;
    Ok(pairs)
}

fn shift_invert_lanczos(h: &SparseOperator, k: usize, opts: &EigenOptions) -> Result<EigenPairs> {
    let n = h.dim();
    let (lo, _) = h.gershgorin();
    let hnorm = h.norm_bound().max(f64::MIN_POSITIVE);
    let shift = lo - 1e-3 * hnorm.max(1.0);
    let chol = BandCholesky::factor(h, shift)?;
    let shifted_norm = hnorm + shift.abs();
    let target = opts.tol * hnorm;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut q: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    let qn = norm(&q);
    q.iter_mut().for_each(|x| *x /= qn);

    let max_steps = opts.max_iter.min(n);
    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut worst = f64::INFINITY;

    for j in 0..max_steps {
        let mut w = basis[j].clone();
        chol.solve(&mut w);
        let a = dot(&basis[j], &w);
        alpha.push(a);
        axpy(-a, &basis[j], &mut w);
        if j > 0 {
            axpy(-beta[j - 1], &basis[j - 1], &mut w);
        }
        for _ in 0..2 {
            for v in &basis {
                let c = dot(v, &w);
                axpy(-c, v, &mut w);
            }
        }
        let bnorm = norm(&w);
        let steps = j + 1;
        let exhausted = bnorm <= 1e-14 * a.abs().max(1e-300) || steps == n;
        if steps >= k && (steps % 4 == 0 || exhausted || steps == max_steps) {
            let t = tridiagonal(&alpha, &beta);
            let eig = SymmetricEigen::new(t);
            let mut order: Vec<usize> = (0..steps).collect();
            order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
            let top = &order[..k];
            let estimate = top
                .iter()
                .map(|&i| {
                    let mu = eig.eigenvalues[i];
                    shifted_norm * bnorm * eig.eigenvectors[(steps - 1, i)].abs() / mu.abs().max(f64::MIN_POSITIVE)
                })
                .fold(0.0, f64::max);
            if estimate <= 0.1 * target || exhausted || steps == max_steps {
                let mut vectors = Vec::with_capacity(k);
                for &i in top {
                    let mut y = vec![0.0; n];
                    for (m, v) in basis.iter().enumerate() {
                        axpy(eig.eigenvectors[(m, i)], v, &mut y);
                    }
                    let yn = norm(&y);
                    y.iter_mut().for_each(|x| *x /= yn);
                    vectors.push(y);
                }
                let mut hy = vec![0.0; n];
                let values: Vec<f64> = vectors
                    .iter()
                    .map(|y| {
                        h.matvec(y, &mut hy);
                        dot(y, &hy)
                    })
                    .collect();
                let residuals = residual_norms(h, &values, &vectors);
                worst = residuals.iter().copied().fold(0.0, f64::max);
                if worst <= target {
                    let mut pairs = EigenPairs { values, vectors, residuals, iterations: steps };
                    pairs.sort();
                    return Ok(pairs);
                }
            }
        }
        if exhausted {
            break;
        }
        w.iter_mut().for_each(|x| *x /= bnorm);
        beta.push(bnorm);
        basis.push(w);
    }
    Err(Error::NoConvergence { iterations: basis.len(), residual: worst / hnorm })
}

fn tridiagonal(alpha: &[f64], beta: &[f64]) -> DMatrix<f64> {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    t
}

/// Lowest `k` eigenpairs of an operator that commutes with the index reflection
/// `i ↦ n − 1 − i`, solved separately in the even and odd sectors.
///
/// Near-degenerate tunnelling doublets split by parity are resolved exactly this
/// way even when their spacing is far below the iterative tolerance.
pub fn lowest_eigenpairs_parity(h: &SparseOperator, k: usize, opts: &EigenOptions) -> Result<EigenPairs> {
    let n = h.dim();
    if k == 0 || k >= n {
        return Err(Error::InvalidInput(format!("need 0 < k < dimension, got k = {k}, dimension {n}")));
    }
    for (i, j, v) in h.entries() {
        if (h.get(n - 1 - i, n - 1 - j) - v).abs() > 1e-12 * v.abs().max(1.0) {
            return Err(Error::InvalidInput("operator does not commute with the mesh reflection".into()));
        }
    }
    let mut merged = EigenPairs { values: vec![], vectors: vec![], residuals: vec![], iterations: 0 };
    for sign in [1.0, -1.0] {
        let (sector, basis) = parity_sector(h, sign)?;
        let m = sector.dim();
        let want = k.min(m.saturating_sub(1));
        if want == 0 {
            continue;
        }
        let part = if m <= opts.dense_below { dense_lowest(&sector, want)? } else { shift_invert_lanczos(&sector, want, opts)? };
        merged.iterations = merged.iterations.max(part.iterations);
        for (e, v) in part.values.into_iter().zip(part.vectors) {
            let mut full = vec![0.0; n];
            for (a, entries) in basis.iter().enumerate() {
                for &(idx, c) in entries {
                    full[idx] += c * v[a];
                }
            }
            merged.values.push(e);
            merged.vectors.push(full);
        }
    }
    merged.residuals = residual_norms(h, &merged.values, &merged.vectors);
    merged.sort();
    merged.truncate(k);
    merged.check_spacing(opts.degeneracy)?;
    Ok(merged)
}

type SectorBasis = Vec<Vec<(usize, f64)>>;

fn parity_sector(h: &SparseOperator, sign: f64) -> Result<(SparseOperator, SectorBasis)> {
    let n = h.dim();
    let half = n / 2;
    let odd_len = n % 2 == 1;
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let mut basis: SectorBasis = (0..half).map(|i| vec![(i, r), (n - 1 - i, sign * r)]).collect();
    if odd_len && sign > 0.0 {
        basis.push(vec![(half, 1.0)]);
    }
    // sector coordinate and weight of a full-space index
    let coord = |idx: usize| -> Option<(usize, f64)> {
        if idx < half {
            Some((idx, r))
        } else if odd_len && idx == half {
            (sign > 0.0).then_some((half, 1.0))
        } else {
            Some((n - 1 - idx, sign * r))
        }
    };
    let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (b, vec_b) in basis.iter().enumerate() {
        // H is symmetric, so column j is row j
        for &(j, c) in vec_b {
            for (i, v) in h.row(j) {
                if let Some((a, w)) = coord(i) {
                    *entries.entry((a, b)).or_insert(0.0) += w * c * v;
                }
            }
        }
    }
    let mut trip = Vec::with_capacity(entries.len());
    for (&(a, b), &v) in &entries {
        // average with the transposed entry so the sector is exactly symmetric
        let t = entries.get(&(b, a)).copied().unwrap_or(0.0);
        let sym = 0.5 * (v + t);
        if sym != 0.0 || a == b {
            trip.push((a, b, sym));
        }
    }
    Ok((SparseOperator::from_triplets(basis.len(), trip, true)?, basis))
}
