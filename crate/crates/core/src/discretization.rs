//! Real-space meshes and sparse finite-difference Hamiltonians.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Uniform mesh `lower + i·spacing`, `i = 0..points`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mesh {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl Mesh {
    pub fn new(lower: f64, upper: f64, points: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::validation("mesh.bounds", format!("need lower < upper, got [{lower}, {upper}]")));
        }
        if points < 3 {
            return Err(Error::validation("mesh.points", "need at least 3 points"));
        }
        Ok(Self { lower, upper, points })
    }

    pub fn symmetric(half_width: f64, points: usize) -> Result<Self> {
        Self::new(-half_width, half_width, points)
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.points - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lower + i as f64 * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.node(i)).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        (self.lower + self.upper).abs() <= 1e-14 * self.upper.abs().max(1.0)
    }
}

/// Compressed-row symmetric or general sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    symmetric: bool,
}

impl SparseOperator {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, f64)>, symmetric: bool) -> Result<Self> {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if r >= dim || c >= dim {
                return Err(Error::InvalidInput(format!("entry ({r}, {c}) outside dimension {dim}")));
            }
            if !v.is_finite() {
                return Err(Error::NonFiniteValue { index: r, value: v });
            }
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        let op = Self { dim, row_ptr, cols, vals, symmetric };
        if symmetric && !op.is_exactly_symmetric() {
            return Err(Error::InvalidInput("entries are not closed under transposition".into()));
        }
        Ok(op)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.cols[a..b].binary_search(&j) {
            Ok(k) => self.vals[a + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// Bitwise check that `A[i][j] == A[j][i]` for every stored entry.
    pub fn is_exactly_symmetric(&self) -> bool {
        self.entries().all(|(i, j, v)| self.get(j, i).to_bits() == v.to_bits())
    }

    pub fn max_row_nnz(&self) -> usize {
        (0..self.dim).map(|i| self.row_ptr[i + 1] - self.row_ptr[i]).max().unwrap_or(0)
    }

    /// Half-bandwidth `max |i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        self.entries().map(|(i, j, _)| i.abs_diff(j)).max().unwrap_or(0)
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut acc = 0.0;
            for k in a..b {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yi = acc;
        }
    }

    /// Expectation `⟨u|A|v⟩`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        (0..self.dim)
            .map(|i| u[i] * self.row(i).map(|(j, a)| a * v[j]).sum::<f64>())
            .sum()
    }

    /// Gershgorin interval `[lo, hi]` containing the spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.dim {
            let mut d = 0.0;
            let mut r = 0.0;
            for (j, v) in self.row(i) {
                if j == i {
                    d = v;
                } else {
                    r += v.abs();
                }
            }
            lo = lo.min(d - r);
            hi = hi.max(d + r);
        }
        (lo, hi)
    }

    /// Upper bound on the spectral norm.
    pub fn norm_bound(&self) -> f64 {
        let (lo, hi) = self.gershgorin();
        lo.abs().max(hi.abs())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (i, j, v) in self.entries() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn diagonal_operator(diag: &[f64]) -> Result<Self> {
        let trip = diag.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(diag.len(), trip, true)
    }

    /// Writes `row col value` lines.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# dim {} nnz {}", self.dim, self.nnz())?;
        for (i, j, v) in self.entries() {
            writeln!(out, "{i} {j} {v:.17e}")?;
        }
        Ok(())
    }
}

fn sample(mesh: &Mesh, potential: &impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    (0..mesh.points)
        .map(|i| {
            let v = potential(mesh.node(i));
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFiniteValue { index: i, value: v })
            }
        })
        .collect()
}

/// Dirichlet second-difference Hamiltonian `-k ∂² + V` on one flux variable.
pub fn assemble_1q(mesh: &Mesh, kinetic: f64, potential: impl Fn(f64) -> f64) -> Result<SparseOperator> {
    let n = mesh.points;
    let v = sample(mesh, &potential)?;
    let t = kinetic / (mesh.spacing() * mesh.spacing());
    let mut trip = Vec::with_capacity(3 * n);
    for i in 0..n {
        if i > 0 {
            trip.push((i, i - 1, -t));
        }
        trip.push((i, i, 2.0 * t + v[i]));
        if i + 1 < n {
            trip.push((i, i + 1, -t));
        }
    }
    SparseOperator::from_triplets(n, trip, true)
}

/// `(H₁ ⊗ 1) + (1 ⊗ H₂) + diag(V_int)` with row index `i₁·L₂ + i₂`.
pub fn assemble_2q(
    mesh1: &Mesh,
    mesh2: &Mesh,
    kinetic: f64,
    pot1: impl Fn(f64) -> f64,
    pot2: impl Fn(f64) -> f64,
    pot_int: impl Fn(f64, f64) -> f64,
    cap: usize,
) -> Result<SparseOperator> {
    let (n1, n2) = (mesh1.points, mesh2.points);
    let dim = n1.checked_mul(n2).unwrap_or(usize::MAX);
    if dim > cap {
        return Err(Error::DimensionOverflow { dim, cap });
    }
    let v1 = sample(mesh1, &pot1)?;
    let v2 = sample(mesh2, &pot2)?;
    let t1 = kinetic / (mesh1.spacing() * mesh1.spacing());
    let t2 = kinetic / (mesh2.spacing() * mesh2.spacing());
    let x2 = mesh2.nodes();
    let mut trip = Vec::with_capacity(5 * dim);
    for i in 0..n1 {
        let x1 = mesh1.node(i);
        for j in 0..n2 {
            let row = i * n2 + j;
            let vint = pot_int(x1, x2[j]);
            if !vint.is_finite() {
                return Err(Error::NonFiniteValue { index: row, value: vint });
            }
            if i > 0 {
                trip.push((row, row - n2, -t1));
            }
            if j > 0 {
                trip.push((row, row - 1, -t2));
            }
            trip.push((row, row, 2.0 * t1 + 2.0 * t2 + v1[i] + v2[j] + vint));
            if j + 1 < n2 {
                trip.push((row, row + 1, -t2));
            }
            if i + 1 < n1 {
                trip.push((row, row + n2, -t1));
            }
        }
    }
    SparseOperator::from_triplets(dim, trip, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;

    fn sorted_eigs(m: DMatrix<f64>) -> Vec<f64> {
        let mut e: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    }

    #[test]
    fn three_point_stencil() {
        let mesh = Mesh::new(-1.0, 1.0, 3).unwrap();
        let h = assemble_1q(&mesh, 1.0, |_| 0.0).unwrap().to_dense();
        let expected = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0]);
        assert_eq!(h, expected);
    }

    #[test]
    fn constant_shift_moves_spectrum() {
        let mesh = Mesh::new(-2.0, 2.0, 30).unwrap();
        let a = sorted_eigs(assemble_1q(&mesh, 0.7, |x| x * x).unwrap().to_dense());
        let b = sorted_eigs(assemble_1q(&mesh, 0.7, |x| x * x + 3.25).unwrap().to_dense());
        for (x, y) in a.iter().zip(&b) {
            assert!((y - x - 3.25).abs() < 1e-10);
        }
    }

    #[test]
    fn harmonic_oscillator_quantum() {
        // -k ∂² + ½ c φ²  has level spacing √(2 k c).
        let (k, c) = (0.86, 380.0);
        let mesh = Mesh::symmetric(2.0, 1200).unwrap();
        let e = sorted_eigs(assemble_1q(&mesh, k, |x| 0.5 * c * x * x).unwrap().to_dense());
        let quantum = (2.0 * k * c).sqrt();
        assert!(((e[1] - e[0]) / quantum - 1.0).abs() < 1e-3);
        assert!((e[0] / (0.5 * quantum) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn nonfinite_potential_is_rejected() {
        let mesh = Mesh::new(-1.0, 1.0, 5).unwrap();
        let err = assemble_1q(&mesh, 1.0, |x| if x > 0.4 { f64::NAN } else { 0.0 }).unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue { index: 3, .. }));
    }

    #[test]
    fn tensor_sum_spectrum() {
        let m1 = Mesh::new(-1.5, 1.3, 7).unwrap();
        let m2 = Mesh::new(-1.0, 1.0, 6).unwrap();
        let p1 = |x: f64| x * x + 0.3 * x;
        let p2 = |x: f64| (2.0 * x).cos();
        let h = assemble_2q(&m1, &m2, 0.5, p1, p2, |_, _| 0.0, 1000).unwrap();
        assert!(h.is_exactly_symmetric());
        assert!(h.max_row_nnz() <= 5);
        let e1 = sorted_eigs(assemble_1q(&m1, 0.5, p1).unwrap().to_dense());
        let e2 = sorted_eigs(assemble_1q(&m2, 0.5, p2).unwrap().to_dense());
        let mut sums: Vec<f64> = e1.iter().flat_map(|a| e2.iter().map(move |b| a + b)).collect();
        sums.sort_by(f64::total_cmp);
        let e = sorted_eigs(h.to_dense());
        for (x, y) in e.iter().zip(&sums) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn exchange_symmetry() {
        let m = Mesh::symmetric(1.5, 9).unwrap();
        let p = |x: f64| x * x * x * x - x * x;
        let vint = |a: f64, b: f64| 0.3 * (a - 0.1) * (b - 0.1);
        let h = assemble_2q(&m, &m, 0.4, p, p, vint, 1000).unwrap();
        let swapped = assemble_2q(&m, &m, 0.4, p, p, |a, b| vint(b, a), 1000).unwrap();
        let (a, b) = (sorted_eigs(h.to_dense()), sorted_eigs(swapped.to_dense()));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn dimension_cap() {
        let m = Mesh::symmetric(1.0, 50).unwrap();
        let err = assemble_2q(&m, &m, 1.0, |_| 0.0, |_| 0.0, |_, _| 0.0, 2000).unwrap_err();
        assert!(matches!(err, Error::DimensionOverflow { dim: 2500, cap: 2000 }));
    }

    #[test]
    fn triplet_dump() {
        let mesh = Mesh::new(-1.0, 1.0, 3).unwrap();
        let h = assemble_1q(&mesh, 1.0, |_| 0.0).unwrap();
        let mut buf = Vec::new();
        h.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 7);
        assert!(text.lines().nth(1).unwrap().starts_with("0 0 2.0"));
    }
}
