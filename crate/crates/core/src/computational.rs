//! Persistent-current (computational) basis, profile functions, basis maps
//! `V(s)`, the connection transformation and Pauli decompositions.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::Serialize;

use crate::circuit::{cshunt_current_operator, CShuntBiasRule, Family, IsingSpec, PersistentCurrentTable, Schedule};
use crate::eigen::dot;
use crate::error::{Error, Result};
use crate::frame::CMatrix;
use crate::spectral::SpectralSlice;
use crate::spline::NaturalSpline;
use crate::system::System;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// `|↑⟩`, `|↓⟩ = (|1⟩ ± |0⟩)/√2` with `|↑⟩` carrying positive mean flux.
#[derive(Debug, Clone)]
pub struct CurrentBasis {
    pub up: Vec<f64>,
    pub down: Vec<f64>,
    /// `⟨↑|φ|↑⟩`.
    pub up_flux: f64,
    pub down_flux: f64,
}

pub fn persistent_current_basis(slice: &SpectralSlice, flux: &[f64]) -> Result<CurrentBasis> {
    if slice.levels() < 2 {
        return Err(Error::InvalidInput("need two levels to form the current basis".into()));
    }
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let (g, e) = (&slice.states[0], &slice.states[1]);
    let mut up: Vec<f64> = e.iter().zip(g).map(|(x, y)| r * (x + y)).collect();
    let mut down: Vec<f64> = e.iter().zip(g).map(|(x, y)| r * (x - y)).collect();
    let mean = |v: &[f64]| v.iter().zip(flux).map(|(x, p)| x * x * p).sum::<f64>();
    let (mut fu, mut fd) = (mean(&up), mean(&down));
    if fu.abs() < 1e-12 {
        return Err(Error::ZeroCurrent);
    }
    if fu < 0.0 {
        std::mem::swap(&mut up, &mut down);
        std::mem::swap(&mut fu, &mut fd);
    }
    Ok(CurrentBasis { up, down, up_flux: fu, down_flux: fd })
}

/// Sign `ε` of the longitudinal term: the bias lowers `|↑⟩` by `ε h B`.
pub fn longitudinal_sign(family: Family) -> f64 {
    match family {
        Family::Cjj => 1.0,
        // the C-shunt bias rule raises the positive-current state
        Family::CShunt => -1.0,
    }
}

/// Tabulated `A(s)`, `B(s)` and persistent currents with spline derivatives.
#[derive(Debug, Clone)]
pub struct ProfileFunctions {
    pub family: Family,
    pub s_grid: Vec<f64>,
    /// Transverse scale, GHz.
    pub a: Vec<f64>,
    /// Longitudinal scale, GHz.
    pub b: Vec<f64>,
    /// `I_p` (CJJ, `E_L⟨↑|φ|↑⟩`) or `𝓘_p` (C-shunt), GHz.
    pub current: Vec<f64>,
    a_spline: NaturalSpline,
    b_spline: NaturalSpline,
    current_spline: NaturalSpline,
}

impl ProfileFunctions {
    pub fn from_tables(family: Family, s_grid: Vec<f64>, a: Vec<f64>, b: Vec<f64>, current: Vec<f64>) -> Result<Self> {
        let a_spline = NaturalSpline::new(&s_grid, &a)?;
        let b_spline = NaturalSpline::new(&s_grid, &b)?;
        let current_spline = NaturalSpline::new(&s_grid, &current)?;
        Ok(Self { family, s_grid, a, b, current, a_spline, b_spline, current_spline })
    }

    pub fn a_at(&self, s: f64) -> f64 {
        self.a_spline.eval(s)
    }

    pub fn b_at(&self, s: f64) -> f64 {
        self.b_spline.eval(s)
    }

    pub fn a_rate(&self, s: f64) -> f64 {
        self.a_spline.derivative(s)
    }

    pub fn b_rate(&self, s: f64) -> f64 {
        self.b_spline.derivative(s)
    }

    /// Bias-flux table for the biased pass.
    pub fn current_table(&self, bias_factor: f64, rule: CShuntBiasRule) -> PersistentCurrentTable {
        PersistentCurrentTable { family: self.family, current: self.current_spline.clone(), cshunt_rule: rule, bias_factor }
    }
}

/// `A = ⟨↑|H|↓⟩ = Δ/2` and `B = φ_x I_p` from zero-bias single-qubit slices.
pub fn profile_functions(
    zero_bias: &[SpectralSlice],
    system: &System,
    sched: &Schedule,
    rule: &CShuntBiasRule,
) -> Result<ProfileFunctions> {
    let x = system.mesh()?.nodes();
    let factor = system.params.bias_factor(system.family);
    let mut s_grid = Vec::with_capacity(zero_bias.len());
    let (mut a, mut b, mut current) = (vec![], vec![], vec![]);
    for slice in zero_bias {
        let basis = persistent_current_basis(slice, &x).map_err(|e| e.at_s(slice.s))?;
        let cur = match system.family {
            Family::Cjj => system.params.inductive_energy.unwrap_or(f64::NAN) * basis.up_flux,
            Family::CShunt => {
                let cjj = sched.cjj_flux_at(slice.s);
                basis
                    .up
                    .iter()
                    .zip(&x)
                    .map(|(u, &p)| u * u * cshunt_current_operator(p, cjj, &system.params, system.convention))
                    .sum()
            }
        };
        // B = φ_x 𝓘_p; with the shared rule φ_x = factor · I_p and I_p ≡ 𝓘_p
        let ip = match (system.family, rule) {
            (Family::CShunt, CShuntBiasRule::Table(t)) => t.eval(slice.s),
            _ => cur,
        };
        s_grid.push(slice.s);
        a.push(0.5 * slice.gap());
        b.push(factor * ip * ip);
        current.push(cur);
    }
    ProfileFunctions::from_tables(system.family, s_grid, a, b, current)
}

/// `V = exp[(i/2) θ σ^y]`, `θ = atan2(A, B)`, so that `V H̃ V† = A σ^x − B σ^z + c`.
pub fn single_qubit_v(a: f64, b: f64) -> Result<DMatrix<f64>> {
    if a == 0.0 && b == 0.0 {
        return Err(Error::UndefinedAngle);
    }
    let half = 0.5 * a.atan2(b);
    let (c, s) = (half.cos(), half.sin());
    Ok(DMatrix::from_row_slice(2, 2, &[c, s, -s, c]))
}

/// `dV/ds` of [`single_qubit_v`] from the profile derivatives.
pub fn single_qubit_v_rate(a: f64, b: f64, a_dot: f64, b_dot: f64) -> Result<DMatrix<f64>> {
    let r2 = a * a + b * b;
    if r2 == 0.0 {
        return Err(Error::UndefinedAngle);
    }
    let half = 0.5 * a.atan2(b);
    let half_dot = 0.5 * (a_dot * b - a * b_dot) / r2;
    let (c, s) = (half.cos(), half.sin());
    Ok(DMatrix::from_row_slice(2, 2, &[-s, c, -c, -s]) * half_dot)
}

fn pauli(c: char) -> [[Complex64; 2]; 2] {
    let z = Complex64::new(0.0, 0.0);
    let o = Complex64::new(1.0, 0.0);
    match c {
        'X' => [[z, o], [o, z]],
        'Y' => [[z, -I], [I, z]],
        'Z' => [[o, z], [z, -o]],
        _ => [[o, z], [z, o]],
    }
}

/// Tensor product of single-qubit Paulis; the first character acts on the most significant bit.
pub fn pauli_matrix(label: &str) -> CMatrix {
    let mut m = CMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
    for ch in label.chars() {
        let p = pauli(ch);
        let n = m.nrows();
        let mut next = CMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                for a in 0..2 {
                    for b in 0..2 {
                        next[(2 * i + a, 2 * j + b)] = m[(i, j)] * p[a][b];
                    }
                }
            }
        }
        m = next;
    }
    m
}

fn z_eigen(index: usize, qubit: usize, n: usize) -> f64 {
    // bit 0 of the label (σ^z = +1) is the positive-current state
    if (index >> (n - 1 - qubit)) & 1 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `A Σσ^x_i − b (Σ h_i σ^z_i + Σ J_ij σ^z_i σ^z_j)` in the computational basis.
pub fn ising_model(a: f64, b: f64, ising: &IsingSpec) -> DMatrix<f64> {
    let n = ising.qubits();
    let dim = 1 << n;
    let mut h = DMatrix::zeros(dim, dim);
    for idx in 0..dim {
        let mut diag = 0.0;
        for (q, &hq) in ising.local_fields.iter().enumerate() {
            diag += hq * z_eigen(idx, q, n);
            h[(idx ^ (1 << (n - 1 - q)), idx)] += a;
        }
        for &(i, j, jij) in &ising.couplings {
            diag += jij * z_eigen(idx, i, n) * z_eigen(idx, j, n);
        }
        h[(idx, idx)] = -b * diag;
    }
    h
}

/// Result of fitting the exact levels to the Ising model at one `s`.
#[derive(Debug, Clone)]
pub struct ModelFit {
    /// Columns are model eigenvectors, ascending.
    pub v: DMatrix<f64>,
    pub model_energies: Vec<f64>,
    /// Trace-matching shift `c` with `eig(H_model) ≈ E + c`.
    pub shift: f64,
    /// `max_a |eig_a(H_model) − E_a − c|`.
    pub residual: f64,
}

/// Continuity-fixed model eigenvectors.
pub fn model_eigenvectors(
    a: f64,
    b: f64,
    ising: &IsingSpec,
    prev: Option<&DMatrix<f64>>,
    degeneracy: f64,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let eig = SymmetricEigen::new(ising_model(a, b, ising));
    let dim = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    for w in values.windows(2) {
        if w[1] - w[0] < degeneracy {
            return Err(Error::ModelDegeneracy { spacing: w[1] - w[0] });
        }
    }
    let mut v = DMatrix::zeros(dim, dim);
    for (col, &i) in order.iter().enumerate() {
        let mut c = eig.eigenvectors.column(i).clone_owned();
        let sign = match prev {
            Some(p) => p.column(col).dot(&c).signum(),
            None => crate::spectral::anchor_sign(c.as_slice()),
        };
        if sign < 0.0 {
            c = -c;
        }
        v.set_column(col, &c);
    }
    Ok((v, values))
}

/// `dV/ds` for model eigenvectors: `V̇ = V K`, `K_ab = ⟨v_a|Ḣ|v_b⟩/(m_b − m_a)`.
pub fn model_eigenvector_rate(v: &DMatrix<f64>, values: &[f64], h_rate: &DMatrix<f64>) -> DMatrix<f64> {
    let hv = v.transpose() * h_rate * v;
    let n = values.len();
    let mut k = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            if a != b {
                k[(a, b)] = hv[(a, b)] / (values[b] - values[a]);
            }
        }
    }
    v * k
}

/// Numerical basis map for two qubits, with the residual against the exact levels.
pub fn two_qubit_v(
    h_tilde: &[f64],
    a: f64,
    b: f64,
    ising: &IsingSpec,
    prev: Option<&DMatrix<f64>>,
    degeneracy: f64,
) -> Result<ModelFit> {
    let (v, model) = model_eigenvectors(a, b, ising, prev, degeneracy)?;
    if model.len() != h_tilde.len() {
        return Err(Error::InvalidInput(format!("{} exact levels vs {} model levels", h_tilde.len(), model.len())));
    }
    let n = model.len() as f64;
    let shift = (model.iter().sum::<f64>() - h_tilde.iter().sum::<f64>()) / n;
    let residual = model.iter().zip(h_tilde).map(|(m, e)| (m - e - shift).abs()).fold(0.0, f64::max);
    Ok(ModelFit { v, model_energies: model, shift, residual })
}

/// Per-level `(E_a − E_0)/(m_a − m_0) − 1` for `a ≥ 1`.
pub fn gap_ratio_deviations(exact: &[f64], model: &[f64]) -> Vec<f64> {
    (1..exact.len()).map(|a| (exact[a] - exact[0]) / (model[a] - model[0]) - 1.0).collect()
}

/// `G^C = V G V† + i V V̇†`, Hermitian-projected.
pub fn transform_g(g: &CMatrix, v: &DMatrix<f64>, v_dot: &DMatrix<f64>) -> CMatrix {
    let vc = v.map(|x| Complex64::new(x, 0.0));
    let conn = (v * v_dot.transpose()).map(|x| I * x);
    let gc = &vc * g * vc.adjoint() + conn;
    (&gc + gc.adjoint()) * Complex64::new(0.5, 0.0)
}

/// `g^y = g + 2(ȦB − AḂ)/Δ²`.
pub fn analytic_gy(g: f64, a: f64, b: f64, a_dot: f64, b_dot: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::ZeroGap);
    }
    Ok(g + 2.0 * (a_dot * b - a * b_dot) / (delta * delta))
}

/// Real coefficients `c_P = Tr(P M)/N` over all Pauli strings.
#[derive(Debug, Clone, Serialize)]
pub struct PauliDecomposition {
    pub qubits: usize,
    pub coefficients: BTreeMap<String, f64>,
}

impl PauliDecomposition {
    pub fn get(&self, label: &str) -> f64 {
        self.coefficients.get(label).copied().unwrap_or(0.0)
    }

    pub fn reconstruct(&self) -> CMatrix {
        let dim = 1 << self.qubits;
        let mut m = CMatrix::zeros(dim, dim);
        for (label, &c) in &self.coefficients {
            m += pauli_matrix(label) * Complex64::new(c, 0.0);
        }
        m
    }

    fn y_count(label: &str) -> usize {
        label.chars().filter(|&c| c == 'Y').count()
    }

    /// Largest coefficient magnitude on strings with an odd number of `Y`.
    pub fn max_odd_y(&self) -> f64 {
        self.coefficients.iter().filter(|(l, _)| Self::y_count(l) % 2 == 1).map(|(_, c)| c.abs()).fold(0.0, f64::max)
    }

    pub fn max_even_y(&self) -> f64 {
        self.coefficients.iter().filter(|(l, _)| Self::y_count(l) % 2 == 0).map(|(_, c)| c.abs()).fold(0.0, f64::max)
    }
}

pub fn pauli_labels(qubits: usize) -> Vec<String> {
    let mut labels = vec![String::new()];
    for _ in 0..qubits {
        labels = labels.iter().flat_map(|l| "IXYZ".chars().map(move |c| format!("{l}{c}"))).collect();
    }
    labels
}

pub fn pauli_decompose(m: &CMatrix) -> Result<PauliDecomposition> {
    let dim = m.nrows();
    if dim != m.ncols() || dim == 0 || !dim.is_power_of_two() || dim == 1 {
        return Err(Error::BadDimension(dim));
    }
    let qubits = dim.trailing_zeros() as usize;
    let coefficients = pauli_labels(qubits)
        .into_iter()
        .map(|label| {
            let c = (pauli_matrix(&label) * m).trace() / dim as f64;
            (label, c.re)
        })
        .collect();
    Ok(PauliDecomposition { qubits, coefficients })
}

/// Product computational states on a (possibly two-axis) mesh.
fn computational_states(basis: &CurrentBasis, qubits: usize) -> Vec<Vec<f64>> {
    let single = [&basis.up, &basis.down];
    match qubits {
        1 => vec![basis.up.clone(), basis.down.clone()],
        _ => {
            let l = basis.up.len();
            let mut out = Vec::with_capacity(4);
            for c1 in 0..2 {
                for c2 in 0..2 {
                    let mut v = Vec::with_capacity(l * l);
                    for i in 0..l {
                        for j in 0..l {
                            v.push(single[c1][i] * single[c2][j]);
                        }
                    }
                    out.push(v);
                }
            }
            out
        }
    }
}

/// Column signs making `V` agree with the physical overlaps `⟨c|a⟩` at one `s`.
pub fn column_signs(basis: &CurrentBasis, slice: &SpectralSlice, v: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = slice.levels();
    let qubits = n.trailing_zeros() as usize;
    let comp = computational_states(basis, qubits);
    let mut signs = Vec::with_capacity(n);
    for a in 0..n {
        let agreement: f64 = (0..n).map(|c| dot(&comp[c], &slice.states[a]) * v[(c, a)]).sum();
        if agreement.abs() < 0.5 {
            return Err(Error::AmbiguousOverlap { state: a, from: slice.s, to: slice.s, overlap: agreement });
        }
        signs.push(agreement.signum());
    }
    Ok(signs)
}

/// Continuous `V(s)` built from the profile splines.
#[derive(Debug, Clone)]
pub struct BasisMap {
    pub profiles: ProfileFunctions,
    pub ising: IsingSpec,
    pub epsilon: f64,
    /// Grid-point maps used to keep two-qubit eigenvector signs continuous.
    anchors: Vec<(f64, DMatrix<f64>)>,
    pub column_signs: Vec<f64>,
    pub degeneracy: f64,
}

impl BasisMap {
    pub fn new(profiles: ProfileFunctions, ising: IsingSpec, degeneracy: f64) -> Result<Self> {
        let epsilon = longitudinal_sign(profiles.family);
        let n = 1 << ising.qubits();
        let mut map = Self { profiles, ising, epsilon, anchors: vec![], column_signs: vec![1.0; n], degeneracy };
        if map.ising.qubits() > 1 {
            let grid = map.profiles.s_grid.clone();
            let mut prev: Option<DMatrix<f64>> = None;
            for &s in &grid {
                let (v, _) = model_eigenvectors(map.profiles.a_at(s), map.longitudinal(s), &map.ising, prev.as_ref(), degeneracy)
                    .map_err(|e| e.at_s(s))?;
                map.anchors.push((s, v.clone()));
                prev = Some(v);
            }
        }
        Ok(map)
    }

    pub fn qubits(&self) -> usize {
        self.ising.qubits()
    }

    /// Effective `b` of the model at `s`, `ε B(s)`.
    pub fn longitudinal(&self, s: f64) -> f64 {
        self.epsilon * self.profiles.b_at(s)
    }

    pub fn longitudinal_rate(&self, s: f64) -> f64 {
        self.epsilon * self.profiles.b_rate(s)
    }

    pub fn model(&self, s: f64) -> DMatrix<f64> {
        ising_model(self.profiles.a_at(s), self.longitudinal(s), &self.ising)
    }

    fn apply_signs(&self, mut v: DMatrix<f64>) -> DMatrix<f64> {
        for (c, &sg) in self.column_signs.iter().enumerate() {
            if sg < 0.0 {
                v.column_mut(c).neg_mut();
            }
        }
        v
    }

    fn nearest_anchor(&self, s: f64) -> &DMatrix<f64> {
        let idx = self.anchors.partition_point(|(x, _)| *x < s);
        let pick = if idx == 0 {
            0
        } else if idx >= self.anchors.len() {
            self.anchors.len() - 1
        } else if (self.anchors[idx].0 - s) < (s - self.anchors[idx - 1].0) {
            idx
        } else {
            idx - 1
        };
        &self.anchors[pick].1
    }

    fn raw(&self, s: f64) -> Result<(DMatrix<f64>, Vec<f64>)> {
        let a = self.profiles.a_at(s);
        let b = self.longitudinal(s);
        if self.qubits() == 1 {
            let h = self.ising.local_fields[0];
            Ok((single_qubit_v(a, h * b)?, vec![]))
        } else {
            model_eigenvectors(a, b, &self.ising, Some(self.nearest_anchor(s)), self.degeneracy)
        }
    }

    pub fn v(&self, s: f64) -> Result<DMatrix<f64>> {
        Ok(self.apply_signs(self.raw(s)?.0))
    }

    /// Analytic `dV/ds`.
    pub fn v_rate(&self, s: f64) -> Result<DMatrix<f64>> {
        let a = self.profiles.a_at(s);
        let b = self.longitudinal(s);
        let (ad, bd) = (self.profiles.a_rate(s), self.longitudinal_rate(s));
        let raw = if self.qubits() == 1 {
            let h = self.ising.local_fields[0];
            single_qubit_v_rate(a, h * b, ad, h * bd)?
        } else {
            let (v, values) = self.raw(s)?;
            let h_rate = ising_model(ad, bd, &self.ising);
            model_eigenvector_rate(&v, &values, &h_rate)
        };
        Ok(self.apply_signs(raw))
    }

    /// Central difference of `V` with step `delta`, one-sided near the ends.
    pub fn v_rate_fd(&self, s: f64, delta: f64) -> Result<DMatrix<f64>> {
        if s - delta < 0.0 {
            let (f0, f1, f2) = (self.v(s)?, self.v(s + delta)?, self.v(s + 2.0 * delta)?);
            Ok((f1 * 4.0 - f0 * 3.0 - f2) / (2.0 * delta))
        } else if s + delta > 1.0 {
            let (f0, f1, f2) = (self.v(s)?, self.v(s - delta)?, self.v(s - 2.0 * delta)?);
            Ok((f0 * 3.0 - f1 * 4.0 + f2) / (2.0 * delta))
        } else {
            Ok((self.v(s + delta)? - self.v(s - delta)?) / (2.0 * delta))
        }
    }

    /// Fixes the column signs against the physical computational states at one slice.
    pub fn align(&mut self, basis: &CurrentBasis, slice: &SpectralSlice) -> Result<()> {
        self.column_signs = vec![1.0; slice.levels()];
        let v = self.v(slice.s)?;
        self.column_signs = column_signs(basis, slice, &v)?;
        Ok(())
    }

    /// `(g^y)` closed form for one qubit, with `Δ = 2√(A² + b²)`.
    pub fn analytic_gy(&self, s: f64, g: f64) -> Result<f64> {
        let h = self.ising.local_fields[0];
        let a = self.profiles.a_at(s);
        let b = h * self.longitudinal(s);
        let delta = 2.0 * (a * a + b * b).sqrt();
        analytic_gy(g, a, b, self.profiles.a_rate(s), h * self.longitudinal_rate(s), delta)
    }
}
