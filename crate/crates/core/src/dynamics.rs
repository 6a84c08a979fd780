//! Propagation of the effective N-level Schrödinger equation `i dψ/ds = H(s) ψ`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circuit::Kappa;
use crate::computational::BasisMap;
use crate::error::{Error, Result};
use crate::frame::{hermitian_from_connection, CMatrix, EffectiveFrame};
use crate::spline::NaturalSpline;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// An `s`-dependent Hermitian generator.
pub trait Generator: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, s: f64) -> Result<CMatrix>;
}

/// Which basis a trajectory's amplitudes refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Instantaneous,
    Computational,
}

/// Entry-wise natural cubic splines of `E_a(s)` and `M_ab(s) = −i G_ab(s)`.
#[derive(Debug, Clone)]
pub struct FrameSplines {
    levels: usize,
    energies: Vec<NaturalSpline>,
    // upper-triangle entries of M
    connection: Vec<(usize, usize, NaturalSpline)>,
}

impl FrameSplines {
    pub fn new(frames: &[EffectiveFrame]) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::InvalidInput("no frames to interpolate".into()));
        };
        let levels = first.levels();
        let s: Vec<f64> = frames.iter().map(|f| f.s).collect();
        let energies = (0..levels)
            .map(|a| NaturalSpline::new(&s, &frames.iter().map(|f| f.h_tilde[a]).collect::<Vec<_>>()))
            .collect::<Result<_>>()?;
        let mut connection = Vec::new();
        for a in 0..levels {
            for b in a + 1..levels {
                let m: Vec<f64> = frames.iter().map(|f| f.g[(a, b)].im).collect();
                connection.push((a, b, NaturalSpline::new(&s, &m)?));
            }
        }
        Ok(Self { levels, energies, connection })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn energies(&self, s: f64) -> Vec<f64> {
        self.energies.iter().map(|sp| sp.eval(s)).collect()
    }

    pub fn g(&self, s: f64) -> CMatrix {
        let mut m = DMatrix::zeros(self.levels, self.levels);
        for (a, b, sp) in &self.connection {
            let v = sp.eval(s);
            m[(*a, *b)] = v;
            m[(*b, *a)] = -v;
        }
        hermitian_from_connection(&m)
    }
}

/// `t_f κ̇ H̃ − G` in the instantaneous eigenbasis.
pub struct InstantaneousGenerator<'a> {
    pub splines: &'a FrameSplines,
    pub kappa: Kappa,
    pub t_f: f64,
    pub include_g: bool,
}

impl InstantaneousGenerator<'_> {
    fn dynamical(&self, s: f64) -> CMatrix {
        let scale = self.t_f * self.kappa.rate(s);
        let e = self.splines.energies(s);
        CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(e.len(), e.iter().map(|x| Complex64::new(scale * x, 0.0))))
    }
}

impl Generator for InstantaneousGenerator<'_> {
    fn dim(&self) -> usize {
        self.splines.levels()
    }

    fn eval(&self, s: f64) -> Result<CMatrix> {
        let mut h = self.dynamical(s);
        if self.include_g {
            h -= self.splines.g(s);
        }
        Ok(h)
    }
}

/// The same dynamics seen through `ψ_C = V(s) ψ`: `V H V† + i V̇ V†`.
///
/// Without the geometric term the generator is `t_f κ̇ V H̃ V†`, dropping the
/// whole transformed connection.
pub struct ComputationalGenerator<'a> {
    pub inner: InstantaneousGenerator<'a>,
    pub basis: &'a BasisMap,
}

impl Generator for ComputationalGenerator<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, s: f64) -> Result<CMatrix> {
        let v = self.basis.v(s)?.map(|x| Complex64::new(x, 0.0));
        let h = self.inner.eval(s)?;
        let mut hc = &v * h * v.adjoint();
        if self.inner.include_g {
            let vd = self.basis.v_rate(s)?.map(|x| Complex64::new(x, 0.0));
            hc += (vd * v.adjoint()) * I;
        }
        Ok(hc)
    }
}

/// `H_u(u) = κ̇(u) H(κ(u))`: the same protocol driven by a new parameter `u`.
pub struct Reparametrized<G> {
    pub inner: G,
    pub kappa: Kappa,
}

impl<G: Generator> Generator for Reparametrized<G> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, u: f64) -> Result<CMatrix> {
        Ok(self.inner.eval(self.kappa.value(u))? * Complex64::new(self.kappa.rate(u), 0.0))
    }
}

/// Generator from a closure, mostly for tests.
pub struct FnGenerator<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(f64) -> CMatrix + Sync> Generator for FnGenerator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, s: f64) -> Result<CMatrix> {
        Ok((self.f)(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Subtract `Tr H / N` from the generator; changes only a global phase.
    pub remove_trace: bool,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 1e-12, remove_trace: true, max_steps: 50_000_000 }
    }
}

impl OdeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.rtol < 1e-2) {
            return Err(Error::validation("solver.rtol", "must lie in (0, 1e-2)"));
        }
        if !(self.atol > 0.0) {
            return Err(Error::validation("solver.atol", "must be positive"));
        }
        Ok(())
    }
}

/// Sampled solution of one propagation.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub s: Vec<f64>,
    /// State vectors (N×1) or evolution operators (N×N).
    pub states: Vec<CMatrix>,
    pub basis: Basis,
    pub include_g: bool,
    pub t_f: f64,
    pub steps: usize,
    pub rejected: usize,
}

impl Trajectory {
    pub fn last(&self) -> &CMatrix {
        self.states.last().expect("trajectory has at least one sample")
    }

    /// `max_s |‖ψ(s)‖ − 1|`, or the unitarity defect `‖W†W − 1‖` for operators.
    pub fn norm_drift(&self) -> f64 {
        self.states
            .iter()
            .map(|w| {
                if w.ncols() == 1 {
                    (w.norm() - 1.0).abs()
                } else {
                    (w.adjoint() * w - CMatrix::identity(w.nrows(), w.ncols())).norm()
                }
            })
            .fold(0.0, f64::max)
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn rhs(gen: &dyn Generator, s: f64, y: &CMatrix, remove_trace: bool) -> Result<CMatrix> {
    let mut h = gen.eval(s)?;
    if remove_trace {
        let n = h.nrows();
        let mean = h.trace() / n as f64;
        for i in 0..n {
            h[(i, i)] -= mean;
        }
    }
    Ok((h * y) * (-I))
}

/// Adaptive Dormand–Prince 5(4) integration from `samples[0]` through every sample.
pub fn propagate(
    gen: &dyn Generator,
    initial: CMatrix,
    samples: &[f64],
    opts: &OdeOptions,
    basis: Basis,
    include_g: bool,
    t_f: f64,
) -> Result<Trajectory> {
    if initial.nrows() != gen.dim() {
        return Err(Error::InvalidInput(format!("state has {} rows, generator is {}-dimensional", initial.nrows(), gen.dim())));
    }
    if samples.is_empty() || samples.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("sample points must be strictly increasing".into()));
    }
    let mut traj = Trajectory { s: vec![samples[0]], states: vec![initial.clone()], basis, include_g, t_f, steps: 0, rejected: 0 };
    let mut s = samples[0];
    let mut y = initial;
    let mut k1 = rhs(gen, s, &y, opts.remove_trace)?;
    let scale0 = k1.norm() / y.norm().max(1e-300);
    let mut h = if scale0 > 0.0 { (0.01 / scale0).min(1e-2) } else { 1e-2 };
    for &target in &samples[1..] {
        while s < target {
            let last = target - s <= h * (1.0 + 1e-12);
            let step = if last { target - s } else { h };
            let mut k: Vec<CMatrix> = Vec::with_capacity(7);
            k.push(k1.clone());
            for stage in 1..7 {
                let mut yi = y.clone();
                for (j, kj) in k.iter().enumerate() {
                    let a = A[stage][j];
                    if a != 0.0 {
                        yi += kj * Complex64::new(step * a, 0.0);
                    }
                }
                if stage == 6 {
                    // the seventh-stage input is the fifth-order solution
                    let k7 = rhs(gen, s + step, &yi, opts.remove_trace)?;
                    k.push(k7);
                    let mut err = 0.0f64;
                    for i in 0..y.len() {
                        let mut e = Complex64::new(0.0, 0.0);
                        for (j, kj) in k.iter().enumerate() {
                            e += kj[i] * E[j];
                        }
                        let sc = opts.atol + opts.rtol * y[i].norm().max(yi[i].norm());
                        err = err.max((e * step).norm() / sc);
                    }
                    if err <= 1.0 {
                        s = if last { target } else { s + step };
                        y = yi;
                        k1 = k.pop().unwrap();
                        traj.steps += 1;
                        let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                        if !last || grow < 1.0 {
                            h = step * grow;
                        }
                    } else {
                        traj.rejected += 1;
                        h = step * (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                    }
                    break;
                }
                k.push(rhs(gen, s + C[stage] * step, &yi, opts.remove_trace)?);
            }
            if h < 1e-14 * s.abs().max(1.0) {
                return Err(Error::StepFailure { s, step: h });
            }
            if traj.steps + traj.rejected > opts.max_steps {
                return Err(Error::StepFailure { s, step: h });
            }
        }
        traj.s.push(target);
        traj.states.push(y.clone());
    }
    Ok(traj)
}

/// Squared amplitudes of the first column at every sample.
pub fn populations(traj: &Trajectory) -> Vec<Vec<f64>> {
    traj.states.iter().map(|w| w.column(0).iter().map(|z| z.norm_sqr()).collect()).collect()
}

/// `|⟨ψ_G(s)|ψ_noG(s)⟩|²` along two comparable runs.
pub fn fidelity_series(with_g: &Trajectory, without_g: &Trajectory) -> Result<Vec<f64>> {
    if with_g.t_f != without_g.t_f {
        return Err(Error::MismatchedRuns(format!("t_f {} vs {}", with_g.t_f, without_g.t_f)));
    }
    if with_g.basis != without_g.basis {
        return Err(Error::MismatchedRuns("different bases".into()));
    }
    if with_g.s != without_g.s {
        return Err(Error::MismatchedRuns("different sample points".into()));
    }
    if (&with_g.states[0] - &without_g.states[0]).norm() > 1e-12 {
        return Err(Error::MismatchedRuns("different initial states".into()));
    }
    Ok(with_g
        .states
        .iter()
        .zip(&without_g.states)
        .map(|(a, b)| a.column(0).dotc(&b.column(0)).norm_sqr().min(1.0))
        .collect())
}

/// Unit column vector `e_a` of dimension `n`.
pub fn basis_state(n: usize, a: usize) -> CMatrix {
    let mut v = CMatrix::zeros(n, 1);
    v[(a, 0)] = Complex64::new(1.0, 0.0);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        crate::circuit::uniform_grid(n)
    }

    #[test]
    fn zero_generator_keeps_state() {
        let gen = FnGenerator { dim: 2, f: |_| CMatrix::zeros(2, 2) };
        let psi = basis_state(2, 0) * Complex64::new(0.6, 0.0) + basis_state(2, 1) * Complex64::new(0.0, 0.8);
        let t = propagate(&gen, psi.clone(), &grid(5), &OdeOptions::default(), Basis::Instantaneous, false, 1.0).unwrap();
        for st in &t.states {
            assert_eq!(st, &psi);
        }
    }

    #[test]
    fn diagonal_phases() {
        // E_0(s) = s, E_1(s) = 2 − s; phase = t_f ∫ E ds
        let t_f = 3.0;
        let gen = FnGenerator {
            dim: 2,
            f: move |s: f64| {
                CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![Complex64::new(t_f * s, 0.0), Complex64::new(t_f * (2.0 - s), 0.0)]))
            },
        };
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let psi = (basis_state(2, 0) + basis_state(2, 1)) * Complex64::new(r, 0.0);
        let opts = OdeOptions { remove_trace: false, ..OdeOptions::default() };
        let t = propagate(&gen, psi, &grid(3), &opts, Basis::Instantaneous, false, t_f).unwrap();
        let end = t.last();
        let expect0 = (-I * t_f * 0.5).exp() * r;
        let expect1 = (-I * t_f * 1.5).exp() * r;
        assert!((end[(0, 0)] - expect0).norm() < 1e-8);
        assert!((end[(1, 0)] - expect1).norm() < 1e-8);
        for p in populations(&t) {
            assert!((p[0] - 0.5).abs() < 1e-8 && (p[1] - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn rabi_oscillation_and_unitarity() {
        // H = Ω σ^x: P_1(s) = sin²(Ω s)
        let omega = 7.0;
        let gen = FnGenerator {
            dim: 2,
            f: move |_| CMatrix::from_row_slice(2, 2, &[Complex64::new(0.0, 0.0), Complex64::new(omega, 0.0), Complex64::new(omega, 0.0), Complex64::new(0.0, 0.0)]),
        };
        let t = propagate(&gen, basis_state(2, 0), &grid(11), &OdeOptions::default(), Basis::Instantaneous, true, 1.0).unwrap();
        for (s, p) in t.s.iter().zip(populations(&t)) {
            assert!((p[1] - (omega * s).sin().powi(2)).abs() < 1e-8);
        }
        assert!(t.norm_drift() < 1e-8);
        let w = propagate(&gen, CMatrix::identity(2, 2), &grid(3), &OdeOptions::default(), Basis::Instantaneous, true, 1.0).unwrap();
        assert!(w.norm_drift() < 1e-8);
    }

    #[test]
    fn fidelity_checks() {
        let gen = FnGenerator { dim: 2, f: |s: f64| CMatrix::from_row_slice(2, 2, &[Complex64::new(s, 0.0), Complex64::new(0.0, -1.0), Complex64::new(0.0, 1.0), Complex64::new(-s, 0.0)]) };
        let a = propagate(&gen, basis_state(2, 0), &grid(4), &OdeOptions::default(), Basis::Computational, true, 5.0).unwrap();
        let f = fidelity_series(&a, &a).unwrap();
        assert!(f.iter().all(|&x| (x - 1.0).abs() < 1e-8));
        let mut b = a.clone();
        b.t_f = 6.0;
        assert!(matches!(fidelity_series(&a, &b), Err(Error::MismatchedRuns(_))));
    }

    #[test]
    fn tighter_tolerance_reduces_error() {
        let gen = FnGenerator {
            dim: 2,
            f: |s: f64| CMatrix::from_row_slice(2, 2, &[Complex64::new(20.0 * s, 0.0), Complex64::new(3.0, 0.0), Complex64::new(3.0, 0.0), Complex64::new(-20.0 * s, 0.0)]),
        };
        let run = |rtol: f64| {
            let o = OdeOptions { rtol, atol: rtol * 1e-3, ..OdeOptions::default() };
            propagate(&gen, basis_state(2, 0), &[0.0, 1.0], &o, Basis::Instantaneous, true, 1.0).unwrap().last().clone()
        };
        let reference = run(1e-13);
        let e1 = (run(1e-7) - &reference).norm();
        let e2 = (run(1e-8) - &reference).norm();
        assert!(e2 < e1 && e1 > 0.0, "{e1} {e2}");
    }
}
