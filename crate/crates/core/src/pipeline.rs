//! End-to-end static solution and the dynamics runs built on it.

use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{control_fluxes, BiasSource, CShuntBiasRule, Kappa, PersistentCurrentTable, Schedule};
use crate::computational::{
    gap_ratio_deviations, persistent_current_basis, profile_functions, transform_g, BasisMap, ProfileFunctions,
};
use crate::dynamics::{
    basis_state, fidelity_series, propagate, Basis, ComputationalGenerator, FrameSplines, Generator,
    InstantaneousGenerator, OdeOptions, Reparametrized, Trajectory,
};
use crate::error::{Error, Result};
use crate::frame::{connection_from_stencil, hellmann_feynman_g, hermitian_from_connection, CMatrix, EffectiveFrame};
use crate::spectral::{spectral_sweep, SpectralSlice};
use crate::system::System;

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    /// Eigenvector-difference step as a fraction of the local grid spacing.
    pub stencil_fraction: f64,
    /// Bisection depth allowed when state tracking is ambiguous.
    pub max_refinements: usize,
    pub cshunt_rule: CShuntBiasRule,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self { stencil_fraction: 0.015625, max_refinements: 3, cshunt_rule: CShuntBiasRule::Shared }
    }
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StageTimes {
    pub zero_bias: f64,
    pub biased: f64,
    pub frames: f64,
    pub basis: f64,
}

/// Everything that does not depend on `t_f`.
#[derive(Debug, Clone)]
pub struct StaticSolution {
    pub system: System,
    pub schedule: Schedule,
    /// Single-qubit zero-bias slices on the schedule grid.
    pub zero_bias: Vec<SpectralSlice>,
    pub profiles: ProfileFunctions,
    pub table: PersistentCurrentTable,
    /// Biased, gauge-fixed slices (grid possibly refined).
    pub slices: Vec<SpectralSlice>,
    /// Frames with `G` from eigenvector differences.
    pub frames: Vec<EffectiveFrame>,
    /// Hellmann–Feynman `G` at the same points.
    pub hellmann_feynman: Vec<CMatrix>,
    /// Stencil connection `M` before projection onto its antisymmetric part.
    pub raw_connection: Vec<DMatrix<f64>>,
    pub basis: BasisMap,
    /// `G^C` with `V̇` from differences of `V`.
    pub g_computational: Vec<CMatrix>,
    /// Model eigenvalues per slice.
    pub model_energies: Vec<Vec<f64>>,
    pub times: StageTimes,
    pub options: PipelineOptions,
}

fn local_spacing(s: &[f64], j: usize) -> f64 {
    let left = if j > 0 { s[j] - s[j - 1] } else { f64::INFINITY };
    let right = if j + 1 < s.len() { s[j + 1] - s[j] } else { f64::INFINITY };
    left.min(right)
}

/// Second-order difference stencil `(offset, weight)` at `s` with step `delta`.
pub fn stencil(s: f64, delta: f64) -> [(f64, f64); 3] {
    if s - delta < 0.0 {
        [(0.0, -1.5 / delta), (delta, 2.0 / delta), (2.0 * delta, -0.5 / delta)]
    } else if s + delta > 1.0 {
        [(0.0, 1.5 / delta), (-delta, -2.0 / delta), (-2.0 * delta, 0.5 / delta)]
    } else {
        [(-delta, -0.5 / delta), (0.0, 0.0), (delta, 0.5 / delta)]
    }
}

/// Zero-bias single-qubit slices, the profile functions fitted to them and the
/// persistent-current table that sets the bias of the biased solves.
pub fn zero_bias_stage(
    system: &System,
    schedule: &Schedule,
    opts: &PipelineOptions,
) -> Result<(Vec<SpectralSlice>, ProfileFunctions, PersistentCurrentTable)> {
    let single = system.single_qubit();
    let zero_bias: Vec<SpectralSlice> = schedule
        .s_grid
        .par_iter()
        .map(|&s| single.solve(s, schedule, BiasSource::Zero).map_err(|e| e.at_s(s)))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("zero-bias spectrum"))?;
    let profiles = profile_functions(&zero_bias, &single, schedule, &opts.cshunt_rule).map_err(|e| e.in_stage("profiles"))?;
    let table = profiles.current_table(system.params.bias_factor(system.family), opts.cshunt_rule.clone());
    Ok((zero_bias, profiles, table))
}

pub fn solve_static(system: &System, schedule: &Schedule, opts: &PipelineOptions) -> Result<StaticSolution> {
    system.validate()?;
    schedule.validate()?;
    if !(opts.stencil_fraction > 0.0 && opts.stencil_fraction <= 0.5) {
        return Err(Error::validation("solver.stencil_fraction", "must lie in (0, 0.5]"));
    }
    let mut times = StageTimes::default();

    let clock = Instant::now();
    let (zero_bias, profiles, table) = zero_bias_stage(system, schedule, opts)?;
    times.zero_bias = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let slices = spectral_sweep(|s| system.solve(s, schedule, BiasSource::Table(&table)), &schedule.s_grid, opts.max_refinements)
        .map_err(|e| e.in_stage("spectrum"))?;
    times.biased = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let grid: Vec<f64> = slices.iter().map(|x| x.s).collect();
    let per_point: Vec<(EffectiveFrame, CMatrix, DMatrix<f64>)> = (0..slices.len())
        .into_par_iter()
        .map(|j| frame_at(system, schedule, &table, &slices, &grid, j, opts.stencil_fraction).map_err(|e| e.at_s(grid[j])))
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("frame"))?;
    let mut frames = Vec::with_capacity(per_point.len());
    let mut hellmann_feynman = Vec::with_capacity(per_point.len());
    let mut raw_connection = Vec::with_capacity(per_point.len());
    for (f, hf, m) in per_point {
        frames.push(f);
        hellmann_feynman.push(hf);
        raw_connection.push(m);
    }
    times.frames = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let mut basis = BasisMap::new(profiles.clone(), system.ising.clone(), system.eigen.degeneracy).map_err(|e| e.in_stage("basis"))?;
    // physical computational states on the system's own mesh fix the column signs of V
    let mut local = system.clone();
    local.ising = crate::circuit::IsingSpec::single();
    let anchor = local.solve(slices[0].s, schedule, BiasSource::Zero).map_err(|e| e.in_stage("basis"))?;
    let current = persistent_current_basis(&anchor, &local.mesh()?.nodes()).map_err(|e| e.in_stage("basis"))?;
    basis.align(&current, &slices[0]).map_err(|e| e.in_stage("basis"))?;
    let mut g_computational = Vec::with_capacity(frames.len());
    let mut model_energies = Vec::with_capacity(frames.len());
    for (j, f) in frames.iter().enumerate() {
        let delta = opts.stencil_fraction * local_spacing(&grid, j);
        let v = basis.v(f.s).map_err(|e| e.at_s(f.s).in_stage("basis"))?;
        let vd = basis.v_rate_fd(f.s, delta).map_err(|e| e.at_s(f.s).in_stage("basis"))?;
        g_computational.push(transform_g(&f.g, &v, &vd));
        let mut m: Vec<f64> = basis.model(f.s).symmetric_eigenvalues().iter().copied().collect();
        m.sort_by(f64::total_cmp);
        model_energies.push(m);
    }
    times.basis = clock.elapsed().as_secs_f64();

    Ok(StaticSolution {
        system: system.clone(),
        schedule: schedule.clone(),
        zero_bias,
        profiles,
        table,
        slices,
        frames,
        hellmann_feynman,
        raw_connection,
        basis,
        g_computational,
        model_energies,
        times,
        options: opts.clone(),
    })
}

fn frame_at(
    system: &System,
    schedule: &Schedule,
    table: &PersistentCurrentTable,
    slices: &[SpectralSlice],
    grid: &[f64],
    j: usize,
    fraction: f64,
) -> Result<(EffectiveFrame, CMatrix, DMatrix<f64>)> {
    let center = &slices[j];
    let s = center.s;
    let delta = fraction * local_spacing(grid, j);
    let points = stencil(s, delta);
    let mut solved: Vec<(f64, SpectralSlice)> = Vec::with_capacity(3);
    for &(offset, w) in &points {
        if offset == 0.0 {
            solved.push((w, center.clone()));
        } else {
            solved.push((w, system.solve_aligned(s + offset, schedule, BiasSource::Table(table), center)?));
        }
    }
    let stencil_states: Vec<(f64, &[Vec<f64>])> = solved.iter().map(|(w, sl)| (*w, sl.states.as_slice())).collect();
    let m = connection_from_stencil(&center.states, &stencil_states);
    let g = hermitian_from_connection(&m);
    let (c, r) = control_fluxes(s, schedule, BiasSource::Table(table))?;
    let dh = system.hamiltonian_rate(c, r)?;
    let hf = hellmann_feynman_g(center, &dh, system.eigen.degeneracy)?;
    let frame = EffectiveFrame { s, h_tilde: center.energies.clone(), g, kappa_dot: schedule.kappa.rate(s) };
    Ok((frame, hf, m))
}

impl StaticSolution {
    pub fn grid(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.s).collect()
    }

    pub fn levels(&self) -> usize {
        self.system.levels()
    }

    pub fn frame_splines(&self) -> Result<FrameSplines> {
        FrameSplines::new(&self.frames)
    }

    /// Instantaneous ground state, or `V(0) e_0` in the computational basis.
    pub fn initial_state(&self, basis: Basis) -> Result<CMatrix> {
        let e0 = basis_state(self.levels(), 0);
        Ok(match basis {
            Basis::Instantaneous => e0,
            Basis::Computational => self.basis.v(self.grid()[0])?.map(|x| Complex64::new(x, 0.0)) * e0,
        })
    }

    /// `max_a |(E_a − E_0)/(m_a − m_0) − 1|` per slice.
    pub fn gap_deviations(&self) -> Vec<Vec<f64>> {
        self.slices.iter().zip(&self.model_energies).map(|(sl, m)| gap_ratio_deviations(&sl.energies, m)).collect()
    }

    pub fn run(&self, t_f: f64, basis: Basis, include_g: bool, opts: &OdeOptions) -> Result<Trajectory> {
        let splines = self.frame_splines()?;
        let inner = InstantaneousGenerator { splines: &splines, kappa: self.schedule.kappa.clone(), t_f, include_g };
        let samples = self.grid();
        let psi0 = self.initial_state(basis)?;
        match basis {
            Basis::Instantaneous => propagate(&inner, psi0, &samples, opts, basis, include_g, t_f),
            Basis::Computational => {
                let gen = ComputationalGenerator { inner, basis: &self.basis };
                propagate(&gen, psi0, &samples, opts, basis, include_g, t_f)
            }
        }
    }

    /// Computational-basis runs with and without the geometric term.
    pub fn fidelity_runs(&self, t_f: f64, opts: &OdeOptions) -> Result<(Trajectory, Trajectory, Vec<f64>)> {
        let with_g = self.run(t_f, Basis::Computational, true, opts)?;
        let without_g = self.run(t_f, Basis::Computational, false, opts)?;
        let fid = fidelity_series(&with_g, &without_g)?;
        Ok((with_g, without_g, fid))
    }

    pub fn end_fidelity(&self, t_f: f64, opts: &OdeOptions) -> Result<f64> {
        Ok(*self.fidelity_runs(t_f, opts)?.2.last().unwrap())
    }

    /// `‖ψ_κ=id(1) − ψ_κ(1)‖` where the second run drives the same protocol through `s = κ(u)`.
    pub fn reparametrized_final_deviation(&self, t_f: f64, kappa: Kappa, opts: &OdeOptions) -> Result<f64> {
        let splines = self.frame_splines()?;
        let direct = InstantaneousGenerator { splines: &splines, kappa: Kappa::Identity, t_f, include_g: true };
        let samples = [0.0, 1.0];
        let psi0 = self.initial_state(Basis::Instantaneous)?;
        let a = propagate(&direct, psi0.clone(), &samples, opts, Basis::Instantaneous, true, t_f)?;
        let inner = InstantaneousGenerator { splines: &splines, kappa: Kappa::Identity, t_f, include_g: true };
        let re = Reparametrized { inner, kappa };
        let b = propagate(&re as &dyn Generator, psi0, &samples, opts, Basis::Instantaneous, true, t_f)?;
        Ok((a.last() - b.last()).norm())
    }

    /// Connection differentiated in the physical time fraction `τ = κ(s)` at grid
    /// point `j`, with the stencil laid out in `τ` rather than `s`.
    pub fn time_parametrized_g(&self, kappa: &Kappa, j: usize, fraction: f64) -> Result<CMatrix> {
        let grid = self.grid();
        let taus: Vec<f64> = grid.iter().map(|&s| kappa.value(s)).collect();
        let center = &self.slices[j];
        let delta = fraction * local_spacing(&taus, j);
        let mut solved = Vec::with_capacity(3);
        for (offset, w) in stencil(taus[j], delta) {
            if offset == 0.0 {
                solved.push((w, center.clone()));
            } else {
                let s = kappa.inverse(taus[j] + offset);
                solved.push((w, self.system.solve_aligned(s, &self.schedule, BiasSource::Table(&self.table), center)?));
            }
        }
        let states: Vec<(f64, &[Vec<f64>])> = solved.iter().map(|(w, sl)| (*w, sl.states.as_slice())).collect();
        Ok(hermitian_from_connection(&connection_from_stencil(&center.states, &states)))
    }

    /// `max_j ‖κ̇(s_j) G_τ(κ(s_j)) − G_s(s_j)‖` over grid points where `κ̇ ≥ min_rate`,
    /// with `G_s` the stored frames. Both sides are the same geometric object.
    pub fn reparametrization_g_deviation(&self, kappa: &Kappa, min_rate: f64) -> Result<f64> {
        let frac = self.options.stencil_fraction;
        let grid = self.grid();
        let worst = (0..grid.len())
            .into_par_iter()
            .filter(|&j| kappa.rate(grid[j]) >= min_rate)
            .map(|j| {
                let g_tau = self.time_parametrized_g(kappa, j, frac).map_err(|e| e.at_s(grid[j]))?;
                Ok((g_tau * Complex64::new(kappa.rate(grid[j]), 0.0) - &self.frames[j].g).norm())
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(worst.into_iter().fold(0.0, f64::max))
    }

    /// Maps instantaneous-frame amplitudes at `s` into the computational basis.
    pub fn to_computational(&self, s: f64, psi: &CMatrix) -> Result<CMatrix> {
        Ok(self.basis.v(s)?.map(|x| Complex64::new(x, 0.0)) * psi)
    }
}

/// One row of the anneal-time sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub t_f: f64,
    pub fidelity_1q: f64,
    pub fidelity_2q: Option<f64>,
}

/// End-of-anneal fidelity versus `t_f` (runs in parallel).
pub fn tf_sweep(one: &StaticSolution, two: Option<&StaticSolution>, t_f_list: &[f64], opts: &OdeOptions) -> Result<Vec<SweepRow>> {
    t_f_list
        .par_iter()
        .map(|&t_f| {
            let fidelity_1q = one.end_fidelity(t_f, opts)?;
            let fidelity_2q = two.map(|sol| sol.end_fidelity(t_f, opts)).transpose()?;
            Ok(SweepRow { t_f, fidelity_1q, fidelity_2q })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stencils_differentiate_quadratics() {
        let f = |s: f64| 3.0 * s * s - s;
        for s in [0.0, 0.5, 1.0] {
            let d: f64 = stencil(s, 0.01).iter().map(|&(o, w)| w * (f(s + o) - f(s))).sum();
            assert!((d - (6.0 * s - 1.0)).abs() < 1e-10, "{s}: {d}");
        }
    }
}
