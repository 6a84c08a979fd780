//! A concrete circuit (family, energies, qubit count, mesh) that can be solved at any `s`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::circuit::{
    cjj_potential, cjj_potential_rate, control_fluxes, coupling_potential, coupling_potential_rate,
    cshunt_potential, cshunt_potential_rate, BiasSource, CircuitParams, ControlRates, Controls, Family,
    FluxConvention, IsingSpec, Schedule,
};
use crate::discretization::{assemble_1q, assemble_2q, Mesh, SparseOperator};
use crate::eigen::{dot, lowest_eigenpairs, lowest_eigenpairs_parity, EigenOptions};
use crate::error::{Error, Result};
use crate::spectral::SpectralSlice;

/// Default cap on the two-flux operator dimension.
pub const DEFAULT_DIMENSION_CAP: usize = 400_000;

#[derive(Debug, Clone)]
pub struct System {
    pub family: Family,
    pub params: CircuitParams,
    pub convention: FluxConvention,
    /// One local field per qubit; the C-shunt qubit ignores its field.
    pub ising: IsingSpec,
    /// Mesh points per flux axis.
    pub mesh_points: usize,
    /// Flux domain per axis; `None` picks the family default.
    pub domain: Option<(f64, f64)>,
    pub dimension_cap: usize,
    pub eigen: EigenOptions,
}

/// Mesh bounds used when none are configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: f64,
    pub upper: f64,
}

impl System {
    pub fn cshunt_preset() -> Self {
        Self {
            family: Family::CShunt,
            params: CircuitParams::cshunt_preset(),
            convention: FluxConvention::default(),
            ising: IsingSpec::single(),
            mesh_points: 600,
            domain: None,
            dimension_cap: DEFAULT_DIMENSION_CAP,
            eigen: EigenOptions::default(),
        }
    }

    pub fn cjj_pair_preset() -> Self {
        Self {
            family: Family::Cjj,
            params: CircuitParams::cjj_preset(),
            convention: FluxConvention::default(),
            ising: IsingSpec::figure2(),
            mesh_points: 200,
            domain: None,
            dimension_cap: DEFAULT_DIMENSION_CAP,
            eigen: EigenOptions::default(),
        }
    }

    pub fn with_mesh_points(mut self, points: usize) -> Self {
        self.mesh_points = points;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate(self.family)?;
        self.ising.validate()?;
        self.eigen.validate()?;
        match (self.family, self.qubits()) {
            (_, 1) => {}
            (Family::Cjj, 2) => {}
            (Family::CShunt, n) => {
                return Err(Error::validation("ising.local_fields", format!("C-shunt systems have one qubit, got {n}")))
            }
            (Family::Cjj, n) => {
                return Err(Error::validation("ising.local_fields", format!("CJJ systems support 1 or 2 qubits, got {n}")))
            }
        }
        if self.mesh_points < 3 {
            return Err(Error::validation("mesh.points", "need at least 3 points"));
        }
        self.mesh()?;
        Ok(())
    }

    pub fn qubits(&self) -> usize {
        self.ising.qubits()
    }

    /// Number of tracked levels, `2ⁿ`.
    pub fn levels(&self) -> usize {
        1 << self.qubits()
    }

    /// The same circuit reduced to a single qubit, used for the zero-bias pass.
    pub fn single_qubit(&self) -> System {
        let mut one = self.clone();
        one.ising = IsingSpec::single();
        if self.qubits() > 1 {
            one.mesh_points = self.mesh_points.max(600);
        }
        one
    }

    pub fn default_domain(&self) -> Domain {
        match self.family {
            Family::CShunt => Domain { lower: -PI, upper: PI },
            Family::Cjj => {
                // inductive wall above the full Josephson modulation plus 40 E_C
                let el = self.params.inductive_energy.unwrap_or(f64::NAN);
                let w = (2.0 * (4.0 * self.params.josephson_energy + 40.0 * self.params.kinetic_energy) / el).sqrt();
                Domain { lower: -w, upper: w }
            }
        }
    }

    pub fn mesh(&self) -> Result<Mesh> {
        let (lo, hi) = self.domain.unwrap_or_else(|| {
            let d = self.default_domain();
            (d.lower, d.upper)
        });
        Mesh::new(lo, hi, self.mesh_points)
    }

    fn field(&self, i: usize) -> f64 {
        match self.family {
            Family::CShunt => 1.0,
            Family::Cjj => self.ising.local_fields[i],
        }
    }

    fn single_potential(&self, phi: f64, c: Controls, i: usize) -> f64 {
        match self.family {
            Family::CShunt => cshunt_potential(phi, c, &self.params, self.convention),
            Family::Cjj => cjj_potential(phi, c, self.field(i), &self.params),
        }
    }

    fn single_rate(&self, phi: f64, c: Controls, r: ControlRates, i: usize) -> f64 {
        match self.family {
            Family::CShunt => cshunt_potential_rate(phi, c, r, &self.params, self.convention),
            Family::Cjj => cjj_potential_rate(phi, c, r, self.field(i), &self.params),
        }
    }

    pub fn hamiltonian(&self, c: Controls) -> Result<SparseOperator> {
        let mesh = self.mesh()?;
        let k = self.params.kinetic_coefficient(self.family);
        match self.qubits() {
            1 => assemble_1q(&mesh, k, |phi| self.single_potential(phi, c, 0)),
            _ => {
                let j12 = self.ising.coupling(0, 1);
                assemble_2q(
                    &mesh,
                    &mesh,
                    k,
                    |p| self.single_potential(p, c, 0),
                    |p| self.single_potential(p, c, 1),
                    |p1, p2| coupling_potential(p1, p2, c, j12, &self.params),
                    self.dimension_cap,
                )
            }
        }
    }

    /// `∂_s H` at fixed flux; the kinetic term does not depend on `s`.
    pub fn hamiltonian_rate(&self, c: Controls, r: ControlRates) -> Result<SparseOperator> {
        let mesh = self.mesh()?;
        let x = mesh.nodes();
        let diag: Vec<f64> = match self.qubits() {
            1 => x.iter().map(|&p| self.single_rate(p, c, r, 0)).collect(),
            _ => {
                let j12 = self.ising.coupling(0, 1);
                let mut d = Vec::with_capacity(x.len() * x.len());
                for &p1 in &x {
                    for &p2 in &x {
                        d.push(
                            self.single_rate(p1, c, r, 0)
                                + self.single_rate(p2, c, r, 1)
                                + coupling_potential_rate(p1, p2, c, r, j12, &self.params),
                        );
                    }
                }
                d
            }
        };
        SparseOperator::diagonal_operator(&diag)
    }

    /// Per-state flux expectations; `phi` for one qubit, `phi1`/`phi2` for two.
    fn expectations(&self, states: &[Vec<f64>]) -> Result<BTreeMap<String, Vec<f64>>> {
        let x = self.mesh()?.nodes();
        let mut aux = BTreeMap::new();
        match self.qubits() {
            1 => {
                aux.insert("phi".into(), states.iter().map(|v| weighted(v, |i| x[i])).collect());
            }
            _ => {
                let l = x.len();
                aux.insert("phi1".into(), states.iter().map(|v| weighted(v, |i| x[i / l])).collect());
                aux.insert("phi2".into(), states.iter().map(|v| weighted(v, |i| x[i % l])).collect());
            }
        }
        Ok(aux)
    }

    /// Lowest `2ⁿ` levels at `s`, plus one more to measure the spectral margin.
    pub fn solve(&self, s: f64, sched: &Schedule, bias: BiasSource<'_>) -> Result<SpectralSlice> {
        let (c, _) = control_fluxes(s, sched, bias)?;
        let h = self.hamiltonian(c)?;
        let k = self.levels();
        let mesh = self.mesh()?;
        let parity = c.bias == 0.0 && self.qubits() == 1 && mesh.is_symmetric();
        let mut pairs =
            if parity { lowest_eigenpairs_parity(&h, k + 1, &self.eigen)? } else { lowest_eigenpairs(&h, k + 1, &self.eigen)? };
        let margin = pairs.values[k] - pairs.values[k - 1];
        pairs.values.truncate(k);
        pairs.vectors.truncate(k);
        pairs.residuals.truncate(k);
        let aux = self.expectations(&pairs.vectors)?;
        Ok(SpectralSlice {
            s,
            energies: pairs.values,
            states: pairs.vectors,
            aux,
            margin,
            residuals: pairs.residuals,
            operator_norm: h.norm_bound(),
        })
    }

    /// Solve at `s` and sign-align the states to `reference`.
    pub fn solve_aligned(
        &self,
        s: f64,
        sched: &Schedule,
        bias: BiasSource<'_>,
        reference: &SpectralSlice,
    ) -> Result<SpectralSlice> {
        let mut slice = self.solve(s, sched, bias)?;
        align_to(&mut slice, reference)?;
        Ok(slice)
    }
}

fn weighted(v: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    v.iter().enumerate().map(|(i, x)| x * x * f(i)).sum()
}

/// Flips states of `slice` to overlap positively with `reference`.
pub fn align_to(slice: &mut SpectralSlice, reference: &SpectralSlice) -> Result<()> {
    for a in 0..slice.levels() {
        let o = dot(&slice.states[a], &reference.states[a]);
        if o.abs() < crate::spectral::OVERLAP_THRESHOLD {
            return Err(Error::AmbiguousOverlap { state: a, from: reference.s, to: slice.s, overlap: o });
        }
        if o < 0.0 {
            slice.flip(a);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cjj_default_domain() {
        let d = System::cjj_pair_preset().default_domain();
        let expected = (2.0f64 * (4.0 * 684.0 + 40.0 * 3.44) / 570.0).sqrt();
        assert!((d.upper - expected).abs() < 1e-12);
        assert_eq!(d.lower, -d.upper);
    }

    #[test]
    fn rejects_two_cshunt_qubits() {
        let mut sys = System::cshunt_preset();
        sys.ising = IsingSpec::figure2();
        assert!(sys.validate().is_err());
        assert!(System::cjj_pair_preset().validate().is_ok());
    }

    #[test]
    fn zero_bias_slice_has_opposite_currents() {
        let sys = System::cshunt_preset().with_mesh_points(200);
        let sched = Schedule::uniform(10, (2.9, 2.2));
        let slice = sys.solve(0.5, &sched, BiasSource::Zero).unwrap();
        assert_eq!(slice.levels(), 2);
        assert!(slice.gap() > 0.0 && slice.margin > 0.0);
        // parity eigenstates carry no net flux
        for p in &slice.aux["phi"] {
            assert!(p.abs() < 1e-12);
        }
    }

    #[test]
    fn rate_operator_matches_finite_difference() {
        let sys = System::cjj_pair_preset().with_mesh_points(12);
        let c = Controls { cjj: 2.3, bias: 0.01 };
        let r = ControlRates { cjj: -0.7, bias: 0.02 };
        let d = 1e-6;
        let hp = sys.hamiltonian(Controls { cjj: c.cjj + d * r.cjj, bias: c.bias + d * r.bias }).unwrap();
        let hm = sys.hamiltonian(Controls { cjj: c.cjj - d * r.cjj, bias: c.bias - d * r.bias }).unwrap();
        let rate = sys.hamiltonian_rate(c, r).unwrap();
        for i in 0..rate.dim() {
            let fd = (hp.get(i, i) - hm.get(i, i)) / (2.0 * d);
            assert!((fd - rate.get(i, i)).abs() < 1e-5 * fd.abs().max(1.0));
        }
    }
}
