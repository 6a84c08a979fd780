//! Flux-qubit potentials, kinetic coefficients and control-flux schedules.
//!
//! All energies are linear frequencies in GHz. Fluxes are in units of the
//! reduced flux quantum, so every control flux is an angle in radians.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::NaturalSpline;

/// Qubit circuit family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Capacitively shunted flux qubit (single qubit only).
    CShunt,
    /// Compound-Josephson-junction rf-SQUID qubit, optionally inductively coupled.
    Cjj,
}

/// Sign convention for the `cos(φ_cjj / 2)` factor of the C-shunt potential.
///
/// `AsPrinted` evaluates `-2 E_J (cos(φ_cjj/2) cos(φ_x + 2φ) + cos φ)` literally,
/// which is a single well at the default schedule. `Remapped` applies
/// `φ_cjj ↦ 2π − φ_cjj` (flipping the sign of `cos(φ_cjj/2)`), which produces
/// the double-well anneal whose gap closes mid-schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FluxConvention {
    AsPrinted,
    #[default]
    Remapped,
}

impl FluxConvention {
    pub fn sign(self) -> f64 {
        match self {
            FluxConvention::AsPrinted => 1.0,
            FluxConvention::Remapped => -1.0,
        }
    }
}

/// Physical energies of a qubit family, in GHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitParams {
    /// `E_S` for the C-shunt qubit, `E_C` for the CJJ qubit.
    pub kinetic_energy: f64,
    pub josephson_energy: f64,
    /// `E_L`, CJJ only.
    #[serde(default)]
    pub inductive_energy: Option<f64>,
    /// `E_M`, CJJ coupling only.
    #[serde(default)]
    pub mutual_energy: Option<f64>,
    /// The constant `E_M^-1 E_L^2` of the C-shunt bias rule.
    #[serde(default)]
    pub cshunt_scale: Option<f64>,
}

impl CircuitParams {
    pub fn cshunt_preset() -> Self {
        Self {
            kinetic_energy: 3.03,
            josephson_energy: 86.2,
            inductive_energy: None,
            mutual_energy: None,
            cshunt_scale: Some(1.0e4),
        }
    }

    pub fn cjj_preset() -> Self {
        Self {
            kinetic_energy: 3.44,
            josephson_energy: 684.0,
            inductive_energy: Some(570.0),
            mutual_energy: Some(3.98),
            cshunt_scale: None,
        }
    }

    pub fn validate(&self, family: Family) -> Result<()> {
        fn positive(key: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::validation(key, format!("must be finite and positive, got {v}")))
            }
        }
        fn required(key: &str, v: Option<f64>) -> Result<f64> {
            v.ok_or_else(|| Error::validation(key, "required for this circuit family"))
        }
        positive("circuit.kinetic_energy", self.kinetic_energy)?;
        positive("circuit.josephson_energy", self.josephson_energy)?;
        for (key, v) in [
            ("circuit.inductive_energy", self.inductive_energy),
            ("circuit.mutual_energy", self.mutual_energy),
            ("circuit.cshunt_scale", self.cshunt_scale),
        ] {
            if let Some(v) = v {
                positive(key, v)?;
            }
        }
        match family {
            Family::CShunt => {
                required("circuit.cshunt_scale", self.cshunt_scale)?;
            }
            Family::Cjj => {
                required("circuit.inductive_energy", self.inductive_energy)?;
                required("circuit.mutual_energy", self.mutual_energy)?;
            }
        }
        Ok(())
    }

    /// Coefficient of `-∂²_φ` in the single-flux Hamiltonian.
    pub fn kinetic_coefficient(&self, family: Family) -> f64 {
        match family {
            Family::CShunt => self.kinetic_energy / 8.0,
            Family::Cjj => self.kinetic_energy / 4.0,
        }
    }

    fn el(&self) -> f64 {
        self.inductive_energy.unwrap_or(f64::NAN)
    }

    fn em(&self) -> f64 {
        self.mutual_energy.unwrap_or(f64::NAN)
    }

    /// Proportionality constant between the bias flux and the persistent
    /// current, `E_M E_L^-2` (or the reciprocal of `cshunt_scale`).
    pub fn bias_factor(&self, family: Family) -> f64 {
        match family {
            Family::CShunt => 1.0 / self.cshunt_scale.unwrap_or(f64::NAN),
            Family::Cjj => self.em() / (self.el() * self.el()),
        }
    }
}

/// Reparametrization `τ = κ(s)` of the physical time fraction.
#[derive(Debug, Clone)]
pub enum Kappa {
    Identity,
    /// `κ(s) = s²(3 − 2s)`.
    Smoothstep,
    /// Monotone tabulated map; `κ̇` comes from spline differentiation.
    Tabulated(NaturalSpline),
}

impl Kappa {
    pub fn tabulated(s: &[f64], tau: &[f64]) -> Result<Self> {
        let spline = NaturalSpline::new(s, tau)?;
        let k = Kappa::Tabulated(spline);
        k.validate()?;
        Ok(k)
    }

    pub fn value(&self, s: f64) -> f64 {
        match self {
            Kappa::Identity => s,
            Kappa::Smoothstep => s * s * (3.0 - 2.0 * s),
            Kappa::Tabulated(sp) => sp.eval(s),
        }
    }

    pub fn rate(&self, s: f64) -> f64 {
        match self {
            Kappa::Identity => 1.0,
            Kappa::Smoothstep => 6.0 * s * (1.0 - s),
            Kappa::Tabulated(sp) => sp.derivative(s),
        }
    }

    /// `s = κ⁻¹(τ)` by bisection; `κ` is monotone on `[0, 1]`.
    pub fn inverse(&self, tau: f64) -> f64 {
        if let Kappa::Identity = self {
            return tau;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.value(mid) < tau {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    pub fn validate(&self) -> Result<()> {
        if (self.value(0.0)).abs() > 1e-12 || (self.value(1.0) - 1.0).abs() > 1e-12 {
            return Err(Error::validation("schedule.kappa", "must satisfy κ(0) = 0 and κ(1) = 1"));
        }
        // κ̇ may vanish at the endpoints (smoothstep) but not inside.
        let probes = 1000;
        for i in 1..probes {
            let s = i as f64 / probes as f64;
            if !(self.rate(s) > 0.0) {
                return Err(Error::validation(
                    "schedule.kappa",
                    format!("κ̇ must be positive on (0, 1); κ̇({s}) = {}", self.rate(s)),
                ));
            }
        }
        Ok(())
    }
}

/// Annealing schedule: s-grid, linear CJJ-flux ramp, reparametrization and anneal time.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub s_grid: Vec<f64>,
    /// `(φ_cjj(0), φ_cjj(1))`.
    pub cjj_flux: (f64, f64),
    pub kappa: Kappa,
    /// Dimensionless anneal time in units of ns/2π.
    pub t_f: Option<f64>,
}

impl Schedule {
    pub fn uniform(points: usize, cjj_flux: (f64, f64)) -> Self {
        Self { s_grid: uniform_grid(points), cjj_flux, kappa: Kappa::Identity, t_f: None }
    }

    pub fn with_t_f(mut self, t_f: f64) -> Self {
        self.t_f = Some(t_f);
        self
    }

    pub fn with_kappa(mut self, kappa: Kappa) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.s_grid;
        if g.len() < 3 {
            return Err(Error::validation("schedule.points", "need at least 3 grid points"));
        }
        if g[0] != 0.0 || *g.last().unwrap() != 1.0 {
            return Err(Error::validation("schedule.s_grid", "must start at 0 and end at 1"));
        }
        if g.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::validation("schedule.s_grid", "must be strictly increasing"));
        }
        if !self.cjj_flux.0.is_finite() || !self.cjj_flux.1.is_finite() {
            return Err(Error::validation("schedule.cjj_flux", "endpoints must be finite"));
        }
        if let Some(t) = self.t_f {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::validation("schedule.t_f", "must be finite and non-negative"));
            }
        }
        self.kappa.validate()
    }

    pub fn cjj_flux_at(&self, s: f64) -> f64 {
        self.cjj_flux.0 * (1.0 - s) + self.cjj_flux.1 * s
    }

    pub fn cjj_flux_rate(&self) -> f64 {
        self.cjj_flux.1 - self.cjj_flux.0
    }
}

pub fn uniform_grid(points: usize) -> Vec<f64> {
    let n = points.max(2);
    let mut g: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    g[n - 1] = 1.0;
    g
}

/// Local fields and couplings of the target Ising problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsingSpec {
    pub local_fields: Vec<f64>,
    #[serde(default)]
    pub couplings: Vec<(usize, usize, f64)>,
}

impl IsingSpec {
    pub fn single() -> Self {
        Self { local_fields: vec![1.0], couplings: vec![] }
    }

    pub fn figure2() -> Self {
        Self { local_fields: vec![1.0, 0.4], couplings: vec![(0, 1, -0.7)] }
    }

    pub fn qubits(&self) -> usize {
        self.local_fields.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.qubits();
        if n == 0 {
            return Err(Error::validation("ising.local_fields", "need at least one qubit"));
        }
        for &(i, j, v) in &self.couplings {
            if i == j {
                return Err(Error::validation("ising.couplings", format!("self-coupling ({i}, {j})")));
            }
            if i >= n || j >= n {
                return Err(Error::validation(
                    "ising.couplings",
                    format!("index out of range in ({i}, {j}) for {n} qubits"),
                ));
            }
            if !v.is_finite() {
                return Err(Error::validation("ising.couplings", "coupling must be finite"));
            }
        }
        if self.local_fields.iter().any(|h| !h.is_finite()) {
            return Err(Error::validation("ising.local_fields", "fields must be finite"));
        }
        Ok(())
    }

    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.couplings
            .iter()
            .filter(|&&(a, b, _)| (a == i && b == j) || (a == j && b == i))
            .map(|c| c.2)
            .sum()
    }
}

/// Instantaneous control fluxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Controls {
    pub cjj: f64,
    /// Bias flux `φ_x`.
    pub bias: f64,
}

/// Derivatives of the control fluxes with respect to `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlRates {
    pub cjj: f64,
    pub bias: f64,
}

/// How the C-shunt bias flux is derived from the persistent-current tables.
#[derive(Debug, Clone)]
pub enum CShuntBiasRule {
    /// Use `I_p ≡ 𝓘_p`, so `φ_x = 𝓘_p / scale`.
    Shared,
    /// Independent `I_p(s)` table, `φ_x = I_p² / (scale · 𝓘_p)`.
    Table(NaturalSpline),
}

/// Tabulated persistent currents from the zero-bias pass.
#[derive(Debug, Clone)]
pub struct PersistentCurrentTable {
    pub family: Family,
    /// `I_p(s)` for CJJ, `𝓘_p(s)` for C-shunt.
    pub current: NaturalSpline,
    pub cshunt_rule: CShuntBiasRule,
    pub bias_factor: f64,
}

impl PersistentCurrentTable {
    pub fn bias(&self, s: f64) -> Result<(f64, f64)> {
        let cur = self.current.eval(s);
        let dcur = self.current.derivative(s);
        match (self.family, &self.cshunt_rule) {
            (Family::Cjj, _) => Ok((self.bias_factor * cur, self.bias_factor * dcur)),
            (Family::CShunt, rule) => {
                let (ip, dip) = match rule {
                    CShuntBiasRule::Shared => (cur, dcur),
                    CShuntBiasRule::Table(sp) => (sp.eval(s), sp.derivative(s)),
                };
                if cur == 0.0 || !cur.is_normal() {
                    return Err(Error::DivisionByZero(format!(
                        "C-shunt bias rule divides by the persistent current, which is {cur} at s={s}"
                    )));
                }
                let phi = self.bias_factor * ip * ip / cur;
                let dphi = self.bias_factor * (2.0 * ip * dip * cur - ip * ip * dcur) / (cur * cur);
                Ok((phi, dphi))
            }
        }
    }
}

/// Where the bias flux comes from.
#[derive(Debug, Clone, Copy)]
pub enum BiasSource<'a> {
    /// The zero-bias pass that builds the persistent-current table.
    Zero,
    Table(&'a PersistentCurrentTable),
    /// Table required but not available.
    Missing,
}

pub fn control_fluxes(s: f64, sched: &Schedule, bias: BiasSource<'_>) -> Result<(Controls, ControlRates)> {
    let cjj = sched.cjj_flux_at(s);
    let cjj_rate = sched.cjj_flux_rate();
    let (phi, dphi) = match bias {
        BiasSource::Zero => (0.0, 0.0),
        BiasSource::Table(t) => t.bias(s)?,
        BiasSource::Missing => return Err(Error::MissingTable),
    };
    Ok((Controls { cjj, bias: phi }, ControlRates { cjj: cjj_rate, bias: dphi }))
}

/// C-shunt potential `-2E_J(ξ cos(φ_cjj/2) cos(φ_x + 2φ) + cos φ)`, `ξ = ±1` per convention.
pub fn cshunt_potential(phi: f64, c: Controls, params: &CircuitParams, conv: FluxConvention) -> f64 {
    let ej = params.josephson_energy;
    -2.0 * ej * (conv.sign() * (0.5 * c.cjj).cos() * (c.bias + 2.0 * phi).cos() + phi.cos())
}

/// `∂_s` of the C-shunt potential at fixed `φ`.
pub fn cshunt_potential_rate(
    phi: f64,
    c: Controls,
    r: ControlRates,
    params: &CircuitParams,
    conv: FluxConvention,
) -> f64 {
    let ej = params.josephson_energy;
    let half = 0.5 * c.cjj;
    let arg = c.bias + 2.0 * phi;
    -2.0 * ej * conv.sign() * (-0.5 * half.sin() * r.cjj * arg.cos() - half.cos() * arg.sin() * r.bias)
}

/// First-order bias operator of the C-shunt qubit, `2E_J ξ cos(φ_cjj/2) sin 2φ`.
pub fn cshunt_current_operator(phi: f64, cjj: f64, params: &CircuitParams, conv: FluxConvention) -> f64 {
    2.0 * params.josephson_energy * conv.sign() * (0.5 * cjj).cos() * (2.0 * phi).sin()
}

/// CJJ potential `2E_J cos φ cos(φ_cjj/2) + E_L (φ − h φ_x)² / 2`.
pub fn cjj_potential(phi: f64, c: Controls, h: f64, params: &CircuitParams) -> f64 {
    let d = phi - h * c.bias;
    2.0 * params.josephson_energy * phi.cos() * (0.5 * c.cjj).cos() + 0.5 * params.el() * d * d
}

pub fn cjj_potential_rate(phi: f64, c: Controls, r: ControlRates, h: f64, params: &CircuitParams) -> f64 {
    let d = phi - h * c.bias;
    -params.josephson_energy * phi.cos() * (0.5 * c.cjj).sin() * r.cjj - params.el() * d * h * r.bias
}

/// Inductive coupling `-J E_M (φ1 − φ_x)(φ2 − φ_x)`.
pub fn coupling_potential(phi1: f64, phi2: f64, c: Controls, j12: f64, params: &CircuitParams) -> f64 {
    -j12 * params.em() * (phi1 - c.bias) * (phi2 - c.bias)
}

pub fn coupling_potential_rate(phi1: f64, phi2: f64, c: Controls, r: ControlRates, j12: f64, params: &CircuitParams) -> f64 {
    j12 * params.em() * r.bias * ((phi2 - c.bias) + (phi1 - c.bias))
}
