//! Run configuration: a TOML file with nested sections, validated up front.
//!
//! ```toml
//! experiment = "figure1"
//!
//! [system]
//! kind = "cshunt_1q"
//!
//! [schedule]
//! points = 100
//! cjj_flux = [2.9, 2.2]
//! t_f = 5.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::circuit::{CircuitParams, CShuntBiasRule, Family, FluxConvention, IsingSpec, Kappa, Schedule};
use crate::dynamics::OdeOptions;
use crate::error::{Error, Result};
use crate::pipeline::PipelineOptions;
use crate::system::System;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Figure1,
    Figure2,
    Figure3,
    Figure6,
    Invariants,
    Custom,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Figure1 => "figure1",
            Experiment::Figure2 => "figure2",
            Experiment::Figure3 => "figure3",
            Experiment::Figure6 => "figure6",
            Experiment::Invariants => "invariants",
            Experiment::Custom => "custom",
        }
    }

    pub fn all() -> [Experiment; 6] {
        use Experiment::*;
        [Figure1, Figure2, Figure3, Figure6, Invariants, Custom]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    #[serde(rename = "cshunt_1q")]
    Cshunt1q,
    #[serde(rename = "cjj_2q")]
    Cjj2q,
    Custom,
}

impl SystemKind {
    fn default_flux(self) -> Option<(f64, f64)> {
        match self {
            SystemKind::Cshunt1q => Some((2.9, 2.2)),
            SystemKind::Cjj2q => Some((2.6, 1.9)),
            SystemKind::Custom => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaChoice {
    Identity,
    Smoothstep,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Experiment,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    system: RawSystem,
    #[serde(default)]
    circuit: Option<CircuitParams>,
    #[serde(default)]
    ising: Option<IsingSpec>,
    #[serde(default)]
    schedule: RawSchedule,
    #[serde(default)]
    mesh: RawMesh,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    companion: Option<RawCompanion>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    kind: SystemKind,
    #[serde(default)]
    family: Option<Family>,
    #[serde(default)]
    convention: Option<FluxConvention>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    points: Option<usize>,
    cjj_flux: Option<[f64; 2]>,
    kappa: Option<KappaChoice>,
    t_f: Option<f64>,
    t_f_list: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMesh {
    points: Option<usize>,
    bounds: Option<[f64; 2]>,
    dimension_cap: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    eigen_tol: Option<f64>,
    eigen_max_iter: Option<usize>,
    seed: Option<u64>,
    degeneracy: Option<f64>,
    dense_below: Option<usize>,
    stencil_fraction: Option<f64>,
    max_refinements: Option<usize>,
    rtol: Option<f64>,
    atol: Option<f64>,
    remove_trace: Option<bool>,
    max_steps: Option<usize>,
}

/// Second system run alongside the main one (the two-qubit curve of the sweep,
/// the second gap-ratio panel).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCompanion {
    kind: SystemKind,
    #[serde(default)]
    mesh_points: Option<usize>,
    #[serde(default)]
    cjj_flux: Option<[f64; 2]>,
}

/// A fully validated run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub kind: SystemKind,
    pub system: System,
    pub schedule: Schedule,
    pub t_f_list: Vec<f64>,
    pub pipeline: PipelineOptions,
    pub ode: OdeOptions,
    pub companion: Option<(System, Schedule)>,
    pub output_dir: Option<PathBuf>,
    /// Hex SHA-256 of the configuration text.
    pub hash: String,
}

pub const PRESETS: [(&str, &str); 6] = [
    ("figure1", include_str!("../presets/figure1.toml")),
    ("figure2", include_str!("../presets/figure2.toml")),
    ("figure3", include_str!("../presets/figure3.toml")),
    ("figure6", include_str!("../presets/figure6.toml")),
    ("invariants", include_str!("../presets/invariants.toml")),
    ("custom", include_str!("../presets/custom.toml")),
];

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Built-in preset by name (`figure1`, `figure2`, `figure3`, `figure6`, `invariants`, `custom`).
pub fn preset(name: &str) -> Result<RunConfig> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::validation("preset", format!("unknown preset `{name}`")))?;
    parse_config(text)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map(|r| line_column(text, r.start)).unwrap_or((0, 0));
        Error::Parse { line, column, message: e.message().to_string() }
    })?;
    let hash = hex::encode(Sha256::digest(text.as_bytes()));
    resolve(raw, hash)
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn base_system(kind: SystemKind, raw: &RawSystem, circuit: Option<CircuitParams>) -> Result<System> {
    let mut sys = match kind {
        SystemKind::Cshunt1q => System::cshunt_preset(),
        SystemKind::Cjj2q => System::cjj_pair_preset(),
        SystemKind::Custom => {
            let family = raw
                .family
                .ok_or_else(|| Error::validation("system.family", "required when system.kind = \"custom\""))?;
            let params = circuit
                .ok_or_else(|| Error::validation("circuit", "required when system.kind = \"custom\""))?;
            let mut s = match family {
                Family::CShunt => System::cshunt_preset(),
                Family::Cjj => System::cjj_pair_preset(),
            };
            s.params = params;
            s.ising = IsingSpec::single();
            s.mesh_points = 600;
            s
        }
    };
    if kind != SystemKind::Custom {
        if raw.family.is_some_and(|f| f != sys.family) {
            return Err(Error::validation("system.family", "conflicts with the preset kind"));
        }
        if let Some(p) = circuit {
            sys.params = p;
        }
    }
    if let Some(c) = raw.convention {
        sys.convention = c;
    }
    Ok(sys)
}

fn positive(key: &str, v: Option<f64>) -> Result<Option<f64>> {
    match v {
        Some(x) if !(x.is_finite() && x > 0.0) => Err(Error::validation(key, "must be finite and positive")),
        other => Ok(other),
    }
}

fn resolve(raw: RawConfig, hash: String) -> Result<RunConfig> {
    let kind = raw.system.kind;
    let mut system = base_system(kind, &raw.system, raw.circuit)?;
    if let Some(ising) = raw.ising.clone() {
        system.ising = ising;
        if system.qubits() > 1 && raw.mesh.points.is_none() {
            system.mesh_points = 200;
        }
    }
    if let Some(p) = raw.mesh.points {
        system.mesh_points = p;
    }
    if let Some([lo, hi]) = raw.mesh.bounds {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::validation("mesh.bounds", "need finite lower < upper"));
        }
        system.domain = Some((lo, hi));
    }
    if let Some(cap) = raw.mesh.dimension_cap {
        system.dimension_cap = cap;
    }

    let s = &raw.solver;
    if let Some(t) = positive("solver.eigen_tol", s.eigen_tol)? {
        system.eigen.tol = t;
    }
    if let Some(m) = s.eigen_max_iter {
        system.eigen.max_iter = m;
    }
    if let Some(seed) = s.seed {
        system.eigen.seed = seed;
    }
    if let Some(d) = positive("solver.degeneracy", s.degeneracy)? {
        system.eigen.degeneracy = d;
    }
    if let Some(d) = s.dense_below {
        system.eigen.dense_below = d;
    }
    system.validate()?;

    let mut pipeline = PipelineOptions { cshunt_rule: CShuntBiasRule::Shared, ..PipelineOptions::default() };
    if let Some(f) = s.stencil_fraction {
        if !(f > 0.0 && f <= 0.5) {
            return Err(Error::validation("solver.stencil_fraction", "must lie in (0, 0.5]"));
        }
        pipeline.stencil_fraction = f;
    }
    if let Some(m) = s.max_refinements {
        pipeline.max_refinements = m;
    }
    let mut ode = OdeOptions::default();
    if let Some(r) = s.rtol {
        ode.rtol = r;
    }
    if let Some(a) = s.atol {
        ode.atol = a;
    }
    if let Some(r) = s.remove_trace {
        ode.remove_trace = r;
    }
    if let Some(m) = s.max_steps {
        ode.max_steps = m;
    }
    ode.validate()?;

    let points = raw.schedule.points.unwrap_or(100);
    if points < 3 {
        return Err(Error::validation("schedule.points", "need at least 3 grid points"));
    }
    let flux = match raw.schedule.cjj_flux {
        Some([a, b]) => (a, b),
        None => kind
            .default_flux()
            .ok_or_else(|| Error::validation("schedule.cjj_flux", "required when system.kind = \"custom\""))?,
    };
    let mut schedule = Schedule::uniform(points, flux);
    if let Some(KappaChoice::Smoothstep) = raw.schedule.kappa {
        schedule.kappa = Kappa::Smoothstep;
    }
    schedule.t_f = raw.schedule.t_f;
    schedule.validate()?;
    let t_f_list = raw.schedule.t_f_list.clone().unwrap_or_default();
    if t_f_list.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::validation("schedule.t_f_list", "entries must be finite and non-negative"));
    }

    let companion = match &raw.companion {
        None => None,
        Some(c) => {
            if c.kind == SystemKind::Custom {
                return Err(Error::validation("companion.kind", "must be a preset kind (cshunt_1q or cjj_2q)"));
            }
            let mut sys = base_system(c.kind, &RawSystem { kind: c.kind, family: None, convention: None }, None)?;
            if let Some(p) = c.mesh_points {
                sys.mesh_points = p;
            }
            sys.eigen = system.eigen;
            sys.validate().map_err(|e| match e {
                Error::Validation { key, message } => Error::Validation { key: format!("companion.{key}"), message },
                other => other,
            })?;
            let flux = c.cjj_flux.map(|[a, b]| (a, b)).or(c.kind.default_flux()).unwrap();
            let mut sched = Schedule::uniform(points, flux);
            sched.kappa = schedule.kappa.clone();
            sched.t_f = schedule.t_f;
            Some((sys, sched))
        }
    };

    match raw.experiment {
        Experiment::Figure1 | Experiment::Figure2 | Experiment::Invariants if schedule.t_f.is_none() => {
            return Err(Error::validation("schedule.t_f", format!("required by the {} experiment", raw.experiment.name())));
        }
        Experiment::Figure3 if t_f_list.is_empty() => {
            return Err(Error::validation("schedule.t_f_list", "required by the figure3 experiment"));
        }
        Experiment::Figure2 if system.qubits() != 2 => {
            return Err(Error::validation("system.kind", "figure2 needs a two-qubit system"));
        }
        _ => {}
    }

    Ok(RunConfig {
        experiment: raw.experiment,
        kind,
        system,
        schedule,
        t_f_list,
        pipeline,
        ode,
        companion,
        output_dir: raw.output_dir,
        hash,
    })
}

impl RunConfig {
    /// The anneal time, or a validation error naming `schedule.t_f`.
    pub fn require_t_f(&self) -> Result<f64> {
        self.schedule.t_f.ok_or_else(|| Error::validation("schedule.t_f", "required for dynamics"))
    }

    pub fn require_t_f_list(&self) -> Result<&[f64]> {
        if self.t_f_list.is_empty() {
            Err(Error::validation("schedule.t_f_list", "required for a sweep"))
        } else {
            Ok(&self.t_f_list)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure1_preset_matches_caption() {
        let c = preset("figure1").unwrap();
        assert_eq!(c.system.family, Family::CShunt);
        assert_eq!(c.system.params.kinetic_energy, 3.03);
        assert_eq!(c.system.params.josephson_energy, 86.2);
        assert_eq!(c.schedule.cjj_flux, (2.9, 2.2));
        assert_eq!(c.schedule.t_f, Some(5.0));
        assert_eq!(c.system.mesh_points, 600);
        assert_eq!(c.schedule.s_grid.len(), 100);
    }

    #[test]
    fn figure2_preset_matches_caption() {
        let c = preset("figure2").unwrap();
        let p = c.system.params;
        assert_eq!((p.kinetic_energy, p.josephson_energy), (3.44, 684.0));
        assert_eq!((p.inductive_energy, p.mutual_energy), (Some(570.0), Some(3.98)));
        assert_eq!(c.system.ising, IsingSpec::figure2());
        assert_eq!(c.schedule.cjj_flux, (2.6, 1.9));
        assert_eq!(c.schedule.t_f, Some(5.0));
        assert_eq!(c.system.mesh_points, 200);
    }

    #[test]
    fn every_preset_parses() {
        for (name, _) in PRESETS {
            let c = preset(name).unwrap();
            assert_eq!(c.experiment.name(), name);
        }
        let c = preset("figure3").unwrap();
        assert_eq!(c.t_f_list, vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0]);
        assert_eq!(c.companion.as_ref().unwrap().0.qubits(), 2);
    }

    #[test]
    fn dynamics_without_t_f_is_rejected() {
        let e = parse_config("experiment = \"figure1\"\n[system]\nkind = \"cshunt_1q\"\n").unwrap_err();
        assert!(matches!(e, Error::Validation { ref key, .. } if key == "schedule.t_f"), "{e}");
        let c = parse_config("experiment = \"custom\"\n[system]\nkind = \"cshunt_1q\"\n").unwrap();
        assert!(matches!(c.require_t_f(), Err(Error::Validation { .. })));
    }

    #[test]
    fn unknown_keys_report_position() {
        let text = "experiment = \"custom\"\n[system]\nkind = \"cshunt_1q\"\n[mesh]\npoint = 10\n";
        match parse_config(text).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 5);
                assert!(message.contains("point"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_values_name_their_key() {
        let cases = [
            ("[mesh]\npoints = 2\n", "mesh.points"),
            ("[schedule]\npoints = 1\n", "schedule.points"),
            ("[solver]\nrtol = 0.5\n", "solver.rtol"),
            ("[solver]\nstencil_fraction = 0.0\n", "solver.stencil_fraction"),
            ("[ising]\nlocal_fields = [1.0]\ncouplings = [[0, 3, 1.0]]\n", "ising.couplings"),
            ("[schedule]\nt_f = -1.0\n", "schedule.t_f"),
        ];
        for (tail, want) in cases {
            let text = format!("experiment = \"custom\"\n[system]\nkind = \"cshunt_1q\"\n{tail}");
            match parse_config(&text) {
                Err(Error::Validation { key, .. }) => assert_eq!(key, want, "{tail}"),
                other => panic!("{tail}: {other:?}"),
            }
        }
    }

    #[test]
    fn custom_requires_family_and_circuit() {
        let e = parse_config("experiment = \"custom\"\n[system]\nkind = \"custom\"\n").unwrap_err();
        assert!(matches!(e, Error::Validation { ref key, .. } if key == "system.family"));
        let text = "experiment = \"custom\"\n[system]\nkind = \"custom\"\nfamily = \"cjj\"\n\
                    [circuit]\nkinetic_energy = 3.44\njosephson_energy = 684.0\ninductive_energy = 570.0\nmutual_energy = 3.98\n\
                    [schedule]\ncjj_flux = [2.6, 1.9]\n";
        let c = parse_config(text).unwrap();
        assert_eq!(c.system.qubits(), 1);
        assert_eq!(c.system.mesh_points, 600);
    }

    #[test]
    fn hash_tracks_text() {
        let a = parse_config("experiment = \"custom\"\n[system]\nkind = \"cshunt_1q\"\n").unwrap();
        let b = parse_config("experiment = \"custom\"\n[system]\nkind = \"cshunt_1q\"\n\n").unwrap();
        assert_eq!(a.hash.len(), 64);
        assert_ne!(a.hash, b.hash);
    }
}
