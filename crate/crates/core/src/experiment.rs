//! Orchestration: runs a configured experiment, writes CSV tables and a JSON manifest.
//!
//! Every CSV starts with a header row whose column names carry their unit in
//! brackets. Energies are GHz, `t_f` is ns/2π, everything else is dimensionless.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::computational::pauli_decompose;
use crate::config::{Experiment, RunConfig};
use crate::dynamics::{fidelity_series, populations, Basis, OdeOptions, Trajectory};
use crate::error::{Error, Result};
use crate::frame::{structure_defects, CMatrix};
use crate::pipeline::{solve_static, tf_sweep, PipelineOptions, StaticSolution, SweepRow};
use crate::system::System;
use crate::Kappa;

/// Largest gap-ratio deviation and where it occurs.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GapMetric {
    pub max_deviation: f64,
    pub at_s: f64,
    /// Level `a` of the ratio `(E_a − E_0)/(m_a − m_0)`.
    pub level: usize,
}

impl GapMetric {
    pub fn in_middle_third(&self) -> bool {
        (1.0 / 3.0..=2.0 / 3.0).contains(&self.at_s)
    }
}

pub fn gap_metric(sol: &StaticSolution) -> GapMetric {
    let mut m = GapMetric { max_deviation: 0.0, at_s: 0.0, level: 1 };
    for (dev, f) in sol.gap_deviations().iter().zip(&sol.frames) {
        for (a, d) in dev.iter().enumerate() {
            if d.abs() > m.max_deviation {
                m = GapMetric { max_deviation: d.abs(), at_s: f.s, level: a + 1 };
            }
        }
    }
    m
}

/// Worst structural defects of `G` and `G^C` over the grid.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct StructureMetric {
    pub g_real: f64,
    pub g_diagonal: f64,
    pub g_hermiticity: f64,
    pub g_even_over_odd: f64,
    pub gc_real: f64,
    pub gc_diagonal: f64,
    pub gc_hermiticity: f64,
    pub gc_even_over_odd: f64,
    /// `‖Σ c_P P − M‖` for the Pauli expansion of `G^C`.
    pub reconstruction: f64,
    /// Largest `|M_ab + M_ba| / 2` and `|M_aa|` of the unprojected stencil connection,
    /// relative to its largest entry over the grid.
    pub raw_symmetric: f64,
    pub raw_diagonal: f64,
}

fn even_over_odd(m: &CMatrix) -> Result<f64> {
    let p = pauli_decompose(m)?;
    let (even, odd) = (p.max_even_y(), p.max_odd_y());
    Ok(if even == 0.0 { 0.0 } else if odd == 0.0 { f64::INFINITY } else { even / odd })
}

pub fn structure_metric(sol: &StaticSolution) -> Result<StructureMetric> {
    let mut m = StructureMetric::default();
    for (f, gc) in sol.frames.iter().zip(&sol.g_computational) {
        let (re, diag, herm) = structure_defects(&f.g);
        m.g_real = m.g_real.max(re);
        m.g_diagonal = m.g_diagonal.max(diag);
        m.g_hermiticity = m.g_hermiticity.max(herm);
        m.g_even_over_odd = m.g_even_over_odd.max(even_over_odd(&f.g)?);
        let (re, diag, herm) = structure_defects(gc);
        m.gc_real = m.gc_real.max(re);
        m.gc_diagonal = m.gc_diagonal.max(diag);
        m.gc_hermiticity = m.gc_hermiticity.max(herm);
        m.gc_even_over_odd = m.gc_even_over_odd.max(even_over_odd(gc)?);
        m.reconstruction = m.reconstruction.max((pauli_decompose(gc)?.reconstruct() - gc).norm());
    }
    let scale = sol.raw_connection.iter().map(|raw| raw.amax()).fold(0.0, f64::max);
    if scale > 0.0 {
        for raw in &sol.raw_connection {
            let sym = ((raw + raw.transpose()) * 0.5).amax();
            m.raw_symmetric = m.raw_symmetric.max(sym / scale);
            m.raw_diagonal = m.raw_diagonal.max(raw.diagonal().amax() / scale);
        }
    }
    Ok(m)
}

/// Entries of `G^HF` below this fraction of its largest entry over the grid sit
/// at the eigensolver noise floor of the difference stencil.
pub const HF_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct HellmannFeynmanMetric {
    /// `max |G_ab − G^HF_ab| / max(|G^HF_ab|, HF_FLOOR · max|G^HF|)`.
    pub relative: f64,
    /// Same without the floor.
    pub strict: f64,
    /// Off-diagonal entries (over the grid) below the floor.
    pub below_floor: usize,
}

pub fn hellmann_feynman_metric(sol: &StaticSolution) -> HellmannFeynmanMetric {
    let peak = sol.hellmann_feynman.iter().map(|hf| hf.map(|x| x.norm()).max()).fold(0.0, f64::max);
    let floor = HF_FLOOR * peak;
    let mut m = HellmannFeynmanMetric::default();
    for (f, hf) in sol.frames.iter().zip(&sol.hellmann_feynman) {
        let n = f.levels();
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let (err, size) = ((f.g[(a, b)] - hf[(a, b)]).norm(), hf[(a, b)].norm());
                let strict = err / size;
                m.strict = m.strict.max(if strict.is_nan() { f64::INFINITY } else { strict });
                if size < floor {
                    m.below_floor += 1;
                }
                let r = err / size.max(floor);
                m.relative = m.relative.max(if r.is_nan() { f64::INFINITY } else { r });
            }
        }
    }
    m
}

/// Single qubit: `σ^y` coefficients of `G`, `G^C` and the closed form for the latter.
#[derive(Debug, Clone, Serialize)]
pub struct GyRow {
    pub s: f64,
    pub g: f64,
    pub gy_direct: f64,
    pub gy_analytic: f64,
}

pub fn gy_rows(sol: &StaticSolution) -> Result<Vec<GyRow>> {
    if sol.levels() != 2 {
        return Err(Error::BadDimension(sol.levels()));
    }
    sol.frames
        .iter()
        .zip(&sol.g_computational)
        .map(|(f, gc)| {
            let g = f.g[(1, 0)].im;
            Ok(GyRow { s: f.s, g, gy_direct: gc[(1, 0)].im, gy_analytic: sol.basis.analytic_gy(f.s, g)? })
        })
        .collect()
}

/// `max_s |g^y_analytic − g^y_direct| / max_s |g^y_direct|`.
pub fn gy_metric(sol: &StaticSolution) -> Result<f64> {
    let rows = gy_rows(sol)?;
    let scale = rows.iter().map(|r| r.gy_direct.abs()).fold(0.0, f64::max);
    let worst = rows.iter().map(|r| (r.gy_analytic - r.gy_direct).abs()).fold(0.0, f64::max);
    Ok(worst / scale)
}

/// The three runs behind the population and fidelity tables.
#[derive(Debug, Clone)]
pub struct DynamicsRuns {
    pub instantaneous: Trajectory,
    pub with_g: Trajectory,
    pub without_g: Trajectory,
    pub fidelity: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DynamicsSummary {
    pub t_f: f64,
    pub end_fidelity: f64,
    /// Final computational-basis populations with and without `G`.
    pub end_populations_g: Vec<f64>,
    pub end_populations_no_g: Vec<f64>,
    /// Final population of the instantaneous ground state.
    pub end_ground_population: f64,
    /// Largest final-population difference between the two frames.
    pub frame_agreement: f64,
    pub norm_drift: f64,
    pub steps: usize,
}

pub fn dynamics_runs(sol: &StaticSolution, t_f: f64, opts: &OdeOptions) -> Result<DynamicsRuns> {
    let instantaneous = sol.run(t_f, Basis::Instantaneous, true, opts)?;
    let with_g = sol.run(t_f, Basis::Computational, true, opts)?;
    let without_g = sol.run(t_f, Basis::Computational, false, opts)?;
    let fidelity = fidelity_series(&with_g, &without_g)?;
    Ok(DynamicsRuns { instantaneous, with_g, without_g, fidelity })
}

impl DynamicsRuns {
    pub fn summary(&self, sol: &StaticSolution) -> Result<DynamicsSummary> {
        let mapped = sol.to_computational(1.0, self.instantaneous.last())?;
        let from_inst: Vec<f64> = mapped.iter().map(|z| z.norm_sqr()).collect();
        let end_populations_g = populations(&self.with_g).pop().unwrap_or_default();
        let end_populations_no_g = populations(&self.without_g).pop().unwrap_or_default();
        let frame_agreement = from_inst.iter().zip(&end_populations_g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok(DynamicsSummary {
            t_f: self.with_g.t_f,
            end_fidelity: *self.fidelity.last().unwrap_or(&f64::NAN),
            end_populations_g,
            end_populations_no_g,
            end_ground_population: self.instantaneous.last()[(0, 0)].norm_sqr(),
            frame_agreement,
            norm_drift: self.norm_drift(),
            steps: self.instantaneous.steps + self.with_g.steps + self.without_g.steps,
        })
    }

    pub fn norm_drift(&self) -> f64 {
        [&self.instantaneous, &self.with_g, &self.without_g].iter().map(|t| t.norm_drift()).fold(0.0, f64::max)
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// Serialized CSV writer; returns the file name it wrote.
fn write_csv(dir: &Path, name: &str, header: &[String], rows: &[Vec<f64>]) -> Result<String> {
    let mut w = csv::Writer::from_path(dir.join(name))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|&x| num(x)))?;
    }
    w.flush()?;
    Ok(name.to_string())
}

fn with_suffix(name: &str, suffix: &str) -> String {
    match name.rsplit_once('.') {
        Some((stem, ext)) if !suffix.is_empty() => format!("{stem}_{suffix}.{ext}"),
        _ => name.to_string(),
    }
}

/// `spectrum.csv`: energies, profile functions, model energies and gap-ratio deviations.
pub fn write_spectrum(sol: &StaticSolution, dir: &Path, suffix: &str) -> Result<String> {
    let n = sol.levels();
    let mut header = vec!["s [1]".to_string()];
    header.extend((0..n).map(|a| format!("E{a} [GHz]")));
    header.extend(["A [GHz]".to_string(), "B [GHz]".to_string()]);
    header.extend((0..n).map(|a| format!("model_E{a} [GHz]")));
    header.extend((1..n).map(|a| format!("gap_ratio_dev_{a} [1]")));
    header.extend(["relative_residual [1]".to_string(), "margin [GHz]".to_string()]);
    let rows: Vec<Vec<f64>> = sol
        .slices
        .iter()
        .zip(&sol.model_energies)
        .zip(sol.gap_deviations())
        .map(|((sl, m), dev)| {
            let mut r = vec![sl.s];
            r.extend(&sl.energies);
            r.extend([sol.profiles.a_at(sl.s), sol.profiles.b_at(sl.s)]);
            r.extend(m);
            r.extend(dev);
            r.extend([sl.relative_residual(), sl.margin]);
            r
        })
        .collect();
    write_csv(dir, &with_suffix("spectrum.csv", suffix), &header, &rows)
}

/// `gap_ratio.csv`: `(E_a − E_0)/(m_a − m_0) − 1` per tracked level.
pub fn write_gap_ratio(sol: &StaticSolution, dir: &Path, suffix: &str) -> Result<String> {
    let n = sol.levels();
    let mut header = vec!["s [1]".to_string()];
    header.extend((1..n).map(|a| format!("Delta_{a}0 [GHz]")));
    header.extend((1..n).map(|a| format!("model_Delta_{a}0 [GHz]")));
    header.extend((1..n).map(|a| format!("ratio_dev_{a} [1]")));
    let rows: Vec<Vec<f64>> = sol
        .slices
        .iter()
        .zip(&sol.model_energies)
        .map(|(sl, m)| {
            let mut r = vec![sl.s];
            r.extend((1..n).map(|a| sl.energies[a] - sl.energies[0]));
            r.extend((1..n).map(|a| m[a] - m[0]));
            r.extend((1..n).map(|a| (sl.energies[a] - sl.energies[0]) / (m[a] - m[0]) - 1.0));
            r
        })
        .collect();
    write_csv(dir, &with_suffix("gap_ratio.csv", suffix), &header, &rows)
}

/// `frame.csv`: `κ̇`, `H̃` and the upper triangle of `Im G` next to its Hellmann-Feynman value.
pub fn write_frame(sol: &StaticSolution, dir: &Path, suffix: &str) -> Result<String> {
    let n = sol.levels();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let mut header = vec!["s [1]".to_string(), "kappa_dot [1]".to_string()];
    header.extend((0..n).map(|a| format!("E{a} [GHz]")));
    header.extend(pairs.iter().map(|(a, b)| format!("ImG_{a}{b} [1]")));
    header.extend(pairs.iter().map(|(a, b)| format!("ImG_hf_{a}{b} [1]")));
    let rows: Vec<Vec<f64>> = sol
        .frames
        .iter()
        .zip(&sol.hellmann_feynman)
        .map(|(f, hf)| {
            let mut r = vec![f.s, f.kappa_dot];
            r.extend(&f.h_tilde);
            r.extend(pairs.iter().map(|&(a, b)| f.g[(a, b)].im));
            r.extend(pairs.iter().map(|&(a, b)| hf[(a, b)].im));
            r
        })
        .collect();
    write_csv(dir, &with_suffix("frame.csv", suffix), &header, &rows)
}

/// `geometric.csv`: gaps and every odd-`Y` Pauli coefficient of `G^C`.
///
/// Labels list qubit 1 first, so `XY` is `σ^x_1 σ^y_2` and `YX` is `σ^y_1 σ^x_2`.
pub fn write_geometric(sol: &StaticSolution, dir: &Path, suffix: &str) -> Result<String> {
    let n = sol.levels();
    let labels: Vec<String> = crate::computational::pauli_labels(sol.system.qubits())
        .into_iter()
        .filter(|l| l.chars().filter(|&c| c == 'Y').count() % 2 == 1)
        .collect();
    let mut header = vec!["s [1]".to_string()];
    header.extend((1..n).map(|a| format!("Delta_{a}0 [GHz]")));
    header.extend(labels.iter().map(|l| format!("gC_{l} [1]")));
    let rows = sol
        .slices
        .iter()
        .zip(&sol.g_computational)
        .map(|(sl, gc)| {
            let p = pauli_decompose(gc)?;
            let mut r = vec![sl.s];
            r.extend((1..n).map(|a| sl.energies[a] - sl.energies[0]));
            r.extend(labels.iter().map(|l| p.get(l)));
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    write_csv(dir, &with_suffix("geometric.csv", suffix), &header, &rows)
}

/// `schedule.csv` (single qubit): `A`, `B`, `Δ`, `g`, and `g^y` direct and closed-form.
pub fn write_schedule(sol: &StaticSolution, dir: &Path) -> Result<String> {
    let header: Vec<String> =
        ["s [1]", "A [GHz]", "B [GHz]", "Delta [GHz]", "g [1]", "g_y [1]", "g_y_analytic [1]"].map(String::from).into();
    let rows: Vec<Vec<f64>> = gy_rows(sol)?
        .iter()
        .zip(&sol.slices)
        .map(|(r, sl)| vec![r.s, sol.profiles.a_at(r.s), sol.profiles.b_at(r.s), sl.gap(), r.g, r.gy_direct, r.gy_analytic])
        .collect();
    write_csv(dir, "schedule.csv", &header, &rows)
}

/// `dynamics.csv`: populations in both frames, the no-`G` run and the fidelity.
pub fn write_dynamics(runs: &DynamicsRuns, dir: &Path, suffix: &str) -> Result<String> {
    let n = runs.with_g.last().nrows();
    let mut header = vec!["s [1]".to_string()];
    header.extend((0..n).map(|a| format!("p_inst_{a} [1]")));
    header.extend((0..n).map(|a| format!("p_comp_G_{a} [1]")));
    header.extend((0..n).map(|a| format!("p_comp_noG_{a} [1]")));
    header.push("fidelity [1]".into());
    let (pi, pg, pn) = (populations(&runs.instantaneous), populations(&runs.with_g), populations(&runs.without_g));
    let rows: Vec<Vec<f64>> = (0..runs.with_g.s.len())
        .map(|k| {
            let mut r = vec![runs.with_g.s[k]];
            r.extend(&pi[k]);
            r.extend(&pg[k]);
            r.extend(&pn[k]);
            r.push(runs.fidelity[k]);
            r
        })
        .collect();
    write_csv(dir, &with_suffix("dynamics.csv", suffix), &header, &rows)
}

/// `sweep.csv`: end fidelity per `t_f`; the two-qubit column is empty without a companion.
pub fn write_sweep(rows: &[SweepRow], dir: &Path) -> Result<String> {
    let name = "sweep.csv";
    let mut w = csv::Writer::from_path(dir.join(name))?;
    w.write_record(["t_f [ns/2pi]", "fidelity_1q [1]", "fidelity_2q [1]"])?;
    for r in rows {
        w.write_record([num(r.t_f), num(r.fidelity_1q), r.fidelity_2q.map(num).unwrap_or_default()])?;
    }
    w.flush()?;
    Ok(name.to_string())
}

/// One pass/fail line of the invariants report.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub system: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

fn check(out: &mut Vec<Check>, system: &str, name: &str, value: f64, bound: f64) {
    out.push(Check { name: name.into(), system: system.into(), value, bound, pass: value <= bound });
}

fn label(sys: &System) -> String {
    format!("{:?}-{}q", sys.family, sys.qubits()).to_lowercase()
}

/// Static and dynamical invariants of one solution.
pub fn static_checks(sol: &StaticSolution) -> Result<Vec<Check>> {
    let name = label(&sol.system);
    let mut out = Vec::new();
    let ortho = sol.slices.iter().map(|s| s.orthonormality_error()).fold(0.0, f64::max);
    check(&mut out, &name, "spectrum.orthonormality", ortho, 1e-10);
    let res = sol.slices.iter().map(|s| s.relative_residual()).fold(0.0, f64::max);
    check(&mut out, &name, "spectrum.relative_residual", res, 1e-9);
    let gap = gap_metric(sol);
    check(&mut out, &name, "gap_ratio.max_deviation", gap.max_deviation, 0.025);
    out.push(Check {
        name: "gap_ratio.argmax_in_middle_third".into(),
        system: name.clone(),
        value: gap.at_s,
        bound: 2.0 / 3.0,
        pass: gap.in_middle_third(),
    });
    let st = structure_metric(sol)?;
    check(&mut out, &name, "G.real_part", st.g_real, 1e-9);
    check(&mut out, &name, "G.diagonal", st.g_diagonal, 1e-9);
    check(&mut out, &name, "G.hermiticity", st.g_hermiticity, 1e-9);
    check(&mut out, &name, "G.even_y_ratio", st.g_even_over_odd, 1e-8);
    check(&mut out, &name, "GC.real_part", st.gc_real, 1e-9);
    check(&mut out, &name, "GC.diagonal", st.gc_diagonal, 1e-9);
    check(&mut out, &name, "GC.hermiticity", st.gc_hermiticity, 1e-9);
    check(&mut out, &name, "GC.even_y_ratio", st.gc_even_over_odd, 1e-8);
    check(&mut out, &name, "GC.pauli_reconstruction", st.reconstruction, 1e-12);
    check(&mut out, &name, "G.hellmann_feynman_relative", hellmann_feynman_metric(sol).relative, 1e-3);
    if sol.levels() == 2 {
        check(&mut out, &name, "gy.closed_form_relative", gy_metric(sol)?, 1e-3);
    }
    Ok(out)
}

pub fn dynamics_checks(sol: &StaticSolution, runs: &DynamicsRuns) -> Result<Vec<Check>> {
    let name = label(&sol.system);
    let summary = runs.summary(sol)?;
    let mut out = Vec::new();
    check(&mut out, &name, "dynamics.norm_drift", summary.norm_drift, 1e-8);
    check(&mut out, &name, "dynamics.frame_agreement", summary.frame_agreement, 1e-6);
    let sums = [&runs.instantaneous, &runs.with_g, &runs.without_g]
        .iter()
        .flat_map(|t| populations(t))
        .map(|p| (p.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    check(&mut out, &name, "dynamics.population_sum", sums, 1e-8);
    check(&mut out, &name, "fidelity.initial", (1.0 - runs.fidelity[0]).abs(), 1e-12);
    Ok(out)
}

/// Geometric-term and final-state invariance under the smoothstep reparametrization.
pub fn reparametrization_checks(sol: &StaticSolution, t_f: f64, opts: &OdeOptions) -> Result<Vec<Check>> {
    let name = label(&sol.system);
    let mut out = Vec::new();
    let scale = sol.frames.iter().map(|f| f.g.norm()).fold(0.0, f64::max);
    let dg = sol.reparametrization_g_deviation(&Kappa::Smoothstep, REPARAM_MIN_RATE)?;
    check(&mut out, &name, "reparametrization.g_relative", dg / scale, 1e-6);
    let dpsi = sol.reparametrized_final_deviation(t_f, Kappa::Smoothstep, opts)?;
    check(&mut out, &name, "reparametrization.final_state", dpsi, 10.0 * opts.rtol);
    Ok(out)
}

/// Grid points with `κ̇` below this are skipped: `G_τ` diverges where `κ̇ → 0`.
pub const REPARAM_MIN_RATE: f64 = 0.1;

#[derive(Debug, Clone, Serialize)]
pub struct InvariantReport {
    pub all_pass: bool,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SystemManifest {
    pub label: String,
    pub mesh_points: usize,
    pub dimension: usize,
    pub domain: (f64, f64),
    pub s_points: usize,
    pub s_points_after_refinement: usize,
    pub levels: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Tolerances {
    pub eigen_tol: f64,
    pub degeneracy: f64,
    pub stencil_fraction: f64,
    pub rtol: f64,
    pub atol: f64,
    pub remove_trace: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub experiment: String,
    pub config_sha256: String,
    pub systems: Vec<SystemManifest>,
    pub tolerances: Tolerances,
    pub t_f: Option<f64>,
    pub t_f_list: Vec<f64>,
    pub files: Vec<String>,
    pub stage_seconds: BTreeMap<String, f64>,
    pub wall_seconds: f64,
    /// Present when the run included the invariants report.
    pub invariants_pass: Option<bool>,
}

/// What a run should produce. `Experiment` presets map onto combinations of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Spectrum,
    Frame,
    Dynamics,
    Sweep,
    Verify,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Spectrum => "spectrum",
            Stage::Frame => "frame",
            Stage::Dynamics => "dynamics",
            Stage::Sweep => "sweep",
            Stage::Verify => "verify",
        }
    }
}

fn stages_for(experiment: Experiment) -> Vec<Stage> {
    match experiment {
        Experiment::Figure1 | Experiment::Figure2 => vec![Stage::Spectrum, Stage::Frame, Stage::Dynamics],
        Experiment::Figure3 => vec![Stage::Sweep],
        Experiment::Figure6 => vec![Stage::Spectrum],
        Experiment::Invariants => vec![Stage::Verify],
        Experiment::Custom => vec![Stage::Spectrum, Stage::Frame, Stage::Dynamics],
    }
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    files: Vec<String>,
    stage_seconds: BTreeMap<String, f64>,
    main: Option<StaticSolution>,
    companion: Option<StaticSolution>,
    invariants_pass: Option<bool>,
}

impl Runner<'_> {
    fn timed<T>(&mut self, key: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let clock = Instant::now();
        let out = f(self)?;
        *self.stage_seconds.entry(key.to_string()).or_default() += clock.elapsed().as_secs_f64();
        Ok(out)
    }

    fn main(&mut self) -> Result<&StaticSolution> {
        if self.main.is_none() {
            let sol = self.timed("static", |r| solve_static(&r.cfg.system, &r.cfg.schedule, &r.cfg.pipeline))?;
            self.main = Some(sol);
        }
        Ok(self.main.as_ref().unwrap())
    }

    fn companion(&mut self) -> Result<Option<&StaticSolution>> {
        if self.companion.is_none() {
            if let Some((sys, sched)) = self.cfg.companion.clone() {
                let opts: PipelineOptions = self.cfg.pipeline.clone();
                let sol = self.timed("static_companion", |_| solve_static(&sys, &sched, &opts))?;
                self.companion = Some(sol);
            }
        }
        Ok(self.companion.as_ref())
    }

    fn both(&mut self) -> Result<Vec<(&'static str, &StaticSolution)>> {
        self.main()?;
        self.companion()?;
        let mut v = vec![("", self.main.as_ref().unwrap())];
        if let Some(c) = self.companion.as_ref() {
            v.push(("companion", c));
        }
        Ok(v)
    }

    fn stage(&mut self, stage: Stage) -> Result<()> {
        let dir = self.dir.clone();
        match stage {
            Stage::Spectrum => {
                let mut files = Vec::new();
                for (suffix, sol) in self.both()? {
                    files.push(write_spectrum(sol, &dir, suffix)?);
                    files.push(write_gap_ratio(sol, &dir, suffix)?);
                }
                self.files.extend(files);
            }
            Stage::Frame => {
                let sol = self.main()?;
                let mut files = vec![write_frame(sol, &dir, "")?, write_geometric(sol, &dir, "")?];
                if sol.levels() == 2 {
                    files.push(write_schedule(sol, &dir)?);
                }
                self.files.extend(files);
            }
            Stage::Dynamics => {
                let t_f = self.cfg.require_t_f()?;
                let ode = self.cfg.ode;
                self.main()?;
                let runs = self.timed("dynamics", |r| dynamics_runs(r.main.as_ref().unwrap(), t_f, &ode))?;
                let f = write_dynamics(&runs, &dir, "")?;
                self.files.push(f);
            }
            Stage::Sweep => {
                let list = self.cfg.require_t_f_list()?.to_vec();
                let ode = self.cfg.ode;
                self.main()?;
                self.companion()?;
                let rows = self.timed("sweep", |r| tf_sweep(r.main.as_ref().unwrap(), r.companion.as_ref(), &list, &ode))?;
                let f = write_sweep(&rows, &dir)?;
                self.files.push(f);
            }
            Stage::Verify => {
                let report = self.timed("verify", |r| r.verify())?;
                self.invariants_pass = Some(report.all_pass);
                let name = "invariants.json";
                std::fs::write(dir.join(name), serde_json::to_string_pretty(&report)? + "\n")?;
                self.files.push(name.into());
            }
        }
        Ok(())
    }

    fn verify(&mut self) -> Result<InvariantReport> {
        let ode = self.cfg.ode;
        let t_f = self.cfg.schedule.t_f;
        let list = self.cfg.t_f_list.clone();
        let mut checks = Vec::new();
        for (i, (_, sol)) in self.both()?.into_iter().enumerate() {
            checks.extend(static_checks(sol)?);
            if let Some(t) = t_f {
                checks.extend(dynamics_checks(sol, &dynamics_runs(sol, t, &ode)?)?);
                if i == 0 {
                    checks.extend(reparametrization_checks(sol, t, &ode)?);
                }
            }
        }
        if let (Some(two), false) = (self.companion.as_ref(), list.is_empty()) {
            let one = self.main.as_ref().unwrap();
            if one.levels() == 2 && two.levels() == 4 {
                let t = list.iter().copied().fold(f64::NAN, f64::max);
                let rows = tf_sweep(one, Some(two), &[t], &ode)?;
                let r = &rows[0];
                out_ordering(&mut checks, r);
            }
        }
        Ok(InvariantReport { all_pass: checks.iter().all(|c| c.pass), checks })
    }
}

fn out_ordering(checks: &mut Vec<Check>, r: &SweepRow) {
    let two = r.fidelity_2q.unwrap_or(f64::NAN);
    checks.push(Check {
        name: format!("sweep.two_qubit_not_above_one_qubit_at_t_f={}", r.t_f),
        system: "both".into(),
        value: two - r.fidelity_1q,
        bound: 0.0,
        pass: two <= r.fidelity_1q,
    });
}

fn system_manifest(sol: &StaticSolution) -> Result<SystemManifest> {
    let mesh = sol.system.mesh()?;
    let q = sol.system.qubits();
    Ok(SystemManifest {
        label: label(&sol.system),
        mesh_points: sol.system.mesh_points,
        dimension: sol.system.mesh_points.pow(q as u32),
        domain: (mesh.lower, mesh.upper),
        s_points: sol.schedule.s_grid.len(),
        s_points_after_refinement: sol.slices.len(),
        levels: sol.levels(),
    })
}

/// Runs the given stages (or the experiment's default set) into `out`.
pub fn run_stages(cfg: &RunConfig, stages: Option<&[Stage]>, out: &Path, command: &str) -> Result<Manifest> {
    let clock = Instant::now();
    std::fs::create_dir_all(out).map_err(|e| Error::from(e).in_stage("output"))?;
    let stages = stages.map(|s| s.to_vec()).unwrap_or_else(|| stages_for(cfg.experiment));
    let mut runner = Runner {
        cfg,
        dir: out.to_path_buf(),
        files: Vec::new(),
        stage_seconds: BTreeMap::new(),
        main: None,
        companion: None,
        invariants_pass: None,
    };
    for stage in stages {
        runner.stage(stage).map_err(|e| e.in_stage(stage.name()))?;
    }
    let mut systems = Vec::new();
    for sol in runner.main.iter().chain(runner.companion.iter()) {
        systems.push(system_manifest(sol)?);
    }
    let mut files = runner.files;
    files.push("manifest.json".into());
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        experiment: cfg.experiment.name().into(),
        config_sha256: cfg.hash.clone(),
        systems,
        tolerances: Tolerances {
            eigen_tol: cfg.system.eigen.tol,
            degeneracy: cfg.system.eigen.degeneracy,
            stencil_fraction: cfg.pipeline.stencil_fraction,
            rtol: cfg.ode.rtol,
            atol: cfg.ode.atol,
            remove_trace: cfg.ode.remove_trace,
        },
        t_f: cfg.schedule.t_f,
        t_f_list: cfg.t_f_list.clone(),
        files,
        stage_seconds: runner.stage_seconds,
        wall_seconds: clock.elapsed().as_secs_f64(),
        invariants_pass: runner.invariants_pass,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")
        .map_err(|e| Error::from(e).in_stage("output"))?;
    Ok(manifest)
}

/// Runs the experiment selected in the config.
pub fn run_experiment(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    run_stages(cfg, None, out, "run")
}
