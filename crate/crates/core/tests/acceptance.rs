//! Acceptance criteria 1–10 on the full-size presets.
//!
//! Prints one PASS/FAIL line per criterion. Criteria listed in `KNOWN_RED` are
//! reported as failures but do not fail the target; any other failure does.

use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;

use geoanneal_core::circuit::{control_fluxes, BiasSource};
use geoanneal_core::dynamics::OdeOptions;
use geoanneal_core::eigen::dense_spectrum;
use geoanneal_core::experiment::{
    dynamics_runs, gap_metric, gy_metric, gy_rows, hellmann_feynman_metric, structure_metric, HellmannFeynmanMetric, HF_FLOOR, write_sweep,
    REPARAM_MIN_RATE,
};
use geoanneal_core::pipeline::{solve_static, tf_sweep, zero_bias_stage, PipelineOptions, StaticSolution};
use geoanneal_core::system::System;
use geoanneal_core::{Kappa, Schedule};

/// Criteria that fail for documented reasons (see the README).
const KNOWN_RED: [u32; 3] = [2, 8, 10];

const SWEEP: [f64; 7] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];
/// Smallest sweep `t_f` from which both end fidelities must exceed 0.999.
const ADIABATIC_THRESHOLD: f64 = 50.0;

// regression anchors from the first verified run
const GY_SUP: f64 = 0.088358;
const GY_SUP_AT: f64 = 58.0 / 99.0;
const FIDELITY_1Q_TF5: f64 = 0.999805;
const FIDELITY_2Q_TF5: f64 = 0.994062;
const GROUND_1Q_TF5: f64 = 0.570787;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Suite {
    one: StaticSolution,
    one_seconds: f64,
    two: StaticSolution,
    two_seconds: f64,
    ode: OdeOptions,
    /// `(label, ‖ψ‖ drift)` of every propagation run by the suite.
    drifts: Mutex<Vec<(String, f64)>>,
}

impl Suite {
    fn record(&self, label: String, drift: f64) {
        self.drifts.lock().unwrap().push((label, drift));
    }
}

fn one_qubit(points: usize) -> (System, Schedule) {
    (System::cshunt_preset(), Schedule::uniform(points, (2.9, 2.2)))
}

fn two_qubit(points: usize) -> (System, Schedule) {
    (System::cjj_pair_preset(), Schedule::uniform(points, (2.6, 1.9)))
}

fn timed_solve(system: &System, schedule: &Schedule) -> (StaticSolution, f64) {
    let clock = Instant::now();
    let sol = solve_static(system, schedule, &PipelineOptions::default()).expect("static pipeline");
    (sol, clock.elapsed().as_secs_f64())
}

fn criterion_1(suite: &Suite) -> Outcome {
    let g = gap_metric(&suite.one);
    outcome(
        g.max_deviation <= 0.025 && g.in_middle_third() && suite.one_seconds < 120.0,
        format!(
            "max |Δ/2√(A²+B²) − 1| = {:.5} at s = {:.3} (middle third: {}), static pipeline {:.1} s",
            g.max_deviation,
            g.at_s,
            g.in_middle_third(),
            suite.one_seconds
        ),
    )
}

fn criterion_2(suite: &Suite) -> Outcome {
    let g = gap_metric(&suite.two);
    let per_level: Vec<String> = (0..3)
        .map(|a| {
            let worst = suite.two.gap_deviations().iter().map(|d| d[a].abs()).fold(0.0, f64::max);
            format!("level {}: {:.4}", a + 1, worst)
        })
        .collect();
    outcome(
        g.max_deviation <= 0.025 && suite.two_seconds < 1800.0,
        format!(
            "max deviation {:.4} (level {}, s = {:.3}); {}; static pipeline {:.0} s",
            g.max_deviation,
            g.level,
            g.at_s,
            per_level.join(", "),
            suite.two_seconds
        ),
    )
}

fn criterion_3(suite: &Suite) -> Outcome {
    let coarse = gy_metric(&suite.one).unwrap();
    let (sys, sched) = one_qubit(2 * suite.one.schedule.s_grid.len() - 1);
    let (fine_sol, _) = timed_solve(&sys, &sched);
    let abs_err = |sol: &StaticSolution| {
        gy_rows(sol).unwrap().iter().map(|r| (r.gy_analytic - r.gy_direct).abs()).fold(0.0, f64::max)
    };
    let ratio = abs_err(&suite.one) / abs_err(&fine_sol);
    let rows = gy_rows(&suite.one).unwrap();
    let peak = rows.iter().max_by(|a, b| a.gy_direct.abs().total_cmp(&b.gy_direct.abs())).unwrap();
    let anchor_ok = (peak.gy_direct.abs() - GY_SUP).abs() <= 1e-3 * GY_SUP && (peak.s - GY_SUP_AT).abs() < 1e-9;
    outcome(
        coarse <= 1e-3 && (3.0..=5.0).contains(&ratio) && anchor_ok,
        format!(
            "closed form vs transformed G^C: {coarse:.2e} of sup|g^y|; refinement ratio {ratio:.2} (expect 4); \
             sup|g^y| = {:.8} at s = {:.4} (anchor {GY_SUP} at {GY_SUP_AT})",
            peak.gy_direct.abs(),
            peak.s
        ),
    )
}

fn criterion_4(suite: &Suite) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, sol) in [("1q", &suite.one), ("2q", &suite.two)] {
        let m = structure_metric(sol).unwrap();
        let real = m.g_real.max(m.gc_real);
        let diag = m.g_diagonal.max(m.gc_diagonal);
        let herm = m.g_hermiticity.max(m.gc_hermiticity);
        let even = m.g_even_over_odd.max(m.gc_even_over_odd);
        pass &= real <= 1e-9 && diag <= 1e-9 && herm <= 1e-9 && even <= 1e-8;
        parts.push(format!(
            "{name}: Re {real:.1e}, diag {diag:.1e}, G−G† {herm:.1e}, even/odd Y {even:.1e} \
             (unprojected stencil relative to its peak: symmetric part {:.1e}, diagonal {:.1e})",
            m.raw_symmetric, m.raw_diagonal
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_5(suite: &Suite) -> Outcome {
    let a = hellmann_feynman_metric(&suite.one);
    let b = hellmann_feynman_metric(&suite.two);
    let show = |m: &HellmannFeynmanMetric| {
        format!("{:.2e} (strict per-entry {:.2e}, {} entries below the floor)", m.relative, m.strict, m.below_floor)
    };
    outcome(
        a.relative <= 1e-3 && b.relative <= 1e-3,
        format!(
            "worst off-diagonal error relative to max(|G^HF_ab|, {HF_FLOOR:e}·max|G^HF|): 1q {}, 2q {}",
            show(&a),
            show(&b)
        ),
    )
}

fn criterion_6(suite: &Suite) -> Outcome {
    let sol = &suite.one;
    let scale = sol.frames.iter().map(|f| f.g.norm()).fold(0.0, f64::max);
    let dg = sol.reparametrization_g_deviation(&Kappa::Smoothstep, REPARAM_MIN_RATE).unwrap();
    let mut worst_state: f64 = 0.0;
    for t_f in [1.0, 5.0, 20.0] {
        worst_state = worst_state.max(sol.reparametrized_final_deviation(t_f, Kappa::Smoothstep, &suite.ode).unwrap());
    }
    let bound = 10.0 * suite.ode.rtol;
    outcome(
        dg / scale <= 1e-6 && worst_state <= bound,
        format!(
            "‖κ̇ G_τ − G_s‖ / max‖G‖ = {:.2e} (κ̇ ≥ {REPARAM_MIN_RATE}); final states (t_f = 1, 5, 20) differ by {:.2e} ≤ {bound:.0e}",
            dg / scale,
            worst_state
        ),
    )
}

fn criterion_7(suite: &Suite) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, sol) in [("1q", &suite.one), ("2q", &suite.two)] {
        let runs = dynamics_runs(sol, 5.0, &suite.ode).unwrap();
        for t in [&runs.instantaneous, &runs.with_g, &runs.without_g] {
            suite.record(format!("{name} t_f=5 {:?} G={}", t.basis, t.include_g), t.norm_drift());
        }
        let d = runs.summary(sol).unwrap().frame_agreement;
        pass &= d <= 1e-6;
        parts.push(format!("{name}: {d:.2e}"));
    }
    outcome(pass, format!("max final-population difference between frames at t_f = 5: {}", parts.join(", ")))
}

fn criterion_8(suite: &Suite) -> Outcome {
    let rows = tf_sweep(&suite.one, Some(&suite.two), &SWEEP, &suite.ode).unwrap();
    for sol in [&suite.one, &suite.two] {
        for &t_f in &SWEEP {
            let (a, b, _) = sol.fidelity_runs(t_f, &suite.ode).unwrap();
            suite.record(format!("{}q sweep t_f={t_f} G", sol.levels() / 2), a.norm_drift());
            suite.record(format!("{}q sweep t_f={t_f} noG", sol.levels() / 2), b.norm_drift());
        }
    }
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    write_sweep(&rows, &dir).unwrap();

    let at = |t: f64| rows.iter().find(|r| r.t_f == t).unwrap();
    let (f1, f2) = (at(5.0).fidelity_1q, at(5.0).fidelity_2q.unwrap());
    let measurable_1q = f1 < 0.999;
    let measurable_2q = f2 < 0.999;
    // 1 − F ≤ (∫‖G^C‖ ds)² bounds how far the with-G and without-G runs can separate
    let gy = gy_rows(&suite.one).unwrap();
    let integral: f64 = gy.windows(2).map(|w| 0.5 * (w[0].gy_direct.abs() + w[1].gy_direct.abs()) * (w[1].s - w[0].s)).sum();

    let adiabatic = rows.iter().filter(|r| r.t_f >= ADIABATIC_THRESHOLD).all(|r| r.fidelity_1q > 0.999 && r.fidelity_2q.unwrap() > 0.999);
    let largest: Vec<_> = rows.iter().filter(|r| r.t_f >= ADIABATIC_THRESHOLD).collect();
    let ordering = largest.iter().all(|r| r.fidelity_2q.unwrap() <= r.fidelity_1q);
    let turn = rows.iter().enumerate().min_by(|a, b| a.1.fidelity_1q.total_cmp(&b.1.fidelity_1q)).unwrap().0;
    let monotone_tail = rows[turn..].windows(2).all(|w| w[1].fidelity_1q >= w[0].fidelity_1q);

    let runs = dynamics_runs(&suite.one, 5.0, &suite.ode).unwrap();
    let ground = runs.summary(&suite.one).unwrap().end_ground_population;
    let long = suite.one.run(500.0, geoanneal_core::dynamics::Basis::Instantaneous, true, &suite.ode).unwrap();
    suite.record("1q t_f=500 Instantaneous G".into(), long.norm_drift());
    let ground_500 = long.last()[(0, 0)].norm_sqr();

    let anchors = (f1 - FIDELITY_1Q_TF5).abs() <= 1e-6
        && (f2 - FIDELITY_2Q_TF5).abs() <= 1e-6
        && (ground - GROUND_1Q_TF5).abs() <= 1e-6;
    let table: Vec<String> =
        rows.iter().map(|r| format!("{}: {:.6}/{:.6}", r.t_f, r.fidelity_1q, r.fidelity_2q.unwrap())).collect();
    outcome(
        measurable_1q && measurable_2q && adiabatic && ordering && monotone_tail && anchors && ground_500 > 0.999,
        format!(
            "t_f = 5 end fidelity 1q {f1:.8} (< 0.999: {measurable_1q}; bound from ∫|g^y| ds = {integral:.4}: ≥ {:.6}), \
             2q {f2:.8} (< 0.999: {measurable_2q}); > 0.999 for t_f ≥ {ADIABATIC_THRESHOLD}: {adiabatic}; \
             2q ≤ 1q at t_f ≥ {ADIABATIC_THRESHOLD}: {ordering}; 1q tail monotone: {monotone_tail}; \
             1q ground population t_f = 5: {ground:.8}, t_f = 500: {ground_500:.6}; anchors: {anchors}; \
             sweep 1q/2q [{}] written to {}",
            1.0 - integral * integral,
            table.join(", "),
            dir.join("sweep.csv").display()
        ),
    )
}

fn criterion_9() -> Outcome {
    let clock = Instant::now();
    let mut worst: f64 = 0.0;
    for (sys, sched) in [
        { let (s, c) = one_qubit(5); (s.with_mesh_points(80), c) },
        { let (s, c) = two_qubit(5); (s.with_mesh_points(40), c) },
    ] {
        let (_, _, table) = zero_bias_stage(&sys, &sched, &PipelineOptions::default()).unwrap();
        for &s in &[0.0, 0.3, 0.5, 0.6, 0.8, 1.0] {
            let slice = sys.solve(s, &sched, BiasSource::Table(&table)).unwrap();
            let (c, _) = control_fluxes(s, &sched, BiasSource::Table(&table)).unwrap();
            let dense = dense_spectrum(&sys.hamiltonian(c).unwrap());
            for (e, d) in slice.energies.iter().zip(&dense) {
                worst = worst.max(((e - d) / d).abs());
            }
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-10 && secs < 60.0,
        format!("iterative vs dense at L = 80 (1q) and 40² (2q): worst relative {worst:.2e}, {secs:.1} s"),
    )
}

fn criterion_10(suite: &Suite) -> Outcome {
    let drifts = suite.drifts.lock().unwrap().clone();
    let (worst_label, worst) = drifts.iter().max_by(|a, b| a.1.total_cmp(&b.1)).cloned().unwrap();
    let over: Vec<&str> = drifts.iter().filter(|d| d.1 > 1e-8).map(|d| d.0.as_str()).collect();
    let ortho = [&suite.one, &suite.two]
        .iter()
        .flat_map(|sol| sol.slices.iter().map(|s| s.orthonormality_error()))
        .fold(0.0, f64::max);
    // same worst run at 10× tighter tolerances
    let tight = OdeOptions { rtol: suite.ode.rtol / 10.0, atol: suite.ode.atol / 10.0, ..suite.ode };
    let tf = worst_label.split("t_f=").nth(1).and_then(|x| x.split(' ').next()).and_then(|x| x.parse().ok()).unwrap_or(100.0);
    let sol = if worst_label.starts_with("2q") { &suite.two } else { &suite.one };
    let tight_drift = sol.fidelity_runs(tf, &tight).unwrap().0.norm_drift();
    outcome(
        over.is_empty() && ortho <= 1e-10,
        format!(
            "{} propagations, worst ‖ψ‖ drift {worst:.2e} ({worst_label}), {} above 1e-8 [{}]; \
             same run at 10× tighter tolerance: {tight_drift:.2e}; worst slice orthonormality {ortho:.2e}",
            drifts.len(),
            over.len(),
            over.join("; ")
        ),
    )
}

fn main() {
    let clock = Instant::now();
    let (sys, sched) = one_qubit(100);
    let (one, one_seconds) = timed_solve(&sys, &sched);
    let (sys, sched) = two_qubit(100);
    let (two, two_seconds) = timed_solve(&sys, &sched);
    let suite = Suite { one, one_seconds, two, two_seconds, ode: OdeOptions::default(), drifts: Mutex::new(Vec::new()) };

    let criteria: Vec<(u32, &str, Box<dyn Fn(&Suite) -> Outcome>)> = vec![
        (1, "gap consistency, one qubit", Box::new(criterion_1)),
        (2, "gap consistency, two qubits", Box::new(criterion_2)),
        (3, "closed-form g^y identity", Box::new(criterion_3)),
        (4, "geometric-term structure", Box::new(criterion_4)),
        (5, "Hellmann-Feynman oracle", Box::new(criterion_5)),
        (6, "reparametrization invariance", Box::new(criterion_6)),
        (7, "end-of-anneal frame agreement", Box::new(criterion_7)),
        (8, "geometric effect on dynamics", Box::new(criterion_8)),
        (9, "iterative vs dense eigensolver", Box::new(|_: &Suite| criterion_9())),
        (10, "unitarity and orthonormality", Box::new(criterion_10)),
    ];
    let mut unexpected = Vec::new();
    for (id, title, run) in criteria {
        let o = run(&suite);
        let tag = match (o.pass, KNOWN_RED.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected.push(id);
                "FAIL"
            }
        };
        println!("criterion {id:>2} {tag}: {title}: {}", o.detail);
    }
    println!("acceptance suite finished in {:.0} s", clock.elapsed().as_secs_f64());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
