//! Fixtures shared by the criterion benches.

use geoanneal_core::circuit::{control_fluxes, BiasSource, Controls};
use geoanneal_core::pipeline::{solve_static, PipelineOptions, StaticSolution};
use geoanneal_core::system::System;
use geoanneal_core::Schedule;

/// C-shunt qubit at `points` mesh nodes with its usual flux ramp.
pub fn cshunt(points: usize) -> (System, Schedule) {
    (System::cshunt_preset().with_mesh_points(points), Schedule::uniform(40, (2.9, 2.2)))
}

/// Coupled CJJ pair at `points` nodes per axis.
pub fn cjj_pair(points: usize) -> (System, Schedule) {
    (System::cjj_pair_preset().with_mesh_points(points), Schedule::uniform(20, (2.6, 1.9)))
}

/// Unbiased controls at `s`, enough to exercise assembly and the eigensolver.
pub fn controls(schedule: &Schedule, s: f64) -> Controls {
    control_fluxes(s, schedule, BiasSource::Zero).expect("zero bias is always available").0
}

/// Static solution for propagation benches.
pub fn static_solution(system: &System, schedule: &Schedule) -> StaticSolution {
    solve_static(system, schedule, &PipelineOptions::default()).expect("bench fixture solves")
}
