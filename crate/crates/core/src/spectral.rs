//! Per-s spectral slices and sign-gauge tracking across the anneal.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::eigen::dot;
use crate::error::{Error, Result};

/// Lowest levels of the circuit at one value of `s`.
#[derive(Debug, Clone)]
pub struct SpectralSlice {
    pub s: f64,
    /// Ascending energies, GHz.
    pub energies: Vec<f64>,
    /// Real unit eigenvectors on the mesh.
    pub states: Vec<Vec<f64>>,
    /// Named per-state expectation values, e.g. `phi` → `⟨a|φ|a⟩`.
    pub aux: BTreeMap<String, Vec<f64>>,
    /// Distance from the highest tracked level to the first excluded one.
    pub margin: f64,
    /// Absolute eigen-residuals `‖H v − E v‖`.
    pub residuals: Vec<f64>,
    /// Norm bound of the operator the slice came from.
    pub operator_norm: f64,
}

impl SpectralSlice {
    pub fn levels(&self) -> usize {
        self.energies.len()
    }

    pub fn gap(&self) -> f64 {
        self.energies[1] - self.energies[0]
    }

    /// `max_ab |⟨a|b⟩ − δ_ab|`.
    pub fn orthonormality_error(&self) -> f64 {
        let k = self.levels();
        let mut worst: f64 = 0.0;
        for a in 0..k {
            for b in a..k {
                let d = dot(&self.states[a], &self.states[b]) - if a == b { 1.0 } else { 0.0 };
                worst = worst.max(d.abs());
            }
        }
        worst
    }

    /// Worst eigen-residual relative to the operator norm.
    pub fn relative_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max) / self.operator_norm
    }

    pub fn flip(&mut self, a: usize) {
        self.states[a].iter_mut().for_each(|x| *x = -*x);
    }
}

/// Minimum `|overlap|` accepted when following a state between neighbouring slices.
pub const OVERLAP_THRESHOLD: f64 = 0.5;

/// Sign of the largest-magnitude component (first one on ties).
pub fn anchor_sign(v: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for &x in v {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Overlap of state `a` between slices `j` and `j + 1`, raising if tracking is ambiguous.
fn tracked_overlap(prev: &SpectralSlice, next: &SpectralSlice, a: usize) -> Result<f64> {
    let o = dot(&prev.states[a], &next.states[a]);
    if o.abs() < OVERLAP_THRESHOLD {
        return Err(Error::AmbiguousOverlap { state: a, from: prev.s, to: next.s, overlap: o });
    }
    Ok(o)
}

/// Flips state signs so the `s = 0` anchor has positive dominant components and
/// consecutive overlaps are positive.
pub fn fix_gauge(mut slices: Vec<SpectralSlice>) -> Result<Vec<SpectralSlice>> {
    let Some(first) = slices.first_mut() else {
        return Ok(slices);
    };
    for a in 0..first.levels() {
        if anchor_sign(&first.states[a]) < 0.0 {
            first.flip(a);
        }
    }
    for j in 1..slices.len() {
        let (head, tail) = slices.split_at_mut(j);
        let prev = &head[j - 1];
        let next = &mut tail[0];
        if next.levels() != prev.levels() {
            return Err(Error::InvalidInput("slices track different numbers of levels".into()));
        }
        for a in 0..next.levels() {
            if tracked_overlap(prev, next, a)? < 0.0 {
                next.flip(a);
            }
        }
    }
    Ok(slices)
}

/// Solves every grid point (in parallel), refines intervals with ambiguous
/// overlaps by bisection up to `max_refinements` times, then fixes the gauge.
pub fn spectral_sweep<F>(solve: F, s_grid: &[f64], max_refinements: usize) -> Result<Vec<SpectralSlice>>
where
    F: Fn(f64) -> Result<SpectralSlice> + Sync,
{
    let solve_at = |s: f64| solve(s).map_err(|e| e.at_s(s));
    let mut slices: Vec<SpectralSlice> = s_grid.par_iter().map(|&s| solve_at(s)).collect::<Result<_>>()?;
    let mut depth = vec![0usize; slices.len().saturating_sub(1)];
    loop {
        let mut bad = None;
        for j in 0..slices.len().saturating_sub(1) {
            for a in 0..slices[j].levels() {
                if let Err(e) = tracked_overlap(&slices[j], &slices[j + 1], a) {
                    bad = Some((j, e));
                    break;
                }
            }
            if bad.is_some() {
                break;
            }
        }
        let Some((j, err)) = bad else { break };
        if depth[j] >= max_refinements {
            return Err(err);
        }
        let mid = 0.5 * (slices[j].s + slices[j + 1].s);
        let slice = solve_at(mid)?;
        slices.insert(j + 1, slice);
        let d = depth[j] + 1;
        depth[j] = d;
        depth.insert(j + 1, d);
    }
    fix_gauge(slices)
}
