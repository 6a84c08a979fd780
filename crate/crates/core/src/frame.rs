//! Effective Hamiltonian in the instantaneous eigenbasis and the geometric term.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::discretization::SparseOperator;
use crate::eigen::dot;
use crate::error::{Error, Result};
use crate::spectral::SpectralSlice;

pub type CMatrix = DMatrix<Complex64>;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Per-s objects of the low-energy frame.
#[derive(Debug, Clone)]
pub struct EffectiveFrame {
    pub s: f64,
    /// Diagonal of `H̃`, GHz.
    pub h_tilde: Vec<f64>,
    /// Geometric term `G_ab = ⟨a| i∂_s |b⟩`.
    pub g: CMatrix,
    pub kappa_dot: f64,
}

impl EffectiveFrame {
    pub fn levels(&self) -> usize {
        self.h_tilde.len()
    }

    /// The real antisymmetric `M = −i G`.
    pub fn connection(&self) -> DMatrix<f64> {
        self.g.map(|z| z.im)
    }
}

/// `G = i M` from a real connection, projected onto its Hermitian part.
pub fn hermitian_from_connection(m: &DMatrix<f64>) -> CMatrix {
    let anti = (m - m.transpose()) * 0.5;
    anti.map(|x| I * x)
}

/// `M_ab = ⟨a| Σ_k w_k |b(s_k)⟩` for a derivative stencil over aligned states.
///
/// The weights must sum to zero; differences are taken against the centre so
/// that constant states give an exactly vanishing result.
pub fn connection_from_stencil(center: &[Vec<f64>], stencil: &[(f64, &[Vec<f64>])]) -> DMatrix<f64> {
    let k = center.len();
    let n = center[0].len();
    let mut m = DMatrix::zeros(k, k);
    for b in 0..k {
        let mut d = vec![0.0; n];
        for (w, states) in stencil {
            for ((di, x), x0) in d.iter_mut().zip(&states[b]).zip(&center[b]) {
                *di += w * (x - x0);
            }
        }
        for a in 0..k {
            m[(a, b)] = dot(&center[a], &d);
        }
    }
    m
}

/// Three-point first-derivative weights at `x[j]` for a non-uniform grid,
/// central inside and one-sided second order at the ends.
pub fn derivative_weights(x: &[f64], j: usize) -> Result<[(usize, f64); 3]> {
    let n = x.len();
    if n < 3 || j >= n {
        return Err(Error::InvalidInput(format!("need 3 grid points and j < {n}, got j = {j}")));
    }
    Ok(if j == 0 {
        let (h1, h2) = (x[1] - x[0], x[2] - x[1]);
        [
            (0, -(2.0 * h1 + h2) / (h1 * (h1 + h2))),
            (1, (h1 + h2) / (h1 * h2)),
            (2, -h1 / (h2 * (h1 + h2))),
        ]
    } else if j == n - 1 {
        let (h1, h2) = (x[n - 2] - x[n - 3], x[n - 1] - x[n - 2]);
        [
            (n - 3, h2 / (h1 * (h1 + h2))),
            (n - 2, -(h1 + h2) / (h1 * h2)),
            (n - 1, (2.0 * h2 + h1) / (h2 * (h1 + h2))),
        ]
    } else {
        let (h1, h2) = (x[j] - x[j - 1], x[j + 1] - x[j]);
        [
            (j - 1, -h2 / (h1 * (h1 + h2))),
            (j, (h2 - h1) / (h1 * h2)),
            (j + 1, h1 / (h2 * (h1 + h2))),
        ]
    })
}

/// `G(s_j)` by second-order differences of the gauge-fixed states on the grid.
pub fn geometric_term(slices: &[SpectralSlice], j: usize) -> Result<CMatrix> {
    let s: Vec<f64> = slices.iter().map(|x| x.s).collect();
    let w = derivative_weights(&s, j)?;
    let stencil: Vec<(f64, &[Vec<f64>])> = w.iter().map(|&(k, c)| (c, slices[k].states.as_slice())).collect();
    let m = connection_from_stencil(&slices[j].states, &stencil);
    Ok(hermitian_from_connection(&m))
}

/// Independent `G_ab = i⟨a|∂_s H|b⟩ / (E_b − E_a)`, zero diagonal.
pub fn hellmann_feynman_g(slice: &SpectralSlice, dh_ds: &SparseOperator, degeneracy: f64) -> Result<CMatrix> {
    let k = slice.levels();
    let mut m = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            let spacing = slice.energies[b] - slice.energies[a];
            if spacing.abs() < degeneracy {
                return Err(Error::DegenerateSubspace { lower: a.min(b), upper: a.max(b), spacing: spacing.abs() });
            }
            m[(a, b)] = dh_ds.bilinear(&slice.states[a], &slice.states[b]) / spacing;
        }
    }
    Ok(m.map(|x| I * x))
}

/// `H^eff = t_f κ̇ H̃ − G`, or only the dynamical part when `include_g` is false.
pub fn effective_hamiltonian(frame: &EffectiveFrame, t_f: f64, include_g: bool) -> CMatrix {
    let k = frame.levels();
    let mut h = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        k,
        frame.h_tilde.iter().map(|&e| Complex64::new(t_f * frame.kappa_dot * e, 0.0)),
    ));
    if include_g {
        h -= &frame.g;
    }
    h
}

/// Max over the grid of the Frobenius distance between two frame sequences' `G`.
pub fn reparametrization_check(a: &[EffectiveFrame], b: &[EffectiveFrame]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!("frame sequences differ in length ({} vs {})", a.len(), b.len())));
    }
    let mut worst: f64 = 0.0;
    for (fa, fb) in a.iter().zip(b) {
        if (fa.s - fb.s).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("frames sampled at different s ({} vs {})", fa.s, fb.s)));
        }
        worst = worst.max((&fa.g - &fb.g).norm());
    }
    Ok(worst)
}

/// Largest `|Re G_ab|`, `|G_aa|` and `‖G − G†‖` over a frame.
pub fn structure_defects(g: &CMatrix) -> (f64, f64, f64) {
    let re = g.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    let diag = (0..g.nrows()).map(|a| g[(a, a)].norm()).fold(0.0, f64::max);
    let herm = (g - g.adjoint()).norm();
    (re, diag, herm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn rotation_slice(s: f64, theta: f64) -> SpectralSlice {
        let (c, sn) = (theta.cos(), theta.sin());
        SpectralSlice {
            s,
            energies: vec![0.0, 1.0],
            states: vec![vec![c, sn], vec![-sn, c]],
            aux: BTreeMap::new(),
            margin: 1.0,
            residuals: vec![0.0; 2],
            operator_norm: 1.0,
        }
    }

    #[test]
    fn static_states_have_no_connection() {
        let slices: Vec<_> = (0..6).map(|j| rotation_slice(j as f64 / 5.0, 0.3)).collect();
        for j in 0..6 {
            assert_eq!(geometric_term(&slices, j).unwrap().norm(), 0.0);
        }
    }

    #[test]
    fn rotation_family_second_order() {
        let theta = |s: f64| 0.8 * s * s + 0.3 * s;
        let theta_dot = |s: f64| 1.6 * s + 0.3;
        let err = |n: usize| {
            let slices: Vec<_> = (0..n).map(|j| j as f64 / (n - 1) as f64).map(|s| rotation_slice(s, theta(s))).collect();
            (0..n)
                .map(|j| {
                    let g = geometric_term(&slices, j).unwrap();
                    // ⟨0|∂1⟩ = −θ̇, so G₀₁ = −iθ̇
                    (g[(0, 1)] - Complex64::new(0.0, -theta_dot(slices[j].s))).norm()
                })
                .fold(0.0, f64::max)
        };
        let (coarse, fine) = (err(21), err(41));
        assert!(coarse < 5e-2);
        assert!(coarse / fine > 3.5, "{coarse} {fine}");
    }

    #[test]
    fn nonuniform_weights_are_exact_for_quadratics() {
        let x = [0.0, 0.1, 0.25, 0.3, 0.7, 1.0];
        let f = |t: f64| 2.0 * t * t - t + 0.5;
        for j in 0..x.len() {
            let d: f64 = derivative_weights(&x, j).unwrap().iter().map(|&(k, w)| w * f(x[k])).sum();
            assert!((d - (4.0 * x[j] - 1.0)).abs() < 1e-11);
        }
    }

    #[test]
    fn hellmann_feynman_trivial_cases() {
        let slice = rotation_slice(0.0, 0.4);
        let zero = SparseOperator::diagonal_operator(&[0.0, 0.0]).unwrap();
        assert_eq!(hellmann_feynman_g(&slice, &zero, 1e-8).unwrap().norm(), 0.0);
        // H itself in the site basis: off-diagonals vanish in its eigenbasis
        let (c, s) = (0.4f64.cos(), 0.4f64.sin());
        let h = SparseOperator::from_triplets(
            2,
            vec![(0, 0, s * s), (0, 1, -c * s), (1, 0, -c * s), (1, 1, c * c)],
            true,
        )
        .unwrap();
        assert!(hellmann_feynman_g(&slice, &h, 1e-8).unwrap().norm() < 1e-15);
    }

    #[test]
    fn effective_hamiltonian_parts() {
        let g = hermitian_from_connection(&DMatrix::from_row_slice(2, 2, &[0.0, 0.5, -0.5, 0.0]));
        let frame = EffectiveFrame { s: 0.5, h_tilde: vec![-1.0, 2.0], g, kappa_dot: 1.0 };
        let h = effective_hamiltonian(&frame, 5.0, false);
        assert_eq!(h[(0, 0)], Complex64::new(-5.0, 0.0));
        assert_eq!(h[(1, 1)], Complex64::new(10.0, 0.0));
        assert_eq!(h[(0, 1)], Complex64::new(0.0, 0.0));
        let hg = effective_hamiltonian(&frame, 5.0, true);
        assert!((&hg - hg.adjoint()).norm() < 1e-15);
        assert_eq!(hg[(0, 1)], Complex64::new(0.0, -0.5));
        // adiabatic dominance
        let big = effective_hamiltonian(&frame, 1e6, true);
        let dyn_part = effective_hamiltonian(&frame, 1e6, false);
        assert!((&big - &dyn_part).norm() / big.norm() < 1e-6);
        let (re, diag, herm) = structure_defects(&frame.g);
        assert_eq!((re, diag, herm), (0.0, 0.0, 0.0));
    }
}
