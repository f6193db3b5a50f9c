//! Figures of merit on Gaussian covariance matrices: occupation, logarithmic
//! negativity, EPR variance and quadrature squeezing.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gme::symplectic_form;
use crate::linalg::{self, Mat};
use crate::optim::nelder_mead;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub mean: DVector<f64>,
    pub sigma: Mat,
}

impl GaussianState {
    pub fn new(mean: DVector<f64>, sigma: Mat) -> Result<Self> {
        if mean.len() != sigma.nrows() || sigma.nrows() != sigma.ncols() || sigma.nrows() % 2 != 0 {
            return Err(Error::DimensionMismatch {
                context: "Gaussian state".into(),
                expected: sigma.nrows(),
                found: mean.len(),
            });
        }
        Ok(Self { mean, sigma })
    }

    /// Zero-mean state.
    pub fn centered(sigma: Mat) -> Self {
        let n = sigma.nrows();
        Self {
            mean: DVector::zeros(n),
            sigma,
        }
    }

    pub fn vacuum(n_modes: usize) -> Self {
        Self::centered(Mat::identity(2 * n_modes, 2 * n_modes) * 0.5)
    }

    pub fn n_modes(&self) -> usize {
        self.sigma.nrows() / 2
    }

    /// Reduced state of one mode.
    pub fn mode(&self, k: usize) -> GaussianState {
        GaussianState {
            mean: self.mean.rows(2 * k, 2).into_owned(),
            sigma: self.sigma.view((2 * k, 2 * k), (2, 2)).into_owned(),
        }
    }

    /// Smallest eigenvalue of `Σ + (i/2) J`.
    pub fn uncertainty_margin(&self) -> f64 {
        linalg::uncertainty_margin(&self.sigma, &symplectic_form(self.n_modes()).j)
    }
}

/// Tolerance for the uncertainty-principle check, scaled to the covariance.
fn physical_tol(sigma: &Mat) -> f64 {
    1e-10 * sigma.abs().max().max(1.0)
}

pub fn check_physical(sigma: &Mat) -> Result<()> {
    let margin = GaussianState::centered(sigma.clone()).uncertainty_margin();
    if margin < -physical_tol(sigma) {
        return Err(Error::Unphysical(format!(
            "min eigenvalue of sigma + iJ/2 is {margin:.3e}"
        )));
    }
    Ok(())
}

/// Mean excitation number `½(Σ_xx + Σ_pp + ⟨x⟩² + ⟨p⟩² − 1)` of one mode.
pub fn occupation(state: &GaussianState, mode: usize) -> f64 {
    let (i, j) = (2 * mode, 2 * mode + 1);
    0.5 * (state.sigma[(i, i)] + state.sigma[(j, j)] + state.mean[i].powi(2) + state.mean[j].powi(2)
        - 1.0)
}

/// Smallest symplectic eigenvalue of the partial transpose of a two-mode
/// covariance, computed from the spectrum of `J Σ̃` (which is `±i ν̃`).
pub fn partial_transpose_symplectic_min(sigma: &Mat) -> Result<f64> {
    if sigma.shape() != (4, 4) {
        return Err(Error::DimensionMismatch {
            context: "two-mode covariance".into(),
            expected: 4,
            found: sigma.nrows(),
        });
    }
    let mut pt = linalg::symmetrize(sigma);
    for k in 0..4 {
        pt[(3, k)] = -pt[(3, k)];
    }
    for k in 0..4 {
        pt[(k, 3)] = -pt[(k, 3)];
    }
    let j = symplectic_form(2).j;
    Ok(linalg::eigenvalues(&(j * pt))
        .iter()
        .map(|z| z.norm())
        .fold(f64::INFINITY, f64::min))
}

/// `−ln(2 ν̃₋)` without clamping; positive exactly when the state is
/// entangled. Useful as a smooth optimization objective.
pub fn log_negativity_unclamped(sigma: &Mat) -> Result<f64> {
    Ok(-(2.0 * partial_transpose_symplectic_min(sigma)?).ln())
}

/// `E_N = max(0, −ln(2 ν̃₋))`.
pub fn log_negativity(sigma: &Mat) -> Result<f64> {
    check_physical(sigma)?;
    Ok(log_negativity_unclamped(sigma)?.max(0.0))
}

/// `[Δ(x₁^φ₁ − x₂^φ₂)]² + [Δ(p₁^φ₁ + p₂^φ₂)]²` with
/// `x^φ = cos φ x + sin φ p` and `p^φ = x^{φ+π/2}`.
pub fn epr_at(sigma: &Mat, phi1: f64, phi2: f64) -> f64 {
    let (s1, c1) = phi1.sin_cos();
    let (s2, c2) = phi2.sin_cos();
    let u = [c1, s1, -c2, -s2];
    let w = [-s1, c1, -s2, c2];
    let mut total = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            total += (u[a] * u[b] + w[a] * w[b]) * sigma[(a, b)];
        }
    }
    total
}

/// EPR variance minimized over both local phases: a 64 × 64 grid over
/// `[0, 2π)²` followed by Nelder–Mead refinement.
pub fn epr_variance(sigma: &Mat) -> Result<f64> {
    if sigma.shape() != (4, 4) {
        return Err(Error::DimensionMismatch {
            context: "two-mode covariance".into(),
            expected: 4,
            found: sigma.nrows(),
        });
    }
    const GRID: usize = 64;
    let h = 2.0 * PI / GRID as f64;
    let mut best = (0.0, 0.0, f64::INFINITY);
    for a in 0..GRID {
        for b in 0..GRID {
            let (p1, p2) = (a as f64 * h, b as f64 * h);
            let v = epr_at(sigma, p1, p2);
            if v < best.2 {
                best = (p1, p2, v);
            }
        }
    }
    let (_, v) = nelder_mead(
        |x| epr_at(sigma, x[0], x[1]),
        &[best.0, best.1],
        h / 2.0,
        1e-10,
        2000,
    );
    Ok(v.min(best.2))
}

/// Squeezing of a single-mode covariance, `10 log10(2 λ_min)` in dB
/// (0 dB is the vacuum, negative values are squeezed).
pub fn squeezing_db(sigma: &Mat) -> Result<f64> {
    if sigma.shape() != (2, 2) {
        return Err(Error::DimensionMismatch {
            context: "single-mode covariance".into(),
            expected: 2,
            found: sigma.nrows(),
        });
    }
    let lambda = linalg::min_eig_symmetric(sigma);
    if lambda <= 0.0 {
        return Err(Error::Unphysical(format!("non-positive variance {lambda}")));
    }
    Ok(10.0 * (2.0 * lambda).log10())
}
