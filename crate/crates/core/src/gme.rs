//! Gaussian model engine: quadratic Hamiltonians plus linear Lindblad and
//! measurement channels, turned into the matrices of the linear moment
//! equations
//!
//! ```text
//! dX = F X dt + G u dt + noise,      dΣ/dt = F Σ + Σ F^T + N
//! I dt = H X dt + dW
//! ```
//!
//! Quadratures are ordered per mode, `(x_1, p_1, x_2, p_2, ...)`, with
//! `x = (c + c†)/√2`, `p = -i(c - c†)/√2` and `ħ = 1`, so the vacuum has
//! variance ½ in every quadrature.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, Mat};

/// Tolerance used when checking Hermiticity of coefficient matrices.
pub const HERMITIAN_TOL: f64 = 1e-12;

pub type CVec = DVector<Complex64>;

/// Canonical commutator matrix, `[X_i, X_j] = i J_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticForm {
    pub n_modes: usize,
    pub j: Mat,
}

pub fn symplectic_form(n_modes: usize) -> SymplecticForm {
    let dim = 2 * n_modes;
    let mut j = Mat::zeros(dim, dim);
    for k in 0..n_modes {
        j[(2 * k, 2 * k + 1)] = 1.0;
        j[(2 * k + 1, 2 * k)] = -1.0;
    }
    SymplecticForm { n_modes, j }
}

/// `H = ½ X^T R X + X^T R̃ u + h.c.` with real symmetric `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticHamiltonian {
    pub r: Mat,
    pub r_tilde: CMat,
}

impl QuadraticHamiltonian {
    pub fn new(r: Mat) -> Self {
        let dim = r.nrows();
        Self {
            r,
            r_tilde: CMat::zeros(dim, 0),
        }
    }

    pub fn zero(n_modes: usize) -> Self {
        Self::new(Mat::zeros(2 * n_modes, 2 * n_modes))
    }

    pub fn with_drive(mut self, r_tilde: CMat) -> Self {
        self.r_tilde = r_tilde;
        self
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    fn validate(&self) -> Result<()> {
        let dim = self.r.nrows();
        if dim == 0 || dim % 2 != 0 || self.r.ncols() != dim {
            return Err(Error::InvalidArgument(format!(
                "Hamiltonian matrix must be 2n x 2n, got {}x{}",
                self.r.nrows(),
                self.r.ncols()
            )));
        }
        if self.r_tilde.nrows() != dim {
            return Err(Error::DimensionMismatch {
                context: "drive coupling rows".into(),
                expected: dim,
                found: self.r_tilde.nrows(),
            });
        }
        let asym = (&self.r - self.r.transpose()).abs().max();
        if asym > HERMITIAN_TOL * self.r.abs().max().max(1.0) {
            return Err(Error::NotHermitian { deviation: asym });
        }
        Ok(())
    }

    /// `G = J (R̃ + R̃*)`.
    fn control_matrix(&self, j: &Mat) -> Mat {
        j * linalg::real_part(&self.r_tilde) * 2.0
    }
}

/// Jump operator `L = v · X`, optionally monitored by homodyne detection.
#[derive(Debug, Clone, PartialEq)]
pub struct LindbladChannel {
    pub v: CVec,
    pub efficiency: f64,
    pub measured: bool,
    /// Local-oscillator angle; the detected operator is `e^{iφ} L`.
    pub lo_angle: f64,
}

impl LindbladChannel {
    pub fn unmeasured(v: CVec) -> Self {
        Self {
            v,
            efficiency: 1.0,
            measured: false,
            lo_angle: 0.0,
        }
    }

    pub fn measured(v: CVec, efficiency: f64, lo_angle: f64) -> Self {
        Self {
            v,
            efficiency,
            measured: true,
            lo_angle,
        }
    }

    /// `√η e^{iφ} v`, the vector entering the measurement matrices.
    fn detected_vector(&self) -> CVec {
        let w = Complex64::from_polar(self.efficiency.sqrt(), self.lo_angle);
        self.v.map(|z| z * w)
    }
}

/// Matrices of the linear moment equations for a Gaussian open system.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub f: Mat,
    pub n: Mat,
    /// One row per measured output.
    pub h: Mat,
    /// One column per measured output.
    pub m: Mat,
    pub g: Mat,
    pub j: SymplecticForm,
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.f.nrows()
    }

    pub fn n_modes(&self) -> usize {
        self.j.n_modes
    }

    pub fn n_outputs(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_controls(&self) -> usize {
        self.g.ncols()
    }

    /// Copy of the model with the measurement record discarded.
    pub fn unmonitored(&self) -> Self {
        let dim = self.dim();
        Self {
            h: Mat::zeros(0, dim),
            m: Mat::zeros(dim, 0),
            ..self.clone()
        }
    }
}

/// Hermitian matrix `C` of the generator `Σ_ij C_ij (X_i ρ X_j − ½{X_j X_i, ρ})`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub c: CMat,
}

impl CoefficientMatrix {
    pub fn new(c: CMat) -> Result<Self> {
        if c.nrows() != c.ncols() {
            return Err(Error::DimensionMismatch {
                context: "coefficient matrix columns".into(),
                expected: c.nrows(),
                found: c.ncols(),
            });
        }
        let deviation = linalg::hermitian_deviation(&c);
        if deviation > HERMITIAN_TOL * c.iter().map(|z| z.norm()).fold(1.0, f64::max) {
            return Err(Error::NotHermitian { deviation });
        }
        // Exact Hermitian part, so later real/imaginary splits are clean.
        let c = (&c + c.adjoint()) * Complex64::new(0.5, 0.0);
        Ok(Self { c })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            c: CMat::zeros(dim, dim),
        }
    }

    /// `rate · v v†`, the coefficient matrix of `rate · D[v · X]`.
    pub fn rank_one(v: &CVec, rate: f64) -> Self {
        Self {
            c: v * v.adjoint() * Complex64::new(rate, 0.0),
        }
    }

    pub fn from_channels(channels: &[LindbladChannel]) -> Result<Self> {
        let dim = channels.first().map(|ch| ch.v.len()).ok_or_else(|| {
            Error::InvalidArgument("at least one channel required".into())
        })?;
        let mut acc = Self::zeros(dim);
        for (idx, ch) in channels.iter().enumerate() {
            if ch.v.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: format!("channel {idx}"),
                    expected: dim,
                    found: ch.v.len(),
                });
            }
            acc.add_term(&ch.v, 1.0);
        }
        Ok(acc)
    }

    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    /// Accumulate `rate · D[v · X]`. Negative rates are allowed.
    pub fn add_term(&mut self, v: &CVec, rate: f64) {
        self.c += v * v.adjoint() * Complex64::new(rate, 0.0);
    }

    pub fn add(&mut self, other: &CoefficientMatrix, scale: f64) {
        self.c += &other.c * Complex64::new(scale, 0.0);
    }
}

fn check_channels(dim: usize, channels: &[LindbladChannel]) -> Result<()> {
    for (idx, ch) in channels.iter().enumerate() {
        if ch.v.len() != dim {
            return Err(Error::DimensionMismatch {
                context: format!("channel {idx} vector length"),
                expected: dim,
                found: ch.v.len(),
            });
        }
        if ch.measured && !(0.0..=1.0).contains(&ch.efficiency) {
            return Err(Error::InvalidArgument(format!(
                "channel {idx} efficiency {} outside [0, 1]",
                ch.efficiency
            )));
        }
    }
    Ok(())
}

/// Moment equations from a Hamiltonian and a list of Lindblad channels:
///
/// `F = J[R + Im(Λ†Λ)]`, `N = ½ J(Λ†Λ + Λ^T Λ*) J^T`, and for each measured
/// channel with `v' = √η e^{iφ} v` an output row `2 Re v'` and a noise
/// cross-correlation column `−J Im(v')^T`.
pub fn assemble_model(
    ham: &QuadraticHamiltonian,
    channels: &[LindbladChannel],
) -> Result<LinearModel> {
    ham.validate()?;
    let dim = ham.dim();
    check_channels(dim, channels)?;
    let sf = symplectic_form(dim / 2);
    let j = &sf.j;

    // Λ†Λ summed channel by channel: (Λ†Λ)_ik = Σ conj(v_i) v_k.
    let mut gram = CMat::zeros(dim, dim);
    for ch in channels {
        gram += ch.v.conjugate() * ch.v.transpose();
    }
    let f = j * (&ham.r + linalg::imag_part(&gram));
    let n = linalg::symmetrize(&(j * linalg::real_part(&gram) * j.transpose()));

    let measured: Vec<&LindbladChannel> = channels.iter().filter(|c| c.measured).collect();
    let mut h = Mat::zeros(measured.len(), dim);
    let mut m = Mat::zeros(dim, measured.len());
    for (row, ch) in measured.iter().enumerate() {
        let v = ch.detected_vector();
        let re = v.map(|z| z.re);
        let im = v.map(|z| z.im);
        h.set_row(row, &(re * 2.0).transpose());
        m.set_column(row, &(-(j * im)));
    }

    Ok(LinearModel {
        f,
        n,
        h,
        m,
        g: ham.control_matrix(j),
        j: sf,
    })
}

/// Drift and diffusion from a Hermitian coefficient matrix:
/// `F = J[R − Im C]`, `N = J Re(C) J^T`. No outputs are attached.
pub fn assemble_from_coefficients(
    ham: &QuadraticHamiltonian,
    coeff: &CoefficientMatrix,
) -> Result<LinearModel> {
    ham.validate()?;
    let dim = ham.dim();
    if coeff.dim() != dim {
        return Err(Error::DimensionMismatch {
            context: "coefficient matrix".into(),
            expected: dim,
            found: coeff.dim(),
        });
    }
    let deviation = linalg::hermitian_deviation(&coeff.c);
    if deviation > HERMITIAN_TOL * coeff.c.iter().map(|z| z.norm()).fold(1.0, f64::max) {
        return Err(Error::NotHermitian { deviation });
    }
    let sf = symplectic_form(dim / 2);
    let j = &sf.j;
    let f = j * (&ham.r - linalg::imag_part(&coeff.c));
    let n = linalg::symmetrize(&(j * linalg::real_part(&coeff.c) * j.transpose()));
    Ok(LinearModel {
        f,
        n,
        h: Mat::zeros(0, dim),
        m: Mat::zeros(dim, 0),
        g: ham.control_matrix(j),
        j: sf,
    })
}

/// Eigen-decomposition `C = Σ λ_i v_i v_i†`, sorted by descending `λ`.
/// Eigenvalues below `1e-12` in magnitude are reported as exactly zero.
pub fn lindblad_diagonalize(coeff: &CoefficientMatrix) -> Vec<(f64, CVec)> {
    let (values, vectors) = linalg::hermitian_eigen(&coeff.c);
    let mut out: Vec<(f64, CVec)> = values
        .iter()
        .enumerate()
        .map(|(k, &lambda)| {
            let lambda = if lambda.abs() < 1e-12 { 0.0 } else { lambda };
            (lambda, vectors.column(k).into_owned())
        })
        .collect();
    out.reverse();
    out
}
