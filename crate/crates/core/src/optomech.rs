//! Concrete optomechanical models: the full mechanics + cavity system, and the
//! adiabatically eliminated mechanical models used for teleportation and
//! entanglement swapping.
//!
//! All rates are in units of the mechanical frequency (`omega_m = 1` by
//! default). The full model orders quadratures as `(x_m, p_m, x_l, p_l)`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gme::{
    assemble_from_coefficients, assemble_model, CVec, CoefficientMatrix, LindbladChannel,
    LinearModel, QuadraticHamiltonian,
};
use crate::linalg::{CMat, Mat};

/// Indices into the full-model quadrature vector.
pub const XM: usize = 0;
pub const PM: usize = 1;
pub const XL: usize = 2;
pub const PL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptomechParams {
    pub omega_m: f64,
    /// Laser detuning; `+omega_m` is the blue sideband.
    pub delta: f64,
    pub g: f64,
    /// Cavity linewidth (FWHM).
    pub kappa: f64,
    /// Mechanical linewidth, `omega_m / Q`.
    pub gamma: f64,
    pub nbar: f64,
    pub eta: f64,
    pub phi: f64,
}

impl Default for OptomechParams {
    /// Sideband-resolved parameters: κ = ω_m/2, Q = 5e6, n̄ = 3.5e5, phase
    /// quadrature detection.
    fn default() -> Self {
        Self {
            omega_m: 1.0,
            delta: -1.0,
            g: 0.1,
            kappa: 0.5,
            gamma: 1.0 / 5e6,
            nbar: 3.5e5,
            eta: 1.0,
            phi: PI / 2.0,
        }
    }
}

impl OptomechParams {
    pub fn with_quality_factor(mut self, q: f64) -> Self {
        self.gamma = self.omega_m / q;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| {
            Err(Error::InvalidArgument(format!("{what} out of range: {v}")))
        };
        let finite = [
            self.omega_m, self.delta, self.g, self.kappa, self.gamma, self.nbar, self.eta,
            self.phi,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        if self.kappa <= 0.0 {
            return bad("kappa", self.kappa);
        }
        if self.gamma <= 0.0 {
            return bad("gamma", self.gamma);
        }
        if self.nbar < 0.0 {
            return bad("nbar", self.nbar);
        }
        if self.g < 0.0 {
            return bad("g", self.g);
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad("eta", self.eta);
        }
        Ok(())
    }

    /// `4g²/κ`, the measurement rate of the effective mechanical models.
    pub fn readout_rate(&self) -> f64 {
        4.0 * self.g * self.g / self.kappa
    }

    pub fn epsilon(&self) -> f64 {
        let r = 4.0 * self.omega_m / self.kappa;
        1.0 / (1.0 + r * r)
    }
}

/// `4g² / ((n̄+1) γ κ)`.
pub fn cooperativity(params: &OptomechParams) -> f64 {
    4.0 * params.g * params.g / ((params.nbar + 1.0) * params.gamma * params.kappa)
}

/// Coupling that realizes cooperativity `c` at the other parameters of `params`.
pub fn g_from_cooperativity(params: &OptomechParams, c: f64) -> f64 {
    (c.max(0.0) * (params.nbar + 1.0) * params.gamma * params.kappa / 4.0).sqrt()
}

/// Quadratic Hamiltonian of the linearized system in a frame rotating with
/// the laser, with the two control inputs `u = (u_x, u_p)` entering as
/// `√(2κ)(u_p x_l + u_x p_l)`.
pub fn hamiltonian_matrix(params: &OptomechParams) -> QuadraticHamiltonian {
    let mut r = Mat::zeros(4, 4);
    r[(XM, XM)] = params.omega_m;
    r[(PM, PM)] = params.omega_m;
    r[(XL, XL)] = -params.delta;
    r[(PL, PL)] = -params.delta;
    r[(XM, XL)] = 2.0 * params.g;
    r[(XL, XM)] = 2.0 * params.g;

    let half = Complex64::new((2.0 * params.kappa).sqrt() / 2.0, 0.0);
    let mut r_tilde = CMat::zeros(4, 2);
    r_tilde[(XL, 1)] = half;
    r_tilde[(PL, 0)] = half;
    QuadraticHamiltonian::new(r).with_drive(r_tilde)
}

fn annihilation(dim: usize, mode: usize, scale: f64) -> CVec {
    let mut v = CVec::zeros(dim);
    let a = scale / 2f64.sqrt();
    v[2 * mode] = Complex64::new(a, 0.0);
    v[2 * mode + 1] = Complex64::new(0.0, a);
    v
}

fn creation(dim: usize, mode: usize, scale: f64) -> CVec {
    annihilation(dim, mode, scale).conjugate()
}

/// Mechanics + cavity with cavity output under homodyne detection at angle φ
/// and efficiency η, and thermal mechanical damping.
pub fn full_model(params: &OptomechParams) -> Result<LinearModel> {
    params.validate()?;
    let channels = [
        LindbladChannel::measured(
            annihilation(4, 1, params.kappa.sqrt()),
            params.eta,
            params.phi,
        ),
        LindbladChannel::unmeasured(annihilation(4, 0, (params.gamma * (params.nbar + 1.0)).sqrt())),
        LindbladChannel::unmeasured(creation(4, 0, (params.gamma * params.nbar).sqrt())),
    ];
    assemble_model(&hamiltonian_matrix(params), &channels)
}

/// Cost weights `P = h_m diag(1,1,0,0)`, `Q = I₂` penalizing mechanical
/// energy and feedback strength.
pub fn lqg_weights(h_m: f64) -> (Mat, Mat) {
    let mut p = Mat::zeros(4, 4);
    p[(XM, XM)] = h_m;
    p[(PM, PM)] = h_m;
    (p, Mat::identity(2, 2))
}

/// White squeezed noise with `⟨b†b⟩ = N` and `⟨bb⟩ = M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqueezedNoise {
    pub n: f64,
    pub m: Complex64,
    pub alpha: Complex64,
    pub mu: Complex64,
    pub nu: Complex64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl SqueezedNoise {
    /// Wiener covariance `[[w1, w3], [w3, w2]]` of the two Bell currents.
    pub fn wiener_covariance(&self) -> Mat {
        Mat::from_row_slice(2, 2, &[self.w1, self.w3, self.w3, self.w2])
    }

    /// Covariance of the single-mode state carried by the noise,
    /// `[[N+½+Re M, Im M], [Im M, N+½−Re M]]`.
    pub fn state_covariance(&self) -> Mat {
        let d = self.n + 0.5;
        Mat::from_row_slice(
            2,
            2,
            &[d + self.m.re, self.m.im, self.m.im, d - self.m.re],
        )
    }

    pub fn is_pure(&self) -> bool {
        (self.m.norm_sqr() - self.n * (self.n + 1.0)).abs() < 1e-10 * (1.0 + self.n * self.n)
    }
}

pub fn squeezed_noise(n: f64, m: Complex64) -> Result<SqueezedNoise> {
    if !(n >= 0.0) || !m.re.is_finite() || !m.im.is_finite() {
        return Err(Error::Unphysical(format!("N = {n}, M = {m}")));
    }
    let bound = n * (n + 1.0);
    if m.norm_sqr() > bound + 1e-12 * (1.0 + bound) {
        return Err(Error::Unphysical(format!(
            "|M|^2 = {} exceeds N(N+1) = {bound}",
            m.norm_sqr()
        )));
    }
    let one = Complex64::new(1.0, 0.0);
    let alpha = (n + m) / (n + m.conj() + 1.0);
    Ok(SqueezedNoise {
        n,
        m,
        alpha,
        mu: one - alpha,
        nu: one + alpha,
        w1: n + 1.0 + m.re,
        w2: n + 1.0 - m.re,
        w3: m.im,
    })
}

/// Pure amplitude-squeezed noise whose minimal quadrature variance is
/// `10^{db/10}` times the vacuum level (negative `db` means squeezing).
pub fn pure_squeezed_noise(db: f64) -> Result<SqueezedNoise> {
    let r = -(db / 10.0 * std::f64::consts::LN_10) / 2.0;
    let (s, c) = (r.sinh(), r.cosh());
    squeezed_noise(s * s, Complex64::new(-s.abs() * c, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdiabaticRates {
    pub eta_plus: Complex64,
    pub eta_minus: Complex64,
    pub gamma_minus: f64,
    pub gamma_plus: f64,
    pub epsilon: f64,
    pub omega_eff: f64,
}

/// Effective mechanical rates after eliminating a weakly coupled cavity.
pub fn adiabatic_rates(params: &OptomechParams) -> AdiabaticRates {
    let p = params;
    let eta_plus = 1.0 / Complex64::new(p.kappa / 2.0, -p.delta + p.omega_m);
    let eta_minus = 1.0 / Complex64::new(p.kappa / 2.0, -p.delta - p.omega_m);
    let g2 = p.g * p.g;
    AdiabaticRates {
        eta_plus,
        eta_minus,
        gamma_minus: p.gamma * (p.nbar + 1.0) + 2.0 * g2 * eta_minus.re,
        gamma_plus: p.gamma * p.nbar + 2.0 * g2 * eta_plus.re,
        epsilon: p.epsilon(),
        omega_eff: p.omega_m + g2 * (eta_plus + eta_minus).im,
    }
}

/// Coefficient matrix of the single-mode teleportation feedback master
/// equation (blue-detuned readout, Bell measurement on the squeezed input,
/// feedback onto the mechanics), written in the frame rotating at the
/// spring-shifted mechanical frequency.
///
/// The `w3` correlation enters through `D[x − p]`; with this sign the input
/// state is the dark state of the ideal (γ = ε = 0, η = 1) dynamics.
pub fn teleport_coefficients(
    params: &OptomechParams,
    noise: &SqueezedNoise,
    epsilon: Option<f64>,
) -> CoefficientMatrix {
    let k2 = params.readout_rate();
    let eps = epsilon.unwrap_or_else(|| params.epsilon());
    let eta = params.eta;
    let mut coeff = CoefficientMatrix::zeros(2);
    coeff.add_term(&annihilation(2, 0, 1.0), params.gamma * (params.nbar + 1.0) + k2 * (1.0 + eps));
    coeff.add_term(&creation(2, 0, 1.0), params.gamma * params.nbar);
    let x = CVec::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
    let p = CVec::from_vec(vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]);
    let x_minus_p = &x - &p;
    coeff.add_term(&x_minus_p, k2 * noise.w3 / eta);
    coeff.add_term(&p, k2 * ((noise.w1 - noise.w3) / eta - 1.0));
    coeff.add_term(&x, k2 * ((noise.w2 - noise.w3) / eta - 1.0));
    coeff
}

/// Unconditional single-mode teleportation model; `epsilon` overrides the
/// counter-rotating suppression factor.
pub fn teleport_model(
    params: &OptomechParams,
    noise: &SqueezedNoise,
    epsilon: Option<f64>,
) -> Result<LinearModel> {
    params.validate()?;
    let coeff = teleport_coefficients(params, noise, epsilon);
    assemble_from_coefficients(&QuadraticHamiltonian::zero(1), &coeff)
}

/// Entanglement-swapping feedback settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwapConfig {
    /// Split between the Bell-measurement and stabilizer beams.
    pub upsilon: f64,
    /// Feedback gain on the Bell pair.
    pub sigma: f64,
    pub eta: f64,
}

impl SwapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.upsilon > 0.0 && self.upsilon <= 1.0) {
            return Err(Error::InvalidArgument(format!("upsilon = {}", self.upsilon)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma = {}", self.sigma)));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidArgument(format!("eta = {}", self.eta)));
        }
        Ok(())
    }
}

/// Jump and feedback vectors `(J_i, F_i)` of the swap protocol. The jump
/// operators are creation-type: the blue-detuned drive entangles each
/// mechanical mode with its light field, so the readout heralds phonon
/// creation.
fn swap_operators(cfg: &SwapConfig) -> [(CVec, CVec); 4] {
    let i = Complex64::new(0.0, 1.0);
    let cp = annihilation(4, 0, 1.0) + annihilation(4, 1, 1.0);
    let cm = annihilation(4, 0, 1.0) - annihilation(4, 1, 1.0);
    let su = Complex64::new(cfg.upsilon.sqrt(), 0.0);
    let sv = Complex64::new((1.0 - cfg.upsilon).sqrt(), 0.0);
    let s = Complex64::new(cfg.sigma, 0.0);
    let herm = |v: CVec| &v + v.conjugate();
    [
        (cp.conjugate() * su, herm(&cp * (i * su * s))),
        (cm.conjugate() * (i * su), herm(&cm * (su * s))),
        (cp.conjugate() * (i * sv), herm(&cp * sv)),
        (cm.conjugate() * sv, herm(&cm * (i * sv))),
    ]
}

/// Two-mode unconditional swap model, quadratures `(x_1, p_1, x_2, p_2)`.
pub fn swap_model(
    params: &OptomechParams,
    cfg: &SwapConfig,
    epsilon: Option<f64>,
) -> Result<LinearModel> {
    params.validate()?;
    cfg.validate()?;
    let k2 = params.readout_rate();
    let eps = epsilon.unwrap_or_else(|| params.epsilon());
    let mut coeff = CoefficientMatrix::zeros(4);
    for mode in 0..2 {
        coeff.add_term(
            &annihilation(4, mode, 1.0),
            eps * k2 + params.gamma * (params.nbar + 1.0),
        );
        coeff.add_term(&creation(4, mode, 1.0), params.gamma * params.nbar);
    }
    // Feedback Hamiltonian (k²/4) Σ (J_i† F_i + F_i J_i), which for Hermitian
    // F_i = f·X has quadratic-form matrix (k²/2) Σ Re(conj(j) f^T + f j^T).
    let mut r = Mat::zeros(4, 4);
    let i = Complex64::new(0.0, 1.0);
    for (j, f) in swap_operators(cfg) {
        coeff.add_term(&(&j - &f * i), k2 / 2.0);
        coeff.add_term(&f, k2 / 2.0 * (1.0 - cfg.eta) / cfg.eta);
        let a = j.conjugate() * f.transpose() + &f * j.transpose();
        r += a.map(|z| z.re) * (k2 / 2.0);
    }
    let r = crate::linalg::symmetrize(&r);
    assemble_from_coefficients(&QuadraticHamiltonian::new(r), &coeff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigenvalues, hermitian_deviation};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn hamiltonian_coupling_entries() {
        let p = OptomechParams {
            g: 0.1,
            delta: 1.0,
            ..Default::default()
        };
        let h = hamiltonian_matrix(&p);
        assert!(close(h.r[(XM, XL)], 0.2, 1e-15));
        assert_eq!(h.r[(PM, PL)], 0.0);
        assert_eq!(h.r[(XL, XL)], -1.0);
        let q = hamiltonian_matrix(&OptomechParams { delta: -1.0, ..p });
        assert_eq!(q.r[(XL, XL)], 1.0);
        assert_eq!(q.r[(XM, XM)], h.r[(XM, XM)]);
    }

    #[test]
    fn control_matrix_drives_cavity_quadratures() {
        let p = OptomechParams::default();
        let m = full_model(&p).unwrap();
        let s = (2.0 * p.kappa).sqrt();
        // dx_l = √(2κ) u_x dt, dp_l = −√(2κ) u_p dt.
        assert!(close(m.g[(XL, 0)], s, 1e-15));
        assert!(close(m.g[(PL, 1)], -s, 1e-15));
        assert_eq!(m.g.rows(0, 2).abs().max(), 0.0);
    }

    #[test]
    fn decoupled_mechanics_spectrum() {
        let p = OptomechParams {
            g: 0.0,
            gamma: 0.01,
            ..Default::default()
        };
        let m = full_model(&p).unwrap();
        assert_eq!(m.f.view((0, 2), (2, 2)).abs().max(), 0.0);
        let ev = eigenvalues(&m.f.view((0, 0), (2, 2)).into_owned());
        for z in ev {
            assert!(close(z.re, -0.005, 1e-10));
            assert!(close(z.im.abs(), 1.0, 1e-14));
        }
    }

    #[test]
    fn squeezed_noise_examples() {
        let vac = squeezed_noise(0.0, Complex64::new(0.0, 0.0)).unwrap();
        assert_eq!((vac.w1, vac.w2, vac.w3), (1.0, 1.0, 0.0));
        assert_eq!(vac.alpha, Complex64::new(0.0, 0.0));

        let n: f64 = 0.56;
        let m = -(n * (n + 1.0)).sqrt();
        let s = squeezed_noise(n, Complex64::new(m, 0.0)).unwrap();
        assert!(close(s.w1, 0.6253, 1e-4));
        assert!(close(s.w2, 2.4947, 1e-4));
        assert_eq!(s.w3, 0.0);
        assert!(s.is_pure());

        assert!(squeezed_noise(0.5, Complex64::new(0.9, 0.0)).is_err());
        assert!(squeezed_noise(-0.1, Complex64::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn pure_squeezing_from_decibels() {
        let s = pure_squeezed_noise(-6.0).unwrap();
        assert!(close(s.n, 0.5583, 1e-3));
        assert!(s.is_pure());
        let var = 2.0 * (s.n + 0.5 + s.m.re);
        assert!(close(10.0 * var.log10(), -6.0, 1e-12));
    }

    #[test]
    fn adiabatic_rate_examples() {
        let blue = adiabatic_rates(&OptomechParams {
            delta: 1.0,
            kappa: 0.3,
            ..Default::default()
        });
        assert!(close(blue.eta_plus.re, 2.0 / 0.3, 1e-12));
        assert!(blue.eta_plus.im.abs() < 1e-12);

        let p = OptomechParams {
            kappa: 0.1,
            ..Default::default()
        };
        assert!(close(p.epsilon(), 1.0 / 1601.0, 1e-15));

        let free = adiabatic_rates(&OptomechParams {
            g: 0.0,
            ..Default::default()
        });
        let d = OptomechParams::default();
        assert_eq!(free.gamma_minus, d.gamma * (d.nbar + 1.0));
        assert_eq!(free.gamma_plus, d.gamma * d.nbar);
        assert_eq!(free.omega_eff, 1.0);
    }

    #[test]
    fn cooperativity_round_trip() {
        let p = OptomechParams::default();
        let g = g_from_cooperativity(&p, 1.0);
        assert!(close(cooperativity(&OptomechParams { g, ..p }), 1.0, 1e-12));
        assert_eq!(cooperativity(&OptomechParams { g: 0.0, ..p }), 0.0);
        // κ = 1/2, γ = 2e-7, n̄ = 3.5e5, g = 0.1.
        let expect = 0.04 / ((3.5e5 + 1.0) * 2e-7 * 0.5);
        assert!(close(cooperativity(&p), expect, 1e-12));
    }

    fn swap_params(c: f64, nbar: f64) -> OptomechParams {
        let base = OptomechParams {
            kappa: 0.1,
            gamma: 1e-3,
            nbar,
            ..Default::default()
        };
        OptomechParams {
            g: g_from_cooperativity(&base, c),
            ..base
        }
    }

    #[test]
    fn swap_feedback_hamiltonian_and_drift_spectrum() {
        let p = swap_params(3.0, 0.5);
        let cfg = SwapConfig {
            upsilon: 0.7,
            sigma: 1.3,
            eta: 0.8,
        };
        let eps = 0.02;
        let model = swap_model(&p, &cfg, Some(eps)).unwrap();
        let k2 = p.readout_rate();
        let (u, s, g) = (cfg.upsilon, cfg.sigma, p.gamma);

        let r = model.j.j.transpose() * &model.f;
        let expect = -k2 * ((1.0 + s) * u - 1.0);
        // Only the Hamiltonian contributes to the symmetric part of J^T F.
        let sym = crate::linalg::symmetrize(&r);
        assert!(close(sym[(0, 3)], expect, 1e-12), "{}", sym[(0, 3)]);
        assert!(close(sym[(1, 2)], expect, 1e-12));
        assert!(sym[(0, 2)].abs() < 1e-12 && sym[(1, 3)].abs() < 1e-12);

        let a = -(eps * k2 + g + 4.0 * k2 * s * u - k2) / 2.0;
        let b = -(eps * k2 + g + 3.0 * k2 - 4.0 * k2 * u) / 2.0;
        let mut ev: Vec<f64> = eigenvalues(&model.f).iter().map(|z| z.re).collect();
        ev.sort_by(f64::total_cmp);
        let mut want = vec![a, a, b, b];
        want.sort_by(f64::total_cmp);
        for (x, y) in ev.iter().zip(want) {
            assert!(close(*x, y, 1e-12), "{ev:?}");
        }
    }

    #[test]
    fn swap_without_coupling_is_two_thermal_modes() {
        let p = OptomechParams {
            g: 0.0,
            nbar: 2.0,
            gamma: 0.01,
            ..Default::default()
        };
        let cfg = SwapConfig {
            upsilon: 0.75,
            sigma: 1.0,
            eta: 1.0,
        };
        let m = swap_model(&p, &cfg, None).unwrap();
        assert!((&m.f + Mat::identity(4, 4) * 0.005).abs().max() < 1e-15);
        assert!((&m.n - Mat::identity(4, 4) * 0.025).abs().max() < 1e-15);
    }

    #[test]
    fn teleport_coefficients_are_hermitian() {
        let noise = squeezed_noise(0.3, Complex64::new(0.2, -0.4)).unwrap();
        let c = teleport_coefficients(&swap_params(2.0, 0.1), &noise, None);
        assert_eq!(hermitian_deviation(&c.c), 0.0);
    }
}
