//! Steady-state solvers: Lyapunov equations, the filter and control algebraic
//! Riccati equations, and the LQG closed loop built from them.
//!
//! Both equation families go through a complex Schur form of a diagonally
//! balanced matrix. Lyapunov equations use Bartels–Stewart back-substitution
//! plus iterative refinement; Riccati equations take the stable invariant
//! subspace of the Hamiltonian matrix (matrix sign function if the QR
//! iteration stalls) and then Newton (Kleinman) steps.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gme::LinearModel;
use crate::linalg::{
    self, balance, frobenius, scale_congruence, scale_similarity, symmetrize, CMat, ComplexSchur,
    Mat,
};

/// Eigenvalues with real part above `-STABILITY_MARGIN` count as unstable.
pub const STABILITY_MARGIN: f64 = 1e-9;

/// Relative residual above which a solution is rejected outright.
const REJECT_RELATIVE_RESIDUAL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub sigma: Mat,
    /// Frobenius norm of the defining equation at `sigma`.
    pub residual: f64,
}

/// Solution of the control Riccati equation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSolution {
    pub cgain: Mat,
    pub omega: Mat,
    pub residual: f64,
}

/// LQG controller: feedback gain, filter gain and the closed-loop covariance
/// split `Σ = Σ̂ + Ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGain {
    pub cgain: Mat,
    pub omega: Mat,
    pub kgain: Mat,
    pub xi: Mat,
    /// Mean squared feedback amplitude, `tr(C Ξ C^T)`.
    pub effort: f64,
}

pub fn is_hurwitz(f: &Mat) -> bool {
    linalg::spectral_abscissa(f) < -STABILITY_MARGIN
}

fn require_square(a: &Mat, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            context: format!("{what} columns"),
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    Ok(())
}

fn require_same(a: &Mat, b: &Mat, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            context: what.into(),
            expected: a.nrows(),
            found: b.nrows(),
        });
    }
    Ok(())
}

/// `‖F Σ + Σ F^T + N‖_F`.
pub fn lyapunov_residual(f: &Mat, sigma: &Mat, n: &Mat) -> f64 {
    frobenius(&lyapunov_lhs(f, sigma, n))
}

/// `F Σ + Σ F^T + N` with compensated dot products, so that large
/// covariances do not drown the residual in product roundoff.
fn lyapunov_lhs(f: &Mat, sigma: &Mat, n: &Mat) -> Mat {
    let d = f.nrows();
    Mat::from_fn(d, d, |i, j| {
        let mut acc = TwoSum::new(n[(i, j)]);
        for k in 0..d {
            acc.add_product(f[(i, k)], sigma[(k, j)]);
            acc.add_product(sigma[(i, k)], f[(j, k)]);
        }
        acc.value()
    })
}

/// Error-free accumulation of a sum of products (Ogita-Rump-Oishi Dot2).
struct TwoSum {
    sum: f64,
    err: f64,
}

impl TwoSum {
    fn new(x: f64) -> Self {
        Self { sum: x, err: 0.0 }
    }

    fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        let pe = a.mul_add(b, -p);
        let s = self.sum + p;
        let z = s - self.sum;
        let se = (self.sum - (s - z)) + (p - z);
        self.sum = s;
        self.err += pe + se;
    }

    fn value(&self) -> f64 {
        self.sum + self.err
    }
}

/// Solve `T Y + Y T^H = -C` for upper-triangular `T`.
fn triangular_lyapunov(t: &CMat, c: &CMat) -> Result<CMat> {
    let n = t.nrows();
    let mut y = CMat::zeros(n, n);
    for i in (0..n).rev() {
        for j in (0..n).rev() {
            let mut rhs = -c[(i, j)];
            for k in (i + 1)..n {
                rhs -= t[(i, k)] * y[(k, j)];
            }
            for k in (j + 1)..n {
                rhs -= y[(i, k)] * t[(j, k)].conj();
            }
            let denom = t[(i, i)] + t[(j, j)].conj();
            if denom.norm() == 0.0 {
                return Err(Error::Numerical("singular Lyapunov operator".into()));
            }
            y[(i, j)] = rhs / denom;
        }
    }
    Ok(y)
}

/// Solve `A X + X A^T + N = 0` given the Schur form of `A`.
fn lyapunov_from_schur(schur: &ComplexSchur, n: &Mat) -> Result<Mat> {
    let u = &schur.q;
    let c = u.adjoint() * linalg::to_complex(n) * u;
    let y = triangular_lyapunov(&schur.t, &c)?;
    Ok(symmetrize(&linalg::real_part(&(u * y * u.adjoint()))))
}

/// Lyapunov solve with balancing and one residual-correction step, without
/// the stability precheck or residual rejection.
fn lyapunov_core(f: &Mat, n: &Mat) -> Result<Mat> {
    let d = balance(f);
    let fb = scale_similarity(f, &d);
    let nb = scale_congruence(n, &d, true);
    let schur = ComplexSchur::new(&fb)?;
    let x = symmetrize(&lyapunov_from_schur(&schur, &nb)?);
    let mut best = scale_congruence(&x, &d, false);
    let mut best_res = lyapunov_residual(f, &best, n);
    // Iterative refinement; the residual is taken in the original
    // coordinates since that is what callers check.
    for _ in 0..4 {
        let r = lyapunov_lhs(f, &best, n);
        let rb = scale_congruence(&r, &d, true);
        let dx = scale_congruence(&lyapunov_from_schur(&schur, &rb)?, &d, false);
        let cand = symmetrize(&(&best + dx));
        let res = lyapunov_residual(f, &cand, n);
        if !(res < best_res) {
            break;
        }
        best = cand;
        best_res = res;
    }
    if f.nrows() <= 8 {
        polish_ulps(f, n, &mut best, &mut best_res);
    }
    Ok(best)
}

/// Greedy last-bit search over the entries of a symmetric solution. Large,
/// nearly singular covariances leave a residual at the level of one unit in
/// the last place of their entries; nudging entries along the lattice of
/// representable values recovers part of that.
fn polish_ulps(f: &Mat, n: &Mat, x: &mut Mat, res: &mut f64) {
    let d = x.nrows();
    for _ in 0..50 {
        let mut improved = false;
        for i in 0..d {
            for j in i..d {
                let v = x[(i, j)];
                let ulp = (v.abs().max(f64::MIN_POSITIVE) * f64::EPSILON).max(f64::MIN_POSITIVE);
                let mut best_v = v;
                for k in [-4.0, -2.0, -1.0, 1.0, 2.0, 4.0] {
                    let t = v + k * ulp;
                    x[(i, j)] = t;
                    x[(j, i)] = t;
                    let r = lyapunov_residual(f, x, n);
                    if r < *res {
                        *res = r;
                        best_v = t;
                        improved = true;
                    }
                }
                x[(i, j)] = best_v;
                x[(j, i)] = best_v;
            }
        }
        if !improved {
            break;
        }
    }
}

fn lyapunov_scale(f: &Mat, sigma: &Mat, n: &Mat) -> f64 {
    2.0 * frobenius(f) * frobenius(sigma) + frobenius(n)
}

/// Steady state of `dΣ/dt = F Σ + Σ F^T + N` for Hurwitz `F`.
pub fn solve_lyapunov(f: &Mat, n: &Mat) -> Result<SteadyState> {
    require_square(f, "drift")?;
    require_same(f, n, "diffusion")?;
    let abscissa = linalg::spectral_abscissa(f);
    if abscissa >= -STABILITY_MARGIN {
        return Err(Error::Unstable {
            max_real_part: abscissa,
        });
    }
    let sigma = lyapunov_core(f, n)?;
    let residual = lyapunov_residual(f, &sigma, n);
    if !residual.is_finite()
        || residual > REJECT_RELATIVE_RESIDUAL * lyapunov_scale(f, &sigma, n).max(1.0)
    {
        return Err(Error::Numerical(format!(
            "Lyapunov residual {residual:.3e} too large"
        )));
    }
    Ok(SteadyState { sigma, residual })
}

/// Unconditional steady state of a model.
pub fn unconditional_steady_state(model: &LinearModel) -> Result<SteadyState> {
    solve_lyapunov(&model.f, &model.n)
}

/// `‖A^T X + X A + Q − X B X‖_F`.
pub fn care_residual(a: &Mat, b: &Mat, q: &Mat, x: &Mat) -> f64 {
    frobenius(&(a.transpose() * x + x * a + q - x * b * x))
}

/// Stabilizing solution of `A^T X + X A + Q − X B X = 0` (so that `A − B X`
/// is Hurwitz), for symmetric positive semidefinite `B`.
pub fn solve_care(a: &Mat, b: &Mat, q: &Mat) -> Result<Mat> {
    require_square(a, "CARE state matrix")?;
    require_same(a, b, "CARE quadratic term")?;
    require_same(a, q, "CARE constant term")?;
    let n = a.nrows();

    let d = balance(a);
    let ab = scale_similarity(a, &d);
    let bb = scale_congruence(b, &d, true);
    let qb = scale_congruence(q, &d, false);

    let mut ham = Mat::zeros(2 * n, 2 * n);
    ham.view_mut((0, 0), (n, n)).copy_from(&ab);
    ham.view_mut((0, n), (n, n)).copy_from(&(-&bb));
    ham.view_mut((n, 0), (n, n)).copy_from(&(-&qb));
    ham.view_mut((n, n), (n, n)).copy_from(&(-ab.transpose()));

    let scale = ham.abs().max().max(f64::MIN_POSITIVE);
    let x = match ComplexSchur::new(&ham).and_then(|schur| schur_subspace(schur, n, scale)) {
        Ok(x) => x,
        Err(first) => sign_subspace(&ham, n).map_err(|_| first)?,
    };
    // Balanced solution is D X D.
    let mut x = scale_congruence(&x, &d, true);

    // Newton (Kleinman) refinement:
    // (A − BX)^T X⁺ + X⁺ (A − BX) + Q + X B X = 0.
    // From a stabilizing start the iterates converge even when the first
    // steps raise the residual, so keep the best one and stop on stagnation.
    let mut best_res = care_residual(a, b, q, &x);
    let mut best = x.clone();
    let mut stale = 0;
    for _ in 0..NEWTON_STEPS {
        let closed = a - b * &x;
        if !is_hurwitz(&closed) {
            break;
        }
        let rhs = symmetrize(&(q + &x * b * &x));
        let Ok(next) = lyapunov_core(&closed.transpose(), &rhs) else {
            break;
        };
        let res = care_residual(a, b, q, &next);
        if !res.is_finite() {
            break;
        }
        x = next;
        if res < best_res {
            stale = if res > 0.5 * best_res { stale + 1 } else { 0 };
            best_res = res;
            best = x.clone();
        } else {
            stale += 1;
        }
        if stale >= 2 {
            break;
        }
    }
    let x = best;
    let closed = a - b * &x;
    let abscissa = linalg::spectral_abscissa(&closed);
    if abscissa >= -STABILITY_MARGIN {
        return Err(Error::NoStabilizingSolution(format!(
            "closed-loop matrix not Hurwitz (max real part {abscissa:.3e})"
        )));
    }
    Ok(x)
}

const NEWTON_STEPS: usize = 20;

/// Graph `X = U₂ U₁⁻¹` of the stable invariant subspace from an ordered
/// Schur form of the Hamiltonian matrix.
fn schur_subspace(mut schur: ComplexSchur, n: usize, scale: f64) -> Result<Mat> {
    let axis_tol = 1e-10 * scale;
    if let Some(z) = schur.eigenvalues().iter().find(|z| z.re.abs() <= axis_tol) {
        return Err(Error::NoStabilizingSolution(format!(
            "Hamiltonian matrix has an eigenvalue on the imaginary axis ({z})"
        )));
    }
    let k = schur.reorder(|z| z.re < 0.0);
    if k != n {
        return Err(Error::NoStabilizingSolution(format!(
            "stable subspace has dimension {k}, expected {n}"
        )));
    }
    let u1 = schur.q.view((0, 0), (n, n)).into_owned();
    let u2 = schur.q.view((n, 0), (n, n)).into_owned();
    let u1_inv = u1
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NoStabilizingSolution("stable subspace is not a graph".into()))?;
    let cond = u1.norm() * u1_inv.norm();
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::NoStabilizingSolution(format!(
            "stable subspace basis is singular (condition {cond:.2e})"
        )));
    }
    Ok(symmetrize(&linalg::real_part(&(u2 * u1_inv))))
}

/// Stable subspace through the matrix sign function (Newton iteration with
/// determinant scaling), used when the QR iteration fails to converge.
/// With `W = sign(H)`, the solution satisfies `[W₁₂; W₂₂ + I] X = −[W₁₁ + I; W₂₁]`.
fn sign_subspace(ham: &Mat, n: usize) -> Result<Mat> {
    let dim = 2 * n;
    let mut z = ham.clone();
    let mut converged = false;
    for _ in 0..100 {
        let inv = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::NoStabilizingSolution("Hamiltonian matrix is singular".into()))?;
        let det = z.determinant().abs();
        let c = if det.is_finite() && det > 0.0 { det.powf(-1.0 / dim as f64) } else { 1.0 };
        let next = (&z * c + inv / c) * 0.5;
        let change = frobenius(&(&next - &z));
        z = next;
        if change <= 1e-13 * frobenius(&z) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("matrix sign iteration did not converge".into()));
    }
    let w11 = z.view((0, 0), (n, n));
    let w12 = z.view((0, n), (n, n));
    let w21 = z.view((n, 0), (n, n));
    let w22 = z.view((n, n), (n, n));
    let id = Mat::identity(n, n);
    let mut lhs = Mat::zeros(dim, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w12);
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w22 + &id));
    let mut rhs = Mat::zeros(dim, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(w11 + &id)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w21));
    let x = lhs
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Numerical(format!("sign-function subspace: {e}")))?;
    Ok(symmetrize(&x))
}

/// Unstable (or marginal) eigenvalues of `f` that are invisible to `h`.
pub fn undetectable_modes(f: &Mat, h: &Mat) -> Vec<Complex64> {
    let n = f.nrows();
    linalg::eigenvalues(f)
        .into_iter()
        .filter(|z| z.re >= -STABILITY_MARGIN)
        .filter(|&z| {
            let mut pencil = CMat::zeros(n + h.nrows(), n);
            for i in 0..n {
                for j in 0..n {
                    let diag = if i == j { z } else { Complex64::new(0.0, 0.0) };
                    pencil[(i, j)] = diag - f[(i, j)];
                }
            }
            for i in 0..h.nrows() {
                for j in 0..n {
                    pencil[(n + i, j)] = Complex64::new(h[(i, j)], 0.0);
                }
            }
            linalg::rank(&pencil, 1e-10) < n
        })
        .collect()
}

/// Unstable (or marginal) eigenvalues of `f` that `g` cannot reach.
pub fn unstabilizable_modes(f: &Mat, g: &Mat) -> Vec<Complex64> {
    undetectable_modes(&f.transpose(), &g.transpose())
}

/// `‖F Σ + Σ F^T + N − (Σ H^T + M)(Σ H^T + M)^T‖_F`.
pub fn filter_residual(model: &LinearModel, sigma: &Mat) -> f64 {
    let k = sigma * model.h.transpose() + &model.m;
    frobenius(&(&model.f * sigma + sigma * model.f.transpose() + &model.n - &k * k.transpose()))
}

/// Kalman gain `K = Σ̂ H^T + M`.
pub fn filter_gain(model: &LinearModel, sigma_hat: &Mat) -> Mat {
    sigma_hat * model.h.transpose() + &model.m
}

/// Stabilizing steady state of the conditional covariance. Exists whenever
/// `(F, H)` is detectable, even if `F` itself is unstable.
pub fn solve_filter_riccati(model: &LinearModel) -> Result<SteadyState> {
    if model.n_outputs() == 0 {
        return unconditional_steady_state(model)
            .map_err(|e| Error::NoStabilizingSolution(format!("no measurement and {e}")));
    }
    let bad = undetectable_modes(&model.f, &model.h);
    if !bad.is_empty() {
        return Err(Error::NoStabilizingSolution(format!(
            "(F, H) not detectable; unobserved unstable modes {bad:?}"
        )));
    }
    let mh = &model.m * &model.h;
    let a = (&model.f - &mh).transpose();
    let b = model.h.transpose() * &model.h;
    let q = symmetrize(&(&model.n - &model.m * model.m.transpose()));
    let sigma = solve_care(&a, &b, &q)?;
    let residual = filter_residual(model, &sigma);
    let scale = 2.0 * frobenius(&model.f) * frobenius(&sigma)
        + frobenius(&model.n)
        + frobenius(&filter_gain(model, &sigma)).powi(2);
    if !residual.is_finite() || residual > REJECT_RELATIVE_RESIDUAL * scale.max(1.0) {
        return Err(Error::Numerical(format!(
            "filter Riccati residual {residual:.3e} too large"
        )));
    }
    Ok(SteadyState { sigma, residual })
}

/// Optimal state feedback for the cost `∫ (X^T P X + u^T Q u) dt`:
/// `F^T Ω + Ω F + P − Ω G Q⁻¹ G^T Ω = 0`, `u = −Q⁻¹ G^T Ω X̂`.
pub fn solve_control_riccati(model: &LinearModel, p: &Mat, q: &Mat) -> Result<ControlSolution> {
    let dim = model.dim();
    require_same(&model.f, p, "state cost")?;
    if q.nrows() != model.n_controls() || q.ncols() != model.n_controls() {
        return Err(Error::DimensionMismatch {
            context: "control cost".into(),
            expected: model.n_controls(),
            found: q.nrows(),
        });
    }
    let q_inv = q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("control cost Q not positive definite".into()))?
        .inverse();
    if linalg::min_eig_symmetric(p) < -1e-12 * p.abs().max().max(1.0) {
        return Err(Error::InvalidArgument("state cost P not positive semidefinite".into()));
    }
    let bad = unstabilizable_modes(&model.f, &model.g);
    if !bad.is_empty() {
        return Err(Error::NoStabilizingSolution(format!(
            "(F, G) not stabilizable; uncontrollable unstable modes {bad:?}"
        )));
    }
    let b = symmetrize(&(&model.g * &q_inv * model.g.transpose()));
    let omega = if dim == 0 { Mat::zeros(0, 0) } else { solve_care(&model.f, &b, p)? };
    let residual = care_residual(&model.f, &b, p, &omega);
    let scale = 2.0 * frobenius(&model.f) * frobenius(&omega)
        + frobenius(p)
        + frobenius(&omega).powi(2) * frobenius(&b);
    if !residual.is_finite() || residual > REJECT_RELATIVE_RESIDUAL * scale.max(1.0) {
        return Err(Error::Numerical(format!(
            "control Riccati residual {residual:.3e} too large"
        )));
    }
    let cgain = q_inv * model.g.transpose() * &omega;
    Ok(ControlSolution {
        cgain,
        omega,
        residual,
    })
}

/// Closed-loop covariance split and the full controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub sigma_total: Mat,
    pub controller: ControllerGain,
    /// Lyapunov residual of `Ξ`.
    pub residual: f64,
}

/// Closed-loop covariance `Σ̂ + Ξ` and feedback effort `tr(C Ξ C^T)` where
/// `(F − G C) Ξ + Ξ (F − G C)^T + K K^T = 0`.
pub fn closed_loop_covariance(
    model: &LinearModel,
    filter: &SteadyState,
    control: &ControlSolution,
) -> Result<ClosedLoop> {
    let kgain = filter_gain(model, &filter.sigma);
    let closed = &model.f - &model.g * &control.cgain;
    let xi = solve_lyapunov(&closed, &symmetrize(&(&kgain * kgain.transpose())))?;
    let effort = (&control.cgain * &xi.sigma * control.cgain.transpose()).trace();
    Ok(ClosedLoop {
        sigma_total: &filter.sigma + &xi.sigma,
        controller: ControllerGain {
            cgain: control.cgain.clone(),
            omega: control.omega.clone(),
            kgain,
            xi: xi.sigma,
            effort,
        },
        residual: xi.residual,
    })
}

/// Filter, controller and closed loop in one go.
pub fn lqg(model: &LinearModel, p: &Mat, q: &Mat) -> Result<(SteadyState, ControlSolution, ClosedLoop)> {
    let filter = solve_filter_riccati(model)?;
    let control = solve_control_riccati(model, p, q)?;
    let closed = closed_loop_covariance(model, &filter, &control)?;
    Ok((filter, control, closed))
}
