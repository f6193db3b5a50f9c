//! Experiment pipelines: phase diagram points, LQG feedback cooling,
//! teleportation of squeezing, and entanglement swapping, plus the analytic
//! swap formulas and scalar optimizers over their free parameters.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::gme::LinearModel;
use crate::linalg::Mat;
use crate::measures::{self, GaussianState};
use crate::optim::{argmin, golden_section, nelder_mead};
use crate::optomech::{
    self, full_model, lqg_weights, swap_model, teleport_model, OptomechParams, SqueezedNoise,
    SwapConfig,
};
use crate::solvers::{self, is_hurwitz, SteadyState};

/// Default mechanical energy weight of the cooling cost function.
pub const DEFAULT_HM: f64 = 100.0;

/// One point of the optomechanical phase diagram.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub stable: bool,
    /// Unconditional mechanical occupation (NaN when unstable).
    pub n_ss: f64,
    /// Unconditional light–mechanics entanglement (NaN when unstable).
    pub en: f64,
    /// Conditional mechanical occupation (NaN if the filter has no solution).
    pub n_cond: f64,
    /// Largest residual of the accepted solutions.
    pub residual: f64,
    /// Smallest uncertainty margin of the accepted covariances.
    pub margin: f64,
}

pub fn phase_point(params: &OptomechParams) -> Result<PhasePoint> {
    let model = full_model(params)?;
    let mut residual: f64 = 0.0;
    let mut margin = f64::INFINITY;
    let stable = is_hurwitz(&model.f);
    let (n_ss, en) = if stable {
        let ss = solvers::unconditional_steady_state(&model)?;
        residual = residual.max(ss.residual);
        let state = GaussianState::centered(ss.sigma);
        margin = margin.min(state.uncertainty_margin());
        (
            measures::occupation(&state, 0),
            measures::log_negativity(&state.sigma)?,
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    let n_cond = match solvers::solve_filter_riccati(&model) {
        Ok(ss) => {
            residual = residual.max(ss.residual);
            let state = GaussianState::centered(ss.sigma);
            margin = margin.min(state.uncertainty_margin());
            measures::occupation(&state, 0)
        }
        Err(_) => f64::NAN,
    };
    Ok(PhasePoint {
        stable,
        n_ss,
        en,
        n_cond,
        residual,
        margin,
    })
}

/// Conditional steady state of the full model under continuous homodyne
/// detection of the cavity output.
pub fn conditional_state(params: &OptomechParams) -> Result<SteadyState> {
    solvers::solve_filter_riccati(&full_model(params)?)
}

/// Mechanical occupation of the conditional steady state. Defined even when
/// the unconditional dynamics is unstable.
pub fn conditional_occupation(params: &OptomechParams) -> Result<f64> {
    let ss = conditional_state(params)?;
    Ok(measures::occupation(&GaussianState::centered(ss.sigma), 0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoolingResult {
    pub n_ss: f64,
    pub phi_opt: f64,
    pub effort: f64,
    pub stable: bool,
    pub residual: f64,
    pub margin: f64,
    pub diagnostic: Option<String>,
}

impl CoolingResult {
    fn failed(phi: f64, err: &Error) -> Self {
        Self {
            n_ss: f64::NAN,
            phi_opt: phi,
            effort: f64::NAN,
            stable: false,
            residual: f64::NAN,
            margin: f64::NAN,
            diagnostic: Some(err.to_string()),
        }
    }
}

fn cooling_closed_loop(params: &OptomechParams, h_m: f64) -> Result<CoolingResult> {
    if !(h_m > 0.0) {
        return Err(Error::InvalidArgument(format!("h_m = {h_m}")));
    }
    let model = full_model(params)?;
    let (p, q) = lqg_weights(h_m);
    let (filter, control, closed) = solvers::lqg(&model, &p, &q)?;
    let state = GaussianState::centered(closed.sigma_total);
    Ok(CoolingResult {
        n_ss: measures::occupation(&state, 0),
        phi_opt: params.phi,
        effort: closed.controller.effort,
        stable: true,
        residual: filter.residual.max(control.residual).max(closed.residual),
        margin: state.uncertainty_margin(),
        diagnostic: None,
    })
}

/// LQG feedback cooling at the LO angle in `params`.
pub fn cooling_point(params: &OptomechParams, h_m: f64) -> CoolingResult {
    cooling_closed_loop(params, h_m).unwrap_or_else(|e| CoolingResult::failed(params.phi, &e))
}

fn wrap_angle(phi: f64) -> f64 {
    let w = phi.rem_euclid(PI);
    if (PI - w) < 1e-12 {
        0.0
    } else {
        w
    }
}

/// Cooling with the LO angle minimized over `[0, π)`: a 32-point grid seeds
/// a Nelder–Mead refinement. The objective is π-periodic in the angle.
pub fn optimize_phi(params: &OptomechParams, h_m: f64) -> CoolingResult {
    optimize_phi_from(params, h_m, 0.0)
}

/// As [`optimize_phi`] but scanning `[start, start + π)`; the returned angle
/// lies in that window.
pub fn optimize_phi_from(params: &OptomechParams, h_m: f64, start: f64) -> CoolingResult {
    const GRID: usize = 32;
    let objective = |phi: f64| cooling_point(&OptomechParams { phi, ..*params }, h_m).n_ss;
    let phis: Vec<f64> = (0..GRID).map(|k| start + PI * k as f64 / GRID as f64).collect();
    let values: Vec<f64> = phis.iter().map(|&phi| objective(phi)).collect();
    let Some(best) = argmin(&values) else {
        let mut r = cooling_point(&OptomechParams { phi: start, ..*params }, h_m);
        r.diagnostic = Some(format!(
            "no stable LO angle: {}",
            r.diagnostic.unwrap_or_default()
        ));
        return r;
    };
    let (x, _) = nelder_mead(
        |x| objective(x[0]),
        &[phis[best]],
        PI / GRID as f64 / 2.0,
        1e-7,
        200,
    );
    let mut phi = x[0];
    if !objective(phi).is_finite() || objective(phi) > values[best] {
        phi = phis[best];
    }
    let phi = start + wrap_angle(phi - start);
    cooling_point(&OptomechParams { phi, ..*params }, h_m)
}

/// Steady-state squeezing (dB) of the teleportation model and its covariance.
pub fn teleport_point(
    params: &OptomechParams,
    noise: &SqueezedNoise,
    epsilon: Option<f64>,
) -> Result<(f64, SteadyState)> {
    let model = teleport_model(params, noise, epsilon)?;
    let ss = solvers::unconditional_steady_state(&model)?;
    measures::check_physical(&ss.sigma)?;
    Ok((measures::squeezing_db(&ss.sigma)?, ss))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapResult {
    pub en: f64,
    pub epr: f64,
    pub sigma_opt: f64,
    pub stable: bool,
    pub residual: f64,
    pub margin: f64,
}

impl SwapResult {
    fn unstable(sigma: f64) -> Self {
        Self {
            en: f64::NAN,
            epr: f64::NAN,
            sigma_opt: sigma,
            stable: false,
            residual: f64::NAN,
            margin: f64::NAN,
        }
    }
}

fn swap_steady_state(
    params: &OptomechParams,
    cfg: &SwapConfig,
    epsilon: Option<f64>,
) -> Result<Option<(LinearModel, SteadyState)>> {
    let model = swap_model(params, cfg, epsilon)?;
    if !is_hurwitz(&model.f) {
        return Ok(None);
    }
    let ss = solvers::unconditional_steady_state(&model)?;
    Ok(Some((model, ss)))
}

/// Entanglement of the two mechanical modes in the swap steady state.
pub fn swap_point(
    params: &OptomechParams,
    cfg: &SwapConfig,
    epsilon: Option<f64>,
) -> Result<SwapResult> {
    let Some((_, ss)) = swap_steady_state(params, cfg, epsilon)? else {
        return Ok(SwapResult::unstable(cfg.sigma));
    };
    let state = GaussianState::centered(ss.sigma);
    Ok(SwapResult {
        en: measures::log_negativity(&state.sigma)?,
        epr: measures::epr_variance(&state.sigma)?,
        sigma_opt: cfg.sigma,
        stable: true,
        residual: ss.residual,
        margin: state.uncertainty_margin(),
    })
}

/// Lower end of the stable feedback-gain interval, or an error naming the
/// violated stability inequality when no gain stabilizes the loop.
pub fn swap_sigma_lower_bound(params: &OptomechParams, upsilon: f64, epsilon: f64) -> Result<f64> {
    let k2 = params.readout_rate();
    let ratio = if k2 > 0.0 { params.gamma / k2 } else { f64::INFINITY };
    if !(3.0 + epsilon + ratio > 4.0 * upsilon) {
        return Err(Error::NoBracket(format!(
            "3 + eps + gamma*kappa/(4g^2) = {} does not exceed 4*upsilon = {}",
            3.0 + epsilon + ratio,
            4.0 * upsilon
        )));
    }
    Ok((((1.0 - epsilon) - ratio) / (4.0 * upsilon)).max(0.0))
}

/// Swap entanglement maximized over the feedback gain within the stable
/// interval: a 48-point scan seeds a golden-section refinement of the
/// unclamped `−ln(2ν̃₋)`.
pub fn optimize_sigma(
    params: &OptomechParams,
    upsilon: f64,
    eta: f64,
    epsilon: Option<f64>,
) -> Result<SwapResult> {
    const GRID: usize = 48;
    let eps = epsilon.unwrap_or_else(|| params.epsilon());
    let lo = swap_sigma_lower_bound(params, upsilon, eps)?;
    let lo = lo * (1.0 + 1e-9) + 1e-9;
    let hi = lo + 10.0;
    let objective = |sigma: f64| -> f64 {
        let cfg = SwapConfig { upsilon, sigma, eta };
        match swap_steady_state(params, &cfg, epsilon) {
            Ok(Some((_, ss))) => -measures::log_negativity_unclamped(&ss.sigma).unwrap_or(f64::NAN),
            _ => f64::NAN,
        }
    };
    let grid: Vec<f64> = (0..GRID)
        .map(|k| lo + (hi - lo) * (k as f64 / (GRID - 1) as f64).powi(2))
        .collect();
    let values: Vec<f64> = grid.iter().map(|&s| objective(s)).collect();
    let best = argmin(&values).ok_or_else(|| {
        Error::NoBracket("no stable feedback gain in the scanned interval".into())
    })?;
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(GRID - 1)];
    let (sigma, v) = golden_section(objective, a, b, 1e-7);
    let sigma = if v <= values[best] { sigma } else { grid[best] };
    swap_point(params, &SwapConfig { upsilon, sigma, eta }, epsilon)
}

/// Closed-form steady-state log-negativity of the ideal swap protocol
/// (ε = 0, η = 1), clamped at zero.
pub fn analytic_en(c: f64, nbar: f64, sigma: f64, upsilon: f64) -> f64 {
    let cn = c * (nbar + 1.0);
    let num = 0.5 * cn * (3.0 * sigma - 1.0) * (4.0 * upsilon - 1.0) + 1.0;
    let den = cn * (3.0 * sigma * (sigma - 1.0) + 1.0) + 2.0 * nbar + 1.0;
    let ratio = num / den;
    if ratio > 1.0 {
        ratio.ln()
    } else {
        0.0
    }
}

/// Cooperativity above which the ideal swap protocol entangles, at bath
/// occupation `nbar` (pass `f64::INFINITY` for the high-temperature limit
/// `4 / [3σ(1+4υ−2σ) − (1+4υ)]`). Infinite when no cooperativity suffices.
pub fn swap_critical_cooperativity(upsilon: f64, sigma: f64, nbar: f64) -> f64 {
    let slope = 3.0 * sigma * (1.0 + 4.0 * upsilon - 2.0 * sigma) - (1.0 + 4.0 * upsilon);
    if slope <= 0.0 {
        return f64::INFINITY;
    }
    let thermal = if nbar.is_infinite() { 1.0 } else { nbar / (nbar + 1.0) };
    4.0 * thermal / slope
}

/// Routh–Hurwitz condition of the swap feedback loop,
/// `3 + ε + γκ/(4g²) > 4υ > [(1 − ε) − γκ/(4g²)]/σ`.
pub fn swap_stability(g: f64, kappa: f64, gamma: f64, epsilon: f64, upsilon: f64, sigma: f64) -> bool {
    let k2 = 4.0 * g * g / kappa;
    let ratio = if k2 > 0.0 { gamma / k2 } else { f64::INFINITY };
    3.0 + epsilon + ratio > 4.0 * upsilon && 4.0 * upsilon * sigma > (1.0 - epsilon) - ratio
}

/// First crossing of `threshold` along `curve`, by linear interpolation.
pub fn critical_crossing(curve: &[(f64, f64)], threshold: f64) -> Result<f64> {
    for w in curve.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        let (d0, d1) = (y0 - threshold, y1 - threshold);
        if !(d0.is_finite() && d1.is_finite()) {
            continue;
        }
        if d0 == 0.0 {
            return Ok(x0);
        }
        if d0.signum() != d1.signum() {
            return Ok(x0 + (x1 - x0) * d0 / (d0 - d1));
        }
    }
    Err(Error::NoBracket(format!(
        "curve never crosses {threshold}"
    )))
}

/// Parameters with the coupling chosen to realize cooperativity `c`.
pub fn at_cooperativity(params: &OptomechParams, c: f64) -> OptomechParams {
    OptomechParams {
        g: optomech::g_from_cooperativity(params, c),
        ..*params
    }
}

/// Unconditional covariance of the full model (for diagnostics).
pub fn unconditional_covariance(params: &OptomechParams) -> Result<Mat> {
    Ok(solvers::unconditional_steady_state(&full_model(params)?)?.sigma)
}
