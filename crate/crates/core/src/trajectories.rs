//! Stochastic integration of conditional (filtered) dynamics.
//!
//! The conditional mean obeys `dX̂ = F X̂ dt + K(t) dW̃` where `dW̃` is the
//! white innovation of the measurement record `I dt = H X̂ dt + dW̃`, and the
//! conditional covariance follows the deterministic Riccati equation
//! `dΣ̂/dt = F Σ̂ + Σ̂ F^T + N − K K^T` with `K = Σ̂ H^T + M`.
//!
//! `Σ̂(t)` is integrated once with classical RK4 and shared by all paths.
//! Each path advances the mean with the exact drift propagator `e^{F dt}`
//! plus an Euler–Maruyama noise increment, which avoids the spurious
//! amplification plain Euler steps give to weakly damped oscillators.
//!
//! Correlated measurement noise (covariance `W dt`) is pre-whitened with the
//! Cholesky factor `W = L L^T`, so the filter always sees unit innovations;
//! emitted currents are mapped back to the physical frame.

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gme::LinearModel;
use crate::linalg::{self, symmetrize, Mat};
use crate::solvers::ControllerGain;

/// Largest allowed `dt · max(κ-like rate, ω)`.
pub const MAX_STEP_RATE: f64 = 0.05;

/// Per-unit-time covariance of the measurement noise increments.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub covariance: Mat,
    factor: Mat,
}

impl NoiseSpec {
    pub fn new(covariance: Mat) -> Result<Self> {
        if covariance.nrows() != covariance.ncols() {
            return Err(Error::DimensionMismatch {
                context: "noise covariance columns".into(),
                expected: covariance.nrows(),
                found: covariance.ncols(),
            });
        }
        let covariance = symmetrize(&covariance);
        let scale = covariance.abs().max().max(1.0);
        if covariance.nrows() > 0 && linalg::min_eig_symmetric(&covariance) < -1e-12 * scale {
            return Err(Error::InvalidArgument(
                "noise covariance is not positive semidefinite".into(),
            ));
        }
        // Cholesky when definite; symmetric square root for singular (but
        // PSD) covariances.
        let factor = match covariance.clone().cholesky() {
            Some(ch) => ch.l(),
            None => {
                let eig = covariance.clone().symmetric_eigen();
                let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
                &eig.eigenvectors * Mat::from_diagonal(&root) * eig.eigenvectors.transpose()
            }
        };
        Ok(Self { covariance, factor })
    }

    pub fn identity(m: usize) -> Self {
        Self {
            covariance: Mat::identity(m, m),
            factor: Mat::identity(m, m),
        }
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    fn is_identity(&self) -> bool {
        self.covariance == Mat::identity(self.dim(), self.dim())
    }

    /// Factor `L` with `L L^T = W` (lower-triangular when `W` is definite).
    pub fn factor(&self) -> &Mat {
        &self.factor
    }
}

/// One increment `L z √dt` with `z` standard normal.
pub fn correlated_increments<R: rand::Rng + ?Sized>(
    spec: &NoiseSpec,
    dt: f64,
    rng: &mut R,
) -> DVector<f64> {
    let z = DVector::from_fn(spec.dim(), |_, _| StandardNormal.sample(rng));
    spec.factor() * z * dt.sqrt()
}

/// Integration settings shared by all paths.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub t_final: f64,
    pub dt: f64,
    /// Keep every `record_every`-th step (the first and last are always kept).
    pub record_every: usize,
    /// Initial conditional mean, zero if absent.
    pub mean0: Option<DVector<f64>>,
    /// Initial conditional covariance, vacuum if absent.
    pub sigma0: Option<Mat>,
    /// Measurement noise covariance, identity if absent.
    pub noise: Option<NoiseSpec>,
}

impl SimOptions {
    pub fn new(t_final: f64, dt: f64) -> Self {
        Self {
            t_final,
            dt,
            record_every: 1,
            mean0: None,
            sigma0: None,
            noise: None,
        }
    }

    pub fn record_every(mut self, k: usize) -> Self {
        self.record_every = k.max(1);
        self
    }

    pub fn with_initial(mut self, mean0: Option<DVector<f64>>, sigma0: Option<Mat>) -> Self {
        self.mean0 = mean0;
        self.sigma0 = sigma0;
        self
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = Some(noise);
        self
    }

    fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPath {
    pub times: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<Mat>,
    /// Photocurrents averaged over the step ending at each recorded time
    /// (empty vector at `t = 0`).
    pub currents: Vec<DVector<f64>>,
    pub seed: u64,
    pub path_index: u64,
}

/// Largest characteristic rate of a model: the spectral radius of `F` and
/// the diagonal of `N` (thermal injection).
fn characteristic_rate(model: &LinearModel) -> f64 {
    let spectral = linalg::eigenvalues(&model.f)
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let diffusion = model.n.diagonal().iter().copied().fold(0.0, f64::max);
    let frob = model.f.abs().max();
    spectral.max(frob).max(diffusion)
}

fn validate(model: &LinearModel, opts: &SimOptions) -> Result<()> {
    if !(opts.dt > 0.0 && opts.t_final >= 0.0 && opts.dt.is_finite() && opts.t_final.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "invalid time grid: T = {}, dt = {}",
            opts.t_final, opts.dt
        )));
    }
    let rate = characteristic_rate(model).max(1.0);
    if opts.dt * rate > MAX_STEP_RATE {
        return Err(Error::InvalidArgument(format!(
            "dt = {} too large for rate {rate:.4} (dt * rate must not exceed {MAX_STEP_RATE})",
            opts.dt
        )));
    }
    if let Some(noise) = &opts.noise {
        if noise.dim() != model.n_outputs() {
            return Err(Error::DimensionMismatch {
                context: "noise spec".into(),
                expected: model.n_outputs(),
                found: noise.dim(),
            });
        }
    }
    Ok(())
}

/// Rescale outputs so the measurement noise becomes white with unit
/// intensity: `H → L⁻¹ H`, `M → M L⁻ᵀ`.
pub fn whiten(model: &LinearModel, noise: &NoiseSpec) -> Result<LinearModel> {
    if noise.is_identity() {
        return Ok(model.clone());
    }
    let l_inv = noise.factor().clone().try_inverse().ok_or_else(|| {
        Error::InvalidArgument("noise covariance must be positive definite to whiten".into())
    })?;
    Ok(LinearModel {
        h: &l_inv * &model.h,
        m: &model.m * l_inv.transpose(),
        ..model.clone()
    })
}

fn riccati_rhs(model: &LinearModel, sigma: &Mat) -> Mat {
    let k = sigma * model.h.transpose() + &model.m;
    &model.f * sigma + sigma * model.f.transpose() + &model.n - &k * k.transpose()
}

/// Deterministic part shared by all paths: the filter gain at every step and
/// the covariance at recorded steps.
struct Schedule {
    dim: usize,
    n_out: usize,
    /// `e^{F dt}`, row-major.
    propagator: Vec<f64>,
    /// Filter gain used on step `k`, row-major `dim × n_out` blocks.
    gains: Vec<f64>,
    /// Whitened output matrix, row-major.
    h: Vec<f64>,
    /// Maps whitened innovations to physical currents, row-major.
    unwhiten: Vec<f64>,
    record_steps: Vec<usize>,
    covs: Vec<Mat>,
}

fn row_major(m: &Mat) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn record_steps(steps: usize, every: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=steps).step_by(every).collect();
    if *v.last().unwrap() != steps {
        v.push(steps);
    }
    v
}

fn build_schedule(model: &LinearModel, opts: &SimOptions, fixed_gain: Option<&Mat>) -> Result<Schedule> {
    validate(model, opts)?;
    let noise = opts
        .noise
        .clone()
        .unwrap_or_else(|| NoiseSpec::identity(model.n_outputs()));
    let white = whiten(model, &noise)?;
    let dim = model.dim();
    let n_out = model.n_outputs();
    let steps = opts.steps();
    let dt = opts.dt;
    let recorded = record_steps(steps, opts.record_every);

    let mut sigma = opts
        .sigma0
        .clone()
        .unwrap_or_else(|| Mat::identity(dim, dim) * 0.5);
    if sigma.shape() != (dim, dim) {
        return Err(Error::DimensionMismatch {
            context: "initial covariance".into(),
            expected: dim,
            found: sigma.nrows(),
        });
    }
    let mut gains = Vec::with_capacity(steps * dim * n_out);
    let mut covs = Vec::with_capacity(recorded.len());
    let mut next_record = 0;
    for step in 0..=steps {
        if next_record < recorded.len() && recorded[next_record] == step {
            covs.push(sigma.clone());
            next_record += 1;
        }
        if step == steps {
            break;
        }
        match fixed_gain {
            Some(k) => gains.extend(row_major(k)),
            None => {
                let k = &sigma * white.h.transpose() + &white.m;
                gains.extend(row_major(&k));
                let k1 = riccati_rhs(&white, &sigma);
                let k2 = riccati_rhs(&white, &(&sigma + &k1 * (dt / 2.0)));
                let k3 = riccati_rhs(&white, &(&sigma + &k2 * (dt / 2.0)));
                let k4 = riccati_rhs(&white, &(&sigma + &k3 * dt));
                sigma = symmetrize(&(&sigma + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)));
                if !sigma.iter().all(|x| x.is_finite()) {
                    return Err(Error::Numerical("Riccati integration diverged".into()));
                }
            }
        }
    }
    Ok(Schedule {
        dim,
        n_out,
        propagator: row_major(&(&white.f * dt).exp()),
        gains,
        h: row_major(&white.h),
        unwhiten: row_major(noise.factor()),
        record_steps: recorded,
        covs,
    })
}

fn run_path(schedule: &Schedule, opts: &SimOptions, drift: &[f64], seed: u64, path_index: u64) -> TrajectoryPath {
    let (dim, n_out) = (schedule.dim, schedule.n_out);
    let dt = opts.dt;
    let sqrt_dt = dt.sqrt();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(path_index);

    let mut x: Vec<f64> = match &opts.mean0 {
        Some(m) => m.iter().copied().collect(),
        None => vec![0.0; dim],
    };
    let mut next = vec![0.0; dim];
    let mut dw = vec![0.0; n_out];
    let mut current = vec![0.0; n_out];

    let n_rec = schedule.record_steps.len();
    let mut path = TrajectoryPath {
        times: Vec::with_capacity(n_rec),
        means: Vec::with_capacity(n_rec),
        covs: schedule.covs.clone(),
        currents: Vec::with_capacity(n_rec),
        seed,
        path_index,
    };
    path.times.push(0.0);
    path.means.push(DVector::from_column_slice(&x));
    path.currents.push(DVector::zeros(0));

    let steps = *schedule.record_steps.last().unwrap();
    let mut rec = 1;
    for step in 0..steps {
        for w in dw.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *w = z * sqrt_dt;
        }
        // Whitened current over the step: I_w dt = H_w X̂ dt + dW̃.
        for o in 0..n_out {
            let mut hx = 0.0;
            for j in 0..dim {
                hx += schedule.h[o * dim + j] * x[j];
            }
            current[o] = hx + dw[o] / dt;
        }
        let gain = &schedule.gains[step * dim * n_out..(step + 1) * dim * n_out];
        for i in 0..dim {
            let mut acc = 0.0;
            for j in 0..dim {
                acc += drift[i * dim + j] * x[j];
            }
            for o in 0..n_out {
                acc += gain[i * n_out + o] * dw[o];
            }
            next[i] = acc;
        }
        std::mem::swap(&mut x, &mut next);

        if rec < n_rec && schedule.record_steps[rec] == step + 1 {
            path.times.push((step + 1) as f64 * dt);
            path.means.push(DVector::from_column_slice(&x));
            let physical = DVector::from_fn(n_out, |o, _| {
                (0..n_out).map(|q| schedule.unwhiten[o * n_out + q] * current[q]).sum()
            });
            path.currents.push(physical);
            rec += 1;
        }
    }
    path
}

fn ensemble(
    schedule: &Schedule,
    opts: &SimOptions,
    drift: &[f64],
    seed: u64,
    n_paths: usize,
) -> Vec<TrajectoryPath> {
    (0..n_paths as u64)
        .into_par_iter()
        .map(|k| run_path(schedule, opts, drift, seed, k))
        .collect()
}

/// One conditional trajectory (stream 0 of `seed`).
pub fn simulate_conditional(model: &LinearModel, opts: &SimOptions, seed: u64) -> Result<TrajectoryPath> {
    Ok(simulate_conditional_ensemble(model, opts, seed, 1)?.remove(0))
}

/// `n_paths` independent conditional trajectories; path `k` uses stream `k`
/// of the generator seeded with `seed`, so results do not depend on thread
/// scheduling.
pub fn simulate_conditional_ensemble(
    model: &LinearModel,
    opts: &SimOptions,
    seed: u64,
    n_paths: usize,
) -> Result<Vec<TrajectoryPath>> {
    let schedule = build_schedule(model, opts, None)?;
    let drift = schedule.propagator.clone();
    Ok(ensemble(&schedule, opts, &drift, seed, n_paths))
}

/// Closed-loop filter `dX̂ = (F − G C) X̂ dt + K dW̃` with the steady-state
/// gains of an LQG controller; the recorded covariance is `Σ̂_ss`.
pub fn simulate_closed_loop_ensemble(
    model: &LinearModel,
    gains: &ControllerGain,
    sigma_hat: &Mat,
    opts: &SimOptions,
    seed: u64,
    n_paths: usize,
) -> Result<Vec<TrajectoryPath>> {
    if opts.noise.as_ref().is_some_and(|n| !n.is_identity()) {
        return Err(Error::InvalidArgument(
            "closed-loop simulation expects white measurement noise".into(),
        ));
    }
    let closed = LinearModel {
        f: &model.f - &model.g * &gains.cgain,
        ..model.clone()
    };
    let opts = SimOptions {
        sigma0: Some(sigma_hat.clone()),
        ..opts.clone()
    };
    let schedule = build_schedule(&closed, &opts, Some(&gains.kgain))?;
    let drift = schedule.propagator.clone();
    Ok(ensemble(&schedule, &opts, &drift, seed, n_paths))
}

pub fn simulate_closed_loop(
    model: &LinearModel,
    gains: &ControllerGain,
    sigma_hat: &Mat,
    opts: &SimOptions,
    seed: u64,
) -> Result<TrajectoryPath> {
    Ok(simulate_closed_loop_ensemble(model, gains, sigma_hat, opts, seed, 1)?.remove(0))
}

/// Sample second moment `E[X̂ X̂^T]` across paths at recorded index `index`.
pub fn ensemble_covariance(paths: &[TrajectoryPath], index: usize) -> Result<Mat> {
    let first = paths
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty ensemble".into()))?;
    if paths.len() < 2 {
        return Err(Error::InvalidArgument("need at least two paths".into()));
    }
    if index >= first.times.len() {
        return Err(Error::InvalidArgument(format!("time index {index} out of range")));
    }
    let dim = first.means[index].len();
    let mut acc = Mat::zeros(dim, dim);
    for p in paths {
        if p.times != first.times {
            return Err(Error::InvalidArgument("paths use different time grids".into()));
        }
        let x = &p.means[index];
        acc += x * x.transpose();
    }
    Ok(acc / paths.len() as f64)
}

/// Write paths as CSV: `path,t,mean_*,cov_*(diagonal),current_*`.
pub fn write_csv<W: Write>(paths: &[TrajectoryPath], mut out: W) -> std::io::Result<()> {
    let Some(first) = paths.first() else {
        return Ok(());
    };
    let dim = first.means[0].len();
    let n_out = first.currents.last().map(|c| c.len()).unwrap_or(0);
    let mut header = vec!["path".to_string(), "t".to_string()];
    header.extend((0..dim).map(|i| format!("mean_{i}")));
    header.extend((0..dim).map(|i| format!("cov_{i}{i}")));
    header.extend((0..n_out).map(|i| format!("current_{i}")));
    writeln!(out, "{}", header.join(","))?;
    for p in paths {
        for k in 0..p.times.len() {
            let mut row = vec![p.path_index.to_string(), fmt_num(p.times[k])];
            row.extend(p.means[k].iter().map(|&v| fmt_num(v)));
            row.extend((0..dim).map(|i| fmt_num(p.covs[k][(i, i)])));
            if p.currents[k].len() == n_out {
                row.extend(p.currents[k].iter().map(|&v| fmt_num(v)));
            } else {
                row.extend((0..n_out).map(|_| "nan".to_string()));
            }
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}

/// Shortest round-trip decimal; NaN as `nan`.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}
