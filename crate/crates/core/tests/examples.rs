//! Worked examples for the protocol pipelines and the trajectory simulator.

use std::f64::consts::{LN_2, PI};

use nalgebra::DVector;

use optoctl::linalg::{self, frobenius, Mat};
use optoctl::measures::{self, GaussianState};
use optoctl::optomech::{
    full_model, lqg_weights, pure_squeezed_noise, squeezed_noise, swap_model, teleport_model,
    OptomechParams, SwapConfig,
};
use optoctl::protocols::{
    self, at_cooperativity, conditional_occupation, cooling_point, optimize_phi, optimize_phi_from,
    optimize_sigma, swap_point, teleport_point,
};
use optoctl::solvers::{self, filter_gain, is_hurwitz};
use optoctl::trajectories::{
    ensemble_covariance, simulate_closed_loop_ensemble, simulate_conditional,
    simulate_conditional_ensemble, SimOptions, TrajectoryPath,
};

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

fn max_abs(a: &Mat) -> f64 {
    a.abs().max()
}

fn teleport_base(eta: f64, gamma: f64) -> OptomechParams {
    OptomechParams {
        kappa: 0.1,
        gamma,
        nbar: 0.0,
        eta,
        ..Default::default()
    }
}

fn swap_base(nbar: f64) -> OptomechParams {
    OptomechParams {
        kappa: 0.1,
        gamma: 1e-6,
        nbar,
        eta: 1.0,
        ..Default::default()
    }
}

/// Sideband-resolved cooling parameters.
fn cooling(delta: f64) -> OptomechParams {
    OptomechParams {
        kappa: 0.5,
        g: 0.05,
        delta,
        eta: 1.0,
        ..Default::default()
    }
}

// ---- teleportation ----

#[test]
fn teleport_vacuum_input_is_a_fixed_point() {
    let noise = squeezed_noise(0.0, 0.0.into()).unwrap();
    let p = OptomechParams {
        g: 0.05,
        ..teleport_base(1.0, 1e-300)
    };
    let (zeta, ss) = teleport_point(&p, &noise, Some(0.0)).unwrap();
    assert!(max_abs(&(&ss.sigma - Mat::identity(2, 2) * 0.5)) < 1e-12);
    assert!(zeta.abs() < 1e-10, "{zeta}");
}

#[test]
fn teleport_copies_a_pure_input_without_loss() {
    let n: f64 = 0.56;
    let noise = squeezed_noise(n, (-(n * (n + 1.0)).sqrt()).into()).unwrap();
    let expected = 10.0 * (2.0 * n + 1.0 - 2.0 * (n * (n + 1.0)).sqrt()).log10();
    assert!((expected + 6.01).abs() < 0.01);
    for g in [0.005, 0.05, 0.2] {
        let p = OptomechParams {
            g,
            ..teleport_base(1.0, 1e-300)
        };
        let (zeta, _) = teleport_point(&p, &noise, Some(0.0)).unwrap();
        assert!((zeta - expected).abs() < 1e-9, "g = {g}: {zeta} vs {expected}");
    }
}

#[test]
fn teleport_below_efficiency_threshold_only_heats() {
    let noise = pure_squeezed_noise(-6.0).unwrap();
    for c in logspace(0.1, 1e3, 21) {
        let p = at_cooperativity(&teleport_base(0.6, 1e-4), c);
        let (zeta, _) = teleport_point(&p, &noise, None).unwrap();
        assert!(zeta > 0.0, "C = {c}: zeta = {zeta}");
    }
}

#[test]
fn teleport_without_coupling_is_thermal() {
    let noise = pure_squeezed_noise(-6.0).unwrap();
    let p = OptomechParams {
        g: 0.0,
        nbar: 3.0,
        ..teleport_base(1.0, 1e-4)
    };
    let (zeta, _) = teleport_point(&p, &noise, None).unwrap();
    assert!((zeta - 10.0 * 7f64.log10()).abs() < 1e-9);
}

#[test]
fn teleport_model_has_one_mode() {
    let noise = pure_squeezed_noise(-3.0).unwrap();
    let m = teleport_model(&teleport_base(1.0, 1e-4), &noise, None).unwrap();
    assert_eq!(m.dim(), 2);
    assert_eq!(m.n_outputs(), 0);
}

// ---- entanglement swapping ----

fn ideal_swap(c: f64) -> f64 {
    let p = at_cooperativity(&swap_base(0.0), c);
    let cfg = SwapConfig {
        upsilon: 0.75,
        sigma: 1.0,
        eta: 1.0,
    };
    swap_point(&p, &cfg, Some(0.0)).unwrap().en
}

#[test]
fn swap_entanglement_at_unit_cooperativity() {
    assert!((ideal_swap(1.0) - 1.5f64.ln()).abs() < 1e-8);
}

#[test]
fn swap_entanglement_saturates_at_ln_two() {
    let values: Vec<f64> = logspace(1.0, 1e6, 13).into_iter().map(ideal_swap).collect();
    assert!(values.windows(2).all(|w| w[1] > w[0]), "{values:?}");
    let last = *values.last().unwrap();
    assert!(last < LN_2 && LN_2 - last < 1e-4, "{last}");
}

#[test]
fn swap_gain_optimum_beats_unit_gain() {
    for c in logspace(0.5, 100.0, 9) {
        let p = at_cooperativity(&swap_base(0.0), c);
        let unit = swap_point(
            &p,
            &SwapConfig {
                upsilon: 0.75,
                sigma: 1.0,
                eta: 1.0,
            },
            None,
        )
        .unwrap();
        let best = optimize_sigma(&p, 0.75, 1.0, None).unwrap();
        assert!(best.stable);
        assert!(best.en >= unit.en - 1e-12, "C = {c}: {} < {}", best.en, unit.en);
        assert!(best.sigma_opt > 1.0 / 3.0, "C = {c}: sigma* = {}", best.sigma_opt);
    }
}

#[test]
fn swap_entanglement_and_epr_witness_agree() {
    for c in logspace(0.3, 50.0, 8) {
        let p = at_cooperativity(&swap_base(0.2), c);
        let r = optimize_sigma(&p, 0.75, 1.0, None).unwrap();
        assert_eq!(r.en > 0.0, r.epr < 2.0, "C = {c}: E_N = {}, EPR = {}", r.en, r.epr);
    }
}

#[test]
fn swap_model_rejects_bad_split() {
    let cfg = SwapConfig {
        upsilon: 1.5,
        sigma: 1.0,
        eta: 1.0,
    };
    assert!(swap_model(&swap_base(0.0), &cfg, None).is_err());
}

// ---- phase diagram and conditioning ----

#[test]
fn conditioning_on_amplitude_noise_gains_nothing() {
    let p = OptomechParams {
        delta: 0.0,
        g: 0.005,
        phi: 0.0,
        ..Default::default()
    };
    let uncond = measures::occupation(
        &GaussianState::centered(protocols::unconditional_covariance(&p).unwrap()),
        0,
    );
    let cond = conditional_occupation(&p).unwrap();
    assert!(cond <= uncond * (1.0 + 1e-9));
    assert!((uncond - cond) / uncond < 1e-3, "{cond} vs {uncond}");
}

#[test]
fn phase_quadrature_conditions_blue_side_below_one_phonon() {
    for delta in [0.8, 0.9, 1.0, 1.05] {
        let p = OptomechParams {
            delta,
            g: 0.1,
            phi: PI / 2.0,
            ..Default::default()
        };
        assert!(!is_hurwitz(&full_model(&p).unwrap().f));
        let n = conditional_occupation(&p).unwrap();
        assert!(n < 1.0, "delta = {delta}: {n}");
    }
}

#[test]
fn uncoupled_mechanics_stays_thermal() {
    let p = OptomechParams {
        g: 0.0,
        nbar: 50.0,
        gamma: 1e-3,
        ..Default::default()
    };
    assert!((conditional_occupation(&p).unwrap() - 50.0).abs() < 1e-8);
    let r = cooling_point(&p, 100.0);
    assert!(r.stable, "{:?}", r.diagnostic);
    assert!((r.n_ss - 50.0).abs() < 1e-8, "{}", r.n_ss);
    assert!(r.effort.abs() < 1e-10, "{}", r.effort);
}

// ---- feedback cooling ----

#[test]
fn lqg_stabilizes_the_blue_sideband() {
    let p = cooling(1.0);
    let model = full_model(&p).unwrap();
    let (wp, wq) = lqg_weights(100.0);
    let (filter, control, closed) = solvers::lqg(&model, &wp, &wq).unwrap();
    assert!(is_hurwitz(&(&model.f - &model.g * &control.cgain)));
    let k = filter_gain(&model, &filter.sigma);
    assert!(is_hurwitz(&(&model.f - &k * &model.h)));
    assert!(linalg::min_eig_symmetric(&control.omega) >= -1e-9 * max_abs(&control.omega));
    assert!(linalg::min_eig_symmetric(&closed.controller.xi) >= -1e-9 * max_abs(&closed.controller.xi));
}

#[test]
fn zero_state_cost_leaves_the_open_loop() {
    let p = OptomechParams {
        nbar: 20.0,
        gamma: 1e-3,
        ..cooling(-1.0)
    };
    let model = full_model(&p).unwrap();
    assert!(is_hurwitz(&model.f));
    let (_, wq) = lqg_weights(1.0);
    let (_, control, closed) = solvers::lqg(&model, &Mat::zeros(4, 4), &wq).unwrap();
    assert!(max_abs(&control.omega) < 1e-12);
    assert!(max_abs(&control.cgain) < 1e-12);
    assert_eq!(closed.controller.effort, 0.0);
    let uncond = solvers::unconditional_steady_state(&model).unwrap().sigma;
    assert!(max_abs(&(&closed.sigma_total - &uncond)) < 1e-9 * max_abs(&uncond));
}

#[test]
fn effort_ignores_rotations_of_the_control_inputs() {
    let model = full_model(&cooling(-1.0)).unwrap();
    let (wp, wq) = lqg_weights(100.0);
    let (_, _, base) = solvers::lqg(&model, &wp, &wq).unwrap();
    for theta in [0.3, 1.7, -2.4] {
        let (s, c) = f64::sin_cos(theta);
        let rot = Mat::from_row_slice(2, 2, &[c, -s, s, c]);
        let rotated = optoctl::gme::LinearModel {
            g: &model.g * rot.transpose(),
            ..model.clone()
        };
        let (_, _, r) = solvers::lqg(&rotated, &wp, &wq).unwrap();
        assert!((r.controller.effort - base.controller.effort).abs() < 1e-9 * base.controller.effort);
        assert!(max_abs(&(&r.sigma_total - &base.sigma_total)) < 1e-9 * max_abs(&base.sigma_total));
    }
}

#[test]
fn sideband_feedback_prefers_resolved_sidebands() {
    let n = |kappa: f64, delta: f64| {
        let p = OptomechParams {
            kappa,
            g: 0.1,
            delta,
            eta: 1.0,
            ..Default::default()
        };
        let r = optimize_phi(&p, 100.0);
        assert!(r.stable, "{:?}", r.diagnostic);
        r.n_ss
    };
    for delta in [-1.0, 1.0] {
        let (resolved, bad) = (n(0.5, delta), n(4.0, delta));
        assert!(resolved < bad, "delta = {delta}: {resolved} vs {bad}");
    }
}

#[test]
fn bad_cavity_cools_best_on_resonance() {
    let at = |delta: f64| {
        let p = OptomechParams {
            kappa: 4.0,
            g: 0.05,
            delta,
            eta: 1.0,
            ..Default::default()
        };
        optimize_phi(&p, 100.0)
    };
    let resonant = at(0.0);
    assert!((resonant.phi_opt - PI / 2.0).abs() < 1e-2, "phi* = {}", resonant.phi_opt);
    for delta in [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0] {
        let r = at(delta);
        assert!(resonant.n_ss < r.n_ss, "delta = {delta}: {} vs {}", r.n_ss, resonant.n_ss);
    }
}

#[test]
fn lo_angle_optimum_is_pi_periodic_and_minimal() {
    let p = cooling(-1.0);
    let r = optimize_phi(&p, 100.0);
    let shifted = optimize_phi_from(&p, 100.0, PI);
    assert!((shifted.phi_opt - (r.phi_opt + PI)).abs() < 1e-6, "{} vs {}", shifted.phi_opt, r.phi_opt);
    assert!((shifted.n_ss - r.n_ss).abs() < 1e-9 * r.n_ss);
    for k in 0..24 {
        let phi = PI * k as f64 / 24.0;
        let fixed = cooling_point(&OptomechParams { phi, ..p }, 100.0);
        if fixed.stable {
            assert!(r.n_ss <= fixed.n_ss * (1.0 + 1e-12), "phi = {phi}: {} > {}", r.n_ss, fixed.n_ss);
        }
    }
}

#[test]
fn cooling_improves_with_detection_efficiency() {
    let values: Vec<f64> = [0.1, 0.3, 0.5, 0.7, 0.9, 1.0]
        .iter()
        .map(|&eta| optimize_phi(&OptomechParams { eta, ..cooling(-1.0) }, 100.0).n_ss)
        .collect();
    assert!(values.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)), "{values:?}");
}

// ---- trajectories ----

fn margin(cov: &Mat) -> f64 {
    GaussianState::centered(cov.clone()).uncertainty_margin()
}

#[test]
fn filter_covariance_relaxes_to_the_riccati_solution() {
    let p = cooling(-1.0);
    let model = full_model(&p).unwrap();
    let ss = solvers::solve_filter_riccati(&model).unwrap();
    let k = filter_gain(&model, &ss.sigma);
    let relax = linalg::spectral_abscissa(&(&model.f - &k * &model.h)).abs();
    let mut thermal = Mat::identity(4, 4) * 0.5;
    thermal[(0, 0)] += p.nbar;
    thermal[(1, 1)] += p.nbar;
    for sigma0 in [Mat::identity(4, 4) * 0.5, thermal] {
        let opts = SimOptions::new(10.0 / relax, 0.01)
            .record_every(usize::MAX)
            .with_initial(None, Some(sigma0));
        let path = simulate_conditional(&model, &opts, 1).unwrap();
        let last = path.covs.last().unwrap();
        let err = max_abs(&(last - &ss.sigma)) / max_abs(&ss.sigma);
        assert!(err < 1e-6, "{err}");
    }
}

#[test]
fn blue_detuned_mean_grows_while_filter_stays_bounded() {
    let p = OptomechParams {
        delta: 1.0,
        g: 0.1,
        ..Default::default()
    };
    let model = full_model(&p).unwrap();
    let rate = linalg::spectral_abscissa(&model.f);
    assert!(rate > 0.0);
    let ss = solvers::solve_filter_riccati(&model).unwrap();
    let mean0 = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
    let opts = SimOptions::new(12.0 / rate, 0.01)
        .record_every(100)
        .with_initial(Some(mean0), Some(ss.sigma.clone()));
    let path = simulate_conditional(&model, &opts, 7).unwrap();
    let end = path.means.last().unwrap().norm();
    assert!(end > 1e3, "|mean(T)| = {end}");
    for cov in &path.covs {
        assert!(max_abs(&(cov - &ss.sigma)) < 1e-9 * max_abs(&ss.sigma));
    }
}

#[test]
fn filter_covariance_is_physical_at_every_step() {
    let model = full_model(&OptomechParams {
        delta: 0.5,
        g: 0.15,
        eta: 0.7,
        phi: 1.0,
        ..Default::default()
    })
    .unwrap();
    let opts = SimOptions::new(30.0, 0.01);
    let path = simulate_conditional(&model, &opts, 3).unwrap();
    assert_eq!(path.covs.len(), path.times.len());
    for (t, cov) in path.times.iter().zip(&path.covs) {
        assert!(margin(cov) >= -1e-8, "t = {t}: {}", margin(cov));
    }
}

#[test]
fn innovations_are_white() {
    let model = full_model(&cooling(-1.0)).unwrap();
    let ss = solvers::solve_filter_riccati(&model).unwrap();
    let dt = 0.01;
    let opts = SimOptions::new(2000.0, dt).with_initial(None, Some(ss.sigma));
    let path = simulate_conditional(&model, &opts, 11).unwrap();
    let h = &model.h;
    let innov: Vec<f64> = (1..path.times.len())
        .map(|k| (path.currents[k][0] - (h * &path.means[k - 1])[0]) * dt.sqrt())
        .collect();
    let n = innov.len() as f64;
    let var = innov.iter().map(|x| x * x).sum::<f64>() / n;
    assert!((var - 1.0).abs() < 3.0 * (2.0 / n).sqrt(), "variance {var}");
    let se = 1.0 / n.sqrt();
    for lag in 1..=5 {
        let r = innov.windows(lag + 1).map(|w| w[0] * w[lag]).sum::<f64>() / (n * var);
        assert!(r.abs() < 3.0 * se, "lag {lag}: {r} (se {se})");
    }
}

/// Second moments of the final means and their per-entry standard errors.
fn terminal_moments(paths: &[TrajectoryPath]) -> (Mat, Mat) {
    let last = paths[0].times.len() - 1;
    let moment = ensemble_covariance(paths, last).unwrap();
    let n = paths.len() as f64;
    let dim = moment.nrows();
    let se = Mat::from_fn(dim, dim, |i, j| {
        let var = paths
            .iter()
            .map(|p| {
                let x = &p.means[last];
                (x[i] * x[j] - moment[(i, j)]).powi(2)
            })
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    });
    (moment, se)
}

/// Closed-loop LQG pieces plus time-grid options spanning ten relaxation
/// times with a step fine enough for the closed-loop drift.
fn closed_loop_setup(h_m: f64) -> (optoctl::gme::LinearModel, solvers::SteadyState, solvers::ClosedLoop, SimOptions) {
    let model = full_model(&cooling(-1.0)).unwrap();
    let (wp, wq) = lqg_weights(h_m);
    let (filter, control, closed) = solvers::lqg(&model, &wp, &wq).unwrap();
    let drift = &model.f - &model.g * &control.cgain;
    let relax = linalg::spectral_abscissa(&drift).abs();
    let fastest = linalg::eigenvalues(&drift)
        .iter()
        .map(|z| z.norm())
        .fold(max_abs(&drift), f64::max)
        .max(model.n.diagonal().max())
        .max(1.0);
    let dt = 0.04 / fastest;
    let t_final = (10.0 / relax / dt).ceil() * dt;
    let opts = SimOptions::new(t_final, dt).record_every(usize::MAX);
    (model, filter, closed, opts)
}

#[test]
fn closed_loop_ensemble_matches_conditional_mean_covariance() {
    let (model, filter, closed, opts) = closed_loop_setup(100.0);
    let ctl = &closed.controller;
    let paths = simulate_closed_loop_ensemble(&model, ctl, &filter.sigma, &opts, 99, 2000).unwrap();
    let (sample, _) = terminal_moments(&paths);
    let err = frobenius(&(&sample - &ctl.xi)) / frobenius(&ctl.xi);
    assert!(err < 0.05, "relative error {err}");
    let effort = (&ctl.cgain * &sample * ctl.cgain.transpose()).trace();
    assert!((effort - ctl.effort).abs() < 0.05 * ctl.effort, "{effort} vs {}", ctl.effort);
}

/// The controller reaches the mechanics only through the cavity, so the
/// estimate cannot be pinned below a floor; heavy regulation still leaves it
/// a small fraction of the filter's own uncertainty.
#[test]
fn heavier_regulation_pins_the_estimate() {
    let spread = |h_m: f64| {
        let (model, filter, closed, opts) = closed_loop_setup(h_m);
        let paths =
            simulate_closed_loop_ensemble(&model, &closed.controller, &filter.sigma, &opts, 5, 400).unwrap();
        let (sample, _) = terminal_moments(&paths);
        (sample[(0, 0)] + sample[(1, 1)], filter.sigma[(0, 0)] + filter.sigma[(1, 1)])
    };
    let ((light, _), (heavy, uncertainty)) = (spread(1.0), spread(1e4));
    assert!(heavy < 0.5 * light, "{heavy} vs {light}");
    assert!(heavy < 0.1 * uncertainty, "{heavy} vs {uncertainty}");
}

#[test]
fn halving_the_step_stays_within_sampling_error() {
    let p = OptomechParams {
        nbar: 20.0,
        gamma: 1e-2,
        ..cooling(-1.0)
    };
    let model = full_model(&p).unwrap();
    let relax = linalg::spectral_abscissa(&model.f).abs();
    let run = |dt: f64| {
        let opts = SimOptions::new(8.0 / relax, dt)
            .record_every(usize::MAX)
            .with_initial(None, Some(solvers::solve_filter_riccati(&model).unwrap().sigma));
        terminal_moments(&simulate_conditional_ensemble(&model, &opts, 21, 2000).unwrap())
    };
    let (coarse, se_c) = run(0.02);
    let (fine, se_f) = run(0.01);
    for i in 0..4 {
        for j in 0..4 {
            let tol = 3.0 * (se_c[(i, j)].powi(2) + se_f[(i, j)].powi(2)).sqrt();
            let diff = (coarse[(i, j)] - fine[(i, j)]).abs();
            assert!(diff < tol, "({i},{j}): {diff} vs {tol}");
        }
    }
}

#[test]
fn noiseless_ensemble_is_a_deterministic_outer_product() {
    let model = optoctl::gme::LinearModel {
        n: Mat::zeros(4, 4),
        h: Mat::zeros(0, 4),
        m: Mat::zeros(4, 0),
        ..full_model(&cooling(-1.0)).unwrap()
    };
    let x0 = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.0]);
    let opts = SimOptions::new(5.0, 0.01)
        .record_every(50)
        .with_initial(Some(x0.clone()), None);
    let paths = simulate_conditional_ensemble(&model, &opts, 0, 3).unwrap();
    let last = paths[0].times.len() - 1;
    let x = (&model.f * 5.0).exp() * &x0;
    let moment = ensemble_covariance(&paths, last).unwrap();
    assert!(max_abs(&(&moment - &x * x.transpose())) < 1e-9);
}
