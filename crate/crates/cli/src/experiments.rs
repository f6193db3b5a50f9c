//! Per-point evaluation for each experiment and its CSV schema.

use std::collections::BTreeMap;

use num_complex::Complex64;
use optoctl::optomech::{cooperativity, g_from_cooperativity, squeezed_noise, OptomechParams, SwapConfig};
use optoctl::protocols::{self, optimize_phi, optimize_sigma, phase_point, swap_point, teleport_point};
use optoctl::trajectories::fmt_num;
use optoctl::{measures, Error};

use crate::config::{Experiment, Resolved};

/// One CSV field.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Bool(bool),
    Text(String),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Num(v) => fmt_num(*v),
            Cell::Bool(b) => b.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub cells: Vec<Cell>,
    /// Set when the point could not be evaluated (as opposed to being
    /// unstable, which is a valid outcome).
    pub failed: bool,
}

/// Output columns after the parameter columns.
pub fn output_columns(experiment: Experiment) -> &'static [&'static str] {
    match experiment {
        Experiment::PhaseDiagram => &["stable", "n_ss", "E_N", "n_cond", "residual", "error"],
        Experiment::Cool => &["stable", "n_ss", "phi_opt", "effort", "residual", "error"],
        Experiment::Teleport => &["stable", "zeta_db", "input_db", "epsilon", "residual", "error"],
        Experiment::Swap => &["stable", "E_N", "EPR", "sigma_opt", "epsilon", "residual", "error"],
        Experiment::Trajectory => &[],
    }
}

pub fn header(experiment: Experiment) -> Vec<String> {
    experiment
        .parameters()
        .iter()
        .chain(output_columns(experiment))
        .map(|s| s.to_string())
        .collect()
}

/// Physical parameters of a grid point. The coupling comes from `g`, or
/// from `C` at the other parameters when `g` is absent.
pub fn physical(point: &BTreeMap<String, f64>) -> Result<OptomechParams, Error> {
    let get = |k: &str| point.get(k).copied();
    let mut p = OptomechParams::default();
    if let Some(v) = get("kappa") {
        p.kappa = v;
    }
    if let Some(v) = get("delta") {
        p.delta = v;
    }
    if let Some(v) = get("nbar") {
        p.nbar = v;
    }
    if let Some(v) = get("eta") {
        p.eta = v;
    }
    if let Some(v) = get("phi") {
        p.phi = v;
    }
    if let Some(q) = get("Q") {
        if !(q > 0.0) {
            return Err(Error::InvalidArgument(format!("Q out of range: {q}")));
        }
        p = p.with_quality_factor(q);
    }
    p.g = match (get("g"), get("C")) {
        (Some(g), _) => g,
        (None, Some(c)) => {
            if !(c >= 0.0) {
                return Err(Error::InvalidArgument(format!("C out of range: {c}")));
            }
            g_from_cooperativity(&p, c)
        }
        (None, None) => return Err(Error::InvalidArgument("no coupling given".into())),
    };
    p.validate()?;
    Ok(p)
}

fn param_cells(experiment: Experiment, point: &BTreeMap<String, f64>, p: Option<&OptomechParams>) -> Vec<Cell> {
    experiment
        .parameters()
        .iter()
        .map(|&name| {
            let v = match (name, p) {
                ("g", Some(p)) => p.g,
                ("C", Some(p)) => cooperativity(p),
                _ => point.get(name).copied().unwrap_or(f64::NAN),
            };
            Cell::Num(v)
        })
        .collect()
}

fn failed_row(experiment: Experiment, point: &BTreeMap<String, f64>, p: Option<&OptomechParams>, err: &Error) -> Row {
    let mut cells = param_cells(experiment, point, p);
    let outputs = output_columns(experiment);
    for name in &outputs[..outputs.len() - 1] {
        cells.push(if *name == "stable" { Cell::Bool(false) } else { Cell::Num(f64::NAN) });
    }
    cells.push(Cell::Text(err.to_string()));
    Row { cells, failed: true }
}

/// Evaluate one grid point. Never panics on numerical trouble; failures
/// become rows with the `error` column set.
pub fn evaluate(run: &Resolved, point: &BTreeMap<String, f64>) -> Row {
    let p = match physical(point) {
        Ok(p) => p,
        Err(e) => return failed_row(run.experiment, point, None, &e),
    };
    let outputs = match run.experiment {
        Experiment::PhaseDiagram => phase(&p),
        Experiment::Cool => cool(run, point, &p),
        Experiment::Teleport => teleport(run, point, &p),
        Experiment::Swap => swap(run, point, &p),
        Experiment::Trajectory => {
            return failed_row(
                run.experiment,
                point,
                Some(&p),
                &Error::InvalidArgument("trajectory runs are not grid points".into()),
            )
        }
    };
    match outputs {
        Ok(out) => {
            let mut cells = param_cells(run.experiment, point, Some(&p));
            cells.extend(out);
            cells.push(Cell::Text(String::new()));
            Row { cells, failed: false }
        }
        Err(e) => failed_row(run.experiment, point, Some(&p), &e),
    }
}

fn phase(p: &OptomechParams) -> Result<Vec<Cell>, Error> {
    let r = phase_point(p)?;
    Ok(vec![
        Cell::Bool(r.stable),
        Cell::Num(r.n_ss),
        Cell::Num(r.en),
        Cell::Num(r.n_cond),
        Cell::Num(r.residual),
    ])
}

fn cool(run: &Resolved, point: &BTreeMap<String, f64>, p: &OptomechParams) -> Result<Vec<Cell>, Error> {
    let hm = point.get("hm").copied().unwrap_or(protocols::DEFAULT_HM);
    let r = if run.optimize_phi {
        optimize_phi(p, hm)
    } else {
        protocols::cooling_point(p, hm)
    };
    // An LQG failure at a physically unstable point is an outcome, not an
    // error; anything else is reported.
    if !r.stable {
        if let Some(d) = &r.diagnostic {
            if !optoctl::solvers::is_hurwitz(&optoctl::optomech::full_model(p)?.f) {
                // Open loop unstable and no stabilizing controller found.
                return Ok(vec![
                    Cell::Bool(false),
                    Cell::Num(f64::NAN),
                    Cell::Num(r.phi_opt),
                    Cell::Num(f64::NAN),
                    Cell::Num(f64::NAN),
                ]);
            }
            return Err(Error::Numerical(d.clone()));
        }
    }
    Ok(vec![
        Cell::Bool(r.stable),
        Cell::Num(r.n_ss),
        Cell::Num(r.phi_opt),
        Cell::Num(r.effort),
        Cell::Num(r.residual),
    ])
}

fn teleport(run: &Resolved, point: &BTreeMap<String, f64>, p: &OptomechParams) -> Result<Vec<Cell>, Error> {
    let n = point.get("N").copied().unwrap_or(0.0);
    // Pure input: |M|² = N(N+1), squeezed in the amplitude quadrature.
    let noise = squeezed_noise(n, Complex64::new(-(n * (n + 1.0)).sqrt(), 0.0))?;
    let input_db = measures::squeezing_db(&noise.state_covariance())?;
    let eps = run.epsilon_override.unwrap_or_else(|| p.epsilon());
    match teleport_point(p, &noise, run.epsilon_override) {
        Ok((zeta, ss)) => Ok(vec![
            Cell::Bool(true),
            Cell::Num(zeta),
            Cell::Num(input_db),
            Cell::Num(eps),
            Cell::Num(ss.residual),
        ]),
        Err(Error::Unstable { .. }) => Ok(vec![
            Cell::Bool(false),
            Cell::Num(f64::NAN),
            Cell::Num(input_db),
            Cell::Num(eps),
            Cell::Num(f64::NAN),
        ]),
        Err(e) => Err(e),
    }
}

fn swap(run: &Resolved, point: &BTreeMap<String, f64>, p: &OptomechParams) -> Result<Vec<Cell>, Error> {
    let upsilon = point.get("upsilon").copied().unwrap_or(0.75);
    let eps = run.epsilon_override.unwrap_or_else(|| p.epsilon());
    let r = if run.optimize_sigma {
        match optimize_sigma(p, upsilon, p.eta, run.epsilon_override) {
            Ok(r) => r,
            // No stabilizing gain at this point.
            Err(Error::NoBracket(_)) => protocols::SwapResult {
                en: f64::NAN,
                epr: f64::NAN,
                sigma_opt: f64::NAN,
                stable: false,
                residual: f64::NAN,
                margin: f64::NAN,
            },
            Err(e) => return Err(e),
        }
    } else {
        let sigma = point.get("sigma").copied().unwrap_or(1.0);
        let cfg = SwapConfig { upsilon, sigma, eta: p.eta };
        swap_point(p, &cfg, run.epsilon_override)?
    };
    Ok(vec![
        Cell::Bool(r.stable),
        Cell::Num(r.en),
        Cell::Num(r.epr),
        Cell::Num(r.sigma_opt),
        Cell::Num(eps),
        Cell::Num(r.residual),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;

    #[test]
    fn coupling_from_cooperativity() {
        let mut point = BTreeMap::new();
        point.insert("C".to_string(), 2.0);
        point.insert("kappa".to_string(), 0.1);
        point.insert("nbar".to_string(), 0.0);
        point.insert("Q".to_string(), 1e6);
        let p = physical(&point).unwrap();
        assert!((cooperativity(&p) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rows_match_header_width() {
        for exp in [Experiment::PhaseDiagram, Experiment::Cool, Experiment::Teleport, Experiment::Swap] {
            let run = Config::default().resolve(exp).unwrap();
            let point = &run.points()[0];
            let row = evaluate(&run, point);
            assert_eq!(row.cells.len(), header(exp).len(), "{exp}");
        }
    }

    #[test]
    fn unstable_rows_carry_no_finite_outputs() {
        let cfg = Config::from_json(r#"{"axes": [{"name": "delta", "min": 1, "max": 1.01, "count": 2}, {"name": "g", "min": 0.1, "max": 0.11, "count": 2}]}"#)
            .unwrap();
        let run = cfg.resolve(Experiment::PhaseDiagram).unwrap();
        for point in run.points() {
            let row = evaluate(&run, &point);
            let off = Experiment::PhaseDiagram.parameters().len();
            assert_eq!(row.cells[off], Cell::Bool(false));
            for c in &row.cells[off + 1..off + 3] {
                assert!(matches!(c, Cell::Num(v) if v.is_nan()));
            }
        }
    }
}
