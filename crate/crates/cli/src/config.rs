//! Sweep configuration: a JSON document, optionally overridden by flags, is
//! resolved into fixed parameters plus a grid of swept axes.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    PhaseDiagram,
    Cool,
    Teleport,
    Swap,
    Trajectory,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::PhaseDiagram => "phase-diagram",
            Experiment::Cool => "cool",
            Experiment::Teleport => "teleport",
            Experiment::Swap => "swap",
            Experiment::Trajectory => "trajectory",
        }
    }

    /// Parameters accepted by the experiment, in CSV column order.
    pub fn parameters(self) -> &'static [&'static str] {
        const BASE: &[&str] = &["kappa", "delta", "g", "C", "nbar", "Q", "eta", "phi"];
        match self {
            Experiment::PhaseDiagram => BASE,
            Experiment::Cool | Experiment::Trajectory => {
                &["kappa", "delta", "g", "C", "nbar", "Q", "eta", "phi", "hm"]
            }
            Experiment::Teleport => &["kappa", "delta", "g", "C", "nbar", "Q", "eta", "N"],
            Experiment::Swap => &["kappa", "delta", "g", "C", "nbar", "Q", "eta", "upsilon", "sigma"],
        }
    }

    fn defaults(self) -> Vec<(&'static str, f64)> {
        let resolved_sidebands = vec![
            ("kappa", 0.5),
            ("delta", -1.0),
            ("nbar", 3.5e5),
            ("Q", 5e6),
            ("eta", 1.0),
            ("phi", PI / 2.0),
        ];
        match self {
            Experiment::PhaseDiagram => resolved_sidebands,
            Experiment::Cool | Experiment::Trajectory => {
                let mut d = resolved_sidebands;
                d.extend([("g", 0.05), ("hm", 100.0)]);
                d
            }
            Experiment::Teleport => vec![
                ("kappa", 0.1),
                ("delta", -1.0),
                ("nbar", 0.0),
                ("Q", 1e4),
                ("eta", 1.0),
                // Pure input squeezed by 6 dB.
                ("N", 0.5625),
                ("C", 10.0),
            ],
            Experiment::Swap => vec![
                ("kappa", 0.1),
                ("delta", -1.0),
                ("nbar", 0.0),
                ("Q", 1e6),
                ("eta", 1.0),
                ("upsilon", 0.75),
                ("sigma", 1.0),
                ("C", 10.0),
            ],
        }
    }

    fn default_axes(self) -> Vec<Axis> {
        let lin = |name: &str, min, max, count| Axis {
            name: name.into(),
            min,
            max,
            count,
            scale: Scale::Lin,
        };
        let log = |name: &str, min, max, count| Axis {
            scale: Scale::Log,
            ..lin(name, min, max, count)
        };
        match self {
            Experiment::PhaseDiagram => vec![lin("delta", -2.0, 2.0, 41), lin("g", 0.005, 0.25, 50)],
            Experiment::Cool => vec![lin("delta", -2.0, 2.0, 81)],
            Experiment::Teleport => vec![log("C", 0.1, 1e3, 41)],
            Experiment::Swap => vec![log("C", 0.1, 100.0, 41)],
            Experiment::Trajectory => Vec::new(),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Lin,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub count: usize,
    #[serde(default)]
    pub scale: Scale,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        let last = self.count - 1;
        (0..self.count)
            .map(|k| {
                // Endpoints exactly as given.
                if k == 0 {
                    return self.min;
                }
                if k == last {
                    return self.max;
                }
                let t = k as f64 / last as f64;
                match self.scale {
                    Scale::Lin => self.min + (self.max - self.min) * t,
                    Scale::Log => (self.min.ln() + (self.max.ln() - self.min.ln()) * t).exp(),
                }
            })
            .collect()
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.count < 2 {
            return Err(config_err(format!("axis {}: count must be at least 2", self.name)));
        }
        if !self.min.is_finite() || !self.max.is_finite() {
            return Err(config_err(format!("axis {}: range must be finite", self.name)));
        }
        if self.scale == Scale::Log && !(self.min > 0.0 && self.max > 0.0) {
            return Err(config_err(format!("axis {}: log scale needs a positive range", self.name)));
        }
        Ok(())
    }
}

/// `name:min:max:count[:lin|log]`.
impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if !(4..=5).contains(&parts.len()) {
            return Err(format!("expected name:min:max:count[:lin|log], got {s:?}"));
        }
        let num = |p: &str| p.parse::<f64>().map_err(|e| format!("{p:?}: {e}"));
        let scale = match parts.get(4).copied() {
            None | Some("lin") => Scale::Lin,
            Some("log") => Scale::Log,
            Some(other) => return Err(format!("unknown axis scale {other:?}")),
        };
        Ok(Axis {
            name: parts[0].to_string(),
            min: num(parts[1])?,
            max: num(parts[2])?,
            count: parts[3].parse().map_err(|e| format!("{:?}: {e}", parts[3]))?,
            scale,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySettings {
    pub t_final: f64,
    pub dt: f64,
    pub paths: usize,
    pub record_every: usize,
    /// Run the closed LQG loop instead of the open conditional filter.
    pub feedback: bool,
}

impl Default for TrajectorySettings {
    fn default() -> Self {
        Self {
            t_final: 20.0,
            dt: 0.01,
            paths: 4,
            record_every: 10,
            feedback: false,
        }
    }
}

/// Partial trajectory settings as they appear in a config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryOverrides {
    pub t_final: Option<f64>,
    pub dt: Option<f64>,
    pub paths: Option<usize>,
    pub record_every: Option<usize>,
    pub feedback: Option<bool>,
}

impl TrajectoryOverrides {
    fn merge(&mut self, other: &TrajectoryOverrides) {
        self.t_final = other.t_final.or(self.t_final);
        self.dt = other.dt.or(self.dt);
        self.paths = other.paths.or(self.paths);
        self.record_every = other.record_every.or(self.record_every);
        self.feedback = other.feedback.or(self.feedback);
    }
}

/// A config document. Every field is optional; unset fields take the
/// experiment defaults at resolution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axes: Option<Vec<Axis>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimize_phi: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimize_sigma: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_override: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<TrajectoryOverrides>,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| config_err(format!("config: {e}")))
    }

    /// Apply `flags` on top of `self`. A flag for `g` drops a file value of
    /// `C` and vice versa, since the two are alternative ways to set the
    /// coupling.
    pub fn overlay(mut self, flags: &Config) -> Self {
        for (k, v) in &flags.params {
            match k.as_str() {
                "g" => {
                    self.params.remove("C");
                }
                "C" => {
                    self.params.remove("g");
                }
                _ => {}
            }
            self.params.insert(k.clone(), *v);
        }
        if flags.experiment.is_some() {
            self.experiment = flags.experiment;
        }
        if flags.axes.is_some() {
            self.axes = flags.axes.clone();
        }
        self.optimize_phi = flags.optimize_phi.or(self.optimize_phi);
        self.optimize_sigma = flags.optimize_sigma.or(self.optimize_sigma);
        self.epsilon_override = flags.epsilon_override.or(self.epsilon_override);
        self.seed = flags.seed.or(self.seed);
        if flags.out.is_some() {
            self.out = flags.out.clone();
        }
        if let Some(t) = &flags.trajectory {
            self.trajectory.get_or_insert_with(Default::default).merge(t);
        }
        self
    }

    /// Fill in defaults and validate against `experiment`.
    pub fn resolve(&self, experiment: Experiment) -> Result<Resolved, CliError> {
        if let Some(e) = self.experiment {
            if e != experiment {
                return Err(config_err(format!(
                    "config is for experiment {e}, not {experiment}"
                )));
            }
        }
        let allowed = experiment.parameters();
        for name in self.params.keys() {
            if !allowed.contains(&name.as_str()) {
                return Err(config_err(format!(
                    "unknown parameter {name:?} for {experiment} (expected one of {allowed:?})"
                )));
            }
        }
        let axes = self.axes.clone().unwrap_or_else(|| experiment.default_axes());
        for (i, axis) in axes.iter().enumerate() {
            axis.validate()?;
            if !allowed.contains(&axis.name.as_str()) {
                return Err(config_err(format!(
                    "axis {:?} is not a parameter of {experiment}",
                    axis.name
                )));
            }
            if axes[..i].iter().any(|a| a.name == axis.name) {
                return Err(config_err(format!("axis {:?} given twice", axis.name)));
            }
        }
        let swept = |n: &str| axes.iter().any(|a| a.name == n);
        if swept("g") && swept("C") {
            return Err(config_err("axes sweep both g and C".into()));
        }
        match experiment {
            Experiment::PhaseDiagram => {
                let names: Vec<&str> = axes.iter().map(|a| a.name.as_str()).collect();
                let ok = names.len() == 2
                    && names.contains(&"delta")
                    && (names.contains(&"g") || names.contains(&"C"));
                if !ok {
                    return Err(config_err(format!(
                        "phase-diagram axes must be delta and g (or C), got {names:?}"
                    )));
                }
            }
            Experiment::Trajectory if !axes.is_empty() => {
                return Err(config_err("trajectory runs do not take axes".into()));
            }
            _ => {}
        }

        let mut params: BTreeMap<String, f64> = experiment
            .defaults()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let user_coupling = self.params.contains_key("g") || self.params.contains_key("C");
        if user_coupling || swept("g") || swept("C") {
            params.remove("g");
            params.remove("C");
        }
        for (k, v) in &self.params {
            params.insert(k.clone(), *v);
        }
        for axis in &axes {
            params.remove(&axis.name);
            if axis.name == "g" || axis.name == "C" {
                params.remove("g");
                params.remove("C");
            }
        }
        if params.contains_key("g") && params.contains_key("C") {
            return Err(config_err("both g and C are fixed; give only one".into()));
        }
        let coupling_set = params.contains_key("g") || params.contains_key("C") || swept("g") || swept("C");
        if !coupling_set {
            return Err(config_err(format!("{experiment} needs g or C")));
        }
        for (k, v) in &params {
            if !v.is_finite() {
                return Err(config_err(format!("parameter {k} must be finite")));
            }
        }
        if let Some(eps) = self.epsilon_override {
            if !(0.0..1.0).contains(&eps) {
                return Err(config_err(format!("epsilon override {eps} outside [0, 1)")));
            }
        }

        let trajectory = {
            let d = TrajectorySettings::default();
            let o = self.trajectory.clone().unwrap_or_default();
            let t = TrajectorySettings {
                t_final: o.t_final.unwrap_or(d.t_final),
                dt: o.dt.unwrap_or(d.dt),
                paths: o.paths.unwrap_or(d.paths),
                record_every: o.record_every.unwrap_or(d.record_every),
                feedback: o.feedback.unwrap_or(d.feedback),
            };
            if !(t.dt > 0.0 && t.t_final >= 0.0 && t.t_final.is_finite()) {
                return Err(config_err("trajectory: need dt > 0 and finite t_final >= 0".into()));
            }
            if t.paths == 0 || t.record_every == 0 {
                return Err(config_err("trajectory: paths and record_every must be positive".into()));
            }
            t
        };

        Ok(Resolved {
            experiment,
            params,
            axes,
            optimize_phi: self.optimize_phi.unwrap_or(experiment == Experiment::Cool),
            optimize_sigma: self.optimize_sigma.unwrap_or(experiment == Experiment::Swap),
            epsilon_override: self.epsilon_override,
            seed: self.seed.unwrap_or(0),
            out: self
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from(format!("{experiment}.csv"))),
            trajectory,
        })
    }
}

/// Fully specified run: everything needed to reproduce every row.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub experiment: Experiment,
    pub params: BTreeMap<String, f64>,
    pub axes: Vec<Axis>,
    pub optimize_phi: bool,
    pub optimize_sigma: bool,
    pub epsilon_override: Option<f64>,
    pub seed: u64,
    pub out: PathBuf,
    pub trajectory: TrajectorySettings,
}

impl Resolved {
    /// The equivalent config document, as recorded in the sidecar.
    pub fn to_config(&self) -> Config {
        let t = &self.trajectory;
        Config {
            experiment: Some(self.experiment),
            params: self.params.clone(),
            axes: Some(self.axes.clone()),
            optimize_phi: Some(self.optimize_phi),
            optimize_sigma: Some(self.optimize_sigma),
            epsilon_override: self.epsilon_override,
            seed: Some(self.seed),
            out: Some(self.out.clone()),
            trajectory: Some(TrajectoryOverrides {
                t_final: Some(t.t_final),
                dt: Some(t.dt),
                paths: Some(t.paths),
                record_every: Some(t.record_every),
                feedback: Some(t.feedback),
            }),
        }
    }

    /// Grid points in row-major order (first axis outermost), each as the
    /// full parameter map.
    pub fn points(&self) -> Vec<BTreeMap<String, f64>> {
        let values: Vec<Vec<f64>> = self.axes.iter().map(Axis::values).collect();
        let total: usize = values.iter().map(Vec::len).product();
        (0..total)
            .map(|mut idx| {
                let mut p = self.params.clone();
                for (axis, vals) in self.axes.iter().zip(&values).rev() {
                    p.insert(axis.name.clone(), vals[idx % vals.len()]);
                    idx /= vals.len();
                }
                p
            })
            .collect()
    }
}

pub fn config_err(msg: String) -> CliError {
    CliError::Config(msg)
}
