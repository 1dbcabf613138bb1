//! TOML run configuration. Every rate may be given in SI units (rad/s) or as
//! a ratio; exactly one form per rate is accepted.

use std::f64::consts::PI;
use std::path::Path;

use lqg_entanglement::entanglement::{default_theta, CostKind};
use lqg_entanglement::model::{FeedbackConfig, FeedbackMode, PhysicalParams};
use lqg_entanglement::sweep::{Axis, Quantity, SweepSpec};
use lqg_entanglement::trajectory::TrajectoryConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub physical: PhysicalSection,
    #[serde(default)]
    pub feedback: FeedbackSection,
    #[serde(default)]
    pub cost: CostSection,
    pub sweep: Option<SweepSection>,
    pub trajectory: Option<TrajectorySection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalSection {
    /// Trap frequency in rad/s; SI rates are divided by it.
    pub omega0: Option<f64>,
    pub g: Option<f64>,
    pub g_over_omega0: Option<f64>,
    pub gamma: Option<f64>,
    pub gamma_over_omega0: Option<f64>,
    pub quality_factor: Option<f64>,
    pub gamma_ba: Option<f64>,
    pub gamma_ba_over_omega0: Option<f64>,
    pub gamma_th: Option<f64>,
    pub gamma_th_over_omega0: Option<f64>,
    pub gamma_th_over_gamma_ba: Option<f64>,
    pub eta: Option<f64>,
    /// Excess charges; only their ratio matters.
    pub q1: Option<f64>,
    pub q2: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackSection {
    #[serde(default = "default_mode")]
    pub mode: FeedbackMode,
    #[serde(default = "default_effort")]
    pub effort: f64,
}

fn default_mode() -> FeedbackMode {
    FeedbackMode::Single
}

fn default_effort() -> f64 {
    0.1
}

impl Default for FeedbackSection {
    fn default() -> Self {
        Self { mode: default_mode(), effort: default_effort() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostName {
    #[default]
    Epr,
    Cool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(default)]
    pub kind: CostName,
    /// EPR angle in radians; defaults to 0 for repulsive and π for attractive coupling.
    pub theta: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub g_min: f64,
    pub g_max: f64,
    pub g_count: usize,
    pub eta_min: f64,
    pub eta_max: f64,
    pub eta_count: usize,
    pub quantities: Option<Vec<Quantity>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySection {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Defaults to ten closed-loop decay times.
    pub burn_in: Option<usize>,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_decimation")]
    pub decimation: usize,
}

fn default_dt() -> f64 {
    0.0025
}
fn default_steps() -> usize {
    4000
}
fn default_n_traj() -> usize {
    1
}
fn default_decimation() -> usize {
    10
}

impl Default for TrajectorySection {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            steps: default_steps(),
            burn_in: None,
            n_traj: default_n_traj(),
            seed: 0,
            decimation: default_decimation(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    #[default]
    Both,
}

impl Format {
    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<String>,
    pub format: Option<Format>,
    /// File-name prefix for written artifacts.
    pub prefix: Option<String>,
}

fn pick(name: &str, forms: &[(&str, Option<f64>)], default: Option<f64>) -> Result<f64, CliError> {
    let given: Vec<_> = forms.iter().filter(|(_, v)| v.is_some()).collect();
    match given.len() {
        0 => default.ok_or_else(|| CliError::Config(format!("missing {name}"))),
        1 => Ok(given[0].1.expect("filtered")),
        _ => Err(CliError::Config(format!(
            "{name} given more than once ({})",
            given.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", ")
        ))),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Physical parameters with every rate converted to rad/s; defaults are
    /// `Gba/W0 = 0.05`, `Gth/Gba = 0.05`, `Q = 1e10`, `eta = 1`, `Q1/Q2 = 3`.
    pub fn physical_params(&self) -> Result<PhysicalParams, CliError> {
        let p = &self.physical;
        let w0 = p.omega0.unwrap_or(1.0);
        if !(w0 > 0.0 && w0.is_finite()) {
            return Err(CliError::Config(format!("omega0 must be > 0, got {w0}")));
        }
        let g = pick("g", &[("g", p.g), ("g_over_omega0", p.g_over_omega0.map(|r| r * w0))], Some(0.0))?;
        let gamma = pick(
            "gamma",
            &[
                ("gamma", p.gamma),
                ("gamma_over_omega0", p.gamma_over_omega0.map(|r| r * w0)),
                ("quality_factor", p.quality_factor.map(|q| w0 / q)),
            ],
            Some(w0 / 1e10),
        )?;
        let gamma_ba = pick(
            "gamma_ba",
            &[("gamma_ba", p.gamma_ba), ("gamma_ba_over_omega0", p.gamma_ba_over_omega0.map(|r| r * w0))],
            Some(0.05 * w0),
        )?;
        let gamma_th = pick(
            "gamma_th",
            &[
                ("gamma_th", p.gamma_th),
                ("gamma_th_over_omega0", p.gamma_th_over_omega0.map(|r| r * w0)),
                ("gamma_th_over_gamma_ba", p.gamma_th_over_gamma_ba.map(|r| r * gamma_ba)),
            ],
            Some(0.05 * gamma_ba),
        )?;
        let params = PhysicalParams {
            omega0: w0,
            g,
            gamma,
            gamma_th,
            gamma_ba,
            eta: p.eta.unwrap_or(1.0),
            q1: p.q1.unwrap_or(3.0),
            q2: p.q2.unwrap_or(1.0),
        };
        params.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(params)
    }

    pub fn feedback(&self) -> Result<FeedbackConfig, CliError> {
        let e = self.feedback.effort;
        if !(e > 0.0 && e.is_finite()) {
            return Err(CliError::Config(format!("feedback effort must be > 0, got {e}")));
        }
        Ok(FeedbackConfig { mode: self.feedback.mode, effort: e })
    }

    /// Cost for a given coupling ratio (the EPR angle default depends on its sign).
    pub fn cost(&self, g_over_omega0: f64) -> CostKind {
        match self.cost.kind {
            CostName::Cool => CostKind::Cool,
            CostName::Epr => CostKind::Epr { theta: self.cost.theta.unwrap_or_else(|| default_theta(g_over_omega0)) },
        }
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec, CliError> {
        let s = self.sweep.as_ref().ok_or_else(|| CliError::Config("missing [sweep] section".into()))?;
        if s.g_count == 0 || s.eta_count == 0 {
            return Err(CliError::Config("sweep grid counts must be >= 1".into()));
        }
        let fixed = self.physical_params()?;
        // The EPR angle of a sweep follows the branch of the grid's upper end.
        let cost = self.cost(if s.g_max > 0.0 { s.g_max } else { s.g_min });
        let quantities = s.quantities.clone().unwrap_or_else(|| Quantity::ALL.to_vec());
        let spec = SweepSpec {
            g_over_omega0: Axis::new(s.g_min, s.g_max, s.g_count),
            eta: Axis::new(s.eta_min, s.eta_max, s.eta_count),
            fixed,
            feedback: self.feedback()?,
            cost,
            quantities,
        };
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    /// Trajectory settings; `burn_in` is left at 0 when unset and filled in later.
    pub fn trajectory(&self) -> TrajectoryConfig {
        let t = self.trajectory.clone().unwrap_or_default();
        TrajectoryConfig {
            dt: t.dt,
            steps: t.steps,
            burn_in: t.burn_in.unwrap_or(0),
            n_traj: t.n_traj,
            seed: t.seed,
            decimation: t.decimation,
        }
    }

    pub fn burn_in_given(&self) -> bool {
        self.trajectory.as_ref().is_some_and(|t| t.burn_in.is_some())
    }
}

/// Wraps an angle to `[0, 2π)` for display.
pub fn wrap_angle(theta: f64) -> f64 {
    theta.rem_euclid(2.0 * PI)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_baseline_parameters() {
        let p = RunConfig::from_toml("").unwrap().physical_params().unwrap();
        assert_eq!(p, PhysicalParams::default());
    }

    #[test]
    fn si_and_ratio_forms_agree() {
        let si = RunConfig::from_toml("[physical]\nomega0 = 2000.0\ng = -400.0\ngamma_ba = 100.0\ngamma_th = 5.0\n")
            .unwrap()
            .physical_params()
            .unwrap();
        let ratio = RunConfig::from_toml(
            "[physical]\nomega0 = 2000.0\ng_over_omega0 = -0.2\ngamma_ba_over_omega0 = 0.05\ngamma_th_over_gamma_ba = 0.05\n",
        )
        .unwrap()
        .physical_params()
        .unwrap();
        assert!((si.g - ratio.g).abs() < 1e-12);
        assert!((si.gamma_th - ratio.gamma_th).abs() < 1e-12);
    }

    #[test]
    fn duplicate_rate_forms_rejected() {
        let c = RunConfig::from_toml("[physical]\ng = 0.1\ng_over_omega0 = 0.1\n").unwrap();
        assert!(matches!(c.physical_params(), Err(CliError::Config(m)) if m.contains("more than once")));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("[physical]\nfoo = 1.0\n").is_err());
        assert!(RunConfig::from_toml("[nonsense]\n").is_err());
    }

    #[test]
    fn empty_grid_rejected() {
        let c = RunConfig::from_toml(
            "[sweep]\ng_min = -0.2\ng_max = 0.2\ng_count = 0\neta_min = 0.1\neta_max = 1.0\neta_count = 3\n",
        )
        .unwrap();
        assert!(matches!(c.sweep_spec(), Err(CliError::Config(_))));
    }
}
