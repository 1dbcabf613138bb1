use serde::{Deserialize, Serialize};

use crate::model::PhysicalParams;

/// Conditional-entanglement thresholds in the weak-decoherence limit.
///
/// `g_plus`, `g_minus` are coupling ratios `g / omega0`; the efficiencies are
/// evaluated at the coupling stored in the parameters and are NaN where the
/// square root is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub g_plus: f64,
    pub eta_plus: f64,
    pub g_minus: f64,
    pub eta_minus: f64,
}

pub fn threshold_conditional(params: &PhysicalParams) -> Thresholds {
    let ratio = params.gamma_tot() / params.gamma_ba;
    let stiff = 1.0 + 4.0 * params.g_ratio();
    let root = if stiff > 0.0 { stiff.sqrt() } else { f64::NAN };
    Thresholds {
        g_plus: ratio * ratio - 0.25,
        eta_plus: ratio * 2.0 / root,
        g_minus: -0.25 + 1.0 / (16.0 * ratio * ratio),
        eta_minus: 2.0 * ratio * root,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Attractive,
    Repulsive,
}

/// Unclipped leading-order log-negativity and whether the parameters sit in
/// the regime where it applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNegApprox {
    pub value: f64,
    pub valid: bool,
}

impl LogNegApprox {
    pub fn log_negativity(&self) -> f64 {
        self.value.max(0.0)
    }
}

/// Largest `Gamma_tot / omega0` accepted as weak decoherence.
const WEAK_DECOHERENCE: f64 = 0.1;

/// Attractive: `-ln((2 / a-²) Gt / Gm) / 2`; repulsive: `-ln(2 a-² Gt / Gm) / 2`.
pub fn logneg_approx(params: &PhysicalParams, branch: Branch) -> LogNegApprox {
    let g = params.g_ratio();
    let stiff = 1.0 + 4.0 * g;
    if stiff <= 0.0 {
        return LogNegApprox { value: f64::NAN, valid: false };
    }
    let am2 = stiff.sqrt();
    let gt = params.gamma_tot() / params.omega0;
    let ratio = params.gamma_tot() / params.gamma_m();
    let value = match branch {
        Branch::Attractive => -0.5 * (2.0 / am2 * ratio).ln(),
        Branch::Repulsive => -0.5 * (2.0 * am2 * ratio).ln(),
    };
    let sign_ok = match branch {
        Branch::Attractive => g > 0.0,
        Branch::Repulsive => g < 0.0,
    };
    let valid = sign_ok && gt <= WEAK_DECOHERENCE && am2 * am2 > (2.0 * params.eta).sqrt() * gt;
    LogNegApprox { value, valid }
}
