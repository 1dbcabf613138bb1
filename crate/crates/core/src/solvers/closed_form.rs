//! Analytic steady state of the per-mode filter Riccati equation.
//!
//! Each normal mode `s` is an independent damped oscillator with frequency
//! `Omega_s`, measured at rate `Gamma_m / alpha_s^2` and diffused in momentum
//! at rate `Gamma_tot / alpha_s^2`. Solving the three scalar equations gives
//!
//! ```text
//! Sxx = -a^2 g / (2 Gm) + a / (2 Gm) * sqrt(a^2 g^2 + 2 W (sqrt(2 Gm Gt + a^4 W^2) - a^2 W))
//! Sxp = Gm / (a^2 W) * Sxx^2
//! Spp = (sqrt(2 Gm Gt + a^4 W^2) / (a^2 W) - Gm g / (a^2 W^2) * Sxx) * Sxx
//! ```
//!
//! with `a = alpha_s`, `W = Omega_s`, `g = gamma`. Used as an oracle for the
//! numeric Riccati solvers and by the asymptotic feedback expansions.

use nalgebra::DMatrix;

use super::{Basis, CovMatrix};
use crate::error::{Error, Result};
use crate::model::{NormalMode, StateSpaceModel};

/// `(Sxx, Sxp, Spp)` of one normal mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeCovariance {
    pub xx: f64,
    pub xp: f64,
    pub pp: f64,
}

impl ModeCovariance {
    pub fn to_matrix(self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[self.xx, self.xp, self.xp, self.pp])
    }
}

pub fn conditional_entries(mode: NormalMode, model: &StateSpaceModel) -> Result<ModeCovariance> {
    let r = &model.rates;
    if !(r.gamma_m > 0.0) {
        return Err(Error::Input("closed-form conditional state needs Gamma_m > 0".into()));
    }
    let a = model.alpha(mode);
    let w = model.omega(mode);
    let (gm, gt, g) = (r.gamma_m, r.gamma_tot(), r.gamma);
    let a2 = a * a;
    let root = (2.0 * gm * gt + a2 * a2 * w * w).sqrt();
    let xx = -a2 * g / (2.0 * gm) + a / (2.0 * gm) * (a2 * g * g + 2.0 * w * (root - a2 * w)).sqrt();
    let xp = gm / (a2 * w) * xx * xx;
    let pp = (root / (a2 * w) - gm * g / (a2 * w * w) * xx) * xx;
    Ok(ModeCovariance { xx, xp, pp })
}

/// Per-mode 2×2 conditional covariance.
pub fn closed_form_conditional(mode: NormalMode, model: &StateSpaceModel) -> Result<CovMatrix> {
    CovMatrix::new(conditional_entries(mode, model)?.to_matrix(), Basis::NormalMode)
}

/// Full block-diagonal 4×4 conditional covariance.
pub fn closed_form_conditional_full(model: &StateSpaceModel) -> Result<CovMatrix> {
    let mut m = DMatrix::zeros(4, 4);
    for s in NormalMode::BOTH {
        let o = s.offset();
        m.view_mut((o, o), (2, 2)).copy_from(&conditional_entries(s, model)?.to_matrix());
    }
    CovMatrix::new(m, Basis::NormalMode)
}

/// Leading-order entries for high Q and weak decoherence:
/// `Sxx ≈ Spp ≈ sqrt(Gt / (2 Gm))`, `Sxp ≈ Gt / (2 a^2 W)`.
pub fn approx_conditional_entries(mode: NormalMode, model: &StateSpaceModel) -> ModeCovariance {
    let r = &model.rates;
    let a = model.alpha(mode);
    let w = model.omega(mode);
    let diag = (r.gamma_tot() / (2.0 * r.gamma_m)).sqrt();
    ModeCovariance { xx: diag, xp: r.gamma_tot() / (2.0 * a * a * w), pp: diag }
}

/// Whether `alpha_s^4 > sqrt(2 eta) Gamma_tot`, the regime where the
/// leading-order approximation holds.
pub fn approximation_valid(mode: NormalMode, model: &StateSpaceModel) -> bool {
    let a = model.alpha(mode);
    a.powi(4) > (2.0 * model.rates.eta()).sqrt() * model.rates.gamma_tot()
}
