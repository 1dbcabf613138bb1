//! Entanglement measures on two-mode Gaussian covariances, the EPR witness,
//! LQR cost matrices, and the analytic conditional-entanglement thresholds.

mod thresholds;

pub use thresholds::{logneg_approx, threshold_conditional, Branch, LogNegApprox, Thresholds};

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{block_diag, is_psd, symmetrize};
use crate::model::{NormalMode, StateSpaceModel};
use crate::solvers::{symplectic_eigenvalues, Basis, CovMatrix};

/// Relative size of cross-mode blocks below which a normal-mode covariance is
/// treated as block-diagonal.
pub const BLOCK_DIAGONAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntanglementReport {
    /// `max(0, -ln(2 nu))`.
    pub log_negativity: f64,
    /// Smallest symplectic eigenvalue of the partial transpose.
    pub symplectic_nu: f64,
    pub epr_variance: f64,
    pub epr_theta: f64,
}

impl EntanglementReport {
    pub fn is_entangled(&self) -> bool {
        self.symplectic_nu < 0.5
    }

    /// `1/2 - nu`: positive inside the entangled region, smooth across the boundary.
    pub fn margin(&self) -> f64 {
        0.5 - self.symplectic_nu
    }
}

pub fn log_negativity_from_nu(nu: f64) -> f64 {
    (-(2.0 * nu).ln()).max(0.0)
}

/// EPR angle that best matches the sign of the coupling: 0 for repulsive, π for attractive.
pub fn default_theta(g_over_omega0: f64) -> f64 {
    if g_over_omega0 > 0.0 {
        PI
    } else {
        0.0
    }
}

/// Partial-transpose symplectic eigenvalue of a block-diagonal normal-mode
/// state, written in terms of the two 2×2 mode blocks:
///
/// ```text
/// s  = (a-²/a+²) S+xx S-pp - 2 S+xp S-xp + (a+²/a-²) S+pp S-xx
/// nu = sqrt(s - sqrt(s² - 4 det S+ det S-)) / sqrt(2)
/// ```
pub fn normal_mode_nu(sigma: &CovMatrix, model: &StateSpaceModel) -> Result<f64> {
    if sigma.basis() != Basis::NormalMode || sigma.modes() != 2 {
        return Err(Error::Input("expected a 4x4 normal-mode covariance".into()));
    }
    if !sigma.is_block_diagonal(BLOCK_DIAGONAL_TOL) {
        return Err(Error::Input(format!(
            "normal-mode formula needs a block-diagonal covariance (cross block {:e})",
            sigma.cross_block_max()
        )));
    }
    sigma.check_physical()?;
    let p = sigma.block(NormalMode::Plus);
    let m = sigma.block(NormalMode::Minus);
    let r = (model.alpha_minus / model.alpha_plus).powi(2);
    let s = r * p[(0, 0)] * m[(1, 1)] - 2.0 * p[(0, 1)] * m[(0, 1)] + p[(1, 1)] * m[(0, 0)] / r;
    let det = p.determinant() * m.determinant();
    let disc = (s * s - 4.0 * det).max(0.0);
    Ok(((s - disc.sqrt()).max(0.0) / 2.0).sqrt())
}

/// Logarithmic negativity of a block-diagonal normal-mode covariance.
pub fn log_negativity(sigma: &CovMatrix, model: &StateSpaceModel) -> Result<EntanglementReport> {
    let theta = default_theta(model.rates.g);
    let nu = normal_mode_nu(sigma, model)?;
    let bare = to_bare_basis(sigma, model)?;
    Ok(EntanglementReport {
        log_negativity: log_negativity_from_nu(nu),
        symplectic_nu: nu,
        epr_variance: epr_variance(&bare, theta)?,
        epr_theta: theta,
    })
}

/// Entanglement of an arbitrary normal-mode covariance. Block-diagonal states
/// use the normal-mode formula; anything else (e.g. unconditional states under
/// a shared feedback field) goes through the bare-basis partial transpose.
pub fn assess(sigma: &CovMatrix, model: &StateSpaceModel, theta: f64) -> Result<EntanglementReport> {
    let bare = to_bare_basis(sigma, model)?;
    let nu = if sigma.is_block_diagonal(BLOCK_DIAGONAL_TOL) {
        normal_mode_nu(sigma, model)?
    } else {
        sigma.check_physical()?;
        ppt_nu(&bare)?
    };
    Ok(EntanglementReport {
        log_negativity: log_negativity_from_nu(nu),
        symplectic_nu: nu,
        epr_variance: epr_variance(&bare, theta)?,
        epr_theta: theta,
    })
}

/// Smallest symplectic eigenvalue after transposing the second bare mode (p2 -> -p2).
pub fn ppt_nu(sigma_bare: &CovMatrix) -> Result<f64> {
    if sigma_bare.basis() != Basis::BareMode || sigma_bare.modes() != 2 {
        return Err(Error::Input("expected a 4x4 bare-mode covariance".into()));
    }
    sigma_bare.check_physical()?;
    let mut t = sigma_bare.mat().clone();
    for k in 0..4 {
        t[(3, k)] = -t[(3, k)];
        t[(k, 3)] = -t[(k, 3)];
    }
    Ok(symplectic_eigenvalues(&t)[0])
}

/// First-principles logarithmic negativity of a bare-mode covariance.
pub fn log_negativity_bare_oracle(sigma_bare: &CovMatrix) -> Result<f64> {
    Ok(log_negativity_from_nu(ppt_nu(sigma_bare)?))
}

/// `S^{-1} Σ S^{-T}`.
pub fn to_bare_basis(sigma: &CovMatrix, model: &StateSpaceModel) -> Result<CovMatrix> {
    if sigma.basis() != Basis::NormalMode {
        return Err(Error::Input("covariance is already in the bare basis".into()));
    }
    let t = model.bare_mode_transform();
    CovMatrix::new(symmetrize(&(&t * sigma.mat() * t.transpose())), Basis::BareMode)
}

/// `S Σ S^T`.
pub fn to_normal_basis(sigma: &CovMatrix, model: &StateSpaceModel) -> Result<CovMatrix> {
    if sigma.basis() != Basis::BareMode {
        return Err(Error::Input("covariance is already in the normal-mode basis".into()));
    }
    let s = model.normal_mode_transform();
    CovMatrix::new(symmetrize(&(&s * sigma.mat() * s.transpose())), Basis::NormalMode)
}

/// `Δ(x1 + cosθ x2 + sinθ p2) + Δ(p1 + sinθ x2 - cosθ p2)`; values below 2 witness entanglement.
pub fn epr_variance(sigma_bare: &CovMatrix, theta: f64) -> Result<f64> {
    if sigma_bare.basis() != Basis::BareMode || sigma_bare.modes() != 2 {
        return Err(Error::Input("EPR variance needs a 4x4 bare-mode covariance".into()));
    }
    let (s, c) = theta.sin_cos();
    let m = sigma_bare.mat();
    let quad = |u: [f64; 4]| -> f64 {
        let mut acc = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                acc += u[i] * m[(i, j)] * u[j];
            }
        }
        acc
    };
    Ok(quad([1.0, 0.0, c, s]) + quad([0.0, 1.0, s, -c]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CostKind {
    /// Total energy of both normal modes.
    Cool,
    /// EPR variance at angle `theta`.
    Epr { theta: f64 },
}

impl CostKind {
    pub fn label(&self) -> String {
        match self {
            CostKind::Cool => "cool".into(),
            CostKind::Epr { theta } => format!("epr(theta={theta})"),
        }
    }
}

/// Per-mode EPR weight `[[(1+cosθ)/α², sinθ], [sinθ, α²(1-cosθ)]]`, rank one and PSD.
fn epr_block(alpha: f64, theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    let a2 = alpha * alpha;
    DMatrix::from_row_slice(2, 2, &[(1.0 + c) / a2, s, s, a2 * (1.0 - c)])
}

/// LQR state cost in units of omega0.
///
/// `Cool` weights each mode by its frequency. `Epr(θ)` is the quadratic form
/// of the EPR variance restricted to the normal-mode blocks, with the
/// differential block evaluated at `θ + π`.
pub fn cost_matrix(kind: CostKind, model: &StateSpaceModel) -> Result<DMatrix<f64>> {
    let p = match kind {
        CostKind::Cool => DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[
            model.omega_plus,
            model.omega_plus,
            model.omega_minus,
            model.omega_minus,
        ])),
        CostKind::Epr { theta } => {
            let plus = epr_block(model.alpha_plus, theta);
            let minus = epr_block(model.alpha_minus, theta + PI);
            block_diag(&[&plus, &minus])
        }
    };
    let p = symmetrize(&p);
    if !is_psd(&p, 1e-12) {
        return Err(Error::Internal(format!("cost matrix {} is not PSD", kind.label())));
    }
    Ok(p)
}
