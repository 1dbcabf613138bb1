//! Closed-loop LQG assembly: regulator gain, Kalman gain, excess noise and
//! the unconditional covariance, plus small-effort expansions used as oracles.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::entanglement::{cost_matrix, CostKind};
use crate::error::{Error, Result};
use crate::linalg::{is_hurwitz, min_sym_eigenvalue, symmetrize};
use crate::model::{
    build_model, is_controllable, FeedbackConfig, FeedbackMode, NormalMode, PhysicalParams, StateSpaceModel,
};
use crate::solvers::closed_form::conditional_entries;
use crate::solvers::{solve_control_care, solve_filter_care, solve_lyapunov, Basis, CovMatrix};

/// Below this the steady-state `x_s p_s` correlation of the unconditional
/// state is set to exactly zero.
pub const XP_ZERO_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ClosedLoop {
    /// `K = Q^{-1} B^T Ω`, k×4.
    pub k_gain: DMatrix<f64>,
    /// `(Σc C^T + M) W^{-1}`, 4×2.
    pub kalman_gain: DMatrix<f64>,
    pub a_closed: DMatrix<f64>,
    pub omega_ctrl: DMatrix<f64>,
    pub sigma_cond: CovMatrix,
    pub xi_excess: CovMatrix,
    pub sigma_uncond: CovMatrix,
    pub cost: CostKind,
}

/// `K = Q^{-1} B^T Ω` with `Q = q I`.
pub fn lqr_gain(omega_ctrl: &DMatrix<f64>, model: &StateSpaceModel) -> Result<DMatrix<f64>> {
    let q = model.feedback.effort;
    if !(q > 0.0) || !q.is_finite() {
        return Err(Error::Input(format!("control effort must be > 0, got {q}")));
    }
    if omega_ctrl.shape() != (4, 4) {
        return Err(Error::Input(format!("cost-to-go must be 4x4, got {:?}", omega_ctrl.shape())));
    }
    Ok(model.b_mat.transpose() * omega_ctrl / q)
}

pub fn kalman_gain(sigma_cond: &DMatrix<f64>, model: &StateSpaceModel) -> Result<DMatrix<f64>> {
    let w_inv = model
        .w_mat
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Input("measurement noise W is singular".into()))?;
    Ok((sigma_cond * model.c_mat.transpose() + &model.m_mat) * w_inv)
}

pub fn closed_loop(params: &PhysicalParams, fb: &FeedbackConfig, cost: CostKind) -> Result<ClosedLoop> {
    closed_loop_for(&build_model(params, fb)?, cost)
}

/// Closed loop for an already-built model; the filter and regulator are solved
/// independently (separation principle) and joined through the excess-noise
/// Lyapunov equation `(A-BK) Ξ + Ξ (A-BK)^T + G W G^T = 0`.
pub fn closed_loop_for(model: &StateSpaceModel, cost: CostKind) -> Result<ClosedLoop> {
    if !is_controllable(model) {
        let why = if model.feedback.mode == FeedbackMode::Single && model.rates.g.abs() < 1e-12 {
            "a single input cannot steer two normal modes with equal frequencies (g = 0)"
        } else {
            "(A, B) has an uncontrollable mode"
        };
        return Err(Error::Controllability(why.into()));
    }
    let sigma_c = solve_filter_care(model)?.value;
    let p = cost_matrix(cost, model)?;
    let omega_ctrl = solve_control_care(model, &p)?.value;
    assemble(model, sigma_c, omega_ctrl, cost)
}

/// Joins a conditional covariance and a cost-to-go matrix into a closed loop.
pub fn assemble(
    model: &StateSpaceModel,
    sigma_c: DMatrix<f64>,
    omega_ctrl: DMatrix<f64>,
    cost: CostKind,
) -> Result<ClosedLoop> {
    let k_gain = lqr_gain(&omega_ctrl, model)?;
    let g = kalman_gain(&sigma_c, model)?;
    let a_closed = &model.a_mat - &model.b_mat * &k_gain;
    if !is_hurwitz(&a_closed) {
        return Err(Error::Stability("closed-loop matrix A - BK is not Hurwitz".into()));
    }
    let noise = symmetrize(&(&g * &model.w_mat * g.transpose()));
    let xi = symmetrize(&solve_lyapunov(&a_closed, &noise)?);
    let lam = min_sym_eigenvalue(&xi);
    if lam < -1e-10 * xi.trace().abs().max(f64::MIN_POSITIVE) {
        return Err(Error::Internal(format!("excess noise is not PSD (min eigenvalue {lam:e})")));
    }
    let mut uncond = &sigma_c + &xi;
    for s in NormalMode::BOTH {
        let o = s.offset();
        let xp = uncond[(o, o + 1)];
        let scale = (uncond[(o, o)] * uncond[(o + 1, o + 1)]).sqrt().max(1.0);
        if xp.abs() > XP_ZERO_TOL * scale {
            log::warn!("unconditional x-p correlation of mode {s:?} is {xp:e}, expected 0");
        } else {
            uncond[(o, o + 1)] = 0.0;
            uncond[(o + 1, o)] = 0.0;
        }
    }
    Ok(ClosedLoop {
        k_gain,
        kalman_gain: g,
        a_closed,
        omega_ctrl,
        sigma_cond: CovMatrix::new(sigma_c, Basis::NormalMode)?,
        xi_excess: CovMatrix::new(xi, Basis::NormalMode)?,
        sigma_uncond: CovMatrix::new(uncond, Basis::NormalMode)?,
        cost,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrature {
    X,
    P,
}

/// One diagonal entry of the unconditional covariance from a small-q expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticEntry {
    pub mode: NormalMode,
    pub quadrature: Quadrature,
    pub value: f64,
}

impl AsymptoticEntry {
    /// Position in the normal-mode state vector.
    pub fn index(&self) -> usize {
        self.mode.offset() + if self.quadrature == Quadrature::X { 0 } else { 1 }
    }
}

/// Leading-order small-q unconditional variances for independent feedback in
/// the high-Q limit. Cooling yields all four diagonal entries; EPR cost at
/// θ = 0 yields `x+x+` and `p-p-`, at θ = π `p+p+` and `x-x-`.
pub fn uncond_asymptotic(
    params: &PhysicalParams,
    cost: CostKind,
    fb: &FeedbackConfig,
    q: f64,
) -> Result<Vec<AsymptoticEntry>> {
    if fb.mode != FeedbackMode::Independent {
        return Err(Error::Input("small-q expansions exist only for independent feedback".into()));
    }
    if !(q > 0.0) {
        return Err(Error::Input(format!("control effort must be > 0, got {q}")));
    }
    let model = build_model(params, &FeedbackConfig::independent(q))?;
    let gm = model.rates.gamma_m;
    let sq = q.sqrt();
    let q14 = q.powf(0.25);
    let q34 = q.powf(0.75);
    let entry = |mode, quadrature, value| AsymptoticEntry { mode, quadrature, value };

    match cost {
        CostKind::Cool => {
            let mut out = Vec::with_capacity(4);
            for s in NormalMode::BOTH {
                let c = conditional_entries(s, &model)?;
                let a2 = model.alpha(s).powi(2);
                let w = model.omega(s);
                let base = gm / (a2 * w) * c.xx * c.xx;
                let lin = q * gm / a2 * (c.xp * c.xp - 3.0 * c.xx * c.xx);
                let x = c.xx + base + sq * 2.0 * gm / (a2 * w.sqrt()) * c.xx * (c.xx + c.xp) + lin;
                let p = c.pp + base + sq * gm / (a2 * w.sqrt()) * (c.xp * c.xp - c.xx * c.xx) - lin;
                out.push(entry(s, Quadrature::X, x));
                out.push(entry(s, Quadrature::P, p));
            }
            Ok(out)
        }
        CostKind::Epr { theta } if theta.sin().abs() < 1e-12 => {
            let plus = conditional_entries(NormalMode::Plus, &model)?;
            let minus = conditional_entries(NormalMode::Minus, &model)?;
            let am = model.alpha_minus;
            let r2 = std::f64::consts::SQRT_2;
            let r4 = 2f64.powf(0.25);
            let r34 = 2f64.powf(0.75);
            if theta.cos() > 0.0 {
                let c = plus;
                let x = c.xx
                    + q14 * 3.0 * gm / r34 * c.xx * c.xx
                    + sq * r2 * gm * c.xx * c.xp
                    + q34 * gm / (4.0 * r4) * (2.0 * c.xp * c.xp - c.xx * c.xx);
                let m = minus;
                let p = m.pp + sq * gm / (r2 * am.powi(3)) * (m.xp * m.xp + m.xx * m.xx);
                Ok(vec![entry(NormalMode::Plus, Quadrature::X, x), entry(NormalMode::Minus, Quadrature::P, p)])
            } else {
                let c = plus;
                let p = c.pp + sq * gm / r2 * (c.xp * c.xp + c.xx * c.xx);
                let m = minus;
                let x = m.xx
                    + q14 * 3.0 * gm / (r34 * am.powf(2.5)) * m.xx * m.xx
                    + sq * r2 * gm / am * m.xx * m.xp
                    + q34 * am.sqrt() * gm / (4.0 * r4) * (2.0 * m.xp * m.xp - m.xx * m.xx);
                Ok(vec![entry(NormalMode::Plus, Quadrature::P, p), entry(NormalMode::Minus, Quadrature::X, x)])
            }
        }
        CostKind::Epr { theta } => {
            Err(Error::Input(format!("small-q expansion is only available for theta = 0 or pi, got {theta}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entanglement::{assess, default_theta};
    use crate::solvers::solve_control_care;
    use std::f64::consts::PI;

    fn params(g: f64, eta: f64) -> PhysicalParams {
        PhysicalParams::default().with_g_ratio(g).with_eta(eta)
    }

    #[test]
    fn zero_cost_to_go_gives_zero_gain() {
        let m = build_model(&params(-0.1, 1.0), &FeedbackConfig::independent(0.3)).unwrap();
        let k = lqr_gain(&DMatrix::zeros(4, 4), &m).unwrap();
        assert_eq!(k, DMatrix::zeros(2, 4));
    }

    #[test]
    fn gain_is_inverse_in_effort() {
        let m1 = build_model(&params(-0.1, 1.0), &FeedbackConfig::independent(0.2)).unwrap();
        let m2 = build_model(&params(-0.1, 1.0), &FeedbackConfig::independent(0.4)).unwrap();
        let om = DMatrix::from_fn(4, 4, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
        let k1 = lqr_gain(&om, &m1).unwrap();
        let k2 = lqr_gain(&om, &m2).unwrap();
        assert!((k1 - k2 * 2.0).amax() < 1e-15);
    }

    #[test]
    fn nonpositive_effort_rejected() {
        let mut m = build_model(&params(0.0, 1.0), &FeedbackConfig::independent(0.1)).unwrap();
        m.feedback.effort = 0.0;
        assert!(matches!(lqr_gain(&DMatrix::zeros(4, 4), &m), Err(Error::Input(_))));
    }

    #[test]
    fn closed_loop_invariants() {
        for fb in [FeedbackConfig::independent(0.1), FeedbackConfig::single(0.1)] {
            for cost in [CostKind::Cool, CostKind::Epr { theta: 0.0 }, CostKind::Epr { theta: PI }] {
                let cl = closed_loop(&params(-0.2, 0.8), &fb, cost).unwrap();
                assert!(is_hurwitz(&cl.a_closed));
                let xi = cl.xi_excess.mat();
                assert!(min_sym_eigenvalue(xi) >= -1e-10 * xi.trace());
                for s in NormalMode::BOTH {
                    let o = s.offset();
                    assert_eq!(cl.sigma_uncond.mat()[(o, o + 1)], 0.0);
                }
                if fb.mode == FeedbackMode::Independent {
                    assert!(cl.xi_excess.is_block_diagonal(1e-12));
                }
            }
        }
    }

    #[test]
    fn separation_principle() {
        // Changing the cost leaves the Kalman gain bit-identical; changing the
        // measurement efficiency leaves the regulator gain bit-identical.
        let fb = FeedbackConfig::independent(0.1);
        let a = closed_loop(&params(-0.2, 0.8), &fb, CostKind::Cool).unwrap();
        let b = closed_loop(&params(-0.2, 0.8), &fb, CostKind::Epr { theta: 0.0 }).unwrap();
        assert_eq!(a.kalman_gain, b.kalman_gain);
        let c = closed_loop(&params(-0.2, 0.3), &fb, CostKind::Cool).unwrap();
        assert_eq!(a.k_gain, c.k_gain);
        assert_ne!(a.kalman_gain, c.kalman_gain);
    }

    #[test]
    fn no_measurement_means_no_excess_noise() {
        let m = build_model(&params(-0.1, 1.0), &FeedbackConfig::independent(0.1)).unwrap();
        let p = cost_matrix(CostKind::Cool, &m).unwrap();
        let om = solve_control_care(&m, &p).unwrap().value;
        let sigma = DMatrix::from_diagonal_element(4, 4, 3.0);
        let mut dark = m.clone();
        dark.c_mat.fill(0.0);
        let cl = assemble(&dark, sigma.clone(), om, CostKind::Cool).unwrap();
        assert_eq!(cl.kalman_gain.amax(), 0.0);
        assert_eq!(cl.xi_excess.mat().amax(), 0.0);
        assert_eq!(cl.sigma_uncond.mat(), &sigma);
    }

    #[test]
    fn conditional_entanglement_dominates() {
        for g in [-0.24, -0.22, -0.2] {
            for fb in [FeedbackConfig::independent(0.1), FeedbackConfig::single(0.1)] {
                let cl = closed_loop(&params(g, 1.0), &fb, CostKind::Epr { theta: 0.0 }).unwrap();
                let m = build_model(&params(g, 1.0), &fb).unwrap();
                let th = default_theta(g);
                let c = assess(&cl.sigma_cond, &m, th).unwrap();
                let u = assess(&cl.sigma_uncond, &m, th).unwrap();
                assert!(u.log_negativity <= c.log_negativity + 1e-12);
            }
        }
    }

    #[test]
    fn cooling_expansion_keeps_penalty_term_at_zero_effort() {
        let p = params(-0.2, 0.8);
        let tiny = uncond_asymptotic(&p, CostKind::Cool, &FeedbackConfig::independent(0.1), 1e-14).unwrap();
        let m = build_model(&p, &FeedbackConfig::independent(0.1)).unwrap();
        for e in tiny {
            let c = conditional_entries(e.mode, &m).unwrap();
            let base = if e.quadrature == Quadrature::X { c.xx } else { c.pp };
            let pen = m.rates.gamma_m / (m.alpha(e.mode).powi(2) * m.omega(e.mode)) * c.xx * c.xx;
            assert!((e.value - base - pen).abs() < 1e-6 * pen);
        }
    }

    #[test]
    fn epr_expansion_reduces_to_conditional() {
        let p = params(-0.2, 0.8);
        let m = build_model(&p, &FeedbackConfig::independent(0.1)).unwrap();
        for theta in [0.0, PI] {
            for e in uncond_asymptotic(&p, CostKind::Epr { theta }, &FeedbackConfig::independent(0.1), 1e-16).unwrap() {
                let c = conditional_entries(e.mode, &m).unwrap();
                let base = if e.quadrature == Quadrature::X { c.xx } else { c.pp };
                assert!((e.value - base).abs() < 1e-4 * base);
            }
        }
    }

    #[test]
    fn expansion_rejects_single_and_generic_theta() {
        let p = params(-0.2, 0.8);
        assert!(uncond_asymptotic(&p, CostKind::Cool, &FeedbackConfig::single(0.1), 1e-4).is_err());
        assert!(
            uncond_asymptotic(&p, CostKind::Epr { theta: 1.0 }, &FeedbackConfig::independent(0.1), 1e-4).is_err()
        );
    }
}
