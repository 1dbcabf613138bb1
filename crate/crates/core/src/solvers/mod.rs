//! Steady-state solvers: filter and regulator Riccati equations, Lyapunov
//! equations, and the analytic conditional covariance used to check them.

pub mod care;
pub mod closed_form;
pub mod lyapunov;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius, is_hurwitz, is_psd, symmetrize, symplectic_form};
use crate::model::{is_controllable, is_observable, NormalMode, StateSpaceModel};

pub use care::{care_newton_kleinman, care_schur, CareProblem};
pub use closed_form::{closed_form_conditional, closed_form_conditional_full, ModeCovariance};
pub use lyapunov::solve_lyapunov;

/// Relative asymmetry tolerated by [`CovMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Required `‖R(X)‖_F / ‖X‖_F` for an accepted Riccati solution.
pub const RICCATI_TOL: f64 = 1e-10;
/// Slack on the bound `nu >= 1/2`.
pub const PHYSICALITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    NormalMode,
    BareMode,
}

/// Real symmetric covariance matrix in either quadrature basis.
///
/// Quadratures are dimensionless with `[x, p] = i`, so the vacuum has variance
/// 1/2 and a state is physical iff every symplectic eigenvalue is at least 1/2.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    mat: DMatrix<f64>,
    basis: Basis,
}

impl CovMatrix {
    /// Checks shape and symmetry, then stores the symmetrized matrix.
    pub fn new(mat: DMatrix<f64>, basis: Basis) -> Result<Self> {
        if !mat.is_square() || mat.nrows() % 2 != 0 {
            return Err(Error::Input(format!("covariance must be square and even, got {:?}", mat.shape())));
        }
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("covariance has non-finite entries".into()));
        }
        let asym = (&mat - mat.transpose()).amax();
        if asym > SYMMETRY_TOL * mat.amax().max(f64::MIN_POSITIVE) {
            return Err(Error::Input(format!("covariance is not symmetric (max asymmetry {asym:e})")));
        }
        Ok(Self { mat: symmetrize(&mat), basis })
    }

    pub fn mat(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.mat
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn modes(&self) -> usize {
        self.mat.nrows() / 2
    }

    /// 2×2 block of one normal mode.
    pub fn block(&self, mode: NormalMode) -> DMatrix<f64> {
        let o = mode.offset();
        self.mat.view((o, o), (2, 2)).clone_owned()
    }

    /// Largest absolute entry of the off-diagonal mode blocks.
    pub fn cross_block_max(&self) -> f64 {
        if self.modes() < 2 {
            return 0.0;
        }
        self.mat.view((0, 2), (2, 2)).amax()
    }

    pub fn is_block_diagonal(&self, rel_tol: f64) -> bool {
        self.cross_block_max() <= rel_tol * self.mat.amax()
    }

    /// Symplectic eigenvalues in ascending order: moduli of the eigenvalues of `J Σ`.
    pub fn symplectic_eigenvalues(&self) -> Vec<f64> {
        symplectic_eigenvalues(&self.mat)
    }

    pub fn min_symplectic_eigenvalue(&self) -> f64 {
        self.symplectic_eigenvalues()[0]
    }

    pub fn is_physical(&self) -> bool {
        self.min_symplectic_eigenvalue() >= 0.5 - PHYSICALITY_TOL
    }

    pub fn check_physical(&self) -> Result<()> {
        let nu = self.min_symplectic_eigenvalue();
        if nu < 0.5 - PHYSICALITY_TOL {
            return Err(Error::Input(format!(
                "covariance is not physical: smallest symplectic eigenvalue {nu} < 1/2"
            )));
        }
        Ok(())
    }
}

/// Moduli of the eigenvalues of `J m`, one per conjugate pair, ascending.
pub fn symplectic_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let j = symplectic_form(m.nrows() / 2);
    let mut mods: Vec<f64> = (j * m).complex_eigenvalues().iter().map(|z| z.norm()).collect();
    mods.sort_by(|a, b| a.partial_cmp(b).unwrap());
    mods.chunks(2).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CareMethod {
    HamiltonianSchur,
    NewtonKleinman,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub value: DMatrix<f64>,
    /// `‖R(value)‖_F / ‖value‖_F`.
    pub residual_norm: f64,
    /// Lyapunov solves performed (0 for a direct Schur solve without polish).
    pub iterations: usize,
    pub method: CareMethod,
}

impl RiccatiSolution {
    pub fn as_covariance(&self) -> Result<CovMatrix> {
        CovMatrix::new(self.value.clone(), Basis::NormalMode)
    }
}

fn solve_care(problem: &CareProblem, method: CareMethod) -> Result<RiccatiSolution> {
    let (mut x, mut iterations) = match method {
        CareMethod::HamiltonianSchur => (care_schur(problem)?, 0),
        CareMethod::NewtonKleinman => care_newton_kleinman(problem, None, 1e-15)?,
    };
    let mut residual = problem.relative_residual(&x)?;
    // A couple of Newton corrections recover full accuracy when the Schur
    // basis is poorly conditioned.
    while residual > 1e-13 && iterations < 3 && method == CareMethod::HamiltonianSchur {
        let polished = symmetrize(&care::newton_polish(problem, &x)?);
        let r = problem.relative_residual(&polished)?;
        iterations += 1;
        if r >= residual {
            break;
        }
        x = polished;
        residual = r;
    }
    if residual > RICCATI_TOL {
        return Err(Error::Convergence { iterations, residual });
    }
    Ok(RiccatiSolution { value: symmetrize(&x), residual_norm: residual, iterations, method })
}

/// The filter problem `A Σ + Σ A^T + V - (Σ C^T + M) W^{-1} (Σ C^T + M)^T = 0`
/// written in regulator form.
pub fn filter_problem(model: &StateSpaceModel) -> Result<CareProblem> {
    let w_inv = model
        .w_mat
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Input("measurement noise W is singular".into()))?;
    let m_w = &model.m_mat * &w_inv;
    let a = &model.a_mat - &m_w * &model.c_mat;
    let q = &model.v_mat - &m_w * model.m_mat.transpose();
    Ok(CareProblem {
        a: a.transpose(),
        b: model.c_mat.transpose(),
        q: symmetrize(&q),
        r: model.w_mat.clone(),
    })
}

/// Conditional steady-state covariance from the Kalman–Bucy filter.
pub fn solve_filter_care(model: &StateSpaceModel) -> Result<RiccatiSolution> {
    solve_filter_care_with(model, CareMethod::HamiltonianSchur)
}

pub fn solve_filter_care_with(model: &StateSpaceModel, method: CareMethod) -> Result<RiccatiSolution> {
    if !is_observable(model) {
        return Err(Error::Solver("(A, C) is not observable".into()));
    }
    let sol = solve_care(&filter_problem(model)?, method)?;
    let cov = sol.as_covariance()?;
    if !cov.is_physical() {
        // Strong damping relative to decoherence can push the Caldeira–Leggett
        // model slightly outside the physical set; report, do not reject.
        log::warn!(
            "conditional covariance violates nu >= 1/2 (nu = {})",
            cov.min_symplectic_eigenvalue()
        );
    }
    Ok(sol)
}

/// Regulator problem `A^T Ω + Ω A + P - Ω B Q^{-1} B^T Ω = 0` with
/// `Q = q I`, solved as `(A, B / sqrt(q), P, I)`.
pub fn control_problem(model: &StateSpaceModel, p_mat: &DMatrix<f64>) -> Result<CareProblem> {
    let q = model.feedback.effort;
    if !(q > 0.0) {
        return Err(Error::Input(format!("control effort must be > 0, got {q}")));
    }
    let k = model.b_mat.ncols();
    Ok(CareProblem {
        a: model.a_mat.clone(),
        b: &model.b_mat / q.sqrt(),
        q: p_mat.clone(),
        r: DMatrix::identity(k, k),
    })
}

/// Cost-to-go matrix of the infinite-horizon regulator.
pub fn solve_control_care(model: &StateSpaceModel, p_mat: &DMatrix<f64>) -> Result<RiccatiSolution> {
    solve_control_care_with(model, p_mat, CareMethod::HamiltonianSchur)
}

pub fn solve_control_care_with(
    model: &StateSpaceModel,
    p_mat: &DMatrix<f64>,
    method: CareMethod,
) -> Result<RiccatiSolution> {
    if p_mat.shape() != (4, 4) {
        return Err(Error::Input(format!("cost matrix must be 4x4, got {:?}", p_mat.shape())));
    }
    if (p_mat - p_mat.transpose()).amax() > SYMMETRY_TOL * p_mat.amax().max(f64::MIN_POSITIVE)
        || !is_psd(p_mat, 1e-12)
    {
        return Err(Error::Input("cost matrix P must be symmetric positive semidefinite".into()));
    }
    if !is_controllable(model) {
        return Err(Error::Solver("(A, B) is not controllable".into()));
    }
    if p_mat.amax() == 0.0 && is_hurwitz(&model.a_mat) {
        // Zero is the stabilizing solution of the homogeneous equation.
        return Ok(RiccatiSolution {
            value: DMatrix::zeros(4, 4),
            residual_norm: 0.0,
            iterations: 0,
            method,
        });
    }
    let problem = control_problem(model, &symmetrize(p_mat))?;
    let sol = solve_care(&problem, method)?;
    let acl = &model.a_mat - &problem.b * problem.gain(&sol.value)?;
    if !is_hurwitz(&acl) {
        return Err(Error::Solver("regulator solution is not stabilizing".into()));
    }
    Ok(sol)
}

/// Frobenius residual of the filter equation, relative to ‖Σ‖_F.
pub fn filter_residual(model: &StateSpaceModel, sigma: &DMatrix<f64>) -> Result<f64> {
    let r = filter_problem(model)?.residual(sigma)?;
    Ok(frobenius(&r) / frobenius(sigma).max(f64::MIN_POSITIVE))
}
