//! Continuous algebraic Riccati equations in regulator form
//!
//! ```text
//! a^T X + X a + q - X b r^{-1} b^T X = 0
//! ```
//!
//! Two independent backends: the stable invariant subspace of the Hamiltonian
//! matrix from an ordered (complex) Schur form, and Newton–Kleinman iteration
//! on Lyapunov equations seeded with a Bass stabilizing gain.

use nalgebra::{Complex, DMatrix};

use super::lyapunov::solve_lyapunov;
use crate::error::{Error, Result};
use crate::linalg::{frobenius, is_hurwitz, symmetrize};

type C64 = Complex<f64>;

/// Eigenvalues closer than this (relative to ‖H‖_F) to the imaginary axis
/// mean there is no stabilizing solution.
const IMAG_AXIS_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct CareProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl CareProblem {
    fn check(&self) -> Result<()> {
        let n = self.a.nrows();
        let k = self.b.ncols();
        if !self.a.is_square()
            || self.b.nrows() != n
            || self.q.shape() != (n, n)
            || self.r.shape() != (k, k)
        {
            return Err(Error::Input("CARE matrices have inconsistent shapes".into()));
        }
        Ok(())
    }

    fn r_inv(&self) -> Result<DMatrix<f64>> {
        self.r
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Input("input weight r is singular".into()))
    }

    /// `b r^{-1} b^T`.
    pub fn quadratic_term(&self) -> Result<DMatrix<f64>> {
        Ok(&self.b * self.r_inv()? * self.b.transpose())
    }

    pub fn residual(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let g = self.quadratic_term()?;
        Ok(self.a.transpose() * x + x * &self.a + &self.q - x * g * x)
    }

    /// `‖R(X)‖_F / ‖X‖_F`, or the absolute residual when X = 0.
    pub fn relative_residual(&self, x: &DMatrix<f64>) -> Result<f64> {
        let r = frobenius(&self.residual(x)?);
        let nx = frobenius(x);
        Ok(if nx > 0.0 { r / nx } else { r })
    }

    /// Optimal gain `r^{-1} b^T X`.
    pub fn gain(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.r_inv()? * self.b.transpose() * x)
    }
}

/// Stabilizing solution from the stable invariant subspace of
/// `H = [[a, -b r^{-1} b^T], [-q, -a^T]]`.
pub fn care_schur(p: &CareProblem) -> Result<DMatrix<f64>> {
    p.check()?;
    let n = p.a.nrows();
    let g = p.quadratic_term()?;
    let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&p.a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-&p.q));
    h.view_mut((n, n), (n, n)).copy_from(&(-p.a.transpose()));

    let hc = h.map(|v| C64::new(v, 0.0));
    let schur = nalgebra::Schur::try_new(hc, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Solver("Schur decomposition of the Hamiltonian did not converge".into()))?;
    let (mut u, mut t) = schur.unpack();

    let scale = frobenius(&h).max(1.0);
    let stable = reorder_stable_first(&mut t, &mut u, IMAG_AXIS_TOL * scale)?;
    if stable != n {
        return Err(Error::Solver(format!(
            "Hamiltonian has {stable} stable eigenvalues, expected {n}"
        )));
    }

    let u1 = u.view((0, 0), (n, n)).clone_owned();
    let u2 = u.view((n, 0), (n, n)).clone_owned();
    // X = U2 U1^{-1}  <=>  U1^T X^T = U2^T
    let xt = u1
        .transpose()
        .lu()
        .solve(&u2.transpose())
        .ok_or_else(|| Error::Solver("stable subspace basis is singular".into()))?;
    let x = xt.transpose().map(|z| z.re);
    Ok(symmetrize(&x))
}

/// Moves every diagonal entry of the upper-triangular `t` with negative real part to
/// the leading block, updating the unitary `u` so that `u t u^*` is unchanged.
/// Returns the number of stable eigenvalues.
fn reorder_stable_first(t: &mut DMatrix<C64>, u: &mut DMatrix<C64>, tol: f64) -> Result<usize> {
    let dim = t.nrows();
    let mut placed = 0;
    for k in 0..dim {
        let re = t[(k, k)].re;
        if re.abs() <= tol {
            return Err(Error::Solver(format!(
                "Hamiltonian eigenvalue {} lies on the imaginary axis; no stabilizing solution",
                t[(k, k)]
            )));
        }
        if re < 0.0 {
            let mut j = k;
            while j > placed {
                swap_adjacent(t, u, j - 1);
                j -= 1;
            }
            placed += 1;
        }
    }
    Ok(placed)
}

/// Exchanges diagonal entries `k` and `k+1` of an upper-triangular Schur factor
/// with one Givens rotation.
fn swap_adjacent(t: &mut DMatrix<C64>, u: &mut DMatrix<C64>, k: usize) {
    let dim = t.nrows();
    let t11 = t[(k, k)];
    let t22 = t[(k + 1, k + 1)];
    let (cs, sn) = givens(t[(k, k + 1)], t22 - t11);

    for j in (k + 2)..dim {
        let x = t[(k, j)];
        let y = t[(k + 1, j)];
        t[(k, j)] = x * cs + sn * y;
        t[(k + 1, j)] = y * cs - sn.conj() * x;
    }
    for i in 0..k {
        let x = t[(i, k)];
        let y = t[(i, k + 1)];
        t[(i, k)] = x * cs + sn.conj() * y;
        t[(i, k + 1)] = y * cs - sn * x;
    }
    t[(k, k)] = t22;
    t[(k + 1, k + 1)] = t11;
    for i in 0..dim {
        let x = u[(i, k)];
        let y = u[(i, k + 1)];
        u[(i, k)] = x * cs + sn.conj() * y;
        u[(i, k + 1)] = y * cs - sn * x;
    }
}

/// Complex plane rotation with real cosine: `[c s; -conj(s) c] [f; g] = [r; 0]`.
fn givens(f: C64, g: C64) -> (f64, C64) {
    let fa = f.norm();
    let ga = g.norm();
    if ga == 0.0 {
        return (1.0, C64::new(0.0, 0.0));
    }
    if fa == 0.0 {
        return (0.0, g.conj() / ga);
    }
    let norm = fa.hypot(ga);
    let phase = f / fa;
    (fa / norm, phase * g.conj() / norm)
}

/// Bass's stabilizing gain: with `beta` past the spectral radius of `a`, solve
/// `-(a + beta I) Z - Z (a + beta I)^T + 2 b b^T = 0` and take `K = b^T Z^{-1}`.
pub fn bass_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let beta = frobenius(a) + 1.0;
    let shifted = -(a + DMatrix::<f64>::identity(n, n) * beta);
    let z = solve_lyapunov(&shifted, &(b * b.transpose() * 2.0))?;
    let z_inv = z
        .try_inverse()
        .ok_or_else(|| Error::Solver("(a, b) is not controllable: Bass Gramian is singular".into()))?;
    Ok(b.transpose() * z_inv)
}

pub const NEWTON_MAX_ITER: usize = 200;

/// Newton–Kleinman: repeatedly solve
/// `(a - b K)^T X + X (a - b K) + q + K^T r K = 0`, `K <- r^{-1} b^T X`.
///
/// `k0` must be stabilizing; when `None` a Bass gain is used. Returns the
/// solution and the number of Lyapunov solves.
pub fn care_newton_kleinman(
    p: &CareProblem,
    k0: Option<DMatrix<f64>>,
    rel_tol: f64,
) -> Result<(DMatrix<f64>, usize)> {
    p.check()?;
    let mut k = match k0 {
        Some(k) => k,
        None => bass_gain(&p.a, &p.b)?,
    };
    if !is_hurwitz(&(&p.a - &p.b * &k)) {
        return Err(Error::Solver("initial Newton–Kleinman gain is not stabilizing".into()));
    }
    let mut x_prev: Option<DMatrix<f64>> = None;
    for it in 1..=NEWTON_MAX_ITER {
        let acl = &p.a - &p.b * &k;
        let n = &p.q + k.transpose() * &p.r * &k;
        let x = solve_lyapunov(&acl.transpose(), &n)?;
        k = p.gain(&x)?;
        if let Some(prev) = &x_prev {
            let step = frobenius(&(&x - prev));
            let nx = frobenius(&x).max(f64::MIN_POSITIVE);
            if step <= rel_tol * nx {
                return Ok((x, it));
            }
        }
        x_prev = Some(x);
    }
    let x = x_prev.expect("at least one iteration");
    Err(Error::Convergence {
        iterations: NEWTON_MAX_ITER,
        residual: p.relative_residual(&x)?,
    })
}

/// One Newton correction from a stabilizing approximate solution.
pub fn newton_polish(p: &CareProblem, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = p.gain(x)?;
    let acl = &p.a - &p.b * &k;
    let n = &p.q + k.transpose() * &p.r * &k;
    solve_lyapunov(&acl.transpose(), &n)
}
