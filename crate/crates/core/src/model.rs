//! Physical parameters and the normal-mode state-space model.
//!
//! Everything downstream works in units of the trap frequency: `build_model`
//! divides every rate by `omega0`, so the returned matrices are dimensionless
//! and `omega_plus == 1`. The state vector is always ordered
//! `(x_plus, p_plus, x_minus, p_minus)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::constants::HBAR;
use crate::error::{Error, Result};
use crate::linalg::{rank, RANK_REL_TOL};

/// Largest admissible repulsive coupling, `g / omega0 > -1/4`.
pub const STABILITY_EDGE: f64 = -0.25;

/// Experiment-level parameters. Rates are angular frequencies (rad/s), charges
/// are in elementary charges; only their ratio matters here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub omega0: f64,
    pub g: f64,
    pub gamma: f64,
    pub gamma_th: f64,
    pub gamma_ba: f64,
    pub eta: f64,
    pub q1: f64,
    pub q2: f64,
}

impl Default for PhysicalParams {
    /// Baseline: back-action 5% of the trap frequency, thermal 5% of back-action,
    /// quality factor 1e10, unit efficiency, uncoupled, charge ratio 3.
    fn default() -> Self {
        Self::from_ratios(0.0, 0.05, 0.05, 1e10, 1.0)
    }
}

impl PhysicalParams {
    /// Dimensionless construction with `omega0 = 1`.
    pub fn from_ratios(
        g_over_omega0: f64,
        gamma_ba_over_omega0: f64,
        gamma_th_over_gamma_ba: f64,
        quality_factor: f64,
        eta: f64,
    ) -> Self {
        Self {
            omega0: 1.0,
            g: g_over_omega0,
            gamma: 1.0 / quality_factor,
            gamma_th: gamma_th_over_gamma_ba * gamma_ba_over_omega0,
            gamma_ba: gamma_ba_over_omega0,
            eta,
            q1: 3.0,
            q2: 1.0,
        }
    }

    pub fn with_g_ratio(mut self, g_over_omega0: f64) -> Self {
        self.g = g_over_omega0 * self.omega0;
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_charges(mut self, q1: f64, q2: f64) -> Self {
        self.q1 = q1;
        self.q2 = q2;
        self
    }

    /// Measurement rate `eta * gamma_ba`.
    pub fn gamma_m(&self) -> f64 {
        self.eta * self.gamma_ba
    }

    pub fn gamma_tot(&self) -> f64 {
        self.gamma_ba + self.gamma_th
    }

    pub fn g_ratio(&self) -> f64 {
        self.g / self.omega0
    }

    /// Checks every invariant except mechanical stability.
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.omega0,
            self.g,
            self.gamma,
            self.gamma_th,
            self.gamma_ba,
            self.eta,
            self.q1,
            self.q2,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Input("non-finite physical parameter".into()));
        }
        if self.omega0 <= 0.0 {
            return Err(Error::Input(format!("omega0 must be > 0, got {}", self.omega0)));
        }
        if self.gamma < 0.0 || self.gamma_th < 0.0 {
            return Err(Error::Input("damping and thermal rates must be >= 0".into()));
        }
        if self.gamma_ba <= 0.0 {
            return Err(Error::Input(format!("gamma_ba must be > 0, got {}", self.gamma_ba)));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Input(format!("eta must lie in (0, 1], got {}", self.eta)));
        }
        Ok(())
    }

    pub fn check_stability(&self) -> Result<()> {
        if self.g_ratio() <= STABILITY_EDGE {
            return Err(Error::Stability(format!(
                "g/omega0 = {} <= -1/4: the differential mode is unbound",
                self.g_ratio()
            )));
        }
        Ok(())
    }
}

/// Pairwise `C / r^n` interaction between the two particles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionSpec {
    /// Interaction constant C (J·m^n); negative for attraction.
    pub c_const: f64,
    /// Mean separation d (m).
    pub d: f64,
    /// Power-law exponent n.
    pub n: u32,
    /// Particle mass (kg).
    pub mass: f64,
}

impl InteractionSpec {
    /// Coulomb interaction between charges given in elementary charges.
    pub fn coulomb(q1: f64, q2: f64, d: f64, mass: f64) -> Self {
        use crate::constants::{ELEMENTARY_CHARGE, EPSILON_0};
        let c = q1 * q2 * ELEMENTARY_CHARGE * ELEMENTARY_CHARGE
            / (4.0 * std::f64::consts::PI * EPSILON_0);
        Self { c_const: c, d, n: 1, mass }
    }
}

/// Coupling rate (rad/s) from the second-order expansion of the interaction:
/// `g = -C x_zpf^2 / (2 hbar d^(n+2) n)` with `x_zpf = sqrt(hbar / (m omega0))`.
pub fn coupling_rate(spec: &InteractionSpec, omega0: f64) -> Result<f64> {
    if !(spec.d > 0.0) || spec.n < 1 || !(spec.mass > 0.0) || !(omega0 > 0.0) {
        return Err(Error::Input(format!("invalid interaction geometry {spec:?}")));
    }
    let x_zpf_sq = HBAR / (spec.mass * omega0);
    let n = spec.n as f64;
    let denom = 2.0 * HBAR * spec.d.powi(spec.n as i32 + 2) * n;
    let g = -spec.c_const * x_zpf_sq / denom;
    if !g.is_finite() || denom == 0.0 {
        return Err(Error::Domain(format!(
            "coupling rate not representable (d^(n+2) = {:e})",
            spec.d.powi(spec.n as i32 + 2)
        )));
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackMode {
    /// One electric field acting on both charged particles.
    Single,
    /// Each particle driven by its own force.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackConfig {
    pub mode: FeedbackMode,
    /// Control effort q; the input penalty is `q / omega0` per input.
    pub effort: f64,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self { mode: FeedbackMode::Single, effort: 0.1 }
    }
}

impl FeedbackConfig {
    pub fn single(effort: f64) -> Self {
        Self { mode: FeedbackMode::Single, effort }
    }

    pub fn independent(effort: f64) -> Self {
        Self { mode: FeedbackMode::Independent, effort }
    }

    pub fn inputs(&self) -> usize {
        match self.mode {
            FeedbackMode::Single => 1,
            FeedbackMode::Independent => 2,
        }
    }
}

/// Common (`Plus`) or differential (`Minus`) normal mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormalMode {
    Plus,
    Minus,
}

impl NormalMode {
    pub const BOTH: [NormalMode; 2] = [NormalMode::Plus, NormalMode::Minus];

    /// Offset of this mode's (x, p) pair in the state vector.
    pub fn offset(self) -> usize {
        match self {
            NormalMode::Plus => 0,
            NormalMode::Minus => 2,
        }
    }
}

/// Rates divided by omega0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub g: f64,
    pub gamma: f64,
    pub gamma_th: f64,
    pub gamma_ba: f64,
    pub gamma_m: f64,
}

impl Rates {
    pub fn gamma_tot(&self) -> f64 {
        self.gamma_ba + self.gamma_th
    }

    pub fn eta(&self) -> f64 {
        self.gamma_m / self.gamma_ba
    }
}

/// Dimensionless normal-mode model `(A, B, C, V, W, M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a_mat: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub c_mat: DMatrix<f64>,
    pub v_mat: DMatrix<f64>,
    pub w_mat: DMatrix<f64>,
    pub m_mat: DMatrix<f64>,
    pub omega_plus: f64,
    pub omega_minus: f64,
    pub alpha_plus: f64,
    pub alpha_minus: f64,
    pub rates: Rates,
    pub feedback: FeedbackConfig,
    /// Trap frequency used for normalization (rad/s).
    pub omega0_si: f64,
}

impl StateSpaceModel {
    pub fn omega(&self, s: NormalMode) -> f64 {
        match s {
            NormalMode::Plus => self.omega_plus,
            NormalMode::Minus => self.omega_minus,
        }
    }

    pub fn alpha(&self, s: NormalMode) -> f64 {
        match s {
            NormalMode::Plus => self.alpha_plus,
            NormalMode::Minus => self.alpha_minus,
        }
    }

    /// Control-effort matrix `Q = (q / omega0) I_k`, dimensionless.
    pub fn effort_matrix(&self) -> DMatrix<f64> {
        DMatrix::identity(self.b_mat.ncols(), self.b_mat.ncols()) * self.feedback.effort
    }

    /// Symplectic map from bare `(x1, p1, x2, p2)` to normal `(x+, p+, x-, p-)` quadratures.
    pub fn normal_mode_transform(&self) -> DMatrix<f64> {
        normal_mode_transform(self.alpha_plus, self.alpha_minus)
    }

    /// Inverse of [`Self::normal_mode_transform`], written out explicitly.
    pub fn bare_mode_transform(&self) -> DMatrix<f64> {
        bare_mode_transform(self.alpha_plus, self.alpha_minus)
    }
}

pub fn normal_mode_transform(alpha_plus: f64, alpha_minus: f64) -> DMatrix<f64> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let (ap, am) = (alpha_plus, alpha_minus);
    DMatrix::from_row_slice(
        4,
        4,
        &[
            ap * h, 0.0, ap * h, 0.0,
            0.0, h / ap, 0.0, h / ap,
            am * h, 0.0, -am * h, 0.0,
            0.0, h / am, 0.0, -h / am,
        ],
    )
}

pub fn bare_mode_transform(alpha_plus: f64, alpha_minus: f64) -> DMatrix<f64> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let (ap, am) = (alpha_plus, alpha_minus);
    DMatrix::from_row_slice(
        4,
        4,
        &[
            h / ap, 0.0, h / am, 0.0,
            0.0, ap * h, 0.0, am * h,
            h / ap, 0.0, -h / am, 0.0,
            0.0, ap * h, 0.0, -am * h,
        ],
    )
}

/// Builds the dimensionless normal-mode model.
///
/// Input `u_plus` drives `p_plus` and `u_minus` drives `p_minus`. With a single
/// shared field the input column is `(0, 1/a+, 0, (Q1-Q2)/((Q1+Q2) a-))`.
pub fn build_model(params: &PhysicalParams, fb: &FeedbackConfig) -> Result<StateSpaceModel> {
    params.validate()?;
    params.check_stability()?;
    if !(fb.effort > 0.0) || !fb.effort.is_finite() {
        return Err(Error::Input(format!("control effort q must be > 0, got {}", fb.effort)));
    }
    if fb.mode == FeedbackMode::Single && params.q1.abs() == params.q2.abs() {
        return Err(Error::Controllability(format!(
            "single feedback needs |Q1| != |Q2| (got Q1 = {}, Q2 = {}); \
             otherwise the differential mode cannot be actuated",
            params.q1, params.q2
        )));
    }

    let w0 = params.omega0;
    let rates = Rates {
        g: params.g / w0,
        gamma: params.gamma / w0,
        gamma_th: params.gamma_th / w0,
        gamma_ba: params.gamma_ba / w0,
        gamma_m: params.gamma_m() / w0,
    };

    let omega_plus: f64 = 1.0;
    let omega_minus = (1.0 + 4.0 * rates.g).sqrt();
    let alpha_plus = omega_plus.sqrt();
    let alpha_minus = omega_minus.sqrt();

    let mut a_mat = DMatrix::zeros(4, 4);
    for (off, w) in [(0, omega_plus), (2, omega_minus)] {
        a_mat[(off, off + 1)] = w;
        a_mat[(off + 1, off)] = -w;
        a_mat[(off + 1, off + 1)] = -rates.gamma;
    }

    let b_mat = match fb.mode {
        FeedbackMode::Independent => {
            let mut b = DMatrix::zeros(4, 2);
            b[(1, 0)] = 1.0;
            b[(3, 1)] = 1.0;
            b
        }
        FeedbackMode::Single => {
            let ratio = (params.q1 - params.q2) / (params.q1 + params.q2);
            DMatrix::from_column_slice(4, 1, &[0.0, 1.0 / alpha_plus, 0.0, ratio / alpha_minus])
        }
    };

    let sm = rates.gamma_m.sqrt();
    let mut c_mat = DMatrix::zeros(2, 4);
    c_mat[(0, 0)] = sm / alpha_plus;
    c_mat[(1, 2)] = sm / alpha_minus;

    let gt = rates.gamma_tot();
    let v_mat = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[
        0.0,
        gt / (alpha_plus * alpha_plus),
        0.0,
        gt / (alpha_minus * alpha_minus),
    ]));

    Ok(StateSpaceModel {
        a_mat,
        b_mat,
        c_mat,
        v_mat,
        w_mat: DMatrix::identity(2, 2) * 0.5,
        m_mat: DMatrix::zeros(4, 2),
        omega_plus,
        omega_minus,
        alpha_plus,
        alpha_minus,
        rates,
        feedback: *fb,
        omega0_si: w0,
    })
}

/// `[C; CA; CA^2; CA^3]`.
pub fn observability_matrix(model: &StateSpaceModel) -> DMatrix<f64> {
    let n = model.a_mat.nrows();
    let p = model.c_mat.nrows();
    let mut out = DMatrix::zeros(n * p, n);
    let mut block = model.c_mat.clone();
    for k in 0..n {
        out.view_mut((k * p, 0), (p, n)).copy_from(&block);
        block = &block * &model.a_mat;
    }
    out
}

pub fn is_observable(model: &StateSpaceModel) -> bool {
    rank(&observability_matrix(model), RANK_REL_TOL) == model.a_mat.nrows()
}

/// `[B, AB, A^2 B, A^3 B]`.
pub fn controllability_matrix(model: &StateSpaceModel) -> DMatrix<f64> {
    let n = model.a_mat.nrows();
    let k = model.b_mat.ncols();
    let mut out = DMatrix::zeros(n, n * k);
    let mut block = model.b_mat.clone();
    for j in 0..n {
        out.view_mut((0, j * k), (n, k)).copy_from(&block);
        block = &model.a_mat * &block;
    }
    out
}

pub fn is_controllable(model: &StateSpaceModel) -> bool {
    rank(&controllability_matrix(model), RANK_REL_TOL) == model.a_mat.nrows()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symplectic_form;

    fn fig2() -> PhysicalParams {
        PhysicalParams::default()
    }

    #[test]
    fn uncoupled_model_is_symmetric() {
        let m = build_model(&fig2(), &FeedbackConfig::independent(0.1)).unwrap();
        assert_eq!(m.omega_minus, 1.0);
        assert_eq!(m.alpha_plus, 1.0);
        assert_eq!(m.alpha_minus, 1.0);
        let gt = 0.05 * 1.05;
        let expect = [0.0, gt, 0.0, gt];
        for (i, e) in expect.iter().enumerate() {
            assert!((m.v_mat[(i, i)] - e).abs() < 1e-15);
        }
    }

    #[test]
    fn repulsive_three_sixteenths_halves_the_frequency() {
        let p = fig2().with_g_ratio(-3.0 / 16.0);
        let m = build_model(&p, &FeedbackConfig::independent(0.1)).unwrap();
        assert_eq!(m.omega_minus, 0.5);
        assert!((m.alpha_minus - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn single_feedback_column() {
        let p = fig2().with_g_ratio(-0.2).with_charges(3.0, 1.0);
        let m = build_model(&p, &FeedbackConfig::single(0.1)).unwrap();
        assert_eq!(m.b_mat.ncols(), 1);
        assert!((m.b_mat[(3, 0)] - 0.5 / m.alpha_minus).abs() < 1e-15);
        assert_eq!(m.b_mat[(1, 0)], 1.0);
    }

    #[test]
    fn equal_charges_rejected_for_single_feedback() {
        let p = fig2().with_charges(2.0, -2.0);
        let err = build_model(&p, &FeedbackConfig::single(0.1)).unwrap_err();
        assert!(matches!(err, Error::Controllability(_)));
        assert!(err.to_string().contains("|Q1| != |Q2|"));
    }

    #[test]
    fn stability_edge_rejected() {
        let p = fig2().with_g_ratio(-0.25);
        let err = build_model(&p, &FeedbackConfig::independent(0.1)).unwrap_err();
        assert!(matches!(err, Error::Stability(_)));
        assert!(build_model(&fig2().with_g_ratio(-0.2499), &FeedbackConfig::independent(0.1)).is_ok());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(fig2().with_eta(0.0).validate().is_err());
        assert!(fig2().with_eta(1.2).validate().is_err());
        let mut p = fig2();
        p.gamma_ba = 0.0;
        assert!(p.validate().is_err());
        assert!(build_model(&fig2(), &FeedbackConfig::independent(0.0)).is_err());
    }

    #[test]
    fn rank_tests() {
        let m = build_model(&fig2().with_g_ratio(-0.2), &FeedbackConfig::independent(0.1)).unwrap();
        assert!(is_observable(&m));
        assert!(is_controllable(&m));

        let mut blind = m.clone();
        blind.c_mat.fill(0.0);
        assert_eq!(rank(&observability_matrix(&blind), RANK_REL_TOL), 0);

        let mut half = m.clone();
        half.c_mat.row_mut(1).fill(0.0);
        assert_eq!(rank(&observability_matrix(&half), RANK_REL_TOL), 2);
        assert!(!is_observable(&half));
    }

    #[test]
    fn single_feedback_controllability() {
        let p = fig2().with_g_ratio(-0.2);
        let m = build_model(&p, &FeedbackConfig::single(0.1)).unwrap();
        assert_eq!(observability_matrix(&m).shape(), (8, 4));
        assert_eq!(controllability_matrix(&m).shape(), (4, 4));
        assert!(is_controllable(&m));

        // Equal charges zero the differential entry; force it past the constructor check.
        let mut eq = m.clone();
        eq.b_mat[(3, 0)] = 0.0;
        assert_eq!(rank(&controllability_matrix(&eq), RANK_REL_TOL), 2);
        assert!(!is_controllable(&eq));
    }

    #[test]
    fn frequency_ordering_follows_sign_of_g() {
        for g in [-0.24, -0.1, -1e-6, 0.0, 1e-6, 0.3, 2.0] {
            let m = build_model(&fig2().with_g_ratio(g), &FeedbackConfig::independent(0.1)).unwrap();
            assert_eq!(m.omega_minus <= 1.0, g <= 0.0, "g = {g}");
            assert_eq!(m.omega_plus, 1.0);
        }
    }

    #[test]
    fn transform_is_symplectic_and_inverted() {
        let j = symplectic_form(2);
        for k in 0..10 {
            let g = -0.24 + 0.25 * k as f64;
            let m = build_model(&fig2().with_g_ratio(g), &FeedbackConfig::independent(0.1)).unwrap();
            let s = m.normal_mode_transform();
            assert!((&s * &j * s.transpose() - &j).amax() < 1e-14);
            let id = &s * m.bare_mode_transform();
            assert!((id - DMatrix::<f64>::identity(4, 4)).amax() < 1e-14);
        }
    }

    #[test]
    fn build_is_deterministic() {
        let p = fig2().with_g_ratio(-0.21).with_eta(0.37);
        let a = build_model(&p, &FeedbackConfig::single(0.1)).unwrap();
        let b = build_model(&p, &FeedbackConfig::single(0.1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coupling_rate_sign_and_scaling() {
        let mass = 1e-18;
        let w0 = 1e5;
        let attractive = InteractionSpec { c_const: -1e-25, d: 2e-6, n: 1, mass };
        assert!(coupling_rate(&attractive, w0).unwrap() > 0.0);
        let near = InteractionSpec { c_const: 1e-25, d: 2e-6, n: 1, mass };
        let far = InteractionSpec { d: 4e-6, ..near };
        let ratio = coupling_rate(&far, w0).unwrap() / coupling_rate(&near, w0).unwrap();
        assert!((ratio - 0.125).abs() < 1e-14);
    }

    #[test]
    fn coupling_rate_rejects_degenerate_geometry() {
        let bad = InteractionSpec { c_const: 1e-25, d: 0.0, n: 1, mass: 1e-18 };
        assert!(coupling_rate(&bad, 1e5).is_err());
        let tiny = InteractionSpec { c_const: 1e-25, d: 1e-200, n: 3, mass: 1e-18 };
        assert!(matches!(coupling_rate(&tiny, 1e5), Err(Error::Domain(_))));
    }

    #[test]
    fn levitated_silica_coulomb_coupling() {
        // 50 nm silica spheres, 50 e each, 3.5 um apart, 29.5 kHz trap.
        let radius: f64 = 50e-9;
        let mass = 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3) * 1850.0;
        let w0 = 2.0 * std::f64::consts::PI * 29.5e3;
        let spec = InteractionSpec::coulomb(50.0, 50.0, 3.5e-6, mass);
        let ratio = coupling_rate(&spec, w0).unwrap() / w0;
        // Repulsive and close to the critical differential-mode coupling (-0.1933).
        assert!(ratio < 0.0);
        assert!((ratio - (-0.19331)).abs() / 0.19331 < 0.10, "g/omega0 = {ratio}");
        assert!((ratio - (-0.20211)).abs() < 1e-4);
    }
}
