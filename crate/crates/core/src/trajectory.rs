//! Euler–Maruyama simulation of the conditional means under feedback.
//!
//! `dX = (A - BK) X dt + G dw`, with innovation increments `dw` drawn from
//! `N(0, dt/2)` per channel and photocurrents `I dt = C X dt + dw`.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{closed_loop, ClosedLoop};
use crate::entanglement::CostKind;
use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, spectral_abscissa};
use crate::model::{FeedbackConfig, PhysicalParams, StateSpaceModel};

/// Norm beyond which a trajectory is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e6;
/// Upper bound on `dt * Omega_-`.
pub const MAX_PHASE_STEP: f64 = 0.05;
/// Burn-in must cover this many closed-loop decay times.
pub const BURN_IN_DECAY_TIMES: f64 = 10.0;
/// Bootstrap resamples used for standard errors.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub dt: f64,
    /// Steps recorded after burn-in.
    pub steps: usize,
    pub burn_in: usize,
    pub n_traj: usize,
    pub seed: u64,
    /// Keep every n-th step in records and CSV dumps.
    #[serde(default = "one")]
    pub decimation: usize,
}

fn one() -> usize {
    1
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self { dt: 0.0025, steps: 4000, burn_in: 100_000, n_traj: 1, seed: 0, decimation: 1 }
    }
}

impl TrajectoryConfig {
    /// Smallest burn-in (in steps) covering the required number of decay times.
    pub fn min_burn_in(dt: f64, a_closed: &DMatrix<f64>) -> usize {
        let decay = -spectral_abscissa(a_closed);
        (BURN_IN_DECAY_TIMES / (decay * dt)).ceil() as usize
    }

    pub fn validate(&self, a_closed: &DMatrix<f64>, omega_minus: f64) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Input(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.dt * omega_minus.max(1.0) >= MAX_PHASE_STEP {
            return Err(Error::Input(format!(
                "dt = {} does not resolve the oscillation (dt * Omega = {:.3} >= {MAX_PHASE_STEP})",
                self.dt,
                self.dt * omega_minus.max(1.0)
            )));
        }
        if self.n_traj == 0 || self.decimation == 0 {
            return Err(Error::Input("n_traj and decimation must be >= 1".into()));
        }
        let need = Self::min_burn_in(self.dt, a_closed);
        if self.burn_in < need {
            return Err(Error::Input(format!(
                "burn_in = {} steps is shorter than {BURN_IN_DECAY_TIMES} closed-loop decay times ({need} steps)",
                self.burn_in
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub x_c: Vec<[f64; 4]>,
    pub photocurrents: Vec<[f64; 2]>,
    pub controls: Vec<Vec<f64>>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Writes `t,x_plus,p_plus,x_minus,p_minus,I_plus,I_minus[,u1,u2]`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let k = self.controls.first().map_or(0, Vec::len);
        let mut header = String::from("t,x_plus,p_plus,x_minus,p_minus,I_plus,I_minus");
        for j in 1..=k {
            header.push_str(&format!(",u{j}"));
        }
        writeln!(w, "{header}")?;
        for i in 0..self.len() {
            let x = &self.x_c[i];
            let c = &self.photocurrents[i];
            write!(w, "{:e},{:e},{:e},{:e},{:e},{:e},{:e}", self.times[i], x[0], x[1], x[2], x[3], c[0], c[1])?;
            for u in &self.controls[i] {
                write!(w, ",{u:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Ensemble statistics of the terminal conditional means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_traj: usize,
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Bootstrap standard error of each covariance entry.
    pub std_err: DMatrix<f64>,
}

/// Fixed-gain linear SDE for the conditional means.
#[derive(Debug, Clone)]
pub struct Simulator {
    a_closed: Matrix4<f64>,
    kalman_gain: Matrix4x2<f64>,
    k_gain: DMatrix<f64>,
    c_mat: Matrix2x4<f64>,
    init_sqrt: Option<Matrix4<f64>>,
}

impl Simulator {
    pub fn from_closed_loop(cl: &ClosedLoop, model: &StateSpaceModel) -> Self {
        Self::from_parts(&cl.a_closed, &cl.kalman_gain, &cl.k_gain, &model.c_mat, Some(cl.xi_excess.mat()))
    }

    /// `init_cov` selects a Gaussian initial state; `None` starts at the origin.
    pub fn from_parts(
        a_closed: &DMatrix<f64>,
        kalman_gain: &DMatrix<f64>,
        k_gain: &DMatrix<f64>,
        c_mat: &DMatrix<f64>,
        init_cov: Option<&DMatrix<f64>>,
    ) -> Self {
        Self {
            a_closed: Matrix4::from_fn(|i, j| a_closed[(i, j)]),
            kalman_gain: Matrix4x2::from_fn(|i, j| kalman_gain[(i, j)]),
            k_gain: k_gain.clone(),
            c_mat: Matrix2x4::from_fn(|i, j| c_mat[(i, j)]),
            init_sqrt: init_cov.map(|c| {
                let s = psd_sqrt(c);
                Matrix4::from_fn(|i, j| s[(i, j)])
            }),
        }
    }

    fn rng(seed: u64, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        rng
    }

    fn initial<R: Rng>(&self, rng: &mut R) -> Vector4<f64> {
        match &self.init_sqrt {
            Some(s) => {
                let z = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                s * z
            }
            None => Vector4::zeros(),
        }
    }

    /// Runs trajectory `index`; returns the terminal state and, if requested, the record.
    pub fn run(&self, cfg: &TrajectoryConfig, index: u64, record: bool) -> Result<(Vector4<f64>, Option<TrajectoryRecord>)> {
        let mut rng = Self::rng(cfg.seed, index);
        let mut x = self.initial(&mut rng);
        let sd = (cfg.dt / 2.0).sqrt();
        let drift = Matrix4::identity() + self.a_closed * cfg.dt;
        let total = cfg.burn_in + cfg.steps;
        let mut rec = record.then(|| {
            let n = cfg.steps / cfg.decimation + 1;
            TrajectoryRecord {
                times: Vec::with_capacity(n),
                x_c: Vec::with_capacity(n),
                photocurrents: Vec::with_capacity(n),
                controls: Vec::with_capacity(n),
            }
        });
        for step in 0..total {
            let dw = Vector2::new(
                sd * rng.sample::<f64, _>(StandardNormal),
                sd * rng.sample::<f64, _>(StandardNormal),
            );
            if let Some(r) = rec.as_mut() {
                let kept = step - cfg.burn_in.min(step);
                if step >= cfg.burn_in && kept % cfg.decimation == 0 {
                    let current = self.c_mat * x + dw / cfg.dt;
                    let xd = DVector::from_column_slice(x.as_slice());
                    let u = -(&self.k_gain * xd);
                    r.times.push(step as f64 * cfg.dt);
                    r.x_c.push([x[0], x[1], x[2], x[3]]);
                    r.photocurrents.push([current[0], current[1]]);
                    r.controls.push(u.iter().copied().collect());
                }
            }
            x = drift * x + self.kalman_gain * dw;
            if !(x.norm() <= DIVERGENCE_NORM) {
                return Err(Error::Stability(format!(
                    "trajectory {index} diverged at step {step} (|X| = {:e}); reduce dt or check the feedback gain",
                    x.norm()
                )));
            }
        }
        Ok((x, rec))
    }

    /// Terminal states of `n_traj` independent trajectories, indexed by trajectory number.
    pub fn terminal_states(&self, cfg: &TrajectoryConfig) -> Result<Vec<Vector4<f64>>> {
        (0..cfg.n_traj as u64)
            .into_par_iter()
            .map(|i| self.run(cfg, i, false).map(|(x, _)| x))
            .collect()
    }

    pub fn ensemble(&self, cfg: &TrajectoryConfig) -> Result<EnsembleStats> {
        let xs = self.terminal_states(cfg)?;
        Ok(ensemble_stats(&xs, cfg.seed))
    }
}

fn covariance(xs: &[Vector4<f64>], idx: impl Iterator<Item = usize> + Clone) -> (Vector4<f64>, Matrix4<f64>) {
    let n = idx.clone().count() as f64;
    let mean = idx.clone().fold(Vector4::zeros(), |acc, i| acc + xs[i]) / n;
    let cov = idx.fold(Matrix4::zeros(), |acc, i| {
        let d = xs[i] - mean;
        acc + d * d.transpose()
    }) / (n - 1.0);
    (mean, cov)
}

/// Sample mean and covariance with bootstrap standard errors.
pub fn ensemble_stats(xs: &[Vector4<f64>], seed: u64) -> EnsembleStats {
    let n = xs.len();
    let (mean, cov) = covariance(xs, 0..n);
    let mut rng = Simulator::rng(seed ^ 0x9e37_79b9_7f4a_7c15, u64::MAX);
    let mut sum = Matrix4::zeros();
    let mut sum_sq = Matrix4::zeros();
    let mut picks = vec![0usize; n];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for p in picks.iter_mut() {
            *p = rng.random_range(0..n);
        }
        let (_, c) = covariance(xs, picks.iter().copied());
        sum += c;
        sum_sq += c.component_mul(&c);
    }
    let b = BOOTSTRAP_RESAMPLES as f64;
    let var = (sum_sq - sum.component_mul(&sum) / b) / (b - 1.0);
    EnsembleStats {
        n_traj: n,
        mean: mean.iter().copied().collect(),
        covariance: DMatrix::from_fn(4, 4, |i, j| cov[(i, j)]),
        std_err: DMatrix::from_fn(4, 4, |i, j| var[(i, j)].max(0.0).sqrt()),
    }
}

/// Records trajectory 0 of the closed loop defined by `params`, `fb` and `cost`.
pub fn simulate(
    params: &PhysicalParams,
    fb: &FeedbackConfig,
    cost: CostKind,
    cfg: &TrajectoryConfig,
) -> Result<TrajectoryRecord> {
    let model = crate::model::build_model(params, fb)?;
    let cl = closed_loop(params, fb, cost)?;
    cfg.validate(&cl.a_closed, model.omega_minus)?;
    let sim = Simulator::from_closed_loop(&cl, &model);
    let (_, rec) = sim.run(cfg, 0, true)?;
    Ok(rec.expect("record requested"))
}

/// Samples `n` draws of a single innovation increment; used to check the `dt/2` convention.
pub fn sample_increments(seed: u64, dt: f64, n: usize) -> Vec<f64> {
    let mut rng = Simulator::rng(seed, 0);
    let d = rand_distr::Normal::new(0.0, (dt / 2.0).sqrt()).expect("finite variance");
    (0..n).map(|_| d.sample(&mut rng)).collect()
}
