//! Grid evaluation over (g/omega0, eta) and extraction of the separability
//! boundary `nu = 1/2`.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::assemble;
use crate::entanglement::{assess, cost_matrix, default_theta, threshold_conditional, CostKind, EntanglementReport};
use crate::error::{Error, Result};
use crate::model::{build_model, FeedbackConfig, PhysicalParams, STABILITY_EDGE};
use crate::solvers::{solve_control_care, solve_filter_care};

pub const SCHEMA_VERSION: u32 = 1;
/// Cells closer than this to the stability edge are skipped.
pub const EDGE_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| if i + 1 == self.count { self.max } else { self.min + step * i as f64 })
            .collect()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.count == 0 || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::Input(format!("{name} axis needs finite bounds and count >= 1")));
        }
        if self.count > 1 && !(self.max > self.min) {
            return Err(Error::Input(format!("{name} axis must be increasing ({} .. {})", self.min, self.max)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    CondEn,
    UncondEn,
    NuCond,
    NuUncond,
    /// EPR variance of the unconditional state.
    EprVar,
    /// Analytic efficiency threshold of the branch the cell sits on.
    Thresholds,
}

impl Quantity {
    pub const ALL: [Quantity; 6] = [
        Quantity::CondEn,
        Quantity::UncondEn,
        Quantity::NuCond,
        Quantity::NuUncond,
        Quantity::EprVar,
        Quantity::Thresholds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::CondEn => "cond_en",
            Quantity::UncondEn => "uncond_en",
            Quantity::NuCond => "nu_cond",
            Quantity::NuUncond => "nu_uncond",
            Quantity::EprVar => "epr_var",
            Quantity::Thresholds => "thresholds",
        }
    }

    fn needs_closed_loop(self) -> bool {
        matches!(self, Quantity::UncondEn | Quantity::NuUncond | Quantity::EprVar)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub g_over_omega0: Axis,
    pub eta: Axis,
    pub fixed: PhysicalParams,
    pub feedback: FeedbackConfig,
    pub cost: CostKind,
    pub quantities: Vec<Quantity>,
}

impl SweepSpec {
    pub fn conditional(g: Axis, eta: Axis, fixed: PhysicalParams) -> Self {
        Self {
            g_over_omega0: g,
            eta,
            fixed,
            feedback: FeedbackConfig::default(),
            cost: CostKind::Cool,
            quantities: vec![Quantity::CondEn, Quantity::NuCond],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.g_over_omega0.validate("g")?;
        self.eta.validate("eta")?;
        if self.quantities.is_empty() {
            return Err(Error::Input("no sweep quantities requested".into()));
        }
        if !(self.eta.min > 0.0) || self.eta.max > 1.0 {
            return Err(Error::Input("eta axis must lie in (0, 1]".into()));
        }
        self.fixed.with_g_ratio(0.0).with_eta(self.eta.max).validate()
    }

    fn quantities_sorted(&self) -> Vec<Quantity> {
        let mut q = self.quantities.clone();
        q.sort();
        q.dedup();
        q
    }

    fn needs_closed_loop(&self) -> bool {
        self.quantities.iter().any(|q| q.needs_closed_loop())
    }
}

/// One straight-line piece of a level set, as `(g, eta)` vertices.
pub type Polyline = Vec<[f64; 2]>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    pub code_version: String,
    pub spec: SweepSpec,
    pub max_filter_residual: f64,
    pub max_control_residual: f64,
    /// Smallest symplectic eigenvalue of any covariance produced.
    pub min_symplectic_eigenvalue: f64,
    pub cells_ok: usize,
    pub cells_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema_version: u32,
    pub g_values: Vec<f64>,
    pub eta_values: Vec<f64>,
    /// `values[quantity][i_g][i_eta]`; `None` for failed or skipped cells.
    pub values: BTreeMap<String, Vec<Vec<Option<f64>>>>,
    /// `"ok"`, `"edge"` or an error code, indexed `[i_g][i_eta]`.
    pub status: Vec<Vec<String>>,
    /// Level sets `nu = 1/2` of the conditional and (if computed) unconditional states.
    pub boundaries: BTreeMap<String, Vec<Polyline>>,
    pub metadata: SweepMetadata,
}

#[derive(Debug, Clone, Default)]
struct CellOut {
    cond: Option<EntanglementReport>,
    uncond: Option<EntanglementReport>,
    threshold: Option<f64>,
    filter_residual: f64,
    control_residual: f64,
    min_nu: f64,
}

fn eval_cell(spec: &SweepSpec, g: f64, eta: f64) -> Result<CellOut> {
    let params = spec.fixed.with_g_ratio(g).with_eta(eta);
    let model = build_model(&params, &spec.feedback)?;
    let theta = match spec.cost {
        CostKind::Epr { theta } => theta,
        CostKind::Cool => default_theta(g),
    };
    let filt = solve_filter_care(&model)?;
    let sigma_c = filt.as_covariance()?;
    let mut out = CellOut {
        filter_residual: filt.residual_norm,
        min_nu: sigma_c.min_symplectic_eigenvalue(),
        ..Default::default()
    };
    out.cond = Some(assess(&sigma_c, &model, theta)?);
    if spec.needs_closed_loop() {
        let p = cost_matrix(spec.cost, &model)?;
        let ctrl = solve_control_care(&model, &p)?;
        out.control_residual = ctrl.residual_norm;
        let cl = assemble(&model, filt.value, ctrl.value, spec.cost)?;
        out.min_nu = out.min_nu.min(cl.sigma_uncond.min_symplectic_eigenvalue());
        out.uncond = Some(assess(&cl.sigma_uncond, &model, theta)?);
    }
    if spec.quantities.contains(&Quantity::Thresholds) {
        let t = threshold_conditional(&params);
        out.threshold = Some(if g < 0.0 { t.eta_minus } else { t.eta_plus });
    }
    Ok(out)
}

fn pick(q: Quantity, c: &CellOut) -> Option<f64> {
    match q {
        Quantity::CondEn => c.cond.map(|r| r.log_negativity),
        Quantity::NuCond => c.cond.map(|r| r.symplectic_nu),
        Quantity::UncondEn => c.uncond.map(|r| r.log_negativity),
        Quantity::NuUncond => c.uncond.map(|r| r.symplectic_nu),
        Quantity::EprVar => c.uncond.map(|r| r.epr_variance),
        Quantity::Thresholds => c.threshold,
    }
}

/// Evaluates every cell on the current rayon pool.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let gs = spec.g_over_omega0.values();
    let etas = spec.eta.values();
    let n_eta = etas.len();
    let cells: Vec<std::result::Result<CellOut, Option<Error>>> = (0..gs.len() * n_eta)
        .into_par_iter()
        .map(|k| {
            let (g, eta) = (gs[k / n_eta], etas[k % n_eta]);
            if g <= STABILITY_EDGE + EDGE_MARGIN {
                return Err(None);
            }
            eval_cell(spec, g, eta).map_err(Some)
        })
        .collect();

    let quantities = spec.quantities_sorted();
    let mut values: BTreeMap<String, Vec<Vec<Option<f64>>>> = quantities
        .iter()
        .map(|q| (q.name().to_string(), vec![vec![None; n_eta]; gs.len()]))
        .collect();
    let mut status = vec![vec![String::new(); n_eta]; gs.len()];
    let mut first_err = None;
    let (mut ok, mut failed) = (0, 0);
    let (mut max_f, mut max_c, mut min_nu) = (0.0f64, 0.0f64, f64::INFINITY);
    for (k, cell) in cells.into_iter().enumerate() {
        let (i, j) = (k / n_eta, k % n_eta);
        match cell {
            Ok(c) => {
                ok += 1;
                status[i][j] = "ok".into();
                max_f = max_f.max(c.filter_residual);
                max_c = max_c.max(c.control_residual);
                min_nu = min_nu.min(c.min_nu);
                for q in &quantities {
                    values.get_mut(q.name()).expect("allocated")[i][j] = pick(*q, &c);
                }
            }
            Err(None) => {
                failed += 1;
                status[i][j] = "edge".into();
            }
            Err(Some(e)) => {
                failed += 1;
                log::debug!("cell g={} eta={} failed: {e}", gs[i], etas[j]);
                status[i][j] = e.code().to_string();
                first_err.get_or_insert(e);
            }
        }
    }
    if ok == 0 {
        let cause = first_err.unwrap_or_else(|| Error::Domain("every cell lies at the stability edge".into()));
        return Err(Error::Sweep(Box::new(cause)));
    }

    let mut boundaries = BTreeMap::new();
    for (name, q) in [("cond", Quantity::NuCond), ("uncond", Quantity::NuUncond)] {
        if let Some(v) = values.get(q.name()) {
            let f = margin_field(v);
            boundaries.insert(name.to_string(), contour_zero(&gs, &etas, &f));
        }
    }

    Ok(SweepResult {
        schema_version: SCHEMA_VERSION,
        g_values: gs,
        eta_values: etas,
        values,
        status,
        boundaries,
        metadata: SweepMetadata {
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            spec: spec.clone(),
            max_filter_residual: max_f,
            max_control_residual: max_c,
            min_symplectic_eigenvalue: min_nu,
            cells_ok: ok,
            cells_failed: failed,
        },
    })
}

/// Runs the sweep on a dedicated pool with `threads` workers (0 = rayon default).
pub fn run_sweep_with_threads(spec: &SweepSpec, threads: usize) -> Result<SweepResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    pool.install(|| run_sweep(spec))
}

/// `1/2 - nu` with failed cells as NaN.
fn margin_field(nu: &[Vec<Option<f64>>]) -> Vec<Vec<f64>> {
    nu.iter().map(|col| col.iter().map(|v| v.map_or(f64::NAN, |n| 0.5 - n)).collect()).collect()
}

/// Linear zero crossings of `f` between consecutive samples at `xs`.
pub fn zero_crossings(xs: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 0..xs.len().saturating_sub(1) {
        let (a, b) = (f[k], f[k + 1]);
        if !(a.is_finite() && b.is_finite()) {
            continue;
        }
        if a == 0.0 {
            out.push(xs[k]);
        } else if a * b < 0.0 {
            out.push(xs[k] + (xs[k + 1] - xs[k]) * a / (a - b));
        }
    }
    if let (Some(&x), Some(&v)) = (xs.last(), f.last()) {
        if v == 0.0 {
            out.push(x);
        }
    }
    out
}

impl SweepResult {
    pub fn quantity(&self, q: Quantity) -> Option<&Vec<Vec<Option<f64>>>> {
        self.values.get(q.name())
    }

    /// Coupling values where `nu = 1/2` along the row `eta_values[j]`.
    pub fn g_crossings(&self, q: Quantity, j: usize) -> Vec<f64> {
        let Some(v) = self.quantity(q) else { return Vec::new() };
        let f: Vec<f64> = v.iter().map(|col| col[j].map_or(f64::NAN, |n| 0.5 - n)).collect();
        zero_crossings(&self.g_values, &f)
    }

    /// Efficiencies where `nu = 1/2` along the column `g_values[i]`.
    pub fn eta_crossings(&self, q: Quantity, i: usize) -> Vec<f64> {
        let Some(v) = self.quantity(q) else { return Vec::new() };
        let f: Vec<f64> = v[i].iter().map(|x| x.map_or(f64::NAN, |n| 0.5 - n)).collect();
        zero_crossings(&self.eta_values, &f)
    }

    /// Cells where the quantity (a log-negativity) is positive.
    pub fn entangled_mask(&self, q: Quantity) -> Vec<Vec<bool>> {
        self.quantity(q)
            .map(|v| v.iter().map(|c| c.iter().map(|x| x.is_some_and(|e| e > 0.0)).collect()).collect())
            .unwrap_or_default()
    }

    /// Long format: `g,eta,quantity,value,status`, ordered by quantity, g, eta.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "g,eta,quantity,value,status")?;
        for (name, v) in &self.values {
            for (i, g) in self.g_values.iter().enumerate() {
                for (j, eta) in self.eta_values.iter().enumerate() {
                    let val = v[i][j].map(|x| x.to_string()).unwrap_or_default();
                    writeln!(w, "{g},{eta},{name},{val},{}", self.status[i][j])?;
                }
            }
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(w, self)
    }
}

/// Marching squares for the zero level of `f[i][j]` sampled at `(xs[i], ys[j])`.
/// Cells with any non-finite corner are skipped; saddles are resolved with the
/// cell-centre average.
pub fn contour_zero(xs: &[f64], ys: &[f64], f: &[Vec<f64>]) -> Vec<Polyline> {
    // Edge key: (i, j, 0) horizontal edge from (i,j) to (i+1,j); (i, j, 1) vertical to (i,j+1).
    type Key = (usize, usize, u8);
    let point = |k: Key| -> [f64; 2] {
        let (i, j, d) = k;
        let (i2, j2) = if d == 0 { (i + 1, j) } else { (i, j + 1) };
        let (a, b) = (f[i][j], f[i2][j2]);
        let t = if a == b { 0.5 } else { a / (a - b) };
        [xs[i] + (xs[i2] - xs[i]) * t, ys[j] + (ys[j2] - ys[j]) * t]
    };
    let mut segments: Vec<(Key, Key)> = Vec::new();
    for i in 0..xs.len().saturating_sub(1) {
        for j in 0..ys.len().saturating_sub(1) {
            let c = [f[i][j], f[i + 1][j], f[i + 1][j + 1], f[i][j + 1]];
            if c.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let inside: Vec<bool> = c.iter().map(|&v| v > 0.0).collect();
            // Edges in corner order: bottom, right, top, left.
            let edges: [Key; 4] = [(i, j, 0), (i + 1, j, 1), (i, j + 1, 0), (i, j, 1)];
            let cut: Vec<usize> = (0..4).filter(|&e| inside[e] != inside[(e + 1) % 4]).collect();
            match cut.len() {
                2 => segments.push((edges[cut[0]], edges[cut[1]])),
                4 => {
                    let centre = c.iter().sum::<f64>() / 4.0 > 0.0;
                    if centre == inside[0] {
                        segments.push((edges[0], edges[1]));
                        segments.push((edges[2], edges[3]));
                    } else {
                        segments.push((edges[3], edges[0]));
                        segments.push((edges[1], edges[2]));
                    }
                }
                _ => {}
            }
        }
    }

    let mut by_key: HashMap<Key, Vec<usize>> = HashMap::new();
    for (s, (a, b)) in segments.iter().enumerate() {
        by_key.entry(*a).or_default().push(s);
        by_key.entry(*b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut lines = Vec::new();
    let walk = |start: Key, used: &mut Vec<bool>, out: &mut Vec<Key>| {
        let mut at = start;
        while let Some(&s) = by_key.get(&at).and_then(|v| v.iter().find(|&&s| !used[s])) {
            used[s] = true;
            let (a, b) = segments[s];
            at = if a == at { b } else { a };
            out.push(at);
        }
    };
    for s in 0..segments.len() {
        if used[s] {
            continue;
        }
        used[s] = true;
        let (a, b) = segments[s];
        let mut fwd = vec![b];
        walk(b, &mut used, &mut fwd);
        let mut back = vec![a];
        walk(a, &mut used, &mut back);
        back.reverse();
        back.extend(fwd);
        lines.push(back.into_iter().map(point).collect());
    }
    lines
}
