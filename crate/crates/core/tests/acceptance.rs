//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints one PASS/FAIL line; exits non-zero if any fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use lqg_entanglement::control::{closed_loop, Quadrature};
use lqg_entanglement::control::uncond_asymptotic;
use lqg_entanglement::entanglement::{
    log_negativity_from_nu, normal_mode_nu, ppt_nu, threshold_conditional, to_bare_basis, CostKind,
};
use lqg_entanglement::linalg::{frobenius, min_sym_eigenvalue};
use lqg_entanglement::model::{build_model, FeedbackConfig, PhysicalParams};
use lqg_entanglement::solvers::{closed_form_conditional_full, solve_filter_care, Basis, CovMatrix};
use lqg_entanglement::sweep::{run_sweep, Axis, Quantity, SweepResult, SweepSpec};
use lqg_entanglement::trajectory::{Simulator, TrajectoryConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(t: Duration, limit_s: f64) -> bool {
    t.as_secs_f64() < limit_s
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for g in Axis::new(-0.24, 1.0, 20).values() {
        for eta in Axis::new(0.1, 1.0, 20).values() {
            let p = PhysicalParams::default().with_g_ratio(g).with_eta(eta);
            let m = build_model(&p, &FeedbackConfig::independent(0.1)).unwrap();
            let num = solve_filter_care(&m).unwrap().value;
            let cf = closed_form_conditional_full(&m).unwrap();
            worst = worst.max(frobenius(&(&num - cf.mat())) / frobenius(cf.mat()));
        }
    }
    let t = start.elapsed();
    outcome(worst <= 1e-9 && within(t, 5.0), format!("max rel err {worst:.2e}, {:.2}s", t.as_secs_f64()))
}

fn random_mode_block(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = rng.random_range(0.5..3.0);
    let r: f64 = rng.random_range(-1.5..1.5);
    let phi: f64 = rng.random_range(0.0..PI);
    let (s, c) = phi.sin_cos();
    let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let sq = DMatrix::from_row_slice(2, 2, &[(2.0 * r).exp(), 0.0, 0.0, (-2.0 * r).exp()]);
    &rot * sq * rot.transpose() * n
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut entangled) = (0.0f64, 0);
    for _ in 0..1000 {
        let g = rng.random_range(-0.24..2.0);
        let m = build_model(&PhysicalParams::default().with_g_ratio(g), &FeedbackConfig::independent(0.1)).unwrap();
        let mut s = DMatrix::zeros(4, 4);
        s.view_mut((0, 0), (2, 2)).copy_from(&random_mode_block(&mut rng));
        s.view_mut((2, 2), (2, 2)).copy_from(&random_mode_block(&mut rng));
        let cov = CovMatrix::new(s, Basis::NormalMode).unwrap();
        let a = normal_mode_nu(&cov, &m).unwrap();
        let b = ppt_nu(&to_bare_basis(&cov, &m).unwrap()).unwrap();
        worst = worst.max((a - b).abs() / b);
        worst = worst.max((log_negativity_from_nu(a) - log_negativity_from_nu(b)).abs());
        entangled += (b < 0.5) as usize;
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-9 && within(t, 10.0),
        format!("max deviation {worst:.2e} over 1000 states ({entangled} entangled), {:.2}s", t.as_secs_f64()),
    )
}

fn row_crossing(fixed: PhysicalParams, g: Axis) -> Vec<f64> {
    let spec = SweepSpec::conditional(g, Axis::new(1.0, 1.0, 1), fixed);
    run_sweep(&spec).unwrap().g_crossings(Quantity::NuCond, 0)
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let fixed = PhysicalParams::from_ratios(0.0, 0.05, 0.0, 1e10, 1.0);
    let plus = row_crossing(fixed, Axis::new(0.1, 1.5, 561));
    let minus = row_crossing(fixed, Axis::new(-0.2495, -0.1, 600));
    let t = start.elapsed();
    let ok = plus.len() == 1
        && minus.len() == 1
        && (plus[0] - 0.75).abs() <= 0.1 * 0.75
        && (minus[0] + 3.0 / 16.0).abs() <= 0.1 * 3.0 / 16.0
        && within(t, 30.0);
    outcome(ok, format!("g+ crossing {plus:?} (0.75), g- crossing {minus:?} (-0.1875), {:.2}s", t.as_secs_f64()))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let spec = SweepSpec {
        quantities: vec![Quantity::CondEn, Quantity::NuCond, Quantity::Thresholds],
        ..SweepSpec::conditional(Axis::new(-0.24, 2.0, 100), Axis::new(0.01, 1.0, 100), PhysicalParams::default())
    };
    let r = run_sweep(&spec).unwrap();
    let t = start.elapsed();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut notes = Vec::new();
    for target in [-0.235, -0.225, -0.215, -0.205, 1.0, 1.25, 1.5, 1.75, 2.0] {
        let i = nearest(&r.g_values, target);
        let crossings = r.eta_crossings(Quantity::NuCond, i);
        let g = r.g_values[i];
        let th = threshold_conditional(&PhysicalParams::default().with_g_ratio(g));
        let expect = if g < 0.0 { th.eta_minus } else { th.eta_plus };
        if crossings.len() != 1 {
            notes.push(format!("g={g:.3}: {} crossings", crossings.len()));
            worst = f64::INFINITY;
            continue;
        }
        checked += 1;
        worst = worst.max((crossings[0] - expect).abs() / expect);
    }
    let ok = worst <= 0.15 && checked == 9 && within(t, 120.0);
    let notes = if notes.is_empty() { String::new() } else { format!(" {}", notes.join("; ")) };
    outcome(
        ok,
        format!("max rel deviation of eta crossing {worst:.3} at {checked} columns{notes}, {:.2}s", t.as_secs_f64()),
    )
}

fn nearest(xs: &[f64], x: f64) -> usize {
    (0..xs.len()).min_by(|&a, &b| (xs[a] - x).abs().total_cmp(&(xs[b] - x).abs())).unwrap()
}

fn repulsive_sweep(fb: FeedbackConfig, cost: CostKind) -> SweepResult {
    let spec = SweepSpec {
        g_over_omega0: Axis::new(-0.2495, -0.15, 60),
        eta: Axis::new(0.05, 1.0, 60),
        fixed: PhysicalParams::default().with_charges(3.0, 1.0),
        feedback: fb,
        cost,
        quantities: vec![Quantity::CondEn, Quantity::NuCond, Quantity::UncondEn, Quantity::NuUncond],
    };
    run_sweep(&spec).unwrap()
}

fn count(mask: &[Vec<bool>]) -> usize {
    mask.iter().flatten().filter(|&&b| b).count()
}

fn subset(a: &[Vec<bool>], b: &[Vec<bool>]) -> bool {
    a.iter().flatten().zip(b.iter().flatten()).all(|(&x, &y)| !x || y)
}

struct Sweeps {
    single_epr: SweepResult,
    single_cool: SweepResult,
    ind_epr: SweepResult,
    ind_cool: SweepResult,
}

fn criterion_5(s: &Sweeps) -> Outcome {
    let epr = count(&s.single_epr.entangled_mask(Quantity::UncondEn));
    let cool = count(&s.single_cool.entangled_mask(Quantity::UncondEn));
    outcome(epr > 0 && cool == 0, format!("single feedback: EPR region {epr} cells, cooling region {cool} cells"))
}

fn criterion_6(s: &Sweeps) -> Outcome {
    let cool = s.ind_cool.entangled_mask(Quantity::UncondEn);
    let epr = s.ind_epr.entangled_mask(Quantity::UncondEn);
    let cond = s.ind_epr.entangled_mask(Quantity::CondEn);
    let ok = subset(&cool, &epr) && subset(&epr, &cond) && count(&epr) > count(&cool);
    outcome(
        ok,
        format!(
            "independent feedback: cooling {} <= EPR {} <= conditional {} cells",
            count(&cool),
            count(&epr),
            count(&cond)
        ),
    )
}

fn slope(qs: &[f64], r: &[f64]) -> f64 {
    let xs: Vec<f64> = qs.iter().map(|q| q.ln()).collect();
    let ys: Vec<f64> = r.iter().map(|v| v.abs().ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn criterion_7() -> Outcome {
    let qs = [1e-3, 1e-4, 1e-5];
    let mut p = PhysicalParams::default().with_g_ratio(-0.2).with_eta(0.8);
    p.gamma = 1e-10 * p.omega0;
    let mut ok = true;
    let mut notes = Vec::new();
    let cases = [
        ("D1", CostKind::Cool, 1.5),
        ("D2", CostKind::Epr { theta: 0.0 }, 1.25),
        ("D3", CostKind::Epr { theta: PI }, 1.25),
    ];
    for (label, cost, expect) in cases {
        // entry index -> residuals over q
        let mut resid: Vec<(String, Vec<f64>, f64)> = Vec::new();
        for &q in &qs {
            let fb = FeedbackConfig::independent(q);
            let su = closed_loop(&p, &fb, cost).unwrap().sigma_uncond.into_inner();
            for (k, e) in uncond_asymptotic(&p, cost, &fb, q).unwrap().into_iter().enumerate() {
                let i = e.index();
                let name = format!("{:?}{:?}", e.quadrature, e.mode);
                if resid.len() <= k {
                    resid.push((name, Vec::new(), su[(i, i)]));
                }
                resid[k].1.push(su[(i, i)] - e.value);
            }
        }
        for (name, r, scale) in resid {
            let max_rel = r.iter().map(|v| v.abs()).fold(0.0, f64::max) / scale;
            // Entries with no higher-order correction agree to round-off; no rate to measure.
            let exact = (label == "D2" && name.starts_with(&format!("{:?}", Quadrature::P)))
                || (label == "D3" && name.starts_with(&format!("{:?}", Quadrature::P)));
            if exact {
                let good = max_rel <= 1e-10;
                ok &= good;
                notes.push(format!("{label} {name}: exact (rel {max_rel:.1e})"));
            } else {
                let s = slope(&qs, &r);
                ok &= (s - expect).abs() <= 0.15;
                notes.push(format!("{label} {name}: slope {s:.3} (expect {expect})"));
            }
        }
    }
    outcome(ok, notes.join("; "))
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let p = PhysicalParams::default().with_g_ratio(-0.2).with_eta(0.8);
    let fb = FeedbackConfig::independent(0.1);
    let model = build_model(&p, &fb).unwrap();
    let cl = closed_loop(&p, &fb, CostKind::Epr { theta: 0.0 }).unwrap();
    let dt = 0.0025;
    let cfg = TrajectoryConfig {
        dt,
        steps: 0,
        burn_in: TrajectoryConfig::min_burn_in(dt, &cl.a_closed),
        n_traj: 10_000,
        seed: 8,
        decimation: 1,
    };
    cfg.validate(&cl.a_closed, model.omega_minus).unwrap();
    let stats = Simulator::from_closed_loop(&cl, &model).ensemble(&cfg).unwrap();
    let xi = cl.xi_excess.mat();
    let mut worst = 0.0f64;
    for i in 0..4 {
        for j in i..4 {
            worst = worst.max((stats.covariance[(i, j)] - xi[(i, j)]).abs() / stats.std_err[(i, j)]);
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 3.0 && within(t, 300.0),
        format!("max |cov - Xi| = {worst:.2} bootstrap SE, burn-in {} steps, {:.1}s", cfg.burn_in, t.as_secs_f64()),
    )
}

fn criterion_9(s: &Sweeps) -> Outcome {
    let mut min_nu = f64::INFINITY;
    let mut dominance = true;
    for r in [&s.single_epr, &s.single_cool, &s.ind_epr, &s.ind_cool] {
        min_nu = min_nu.min(r.metadata.min_symplectic_eigenvalue);
        let c = r.quantity(Quantity::CondEn).unwrap();
        let u = r.quantity(Quantity::UncondEn).unwrap();
        for (cc, uc) in c.iter().flatten().zip(u.iter().flatten()) {
            if let (Some(c), Some(u)) = (cc, uc) {
                dominance &= *u <= *c + 1e-12;
            }
        }
    }
    let mut min_xi = f64::INFINITY;
    for g in Axis::new(-0.24, 1.5, 12).values() {
        for eta in [0.1, 0.5, 1.0] {
            for fb in [FeedbackConfig::single(0.1), FeedbackConfig::independent(0.1)] {
                for cost in [CostKind::Cool, CostKind::Epr { theta: 0.0 }, CostKind::Epr { theta: PI }] {
                    let p = PhysicalParams::default().with_g_ratio(g).with_eta(eta).with_charges(3.0, 1.0);
                    let cl = closed_loop(&p, &fb, cost).unwrap();
                    let xi = cl.xi_excess.mat();
                    min_xi = min_xi.min(min_sym_eigenvalue(xi) / xi.trace());
                    min_nu = min_nu
                        .min(cl.sigma_cond.min_symplectic_eigenvalue())
                        .min(cl.sigma_uncond.min_symplectic_eigenvalue());
                }
            }
        }
    }
    let ok = min_nu >= 0.5 - 1e-9 && min_xi >= -1e-10 && dominance;
    outcome(
        ok,
        format!("min symplectic eigenvalue {min_nu:.6}, min eig(Xi)/tr {min_xi:.1e}, E_N(uncond) <= E_N(cond): {dominance}"),
    )
}

fn criterion_10() -> Outcome {
    let p = PhysicalParams::default().with_g_ratio(-0.2);
    let fb = FeedbackConfig::independent(0.1);
    let cost = CostKind::Epr { theta: 0.0 };
    let cl = closed_loop(&p, &fb, cost).unwrap();
    let cfg = TrajectoryConfig {
        burn_in: TrajectoryConfig::min_burn_in(0.0025, &cl.a_closed),
        steps: 2000,
        seed: 42,
        decimation: 10,
        ..TrajectoryConfig::default()
    };
    let traj = || {
        let rec = lqg_entanglement::trajectory::simulate(&p, &fb, cost, &cfg).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        buf
    };
    let sweep = || {
        let spec = SweepSpec::conditional(Axis::new(-0.24, 1.0, 15), Axis::new(0.1, 1.0, 15), p);
        let mut buf = Vec::new();
        run_sweep(&spec).unwrap().write_csv(&mut buf).unwrap();
        buf
    };
    let (a, b) = (traj(), traj());
    let (c, d) = (sweep(), sweep());
    outcome(a == b && c == d && !a.is_empty(), format!("trajectory CSV {} bytes, sweep CSV {} bytes", a.len(), c.len()))
}

fn main() {
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        println!("criterion {n:>2}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(4, criterion_4());
    let sweeps = Sweeps {
        single_epr: repulsive_sweep(FeedbackConfig::single(0.1), CostKind::Epr { theta: 0.0 }),
        single_cool: repulsive_sweep(FeedbackConfig::single(0.1), CostKind::Cool),
        ind_epr: repulsive_sweep(FeedbackConfig::independent(0.1), CostKind::Epr { theta: 0.0 }),
        ind_cool: repulsive_sweep(FeedbackConfig::independent(0.1), CostKind::Cool),
    };
    report(5, criterion_5(&sweeps));
    report(6, criterion_6(&sweeps));
    report(7, criterion_7());
    report(8, criterion_8());
    report(9, criterion_9(&sweeps));
    report(10, criterion_10());
    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
