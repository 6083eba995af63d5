//! Acceptance gate: every criterion at its tolerance and runtime limit,
//! one PASS/FAIL line each.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weakkam::cli::{run_experiment, ExperimentSpec, Metric};
use weakkam::dynamics::{Hamiltonian, Mechanical, PhasePoint, Reversed};
use weakkam::green::{detect_conjugate_points, green_plus, green_minus, height_of_pushed_vertical, monotonicity_check, GreenOptions};
use weakkam::lo_solver::{
    estimate_alpha, hessian_green_inequality_check, one_step_action, solve_weak_kam, ActionKernel, AlphaMode,
    GridFunction, LoOperator, SolverConfig,
};
use weakkam::pendulum_oracle::{c_of_e, e_of_i, oracle_d21_gap, oracle_sup_d2_gap, PendulumCurve, I_PLUS};
use weakkam::semiconcave::{
    d21_distance, fiberwise_sup_distance, hausdorff_distance, leb_measure_exceed, sym_min_eigenvalue, GraphCloud,
    Section,
};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn pendulum() -> Mechanical {
    Mechanical::pendulum()
}

fn c1_oracle() -> Outcome {
    let c1 = c_of_e(1.0).map_err(err)?;
    check((c1 - 4.0 / PI).abs() <= 1e-8, format!("c(1) = {c1}"))?;
    let model = pendulum();
    let mut worst: f64 = 0.0;
    for curve_i in [1.5, 2.0, I_PLUS + 0.01] {
        let curve = PendulumCurve::from_cohomology(curve_i).map_err(err)?;
        let e = e_of_i(curve_i).map_err(err)?;
        for k in 0..1000 {
            let q = (k as f64 + 0.5) / 1000.0;
            let r = model.energy(&[q], &[curve_i + curve.du(q)]) - e;
            worst = worst.max(r.abs());
        }
    }
    let sep = PendulumCurve::separatrix();
    for k in 0..1000 {
        let q = (k as f64 + 0.5) / 1000.0;
        worst = worst.max((model.energy(&[q], &[I_PLUS + sep.du(q)]) - 1.0).abs());
    }
    check(worst <= 1e-9, format!("HJ residual {worst:e}"))?;
    Ok(format!("|c(1) - 4/pi| = {:.1e}, HJ residual {worst:.1e}", (c1 - 4.0 / PI).abs()))
}

fn c2_green_closed_forms() -> Outcome {
    let free = Mechanical::free(1);
    let x = PhasePoint::new(vec![0.1], vec![0.2]);
    let mut worst_free: f64 = 0.0;
    for t in [0.5, 1.0, 2.0, 4.0, 8.0] {
        let h = height_of_pushed_vertical(&free, &x, t, 0.0).map_err(err)?.scalar();
        worst_free = worst_free.max((h - 1.0 / t).abs());
    }
    check(worst_free <= 1e-8, format!("free height error {worst_free:e}"))?;
    let opts = GreenOptions::default();
    let origin = PhasePoint::new(vec![0.0], vec![0.0]);
    let top = green_plus(&pendulum(), &origin, 0.0, &opts).map_err(err)?.height.scalar();
    check((top - 2.0 * PI).abs() <= 1e-4, format!("G+ at the origin {top}"))?;
    let q = 0.25;
    let on_sep = PhasePoint::new(vec![q], vec![2.0 * (PI * q).sin()]);
    let sep = green_plus(&pendulum(), &on_sep, 0.0, &opts).map_err(err)?.height.scalar();
    let expected = 2.0 * PI * (PI / 4.0).cos();
    check((sep - expected).abs() <= 1e-3, format!("separatrix G+ {sep} vs {expected}"))?;
    Ok(format!(
        "free {worst_free:.1e}, origin {:.1e}, separatrix {:.1e}",
        (top - 2.0 * PI).abs(),
        (sep - expected).abs()
    ))
}

fn c3_green_monotonicity() -> Outcome {
    let model = pendulum();
    let reversed = Reversed(pendulum());
    // Separatrix points converge well before t = 16; rotational limits
    // approach at rate 1/t and never reach the default Cauchy tolerance.
    let opts = GreenOptions {
        t_max: 16.0,
        ..GreenOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut windows, mut rejected, mut compared) = (0, 0, 0);
    let mut worst_order = f64::INFINITY;
    while windows < 50 {
        let q: f64 = rng.gen();
        // Alternate between separatrix points and rotational orbits.
        let e = if windows % 2 == 0 { 1.0 } else { rng.gen_range(1.05..3.0) };
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let p = sign * (2.0 * (e - (2.0 * PI * q).cos())).max(0.0).sqrt();
        let x = PhasePoint::new(vec![q], vec![p]);
        let t: f64 = rng.gen_range(0.5..4.0);
        let forward = detect_conjugate_points(&model, &x, 0.0, t).map_err(err)?;
        let backward = detect_conjugate_points(&reversed, &PhasePoint::new(vec![q], vec![-p]), 0.0, t).map_err(err)?;
        if !forward.times.is_empty() || !backward.times.is_empty() {
            rejected += 1;
            continue;
        }
        windows += 1;
        let lags = [t / 8.0, t / 4.0, t / 2.0, t];
        let (_, report) = monotonicity_check(&model, &x, 0.0, &lags, 1e-7).map_err(err)?;
        check(report.passed, format!("window at ({q}, {p}), t = {t}: {:?}", report.violations))?;

        let plus = green_plus(&model, &x, 0.0, &opts).map_err(err)?;
        let minus = green_minus(&model, &x, 0.0, &opts).map_err(err)?;
        if plus.converged && minus.converged {
            compared += 1;
            let diff = &plus.height.matrix - &minus.height.matrix;
            let margin = sym_min_eigenvalue(diff.as_slice(), 1);
            worst_order = worst_order.min(margin);
            check(margin >= -1e-6, format!("H(G-) above H(G+) by {} at ({q}, {p})", -margin))?;
        }
    }
    check(compared > 0, "no point with both bundles converged")?;
    Ok(format!(
        "50 windows ({rejected} rejected), G-/G+ ordered at {compared} points, worst margin {worst_order:.2e}"
    ))
}

fn c4_solver_vs_oracle() -> Outcome {
    let i = 1.5;
    let n = 400;
    let cfg = SolverConfig {
        n,
        tau: 0.02,
        c: vec![i],
        alpha: AlphaMode::Auto,
        fix_tol: weakkam::cli::WEAK_KAM_FIX_TOL,
        ..SolverConfig::default()
    };
    let model = pendulum();
    let exact_alpha = e_of_i(i).map_err(err)?;
    let alpha = estimate_alpha(&model, &cfg).map_err(err)?;
    check((alpha - exact_alpha).abs() <= 1e-3, format!("alpha {alpha} vs {exact_alpha}"))?;
    let fp = solve_weak_kam(&model, &cfg, &GridFunction::zeros(n, 1).map_err(err)?).map_err(err)?;
    let curve = PendulumCurve::from_cohomology(i).map_err(err)?;
    let oracle = GridFunction::new(n, 1, curve.sample_u(n)).map_err(err)?;
    let sup = fp.u.sup_distance_mod_constants(&oracle).map_err(err)?;
    check(sup <= 2e-2, format!("sup error {sup}"))?;
    Ok(format!("sup error {sup:.2e}, alpha error {:.1e}", (alpha - exact_alpha).abs()))
}

fn c5_discounted_trend() -> Outcome {
    let spec = ExperimentSpec::preset("discounted-pendulum").map_err(err)?;
    let m = run_experiment(&spec).map_err(err)?;
    check(m.failed_rows() == 0, format!("failed rows: {:?}", m.rows))?;
    let h = m.column(Metric::Hausdorff);
    check(strictly_decreasing(&h), format!("Hausdorff not strictly decreasing: {h:?}"))?;
    let mesh = 1.0 / spec.n as f64;
    let last = *h.last().ok_or("empty sweep")?;
    check(last <= 3.0 * mesh, format!("final distance {last} above 3 x mesh"))?;
    Ok(format!("Hausdorff {h:.4?}, mesh {mesh}"))
}

fn cohomology_sweep() -> [f64; 4] {
    [0.1, 0.03, 0.01, 0.003].map(|d| I_PLUS + d)
}

fn c6_cohomology_dichotomy() -> Outcome {
    let mut d21 = Vec::new();
    let mut gaps = Vec::new();
    for i in cohomology_sweep() {
        d21.push(oracle_d21_gap(i).map_err(err)?);
        gaps.push(oracle_sup_d2_gap(i).map_err(err)?.value);
    }
    check(strictly_decreasing(&d21), format!("d21 not strictly decreasing: {d21:?}"))?;
    let ratio = d21[3] / d21[0];
    check(ratio <= 0.2, format!("last/first ratio {ratio}"))?;
    check(gaps.iter().all(|&g| g >= 0.25 - 1e-6), format!("sup gaps {gaps:?}"))?;
    Ok(format!("d21 {d21:.4?}, ratio {ratio:.3}, min sup gap {:.3}", gaps.iter().cloned().fold(f64::INFINITY, f64::min)))
}

fn c7_green_inequality() -> Outcome {
    let n = 400;
    let cfg = SolverConfig {
        n,
        tau: 0.01,
        alpha: AlphaMode::Fixed(0.0),
        ..SolverConfig::default()
    };
    let u0 = GridFunction::from_fn(n, 1, |q| 0.1 * (2.0 * PI * q[0]).cos()).map_err(err)?;
    let r = hessian_green_inequality_check(&pendulum(), &u0, 2.0, &cfg, None).map_err(err)?;
    check(r.samples > n / 2, format!("only {} samples", r.samples))?;
    check(r.pass_fraction >= 0.99, format!("pass fraction {} ({} violations)", r.pass_fraction, r.violations.len()))?;
    Ok(format!(
        "pass fraction {:.4} over {} samples, {} excluded, worst margin {:.2e}, tol {:.2e}",
        r.pass_fraction, r.samples, r.excluded, r.worst_margin, r.tol
    ))
}

fn random_grid(rng: &mut ChaCha8Rng, n: usize) -> GridFunction {
    let coeffs: Vec<(f64, f64)> = (0..5).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0))).collect();
    GridFunction::from_fn(n, 1, |q| {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, (a, phase))| a * (2.0 * PI * ((k + 1) as f64 * q[0] + phase)).cos() / (k + 1) as f64)
            .sum()
    })
    .unwrap()
}

/// Every admissible cell, each refined by ternary search on the segment action.
fn brute_force_step(model: &Mechanical, u: &GridFunction, cfg: &SolverConfig, alpha: f64) -> Vec<f64> {
    let n = u.n();
    let h = 1.0 / n as f64;
    let c = cfg.form(1).unwrap();
    let kernel = ActionKernel::for_model(model, cfg.tau, cfg.lambda, &c, cfg.quad_order, cfg.vel_bound_override).unwrap();
    let reach = ((kernel.reach() / h) * (1.0 + 1e-12)).floor().min((n / 2) as f64) as i64;
    let decay = (-cfg.lambda * cfg.tau).exp();
    (0..n)
        .map(|k| {
            let q = k as f64 * h;
            let objective = |s: f64| {
                let q0 = q - s * h;
                decay * u.eval(&[q0]) + one_step_action(model, &kernel, &[q0], &[q], cfg.lambda, &c, alpha).unwrap()
            };
            let mut best = f64::INFINITY;
            for j in -reach..reach {
                let (mut lo, mut hi) = (j as f64, j as f64 + 1.0);
                best = best.min(objective(lo)).min(objective(hi));
                for _ in 0..200 {
                    let m1 = lo + (hi - lo) / 3.0;
                    let m2 = hi - (hi - lo) / 3.0;
                    if objective(m1) < objective(m2) {
                        hi = m2;
                    } else {
                        lo = m1;
                    }
                }
                best = best.min(objective(0.5 * (lo + hi)));
            }
            best
        })
        .collect()
}

fn c8_operator_properties() -> Outcome {
    let model = pendulum();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst_contraction, mut worst_shift) = (f64::NEG_INFINITY, 0.0f64);
    for lambda in [0.0, 0.1] {
        let cfg = SolverConfig {
            n: 64,
            tau: 0.05,
            lambda,
            c: vec![rng.gen_range(-1.0..1.0)],
            alpha: AlphaMode::Fixed(0.0),
            ..SolverConfig::default()
        };
        let op = LoOperator::new(&model, &cfg, 0.0).map_err(err)?;
        let decay = (-lambda * cfg.tau).exp();
        for _ in 0..200 {
            let u = random_grid(&mut rng, 64);
            let w = random_grid(&mut rng, 64);
            let (tu, tw) = (op.step(&u).map_err(err)?, op.step(&w).map_err(err)?);
            let excess = tu.sup_distance(&tw).map_err(err)? - decay * u.sup_distance(&w).map_err(err)?;
            worst_contraction = worst_contraction.max(excess);
            check(excess <= 1e-12, format!("contraction violated by {excess:e} at lambda {lambda}"))?;
            let k: f64 = rng.gen_range(-2.0..2.0);
            let shifted = op.step(&u.add_constant(k)).map_err(err)?;
            let gap = shifted
                .values()
                .iter()
                .zip(tu.values())
                .fold(0.0f64, |m, (a, b)| m.max((a - b - decay * k).abs()));
            worst_shift = worst_shift.max(gap);
            check(gap <= 1e-12, format!("constant commutation off by {gap:e}"))?;
        }
    }
    let mut worst_brute = 0.0f64;
    for (lambda, c) in [(0.0, 0.0), (0.1, 0.6)] {
        let n = 32;
        let cfg = SolverConfig {
            n,
            tau: 0.05,
            lambda,
            c: vec![c],
            alpha: AlphaMode::Fixed(0.3),
            vel_bound_override: Some(10.0 / (n as f64 * 0.05)),
            ..SolverConfig::default()
        };
        for _ in 0..3 {
            let u = random_grid(&mut rng, n);
            let fast = LoOperator::new(&model, &cfg, 0.3).map_err(err)?.step(&u).map_err(err)?;
            let slow = brute_force_step(&model, &u, &cfg, 0.3);
            for (a, b) in fast.values().iter().zip(&slow) {
                worst_brute = worst_brute.max((a - b).abs());
            }
        }
    }
    check(worst_brute <= 1e-10, format!("brute-force mismatch {worst_brute:e}"))?;
    Ok(format!(
        "contraction excess {worst_contraction:.1e}, shift error {worst_shift:.1e}, brute force {worst_brute:.1e}"
    ))
}

fn c9_measure_proxy() -> Outcome {
    let n = 1000;
    let sample = |i: f64| -> Result<GridFunction, String> {
        let curve = if i <= I_PLUS {
            PendulumCurve::separatrix()
        } else {
            PendulumCurve::from_cohomology(i).map_err(err)?
        };
        GridFunction::new(n, 1, curve.sample_u(n)).map_err(err)
    };
    let reference = sample(I_PLUS)?;
    let mut measures = Vec::new();
    for i in cohomology_sweep() {
        measures.push(leb_measure_exceed(&sample(i)?, &reference, 0.05).map_err(err)?.measure);
    }
    check(strictly_decreasing(&measures), format!("measures {measures:?}"))?;
    let spec = ExperimentSpec::preset("cohom-pendulum").map_err(err)?;
    let preset = run_experiment(&spec).map_err(err)?.column(Metric::MeasureExceed);
    check(strictly_decreasing(&preset), format!("preset measures {preset:?}"))?;
    Ok(format!("grid {measures:.3?}, preset {preset:.3?}"))
}

fn random_cloud(rng: &mut ChaCha8Rng, len: usize) -> GraphCloud {
    let mut cloud = GraphCloud::new(2, "random");
    for _ in 0..len {
        let theta = [rng.gen::<f64>(), rng.gen::<f64>()];
        let p = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        cloud.push(&theta, &p);
    }
    cloud
}

fn c10_metric_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst_triangle = f64::NEG_INFINITY;
    for _ in 0..30 {
        let (a, b, c) = (random_cloud(&mut rng, 40), random_cloud(&mut rng, 55), random_cloud(&mut rng, 30));
        let ab = hausdorff_distance(&a, &b).map_err(err)?;
        let ba = hausdorff_distance(&b, &a).map_err(err)?;
        check(ab == ba, format!("Hausdorff asymmetric: {ab} vs {ba}"))?;
        check(hausdorff_distance(&a, &a).map_err(err)? == 0.0, "Hausdorff d(a, a) != 0")?;
        let ac = hausdorff_distance(&a, &c).map_err(err)?;
        let cb = hausdorff_distance(&c, &b).map_err(err)?;
        worst_triangle = worst_triangle.max(ab - ac - cb);
        check(ab <= ac + cb + 1e-12, format!("Hausdorff triangle: {ab} > {ac} + {cb}"))?;
    }
    for _ in 0..30 {
        let (u, v, w) = (random_grid(&mut rng, 128), random_grid(&mut rng, 128), random_grid(&mut rng, 128));
        let uv = d21_distance(&u, &v).map_err(err)?.value;
        let vu = d21_distance(&v, &u).map_err(err)?.value;
        check(uv == vu, format!("d21 asymmetric: {uv} vs {vu}"))?;
        check(d21_distance(&u, &u).map_err(err)?.value == 0.0, "d21(u, u) != 0")?;
        let uw = d21_distance(&u, &w).map_err(err)?.value;
        let wv = d21_distance(&w, &v).map_err(err)?.value;
        worst_triangle = worst_triangle.max(uv - uw - wv);
        check(uv <= uw + wv + 1e-12, format!("d21 triangle: {uv} > {uw} + {wv}"))?;
    }

    // Clouds converging in Hausdorff distance to a continuous graph converge fiberwise.
    let n = 512;
    let graphs: [(&str, fn(f64) -> f64); 3] = [
        ("sine", |t| (2.0 * PI * t).sin()),
        ("pendulum", |t| 1.5 + PendulumCurve::from_cohomology(1.5).unwrap().du(t)),
        ("tent", |t| 0.5 - (t - 0.5).abs()),
    ];
    let mut summary = Vec::new();
    for (name, f) in graphs {
        let eta = Section::from_fn(n, 1, |t| vec![f(t[0])]).map_err(err)?;
        let limit = eta.graph("limit").map_err(err)?;
        let (mut hd, mut fw) = (Vec::new(), Vec::new());
        for (k, delta) in [0.2, 0.1, 0.05, 0.025, 0.0125].into_iter().enumerate() {
            let mut cloud = GraphCloud::new(1, format!("{name}_{k}"));
            for j in 0..n {
                let t = j as f64 / n as f64;
                let wiggle = delta * (2.0 * PI * (7.0 * t + k as f64)).sin();
                cloud.push(&[t], &[f(t) + wiggle]);
            }
            hd.push(hausdorff_distance(&cloud, &limit).map_err(err)?);
            fw.push(fiberwise_sup_distance(&cloud, &eta).map_err(err)?);
        }
        check(strictly_decreasing(&hd), format!("{name}: Hausdorff {hd:?}"))?;
        check(strictly_decreasing(&fw), format!("{name}: fiberwise {fw:?}"))?;
        check(fw.iter().zip(&hd).all(|(f, h)| f >= h), format!("{name}: fiberwise below Hausdorff"))?;
        check(*fw.last().unwrap() <= 0.0125 + 1e-12, format!("{name}: final fiberwise {}", fw.last().unwrap()))?;
        summary.push(format!("{name} {:.4}", fw.last().unwrap()));
    }
    Ok(format!("worst triangle excess {worst_triangle:.1e}, final fiberwise: {}", summary.join(", ")))
}

fn main() {
    let criteria: [(&str, u64, fn() -> Outcome); 10] = [
        ("pendulum oracle self-consistency", 1, c1_oracle),
        ("Green closed forms", 10, c2_green_closed_forms),
        ("Green monotonicity suite", 60, c3_green_monotonicity),
        ("solver vs oracle", 120, c4_solver_vs_oracle),
        ("discounted Hausdorff trend", 300, c5_discounted_trend),
        ("cohomology dichotomy", 30, c6_cohomology_dichotomy),
        ("Hessian-Green inequality", 300, c7_green_inequality),
        ("operator properties", 120, c8_operator_properties),
        ("measure-exceed proxy", 30, c9_measure_proxy),
        ("metric suite", 30, c10_metric_suite),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (k, (name, limit, run)) in criteria.iter().enumerate() {
        let label = format!("criterion {}", k + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.ends_with(&format!(" {f}")) || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= Duration::from_secs(*limit) {
                Ok(detail)
            } else {
                Err(format!("{detail}; runtime over the {limit} s limit"))
            }
        });
        match outcome {
            Ok(detail) => println!("{label} PASS [{:.1} s] {name}: {detail}", elapsed.as_secs_f64()),
            Err(reason) => {
                failures += 1;
                println!("{label} FAIL [{:.1} s] {name}: {reason}", elapsed.as_secs_f64());
            }
        }
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
