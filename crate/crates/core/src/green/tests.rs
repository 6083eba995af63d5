use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dynamics::{parse_model_spec, Mechanical};
use crate::pendulum_oracle::PendulumCurve;

fn pendulum() -> Mechanical {
    Mechanical::pendulum()
}

fn separatrix_point(q: f64) -> PhasePoint {
    PhasePoint::new(vec![q], vec![2.0 * (PI * q).sin()])
}

#[test]
fn free_height_is_inverse_time() {
    let free = Mechanical::free(1);
    let x = PhasePoint::new(vec![0.1], vec![0.2]);
    for t in [0.5, 1.0, 2.0, 4.0, 8.0] {
        let s = height_of_pushed_vertical(&free, &x, t, 0.0).unwrap();
        assert!((s.scalar() - 1.0 / t).abs() < 1e-8);
    }
    let free2 = Mechanical::free(2);
    let x = PhasePoint::new(vec![0.1, 0.7], vec![0.2, -1.0]);
    let s = height_of_pushed_vertical(&free2, &x, 4.0, 0.0).unwrap();
    assert!((&s.matrix - DMatrix::identity(2, 2) * 0.25).amax() < 1e-8);
    assert!(matches!(height_of_pushed_vertical(&free, &x, 0.0, 0.0), Err(Error::Input(_))));
}

#[test]
fn small_time_asymptotics() {
    let origin = PhasePoint::new(vec![0.0], vec![0.0]);
    let s = height_of_pushed_vertical(&pendulum(), &origin, 0.01, 0.0).unwrap();
    assert!((s.scalar() - 100.0).abs() < 1.0);

    let m = parse_model_spec("mechanical:cos:0.5:1,0;sin:0.3:1,1").unwrap();
    let x = PhasePoint::new(vec![0.3, 0.6], vec![0.4, -0.2]);
    let gaps: Vec<f64> = [0.04, 0.02, 0.01, 0.005]
        .iter()
        .map(|&t| {
            let s = height_of_pushed_vertical(&m, &x, t, 0.0).unwrap();
            (s.matrix - DMatrix::identity(2, 2) / t).norm()
        })
        .collect();
    // The remainder stays bounded as t → 0 (it is in fact O(t)).
    assert!(gaps.iter().all(|&g| g < 1.0), "{gaps:?}");
    assert!(gaps[3] < gaps[0]);
}

#[test]
fn hyperbolic_fixed_point_bundles() {
    let origin = PhasePoint::new(vec![0.0], vec![0.0]);
    let opts = GreenOptions::default();
    let plus = green_plus(&pendulum(), &origin, 0.0, &opts).unwrap();
    assert!((plus.height.scalar() - 2.0 * PI).abs() < 1e-4);
    assert!(plus.converged && plus.cauchy_gap <= opts.tol);
    let minus = green_minus(&pendulum(), &origin, 0.0, &opts).unwrap();
    assert!((minus.height.scalar() + 2.0 * PI).abs() < 1e-4);
    assert!(minus.height.scalar() <= plus.height.scalar() + 1e-6);
}

#[test]
fn separatrix_bundle_matches_oracle_curvature() {
    let x = separatrix_point(0.25);
    let plus = green_plus(&pendulum(), &x, 0.0, &GreenOptions::default()).unwrap();
    let expected = PendulumCurve::separatrix().d2u(0.25).unwrap();
    assert!((plus.height.scalar() - expected).abs() < 1e-3, "{plus:?}");
    assert!((expected - 2.0 * PI * (PI / 4.0).cos()).abs() < 1e-12);
}

#[test]
fn free_bundles_decay_like_inverse_time() {
    let free = Mechanical::free(1);
    let x = PhasePoint::new(vec![0.3], vec![0.5]);
    let opts = GreenOptions {
        t_max: 64.0,
        ..GreenOptions::default()
    };
    let plus = green_plus(&free, &x, 0.0, &opts).unwrap();
    assert!(!plus.converged);
    assert!((plus.height.scalar() - 1.0 / 64.0).abs() < 1e-10);
    assert!((plus.cauchy_gap - 1.0 / 64.0).abs() < 1e-10);
    let minus = green_minus(&free, &x, 0.0, &opts).unwrap();
    assert!((minus.height.scalar() + 1.0 / 64.0).abs() < 1e-10);
}

#[test]
fn schedule_start_does_not_matter() {
    let opts = GreenOptions::default();
    let half = GreenOptions {
        t_start: 0.5,
        ..GreenOptions::default()
    };
    let points = [PhasePoint::new(vec![0.0], vec![0.0]), separatrix_point(0.25), separatrix_point(0.4)];
    for (k, x) in points.iter().enumerate() {
        let a = green_plus(&pendulum(), x, 0.0, &opts).unwrap();
        let b = green_plus(&pendulum(), x, 0.0, &half).unwrap();
        if k == 0 {
            assert!(a.converged && b.converged, "{a:?} {b:?}");
        }
        assert!((a.height.scalar() - b.height.scalar()).abs() <= 2.0 * opts.tol, "{a:?} {b:?}");
    }
    let x = separatrix_point(0.4);
    let a = green_plus(&pendulum(), &x, 0.0, &opts).unwrap();
    assert!((a.height.scalar() - 2.0 * PI * (0.4 * PI).cos()).abs() < 1e-4);
}

#[test]
fn frame_and_riccati_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = parse_model_spec("mechanical:cos:0.3:1,0;cos:0.2:0,1").unwrap();
    for _ in 0..5 {
        let x = PhasePoint::new(vec![rng.gen(), rng.gen()], vec![rng.gen_range(1.5..2.5), rng.gen_range(1.5..2.5)]);
        for lambda in [0.0, 0.2] {
            let frame = height_of_pushed_vertical(&m, &x, 1.0, lambda).unwrap();
            let ric = height_via_riccati(&m, &x, 1.0, lambda, 1e-4).unwrap();
            assert!((&frame.matrix - &ric.matrix).amax() < 1e-6);
            assert!(frame.asymmetry < 1e-8 && ric.asymmetry < 1e-8);
        }
    }
}

#[test]
fn riccati_equation_holds_along_orbit() {
    let p = pendulum();
    let x = PhasePoint::new(vec![0.2], vec![2.0]);
    let lambda = 0.1;
    let h = 1e-4;
    let t = 1.0;
    // S(t) at the points φ_s(x) equals the height of G_{t+s}(φ_s x).
    let s_at = |s: f64| {
        let y = integrate_flow(&p, &x, s, &FlowParams::with_lambda(lambda)).unwrap();
        (height_of_pushed_vertical(&p, &y, t + s, lambda).unwrap().scalar(), y)
    };
    let (sp, _) = s_at(h);
    let (sm, _) = s_at(-h);
    let (s0, y0) = s_at(0.0);
    let deriv = (sp - sm) / (2.0 * h);
    let hs = p.hessian(&y0.q, &y0.p);
    let rhs = -hs.qq[(0, 0)] - 2.0 * hs.qp[(0, 0)] * s0 - hs.pp[(0, 0)] * s0 * s0 - lambda * s0;
    assert!((deriv - rhs).abs() < 1e-5 * (1.0 + rhs.abs()), "{deriv} vs {rhs}");
}

#[test]
fn monotonicity_free_and_pendulum() {
    let free = Mechanical::free(1);
    let x = PhasePoint::new(vec![0.1], vec![0.3]);
    let (_, report) = monotonicity_check(&free, &x, 0.0, &[0.5, 1.0, 2.0, 4.0], 1e-7).unwrap();
    assert!(report.passed, "{report:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5 {
        let q: f64 = rng.gen();
        let p = (2.0 * (1.5 - (2.0 * PI * q).cos())).sqrt();
        let x = PhasePoint::new(vec![q], vec![p]);
        let (_, report) = monotonicity_check(&pendulum(), &x, 0.0, &[0.5, 1.0, 2.0, 4.0], 1e-7).unwrap();
        assert!(report.passed, "{report:?}");
    }
}

#[test]
fn swapped_heights_fail() {
    let sample = |lag: f64, h: f64| HeightSample {
        lag,
        height: vec![vec![h]],
    };
    let good = HeightFixture {
        past: vec![sample(1.0, 1.0), sample(2.0, 0.5)],
        future: vec![sample(1.0, -1.0), sample(2.0, -0.5)],
    };
    assert!(check_height_sequence(&good, 1e-7).unwrap().passed);
    let swapped = HeightFixture {
        past: good.future.clone(),
        future: good.past.clone(),
    };
    let report = check_height_sequence(&swapped, 1e-7).unwrap();
    assert!(!report.passed && !report.violations.is_empty());
}

#[test]
fn conjugate_points() {
    let free = Mechanical::free(2);
    let x = PhasePoint::new(vec![0.1, 0.2], vec![0.5, 0.5]);
    assert!(detect_conjugate_points(&free, &x, 0.0, 10.0).unwrap().times.is_empty());

    // Small oscillation around the elliptic point: det X vanishes every half period.
    let x = PhasePoint::new(vec![0.5], vec![0.05]);
    let report = detect_conjugate_points(&pendulum(), &x, 0.0, 3.2).unwrap();
    assert!(report.times.len() >= 5, "{report:?}");
    assert!((report.times[0] - 0.5).abs() < 0.02);
    assert!(report.times.windows(2).all(|w| w[0] < w[1]));

    let err = height_of_pushed_vertical(&pendulum(), &x, 0.8, 0.0).unwrap_err();
    assert!(matches!(err, Error::ConjugatePoint { time } if time > 0.0 && time <= 0.8));
}

#[test]
fn separatrix_is_green_regular() {
    let opts = GreenOptions {
        t_max: 16.0,
        ..GreenOptions::default()
    };
    let fractions: Vec<f64> = [128, 512]
        .iter()
        .map(|&n| {
            let u = GridFunction::new(n, 1, PendulumCurve::separatrix().sample_u(n)).unwrap();
            let samples: Vec<usize> = (1..16).map(|j| j * n / 16).collect();
            let up = upper_green_regularity_test(&pendulum(), &u, &[4.0 / PI], 0.0, 0.05, Some(&samples), &opts)
                .unwrap();
            let low = lower_green_regularity_test(&pendulum(), &u, &[4.0 / PI], 0.0, 0.05, Some(&samples), &opts)
                .unwrap();
            up.exceed_fraction.max(low.exceed_fraction)
        })
        .collect();
    assert!(fractions[1] <= fractions[0]);
    assert!(fractions[1] < 0.2, "{fractions:?}");

    let flat = GridFunction::zeros(32, 1).unwrap();
    let r = upper_green_regularity_test(&Mechanical::free(1), &flat, &[0.3], 0.0, 2e-3, None, &GreenOptions {
        t_max: 1024.0,
        ..GreenOptions::default()
    })
    .unwrap();
    assert_eq!(r.exceed_fraction, 0.0);
}
