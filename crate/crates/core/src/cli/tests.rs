use super::*;

fn solve_args(argv: &[&str]) -> SolveArgs {
    let mut full = vec!["weakkam", "solve"];
    full.extend_from_slice(argv);
    match Cli::try_parse_from(full).unwrap().command {
        Command::Solve(a) => a,
        other => panic!("{other:?}"),
    }
}

fn config_field(err: Error) -> String {
    match err {
        Error::Config { field, .. } => field,
        other => panic!("expected config error, got {other:?}"),
    }
}

#[test]
fn config_errors_name_the_field() {
    let bad_type = parse_run_config(r#"{"solver": {"tau": "fast"}}"#).unwrap_err();
    assert_eq!(config_field(bad_type), "solver.tau");
    let unknown = parse_run_config(r#"{"solver": {"taux": 0.1}}"#).unwrap_err();
    assert!(config_field(unknown).contains("taux"));
    let top = parse_run_config(r#"{"modle": "free"}"#).unwrap_err();
    assert!(config_field(top).contains("modle"));
    let alpha = parse_run_config(r#"{"solver": {"alpha": "sometimes"}}"#).unwrap_err();
    assert_eq!(config_field(alpha), "solver.alpha");
    assert_eq!(config_field(parse_alpha("x").unwrap_err()), "alpha");
    assert_eq!(parse_alpha("-0.5").unwrap(), crate::lo_solver::AlphaMode::Fixed(-0.5));
}

#[test]
fn custom_potential_in_config() {
    let (cfg, explicit) = parse_run_config(
        r#"{"model": {"dim": 1, "terms": [{"kind": "cos", "amp": 0.5, "wave": [2]}]},
            "solver": {"n": 64, "fix_tol": 1e-6}}"#,
    )
    .unwrap();
    assert!(explicit);
    let m = cfg.build_model().unwrap();
    assert!((m.energy(&[0.0], &[0.0]) - 0.5).abs() < 1e-15);
    assert_eq!(cfg.solver.n, 64);
    // The hash is a pure function of the serialized configuration.
    assert_eq!(cfg.hash(), cfg.clone().hash());
    assert_eq!(cfg.hash().len(), 64);
    let (other, explicit) = parse_run_config(r#"{"solver": {"n": 64}}"#).unwrap();
    assert!(!explicit);
    assert_ne!(other.hash(), cfg.hash());
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, r#"{"model": "free", "solver": {"n": 32, "tau": 0.1, "fix_tol": 1e-8}}"#).unwrap();
    let args = solve_args(&["--config", path.to_str().unwrap(), "--n", "48", "--c", "-0.3", "--alpha", "0.045"]);
    let cfg = resolve_run_config(&args, false).unwrap();
    assert_eq!(cfg.model, ModelSpec::Named("free".into()));
    assert_eq!((cfg.solver.n, cfg.solver.tau, cfg.solver.fix_tol), (48, 0.1, 1e-8));
    assert_eq!(cfg.solver.c, vec![-0.3]);
    // Without an explicit tolerance, solve falls back to the weak KAM default.
    let cfg = resolve_run_config(&solve_args(&["--model", "free"]), false).unwrap();
    assert_eq!(cfg.solver.fix_tol, WEAK_KAM_FIX_TOL);
    let cfg = resolve_run_config(&solve_args(&["--model", "free"]), true).unwrap();
    assert_eq!(cfg.solver.fix_tol, crate::lo_solver::SolverConfig::default().fix_tol);
    let err = resolve_run_config(&solve_args(&["--tau=-1"]), false).unwrap_err();
    assert_eq!(config_field(err), "tau");
}

#[test]
fn usage_errors_exit_with_config_code() {
    assert_eq!(run_from(["weakkam", "solve", "--n", "many"]), 2);
    assert_eq!(run_from(["weakkam", "frobnicate"]), 2);
    assert_eq!(run_from(["weakkam", "experiment", "--preset", "nope"]), 2);
    assert_eq!(run_from(["weakkam", "green", "--model", "pendulum"]), 2);
}

#[test]
fn presets_are_valid_and_distinct() {
    let mut hashes = Vec::new();
    for name in PRESETS {
        let spec = ExperimentSpec::preset(name).unwrap();
        spec.validate().unwrap();
        assert_eq!(spec.name, name);
        hashes.push(spec.hash());
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(ExperimentSpec::from_json(&text).unwrap(), spec);
    }
    hashes.dedup();
    assert_eq!(hashes.len(), PRESETS.len());
}

fn small_spec() -> ExperimentSpec {
    ExperimentSpec {
        name: "small".into(),
        model: ModelSpec::Named("free".into()),
        sweep: Sweep {
            variable: SweepVariable::T,
            values: vec![0.2, 0.4, 0.8],
        },
        n: 32,
        tau: 0.1,
        c: vec![0.25],
        metrics: vec![Metric::C0, Metric::Hausdorff, Metric::Fiberwise, Metric::D21],
        out_dir: "out".into(),
        seed: 7,
        fields: None,
        u0: InitialData::Random {
            amplitude: 0.2,
            modes: 3,
        },
        eps: 0.05,
        fix_tol: 1e-9,
        kam_tol: WEAK_KAM_FIX_TOL,
        max_iters: 200_000,
        decreasing: vec![Metric::C0],
        budget_secs: Some(30.0),
    }
}

#[test]
fn spec_validation() {
    let bad = |f: &dyn Fn(&mut ExperimentSpec), field: &str| {
        let mut s = small_spec();
        f(&mut s);
        assert_eq!(config_field(s.validate().unwrap_err()), field);
    };
    bad(&|s| s.sweep.values = vec![0.2, 0.2], "sweep.values");
    bad(&|s| s.sweep.values = vec![0.2, 0.4, 0.3], "sweep.values");
    bad(&|s| s.sweep.values = vec![], "sweep.values");
    bad(&|s| s.metrics.clear(), "metrics");
    bad(&|s| s.decreasing = vec![Metric::SupD2Gap], "decreasing");
    bad(&|s| s.n = 4, "n");
    bad(&|s| s.c = vec![0.1, 0.2], "c");
    bad(&|s| s.name = "a/b".into(), "name");
    bad(&|s| s.fields = Some(FieldSource::Oracle), "fields");
    bad(
        &|s| {
            s.sweep.variable = SweepVariable::I;
            s.sweep.values = vec![1.5, 1.4];
        },
        "sweep.variable",
    );
    bad(
        &|s| {
            s.sweep.variable = SweepVariable::Lambda;
            s.sweep.values = vec![0.1, 0.0];
        },
        "sweep.values",
    );
    let err = ExperimentSpec::from_json(r#"{"name": "x"}"#).unwrap_err();
    assert!(matches!(err, Error::Config { .. }));
}

#[test]
fn experiment_is_deterministic_and_writes_outputs() {
    let spec = small_spec();
    let a = run_experiment(&spec).unwrap();
    let b = run_experiment(&spec).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.rows.len(), 3);
    assert!(a.rows.iter().all(|r| r.status == "ok"), "{:?}", a.rows);
    assert!(a.trend_failures.is_empty(), "{:?}", a.column(Metric::C0));
    let csv = a.to_csv();
    assert!(csv.starts_with("t,c0,hausdorff,fiberwise,d21,status\n"), "{csv}");

    let dir = tempfile::tempdir().unwrap();
    let written = a.write(dir.path()).unwrap();
    assert_eq!(written.len(), 2 + spec.metrics.len());
    let dat = std::fs::read_to_string(dir.path().join("small_c0.dat")).unwrap();
    assert_eq!(dat.lines().count(), 4);
    assert!(dat.lines().skip(1).all(|l| l.split(' ').count() == 2));
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("small_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.config_hash, spec.hash());
    assert_eq!(manifest.rows.len(), spec.sweep.values.len());

    // A different seed changes the random initial datum.
    let other = run_experiment(&ExperimentSpec { seed: 8, ..spec }).unwrap();
    assert_ne!(other.to_csv(), csv);
}

#[test]
fn failed_points_are_recorded() {
    // An unreachable tolerance makes every solve fail without aborting the sweep.
    let spec = ExperimentSpec {
        sweep: Sweep {
            variable: SweepVariable::Lambda,
            values: vec![0.5, 0.25],
        },
        model: ModelSpec::Named("pendulum".into()),
        c: vec![1.5],
        fix_tol: 1e-300,
        max_iters: 2000,
        metrics: vec![Metric::C0],
        decreasing: vec![],
        ..small_spec()
    };
    let m = run_experiment(&spec).unwrap();
    assert_eq!(m.failed_rows(), 2, "{:?}", m.rows);
    assert!(m.rows.iter().all(|r| r.status.starts_with("failed")));
    assert!(m.to_csv().contains(",failed"));
}

#[test]
fn oracle_cohomology_sweep_columns() {
    let spec = ExperimentSpec {
        n: 400,
        ..ExperimentSpec::preset("cohom-pendulum").unwrap()
    };
    let m = run_experiment(&spec).unwrap();
    let d21 = m.column(Metric::D21);
    assert!(d21.windows(2).all(|w| w[1] < w[0]), "{d21:?}");
    assert!(m.column(Metric::SupD2Gap).iter().all(|&g| g >= 0.25));
    for (row, &i) in m.rows.iter().zip(&spec.sweep.values) {
        assert!((row.metrics["d21"] - oracle_d21_gap(i).unwrap()).abs() < 1e-12);
    }
}
