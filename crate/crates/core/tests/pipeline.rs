use std::fs;
use std::io::BufReader;

use rwre_core::experiments::{emit, run_experiment, ExperimentConfig, ExperimentId, GridSpec};
use rwre_core::lattice::{
    make_mixing_law, read_environment_csv, sample_environment, validate_environment, write_environment_csv, BoundaryPolicy,
    EnvLaw, MarginalFamily, SiteKernel, Window,
};
use rwre_core::mgf::{lambda_a_boundary, legendre, MgfKind};
use rwre_core::renewal::{qz_identity_check_quenched, simulate_qz, uz_theta};
use rwre_core::rng::replica_rng;
use rwre_core::Error;

#[test]
fn environment_round_trip_through_files() {
    let law = make_mixing_law::<f64>(2, 0.05, SiteKernel::uniform(2), MarginalFamily::two_point(), 0.15, 2, 1.0, 0.4).unwrap();
    let text = law.to_config_string();
    let back = EnvLaw::<f64>::from_config_str(&text).unwrap();
    assert_eq!(back.to_config_string(), text);

    let env = sample_environment(&law, &Window::centered(2, 3), 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("env.csv");
    write_environment_csv(&env, fs::File::create(&path).unwrap()).unwrap();
    let read = read_environment_csv::<f64, _>(BufReader::new(fs::File::open(&path).unwrap()), BoundaryPolicy::Strict, None).unwrap();
    assert_eq!(read.window(), env.window());
    for (a, b) in read.table().iter().zip(env.table()) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(validate_environment(&read, 0.05).is_valid());
}

#[test]
fn mgf_to_rate_pipeline() {
    let law = rwre_core::lattice::make_iid_law::<f64>(2, 0.05, SiteKernel::uniform(2), MarginalFamily::two_point(), 0.1).unwrap();
    let s = rwre_core::lattice::SignVector::all_positive(2);
    let thetas = rwre_core::mgf::product_grid::<f64>(1, -2.0, 2.0, 41);
    let m = lambda_a_boundary(&law, &s, &thetas, 24, 50, 4).unwrap();
    assert_eq!(m.annealed.kind, MgfKind::Annealed);
    let conj = legendre(&thetas, &m.annealed.estimates, &[vec![0.0]]).unwrap();
    // the projected symmetric walk has its zero-rate point at 0 and the rate
    // there is -Lambda(0) = log 2 on the boundary face
    assert!((conj.star_vals[0] - (-m.annealed.estimates[20])).abs() < 1e-12);
    assert!((conj.star_vals[0] - 2f64.ln()).abs() < 0.05);
}

#[test]
fn quenched_identity_in_a_fixed_environment() {
    let law = rwre_core::lattice::make_iid_law::<f64>(2, 0.05, SiteKernel::uniform(2), MarginalFamily::two_point(), 0.2).unwrap();
    let env = sample_environment(&law, &Window::centered(2, 4), 21).unwrap();
    let tilt = uz_theta(&SiteKernel::new(law.effective_mean()).unwrap(), &[0.2, -0.1]).unwrap();
    let r = qz_identity_check_quenched(&env, &tilt, &[0.3, 0.1], 3).unwrap();
    assert!(r.abs_err <= 1e-10, "{r:?}");
}

#[test]
fn tilted_walk_renewals_are_spaced() {
    let tilt = uz_theta(&SiteKernel::<f64>::uniform(2), &[0.5, 0.1]).unwrap();
    let mut seen = 0;
    for seed in 0..20 {
        let run = simulate_qz(&tilt, None, 2000, None, 1, 0.1, &mut replica_rng(seed, 0)).unwrap();
        let mut prev = 0;
        for &t in &run.renewals.taus {
            assert!(t >= prev + 1);
            prev = t;
        }
        for w in run.scaffolds.windows(2) {
            assert!(w[1].s > w[0].s);
        }
        seen += run.renewals.taus.len();
    }
    assert!(seen > 0);
}

#[test]
fn config_file_run_emit_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        r#"
        id = "e1"
        replicas = 24
        master_seed = 99
        n_ladder = [10]
        delta_ladder = [0.0, 0.1]
        output_dir = "{}"
        [law]
        d = 2
        kappa = 0.05
        delta = 0.1
        mixing_range = 2
        [theta_grid]
        lo = -1.0
        hi = 1.0
        points = 5
        "#,
        dir.path().join("out").display()
    );
    let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
    assert_eq!(cfg.theta_grid, GridSpec::new(-1.0, 1.0, 5));
    let a = run_experiment(&cfg).unwrap();
    let (csv, json) = emit(&a, &cfg.output_dir).unwrap();
    let first = fs::read(&csv).unwrap();
    let b = run_experiment(&cfg).unwrap();
    emit(&b, &cfg.output_dir).unwrap();
    assert_eq!(fs::read(&csv).unwrap(), first);
    assert!(fs::read_to_string(json).unwrap().contains("\"master_seed\": 99"));
    assert!(String::from_utf8(first).unwrap().lines().skip(1).all(|l| l.contains(&a.config_hash)));
}

#[test]
fn gate_then_publish() {
    let dir = tempfile::tempdir().unwrap();
    let mut e3 = ExperimentConfig::default_for(ExperimentId::E3);
    e3.n_ladder = vec![2];
    e3.replicas = 500;
    e3.output_dir = dir.path().to_path_buf();
    let mut e2 = ExperimentConfig::default_for(ExperimentId::E2);
    e2.n_ladder = vec![64];
    e2.eta_grid = GridSpec::new(-1.0, 1.0, 3);
    e2.thresholds = vec![1.0];
    e2.require_e3 = true;
    e2.output_dir = dir.path().to_path_buf();
    assert!(matches!(run_experiment(&e2), Err(Error::GateFailed(_))));
    assert!(serde_json::from_value::<rwre_core::experiments::E3Report>(run_experiment(&e3).unwrap().report).unwrap().all_pass);
    run_experiment(&e2).unwrap();
}
