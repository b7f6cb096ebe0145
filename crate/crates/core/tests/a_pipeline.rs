use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use ibvp_lab::config::parse_config_str;
use ibvp_lab::experiment::{convergence_study, emit_plotdata, run_suite, SuiteMode};
use ibvp_lab::sbp::{build_sbp_operator, Grid1D};
use ibvp_lab::solver::{rk4_solve_with, SemiDiscreteProblem, SolveOptions};
use ibvp_lab::systems::{make_advection, make_wave_system, DataBundle};
use ibvp_lab::uncertainty::{
    deviation_series, estimate_delta0, fit_short_time_rate, run_perturbation_pair, verify_bound,
    PerturbationKind, PerturbationSpec, Shape, RATE_TOL,
};

const EPS: f64 = 1e-3;

fn advection(n: usize) -> SemiDiscreteProblem {
    let op = Arc::new(build_sbp_operator(4, &Grid1D::unit(n).unwrap()).unwrap());
    SemiDiscreteProblem::new(make_advection(1.0).unwrap(), op, DataBundle::zero()).unwrap()
}

fn config_text(system: &str, sizes: &str, order: usize, extra: &str, dir: &Path) -> String {
    format!(
        "[system]\nname = \"{system}\"\n[grid]\nn = {sizes}\norder = {order}\n[perturbation]\nkind = [\"forcing\", \"boundary\", \"initial\"]\neps = 1e-3\n[analysis]\n{extra}\n[output]\ndir = \"{}\"\n",
        dir.display()
    )
}

#[test]
fn theta_monotone_and_certificate_on_every_kind() {
    let prob = advection(101);
    for kind in PerturbationKind::ALL {
        let run = run_perturbation_pair(
            &prob,
            &PerturbationSpec::new(kind, EPS),
            &SolveOptions::new(2.0, 0.5),
        )
        .unwrap();
        let s = deviation_series(&run).unwrap();
        assert!(s.theta.windows(2).all(|w| w[1] >= w[0]), "{kind}");
        let d0 = estimate_delta0(&s, (0.0, 2.0)).unwrap();
        assert!(d0.certificate_margin(&s) >= -1e-10, "{kind}");
        assert!(verify_bound(kind, &s, &d0).unwrap().pass, "{kind}");
    }
}

#[test]
fn conclusions_stable_under_refinement() {
    for kind in PerturbationKind::ALL {
        let mut slopes = Vec::new();
        let mut ratios = Vec::new();
        for n in [201, 401] {
            let run = run_perturbation_pair(
                &advection(n),
                &PerturbationSpec::new(kind, EPS),
                &SolveOptions::new(2.0, 0.5),
            )
            .unwrap();
            let s = deviation_series(&run).unwrap();
            let d0 = estimate_delta0(&s, (0.0, 2.0)).unwrap();
            ratios.push(verify_bound(kind, &s, &d0).unwrap().max_ratio);
            slopes.push(
                fit_short_time_rate(&s, (0.01, 0.1), kind.target_slope(), RATE_TOL)
                    .unwrap()
                    .slope,
            );
        }
        assert!((slopes[0] - slopes[1]).abs() < 0.02, "{kind}: {slopes:?}");
        assert!((ratios[0] - ratios[1]).abs() < 0.02, "{kind}: {ratios:?}");
    }
}

#[test]
fn bounds_hold_for_alternate_shapes() {
    let prob = advection(201);
    for shape in [
        Shape::Gaussian {
            center: 0.5,
            width: 0.1,
        },
        Shape::Sine { wavenumber: 2.0 },
    ] {
        for kind in PerturbationKind::ALL {
            let spec = PerturbationSpec::new(kind, EPS).with_shape(shape);
            let run = run_perturbation_pair(&prob, &spec, &SolveOptions::new(2.0, 0.5)).unwrap();
            let s = deviation_series(&run).unwrap();
            let d0 = estimate_delta0(&s, (0.0, 2.0)).unwrap();
            let rep = verify_bound(kind, &s, &d0).unwrap();
            assert!(rep.pass, "{kind} {shape:?}: {}", rep.max_ratio);
        }
    }
}

#[test]
fn smooth_initial_bump_leaves_the_domain() {
    let spec = PerturbationSpec::new(PerturbationKind::Initial, EPS).with_shape(Shape::Gaussian {
        center: 0.5,
        width: 0.05,
    });
    let run = run_perturbation_pair(&advection(401), &spec, &SolveOptions::new(2.0, 0.5)).unwrap();
    let s = deviation_series(&run).unwrap();
    let peak = s.w_norm.iter().copied().fold(0.0, f64::max);
    assert!(*s.w_norm.last().unwrap() < 1e-5 * peak);
}

#[test]
fn wave_pulse_is_absorbed() {
    let op = Arc::new(build_sbp_operator(4, &Grid1D::unit(201).unwrap()).unwrap());
    let data = DataBundle::zero().with_initial(Arc::new(|x, out| {
        let g = (-((x - 0.5) / 0.05f64).powi(2)).exp();
        out[0] = g;
        out[1] = 0.0;
    }));
    let prob = SemiDiscreteProblem::new(make_wave_system(1.0).unwrap(), op, data).unwrap();
    let traj = rk4_solve_with(&prob, &SolveOptions::new(3.0, 0.5).with_stride(50)).unwrap();
    let e0 = prob.energy(&traj.states[0]);
    let e = prob.energy(traj.final_state());
    assert!(e <= 1e-8 * e0, "{e:e} vs {e0:e}");
    let energies: Vec<f64> = traj.states.iter().map(|s| prob.energy(s)).collect();
    assert!(energies.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
}

#[test]
fn convergence_for_all_orders_and_systems() {
    let dir = tempfile::tempdir().unwrap();
    for (system, order, sizes, expected) in [
        ("advection", 2, "[41, 81, 161]", 2.0),
        ("advection", 6, "[41, 81, 161]", 4.0),
        ("wave", 4, "[41, 81, 161]", 3.0),
        ("burgers", 4, "[41, 81, 161]", 3.0),
    ] {
        let cfg = parse_config_str(&config_text(system, sizes, order, "", dir.path())).unwrap();
        let rep = convergence_study(&cfg, 0.5).unwrap();
        assert_eq!(rep.expected_order, expected);
        assert!(rep.pass, "{system} order {order}: {:?}", rep.levels);
        assert!(rep.levels.windows(2).all(|w| w[1].error < w[0].error));
    }
}

#[test]
fn burgers_linearization_error_is_first_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config_str(&config_text("burgers", "101", 4, "", dir.path())).unwrap();
    let base = cfg.base_problem(101).unwrap();
    for kind in PerturbationKind::ALL {
        let mut scaled = Vec::new();
        for eps in [EPS, EPS / 2.0, EPS / 4.0] {
            let run = run_perturbation_pair(
                &base,
                &PerturbationSpec::new(kind, eps),
                &SolveOptions::new(1.0, 0.5),
            )
            .unwrap();
            scaled.push(run.deviation.final_state() / eps);
        }
        let d1 = base.norm(&(&scaled[0] - &scaled[1]));
        let d2 = base.norm(&(&scaled[1] - &scaled[2]));
        let rate = d1 / d2;
        assert!((rate - 2.0).abs() < 0.1, "{kind}: {rate}");
    }
}

#[test]
fn plot_data_and_index() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config_str(&config_text("advection", "201", 4, "", dir.path())).unwrap();
    let rep = run_suite(&cfg, SuiteMode::All).unwrap();
    let index = emit_plotdata(&rep).unwrap();
    assert_eq!(index.len(), 9);
    let idx = fs::read_to_string(dir.path().join("plot_index.csv")).unwrap();
    assert_eq!(idx.lines().count(), 10);

    let read = |run: &str, file: &str| -> Vec<(f64, f64)> {
        fs::read_to_string(dir.path().join(run).join(file))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| {
                let mut it = l.split_whitespace().map(|v| v.parse::<f64>().unwrap());
                (it.next().unwrap(), it.next().unwrap())
            })
            .collect()
    };
    let forcing = read("advection_forcing_n201_eps1e-3", "w_norm.dat");
    let last = forcing.last().unwrap().1;
    assert!((last / (EPS / 3f64.sqrt()) - 1.0).abs() < 0.01);
    let initial = read("advection_initial_n201_eps1e-3", "w_norm.dat");
    assert!(initial.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-12)));
    let loglog = read("advection_boundary_n201_eps1e-3", "loglog.dat");
    assert!(loglog.len() > 10 && loglog[0].0 < loglog[1].0);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ibvp-lab"))
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    };
    let out = dir.path().join("out");
    let good = write("good.toml", &config_text("advection", "101", 4, "", &out));
    let bad_key = write(
        "bad.toml",
        &format!(
            "{}\nepsilonn = 1\n",
            config_text("advection", "101", 4, "", &out)
        ),
    );
    let unstable = write(
        "unstable.toml",
        &config_text("advection", "101", 4, "penalty_scale = -1.0", &out),
    );

    let status = |args: &[&str]| bin().args(args).output().unwrap();
    assert_eq!(
        status(&["validate", good.to_str().unwrap()]).status.code(),
        Some(0)
    );
    let o = status(&["validate", bad_key.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilonn"));
    assert_eq!(
        status(&["validate", "/nonexistent.toml"]).status.code(),
        Some(2)
    );
    assert_eq!(status(&["frobnicate"]).status.code(), Some(2));

    let o = status(&[
        "bounds",
        unstable.to_str().unwrap(),
        "--quiet",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(o.stdout.is_empty());

    let o = status(&[
        "rates",
        good.to_str().unwrap(),
        "--workers",
        "2",
        "--seed",
        "7",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    assert!(out.join("summary.jsonl").exists());
    assert!(out.join("plot_index.csv").exists());
    let suite = fs::read_to_string(out.join("suite.json")).unwrap();
    assert!(suite.contains("\"seed\": 7"));

    let conv = write(
        "conv.toml",
        &config_text("advection", "[51, 101]", 4, "", &out),
    );
    assert_eq!(
        status(&["convergence", conv.to_str().unwrap(), "--quiet"])
            .status
            .code(),
        Some(0)
    );
    assert!(out.join("convergence.json").exists());
}
