use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use glmm_mcmc::cli::chainfile::ChainMeta;
use glmm_mcmc::cli::dataset::Dataset;
use glmm_mcmc::model::logistic;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use tempfile::TempDir;

fn glmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glmm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = glmm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &TempDir, name: &str, sets: &[&str]) -> PathBuf {
    let out = path(dir, name);
    let mut args = vec!["simulate", "--out", s(&out)];
    for set in sets {
        args.extend(["--set", set]);
    }
    ok(&args);
    path(dir, &format!("{name}.csv"))
}

fn read_meta(chain: &Path) -> ChainMeta {
    serde_json::from_str(&std::fs::read_to_string(chain.with_extension("meta.json")).unwrap()).unwrap()
}

fn probit_data(dir: &TempDir) -> PathBuf {
    simulate(
        dir,
        "pb",
        &["family=\"probit\"", "simulate.m=60", "simulate.p=2", "simulate.blocks=[4]", "simulate.beta=[0.2,-0.5]"],
    )
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = TempDir::new().unwrap();
    let data = probit_data(&dir);
    let first = std::fs::read(&data).unwrap();
    probit_data(&dir);
    assert_eq!(first, std::fs::read(&data).unwrap());

    let out = path(&dir, "run");
    let args = [
        "sample", "--data", s(&data), "--out", s(&out), "--set", "family=\"probit\"", "--set", "sampler=\"haar\"",
        "--set", "run.n_iter=3000", "--set", "run.burn_in=500", "--seed", "9",
    ];
    let stdout = ok(&args);
    let files = ["run.csv", "run.meta.json", "run.summary.txt"].map(|f| std::fs::read(path(&dir, f)).unwrap());
    assert_eq!(stdout, ok(&args));
    for (f, bytes) in ["run.csv", "run.meta.json", "run.summary.txt"].iter().zip(&files) {
        assert_eq!(bytes, &std::fs::read(path(&dir, f)).unwrap(), "{f}");
    }

    let fit = path(&dir, "fit");
    let args = [
        "fit", "--data", s(&data), "--out", s(&fit), "--set", "family=\"probit\"", "--set", "sampler=\"da\"",
        "--set", "fit.n_samples=300", "--set", "fit.max_iter=4",
    ];
    let stdout = ok(&args);
    let est = std::fs::read(path(&dir, "fit.estimates.csv")).unwrap();
    assert_eq!(stdout, ok(&args));
    assert_eq!(est, std::fs::read(path(&dir, "fit.estimates.csv")).unwrap());
}

#[test]
fn thinning_sets_the_row_count() {
    let dir = TempDir::new().unwrap();
    let data = probit_data(&dir);
    let out = path(&dir, "thin");
    ok(&[
        "sample", "--data", s(&data), "--out", s(&out), "--set", "family=\"probit\"", "--set", "sampler=\"bg\"",
        "--set", "run.n_iter=2000", "--set", "run.burn_in=500", "--set", "run.thin=10",
    ]);
    let chain = path(&dir, "thin.csv");
    let text = std::fs::read_to_string(&chain).unwrap();
    assert_eq!(text.lines().count(), 1 + 150);
    assert_eq!(read_meta(&chain).rows, 150);
}

#[test]
fn bad_inputs_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let missing = path(&dir, "nope.csv");
    let out = glmm(&["fit", "--data", s(&missing), "--out", s(&path(&dir, "f")), "--set", "family=\"logistic\"", "--set", "sampler=\"mala\""]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));

    let data = simulate(&dir, "pois", &["family=\"poisson-log\""]);
    let out = glmm(&["sample", "--data", s(&data), "--out", s(&path(&dir, "x")), "--set", "family=\"poisson-log\"", "--set", "sampler=\"da\""]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("probit"));

    let out = glmm(&["sample", "--data", s(&data), "--out", s(&path(&dir, "x")), "--set", "family=\"poisson-log\"", "--set", "sampler=\"mala\"", "--set", "run.burn_in=20000"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn negligible_random_effects_follow_the_glm_law() {
    let dir = TempDir::new().unwrap();
    let beta = [0.3, -0.9];
    let data = simulate(
        &dir,
        "glm",
        &["family=\"logistic\"", "simulate.m=1000", "simulate.p=2", "simulate.trials=5", "simulate.beta=[0.3,-0.9]", "simulate.lambda=[1e8]"],
    );
    let d = Dataset::read(&data).unwrap();
    let trials = d.trials.clone().unwrap();
    // Pearson statistic over ten bins of the success probability.
    let k = 10;
    let mut obs = vec![0.0; k];
    let mut exp = vec![0.0; k];
    let mut var = vec![0.0; k];
    for i in 0..d.n_obs() {
        let p: f64 = logistic(beta[0] * d.x[(i, 0)] + beta[1] * d.x[(i, 1)]);
        let bin = ((p * k as f64) as usize).min(k - 1);
        let n = trials[i] as f64;
        obs[bin] += d.y[i] as f64;
        exp[bin] += n * p;
        var[bin] += n * p * (1.0 - p);
    }
    let used: Vec<usize> = (0..k).filter(|&b| var[b] > 0.0).collect();
    let stat: f64 = used.iter().map(|&b| (obs[b] - exp[b]).powi(2) / var[b]).sum();
    let crit = ChiSquared::new(used.len() as f64).unwrap().inverse_cdf(0.999);
    assert!(stat < crit, "{stat} vs {crit}");
}

#[test]
fn symmetric_probit_has_balanced_responses() {
    let dir = TempDir::new().unwrap();
    let m = 4000.0;
    let data = simulate(&dir, "sym", &["family=\"probit\"", "simulate.m=4000", "simulate.p=1", "simulate.beta=[0.0]", "simulate.lambda=[1e8]"]);
    let d = Dataset::read(&data).unwrap();
    let ybar = d.y.iter().sum::<u64>() as f64 / m;
    assert!((ybar - 0.5).abs() < 3.0 * (0.25 / m).sqrt(), "{ybar}");
}

#[test]
fn fit_recovers_simulated_fixed_effects() {
    let dir = TempDir::new().unwrap();
    let data = simulate(
        &dir,
        "lg",
        &["family=\"logistic\"", "simulate.m=500", "simulate.p=2", "simulate.blocks=[10]", "simulate.beta=[1.0,-1.0]", "simulate.lambda=[1.0]"],
    );
    let out = path(&dir, "fit");
    ok(&[
        "fit", "--data", s(&data), "--out", s(&out), "--set", "family=\"logistic\"", "--set", "sampler=\"mala\"",
        "--set", "fit.m_step=\"newton\"", "--set", "fit.n_samples=1000", "--set", "fit.max_iter=60", "--seed", "3",
    ]);
    let est = std::fs::read_to_string(path(&dir, "fit.estimates.csv")).unwrap();
    let values: Vec<f64> = est.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!((values[1] + 1.0).abs() < 0.3, "{est}");
    // With ten levels the realized mean random effect has sd 1/√10, about the
    // size of the band, and the intercept estimate absorbs it.
    let truth: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path(&dir, "lg.truth.json")).unwrap()).unwrap();
    let u: Vec<f64> = truth["u"][0].as_array().unwrap().iter().map(|p| p[1].as_f64().unwrap()).collect();
    let ubar = u.iter().sum::<f64>() / u.len() as f64;
    assert!((values[0] - 1.0 - ubar).abs() < 0.3, "{est} (mean u {ubar})");
    assert!(values[2].is_finite() && values[2] > 0.0);
}

#[test]
fn mcml_without_iterations_reports_the_anchor() {
    let dir = TempDir::new().unwrap();
    let data = probit_data(&dir);
    let out = path(&dir, "ml");
    let stdout = ok(&[
        "fit", "--data", s(&data), "--out", s(&out), "--set", "family=\"probit\"", "--set", "sampler=\"mala\"",
        "--set", "fit.method=\"mcml\"", "--set", "fit.max_iter=0", "--set", "init.beta=[0.1,-0.2]", "--set", "init.lambda=[2.0]",
    ]);
    assert!(stdout.contains("objective: 0\n"), "{stdout}");
    let est = std::fs::read_to_string(path(&dir, "ml.estimates.csv")).unwrap();
    assert_eq!(est, "parameter,estimate\nbeta.0,0.1\nbeta.1,-0.2\nlambda.1,2\n");
}

#[test]
fn every_family_and_sampler_runs_end_to_end() {
    let dir = TempDir::new().unwrap();
    let cases: [(&str, &[&str]); 3] = [
        ("logistic", &["mala", "hmc", "pgda", "fg", "bg", "mala-gibbs", "hmc-gibbs"]),
        ("probit", &["mala", "hmc", "da", "pxda", "fg", "bg", "haar", "mala-gibbs", "hmc-gibbs"]),
        ("poisson-log", &["mala", "hmc", "mala-gibbs", "hmc-gibbs"]),
    ];
    for (family, samplers) in cases {
        let fam = format!("family=\"{family}\"");
        let data = simulate(&dir, family, &[&fam, "simulate.m=40", "simulate.p=2", "simulate.blocks=[3,2]"]);
        for sampler in samplers {
            let out = path(&dir, &format!("{family}-{sampler}"));
            let smp = format!("sampler=\"{sampler}\"");
            ok(&["sample", "--data", s(&data), "--out", s(&out), "--set", &fam, "--set", &smp, "--set", "run.n_iter=600", "--set", "run.burn_in=100"]);
            let chain = out.with_extension("csv");
            let summary = ok(&["summary", "--chain", s(&chain)]);
            assert!(summary.contains("beta") || summary.contains("u.1"), "{family}/{sampler}: {summary}");
        }
    }
}

#[test]
fn summary_detects_config_drift() {
    let dir = TempDir::new().unwrap();
    let data = probit_data(&dir);
    let cfg = path(&dir, "run.toml");
    std::fs::write(&cfg, "family = \"probit\"\nsampler = \"bg\"\nseed = 4\n\n[run]\nn_iter = 1000\nburn_in = 200\n").unwrap();
    let out = path(&dir, "run");
    ok(&["sample", "--config", s(&cfg), "--data", s(&data), "--out", s(&out)]);
    let chain = path(&dir, "run.csv");
    ok(&["summary", "--chain", s(&chain), "--config", s(&cfg)]);

    let out = glmm(&["summary", "--chain", s(&chain), "--config", s(&cfg), "--set", "run.burn_in=300"]);
    assert_eq!(out.status.code(), Some(2));
    let out = glmm(&["summary", "--chain", s(&chain), "--config", s(&cfg), "--seed", "5"]);
    assert_eq!(out.status.code(), Some(2));
}
