use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::chainfile::{read_chain, write_chain, ChainMeta, FORMAT};
use super::config::{FitMethod, RunConfig};
use super::dataset::{simulate, Dataset, SimulationSpec};
use crate::bayes::BayesModel;
use crate::chain::{run_chain, BayesChain, ConditionalChain, SampleMatrix};
use crate::diagnostics::ChainSummary;
use crate::error::{Error, Result};
use crate::inference::{mcem_fit, mcml_fit, FitResult};
use crate::model::{ConditionalTarget, ModelSpec};
use crate::rng::RngStream;

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Config(format!("cannot write '{}': {e}", path.display())))
}

fn load_data(path: &Path, cfg: &RunConfig) -> Result<(Dataset, ModelSpec<f64>, String)> {
    let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("cannot read dataset '{}': {e}", path.display())))?;
    let data = Dataset::read(path)?;
    let model = data
        .to_model(cfg.family)
        .map_err(|e| Error::Config(format!("dataset '{}': {e}", path.display())))?;
    Ok((data, model, hex::encode(Sha256::digest(&bytes))))
}

/// Simulates a dataset; writes `<out>.csv` and `<out>.truth.json`.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<String> {
    let s = &cfg.simulate;
    let spec = SimulationSpec {
        family: cfg.family,
        m: s.m,
        p: s.p,
        intercept: s.intercept,
        blocks: s.blocks.clone(),
        beta: s.beta.clone().unwrap_or_else(|| vec![0.0; s.p]),
        lambda: s.lambda.clone().unwrap_or_else(|| vec![1.0; s.blocks.len()]),
        trials: s.trials,
    };
    let mut rng = RngStream::new(cfg.seed);
    let (data, truth) = simulate(&mut rng, &spec)?;
    let data_path = with_suffix(out, ".csv");
    let truth_path = with_suffix(out, ".truth.json");
    data.write(&data_path)?;
    write_text(&truth_path, &(serde_json::to_string_pretty(&truth).expect("truth serializes") + "\n"))?;
    let ybar = data.y.iter().sum::<u64>() as f64 / data.n_obs() as f64;
    Ok(format!(
        "simulated {} observations ({} family, mean response {ybar:.4})\nwrote {}\nwrote {}\n",
        data.n_obs(),
        cfg.family,
        data_path.display(),
        truth_path.display()
    ))
}

fn run_one(cfg: &RunConfig, model: &ModelSpec<f64>, chain: usize) -> Result<SampleMatrix> {
    let mut rng = RngStream::new(cfg.seed).split(chain as u64);
    let settings = cfg.run_settings();
    let name = cfg.sampler()?;
    let mut samples = if name.is_conditional() {
        let sampler = cfg.conditional_sampler(model)?;
        let target = ConditionalTarget::from_precisions(
            model,
            cfg.init_beta(model.n_fixed())?,
            &cfg.init_lambda(model.blocks().len())?,
        )?;
        let mut c = ConditionalChain::new(target, &sampler, cfg.init_u(model.n_random())?)?;
        run_chain(&mut c, &mut rng, &settings)?
    } else {
        let sampler = cfg.bayes_sampler(model)?;
        let prior = cfg.prior(model)?;
        let bm = BayesModel::new(model, &prior)?;
        let mut c = BayesChain::new(bm, sampler, cfg.init_state(model)?)?;
        run_chain(&mut c, &mut rng, &settings)?
    };
    samples.seed = cfg.seed;
    Ok(samples)
}

/// Runs `cfg.chains` chains, at most `threads` at a time. Writes
/// `<out>.csv` (or `<out>.chainK.csv` for several chains) with sidecars and
/// summaries, and returns the rendered summaries.
pub fn cmd_sample(cfg: &RunConfig, data_path: &Path, out: &Path, threads: usize) -> Result<String> {
    if threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    let (_, model, data_sha) = load_data(data_path, cfg)?;
    // Surface configuration problems before any thread starts.
    let name = cfg.sampler()?;
    if name.is_conditional() {
        cfg.conditional_sampler(&model)?;
    } else {
        cfg.bayes_sampler(&model)?;
        cfg.prior(&model)?;
    }

    let ids: Vec<usize> = (0..cfg.chains).collect();
    let model_ref = &model;
    let mut results = Vec::with_capacity(cfg.chains);
    for batch in ids.chunks(threads) {
        let batch_results: Vec<Result<SampleMatrix>> = std::thread::scope(|s| {
            let handles: Vec<_> = batch.iter().map(|&k| s.spawn(move || run_one(cfg, model_ref, k))).collect();
            handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
        });
        results.extend(batch_results);
    }

    let mut report = String::new();
    for (k, res) in results.into_iter().enumerate() {
        let samples = res?;
        let stem = if cfg.chains == 1 {
            out.to_path_buf()
        } else {
            with_suffix(out, &format!(".chain{}", k + 1))
        };
        let chain_path = with_suffix(&stem, ".csv");
        let meta = ChainMeta {
            format: FORMAT.into(),
            config_hash: cfg.hash(),
            dataset_sha256: data_sha.clone(),
            sampler: name.label().into(),
            seed: cfg.seed,
            chain: k,
            n_iter: samples.n_iter,
            burn_in: samples.burn_in,
            thin: samples.thin,
            rows: samples.data.nrows(),
            acceptance_rate: samples.acceptance_rate,
            step_size: samples.step_size,
        };
        write_chain(&chain_path, &samples, &meta)?;
        let summary = ChainSummary::new(&samples.names, &samples.data, samples.acceptance_rate, cfg.summary.max_lag);
        let mut text = String::new();
        let _ = writeln!(text, "chain {} ({}), sampler {}, seed {}", k + 1, chain_path.display(), meta.sampler, cfg.seed);
        if let Some(eps) = samples.step_size {
            let _ = writeln!(text, "step size after burn-in: {eps:.6}");
        }
        text.push_str(&summary.render());
        write_text(&with_suffix(&stem, ".summary.txt"), &text)?;
        report.push_str(&text);
        report.push('\n');
    }
    Ok(report)
}

fn render_fit(cfg: &RunConfig, fit: &FitResult<f64>) -> String {
    let mut out = String::new();
    let method = match cfg.fit.method {
        FitMethod::Mcem => "mcem",
        FitMethod::Mcml => "mcml",
    };
    let _ = writeln!(out, "method: {method}");
    let _ = writeln!(out, "iterations: {}", fit.iterations);
    let _ = writeln!(out, "converged: {}", fit.converged);
    let _ = writeln!(out, "objective: {}", fit.objective);
    if let Some(e) = fit.importance_ess {
        let _ = writeln!(out, "importance ESS: {e:.1}");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<12} {:>14}", "parameter", "estimate");
    for (k, b) in fit.beta.iter().enumerate() {
        let _ = writeln!(out, "{:<12} {:>14.6}", format!("beta.{k}"), b);
    }
    for (k, l) in fit.lambda.iter().enumerate() {
        let _ = writeln!(out, "{:<12} {:>14.6}", format!("lambda.{}", k + 1), l);
    }
    for w in &fit.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

/// Fits `(β, λ)` by MCEM or MCML; writes `<out>.estimates.csv` and
/// `<out>.trajectory.csv`.
pub fn cmd_fit(cfg: &RunConfig, data_path: &Path, out: &Path) -> Result<String> {
    let (_, model, _) = load_data(data_path, cfg)?;
    let fit_cfg = cfg.fit_config(&model)?;
    let beta0 = cfg.init_beta(model.n_fixed())?;
    let lambda0 = cfg.init_lambda(model.blocks().len())?;
    let mut rng = RngStream::new(cfg.seed);
    let fit = match cfg.fit.method {
        FitMethod::Mcem => mcem_fit(&mut rng, &model, &beta0, &lambda0, &fit_cfg)?,
        FitMethod::Mcml => mcml_fit(&mut rng, &model, &beta0, &lambda0, &fit_cfg)?,
    };

    let names: Vec<String> = (0..model.n_fixed())
        .map(|k| format!("beta.{k}"))
        .chain((1..=model.blocks().len()).map(|k| format!("lambda.{k}")))
        .collect();
    let mut est = String::from("parameter,estimate\n");
    for (n, v) in names.iter().zip(fit.beta.iter().chain(fit.lambda.iter())) {
        let _ = writeln!(est, "{n},{v}");
    }
    write_text(&with_suffix(out, ".estimates.csv"), &est)?;
    let mut traj = format!("iteration,{}\n", names.join(","));
    for (i, row) in fit.trajectory.iter().enumerate() {
        let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(traj, "{i},{}", vals.join(","));
    }
    write_text(&with_suffix(out, ".trajectory.csv"), &traj)?;
    Ok(render_fit(cfg, &fit))
}

/// Re-renders the tables of a stored chain. With a configuration, its hash
/// must match the one recorded when the chain was written.
pub fn cmd_summary(chain_path: &Path, cfg: Option<&RunConfig>, max_lag: usize) -> Result<String> {
    let (names, data, meta) = read_chain(chain_path)?;
    if let (Some(cfg), Some(meta)) = (cfg, &meta) {
        let h = cfg.hash();
        if h != meta.config_hash {
            return Err(Error::Config(format!(
                "configuration differs from the one that produced '{}' (hash {} vs {})",
                chain_path.display(),
                h,
                meta.config_hash
            )));
        }
    }
    if cfg.is_some() && meta.is_none() {
        return Err(Error::Config(format!(
            "'{}' has no metadata to check the configuration against",
            chain_path.display()
        )));
    }
    if max_lag == 0 {
        return Err(Error::Config("--max-lag must be at least 1".into()));
    }
    let acceptance = meta.as_ref().and_then(|m| m.acceptance_rate);
    let summary = ChainSummary::new(&names, &data, acceptance, max_lag);
    let mut text = String::new();
    let _ = writeln!(text, "chain {}", chain_path.display());
    if let Some(m) = &meta {
        let _ = writeln!(text, "sampler {}, seed {}, burn-in {}, thin {}", m.sampler, m.seed, m.burn_in, m.thin);
    }
    text.push_str(&summary.render());
    Ok(text)
}
