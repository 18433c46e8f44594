//! Command implementations.  Each command derives all randomness from the
//! configured master seed, writes its artifacts under the output directory,
//! and finishes with a manifest echoing the merged configuration.

use crate::artifacts::{
    ensure_dir, read_chain_csv, thresholds_json, write_manifest, write_pilot_csv,
    write_regression_json,
};
use crate::config::{Algorithm, Config, ModelKind, TruncationTarget};
use anyhow::{bail, Context, Result};
use rspp::abc::{
    default_lambda_grid, epsilon_from_percentile, fit_semi_automatic, pilot_distances, pilot_run,
    run_abc_csg, run_abc_fp, run_abc_sg, AbcContext, AbcThreshold, PilotTable, RegressionModel,
    ZetaMode,
};
use rspp::diagnostics::{export_density, summarize, write_density_csv, PosteriorSummary};
use rspp::dppg::{dppg_log_fhat, sample_dppg, DppgParams, TruncationCache};
use rspp::geometry::{fmt_f64, read_pattern, write_pattern, PointPattern};
use rspp::mcmc::{
    run_exchange, run_mh, run_noisy_mh, run_noisy_mh_approx, write_chain_csv, ApproxDppgAuxModel,
    AuxModel, BoundedUniformProposal, BoxPrior, Chain, ChainConfig, DppgAuxModel, StraussAuxModel,
};
use rspp::runtime::{purpose, StreamFamily, WorkerPool};
use rspp::strauss::{
    default_radius_grid, fit_pseudolikelihood, profile_radius, sample_strauss_perfect,
    StraussParams,
};
use serde_json::json;
use std::collections::HashSet;
use std::path::{Path, PathBuf};

/// Draws one pattern from the configured model and writes it as CSV.
pub fn cmd_simulate(config: &Config) -> Result<PathBuf> {
    let out = config.out_dir();
    ensure_dir(&out)?;
    let window = config.window()?;
    let family = StreamFamily::new(config.run.seed);
    let mut rng = family.stream(&[purpose::SIMULATE, 0]);
    let (pattern, params_echo) = match config.run.model {
        ModelKind::Strauss => {
            let s = &config.strauss;
            let params = StraussParams::new(s.beta, s.gamma, s.r)?;
            let pattern = sample_strauss_perfect(&params, &window, &mut rng)?;
            (pattern, json!({"beta": s.beta, "gamma": s.gamma, "r": s.r}))
        }
        ModelKind::Dppg => {
            let d = &config.dppg;
            let params = DppgParams::new(d.tau, d.sigma)?;
            let pattern = sample_dppg(&params, &window, &mut rng)?;
            (pattern, json!({"tau": d.tau, "sigma": d.sigma}))
        }
    };
    let path = out.join("pattern.csv");
    write_pattern(&pattern, &path)?;
    write_manifest(
        &out,
        "simulate",
        config,
        &[("pattern".into(), path.display().to_string())],
        json!({
            "model": config.run.model,
            "params": params_echo,
            "n": pattern.len(),
        }),
    )?;
    println!(
        "simulated {} pattern: n={} -> {}",
        model_name(config.run.model),
        pattern.len(),
        path.display()
    );
    Ok(path)
}

/// Profile pseudo-likelihood estimation of the interaction radius, plus the
/// pseudo-likelihood fit of (beta, gamma) at the estimate.
pub fn cmd_estimate_radius(
    config: &Config,
    pattern_path: &Path,
) -> Result<rspp::strauss::PseudoLikelihoodFit> {
    let out = config.out_dir();
    ensure_dir(&out)?;
    let pattern = read_pattern(pattern_path)?;
    let grid = match config.explicit_radius_grid()? {
        Some(grid) => grid,
        None => default_radius_grid(&pattern)?,
    };
    let (r_hat, curve) = profile_radius(&pattern, &grid)?;
    let fit = fit_pseudolikelihood(&pattern, r_hat)?;
    let profile_path = out.join("profile.csv");
    let mut text = String::from("r,log_pl\n");
    for (r, log_pl) in &curve {
        text.push_str(&format!("{},{}\n", fmt_f64(*r), fmt_f64(*log_pl)));
    }
    std::fs::write(&profile_path, text)
        .with_context(|| format!("writing {}", profile_path.display()))?;
    write_manifest(
        &out,
        "estimate-radius",
        config,
        &[("profile".into(), profile_path.display().to_string())],
        json!({
            "pattern": pattern_path.display().to_string(),
            "n": pattern.len(),
            "grid_len": grid.len(),
            "r_hat": r_hat,
            "beta_hat": fit.beta_hat,
            "gamma_hat": fit.gamma_hat,
            "log_pl": fit.log_pl,
        }),
    )?;
    println!(
        "r_hat={} (profile over {} radii), beta_hat={:.4}, gamma_hat={:.4} -> {}",
        fmt_f64(r_hat),
        grid.len(),
        fit.beta_hat,
        fit.gamma_hat,
        profile_path.display()
    );
    Ok(fit)
}

fn model_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::Strauss => "strauss",
        ModelKind::Dppg => "dppg",
    }
}

/// The truncation-target argument the determinantal auxiliary models take:
/// `None` targets the model intensity, `Some(n)` the observed count.
fn dppg_observed_arg(config: &Config, observed: &PointPattern) -> Option<usize> {
    match config.dppg.truncation_target {
        TruncationTarget::Intensity => None,
        TruncationTarget::ObservedCount => Some(observed.len()),
    }
}

fn build_prior(config: &Config) -> Result<BoxPrior> {
    let (lower, upper) = config.prior_bounds();
    Ok(BoxPrior::new(lower, upper)?)
}

/// Pilot simulations, summary regression, and the distance thresholds for
/// every requested percentile.
fn pilot_pipeline<M: AuxModel>(
    config: &Config,
    model: &M,
    prior: &BoxPrior,
    observed: &PointPattern,
    radii: &[f64],
    pool: &WorkerPool,
    family: &StreamFamily,
) -> Result<(PilotTable, RegressionModel, Vec<AbcThreshold>)> {
    let pilot = pilot_run(
        config.run.pilot_rows,
        prior,
        model,
        observed,
        radii,
        pool,
        family,
    )?;
    let lambda_grid = default_lambda_grid(&pilot)?;
    let regression = fit_semi_automatic(&pilot, config.run.folds, &lambda_grid)?;
    let distances = pilot_distances(&pilot, &regression);
    let thresholds = config
        .percentiles()
        .iter()
        .map(|p| epsilon_from_percentile(&distances, *p))
        .collect::<rspp::Result<Vec<_>>>()?;
    Ok((pilot, regression, thresholds))
}

/// Runs the pilot pipeline standalone and writes its three artifacts.
pub fn cmd_pilot(config: &Config) -> Result<Vec<AbcThreshold>> {
    let out = config.out_dir();
    ensure_dir(&out)?;
    let observed = read_pattern(config.observed_path()?)?;
    let radii = config.summary_radii();
    let prior = build_prior(config)?;
    let pool = WorkerPool::new(config.run.workers)?;
    let family = StreamFamily::new(config.run.seed);
    let (pilot, regression, thresholds) = match config.run.model {
        ModelKind::Strauss => {
            let model = StraussAuxModel::new(config.strauss.r, *observed.window())?;
            pilot_pipeline(config, &model, &prior, &observed, &radii, &pool, &family)?
        }
        ModelKind::Dppg => {
            let model =
                DppgAuxModel::new(*observed.window(), dppg_observed_arg(config, &observed))?;
            pilot_pipeline(config, &model, &prior, &observed, &radii, &pool, &family)?
        }
    };
    let pilot_path = out.join("pilot.csv");
    write_pilot_csv(&pilot_path, &pilot, &config.param_names())?;
    let regression_path = out.join("regression.json");
    write_regression_json(&regression_path, &regression)?;
    let thresholds_path = out.join("thresholds.json");
    std::fs::write(
        &thresholds_path,
        serde_json::to_string_pretty(&thresholds_json(&thresholds))?,
    )
    .with_context(|| format!("writing {}", thresholds_path.display()))?;
    write_manifest(
        &out,
        "pilot",
        config,
        &[
            ("pilot".into(), pilot_path.display().to_string()),
            ("regression".into(), regression_path.display().to_string()),
            ("thresholds".into(), thresholds_path.display().to_string()),
        ],
        json!({
            "model": config.run.model,
            "n_observed": observed.len(),
            "radii": radii,
            "pilot_rows": pilot.len(),
            "pilot_resamples": pilot.resamples,
            "folds": config.run.folds,
            "lambda": regression.lambda,
            "thresholds": thresholds_json(&thresholds),
        }),
    )?;
    for t in &thresholds {
        println!("p={}% -> epsilon={}", t.p, fmt_f64(t.epsilon));
    }
    println!(
        "pilot: {} rows ({} resamples), lambda={} -> {}",
        pilot.len(),
        pilot.resamples,
        fmt_f64(regression.lambda),
        pilot_path.display()
    );
    Ok(thresholds)
}

/// Algorithms that only need the auxiliary-model interface, shared between
/// the two models.
#[allow(clippy::too_many_arguments)]
fn dispatch_aux<M: AuxModel>(
    config: &Config,
    algorithm: Algorithm,
    model: &M,
    observed: &PointPattern,
    proposal: &BoundedUniformProposal,
    prior: &BoxPrior,
    chain_config: &ChainConfig,
    family: &StreamFamily,
    pool: &WorkerPool,
) -> Result<(Chain, serde_json::Value)> {
    match algorithm {
        Algorithm::Exchange => {
            let chain = run_exchange(observed, model, proposal, prior, chain_config, family)?;
            Ok((chain, json!({})))
        }
        Algorithm::NoisyMh => {
            let chain = run_noisy_mh(
                observed,
                model,
                config.run.k,
                proposal,
                prior,
                chain_config,
                family,
                pool,
            )?;
            Ok((chain, json!({"k": config.run.k})))
        }
        Algorithm::AbcFp | Algorithm::AbcCsg | Algorithm::AbcSgTestonly => {
            let radii = config.summary_radii();
            let (pilot, regression, thresholds) =
                pilot_pipeline(config, model, prior, observed, &radii, pool, family)?;
            let threshold = thresholds
                .iter()
                .find(|t| t.p == config.run.p)
                .expect("requested percentile is always in the list");
            let ctx = AbcContext::new(model, &regression, observed, &radii, threshold.epsilon)?;
            let i = config.run.workers;
            let mut extra = json!({
                "p": config.run.p,
                "epsilon": threshold.epsilon,
                "pilot_rows": pilot.len(),
                "pilot_resamples": pilot.resamples,
                "lambda": regression.lambda,
            });
            let chain = match algorithm {
                Algorithm::AbcFp => run_abc_fp(&ctx, proposal, prior, chain_config, family)?,
                Algorithm::AbcCsg => {
                    extra["i"] = json!(i);
                    extra["j_theta"] = json!(config.run.j_theta);
                    extra["j_x"] = json!(config.run.j_x);
                    run_abc_csg(
                        &ctx,
                        proposal,
                        prior,
                        i,
                        config.run.j_theta,
                        config.run.j_x,
                        ZetaMode::Estimate,
                        chain_config,
                        family,
                        pool,
                    )?
                }
                _ => {
                    extra["i"] = json!(i);
                    run_abc_sg(&ctx, proposal, prior, i, chain_config, family, pool)?
                }
            };
            Ok((chain, extra))
        }
        Algorithm::Mh | Algorithm::ExchangeApprox | Algorithm::NoisyMhApprox => {
            bail!(
                "algorithm {} is dispatched through the determinantal likelihood",
                algorithm.id()
            )
        }
    }
}

/// Runs the configured posterior sampler and writes the chain CSV.
pub fn cmd_infer(config: &Config) -> Result<PathBuf> {
    let out = config.out_dir();
    ensure_dir(&out)?;
    let observed = read_pattern(config.observed_path()?)?;
    let window = *observed.window();
    let family = StreamFamily::new(config.run.seed);
    let pool = WorkerPool::new(config.run.workers)?;
    let prior = build_prior(config)?;
    let proposal =
        BoundedUniformProposal::new(config.proposal_widths(), config.component_bounds())?;
    let chain_config = ChainConfig {
        iterations: config.run.iterations,
        burn_in: config.run.burn_in,
        theta0: config.theta0(),
    };
    let algorithm = config.run.algorithm;

    let (chain, extra) = match (config.run.model, algorithm) {
        (ModelKind::Strauss, _) => {
            let model = StraussAuxModel::new(config.strauss.r, window)?;
            dispatch_aux(
                config,
                algorithm,
                &model,
                &observed,
                &proposal,
                &prior,
                &chain_config,
                &family,
                &pool,
            )?
        }
        (ModelKind::Dppg, Algorithm::Mh) => {
            let cache = TruncationCache::new();
            let target_kind = config.dppg.truncation_target;
            let n_observed = observed.len();
            let target = |theta: &[f64]| -> rspp::Result<f64> {
                // Parameters the proposal clipped into the box may still sit
                // outside the existence region; score them as impossible.
                let params = match DppgParams::new(theta[0], theta[1]) {
                    Ok(p) => p,
                    Err(_) => return Ok(f64::NEG_INFINITY),
                };
                let truncation = match target_kind {
                    TruncationTarget::Intensity => cache.intensity(&params, &window)?,
                    TruncationTarget::ObservedCount => {
                        cache.observed_count(&params, &window, n_observed)?
                    }
                };
                dppg_log_fhat(&observed, &truncation)
            };
            let chain = run_mh(target, &proposal, &prior, &chain_config, &family)?;
            (chain, json!({"truncation_target": config.dppg.truncation_target}))
        }
        (ModelKind::Dppg, Algorithm::ExchangeApprox) => {
            let model = ApproxDppgAuxModel::new(window, dppg_observed_arg(config, &observed))?;
            let chain = run_exchange(&observed, &model, &proposal, &prior, &chain_config, &family)?;
            (chain, json!({}))
        }
        (ModelKind::Dppg, Algorithm::NoisyMhApprox) => {
            let model = ApproxDppgAuxModel::new(window, dppg_observed_arg(config, &observed))?;
            let chain = run_noisy_mh_approx(
                &observed,
                &model,
                config.run.k,
                &proposal,
                &prior,
                &chain_config,
                &family,
                &pool,
            )?;
            (chain, json!({"k": config.run.k}))
        }
        (ModelKind::Dppg, _) => {
            let model = DppgAuxModel::new(window, dppg_observed_arg(config, &observed))?;
            dispatch_aux(
                config,
                algorithm,
                &model,
                &observed,
                &proposal,
                &prior,
                &chain_config,
                &family,
                &pool,
            )?
        }
    };

    let chain_path = out.join("chain.csv");
    let mut buf = Vec::new();
    write_chain_csv(&mut buf, &chain, &config.param_names())?;
    std::fs::write(&chain_path, &buf)
        .with_context(|| format!("writing {}", chain_path.display()))?;

    let mut details = json!({
        "algorithm": algorithm.id(),
        "model": config.run.model,
        "iterations": config.run.iterations,
        "burn_in": config.run.burn_in,
        "n_observed": observed.len(),
        "acceptance_rate": chain.acceptance_rate(config.run.burn_in),
    });
    if let (Some(d), Some(e)) = (details.as_object_mut(), extra.as_object()) {
        for (k, v) in e {
            d.insert(k.clone(), v.clone());
        }
    }
    write_manifest(
        &out,
        "infer",
        config,
        &[("chain".into(), chain_path.display().to_string())],
        details,
    )?;
    println!(
        "{}: {} iterations, acceptance {:.3} -> {}",
        algorithm.id(),
        chain.len(),
        chain.acceptance_rate(config.run.burn_in),
        chain_path.display()
    );
    Ok(chain_path)
}

fn trim_chain(chain: &Chain, burn_in: usize) -> Result<Chain> {
    if burn_in >= chain.len() {
        bail!(
            "burn-in {} leaves nothing of a {}-iteration chain",
            burn_in,
            chain.len()
        );
    }
    Ok(Chain {
        draws: chain.draws[burn_in..].to_vec(),
        accept_flags: chain.accept_flags[burn_in..].to_vec(),
        elapsed_ns: chain.elapsed_ns[burn_in..].to_vec(),
        aux_draws: chain.aux_draws[burn_in..].to_vec(),
        master_seed: chain.master_seed,
    })
}

/// One chain's summary in the table shape: per-parameter E/sd/|Bias| plus
/// chain-level Time and averaged-ESS throughput columns.
fn summary_entry(
    label: &str,
    path: &Path,
    burn_in: usize,
    names: &[String],
    summary: &PosteriorSummary,
    acceptance: f64,
) -> serde_json::Value {
    let mut params = serde_json::Map::new();
    for (i, name) in names.iter().enumerate() {
        let mut entry = json!({
            "E": summary.mean[i],
            "sd": summary.sd[i],
            "ESS": summary.ess[i],
        });
        if let Some(bias) = &summary.abs_bias {
            entry["|Bias|"] = json!(bias[i]);
        }
        params.insert(name.clone(), entry);
    }
    json!({
        "chain": label,
        "file": path.display().to_string(),
        "burn_in": burn_in,
        "kept_iterations": summary.kept_iterations,
        "acceptance_rate": acceptance,
        "Time": summary.seconds,
        "parameters": params,
        "ESS(Ave)": summary.ess_average(),
        "ESS(Ave)/s": summary.ess_average_per_sec(),
        "ESS(Ave)/t": summary.ess_average_per_iter(),
    })
}

/// Shared diagnosis: summaries (optionally against a reference chain) plus
/// density exports for every chain and parameter.  Burn-in is chosen per
/// chain so ground-truth and candidate runs of different lengths mix.
pub fn diagnose_chains(
    config: &Config,
    out: &Path,
    chains: &[(PathBuf, usize)],
    reference: Option<(&Path, usize)>,
) -> Result<PathBuf> {
    if chains.is_empty() {
        bail!("diagnose needs at least one chain file");
    }
    ensure_dir(out)?;
    let mut names: Option<Vec<String>> = None;
    let mut check_names = |path: &Path, found: Vec<String>| -> Result<Vec<String>> {
        match &names {
            None => {
                names = Some(found.clone());
                Ok(found)
            }
            Some(expected) if *expected == found => Ok(found),
            Some(expected) => bail!(
                "chain {} has parameters [{}], expected [{}]",
                path.display(),
                found.join(", "),
                expected.join(", ")
            ),
        }
    };

    let reference_read = match reference {
        None => None,
        Some((path, burn)) => {
            let (found, chain) = read_chain_csv(path)?;
            let found = check_names(path, found)?;
            Some((path.to_path_buf(), burn, found, chain))
        }
    };

    let mut outputs: Vec<(String, String)> = Vec::new();
    let mut used_stems: HashSet<String> = HashSet::new();
    let mut stem_for = |path: &Path| -> String {
        // Chains are conventionally named chain.csv, so the parent
        // directory usually carries the run's identity.
        let mut base = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "chain".into());
        if base == "chain" {
            if let Some(parent) = path.parent().and_then(|p| p.file_name()) {
                base = parent.to_string_lossy().into_owned();
            }
        }
        let mut stem = base.clone();
        let mut k = 1;
        while !used_stems.insert(stem.clone()) {
            stem = format!("{base}_{k}");
            k += 1;
        }
        stem
    };

    let mut entries = Vec::new();
    let mut densities: Vec<(String, PathBuf, Chain, Vec<String>, usize)> = Vec::new();
    for (path, burn) in chains {
        let (found, chain) = read_chain_csv(path)?;
        let found = check_names(path, found)?;
        let reference_arg = reference_read
            .as_ref()
            .map(|(_, ref_burn, _, ref_chain)| (ref_chain, *ref_burn));
        let summary = summarize(&chain, *burn, reference_arg)
            .with_context(|| format!("summarizing {}", path.display()))?;
        let stem = stem_for(path);
        entries.push(summary_entry(
            &stem,
            path,
            *burn,
            &found,
            &summary,
            chain.acceptance_rate(*burn),
        ));
        densities.push((stem, path.clone(), chain, found, *burn));
    }

    let reference_entry = match &reference_read {
        None => serde_json::Value::Null,
        Some((path, burn, found, chain)) => {
            let summary = summarize(chain, *burn, None)
                .with_context(|| format!("summarizing reference {}", path.display()))?;
            let stem = stem_for(path);
            let entry = summary_entry(
                &stem,
                path,
                *burn,
                found,
                &summary,
                chain.acceptance_rate(*burn),
            );
            densities.push((stem, path.clone(), chain.clone(), found.clone(), *burn));
            entry
        }
    };

    for (stem, path, chain, found, burn) in &densities {
        let kept = trim_chain(chain, *burn)?;
        for (idx, name) in found.iter().enumerate() {
            let density = export_density(&kept, idx, config.run.density_bins)
                .with_context(|| format!("density of {} in {}", name, path.display()))?;
            let density_path = out.join(format!("density_{stem}_{name}.csv"));
            let mut buf = Vec::new();
            write_density_csv(&mut buf, &density)?;
            std::fs::write(&density_path, &buf)
                .with_context(|| format!("writing {}", density_path.display()))?;
            outputs.push((
                format!("density_{stem}_{name}"),
                density_path.display().to_string(),
            ));
        }
    }

    let report = json!({
        "parameters": names.expect("at least one chain"),
        "chains": entries,
        "reference": reference_entry,
    });
    let summary_path = out.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", summary_path.display()))?;
    outputs.insert(0, ("summary".into(), summary_path.display().to_string()));
    write_manifest(out, "diagnose", config, &outputs, report.clone())?;

    for entry in report["chains"].as_array().into_iter().flatten() {
        println!(
            "{}: Time={:.2}s ESS(Ave)={:.1} ESS(Ave)/s={:.2}",
            entry["chain"].as_str().unwrap_or("?"),
            entry["Time"].as_f64().unwrap_or(f64::NAN),
            entry["ESS(Ave)"].as_f64().unwrap_or(f64::NAN),
            entry["ESS(Ave)/s"].as_f64().unwrap_or(f64::NAN),
        );
    }
    println!("diagnosis -> {}", summary_path.display());
    Ok(summary_path)
}

/// Diagnose chains with a uniform candidate burn-in from the command line.
pub fn cmd_diagnose(
    config: &Config,
    chains: &[PathBuf],
    reference: Option<&Path>,
    burn_in: Option<usize>,
    reference_burn_in: Option<usize>,
) -> Result<PathBuf> {
    let burn = burn_in.unwrap_or(config.run.burn_in);
    let ref_burn = reference_burn_in.unwrap_or(burn);
    let list: Vec<(PathBuf, usize)> = chains.iter().map(|p| (p.clone(), burn)).collect();
    diagnose_chains(
        config,
        &config.out_dir(),
        &list,
        reference.map(|p| (p, ref_burn)),
    )
}
