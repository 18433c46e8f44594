//! Approximate Bayesian computation for the repulsive point-process models:
//! pilot simulation, the semi-automatic regression summary (lasso on pilot
//! data), the standardized quadratic distance, threshold selection, and three
//! ABC-MCMC kernels — the single-simulation accept/stay kernel, the
//! repeat-until-hit kernel with its acceptance-probability correction
//! estimated by Monte Carlo, and the uncorrected repeat kernel kept only to
//! demonstrate its bias.
//!
//! Stream discipline mirrors the exchange kernels: proposals and the accept
//! draw come from `[STEP, t]`, the single-simulation kernel simulates from
//! `[AUX, t, 0]`, repeat trials from `[REPEAT, t, trial]`, and the correction
//! estimates from the four dedicated neighbourhood stream tags, so every
//! kernel is replayable and schedule-independent.

use crate::error::{Error, Result};
use crate::geometry::{ripley_k_hat, PointPattern};
use crate::mcmc::{AuxModel, BoundedUniformProposal, BoxPrior, Chain, ChainConfig};
use crate::runtime::{draw, purpose, StreamFamily, WorkerPool};
use std::time::Instant;

/// Attempt budget per pilot row before the run aborts.
pub const PILOT_RESAMPLE_CAP: u64 = 1_000;
/// Batch budget for the repeat-until-hit proposal loop.
pub const REPEAT_BATCH_CAP: u64 = 10_000;
/// Sweep budget for the lasso coordinate descent.
const LASSO_MAX_SWEEPS: usize = 100_000;
/// Convergence tolerance on standardized coefficients.
const LASSO_TOL: f64 = 1e-10;

/// The K-function radii used by the determinantal summaries: ten equally
/// spaced values over [0.01, 0.1].
pub fn dppg_summary_radii() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 100.0).collect()
}

/// Raw summary vector between a simulation `x` and the observation:
/// `(log n(x) - log n(obs), (sqrt K_r(x) - sqrt K_r(obs))^2 per radius)`.
/// The repulsion model uses a single radius (the fitted interaction radius);
/// the determinantal model uses [`dppg_summary_radii`].
pub fn summary_eta(x: &PointPattern, observed: &PointPattern, radii: &[f64]) -> Result<Vec<f64>> {
    if radii.is_empty() {
        return Err(Error::InvalidConfig(
            "summary requires at least one K-function radius".into(),
        ));
    }
    if x.window() != observed.window() {
        return Err(Error::InvalidPattern(
            "summary requires simulation and observation on the same window".into(),
        ));
    }
    if x.is_empty() || observed.is_empty() {
        return Err(Error::InvalidPattern(
            "summary requires non-empty patterns".into(),
        ));
    }
    let mut eta = Vec::with_capacity(1 + radii.len());
    eta.push((x.len() as f64).ln() - (observed.len() as f64).ln());
    for &r in radii {
        let diff = ripley_k_hat(x, r)?.sqrt() - ripley_k_hat(observed, r)?.sqrt();
        eta.push(diff * diff);
    }
    if eta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("summary component"));
    }
    Ok(eta)
}

/// Pilot-run design: row `l` holds the log-parameters drawn from the prior
/// and the summary of a simulation at those parameters.
#[derive(Clone, Debug)]
pub struct PilotTable {
    pub log_theta: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    /// Total extra attempts spent replacing degenerate rows.
    pub resamples: u64,
}

impl PilotTable {
    pub fn len(&self) -> usize {
        self.log_theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_theta.is_empty()
    }

    pub fn param_dim(&self) -> usize {
        self.log_theta.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn summary_dim(&self) -> usize {
        self.eta.first().map(|r| r.len()).unwrap_or(0)
    }
}

/// Simulates the pilot design: `rows` draws from the prior, each paired with
/// the summary of one simulation.  Rows whose parameter draw is infeasible
/// (outside the model's existence region or with a non-positive component,
/// which has no log) or whose simulation has fewer than two points (no K
/// estimate) are redrawn from the next attempt stream; the redraw total is
/// reported.  Rows fan out on the pool; row `l`, attempt `a` consumes only
/// the stream `[PILOT, l, a]`, so the table is schedule-independent.
pub fn pilot_run<M: AuxModel>(
    rows: usize,
    prior: &BoxPrior,
    model: &M,
    observed: &PointPattern,
    radii: &[f64],
    pool: &WorkerPool,
    family: &StreamFamily,
) -> Result<PilotTable> {
    if rows < 50 {
        return Err(Error::InvalidConfig(format!(
            "pilot run requires at least 50 rows, got {rows}"
        )));
    }
    if prior.dim() != model.dim() {
        return Err(Error::InvalidConfig(
            "prior and model dimensions differ".into(),
        ));
    }
    // Validates the observation and radii once up front.
    summary_eta(observed, observed, radii)?;
    let rows_out = pool.map_parallel((0..rows as u64).collect(), |_, row| {
        for attempt in 0..PILOT_RESAMPLE_CAP {
            let mut rng = family.stream(&[purpose::PILOT, row, attempt]);
            let theta = prior.sample(&mut rng);
            if !model.validate(&theta) || theta.iter().any(|v| *v <= 0.0) {
                continue;
            }
            let x = model.sample(&theta, &mut rng)?;
            if x.len() < 2 {
                continue;
            }
            let eta = summary_eta(&x, observed, radii)?;
            let log_theta: Vec<f64> = theta.iter().map(|v| v.ln()).collect();
            return Ok((log_theta, eta, attempt));
        }
        Err(Error::ResampleCap {
            row: row as usize,
            cap: PILOT_RESAMPLE_CAP,
        })
    })?;
    let mut log_theta = Vec::with_capacity(rows);
    let mut eta = Vec::with_capacity(rows);
    let mut resamples = 0;
    for (lt, e, attempts) in rows_out {
        log_theta.push(lt);
        eta.push(e);
        resamples += attempts;
    }
    Ok(PilotTable {
        log_theta,
        eta,
        resamples,
    })
}

/// Affine regression summary fitted on the pilot: the conditional-mean
/// estimate `theta_hat = a_hat + B_hat eta` of the log-parameters, plus the
/// per-parameter sample variance of the fitted predictions used to
/// standardize the distance.
#[derive(Clone, Debug)]
pub struct RegressionModel {
    pub a_hat: Vec<f64>,
    /// One coefficient row per parameter (parameters x summaries).
    pub b_hat: Vec<Vec<f64>>,
    pub var_hat: Vec<f64>,
    pub lambda: f64,
}

impl RegressionModel {
    pub fn param_dim(&self) -> usize {
        self.a_hat.len()
    }

    pub fn summary_dim(&self) -> usize {
        self.b_hat.first().map(|r| r.len()).unwrap_or(0)
    }

    /// `a_hat + B_hat eta` — the predicted log-parameters.
    pub fn predict(&self, eta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(eta.len(), self.summary_dim());
        self.a_hat
            .iter()
            .zip(&self.b_hat)
            .map(|(a, row)| a + row.iter().zip(eta).map(|(c, e)| c * e).sum::<f64>())
            .collect()
    }
}

/// Per-response coefficients on the original scale.
#[derive(Clone, Debug)]
pub(crate) struct AffineFit {
    pub intercept: Vec<f64>,
    pub coef: Vec<Vec<f64>>,
}

struct Standardized {
    /// Column-major standardized design restricted to the selected rows.
    cols: Vec<Vec<f64>>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

fn standardize(pilot: &PilotTable, rows: &[usize]) -> Result<Standardized> {
    let n = rows.len();
    let s = pilot.summary_dim();
    let mut cols = vec![vec![0.0; n]; s];
    for (i, &row) in rows.iter().enumerate() {
        for j in 0..s {
            cols[j][i] = pilot.eta[row][j];
        }
    }
    let mut mean = vec![0.0; s];
    let mut scale = vec![0.0; s];
    for j in 0..s {
        let mu = cols[j].iter().sum::<f64>() / n as f64;
        let var = cols[j].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
        if !(var > 0.0) {
            return Err(Error::SingularDesign(format!(
                "summary column {j} has zero variance over the pilot"
            )));
        }
        let sd = var.sqrt();
        for v in cols[j].iter_mut() {
            *v = (*v - mu) / sd;
        }
        mean[j] = mu;
        scale[j] = sd;
    }
    Ok(Standardized { cols, mean, scale })
}

fn soft_threshold(value: f64, lambda: f64) -> f64 {
    if value > lambda {
        value - lambda
    } else if value < -lambda {
        value + lambda
    } else {
        0.0
    }
}

/// Cyclic coordinate descent for one response on standardized columns
/// (each with unit second moment), minimizing
/// `(1/2n) ||y - X beta||^2 + lambda ||beta||_1`.
fn coordinate_descent(cols: &[Vec<f64>], yc: &[f64], lambda: f64, beta: &mut [f64]) -> Result<()> {
    let n = yc.len() as f64;
    let mut resid: Vec<f64> = yc.to_vec();
    for (j, col) in cols.iter().enumerate() {
        if beta[j] != 0.0 {
            for (r, x) in resid.iter_mut().zip(col) {
                *r -= beta[j] * x;
            }
        }
    }
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_delta = 0.0_f64;
        for (j, col) in cols.iter().enumerate() {
            let old = beta[j];
            let rho = col.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / n + old;
            let new = soft_threshold(rho, lambda);
            if new != old {
                let shift = old - new;
                for (r, x) in resid.iter_mut().zip(col) {
                    *r += shift * x;
                }
                beta[j] = new;
                max_delta = max_delta.max((new - old).abs());
            }
        }
        if max_delta <= LASSO_TOL {
            return Ok(());
        }
    }
    Err(Error::NonConvergence(
        "lasso coordinate descent exhausted its sweep budget".into(),
    ))
}

/// Fits all responses at every penalty in `lambdas` (descending, warm-started)
/// on the pilot rows `rows`; coefficients are returned on the original scale.
pub(crate) fn fit_at_lambdas(
    pilot: &PilotTable,
    rows: &[usize],
    lambdas: &[f64],
) -> Result<Vec<AffineFit>> {
    let d = pilot.param_dim();
    let std = standardize(pilot, rows)?;
    let n = rows.len();
    let mut fits: Vec<AffineFit> = lambdas
        .iter()
        .map(|_| AffineFit {
            intercept: vec![0.0; d],
            coef: vec![Vec::new(); d],
        })
        .collect();
    for r in 0..d {
        let y: Vec<f64> = rows.iter().map(|&i| pilot.log_theta[i][r]).collect();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
        let mut beta = vec![0.0; pilot.summary_dim()];
        for (li, &lambda) in lambdas.iter().enumerate() {
            coordinate_descent(&std.cols, &yc, lambda, &mut beta)?;
            let coef: Vec<f64> = beta
                .iter()
                .zip(&std.scale)
                .map(|(b, s)| b / s)
                .collect();
            let intercept =
                y_mean - coef.iter().zip(&std.mean).map(|(c, m)| c * m).sum::<f64>();
            fits[li].intercept[r] = intercept;
            fits[li].coef[r] = coef;
        }
    }
    Ok(fits)
}

/// Ridge of candidate penalties for [`fit_semi_automatic`]: 100 values
/// descending geometrically from the smallest all-zero penalty to 1e-4 of it.
pub fn default_lambda_grid(pilot: &PilotTable) -> Result<Vec<f64>> {
    let rows: Vec<usize> = (0..pilot.len()).collect();
    let std = standardize(pilot, &rows)?;
    let n = pilot.len() as f64;
    let mut lambda_max = 0.0_f64;
    for r in 0..pilot.param_dim() {
        let y: Vec<f64> = pilot.log_theta.iter().map(|row| row[r]).collect();
        let y_mean = y.iter().sum::<f64>() / n;
        for col in &std.cols {
            let dot = col
                .iter()
                .zip(&y)
                .map(|(x, v)| x * (v - y_mean))
                .sum::<f64>()
                / n;
            lambda_max = lambda_max.max(dot.abs());
        }
    }
    if !(lambda_max > 0.0) {
        return Err(Error::SingularDesign(
            "all summaries are uncorrelated with the responses".into(),
        ));
    }
    let count = 100;
    let ratio = 1e-4_f64;
    Ok((0..count)
        .map(|i| lambda_max * ratio.powf(i as f64 / (count - 1) as f64))
        .collect())
}

/// Fits the semi-automatic summary: a multi-response lasso of the pilot
/// log-parameters on standardized summaries, with one penalty shared across
/// responses chosen by k-fold cross-validation (fold of row `i` is
/// `i % folds`) minimizing the summed squared prediction error; ties keep the
/// larger penalty.  The returned variances are the sample variances of the
/// fitted predictions over the pilot rows.
pub fn fit_semi_automatic(
    pilot: &PilotTable,
    folds: usize,
    lambda_grid: &[f64],
) -> Result<RegressionModel> {
    let rows = pilot.len();
    let s = pilot.summary_dim();
    let d = pilot.param_dim();
    if d == 0 || s == 0 {
        return Err(Error::InvalidConfig("empty pilot table".into()));
    }
    if rows < 10 * s {
        return Err(Error::InvalidConfig(format!(
            "pilot has {rows} rows; the regression needs at least {}",
            10 * s
        )));
    }
    if lambda_grid.is_empty() {
        return Err(Error::InvalidConfig("empty penalty grid".into()));
    }
    if lambda_grid.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(Error::InvalidConfig(
            "penalties must be finite and non-negative".into(),
        ));
    }
    if folds < 2 || folds > rows {
        return Err(Error::InvalidConfig(format!(
            "fold count {folds} must lie in [2, {rows}]"
        )));
    }
    let mut lambdas = lambda_grid.to_vec();
    lambdas.sort_by(|a, b| b.partial_cmp(a).expect("finite penalties"));

    let mut cv_error = vec![0.0_f64; lambdas.len()];
    for fold in 0..folds {
        let train: Vec<usize> = (0..rows).filter(|i| i % folds != fold).collect();
        let fits = fit_at_lambdas(pilot, &train, &lambdas)?;
        for i in (0..rows).filter(|i| i % folds == fold) {
            for (li, fit) in fits.iter().enumerate() {
                for r in 0..d {
                    let pred = fit.intercept[r]
                        + fit.coef[r]
                            .iter()
                            .zip(&pilot.eta[i])
                            .map(|(c, e)| c * e)
                            .sum::<f64>();
                    let err = pilot.log_theta[i][r] - pred;
                    cv_error[li] += err * err;
                }
            }
        }
    }
    let mut best = 0;
    for li in 1..lambdas.len() {
        if cv_error[li] < cv_error[best] {
            best = li;
        }
    }
    let lambda = lambdas[best];

    let all: Vec<usize> = (0..rows).collect();
    let path = fit_at_lambdas(pilot, &all, &lambdas[..=best])?;
    let fit = path.into_iter().last().expect("non-empty path");
    let model = RegressionModel {
        a_hat: fit.intercept,
        b_hat: fit.coef,
        var_hat: vec![0.0; d],
        lambda,
    };
    // Sample variance of the fitted predictions standardizes the distance.
    let mut var_hat = vec![0.0; d];
    let preds: Vec<Vec<f64>> = pilot.eta.iter().map(|eta| model.predict(eta)).collect();
    for r in 0..d {
        // An all-zero coefficient row means the prediction is constant
        // (checked exactly, since rounding can leave the numeric variance
        // of identical values slightly above zero).
        if model.b_hat[r].iter().all(|c| *c == 0.0) {
            return Err(Error::SingularDesign(format!(
                "the penalty removed every summary for parameter {r}, \
                 leaving a constant prediction to standardize by"
            )));
        }
        let mean = preds.iter().map(|p| p[r]).sum::<f64>() / rows as f64;
        let ss = preds.iter().map(|p| (p[r] - mean).powi(2)).sum::<f64>();
        var_hat[r] = ss / (rows - 1) as f64;
        if !(var_hat[r] > 0.0) {
            return Err(Error::SingularDesign(format!(
                "predictions for parameter {r} have zero variance; \
                 the regression carries no signal"
            )));
        }
    }
    Ok(RegressionModel { var_hat, ..model })
}

/// Standardized quadratic distance between a predicted log-parameter vector
/// and the observation's prediction `a_hat` (the summary of the observation
/// is the zero vector, so its prediction is the intercept).
pub fn psi_distance(theta_hat: &[f64], model: &RegressionModel) -> f64 {
    debug_assert_eq!(theta_hat.len(), model.a_hat.len());
    theta_hat
        .iter()
        .zip(model.a_hat.iter().zip(&model.var_hat))
        .map(|(t, (a, v))| {
            let d = t - a;
            d * d / v
        })
        .sum()
}

/// Distances of the pilot rows under a fitted regression; their percentiles
/// calibrate the acceptance threshold.
pub fn pilot_distances(pilot: &PilotTable, model: &RegressionModel) -> Vec<f64> {
    pilot
        .eta
        .iter()
        .map(|eta| psi_distance(&model.predict(eta), model))
        .collect()
}

/// Acceptance threshold: the `p`-th percentile (linear interpolation between
/// order statistics) of the pilot distances.
#[derive(Clone, Debug)]
pub struct AbcThreshold {
    pub p: f64,
    pub epsilon: f64,
    /// The distances the percentile was taken over, sorted ascending.
    pub pilot_distances: Vec<f64>,
}

pub fn epsilon_from_percentile(distances: &[f64], p: f64) -> Result<AbcThreshold> {
    if distances.is_empty() {
        return Err(Error::InvalidConfig(
            "threshold selection needs a non-empty distance list".into(),
        ));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::InvalidConfig(format!(
            "percentile must lie in (0, 100], got {p}"
        )));
    }
    if distances.iter().any(|d| d.is_nan()) {
        return Err(Error::NonFinite("pilot distance"));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN distances"));
    let h = (sorted.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let epsilon = if frac == 0.0 || lo + 1 == sorted.len() {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    };
    Ok(AbcThreshold {
        p,
        epsilon,
        pilot_distances: sorted,
    })
}

/// Everything an ABC kernel needs besides the Markov-chain bookkeeping: the
/// simulator, the fitted regression, the observation, the summary radii, and
/// the acceptance threshold.
pub struct AbcContext<'a, M: AuxModel> {
    pub model: &'a M,
    pub regression: &'a RegressionModel,
    pub observed: &'a PointPattern,
    pub radii: &'a [f64],
    pub epsilon: f64,
}

impl<'a, M: AuxModel> AbcContext<'a, M> {
    pub fn new(
        model: &'a M,
        regression: &'a RegressionModel,
        observed: &'a PointPattern,
        radii: &'a [f64],
        epsilon: f64,
    ) -> Result<Self> {
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "threshold must be non-negative, got {epsilon}"
            )));
        }
        if regression.param_dim() != model.dim() {
            return Err(Error::InvalidConfig(
                "regression and model parameter dimensions differ".into(),
            ));
        }
        if regression.summary_dim() != 1 + radii.len() {
            return Err(Error::InvalidConfig(
                "regression summary dimension does not match the radius grid".into(),
            ));
        }
        summary_eta(observed, observed, radii)?;
        Ok(Self {
            model,
            regression,
            observed,
            radii,
            epsilon,
        })
    }

    /// Distance of one simulation from the observation.  Simulations with
    /// fewer than two points have no summary; their distance is infinite, so
    /// they only pass an infinite threshold.
    pub fn distance(&self, x: &PointPattern) -> Result<f64> {
        if x.len() < 2 {
            return Ok(f64::INFINITY);
        }
        let eta = summary_eta(x, self.observed, self.radii)?;
        Ok(psi_distance(&self.regression.predict(&eta), self.regression))
    }
}

/// Outcome of one ABC kernel step.
#[derive(Clone, Debug)]
pub struct AbcStep {
    pub theta: Vec<f64>,
    pub accepted: bool,
    /// Simulations consumed this step (repeat trials plus correction draws).
    pub simulations: u64,
    /// Repeat-loop batches (0 for the single-simulation kernel).
    pub batches: u64,
}

fn abc_rejected(theta: &[f64], simulations: u64, batches: u64) -> AbcStep {
    AbcStep {
        theta: theta.to_vec(),
        accepted: false,
        simulations,
        batches,
    }
}

fn at_iteration(t: u64, source: Error) -> Error {
    Error::ChainStep {
        iteration: t,
        source: Box::new(source),
    }
}

/// Single-simulation ABC kernel: propose, simulate once, stay unless the
/// distance passes the threshold, then accept with the prior-and-proposal
/// M-H ratio.  At an infinite threshold every simulation passes and the
/// kernel walks the trajectory of a flat-target M-H chain bitwise.
///
/// Streams: proposal then accept draw from `[STEP, t]`; the simulation from
/// `[AUX, t, 0]`.
pub fn abc_fp_step<M: AuxModel>(
    theta: &[f64],
    ctx: &AbcContext<M>,
    proposal: &BoundedUniformProposal,
    prior: &BoxPrior,
    family: &StreamFamily,
    t: u64,
) -> Result<AbcStep> {
    let mut rng = family.stream(&[purpose::STEP, t]);
    let Some(candidate) = proposal.propose(theta, &mut rng) else {
        return Ok(abc_rejected(theta, 0, 0));
    };
    if !prior.contains(&candidate) {
        return Ok(abc_rejected(theta, 0, 0));
    }
    let (dist, sims) = if ctx.model.validate(&candidate) {
        let mut aux = family.stream(&[purpose::AUX, t, 0]);
        let x = ctx
            .model
            .sample(&candidate, &mut aux)
            .map_err(|e| at_iteration(t, e))?;
        (ctx.distance(&x).map_err(|e| at_iteration(t, e))?, 1)
    } else {
        // No simulator exists at an infeasible candidate; treat it as
        // infinitely far so only an infinite threshold lets it through.
        (f64::INFINITY, 0)
    };
    if !(dist <= ctx.epsilon) {
        return Ok(abc_rejected(theta, sims, 0));
    }
    let log_alpha = proposal.proposal_logpdf(&candidate, theta)
        - proposal.proposal_logpdf(theta, &candidate);
    let u = draw::unit(&mut rng);
    if u.ln() < log_alpha {
        Ok(AbcStep {
            theta: candidate,
            accepted: true,
            simulations: sims,
            batches: 0,
        })
    } else {
        Ok(abc_rejected(theta, sims, 0))
    }
}

/// Which stream tags a correction estimate draws from: the estimate at the
/// current state and the estimate at the proposal are independent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZetaSide {
    Current,
    Proposed,
}

/// Monte Carlo estimate of the log probability that one more
/// propose-and-simulate round from `theta` lands within the threshold:
/// `log (1/(J_theta J_x)) sum_j sum_m 1[dist(x_jm) <= eps]` with
/// `theta''_j ~ p(.|theta)` and `x''_jm ~ L(.|theta''_j)`.  The proposal here
/// is the raw kernel — candidates outside the prior box still count, exactly
/// as in the repeat loop they model; proposals that cannot be drawn (empty
/// clip interval) or are infeasible contribute zero.  Returns `-inf` when
/// every indicator is zero, along with the simulation count.
pub fn zeta_log_estimate<M: AuxModel>(
    theta: &[f64],
    ctx: &AbcContext<M>,
    proposal: &BoundedUniformProposal,
    j_theta: usize,
    j_x: usize,
    pool: &WorkerPool,
    family: &StreamFamily,
    t: u64,
    side: ZetaSide,
) -> Result<(f64, u64)> {
    if j_theta == 0 || j_x == 0 {
        return Err(Error::InvalidConfig(
            "correction estimate needs at least one draw on each level".into(),
        ));
    }
    let (theta_tag, x_tag) = match side {
        ZetaSide::Current => (purpose::ZETA_CURRENT_THETA, purpose::ZETA_CURRENT_X),
        ZetaSide::Proposed => (purpose::ZETA_PROPOSED_THETA, purpose::ZETA_PROPOSED_X),
    };
    let neighbours: Vec<Option<Vec<f64>>> = (0..j_theta as u64)
        .map(|j| {
            let mut rng = family.stream(&[theta_tag, t, j]);
            proposal
                .propose(theta, &mut rng)
                .filter(|th| ctx.model.validate(th))
        })
        .collect();
    let mut grid = Vec::with_capacity(j_theta * j_x);
    for j in 0..j_theta as u64 {
        for m in 0..j_x as u64 {
            grid.push((j, m));
        }
    }
    let outcomes = pool.map_parallel(grid, |_, (j, m)| {
        let Some(neighbour) = &neighbours[j as usize] else {
            return Ok((false, 0u64));
        };
        let mut rng = family.stream(&[x_tag, t, j, m]);
        let x = ctx.model.sample(neighbour, &mut rng)?;
        let dist = ctx.distance(&x)?;
        Ok((dist <= ctx.epsilon, 1))
    })?;
    let hits = outcomes.iter().filter(|(hit, _)| *hit).count();
    let sims = outcomes.iter().map(|(_, s)| s).sum();
    let fraction = hits as f64 / (j_theta * j_x) as f64;
    Ok((fraction.ln(), sims))
}

/// The repeat-until-hit proposal: batches of `i` independent trials run
/// concurrently; trial `g` (globally numbered `batch * i + slot`) draws its
/// candidate and simulation from the stream `[REPEAT, t, g]`.  The candidate
/// returned is the passing trial with the smallest global number, which makes
/// the result identical to a serial repeat loop for every `i`.
pub fn parallel_repeat_propose<M: AuxModel>(
    theta: &[f64],
    ctx: &AbcContext<M>,
    proposal: &BoundedUniformProposal,
    i: usize,
    pool: &WorkerPool,
    family: &StreamFamily,
    t: u64,
) -> Result<(Vec<f64>, u64, u64)> {
    if i == 0 {
        return Err(Error::InvalidConfig(
            "repeat loop needs at least one slot".into(),
        ));
    }
    let mut simulations = 0u64;
    for batch in 0..REPEAT_BATCH_CAP {
        let trials: Vec<u64> = (0..i as u64).map(|slot| batch * i as u64 + slot).collect();
        let outcomes = pool.map_parallel(trials, |_, g| {
            let mut rng = family.stream(&[purpose::REPEAT, t, g]);
            let Some(candidate) = proposal.propose(theta, &mut rng) else {
                return Ok((None, 0u64));
            };
            if !ctx.model.validate(&candidate) {
                return Ok((None, 0));
            }
            let x = ctx.model.sample(&candidate, &mut rng)?;
            let dist = ctx.distance(&x)?;
            Ok((if dist <= ctx.epsilon { Some(candidate) } else { None }, 1))
        })?;
        simulations += outcomes.iter().map(|(_, s)| s).sum::<u64>();
        for (candidate, _) in outcomes {
            if let Some(c) = candidate {
                return Ok((c, batch + 1, simulations));
            }
        }
    }
    Err(Error::RepeatCap {
        cap: REPEAT_BATCH_CAP,
    })
}

/// Whether the repeat kernel estimates its acceptance correction or forces
/// the two correction terms equal (cancelling them), which reproduces the
/// uncorrected algorithm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ZetaMode {
    Estimate,
    ForceEqual,
}

/// Repeat-until-hit ABC kernel with the acceptance correction: Step 1 runs
/// the repeat loop for a passing candidate; Step 2 accepts with
/// `min(1, prior ratio x proposal ratio x zeta(current)/zeta(candidate))`,
/// both correction terms re-estimated fresh every iteration.
///
/// Streams: the accept draw is the first draw of `[STEP, t]`; the repeat
/// loop and the two correction estimates use their dedicated tags.
///
/// Errors: a zero correction estimate at the current state means no
/// propose-and-simulate round from where the chain sits can pass — the
/// kernel aborts with a dead-neighbourhood error (a zero estimate at the
/// candidate is just a rejection).
#[allow(clippy::too_many_arguments)]
pub fn abc_csg_step<M: AuxModel>(
    theta: &[f64],
    ctx: &AbcContext<M>,
    proposal: &BoundedUniformProposal,
    prior: &BoxPrior,
    i: usize,
    j_theta: usize,
    j_x: usize,
    mode: ZetaMode,
    pool: &WorkerPool,
    family: &StreamFamily,
    t: u64,
) -> Result<AbcStep> {
    let mut rng = family.stream(&[purpose::STEP, t]);
    let u = draw::unit(&mut rng);
    let (candidate, batches, mut simulations) =
        parallel_repeat_propose(theta, ctx, proposal, i, pool, family, t)
            .map_err(|e| at_iteration(t, e))?;
    let zeta_term = match mode {
        ZetaMode::ForceEqual => 0.0,
        ZetaMode::Estimate => {
            let (z_current, s_current) = zeta_log_estimate(
                theta,
                ctx,
                proposal,
                j_theta,
                j_x,
                pool,
                family,
                t,
                ZetaSide::Current,
            )
            .map_err(|e| at_iteration(t, e))?;
            simulations += s_current;
            if z_current == f64::NEG_INFINITY {
                return Err(Error::DeadNeighborhood { iteration: t });
            }
            let (z_candidate, s_candidate) = zeta_log_estimate(
                &candidate,
                ctx,
                proposal,
                j_theta,
                j_x,
                pool,
                family,
                t,
                ZetaSide::Proposed,
            )
            .map_err(|e| at_iteration(t, e))?;
            simulations += s_candidate;
            if z_candidate == f64::NEG_INFINITY {
                return Ok(abc_rejected(theta, simulations, batches));
            }
            z_current - z_candidate
        }
    };
    let prior_term = if prior.contains(&candidate) {
        0.0
    } else {
        f64::NEG_INFINITY
    };
    let log_alpha = prior_term
        + (proposal.proposal_logpdf(&candidate, theta)
            - proposal.proposal_logpdf(theta, &candidate))
        + zeta_term;
    if u.ln() < log_alpha {
        Ok(AbcStep {
            theta: candidate,
            accepted: true,
            simulations,
            batches,
        })
    } else {
        Ok(abc_rejected(theta, simulations, batches))
    }
}

/// The uncorrected repeat kernel, kept to demonstrate its inflated acceptance
/// rate and bias: identical to [`abc_csg_step`] with the correction terms
/// forced equal.
#[allow(clippy::too_many_arguments)]
pub fn abc_sg_step<M: AuxModel>(
    theta: &[f64],
    ctx: &AbcContext<M>,
    proposal: &BoundedUniformProposal,
    prior: &BoxPrior,
    i: usize,
    pool: &WorkerPool,
    family: &StreamFamily,
    t: u64,
) -> Result<AbcStep> {
    abc_csg_step(
        theta,
        ctx,
        proposal,
        prior,
        i,
        1,
        1,
        ZetaMode::ForceEqual,
        pool,
        family,
        t,
    )
}

fn check_abc_init<M: AuxModel>(
    ctx: &AbcContext<M>,
    proposal: &BoundedUniformProposal,
    prior: &BoxPrior,
    config: &ChainConfig,
) -> Result<()> {
    config.check(prior.dim())?;
    if proposal.dim() != prior.dim() || prior.dim() != ctx.model.dim() {
        return Err(Error::InvalidConfig(
            "proposal, prior, and model dimensions differ".into(),
        ));
    }
    if !prior.contains(&config.theta0) {
        return Err(Error::InvalidConfig(
            "initial state lies outside the prior box".into(),
        ));
    }
    if !ctx.model.validate(&config.theta0) {
        return Err(Error::InvalidConfig(
            "initial state is infeasible for the model".into(),
        ));
    }
    Ok(())
}

fn run_abc_driver<S>(config: &ChainConfig, family: &StreamFamily, mut step: S) -> Result<Chain>
where
    S: FnMut(u64, &[f64]) -> Result<AbcStep>,
{
    let iterations = config.iterations;
    let mut draws = Vec::with_capacity(iterations);
    let mut accept_flags = Vec::with_capacity(iterations);
    let mut elapsed_ns = Vec::with_capacity(iterations);
    let mut aux_draws = Vec::with_capacity(iterations);
    let mut theta = config.theta0.clone();
    for t in 0..iterations {
        let start = Instant::now();
        let result = step(t as u64, &theta)?;
        elapsed_ns.push(start.elapsed().as_nanos() as u64);
        theta = result.theta;
        draws.push(theta.clone());
        accept_flags.push(result.accepted);
        aux_draws.push(result.simulations);
    }
    Ok(Chain {
        draws,
        accept_flags,
        elapsed_ns,
        aux_draws,
        master_seed: family.master_seed(),
    })
}

/// Chain driver for the single-simulation kernel.
pub fn run_abc_fp<M: AuxModel>(
    ctx: &AbcContext<M>,
    proposal: &BoundedUniformProposal,
    prior: &BoxPrior,
    config: &ChainConfig,
    family: &StreamFamily,
) -> Result<Chain> {
    check_abc_init(ctx, proposal, prior, config)?;
    run_abc_driver(config, family, |t, theta| {
        abc_fp_step(theta, ctx, proposal, prior, family, t)
    })
}

/// Chain driver for the corrected repeat kernel (or, with
/// [`ZetaMode::ForceEqual`], the uncorrected one).
#[allow(clippy::too_many_arguments)]
pub fn run_abc_csg<M: AuxModel>(
    ctx: &AbcContext<M>,
    proposal: &BoundedUniformProposal,
    prior: &BoxPrior,
    i: usize,
    j_theta: usize,
    j_x: usize,
    mode: ZetaMode,
    config: &ChainConfig,
    family: &StreamFamily,
    pool: &WorkerPool,
) -> Result<Chain> {
    check_abc_init(ctx, proposal, prior, config)?;
    if i == 0 {
        return Err(Error::InvalidConfig(
            "repeat loop needs at least one slot".into(),
        ));
    }
    if mode == ZetaMode::Estimate && (j_theta == 0 || j_x == 0) {
        return Err(Error::InvalidConfig(
            "correction estimate needs at least one draw on each level".into(),
        ));
    }
    run_abc_driver(config, family, |t, theta| {
        abc_csg_step(
            theta, ctx, proposal, prior, i, j_theta, j_x, mode, pool, family, t,
        )
    })
}

/// Chain driver for the uncorrected repeat kernel (test harness only).
pub fn run_abc_sg<M: AuxModel>(
    ctx: &AbcContext<M>,
    proposal: &BoundedUniformProposal,
    prior: &BoxPrior,
    i: usize,
    config: &ChainConfig,
    family: &StreamFamily,
    pool: &WorkerPool,
) -> Result<Chain> {
    run_abc_csg(
        ctx,
        proposal,
        prior,
        i,
        1,
        1,
        ZetaMode::ForceEqual,
        config,
        family,
        pool,
    )
}
