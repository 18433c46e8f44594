//! Chain diagnostics: effective sample size with the truncated
//! autocorrelation rule, posterior summaries with throughput and bias
//! columns, Kolmogorov–Smirnov helpers for distribution comparisons, and
//! density export for plotting.

use crate::error::{Error, Result};
use crate::geometry::fmt_f64;
use crate::mcmc::Chain;
use std::io::Write as IoWrite;

/// Effective sample size `T / (1 + 2 sum nu_i)` with the sample
/// autocorrelations summed from lag 1 until (exclusive) the first lag whose
/// autocorrelation drops below 0.05.
pub fn ess(series: &[f64]) -> Result<f64> {
    let t = series.len();
    if t < 10 {
        return Err(Error::InvalidConfig(format!(
            "effective sample size needs at least 10 draws, got {t}"
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("chain draw"));
    }
    let mean = series.iter().sum::<f64>() / t as f64;
    let denom: f64 = series.iter().map(|v| (v - mean) * (v - mean)).sum();
    if !(denom > 0.0) {
        return Err(Error::EstimatorUndefined(
            "effective sample size of a constant series".into(),
        ));
    }
    let mut rho_sum = 0.0;
    for lag in 1..t {
        let num: f64 = (0..t - lag)
            .map(|i| (series[i] - mean) * (series[i + lag] - mean))
            .sum();
        let nu = num / denom;
        if nu < 0.05 {
            break;
        }
        rho_sum += nu;
    }
    let tau = 1.0 + 2.0 * rho_sum;
    Ok((t as f64 / tau).min(t as f64))
}

/// Per-parameter posterior summary of a chain: moments, effective sample
/// sizes, throughput, and (optionally) absolute bias against a reference
/// chain's means.
#[derive(Clone, Debug)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub ess: Vec<f64>,
    pub ess_per_sec: Vec<f64>,
    pub ess_per_iter: Vec<f64>,
    pub abs_bias: Option<Vec<f64>>,
    /// Total recorded wall-clock time of the run, burn-in included.
    pub seconds: f64,
    /// Post-burn-in draw count the moments were taken over.
    pub kept_iterations: usize,
}

impl PosteriorSummary {
    pub fn param_dim(&self) -> usize {
        self.mean.len()
    }

    /// Arithmetic average of the per-parameter effective sample sizes.
    pub fn ess_average(&self) -> f64 {
        self.ess.iter().sum::<f64>() / self.ess.len() as f64
    }

    pub fn ess_average_per_sec(&self) -> f64 {
        self.ess_average() / self.seconds
    }

    pub fn ess_average_per_iter(&self) -> f64 {
        self.ess_average() / self.kept_iterations as f64
    }
}

fn post_burn_in(chain: &Chain, burn_in: usize) -> Result<usize> {
    if chain.is_empty() {
        return Err(Error::InvalidConfig("empty chain".into()));
    }
    if burn_in >= chain.len() {
        return Err(Error::InvalidConfig(format!(
            "burn-in {burn_in} consumes the whole chain of length {}",
            chain.len()
        )));
    }
    Ok(chain.len() - burn_in)
}

/// Summarizes the post-burn-in draws of a chain.  The reference, when given,
/// is a longer ground-truth run with its own burn-in; bias is the absolute
/// difference of posterior means.
pub fn summarize(
    chain: &Chain,
    burn_in: usize,
    reference: Option<(&Chain, usize)>,
) -> Result<PosteriorSummary> {
    let kept = post_burn_in(chain, burn_in)?;
    let d = chain.draws[0].len();
    let mut mean = Vec::with_capacity(d);
    let mut sd = Vec::with_capacity(d);
    let mut ess_values = Vec::with_capacity(d);
    let seconds = chain.elapsed_ns.iter().sum::<u64>() as f64 / 1e9;
    for idx in 0..d {
        let series = chain.component(idx, burn_in);
        let m = series.iter().sum::<f64>() / kept as f64;
        let ss: f64 = series.iter().map(|v| (v - m) * (v - m)).sum();
        mean.push(m);
        sd.push(if kept > 1 {
            (ss / (kept - 1) as f64).sqrt()
        } else {
            0.0
        });
        ess_values.push(ess(&series)?);
    }
    let abs_bias = match reference {
        None => None,
        Some((ref_chain, ref_burn)) => {
            let ref_kept = post_burn_in(ref_chain, ref_burn)?;
            if ref_chain.draws[0].len() != d {
                return Err(Error::InvalidConfig(
                    "reference chain has a different parameter dimension".into(),
                ));
            }
            let bias = (0..d)
                .map(|idx| {
                    let ref_mean = ref_chain.component(idx, ref_burn).iter().sum::<f64>()
                        / ref_kept as f64;
                    (mean[idx] - ref_mean).abs()
                })
                .collect();
            Some(bias)
        }
    };
    let ess_per_sec = ess_values.iter().map(|e| e / seconds).collect();
    let ess_per_iter = ess_values.iter().map(|e| e / kept as f64).collect();
    Ok(PosteriorSummary {
        mean,
        sd,
        ess: ess_values,
        ess_per_sec,
        ess_per_iter,
        abs_bias,
        seconds,
        kept_iterations: kept,
    })
}

/// One histogram bin: `[lo, hi)` (the last bin closes at its upper edge).
#[derive(Clone, Debug, PartialEq)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Plot-ready density data for one parameter: a histogram over the draw
/// range plus a Gaussian kernel-density estimate on a 512-point grid with
/// Silverman's bandwidth.
#[derive(Clone, Debug)]
pub struct DensityExport {
    pub histogram: Vec<HistBin>,
    /// `(grid point, density value)` pairs.
    pub kde: Vec<(f64, f64)>,
    pub bandwidth: f64,
}

const KDE_GRID: usize = 512;

/// Type-7 quantile (linear interpolation between order statistics) of a
/// sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo + 1 == sorted.len() {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Histogram and kernel-density export of one parameter over the whole
/// chain (trim burn-in by slicing the chain first if needed).
pub fn export_density(chain: &Chain, parameter: usize, bins: usize) -> Result<DensityExport> {
    if chain.is_empty() {
        return Err(Error::InvalidConfig("empty chain".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidConfig("need at least one bin".into()));
    }
    if parameter >= chain.draws[0].len() {
        return Err(Error::InvalidConfig(format!(
            "parameter index {parameter} out of range"
        )));
    }
    let series = chain.component(parameter, 0);
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("chain draw"));
    }
    let n = series.len();
    let min = series.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    // Histogram: constant series occupy a single centred bin.
    let (h_lo, h_hi) = if min == max {
        (min - 0.5, max + 0.5)
    } else {
        (min, max)
    };
    let width = (h_hi - h_lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in &series {
        let idx = (((v - h_lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let histogram = (0..bins)
        .map(|b| HistBin {
            lo: h_lo + b as f64 * width,
            hi: h_lo + (b + 1) as f64 * width,
            count: counts[b],
        })
        .collect();

    // Silverman bandwidth from sd and interquartile range.
    let mean = series.iter().sum::<f64>() / n as f64;
    let sd = (series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1).max(1) as f64)
        .sqrt();
    let mut sorted = series.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 {
        sd.min(iqr / 1.34)
    } else {
        sd
    };
    let mut bandwidth = 0.9 * spread * (n as f64).powf(-0.2);
    if !(bandwidth > 0.0) {
        // Degenerate sample: fall back to a sliver so the density stays a
        // finite spike instead of dividing by zero.
        bandwidth = mean.abs().max(1.0) * 1e-9;
    }

    let g_lo = min - 3.0 * bandwidth;
    let g_hi = max + 3.0 * bandwidth;
    let g_step = (g_hi - g_lo) / (KDE_GRID - 1) as f64;
    let norm = 1.0 / (n as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let kde = (0..KDE_GRID)
        .map(|i| {
            let g = g_lo + i as f64 * g_step;
            let dens = series
                .iter()
                .map(|v| {
                    let z = (g - v) / bandwidth;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm;
            (g, dens)
        })
        .collect();
    Ok(DensityExport {
        histogram,
        kde,
        bandwidth,
    })
}

/// Writes a density export as CSV with a `kind` discriminator column:
/// histogram rows carry `bin_lo,bin_hi,count`, grid rows carry `x,density`.
pub fn write_density_csv<W: IoWrite>(out: &mut W, density: &DensityExport) -> Result<()> {
    writeln!(out, "kind,a,b,c")?;
    for bin in &density.histogram {
        writeln!(
            out,
            "hist,{},{},{}",
            fmt_f64(bin.lo),
            fmt_f64(bin.hi),
            bin.count
        )?;
    }
    for (x, d) in &density.kde {
        writeln!(out, "kde,{},{},", fmt_f64(*x), fmt_f64(*d))?;
    }
    Ok(())
}

/// A Kolmogorov–Smirnov comparison: the supremum statistic and its
/// asymptotic p-value with the small-sample adjustment.
#[derive(Clone, Copy, Debug)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Asymptotic KS tail probability `Q(lambda) = 2 sum (-1)^(k-1) e^(-2 k^2
/// lambda^2)` with the `(sqrt(ne) + 0.12 + 0.11/sqrt(ne)) D` adjustment
/// already applied by the callers; tiny arguments saturate at 1.
fn ks_tail(lambda: f64) -> f64 {
    if lambda < 0.18 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn sorted_copy(data: &[f64], what: &'static str) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::InvalidConfig(format!("{what}: empty sample")));
    }
    if data.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite(what));
    }
    let mut v = data.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    Ok(v)
}

/// One-sample KS test of `data` against the distribution function `cdf`.
pub fn ks_one_sample<F: Fn(f64) -> f64>(data: &[f64], cdf: F) -> Result<KsTest> {
    let sorted = sorted_copy(data, "one-sample KS data")?;
    let n = sorted.len() as f64;
    let mut d_stat = 0.0_f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let hi = (i + 1) as f64 / n - f;
        let lo = f - i as f64 / n;
        d_stat = d_stat.max(hi).max(lo);
    }
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d_stat;
    Ok(KsTest {
        statistic: d_stat,
        p_value: ks_tail(lambda),
    })
}

/// Two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsTest> {
    let xa = sorted_copy(a, "two-sample KS first sample")?;
    let xb = sorted_copy(b, "two-sample KS second sample")?;
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let mut i = 0usize;
    let mut j = 0usize;
    let mut d_stat = 0.0_f64;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d_stat = d_stat.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let sqrt_ne = ne.sqrt();
    let lambda = (sqrt_ne + 0.12 + 0.11 / sqrt_ne) * d_stat;
    Ok(KsTest {
        statistic: d_stat,
        p_value: ks_tail(lambda),
    })
}
