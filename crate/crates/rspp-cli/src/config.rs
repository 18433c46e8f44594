//! Run configuration: a TOML file with documented sections, overridable by
//! a handful of global command-line flags.  The merged configuration is
//! echoed verbatim into every manifest so a run is reproducible from the
//! manifest alone.

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use rspp::dppg::DppgParams;
use rspp::geometry::Window;
use rspp::mcmc::ComponentBound;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Strauss,
    Dppg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Mh,
    Exchange,
    NoisyMh,
    ExchangeApprox,
    NoisyMhApprox,
    AbcFp,
    AbcCsg,
    AbcSgTestonly,
}

impl Algorithm {
    pub fn id(self) -> &'static str {
        match self {
            Algorithm::Mh => "mh",
            Algorithm::Exchange => "exchange",
            Algorithm::NoisyMh => "noisy-mh",
            Algorithm::ExchangeApprox => "exchange-approx",
            Algorithm::NoisyMhApprox => "noisy-mh-approx",
            Algorithm::AbcFp => "abc-fp",
            Algorithm::AbcCsg => "abc-csg",
            Algorithm::AbcSgTestonly => "abc-sg-testonly",
        }
    }

    /// Plain M-H needs a tractable likelihood and the approximations are
    /// determinant-based, so these three exist only for the determinantal
    /// model.
    pub fn requires_dppg(self) -> bool {
        matches!(
            self,
            Algorithm::Mh | Algorithm::ExchangeApprox | Algorithm::NoisyMhApprox
        )
    }

}

/// Which spectral-truncation target the determinantal model uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TruncationTarget {
    /// 99% of the model intensity — always reachable; the default.
    #[default]
    Intensity,
    /// 99% of the observed count — errs when the candidate intensity is
    /// below it; opt-in.
    ObservedCount,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub model: ModelKind,
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub burn_in: usize,
    /// Auxiliary draws per iteration for the noisy kernels.
    pub k: usize,
    /// Worker count; also the repeat-loop batch size of the ABC kernels.
    pub workers: usize,
    pub j_theta: usize,
    pub j_x: usize,
    /// Pilot-distance percentile for the ABC threshold.
    pub p: f64,
    /// Extra percentiles reported by the pilot command (`p` is always
    /// included).
    pub p_grid: Vec<f64>,
    pub pilot_rows: usize,
    /// Cross-validation folds for the summary regression.
    pub folds: usize,
    pub seed: u64,
    /// Observation window `[x0, x1, y0, y1]`.
    pub window: [f64; 4],
    /// Histogram bins for density export.
    pub density_bins: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            model: ModelKind::Strauss,
            algorithm: Algorithm::Exchange,
            iterations: 1_000,
            burn_in: 0,
            k: 1,
            workers: 1,
            j_theta: 7,
            j_x: 7,
            p: 0.5,
            p_grid: Vec::new(),
            pilot_rows: 500,
            folds: 10,
            seed: 1,
            window: [0.0, 1.0, 0.0, 1.0],
            density_bins: 50,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StraussSection {
    pub beta: f64,
    pub gamma: f64,
    pub r: f64,
}

impl Default for StraussSection {
    fn default() -> Self {
        StraussSection {
            beta: 200.0,
            gamma: 0.1,
            r: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DppgSection {
    pub tau: f64,
    pub sigma: f64,
    pub truncation_target: TruncationTarget,
}

impl Default for DppgSection {
    fn default() -> Self {
        DppgSection {
            tau: 100.0,
            sigma: 0.05,
            truncation_target: TruncationTarget::Intensity,
        }
    }
}

/// Prior box, proposal widths, and initial state; when a field is absent
/// the model's study defaults apply.
#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub prior_lower: Option<Vec<f64>>,
    pub prior_upper: Option<Vec<f64>>,
    pub proposal_widths: Option<Vec<f64>>,
    pub theta0: Option<Vec<f64>>,
}

/// Profile-radius grid controls.  With nothing set the grid is data-driven:
/// 50 equally spaced radii spanning half to three times the minimum
/// inter-point distance of the pattern being profiled.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadiusSection {
    /// Explicit radius grid; wins over the min/max/count triple below.
    pub grid: Option<Vec<f64>>,
    pub grid_min: Option<f64>,
    pub grid_max: Option<f64>,
    pub grid_count: usize,
}

impl Default for RadiusSection {
    fn default() -> Self {
        RadiusSection {
            grid: None,
            grid_min: None,
            grid_max: None,
            grid_count: 50,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub observed: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Iteration scale relative to the full study protocol.
    pub scale: f64,
    pub replicates: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            scale: 0.1,
            replicates: 3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    pub strauss: StraussSection,
    pub dppg: DppgSection,
    pub inference: InferenceSection,
    pub radius: RadiusSection,
    pub paths: PathsSection,
    pub bench: BenchSection,
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub model: Option<ModelKind>,
    pub algorithm: Option<Algorithm>,
    pub observed: Option<PathBuf>,
}

impl Config {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Config> {
        let mut config = match path {
            None => Config::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config file {}", p.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config file {}", p.display()))?
            }
        };
        if let Some(seed) = overrides.seed {
            config.run.seed = seed;
        }
        if let Some(workers) = overrides.workers {
            config.run.workers = workers;
        }
        if let Some(out) = &overrides.out {
            config.paths.out = Some(out.clone());
        }
        if let Some(model) = overrides.model {
            config.run.model = model;
        }
        if let Some(algorithm) = overrides.algorithm {
            config.run.algorithm = algorithm;
        }
        if let Some(observed) = &overrides.observed {
            config.paths.observed = Some(observed.clone());
        }
        config.validate()?;
        Ok(config)
    }

    /// Structural invariants shared by every command.
    fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.algorithm.requires_dppg() && r.model != ModelKind::Dppg {
            bail!(
                "algorithm {} requires the dppg model (it relies on the \
                 tractable determinantal likelihood)",
                r.algorithm.id()
            );
        }
        if r.k == 0 {
            bail!("k must be at least 1");
        }
        if r.workers == 0 {
            bail!("workers must be at least 1");
        }
        if !(r.p > 0.0 && r.p <= 100.0) {
            bail!("p must lie in (0, 100], got {}", r.p);
        }
        for &p in &r.p_grid {
            if !(p > 0.0 && p <= 100.0) {
                bail!("p_grid entry {p} must lie in (0, 100]");
            }
        }
        if r.iterations == 0 {
            bail!("iterations must be at least 1");
        }
        if r.burn_in >= r.iterations {
            bail!(
                "burn_in {} must be smaller than iterations {}",
                r.burn_in,
                r.iterations
            );
        }
        if !(self.bench.scale > 0.0) {
            bail!("bench scale must be positive");
        }
        if self.bench.replicates == 0 {
            bail!("bench replicates must be at least 1");
        }
        self.window()?;
        Ok(())
    }

    pub fn window(&self) -> Result<Window> {
        let [x0, x1, y0, y1] = self.run.window;
        Window::new(x0, x1, y0, y1).context("invalid window")
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn observed_path(&self) -> Result<&Path> {
        self.paths
            .observed
            .as_deref()
            .context("no observed pattern given (set [paths] observed or pass --observed)")
    }

    /// Parameter column names for the active model.
    pub fn param_names(&self) -> [&'static str; 2] {
        match self.run.model {
            ModelKind::Strauss => ["beta", "gamma"],
            ModelKind::Dppg => ["tau", "sigma"],
        }
    }

    /// Study-default prior bounds: beta/gamma boxes for the repulsion model,
    /// tau/sigma (capped by the existence bound at the smallest tau) for the
    /// determinantal one.
    fn default_prior(&self) -> (Vec<f64>, Vec<f64>) {
        match self.run.model {
            ModelKind::Strauss => (vec![50.0, 0.0], vec![400.0, 1.0]),
            ModelKind::Dppg => (
                vec![50.0, 0.001],
                vec![200.0, DppgParams::sigma_max(50.0)],
            ),
        }
    }

    fn default_widths(&self) -> Vec<f64> {
        match self.run.model {
            ModelKind::Strauss => vec![65.0, 0.16],
            ModelKind::Dppg => vec![32.0, 0.015],
        }
    }

    fn default_theta0(&self) -> Vec<f64> {
        match self.run.model {
            ModelKind::Strauss => vec![190.0, 0.2],
            ModelKind::Dppg => vec![125.0, 0.04],
        }
    }

    pub fn prior_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let (dl, du) = self.default_prior();
        (
            self.inference.prior_lower.clone().unwrap_or(dl),
            self.inference.prior_upper.clone().unwrap_or(du),
        )
    }

    pub fn proposal_widths(&self) -> Vec<f64> {
        self.inference
            .proposal_widths
            .clone()
            .unwrap_or_else(|| self.default_widths())
    }

    pub fn theta0(&self) -> Vec<f64> {
        self.inference
            .theta0
            .clone()
            .unwrap_or_else(|| self.default_theta0())
    }

    /// Natural parameter bounds the proposal clips against: positivity for
    /// the intensity-like components, the (0,1] interaction strength for the
    /// repulsion model, and the tau-coupled existence bound for sigma.
    pub fn component_bounds(&self) -> Vec<ComponentBound> {
        match self.run.model {
            ModelKind::Strauss => vec![
                ComponentBound::Fixed {
                    lower: 0.0,
                    upper: f64::INFINITY,
                },
                ComponentBound::Fixed {
                    lower: 0.0,
                    upper: 1.0,
                },
            ],
            ModelKind::Dppg => vec![
                ComponentBound::Fixed {
                    lower: 0.0,
                    upper: f64::INFINITY,
                },
                ComponentBound::SigmaFromTau {
                    tau_index: 0,
                    lower: 0.0,
                },
            ],
        }
    }

    /// The configured radius grid for profile pseudo-likelihood estimation,
    /// or `None` when nothing was set and the data-driven default applies.
    pub fn explicit_radius_grid(&self) -> Result<Option<Vec<f64>>> {
        if let Some(grid) = &self.radius.grid {
            if grid.is_empty() {
                bail!("explicit radius grid is empty");
            }
            return Ok(Some(grid.clone()));
        }
        let (grid_min, grid_max) = match (self.radius.grid_min, self.radius.grid_max) {
            (None, None) => return Ok(None),
            (Some(lo), Some(hi)) => (lo, hi),
            _ => bail!("set both grid_min and grid_max (or neither)"),
        };
        let grid_count = self.radius.grid_count;
        if grid_count < 1 {
            bail!("radius grid needs at least one point");
        }
        if !(grid_min > 0.0) || grid_max < grid_min {
            bail!("radius grid bounds must satisfy 0 < grid_min <= grid_max");
        }
        if grid_count == 1 {
            return Ok(Some(vec![grid_min]));
        }
        let step = (grid_max - grid_min) / (grid_count - 1) as f64;
        Ok(Some(
            (0..grid_count).map(|i| grid_min + i as f64 * step).collect(),
        ))
    }

    /// Summary radii for the ABC distance: the fitted interaction radius for
    /// the repulsion model, ten equally spaced radii over [0.01, 0.1] for the
    /// determinantal one.
    pub fn summary_radii(&self) -> Vec<f64> {
        match self.run.model {
            ModelKind::Strauss => vec![self.strauss.r],
            ModelKind::Dppg => rspp::abc::dppg_summary_radii(),
        }
    }

    /// All percentiles the pilot command reports: `p_grid` if given, with
    /// `p` always included, sorted ascending.
    pub fn percentiles(&self) -> Vec<f64> {
        let mut ps = self.run.p_grid.clone();
        if !ps.iter().any(|v| v == &self.run.p) {
            ps.push(self.run.p);
        }
        ps.sort_by(|a, b| a.partial_cmp(b).expect("validated percentiles"));
        ps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_study_protocol() {
        let config = Config::default();
        assert_eq!(config.run.model, ModelKind::Strauss);
        assert_eq!(config.strauss.beta, 200.0);
        let (lo, hi) = config.prior_bounds();
        assert_eq!(lo, vec![50.0, 0.0]);
        assert_eq!(hi, vec![400.0, 1.0]);
        assert_eq!(config.proposal_widths(), vec![65.0, 0.16]);
        assert_eq!(config.theta0(), vec![190.0, 0.2]);
        assert_eq!(config.param_names(), ["beta", "gamma"]);
    }

    #[test]
    fn overrides_beat_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[run]\nseed = 9\nworkers = 3\n").unwrap();
        let over = Overrides {
            seed: Some(42),
            out: Some(PathBuf::from("elsewhere")),
            ..Overrides::default()
        };
        let config = Config::load(Some(&path), &over).unwrap();
        assert_eq!(config.run.seed, 42);
        assert_eq!(config.run.workers, 3);
        assert_eq!(config.out_dir(), PathBuf::from("elsewhere"));
    }

    #[test]
    fn validation_rejects_incompatible_algorithms() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[run]\nmodel = \"strauss\"\nalgorithm = \"mh\"\n").unwrap();
        let err = Config::load(Some(&path), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("requires the dppg model"));

        std::fs::write(&path, "[run]\nk = 0\n").unwrap();
        assert!(Config::load(Some(&path), &Overrides::default()).is_err());
        std::fs::write(&path, "[run]\np = 0.0\n").unwrap();
        assert!(Config::load(Some(&path), &Overrides::default()).is_err());
        std::fs::write(&path, "[run]\np = 100.5\n").unwrap();
        assert!(Config::load(Some(&path), &Overrides::default()).is_err());
        std::fs::write(&path, "[run]\nunknown_key = 1\n").unwrap();
        assert!(Config::load(Some(&path), &Overrides::default()).is_err());
    }

    #[test]
    fn dppg_defaults_respect_existence_bound() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[run]\nmodel = \"dppg\"\nalgorithm = \"mh\"\n").unwrap();
        let config = Config::load(Some(&path), &Overrides::default()).unwrap();
        let (lo, hi) = config.prior_bounds();
        assert_eq!(lo[0], 50.0);
        assert!((hi[1] - 1.0 / (50.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert_eq!(config.theta0(), vec![125.0, 0.04]);
    }

    #[test]
    fn radius_grid_construction() {
        let config = Config::default();
        assert_eq!(config.explicit_radius_grid().unwrap(), None);

        let mut config = Config::default();
        config.radius.grid_min = Some(0.01);
        config.radius.grid_max = Some(0.1);
        config.radius.grid_count = 19;
        let grid = config.explicit_radius_grid().unwrap().unwrap();
        assert_eq!(grid.len(), 19);
        assert!((grid[0] - 0.01).abs() < 1e-15);
        assert!((grid[18] - 0.1).abs() < 1e-12);

        config.radius.grid = Some(vec![0.04]);
        assert_eq!(
            config.explicit_radius_grid().unwrap(),
            Some(vec![0.04])
        );

        config.radius.grid = None;
        config.radius.grid_max = None;
        assert!(config.explicit_radius_grid().is_err());
    }

    #[test]
    fn percentile_list_always_contains_p() {
        let mut config = Config::default();
        config.run.p = 1.0;
        config.run.p_grid = vec![2.5, 0.5];
        assert_eq!(config.percentiles(), vec![0.5, 1.0, 2.5]);
        config.run.p_grid.clear();
        assert_eq!(config.percentiles(), vec![1.0]);
    }
}
