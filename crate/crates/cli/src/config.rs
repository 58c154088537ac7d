//! Run configuration: a TOML file whose every section is optional, with
//! command-line flags layered on top.
//!
//! ```toml
//! seed = 7
//! out = "results"
//!
//! [data]
//! counts = "counts.csv"
//! covariates = "covariates.csv"
//! sites = "sites.csv"
//!
//! [hypers]
//! factors = 7
//! tau0 = 1.0
//!
//! [sweep]
//! n_burnin = 25000
//! n_samples = 25000
//! thin = 10
//! n_chains = 4
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use barcode::data_model::HyperParams;
use barcode::gibbs::SweepConfig;
use serde::{Deserialize, Serialize};

use crate::{RunArgs, UsageError};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub counts: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub sites: Option<PathBuf>,
}

/// Which recovery study `simulate` runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    /// Recovery of `S`, growing n.
    S,
    /// Recovery of `C`, growing p.
    C,
    /// Coverage of `B`, growing n with covariates.
    B,
    #[default]
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateOptions {
    pub grid: Grid,
    pub replicates: usize,
    /// With both `n` and `p` set, one data set is generated and nothing is
    /// fitted.
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub covariates: bool,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions {
            grid: Grid::All,
            replicates: 25,
            n: None,
            p: None,
            covariates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvOptions {
    pub folds: usize,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions { folds: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SummarizeOptions {
    /// Posterior probability above which a coefficient's sign is reported.
    pub threshold: f64,
}

impl Default for SummarizeOptions {
    fn default() -> Self {
        SummarizeOptions { threshold: 0.95 }
    }
}

/// Fully resolved settings of one invocation. Written next to every output
/// so a run can be repeated from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataPaths,
    pub hypers: HyperParams,
    pub sweep: SweepConfig,
    pub simulate: SimulateOptions,
    pub cv: CvOptions,
    pub summarize: SummarizeOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            out: None,
            data: DataPaths::default(),
            hypers: HyperParams::default(),
            sweep: SweepConfig::default(),
            simulate: SimulateOptions::default(),
            cv: CvOptions::default(),
            summarize: SummarizeOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| anyhow::Error::new(UsageError(format!("invalid configuration: {e}"))))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Config file (if any) with the flags applied on top.
    pub fn resolve(args: &RunArgs) -> anyhow::Result<Self> {
        let mut cfg = match &args.config {
            Some(path) => Self::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = args.seed {
            cfg.seed = v;
        }
        if let Some(v) = &args.out {
            cfg.out = Some(v.clone());
        }
        if let Some(v) = &args.counts {
            cfg.data.counts = Some(v.clone());
        }
        if let Some(v) = &args.covariates {
            cfg.data.covariates = Some(v.clone());
        }
        if let Some(v) = &args.sites {
            cfg.data.sites = Some(v.clone());
        }
        if let Some(v) = args.chains {
            cfg.sweep.n_chains = v;
        }
        if let Some(v) = args.burnin {
            cfg.sweep.n_burnin = v;
        }
        if let Some(v) = args.samples {
            cfg.sweep.n_samples = v;
        }
        if let Some(v) = args.thin {
            cfg.sweep.thin = v;
        }
        if let Some(v) = args.factors {
            cfg.hypers.factors = v;
        }
        if args.no_spatial {
            cfg.sweep.spatial = false;
        }
        if let Some(v) = args.folds {
            cfg.cv.folds = v;
        }
        cfg.hypers
            .validate()
            .map_err(|e| UsageError(e.to_string()))?;
        cfg.sweep.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }

    pub fn counts_path(&self) -> anyhow::Result<&Path> {
        self.data
            .counts
            .as_deref()
            .ok_or_else(|| UsageError("a counts file is required (--counts or [data] counts)".into()).into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.hypers, HyperParams::default());
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 7\n[sweep]\nn_chains = 3\nthin = 5\n[hypers]\ntau0 = 10.0\n").unwrap();
        let args = RunArgs {
            config: Some(path),
            chains: Some(2),
            no_spatial: true,
            ..RunArgs::default()
        };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!((cfg.seed, cfg.sweep.n_chains, cfg.sweep.thin), (7, 2, 5));
        assert_eq!(cfg.hypers.tau0, 10.0);
        assert!(!cfg.sweep.spatial);
    }

    #[test]
    fn resolved_config_round_trips_through_json() {
        let cfg = RunConfig::resolve(&RunArgs::default()).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn grid_names_are_lowercase() {
        let cfg = RunConfig::from_toml("[simulate]\ngrid = \"c\"\nreplicates = 3\n").unwrap();
        assert_eq!((cfg.simulate.grid, cfg.simulate.replicates), (Grid::C, 3));
        assert!(RunConfig::from_toml("[simulate]\ngrid = \"z\"\n").is_err());
    }
}
