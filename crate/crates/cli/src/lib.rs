//! Command surface of the `barcode` binary.
//!
//! `fit` writes an archive directory; `diagnose`, `cluster` and `summarize`
//! read one. `simulate` and `predict-cv` fit internally.

pub mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use barcode::io::{self, ingest, load_archive, serialize_archive, write_atomic, write_csv, Dataset};
use barcode::posthoc::{
    align_chains, barcode_clusters, covariate_signs, cv_predict, factor_presence, presence_by_year, psrf_table,
    regions_of_common_profile, variance_explained, PsrfRow,
};
use barcode::simulation::{
    b_recovery_grid, c_recovery_grid, generate, run_scenario, s_recovery_grid, ReplicateMetrics, SimScenario, SimTruth,
};
use barcode::{fit, BarcodeError, PosteriorArchive, RngStream};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use config::RunConfig;
use config::Grid;

/// Bad flags or configuration. Maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Exit code for an error: 2 usage, 3 data, 4 numerical abort, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<BarcodeError>() {
            return match e {
                BarcodeError::InvalidParameter(_) => EXIT_USAGE,
                BarcodeError::Data { .. } | BarcodeError::Io { .. } | BarcodeError::Shape(_) => EXIT_DATA,
                BarcodeError::Numerical(_) | BarcodeError::Aborted { .. } | BarcodeError::Inadmissible(_) => {
                    EXIT_NUMERICAL
                }
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_DATA;
        }
    }
    1
}

#[derive(Debug, Parser)]
#[command(name = "barcode", version, about = "Sparse Bayesian Poisson factorization of species counts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the Gibbs sampler and write a posterior archive.
    Fit(RunArgs),
    /// Generate synthetic data, or run the recovery study.
    Simulate {
        #[command(flatten)]
        args: RunArgs,
        /// Recovery study to run.
        #[arg(long, value_enum)]
        grid: Option<Grid>,
        /// Replicates per grid cell.
        #[arg(long)]
        replicates: Option<usize>,
        /// Samples of a single generated data set (with --p).
        #[arg(long)]
        n: Option<usize>,
        /// Species of a single generated data set (with --n).
        #[arg(long)]
        p: Option<usize>,
        /// Draw covariates and generate switches from the probit layer.
        #[arg(long)]
        with_covariates: bool,
    },
    /// PSRF table of an archive.
    Diagnose(ArchiveArgs),
    /// Barcode clusters and regions of common profile.
    Cluster(ArchiveArgs),
    /// K-fold cross-validated prediction error.
    PredictCv(RunArgs),
    /// Factor presence, per-year strengths and covariate signs.
    Summarize {
        #[command(flatten)]
        archive: ArchiveArgs,
        /// Counts file for the variance-explained table.
        #[arg(long)]
        counts: Option<PathBuf>,
        /// Posterior probability for a definite coefficient sign.
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Number of factors, reference included.
    #[arg(long)]
    pub factors: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Drop the spatial effects (covariates-only probit).
    #[arg(long)]
    pub no_spatial: bool,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub counts: Option<PathBuf>,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    #[arg(long)]
    pub sites: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ArchiveArgs {
    /// Archive directory written by `fit`.
    pub archive: PathBuf,
    /// Output directory (defaults to the archive directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Labels kept next to an archive so reports can name samples and species.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Labels {
    pub sample_ids: Vec<String>,
    pub site_ids: Vec<String>,
    pub species: Vec<String>,
    pub years: Option<Vec<i64>>,
}

pub const LABELS: &str = "labels.json";
pub const RUN_CONFIG: &str = "run_config.json";
const DEFAULT_OUT: &str = "barcode_out";

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(args) => cmd_fit(&RunConfig::resolve(&args)?),
        Command::Simulate {
            args,
            grid,
            replicates,
            n,
            p,
            with_covariates,
        } => {
            let mut cfg = RunConfig::resolve(&args)?;
            if let Some(g) = grid {
                cfg.simulate.grid = g;
            }
            if let Some(r) = replicates {
                cfg.simulate.replicates = r;
            }
            cfg.simulate.n = n.or(cfg.simulate.n);
            cfg.simulate.p = p.or(cfg.simulate.p);
            cfg.simulate.covariates |= with_covariates;
            cmd_simulate(&cfg)
        }
        Command::Diagnose(a) => cmd_diagnose(&a),
        Command::Cluster(a) => cmd_cluster(&a),
        Command::PredictCv(args) => cmd_predict_cv(&RunConfig::resolve(&args)?),
        Command::Summarize {
            archive,
            counts,
            threshold,
        } => cmd_summarize(&archive, counts.as_deref(), threshold.unwrap_or(0.95)),
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    write_atomic(path, &bytes)?;
    Ok(())
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    Ok(ingest(
        cfg.counts_path()?,
        cfg.data.covariates.as_deref(),
        cfg.data.sites.as_deref(),
    )?)
}

fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let dir = out_dir(cfg)?;
    eprintln!(
        "fitting n={} p={} L={} with {} chain(s) of {}+{} sweeps",
        data.y.n(),
        data.y.p(),
        cfg.hypers.factors,
        cfg.sweep.n_chains,
        cfg.sweep.n_burnin,
        cfg.sweep.n_samples
    );
    let archive = fit(&data.y, &data.x, data.geometry.as_ref(), &cfg.hypers, &cfg.sweep, cfg.seed)?;
    let manifest = serialize_archive(&archive, &dir)?;
    write_json(
        &dir.join(LABELS),
        &Labels {
            sample_ids: data.sample_ids,
            site_ids: data.site_ids,
            species: data.species,
            years: data.years,
        },
    )?;
    write_json(&dir.join(RUN_CONFIG), cfg)?;
    println!(
        "wrote {} draws from {} chain(s) to {}",
        archive.n_draws(),
        manifest.chains.len(),
        dir.display()
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "NA".into())
}

fn psrf_rows(rows: &[PsrfRow]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.group.clone(),
                r.n_params.to_string(),
                r.n_undefined.to_string(),
                fmt_opt(r.q025),
                fmt_opt(r.median),
                fmt_opt(r.q975),
            ]
        })
        .collect()
}

fn analysis_dir(a: &ArchiveArgs) -> Result<PathBuf> {
    let dir = a.out.clone().unwrap_or_else(|| a.archive.clone());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_labels(dir: &Path, archive: &PosteriorArchive) -> Labels {
    let read = fs::read(dir.join(LABELS))
        .ok()
        .and_then(|b| serde_json::from_slice::<Labels>(&b).ok());
    read.unwrap_or_else(|| {
        let m = archive.site_of.iter().map(|&k| k + 1).max().unwrap_or(0);
        Labels {
            sample_ids: (0..archive.dims.n).map(|i| format!("sample{i}")).collect(),
            site_ids: (0..m).map(|k| format!("site{k}")).collect(),
            species: (0..archive.dims.p).map(|j| format!("species{j}")).collect(),
            years: None,
        }
    })
}

pub fn cmd_diagnose(a: &ArchiveArgs) -> Result<()> {
    // factor labels are arbitrary per chain
    let archive = align_chains(&load_archive(&a.archive)?)?;
    if archive.chains.len() < 2 {
        return Err(UsageError("diagnostics need an archive with at least two chains".into()).into());
    }
    let rows = psrf_table(&archive)?;
    let header = ["group", "n_params", "n_undefined", "q2.5", "median", "q97.5"];
    let table = psrf_rows(&rows);
    write_csv(&analysis_dir(a)?.join("psrf.csv"), &header, table.clone())?;
    println!("{}", header.join("\t"));
    for r in table {
        println!("{}", r.join("\t"));
    }
    Ok(())
}

pub fn cmd_cluster(a: &ArchiveArgs) -> Result<()> {
    let archive = load_archive(&a.archive)?;
    let labels = load_labels(&a.archive, &archive);
    let dir = analysis_dir(a)?;
    let report = barcode_clusters(&archive)?;
    let bits = |b: &[u8]| b.iter().map(|v| v.to_string()).collect::<String>();
    write_csv(
        &dir.join("clusters.csv"),
        &["cluster", "size", "barcode", "specialist", "generalist", "species"],
        report.clusters.iter().enumerate().map(|(c, cl)| {
            vec![
                c.to_string(),
                cl.members.len().to_string(),
                bits(&cl.barcode),
                cl.specialist.to_string(),
                cl.generalist.to_string(),
                cl.members.iter().map(|&j| labels.species[j].as_str()).collect::<Vec<_>>().join(";"),
            ]
        }),
    )?;
    write_csv(
        &dir.join("species_barcodes.csv"),
        &["species", "barcode", "cluster"],
        (0..archive.dims.p).map(|j| {
            vec![labels.species[j].clone(), bits(&report.barcodes[j]), report.labels[j].to_string()]
        }),
    )?;
    let regions = regions_of_common_profile(&archive);
    write_csv(
        &dir.join("regions.csv"),
        &["site_id", "factor"],
        regions.iter().enumerate().map(|(k, f)| {
            vec![
                labels.site_ids.get(k).cloned().unwrap_or_else(|| k.to_string()),
                f.map(|v| v.to_string()).unwrap_or_else(|| "NA".into()),
            ]
        }),
    )?;
    let occupied = report.clusters.iter().filter(|c| c.barcode.iter().any(|&v| v == 1)).count();
    println!("{} species in {occupied} occupied barcode clusters", archive.dims.p);
    for (c, cl) in report.clusters.iter().enumerate() {
        println!("{c}\t{}\t{}", bits(&cl.barcode), cl.members.len());
    }
    Ok(())
}

pub fn cmd_summarize(a: &ArchiveArgs, counts: Option<&Path>, threshold: f64) -> Result<()> {
    if !(0.5..1.0).contains(&threshold) {
        return Err(UsageError(format!("threshold {threshold} must lie in [0.5, 1)")).into());
    }
    let archive = load_archive(&a.archive)?;
    let labels = load_labels(&a.archive, &archive);
    let dir = analysis_dir(a)?;
    let l = archive.dims.l;

    let presence = factor_presence(&archive);
    write_csv(
        &dir.join("factor_presence.csv"),
        &["factor", "percent_present"],
        presence.iter().enumerate().map(|(k, v)| vec![k.to_string(), format!("{v:.2}")]),
    )?;
    println!("factor\tpercent present");
    for (k, v) in presence.iter().enumerate() {
        println!("{k}\t{v:.1}");
    }

    if let Some(years) = &labels.years {
        let rows = presence_by_year(&archive, years)?;
        let mut header = vec!["year".to_string(), "n_samples".to_string()];
        header.extend((0..l).map(|k| format!("present_{k}")));
        header.extend((1..l).map(|k| format!("strength_{k}")));
        write_csv(
            &dir.join("presence_by_year.csv"),
            &header,
            rows.iter().map(|r| {
                let mut row = vec![r.year.to_string(), r.n_samples.to_string()];
                row.extend(r.presence.iter().map(|v| format!("{v:.2}")));
                row.extend(r.relative_strength[1..].iter().map(|v| format!("{v:.4}")));
                row
            }),
        )?;
    }

    let signs = covariate_signs(&archive, threshold);
    write_csv(
        &dir.join("covariate_signs.csv"),
        &["factor", "covariate", "mean", "prob_positive", "sign"],
        signs.iter().map(|s| {
            vec![
                s.factor.to_string(),
                s.covariate.clone(),
                format!("{:.4}", s.mean),
                format!("{:.4}", s.prob_positive),
                s.sign.to_string(),
            ]
        }),
    )?;

    if let Some(path) = counts {
        let data = ingest(path, None, None)?;
        let fits = variance_explained(&data.y, &archive)?;
        write_csv(
            &dir.join("variance_explained.csv"),
            &["species", "expectation_ratio", "variance_ratio"],
            fits.iter().enumerate().map(|(j, f)| {
                vec![
                    labels.species.get(j).cloned().unwrap_or_else(|| j.to_string()),
                    fmt_opt(f.expectation_ratio),
                    fmt_opt(f.variance_ratio),
                ]
            }),
        )?;
    }
    Ok(())
}

fn cmd_predict_cv(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let dir = out_dir(cfg)?;
    let folds = cv_predict(
        &data.y,
        &data.x,
        data.geometry.as_ref(),
        &cfg.hypers,
        &cfg.sweep,
        cfg.cv.folds,
        cfg.seed,
    )?;
    write_csv(
        &dir.join("cv.csv"),
        &["fold", "n_train", "n_test", "rmse", "max_prediction", "bound"],
        folds.iter().map(|f| {
            vec![
                f.fold.to_string(),
                f.n_train.to_string(),
                f.n_test.to_string(),
                f.rmse.to_string(),
                f.max_prediction.to_string(),
                f.bound.to_string(),
            ]
        }),
    )?;
    write_json(&dir.join(RUN_CONFIG), cfg)?;
    println!("fold\trmse");
    for f in &folds {
        println!("{}\t{:.4}", f.fold, f.rmse);
    }
    let mean = folds.iter().map(|f| f.rmse).sum::<f64>() / folds.len() as f64;
    println!("mean\t{mean:.4}");
    Ok(())
}

fn write_truth(dir: &Path, y: &barcode::CountMatrix, truth: &SimTruth) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let sample_ids: Vec<String> = (0..truth.n).map(|i| format!("s{i}")).collect();
    let site_ids = vec!["site0".to_string()];
    let species: Vec<String> = (0..truth.p).map(|j| format!("sp{j}")).collect();
    io::write_counts(&dir.join("counts.csv"), y, &sample_ids, &site_ids, &species)?;
    let q = truth.x.q();
    if q > 1 {
        let names = &truth.x.names()[1..];
        let mut header = vec!["sample_id".to_string()];
        header.extend(names.iter().cloned());
        write_csv(
            &dir.join("covariates.csv"),
            &header,
            (0..truth.n).map(|i| {
                let mut row = vec![sample_ids[i].clone()];
                row.extend(truth.x.row(i)[1..].iter().map(|v| v.to_string()));
                row
            }),
        )?;
    }
    let matrix = |name: &str, rows: usize, cols: usize, values: Vec<String>| -> Result<()> {
        let header: Vec<String> = (0..cols).map(|k| format!("f{k}")).collect();
        write_csv(
            &dir.join(name),
            &header,
            (0..rows).map(|r| values[r * cols..(r + 1) * cols].to_vec()),
        )?;
        Ok(())
    };
    let l = truth.l;
    let s = |v: &[u8]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let f = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    matrix("truth_C.csv", truth.n, l, s(&truth.c))?;
    matrix("truth_Phi.csv", truth.n, l, f(&truth.phi))?;
    matrix("truth_S.csv", truth.p, l, s(&truth.s))?;
    matrix("truth_Gamma.csv", truth.p, l, f(&truth.gamma))?;
    if let Some(beta) = &truth.beta {
        matrix("truth_B.csv", l, q, f(beta))?;
    }
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let dir = out_dir(cfg)?;
    let opts = &cfg.simulate;
    match (opts.n, opts.p) {
        (Some(n), Some(p)) => {
            let sc = SimScenario {
                l: cfg.hypers.factors,
                with_covariates: opts.covariates,
                ..SimScenario::new(n, p, cfg.seed)
            };
            let (y, truth) = generate(&sc, &mut RngStream::new(cfg.seed, 0))?;
            write_truth(&dir, &y, &truth)?;
            write_json(&dir.join(RUN_CONFIG), cfg)?;
            println!("wrote a synthetic data set (n={n}, p={p}, L={}) to {}", sc.l, dir.display());
            return Ok(());
        }
        (None, None) => {}
        _ => return Err(UsageError("--n and --p must be given together".into()).into()),
    }

    let mut cells: Vec<(&str, SimScenario)> = Vec::new();
    let grids: &[(Grid, &str, fn(u64) -> Vec<SimScenario>)] =
        &[(Grid::S, "S", s_recovery_grid), (Grid::C, "C", c_recovery_grid), (Grid::B, "B", b_recovery_grid)];
    for (g, name, make) in grids {
        if opts.grid == *g || opts.grid == Grid::All {
            for mut sc in make(cfg.seed) {
                sc.n_replicates = opts.replicates;
                cells.push((name, sc));
            }
        }
    }
    let mut rows: Vec<(String, ReplicateMetrics)> = Vec::new();
    for (name, sc) in &cells {
        eprintln!("grid {name}: n={} p={} ({} replicates)", sc.n, sc.p, sc.n_replicates);
        // one data set per cell, for inspection
        let (y, truth) = generate(sc, &mut RngStream::new(sc.seed, 1_000))?;
        write_truth(&dir.join(format!("data_{name}_n{}_p{}", sc.n, sc.p)), &y, &truth)?;
        let metrics = run_scenario(sc, &cfg.hypers, &cfg.sweep)?;
        rows.extend(metrics.into_iter().map(|m| (name.to_string(), m)));
    }
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into());
    write_csv(
        &dir.join("metrics.csv"),
        &["grid", "n", "p", "replicate", "s_error", "c_error", "b_coverage", "b_width"],
        rows.iter().map(|(g, m)| {
            vec![
                g.clone(),
                m.n.to_string(),
                m.p.to_string(),
                m.replicate.to_string(),
                m.s_error.to_string(),
                m.c_error.to_string(),
                opt(m.b_coverage),
                opt(m.b_width),
            ]
        }),
    )?;
    write_json(&dir.join(RUN_CONFIG), cfg)?;
    println!("grid\tn\tp\tmedian S error\tmedian C error");
    for (name, sc) in &cells {
        let of_cell: Vec<&ReplicateMetrics> =
            rows.iter().filter(|(g, m)| g == name && m.n == sc.n && m.p == sc.p).map(|(_, m)| m).collect();
        let med = |f: &dyn Fn(&ReplicateMetrics) -> f64| {
            let mut v: Vec<f64> = of_cell.iter().map(|m| f(m)).collect();
            v.sort_by(f64::total_cmp);
            if v.is_empty() {
                f64::NAN
            } else {
                v[v.len() / 2]
            }
        };
        println!("{name}\t{}\t{}\t{:.4}\t{:.4}", sc.n, sc.p, med(&|m| m.s_error), med(&|m| m.c_error));
    }
    Ok(())
}
