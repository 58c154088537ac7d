//! Reading input tables and writing / reading posterior archives.
//!
//! Input layout (comma separated, one header row):
//!
//! * counts: `sample_id,site_id,<species 1>,...,<species p>`, nonnegative
//!   integer counts;
//! * covariates: `sample_id,<covariate 1>,...`; an optional integer column
//!   named `year` is kept aside for per-year summaries instead of being used
//!   as a covariate;
//! * sites: `site_id,x,y` in projected (planar) units.
//!
//! An archive directory holds `manifest.json` plus, for every chain `k`, a
//! `chain_k/` directory with one CSV per tracked quantity (one row per
//! retained draw) and `loglik_trace.csv` (one row per sweep).

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::archive::{ChainArchive, Dims, Draw, PosteriorArchive};
use crate::data_model::{CountMatrix, CovariateMatrix, HyperParams};
use crate::error::{BarcodeError, Result};
use crate::gibbs::SweepConfig;
use crate::latent_regression::SiteGeometry;

/// Name of the optional per-sample year column in the covariates file.
pub const YEAR_COLUMN: &str = "year";

/// Everything read from the input tables, in the order of the counts file.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: CountMatrix,
    pub x: CovariateMatrix,
    pub geometry: Option<SiteGeometry>,
    pub sample_ids: Vec<String>,
    pub site_ids: Vec<String>,
    pub species: Vec<String>,
    pub years: Option<Vec<i64>>,
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| BarcodeError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn csv_error(path: &Path, err: csv::Error) -> BarcodeError {
    let row = err.position().map(|p| p.line() as usize);
    BarcodeError::data(row, format!("{}: {err}", path.display()))
}

fn headers(path: &Path, rdr: &mut csv::Reader<fs::File>) -> Result<Vec<String>> {
    Ok(rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect())
}

/// Reads the three input tables and checks that their ids agree. Without a
/// sites file, sites are numbered in order of first appearance and no
/// spatial geometry is returned. Without a covariates file the design is
/// intercept-only.
pub fn ingest(counts_path: &Path, covariates_path: Option<&Path>, sites_path: Option<&Path>) -> Result<Dataset> {
    // sites
    let mut site_index: HashMap<String, usize> = HashMap::new();
    let mut site_ids = Vec::new();
    let mut coords = Vec::new();
    if let Some(path) = sites_path {
        let mut rdr = reader(path)?;
        let head = headers(path, &mut rdr)?;
        if head.len() != 3 {
            return Err(BarcodeError::data(Some(1), "sites file needs columns site_id,x,y"));
        }
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            let line = rec.position().map(|p| p.line() as usize);
            let id = rec[0].to_string();
            if site_index.contains_key(&id) {
                return Err(BarcodeError::data(line, format!("duplicate site id {id}")));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| BarcodeError::data(line, format!("invalid coordinate {s:?}")))
            };
            coords.push([parse(&rec[1])?, parse(&rec[2])?]);
            site_index.insert(id.clone(), site_ids.len());
            site_ids.push(id);
        }
    }
    let fixed_sites = sites_path.is_some();

    // counts
    let mut rdr = reader(counts_path)?;
    let head = headers(counts_path, &mut rdr)?;
    if head.len() < 3 {
        return Err(BarcodeError::data(
            Some(1),
            "counts file needs columns sample_id,site_id and at least one species",
        ));
    }
    let species: Vec<String> = head[2..].to_vec();
    let p = species.len();
    let mut sample_ids = Vec::new();
    let mut sample_index: HashMap<String, usize> = HashMap::new();
    let mut site_of = Vec::new();
    let mut entries = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(counts_path, e))?;
        let line = rec.position().map(|p| p.line() as usize);
        if rec.len() != p + 2 {
            return Err(BarcodeError::data(line, format!("expected {} fields, found {}", p + 2, rec.len())));
        }
        let id = rec[0].to_string();
        if sample_index.contains_key(&id) {
            return Err(BarcodeError::data(line, format!("duplicate sample id {id}")));
        }
        let site = rec[1].to_string();
        let k = match site_index.get(&site) {
            Some(&k) => k,
            None if fixed_sites => {
                return Err(BarcodeError::data(line, format!("sample {id} refers to unknown site {site}")));
            }
            None => {
                site_index.insert(site.clone(), site_ids.len());
                site_ids.push(site);
                site_ids.len() - 1
            }
        };
        let i = sample_ids.len();
        for (j, field) in rec.iter().skip(2).enumerate() {
            let v: u32 = match field.parse::<i64>() {
                Ok(v) if v < 0 => {
                    return Err(BarcodeError::data(
                        line,
                        format!("negative count {v} for species {}", species[j]),
                    ))
                }
                Ok(v) => u32::try_from(v)
                    .map_err(|_| BarcodeError::data(line, format!("count {v} is too large")))?,
                Err(_) => {
                    return Err(BarcodeError::data(
                        line,
                        format!("non-integer count {field:?} for species {}", species[j]),
                    ))
                }
            };
            if v > 0 {
                entries.push((i, j, v));
            }
        }
        sample_index.insert(id.clone(), i);
        sample_ids.push(id);
        site_of.push(k);
    }
    let n = sample_ids.len();
    if n == 0 {
        return Err(BarcodeError::data(None, "counts file has no samples"));
    }
    let y = CountMatrix::from_triplets(n, p, entries, site_of)?;

    // covariates
    let (x, years) = match covariates_path {
        None => (CovariateMatrix::intercept(n), None),
        Some(path) => read_covariates(path, &sample_index)?,
    };

    let geometry = if fixed_sites {
        Some(SiteGeometry::new(coords)?)
    } else {
        None
    };
    Ok(Dataset {
        y,
        x,
        geometry,
        sample_ids,
        site_ids,
        species,
        years,
    })
}

fn read_covariates(
    path: &Path,
    sample_index: &HashMap<String, usize>,
) -> Result<(CovariateMatrix, Option<Vec<i64>>)> {
    let n = sample_index.len();
    let mut rdr = reader(path)?;
    let head = headers(path, &mut rdr)?;
    if head.is_empty() {
        return Err(BarcodeError::data(Some(1), "covariates file needs a sample_id column"));
    }
    let year_col = head.iter().position(|h| h == YEAR_COLUMN);
    let cov_cols: Vec<usize> = (1..head.len()).filter(|&c| Some(c) != year_col).collect();
    let names: Vec<String> = cov_cols.iter().map(|&c| head[c].clone()).collect();
    let mut columns = vec![vec![f64::NAN; n]; cov_cols.len()];
    let mut years = year_col.map(|_| vec![0i64; n]);
    let mut seen = vec![false; n];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line() as usize);
        if rec.len() != head.len() {
            return Err(BarcodeError::data(
                line,
                format!("expected {} fields, found {}", head.len(), rec.len()),
            ));
        }
        let id = &rec[0];
        let i = *sample_index
            .get(id)
            .ok_or_else(|| BarcodeError::data(line, format!("covariates for unknown sample {id}")))?;
        if seen[i] {
            return Err(BarcodeError::data(line, format!("duplicate sample id {id} in covariates")));
        }
        seen[i] = true;
        for (col, &c) in columns.iter_mut().zip(&cov_cols) {
            col[i] = rec[c]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    BarcodeError::data(line, format!("invalid value {:?} for covariate {}", &rec[c], head[c]))
                })?;
        }
        if let (Some(c), Some(ys)) = (year_col, years.as_mut()) {
            ys[i] = rec[c]
                .parse::<i64>()
                .map_err(|_| BarcodeError::data(line, format!("invalid year {:?}", &rec[c])))?;
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        let id = sample_index.iter().find(|(_, &v)| v == missing).map(|(k, _)| k.clone()).unwrap_or_default();
        return Err(BarcodeError::data(None, format!("no covariates for sample {id}")));
    }
    Ok((CovariateMatrix::from_columns(n, names, columns)?, years))
}

/// Writes a CSV file via a `.tmp` sibling that is renamed into place once
/// complete, so a failed write never leaves a truncated final file.
pub fn write_csv<H, R>(path: &Path, header: &[H], rows: R) -> Result<()>
where
    H: AsRef<str>,
    R: IntoIterator<Item = Vec<String>>,
{
    let tmp = tmp_path(path);
    let write = || -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(&tmp)?;
        w.write_record(header.iter().map(|h| h.as_ref()))?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(err) => BarcodeError::io(&tmp, err),
        other => BarcodeError::data(None, format!("{}: {other:?}", tmp.display())),
    })?;
    fs::rename(&tmp, path).map_err(|e| BarcodeError::io(path, e))
}

/// Writes `contents` via a `.tmp` sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, contents).map_err(|e| BarcodeError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| BarcodeError::io(path, e))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes a counts file in the ingest layout.
pub fn write_counts(path: &Path, y: &CountMatrix, sample_ids: &[String], site_ids: &[String], species: &[String]) -> Result<()> {
    let mut header = vec!["sample_id".to_string(), "site_id".to_string()];
    header.extend(species.iter().cloned());
    let dense = y.to_dense();
    let rows = dense.iter().enumerate().map(|(i, row)| {
        let mut r = vec![sample_ids[i].clone(), site_ids[y.site_of()[i]].clone()];
        r.extend(row.iter().map(|v| v.to_string()));
        r
    });
    write_csv(path, &header, rows)
}

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainManifest {
    pub chain: usize,
    pub seed: u64,
    pub stream_id: u64,
    pub sweeps_completed: usize,
    pub n_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub software_version: String,
    pub seed: u64,
    pub dims: Dims,
    pub hypers: HyperParams,
    pub config: SweepConfig,
    pub site_of: Vec<usize>,
    pub covariate_names: Vec<String>,
    pub chains: Vec<ChainManifest>,
}

struct Quantity {
    file: &'static str,
    prefix: &'static str,
    rows: fn(&Dims) -> usize,
    cols: fn(&Dims) -> usize,
}

const QUANTITIES: [Quantity; 7] = [
    Quantity { file: "C.csv", prefix: "c", rows: |d| d.n, cols: |d| d.l },
    Quantity { file: "Phi.csv", prefix: "phi", rows: |d| d.n, cols: |d| d.l },
    Quantity { file: "S.csv", prefix: "s", rows: |d| d.p, cols: |d| d.l },
    Quantity { file: "Gamma.csv", prefix: "gamma", rows: |d| d.p, cols: |d| d.l },
    Quantity { file: "B.csv", prefix: "beta", rows: |d| d.l, cols: |d| d.q },
    Quantity { file: "Xi.csv", prefix: "xi", rows: |d| d.l, cols: |d| d.m },
    Quantity { file: "nu.csv", prefix: "nu", rows: |_| 1, cols: |d| d.l },
];

fn quantity_values(d: &Draw, index: usize) -> Vec<String> {
    // f64 Display is the shortest string that parses back to the same value
    match index {
        0 => d.c.iter().map(|v| v.to_string()).collect(),
        1 => d.phi.iter().map(|v| v.to_string()).collect(),
        2 => d.s.iter().map(|v| v.to_string()).collect(),
        3 => d.gamma.iter().map(|v| v.to_string()).collect(),
        4 => d.beta.iter().map(|v| v.to_string()).collect(),
        5 => d.xi.iter().map(|v| v.to_string()).collect(),
        _ => d.nu.iter().map(|v| v.to_string()).collect(),
    }
}

fn chain_dir(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!("chain_{chain}"))
}

/// Writes `archive` into `dir` (created if needed) and returns its manifest.
/// The manifest is written last.
pub fn serialize_archive(archive: &PosteriorArchive, dir: &Path) -> Result<Manifest> {
    let d = archive.dims;
    fs::create_dir_all(dir).map_err(|e| BarcodeError::io(dir, e))?;
    for chain in &archive.chains {
        let cdir = chain_dir(dir, chain.chain);
        fs::create_dir_all(&cdir).map_err(|e| BarcodeError::io(&cdir, e))?;
        write_csv(
            &cdir.join("loglik_trace.csv"),
            &["sweep", "loglik"],
            chain
                .loglik_trace
                .iter()
                .enumerate()
                .map(|(t, v)| vec![t.to_string(), v.to_string()]),
        )?;
        write_csv(
            &cdir.join("draws.csv"),
            &["sweep", "loglik", "psi"],
            chain
                .draws
                .iter()
                .map(|dr| vec![dr.sweep.to_string(), dr.loglik.to_string(), dr.psi.to_string()]),
        )?;
        for (qi, q) in QUANTITIES.iter().enumerate() {
            let (rows, cols) = ((q.rows)(&d), (q.cols)(&d));
            let header: Vec<String> = (0..rows)
                .flat_map(|r| (0..cols).map(move |c| (r, c)))
                .map(|(r, c)| {
                    if rows == 1 {
                        format!("{}_{c}", q.prefix)
                    } else {
                        format!("{}_{r}_{c}", q.prefix)
                    }
                })
                .collect();
            write_csv(
                &cdir.join(q.file),
                &header,
                chain.draws.iter().map(|dr| quantity_values(dr, qi)),
            )?;
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: archive.seed,
        dims: d,
        hypers: archive.hypers.clone(),
        config: archive.config.clone(),
        site_of: archive.site_of.clone(),
        covariate_names: archive.covariate_names.clone(),
        chains: archive
            .chains
            .iter()
            .map(|c| ChainManifest {
                chain: c.chain,
                seed: c.seed,
                stream_id: c.stream_id,
                sweeps_completed: c.sweeps_completed,
                n_draws: c.draws.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| BarcodeError::Numerical(format!("manifest encoding: {e}")))?;
    write_atomic(&dir.join(MANIFEST), &json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| BarcodeError::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| BarcodeError::data(None, format!("{}: {e}", path.display())))
}

fn read_table<T: std::str::FromStr>(path: &Path, width: usize, rows: usize) -> Result<Vec<Vec<T>>> {
    let mut rdr = reader(path)?;
    let mut out = Vec::with_capacity(rows);
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line() as usize);
        if rec.len() != width && !(width == 0 && rec.len() == 1 && rec[0].is_empty()) {
            return Err(BarcodeError::data(
                line,
                format!("{}: expected {width} fields, found {}", path.display(), rec.len()),
            ));
        }
        let row = rec
            .iter()
            .take(width)
            .map(|s| {
                s.parse::<T>()
                    .map_err(|_| BarcodeError::data(line, format!("{}: invalid number {s:?}", path.display())))
            })
            .collect::<Result<Vec<T>>>()?;
        out.push(row);
    }
    if out.len() != rows {
        return Err(BarcodeError::data(
            None,
            format!("{}: expected {rows} rows, found {}", path.display(), out.len()),
        ));
    }
    Ok(out)
}

/// Reads an archive written by [`serialize_archive`].
pub fn load_archive(dir: &Path) -> Result<PosteriorArchive> {
    let m = read_manifest(dir)?;
    let d = m.dims;
    let mut chains = Vec::with_capacity(m.chains.len());
    for cm in &m.chains {
        let cdir = chain_dir(dir, cm.chain);
        let trace: Vec<Vec<f64>> = read_table(&cdir.join("loglik_trace.csv"), 2, cm.sweeps_completed)?;
        let meta: Vec<Vec<f64>> = read_table(&cdir.join("draws.csv"), 3, cm.n_draws)?;
        let width = |q: &Quantity| (q.rows)(&d) * (q.cols)(&d);
        let c: Vec<Vec<u8>> = read_table(&cdir.join(QUANTITIES[0].file), width(&QUANTITIES[0]), cm.n_draws)?;
        let phi: Vec<Vec<f64>> = read_table(&cdir.join(QUANTITIES[1].file), width(&QUANTITIES[1]), cm.n_draws)?;
        let s: Vec<Vec<u8>> = read_table(&cdir.join(QUANTITIES[2].file), width(&QUANTITIES[2]), cm.n_draws)?;
        let gamma: Vec<Vec<f64>> = read_table(&cdir.join(QUANTITIES[3].file), width(&QUANTITIES[3]), cm.n_draws)?;
        let beta: Vec<Vec<f64>> = read_table(&cdir.join(QUANTITIES[4].file), width(&QUANTITIES[4]), cm.n_draws)?;
        let xi: Vec<Vec<f64>> = read_table(&cdir.join(QUANTITIES[5].file), width(&QUANTITIES[5]), cm.n_draws)?;
        let nu: Vec<Vec<f64>> = read_table(&cdir.join(QUANTITIES[6].file), width(&QUANTITIES[6]), cm.n_draws)?;
        let draws = (0..cm.n_draws)
            .map(|t| Draw {
                sweep: meta[t][0] as usize,
                loglik: meta[t][1],
                psi: meta[t][2],
                c: c[t].clone(),
                phi: phi[t].clone(),
                s: s[t].clone(),
                gamma: gamma[t].clone(),
                beta: beta[t].clone(),
                xi: xi[t].clone(),
                nu: nu[t].clone(),
            })
            .collect();
        chains.push(ChainArchive {
            chain: cm.chain,
            seed: cm.seed,
            stream_id: cm.stream_id,
            sweeps_completed: cm.sweeps_completed,
            loglik_trace: trace.iter().map(|r| r[1]).collect(),
            draws,
        });
    }
    Ok(PosteriorArchive {
        dims: d,
        seed: m.seed,
        hypers: m.hypers,
        config: m.config,
        site_of: m.site_of,
        covariate_names: m.covariate_names,
        chains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tmp_suffix_is_appended() {
        assert_eq!(tmp_path(Path::new("/a/b/c.csv")), PathBuf::from("/a/b/c.csv.tmp"));
    }
}
