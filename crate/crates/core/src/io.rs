//! Artifact persistence: factor paths, pricing datasets, hedging runs,
//! metric tables and analysis series.
//!
//! Binary blobs are little-endian f64. Every writer returns the SHA-256 of
//! the bytes it wrote so callers can content-address artifacts.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::{AttributionRecord, MetricsRecord, ResidualSeries};
use crate::dtafns::{FactorPath, Measure, ModelParams};
use crate::hedging::HedgeRun;
use crate::mc_pricer::{DatasetConfig, PricingSample};
use crate::nn::sha256_hex;
use crate::{Error, Result};

const RUN_MAGIC: &[u8; 8] = b"SWHGRUN1";

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn f64_from_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!("{} bytes is not a whole number of f64", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect())
}

/// Writes `bytes` and returns their SHA-256.
pub fn write_hashed(path: &Path, bytes: &[u8]) -> Result<String> {
    std::fs::write(path, bytes)?;
    Ok(sha256_hex(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<String> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_hashed(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// SHA-256 of the canonical JSON of the parameter values.
pub fn params_hash(params: &ModelParams) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(params.values())?))
}

/// Sidecar of a binary factor path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorPathSidecar {
    pub seed: u64,
    pub index: u64,
    pub measure: Measure,
    pub start_month: u32,
    pub horizon: u32,
    pub rows: usize,
    pub cols: usize,
    pub sha256: String,
}

/// `<path>.bin` holds one row of three factors per month; `<path>.json` the sidecar.
pub fn write_factor_path(path: &Path, fp: &FactorPath) -> Result<FactorPathSidecar> {
    let flat: Vec<f64> = fp.factors.iter().flatten().copied().collect();
    let sha256 = write_hashed(&with_extension(path, "bin"), &f64_bytes(&flat))?;
    let sidecar = FactorPathSidecar {
        seed: fp.seed,
        index: fp.index,
        measure: fp.measure,
        start_month: fp.start_month,
        horizon: fp.horizon(),
        rows: fp.factors.len(),
        cols: 3,
        sha256,
    };
    write_json(&with_extension(path, "json"), &sidecar)?;
    Ok(sidecar)
}

pub fn read_factor_path(path: &Path) -> Result<FactorPath> {
    let sidecar: FactorPathSidecar = read_json(&with_extension(path, "json"))?;
    let bytes = std::fs::read(with_extension(path, "bin"))?;
    if sha256_hex(&bytes) != sidecar.sha256 {
        return Err(Error::Format("factor path does not match its sidecar hash".into()));
    }
    let flat = f64_from_bytes(&bytes)?;
    if sidecar.cols != 3 || flat.len() != sidecar.rows * 3 {
        return Err(Error::Format("factor path shape disagrees with its sidecar".into()));
    }
    Ok(FactorPath {
        factors: flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        start_month: sidecar.start_month,
        seed: sidecar.seed,
        index: sidecar.index,
        measure: sidecar.measure,
    })
}

/// Provenance of a pricing dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub params_hash: String,
    pub config: DatasetConfig,
    pub n_samples: usize,
    pub csv_sha256: String,
}

#[derive(Serialize, Deserialize)]
struct DatasetRow {
    x1: f64,
    x2: f64,
    x3: f64,
    ttm_months: u32,
    price: f64,
    stderr: f64,
}

fn dataset_csv(samples: &[PricingSample]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in samples {
        w.serialize(DatasetRow {
            x1: s.x[0],
            x2: s.x[1],
            x3: s.x[2],
            ttm_months: s.ttm_months,
            price: s.price,
            stderr: s.stderr,
        })?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// SHA-256 of the dataset's CSV encoding (its content address).
pub fn dataset_hash(samples: &[PricingSample]) -> Result<String> {
    Ok(sha256_hex(&dataset_csv(samples)?))
}

/// `<path>.csv` with header `x1,x2,x3,ttm_months,price,stderr` and `<path>.json` manifest.
pub fn write_dataset(path: &Path, samples: &[PricingSample], params: &ModelParams, config: &DatasetConfig) -> Result<DatasetManifest> {
    let csv_sha256 = write_hashed(&with_extension(path, "csv"), &dataset_csv(samples)?)?;
    let manifest = DatasetManifest {
        params_hash: params_hash(params)?,
        config: *config,
        n_samples: samples.len(),
        csv_sha256,
    };
    write_json(&with_extension(path, "json"), &manifest)?;
    Ok(manifest)
}

pub fn read_dataset(path: &Path) -> Result<(Vec<PricingSample>, DatasetManifest)> {
    let manifest: DatasetManifest = read_json(&with_extension(path, "json"))?;
    let bytes = std::fs::read(with_extension(path, "csv"))?;
    if sha256_hex(&bytes) != manifest.csv_sha256 {
        return Err(Error::Format("dataset does not match its manifest hash".into()));
    }
    let samples = csv::Reader::from_reader(bytes.as_slice())
        .deserialize::<DatasetRow>()
        .map(|row| {
            let r = row?;
            Ok(PricingSample {
                x: [r.x1, r.x2, r.x3],
                ttm_months: r.ttm_months,
                price: r.price,
                stderr: r.stderr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if samples.len() != manifest.n_samples {
        return Err(Error::Format("dataset row count disagrees with its manifest".into()));
    }
    Ok((samples, manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunHeader {
    horizon: u32,
    m: usize,
    v0: f64,
    n_paths: usize,
    has_ps: bool,
}

/// Hashes of the two files of a stored run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFiles {
    pub csv_sha256: String,
    pub bin_sha256: String,
}

#[derive(Serialize, Deserialize)]
struct RunRow {
    path_id: usize,
    h: f64,
    payoff: f64,
}

/// Binary encoding of a run (the content of `<path>.bin`).
pub fn encode_run(run: &HedgeRun) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&RunHeader {
        horizon: run.horizon,
        m: run.m,
        v0: run.v0,
        n_paths: run.n_paths(),
        has_ps: run.ps.is_some(),
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(RUN_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for block in [&run.h, &run.payoff, &run.phi, &run.v, &run.psi] {
        out.extend(f64_bytes(block));
    }
    if let Some(ps) = &run.ps {
        out.extend(f64_bytes(ps));
    }
    Ok(out)
}

/// `<path>.csv` (path id, terminal error, payoff) plus `<path>.bin` with the
/// full position, value and cash histories.
pub fn write_run(path: &Path, run: &HedgeRun) -> Result<RunFiles> {
    run.validate()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, (h, payoff)) in run.h.iter().zip(&run.payoff).enumerate() {
        w.serialize(RunRow {
            path_id: i,
            h: *h,
            payoff: *payoff,
        })?;
    }
    let csv_bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(RunFiles {
        csv_sha256: write_hashed(&with_extension(path, "csv"), &csv_bytes)?,
        bin_sha256: write_hashed(&with_extension(path, "bin"), &encode_run(run)?)?,
    })
}

/// Reads the binary history of a stored run.
pub fn read_run(path: &Path) -> Result<HedgeRun> {
    decode_run(&std::fs::read(with_extension(path, "bin"))?)
}

pub fn decode_run(bytes: &[u8]) -> Result<HedgeRun> {
    if bytes.len() < 16 || &bytes[..8] != RUN_MAGIC {
        return Err(Error::Format("not a hedging run file".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("eight bytes")) as usize;
    let body = bytes
        .get(16..16 + len)
        .ok_or_else(|| Error::Format("truncated run header".into()))?;
    let header: RunHeader = serde_json::from_slice(body)?;
    let data = f64_from_bytes(&bytes[16 + len..])?;
    let (n, t, m) = (header.n_paths, header.horizon as usize, header.m);
    let mut sizes = vec![n, n, n * t * m, n * (t + 1), n * t];
    if header.has_ps {
        sizes.push(n * (t + 1));
    }
    if data.len() != sizes.iter().sum::<usize>() {
        return Err(Error::Format("run body length disagrees with its header".into()));
    }
    let mut blocks = Vec::new();
    let mut at = 0;
    for s in sizes {
        blocks.push(data[at..at + s].to_vec());
        at += s;
    }
    let ps = header.has_ps.then(|| blocks.pop().expect("ps block"));
    let psi = blocks.pop().expect("psi block");
    let v = blocks.pop().expect("v block");
    let phi = blocks.pop().expect("phi block");
    let payoff = blocks.pop().expect("payoff block");
    let h = blocks.pop().expect("h block");
    let run = HedgeRun {
        horizon: header.horizon,
        m,
        v0: header.v0,
        h,
        payoff,
        phi,
        v,
        psi,
        ps,
    };
    run.validate()?;
    Ok(run)
}

/// Metrics CSV: `strategy` followed by the table columns, one row per strategy.
pub fn metrics_csv(rows: &[(String, MetricsRecord)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["Strategy"];
    header.extend(MetricsRecord::COLUMNS);
    w.write_record(&header)?;
    for (name, m) in rows {
        let mut rec = vec![name.clone()];
        rec.extend(m.values().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn write_metrics_csv(path: &Path, rows: &[(String, MetricsRecord)]) -> Result<String> {
    write_hashed(path, &metrics_csv(rows)?)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<(String, MetricsRecord)>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let expected: Vec<&str> = std::iter::once("Strategy").chain(MetricsRecord::COLUMNS).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format("unexpected metrics header".into()));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            let v: Vec<f64> = (1..9)
                .map(|k| rec[k].parse::<f64>().map_err(|e| Error::Format(format!("metrics value: {e}"))))
                .collect::<Result<_>>()?;
            Ok((
                rec[0].to_string(),
                MetricsRecord {
                    mean: v[0],
                    rmse: v[1],
                    rdr: v[2],
                    cvar99: v[3],
                    p_under: v[4],
                    hrr: v[5],
                    ti: v[6],
                    dte: v[7],
                },
            ))
        })
        .collect()
}

/// Markdown rendering of the metrics table, four decimals per cell.
pub fn metrics_markdown(rows: &[(String, MetricsRecord)]) -> String {
    let mut out = String::from("| Strategy |");
    for c in MetricsRecord::COLUMNS {
        out.push_str(&format!(" {c} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(MetricsRecord::COLUMNS.len()));
    out.push('\n');
    for (name, m) in rows {
        out.push_str(&format!("| {name} |"));
        for v in m.values() {
            out.push_str(&format!(" {v:.4} |"));
        }
        out.push('\n');
    }
    out
}

/// Long format: `subset,t,factor,mean,std,lower,upper` with half-std bands.
pub fn residual_csv(series: &ResidualSeries) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["subset", "n_paths", "t", "factor", "mean", "std", "lower", "upper"])?;
    for s in &series.subsets {
        for t in 0..series.horizon as usize {
            for k in 0..3 {
                let (mu, sd) = (s.mean[t][k], s.std[t][k]);
                w.write_record([
                    s.subset.label().to_string(),
                    s.n_paths.to_string(),
                    t.to_string(),
                    format!("X{}", k + 1),
                    mu.to_string(),
                    sd.to_string(),
                    (mu - 0.5 * sd).to_string(),
                    (mu + 0.5 * sd).to_string(),
                ])?;
            }
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Long format: `sample,output,feature,feature_value,shap`.
pub fn attribution_csv(rec: &AttributionRecord) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sample", "output", "feature", "feature_value", "shap"])?;
    for (i, x) in rec.samples.iter().enumerate() {
        for o in 0..rec.n_outputs {
            for (j, name) in rec.features.iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    o.to_string(),
                    name.clone(),
                    x[j].to_string(),
                    rec.value(i, j, o).to_string(),
                ])?;
            }
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}
