//! On-disk formats for datasets, fitted models and result tables.
//!
//! A dataset directory holds `manifest.json`, `covs.bin` (little-endian
//! `f64`, observation-major, then band, then row-major matrix),
//! `targets.csv` (`index,target[,group]`) and optionally `truth.json`.
//! A model directory holds `model.json` and `refs.bin`, whose matrices are
//! located by byte offsets declared in the JSON. Every file is written to a
//! temporary name and renamed into place.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariance::SpatialReducer;
use crate::dataset::{CovarianceDataset, GroundTruth, TargetKind};
use crate::error::{Error, Result};
use crate::evaluation::CvReport;
use crate::linmodel::{LinearHead, Standardizer};
use crate::manifold::{SpdMatrix, SymmetricMatrix};
use crate::patterns::{PatternSet, Significance};
use crate::pipelines::{BandModel, FittedPipeline, Method, PipelineConfig};
use crate::simulation::SweepRow;

pub const FORMAT_VERSION: u32 = 1;
const BYTE_ORDER: &str = "little";
const DTYPE: &str = "float64";

/// Shortest text that parses back to the same `f64` with 17 significant
/// digits (`NaN`, `inf` and `-inf` for non-finite values).
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_path(path);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn f64s_to_le(values: impl IntoIterator<Item = f64>, out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn le_to_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect()
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn check_version(version: u32, what: &str) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{what} has format_version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }
    Ok(())
}

fn check_encoding(byte_order: &str, dtype: &str) -> Result<()> {
    if byte_order != BYTE_ORDER || dtype != DTYPE {
        return Err(Error::Format(format!(
            "unsupported binary layout {byte_order}/{dtype}, expected {BYTE_ORDER}/{DTYPE}"
        )));
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub n_obs: usize,
    pub n_channels: usize,
    pub n_bands: usize,
    pub target_kind: TargetKind,
    pub has_groups: bool,
    pub has_truth: bool,
    pub byte_order: String,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthFile {
    /// Mixing matrix, row-major.
    #[serde(rename = "A")]
    a: Vec<f64>,
    b: Vec<f64>,
    b0: f64,
    q: usize,
}

pub fn write_dataset(dir: &Path, ds: &CovarianceDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        n_obs: ds.n_obs(),
        n_channels: ds.n_channels(),
        n_bands: ds.n_bands(),
        target_kind: ds.target_kind(),
        has_groups: ds.groups().is_some(),
        has_truth: ds.truth().is_some(),
        byte_order: BYTE_ORDER.into(),
        dtype: DTYPE.into(),
    };

    let p = ds.n_channels();
    let mut covs = Vec::with_capacity(ds.covariances().len() * p * p * 8);
    for c in ds.covariances() {
        f64s_to_le(row_major(c.as_matrix()), &mut covs);
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    if ds.groups().is_some() {
        w.write_record(["index", "target", "group"])?;
    } else {
        w.write_record(["index", "target"])?;
    }
    for (i, y) in ds.targets().iter().enumerate() {
        let mut record = vec![i.to_string(), fmt_f64(*y)];
        if let Some(g) = ds.groups() {
            record.push(g[i].clone());
        }
        w.write_record(&record)?;
    }
    let targets = w
        .into_inner()
        .map_err(|e| Error::Format(format!("targets.csv: {e}")))?;

    write_atomic(&dir.join("covs.bin"), &covs)?;
    write_atomic(&dir.join("targets.csv"), &targets)?;
    if let Some(t) = ds.truth() {
        let truth = TruthFile {
            a: row_major(&t.mixing),
            b: t.weights.clone(),
            b0: t.bias,
            q: t.n_sources,
        };
        write_atomic(&dir.join("truth.json"), &to_json(&truth)?)?;
    }
    write_atomic(&dir.join("manifest.json"), &to_json(&manifest)?)
}

pub fn read_dataset(dir: &Path) -> Result<CovarianceDataset> {
    let manifest: DatasetManifest = read_json(&dir.join("manifest.json"))?;
    check_version(manifest.format_version, "dataset")?;
    check_encoding(&manifest.byte_order, &manifest.dtype)?;
    let (n, p, b) = (manifest.n_obs, manifest.n_channels, manifest.n_bands);

    let bytes = fs::read(dir.join("covs.bin"))?;
    let expected = n * b * p * p * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "covs.bin has {} bytes, manifest implies {expected}",
            bytes.len()
        )));
    }
    let values = le_to_f64s(&bytes);
    let covariances = values
        .chunks_exact(p * p)
        .map(|m| SymmetricMatrix::from_row_slice(p, m))
        .collect::<Result<Vec<_>>>()?;

    let mut reader = csv::Reader::from_path(dir.join("targets.csv"))?;
    let headers = reader.headers()?.clone();
    let expected_headers: &[&str] = if manifest.has_groups {
        &["index", "target", "group"]
    } else {
        &["index", "target"]
    };
    if headers.iter().collect::<Vec<_>>() != expected_headers {
        return Err(Error::Format(format!(
            "targets.csv header must be `{}`",
            expected_headers.join(",")
        )));
    }
    let mut targets = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let index: usize = record[0]
            .parse()
            .map_err(|_| Error::Format(format!("targets.csv row {row}: bad index `{}`", &record[0])))?;
        if index != row {
            return Err(Error::Format(format!("targets.csv row {row} has index {index}")));
        }
        let y: f64 = record[1]
            .parse()
            .map_err(|_| Error::Format(format!("targets.csv row {row}: bad target `{}`", &record[1])))?;
        targets.push(y);
        if manifest.has_groups {
            groups.push(record[2].to_string());
        }
    }
    if targets.len() != n {
        return Err(Error::Format(format!(
            "targets.csv has {} rows, manifest declares {n}",
            targets.len()
        )));
    }

    let mut ds = CovarianceDataset::new(p, b, covariances, targets, manifest.target_kind)?;
    if manifest.has_groups {
        ds = ds.with_groups(groups)?;
    }
    if manifest.has_truth {
        let t: TruthFile = read_json(&dir.join("truth.json"))?;
        if t.a.len() != p * p {
            return Err(Error::Format(format!("truth.json: A has {} entries, expected {}", t.a.len(), p * p)));
        }
        ds = ds.with_truth(GroundTruth {
            mixing: DMatrix::from_row_slice(p, p, &t.a),
            weights: t.b,
            bias: t.b0,
            n_sources: t.q,
        })?;
    }
    Ok(ds)
}

/// Location of a row-major matrix inside `refs.bin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blob {
    /// Byte offset.
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum BandFile {
    Riemann {
        reference: Blob,
        reducer: Option<Blob>,
    },
    Filters {
        filters: Blob,
        eigenvalues: Vec<f64>,
    },
    Diag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StandardizerFile {
    means: Vec<f64>,
    stds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    method: Method,
    n_channels: usize,
    n_bands: usize,
    feature_len: usize,
    config: PipelineConfig,
    standardizer: StandardizerFile,
    head: LinearHead,
    classes: Option<[f64; 2]>,
    block_offsets: Vec<usize>,
    bands: Vec<BandFile>,
    byte_order: String,
    dtype: String,
}

fn push_blob(m: &DMatrix<f64>, refs: &mut Vec<u8>) -> Blob {
    let blob = Blob {
        offset: refs.len(),
        rows: m.nrows(),
        cols: m.ncols(),
    };
    f64s_to_le(row_major(m), refs);
    blob
}

fn take_blob(blob: &Blob, refs: &[u8]) -> Result<DMatrix<f64>> {
    let len = blob.rows * blob.cols * 8;
    let bytes = refs
        .get(blob.offset..blob.offset + len)
        .ok_or_else(|| Error::Format(format!("refs.bin too short for blob at offset {}", blob.offset)))?;
    Ok(DMatrix::from_row_slice(blob.rows, blob.cols, &le_to_f64s(bytes)))
}

pub fn write_model(dir: &Path, p: &FittedPipeline) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut refs = Vec::new();
    let bands = p
        .bands()
        .iter()
        .map(|band| match band {
            BandModel::Riemann { reducer, reference } => BandFile::Riemann {
                reference: push_blob(reference.as_matrix(), &mut refs),
                reducer: reducer.as_ref().map(|r| push_blob(r.filters(), &mut refs)),
            },
            BandModel::Filters { filters, eigenvalues } => BandFile::Filters {
                filters: push_blob(filters, &mut refs),
                eigenvalues: eigenvalues.clone(),
            },
            BandModel::Diag => BandFile::Diag,
        })
        .collect();
    let model = ModelFile {
        format_version: FORMAT_VERSION,
        method: p.method(),
        n_channels: p.n_channels(),
        n_bands: p.n_bands(),
        feature_len: p.feature_len(),
        config: p.config().clone(),
        standardizer: StandardizerFile {
            means: p.standardizer().means().to_vec(),
            stds: p.standardizer().stds().to_vec(),
        },
        head: p.head().clone(),
        classes: p.classes(),
        block_offsets: p.block_offsets().to_vec(),
        bands,
        byte_order: BYTE_ORDER.into(),
        dtype: DTYPE.into(),
    };
    write_atomic(&dir.join("refs.bin"), &refs)?;
    write_atomic(&dir.join("model.json"), &to_json(&model)?)
}

pub fn read_model(dir: &Path) -> Result<FittedPipeline> {
    let model: ModelFile = read_json(&dir.join("model.json"))?;
    check_version(model.format_version, "model")?;
    check_encoding(&model.byte_order, &model.dtype)?;
    let refs = fs::read(dir.join("refs.bin"))?;
    let bands = model
        .bands
        .iter()
        .map(|band| {
            Ok(match band {
                BandFile::Riemann { reference, reducer } => BandModel::Riemann {
                    reference: SpdMatrix::new(take_blob(reference, &refs)?)?,
                    reducer: reducer
                        .as_ref()
                        .map(|r| SpatialReducer::new(take_blob(r, &refs)?))
                        .transpose()?,
                },
                BandFile::Filters { filters, eigenvalues } => BandModel::Filters {
                    filters: take_blob(filters, &refs)?,
                    eigenvalues: eigenvalues.clone(),
                },
                BandFile::Diag => BandModel::Diag,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if bands.len() != model.n_bands || model.config.method != model.method {
        return Err(Error::Format("model.json is inconsistent".into()));
    }
    let fitted = FittedPipeline::from_parts(
        model.config,
        model.n_channels,
        bands,
        Standardizer::from_parts(model.standardizer.means, model.standardizer.stds)?,
        model.head,
        model.classes,
    )?;
    if fitted.block_offsets() != model.block_offsets.as_slice() || fitted.feature_len() != model.feature_len {
        return Err(Error::Format("model.json block offsets do not match its bands".into()));
    }
    Ok(fitted)
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner()
        .map_err(|e| Error::Format(format!("csv: {e}")))
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// `index,prediction[,probability]`.
pub fn predictions_csv(predictions: &[f64], probabilities: Option<&[f64]>) -> Result<Vec<u8>> {
    let header = if probabilities.is_some() {
        strings(&["index", "prediction", "probability"])
    } else {
        strings(&["index", "prediction"])
    };
    csv_bytes(
        &header,
        predictions.iter().enumerate().map(|(i, y)| {
            let mut row = vec![i.to_string(), fmt_f64(*y)];
            if let Some(p) = probabilities {
                row.push(fmt_f64(p[i]));
            }
            row
        }),
    )
}

/// `band,channel,pattern_0,...`: one row per band and channel.
pub fn patterns_csv(set: &PatternSet) -> Result<Vec<u8>> {
    let k = set.bands.iter().map(|b| b.patterns.ncols()).max().unwrap_or(0);
    let mut header = strings(&["band", "channel"]);
    header.extend((0..k).map(|j| format!("pattern_{j}")));
    let mut rows = Vec::new();
    for (b, band) in set.bands.iter().enumerate() {
        for ch in 0..band.patterns.nrows() {
            let mut row = vec![b.to_string(), ch.to_string()];
            row.extend((0..k).map(|j| {
                if j < band.patterns.ncols() {
                    fmt_f64(band.patterns[(ch, j)])
                } else {
                    String::new()
                }
            }));
            rows.push(row);
        }
    }
    csv_bytes(&header, rows)
}

/// `band,rank,order,eigenvalue,log_eigenvalue,criterion`.
pub fn eigenvalues_csv(set: &PatternSet) -> Result<Vec<u8>> {
    let header = strings(&["band", "rank", "order", "eigenvalue", "log_eigenvalue", "criterion"]);
    let mut rows = Vec::new();
    for (b, band) in set.bands.iter().enumerate() {
        let logs = band.log_eigenvalues();
        for r in 0..band.eigenvalues.len() {
            rows.push(vec![
                b.to_string(),
                r.to_string(),
                band.order[r].to_string(),
                fmt_f64(band.eigenvalues[r]),
                fmt_f64(logs[r]),
                fmt_f64(band.criterion[r]),
            ]);
        }
    }
    csv_bytes(&header, rows)
}

pub fn significance_json(sig: &Significance) -> Result<Vec<u8>> {
    to_json(sig)
}

/// `method,axis,value,seed,fold,normalized_mae,pattern_distance,status`.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let header = strings(&[
        "method",
        "axis",
        "value",
        "seed",
        "fold",
        "normalized_mae",
        "pattern_distance",
        "status",
    ]);
    csv_bytes(
        &header,
        rows.iter().map(|r| {
            vec![
                r.method.name().to_string(),
                r.axis.name().to_string(),
                fmt_f64(r.value),
                r.seed.to_string(),
                r.fold.to_string(),
                fmt_f64(r.normalized_mae),
                fmt_f64(r.pattern_distance),
                r.status.clone(),
            ]
        }),
    )
}

/// `fold,n_test,mae,normalized_mae,r_squared,balanced_accuracy`; undefined
/// metrics are left empty.
pub fn cv_csv(report: &CvReport) -> Result<Vec<u8>> {
    let header = strings(&["fold", "n_test", "mae", "normalized_mae", "r_squared", "balanced_accuracy"]);
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    csv_bytes(
        &header,
        report.folds.iter().map(|f| {
            vec![
                f.fold.to_string(),
                f.test.len().to_string(),
                opt(f.metrics.mae),
                opt(f.metrics.normalized_mae),
                opt(f.metrics.r_squared),
                opt(f.metrics.balanced_accuracy),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_text_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(f64::NAN), "NaN");
        assert!(fmt_f64(f64::NAN).parse::<f64>().unwrap().is_nan());
    }

    #[test]
    fn blobs_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut refs = vec![0u8; 16];
        let blob = push_blob(&m, &mut refs);
        assert_eq!(blob.offset, 16);
        assert_eq!(take_blob(&blob, &refs).unwrap(), m);
        let bad = Blob { offset: 40, ..blob };
        assert!(matches!(take_blob(&bad, &refs), Err(Error::Format(_))));
    }
}
