//! Matrix files: JSON metadata with a row-major payload that is either
//! embedded as CSV text or stored next to the JSON as little-endian `f64`s.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_json, save_json};
use crate::model::{ActivationPrior, Dictionary, OffsetSpec, Provenance, FEATURES};
use crate::preprocess::{DemoMatrix, SegmentSource};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    #[default]
    Csv,
    F64le,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    Dictionary,
    DemoMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case")]
enum Payload {
    Csv { data: String },
    F64le { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MatrixFile {
    format_version: u32,
    kind: MatrixKind,
    n_steps: usize,
    rows: usize,
    cols: usize,
    dt: f64,
    offsets: OffsetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    segment_sources: Option<Vec<SegmentSource>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prior: Option<PriorFile>,
    payload: Payload,
}

/// Activation mean and row-major precision matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PriorFile {
    mean: Vec<f64>,
    precision: Vec<f64>,
}

impl PriorFile {
    fn new(p: &ActivationPrior) -> Self {
        let l = p.len();
        PriorFile {
            mean: p.mean.iter().copied().collect(),
            precision: (0..l * l).map(|i| p.precision[(i / l, i % l)]).collect(),
        }
    }

    fn prior(&self, path: &Path) -> Result<ActivationPrior> {
        let l = self.mean.len();
        if self.precision.len() != l * l {
            return Err(Error::format(path, "prior precision is not square in the mean length"));
        }
        Ok(ActivationPrior {
            mean: nalgebra::DVector::from_vec(self.mean.clone()),
            precision: DMatrix::from_row_slice(l, l, &self.precision),
        })
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("f64")
}

fn encode(path: &Path, m: &DMatrix<f64>, encoding: Encoding) -> Result<Payload> {
    match encoding {
        Encoding::Csv => {
            let mut data = String::with_capacity(m.nrows() * m.ncols() * 20);
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    if c > 0 {
                        data.push(',');
                    }
                    data.push_str(&format!("{}", m[(r, c)]));
                }
                data.push('\n');
            }
            Ok(Payload::Csv { data })
        }
        Encoding::F64le => {
            let side = sidecar_path(path);
            let mut bytes = Vec::with_capacity(8 * m.len());
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    bytes.extend_from_slice(&m[(r, c)].to_le_bytes());
                }
            }
            std::fs::write(&side, bytes).map_err(|e| Error::io(&side, e))?;
            let name = side.file_name().expect("has a file name").to_string_lossy().into_owned();
            Ok(Payload::F64le { path: name })
        }
    }
}

fn decode(path: &Path, file: &MatrixFile) -> Result<DMatrix<f64>> {
    let (rows, cols) = (file.rows, file.cols);
    let values: Vec<f64> = match &file.payload {
        Payload::Csv { data } => data
            .lines()
            .filter(|l| !l.is_empty())
            .flat_map(|l| l.split(','))
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format(path, format!("bad matrix entry `{v}`")))
            })
            .collect::<Result<_>>()?,
        Payload::F64le { path: side } => {
            let side = path.parent().unwrap_or(Path::new(".")).join(side);
            let bytes = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
            if bytes.len() % 8 != 0 {
                return Err(Error::format(&side, "payload length is not a multiple of 8"));
            }
            bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect()
        }
    };
    if values.len() != rows * cols {
        return Err(Error::format(
            path,
            format!("payload holds {} values, header says {rows} x {cols}", values.len()),
        ));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

fn read(path: &Path, kind: MatrixKind) -> Result<(MatrixFile, DMatrix<f64>)> {
    let file: MatrixFile = load_json(path)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported format version {} (expected {FORMAT_VERSION})", file.format_version),
        ));
    }
    if file.kind != kind {
        return Err(Error::format(path, format!("expected a {kind:?} file, found {:?}", file.kind)));
    }
    if file.n_steps * FEATURES != file.rows {
        return Err(Error::DimensionMismatch {
            expected: file.n_steps * FEATURES,
            actual: file.rows,
            context: "matrix rows must equal 21 * n_steps",
        });
    }
    let m = decode(path, &file)?;
    Ok((file, m))
}

pub fn save_dictionary(path: &Path, d: &Dictionary, encoding: Encoding) -> Result<()> {
    let file = MatrixFile {
        format_version: FORMAT_VERSION,
        kind: MatrixKind::Dictionary,
        n_steps: d.n_steps(),
        rows: d.w().nrows(),
        cols: d.w().ncols(),
        dt: d.dt(),
        offsets: d.offsets,
        provenance: Some(d.provenance.clone()),
        segment_sources: None,
        prior: d.prior().map(PriorFile::new),
        payload: encode(path, d.w(), encoding)?,
    };
    save_json(path, &file)
}

pub fn load_dictionary(path: &Path) -> Result<Dictionary> {
    let (file, w) = read(path, MatrixKind::Dictionary)?;
    let prior = file.prior.as_ref().map(|p| p.prior(path)).transpose()?;
    let d = Dictionary::new(w, file.n_steps, file.dt, file.offsets, file.provenance.unwrap_or_default())?;
    match prior {
        Some(p) => d.with_prior(p),
        None => Ok(d),
    }
}

pub fn save_demo_matrix(path: &Path, v: &DemoMatrix, encoding: Encoding) -> Result<()> {
    let file = MatrixFile {
        format_version: FORMAT_VERSION,
        kind: MatrixKind::DemoMatrix,
        n_steps: v.n_steps(),
        rows: v.v().nrows(),
        cols: v.n_columns(),
        dt: v.dt(),
        offsets: v.offsets,
        provenance: None,
        segment_sources: Some(v.segment_sources.clone()),
        prior: None,
        payload: encode(path, v.v(), encoding)?,
    };
    save_json(path, &file)
}

pub fn load_demo_matrix(path: &Path) -> Result<DemoMatrix> {
    let (file, m) = read(path, MatrixKind::DemoMatrix)?;
    DemoMatrix::new(m, file.n_steps, file.dt, file.offsets, file.segment_sources.unwrap_or_default())
}
