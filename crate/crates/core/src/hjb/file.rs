//! Self-describing JSON coefficient file for a [`ValueFunctionApprox`].
//!
//! Coefficients are written as `f64` in shortest round-trip decimal form, so
//! save → load → save reproduces the file byte for byte.

use super::{Provenance, ValueFunctionApprox};
use crate::basis::{BasisError, BasisFamily, BoxDomain, MultiIndex, MultiIndexBasis, Truncation};
use crate::scalar::Scalar;
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const FORMAT_NAME: &str = "ccbo-value-function";
pub const FORMAT_VERSION: u32 = 1;
const LEGENDRE_NORMALIZATION: &str = "P_r(1)=1 on [-1,1], mapped affinely onto [lower,upper]";

#[derive(Debug, Error)]
pub enum FileError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed value-function file: {0}")]
    Malformed(String),
    #[error("unsupported file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("basis in file is inconsistent: {0}")]
    Basis(#[from] BasisError),
    #[error("value function has dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainRecord {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BasisRecord {
    family: BasisFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalization: Option<String>,
    truncation: Truncation,
    domain: DomainRecord,
    indices: Vec<MultiIndex>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRecord {
    format: String,
    version: u32,
    basis: BasisRecord,
    epsilon: f64,
    provenance: Provenance,
    coefficients: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    projection: Option<Vec<f64>>,
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn from_f64<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

/// Serializes to the JSON text written by [`save_value_function`].
pub fn to_json<T: Scalar>(vfa: &ValueFunctionApprox<T>) -> String {
    let basis = vfa.basis();
    let record = FileRecord {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        basis: BasisRecord {
            family: basis.family(),
            normalization: (basis.family() == BasisFamily::Legendre).then(|| LEGENDRE_NORMALIZATION.to_string()),
            truncation: basis.truncation(),
            domain: DomainRecord { lower: to_f64(basis.domain().lower()), upper: to_f64(basis.domain().upper()) },
            indices: basis.indices().to_vec(),
        },
        epsilon: vfa.epsilon().to_f64_lossy(),
        provenance: vfa.provenance().clone(),
        coefficients: to_f64(vfa.coeffs().as_slice().expect("contiguous coefficients")),
        projection: vfa.projection().map(|a| to_f64(a.as_slice().expect("contiguous coefficients"))),
    };
    let mut text = serde_json::to_string_pretty(&record).expect("value-function record serializes");
    text.push('\n');
    text
}

/// Parses the JSON text produced by [`to_json`].
pub fn from_json<T: Scalar>(text: &str) -> Result<ValueFunctionApprox<T>, FileError> {
    let header: serde_json::Value = serde_json::from_str(text).map_err(|e| FileError::Malformed(e.to_string()))?;
    match header.get("format").and_then(|v| v.as_str()) {
        Some(FORMAT_NAME) => {}
        other => return Err(FileError::Malformed(format!("format tag {other:?}, expected {FORMAT_NAME:?}"))),
    }
    let version =
        header.get("version").and_then(|v| v.as_u64()).ok_or_else(|| FileError::Malformed("missing version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(FileError::VersionMismatch { found: version as u32, expected: FORMAT_VERSION });
    }
    let record: FileRecord = serde_json::from_value(header).map_err(|e| FileError::Malformed(e.to_string()))?;
    let domain = BoxDomain::new(from_f64(&record.basis.domain.lower), from_f64(&record.basis.domain.upper))?;
    let basis =
        MultiIndexBasis::with_indices(record.basis.family, domain, record.basis.truncation, record.basis.indices)?;
    if record.coefficients.len() != basis.len() {
        return Err(FileError::Malformed(format!(
            "{} coefficients for a basis of size {}",
            record.coefficients.len(),
            basis.len()
        )));
    }
    let coeffs = Array1::from(from_f64::<T>(&record.coefficients));
    let vfa = ValueFunctionApprox::new(basis, coeffs, T::lit(record.epsilon), record.provenance)
        .map_err(|e| FileError::Malformed(e.to_string()))?;
    match record.projection {
        Some(p) => {
            vfa.with_projection(Array1::from(from_f64::<T>(&p))).map_err(|e| FileError::Malformed(e.to_string()))
        }
        None => Ok(vfa),
    }
}

pub fn save_value_function<T: Scalar>(vfa: &ValueFunctionApprox<T>, path: &Path) -> Result<(), FileError> {
    fs::write(path, to_json(vfa)).map_err(|source| FileError::Io { path: path.display().to_string(), source })
}

pub fn load_value_function<T: Scalar>(path: &Path) -> Result<ValueFunctionApprox<T>, FileError> {
    let text = fs::read_to_string(path).map_err(|source| FileError::Io { path: path.display().to_string(), source })?;
    from_json(&text)
}

impl<T: Scalar> ValueFunctionApprox<T> {
    /// Fails unless the approximation lives in `expected` dimensions.
    pub fn require_dim(&self, expected: usize) -> Result<(), FileError> {
        if self.dim() != expected {
            return Err(FileError::DimensionMismatch { expected, found: self.dim() });
        }
        Ok(())
    }
}
