//! Datasets, deterministic splitting, seeded randomness, and CSV ingestion.
//!
//! Everything downstream (fitting, calibration, simulation) consumes the
//! immutable [`Dataset`] defined here and derives all randomness from a
//! [`Seed`], so that an experiment is a pure function of its configuration.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::num::floor_guarded;

/// Errors from dataset construction, CSV ingestion, and splitting.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv parse error: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv file {path} has a header but no data rows")]
    EmptyFile { path: String },
    #[error("response column {column:?} not found in header")]
    MissingColumn { column: String },
    #[error("non-numeric cell at data row {row}, column {column:?}: {value:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("non-finite value at data row {row}, column {column:?}")]
    NonFinite { row: usize, column: String },
    #[error("dataset needs at least one covariate column")]
    NoCovariates,
    #[error("dataset must contain at least one row")]
    Empty,
    #[error("covariate rows ({rows}) and responses ({responses}) disagree")]
    ShapeMismatch { rows: usize, responses: usize },
    #[error("matrix value is not finite at row {row}, column {col}")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("invalid split fractions: {detail}")]
    BadFractions { detail: String },
    #[error("split produced an empty {part} set")]
    EmptySplitPart { part: &'static str },
    #[error("subset index {index} out of bounds for {n} rows")]
    IndexOutOfBounds { index: usize, n: usize },
}

/// Explicit 64-bit seed for every source of randomness in the crate.
///
/// Streams are derived with [`Seed::mix`]: the seed value is XOR-ed with a
/// salt (replicate index, stream tag) and passed through SplitMix64. The
/// generator behind [`Seed::rng`] is ChaCha8, a counter-based stream cipher
/// RNG, so identical seeds reproduce identical draws on every platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed(pub u64);

impl Seed {
    pub fn new(value: u64) -> Self {
        Seed(value)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// Derives an independent stream: the salt is spread across the word by
    /// the golden-ratio multiplier before the XOR, so that nearby (seed,
    /// salt) pairs never alias, then finalized with SplitMix64.
    pub fn mix(self, salt: u64) -> Seed {
        Seed(splitmix64(self.0 ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Covariate matrix plus response vector; the unit of train/calib/test
/// splitting. Covariates are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
    n: usize,
    p: usize,
}

impl Dataset {
    /// Builds a dataset from a row-major covariate buffer.
    pub fn from_parts(x: Vec<f64>, p: usize, y: Vec<f64>) -> Result<Self, DataError> {
        if p == 0 {
            return Err(DataError::NoCovariates);
        }
        if y.is_empty() {
            return Err(DataError::Empty);
        }
        if x.len() != y.len() * p {
            return Err(DataError::ShapeMismatch {
                rows: x.len() / p,
                responses: y.len(),
            });
        }
        let n = y.len();
        for (i, v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(DataError::NonFiniteEntry {
                    row: i / p,
                    col: i % p,
                });
            }
        }
        for (i, v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(DataError::NonFiniteEntry { row: i, col: p });
            }
        }
        Ok(Dataset { x, y, n, p })
    }

    /// Convenience constructor for scalar covariates.
    pub fn from_univariate(x: Vec<f64>, y: Vec<f64>) -> Result<Self, DataError> {
        Dataset::from_parts(x, 1, y)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Extracts the rows named by `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset, DataError> {
        if idx.is_empty() {
            return Err(DataError::Empty);
        }
        let mut x = Vec::with_capacity(idx.len() * self.p);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.n {
                return Err(DataError::IndexOutOfBounds { index: i, n: self.n });
            }
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Dataset::from_parts(x, self.p, y)
    }
}

/// Disjoint train/calibration/test index sets over one [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub calib: Vec<usize>,
    pub test: Vec<usize>,
}

/// Loads a CSV file with a header row; `response_column` becomes `y` and all
/// remaining columns, in file order, become covariates.
///
/// Dialect is fixed: comma separator, `.` decimal point, UTF-8, header
/// required. Row numbers in errors are 1-based data rows (header excluded).
pub fn load_csv<P: AsRef<Path>>(path: P, response_column: &str) -> Result<Dataset, DataError> {
    let path_str = path.as_ref().display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    let response_idx = headers
        .iter()
        .position(|h| h == response_column)
        .ok_or_else(|| DataError::MissingColumn {
            column: response_column.to_string(),
        })?;

    let mut x = Vec::new();
    let mut y = Vec::new();
    let p = headers.len().saturating_sub(1);
    if p == 0 {
        return Err(DataError::NoCovariates);
    }
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        for (c, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| DataError::NonNumeric {
                row: r + 1,
                column: headers[c].clone(),
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(DataError::NonFinite {
                    row: r + 1,
                    column: headers[c].clone(),
                });
            }
            if c == response_idx {
                y.push(value);
            } else {
                x.push(value);
            }
        }
    }
    if y.is_empty() {
        return Err(DataError::EmptyFile { path: path_str });
    }
    Dataset::from_parts(x, p, y)
}

/// Reads just the header row of a CSV file.
pub fn csv_headers<P: AsRef<Path>>(path: P) -> Result<Vec<String>, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    Ok(reader.headers()?.iter().map(|s| s.to_string()).collect())
}

/// Loads an all-numeric CSV with a header; returns `(column names, rows)`.
/// Used for prediction inputs that carry no response column.
pub fn load_matrix_csv<P: AsRef<Path>>(path: P) -> Result<(Vec<String>, Vec<Vec<f64>>), DataError> {
    let path_str = path.as_ref().display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(headers.len());
        for (c, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| DataError::NonNumeric {
                row: r + 1,
                column: headers[c].clone(),
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(DataError::NonFinite {
                    row: r + 1,
                    column: headers[c].clone(),
                });
            }
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::EmptyFile { path: path_str });
    }
    Ok((headers, rows))
}

/// Uniformly random partition into train/calibration/test.
///
/// Sizes are `floor(n * f_train)` and `floor(n * f_calib)`; the remainder
/// goes to the test set so the train and calibration sizes match the
/// configured fractions exactly. Deterministic given the seed.
pub fn split_dataset(
    data: &Dataset,
    fractions: (f64, f64, f64),
    seed: Seed,
) -> Result<SplitIndices, DataError> {
    let (ft, fc, fs) = fractions;
    if !(ft > 0.0 && fc > 0.0 && fs > 0.0) {
        return Err(DataError::BadFractions {
            detail: format!("all fractions must be positive, got ({ft}, {fc}, {fs})"),
        });
    }
    if (ft + fc + fs - 1.0).abs() > 1e-9 {
        return Err(DataError::BadFractions {
            detail: format!("fractions must sum to 1, got {}", ft + fc + fs),
        });
    }
    let n = data.n();
    let n_train = floor_guarded(n as f64 * ft);
    let n_calib = floor_guarded(n as f64 * fc);
    if n_train == 0 {
        return Err(DataError::EmptySplitPart { part: "train" });
    }
    if n_calib == 0 {
        return Err(DataError::EmptySplitPart { part: "calibration" });
    }
    if n_train + n_calib >= n {
        return Err(DataError::EmptySplitPart { part: "test" });
    }

    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = seed.rng();
    idx.shuffle(&mut rng);

    let train = idx[..n_train].to_vec();
    let calib = idx[n_train..n_train + n_calib].to_vec();
    let test = idx[n_train + n_calib..].to_vec();
    Ok(SplitIndices { train, calib, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_csv_basic() {
        let f = write_tmp("a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
        let d = load_csv(f.path(), "y").unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.p(), 2);
        assert_eq!(d.row(1), &[4.0, 5.0]);
        assert_eq!(d.y(), &[3.0, 6.0, 9.0]);
    }

    #[test]
    fn load_csv_nan_cell_named() {
        let f = write_tmp("a,y\n1,2\nNaN,4\n");
        let err = load_csv(f.path(), "y").unwrap_err();
        match err {
            DataError::NonFinite { row, column } => {
                assert_eq!(row, 2);
                assert_eq!(column, "a");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn load_csv_non_numeric_cell_named() {
        let f = write_tmp("a,y\n1,2\nfoo,4\n");
        let err = load_csv(f.path(), "y").unwrap_err();
        match err {
            DataError::NonNumeric { row, column, value } => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "a", "foo"));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn load_csv_response_only_rejected() {
        let f = write_tmp("y\n1\n2\n");
        assert!(matches!(
            load_csv(f.path(), "y").unwrap_err(),
            DataError::NoCovariates
        ));
    }

    #[test]
    fn load_csv_missing_column() {
        let f = write_tmp("a,b\n1,2\n");
        assert!(matches!(
            load_csv(f.path(), "y").unwrap_err(),
            DataError::MissingColumn { .. }
        ));
    }

    #[test]
    fn split_sizes_match_floor_arithmetic() {
        let d = Dataset::from_univariate((0..8).map(|i| i as f64).collect(), vec![0.0; 8]).unwrap();
        let s = split_dataset(&d, (0.5, 0.25, 0.25), Seed::new(3)).unwrap();
        assert_eq!((s.train.len(), s.calib.len(), s.test.len()), (4, 2, 2));
    }

    #[test]
    fn split_paper_protocol_sizes() {
        let d =
            Dataset::from_univariate((0..1000).map(|i| i as f64).collect(), vec![0.0; 1000]).unwrap();
        let s = split_dataset(&d, (0.5, 0.25, 0.25), Seed::new(9)).unwrap();
        assert_eq!((s.train.len(), s.calib.len(), s.test.len()), (500, 250, 250));
    }

    #[test]
    fn split_is_deterministic() {
        let d = Dataset::from_univariate((0..50).map(|i| i as f64).collect(), vec![1.0; 50]).unwrap();
        let a = split_dataset(&d, (0.5, 0.25, 0.25), Seed::new(77)).unwrap();
        let b = split_dataset(&d, (0.5, 0.25, 0.25), Seed::new(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_rejects_empty_parts() {
        let d = Dataset::from_univariate(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
        assert!(split_dataset(&d, (0.5, 0.25, 0.25), Seed::new(1)).is_err());
    }

    #[test]
    fn dataset_rejects_non_finite() {
        assert!(Dataset::from_univariate(vec![1.0, f64::NAN], vec![0.0, 0.0]).is_err());
        assert!(Dataset::from_univariate(vec![1.0, 2.0], vec![0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn seed_mix_changes_stream() {
        let s = Seed::new(42);
        assert_ne!(s.mix(0).value(), s.mix(1).value());
        assert_eq!(s.mix(5).value(), s.mix(5).value());
    }
}
