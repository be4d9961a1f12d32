//! Time-series datasets: the synthetic plant benchmark, CSV ingestion,
//! washout bookkeeping, validation-noise injection and min/max normalization.
//!
//! Samples are stored column-wise: `inputs` is `K × n`, `targets` is `L × n`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FrscnError, Result};
use crate::linalg::MatrixRecord;
use crate::rng::seeded;

/// Washout used by the benchmark protocol when none is given.
pub const DEFAULT_WASHOUT: usize = 100;

/// Length of the fixed piecewise test input.
pub const TEST_INPUT_LEN: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    inputs: DMatrix<f64>,
    targets: DMatrix<f64>,
    washout: usize,
    name: String,
}

impl TimeSeriesDataset {
    pub fn new(
        inputs: DMatrix<f64>,
        targets: DMatrix<f64>,
        washout: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        let n = inputs.ncols();
        if n == 0 {
            return Err(FrscnError::invalid("dataset needs at least one sample"));
        }
        if targets.ncols() != n {
            return Err(FrscnError::shape("dataset sample count", n, targets.ncols()));
        }
        if inputs.nrows() == 0 || targets.nrows() == 0 {
            return Err(FrscnError::invalid("dataset needs at least one input and one target dimension"));
        }
        if washout >= n {
            return Err(FrscnError::invalid(format!(
                "washout {washout} must be smaller than the sample count {n}"
            )));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(FrscnError::invalid("dataset contains non-finite values"));
        }
        Ok(TimeSeriesDataset {
            inputs,
            targets,
            washout,
            name: name.into(),
        })
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn washout(&self) -> usize {
        self.washout
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.nrows()
    }

    /// Number of samples after the washout.
    pub fn effective_len(&self) -> usize {
        self.len() - self.washout
    }

    /// Post-washout targets, `L × (n − washout)`.
    pub fn fit_targets(&self) -> DMatrix<f64> {
        self.targets.columns(self.washout, self.effective_len()).into_owned()
    }

    /// Post-washout inputs, `K × (n − washout)`.
    pub fn fit_inputs(&self) -> DMatrix<f64> {
        self.inputs.columns(self.washout, self.effective_len()).into_owned()
    }

    pub fn with_washout(&self, washout: usize) -> Result<Self> {
        Self::new(self.inputs.clone(), self.targets.clone(), washout, self.name.clone())
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Splits into `[0, at)` and `[at, n)`; each part gets the given washout.
    pub fn split_at(&self, at: usize, washout: usize) -> Result<(Self, Self)> {
        if at == 0 || at >= self.len() {
            return Err(FrscnError::invalid(format!(
                "split point {at} must lie strictly inside 0..{}",
                self.len()
            )));
        }
        let n = self.len();
        let head = Self::new(
            self.inputs.columns(0, at).into_owned(),
            self.targets.columns(0, at).into_owned(),
            washout,
            format!("{}[..{at}]", self.name),
        )?;
        let tail = Self::new(
            self.inputs.columns(at, n - at).into_owned(),
            self.targets.columns(at, n - at).into_owned(),
            washout,
            format!("{}[{at}..]", self.name),
        )?;
        Ok((head, tail))
    }

    /// Writes the dataset as CSV with the given column names.
    pub fn write_csv(&self, path: &Path, input_names: &[String], target_names: &[String]) -> Result<()> {
        if input_names.len() != self.input_dim() {
            return Err(FrscnError::shape("input column names", self.input_dim(), input_names.len()));
        }
        if target_names.len() != self.output_dim() {
            return Err(FrscnError::shape("target column names", self.output_dim(), target_names.len()));
        }
        let csv_err = |source| FrscnError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let header: Vec<&str> = input_names
            .iter()
            .chain(target_names.iter())
            .map(String::as_str)
            .collect();
        w.write_record(&header).map_err(csv_err)?;
        for n in 0..self.len() {
            let row: Vec<String> = self
                .inputs
                .column(n)
                .iter()
                .chain(self.targets.column(n).iter())
                .map(|v| format!("{v:?}"))
                .collect();
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| FrscnError::io(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantMode {
    /// Input drawn i.i.d. uniform on [−1, 1].
    TrainRandom,
    /// The fixed four-segment test input over n = 1..=1000.
    PaperTest,
}

/// The piecewise test input at 1-based time index `n`.
pub fn piecewise_test_input(n: usize) -> f64 {
    let t = n as f64;
    if n < 250 {
        (PI * t / 25.0).sin()
    } else if n < 500 {
        1.0
    } else if n < 750 {
        -1.0
    } else {
        0.6 * (PI * t / 10.0).cos() + 0.1 * (PI * t / 32.0).cos() + 0.3 * (PI * t / 25.0).sin()
    }
}

/// Generates the benchmark plant
/// `y(n+1) = 0.72 y(n) + 0.025 y(n−1) u(n−1) + 0.01 u²(n−2) + 0.2 u(n−3)`
/// with `y(1..=4) = 0, 0, 0, 0.1`.
///
/// Sample `n` has inputs `[y(n), u(n)]` and target `y(n+1)`.
pub fn generate_plant_sequence(n_samples: usize, mode: PlantMode, seed: u64) -> Result<TimeSeriesDataset> {
    if n_samples < 5 {
        return Err(FrscnError::invalid(format!(
            "plant sequence needs at least 5 samples, got {n_samples}"
        )));
    }
    let u: Vec<f64> = match mode {
        PlantMode::TrainRandom => {
            let mut rng = seeded(seed);
            (0..n_samples).map(|_| rng.random_range(-1.0..=1.0)).collect()
        }
        PlantMode::PaperTest => {
            if n_samples != TEST_INPUT_LEN {
                return Err(FrscnError::invalid(format!(
                    "paper-test mode is defined for exactly {TEST_INPUT_LEN} samples, got {n_samples}"
                )));
            }
            (1..=n_samples).map(piecewise_test_input).collect()
        }
    };
    let name = match mode {
        PlantMode::TrainRandom => format!("plant-random-{seed}"),
        PlantMode::PaperTest => "plant-test".to_string(),
    };
    plant_sequence_from_input(&u, DEFAULT_WASHOUT.min(n_samples - 1), name)
}

/// Drives the plant with an explicit input sequence `u(1..=n)`.
pub fn plant_sequence_from_input(u: &[f64], washout: usize, name: impl Into<String>) -> Result<TimeSeriesDataset> {
    let n = u.len();
    if n < 5 {
        return Err(FrscnError::invalid(format!(
            "plant sequence needs at least 5 samples, got {n}"
        )));
    }
    // 1-based: y[1..=n+1], u[1..=n]; index 0 unused.
    let mut y = vec![0.0; n + 2];
    let uu: Vec<f64> = std::iter::once(0.0).chain(u.iter().copied()).collect();
    y[4] = 0.1;
    for k in 4..=n {
        y[k + 1] = 0.72 * y[k] + 0.025 * y[k - 1] * uu[k - 1] + 0.01 * uu[k - 2] * uu[k - 2] + 0.2 * uu[k - 3];
    }
    let inputs = DMatrix::from_fn(2, n, |r, c| if r == 0 { y[c + 1] } else { uu[c + 1] });
    let targets = DMatrix::from_fn(1, n, |_, c| y[c + 2]);
    TimeSeriesDataset::new(inputs, targets, washout, name)
}

/// A lagged copy of a CSV column appended to the inputs: the value at time
/// step `n` is the column's value at `n − lag`. The first `lag` rows are
/// dropped from the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shift {
    pub column: String,
    pub lag: usize,
}

impl std::str::FromStr for Shift {
    type Err = FrscnError;

    /// Parses `column:lag`.
    fn from_str(s: &str) -> Result<Self> {
        let (column, lag) = s
            .rsplit_once(':')
            .ok_or_else(|| FrscnError::invalid(format!("shift `{s}` must look like column:lag")))?;
        let lag = lag
            .parse::<usize>()
            .map_err(|_| FrscnError::invalid(format!("shift `{s}` has a non-integer lag")))?;
        if column.is_empty() || lag == 0 {
            return Err(FrscnError::invalid(format!("shift `{s}` needs a column name and lag >= 1")));
        }
        Ok(Shift {
            column: column.to_string(),
            lag,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSpec {
    pub input_columns: Vec<String>,
    pub target_columns: Vec<String>,
    #[serde(default)]
    pub shifts: Vec<Shift>,
    #[serde(default)]
    pub washout: usize,
}

/// Loads a CSV file where every row is one time step.
///
/// Inputs are the named input columns followed by the shifted columns, in
/// the order given.
pub fn load_csv(path: &Path, spec: &CsvSpec) -> Result<TimeSeriesDataset> {
    if spec.input_columns.is_empty() && spec.shifts.is_empty() {
        return Err(FrscnError::invalid("at least one input column or shift is required"));
    }
    if spec.target_columns.is_empty() {
        return Err(FrscnError::invalid("at least one target column is required"));
    }
    let csv_err = |source| FrscnError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    let index_of = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| FrscnError::MissingColumn(name.to_string()))
    };
    let input_idx = spec
        .input_columns
        .iter()
        .map(|c| index_of(c))
        .collect::<Result<Vec<_>>>()?;
    let target_idx = spec
        .target_columns
        .iter()
        .map(|c| index_of(c))
        .collect::<Result<Vec<_>>>()?;
    let shift_idx = spec
        .shifts
        .iter()
        .map(|s| index_of(&s.column))
        .collect::<Result<Vec<_>>>()?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        // header is line 1, first data row is line 2
        let line = i + 2;
        let mut values = Vec::with_capacity(record.len());
        for (j, cell) in record.iter().enumerate() {
            let v = cell.parse::<f64>().map_err(|e| FrscnError::Parse {
                row: line,
                column: header.get(j).unwrap_or("?").to_string(),
                message: format!("`{cell}` is not a number ({e})"),
            })?;
            if !v.is_finite() {
                return Err(FrscnError::Parse {
                    row: line,
                    column: header.get(j).unwrap_or("?").to_string(),
                    message: format!("`{cell}` is not finite"),
                });
            }
            values.push(v);
        }
        rows.push(values);
    }

    if rows.len() < spec.washout + 2 {
        return Err(FrscnError::invalid(format!(
            "{} has {} data rows; washout {} needs at least {}",
            path.display(),
            rows.len(),
            spec.washout,
            spec.washout + 2
        )));
    }
    let max_lag = spec.shifts.iter().map(|s| s.lag).max().unwrap_or(0);
    if rows.len() <= max_lag + spec.washout {
        return Err(FrscnError::invalid(format!(
            "{} data rows leave no samples after lag {max_lag} and washout {}",
            rows.len(),
            spec.washout
        )));
    }
    let n = rows.len() - max_lag;
    let k = input_idx.len() + shift_idx.len();
    let inputs = DMatrix::from_fn(k, n, |r, c| {
        let t = c + max_lag;
        if r < input_idx.len() {
            rows[t][input_idx[r]]
        } else {
            let s = r - input_idx.len();
            rows[t - spec.shifts[s].lag][shift_idx[s]]
        }
    });
    let targets = DMatrix::from_fn(target_idx.len(), n, |r, c| rows[c + max_lag][target_idx[r]]);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".to_string());
    TimeSeriesDataset::new(inputs, targets, spec.washout, name)
}

/// Adds i.i.d. zero-mean Gaussian noise of standard deviation `sigma` to the
/// targets. Inputs are left untouched.
pub fn add_gaussian_noise(ds: &TimeSeriesDataset, sigma: f64, seed: u64) -> Result<TimeSeriesDataset> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(FrscnError::invalid(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(ds.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| FrscnError::invalid(e.to_string()))?;
    let mut rng = seeded(seed);
    let mut targets = ds.targets.clone();
    for v in targets.iter_mut() {
        *v += normal.sample(&mut rng);
    }
    TimeSeriesDataset::new(ds.inputs.clone(), targets, ds.washout, format!("{}+noise", ds.name))
}

/// Per-dimension min/max statistics mapping each dimension affinely onto
/// [−1, 1]. Constant dimensions map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
    pub target_min: Vec<f64>,
    pub target_max: Vec<f64>,
    pub enabled: bool,
}

fn row_extrema(m: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    m.row_iter()
        .map(|r| {
            r.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
        })
        .unzip()
}

fn forward(m: &DMatrix<f64>, lo: &[f64], hi: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| {
        let span = hi[r] - lo[r];
        if span > 0.0 {
            2.0 * (m[(r, c)] - lo[r]) / span - 1.0
        } else {
            0.0
        }
    })
}

fn backward(m: &DMatrix<f64>, lo: &[f64], hi: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| {
        let span = hi[r] - lo[r];
        if span > 0.0 {
            (m[(r, c)] + 1.0) * 0.5 * span + lo[r]
        } else {
            lo[r]
        }
    })
}

impl NormalizationStats {
    /// Statistics over the post-washout part of the dataset.
    pub fn fit(ds: &TimeSeriesDataset) -> Self {
        let (input_min, input_max) = row_extrema(&ds.fit_inputs());
        let (target_min, target_max) = row_extrema(&ds.fit_targets());
        NormalizationStats {
            input_min,
            input_max,
            target_min,
            target_max,
            enabled: true,
        }
    }

    /// Pass-through statistics for `k` inputs and `l` targets.
    pub fn identity(k: usize, l: usize) -> Self {
        NormalizationStats {
            input_min: vec![-1.0; k],
            input_max: vec![1.0; k],
            target_min: vec![-1.0; l],
            target_max: vec![1.0; l],
            enabled: false,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_min.len()
    }

    pub fn output_dim(&self) -> usize {
        self.target_min.len()
    }

    fn check(&self, m: &DMatrix<f64>, dims: usize, what: &str) -> Result<()> {
        if m.nrows() != dims {
            return Err(FrscnError::shape(format!("{what} normalization"), dims, m.nrows()));
        }
        Ok(())
    }

    pub fn apply_inputs(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(m, self.input_dim(), "input")?;
        Ok(if self.enabled {
            forward(m, &self.input_min, &self.input_max)
        } else {
            m.clone()
        })
    }

    pub fn invert_inputs(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(m, self.input_dim(), "input")?;
        Ok(if self.enabled {
            backward(m, &self.input_min, &self.input_max)
        } else {
            m.clone()
        })
    }

    pub fn apply_targets(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(m, self.output_dim(), "target")?;
        Ok(if self.enabled {
            forward(m, &self.target_min, &self.target_max)
        } else {
            m.clone()
        })
    }

    pub fn invert_targets(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check(m, self.output_dim(), "target")?;
        Ok(if self.enabled {
            backward(m, &self.target_min, &self.target_max)
        } else {
            m.clone()
        })
    }

    /// Normalizes a whole dataset, keeping washout and name.
    pub fn apply(&self, ds: &TimeSeriesDataset) -> Result<TimeSeriesDataset> {
        TimeSeriesDataset::new(
            self.apply_inputs(&ds.inputs)?,
            self.apply_targets(&ds.targets)?,
            ds.washout,
            ds.name.clone(),
        )
    }
}

/// JSON-friendly dump of a dataset (used by report files and tests).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub name: String,
    pub washout: usize,
    pub inputs: MatrixRecord,
    pub targets: MatrixRecord,
}

impl From<&TimeSeriesDataset> for DatasetRecord {
    fn from(ds: &TimeSeriesDataset) -> Self {
        DatasetRecord {
            name: ds.name.clone(),
            washout: ds.washout,
            inputs: (&ds.inputs).into(),
            targets: (&ds.targets).into(),
        }
    }
}
