//! Synthetic step-forecasting benchmark, CSV ingestion, windowing and
//! chronological splits.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// `N` (input, target) pairs stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub split: Split,
    pub input_len: usize,
    pub horizon: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    /// Seed or source file the samples came from.
    pub provenance: String,
    /// One-based index of the step inside each target window (synthetic only).
    pub step_indices: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(split: Split, input_len: usize, horizon: usize, inputs: Vec<f64>, targets: Vec<f64>, provenance: String) -> Result<Self> {
        if input_len == 0 || horizon == 0 {
            return Err(Error::usage("input length and horizon must be positive"));
        }
        if !inputs.len().is_multiple_of(input_len) || !targets.len().is_multiple_of(horizon) || inputs.len() / input_len != targets.len() / horizon {
            return Err(Error::Data("inputs and targets disagree on the sample count".into()));
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::Data("dataset contains non-finite values".into()));
        }
        Ok(Self {
            split,
            input_len,
            horizon,
            inputs,
            targets,
            provenance,
            step_indices: None,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_len
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_len..(i + 1) * self.input_len]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.horizon..(i + 1) * self.horizon]
    }

    fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Concatenate datasets with equal window sizes.
    pub fn concat(split: Split, parts: &[Dataset], provenance: String) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::Data("nothing to concatenate".into()))?;
        let (n, k) = (first.input_len, first.horizon);
        if parts.iter().any(|p| p.input_len != n || p.horizon != k) {
            return Err(Error::Data("window sizes differ between parts".into()));
        }
        let inputs = parts.iter().flat_map(|p| p.inputs.iter().copied()).collect();
        let targets = parts.iter().flat_map(|p| p.targets.iter().copied()).collect();
        Dataset::new(split, n, k, inputs, targets, provenance)
    }
}

/// Train, validation and test datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

/// Parameters of the two-peak / one-step synthetic benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub series_len: usize,
    pub input_len: usize,
    pub horizon: usize,
    pub noise_variance: f64,
    /// Half-width of the uniform integer jitter on the step position.
    pub offset_range: i64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_train: 500,
            n_valid: 500,
            n_test: 500,
            series_len: 40,
            input_len: 20,
            horizon: 20,
            noise_variance: 0.01,
            offset_range: 3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.input_len == 0 || self.horizon == 0 || self.series_len != self.input_len + self.horizon {
            return Err(Error::usage("series length must equal input length plus horizon, both positive"));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::usage("noise variance must be finite and non-negative"));
        }
        if self.offset_range < 0 {
            return Err(Error::usage("offset range must be non-negative"));
        }
        if self.feasible_draws() == 0 {
            return Err(Error::usage("no peak placement yields a step strictly inside the target window"));
        }
        Ok(())
    }

    /// Absolute step position for peaks `i1 < i2` and jitter `offset`, if it
    /// lands strictly inside the target window.
    fn step_position(&self, i1: usize, i2: usize, offset: i64) -> Option<usize> {
        let pos = 2 * i2 as i64 - i1 as i64 + offset;
        let lo = self.input_len as i64 + 1;
        let hi = self.series_len as i64 - 1;
        (lo..=hi).contains(&pos).then_some(pos as usize)
    }

    fn feasible_draws(&self) -> usize {
        let mut count = 0;
        for i2 in 1..self.input_len {
            for i1 in 0..i2 {
                for off in -self.offset_range..=self.offset_range {
                    count += usize::from(self.step_position(i1, i2, off).is_some());
                }
            }
        }
        count
    }
}

/// Generate the benchmark. Each series has a zero baseline with two impulses
/// of amplitudes `j1, j2 ~ U(0, 1)` at input positions `i1 < i2`; the target
/// holds `j1` up to a step at `i2 + (i2 - i1) + offset` and `j2` from the step
/// on. Draws whose step would fall outside the target window (or on its first
/// step) are rejected and redrawn. Gaussian noise covers the whole series.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetSplits> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_variance.sqrt()).map_err(|e| Error::usage(e.to_string()))?;
    let provenance = format!("synthetic seed={}", spec.seed);
    let mut make = |split: Split, count: usize| -> Result<Dataset> {
        let mut inputs = Vec::with_capacity(count * spec.input_len);
        let mut targets = Vec::with_capacity(count * spec.horizon);
        let mut steps = Vec::with_capacity(count);
        for _ in 0..count {
            let (i1, i2, step) = loop {
                let a = rng.gen_range(0..spec.input_len);
                let b = rng.gen_range(0..spec.input_len);
                let off = rng.gen_range(-spec.offset_range..=spec.offset_range);
                if a == b {
                    continue;
                }
                let (i1, i2) = (a.min(b), a.max(b));
                if let Some(step) = spec.step_position(i1, i2, off) {
                    break (i1, i2, step);
                }
            };
            let j1: f64 = rng.gen();
            let j2: f64 = rng.gen();
            let mut series = vec![0.0; spec.series_len];
            series[i1] = j1;
            series[i2] = j2;
            for (t, v) in series.iter_mut().enumerate().skip(spec.input_len) {
                *v = if t < step { j1 } else { j2 };
            }
            if spec.noise_variance > 0.0 {
                for v in series.iter_mut() {
                    *v += noise.sample(&mut rng);
                }
            }
            inputs.extend_from_slice(&series[..spec.input_len]);
            targets.extend_from_slice(&series[spec.input_len..]);
            steps.push(step - spec.input_len + 1);
        }
        let mut ds = Dataset::new(split, spec.input_len, spec.horizon, inputs, targets, provenance.clone())?;
        ds.step_indices = Some(steps);
        Ok(ds)
    };
    Ok(DatasetSplits {
        train: make(Split::Train, spec.n_train)?,
        valid: make(Split::Valid, spec.n_valid)?,
        test: make(Split::Test, spec.n_test)?,
    })
}

#[derive(Serialize)]
struct Sidecar<'a> {
    seed: u64,
    spec: &'a SyntheticSpec,
    true_step_indices: StepIndices,
    peak_constraint: &'static str,
}

#[derive(Serialize)]
struct StepIndices {
    train: Vec<usize>,
    valid: Vec<usize>,
    test: Vec<usize>,
}

/// Write `{train,valid,test}.csv` (one full series per row, inputs then
/// targets) and `synthetic.json` with the spec and true step indices.
pub fn save_synthetic(dir: &Path, spec: &SyntheticSpec, splits: &DatasetSplits) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for ds in [&splits.train, &splits.valid, &splits.test] {
        let path = dir.join(format!("{}.csv", ds.split.name()));
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_io(&path, e))?;
        for i in 0..ds.len() {
            let row: Vec<String> = ds.input(i).iter().chain(ds.target(i)).map(|v| v.to_string()).collect();
            w.write_record(&row).map_err(|e| csv_io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let idx = |d: &Dataset| d.step_indices.clone().unwrap_or_default();
    let sidecar = Sidecar {
        seed: spec.seed,
        spec,
        true_step_indices: StepIndices {
            train: idx(&splits.train),
            valid: idx(&splits.valid),
            test: idx(&splits.test),
        },
        peak_constraint: "i1 < i2, both inside the input window",
    };
    let path = dir.join("synthetic.json");
    let text = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

/// How series are laid out in a CSV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CsvLayout {
    /// One series per row.
    #[default]
    Rows,
    /// A single long series in the first column.
    Column,
}

/// Raw series read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub series: Vec<Vec<f64>>,
}

impl RawSeries {
    pub fn count(&self) -> usize {
        self.series.len()
    }

    pub fn max_len(&self) -> usize {
        self.series.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Parse a comma-separated numeric file. Positions in errors are one-based
/// and count the header row when present.
pub fn load_csv(path: &Path, layout: CsvLayout, has_header: bool) -> Result<RawSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let header_rows = usize::from(has_header);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: r + 1 + header_rows,
            column: 0,
            message: e.to_string(),
        })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let mut row = Vec::with_capacity(rec.len());
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: r + 1 + header_rows,
                column: c + 1,
                message: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: r + 1 + header_rows,
                    column: c + 1,
                    message: "non-finite value".into(),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{} holds no data rows", path.display())));
    }
    let series = match layout {
        CsvLayout::Rows => rows,
        CsvLayout::Column => vec![rows.into_iter().map(|r| r[0]).collect()],
    };
    Ok(RawSeries { series })
}

/// Sliding windows of `input_len` inputs followed by `horizon` targets.
pub fn window_series(series: &[f64], input_len: usize, horizon: usize, stride: usize) -> Result<Dataset> {
    if input_len == 0 || horizon == 0 || stride == 0 {
        return Err(Error::usage("input length, horizon and stride must be positive"));
    }
    let span = input_len + horizon;
    if series.len() < span {
        return Err(Error::Data(format!(
            "series of length {} is shorter than input + horizon = {span}",
            series.len()
        )));
    }
    let count = (series.len() - span) / stride + 1;
    let mut inputs = Vec::with_capacity(count * input_len);
    let mut targets = Vec::with_capacity(count * horizon);
    for w in 0..count {
        let s = w * stride;
        inputs.extend_from_slice(&series[s..s + input_len]);
        targets.extend_from_slice(&series[s + input_len..s + span]);
    }
    Dataset::new(Split::Train, input_len, horizon, inputs, targets, String::new())
}

/// Contiguous train/valid/test segments cut at `floor(L * cumulative fraction)`.
/// Every segment must hold at least `min_len` points.
pub fn chronological_split(series: &[f64], fractions: [f64; 3], min_len: usize) -> Result<[&[f64]; 3]> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::usage("split fractions must lie in [0, 1] and sum to 1"));
    }
    let len = series.len();
    let cut = |f: f64| (((len as f64) * f) + 1e-9).floor() as usize;
    let b1 = cut(fractions[0]).min(len);
    let b2 = cut(fractions[0] + fractions[1]).clamp(b1, len);
    let parts = [&series[..b1], &series[b1..b2], &series[b2..]];
    if let Some((i, p)) = parts.iter().enumerate().find(|(_, p)| p.len() < min_len.max(1)) {
        return Err(Error::Data(format!(
            "split segment {i} has {} points, needs at least {}",
            p.len(),
            min_len.max(1)
        )));
    }
    Ok(parts)
}

/// Rescale to `[0, 1]`; constant series map to zeros.
pub fn min_max_normalize(series: &[f64]) -> Vec<f64> {
    let (min, max) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let range = max - min;
    series
        .iter()
        .map(|x| if range > 0.0 { (x - min) / range } else { 0.0 })
        .collect()
}

/// How to turn a CSV file into train/valid/test windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSource {
    pub path: PathBuf,
    #[serde(default)]
    pub layout: CsvLayout,
    #[serde(default)]
    pub has_header: bool,
    pub input_len: usize,
    pub horizon: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
}

fn default_stride() -> usize {
    1
}

fn default_fractions() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

/// Load a CSV dataset. Row layout: each min-max normalised row is windowed
/// and rows are split chronologically by count. Column layout: the
/// normalised series is split chronologically, then each segment windowed.
pub fn load_csv_dataset(src: &CsvSource) -> Result<DatasetSplits> {
    let raw = load_csv(&src.path, src.layout, src.has_header)?;
    let provenance = format!("csv {}", src.path.display());
    let span = src.input_len + src.horizon;
    let windows_of = |s: &[f64]| window_series(s, src.input_len, src.horizon, src.stride);
    let (train, valid, test) = match src.layout {
        CsvLayout::Rows => {
            let windows: Vec<Dataset> = raw
                .series
                .iter()
                .map(|s| windows_of(&min_max_normalize(s)))
                .collect::<Result<_>>()?;
            let idx: Vec<f64> = (0..windows.len()).map(|i| i as f64).collect();
            let [a, b, _] = chronological_split(&idx, src.fractions, 1)?;
            let (a, b) = (a.len(), a.len() + b.len());
            (
                Dataset::concat(Split::Train, &windows[..a], provenance.clone())?,
                Dataset::concat(Split::Valid, &windows[a..b], provenance.clone())?,
                Dataset::concat(Split::Test, &windows[b..], provenance.clone())?,
            )
        }
        CsvLayout::Column => {
            let series = min_max_normalize(&raw.series[0]);
            let [a, b, c] = chronological_split(&series, src.fractions, span)?;
            (windows_of(a)?, windows_of(b)?, windows_of(c)?)
        }
    };
    let tag = |d: Dataset, s: Split| {
        let mut d = d.with_split(s);
        d.provenance = provenance.clone();
        d
    };
    Ok(DatasetSplits {
        train: tag(train, Split::Train),
        valid: tag(valid, Split::Valid),
        test: tag(test, Split::Test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shapes() {
        let s = generate_synthetic(&SyntheticSpec::default()).unwrap();
        for d in [&s.train, &s.valid, &s.test] {
            assert_eq!(d.len(), 500);
            assert_eq!(d.inputs.len(), 500 * 20);
            assert_eq!(d.targets.len(), 500 * 20);
        }
    }

    #[test]
    fn infeasible_spec() {
        let spec = SyntheticSpec {
            series_len: 4,
            input_len: 2,
            horizon: 2,
            offset_range: 0,
            ..SyntheticSpec::default()
        };
        // Only i1=0, i2=1 exists and puts the step at 2, the first target step.
        assert!(generate_synthetic(&spec).is_err());
        let bad = SyntheticSpec {
            series_len: 41,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&bad).is_err());
    }

    #[test]
    fn window_counts() {
        let s: Vec<f64> = (0..200).map(f64::from).collect();
        assert_eq!(window_series(&s, 168, 24, 1).unwrap().len(), 9);
        assert_eq!(window_series(&s[..140], 84, 56, 1).unwrap().len(), 1);
        assert_eq!(window_series(&s, 100, 50, 200).unwrap().len(), 1);
        assert!(window_series(&s[..10], 8, 4, 1).is_err());
        let d = window_series(&s[..10], 3, 2, 2).unwrap();
        assert_eq!(d.input(1), &[2.0, 3.0, 4.0]);
        assert_eq!(d.target(1), &[5.0, 6.0]);
    }

    #[test]
    fn split_boundaries() {
        let s = vec![0.0; 100];
        let lens: Vec<usize> = chronological_split(&s, [0.6, 0.2, 0.2], 1).unwrap().iter().map(|p| p.len()).collect();
        assert_eq!(lens, vec![60, 20, 20]);
        let s = vec![0.0; 17544];
        let lens: Vec<usize> = chronological_split(&s, [0.6, 0.2, 0.2], 1).unwrap().iter().map(|p| p.len()).collect();
        assert_eq!(lens, vec![10526, 3509, 3509]);
        assert!(chronological_split(&s, [1.0, 0.0, 0.0], 1).is_err());
        assert!(chronological_split(&s, [0.5, 0.2, 0.2], 1).is_err());
    }

    #[test]
    fn normalization() {
        assert_eq!(min_max_normalize(&[2.0, 4.0, 3.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(min_max_normalize(&[5.0, 5.0]), vec![0.0, 0.0]);
    }
}
