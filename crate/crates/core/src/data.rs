//! In-memory datasets and the transforms applied before training: unit-range
//! normalization, seeded splitting, oversampling to class balance, feature
//! statistics, and a synthetic generator used by the test harness and the
//! `synth` subcommand.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Per-feature acquisition cost, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVector {
    values: Vec<f64>,
}

impl CostVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (i, &c) in values.iter().enumerate() {
            if !c.is_finite() || c <= 0.0 {
                return Err(Error::InvalidCost { feature: i });
            }
        }
        Ok(Self { values })
    }

    /// Equal cost `c` for `len` features.
    pub fn uniform(len: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; len])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, feature: usize) -> f64 {
        self.values[feature]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sum of all feature costs.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Per-feature mean and input bounds, estimated from training data.
///
/// Means fill unknown features during acquisition; the bounds feed the
/// bounded-input propagation rule applied to the first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStatistics {
    means: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl FeatureStatistics {
    pub fn new(means: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != means.len() {
            return Err(Error::DimensionMismatch {
                what: "lower bounds",
                expected: means.len(),
                actual: lower.len(),
            });
        }
        if upper.len() != means.len() {
            return Err(Error::DimensionMismatch {
                what: "upper bounds",
                expected: means.len(),
                actual: upper.len(),
            });
        }
        for i in 0..means.len() {
            if !means[i].is_finite() || !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(Error::NonFinite("feature statistics"));
            }
            if lower[i] > upper[i] {
                return Err(Error::InvalidBounds { feature: i });
            }
            if means[i] < lower[i] || means[i] > upper[i] {
                return Err(Error::InvalidConfig(format!(
                    "mean of feature {i} lies outside its bounds"
                )));
            }
        }
        Ok(Self {
            means,
            lower,
            upper,
        })
    }

    pub fn feature_count(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }
}

/// A fully observed, labeled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    rows: Vec<Vec<f64>>,
    labels: Vec<usize>,
    costs: CostVector,
    class_count: usize,
}

impl Dataset {
    pub fn new(
        feature_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<usize>,
        costs: CostVector,
        class_count: usize,
    ) -> Result<Self> {
        let m = feature_names.len();
        if costs.len() != m {
            return Err(Error::DimensionMismatch {
                what: "cost vector",
                expected: m,
                actual: costs.len(),
            });
        }
        if labels.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                what: "labels",
                expected: rows.len(),
                actual: labels.len(),
            });
        }
        for i in 0..m {
            for j in i + 1..m {
                if feature_names[i] == feature_names[j] {
                    return Err(Error::InvalidConfig(format!(
                        "duplicate feature name `{}`",
                        feature_names[i]
                    )));
                }
            }
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    what: "dataset row",
                    expected: m,
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dataset cell"));
            }
            if labels[r] >= class_count {
                return Err(Error::LabelOutOfRange {
                    label: labels[r],
                    classes: class_count,
                });
            }
        }
        Ok(Self {
            feature_names,
            rows,
            labels,
            costs,
            class_count,
        })
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn costs(&self) -> &CostVector {
        &self.costs
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    fn with_rows(&self, rows: Vec<Vec<f64>>, labels: Vec<usize>) -> Self {
        Self {
            feature_names: self.feature_names.clone(),
            rows,
            labels,
            costs: self.costs.clone(),
            class_count: self.class_count,
        }
    }
}

/// Per-feature affine map fitted on a training split so its values land in
/// `[0, 1]`. Applying it to other data clips into the same range.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationSpec {
    mins: Vec<f64>,
    maxs: Vec<f64>,
}

impl NormalizationSpec {
    pub fn new(mins: Vec<f64>, maxs: Vec<f64>) -> Result<Self> {
        if mins.len() != maxs.len() {
            return Err(Error::DimensionMismatch {
                what: "normalization bounds",
                expected: mins.len(),
                actual: maxs.len(),
            });
        }
        for i in 0..mins.len() {
            if !mins[i].is_finite() || !maxs[i].is_finite() {
                return Err(Error::NonFinite("normalization bounds"));
            }
            if mins[i] > maxs[i] {
                return Err(Error::InvalidBounds { feature: i });
            }
        }
        Ok(Self { mins, maxs })
    }

    pub fn feature_count(&self) -> usize {
        self.mins.len()
    }

    pub fn mins(&self) -> &[f64] {
        &self.mins
    }

    pub fn maxs(&self) -> &[f64] {
        &self.maxs
    }

    /// Maps one raw value of feature `i` into `[0, 1]`, clipping values that
    /// fall outside the training range. Constant features map to 0.
    pub fn apply_value(&self, feature: usize, raw: f64) -> f64 {
        let (lo, hi) = (self.mins[feature], self.maxs[feature]);
        if hi <= lo {
            return 0.0;
        }
        ((raw - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    /// Maps a full raw row into `[0, 1]^m`.
    pub fn apply_row(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.mins.len() {
            return Err(Error::DimensionMismatch {
                what: "row",
                expected: self.mins.len(),
                actual: raw.len(),
            });
        }
        Ok(raw
            .iter()
            .enumerate()
            .map(|(i, &v)| self.apply_value(i, v))
            .collect())
    }

    /// Transforms every row of `dataset`.
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        let rows = dataset
            .rows()
            .iter()
            .map(|r| self.apply_row(r))
            .collect::<Result<Vec<_>>>()?;
        Ok(dataset.with_rows(rows, dataset.labels.clone()))
    }
}

/// Fits a [`NormalizationSpec`] on `dataset` and returns the transformed
/// dataset together with the spec.
pub fn normalize(dataset: &Dataset) -> Result<(Dataset, NormalizationSpec)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let m = dataset.feature_count();
    let mut mins = vec![f64::INFINITY; m];
    let mut maxs = vec![f64::NEG_INFINITY; m];
    for row in dataset.rows() {
        for (i, &v) in row.iter().enumerate() {
            mins[i] = mins[i].min(v);
            maxs[i] = maxs[i].max(v);
        }
    }
    let spec = NormalizationSpec::new(mins, maxs)?;
    let transformed = spec.apply(dataset)?;
    Ok((transformed, spec))
}

/// Seeded shuffle split into `(train, test)` with `floor(n * train_fraction)`
/// training rows. Both splits are non-empty or the call fails.
pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = dataset.len();
    let train_len = (n as f64 * train_fraction).floor() as usize;
    if train_len == 0 || train_len == n {
        return Err(Error::InvalidConfig(format!(
            "split of {n} rows at fraction {train_fraction} leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut ChaCha8Rng::seed_from_u64(seed));

    let take = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        let rows = idx.iter().map(|&i| dataset.rows[i].clone()).collect();
        let labels = idx.iter().map(|&i| dataset.labels[i]).collect();
        (rows, labels)
    };
    let (train_rows, train_labels) = take(&order[..train_len]);
    let (test_rows, test_labels) = take(&order[train_len..]);
    Ok((
        dataset.with_rows(train_rows, train_labels),
        dataset.with_rows(test_rows, test_labels),
    ))
}

/// Oversamples minority classes (seeded, with replacement) until every class
/// matches the majority count. Every class in `[0, class_count)` must be
/// present.
pub fn oversample_balance(train: &Dataset, seed: u64) -> Result<Dataset> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); train.class_count()];
    for (i, &label) in train.labels().iter().enumerate() {
        by_class[label].push(i);
    }
    for (class, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::ClassMissing { class });
        }
    }
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = train.rows.clone();
    let mut labels = train.labels.clone();
    for members in &by_class {
        for _ in members.len()..target {
            let pick = members[rng.gen_range(0..members.len())];
            rows.push(train.rows[pick].clone());
            labels.push(train.labels[pick]);
        }
    }
    Ok(train.with_rows(rows, labels))
}

/// Per-feature arithmetic means with the theoretical `[0, 1]` bounds of
/// normalized data.
pub fn feature_statistics(train: &Dataset) -> Result<FeatureStatistics> {
    statistics_with_bounds(train, false)
}

/// Like [`feature_statistics`] but with empirical per-feature min/max bounds
/// instead of the theoretical `[0, 1]`.
pub fn feature_statistics_empirical(train: &Dataset) -> Result<FeatureStatistics> {
    statistics_with_bounds(train, true)
}

fn statistics_with_bounds(train: &Dataset, empirical: bool) -> Result<FeatureStatistics> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let m = train.feature_count();
    let mut means = vec![0.0; m];
    let mut lower = vec![f64::INFINITY; m];
    let mut upper = vec![f64::NEG_INFINITY; m];
    for row in train.rows() {
        for (i, &v) in row.iter().enumerate() {
            means[i] += v;
            lower[i] = lower[i].min(v);
            upper[i] = upper[i].max(v);
        }
    }
    let n = train.len() as f64;
    for mean in &mut means {
        *mean /= n;
    }
    if !empirical {
        lower = vec![0.0; m];
        upper = vec![1.0; m];
    }
    FeatureStatistics::new(means, lower, upper)
}

/// Configuration of the synthetic generator.
///
/// Rows are uniform in `[0, 1]^m`; the label is the class bin of the mean of
/// the informative features, flipped to a random class with probability
/// `noise`. Non-informative features never influence the label.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub feature_count: usize,
    pub class_count: usize,
    pub informative: Vec<usize>,
    pub noise: f64,
    pub rows: usize,
    pub seed: u64,
    pub costs: CostProfile,
}

/// Cost assignment used by the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub enum CostProfile {
    Uniform(f64),
    PerFeature(Vec<f64>),
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.feature_count == 0 || self.class_count == 0 || self.rows == 0 {
            return Err(Error::InvalidConfig(
                "feature, class and row counts must be positive".into(),
            ));
        }
        if self.informative.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one informative feature is required".into(),
            ));
        }
        for (n, &i) in self.informative.iter().enumerate() {
            if i >= self.feature_count {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.feature_count,
                });
            }
            if self.informative[..n].contains(&i) {
                return Err(Error::InvalidConfig(format!(
                    "informative feature {i} listed twice"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::InvalidConfig(format!(
                "noise must be in [0, 1], got {}",
                self.noise
            )));
        }
        Ok(())
    }

    /// The generating rule itself: the class bin of the informative-feature
    /// mean. This is the Bayes-optimal classifier at zero noise.
    pub fn rule_label(&self, row: &[f64]) -> usize {
        let score: f64 = self.informative.iter().map(|&i| row[i]).sum::<f64>()
            / self.informative.len() as f64;
        let bin = (score * self.class_count as f64).floor() as usize;
        bin.min(self.class_count - 1)
    }
}

/// Generates a deterministic synthetic dataset from `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let costs = match &spec.costs {
        CostProfile::Uniform(c) => CostVector::uniform(spec.feature_count, *c)?,
        CostProfile::PerFeature(values) => {
            if values.len() != spec.feature_count {
                return Err(Error::DimensionMismatch {
                    what: "cost profile",
                    expected: spec.feature_count,
                    actual: values.len(),
                });
            }
            CostVector::new(values.clone())?
        }
    };
    let names = (0..spec.feature_count)
        .map(|i| format!("f{i:02}"))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = Vec::with_capacity(spec.rows);
    let mut labels = Vec::with_capacity(spec.rows);
    for _ in 0..spec.rows {
        let row: Vec<f64> = (0..spec.feature_count).map(|_| rng.gen::<f64>()).collect();
        let mut label = spec.rule_label(&row);
        if spec.noise > 0.0 && rng.gen::<f64>() < spec.noise {
            label = rng.gen_range(0..spec.class_count);
        }
        rows.push(row);
        labels.push(label);
    }
    Dataset::new(names, rows, labels, costs, spec.class_count)
}

/// Fisher-Yates shuffle driven by the supplied RNG.
pub(crate) fn shuffle<T, R: Rng>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}
