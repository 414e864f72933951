//! Classification datasets: seeded Gaussian-blob generation, CSV I/O, class
//! subsetting, task splits and train-fitted standardisation.

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{dimension, precondition, Error, Result};
use crate::linalg::Matrix;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize, name: impl Into<String>) -> Result<Self> {
        let d = Self {
            features,
            labels,
            num_classes,
            name: name.into(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.features.nrows() {
            return Err(dimension(format!(
                "{} labels for {} rows",
                self.labels.len(),
                self.features.nrows()
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(precondition(format!(
                "label {bad} outside [0, {})",
                self.num_classes
            )));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("features of {}", self.name)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: self.name.clone(),
        }
    }
}

/// Seeded Gaussian-blob task.
///
/// Every class owns `modes_per_class` centres drawn uniformly from
/// `[-center_scale, center_scale]^dim`; each sample picks one of its class's
/// centres uniformly and adds isotropic noise of std `noise_std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub center_scale: f64,
    pub noise_std: f64,
    pub modes_per_class: usize,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            dim: 32,
            per_class_train: 500,
            per_class_test: 100,
            center_scale: 1.0,
            noise_std: 0.5,
            modes_per_class: 8,
            seed: 1,
        }
    }
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(precondition("blob tasks need at least 2 classes"));
        }
        if self.dim < 2 {
            return Err(precondition("blob tasks need dim >= 2"));
        }
        if self.modes_per_class == 0 {
            return Err(precondition("modes_per_class must be at least 1"));
        }
        for (name, v) in [("center_scale", self.center_scale), ("noise_std", self.noise_std)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(precondition(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Centres indexed `[class][mode]`.
    pub fn centers(&self) -> Vec<Vec<Array1<f64>>> {
        let mut rng = seed::derived_rng(self.seed, "blob-centers", 0);
        let s = self.center_scale;
        (0..self.num_classes)
            .map(|_| {
                (0..self.modes_per_class)
                    .map(|_| Array1::from_shape_simple_fn(self.dim, || rng.random_range(-s..=s)))
                    .collect()
            })
            .collect()
    }
}

fn draw_split(spec: &BlobSpec, centers: &[Vec<Array1<f64>>], per_class: usize, stream: &str) -> Matrix {
    let noise = Normal::new(0.0, spec.noise_std).expect("validated noise_std");
    let mut x = Array2::zeros((spec.num_classes * per_class, spec.dim));
    for (c, modes) in centers.iter().enumerate() {
        let mut rng = seed::derived_rng(spec.seed, stream, c as u64);
        for i in 0..per_class {
            let center = &modes[rng.random_range(0..modes.len())];
            let mut row = x.row_mut(c * per_class + i);
            for (dst, &mu) in row.iter_mut().zip(center) {
                *dst = mu + noise.sample(&mut rng);
            }
        }
    }
    x
}

/// Train and test splits drawn independently from the same centres. Rows are
/// grouped by class in ascending order.
pub fn make_blobs(spec: &BlobSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let centers = spec.centers();
    let labels = |per: usize| (0..spec.num_classes).flat_map(|c| std::iter::repeat_n(c, per)).collect();
    let name = format!("blobs-c{}-d{}-s{}", spec.num_classes, spec.dim, spec.seed);
    let train = Dataset {
        features: draw_split(spec, &centers, spec.per_class_train, "blob-train"),
        labels: labels(spec.per_class_train),
        num_classes: spec.num_classes,
        name: format!("{name}-train"),
    };
    let test = Dataset {
        features: draw_split(spec, &centers, spec.per_class_test, "blob-test"),
        labels: labels(spec.per_class_test),
        num_classes: spec.num_classes,
        name: format!("{name}-test"),
    };
    Ok((train, test))
}

/// Samples whose label is in `classes`, relabelled by position in `classes`.
pub fn class_subset(d: &Dataset, classes: &[usize]) -> Result<Dataset> {
    let mut map = vec![None; d.num_classes];
    for (new, &old) in classes.iter().enumerate() {
        if old >= d.num_classes {
            return Err(precondition(format!(
                "unknown class {old} in a {}-class dataset",
                d.num_classes
            )));
        }
        if map[old].replace(new).is_some() {
            return Err(precondition(format!("class {old} listed twice")));
        }
    }
    let keep: Vec<usize> = (0..d.len()).filter(|&i| map[d.labels[i]].is_some()).collect();
    let mut out = d.select(&keep);
    for l in &mut out.labels {
        *l = map[*l].expect("kept rows are mapped");
    }
    out.num_classes = classes.len();
    Ok(out)
}

/// One relabelled dataset per class group; groups must be disjoint.
pub fn split_tasks(d: &Dataset, partition: &[Vec<usize>]) -> Result<Vec<Dataset>> {
    let mut seen = HashSet::new();
    for group in partition {
        for &c in group {
            if !seen.insert(c) {
                return Err(precondition(format!("class {c} appears in two task groups")));
            }
        }
    }
    partition
        .iter()
        .enumerate()
        .map(|(t, group)| {
            let mut task = class_subset(d, group)?;
            task.name = format!("{}-task{}", d.name, t + 1);
            Ok(task)
        })
        .collect()
}

pub type SplitPair = (Dataset, Dataset);

/// Source and target `(train, test)` pairs. Target centres come from a stream
/// salted away from the source, so the two tasks never share geometry.
pub fn ood_pair(source: &BlobSpec, target: &BlobSpec) -> Result<(SplitPair, SplitPair)> {
    if source == target {
        return Err(precondition(
            "OOD target must differ from the source in seed or class geometry",
        ));
    }
    let salted = BlobSpec {
        seed: seed::derive(target.seed, "ood-target", 0),
        ..target.clone()
    };
    let src = make_blobs(source)?;
    let (mut train, mut test) = make_blobs(&salted)?;
    train.name = format!("ood-{}", train.name);
    test.name = format!("ood-{}", test.name);
    Ok((src, (train, test)))
}

/// Per-feature affine map fitted on one split and reused on others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation, replaced by 1 where it is 0.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(precondition("cannot fit standardisation on zero rows"));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 0.0 { s } else { 1.0 });
        Ok(Self {
            mean: mean.to_vec(),
            scale: scale.to_vec(),
        })
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        if d.dim() != self.mean.len() {
            return Err(dimension(format!(
                "standardiser fitted on {} features, dataset has {}",
                self.mean.len(),
                d.dim()
            )));
        }
        let mean = Array1::from(self.mean.clone());
        let scale = Array1::from(self.scale.clone());
        let mut out = d.clone();
        out.features = (&d.features - &mean) / &scale;
        Ok(out)
    }
}

/// Standardises both splits with statistics of `train` only.
pub fn standardize_pair(train: &Dataset, test: &Dataset) -> Result<SplitPair> {
    let s = Standardizer::fit(&train.features)?;
    Ok((s.apply(train)?, s.apply(test)?))
}

/// Reads `label,feature,...` rows without a header.
pub fn load_csv(path: &Path, num_classes: usize) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let mut fields = record.iter();
        let label_text = fields.next().unwrap_or("");
        let label: usize = label_text
            .parse()
            .map_err(|_| parse_err(line, format!("label {label_text:?} is not a class index")))?;
        if label >= num_classes {
            return Err(parse_err(line, format!("label {label} outside [0, {num_classes})")));
        }
        let row: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(line, format!("feature {f:?} is not a finite number")))
            })
            .collect::<Result<_>>()?;
        match width {
            None if row.is_empty() => return Err(parse_err(line, "row has no features".into())),
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(parse_err(line, format!("expected {w} features, found {}", row.len())))
            }
            Some(_) => {}
        }
        labels.push(label);
        data.extend(row);
    }
    let cols = width.unwrap_or(0);
    let features = Array2::from_shape_vec((labels.len(), cols), data).map_err(|e| dimension(e.to_string()))?;
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_owned(), |s| s.to_string_lossy().into_owned());
    Dataset::new(features, labels, num_classes, name)
}

/// Writes `label,feature,...` rows; values use shortest round-trip notation.
pub fn save_csv(d: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for (row, label) in d.features.rows().into_iter().zip(&d.labels) {
        let mut record = Vec::with_capacity(row.len() + 1);
        record.push(label.to_string());
        record.extend(row.iter().map(|v| v.to_string()));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> BlobSpec {
        BlobSpec {
            num_classes: 4,
            dim: 3,
            per_class_train: 6,
            per_class_test: 2,
            modes_per_class: 2,
            ..BlobSpec::default()
        }
    }

    #[test]
    fn blobs_are_deterministic_and_grouped() {
        let (a, b) = make_blobs(&spec()).unwrap();
        let (a2, b2) = make_blobs(&spec()).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        assert_eq!(a.len(), 24);
        assert_eq!(a.class_counts(), vec![6; 4]);
        assert_ne!(a.features.row(0), b.features.row(0));
    }

    #[test]
    fn subset_relabels_in_given_order() {
        let (train, _) = make_blobs(&spec()).unwrap();
        let sub = class_subset(&train, &[2, 0]).unwrap();
        assert_eq!(sub.num_classes, 2);
        assert_eq!(sub.len(), 12);
        assert_eq!(sub.labels[..6], [1; 6]);
        assert_eq!(sub.labels[6..], [0; 6]);
        assert!(class_subset(&train, &[4]).is_err());
        assert!(class_subset(&train, &[1, 1]).is_err());
    }

    #[test]
    fn overlapping_partitions_are_rejected() {
        let (train, _) = make_blobs(&spec()).unwrap();
        assert!(split_tasks(&train, &[vec![0, 1], vec![1, 2]]).is_err());
    }

    #[test]
    fn standardizer_keeps_constant_columns_finite() {
        let x = ndarray::array![[1.0, 5.0], [3.0, 5.0]];
        let d = Dataset::new(x, vec![0, 1], 2, "t").unwrap();
        let s = Standardizer::fit(&d.features).unwrap();
        let out = s.apply(&d).unwrap();
        assert_eq!(out.features, ndarray::array![[-1.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn identical_ood_specs_are_refused() {
        assert!(ood_pair(&spec(), &spec()).is_err());
        let target = BlobSpec { seed: 2, ..spec() };
        assert!(ood_pair(&spec(), &target).is_ok());
    }
}
