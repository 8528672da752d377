//! Datasets: synthetic generators, CSV ingestion, splitting and normalization.
//!
//! Labels are always stored as `-1.0` or `+1.0`.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Feature rows with binary labels in {-1, +1}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset, checking shape and label invariants.
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if features.is_empty() {
            return Err(invalid("dataset must contain at least one row"));
        }
        if features.len() != labels.len() {
            return Err(invalid(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let d = features[0].len();
        if d == 0 {
            return Err(invalid("dataset must have at least one feature"));
        }
        if let Some(i) = features.iter().position(|r| r.len() != d) {
            return Err(invalid(format!("row {i} has {} features, expected {d}", features[i].len())));
        }
        if let Some(i) = labels.iter().position(|&y| y != 1.0 && y != -1.0) {
            return Err(invalid(format!("label {} at row {i} is not -1 or +1", labels[i])));
        }
        Ok(Dataset { features, labels, feature_names: None })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.dim() {
            return Err(invalid(format!("{} feature names for {} features", names.len(), self.dim())));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    /// True when both classes are present.
    pub fn has_both_classes(&self) -> bool {
        self.labels.contains(&1.0) && self.labels.contains(&-1.0)
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let features = indices.iter().map(|&i| self.features[i].clone()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let mut out = Dataset::new(features, labels)?;
        out.feature_names = self.feature_names.clone();
        Ok(out)
    }

    /// Concatenates the rows of `other` after the rows of `self`.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if other.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        let mut features = self.features.clone();
        features.extend(other.features.iter().cloned());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut out = Dataset::new(features, labels)?;
        out.feature_names = self.feature_names.clone();
        Ok(out)
    }

    /// Same labels, every row translated by `offset`.
    pub fn shifted(&self, offset: &[f64]) -> Result<Self> {
        crate::error::check_dim(self.dim(), offset.len())?;
        let features = self
            .features
            .iter()
            .map(|r| r.iter().zip(offset).map(|(a, b)| a + b).collect())
            .collect();
        let mut out = Dataset::new(features, self.labels.clone())?;
        out.feature_names = self.feature_names.clone();
        Ok(out)
    }

    /// Per-feature `[min, max]` over all rows.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        (0..self.dim())
            .map(|j| {
                self.features.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min(r[j]), hi.max(r[j]))
                })
            })
            .collect()
    }
}

/// Per-feature affine normalization `(x - shift) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormStats {
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        crate::error::check_dim(self.shift.len(), data.dim())?;
        let features = data.features.iter().map(|r| self.apply_point(r)).collect();
        let mut out = Dataset::new(features, data.labels.clone())?;
        out.feature_names = data.feature_names.clone();
        Ok(out)
    }

    pub fn apply_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.shift.iter().zip(&self.scale)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    pub fn invert_point(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.shift.iter().zip(&self.scale)).map(|(v, (m, s))| v * s + m).collect()
    }

    pub fn invert(&self, data: &Dataset) -> Result<Dataset> {
        crate::error::check_dim(self.shift.len(), data.dim())?;
        let features = data.features.iter().map(|r| self.invert_point(r)).collect();
        let mut out = Dataset::new(features, data.labels.clone())?;
        out.feature_names = data.feature_names.clone();
        Ok(out)
    }
}

fn check_even(n: usize) -> Result<()> {
    if n < 2 || n % 2 != 0 {
        return Err(invalid(format!("sample count must be even and at least 2, got {n}")));
    }
    Ok(())
}

/// Two interleaved unit half circles in 2D.
///
/// Class +1 lies on the upper arc `(cos t, sin t)`, class -1 on the flipped arc
/// `(1 - cos t, 0.5 - sin t)`, with `t` evenly spaced over `[0, pi]`. Gaussian
/// noise with standard deviation `noise` is added to each coordinate. Rows are
/// ordered class +1 first.
pub fn generate_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    check_even(n)?;
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(invalid(format!("noise must be a finite non-negative number, got {noise}")));
    }
    let half = n / 2;
    let angle = |i: usize| if half == 1 { 0.0 } else { PI * i as f64 / (half - 1) as f64 };
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..half {
        let t = angle(i);
        features.push(vec![t.cos(), t.sin()]);
        labels.push(1.0);
    }
    for i in 0..half {
        let t = angle(i);
        features.push(vec![1.0 - t.cos(), 0.5 - t.sin()]);
        labels.push(-1.0);
    }
    if noise > 0.0 {
        let mut rng = crate::rng(seed);
        let normal = Normal::new(0.0, noise).map_err(|e| invalid(e.to_string()))?;
        for row in &mut features {
            for v in row.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
    Dataset::new(features, labels)
}

/// Two isotropic unit-variance Gaussian clusters in `d` dimensions.
///
/// Centres sit at `+separation/2` (class +1) and `-separation/2` (class -1) on
/// the first axis, so their distance is exactly `separation`.
pub fn generate_blobs(n: usize, d: usize, separation: f64, seed: u64) -> Result<Dataset> {
    generate_blobs_with_std(n, d, separation, 1.0, seed)
}

/// [`generate_blobs`] with an explicit per-coordinate standard deviation.
pub fn generate_blobs_with_std(n: usize, d: usize, separation: f64, std: f64, seed: u64) -> Result<Dataset> {
    check_even(n)?;
    if d == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    if !separation.is_finite() || !(std >= 0.0) || !std.is_finite() {
        return Err(invalid("separation and std must be finite, std non-negative"));
    }
    let mut rng = crate::rng(seed);
    let normal = Normal::new(0.0, std).map_err(|e| invalid(e.to_string()))?;
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (label, centre) in [(1.0, separation / 2.0), (-1.0, -separation / 2.0)] {
        for _ in 0..n / 2 {
            let mut row: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
            row[0] += centre;
            features.push(row);
            labels.push(label);
        }
    }
    Dataset::new(features, labels)
}

/// Reads a headered, comma-separated numeric file.
///
/// All columns except `label_column` become features, in header order. Labels
/// `1` map to +1; `-1` and `0` map to -1.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    read_csv(file, label_column)
}

/// [`load_csv`] over any reader.
pub fn read_csv<R: std::io::Read>(reader: R, label_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingColumn(label_column.to_string()))?;
    let names: Vec<String> =
        header.iter().enumerate().filter(|(i, _)| *i != label_idx).map(|(_, h)| h.clone()).collect();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = i + 2;
        let mut row = Vec::with_capacity(names.len());
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                labels.push(parse_label(cell, line)?);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                    line,
                    column: header[j].clone(),
                    value: cell.to_string(),
                })?;
                row.push(v);
            }
        }
        features.push(row);
    }
    Dataset::new(features, labels)?.with_feature_names(names)
}

fn parse_label(cell: &str, line: usize) -> Result<f64> {
    let unmappable = || Error::UnmappableLabel { line, value: cell.to_string() };
    let v: f64 = cell.parse().map_err(|_| unmappable())?;
    if v == 1.0 {
        Ok(1.0)
    } else if v == 0.0 || v == -1.0 {
        Ok(-1.0)
    } else {
        Err(unmappable())
    }
}

/// Random train/test partition.
///
/// The train part gets `floor(n * train_fraction)` rows, clamped so both parts
/// are non-empty.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let n = data.len();
    if n < 2 {
        return Err(invalid("cannot split fewer than two rows into two non-empty parts"));
    }
    let n_train = ((n as f64 * train_fraction).floor() as usize).clamp(1, n - 1);
    let (train_idx, test_idx) = split_indices(n, n_train, seed);
    Ok((data.subset(&train_idx)?, data.subset(&test_idx)?))
}

/// Seeded shuffle of `0..n`, cut after `first` elements.
pub(crate) fn split_indices(n: usize, first: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut crate::rng(seed));
    let rest = idx.split_off(first);
    (idx, rest)
}

/// Shifts and scales every feature to zero mean and unit (population)
/// standard deviation. Constant features keep scale 1.
pub fn normalize(data: &Dataset) -> (Dataset, NormStats) {
    let n = data.len() as f64;
    let d = data.dim();
    let mut shift = vec![0.0; d];
    let mut scale = vec![1.0; d];
    for j in 0..d {
        let mean = data.features.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = data.features.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        shift[j] = mean;
        if var > 0.0 {
            scale[j] = var.sqrt();
        }
    }
    let stats = NormStats { shift, scale };
    let normalized = stats.apply(data).expect("stats built from this dataset");
    (normalized, stats)
}

/// `n` points drawn uniformly from the box `bounds` (one `(lo, hi)` per dimension).
pub fn uniform_points(bounds: &[(f64, f64)], n: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::Rng;
    let mut rng = crate::rng(seed);
    (0..n)
        .map(|_| bounds.iter().map(|&(lo, hi)| if hi > lo { rng.random_range(lo..hi) } else { lo }).collect())
        .collect()
}

/// Regular `resolution x resolution` grid over a 2D box, endpoints included,
/// row-major with the second coordinate indexing rows.
pub fn grid_points_2d(bounds: [(f64, f64); 2], resolution: usize) -> Vec<Vec<f64>> {
    let axis = |(lo, hi): (f64, f64)| -> Vec<f64> {
        if resolution == 1 {
            vec![(lo + hi) / 2.0]
        } else {
            (0..resolution).map(|i| lo + (hi - lo) * i as f64 / (resolution - 1) as f64).collect()
        }
    };
    let (xs, ys) = (axis(bounds[0]), axis(bounds[1]));
    ys.iter().flat_map(|&y| xs.iter().map(move |&x| vec![x, y])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_moons_noise_free_geometry() {
        let ds = generate_two_moons(8, 0.0, 0).unwrap();
        assert_eq!(ds.len(), 8);
        assert_eq!(ds.labels().iter().filter(|&&y| y == 1.0).count(), 4);
        for (x, &y) in ds.features().iter().zip(ds.labels()) {
            if y == 1.0 {
                assert!((x[0].hypot(x[1]) - 1.0).abs() < 1e-12);
                assert!(x[1] >= 0.0);
            }
        }
    }

    #[test]
    fn two_moons_deterministic_and_guarded() {
        let a = generate_two_moons(100, 0.1, 7).unwrap();
        let b = generate_two_moons(100, 0.1, 7).unwrap();
        assert_eq!(a, b);
        assert!(matches!(generate_two_moons(3, 0.1, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(generate_two_moons(0, 0.1, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn blobs_well_separated() {
        let ds = generate_blobs(4, 2, 10.0, 1).unwrap();
        // every cross-class pair is further apart than half the separation and
        // the perpendicular bisector x0 = 0 separates the classes
        for i in 0..4 {
            assert_eq!(ds.row(i)[0].signum(), ds.labels()[i]);
            assert!(ds.row(i)[0].abs() > 2.5, "row {i} too close to the bisector");
            for j in 0..4 {
                if ds.labels()[i] != ds.labels()[j] {
                    let dist: f64 =
                        ds.row(i).iter().zip(ds.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    assert!(dist > 5.0);
                }
            }
        }
    }

    #[test]
    fn blobs_zero_separation_and_determinism() {
        let ds = generate_blobs(2, 1, 0.0, 0).unwrap();
        assert_eq!(ds.labels(), &[1.0, -1.0]);
        assert_eq!(generate_blobs(50, 3, 2.0, 9).unwrap(), generate_blobs(50, 3, 2.0, 9).unwrap());
        assert!(generate_blobs(3, 2, 1.0, 0).is_err());
        assert!(generate_blobs(4, 0, 1.0, 0).is_err());
    }

    #[test]
    fn csv_reads_and_maps_labels() {
        let ds = read_csv("a,b,y\n1,2,1\n3,4,0\n".as_bytes(), "y").unwrap();
        assert_eq!(ds.features(), &[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(ds.labels(), &[1.0, -1.0]);
        assert_eq!(ds.feature_names().unwrap(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn csv_errors_are_distinct() {
        assert!(matches!(
            read_csv("a,b,y\n1,2,2\n".as_bytes(), "y"),
            Err(Error::UnmappableLabel { line: 2, .. })
        ));
        assert!(matches!(read_csv("a,b,y\n1,2,1\n".as_bytes(), "z"), Err(Error::MissingColumn(c)) if c == "z"));
        assert!(matches!(
            read_csv("a,b,y\n1,x,1\n".as_bytes(), "y"),
            Err(Error::NonNumeric { line: 2, ref column, .. }) if column == "b"
        ));
        assert!(matches!(load_csv("/definitely/not/here.csv", "y"), Err(Error::Io { .. })));
    }

    #[test]
    fn split_examples() {
        let ds = generate_blobs(10, 2, 1.0, 0).unwrap();
        let (tr, te) = split(&ds, 0.5, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (5, 5));
        assert_eq!(split(&ds, 0.5, 3).unwrap(), (tr, te));

        let two = generate_blobs(2, 1, 1.0, 0).unwrap();
        let (a, b) = split(&two, 0.9, 1).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
        assert!(split(&ds, 1.0, 0).is_err());
        assert!(split(&ds, 0.0, 0).is_err());
    }

    #[test]
    fn normalize_examples() {
        let ds = Dataset::new(vec![vec![0.0], vec![2.0]], vec![1.0, -1.0]).unwrap();
        let (z, stats) = normalize(&ds);
        assert_eq!(z.features(), &[vec![-1.0], vec![1.0]]);
        assert_eq!(stats.shift, vec![1.0]);
        assert_eq!(stats.scale, vec![1.0]);

        let c = Dataset::new(vec![vec![5.0], vec![5.0]], vec![1.0, -1.0]).unwrap();
        let (z, stats) = normalize(&c);
        assert_eq!(z.features(), &[vec![0.0], vec![0.0]]);
        assert_eq!(stats.scale, vec![1.0]);
    }

    #[test]
    fn normalize_round_trip_on_new_data() {
        let train = generate_blobs(40, 3, 4.0, 2).unwrap();
        let (_, stats) = normalize(&train);
        let fresh = generate_blobs(20, 3, 1.0, 5).unwrap();
        let back = stats.invert(&stats.apply(&fresh).unwrap()).unwrap();
        for (a, b) in back.features().iter().flatten().zip(fresh.features().iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dataset_invariants_enforced() {
        assert!(Dataset::new(vec![], vec![]).is_err());
        assert!(Dataset::new(vec![vec![1.0]], vec![0.5]).is_err());
        assert!(Dataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![1.0, 1.0]).is_err());
        assert!(Dataset::new(vec![vec![1.0]], vec![1.0, -1.0]).is_err());
    }

    proptest! {
        #[test]
        fn split_is_a_disjoint_exhaustive_partition(n in 2usize..200, tenths in 1usize..10, seed in any::<u64>()) {
            let frac = tenths as f64 / 10.0;
            let (a, b) = split_indices(n, ((n as f64 * frac).floor() as usize).clamp(1, n - 1), seed);
            prop_assert!(!a.is_empty() && !b.is_empty());
            let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn normalize_moments(rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 3), 2..60)) {
            let labels = vec![1.0; rows.len()];
            let ds = Dataset::new(rows, labels).unwrap();
            let (z, stats) = normalize(&ds);
            let n = z.len() as f64;
            for j in 0..3 {
                let mean = z.features().iter().map(|r| r[j]).sum::<f64>() / n;
                prop_assert!(mean.abs() < 1e-10);
                if stats.scale[j] != 1.0 || ds.features().iter().any(|r| r[j] != ds.row(0)[j]) {
                    let var = z.features().iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                    prop_assert!((var.sqrt() - 1.0).abs() < 1e-10);
                }
            }
        }
    }
}
