use serde::{Deserialize, Serialize};

use super::table::TabularDataset;
use crate::error::{Error, Result};
use crate::numcore::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub valid_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.6,
            valid_frac: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| f > 0.0 && f < 1.0;
        if ok(self.train_frac) && ok(self.valid_frac) && self.train_frac + self.valid_frac < 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "split fractions must lie in (0, 1) and sum below 1, got {} and {}",
                self.train_frac, self.valid_frac
            )))
        }
    }

    /// Row boundaries `(⌊N·train⌋, ⌊N·(train + valid)⌋)`.
    pub fn boundaries(&self, n: usize) -> (usize, usize) {
        // guards against products like 0.6 · 10 landing just below an integer
        let floor = |v: f64| (v + 1e-9).floor() as usize;
        let nf = n as f64;
        (floor(nf * self.train_frac), floor(nf * (self.train_frac + self.valid_frac)))
    }
}

/// Contiguous train / validation / test blocks in row order.
pub fn split_chronological(
    ds: &TabularDataset,
    spec: &SplitSpec,
) -> Result<(TabularDataset, TabularDataset, TabularDataset)> {
    spec.validate()?;
    if !ds.time_ordered() {
        return Err(Error::InvalidConfig("chronological split needs time-ordered rows".into()));
    }
    let n = ds.len();
    let (a, b) = spec.boundaries(n);
    if a == 0 || b == a || b == n {
        return Err(Error::InvalidConfig(format!(
            "split of {n} rows leaves an empty partition ({a}/{}/{})",
            b - a,
            n - b
        )));
    }
    Ok((ds.slice(0..a), ds.slice(a..b), ds.slice(b..n)))
}

/// Per-column affine scaling fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub label_mean: f64,
    pub label_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl Standardizer {
    /// Population mean and standard deviation of every column.
    pub fn fit(train: &TabularDataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyInput("standardizer training rows"));
        }
        let x = train.x();
        let mut feature_mean = Vec::with_capacity(x.cols());
        let mut feature_std = Vec::with_capacity(x.cols());
        for j in 0..x.cols() {
            let (m, s) = mean_std(&x.column(j));
            if !(s > 0.0) {
                return Err(Error::ConstantColumn(train.feature_names()[j].clone()));
            }
            feature_mean.push(m);
            feature_std.push(s);
        }
        let (label_mean, label_std) = mean_std(train.y());
        if !(label_std > 0.0) {
            return Err(Error::ConstantColumn(train.label_name().to_string()));
        }
        Ok(Self {
            feature_mean,
            feature_std,
            label_mean,
            label_std,
        })
    }

    pub fn identity(n_features: usize) -> Self {
        Self {
            feature_mean: vec![0.0; n_features],
            feature_std: vec![1.0; n_features],
            label_mean: 0.0,
            label_std: 1.0,
        }
    }

    pub fn apply(&self, ds: &TabularDataset) -> Result<TabularDataset> {
        crate::error::ensure_len("standardizer width", self.feature_mean.len(), ds.n_features())?;
        let x = Matrix::from_fn(ds.len(), ds.n_features(), |i, j| {
            (ds.x()[(i, j)] - self.feature_mean[j]) / self.feature_std[j]
        });
        let y = ds.y().iter().map(|&v| self.label(v)).collect();
        Ok(ds.with_values(x, y))
    }

    pub fn invert(&self, ds: &TabularDataset) -> Result<TabularDataset> {
        crate::error::ensure_len("standardizer width", self.feature_mean.len(), ds.n_features())?;
        let x = Matrix::from_fn(ds.len(), ds.n_features(), |i, j| {
            ds.x()[(i, j)] * self.feature_std[j] + self.feature_mean[j]
        });
        let y = ds.y().iter().map(|&v| self.invert_label(v)).collect();
        Ok(ds.with_values(x, y))
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }

    pub fn label(&self, y: f64) -> f64 {
        (y - self.label_mean) / self.label_std
    }

    pub fn invert_label(&self, y: f64) -> f64 {
        y * self.label_std + self.label_mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> TabularDataset {
        TabularDataset::unnamed(
            Matrix::from_fn(n, 2, |i, j| (i * (j + 1)) as f64 + 0.5 * j as f64),
            (0..n).map(|i| (i as f64).sin()).collect(),
            true,
        )
        .unwrap()
    }

    #[test]
    fn split_sizes() {
        let s = SplitSpec::default();
        assert_eq!(s.boundaries(10), (6, 8));
        // 2394 · 0.6 = 1436.4 and 2394 · 0.8 = 1915.2
        assert_eq!(s.boundaries(2394), (1436, 1915));
        let (a, b, c) = split_chronological(&ramp(10), &s).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (6, 2, 2));
    }

    #[test]
    fn split_concatenates_back() {
        let ds = ramp(17);
        let (a, b, c) = split_chronological(&ds, &SplitSpec::default()).unwrap();
        let ys: Vec<f64> = a.y().iter().chain(b.y()).chain(c.y()).copied().collect();
        assert_eq!(ys, ds.y());
        let xs: Vec<f64> = [a.x(), b.x(), c.x()].iter().flat_map(|m| m.as_slice().to_vec()).collect();
        assert_eq!(xs, ds.x().as_slice());
    }

    #[test]
    fn split_errors() {
        assert!(split_chronological(&ramp(2), &SplitSpec::default()).is_err());
        let bad = SplitSpec {
            train_frac: 0.7,
            valid_frac: 0.3,
        };
        assert!(split_chronological(&ramp(10), &bad).is_err());
        let unordered = TabularDataset::unnamed(Matrix::zeros(10, 1), vec![0.0; 10], false).unwrap();
        assert!(split_chronological(&unordered, &SplitSpec::default()).is_err());
    }

    #[test]
    fn two_point_column() {
        let ds = TabularDataset::unnamed(Matrix::from_rows(&[[0.0], [2.0]]).unwrap(), vec![1.0, 3.0], true).unwrap();
        let st = Standardizer::fit(&ds).unwrap();
        let t = st.apply(&ds).unwrap();
        assert_eq!(t.x().as_slice(), &[-1.0, 1.0]);
        assert_eq!(t.y(), &[-1.0, 1.0]);
    }

    #[test]
    fn train_statistics_and_inverse() {
        let ds = ramp(40);
        let st = Standardizer::fit(&ds).unwrap();
        let t = st.apply(&ds).unwrap();
        for m in t.x().column_means() {
            assert!(m.abs() < 1e-12);
        }
        let back = st.invert(&t).unwrap();
        for (a, b) in back.x().as_slice().iter().zip(ds.x().as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in back.y().iter().zip(ds.y()) {
            assert!((a - b).abs() < 1e-12);
        }
        // refitting standardized data is close to the identity
        let again = Standardizer::fit(&t).unwrap();
        assert!(again.feature_mean.iter().all(|m| m.abs() < 1e-12));
        assert!(again.feature_std.iter().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn constant_column_named() {
        let ds = TabularDataset::new(
            Matrix::from_rows(&[[1.0, 5.0], [2.0, 5.0]]).unwrap(),
            vec![0.0, 1.0],
            vec!["a".into(), "flat".into()],
            "y",
            true,
        )
        .unwrap();
        match Standardizer::fit(&ds) {
            Err(Error::ConstantColumn(name)) => assert_eq!(name, "flat"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
