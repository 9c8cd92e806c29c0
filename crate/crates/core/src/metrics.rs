//! Regression metrics, 1-D kernel density estimates, mode occupancy, and a
//! numerical check of the exponential-family KL lower bound on Gaussians.

use std::io::{self, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSpace {
    #[default]
    Standardized,
    Original,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub r2: f64,
    pub rmse: f64,
    pub mae: f64,
    /// Percent. `None` (written as `"undefined"`) when some target is zero.
    #[serde(serialize_with = "mape_out", deserialize_with = "mape_in")]
    pub mape: Option<f64>,
    pub n: usize,
    pub label_space: LabelSpace,
}

fn mape_out<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str("undefined"),
    }
}

fn mape_in<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(x) => Ok(Some(x)),
        Raw::Text(t) if t == "undefined" => Ok(None),
        Raw::Text(t) => Err(serde::de::Error::custom(format!("bad mape value `{t}`"))),
    }
}

/// RMSE, R², MAE and MAPE of `predicted` against `actual`.
///
/// A constant target has no variance to explain; R² is then 1 for an exact
/// fit and 0 otherwise.
pub fn regression_metrics(actual: &[f64], predicted: &[f64], label_space: LabelSpace) -> Result<MetricReport> {
    ensure_len("metric inputs", actual.len(), predicted.len())?;
    if actual.is_empty() {
        return Err(Error::EmptyInput("metric inputs"));
    }
    if !crate::numcore::scalar::all_finite(actual) || !crate::numcore::scalar::all_finite(predicted) {
        return Err(Error::NonFinite("metric inputs"));
    }
    let n = actual.len() as f64;
    let mean = actual.iter().sum::<f64>() / n;
    let mut sse = 0.0;
    let mut sst = 0.0;
    let mut abs = 0.0;
    let mut pct = 0.0;
    let mut mape_defined = true;
    for (&y, &p) in actual.iter().zip(predicted) {
        let e = y - p;
        sse += e * e;
        sst += (y - mean) * (y - mean);
        abs += e.abs();
        if y == 0.0 {
            mape_defined = false;
        } else {
            pct += (e / y).abs();
        }
    }
    let r2 = if sst > 0.0 {
        1.0 - sse / sst
    } else if sse == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(MetricReport {
        r2,
        rmse: (sse / n).sqrt(),
        mae: abs / n,
        mape: mape_defined.then(|| 100.0 * pct / n),
        n: actual.len(),
        label_space,
    })
}

/// `Σ (actual − predicted)²`.
pub fn sum_squared_error(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    ensure_len("sse inputs", actual.len(), predicted.len())?;
    Ok(actual.iter().zip(predicted).map(|(a, p)| (a - p) * (a - p)).sum())
}

/// `1.06 · s · n^{-1/5}` with the sample standard deviation `s`.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::EmptyInput("bandwidth estimation needs at least two samples"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    let h = 1.06 * var.sqrt() * n.powf(-0.2);
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err(Error::InvalidConfig(
            "samples are all equal; pass an explicit KDE bandwidth".into(),
        ))
    }
}

/// Gaussian-kernel density estimate evaluated on `grid`.
pub fn kde_1d(samples: &[f64], grid: &[f64], bandwidth: Option<f64>) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("kde samples"));
    }
    if !crate::numcore::scalar::all_finite(samples) {
        return Err(Error::NonFinite("kde samples"));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::InvalidConfig(format!("kde bandwidth must be positive, got {h}"))),
        None => silverman_bandwidth(samples)?,
    };
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&x| {
            norm * samples
                .iter()
                .map(|&s| {
                    let u = (x - s) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect())
}

/// `n` evenly spaced points covering `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Trapezoid rule on an ordered grid.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
        .sum()
}

/// Columns `grid,density`.
pub fn write_kde_csv<W: Write>(out: &mut W, grid: &[f64], density: &[f64]) -> io::Result<()> {
    writeln!(out, "grid,density")?;
    for (x, d) in grid.iter().zip(density) {
        writeln!(out, "{x},{d}")?;
    }
    Ok(())
}

/// Fractions of samples left and right of `boundary`. A sample exactly on
/// the boundary counts half to each side.
pub fn mode_masses(samples: &[f64], boundary: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("mode mass samples"));
    }
    let mut left = 0.0;
    for &s in samples {
        if s < boundary {
            left += 1.0;
        } else if s == boundary {
            left += 0.5;
        }
    }
    let left = left / samples.len() as f64;
    Ok((left, 1.0 - left))
}

/// Natural parameters `(μ/σ², −1/(2σ²))` of a 1-D Gaussian.
pub fn gaussian_natural_params(mean: f64, std: f64) -> [f64; 2] {
    let var = std * std;
    [mean / var, -0.5 / var]
}

/// Hessian of the log-partition `A(η) = −η₁²/(4η₂) − ½ log(−2η₂)`.
pub fn gaussian_fisher(eta: [f64; 2]) -> [[f64; 2]; 2] {
    let [e1, e2] = eta;
    let a11 = -0.5 / e2;
    let a12 = e1 / (2.0 * e2 * e2);
    let a22 = -e1 * e1 / (2.0 * e2 * e2 * e2) + 0.5 / (e2 * e2);
    [[a11, a12], [a12, a22]]
}

/// `KL[N(m1, s1²) ‖ N(m2, s2²)]`.
pub fn gaussian_kl(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    (s2 / s1).ln() + (s1 * s1 + (m1 - m2) * (m1 - m2)) / (2.0 * s2 * s2) - 0.5
}

fn half_quadratic(fisher: [[f64; 2]; 2], d: [f64; 2]) -> f64 {
    0.5 * (fisher[0][0] * d[0] * d[0] + 2.0 * fisher[0][1] * d[0] * d[1] + fisher[1][1] * d[1] * d[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Gap {
    pub kl: f64,
    pub quadratic_form: f64,
}

impl Lemma1Gap {
    pub fn slack(&self) -> f64 {
        self.kl - self.quadratic_form
    }
}

/// Equal-variance case: `KL[N(μ₁,σ²) ‖ N(μ₂,σ²)]` against
/// `½ Δηᵀ I Δη`, which coincide exactly.
pub fn lemma1_gaussian_gap(mu1: f64, mu2: f64, sigma: f64) -> Result<Lemma1Gap> {
    lemma1_gaussian_gap_general(mu1, sigma, mu2, sigma)
}

/// Points on the natural-parameter segment scanned for the smallest
/// curvature.
const SEGMENT_GRID: usize = 2001;

/// General case with `q = N(m1, s1²)` and `p = N(m2, s2²)`.
///
/// The KL of an exponential family is the Bregman divergence of `A`, so it
/// equals `½ Δηᵀ I(ξ) Δη` for some `ξ` between the two natural parameters.
/// The Fisher information is taken where that quadratic form is smallest on
/// the segment, which makes the bound hold for any gap.
pub fn lemma1_gaussian_gap_general(m1: f64, s1: f64, m2: f64, s2: f64) -> Result<Lemma1Gap> {
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "standard deviations must be positive, got {s1} and {s2}"
        )));
    }
    let eq = gaussian_natural_params(m1, s1);
    let ep = gaussian_natural_params(m2, s2);
    let d = [eq[0] - ep[0], eq[1] - ep[1]];
    let quadratic_form = if s1 == s2 {
        // Only the mean direction moves and I₁₁ = σ² is constant.
        half_quadratic(gaussian_fisher(eq), d)
    } else {
        (0..SEGMENT_GRID)
            .map(|k| {
                let t = k as f64 / (SEGMENT_GRID - 1) as f64;
                let eta = [eq[0] - t * d[0], eq[1] - t * d[1]];
                half_quadratic(gaussian_fisher(eta), d)
            })
            .fold(f64::INFINITY, f64::min)
    };
    Ok(Lemma1Gap {
        kl: gaussian_kl(m1, s1, m2, s2),
        quadratic_form,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let y = [1.5, -2.0, 3.25];
        let m = regression_metrics(&y, &y, LabelSpace::Standardized).unwrap();
        assert_eq!((m.rmse, m.mae, m.r2), (0.0, 0.0, 1.0));
        assert_eq!(m.mape, Some(0.0));
    }

    #[test]
    fn mean_prediction_has_zero_r2() {
        let y = [1.0, 2.0, 6.0];
        let m = regression_metrics(&y, &[3.0; 3], LabelSpace::Original).unwrap();
        assert!(m.r2.abs() < 1e-15);
    }

    #[test]
    fn hand_worked_metrics() {
        let m = regression_metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0], LabelSpace::Original).unwrap();
        assert!((m.rmse - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((m.mae - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.r2 - 0.5).abs() < 1e-15);
        assert!((m.mape.unwrap() - 100.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn mape_undefined_with_zero_target() {
        let m = regression_metrics(&[0.0, 1.0], &[0.1, 1.0], LabelSpace::Original).unwrap();
        assert_eq!(m.mape, None);
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"mape\":\"undefined\""));
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn metric_errors() {
        assert!(regression_metrics(&[], &[], LabelSpace::Original).is_err());
        assert!(regression_metrics(&[1.0], &[1.0, 2.0], LabelSpace::Original).is_err());
    }

    #[test]
    fn constant_target() {
        let exact = regression_metrics(&[2.0, 2.0], &[2.0, 2.0], LabelSpace::Original).unwrap();
        assert_eq!(exact.r2, 1.0);
        let off = regression_metrics(&[2.0, 2.0], &[2.0, 3.0], LabelSpace::Original).unwrap();
        assert_eq!(off.r2, 0.0);
    }

    #[test]
    fn kde_bump_and_normalization() {
        let h = 0.3;
        let d = kde_1d(&[1.0; 5], &[1.0, 1.3], Some(h)).unwrap();
        let peak = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
        assert!((d[0] - peak).abs() < 1e-14);
        assert!((d[1] - peak * (-0.5f64).exp()).abs() < 1e-14);
        assert!(kde_1d(&[1.0; 5], &[1.0], None).is_err());

        let samples = [-1.0, 0.2, 0.3, 2.0, 2.5];
        let h = silverman_bandwidth(&samples).unwrap();
        let grid = linspace(-1.0 - 4.0 * h, 2.5 + 4.0 * h, 2001);
        let d = kde_1d(&samples, &grid, None).unwrap();
        assert!((trapezoid(&grid, &d) - 1.0).abs() < 0.01);
    }

    #[test]
    fn mode_mass_examples() {
        assert_eq!(mode_masses(&[-3.0, -1.0], 0.0).unwrap(), (1.0, 0.0));
        assert_eq!(mode_masses(&[-1.0, 1.0, -2.0, 2.0], 0.0).unwrap(), (0.5, 0.5));
        assert_eq!(mode_masses(&[0.0], 0.0).unwrap(), (0.5, 0.5));
        assert!(mode_masses(&[], 0.0).is_err());
    }

    #[test]
    fn fisher_matches_moments() {
        // I = Cov(z, z²) for a Gaussian
        let (m, s) = (0.7, 1.3);
        let i = gaussian_fisher(gaussian_natural_params(m, s));
        let v = s * s;
        assert!((i[0][0] - v).abs() < 1e-12);
        assert!((i[0][1] - 2.0 * m * v).abs() < 1e-12);
        assert!((i[1][1] - (4.0 * m * m * v + 2.0 * v * v)).abs() < 1e-12);
    }

    #[test]
    fn lemma1_equal_variance() {
        let g = lemma1_gaussian_gap(1.0, 1.0, 0.7).unwrap();
        assert_eq!((g.kl, g.quadratic_form), (0.0, 0.0));
        let g = lemma1_gaussian_gap(1.0, 0.0, 1.0).unwrap();
        assert!((g.kl - 0.5).abs() < 1e-15);
        assert!((g.quadratic_form - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lemma1_unequal_variance_bound() {
        for &(m1, s1, m2, s2) in &[(0.0, 1.0, 0.05, 1.05), (0.3, 0.9, 0.25, 0.95), (1.0, 2.0, 1.1, 1.9)] {
            let g = lemma1_gaussian_gap_general(m1, s1, m2, s2).unwrap();
            assert!(g.slack() >= -1e-12, "{g:?}");
            assert!(g.quadratic_form > 0.0);
        }
        assert!(lemma1_gaussian_gap_general(0.0, 0.0, 0.0, 1.0).is_err());
    }
}
