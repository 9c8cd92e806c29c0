use rand_distr::{Distribution, StandardNormal};

use super::features::DBC_INPUTS;
use super::table::TabularDataset;
use crate::error::Result;
use crate::numcore::Matrix;

/// Linear part of the toy regression target.
pub const TOY_WEIGHTS: [f64; 4] = [1.0, -0.5, 0.8, 0.3];

const TOY_NOISE_STD: f64 = 0.1;

/// Loadings of the four toy features on two hidden factors.
const TOY_LOADINGS: [[f64; 2]; 4] = [[0.9, 0.3], [-0.6, 0.5], [0.7, 0.4], [0.2, -0.8]];

/// Feature noise on top of the factor part.
const TOY_FEATURE_NOISE_STD: f64 = 0.3;

/// `w·x + 0.5 sin(x₀ x₁) + noise`.
pub fn toy_target(x: &[f64], noise: f64) -> f64 {
    let linear: f64 = TOY_WEIGHTS.iter().zip(x).map(|(w, v)| w * v).sum();
    linear + 0.5 * (x[0] * x[1]).sin() + noise
}

/// `n` rows whose features are driven by two standard normal factors plus
/// independent noise (std 0.3); label noise std 0.1.
pub fn make_toy_regression(seed: u64, n: usize) -> Result<TabularDataset> {
    make_toy_regression_with(seed, n, TOY_NOISE_STD)
}

pub fn make_toy_regression_with(seed: u64, n: usize, noise_std: f64) -> Result<TabularDataset> {
    let mut rng = crate::rng::stream(seed, "toy-regression", 0);
    let d = TOY_WEIGHTS.len();
    let mut x = Matrix::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let factors: [f64; 2] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
        for (v, load) in x.row_mut(i).iter_mut().zip(&TOY_LOADINGS) {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v = load[0] * factors[0] + load[1] * factors[1] + TOY_FEATURE_NOISE_STD * e;
        }
        let e: f64 = StandardNormal.sample(&mut rng);
        y.push(toy_target(x.row(i), noise_std * e));
    }
    TabularDataset::unnamed(x, y, true)
}

/// Seven slowly varying AR(1) inputs and a label with its own inertia and
/// delayed input dependence, laid out like the raw debutanizer table.
pub fn make_synthetic_process(seed: u64, n: usize) -> Result<TabularDataset> {
    let mut rng = crate::rng::stream(seed, "synthetic-process", 0);
    let mut x = Matrix::zeros(n, DBC_INPUTS);
    let mut y = vec![0.0; n];
    let mut state = [0.0f64; DBC_INPUTS];
    for t in 0..n {
        for s in state.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *s = 0.95 * *s + 0.3 * e;
        }
        x.row_mut(t).copy_from_slice(&state);
        let u5_delayed = if t >= 2 { x[(t - 2, 4)] } else { 0.0 };
        let prev = if t >= 1 { y[t - 1] } else { 0.0 };
        let e: f64 = StandardNormal.sample(&mut rng);
        y[t] = 0.6 * prev + 0.3 * (0.5 * (state[0] + state[1])).tanh() + 0.2 * u5_delayed - 0.1 * state[2]
            + 0.02 * e;
    }
    let names = (1..=DBC_INPUTS).map(|j| format!("u{j}")).collect();
    TabularDataset::new(x, y, names, "y", true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(make_toy_regression(3, 50).unwrap(), make_toy_regression(3, 50).unwrap());
        assert_ne!(make_toy_regression(3, 50).unwrap(), make_toy_regression(4, 50).unwrap());
        assert_eq!(make_synthetic_process(1, 30).unwrap(), make_synthetic_process(1, 30).unwrap());
    }

    #[test]
    fn noiseless_labels_follow_formula() {
        let ds = make_toy_regression_with(8, 100, 0.0).unwrap();
        for i in 0..ds.len() {
            let (x, y) = ds.row(i);
            assert_eq!(y, toy_target(x, 0.0));
        }
    }

    /// Solves the normal equations by Gaussian elimination with pivoting.
    fn least_squares(x: &Matrix<f64>, y: &[f64]) -> Vec<f64> {
        let d = x.cols();
        let mut a = vec![vec![0.0; d + 1]; d];
        for (row, &t) in x.row_iter().zip(y) {
            for i in 0..d {
                for j in 0..d {
                    a[i][j] += row[i] * row[j];
                }
                a[i][d] += row[i] * t;
            }
        }
        for c in 0..d {
            let p = (c..d).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, p);
            for r in 0..d {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=d {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        (0..d).map(|i| a[i][d] / a[i][i]).collect()
    }

    #[test]
    fn linear_part_recovered() {
        let ds = make_toy_regression(11, 1000).unwrap();
        let w = least_squares(ds.x(), ds.y());
        let err: f64 = w.iter().zip(TOY_WEIGHTS).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = TOY_WEIGHTS.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(err / norm <= 0.05, "relative error {}", err / norm);
    }

    #[test]
    fn process_table_shape() {
        let ds = make_synthetic_process(2, 64).unwrap();
        assert_eq!((ds.len(), ds.n_features()), (64, DBC_INPUTS));
        let feats = super::super::build_dbc_features(&ds).unwrap();
        assert_eq!(feats.n_features(), 13);
    }
}
