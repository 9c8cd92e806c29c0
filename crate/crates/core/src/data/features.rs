use serde::{Deserialize, Serialize};

use std::path::Path;

use super::table::{load_table, TableOptions, TabularDataset};
use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// One feature built from past values of the raw table. Lags count rows back
/// from the current one, so no term can see the future.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LagTerm {
    Input { column: usize, lag: usize },
    /// Average of several inputs at the same lag.
    InputMean { columns: Vec<usize>, lag: usize },
    Label { lag: usize },
}

impl LagTerm {
    fn lag(&self) -> usize {
        match self {
            LagTerm::Input { lag, .. } | LagTerm::InputMean { lag, .. } | LagTerm::Label { lag } => *lag,
        }
    }

    fn name(&self, inputs: &[String], label: &str) -> String {
        let at = |lag: usize| if lag == 0 { "(t)".to_string() } else { format!("(t-{lag})") };
        match self {
            LagTerm::Input { column, lag } => format!("{}{}", inputs[*column], at(*lag)),
            LagTerm::InputMean { columns, lag } => {
                let parts: Vec<&str> = columns.iter().map(|&c| inputs[c].as_str()).collect();
                format!("mean({}){}", parts.join("+"), at(*lag))
            }
            LagTerm::Label { lag } => format!("{label}{}", at(*lag)),
        }
    }

    fn value(&self, x: &Matrix<f64>, y: &[f64], t: usize) -> f64 {
        match self {
            LagTerm::Input { column, lag } => x[(t - lag, *column)],
            LagTerm::InputMean { columns, lag } => {
                columns.iter().map(|&c| x[(t - lag, c)]).sum::<f64>() / columns.len() as f64
            }
            LagTerm::Label { lag } => y[t - lag],
        }
    }
}

/// Ordered list of lagged terms; feature `k` of the output is term `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagSpec {
    pub terms: Vec<LagTerm>,
}

/// Raw input columns in the debutanizer table.
pub const DBC_INPUTS: usize = 7;
/// Rows consumed by the deepest lag of the debutanizer recipe.
pub const DBC_MAX_LAG: usize = 4;

impl LagSpec {
    /// `[U1..U5, U5(t−1..t−3), (U1+U2)/2, Y(t−1..t−4)]`, 13 features.
    pub fn debutanizer() -> Self {
        let mut terms: Vec<LagTerm> = (0..5).map(|column| LagTerm::Input { column, lag: 0 }).collect();
        terms.extend((1..=3).map(|lag| LagTerm::Input { column: 4, lag }));
        terms.push(LagTerm::InputMean {
            columns: vec![0, 1],
            lag: 0,
        });
        terms.extend((1..=4).map(|lag| LagTerm::Label { lag }));
        Self { terms }
    }

    pub fn max_lag(&self) -> usize {
        self.terms.iter().map(LagTerm::lag).max().unwrap_or(0)
    }

    fn max_column(&self) -> Option<usize> {
        self.terms
            .iter()
            .flat_map(|t| match t {
                LagTerm::Input { column, .. } => vec![*column],
                LagTerm::InputMean { columns, .. } => columns.clone(),
                LagTerm::Label { .. } => Vec::new(),
            })
            .max()
    }

    /// Emits one row per raw index `t ≥ max_lag`, labelled with `y(t)`.
    pub fn apply(&self, raw: &TabularDataset) -> Result<TabularDataset> {
        if self.terms.is_empty() {
            return Err(Error::InvalidConfig("lag recipe has no terms".into()));
        }
        if let Some(c) = self.max_column() {
            if c >= raw.n_features() {
                return Err(Error::InvalidConfig(format!(
                    "lag recipe uses input column {c} but the table has {}",
                    raw.n_features()
                )));
            }
        }
        if self.terms.iter().any(|t| matches!(t, LagTerm::InputMean { columns, .. } if columns.is_empty())) {
            return Err(Error::InvalidConfig("mean term needs at least one column".into()));
        }
        let lag = self.max_lag();
        if raw.len() <= lag {
            return Err(Error::InvalidConfig(format!(
                "lag recipe needs more than {lag} rows, table has {}",
                raw.len()
            )));
        }
        let n = raw.len() - lag;
        let x = Matrix::from_fn(n, self.terms.len(), |r, k| self.terms[k].value(raw.x(), raw.y(), r + lag));
        let y = raw.y()[lag..].to_vec();
        let names = self.terms.iter().map(|t| t.name(raw.feature_names(), raw.label_name())).collect();
        TabularDataset::new(x, y, names, raw.label_name(), raw.time_ordered())
    }
}

/// Reads the raw debutanizer table (7 inputs, label last) and builds its
/// lagged features.
pub fn load_debutanizer(path: impl AsRef<Path>) -> Result<TabularDataset> {
    build_dbc_features(&load_table(path, &TableOptions::default())?)
}

/// Debutanizer feature recipe on a raw table of 7 inputs plus the label.
pub fn build_dbc_features(raw: &TabularDataset) -> Result<TabularDataset> {
    if raw.n_features() != DBC_INPUTS {
        return Err(Error::InvalidConfig(format!(
            "debutanizer table needs {DBC_INPUTS} input columns plus a label, found {} inputs",
            raw.n_features()
        )));
    }
    if raw.len() < DBC_MAX_LAG + 1 {
        return Err(Error::InvalidConfig(format!(
            "debutanizer table needs at least {} rows, found {}",
            DBC_MAX_LAG + 1,
            raw.len()
        )));
    }
    LagSpec::debutanizer().apply(raw)
}
