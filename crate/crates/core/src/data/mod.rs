//! Tabular process data: loading, lagged features, chronological splits,
//! standardization, and synthetic generators.

mod features;
mod prep;
mod synthetic;
mod table;

pub use features::{build_dbc_features, load_debutanizer, LagSpec, LagTerm, DBC_INPUTS, DBC_MAX_LAG};
pub use prep::{split_chronological, SplitSpec, Standardizer};
pub use synthetic::{make_synthetic_process, make_toy_regression, make_toy_regression_with, toy_target, TOY_WEIGHTS};
pub use table::{load_table, write_table_csv, Delimiter, HeaderMode, LabelColumn, TableOptions, TabularDataset};
