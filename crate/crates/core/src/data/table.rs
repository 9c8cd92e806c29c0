use std::fs;
use std::io::{self, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::numcore::Matrix;

/// Feature matrix plus scalar label, one sample per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularDataset {
    x: Matrix<f64>,
    y: Vec<f64>,
    feature_names: Vec<String>,
    label_name: String,
    time_ordered: bool,
}

impl TabularDataset {
    pub fn new(
        x: Matrix<f64>,
        y: Vec<f64>,
        feature_names: Vec<String>,
        label_name: impl Into<String>,
        time_ordered: bool,
    ) -> Result<Self> {
        ensure_len("dataset label count", x.rows(), y.len())?;
        ensure_len("dataset feature names", x.cols(), feature_names.len())?;
        x.check_finite("dataset features")?;
        if !crate::numcore::scalar::all_finite(&y) {
            return Err(Error::NonFinite("dataset labels"));
        }
        Ok(Self {
            x,
            y,
            feature_names,
            label_name: label_name.into(),
            time_ordered,
        })
    }

    /// Features named `x0..x{D-1}` and label `y`.
    pub fn unnamed(x: Matrix<f64>, y: Vec<f64>, time_ordered: bool) -> Result<Self> {
        let names = (0..x.cols()).map(|j| format!("x{j}")).collect();
        Self::new(x, y, names, "y", time_ordered)
    }

    pub fn x(&self) -> &Matrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    pub fn time_ordered(&self) -> bool {
        self.time_ordered
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn row(&self, i: usize) -> (&[f64], f64) {
        (self.x.row(i), self.y[i])
    }

    /// Contiguous block of rows.
    pub fn slice(&self, rows: Range<usize>) -> Self {
        let idx: Vec<usize> = rows.clone().collect();
        Self {
            x: self.x.select_rows(&idx),
            y: self.y[rows].to_vec(),
            feature_names: self.feature_names.clone(),
            label_name: self.label_name.clone(),
            time_ordered: self.time_ordered,
        }
    }

    pub(crate) fn with_values(&self, x: Matrix<f64>, y: Vec<f64>) -> Self {
        Self {
            x,
            y,
            feature_names: self.feature_names.clone(),
            label_name: self.label_name.clone(),
            time_ordered: self.time_ordered,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delimiter {
    /// Comma if the first data line contains one, otherwise whitespace.
    #[default]
    Auto,
    Comma,
    Whitespace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeaderMode {
    /// Leading lines that do not parse as numbers are skipped; the last one
    /// with the right width names the columns.
    #[default]
    Auto,
    Present,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelColumn {
    #[default]
    Last,
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TableOptions {
    pub delimiter: Delimiter,
    pub header: HeaderMode,
    pub label: LabelColumn,
}

fn split_line(line: &str, delim: Delimiter) -> Vec<&str> {
    match delim {
        Delimiter::Comma => line.split(',').map(str::trim).collect(),
        Delimiter::Whitespace | Delimiter::Auto => line.split_whitespace().collect(),
    }
}

fn parses_numeric(cells: &[&str]) -> bool {
    !cells.is_empty() && cells.iter().all(|c| c.parse::<f64>().is_ok())
}

/// Reads a rectangular numeric table. Errors carry 1-based file line and
/// column numbers. Lines starting with `#` are ignored.
pub fn load_table(path: impl AsRef<Path>, opts: &TableOptions) -> Result<TabularDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let parse_err = |row: usize, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };

    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let Some(&(_, first)) = lines.first() else {
        return Err(Error::EmptyInput("table file has no data lines"));
    };
    let delim = match opts.delimiter {
        Delimiter::Auto if first.contains(',') => Delimiter::Comma,
        Delimiter::Auto => Delimiter::Whitespace,
        d => d,
    };

    let mut header: Option<Vec<String>> = None;
    let mut start = 0;
    match opts.header {
        HeaderMode::Absent => {}
        HeaderMode::Present => {
            header = Some(split_line(first, delim).into_iter().map(String::from).collect());
            start = 1;
        }
        HeaderMode::Auto => {
            let mut pending = Vec::new();
            while start < lines.len() && !parses_numeric(&split_line(lines[start].1, delim)) {
                pending.push(lines[start].1);
                start += 1;
            }
            if let Some(&(_, data)) = lines.get(start) {
                let width = split_line(data, delim).len();
                header = pending
                    .iter()
                    .rev()
                    .map(|l| split_line(l, delim))
                    .find(|cells| cells.len() == width)
                    .map(|cells| cells.into_iter().map(String::from).collect());
            }
        }
    }
    let body = &lines[start..];
    let Some(&(_, first_data)) = body.first() else {
        return Err(Error::EmptyInput("table file has no data lines"));
    };
    let width = split_line(first_data, delim).len();
    if width < 2 {
        return Err(parse_err(body[0].0, 1, "need at least one feature and one label column".into()));
    }
    let names = match header {
        Some(h) if h.len() == width => h,
        Some(h) => {
            return Err(parse_err(
                lines[start.saturating_sub(1)].0,
                h.len(),
                format!("header has {} columns but data has {width}", h.len()),
            ))
        }
        None => (0..width).map(|j| format!("c{j}")).collect(),
    };
    let label_idx = match &opts.label {
        LabelColumn::Last => width - 1,
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Index(i) => {
            return Err(Error::InvalidConfig(format!("label column {i} out of range for {width} columns")))
        }
        LabelColumn::Name(n) => names
            .iter()
            .position(|c| c == n)
            .ok_or_else(|| Error::InvalidConfig(format!("no column named `{n}`")))?,
    };

    let mut features = Vec::with_capacity(body.len() * (width - 1));
    let mut labels = Vec::with_capacity(body.len());
    for &(line_no, line) in body {
        let cells = split_line(line, delim);
        if cells.len() != width {
            return Err(parse_err(
                line_no,
                cells.len().min(width) + 1,
                format!("expected {width} columns, found {}", cells.len()),
            ));
        }
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line_no, j + 1, format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, j + 1, format!("`{cell}` is not finite")));
            }
            if j == label_idx {
                labels.push(v);
            } else {
                features.push(v);
            }
        }
    }
    let label_name = names[label_idx].clone();
    let feature_names = names
        .into_iter()
        .enumerate()
        .filter(|&(j, _)| j != label_idx)
        .map(|(_, n)| n)
        .collect();
    let x = Matrix::from_vec(labels.len(), width - 1, features)?;
    TabularDataset::new(x, labels, feature_names, label_name, true)
}

/// Comma-separated with a header row, label last. Values are written in
/// shortest round-trip form, so reading back is bit-exact.
pub fn write_table_csv<W: Write>(out: &mut W, ds: &TabularDataset) -> io::Result<()> {
    writeln!(out, "{},{}", ds.feature_names.join(","), ds.label_name)?;
    for (row, y) in ds.x.row_iter().zip(&ds.y) {
        for v in row {
            write!(out, "{v},")?;
        }
        writeln!(out, "{y}")?;
    }
    Ok(())
}
