//! Typed CSV tables: loading, cleaning and column selection.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::path::Path;

use crate::error::{Error, Result};

/// One column of a [`RawTable`].
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    /// Missing cells are stored as NaN.
    Numeric(Vec<f64>),
    /// Interned text; `levels` are in first-appearance order.
    Categorical {
        levels: Vec<String>,
        codes: Vec<Option<u32>>,
    },
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            Column::Numeric(v) => v[row].is_nan(),
            Column::Categorical { codes, .. } => codes[row].is_none(),
        }
    }

    pub fn missing_count(&self) -> usize {
        (0..self.len()).filter(|&r| self.is_missing(r)).count()
    }

    /// Text of a categorical cell, `None` for numeric columns or missing cells.
    pub fn text(&self, row: usize) -> Option<&str> {
        match self {
            Column::Categorical { levels, codes } => codes[row].map(|c| levels[c as usize].as_str()),
            Column::Numeric(_) => None,
        }
    }

    fn take_rows(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Categorical { levels, codes } => {
                // re-intern so levels stay in first-appearance order
                let mut new_levels = Vec::new();
                let mut remap: HashMap<u32, u32> = HashMap::new();
                let codes = rows
                    .iter()
                    .map(|&r| {
                        codes[r].map(|c| {
                            *remap.entry(c).or_insert_with(|| {
                                new_levels.push(levels[c as usize].clone());
                                (new_levels.len() - 1) as u32
                            })
                        })
                    })
                    .collect();
                Column::Categorical {
                    levels: new_levels,
                    codes,
                }
            }
        }
    }

    fn hash_cell(&self, row: usize, h: &mut impl Hasher) {
        match self {
            Column::Numeric(v) => canonical_bits(v[row]).hash(h),
            Column::Categorical { codes, .. } => codes[row].hash(h),
        }
    }

    fn cell_eq(&self, a: usize, b: usize) -> bool {
        match self {
            Column::Numeric(v) => canonical_bits(v[a]) == canonical_bits(v[b]),
            Column::Categorical { codes, .. } => codes[a] == codes[b],
        }
    }
}

fn canonical_bits(v: f64) -> u64 {
    if v.is_nan() {
        f64::NAN.to_bits()
    } else if v == 0.0 {
        0
    } else {
        v.to_bits()
    }
}

/// Rectangular table with uniquely named, per-column typed cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub names: Vec<String>,
    pub columns: Vec<Column>,
    rows: usize,
}

impl RawTable {
    pub fn new(names: Vec<String>, columns: Vec<Column>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Data("column name/column count mismatch".into()));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n) {
                return Err(Error::Data(format!("duplicate column name `{n}`")));
            }
        }
        let rows = columns.first().map_or(0, Column::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Data("columns have different lengths".into()));
        }
        Ok(Self { names, columns, rows })
    }

    pub fn row_count(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.index_of(name).map(|i| &self.columns[i])
    }

    pub fn missing_cells(&self) -> usize {
        self.columns.iter().map(Column::missing_count).sum()
    }

    pub fn take_rows(&self, rows: &[usize]) -> RawTable {
        RawTable {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c.take_rows(rows)).collect(),
            rows: rows.len(),
        }
    }

    fn row_hash(&self, row: usize) -> u64 {
        let mut h = DefaultHasher::new();
        for c in &self.columns {
            c.hash_cell(row, &mut h);
        }
        h.finish()
    }

    fn rows_equal(&self, a: usize, b: usize) -> bool {
        self.columns.iter().all(|c| c.cell_eq(a, b))
    }
}

pub(crate) fn is_missing_text(s: &str) -> bool {
    let s = s.trim();
    s.is_empty() || s.eq_ignore_ascii_case("nan")
}

fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().flexible(true).from_reader(file))
}

fn csv_err(path: &Path, row: usize, e: impl std::fmt::Display) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        row,
        msg: e.to_string(),
    }
}

/// Reads a headed CSV. A column is numeric when every non-missing cell
/// parses as a finite number; empty cells and `nan` are missing.
///
/// Row numbers in errors count data rows from 1 (the header is row 0).
pub fn load_csv(path: &Path, label_column: &str) -> Result<RawTable> {
    // pass 1: header and column kinds
    let mut reader = csv_reader(path)?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, 0, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if !names.iter().any(|n| n == label_column) {
        return Err(csv_err(path, 0, format!("label column `{label_column}` not found")));
    }
    let width = names.len();
    let mut numeric = vec![true; width];
    let mut record = csv::StringRecord::new();
    let mut row = 0;
    while reader.read_record(&mut record).map_err(|e| csv_err(path, row + 1, e))? {
        row += 1;
        if record.len() != width {
            return Err(csv_err(
                path,
                row,
                format!("{} fields, expected {width}", record.len()),
            ));
        }
        for (j, cell) in record.iter().enumerate() {
            if numeric[j] && !is_missing_text(cell) && parse_number(cell).is_none() {
                numeric[j] = false;
            }
        }
    }
    let rows = row;

    // pass 2: typed cells
    let mut builders: Vec<ColumnBuilder> = numeric
        .iter()
        .map(|&num| ColumnBuilder::new(num, rows))
        .collect();
    let mut reader = csv_reader(path)?;
    let mut row = 0;
    while reader.read_record(&mut record).map_err(|e| csv_err(path, row + 1, e))? {
        row += 1;
        for (b, cell) in builders.iter_mut().zip(record.iter()) {
            b.push(cell);
        }
    }
    if row != rows {
        return Err(csv_err(path, row, "file changed while reading"));
    }
    RawTable::new(names, builders.into_iter().map(ColumnBuilder::finish).collect())
}

enum ColumnBuilder {
    Numeric(Vec<f64>),
    Categorical {
        index: HashMap<String, u32>,
        levels: Vec<String>,
        codes: Vec<Option<u32>>,
    },
}

impl ColumnBuilder {
    fn new(numeric: bool, rows: usize) -> Self {
        if numeric {
            ColumnBuilder::Numeric(Vec::with_capacity(rows))
        } else {
            ColumnBuilder::Categorical {
                index: HashMap::new(),
                levels: Vec::new(),
                codes: Vec::with_capacity(rows),
            }
        }
    }

    fn push(&mut self, cell: &str) {
        match self {
            ColumnBuilder::Numeric(v) => v.push(if is_missing_text(cell) {
                f64::NAN
            } else {
                parse_number(cell).unwrap_or(f64::NAN)
            }),
            ColumnBuilder::Categorical { index, levels, codes } => {
                if is_missing_text(cell) {
                    codes.push(None);
                    return;
                }
                let key = cell.trim();
                let code = match index.get(key) {
                    Some(&c) => c,
                    None => {
                        let c = levels.len() as u32;
                        levels.push(key.to_string());
                        index.insert(key.to_string(), c);
                        c
                    }
                };
                codes.push(Some(code));
            }
        }
    }

    fn finish(self) -> Column {
        match self {
            ColumnBuilder::Numeric(v) => Column::Numeric(v),
            ColumnBuilder::Categorical { levels, codes, .. } => Column::Categorical { levels, codes },
        }
    }
}

/// Removes exact duplicate rows (first occurrence kept), then fills missing
/// numeric cells with the column median and missing categorical cells with
/// the column mode (ties go to the level that appeared first).
pub fn clean(table: &RawTable) -> Result<RawTable> {
    let mut buckets: HashMap<u64, Vec<usize>> = HashMap::new();
    let mut keep = Vec::with_capacity(table.row_count());
    for r in 0..table.row_count() {
        let bucket = buckets.entry(table.row_hash(r)).or_default();
        if bucket.iter().any(|&k| table.rows_equal(k, r)) {
            continue;
        }
        bucket.push(r);
        keep.push(r);
    }
    let mut out = table.take_rows(&keep);

    for (name, col) in out.names.iter().zip(out.columns.iter_mut()) {
        let missing = col.missing_count();
        if missing == 0 {
            continue;
        }
        if missing == col.len() {
            return Err(Error::Data(format!("column `{name}` is entirely missing")));
        }
        match col {
            Column::Numeric(v) => {
                let m = median(v.iter().copied().filter(|x| !x.is_nan()).collect());
                v.iter_mut().filter(|x| x.is_nan()).for_each(|x| *x = m);
            }
            Column::Categorical { levels, codes } => {
                let mut counts = vec![0usize; levels.len()];
                for c in codes.iter().flatten() {
                    counts[*c as usize] += 1;
                }
                let mode = counts
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &n)| if n > counts[best] { i } else { best }) as u32;
                codes.iter_mut().filter(|c| c.is_none()).for_each(|c| *c = Some(mode));
            }
        }
    }
    Ok(out)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Drops the listed columns. Unknown names and the label column are errors.
pub fn select_features(table: &RawTable, drop: &[String], label_column: &str) -> Result<RawTable> {
    for d in drop {
        if d == label_column {
            return Err(Error::Config(format!("label column `{d}` cannot be dropped")));
        }
        if table.index_of(d).is_none() {
            return Err(Error::Config(format!("cannot drop unknown column `{d}`")));
        }
    }
    let (names, columns) = table
        .names
        .iter()
        .zip(&table.columns)
        .filter(|(n, _)| !drop.contains(n))
        .map(|(n, c)| (n.clone(), c.clone()))
        .unzip();
    RawTable::new(names, columns)
}
