//! Delimited-text expression matrices and result tables.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ScreenConfig;
use crate::error::{Error, Result};

/// Rows are features, columns are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    /// Header of the row-id column, kept for writing back.
    pub corner: String,
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub values: Array2<f64>,
}

impl ExpressionMatrix {
    pub fn new(row_ids: Vec<String>, col_ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (row_ids.len(), col_ids.len()) {
            return Err(Error::domain(format!(
                "matrix is {:?} but has {} row ids and {} column ids",
                values.dim(),
                row_ids.len(),
                col_ids.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = row_ids.iter().find(|r| !seen.insert(r.as_str())) {
            return Err(Error::domain(format!("duplicate row id `{dup}`")));
        }
        if let Some(((i, j), v)) = values.indexed_iter().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain(format!(
                "value {v} at row `{}`, column `{}` is not a finite nonnegative number",
                row_ids[i], col_ids[j]
            )));
        }
        Ok(ExpressionMatrix {
            corner: "gene".into(),
            row_ids,
            col_ids,
            values,
        })
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Submatrix with the given row and column indices, in that order.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> ExpressionMatrix {
        let values = self.values.select(Axis(0), rows).select(Axis(1), cols);
        ExpressionMatrix {
            corner: self.corner.clone(),
            row_ids: rows.iter().map(|&i| self.row_ids[i].clone()).collect(),
            col_ids: cols.iter().map(|&j| self.col_ids[j].clone()).collect(),
            values,
        }
    }
}

/// Comma unless the first line has more tabs than commas.
pub fn detect_delimiter(first_line: &str) -> u8 {
    let tabs = first_line.matches('\t').count();
    let commas = first_line.matches(',').count();
    if tabs > commas {
        b'\t'
    } else {
        b','
    }
}

pub fn load_matrix(path: &Path) -> Result<ExpressionMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let delimiter = detect_delimiter(text.lines().next().unwrap_or(""));
    let parse_err = |line: u64, column: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_err(path, e))?,
        None => return Err(parse_err(1, 1, "empty file".into())),
    };
    if header.len() < 2 {
        return Err(parse_err(1, 1, "header needs a row-id column and at least one sample".into()));
    }
    let corner = header[0].trim().to_string();
    let col_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let width = col_ids.len();

    let mut row_ids = Vec::new();
    let mut seen = HashSet::new();
    let mut flat = Vec::new();
    for record in records {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != width + 1 {
            return Err(parse_err(
                line,
                record.len().min(width + 1),
                format!("expected {} fields, found {}", width + 1, record.len()),
            ));
        }
        let id = record[0].trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(parse_err(line, 1, format!("duplicate row id `{id}`")));
        }
        for (j, cell) in record.iter().enumerate().skip(1) {
            let cell = cell.trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, j + 1, format!("cannot parse `{cell}` as a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, j + 1, format!("non-finite value `{cell}`")));
            }
            if v < 0.0 {
                return Err(parse_err(
                    line,
                    j + 1,
                    format!("negative value {v} in row `{id}`, column `{}`", col_ids[j - 1]),
                ));
            }
            flat.push(v);
        }
        row_ids.push(id);
    }
    let values = Array2::from_shape_vec((row_ids.len(), width), flat)
        .map_err(|e| Error::domain(e.to_string()))?;
    Ok(ExpressionMatrix {
        corner,
        row_ids,
        col_ids,
        values,
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Write comma-separated with shortest round-trip float formatting.
pub fn save_matrix(m: &ExpressionMatrix, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec![m.corner.clone()];
    header.extend(m.col_ids.iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (id, row) in m.row_ids.iter().zip(m.values.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|&v| fmt_full(v)));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::WriterBuilder::new()
        .from_path(path)
        .map_err(|e| csv_err(path, e))
}

/// `round(frac * n)` with ties to even.
pub fn rounded_count(frac: f64, n: usize) -> usize {
    (frac * n as f64).round_ties_even() as usize
}

/// Random rows, then random control and test columns, from one seed.
/// Selected indices keep their original order.
pub fn subsample(m: &ExpressionMatrix, cfg: &ScreenConfig) -> Result<(ExpressionMatrix, ExpressionMatrix)> {
    let (n, width) = m.dim();
    for &c in cfg.control_cols.iter().chain(&cfg.test_cols) {
        if c >= width {
            return Err(Error::Config(format!(
                "column {} requested but the matrix has {width} sample columns",
                c + 1
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draw = |from: &[usize], frac: f64, what: &str| -> Result<Vec<usize>> {
        let k = rounded_count(frac, from.len());
        if k == 0 {
            return Err(Error::Config(format!(
                "{what} fraction {frac} of {} selects nothing",
                from.len()
            )));
        }
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, from.len(), k)
            .into_iter()
            .map(|i| from[i])
            .collect();
        picked.sort_unstable();
        Ok(picked)
    };
    let all_rows: Vec<usize> = (0..n).collect();
    let rows = draw(&all_rows, cfg.row_fraction, "row")?;
    let ctrl = draw(&cfg.control_cols, cfg.control_fraction, "control")?;
    let test = draw(&cfg.test_cols, cfg.test_fraction, "test")?;
    Ok((m.select(&rows, &ctrl), m.select(&rows, &test)))
}

/// Round to `digits` decimals for output; `Inf`/`NA` for non-finite values.
pub fn format_rounded(v: f64, digits: u32) -> String {
    if v.is_nan() {
        return "NA".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    let scale = 10f64.powi(digits as i32);
    let scaled = v * scale;
    if !scaled.is_finite() || scaled.abs() >= 1e15 {
        return fmt_full(v);
    }
    let r = scaled.round() / scale;
    // avoid "-0"
    fmt_full(r + 0.0)
}

/// Writes a table of numeric columns keyed by row id.
pub(crate) fn write_table(
    path: &Path,
    header: &[String],
    ids: &[String],
    columns: &[Vec<f64>],
    digits: Option<u32>,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = Vec::with_capacity(columns.len() + 1);
        rec.push(id.clone());
        for col in columns {
            rec.push(match digits {
                Some(d) => format_rounded(col[i], d),
                None => fmt_full(col[i]),
            });
        }
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Shortest text that parses back to `v`, in exponent form for very large
/// or very small magnitudes.
pub fn fmt_full(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else if v.is_infinite() {
        if v > 0.0 { "Inf".into() } else { "-Inf".into() }
    } else if v != 0.0 && (v.abs() >= 1e15 || v.abs() < 1e-5) {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn ensure_dir(path: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rounding_for_output() {
        assert_eq!(format_rounded(0.0034999, 3), "0.003");
        assert_eq!(format_rounded(0.0035001, 3), "0.004");
        assert_eq!(format_rounded(-0.0001, 3), "0");
        assert_eq!(format_rounded(f64::INFINITY, 3), "Inf");
        assert_eq!(format_rounded(f64::NAN, 3), "NA");
        assert_eq!(format_rounded(2.0, 3), "2");
        assert_eq!(format_rounded(1e300, 3), "1e300");
        for v in [1e-300, 3.5e-7, 0.1, 12345.678, 2.5e20, 0.0] {
            assert_eq!(fmt_full(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_full(2.5e-7), "2.5e-7");
    }

    #[test]
    fn rounded_counts_for_a_44_48_split() {
        assert_eq!(rounded_count(0.01, 22936), 229);
        assert_eq!(rounded_count(0.2, 44), 9);
        assert_eq!(rounded_count(0.2, 48), 10);
        assert_eq!(rounded_count(0.5, 5), 2);
    }

    #[test]
    fn delimiter_detection() {
        assert_eq!(detect_delimiter("gene\ta\tb"), b'\t');
        assert_eq!(detect_delimiter("gene,a,b"), b',');
    }

    #[test]
    fn constructor_validates() {
        let ids = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(ExpressionMatrix::new(ids(&["a", "a"]), ids(&["x"]), array![[1.0], [2.0]]).is_err());
        assert!(ExpressionMatrix::new(ids(&["a", "b"]), ids(&["x"]), array![[1.0], [-2.0]]).is_err());
        assert!(ExpressionMatrix::new(ids(&["a"]), ids(&["x"]), array![[1.0], [2.0]]).is_err());
        let m = ExpressionMatrix::new(ids(&["a", "b"]), ids(&["x", "y"]), array![[1.0, 0.0], [2.5, 3.0]]).unwrap();
        let s = m.select(&[1], &[1, 0]);
        assert_eq!(s.values, array![[3.0, 2.5]]);
        assert_eq!(s.col_ids, ids(&["y", "x"]));
    }
}
