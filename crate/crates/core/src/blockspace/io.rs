use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Reads a dense matrix stored one row per line, comma-separated.
pub fn read_csv_matrix<T: Scalar>(path: &Path) -> Result<DMatrix<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows: Vec<Vec<T>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map(T::lit).map_err(|e| Error::Parse(format!("{}: '{s}': {e}", path.display()))))
            .collect::<Result<Vec<T>>>()?;
        rows.push(row);
    }
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse(format!("{}: ragged rows", path.display())));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Writes a dense matrix one row per line with round-trip precision.
pub fn write_csv_matrix<T: Scalar>(path: &Path, m: &DMatrix<T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| format!("{:?}", m[(i, j)].as_f64())))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a MatrixMarket `coordinate` file (`real`, `integer` or `pattern`; `general` or `symmetric`).
pub fn read_matrix_market<T: Scalar>(path: &Path) -> Result<DMatrix<T>> {
    let file = BufReader::new(File::open(path)?);
    let mut lines = file.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty MatrixMarket file".into()))??;
    let h: Vec<String> = header.split_whitespace().map(|s| s.to_ascii_lowercase()).collect();
    if h.len() < 5 || h[0] != "%%matrixmarket" || h[1] != "matrix" || h[2] != "coordinate" {
        return Err(Error::Parse(format!("{}: not a coordinate MatrixMarket file", path.display())));
    }
    let pattern = h[3] == "pattern";
    if !pattern && h[3] != "real" && h[3] != "integer" {
        return Err(Error::Parse(format!("unsupported field '{}'", h[3])));
    }
    let symmetric = match h[4].as_str() {
        "general" => false,
        "symmetric" => true,
        s => return Err(Error::Parse(format!("unsupported symmetry '{s}'"))),
    };
    let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("'{s}': {e}")));
    let mut size: Option<(usize, usize, usize)> = None;
    let mut m = DMatrix::zeros(0, 0);
    let mut seen = 0;
    for line in lines {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let f: Vec<&str> = t.split_whitespace().collect();
        match size {
            None => {
                if f.len() != 3 {
                    return Err(Error::Parse("bad size line".into()));
                }
                let s = (parse_usize(f[0])?, parse_usize(f[1])?, parse_usize(f[2])?);
                m = DMatrix::zeros(s.0, s.1);
                size = Some(s);
            }
            Some((r, c, _)) => {
                let need = if pattern { 2 } else { 3 };
                if f.len() < need {
                    return Err(Error::Parse(format!("bad entry line '{t}'")));
                }
                let (i, j) = (parse_usize(f[0])?, parse_usize(f[1])?);
                if i == 0 || j == 0 || i > r || j > c {
                    return Err(Error::Parse(format!("entry ({i}, {j}) out of range")));
                }
                let v = if pattern {
                    T::one()
                } else {
                    T::lit(f[2].parse::<f64>().map_err(|e| Error::Parse(format!("'{}': {e}", f[2])))?)
                };
                m[(i - 1, j - 1)] += v;
                if symmetric && i != j {
                    m[(j - 1, i - 1)] += v;
                }
                seen += 1;
            }
        }
    }
    match size {
        Some((_, _, nnz)) if nnz == seen => Ok(m),
        Some((_, _, nnz)) => Err(Error::Parse(format!("expected {nnz} entries, found {seen}"))),
        None => Err(Error::Parse("missing size line".into())),
    }
}

/// Writes the nonzeros of `m` as a `real general` coordinate file.
pub fn write_matrix_market<T: Scalar>(path: &Path, m: &DMatrix<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let nnz = m.iter().filter(|&&v| v != T::zero()).count();
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", m.nrows(), m.ncols(), nnz)?;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != T::zero() {
                writeln!(w, "{} {} {:?}", i + 1, j + 1, v.as_f64())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
