//! MatrixMarket text I/O (real, general; array and coordinate layouts).
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! write/read cycle reproduces every entry bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

const ARRAY_HEADER: &str = "%%MatrixMarket matrix array real general";
const COORD_HEADER: &str = "%%MatrixMarket matrix coordinate real general";

/// Dense column-major listing.
pub fn to_array_string(a: &Matrix) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{ARRAY_HEADER}");
    let _ = writeln!(out, "{} {}", a.nrows(), a.ncols());
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let _ = writeln!(out, "{}", a[(i, j)]);
        }
    }
    out
}

/// Sparse listing of the nonzero entries with 1-based indices.
pub fn to_coordinate_string(a: &Matrix) -> String {
    let entries: Vec<(usize, usize, f64)> = (0..a.ncols())
        .flat_map(|j| (0..a.nrows()).map(move |i| (i, j)))
        .map(|(i, j)| (i, j, a[(i, j)]))
        .filter(|&(_, _, v)| v != 0.0)
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, "{COORD_HEADER}");
    let _ = writeln!(out, "{} {} {}", a.nrows(), a.ncols(), entries.len());
    for (i, j, v) in entries {
        let _ = writeln!(out, "{} {} {}", i + 1, j + 1, v);
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse_usize(tok: Option<&str>, what: &str) -> Result<usize> {
    tok.ok_or_else(|| bad(format!("missing {what}")))?
        .parse()
        .map_err(|_| bad(format!("bad {what}")))
}

fn parse_f64(tok: Option<&str>) -> Result<f64> {
    let v: f64 = tok
        .ok_or_else(|| bad("missing value"))?
        .parse()
        .map_err(|_| bad("bad value"))?;
    if !v.is_finite() {
        return Err(bad("non-finite matrix entry"));
    }
    Ok(v)
}

/// Parses either layout.
pub fn parse(text: &str) -> Result<Matrix> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty MatrixMarket file"))?;
    let lower = header.to_ascii_lowercase();
    let mut tokens = lower.split_whitespace();
    if tokens.next() != Some("%%matrixmarket") || tokens.next() != Some("matrix") {
        return Err(bad("missing %%MatrixMarket matrix header"));
    }
    let layout = tokens.next().unwrap_or_default().to_string();
    if tokens.next() != Some("real") || tokens.next() != Some("general") {
        return Err(bad("only real general matrices are supported"));
    }
    let mut body = lines
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('%'));
    let size_line = body.next().ok_or_else(|| bad("missing size line"))?;
    let mut size = size_line.split_whitespace();
    let rows = parse_usize(size.next(), "row count")?;
    let cols = parse_usize(size.next(), "column count")?;
    match layout.as_str() {
        "array" => {
            let mut a = Matrix::zeros(rows, cols);
            let mut values = body.flat_map(str::split_whitespace);
            for j in 0..cols {
                for i in 0..rows {
                    a[(i, j)] = parse_f64(values.next())?;
                }
            }
            if values.next().is_some() {
                return Err(bad("trailing values after array data"));
            }
            Ok(a)
        }
        "coordinate" => {
            let nnz = parse_usize(size.next(), "entry count")?;
            let mut a = Matrix::zeros(rows, cols);
            let mut seen = 0;
            for line in body {
                let mut t = line.split_whitespace();
                let i = parse_usize(t.next(), "row index")?;
                let j = parse_usize(t.next(), "column index")?;
                if i == 0 || j == 0 || i > rows || j > cols {
                    return Err(bad(format!("index ({i}, {j}) out of range")));
                }
                a[(i - 1, j - 1)] = parse_f64(t.next())?;
                seen += 1;
            }
            if seen != nnz {
                return Err(bad(format!("expected {nnz} entries, found {seen}")));
            }
            Ok(a)
        }
        other => Err(bad(format!("unknown layout '{other}'"))),
    }
}

pub fn write_array(path: impl AsRef<Path>, a: &Matrix) -> Result<()> {
    std::fs::write(path, to_array_string(a))?;
    Ok(())
}

pub fn write_coordinate(path: impl AsRef<Path>, a: &Matrix) -> Result<()> {
    std::fs::write(path, to_coordinate_string(a))?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Matrix> {
    parse(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn array_layout_is_column_major() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let s = to_array_string(&a);
        assert_eq!(s, format!("{ARRAY_HEADER}\n2 2\n1\n3\n2\n4\n"));
    }

    #[test]
    fn coordinate_skips_zeros() {
        let a = Matrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        let s = to_coordinate_string(&a);
        assert_eq!(s, format!("{COORD_HEADER}\n2 2 2\n1 1 0.5\n2 2 0.5\n"));
        assert_eq!(parse(&s).unwrap(), a);
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse("").is_err());
        assert!(parse("%%MatrixMarket matrix array complex general\n1 1\n1\n").is_err());
        assert!(parse(&format!("{ARRAY_HEADER}\n2 2\n1\n2\n3\n")).is_err());
        assert!(parse(&format!("{ARRAY_HEADER}\n1 1\nNaN\n")).is_err());
        assert!(parse(&format!("{COORD_HEADER}\n2 2 1\n3 1 1.0\n")).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let mut x = seed;
            let a = Matrix::from_fn(rows, cols, |_, _| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let v = (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                if x % 3 == 0 { 0.0 } else { v * 1e3 }
            });
            prop_assert_eq!(&parse(&to_array_string(&a)).unwrap(), &a);
            prop_assert_eq!(&parse(&to_coordinate_string(&a)).unwrap(), &a);
        }
    }
}
