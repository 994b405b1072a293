//! Matrix Market I/O: coordinate real symmetric for sparse matrices and
//! array real general for dense blocks.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Writes the lower triangle of a symmetric matrix in coordinate format.
pub fn write_symmetric<W: Write>(out: &mut W, m: &CsrMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::MatrixMarket(format!("{}x{} matrix is not square", m.nrows(), m.ncols())));
    }
    let lower: Vec<(usize, usize, f64)> = m.triplets().filter(|&(r, c, _)| c <= r).collect();
    writeln!(out, "%%MatrixMarket matrix coordinate real symmetric")?;
    writeln!(out, "{} {} {}", m.nrows(), m.ncols(), lower.len())?;
    for (r, c, v) in lower {
        writeln!(out, "{} {} {:.17e}", r + 1, c + 1, v)?;
    }
    Ok(())
}

/// Writes every stored entry in coordinate format.
pub fn write_general<W: Write>(out: &mut W, m: &CsrMatrix) -> Result<()> {
    writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(out, "{} {} {}", m.nrows(), m.ncols(), m.nnz())?;
    for (r, c, v) in m.triplets() {
        writeln!(out, "{} {} {:.17e}", r + 1, c + 1, v)?;
    }
    Ok(())
}

pub fn write_dense<W: Write>(out: &mut W, m: &DMatrix<f64>) -> Result<()> {
    writeln!(out, "%%MatrixMarket matrix array real general")?;
    writeln!(out, "{} {}", m.nrows(), m.ncols())?;
    // column-major, as the format requires
    for v in m.iter() {
        writeln!(out, "{v:.17e}")?;
    }
    Ok(())
}

fn data_lines<R: BufRead>(input: R) -> Result<(String, Vec<String>)> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::MatrixMarket("empty input".into()))??.to_ascii_lowercase();
    let mut body = Vec::new();
    for line in lines {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('%') {
            body.push(t.to_string());
        }
    }
    Ok((header, body))
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.and_then(|s| s.parse().ok()).ok_or_else(|| Error::MatrixMarket(format!("cannot parse {what}")))
}

/// Reads coordinate real matrices; symmetric storage is expanded to both
/// triangles.
pub fn read_sparse<R: BufRead>(input: R) -> Result<CsrMatrix> {
    let (header, body) = data_lines(input)?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5
        || fields[0] != "%%matrixmarket"
        || fields[1] != "matrix"
        || fields[2] != "coordinate"
        || fields[3] != "real"
    {
        return Err(Error::MatrixMarket(format!("unsupported header '{header}'")));
    }
    let symmetric = match fields[4] {
        "symmetric" => true,
        "general" => false,
        s => return Err(Error::MatrixMarket(format!("unsupported symmetry '{s}'"))),
    };
    let mut it = body.iter();
    let size = it.next().ok_or_else(|| Error::MatrixMarket("missing size line".into()))?;
    let mut toks = size.split_whitespace();
    let nrows: usize = parse(toks.next(), "row count")?;
    let ncols: usize = parse(toks.next(), "column count")?;
    let nnz: usize = parse(toks.next(), "entry count")?;
    let mut trip = Vec::with_capacity(if symmetric { 2 * nnz } else { nnz });
    for line in it.by_ref().take(nnz) {
        let mut toks = line.split_whitespace();
        let r: usize = parse(toks.next(), "row index")?;
        let c: usize = parse(toks.next(), "column index")?;
        let v: f64 = parse(toks.next(), "value")?;
        if r == 0 || c == 0 || r > nrows || c > ncols {
            return Err(Error::MatrixMarket(format!("index ({r}, {c}) out of range")));
        }
        trip.push((r - 1, c - 1, v));
        if symmetric && r != c {
            trip.push((c - 1, r - 1, v));
        }
    }
    if trip.len() < nnz || it.next().is_some() {
        return Err(Error::MatrixMarket(format!("expected {nnz} entries")));
    }
    Ok(CsrMatrix::from_triplets(nrows, ncols, &trip))
}

pub fn read_dense<R: BufRead>(input: R) -> Result<DMatrix<f64>> {
    let (header, body) = data_lines(input)?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields != ["%%matrixmarket", "matrix", "array", "real", "general"] {
        return Err(Error::MatrixMarket(format!("unsupported header '{header}'")));
    }
    let mut it = body.iter();
    let size = it.next().ok_or_else(|| Error::MatrixMarket("missing size line".into()))?;
    let mut toks = size.split_whitespace();
    let nrows: usize = parse(toks.next(), "row count")?;
    let ncols: usize = parse(toks.next(), "column count")?;
    let values = it.map(|l| parse(Some(l.as_str()), "value")).collect::<Result<Vec<f64>>>()?;
    if values.len() != nrows * ncols {
        return Err(Error::MatrixMarket(format!("expected {} values, found {}", nrows * ncols, values.len())));
    }
    Ok(DMatrix::from_vec(nrows, ncols, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_round_trip_is_exact() {
        let m = CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 2.0), (1, 0, -1.0 / 3.0), (0, 1, -1.0 / 3.0), (1, 1, 1e-300), (2, 2, std::f64::consts::PI)],
        );
        let mut buf = Vec::new();
        write_symmetric(&mut buf, &m).unwrap();
        let back = read_sparse(buf.as_slice()).unwrap();
        assert_eq!(back.to_dense(), m.to_dense());
    }

    #[test]
    fn rectangular_round_trip() {
        let m = CsrMatrix::from_triplets(2, 3, &[(0, 2, -1.0), (1, 0, 1.0), (1, 1, 0.5)]);
        let mut buf = Vec::new();
        write_general(&mut buf, &m).unwrap();
        let back = read_sparse(buf.as_slice()).unwrap();
        assert_eq!((back.nrows(), back.ncols(), back.nnz()), (2, 3, 3));
        assert_eq!(back.to_dense(), m.to_dense());
    }

    #[test]
    fn dense_round_trip_is_exact() {
        let m = DMatrix::from_fn(4, 3, |i, j| (i as f64 + 1.0) / (j as f64 + 7.0));
        let mut buf = Vec::new();
        write_dense(&mut buf, &m).unwrap();
        assert_eq!(read_dense(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(read_sparse("%%MatrixMarket matrix coordinate complex general\n1 1 0\n".as_bytes()).is_err());
        assert!(read_sparse("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n".as_bytes()).is_err());
        assert!(read_dense("%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n".as_bytes()).is_err());
    }
}
