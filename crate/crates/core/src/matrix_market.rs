//! Matrix Market coordinate files (`real`, `general` or `symmetric`).

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symmetry {
    General,
    Symmetric,
}

/// Banner and size line of a coordinate file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub rows: usize,
    pub cols: usize,
    /// Entries stored in the file (one triangle for symmetric files).
    pub entries: usize,
    pub symmetry: Symmetry,
}

impl Header {
    /// Stored nonzeros after mirroring, given how many stored entries are diagonal.
    pub fn expanded_nnz(&self, diagonal_entries: usize) -> usize {
        match self.symmetry {
            Symmetry::General => self.entries,
            Symmetry::Symmetric => 2 * (self.entries - diagonal_entries) + diagonal_entries,
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_banner(line: &str) -> Result<Symmetry> {
    let tokens: Vec<String> = line.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" {
        return Err(parse_err(1, "expected '%%MatrixMarket matrix coordinate real <symmetry>'"));
    }
    if tokens[1] != "matrix" || tokens[2] != "coordinate" {
        return Err(parse_err(1, "only 'matrix coordinate' files are supported"));
    }
    if tokens[3] != "real" {
        return Err(parse_err(1, format!("unsupported field '{}'", tokens[3])));
    }
    match tokens[4].as_str() {
        "general" => Ok(Symmetry::General),
        "symmetric" => Ok(Symmetry::Symmetric),
        other => Err(parse_err(1, format!("unsupported symmetry '{other}'"))),
    }
}

/// Reads the banner and size line; returns the header and the 1-based number
/// of the last line consumed.
fn read_header_lines(lines: &mut impl Iterator<Item = std::io::Result<String>>) -> Result<(Header, usize)> {
    let banner = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file"))??;
    let symmetry = parse_banner(&banner)?;
    let mut line_no = 1;
    for line in lines {
        let line = line?;
        line_no += 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(line_no, "size line needs 'rows cols entries'"));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(line_no, format!("invalid integer '{s}'")))
        };
        let header = Header {
            rows: num(fields[0])?,
            cols: num(fields[1])?,
            entries: num(fields[2])?,
            symmetry,
        };
        return Ok((header, line_no));
    }
    Err(parse_err(line_no, "missing size line"))
}

pub fn read_header(reader: impl BufRead) -> Result<Header> {
    read_header_lines(&mut reader.lines()).map(|(h, _)| h)
}

/// Parses a coordinate file, mirroring symmetric storage.
pub fn read_matrix_market(reader: impl BufRead) -> Result<CsrMatrix> {
    let mut lines = reader.lines();
    let (header, mut line_no) = read_header_lines(&mut lines)?;
    if header.rows != header.cols {
        return Err(Error::NotSquare {
            rows: header.rows,
            cols: header.cols,
        });
    }
    let capacity = match header.symmetry {
        Symmetry::General => header.entries,
        Symmetry::Symmetric => 2 * header.entries,
    };
    let mut triplets = Vec::with_capacity(capacity);
    let mut seen = 0usize;
    for line in lines {
        let line = line?;
        line_no += 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        if seen == header.entries {
            return Err(parse_err(line_no, "more entries than declared"));
        }
        let mut fields = trimmed.split_whitespace();
        let mut index = |name: &str, bound: usize| -> Result<usize> {
            let s = fields
                .next()
                .ok_or_else(|| parse_err(line_no, format!("missing {name} index")))?;
            let i: usize = s
                .parse()
                .map_err(|_| parse_err(line_no, format!("invalid {name} index '{s}'")))?;
            if i == 0 || i > bound {
                return Err(parse_err(line_no, format!("{name} index {i} out of range 1..={bound}")));
            }
            Ok(i - 1)
        };
        let r = index("row", header.rows)?;
        let c = index("column", header.cols)?;
        let s = fields
            .next()
            .ok_or_else(|| parse_err(line_no, "missing value"))?;
        let v: f64 = s
            .parse()
            .map_err(|_| parse_err(line_no, format!("invalid value '{s}'")))?;
        if fields.next().is_some() {
            return Err(parse_err(line_no, "trailing fields"));
        }
        triplets.push((r, c, v));
        if header.symmetry == Symmetry::Symmetric && r != c {
            triplets.push((c, r, v));
        }
        seen += 1;
    }
    if seen != header.entries {
        return Err(parse_err(
            line_no,
            format!("declared {} entries, found {seen}", header.entries),
        ));
    }
    CsrMatrix::from_triplets(header.rows, header.cols, triplets)
}

pub fn load_matrix_market(path: impl AsRef<Path>) -> Result<CsrMatrix> {
    read_matrix_market(BufReader::new(File::open(path)?))
}

/// Writes `a` as a `general` coordinate file with shortest round-trip values.
pub fn write_matrix_market(mut w: impl Write, a: &CsrMatrix) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", a.n_rows(), a.n_cols(), a.nnz())?;
    for r in 0..a.n_rows() {
        let (cols, vals) = a.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            writeln!(w, "{} {} {:?}", r + 1, c + 1, v)?;
        }
    }
    Ok(())
}
