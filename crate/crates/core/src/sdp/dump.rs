//! Plain-text dump of a [`ConicProblem`].
//!
//! ```text
//! # comment
//! cones 3
//! free 2
//! nonneg 1
//! psd 2
//! rows 4
//! b <row> <value>
//! c <block> <i> <j> <value>
//! a <row> <block> <i> <j> <value>
//! ```
//!
//! Blocks are numbered from 0 in the order of the `cones` section. For
//! `free`/`nonneg` blocks `i = j` is the position inside the block; for `psd`
//! blocks `(i, j)` with `i <= j` is the matrix entry and the value is the
//! `svec` coefficient (off-diagonal entries already carry the `sqrt(2)`
//! factor). Only nonzeros are listed and values round-trip exactly.

use std::io::{BufRead, Write};

use super::linalg::{svec_index, svec_pair};
use super::{Cone, ConicProblem, SdpError, SparseMatrix};

pub fn write_dump<W: Write>(p: &ConicProblem, mut out: W) -> Result<(), SdpError> {
    p.validate()?;
    let locate = locator(&p.cones);
    writeln!(out, "# conic problem: min c'z s.t. A z = b, z in K")?;
    writeln!(out, "cones {}", p.cones.len())?;
    for cone in &p.cones {
        match cone {
            Cone::Free(n) => writeln!(out, "free {n}")?,
            Cone::Nonneg(n) => writeln!(out, "nonneg {n}")?,
            Cone::Psd(n) => writeln!(out, "psd {n}")?,
        }
    }
    writeln!(out, "rows {}", p.num_rows())?;
    for (r, v) in p.b.iter().enumerate().filter(|(_, v)| **v != 0.0) {
        writeln!(out, "b {r} {v:e}")?;
    }
    for (col, v) in p.c.iter().enumerate().filter(|(_, v)| **v != 0.0) {
        let (k, i, j) = locate(col);
        writeln!(out, "c {k} {i} {j} {v:e}")?;
    }
    for (r, col, v) in p.a.triplets() {
        let (k, i, j) = locate(col);
        writeln!(out, "a {r} {k} {i} {j} {v:e}")?;
    }
    Ok(())
}

fn locator(cones: &[Cone]) -> impl Fn(usize) -> (usize, usize, usize) + '_ {
    let mut offsets = Vec::with_capacity(cones.len());
    let mut acc = 0;
    for c in cones {
        offsets.push(acc);
        acc += c.dim();
    }
    move |col| {
        let k = offsets.partition_point(|&o| o <= col) - 1;
        let local = col - offsets[k];
        match cones[k] {
            Cone::Psd(n) => {
                let (i, j) = svec_pair(local, n);
                (k, i, j)
            }
            _ => (k, local, local),
        }
    }
}

pub fn read_dump<R: BufRead>(input: R) -> Result<ConicProblem, SdpError> {
    let mut cones: Vec<Cone> = Vec::new();
    let mut n_cones: Option<usize> = None;
    let mut rows: Option<usize> = None;
    let mut b_entries = Vec::new();
    let mut c_entries = Vec::new();
    let mut a_entries = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let err = |message: String| SdpError::Dump { line: lineno + 1, message };
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = text.split_whitespace().collect();
        let int = |k: usize| -> Result<usize, SdpError> {
            fields
                .get(k)
                .ok_or_else(|| err(format!("missing field {k}")))?
                .parse()
                .map_err(|_| err(format!("field {k} is not an index")))
        };
        let float = |k: usize| -> Result<f64, SdpError> {
            fields
                .get(k)
                .ok_or_else(|| err(format!("missing field {k}")))?
                .parse()
                .map_err(|_| err(format!("field {k} is not a number")))
        };
        let arity = |n: usize| if fields.len() == n { Ok(()) } else { Err(err(format!("expected {n} fields"))) };
        match fields[0] {
            "cones" => {
                arity(2)?;
                n_cones = Some(int(1)?);
            }
            "free" | "nonneg" | "psd" => {
                arity(2)?;
                let n = int(1)?;
                cones.push(match fields[0] {
                    "free" => Cone::Free(n),
                    "nonneg" => Cone::Nonneg(n),
                    _ => Cone::Psd(n),
                });
            }
            "rows" => {
                arity(2)?;
                rows = Some(int(1)?);
            }
            "b" => {
                arity(3)?;
                b_entries.push((lineno + 1, int(1)?, float(2)?));
            }
            "c" => {
                arity(5)?;
                c_entries.push((lineno + 1, int(1)?, int(2)?, int(3)?, float(4)?));
            }
            "a" => {
                arity(6)?;
                a_entries.push((lineno + 1, int(1)?, int(2)?, int(3)?, int(4)?, float(5)?));
            }
            other => return Err(err(format!("unknown record '{other}'"))),
        }
    }
    let eof = |message: &str| SdpError::Dump { line: 0, message: message.to_string() };
    let n_cones = n_cones.ok_or_else(|| eof("missing 'cones' record"))?;
    if n_cones != cones.len() {
        return Err(eof(&format!("declared {n_cones} cones, found {}", cones.len())));
    }
    let m = rows.ok_or_else(|| eof("missing 'rows' record"))?;
    let mut offsets = Vec::new();
    let mut acc = 0;
    for c in &cones {
        offsets.push(acc);
        acc += c.dim();
    }
    let column = |line: usize, k: usize, i: usize, j: usize| -> Result<usize, SdpError> {
        let err = |message: String| SdpError::Dump { line, message };
        let cone = cones.get(k).ok_or_else(|| err(format!("block {k} out of range")))?;
        match *cone {
            Cone::Psd(n) => {
                if i > j || j >= n {
                    return Err(err(format!("entry ({i}, {j}) invalid for psd {n}")));
                }
                Ok(offsets[k] + svec_index(i, j, n))
            }
            Cone::Free(n) | Cone::Nonneg(n) => {
                if i != j || i >= n {
                    return Err(err(format!("entry ({i}, {j}) invalid for block of size {n}")));
                }
                Ok(offsets[k] + i)
            }
        }
    };
    let mut b = vec![0.0; m];
    for (line, r, v) in b_entries {
        *b.get_mut(r).ok_or(SdpError::Dump { line, message: format!("row {r} out of range") })? = v;
    }
    let mut c = vec![0.0; acc];
    for (line, k, i, j, v) in c_entries {
        c[column(line, k, i, j)?] = v;
    }
    let mut triplets = Vec::with_capacity(a_entries.len());
    for (line, r, k, i, j, v) in a_entries {
        if r >= m {
            return Err(SdpError::Dump { line, message: format!("row {r} out of range") });
        }
        triplets.push((r, column(line, k, i, j)?, v));
    }
    let p = ConicProblem { cones, c, a: SparseMatrix::from_triplets(m, acc, triplets), b };
    p.validate()?;
    Ok(p)
}
