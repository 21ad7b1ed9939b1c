//! File formats: the kernel text format and the tail-table CSV contract.
//!
//! Kernel files are a header line `n=<int>` followed by `n^4`
//! whitespace-separated reals in row-major `(i,j,k,l)` order. Tail tables
//! are CSV with the fixed column order
//! `z,tail_emp,tail_lo,tail_hi,tail_normal,ratio,ratio_lo,ratio_hi`;
//! every float is printed with 17 significant digits so runs are
//! byte-comparable.

use std::io::{BufRead, Write};

use crate::kernel::Kernel4;
use crate::sim::TailRatioTable;
use crate::{Error, Result};

/// Parse a kernel from the text format.
pub fn read_kernel<R: BufRead>(reader: R) -> Result<Kernel4<f64>> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty kernel file".into()))??;
    let header = header.trim();
    let n: usize = header
        .strip_prefix("n=")
        .ok_or_else(|| Error::Parse(format!("expected header 'n=<int>', got '{}'", header)))?
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("bad n in header: {}", e)))?;
    let expected = n
        .checked_pow(4)
        .ok_or_else(|| Error::Parse("n too large".into()))?;
    let mut values = Vec::with_capacity(expected);
    for line in lines {
        let line = line?;
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|e| Error::Parse(format!("bad value '{}': {}", tok, e)))?;
            values.push(v);
            if values.len() > expected {
                return Err(Error::Parse(format!(
                    "more than {} values for n = {}",
                    expected, n
                )));
            }
        }
    }
    if values.len() != expected {
        return Err(Error::Parse(format!(
            "expected {} values for n = {}, got {}",
            expected,
            n,
            values.len()
        )));
    }
    Kernel4::new(n, values)
}

/// Write a kernel in the text format (one `(i,j,k)` fiber per line).
pub fn write_kernel<W: Write>(mut writer: W, kernel: &Kernel4<f64>) -> Result<()> {
    let n = kernel.n();
    writeln!(writer, "n={}", n)?;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut line = String::new();
                for l in 0..n {
                    if l > 0 {
                        line.push(' ');
                    }
                    line.push_str(&format_g17(kernel.get(i, j, k, l)));
                }
                writeln!(writer, "{}", line)?;
            }
        }
    }
    Ok(())
}

/// 17-significant-digit rendering, stable across runs.
pub fn format_g17(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Render the tail table in the fixed CSV contract.
pub fn tail_table_csv(table: &TailRatioTable) -> String {
    let mut out = String::from("z,tail_emp,tail_lo,tail_hi,tail_normal,ratio,ratio_lo,ratio_hi\n");
    for r in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            format_g17(r.z),
            format_g17(r.tail_emp),
            format_g17(r.tail_lo),
            format_g17(r.tail_hi),
            format_g17(r.tail_normal),
            format_g17(r.ratio),
            format_g17(r.ratio_lo),
            format_g17(r.ratio_hi),
        ));
    }
    out
}
