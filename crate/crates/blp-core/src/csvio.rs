//! CSV emission for traces, value curves, and sample logs. Numbers are
//! written with 17 significant digits in the C `%.17g` style, so every f64
//! survives a write/read round trip bit-exactly.

use crate::calmness::PebReport;
use crate::continuation::{BranchPoint, ValueSample};
use crate::{Error, Result};
use std::io::{BufRead, Write};

/// Format like C's `printf("%.17g", v)`: 17 significant digits, fixed
/// notation for decimal exponents in [-4, 17), scientific otherwise,
/// trailing zeros stripped.
pub fn fmt_g17(v: f64) -> String {
    if v.is_nan() {
        return "nan".to_string();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".to_string() } else { "-inf".to_string() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".to_string() } else { "0".to_string() };
    }
    let sci = format!("{:.16e}", v);
    let epos = sci.find('e').expect("exponent marker");
    let exp: i32 = sci[epos + 1..].parse().expect("exponent digits");
    if !(-4..17).contains(&exp) {
        let mantissa = trim_zeros(&sci[..epos]);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let prec = (16 - exp).max(0) as usize;
    let fixed = format!("{v:.prec$}");
    if fixed.contains('.') {
        trim_zeros(&fixed).to_string()
    } else {
        fixed
    }
}

fn trim_zeros(s: &str) -> &str {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.')
}

/// A rectangular numeric table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(headers: Vec<String>) -> Table {
        Table { headers, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.headers.join(","))?;
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(|&v| fmt_g17(v)).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Table> {
        let mut lines = input.lines().enumerate();
        let headers = match lines.next() {
            Some((_, Ok(line))) => line.split(',').map(|h| h.trim().to_string()).collect(),
            Some((_, Err(e))) => return Err(Error::Format { line: 1, message: e.to_string() }),
            None => return Err(Error::Format { line: 1, message: "empty table".to_string() }),
        };
        let mut table = Table { headers, rows: Vec::new() };
        for (idx, line) in lines {
            let line = line.map_err(|e| Error::Format { line: idx + 1, message: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut row = Vec::with_capacity(table.headers.len());
            for cell in line.split(',') {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Format {
                    line: idx + 1,
                    message: format!("bad number `{}`", cell.trim()),
                })?;
                row.push(v);
            }
            if row.len() != table.headers.len() {
                return Err(Error::Format {
                    line: idx + 1,
                    message: format!(
                        "expected {} columns, found {}",
                        table.headers.len(),
                        row.len()
                    ),
                });
            }
            table.rows.push(row);
        }
        Ok(table)
    }
}

/// Branch-trace table: parameter, decision coordinates, full multiplier,
/// objective value, and the tracked event indicators.
pub fn trace_table(points: &[BranchPoint], m: usize, p: usize) -> Table {
    let mut headers = vec!["x".to_string()];
    headers.extend((0..m).map(|i| format!("y{}", i + 1)));
    headers.extend((0..p).map(|j| format!("u{}", j + 1)));
    headers.extend(
        ["value", "eig_min", "u_min", "g_inactive_max", "cond"].map(str::to_string),
    );
    let mut t = Table::new(headers);
    for pt in points {
        let mut row = vec![pt.x];
        row.extend_from_slice(&pt.y);
        row.extend_from_slice(&pt.u);
        row.extend_from_slice(&[pt.value, pt.eig_min, pt.u_min, pt.g_inactive_max, pt.cond]);
        t.push(row);
    }
    t
}

/// Value-function table: parameter, optimal value, boundary flag, first
/// minimizer coordinates.
pub fn curve_table(samples: &[ValueSample], m: usize) -> Table {
    let mut headers = vec!["x".to_string(), "value".to_string(), "boundary".to_string()];
    headers.extend((0..m).map(|i| format!("y{}", i + 1)));
    let mut t = Table::new(headers);
    for s in samples {
        let mut row = vec![s.x, s.value, s.boundary as u8 as f64];
        match s.minimizers.first() {
            Some(y) => row.extend_from_slice(y),
            None => row.extend(std::iter::repeat(f64::NAN).take(m)),
        }
        t.push(row);
    }
    t
}

/// Per-sample ratio log of a modulus estimate. Unusable ratios are NaN.
pub fn samples_table(report: &PebReport, m: usize) -> Table {
    let mut headers = vec!["x".to_string()];
    headers.extend((0..m).map(|i| format!("y{}", i + 1)));
    headers.extend(["numerator", "denominator", "ratio"].map(str::to_string));
    let mut t = Table::new(headers);
    for s in &report.samples {
        let mut row = vec![s.x];
        row.extend_from_slice(&s.y);
        row.extend_from_slice(&[s.numerator, s.denominator, s.ratio.unwrap_or(f64::NAN)]);
        t.push(row);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_matches_printf_conventions() {
        assert_eq!(fmt_g17(0.0), "0");
        assert_eq!(fmt_g17(1.0), "1");
        assert_eq!(fmt_g17(-2.5), "-2.5");
        assert_eq!(fmt_g17(0.1), "0.10000000000000001");
        assert_eq!(fmt_g17(1e-5), "1.0000000000000001e-05");
        assert_eq!(fmt_g17(1e17), "1e+17");
        assert_eq!(fmt_g17(1234.5), "1234.5");
        assert_eq!(fmt_g17(f64::INFINITY), "inf");
    }

    #[test]
    fn g17_round_trips_awkward_values() {
        for &v in &[
            0.1,
            -1.0 / 3.0,
            2.0f64.powi(-1074),
            f64::MAX,
            1.2345678901234567e-300,
            -0.0,
            std::f64::consts::PI,
        ] {
            let s = fmt_g17(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v} -> {s} -> {back}");
        }
    }

    #[test]
    fn table_round_trips() {
        let mut t = Table::new(vec!["x".to_string(), "v".to_string()]);
        t.push(vec![0.1, -1.0 / 3.0]);
        t.push(vec![f64::MAX, 2.0f64.powi(-1074)]);
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let back = Table::read(buf.as_slice()).unwrap();
        assert_eq!(back.headers, t.headers);
        for (a, b) in back.rows.iter().flatten().zip(t.rows.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn read_reports_bad_cells_with_line_numbers() {
        let text = "x,v\n1,2\n3,oops\n";
        let err = Table::read(text.as_bytes()).unwrap_err();
        match err {
            Error::Format { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("oops"));
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
