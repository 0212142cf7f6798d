//! `D = alpha * A * B + beta * C` evaluated element-wise on the model, and
//! the plain-text matrix file format.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::config::TcConfig;
use crate::engine;
use crate::error::{Error, Result};
use crate::formats::{
    self, parse_hexfloat, quantize_f64, render_hexfloat, Class, Format, FpValue, OverflowPolicy,
    Rounding,
};

/// A dense row-major matrix whose elements all share one format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixHandle {
    rows: usize,
    cols: usize,
    format: Format,
    data: Vec<FpValue>,
}

impl MatrixHandle {
    pub fn new(
        rows: usize,
        cols: usize,
        format: Format,
        data: Vec<FpValue>,
    ) -> Result<MatrixHandle> {
        if rows == 0 || cols == 0 {
            return Err(Error::Contract(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| v.format() != format) {
            return Err(Error::Contract(format!(
                "element in {} inside a {format} matrix",
                v.format()
            )));
        }
        Ok(MatrixHandle {
            rows,
            cols,
            format,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, format: Format) -> Result<MatrixHandle> {
        MatrixHandle::new(
            rows,
            cols,
            format,
            vec![FpValue::zero(format, false); rows * cols],
        )
    }

    pub fn identity(n: usize, format: Format) -> Result<MatrixHandle> {
        let data = (0..n * n)
            .map(|i| {
                if i / n == i % n {
                    FpValue::one(format)
                } else {
                    FpValue::zero(format, false)
                }
            })
            .collect();
        MatrixHandle::new(n, n, format, data)
    }

    /// Rounds each binary64 element to nearest into `format`.
    pub fn from_f64(
        rows: usize,
        cols: usize,
        values: &[f64],
        format: Format,
    ) -> Result<MatrixHandle> {
        let data = values
            .iter()
            .map(|&x| quantize_f64(x, format, Rounding::Rne))
            .collect();
        MatrixHandle::new(rows, cols, format, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn format(&self) -> Format {
        self.format
    }

    pub fn data(&self) -> &[FpValue] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> FpValue {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[FpValue] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<FpValue> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(FpValue::to_f64).collect()
    }

    /// Parses `rows cols format` followed by row-major tokens. Tokens are
    /// hexadecimal literals, `inf`/`nan`, or decimals (read as binary64 and
    /// rounded to nearest).
    pub fn parse(text: &str) -> Result<MatrixHandle> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (hline, header) = lines
            .by_ref()
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or_else(|| Error::line(1, "empty matrix file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::line(hline, "expected header `rows cols format`"));
        }
        let rows: usize = fields[0].parse().map_err(|e| Error::line(hline, e))?;
        let cols: usize = fields[1].parse().map_err(|e| Error::line(hline, e))?;
        let format = Format::by_name(fields[2]).map_err(|e| Error::line(hline, e))?;
        let mut data = Vec::with_capacity(rows * cols);
        let mut last_line = hline;
        for (line, l) in lines {
            for tok in l.split_whitespace() {
                if data.len() == rows * cols {
                    return Err(Error::line(line, "more elements than the header declares"));
                }
                data.push(
                    parse_token(tok, format)
                        .map_err(|e| Error::line(line, format!("`{tok}`: {e}")))?,
                );
            }
            last_line = line;
        }
        if data.len() != rows * cols {
            return Err(Error::line(
                last_line,
                format!("expected {} elements, found {}", rows * cols, data.len()),
            ));
        }
        MatrixHandle::new(rows, cols, format, data).map_err(|e| Error::line(hline, e))
    }

    /// Renders the file format with hexadecimal elements, one row per line.
    pub fn render(&self) -> String {
        let mut out = format!("{} {} {}\n", self.rows, self.cols, self.format);
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(render_hexfloat).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }
}

fn parse_token(tok: &str, format: Format) -> Result<FpValue> {
    let body = tok.trim_start_matches(['+', '-']).to_ascii_lowercase();
    if body.starts_with("0x") || body == "inf" || body == "infinity" || body == "nan" {
        return parse_hexfloat(tok, format);
    }
    let x: f64 = tok
        .parse()
        .map_err(|_| Error::parse(0, "not a hexadecimal or decimal number"))?;
    Ok(quantize_f64(x, format, Rounding::Rne))
}

/// `s * x` computed exactly and rounded to nearest into `format`.
fn scale(x: &FpValue, s: f64, format: Format) -> FpValue {
    let d = x.decompose();
    let neg = d.neg != s.is_sign_negative();
    match d.class {
        Class::Nan => FpValue::nan(format),
        Class::Infinite if s == 0.0 => FpValue::nan(format),
        Class::Infinite => FpValue::infinity(format, neg),
        Class::Zero => FpValue::zero(format, neg),
        Class::Normal | Class::Subnormal => {
            if s == 0.0 {
                return FpValue::zero(format, neg);
            }
            let (ms, es) = formats::f64_parts(s.abs());
            let ex = d.exponent - x.format().params().fraction_bits() as i32;
            formats::round_parts(
                neg,
                d.significand as u128 * ms as u128,
                ex + es,
                false,
                format,
                Rounding::Rne,
                OverflowPolicy::Ieee,
            )
        }
    }
}

/// `alpha * A * B + beta * C` on the model.
///
/// `A` is scaled by `alpha` element-wise (exactly, then rounded into the
/// input format) and `beta * C` is rounded into the output format before
/// it enters each inner product as the addend. `beta = 0` ignores `C`.
pub fn gemm(
    alpha: f64,
    a: &MatrixHandle,
    b: &MatrixHandle,
    beta: f64,
    c: &MatrixHandle,
    cfg: &TcConfig,
) -> Result<MatrixHandle> {
    if !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::Contract("alpha and beta must be finite".into()));
    }
    if a.cols != b.rows || c.rows != a.rows || c.cols != b.cols {
        return Err(Error::Contract(format!(
            "cannot form {}x{} * {}x{} + {}x{}",
            a.rows, a.cols, b.rows, b.cols, c.rows, c.cols
        )));
    }
    if a.format != cfg.in_format || b.format != cfg.in_format || c.format != cfg.out_format {
        return Err(Error::Contract(format!(
            "matrices are {}, {}, {} but the model takes {} and outputs {}",
            a.format, b.format, c.format, cfg.in_format, cfg.out_format
        )));
    }
    let scaled;
    let a = if alpha == 1.0 {
        a
    } else {
        scaled = MatrixHandle {
            data: a
                .data
                .iter()
                .map(|x| scale(x, alpha, cfg.in_format))
                .collect(),
            ..a.clone()
        };
        &scaled
    };
    let cols: Vec<Vec<FpValue>> = (0..b.cols).map(|j| b.col(j)).collect();
    let n = b.cols;
    let data = (0..a.rows * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            let addend = if beta == 0.0 {
                FpValue::zero(cfg.out_format, false)
            } else if beta == 1.0 {
                c.get(i, j)
            } else {
                scale(&c.get(i, j), beta, cfg.out_format)
            };
            engine::inner_product(a.row(i), &cols[j], &addend, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    MatrixHandle::new(a.rows, n, cfg.out_format, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v100() -> TcConfig {
        TcConfig::new(Format::Binary16, Format::Binary32, 0, 4)
    }

    #[test]
    fn identity_product() {
        let i2 = MatrixHandle::identity(2, Format::Binary16).unwrap();
        let z = MatrixHandle::zeros(2, 2, Format::Binary32).unwrap();
        let d = gemm(1.0, &i2, &i2, 1.0, &z, &v100()).unwrap();
        assert_eq!(d, MatrixHandle::identity(2, Format::Binary32).unwrap());
    }

    #[test]
    fn golden_row_times_column() {
        let h = Format::Binary16;
        let p = |e: i32| 2f64.powi(e);
        let a = MatrixHandle::from_f64(1, 3, &[1.5, p(-12), p(-12)], h).unwrap();
        let b = MatrixHandle::from_f64(3, 1, &[1.5, p(-11), p(-11)], h).unwrap();
        let c = MatrixHandle::from_f64(1, 1, &[f64::NAN], Format::Binary32).unwrap();
        let d = gemm(1.0, &a, &b, 0.0, &c, &v100()).unwrap();
        assert_eq!(d.get(0, 0).to_f64(), 2.25 + p(-22));
    }

    #[test]
    fn alpha_and_beta_scaling() {
        let h = Format::Binary16;
        let a = MatrixHandle::from_f64(1, 2, &[1.0, 3.0], h).unwrap();
        let b = MatrixHandle::from_f64(2, 1, &[1.0, 1.0], h).unwrap();
        let c = MatrixHandle::from_f64(1, 1, &[10.0], Format::Binary32).unwrap();
        let d = gemm(0.5, &a, &b, -2.0, &c, &v100()).unwrap();
        assert_eq!(d.get(0, 0).to_f64(), 2.0 - 20.0);
        // Scaling rounds into the input format.
        let x = scale(&FpValue::one(h), 1.0 / 3.0, h);
        assert_eq!(x, quantize_f64(1.0 / 3.0, h, Rounding::Rne));
        assert!(scale(&FpValue::infinity(h, false), 0.0, h).is_nan());
    }

    #[test]
    fn shape_and_format_errors() {
        let h = Format::Binary16;
        let a = MatrixHandle::zeros(2, 3, h).unwrap();
        let c = MatrixHandle::zeros(2, 2, Format::Binary32).unwrap();
        assert!(gemm(1.0, &a, &a, 1.0, &c, &v100()).is_err());
        let bf = MatrixHandle::zeros(3, 2, Format::Bfloat16).unwrap();
        assert!(gemm(1.0, &a, &bf, 1.0, &c, &v100()).is_err());
        assert!(MatrixHandle::zeros(0, 2, h).is_err());
        let b = MatrixHandle::zeros(3, 2, h).unwrap();
        assert!(gemm(f64::INFINITY, &a, &b, 1.0, &c, &v100()).is_err());
    }

    #[test]
    fn matrix_file_round_trip() {
        let text = "2 2 binary16\n0x1.8p+0 -2\n0.1 inf\n";
        let m = MatrixHandle::parse(text).unwrap();
        assert_eq!(m.get(0, 1).to_f64(), -2.0);
        assert_eq!(m.get(1, 0).bits(), 0x2e66);
        assert!(m.get(1, 1).is_infinite());
        assert_eq!(
            m.render(),
            "2 2 binary16\n0x1.8p+0 -0x1p+1\n0x1.998p-4 inf\n"
        );
        assert_eq!(MatrixHandle::parse(&m.render()).unwrap(), m);
    }

    #[test]
    fn matrix_file_errors() {
        let cases = [
            ("", 1),
            ("2 2\n", 1),
            ("1 2 binary99\n1 2\n", 1),
            ("1 2 binary16\n1\n", 2),
            ("1 1 binary16\n1 2\n", 2),
            ("1 2 binary16\n1\n0xg\n", 3),
        ];
        for (text, line) in cases {
            match MatrixHandle::parse(text) {
                Err(Error::Line { line: got, .. }) => assert_eq!(got, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }
}
