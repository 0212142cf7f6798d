//! Reference model of the block-FMA semantics using arbitrary-precision
//! integers throughout.
//!
//! This is written independently of [`crate::engine`]: values are scaled
//! integers `m * 2^e` with `BigInt` mantissas, truncation is an explicit
//! integer division on the alignment grid, and block grouping is derived
//! from element indices. It is slow and only meant for differential checks.

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_traits::{Signed, Zero};

use crate::config::{COrder, TcConfig};
use crate::error::{Error, Result};
use crate::formats::{quantize_with, Class, Exact, Format, FpValue, OverflowPolicy, Rounding};

/// A dyadic rational `mantissa * 2^exp`, together with the exponent that
/// positions it in the alignment window.
#[derive(Clone, Debug)]
struct Dyadic {
    mantissa: BigInt,
    exp: i64,
    anchor: i64,
}

#[derive(Clone, Debug)]
enum Val {
    Nan,
    Inf(bool),
    Zero(bool),
    Num(Dyadic),
}

fn from_value(v: &FpValue) -> Val {
    let d = v.decompose();
    match d.class {
        Class::Nan => Val::Nan,
        Class::Infinite => Val::Inf(d.neg),
        Class::Zero => Val::Zero(d.neg),
        Class::Normal | Class::Subnormal => {
            let p = v.format().precision() as i64;
            let m = BigInt::from(d.significand);
            Val::Num(Dyadic {
                mantissa: if d.neg { -m } else { m },
                exp: d.exponent as i64 - (p - 1),
                anchor: d.exponent as i64,
            })
        }
    }
}

fn product(a: &FpValue, b: &FpValue) -> Val {
    match (from_value(a), from_value(b)) {
        (Val::Nan, _) | (_, Val::Nan) => Val::Nan,
        (Val::Inf(_), Val::Zero(_)) | (Val::Zero(_), Val::Inf(_)) => Val::Nan,
        (Val::Inf(x), Val::Inf(y)) => Val::Inf(x != y),
        (Val::Inf(x), Val::Num(n)) | (Val::Num(n), Val::Inf(x)) => {
            Val::Inf(x != n.mantissa.is_negative())
        }
        (Val::Zero(x), Val::Zero(y)) => Val::Zero(x != y),
        (Val::Zero(x), Val::Num(n)) | (Val::Num(n), Val::Zero(x)) => {
            Val::Zero(x != n.mantissa.is_negative())
        }
        (Val::Num(x), Val::Num(y)) => Val::Num(Dyadic {
            mantissa: x.mantissa * y.mantissa,
            exp: x.exp + y.exp,
            anchor: x.anchor + y.anchor,
        }),
    }
}

fn to_exact(m: &BigInt, exp: i64) -> Exact {
    Exact::Finite {
        neg: m.sign() == Sign::Minus,
        magnitude: m.magnitude().clone(),
        exponent: exp,
    }
}

/// Resolves NaN and infinities; `None` when every term is finite.
fn special(terms: &[Val], target: Format) -> Option<FpValue> {
    let mut pos = false;
    let mut neg = false;
    for t in terms {
        match t {
            Val::Nan => return Some(FpValue::nan(target)),
            Val::Inf(true) => neg = true,
            Val::Inf(false) => pos = true,
            _ => {}
        }
    }
    match (pos, neg) {
        (true, true) => Some(FpValue::nan(target)),
        (true, false) => Some(FpValue::infinity(target, false)),
        (false, true) => Some(FpValue::infinity(target, true)),
        (false, false) => None,
    }
}

fn round_block(terms: &[Val], cfg: &TcConfig, target: Format) -> FpValue {
    if let Some(s) = special(terms, target) {
        return s;
    }
    let nums: Vec<&Dyadic> = terms
        .iter()
        .filter_map(|t| match t {
            Val::Num(d) => Some(d),
            _ => None,
        })
        .collect();
    if nums.is_empty() {
        let all_neg = !terms.is_empty() && terms.iter().all(|t| matches!(t, Val::Zero(true)));
        return FpValue::zero(target, all_neg);
    }
    let e_max = nums.iter().map(|d| d.anchor).max().unwrap();
    let extra = cfg.sticky as i64;
    let grid = e_max - cfg.fraction_bits() as i64;
    let mut sum = BigInt::zero();
    for d in nums {
        // |d| / 2^grid truncated toward zero, in sign-magnitude.
        let mag = d.mantissa.abs();
        let (q, r) = if d.exp >= grid {
            (mag << (d.exp - grid) as usize, BigInt::zero())
        } else {
            mag.div_rem(&(BigInt::from(1) << (grid - d.exp) as usize))
        };
        let mut t = q << extra as usize;
        if extra == 1 && !r.is_zero() {
            t += 1;
        }
        if d.mantissa.is_negative() {
            sum -= t;
        } else {
            sum += t;
        }
    }
    if sum.is_zero() {
        return FpValue::zero(target, false);
    }
    quantize_with(
        &to_exact(&sum, grid - extra),
        target,
        cfg.block_rounding(target),
        OverflowPolicy::Infinity,
    )
}

fn add_rounded(s: &FpValue, c: &FpValue, out: Format, mode: Rounding) -> FpValue {
    let terms = [from_value(s), from_value(c)];
    if let Some(r) = special(&terms, out) {
        return r;
    }
    match (&terms[0], &terms[1]) {
        (Val::Zero(x), Val::Zero(y)) => FpValue::zero(out, *x && *y),
        (Val::Zero(_), Val::Num(d)) | (Val::Num(d), Val::Zero(_)) => quantize_with(
            &to_exact(&d.mantissa, d.exp),
            out,
            mode,
            OverflowPolicy::Infinity,
        ),
        (Val::Num(x), Val::Num(y)) => {
            let e = x.exp.min(y.exp);
            let m = (&x.mantissa << (x.exp - e) as usize) + (&y.mantissa << (y.exp - e) as usize);
            if m.is_zero() {
                FpValue::zero(out, false)
            } else {
                quantize_with(&to_exact(&m, e), out, mode, OverflowPolicy::Infinity)
            }
        }
        _ => unreachable!("specials handled above"),
    }
}

/// Index groups in evaluation order.
fn groups(k: usize, cfg: &TcConfig) -> Vec<Vec<usize>> {
    let n = cfg.nfma;
    if !cfg.interleaved {
        return (0..k.div_ceil(n))
            .map(|b| (b * n..k.min((b + 1) * n)).collect())
            .collect();
    }
    let mut out = Vec::new();
    for tile_start in (0..k).step_by(2 * n) {
        for parity in 0..2 {
            let g: Vec<usize> = (tile_start..k.min(tile_start + 2 * n))
                .filter(|i| ((i - tile_start) / 2) % 2 == parity)
                .collect();
            if !g.is_empty() {
                out.push(g);
            }
        }
    }
    out
}

/// Reference `d = sum(a[i] * b[i]) + c`.
pub fn inner_product(a: &[FpValue], b: &[FpValue], c: &FpValue, cfg: &TcConfig) -> Result<FpValue> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "vector lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| v.format() != cfg.in_format) || c.format() != cfg.out_format {
        return Err(Error::Contract(
            "operand formats do not match the model".into(),
        ));
    }
    let products: Vec<Val> = a.iter().zip(b).map(|(x, y)| product(x, y)).collect();
    let out = cfg.out_format;
    let cv = from_value(c);
    let blocks = groups(a.len(), cfg);
    if blocks.is_empty() {
        return Ok(round_block(&[cv], cfg, out));
    }
    let partial = if cfg.interleaved {
        Format::Binary32
    } else {
        out
    };
    let early = cfg.c_order == COrder::Early && !cfg.interleaved;
    let mut acc: Option<FpValue> = None;
    for (bi, idx) in blocks.iter().enumerate() {
        let mut terms: Vec<Val> = idx.iter().map(|&i| products[i].clone()).collect();
        match (&acc, early && bi == 0) {
            (Some(s), _) => terms.push(from_value(s)),
            (None, true) => terms.push(cv.clone()),
            (None, false) => {}
        }
        acc = Some(round_block(&terms, cfg, partial));
    }
    let s = acc.expect("at least one block");
    Ok(if early {
        s
    } else {
        let mode = if cfg.interleaved {
            Rounding::Rne
        } else {
            cfg.block_rounding(out)
        };
        add_rounded(&s, c, out, mode)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::quantize_f64;

    fn v(x: f64, f: Format) -> FpValue {
        quantize_f64(x, f, Rounding::Rne)
    }

    #[test]
    fn golden_v100_vectors() {
        let h = Format::Binary16;
        let cfg = TcConfig::new(h, Format::Binary32, 0, 4);
        let zero = FpValue::zero(Format::Binary32, false);
        let a = [
            v(1.5, h),
            v(2f64.powi(-12), h),
            v(2f64.powi(-12), h),
            v(0.0, h),
        ];
        let b = [
            v(1.5, h),
            v(2f64.powi(-11), h),
            v(2f64.powi(-11), h),
            v(0.0, h),
        ];
        let d = inner_product(&a, &b, &zero, &cfg).unwrap();
        assert_eq!(d.to_f64(), 2.25 + 2f64.powi(-22));
        let a2 = [v(1.0, h), a[1], a[2], a[3]];
        let b2 = [v(2.25, h), b[1], b[2], b[3]];
        assert_eq!(inner_product(&a2, &b2, &zero, &cfg).unwrap().to_f64(), 2.25);
    }

    #[test]
    fn interleaved_groups() {
        let cfg = TcConfig::new(Format::Fp8E4M3, Format::Binary32, 2, 4).with_interleave(true);
        assert_eq!(
            groups(10, &cfg),
            vec![vec![0, 1, 4, 5], vec![2, 3, 6, 7], vec![8, 9]]
        );
        let plain = TcConfig::new(Format::Binary16, Format::Binary32, 0, 4);
        assert_eq!(groups(6, &plain), vec![vec![0, 1, 2, 3], vec![4, 5]]);
    }

    #[test]
    fn zero_signs() {
        let h = Format::Binary16;
        let cfg = TcConfig::new(h, Format::Binary32, 0, 4);
        let nz = FpValue::zero(Format::Binary32, true);
        let d = inner_product(&[v(-0.0, h)], &[v(2.0, h)], &nz, &cfg).unwrap();
        assert!(d.is_zero() && d.is_sign_negative());
        let d = inner_product(&[v(0.0, h)], &[v(2.0, h)], &nz, &cfg).unwrap();
        assert!(d.is_zero() && !d.is_sign_negative());
    }
}
