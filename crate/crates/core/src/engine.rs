//! The block-FMA pipeline.
//!
//! Each block forms exact products whose significands are never
//! pre-normalized, aligns every term to the largest exponent inside a
//! `(2, f)` fixed-point window, truncates what falls below the window,
//! sums exactly, and normalizes and rounds once. Inner products longer than
//! one block chain blocks through the output (or binary32) format.

use num_bigint::{BigInt, Sign};

use crate::config::{COrder, TcConfig};
use crate::error::{Error, Result};
use crate::formats::{self, Class, Exact, Format, FpValue, OverflowPolicy, Rounding};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductClass {
    Zero,
    Finite,
    Infinite,
    Nan,
}

/// The unrounded product of two inputs.
///
/// For finite products `value = (-1)^neg * significand * 2^(exponent - fraction_bits)`
/// with `significand < 4 * 2^fraction_bits`; `exponent` is the sum of the
/// factors' effective exponents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactProduct {
    pub neg: bool,
    pub exponent: i32,
    pub significand: u64,
    pub fraction_bits: u32,
    pub class: ProductClass,
}

impl ExactProduct {
    pub fn to_f64(&self) -> f64 {
        let v = match self.class {
            ProductClass::Nan => return f64::NAN,
            ProductClass::Infinite => f64::INFINITY,
            ProductClass::Zero => 0.0,
            ProductClass::Finite => {
                self.significand as f64 * 2f64.powi(self.exponent - self.fraction_bits as i32)
            }
        };
        if self.neg {
            -v
        } else {
            v
        }
    }
}

pub fn exact_product(a: &FpValue, b: &FpValue) -> ExactProduct {
    let (da, db) = (a.decompose(), b.decompose());
    let neg = da.neg != db.neg;
    let fraction_bits = a.format().params().fraction_bits() + b.format().params().fraction_bits();
    let special = |class| ExactProduct {
        neg,
        exponent: 0,
        significand: 0,
        fraction_bits,
        class,
    };
    let inf = da.class == Class::Infinite || db.class == Class::Infinite;
    let zero = da.class == Class::Zero || db.class == Class::Zero;
    if da.class == Class::Nan || db.class == Class::Nan || (inf && zero) {
        return special(ProductClass::Nan);
    }
    if inf {
        return special(ProductClass::Infinite);
    }
    if zero {
        return special(ProductClass::Zero);
    }
    ExactProduct {
        neg,
        exponent: da.exponent + db.exponent,
        significand: da.significand * db.significand,
        fraction_bits,
        class: ProductClass::Finite,
    }
}

/// One block FMA: `products` plus an optional addend `c`, rounded into the
/// output format.
pub fn block_fma(
    products: &[ExactProduct],
    c: Option<&FpValue>,
    cfg: &TcConfig,
) -> Result<FpValue> {
    if products.len() > cfg.nfma {
        return Err(Error::Contract(format!(
            "{} products exceed the block size {}",
            products.len(),
            cfg.nfma
        )));
    }
    Ok(block(products, c, cfg, cfg.out_format))
}

#[derive(Clone, Copy)]
struct Term {
    neg: bool,
    exponent: i32,
    significand: u64,
    fraction_bits: u32,
}

fn block(
    products: &[ExactProduct],
    c: Option<&FpValue>,
    cfg: &TcConfig,
    target: Format,
) -> FpValue {
    let mut nan = false;
    let mut pos_inf = false;
    let mut neg_inf = false;
    let mut zeros = 0usize;
    let mut neg_zeros = 0usize;
    let mut terms: Vec<Term> = Vec::with_capacity(products.len() + 1);

    for p in products {
        match p.class {
            ProductClass::Nan => nan = true,
            ProductClass::Infinite if p.neg => neg_inf = true,
            ProductClass::Infinite => pos_inf = true,
            ProductClass::Zero => {
                zeros += 1;
                neg_zeros += p.neg as usize;
            }
            ProductClass::Finite => terms.push(Term {
                neg: p.neg,
                exponent: p.exponent,
                significand: p.significand,
                fraction_bits: p.fraction_bits,
            }),
        }
    }
    if let Some(c) = c {
        let d = c.decompose();
        match d.class {
            Class::Nan => nan = true,
            Class::Infinite if d.neg => neg_inf = true,
            Class::Infinite => pos_inf = true,
            Class::Zero => {
                zeros += 1;
                neg_zeros += d.neg as usize;
            }
            Class::Normal | Class::Subnormal => terms.push(Term {
                neg: d.neg,
                exponent: d.exponent,
                significand: d.significand,
                fraction_bits: c.format().params().fraction_bits(),
            }),
        }
    }

    if nan || (pos_inf && neg_inf) {
        return FpValue::nan(target);
    }
    if pos_inf || neg_inf {
        return FpValue::infinity(target, neg_inf);
    }
    if terms.is_empty() {
        return FpValue::zero(target, zeros > 0 && neg_zeros == zeros);
    }

    let f = cfg.fraction_bits();
    let e_max = terms.iter().map(|t| t.exponent).max().unwrap_or(0);
    let mut acc: i128 = 0;
    for t in &terms {
        // Position of the term's unit bit in window units of 2^(e_max - f).
        let shift = t.exponent - e_max + f - t.fraction_bits as i32;
        let (kept, dropped) = if shift >= 0 {
            ((t.significand as u128) << shift, false)
        } else if -shift >= 64 {
            (0, t.significand != 0)
        } else {
            let s = -shift as u32;
            (
                (t.significand >> s) as u128,
                t.significand & ((1u64 << s) - 1) != 0,
            )
        };
        let mag = if cfg.sticky {
            ((kept << 1) | dropped as u128) as i128
        } else {
            kept as i128
        };
        acc += if t.neg { -mag } else { mag };
    }

    if acc == 0 {
        return FpValue::zero(target, false);
    }
    let unit = e_max - f - cfg.sticky as i32;
    formats::round_parts(
        acc < 0,
        acc.unsigned_abs(),
        unit,
        false,
        target,
        cfg.block_rounding(target),
        OverflowPolicy::Infinity,
    )
}

/// `s + c` computed exactly and rounded once into `out`.
pub(crate) fn rounded_sum(s: &FpValue, c: &FpValue, out: Format, mode: Rounding) -> FpValue {
    let (ds, dc) = (s.decompose(), c.decompose());
    if ds.class == Class::Nan || dc.class == Class::Nan {
        return FpValue::nan(out);
    }
    match (ds.class == Class::Infinite, dc.class == Class::Infinite) {
        (true, true) if ds.neg != dc.neg => return FpValue::nan(out),
        (true, _) => return FpValue::infinity(out, ds.neg),
        (_, true) => return FpValue::infinity(out, dc.neg),
        _ => {}
    }
    if ds.class == Class::Zero && dc.class == Class::Zero {
        return FpValue::zero(out, ds.neg && dc.neg);
    }
    let lsb = |v: &FpValue, e: i32| e - v.format().params().fraction_bits() as i32;
    let (es, ec) = (lsb(s, ds.exponent), lsb(c, dc.exponent));
    let base = es.min(ec);
    let signed = |neg: bool, sig: u64, e: i32| {
        let m = BigInt::from(sig) << (e - base) as u32;
        if neg {
            -m
        } else {
            m
        }
    };
    let sum = signed(ds.neg, ds.significand, es) + signed(dc.neg, dc.significand, ec);
    if sum.sign() == Sign::NoSign {
        return FpValue::zero(out, false);
    }
    let exact = Exact::Finite {
        neg: sum.sign() == Sign::Minus,
        magnitude: sum.magnitude().clone(),
        exponent: base as i64,
    };
    formats::quantize_with(&exact, out, mode, OverflowPolicy::Infinity)
}

fn check_inputs(a: &[FpValue], b: &[FpValue], c: &FpValue, cfg: &TcConfig) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "vector lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if let Some(v) = a.iter().chain(b).find(|v| v.format() != cfg.in_format) {
        return Err(Error::Contract(format!(
            "input element in {} but the model expects {}",
            v.format(),
            cfg.in_format
        )));
    }
    if c.format() != cfg.out_format {
        return Err(Error::Contract(format!(
            "addend in {} but the model outputs {}",
            c.format(),
            cfg.out_format
        )));
    }
    Ok(())
}

/// `d = sum(a[i] * b[i]) + c` on the modelled unit.
pub fn inner_product(a: &[FpValue], b: &[FpValue], c: &FpValue, cfg: &TcConfig) -> Result<FpValue> {
    check_inputs(a, b, c, cfg)?;
    let products: Vec<ExactProduct> = a.iter().zip(b).map(|(x, y)| exact_product(x, y)).collect();
    Ok(accumulate(&products, c, cfg))
}

/// Chains blocks over already formed products.
pub fn accumulate(products: &[ExactProduct], c: &FpValue, cfg: &TcConfig) -> FpValue {
    let out = cfg.out_format;
    if products.is_empty() {
        return block(&[], Some(c), cfg, out);
    }
    if cfg.interleaved {
        return accumulate_interleaved(products, c, cfg);
    }
    match cfg.c_order {
        COrder::Early => products
            .chunks(cfg.nfma)
            .fold(*c, |acc, chunk| block(chunk, Some(&acc), cfg, out)),
        COrder::Late => {
            let mut chunks = products.chunks(cfg.nfma);
            let first = block(chunks.next().unwrap_or(&[]), None, cfg, out);
            let s = chunks.fold(first, |acc, chunk| block(chunk, Some(&acc), cfg, out));
            rounded_sum(&s, c, out, cfg.late_rounding())
        }
    }
}

fn accumulate_interleaved(products: &[ExactProduct], c: &FpValue, cfg: &TcConfig) -> FpValue {
    let partial = cfg.partial_format();
    let mut s: Option<FpValue> = None;
    let mut group = Vec::with_capacity(cfg.nfma);
    for tile in products.chunks(2 * cfg.nfma) {
        for parity in [0, 1] {
            group.clear();
            group.extend(
                tile.iter()
                    .enumerate()
                    .filter(|(i, _)| (i / 2) % 2 == parity)
                    .map(|(_, p)| *p),
            );
            for chunk in group.chunks(cfg.nfma) {
                s = Some(block(chunk, s.as_ref(), cfg, partial));
            }
        }
    }
    match s {
        Some(s) => rounded_sum(&s, c, cfg.out_format, cfg.late_rounding()),
        None => *c,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::quantize_f64;

    fn v(x: f64, f: Format) -> FpValue {
        let q = quantize_f64(x, f, Rounding::Rne);
        assert_eq!(q.to_f64(), x, "{x} not representable in {f}");
        q
    }

    fn pow2(e: i32) -> f64 {
        2f64.powi(e)
    }

    /// A product of value 2^e formed from two normal halves.
    fn p2(e: i32, f: Format) -> ExactProduct {
        let hi = e.div_euclid(2);
        exact_product(&v(pow2(hi), f), &v(pow2(e - hi), f))
    }

    fn v100() -> TcConfig {
        TcConfig::new(Format::Binary16, Format::Binary32, 0, 4)
    }

    #[test]
    fn denormalized_products() {
        let h = Format::Binary16;
        let p = exact_product(&v(1.5, h), &v(1.5, h));
        assert_eq!((p.exponent, p.significand >> 18), (0, 0b1001));
        assert_eq!(p.to_f64(), 2.25);
        let q = exact_product(&v(1.0, h), &v(2.25, h));
        assert_eq!((q.exponent, q.significand >> 18), (1, 0b0100));
        assert_eq!(q.to_f64(), 2.25);
        let inf = FpValue::infinity(h, false);
        assert_eq!(exact_product(&v(0.0, h), &inf).class, ProductClass::Nan);
        let ni = exact_product(&v(-2.0, h), &inf);
        assert_eq!((ni.class, ni.neg), (ProductClass::Infinite, true));
    }

    #[test]
    fn v100_golden_vectors() {
        let h = Format::Binary16;
        let s = Format::Binary32;
        let cfg = v100();
        let zero = FpValue::zero(s, false);
        let first = [
            exact_product(&v(1.5, h), &v(1.5, h)),
            p2(-23, h),
            p2(-23, h),
        ];
        assert_eq!(
            block_fma(&first, Some(&zero), &cfg).unwrap().to_f64(),
            2.25 + pow2(-22)
        );
        let second = [
            exact_product(&v(1.0, h), &v(2.25, h)),
            p2(-23, h),
            p2(-23, h),
        ];
        assert_eq!(
            block_fma(&second, Some(&zero), &cfg).unwrap().to_f64(),
            2.25
        );
        let with_c = [
            exact_product(&v(0.0, h), &v(1.0, h)),
            p2(-23, h),
            p2(-23, h),
        ];
        let c = v(2.25, s);
        assert_eq!(block_fma(&with_c, Some(&c), &cfg).unwrap().to_f64(), 2.25);
    }

    #[test]
    fn a100_and_h100_golden_vectors() {
        let h = Format::Binary16;
        let zero = FpValue::zero(Format::Binary32, false);
        let a100 = TcConfig::new(h, Format::Binary32, 1, 8);
        let ps = [
            exact_product(&v(1.5, h), &v(1.5, h)),
            p2(-23, h),
            p2(-24, h),
            p2(-24, h),
        ];
        assert_eq!(
            block_fma(&ps, Some(&zero), &a100).unwrap().to_f64(),
            2.25 + pow2(-22)
        );

        let h100 = TcConfig::new(h, Format::Binary32, 2, 16);
        let odd = exact_product(&v(1.0 + 0.5 + 0.25, h), &v(pow2(-23), h));
        assert_eq!(odd.to_f64(), pow2(-23) + pow2(-24) + pow2(-25));
        let ps = [exact_product(&v(1.5, h), &v(1.5, h)), odd, p2(-25, h)];
        assert_eq!(
            block_fma(&ps, Some(&zero), &h100).unwrap().to_f64(),
            2.25 + pow2(-22)
        );
        // Without the denormalized anchor the probes fall off the window.
        let ps = [exact_product(&v(1.0, h), &v(2.25, h)), odd, p2(-25, h)];
        assert_eq!(block_fma(&ps, Some(&zero), &h100).unwrap().to_f64(), 2.25);
    }

    #[test]
    fn oversized_block_is_rejected() {
        let h = Format::Binary16;
        let ps = vec![p2(0, h); 5];
        assert!(matches!(
            block_fma(&ps, None, &v100()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn empty_block_reproduces_addend() {
        let c = v(1.0 + pow2(-20), Format::Binary32);
        assert_eq!(block_fma(&[], Some(&c), &v100()).unwrap(), c);
        assert_eq!(inner_product(&[], &[], &c, &v100()).unwrap(), c);
    }

    #[test]
    fn l40s_fp8_vectors() {
        for f8 in [Format::Fp8E4M3, Format::Fp8E5M2] {
            let cfg = TcConfig::new(f8, Format::Binary32, -10, 16);
            let mut a = vec![v(0.0, f8); 16];
            let mut b = vec![v(0.0, f8); 16];
            a[0] = v(1.0, f8);
            b[0] = v(1.0, f8);
            for i in [1, 2] {
                a[i] = v(pow2(-6), f8);
                b[i] = v(pow2(-7), f8);
            }
            let zero = FpValue::zero(Format::Binary32, false);
            assert_eq!(
                inner_product(&a, &b, &zero, &cfg).unwrap().to_f64(),
                1.0 + pow2(-12)
            );

            let mut a = vec![v(0.0, f8); 16];
            let mut b = vec![v(0.0, f8); 16];
            for i in [0, 1] {
                a[i] = v(pow2(-7), f8);
                b[i] = v(pow2(-7), f8);
            }
            let one = v(1.0, Format::Binary32);
            assert_eq!(inner_product(&a, &b, &one, &cfg).unwrap().to_f64(), 1.0);
        }
    }

    #[test]
    fn h100_fp8_interleave_membership() {
        let f8 = Format::Fp8E5M2;
        let cfg = TcConfig::new(f8, Format::Binary32, 2, 16).with_interleave(true);
        let zero = FpValue::zero(Format::Binary32, false);
        for j in 3..=32usize {
            let mut a = vec![v(0.0, f8); 32];
            let mut b = vec![v(0.0, f8); 32];
            a[0] = v(1.0, f8);
            b[0] = v(1.0, f8);
            for idx in [1, j - 1] {
                a[idx] = v(pow2(-12), f8);
                b[idx] = v(pow2(-12), f8);
            }
            let d = inner_product(&a, &b, &zero, &cfg).unwrap().to_f64();
            let same_group = ((j - 1) / 2) % 2 == 0;
            let expect = if same_group { 1.0 + pow2(-23) } else { 1.0 };
            assert_eq!(d, expect, "position {j}");
        }
    }

    #[test]
    fn specials() {
        let h = Format::Binary16;
        let s = Format::Binary32;
        let cfg = v100();
        let inf = FpValue::infinity(h, false);
        let one = v(1.0, h);
        let zero = FpValue::zero(s, false);
        let d = inner_product(&[inf, inf.neg()], &[one, one], &zero, &cfg).unwrap();
        assert!(d.is_nan());
        let d = inner_product(&[inf, inf], &[one, one], &zero, &cfg).unwrap();
        assert!(d.is_infinite() && !d.is_sign_negative());
        let d = inner_product(&[inf.neg()], &[inf], &zero, &cfg).unwrap();
        assert!(d.is_infinite() && d.is_sign_negative());
        let d = inner_product(&[one], &[one], &FpValue::nan(s), &cfg).unwrap();
        assert!(d.is_nan());
        let d = inner_product(&[FpValue::nan(h), inf], &[one, one], &zero, &cfg).unwrap();
        assert!(d.is_nan());
        // Infinity produced in one block and carried through the chain.
        let big = v(65504.0, h);
        let bf = Format::Bfloat16;
        let cfg_bf = TcConfig::new(bf, s, 1, 8);
        let big_bf = FpValue::max_finite(bf, false);
        let d = inner_product(&[big_bf; 9], &[big_bf; 9], &zero, &cfg_bf).unwrap();
        assert!(d.is_infinite());
        let fp16_out = TcConfig::new(h, h, 0, 4);
        let d = inner_product(&[big], &[big], &FpValue::zero(h, false), &fp16_out).unwrap();
        assert!(d.is_infinite());
    }

    #[test]
    fn signed_zero_rules() {
        let h = Format::Binary16;
        let s = Format::Binary32;
        let cfg = v100();
        let nz = FpValue::zero(s, true);
        let d = inner_product(&[v(-0.0, h)], &[v(1.0, h)], &nz, &cfg).unwrap();
        assert!(d.is_zero() && d.is_sign_negative());
        let d =
            inner_product(&[v(1.0, h), v(-1.0, h)], &[v(1.0, h), v(1.0, h)], &nz, &cfg).unwrap();
        assert!(d.is_zero() && !d.is_sign_negative());
    }

    #[test]
    fn length_and_format_mismatch() {
        let h = Format::Binary16;
        let zero = FpValue::zero(Format::Binary32, false);
        assert!(inner_product(&[v(1.0, h)], &[], &zero, &v100()).is_err());
        let bf = v(1.0, Format::Bfloat16);
        assert!(inner_product(&[bf], &[bf], &zero, &v100()).is_err());
    }

    #[test]
    fn late_c_rounds_once() {
        let h = Format::Binary16;
        let s = Format::Binary32;
        let cfg = TcConfig::new(h, s, 1, 8)
            .with_c_order(COrder::Late)
            .with_rounding(Rounding::Rne);
        let one = v(1.0, s);
        let probes = [p2(-25, h), p2(-25, h)];
        // 1 + 2^-24 is a tie and stays on the even neighbour.
        assert_eq!(accumulate(&probes, &one, &cfg).to_f64(), 1.0);
        let four = [p2(-25, h); 4];
        assert_eq!(accumulate(&four, &one, &cfg).to_f64(), 1.0 + pow2(-23));
        let early = cfg.with_c_order(COrder::Early);
        assert_eq!(accumulate(&four, &one, &early).to_f64(), 1.0);
    }

    #[test]
    fn sticky_bit_reaches_rounding() {
        let h = Format::Binary16;
        let s = Format::Binary32;
        let base = TcConfig::new(h, s, 0, 4).with_rounding(Rounding::Ru);
        let zero = FpValue::zero(s, false);
        let ps = [p2(0, h), p2(-30, h)];
        assert_eq!(block_fma(&ps, Some(&zero), &base).unwrap().to_f64(), 1.0);
        let sticky = base.with_sticky(true);
        assert_eq!(
            block_fma(&ps, Some(&zero), &sticky).unwrap().to_f64(),
            1.0 + pow2(-23)
        );
    }
}
