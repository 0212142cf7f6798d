//! Hexadecimal floating-point literals (`0x1.8p+0`, `-0x1p-24`, `inf`, `nan`).

use num_bigint::BigUint;

use super::{quantize, Class, Exact, Format, FpValue, Rounding};
use crate::error::{Error, Result};

/// Parses a hexadecimal literal and rounds it into `format` with RNE.
pub fn parse_hexfloat(text: &str, format: Format) -> Result<FpValue> {
    Ok(quantize(&parse_exact(text)?, format, Rounding::Rne))
}

/// Parses a literal into an exact value.
pub(crate) fn parse_exact(text: &str) -> Result<Exact> {
    let bytes = text.as_bytes();
    let mut pos = 0;
    let mut neg = false;
    match bytes.first() {
        Some(b'-') => {
            neg = true;
            pos = 1;
        }
        Some(b'+') => pos = 1,
        None => return Err(Error::parse(0, "empty literal")),
        _ => {}
    }
    let rest = &text[pos..];
    let lower = rest.to_ascii_lowercase();
    match lower.as_str() {
        "inf" | "infinity" => return Ok(Exact::Infinity { neg }),
        "nan" => return Ok(Exact::Nan),
        "0" => {
            return Ok(Exact::Finite {
                neg,
                magnitude: BigUint::default(),
                exponent: 0,
            })
        }
        _ => {}
    }
    if !(lower.starts_with("0x")) {
        return Err(Error::parse(pos, "expected `0x` prefix"));
    }
    pos += 2;

    let mut magnitude = BigUint::default();
    let mut exponent: i64 = 0;
    let mut digits = 0usize;
    let mut seen_point = false;
    while pos < bytes.len() {
        let c = bytes[pos];
        if c == b'.' {
            if seen_point {
                return Err(Error::parse(pos, "second radix point"));
            }
            seen_point = true;
        } else if let Some(d) = (c as char).to_digit(16) {
            magnitude = (magnitude << 4u32) + BigUint::from(d);
            digits += 1;
            if seen_point {
                exponent -= 4;
            }
        } else {
            break;
        }
        pos += 1;
    }
    if digits == 0 {
        return Err(Error::parse(pos, "expected hexadecimal digits"));
    }
    if pos < bytes.len() {
        if bytes[pos] != b'p' && bytes[pos] != b'P' {
            return Err(Error::parse(
                pos,
                format!("unexpected character `{}`", bytes[pos] as char),
            ));
        }
        pos += 1;
        let start = pos;
        if pos < bytes.len() && (bytes[pos] == b'+' || bytes[pos] == b'-') {
            pos += 1;
        }
        let digits_start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == digits_start {
            return Err(Error::parse(pos, "expected exponent digits"));
        }
        if pos < bytes.len() {
            return Err(Error::parse(pos, "trailing characters"));
        }
        let e: i64 = text[start..pos]
            .parse()
            .map_err(|_| Error::parse(start, "exponent out of range"))?;
        if e.abs() > 1 << 40 {
            return Err(Error::parse(start, "exponent out of range"));
        }
        exponent += e;
    }
    Ok(Exact::Finite {
        neg,
        magnitude,
        exponent,
    })
}

/// Renders the canonical form: `0x1.<fraction>p<exp>` for every non-zero
/// finite value (subnormals included), trailing zero digits trimmed.
pub fn render_hexfloat(v: &FpValue) -> String {
    let d = v.decompose();
    let sign = if d.neg { "-" } else { "" };
    match d.class {
        Class::Nan => "nan".to_string(),
        Class::Infinite => format!("{sign}inf"),
        Class::Zero => format!("{sign}0x0p+0"),
        Class::Normal | Class::Subnormal => {
            let frac_bits = v.format().params().fraction_bits();
            // Normalise so the leading one sits at bit `frac_bits`.
            let lead = 63 - d.significand.leading_zeros();
            let shift = frac_bits - lead;
            let sig = d.significand << shift;
            let exponent = d.exponent - shift as i32;
            let fraction = sig & ((1u64 << frac_bits) - 1);
            let mut out = format!("{sign}0x1");
            if fraction != 0 {
                let nibbles = frac_bits.div_ceil(4);
                let padded = fraction << (nibbles * 4 - frac_bits);
                let hex = format!("{:0width$x}", padded, width = nibbles as usize);
                out.push('.');
                out.push_str(hex.trim_end_matches('0'));
            }
            out.push_str(&format!("p{exponent:+}"));
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::quantize_f64;

    #[test]
    fn literal_examples() {
        assert_eq!(
            parse_hexfloat("0x1.8p+0", Format::Binary16)
                .unwrap()
                .to_f64(),
            1.5
        );
        assert_eq!(
            parse_hexfloat("0x1p-24", Format::Binary32)
                .unwrap()
                .to_f64(),
            2f64.powi(-24)
        );
        let v = parse_hexfloat("0x1.004p+1", Format::Binary32).unwrap();
        assert_eq!(render_hexfloat(&v), "0x1.004p+1");
        assert!(parse_hexfloat("nan", Format::Binary16).unwrap().is_nan());
        assert!(parse_hexfloat("-inf", Format::Binary16)
            .unwrap()
            .is_sign_negative());
        let z = parse_hexfloat("-0", Format::Binary16).unwrap();
        assert!(z.is_zero() && z.is_sign_negative());
        assert_eq!(render_hexfloat(&z), "-0x0p+0");
        assert_eq!(
            parse_hexfloat("-0x0p+0", Format::Binary16).unwrap().bits(),
            z.bits()
        );
    }

    #[test]
    fn golden_render() {
        let x = 2.25 + 2f64.powi(-22);
        assert_eq!(
            render_hexfloat(&quantize_f64(x, Format::Binary32, Rounding::Rne)),
            "0x1.200002p+1"
        );
        let sub = FpValue::from_bits(Format::Binary16, 3).unwrap();
        assert_eq!(render_hexfloat(&sub), "0x1.8p-23");
    }

    #[test]
    fn rounds_inexact_literals() {
        // 1 + 2^-11 is a tie in binary16 and goes to the even neighbour.
        assert_eq!(
            parse_hexfloat("0x1.002p+0", Format::Binary16)
                .unwrap()
                .to_f64(),
            1.0
        );
        assert_eq!(
            parse_hexfloat("0x1.0021p+0", Format::Binary16)
                .unwrap()
                .to_f64(),
            1.0 + 2f64.powi(-10)
        );
    }

    #[test]
    fn malformed_literals_report_offsets() {
        let cases = [
            ("", 0),
            ("1.5", 0),
            ("0x", 2),
            ("0x1.8q", 5),
            ("0x1.8p", 6),
            ("0x1..8p0", 4),
            ("-0x1p+1z", 7),
        ];
        for (text, offset) in cases {
            match parse_hexfloat(text, Format::Binary32) {
                Err(Error::Parse { offset: got, .. }) => assert_eq!(got, offset, "{text:?}"),
                other => panic!("{text:?} parsed as {other:?}"),
            }
        }
    }

    #[test]
    fn round_trip_random_binary32_patterns() {
        use rand_chacha::rand_core::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..10_000 {
            let v = FpValue::from_bits(Format::Binary32, rng.next_u32()).unwrap();
            let text = render_hexfloat(&v);
            let back = parse_hexfloat(&text, Format::Binary32).unwrap();
            assert!(back.same_as(&v), "{text}");
            assert_eq!(render_hexfloat(&back), text);
        }
    }
}
