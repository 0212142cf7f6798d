//! Floating-point formats, bit-level encode/decode and correctly rounded
//! conversion into any of the supported formats.
//!
//! Every value handled by the emulator is a dyadic rational, so all of
//! the conversions here are exact up to the single rounding step.

mod hexfloat;

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;

use crate::error::{Error, Result};

pub use hexfloat::{parse_hexfloat, render_hexfloat};

/// How NaN (and infinity) are encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NanStyle {
    /// The all-ones exponent is reserved: zero fraction is infinity, anything
    /// else is NaN.
    IeeeLike,
    /// No infinities; only the all-ones exponent and fraction pattern is NaN
    /// (fp8-E4M3).
    SingleEncoding,
}

/// Parameters of one floating-point encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FpFormat {
    pub name: &'static str,
    /// Significand bits including the implicit bit.
    pub precision: u32,
    pub exponent_bits: u32,
    pub bias: i32,
    /// Minimum normal exponent.
    pub emin: i32,
    /// Maximum normal exponent.
    pub emax: i32,
    pub has_infinity: bool,
    pub nan_style: NanStyle,
    /// Zero bits below the fraction in the storage container (tf19 is kept
    /// in a 32-bit container).
    pub container_pad: u32,
}

impl FpFormat {
    pub const fn fraction_bits(&self) -> u32 {
        self.precision - 1
    }

    /// Storage width in bits, container padding included.
    pub const fn width(&self) -> u32 {
        1 + self.exponent_bits + self.precision - 1 + self.container_pad
    }

    /// Largest integer significand of a finite value.
    pub const fn max_significand(&self) -> u64 {
        match self.nan_style {
            NanStyle::IeeeLike => (1 << self.precision) - 1,
            NanStyle::SingleEncoding => (1 << self.precision) - 2,
        }
    }

    /// Exponent of the unit in the last place of the smallest subnormal.
    pub const fn min_quantum_exponent(&self) -> i32 {
        self.emin - (self.precision as i32 - 1)
    }

    pub fn max_finite(&self) -> f64 {
        self.max_significand() as f64 * 2f64.powi(self.emax - (self.precision as i32 - 1))
    }

    pub fn min_normal(&self) -> f64 {
        2f64.powi(self.emin)
    }

    pub fn min_subnormal(&self) -> f64 {
        2f64.powi(self.min_quantum_exponent())
    }
}

/// The formats understood by the emulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Format {
    Fp8E4M3,
    Fp8E5M2,
    Binary16,
    Bfloat16,
    Tf19,
    Binary32,
}

const FP8_E4M3: FpFormat = FpFormat {
    name: "fp8-e4m3",
    precision: 4,
    exponent_bits: 4,
    bias: 7,
    emin: -6,
    emax: 8,
    has_infinity: false,
    nan_style: NanStyle::SingleEncoding,
    container_pad: 0,
};

const FP8_E5M2: FpFormat = FpFormat {
    name: "fp8-e5m2",
    precision: 3,
    exponent_bits: 5,
    bias: 15,
    emin: -14,
    emax: 15,
    has_infinity: true,
    nan_style: NanStyle::IeeeLike,
    container_pad: 0,
};

const BINARY16: FpFormat = FpFormat {
    name: "binary16",
    precision: 11,
    exponent_bits: 5,
    bias: 15,
    emin: -14,
    emax: 15,
    has_infinity: true,
    nan_style: NanStyle::IeeeLike,
    container_pad: 0,
};

const BFLOAT16: FpFormat = FpFormat {
    name: "bfloat16",
    precision: 8,
    exponent_bits: 8,
    bias: 127,
    emin: -126,
    emax: 127,
    has_infinity: true,
    nan_style: NanStyle::IeeeLike,
    container_pad: 0,
};

const TF19: FpFormat = FpFormat {
    name: "tf19",
    precision: 11,
    exponent_bits: 8,
    bias: 127,
    emin: -126,
    emax: 127,
    has_infinity: true,
    nan_style: NanStyle::IeeeLike,
    container_pad: 13,
};

const BINARY32: FpFormat = FpFormat {
    name: "binary32",
    precision: 24,
    exponent_bits: 8,
    bias: 127,
    emin: -126,
    emax: 127,
    has_infinity: true,
    nan_style: NanStyle::IeeeLike,
    container_pad: 0,
};

impl Format {
    pub const ALL: [Format; 6] = [
        Format::Fp8E4M3,
        Format::Fp8E5M2,
        Format::Binary16,
        Format::Bfloat16,
        Format::Tf19,
        Format::Binary32,
    ];

    pub const fn params(self) -> &'static FpFormat {
        match self {
            Format::Fp8E4M3 => &FP8_E4M3,
            Format::Fp8E5M2 => &FP8_E5M2,
            Format::Binary16 => &BINARY16,
            Format::Bfloat16 => &BFLOAT16,
            Format::Tf19 => &TF19,
            Format::Binary32 => &BINARY32,
        }
    }

    pub const fn name(self) -> &'static str {
        self.params().name
    }

    pub const fn precision(self) -> u32 {
        self.params().precision
    }

    pub fn by_name(name: &str) -> Result<Format> {
        let lower = name.trim().to_ascii_lowercase();
        let found = match lower.as_str() {
            "fp8-e4m3" | "e4m3" => Format::Fp8E4M3,
            "fp8-e5m2" | "e5m2" => Format::Fp8E5M2,
            "binary16" | "fp16" | "half" => Format::Binary16,
            "bfloat16" | "bf16" => Format::Bfloat16,
            "tf19" | "tf32" => Format::Tf19,
            "binary32" | "fp32" | "single" => Format::Binary32,
            _ => return Err(Error::UnknownFormat(name.to_string())),
        };
        Ok(found)
    }

    pub fn is_fp8(self) -> bool {
        matches!(self, Format::Fp8E4M3 | Format::Fp8E5M2)
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Format::by_name(s)
    }
}

/// IEEE 754 rounding-direction attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rounding {
    /// Round to nearest, ties to even.
    Rne,
    /// Toward zero (truncation).
    Rz,
    /// Toward +infinity.
    Ru,
    /// Toward -infinity.
    Rd,
}

impl Rounding {
    pub const ALL: [Rounding; 4] = [Rounding::Rne, Rounding::Rz, Rounding::Ru, Rounding::Rd];

    pub fn name(self) -> &'static str {
        match self {
            Rounding::Rne => "rne",
            Rounding::Rz => "rz",
            Rounding::Ru => "ru",
            Rounding::Rd => "rd",
        }
    }
}

impl fmt::Display for Rounding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Rounding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rne" | "rn" => Ok(Rounding::Rne),
            "rz" | "trunc" => Ok(Rounding::Rz),
            "ru" => Ok(Rounding::Ru),
            "rd" => Ok(Rounding::Rd),
            other => Err(Error::Config(format!("unknown rounding mode `{other}`"))),
        }
    }
}

/// What to produce when a rounded result exceeds the largest finite value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverflowPolicy {
    /// IEEE 754: infinity or the largest finite value depending on the
    /// rounding direction.
    Ieee,
    /// Always infinity (NaN for formats without infinities).
    Infinity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Class {
    Zero,
    Subnormal,
    Normal,
    Infinite,
    Nan,
}

/// A sign/exponent/significand view of a value.
///
/// For finite values `value = (-1)^neg * significand * 2^(exponent - p + 1)`
/// where `exponent` is the effective exponent (`emin` for subnormals).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decomposed {
    pub neg: bool,
    pub exponent: i32,
    pub significand: u64,
    pub class: Class,
}

impl Decomposed {
    pub fn is_finite(&self) -> bool {
        !matches!(self.class, Class::Infinite | Class::Nan)
    }
}

/// An encoded value of one of the supported formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FpValue {
    format: Format,
    bits: u32,
}

impl FpValue {
    pub fn from_bits(format: Format, bits: u32) -> Result<FpValue> {
        let p = format.params();
        let width = p.width();
        if width < 32 && bits >> width != 0 {
            return Err(Error::Contract(format!(
                "bit pattern {bits:#x} wider than {width} bits for {format}"
            )));
        }
        if p.container_pad > 0 && bits & ((1 << p.container_pad) - 1) != 0 {
            return Err(Error::Contract(format!(
                "bit pattern {bits:#x} has non-zero padding for {format}"
            )));
        }
        Ok(FpValue { format, bits })
    }

    pub const fn format(&self) -> Format {
        self.format
    }

    pub const fn bits(&self) -> u32 {
        self.bits
    }

    pub fn zero(format: Format, neg: bool) -> FpValue {
        let p = format.params();
        FpValue {
            format,
            bits: (neg as u32) << (p.width() - 1),
        }
    }

    pub fn one(format: Format) -> FpValue {
        let p = format.params();
        encode(
            format,
            false,
            1 << p.fraction_bits(),
            -(p.fraction_bits() as i32),
        )
    }

    pub fn infinity(format: Format, neg: bool) -> FpValue {
        let p = format.params();
        if !p.has_infinity {
            return FpValue::nan(format);
        }
        let exp_field = (1u32 << p.exponent_bits) - 1;
        let bits = ((neg as u32) << (p.width() - 1))
            | (exp_field << (p.fraction_bits() + p.container_pad));
        FpValue { format, bits }
    }

    /// The canonical NaN.
    pub fn nan(format: Format) -> FpValue {
        let p = format.params();
        let exp_field = (1u32 << p.exponent_bits) - 1;
        let frac = match p.nan_style {
            NanStyle::IeeeLike => 1u32 << (p.fraction_bits() - 1),
            NanStyle::SingleEncoding => (1u32 << p.fraction_bits()) - 1,
        };
        let bits = ((exp_field << p.fraction_bits()) | frac) << p.container_pad;
        FpValue { format, bits }
    }

    pub fn max_finite(format: Format, neg: bool) -> FpValue {
        let p = format.params();
        encode(
            format,
            neg,
            p.max_significand(),
            p.emax - p.fraction_bits() as i32,
        )
    }

    fn fields(&self) -> (bool, u32, u32) {
        let p = self.format.params();
        let raw = self.bits >> p.container_pad;
        let frac_bits = p.fraction_bits();
        let frac = raw & ((1 << frac_bits) - 1);
        let exp = (raw >> frac_bits) & ((1 << p.exponent_bits) - 1);
        let neg = (raw >> (frac_bits + p.exponent_bits)) & 1 == 1;
        (neg, exp, frac)
    }

    pub fn class(&self) -> Class {
        self.decompose().class
    }

    pub fn decompose(&self) -> Decomposed {
        let p = self.format.params();
        let (neg, exp, frac) = self.fields();
        let exp_all_ones = exp == (1 << p.exponent_bits) - 1;
        let frac_all_ones = frac == (1 << p.fraction_bits()) - 1;
        let special = match p.nan_style {
            NanStyle::IeeeLike if exp_all_ones => Some(if frac == 0 {
                Class::Infinite
            } else {
                Class::Nan
            }),
            NanStyle::SingleEncoding if exp_all_ones && frac_all_ones => Some(Class::Nan),
            _ => None,
        };
        if let Some(class) = special {
            return Decomposed {
                neg,
                exponent: 0,
                significand: 0,
                class,
            };
        }
        if exp == 0 {
            Decomposed {
                neg,
                exponent: p.emin,
                significand: frac as u64,
                class: if frac == 0 {
                    Class::Zero
                } else {
                    Class::Subnormal
                },
            }
        } else {
            Decomposed {
                neg,
                exponent: exp as i32 - p.bias,
                significand: (frac as u64) | (1 << p.fraction_bits()),
                class: Class::Normal,
            }
        }
    }

    pub fn is_nan(&self) -> bool {
        self.class() == Class::Nan
    }

    pub fn is_infinite(&self) -> bool {
        self.class() == Class::Infinite
    }

    pub fn is_zero(&self) -> bool {
        self.class() == Class::Zero
    }

    pub fn is_finite(&self) -> bool {
        self.decompose().is_finite()
    }

    pub fn is_sign_negative(&self) -> bool {
        self.fields().0
    }

    pub fn neg(&self) -> FpValue {
        let p = self.format.params();
        FpValue {
            format: self.format,
            bits: self.bits ^ (1 << (p.width() - 1)),
        }
    }

    /// Exact conversion to binary64 (every supported format embeds in it).
    pub fn to_f64(&self) -> f64 {
        let d = self.decompose();
        let v = match d.class {
            Class::Nan => return f64::NAN,
            Class::Infinite => f64::INFINITY,
            Class::Zero => 0.0,
            _ => {
                let frac = self.format.params().fraction_bits() as i32;
                d.significand as f64 * 2f64.powi(d.exponent - frac)
            }
        };
        if d.neg {
            -v
        } else {
            v
        }
    }

    pub fn from_f64(x: f64, format: Format, mode: Rounding) -> FpValue {
        quantize_f64(x, format, mode)
    }

    /// Bitwise identity, except that all NaNs compare equal.
    pub fn same_as(&self, other: &FpValue) -> bool {
        if self.is_nan() || other.is_nan() {
            self.is_nan() && other.is_nan()
        } else {
            self.bits == other.bits && self.format == other.format
        }
    }
}

impl fmt::Display for FpValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_hexfloat(self))
    }
}

/// Packs a finite value `(-1)^neg * significand * 2^quantum` that is known to
/// be representable (significand < 2^p, quantum in range).
fn encode(format: Format, neg: bool, significand: u64, quantum: i32) -> FpValue {
    let p = format.params();
    let frac_bits = p.fraction_bits();
    let sign = (neg as u32) << (p.exponent_bits + frac_bits);
    let raw = if significand == 0 {
        sign
    } else if significand < 1 << frac_bits {
        debug_assert_eq!(quantum, p.min_quantum_exponent());
        sign | significand as u32
    } else {
        let biased = quantum + frac_bits as i32 + p.bias;
        debug_assert!(biased >= 1 && biased < (1 << p.exponent_bits));
        sign | ((biased as u32) << frac_bits) | (significand as u32 & ((1 << frac_bits) - 1))
    };
    FpValue {
        format,
        bits: raw << p.container_pad,
    }
}

/// An exact real argument for [`quantize`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Exact {
    /// `(-1)^neg * magnitude * 2^exponent`.
    Finite {
        neg: bool,
        magnitude: BigUint,
        exponent: i64,
    },
    Infinity {
        neg: bool,
    },
    Nan,
}

/// Correctly rounds an exact value into `format`.
pub fn quantize(x: &Exact, format: Format, mode: Rounding) -> FpValue {
    quantize_with(x, format, mode, OverflowPolicy::Ieee)
}

pub fn quantize_with(
    x: &Exact,
    format: Format,
    mode: Rounding,
    overflow: OverflowPolicy,
) -> FpValue {
    match x {
        Exact::Nan => FpValue::nan(format),
        Exact::Infinity { neg } => FpValue::infinity(format, *neg),
        Exact::Finite {
            neg,
            magnitude,
            exponent,
        } => {
            let bits = magnitude.bits();
            if bits == 0 {
                return FpValue::zero(format, *neg);
            }
            // Keep 120 significant bits; anything below only matters as sticky.
            let (mag, exp, sticky) = if bits > 120 {
                let drop = bits - 120;
                let kept: BigUint = magnitude >> drop;
                let sticky = magnitude.trailing_zeros().unwrap_or(0) < drop;
                (to_u128(&kept), exponent + drop as i64, sticky)
            } else {
                (to_u128(magnitude), *exponent, false)
            };
            round_wide(*neg, mag, exp, sticky, format, mode, overflow)
        }
    }
}

fn to_u128(x: &BigUint) -> u128 {
    x.iter_u64_digits()
        .take(2)
        .enumerate()
        .fold(0u128, |acc, (i, d)| acc | ((d as u128) << (64 * i)))
}

/// Rounds `(-1)^neg * (magnitude + t) * 2^exponent`, where `t` is zero when
/// `sticky` is false and lies strictly inside (0, 1) otherwise.
///
/// `magnitude` must be non-zero when `sticky` is set.
pub fn round_parts(
    neg: bool,
    magnitude: u128,
    exponent: i32,
    sticky: bool,
    format: Format,
    mode: Rounding,
    overflow: OverflowPolicy,
) -> FpValue {
    round_wide(
        neg,
        magnitude,
        exponent as i64,
        sticky,
        format,
        mode,
        overflow,
    )
}

fn round_wide(
    neg: bool,
    mag: u128,
    exp: i64,
    sticky: bool,
    format: Format,
    mode: Rounding,
    overflow: OverflowPolicy,
) -> FpValue {
    if mag == 0 {
        assert!(!sticky, "sticky bit without a magnitude");
        return FpValue::zero(format, neg);
    }
    let p = format.params();
    let prec = p.precision as i64;
    let lead = exp + (127 - mag.leading_zeros() as i64);
    let quantum = (lead - (prec - 1)).max(p.min_quantum_exponent() as i64);
    let shift = quantum - exp;
    let (mut kept, guard, rest) = if shift <= 0 {
        // Exact at this quantum; a sticky remainder lies below the guard bit.
        (mag << (-shift) as u32, false, sticky)
    } else if shift > 128 {
        (0, false, true)
    } else if shift == 128 {
        (0, mag >> 127 == 1, (mag << 1) != 0 || sticky)
    } else {
        let s = shift as u32;
        let guard = (mag >> (s - 1)) & 1 == 1;
        let rest = sticky || (s > 1 && mag & ((1u128 << (s - 1)) - 1) != 0);
        (mag >> s, guard, rest)
    };
    let inexact = guard || rest;
    let increment = match mode {
        Rounding::Rne => guard && (rest || kept & 1 == 1),
        Rounding::Rz => false,
        Rounding::Ru => inexact && !neg,
        Rounding::Rd => inexact && neg,
    };
    let mut quantum = quantum;
    if increment {
        kept += 1;
        if kept == 1u128 << prec {
            kept >>= 1;
            quantum += 1;
        }
    }
    let max_quantum = (p.emax - p.fraction_bits() as i32) as i64;
    let overflowed =
        quantum > max_quantum || (quantum == max_quantum && kept > p.max_significand() as u128);
    if overflowed {
        let to_infinity = match overflow {
            OverflowPolicy::Infinity => true,
            OverflowPolicy::Ieee => match mode {
                Rounding::Rne => true,
                Rounding::Rz => false,
                Rounding::Ru => !neg,
                Rounding::Rd => neg,
            },
        };
        return if to_infinity {
            FpValue::infinity(format, neg)
        } else {
            FpValue::max_finite(format, neg)
        };
    }
    encode(format, neg, kept as u64, quantum as i32)
}

/// Correctly rounds a binary64 value into `format`.
pub fn quantize_f64(x: f64, format: Format, mode: Rounding) -> FpValue {
    if x.is_nan() {
        return FpValue::nan(format);
    }
    let neg = x.is_sign_negative();
    if x.is_infinite() {
        return FpValue::infinity(format, neg);
    }
    let (mag, exp) = f64_parts(x);
    round_parts(
        neg,
        mag as u128,
        exp,
        false,
        format,
        mode,
        OverflowPolicy::Ieee,
    )
}

/// Splits a finite binary64 into an integer magnitude and a power of two.
pub(crate) fn f64_parts(x: f64) -> (u64, i32) {
    let bits = x.to_bits();
    let exp_field = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1 << 52) - 1);
    if exp_field == 0 {
        (frac, -1074)
    } else {
        (frac | (1 << 52), exp_field - 1075)
    }
}
