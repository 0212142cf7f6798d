//! Invariant checks shared by the property and acceptance targets.
//!
//! Each check draws `cases` random vectors of length `2 * nfma` for one
//! config and returns the number of cases it could exercise, or a
//! description of the first counterexample.

#![allow(dead_code)]

use tcemu::formats::Class;
use tcemu::rng::{gen_random_vector, NormalStream};
use tcemu::{inner_product, FpValue, Rounding, TcConfig};

pub type Outcome = Result<usize, String>;

fn eval(a: &[FpValue], b: &[FpValue], c: &FpValue, cfg: &TcConfig) -> FpValue {
    inner_product(a, b, c, cfg).expect("well-formed vector")
}

fn show(v: &[FpValue]) -> String {
    v.iter()
        .map(|x| format!("{:#x}", x.bits()))
        .collect::<Vec<_>>()
        .join(",")
}

/// Identifies the summation group of each position.
fn group_of(i: usize, cfg: &TcConfig) -> (usize, usize) {
    if cfg.interleaved {
        let tile = 2 * cfg.nfma;
        (i / tile, (i % tile / 2) % 2)
    } else {
        (i / cfg.nfma, 0)
    }
}

/// Shuffling products within one summation group leaves the result unchanged.
pub fn permutation_invariance(cfg: &TcConfig, cases: u64, seed: u64) -> Outcome {
    let k = 2 * cfg.nfma;
    for t in 0..cases {
        let (a, b, c) = gen_random_vector(k, cfg.in_format, cfg.out_format, seed, t);
        let d = eval(&a, &b, &c, cfg);
        let mut rng = NormalStream::new(seed ^ 0x9e37_79b9, t);
        let mut order: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            let j = (rng.uniform() * (i + 1) as f64) as usize;
            if group_of(order[i], cfg) == group_of(order[j], cfg) {
                order.swap(i, j);
            }
        }
        let pa: Vec<_> = order.iter().map(|&i| a[i]).collect();
        let pb: Vec<_> = order.iter().map(|&i| b[i]).collect();
        let dp = eval(&pa, &pb, &c, cfg);
        if !dp.same_as(&d) {
            return Err(format!(
                "trial {t}: order {order:?} gives {dp:?}, expected {d:?}"
            ));
        }
    }
    Ok(cases as usize)
}

/// A product below the window of its block is dropped without trace.
pub fn sub_window_invisibility(cfg: &TcConfig, cases: u64, seed: u64) -> Outcome {
    let k = 2 * cfg.nfma;
    let shift = cfg.fraction_bits() + 3;
    let mut done = 0;
    for t in 0..cases {
        let (mut a, mut b, c) = gen_random_vector(k, cfg.in_format, cfg.out_format, seed, t);
        if a[0].is_zero() || b[0].is_zero() || cfg.sticky {
            continue;
        }
        let Some((tiny_a, tiny_b)) = tiny_pair(&mut a, &mut b, shift, cfg) else {
            continue;
        };
        let (mut za, mut zb) = (a.clone(), b.clone());
        za[1] = FpValue::zero(cfg.in_format, false);
        zb[1] = FpValue::zero(cfg.in_format, false);
        let (mut ta, mut tb) = (a.clone(), b.clone());
        ta[1] = tiny_a;
        tb[1] = tiny_b;
        let base = eval(&za, &zb, &c, cfg);
        let with = eval(&ta, &tb, &c, cfg);
        if !with.same_as(&base) && !(with.is_zero() && base.is_zero()) {
            return Err(format!(
                "trial {t}: a={} b={} gives {with:?}, expected {base:?}",
                show(&ta),
                show(&tb)
            ));
        }
        done += 1;
    }
    Ok(done)
}

/// A product of magnitude at most `|a[0] b[0]| * 2^-shift`, which lies
/// below every grid point of a window anchored at or above the first
/// product's exponent. When the format is too narrow, the first product is
/// lifted by the smallest power of two that suffices and the smallest subnormal product
/// is used.
fn tiny_pair(
    a: &mut [FpValue],
    b: &mut [FpValue],
    shift: i32,
    cfg: &TcConfig,
) -> Option<(FpValue, FpValue)> {
    let fin = cfg.in_format;
    let rz = |x: f64| FpValue::from_f64(x, fin, Rounding::Rz);
    let half = shift / 2;
    let (x, y) = (
        rz(a[0].to_f64() * 2f64.powi(-half)),
        rz(b[0].to_f64() * 2f64.powi(half - shift)),
    );
    if !x.is_zero() && !y.is_zero() {
        return Some((x, y));
    }
    let least = FpValue::from_f64(fin.params().min_subnormal(), fin, Rounding::Rz);
    let lifted = |v: &FpValue, u: i32| {
        let w = rz(v.to_f64() * 2f64.powi(u));
        (w.is_finite() && w.to_f64() == v.to_f64() * 2f64.powi(u)).then_some(w)
    };
    let (x, y) = (1..64).find_map(|u| {
        let (x, y) = (lifted(&a[0], u)?, lifted(&b[0], u)?);
        let anchor = (x.to_f64() * y.to_f64()).abs();
        (least.to_f64().powi(2) <= anchor * 2f64.powi(-shift)).then_some((x, y))
    })?;
    a[0] = x;
    b[0] = y;
    Some((least, least))
}

fn all_normal_or_zero(v: &[FpValue]) -> bool {
    v.iter()
        .all(|x| matches!(x.class(), Class::Normal | Class::Zero))
}

/// Scaling `a` and `c` by `2^s` scales the result by `2^s` while every
/// operand and the result stay in the normal range.
pub fn scale_equivariance(cfg: &TcConfig, cases: u64, seed: u64) -> Outcome {
    let k = 2 * cfg.nfma;
    let mut done = 0;
    for t in 0..cases {
        let (a, b, c) = gen_random_vector(k, cfg.in_format, cfg.out_format, seed, t);
        let s = [1, -1, 2, -2][t as usize % 4];
        let scale = |x: &FpValue, f| FpValue::from_f64(x.to_f64() * 2f64.powi(s), f, Rounding::Rz);
        let sa: Vec<_> = a.iter().map(|x| scale(x, cfg.in_format)).collect();
        let sc = scale(&c, cfg.out_format);
        let exact = a
            .iter()
            .zip(&sa)
            .all(|(x, y)| y.to_f64() == x.to_f64() * 2f64.powi(s))
            && sc.to_f64() == c.to_f64() * 2f64.powi(s);
        if !exact || !all_normal_or_zero(&a) || !all_normal_or_zero(&sa) || !all_normal_or_zero(&b)
        {
            continue;
        }
        let d = eval(&a, &b, &c, cfg);
        let ds = eval(&sa, &b, &sc, cfg);
        let want = scale(&d, cfg.out_format);
        if d.class() != Class::Normal || want.class() != Class::Normal {
            continue;
        }
        if !ds.same_as(&want) {
            return Err(format!(
                "trial {t}: scaling by 2^{s} gives {ds:?}, expected {want:?}"
            ));
        }
        done += 1;
    }
    Ok(done)
}

/// Negating `a` and `c` negates the result under sign-symmetric rounding.
pub fn negation_symmetry(cfg: &TcConfig, cases: u64, seed: u64) -> Outcome {
    let k = 2 * cfg.nfma;
    for t in 0..cases {
        let (a, b, c) = gen_random_vector(k, cfg.in_format, cfg.out_format, seed, t);
        let na: Vec<_> = a.iter().map(FpValue::neg).collect();
        let d = eval(&a, &b, &c, cfg);
        let dn = eval(&na, &b, &c.neg(), cfg);
        // An exact cancellation yields +0 either way.
        let ok = if d.is_zero() {
            dn.is_zero()
        } else {
            dn.same_as(&d.neg())
        };
        if !ok {
            return Err(format!(
                "trial {t}: negated gives {dn:?}, expected {:?}",
                d.neg()
            ));
        }
    }
    Ok(cases as usize)
}

/// Whether every rounding the config applies is symmetric under negation.
pub fn sign_symmetric(cfg: &TcConfig) -> bool {
    let sym = |m| matches!(m, Rounding::Rz | Rounding::Rne);
    sym(cfg.block_rounding(cfg.partial_format()))
        && sym(cfg.late_rounding())
        && sym(cfg.final_rounding)
}
