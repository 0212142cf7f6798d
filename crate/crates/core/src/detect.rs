//! Feature detectors: constant test vectors that each expose one numerical
//! feature of a black-box device.
//!
//! Every vector is built from exact powers of two (and a few `1.5 * 2^e`
//! factors) scaled so that all products can be formed from input-format
//! values and all results are exact in the output format. Most vectors
//! cancel a large anchor pair `+2^S, -2^S` inside one block so that the
//! observation is "zero or not", which is independent of the rounding mode.

use std::fmt;

use crate::config::{ceil_log2, COrder, INTERNAL_PRECISION, WINDOW_INT_BITS};
use crate::dut::Dut;
use crate::error::{Error, Result};
use crate::formats::{quantize_f64, Class, Format, FpValue, Rounding};
use crate::presets::{render_row, rounding_label};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    Contiguous,
    InterleavedPairs,
    Unknown,
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Grouping::Contiguous => "contiguous",
            Grouping::InterleavedPairs => "interleaved-pairs",
            Grouping::Unknown => "unknown",
        })
    }
}

/// Outcome of a rounding-mode detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoundingObs {
    Mode(Rounding),
    /// No input can make the rounding step inexact.
    Unobservable,
    /// Preconditions failed or the observations fit no single mode.
    Unknown,
}

impl RoundingObs {
    pub fn mode(self) -> Option<Rounding> {
        match self {
            RoundingObs::Mode(m) => Some(m),
            _ => None,
        }
    }
}

impl fmt::Display for RoundingObs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoundingObs::Mode(m) => write!(f, "{m}"),
            RoundingObs::Unobservable => f.write_str("unobservable"),
            RoundingObs::Unknown => f.write_str("unknown"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FmaSize {
    pub nfma: usize,
    pub grouping: Grouping,
    /// 1-based positions that share the first block with positions 1 and 2.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureReport {
    pub subnormal_inputs: Option<bool>,
    pub subnormal_outputs: Option<bool>,
    pub fraction_bits: Option<i32>,
    pub nfma: Option<usize>,
    pub grouping: Grouping,
    /// Rounding after normalization of a block.
    pub block_rounding: RoundingObs,
    /// The last rounding applied: the late `c` addition when `c` is late,
    /// otherwise the block rounding.
    pub final_rounding: RoundingObs,
    pub c_order: Option<COrder>,
    pub denormalized_products: Option<bool>,
    pub detected_carry_bits: Option<u32>,
}

impl FeatureReport {
    pub fn neab(&self) -> Option<i32> {
        self.fraction_bits
            .map(|f| f - (INTERNAL_PRECISION as i32 - 1))
    }

    /// Integer bits, fractional bits and the carry bits needed by `nfma`
    /// products plus the addend.
    pub fn accumulator_width(&self) -> Option<u32> {
        let f = self.fraction_bits?;
        let n = self.nfma?;
        Some(WINDOW_INT_BITS + f as u32 + ceil_log2(n as u64 + 1))
    }

    pub fn interleaved(&self) -> Option<bool> {
        match self.grouping {
            Grouping::Contiguous => Some(false),
            Grouping::InterleavedPairs => Some(true),
            Grouping::Unknown => None,
        }
    }

    /// The report in the feature-summary column order.
    pub fn table_row(&self) -> String {
        let rounding = match self.final_rounding {
            RoundingObs::Mode(m) => rounding_label(m),
            other => other.to_string(),
        };
        render_row(
            self.fraction_bits,
            self.accumulator_width(),
            self.nfma,
            &rounding,
            self.c_order,
            self.interleaved(),
        )
    }

    pub fn to_key_values(&self) -> String {
        let opt = |x: Option<String>| x.unwrap_or_else(|| "unknown".into());
        let b = |x: Option<bool>| opt(x.map(|v| v.to_string()));
        let lines = [
            ("subnormal_inputs", b(self.subnormal_inputs)),
            ("subnormal_outputs", b(self.subnormal_outputs)),
            (
                "fraction_width_f",
                opt(self.fraction_bits.map(|v| v.to_string())),
            ),
            ("neab", opt(self.neab().map(|v| v.to_string()))),
            ("nfma", opt(self.nfma.map(|v| v.to_string()))),
            ("grouping", self.grouping.to_string()),
            ("block_rounding", self.block_rounding.to_string()),
            ("final_rounding", self.final_rounding.to_string()),
            ("c_order", opt(self.c_order.map(|v| v.to_string()))),
            ("denormalized_products", b(self.denormalized_products)),
            (
                "detected_carry_bits",
                opt(self.detected_carry_bits.map(|v| v.to_string())),
            ),
            (
                "accumulator_width",
                opt(self.accumulator_width().map(|v| v.to_string())),
            ),
        ];
        lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

type Pair = (FpValue, FpValue);

/// Builds and evaluates vectors for one device.
struct Probe<'a> {
    dut: &'a dyn Dut,
    fin: Format,
    fout: Format,
}

fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

fn negate((a, b): Pair) -> Pair {
    (a.neg(), b)
}

impl<'a> Probe<'a> {
    fn new(dut: &'a dyn Dut) -> Probe<'a> {
        Probe {
            dut,
            fin: dut.in_format(),
            fout: dut.out_format(),
        }
    }

    fn exact(x: f64, f: Format) -> Option<FpValue> {
        let q = quantize_f64(x, f, Rounding::Rne);
        (q.is_finite() && q.to_f64() == x).then_some(q)
    }

    fn normal_in(&self, x: f64) -> Option<FpValue> {
        Probe::exact(x, self.fin).filter(|v| v.class() == Class::Normal)
    }

    fn out(&self, x: f64) -> Option<FpValue> {
        Probe::exact(x, self.fout)
    }

    /// `m1 * 2^x` times `m2 * 2^y` with `x + y = e`, both factors normal.
    fn product_of(&self, m1: f64, m2: f64, e: i32) -> Option<Pair> {
        let p = self.fin.params();
        (p.emin..=p.emax).find_map(|x| {
            let a = self.normal_in(m1 * pow2(x))?;
            let b = self.normal_in(m2 * pow2(e - x))?;
            Some((a, b))
        })
    }

    /// A product of value `2^e`; small probes may use a subnormal factor.
    fn pow2_product(&self, e: i32, allow_subnormal: bool) -> Option<Pair> {
        self.product_of(1.0, 1.0, e).or_else(|| {
            if !allow_subnormal {
                return None;
            }
            let p = self.fin.params();
            (p.min_quantum_exponent()..p.emin).rev().find_map(|x| {
                let a = Probe::exact(pow2(x), self.fin)?;
                let b = self.normal_in(pow2(e - x))?;
                Some((a, b))
            })
        })
    }

    fn max_k(&self) -> usize {
        self.dut.max_k()
    }

    /// Evaluates products placed at 0-based positions.
    fn eval(&self, terms: &[(usize, Pair)], c: FpValue) -> Result<FpValue> {
        let k = terms.iter().map(|(i, _)| i + 1).max().unwrap_or(0);
        let mut a = vec![FpValue::zero(self.fin, false); k];
        let mut b = vec![FpValue::zero(self.fin, false); k];
        for &(i, (x, y)) in terms {
            a[i] = x;
            b[i] = y;
        }
        self.dut.eval(&a, &b, &c)
    }

    fn zero_out(&self) -> FpValue {
        FpValue::zero(self.fout, false)
    }
}

/// Candidate scales, nearest to zero first.
fn scales() -> impl Iterator<Item = i32> {
    (0..=160).flat_map(|s| if s == 0 { vec![0] } else { vec![s, -s] })
}

/// Subnormal inputs and outputs.
pub fn detect_subnormal_support(dut: &dyn Dut) -> Result<(bool, bool)> {
    let p = Probe::new(dut);
    let pin = p.fin.params();
    let pout = p.fout.params();
    let tiny = Probe::exact(pin.min_subnormal(), p.fin).expect("smallest subnormal");

    // Lift the product into the normal output range when the output format
    // cannot hold it.
    let lift = (0..=pin.emax)
        .find(|&t| tiny.to_f64() * pow2(t) >= pout.min_normal())
        .unwrap_or(pin.emax);
    let one = Probe::exact(pow2(lift), p.fin).expect("power of two input");
    let d = p.eval(&[(0, (tiny, one))], p.zero_out())?;
    let inputs = !d.is_zero() && d.is_finite();

    let target = pow2(pout.emin - 1);
    let d = match p.pow2_product(pout.emin - 1, false) {
        Some(pair) => p.eval(&[(0, pair)], p.zero_out())?,
        None => p.eval(&[], p.out(target).expect("subnormal output value"))?,
    };
    let outputs = d.class() == Class::Subnormal && d.to_f64() == target;
    Ok((inputs, outputs))
}

/// Number of fractional bits in the alignment window.
///
/// Positions 1 and 2 hold `+2^S` and `-2^S`; two probes of `2^(S-j)` sit
/// at positions (3,4) or (5,6). When the probes share the anchors' block
/// they survive exactly while `j <= f`; in any other block they are exact
/// for every `j`, which marks that placement as uninformative.
pub fn detect_fraction_width(dut: &dyn Dut) -> Result<Option<i32>> {
    let p = Probe::new(dut);
    if p.max_k() < 6 {
        return Ok(None);
    }
    let pin = p.fin.params();
    let pout = p.fout.params();
    let s = (2 * pin.emax).min(pout.emax);
    let (Some(hi), Some(lo)) = (
        p.pow2_product(s, false),
        p.pow2_product(s, false).map(negate),
    ) else {
        return Ok(None);
    };
    let mut best: Option<i32> = None;
    for place in [[2usize, 3], [4, 5]] {
        let mut width = None;
        for j in 1..=40 {
            let (Some(probe), Some(_)) = (p.pow2_product(s - j, true), p.out(pow2(s - j + 1)))
            else {
                break;
            };
            let terms = [(0, hi), (1, lo), (place[0], probe), (place[1], probe)];
            let d = p.eval(&terms, p.zero_out())?;
            if d.to_f64() != pow2(s - j + 1) {
                width = Some(j - 1);
                break;
            }
        }
        if let Some(w) = width {
            best = Some(best.map_or(w, |b: i32| b.max(w)));
        }
    }
    Ok(best)
}

/// Block size and grouping.
///
/// With the cancelling anchors at positions 1 and 2, a probe of
/// `2^(S-f-2)` at position `j` is dropped when `j` shares their block and
/// passes through exactly otherwise.
pub fn detect_fma_size(dut: &dyn Dut, f: i32) -> Result<Option<FmaSize>> {
    let p = Probe::new(dut);
    let k_max = p.max_k().min(256);
    if k_max < 2 {
        return Ok(None);
    }
    let Some(found) = scales().find_map(|s| {
        let hi = p.pow2_product(s, false)?;
        let probe = p.pow2_product(s - f - 2, true)?;
        p.out(pow2(s))?;
        let pv = p.out(pow2(s - f - 2))?;
        Some((hi, probe, pv))
    }) else {
        return Ok(None);
    };
    let (hi, probe, pv) = found;
    let mut members = vec![1, 2];
    for j in 3..=k_max {
        // Groups are contiguous or interleaved within a tile of twice the
        // block, so a run this long past the last member ends the scan.
        if j > 2 * members[members.len() - 1] + 2 {
            break;
        }
        let d = p.eval(&[(0, hi), (1, negate(hi)), (j - 1, probe)], p.zero_out())?;
        if !d.same_as(&pv) {
            members.push(j);
        }
    }
    let n = members.len();
    let contiguous: Vec<usize> = (1..=n).collect();
    let pairs: Vec<usize> = (1..).filter(|i| ((i - 1) / 2) % 2 == 0).take(n).collect();
    let grouping = if members == contiguous {
        Grouping::Contiguous
    } else if members == pairs {
        Grouping::InterleavedPairs
    } else {
        Grouping::Unknown
    };
    Ok(Some(FmaSize {
        nfma: n,
        grouping,
        members,
    }))
}

/// Picks the single mode consistent with every observation.
fn classify(
    observations: &[(f64, FpValue)],
    round: impl Fn(f64, Rounding) -> FpValue,
) -> RoundingObs {
    let fits: Vec<Rounding> = Rounding::ALL
        .into_iter()
        .filter(|&m| observations.iter().all(|(x, d)| round(*x, m).same_as(d)))
        .collect();
    match fits.as_slice() {
        [m] => RoundingObs::Mode(*m),
        _ => RoundingObs::Unknown,
    }
}

/// Rounding applied when a block result is normalized.
///
/// Anchors plus one probe of half an ulp (a tie), plus three probes (one
/// and a half ulps), and the negated tie separate all four modes. With
/// `f >= p` a single `2^S` anchor suffices. Narrower windows use
/// denormalized `1.5 * 1.5` anchors, enough of them that half an ulp of
/// their sum lies on the window grid. When no block can hold that many,
/// every block sum is exact.
pub fn detect_block_rounding(dut: &dyn Dut, f: i32, size: &FmaSize) -> Result<RoundingObs> {
    let p = Probe::new(dut);
    let target = match (size.grouping, p.fout) {
        (Grouping::InterleavedPairs, Format::Binary32) => Format::Binary32,
        (Grouping::InterleavedPairs, _) => return Ok(RoundingObs::Unobservable),
        _ => p.fout,
    };
    let prec = target.precision() as i32;
    let mant = if f >= prec { 1.0 } else { 2.25 };
    let binade = |n: usize| (mant * n as f64).log2().floor() as i32;
    let slots = size.members.len();
    let Some(n) = (1..=slots.saturating_sub(3)).find(|&n| binade(n) >= prec - f) else {
        // Products stay below 4, so `slots` of them reach at most `4 * slots`.
        return Ok(if 4.0 * (slots as f64) < pow2(prec - f) {
            RoundingObs::Unobservable
        } else {
            RoundingObs::Unknown
        });
    };
    let pos: Vec<usize> = size.members.iter().take(n + 3).map(|m| m - 1).collect();
    let built = scales().find_map(|s| {
        let anchor = if f >= prec {
            p.pow2_product(s, false)?
        } else {
            p.product_of(1.5, 1.5, s)?
        };
        let av = mant * n as f64 * pow2(s);
        let he = s + binade(n) - prec;
        let h = p.pow2_product(he, true)?;
        let largest = av + 4.0 * pow2(he);
        Probe::exact(av, target)?;
        Probe::exact(largest, target)?;
        p.out(largest)?;
        Some((anchor, av, h, pow2(he)))
    });
    let Some((anchor, av, h, hv)) = built else {
        return Ok(RoundingObs::Unknown);
    };
    let zero = p.zero_out();
    let with = |a: Pair, probe: Pair, probes: usize| -> Vec<(usize, Pair)> {
        let anchors = pos[..n].iter().map(|&i| (i, a));
        anchors
            .chain(pos[n..n + probes].iter().map(|&i| (i, probe)))
            .collect()
    };
    let tie = p.eval(&with(anchor, h, 1), zero)?;
    let above = p.eval(&with(anchor, h, 3), zero)?;
    let neg_tie = p.eval(&with(negate(anchor), negate(h), 1), zero)?;
    let obs = [
        (av + hv, tie),
        (av + 3.0 * hv, above),
        (-(av + hv), neg_tie),
    ];
    Ok(classify(&obs, |x, m| {
        let r = quantize_f64(x, target, m).to_f64();
        quantize_f64(r, p.fout, Rounding::Rne)
    }))
}

/// Rounding of a late `c` addition: `c = 2^S` plus a product of half an
/// ulp or one and a half ulps, and the negated tie.
pub fn detect_late_rounding(dut: &dyn Dut) -> Result<RoundingObs> {
    let p = Probe::new(dut);
    let prec = p.fout.precision() as i32;
    let built = scales().find_map(|s| {
        let c = p.out(pow2(s))?;
        p.out(pow2(s) + 2.0 * pow2(s + 1 - prec))?;
        p.out(pow2(s - prec))?;
        p.out(3.0 * pow2(s - prec))?;
        let tie = p.pow2_product(s - prec, true)?;
        let above = p.product_of(1.5, 1.0, s + 1 - prec)?;
        Some((c, s, tie, above))
    });
    let Some((c, s, tie, above)) = built else {
        return Ok(RoundingObs::Unknown);
    };
    let h = pow2(s - prec);
    let d_tie = p.eval(&[(0, tie)], c)?;
    let d_above = p.eval(&[(0, above)], c)?;
    let d_neg = p.eval(&[(0, negate(tie))], c.neg())?;
    let base = pow2(s);
    let obs = [
        (base + h, d_tie),
        (base + 3.0 * h, d_above),
        (-(base + h), d_neg),
    ];
    Ok(classify(&obs, |x, m| quantize_f64(x, p.fout, m)))
}

/// Whether `c` joins the first block's alignment.
///
/// The anchors `+2^S, -2^S` cancel and `c = 2^(S-f-2)` lies below their
/// window: an early `c` is dropped, a late `c` is added to the exact zero.
pub fn detect_c_order(dut: &dyn Dut, f: i32) -> Result<Option<COrder>> {
    let p = Probe::new(dut);
    let built = scales().find_map(|s| {
        let hi = p.pow2_product(s, false)?;
        let c = p.out(pow2(s - f - 2))?;
        Some((hi, c))
    });
    let Some((hi, c)) = built else {
        return Ok(None);
    };
    let d = p.eval(&[(0, hi), (1, negate(hi))], c)?;
    Ok(Some(if d.same_as(&c) {
        COrder::Late
    } else {
        COrder::Early
    }))
}

/// Whether products enter alignment unnormalized.
///
/// A `1.5 * 1.5` product has exponent `x + y` but value in `[2, 4)`. With
/// a cancelling pair of such products, a probe `2^(S-f)` survives only if
/// the window is anchored at the unnormalized exponent.
pub fn detect_denormalized_products(dut: &dyn Dut, f: i32, size: &FmaSize) -> Result<Option<bool>> {
    let p = Probe::new(dut);
    if size.members.len() < 3 {
        return Ok(None);
    }
    let pos: Vec<usize> = size.members.iter().take(3).map(|m| m - 1).collect();
    let built = scales().find_map(|s| {
        let anchor = p.product_of(1.5, 1.5, s)?;
        let probe = p.pow2_product(s - f, true)?;
        p.out(2.25 * pow2(s))?;
        let pv = p.out(pow2(s - f))?;
        Some((anchor, probe, pv))
    });
    let Some((anchor, probe, pv)) = built else {
        return Ok(None);
    };
    let d = p.eval(
        &[(pos[0], anchor), (pos[1], negate(anchor)), (pos[2], probe)],
        p.zero_out(),
    )?;
    Ok(if d.same_as(&pv) {
        Some(true)
    } else if d.is_zero() {
        Some(false)
    } else {
        None
    })
}

/// Carry bits observed without overflow.
///
/// Fills the first block with `m` products of the largest significand
/// (plus an equally large `c` when `c` is early) and checks the result
/// against the window-truncated exact sum. Reports the bits needed to hold
/// the largest count of terms that summed correctly.
pub fn detect_carry_bits(
    dut: &dyn Dut,
    f: i32,
    size: &FmaSize,
    c_order: COrder,
    block: RoundingObs,
    late: RoundingObs,
) -> Result<Option<u32>> {
    let p = Probe::new(dut);
    let pin = p.fin.params();
    let pout = p.fout.params();
    let big = 2.0 - pow2(1 - pin.precision as i32);
    let Some(pair) = p.product_of(big, big, 0) else {
        return Ok(None);
    };
    let early = c_order == COrder::Early;
    let c_val = 2.0 - pow2(1 - pout.precision as i32);
    let c = if early {
        p.out(c_val)
            .expect("largest significand in the output format")
    } else {
        p.zero_out()
    };
    let grid = pow2(-f);
    let trunc = |v: f64| (v / grid).floor() * grid;
    let partial = match size.grouping {
        Grouping::InterleavedPairs => Format::Binary32,
        _ => p.fout,
    };
    let modes = |r: RoundingObs| r.mode().map_or(Rounding::ALL.to_vec(), |m| vec![m]);
    let (block_modes, late_modes) = (modes(block), modes(late));

    let mut best = None;
    for m in 1..=size.members.len() {
        let terms: Vec<(usize, Pair)> = size.members[..m].iter().map(|&i| (i - 1, pair)).collect();
        let d = p.eval(&terms, c)?;
        let mut sum = m as f64 * trunc(big * big);
        if early {
            sum += trunc(c_val);
        }
        let fits = block_modes.iter().any(|&bm| {
            let r = quantize_f64(sum, partial, bm).to_f64();
            if early {
                quantize_f64(r, p.fout, Rounding::Rne).same_as(&d)
            } else {
                late_modes
                    .iter()
                    .any(|&lm| quantize_f64(r, p.fout, lm).same_as(&d))
            }
        });
        if !fits {
            break;
        }
        best = Some(m + early as usize);
    }
    Ok(best.map(|terms| ceil_log2(terms as u64)))
}

/// Runs every detector in dependency order.
pub fn run_all(dut: &dyn Dut) -> Result<FeatureReport> {
    if dut.max_k() == 0 {
        return Err(Error::Contract(format!(
            "{} accepts no products",
            dut.name()
        )));
    }
    let (sub_in, sub_out) = detect_subnormal_support(dut)?;
    let mut report = FeatureReport {
        subnormal_inputs: Some(sub_in),
        subnormal_outputs: Some(sub_out),
        fraction_bits: detect_fraction_width(dut)?,
        nfma: None,
        grouping: Grouping::Unknown,
        block_rounding: RoundingObs::Unknown,
        final_rounding: RoundingObs::Unknown,
        c_order: None,
        denormalized_products: None,
        detected_carry_bits: None,
    };
    let Some(f) = report.fraction_bits else {
        return Ok(report);
    };
    let Some(size) = detect_fma_size(dut, f)? else {
        return Ok(report);
    };
    report.nfma = Some(size.nfma);
    report.grouping = size.grouping;
    report.block_rounding = detect_block_rounding(dut, f, &size)?;
    report.c_order = detect_c_order(dut, f)?;
    let late = match report.c_order {
        Some(COrder::Late) => detect_late_rounding(dut)?,
        Some(COrder::Early) => report.block_rounding,
        None => RoundingObs::Unknown,
    };
    report.final_rounding = late;
    report.denormalized_products = detect_denormalized_products(dut, f, &size)?;
    if let Some(order) = report.c_order {
        report.detected_carry_bits =
            detect_carry_bits(dut, f, &size, order, report.block_rounding, late)?;
    }
    Ok(report)
}
