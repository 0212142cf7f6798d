//! Randomized differential comparison between devices, the special-value
//! suite, and replay of recorded hardware dumps.

use std::fmt;

use rayon::prelude::*;

use crate::dut::Dut;
use crate::error::{Error, Result};
use crate::formats::{parse_hexfloat, render_hexfloat, Format, FpValue};
use crate::rng::gen_random_vector;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MismatchRecord {
    /// Trial index, or record index for dump replays.
    pub trial: usize,
    /// Source line for dump replays.
    pub line: Option<usize>,
    pub k: usize,
    pub a: Vec<String>,
    pub b: Vec<String>,
    pub c: String,
    pub d_left: String,
    pub d_right: String,
    /// First block (of the replay granularity) after which results diverge.
    pub first_chunk: Option<usize>,
}

impl fmt::Display for MismatchRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "trial {}", self.trial)?;
        if let Some(l) = self.line {
            write!(f, " (line {l})")?;
        }
        write!(
            f,
            ": k={} left={} right={} a=[{}] b=[{}] c={}",
            self.k,
            self.d_left,
            self.d_right,
            self.a.join(","),
            self.b.join(","),
            self.c
        )?;
        if let Some(ch) = self.first_chunk {
            write!(f, " first_chunk={ch}")?;
        }
        Ok(())
    }
}

fn hex(v: &FpValue) -> String {
    format!("{:#x}", v.bits())
}

fn replay_step(left: &dyn Dut, right: &dyn Dut) -> usize {
    match (left.chunk_hint(), right.chunk_hint()) {
        (Some(x), Some(y)) => x.min(y),
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => 1,
    }
    .max(1)
}

/// Index of the first prefix block of `step` elements whose partial result
/// differs between the two devices.
fn first_divergence(
    left: &dyn Dut,
    right: &dyn Dut,
    a: &[FpValue],
    b: &[FpValue],
    c: &FpValue,
    step: usize,
) -> Result<Option<usize>> {
    let k = a.len();
    let mut len = step.min(k);
    let mut chunk = 0;
    while len <= k {
        let l = left.eval(&a[..len], &b[..len], c)?;
        let r = right.eval(&a[..len], &b[..len], c)?;
        if !l.same_as(&r) {
            return Ok(Some(chunk));
        }
        if len == k {
            break;
        }
        len = (len + step).min(k);
        chunk += 1;
    }
    Ok(None)
}

fn record(
    left: &dyn Dut,
    right: &dyn Dut,
    trial: usize,
    a: &[FpValue],
    b: &[FpValue],
    c: &FpValue,
    dl: &FpValue,
    dr: &FpValue,
) -> Result<MismatchRecord> {
    Ok(MismatchRecord {
        trial,
        line: None,
        k: a.len(),
        a: a.iter().map(hex).collect(),
        b: b.iter().map(hex).collect(),
        c: hex(c),
        d_left: hex(dl),
        d_right: hex(dr),
        first_chunk: first_divergence(left, right, a, b, c, replay_step(left, right))?,
    })
}

fn check_formats(left: &dyn Dut, right: &dyn Dut) -> Result<()> {
    if left.in_format() != right.in_format() || left.out_format() != right.out_format() {
        return Err(Error::Contract(format!(
            "{} ({}->{}) and {} ({}->{}) use different formats",
            left.name(),
            left.in_format(),
            left.out_format(),
            right.name(),
            right.in_format(),
            right.out_format()
        )));
    }
    Ok(())
}

/// Runs `trials` random comparisons of length `k`; the result lists every
/// disagreement in trial order.
pub fn compare(
    left: &dyn Dut,
    right: &dyn Dut,
    trials: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<MismatchRecord>> {
    check_formats(left, right)?;
    let limit = left.max_k().min(right.max_k());
    if k > limit {
        return Err(Error::Contract(format!(
            "k = {k} exceeds the device limit {limit}"
        )));
    }
    let found: Vec<Option<MismatchRecord>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let (a, b, c) =
                gen_random_vector(k, left.in_format(), left.out_format(), seed, t as u64);
            let dl = left.eval(&a, &b, &c)?;
            let dr = right.eval(&a, &b, &c)?;
            if dl.same_as(&dr) {
                Ok(None)
            } else {
                record(left, right, t, &a, &b, &c, &dl, &dr).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    Ok(found.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    Nan,
    PosInf,
    NegInf,
}

impl Expect {
    fn matches(self, v: &FpValue) -> bool {
        match self {
            Expect::Nan => v.is_nan(),
            Expect::PosInf => v.is_infinite() && !v.is_sign_negative(),
            Expect::NegInf => v.is_infinite() && v.is_sign_negative(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CaseStatus {
    Pass,
    Fail(String),
    /// The case cannot be expressed in the device's formats.
    Skipped(&'static str),
}

#[derive(Debug, Clone)]
pub struct SpecialCase {
    pub name: &'static str,
    pub expect: Expect,
    pub status: CaseStatus,
}

#[derive(Debug, Clone, Default)]
pub struct SpecialReport {
    pub cases: Vec<SpecialCase>,
}

impl SpecialReport {
    pub fn all_passed(&self) -> bool {
        self.cases
            .iter()
            .all(|c| !matches!(c.status, CaseStatus::Fail(_)))
    }

    pub fn executed(&self) -> usize {
        self.cases
            .iter()
            .filter(|c| !matches!(c.status, CaseStatus::Skipped(_)))
            .count()
    }
}

impl fmt::Display for SpecialReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.cases {
            let status = match &c.status {
                CaseStatus::Pass => "pass".to_string(),
                CaseStatus::Fail(got) => format!("FAIL (got {got})"),
                CaseStatus::Skipped(why) => format!("skipped ({why})"),
            };
            writeln!(
                f,
                "{:<28} expect {:<7} {status}",
                c.name,
                format!("{:?}", c.expect)
            )?;
        }
        Ok(())
    }
}

/// Exceptional-value cases: infinities, NaN precedence and overflow.
pub fn special_values_suite(dut: &dyn Dut) -> Result<SpecialReport> {
    let fin = dut.in_format();
    let fout = dut.out_format();
    let has_inf = fin.params().has_infinity;
    let one = FpValue::one(fin);
    let zero = FpValue::zero(fin, false);
    let inf = FpValue::infinity(fin, false);
    let nan = FpValue::nan(fin);
    let c0 = FpValue::zero(fout, false);
    let max_in = FpValue::max_finite(fin, false);
    let max_in_sq = max_in.to_f64() * max_in.to_f64();
    // A single product past twice the output's largest value overflows
    // under every rounding mode.
    let product_overflows = max_in_sq >= 2.0 * fout.params().max_finite();

    struct Case {
        name: &'static str,
        expect: Expect,
        needs: Option<&'static str>,
        a: Vec<FpValue>,
        b: Vec<FpValue>,
        c: FpValue,
    }
    let no_inf = (!has_inf).then_some("input format has no infinity");
    let no_overflow = (!product_overflows).then_some("no single product exceeds the output range");
    let cases = vec![
        Case {
            name: "inf_plus_inf",
            expect: Expect::PosInf,
            needs: no_inf,
            a: vec![inf, inf],
            b: vec![one, one],
            c: c0,
        },
        Case {
            name: "inf_minus_inf",
            expect: Expect::Nan,
            needs: no_inf,
            a: vec![inf, inf.neg()],
            b: vec![one, one],
            c: c0,
        },
        Case {
            name: "neg_inf_times_inf",
            expect: Expect::NegInf,
            needs: no_inf,
            a: vec![inf.neg(), one],
            b: vec![inf, one],
            c: c0,
        },
        Case {
            name: "inf_times_inf_minus_one",
            expect: Expect::PosInf,
            needs: no_inf,
            a: vec![inf, one.neg()],
            b: vec![inf, one],
            c: c0,
        },
        Case {
            name: "inf_times_zero",
            expect: Expect::Nan,
            needs: no_inf,
            a: vec![inf, one],
            b: vec![zero, one],
            c: c0,
        },
        Case {
            name: "nan_input",
            expect: Expect::Nan,
            needs: None,
            a: vec![one, nan],
            b: vec![one, one],
            c: c0,
        },
        Case {
            name: "nan_plus_inf",
            expect: Expect::Nan,
            needs: no_inf,
            a: vec![nan, inf],
            b: vec![one, one],
            c: c0,
        },
        Case {
            name: "nan_addend",
            expect: Expect::Nan,
            needs: None,
            a: vec![one, one],
            b: vec![one, one],
            c: FpValue::nan(fout),
        },
        Case {
            name: "inf_addend",
            expect: Expect::PosInf,
            needs: None,
            a: vec![one, one],
            b: vec![one, one],
            c: FpValue::infinity(fout, false),
        },
        Case {
            name: "neg_inf_addend_plus_inf",
            expect: Expect::Nan,
            needs: no_inf,
            a: vec![inf, one],
            b: vec![one, one],
            c: FpValue::infinity(fout, true),
        },
        Case {
            name: "nan_addend_with_inf",
            expect: Expect::Nan,
            needs: no_inf,
            a: vec![inf, one],
            b: vec![one, one],
            c: FpValue::nan(fout),
        },
        Case {
            name: "overflow_positive",
            expect: Expect::PosInf,
            needs: no_overflow,
            a: vec![max_in, max_in],
            b: vec![max_in, max_in],
            c: c0,
        },
        Case {
            name: "overflow_negative",
            expect: Expect::NegInf,
            needs: no_overflow,
            a: vec![max_in.neg(), max_in.neg()],
            b: vec![max_in, max_in],
            c: c0,
        },
    ];

    let mut report = SpecialReport::default();
    for case in cases {
        let status = if let Some(why) = case.needs {
            CaseStatus::Skipped(why)
        } else {
            let d = dut.eval(&case.a, &case.b, &case.c)?;
            if case.expect.matches(&d) {
                CaseStatus::Pass
            } else {
                CaseStatus::Fail(render_hexfloat(&d))
            }
        };
        report.cases.push(SpecialCase {
            name: case.name,
            expect: case.expect,
            status,
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpRecord {
    pub a: Vec<FpValue>,
    pub b: Vec<FpValue>,
    pub c: FpValue,
    pub d: FpValue,
    pub line: usize,
}

/// Recorded hardware inputs and outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GpuDump {
    pub gpu: String,
    pub in_format: Format,
    pub out_format: Format,
    pub k: usize,
    pub records: Vec<DumpRecord>,
}

impl GpuDump {
    pub fn parse(text: &str) -> Result<GpuDump> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (hline, header) = lines
            .by_ref()
            .find(|(_, l)| !l.is_empty())
            .ok_or_else(|| Error::line(1, "empty dump"))?;
        let body = header.strip_prefix('#').ok_or_else(|| {
            Error::line(hline, "expected `# gpu=... in=... out=... k=...` header")
        })?;
        let (mut gpu, mut fin, mut fout, mut k) = (None, None, None, None);
        for field in body.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::line(hline, format!("malformed header field `{field}`")))?;
            match key {
                "gpu" => gpu = Some(value.to_string()),
                "in" => fin = Some(Format::by_name(value).map_err(|e| Error::line(hline, e))?),
                "out" => fout = Some(Format::by_name(value).map_err(|e| Error::line(hline, e))?),
                "k" => k = Some(value.parse::<usize>().map_err(|e| Error::line(hline, e))?),
                other => {
                    return Err(Error::line(
                        hline,
                        format!("unknown header field `{other}`"),
                    ))
                }
            }
        }
        let missing = |f: &str| Error::line(hline, format!("header lacks `{f}`"));
        let gpu = gpu.ok_or_else(|| missing("gpu"))?;
        let fin = fin.ok_or_else(|| missing("in"))?;
        let fout = fout.ok_or_else(|| missing("out"))?;
        let k = k.ok_or_else(|| missing("k"))?;

        let mut records = Vec::new();
        for (line, text) in lines {
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let tokens: Vec<&str> = text.split(',').map(str::trim).collect();
            if tokens.len() != 2 * k + 2 {
                return Err(Error::line(
                    line,
                    format!("expected {} fields, found {}", 2 * k + 2, tokens.len()),
                ));
            }
            let parse = |tok: &str, f: Format| {
                parse_hexfloat(tok, f).map_err(|e| Error::line(line, format!("`{tok}`: {e}")))
            };
            let a = tokens[..k]
                .iter()
                .map(|t| parse(t, fin))
                .collect::<Result<Vec<_>>>()?;
            let b = tokens[k..2 * k]
                .iter()
                .map(|t| parse(t, fin))
                .collect::<Result<Vec<_>>>()?;
            records.push(DumpRecord {
                a,
                b,
                c: parse(tokens[2 * k], fout)?,
                d: parse(tokens[2 * k + 1], fout)?,
                line,
            });
        }
        Ok(GpuDump {
            gpu,
            in_format: fin,
            out_format: fout,
            k,
            records,
        })
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "# gpu={} in={} out={} k={}\n",
            self.gpu, self.in_format, self.out_format, self.k
        );
        for r in &self.records {
            let fields: Vec<String> =
                r.a.iter()
                    .chain(&r.b)
                    .chain([&r.c, &r.d])
                    .map(render_hexfloat)
                    .collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    /// Records `trials` random evaluations of `dut`.
    pub fn record(dut: &dyn Dut, gpu: &str, trials: usize, k: usize, seed: u64) -> Result<GpuDump> {
        let records = (0..trials)
            .into_par_iter()
            .map(|t| {
                let (a, b, c) =
                    gen_random_vector(k, dut.in_format(), dut.out_format(), seed, t as u64);
                let d = dut.eval(&a, &b, &c)?;
                Ok(DumpRecord {
                    a,
                    b,
                    c,
                    d,
                    line: t + 2,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GpuDump {
            gpu: gpu.to_string(),
            in_format: dut.in_format(),
            out_format: dut.out_format(),
            k,
            records,
        })
    }
}

/// Replays every record of `dump` on `dut`.
pub fn verify_dump(dut: &dyn Dut, dump: &GpuDump) -> Result<Vec<MismatchRecord>> {
    if dut.in_format() != dump.in_format || dut.out_format() != dump.out_format {
        return Err(Error::Contract(format!(
            "dump is {}->{} but {} is {}->{}",
            dump.in_format,
            dump.out_format,
            dut.name(),
            dut.in_format(),
            dut.out_format()
        )));
    }
    let found: Vec<Option<MismatchRecord>> = dump
        .records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let got = dut.eval(&r.a, &r.b, &r.c)?;
            if got.same_as(&r.d) {
                return Ok(None);
            }
            Ok(Some(MismatchRecord {
                trial: i,
                line: Some(r.line),
                k: r.a.len(),
                a: r.a.iter().map(hex).collect(),
                b: r.b.iter().map(hex).collect(),
                c: hex(&r.c),
                d_left: hex(&got),
                d_right: hex(&r.d),
                first_chunk: None,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(found.into_iter().flatten().collect())
}
