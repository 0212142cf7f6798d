//! Parameters of one tensor-core model variant, and the `key = value`
//! parameter file that describes custom variants.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::formats::{Format, Rounding};

/// Significand width of the internal accumulation (binary32).
pub const INTERNAL_PRECISION: u32 = 24;
/// Integer bits of the alignment window; products stay denormalized in [0, 4).
pub const WINDOW_INT_BITS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum COrder {
    /// `c` is aligned together with the first block of products.
    Early,
    /// `c` is added after all products with a separate rounding.
    Late,
}

impl fmt::Display for COrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            COrder::Early => "early",
            COrder::Late => "late",
        })
    }
}

impl FromStr for COrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "early" => Ok(COrder::Early),
            "late" => Ok(COrder::Late),
            other => Err(Error::Config(format!("unknown c order `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TcConfig {
    pub in_format: Format,
    pub out_format: Format,
    /// Extra alignment bits beyond the 23 fractional bits of binary32; may be
    /// negative.
    pub neab: i32,
    /// Block FMA size: products summed with a single normalization.
    pub nfma: usize,
    /// Rounding after normalization of each block.
    pub final_rounding: Rounding,
    pub c_order: COrder,
    /// Alternating-pair split of each `2 * nfma` tile into two groups, with
    /// `c` added last under RNE.
    pub interleaved: bool,
    /// Append one sticky bit per aligned term.
    pub sticky: bool,
}

impl TcConfig {
    /// A config with the common defaults (RZ, early, no interleave, no sticky).
    pub fn new(in_format: Format, out_format: Format, neab: i32, nfma: usize) -> TcConfig {
        TcConfig {
            in_format,
            out_format,
            neab,
            nfma,
            final_rounding: Rounding::Rz,
            c_order: COrder::Early,
            interleaved: false,
            sticky: false,
        }
    }

    pub fn with_rounding(mut self, mode: Rounding) -> TcConfig {
        self.final_rounding = mode;
        self
    }

    pub fn with_c_order(mut self, order: COrder) -> TcConfig {
        self.c_order = order;
        self
    }

    pub fn with_interleave(mut self, interleaved: bool) -> TcConfig {
        self.interleaved = interleaved;
        if interleaved {
            self.c_order = COrder::Late;
        }
        self
    }

    pub fn with_sticky(mut self, sticky: bool) -> TcConfig {
        self.sticky = sticky;
        self
    }

    /// Fractional bits of the alignment window.
    pub fn fraction_bits(&self) -> i32 {
        INTERNAL_PRECISION as i32 - 1 + self.neab
    }

    pub fn carry_bits(&self) -> u32 {
        ceil_log2(self.nfma as u64 + 1)
    }

    /// Width of the product alignment window (integer + fractional bits).
    pub fn alignment_width(&self) -> u32 {
        WINDOW_INT_BITS + self.fraction_bits() as u32
    }

    /// Width of the accumulator output before normalization.
    pub fn accumulator_width(&self) -> u32 {
        self.alignment_width() + self.carry_bits()
    }

    /// Format in which partial results between chained blocks are held.
    pub fn partial_format(&self) -> Format {
        if self.interleaved {
            Format::Binary32
        } else {
            self.out_format
        }
    }

    /// Rounding used when a block result is rounded into `target`; binary16
    /// results always use RNE.
    pub fn block_rounding(&self, target: Format) -> Rounding {
        if target == Format::Binary16 {
            Rounding::Rne
        } else {
            self.final_rounding
        }
    }

    /// Rounding of the late `c` addition.
    pub fn late_rounding(&self) -> Rounding {
        if self.interleaved {
            Rounding::Rne
        } else {
            self.block_rounding(self.out_format)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(
            self.in_format,
            Format::Fp8E4M3 | Format::Fp8E5M2 | Format::Binary16 | Format::Bfloat16 | Format::Tf19
        ) {
            return Err(Error::Config(format!(
                "{} is not a supported input format",
                self.in_format
            )));
        }
        if !matches!(self.out_format, Format::Binary16 | Format::Binary32) {
            return Err(Error::Config(format!(
                "{} is not a supported output format (binary16 or binary32)",
                self.out_format
            )));
        }
        if self.fraction_bits() < 1 {
            return Err(Error::Config(format!(
                "neab {} leaves no fractional alignment bits",
                self.neab
            )));
        }
        if self.neab > 40 {
            return Err(Error::Config(format!(
                "neab {} is too large (max 40)",
                self.neab
            )));
        }
        if self.nfma == 0 || self.nfma > 1 << 16 {
            return Err(Error::Config(format!(
                "fma size {} out of range",
                self.nfma
            )));
        }
        if self.interleaved && self.c_order != COrder::Late {
            return Err(Error::Config(
                "interleaved accumulation requires late c order".into(),
            ));
        }
        Ok(())
    }

    /// Parses the `key = value` parameter file.
    ///
    /// Keys: `in_format`, `out_format`, `neab`, `fma`, `frmode`, `corder`,
    /// `stkbitenabled`, `inter_pattern`. Blank lines and `#` comments are
    /// ignored.
    pub fn parse_params(text: &str) -> Result<TcConfig> {
        let mut in_format = None;
        let mut out_format = None;
        let mut neab = None;
        let mut nfma = None;
        let mut rounding = Rounding::Rz;
        let mut c_order = None;
        let mut sticky = false;
        let mut interleaved = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::line(line_no, "expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim().trim_matches(|c| c == '\'' || c == '"');
            let wrap = |e: Error| Error::line(line_no, e);
            match key {
                "in_format" => in_format = Some(Format::by_name(value).map_err(wrap)?),
                "out_format" => out_format = Some(Format::by_name(value).map_err(wrap)?),
                "neab" => neab = Some(value.parse::<i32>().map_err(|e| Error::line(line_no, e))?),
                "fma" => {
                    nfma = Some(
                        value
                            .parse::<usize>()
                            .map_err(|e| Error::line(line_no, e))?,
                    )
                }
                "frmode" => rounding = value.parse().map_err(wrap)?,
                "corder" => c_order = Some(value.parse::<COrder>().map_err(wrap)?),
                "stkbitenabled" => sticky = parse_flag(value).map_err(wrap)?,
                "inter_pattern" => interleaved = parse_flag(value).map_err(wrap)?,
                other => return Err(Error::line(line_no, format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Config(format!("missing key `{k}`"));
        let c_order = c_order.unwrap_or(if interleaved {
            COrder::Late
        } else {
            COrder::Early
        });
        let cfg = TcConfig {
            in_format: in_format.ok_or_else(|| missing("in_format"))?,
            out_format: out_format.ok_or_else(|| missing("out_format"))?,
            neab: neab.ok_or_else(|| missing("neab"))?,
            nfma: nfma.ok_or_else(|| missing("fma"))?,
            final_rounding: rounding,
            c_order,
            interleaved,
            sticky,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the config in the parameter-file syntax.
    pub fn to_params(&self) -> String {
        format!(
            "in_format = {}\nout_format = {}\nneab = {}\nfma = {}\nfrmode = {}\ncorder = {}\nstkbitenabled = {}\ninter_pattern = {}\n",
            self.in_format,
            self.out_format,
            self.neab,
            self.nfma,
            self.final_rounding,
            self.c_order,
            self.sticky as u8,
            self.interleaved as u8
        )
    }
}

impl fmt::Display for TcConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "in={} out={} neab={} f={} nfma={} acc_width={} frmode={} corder={} interleaved={} sticky={}",
            self.in_format,
            self.out_format,
            self.neab,
            self.fraction_bits(),
            self.nfma,
            self.accumulator_width(),
            self.final_rounding,
            self.c_order,
            self.interleaved as u8,
            self.sticky as u8
        )
    }
}

fn parse_flag(value: &str) -> Result<bool> {
    match value {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(Error::Config(format!("expected 0 or 1, got `{other}`"))),
    }
}

pub(crate) fn ceil_log2(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}
