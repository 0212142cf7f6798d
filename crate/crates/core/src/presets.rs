//! Registry of the modelled GPUs and their measured features.

use std::fmt;
use std::str::FromStr;

use crate::config::{COrder, TcConfig};
use crate::error::{Error, Result};
use crate::formats::{Format, Rounding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gpu {
    V100,
    A100,
    A2,
    A30,
    L40s,
    AdaRtx1000,
    H100,
    H200,
    B200,
    /// B200 with round-to-nearest after normalization instead of truncation.
    B200Rn,
}

impl Gpu {
    pub const ALL: [Gpu; 10] = [
        Gpu::V100,
        Gpu::A100,
        Gpu::A2,
        Gpu::A30,
        Gpu::L40s,
        Gpu::AdaRtx1000,
        Gpu::H100,
        Gpu::H200,
        Gpu::B200,
        Gpu::B200Rn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Gpu::V100 => "v100",
            Gpu::A100 => "a100",
            Gpu::A2 => "a2",
            Gpu::A30 => "a30",
            Gpu::L40s => "l40s",
            Gpu::AdaRtx1000 => "ada_rtx1000",
            Gpu::H100 => "h100",
            Gpu::H200 => "h200",
            Gpu::B200 => "b200",
            Gpu::B200Rn => "b200rn",
        }
    }

    /// The GPU whose behaviour this one shares.
    pub fn behaves_like(self) -> Gpu {
        match self {
            Gpu::A2 | Gpu::A30 => Gpu::A100,
            Gpu::AdaRtx1000 => Gpu::L40s,
            Gpu::H200 => Gpu::H100,
            other => other,
        }
    }
}

impl fmt::Display for Gpu {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Gpu {
    type Err = Error;

    fn from_str(s: &str) -> Result<Gpu> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        let key = match key.as_str() {
            "ada" | "rtx1000" | "ada_rtx_1000" => "ada_rtx1000",
            "b200_rn" => "b200rn",
            other => other,
        }
        .to_string();
        Gpu::ALL
            .into_iter()
            .find(|g| g.name() == key)
            .ok_or_else(|| Error::Lookup {
                key: s.to_string(),
                valid: Gpu::ALL
                    .iter()
                    .map(|g| g.name())
                    .collect::<Vec<_>>()
                    .join(", "),
            })
    }
}

/// How fp8 inputs reach the tensor core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fp8Path {
    /// `mma` instructions: fp8 converted to fp16 and run on the fp16 unit.
    MmaViaFp16,
    /// Native fp8 instructions with 13 fractional alignment bits.
    NativeQgmma,
}

impl Fp8Path {
    pub fn name(self) -> &'static str {
        match self {
            Fp8Path::MmaViaFp16 => "mma_via_fp16",
            Fp8Path::NativeQgmma => "native_qgmma",
        }
    }
}

impl fmt::Display for Fp8Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Fp8Path {
    type Err = Error;

    fn from_str(s: &str) -> Result<Fp8Path> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mma_via_fp16" | "mma" | "hmma" => Ok(Fp8Path::MmaViaFp16),
            "native_qgmma" | "native" | "qgmma" => Ok(Fp8Path::NativeQgmma),
            _ => Err(Error::Lookup {
                key: s.to_string(),
                valid: "mma_via_fp16, native_qgmma".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PresetKey {
    pub gpu: Gpu,
    pub in_format: Format,
    pub out_format: Format,
    /// Only meaningful for fp8 inputs; `None` picks the GPU's default path.
    pub fp8_path: Option<Fp8Path>,
}

impl PresetKey {
    pub fn new(gpu: Gpu, in_format: Format, out_format: Format) -> PresetKey {
        PresetKey {
            gpu,
            in_format,
            out_format,
            fp8_path: None,
        }
    }

    pub fn with_path(mut self, path: Fp8Path) -> PresetKey {
        self.fp8_path = Some(path);
        self
    }
}

impl fmt::Display for PresetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}->{}", self.gpu, self.in_format, self.out_format)?;
        if let Some(p) = self.fp8_path {
            write!(f, " ({p})")?;
        }
        Ok(())
    }
}

/// fp8 paths a GPU exposes, default first.
fn fp8_paths(gpu: Gpu) -> &'static [Fp8Path] {
    match gpu.behaves_like() {
        Gpu::L40s => &[Fp8Path::NativeQgmma],
        Gpu::H100 => &[Fp8Path::NativeQgmma, Fp8Path::MmaViaFp16],
        Gpu::B200 | Gpu::B200Rn => &[Fp8Path::MmaViaFp16],
        _ => &[],
    }
}

fn input_formats(gpu: Gpu) -> &'static [Format] {
    use Format::*;
    match gpu.behaves_like() {
        Gpu::V100 => &[Binary16],
        Gpu::A100 => &[Binary16, Bfloat16, Tf19],
        _ => &[Fp8E4M3, Fp8E5M2, Binary16, Bfloat16, Tf19],
    }
}

/// Every key that resolves, with fp8 paths spelled out.
pub fn supported() -> Vec<PresetKey> {
    let mut keys = Vec::new();
    for gpu in Gpu::ALL {
        for &input in input_formats(gpu) {
            let outs: &[Format] = match input {
                Format::Binary16 | Format::Fp8E4M3 | Format::Fp8E5M2 => {
                    &[Format::Binary32, Format::Binary16]
                }
                _ => &[Format::Binary32],
            };
            for &out in outs {
                let key = PresetKey::new(gpu, input, out);
                if input.is_fp8() {
                    keys.extend(fp8_paths(gpu).iter().map(|&p| key.with_path(p)));
                } else {
                    keys.push(key);
                }
            }
        }
    }
    keys
}

fn lookup_error(key: &PresetKey) -> Error {
    let valid = supported()
        .iter()
        .map(|k| k.to_string())
        .collect::<Vec<_>>()
        .join("; ");
    Error::Lookup {
        key: key.to_string(),
        valid,
    }
}

pub fn lookup(key: &PresetKey) -> Result<TcConfig> {
    let gpu = key.gpu;
    let input = key.in_format;
    let out = key.out_format;
    if !input_formats(gpu).contains(&input) {
        return Err(lookup_error(key));
    }
    let fp16_out_ok = matches!(input, Format::Binary16 | Format::Fp8E4M3 | Format::Fp8E5M2);
    if !(out == Format::Binary32 || (out == Format::Binary16 && fp16_out_ok)) {
        return Err(lookup_error(key));
    }
    let path = if input.is_fp8() {
        let paths = fp8_paths(gpu);
        let path = key.fp8_path.unwrap_or(paths[0]);
        if !paths.contains(&path) {
            return Err(lookup_error(key));
        }
        Some(path)
    } else if key.fp8_path.is_some() {
        return Err(lookup_error(key));
    } else {
        None
    };

    let base = gpu.behaves_like();
    let mut cfg = match (base, path, input) {
        (_, Some(Fp8Path::NativeQgmma), _) => {
            let nfma = if base == Gpu::H100 { 32 } else { 16 };
            TcConfig::new(input, out, -10, nfma)
        }
        (_, Some(Fp8Path::MmaViaFp16), _) => TcConfig::new(input, out, 2, 16).with_interleave(true),
        (Gpu::V100, None, _) => TcConfig::new(input, out, 0, 4),
        (Gpu::A100 | Gpu::L40s, None, Format::Tf19) => TcConfig::new(input, out, 1, 4),
        (Gpu::A100 | Gpu::L40s, None, _) => TcConfig::new(input, out, 1, 8),
        (_, None, Format::Tf19) => TcConfig::new(input, out, 2, 8),
        (_, None, _) => TcConfig::new(input, out, 2, 16),
    };
    if out == Format::Binary16 || gpu == Gpu::B200Rn {
        cfg = cfg.with_rounding(Rounding::Rne);
    }
    debug_assert!(cfg.validate().is_ok());
    Ok(cfg)
}

/// One row of the measured feature summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableRow {
    pub gpus: &'static [Gpu],
    pub inputs: &'static [Format],
    pub outputs: &'static [Format],
    pub fp8_path: Option<Fp8Path>,
    /// Fractional bits of the product alignment window.
    pub alignment_fraction_bits: i32,
    pub accumulator_width: u32,
    pub nfma: usize,
    /// The last rounding applied (the late `c` addition when `c` is late).
    pub final_rounding: Rounding,
    pub c_order: COrder,
    pub interleaved: bool,
}

impl TableRow {
    pub fn covers(&self, key: &PresetKey) -> bool {
        let path_ok = !key.in_format.is_fp8() || key.fp8_path == self.fp8_path;
        self.gpus.contains(&key.gpu)
            && self.inputs.contains(&key.in_format)
            && self.outputs.contains(&key.out_format)
            && path_ok
    }

    /// Renders the row in the summary's column order.
    pub fn render(&self) -> String {
        render_row(
            Some(self.alignment_fraction_bits),
            Some(self.accumulator_width),
            Some(self.nfma),
            &rounding_label(self.final_rounding),
            Some(self.c_order),
            Some(self.interleaved),
        )
    }
}

pub(crate) fn rounding_label(mode: Rounding) -> String {
    match mode {
        Rounding::Rz => "Trunc".to_string(),
        other => other.name().to_ascii_uppercase(),
    }
}

pub(crate) fn render_row(
    f: Option<i32>,
    acc: Option<u32>,
    nfma: Option<usize>,
    rounding: &str,
    c_order: Option<COrder>,
    interleaved: Option<bool>,
) -> String {
    fn show<T: fmt::Display>(x: Option<T>) -> String {
        x.map_or_else(|| "unknown".to_string(), |v| v.to_string())
    }
    let inter = interleaved.map(|i| if i { "yes" } else { "no" });
    format!(
        "(2,{}) | {} | {} | {rounding} | {} | {}",
        show(f),
        show(acc),
        show(nfma),
        show(c_order),
        show(inter)
    )
}

const FP8: &[Format] = &[Format::Fp8E4M3, Format::Fp8E5M2];
const FP16: &[Format] = &[Format::Binary16];
const HALVES: &[Format] = &[Format::Binary16, Format::Bfloat16];
const TF19: &[Format] = &[Format::Tf19];
const OUT32: &[Format] = &[Format::Binary32];
const OUT16: &[Format] = &[Format::Binary16];
const BOTH_OUT: &[Format] = &[Format::Binary16, Format::Binary32];

const HOPPER: &[Gpu] = &[Gpu::H100, Gpu::H200];
const HOPPER_BLACKWELL: &[Gpu] = &[Gpu::H100, Gpu::H200, Gpu::B200];
const ADA: &[Gpu] = &[Gpu::L40s, Gpu::AdaRtx1000];
const AMPERE: &[Gpu] = &[Gpu::A100, Gpu::A2, Gpu::A30];
const VOLTA: &[Gpu] = &[Gpu::V100];
const BLACKWELL_RN: &[Gpu] = &[Gpu::B200Rn];

const fn row(
    gpus: &'static [Gpu],
    inputs: &'static [Format],
    outputs: &'static [Format],
    fp8_path: Option<Fp8Path>,
    alignment_fraction_bits: i32,
    accumulator_width: u32,
    nfma: usize,
    final_rounding: Rounding,
    c_order: COrder,
    interleaved: bool,
) -> TableRow {
    TableRow {
        gpus,
        inputs,
        outputs,
        fp8_path,
        alignment_fraction_bits,
        accumulator_width,
        nfma,
        final_rounding,
        c_order,
        interleaved,
    }
}

use COrder::{Early, Late};
use Rounding::{Rne, Rz};

const NATIVE: Option<Fp8Path> = Some(Fp8Path::NativeQgmma);
const MMA: Option<Fp8Path> = Some(Fp8Path::MmaViaFp16);

/// The measured rows, the fp16-output rows for fp16 inputs, and the
/// round-to-nearest B200 variant.
pub const TABLE: &[TableRow] = &[
    row(HOPPER, FP8, OUT32, NATIVE, 13, 21, 32, Rz, Early, false),
    row(ADA, FP8, OUT32, NATIVE, 13, 20, 16, Rz, Early, false),
    row(HOPPER, FP8, OUT16, NATIVE, 13, 21, 32, Rne, Early, false),
    row(ADA, FP8, OUT16, NATIVE, 13, 20, 16, Rne, Early, false),
    row(
        HOPPER_BLACKWELL,
        FP8,
        BOTH_OUT,
        MMA,
        25,
        32,
        16,
        Rne,
        Late,
        true,
    ),
    row(
        HOPPER_BLACKWELL,
        HALVES,
        OUT32,
        None,
        25,
        32,
        16,
        Rz,
        Early,
        false,
    ),
    row(ADA, HALVES, OUT32, None, 24, 30, 8, Rz, Early, false),
    row(AMPERE, HALVES, OUT32, None, 24, 30, 8, Rz, Early, false),
    row(VOLTA, FP16, OUT32, None, 23, 28, 4, Rz, Early, false),
    row(
        HOPPER_BLACKWELL,
        TF19,
        OUT32,
        None,
        25,
        31,
        8,
        Rz,
        Early,
        false,
    ),
    row(ADA, TF19, OUT32, None, 24, 29, 4, Rz, Early, false),
    row(AMPERE, TF19, OUT32, None, 24, 29, 4, Rz, Early, false),
    row(
        HOPPER_BLACKWELL,
        FP16,
        OUT16,
        None,
        25,
        32,
        16,
        Rne,
        Early,
        false,
    ),
    row(ADA, FP16, OUT16, None, 24, 30, 8, Rne, Early, false),
    row(AMPERE, FP16, OUT16, None, 24, 30, 8, Rne, Early, false),
    row(VOLTA, FP16, OUT16, None, 23, 28, 4, Rne, Early, false),
    row(
        BLACKWELL_RN,
        FP8,
        BOTH_OUT,
        MMA,
        25,
        32,
        16,
        Rne,
        Late,
        true,
    ),
    row(
        BLACKWELL_RN,
        HALVES,
        OUT32,
        None,
        25,
        32,
        16,
        Rne,
        Early,
        false,
    ),
    row(
        BLACKWELL_RN,
        TF19,
        OUT32,
        None,
        25,
        31,
        8,
        Rne,
        Early,
        false,
    ),
    row(
        BLACKWELL_RN,
        FP16,
        OUT16,
        None,
        25,
        32,
        16,
        Rne,
        Early,
        false,
    ),
];

/// The table row describing `key`, with the default fp8 path filled in.
pub fn table_row(key: &PresetKey) -> Option<&'static TableRow> {
    let mut key = *key;
    if key.in_format.is_fp8() && key.fp8_path.is_none() {
        key.fp8_path = fp8_paths(key.gpu).first().copied();
    }
    TABLE.iter().find(|r| r.covers(&key))
}
