//! Devices under test: anything that computes `d = a . b + c` over fixed
//! formats and can be probed as a black box.

use crate::config::TcConfig;
use crate::error::Result;
use crate::formats::{Format, FpValue};
use crate::{engine, oracle};

pub trait Dut: Sync {
    fn name(&self) -> String;
    fn in_format(&self) -> Format;
    fn out_format(&self) -> Format;
    /// Longest vector the device accepts.
    fn max_k(&self) -> usize;
    fn eval(&self, a: &[FpValue], b: &[FpValue], c: &FpValue) -> Result<FpValue>;
    /// Granularity used when replaying prefixes to localize a mismatch.
    fn chunk_hint(&self) -> Option<usize> {
        None
    }
}

/// Default vector limit for model-backed devices.
pub const DEFAULT_MAX_K: usize = 1024;

#[derive(Debug, Clone)]
pub struct EngineDut {
    pub label: String,
    pub cfg: TcConfig,
    pub max_k: usize,
}

impl EngineDut {
    pub fn new(label: impl Into<String>, cfg: TcConfig) -> EngineDut {
        EngineDut {
            label: label.into(),
            cfg,
            max_k: DEFAULT_MAX_K,
        }
    }
}

impl Dut for EngineDut {
    fn name(&self) -> String {
        format!("engine:{}", self.label)
    }
    fn in_format(&self) -> Format {
        self.cfg.in_format
    }
    fn out_format(&self) -> Format {
        self.cfg.out_format
    }
    fn max_k(&self) -> usize {
        self.max_k
    }
    fn eval(&self, a: &[FpValue], b: &[FpValue], c: &FpValue) -> Result<FpValue> {
        engine::inner_product(a, b, c, &self.cfg)
    }
    fn chunk_hint(&self) -> Option<usize> {
        Some(self.cfg.nfma)
    }
}

#[derive(Debug, Clone)]
pub struct OracleDut {
    pub label: String,
    pub cfg: TcConfig,
    pub max_k: usize,
}

impl OracleDut {
    pub fn new(label: impl Into<String>, cfg: TcConfig) -> OracleDut {
        OracleDut {
            label: label.into(),
            cfg,
            max_k: DEFAULT_MAX_K,
        }
    }
}

impl Dut for OracleDut {
    fn name(&self) -> String {
        format!("oracle:{}", self.label)
    }
    fn in_format(&self) -> Format {
        self.cfg.in_format
    }
    fn out_format(&self) -> Format {
        self.cfg.out_format
    }
    fn max_k(&self) -> usize {
        self.max_k
    }
    fn eval(&self, a: &[FpValue], b: &[FpValue], c: &FpValue) -> Result<FpValue> {
        oracle::inner_product(a, b, c, &self.cfg)
    }
    fn chunk_hint(&self) -> Option<usize> {
        Some(self.cfg.nfma)
    }
}

/// Wraps a closure as a device.
pub struct FnDut<F> {
    pub label: String,
    pub in_format: Format,
    pub out_format: Format,
    pub max_k: usize,
    pub f: F,
}

impl<F> Dut for FnDut<F>
where
    F: Fn(&[FpValue], &[FpValue], &FpValue) -> Result<FpValue> + Sync,
{
    fn name(&self) -> String {
        self.label.clone()
    }
    fn in_format(&self) -> Format {
        self.in_format
    }
    fn out_format(&self) -> Format {
        self.out_format
    }
    fn max_k(&self) -> usize {
        self.max_k
    }
    fn eval(&self, a: &[FpValue], b: &[FpValue], c: &FpValue) -> Result<FpValue> {
        (self.f)(a, b, c)
    }
}
