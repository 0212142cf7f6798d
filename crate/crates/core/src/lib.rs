//! Bit-accurate emulation of tensor-core inner products and GEMM.

pub mod config;
pub mod detect;
pub mod dut;
pub mod engine;
pub mod error;
pub mod formats;
pub mod gemm;
pub mod issm;
pub mod multiword;
pub mod oracle;
pub mod presets;
pub mod rng;

pub use config::{COrder, TcConfig};
pub use detect::{run_all, FeatureReport};
pub use dut::{Dut, EngineDut, FnDut, OracleDut};
pub use engine::{accumulate, block_fma, exact_product, inner_product, ExactProduct};
pub use error::{Error, Result};
pub use formats::{parse_hexfloat, render_hexfloat, Format, FpValue, Rounding};
pub use gemm::{gemm, MatrixHandle};
pub use presets::{lookup, Fp8Path, Gpu, PresetKey};
