//! Reproducible random operands: one ChaCha stream per `(seed, trial)`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::formats::{quantize_f64, Format, FpValue, Rounding};

/// Standard-normal sampler over an independent stream.
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> NormalStream {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NormalStream { rng }
    }

    /// Uniform on the open interval (0, 1) with 53-bit resolution.
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * 2f64.powi(-53)
    }

    pub fn normal(&mut self) -> f64 {
        inverse_normal_cdf(self.uniform())
    }
}

/// Acklam's rational approximation of the standard normal quantile
/// (relative error below 1.2e-9), deterministic across platforms up to
/// `ln` and `sqrt`.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const LOW: f64 = 0.02425;
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Standard-normal `a`, `b` (length `k`) and `c`, rounded to nearest into
/// their formats. Depends only on `(seed, trial)`.
pub fn gen_random_vector(
    k: usize,
    in_format: Format,
    out_format: Format,
    seed: u64,
    trial: u64,
) -> (Vec<FpValue>, Vec<FpValue>, FpValue) {
    let mut s = NormalStream::new(seed, trial);
    let mut draw = |f| quantize_f64(s.normal(), f, Rounding::Rne);
    let a = (0..k).map(|_| draw(in_format)).collect();
    let b = (0..k).map(|_| draw(in_format)).collect();
    let c = draw(out_format);
    (a, b, c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let x = gen_random_vector(16, Format::Binary16, Format::Binary32, 7, 3);
        let y = gen_random_vector(16, Format::Binary16, Format::Binary32, 7, 3);
        assert_eq!(x, y);
        let z = gen_random_vector(16, Format::Binary16, Format::Binary32, 7, 4);
        assert_ne!(x, z);
    }

    #[test]
    fn quantile_symmetry_and_known_points() {
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
        assert!((inverse_normal_cdf(0.975) - 1.959963985).abs() < 1e-8);
        assert!((inverse_normal_cdf(0.01) + 2.326347874).abs() < 1e-8);
        for p in [2f64.powi(-30), 2f64.powi(-10), 0.25, 0.375] {
            assert!((inverse_normal_cdf(p) + inverse_normal_cdf(1.0 - p)).abs() < 1e-8);
        }
    }

    #[test]
    fn sample_moments() {
        let mut s = NormalStream::new(1, 0);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let x = quantize_f64(s.normal(), Format::Binary16, Rounding::Rne).to_f64();
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((sq / n as f64 - 1.0).abs() < 0.03);
    }
}
