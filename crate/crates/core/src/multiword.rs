//! Multi-word GEMM: binary64 matrices split into several low-precision
//! words whose pairwise products are accumulated on the model.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::TcConfig;
use crate::error::{Error, Result};
use crate::formats::{quantize_f64, Format, FpValue, Rounding};
use crate::gemm::{gemm, MatrixHandle};
use crate::rng::NormalStream;

/// A dense row-major binary64 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix64 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix64 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix64> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "{rows}x{cols} matrix needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix64 { rows, cols, data })
    }

    /// Standard-normal entries drawn row-major from `stream`.
    pub fn normal(rows: usize, cols: usize, stream: &mut NormalStream) -> Matrix64 {
        let data = (0..rows * cols).map(|_| stream.normal()).collect();
        Matrix64 { rows, cols, data }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        self.data
            .chunks(self.cols.max(1))
            .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `self * other` with compensated binary64 dot products.
    pub fn matmul(&self, other: &Matrix64) -> Result<Matrix64> {
        if self.cols != other.rows {
            return Err(Error::Contract(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let n = other.cols;
        let data = (0..self.rows * n)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                let mut sum = 0.0f64;
                let mut comp = 0.0f64;
                for l in 0..self.cols {
                    let x = self.get(i, l) * other.get(l, j);
                    let t = sum + x;
                    comp += if sum.abs() >= x.abs() {
                        (sum - t) + x
                    } else {
                        (x - t) + sum
                    };
                    sum = t;
                }
                sum + comp
            })
            .collect();
        Ok(Matrix64 {
            rows: self.rows,
            cols: n,
            data,
        })
    }
}

impl From<&MatrixHandle> for Matrix64 {
    fn from(m: &MatrixHandle) -> Matrix64 {
        Matrix64 {
            rows: m.rows(),
            cols: m.cols(),
            data: m.to_f64(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WordSplit {
    pub words: Vec<MatrixHandle>,
    /// What the words leave unrepresented: `M - sum(words)`.
    pub residual: Matrix64,
    /// Elements clamped to the largest finite value of the word format.
    pub saturated: usize,
}

const SPLIT_FORMATS: [Format; 3] = [Format::Fp8E5M2, Format::Binary16, Format::Bfloat16];

/// Splits `m` into `w` words: each word is the residual so far rounded to
/// nearest into `fmt`, and the residual is updated in binary64. Residuals
/// beyond the finite range are clamped and counted.
pub fn split_words(m: &Matrix64, fmt: Format, w: usize) -> Result<WordSplit> {
    if w == 0 {
        return Err(Error::Contract("at least one word is required".into()));
    }
    if !SPLIT_FORMATS.contains(&fmt) {
        return Err(Error::Contract(format!(
            "words must be fp8-e5m2, binary16 or bfloat16, not {fmt}"
        )));
    }
    let max = fmt.params().max_finite();
    let mut residual = m.data.clone();
    let mut saturated = 0;
    let mut words = Vec::with_capacity(w);
    for _ in 0..w {
        let data: Vec<FpValue> = residual
            .iter_mut()
            .map(|r| {
                let target = if r.abs() > max {
                    saturated += 1;
                    max.copysign(*r)
                } else {
                    *r
                };
                let q = quantize_f64(target, fmt, Rounding::Rne);
                *r -= q.to_f64();
                q
            })
            .collect();
        words.push(MatrixHandle::new(m.rows, m.cols, fmt, data)?);
    }
    Ok(WordSplit {
        words,
        residual: Matrix64 {
            rows: m.rows,
            cols: m.cols,
            data: residual,
        },
        saturated,
    })
}

/// The product of `w`-word splits of `a` and `b` in `cfg`'s input format.
///
/// Word pairs `(i, j)` with `i + j <= w + 1` are accumulated in ascending
/// `i + j` (then ascending `i`), each as `gemm(1, A_i, B_j, 1, C)` so the
/// running sum travels through the addend path.
pub fn multiword_gemm(
    a: &Matrix64,
    b: &Matrix64,
    w: usize,
    cfg: &TcConfig,
) -> Result<MatrixResult> {
    if cfg.out_format != Format::Binary32 {
        return Err(Error::Contract(format!(
            "multi-word products accumulate in binary32, not {}",
            cfg.out_format
        )));
    }
    if a.cols != b.rows {
        return Err(Error::Contract(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let sa = split_words(a, cfg.in_format, w)?;
    let sb = split_words(b, cfg.in_format, w)?;
    let mut c = MatrixHandle::zeros(a.rows, b.cols, Format::Binary32)?;
    for s in 2..=w + 1 {
        for i in 1..s {
            c = gemm(1.0, &sa.words[i - 1], &sb.words[s - i - 1], 1.0, &c, cfg)?;
        }
    }
    Ok(MatrixResult {
        product: c,
        saturated: sa.saturated + sb.saturated,
    })
}

#[derive(Debug, Clone)]
pub struct MatrixResult {
    pub product: MatrixHandle,
    /// Saturated elements across both splits.
    pub saturated: usize,
}

/// `||C_hat - C_ref|| / (||A|| ||B||)` in the infinity norm; `None` when the
/// denominator vanishes.
pub fn error_norm(
    c_hat: &Matrix64,
    c_ref: &Matrix64,
    a: &Matrix64,
    b: &Matrix64,
) -> Result<Option<f64>> {
    if c_hat.rows != c_ref.rows || c_hat.cols != c_ref.cols {
        return Err(Error::Contract(format!(
            "cannot compare {}x{} with {}x{}",
            c_hat.rows, c_hat.cols, c_ref.rows, c_ref.cols
        )));
    }
    let diff = Matrix64 {
        rows: c_hat.rows,
        cols: c_hat.cols,
        data: c_hat
            .data
            .iter()
            .zip(&c_ref.data)
            .map(|(x, y)| x - y)
            .collect(),
    };
    let denom = a.norm_inf() * b.norm_inf();
    Ok((denom != 0.0).then(|| diff.norm_inf() / denom))
}

/// One model's error curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub model: String,
    pub format: Format,
    pub words: usize,
    /// `(n, error)` in grid order.
    pub points: Vec<(usize, Option<f64>)>,
    pub saturated: usize,
}

impl Series {
    pub fn file_name(&self) -> String {
        format!(
            "matmul_test_{}_binary32_words_{}_model_{}.dat",
            self.format, self.words, self.model
        )
    }

    pub fn render(&self) -> String {
        let mut out = String::from("n error\n");
        for (n, e) in &self.points {
            match e {
                Some(e) => out.push_str(&format!("{n} {e:e}\n")),
                None => out.push_str(&format!("{n} nan\n")),
            }
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(self.file_name());
        fs::write(&path, self.render())?;
        Ok(path)
    }
}

/// Error of `w`-word products of `10 x n` by `n x 10` standard-normal
/// matrices for each model and each `n`. The matrices for a given `n` come
/// from stream `n` of `seed` and are shared by all models.
pub fn run_experiment(
    fmt: Format,
    words: usize,
    models: &[(String, TcConfig)],
    n_grid: &[usize],
    seed: u64,
) -> Result<Vec<Series>> {
    for (name, cfg) in models {
        if cfg.in_format != fmt {
            return Err(Error::Contract(format!(
                "model {name} takes {}, not {fmt}",
                cfg.in_format
            )));
        }
    }
    let inputs: Vec<(Matrix64, Matrix64, Matrix64)> = n_grid
        .par_iter()
        .map(|&n| {
            let mut s = NormalStream::new(seed, n as u64);
            let a = Matrix64::normal(10, n, &mut s);
            let b = Matrix64::normal(n, 10, &mut s);
            let c = a.matmul(&b)?;
            Ok((a, b, c))
        })
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| (0..n_grid.len()).map(move |i| (m, i)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(m, i)| {
            let (a, b, c_ref) = &inputs[i];
            let r = multiword_gemm(a, b, words, &models[m].1)?;
            let err = error_norm(&Matrix64::from(&r.product), c_ref, a, b)?;
            Ok((err, r.saturated))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(models
        .iter()
        .enumerate()
        .map(|(m, (name, _))| {
            let cell = &results[m * n_grid.len()..(m + 1) * n_grid.len()];
            Series {
                model: name.clone(),
                format: fmt,
                words,
                points: n_grid
                    .iter()
                    .zip(cell)
                    .map(|(&n, (e, _))| (n, *e))
                    .collect(),
                saturated: cell.iter().map(|(_, s)| s).sum(),
            }
        })
        .collect())
}

/// Logarithmic grid `10^lo ..= 10^hi` with `per_decade` points per decade.
pub fn log_grid(lo: u32, hi: u32, per_decade: u32) -> Vec<usize> {
    let steps = (hi - lo) * per_decade;
    let mut grid: Vec<usize> = (0..=steps)
        .map(|s| 10f64.powf(lo as f64 + s as f64 / per_decade as f64).round() as usize)
        .collect();
    grid.dedup();
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{lookup, Gpu, PresetKey};

    fn one(x: f64) -> Matrix64 {
        Matrix64::new(1, 1, vec![x]).unwrap()
    }

    #[test]
    fn pi_in_three_half_words() {
        let s = split_words(&one(std::f64::consts::PI), Format::Binary16, 3).unwrap();
        let sum: f64 = s.words.iter().map(|w| w.get(0, 0).to_f64()).sum();
        // The third word falls in the binary16 subnormal range, which caps
        // the reconstruction near 2^-26.7 (value cross-checked with numpy).
        let rel = ((sum - std::f64::consts::PI) / std::f64::consts::PI).abs();
        assert_eq!(rel, 8.854787497358085e-9);
        assert_eq!(s.words[2].get(0, 0).to_f64(), 1.7881393432617188e-7);
        assert_eq!(sum + s.residual.data[0], std::f64::consts::PI);
        assert_eq!(s.saturated, 0);
    }

    #[test]
    fn representable_input_needs_one_word() {
        let s = split_words(&one(1.5), Format::Bfloat16, 4).unwrap();
        assert_eq!(s.words[0].get(0, 0).to_f64(), 1.5);
        assert!(s.words[1..].iter().all(|w| w.get(0, 0).is_zero()));
    }

    #[test]
    fn residuals_shrink_and_overflow_saturates() {
        let m = Matrix64::new(1, 3, vec![0.1, -7e5, 1e-3]).unwrap();
        let mut prev = m.data.iter().map(|x| x.abs()).collect::<Vec<_>>();
        for w in 1..=4 {
            let s = split_words(&m, Format::Fp8E5M2, w).unwrap();
            let cur: Vec<f64> = s.residual.data.iter().map(|x| x.abs()).collect();
            assert!(cur.iter().zip(&prev).all(|(c, p)| c <= p));
            assert_eq!(s.saturated, w);
            prev = cur;
        }
        assert!(split_words(&m, Format::Binary32, 1).is_err());
        assert!(split_words(&m, Format::Binary16, 0).is_err());
    }

    #[test]
    fn hand_computed_error_norm() {
        let a = Matrix64::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Matrix64::new(2, 2, vec![1.0; 4]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(error_norm(&c, &c, &a, &b).unwrap(), Some(0.0));
        let mut off = c.clone();
        off.data[3] += 2f64.powi(-10);
        assert_eq!(error_norm(&off, &c, &a, &b).unwrap(), Some(2f64.powi(-11)));
        let z = Matrix64::new(2, 2, vec![0.0; 4]).unwrap();
        assert_eq!(error_norm(&c, &c, &z, &b).unwrap(), None);
    }

    #[test]
    fn single_word_is_plain_gemm() {
        let cfg = lookup(&PresetKey::new(
            Gpu::A100,
            Format::Binary16,
            Format::Binary32,
        ))
        .unwrap();
        let mut s = NormalStream::new(4, 0);
        let a = Matrix64::normal(3, 20, &mut s);
        let b = Matrix64::normal(20, 2, &mut s);
        let got = multiword_gemm(&a, &b, 1, &cfg).unwrap().product;
        let qa = MatrixHandle::from_f64(3, 20, &a.data, Format::Binary16).unwrap();
        let qb = MatrixHandle::from_f64(20, 2, &b.data, Format::Binary16).unwrap();
        let z = MatrixHandle::zeros(3, 2, Format::Binary32).unwrap();
        assert_eq!(got, gemm(1.0, &qa, &qb, 0.0, &z, &cfg).unwrap());
    }

    #[test]
    fn series_file_layout() {
        let cfg = lookup(&PresetKey::new(
            Gpu::B200,
            Format::Binary16,
            Format::Binary32,
        ))
        .unwrap();
        let grid = [10, 30];
        let models = [("b200".to_string(), cfg)];
        let a = run_experiment(Format::Binary16, 2, &models, &grid, 5).unwrap();
        let b = run_experiment(Format::Binary16, 2, &models, &grid, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a[0].file_name(),
            "matmul_test_binary16_binary32_words_2_model_b200.dat"
        );
        let text = a[0].render();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + grid.len());
        assert_eq!(lines[0], "n error");
        assert!(lines[1].starts_with("10 "));
    }

    #[test]
    fn grid_is_logarithmic() {
        assert_eq!(log_grid(1, 3, 1), vec![10, 100, 1000]);
        assert_eq!(log_grid(1, 2, 2), vec![10, 32, 100]);
    }
}
