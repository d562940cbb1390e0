//! Discrete regression and latent normalization: symlog/symexp, two-hot
//! bins, soft cross-entropy, simplex normalization, and percentile scaling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::kernels;
pub use crate::autodiff::kernels::{symexp, symlog};

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("bin grid needs at least two bins and low < high, got {bins} bins over [{low}, {high}]")]
    InvalidGrid { bins: usize, low: f64, high: f64 },
    #[error("latent width {width} is not divisible by simplex size {group}")]
    IndivisibleLatent { width: usize, group: usize },
    #[error("expected {expected} weights, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },
}

/// Uniformly spaced bin centers in symlog space.
#[derive(Clone, Debug, PartialEq)]
pub struct BinGrid {
    centers: Vec<f64>,
    low: f64,
    high: f64,
}

impl BinGrid {
    pub const DEFAULT_BINS: usize = 101;
    pub const DEFAULT_RANGE: f64 = 20.0;

    pub fn new(num_bins: usize, low: f64, high: f64) -> Result<Self, CodecError> {
        if num_bins < 2 || !(low < high) || !low.is_finite() || !high.is_finite() {
            return Err(CodecError::InvalidGrid { bins: num_bins, low, high });
        }
        let step = (high - low) / (num_bins - 1) as f64;
        let mut centers: Vec<f64> = (0..num_bins).map(|i| low + step * i as f64).collect();
        centers[num_bins - 1] = high;
        Ok(Self { centers, low, high })
    }

    /// Explicit centers; must be strictly increasing.
    pub fn from_centers(centers: Vec<f64>) -> Result<Self, CodecError> {
        let ok = centers.len() >= 2 && centers.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(CodecError::InvalidGrid {
                bins: centers.len(),
                low: centers.first().copied().unwrap_or(f64::NAN),
                high: centers.last().copied().unwrap_or(f64::NAN),
            });
        }
        let (low, high) = (centers[0], *centers.last().unwrap());
        Ok(Self { centers, low, high })
    }

    pub fn num_bins(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn range(&self) -> (f64, f64) {
        (self.low, self.high)
    }

    /// Largest magnitude any decoded value can take.
    pub fn max_decoded(&self) -> f64 {
        symexp(self.low).abs().max(symexp(self.high).abs())
    }
}

impl Default for BinGrid {
    fn default() -> Self {
        Self::new(Self::DEFAULT_BINS, -Self::DEFAULT_RANGE, Self::DEFAULT_RANGE).unwrap()
    }
}

/// Two-hot weights of a value that is already in symlog space.
pub fn twohot_encode_symlog(x: f64, grid: &BinGrid) -> Vec<f64> {
    let b = grid.centers();
    let n = b.len();
    let mut w = vec![0.0; n];
    if !(x > b[0]) {
        w[0] = 1.0;
        return w;
    }
    if x >= b[n - 1] {
        w[n - 1] = 1.0;
        return w;
    }
    // k counts centers <= x; the lower neighbour is b[k - 1]
    let k = b.partition_point(|&c| c <= x);
    let (lo, hi) = (k - 1, k);
    let width = b[hi] - b[lo];
    w[lo] = (b[hi] - x).abs() / width;
    w[hi] = (b[lo] - x).abs() / width;
    w
}

/// Two-hot weights of a raw value `r`, encoded at `symlog(r)`.
pub fn twohot_encode(r: f64, grid: &BinGrid) -> Vec<f64> {
    twohot_encode_symlog(symlog(r), grid)
}

/// Decodes a probability vector: `symexp(sum p_i b_i)`.
pub fn twohot_decode_probs(probs: &[f64], grid: &BinGrid) -> Result<f64, CodecError> {
    check_width(probs.len(), grid)?;
    Ok(symexp(probs.iter().zip(grid.centers()).map(|(p, c)| p * c).sum()))
}

/// Decodes logits (softmax applied first).
pub fn twohot_decode_logits(logits: &[f64], grid: &BinGrid) -> Result<f64, CodecError> {
    check_width(logits.len(), grid)?;
    let mut p = logits.to_vec();
    kernels::softmax_inplace(&mut p);
    twohot_decode_probs(&p, grid)
}

fn check_width(len: usize, grid: &BinGrid) -> Result<(), CodecError> {
    if len != grid.num_bins() {
        return Err(CodecError::WidthMismatch { expected: grid.num_bins(), actual: len });
    }
    Ok(())
}

/// `-sum_i twohot(target)_i * log softmax(logits)_i`
pub fn soft_cross_entropy(logits: &[f64], target: f64, grid: &BinGrid) -> Result<f64, CodecError> {
    check_width(logits.len(), grid)?;
    let t = twohot_encode(target, grid);
    let lse = kernels::logsumexp(logits);
    Ok(logits.iter().zip(&t).map(|(l, w)| -w * (l - lse)).sum())
}

/// Analytic gradient of [`soft_cross_entropy`] with respect to the logits.
pub fn soft_cross_entropy_grad(logits: &[f64], target: f64, grid: &BinGrid) -> Result<Vec<f64>, CodecError> {
    check_width(logits.len(), grid)?;
    let t = twohot_encode(target, grid);
    let mut p = logits.to_vec();
    kernels::softmax_inplace(&mut p);
    Ok(p.iter().zip(&t).map(|(pi, ti)| pi - ti).collect())
}

/// Softmax over each consecutive group of `group` entries.
pub fn sem_norm(z: &[f64], group: usize) -> Result<Vec<f64>, CodecError> {
    if group == 0 || z.len() % group != 0 {
        return Err(CodecError::IndivisibleLatent { width: z.len(), group });
    }
    let mut out = z.to_vec();
    kernels::group_softmax_inplace(&mut out, group);
    Ok(out)
}

/// Linear-interpolated percentile (`q` in `[0, 100]`) of unsorted data.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty data");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// EMA of the 5th-95th percentile spread of Q-value batches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercentileScaler {
    pub scale: f64,
    pub smoothing: f64,
    pub floor: f64,
}

impl Default for PercentileScaler {
    fn default() -> Self {
        Self { scale: 1.0, smoothing: 0.99, floor: 1e-2 }
    }
}

impl PercentileScaler {
    pub fn update(&mut self, q_batch: &[f64]) {
        if q_batch.is_empty() {
            return;
        }
        let spread = percentile(q_batch, 95.0) - percentile(q_batch, 5.0);
        self.scale = (self.smoothing * self.scale + (1.0 - self.smoothing) * spread).max(self.floor);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three() -> BinGrid {
        BinGrid::from_centers(vec![-1.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn symlog_symexp_reference_values() {
        assert_eq!(symlog(0.0), 0.0);
        assert!((symexp(1.0) - (std::f64::consts::E - 1.0)).abs() < 1e-15);
        assert!((symexp(symlog(-37.5)) + 37.5).abs() < 1e-9);
        assert_eq!(symlog(-2.0), -symlog(2.0));
    }

    #[test]
    fn twohot_exact_and_midpoint() {
        let g = three();
        assert_eq!(twohot_encode_symlog(0.0, &g), vec![0.0, 1.0, 0.0]);
        assert_eq!(twohot_encode_symlog(0.5, &g), vec![0.0, 0.5, 0.5]);
        assert_eq!(twohot_encode_symlog(-0.25, &g), vec![0.25, 0.75, 0.0]);
        // symlog(r) = 0 for r = 0
        assert_eq!(twohot_encode(0.0, &g), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn twohot_clamps_out_of_range() {
        let g = three();
        assert_eq!(twohot_encode_symlog(7.0, &g), vec![0.0, 0.0, 1.0]);
        assert_eq!(twohot_encode_symlog(1.0, &g), vec![0.0, 0.0, 1.0]);
        assert_eq!(twohot_encode_symlog(-3.0, &g), vec![1.0, 0.0, 0.0]);
        assert_eq!(twohot_encode(1e9, &BinGrid::default())[100], 1.0);
    }

    #[test]
    fn decode_reference_cases() {
        let g = BinGrid::default();
        let mut onehot = vec![0.0; 101];
        onehot[60] = 1.0;
        let c = g.centers()[60];
        assert!((twohot_decode_probs(&onehot, &g).unwrap() - symexp(c)).abs() < 1e-12);
        let uniform = vec![1.0 / 101.0; 101];
        assert!(twohot_decode_probs(&uniform, &g).unwrap().abs() < 1e-9);
        assert!(twohot_decode_logits(&vec![0.0; 101], &g).unwrap().abs() < 1e-9);
        let r = 3.7;
        assert!((twohot_decode_probs(&twohot_encode(r, &g), &g).unwrap() - r).abs() < 1e-6);
        assert!(twohot_decode_probs(&[1.0], &g).is_err());
    }

    #[test]
    fn soft_ce_limits_and_gradient() {
        let g = BinGrid::new(11, -5.0, 5.0).unwrap();
        let uniform = vec![0.3; 11];
        assert!((soft_cross_entropy(&uniform, 2.0, &g).unwrap() - (11f64).ln()).abs() < 1e-12);
        // target at a center, logits concentrated there
        let target = symexp(g.centers()[7]);
        let mut sharp = vec![0.0; 11];
        sharp[7] = 60.0;
        assert!(soft_cross_entropy(&sharp, target, &g).unwrap() < 1e-20);
        let logits: Vec<f64> = (0..11).map(|i| (i as f64 * 0.9).sin()).collect();
        let grad = soft_cross_entropy_grad(&logits, 1.3, &g).unwrap();
        for i in 0..11 {
            let h = 1e-6;
            let mut lp = logits.clone();
            lp[i] += h;
            let mut lm = logits.clone();
            lm[i] -= h;
            let fd = (soft_cross_entropy(&lp, 1.3, &g).unwrap() - soft_cross_entropy(&lm, 1.3, &g).unwrap()) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn sem_norm_cases() {
        let out = sem_norm(&[0.0; 16], 8).unwrap();
        assert!(out.iter().all(|&v| (v - 0.125).abs() < 1e-15));
        assert_eq!(sem_norm(&[0.0; 10], 8), Err(CodecError::IndivisibleLatent { width: 10, group: 8 }));
        let z: Vec<f64> = (0..16).map(|i| (i as f64).sqrt()).collect();
        let mut shifted = z.clone();
        shifted[..8].iter_mut().for_each(|v| *v += 3.5);
        let a = sem_norm(&z, 8).unwrap();
        let b = sem_norm(&shifted, 8).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn percentile_scaler_fixed_point_and_floor() {
        let mut s = PercentileScaler { scale: 10.0, ..Default::default() };
        assert_eq!(s.smoothing, 0.99);
        // 0..=100 step 1: p95 - p5 = 90; use values spanning exactly 10 instead
        let batch: Vec<f64> = (0..=100).map(|i| i as f64 / 9.0).collect();
        let spread = percentile(&batch, 95.0) - percentile(&batch, 5.0);
        assert!((spread - 10.0).abs() < 1e-12);
        s.update(&batch);
        assert!((s.scale - 10.0).abs() < 1e-12);

        let mut s = PercentileScaler { scale: 1.0, ..Default::default() };
        let mut prev = s.scale;
        for _ in 0..2000 {
            s.update(&[4.0; 16]);
            assert!(s.scale <= prev && s.scale >= 1e-2);
            prev = s.scale;
        }
        assert!((s.scale - 1e-2).abs() < 1e-12);
    }
}
