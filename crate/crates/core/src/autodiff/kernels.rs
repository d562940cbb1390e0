//! Scalar and row kernels shared by the recorded (tape) and inference paths.

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x * tanh(softplus(x))`
#[inline]
pub fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

#[inline]
pub fn mish_grad(x: f64) -> f64 {
    let t = softplus(x).tanh();
    t + x * (1.0 - t * t) * sigmoid(x)
}

#[inline]
pub fn symlog(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

#[inline]
pub fn symexp(x: f64) -> f64 {
    x.signum() * x.abs().exp_m1()
}

/// `log(1 - tanh(x)^2)`, stable for large |x|.
#[inline]
pub fn log1m_tanh_sq(x: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - x - softplus(-2.0 * x))
}

/// In-place softmax of one slice.
pub fn softmax_inplace(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Log-sum-exp of one slice.
pub fn logsumexp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Softmax over consecutive groups of `group` entries.
pub fn group_softmax_inplace(v: &mut [f64], group: usize) {
    for chunk in v.chunks_mut(group) {
        softmax_inplace(chunk);
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalizes one row in place; returns the reciprocal standard deviation.
pub fn layer_norm_row(row: &mut [f64]) -> f64 {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    for x in row.iter_mut() {
        *x = (*x - mean) * rstd;
    }
    rstd
}
