//! Closed-form library-size bounds. Nothing here solves a PDE.
//!
//! The bounds are astronomically large for realistic inputs, so sizes are
//! carried as natural logarithms and only exponentiated when they fit.

use crate::error::{Error, Result};

/// Natural log of the largest size reported as a plain number.
const LN_PLAIN_LIMIT: f64 = 690.775_527_898_213_7; // ln(1e300)

/// A positive quantity stored as its natural logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSize {
    pub ln: f64,
}

impl LogSize {
    /// The plain value, or `None` when it exceeds `1e300`.
    pub fn value(&self) -> Option<f64> {
        (self.ln <= LN_PLAIN_LIMIT).then(|| self.ln.exp())
    }

    pub fn log10(&self) -> f64 {
        self.ln / std::f64::consts::LN_10
    }
}

/// `R = 1 + 2^{2r+1}`.
pub fn covering_ratio(r: f64) -> f64 {
    1.0 + 2f64.powf(2.0 * r + 1.0)
}

/// `B_r = (1 + 2^{r+1} R)^4`.
pub fn b_r(r: f64) -> f64 {
    (1.0 + 2f64.powf(r + 1.0) * covering_ratio(r)).powi(4)
}

fn ln_b_r(r: f64) -> f64 {
    4.0 * (1.0 + 2f64.powf(r + 1.0) * covering_ratio(r)).ln()
}

/// Library size `B_r^{n-m}` and accuracy `(1 + 2^{2r}) M n^{-r}` for
/// widths `d_k <= M k^{-r}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LibrarySizeBound {
    pub size: LogSize,
    pub accuracy_factor: f64,
    pub accuracy: f64,
}

fn check_rate(r: f64, width_constant: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("rate r = {r} must be positive")));
    }
    if !(width_constant > 0.0 && width_constant.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "width constant M = {width_constant} must be positive"
        )));
    }
    Ok(())
}

pub fn theorem21_size(r: f64, width_constant: f64, n: u64, m: u64) -> Result<LibrarySizeBound> {
    check_rate(r, width_constant)?;
    if n < m {
        return Err(Error::InvalidArgument(format!("need n >= m, got n={n}, m={m}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let accuracy_factor = 1.0 + 2f64.powf(2.0 * r);
    Ok(LibrarySizeBound {
        size: LogSize {
            ln: (n - m) as f64 * ln_b_r(r),
        },
        accuracy_factor,
        accuracy: accuracy_factor * width_constant * (n as f64).powf(-r),
    })
}

/// `N <= exp(alpha eps^{-1/r} - beta m)` with `beta = ln B_r` and
/// `alpha = ln(B_r) [M (1 + 2^{2r})]^{1/r}`.
pub fn remark22_size(r: f64, width_constant: f64, eps: f64, m: u64) -> Result<LogSize> {
    check_rate(r, width_constant)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("accuracy eps = {eps} must be positive")));
    }
    let beta = ln_b_r(r);
    let alpha = beta * (width_constant * (1.0 + 2f64.powf(2.0 * r))).powf(1.0 / r);
    Ok(LogSize {
        ln: alpha * eps.powf(-1.0 / r) - beta * m as f64,
    })
}

/// `C(sigma) = ln((1 - sigma) / (1 + sigma)^3) / ln((1 - sigma) / (1 + sigma))`.
pub fn c_sigma(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::InvalidArgument(format!("sigma = {sigma} not in (0, 1)")));
    }
    let num = (1.0 - sigma).ln() - 3.0 * sigma.ln_1p();
    let den = (1.0 - sigma).ln() - sigma.ln_1p();
    Ok(num / den)
}
