use super::NumericsError;

const MAX_BISECTIONS: usize = 200;

/// Interval `[lo, hi]` on which the target function changes sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootBracket {
    pub lo: f64,
    pub hi: f64,
    /// Absolute tolerance on the bracket width.
    pub tol: f64,
}

impl RootBracket {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi, tol: 1e-12 }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }
}

/// Bisection on a sign-changing bracket.
///
/// Stops when the bracket is narrower than `tol`, when `g` hits an exact
/// zero, or after 200 halvings. The midpoint sequence depends only on the
/// inputs, so repeated calls return bit-identical results.
pub fn find_root<G>(mut g: G, bracket: RootBracket) -> Result<f64, NumericsError>
where
    G: FnMut(f64) -> f64,
{
    let RootBracket { mut lo, mut hi, tol } = bracket;
    if lo > hi {
        std::mem::swap(&mut lo, &mut hi);
    }
    let g_lo = g(lo);
    let g_hi = g(hi);
    if g_lo == 0.0 {
        return Ok(lo);
    }
    if g_hi == 0.0 {
        return Ok(hi);
    }
    if g_lo.is_nan() || g_hi.is_nan() || g_lo.signum() == g_hi.signum() {
        return Err(NumericsError::InvalidBracket { lo, hi, g_lo, g_hi });
    }
    let lo_negative = g_lo < 0.0;
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol || mid <= lo || mid >= hi {
            break;
        }
        let g_mid = g(mid);
        if g_mid == 0.0 {
            return Ok(mid);
        }
        if (g_mid < 0.0) == lo_negative {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
