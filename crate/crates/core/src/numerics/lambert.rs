use std::f64::consts::E;

use super::NumericsError;

const BRANCH_POINT: f64 = -1.0 / E;
const MAX_HALLEY: usize = 64;

/// Real branches of the Lambert W function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Principal branch, `W0(x) >= -1` for `x >= -1/e`.
    Principal,
    /// Lower branch, `W-1(x) <= -1` for `-1/e <= x < 0`.
    Lower,
}

impl TryFrom<i32> for Branch {
    type Error = NumericsError;

    fn try_from(k: i32) -> Result<Self, Self::Error> {
        match k {
            0 => Ok(Branch::Principal),
            -1 => Ok(Branch::Lower),
            other => Err(NumericsError::LambertBranch(other)),
        }
    }
}

impl Branch {
    fn index(self) -> i32 {
        match self {
            Branch::Principal => 0,
            Branch::Lower => -1,
        }
    }
}

/// Solves `w * exp(w) = x` on the requested real branch.
///
/// The starting point comes from the branch-point series when `x` is close
/// to `-1/e` and from the logarithmic asymptotics otherwise; Halley steps
/// then converge to machine precision.
pub fn lambert_w(branch: Branch, x: f64) -> Result<f64, NumericsError> {
    let domain_err = || NumericsError::LambertDomain {
        branch: branch.index(),
        x,
    };
    if !x.is_finite() || x < BRANCH_POINT {
        return Err(domain_err());
    }
    if branch == Branch::Lower && x >= 0.0 {
        return Err(domain_err());
    }
    if x == BRANCH_POINT {
        return Ok(-1.0);
    }
    if x == 0.0 {
        return Ok(0.0);
    }

    let w0 = initial_guess(branch, x);
    let w = halley(w0, x);
    Ok(match branch {
        Branch::Principal => w.max(-1.0),
        Branch::Lower => w.min(-1.0),
    })
}

fn initial_guess(branch: Branch, x: f64) -> f64 {
    // p = sqrt(2 (e x + 1)) is the natural local coordinate at the branch point.
    let q = E * x + 1.0;
    let near_branch = q < 0.25;
    match branch {
        Branch::Principal => {
            if near_branch {
                let p = (2.0 * q.max(0.0)).sqrt();
                -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
            } else if x < 3.0 {
                (1.0 + x).ln() * 0.8
            } else {
                let l1 = x.ln();
                let l2 = l1.ln();
                l1 - l2 + l2 / l1
            }
        }
        Branch::Lower => {
            if near_branch {
                let p = (2.0 * q.max(0.0)).sqrt();
                -1.0 - p - p * p / 3.0 - 11.0 / 72.0 * p * p * p
            } else {
                let l1 = (-x).ln();
                let l2 = (-l1).ln();
                l1 - l2 + l2 / l1
            }
        }
    }
}

fn halley(mut w: f64, x: f64) -> f64 {
    for _ in 0..MAX_HALLEY {
        let ew = w.exp();
        let f = w * ew - x;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        let step = f / denom;
        let next = w - step;
        if !next.is_finite() {
            break;
        }
        let done = (next - w).abs() <= 4.0 * f64::EPSILON * (1.0 + next.abs());
        w = next;
        if done {
            break;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(w: f64, x: f64) -> f64 {
        (w * w.exp() - x).abs()
    }

    #[test]
    fn branch_point_and_origin() {
        assert_eq!(lambert_w(Branch::Lower, -1.0 / E).unwrap(), -1.0);
        assert_eq!(lambert_w(Branch::Principal, -1.0 / E).unwrap(), -1.0);
        assert_eq!(lambert_w(Branch::Principal, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn lower_branch_table_row() {
        // Bisection oracle on w e^w = x, independent of Halley.
        let x = -0.8738 / E;
        let (mut lo, mut hi) = (-40.0_f64, -1.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            // w e^w is decreasing on (-inf, -1].
            if mid * mid.exp() > x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        let w = lambert_w(Branch::Lower, x).unwrap();
        assert!((w - oracle).abs() < 1e-9, "{w} vs {oracle}");
        assert!(((w + 1.0).exp() - 0.5417).abs() < 0.002);
    }

    #[test]
    fn residuals_small_across_domain() {
        for i in 1..2000 {
            let t = i as f64 / 2000.0;
            let x = BRANCH_POINT * (1.0 - t) + 1e-12 * t;
            for b in [Branch::Principal, Branch::Lower] {
                let w = lambert_w(b, x).unwrap();
                assert!(residual(w, x) <= 1e-12, "b={b:?} x={x} w={w}");
            }
        }
        for x in [0.5, 1.0, 3.0, 10.0, 1e3, 1e10, 1e300] {
            let w = lambert_w(Branch::Principal, x).unwrap();
            assert!(residual(w, x) <= 1e-12 * x.max(1.0), "x={x} w={w}");
        }
    }

    #[test]
    fn domain_errors() {
        assert!(lambert_w(Branch::Principal, -0.4).is_err());
        assert!(lambert_w(Branch::Lower, 0.0).is_err());
        assert!(lambert_w(Branch::Lower, 0.5).is_err());
        assert!(lambert_w(Branch::Lower, f64::NAN).is_err());
        assert!(Branch::try_from(1).is_err());
    }
}
