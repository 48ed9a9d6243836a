//! Embedded Dormand-Prince 5(4) integrator with step-size control.
//!
//! The integrator is generic over the state dimension. Output can be taken at
//! every accepted step or at a prescribed list of abscissae; in the latter
//! case steps are shortened so that they land exactly on each abscissa.

use thiserror::Error;

use super::root::{find_root, RootBracket};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;

// Fifth-order minus embedded fourth-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeTolerances {
    pub abs: f64,
    pub rel: f64,
    /// Any derivative component above this magnitude is treated as a blow-up.
    pub rhs_cap: f64,
    pub max_steps: usize,
}

impl Default for OdeTolerances {
    fn default() -> Self {
        Self {
            abs: 1e-10,
            rel: 1e-9,
            rhs_cap: 1e9,
            max_steps: 2_000_000,
        }
    }
}

/// Where the trajectory is recorded.
#[derive(Debug, Clone, Copy)]
pub enum Sampling<'a> {
    /// At the initial point and after every accepted step.
    Steps,
    /// Only at these abscissae (ascending, inside `[z0, z_end]`).
    At(&'a [f64]),
    /// Only the final state.
    End,
}

/// Terminates integration when `y[component]` falls to `level`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopBelow {
    pub component: usize,
    pub level: f64,
}

/// Reason reported by a right-hand side that cannot be evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct RhsFailure(pub String);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("invalid integration request: {0}")]
    InvalidInput(String),
    #[error("integration stopped at z = {z}: {reason}")]
    Singularity { z: f64, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<const N: usize> {
    pub z: Vec<f64>,
    pub y: Vec<[f64; N]>,
    /// Abscissa at which a [`StopBelow`] condition fired, if any.
    pub stopped_at: Option<f64>,
    pub steps: usize,
}

impl<const N: usize> Trajectory<N> {
    pub fn last(&self) -> Option<(f64, [f64; N])> {
        Some((*self.z.last()?, *self.y.last()?))
    }
}

impl Trajectory<1> {
    pub fn values(&self) -> Vec<f64> {
        self.y.iter().map(|y| y[0]).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions<'a> {
    pub tol: OdeTolerances,
    pub sampling: Sampling<'a>,
    pub stop_below: Option<StopBelow>,
    /// Component that must stay strictly positive.
    pub keep_positive: Option<usize>,
}

impl Default for IntegrateOptions<'_> {
    fn default() -> Self {
        Self {
            tol: OdeTolerances::default(),
            sampling: Sampling::Steps,
            stop_below: None,
            keep_positive: None,
        }
    }
}

/// Scalar convenience wrapper: `p' = rhs(z, p)` on `[z0, z_end]`, sampled at
/// every accepted step, with `p` required to stay in `(0, inf)`.
pub fn integrate_ode<F>(
    mut rhs: F,
    z0: f64,
    p0: f64,
    z_end: f64,
    tol: OdeTolerances,
) -> Result<Trajectory<1>, OdeError>
where
    F: FnMut(f64, f64) -> f64,
{
    let options = IntegrateOptions {
        tol,
        keep_positive: Some(0),
        ..Default::default()
    };
    integrate_system(|z, y: &[f64; 1]| Ok([rhs(z, y[0])]), z0, [p0], z_end, &options)
}

struct Step<const N: usize> {
    y: [f64; N],
    k_end: [f64; N],
    err: f64,
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        *o += h * acc;
    }
    out
}

fn checked<const N: usize>(k: [f64; N], cap: f64) -> Result<[f64; N], RhsFailure> {
    if k.iter().all(|v| v.is_finite() && v.abs() <= cap) {
        Ok(k)
    } else {
        Err(RhsFailure(format!("derivative {k:?} exceeds cap {cap:e}")))
    }
}

fn dp_step<const N: usize, F>(
    rhs: &mut F,
    z: f64,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
    tol: &OdeTolerances,
) -> Result<Step<N>, RhsFailure>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N], RhsFailure>,
{
    let cap = tol.rhs_cap;
    let k2 = checked(rhs(z + C2 * h, &axpy(y, h, &[(A21, k1)]))?, cap)?;
    let k3 = checked(rhs(z + C3 * h, &axpy(y, h, &[(A31, k1), (A32, &k2)]))?, cap)?;
    let k4 = checked(
        rhs(z + C4 * h, &axpy(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]))?,
        cap,
    )?;
    let k5 = checked(
        rhs(
            z + C5 * h,
            &axpy(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        )?,
        cap,
    )?;
    let k6 = checked(
        rhs(
            z + h,
            &axpy(
                y,
                h,
                &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            ),
        )?,
        cap,
    )?;
    let y_new = axpy(
        y,
        h,
        &[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
    );
    if y_new.iter().any(|v| !v.is_finite()) {
        return Err(RhsFailure("non-finite state".into()));
    }
    let k7 = checked(rhs(z + h, &y_new)?, cap)?;
    let mut sq = 0.0;
    for i in 0..N {
        let e = h
            * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let sc = tol.abs + tol.rel * y[i].abs().max(y_new[i].abs());
        sq += (e / sc) * (e / sc);
    }
    Ok(Step {
        y: y_new,
        k_end: k7,
        err: (sq / N as f64).sqrt(),
    })
}

fn initial_step<const N: usize>(y: &[f64; N], f: &[f64; N], span: f64, tol: &OdeTolerances) -> f64 {
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..N {
        let sc = tol.abs + tol.rel * y[i].abs();
        d0 += (y[i] / sc).powi(2);
        d1 += (f[i] / sc).powi(2);
    }
    let d0 = (d0 / N as f64).sqrt();
    let d1 = (d1 / N as f64).sqrt();
    let h = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6 * span
    } else {
        0.01 * d0 / d1
    };
    h.min(span).max(1e-12 * span)
}

/// Integrates `y' = rhs(z, y)` from `z0` to `z_end`.
///
/// Steps whose stages fail (a right-hand side error, a derivative above
/// `rhs_cap`, a non-finite state, or a `keep_positive` violation) are retried
/// with a smaller step; once the step collapses below `1e-13` of the span the
/// integration reports a [`OdeError::Singularity`] at the current abscissa.
pub fn integrate_system<const N: usize, F>(
    mut rhs: F,
    z0: f64,
    y0: [f64; N],
    z_end: f64,
    options: &IntegrateOptions<'_>,
) -> Result<Trajectory<N>, OdeError>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N], RhsFailure>,
{
    let tol = &options.tol;
    if !(z0.is_finite() && z_end.is_finite() && z0 < z_end) {
        return Err(OdeError::InvalidInput(format!(
            "need finite z0 < z_end, got [{z0}, {z_end}]"
        )));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(OdeError::InvalidInput(format!("non-finite initial state {y0:?}")));
    }
    let targets: &[f64] = match options.sampling {
        Sampling::At(t) => {
            if t.windows(2).any(|w| w[1] < w[0]) {
                return Err(OdeError::InvalidInput("sample abscissae not ascending".into()));
            }
            if t.first().is_some_and(|&a| a < z0) || t.last().is_some_and(|&b| b > z_end) {
                return Err(OdeError::InvalidInput(
                    "sample abscissae outside the integration interval".into(),
                ));
            }
            t
        }
        _ => &[],
    };
    let singular = |z: f64, reason: String| OdeError::Singularity { z, reason };

    let span = z_end - z0;
    let h_min = 1e-13 * span.max(z0.abs().max(z_end.abs()) * 1e-3);
    let mut k1 = rhs(z0, &y0)
        .and_then(|k| checked(k, tol.rhs_cap))
        .map_err(|e| singular(z0, e.0))?;

    let mut traj = Trajectory {
        z: Vec::new(),
        y: Vec::new(),
        stopped_at: None,
        steps: 0,
    };
    let mut next_target = 0;
    let record = |traj: &mut Trajectory<N>, z: f64, y: [f64; N]| {
        traj.z.push(z);
        traj.y.push(y);
    };
    match options.sampling {
        Sampling::Steps => record(&mut traj, z0, y0),
        Sampling::At(_) => {
            while next_target < targets.len() && targets[next_target] <= z0 {
                record(&mut traj, targets[next_target], y0);
                next_target += 1;
            }
        }
        Sampling::End => {}
    }

    let mut z = z0;
    let mut y = y0;
    let mut h = initial_step(&y, &k1, span, tol);

    while z < z_end {
        if traj.steps >= tol.max_steps {
            return Err(singular(z, format!("step budget {} exhausted", tol.max_steps)));
        }
        let mut goal = z_end;
        if next_target < targets.len() {
            goal = goal.min(targets[next_target]);
        }
        let mut lands = false;
        let mut h_try = h;
        if z + 1.01 * h_try >= goal {
            h_try = goal - z;
            lands = true;
        }

        let attempt = dp_step(&mut rhs, z, &y, &k1, h_try, tol).and_then(|s| {
            if let Some(c) = options.keep_positive {
                if s.y[c] <= 0.0 {
                    return Err(RhsFailure(format!("component {c} left (0, inf)")));
                }
            }
            Ok(s)
        });

        let step = match attempt {
            Ok(s) if s.err <= 1.0 => s,
            Ok(s) => {
                let factor = (0.9 * s.err.powf(-0.2)).clamp(0.1, 1.0);
                h = h_try * factor;
                if h < h_min {
                    return Err(singular(z, "step size underflow".into()));
                }
                continue;
            }
            Err(e) => {
                h = 0.25 * h_try;
                if h < h_min {
                    return Err(singular(z, e.0));
                }
                continue;
            }
        };
        traj.steps += 1;

        if let Some(stop) = options.stop_below {
            let c = stop.component;
            if step.y[c] <= stop.level && y[c] > stop.level {
                let y_start = y;
                let k_start = k1;
                let g = |hh: f64| -> f64 {
                    if hh <= 0.0 {
                        return y_start[c] - stop.level;
                    }
                    match dp_step(&mut rhs, z, &y_start, &k_start, hh, tol) {
                        Ok(s) => s.y[c] - stop.level,
                        Err(_) => f64::NAN,
                    }
                };
                let h_star = find_root(g, RootBracket::new(0.0, h_try).with_tol(1e-14 * span))
                    .map_err(|e| singular(z, e.to_string()))?;
                let mut y_star = if h_star > 0.0 {
                    dp_step(&mut rhs, z, &y_start, &k_start, h_star, tol)
                        .map_err(|e| singular(z, e.0))?
                        .y
                } else {
                    y_start
                };
                y_star[c] = stop.level;
                let z_star = z + h_star;
                if !matches!(options.sampling, Sampling::At(_)) {
                    record(&mut traj, z_star, y_star);
                }
                traj.stopped_at = Some(z_star);
                return Ok(traj);
            }
        }

        z = if lands { goal } else { z + h_try };
        y = step.y;
        k1 = step.k_end;
        let factor = if step.err == 0.0 {
            5.0
        } else {
            (0.9 * step.err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h = (h_try * factor).max(h_min);

        match options.sampling {
            Sampling::Steps => record(&mut traj, z, y),
            Sampling::At(_) => {
                while next_target < targets.len() && targets[next_target] <= z {
                    record(&mut traj, targets[next_target], y);
                    next_target += 1;
                }
            }
            Sampling::End => {}
        }
    }
    if matches!(options.sampling, Sampling::End) {
        record(&mut traj, z, y);
    }
    Ok(traj)
}
