//! Derivative-free tuning of the policy constants and capacity sweeps.
//!
//! The adaptive search runs over `(beta, C1)`. For every probe, `C2` is not
//! searched but solved for, so that the optimality condition also holds at
//! the full battery; each probe therefore yields an endpoint-consistent
//! policy. A jittered coarse grid is evaluated first (in parallel when
//! enabled) and the best feasible point seeds a Nelder-Mead refinement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::numerics::SeededRng;
use crate::policy::{
    beta_range, close_endpoint, constant_kappa_fixed_point, solve_constant_kappa, ClosureWindow,
    PolicyError, PolicyKind, PolicySolution, SystemConfig, VariationalConstants,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("invalid search specification: {0}")]
    InvalidSpec(String),
    #[error("no feasible point among {evaluations} evaluations")]
    NoFeasiblePoint { evaluations: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    pub beta_bounds: (f64, f64),
    pub c1_bounds: (f64, f64),
    /// Window scanned for the endpoint-closing `C2`.
    pub c2_bounds: (f64, f64),
    /// Maximum number of `(beta, C1)` evaluations.
    pub budget: usize,
    pub seed: u64,
    /// Scan intervals used to bracket `C2` inside `c2_bounds`.
    #[serde(default = "default_c2_scan")]
    pub c2_scan: usize,
}

fn default_c2_scan() -> usize {
    24
}

impl SearchSpec {
    /// Middle 98% of the admissible `beta` range, `C1` over the same scale
    /// and `C2` over `[-D_max/2, D_max]`.
    pub fn for_system(sys: &SystemConfig) -> Self {
        let (lo, hi) = beta_range(&sys.source);
        let w = hi - lo;
        let d_max = sys.source.d_max();
        Self {
            beta_bounds: (lo + 0.01 * w, hi - 0.01 * w),
            c1_bounds: (-1.1 * d_max, 0.0),
            c2_bounds: (-0.5 * d_max, d_max),
            budget: 2000,
            seed: 0,
            c2_scan: default_c2_scan(),
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, sys: &SystemConfig) -> Result<(), SearchError> {
        let (lo, hi) = beta_range(&sys.source);
        let (b0, b1) = self.beta_bounds;
        if !(lo < b0 && b0 <= b1 && b1 < hi) {
            return Err(SearchError::InvalidSpec(format!(
                "beta bounds [{b0}, {b1}] must lie inside ({lo}, {hi})"
            )));
        }
        for (name, (a, b)) in [("C1", self.c1_bounds), ("C2", self.c2_bounds)] {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(SearchError::InvalidSpec(format!("{name} bounds [{a}, {b}]")));
            }
        }
        if self.c2_bounds.0 == self.c2_bounds.1 {
            return Err(SearchError::InvalidSpec("empty C2 window".into()));
        }
        if self.budget == 0 || self.c2_scan == 0 {
            return Err(SearchError::InvalidSpec(
                "budget and C2 scan must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TunedPolicy {
    pub constants: VariationalConstants,
    pub d_avg: f64,
    pub solution: PolicySolution,
    pub evaluations: usize,
    pub infeasible_evaluations: usize,
}

/// One probe of the adaptive objective.
#[derive(Debug, Clone)]
struct Probe {
    score: f64,
    solution: Option<PolicySolution>,
}

impl Probe {
    fn feasible(&self) -> bool {
        self.solution.as_ref().is_some_and(|s| s.feasible)
    }
}

/// Feasible points score their average distortion. Closed solutions that
/// break the mismatch constraint keep their (continuous) average distortion
/// plus an exact penalty on the violation, so the simplex can slide along
/// the feasibility boundary where the optimum sits.
fn probe(sys: &SystemConfig, spec: &SearchSpec, beta: f64, c1: f64) -> Result<Probe, PolicyError> {
    let d_max = sys.source.d_max();
    let window = ClosureWindow {
        lo: spec.c2_bounds.0,
        hi: spec.c2_bounds.1,
        scan: spec.c2_scan,
    };
    match close_endpoint(sys, beta, c1, window) {
        Ok(sol) if sol.feasible && sol.d_avg.is_finite() => Ok(Probe {
            score: sol.d_avg,
            solution: Some(sol),
        }),
        Ok(sol) => {
            let excess = sol.inv_kappa_mass - 1.0;
            let score = if sol.d_avg.is_finite() && excess.is_finite() && excess >= 0.0 {
                sol.d_avg + PENALTY * d_max * excess
            } else {
                1e3 * d_max.max(1.0)
            };
            Ok(Probe {
                score,
                solution: Some(sol),
            })
        }
        Err(e) if e.is_infeasible() => Ok(Probe {
            score: 1e4 * d_max.max(1.0),
            solution: None,
        }),
        Err(e) => Err(e),
    }
}

const PENALTY: f64 = 10.0;

/// Search box over `(beta, C1)`.
#[derive(Debug, Clone, Copy)]
struct Box2 {
    lo: [f64; 2],
    hi: [f64; 2],
}

impl Box2 {
    fn unit(&self, u: [f64; 2]) -> [f64; 2] {
        [
            self.lo[0] + u[0] * (self.hi[0] - self.lo[0]),
            self.lo[1] + u[1] * (self.hi[1] - self.lo[1]),
        ]
    }

    fn contains(&self, x: [f64; 2]) -> bool {
        (0..2).all(|k| self.lo[k] <= x[k] && x[k] <= self.hi[k])
    }

    /// Simplex coordinates `(beta, C1 - beta)` scaled by the `beta` width.
    /// The feasible set is a thin wedge just below `C1 = beta`, which is
    /// far better conditioned in these coordinates.
    fn to_simplex(&self, x: [f64; 2]) -> [f64; 2] {
        let w = self.hi[0] - self.lo[0];
        [(x[0] - self.lo[0]) / w, (x[1] - x[0]) / w]
    }

    fn from_simplex(&self, y: [f64; 2]) -> [f64; 2] {
        let w = self.hi[0] - self.lo[0];
        let beta = self.lo[0] + y[0] * w;
        [beta, beta + y[1] * w]
    }
}

struct Tracker<'a> {
    sys: &'a SystemConfig,
    spec: &'a SearchSpec,
    evaluations: usize,
    infeasible: usize,
    best: Option<Probe>,
}

impl Tracker<'_> {
    fn record(&mut self, p: Probe) -> f64 {
        self.evaluations += 1;
        if !p.feasible() {
            self.infeasible += 1;
        }
        let score = p.score;
        let better = p.feasible()
            && self
                .best
                .as_ref()
                .is_none_or(|b| p.score < b.score);
        if better {
            self.best = Some(p);
        }
        score
    }

    fn remaining(&self) -> usize {
        self.spec.budget.saturating_sub(self.evaluations)
    }

    fn eval(&mut self, bx: &Box2, y: [f64; 2]) -> Result<f64, PolicyError> {
        let x = bx.from_simplex(y);
        if !bx.contains(x) {
            // Out-of-box points are rejected without spending budget.
            return Ok(f64::INFINITY);
        }
        let p = probe(self.sys, self.spec, x[0], x[1])?;
        Ok(self.record(p))
    }
}

/// Side length of the coarse grid for a given budget.
fn grid_side(budget: usize) -> usize {
    let mut n = 1;
    while n < 8 && (n + 1) * (n + 1) * 2 <= budget {
        n += 1;
    }
    n
}

/// Tunes `(beta, C1)` with `C2` closed at the endpoint, minimizing the
/// average distortion over feasible policies.
pub fn tune_constants(
    sys: &SystemConfig,
    spec: &SearchSpec,
    exec: Execution,
) -> Result<TunedPolicy, SearchError> {
    sys.validate()?;
    spec.validate(sys)?;
    let bx = Box2 {
        lo: [spec.beta_bounds.0, spec.c1_bounds.0],
        hi: [spec.beta_bounds.1, spec.c1_bounds.1],
    };
    let mut rng = SeededRng::new(spec.seed);
    let n = grid_side(spec.budget);
    let cells: Vec<[f64; 2]> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            let ju = rng.uniform();
            let jv = rng.uniform();
            [(i as f64 + ju) / n as f64, (j as f64 + jv) / n as f64]
        })
        .map(|u: [f64; 2]| [u[0].min(1.0), u[1].min(1.0)])
        .collect();

    let cells: Vec<[f64; 2]> = cells.into_iter().map(|u| bx.unit(u)).collect();
    let probes = exec.map(&cells, |&[beta, c1]| probe(sys, spec, beta, c1));

    let mut tracker = Tracker {
        sys,
        spec,
        evaluations: 0,
        infeasible: 0,
        best: None,
    };
    let mut scored = Vec::with_capacity(cells.len());
    for (x, p) in cells.iter().zip(probes) {
        scored.push((tracker.record(p?), bx.to_simplex(*x)));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));

    if tracker.remaining() >= 3 {
        let start = scored[0].1;
        let mut scale = 0.5 / n as f64;
        let mut centre = start;
        while tracker.remaining() >= 3 && scale > 1e-9 {
            let before = tracker.best.as_ref().map(|b| b.score);
            centre = nelder_mead(&mut tracker, &bx, centre, scale)?;
            let after = tracker.best.as_ref().map(|b| b.score);
            if let Some(best) = &tracker.best {
                if let Some(PolicyKind::Adaptive(c)) = best.solution.as_ref().map(|s| s.kind) {
                    centre = bx.to_simplex([c.beta, c.c1]);
                }
            }
            // Restart with a smaller simplex once a pass stops improving.
            if before == after {
                scale *= 0.1;
            } else {
                scale *= 0.5;
            }
        }
    }

    let evaluations = tracker.evaluations;
    let infeasible_evaluations = tracker.infeasible;
    let best = tracker
        .best
        .and_then(|b| b.solution)
        .ok_or(SearchError::NoFeasiblePoint { evaluations })?;
    let PolicyKind::Adaptive(constants) = best.kind else {
        unreachable!("adaptive search produced a constant-mismatch policy")
    };
    Ok(TunedPolicy {
        constants,
        d_avg: best.d_avg,
        solution: best,
        evaluations,
        infeasible_evaluations,
    })
}

/// Nelder-Mead in simplex coordinates from a right simplex of side
/// `scale`; returns the best vertex once the simplex collapses or the
/// budget ends.
fn nelder_mead(
    t: &mut Tracker<'_>,
    bx: &Box2,
    start: [f64; 2],
    scale: f64,
) -> Result<[f64; 2], PolicyError> {
    let offset = |d: [f64; 2]| {
        let p = [start[0] + d[0], start[1] + d[1]];
        // Keep the initial simplex inside the box by flipping outward edges.
        if bx.contains(bx.from_simplex(p)) {
            p
        } else {
            [start[0] - d[0], start[1] - d[1]]
        }
    };
    let mut simplex = vec![start, offset([scale, 0.0]), offset([0.0, scale])];
    let mut values = Vec::with_capacity(3);
    for v in &simplex {
        if t.remaining() == 0 {
            break;
        }
        values.push(t.eval(bx, *v)?);
    }
    if values.len() < 3 {
        return Ok(start);
    }

    let lerp = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
    while t.remaining() > 0 {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let (ib, im, iw) = (order[0], order[1], order[2]);
        let size = simplex
            .iter()
            .map(|v| (v[0] - simplex[ib][0]).abs().max((v[1] - simplex[ib][1]).abs()))
            .fold(0.0, f64::max);
        if size < 1e-10 {
            break;
        }
        let centroid = lerp(simplex[ib], simplex[im], 0.5);
        let xr = lerp(centroid, simplex[iw], -1.0);
        let fr = t.eval(bx, xr)?;
        if fr < values[ib] {
            if t.remaining() == 0 {
                simplex[iw] = xr;
                values[iw] = fr;
                break;
            }
            let xe = lerp(centroid, simplex[iw], -2.0);
            let fe = t.eval(bx, xe)?;
            if fe < fr {
                simplex[iw] = xe;
                values[iw] = fe;
            } else {
                simplex[iw] = xr;
                values[iw] = fr;
            }
        } else if fr < values[im] {
            simplex[iw] = xr;
            values[iw] = fr;
        } else {
            if t.remaining() == 0 {
                break;
            }
            let (xc, fc) = if fr < values[iw] {
                let x = lerp(centroid, xr, 0.5);
                (x, t.eval(bx, x)?)
            } else {
                let x = lerp(centroid, simplex[iw], 0.5);
                (x, t.eval(bx, x)?)
            };
            if fc < values[iw].min(fr) {
                simplex[iw] = xc;
                values[iw] = fc;
            } else {
                for k in [im, iw] {
                    if t.remaining() == 0 {
                        break;
                    }
                    simplex[k] = lerp(simplex[ib], simplex[k], 0.5);
                    values[k] = t.eval(bx, simplex[k])?;
                }
            }
        }
    }
    let ib = (0..3)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("three vertices");
    Ok(simplex[ib])
}

#[derive(Debug, Clone, PartialEq)]
pub struct TunedConstantKappa {
    pub c: f64,
    pub d_avg: f64,
    pub solution: PolicySolution,
    pub evaluations: usize,
    pub infeasible_evaluations: usize,
}

/// One-dimensional search over `C` below the fixed point `C* = -lambda
/// D(delta/lambda, 1)`. Good constants crowd against `C*` as the capacity
/// grows, so the scan is geometric in the distance `C* - C` and the best
/// bracket is refined by golden section in log-distance.
pub fn tune_constant_kappa(
    sys: &SystemConfig,
    c_bounds: (f64, f64),
    budget: usize,
) -> Result<TunedConstantKappa, SearchError> {
    sys.validate()?;
    let c_star = constant_kappa_fixed_point(sys)?;
    let hi = c_bounds.1.min(c_star);
    let lo = c_bounds.0;
    if !(lo < hi) || budget == 0 {
        return Err(SearchError::InvalidSpec(format!(
            "C bounds [{}, {}] leave nothing below the fixed point {c_star}",
            c_bounds.0, c_bounds.1
        )));
    }
    // Distances from the fixed point, never touching it.
    let d_hi = c_star - lo;
    let d_lo = (c_star - hi).max(1e-7 * d_hi.max(1e-300));
    let (ln_lo, ln_hi) = (d_lo.ln(), d_hi.ln());

    let mut evaluations = 0;
    let mut infeasible = 0;
    let mut best: Option<PolicySolution> = None;
    let mut eval = |ln_d: f64| -> Result<f64, PolicyError> {
        evaluations += 1;
        let c = c_star - ln_d.exp();
        match solve_constant_kappa(sys, c) {
            Ok(sol) if sol.feasible && sol.d_avg.is_finite() => {
                let v = sol.d_avg;
                if best.as_ref().is_none_or(|b| v < b.d_avg) {
                    best = Some(sol);
                }
                Ok(v)
            }
            Ok(_) => {
                infeasible += 1;
                Ok(f64::INFINITY)
            }
            Err(e) if e.is_infeasible() => {
                infeasible += 1;
                Ok(f64::INFINITY)
            }
            Err(e) => Err(e),
        }
    };

    let n = if budget < 4 { budget } else { (budget / 2).max(3) };
    let xs: Vec<f64> = if n == 1 {
        vec![0.5 * (ln_lo + ln_hi)]
    } else {
        (0..n)
            .map(|i| ln_lo + (ln_hi - ln_lo) * i as f64 / (n - 1) as f64)
            .collect()
    };
    let mut vals = Vec::with_capacity(n);
    for &x in &xs {
        vals.push(eval(x)?);
    }
    let k = (0..n)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .expect("non-empty scan");
    if vals[k].is_finite() && n >= 3 {
        let mut a = xs[k.saturating_sub(1)];
        let mut b = xs[(k + 1).min(n - 1)];
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let mut x1 = b - phi * (b - a);
        let mut x2 = a + phi * (b - a);
        let mut remaining = budget - n;
        if remaining >= 2 {
            let mut f1 = eval(x1)?;
            let mut f2 = eval(x2)?;
            remaining -= 2;
            while remaining > 0 && (b - a) > 1e-12 {
                if f1 <= f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - phi * (b - a);
                    f1 = eval(x1)?;
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + phi * (b - a);
                    f2 = eval(x2)?;
                }
                remaining -= 1;
            }
        }
    }

    let sol = best.ok_or(SearchError::NoFeasiblePoint { evaluations })?;
    let PolicyKind::ConstantKappa { c } = sol.kind else {
        unreachable!("constant-mismatch search produced an adaptive policy")
    };
    Ok(TunedConstantKappa {
        c,
        d_avg: sol.d_avg,
        solution: sol,
        evaluations,
        infeasible_evaluations: infeasible,
    })
}

/// Default `C` window: from `C* - 3 D_max` up to the fixed point `C*`.
pub fn default_c_bounds(sys: &SystemConfig) -> Result<(f64, f64), SearchError> {
    let c_star = constant_kappa_fixed_point(sys)?;
    Ok((c_star - 3.0 * sys.source.d_max() * sys.arrivals.lambda, c_star))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub capacity: f64,
    pub constants: Option<VariationalConstants>,
    pub d_avg_adaptive: Option<f64>,
    pub c: Option<f64>,
    pub d_avg_constk: Option<f64>,
    pub d_lb: f64,
    /// Failure messages for the columns that could not be filled.
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn all_feasible(&self) -> bool {
        self.rows.iter().all(|r| r.errors.is_empty())
    }
}

/// Budget of the constant-mismatch search inside a sweep.
pub const SWEEP_CONSTK_BUDGET: usize = 200;

/// Tunes both policy families at every capacity. Capacities run in
/// parallel; each row is computed independently, so the output does not
/// depend on the execution mode.
pub fn capacity_sweep(
    sys: &SystemConfig,
    capacities: &[f64],
    spec: &SearchSpec,
    exec: Execution,
) -> Result<SweepResult, SearchError> {
    if capacities.is_empty() || capacities.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(SearchError::InvalidSpec(
            "capacities must be a non-empty list of positive numbers".into(),
        ));
    }
    let rows = exec.map(capacities, |&l| -> Result<SweepRow, SearchError> {
        let s = sys.clone().with_capacity(l);
        let mut errors = Vec::new();
        let adaptive = match tune_constants(&s, spec, Execution::Sequential) {
            Ok(t) => Some(t),
            Err(e @ SearchError::NoFeasiblePoint { .. }) => {
                errors.push(format!("adaptive: {e}"));
                None
            }
            Err(e) => return Err(e),
        };
        let constk = match tune_constant_kappa(&s, default_c_bounds(&s)?, SWEEP_CONSTK_BUDGET) {
            Ok(t) => Some(t),
            Err(e @ SearchError::NoFeasiblePoint { .. }) => {
                errors.push(format!("constant mismatch: {e}"));
                None
            }
            Err(e) => return Err(e),
        };
        Ok(SweepRow {
            capacity: l,
            constants: adaptive.as_ref().map(|t| t.constants),
            d_avg_adaptive: adaptive.as_ref().map(|t| t.d_avg),
            c: constk.as_ref().map(|t| t.c),
            d_avg_constk: constk.as_ref().map(|t| t.d_avg),
            d_lb: s.lower_bound()?,
            errors,
        })
    });
    Ok(SweepResult {
        rows: rows.into_iter().collect::<Result<_, _>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ArrivalModel, ChannelModel, LeakageModel, SourceModel};

    fn gauss(l: f64) -> SystemConfig {
        SystemConfig::new(
            SourceModel::Gaussian { variance: 1.0 },
            ChannelModel::Awgn { noise: 1.0 },
            ArrivalModel {
                delta: 1.0,
                lambda: 1.0,
            },
            LeakageModel::Zero,
            l,
        )
    }

    #[test]
    fn grid_side_respects_budget() {
        assert_eq!(grid_side(1), 1);
        assert_eq!(grid_side(8), 2);
        assert_eq!(grid_side(2000), 8);
    }

    #[test]
    fn budget_one_is_deterministic() {
        let sys = gauss(5.0);
        let spec = SearchSpec::for_system(&sys).with_budget(1).with_seed(3);
        let a = tune_constants(&sys, &spec, Execution::Sequential);
        let b = tune_constants(&sys, &spec, Execution::Parallel);
        assert_eq!(a, b);
        match a {
            Ok(t) => assert_eq!(t.evaluations, 1),
            Err(e) => assert_eq!(e, SearchError::NoFeasiblePoint { evaluations: 1 }),
        }
    }

    #[test]
    fn small_search_is_feasible_and_reproducible() {
        let sys = gauss(2.0);
        let spec = SearchSpec::for_system(&sys).with_budget(150).with_seed(9);
        let a = tune_constants(&sys, &spec, Execution::Parallel).unwrap();
        let b = tune_constants(&sys, &spec, Execution::Sequential).unwrap();
        assert_eq!(a.d_avg.to_bits(), b.d_avg.to_bits());
        assert!(a.solution.feasible);
        assert!(a.evaluations <= 150);
        assert!(a.d_avg >= sys.lower_bound().unwrap());
        assert!(a.solution.residual50 < 1e-5);
    }

    #[test]
    fn constant_kappa_excludes_region_above_fixed_point() {
        let sys = gauss(5.0);
        let t = tune_constant_kappa(&sys, (-1.5, 0.0), 60).unwrap();
        assert!(t.c < -0.5);
        assert!(t.d_avg >= sys.lower_bound().unwrap());
        assert!(tune_constant_kappa(&sys, (-0.4, 0.0), 10).is_err());
    }

    #[test]
    fn invalid_specs() {
        let sys = gauss(5.0);
        let mut spec = SearchSpec::for_system(&sys);
        spec.beta_bounds = (-1.0, -0.5);
        assert!(matches!(
            tune_constants(&sys, &spec, Execution::Sequential),
            Err(SearchError::InvalidSpec(_))
        ));
        assert!(capacity_sweep(&sys, &[], &SearchSpec::for_system(&sys), Execution::Sequential).is_err());
    }
}
