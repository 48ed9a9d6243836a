//! Locally optimal power and mismatch policies.
//!
//! The adaptive policy keeps the instantaneous distortion at a constant
//! level `D_beta` for every positive charge, which turns the integral
//! optimality condition into the autonomous ODE `p' = F(p)`. The
//! constant-mismatch policy fixes `kappa = 1` and solves its own
//! second-order condition. Both are turned into a stationary battery law
//! (atom at zero plus density) from which the average distortion follows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distortion::{d_dagger, distortion, lower_bound};
use crate::models::{ArrivalModel, ChannelModel, LeakageModel, ModelError, SourceModel};
use crate::numerics::{
    find_root, integrate_system, lambert_w, Branch, Grid, IntegrateOptions, NumericsError,
    OdeError, OdeTolerances, RhsFailure, RootBracket, Sampling,
};

pub const DEFAULT_P0PLUS: f64 = 1e-3;
pub const DEFAULT_NODES: usize = 2000;
/// First grid node, relative to `min(L, 1)`.
const GRID_START: f64 = 1e-6;
const SINGULAR_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("beta = {beta} outside the open interval ({lo}, {hi})")]
    BetaOutOfRange { beta: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("policy ODE singular at z = {z}: {reason}")]
    Singular { z: f64, reason: String },
    #[error("no endpoint closure: {0}")]
    NoClosure(String),
}

impl PolicyError {
    /// Errors caused by the chosen constants rather than by bad inputs.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, PolicyError::Singular { .. } | PolicyError::NoClosure(_))
    }
}

impl From<OdeError> for PolicyError {
    fn from(e: OdeError) -> Self {
        match e {
            OdeError::Singularity { z, reason } => PolicyError::Singular { z, reason },
            OdeError::InvalidInput(m) => PolicyError::InvalidInput(m),
        }
    }
}

/// Everything that defines one transmitter/battery problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub source: SourceModel,
    pub channel: ChannelModel,
    pub arrivals: ArrivalModel,
    #[serde(default)]
    pub leakage: LeakageModel,
    pub capacity: f64,
    #[serde(default = "default_p0plus")]
    pub p0plus: f64,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
}

fn default_p0plus() -> f64 {
    DEFAULT_P0PLUS
}

fn default_nodes() -> usize {
    DEFAULT_NODES
}

impl SystemConfig {
    pub fn new(
        source: SourceModel,
        channel: ChannelModel,
        arrivals: ArrivalModel,
        leakage: LeakageModel,
        capacity: f64,
    ) -> Self {
        Self {
            source,
            channel,
            arrivals,
            leakage,
            capacity,
            p0plus: DEFAULT_P0PLUS,
            nodes: DEFAULT_NODES,
        }
    }

    pub fn with_p0plus(mut self, p0plus: f64) -> Self {
        self.p0plus = p0plus;
        self
    }

    pub fn with_capacity(mut self, capacity: f64) -> Self {
        self.capacity = capacity;
        self
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        self.source.validate()?;
        self.channel.validate()?;
        self.arrivals.validate()?;
        if !(self.capacity > 0.0 && self.capacity.is_finite()) {
            return Err(PolicyError::InvalidInput(format!(
                "capacity must be positive and finite, got {}",
                self.capacity
            )));
        }
        if !(self.p0plus > 0.0 && self.p0plus.is_finite()) {
            return Err(PolicyError::InvalidInput(format!(
                "p(0+) must be positive, got {}",
                self.p0plus
            )));
        }
        if self.nodes < 4 {
            return Err(PolicyError::InvalidInput(format!(
                "need at least 4 grid nodes, got {}",
                self.nodes
            )));
        }
        Ok(())
    }

    /// Geometric grid on `(0, L]`, dense near the empty battery.
    pub fn grid(&self) -> Result<Grid, PolicyError> {
        let first = GRID_START * self.capacity.min(1.0);
        Ok(Grid::graded(first, self.capacity, self.nodes)?)
    }

    pub fn lower_bound(&self) -> Result<f64, PolicyError> {
        Ok(lower_bound(
            &self.source,
            &self.channel,
            &self.arrivals,
            self.capacity,
        )?)
    }

    fn leak(&self, z: f64) -> f64 {
        self.leakage.rate_unchecked(z.max(0.0))
    }
}

/// Free constants of the adaptive optimality conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationalConstants {
    pub beta: f64,
    pub c1: f64,
    pub c2: f64,
}

impl VariationalConstants {
    pub fn new(beta: f64, c1: f64, c2: f64) -> Self {
        Self { beta, c1, c2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PolicyKind {
    Adaptive(VariationalConstants),
    /// `kappa = 1` with ODE constant `c`.
    ConstantKappa { c: f64 },
}

/// Solved policy on the grid together with its stationary battery law.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySolution {
    pub system: SystemConfig,
    pub kind: PolicyKind,
    pub grid: Grid,
    pub p: Vec<f64>,
    pub kappa: Vec<f64>,
    pub f: Vec<f64>,
    /// Density just above the empty battery.
    pub f0plus: f64,
    /// Mismatch factor just above the empty battery.
    pub kappa0plus: f64,
    /// `pi0 + int_0^z f` at every node.
    pub cdf: Vec<f64>,
    pub pi0: f64,
    pub kappa0: f64,
    /// Instantaneous distortion level for `z > 0`; `None` for constant mismatch.
    pub d_beta: Option<f64>,
    pub d_avg: f64,
    /// `int f / kappa`; feasibility requires it below one.
    pub inv_kappa_mass: f64,
    pub residual50: f64,
    pub feasible: bool,
    pub diagnostic: Option<String>,
}

impl PolicySolution {
    pub fn z(&self) -> &[f64] {
        self.grid.nodes()
    }

    fn anchored(&self, values: &[f64], at_zero_plus: f64, z: f64) -> f64 {
        if z <= 0.0 {
            return f64::NAN;
        }
        let z0 = self.grid.first();
        if z < z0 {
            return at_zero_plus + (values[0] - at_zero_plus) * z / z0;
        }
        self.grid.interpolate(values, z)
    }

    /// Transmit power at charge `z`: zero on the empty battery, linear
    /// between `(0, p(0+))` and the grid otherwise.
    pub fn power_at(&self, z: f64) -> f64 {
        if z <= 0.0 {
            0.0
        } else {
            self.anchored(&self.p, self.system.p0plus, z)
        }
    }

    /// `1/kappa` at charge `z`, using `1/kappa(0)` on the empty battery.
    pub fn inv_kappa_at(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 1.0 / self.kappa0;
        }
        let q: Vec<f64> = self.kappa.iter().map(|k| 1.0 / k).collect();
        self.anchored(&q, 1.0 / self.kappa0plus, z)
    }

    /// Stationary probability that the charge is at most `z`.
    pub fn cdf_at(&self, z: f64) -> f64 {
        if z < 0.0 {
            return 0.0;
        }
        if z == 0.0 {
            return self.pi0;
        }
        self.anchored(&self.cdf, self.pi0, z).min(1.0)
    }

    /// Instantaneous distortion at every node.
    pub fn distortion_profile(&self) -> Result<Vec<f64>, PolicyError> {
        let s = &self.system;
        self.p
            .iter()
            .zip(&self.kappa)
            .map(|(&p, &k)| Ok(distortion(&s.source, &s.channel, p, k)?))
            .collect()
    }

    /// Stationary mean transmit power `int p f`.
    pub fn mean_power(&self) -> Result<f64, PolicyError> {
        let pf: Vec<f64> = self.p.iter().zip(&self.f).map(|(p, f)| p * f).collect();
        let lead = 0.5 * self.grid.first() * (self.system.p0plus * self.f0plus + pf[0]);
        Ok(lead + self.grid.integrate_cubic(&pf)?)
    }

    pub fn is_power_nondecreasing(&self) -> bool {
        self.system.p0plus <= self.p[0] && self.p.windows(2).all(|w| w[1] >= w[0])
    }

    pub fn is_kappa_nonincreasing(&self) -> bool {
        self.kappa0plus >= self.kappa[0] && self.kappa.windows(2).all(|w| w[1] <= w[0])
    }

    /// Copy with the power profile replaced and every derived quantity
    /// recomputed with the mismatch profile held fixed.
    pub fn with_power(&self, p: Vec<f64>) -> Result<Self, PolicyError> {
        if p.len() != self.p.len() {
            return Err(NumericsError::LengthMismatch {
                values: p.len(),
                nodes: self.p.len(),
            }
            .into());
        }
        let mut out = self.clone();
        out.p = p;
        out.residual50 = match self.kind {
            PolicyKind::Adaptive(c) => residual_eq50(&out, &c)?,
            PolicyKind::ConstantKappa { c } => {
                max_abs(&residual_profile(&out, c / self.system.arrivals.lambda, 0.0)?)
            }
        };
        Ok(out)
    }
}

/// `(beta_min, beta_max)`: both sources have `R_s/R_s' -> 0` at either end,
/// so the range is `(-D_max, 0)`.
pub fn beta_range(src: &SourceModel) -> (f64, f64) {
    (-src.d_max(), 0.0)
}

/// `R_s(D)/R_s'(D) - D`, strictly decreasing on `(0, D_max)`.
pub fn beta_of_distortion(src: &SourceModel, d: f64) -> Result<f64, PolicyError> {
    let dm = src.d_max();
    if d <= 0.0 {
        return Ok(0.0);
    }
    if d >= dm {
        return Ok(-dm);
    }
    let (r1, _) = src.rate_derivatives(d)?;
    Ok(src.rate(d)? / r1 - d)
}

fn check_beta(src: &SourceModel, beta: f64) -> Result<(), PolicyError> {
    let (lo, hi) = beta_range(src);
    if beta > lo && beta < hi {
        Ok(())
    } else {
        Err(PolicyError::BetaOutOfRange { beta, lo, hi })
    }
}

/// Unique distortion level `D_beta` with `beta_of_distortion(D_beta) = beta`.
pub fn beta_to_distortion(src: &SourceModel, beta: f64) -> Result<f64, PolicyError> {
    check_beta(src, beta)?;
    let g = |d: f64| beta_of_distortion(src, d).map_or(f64::NAN, |b| b - beta);
    Ok(find_root(g, RootBracket::new(0.0, src.d_max()).with_tol(0.0))?)
}

/// Gaussian `D_beta = sigma2 * exp(W_{-1}(beta / (sigma2 e)) + 1)`.
pub fn gaussian_beta_distortion(sigma2: f64, beta: f64) -> Result<f64, PolicyError> {
    check_beta(&SourceModel::Gaussian { variance: sigma2 }, beta)?;
    let w = lambert_w(Branch::Lower, beta / (sigma2 * std::f64::consts::E))?;
    Ok(sigma2 * (w + 1.0).exp())
}

/// Gaussian mismatch factor `-(W_{-1}(beta/(sigma2 e)) + 1) / ln(1 + p/N)`.
pub fn gaussian_kappa_closed_form(
    sigma2: f64,
    noise: f64,
    beta: f64,
    p: f64,
) -> Result<f64, PolicyError> {
    check_beta(&SourceModel::Gaussian { variance: sigma2 }, beta)?;
    if !(p > 0.0 && noise > 0.0) {
        return Err(PolicyError::InvalidInput(format!(
            "need p > 0 and N > 0, got p = {p}, N = {noise}"
        )));
    }
    let w = lambert_w(Branch::Lower, beta / (sigma2 * std::f64::consts::E))?;
    Ok(-(w + 1.0) / (p / noise).ln_1p())
}

/// Right-hand side `p' = F(p)` of the adaptive policy ODE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveRhs {
    channel: ChannelModel,
    delta: f64,
    lambda: f64,
    c1: f64,
    c2: f64,
    pub d_beta: f64,
    /// `R_s(D_beta)`.
    pub r_beta: f64,
    /// `R_s(D_beta) / R_s'(D_beta) = beta + D_beta`.
    ratio: f64,
}

pub fn adaptive_rhs(
    src: &SourceModel,
    ch: &ChannelModel,
    arrivals: &ArrivalModel,
    consts: &VariationalConstants,
) -> Result<AdaptiveRhs, PolicyError> {
    let d_beta = beta_to_distortion(src, consts.beta)?;
    let r_beta = src.rate(d_beta)?;
    let (s, _) = src.rate_derivatives(d_beta)?;
    Ok(AdaptiveRhs {
        channel: *ch,
        delta: arrivals.delta,
        lambda: arrivals.lambda,
        c1: consts.c1,
        c2: consts.c2,
        d_beta,
        r_beta,
        ratio: r_beta / s,
    })
}

impl AdaptiveRhs {
    fn rates(&self, p: f64) -> Result<(f64, f64, f64), ModelError> {
        let r = self.channel.rate(p)?;
        let (r1, r2) = self.channel.rate_derivatives(p)?;
        Ok((r, r1, r2))
    }

    pub fn denominator(&self, p: f64) -> Result<f64, ModelError> {
        let (_, r1, r2) = self.rates(p)?;
        Ok((self.d_beta + self.c1) * r1 - self.ratio * (p * r2 + r1))
    }

    pub fn numerator(&self, p: f64) -> Result<f64, ModelError> {
        let (r, r1, _) = self.rates(p)?;
        let a = self.ratio;
        Ok(self.delta * a * r1 + self.lambda * (self.d_beta + self.c1) * r
            - self.lambda * a * p * r1
            + self.lambda * self.c2 * self.r_beta)
    }

    pub fn eval(&self, p: f64) -> Result<f64, RhsFailure> {
        let fail = |e: ModelError| RhsFailure(e.to_string());
        let den = self.denominator(p).map_err(fail)?;
        if den.abs() < SINGULAR_DENOMINATOR {
            return Err(RhsFailure(format!("singular denominator {den:e} at p = {p}")));
        }
        Ok(self.numerator(p).map_err(fail)? / den)
    }

    /// Mismatch factor that holds the distortion at `D_beta`.
    pub fn kappa(&self, p: f64) -> Result<f64, ModelError> {
        Ok(self.r_beta / self.channel.rate(p)?)
    }

    /// Value of the optimality condition at `z = L`, where its integral
    /// term vanishes.
    pub fn endpoint_residual(&self, p: f64) -> Result<f64, ModelError> {
        let k = self.kappa(p)?;
        let (_, r1, _) = self.rates(p)?;
        let dd_dp = k * r1 * self.ratio / self.r_beta;
        Ok(self.d_beta - dd_dp * p + self.c1 + self.c2 * k)
    }
}

/// Rejects steps that carry the denominator of `F` through zero.
fn guarded(rhs: &AdaptiveRhs, sign: f64, p: f64) -> Result<f64, RhsFailure> {
    let den = rhs
        .denominator(p)
        .map_err(|e| RhsFailure(e.to_string()))?;
    if den * sign <= 0.0 {
        return Err(RhsFailure(format!("denominator changed sign at p = {p}")));
    }
    rhs.eval(p)
}

fn initial_sign(rhs: &AdaptiveRhs, p0: f64) -> Result<f64, PolicyError> {
    let den = rhs.denominator(p0)?;
    if den.abs() < SINGULAR_DENOMINATOR {
        return Err(PolicyError::Singular {
            z: 0.0,
            reason: format!("singular denominator at p(0+) = {p0}"),
        });
    }
    Ok(den.signum())
}

struct Stationary {
    f: Vec<f64>,
    f0plus: f64,
    cdf: Vec<f64>,
    pi0: f64,
    inv_kappa_mass: f64,
    /// `int D f / kappa`.
    weighted_distortion: f64,
}

/// Stationary law from the level-crossing balance: the density is
/// `pi0 * delta e^{-lambda z} / (p + l) * exp(int_0^z delta / (p + l))`,
/// handled in log space.
#[allow(clippy::too_many_arguments)]
fn stationary(
    sys: &SystemConfig,
    grid: &Grid,
    p: &[f64],
    exponent: &[f64],
    q: &[f64],
    d: &[f64],
    q0: f64,
    d0: f64,
) -> Result<Stationary, PolicyError> {
    let ArrivalModel { delta, lambda } = sys.arrivals;
    let z = grid.nodes();
    let log_f: Vec<f64> = (0..z.len())
        .map(|i| delta.ln() - lambda * z[i] - (p[i] + sys.leak(z[i])).ln() + exponent[i])
        .collect();
    let log_f0 = delta.ln() - (sys.p0plus + sys.leak(0.0)).ln();
    let m = log_f.iter().copied().fold(log_f0, f64::max);
    let scaled: Vec<f64> = log_f.iter().map(|l| (l - m).exp()).collect();
    let scaled0 = (log_f0 - m).exp();

    let lead = |v0: f64, v1: f64| 0.5 * grid.first() * (v0 + v1);
    let mass = lead(scaled0, scaled[0]) + grid.integrate_cubic(&scaled)?;
    let norm = (-m).exp() + mass;
    let pi0 = (-m).exp() / norm;
    let f: Vec<f64> = scaled.iter().map(|s| s / norm).collect();
    let f0plus = scaled0 / norm;

    let cum = grid.cumulative_cubic(&f)?;
    let head = pi0 + lead(f0plus, f[0]);
    let cdf = cum.iter().map(|c| head + c).collect();

    let fq: Vec<f64> = f.iter().zip(q).map(|(f, q)| f * q).collect();
    let inv_kappa_mass = lead(f0plus * q0, fq[0]) + grid.integrate_cubic(&fq)?;
    let fqd: Vec<f64> = fq.iter().zip(d).map(|(a, d)| a * d).collect();
    let weighted_distortion = lead(f0plus * q0 * d0, fqd[0]) + grid.integrate_cubic(&fqd)?;
    Ok(Stationary {
        f,
        f0plus,
        cdf,
        pi0,
        inv_kappa_mass,
        weighted_distortion,
    })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Integrates `[p, int delta/(p+l)]` from `(0, p0plus)` over the grid.
fn integrate_power<F>(sys: &SystemConfig, grid: &Grid, mut dp: F) -> Result<(Vec<f64>, Vec<f64>), PolicyError>
where
    F: FnMut(f64) -> Result<f64, RhsFailure>,
{
    let delta = sys.arrivals.delta;
    let options = IntegrateOptions {
        sampling: Sampling::At(grid.nodes()),
        keep_positive: Some(0),
        tol: policy_tolerances(),
        ..Default::default()
    };
    let traj = integrate_system(
        |z, y: &[f64; 2]| Ok([dp(y[0])?, delta / (y[0] + sys.leak(z))]),
        0.0,
        [sys.p0plus, 0.0],
        sys.capacity,
        &options,
    )?;
    Ok(traj.y.iter().map(|y| (y[0], y[1])).unzip())
}

/// Solves the adaptive policy for the given constants. Constants that make
/// the ODE singular return [`PolicyError::Singular`]; a solution whose
/// stationary mismatch constraint cannot be met is returned with
/// `feasible = false`.
pub fn solve_adaptive(
    sys: &SystemConfig,
    consts: &VariationalConstants,
) -> Result<PolicySolution, PolicyError> {
    sys.validate()?;
    let rhs = adaptive_rhs(&sys.source, &sys.channel, &sys.arrivals, consts)?;
    let sign = initial_sign(&rhs, sys.p0plus)?;
    let grid = sys.grid()?;
    let (p, exponent) = integrate_power(sys, &grid, |p| guarded(&rhs, sign, p))?;

    let kappa = p
        .iter()
        .map(|&p| rhs.kappa(p))
        .collect::<Result<Vec<_>, _>>()?;
    let q: Vec<f64> = kappa.iter().map(|k| 1.0 / k).collect();
    let kappa0plus = rhs.kappa(sys.p0plus)?;
    let d = vec![rhs.d_beta; p.len()];
    let st = stationary(sys, &grid, &p, &exponent, &q, &d, 1.0 / kappa0plus, rhs.d_beta)?;

    let d_max = sys.source.d_max();
    let slack = 1.0 - st.inv_kappa_mass;
    let feasible = slack > 0.0 && p.iter().chain(&kappa).all(|v| v.is_finite() && *v > 0.0);
    let diagnostic = (!feasible).then(|| {
        format!(
            "stationary mismatch constraint violated: int f/kappa = {} >= 1",
            st.inv_kappa_mass
        )
    });
    let mut sol = PolicySolution {
        system: sys.clone(),
        kind: PolicyKind::Adaptive(*consts),
        grid,
        p,
        kappa,
        f: st.f,
        f0plus: st.f0plus,
        kappa0plus,
        cdf: st.cdf,
        pi0: st.pi0,
        kappa0: st.pi0 / slack,
        d_beta: Some(rhs.d_beta),
        d_avg: d_max * slack + st.weighted_distortion,
        inv_kappa_mass: st.inv_kappa_mass,
        residual50: f64::NAN,
        feasible,
        diagnostic,
    };
    sol.residual50 = residual_eq50(&sol, consts)?;
    Ok(sol)
}

/// Residual of the optimality condition at `z = L` as a function of the
/// constants, from a single integration of the power ODE.
pub fn endpoint_residual(
    sys: &SystemConfig,
    consts: &VariationalConstants,
) -> Result<f64, PolicyError> {
    sys.validate()?;
    let rhs = adaptive_rhs(&sys.source, &sys.channel, &sys.arrivals, consts)?;
    let sign = initial_sign(&rhs, sys.p0plus)?;
    let options = IntegrateOptions {
        sampling: Sampling::End,
        keep_positive: Some(0),
        tol: policy_tolerances(),
        ..Default::default()
    };
    let traj = integrate_system(
        |_, y: &[f64; 1]| Ok([guarded(&rhs, sign, y[0])?]),
        0.0,
        [sys.p0plus],
        sys.capacity,
        &options,
    )?;
    let (_, y) = traj.last().expect("end sample");
    Ok(rhs.endpoint_residual(y[0])?)
}

/// Search window for the endpoint-closing `C2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosureWindow {
    pub lo: f64,
    pub hi: f64,
    /// Number of scan intervals used to bracket sign changes.
    pub scan: usize,
}

impl ClosureWindow {
    pub fn around(c2: f64, half_width: f64, scan: usize) -> Self {
        Self {
            lo: c2 - half_width,
            hi: c2 + half_width,
            scan,
        }
    }
}

/// Chooses `C2` so that the optimality condition also holds at `z = L`.
///
/// The ODE alone only enforces the derivative of the condition, so the
/// condition itself holds for all `z` exactly when it holds at the
/// endpoint. Every sign change of the endpoint residual inside the window
/// is refined; the feasible closed solution with the lowest average
/// distortion is returned, or the best infeasible one if none is feasible.
pub fn close_endpoint(
    sys: &SystemConfig,
    beta: f64,
    c1: f64,
    window: ClosureWindow,
) -> Result<PolicySolution, PolicyError> {
    if !(window.hi > window.lo) || window.scan == 0 {
        return Err(PolicyError::InvalidInput(format!(
            "empty closure window [{}, {}]",
            window.lo, window.hi
        )));
    }
    let consts = |c2| VariationalConstants { beta, c1, c2 };
    let g = |c2: f64| match endpoint_residual(sys, &consts(c2)) {
        Ok(r) => Ok(r),
        Err(e) if e.is_infeasible() => Ok(f64::NAN),
        Err(e) => Err(e),
    };
    let step = (window.hi - window.lo) / window.scan as f64;
    let xs: Vec<f64> = (0..=window.scan).map(|i| window.lo + step * i as f64).collect();
    let vals = xs.iter().map(|&x| g(x)).collect::<Result<Vec<_>, _>>()?;

    // Intervals bordering a singular region are only searched when the
    // regular brackets give no feasible closure, since every probe there
    // costs a full solve.
    let mut best: Option<PolicySolution> = None;
    for edges in [false, true] {
        if edges && best.as_ref().is_some_and(|b| b.feasible) {
            break;
        }
        for i in 0..window.scan {
            let (a, b) = ((xs[i], vals[i]), (xs[i + 1], vals[i + 1]));
            let bracket = if edges {
                edge_bracket(&g, a, b)?
            } else {
                (a.1.is_finite() && b.1.is_finite() && a.1.signum() != b.1.signum())
                    .then_some((a.0, b.0))
            };
            let Some((lo, hi)) = bracket else { continue };
            let root = find_root(
                |x| g(x).unwrap_or(f64::NAN),
                RootBracket::new(lo, hi).with_tol(1e-13),
            )?;
            let sol = match solve_adaptive(sys, &consts(root)) {
                Ok(s) => s,
                Err(e) if e.is_infeasible() => continue,
                Err(e) => return Err(e),
            };
            let better = match &best {
                None => true,
                Some(b) => (sol.feasible, -sol.d_avg) > (b.feasible, -b.d_avg),
            };
            if better {
                best = Some(sol);
            }
        }
    }
    best.ok_or_else(|| {
        PolicyError::NoClosure(format!(
            "endpoint residual has no sign change for C2 in [{}, {}]",
            window.lo, window.hi
        ))
    })
}

/// Well-posed policy solves take a few hundred steps; a stiff start near a
/// vanishing denominator would otherwise grind through millions.
fn policy_tolerances() -> OdeTolerances {
    OdeTolerances {
        max_steps: 100_000,
        ..Default::default()
    }
}

/// Bracket of a sign change between a finite and a singular scan point.
///
/// At large capacities the power blows up before `z = L` unless `C2` is
/// nearly exact, so the closing root often sits right next to a singular
/// region. The interval is bisected towards the edge of the finite region
/// while the residual shrinks; a growing residual means the edge is a
/// pole rather than a root, and the search stops there.
fn edge_bracket<G>(g: &G, a: (f64, f64), b: (f64, f64)) -> Result<Option<(f64, f64)>, PolicyError>
where
    G: Fn(f64) -> Result<f64, PolicyError>,
{
    let (mut good, mut bad) = match (a.1.is_finite(), b.1.is_finite()) {
        (true, false) => (a, b),
        (false, true) => (b, a),
        _ => return Ok(None),
    };
    for _ in 0..EDGE_BISECTIONS {
        let x = 0.5 * (good.0 + bad.0);
        let v = g(x)?;
        if !v.is_finite() {
            bad = (x, v);
        } else if v.signum() != good.1.signum() {
            return Ok(Some(if good.0 < x { (good.0, x) } else { (x, good.0) }));
        } else if v.abs() >= good.1.abs() {
            return Ok(None);
        } else {
            good = (x, v);
        }
    }
    Ok(None)
}

const EDGE_BISECTIONS: usize = 30;

/// `D(p, 1)` with its first two derivatives in `p`.
fn unit_mismatch_distortion(
    src: &SourceModel,
    ch: &ChannelModel,
    p: f64,
) -> Result<(f64, f64, f64), RhsFailure> {
    let fail = |e: ModelError| RhsFailure(e.to_string());
    let d = distortion(src, ch, p, 1.0).map_err(fail)?;
    let (s1, s2) = src.rate_derivatives(d).map_err(fail)?;
    let (r1, r2) = ch.rate_derivatives(p).map_err(fail)?;
    let d1 = r1 / s1;
    let d2 = r2 / s1 - r1 * r1 * s2 / (s1 * s1 * s1);
    Ok((d, d1, d2))
}

/// `-lambda D(delta/lambda, 1)`: the constant for which the mean harvest
/// rate is a fixed point of the constant-mismatch ODE.
pub fn constant_kappa_fixed_point(sys: &SystemConfig) -> Result<f64, PolicyError> {
    let ArrivalModel { delta, lambda } = sys.arrivals;
    Ok(-lambda * distortion(&sys.source, &sys.channel, delta / lambda, 1.0)?)
}

/// Right-hand side of the constant-mismatch ODE,
/// `p' = -(lambda D + (delta - lambda p) D' + c) / (p D'')`.
pub fn constant_kappa_rhs(sys: &SystemConfig, c: f64, p: f64) -> Result<f64, RhsFailure> {
    let ArrivalModel { delta, lambda } = sys.arrivals;
    let (d, d1, d2) = unit_mismatch_distortion(&sys.source, &sys.channel, p)?;
    let den = p * d2;
    if den.abs() < SINGULAR_DENOMINATOR {
        return Err(RhsFailure(format!("singular denominator {den:e} at p = {p}")));
    }
    Ok(-(lambda * d + (delta - lambda * p) * d1 + c) / den)
}

/// Policy with `kappa = 1` everywhere, started from `p(0+)`.
pub fn solve_constant_kappa(sys: &SystemConfig, c: f64) -> Result<PolicySolution, PolicyError> {
    sys.validate()?;
    let grid = sys.grid()?;
    let (p, exponent) = integrate_power(sys, &grid, |p| constant_kappa_rhs(sys, c, p))?;
    let d = p
        .iter()
        .map(|&p| distortion(&sys.source, &sys.channel, p, 1.0))
        .collect::<Result<Vec<_>, _>>()?;
    let d0 = distortion(&sys.source, &sys.channel, sys.p0plus, 1.0)?;
    let ones = vec![1.0; p.len()];
    let st = stationary(sys, &grid, &p, &exponent, &ones, &d, 1.0, d0)?;
    let feasible = p.iter().all(|v| v.is_finite() && *v > 0.0);
    let mut sol = PolicySolution {
        system: sys.clone(),
        kind: PolicyKind::ConstantKappa { c },
        kappa: ones,
        grid,
        p,
        f: st.f,
        f0plus: st.f0plus,
        kappa0plus: 1.0,
        cdf: st.cdf,
        pi0: st.pi0,
        kappa0: 1.0,
        d_beta: None,
        d_avg: st.pi0 * sys.source.d_max() + st.weighted_distortion,
        inv_kappa_mass: st.inv_kappa_mass,
        residual50: f64::NAN,
        feasible,
        diagnostic: (!feasible).then(|| "non-positive power".to_string()),
    };
    sol.residual50 = max_abs(&residual_profile(&sol, c / sys.arrivals.lambda, 0.0)?);
    Ok(sol)
}

/// Pointwise residual of the integral optimality condition
/// `delta e^{lambda z} kappa int_z^L D_p e^{-lambda u} / kappa du
///  + D - D_p p + c1 + c2 kappa`, with `D_p = kappa R_c'(p) / R_s'(D)`.
pub fn residual_profile(sol: &PolicySolution, c1: f64, c2: f64) -> Result<Vec<f64>, PolicyError> {
    let s = &sol.system;
    let ArrivalModel { delta, lambda } = s.arrivals;
    let z = sol.grid.nodes();
    let d = sol.distortion_profile()?;
    let mut dd_dp = Vec::with_capacity(z.len());
    for i in 0..z.len() {
        let slope = match s.source.rate_derivatives(d[i]) {
            Ok((s1, _)) => sol.kappa[i] * s.channel.rate_derivatives(sol.p[i])?.0 / s1,
            // Saturated distortion (0 or D_max) does not respond to power.
            Err(_) => 0.0,
        };
        dd_dp.push(slope);
    }
    let integrand: Vec<f64> = (0..z.len())
        .map(|i| dd_dp[i] * (-lambda * z[i]).exp() / sol.kappa[i])
        .collect();
    let tail = sol.grid.tail_cubic(&integrand)?;
    Ok((0..z.len())
        .map(|i| {
            let k = sol.kappa[i];
            delta * (lambda * z[i]).exp() * k * tail[i] + d[i] - dd_dp[i] * sol.p[i] + c1 + c2 * k
        })
        .collect())
}

/// Largest absolute residual of the optimality condition over the grid.
pub fn residual_eq50(
    sol: &PolicySolution,
    consts: &VariationalConstants,
) -> Result<f64, PolicyError> {
    Ok(max_abs(&residual_profile(sol, consts.c1, consts.c2)?))
}

/// Unbounded battery transmitting at `delta/lambda + epsilon` whenever it is
/// non-empty: returns `(pi0, D_avg)`.
pub fn constant_power_scheme(
    src: &SourceModel,
    ch: &ChannelModel,
    arrivals: &ArrivalModel,
    epsilon: f64,
) -> Result<(f64, f64), PolicyError> {
    if !(epsilon > 0.0) {
        return Err(PolicyError::InvalidInput(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let m = arrivals.mean_rate();
    let pi0 = 1.0 - m / (m + epsilon);
    let d_avg = (1.0 - pi0) * d_dagger(src, ch, m + epsilon, 1.0)? + pi0 * src.d_max();
    Ok((pi0, d_avg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gauss_system(l: f64) -> SystemConfig {
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

    fn bern_system(l: f64) -> SystemConfig {
        SystemConfig {
            source: SourceModel::Bernoulli { p: 0.5 },
            ..gauss_system(l)
        }
    }

    fn t1_l5() -> VariationalConstants {
        VariationalConstants::new(-0.8738, -0.89, 0.34)
    }

    #[test]
    fn beta_ranges() {
        assert_eq!(beta_range(&SourceModel::Gaussian { variance: 1.0 }), (-1.0, 0.0));
        assert_eq!(beta_range(&SourceModel::Bernoulli { p: 0.5 }), (-0.5, 0.0));
        assert_eq!(beta_range(&SourceModel::Gaussian { variance: 4.0 }), (-4.0, 0.0));
    }

    #[test]
    fn beta_to_distortion_examples() {
        let g = SourceModel::Gaussian { variance: 1.0 };
        let d = beta_to_distortion(&g, -0.8738).unwrap();
        assert!((d - 0.5418).abs() < 0.002, "{d}");
        assert!(beta_to_distortion(&g, -1.0 + 1e-12).unwrap() > 0.999);
        assert!(beta_to_distortion(&g, -1.0).is_err());
        assert!(beta_to_distortion(&g, 0.0).is_err());

        let b = SourceModel::Bernoulli { p: 0.5 };
        let db = beta_to_distortion(&b, -0.2901).unwrap();
        assert!(db > 0.0 && db < 0.5);
        assert!((beta_of_distortion(&b, db).unwrap() + 0.2901).abs() < 1e-12);
    }

    #[test]
    fn lambert_path_matches_bisection() {
        let g = SourceModel::Gaussian { variance: 2.5 };
        for i in 1..200 {
            let beta = -2.5 * i as f64 / 200.0;
            let a = beta_to_distortion(&g, beta).unwrap();
            let b = gaussian_beta_distortion(2.5, beta).unwrap();
            assert!((a - b).abs() < 1e-10, "beta={beta}: {a} vs {b}");
        }
    }

    #[test]
    fn kappa_closed_form() {
        let rhs = adaptive_rhs(
            &SourceModel::Gaussian { variance: 1.0 },
            &ChannelModel::Awgn { noise: 1.0 },
            &ArrivalModel {
                delta: 1.0,
                lambda: 1.0,
            },
            &t1_l5(),
        )
        .unwrap();
        let k = gaussian_kappa_closed_form(1.0, 1.0, -0.8738, 3.0).unwrap();
        let w = lambert_w(Branch::Lower, -0.8738 / std::f64::consts::E).unwrap();
        assert!(k > 0.0);
        assert!((k + (w + 1.0) / 4f64.ln()).abs() < 1e-15);
        assert!(((k - rhs.kappa(3.0).unwrap()) / k).abs() < 1e-10);
        let near_edge = gaussian_kappa_closed_form(1.0, 1.0, -1.0 + 1e-12, 3.0).unwrap();
        assert!(near_edge > 0.0 && near_edge < 1e-5);
        assert!(gaussian_kappa_closed_form(1.0, 1.0, -0.5, 0.0).is_err());
    }

    #[test]
    fn rhs_positive_at_start() {
        let sys = gauss_system(5.0);
        let rhs = adaptive_rhs(&sys.source, &sys.channel, &sys.arrivals, &t1_l5()).unwrap();
        assert!(rhs.eval(0.001).unwrap() > 0.0);
    }

    #[test]
    fn table_one_row_five_published_constants() {
        let sol = solve_adaptive(&gauss_system(5.0), &t1_l5()).unwrap();
        assert!((sol.d_avg / 0.5417 - 1.0).abs() < 0.02, "{}", sol.d_avg);
        assert!(sol.is_power_nondecreasing());
        assert!(sol.is_kappa_nonincreasing());
    }

    #[test]
    fn table_two_and_three_published_constants() {
        let mut leaky = gauss_system(5.0);
        leaky.leakage = LeakageModel::Increasing;
        let t2 = solve_adaptive(&leaky, &VariationalConstants::new(-0.9302, -0.93, 0.34)).unwrap();
        assert!((t2.d_avg / 0.6566 - 1.0).abs() < 0.02, "{}", t2.d_avg);
        let t3 = solve_adaptive(&bern_system(1.0), &VariationalConstants::new(-0.3450, -0.36, 0.13))
            .unwrap();
        assert!((t3.d_avg / 0.2097 - 1.0).abs() < 0.02, "{}", t3.d_avg);
    }

    #[test]
    fn closed_solution_satisfies_invariants() {
        let sys = gauss_system(5.0);
        let sol = close_endpoint(&sys, -0.8738, -0.89, ClosureWindow::around(0.34, 0.1, 20)).unwrap();
        assert!(sol.residual50 < 1e-5, "{}", sol.residual50);
        let PolicyKind::Adaptive(c) = sol.kind else { panic!() };
        assert!((c.c2 - 0.3481).abs() < 1e-3, "{}", c.c2);

        let d_beta = sol.d_beta.unwrap();
        for d in sol.distortion_profile().unwrap() {
            assert!(((d - d_beta) / d_beta).abs() < 1e-8);
        }
        let mass = sol.cdf.last().unwrap();
        assert!((mass - 1.0).abs() < 1e-8);
        assert!((sol.pi0 / sol.kappa0 + sol.inv_kappa_mass - 1.0).abs() < 1e-8);
        let identity = d_beta + sol.pi0 / sol.kappa0 * (1.0 - d_beta);
        assert!((sol.d_avg - identity).abs() < 1e-8);

        let scaled: Vec<f64> = sol.p.iter().map(|p| 1.1 * p).collect();
        assert!(sol.with_power(scaled).unwrap().residual50 > 1e-3);
    }

    #[test]
    fn level_crossing_balance() {
        let sol = solve_adaptive(&gauss_system(5.0), &t1_l5()).unwrap();
        let z = sol.z();
        let g: Vec<f64> = z.iter().zip(&sol.f).map(|(z, f)| z.exp() * f).collect();
        let cum = sol.grid.cumulative_cubic(&g).unwrap();
        let head = sol.pi0 + 0.5 * z[0] * (sol.f0plus + g[0]);
        for i in 1..z.len() - 1 {
            let lhs = sol.f[i] * sol.p[i];
            let rhs = (-z[i]).exp() * (head + cum[i]);
            assert!(((lhs - rhs) / rhs).abs() < 1e-6, "z={} {lhs} {rhs}", z[i]);
        }
    }

    #[test]
    fn endpoint_residual_is_last_profile_value() {
        let sys = gauss_system(3.0);
        let c = VariationalConstants::new(-0.894, -0.90, 0.32);
        let sol = solve_adaptive(&sys, &c).unwrap();
        let prof = residual_profile(&sol, c.c1, c.c2).unwrap();
        let e = endpoint_residual(&sys, &c).unwrap();
        assert!((prof.last().unwrap() - e).abs() < 1e-7);
    }

    #[test]
    fn constant_kappa_fixed_point_is_flat() {
        let sys = gauss_system(5.0).with_p0plus(1.0);
        let c = constant_kappa_fixed_point(&sys).unwrap();
        assert!((c + 0.5).abs() < 1e-15);
        assert!(constant_kappa_rhs(&sys, c, 1.0).unwrap().abs() < 1e-12);
        let sol = solve_constant_kappa(&sys, c).unwrap();
        assert!(sol.p.iter().all(|p| (p - 1.0).abs() < 1e-9));
    }

    #[test]
    fn constant_kappa_below_fixed_point_is_monotone_and_bounded() {
        let sys = gauss_system(5.0);
        let lb = sys.lower_bound().unwrap();
        let mut best = f64::INFINITY;
        for i in 1..=40 {
            let c = -0.5 - 0.02 * i as f64;
            if let Ok(sol) = solve_constant_kappa(&sys, c) {
                assert!(sol.is_power_nondecreasing(), "C={c}");
                assert_eq!(sol.kappa0, 1.0);
                best = best.min(sol.d_avg);
            }
        }
        assert!(best.is_finite() && best >= lb, "{best} vs {lb}");
    }

    #[test]
    fn constant_power_scheme_examples() {
        let g = SourceModel::Gaussian { variance: 1.0 };
        let ch = ChannelModel::Awgn { noise: 1.0 };
        let a = ArrivalModel {
            delta: 1.0,
            lambda: 1.0,
        };
        let (pi0, _) = constant_power_scheme(&g, &ch, &a, 1.0).unwrap();
        assert!((pi0 - 0.5).abs() < 1e-15);
        let (_, d) = constant_power_scheme(&g, &ch, &a, 0.01).unwrap();
        assert!((d / 0.5 - 1.0).abs() < 0.01);
        let (_, d) = constant_power_scheme(&g, &ch, &a, 1e-9).unwrap();
        assert!((d - 0.5).abs() < 1e-8);
    }

    #[test]
    fn invalid_inputs() {
        let sys = gauss_system(5.0);
        assert!(matches!(
            solve_adaptive(&sys, &VariationalConstants::new(-1.5, 0.0, 0.0)),
            Err(PolicyError::BetaOutOfRange { .. })
        ));
        assert!(solve_adaptive(&sys.clone().with_p0plus(0.0), &t1_l5()).is_err());
        assert!(solve_adaptive(&sys.with_capacity(f64::INFINITY), &t1_l5()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn beta_map_is_decreasing(bern in any::<bool>(), u in 0.001f64..0.999, v in 0.001f64..0.999) {
            let src = if bern { SourceModel::Bernoulli { p: 0.5 } } else { SourceModel::Gaussian { variance: 1.0 } };
            prop_assume!((u - v).abs() > 1e-6);
            let dm = src.d_max();
            let (a, b) = (u.min(v) * dm, u.max(v) * dm);
            prop_assert!(beta_of_distortion(&src, a).unwrap() > beta_of_distortion(&src, b).unwrap());
            let beta = beta_of_distortion(&src, a).unwrap();
            prop_assert!((beta_to_distortion(&src, beta).unwrap() - a).abs() < 1e-9);
        }

        #[test]
        fn kappa_paths_agree_and_decrease(beta in -0.99f64..-0.01, p in 0.01f64..20.0, dp in 0.01f64..5.0) {
            let rhs = adaptive_rhs(
                &SourceModel::Gaussian { variance: 1.0 },
                &ChannelModel::Awgn { noise: 1.0 },
                &ArrivalModel { delta: 1.0, lambda: 1.0 },
                &VariationalConstants::new(beta, 0.0, 0.0),
            ).unwrap();
            let a = gaussian_kappa_closed_form(1.0, 1.0, beta, p).unwrap();
            prop_assert!(((a - rhs.kappa(p).unwrap()) / a).abs() < 1e-10);
            prop_assert!(gaussian_kappa_closed_form(1.0, 1.0, beta, p + dp).unwrap() < a);
        }
    }
}
