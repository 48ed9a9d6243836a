//! Source, channel, leakage and arrival models. All rates are in bits.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{find_root, RootBracket};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{what} = {value} is outside the valid domain")]
    Domain { what: &'static str, value: f64 },
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
}

fn domain(what: &'static str, value: f64) -> ModelError {
    ModelError::Domain { what, value }
}

/// Rate-distortion description of the source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SourceModel {
    /// Memoryless Gaussian source under squared error.
    Gaussian { variance: f64 },
    /// Bernoulli source under Hamming distortion.
    Bernoulli { p: f64 },
}

impl SourceModel {
    pub fn gaussian(variance: f64) -> Result<Self, ModelError> {
        let s = SourceModel::Gaussian { variance };
        s.validate()?;
        Ok(s)
    }

    pub fn bernoulli(p: f64) -> Result<Self, ModelError> {
        let s = SourceModel::Bernoulli { p };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            SourceModel::Gaussian { variance } if !(variance > 0.0 && variance.is_finite()) => Err(
                ModelError::InvalidParameter(format!("variance must be positive, got {variance}")),
            ),
            SourceModel::Bernoulli { p } if !(p > 0.0 && p < 1.0) => Err(
                ModelError::InvalidParameter(format!("Bernoulli parameter must lie in (0,1), got {p}")),
            ),
            _ => Ok(()),
        }
    }

    /// Distortion at zero rate.
    pub fn d_max(&self) -> f64 {
        match *self {
            SourceModel::Gaussian { variance } => variance,
            SourceModel::Bernoulli { p } => p.min(1.0 - p),
        }
    }

    /// Rate at which distortion reaches zero; infinite for Gaussian.
    pub fn rate_threshold(&self) -> f64 {
        match *self {
            SourceModel::Gaussian { .. } => f64::INFINITY,
            SourceModel::Bernoulli { p } => entropy(p),
        }
    }

    pub fn rate(&self, d: f64) -> Result<f64, ModelError> {
        if !(d >= 0.0) {
            return Err(domain("distortion", d));
        }
        if d >= self.d_max() {
            return Ok(0.0);
        }
        Ok(match *self {
            SourceModel::Gaussian { variance } => {
                if d == 0.0 {
                    f64::INFINITY
                } else {
                    0.5 * (variance / d).log2()
                }
            }
            SourceModel::Bernoulli { p } => (entropy(p) - entropy(d)).max(0.0),
        })
    }

    /// `(R_s'(D), R_s''(D))` on the open interval `(0, D_max)`.
    pub fn rate_derivatives(&self, d: f64) -> Result<(f64, f64), ModelError> {
        if !(d > 0.0 && d < self.d_max()) {
            return Err(domain("distortion", d));
        }
        Ok(match *self {
            SourceModel::Gaussian { .. } => (-1.0 / (2.0 * d * LN_2), 1.0 / (2.0 * d * d * LN_2)),
            SourceModel::Bernoulli { .. } => {
                ((d / (1.0 - d)).log2(), 1.0 / (d * (1.0 - d) * LN_2))
            }
        })
    }

    pub fn rate_inverse(&self, r: f64) -> Result<f64, ModelError> {
        if !(r >= 0.0) {
            return Err(domain("rate", r));
        }
        if r == 0.0 {
            return Ok(self.d_max());
        }
        if r >= self.rate_threshold() {
            return Ok(0.0);
        }
        match *self {
            SourceModel::Gaussian { variance } => Ok(variance * (-2.0 * r).exp2()),
            SourceModel::Bernoulli { p } => {
                let h = entropy(p);
                let target = |d: f64| h - entropy(d) - r;
                // Decreasing from h - r > 0 at D = 0 to -r < 0 at D_max.
                find_root(target, RootBracket::new(0.0, self.d_max()).with_tol(0.0))
                    .map_err(|e| ModelError::InvalidParameter(e.to_string()))
            }
        }
    }
}

/// Binary entropy in bits with `0 log 0 = 0`.
pub fn binary_entropy(d: f64) -> Result<f64, ModelError> {
    if !(0.0..=1.0).contains(&d) {
        return Err(domain("probability", d));
    }
    Ok(entropy(d))
}

fn entropy(d: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    term(d) + term(1.0 - d)
}

/// Rate of the channel as a function of transmit power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ChannelModel {
    /// Shannon rate of the AWGN channel with noise power `noise`.
    Awgn { noise: f64 },
}

impl ChannelModel {
    pub fn awgn(noise: f64) -> Result<Self, ModelError> {
        let c = ChannelModel::Awgn { noise };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ChannelModel::Awgn { noise } = *self;
        if noise > 0.0 && noise.is_finite() {
            Ok(())
        } else {
            Err(ModelError::InvalidParameter(format!(
                "noise power must be positive, got {noise}"
            )))
        }
    }

    pub fn rate(&self, p: f64) -> Result<f64, ModelError> {
        if !(p >= 0.0) {
            return Err(domain("power", p));
        }
        let ChannelModel::Awgn { noise } = *self;
        Ok(0.5 * (p / noise).ln_1p() / LN_2)
    }

    /// `(R_c'(p), R_c''(p))`.
    pub fn rate_derivatives(&self, p: f64) -> Result<(f64, f64), ModelError> {
        if !(p >= 0.0) {
            return Err(domain("power", p));
        }
        let ChannelModel::Awgn { noise } = *self;
        let s = noise + p;
        Ok((1.0 / (2.0 * LN_2 * s), -1.0 / (2.0 * LN_2 * s * s)))
    }
}

/// Tabulated leakage profile, interpolated linearly and held constant
/// outside the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageTable {
    z: Vec<f64>,
    rate: Vec<f64>,
}

impl LeakageTable {
    pub fn new(z: Vec<f64>, rate: Vec<f64>) -> Result<Self, ModelError> {
        if z.is_empty() || z.len() != rate.len() {
            return Err(ModelError::InvalidParameter(
                "leakage table needs matching non-empty columns".into(),
            ));
        }
        if z.windows(2).any(|w| !(w[1] > w[0])) || !(z[0] >= 0.0) {
            return Err(ModelError::InvalidParameter(
                "leakage abscissae must be non-negative and strictly increasing".into(),
            ));
        }
        if let Some(&bad) = rate.iter().find(|r| !(**r >= 0.0 && r.is_finite())) {
            return Err(ModelError::InvalidParameter(format!(
                "leakage rates must be finite and non-negative, got {bad}"
            )));
        }
        Ok(Self { z, rate })
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn rates(&self) -> &[f64] {
        &self.rate
    }

    fn eval(&self, z: f64) -> f64 {
        let n = self.z.len();
        if z <= self.z[0] {
            return self.rate[0];
        }
        if z >= self.z[n - 1] {
            return self.rate[n - 1];
        }
        let i = self.z.partition_point(|&x| x <= z) - 1;
        let t = (z - self.z[i]) / (self.z[i + 1] - self.z[i]);
        self.rate[i] + t * (self.rate[i + 1] - self.rate[i])
    }
}

/// Charge-dependent battery leakage rate.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeakageModel {
    #[default]
    Zero,
    /// `1 - e^{-z}`.
    Increasing,
    /// `e^{-z}`.
    Decreasing,
    Constant,
    Custom(LeakageTable),
}

impl LeakageModel {
    pub fn rate(&self, z: f64) -> Result<f64, ModelError> {
        if !(z >= 0.0) {
            return Err(domain("charge", z));
        }
        Ok(self.rate_unchecked(z))
    }

    /// Same as [`LeakageModel::rate`] for callers that already know `z >= 0`.
    pub fn rate_unchecked(&self, z: f64) -> f64 {
        match self {
            LeakageModel::Zero => 0.0,
            LeakageModel::Increasing => -(-z).exp_m1(),
            LeakageModel::Decreasing => (-z).exp(),
            LeakageModel::Constant => 1.0,
            LeakageModel::Custom(t) => t.eval(z),
        }
    }
}

/// Compound Poisson energy arrivals: events at rate `delta`, packet sizes
/// exponential with parameter `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalModel {
    pub delta: f64,
    pub lambda: f64,
}

impl ArrivalModel {
    pub fn new(delta: f64, lambda: f64) -> Result<Self, ModelError> {
        let a = Self { delta, lambda };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.delta > 0.0 && self.lambda > 0.0 && self.delta.is_finite() && self.lambda.is_finite()
        {
            Ok(())
        } else {
            Err(ModelError::InvalidParameter(format!(
                "arrival rate and packet parameter must be positive, got ({}, {})",
                self.delta, self.lambda
            )))
        }
    }

    /// Mean harvested power `delta / lambda`.
    pub fn mean_rate(&self) -> f64 {
        self.delta / self.lambda
    }

    /// Probability that a packet exceeds `z`.
    pub fn tail(&self, z: f64) -> f64 {
        (-self.lambda * z).exp()
    }
}

pub fn source_rate(src: &SourceModel, d: f64) -> Result<f64, ModelError> {
    src.rate(d)
}

pub fn source_rate_derivatives(src: &SourceModel, d: f64) -> Result<(f64, f64), ModelError> {
    src.rate_derivatives(d)
}

pub fn source_rate_inverse(src: &SourceModel, r: f64) -> Result<f64, ModelError> {
    src.rate_inverse(r)
}

pub fn channel_rate(ch: &ChannelModel, p: f64) -> Result<f64, ModelError> {
    ch.rate(p)
}

pub fn channel_rate_derivatives(ch: &ChannelModel, p: f64) -> Result<(f64, f64), ModelError> {
    ch.rate_derivatives(p)
}

pub fn leakage(lm: &LeakageModel, z: f64) -> Result<f64, ModelError> {
    lm.rate(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn g1() -> SourceModel {
        SourceModel::gaussian(1.0).unwrap()
    }

    fn b_half() -> SourceModel {
        SourceModel::bernoulli(0.5).unwrap()
    }

    fn awgn() -> ChannelModel {
        ChannelModel::awgn(1.0).unwrap()
    }

    #[test]
    fn source_rate_examples() {
        assert_relative_eq!(source_rate(&g1(), 0.25).unwrap(), 1.0);
        assert_eq!(source_rate(&g1(), 1.0).unwrap(), 0.0);
        // 0.16521 is the unrounded binary lower bound at L = 1.
        assert!((source_rate(&b_half(), 0.16521).unwrap() - 0.35342).abs() < 1e-4);
        assert_eq!(source_rate(&g1(), 0.0).unwrap(), f64::INFINITY);
        assert!(source_rate(&g1(), -0.1).is_err());
    }

    #[test]
    fn derivative_examples() {
        let (d1, _) = source_rate_derivatives(&g1(), 0.5).unwrap();
        assert_relative_eq!(d1, -1.0 / LN_2, max_relative = 1e-12);
        let (b1, _) = source_rate_derivatives(&b_half(), 0.25).unwrap();
        assert!((b1 + 1.58496).abs() < 1e-5);
        assert!(source_rate_derivatives(&b_half(), 0.5).is_err());
        assert!(source_rate_derivatives(&g1(), 0.0).is_err());
    }

    #[test]
    fn inverse_examples() {
        assert_relative_eq!(source_rate_inverse(&g1(), 1.0).unwrap(), 0.25);
        assert_eq!(source_rate_inverse(&b_half(), 1.0).unwrap(), 0.0);
        assert_eq!(source_rate_inverse(&g1(), 0.0).unwrap(), 1.0);
        assert!(source_rate_inverse(&g1(), -1.0).is_err());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert!((binary_entropy(0.16521).unwrap() - 0.6466).abs() < 1e-4);
        assert!(binary_entropy(1.5).is_err());
    }

    #[test]
    fn channel_examples() {
        assert_relative_eq!(channel_rate(&awgn(), 1.0).unwrap(), 0.5);
        assert_relative_eq!(channel_rate(&awgn(), 3.0).unwrap(), 1.0);
        assert_eq!(channel_rate(&awgn(), 0.0).unwrap(), 0.0);
        assert!(channel_rate(&awgn(), -1.0).is_err());
    }

    #[test]
    fn leakage_examples() {
        assert_eq!(leakage(&LeakageModel::Increasing, 0.0).unwrap(), 0.0);
        assert_eq!(leakage(&LeakageModel::Constant, 2.7).unwrap(), 1.0);
        assert_eq!(leakage(&LeakageModel::Decreasing, 0.0).unwrap(), 1.0);
        assert_eq!(leakage(&LeakageModel::Zero, 3.0).unwrap(), 0.0);
        assert!(leakage(&LeakageModel::Zero, -1.0).is_err());
        let t = LeakageTable::new(vec![0.0, 1.0, 2.0], vec![0.0, 0.5, 0.25]).unwrap();
        let custom = LeakageModel::Custom(t);
        assert_eq!(leakage(&custom, 0.5).unwrap(), 0.25);
        assert_eq!(leakage(&custom, 1.5).unwrap(), 0.375);
        assert_eq!(leakage(&custom, 9.0).unwrap(), 0.25);
    }

    #[test]
    fn parameters_validated() {
        assert!(SourceModel::gaussian(0.0).is_err());
        assert!(SourceModel::bernoulli(1.0).is_err());
        assert!(ChannelModel::awgn(-1.0).is_err());
        assert!(ArrivalModel::new(0.0, 1.0).is_err());
        assert!(LeakageTable::new(vec![1.0, 0.5], vec![0.0, 0.0]).is_err());
        assert_eq!(SourceModel::bernoulli(0.3).unwrap().d_max(), 0.3);
    }

    #[test]
    fn rate_slope_diverges_at_zero_distortion() {
        for d in [1e-8, 5e-8, 9e-8] {
            assert!(g1().rate_derivatives(d).unwrap().0 < -1e6);
        }
        // The binary slope log2(D/(1-D)) diverges only logarithmically.
        let slopes: Vec<f64> = [1e-8, 1e-50, 1e-300]
            .iter()
            .map(|&d| b_half().rate_derivatives(d).unwrap().0)
            .collect();
        assert!(slopes.windows(2).all(|w| w[1] < w[0]));
        assert!(slopes[2] < -990.0);
    }

    fn sources() -> impl Strategy<Value = SourceModel> {
        prop_oneof![
            (0.1f64..10.0).prop_map(|v| SourceModel::Gaussian { variance: v }),
            (0.05f64..0.95).prop_map(|p| SourceModel::Bernoulli { p }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn source_is_decreasing_convex_and_continuous(src in sources(), u in 0.001f64..0.999, v in 0.001f64..0.999) {
            let dm = src.d_max();
            let (a, b) = (u.min(v) * dm, u.max(v) * dm);
            prop_assume!(b - a > 1e-9);
            prop_assert!(src.rate(a).unwrap() > src.rate(b).unwrap());
            let (d1, d2) = src.rate_derivatives(a).unwrap();
            prop_assert!(d1 < 0.0 && d2 > 0.0);
            prop_assert!(src.rate(dm * (1.0 - 1e-12)).unwrap() < 1e-9);
            prop_assert_eq!(src.rate(dm).unwrap(), 0.0);
            prop_assert_eq!(src.rate(dm * 1.5).unwrap(), 0.0);
        }

        #[test]
        fn source_derivatives_match_finite_differences(src in sources(), u in 0.05f64..0.95) {
            let d = u * src.d_max();
            let h = 1e-5 * d;
            let (d1, d2) = src.rate_derivatives(d).unwrap();
            let r = |x: f64| src.rate(x).unwrap();
            let fd1 = (r(d + h) - r(d - h)) / (2.0 * h);
            let (e1, _) = src.rate_derivatives(d + h).unwrap();
            let (e0, _) = src.rate_derivatives(d - h).unwrap();
            let fd2 = (e1 - e0) / (2.0 * h);
            prop_assert!(((fd1 - d1) / d1).abs() < 1e-6, "{} vs {}", fd1, d1);
            prop_assert!(((fd2 - d2) / d2).abs() < 1e-6, "{} vs {}", fd2, d2);
        }

        #[test]
        fn inverse_undoes_rate(src in sources(), u in 0.001f64..0.999) {
            let d = u * src.d_max();
            let back = src.rate_inverse(src.rate(d).unwrap()).unwrap();
            prop_assert!((back - d).abs() < 1e-9, "{} vs {}", back, d);
        }

        #[test]
        fn entropy_is_symmetric(d in 0.0f64..=1.0) {
            prop_assert!((binary_entropy(d).unwrap() - binary_entropy(1.0 - d).unwrap()).abs() < 1e-14);
        }

        #[test]
        fn channel_is_increasing_and_concave(n in 0.1f64..10.0, a in 0.0f64..50.0, b in 0.0f64..50.0) {
            let ch = ChannelModel::Awgn { noise: n };
            prop_assert_eq!(ch.rate(0.0).unwrap(), 0.0);
            prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(ch.rate(lo).unwrap() < ch.rate(hi).unwrap());
            let (d1, d2) = ch.rate_derivatives(hi).unwrap();
            prop_assert!(d1 > 0.0 && d2 < 0.0);
            let h = 1e-4 * hi.max(1.0);
            let fd = (ch.rate(hi + h).unwrap() - ch.rate(hi - h).unwrap().max(0.0)) / (2.0 * h);
            if hi > h {
                prop_assert!(((fd - d1) / d1).abs() < 1e-6);
            }
        }
    }
}
