//! Separation-based distortion, its per-channel-use normalization D† and
//! the Jensen lower bound on the average distortion.

use serde::{Deserialize, Serialize};

use crate::models::{ArrivalModel, ChannelModel, ModelError, SourceModel};
use crate::numerics::SeededRng;

/// Distortion reached when `kappa` channel uses at power `p` carry one
/// source symbol: the solution of `R_s(D) = kappa * R_c(p)`.
pub fn distortion(
    src: &SourceModel,
    ch: &ChannelModel,
    p: f64,
    kappa: f64,
) -> Result<f64, ModelError> {
    if !(kappa > 0.0) {
        return Err(ModelError::Domain {
            what: "mismatch factor",
            value: kappa,
        });
    }
    let r = kappa * ch.rate(p)?;
    if r >= src.rate_threshold() {
        return Ok(0.0);
    }
    src.rate_inverse(r)
}

/// Gaussian source over AWGN: `sigma2 * (1 + p/N)^(-kappa)`.
pub fn gaussian_distortion(sigma2: f64, noise: f64, p: f64, kappa: f64) -> f64 {
    sigma2 * (-kappa * (p / noise).ln_1p()).exp()
}

/// `q * D(p, 1/q)`, the distortion per unit of channel time.
pub fn d_dagger(src: &SourceModel, ch: &ChannelModel, p: f64, q: f64) -> Result<f64, ModelError> {
    if !(q > 0.0) {
        return Err(ModelError::Domain {
            what: "inverse mismatch factor",
            value: q,
        });
    }
    Ok(q * distortion(src, ch, p, 1.0 / q)?)
}

/// Jensen bound `D†(delta/lambda * (1 - e^{-lambda L}), 1)`; pass
/// `f64::INFINITY` for an unbounded battery.
pub fn lower_bound(
    src: &SourceModel,
    ch: &ChannelModel,
    arrivals: &ArrivalModel,
    capacity: f64,
) -> Result<f64, ModelError> {
    if !(capacity > 0.0) {
        return Err(ModelError::Domain {
            what: "capacity",
            value: capacity,
        });
    }
    let mean_power = arrivals.mean_rate() * -(-arrivals.lambda * capacity).exp_m1();
    d_dagger(src, ch, mean_power, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionPoint {
    pub p: f64,
    pub kappa: f64,
    pub d: f64,
    pub d_dagger: f64,
}

impl DistortionPoint {
    pub fn evaluate(
        src: &SourceModel,
        ch: &ChannelModel,
        p: f64,
        kappa: f64,
    ) -> Result<Self, ModelError> {
        let d = distortion(src, ch, p, kappa)?;
        Ok(Self {
            p,
            kappa,
            d,
            d_dagger: d / kappa,
        })
    }
}

/// Sampling box `(0, p_hi] x (0, q_hi]` for the convexity probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeBox {
    pub p_hi: f64,
    pub q_hi: f64,
}

impl Default for ProbeBox {
    fn default() -> Self {
        Self {
            p_hi: 10.0,
            q_hi: 5.0,
        }
    }
}

const CHORD_SLACK: f64 = 1e-9;
const BOUNDARY_GAP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ChordViolation {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub t: f64,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianViolation {
    pub at: (f64, f64),
    pub d_pp: f64,
    pub det: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvexityReport {
    pub chord_checks: usize,
    pub chord_violations: Vec<ChordViolation>,
    pub hessian_checks: usize,
    pub hessian_skipped: usize,
    pub hessian_violations: Vec<HessianViolation>,
}

impl ConvexityReport {
    pub fn is_clean(&self) -> bool {
        self.chord_violations.is_empty() && self.hessian_violations.is_empty()
    }
}

/// `t D†(a) + (1-t) D†(b) - D†(t a + (1-t) b)` for points `(p, q)`.
pub fn chord_gap(
    src: &SourceModel,
    ch: &ChannelModel,
    a: (f64, f64),
    b: (f64, f64),
    t: f64,
) -> Result<f64, ModelError> {
    let mid = (t * a.0 + (1.0 - t) * b.0, t * a.1 + (1.0 - t) * b.1);
    let fa = d_dagger(src, ch, a.0, a.1)?;
    let fb = d_dagger(src, ch, b.0, b.1)?;
    Ok(t * fa + (1.0 - t) * fb - d_dagger(src, ch, mid.0, mid.1)?)
}

/// Finite-difference Hessian of D† at `(p, q)` as `(d_pp, d_pq, d_qq)`,
/// or `None` when the stencil touches the zero-distortion boundary or D†
/// is too small to be resolved.
///
/// Steps are `1e-4 * |x|`: near `q = 0` the curvature scale of D† is
/// `ln(1+p/N) / q^2`, which an absolute step cannot resolve.
pub fn d_dagger_hessian(
    src: &SourceModel,
    ch: &ChannelModel,
    p: f64,
    q: f64,
) -> Result<Option<(f64, f64, f64)>, ModelError> {
    if !(p > 0.0 && q > 0.0) {
        return Ok(None);
    }
    let hp = 1e-4 * p;
    let hq = 1e-4 * q;
    let threshold = src.rate_threshold();
    let mut f = [[0.0; 3]; 3];
    for (i, row) in f.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let pp = p + (i as f64 - 1.0) * hp;
            let qq = q + (j as f64 - 1.0) * hq;
            if threshold - ch.rate(pp)? / qq <= BOUNDARY_GAP {
                return Ok(None);
            }
            *v = d_dagger(src, ch, pp, qq)?;
            if *v < f64::MIN_POSITIVE {
                return Ok(None);
            }
        }
    }
    let d_pp = (f[2][1] - 2.0 * f[1][1] + f[0][1]) / (hp * hp);
    let d_qq = (f[1][2] - 2.0 * f[1][1] + f[1][0]) / (hq * hq);
    let d_pq = (f[2][2] - f[2][0] - f[0][2] + f[0][0]) / (4.0 * hp * hq);
    Ok(Some((d_pp, d_pq, d_qq)))
}

/// Randomized certification of joint convexity of D† over the default box.
pub fn convexity_probe(
    src: &SourceModel,
    ch: &ChannelModel,
    samples: usize,
    seed: u64,
) -> Result<ConvexityReport, ModelError> {
    convexity_probe_in(src, ch, samples, seed, ProbeBox::default())
}

pub fn convexity_probe_in(
    src: &SourceModel,
    ch: &ChannelModel,
    samples: usize,
    seed: u64,
    bounds: ProbeBox,
) -> Result<ConvexityReport, ModelError> {
    let mut rng = SeededRng::new(seed);
    let mut report = ConvexityReport::default();
    for _ in 0..samples {
        let a = (bounds.p_hi * rng.uniform(), bounds.q_hi * rng.uniform());
        let b = (bounds.p_hi * rng.uniform(), bounds.q_hi * rng.uniform());
        let t = 1.0 - rng.uniform();
        let gap = chord_gap(src, ch, a, b, t)?;
        report.chord_checks += 1;
        if gap < -CHORD_SLACK {
            report.chord_violations.push(ChordViolation {
                a,
                b,
                t,
                excess: -gap,
            });
        }

        match d_dagger_hessian(src, ch, a.0, a.1)? {
            None => report.hessian_skipped += 1,
            Some((d_pp, d_pq, d_qq)) => {
                report.hessian_checks += 1;
                let det = d_pp * d_qq - d_pq * d_pq;
                // Sylvester via the Schur complement, immune to underflow of det.
                if !(d_pp > 0.0 && d_qq - d_pq * (d_pq / d_pp) > 0.0) {
                    report.hessian_violations.push(HessianViolation { at: a, d_pp, det });
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g1() -> SourceModel {
        SourceModel::Gaussian { variance: 1.0 }
    }
    fn bh() -> SourceModel {
        SourceModel::Bernoulli { p: 0.5 }
    }
    fn n1() -> ChannelModel {
        ChannelModel::Awgn { noise: 1.0 }
    }
    fn unit() -> ArrivalModel {
        ArrivalModel {
            delta: 1.0,
            lambda: 1.0,
        }
    }

    #[test]
    fn distortion_examples() {
        assert!((distortion(&g1(), &n1(), 1.0, 1.0).unwrap() - 0.5).abs() < 1e-14);
        assert_eq!(distortion(&g1(), &n1(), 0.0, 5.0).unwrap(), 1.0);
        assert_eq!(distortion(&bh(), &n1(), 3.0, 1.0).unwrap(), 0.0);
        assert!(distortion(&g1(), &n1(), 1.0, 0.0).is_err());
    }

    #[test]
    fn d_dagger_examples() {
        assert!((d_dagger(&g1(), &n1(), 1.0, 1.0).unwrap() - 0.5).abs() < 1e-14);
        assert!((d_dagger(&g1(), &n1(), 3.0, 2.0).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(d_dagger(&g1(), &n1(), 0.0, 1.0).unwrap(), 1.0);
        assert_eq!(d_dagger(&bh(), &n1(), 0.0, 1.0).unwrap(), 0.5);
    }

    #[test]
    fn lower_bound_examples() {
        let lb = |src: &SourceModel, l: f64| lower_bound(src, &n1(), &unit(), l).unwrap();
        assert!((lb(&g1(), 5.0) - 0.5017).abs() < 1e-4);
        assert!((lb(&g1(), f64::INFINITY) - 0.5).abs() < 1e-15);
        assert!((lb(&bh(), 1.0) - 0.1651).abs() < 1e-3);
        assert!(lower_bound(&g1(), &n1(), &unit(), 0.0).is_err());
    }

    #[test]
    fn lower_bound_decreases_to_infinite_capacity() {
        let vals: Vec<f64> = (1..=50)
            .map(|l| lower_bound(&g1(), &n1(), &unit(), l as f64).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] <= w[0]));
        let inf = lower_bound(&g1(), &n1(), &unit(), f64::INFINITY).unwrap();
        assert!(vals[49] >= inf && vals[49] - inf < 1e-12);
    }

    #[test]
    fn degenerate_chord_is_tight() {
        for src in [g1(), bh()] {
            let gap = chord_gap(&src, &n1(), (2.0, 0.7), (2.0, 0.7), 0.3).unwrap();
            assert!(gap.abs() < 1e-15);
        }
    }

    #[test]
    fn probe_is_clean_for_both_sources() {
        for src in [g1(), bh()] {
            let r = convexity_probe(&src, &n1(), 1000, 11).unwrap();
            assert_eq!(r.chord_checks, 1000);
            assert!(r.is_clean(), "{src:?}: {:?}", r.hessian_violations.first());
            assert!(r.hessian_checks > 100);
        }
    }

    #[test]
    fn hessian_skipped_in_zero_distortion_region() {
        // R_c(8)/0.5 > 1 = H(1/2): the binary source is reproduced exactly.
        assert!(d_dagger_hessian(&bh(), &n1(), 8.0, 0.5).unwrap().is_none());
        assert!(d_dagger_hessian(&g1(), &n1(), 8.0, 0.5).unwrap().is_some());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn gaussian_paths_agree(p in 0.0f64..20.0, kappa in 0.01f64..10.0) {
            let a = distortion(&g1(), &n1(), p, kappa).unwrap();
            let b = gaussian_distortion(1.0, 1.0, p, kappa);
            prop_assert!(((a - b) / b).abs() < 1e-10, "{} vs {}", a, b);
        }
    }

    proptest! {
        #[test]
        fn distortion_monotone_in_power_and_mismatch(
            bern in any::<bool>(),
            p1 in 0.0f64..10.0, dp in 0.0f64..5.0,
            k1 in 0.05f64..5.0, dk in 0.0f64..5.0,
        ) {
            let src = if bern { bh() } else { g1() };
            let d = |p, k| distortion(&src, &n1(), p, k).unwrap();
            prop_assert!(d(p1 + dp, k1) <= d(p1, k1));
            if p1 > 0.0 {
                prop_assert!(d(p1, k1 + dk) <= d(p1, k1));
            }
        }

        #[test]
        fn chord_inequality(
            bern in any::<bool>(),
            a in (0.0f64..10.0, 0.001f64..5.0),
            b in (0.0f64..10.0, 0.001f64..5.0),
            t in 0.0f64..=1.0,
        ) {
            let src = if bern { bh() } else { g1() };
            prop_assert!(chord_gap(&src, &n1(), a, b, t).unwrap() >= -CHORD_SLACK);
        }
    }
}
