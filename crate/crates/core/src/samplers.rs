//! Truncation samplers as maps from a ranked distribution and a parameter to
//! the size of the allowed set.
//!
//! Every method here keeps a rank prefix of the distribution, so the size
//! alone identifies the allowed set. Sizes are floored at 1. A cutoff that
//! falls past the exported tokens of a record with unlisted tail mass is a
//! [`SamplerError::RankOverflow`] rather than a silent clamp.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::DistributionRecord;
use crate::scalar::Scalar;

/// Numerical slack when comparing cumulative mass against `p`.
pub const TOP_P_SLACK: f64 = 1e-12;
/// Adjacent rank pairs used for the Zipf exponent estimate.
pub const ZIPF_PAIRS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    TopK,
    TopP,
    Eta,
    Mirostat,
    Adaptive,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::TopK,
        Method::TopP,
        Method::Eta,
        Method::Mirostat,
        Method::Adaptive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::TopK => "top_k",
            Method::TopP => "top_p",
            Method::Eta => "eta",
            Method::Mirostat => "mirostat",
            Method::Adaptive => "adaptive",
        }
    }

    /// Whether a larger parameter admits more tokens.
    pub fn grows_with_theta(self) -> bool {
        matches!(self, Method::TopK | Method::TopP | Method::Mirostat)
    }

    pub fn check_theta<T: Scalar>(self, theta: T) -> Result<(), SamplerError> {
        let bad = |reason: &'static str| {
            Err(SamplerError::InvalidParameter {
                method: self,
                theta: theta.to_f64().unwrap_or(f64::NAN),
                reason,
            })
        };
        if !theta.is_finite() {
            return bad("must be finite");
        }
        match self {
            Method::TopK if theta < T::one() || theta.fract() != T::zero() => {
                bad("k must be an integer >= 1")
            }
            Method::TopP if theta <= T::zero() || theta > T::one() => bad("p must be in (0, 1]"),
            Method::Eta | Method::Mirostat | Method::Adaptive if theta <= T::zero() => {
                bad("must be > 0")
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = SamplerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| SamplerError::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error(
        "unknown sampling method {0:?} (expected one of top_k, top_p, eta, mirostat, adaptive)"
    )]
    UnknownMethod(String),
    #[error("{method} parameter {theta}: {reason}")]
    InvalidParameter {
        method: Method,
        theta: f64,
        reason: &'static str,
    },
    #[error("{method} cutoff {cutoff} lies beyond the {listed} exported tokens; re-export with a larger top-N")]
    RankOverflow {
        method: Method,
        /// Lower bound on the required rank.
        cutoff: usize,
        listed: usize,
    },
    #[error("estimated Zipf exponent {exponent} <= 1")]
    DegenerateZipf { exponent: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SamplerConfig<T> {
    pub method: Method,
    pub theta: T,
}

impl<T: Scalar> SamplerConfig<T> {
    pub fn new(method: Method, theta: T) -> Result<Self, SamplerError> {
        method.check_theta(theta)?;
        Ok(Self { method, theta })
    }
}

/// Number of tokens kept by a truncation; always at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AllowedSetSize(usize);

impl AllowedSetSize {
    pub fn new(size: usize) -> Self {
        Self(size.max(1))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

fn clamp_rank<T: Scalar>(
    record: &DistributionRecord<T>,
    method: Method,
    cutoff: usize,
) -> Result<AllowedSetSize, SamplerError> {
    let listed = record.len();
    if cutoff <= listed {
        return Ok(AllowedSetSize::new(cutoff));
    }
    if listed == record.vocab_size {
        return Ok(AllowedSetSize::new(listed));
    }
    Err(SamplerError::RankOverflow {
        method,
        cutoff,
        listed,
    })
}

pub fn top_k_size<T: Scalar>(
    record: &DistributionRecord<T>,
    k: usize,
) -> Result<AllowedSetSize, SamplerError> {
    if k == 0 {
        return Err(SamplerError::InvalidParameter {
            method: Method::TopK,
            theta: 0.0,
            reason: "k must be an integer >= 1",
        });
    }
    clamp_rank(record, Method::TopK, k)
}

/// Smallest rank prefix with cumulative mass >= `p`.
pub fn top_p_size<T: Scalar>(
    record: &DistributionRecord<T>,
    p: T,
) -> Result<AllowedSetSize, SamplerError> {
    Method::TopP.check_theta(p)?;
    let target = p - T::lit(TOP_P_SLACK);
    let mut cumulative = T::zero();
    for (idx, prob) in record.probs().enumerate() {
        cumulative = cumulative + prob;
        if cumulative >= target {
            return Ok(AllowedSetSize::new(idx + 1));
        }
    }
    top_p_exhausted(record)
}

fn top_p_exhausted<T: Scalar>(
    record: &DistributionRecord<T>,
) -> Result<AllowedSetSize, SamplerError> {
    if record.has_tail() {
        Err(SamplerError::RankOverflow {
            method: Method::TopP,
            cutoff: record.len() + 1,
            listed: record.len(),
        })
    } else {
        Ok(AllowedSetSize::new(record.len()))
    }
}

/// Entropy-dependent probability floor `min(eps, sqrt(eps) * exp(-H))`.
pub fn eta_threshold<T: Scalar>(epsilon: T, entropy: T) -> T {
    epsilon.min(epsilon.sqrt() * (-entropy).exp())
}

/// Tokens with probability strictly above the eta threshold.
pub fn eta_size<T: Scalar>(
    record: &DistributionRecord<T>,
    epsilon: T,
) -> Result<AllowedSetSize, SamplerError> {
    Method::Eta.check_theta(epsilon)?;
    let eta = eta_threshold(epsilon, record.entropy_nats);
    let kept = record.probs().take_while(|&p| p > eta).count();
    eta_finish(record, kept)
}

fn eta_finish<T: Scalar>(
    record: &DistributionRecord<T>,
    kept: usize,
) -> Result<AllowedSetSize, SamplerError> {
    if kept == record.len() && record.has_tail() {
        return Err(SamplerError::RankOverflow {
            method: Method::Eta,
            cutoff: kept + 1,
            listed: kept,
        });
    }
    Ok(AllowedSetSize::new(kept))
}

/// Least-squares Zipf exponent over the first `min(100, N - 1)` adjacent
/// rank pairs: `sum(t_i b_i) / sum(t_i^2)` with `t_i = ln((i+1)/i)` and
/// `b_i = ln(p_i / p_{i+1})`. `None` with fewer than two tokens.
pub fn zipf_exponent<T: Scalar>(probs: &[T]) -> Option<T> {
    let pairs = ZIPF_PAIRS.min(probs.len().saturating_sub(1));
    let mut num = T::zero();
    let mut den = T::zero();
    let mut used = 0;
    for i in 1..=pairs {
        let (p, q) = (probs[i - 1], probs[i]);
        if q <= T::zero() {
            continue;
        }
        let t = (T::from_count(i + 1) / T::from_count(i)).ln();
        let b = (p / q).ln();
        num = num + t * b;
        den = den + t * t;
        used += 1;
    }
    (used > 0).then(|| num / den)
}

/// Unrounded mirostat cutoff `(eps * 2^mu / (1 - V^-eps))^(1/s)` with
/// `eps = s - 1`.
pub fn mirostat_cutoff<T: Scalar>(exponent: T, vocab_size: usize, mu: T) -> T {
    let eps = exponent - T::one();
    let v = T::from_count(vocab_size);
    (eps * T::lit(2.0).powf(mu) / (T::one() - v.powf(-eps))).powf(exponent.recip())
}

fn mirostat_from_exponent<T: Scalar>(
    record: &DistributionRecord<T>,
    exponent: Option<T>,
    tau: T,
) -> Result<AllowedSetSize, SamplerError> {
    let Some(s) = exponent else {
        return Ok(AllowedSetSize::new(1));
    };
    if !(s > T::one()) {
        return Err(SamplerError::DegenerateZipf {
            exponent: s.to_f64().unwrap_or(f64::NAN),
        });
    }
    let mu = MirostatState::new(tau).mu;
    let k = mirostat_cutoff(s, record.vocab_size, mu).round();
    let k = if k.is_finite() {
        k.to_usize().unwrap_or(usize::MAX)
    } else {
        usize::MAX
    };
    clamp_rank(record, Method::Mirostat, k.max(1))
}

/// Single-step mirostat with `mu = 2 tau` (tau in bits).
pub fn mirostat_size<T: Scalar>(
    record: &DistributionRecord<T>,
    tau: T,
) -> Result<AllowedSetSize, SamplerError> {
    Method::Mirostat.check_theta(tau)?;
    let probs: Vec<T> = record.probs().collect();
    mirostat_from_exponent(record, zipf_exponent(&probs), tau)
}

/// Mirostat's running maximum surprise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MirostatState<T> {
    pub mu: T,
}

impl<T: Scalar> MirostatState<T> {
    pub fn new(tau: T) -> Self {
        Self { mu: tau + tau }
    }

    /// Feedback step after observing a token with `surprise` bits.
    pub fn update(&mut self, surprise: T, tau: T, learning_rate: T) {
        self.mu = self.mu - learning_rate * (surprise - tau);
    }
}

/// Entropy of every top-j renormalized prefix, j = 1..N, using
/// `H_j = ln S_j - U_j / S_j` with `S_j = sum p_i` and `U_j = sum p_i ln p_i`.
pub fn prefix_entropies<T: Scalar>(probs: &[T]) -> Vec<T> {
    let mut s = T::zero();
    let mut u = T::zero();
    probs
        .iter()
        .map(|&p| {
            s = s + p;
            u = u + p * p.ln();
            s.ln() - u / s
        })
        .collect()
}

/// Increments of the min-max scaled prefix entropies, or `None` when the
/// entropy curve is flat.
fn scaled_entropy_increments<T: Scalar>(probs: &[T]) -> Option<Vec<T>> {
    let h = prefix_entropies(probs);
    let lo = h.iter().copied().fold(T::infinity(), T::min);
    let hi = h.iter().copied().fold(T::neg_infinity(), T::max);
    let range = hi - lo;
    if !(range > T::zero()) {
        return None;
    }
    Some(h.windows(2).map(|w| (w[1] - w[0]) / range).collect())
}

/// Smallest j whose next scaled-entropy increment falls below `delta_conf`,
/// else N.
pub fn adaptive_size<T: Scalar>(
    record: &DistributionRecord<T>,
    delta_conf: T,
) -> Result<AllowedSetSize, SamplerError> {
    Method::Adaptive.check_theta(delta_conf)?;
    let probs: Vec<T> = record.probs().collect();
    let Some(increments) = scaled_entropy_increments(&probs) else {
        return Ok(AllowedSetSize::new(1));
    };
    let size = increments
        .iter()
        .position(|&d| d < delta_conf)
        .map_or(probs.len(), |j| j + 1);
    Ok(AllowedSetSize::new(size))
}

pub fn allowed_size<T: Scalar>(
    record: &DistributionRecord<T>,
    cfg: &SamplerConfig<T>,
) -> Result<AllowedSetSize, SamplerError> {
    cfg.method.check_theta(cfg.theta)?;
    match cfg.method {
        Method::TopK => top_k_size(record, cfg.theta.to_usize().unwrap_or(usize::MAX)),
        Method::TopP => top_p_size(record, cfg.theta),
        Method::Eta => eta_size(record, cfg.theta),
        Method::Mirostat => mirostat_size(record, cfg.theta),
        Method::Adaptive => adaptive_size(record, cfg.theta),
    }
}

/// Per-record quantities that do not depend on the parameter, so a sweep over
/// many parameter values costs a binary search per value.
#[derive(Debug, Clone)]
pub struct TruncationProfile<'r, T> {
    record: &'r DistributionRecord<T>,
    cumulative: Vec<T>,
    zipf: Option<T>,
    /// Running minimum of the scaled entropy increments; `None` if flat.
    increment_floor: Option<Vec<T>>,
}

impl<'r, T: Scalar> TruncationProfile<'r, T> {
    pub fn new(record: &'r DistributionRecord<T>) -> Self {
        let probs: Vec<T> = record.probs().collect();
        let cumulative = probs
            .iter()
            .scan(T::zero(), |acc, &p| {
                *acc = *acc + p;
                Some(*acc)
            })
            .collect();
        let increment_floor = scaled_entropy_increments(&probs).map(|inc| {
            inc.into_iter()
                .scan(T::infinity(), |floor, d| {
                    *floor = floor.min(d);
                    Some(*floor)
                })
                .collect()
        });
        Self {
            record,
            cumulative,
            zipf: zipf_exponent(&probs),
            increment_floor,
        }
    }

    pub fn record(&self) -> &'r DistributionRecord<T> {
        self.record
    }

    /// Same result as [`allowed_size`].
    pub fn allowed_size(&self, cfg: &SamplerConfig<T>) -> Result<AllowedSetSize, SamplerError> {
        cfg.method.check_theta(cfg.theta)?;
        let record = self.record;
        match cfg.method {
            Method::TopK => top_k_size(record, cfg.theta.to_usize().unwrap_or(usize::MAX)),
            Method::TopP => {
                let target = cfg.theta - T::lit(TOP_P_SLACK);
                let idx = self.cumulative.partition_point(|&c| c < target);
                if idx < record.len() {
                    Ok(AllowedSetSize::new(idx + 1))
                } else {
                    top_p_exhausted(record)
                }
            }
            Method::Eta => {
                let eta = eta_threshold(cfg.theta, record.entropy_nats);
                let kept = record.tokens.partition_point(|t| t.prob > eta);
                eta_finish(record, kept)
            }
            Method::Mirostat => mirostat_from_exponent(record, self.zipf, cfg.theta),
            Method::Adaptive => match &self.increment_floor {
                None => Ok(AllowedSetSize::new(1)),
                Some(floor) => {
                    let idx = floor.partition_point(|&m| !(m < cfg.theta));
                    Ok(AllowedSetSize::new(if idx == floor.len() {
                        record.len()
                    } else {
                        idx + 1
                    }))
                }
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::tests::record;

    fn size(r: Result<AllowedSetSize, SamplerError>) -> usize {
        r.unwrap().get()
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("Top-P".parse::<Method>().unwrap(), Method::TopP);
        assert!("typical".parse::<Method>().is_err());
    }

    #[test]
    fn parameter_domains() {
        assert!(SamplerConfig::new(Method::TopK, 2.5).is_err());
        assert!(SamplerConfig::new(Method::TopK, 0.0).is_err());
        assert!(SamplerConfig::new(Method::TopP, 0.0).is_err());
        assert!(SamplerConfig::new(Method::TopP, 1.0).is_ok());
        assert!(SamplerConfig::new(Method::Eta, -1.0).is_err());
        assert!(SamplerConfig::new(Method::Mirostat, f64::INFINITY).is_err());
        assert!(SamplerConfig::new(Method::Adaptive, 5e-4).is_ok());
    }

    #[test]
    fn top_k_examples() {
        let r = record(&[0.5, 0.3, 0.2], 0.0);
        assert_eq!(size(top_k_size(&r, 1)), 1);
        assert_eq!(size(top_k_size(&r, 5)), 3);
        let tailed = record(&[0.5, 0.3], 0.2);
        assert_eq!(size(top_k_size(&tailed, 2)), 2);
        assert!(matches!(
            top_k_size(&tailed, 3),
            Err(SamplerError::RankOverflow {
                cutoff: 3,
                listed: 2,
                ..
            })
        ));
    }

    #[test]
    fn top_p_examples() {
        let r = record(&[0.5, 0.3, 0.2], 0.0);
        assert_eq!(size(top_p_size(&r, 1.0)), 3);
        assert_eq!(size(top_p_size(&r, 0.8)), 2);
        assert_eq!(size(top_p_size(&r, 0.81)), 3);
        assert_eq!(size(top_p_size(&r, 0.01)), 1);
        let tailed = record(&[0.5, 0.3], 0.2);
        assert_eq!(size(top_p_size(&tailed, 0.8)), 2);
        assert!(matches!(
            top_p_size(&tailed, 0.9),
            Err(SamplerError::RankOverflow { .. })
        ));
        // Listed mass a hair under 1 with no tail still reaches p = 1.
        let short = record(&[0.5, 0.4999999], 0.0);
        assert_eq!(size(top_p_size(&short, 1.0)), 2);
    }

    #[test]
    fn eta_examples() {
        let uniform = record(&[0.25; 4], 0.0);
        assert!((eta_threshold(0.01, uniform.entropy_nats) - 0.01).abs() < 1e-15);
        assert_eq!(size(eta_size(&uniform, 0.01)), 4);
        assert_eq!(size(eta_size(&record(&[1.0], 0.0), 0.9)), 1);
        assert_eq!(size(eta_size(&record(&[1.0], 0.0), 1.0)), 1);
        let peaked = record(&[0.9, 0.06, 0.04], 0.0);
        let h = peaked.entropy_nats;
        assert!((h - 0.392_384_14).abs() < 1e-8);
        // sqrt(0.25) * exp(-H) = 0.3377 exceeds epsilon, so the floor is 0.25.
        assert!((0.5 * (-h).exp() - 0.337_722_3).abs() < 1e-7);
        assert_eq!(eta_threshold(0.25, h), 0.25);
        assert_eq!(size(eta_size(&peaked, 0.25)), 1);
        let tailed = record(&[0.5, 0.3], 0.2);
        assert!(matches!(
            eta_size(&tailed, 1e-6),
            Err(SamplerError::RankOverflow { .. })
        ));
    }

    #[test]
    fn zipf_exponent_recovers_power_law() {
        let probs: Vec<f64> = (1..=200).map(|i| (i as f64).powf(-1.3)).collect();
        let z: f64 = probs.iter().sum();
        let probs: Vec<f64> = probs.iter().map(|p| p / z).collect();
        assert!((zipf_exponent(&probs).unwrap() - 1.3).abs() < 1e-12);
        assert_eq!(zipf_exponent::<f64>(&[1.0]), None);
    }

    #[test]
    fn mirostat_small_tau_gives_one() {
        let probs: Vec<f64> = (1..=1000).map(|i| (i as f64).powf(-1.1)).collect();
        let z: f64 = probs.iter().sum();
        let r = record(&probs.iter().map(|p| p / z).collect::<Vec<_>>(), 0.0);
        assert_eq!(size(mirostat_size(&r, 0.01)), 1);
        assert!(size(mirostat_size(&r, 5.0)) > 1);
    }

    #[test]
    fn mirostat_degenerate_and_short_records() {
        assert_eq!(size(mirostat_size(&record(&[1.0], 0.0), 3.0)), 1);
        assert!(matches!(
            mirostat_size(&record(&[0.25; 4], 0.0), 3.0),
            Err(SamplerError::DegenerateZipf { .. })
        ));
    }

    #[test]
    fn mirostat_feedback_update() {
        let mut state = MirostatState::new(3.0);
        assert_eq!(state.mu, 6.0);
        state.update(5.0, 3.0, 0.1);
        assert!((state.mu - 5.8f64).abs() < 1e-12);
    }

    #[test]
    fn adaptive_examples() {
        assert_eq!(size(adaptive_size(&record(&[1.0], 0.0), 1e-3)), 1);
        let uniform = record(&[0.25; 4], 0.0);
        assert_eq!(size(adaptive_size(&uniform, 0.5)), 2);
        assert_eq!(size(adaptive_size(&uniform, 0.1)), 4);
        assert_eq!(size(adaptive_size(&uniform, 0.6)), 1);
    }

    #[test]
    fn prefix_entropies_of_uniform() {
        let h = prefix_entropies(&[0.25f64; 4]);
        for (j, hj) in h.iter().enumerate() {
            assert!((hj - ((j + 1) as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn profile_matches_direct_on_examples() {
        let recs = [
            record(&[0.5, 0.3, 0.2], 0.0),
            record(&[0.25; 4], 0.0),
            record(&[0.9, 0.06, 0.04], 0.0),
            record(&[0.5, 0.3], 0.2),
            record(&[1.0], 0.0),
        ];
        let configs = [
            (Method::TopK, 1.0),
            (Method::TopK, 3.0),
            (Method::TopP, 0.8),
            (Method::TopP, 0.95),
            (Method::Eta, 0.25),
            (Method::Eta, 1e-4),
            (Method::Mirostat, 2.0),
            (Method::Adaptive, 0.5),
            (Method::Adaptive, 1e-3),
        ];
        for r in &recs {
            let profile = TruncationProfile::new(r);
            for (m, theta) in configs {
                let cfg = SamplerConfig::new(m, theta).unwrap();
                assert_eq!(
                    profile.allowed_size(&cfg),
                    allowed_size(r, &cfg),
                    "{m} {theta}"
                );
            }
        }
    }

    #[test]
    fn f32_samplers() {
        let r: DistributionRecord<f32> = DistributionRecord {
            prefix_id: "x".into(),
            vocab_size: 3,
            entropy_nats: 1.0297,
            tail_mass: 0.0,
            tokens: [0.5f32, 0.3, 0.2]
                .iter()
                .enumerate()
                .map(|(i, &prob)| crate::dist::TokenEntry {
                    rank: i + 1,
                    surface: format!("t{i}"),
                    word_initial: true,
                    prob,
                })
                .collect(),
        };
        assert_eq!(size(top_p_size(&r, 0.8f32)), 2);
        assert_eq!(size(top_k_size(&r, 2)), 2);
        assert_eq!(size(adaptive_size(&r, 0.9f32)), 1);
        assert_eq!(size(eta_size(&r, 0.01f32)), 3);
    }
}
