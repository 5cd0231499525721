//! Coarse-to-fine grid search for the parameter that puts a method's average
//! Risk at a target value.
//!
//! Each round probes `grid_points` parameter values across the current
//! interval. If some probe lands within `tolerance` of the target, the closest
//! one wins (ties go to the smaller parameter). Otherwise the first pair of
//! neighbouring probes whose risks straddle the target becomes the next
//! interval. Probes that overflow the exported ranks are unachievable and
//! skipped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::DistributionRecord;
use crate::metrics::{
    evaluate_prepared, pair_records, prepare_nodes, AggregateReport, ExcludedNode, MetricsError,
    PreparedNode,
};
use crate::samplers::{Method, SamplerConfig, SamplerError};
use crate::scalar::Scalar;
use crate::trie::EvaluationNode;

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("invalid calibration spec: {0}")]
    InvalidSpec(String),
    #[error("every probed parameter overflows the exported ranks")]
    Unachievable,
    #[error("no evaluable nodes left after exclusions")]
    NoNodes,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// How probe values are laid out over an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Integer,
    Linear,
    Log,
}

impl Spacing {
    pub fn for_method(method: Method) -> Self {
        match method {
            Method::TopK => Spacing::Integer,
            Method::TopP | Method::Mirostat => Spacing::Linear,
            Method::Eta | Method::Adaptive => Spacing::Log,
        }
    }
}

/// Search interval used when none is given.
pub fn default_range<T: Scalar>(method: Method) -> (T, T) {
    let (lo, hi) = match method {
        Method::TopK => (1.0, 2000.0),
        Method::TopP => (0.01, 1.0),
        Method::Eta => (1e-6, 1.0),
        Method::Adaptive => (1e-7, 1e-2),
        Method::Mirostat => (0.5, 10.0),
    };
    (T::lit(lo), T::lit(hi))
}

/// Probe values over `[lo, hi]`, ascending and without duplicates; both ends
/// are included.
pub fn grid<T: Scalar>(spacing: Spacing, lo: T, hi: T, points: usize) -> Vec<T> {
    let steps = T::from_count(points.max(2) - 1);
    let at = |i: usize| T::from_count(i) / steps;
    let mut out: Vec<T> = match spacing {
        Spacing::Integer => {
            let (lo, hi) = (lo.ceil(), hi.floor());
            if hi - lo + T::one() <= T::from_count(points) {
                let n = (hi - lo).to_usize().unwrap_or(0);
                (0..=n).map(|i| lo + T::from_count(i)).collect()
            } else {
                (0..points)
                    .map(|i| (lo + (hi - lo) * at(i)).round())
                    .collect()
            }
        }
        Spacing::Linear => (0..points).map(|i| lo + (hi - lo) * at(i)).collect(),
        Spacing::Log => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..points).map(|i| (a + (b - a) * at(i)).exp()).collect()
        }
    };
    if spacing != Spacing::Integer {
        let n = out.len();
        out[0] = lo;
        out[n - 1] = hi;
    }
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CalibrationSpec<T> {
    pub method: Method,
    pub target_risk: T,
    pub tolerance: T,
    pub grid_points: usize,
    pub max_refinements: usize,
    pub range: (T, T),
}

impl<T: Scalar> CalibrationSpec<T> {
    pub const DEFAULT_TOLERANCE: f64 = 0.1;
    pub const DEFAULT_GRID_POINTS: usize = 2000;
    pub const DEFAULT_MAX_REFINEMENTS: usize = 4;

    pub fn new(method: Method, target_risk: T) -> Self {
        Self {
            method,
            target_risk,
            tolerance: T::lit(Self::DEFAULT_TOLERANCE),
            grid_points: Self::DEFAULT_GRID_POINTS,
            max_refinements: Self::DEFAULT_MAX_REFINEMENTS,
            range: default_range(method),
        }
    }

    pub fn validate(&self) -> Result<(), CalibrateError> {
        let (lo, hi) = self.range;
        let bad = |msg: String| Err(CalibrateError::InvalidSpec(msg));
        if !(lo < hi) {
            return bad(format!(
                "range lower bound {lo} must be below upper bound {hi}"
            ));
        }
        if self.grid_points < 2 {
            return bad(format!(
                "grid needs at least 2 points, got {}",
                self.grid_points
            ));
        }
        if !(self.target_risk >= T::zero()) || !self.target_risk.is_finite() {
            return bad(format!(
                "target risk {} must be finite and >= 0",
                self.target_risk
            ));
        }
        if !(self.tolerance >= T::zero()) || !self.tolerance.is_finite() {
            return bad(format!(
                "tolerance {} must be finite and >= 0",
                self.tolerance
            ));
        }
        for end in [lo, hi] {
            if let Err(err) = self.method.check_theta(end) {
                return bad(err.to_string());
            }
        }
        Ok(())
    }
}

/// One evaluated parameter value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Probe<T> {
    pub theta: T,
    pub average_risk: T,
    pub average_recall: T,
    pub rse: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CalibrationResult<T> {
    pub method: Method,
    pub target_risk: T,
    pub tolerance: T,
    pub theta: T,
    pub achieved_risk: T,
    pub achieved_ar: T,
    pub achieved_rse: T,
    /// Refinement rounds after the initial grid.
    pub refinement_depth: usize,
    pub feasible: bool,
    /// Final straddling pair when no probe was feasible.
    pub bracket: Option<[Probe<T>; 2]>,
    /// Intervals searched, one per round.
    pub intervals: Vec<(T, T)>,
    pub probes_evaluated: usize,
    pub unachievable_probes: usize,
    /// Report at the returned parameter.
    pub report: AggregateReport<T>,
}

fn probe<T: Scalar>(
    nodes: &[PreparedNode<'_, T>],
    method: Method,
    theta: T,
) -> Result<Option<Probe<T>>, MetricsError> {
    let cfg = SamplerConfig { method, theta };
    let mut recalls = T::zero();
    let mut risks = Vec::with_capacity(nodes.len());
    for node in nodes {
        let size = match node.allowed_size(&cfg) {
            Ok((size, _)) => size,
            Err(MetricsError::Sampler {
                source: SamplerError::RankOverflow { .. },
                ..
            }) => return Ok(None),
            Err(err) => return Err(err),
        };
        let (recall, risk) = crate::metrics::recall_risk::<T>(size.get(), node.k_star);
        recalls = recalls + recall;
        risks.push(risk);
    }
    let n = T::from_count(nodes.len());
    let average_risk = risks.iter().copied().sum::<T>() / n;
    let spread = risks.iter().map(|&r| (r - average_risk).powi(2)).sum::<T>();
    Ok(Some(Probe {
        theta,
        average_risk,
        average_recall: recalls / n,
        rse: spread.sqrt() / n,
    }))
}

/// Closest probe to `target`, ties to the smaller parameter.
fn closest<'a, T: Scalar>(
    probes: impl Iterator<Item = &'a Probe<T>>,
    target: T,
) -> Option<Probe<T>> {
    probes.fold(None, |best: Option<Probe<T>>, p| {
        let d = (p.average_risk - target).abs();
        match best {
            Some(b) => {
                let bd = (b.average_risk - target).abs();
                if d < bd || (d == bd && p.theta < b.theta) {
                    Some(*p)
                } else {
                    Some(b)
                }
            }
            None => Some(*p),
        }
    })
}

pub fn calibrate<T: Scalar>(
    spec: &CalibrationSpec<T>,
    nodes: &[EvaluationNode],
    records: &[DistributionRecord<T>],
) -> Result<CalibrationResult<T>, CalibrateError> {
    spec.validate()?;
    let pairs = pair_records(nodes, records)?;
    let (prepared, excluded) = prepare_nodes(&pairs)?;
    calibrate_prepared(spec, &prepared, excluded)
}

pub fn calibrate_prepared<T: Scalar>(
    spec: &CalibrationSpec<T>,
    nodes: &[PreparedNode<'_, T>],
    excluded: Vec<ExcludedNode>,
) -> Result<CalibrationResult<T>, CalibrateError> {
    spec.validate()?;
    if nodes.is_empty() {
        return Err(CalibrateError::NoNodes);
    }
    let spacing = Spacing::for_method(spec.method);
    let target = spec.target_risk;
    let (mut lo, mut hi) = spec.range;
    let mut intervals = Vec::new();
    let mut best: Option<Probe<T>> = None;
    let mut bracket = None;
    let mut feasible = None;
    let mut probes_evaluated = 0;
    let mut unachievable = 0;
    let mut depth = 0;

    for round in 0..=spec.max_refinements {
        depth = round;
        intervals.push((lo, hi));
        let thetas = grid(spacing, lo, hi, spec.grid_points);
        let results: Vec<Option<Probe<T>>> = thetas
            .par_iter()
            .map(|&theta| probe(nodes, spec.method, theta))
            .collect::<Result<_, _>>()?;
        probes_evaluated += results.len();
        unachievable += results.iter().filter(|p| p.is_none()).count();
        let achieved: Vec<Probe<T>> = results.into_iter().flatten().collect();
        log::debug!(
            "round {round}: [{lo}, {hi}] {} probes, {} achievable",
            thetas.len(),
            achieved.len()
        );
        best = closest(best.iter().chain(achieved.iter()), target);

        let within = achieved
            .iter()
            .filter(|p| (p.average_risk - target).abs() <= spec.tolerance);
        if let Some(hit) = closest(within, target) {
            feasible = Some(hit);
            break;
        }
        let straddle = achieved.windows(2).find(|w| {
            let (a, b) = (w[0].average_risk - target, w[1].average_risk - target);
            (a < T::zero()) != (b < T::zero())
        });
        let Some(pair) = straddle else {
            bracket = None;
            break;
        };
        bracket = Some([pair[0], pair[1]]);
        let (next_lo, next_hi) = (pair[0].theta, pair[1].theta);
        if spacing == Spacing::Integer && next_hi - next_lo <= T::one() {
            break;
        }
        lo = next_lo;
        hi = next_hi;
    }

    let (chosen, is_feasible) = match feasible {
        Some(p) => (p, true),
        None => (best.ok_or(CalibrateError::Unachievable)?, false),
    };
    let cfg = SamplerConfig {
        method: spec.method,
        theta: chosen.theta,
    };
    let report = evaluate_prepared(nodes, &cfg, excluded)?;
    Ok(CalibrationResult {
        method: spec.method,
        target_risk: target,
        tolerance: spec.tolerance,
        theta: chosen.theta,
        achieved_risk: chosen.average_risk,
        achieved_ar: chosen.average_recall,
        achieved_rse: chosen.rse,
        refinement_depth: depth,
        feasible: is_feasible,
        bracket: if is_feasible { None } else { bracket },
        intervals,
        probes_evaluated,
        unachievable_probes: unachievable,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[allow(clippy::approx_constant)]
    fn default_ranges_cover_reported_parameters() {
        let contains = |m: Method, v: f64| {
            let (lo, hi) = default_range::<f64>(m);
            lo <= v && v <= hi
        };
        for v in [0.5705, 0.746, 0.8555, 0.54, 0.9] {
            assert!(contains(Method::TopP, v));
        }
        for v in [9.5e-4, 1.1e-4, 2.5e-5, 1.1e-3, 3.1e-5] {
            assert!(contains(Method::Adaptive, v));
        }
        for v in [4.425, 5.9475, 6.76, 4.253, 6.628] {
            assert!(contains(Method::Mirostat, v));
        }
        for v in [0.318, 0.011, 0.001, 0.512, 0.002] {
            assert!(contains(Method::Eta, v));
        }
        for v in [15.0, 64.0, 184.0, 14.0, 177.0] {
            assert!(contains(Method::TopK, v));
        }
        assert_eq!(default_range::<f64>(Method::TopK).0, 1.0);
    }

    #[test]
    fn grids() {
        assert_eq!(
            grid(Spacing::Integer, 1.0, 5.0, 2000),
            vec![1.0, 2.0, 3.0, 4.0, 5.0]
        );
        let g = grid(Spacing::Integer, 1.0, 2000.0, 2000);
        assert_eq!(g.len(), 2000);
        let g = grid(Spacing::Integer, 1.0, 10_000.0, 100);
        assert_eq!((g[0], *g.last().unwrap(), g.len()), (1.0, 10_000.0, 100));
        let g = grid(Spacing::Linear, 0.0_f64, 1.0, 5);
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = grid(Spacing::Log, 1e-6_f64, 1.0, 7);
        assert_eq!(g.len(), 7);
        assert_eq!((g[0], g[6]), (1e-6, 1.0));
        assert!((g[3] - 1e-3).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn spec_validation() {
        let mut spec = CalibrationSpec::<f64>::new(Method::TopP, 1.0);
        spec.validate().unwrap();
        spec.range = (0.5, 0.5);
        assert!(spec.validate().is_err());
        spec.range = (0.0, 1.0);
        assert!(
            spec.validate().is_err(),
            "p = 0 is outside the top_p domain"
        );
        let mut spec = CalibrationSpec::<f64>::new(Method::TopK, 1.0);
        spec.grid_points = 1;
        assert!(spec.validate().is_err());
    }
}
