//! Fuzzy aggregation calculus.
//!
//! Goals are combined per step with an S-norm and across steps with a
//! generalized (power) mean; constraints with a parameterized Yager T-norm;
//! the two are joined by a standard T-norm. All operators map `[0, 1]`
//! inputs into `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SNorm {
    #[default]
    Max,
    ProbabilisticSum,
}

impl SNorm {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            SNorm::Max => a.max(b),
            SNorm::ProbabilisticSum => a + b - a * b,
        }
    }

    /// Folds a tuple of degrees; the empty tuple yields the identity 0.
    pub fn fold(self, degrees: &[f64]) -> f64 {
        degrees.iter().fold(0.0, |acc, &d| self.apply(acc, d))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TNorm {
    #[default]
    Product,
    Min,
}

impl TNorm {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            TNorm::Product => a * b,
            TNorm::Min => a.min(b),
        }
    }
}

/// Exponents and operators used by every aggregation stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationParams {
    pub w_goal: f64,
    pub w_con: f64,
    pub w_agg: f64,
    pub w_cluster: f64,
    pub w_goal_parent: f64,
    pub s_norm: SNorm,
    pub t_norm: TNorm,
}

impl Default for AggregationParams {
    fn default() -> Self {
        AggregationParams {
            w_goal: 20.0,
            w_con: 5.0,
            w_agg: 1.0,
            w_cluster: 5.0,
            w_goal_parent: 1.0,
            s_norm: SNorm::Max,
            t_norm: TNorm::Product,
        }
    }
}

impl AggregationParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("w_goal", self.w_goal),
            ("w_agg", self.w_agg),
            ("w_cluster", self.w_cluster),
            ("w_goal_parent", self.w_goal_parent),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.w_con.is_finite() && self.w_con >= 1.0) {
            return Err(Error::Config(format!("w_con must be >= 1, got {}", self.w_con)));
        }
        Ok(())
    }
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        iter.into_iter().for_each(|v| s.add(v));
        s
    }
}

/// S-norms each step's goal tuple, then takes the power mean with exponent
/// `w_goal` over steps.
pub fn aggregate_goals<I, T>(per_step: I, params: &AggregationParams) -> Result<f64>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[f64]>,
{
    let w = params.w_goal;
    let mut sum = CompensatedSum::new();
    let mut n = 0usize;
    for step in per_step {
        let v = params.s_norm.fold(step.as_ref());
        sum.add(v.powf(w));
        n += 1;
    }
    if n == 0 {
        return Err(Error::Contract("aggregate_goals needs at least one step".into()));
    }
    Ok(clamp_unit((sum.total() / n as f64).powf(1.0 / w)))
}

/// Yager T-norm over every (step, constraint) degree:
/// `max{0, 1 - (sum(1 - mu^w_con))^(1/w_con)}`.
pub fn aggregate_constraints<I, T>(per_step: I, params: &AggregationParams) -> f64
where
    I: IntoIterator<Item = T>,
    T: AsRef<[f64]>,
{
    let w = params.w_con;
    let mut sum = CompensatedSum::new();
    for step in per_step {
        for &mu in step.as_ref() {
            sum.add(1.0 - mu.powf(w));
        }
    }
    yager_from_violation(sum.total(), w)
}

/// Final step of the Yager T-norm, given the accumulated violation mass.
#[inline]
pub fn yager_from_violation(violation: f64, w_con: f64) -> f64 {
    (1.0 - violation.max(0.0).powf(1.0 / w_con)).max(0.0)
}

/// `t_norm(goal, constraint^w_agg)`.
pub fn aggregate_overall(goal: f64, constraint: f64, params: &AggregationParams) -> f64 {
    clamp_unit(params.t_norm.apply(goal, constraint.powf(params.w_agg)))
}

/// Observed-cell variant of the goal aggregation: each cell's S-normed goal
/// degree is raised to `w_goal + 1/w` where `w` is its tuning weight, summed,
/// divided by the largest achievable observed-set size and brought back with
/// the `1/w_goal` root. Cells with zero weight contribute nothing.
pub fn aggregate_goals_weighted<I, T>(cells: I, max_observable_count: f64, params: &AggregationParams) -> f64
where
    I: IntoIterator<Item = (T, f64)>,
    T: AsRef<[f64]>,
{
    let mut sum = CompensatedSum::new();
    for (goals, weight) in cells {
        sum.add(weighted_goal_term(
            params.s_norm.fold(goals.as_ref()),
            weight,
            params.w_goal,
        ));
    }
    goal_degree_from_sum(sum.total(), max_observable_count, params.w_goal)
}

/// One summand of the weighted goal aggregation.
#[inline]
pub fn weighted_goal_term(degree: f64, weight: f64, w_goal: f64) -> f64 {
    if weight <= 0.0 || degree <= 0.0 {
        0.0
    } else {
        degree.powf(w_goal + 1.0 / weight)
    }
}

#[inline]
pub fn goal_degree_from_sum(sum: f64, max_observable_count: f64, w_goal: f64) -> f64 {
    if sum <= 0.0 || max_observable_count <= 0.0 {
        return 0.0;
    }
    clamp_unit((sum / max_observable_count).powf(1.0 / w_goal))
}

/// Per-cell aggregated grade: `min(max(goals), constraints...)`.
pub fn cell_aggregated_score(goal_degrees: &[f64], constraint_degrees: &[f64]) -> f64 {
    let best_goal = goal_degrees.iter().copied().fold(0.0, f64::max);
    constraint_degrees.iter().copied().fold(best_goal, f64::min)
}

#[inline]
pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn goals_of_identical_steps_return_that_value() {
        let p = AggregationParams::default();
        for w in [0.5, 1.0, 2.0, 20.0] {
            let p = AggregationParams { w_goal: w, ..p.clone() };
            let v = aggregate_goals([[0.3, 0.7], [0.7, 0.1], [0.2, 0.7]], &p).unwrap();
            assert!(close(v, 0.7, 1e-12), "w={w}: {v}");
        }
    }

    #[test]
    fn goals_power_mean_value() {
        let p = AggregationParams {
            w_goal: 2.0,
            ..Default::default()
        };
        let v = aggregate_goals([[0.5], [1.0]], &p).unwrap();
        assert!(close(v, 0.625f64.sqrt(), 1e-12));
    }

    #[test]
    fn large_goal_exponent_approaches_max() {
        let lo = AggregationParams {
            w_goal: 1.0,
            ..Default::default()
        };
        let hi = AggregationParams {
            w_goal: 20.0,
            ..Default::default()
        };
        let steps = [[0.1], [0.2], [0.9]];
        let a = aggregate_goals(steps, &lo).unwrap();
        let b = aggregate_goals(steps, &hi).unwrap();
        assert!(b > a && b > 0.85 && b <= 0.9);
    }

    #[test]
    fn empty_goals_is_a_contract_violation() {
        let p = AggregationParams::default();
        let empty: [[f64; 1]; 0] = [];
        assert!(matches!(aggregate_goals(empty, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn constraint_edge_cases() {
        let p = AggregationParams::default();
        assert_eq!(aggregate_constraints([[1.0, 1.0], [1.0, 1.0]], &p), 1.0);
        assert_eq!(aggregate_constraints([[1.0, 0.0]], &p), 0.0);
        let expected = 1.0 - (1.0 - 0.9f64.powi(5)).powf(0.2);
        assert!(close(aggregate_constraints([[1.0, 0.9]], &p), expected, 1e-15));
    }

    #[test]
    fn overall_product_and_identity() {
        let p = AggregationParams::default();
        assert!(close(aggregate_overall(0.8, 0.5, &p), 0.4, 1e-15));
        for w_agg in [0.3, 1.0, 4.0] {
            let p = AggregationParams { w_agg, ..p.clone() };
            assert_eq!(aggregate_overall(0.37, 1.0, &p), 0.37);
        }
        let min = AggregationParams {
            t_norm: TNorm::Min,
            ..p
        };
        assert_eq!(aggregate_overall(0.8, 0.5, &min), 0.5);
    }

    #[test]
    fn weighted_goal_cases() {
        let p = AggregationParams {
            w_goal: 1.0,
            ..Default::default()
        };
        assert_eq!(aggregate_goals_weighted([([1.0], 1.0)], 1.0, &p), 1.0);
        let p = AggregationParams {
            w_goal: 20.0,
            ..Default::default()
        };
        let v = aggregate_goals_weighted([([0.8], 0.5)], 1.0, &p);
        assert!(close(v, 0.8f64.powf(22.0 / 20.0), 1e-12));
        // zero weight contributes nothing
        assert_eq!(aggregate_goals_weighted([([0.9], 0.0)], 1.0, &p), 0.0);
    }

    #[test]
    fn cell_score_cases() {
        assert_eq!(cell_aggregated_score(&[0.2, 0.9], &[1.0, 1.0]), 0.9);
        assert_eq!(cell_aggregated_score(&[0.2, 0.9], &[1.0, 0.0]), 0.0);
        assert_eq!(cell_aggregated_score(&[0.2, 0.9], &[]), 0.9);
    }

    #[test]
    fn probabilistic_sum_norm() {
        assert!(close(SNorm::ProbabilisticSum.fold(&[0.5, 0.5]), 0.75, 1e-15));
        assert_eq!(SNorm::Max.fold(&[]), 0.0);
    }

    fn unit() -> impl Strategy<Value = f64> {
        0.0f64..=1.0
    }

    proptest! {
        #[test]
        fn yager_below_min(degrees in prop::collection::vec(unit(), 1..12), w in 1.0f64..12.0) {
            let p = AggregationParams { w_con: w, ..Default::default() };
            let v = aggregate_constraints([degrees.as_slice()], &p);
            let min = degrees.iter().copied().fold(1.0, f64::min);
            prop_assert!(v <= min + 1e-12);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn lukasiewicz_at_unit_exponent(degrees in prop::collection::vec(unit(), 1..12)) {
            let p = AggregationParams { w_con: 1.0, ..Default::default() };
            let v = aggregate_constraints([degrees.as_slice()], &p);
            let expected = (1.0 - degrees.iter().map(|m| 1.0 - m).sum::<f64>()).max(0.0);
            prop_assert!((v - expected).abs() < 1e-12);
        }

        #[test]
        fn goals_between_min_and_max(steps in prop::collection::vec(prop::collection::vec(unit(), 1..4), 1..10), w in 0.2f64..25.0) {
            let p = AggregationParams { w_goal: w, ..Default::default() };
            let v = aggregate_goals(&steps, &p).unwrap();
            let normed: Vec<f64> = steps.iter().map(|s| p.s_norm.fold(s)).collect();
            let lo = normed.iter().copied().fold(1.0, f64::min);
            let hi = normed.iter().copied().fold(0.0, f64::max);
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }

        #[test]
        fn weighted_goal_monotone_in_added_cells(
            cells in prop::collection::vec((unit(), 0.01f64..=1.0), 0..20),
            extra in (0.01f64..=1.0, 0.01f64..=1.0),
        ) {
            let p = AggregationParams::default();
            let max_count = 30.0;
            let base = aggregate_goals_weighted(cells.iter().map(|&(g, w)| ([g], w)), max_count, &p);
            let more = aggregate_goals_weighted(
                cells.iter().map(|&(g, w)| ([g], w)).chain(std::iter::once(([extra.0], extra.1))),
                max_count,
                &p,
            );
            prop_assert!(more >= base);
        }
    }
}
