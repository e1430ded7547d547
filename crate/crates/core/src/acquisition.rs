//! Sequential feature purchase. Each step fills unknown features with their
//! training means, runs one forward pass, propagates relevance back to the
//! inputs, divides by feature cost, and buys the argmax among the still
//! unknown features. Two relevance selectors (direct and per-class) plus
//! three non-relevance baselines share the same episode loop.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{CostVector, FeatureStatistics};
use crate::error::{Error, Result};
use crate::network::{forward, ForwardTrace, NetworkParams, PredictionVector};
use crate::relevance::{
    default_rule_assignment, output_relevance_direct, output_relevance_logits,
    output_relevance_onehot, relevance_backward, RelevanceVector, RuleAssignment,
};

/// Count of forward and backward propagations, maintained by the episode
/// driver and the selectors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PassCounts {
    pub forwards: u64,
    pub backwards: u64,
}

/// One acquisition in an episode's history.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionEvent {
    /// 1-based acquisition step.
    pub step: usize,
    pub feature_index: usize,
    pub cost: f64,
    /// Adjusted relevance of the chosen feature; `None` for baselines that
    /// do not score.
    pub relevance_score: Option<f64>,
}

/// Mutable state of one acquisition episode: which features are known, their
/// values, the imputed full vector, and the purchase history.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionState {
    x_partial: Vec<f64>,
    known: Vec<bool>,
    x_filled: Vec<f64>,
    t: usize,
    cumulative_cost: f64,
    history: Vec<AcquisitionEvent>,
}

impl AcquisitionState {
    /// Fresh state: nothing known, `x_filled` equal to the training means.
    pub fn new(statistics: &FeatureStatistics) -> Self {
        let m = statistics.feature_count();
        Self {
            x_partial: vec![0.0; m],
            known: vec![false; m],
            x_filled: statistics.means().to_vec(),
            t: 0,
            cumulative_cost: 0.0,
            history: Vec::new(),
        }
    }

    pub fn feature_count(&self) -> usize {
        self.known.len()
    }

    pub fn known(&self) -> &[bool] {
        &self.known
    }

    pub fn is_known(&self, feature: usize) -> bool {
        self.known[feature]
    }

    /// Acquired values; entries where the feature is unknown are
    /// placeholders and must not be read.
    pub fn x_partial(&self) -> &[f64] {
        &self.x_partial
    }

    pub fn x_filled(&self) -> &[f64] {
        &self.x_filled
    }

    /// Number of acquisitions so far.
    pub fn step_count(&self) -> usize {
        self.t
    }

    pub fn cumulative_cost(&self) -> f64 {
        self.cumulative_cost
    }

    pub fn history(&self) -> &[AcquisitionEvent] {
        &self.history
    }

    pub fn unknown_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.known
            .iter()
            .enumerate()
            .filter(|(_, &k)| !k)
            .map(|(i, _)| i)
    }

    pub fn unknown_count(&self) -> usize {
        self.known.iter().filter(|&&k| !k).count()
    }

    pub fn all_known(&self) -> bool {
        self.known.iter().all(|&k| k)
    }

    /// Records a revealed feature value: marks it known, appends to the
    /// history, recomputes the cumulative cost as the index-ordered sum of
    /// known-feature costs, and re-imputes `x_filled` from scratch.
    pub fn acquire(
        &mut self,
        feature: usize,
        value: f64,
        costs: &CostVector,
        relevance_score: Option<f64>,
        statistics: &FeatureStatistics,
    ) -> Result<()> {
        if feature >= self.feature_count() {
            return Err(Error::IndexOutOfRange {
                index: feature,
                len: self.feature_count(),
            });
        }
        if self.known[feature] {
            return Err(Error::RepeatAcquisition { feature });
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("revealed feature value"));
        }
        if costs.len() != self.feature_count() {
            return Err(Error::DimensionMismatch {
                what: "cost vector",
                expected: self.feature_count(),
                actual: costs.len(),
            });
        }
        self.x_partial[feature] = value;
        self.known[feature] = true;
        self.t += 1;
        self.history.push(AcquisitionEvent {
            step: self.t,
            feature_index: feature,
            cost: costs.get(feature),
            relevance_score,
        });
        self.cumulative_cost = self
            .known
            .iter()
            .enumerate()
            .filter(|(_, &k)| k)
            .map(|(i, _)| costs.get(i))
            .sum();
        self.x_filled = impute(&self.x_partial, &self.known, statistics)?;
        Ok(())
    }
}

/// Mean imputation: known entries pass through, unknown entries become the
/// training mean.
pub fn impute(
    x_partial: &[f64],
    known: &[bool],
    statistics: &FeatureStatistics,
) -> Result<Vec<f64>> {
    let m = statistics.feature_count();
    if x_partial.len() != m {
        return Err(Error::DimensionMismatch {
            what: "partial input",
            expected: m,
            actual: x_partial.len(),
        });
    }
    if known.len() != m {
        return Err(Error::DimensionMismatch {
            what: "known mask",
            expected: m,
            actual: known.len(),
        });
    }
    Ok((0..m)
        .map(|i| if known[i] { x_partial[i] } else { statistics.means()[i] })
        .collect())
}

/// Cost-adjusted relevance: `|r_i| / c_i` for unknown features, exactly zero
/// for known ones so they can never be re-acquired.
pub fn adjusted_relevance(
    r: &RelevanceVector,
    known: &[bool],
    costs: &CostVector,
) -> Result<RelevanceVector> {
    if known.len() != r.len() {
        return Err(Error::DimensionMismatch {
            what: "known mask",
            expected: r.len(),
            actual: known.len(),
        });
    }
    if costs.len() != r.len() {
        return Err(Error::DimensionMismatch {
            what: "cost vector",
            expected: r.len(),
            actual: costs.len(),
        });
    }
    let values = r
        .values()
        .iter()
        .enumerate()
        .map(|(i, &ri)| if known[i] { 0.0 } else { ri.abs() / costs.get(i) })
        .collect();
    RelevanceVector::new(values)
}

/// Argmax of `scores` restricted to unknown features; ties break to the
/// lowest index.
fn argmax_unknown(scores: &RelevanceVector, known: &[bool]) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.values().iter().enumerate() {
        if known[i] {
            continue;
        }
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best.ok_or(Error::NoUnknownFeatures)
}

/// Result of a direct-propagation selection.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectSelection {
    pub feature_index: usize,
    /// Full adjusted-relevance vector the argmax was taken over.
    pub adjusted: RelevanceVector,
    pub prediction: PredictionVector,
    pub passes: PassCounts,
    pub fallback_columns: usize,
}

/// Result of a per-class (one-hot) selection.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipropSelection {
    pub feature_index: usize,
    /// The globally maximal adjusted relevance.
    pub best_relevance: f64,
    /// The class whose propagation produced the maximum.
    pub best_class: usize,
    pub prediction: PredictionVector,
    pub passes: PassCounts,
    pub fallback_columns: usize,
}

fn direct_from_trace(
    params: &NetworkParams,
    trace: &ForwardTrace,
    assignment: &RuleAssignment,
    known: &[bool],
    costs: &CostVector,
    logit_relevance: bool,
    passes: &mut PassCounts,
) -> Result<(usize, RelevanceVector, usize)> {
    let output_relevance = if logit_relevance {
        output_relevance_logits(trace)
    } else {
        output_relevance_direct(trace.prediction())
    };
    passes.backwards += 1;
    let propagated = relevance_backward(params, trace, assignment, &output_relevance)?;
    let adjusted = adjusted_relevance(&propagated.relevance, known, costs)?;
    let (feature, _) = argmax_unknown(&adjusted, known)?;
    Ok((feature, adjusted, propagated.fallback_columns))
}

fn multiprop_from_trace(
    params: &NetworkParams,
    trace: &ForwardTrace,
    assignment: &RuleAssignment,
    known: &[bool],
    costs: &CostVector,
    n_classes: usize,
    passes: &mut PassCounts,
) -> Result<(usize, f64, usize, usize)> {
    if n_classes != params.output_dim() {
        return Err(Error::DimensionMismatch {
            what: "class count",
            expected: params.output_dim(),
            actual: n_classes,
        });
    }
    let mut best: Option<(f64, usize, usize)> = None; // (value, feature, class)
    let mut fallbacks = 0;
    for class in 0..n_classes {
        let one_hot = output_relevance_onehot(class, n_classes)?;
        passes.backwards += 1;
        let propagated = relevance_backward(params, trace, assignment, &one_hot)?;
        fallbacks += propagated.fallback_columns;
        let adjusted = adjusted_relevance(&propagated.relevance, known, costs)?;
        let (feature, value) = argmax_unknown(&adjusted, known)?;
        // Order-independent reduction: larger value wins, equal values go to
        // the lower feature index.
        let replace = match best {
            None => true,
            Some((bv, bf, _)) => value > bv || (value == bv && feature < bf),
        };
        if replace {
            best = Some((value, feature, class));
        }
    }
    let (value, feature, class) = best.ok_or(Error::NoUnknownFeatures)?;
    Ok((feature, value, class, fallbacks))
}

/// Direct propagation: one forward pass, one backward pass, argmax of the
/// cost-adjusted relevance.
pub fn select_direct(
    state: &AcquisitionState,
    params: &NetworkParams,
    statistics: &FeatureStatistics,
    costs: &CostVector,
) -> Result<DirectSelection> {
    if state.all_known() {
        return Err(Error::NoUnknownFeatures);
    }
    let assignment = default_rule_assignment(params, statistics)?;
    let mut passes = PassCounts::default();
    passes.forwards += 1;
    let trace = forward(params, state.x_filled())?;
    let (feature_index, adjusted, fallback_columns) = direct_from_trace(
        params,
        &trace,
        &assignment,
        state.known(),
        costs,
        false,
        &mut passes,
    )?;
    Ok(DirectSelection {
        feature_index,
        adjusted,
        prediction: trace.prediction().clone(),
        passes,
        fallback_columns,
    })
}

/// Per-class propagation: one forward pass, one backward pass per class,
/// argmax over every (class, feature) pair.
pub fn select_multiprop(
    state: &AcquisitionState,
    params: &NetworkParams,
    statistics: &FeatureStatistics,
    costs: &CostVector,
    n_classes: usize,
) -> Result<MultipropSelection> {
    if state.all_known() {
        return Err(Error::NoUnknownFeatures);
    }
    let assignment = default_rule_assignment(params, statistics)?;
    let mut passes = PassCounts::default();
    passes.forwards += 1;
    let trace = forward(params, state.x_filled())?;
    let (feature_index, best_relevance, best_class, fallback_columns) = multiprop_from_trace(
        params,
        &trace,
        &assignment,
        state.known(),
        costs,
        n_classes,
        &mut passes,
    )?;
    Ok(MultipropSelection {
        feature_index,
        best_relevance,
        best_class,
        prediction: trace.prediction().clone(),
        passes,
        fallback_columns,
    })
}

/// Uniform choice among unknown features.
pub fn select_random<R: Rng>(state: &AcquisitionState, rng: &mut R) -> Result<usize> {
    let unknown: Vec<usize> = state.unknown_indices().collect();
    if unknown.is_empty() {
        return Err(Error::NoUnknownFeatures);
    }
    Ok(unknown[rng.gen_range(0..unknown.len())])
}

/// Cheapest unknown feature; ties break to the lowest index.
pub fn select_cheapest_first(state: &AcquisitionState, costs: &CostVector) -> Result<usize> {
    if costs.len() != state.feature_count() {
        return Err(Error::DimensionMismatch {
            what: "cost vector",
            expected: state.feature_count(),
            actual: costs.len(),
        });
    }
    state
        .unknown_indices()
        .min_by(|&a, &b| {
            costs
                .get(a)
                .partial_cmp(&costs.get(b))
                .expect("costs are finite")
        })
        .ok_or(Error::NoUnknownFeatures)
}

/// First unknown feature in a fixed order.
pub fn select_static_order(state: &AcquisitionState, order: &[usize]) -> Result<usize> {
    if state.all_known() {
        return Err(Error::NoUnknownFeatures);
    }
    for &i in order {
        if i < state.feature_count() && !state.is_known(i) {
            return Ok(i);
        }
    }
    Err(Error::InvalidConfig(
        "static order does not cover the remaining unknown features".into(),
    ))
}

/// Default static order: features sorted by descending mean absolute
/// relevance of direct propagation over the given (fully observed) rows.
pub fn mean_absolute_relevance_order(
    params: &NetworkParams,
    statistics: &FeatureStatistics,
    rows: &[Vec<f64>],
) -> Result<Vec<usize>> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let assignment = default_rule_assignment(params, statistics)?;
    let m = params.input_dim();
    let mut totals = vec![0.0f64; m];
    for row in rows {
        let trace = forward(params, row)?;
        let propagated = relevance_backward(
            params,
            &trace,
            &assignment,
            &output_relevance_direct(trace.prediction()),
        )?;
        for (total, &r) in totals.iter_mut().zip(propagated.relevance.values()) {
            *total += r.abs();
        }
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        totals[b]
            .partial_cmp(&totals[a])
            .expect("totals are finite")
            .then(a.cmp(&b))
    });
    Ok(order)
}

/// Rule ending an episode. Every condition also stops once all features are
/// known.
#[derive(Debug, Clone, PartialEq)]
pub enum StoppingCondition {
    /// Stop before cumulative cost would exceed this budget.
    Budget(f64),
    /// Stop once the maximum class probability reaches this threshold.
    Confidence(f64),
    /// Stop after this many acquisitions.
    FeatureCount(usize),
    /// Acquire every feature.
    Exhausted,
}

impl StoppingCondition {
    pub fn validate(&self) -> Result<()> {
        match self {
            StoppingCondition::Budget(b) => {
                if !(b.is_finite() && *b >= 0.0) {
                    return Err(Error::InvalidConfig("budget must be nonnegative".into()));
                }
            }
            StoppingCondition::Confidence(c) => {
                if !(c.is_finite() && *c > 0.0 && *c <= 1.0) {
                    return Err(Error::InvalidConfig(
                        "confidence threshold must be in (0, 1]".into(),
                    ));
                }
            }
            StoppingCondition::FeatureCount(_) | StoppingCondition::Exhausted => {}
        }
        Ok(())
    }
}

/// Why an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    BudgetReached,
    ConfidenceReached,
    FeatureCountReached,
    Exhausted,
}

/// How an episode ended: at its stopping condition, or aborted (oracle
/// failure, abandoned session) with the record truncated at that point.
#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Stopped(StopReason),
    Aborted(String),
}

/// Reveals true feature values on request. `reveal` must return a value
/// within the feature's bounds; callers never request the same index twice
/// within an episode.
pub trait Oracle {
    fn reveal(&mut self, feature_index: usize) -> Result<f64>;
}

/// Oracle backed by a fully observed row, counting reveals.
#[derive(Debug, Clone)]
pub struct VectorOracle {
    values: Vec<f64>,
    reveals: usize,
}

impl VectorOracle {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, reveals: 0 }
    }

    pub fn reveal_count(&self) -> usize {
        self.reveals
    }
}

impl Oracle for VectorOracle {
    fn reveal(&mut self, feature_index: usize) -> Result<f64> {
        if feature_index >= self.values.len() {
            return Err(Error::OracleFailure(format!(
                "no value for feature {feature_index}"
            )));
        }
        self.reveals += 1;
        Ok(self.values[feature_index])
    }
}

/// Feature-selection policy of an episode.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    /// Direct propagation (prediction as output relevance, or the final
    /// pre-activation when `logit_relevance` is set).
    Direct { logit_relevance: bool },
    /// Per-class one-hot propagation.
    MultiProp,
    /// Seeded uniform baseline.
    Random,
    /// Cheapest-unknown-first baseline.
    CheapestFirst,
    /// Fixed-order baseline; the order must be a permutation of the
    /// features.
    StaticOrder(Vec<usize>),
}

impl Strategy {
    pub fn direct() -> Self {
        Strategy::Direct {
            logit_relevance: false,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Direct {
                logit_relevance: false,
            } => "direct",
            Strategy::Direct {
                logit_relevance: true,
            } => "direct-logits",
            Strategy::MultiProp => "multiprop",
            Strategy::Random => "random",
            Strategy::CheapestFirst => "cheapest",
            Strategy::StaticOrder(_) => "static",
        }
    }
}

/// One acquisition step in an episode record; the prediction is the one made
/// after the feature value arrived.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub step: usize,
    pub feature_index: usize,
    pub cost: f64,
    pub cumulative_cost: f64,
    pub relevance_score: Option<f64>,
    pub prediction: PredictionVector,
}

/// Full trajectory of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// Prediction from pure imputation, before any acquisition.
    pub initial_prediction: PredictionVector,
    pub steps: Vec<EpisodeStep>,
    pub final_prediction: PredictionVector,
    pub total_cost: f64,
    pub termination: Termination,
    pub passes: PassCounts,
    /// Stabilization fallbacks encountered across the episode.
    pub fallback_columns: u64,
}

impl EpisodeRecord {
    pub fn acquisition_count(&self) -> usize {
        self.steps.len()
    }

    /// The prediction available after spending at most `budget`: the last
    /// step whose cumulative cost fits, or the imputation-only prediction.
    pub fn prediction_at_cost(&self, budget: f64) -> &PredictionVector {
        let mut latest = &self.initial_prediction;
        for step in &self.steps {
            if step.cumulative_cost <= budget {
                latest = &step.prediction;
            } else {
                break;
            }
        }
        latest
    }
}

/// A selection waiting for its feature value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingAcquisition {
    pub feature_index: usize,
    pub cost: f64,
    pub relevance_score: Option<f64>,
}

/// Step-wise episode state machine. [`run_episode`] drives it with an
/// [`Oracle`]; interactive front-ends drive it directly.
pub struct EpisodeDriver<'a> {
    params: &'a NetworkParams,
    statistics: &'a FeatureStatistics,
    costs: &'a CostVector,
    strategy: &'a Strategy,
    stopping: StoppingCondition,
    assignment: RuleAssignment,
    state: AcquisitionState,
    trace: ForwardTrace,
    rng: ChaCha8Rng,
    passes: PassCounts,
    fallback_columns: u64,
    steps: Vec<EpisodeStep>,
    initial_prediction: PredictionVector,
    pending: Option<PendingAcquisition>,
    stop_reason: Option<StopReason>,
}

impl<'a> EpisodeDriver<'a> {
    pub fn new(
        params: &'a NetworkParams,
        statistics: &'a FeatureStatistics,
        costs: &'a CostVector,
        strategy: &'a Strategy,
        stopping: StoppingCondition,
        seed: u64,
    ) -> Result<Self> {
        stopping.validate()?;
        if statistics.feature_count() != params.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "feature statistics",
                expected: params.input_dim(),
                actual: statistics.feature_count(),
            });
        }
        if costs.len() != params.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "cost vector",
                expected: params.input_dim(),
                actual: costs.len(),
            });
        }
        if let Strategy::StaticOrder(order) = strategy {
            let m = params.input_dim();
            let mut seen = vec![false; m];
            if order.len() != m {
                return Err(Error::InvalidConfig(
                    "static order must list every feature exactly once".into(),
                ));
            }
            for &i in order {
                if i >= m || seen[i] {
                    return Err(Error::InvalidConfig(
                        "static order must list every feature exactly once".into(),
                    ));
                }
                seen[i] = true;
            }
        }
        let assignment = default_rule_assignment(params, statistics)?;
        let state = AcquisitionState::new(statistics);
        let mut passes = PassCounts::default();
        passes.forwards += 1;
        let trace = forward(params, state.x_filled())?;
        let initial_prediction = trace.prediction().clone();
        Ok(Self {
            params,
            statistics,
            costs,
            strategy,
            stopping,
            assignment,
            state,
            trace,
            rng: ChaCha8Rng::seed_from_u64(seed),
            passes,
            fallback_columns: 0,
            steps: Vec::new(),
            initial_prediction,
            pending: None,
            stop_reason: None,
        })
    }

    pub fn state(&self) -> &AcquisitionState {
        &self.state
    }

    /// Prediction for the current (possibly partially acquired) input.
    pub fn prediction(&self) -> &PredictionVector {
        self.trace.prediction()
    }

    pub fn passes(&self) -> PassCounts {
        self.passes
    }

    fn stopping_reason(&self) -> Option<StopReason> {
        if self.state.all_known() {
            return Some(StopReason::Exhausted);
        }
        match self.stopping {
            StoppingCondition::Exhausted => None,
            StoppingCondition::Budget(budget) => {
                let cheapest = self
                    .state
                    .unknown_indices()
                    .map(|i| self.costs.get(i))
                    .fold(f64::INFINITY, f64::min);
                (self.state.cumulative_cost() + cheapest > budget)
                    .then_some(StopReason::BudgetReached)
            }
            StoppingCondition::Confidence(threshold) => (self.trace.prediction().confidence()
                >= threshold)
                .then_some(StopReason::ConfidenceReached),
            StoppingCondition::FeatureCount(max) => {
                (self.state.step_count() >= max).then_some(StopReason::FeatureCountReached)
            }
        }
    }

    /// Selects the next feature to buy, or `None` once the stopping
    /// condition holds. The returned selection must be answered via
    /// [`supply`](Self::supply) before the next call.
    pub fn next(&mut self) -> Result<Option<PendingAcquisition>> {
        if self.pending.is_some() {
            return Err(Error::InvalidConfig(
                "previous selection has not been supplied".into(),
            ));
        }
        if self.stop_reason.is_some() {
            return Ok(None);
        }
        if let Some(reason) = self.stopping_reason() {
            self.stop_reason = Some(reason);
            return Ok(None);
        }

        let (feature_index, relevance_score) = match self.strategy {
            Strategy::Direct { logit_relevance } => {
                let (feature, adjusted, fallbacks) = direct_from_trace(
                    self.params,
                    &self.trace,
                    &self.assignment,
                    self.state.known(),
                    self.costs,
                    *logit_relevance,
                    &mut self.passes,
                )?;
                self.fallback_columns += fallbacks as u64;
                (feature, Some(adjusted.values()[feature]))
            }
            Strategy::MultiProp => {
                let (feature, best, _, fallbacks) = multiprop_from_trace(
                    self.params,
                    &self.trace,
                    &self.assignment,
                    self.state.known(),
                    self.costs,
                    self.params.output_dim(),
                    &mut self.passes,
                )?;
                self.fallback_columns += fallbacks as u64;
                (feature, Some(best))
            }
            Strategy::Random => (select_random(&self.state, &mut self.rng)?, None),
            Strategy::CheapestFirst => (select_cheapest_first(&self.state, self.costs)?, None),
            Strategy::StaticOrder(order) => (select_static_order(&self.state, order)?, None),
        };

        let cost = self.costs.get(feature_index);
        if let StoppingCondition::Budget(budget) = self.stopping {
            // The chosen feature itself must fit; a cheaper unknown feature
            // fitting is not enough.
            if self.state.cumulative_cost() + cost > budget {
                self.stop_reason = Some(StopReason::BudgetReached);
                return Ok(None);
            }
        }
        let pending = PendingAcquisition {
            feature_index,
            cost,
            relevance_score,
        };
        self.pending = Some(pending);
        Ok(Some(pending))
    }

    /// Feeds the revealed value for the pending selection and advances the
    /// episode with a fresh forward pass.
    pub fn supply(&mut self, value: f64) -> Result<()> {
        let pending = self.pending.ok_or_else(|| {
            Error::InvalidConfig("supply called without a pending selection".into())
        })?;
        self.state.acquire(
            pending.feature_index,
            value,
            self.costs,
            pending.relevance_score,
            self.statistics,
        )?;
        self.pending = None;
        self.passes.forwards += 1;
        self.trace = forward(self.params, self.state.x_filled())?;
        self.steps.push(EpisodeStep {
            step: self.state.step_count(),
            feature_index: pending.feature_index,
            cost: pending.cost,
            cumulative_cost: self.state.cumulative_cost(),
            relevance_score: pending.relevance_score,
            prediction: self.trace.prediction().clone(),
        });
        Ok(())
    }

    fn record(self, termination: Termination) -> EpisodeRecord {
        EpisodeRecord {
            initial_prediction: self.initial_prediction,
            final_prediction: self.trace.prediction().clone(),
            steps: self.steps,
            total_cost: self.state.cumulative_cost(),
            termination,
            passes: self.passes,
            fallback_columns: self.fallback_columns,
        }
    }

    /// Consumes the driver after [`next`](Self::next) returned `None`.
    pub fn finish(self) -> EpisodeRecord {
        let termination = match self.stop_reason {
            Some(reason) => Termination::Stopped(reason),
            None => Termination::Aborted("episode abandoned before its stopping condition".into()),
        };
        self.record(termination)
    }

    /// Consumes the driver mid-episode, keeping the partial trajectory.
    pub fn abort(self, reason: String) -> EpisodeRecord {
        self.record(Termination::Aborted(reason))
    }
}

/// Runs one full episode against an oracle. Oracle failures abort the
/// episode and return the partial record rather than an error.
pub fn run_episode(
    params: &NetworkParams,
    statistics: &FeatureStatistics,
    costs: &CostVector,
    oracle: &mut dyn Oracle,
    strategy: &Strategy,
    stopping: StoppingCondition,
    seed: u64,
) -> Result<EpisodeRecord> {
    let mut driver = EpisodeDriver::new(params, statistics, costs, strategy, stopping, seed)?;
    loop {
        match driver.next()? {
            None => return Ok(driver.finish()),
            Some(pending) => match oracle.reveal(pending.feature_index) {
                Ok(value) => match driver.supply(value) {
                    Ok(()) => {}
                    Err(Error::NonFinite(_)) => {
                        return Ok(driver
                            .abort("oracle revealed a non-finite value".into()))
                    }
                    Err(e) => return Err(e),
                },
                Err(e) => return Ok(driver.abort(format!("{e}"))),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_network, Activation, LayerSpec};
    use proptest::prelude::*;

    fn stats(means: Vec<f64>) -> FeatureStatistics {
        let m = means.len();
        FeatureStatistics::new(means, vec![0.0; m], vec![1.0; m]).unwrap()
    }

    fn net(m: usize, hidden: usize, n: usize, seed: u64) -> NetworkParams {
        init_network(
            &[
                LayerSpec::new(m, hidden, Activation::Relu).unwrap(),
                LayerSpec::new(hidden, n, Activation::Linear).unwrap(),
            ],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn impute_cases() {
        let st = stats(vec![0.5, 0.7]);
        assert_eq!(
            impute(&[0.3, 0.9], &[true, true], &st).unwrap(),
            vec![0.3, 0.9]
        );
        assert_eq!(
            impute(&[0.0, 0.0], &[false, false], &st).unwrap(),
            vec![0.5, 0.7]
        );
        assert_eq!(
            impute(&[0.3, 0.0], &[true, false], &st).unwrap(),
            vec![0.3, 0.7]
        );
    }

    #[test]
    fn adjusted_relevance_hand_case() {
        let r = RelevanceVector::new(vec![0.5, -0.8, 0.2]).unwrap();
        let costs = CostVector::new(vec![1.0, 2.0, 1.0]).unwrap();
        let adjusted = adjusted_relevance(&r, &[true, false, false], &costs).unwrap();
        assert_eq!(adjusted.values(), &[0.0, 0.4, 0.2]);
    }

    #[test]
    fn adjusted_relevance_all_known_is_zero() {
        let r = RelevanceVector::new(vec![0.5, 0.8]).unwrap();
        let costs = CostVector::uniform(2, 1.0).unwrap();
        let adjusted = adjusted_relevance(&r, &[true, true], &costs).unwrap();
        assert_eq!(adjusted.values(), &[0.0, 0.0]);
    }

    #[test]
    fn adjusted_relevance_uniform_costs_keep_argmax() {
        let r = RelevanceVector::new(vec![0.1, -0.9, 0.4]).unwrap();
        let costs = CostVector::uniform(3, 2.5).unwrap();
        let adjusted = adjusted_relevance(&r, &[false, false, false], &costs).unwrap();
        let (best, _) = argmax_unknown(&adjusted, &[false, false, false]).unwrap();
        assert_eq!(best, 1);
    }

    #[test]
    fn state_tracks_cost_and_history() {
        let st = stats(vec![0.5, 0.5, 0.5]);
        let costs = CostVector::new(vec![1.0, 5.0, 10.0]).unwrap();
        let mut state = AcquisitionState::new(&st);
        assert_eq!(state.x_filled(), &[0.5, 0.5, 0.5]);

        state.acquire(1, 0.9, &costs, Some(0.4), &st).unwrap();
        assert_eq!(state.cumulative_cost(), 5.0);
        assert_eq!(state.x_filled(), &[0.5, 0.9, 0.5]);
        assert_eq!(state.step_count(), 1);

        state.acquire(0, 0.1, &costs, None, &st).unwrap();
        assert_eq!(state.cumulative_cost(), 6.0);
        assert_eq!(state.history().len(), 2);
        assert_eq!(state.history()[1].step, 2);

        assert!(matches!(
            state.acquire(1, 0.2, &costs, None, &st),
            Err(Error::RepeatAcquisition { feature: 1 })
        ));
    }

    #[test]
    fn select_direct_needs_unknown_features() {
        let st = stats(vec![0.5, 0.5]);
        let costs = CostVector::uniform(2, 1.0).unwrap();
        let params = net(2, 4, 2, 0);
        let mut state = AcquisitionState::new(&st);
        state.acquire(0, 0.2, &costs, None, &st).unwrap();
        state.acquire(1, 0.4, &costs, None, &st).unwrap();
        assert!(matches!(
            select_direct(&state, &params, &st, &costs),
            Err(Error::NoUnknownFeatures)
        ));
    }

    #[test]
    fn select_direct_forced_single_unknown() {
        let st = stats(vec![0.5, 0.5, 0.5]);
        let costs = CostVector::uniform(3, 1.0).unwrap();
        let params = net(3, 4, 2, 1);
        let mut state = AcquisitionState::new(&st);
        state.acquire(0, 0.2, &costs, None, &st).unwrap();
        state.acquire(2, 0.4, &costs, None, &st).unwrap();
        let selection = select_direct(&state, &params, &st, &costs).unwrap();
        assert_eq!(selection.feature_index, 1);
        assert_eq!(selection.passes, PassCounts { forwards: 1, backwards: 1 });
    }

    #[test]
    fn select_multiprop_single_class_matches_direct_onehot() {
        // With one class the prediction softmax is [1.0], so direct's output
        // relevance equals the one-hot vector and the choices coincide.
        let st = stats(vec![0.5; 4]);
        let costs = CostVector::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let params = net(4, 5, 1, 3);
        let state = AcquisitionState::new(&st);
        let direct = select_direct(&state, &params, &st, &costs).unwrap();
        let multi = select_multiprop(&state, &params, &st, &costs, 1).unwrap();
        assert_eq!(direct.feature_index, multi.feature_index);
        assert_eq!(multi.passes, PassCounts { forwards: 1, backwards: 1 });
    }

    #[test]
    fn select_multiprop_forced_single_unknown() {
        let st = stats(vec![0.5, 0.5]);
        let costs = CostVector::uniform(2, 1.0).unwrap();
        let params = net(2, 4, 3, 5);
        let mut state = AcquisitionState::new(&st);
        state.acquire(1, 0.9, &costs, None, &st).unwrap();
        let selection = select_multiprop(&state, &params, &st, &costs, 3).unwrap();
        assert_eq!(selection.feature_index, 0);
        assert_eq!(selection.passes, PassCounts { forwards: 1, backwards: 3 });
    }

    #[test]
    fn baseline_selectors() {
        let st = stats(vec![0.5, 0.5, 0.5]);
        let costs = CostVector::new(vec![5.0, 1.0, 10.0]).unwrap();
        let state = AcquisitionState::new(&st);

        assert_eq!(select_cheapest_first(&state, &costs).unwrap(), 1);

        let mut state_partial = state.clone();
        state_partial.acquire(1, 0.5, &costs, None, &st).unwrap();
        assert_eq!(
            select_static_order(&state_partial, &[2, 0, 1]).unwrap(),
            2
        );

        let mut rng_a = ChaCha8Rng::seed_from_u64(10);
        let mut rng_b = ChaCha8Rng::seed_from_u64(10);
        let picks_a: Vec<usize> = (0..5)
            .map(|_| select_random(&state, &mut rng_a).unwrap())
            .collect();
        let picks_b: Vec<usize> = (0..5)
            .map(|_| select_random(&state, &mut rng_b).unwrap())
            .collect();
        assert_eq!(picks_a, picks_b);
    }

    fn episode_fixture(
        m: usize,
        n: usize,
        costs: Vec<f64>,
    ) -> (NetworkParams, FeatureStatistics, CostVector, Vec<f64>) {
        let params = net(m, 6, n, 42);
        let st = stats(vec![0.5; m]);
        let costs = CostVector::new(costs).unwrap();
        let row: Vec<f64> = (0..m).map(|i| (i as f64 + 1.0) / (m as f64 + 1.0)).collect();
        (params, st, costs, row)
    }

    #[test]
    fn episode_budget_zero_makes_no_acquisitions() {
        let (params, st, costs, row) = episode_fixture(4, 2, vec![1.0; 4]);
        let mut oracle = VectorOracle::new(row);
        let record = run_episode(
            &params,
            &st,
            &costs,
            &mut oracle,
            &Strategy::direct(),
            StoppingCondition::Budget(0.0),
            0,
        )
        .unwrap();
        assert_eq!(record.acquisition_count(), 0);
        assert_eq!(record.total_cost, 0.0);
        assert_eq!(record.final_prediction, record.initial_prediction);
        assert_eq!(oracle.reveal_count(), 0);
        assert!(matches!(
            record.termination,
            Termination::Stopped(StopReason::BudgetReached)
        ));
    }

    #[test]
    fn episode_exhaustion_acquires_every_feature_once() {
        let (params, st, costs, row) = episode_fixture(5, 2, vec![1.0; 5]);
        let mut oracle = VectorOracle::new(row);
        let record = run_episode(
            &params,
            &st,
            &costs,
            &mut oracle,
            &Strategy::direct(),
            StoppingCondition::Exhausted,
            0,
        )
        .unwrap();
        assert_eq!(record.acquisition_count(), 5);
        let mut indices: Vec<usize> = record.steps.iter().map(|s| s.feature_index).collect();
        indices.sort_unstable();
        assert_eq!(indices, vec![0, 1, 2, 3, 4]);
        assert_eq!(oracle.reveal_count(), 5);
    }

    #[test]
    fn episode_budget_two_with_unit_costs() {
        let (params, st, costs, row) = episode_fixture(5, 2, vec![1.0; 5]);
        let mut oracle = VectorOracle::new(row);
        let record = run_episode(
            &params,
            &st,
            &costs,
            &mut oracle,
            &Strategy::direct(),
            StoppingCondition::Budget(2.0),
            0,
        )
        .unwrap();
        assert_eq!(record.acquisition_count(), 2);
        assert_eq!(record.total_cost, 2.0);
    }

    #[test]
    fn episode_oracle_failure_keeps_partial_record() {
        struct FailingOracle {
            remaining: usize,
        }
        impl Oracle for FailingOracle {
            fn reveal(&mut self, _: usize) -> Result<f64> {
                if self.remaining == 0 {
                    Err(Error::OracleFailure("out of answers".into()))
                } else {
                    self.remaining -= 1;
                    Ok(0.5)
                }
            }
        }
        let (params, st, costs, _) = episode_fixture(4, 2, vec![1.0; 4]);
        let record = run_episode(
            &params,
            &st,
            &costs,
            &mut FailingOracle { remaining: 2 },
            &Strategy::direct(),
            StoppingCondition::Exhausted,
            0,
        )
        .unwrap();
        assert_eq!(record.acquisition_count(), 2);
        assert!(matches!(record.termination, Termination::Aborted(_)));
    }

    #[test]
    fn episode_pass_counts_direct_and_multiprop() {
        let (params, st, costs, row) = episode_fixture(4, 3, vec![1.0; 4]);
        let mut oracle = VectorOracle::new(row.clone());
        let direct = run_episode(
            &params,
            &st,
            &costs,
            &mut oracle,
            &Strategy::direct(),
            StoppingCondition::Exhausted,
            0,
        )
        .unwrap();
        assert_eq!(direct.acquisition_count(), 4);
        assert_eq!(direct.passes, PassCounts { forwards: 5, backwards: 4 });

        let mut oracle = VectorOracle::new(row);
        let multi = run_episode(
            &params,
            &st,
            &costs,
            &mut oracle,
            &Strategy::MultiProp,
            StoppingCondition::Exhausted,
            0,
        )
        .unwrap();
        assert_eq!(multi.passes, PassCounts { forwards: 5, backwards: 12 });
    }

    #[test]
    fn episode_confidence_stop() {
        let (params, st, costs, row) = episode_fixture(4, 2, vec![1.0; 4]);
        let mut oracle = VectorOracle::new(row);
        // Any prediction has confidence >= 0.5 in a 2-class problem.
        let record = run_episode(
            &params,
            &st,
            &costs,
            &mut oracle,
            &Strategy::direct(),
            StoppingCondition::Confidence(0.5),
            0,
        )
        .unwrap();
        assert_eq!(record.acquisition_count(), 0);
        assert!(matches!(
            record.termination,
            Termination::Stopped(StopReason::ConfidenceReached)
        ));
    }

    #[test]
    fn heterogeneous_budget_never_exceeded() {
        let (params, st, _, row) = episode_fixture(4, 2, vec![1.0; 4]);
        let costs = CostVector::new(vec![1.0, 3.0, 7.0, 20.0]).unwrap();
        for budget in [0.0, 1.0, 4.0, 10.0, 25.0, 31.0] {
            let mut oracle = VectorOracle::new(row.clone());
            let record = run_episode(
                &params,
                &st,
                &costs,
                &mut oracle,
                &Strategy::direct(),
                StoppingCondition::Budget(budget),
                0,
            )
            .unwrap();
            assert!(record.total_cost <= budget);
            for step in &record.steps {
                assert!(step.cumulative_cost <= budget);
            }
        }
    }

    #[test]
    fn stopping_condition_validation() {
        assert!(StoppingCondition::Budget(0.0).validate().is_ok());
        assert!(StoppingCondition::Budget(-1.0).validate().is_err());
        assert!(StoppingCondition::Confidence(1.0).validate().is_ok());
        assert!(StoppingCondition::Confidence(0.0).validate().is_err());
        assert!(StoppingCondition::Confidence(1.5).validate().is_err());
    }

    proptest! {
        #[test]
        fn cost_increase_never_attracts_argmax(
            r in proptest::collection::vec(-1.0f64..1.0, 4),
            base_costs in proptest::collection::vec(0.5f64..5.0, 4),
            bump in 1.1f64..10.0,
            target in 0usize..4,
        ) {
            let r = RelevanceVector::new(r).unwrap();
            let known = [false; 4];
            let costs = CostVector::new(base_costs.clone()).unwrap();
            let before = adjusted_relevance(&r, &known, &costs).unwrap();
            let (argmax_before, _) = argmax_unknown(&before, &known).unwrap();

            let mut bumped = base_costs;
            bumped[target] *= bump;
            let costs_after = CostVector::new(bumped).unwrap();
            let after = adjusted_relevance(&r, &known, &costs_after).unwrap();
            let (argmax_after, _) = argmax_unknown(&after, &known).unwrap();

            // The bumped feature's score never rises...
            prop_assert!(after.values()[target] <= before.values()[target]);
            // ...and the argmax can only move away from it, never toward it.
            if argmax_before != target {
                prop_assert_eq!(argmax_after, argmax_before);
            }
        }

        #[test]
        fn episodes_never_reacquire_and_account_costs(
            seed in 0u64..300,
            strategy_pick in 0usize..4,
            budget in 0.0f64..12.0,
        ) {
            let m = 5;
            let (params, st, costs, row) = episode_fixture(m, 2, alloc::vec![1.0, 2.0, 3.0, 1.5, 2.5]);
            let strategy = match strategy_pick {
                0 => Strategy::direct(),
                1 => Strategy::MultiProp,
                2 => Strategy::Random,
                _ => Strategy::CheapestFirst,
            };
            let mut oracle = VectorOracle::new(row);
            let record = run_episode(
                &params, &st, &costs, &mut oracle,
                &strategy, StoppingCondition::Budget(budget), seed,
            ).unwrap();

            let mut seen = alloc::vec![false; m];
            let mut running = 0.0;
            for step in &record.steps {
                prop_assert!(!seen[step.feature_index]);
                seen[step.feature_index] = true;
                running += step.cost;
                prop_assert!((step.cumulative_cost - running).abs() < 1e-12);
                prop_assert!(step.cumulative_cost <= budget);
            }
            prop_assert_eq!(oracle.reveal_count(), record.acquisition_count());
            prop_assert_eq!(record.passes.forwards, record.acquisition_count() as u64 + 1);
        }
    }
}
