//! Backward relevance propagation. A relevance vector attached to the output
//! layer is redistributed layer by layer down to the input features, each
//! layer conserving the total: the share an input receives from an output
//! neuron depends on the active rule (squared weights for unconstrained
//! inputs, positive contributions for ReLU inputs, bound-anchored
//! contributions for the bounded first layer).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::data::FeatureStatistics;
use crate::error::{Error, Result};
use crate::network::{ForwardTrace, Layer, NetworkParams, PredictionVector};

/// Sign-preserving epsilon added to redistribution denominators; columns
/// whose denominator magnitude falls below it fall back to a uniform split,
/// which keeps conservation exact instead of producing NaN.
pub const STABILIZATION_EPSILON: f64 = 1e-12;

/// Per-neuron relevance of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceVector {
    values: Vec<f64>,
}

impl RelevanceVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("relevance"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Redistribution rule for one layer, chosen by the layer's input domain.
#[derive(Debug, Clone, PartialEq)]
pub enum PropagationRule {
    /// Squared-weight shares; for unconstrained real inputs.
    WSquare,
    /// Positive-contribution shares; for nonnegative (ReLU) inputs.
    ZPlus,
    /// Bound-anchored shares for inputs confined to `[lower, upper]`;
    /// normally the first layer.
    ZBounds { lower: Vec<f64>, upper: Vec<f64> },
    /// Raw-contribution shares with an explicit stabilizer. Optional
    /// alternative; not used by the default assignment.
    Proportional { epsilon: f64 },
}

/// One rule per network layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleAssignment {
    rules: Vec<PropagationRule>,
}

impl RuleAssignment {
    pub fn new(rules: Vec<PropagationRule>, network: &NetworkParams) -> Result<Self> {
        if rules.len() != network.layer_count() {
            return Err(Error::DimensionMismatch {
                what: "rule assignment",
                expected: network.layer_count(),
                actual: rules.len(),
            });
        }
        for (l, rule) in rules.iter().enumerate() {
            if let PropagationRule::ZBounds { lower, upper } = rule {
                let dim = network.layers()[l].input_dim();
                if lower.len() != dim || upper.len() != dim {
                    return Err(Error::DimensionMismatch {
                        what: "rule bounds",
                        expected: dim,
                        actual: lower.len().min(upper.len()),
                    });
                }
                for (i, (lo, hi)) in lower.iter().zip(upper).enumerate() {
                    if lo > hi {
                        return Err(Error::InvalidBounds { feature: i });
                    }
                }
            }
            if let PropagationRule::Proportional { epsilon } = rule {
                if !(epsilon.is_finite() && *epsilon > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "proportional rule at layer {l} needs a positive epsilon"
                    )));
                }
            }
        }
        Ok(Self { rules })
    }

    pub fn rules(&self) -> &[PropagationRule] {
        &self.rules
    }
}

/// Result of a propagation: the relevance vector plus the number of columns
/// that hit the uniform-split fallback, surfaced so degenerate layers do not
/// pass silently.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagated {
    pub relevance: RelevanceVector,
    pub fallback_columns: usize,
}

/// Shared redistribution kernel: `numerator(i, j)` is the share weight of
/// input `i` under output `j`.
fn redistribute<F>(
    in_dim: usize,
    out_dim: usize,
    relevance_out: &RelevanceVector,
    epsilon: f64,
    numerator: F,
) -> Result<Propagated>
where
    F: Fn(usize, usize) -> f64,
{
    if relevance_out.len() != out_dim {
        return Err(Error::DimensionMismatch {
            what: "output relevance",
            expected: out_dim,
            actual: relevance_out.len(),
        });
    }
    let mut values = vec![0.0; in_dim];
    let mut column = vec![0.0; in_dim];
    let mut fallback_columns = 0;
    for (j, &r_j) in relevance_out.values().iter().enumerate() {
        if r_j == 0.0 {
            continue;
        }
        let mut denom = 0.0;
        for (i, slot) in column.iter_mut().enumerate() {
            *slot = numerator(i, j);
            denom += *slot;
        }
        if denom.abs() < epsilon {
            fallback_columns += 1;
            let share = r_j / in_dim as f64;
            for value in &mut values {
                *value += share;
            }
        } else {
            let stabilized = denom + epsilon * denom.signum();
            for (value, &numer) in values.iter_mut().zip(&column) {
                *value += numer / stabilized * r_j;
            }
        }
    }
    Ok(Propagated {
        relevance: RelevanceVector::new(values)?,
        fallback_columns,
    })
}

fn check_inputs(layer: &Layer, inputs: &[f64]) -> Result<()> {
    if inputs.len() != layer.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "layer inputs",
            expected: layer.input_dim(),
            actual: inputs.len(),
        });
    }
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("layer inputs"));
    }
    Ok(())
}

/// Squared-weight redistribution:
/// `R_i = sum_j w_ij^2 / (sum_i' w_i'j^2) * R_j`.
pub fn propagate_layer_wsquare(layer: &Layer, relevance_out: &RelevanceVector) -> Result<Propagated> {
    redistribute(
        layer.input_dim(),
        layer.output_dim(),
        relevance_out,
        STABILIZATION_EPSILON,
        |i, j| {
            let w = layer.weight(i, j);
            w * w
        },
    )
}

/// Positive-contribution redistribution for nonnegative inputs:
/// `R_i = sum_j z_ij^+ / (sum_i' z_i'j^+) * R_j` with `z_ij^+ = x_i * max(w_ij, 0)`.
pub fn propagate_layer_zplus(
    inputs: &[f64],
    layer: &Layer,
    relevance_out: &RelevanceVector,
) -> Result<Propagated> {
    check_inputs(layer, inputs)?;
    redistribute(
        layer.input_dim(),
        layer.output_dim(),
        relevance_out,
        STABILIZATION_EPSILON,
        |i, j| inputs[i] * layer.weight(i, j).max(0.0),
    )
}

/// Bound-anchored redistribution for inputs confined to `[lower, upper]`:
/// `R_i = sum_j (z_ij - l_i w_ij^+ - h_i w_ij^-) / (sum_i' ...) * R_j`.
pub fn propagate_layer_zbounds(
    inputs: &[f64],
    layer: &Layer,
    lower: &[f64],
    upper: &[f64],
    relevance_out: &RelevanceVector,
) -> Result<Propagated> {
    check_inputs(layer, inputs)?;
    if lower.len() != layer.input_dim() || upper.len() != layer.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "rule bounds",
            expected: layer.input_dim(),
            actual: lower.len().min(upper.len()),
        });
    }
    for (i, (lo, hi)) in lower.iter().zip(upper).enumerate() {
        if lo > hi {
            return Err(Error::InvalidBounds { feature: i });
        }
    }
    redistribute(
        layer.input_dim(),
        layer.output_dim(),
        relevance_out,
        STABILIZATION_EPSILON,
        |i, j| {
            let w = layer.weight(i, j);
            inputs[i] * w - lower[i] * w.max(0.0) - upper[i] * w.min(0.0)
        },
    )
}

/// Raw-contribution redistribution, the original proportional rule:
/// `R_i = sum_j z_ij / (sum_i' z_i'j) * R_j`. Signs can cancel in the
/// denominator, hence the caller-chosen stabilizer.
pub fn propagate_layer_proportional(
    inputs: &[f64],
    layer: &Layer,
    epsilon: f64,
    relevance_out: &RelevanceVector,
) -> Result<Propagated> {
    check_inputs(layer, inputs)?;
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidConfig("epsilon must be positive".into()));
    }
    redistribute(
        layer.input_dim(),
        layer.output_dim(),
        relevance_out,
        epsilon,
        |i, j| inputs[i] * layer.weight(i, j),
    )
}

/// Default rule choice by input domain: the first layer sees bounded
/// features (bounds from the training statistics), every later layer sees
/// ReLU outputs.
pub fn default_rule_assignment(
    network: &NetworkParams,
    statistics: &FeatureStatistics,
) -> Result<RuleAssignment> {
    if statistics.feature_count() != network.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "feature statistics",
            expected: network.input_dim(),
            actual: statistics.feature_count(),
        });
    }
    let mut rules = Vec::with_capacity(network.layer_count());
    rules.push(PropagationRule::ZBounds {
        lower: statistics.lower().to_vec(),
        upper: statistics.upper().to_vec(),
    });
    for _ in 1..network.layer_count() {
        rules.push(PropagationRule::ZPlus);
    }
    RuleAssignment::new(rules, network)
}

/// Applies the assigned rule of every layer from the output back to the
/// input features. The trace must come from a forward pass of `params`.
pub fn relevance_backward(
    params: &NetworkParams,
    trace: &ForwardTrace,
    assignment: &RuleAssignment,
    output_relevance: &RelevanceVector,
) -> Result<Propagated> {
    if trace.layer_count() != params.layer_count() {
        return Err(Error::DimensionMismatch {
            what: "forward trace",
            expected: params.layer_count(),
            actual: trace.layer_count(),
        });
    }
    if assignment.rules().len() != params.layer_count() {
        return Err(Error::DimensionMismatch {
            what: "rule assignment",
            expected: params.layer_count(),
            actual: assignment.rules().len(),
        });
    }
    let mut relevance = output_relevance.clone();
    let mut fallback_columns = 0;
    for l in (0..params.layer_count()).rev() {
        let layer = &params.layers()[l];
        let inputs = trace.layer_input(l);
        let step = match &assignment.rules()[l] {
            PropagationRule::WSquare => propagate_layer_wsquare(layer, &relevance)?,
            PropagationRule::ZPlus => propagate_layer_zplus(inputs, layer, &relevance)?,
            PropagationRule::ZBounds { lower, upper } => {
                propagate_layer_zbounds(inputs, layer, lower, upper, &relevance)?
            }
            PropagationRule::Proportional { epsilon } => {
                propagate_layer_proportional(inputs, layer, *epsilon, &relevance)?
            }
        };
        relevance = step.relevance;
        fallback_columns += step.fallback_columns;
    }
    Ok(Propagated {
        relevance,
        fallback_columns,
    })
}

/// Output relevance for direct propagation: the prediction itself.
pub fn output_relevance_direct(prediction: &PredictionVector) -> RelevanceVector {
    RelevanceVector {
        values: prediction.probabilities().to_vec(),
    }
}

/// Output relevance taken from the final pre-activation instead of the
/// softmax probabilities. Optional variant; negative logits produce signed
/// relevances.
pub fn output_relevance_logits(trace: &ForwardTrace) -> RelevanceVector {
    RelevanceVector {
        values: trace.pre_activation(trace.layer_count() - 1).to_vec(),
    }
}

/// One-hot output relevance for per-class propagation.
pub fn output_relevance_onehot(class_index: usize, n_classes: usize) -> Result<RelevanceVector> {
    if class_index >= n_classes {
        return Err(Error::IndexOutOfRange {
            index: class_index,
            len: n_classes,
        });
    }
    let mut values = vec![0.0; n_classes];
    values[class_index] = 1.0;
    Ok(RelevanceVector { values })
}
