//! Expected free energy of a predicted slice: risk over each declared
//! preference subset plus the ambiguity of every observation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ObsSpec, PreferenceSpec, TemporalSliceModel};
use crate::prediction::SliceBeliefs;
use crate::tensor::{entropy_raw, Axis, Categorical, NamedTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTerm {
    pub vars: Vec<String>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityTerm {
    pub var: String,
    pub value: f64,
}

/// `G = Σ risk + Σ ambiguity`, with the individual terms kept for display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfeBreakdown {
    pub total: f64,
    pub risk: Vec<RiskTerm>,
    pub ambiguity: Vec<AmbiguityTerm>,
}

impl EfeBreakdown {
    pub fn risk_total(&self) -> f64 {
        self.risk.iter().map(|r| r.value).sum()
    }

    pub fn ambiguity_total(&self) -> f64 {
        self.ambiguity.iter().map(|a| a.value).sum()
    }
}

fn check_vars(expected: &[crate::tensor::VarName], beliefs: &[&Categorical]) -> Result<()> {
    if expected.len() != beliefs.len() {
        return Err(Error::DimensionMismatch {
            expected: expected.len(),
            actual: beliefs.len(),
        });
    }
    if let Some(b) = beliefs.iter().find(|b| !expected.contains(b.var())) {
        return Err(Error::UnknownAxis(b.var().to_string()));
    }
    Ok(())
}

/// Product of the given marginals as a dense joint tensor.
pub fn mean_field_joint(beliefs: &[&Categorical]) -> NamedTensor {
    let mut values = vec![1.0];
    for b in beliefs {
        values = values
            .iter()
            .flat_map(|v| b.probs().iter().map(move |p| v * p))
            .collect();
    }
    let axes = beliefs
        .iter()
        .map(|b| Axis {
            name: b.var().clone(),
            cardinality: b.cardinality(),
        })
        .collect();
    NamedTensor::new(axes, values).expect("product of distributions is a valid tensor")
}

/// `KL[Π_o P(O^o) || C]` for one preference subset. `beliefs` must cover
/// exactly the subset's observations.
///
/// For a product distribution the KL splits into the negative entropies of
/// the factors minus the expected log-preference, so the joint never needs
/// to be materialized.
pub fn compute_risk(spec: &PreferenceSpec, beliefs: &[&Categorical]) -> Result<f64> {
    check_vars(spec.observations(), beliefs)?;
    let cross = spec.log_prefs().contract(beliefs)?.values()[0];
    let neg_entropy: f64 = beliefs.iter().map(|b| -entropy_raw(b.probs())).sum();
    Ok((neg_entropy - cross).max(0.0))
}

/// `E_{Π P(parents)}[H[P(O | parents)]]`. `parent_beliefs` must cover exactly
/// the observation's parents.
pub fn compute_ambiguity(spec: &ObsSpec, parent_beliefs: &[&Categorical]) -> Result<f64> {
    check_vars(spec.parents(), parent_beliefs)?;
    Ok(spec.row_entropy().contract(parent_beliefs)?.values()[0].max(0.0))
}

/// Expected free energy of a slice whose observation beliefs were predicted.
/// Observations outside every preference subset contribute no risk.
pub fn efe(model: &TemporalSliceModel, beliefs: &SliceBeliefs) -> Result<EfeBreakdown> {
    if beliefs.observations.len() != model.observations().len() {
        return Err(Error::DimensionMismatch {
            expected: model.observations().len(),
            actual: beliefs.observations.len(),
        });
    }
    let risk = model
        .preferences()
        .iter()
        .map(|spec| {
            let obs: Vec<&Categorical> = spec.obs_indices.iter().map(|i| &beliefs.observations[*i]).collect();
            Ok(RiskTerm {
                vars: spec.observations().iter().map(|v| v.to_string()).collect(),
                value: compute_risk(spec, &obs)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ambiguity = model
        .observations()
        .iter()
        .map(|spec| {
            let parents: Vec<&Categorical> = spec.parent_states.iter().map(|i| &beliefs.states[*i]).collect();
            Ok(AmbiguityTerm {
                var: spec.name().to_string(),
                value: compute_ambiguity(spec, &parents)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total = risk.iter().map(|r| r.value).sum::<f64>() + ambiguity.iter().map(|a| a.value).sum::<f64>();
    Ok(EfeBreakdown { total, risk, ambiguity })
}
