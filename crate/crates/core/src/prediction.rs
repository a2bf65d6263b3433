//! Forward prediction of a child slice under one action.
//!
//! Each state's transition is contracted against the product of its parents'
//! beliefs (mean-field), then each likelihood is contracted against the
//! predicted beliefs of its parents.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ParentSlot, TemporalSliceModel};
use crate::tensor::Categorical;

/// Beliefs held by one temporal slice, in model order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceBeliefs {
    pub states: Vec<Categorical>,
    /// Predicted observation posteriors; empty for the current slice.
    pub observations: Vec<Categorical>,
}

impl SliceBeliefs {
    pub fn from_states(states: Vec<Categorical>) -> Self {
        Self {
            states,
            observations: Vec::new(),
        }
    }

    pub fn state(&self, name: &str) -> Option<&Categorical> {
        self.states.iter().find(|c| c.var().as_str() == name)
    }

    pub fn observation(&self, name: &str) -> Option<&Categorical> {
        self.observations.iter().find(|c| c.var().as_str() == name)
    }
}

/// Predicted state beliefs after taking `action` from `parent`.
pub fn p_step_states(model: &TemporalSliceModel, parent: &[Categorical], action: usize) -> Result<Vec<Categorical>> {
    if action >= model.n_actions() {
        return Err(Error::ActionOutOfRange {
            action,
            n_actions: model.n_actions(),
        });
    }
    if parent.len() != model.states().len() {
        return Err(Error::DimensionMismatch {
            expected: model.states().len(),
            actual: parent.len(),
        });
    }
    model
        .states()
        .iter()
        .map(|spec| {
            // Fixing the action axis equals contracting it with a one-hot.
            let sliced;
            let mut table = spec.transition();
            if spec.parent_slots.contains(&ParentSlot::Action) {
                sliced = table.select(model.action_var().as_str(), action)?;
                table = &sliced;
            }
            let beliefs: Vec<&Categorical> = spec
                .parent_slots
                .iter()
                .filter_map(|slot| match slot {
                    ParentSlot::State(i) => Some(&parent[*i]),
                    ParentSlot::Action => None,
                })
                .collect();
            let out = table.contract(&beliefs)?;
            Categorical::from_weights(spec.name().clone(), out.values())
        })
        .collect()
}

/// Predicted observation beliefs given predicted state beliefs.
pub fn p_step_observations(model: &TemporalSliceModel, states: &[Categorical]) -> Result<Vec<Categorical>> {
    if states.len() != model.states().len() {
        return Err(Error::DimensionMismatch {
            expected: model.states().len(),
            actual: states.len(),
        });
    }
    model
        .observations()
        .iter()
        .map(|spec| {
            let beliefs: Vec<&Categorical> = spec.parent_states.iter().map(|i| &states[*i]).collect();
            let out = spec.likelihood().contract(&beliefs)?;
            Categorical::from_weights(spec.name().clone(), out.values())
        })
        .collect()
}

/// Both stages of the prediction step.
pub fn p_step(model: &TemporalSliceModel, parent: &SliceBeliefs, action: usize) -> Result<SliceBeliefs> {
    let states = p_step_states(model, &parent.states, action)?;
    let observations = p_step_observations(model, &states)?;
    Ok(SliceBeliefs { states, observations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TemporalSliceBuilder;
    use crate::tensor::{Table, VarName};

    fn v(n: &str) -> VarName {
        VarName::new(n).unwrap()
    }

    /// One 3-valued state moved right by one (clipped) under action 1.
    fn chain() -> TemporalSliceModel {
        let shift = Table::from_fn(vec![3, 3, 2], |i| {
            let next = if i[2] == 1 { (i[1] + 1).min(2) } else { i[1] };
            (i[0] == next) as u8 as f64
        });
        TemporalSliceBuilder::new("A_1", 2)
            .unwrap()
            .add_state("S_x", vec![1.0 / 3.0; 3])
            .unwrap()
            .add_observation("O_x", Table::eye(3), &["S_x"])
            .unwrap()
            .add_observation("O_flat", Table::from_fn(vec![2, 3], |_| 0.5), &["S_x"])
            .unwrap()
            .add_transition("S_x", shift, &["S_x", "A_1"])
            .unwrap()
            .build()
            .unwrap()
    }

    #[test]
    fn identity_dynamics_preserve_beliefs() {
        let model = chain();
        let b = Categorical::new(v("S_x"), vec![0.2, 0.3, 0.5]).unwrap();
        let out = p_step_states(&model, std::slice::from_ref(&b), 0).unwrap();
        assert_eq!(out[0], b);
    }

    #[test]
    fn delta_through_deterministic_shift() {
        let model = chain();
        let out = p_step_states(&model, &[Categorical::one_hot(v("S_x"), 3, 0)], 1).unwrap();
        assert_eq!(out[0].probs(), &[0.0, 1.0, 0.0]);
        let out = p_step_states(&model, &[Categorical::one_hot(v("S_x"), 3, 2)], 1).unwrap();
        assert_eq!(out[0].probs(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn action_out_of_range() {
        let model = chain();
        assert!(matches!(
            p_step_states(&model, &model.initial_priors(), 2),
            Err(Error::ActionOutOfRange {
                action: 2,
                n_actions: 2
            })
        ));
    }

    #[test]
    fn observation_predictions() {
        let model = chain();
        let s = Categorical::new(v("S_x"), vec![0.1, 0.6, 0.3]).unwrap();
        let out = p_step_observations(&model, std::slice::from_ref(&s)).unwrap();
        assert_eq!(out[0].probs(), s.probs());
        assert_eq!(out[1].probs(), &[0.5, 0.5]);
    }

    #[test]
    fn full_step_moves_observation_too() {
        let model = chain();
        let parent = SliceBeliefs::from_states(vec![Categorical::one_hot(v("S_x"), 3, 1)]);
        let child = p_step(&model, &parent, 1).unwrap();
        assert_eq!(child.state("S_x").unwrap().probs(), &[0.0, 0.0, 1.0]);
        assert_eq!(child.observation("O_x").unwrap().probs(), &[0.0, 0.0, 1.0]);
    }
}
