//! Temporal-slice model: a declarative builder and the validated, immutable
//! model it produces.
//!
//! A slice holds latent states (each with a prior and a transition mapping
//! conditioned on states of the previous slice and, optionally, the action),
//! observations (each with a likelihood conditioned on states of the same
//! slice) and prior preferences over disjoint subsets of observations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError};
use crate::tensor::{entropy_raw, Categorical, NamedTensor, Table, VarKind, VarName, LOG_FLOOR};

/// Slack allowed when checking that CPT slices and preferences sum to one.
pub const CPT_TOLERANCE: f64 = 1e-6;

/// Where a transition parent's value comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ParentSlot {
    State(usize),
    Action,
}

/// A latent state: prior `D`, transition `B` and its parents.
///
/// The transition tensor's first axis is the state at the next step, named
/// with [`VarName::successor`]; the remaining axes are the parents in order.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpec {
    name: VarName,
    prior: Categorical,
    transition: NamedTensor,
    parents: Vec<VarName>,
    pub(crate) parent_slots: Vec<ParentSlot>,
}

impl StateSpec {
    pub fn name(&self) -> &VarName {
        &self.name
    }

    pub fn prior(&self) -> &Categorical {
        &self.prior
    }

    pub fn transition(&self) -> &NamedTensor {
        &self.transition
    }

    pub fn parents(&self) -> &[VarName] {
        &self.parents
    }

    pub fn cardinality(&self) -> usize {
        self.prior.cardinality()
    }
}

/// An observed variable: likelihood `A` over `[observation, parents...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsSpec {
    name: VarName,
    likelihood: NamedTensor,
    parents: Vec<VarName>,
    pub(crate) parent_states: Vec<usize>,
    /// Entropy of each likelihood row, indexed by parent configuration.
    pub(crate) row_entropy: NamedTensor,
}

impl ObsSpec {
    pub fn name(&self) -> &VarName {
        &self.name
    }

    pub fn likelihood(&self) -> &NamedTensor {
        &self.likelihood
    }

    pub fn parents(&self) -> &[VarName] {
        &self.parents
    }

    pub fn cardinality(&self) -> usize {
        self.likelihood.axes()[0].cardinality
    }

    pub fn row_entropy(&self) -> &NamedTensor {
        &self.row_entropy
    }
}

/// Joint prior preferences `C` over one subset of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceSpec {
    observations: Vec<VarName>,
    pub(crate) obs_indices: Vec<usize>,
    prefs: NamedTensor,
    pub(crate) log_prefs: NamedTensor,
}

impl PreferenceSpec {
    pub fn observations(&self) -> &[VarName] {
        &self.observations
    }

    pub fn prefs(&self) -> &NamedTensor {
        &self.prefs
    }

    /// `ln max(C, LOG_FLOOR)`, precomputed once.
    pub fn log_prefs(&self) -> &NamedTensor {
        &self.log_prefs
    }
}

/// Validated, immutable temporal-slice model.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalSliceModel {
    action_var: VarName,
    n_actions: usize,
    states: Vec<StateSpec>,
    observations: Vec<ObsSpec>,
    preferences: Vec<PreferenceSpec>,
}

impl TemporalSliceModel {
    pub fn action_var(&self) -> &VarName {
        &self.action_var
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn states(&self) -> &[StateSpec] {
        &self.states
    }

    pub fn observations(&self) -> &[ObsSpec] {
        &self.observations
    }

    pub fn preferences(&self) -> &[PreferenceSpec] {
        &self.preferences
    }

    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s.name.as_str() == name)
    }

    pub fn observation_index(&self, name: &str) -> Option<usize> {
        self.observations.iter().position(|o| o.name.as_str() == name)
    }

    /// Observations not covered by any declared preference subset. Their
    /// risk contribution is identically zero.
    pub fn default_preference_observations(&self) -> Vec<&VarName> {
        self.observations
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.preferences.iter().any(|p| p.obs_indices.contains(i)))
            .map(|(_, o)| &o.name)
            .collect()
    }

    /// The priors `D` declared at build time, in state order.
    pub fn initial_priors(&self) -> Vec<Categorical> {
        self.states.iter().map(|s| s.prior.clone()).collect()
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            action_var: self.action_var.to_string(),
            n_actions: self.n_actions,
            states: self
                .states
                .iter()
                .map(|s| StateDocument {
                    name: s.name.to_string(),
                    prior: s.prior.probs().to_vec(),
                    parents: s.parents.iter().map(|p| p.to_string()).collect(),
                    transition: s.transition.clone(),
                })
                .collect(),
            observations: self
                .observations
                .iter()
                .map(|o| ObservationDocument {
                    name: o.name.to_string(),
                    parents: o.parents.iter().map(|p| p.to_string()).collect(),
                    likelihood: o.likelihood.clone(),
                })
                .collect(),
            preferences: self
                .preferences
                .iter()
                .map(|p| PreferenceDocument {
                    observations: p.observations.iter().map(|o| o.to_string()).collect(),
                    prefs: p.prefs.clone(),
                })
                .collect(),
        }
    }

    /// Rebuilds (and revalidates) a model from its document form.
    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let table = |t: &NamedTensor| Table::new(t.shape(), t.values().to_vec());
        let mut b = TemporalSliceBuilder::new(&doc.action_var, doc.n_actions)?;
        for s in &doc.states {
            b = b.add_state(&s.name, s.prior.clone())?;
        }
        for o in &doc.observations {
            b = b.add_observation(&o.name, table(&o.likelihood)?, &strs(&o.parents))?;
        }
        for s in &doc.states {
            b = b.add_transition(&s.name, table(&s.transition)?, &strs(&s.parents))?;
        }
        for p in &doc.preferences {
            b = b.add_preference(&strs(&p.observations), table(&p.prefs)?)?;
        }
        b.build()
    }
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

/// JSON form of a model: axes, cardinalities and flattened row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub action_var: String,
    pub n_actions: usize,
    pub states: Vec<StateDocument>,
    pub observations: Vec<ObservationDocument>,
    pub preferences: Vec<PreferenceDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDocument {
    pub name: String,
    pub prior: Vec<f64>,
    pub parents: Vec<String>,
    pub transition: NamedTensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationDocument {
    pub name: String,
    pub parents: Vec<String>,
    pub likelihood: NamedTensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDocument {
    pub observations: Vec<String>,
    pub prefs: NamedTensor,
}

impl From<Vec<f64>> for Table {
    fn from(v: Vec<f64>) -> Self {
        Table::vector(v)
    }
}

/// Incrementally declares a temporal slice. Each `add_*` call checks names
/// and shapes immediately; normalization and structural rules are checked by
/// [`build`](Self::build).
///
/// ```
/// use btai::model::TemporalSliceBuilder;
/// use btai::tensor::Table;
///
/// let model = TemporalSliceBuilder::new("A_1", 2)?
///     .add_state("S_shape", vec![0.2, 0.3, 0.5])?
///     .add_observation("O_shape", Table::eye(3), &["S_shape"])?
///     .add_transition("S_shape", Table::eye(3), &["S_shape"])?
///     .build()?;
/// assert_eq!(model.states()[0].cardinality(), 3);
/// # Ok::<(), btai::Error>(())
/// ```
#[derive(Debug, Clone)]
pub struct TemporalSliceBuilder {
    action_var: VarName,
    n_actions: usize,
    states: Vec<Categorical>,
    transitions: Vec<Option<(NamedTensor, Vec<VarName>)>>,
    observations: Vec<(NamedTensor, Vec<VarName>)>,
    preferences: Vec<(Vec<VarName>, NamedTensor)>,
}

impl TemporalSliceBuilder {
    pub fn new(action_var: &str, n_actions: usize) -> Result<Self> {
        let action_var = VarName::new(action_var)?;
        if action_var.kind() != VarKind::Action {
            return Err(Error::BadPrefix(action_var.to_string()));
        }
        Ok(Self {
            action_var,
            n_actions,
            states: Vec::new(),
            transitions: Vec::new(),
            observations: Vec::new(),
            preferences: Vec::new(),
        })
    }

    fn named(name: &str, kind: VarKind) -> Result<VarName> {
        let var = VarName::new(name)?;
        if var.kind() != kind {
            return Err(Error::BadPrefix(name.to_string()));
        }
        Ok(var)
    }

    fn state_position(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|s| s.var().as_str() == name)
    }

    fn observation_position(&self, name: &str) -> Option<usize> {
        self.observations
            .iter()
            .position(|(t, _)| t.axes()[0].name.as_str() == name)
    }

    fn is_declared(&self, name: &str) -> bool {
        self.state_position(name).is_some()
            || self.observation_position(name).is_some()
            || self.action_var.as_str() == name
    }

    pub fn add_state(mut self, name: &str, prior: impl Into<Table>) -> Result<Self> {
        let var = Self::named(name, VarKind::State)?;
        if self.is_declared(name) {
            return Err(Error::DuplicateName(name.to_string()));
        }
        let prior: Table = prior.into();
        if prior.shape().len() != 1 {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected: vec![prior.data().len()],
                actual: prior.shape().to_vec(),
            });
        }
        self.states.push(Categorical::new(var, prior.data().to_vec())?);
        self.transitions.push(None);
        Ok(self)
    }

    fn shape_check(name: &str, expected: Vec<usize>, table: &Table) -> Result<()> {
        if table.shape() != expected.as_slice() {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected,
                actual: table.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add_observation(mut self, name: &str, likelihood: Table, parents: &[&str]) -> Result<Self> {
        let var = Self::named(name, VarKind::Observation)?;
        if self.is_declared(name) {
            return Err(Error::DuplicateName(name.to_string()));
        }
        let mut parent_vars = Vec::with_capacity(parents.len());
        let mut expected = vec![likelihood.shape().first().copied().unwrap_or(0).max(1)];
        for p in parents {
            let idx = self
                .state_position(p)
                .ok_or_else(|| Error::UnknownParent(p.to_string()))?;
            if parent_vars.iter().any(|v: &VarName| v.as_str() == *p) {
                return Err(Error::DuplicateName(p.to_string()));
            }
            parent_vars.push(self.states[idx].var().clone());
            expected.push(self.states[idx].cardinality());
        }
        Self::shape_check(name, expected, &likelihood)?;
        let mut names = vec![var];
        names.extend(parent_vars.iter().cloned());
        let tensor = NamedTensor::from_table(names, likelihood)?;
        self.observations.push((tensor, parent_vars));
        Ok(self)
    }

    pub fn add_transition(mut self, name: &str, transition: Table, parents: &[&str]) -> Result<Self> {
        let idx = self
            .state_position(name)
            .ok_or_else(|| Error::UnknownState(name.to_string()))?;
        if self.transitions[idx].is_some() {
            return Err(Error::DuplicateName(format!("transition of {name}")));
        }
        let var = self.states[idx].var().clone();
        let mut parent_vars = Vec::with_capacity(parents.len());
        let mut expected = vec![self.states[idx].cardinality()];
        for p in parents {
            let card = if *p == self.action_var.as_str() {
                self.n_actions
            } else {
                let pi = self
                    .state_position(p)
                    .ok_or_else(|| Error::UnknownParent(p.to_string()))?;
                self.states[pi].cardinality()
            };
            if parent_vars.iter().any(|v: &VarName| v.as_str() == *p) {
                return Err(Error::DuplicateName(p.to_string()));
            }
            parent_vars.push(VarName::new(p)?);
            expected.push(card);
        }
        Self::shape_check(name, expected, &transition)?;
        let mut names = vec![var.successor()];
        names.extend(parent_vars.iter().cloned());
        let tensor = NamedTensor::from_table(names, transition)?;
        self.transitions[idx] = Some((tensor, parent_vars));
        Ok(self)
    }

    pub fn add_preference(mut self, observations: &[&str], prefs: Table) -> Result<Self> {
        let mut vars: Vec<VarName> = Vec::with_capacity(observations.len());
        let mut expected = Vec::with_capacity(observations.len());
        for o in observations {
            let idx = self
                .observation_position(o)
                .ok_or_else(|| Error::UnknownObservation(o.to_string()))?;
            let taken = vars.iter().any(|v| v.as_str() == *o)
                || self
                    .preferences
                    .iter()
                    .any(|(vs, _)| vs.iter().any(|v| v.as_str() == *o));
            if taken {
                return Err(Error::OverlappingSubsets(o.to_string()));
            }
            let axis = &self.observations[idx].0.axes()[0];
            vars.push(axis.name.clone());
            expected.push(axis.cardinality);
        }
        if vars.is_empty() {
            return Err(Error::ShapeMismatch {
                name: "preference".into(),
                expected: vec![],
                actual: prefs.shape().to_vec(),
            });
        }
        Self::shape_check(&format!("preference over {observations:?}"), expected, &prefs)?;
        let tensor = NamedTensor::from_table(vars.clone(), prefs)?;
        self.preferences.push((vars, tensor));
        Ok(self)
    }

    /// Validates every rule and freezes the model.
    pub fn build(self) -> Result<TemporalSliceModel> {
        let invalid = |e| Error::Validation(e);
        if self.n_actions == 0 {
            return Err(invalid(ValidationError::NoActions));
        }

        let mut states = Vec::with_capacity(self.states.len());
        for (prior, transition) in self.states.iter().zip(&self.transitions) {
            let (tensor, parents) = transition
                .clone()
                .ok_or_else(|| invalid(ValidationError::MissingTransition(prior.var().to_string())))?;
            if parents.is_empty() {
                return Err(invalid(ValidationError::NoParents(prior.var().to_string())));
            }
            check_cpt(prior.var(), &tensor)?;
            let parent_slots = parents
                .iter()
                .map(|p| match self.state_position(p.as_str()) {
                    Some(i) => ParentSlot::State(i),
                    None => ParentSlot::Action,
                })
                .collect();
            states.push(StateSpec {
                name: prior.var().clone(),
                prior: prior.clone(),
                transition: tensor,
                parents,
                parent_slots,
            });
        }

        let mut observations = Vec::with_capacity(self.observations.len());
        for (tensor, parents) in &self.observations {
            let name = tensor.axes()[0].name.clone();
            if parents.is_empty() {
                return Err(invalid(ValidationError::NoParents(name.to_string())));
            }
            check_cpt(&name, tensor)?;
            let parent_states = parents
                .iter()
                .map(|p| self.state_position(p.as_str()).expect("checked on insert"))
                .collect();
            observations.push(ObsSpec {
                row_entropy: row_entropy(tensor),
                name,
                likelihood: tensor.clone(),
                parents: parents.clone(),
                parent_states,
            });
        }

        let mut preferences = Vec::with_capacity(self.preferences.len());
        for (vars, prefs) in &self.preferences {
            let sum = prefs.sum();
            if (sum - 1.0).abs() > CPT_TOLERANCE {
                return Err(invalid(ValidationError::UnnormalizedPreference {
                    name: format!("{vars:?}"),
                    sum,
                }));
            }
            preferences.push(PreferenceSpec {
                obs_indices: vars
                    .iter()
                    .map(|v| self.observation_position(v.as_str()).expect("checked on insert"))
                    .collect(),
                observations: vars.clone(),
                log_prefs: prefs.map(|c| c.max(LOG_FLOOR).ln()),
                prefs: prefs.clone(),
            });
        }

        if has_cycle(states.len(), observations.iter().map(|o| o.parent_states.as_slice())) {
            return Err(invalid(ValidationError::CyclicFactorGraph));
        }

        Ok(TemporalSliceModel {
            action_var: self.action_var,
            n_actions: self.n_actions,
            states,
            observations,
            preferences,
        })
    }
}

/// Every slice obtained by fixing all parent axes (axes 1..) must sum to one.
fn check_cpt(name: &VarName, tensor: &NamedTensor) -> Result<()> {
    let child = tensor.axes()[0].cardinality;
    let slices = tensor.len() / child;
    let values = tensor.values();
    for j in 0..slices {
        let sum: f64 = (0..child).map(|c| values[c * slices + j]).sum();
        if (sum - 1.0).abs() > CPT_TOLERANCE {
            return Err(Error::Validation(ValidationError::UnnormalizedCpt {
                name: name.to_string(),
                slice: j,
                sum,
            }));
        }
    }
    Ok(())
}

fn row_entropy(likelihood: &NamedTensor) -> NamedTensor {
    let child = likelihood.axes()[0].cardinality;
    let slices = likelihood.len() / child;
    let values = likelihood.values();
    let mut column = vec![0.0; child];
    let entropies = (0..slices)
        .map(|j| {
            for (c, slot) in column.iter_mut().enumerate() {
                *slot = values[c * slices + j];
            }
            entropy_raw(&column)
        })
        .collect();
    NamedTensor::new(likelihood.axes()[1..].to_vec(), entropies).expect("entropies are finite and nonnegative")
}

/// Union-find over the bipartite state/likelihood-factor graph. Prior factors
/// are leaves and can never close a cycle, so only likelihood factors are
/// considered.
fn has_cycle<'a>(n_states: usize, factors: impl Iterator<Item = &'a [usize]>) -> bool {
    let factors: Vec<&[usize]> = factors.collect();
    let mut parent: Vec<usize> = (0..n_states + factors.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (f, states) in factors.iter().enumerate() {
        let node = n_states + f;
        for &s in *states {
            let (a, b) = (find(&mut parent, node), find(&mut parent, s));
            if a == b {
                return true;
            }
            parent[a] = b;
        }
    }
    false
}
