//! Exact sum-product belief propagation over one temporal slice.
//!
//! Variable nodes are the slice's latent states. Each state contributes a
//! prior factor and each observation contributes its likelihood with the
//! observed value clamped, leaving a factor over the observation's parents.
//! Models are validated acyclic, so one leaf-to-root sweep followed by one
//! root-to-leaf sweep per connected component yields exact marginals.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TemporalSliceModel;
use crate::tensor::{normalize, Categorical, NamedTensor, VarName};

/// Observed value index for each observation variable.
pub type ObservationMap = BTreeMap<VarName, usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeId {
    Variable(usize),
    Factor(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    Prior { state: usize },
    Likelihood { observation: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub kind: FactorKind,
    pub label: String,
    /// Factor table over the neighbor variables (observation axis removed).
    pub table: NamedTensor,
    /// Neighbor variable indices, in the table's axis order.
    pub neighbors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    variables: Vec<VarName>,
    cardinalities: Vec<usize>,
    factors: Vec<Factor>,
    var_factors: Vec<Vec<usize>>,
}

impl FactorGraph {
    pub fn variables(&self) -> &[VarName] {
        &self.variables
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    /// Factors adjacent to variable `var`.
    pub fn factors_of(&self, var: usize) -> &[usize] {
        &self.var_factors[var]
    }

    pub fn neighbors(&self, node: NodeId) -> Vec<NodeId> {
        match node {
            NodeId::Variable(v) => self.var_factors[v].iter().map(|f| NodeId::Factor(*f)).collect(),
            NodeId::Factor(f) => self.factors[f].neighbors.iter().map(|v| NodeId::Variable(*v)).collect(),
        }
    }

    pub fn label(&self, node: NodeId) -> String {
        match node {
            NodeId::Variable(v) => self.variables[v].to_string(),
            NodeId::Factor(f) => self.factors[f].label.clone(),
        }
    }
}

/// Builds the slice's factor graph with observations clamped.
pub fn build_factor_graph(
    model: &TemporalSliceModel,
    priors: &[Categorical],
    observations: &ObservationMap,
) -> Result<FactorGraph> {
    let mut factors = Vec::with_capacity(model.states().len() + model.observations().len());
    let mut var_factors = vec![Vec::new(); model.states().len()];

    for (s, spec) in model.states().iter().enumerate() {
        let prior = priors
            .iter()
            .find(|p| p.var() == spec.name())
            .ok_or_else(|| Error::MissingPrior(spec.name().to_string()))?;
        if prior.cardinality() != spec.cardinality() {
            return Err(Error::DimensionMismatch {
                expected: spec.cardinality(),
                actual: prior.cardinality(),
            });
        }
        var_factors[s].push(factors.len());
        factors.push(Factor {
            kind: FactorKind::Prior { state: s },
            label: format!("P({})", spec.name()),
            table: NamedTensor::from_categorical(prior),
            neighbors: vec![s],
        });
    }

    for (o, spec) in model.observations().iter().enumerate() {
        let &value = observations
            .get(spec.name().as_str())
            .ok_or_else(|| Error::MissingObservation(spec.name().to_string()))?;
        if value >= spec.cardinality() {
            return Err(Error::IndexOutOfRange {
                var: spec.name().to_string(),
                index: value,
                cardinality: spec.cardinality(),
            });
        }
        let table = spec.likelihood().select(spec.name().as_str(), value)?;
        let parents: Vec<String> = spec.parents().iter().map(|p| p.to_string()).collect();
        for &s in &spec.parent_states {
            var_factors[s].push(factors.len());
        }
        factors.push(Factor {
            kind: FactorKind::Likelihood { observation: o },
            label: format!("P({}={}|{})", spec.name(), value, parents.join(",")),
            table,
            neighbors: spec.parent_states.clone(),
        });
    }

    Ok(FactorGraph {
        variables: model.states().iter().map(|s| s.name().clone()).collect(),
        cardinalities: model.states().iter().map(|s| s.cardinality()).collect(),
        factors,
        var_factors,
    })
}

/// A message between two adjacent nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub from: NodeId,
    pub to: NodeId,
    pub content: Vec<f64>,
}

/// Messages computed so far, keyed by `(from, to)`.
#[derive(Debug, Clone, Default)]
pub struct Inbox {
    messages: HashMap<(NodeId, NodeId), Vec<f64>>,
}

impl Inbox {
    pub fn insert(&mut self, from: NodeId, to: NodeId, content: Vec<f64>) {
        self.messages.insert((from, to), content);
    }

    pub fn get(&self, from: NodeId, to: NodeId) -> Option<&[f64]> {
        self.messages.get(&(from, to)).map(Vec::as_slice)
    }

    fn require(&self, graph: &FactorGraph, from: NodeId, to: NodeId) -> Result<&[f64]> {
        self.get(from, to).ok_or_else(|| Error::MissingInbound {
            from: graph.label(from),
            to: graph.label(to),
        })
    }
}

/// `m_{x->f}(x) = Π_{h ∈ n(x)\{f}} m_{h->x}(x)`; the empty product is all ones.
pub fn variable_to_factor(graph: &FactorGraph, var: usize, factor: usize, inbox: &Inbox) -> Result<Message> {
    let to = NodeId::Factor(factor);
    let from = NodeId::Variable(var);
    let mut content = vec![1.0; graph.cardinalities[var]];
    for &h in graph.factors_of(var).iter().filter(|h| **h != factor) {
        let m = inbox.require(graph, NodeId::Factor(h), from)?;
        for (c, v) in content.iter_mut().zip(m) {
            *c *= v;
        }
    }
    Ok(Message { from, to, content })
}

/// `m_{f->x}(x) = Σ_Y f(X) Π_{y ∈ Y} m_{y->f}(y)` where `Y = n(f)\{x}`.
pub fn factor_to_variable(graph: &FactorGraph, factor: usize, var: usize, inbox: &Inbox) -> Result<Message> {
    let from = NodeId::Factor(factor);
    let to = NodeId::Variable(var);
    let f = &graph.factors[factor];
    let mut weights = Vec::with_capacity(f.neighbors.len());
    for &y in f.neighbors.iter().filter(|y| **y != var) {
        let m = inbox.require(graph, NodeId::Variable(y), from)?;
        weights.push((graph.variables[y].as_str(), m));
    }
    let reduced = f.table.contract_with(&weights)?;
    Ok(Message {
        from,
        to,
        content: reduced.values().to_vec(),
    })
}

/// Serializable record of one message hop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub from: String,
    pub to: String,
    pub content: Vec<f64>,
}

/// Message-passing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// Leaf-to-root then root-to-leaf sweep per connected component.
    #[default]
    TwoPass,
    /// Synchronous updates of every directed edge, repeated until every
    /// message has seen the whole tree. Slower; kept as a cross-check.
    Flooding,
}

/// Result of an I-step: per-state posteriors and the message log.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub posteriors: Vec<Categorical>,
    pub messages: Vec<MessageRecord>,
}

struct Propagator<'g> {
    graph: &'g FactorGraph,
    inbox: Inbox,
    log: Vec<MessageRecord>,
}

impl<'g> Propagator<'g> {
    fn compute(&self, from: NodeId, to: NodeId, inbox: &Inbox) -> Result<Message> {
        match (from, to) {
            (NodeId::Variable(v), NodeId::Factor(f)) => variable_to_factor(self.graph, v, f, inbox),
            (NodeId::Factor(f), NodeId::Variable(v)) => factor_to_variable(self.graph, f, v, inbox),
            _ => unreachable!("factor graphs are bipartite"),
        }
    }

    fn send(&mut self, from: NodeId, to: NodeId) -> Result<()> {
        let m = self.compute(from, to, &self.inbox)?;
        self.store(m)
    }

    fn store(&mut self, m: Message) -> Result<()> {
        let content = normalize(&m.content)?;
        self.log.push(MessageRecord {
            from: self.graph.label(m.from),
            to: self.graph.label(m.to),
            content: content.clone(),
        });
        self.inbox.insert(m.from, m.to, content);
        Ok(())
    }

    fn two_pass(&mut self) -> Result<()> {
        let n = self.graph.variables.len();
        let mut visited_vars = vec![false; n];
        let mut visited_factors = vec![false; self.graph.factors.len()];
        for root in 0..n {
            if visited_vars[root] {
                continue;
            }
            // Depth-first traversal recording each node's parent.
            let mut order = Vec::new();
            let mut parent: HashMap<NodeId, NodeId> = HashMap::new();
            let mut stack = vec![NodeId::Variable(root)];
            visited_vars[root] = true;
            while let Some(node) = stack.pop() {
                order.push(node);
                for next in self.graph.neighbors(node) {
                    let seen = match next {
                        NodeId::Variable(v) => &mut visited_vars[v],
                        NodeId::Factor(f) => &mut visited_factors[f],
                    };
                    if !*seen {
                        *seen = true;
                        parent.insert(next, node);
                        stack.push(next);
                    }
                }
            }
            for node in order.iter().rev() {
                if let Some(&p) = parent.get(node) {
                    self.send(*node, p)?;
                }
            }
            for node in &order {
                for child in self.graph.neighbors(*node) {
                    if parent.get(&child) == Some(node) {
                        self.send(*node, child)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn flooding(&mut self) -> Result<()> {
        let edges: Vec<(NodeId, NodeId)> = (0..self.graph.factors.len())
            .flat_map(|f| {
                self.graph.factors[f].neighbors.iter().flat_map(move |&v| {
                    [
                        (NodeId::Factor(f), NodeId::Variable(v)),
                        (NodeId::Variable(v), NodeId::Factor(f)),
                    ]
                })
            })
            .collect();
        for &(from, to) in &edges {
            let card = match (from, to) {
                (NodeId::Variable(v), _) | (_, NodeId::Variable(v)) => self.graph.cardinalities[v],
                _ => unreachable!(),
            };
            self.inbox.insert(from, to, vec![1.0 / card as f64; card]);
        }
        // Any tree path has fewer nodes than the graph, so this many rounds
        // propagates evidence end to end.
        let rounds = self.graph.variables.len() + self.graph.factors.len();
        for _ in 0..rounds {
            let snapshot = self.inbox.clone();
            for &(from, to) in &edges {
                let m = self.compute(from, to, &snapshot)?;
                self.store(m)?;
            }
        }
        Ok(())
    }

    fn marginals(&self) -> Result<Vec<Categorical>> {
        (0..self.graph.variables.len())
            .map(|v| {
                let mut g = vec![1.0; self.graph.cardinalities[v]];
                for &f in self.graph.factors_of(v) {
                    let m = self.inbox.require(self.graph, NodeId::Factor(f), NodeId::Variable(v))?;
                    for (gi, mi) in g.iter_mut().zip(m) {
                        *gi *= mi;
                    }
                }
                Categorical::from_weights(self.graph.variables[v].clone(), &g)
            })
            .collect()
    }
}

/// Runs belief propagation on a prebuilt graph.
pub fn propagate(graph: &FactorGraph, schedule: Schedule) -> Result<Inference> {
    let mut p = Propagator {
        graph,
        inbox: Inbox::default(),
        log: Vec::new(),
    };
    match schedule {
        Schedule::TwoPass => p.two_pass()?,
        Schedule::Flooding => p.flooding()?,
    }
    Ok(Inference {
        posteriors: p.marginals()?,
        messages: p.log,
    })
}

/// Posterior `P(S^m | O)` for every state, in model state order.
pub fn i_step(
    model: &TemporalSliceModel,
    priors: &[Categorical],
    observations: &ObservationMap,
) -> Result<Vec<Categorical>> {
    Ok(i_step_logged(model, priors, observations)?.posteriors)
}

/// As [`i_step`], also returning the ordered message log.
pub fn i_step_logged(
    model: &TemporalSliceModel,
    priors: &[Categorical],
    observations: &ObservationMap,
) -> Result<Inference> {
    let graph = build_factor_graph(model, priors, observations)?;
    propagate(&graph, Schedule::TwoPass)
}
