//! Random model generation and brute-force oracles shared by the
//! integration tests. The oracles only use `NamedTensor::get`, never the
//! library's contraction or message-passing code.
#![allow(dead_code)]

use btai::model::{TemporalSliceBuilder, TemporalSliceModel};
use btai::prediction::SliceBeliefs;
use btai::tensor::{Categorical, Table, VarName};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const ACTION: &str = "A_1";

#[derive(Debug, Clone, Copy)]
pub struct GenOptions {
    pub max_states: usize,
    pub max_observations: usize,
    pub max_card: usize,
    /// Every transition has exactly one state parent (plus the action).
    pub single_parent: bool,
    /// Every preference subset is a single observation.
    pub singleton_preferences: bool,
    pub n_actions: Option<usize>,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            max_states: 5,
            max_observations: 4,
            max_card: 4,
            single_parent: false,
            singleton_preferences: false,
            n_actions: None,
        }
    }
}

/// Cartesian product of `0..c` for each cardinality, last axis fastest.
pub fn configs(cards: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &c in cards {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..c).map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Bounded away from zero so no observation is impossible.
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Random table of shape `[head, rest...]`, normalized over the head axis.
pub fn conditional(rng: &mut ChaCha8Rng, head: usize, rest: &[usize]) -> Table {
    let cols: usize = rest.iter().product();
    let columns: Vec<Vec<f64>> = (0..cols).map(|_| weights(rng, head)).collect();
    let mut shape = vec![head];
    shape.extend_from_slice(rest);
    let data = (0..head * cols).map(|i| columns[i % cols][i / cols]).collect();
    Table::new(shape, data).unwrap()
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    r
}

pub fn random_model(rng: &mut ChaCha8Rng, opts: GenOptions) -> TemporalSliceModel {
    let n_states = rng.random_range(1..=opts.max_states);
    let n_obs = rng.random_range(1..=opts.max_observations);
    let n_actions = opts.n_actions.unwrap_or_else(|| rng.random_range(1..=3));
    let cards: Vec<usize> = (0..n_states).map(|_| rng.random_range(2..=opts.max_card)).collect();
    let names: Vec<String> = (0..n_states).map(|i| format!("S_{i}")).collect();

    let mut b = TemporalSliceBuilder::new(ACTION, n_actions).unwrap();
    for (n, c) in names.iter().zip(&cards) {
        b = b.add_state(n, weights(rng, *c)).unwrap();
    }

    // Likelihood parents keep the state/factor graph a forest.
    let mut uf: Vec<usize> = (0..n_states).collect();
    let mut obs_cards = Vec::new();
    for o in 0..n_obs {
        let k = rng.random_range(1..=n_states.min(3));
        let mut order: Vec<usize> = (0..n_states).collect();
        order.shuffle(rng);
        let mut parents = Vec::new();
        for s in order {
            if parents.len() == k {
                break;
            }
            let root = find(&mut uf, s);
            if parents.iter().all(|p| find(&mut uf, *p) != root) {
                parents.push(s);
            }
        }
        for w in parents.windows(2) {
            let (a, c) = (find(&mut uf, w[0]), find(&mut uf, w[1]));
            uf[a] = c;
        }
        let card = rng.random_range(2..=opts.max_card);
        obs_cards.push(card);
        let parent_cards: Vec<usize> = parents.iter().map(|p| cards[*p]).collect();
        let parent_names: Vec<&str> = parents.iter().map(|p| names[*p].as_str()).collect();
        b = b
            .add_observation(&format!("O_{o}"), conditional(rng, card, &parent_cards), &parent_names)
            .unwrap();
    }

    for s in 0..n_states {
        let mut parents: Vec<usize> = if opts.single_parent {
            vec![rng.random_range(0..n_states)]
        } else {
            let k = rng.random_range(1..=n_states.min(3));
            let mut order: Vec<usize> = (0..n_states).collect();
            order.shuffle(rng);
            order.truncate(k);
            order
        };
        parents.sort_unstable();
        let mut parent_names: Vec<&str> = parents.iter().map(|p| names[*p].as_str()).collect();
        let mut parent_cards: Vec<usize> = parents.iter().map(|p| cards[*p]).collect();
        if opts.single_parent || rng.random_bool(0.7) {
            let at = rng.random_range(0..=parent_names.len());
            parent_names.insert(at, ACTION);
            parent_cards.insert(at, n_actions);
        }
        b = b
            .add_transition(&names[s], conditional(rng, cards[s], &parent_cards), &parent_names)
            .unwrap();
    }

    let mut obs_order: Vec<usize> = (0..n_obs).filter(|_| rng.random_bool(0.75)).collect();
    obs_order.shuffle(rng);
    while !obs_order.is_empty() {
        let take = if opts.singleton_preferences {
            1
        } else {
            rng.random_range(1..=obs_order.len().min(3))
        };
        let subset: Vec<usize> = obs_order.drain(..take).collect();
        let subset_cards: Vec<usize> = subset.iter().map(|o| obs_cards[*o]).collect();
        let subset_names: Vec<String> = subset.iter().map(|o| format!("O_{o}")).collect();
        let refs: Vec<&str> = subset_names.iter().map(String::as_str).collect();
        let size: usize = subset_cards.iter().product();
        let table = Table::new(subset_cards, weights(rng, size)).unwrap();
        b = b.add_preference(&refs, table).unwrap();
    }
    b.build().unwrap()
}

/// Observation values sampled uniformly.
pub fn random_observations(rng: &mut ChaCha8Rng, model: &TemporalSliceModel) -> Vec<usize> {
    model
        .observations()
        .iter()
        .map(|o| rng.random_range(0..o.cardinality()))
        .collect()
}

pub fn observation_map(model: &TemporalSliceModel, values: &[usize]) -> btai::inference::ObservationMap {
    model
        .observations()
        .iter()
        .zip(values)
        .map(|(o, v)| (o.name().clone(), *v))
        .collect()
}

pub fn state_cards(model: &TemporalSliceModel) -> Vec<usize> {
    model.states().iter().map(|s| s.cardinality()).collect()
}

fn state_assignment<'a>(
    model: &'a TemporalSliceModel,
    config: &[usize],
    names: &'a [VarName],
) -> Vec<(&'a str, usize)> {
    // The action parent, if any, is not a state and is skipped.
    names
        .iter()
        .filter_map(|n| model.state_index(n.as_str()).map(|i| (n.as_str(), config[i])))
        .collect()
}

/// Unnormalized joint weight of a full state configuration given
/// observations: priors times clamped likelihoods.
pub fn joint_weight(model: &TemporalSliceModel, priors: &[Vec<f64>], obs: &[usize], config: &[usize]) -> f64 {
    let mut w: f64 = priors.iter().zip(config).map(|(p, v)| p[*v]).product();
    for (spec, &value) in model.observations().iter().zip(obs) {
        let mut assignment = state_assignment(model, config, spec.parents());
        assignment.push((spec.name().as_str(), value));
        w *= spec.likelihood().get(&assignment).unwrap();
    }
    w
}

/// Exact posterior joint over all state configurations (aligned with
/// `configs(state_cards(model))`).
pub fn brute_joint(model: &TemporalSliceModel, priors: &[Vec<f64>], obs: &[usize]) -> Vec<f64> {
    let all = configs(&state_cards(model));
    let w: Vec<f64> = all.iter().map(|c| joint_weight(model, priors, obs, c)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

pub fn marginals_of_joint(model: &TemporalSliceModel, joint: &[f64]) -> Vec<Vec<f64>> {
    let cards = state_cards(model);
    let mut out: Vec<Vec<f64>> = cards.iter().map(|c| vec![0.0; *c]).collect();
    for (config, p) in configs(&cards).iter().zip(joint) {
        for (s, v) in config.iter().enumerate() {
            out[s][*v] += p;
        }
    }
    out
}

pub fn brute_posteriors(model: &TemporalSliceModel, priors: &[Vec<f64>], obs: &[usize]) -> Vec<Vec<f64>> {
    marginals_of_joint(model, &brute_joint(model, priors, obs))
}

pub fn prior_vectors(model: &TemporalSliceModel) -> Vec<Vec<f64>> {
    model.states().iter().map(|s| s.prior().probs().to_vec()).collect()
}

/// Predicted next-state marginals when the current states follow `joint`
/// exactly (not mean-field).
pub fn exact_next_states(model: &TemporalSliceModel, joint: &[f64], action: usize) -> Vec<Vec<f64>> {
    let cards = state_cards(model);
    let mut out: Vec<Vec<f64>> = cards.iter().map(|c| vec![0.0; *c]).collect();
    for (config, p) in configs(&cards).iter().zip(joint) {
        for (s, spec) in model.states().iter().enumerate() {
            let succ = spec.name().successor();
            let mut assignment = state_assignment(model, config, spec.parents());
            if spec.transition().axis_index(ACTION).is_some() {
                assignment.push((ACTION, action));
            }
            for (v, slot) in out[s].iter_mut().enumerate() {
                let mut a = assignment.clone();
                a.push((succ.as_str(), v));
                *slot += p * spec.transition().get(&a).unwrap();
            }
        }
    }
    out
}

/// Product of marginals as a dense joint aligned with `configs(cards)`.
pub fn product_joint(marginals: &[Vec<f64>]) -> Vec<f64> {
    let cards: Vec<usize> = marginals.iter().map(Vec::len).collect();
    configs(&cards)
        .iter()
        .map(|c| c.iter().zip(marginals).map(|(v, m)| m[*v]).product())
        .collect()
}

/// Mean-field prediction by dense enumeration: states, then observations.
pub fn dense_p_step(model: &TemporalSliceModel, parent: &[Vec<f64>], action: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let states = exact_next_states(model, &product_joint(parent), action);
    let cards = state_cards(model);
    let next_joint = product_joint(&states);
    let mut obs: Vec<Vec<f64>> = model
        .observations()
        .iter()
        .map(|o| vec![0.0; o.cardinality()])
        .collect();
    for (config, p) in configs(&cards).iter().zip(&next_joint) {
        for (o, spec) in model.observations().iter().enumerate() {
            let assignment = state_assignment(model, config, spec.parents());
            for (v, slot) in obs[o].iter_mut().enumerate() {
                let mut a = assignment.clone();
                a.push((spec.name().as_str(), v));
                *slot += p * spec.likelihood().get(&a).unwrap();
            }
        }
    }
    (states, obs)
}

fn ln(x: f64) -> f64 {
    x.max(1e-32).ln()
}

/// KL between the materialized product of `marginals` and a preference
/// table over the same observations.
pub fn dense_risk(model: &TemporalSliceModel, subset: usize, beliefs: &SliceBeliefs) -> f64 {
    let spec = &model.preferences()[subset];
    let marginals: Vec<Vec<f64>> = spec
        .observations()
        .iter()
        .map(|o| beliefs.observation(o.as_str()).unwrap().probs().to_vec())
        .collect();
    let cards: Vec<usize> = marginals.iter().map(Vec::len).collect();
    configs(&cards)
        .iter()
        .zip(product_joint(&marginals))
        .filter(|(_, p)| *p > 0.0)
        .map(|(c, p)| {
            let assignment: Vec<(&str, usize)> = spec
                .observations()
                .iter()
                .zip(c)
                .map(|(n, v)| (n.as_str(), *v))
                .collect();
            p * (ln(p) - ln(spec.prefs().get(&assignment).unwrap()))
        })
        .sum()
}

/// `Σ_config Π b(parent) · H[P(O | config)]` by enumeration.
pub fn dense_ambiguity(model: &TemporalSliceModel, o: usize, states: &[Categorical]) -> f64 {
    let spec = &model.observations()[o];
    let parent_beliefs: Vec<&Categorical> = spec
        .parents()
        .iter()
        .map(|p| states.iter().find(|c| c.var() == p).unwrap())
        .collect();
    let cards: Vec<usize> = parent_beliefs.iter().map(|b| b.cardinality()).collect();
    configs(&cards)
        .iter()
        .map(|c| {
            let weight: f64 = c.iter().zip(&parent_beliefs).map(|(v, b)| b.probs()[*v]).product();
            let mut h = 0.0;
            for v in 0..spec.cardinality() {
                let mut a: Vec<(&str, usize)> = spec.parents().iter().zip(c).map(|(n, x)| (n.as_str(), *x)).collect();
                a.push((spec.name().as_str(), v));
                let p = spec.likelihood().get(&a).unwrap();
                h -= p * ln(p);
            }
            weight * h
        })
        .sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Rebuilds every node's `(cost_aggr, visits)` from the iteration log alone:
/// own EFE plus the minimum child EFE of each iteration that expanded a node
/// in its subtree (identified by multi-index prefix).
pub fn replay_tree(tree: &btai::planner::Tree) -> Vec<(f64, u64)> {
    tree.nodes()
        .map(|(_, node)| {
            let own = node.efe.as_ref().map_or(0.0, |e| e.total);
            let mut cost = own;
            let mut visits = 1;
            for r in tree.log() {
                let selected = &tree.node(r.selected).multi_index;
                if selected.starts_with(&node.multi_index) {
                    cost += r.child_efe.iter().copied().fold(f64::INFINITY, f64::min);
                    visits += 1;
                }
            }
            (cost, visits)
        })
        .collect()
}
