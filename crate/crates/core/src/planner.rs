//! Monte-Carlo tree search over future temporal slices.
//!
//! Each iteration descends from the root by maximal UCT, expands every
//! action at the selected leaf with the prediction step, scores the new
//! children by expected free energy and adds the cheapest child's cost to
//! the leaf and all of its ancestors. There are no rollouts and no
//! randomness: identical inputs give identical trees.

use serde::{Deserialize, Serialize};

use crate::efe::{efe, EfeBreakdown};
use crate::error::{Error, Result};
use crate::model::TemporalSliceModel;
use crate::prediction::{p_step, SliceBeliefs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    /// Actions leading from the root to this node.
    pub multi_index: Vec<usize>,
    pub beliefs: SliceBeliefs,
    pub action: Option<usize>,
    pub parent: Option<NodeId>,
    /// Empty, or exactly one child per action (indexed by action).
    pub children: Vec<NodeId>,
    pub cost_aggr: f64,
    pub visits: u64,
    /// Own expected free energy; `None` for the root.
    pub efe: Option<EfeBreakdown>,
}

impl TreeNode {
    pub fn mean_cost(&self) -> f64 {
        self.cost_aggr / self.visits as f64
    }

    pub fn is_expanded(&self) -> bool {
        !self.children.is_empty()
    }
}

/// Renders a multi-index as a node label, e.g. `(1,3)`; the root is `()`.
pub fn node_label(multi_index: &[usize]) -> String {
    let parts: Vec<String> = multi_index.iter().map(|a| a.to_string()).collect();
    format!("({})", parts.join(","))
}

/// Parses a label produced by [`node_label`].
pub fn parse_node_label(label: &str) -> Option<Vec<usize>> {
    let inner = label.trim().strip_prefix('(')?.strip_suffix(')')?;
    if inner.trim().is_empty() {
        return Some(Vec::new());
    }
    inner.split(',').map(|p| p.trim().parse().ok()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub exploration_constant: f64,
    pub planning_iterations: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            exploration_constant: 2.4,
            planning_iterations: 150,
        }
    }
}

/// What one planning iteration did.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub selected: NodeId,
    pub child_efe: Vec<f64>,
    pub min: f64,
}

/// Arena-allocated search tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<TreeNode>,
    log: Vec<IterationRecord>,
}

impl Tree {
    /// A fresh root: no action, zero cost, one visit.
    pub fn new(root_beliefs: SliceBeliefs) -> Self {
        Self {
            nodes: vec![TreeNode {
                multi_index: Vec::new(),
                beliefs: root_beliefs,
                action: None,
                parent: None,
                children: Vec::new(),
                cost_aggr: 0.0,
                visits: 1,
                efe: None,
            }],
            log: Vec::new(),
        }
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id.0]
    }

    pub fn get(&self, id: NodeId) -> Option<&TreeNode> {
        self.nodes.get(id.0)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &TreeNode)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn log(&self) -> &[IterationRecord] {
        &self.log
    }

    pub fn expansions(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_expanded()).count()
    }

    /// Follows `multi_index` from the root.
    pub fn find(&self, multi_index: &[usize]) -> Option<NodeId> {
        let mut id = self.root();
        for &a in multi_index {
            id = *self.node(id).children.get(a)?;
        }
        Some(id)
    }

    /// `id` and all of its ancestors, leaf first.
    pub fn path_to_root(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.node(cur).parent {
            path.push(p);
            cur = p;
        }
        path
    }

    pub fn node_snapshot(&self, id: NodeId) -> NodeSnapshot {
        let n = self.node(id);
        NodeSnapshot {
            id: node_label(&n.multi_index),
            multi_index: n.multi_index.clone(),
            action: n.action,
            visits: n.visits,
            cost_aggr: n.cost_aggr,
            mean_cost: n.mean_cost(),
            efe_breakdown: n.efe.clone(),
            children: n
                .children
                .iter()
                .map(|c| node_label(&self.node(*c).multi_index))
                .collect(),
        }
    }

    pub fn snapshot(&self) -> TreeSnapshot {
        let label = |id: NodeId| node_label(&self.node(id).multi_index);
        TreeSnapshot {
            nodes: (0..self.nodes.len()).map(|i| self.node_snapshot(NodeId(i))).collect(),
            iterations: self
                .log
                .iter()
                .map(|r| IterationSnapshot {
                    selected: label(r.selected),
                    child_efe: r.child_efe.clone(),
                    min: r.min,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub id: String,
    pub multi_index: Vec<usize>,
    pub action: Option<usize>,
    pub visits: u64,
    pub cost_aggr: f64,
    pub mean_cost: f64,
    pub efe_breakdown: Option<EfeBreakdown>,
    pub children: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSnapshot {
    pub selected: String,
    pub child_efe: Vec<f64>,
    pub min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub nodes: Vec<NodeSnapshot>,
    pub iterations: Vec<IterationSnapshot>,
}

/// `-Ḡ_j + c · sqrt(ln n / n_j)`.
pub fn uct_value(child: &TreeNode, parent_visits: u64, exploration_constant: f64) -> f64 {
    let bonus = ((parent_visits as f64).ln() / child.visits as f64).sqrt();
    -child.mean_cost() + exploration_constant * bonus
}

/// Descends by maximal UCT (lowest action on ties) until a leaf.
pub fn select_node(tree: &Tree, exploration_constant: f64) -> NodeId {
    let mut current = tree.root();
    loop {
        let node = tree.node(current);
        let Some((&first, rest)) = node.children.split_first() else {
            return current;
        };
        let score = |c: NodeId| uct_value(tree.node(c), node.visits, exploration_constant);
        let mut best = (first, score(first));
        for &c in rest {
            let s = score(c);
            if s > best.1 {
                best = (c, s);
            }
        }
        current = best.0;
    }
}

/// Creates one child per action, each holding its predicted beliefs and
/// expected free energy, with `visits = 1` and `cost_aggr` = own EFE.
pub fn expand_children(tree: &mut Tree, node: NodeId, model: &TemporalSliceModel) -> Result<Vec<NodeId>> {
    if tree.node(node).is_expanded() {
        return Err(Error::AlreadyExpanded);
    }
    let mut children = Vec::with_capacity(model.n_actions());
    for action in 0..model.n_actions() {
        let parent = tree.node(node);
        let beliefs = p_step(model, &parent.beliefs, action)?;
        let breakdown = efe(model, &beliefs)?;
        let mut multi_index = parent.multi_index.clone();
        multi_index.push(action);
        let id = NodeId(tree.nodes.len());
        tree.nodes.push(TreeNode {
            multi_index,
            beliefs,
            action: Some(action),
            parent: Some(node),
            children: Vec::new(),
            cost_aggr: breakdown.total,
            visits: 1,
            efe: Some(breakdown),
        });
        children.push(id);
    }
    tree.nodes[node.0].children = children.clone();
    Ok(children)
}

/// Adds `min_a G_{I::a}` to the cost of `expanded` and every ancestor and
/// increments their visit counts. Returns the minimum.
pub fn backpropagate(tree: &mut Tree, expanded: NodeId, children: &[NodeId]) -> f64 {
    let min = children
        .iter()
        .map(|c| tree.node(*c).efe.as_ref().map_or(f64::INFINITY, |e| e.total))
        .fold(f64::INFINITY, f64::min);
    for id in tree.path_to_root(expanded) {
        let n = &mut tree.nodes[id.0];
        n.cost_aggr += min;
        n.visits += 1;
    }
    min
}

/// Root child with the most visits (lowest action on ties).
pub fn select_action(tree: &Tree) -> Result<usize> {
    let root = tree.node(tree.root());
    if !root.is_expanded() {
        return Err(Error::NotExpanded);
    }
    let mut best = 0;
    for (a, c) in root.children.iter().enumerate() {
        if tree.node(*c).visits > tree.node(root.children[best]).visits {
            best = a;
        }
    }
    Ok(best)
}

/// One select / expand / evaluate / backpropagate round.
pub fn iterate(tree: &mut Tree, model: &TemporalSliceModel, exploration_constant: f64) -> Result<IterationRecord> {
    let selected = select_node(tree, exploration_constant);
    let children = expand_children(tree, selected, model)?;
    let child_efe = children
        .iter()
        .map(|c| tree.node(*c).efe.as_ref().map_or(0.0, |e| e.total))
        .collect();
    let min = backpropagate(tree, selected, &children);
    let record = IterationRecord {
        selected,
        child_efe,
        min,
    };
    tree.log.push(record.clone());
    Ok(record)
}

/// Runs the configured number of iterations and picks an action.
pub fn plan(tree: &mut Tree, model: &TemporalSliceModel, config: &PlannerConfig) -> Result<usize> {
    for _ in 0..config.planning_iterations {
        iterate(tree, model, config.exploration_constant)?;
    }
    select_action(tree)
}
