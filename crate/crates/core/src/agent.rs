//! The action-perception cycle: infer the present, plan, act, then carry the
//! chosen child's predicted beliefs forward as the next prior.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::inference::{i_step_logged, MessageRecord, ObservationMap};
use crate::model::TemporalSliceModel;
use crate::planner::{iterate, select_action, IterationRecord, PlannerConfig, Tree};
use crate::prediction::SliceBeliefs;
use crate::tensor::Categorical;

/// Notifications emitted by [`Agent`] at each hook point.
#[derive(Debug, Clone, Copy)]
pub enum AgentEvent<'a> {
    Reset {
        posteriors: &'a [Categorical],
    },
    Iteration {
        record: &'a IterationRecord,
    },
    Step {
        action: usize,
    },
    Update {
        action: usize,
        posteriors: &'a [Categorical],
    },
}

pub type Hook = Box<dyn FnMut(&AgentEvent<'_>) + Send>;

pub struct Agent {
    model: Arc<TemporalSliceModel>,
    config: PlannerConfig,
    priors: Vec<Categorical>,
    posteriors: Vec<Categorical>,
    messages: Vec<MessageRecord>,
    tree: Option<Tree>,
    hook: Option<Hook>,
}

impl fmt::Debug for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Agent")
            .field("config", &self.config)
            .field("priors", &self.priors)
            .field("posteriors", &self.posteriors)
            .field("tree_nodes", &self.tree.as_ref().map(Tree::len))
            .finish_non_exhaustive()
    }
}

impl Agent {
    pub fn new(model: impl Into<Arc<TemporalSliceModel>>, config: PlannerConfig) -> Self {
        Self {
            model: model.into(),
            config,
            priors: Vec::new(),
            posteriors: Vec::new(),
            messages: Vec::new(),
            tree: None,
            hook: None,
        }
    }

    pub fn set_hook(&mut self, hook: Hook) {
        self.hook = Some(hook);
    }

    fn emit(&mut self, event: AgentEvent<'_>) {
        if let Some(h) = self.hook.as_mut() {
            h(&event);
        }
    }

    pub fn model(&self) -> &TemporalSliceModel {
        &self.model
    }

    pub fn shared_model(&self) -> Arc<TemporalSliceModel> {
        Arc::clone(&self.model)
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    /// Prior used by the most recent I-step.
    pub fn priors(&self) -> &[Categorical] {
        &self.priors
    }

    pub fn posteriors(&self) -> &[Categorical] {
        &self.posteriors
    }

    /// Message log of the most recent I-step.
    pub fn messages(&self) -> &[MessageRecord] {
        &self.messages
    }

    pub fn tree(&self) -> Option<&Tree> {
        self.tree.as_ref()
    }

    /// Iterations run from the current root so far.
    pub fn iterations_done(&self) -> usize {
        self.tree.as_ref().map_or(0, |t| t.log().len())
    }

    pub fn iterations_remaining(&self) -> usize {
        self.config.planning_iterations.saturating_sub(self.iterations_done())
    }

    fn perceive(&mut self, priors: Vec<Categorical>, obs: &ObservationMap) -> Result<()> {
        let inference = i_step_logged(&self.model, &priors, obs)?;
        self.priors = priors;
        self.posteriors = inference.posteriors;
        self.messages = inference.messages;
        self.tree = Some(Tree::new(SliceBeliefs::from_states(self.posteriors.clone())));
        Ok(())
    }

    /// Starts an episode from the model's initial priors.
    pub fn reset(&mut self, obs: &ObservationMap) -> Result<()> {
        self.perceive(self.model.initial_priors(), obs)?;
        let posteriors = std::mem::take(&mut self.posteriors);
        self.emit(AgentEvent::Reset {
            posteriors: &posteriors,
        });
        self.posteriors = posteriors;
        Ok(())
    }

    /// Runs up to `k` further planning iterations, never exceeding the
    /// configured budget. Returns how many ran.
    pub fn plan_iterations(&mut self, k: usize) -> Result<usize> {
        let n = k.min(self.iterations_remaining());
        let c = self.config.exploration_constant;
        for _ in 0..n {
            let tree = self.tree.as_mut().ok_or(Error::NotReset)?;
            let record = iterate(tree, &self.model, c)?;
            self.emit(AgentEvent::Iteration { record: &record });
        }
        Ok(n)
    }

    /// Best action at the current root without planning further.
    pub fn best_action(&self) -> Result<usize> {
        select_action(self.tree.as_ref().ok_or(Error::NotReset)?)
    }

    /// Finishes the planning budget and selects an action.
    pub fn step(&mut self) -> Result<usize> {
        if self.tree.is_none() {
            return Err(Error::NotReset);
        }
        self.plan_iterations(self.iterations_remaining())?;
        let action = self.best_action()?;
        self.emit(AgentEvent::Step { action });
        Ok(action)
    }

    /// Absorbs the observation that followed `action`. The root child for
    /// `action` supplies the prior; the old tree is discarded.
    pub fn update(&mut self, action: usize, obs: &ObservationMap) -> Result<()> {
        let tree = self.tree.as_ref().ok_or(Error::NotReset)?;
        let root = tree.node(tree.root());
        let child = *root.children.get(action).ok_or(if root.children.is_empty() {
            Error::ChildNotExpanded(action)
        } else {
            Error::ActionOutOfRange {
                action,
                n_actions: self.model.n_actions(),
            }
        })?;
        let prior = tree.node(child).beliefs.states.clone();
        self.perceive(prior, obs)?;
        let posteriors = std::mem::take(&mut self.posteriors);
        self.emit(AgentEvent::Update {
            action,
            posteriors: &posteriors,
        });
        self.posteriors = posteriors;
        Ok(())
    }
}
