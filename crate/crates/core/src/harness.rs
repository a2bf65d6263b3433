//! Batch evaluation on dSprites: independent seeded trials, P(solved) and
//! timing statistics, JSONL episode records.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::dsprites::{build_model, p_solved, x_target, DSpritesEnv, EnvConfig, EnvState, PreferenceShape};
use crate::error::{Error, Result};
use crate::model::TemporalSliceModel;
use crate::par::{map_indices, Execution};
use crate::planner::PlannerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n_simulations: usize,
    pub max_cycles: usize,
    pub planning_iterations: usize,
    pub exploration_constant: f64,
    pub preference_precision: f64,
    pub preference_shape: PreferenceShape,
    pub granularity: usize,
    pub repeat: usize,
    pub rng_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_simulations: 100,
            max_cycles: 50,
            planning_iterations: 150,
            exploration_constant: 2.4,
            preference_precision: 1.0,
            preference_shape: PreferenceShape::default(),
            granularity: 8,
            repeat: 8,
            rng_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            granularity: self.granularity,
            repeat: self.repeat,
            max_cycles: self.max_cycles,
            rng_seed: self.rng_seed,
        }
    }

    pub fn planner_config(&self) -> PlannerConfig {
        PlannerConfig {
            exploration_constant: self.exploration_constant,
            planning_iterations: self.planning_iterations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env_config().validate()?;
        if self.n_simulations == 0 {
            return Err(Error::InvalidConfig("n_simulations must be positive".into()));
        }
        if self.planning_iterations == 0 {
            return Err(Error::InvalidConfig("planning_iterations must be positive".into()));
        }
        if !(self.exploration_constant.is_finite() && self.exploration_constant >= 0.0) {
            return Err(Error::InvalidConfig(
                "exploration_constant must be finite and >= 0".into(),
            ));
        }
        if !(self.preference_precision.is_finite() && self.preference_precision > 0.0) {
            return Err(Error::InvalidConfig(
                "preference_precision must be finite and > 0".into(),
            ));
        }
        Ok(())
    }

    /// The environment RNG of one trial: seeded by the experiment, one
    /// stream per trial, so trials are independent of scheduling.
    pub fn trial_rng(&self, trial: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(trial as u64);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    /// Entered the absorbing row in the target column cell.
    Goal,
    /// Entered the absorbing row elsewhere.
    Absorbed,
    Timeout,
}

/// One JSONL line per trial. Wall-clock time is kept out so that records
/// are reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub trial: usize,
    pub reward: f64,
    pub cycles: usize,
    pub status: Status,
    pub initial: EnvState,
    #[serde(rename = "final")]
    pub final_state: EnvState,
    pub actions: Vec<usize>,
}

/// One environment step of a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub trial: usize,
    pub step: usize,
    pub state: EnvState,
    pub action: Option<usize>,
    pub reward: Option<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub p_solved: f64,
    pub total_reward: f64,
    pub mean_time: f64,
    pub std_time: f64,
    pub goal: usize,
    pub absorbed: usize,
    pub timeout: usize,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub summary: Summary,
    pub records: Vec<EpisodeRecord>,
    /// Seconds per trial, same order as `records`.
    pub times: Vec<f64>,
    /// Empty unless tracing was requested.
    pub traces: Vec<StepTrace>,
}

impl Report {
    pub fn write_records(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_traces(&self, mut out: impl Write) -> std::io::Result<()> {
        for t in &self.traces {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

struct TrialOutcome {
    record: EpisodeRecord,
    seconds: f64,
    trace: Vec<StepTrace>,
}

fn trace_line(trial: usize, step: usize, env: &DSpritesEnv, action: Option<usize>) -> StepTrace {
    StepTrace {
        trial,
        step,
        state: *env.state(),
        action,
        reward: env.reward().ok(),
        done: env.done(),
    }
}

/// Runs one full episode.
pub fn run_trial(
    config: &ExperimentConfig,
    model: Arc<TemporalSliceModel>,
    trial: usize,
    trace: bool,
) -> Result<(EpisodeRecord, Vec<StepTrace>)> {
    let outcome = trial_outcome(config, model, trial, trace)?;
    Ok((outcome.record, outcome.trace))
}

fn trial_outcome(
    config: &ExperimentConfig,
    model: Arc<TemporalSliceModel>,
    trial: usize,
    trace: bool,
) -> Result<TrialOutcome> {
    let start = Instant::now();
    let env_config = config.env_config();
    let mut env = DSpritesEnv::with_rng(env_config, config.trial_rng(trial))?;
    let mut agent = Agent::new(model, config.planner_config());
    let mut obs = env.reset();
    let initial = *env.state();
    let mut lines = Vec::new();
    if trace {
        lines.push(trace_line(trial, 0, &env, None));
    }
    agent.reset(&obs)?;
    let mut actions = Vec::new();
    while !env.done() {
        let action = agent.step()?;
        obs = env.execute(action)?;
        actions.push(action);
        if trace {
            lines.push(trace_line(trial, actions.len(), &env, Some(action)));
        }
        if !env.done() {
            agent.update(action, &obs)?;
        }
    }
    let state = *env.state();
    let status = if !state.absorbed {
        Status::Timeout
    } else if state.x_cell(env_config.granularity) == x_target(state.shape, env_config.n_x()) {
        Status::Goal
    } else {
        Status::Absorbed
    };
    Ok(TrialOutcome {
        record: EpisodeRecord {
            trial,
            reward: env.reward()?,
            cycles: state.cycles_elapsed,
            status,
            initial,
            final_state: state,
            actions,
        },
        seconds: start.elapsed().as_secs_f64(),
        trace: lines,
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs every trial and aggregates the results.
pub fn run_experiment(config: &ExperimentConfig, execution: Execution) -> Result<Report> {
    run_experiment_traced(config, execution, false)
}

pub fn run_experiment_traced(config: &ExperimentConfig, execution: Execution, trace: bool) -> Result<Report> {
    config.validate()?;
    let model = Arc::new(build_model(
        &config.env_config(),
        config.preference_precision,
        config.preference_shape,
    )?);
    let outcomes = map_indices(config.n_simulations, execution, |trial| {
        trial_outcome(config, Arc::clone(&model), trial, trace)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::with_capacity(outcomes.len());
    let mut times = Vec::with_capacity(outcomes.len());
    let mut traces = Vec::new();
    for o in outcomes {
        records.push(o.record);
        times.push(o.seconds);
        traces.extend(o.trace);
    }
    let total_reward: f64 = records.iter().map(|r| r.reward).sum();
    let count = |s: Status| records.iter().filter(|r| r.status == s).count();
    let (mean_time, std_time) = mean_std(&times);
    Ok(Report {
        summary: Summary {
            config: *config,
            p_solved: p_solved(total_reward, records.len()),
            total_reward,
            mean_time,
            std_time,
            goal: count(Status::Goal),
            absorbed: count(Status::Absorbed),
            timeout: count(Status::Timeout),
        },
        records,
        times,
        traces,
    })
}
