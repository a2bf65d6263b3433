//! Live inspection of an agent acting in dSprites.
//!
//! A session owns one environment and one agent. Clients drive it with
//! newline-delimited JSON commands `{id, cmd, args}` and receive
//! `{id, ok, payload}` or `{id, ok: false, error}`. Payload schemas are in
//! `docs/protocol.md`.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::agent::Agent;
use crate::dsprites::{build_model, DSpritesEnv};
use crate::error::{Error, Result};
use crate::harness::ExperimentConfig;
use crate::inference::MessageRecord;
use crate::planner::{node_label, parse_node_label, NodeId, Tree};
use crate::tensor::Categorical;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    #[serde(default)]
    pub id: Value,
    pub cmd: String,
    #[serde(default)]
    pub args: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: Value,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::UnknownNode(_) => "UnknownNode",
        Error::NoPlanningDone => "NoPlanningDone",
        Error::MalformedCommand(_) => "MalformedCommand",
        Error::EpisodeFinished => "EpisodeFinished",
        Error::InvalidConfig(_) => "InvalidConfig",
        _ => "Internal",
    }
}

impl Response {
    fn ok(id: Value, payload: Value) -> Self {
        Self {
            id,
            ok: true,
            payload: Some(payload),
            error: None,
        }
    }

    fn err(id: Value, e: &Error) -> Self {
        Self {
            id,
            ok: false,
            payload: None,
            error: Some(ErrorBody {
                kind: error_kind(e).to_string(),
                message: e.to_string(),
            }),
        }
    }
}

/// Whether a message endpoint is `var` itself or a factor mentioning it.
fn touches(endpoint: &str, var: &str) -> bool {
    endpoint == var || endpoint.split(['(', ')', '|', ',', '=']).any(|t| t == var)
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("payload types serialize")
}

pub struct InspectorSession {
    config: ExperimentConfig,
    env: DSpritesEnv,
    agent: Agent,
    episode: usize,
}

impl InspectorSession {
    /// Builds the model and starts the first episode.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let model = build_model(
            &config.env_config(),
            config.preference_precision,
            config.preference_shape,
        )?;
        let env = DSpritesEnv::new(config.env_config())?;
        let agent = Agent::new(model, config.planner_config());
        let mut session = Self {
            config,
            env,
            agent,
            episode: 0,
        };
        session.reset()?;
        Ok(session)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn env(&self) -> &DSpritesEnv {
        &self.env
    }

    fn tree(&self) -> &Tree {
        self.agent.tree().expect("session is always reset")
    }

    fn reset(&mut self) -> Result<Value> {
        let obs = self.env.reset();
        self.agent.reset(&obs)?;
        self.episode += 1;
        Ok(json!({
            "episode": self.episode,
            "env": self.env.view(),
            "root": node_label(&[]),
            "iterations_remaining": self.agent.iterations_remaining(),
        }))
    }

    fn planning(&mut self, k: usize) -> Result<Value> {
        let before = self.tree().len();
        let ran = self.agent.plan_iterations(k)?;
        let tree = self.tree();
        let expanded: Vec<String> = tree.log()[tree.log().len() - ran..]
            .iter()
            .map(|r| node_label(&tree.node(r.selected).multi_index))
            .collect();
        let new_nodes: Vec<String> = tree
            .nodes()
            .skip(before)
            .map(|(_, n)| node_label(&n.multi_index))
            .collect();
        Ok(json!({
            "ran": ran,
            "iterations_done": self.agent.iterations_done(),
            "iterations_remaining": self.agent.iterations_remaining(),
            "root_visits": tree.node(tree.root()).visits,
            "expanded": expanded,
            "new_nodes": new_nodes,
        }))
    }

    fn execute_best_action(&mut self) -> Result<Value> {
        let action = self.agent.best_action().map_err(|e| match e {
            Error::NotExpanded => Error::NoPlanningDone,
            e => e,
        })?;
        let obs = self.env.execute(action)?;
        self.agent.update(action, &obs)?;
        let observation: serde_json::Map<String, Value> = obs.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
        Ok(json!({
            "action": action,
            "observation": observation,
            "env": self.env.view(),
            "done": self.env.done(),
            "reward": self.env.reward().ok(),
            "iterations_remaining": self.agent.iterations_remaining(),
        }))
    }

    fn resolve(&self, label: &str) -> Result<NodeId> {
        parse_node_label(label)
            .and_then(|mi| self.tree().find(&mi))
            .ok_or_else(|| Error::UnknownNode(label.to_string()))
    }

    fn get_tree(&self) -> Value {
        let tree = self.tree();
        let mut snapshot = to_value(&tree.snapshot());
        snapshot["best_action"] = to_value(&self.agent.best_action().ok());
        snapshot["last_expanded"] = to_value(
            &tree
                .log()
                .last()
                .map(|r| node_label(&tree.node(r.selected).multi_index)),
        );
        snapshot["iterations_remaining"] = json!(self.agent.iterations_remaining());
        snapshot
    }

    fn get_node(&self, label: &str) -> Result<Value> {
        let tree = self.tree();
        let id = self.resolve(label)?;
        let node = tree.node(id);
        let snap = tree.node_snapshot(id);
        Ok(json!({
            "node": snap,
            "parent": node.parent.map(|p| node_label(&tree.node(p).multi_index)),
            "beliefs_kind": if node.parent.is_none() { "posterior" } else { "predicted" },
            "states": node.beliefs.states.iter().map(|c| c.var().to_string()).collect::<Vec<_>>(),
            "observations": self.agent.model().observations().iter().map(|o| o.name().to_string()).collect::<Vec<_>>(),
        }))
    }

    fn get_beliefs(&self, label: &str, var: &str) -> Result<Value> {
        let tree = self.tree();
        let node = tree.node(self.resolve(label)?);
        let is_root = node.parent.is_none();
        let (kind, belief): (&str, Option<Categorical>) = match (node.beliefs.state(var), is_root) {
            (Some(c), true) => ("posterior", Some(c.clone())),
            (Some(c), false) => ("predicted", Some(c.clone())),
            (None, false) => ("predicted", node.beliefs.observation(var).cloned()),
            (None, true) => {
                // The root has no predicted observations; show what was seen.
                let model = self.agent.model();
                let observed = self.env.observations();
                let found = model.observations().iter().find(|o| o.name().as_str() == var);
                let c = found.and_then(|o| {
                    observed
                        .get(var)
                        .map(|&i| Categorical::one_hot(o.name().clone(), o.cardinality(), i))
                });
                ("observed", c)
            }
        };
        let belief = belief.ok_or_else(|| Error::MalformedCommand(format!("no variable {var:?} at node {label}")))?;
        Ok(json!({
            "node_id": label,
            "var": var,
            "kind": kind,
            "probs": belief.probs(),
        }))
    }

    fn get_messages(&self, var: &str) -> Value {
        let messages: Vec<&MessageRecord> = self
            .agent
            .messages()
            .iter()
            .filter(|m| touches(&m.from, var) || touches(&m.to, var))
            .collect();
        json!({ "var": var, "messages": messages })
    }

    fn get_model_structure(&self) -> Value {
        let model = self.agent.model();
        json!({
            "config": self.config,
            "model": model.to_document(),
            "default_preference": model.default_preference_observations(),
        })
    }

    fn get_efe(&self, label: &str) -> Result<Value> {
        let node = self.tree().node(self.resolve(label)?);
        Ok(json!({ "node_id": label, "efe": node.efe }))
    }

    fn dispatch(&mut self, cmd: &str, args: &Value) -> Result<Value> {
        let str_arg = |name: &str| {
            args.get(name)
                .and_then(Value::as_str)
                .ok_or_else(|| Error::MalformedCommand(format!("{cmd} needs string argument {name:?}")))
        };
        match cmd {
            "reset" => self.reset(),
            "step_planning" => {
                let k = match args.get("k") {
                    None | Some(Value::Null) => 1,
                    Some(v) => v
                        .as_u64()
                        .ok_or_else(|| Error::MalformedCommand("k must be a non-negative integer".into()))?
                        as usize,
                };
                self.planning(k)
            }
            "run_planning_all" => self.planning(usize::MAX),
            "execute_best_action" => self.execute_best_action(),
            "get_tree" => Ok(self.get_tree()),
            "get_node" => self.get_node(str_arg("id")?),
            "get_beliefs" => self.get_beliefs(str_arg("node_id")?, str_arg("var")?),
            "get_messages" => Ok(self.get_messages(str_arg("var")?)),
            "get_model_structure" => Ok(self.get_model_structure()),
            "get_efe" => self.get_efe(str_arg("node_id")?),
            "get_env_view" => Ok(to_value(&self.env.view())),
            other => Err(Error::MalformedCommand(format!("unknown command {other:?}"))),
        }
    }

    pub fn handle_command(&mut self, request: &Request) -> Response {
        match self.dispatch(&request.cmd, &request.args) {
            Ok(payload) => Response::ok(request.id.clone(), payload),
            Err(e) => Response::err(request.id.clone(), &e),
        }
    }

    /// Parses one protocol line and returns the serialized response.
    pub fn handle_line(&mut self, line: &str) -> String {
        let response = match serde_json::from_str::<Request>(line) {
            Ok(req) => self.handle_command(&req),
            Err(e) => {
                let id = serde_json::from_str::<Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").cloned())
                    .unwrap_or(Value::Null);
                Response::err(id, &Error::MalformedCommand(e.to_string()))
            }
        };
        serde_json::to_string(&response).expect("responses serialize")
    }
}

type Job = (String, mpsc::Sender<String>);

fn connection(stream: TcpStream, jobs: mpsc::Sender<Job>) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    let (reply_tx, reply_rx) = mpsc::channel();
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if jobs.send((line, reply_tx.clone())).is_err() {
            break;
        }
        let Ok(reply) = reply_rx.recv() else { break };
        writer.write_all(reply.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

/// Serves the session on `listener`. Each connection gets a reader thread;
/// all commands go through one queue and are handled in arrival order on
/// the calling thread. Returns when the listener fails.
pub fn serve(listener: TcpListener, mut session: InspectorSession) -> std::io::Result<()> {
    let (jobs_tx, jobs_rx) = mpsc::channel::<Job>();
    let listener = Arc::new(listener);
    let acceptor = {
        let listener = Arc::clone(&listener);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let jobs = jobs_tx.clone();
                thread::spawn(move || {
                    let _ = connection(stream, jobs);
                });
            }
        })
    };
    for (line, reply) in jobs_rx {
        let _ = reply.send(session.handle_line(&line));
    }
    let _ = acceptor.join();
    Ok(())
}
