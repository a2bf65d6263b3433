use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

use btai::harness::ExperimentConfig;
use btai::inspector::{serve, InspectorSession};
use serde_json::{json, Value};

fn config() -> ExperimentConfig {
    ExperimentConfig {
        planning_iterations: 20,
        ..ExperimentConfig::default()
    }
}

struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

impl Client {
    fn connect() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let session = InspectorSession::new(config()).unwrap();
        thread::spawn(move || serve(listener, session));
        let stream = TcpStream::connect(addr).unwrap();
        Self {
            reader: BufReader::new(stream.try_clone().unwrap()),
            writer: stream,
            next_id: 0,
        }
    }

    fn raw(&mut self, line: &str) -> Value {
        self.writer.write_all(line.as_bytes()).unwrap();
        self.writer.write_all(b"\n").unwrap();
        let mut reply = String::new();
        self.reader.read_line(&mut reply).unwrap();
        serde_json::from_str(&reply).unwrap()
    }

    fn send(&mut self, cmd: &str, args: Value) -> Value {
        self.next_id += 1;
        let id = self.next_id;
        let reply = self.raw(&json!({ "id": id, "cmd": cmd, "args": args }).to_string());
        assert_eq!(reply["id"], json!(id));
        reply
    }

    fn ok(&mut self, cmd: &str, args: Value) -> Value {
        let reply = self.send(cmd, args);
        assert_eq!(reply["ok"], json!(true), "{cmd}: {reply}");
        reply["payload"].clone()
    }

    fn err(&mut self, cmd: &str, args: Value) -> String {
        let reply = self.send(cmd, args);
        assert_eq!(reply["ok"], json!(false), "{cmd}: {reply}");
        reply["error"]["kind"].as_str().unwrap().to_string()
    }
}

fn node<'a>(tree: &'a Value, id: &str) -> &'a Value {
    tree["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .find(|n| n["id"] == json!(id))
        .unwrap()
}

#[test]
fn scripted_session() {
    let mut c = Client::connect();
    let reset = c.ok("reset", json!({}));
    assert_eq!(reset["root"], json!("()"));
    assert_eq!(reset["iterations_remaining"], json!(20));

    for i in 1..=3 {
        let p = c.ok("step_planning", json!({ "k": 1 }));
        assert_eq!(p["ran"], json!(1));
        assert_eq!(p["root_visits"], json!(i + 1));
        assert_eq!(p["new_nodes"].as_array().unwrap().len(), 4);
    }
    let tree = c.ok("get_tree", json!({}));
    assert_eq!(node(&tree, "()")["visits"], json!(4));
    assert_eq!(tree["iterations"].as_array().unwrap().len(), 3);
    for n in tree["nodes"].as_array().unwrap() {
        let k = n["children"].as_array().unwrap().len();
        assert!(k == 0 || k == 4, "{n}");
        let id = n["id"].as_str().unwrap();
        let fetched = c.ok("get_node", json!({ "id": id }));
        assert_eq!(&fetched["node"], n);
        if id != "()" {
            let efe = c.ok("get_efe", json!({ "node_id": id }))["efe"].clone();
            let parts: f64 = efe["risk"]
                .as_array()
                .unwrap()
                .iter()
                .chain(efe["ambiguity"].as_array().unwrap())
                .map(|t| t["value"].as_f64().unwrap())
                .sum();
            assert!((parts - efe["total"].as_f64().unwrap()).abs() < 1e-9);
            assert_eq!(efe["total"], n["efe_breakdown"]["total"]);
        }
    }

    // Queries leave the session untouched.
    assert_eq!(c.ok("get_tree", json!({})), tree);
    let view = c.ok("get_env_view", json!({}));
    assert_eq!(c.ok("get_env_view", json!({})), view);

    let exec = c.ok("execute_best_action", json!({}));
    assert_eq!(exec["action"], tree["best_action"]);
    assert_eq!(exec["iterations_remaining"], json!(20));
    let obs = exec["observation"].as_object().unwrap();
    assert_eq!(obs.len(), 5);
    assert_eq!(obs["O_pos_x"], exec["env"]["agent"][0]);
}

#[test]
fn planning_to_completion_and_errors() {
    let mut c = Client::connect();
    assert_eq!(c.err("execute_best_action", json!({})), "NoPlanningDone");
    let all = c.ok("run_planning_all", json!({}));
    assert_eq!(all["iterations_remaining"], json!(0));
    assert_eq!(all["root_visits"], json!(21));
    let again = c.ok("step_planning", json!({ "k": 5 }));
    assert_eq!(again["ran"], json!(0));

    assert_eq!(c.err("get_node", json!({ "id": "(9,9)" })), "UnknownNode");
    assert_eq!(c.err("get_node", json!({ "id": "nonsense" })), "UnknownNode");
    assert_eq!(c.err("get_node", json!({})), "MalformedCommand");
    assert_eq!(c.err("frobnicate", json!({})), "MalformedCommand");
    assert_eq!(c.err("step_planning", json!({ "k": -1 })), "MalformedCommand");
    let reply = c.raw("{not json");
    assert_eq!(reply["ok"], json!(false));
    assert_eq!(reply["error"]["kind"], json!("MalformedCommand"));

    let root = c.ok("get_beliefs", json!({ "node_id": "()", "var": "S_pos_x" }));
    assert_eq!(root["kind"], json!("posterior"));
    let seen = c.ok("get_beliefs", json!({ "node_id": "()", "var": "O_pos_x" }));
    assert_eq!(seen["kind"], json!("observed"));
    let child = c.ok("get_beliefs", json!({ "node_id": "(0)", "var": "O_pos_y" }));
    assert_eq!(child["kind"], json!("predicted"));
    let sum: f64 = child["probs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p.as_f64().unwrap())
        .sum();
    assert!((sum - 1.0).abs() < 1e-9);
    assert!(c.ok("get_efe", json!({ "node_id": "()" }))["efe"].is_null());

    let structure = c.ok("get_model_structure", json!({}));
    assert_eq!(structure["model"]["states"].as_array().unwrap().len(), 5);
    assert_eq!(structure["config"]["granularity"], json!(8));
}

#[test]
fn messages_match_the_agent_log() {
    let mut session = InspectorSession::new(config()).unwrap();
    let expected: Vec<Value> = session
        .agent()
        .messages()
        .iter()
        .filter(|m| {
            [&m.from, &m.to]
                .iter()
                .any(|e| *e == "S_pos_y" || e.contains("S_pos_y)") || e.contains("S_pos_y|") || e.contains("S_pos_y,"))
        })
        .map(|m| serde_json::to_value(m).unwrap())
        .collect();
    assert!(!expected.is_empty());
    let reply: Value =
        serde_json::from_str(&session.handle_line(r#"{"id":"m","cmd":"get_messages","args":{"var":"S_pos_y"}}"#))
            .unwrap();
    assert_eq!(reply["id"], json!("m"));
    assert_eq!(reply["payload"]["messages"], Value::Array(expected));
}

#[test]
fn finished_episode_refuses_to_act() {
    let mut session = InspectorSession::new(ExperimentConfig {
        planning_iterations: 2,
        max_cycles: 2,
        ..ExperimentConfig::default()
    })
    .unwrap();
    let mut cmd =
        |c: &str| -> Value { serde_json::from_str(&session.handle_line(&json!({ "cmd": c }).to_string())).unwrap() };
    for _ in 0..2 {
        cmd("run_planning_all");
        let r = cmd("execute_best_action");
        if r["payload"]["done"] == json!(true) {
            break;
        }
    }
    cmd("run_planning_all");
    let r = cmd("execute_best_action");
    assert_eq!(r["error"]["kind"], json!("EpisodeFinished"), "{r}");
    assert_eq!(cmd("reset")["payload"]["episode"], json!(2));
}
