//! Line-delimited JSON protocol for out-of-process predictors.
//!
//! The platform writes `{"hello":{"protocol":1}}` and expects
//! `{"ready":true,"name":...}`. Afterwards every request line gets exactly
//! one response line carrying the request id.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::thread;
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use trajfals_core::geom::Vec2;
use trajfals_core::predict::{
    constant_velocity, PredictError, PredictionRequest, PredictionSet, Predictor,
};
use trajfals_core::sim::Pose;
use trajfals_core::{DT, HISTORY_STEPS};

use crate::canonical::network_json;
use crate::csv_io::export_argoverse_csv;

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub hello: HelloBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloBody {
    pub protocol: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ready {
    pub ready: bool,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub id: String,
    pub k: usize,
    pub horizon: usize,
    pub dt: f64,
    pub target: String,
    pub history: BTreeMap<String, Vec<[f64; 3]>>,
    pub map: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidences: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl WireRequest {
    pub fn from_request(req: &PredictionRequest) -> Self {
        let history = req
            .history
            .iter()
            .map(|(name, poses)| {
                let rows = poses
                    .iter()
                    .map(|p| [p.position.x, p.position.y, p.heading])
                    .collect();
                (name.clone(), rows)
            })
            .collect();
        WireRequest {
            id: req.scenario_id.clone(),
            k: req.k,
            horizon: req.horizon,
            dt: DT,
            target: req.target.clone(),
            history,
            map: network_json(&req.map),
        }
    }

    /// Target history as poses, checking the request invariants.
    pub fn target_poses(&self) -> Result<Vec<Pose>, String> {
        if self.k == 0 || self.horizon == 0 {
            return Err("k and horizon must be positive".into());
        }
        for (name, rows) in &self.history {
            if rows.len() != HISTORY_STEPS {
                return Err(format!(
                    "agent `{name}` has {} history steps, expected {HISTORY_STEPS}",
                    rows.len()
                ));
            }
        }
        let rows = self
            .history
            .get(&self.target)
            .ok_or_else(|| format!("target `{}` has no history", self.target))?;
        Ok(rows
            .iter()
            .map(|r| Pose {
                position: Vec2::new(r[0], r[1]),
                heading: r[2],
            })
            .collect())
    }
}

impl WireResponse {
    pub fn from_set(id: &str, set: &PredictionSet) -> Self {
        WireResponse {
            id: id.into(),
            predictions: Some(
                set.candidates
                    .iter()
                    .map(|c| c.iter().map(|p| [p.x, p.y]).collect())
                    .collect(),
            ),
            confidences: set.confidences.clone(),
            error: None,
        }
    }

    pub fn error(id: &str, message: impl Into<String>) -> Self {
        WireResponse {
            id: id.into(),
            predictions: None,
            confidences: None,
            error: Some(message.into()),
        }
    }

    /// Converts to a prediction set; shape checks happen at the predict boundary.
    pub fn into_set(self, request_id: &str) -> Result<PredictionSet, PredictError> {
        let malformed = |reason: String| PredictError::Malformed {
            scenario_id: request_id.into(),
            reason,
        };
        if self.id != request_id {
            return Err(malformed(format!(
                "response id `{}` does not match request",
                self.id
            )));
        }
        if let Some(e) = self.error {
            return Err(malformed(format!("predictor reported: {e}")));
        }
        let predictions = self
            .predictions
            .ok_or_else(|| malformed("response has no predictions".into()))?;
        Ok(PredictionSet {
            candidates: predictions
                .into_iter()
                .map(|c| c.into_iter().map(|[x, y]| Vec2::new(x, y)).collect())
                .collect(),
            confidences: self.confidences,
        })
    }
}

/// A predictor running as a child process, one per worker.
pub struct ExternalPredictor {
    name: String,
    command: Vec<String>,
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
}

#[derive(Debug, thiserror::Error)]
pub enum LaunchError {
    #[error("empty predictor command")]
    EmptyCommand,
    #[error("could not start `{command}`: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("handshake with `{command}` failed: {reason}")]
    Handshake { command: String, reason: String },
}

impl ExternalPredictor {
    /// Starts `command` and performs the handshake within `timeout`.
    pub fn launch(command: &[String], timeout: Duration) -> Result<Self, LaunchError> {
        let (program, args) = command.split_first().ok_or(LaunchError::EmptyCommand)?;
        let shown = command.join(" ");
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| LaunchError::Spawn {
                command: shown.clone(),
                source,
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = crossbeam_channel::unbounded();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let mut p = ExternalPredictor {
            name: shown.clone(),
            command: command.to_vec(),
            child,
            stdin,
            lines: rx,
            timeout,
        };
        let handshake = |reason: String| LaunchError::Handshake {
            command: shown.clone(),
            reason,
        };
        let hello = Hello {
            hello: HelloBody {
                protocol: PROTOCOL_VERSION,
            },
        };
        p.send(&serde_json::to_string(&hello).expect("hello serializes"))
            .map_err(|e| handshake(e.to_string()))?;
        let line = p.recv().map_err(|e| handshake(e.to_string()))?;
        let ready: Ready = serde_json::from_str(&line)
            .map_err(|e| handshake(format!("bad ready line `{line}`: {e}")))?;
        if !ready.ready {
            return Err(handshake("adapter reported ready = false".into()));
        }
        p.name = ready.name;
        Ok(p)
    }

    pub fn command(&self) -> &[String] {
        &self.command
    }

    fn send(&mut self, line: &str) -> std::io::Result<()> {
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.write_all(b"\n")?;
        self.stdin.flush()
    }

    fn recv(&mut self) -> Result<String, RecvFailure> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(RecvFailure::Closed(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(RecvFailure::Timeout),
            Err(RecvTimeoutError::Disconnected) => {
                let status = self
                    .child
                    .try_wait()
                    .ok()
                    .flatten()
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| "stdout closed".into());
                Err(RecvFailure::Closed(status))
            }
        }
    }
}

#[derive(Debug)]
enum RecvFailure {
    Timeout,
    Closed(String),
}

impl std::fmt::Display for RecvFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RecvFailure::Timeout => f.write_str("timed out"),
            RecvFailure::Closed(s) => write!(f, "process exited ({s})"),
        }
    }
}

impl Predictor for ExternalPredictor {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&mut self, request: &PredictionRequest) -> Result<PredictionSet, PredictError> {
        let id = request.scenario_id.clone();
        let line =
            serde_json::to_string(&WireRequest::from_request(request)).expect("request serializes");
        if let Err(e) = self.send(&line) {
            return Err(PredictError::Crashed {
                scenario_id: id,
                detail: e.to_string(),
            });
        }
        let reply = match self.recv() {
            Ok(l) => l,
            Err(RecvFailure::Timeout) => {
                let _ = self.child.kill();
                return Err(PredictError::Timeout {
                    scenario_id: id,
                    seconds: self.timeout.as_secs_f64(),
                });
            }
            Err(RecvFailure::Closed(detail)) => {
                return Err(PredictError::Crashed {
                    scenario_id: id,
                    detail,
                })
            }
        };
        let resp: WireResponse =
            serde_json::from_str(&reply).map_err(|e| PredictError::Malformed {
                scenario_id: id.clone(),
                reason: format!("unparseable response: {e}"),
            })?;
        resp.into_set(&id)
    }
}

impl Drop for ExternalPredictor {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Constant-velocity adapter session: answers the handshake and every
/// request on `input` until EOF. Malformed lines get an error response.
pub fn serve<R: BufRead, W: Write>(
    input: R,
    mut output: W,
    name: &str,
    csv_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = handle_line(&line, name, csv_dir.as_deref());
        output.write_all(reply.as_bytes())?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

/// The response line for one input line.
pub fn handle_line(line: &str, name: &str, csv_dir: Option<&std::path::Path>) -> String {
    let value: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => {
            return serde_json::to_string(&WireResponse::error("", format!("invalid JSON: {e}")))
                .expect("serializes")
        }
    };
    if value.get("hello").is_some() {
        let ready = match serde_json::from_value::<Hello>(value) {
            Ok(h) if h.hello.protocol == PROTOCOL_VERSION => Ready {
                ready: true,
                name: name.into(),
            },
            _ => Ready {
                ready: false,
                name: name.into(),
            },
        };
        return serde_json::to_string(&ready).expect("serializes");
    }
    let id = value
        .get("id")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let resp = match serde_json::from_value::<WireRequest>(value) {
        Err(e) => WireResponse::error(&id, format!("malformed request: {e}")),
        Ok(req) => match req.target_poses() {
            Err(e) => WireResponse::error(&id, e),
            Ok(poses) => {
                if let Some(dir) = csv_dir {
                    if let Err(e) = export_request_csv(&req, dir) {
                        return serde_json::to_string(&WireResponse::error(&id, e))
                            .expect("serializes");
                    }
                }
                WireResponse::from_set(&id, &constant_velocity(&poses, req.k, req.horizon))
            }
        },
    };
    serde_json::to_string(&resp).expect("serializes")
}

fn export_request_csv(req: &WireRequest, dir: &std::path::Path) -> Result<(), String> {
    let history = req
        .history
        .iter()
        .map(|(n, rows)| {
            let poses = rows
                .iter()
                .map(|r| Pose {
                    position: Vec2::new(r[0], r[1]),
                    heading: r[2],
                })
                .collect();
            (n.clone(), poses)
        })
        .collect();
    let request = PredictionRequest {
        scenario_id: req.id.clone(),
        history,
        map: Default::default(),
        target: req.target.clone(),
        horizon: req.horizon,
        k: req.k,
    };
    export_argoverse_csv(&request, dir)
        .map(|_| ())
        .map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_request(speed: f64) -> WireRequest {
        let rows = (0..20).map(|t| [t as f64 * speed * DT, 0.0, 0.0]).collect();
        WireRequest {
            id: "r1".into(),
            k: 6,
            horizon: 15,
            dt: DT,
            target: "a".into(),
            history: [("a".to_string(), rows)].into_iter().collect(),
            map: serde_json::json!({"lanes": []}),
        }
    }

    #[test]
    fn handshake_reply() {
        assert_eq!(
            handle_line(r#"{"hello":{"protocol":1}}"#, "cv-adapter", None),
            r#"{"ready":true,"name":"cv-adapter"}"#
        );
        assert!(handle_line(r#"{"hello":{"protocol":7}}"#, "cv", None).contains("false"));
    }

    #[test]
    fn straight_history_final_point() {
        let line = serde_json::to_string(&straight_request(2.0)).unwrap();
        let resp: WireResponse = serde_json::from_str(&handle_line(&line, "cv", None)).unwrap();
        assert_eq!(resp.id, "r1");
        let p = resp.predictions.unwrap();
        assert_eq!(p.len(), 6);
        assert!(p.iter().all(|c| c.len() == 15));
        let last_hist = 19.0 * 0.2;
        assert!((p[0][14][0] - (last_hist + 3.0)).abs() < 1e-6);
        assert!(p[0][14][1].abs() < 1e-9);
    }

    #[test]
    fn malformed_requests_get_error_responses() {
        let mut short = straight_request(1.0);
        short.history.get_mut("a").unwrap().pop();
        let line = serde_json::to_string(&short).unwrap();
        let resp: WireResponse = serde_json::from_str(&handle_line(&line, "cv", None)).unwrap();
        assert_eq!(resp.id, "r1");
        assert!(resp.error.unwrap().contains("19 history steps"));
        let resp: WireResponse =
            serde_json::from_str(&handle_line("{not json", "cv", None)).unwrap();
        assert!(resp.error.is_some());
        let resp: WireResponse =
            serde_json::from_str(&handle_line(r#"{"id":"x","k":6}"#, "cv", None)).unwrap();
        assert_eq!(resp.id, "x");
        assert!(resp.error.is_some());
    }

    #[test]
    fn serve_keeps_going_after_errors() {
        let good = serde_json::to_string(&straight_request(1.0)).unwrap();
        let input = format!("{{\"hello\":{{\"protocol\":1}}}}\ngarbage\n\n{good}\n");
        let mut out = Vec::new();
        serve(input.as_bytes(), &mut out, "cv", None).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].contains("error"));
        assert!(lines[2].contains("predictions"));
    }

    #[test]
    fn response_conversion_checks_id_and_error() {
        let ok = WireResponse {
            id: "a".into(),
            predictions: Some(vec![vec![[1.0, 2.0]]]),
            confidences: None,
            error: None,
        };
        assert!(ok.clone().into_set("b").is_err());
        assert_eq!(
            ok.into_set("a").unwrap().candidates[0][0],
            Vec2::new(1.0, 2.0)
        );
        assert!(matches!(
            WireResponse::error("a", "x").into_set("a"),
            Err(PredictError::Malformed { .. })
        ));
    }
}
