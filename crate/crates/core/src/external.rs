//! Agents running in another process, driven over newline-delimited JSON on
//! the child's standard input and output.
//!
//! ```text
//! -> {"type":"hello","spaces":{"actions":2,"observations":2,"reward_denominator":255},"protocol":1}
//! <- {"type":"ready","concurrency":1}
//! -> {"type":"reset","episode":0}
//! -> {"type":"percept","o":0,"r_num":0,"cycle":1,"episode":0}
//! <- {"type":"action","a":1}
//! -> {"type":"bye"}
//! ```
//!
//! An endpoint owns one child process and serves one rollout at a time. A
//! reply that misses the timeout is replaced by a uniform action and the
//! late reply, when it arrives, is discarded. Anything unparseable fails the
//! rollout and the child is restarted for the next one.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentError};
use crate::interaction::{Action, History, SpaceConfig};
use crate::seeding::StreamRng;

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT_MS: u64 = 1000;
/// Time allowed for the child to start and answer the handshake.
pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireSpaces {
    pub actions: u32,
    pub observations: u32,
    pub reward_denominator: u32,
}

impl From<SpaceConfig> for WireSpaces {
    fn from(s: SpaceConfig) -> Self {
        Self { actions: s.action_count, observations: s.observation_count, reward_denominator: s.reward_denominator }
    }
}

/// Messages sent to the agent process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ToAgent {
    Hello { spaces: WireSpaces, protocol: u32 },
    Percept { o: u32, r_num: u32, cycle: u64, episode: u64 },
    Reset { episode: u64 },
    Bye,
}

/// Messages the agent process sends back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FromAgent {
    Ready { concurrency: u32 },
    Action { a: i64 },
}

struct Connection {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    /// Replies still owed for cycles that already timed out.
    stale: u64,
}

impl Connection {
    fn open(command: &[String], space: SpaceConfig) -> Result<Self, AgentError> {
        let (program, args) = command.split_first().ok_or_else(|| AgentError::Transport("empty command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AgentError::Transport(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut conn = Connection { child, stdin, lines, stale: 0 };
        match conn.handshake(space) {
            Ok(()) => Ok(conn),
            Err(e) => {
                conn.close();
                Err(e)
            }
        }
    }

    fn handshake(&mut self, space: SpaceConfig) -> Result<(), AgentError> {
        self.send(&ToAgent::Hello { spaces: space.into(), protocol: PROTOCOL_VERSION })?;
        match self.receive(HANDSHAKE_TIMEOUT)? {
            Some(FromAgent::Ready { concurrency }) => {
                log::debug!("external agent ready, concurrency {concurrency}");
                Ok(())
            }
            Some(other) => Err(AgentError::Protocol(format!("expected ready, got {other:?}"))),
            None => Err(AgentError::Transport("no handshake reply".into())),
        }
    }

    fn send(&mut self, msg: &ToAgent) -> Result<(), AgentError> {
        let mut line = serde_json::to_string(msg).expect("wire messages serialize");
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| AgentError::Transport(e.to_string()))
    }

    /// Next message within `timeout`, `None` on timeout.
    fn receive(&mut self, timeout: Duration) -> Result<Option<FromAgent>, AgentError> {
        match self.lines.recv_timeout(timeout) {
            Ok(line) => serde_json::from_str(&line)
                .map(Some)
                .map_err(|e| AgentError::Protocol(format!("malformed reply {line:?}: {e}"))),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(AgentError::Transport("agent closed its output".into())),
        }
    }

    fn close(mut self) {
        let _ = self.send(&ToAgent::Bye);
        let deadline = Instant::now() + Duration::from_millis(200);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[derive(Default)]
struct Slot {
    idle: Option<Connection>,
    busy: bool,
}

/// A command that starts an agent process, shared by every rollout of
/// that agent.
pub struct ExternalEndpoint {
    name: String,
    command: Vec<String>,
    timeout: Duration,
    slot: Mutex<Slot>,
    freed: Condvar,
    timeouts: AtomicU64,
}

impl std::fmt::Debug for ExternalEndpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalEndpoint")
            .field("name", &self.name)
            .field("command", &self.command)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl ExternalEndpoint {
    pub fn new(name: impl Into<String>, command: Vec<String>, timeout: Duration) -> Self {
        Self {
            name: name.into(),
            command,
            timeout,
            slot: Mutex::new(Slot::default()),
            freed: Condvar::new(),
            timeouts: AtomicU64::new(0),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn command(&self) -> &[String] {
        &self.command
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    /// Timeouts over the endpoint's whole lifetime.
    pub fn total_timeouts(&self) -> u64 {
        self.timeouts.load(Ordering::Relaxed)
    }

    /// Wait for exclusive use, reusing the idle child if there is one.
    fn checkout(&self, space: SpaceConfig) -> Result<Connection, AgentError> {
        let mut slot = self.slot.lock().expect("endpoint lock");
        while slot.busy {
            slot = self.freed.wait(slot).expect("endpoint lock");
        }
        slot.busy = true;
        let idle = slot.idle.take();
        drop(slot);
        match idle {
            Some(c) => Ok(c),
            None => Connection::open(&self.command, space).inspect_err(|_| self.release(None)),
        }
    }

    fn release(&self, conn: Option<Connection>) {
        let mut slot = self.slot.lock().expect("endpoint lock");
        slot.idle = conn;
        slot.busy = false;
        self.freed.notify_one();
    }
}

impl Drop for ExternalEndpoint {
    fn drop(&mut self) {
        if let Some(c) = self.slot.get_mut().ok().and_then(|s| s.idle.take()) {
            c.close();
        }
    }
}

/// Per-rollout proxy for an [`ExternalEndpoint`].
pub struct ExternalAgent {
    endpoint: Arc<ExternalEndpoint>,
    space: SpaceConfig,
    conn: Option<Connection>,
    checked_out: bool,
    episode: u64,
    timeouts: u64,
}

impl ExternalAgent {
    pub fn new(endpoint: Arc<ExternalEndpoint>, space: SpaceConfig) -> Self {
        Self { endpoint, space, conn: None, checked_out: false, episode: 0, timeouts: 0 }
    }

    fn fail(&mut self, e: AgentError) -> AgentError {
        if let Some(c) = self.conn.take() {
            c.close();
        }
        e
    }

    fn exchange(&mut self, history: &History, rng: &mut StreamRng) -> Result<Action, AgentError> {
        let percept = history.last_percept().ok_or(AgentError::Protocol("no percept yet".into()))?;
        let timeout = self.endpoint.timeout;
        let conn = self.conn.as_mut().ok_or_else(|| AgentError::Transport("episode not started".into()))?;
        conn.send(&ToAgent::Percept {
            o: percept.observation,
            r_num: percept.reward,
            cycle: history.cycle_count(),
            episode: self.episode,
        })?;
        let deadline = Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match conn.receive(left)? {
                Some(FromAgent::Action { .. }) if conn.stale > 0 => conn.stale -= 1,
                Some(FromAgent::Action { a }) => {
                    let index = u32::try_from(a)
                        .ok()
                        .filter(|&i| i < self.space.action_count)
                        .ok_or_else(|| AgentError::Protocol(format!("action {a} out of range")))?;
                    return Ok(self.space.action(index).expect("checked range"));
                }
                Some(other) => return Err(AgentError::Protocol(format!("expected action, got {other:?}"))),
                None => {
                    conn.stale += 1;
                    self.timeouts += 1;
                    self.endpoint.timeouts.fetch_add(1, Ordering::Relaxed);
                    log::warn!(
                        "agent {} timed out at cycle {} of episode {}; substituting a uniform action",
                        self.endpoint.name,
                        history.cycle_count(),
                        self.episode
                    );
                    return Ok(Action::new(rng.gen_range(0..self.space.action_count)));
                }
            }
        }
    }
}

impl Agent for ExternalAgent {
    fn name(&self) -> &str {
        &self.endpoint.name
    }

    fn policy(&self, _history: &History) -> Option<Vec<f64>> {
        None
    }

    fn begin_episode(&mut self, episode: u64) -> Result<(), AgentError> {
        self.episode = episode;
        if !self.checked_out {
            self.conn = Some(self.endpoint.checkout(self.space)?);
            self.checked_out = true;
        } else if self.conn.is_none() {
            self.conn = Some(Connection::open(&self.endpoint.command, self.space)?);
        }
        let conn = self.conn.as_mut().expect("just checked out");
        let res = conn.send(&ToAgent::Reset { episode });
        res.map_err(|e| self.fail(e))
    }

    fn act(&mut self, history: &History, rng: &mut StreamRng) -> Result<Action, AgentError> {
        self.exchange(history, rng).map_err(|e| self.fail(e))
    }

    fn timeouts(&self) -> u64 {
        self.timeouts
    }
}

impl Drop for ExternalAgent {
    fn drop(&mut self) {
        if self.checked_out {
            self.endpoint.release(self.conn.take());
        }
    }
}
