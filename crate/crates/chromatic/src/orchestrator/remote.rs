//! Multi-process worker pool: newline-delimited JSON over TCP.
//!
//! Flow: a worker connects and sends `hello`; the coordinator answers
//! `hello_ack` with the static run info (or `reject` on a protocol/build
//! mismatch). Before the first task of each weights version the coordinator
//! broadcasts a `weights` message; tasks then reference the version and carry
//! perturbations as seeds only. Workers answer each `task` with `result` or
//! `task_error`. A worker that disconnects or times out gets its in-flight
//! task requeued; each task is retried at most once.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::es::Normalizer;
use crate::orchestrator::pool::{evaluate_task, EvalContext, EvalTask, TaskKind, TaskResult, WorkerPool};

pub const PROTOCOL_VERSION: u32 = 1;

pub fn build_tag() -> String {
    format!("chromatic-{}", env!("CARGO_PKG_VERSION"))
}

/// Static per-run information delivered in the handshake.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunInfo {
    pub layer_dims: Vec<usize>,
    pub num_partitions: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    Hello {
        protocol_version: u32,
        build: String,
    },
    HelloAck {
        protocol_version: u32,
        build: String,
        run: RunInfo,
    },
    Reject {
        reason: String,
    },
    Weights {
        weights_version: u64,
        weights: Vec<f64>,
        biases: Vec<Vec<f64>>,
        normalizer: Normalizer,
        sigma: f64,
        perturb_biases: bool,
    },
    Task {
        task_id: u64,
        kind: TaskKind,
        weights_version: u64,
        perturb_seed: u64,
        assignment: Vec<usize>,
        env: String,
        env_seed: u64,
        horizon: usize,
    },
    Result {
        task_id: u64,
        reward: f64,
        steps: u64,
        obs_stats: Normalizer,
    },
    TaskError {
        task_id: u64,
        message: String,
    },
}

fn send_message(stream: &mut TcpStream, msg: &WireMessage) -> Result<()> {
    let mut line = serde_json::to_string(msg)?;
    line.push('\n');
    stream.write_all(line.as_bytes())?;
    stream.flush()?;
    Ok(())
}

fn read_message(reader: &mut BufReader<TcpStream>) -> Result<Option<WireMessage>> {
    let mut line = String::new();
    let n = reader.read_line(&mut line)?;
    if n == 0 {
        return Ok(None); // clean EOF
    }
    Ok(Some(serde_json::from_str(line.trim_end()).map_err(|e| {
        Error::Protocol(format!("bad message: {e}"))
    })?))
}

struct WorkerConn {
    stream: TcpStream,
    reader: BufReader<TcpStream>,
    sent_version: Option<u64>,
    alive: bool,
    peer: SocketAddr,
}

/// Coordinator side of the TCP pool.
pub struct RemotePool {
    listener: TcpListener,
    run: RunInfo,
    workers: Vec<WorkerConn>,
    task_timeout: Duration,
    accept_timeout: Duration,
}

impl RemotePool {
    pub fn bind(addr: &str, run: RunInfo, task_timeout: Duration) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(Self {
            listener,
            run,
            workers: Vec::new(),
            task_timeout,
            accept_timeout: Duration::from_secs(30),
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    pub fn connected_workers(&self) -> usize {
        self.workers.iter().filter(|w| w.alive).count()
    }

    /// Blocks until at least `n` workers have completed the handshake.
    pub fn wait_for_workers(&mut self, n: usize, deadline: Duration) -> Result<()> {
        let start = Instant::now();
        loop {
            self.accept_pending()?;
            if self.connected_workers() >= n {
                return Ok(());
            }
            if start.elapsed() > deadline {
                return Err(Error::WorkerFailure(format!(
                    "only {} of {} workers connected within {:?}",
                    self.connected_workers(),
                    n,
                    deadline
                )));
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }

    fn accept_pending(&mut self) -> Result<()> {
        loop {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    if let Ok(conn) = self.handshake(stream, peer) {
                        self.workers.push(conn);
                    }
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => return Ok(()),
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn handshake(&self, mut stream: TcpStream, peer: SocketAddr) -> Result<WorkerConn> {
        stream.set_read_timeout(Some(Duration::from_secs(5)))?;
        stream.set_nodelay(true)?;
        let mut reader = BufReader::new(stream.try_clone()?);
        match read_message(&mut reader)? {
            Some(WireMessage::Hello {
                protocol_version,
                build,
            }) => {
                if protocol_version != PROTOCOL_VERSION || build != build_tag() {
                    let _ = send_message(
                        &mut stream,
                        &WireMessage::Reject {
                            reason: format!(
                                "version mismatch: coordinator {} ({}), worker {} ({})",
                                PROTOCOL_VERSION,
                                build_tag(),
                                protocol_version,
                                build
                            ),
                        },
                    );
                    return Err(Error::Protocol("handshake rejected".into()));
                }
                send_message(
                    &mut stream,
                    &WireMessage::HelloAck {
                        protocol_version: PROTOCOL_VERSION,
                        build: build_tag(),
                        run: self.run.clone(),
                    },
                )?;
                stream.set_read_timeout(Some(self.task_timeout))?;
                Ok(WorkerConn {
                    stream,
                    reader,
                    sent_version: None,
                    alive: true,
                    peer,
                })
            }
            _ => Err(Error::Protocol("expected hello".into())),
        }
    }
}

fn serve_one_task(
    conn: &mut WorkerConn,
    ctx: &EvalContext,
    task: &EvalTask,
) -> Result<TaskResult> {
    if conn.sent_version != Some(ctx.weights_version) {
        send_message(
            &mut conn.stream,
            &WireMessage::Weights {
                weights_version: ctx.weights_version,
                weights: ctx.weights.clone(),
                biases: ctx.biases.clone(),
                normalizer: ctx.normalizer.clone(),
                sigma: ctx.sigma,
                perturb_biases: ctx.perturb_biases,
            },
        )?;
        conn.sent_version = Some(ctx.weights_version);
    }
    send_message(
        &mut conn.stream,
        &WireMessage::Task {
            task_id: task.task_id,
            kind: task.kind,
            weights_version: ctx.weights_version,
            perturb_seed: task.perturb_seed,
            assignment: task.assignment.clone(),
            env: ctx.env.clone(),
            env_seed: task.env_seed,
            horizon: ctx.horizon,
        },
    )?;
    match read_message(&mut conn.reader)? {
        Some(WireMessage::Result {
            task_id,
            reward,
            steps,
            obs_stats,
        }) => {
            if task_id != task.task_id {
                return Err(Error::Protocol(format!(
                    "result for task {task_id}, expected {}",
                    task.task_id
                )));
            }
            Ok(TaskResult {
                task_id,
                reward,
                steps,
                obs_stats,
            })
        }
        // Task-level failure: the connection stays usable.
        Some(WireMessage::TaskError { task_id, message }) => Err(Error::WorkerFailure(format!(
            "worker {} failed task {task_id}: {message}",
            conn.peer
        ))),
        Some(other) => Err(Error::Protocol(format!(
            "unexpected message {other:?} while awaiting result"
        ))),
        None => Err(Error::Protocol(format!("worker {} disconnected", conn.peer))),
    }
}

impl WorkerPool for RemotePool {
    fn dispatch(&mut self, ctx: &EvalContext, tasks: &[EvalTask]) -> Result<Vec<TaskResult>> {
        if tasks.is_empty() {
            return Ok(Vec::new());
        }
        let mut results: Vec<TaskResult> = Vec::with_capacity(tasks.len());
        // (task index, attempts so far)
        let mut pending: VecDeque<(usize, u32)> = (0..tasks.len()).map(|i| (i, 0)).collect();

        loop {
            self.accept_pending()?;
            if self.connected_workers() == 0 {
                // Allow reconnection before giving up.
                let start = Instant::now();
                while self.connected_workers() == 0 {
                    if start.elapsed() > self.accept_timeout {
                        return Err(Error::WorkerFailure(
                            "no connected workers".into(),
                        ));
                    }
                    std::thread::sleep(Duration::from_millis(10));
                    self.accept_pending()?;
                }
            }

            let queue = Mutex::new(std::mem::take(&mut pending));
            let done = Mutex::new(Vec::<TaskResult>::new());
            let requeue = Mutex::new(Vec::<(usize, u32)>::new());
            let fatal = Mutex::new(Vec::<String>::new());

            std::thread::scope(|scope| {
                let queue = &queue;
                let done = &done;
                let requeue = &requeue;
                let fatal = &fatal;
                for conn in self.workers.iter_mut().filter(|w| w.alive) {
                    scope.spawn(move || loop {
                        let item = queue.lock().unwrap().pop_front();
                        let Some((idx, attempts)) = item else { break };
                        match serve_one_task(conn, ctx, &tasks[idx]) {
                            Ok(result) => done.lock().unwrap().push(result),
                            // Task failed on a healthy connection: retry it
                            // (possibly elsewhere), keep serving.
                            Err(Error::WorkerFailure(msg)) => {
                                if attempts + 1 >= 2 {
                                    fatal.lock().unwrap().push(format!(
                                        "task {} failed twice: {msg}",
                                        tasks[idx].task_id
                                    ));
                                } else {
                                    requeue.lock().unwrap().push((idx, attempts + 1));
                                }
                            }
                            // Connection-level failure: requeue and drop the
                            // worker.
                            Err(e) => {
                                conn.alive = false;
                                if attempts + 1 >= 2 {
                                    fatal.lock().unwrap().push(format!(
                                        "task {} failed twice: {e}",
                                        tasks[idx].task_id
                                    ));
                                } else {
                                    requeue.lock().unwrap().push((idx, attempts + 1));
                                }
                                break;
                            }
                        }
                    });
                }
            });

            let fatal = fatal.into_inner().unwrap();
            if let Some(msg) = fatal.first() {
                return Err(Error::WorkerFailure(msg.clone()));
            }
            results.extend(done.into_inner().unwrap());
            let mut leftovers: VecDeque<(usize, u32)> = queue.into_inner().unwrap();
            leftovers.extend(requeue.into_inner().unwrap());
            self.workers.retain(|w| w.alive);
            if leftovers.is_empty() {
                break;
            }
            pending = leftovers;
        }

        results.sort_by_key(|r| r.task_id);
        if results.len() != tasks.len() {
            return Err(Error::WorkerFailure(format!(
                "{} of {} tasks completed",
                results.len(),
                tasks.len()
            )));
        }
        Ok(results)
    }
}

// ---------------------------------------------------------------------------
// Worker client
// ---------------------------------------------------------------------------

struct WorkerCtx {
    run: RunInfo,
    weights_version: u64,
    weights: Vec<f64>,
    biases: Vec<Vec<f64>>,
    normalizer: Normalizer,
    sigma: f64,
    perturb_biases: bool,
}

/// Long-running worker process body: connect, handshake, evaluate tasks until
/// the coordinator disconnects. Reconnects up to `max_reconnects` times, so a
/// worker started before the coordinator (or surviving a coordinator restart)
/// joins idempotently.
pub fn run_worker(addr: &str, max_reconnects: u32) -> Result<()> {
    let mut attempts = 0u32;
    loop {
        if let Ok(stream) = TcpStream::connect(addr) { match serve_connection(stream) {
            Ok(()) => return Ok(()),
            Err(Error::Protocol(reason)) => return Err(Error::Protocol(reason)),
            Err(_) => {}
        } }
        attempts += 1;
        if attempts > max_reconnects {
            return Err(Error::WorkerFailure(format!(
                "could not reach coordinator at {addr} after {max_reconnects} retries"
            )));
        }
        std::thread::sleep(Duration::from_millis(300));
    }
}

fn serve_connection(mut stream: TcpStream) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    send_message(
        &mut stream,
        &WireMessage::Hello {
            protocol_version: PROTOCOL_VERSION,
            build: build_tag(),
        },
    )?;
    let run = match read_message(&mut reader)? {
        Some(WireMessage::HelloAck { run, .. }) => run,
        Some(WireMessage::Reject { reason }) => {
            return Err(Error::Protocol(format!("rejected by coordinator: {reason}")))
        }
        other => return Err(Error::Protocol(format!("unexpected handshake reply: {other:?}"))),
    };
    let mut ctx: Option<WorkerCtx> = None;

    loop {
        match read_message(&mut reader)? {
            None => return Ok(()),
            Some(WireMessage::Weights {
                weights_version,
                weights,
                biases,
                normalizer,
                sigma,
                perturb_biases,
            }) => {
                ctx = Some(WorkerCtx {
                    run: run.clone(),
                    weights_version,
                    weights,
                    biases,
                    normalizer,
                    sigma,
                    perturb_biases,
                });
            }
            Some(WireMessage::Task {
                task_id,
                kind,
                weights_version,
                perturb_seed,
                assignment,
                env,
                env_seed,
                horizon,
            }) => {
                let reply = match &ctx {
                    Some(c) if c.weights_version == weights_version => {
                        let eval_ctx = EvalContext {
                            weights_version,
                            layer_dims: c.run.layer_dims.clone(),
                            num_partitions: c.run.num_partitions,
                            env,
                            horizon,
                            sigma: c.sigma,
                            perturb_biases: c.perturb_biases,
                            weights: c.weights.clone(),
                            biases: c.biases.clone(),
                            normalizer: c.normalizer.clone(),
                        };
                        let task = EvalTask {
                            task_id,
                            kind,
                            perturb_seed,
                            env_seed,
                            assignment,
                        };
                        match evaluate_task(&eval_ctx, &task) {
                            Ok(r) => WireMessage::Result {
                                task_id: r.task_id,
                                reward: r.reward,
                                steps: r.steps,
                                obs_stats: r.obs_stats,
                            },
                            Err(e) => WireMessage::TaskError {
                                task_id,
                                message: e.to_string(),
                            },
                        }
                    }
                    _ => WireMessage::TaskError {
                        task_id,
                        message: format!("weights version {weights_version} not loaded"),
                    },
                };
                send_message(&mut stream, &reply)?;
            }
            Some(other) => {
                return Err(Error::Protocol(format!("unexpected message: {other:?}")));
            }
        }
    }
}
