//! Live session endpoint: a fixed-rate step loop streaming poses to
//! WebSocket clients.
//!
//! One thread owns the controller and runs the step loop. Client I/O runs on
//! a tokio runtime and talks to it through a latest-value cell for control
//! and a broadcast channel for poses, so slow observers drop frames instead
//! of building a backlog.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, watch};
use tokio_tungstenite::tungstenite::Message;

use super::{
    ClientMessage, ControlInput, ControllerConfig, ControllerState, PoseFrame, Role, ServerMessage, StyleSelection,
    StyleTable, StyleTelemetry,
};
use crate::error::{Error, Result};
use crate::model::StyleModel;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    pub controller: ControllerConfig,
    /// Starting style; the table's first entry when absent.
    pub style: Option<StyleSelection>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            addr: SocketAddr::from(([127, 0, 0, 1], 0)),
            controller: ControllerConfig::default(),
            style: None,
        }
    }
}

struct Shared {
    styles: Arc<StyleTable>,
    control: watch::Sender<ControlInput>,
    poses: broadcast::Sender<Arc<str>>,
    controller: Mutex<Option<u64>>,
    next_id: AtomicU64,
    hello_styles: Vec<String>,
    fps: f32,
}

/// Running session. Dropping it stops the server.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    shutdown: watch::Sender<bool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn stop(mut self) {
        self.halt();
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.shutdown.send(true);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.halt();
    }
}

/// Binds, then runs the session in background threads.
pub fn spawn_server(model: Arc<StyleModel>, styles: Arc<StyleTable>, cfg: ServerConfig) -> Result<ServerHandle> {
    let selection = match cfg.style.clone().or_else(|| styles.default_selection()) {
        Some(s) => s,
        None => return Err(Error::invalid("no styles to serve")),
    };
    styles.resolve(&selection)?;
    let mut state = ControllerState::rest(&model, cfg.controller)?;
    let skeleton = model.skeleton.clone().expect("checked by the controller");
    let fps = cfg.controller.fps;

    let (control_tx, control_rx) = watch::channel(ControlInput::idle(selection.clone()));
    let (pose_tx, _) = broadcast::channel(4);
    let (shutdown_tx, shutdown_rx) = watch::channel(false);
    let stop = Arc::new(AtomicBool::new(false));
    let shared = Arc::new(Shared {
        styles: styles.clone(),
        control: control_tx,
        poses: pose_tx.clone(),
        controller: Mutex::new(None),
        next_id: AtomicU64::new(0),
        hello_styles: styles.names(),
        fps,
    });

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(1)
        .enable_all()
        .build()?;
    let std_listener = std::net::TcpListener::bind(cfg.addr)?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;

    let io_thread = {
        let shared = shared.clone();
        std::thread::Builder::new().name("session-io".into()).spawn(move || {
            runtime.block_on(async move {
                let listener = match TcpListener::from_std(std_listener) {
                    Ok(l) => l,
                    Err(e) => {
                        log::error!("listener: {e}");
                        return;
                    }
                };
                accept_loop(listener, shared, shutdown_rx, skeleton).await;
            });
        })?
    };

    let step_thread = {
        let stop = stop.clone();
        std::thread::Builder::new().name("session-step".into()).spawn(move || {
            let period = Duration::from_secs_f64(1.0 / fps as f64);
            let start = Instant::now();
            let mut tick: u64 = 0;
            while !stop.load(Ordering::SeqCst) {
                let current = control_rx.borrow().clone();
                match state.step(&current, &model, &styles) {
                    Ok(report) => {
                        if let Some(d) = report.diagnostic {
                            log::warn!("{d}");
                        }
                        let frame = PoseFrame::new(
                            tick,
                            fps,
                            &state.pose,
                            StyleTelemetry {
                                selection: current.style.clone(),
                                gating: report.gating,
                            },
                        );
                        let _ = pose_tx.send(ServerMessage::Pose(frame).to_json().into());
                    }
                    Err(e) => log::warn!("step failed: {e}"),
                }
                // next tick on the wall clock; late steps skip ticks instead of queueing
                let elapsed = start.elapsed();
                let due = (elapsed.as_secs_f64() / period.as_secs_f64()).floor() as u64 + 1;
                tick = due.max(tick + 1);
                let wake = start + period.mul_f64(tick as f64);
                let now = Instant::now();
                if wake > now {
                    std::thread::sleep(wake - now);
                }
            }
        })?
    };

    Ok(ServerHandle {
        addr,
        stop,
        shutdown: shutdown_tx,
        threads: vec![step_thread, io_thread],
    })
}

async fn accept_loop(
    listener: TcpListener,
    shared: Arc<Shared>,
    mut shutdown: watch::Receiver<bool>,
    skeleton: crate::motion::Skeleton,
) {
    let skeleton = Arc::new(skeleton);
    loop {
        tokio::select! {
            r = listener.accept() => match r {
                Ok((stream, peer)) => {
                    let shared = shared.clone();
                    let shutdown = shutdown.clone();
                    let skeleton = skeleton.clone();
                    tokio::spawn(async move {
                        if let Err(e) = connection(stream, shared, shutdown, skeleton).await {
                            log::debug!("client {peer}: {e}");
                        }
                    });
                }
                Err(e) => log::warn!("accept failed: {e}"),
            },
            _ = shutdown.changed() => break,
        }
    }
}

fn ws_err(e: tokio_tungstenite::tungstenite::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

async fn connection(
    stream: TcpStream,
    shared: Arc<Shared>,
    mut shutdown: watch::Receiver<bool>,
    skeleton: Arc<crate::motion::Skeleton>,
) -> Result<()> {
    let ws = tokio_tungstenite::accept_async(stream).await.map_err(ws_err)?;
    let (mut tx, mut rx) = ws.split();
    let id = shared.next_id.fetch_add(1, Ordering::SeqCst);
    let mut poses = shared.poses.subscribe();
    let hello = ServerMessage::hello(&skeleton, shared.fps, shared.hello_styles.clone(), Role::Observer);
    tx.send(Message::Text(hello.to_json())).await.map_err(ws_err)?;

    let result = loop {
        tokio::select! {
            msg = rx.next() => {
                let text = match msg {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None => break Ok(()),
                    Some(Ok(_)) => continue,
                    Some(Err(e)) => break Err(ws_err(e)),
                };
                if let Some(reply) = handle_message(&text, id, &shared) {
                    if let Err(e) = tx.send(Message::Text(reply.to_json())).await {
                        break Err(ws_err(e));
                    }
                }
            }
            p = poses.recv() => match p {
                Ok(frame) => {
                    if let Err(e) = tx.send(Message::Text(frame.to_string())).await {
                        break Err(ws_err(e));
                    }
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => break Ok(()),
            },
            _ = shutdown.changed() => break Ok(()),
        }
    };

    let mut owner = shared.controller.lock().expect("controller lock");
    if *owner == Some(id) {
        *owner = None;
        shared.control.send_modify(|c| *c = ControlInput::idle(c.style.clone()));
    }
    result
}

/// Applies one client message; returns the reply, if any.
fn handle_message(text: &str, id: u64, shared: &Shared) -> Option<ServerMessage> {
    let msg = match ClientMessage::parse(text) {
        Ok(m) => m,
        Err(e) => return Some(ServerMessage::error(e.to_string())),
    };
    let mut owner = shared.controller.lock().expect("controller lock");
    match msg {
        ClientMessage::ClaimControl => {
            *owner = Some(id);
            Some(ServerMessage::Role { role: Role::Controller })
        }
        m @ ClientMessage::Control { .. } => {
            let newly = match *owner {
                None => {
                    *owner = Some(id);
                    true
                }
                Some(o) if o == id => false,
                Some(_) => return Some(ServerMessage::error("another client has control; send claim_control")),
            };
            let current = shared.control.borrow().style.clone();
            let control = m.to_control(&current).expect("control message");
            if let Err(e) = shared.styles.resolve(&control.style) {
                return Some(ServerMessage::error(e.to_string()));
            }
            shared.control.send_replace(control);
            newly.then_some(ServerMessage::Role { role: Role::Controller })
        }
    }
}
