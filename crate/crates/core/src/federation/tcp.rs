//! TCP transport: one reader thread per accepted connection feeds the
//! coordinator's inbox; writes go straight to the socket.

use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Sender};
use std::thread;
use std::time::{Duration, Instant};

use super::channel::drive;
use super::log::RoundLog;
use super::pool::{run_client, ClientData, ClientLink, FrameSink, Inbound, RemotePool};
use super::{read_frame, write_frame, ProtocolError};
use crate::dual::client::ClientParams;
use crate::dual::solver::{finish_solve, HyperParams, SolveError, SolveResult};
use crate::measures::ProblemInstance;

const POLL: Duration = Duration::from_millis(5);

struct TcpSink(TcpStream);

impl FrameSink for TcpSink {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), ProtocolError> {
        write_frame(&mut self.0, frame)
    }
}

impl Drop for TcpSink {
    // also unblocks the reader thread holding a clone of the socket
    fn drop(&mut self) {
        let _ = self.0.shutdown(std::net::Shutdown::Both);
    }
}

fn spawn_reader(mut stream: TcpStream, slot: usize, inbox: Sender<Inbound>) {
    thread::spawn(move || loop {
        match read_frame(&mut stream) {
            Ok(Some(frame)) => {
                if inbox.send(Inbound::Frame { slot, frame }).is_err() {
                    return;
                }
            }
            Ok(None) => {
                let _ = inbox.send(Inbound::Closed { slot, error: None });
                return;
            }
            Err(e) => {
                let _ = inbox.send(Inbound::Closed {
                    slot,
                    error: Some(e.to_string()),
                });
                return;
            }
        }
    });
}

/// Accepts `n` client connections and completes the handshake.
pub fn accept_clients(
    listener: &TcpListener,
    n: usize,
    k: usize,
    params: ClientParams,
    timeout: Duration,
) -> Result<RemotePool, ProtocolError> {
    listener.set_nonblocking(true)?;
    let deadline = Instant::now() + timeout;
    let (tx, inbox) = mpsc::channel();
    let mut sinks: Vec<Box<dyn FrameSink>> = Vec::with_capacity(n);
    while sinks.len() < n {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::info!("client connected from {peer}");
                stream.set_nonblocking(false)?;
                stream.set_nodelay(true)?;
                spawn_reader(stream.try_clone()?, sinks.len(), tx.clone());
                sinks.push(Box::new(TcpSink(stream)));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(ProtocolError::Handshake(format!(
                        "only {} of {n} clients connected before the deadline",
                        sinks.len()
                    )));
                }
                thread::sleep(POLL);
            }
            Err(e) => return Err(e.into()),
        }
    }
    let mut pool = RemotePool::new(k, params, inbox, sinks, timeout);
    pool.handshake()?;
    Ok(pool)
}

pub struct TcpLink {
    stream: TcpStream,
}

impl ClientLink for TcpLink {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), ProtocolError> {
        write_frame(&mut self.stream, frame)
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, ProtocolError> {
        read_frame(&mut self.stream)?.ok_or(ProtocolError::CoordinatorClosed)
    }
}

/// Connects to a coordinator, retrying until `patience` runs out.
pub fn connect_client<A: ToSocketAddrs>(addr: A, patience: Duration) -> Result<TcpLink, ProtocolError> {
    let deadline = Instant::now() + patience;
    let addrs: Vec<_> = addr.to_socket_addrs()?.collect();
    loop {
        let mut last = None;
        for a in &addrs {
            match TcpStream::connect(a) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    return Ok(TcpLink { stream });
                }
                Err(e) => last = Some(e),
            }
        }
        if Instant::now() >= deadline {
            return Err(last.map_or(ProtocolError::Handshake("no address to connect to".into()), Into::into));
        }
        thread::sleep(Duration::from_millis(50));
    }
}

/// Coordinator role: waits for every client of `instance` on `listener` and
/// runs to completion. Local multipliers stay with the clients.
pub fn serve_tcp(
    listener: &TcpListener,
    instance: &ProblemInstance,
    hyper: &HyperParams,
    timeout: Duration,
) -> Result<(SolveResult, RoundLog), SolveError> {
    hyper.validate(instance.num_candidates())?;
    let started = Instant::now();
    let mut pool = accept_clients(
        listener,
        instance.num_clients(),
        instance.num_candidates(),
        hyper.client_params(),
        timeout,
    )?;
    let outcome = drive(&mut pool, instance, hyper);
    let log = pool.into_log();
    let total_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok((finish_solve(instance, hyper, outcome?, None, total_ms)?, log))
}

/// Coordinator on `listen` with every client as a local thread talking TCP.
pub fn solve_tcp(
    instance: &ProblemInstance,
    hyper: &HyperParams,
    listen: &str,
    timeout: Duration,
) -> Result<(SolveResult, RoundLog), SolveError> {
    hyper.validate(instance.num_candidates())?;
    let started = Instant::now();
    let listener = TcpListener::bind(listen).map_err(ProtocolError::from)?;
    let addr = listener.local_addr().map_err(ProtocolError::from)?;
    let handles: Vec<_> = (0..instance.num_clients())
        .map(|s| {
            let data = ClientData::from_instance(instance, s);
            thread::spawn(move || {
                let mut link = connect_client(addr, timeout)?;
                run_client(&mut link, data)
            })
        })
        .collect();
    let mut pool = accept_clients(
        &listener,
        instance.num_clients(),
        instance.num_candidates(),
        hyper.client_params(),
        timeout,
    )?;
    let outcome = drive(&mut pool, instance, hyper);
    let log = pool.into_log();
    let mut local = Vec::with_capacity(handles.len());
    for h in handles {
        let summary = h
            .join()
            .map_err(|_| ProtocolError::Unexpected("client thread panicked".into()))?;
        local.push(summary?);
    }
    let outcome = outcome?;
    local.sort_by_key(|s| s.id);
    let total_ms = started.elapsed().as_secs_f64() * 1e3;
    let result = finish_solve(
        instance,
        hyper,
        outcome,
        Some(local.into_iter().map(|s| s.dual).collect()),
        total_ms,
    )?;
    Ok((result, log))
}
