//! In-process transport: each client runs on its own thread and exchanges
//! encoded frames with the coordinator over channels.

use std::sync::mpsc::{self, Receiver, Sender};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::log::RoundLog;
use super::pool::{run_client, ClientData, ClientLink, ClientSummary, FrameSink, Inbound, RemotePool};
use super::ProtocolError;
use crate::dual::client::ClientParams;
use crate::dual::solver::{finish_solve, Coordinator, HyperParams, SolveError, SolveResult};
use crate::measures::ProblemInstance;

struct ChannelSink(Sender<Vec<u8>>);

impl FrameSink for ChannelSink {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), ProtocolError> {
        self.0.send(frame.to_vec()).map_err(|_| ProtocolError::Disconnected { client: 0 })
    }
}

struct ChannelLink {
    slot: usize,
    up: Sender<Inbound>,
    down: Receiver<Vec<u8>>,
}

impl ClientLink for ChannelLink {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), ProtocolError> {
        self.up
            .send(Inbound::Frame {
                slot: self.slot,
                frame: frame.to_vec(),
            })
            .map_err(|_| ProtocolError::CoordinatorClosed)
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, ProtocolError> {
        self.down.recv().map_err(|_| ProtocolError::CoordinatorClosed)
    }
}

/// Handles of the client threads.
pub struct ChannelClients {
    handles: Vec<JoinHandle<Result<ClientSummary, ProtocolError>>>,
}

impl ChannelClients {
    /// Waits for every client; summaries are sorted by client id.
    pub fn join(self) -> Result<Vec<ClientSummary>, ProtocolError> {
        let mut out = Vec::with_capacity(self.handles.len());
        for h in self.handles {
            out.push(h.join().map_err(|_| ProtocolError::Unexpected("client thread panicked".into()))??);
        }
        out.sort_by_key(|s| s.id);
        Ok(out)
    }
}

/// Starts one thread per client, connected in the given order.
pub fn spawn_channel_clients(
    clients: Vec<ClientData>,
    k: usize,
    params: ClientParams,
    timeout: Duration,
) -> (RemotePool, ChannelClients) {
    let (up, inbox) = mpsc::channel();
    let mut sinks: Vec<Box<dyn FrameSink>> = Vec::with_capacity(clients.len());
    let mut handles = Vec::with_capacity(clients.len());
    for (slot, data) in clients.into_iter().enumerate() {
        let (down_tx, down_rx) = mpsc::channel();
        sinks.push(Box::new(ChannelSink(down_tx)));
        let mut link = ChannelLink {
            slot,
            up: up.clone(),
            down: down_rx,
        };
        handles.push(thread::spawn(move || {
            let out = run_client(&mut link, data);
            if let Err(e) = &out {
                let _ = link.up.send(Inbound::Closed {
                    slot,
                    error: Some(e.to_string()),
                });
            }
            out
        }));
    }
    (RemotePool::new(k, params, inbox, sinks, timeout), ChannelClients { handles })
}

/// Runs the coordinator over an already connected pool and shuts the
/// clients down on failure.
pub(crate) fn drive(pool: &mut RemotePool, instance: &ProblemInstance, hyper: &HyperParams) -> Result<crate::dual::solver::CoordinatorOutcome, SolveError> {
    let run = Coordinator::new(instance.num_candidates(), instance.support_size(), hyper.clone())
        .and_then(|mut c| c.run(pool));
    if let Err(e) = &run {
        pool.abort(&e.to_string());
    }
    run
}

/// All-in-one solve with clients as concurrent in-process workers.
pub fn solve_in_process(
    instance: &ProblemInstance,
    hyper: &HyperParams,
    timeout: Duration,
) -> Result<(SolveResult, RoundLog), SolveError> {
    hyper.validate(instance.num_candidates())?;
    let started = Instant::now();
    let data = (0..instance.num_clients())
        .map(|s| ClientData::from_instance(instance, s))
        .collect();
    let (mut pool, clients) = spawn_channel_clients(data, instance.num_candidates(), hyper.client_params(), timeout);
    let outcome = drive(&mut pool, instance, hyper);
    let log = pool.into_log();
    let summaries = clients.join();
    let outcome = outcome?;
    let summaries = summaries?;
    let total_ms = started.elapsed().as_secs_f64() * 1e3;
    let local = summaries.into_iter().map(|s| s.dual).collect();
    let result = finish_solve(instance, hyper, outcome, Some(local), total_ms)?;
    Ok((result, log))
}
