use std::collections::VecDeque;
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use super::log::{Direction, RoundLog};
use super::{decode, encode, Message, ProtocolError};
use crate::dual::client::{ClientParams, LocalClient};
use crate::dual::solver::{ClientPool, SolveError};
use crate::dual::{Batch, ClientReport, LocalCoupling, LocalDual, Selection};
use crate::measures::{client_costs, ProblemInstance};

/// Something arriving at the coordinator from connection `slot`.
#[derive(Debug)]
pub enum Inbound {
    Frame { slot: usize, frame: Vec<u8> },
    Closed { slot: usize, error: Option<String> },
}

/// Coordinator-side write half of one client connection.
pub trait FrameSink: Send {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), ProtocolError>;
}

/// Coordinator side of a federated run over any frame transport.
///
/// Connections are identified by slot until the handshake binds each slot
/// to the client id it requested.
pub struct RemotePool {
    k: usize,
    params: ClientParams,
    inbox: Receiver<Inbound>,
    sinks: Vec<Box<dyn FrameSink>>,
    slot_of: Vec<usize>,
    id_of: Vec<usize>,
    backlog: VecDeque<(usize, Message)>,
    log: RoundLog,
    timeout: Duration,
    last_round: u64,
}

impl RemotePool {
    pub fn new(
        k: usize,
        params: ClientParams,
        inbox: Receiver<Inbound>,
        sinks: Vec<Box<dyn FrameSink>>,
        timeout: Duration,
    ) -> Self {
        Self {
            k,
            params,
            inbox,
            sinks,
            slot_of: Vec::new(),
            id_of: Vec::new(),
            backlog: VecDeque::new(),
            log: RoundLog::new(),
            timeout,
            last_round: 0,
        }
    }

    pub fn log(&self) -> &RoundLog {
        &self.log
    }

    pub fn into_log(self) -> RoundLog {
        self.log
    }

    fn send(&mut self, slot: usize, round: u64, frame: &[u8]) -> Result<(), ProtocolError> {
        self.log.push_frame(Direction::Down, round, frame);
        self.sinks[slot].send_frame(frame)
    }

    fn client_label(&self, slot: usize) -> usize {
        self.id_of.get(slot).copied().unwrap_or(slot)
    }

    /// Next decoded upstream message, or `None` at the deadline.
    fn next(&mut self, deadline: Instant) -> Result<Option<(usize, Message)>, ProtocolError> {
        if let Some(item) = self.backlog.pop_front() {
            return Ok(Some(item));
        }
        let wait = deadline.saturating_duration_since(Instant::now());
        match self.inbox.recv_timeout(wait) {
            Ok(Inbound::Frame { slot, frame }) => {
                let msg = decode(&frame)?;
                self.log
                    .push_frame(Direction::Up, msg.round().unwrap_or(self.last_round), &frame);
                Ok(Some((slot, msg)))
            }
            Ok(Inbound::Closed { slot, error }) => {
                if let Some(e) = error {
                    log::warn!("client in slot {slot} failed: {e}");
                }
                Err(ProtocolError::Disconnected {
                    client: self.client_label(slot),
                })
            }
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(ProtocolError::Disconnected { client: 0 }),
        }
    }

    /// Sends `K` and the step parameters, then binds every connection to
    /// the id its client requests.
    pub fn handshake(&mut self) -> Result<(), ProtocolError> {
        let n = self.sinks.len();
        let greeting = encode(&Message::Hello {
            client_id: None,
            k: Some(self.k),
            params: Some(self.params),
        });
        for slot in 0..n {
            self.send(slot, 0, &greeting)?;
        }
        let deadline = Instant::now() + self.timeout;
        let mut id_of: Vec<Option<usize>> = vec![None; n];
        let mut early = Vec::new();
        while id_of.iter().any(Option::is_none) {
            let Some((slot, msg)) = self.next(deadline)? else {
                let missing = id_of.iter().position(Option::is_none).unwrap_or(0);
                return Err(ProtocolError::Handshake(format!("no hello on connection {missing}")));
            };
            match msg {
                Message::Hello {
                    client_id: Some(id),
                    k: None,
                    params: None,
                } if id_of[slot].is_none() => {
                    if id >= n {
                        return Err(ProtocolError::Handshake(format!("client id {id} out of range for {n} clients")));
                    }
                    if id_of.contains(&Some(id)) {
                        return Err(ProtocolError::Handshake(format!("client id {id} claimed twice")));
                    }
                    id_of[slot] = Some(id);
                }
                Message::Report { .. } if id_of[slot].is_some() => early.push((slot, msg)),
                other => {
                    return Err(ProtocolError::Handshake(format!(
                        "unexpected {} on connection {slot}",
                        other.kind()
                    )))
                }
            }
        }
        self.id_of = id_of.into_iter().map(Option::unwrap).collect();
        self.slot_of = vec![0; n];
        for (slot, &id) in self.id_of.iter().enumerate() {
            self.slot_of[id] = slot;
        }
        self.backlog.extend(early);
        Ok(())
    }

    fn gather_reports(&mut self, round: u64) -> Result<Vec<ClientReport>, ProtocolError> {
        let n = self.sinks.len();
        let deadline = Instant::now() + self.timeout;
        let mut got: Vec<Option<ClientReport>> = vec![None; n];
        while got.iter().any(Option::is_none) {
            let Some((slot, msg)) = self.next(deadline)? else {
                let client = got.iter().position(Option::is_none).unwrap_or(0);
                return Err(ProtocolError::Timeout { client, round });
            };
            let id = self.id_of[slot];
            match msg {
                Message::Report {
                    round: r,
                    client_id,
                    t,
                } if r == round && client_id == id && got[id].is_none() => {
                    got[id] = Some(ClientReport { client_id, round, t });
                }
                other => {
                    return Err(ProtocolError::Unexpected(format!(
                        "{} from client {id} while gathering round {round}",
                        other.kind()
                    )))
                }
            }
        }
        Ok(got.into_iter().map(Option::unwrap).collect())
    }

    fn send_all(&mut self, round: u64, frame: &[u8]) -> Result<(), ProtocolError> {
        for id in 0..self.sinks.len() {
            let slot = self.slot_of.get(id).copied().unwrap_or(id);
            self.send(slot, round, frame)?;
        }
        Ok(())
    }

    /// Best-effort stop after a failure.
    pub fn abort(&mut self, reason: &str) {
        let frame = encode(&Message::Stop { reason: reason.into() });
        for slot in 0..self.sinks.len() {
            let _ = self.sinks[slot].send_frame(&frame);
        }
    }
}

impl ClientPool for RemotePool {
    fn num_clients(&self) -> usize {
        self.sinks.len()
    }

    fn start(&mut self, batch: &Batch) -> Result<(), SolveError> {
        if !batch.is_full() {
            return Err(SolveError::Pool("the first round must report on all candidates".into()));
        }
        if self.id_of.len() != self.sinks.len() {
            self.handshake()?;
        }
        Ok(())
    }

    fn gather(&mut self, round: u64) -> Result<Vec<ClientReport>, SolveError> {
        self.last_round = round;
        Ok(self.gather_reports(round)?)
    }

    fn broadcast(&mut self, round: u64, gamma: &Selection, next_batch: Option<&Batch>) -> Result<(), SolveError> {
        let frame = encode(&Message::broadcast(round, gamma, next_batch));
        Ok(self.send_all(round, &frame)?)
    }

    fn finish(&mut self, reason: &str) -> Result<(), SolveError> {
        let frame = encode(&Message::Stop { reason: reason.into() });
        Ok(self.send_all(self.last_round, &frame)?)
    }
}

/// Client-side connection to the coordinator.
pub trait ClientLink {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), ProtocolError>;
    fn recv_frame(&mut self) -> Result<Vec<u8>, ProtocolError>;
}

/// What a client holds privately.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub id: usize,
    pub costs: DMatrix<f64>,
    pub lambda: f64,
    pub support_size: usize,
}

impl ClientData {
    pub fn from_instance(instance: &ProblemInstance, id: usize) -> Self {
        Self {
            id,
            costs: client_costs(instance, id),
            lambda: instance.clients()[id].weight,
            support_size: instance.support_size(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientSummary {
    pub id: usize,
    pub rounds: u64,
    pub reason: String,
    pub dual: LocalDual,
    pub last_coupling: LocalCoupling,
}

fn recv<L: ClientLink + ?Sized>(link: &mut L) -> Result<Message, ProtocolError> {
    decode(&link.recv_frame()?)
}

/// The client loop shared by every transport: handshake, then report and
/// apply the broadcast selection until the coordinator stops the run.
pub fn run_client<L: ClientLink + ?Sized>(link: &mut L, data: ClientData) -> Result<ClientSummary, ProtocolError> {
    let k = data.costs.ncols();
    let params = match recv(link)? {
        Message::Hello {
            k: Some(theirs),
            params: Some(params),
            ..
        } => {
            if theirs != k {
                return Err(ProtocolError::Handshake(format!(
                    "K mismatch: coordinator has {theirs} candidates, client {} has {k}",
                    data.id
                )));
            }
            params
        }
        Message::Stop { reason } => return Err(ProtocolError::Handshake(format!("stopped before start: {reason}"))),
        other => return Err(ProtocolError::Unexpected(format!("{} before hello", other.kind()))),
    };
    link.send_frame(&encode(&Message::Hello {
        client_id: Some(data.id),
        k: None,
        params: None,
    }))?;

    let mut client = LocalClient::new(data.id, data.costs, data.lambda, data.support_size, params);
    let mut round = 0u64;
    let mut done = false;
    loop {
        if !done {
            let report = client.report(round);
            link.send_frame(&encode(&Message::report(&report)))?;
        }
        match recv(link)? {
            Message::Broadcast {
                round: r,
                gamma,
                theta0_done,
                batch,
            } if !done && r == round && gamma.len() == k => {
                let selection = Selection::from_flags(gamma.iter().map(|&g| g == 1).collect());
                client.apply_selection(round, &selection, !theta0_done);
                round += 1;
                if theta0_done {
                    done = true;
                } else {
                    let next = match batch {
                        Some(idx) if idx.iter().all(|&i| i < k) && !idx.is_empty() => Batch::from_indices(k, idx),
                        Some(_) => return Err(ProtocolError::Unexpected("invalid batch in broadcast".into())),
                        None => Batch::full(k),
                    };
                    client.set_batch(next);
                }
            }
            Message::Stop { reason } => {
                return Ok(ClientSummary {
                    id: data.id,
                    rounds: round,
                    reason,
                    dual: client.dual().clone(),
                    last_coupling: client.last_coupling().clone(),
                })
            }
            other => {
                return Err(ProtocolError::Unexpected(format!(
                    "{} at round {round} on client {}",
                    other.kind(),
                    data.id
                )))
            }
        }
    }
}
