use std::cell::RefCell;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::rc::Rc;
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;

use super::profile::NetProfile;
use super::shaper::LinkShaper;
use crate::client::{least_loaded, ArrivalPool, Arrivals, BatchFetcher, ClientError, PendingBatch};
use crate::model::{BatchTag, FetchedItem, Label, SampleId};
use crate::store::{StoreBackend, StoreError};
use crate::wire::{sample_payload_len, PREFIX_LEN};

/// Frame bytes around a payload: prefix, request id, code, table and payload
/// lengths.
const FRAME_OVERHEAD: usize = PREFIX_LEN + 8 + 1 + 2 + 4;

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub profile: NetProfile,
    pub connections: usize,
    pub max_inflight_per_connection: usize,
    /// Server time per request.
    pub service_time: Duration,
}

impl SimConfig {
    pub fn new(profile: NetProfile, connections: usize) -> Self {
        Self { profile, connections, max_inflight_per_connection: 1024, service_time: Duration::ZERO }
    }
}

/// One response arriving at the client.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimDelivery {
    pub time: Duration,
    /// When the response left the server.
    pub sent: Duration,
    pub conn: usize,
    pub bytes: usize,
    pub session: usize,
}

struct Event {
    time: f64,
    sent: f64,
    seq: u64,
    conn: usize,
    session: usize,
    tag: BatchTag,
    index: usize,
    id: SampleId,
    bytes: usize,
    result: Result<(Label, Bytes), String>,
}

impl PartialEq for Event {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Event {
    // Reversed for a min-heap on (time, seq).
    fn cmp(&self, o: &Self) -> Ordering {
        o.time.total_cmp(&self.time).then(o.seq.cmp(&self.seq))
    }
}

struct Link {
    up: LinkShaper,
    down: LinkShaper,
    outstanding: usize,
    requests: u64,
}

struct QueuedReq {
    session: usize,
    tag: BatchTag,
    index: usize,
    id: SampleId,
}

struct Session {
    pool: ArrivalPool,
    table: String,
}

struct State {
    now: f64,
    seq: u64,
    cap: usize,
    service: f64,
    links: Vec<Link>,
    queue: VecDeque<QueuedReq>,
    heap: BinaryHeap<Event>,
    sessions: Vec<Session>,
    log: Vec<SimDelivery>,
    backend: Arc<dyn StoreBackend>,
}

impl State {
    fn outstanding(&self) -> Vec<usize> {
        self.links.iter().map(|l| l.outstanding).collect()
    }

    fn send(&mut self, conn: usize, q: QueuedReq) {
        let table = &self.sessions[q.session].table;
        let req_bytes = FRAME_OVERHEAD + table.len() + 16;
        let result = match self.backend.get_parts(table, &q.id) {
            Ok(p) => Ok(p),
            Err(StoreError::NotFound(_)) => Err("NOT_FOUND".to_owned()),
            Err(e) => Err(e.to_string()),
        };
        let resp_bytes = FRAME_OVERHEAD + result.as_ref().map_or(32, |(label, data)| sample_payload_len(label, data));
        let link = &mut self.links[conn];
        link.outstanding += 1;
        link.requests += 1;
        let (_, at_server) = link.up.send(self.now, req_bytes);
        let sent = at_server + self.service;
        let (_, at_client) = link.down.send(sent, resp_bytes);
        self.seq += 1;
        self.heap.push(Event {
            time: at_client,
            sent,
            seq: self.seq,
            conn,
            session: q.session,
            tag: q.tag,
            index: q.index,
            id: q.id,
            bytes: resp_bytes,
            result,
        });
    }

    fn dispatch(&mut self, q: QueuedReq) {
        if !self.queue.is_empty() {
            self.queue.push_back(q);
            return;
        }
        match least_loaded(&self.outstanding(), self.cap, None) {
            Some(i) => self.send(i, q),
            None => self.queue.push_back(q),
        }
    }

    fn handle(&mut self, ev: Event) {
        self.now = self.now.max(ev.time);
        self.links[ev.conn].outstanding -= 1;
        self.log.push(SimDelivery {
            time: Duration::from_secs_f64(ev.time),
            sent: Duration::from_secs_f64(ev.sent),
            conn: ev.conn,
            bytes: ev.bytes,
            session: ev.session,
        });
        let pool = &mut self.sessions[ev.session].pool;
        match ev.result {
            Ok((label, data)) => {
                let item = FetchedItem {
                    id: ev.id,
                    label,
                    data,
                    conn: ev.conn,
                    arrived_at: Duration::from_secs_f64(ev.time),
                };
                pool.deliver(ev.tag, ev.index, item);
            }
            Err(why) => {
                pool.fail(ev.tag, ev.index, why);
            }
        }
        while !self.queue.is_empty() {
            match least_loaded(&self.outstanding(), self.cap, None) {
                Some(i) => {
                    let q = self.queue.pop_front().unwrap();
                    self.send(i, q);
                }
                None => break,
            }
        }
    }

    /// Handles every event at the earliest pending timestamp.
    fn step(&mut self) -> bool {
        let Some(first) = self.heap.pop() else { return false };
        let t = first.time;
        self.handle(first);
        while self.heap.peek().is_some_and(|e| e.time <= t) {
            let ev = self.heap.pop().unwrap();
            self.handle(ev);
        }
        true
    }
}

/// Virtual-time fetch network: shaped links in both directions,
/// least-loaded assignment with a per-connection cap and a client-side
/// FIFO, the same policy as the TCP client. Single-threaded.
#[derive(Clone)]
pub struct SimNetwork {
    state: Rc<RefCell<State>>,
    congested: Rc<Vec<bool>>,
}

impl SimNetwork {
    pub fn new(config: SimConfig, backend: Arc<dyn StoreBackend>) -> Self {
        let n = config.connections.max(1);
        let links = (0..n)
            .map(|i| Link {
                up: LinkShaper::for_connection(&config.profile, i, n, 1),
                down: LinkShaper::for_connection(&config.profile, i, n, 0),
                outstanding: 0,
                requests: 0,
            })
            .collect();
        Self {
            state: Rc::new(RefCell::new(State {
                now: 0.0,
                seq: 0,
                cap: config.max_inflight_per_connection.max(1),
                service: config.service_time.as_secs_f64(),
                links,
                queue: VecDeque::new(),
                heap: BinaryHeap::new(),
                sessions: Vec::new(),
                log: Vec::new(),
                backend,
            })),
            congested: Rc::new(config.profile.congested_set(n)),
        }
    }

    pub fn session(&self, table: &str) -> SimSession {
        let mut s = self.state.borrow_mut();
        s.sessions.push(Session { pool: ArrivalPool::new(), table: table.into() });
        SimSession { net: self.clone(), id: s.sessions.len() - 1 }
    }

    pub fn now(&self) -> Duration {
        Duration::from_secs_f64(self.state.borrow().now)
    }

    pub fn next_event_time(&self) -> Option<Duration> {
        self.state.borrow().heap.peek().map(|e| Duration::from_secs_f64(e.time))
    }

    /// Handles all events up to `t` and moves the clock to `t`.
    pub fn advance_to(&self, t: Duration) {
        let t = t.as_secs_f64();
        let mut s = self.state.borrow_mut();
        while s.heap.peek().is_some_and(|e| e.time <= t) {
            s.step();
        }
        s.now = s.now.max(t);
    }

    /// Handles the next batch of simultaneous events; false when idle.
    pub fn step(&self) -> bool {
        self.state.borrow_mut().step()
    }

    pub fn congested(&self) -> &[bool] {
        &self.congested
    }

    pub fn outstanding(&self) -> Vec<usize> {
        self.state.borrow().outstanding()
    }

    pub fn requests_per_connection(&self) -> Vec<u64> {
        self.state.borrow().links.iter().map(|l| l.requests).collect()
    }

    /// Every response delivered so far, in delivery order.
    pub fn deliveries(&self) -> Vec<SimDelivery> {
        self.state.borrow().log.clone()
    }

    pub fn clear_deliveries(&self) {
        self.state.borrow_mut().log.clear();
    }
}

/// A loader's session on a [`SimNetwork`].
pub struct SimSession {
    net: SimNetwork,
    id: usize,
}

impl SimSession {
    pub fn network(&self) -> &SimNetwork {
        &self.net
    }

    fn with_pool<T>(&self, f: impl FnOnce(&mut ArrivalPool) -> T) -> T {
        f(&mut self.net.state.borrow_mut().sessions[self.id].pool)
    }

    fn stalled(&self) -> ! {
        panic!("simulated session {} waits on items that no event will deliver", self.id)
    }
}

impl BatchFetcher for SimSession {
    fn now(&self) -> Duration {
        self.net.now()
    }

    fn request_batch(&mut self, ids: &[SampleId], tag: BatchTag) -> Result<PendingBatch, ClientError> {
        if ids.is_empty() {
            return Err(ClientError::InvalidInput("empty batch".into()));
        }
        let mut s = self.net.state.borrow_mut();
        if !s.sessions[self.id].pool.register(tag, ids) {
            return Err(ClientError::InvalidInput(format!("batch {tag:?} already outstanding")));
        }
        for (index, &id) in ids.iter().enumerate() {
            s.dispatch(QueuedReq { session: self.id, tag, index, id });
        }
        Ok(PendingBatch { tag, len: ids.len() })
    }

    fn collect_in_order(&mut self, batch: &PendingBatch) -> Result<Vec<FetchedItem>, ClientError> {
        loop {
            if let Some(r) = self.try_collect_in_order(batch) {
                return r;
            }
            if !self.net.step() {
                self.stalled();
            }
        }
    }

    fn try_collect_in_order(&mut self, batch: &PendingBatch) -> Option<Result<Vec<FetchedItem>, ClientError>> {
        self.with_pool(|p| p.try_collect(batch.tag)).map(|r| r.map_err(|failed| ClientError::Batch { failed }))
    }

    fn take_arrivals(&mut self, epoch: u64, n: usize) -> Arrivals {
        loop {
            if let Some(a) = self.try_take_arrivals(epoch, n) {
                return a;
            }
            if !self.net.step() {
                self.stalled();
            }
        }
    }

    fn try_take_arrivals(&mut self, epoch: u64, n: usize) -> Option<Arrivals> {
        self.with_pool(|p| p.try_take(epoch, n))
    }

    fn pause(&mut self, d: Duration) {
        let t = self.net.now() + d;
        self.net.advance_to(t);
    }
}
