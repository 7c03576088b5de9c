//! Pipelined multi-connection GET engine.
//!
//! A [`StoreClient`] owns `io_workers × connections_per_worker` TCP
//! connections, each with a reader thread. Requests go to the least-loaded
//! connection below its in-flight cap, or wait in a client-side FIFO. Reader
//! threads only decode and drop results into the requesting session's
//! [`ArrivalPool`]; a timer thread re-sends timed-out requests once on
//! another connection before failing them.

mod config;
mod counters;
mod fetcher;
mod pool;

pub use config::{least_loaded, ClientConfig};
pub use counters::{ConnCounters, CounterSampler, ThroughputSample};
pub use fetcher::{BatchFetcher, PendingBatch};
pub use pool::{ArrivalPool, Arrivals, FailedItem};

use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use bytes::Bytes;
use log::{debug, warn};
use parking_lot::{Condvar, Mutex};
use thiserror::Error;

use crate::model::{BatchTag, FetchedItem, SampleId};
use crate::wire::{decode_response_bytes, decode_sample_payload, encode_request, FrameReader, Request, Status};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("could not connect: {0}")]
    Connect(String),
    #[error("{} item(s) failed, first {}: {}", .failed.len(), .failed[0].id, .failed[0].reason)]
    Batch { failed: Vec<FailedItem> },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ClientStatus {
    Healthy,
    /// Some connections could not be opened or have been lost.
    Degraded(Vec<String>),
}

#[derive(Clone)]
struct Req {
    id: SampleId,
    tag: BatchTag,
    index: usize,
    attempt: u32,
    avoid: Option<usize>,
    table: Arc<str>,
    session: Arc<SessionShared>,
}

struct Inflight {
    req: Req,
    issued_at: Instant,
}

struct Conn {
    writer: Mutex<Option<TcpStream>>,
    inflight: Mutex<HashMap<u64, Inflight>>,
    alive: AtomicBool,
    counters: ConnCounters,
}

struct Dispatch {
    /// Per-connection in-flight count; `usize::MAX` for dead connections.
    outstanding: Vec<usize>,
    queue: VecDeque<Req>,
}

struct Inner {
    config: ClientConfig,
    conns: Vec<Conn>,
    // Lock order: `dispatch` before any `Conn::inflight`.
    dispatch: Mutex<Dispatch>,
    next_rid: AtomicU64,
    stop: AtomicBool,
    problems: Mutex<Vec<String>>,
}

struct Guard {
    inner: Arc<Inner>,
}

impl Drop for Guard {
    fn drop(&mut self) {
        self.inner.stop.store(true, Ordering::SeqCst);
        for c in &self.inner.conns {
            if let Some(s) = c.writer.lock().as_ref() {
                let _ = s.shutdown(Shutdown::Both);
            }
        }
    }
}

/// Shareable client handle; clones share connections.
#[derive(Clone)]
pub struct StoreClient {
    inner: Arc<Inner>,
    _guard: Arc<Guard>,
}

fn connect_one(endpoint: &str) -> std::io::Result<TcpStream> {
    let mut last = std::io::Error::new(std::io::ErrorKind::NotFound, "no addresses");
    for addr in endpoint.to_socket_addrs()? {
        match TcpStream::connect_timeout(&addr, Duration::from_secs(5)) {
            Ok(s) => return Ok(s),
            Err(e) => last = e,
        }
    }
    Err(last)
}

impl StoreClient {
    pub fn connect(config: ClientConfig) -> Result<Self, ClientError> {
        if config.endpoints.is_empty() || config.total_connections() == 0 || config.max_inflight_per_connection == 0 {
            return Err(ClientError::InvalidInput("need endpoints, connections and an in-flight cap".into()));
        }
        let n = config.total_connections();
        let mut streams = Vec::with_capacity(n);
        let mut problems = Vec::new();
        for i in 0..n {
            let ep = &config.endpoints[i % config.endpoints.len()];
            match connect_one(ep) {
                Ok(s) => {
                    let _ = s.set_nodelay(true);
                    streams.push(Some(s));
                }
                Err(e) => {
                    problems.push(format!("connection {i} to {ep}: {e}"));
                    streams.push(None);
                }
            }
        }
        if streams.iter().all(Option::is_none) {
            return Err(ClientError::Connect(problems.join("; ")));
        }
        for p in &problems {
            warn!("{p}");
        }
        let conns: Vec<Conn> = streams
            .iter()
            .map(|s| Conn {
                writer: Mutex::new(s.as_ref().and_then(|s| s.try_clone().ok())),
                inflight: Mutex::new(HashMap::new()),
                alive: AtomicBool::new(s.is_some()),
                counters: ConnCounters::default(),
            })
            .collect();
        let outstanding = streams.iter().map(|s| if s.is_some() { 0 } else { usize::MAX }).collect();
        let inner = Arc::new(Inner {
            config,
            conns,
            dispatch: Mutex::new(Dispatch { outstanding, queue: VecDeque::new() }),
            next_rid: AtomicU64::new(1),
            stop: AtomicBool::new(false),
            problems: Mutex::new(problems),
        });
        for (i, s) in streams.into_iter().enumerate() {
            if let Some(s) = s {
                let inner = inner.clone();
                thread::Builder::new()
                    .name(format!("client-read-{i}"))
                    .spawn(move || reader_loop(inner, i, s))
                    .map_err(|e| ClientError::Connect(e.to_string()))?;
            }
        }
        {
            let inner = inner.clone();
            thread::Builder::new()
                .name("client-timeouts".into())
                .spawn(move || timeout_loop(inner))
                .map_err(|e| ClientError::Connect(e.to_string()))?;
        }
        let guard = Arc::new(Guard { inner: inner.clone() });
        Ok(Self { inner, _guard: guard })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.inner.config
    }

    /// Number of connections currently usable.
    pub fn live_connections(&self) -> usize {
        self.inner.conns.iter().filter(|c| c.alive.load(Ordering::SeqCst)).count()
    }

    pub fn status(&self) -> ClientStatus {
        let p = self.inner.problems.lock();
        if p.is_empty() {
            ClientStatus::Healthy
        } else {
            ClientStatus::Degraded(p.clone())
        }
    }

    pub fn counters(&self) -> Vec<&ConnCounters> {
        self.inner.conns.iter().map(|c| &c.counters).collect()
    }

    /// Requests currently assigned to each connection.
    pub fn outstanding(&self) -> Vec<usize> {
        self.inner.dispatch.lock().outstanding.iter().map(|&n| if n == usize::MAX { 0 } else { n }).collect()
    }

    /// Requests waiting client-side for a free connection slot.
    pub fn queued(&self) -> usize {
        self.inner.dispatch.lock().queue.len()
    }

    /// New fetch session over `table` with its own arrival pool.
    pub fn session(&self, table: &str) -> ClientSession {
        ClientSession {
            client: self.clone(),
            table: table.into(),
            shared: Arc::new(SessionShared {
                pool: Mutex::new(ArrivalPool::new()),
                cv: Condvar::new(),
                origin: Instant::now(),
            }),
        }
    }
}

impl Inner {
    fn cap(&self) -> usize {
        self.config.max_inflight_per_connection
    }

    /// Assigns and sends `reqs`; those without a free slot are queued.
    fn dispatch(&self, reqs: Vec<Req>) {
        let mut plan = Vec::with_capacity(reqs.len());
        let mut dead = Vec::new();
        {
            let mut d = self.dispatch.lock();
            for r in reqs {
                if !d.queue.is_empty() {
                    d.queue.push_back(r);
                    continue;
                }
                match pick(&d.outstanding, self.cap(), r.avoid) {
                    Some(i) => {
                        d.outstanding[i] += 1;
                        plan.push((i, r));
                    }
                    None if d.outstanding.iter().all(|&n| n == usize::MAX) => dead.push(r),
                    None => d.queue.push_back(r),
                }
            }
        }
        for r in dead {
            fail(&r, "no live connections");
        }
        self.send(plan);
    }

    /// Frees one slot of `conn` and moves queued requests onto free slots.
    fn release(&self, conn: usize) {
        let mut plan = Vec::new();
        {
            let mut d = self.dispatch.lock();
            if d.outstanding[conn] != usize::MAX {
                d.outstanding[conn] -= 1;
            }
            while let Some(r) = d.queue.front() {
                match pick(&d.outstanding, self.cap(), r.avoid) {
                    Some(i) => {
                        d.outstanding[i] += 1;
                        plan.push((i, d.queue.pop_front().unwrap()));
                    }
                    None => break,
                }
            }
        }
        self.send(plan);
    }

    fn send(&self, plan: Vec<(usize, Req)>) {
        if plan.is_empty() {
            return;
        }
        let mut per_conn: HashMap<usize, Vec<u8>> = HashMap::new();
        for (i, req) in plan {
            let rid = self.next_rid.fetch_add(1, Ordering::Relaxed);
            let frame = encode_request(&Request::Get { table: req.table.to_string(), id: req.id }.to_wire(rid));
            per_conn.entry(i).or_default().extend_from_slice(&frame);
            let conn = &self.conns[i];
            conn.counters.requests.fetch_add(1, Ordering::Relaxed);
            conn.inflight.lock().insert(rid, Inflight { req, issued_at: Instant::now() });
        }
        for (i, buf) in per_conn {
            let ok = match self.conns[i].writer.lock().as_mut() {
                Some(w) => w.write_all(&buf).is_ok(),
                None => false,
            };
            if !ok {
                self.lose(i, "write failed");
            }
        }
    }

    /// Marks `conn` dead and re-routes everything it carried.
    fn lose(&self, conn: usize, why: &str) {
        let c = &self.conns[conn];
        if c.alive.swap(false, Ordering::SeqCst) {
            warn!("connection {conn} lost: {why}");
            self.problems.lock().push(format!("connection {conn} lost: {why}"));
        }
        self.dispatch.lock().outstanding[conn] = usize::MAX;
        if let Some(s) = c.writer.lock().as_ref() {
            let _ = s.shutdown(Shutdown::Both);
        }
        let orphans: Vec<Req> = c.inflight.lock().drain().map(|(_, f)| f.req).collect();
        for r in orphans {
            self.retry_or_fail(r, conn, why);
        }
        // Queued requests may have nowhere left to go.
        let stranded: Vec<Req> = {
            let mut d = self.dispatch.lock();
            if d.outstanding.iter().all(|&n| n == usize::MAX) {
                d.queue.drain(..).collect()
            } else {
                Vec::new()
            }
        };
        for r in stranded {
            fail(&r, "no live connections");
        }
    }

    fn retry_or_fail(&self, mut req: Req, conn: usize, why: &str) {
        if req.attempt < self.config.retry_limit && req.session.pool.lock().is_pending(req.tag, req.index) {
            req.attempt += 1;
            req.avoid = Some(conn);
            debug!("re-sending {} after {why} on connection {conn}", req.id);
            self.dispatch(vec![req]);
        } else {
            fail(&req, why);
        }
    }
}

/// Least-loaded live connection, avoiding `avoid` when another has room.
fn pick(outstanding: &[usize], cap: usize, avoid: Option<usize>) -> Option<usize> {
    least_loaded(outstanding, cap, avoid).or_else(|| avoid.and_then(|_| least_loaded(outstanding, cap, None)))
}

fn fail(req: &Req, why: &str) {
    let mut pool = req.session.pool.lock();
    if pool.fail(req.tag, req.index, why) {
        req.session.cv.notify_all();
    }
}

fn reader_loop(inner: Arc<Inner>, index: usize, stream: TcpStream) {
    let mut frames = FrameReader::new(stream);
    loop {
        let frame = match frames.read_frame() {
            Ok(Some(f)) => f,
            Ok(None) => {
                if !inner.stop.load(Ordering::SeqCst) {
                    inner.lose(index, "closed by server");
                }
                return;
            }
            Err(e) => {
                if !inner.stop.load(Ordering::SeqCst) {
                    inner.lose(index, &e.to_string());
                }
                return;
            }
        };
        let conn = &inner.conns[index];
        conn.counters.bytes_in.fetch_add(frame.len() as u64, Ordering::Relaxed);
        let resp = match decode_response_bytes(Bytes::from(frame)) {
            Ok(r) => r,
            Err(e) => {
                inner.lose(index, &format!("undecodable response: {e}"));
                return;
            }
        };
        let Some(entry) = conn.inflight.lock().remove(&resp.request_id) else {
            // Timed out earlier and already re-sent or failed.
            continue;
        };
        conn.counters.responses.fetch_add(1, Ordering::Relaxed);
        inner.release(index);
        let req = entry.req;
        let session = &req.session;
        match resp.status {
            Status::Ok => match decode_sample_payload(&resp.payload) {
                Ok((label, data)) => {
                    let item = FetchedItem { id: req.id, label, data, conn: index, arrived_at: session.origin.elapsed() };
                    let mut pool = session.pool.lock();
                    if pool.deliver(req.tag, req.index, item) {
                        session.cv.notify_all();
                    }
                }
                Err(e) => fail(&req, &format!("malformed response: {e}")),
            },
            Status::NotFound => fail(&req, "NOT_FOUND"),
            s => fail(&req, &format!("{s:?}: {}", String::from_utf8_lossy(&resp.payload))),
        }
    }
}

fn timeout_loop(inner: Arc<Inner>) {
    let timeout = inner.config.request_timeout;
    let tick = (timeout / 4).clamp(Duration::from_millis(5), Duration::from_millis(100));
    while !inner.stop.load(Ordering::SeqCst) {
        thread::sleep(tick);
        let now = Instant::now();
        for (i, conn) in inner.conns.iter().enumerate() {
            let expired: Vec<Req> = {
                let mut map = conn.inflight.lock();
                let rids: Vec<u64> =
                    map.iter().filter(|(_, f)| now.duration_since(f.issued_at) >= timeout).map(|(&r, _)| r).collect();
                rids.into_iter().filter_map(|r| map.remove(&r)).map(|f| f.req).collect()
            };
            for r in expired {
                conn.counters.timeouts.fetch_add(1, Ordering::Relaxed);
                inner.release(i);
                inner.retry_or_fail(r, i, "timeout");
            }
        }
    }
}

struct SessionShared {
    pool: Mutex<ArrivalPool>,
    cv: Condvar,
    origin: Instant,
}

/// One loader's view of a [`StoreClient`]: a table and a private arrival
/// pool.
pub struct ClientSession {
    client: StoreClient,
    table: Arc<str>,
    shared: Arc<SessionShared>,
}

impl ClientSession {
    pub fn client(&self) -> &StoreClient {
        &self.client
    }

    pub fn table(&self) -> &str {
        &self.table
    }
}

fn batch_result(r: Result<Vec<FetchedItem>, Vec<FailedItem>>) -> Result<Vec<FetchedItem>, ClientError> {
    r.map_err(|failed| ClientError::Batch { failed })
}

impl BatchFetcher for ClientSession {
    fn now(&self) -> Duration {
        self.shared.origin.elapsed()
    }

    fn request_batch(&mut self, ids: &[SampleId], tag: BatchTag) -> Result<PendingBatch, ClientError> {
        if ids.is_empty() {
            return Err(ClientError::InvalidInput("empty batch".into()));
        }
        if !self.shared.pool.lock().register(tag, ids) {
            return Err(ClientError::InvalidInput(format!("batch {tag:?} already outstanding")));
        }
        let reqs = ids
            .iter()
            .enumerate()
            .map(|(index, &id)| Req {
                id,
                tag,
                index,
                attempt: 0,
                avoid: None,
                table: self.table.clone(),
                session: self.shared.clone(),
            })
            .collect();
        self.client.inner.dispatch(reqs);
        Ok(PendingBatch { tag, len: ids.len() })
    }

    fn collect_in_order(&mut self, batch: &PendingBatch) -> Result<Vec<FetchedItem>, ClientError> {
        let mut pool = self.shared.pool.lock();
        loop {
            if let Some(r) = pool.try_collect(batch.tag) {
                return batch_result(r);
            }
            self.shared.cv.wait(&mut pool);
        }
    }

    fn try_collect_in_order(&mut self, batch: &PendingBatch) -> Option<Result<Vec<FetchedItem>, ClientError>> {
        self.shared.pool.lock().try_collect(batch.tag).map(batch_result)
    }

    fn take_arrivals(&mut self, epoch: u64, n: usize) -> Arrivals {
        let mut pool = self.shared.pool.lock();
        loop {
            if let Some(a) = pool.try_take(epoch, n) {
                return a;
            }
            self.shared.cv.wait(&mut pool);
        }
    }

    fn try_take_arrivals(&mut self, epoch: u64, n: usize) -> Option<Arrivals> {
        self.shared.pool.lock().try_take(epoch, n)
    }

    fn pause(&mut self, d: Duration) {
        thread::sleep(d);
    }
}
