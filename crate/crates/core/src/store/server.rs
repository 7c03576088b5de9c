use std::io::{self, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use crossbeam_channel::{unbounded, Receiver, Sender};
use log::{debug, warn};
use parking_lot::{Condvar, Mutex};

use super::{StoreBackend, StoreError};
use crate::netsim::{wrap_connection, NetProfile, ShapedWriter};
use crate::wire::{
    decode_request_with_limit, encode_id_list, encode_metadata_payload, encode_response, peek_request_id,
    FrameReader, ReadError, Request, Status, WireRequest, WireResponse, DEFAULT_MAX_FRAME,
};

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub bind: String,
    /// Per-connection cap on requests read but not yet answered.
    pub max_inflight: usize,
    pub workers: usize,
    pub max_frame: usize,
    /// Shapes every accepted connection.
    pub netprofile: Option<NetProfile>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:0".into(),
            max_inflight: 1024,
            workers: 8,
            max_frame: DEFAULT_MAX_FRAME,
            netprofile: None,
        }
    }
}

#[derive(Debug, Default)]
pub struct ServerStats {
    pub connections_accepted: AtomicUsize,
    pub frames_read: AtomicU64,
    pub responses_written: AtomicU64,
    pub bad_requests: AtomicU64,
    pub bytes_out: AtomicU64,
    /// Highest in-flight count seen on any single connection.
    pub max_inflight_seen: AtomicUsize,
}

impl ServerStats {
    pub fn frames_read(&self) -> u64 {
        self.frames_read.load(Ordering::SeqCst)
    }

    pub fn responses_written(&self) -> u64 {
        self.responses_written.load(Ordering::SeqCst)
    }

    pub fn max_inflight_seen(&self) -> usize {
        self.max_inflight_seen.load(Ordering::SeqCst)
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stats: Arc<ServerStats>,
    stop: Arc<AtomicBool>,
    open: Arc<Mutex<Vec<TcpStream>>>,
    accept: Option<JoinHandle<()>>,
    jobs: Option<Sender<Job>>,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> &Arc<ServerStats> {
        &self.stats
    }

    /// Stops accepting, closes open connections and joins the pool.
    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    /// Blocks until the accept loop exits.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    fn stop_inner(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for s in self.open.lock().drain(..) {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
        self.jobs.take();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_inner();
        }
    }
}

struct Job {
    frame: Vec<u8>,
    conn: Arc<ConnShared>,
}

struct ConnShared {
    inflight: Mutex<usize>,
    freed: Condvar,
    out: Sender<Vec<u8>>,
}

/// Binds and starts serving `backend` in background threads.
pub fn serve(config: ServerConfig, backend: Arc<dyn StoreBackend>) -> Result<ServerHandle, StoreError> {
    let listener =
        TcpListener::bind(&config.bind).map_err(|e| StoreError::Startup(format!("bind {}: {e}", config.bind)))?;
    let addr = listener.local_addr().map_err(|e| StoreError::Startup(e.to_string()))?;
    if let Some(p) = &config.netprofile {
        p.validate().map_err(|e| StoreError::Startup(e.to_string()))?;
    }
    let stats = Arc::new(ServerStats::default());
    let stop = Arc::new(AtomicBool::new(false));
    let open = Arc::new(Mutex::new(Vec::new()));

    let (jobs_tx, jobs_rx) = unbounded::<Job>();
    let workers = (0..config.workers.max(1))
        .map(|i| {
            let rx = jobs_rx.clone();
            let backend = backend.clone();
            let max_frame = config.max_frame;
            thread::Builder::new()
                .name(format!("store-worker-{i}"))
                .spawn(move || worker_loop(rx, backend.as_ref(), max_frame))
                .map_err(|e| StoreError::Startup(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let accept = {
        let (stats, stop, open, jobs) = (stats.clone(), stop.clone(), open.clone(), jobs_tx.clone());
        thread::Builder::new()
            .name("store-accept".into())
            .spawn(move || accept_loop(listener, config, stats, stop, open, jobs))
            .map_err(|e| StoreError::Startup(e.to_string()))?
    };

    Ok(ServerHandle { addr, stats, stop, open, accept: Some(accept), jobs: Some(jobs_tx), workers })
}

fn accept_loop(
    listener: TcpListener,
    config: ServerConfig,
    stats: Arc<ServerStats>,
    stop: Arc<AtomicBool>,
    open: Arc<Mutex<Vec<TcpStream>>>,
    jobs: Sender<Job>,
) {
    let mut index = 0usize;
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let conn = match conn {
            Ok(c) => c,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let _ = conn.set_nodelay(true);
        if let Ok(c) = conn.try_clone() {
            open.lock().push(c);
        }
        stats.connections_accepted.fetch_add(1, Ordering::SeqCst);
        let profile = config.netprofile.clone().unwrap_or_else(NetProfile::identity);
        let shaped_index = index % profile.connections;
        index += 1;
        let shaped = match wrap_connection(conn, &profile, shaped_index) {
            Ok(s) => s,
            Err(e) => {
                warn!("connection setup failed: {e}");
                continue;
            }
        };
        let (reader, writer) = shaped.split();
        let (out_tx, out_rx) = unbounded::<Vec<u8>>();
        let shared = Arc::new(ConnShared { inflight: Mutex::new(0), freed: Condvar::new(), out: out_tx });
        {
            let (shared, stats) = (shared.clone(), stats.clone());
            let _ = thread::Builder::new()
                .name(format!("store-write-{shaped_index}"))
                .spawn(move || writer_loop(writer, out_rx, shared, stats));
        }
        let (jobs, stats, cfg) = (jobs.clone(), stats.clone(), config.clone());
        let _ = thread::Builder::new()
            .name(format!("store-read-{shaped_index}"))
            .spawn(move || reader_loop(FrameReader::with_limit(reader, cfg.max_frame), cfg.max_inflight, shared, jobs, stats));
    }
}

fn reader_loop<R: io::Read>(
    mut frames: FrameReader<R>,
    max_inflight: usize,
    conn: Arc<ConnShared>,
    jobs: Sender<Job>,
    stats: Arc<ServerStats>,
) {
    loop {
        {
            let mut n = conn.inflight.lock();
            while *n >= max_inflight {
                conn.freed.wait(&mut n);
            }
        }
        let frame = match frames.read_frame() {
            Ok(Some(f)) => f,
            Ok(None) => return,
            Err(ReadError::TooLarge(n)) => {
                warn!("closing connection after oversize frame of {n} bytes");
                let _ = conn.out.send(Vec::new());
                return;
            }
            Err(ReadError::Io(e)) => {
                debug!("connection read ended: {e}");
                return;
            }
        };
        stats.frames_read.fetch_add(1, Ordering::SeqCst);
        let now = {
            let mut n = conn.inflight.lock();
            *n += 1;
            *n
        };
        stats.max_inflight_seen.fetch_max(now, Ordering::SeqCst);
        if jobs.send(Job { frame, conn: conn.clone() }).is_err() {
            return;
        }
    }
}

fn writer_loop(mut w: ShapedWriter, rx: Receiver<Vec<u8>>, conn: Arc<ConnShared>, stats: Arc<ServerStats>) {
    for frame in rx {
        // An empty buffer asks the writer to close the connection.
        if frame.is_empty() {
            w.shutdown();
            return;
        }
        let ok = w.write_all(&frame).and_then(|_| w.flush()).is_ok();
        stats.responses_written.fetch_add(1, Ordering::SeqCst);
        stats.bytes_out.fetch_add(frame.len() as u64, Ordering::Relaxed);
        *conn.inflight.lock() -= 1;
        conn.freed.notify_all();
        if !ok {
            w.shutdown();
            return;
        }
    }
}

fn worker_loop(rx: Receiver<Job>, backend: &dyn StoreBackend, max_frame: usize) {
    for job in rx {
        let resp = match decode_request_with_limit(&job.frame, max_frame) {
            Ok(req) => execute(backend, &req),
            Err(e) => WireResponse::error(peek_request_id(&job.frame).unwrap_or(0), Status::BadRequest, &e.to_string()),
        };
        let _ = job.conn.out.send(encode_response(&resp));
    }
}

/// Runs one decoded request against the backend.
pub fn execute(backend: &dyn StoreBackend, req: &WireRequest) -> WireResponse {
    let rid = req.request_id;
    let typed = match Request::from_wire(req) {
        Ok(t) => t,
        Err(e) => return WireResponse::error(rid, Status::BadRequest, &e.to_string()),
    };
    let result = match typed {
        Request::Ping => Ok(bytes::Bytes::new()),
        Request::Get { table, id } => backend.get_payload(&table, &id),
        Request::Put { table, record } => backend.put(&table, record).map(|_| bytes::Bytes::new()),
        Request::PutAtomic { table, meta_table, record, meta } => {
            backend.put_atomic(&table, &meta_table, record, meta).map(|_| bytes::Bytes::new())
        }
        Request::ListIds { table } => backend.list_ids(&table).map(|ids| encode_id_list(&ids)),
        Request::GetMeta { table, id } => backend.get_metadata(&table, &id).map(|m| encode_metadata_payload(&m)),
    };
    match result {
        Ok(payload) => WireResponse::ok(rid, payload),
        Err(e) => WireResponse::error(rid, e.status(), &e.to_string()),
    }
}

