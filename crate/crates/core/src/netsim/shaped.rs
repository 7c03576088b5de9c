use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};

use super::profile::NetProfile;
use super::shaper::LinkShaper;

const INGRESS_CHUNK: usize = 64 * 1024;

/// A TCP stream with both directions passed through a [`LinkShaper`].
///
/// Each direction has a pump thread acting as a delay line, so the two
/// halves can be driven from different threads.
pub struct ShapedConnection {
    reader: ShapedReader,
    writer: ShapedWriter,
}

/// Wraps `conn` as connection `index` of `profile.connections`. The identity
/// profile returns the stream unchanged.
pub fn wrap_connection(conn: TcpStream, profile: &NetProfile, index: usize) -> io::Result<ShapedConnection> {
    let n = profile.connections.max(index + 1);
    if profile.is_identity() {
        let r = conn.try_clone()?;
        return Ok(ShapedConnection { reader: ShapedReader::Direct(r), writer: ShapedWriter::Direct(conn) });
    }
    let origin = Instant::now();

    let (etx, erx) = unbounded::<(Instant, Vec<u8>)>();
    let egress_sock = conn.try_clone()?;
    let egress = LinkShaper::for_connection(profile, index, n, 0);
    thread::Builder::new()
        .name(format!("shape-out-{index}"))
        .spawn(move || egress_pump(egress_sock, egress, origin, erx))?;

    let (itx, irx) = unbounded::<(Instant, Vec<u8>)>();
    let ingress_sock = conn.try_clone()?;
    let ingress = LinkShaper::for_connection(profile, index, n, 1);
    thread::Builder::new()
        .name(format!("shape-in-{index}"))
        .spawn(move || ingress_pump(ingress_sock, ingress, origin, itx))?;

    Ok(ShapedConnection {
        reader: ShapedReader::Shaped { rx: irx, pending: Vec::new(), pos: 0 },
        writer: ShapedWriter::Shaped { tx: Some(etx), sock: conn },
    })
}

impl ShapedConnection {
    pub fn split(self) -> (ShapedReader, ShapedWriter) {
        (self.reader, self.writer)
    }
}

fn sleep_until(t: Instant) {
    let now = Instant::now();
    if t > now {
        thread::sleep(t - now);
    }
}

fn at(origin: Instant, secs: f64) -> Instant {
    origin + Duration::from_secs_f64(secs.max(0.0))
}

fn egress_pump(mut sock: TcpStream, mut shaper: LinkShaper, origin: Instant, rx: Receiver<(Instant, Vec<u8>)>) {
    for (sent, buf) in rx {
        let (_, deliver) = shaper.send((sent - origin).as_secs_f64(), buf.len());
        sleep_until(at(origin, deliver));
        if sock.write_all(&buf).is_err() {
            return;
        }
    }
    let _ = sock.shutdown(Shutdown::Write);
}

fn ingress_pump(mut sock: TcpStream, mut shaper: LinkShaper, origin: Instant, tx: Sender<(Instant, Vec<u8>)>) {
    let mut buf = vec![0u8; INGRESS_CHUNK];
    loop {
        match sock.read(&mut buf) {
            Ok(0) | Err(_) => return,
            Ok(n) => {
                let (_, deliver) = shaper.send(origin.elapsed().as_secs_f64(), n);
                if tx.send((at(origin, deliver), buf[..n].to_vec())).is_err() {
                    return;
                }
            }
        }
    }
}

pub enum ShapedReader {
    Direct(TcpStream),
    Shaped { rx: Receiver<(Instant, Vec<u8>)>, pending: Vec<u8>, pos: usize },
}

impl Read for ShapedReader {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        match self {
            ShapedReader::Direct(s) => s.read(out),
            ShapedReader::Shaped { rx, pending, pos } => {
                if *pos == pending.len() {
                    match rx.recv() {
                        Ok((deliver, chunk)) => {
                            sleep_until(deliver);
                            *pending = chunk;
                            *pos = 0;
                        }
                        Err(_) => return Ok(0),
                    }
                }
                let n = out.len().min(pending.len() - *pos);
                out[..n].copy_from_slice(&pending[*pos..*pos + n]);
                *pos += n;
                Ok(n)
            }
        }
    }
}

pub enum ShapedWriter {
    Direct(TcpStream),
    Shaped { tx: Option<Sender<(Instant, Vec<u8>)>>, sock: TcpStream },
}

impl ShapedWriter {
    /// Closes both directions of the underlying socket.
    pub fn shutdown(&self) {
        let s = match self {
            ShapedWriter::Direct(s) => s,
            ShapedWriter::Shaped { sock, .. } => sock,
        };
        let _ = s.shutdown(Shutdown::Both);
    }
}

impl Write for ShapedWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            ShapedWriter::Direct(s) => s.write(buf),
            ShapedWriter::Shaped { tx, .. } => {
                let tx = tx.as_ref().ok_or(io::ErrorKind::BrokenPipe)?;
                tx.send((Instant::now(), buf.to_vec())).map_err(|_| io::Error::from(io::ErrorKind::BrokenPipe))?;
                Ok(buf.len())
            }
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            ShapedWriter::Direct(s) => s.flush(),
            ShapedWriter::Shaped { .. } => Ok(()),
        }
    }
}
