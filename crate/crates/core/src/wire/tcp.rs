//! Socket transport: one pipelined connection per server, replies routed
//! back to callers by request id.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender};
use std::sync::{Arc, Mutex, Weak};
use std::thread;
use std::time::Duration;

use super::{decode, encode, read_frame, Body, Message, PendingReply, ServerId, Transport, TransportError, DEFAULT_TIMEOUT};

type ReplySlot = SyncSender<Result<Body, String>>;

struct Conn {
    stream: TcpStream,
    writer: Mutex<BufWriter<TcpStream>>,
    pending: Mutex<PendingMap>,
}

#[derive(Default)]
struct PendingMap {
    waiting: HashMap<u64, ReplySlot>,
    dead: Option<String>,
}

impl Conn {
    fn fail_all(&self, reason: &str) {
        let mut p = self.pending.lock().unwrap();
        p.dead = Some(reason.to_string());
        for (_, tx) in p.waiting.drain() {
            let _ = tx.try_send(Err(reason.to_string()));
        }
    }
}

impl Drop for Conn {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

pub struct TcpTransport {
    addrs: Vec<String>,
    conns: Vec<Mutex<Option<Arc<Conn>>>>,
    next_id: AtomicU64,
    timeout: Duration,
}

impl TcpTransport {
    pub fn new(addrs: Vec<String>) -> TcpTransport {
        TcpTransport::with_timeout(addrs, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(addrs: Vec<String>, timeout: Duration) -> TcpTransport {
        let conns = addrs.iter().map(|_| Mutex::new(None)).collect();
        TcpTransport { addrs, conns, next_id: AtomicU64::new(1), timeout }
    }

    pub fn addrs(&self) -> &[String] {
        &self.addrs
    }

    fn connection(&self, dest: ServerId) -> Result<Arc<Conn>, TransportError> {
        let slot = self.conns.get(dest.0 as usize).ok_or(TransportError::UnknownServer(dest))?;
        let mut slot = slot.lock().unwrap();
        if let Some(c) = slot.as_ref() {
            if c.pending.lock().unwrap().dead.is_none() {
                return Ok(c.clone());
            }
        }
        let conn = self.connect(dest)?;
        *slot = Some(conn.clone());
        Ok(conn)
    }

    fn connect(&self, dest: ServerId) -> Result<Arc<Conn>, TransportError> {
        let addr = &self.addrs[dest.0 as usize];
        let connect_err = |source| TransportError::Connect { server: dest, source };
        let sock = addr
            .to_socket_addrs()
            .map_err(connect_err)?
            .next()
            .ok_or_else(|| connect_err(std::io::ErrorKind::AddrNotAvailable.into()))?;
        let stream = TcpStream::connect_timeout(&sock, self.timeout).map_err(connect_err)?;
        stream.set_nodelay(true).map_err(connect_err)?;
        let reader = stream.try_clone().map_err(connect_err)?;
        let writer = stream.try_clone().map_err(connect_err)?;
        let conn = Arc::new(Conn {
            stream,
            writer: Mutex::new(BufWriter::new(writer)),
            pending: Mutex::new(PendingMap::default()),
        });
        let weak = Arc::downgrade(&conn);
        thread::Builder::new()
            .name(format!("reply-{dest}"))
            .spawn(move || reply_loop(reader, weak))
            .map_err(connect_err)?;
        Ok(conn)
    }
}

fn reply_loop(stream: TcpStream, conn: Weak<Conn>) {
    let mut reader = BufReader::new(stream);
    let reason = loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => break "connection closed by server".to_string(),
            Err(e) => break e.to_string(),
        };
        let Some(conn) = conn.upgrade() else { return };
        match decode(&frame) {
            Ok(Message { request_id, body }) => {
                let tx = conn.pending.lock().unwrap().waiting.remove(&request_id);
                if let Some(tx) = tx {
                    let _ = tx.try_send(Ok(body));
                } else {
                    log::debug!("reply for unknown request {request_id}");
                }
            }
            Err(e) => break format!("undecodable reply: {e}"),
        }
    };
    if let Some(conn) = conn.upgrade() {
        conn.fail_all(&reason);
        let _ = conn.stream.shutdown(Shutdown::Both);
    }
}

struct TcpPending {
    rx: Receiver<Result<Body, String>>,
    conn: Arc<Conn>,
    id: u64,
    dest: ServerId,
    timeout: Duration,
}

impl PendingReply for TcpPending {
    fn wait(self: Box<Self>) -> Result<Body, TransportError> {
        match self.rx.recv_timeout(self.timeout) {
            Ok(Ok(body)) => Ok(body),
            Ok(Err(reason)) => Err(TransportError::Disconnected { server: self.dest, reason }),
            Err(RecvTimeoutError::Timeout) => {
                self.conn.pending.lock().unwrap().waiting.remove(&self.id);
                Err(TransportError::Timeout { server: self.dest, after: self.timeout })
            }
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Disconnected {
                server: self.dest,
                reason: "reply channel dropped".into(),
            }),
        }
    }
}

impl Transport for TcpTransport {
    fn cluster_size(&self) -> usize {
        self.addrs.len()
    }

    fn submit(&self, dest: ServerId, body: Body) -> Result<Box<dyn PendingReply>, TransportError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let frame = encode(&Message::new(id, body))?;
        let conn = self.connection(dest)?;
        let (tx, rx) = mpsc::sync_channel(1);
        {
            let mut p = conn.pending.lock().unwrap();
            if let Some(reason) = &p.dead {
                return Err(TransportError::Disconnected { server: dest, reason: reason.clone() });
            }
            p.waiting.insert(id, tx);
        }
        let written = {
            let mut w = conn.writer.lock().unwrap();
            w.write_all(&frame).and_then(|_| w.flush())
        };
        if let Err(e) = written {
            conn.fail_all(&e.to_string());
            return Err(TransportError::Disconnected { server: dest, reason: e.to_string() });
        }
        Ok(Box::new(TcpPending { rx, conn, id, dest, timeout: self.timeout }))
    }
}
