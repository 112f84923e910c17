//! In-process transport. Messages still pass through the frame codec in
//! both directions; when the calling thread runs under a
//! [`Scheduler`](super::sched::Scheduler), every message is a scheduling
//! point.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use super::{decode, encode, sched, Body, Message, PendingReply, ServerId, Transport, TransportError};
use crate::kvserver::KvServer;

pub struct Loopback {
    servers: Vec<Arc<KvServer>>,
    stopped: Vec<AtomicBool>,
    next_id: AtomicU64,
}

struct Ready(Result<Body, TransportError>);

impl PendingReply for Ready {
    fn wait(self: Box<Self>) -> Result<Body, TransportError> {
        self.0
    }
}

impl Loopback {
    pub fn new(servers: Vec<Arc<KvServer>>) -> Loopback {
        let stopped = servers.iter().map(|_| AtomicBool::new(false)).collect();
        Loopback { servers, stopped, next_id: AtomicU64::new(1) }
    }

    /// A fresh volatile cluster of `n` servers.
    pub fn cluster(n: usize) -> Loopback {
        Loopback::new((0..n).map(|i| Arc::new(KvServer::in_memory(ServerId(i as u16), n))).collect())
    }

    pub fn servers(&self) -> &[Arc<KvServer>] {
        &self.servers
    }

    pub fn stop(&self, id: ServerId) {
        self.stopped[id.0 as usize].store(true, Ordering::SeqCst);
    }

    pub fn resume(&self, id: ServerId) {
        self.stopped[id.0 as usize].store(false, Ordering::SeqCst);
    }

    fn deliver(&self, dest: ServerId, body: Body) -> Result<Body, TransportError> {
        let server = self.servers.get(dest.0 as usize).ok_or(TransportError::UnknownServer(dest))?;
        if self.stopped[dest.0 as usize].load(Ordering::SeqCst) {
            return Err(TransportError::Stopped(dest));
        }
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let request = decode(&encode(&Message::new(id, body))?)?;
        let reply = Message::new(request.request_id, server.handle(request.body));
        let reply = decode(&encode(&reply)?)?;
        if reply.request_id != id {
            return Err(TransportError::Disconnected {
                server: dest,
                reason: format!("reply id {} for request {id}", reply.request_id),
            });
        }
        Ok(reply.body)
    }
}

impl Transport for Loopback {
    fn cluster_size(&self) -> usize {
        self.servers.len()
    }

    fn submit(&self, dest: ServerId, body: Body) -> Result<Box<dyn PendingReply>, TransportError> {
        sched::yield_point();
        Ok(Box::new(Ready(self.deliver(dest, body))))
    }

    fn pause(&self, attempt: u32) {
        if sched::active() {
            sched::stall_point();
        } else {
            std::thread::sleep(std::time::Duration::from_micros(50u64 << attempt.min(7)));
        }
    }
}
