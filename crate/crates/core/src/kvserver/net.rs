//! TCP front end for a [`KvServer`]. One thread per connection; requests on
//! a connection are served in arrival order.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use super::KvServer;
use crate::wire::{self, Body, ErrorCode, Message};

pub struct ServerHandle {
    addr: SocketAddr,
    stopping: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting and drop every open connection.
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if self.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        for c in self.conns.lock().unwrap().drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

pub fn serve(listener: TcpListener, server: Arc<KvServer>) -> io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let stopping = Arc::new(AtomicBool::new(false));
    let conns = Arc::new(Mutex::new(Vec::new()));
    let acceptor = {
        let stopping = stopping.clone();
        let conns = conns.clone();
        thread::Builder::new().name(format!("accept-{}", server.id())).spawn(move || {
            for stream in listener.incoming() {
                if stopping.load(Ordering::SeqCst) {
                    break;
                }
                let stream = match stream {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("accept failed: {e}");
                        continue;
                    }
                };
                let _ = stream.set_nodelay(true);
                if let Ok(c) = stream.try_clone() {
                    conns.lock().unwrap().push(c);
                }
                let server = server.clone();
                let _ = thread::Builder::new()
                    .name("conn".into())
                    .spawn(move || {
                        if let Err(e) = serve_connection(stream, &server) {
                            log::debug!("connection closed: {e}");
                        }
                    });
            }
        })?
    };
    Ok(ServerHandle { addr, stopping, conns, acceptor: Some(acceptor) })
}

/// Run a server on the calling thread until the process exits.
pub fn serve_forever(listener: TcpListener, server: Arc<KvServer>) -> io::Result<()> {
    let mut handle = serve(listener, server)?;
    if let Some(h) = handle.acceptor.take() {
        let _ = h.join();
    }
    Ok(())
}

fn serve_connection(stream: TcpStream, server: &KvServer) -> io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some(frame) = wire::read_frame(&mut reader)? {
        let reply = match wire::decode(&frame) {
            Ok(Message { request_id, body }) => Message::new(request_id, server.handle(body)),
            Err(e) => {
                // a frame we cannot parse has no trustworthy request id
                let body = Body::Error { code: ErrorCode::Malformed, message: e.to_string() };
                Message::new(0, body)
            }
        };
        let bytes = wire::encode(&reply).or_else(|e| {
            wire::encode(&Message::new(
                reply.request_id,
                Body::Error { code: ErrorCode::Internal, message: e.to_string() },
            ))
        });
        writer.write_all(&bytes.expect("error replies always encode"))?;
        if reader.buffer().is_empty() {
            writer.flush()?;
        }
    }
    Ok(())
}
