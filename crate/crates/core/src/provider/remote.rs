//! TCP client and server for the provider protocol.

use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::wire::{self, code, Message};
use super::{GateKey, Provider, ProviderError};
use crate::jaqal::parse_with_stats;
use crate::pulse::GateDefinition;

fn unavailable(addr: SocketAddr, e: impl ToString) -> ProviderError {
    ProviderError::RemoteUnavailable {
        addr: addr.to_string(),
        reason: e.to_string(),
    }
}

/// One open connection to a provider.
pub struct Client {
    addr: SocketAddr,
    stream: TcpStream,
}

impl Client {
    pub fn connect(addr: SocketAddr, timeout: Duration) -> Result<Client, ProviderError> {
        let stream = TcpStream::connect_timeout(&addr, timeout).map_err(|e| unavailable(addr, e))?;
        stream.set_read_timeout(Some(timeout)).map_err(|e| unavailable(addr, e))?;
        stream.set_write_timeout(Some(timeout)).map_err(|e| unavailable(addr, e))?;
        stream.set_nodelay(true).map_err(|e| unavailable(addr, e))?;
        Ok(Client { addr, stream })
    }

    fn call(&mut self, m: &Message) -> Result<Message, ProviderError> {
        wire::write_message(&mut self.stream, m).map_err(|e| unavailable(self.addr, e))?;
        let frame = wire::read_frame(&mut self.stream).map_err(|e| unavailable(self.addr, e))?;
        wire::decode(&frame)
    }

    pub fn fetch(&mut self, key: &GateKey) -> Result<GateDefinition, ProviderError> {
        match self.call(&Message::Fetch(key.clone()))? {
            Message::Def(d) => Ok(d),
            Message::Err { code, text } => Err(remote_error(key, code, text)),
            other => Err(ProviderError::Protocol {
                offset: 8,
                reason: format!("expected a definition, got {other:?}"),
            }),
        }
    }

    /// Sends circuit text for parsing on the far side; returns its op count.
    pub fn upload(&mut self, source: &str) -> Result<u64, ProviderError> {
        match self.call(&Message::Upload(source.to_string()))? {
            Message::Ack(n) => Ok(n),
            Message::Err { text, .. } => Err(unavailable(self.addr, text)),
            other => Err(ProviderError::Protocol {
                offset: 8,
                reason: format!("expected an ack, got {other:?}"),
            }),
        }
    }
}

fn remote_error(key: &GateKey, code: u16, text: String) -> ProviderError {
    match code {
        code::UNKNOWN_GATE => ProviderError::UnknownGate(text),
        code::INVALID => ProviderError::InvalidDefinition {
            name: key.name.clone(),
            errors: vec![text],
        },
        _ => ProviderError::Builder {
            name: key.name.clone(),
            message: text,
        },
    }
}

/// Fetches one definition over a fresh connection, retrying transport
/// failures `retries` times.
pub fn fetch(addr: SocketAddr, key: &GateKey, timeout: Duration, retries: u32) -> Result<GateDefinition, ProviderError> {
    let mut last = None;
    for _ in 0..=retries {
        match Client::connect(addr, timeout).and_then(|mut c| c.fetch(key)) {
            Err(e @ ProviderError::RemoteUnavailable { .. }) => last = Some(e),
            r => return r,
        }
    }
    Err(last.unwrap_or_else(|| unavailable(addr, "no attempt made")))
}

/// Answers requests from a provider. Each connection gets its own thread.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    requests: Arc<AtomicU64>,
    handle: Option<JoinHandle<()>>,
}

impl Server {
    /// Binds `addr` (port 0 picks a free one). Every reply is delayed by
    /// `latency` to stand in for a slower link.
    pub fn start(addr: &str, provider: Arc<Provider>, latency: Duration) -> io::Result<Server> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(AtomicU64::new(0));
        let handle = {
            let stop = stop.clone();
            let requests = requests.clone();
            std::thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(conn) = conn else { continue };
                    let provider = provider.clone();
                    let requests = requests.clone();
                    std::thread::spawn(move || serve_connection(conn, &provider, latency, &requests));
                }
            })
        };
        Ok(Server {
            addr,
            stop,
            requests,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    /// Blocks until the accept loop exits (never, unless stopped).
    pub fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if self.handle.is_some() {
            self.stop();
        }
    }
}

fn serve_connection(mut conn: TcpStream, provider: &Provider, latency: Duration, requests: &AtomicU64) {
    let _ = conn.set_nodelay(true);
    while let Ok(frame) = wire::read_frame(&mut conn) {
        requests.fetch_add(1, Ordering::Relaxed);
        let reply = match wire::decode(&frame) {
            Ok(Message::Fetch(key)) => match provider.fetch(&key) {
                Ok(d) => Message::Def(d.as_ref().clone()),
                Err(e) => Message::error(&e),
            },
            Ok(Message::Upload(src)) => match parse_with_stats(&src) {
                Ok((_, stats)) => Message::Ack(stats.ops() as u64),
                Err(e) => Message::Err {
                    code: code::PARSE,
                    text: e.to_string(),
                },
            },
            Ok(other) => Message::Err {
                code: code::PROTOCOL,
                text: format!("unexpected request {other:?}"),
            },
            Err(e) => Message::error(&e),
        };
        if !latency.is_zero() {
            std::thread::sleep(latency);
        }
        if wire::write_message(&mut conn, &reply).is_err() {
            break;
        }
    }
    let _ = conn.shutdown(Shutdown::Both);
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;

    fn key(name: &str, args: &[i64]) -> GateKey {
        GateKey::new(name, args.iter().map(|&a| Rational64::from_integer(a)).collect())
    }

    #[test]
    fn loopback_matches_local() {
        let local = Provider::standard();
        let server = Server::start("127.0.0.1:0", Arc::new(Provider::standard()), Duration::ZERO).unwrap();
        for k in [key("Spline", &[0, 20]), key("MS", &[0, 1]), key("prepare_all", &[])] {
            let remote = fetch(server.addr(), &k, Duration::from_secs(2), 1).unwrap();
            assert_eq!(remote.canonicalized(), local.fetch(&k).unwrap().canonicalized());
        }
        assert_eq!(
            fetch(server.addr(), &key("Nope", &[]), Duration::from_secs(2), 1).unwrap_err(),
            ProviderError::UnknownGate("Nope".into())
        );
    }

    #[test]
    fn routed_provider_uses_the_server() {
        let server = Server::start("127.0.0.1:0", Arc::new(Provider::standard()), Duration::ZERO).unwrap();
        let mut p = Provider::standard().route("", server.addr());
        p.timeout = Duration::from_secs(2);
        p.fetch(&key("Sx", &[2])).unwrap();
        assert_eq!(server.requests(), 1);
    }

    #[test]
    fn dead_address_is_unavailable() {
        let addr = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap()
        };
        let e = fetch(addr, &key("Sx", &[0]), Duration::from_millis(100), 1).unwrap_err();
        assert!(matches!(e, ProviderError::RemoteUnavailable { .. }));
    }

    #[test]
    fn upload_counts_ops() {
        let server = Server::start("127.0.0.1:0", Arc::new(Provider::standard()), Duration::ZERO).unwrap();
        let mut c = Client::connect(server.addr(), Duration::from_secs(2)).unwrap();
        let n = c.upload("register q[2]\nSx q[0]\nSx q[1]\n").unwrap();
        assert!(n > 0);
        assert!(c.upload("register q[2]\nSx q[0\n").is_err());
    }
}
