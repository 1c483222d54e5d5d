use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use tracing::{debug, warn};

use crate::error::{Error, Result};
use crate::oracle::wire::{handle_line, Response};
use crate::oracle::{QueryLedger, SyntheticModel};

/// Running oracle server. Each connection gets its own budget; requests on a
/// connection are answered in order. Dropping the handle stops accepting.
pub struct OracleServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    served: Arc<AtomicU64>,
    accept: Option<JoinHandle<()>>,
}

/// Binds `endpoint` and starts answering loss queries against `model`.
pub fn serve(model: Arc<SyntheticModel>, endpoint: impl ToSocketAddrs, budget: u64) -> Result<OracleServer> {
    if budget == 0 {
        return Err(Error::config("server budget must be positive"));
    }
    let listener = TcpListener::bind(endpoint)?;
    let addr = listener.local_addr()?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let served = Arc::new(AtomicU64::new(0));
    let accept = {
        let shutdown = Arc::clone(&shutdown);
        let served = Arc::clone(&served);
        std::thread::Builder::new()
            .name("oracle-accept".into())
            .spawn(move || {
                for stream in listener.incoming() {
                    if shutdown.load(Ordering::SeqCst) {
                        break;
                    }
                    match stream {
                        Ok(stream) => {
                            let model = Arc::clone(&model);
                            let served = Arc::clone(&served);
                            let spawned = std::thread::Builder::new().name("oracle-conn".into()).spawn(move || {
                                if let Err(e) = handle_connection(stream, &model, budget, &served) {
                                    debug!("connection closed: {e}");
                                }
                            });
                            if let Err(e) = spawned {
                                warn!("failed to spawn connection thread: {e}");
                            }
                        }
                        Err(e) => warn!("accept failed: {e}"),
                    }
                }
            })?
    };
    Ok(OracleServer {
        addr,
        shutdown,
        served,
        accept: Some(accept),
    })
}

fn handle_connection(
    stream: TcpStream,
    model: &SyntheticModel,
    budget: u64,
    served: &AtomicU64,
) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let ledger = QueryLedger::with_budget(budget);
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = handle_line(model, &ledger, &line);
        if matches!(resp, Response::Loss { .. }) {
            served.fetch_add(1, Ordering::SeqCst);
        }
        let mut out = serde_json::to_vec(&resp).map_err(std::io::Error::other)?;
        out.push(b'\n');
        writer.write_all(&out)?;
        writer.flush()?;
    }
    Ok(())
}

impl OracleServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Successful loss queries answered across all connections.
    pub fn queries_served(&self) -> u64 {
        self.served.load(Ordering::SeqCst)
    }

    /// Blocks until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(h) = self.accept.take() {
            self.shutdown.store(true, Ordering::SeqCst);
            // Wake the blocking accept.
            let _ = TcpStream::connect(self.addr);
            let _ = h.join();
        }
    }
}

impl Drop for OracleServer {
    fn drop(&mut self) {
        self.stop();
    }
}
