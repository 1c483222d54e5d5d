use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::error::{Error, OracleError, Result};
use crate::oracle::wire::{LossRequest, Response, WireError, OP_LOSS};
use crate::oracle::{LossOracle, QueryLedger};

const SCHEME: &str = "remote://";

/// Extracts the socket address from `remote://host:port`.
pub fn parse_endpoint(spec: &str) -> Option<&str> {
    spec.strip_prefix(SCHEME).filter(|s| !s.is_empty())
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// Oracle whose every query is one request/response round-trip to an
/// oracle server. No gradient access.
pub struct RemoteOracle {
    dim: usize,
    conn: Mutex<Conn>,
    next_id: AtomicU64,
    ledger: QueryLedger,
    server_used: AtomicU64,
}

impl RemoteOracle {
    pub fn connect(endpoint: impl ToSocketAddrs, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        let stream = TcpStream::connect(endpoint)?;
        stream.set_nodelay(true)?;
        let writer = stream.try_clone()?;
        Ok(Self {
            dim,
            conn: Mutex::new(Conn {
                reader: BufReader::new(stream),
                writer,
            }),
            next_id: AtomicU64::new(1),
            ledger: QueryLedger::unlimited(),
            server_used: AtomicU64::new(0),
        })
    }

    /// Query count last reported by the server for this connection.
    pub fn server_queries_used(&self) -> u64 {
        self.server_used.load(Ordering::SeqCst)
    }

    fn round_trip(&self, req: &LossRequest) -> Result<Response, OracleError> {
        let transport = |e: std::io::Error| OracleError::Transport(e.to_string());
        let mut line = serde_json::to_vec(req).map_err(|e| OracleError::Transport(e.to_string()))?;
        line.push(b'\n');
        let mut conn = self
            .conn
            .lock()
            .map_err(|_| OracleError::Transport("connection lock poisoned".into()))?;
        conn.writer.write_all(&line).map_err(transport)?;
        conn.writer.flush().map_err(transport)?;
        let mut buf = String::new();
        let n = conn.reader.read_line(&mut buf).map_err(transport)?;
        if n == 0 {
            return Err(OracleError::Transport("connection closed by server".into()));
        }
        let resp: Response =
            serde_json::from_str(buf.trim_end()).map_err(|e| OracleError::Transport(format!("bad response: {e}")))?;
        if resp.id() != req.id {
            return Err(OracleError::Transport(format!(
                "response id {} does not match request id {}",
                resp.id(),
                req.id
            )));
        }
        Ok(resp)
    }
}

impl LossOracle for RemoteOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn query(&self, x: &[f64], label: i64) -> Result<f64, OracleError> {
        if x.len() != self.dim {
            return Err(OracleError::DimMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let req = LossRequest {
            id: self.next_id.fetch_add(1, Ordering::SeqCst),
            op: OP_LOSS.to_string(),
            x: x.to_vec(),
            label,
        };
        match self.round_trip(&req)? {
            Response::Loss { loss, queries_used, .. } => {
                self.ledger.charge()?;
                self.server_used.store(queries_used, Ordering::SeqCst);
                Ok(loss)
            }
            Response::Error { error, .. } => Err(match error {
                WireError::BudgetExhausted => OracleError::BudgetExhausted {
                    used: self.ledger.used(),
                },
                WireError::DimMismatch => OracleError::DimMismatch {
                    expected: self.dim,
                    got: x.len(),
                },
                WireError::Malformed => OracleError::Malformed("rejected by server".into()),
            }),
        }
    }

    fn queries_used(&self) -> u64 {
        self.ledger.used()
    }
}
