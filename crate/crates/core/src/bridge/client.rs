use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use crate::bridge::protocol::{BridgeRequest, BridgeResponse, PROTOCOL_VERSION};
use crate::engine::{LogitSource, Modality, Query, SourceDescriptor};
use crate::error::{BridgeError, SourceError};
use crate::math::LogitVector;
use crate::vocab::TokenId;

pub const DEFAULT_HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_QUERY_TIMEOUT: Duration = Duration::from_secs(120);

/// Where an adapter lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// A child process speaking the protocol on its stdin/stdout.
    Stdio { program: String, args: Vec<String> },
    /// A listening TCP socket.
    Tcp(String),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(addr) => write!(f, "tcp://{addr}"),
            Endpoint::Stdio { program, args } => {
                write!(f, "{program}")?;
                args.iter().try_for_each(|a| write!(f, " {a}"))
            }
        }
    }
}

impl std::str::FromStr for Endpoint {
    type Err = String;

    /// `tcp://HOST:PORT`, or a command line split on whitespace.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            if addr.is_empty() {
                return Err("tcp endpoint needs HOST:PORT".into());
            }
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        let mut words = s.split_whitespace().map(str::to_string);
        let program = words.next().ok_or("empty endpoint")?;
        Ok(Endpoint::Stdio {
            program,
            args: words.collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeOptions {
    pub handshake_timeout: Duration,
    pub query_timeout: Duration,
    /// Vocabulary size the engine expects; the handshake fails on mismatch.
    pub expected_vocab: Option<usize>,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self {
            handshake_timeout: DEFAULT_HANDSHAKE_TIMEOUT,
            query_timeout: DEFAULT_QUERY_TIMEOUT,
            expected_vocab: None,
        }
    }
}

/// One synchronous request/response connection to an adapter.
///
/// Any protocol violation (unparseable line, wrong request id, wrong logits
/// length, timeout, closed stream) breaks the connection for good; later
/// calls return [`BridgeError::Broken`]. An `error` response from the
/// adapter is reported but leaves the connection usable.
pub struct BridgeConnection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    next_id: u64,
    vocab_size: usize,
    broken: bool,
    options: BridgeOptions,
    endpoint: String,
}

impl fmt::Debug for BridgeConnection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BridgeConnection")
            .field("endpoint", &self.endpoint)
            .field("vocab_size", &self.vocab_size)
            .field("next_id", &self.next_id)
            .field("broken", &self.broken)
            .finish()
    }
}

fn spawn_reader(input: impl Read + Send + 'static) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(input);
        loop {
            let mut line = String::new();
            match reader.read_line(&mut line) {
                Ok(0) => break,
                Ok(_) => {
                    if tx.send(Ok(line)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        }
    });
    rx
}

impl BridgeConnection {
    pub fn connect(endpoint: &Endpoint, options: BridgeOptions) -> Result<Self, BridgeError> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                stream.set_nodelay(true)?;
                let reader = stream.try_clone()?;
                Self::from_parts(Box::new(stream), spawn_reader(reader), None, endpoint.to_string(), options)
            }
            Endpoint::Stdio { program, args } => {
                let mut command = Command::new(program);
                command.args(args);
                Self::spawn(command, options)
            }
        }
    }

    pub fn spawn(mut command: Command, options: BridgeOptions) -> Result<Self, BridgeError> {
        let name = format!("{command:?}");
        let mut child = command.stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::inherit()).spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        Self::from_parts(Box::new(stdin), spawn_reader(stdout), Some(child), name, options)
    }

    /// Wraps an already-open byte stream pair and performs the handshake.
    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        options: BridgeOptions,
    ) -> Result<Self, BridgeError> {
        Self::from_parts(Box::new(writer), spawn_reader(reader), None, "streams".into(), options)
    }

    fn from_parts(
        writer: Box<dyn Write + Send>,
        lines: Receiver<std::io::Result<String>>,
        child: Option<Child>,
        endpoint: String,
        options: BridgeOptions,
    ) -> Result<Self, BridgeError> {
        let mut conn = Self {
            writer,
            lines,
            child,
            next_id: 1,
            vocab_size: 0,
            broken: false,
            options,
            endpoint,
        };
        let id = conn.next_id();
        let hello = BridgeRequest::Hello {
            request_id: id,
            protocol_version: PROTOCOL_VERSION,
        };
        let resp = conn.exchange(&hello.encode(), id, options.handshake_timeout)?;
        match resp {
            BridgeResponse::HelloAck { vocab_size, .. } => {
                if vocab_size == 0 {
                    return Err(conn.fail(BridgeError::Protocol("adapter reports an empty vocabulary".into())));
                }
                if let Some(expected) = options.expected_vocab.filter(|&e| e != vocab_size) {
                    return Err(conn.fail(BridgeError::VocabMismatch {
                        expected,
                        adapter: vocab_size,
                    }));
                }
                conn.vocab_size = vocab_size;
                log::debug!("bridge {}: handshake ok, vocab {vocab_size}", conn.endpoint);
                Ok(conn)
            }
            BridgeResponse::Error { error_message, .. } => Err(conn.fail(BridgeError::Remote(error_message))),
            other => Err(conn.fail(BridgeError::Protocol(format!("expected hello_ack, got {other:?}")))),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn is_broken(&self) -> bool {
        self.broken
    }

    fn next_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn fail(&mut self, err: BridgeError) -> BridgeError {
        self.broken = true;
        log::warn!("bridge {}: {err}", self.endpoint);
        err
    }

    fn send_line(&mut self, line: &str) -> Result<(), BridgeError> {
        if self.broken {
            return Err(BridgeError::Broken);
        }
        let framed = format!("{line}\n");
        let sent = self.writer.write_all(framed.as_bytes()).and_then(|_| self.writer.flush());
        sent.map_err(|e| self.fail(e.into()))
    }

    fn receive(&mut self, timeout: Duration) -> Result<BridgeResponse, BridgeError> {
        let line = match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(self.fail(e.into())),
            Err(RecvTimeoutError::Timeout) => return Err(self.fail(BridgeError::Timeout(timeout))),
            Err(RecvTimeoutError::Disconnected) => return Err(self.fail(BridgeError::Closed)),
        };
        BridgeResponse::decode(line.trim_end()).map_err(|e| self.fail(e))
    }

    /// Sends one line and waits for the response carrying `id`.
    fn exchange(&mut self, line: &str, id: u64, timeout: Duration) -> Result<BridgeResponse, BridgeError> {
        self.send_line(line)?;
        let resp = self.receive(timeout)?;
        if resp.request_id() != id {
            return Err(self.fail(BridgeError::Protocol(format!(
                "response for request {} while {id} is pending",
                resp.request_id()
            ))));
        }
        Ok(resp)
    }

    pub fn query(
        &mut self,
        modality: Modality,
        context: &[TokenId],
        visual_ref: Option<&str>,
    ) -> Result<LogitVector, BridgeError> {
        if self.broken {
            return Err(BridgeError::Broken);
        }
        let id = self.next_id();
        let req = BridgeRequest::Logits {
            request_id: id,
            modality,
            context_tokens: context.to_vec(),
            visual_ref: match modality {
                Modality::Multimodal => visual_ref.map(str::to_string),
                Modality::TextOnly => None,
            },
        };
        req.validate()?;
        match self.exchange(&req.encode(), id, self.options.query_timeout)? {
            BridgeResponse::Logits { logits, .. } => {
                if logits.len() != self.vocab_size {
                    return Err(self.fail(BridgeError::Protocol(format!(
                        "{} logits for a vocabulary of {}",
                        logits.len(),
                        self.vocab_size
                    ))));
                }
                LogitVector::new(logits).map_err(|e| self.fail(BridgeError::Protocol(e.to_string())))
            }
            BridgeResponse::Error { error_message, .. } => Err(BridgeError::Remote(error_message)),
            other => Err(self.fail(BridgeError::Protocol(format!("expected logits, got {other:?}")))),
        }
    }

    /// Sends a line that is not a valid request and returns the adapter's
    /// error message. The adapter cannot know the request id of garbage, so
    /// any id is accepted here.
    pub fn send_malformed(&mut self, line: &str) -> Result<String, BridgeError> {
        self.send_line(line)?;
        match self.receive(self.options.query_timeout)? {
            BridgeResponse::Error { error_message, .. } => Ok(error_message),
            other => Err(self.fail(BridgeError::Protocol(format!(
                "malformed line answered with {other:?}"
            )))),
        }
    }

    /// Asks the adapter to exit. The connection is unusable afterwards.
    pub fn shutdown(&mut self) -> Result<(), BridgeError> {
        if self.broken {
            return Err(BridgeError::Broken);
        }
        let id = self.next_id();
        let result = self.send_line(&BridgeRequest::Shutdown { request_id: id }.encode());
        self.broken = true;
        if let Some(child) = self.child.as_mut() {
            let _ = child.wait();
        }
        self.child = None;
        result
    }
}

impl Drop for BridgeConnection {
    fn drop(&mut self) {
        if !self.broken {
            let _ = self.shutdown();
        }
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A [`LogitSource`] backed by an adapter connection.
#[derive(Debug)]
pub struct BridgeSource {
    conn: BridgeConnection,
    descriptor: SourceDescriptor,
}

impl BridgeSource {
    pub fn new(conn: BridgeConnection) -> Self {
        let descriptor = SourceDescriptor {
            vocab_size: conn.vocab_size(),
            supports_visual: true,
            source_id: format!("bridge:{}", conn.endpoint()),
            deterministic: false,
            concurrent_reads: false,
        };
        Self { conn, descriptor }
    }

    pub fn connect(endpoint: &Endpoint, options: BridgeOptions) -> Result<Self, BridgeError> {
        Ok(Self::new(BridgeConnection::connect(endpoint, options)?))
    }

    pub fn connection(&mut self) -> &mut BridgeConnection {
        &mut self.conn
    }
}

impl LogitSource for BridgeSource {
    fn descriptor(&self) -> &SourceDescriptor {
        &self.descriptor
    }

    fn logits(&mut self, query: &Query<'_>) -> Result<LogitVector, SourceError> {
        self.conn
            .query(query.modality, query.context, query.visual_ref)
            .map_err(|e| SourceError::new(self.descriptor.source_id.clone(), e.to_string()))
    }
}
