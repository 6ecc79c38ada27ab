//! Client side of the worker protocol.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::estimator::{NoiseEstimator, PromptSpec};
use crate::tensor::LatentVideo;
use crate::wire::{read_message, write_message, EstimateRequest, Message};

pub const CLIENT_NAME: &str = "flexti2v";

/// Where a worker lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    /// Program and arguments of a child process speaking over stdin/stdout.
    Stdio(Vec<String>),
}

impl Endpoint {
    /// Parses `tcp://host:port`, bare `host:port`, or `stdio:<command line>`.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("stdio:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
            if argv.is_empty() {
                return Err(Error::config("stdio endpoint needs a command"));
            }
            return Ok(Endpoint::Stdio(argv));
        }
        let addr = s.strip_prefix("tcp://").unwrap_or(s);
        if addr.is_empty() || !addr.contains(':') {
            return Err(Error::config(format!("endpoint {s:?} is not host:port")));
        }
        Ok(Endpoint::Tcp(addr.to_owned()))
    }
}

pub struct RemoteEstimator {
    reader: BufReader<Box<dyn Read + Send>>,
    writer: BufWriter<Box<dyn Write + Send>>,
    worker_name: String,
    child: Option<Child>,
    closed: bool,
}

impl std::fmt::Debug for RemoteEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEstimator")
            .field("worker_name", &self.worker_name)
            .field("closed", &self.closed)
            .finish()
    }
}

impl RemoteEstimator {
    pub fn connect(endpoint: &Endpoint) -> Result<Self> {
        match endpoint {
            Endpoint::Tcp(addr) => Self::connect_tcp(addr),
            Endpoint::Stdio(argv) => Self::spawn(&argv[0], &argv[1..]),
        }
    }

    pub fn connect_tcp(addr: &str) -> Result<Self> {
        let stream = TcpStream::connect(addr)
            .map_err(|e| Error::Transport(format!("connect {addr}: {e}")))?;
        stream
            .set_nodelay(true)
            .map_err(|e| Error::Transport(e.to_string()))?;
        let reader = stream
            .try_clone()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Self::handshake(Box::new(reader), Box::new(stream), None)
    }

    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Transport(format!("spawn {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::handshake(Box::new(stdout), Box::new(stdin), Some(child))
    }

    /// Wraps an already-open byte stream and performs the Hello exchange.
    pub fn from_streams(
        reader: Box<dyn Read + Send>,
        writer: Box<dyn Write + Send>,
    ) -> Result<Self> {
        Self::handshake(reader, writer, None)
    }

    fn handshake(
        reader: Box<dyn Read + Send>,
        writer: Box<dyn Write + Send>,
        child: Option<Child>,
    ) -> Result<Self> {
        let mut client = Self {
            reader: BufReader::new(reader),
            writer: BufWriter::new(writer),
            worker_name: String::new(),
            child,
            closed: false,
        };
        write_message(&mut client.writer, &Message::Hello(CLIENT_NAME.into()))?;
        match read_message(&mut client.reader)? {
            Message::Hello(name) => client.worker_name = name,
            Message::Error(msg) => return Err(Error::Worker(msg)),
            other => {
                return Err(Error::Protocol(format!(
                    "expected Hello, got {:?}",
                    other.msg_type()
                )))
            }
        }
        Ok(client)
    }

    pub fn worker_name(&self) -> &str {
        &self.worker_name
    }

    /// Sends Shutdown and reaps a child worker. Idempotent.
    pub fn shutdown(&mut self) -> Result<()> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        let sent = write_message(&mut self.writer, &Message::Shutdown);
        if let Some(mut child) = self.child.take() {
            wait_briefly(&mut child);
        }
        sent
    }
}

fn wait_briefly(child: &mut Child) {
    for _ in 0..50 {
        if let Ok(Some(_)) = child.try_wait() {
            return;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    let _ = child.kill();
    let _ = child.wait();
}

impl Drop for RemoteEstimator {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}

impl NoiseEstimator for RemoteEstimator {
    fn estimate(
        &mut self,
        z: &LatentVideo,
        t_train: u32,
        prompt: &PromptSpec,
        conditional: bool,
    ) -> Result<LatentVideo> {
        if self.closed {
            return Err(Error::Transport("connection already shut down".into()));
        }
        let request = Message::EstimateRequest(EstimateRequest {
            t_train,
            conditional,
            prompt: prompt.for_branch(conditional).to_owned(),
            latents: z.clone(),
        });
        write_message(&mut self.writer, &request)?;
        match read_message(&mut self.reader)? {
            Message::EstimateResponse(v) => {
                let expected = (z.num_frames() * z.dims().len() * 4) as u64;
                let actual = (v.num_frames() * v.dims().len() * 4) as u64;
                if expected != actual {
                    return Err(Error::PayloadSize { expected, actual });
                }
                if v.dims() != z.dims() || v.num_frames() != z.num_frames() {
                    return Err(Error::dims(format!(
                        "worker replied {}×{} for a {}×{} request",
                        v.num_frames(),
                        v.dims(),
                        z.num_frames(),
                        z.dims()
                    )));
                }
                Ok(v)
            }
            Message::Error(msg) => Err(Error::Worker(msg)),
            other => Err(Error::Protocol(format!(
                "expected EstimateResponse, got {:?}",
                other.msg_type()
            ))),
        }
    }

    fn name(&self) -> &str {
        "remote"
    }
}
