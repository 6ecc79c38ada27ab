#![allow(dead_code)]

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpListener;
use std::thread::JoinHandle;

use flexti2v_core::estimator::dummy_denoise;
use flexti2v_core::rng::{Purpose, StreamKey};
use flexti2v_core::wire::{read_message, write_message, EstimateRequest, Message};
use flexti2v_core::{Dims, Error, LatentFrame, LatentVideo};

/// What the fake worker did before its loop ended.
#[derive(Debug, Default)]
pub struct ServeLog {
    pub hello_from: Option<String>,
    pub requests: usize,
    pub saw_shutdown: bool,
    pub error: Option<String>,
}

pub fn dummy_reply(req: &EstimateRequest) -> Message {
    Message::EstimateResponse(dummy_denoise(&req.latents, req.t_train, req.conditional))
}

/// Minimal protocol server: Hello handshake, then `reply` per request until
/// Shutdown or a framing error (answered with an Error message).
pub fn serve(
    reader: impl Read,
    writer: impl Write,
    mut reply: impl FnMut(usize, &EstimateRequest) -> Message,
) -> ServeLog {
    let mut r = BufReader::new(reader);
    let mut w = BufWriter::new(writer);
    let mut log = ServeLog::default();
    loop {
        match read_message(&mut r) {
            Ok(Message::Hello(name)) => {
                log.hello_from = Some(name);
                let _ = write_message(&mut w, &Message::Hello("fake-worker".into()));
            }
            Ok(Message::EstimateRequest(req)) => {
                log.requests += 1;
                let _ = write_message(&mut w, &reply(log.requests, &req));
            }
            Ok(Message::Shutdown) => {
                log.saw_shutdown = true;
                return log;
            }
            Ok(other) => {
                let msg = format!("unexpected {:?}", other.msg_type());
                let _ = write_message(&mut w, &Message::Error(msg.clone()));
                log.error = Some(msg);
                return log;
            }
            Err(Error::Transport(_)) => return log,
            Err(e) => {
                let _ = write_message(&mut w, &Message::Error(e.to_string()));
                log.error = Some(e.to_string());
                return log;
            }
        }
    }
}

/// Binds a loopback port and serves one connection on a background thread.
pub fn spawn_tcp_worker(
    reply: impl FnMut(usize, &EstimateRequest) -> Message + Send + 'static,
) -> (String, JoinHandle<ServeLog>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let reader = stream.try_clone().unwrap();
        serve(reader, stream, reply)
    });
    (addr, handle)
}

pub const TOY: Dims = Dims::new(4, 8, 8);

/// Deterministic test latent with values in roughly [-1, 1].
pub fn latent(tag: u64) -> LatentFrame {
    flexti2v_core::engine::gaussian_frame(TOY, StreamKey::new(tag, Purpose::InitNoise, 77, 77, 77))
        .map(|v| (0.5 * v).clamp(-1.0, 1.0))
}

pub fn video(tag: u64, frames: usize) -> LatentVideo {
    LatentVideo::new((0..frames as u64).map(|m| latent(tag * 1000 + m)).collect()).unwrap()
}
