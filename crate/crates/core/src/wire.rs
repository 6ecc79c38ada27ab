//! Framing for the engine ↔ worker protocol.
//!
//! Every message is
//!
//! ```text
//! "FTIV" | version u16 | msg_type u8 | payload_len u64 | payload
//! ```
//!
//! with all integers little-endian. Payloads:
//!
//! * `Hello`: `len u32 | UTF-8 worker name`
//! * `EstimateRequest`: `t_train u32 | conditional u8 | prompt_len u32 | prompt |
//!   ndim u8 = 4 | M C H W as u32 | f32 tensor, row-major`
//! * `EstimateResponse`: `ndim u8 | dims | f32 tensor`
//! * `Error`: `len u32 | UTF-8 message`
//! * `Shutdown`: empty

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::tensor::{Dims, LatentVideo};

pub const MAGIC: &[u8; 4] = b"FTIV";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 15;
/// Largest payload a peer may announce.
pub const MAX_PAYLOAD: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    EstimateRequest = 2,
    EstimateResponse = 3,
    Error = 4,
    Shutdown = 5,
}

impl TryFrom<u8> for MsgType {
    type Error = crate::error::Error;

    fn try_from(v: u8) -> Result<Self> {
        Ok(match v {
            1 => MsgType::Hello,
            2 => MsgType::EstimateRequest,
            3 => MsgType::EstimateResponse,
            4 => MsgType::Error,
            5 => MsgType::Shutdown,
            other => return Err(Error::Protocol(format!("unknown message type {other}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRequest {
    pub t_train: u32,
    pub conditional: bool,
    pub prompt: String,
    pub latents: LatentVideo,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(String),
    EstimateRequest(EstimateRequest),
    EstimateResponse(LatentVideo),
    Error(String),
    Shutdown,
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Hello(_) => MsgType::Hello,
            Message::EstimateRequest(_) => MsgType::EstimateRequest,
            Message::EstimateResponse(_) => MsgType::EstimateResponse,
            Message::Error(_) => MsgType::Error,
            Message::Shutdown => MsgType::Shutdown,
        }
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u32::try_from(s.len()).map_err(|_| Error::Protocol("string too long".into()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, v: &LatentVideo) -> Result<()> {
    let d = v.dims();
    out.push(4);
    for x in [v.num_frames(), d.c, d.h, d.w] {
        let x = u32::try_from(x).map_err(|_| Error::Protocol("dimension exceeds u32".into()))?;
        out.extend_from_slice(&x.to_le_bytes());
    }
    for f in v.frames() {
        for x in f.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(())
}

pub fn encode_payload(msg: &Message) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match msg {
        Message::Hello(name) => put_str(&mut out, name)?,
        Message::Error(text) => put_str(&mut out, text)?,
        Message::Shutdown => {}
        Message::EstimateRequest(req) => {
            out.extend_from_slice(&req.t_train.to_le_bytes());
            out.push(u8::from(req.conditional));
            put_str(&mut out, &req.prompt)?;
            put_tensor(&mut out, &req.latents)?;
        }
        Message::EstimateResponse(v) => put_tensor(&mut out, v)?,
    }
    Ok(out)
}

pub fn encode_message(msg: &Message) -> Result<Vec<u8>> {
    let payload = encode_payload(msg)?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(msg.msg_type() as u8);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn write_message(w: &mut impl Write, msg: &Message) -> Result<()> {
    let bytes = encode_message(msg)?;
    w.write_all(&bytes).map_err(transport)?;
    w.flush().map_err(transport)
}

fn transport(e: io::Error) -> Error {
    Error::Transport(e.to_string())
}

/// Parsed fixed-size header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub msg_type: MsgType,
    pub payload_len: u64,
}

pub fn decode_header(bytes: &[u8; HEADER_LEN]) -> Result<Header> {
    if &bytes[..4] != MAGIC {
        return Err(Error::Protocol("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::ProtocolVersion {
            expected: VERSION,
            actual: version,
        });
    }
    let msg_type = MsgType::try_from(bytes[6])?;
    let payload_len = u64::from_le_bytes(bytes[7..15].try_into().unwrap());
    if payload_len > MAX_PAYLOAD {
        return Err(Error::Protocol(format!(
            "payload length {payload_len} exceeds limit"
        )));
    }
    Ok(Header {
        msg_type,
        payload_len,
    })
}

pub fn read_message(r: &mut impl Read) -> Result<Message> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(transport)?;
    let header = decode_header(&header)?;
    let mut payload = vec![0u8; header.payload_len as usize];
    r.read_exact(&mut payload).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Transport(format!(
                "stream ended inside a {}-byte payload",
                header.payload_len
            ))
        } else {
            transport(e)
        }
    })?;
    decode_payload(header.msg_type, &payload)
}

/// Decodes one complete frame held in memory.
pub fn decode_message(bytes: &[u8]) -> Result<Message> {
    let head: &[u8; HEADER_LEN] = bytes
        .get(..HEADER_LEN)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| Error::Protocol(format!("frame shorter than {HEADER_LEN}-byte header")))?;
    let header = decode_header(head)?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != header.payload_len {
        return Err(Error::PayloadSize {
            expected: header.payload_len,
            actual: payload.len() as u64,
        });
    }
    decode_payload(header.msg_type, payload)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Protocol(format!("payload truncated in {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Protocol(format!("{what} is not UTF-8")))
    }

    fn tensor(&mut self) -> Result<LatentVideo> {
        let ndim = self.u8("ndim")?;
        if ndim != 4 {
            return Err(Error::Protocol("ndim must be 4".into()));
        }
        let mut dims = [0u64; 4];
        for d in &mut dims {
            *d = u64::from(self.u32("dims")?);
        }
        let count = dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d));
        if count == Some(0) {
            return Err(Error::Protocol("zero-sized tensor".into()));
        }
        let remaining = (self.buf.len() - self.pos) as u64;
        let expected = count.and_then(|c| c.checked_mul(4)).unwrap_or(u64::MAX);
        if remaining != expected {
            return Err(Error::PayloadSize {
                expected,
                actual: remaining,
            });
        }
        let data: Vec<f32> = self
            .take(expected as usize, "tensor")?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let [m, c, h, w] = dims.map(|d| d as usize);
        LatentVideo::from_flat(m, Dims::new(c, h, w), &data)
    }

    fn finish(&self, what: &str) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::Protocol(format!(
                "{} trailing bytes after {what}",
                self.buf.len() - self.pos
            )))
        }
    }
}

pub fn decode_payload(msg_type: MsgType, payload: &[u8]) -> Result<Message> {
    let mut cur = Cursor {
        buf: payload,
        pos: 0,
    };
    let msg = match msg_type {
        MsgType::Hello => Message::Hello(cur.string("worker name")?),
        MsgType::Error => Message::Error(cur.string("error message")?),
        MsgType::Shutdown => Message::Shutdown,
        MsgType::EstimateRequest => {
            let t_train = cur.u32("t_train")?;
            let conditional = match cur.u8("conditional")? {
                0 => false,
                1 => true,
                v => return Err(Error::Protocol(format!("conditional flag {v} not 0/1"))),
            };
            let prompt = cur.string("prompt")?;
            Message::EstimateRequest(EstimateRequest {
                t_train,
                conditional,
                prompt,
                latents: cur.tensor()?,
            })
        }
        MsgType::EstimateResponse => Message::EstimateResponse(cur.tensor()?),
    };
    cur.finish("payload")?;
    Ok(msg)
}
