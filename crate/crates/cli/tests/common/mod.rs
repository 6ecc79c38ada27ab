#![allow(dead_code)]

use std::io::{BufReader, BufWriter};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::thread::JoinHandle;

use flexti2v_core::estimator::dummy_denoise;
use flexti2v_core::io::encode_ppm;
use flexti2v_core::wire::{read_message, write_message, Message};
use flexti2v_core::Raster;
use serde_json::{json, Value};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flexti2v"))
}

/// Runs the binary with a scrubbed worker override unless one is given.
pub fn flexti2v(args: &[&str], worker_env: Option<&str>) -> Output {
    let mut cmd = bin();
    cmd.args(args).env_remove(flexti2v_cli::WORKER_ENV);
    if let Some(w) = worker_env {
        cmd.env(flexti2v_cli::WORKER_ENV, w);
    }
    cmd.output().expect("spawn flexti2v")
}

pub fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not a JSON line: {text}"))
}

/// An 8×8 RGB test image with a per-tag gradient.
pub fn write_image(dir: &Path, name: &str, tag: u8) -> PathBuf {
    let (h, w) = (8, 8);
    let mut data = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for i in 0..h {
            for j in 0..w {
                let v = (tag as usize * 37 + c * 61 + i * 23 + j * 11) % 256;
                data.push(flexti2v_core::io::pixel_to_unit(v as u8));
            }
        }
    }
    let raster = Raster::from_vec(h, w, data).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, encode_ppm(&raster)).unwrap();
    path
}

/// Writes a config next to one generated image per position and returns its path.
pub fn write_config(dir: &Path, positions: &[usize], extra: Value) -> PathBuf {
    let conditions: Vec<Value> = positions
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let name = format!("cond{i}.ppm");
            write_image(dir, &name, i as u8 + 1);
            json!({"path": name, "position": p, "format": "ppm"})
        })
        .collect();
    let mut cfg = json!({
        "prompt": "a red kite over the sea",
        "conditions": conditions,
        "estimator": "dummy",
        "output_dir": "out",
    });
    for (k, v) in extra.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
    path
}

pub fn read_report(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap()
}

pub fn manifest_digests(report: &Value) -> Vec<(String, String)> {
    report["manifest"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| {
            (
                e["path"].as_str().unwrap().to_string(),
                e["sha256"].as_str().unwrap().to_string(),
            )
        })
        .collect()
}

/// TCP worker serving the reference dummy for one client connection.
/// `fail_at` turns that request (1-based) into an Error reply.
pub fn spawn_dummy_worker(fail_at: Option<usize>) -> (String, JoinHandle<usize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut r = BufReader::new(stream.try_clone().unwrap());
        let mut w = BufWriter::new(stream);
        let mut served = 0;
        loop {
            match read_message(&mut r) {
                Ok(Message::Hello(_)) => {
                    write_message(&mut w, &Message::Hello("test-worker".into())).unwrap()
                }
                Ok(Message::EstimateRequest(req)) => {
                    served += 1;
                    let reply = if Some(served) == fail_at {
                        Message::Error("oom".into())
                    } else {
                        Message::EstimateResponse(dummy_denoise(
                            &req.latents,
                            req.t_train,
                            req.conditional,
                        ))
                    };
                    if write_message(&mut w, &reply).is_err() {
                        return served;
                    }
                }
                _ => return served,
            }
        }
    });
    (addr, handle)
}

/// An address nothing listens on.
pub fn dead_endpoint() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    addr
}
