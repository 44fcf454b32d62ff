//! Backends running as external processes, speaking JSON lines over
//! stdin/stdout.
//!
//! Protocol version 1. Every request is one line:
//!
//! ```text
//! {"v":1,"id":7,"op":"hello"}
//! {"v":1,"id":8,"op":"detect","image":{"width":W,"height":H,"png_base64":"..."},"geometry":{...}}
//! {"v":1,"id":9,"op":"embed","image":{"width":W,"height":H,"png_base64":"..."}}
//! ```
//!
//! and is answered by exactly one line carrying the same `id`:
//!
//! ```text
//! {"v":1,"id":7,"ok":true,"dim":512}
//! {"v":1,"id":8,"ok":true,"faces":[{"box":[x,y,w,h],"score":0.98}]}
//! {"v":1,"id":9,"ok":true,"embedding":[0.01,...]}
//! {"v":1,"id":9,"ok":false,"error":"..."}
//! ```
//!
//! `geometry` is the panorama's angle/pixel mapping (see
//! [`PanoramaGeometry`]); backends that only look at pixels ignore it.

use std::ffi::OsStr;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Detection, Detector, Embedder, Embedding, RecognizerError};
use crate::raster::Raster;
use crate::stitcher::PanoramaGeometry;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct WireImage {
    width: u32,
    height: u32,
    png_base64: String,
}

impl WireImage {
    fn encode(r: &Raster) -> Self {
        WireImage {
            width: r.width(),
            height: r.height(),
            png_base64: B64.encode(r.to_png()),
        }
    }

    fn decode(&self) -> Result<Raster, String> {
        let bytes = B64.decode(&self.png_base64).map_err(|e| e.to_string())?;
        let r = Raster::from_image_bytes(&bytes).map_err(|e| e.to_string())?;
        if r.width() != self.width || r.height() != self.height {
            return Err("image size does not match header".into());
        }
        Ok(r)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum Op {
    Hello,
    Detect {
        image: WireImage,
        geometry: PanoramaGeometry,
    },
    Embed {
        image: WireImage,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Request {
    v: u32,
    id: u64,
    #[serde(flatten)]
    op: Op,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Response {
    v: u32,
    id: u64,
    ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    faces: Option<Vec<Detection>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f32>>,
}

struct Channel {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Detector and embedder served by a child process.
pub struct SubprocessBackend {
    channel: Mutex<Channel>,
    dim: usize,
    next_id: AtomicU64,
}

impl std::fmt::Debug for SubprocessBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubprocessBackend").field("dim", &self.dim).finish()
    }
}

fn failure(msg: impl std::fmt::Display) -> RecognizerError {
    RecognizerError::BackendFailure(msg.to_string())
}

impl SubprocessBackend {
    /// Start `program args...` and perform the hello handshake.
    pub fn spawn<S: AsRef<OsStr>>(program: impl AsRef<OsStr>, args: &[S]) -> Result<Self, RecognizerError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(failure)?;
        let stdin = child.stdin.take().ok_or_else(|| failure("no stdin"))?;
        let stdout = BufReader::new(child.stdout.take().ok_or_else(|| failure("no stdout"))?);
        let mut backend = SubprocessBackend {
            channel: Mutex::new(Channel { child, stdin, stdout }),
            dim: 0,
            next_id: AtomicU64::new(1),
        };
        let hello = backend.call(Op::Hello)?;
        backend.dim = hello.dim.filter(|d| *d > 0).ok_or_else(|| failure("hello without dim"))?;
        Ok(backend)
    }

    fn call(&self, op: Op) -> Result<Response, RecognizerError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut line = serde_json::to_string(&Request {
            v: PROTOCOL_VERSION,
            id,
            op,
        })
        .map_err(failure)?;
        line.push('\n');
        let mut ch = self.channel.lock().unwrap_or_else(|p| p.into_inner());
        ch.stdin.write_all(line.as_bytes()).map_err(failure)?;
        ch.stdin.flush().map_err(failure)?;
        let mut reply = String::new();
        if ch.stdout.read_line(&mut reply).map_err(failure)? == 0 {
            return Err(failure("backend closed its output"));
        }
        let resp: Response = serde_json::from_str(&reply).map_err(failure)?;
        if resp.v != PROTOCOL_VERSION || resp.id != id {
            return Err(failure(format!("unexpected reply v{} id {}", resp.v, resp.id)));
        }
        if !resp.ok {
            return Err(failure(resp.error.unwrap_or_else(|| "unspecified error".into())));
        }
        Ok(resp)
    }
}

impl Drop for SubprocessBackend {
    fn drop(&mut self) {
        let ch = self.channel.get_mut().unwrap_or_else(|p| p.into_inner());
        let _ = ch.child.kill();
        let _ = ch.child.wait();
    }
}

impl Embedder for SubprocessBackend {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, crop: &Raster) -> Result<Embedding, RecognizerError> {
        if crop.is_empty() {
            return Err(failure("empty crop"));
        }
        let resp = self.call(Op::Embed {
            image: WireImage::encode(crop),
        })?;
        let e = Embedding::from_raw(resp.embedding.ok_or_else(|| failure("reply without embedding"))?);
        if e.dim() != self.dim {
            return Err(RecognizerError::DimensionMismatch {
                expected: self.dim,
                got: e.dim(),
            });
        }
        if (e.norm() - 1.0).abs() > 1e-6 {
            return Err(failure(format!("embedding norm {}", e.norm())));
        }
        Ok(e)
    }
}

impl Detector for SubprocessBackend {
    fn detect(&self, image: &Raster, geometry: &PanoramaGeometry) -> Result<Vec<Detection>, RecognizerError> {
        let resp = self.call(Op::Detect {
            image: WireImage::encode(image),
            geometry: geometry.clone(),
        })?;
        resp.faces.ok_or_else(|| failure("reply without faces"))
    }
}

fn answer(line: &str, detector: &dyn Detector, embedder: &dyn Embedder) -> Response {
    let req: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            return Response {
                v: PROTOCOL_VERSION,
                error: Some(format!("bad request: {e}")),
                ..Default::default()
            }
        }
    };
    let mut resp = Response {
        v: PROTOCOL_VERSION,
        id: req.id,
        ..Default::default()
    };
    if req.v != PROTOCOL_VERSION {
        resp.error = Some(format!("unsupported protocol version {}", req.v));
        return resp;
    }
    let result = match req.op {
        Op::Hello => {
            resp.dim = Some(embedder.dim());
            Ok(())
        }
        Op::Detect { image, geometry } => image
            .decode()
            .map_err(failure)
            .and_then(|r| detector.detect(&r, &geometry))
            .map(|faces| resp.faces = Some(faces)),
        Op::Embed { image } => image
            .decode()
            .map_err(failure)
            .and_then(|r| embedder.embed(&r))
            .map(|e| resp.embedding = Some(e.as_slice().to_vec())),
    };
    match result {
        Ok(()) => resp.ok = true,
        Err(e) => resp.error = Some(e.to_string()),
    }
    resp
}

/// Serve the protocol until `reader` hits end of input.
pub fn serve_protocol(
    reader: impl BufRead,
    mut writer: impl Write,
    detector: &dyn Detector,
    embedder: &dyn Embedder,
) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = answer(&line, detector, embedder);
        serde_json::to_writer(&mut writer, &resp).map_err(std::io::Error::other)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}
