//! Point-promptable segmentation backends.
//!
//! A backend maps a patch plus one or more prompt points to a binary mask of
//! the same size. In-process test backends live in [`mock`]; external
//! processes are reached over the line protocol in [`wire`] through
//! [`remote`].

pub mod mock;
pub mod remote;
pub mod wire;

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, LabelMask, Point};
use crate::tiling::PatchWindow;

pub use mock::{MockOracle, NoiseConfig, NoisyMock};
pub use remote::{serve, serve_tcp, RemoteBackend};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_IN_FLIGHT: usize = 4;

/// Where the predictor finds the patch pixels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PatchSource {
    File {
        path: String,
    },
    /// Row-major interleaved 8-bit samples, base64 encoded.
    Inline {
        channels: u8,
        data: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub id: u64,
    /// Slide coordinates of the patch's top-left pixel.
    pub origin: Point,
    pub width: u32,
    pub height: u32,
    /// Prompt points in patch coordinates.
    pub points: Vec<Point>,
    /// Always false; single-mask output only.
    pub multimask: bool,
    pub patch: Option<PatchSource>,
}

impl PredictRequest {
    pub fn for_window(id: u64, window: &PatchWindow, points: Vec<Point>) -> Self {
        PredictRequest {
            id,
            origin: Point::new(window.x0, window.y0),
            width: window.side,
            height: window.side,
            points,
            multimask: false,
            patch: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::validation(format!("request {} has no prompt points", self.id)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::validation(format!("request {} has an empty patch", self.id)));
        }
        if let Some(p) = self.points.iter().find(|p| p.x >= self.width || p.y >= self.height) {
            return Err(Error::validation(format!(
                "request {}: point ({}, {}) outside the {}x{} patch",
                self.id, p.x, p.y, self.width, self.height
            )));
        }
        if self.multimask {
            return Err(Error::validation("multimask output is not supported"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictResponse {
    pub id: u64,
    pub mask: BinaryMask,
    pub score: f32,
}

impl PredictResponse {
    pub fn check_against(&self, req: &PredictRequest) -> Result<()> {
        if self.id != req.id {
            return Err(Error::protocol(format!(
                "response id {} does not echo request {}",
                self.id, req.id
            )));
        }
        if self.mask.dims() != (req.width, req.height) {
            return Err(Error::protocol(format!(
                "response {} mask is {}x{}, request patch is {}x{}",
                self.id,
                self.mask.width(),
                self.mask.height(),
                req.width,
                req.height
            )));
        }
        Ok(())
    }
}

/// A segmentation backend. Implementations are stateless between requests.
pub trait PredictorBackend: Send + Sync {
    /// Whether identical requests may produce different masks.
    fn nondeterministic(&self) -> bool {
        false
    }

    fn predict(&self, req: &PredictRequest) -> Result<PredictResponse>;

    /// Runs many requests with up to `in_flight` outstanding at once.
    ///
    /// The outer error aborts the whole batch (broken transport, timeout,
    /// protocol violation); inner errors belong to single requests. Results
    /// are returned in request order whatever order they completed in.
    fn predict_batch(&self, reqs: &[PredictRequest], in_flight: usize) -> Result<Vec<Result<PredictResponse>>> {
        let workers = in_flight.max(1).min(reqs.len());
        if workers <= 1 {
            return Ok(reqs.iter().map(|r| self.predict(r)).collect());
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<PredictResponse>>>> = reqs.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= reqs.len() {
                        break;
                    }
                    let out = self.predict(&reqs[i]);
                    *slots[i].lock().unwrap() = Some(out);
                });
            }
        });
        Ok(slots
            .into_iter()
            .map(|s| s.into_inner().unwrap().expect("every slot filled"))
            .collect())
    }
}

impl<B: PredictorBackend + ?Sized> PredictorBackend for Box<B> {
    fn nondeterministic(&self) -> bool {
        (**self).nondeterministic()
    }

    fn predict(&self, req: &PredictRequest) -> Result<PredictResponse> {
        (**self).predict(req)
    }

    fn predict_batch(&self, reqs: &[PredictRequest], in_flight: usize) -> Result<Vec<Result<PredictResponse>>> {
        (**self).predict_batch(reqs, in_flight)
    }
}

/// Validates the request, runs it and checks the response shape.
pub fn predict(backend: &dyn PredictorBackend, req: &PredictRequest) -> Result<PredictResponse> {
    req.validate()?;
    let resp = backend.predict(req)?;
    resp.check_against(req)?;
    Ok(resp)
}

/// Raw interleaved 8-bit slide image that patches are cut from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlideImage {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub data: Vec<u8>,
}

impl SlideImage {
    /// Reads headerless raw pixels; the channel count (1, 3 or 4) is inferred
    /// from the file length.
    pub fn load_raw(path: impl AsRef<Path>, width: u32, height: u32) -> Result<Self> {
        let data = fs::read(path)?;
        let px = width as usize * height as usize;
        let channels = data.len().checked_div(px).unwrap_or(0);
        if px == 0 || data.len() % px != 0 || ![1, 3, 4].contains(&channels) {
            return Err(Error::format(format!(
                "raw image of {} bytes is not 1, 3 or 4 channels of {width}x{height}",
                data.len()
            )));
        }
        Ok(SlideImage {
            width,
            height,
            channels: channels as u8,
            data,
        })
    }

    /// Pixels of `window`; parts beyond the image edge are zero.
    pub fn patch(&self, window: &PatchWindow) -> PatchSource {
        let c = self.channels as usize;
        let side = window.side as usize;
        let mut out = vec![0u8; side * side * c];
        let x_end = (window.x0 as usize + side).min(self.width as usize);
        let y_end = (window.y0 as usize + side).min(self.height as usize);
        if (window.x0 as usize) < x_end {
            let n = (x_end - window.x0 as usize) * c;
            for y in window.y0 as usize..y_end {
                let src = (y * self.width as usize + window.x0 as usize) * c;
                let dst = (y - window.y0 as usize) * side * c;
                out[dst..dst + n].copy_from_slice(&self.data[src..src + n]);
            }
        }
        PatchSource::Inline {
            channels: self.channels,
            data: STANDARD.encode(out),
        }
    }
}

/// Parsed `--backend` value.
#[derive(Clone, Debug, PartialEq)]
pub enum BackendSpec {
    Mock,
    NoisyMock(NoiseConfig),
    /// Shell command speaking the protocol on stdin/stdout.
    Exec(String),
    /// `host:port` of a protocol server.
    Tcp(String),
}

impl std::str::FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "mock" {
            return Ok(BackendSpec::Mock);
        }
        if s == "noisy-mock" {
            return Ok(BackendSpec::NoisyMock(NoiseConfig::default()));
        }
        if let Some(params) = s.strip_prefix("noisy-mock:") {
            return Ok(BackendSpec::NoisyMock(params.parse()?));
        }
        if let Some(cmd) = s.strip_prefix("exec:") {
            if cmd.trim().is_empty() {
                return Err(Error::validation("exec backend needs a command"));
            }
            return Ok(BackendSpec::Exec(cmd.to_string()));
        }
        if let Some(addr) = s.strip_prefix("tcp:") {
            if !addr.contains(':') {
                return Err(Error::validation("tcp backend needs host:port"));
            }
            return Ok(BackendSpec::Tcp(addr.to_string()));
        }
        Err(Error::validation(format!(
            "unknown backend {s:?}; expected mock, noisy-mock, exec:<cmd> or tcp:<host:port>"
        )))
    }
}

impl BackendSpec {
    pub fn needs_ground_truth(&self) -> bool {
        matches!(self, BackendSpec::Mock | BackendSpec::NoisyMock(_))
    }

    /// Instantiates the backend. Mock backends need the ground-truth mask.
    pub fn connect(&self, ground_truth: Option<&LabelMask>, timeout: Duration) -> Result<Box<dyn PredictorBackend>> {
        let gt = || ground_truth.ok_or_else(|| Error::validation("mock backends need a ground-truth mask"));
        Ok(match self {
            BackendSpec::Mock => Box::new(MockOracle::new(gt()?)),
            BackendSpec::NoisyMock(cfg) => Box::new(NoisyMock::new(MockOracle::new(gt()?), *cfg)),
            BackendSpec::Exec(cmd) => Box::new(RemoteBackend::spawn(cmd, timeout)?),
            BackendSpec::Tcp(addr) => Box::new(RemoteBackend::connect_tcp(addr, timeout)?),
        })
    }
}
