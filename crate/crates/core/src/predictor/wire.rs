//! Line-oriented predictor protocol.
//!
//! Every frame is one line: the CRC-32 (IEEE) of the JSON payload as eight
//! lowercase hex digits, one space, the JSON payload, `\n`. A frame whose
//! checksum, prefix or JSON does not check out is a protocol error.
//!
//! The client opens with a `hello` frame and the server answers with its own
//! `hello` (or an `error` frame when the version is not supported). Then the
//! client sends `predict` frames and the server answers each with a `mask`
//! or `error` frame carrying the same `id`. Responses may come back in any
//! order. Masks travel as base64 of row-major bits packed MSB first with no
//! per-row padding; unused bits of the last byte must be zero.

use std::io::{BufRead, Read, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{PredictRequest, PredictResponse};
use crate::error::{Error, Result};
use crate::raster::BinaryMask;

pub const PROTOCOL_NAME: &str = "slideprompt-predictor";
pub const PROTOCOL_VERSION: u32 = 1;

/// Longest accepted frame line in bytes.
pub const MAX_FRAME_LEN: usize = 256 << 20;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub protocol: String,
    pub version: u32,
    pub nondeterministic: bool,
}

impl Hello {
    pub fn current(nondeterministic: bool) -> Self {
        Hello {
            protocol: PROTOCOL_NAME.to_string(),
            version: PROTOCOL_VERSION,
            nondeterministic,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.protocol != PROTOCOL_NAME {
            return Err(Error::Handshake(format!(
                "peer speaks {:?}, expected {PROTOCOL_NAME:?}",
                self.protocol
            )));
        }
        if self.version != PROTOCOL_VERSION {
            return Err(Error::Handshake(format!(
                "peer protocol version {} is not supported (want {PROTOCOL_VERSION})",
                self.version
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskFrame {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub bits: String,
    pub score: f32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorFrame {
    pub id: Option<u64>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Frame {
    Hello(Hello),
    Predict(PredictRequest),
    Mask(MaskFrame),
    Error(ErrorFrame),
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(frame).map_err(|e| Error::Internal(e.to_string()))?;
    let mut out = format!("{:08x} ", crc32fast::hash(&json)).into_bytes();
    out.extend_from_slice(&json);
    out.push(b'\n');
    Ok(out)
}

/// Parses one frame line, with or without its trailing newline.
pub fn decode_frame(line: &[u8]) -> Result<Frame> {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    if line.len() < 10 || line[8] != b' ' {
        return Err(Error::protocol("frame lacks the checksum prefix"));
    }
    let hex = std::str::from_utf8(&line[..8])
        .ok()
        .filter(|h| h.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)))
        .ok_or_else(|| Error::protocol("frame checksum is not lowercase hex"))?;
    let expected = u32::from_str_radix(hex, 16).expect("validated hex");
    let payload = &line[9..];
    if crc32fast::hash(payload) != expected {
        return Err(Error::protocol("frame checksum mismatch"));
    }
    serde_json::from_slice(payload).map_err(|e| Error::protocol(format!("bad frame: {e}")))
}

pub fn write_frame<W: Write>(out: &mut W, frame: &Frame) -> Result<()> {
    out.write_all(&encode_frame(frame)?)?;
    out.flush()?;
    Ok(())
}

/// Reads the next frame; `None` on clean end of stream.
pub fn read_frame<R: BufRead>(input: &mut R) -> Result<Option<Frame>> {
    let mut line = Vec::new();
    let n = input
        .by_ref()
        .take(MAX_FRAME_LEN as u64 + 1)
        .read_until(b'\n', &mut line)?;
    if n == 0 {
        return Ok(None);
    }
    if line.last() != Some(&b'\n') {
        return Err(Error::protocol(if line.len() > MAX_FRAME_LEN {
            "frame too long"
        } else {
            "truncated frame"
        }));
    }
    decode_frame(&line).map(Some)
}

/// Row-major mask bits, MSB first, zero padded to whole bytes.
pub fn pack_bytes(mask: &BinaryMask) -> Vec<u8> {
    let mut bytes = vec![0u8; mask.data().len().div_ceil(8)];
    for (i, _) in mask.data().iter().enumerate().filter(|(_, &v)| v) {
        bytes[i / 8] |= 0x80 >> (i % 8);
    }
    bytes
}

pub fn pack_bits(mask: &BinaryMask) -> String {
    STANDARD.encode(pack_bytes(mask))
}

pub fn unpack_bits(width: u32, height: u32, bits: &str) -> Result<BinaryMask> {
    let bytes = STANDARD
        .decode(bits)
        .map_err(|e| Error::protocol(format!("mask is not base64: {e}")))?;
    let n = width as usize * height as usize;
    if bytes.len() != n.div_ceil(8) {
        return Err(Error::protocol(format!(
            "mask has {} bytes, {width}x{height} needs {}",
            bytes.len(),
            n.div_ceil(8)
        )));
    }
    if !n.is_multiple_of(8) && bytes[n / 8] & (0xFF >> (n % 8)) != 0 {
        return Err(Error::protocol("mask padding bits are not zero"));
    }
    let data = (0..n).map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0).collect();
    BinaryMask::new(width, height, data)
}

impl From<&PredictResponse> for MaskFrame {
    fn from(r: &PredictResponse) -> Self {
        MaskFrame {
            id: r.id,
            width: r.mask.width(),
            height: r.mask.height(),
            bits: pack_bits(&r.mask),
            score: r.score,
        }
    }
}

impl TryFrom<MaskFrame> for PredictResponse {
    type Error = Error;

    fn try_from(f: MaskFrame) -> Result<Self> {
        Ok(PredictResponse {
            id: f.id,
            mask: unpack_bits(f.width, f.height, &f.bits)?,
            score: f.score,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::PatchSource;
    use crate::raster::Point;
    use proptest::prelude::*;

    #[test]
    fn golden_frames() {
        let req = PredictRequest {
            id: 7,
            origin: Point::new(512, 256),
            width: 4,
            height: 3,
            points: vec![Point::new(1, 1)],
            multimask: false,
            patch: None,
        };
        let mask = BinaryMask::from_fn(4, 3, |x, y| matches!((x, y), (1 | 2, 0) | (_, 1) | (1, 2)));
        let resp = PredictResponse {
            id: 7,
            mask,
            score: 0.875,
        };
        let cases = [
            (
                Frame::Hello(Hello::current(false)),
                r#"4f4650e7 {"type":"hello","protocol":"slideprompt-predictor","version":1,"nondeterministic":false}"#,
            ),
            (
                Frame::Predict(req),
                r#"353132f1 {"type":"predict","id":7,"origin":{"x":512,"y":256},"width":4,"height":3,"points":[{"x":1,"y":1}],"multimask":false,"patch":null}"#,
            ),
            (
                Frame::Mask(MaskFrame::from(&resp)),
                r#"8f425574 {"type":"mask","id":7,"width":4,"height":3,"bits":"b0A=","score":0.875}"#,
            ),
            (
                Frame::Error(ErrorFrame {
                    id: Some(7),
                    message: "boom".into(),
                }),
                r#"734c7137 {"type":"error","id":7,"message":"boom"}"#,
            ),
        ];
        for (frame, line) in cases {
            assert_eq!(
                String::from_utf8(encode_frame(&frame).unwrap()).unwrap(),
                format!("{line}\n")
            );
            assert_eq!(decode_frame(line.as_bytes()).unwrap(), frame);
        }
    }

    fn request_strategy() -> impl Strategy<Value = PredictRequest> {
        (
            any::<u64>(),
            (0u32..100_000, 0u32..100_000),
            1u32..2048,
            1u32..2048,
            proptest::collection::vec((0u32..2048, 0u32..2048), 1..6),
            proptest::option::of(prop_oneof![
                "[a-z/._]{1,20}".prop_map(|path| PatchSource::File { path }),
                proptest::collection::vec(any::<u8>(), 0..30).prop_map(|b| PatchSource::Inline {
                    channels: 3,
                    data: STANDARD.encode(b)
                }),
            ]),
        )
            .prop_map(|(id, (ox, oy), width, height, pts, patch)| PredictRequest {
                id,
                origin: Point::new(ox, oy),
                width,
                height,
                points: pts
                    .into_iter()
                    .map(|(x, y)| Point::new(x % width, y % height))
                    .collect(),
                multimask: false,
                patch,
            })
    }

    proptest! {
        #[test]
        fn request_frames_round_trip(req in request_strategy()) {
            let bytes = encode_frame(&Frame::Predict(req.clone())).unwrap();
            prop_assert_eq!(decode_frame(&bytes).unwrap(), Frame::Predict(req));
        }

        #[test]
        fn mask_bits_round_trip(w in 1u32..40, h in 1u32..40, seed in any::<u64>()) {
            let mut s = seed | 1;
            let mask = BinaryMask::from_fn(w, h, |_, _| {
                s ^= s << 13; s ^= s >> 7; s ^= s << 17;
                s & 1 == 1
            });
            prop_assert_eq!(unpack_bits(w, h, &pack_bits(&mask)).unwrap(), mask);
        }

        #[test]
        fn single_byte_corruption_is_detected(pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
            let mask = BinaryMask::from_fn(13, 7, |x, y| (x * y) % 3 == 0);
            let resp = PredictResponse { id: 9, mask, score: 1.0 };
            let mut bytes = encode_frame(&Frame::Mask(MaskFrame::from(&resp))).unwrap();
            let i = pos.index(bytes.len() - 1); // keep the newline
            bytes[i] ^= flip;
            prop_assert!(matches!(decode_frame(&bytes), Err(Error::Protocol(_))));
        }
    }

    #[test]
    fn packing_layout() {
        let mask = BinaryMask::new(3, 3, vec![true, false, false, false, false, false, false, false, true]).unwrap();
        // bits 1000_0000 1000_0000 (second byte: bit 8 set, 7 padding bits)
        assert_eq!(pack_bits(&mask), STANDARD.encode([0x80, 0x80]));
    }

    #[test]
    fn nonzero_padding_rejected() {
        assert!(matches!(
            unpack_bits(3, 3, &STANDARD.encode([0x80, 0x81])),
            Err(Error::Protocol(_))
        ));
        assert!(unpack_bits(3, 3, &STANDARD.encode([0x80])).is_err());
    }

    #[test]
    fn hello_frame_layout() {
        let bytes = encode_frame(&Frame::Hello(Hello::current(false))).unwrap();
        let text = std::str::from_utf8(&bytes).unwrap();
        let json = r#"{"type":"hello","protocol":"slideprompt-predictor","version":1,"nondeterministic":false}"#;
        assert_eq!(text, format!("{:08x} {json}\n", crc32fast::hash(json.as_bytes())));
    }

    #[test]
    fn version_two_rejected() {
        let mut h = Hello::current(false);
        h.version = 2;
        assert!(matches!(h.check(), Err(Error::Handshake(_))));
        assert!(Hello::current(true).check().is_ok());
    }

    #[test]
    fn truncated_stream() {
        let bytes = encode_frame(&Frame::Hello(Hello::current(false))).unwrap();
        let mut r = &bytes[..bytes.len() - 1];
        assert!(matches!(read_frame(&mut r), Err(Error::Protocol(_))));
        let mut empty: &[u8] = &[];
        assert!(read_frame(&mut empty).unwrap().is_none());
    }
}
