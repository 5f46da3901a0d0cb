//! Micro-batch wire codec and the simulated edge-to-cloud link.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset size  field
//! 0      4     magic "VWIN"
//! 4      2     version (1)
//! 6      8     stream_id
//! 14     8     window unit id
//! 22     8     batch_id
//! 30     8     keyframe_ts_ms
//! 38     4     frame_count n
//! 42     2     width
//! 44     2     height
//! 46     1     flags: bit0 diff-coded, bit1 compressed, bit2 pixels present,
//!              bits3-4 split reason
//! 47     4n    per-frame ts delta from keyframe_ts_ms (u32)
//! 47+4n  ..    payload (raw DEFLATE when bit1 is set)
//! ```
//!
//! Payload: the pixel section (n RGB8 frames; frames after the keyframe are
//! byte-wise residuals mod 256 when bit0 is set) followed by one metadata
//! record per frame:
//!
//! ```text
//! u8 frame flags (bit0 iframe, bit1 histogram present)
//! [u32 bin count, f64 bins...]        if bit1
//! u16 annotation count
//!   u16 label length, label bytes (UTF-8), f64 base_score,
//!   u8 bbox present, [f64 x, y, w, h]
//! ```

use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Parallelism};
use crate::types::{Annotation, BBox, Frame, Histogram, MicroBatch, Resolution, SplitReason};

pub const MAGIC: &[u8; 4] = b"VWIN";
pub const VERSION: u16 = 1;
pub const FIXED_HEADER_LEN: usize = 47;

const FLAG_DIFF: u8 = 1;
const FLAG_COMPRESSED: u8 = 1 << 1;
const FLAG_PIXELS: u8 = 1 << 2;
const REASON_SHIFT: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("frames in one batch have different resolutions")]
    MixedResolution,
    #[error("some frames carry pixels and some do not")]
    MixedPayload,
    #[error("{0} does not fit the 16-bit wire fields")]
    DimensionOverflow(Resolution),
    #[error("timestamp delta {0} ms does not fit in 32 bits")]
    DeltaOverflow(u64),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("wire version {0} is not supported")]
    VersionMismatch(u16),
    #[error("corrupt payload: {0}")]
    CorruptPayload(String),
}

fn corrupt(msg: impl Into<String>) -> TransportError {
    TransportError::CorruptPayload(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeOptions {
    pub diff: bool,
    pub compress: bool,
}

impl EncodeOptions {
    pub const RAW: Self = Self { diff: false, compress: false };
    pub const PACKED: Self = Self { diff: true, compress: true };
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireHeader {
    pub version: u16,
    pub stream_id: u64,
    pub unit_id: u64,
    pub batch_id: u64,
    pub keyframe_ts_ms: u64,
    pub frame_count: u32,
    pub width: u16,
    pub height: u16,
    pub flags: u8,
    pub ts_deltas: Vec<u32>,
}

impl WireHeader {
    pub fn len(&self) -> usize {
        FIXED_HEADER_LEN + 4 * self.ts_deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts_deltas.is_empty()
    }

    pub fn diff_coded(&self) -> bool {
        self.flags & FLAG_DIFF != 0
    }

    pub fn compressed(&self) -> bool {
        self.flags & FLAG_COMPRESSED != 0
    }

    pub fn has_pixels(&self) -> bool {
        self.flags & FLAG_PIXELS != 0
    }

    pub fn split_reason(&self) -> Option<SplitReason> {
        SplitReason::from_code((self.flags >> REASON_SHIFT) & 0b11)
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.stream_id.to_le_bytes());
        out.extend_from_slice(&self.unit_id.to_le_bytes());
        out.extend_from_slice(&self.batch_id.to_le_bytes());
        out.extend_from_slice(&self.keyframe_ts_ms.to_le_bytes());
        out.extend_from_slice(&self.frame_count.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.push(self.flags);
        for d in &self.ts_deltas {
            out.extend_from_slice(&d.to_le_bytes());
        }
    }

    fn parse(bytes: &[u8]) -> Result<Self, TransportError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(TransportError::BadMagic);
        }
        let mut r = Cursor::new(&bytes[4..]);
        let version = r.u16()?;
        if version != VERSION {
            return Err(TransportError::VersionMismatch(version));
        }
        let stream_id = r.u64()?;
        let unit_id = r.u64()?;
        let batch_id = r.u64()?;
        let keyframe_ts_ms = r.u64()?;
        let frame_count = r.u32()?;
        let width = r.u16()?;
        let height = r.u16()?;
        let flags = r.u8()?;
        if frame_count == 0 {
            return Err(corrupt("zero frame count"));
        }
        let ts_deltas = (0..frame_count).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { version, stream_id, unit_id, batch_id, keyframe_ts_ms, frame_count, width, height, flags, ts_deltas })
    }
}

/// An encoded micro-batch: header followed by payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    bytes: Vec<u8>,
    header_len: usize,
}

impl WireMessage {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, TransportError> {
        let header = WireHeader::parse(&bytes)?;
        let header_len = header.len();
        Ok(Self { bytes, header_len })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn header_len(&self) -> usize {
        self.header_len
    }

    pub fn payload_len(&self) -> usize {
        self.bytes.len() - self.header_len
    }

    pub fn header(&self) -> Result<WireHeader, TransportError> {
        WireHeader::parse(&self.bytes)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], TransportError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, TransportError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, TransportError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, TransportError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TransportError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, TransportError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn write_meta(frame: &Frame, out: &mut Vec<u8>) {
    let hist = frame.histogram();
    out.push(frame.iframe() as u8 | (hist.is_some() as u8) << 1);
    if let Some(h) = hist {
        out.extend_from_slice(&(h.bin_count() as u32).to_le_bytes());
        for b in h.bins() {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out.extend_from_slice(&(frame.annotations().len() as u16).to_le_bytes());
    for a in frame.annotations() {
        out.extend_from_slice(&(a.label.len() as u16).to_le_bytes());
        out.extend_from_slice(a.label.as_bytes());
        out.extend_from_slice(&a.base_score.to_le_bytes());
        match a.bbox {
            Some(b) => {
                out.push(1);
                for v in [b.x, b.y, b.w, b.h] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            None => out.push(0),
        }
    }
}

struct Meta {
    iframe: bool,
    histogram: Option<Histogram>,
    annotations: Vec<Annotation>,
}

fn read_meta(r: &mut Cursor<'_>) -> Result<Meta, TransportError> {
    let flags = r.u8()?;
    let histogram = if flags & 2 != 0 {
        let n = r.u32()? as usize;
        let bins = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        Some(Histogram::new(bins).map_err(|e| corrupt(e.to_string()))?)
    } else {
        None
    };
    let count = r.u16()?;
    let mut annotations = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let label = std::str::from_utf8(r.take(len)?).map_err(|_| corrupt("label is not UTF-8"))?;
        let score = r.f64()?;
        let bbox = match r.u8()? {
            0 => None,
            1 => Some(BBox::new(r.f64()?, r.f64()?, r.f64()?, r.f64()?)),
            _ => return Err(corrupt("bad bbox tag")),
        };
        annotations.push(Annotation::new(label, score, bbox).map_err(|e| corrupt(e.to_string()))?);
    }
    Ok(Meta { iframe: flags & 1 != 0, histogram, annotations })
}

/// Size of `frame` sent alone without diff coding or compression. Summed
/// over a stream this is the raw baseline for bandwidth saving.
pub fn raw_frame_len(frame: &Frame) -> usize {
    let mut meta = Vec::new();
    write_meta(frame, &mut meta);
    FIXED_HEADER_LEN + 4 + frame.pixels().map_or(0, <[u8]>::len) + meta.len()
}

pub fn encode_batch(mb: &MicroBatch, opts: EncodeOptions) -> Result<WireMessage, TransportError> {
    encode_batch_with(mb, opts, Parallelism::default())
}

pub fn encode_batch_with(mb: &MicroBatch, opts: EncodeOptions, mode: Parallelism) -> Result<WireMessage, TransportError> {
    let key = mb.keyframe();
    let res = key.resolution();
    if mb.frames().iter().any(|f| f.resolution() != res) {
        return Err(TransportError::MixedResolution);
    }
    let with_pixels = key.pixels().is_some();
    if mb.frames().iter().any(|f| f.pixels().is_some() != with_pixels) {
        return Err(TransportError::MixedPayload);
    }
    let (width, height) = match (u16::try_from(res.width), u16::try_from(res.height)) {
        (Ok(w), Ok(h)) => (w, h),
        _ => return Err(TransportError::DimensionOverflow(res)),
    };
    let ts_deltas = mb
        .frames()
        .iter()
        .map(|f| {
            let d = f.ts_ms() - key.ts_ms();
            u32::try_from(d).map_err(|_| TransportError::DeltaOverflow(d))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut payload = Vec::new();
    if let Some(key_px) = key.pixels() {
        let sections = par::map(mode, mb.frames(), |f| {
            let px = f.pixels().expect("checked above");
            if opts.diff && !std::ptr::eq(f, key) {
                px.iter().zip(key_px).map(|(a, b)| a.wrapping_sub(*b)).collect()
            } else {
                px.to_vec()
            }
        });
        payload.reserve(sections.iter().map(Vec::len).sum());
        for s in sections {
            payload.extend_from_slice(&s);
        }
    }
    for f in mb.frames() {
        write_meta(f, &mut payload);
    }

    let mut flags = ((opts.diff as u8) * FLAG_DIFF) | ((with_pixels as u8) * FLAG_PIXELS) | (mb.split_reason.code() << REASON_SHIFT);
    if opts.compress {
        let mut enc = DeflateEncoder::new(Vec::with_capacity(payload.len() / 4), Compression::new(6));
        enc.write_all(&payload).expect("writing to a Vec cannot fail");
        let packed = enc.finish().expect("writing to a Vec cannot fail");
        // Incompressible payloads go out as-is.
        if packed.len() < payload.len() {
            payload = packed;
            flags |= FLAG_COMPRESSED;
        }
    }

    let header = WireHeader {
        version: VERSION,
        stream_id: mb.stream_id,
        unit_id: mb.unit_id,
        batch_id: mb.batch_id,
        keyframe_ts_ms: key.ts_ms(),
        frame_count: mb.len() as u32,
        width,
        height,
        flags,
        ts_deltas,
    };
    let mut bytes = Vec::with_capacity(header.len() + payload.len());
    header.write(&mut bytes);
    bytes.extend_from_slice(&payload);
    Ok(WireMessage { header_len: header.len(), bytes })
}

pub fn decode_batch(msg: &WireMessage) -> Result<MicroBatch, TransportError> {
    decode_bytes(msg.as_bytes())
}

pub fn decode_bytes(bytes: &[u8]) -> Result<MicroBatch, TransportError> {
    let h = WireHeader::parse(bytes)?;
    let body = &bytes[h.len()..];
    let inflated;
    let payload = if h.compressed() {
        let mut out = Vec::new();
        DeflateDecoder::new(body).read_to_end(&mut out).map_err(|e| corrupt(e.to_string()))?;
        inflated = out;
        &inflated[..]
    } else {
        body
    };

    let n = h.frame_count as usize;
    let res = Resolution::new(h.width as u32, h.height as u32);
    let frame_bytes = res.rgb_bytes() as usize;
    let mut r = Cursor::new(payload);
    let pixel_sections: Vec<&[u8]> =
        if h.has_pixels() { (0..n).map(|_| r.take(frame_bytes)).collect::<Result<_, _>>()? } else { Vec::new() };
    let metas = (0..n).map(|_| read_meta(&mut r)).collect::<Result<Vec<_>, _>>()?;
    if !r.done() {
        return Err(corrupt("trailing bytes"));
    }

    let mut prev_ts = None;
    let mut frames = Vec::with_capacity(n);
    for (i, meta) in metas.into_iter().enumerate() {
        let ts = h.keyframe_ts_ms + h.ts_deltas[i] as u64;
        if prev_ts.is_some_and(|p| p >= ts) {
            return Err(corrupt("timestamps not increasing"));
        }
        prev_ts = Some(ts);
        let pixels = pixel_sections.get(i).map(|s| {
            if h.diff_coded() && i > 0 {
                s.iter().zip(pixel_sections[0]).map(|(d, k)| d.wrapping_add(*k)).collect()
            } else {
                s.to_vec()
            }
        });
        let frame = Frame::new(h.stream_id, ts, res.width, res.height, pixels, meta.histogram, meta.iframe, meta.annotations)
            .map_err(|e| corrupt(e.to_string()))?;
        frames.push(frame);
    }
    let reason = h.split_reason().ok_or_else(|| corrupt("unknown split reason"))?;
    Ok(MicroBatch::from_parts(h.batch_id, h.stream_id, h.unit_id, frames, res, reason))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    pub bandwidth_bytes_per_s: f64,
    pub propagation_ms: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        // 100 Mbit/s, 20 ms one way
        Self { bandwidth_bytes_per_s: 12_500_000.0, propagation_ms: 20.0 }
    }
}

/// Lossless FIFO link. A message starts serializing when the previous one
/// has finished.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    cfg: LinkConfig,
    busy_until_ms: f64,
    bytes_sent: u64,
    messages_sent: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub send_ms: f64,
    pub arrival_ms: f64,
    pub bytes: u64,
}

impl Delivery {
    pub fn transfer_ms(&self) -> f64 {
        self.arrival_ms - self.send_ms
    }
}

impl LinkModel {
    pub fn new(cfg: LinkConfig) -> Self {
        Self { cfg, busy_until_ms: 0.0, bytes_sent: 0, messages_sent: 0 }
    }

    pub fn config(&self) -> LinkConfig {
        self.cfg
    }

    pub fn bytes_sent(&self) -> u64 {
        self.bytes_sent
    }

    pub fn messages_sent(&self) -> u64 {
        self.messages_sent
    }

    pub fn send(&mut self, send_ms: f64, bytes: u64) -> Delivery {
        let start = send_ms.max(self.busy_until_ms);
        let serialize = if self.cfg.bandwidth_bytes_per_s > 0.0 { bytes as f64 / self.cfg.bandwidth_bytes_per_s * 1000.0 } else { 0.0 };
        self.busy_until_ms = start + serialize;
        self.bytes_sent += bytes;
        self.messages_sent += 1;
        Delivery { send_ms, arrival_ms: self.busy_until_ms + self.cfg.propagation_ms, bytes }
    }
}

pub fn transmit(link: &mut LinkModel, msg: &WireMessage, send_ms: f64) -> Delivery {
    link.send(send_ms, msg.len() as u64)
}
