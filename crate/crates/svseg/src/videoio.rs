//! Bit-exact readers and writers for the on-disk artifacts, plus the IoU
//! metric.
//!
//! Formats:
//!
//! - frames: binary Netpbm P6 (8-bit RGB), one file per frame named
//!   `frame_%05d.ppm`, contiguous indices starting at 0;
//! - masks: binary Netpbm P5 where 255 = human and 0 = background;
//! - supervoxel label rasters: 16-bit binary Netpbm P5, big-endian samples;
//! - detections: whitespace-separated text, one `frame score x0 y0 x1 y1`
//!   record per line, `#` comments allowed;
//! - region proposals: run-length-encoded text, per proposal a header line
//!   `frame W H` followed by one line of `start_offset run_length` pairs in
//!   row-major pixel order.
//!
//! Every reader/writer pair round-trips exactly on valid payloads.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// One RGB raster, 8 bits per channel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Frame {
    /// An all-black frame.
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0, "frame dimensions must be positive");
        Frame {
            width,
            height,
            data: vec![0; (width * height * 3) as usize],
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != (width * height * 3) as usize {
            return Err(Error::Dimension(format!(
                "frame data length {} does not match {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        Ok(Frame {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        (self.width * self.height) as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Pixel by row-major linear index.
    #[inline]
    pub fn get_linear(&self, idx: usize) -> [u8; 3] {
        let i = idx * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = ((y * self.width + x) * 3) as usize;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }
}

/// Ordered frames of one video. All frames share the same dimensions,
/// at least 8x8 pixels, and there are at least two of them.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::invalid(format!(
                "a frame sequence needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let (w, h) = (frames[0].width(), frames[0].height());
        if w < 8 || h < 8 {
            return Err(Error::invalid(format!(
                "frame dimensions {w}x{h} below the 8x8 minimum"
            )));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.width() != w || f.height() != h {
                return Err(Error::Dimension(format!(
                    "frame {i} is {}x{}, expected {w}x{h}",
                    f.width(),
                    f.height()
                )));
            }
        }
        Ok(FrameSequence { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> u32 {
        self.frames[0].width()
    }

    pub fn height(&self) -> u32 {
        self.frames[0].height()
    }

    pub fn frame(&self, index: usize) -> &Frame {
        &self.frames[index]
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }
}

/// Inclusive pixel box; `x1`/`y1` are the last covered column/row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelBox {
    pub fn area(&self) -> u64 {
        (self.x1 - self.x0 + 1) as u64 * (self.y1 - self.y0 + 1) as u64
    }
}

/// IoU of two inclusive pixel boxes.
pub fn box_iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let ix0 = a.x0.max(b.x0);
    let iy0 = a.y0.max(b.y0);
    let ix1 = a.x1.min(b.x1);
    let iy1 = a.y1.min(b.y1);
    if ix0 > ix1 || iy0 > iy1 {
        return 0.0;
    }
    let inter = (ix1 - ix0 + 1) as u64 * (iy1 - iy0 + 1) as u64;
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Per-pixel binary labels: true = human, false = background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        BinaryMask {
            width,
            height,
            data: vec![false; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = BinaryMask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn get_linear(&self, idx: usize) -> bool {
        self.data[idx]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.data[(y * self.width + x) as usize] = value;
    }

    #[inline]
    pub fn set_linear(&mut self, idx: usize, value: bool) {
        self.data[idx] = value;
    }

    pub fn pixel_count(&self) -> usize {
        self.data.len()
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_all_background(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// In-place pixel union with another mask of the same dimensions.
    pub fn union_with(&mut self, other: &BinaryMask) -> Result<()> {
        self.check_dims(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a || *b;
        }
        Ok(())
    }

    /// Minimal box covering all set pixels, or None for an empty mask.
    pub fn tight_box(&self) -> Option<PixelBox> {
        let mut found = false;
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0u32, 0u32);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    found = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        found.then_some(PixelBox { x0, y0, x1, y1 })
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Dimension(format!(
                "mask {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Pixel intersection-over-union of two same-sized masks.
///
/// Two empty masks score 1.0 so all-negative frames evaluate as correct.
pub fn compute_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_dims(b)?;
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        if x && y {
            inter += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// One detector hit. Coordinates are inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionBox {
    pub frame_index: u32,
    pub score: f64,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl DetectionBox {
    pub fn pixel_box(&self) -> PixelBox {
        PixelBox {
            x0: self.x0,
            y0: self.y0,
            x1: self.x1,
            y1: self.y1,
        }
    }
}

/// A candidate segment for one frame, with its derived tight bounding box.
#[derive(Debug, Clone)]
pub struct RegionProposal {
    pub frame_index: u32,
    pub mask: BinaryMask,
    pub tight_box: PixelBox,
}

impl RegionProposal {
    /// Fails on an empty mask: proposals must cover at least one pixel.
    pub fn new(frame_index: u32, mask: BinaryMask) -> Result<Self> {
        let tight_box = mask
            .tight_box()
            .ok_or_else(|| Error::invalid("region proposal mask is empty"))?;
        Ok(RegionProposal {
            frame_index,
            mask,
            tight_box,
        })
    }
}

/// Proposals grouped by frame index.
#[derive(Debug, Clone, Default)]
pub struct ProposalSet {
    by_frame: BTreeMap<u32, Vec<RegionProposal>>,
}

impl ProposalSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, proposal: RegionProposal) {
        self.by_frame
            .entry(proposal.frame_index)
            .or_default()
            .push(proposal);
    }

    /// Proposals for one frame; empty slice when the frame has none.
    pub fn for_frame(&self, frame_index: u32) -> &[RegionProposal] {
        self.by_frame
            .get(&frame_index)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn frames(&self) -> impl Iterator<Item = u32> + '_ {
        self.by_frame.keys().copied()
    }

    pub fn total(&self) -> usize {
        self.by_frame.values().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RegionProposal> {
        self.by_frame.values().flatten()
    }
}

// ---------------------------------------------------------------------------
// Netpbm plumbing
// ---------------------------------------------------------------------------

struct PnmHeader {
    width: u32,
    height: u32,
    maxval: u32,
    data_offset: usize,
}

/// Parse a binary Netpbm header with the given magic ("P5"/"P6").
/// Whitespace and `#` comments between tokens are accepted.
fn parse_pnm_header(path: &Path, bytes: &[u8], magic: &[u8]) -> Result<PnmHeader> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(
            path,
            format!(
                "expected {} magic",
                std::str::from_utf8(magic).unwrap_or("?")
            ),
        ));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated Netpbm header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).unwrap();
        *field = text
            .parse()
            .map_err(|_| Error::format(path, format!("bad header field `{text}`")))?;
    }
    // single whitespace byte separates header from raster data
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(path, "missing separator before raster data"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::format(path, "zero dimension in header"));
    }
    Ok(PnmHeader {
        width,
        height,
        maxval,
        data_offset: pos,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read one binary P6 frame (maxval must be 255).
pub fn read_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let header = parse_pnm_header(path, &bytes, b"P6")?;
    if header.maxval != 255 {
        return Err(Error::format(
            path,
            format!("unsupported maxval {}", header.maxval),
        ));
    }
    let expected = (header.width * header.height * 3) as usize;
    let data = &bytes[header.data_offset..];
    if data.len() != expected {
        return Err(Error::format(
            path,
            format!("raster has {} bytes, expected {expected}", data.len()),
        ));
    }
    Frame::from_raw(header.width, header.height, data.to_vec())
}

pub fn write_frame(path: impl AsRef<Path>, frame: &Frame) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend_from_slice(frame.raw());
    write_file(path.as_ref(), &out)
}

/// The canonical file name of frame `index` within a frame directory.
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:05}.ppm")
}

/// Read `frame_00000.ppm…` from a directory. Numbering must be contiguous
/// from zero; a gap is an error naming the first missing index.
pub fn read_frame_sequence(dir: impl AsRef<Path>) -> Result<FrameSequence> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut count = 0usize;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("frame_") && name.ends_with(".ppm") {
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::format(dir, "no frame_*.ppm files found"));
    }
    let mut frames = Vec::with_capacity(count);
    for index in 0..count {
        let path = dir.join(frame_file_name(index));
        if !path.exists() {
            return Err(Error::format(dir, format!("missing frame {index}")));
        }
        let frame = read_frame(&path)?;
        if index > 0 {
            let first: &Frame = &frames[0];
            if frame.width() != first.width() || frame.height() != first.height() {
                return Err(Error::format(
                    &path,
                    format!(
                        "frame is {}x{}, expected {}x{}",
                        frame.width(),
                        frame.height(),
                        first.width(),
                        first.height()
                    ),
                ));
            }
        }
        frames.push(frame);
    }
    FrameSequence::new(frames)
}

pub fn write_frame_sequence(dir: impl AsRef<Path>, seq: &FrameSequence) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in seq.frames().iter().enumerate() {
        write_frame(dir.join(frame_file_name(i)), frame)?;
    }
    Ok(())
}

/// Read a binary mask stored as 8-bit P5; only sample values 0 and 255
/// are accepted.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let header = parse_pnm_header(path, &bytes, b"P5")?;
    if header.maxval != 255 {
        return Err(Error::format(
            path,
            format!("unsupported maxval {}", header.maxval),
        ));
    }
    let expected = (header.width * header.height) as usize;
    let data = &bytes[header.data_offset..];
    if data.len() != expected {
        return Err(Error::format(
            path,
            format!("raster has {} bytes, expected {expected}", data.len()),
        ));
    }
    let mut mask = BinaryMask::new(header.width, header.height);
    for (i, &v) in data.iter().enumerate() {
        match v {
            0 => {}
            255 => mask.set_linear(i, true),
            other => {
                return Err(Error::format(
                    path,
                    format!("mask sample {other} at offset {i}; expected 0 or 255"),
                ));
            }
        }
    }
    Ok(mask)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend((0..mask.pixel_count()).map(|i| if mask.get_linear(i) { 255 } else { 0 }));
    write_file(path.as_ref(), &out)
}

/// Read a 16-bit P5 raster (big-endian samples), as used for supervoxel
/// label maps.
pub fn read_gray16(path: impl AsRef<Path>) -> Result<(u32, u32, Vec<u16>)> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    let header = parse_pnm_header(path, &bytes, b"P5")?;
    if header.maxval != 65535 {
        return Err(Error::format(
            path,
            format!("expected maxval 65535, got {}", header.maxval),
        ));
    }
    let expected = (header.width * header.height) as usize * 2;
    let data = &bytes[header.data_offset..];
    if data.len() != expected {
        return Err(Error::format(
            path,
            format!("raster has {} bytes, expected {expected}", data.len()),
        ));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((header.width, header.height, samples))
}

pub fn write_gray16(path: impl AsRef<Path>, width: u32, height: u32, data: &[u16]) -> Result<()> {
    assert_eq!(data.len(), (width * height) as usize);
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for &v in data {
        out.extend_from_slice(&v.to_be_bytes());
    }
    write_file(path.as_ref(), &out)
}

// ---------------------------------------------------------------------------
// Detections
// ---------------------------------------------------------------------------

/// Parse a detections text file. Records are not filtered by score here;
/// thresholding happens where the boxes are consumed.
pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionBox>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 6 fields, got {}", fields.len()),
            ));
        }
        let frame_index: u32 = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad frame index `{}`", fields[0])))?;
        let score: f64 = fields[1]
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("bad score `{}`", fields[1])))?;
        if !score.is_finite() {
            return Err(Error::parse(path, lineno, "non-finite score"));
        }
        let mut coords = [0u32; 4];
        for (slot, text) in coords.iter_mut().zip(&fields[2..]) {
            *slot = text
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad coordinate `{text}`")))?;
        }
        let [x0, y0, x1, y1] = coords;
        if x1 < x0 || y1 < y0 {
            return Err(Error::parse(
                path,
                lineno,
                format!("degenerate box {x0} {y0} {x1} {y1}"),
            ));
        }
        out.push(DetectionBox {
            frame_index,
            score,
            x0,
            y0,
            x1,
            y1,
        });
    }
    Ok(out)
}

pub fn write_detections(path: impl AsRef<Path>, detections: &[DetectionBox]) -> Result<()> {
    let mut out = String::new();
    for d in detections {
        writeln!(
            out,
            "{} {:.6} {} {} {} {}",
            d.frame_index, d.score, d.x0, d.y0, d.x1, d.y1
        )
        .unwrap();
    }
    write_file(path.as_ref(), out.as_bytes())
}

// ---------------------------------------------------------------------------
// Proposal RLE
// ---------------------------------------------------------------------------

/// Runs of set pixels in row-major order: (start offset, length) with
/// strictly increasing, non-overlapping spans.
pub fn mask_to_runs(mask: &BinaryMask) -> Vec<(u32, u32)> {
    let mut runs = Vec::new();
    let mut start: Option<u32> = None;
    let n = mask.pixel_count() as u32;
    for i in 0..n {
        if mask.get_linear(i as usize) {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            runs.push((s, i - s));
        }
    }
    if let Some(s) = start {
        runs.push((s, n - s));
    }
    runs
}

/// Rebuild a mask from (start, length) runs. Overlapping runs or runs past
/// `width*height` are rejected.
pub fn runs_to_mask(width: u32, height: u32, runs: &[(u32, u32)]) -> Result<BinaryMask> {
    let total = width as u64 * height as u64;
    let mut mask = BinaryMask::new(width, height);
    let mut cursor = 0u64;
    for &(start, len) in runs {
        if (start as u64) < cursor {
            return Err(Error::invalid(format!(
                "overlapping run at offset {start}"
            )));
        }
        if len == 0 {
            return Err(Error::invalid(format!("zero-length run at offset {start}")));
        }
        let end = start as u64 + len as u64;
        if end > total {
            return Err(Error::invalid(format!(
                "run {start}+{len} exceeds {width}x{height} = {total} pixels"
            )));
        }
        for i in start as u64..end {
            mask.set_linear(i as usize, true);
        }
        cursor = end;
    }
    Ok(mask)
}

/// Read an RLE proposals file into per-frame lists, preserving record order.
pub fn read_proposals(path: impl AsRef<Path>) -> Result<ProposalSet> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    // strip comments/blanks but remember original line numbers
    let mut records: Vec<(usize, String)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let content = line.split('#').next().unwrap_or("").trim().to_string();
        if !content.is_empty() {
            records.push((lineno + 1, content));
        }
    }

    let mut set = ProposalSet::new();
    let mut iter = records.into_iter();
    while let Some((lineno, header)) = iter.next() {
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected proposal header `frame W H`, got {} fields", fields.len()),
            ));
        }
        let parse_u32 = |text: &str| -> Result<u32> {
            text.parse()
                .map_err(|_| Error::parse(path, lineno, format!("bad integer `{text}`")))
        };
        let frame_index = parse_u32(fields[0])?;
        let width = parse_u32(fields[1])?;
        let height = parse_u32(fields[2])?;
        if width == 0 || height == 0 {
            return Err(Error::parse(path, lineno, "zero proposal dimensions"));
        }

        let (run_lineno, run_line) = iter
            .next()
            .ok_or_else(|| Error::parse(path, lineno, "proposal header without run data"))?;
        let tokens: Vec<&str> = run_line.split_whitespace().collect();
        if tokens.is_empty() || tokens.len() % 2 != 0 {
            return Err(Error::parse(
                path,
                run_lineno,
                format!("expected start/length pairs, got {} tokens", tokens.len()),
            ));
        }
        let mut runs = Vec::with_capacity(tokens.len() / 2);
        for pair in tokens.chunks_exact(2) {
            let start: u32 = pair[0].parse().map_err(|_| {
                Error::parse(path, run_lineno, format!("bad run start `{}`", pair[0]))
            })?;
            let len: u32 = pair[1].parse().map_err(|_| {
                Error::parse(path, run_lineno, format!("bad run length `{}`", pair[1]))
            })?;
            runs.push((start, len));
        }
        let mask = runs_to_mask(width, height, &runs).map_err(|e| match e {
            Error::Invalid(message) => Error::parse(path, run_lineno, message),
            other => other,
        })?;
        let proposal = RegionProposal::new(frame_index, mask)
            .map_err(|_| Error::parse(path, run_lineno, "empty proposal mask"))?;
        set.push(proposal);
    }
    Ok(set)
}

pub fn write_proposals(path: impl AsRef<Path>, set: &ProposalSet) -> Result<()> {
    let mut out = String::new();
    for frame in set.frames() {
        for p in set.for_frame(frame) {
            writeln!(out, "{} {} {}", p.frame_index, p.mask.width(), p.mask.height()).unwrap();
            let runs = mask_to_runs(&p.mask);
            let mut line = String::new();
            for (i, (start, len)) in runs.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                write!(line, "{start} {len}").unwrap();
            }
            out.push_str(&line);
            out.push('\n');
        }
    }
    write_file(path.as_ref(), out.as_bytes())
}

/// Read per-frame masks `frame_%05d.pgm` from a directory, one per frame.
pub fn read_mask_dir(dir: impl AsRef<Path>, frame_count: usize) -> Result<Vec<BinaryMask>> {
    let dir = dir.as_ref();
    let mut masks = Vec::with_capacity(frame_count);
    for index in 0..frame_count {
        let path = dir.join(format!("frame_{index:05}.pgm"));
        if !path.exists() {
            return Err(Error::format(dir, format!("missing mask for frame {index}")));
        }
        masks.push(read_mask(&path)?);
    }
    Ok(masks)
}

pub fn write_mask_dir(dir: impl AsRef<Path>, masks: &[BinaryMask]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, mask) in masks.iter().enumerate() {
        write_mask(dir.join(format!("frame_{i:05}.pgm")), mask)?;
    }
    Ok(dir.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use tempfile::TempDir;

    fn random_frame(rng: &mut impl Rng, w: u32, h: u32) -> Frame {
        let data: Vec<u8> = (0..w * h * 3).map(|_| rng.gen()).collect();
        Frame::from_raw(w, h, data).unwrap()
    }

    fn random_mask(rng: &mut impl Rng, w: u32, h: u32) -> BinaryMask {
        BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(0.5))
    }

    #[test]
    fn frame_sequence_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let frames: Vec<Frame> = (0..3).map(|_| random_frame(&mut rng, 64, 48)).collect();
        let seq = FrameSequence::new(frames).unwrap();

        let dir = TempDir::new().unwrap();
        write_frame_sequence(dir.path(), &seq).unwrap();
        let back = read_frame_sequence(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.width(), 64);
        assert_eq!(back.height(), 48);
        for i in 0..3 {
            assert_eq!(back.frame(i).raw(), seq.frame(i).raw());
        }
    }

    #[test]
    fn frame_gap_is_reported() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let dir = TempDir::new().unwrap();
        for i in [0usize, 1, 3] {
            write_frame(
                dir.path().join(frame_file_name(i)),
                &random_frame(&mut rng, 16, 16),
            )
            .unwrap();
        }
        let err = read_frame_sequence(dir.path()).unwrap_err();
        assert!(err.to_string().contains("missing frame 2"), "{err}");
    }

    #[test]
    fn sequence_invariants_enforced() {
        let f = Frame::new(16, 16);
        assert!(FrameSequence::new(vec![f.clone()]).is_err());
        assert!(FrameSequence::new(vec![Frame::new(4, 16), Frame::new(4, 16)]).is_err());
        assert!(FrameSequence::new(vec![f.clone(), Frame::new(16, 8)]).is_err());
        assert!(FrameSequence::new(vec![f.clone(), f]).is_ok());
    }

    #[test]
    fn detections_parse_and_validate() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("det.txt");

        fs::write(&path, "# header\n4 0.7 10 10 30 40\n").unwrap();
        let boxes = read_detections(&path).unwrap();
        assert_eq!(boxes.len(), 1);
        assert_eq!(boxes[0].frame_index, 4);
        assert!((boxes[0].score - 0.7).abs() < 1e-12);
        assert_eq!((boxes[0].x0, boxes[0].y0, boxes[0].x1, boxes[0].y1), (10, 10, 30, 40));

        fs::write(&path, "4 0.7 30 10 10 40\n").unwrap();
        let err = read_detections(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");

        fs::write(&path, "").unwrap();
        assert!(read_detections(&path).unwrap().is_empty());
    }

    #[test]
    fn detections_round_trip() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("det.txt");
        let boxes = vec![
            DetectionBox { frame_index: 0, score: -1.25, x0: 1, y0: 2, x1: 3, y1: 4 },
            DetectionBox { frame_index: 7, score: 2.0, x0: 0, y0: 0, x1: 63, y1: 63 },
        ];
        write_detections(&path, &boxes).unwrap();
        let back = read_detections(&path).unwrap();
        assert_eq!(back, boxes);
    }

    #[test]
    fn rle_all_ones_decode() {
        let mask = runs_to_mask(2, 2, &[(0, 4)]).unwrap();
        assert_eq!(mask.count_ones(), 4);
    }

    #[test]
    fn rle_run_past_end_rejected() {
        let err = runs_to_mask(2, 2, &[(2, 3)]).unwrap_err();
        assert!(err.to_string().contains("exceeds"), "{err}");
    }

    #[test]
    fn rle_overlap_rejected() {
        assert!(runs_to_mask(4, 4, &[(0, 3), (2, 2)]).is_err());
    }

    #[test]
    fn mask_round_trip_32x32() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mask = random_mask(&mut rng, 32, 32);
        let runs = mask_to_runs(&mask);
        let back = runs_to_mask(32, 32, &runs).unwrap();
        assert_eq!(back, mask);

        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.pgm");
        write_mask(&path, &mask).unwrap();
        assert_eq!(read_mask(&path).unwrap(), mask);
    }

    #[test]
    fn proposals_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut set = ProposalSet::new();
        for frame in [0u32, 0, 3] {
            let mut mask = random_mask(&mut rng, 16, 12);
            mask.set(0, 0, true); // ensure non-empty
            set.push(RegionProposal::new(frame, mask).unwrap());
        }
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("props.txt");
        write_proposals(&path, &set).unwrap();
        let back = read_proposals(&path).unwrap();
        assert_eq!(back.total(), 3);
        assert_eq!(back.for_frame(0).len(), 2);
        for (a, b) in back.iter().zip(set.iter()) {
            assert_eq!(a.mask, b.mask);
            assert_eq!(a.tight_box, b.tight_box);
        }
    }

    #[test]
    fn iou_cases() {
        let a = BinaryMask::from_fn(3, 1, |x, _| x < 2);
        let b = BinaryMask::from_fn(3, 1, |x, _| x > 0);
        assert!((compute_iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);

        assert_eq!(compute_iou(&a, &a).unwrap(), 1.0);

        let empty = BinaryMask::new(3, 1);
        let c = BinaryMask::from_fn(3, 1, |x, _| x == 0);
        let d = BinaryMask::from_fn(3, 1, |x, _| x == 2);
        assert_eq!(compute_iou(&c, &d).unwrap(), 0.0);
        assert_eq!(compute_iou(&empty, &empty).unwrap(), 1.0);

        let wrong = BinaryMask::new(2, 2);
        assert!(compute_iou(&a, &wrong).is_err());
    }

    #[test]
    fn box_iou_cases() {
        let a = PixelBox { x0: 0, y0: 0, x1: 9, y1: 9 };
        assert!((box_iou(&a, &a) - 1.0).abs() < 1e-12);
        let b = PixelBox { x0: 10, y0: 0, x1: 19, y1: 9 };
        assert_eq!(box_iou(&a, &b), 0.0);
        // half overlap: 5x10 inter, 150 union
        let c = PixelBox { x0: 5, y0: 0, x1: 14, y1: 9 };
        assert!((box_iou(&a, &c) - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn tight_box_is_minimal() {
        let mask = BinaryMask::from_fn(8, 8, |x, y| (2..5).contains(&x) && (3..6).contains(&y));
        let tb = mask.tight_box().unwrap();
        assert_eq!(tb, PixelBox { x0: 2, y0: 3, x1: 4, y1: 5 });
        assert!(BinaryMask::new(4, 4).tight_box().is_none());
    }

    proptest! {
        #[test]
        fn prop_mask_rle_round_trip(seed in 0u64..500) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let w = rng.gen_range(1..40u32);
            let h = rng.gen_range(1..40u32);
            let mask = random_mask(&mut rng, w, h);
            let back = runs_to_mask(w, h, &mask_to_runs(&mask)).unwrap();
            prop_assert_eq!(back, mask);
        }

        #[test]
        fn prop_iou_symmetric(seed in 0u64..200) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = random_mask(&mut rng, 13, 9);
            let b = random_mask(&mut rng, 13, 9);
            let ab = compute_iou(&a, &b).unwrap();
            let ba = compute_iou(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn prop_iou_permutation_invariant(seed in 0u64..100) {
            // permuting rows and columns of both masks simultaneously
            // leaves the IoU unchanged
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (w, h) = (11u32, 7u32);
            let a = random_mask(&mut rng, w, h);
            let b = random_mask(&mut rng, w, h);
            let mut cols: Vec<u32> = (0..w).collect();
            let mut rows: Vec<u32> = (0..h).collect();
            use rand::seq::SliceRandom;
            cols.shuffle(&mut rng);
            rows.shuffle(&mut rng);
            let perm = |m: &BinaryMask| {
                BinaryMask::from_fn(w, h, |x, y| m.get(cols[x as usize], rows[y as usize]))
            };
            let before = compute_iou(&a, &b).unwrap();
            let after = compute_iou(&perm(&a), &perm(&b)).unwrap();
            prop_assert!((before - after).abs() < 1e-15);
        }
    }
}
