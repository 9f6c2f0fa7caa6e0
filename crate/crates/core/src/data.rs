//! Synthetic motion clips whose classes differ only in how dots move between frames.
//!
//! Every frame of every class shows two identical Gaussian dots on a toroidal
//! `H × W` canvas. Start positions are independent and uniform, and each class moves
//! the dots by a fixed per-frame offset pattern, so any single frame has the same
//! distribution in every class. Only the trajectory tells classes apart:
//!
//! | class | dot A (x offset at frame t)    | dot B       |
//! |-------|--------------------------------|-------------|
//! | 0     | `-3t` (fast left)              | static      |
//! | 1     | `-t` (slow left)               | static      |
//! | 2     | `0, +3, 0, -3, …` (period 4)   | static      |
//! | 3     | `-3·min(t, T - t)` (reverses)  | static      |
//! | 4     | `+t`                           | `-t` (dots converge) |
//!
//! File layout (little-endian): `"CANV"`, version `u32 = 1`, clip count `u64`,
//! `K u32, T u32, H u32, W u32`, element tag `u8` (0 = f32), then per clip
//! `label u32` followed by `T·H·W` f32 pixels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Dims, Real, VideoTensor};

pub const MAGIC: &[u8; 4] = b"CANV";
pub const VERSION: u32 = 1;
pub const ELEM_F32: u8 = 0;
pub const CLASSES: usize = 5;
pub const HEADER_LEN: usize = 4 + 4 + 8 + 4 * 4 + 1;

pub const FAST: i64 = 3;
pub const SLOW: i64 = 1;
pub const OSCILLATION: [i64; 4] = [0, 3, 0, -3];
pub const NOISE_STD: f64 = 0.05;
const BLOB_SIGMA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub clip_count: u64,
    pub classes: u32,
    pub frames: u32,
    pub height: u32,
    pub width: u32,
    pub elem_tag: u8,
}

impl DatasetHeader {
    fn clip_bytes(&self) -> u64 {
        4 + 4 * self.frames as u64 * self.height as u64 * self.width as u64
    }

    pub fn clip_dims(&self) -> Dims {
        Dims::new(1, self.frames as usize, self.height as usize, self.width as usize, 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    pub label: usize,
    /// `(1, T, H, W, 1)`, values in `[0, 1]`.
    pub frames: VideoTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub clips: Vec<ClipRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frames: 8,
            height: 32,
            width: 32,
        }
    }
}

/// Horizontal offsets of the two dots at frame `t` for `class`.
pub fn offsets(class: usize, t: usize, frames: usize) -> [i64; 2] {
    let t = t as i64;
    match class {
        0 => [-FAST * t, 0],
        1 => [-SLOW * t, 0],
        2 => [OSCILLATION[(t % 4) as usize], 0],
        3 => [-FAST * t.min(frames as i64 - t), 0],
        4 => [SLOW * t, -SLOW * t],
        _ => panic!("class {class} out of range"),
    }
}

/// Dot centres `(row, col)` of both dots at every frame, wrapped onto the canvas.
pub fn trajectory(class: usize, starts: [(usize, usize); 2], cfg: &SynthConfig) -> Vec<[(usize, usize); 2]> {
    (0..cfg.frames)
        .map(|t| {
            let off = offsets(class, t, cfg.frames);
            [0, 1].map(|d| {
                let (r, c) = starts[d];
                (r, (c as i64 + off[d]).rem_euclid(cfg.width as i64) as usize)
            })
        })
        .collect()
}

/// Start positions of both dots, drawn uniformly.
pub fn draw_starts(rng: &mut impl Rng, cfg: &SynthConfig) -> [(usize, usize); 2] {
    [0, 1].map(|_| (rng.random_range(0..cfg.height), rng.random_range(0..cfg.width)))
}

fn render(track: &[[(usize, usize); 2]], cfg: &SynthConfig, rng: &mut impl Rng) -> VideoTensor {
    let (h, w) = (cfg.height as i64, cfg.width as i64);
    let noise = Normal::new(0.0, NOISE_STD).expect("valid std");
    let mut data = vec![0.0 as Real; cfg.frames * cfg.height * cfg.width];
    for (t, dots) in track.iter().enumerate() {
        let frame = &mut data[t * cfg.height * cfg.width..(t + 1) * cfg.height * cfg.width];
        for &(r, c) in dots {
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let v = (-((dr * dr + dc * dc) as f64) / (2.0 * BLOB_SIGMA * BLOB_SIGMA)).exp();
                    let rr = (r as i64 + dr).rem_euclid(h) as usize;
                    let cc = (c as i64 + dc).rem_euclid(w) as usize;
                    let px = &mut frame[rr * cfg.width + cc];
                    *px = px.max(v as Real);
                }
            }
        }
        for px in frame.iter_mut() {
            let n: f64 = noise.sample(rng);
            // Stored as f32 on disk; round here so in-memory and read-back clips agree.
            #[allow(clippy::unnecessary_cast)]
            let v = *px as f64;
            *px = ((v + n).clamp(0.0, 1.0) as f32) as Real;
        }
    }
    VideoTensor::from_parts_unchecked(Dims::new(1, cfg.frames, cfg.height, cfg.width, 1), data)
}

/// `clips_per_class` clips of each class, labels cycling `0, 1, …, K-1`.
pub fn generate(seed: u64, clips_per_class: usize, cfg: &SynthConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clips = Vec::with_capacity(clips_per_class * CLASSES);
    for _ in 0..clips_per_class {
        for class in 0..CLASSES {
            let starts = draw_starts(&mut rng, cfg);
            let track = trajectory(class, starts, cfg);
            clips.push(ClipRecord {
                label: class,
                frames: render(&track, cfg, &mut rng),
            });
        }
    }
    Dataset {
        header: DatasetHeader {
            version: VERSION,
            clip_count: clips.len() as u64,
            classes: CLASSES as u32,
            frames: cfg.frames as u32,
            height: cfg.height as u32,
            width: cfg.width as u32,
            elem_tag: ELEM_F32,
        },
        clips,
    }
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    let h = &ds.header;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&h.version.to_le_bytes())?;
    w.write_all(&(ds.clips.len() as u64).to_le_bytes())?;
    for v in [h.classes, h.frames, h.height, h.width] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&[h.elem_tag])?;
    let dims = h.clip_dims();
    for clip in &ds.clips {
        if clip.frames.dims() != dims {
            return Err(Error::Shape(format!("clip {:?} does not match header {:?}", clip.frames.dims(), dims)));
        }
        w.write_all(&(clip.label as u32).to_le_bytes())?;
        for &v in clip.frames.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

/// Streaming reader over the clips of a dataset file.
pub struct DatasetReader<R: Read> {
    inner: R,
    header: DatasetHeader,
    offset: u64,
    remaining: u64,
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        let mut r = Self::new(BufReader::new(file))?;
        let expected = HEADER_LEN as u64 + r.header.clip_count * r.header.clip_bytes();
        if len < expected {
            // Report the offset of the first clip that cannot be complete.
            let whole = (len - HEADER_LEN as u64) / r.header.clip_bytes();
            return Err(format_err(
                HEADER_LEN as u64 + whole * r.header.clip_bytes(),
                format!("file holds {len} bytes, header promises {expected}"),
            ));
        }
        if len > expected {
            r.remaining = r.header.clip_count;
            return Err(format_err(expected, format!("{} trailing bytes after the last clip", len - expected)));
        }
        Ok(r)
    }
}

impl<R: Read> DatasetReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut head = [0u8; HEADER_LEN];
        let mut got = 0;
        while got < HEADER_LEN {
            let n = inner.read(&mut head[got..])?;
            if n == 0 {
                return Err(format_err(got as u64, format!("truncated header: {got} of {HEADER_LEN} bytes")));
            }
            got += n;
        }
        if &head[..4] != MAGIC {
            return Err(format_err(0, "bad magic, expected CANV"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(head[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(format_err(4, format!("unsupported dataset version {version}")));
        }
        let header = DatasetHeader {
            version,
            clip_count: u64::from_le_bytes(head[8..16].try_into().unwrap()),
            classes: u32_at(16),
            frames: u32_at(20),
            height: u32_at(24),
            width: u32_at(28),
            elem_tag: head[32],
        };
        if header.elem_tag != ELEM_F32 {
            return Err(format_err(32, format!("unsupported element tag {}", header.elem_tag)));
        }
        if header.classes == 0 || header.frames == 0 || header.height == 0 || header.width == 0 {
            return Err(format_err(16, "zero-sized header field"));
        }
        Ok(DatasetReader {
            inner,
            header,
            offset: HEADER_LEN as u64,
            remaining: header.clip_count,
        })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    fn read_clip(&mut self) -> Result<ClipRecord> {
        let n = self.header.clip_bytes() as usize;
        let mut buf = vec![0u8; n];
        let mut got = 0;
        while got < n {
            let k = self.inner.read(&mut buf[got..])?;
            if k == 0 {
                return Err(format_err(self.offset + got as u64, "truncated clip"));
            }
            got += k;
        }
        let label = u32::from_le_bytes(buf[..4].try_into().unwrap());
        if label >= self.header.classes {
            return Err(format_err(self.offset, format!("label {label} not below class count {}", self.header.classes)));
        }
        let data: Vec<Real> = buf[4..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as Real)
            .collect();
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(format_err(self.offset + 4 + 4 * i as u64, "pixel outside [0, 1]"));
        }
        self.offset += n as u64;
        Ok(ClipRecord {
            label: label as usize,
            frames: VideoTensor::from_parts_unchecked(self.header.clip_dims(), data),
        })
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<ClipRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let r = self.read_clip();
        if r.is_err() {
            self.remaining = 0;
        }
        Some(r)
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let reader = DatasetReader::open(path)?;
    let header = *reader.header();
    let clips = reader.collect::<Result<Vec<_>>>()?;
    Ok(Dataset { header, clips })
}

fn mix64(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic train/validation split of `count` clip indices: indices are ordered
/// by a hash of their value and the first `round(count · train_fraction)` go to
/// training. Both lists come back sorted.
pub fn split_indices(count: usize, train_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by_key(|&i| (mix64(i as u64 ^ 0x5eed_cafe), i));
    let n_train = ((count as f64) * train_fraction).round() as usize;
    let (mut train, mut val) = (order[..n_train].to_vec(), order[n_train..].to_vec());
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Fraction of clips used for training by the CLI and acceptance runs.
pub const TRAIN_FRACTION: f64 = 0.8;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oscillation_returns_after_four_frames() {
        let cfg = SynthConfig::default();
        let track = trajectory(2, [(3, 30), (10, 0)], &cfg);
        assert_eq!(track[0], track[4]);
        assert_ne!(track[0], track[1]);
    }

    #[test]
    fn reversal_comes_back() {
        let cfg = SynthConfig::default();
        let track = trajectory(3, [(0, 5), (0, 0)], &cfg);
        assert_eq!(track[1][0], track[7][0]);
        assert_eq!(track[4][0].1, (5 + 32 - 12));
    }

    #[test]
    fn pixels_in_unit_range() {
        let ds = generate(1, 4, &SynthConfig::default());
        for c in &ds.clips {
            assert!(c.frames.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(ds.clips.len(), 4 * CLASSES);
    }

    #[test]
    fn split_is_exact_and_disjoint() {
        let (tr, va) = split_indices(1000, 0.8);
        assert_eq!((tr.len(), va.len()), (800, 200));
        let mut all: Vec<_> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }
}
