//! Screens, palette mapping and background models.
//!
//! Every frame in the pipeline is a 160x210 image of 7-bit color indices
//! (the raw 8-bit palette is halved on ingest). A background model holds the
//! per-pixel mode over sampled frames; subtracting it yields a masked frame
//! in which unchanged pixels carry no color.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

pub const WIDTH: usize = 160;
pub const HEIGHT: usize = 210;
pub const PIXELS: usize = WIDTH * HEIGHT;
/// Size of the 7-bit color space frames are allowed to use.
pub const COLORS: usize = 128;

/// Collapse a raw 8-bit palette index to the 7-bit space used everywhere
/// downstream. Doubling a 7-bit color and mapping it back is the identity.
#[inline]
pub fn map_raw_palette(raw: u8) -> u8 {
    raw >> 1
}

fn check_pixels(pixels: &[u8]) -> Result<()> {
    if pixels.len() != PIXELS {
        return Err(Error::FrameSize {
            got: pixels.len(),
            expected: PIXELS,
        });
    }
    for (index, &value) in pixels.iter().enumerate() {
        if value as usize >= COLORS {
            return Err(Error::PixelRange { index, value });
        }
    }
    Ok(())
}

/// A 160x210 screen of 7-bit color indices, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Frame {
    pixels: Vec<u8>,
}

impl Frame {
    pub fn from_pixels(pixels: Vec<u8>) -> Result<Self> {
        check_pixels(&pixels)?;
        Ok(Frame { pixels })
    }

    /// A frame filled with a single color.
    pub fn filled(color: u8) -> Self {
        assert!((color as usize) < COLORS, "color out of palette");
        Frame {
            pixels: vec![color; PIXELS],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        debug_assert!(x < WIDTH && y < HEIGHT);
        self.pixels[y * WIDTH + x]
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Frame({}x{})", WIDTH, HEIGHT)
    }
}

/// Per-pixel background color, same shape as a frame.
#[derive(Clone, PartialEq, Eq)]
pub struct BackgroundModel {
    pixels: Vec<u8>,
}

impl BackgroundModel {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        debug_assert!(x < WIDTH && y < HEIGHT);
        self.pixels[y * WIDTH + x]
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }
}

impl std::fmt::Debug for BackgroundModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BackgroundModel({}x{})", WIDTH, HEIGHT)
    }
}

/// Streaming per-pixel color histogram, so long sample runs never need all
/// frames in memory at once.
pub struct BackgroundAccumulator {
    counts: Vec<u32>,
    samples: u64,
}

impl BackgroundAccumulator {
    pub fn new() -> Self {
        BackgroundAccumulator {
            counts: vec![0u32; PIXELS * COLORS],
            samples: 0,
        }
    }

    pub fn add(&mut self, frame: &Frame) {
        for (p, &c) in frame.pixels.iter().enumerate() {
            self.counts[p * COLORS + c as usize] += 1;
        }
        self.samples += 1;
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    /// The per-pixel mode; ties go to the smallest color index.
    pub fn finish(self) -> Result<BackgroundModel> {
        if self.samples == 0 {
            return Err(Error::EmptySamples);
        }
        let mut pixels = vec![0u8; PIXELS];
        for p in 0..PIXELS {
            let slice = &self.counts[p * COLORS..(p + 1) * COLORS];
            let mut best = 0usize;
            let mut best_count = slice[0];
            for (c, &n) in slice.iter().enumerate().skip(1) {
                if n > best_count {
                    best = c;
                    best_count = n;
                }
            }
            pixels[p] = best as u8;
        }
        Ok(BackgroundModel { pixels })
    }
}

impl Default for BackgroundAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-pixel mode over the samples; ties go to the smallest color index.
pub fn compute_background(samples: &[Frame]) -> Result<BackgroundModel> {
    let mut acc = BackgroundAccumulator::new();
    for frame in samples {
        acc.add(frame);
    }
    acc.finish()
}

/// A frame with background pixels removed: each position either carries a
/// color or nothing.
#[derive(Clone, PartialEq, Eq)]
pub struct MaskedFrame {
    // 0xFF marks an absent pixel; valid colors stay below 128.
    pixels: Vec<u8>,
}

const MASKED: u8 = 0xFF;

impl MaskedFrame {
    /// A masked frame with every pixel absent.
    pub fn empty() -> Self {
        MaskedFrame {
            pixels: vec![MASKED; PIXELS],
        }
    }

    pub fn set(&mut self, x: usize, y: usize, color: u8) {
        assert!((color as usize) < COLORS, "color out of palette");
        assert!(x < WIDTH && y < HEIGHT);
        self.pixels[y * WIDTH + x] = color;
    }

    pub fn clear(&mut self, x: usize, y: usize) {
        assert!(x < WIDTH && y < HEIGHT);
        self.pixels[y * WIDTH + x] = MASKED;
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<u8> {
        debug_assert!(x < WIDTH && y < HEIGHT);
        let v = self.pixels[y * WIDTH + x];
        if v == MASKED {
            None
        } else {
            Some(v)
        }
    }

    /// Visit every colored pixel as (x, y, color).
    pub fn colored_pixels(&self) -> impl Iterator<Item = (usize, usize, u8)> + '_ {
        self.pixels.iter().enumerate().filter_map(|(p, &v)| {
            if v == MASKED {
                None
            } else {
                Some((p % WIDTH, p / WIDTH, v))
            }
        })
    }

    pub fn colored_count(&self) -> usize {
        self.pixels.iter().filter(|&&v| v != MASKED).count()
    }
}

impl std::fmt::Debug for MaskedFrame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MaskedFrame({} colored)", self.colored_count())
    }
}

/// Keep exactly the pixels that differ from the background.
pub fn subtract_background(frame: &Frame, background: &BackgroundModel) -> MaskedFrame {
    let mut pixels = vec![MASKED; PIXELS];
    for p in 0..PIXELS {
        let c = frame.pixels[p];
        if c != background.pixels[p] {
            pixels[p] = c;
        }
    }
    MaskedFrame { pixels }
}

const BACKGROUND_MAGIC: &[u8; 8] = b"SABGv001";
const BACKGROUND_FILE: &'static str = "background file";

pub fn save_background(model: &BackgroundModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(BACKGROUND_MAGIC)?;
    w.write_all(&(WIDTH as u32).to_le_bytes())?;
    w.write_all(&(HEIGHT as u32).to_le_bytes())?;
    w.write_all(&model.pixels)?;
    w.flush()?;
    Ok(())
}

pub fn load_background(path: &Path) -> Result<BackgroundModel> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact_at(&mut r, &mut magic, 0, BACKGROUND_FILE)?;
    if &magic != BACKGROUND_MAGIC {
        return Err(Error::FileMagic {
            what: BACKGROUND_FILE,
            got: magic.to_vec(),
        });
    }
    let mut dims = [0u8; 8];
    read_exact_at(&mut r, &mut dims, 8, BACKGROUND_FILE)?;
    let w = u32::from_le_bytes(dims[0..4].try_into().unwrap());
    let h = u32::from_le_bytes(dims[4..8].try_into().unwrap());
    if w as usize != WIDTH || h as usize != HEIGHT {
        return Err(Error::FileField {
            what: BACKGROUND_FILE,
            offset: 8,
            detail: format!("dimensions {}x{}, expected {}x{}", w, h, WIDTH, HEIGHT),
        });
    }
    let mut pixels = vec![0u8; PIXELS];
    read_exact_at(&mut r, &mut pixels, 16, BACKGROUND_FILE)?;
    for (index, &value) in pixels.iter().enumerate() {
        if value as usize >= COLORS {
            return Err(Error::FileField {
                what: BACKGROUND_FILE,
                offset: 16 + index as u64,
                detail: format!("pixel value {} outside the 7-bit palette", value),
            });
        }
    }
    Ok(BackgroundModel { pixels })
}

/// read_exact that reports the absolute offset of a short read.
pub(crate) fn read_exact_at(
    r: &mut impl Read,
    buf: &mut [u8],
    offset: u64,
    what: &'static str,
) -> Result<()> {
    let mut done = 0usize;
    while done < buf.len() {
        let n = r.read(&mut buf[done..])?;
        if n == 0 {
            return Err(Error::FileTruncated {
                what,
                offset: offset + done as u64,
            });
        }
        done += n;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_with(pairs: &[(usize, usize, u8)], fill: u8) -> Frame {
        let mut pixels = vec![fill; PIXELS];
        for &(x, y, c) in pairs {
            pixels[y * WIDTH + x] = c;
        }
        Frame::from_pixels(pixels).unwrap()
    }

    #[test]
    fn palette_mapping_halves() {
        assert_eq!(map_raw_palette(0), 0);
        assert_eq!(map_raw_palette(1), 0);
        assert_eq!(map_raw_palette(2), 1);
        assert_eq!(map_raw_palette(255), 127);
        for c in 0..COLORS as u8 {
            assert_eq!(map_raw_palette(c * 2), c);
        }
    }

    #[test]
    fn frame_rejects_bad_input() {
        assert!(matches!(
            Frame::from_pixels(vec![0; 5]),
            Err(Error::FrameSize { got: 5, .. })
        ));
        let mut pixels = vec![0u8; PIXELS];
        pixels[7] = 200;
        assert!(matches!(
            Frame::from_pixels(pixels),
            Err(Error::PixelRange { index: 7, value: 200 })
        ));
    }

    #[test]
    fn background_is_per_pixel_mode() {
        let a = frame_with(&[(0, 0, 5)], 1);
        let b = frame_with(&[(0, 0, 5)], 2);
        let c = frame_with(&[(0, 0, 7)], 2);
        let bg = compute_background(&[a, b, c]).unwrap();
        assert_eq!(bg.get(0, 0), 5);
        assert_eq!(bg.get(3, 3), 2);
    }

    #[test]
    fn background_ties_take_smallest_color() {
        let a = Frame::filled(9);
        let b = Frame::filled(4);
        let bg = compute_background(&[a, b]).unwrap();
        assert_eq!(bg.get(50, 100), 4);
    }

    #[test]
    fn background_requires_samples() {
        assert!(matches!(compute_background(&[]), Err(Error::EmptySamples)));
    }

    #[test]
    fn background_is_order_independent() {
        let frames: Vec<Frame> = (0..9)
            .map(|i| frame_with(&[(i, i, (i % 3) as u8 + 1)], (i % 4) as u8))
            .collect();
        let mut reversed = frames.clone();
        reversed.reverse();
        let a = compute_background(&frames).unwrap();
        let b = compute_background(&reversed).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subtraction_keeps_changed_pixels() {
        let bg = compute_background(&[Frame::filled(3)]).unwrap();
        let frame = frame_with(&[(12, 31, 9), (12, 32, 3)], 3);
        let masked = subtract_background(&frame, &bg);
        assert_eq!(masked.get(12, 31), Some(9));
        assert_eq!(masked.get(12, 32), None);
        assert_eq!(masked.get(0, 0), None);
        assert_eq!(masked.colored_count(), 1);
    }

    #[test]
    fn subtracting_own_background_masks_everything() {
        let frame = frame_with(&[(1, 1, 3), (100, 200, 77)], 0);
        let bg = compute_background(std::slice::from_ref(&frame)).unwrap();
        let masked = subtract_background(&frame, &bg);
        assert_eq!(masked.colored_count(), 0);
    }

    #[test]
    fn background_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bg.bin");
        let bg = compute_background(&[Frame::filled(6), Frame::filled(6)]).unwrap();
        save_background(&bg, &path).unwrap();
        let loaded = load_background(&path).unwrap();
        assert_eq!(bg, loaded);
    }

    #[test]
    fn background_file_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bg.bin");
        std::fs::write(&path, b"SABGv9xxrest").unwrap();
        assert!(matches!(
            load_background(&path),
            Err(Error::FileMagic { .. })
        ));
    }

    #[test]
    fn background_file_reports_truncation_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bg.bin");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"SABGv001");
        bytes.extend_from_slice(&160u32.to_le_bytes());
        bytes.extend_from_slice(&210u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 100]);
        std::fs::write(&path, bytes).unwrap();
        match load_background(&path) {
            Err(Error::FileTruncated { offset, .. }) => assert_eq!(offset, 116),
            other => panic!("expected truncation error, got {:?}", other.err()),
        }
    }

    #[test]
    fn masked_frame_set_and_clear() {
        let mut m = MaskedFrame::empty();
        m.set(5, 6, 100);
        assert_eq!(m.get(5, 6), Some(100));
        m.clear(5, 6);
        assert_eq!(m.get(5, 6), None);
        let listed: Vec<_> = m.colored_pixels().collect();
        assert!(listed.is_empty());
    }
}
