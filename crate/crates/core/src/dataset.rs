//! Raster ingestion and patch extraction.
//!
//! Images are binary PPM (`P6`) and masks binary PGM (`P5`), both with maxval
//! 255. A dataset directory holds `images/<id>.ppm` and `masks/<id>.pgm`,
//! paired by file stem. Patches are cut with a sliding window; the spatial
//! split cuts each source vertically so no window straddles both sides.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matrix::FeatureMap;
use crate::metrics::BinaryMask;

pub const DEFAULT_PATCH_SIZE: usize = 64;
pub const DEFAULT_STRIDE: usize = 19;
pub const DEFAULT_MASK_THRESHOLD: u8 = 128;

/// 8-bit raster with 1 (gray) or 3 (RGB) interleaved channels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidInput(format!(
                "rasters have 1 or 3 channels, got {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::InvalidInput(format!(
                "{width}x{height}x{channels} raster needs {} bytes, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize, channel: usize) -> u8 {
        self.pixels[(row * self.width + col) * self.channels + channel]
    }

    /// The `height × width` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::InvalidDimension(format!(
                "window {height}x{width} at ({row}, {col}) exceeds {}x{} raster",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(height * width * self.channels);
        for r in row..row + height {
            let start = (r * self.width + col) * self.channels;
            pixels.extend_from_slice(&self.pixels[start..start + width * self.channels]);
        }
        Self::new(width, height, self.channels, pixels)
    }

    /// Three-channel image scaled to `[0, 1]` by `byte / 255`; gray rasters
    /// are replicated into all three channels.
    pub fn to_normalized_rgb(&self) -> FeatureMap {
        let mut map = FeatureMap::zeros(3, self.height, self.width);
        for c in 0..3 {
            let src = if self.channels == 3 { c } else { 0 };
            let plane = map.plane_mut(c);
            for (p, v) in plane.iter_mut().enumerate() {
                *v = self.pixels[p * self.channels + src] as f64 / 255.0;
            }
        }
        map
    }

    /// Quantizes a `[0, 1]` RGB map back to bytes (nearest, clamped).
    pub fn from_normalized_rgb(map: &FeatureMap) -> Result<Self> {
        if map.channels() != 3 {
            return Err(Error::InvalidInput(format!(
                "expected a 3-channel map, got {}",
                map.channels()
            )));
        }
        let (h, w) = (map.height(), map.width());
        let mut pixels = vec![0u8; h * w * 3];
        for c in 0..3 {
            for (p, &v) in map.plane(c).iter().enumerate() {
                pixels[p * 3 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        Self::new(w, h, 3, pixels)
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        let pixels = mask.as_slice().iter().map(|&v| v * 255).collect();
        Self {
            width: mask.width(),
            height: mask.height(),
            channels: 1,
            pixels,
        }
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Format {
                offset: start,
                message: format!("{what} out of range"),
            })
    }
}

/// Decodes a binary PPM (`P6`) or PGM (`P5`) with maxval 255.
pub fn decode_pnm(bytes: &[u8]) -> Result<RasterImage> {
    let mut cur = HeaderCursor { bytes, pos: 0 };
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(cur.err("expected magic P5 or P6")),
    };
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    cur.skip_whitespace_and_comments();
    let maxval_at = cur.pos;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format {
            offset: maxval_at,
            message: format!("maxval must be 255, got {maxval}"),
        });
    }
    if width == 0 || height == 0 {
        return Err(cur.err(format!("empty raster {width}x{height}")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.err("expected a single whitespace byte after maxval")),
    }
    let need = width * height * channels;
    let payload = &bytes[cur.pos..];
    if payload.len() < need {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!(
                "truncated payload: expected {need} bytes, found {}",
                payload.len()
            ),
        });
    }
    if payload.len() > need {
        return Err(Error::Format {
            offset: cur.pos + need,
            message: format!("{} trailing bytes after payload", payload.len() - need),
        });
    }
    RasterImage::new(width, height, channels, payload.to_vec())
}

pub fn encode_pnm(img: &RasterImage) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

pub fn save_raster(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}

/// Writes a binary mask as PGM with 1 → 255 and 0 → 0.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    save_raster(&RasterImage::from_mask(mask), path)
}

/// Loads a PGM mask and binarizes it at the default threshold.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    binarize_mask(&load_raster(path)?, DEFAULT_MASK_THRESHOLD)
}

/// `value ≥ threshold → 1`, else 0.
pub fn binarize_mask(raster: &RasterImage, threshold: u8) -> Result<BinaryMask> {
    if raster.channels != 1 {
        return Err(Error::InvalidDataset(format!(
            "mask rasters must have one channel, got {}",
            raster.channels
        )));
    }
    BinaryMask::new(
        raster.height,
        raster.width,
        raster
            .pixels
            .iter()
            .map(|&v| (v >= threshold) as u8)
            .collect(),
    )
}

/// Where a patch came from, in source-raster pixel coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Origin {
    pub source: String,
    pub row: usize,
    pub col: usize,
}

/// One training or evaluation patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: FeatureMap,
    pub mask: BinaryMask,
    pub origin: Origin,
}

impl Sample {
    pub fn labels(&self) -> Vec<usize> {
        self.mask.labels()
    }
}

/// Window offsets `0, stride, 2·stride, …` that keep a `size` window inside `len`.
pub fn window_offsets(len: usize, size: usize, stride: usize) -> Vec<usize> {
    if size == 0 || stride == 0 || len < size {
        return Vec::new();
    }
    (0..=(len - size) / stride).map(|k| k * stride).collect()
}

/// `(⌊(H−size)/stride⌋+1)·(⌊(W−size)/stride⌋+1)` or 0 when the window does not fit.
pub fn patch_count(height: usize, width: usize, size: usize, stride: usize) -> usize {
    if height < size || width < size || stride == 0 {
        return 0;
    }
    ((height - size) / stride + 1) * ((width - size) / stride + 1)
}

fn check_window(size: usize, stride: usize) -> Result<()> {
    if size == 0 || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "window size and stride must be positive, got {size} and {stride}"
        )));
    }
    Ok(())
}

/// Cuts aligned `size × size` image/mask windows at every multiple of
/// `stride`, row-major, dropping the remainder that does not fit a window.
pub fn slice_patches(
    img: &RasterImage,
    mask: &RasterImage,
    source: &str,
    size: usize,
    stride: usize,
) -> Result<Vec<Sample>> {
    check_window(size, stride)?;
    if (img.width, img.height) != (mask.width, mask.height) {
        return Err(Error::InvalidDataset(format!(
            "{source}: image is {}x{} but mask is {}x{}",
            img.height, img.width, mask.height, mask.width
        )));
    }
    if img.width < size || img.height < size {
        return Err(Error::InvalidDataset(format!(
            "{source}: {}x{} raster is smaller than the {size}x{size} window",
            img.height, img.width
        )));
    }
    slice_region(img, mask, source, 0, img.width, size, stride)
}

/// Slices the columns `[col_start, col_end)` of a source independently.
fn slice_region(
    img: &RasterImage,
    mask: &RasterImage,
    source: &str,
    col_start: usize,
    col_end: usize,
    size: usize,
    stride: usize,
) -> Result<Vec<Sample>> {
    let rows = window_offsets(img.height, size, stride);
    let cols = window_offsets(col_end - col_start, size, stride);
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            let col = col_start + c;
            let image = img.crop(r, col, size, size)?.to_normalized_rgb();
            let m = binarize_mask(&mask.crop(r, col, size, size)?, DEFAULT_MASK_THRESHOLD)?;
            out.push(Sample {
                image,
                mask: m,
                origin: Origin {
                    source: source.to_string(),
                    row: r,
                    col,
                },
            });
        }
    }
    Ok(out)
}

/// An aligned image/mask pair identified by its file stem.
#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub id: String,
    pub image: RasterImage,
    pub mask: RasterImage,
}

impl Source {
    pub fn new(id: impl Into<String>, image: RasterImage, mask: RasterImage) -> Result<Self> {
        let id = id.into();
        if (image.width, image.height) != (mask.width, mask.height) {
            return Err(Error::InvalidDataset(format!(
                "{id}: image is {}x{} but mask is {}x{}",
                image.height, image.width, mask.height, mask.width
            )));
        }
        if mask.channels != 1 {
            return Err(Error::InvalidDataset(format!(
                "{id}: mask must have one channel"
            )));
        }
        Ok(Self { id, image, mask })
    }

    pub fn patches(&self, size: usize, stride: usize) -> Result<Vec<Sample>> {
        slice_patches(&self.image, &self.mask, &self.id, size, stride)
    }
}

/// Column where a source of `width` pixels is cut: `⌊ratio·width⌋` rounded
/// down to a multiple of `stride`.
pub fn split_column(width: usize, ratio: f64, stride: usize) -> usize {
    let raw = (ratio * width as f64).floor() as usize;
    (raw.min(width) / stride) * stride
}

/// Spatially separated split: every source is cut vertically at
/// [`split_column`]; the left part feeds training, the right part testing.
/// Each side is sliced on its own, so no patch crosses the cut.
pub fn split_spatial(
    sources: &[Source],
    ratio: f64,
    size: usize,
    stride: usize,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    check_window(size, stride)?;
    if sources.is_empty() {
        return Err(Error::InvalidDataset("no sources to split".into()));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must be in [0, 1], got {ratio}"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in sources {
        let width = s.image.width;
        let cut = split_column(width, ratio, stride);
        for (name, lo, hi, bucket) in [
            ("train", 0, cut, &mut train),
            ("test", cut, width, &mut test),
        ] {
            if hi - lo < size || s.image.height < size {
                if hi > lo {
                    log::warn!(
                        "{}: {name} side is {}x{} px, narrower than the {size}px window; it contributes no patches",
                        s.id,
                        s.image.height,
                        hi - lo
                    );
                }
                continue;
            }
            bucket.extend(slice_region(&s.image, &s.mask, &s.id, lo, hi, size, stride)?);
        }
    }
    Ok((train, test))
}

fn stems_with_extension(dir: &Path, ext: &str) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Reads `images/<id>.ppm` + `masks/<id>.pgm` pairs, ordered by id.
pub fn load_source_dir(dir: impl AsRef<Path>) -> Result<Vec<Source>> {
    let dir = dir.as_ref();
    load_sources(dir.join("images"), dir.join("masks"))
}

/// Pairs every `<id>.ppm` in `images_dir` with `<id>.pgm` in `masks_dir`.
pub fn load_sources(images_dir: impl AsRef<Path>, masks_dir: impl AsRef<Path>) -> Result<Vec<Source>> {
    let (images_dir, masks_dir) = (images_dir.as_ref(), masks_dir.as_ref());
    if !images_dir.is_dir() {
        return Err(Error::InvalidDataset(format!(
            "image directory {} does not exist",
            images_dir.display()
        )));
    }
    let images = stems_with_extension(images_dir, "ppm")?;
    if images.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "{} contains no .ppm images",
            images_dir.display()
        )));
    }
    let mut sources = Vec::with_capacity(images.len());
    for (stem, img_path) in images {
        let mask_path = masks_dir.join(format!("{stem}.pgm"));
        if !mask_path.is_file() {
            return Err(Error::InvalidDataset(format!(
                "image {stem:?} has no mask at {}",
                mask_path.display()
            )));
        }
        sources.push(Source::new(
            stem,
            load_raster(&img_path)?,
            load_raster(&mask_path)?,
        )?);
    }
    Ok(sources)
}

/// Writes sources in the dataset directory layout.
pub fn write_source_dir(dir: impl AsRef<Path>, sources: &[Source]) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for s in sources {
        save_raster(&s.image, dir.join("images").join(format!("{}.ppm", s.id)))?;
        save_raster(&s.mask, dir.join("masks").join(format!("{}.pgm", s.id)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn gray(w: usize, h: usize, fill: u8) -> RasterImage {
        RasterImage::new(w, h, 1, vec![fill; w * h]).unwrap()
    }

    fn rgb_ramp(w: usize, h: usize) -> RasterImage {
        let pixels = (0..w * h * 3).map(|i| (i % 251) as u8).collect();
        RasterImage::new(w, h, 3, pixels).unwrap()
    }

    #[test]
    fn decodes_single_white_pixel() {
        let mut bytes = b"P6\n1 1\n255\n".to_vec();
        bytes.extend([0xFF, 0xFF, 0xFF]);
        let img = decode_pnm(&bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (1, 1, 3));
        assert_eq!(img.pixels(), &[255, 255, 255]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 1 # trailing\n255\n".to_vec();
        bytes.extend([7, 9]);
        assert_eq!(decode_pnm(&bytes).unwrap().pixels(), &[7, 9]);
    }

    #[test]
    fn format_errors_carry_offsets() {
        let err = decode_pnm(b"P5\n2 2\n100\n\0\0\0\0").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 7, .. }), "{err}");

        let err = decode_pnm(b"P5\n2 2\n255\n\0\0").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 13, .. }), "{err}");

        let err = decode_pnm(b"P3\n1 1\n255\n").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));

        let err = decode_pnm(b"P5\nx 1\n255\n\0").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 3, .. }));

        assert!(decode_pnm(b"P5\n1 1\n255\n\0\0").is_err());
        assert!(decode_pnm(b"P5\n1 1\n255").is_err());
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = BinaryMask::new(8, 8, (0..64).map(|_| rng.gen_range(0..2)).collect()).unwrap();
        let path = dir.path().join("m.pgm");
        save_mask(&m, &path).unwrap();
        let raw = load_raster(&path).unwrap();
        assert!(raw.pixels().iter().all(|&v| v == 0 || v == 255));
        assert_eq!(load_mask(&path).unwrap(), m);
    }

    #[test]
    fn binarize_examples() {
        let zero = binarize_mask(&gray(3, 2, 0), 128).unwrap();
        assert_eq!(zero.count_ones(), 0);
        let edge = RasterImage::new(2, 1, 1, vec![128, 127]).unwrap();
        assert_eq!(binarize_mask(&edge, 128).unwrap().as_slice(), &[1, 0]);
        assert!(matches!(
            binarize_mask(&rgb_ramp(2, 2), 128),
            Err(Error::InvalidDataset(_))
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let raw: Vec<u8> = (0..100).map(|_| rng.gen()).collect();
        let r = RasterImage::new(10, 10, 1, raw.clone()).unwrap();
        let m = binarize_mask(&r, 128).unwrap();
        for (b, &v) in m.as_slice().iter().zip(&raw) {
            assert_eq!(*b == 1, v >= 128);
        }
    }

    #[test]
    fn patch_count_examples() {
        let count = |n| {
            slice_patches(&rgb_ramp(n, n), &gray(n, n, 0), "s", 64, 19)
                .unwrap()
                .len()
        };
        assert_eq!(count(64), 1);
        assert_eq!(count(83), 4);
        assert_eq!(count(256), 121);
        assert_eq!(window_offsets(256, 64, 19).last(), Some(&190));
    }

    #[test]
    fn patch_count_closed_form_matches_enumeration() {
        for h in 64..=300 {
            for w in (64..=300).step_by(7) {
                let brute = (0..h)
                    .step_by(19)
                    .filter(|r| r + 64 <= h)
                    .count()
                    * (0..w).step_by(19).filter(|c| c + 64 <= w).count();
                assert_eq!(patch_count(h, w, 64, 19), brute);
                assert_eq!(
                    window_offsets(h, 64, 19).len() * window_offsets(w, 64, 19).len(),
                    brute
                );
            }
        }
    }

    #[test]
    fn slicing_errors() {
        assert!(matches!(
            slice_patches(&rgb_ramp(70, 70), &gray(70, 71, 0), "s", 64, 19),
            Err(Error::InvalidDataset(_))
        ));
        assert!(matches!(
            slice_patches(&rgb_ramp(63, 80), &gray(63, 80, 0), "s", 64, 19),
            Err(Error::InvalidDataset(_))
        ));
    }

    #[test]
    fn patches_are_normalized_and_aligned() {
        let img = rgb_ramp(100, 90);
        let mut mask_px = vec![0u8; 100 * 90];
        mask_px[25 * 100 + 40] = 255;
        let mask = RasterImage::new(100, 90, 1, mask_px).unwrap();
        let patches = slice_patches(&img, &mask, "src", 64, 19).unwrap();
        assert_eq!(patches.len(), patch_count(90, 100, 64, 19));
        let p = &patches[1];
        assert_eq!((p.origin.row, p.origin.col), (0, 19));
        for c in 0..3 {
            for y in 0..64 {
                for x in 0..64 {
                    assert_eq!(
                        p.image.get(c, y, x),
                        img.pixel(y, x + 19, c) as f64 / 255.0
                    );
                }
            }
        }
        assert_eq!(p.mask.get(25, 21), 1);
        assert_eq!(p.mask.count_ones(), 1);
    }

    fn covered(samples: &[Sample]) -> HashSet<(String, usize, usize)> {
        let mut set = HashSet::new();
        for s in samples {
            for r in 0..64 {
                for c in 0..64 {
                    set.insert((s.origin.source.clone(), s.origin.row + r, s.origin.col + c));
                }
            }
        }
        set
    }

    #[test]
    fn spatial_split_is_disjoint() {
        let src = Source::new("a", rgb_ramp(256, 256), gray(256, 256, 0)).unwrap();
        let (train, test) = split_spatial(&[src], 0.8, 64, 19).unwrap();
        assert!(!train.is_empty() && !test.is_empty());
        let (a, b) = (covered(&train), covered(&test));
        assert!(a.is_disjoint(&b));
        // cut at ⌊204.8⌋ = 204 → 190
        assert!(train.iter().all(|s| s.origin.col + 64 <= 190));
        assert!(test.iter().all(|s| s.origin.col >= 190));
    }

    #[test]
    fn spatial_split_edge_cases() {
        let src = Source::new("a", rgb_ramp(256, 256), gray(256, 256, 0)).unwrap();
        let (_, test) = split_spatial(std::slice::from_ref(&src), 1.0, 64, 19).unwrap();
        assert!(test.is_empty());

        let other = Source::new("b", rgb_ramp(300, 128), gray(300, 128, 0)).unwrap();
        let (t1, e1) = split_spatial(std::slice::from_ref(&src), 0.8, 64, 19).unwrap();
        let (t2, e2) = split_spatial(std::slice::from_ref(&other), 0.8, 64, 19).unwrap();
        let (t, e) = split_spatial(&[src, other], 0.8, 64, 19).unwrap();
        assert_eq!(t.len(), t1.len() + t2.len());
        assert_eq!(e.len(), e1.len() + e2.len());
        assert!(split_spatial(&[], 0.8, 64, 19).is_err());
    }

    #[test]
    fn source_dir_round_trip_and_missing_mask() {
        let dir = tempfile::tempdir().unwrap();
        let sources = vec![
            Source::new("b", rgb_ramp(64, 64), gray(64, 64, 255)).unwrap(),
            Source::new("a", rgb_ramp(70, 66), gray(70, 66, 0)).unwrap(),
        ];
        write_source_dir(dir.path(), &sources).unwrap();
        let loaded = load_source_dir(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].id, "a");
        assert_eq!(loaded[1], sources[0]);

        fs::remove_file(dir.path().join("masks/b.pgm")).unwrap();
        let err = load_source_dir(dir.path()).unwrap_err();
        assert!(err.to_string().contains("\"b\""), "{err}");
    }
}
