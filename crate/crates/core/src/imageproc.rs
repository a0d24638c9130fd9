//! Image preprocessing, augmentation and dataset manifests.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{data, domain, Error, Result};
use crate::phantom::{Material, ParisType, TactileFrame, BACKGROUND_LEVEL};

pub const MODEL_INPUT: usize = 224;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    pub width: usize,
    pub height: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    /// Row-major, channel-interleaved.
    pub data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return domain(format!("unsupported channel count {channels}"));
        }
        if data.len() != width * height * channels {
            return domain(format!(
                "buffer of {} bytes does not match {width}x{height}x{channels}",
                data.len()
            ));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Self { width, height, channels, data: vec![value; width * height * channels] }
    }

    pub fn from_frame(frame: &TactileFrame) -> Self {
        Self { width: frame.width, height: frame.height, channels: 3, data: frame.rgb.clone() }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

pub fn crop_roi(img: &ImageU8, rect: Rect) -> Result<ImageU8> {
    if rect.w == 0 || rect.h == 0 || rect.x + rect.w > img.width || rect.y + rect.h > img.height {
        return domain(format!("rect {rect:?} outside {}x{} image", img.width, img.height));
    }
    let c = img.channels;
    let mut out = Vec::with_capacity(rect.w * rect.h * c);
    for y in rect.y..rect.y + rect.h {
        let start = (y * img.width + rect.x) * c;
        out.extend_from_slice(&img.data[start..start + rect.w * c]);
    }
    Ok(ImageU8 { width: rect.w, height: rect.h, channels: c, data: out })
}

/// Largest centred square. The renderer centres the polyp on the sensor, so
/// this is the region of interest at a fixed physical scale.
pub fn polyp_roi(width: usize, height: usize) -> Rect {
    let s = width.min(height);
    Rect { x: (width - s) / 2, y: (height - s) / 2, w: s, h: s }
}

#[inline]
fn round_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Bilinear sample at a source coordinate already known to lie inside the image.
#[inline]
fn sample(img: &ImageU8, sx: f64, sy: f64, c: usize) -> f64 {
    let x0 = (sx.floor() as usize).min(img.width - 1);
    let y0 = (sy.floor() as usize).min(img.height - 1);
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let top = img.get(x0, y0, c) as f64 * (1.0 - fx) + img.get(x1, y0, c) as f64 * fx;
    let bot = img.get(x0, y1, c) as f64 * (1.0 - fx) + img.get(x1, y1, c) as f64 * fx;
    top * (1.0 - fy) + bot * fy
}

/// Bilinear resize with pixel-centre alignment: `src = (i + 0.5) * scale - 0.5`,
/// clamped to the source, rounded half-up.
pub fn resize_bilinear(img: &ImageU8, out_w: usize, out_h: usize) -> Result<ImageU8> {
    if img.width == 0 || img.height == 0 || out_w == 0 || out_h == 0 {
        return domain("resize dimensions must be at least 1");
    }
    let sx_scale = img.width as f64 / out_w as f64;
    let sy_scale = img.height as f64 / out_h as f64;
    let c = img.channels;
    let xs: Vec<f64> = (0..out_w)
        .map(|i| ((i as f64 + 0.5) * sx_scale - 0.5).clamp(0.0, (img.width - 1) as f64))
        .collect();
    let mut out = Vec::with_capacity(out_w * out_h * c);
    for j in 0..out_h {
        let sy = ((j as f64 + 0.5) * sy_scale - 0.5).clamp(0.0, (img.height - 1) as f64);
        for &sx in &xs {
            for ch in 0..c {
                out.push(round_u8(sample(img, sx, sy, ch)));
            }
        }
    }
    Ok(ImageU8 { width: out_w, height: out_h, channels: c, data: out })
}

pub fn hflip(img: &ImageU8) -> ImageU8 {
    let c = img.channels;
    let mut out = Vec::with_capacity(img.data.len());
    for y in 0..img.height {
        for x in (0..img.width).rev() {
            let i = (y * img.width + x) * c;
            out.extend_from_slice(&img.data[i..i + c]);
        }
    }
    ImageU8 { data: out, ..*img }
}

/// Counter-clockwise rotation (as displayed) about the image centre with
/// bilinear resampling. Pixels that map outside the source are black.
pub fn rotate(img: &ImageU8, angle_deg: f64) -> Result<ImageU8> {
    if !(-90.0..=90.0).contains(&angle_deg) {
        return domain(format!("rotation angle {angle_deg} outside [-90, 90]"));
    }
    let (s, co) = angle_deg.to_radians().sin_cos();
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let (maxx, maxy) = ((img.width - 1) as f64, (img.height - 1) as f64);
    const EPS: f64 = 1e-9;
    let c = img.channels;
    let mut out = vec![0u8; img.data.len()];
    for y in 0..img.height {
        let dy = y as f64 - cy;
        for x in 0..img.width {
            let dx = x as f64 - cx;
            let sx = cx + co * dx - s * dy;
            let sy = cy + s * dx + co * dy;
            if sx < -EPS || sy < -EPS || sx > maxx + EPS || sy > maxy + EPS {
                continue;
            }
            let (sx, sy) = (sx.clamp(0.0, maxx), sy.clamp(0.0, maxy));
            for ch in 0..c {
                out[(y * img.width + x) * c + ch] = round_u8(sample(img, sx, sy, ch));
            }
        }
    }
    Ok(ImageU8 { data: out, ..*img })
}

/// Sampled Gaussian with radius `ceil(3 sigma)`, normalised after truncation.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= z);
    k
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(img: &ImageU8, sigma: f64) -> Result<ImageU8> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return domain(format!("blur sigma {sigma} must be positive"));
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h, c) = (img.width as i64, img.height as i64, img.channels);
    let mut tmp = vec![0f64; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let sx = (x + t as i64 - r).clamp(0, w - 1);
                    acc += kv * img.data[((y * w + sx) as usize) * c + ch] as f64;
                }
                tmp[((y * w + x) as usize) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0u8; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, kv) in k.iter().enumerate() {
                    let sy = (y + t as i64 - r).clamp(0, h - 1);
                    acc += kv * tmp[((sy * w + x) as usize) * c + ch];
                }
                out[((y * w + x) as usize) * c + ch] = round_u8(acc);
            }
        }
    }
    Ok(ImageU8 { data: out, ..*img })
}

pub fn to_grayscale(img: &ImageU8) -> Result<ImageU8> {
    if img.channels != 3 {
        return domain(format!("grayscale needs 3 channels, got {}", img.channels));
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| round_u8(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64))
        .collect();
    Ok(ImageU8 { width: img.width, height: img.height, channels: 1, data })
}

/// Square around the lit contact region, widened by `margin` of its side on
/// each edge and shifted to stay inside the image. Falls back to
/// [`polyp_roi`] when nothing is in contact.
pub fn contact_roi(img: &ImageU8, margin: f64) -> Rect {
    let (w, h, c) = (img.width, img.height, img.channels);
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) * c;
            if img.data[i..i + c].iter().any(|&v| v > BACKGROUND_LEVEL) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    if x0 == usize::MAX {
        return polyp_roi(w, h);
    }
    let side = (x1 - x0).max(y1 - y0) as f64 * (1.0 + 2.0 * margin);
    let side = (side.ceil() as usize).min(w).min(h).max(8.min(w).min(h));
    let cx = (x0 + x1) / 2;
    let cy = (y0 + y1) / 2;
    let x = cx.saturating_sub(side / 2).min(w - side);
    let y = cy.saturating_sub(side / 2).min(h - side);
    Rect { x, y, w: side, h: side }
}

/// Classifier input: crop to the contact region and resize.
pub fn classifier_input(frame: &TactileFrame, size: usize) -> Result<ImageU8> {
    let img = ImageU8::from_frame(frame);
    let roi = crop_roi(&img, contact_roi(&img, 0.0))?;
    resize_bilinear(&roi, size, size)
}

/// Stiffness-embedding input: fixed centred window (so contact area keeps
/// its physical scale), resized and converted to grayscale.
pub fn stiffness_input(frame: &TactileFrame, size: usize) -> Result<ImageU8> {
    let img = ImageU8::from_frame(frame);
    let roi = crop_roi(&img, polyp_roi(img.width, img.height))?;
    to_grayscale(&resize_bilinear(&roi, size, size)?)
}

/// Fraction of pixels with any channel above the background level.
pub fn contact_fraction(img: &ImageU8) -> f64 {
    let n = img.width * img.height;
    let lit = img
        .data
        .chunks_exact(img.channels)
        .filter(|p| p.iter().any(|&v| v > BACKGROUND_LEVEL))
        .count();
    lit as f64 / n as f64
}

pub fn write_png(path: &Path, img: &ImageU8) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, img.width as u32, img.height as u32);
    enc.set_color(if img.channels == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale });
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Data(format!("png: {e}")))?;
    writer.write_image_data(&img.data).map_err(|e| Error::Data(format!("png: {e}")))?;
    writer.finish().map_err(|e| Error::Data(format!("png: {e}")))?;
    Ok(())
}

pub fn read_png(path: &Path) -> Result<ImageU8> {
    let file = BufReader::new(File::open(path)?);
    let dec = png::Decoder::new(file);
    let mut reader = dec.read_info().map_err(|e| Error::Data(format!("png {}: {e}", path.display())))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Data(format!("png {}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Data(format!("png {}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return data(format!("png {}: only 8-bit images are supported", path.display()));
    }
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Grayscale => 1,
        other => return data(format!("png {}: unsupported color type {other:?}", path.display())),
    };
    buf.truncate(info.buffer_size());
    ImageU8::new(info.width as usize, info.height as usize, channels, buf)
}

pub fn write_raw(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

pub fn read_raw(path: &Path) -> Result<Vec<u8>> {
    let mut v = Vec::new();
    File::open(path)?.read_to_end(&mut v)?;
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    Original,
    HFlip,
    Rotate(f64),
    HFlipRotate(f64),
    Blur(f64),
}

impl Transform {
    /// Tag stored in the manifest; floats use the shortest round-trip form so
    /// the tag reproduces the exact transform.
    pub fn tag(&self) -> String {
        match self {
            Transform::Original => "orig".into(),
            Transform::HFlip => "hflip".into(),
            Transform::Rotate(a) => format!("rot:{a}"),
            Transform::HFlipRotate(a) => format!("hflip+rot:{a}"),
            Transform::Blur(s) => format!("blur:{s}"),
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Data(format!("bad augmentation tag {tag:?}")));
        Ok(match tag {
            "orig" => Transform::Original,
            "hflip" => Transform::HFlip,
            _ => {
                if let Some(a) = tag.strip_prefix("hflip+rot:") {
                    Transform::HFlipRotate(num(a)?)
                } else if let Some(a) = tag.strip_prefix("rot:") {
                    Transform::Rotate(num(a)?)
                } else if let Some(s) = tag.strip_prefix("blur:") {
                    Transform::Blur(num(s)?)
                } else {
                    return data(format!("bad augmentation tag {tag:?}"));
                }
            }
        })
    }

    pub fn apply(&self, img: &ImageU8) -> Result<ImageU8> {
        match *self {
            Transform::Original => Ok(img.clone()),
            Transform::HFlip => Ok(hflip(img)),
            Transform::Rotate(a) => rotate(img, a),
            Transform::HFlipRotate(a) => rotate(&hflip(img), a),
            Transform::Blur(s) => gaussian_blur(img, s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub factor: usize,
    pub rotation_range_deg: (f64, f64),
    pub blur_sigma_range: (f64, f64),
    pub seed: u64,
}

impl AugmentationPlan {
    pub fn new(seed: u64) -> Self {
        Self { factor: 6, rotation_range_deg: (-90.0, 90.0), blur_sigma_range: (32.0, 64.0), seed }
    }

    fn validate(&self) -> Result<()> {
        let (r0, r1) = self.rotation_range_deg;
        let (b0, b1) = self.blur_sigma_range;
        if self.factor < 1 {
            return domain("augmentation factor must be at least 1");
        }
        if !(r0 <= r1 && r0 >= -90.0 && r1 <= 90.0) {
            return domain(format!("rotation range [{r0}, {r1}] must lie in [-90, 90]"));
        }
        if !(b0 <= b1 && b0 > 0.0) {
            return domain(format!("blur range [{b0}, {b1}] must be positive and ordered"));
        }
        Ok(())
    }

    /// Transforms for `n` sources: the original followed by `factor - 1`
    /// draws, each picking one family uniformly.
    pub fn draw(&self, n: usize) -> Result<Vec<Vec<Transform>>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (r0, r1) = self.rotation_range_deg;
        let (b0, b1) = self.blur_sigma_range;
        let uni = |rng: &mut ChaCha8Rng, a: f64, b: f64| a + (b - a) * rng.random::<f64>();
        Ok((0..n)
            .map(|_| {
                let mut v = vec![Transform::Original];
                for _ in 1..self.factor {
                    v.push(match rng.random_range(0..4u8) {
                        0 => Transform::HFlip,
                        1 => Transform::Rotate(uni(&mut rng, r0, r1)),
                        2 => Transform::HFlipRotate(uni(&mut rng, r0, r1)),
                        _ => Transform::Blur(uni(&mut rng, b0, b1)),
                    });
                }
                v
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub paris_type: ParisType,
    pub variation: u8,
    pub material: Material,
    pub force_n: f64,
    pub split: Split,
    pub aug_tag: String,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::Data(format!("manifest {}: {e}", path.display())))?;
    w.write_record(["path", "paris_type", "variation", "material", "force_n", "split", "aug_tag"])
        .map_err(|e| Error::Data(e.to_string()))?;
    for e in entries {
        w.serialize((
            &e.path,
            e.paris_type.name(),
            e.variation,
            e.material.name(),
            e.force_n,
            e.split,
            &e.aug_tag,
        ))
        .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("manifest {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("manifest {}: {e}", path.display())))?;
        let bad = |what: &str| Error::Data(format!("manifest {} row {}: bad {what}", path.display(), line + 2));
        if rec.len() != 7 {
            return Err(bad("column count"));
        }
        out.push(ManifestEntry {
            path: rec[0].to_string(),
            paris_type: ParisType::from_name(&rec[1]).ok_or_else(|| bad("paris_type"))?,
            variation: rec[2].parse().ok().filter(|v| (1..=4).contains(v)).ok_or_else(|| bad("variation"))?,
            material: Material::from_name(&rec[3]).ok_or_else(|| bad("material"))?,
            force_n: rec[4].parse().ok().filter(|f: &f64| f.is_finite() && *f >= 0.0).ok_or_else(|| bad("force_n"))?,
            split: match &rec[5] {
                "train" => Split::Train,
                "eval" => Split::Eval,
                _ => return Err(bad("split")),
            },
            aug_tag: rec[6].to_string(),
        });
    }
    Ok(out)
}

/// Expands each source into `plan.factor` samples. Labels are copied and the
/// tag of every output records its transform.
pub fn augment_dataset(
    sources: &[(ManifestEntry, ImageU8)],
    plan: &AugmentationPlan,
) -> Result<Vec<(ManifestEntry, ImageU8)>> {
    let plans = plan.draw(sources.len())?;
    let mut out = Vec::with_capacity(sources.len() * plan.factor);
    for ((entry, img), transforms) in sources.iter().zip(plans) {
        for t in transforms {
            let mut e = entry.clone();
            e.aug_tag = t.tag();
            out.push((e, t.apply(img)?));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: usize, h: usize, v: &[u8]) -> ImageU8 {
        ImageU8::new(w, h, 1, v.to_vec()).unwrap()
    }

    fn noise(w: usize, h: usize, c: usize, seed: u64) -> ImageU8 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageU8::new(w, h, c, (0..w * h * c).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn crop_examples() {
        let img = noise(17, 13, 3, 1);
        assert_eq!(crop_roi(&img, Rect { x: 0, y: 0, w: 17, h: 13 }).unwrap(), img);
        let px = crop_roi(&img, Rect { x: 5, y: 7, w: 1, h: 1 }).unwrap();
        assert_eq!(px.data, (0..3).map(|c| img.get(5, 7, c)).collect::<Vec<_>>());
        let sub = crop_roi(&img, Rect { x: 3, y: 2, w: 10, h: 10 }).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                for c in 0..3 {
                    assert_eq!(sub.get(x, y, c), img.get(x + 3, y + 2, c));
                }
            }
        }
        assert!(crop_roi(&img, Rect { x: 10, y: 0, w: 8, h: 1 }).is_err());
    }

    #[test]
    fn resize_examples() {
        let img = noise(9, 7, 3, 2);
        assert_eq!(resize_bilinear(&img, 9, 7).unwrap(), img);
        let c = ImageU8::filled(5, 3, 3, 77);
        assert_eq!(resize_bilinear(&c, 11, 8).unwrap(), ImageU8::filled(11, 8, 3, 77));
        let q = gray(2, 2, &[0, 100, 200, 40]);
        assert_eq!(resize_bilinear(&q, 1, 1).unwrap().data, vec![85]);
    }

    #[test]
    fn resize_upsample_matches_hand_values() {
        // 2 -> 4: source coords -0.25, 0.25, 0.75, 1.25 clamp to 0, .25, .75, 1.
        let row = gray(2, 1, &[0, 200]);
        assert_eq!(resize_bilinear(&row, 4, 1).unwrap().data, vec![0, 50, 150, 200]);
    }

    #[test]
    fn flip_examples() {
        let a = gray(2, 1, &[3, 9]);
        assert_eq!(hflip(&a).data, vec![9, 3]);
        let img = noise(6, 4, 3, 3);
        assert_eq!(hflip(&hflip(&img)), img);
        let sym = gray(3, 1, &[1, 5, 1]);
        assert_eq!(hflip(&sym), sym);
    }

    #[test]
    fn rotate_examples() {
        let img = noise(8, 6, 3, 4);
        assert_eq!(rotate(&img, 0.0).unwrap(), img);
        assert!(rotate(&img, 90.5).is_err());
        let mut spot = vec![0u8; 9];
        spot[3] = 255; // (x=0, y=1)
        let r = rotate(&gray(3, 3, &spot), 90.0).unwrap();
        let mut want = vec![0u8; 9];
        want[7] = 255; // (x=1, y=2)
        assert_eq!(r.data, want);
        let r = rotate(&gray(3, 3, &spot), -90.0).unwrap();
        let mut want = vec![0u8; 9];
        want[1] = 255; // (x=1, y=0)
        assert_eq!(r.data, want);
    }

    #[test]
    fn rotate_constant_inside_disk() {
        let img = ImageU8::filled(21, 21, 1, 90);
        let r = rotate(&img, 37.0).unwrap();
        for y in 0..21 {
            for x in 0..21 {
                let d = ((x as f64 - 10.0).powi(2) + (y as f64 - 10.0).powi(2)).sqrt();
                if d <= 10.0 {
                    assert_eq!(r.get(x, y, 0), 90);
                }
            }
        }
    }

    #[test]
    fn blur_examples() {
        let c = ImageU8::filled(20, 12, 3, 131);
        let b = gaussian_blur(&c, 2.5).unwrap();
        assert!(b.data.iter().all(|&v| (v as i32 - 131).abs() <= 1));
        assert!(gaussian_blur(&c, 0.0).is_err());

        let mut imp = vec![0u8; 21 * 21];
        imp[10 * 21 + 10] = 255;
        let b = gaussian_blur(&gray(21, 21, &imp), 1.0).unwrap();
        let z: f64 = (-3..=3).map(|x: i32| (-(x * x) as f64 / 2.0).exp()).sum();
        for x in 0..21i32 {
            let dx = x - 10;
            let want = if dx.abs() <= 3 {
                255.0 * (-(dx * dx) as f64 / 2.0).exp() / z * (1.0 / z)
            } else {
                0.0
            };
            assert!((b.get(x as usize, 10, 0) as f64 - want).abs() <= 1.0, "x={x}");
        }
        let sum: u32 = b.data.iter().map(|&v| v as u32).sum();
        assert!((sum as i32 - 255).abs() <= 25);
    }

    #[test]
    fn blur_interior_shift_covariance() {
        let at = |x: usize, y: usize| {
            let mut v = vec![0u8; 40 * 40];
            v[y * 40 + x] = 255;
            gaussian_blur(&gray(40, 40, &v), 2.0).unwrap()
        };
        let (a, b) = (at(15, 15), at(18, 17));
        for y in 8..23 {
            for x in 8..23 {
                assert_eq!(a.get(x, y, 0), b.get(x + 3, y + 2, 0));
            }
        }
    }

    #[test]
    fn grayscale_examples() {
        let img = ImageU8::new(3, 1, 3, vec![255, 255, 255, 255, 0, 0, 50, 50, 50]).unwrap();
        assert_eq!(to_grayscale(&img).unwrap().data, vec![255, 76, 50]);
        assert!(to_grayscale(&gray(1, 1, &[0])).is_err());
        for v in 0..=255u8 {
            let g = to_grayscale(&ImageU8::filled(1, 1, 3, v)).unwrap();
            assert_eq!(g.data[0], v);
        }
    }

    #[test]
    fn contact_roi_brackets_the_lit_region() {
        let mut img = ImageU8::filled(40, 30, 3, 5);
        for y in 10..16 {
            for x in 20..24 {
                img.data[(y * 40 + x) * 3 + 1] = 200;
            }
        }
        let r = contact_roi(&img, 0.0);
        assert_eq!((r.w, r.h), (8, 8));
        assert!(r.x <= 20 && r.x + r.w >= 24 && r.y <= 10 && r.y + r.h >= 16);
        assert_eq!(contact_roi(&ImageU8::filled(40, 30, 3, 5), 0.1), polyp_roi(40, 30));
        let big = contact_roi(&img, 0.5);
        assert_eq!(big.w, 12);
    }

    #[test]
    fn tags_round_trip() {
        for t in [
            Transform::Original,
            Transform::HFlip,
            Transform::Rotate(-12.345678901234),
            Transform::HFlipRotate(89.999),
            Transform::Blur(33.1),
        ] {
            assert_eq!(Transform::parse(&t.tag()).unwrap(), t);
        }
        assert!(Transform::parse("warp:1").is_err());
    }

    fn entry(t: ParisType) -> ManifestEntry {
        ManifestEntry {
            path: "x.png".into(),
            paris_type: t,
            variation: 1,
            material: Material::M2,
            force_n: 0.8,
            split: Split::Train,
            aug_tag: "orig".into(),
        }
    }

    #[test]
    fn augment_counts_and_determinism() {
        let sources: Vec<_> = (0..48)
            .map(|i| (entry(ParisType::ALL[i % 4]), noise(12, 12, 3, i as u64)))
            .collect();
        let plan = AugmentationPlan::new(9);
        let a = augment_dataset(&sources, &plan).unwrap();
        assert_eq!(a.len(), 288);
        for t in ParisType::ALL {
            assert_eq!(a.iter().filter(|(e, _)| e.paris_type == t).count(), 72);
        }
        assert_eq!(a, augment_dataset(&sources, &plan).unwrap());
        for (e, _) in &a {
            match Transform::parse(&e.aug_tag).unwrap() {
                Transform::Rotate(x) | Transform::HFlipRotate(x) => assert!((-90.0..=90.0).contains(&x)),
                Transform::Blur(s) => assert!((32.0..=64.0).contains(&s)),
                _ => {}
            }
        }
        let one = AugmentationPlan { factor: 1, ..plan };
        let b = augment_dataset(&sources, &one).unwrap();
        assert_eq!(b.len(), 48);
        assert!(b.iter().zip(&sources).all(|(x, y)| x.1 == y.1 && x.0.paris_type == y.0.paris_type));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut es = vec![entry(ParisType::IIc), entry(ParisType::LST)];
        es[1].split = Split::Eval;
        es[1].aug_tag = "rot:-3.25".into();
        es[1].force_n = 0.2;
        write_manifest(&p, &es).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("path,paris_type,variation,material,force_n,split,aug_tag\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_manifest(&p).unwrap(), es);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for c in [1, 3] {
            let img = noise(7, 5, c, 11);
            let p = dir.path().join(format!("i{c}.png"));
            write_png(&p, &img).unwrap();
            assert_eq!(read_png(&p).unwrap(), img);
        }
    }
}
