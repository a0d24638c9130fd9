//! Polyp phantom catalog and the synthetic tactile-frame renderer.
//!
//! A phantom is a height field (in mm) built from its Paris type and
//! geometric variation. Pressing it into the gel at force `F` brings every
//! point within `delta = c * F^(2/3)` of the apex into contact, where `c` is
//! the material compliance. Contact pixels are shaded by three coloured
//! directional lights; everything else stays near-black.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

pub const FRAME_WIDTH: usize = 320;
pub const FRAME_HEIGHT: usize = 240;
/// Sensor pitch in mm per pixel.
pub const PIXEL_MM: f64 = 0.05;
/// Upper bound of the background noise; contact pixels are always brighter.
pub const BACKGROUND_LEVEL: u8 = 12;
/// Highest force a valid session may carry, in newtons.
pub const MAX_FORCE_N: f64 = 13.5;
/// Smallest height (mm) that can touch the gel however hard it is pressed.
pub const FOOTPRINT_FLOOR_MM: f64 = 0.05;
const LIGHT_ELEVATION_DEG: f64 = 30.0;
const LIGHT_AZIMUTHS_DEG: [f64; 3] = [0.0, 120.0, 240.0];
const TEXTURE_ATTENUATION: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParisType {
    Ip,
    IIa,
    IIc,
    LST,
}

impl ParisType {
    pub const ALL: [ParisType; 4] = [ParisType::Ip, ParisType::IIa, ParisType::IIc, ParisType::LST];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ParisType::Ip => "Ip",
            ParisType::IIa => "IIa",
            ParisType::IIc => "IIc",
            ParisType::LST => "LST",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Material {
    M1,
    M2,
    M3,
}

impl Material {
    pub const ALL: [Material; 3] = [Material::M1, Material::M2, Material::M3];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Material::M1 => "M1",
            Material::M2 => "M2",
            Material::M3 => "M3",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn hardness_label(self) -> &'static str {
        match self {
            Material::M1 => "Shore 00 45-60",
            Material::M2 => "Shore A 30-40",
            Material::M3 => "Shore D 83-86",
        }
    }

    /// Indentation coefficient in mm·N^(-2/3). Neighbouring materials differ
    /// by a factor of about 17 so that contact area alone orders them.
    pub fn compliance_coeff(self) -> f64 {
        match self {
            Material::M1 => 1.0,
            Material::M2 => 0.06,
            Material::M3 => 0.0036,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PolypPhantom {
    pub paris_type: ParisType,
    /// Geometric variation, 1..=4.
    pub variation: u8,
    pub material: Material,
}

impl PolypPhantom {
    pub fn new(paris_type: ParisType, variation: u8, material: Material) -> Result<Self> {
        if !(1..=4).contains(&variation) {
            return domain(format!("variation {variation} outside 1..=4"));
        }
        Ok(Self { paris_type, variation, material })
    }

    pub fn geometry(&self) -> PhantomGeometry {
        PhantomGeometry::derive(self.paris_type, self.variation)
    }
}

impl std::fmt::Display for PolypPhantom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{}-{}", self.paris_type.name(), self.variation, self.material.name())
    }
}

impl std::str::FromStr for PolypPhantom {
    type Err = crate::Error;

    /// Parses the `Display` form, e.g. `IIc-3-M2`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || crate::Error::Domain(format!("bad phantom name {s:?}, expected e.g. Ip-1-M1"));
        let mut parts = s.split('-');
        let (Some(t), Some(v), Some(m), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let t = ParisType::from_name(t).ok_or_else(bad)?;
        let v: u8 = v.parse().map_err(|_| bad())?;
        let m = Material::from_name(m).ok_or_else(bad)?;
        Self::new(t, v, m)
    }
}

/// All 48 phantoms, type-major, then variation, then material.
pub fn phantom_catalog() -> Vec<PolypPhantom> {
    let mut out = Vec::with_capacity(48);
    for t in ParisType::ALL {
        for v in 1..=4 {
            for m in Material::ALL {
                out.push(PolypPhantom { paris_type: t, variation: v, material: m });
            }
        }
    }
    out
}

/// Indentation depth in mm: `c * F^(2/3)`.
pub fn indentation_depth(force_n: f64, material: Material) -> Result<f64> {
    if !(force_n >= 0.0) || !force_n.is_finite() {
        return domain(format!("force {force_n} N must be finite and non-negative"));
    }
    Ok(material.compliance_coeff() * force_n.powf(2.0 / 3.0))
}

/// Deterministic hash of integer keys to [0, 1): FNV-1a over 64-bit words
/// followed by a splitmix64 finaliser.
pub fn hash01(keys: &[u64]) -> f64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &k in keys {
        h ^= k;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomGeometry {
    pub paris_type: ParisType,
    /// Semi-major axis in mm.
    pub base_radius: f64,
    pub height_amplitude: f64,
    pub nodule_count: usize,
    pub eccentricity: f64,
    pub texture_amplitude: f64,
    pub texture_period: f64,
    pub texture_phase: f64,
    /// Orientation of the major axis in radians.
    pub orientation: f64,
    /// Nodule centres in the rotated frame, mm.
    pub nodules: Vec<(f64, f64)>,
}

impl PhantomGeometry {
    pub fn derive(paris_type: ParisType, variation: u8) -> Self {
        let t = paris_type.code() as u64;
        let j = variation as u64;
        let u = |k: u64| hash01(&[t, j, k]);
        let (base_radius, eccentricity, height_amplitude) = match paris_type {
            ParisType::Ip => (2.6 + 0.6 * u(1), 0.2 * u(2), 2.0),
            ParisType::IIa => (3.6 + 0.8 * u(1), 0.8 + 0.1 * u(2), 1.0),
            ParisType::IIc => (3.6 + 0.8 * u(1), 0.1 + 0.3 * u(2), 1.0),
            ParisType::LST => (4.4 + 0.8 * u(1), 0.2 + 0.2 * u(2), 1.0),
        };
        let period_base = [0.5, 0.45, 0.4, 0.3][t as usize];
        let mut g = PhantomGeometry {
            paris_type,
            base_radius,
            height_amplitude,
            nodule_count: 0,
            eccentricity,
            texture_amplitude: 0.02,
            texture_period: period_base * (0.9 + 0.2 * u(7)),
            texture_phase: 2.0 * PI * u(8),
            orientation: PI * u(3),
            nodules: Vec::new(),
        };
        if paris_type == ParisType::LST {
            let target = 5 + (4.0 * u(4)) as usize;
            let (a, b) = g.semi_axes();
            let spacing = 3.2 * g.nodule_sigma();
            let mut k = 0u64;
            while g.nodules.len() < target && k < 500 {
                let rr = 0.6 * u(100 + 2 * k).sqrt();
                let th = 2.0 * PI * u(101 + 2 * k);
                let c = (rr * a * th.cos(), rr * b * th.sin());
                let free = g
                    .nodules
                    .iter()
                    .all(|p| (c.0 - p.0).powi(2) + (c.1 - p.1).powi(2) > spacing * spacing);
                if free {
                    g.nodules.push(c);
                }
                k += 1;
            }
            g.nodule_count = g.nodules.len();
        }
        g
    }

    pub fn semi_axes(&self) -> (f64, f64) {
        let a = self.base_radius;
        (a, a * (1.0 - self.eccentricity * self.eccentricity).sqrt())
    }

    fn nodule_sigma(&self) -> f64 {
        0.13 * self.base_radius
    }

    /// Macro height (mm) at a point of the rotated frame.
    fn macro_height(&self, xr: f64, yr: f64) -> f64 {
        let (a, b) = self.semi_axes();
        let rho = ((xr / a).powi(2) + (yr / b).powi(2)).sqrt();
        let amp = self.height_amplitude;
        match self.paris_type {
            ParisType::Ip => amp * (1.0 - rho.powi(4)).max(0.0).powf(1.5),
            ParisType::IIa => amp * (-rho.powi(6)).exp(),
            ParisType::IIc => {
                let rim = (-((rho - 0.7) / 0.3).powi(4)).exp();
                let pit = 0.3 * (-(rho / 0.35).powi(2)).exp();
                amp * (rim - pit)
            }
            ParisType::LST => {
                let mut h = 0.3 * amp * (1.0 - smoothstep(0.75, 1.0, rho));
                let s2 = 2.0 * self.nodule_sigma().powi(2);
                for &(cx, cy) in &self.nodules {
                    let d2 = (xr - cx).powi(2) + (yr - cy).powi(2);
                    h += amp * (-(d2 / s2).powi(2)).exp();
                }
                h
            }
        }
    }

    /// Unit-amplitude surface texture at a point of the rotated frame.
    fn texture(&self, xr: f64, yr: f64) -> f64 {
        let k = 2.0 * PI / self.texture_period;
        let ph = self.texture_phase;
        match self.paris_type {
            ParisType::Ip => (k * xr + ph).cos() * (k * yr).cos(),
            ParisType::IIa => (k * xr + ph).cos(),
            ParisType::IIc => (k * (xr * xr + yr * yr).sqrt() + ph).cos(),
            ParisType::LST => {
                let mut s = 0.0;
                for q in [0.0, 2.0 * PI / 3.0, 4.0 * PI / 3.0] {
                    s += (k * (q.cos() * xr + q.sin() * yr) + ph).cos();
                }
                s / 1.5
            }
        }
    }

    /// Macro height and texture sampled on the sensor grid, row-major.
    pub fn height_fields(&self, width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
        let (s, c) = self.orientation.sin_cos();
        let mut hm = Vec::with_capacity(width * height);
        let mut tex = Vec::with_capacity(width * height);
        for row in 0..height {
            let y = (row as f64 - (height as f64 - 1.0) / 2.0) * PIXEL_MM;
            for col in 0..width {
                let x = (col as f64 - (width as f64 - 1.0) / 2.0) * PIXEL_MM;
                let xr = c * x + s * y;
                let yr = -s * x + c * y;
                hm.push(self.macro_height(xr, yr));
                tex.push(self.texture(xr, yr));
            }
        }
        (hm, tex)
    }
}

fn smoothstep(a: f64, b: f64, x: f64) -> f64 {
    let s = ((x - a) / (b - a)).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TactileFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub rgb: Vec<u8>,
    pub timestamp_us: u64,
    pub force_mn: u16,
}

impl TactileFrame {
    pub fn blank(width: usize, height: usize) -> Self {
        Self { width, height, rgb: vec![0; width * height * 3], timestamp_us: 0, force_mn: 0 }
    }

    pub fn is_valid(&self) -> bool {
        self.rgb.len() == self.width * self.height * 3
    }
}

/// Converts newtons to the millinewton field carried by frames.
pub fn force_to_mn(force_n: f64) -> u16 {
    (force_n * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16
}

/// Renders a frame at the default sensor resolution.
pub fn render_tactile_frame(phantom: &PolypPhantom, force_n: f64, seed: u64) -> Result<TactileFrame> {
    Ok(render_with_mask(phantom, force_n, seed)?.0)
}

/// Renders a frame and also returns its contact mask.
pub fn render_with_mask(phantom: &PolypPhantom, force_n: f64, seed: u64) -> Result<(TactileFrame, Vec<bool>)> {
    if !(0.0..=MAX_FORCE_N).contains(&force_n) {
        return domain(format!("force {force_n} N outside [0, {MAX_FORCE_N}]"));
    }
    let (w, h) = (FRAME_WIDTH, FRAME_HEIGHT);
    let geom = phantom.geometry();
    let (hm, tex) = geom.height_fields(w, h);
    let compliance = phantom.material.compliance_coeff();
    let delta = indentation_depth(force_n, phantom.material)?;
    let top = hm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let plane = (top - delta).max(FOOTPRINT_FLOOR_MM);
    let mask: Vec<bool> = hm.iter().map(|&v| v > plane).collect();

    let att = 1.0 - TEXTURE_ATTENUATION * compliance / Material::M1.compliance_coeff();
    let surf: Vec<f64> = hm
        .iter()
        .zip(&tex)
        .map(|(&m, &t)| m + geom.texture_amplitude * att * t)
        .collect();
    let lights = light_directions();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rgb = vec![0u8; w * h * 3];
    for px in rgb.iter_mut() {
        *px = rng.random_range(0..=BACKGROUND_LEVEL);
    }
    let span = (255 - BACKGROUND_LEVEL - 1) as f64;
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            if !mask[i] {
                continue;
            }
            let gx = gradient(&surf, i, col, w, 1);
            let gy = gradient(&surf, i, row, h, w);
            let norm = (gx * gx + gy * gy + 1.0).sqrt();
            let n = [-gx / norm, -gy / norm, 1.0 / norm];
            for (ch, l) in lights.iter().enumerate() {
                let lam = (n[0] * l[0] + n[1] * l[1] + n[2] * l[2]).max(0.0);
                rgb[i * 3 + ch] = BACKGROUND_LEVEL + 1 + (span * lam).round() as u8;
            }
        }
    }
    let frame = TactileFrame { width: w, height: h, rgb, timestamp_us: 0, force_mn: force_to_mn(force_n) };
    Ok((frame, mask))
}

/// Central difference in the interior, one-sided at the borders, per mm.
fn gradient(f: &[f64], i: usize, pos: usize, len: usize, stride: usize) -> f64 {
    if len < 2 {
        0.0
    } else if pos == 0 {
        (f[i + stride] - f[i]) / PIXEL_MM
    } else if pos == len - 1 {
        (f[i] - f[i - stride]) / PIXEL_MM
    } else {
        (f[i + stride] - f[i - stride]) / (2.0 * PIXEL_MM)
    }
}

fn light_directions() -> [[f64; 3]; 3] {
    let el = LIGHT_ELEVATION_DEG.to_radians();
    LIGHT_AZIMUTHS_DEG.map(|az| {
        let az = az.to_radians();
        [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()]
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ph(t: ParisType, v: u8, m: Material) -> PolypPhantom {
        PolypPhantom::new(t, v, m).unwrap()
    }

    fn area(p: &PolypPhantom, f: f64) -> usize {
        render_with_mask(p, f, 1).unwrap().1.iter().filter(|&&b| b).count()
    }

    #[test]
    fn catalog_has_48_unique_entries_in_order() {
        let cat = phantom_catalog();
        assert_eq!(cat.len(), 48);
        let mut sorted = cat.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, cat);
        assert_eq!(cat.iter().filter(|p| p.material == Material::M3).count(), 16);
        let ip2: Vec<_> = cat
            .iter()
            .filter(|p| p.paris_type == ParisType::Ip && p.variation == 2)
            .map(|p| p.material)
            .collect();
        assert_eq!(ip2, Material::ALL.to_vec());
    }

    #[test]
    fn indentation_formula() {
        assert_eq!(indentation_depth(0.0, Material::M1).unwrap(), 0.0);
        assert!(indentation_depth(0.5, Material::M1).unwrap() > indentation_depth(0.5, Material::M3).unwrap());
        assert!(indentation_depth(0.8, Material::M2).unwrap() > indentation_depth(0.2, Material::M2).unwrap());
        let d = indentation_depth(0.8, Material::M2).unwrap();
        assert!((d - 0.06 * 0.8f64.powf(2.0 / 3.0)).abs() < 1e-15);
        assert!(indentation_depth(-0.1, Material::M1).is_err());
        assert!(indentation_depth(f64::NAN, Material::M1).is_err());
    }

    #[test]
    fn zero_force_leaves_only_background() {
        for p in phantom_catalog().iter().step_by(7) {
            let (f, mask) = render_with_mask(p, 0.0, 3).unwrap();
            assert!(mask.iter().all(|&b| !b));
            assert!(f.rgb.iter().all(|&v| v <= BACKGROUND_LEVEL));
        }
    }

    #[test]
    fn render_is_deterministic_and_checks_force() {
        let p = ph(ParisType::IIc, 3, Material::M2);
        assert_eq!(render_tactile_frame(&p, 0.6, 42).unwrap(), render_tactile_frame(&p, 0.6, 42).unwrap());
        assert!(render_tactile_frame(&p, -0.1, 0).is_err());
        assert!(render_tactile_frame(&p, 13.6, 0).is_err());
        assert!(render_tactile_frame(&p, 13.5, 0).is_ok());
    }

    #[test]
    fn contact_grows_with_force_for_soft_ip() {
        let p = ph(ParisType::Ip, 1, Material::M1);
        assert!(area(&p, 0.8) > area(&p, 0.2));
    }

    #[test]
    fn contact_pixels_are_brighter_than_background() {
        let p = ph(ParisType::LST, 2, Material::M1);
        let (f, mask) = render_with_mask(&p, 0.8, 5).unwrap();
        for (i, &m) in mask.iter().enumerate() {
            let px = &f.rgb[i * 3..i * 3 + 3];
            if m {
                assert!(px.iter().all(|&v| v > BACKGROUND_LEVEL));
            } else {
                assert!(px.iter().all(|&v| v <= BACKGROUND_LEVEL));
            }
        }
    }

    #[test]
    fn geometry_signatures() {
        for v in 1..=4 {
            let ip = PhantomGeometry::derive(ParisType::Ip, v);
            for t in [ParisType::IIa, ParisType::IIc, ParisType::LST] {
                assert!(ip.height_amplitude > PhantomGeometry::derive(t, v).height_amplitude);
            }
            assert!(PhantomGeometry::derive(ParisType::LST, v).nodule_count > 0);
            let iic = PhantomGeometry::derive(ParisType::IIc, v);
            assert!(iic.macro_height(0.0, 0.0) < 0.0);
            assert_eq!(iic, PhantomGeometry::derive(ParisType::IIc, v));
        }
    }

    #[test]
    fn iic_centre_stays_out_of_contact_inside_the_rim() {
        for v in 1..=4 {
            for m in Material::ALL {
                let p = ph(ParisType::IIc, v, m);
                for f in [0.4, 0.6, 0.8] {
                    let (_, mask) = render_with_mask(&p, f, 0).unwrap();
                    let centre = (FRAME_HEIGHT / 2) * FRAME_WIDTH + FRAME_WIDTH / 2;
                    assert!(!mask[centre]);
                    let row = &mask[(FRAME_HEIGHT / 2) * FRAME_WIDTH..(FRAME_HEIGHT / 2 + 1) * FRAME_WIDTH];
                    let left = row[..FRAME_WIDTH / 2].iter().any(|&b| b);
                    let right = row[FRAME_WIDTH / 2..].iter().any(|&b| b);
                    assert!(left && right, "{p} at {f} N has no rim across the centre row");
                }
            }
        }
    }

    #[test]
    fn lst_shows_one_blob_per_nodule() {
        for v in 1..=4 {
            for m in Material::ALL {
                let p = ph(ParisType::LST, v, m);
                for f in [0.6, 0.8] {
                    let (_, mask) = render_with_mask(&p, f, 0).unwrap();
                    let blobs = count_components(&mask, FRAME_WIDTH, FRAME_HEIGHT);
                    if m == Material::M1 {
                        assert!(blobs >= 1);
                    } else {
                        assert!(blobs >= p.geometry().nodule_count, "{p} at {f} N: {blobs} blobs");
                    }
                }
            }
        }
    }

    fn count_components(mask: &[bool], w: usize, h: usize) -> usize {
        let mut seen = vec![false; mask.len()];
        let mut count = 0;
        for start in 0..mask.len() {
            if !mask[start] || seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                let (r, c) = (i / w, i % w);
                let mut push = |j: usize| {
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if r > 0 {
                    push(i - w);
                }
                if r + 1 < h {
                    push(i + w);
                }
                if c > 0 {
                    push(i - 1);
                }
                if c + 1 < w {
                    push(i + 1);
                }
            }
        }
        count
    }
}
