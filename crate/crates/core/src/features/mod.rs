//! The 14-dimensional handcrafted baseline: HSV statistics, GLCM texture
//! descriptors on the V channel, and Bhattacharyya distances of S and V
//! histograms to per-class reference histograms.
//!
//! Layout: `[mean_S, std_S, mean_V, std_V, homog_0°, entropy_0°, homog_90°,
//! entropy_90°, dB(S,c0), dB(S,c1), dB(S,c2), dB(V,c0), dB(V,c1), dB(V,c2)]`.

mod bank;
mod image_io;

pub use bank::{resolve_image_path, sidecar_path, ClassicalBank, ImageDescriptor};
pub use image_io::{load_rgb, read_raw_rgb, write_raw_rgb};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::dataset::ClassId;
use crate::error::{Error, Result};
use crate::NUM_CLASSES;

pub const CLASSICAL_DIM: usize = 14;
pub const CLASSICAL_ENCODER_NAME: &str = "classical-14";
/// Clamp on the Bhattacharyya coefficient before taking the log.
pub const BC_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassicalConfig {
    pub glcm_levels: usize,
    pub glcm_distance: usize,
    pub histogram_bins: usize,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        ClassicalConfig {
            glcm_levels: 32,
            glcm_distance: 1,
            histogram_bins: 32,
        }
    }
}

impl ClassicalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.glcm_levels == 0 || self.glcm_distance == 0 || self.histogram_bins == 0 {
            return Err(Error::InvalidArgument(
                "GLCM levels, GLCM distance and histogram bins must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-pixel hue in degrees [0, 360), saturation and value in [0, 1],
/// stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HsvImage {
    pub width: usize,
    pub height: usize,
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

/// Hexcone conversion.
pub fn rgb_to_hsv(image: &RgbImage) -> Result<HsvImage> {
    let (width, height) = (image.width() as usize, image.height() as usize);
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    let n = width * height;
    let (mut h, mut s, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in image.pixels() {
        let [r, g, b] = px.0.map(f64::from);
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        let delta = max - min;
        let hue = if delta == 0.0 {
            0.0
        } else if max == r {
            60.0 * ((g - b) / delta).rem_euclid(6.0)
        } else if max == g {
            60.0 * ((b - r) / delta + 2.0)
        } else {
            60.0 * ((r - g) / delta + 4.0)
        };
        h.push(if hue >= 360.0 { 0.0 } else { hue });
        s.push(if max == 0.0 { 0.0 } else { delta / max });
        v.push(max / 255.0);
    }
    Ok(HsvImage {
        width,
        height,
        h,
        s,
        v,
    })
}

/// Two-pass mean and population std on values shifted by the first one, so a
/// constant channel yields exactly its value and 0.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let x0 = values[0];
    let md = values.iter().map(|x| x - x0).sum::<f64>() / n;
    let var = values.iter().map(|x| (x - x0 - md).powi(2)).sum::<f64>() / n;
    (x0 + md, var.sqrt())
}

/// (mean_S, std_S, mean_V, std_V) with population standard deviations.
pub fn hsv_stats(img: &HsvImage) -> [f64; 4] {
    let (ms, ss) = mean_std(&img.s);
    let (mv, sv) = mean_std(&img.v);
    [ms, ss, mv, sv]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    Deg0,
    Deg90,
}

impl Orientation {
    /// Pixel offset (dx, dy) at the given distance.
    fn offset(self, distance: usize) -> (usize, usize) {
        match self {
            Orientation::Deg0 => (distance, 0),
            Orientation::Deg90 => (0, distance),
        }
    }
}

/// Quantises a value in [0, 1] to one of `levels` uniform levels.
#[inline]
pub fn quantize(value: f64, levels: usize) -> usize {
    ((value * levels as f64).floor() as usize).min(levels - 1)
}

/// Normalised symmetric co-occurrence matrix of the quantised V channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Glcm {
    pub levels: usize,
    pub distance: usize,
    pub orientation: Orientation,
    /// levels × levels, row-major, summing to 1.
    pub p: Vec<f64>,
}

impl Glcm {
    pub fn new(img: &HsvImage, orientation: Orientation, levels: usize, distance: usize) -> Result<Self> {
        if levels == 0 || distance == 0 {
            return Err(Error::InvalidArgument("GLCM needs levels >= 1 and distance >= 1".into()));
        }
        let (dx, dy) = orientation.offset(distance);
        if dx >= img.width || dy >= img.height {
            return Err(Error::InvalidArgument(format!(
                "{}x{} image has no pixel pairs at distance {distance}",
                img.width, img.height
            )));
        }
        let q: Vec<usize> = img.v.iter().map(|&v| quantize(v, levels)).collect();
        let mut counts = vec![0u64; levels * levels];
        for y in 0..img.height - dy {
            for x in 0..img.width - dx {
                let a = q[y * img.width + x];
                let b = q[(y + dy) * img.width + x + dx];
                counts[a * levels + b] += 1;
                counts[b * levels + a] += 1;
            }
        }
        let total = counts.iter().sum::<u64>() as f64;
        Ok(Glcm {
            levels,
            distance,
            orientation,
            p: counts.iter().map(|&c| c as f64 / total).collect(),
        })
    }

    /// Σ P(i,j) / (1 + |i − j|).
    pub fn homogeneity(&self) -> f64 {
        let l = self.levels;
        (0..l * l)
            .map(|ij| self.p[ij] / (1.0 + (ij / l).abs_diff(ij % l) as f64))
            .sum()
    }

    /// −Σ P·ln P over nonzero cells.
    pub fn entropy(&self) -> f64 {
        0.0 - self.p.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}

/// (homogeneity, entropy) of the V-channel GLCM.
pub fn glcm_features(img: &HsvImage, orientation: Orientation, levels: usize, distance: usize) -> Result<(f64, f64)> {
    let g = Glcm::new(img, orientation, levels, distance)?;
    Ok((g.homogeneity(), g.entropy()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    mass: Vec<f64>,
}

impl Histogram {
    /// Accepts any nonnegative masses with a positive total and normalises.
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
        }
        if mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidArgument("histogram masses must be finite and >= 0".into()));
        }
        let total: f64 = mass.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument("histogram has zero total mass".into()));
        }
        Ok(Histogram {
            mass: mass.into_iter().map(|m| m / total).collect(),
        })
    }

    /// Uniform bins over [0, 1].
    pub fn of_unit_values(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
        }
        let mut counts = vec![0.0; bins];
        for &v in values {
            counts[quantize(v, bins)] += 1.0;
        }
        Histogram::new(counts)
    }

    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }
}

/// `−ln(max(Σ √(h1·h2), ε))`.
pub fn bhattacharyya_distance(h1: &Histogram, h2: &Histogram) -> Result<f64> {
    if h1.bins() != h2.bins() {
        return Err(Error::DimensionMismatch {
            expected: h1.bins(),
            got: h2.bins(),
        });
    }
    let bc: f64 = h1.mass.iter().zip(&h2.mass).map(|(a, b)| (a * b).sqrt()).sum();
    // BC can exceed 1 by rounding; the distance is clamped at 0
    Ok((-bc.max(BC_EPSILON).ln()).max(0.0))
}

/// S and V histograms of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelHistograms {
    pub s: Histogram,
    pub v: Histogram,
}

impl ChannelHistograms {
    pub fn of(img: &HsvImage, bins: usize) -> Result<Self> {
        Ok(ChannelHistograms {
            s: Histogram::of_unit_values(&img.s, bins)?,
            v: Histogram::of_unit_values(&img.v, bins)?,
        })
    }
}

/// One pair of reference histograms per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReferences {
    pub per_class: Vec<ChannelHistograms>,
}

impl ClassReferences {
    /// Bin-wise mean of each class's member histograms, renormalised.
    pub fn from_histograms<'a>(items: impl IntoIterator<Item = (&'a ChannelHistograms, ClassId)>) -> Result<Self> {
        let mut sums: Vec<Option<(Vec<f64>, Vec<f64>)>> = vec![None; NUM_CLASSES];
        for (h, class) in items {
            let entry = sums[class.index()].get_or_insert_with(|| (vec![0.0; h.s.bins()], vec![0.0; h.v.bins()]));
            if entry.0.len() != h.s.bins() || entry.1.len() != h.v.bins() {
                return Err(Error::DimensionMismatch {
                    expected: entry.0.len(),
                    got: h.s.bins(),
                });
            }
            entry.0.iter_mut().zip(h.s.mass()).for_each(|(a, b)| *a += b);
            entry.1.iter_mut().zip(h.v.mass()).for_each(|(a, b)| *a += b);
        }
        let per_class = sums
            .into_iter()
            .enumerate()
            .map(|(k, s)| {
                let (s, v) = s.ok_or_else(|| Error::Data(format!("class {k} has no reference images")))?;
                Ok(ChannelHistograms {
                    s: Histogram::new(s)?,
                    v: Histogram::new(v)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassReferences { per_class })
    }

    pub fn bins(&self) -> usize {
        self.per_class[0].s.bins()
    }
}

/// References built directly from labelled images.
pub fn class_reference_histograms(images: &[(RgbImage, ClassId)], bins: usize) -> Result<ClassReferences> {
    let hists = images
        .iter()
        .map(|(img, _)| ChannelHistograms::of(&rgb_to_hsv(img)?, bins))
        .collect::<Result<Vec<_>>>()?;
    ClassReferences::from_histograms(hists.iter().zip(images.iter().map(|(_, c)| *c)))
}

/// The 14-vector of one image against the given references.
pub fn extract_classical(
    image: &RgbImage,
    refs: &ClassReferences,
    cfg: &ClassicalConfig,
) -> Result<[f64; CLASSICAL_DIM]> {
    ImageDescriptor::compute(image, cfg)?.features(refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn solid(w: u32, h: u32, px: [u8; 3]) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb(px))
    }

    fn single(px: [u8; 3]) -> (f64, f64, f64) {
        let hsv = rgb_to_hsv(&solid(1, 1, px)).unwrap();
        (hsv.h[0], hsv.s[0], hsv.v[0])
    }

    #[test]
    fn hexcone_cases() {
        assert_eq!(single([255, 0, 0]), (0.0, 1.0, 1.0));
        assert_eq!(single([0, 0, 255]), (240.0, 1.0, 1.0));
        let (_, s, v) = single([128, 128, 128]);
        assert_eq!((s, v), (0.0, 128.0 / 255.0));
        assert_eq!(single([0, 0, 0]), (0.0, 0.0, 0.0));
        let (h, _, _) = single([255, 0, 1]);
        assert!(h > 359.0 && h < 360.0);
        assert!(rgb_to_hsv(&RgbImage::new(0, 3)).is_err());
    }

    #[test]
    fn stats_cases() {
        let img = HsvImage {
            width: 2,
            height: 1,
            h: vec![0.0; 2],
            s: vec![0.0, 1.0],
            v: vec![0.25, 0.25],
        };
        assert_eq!(hsv_stats(&img), [0.5, 0.5, 0.25, 0.0]);
        let black = rgb_to_hsv(&solid(3, 2, [0, 0, 0])).unwrap();
        assert_eq!(hsv_stats(&black), [0.0; 4]);
    }

    fn checkerboard(n: u32) -> RgbImage {
        RgbImage::from_fn(n, n, |x, y| if (x + y) % 2 == 0 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) })
    }

    #[test]
    fn glcm_cases() {
        let c = rgb_to_hsv(&solid(5, 4, [10, 200, 30])).unwrap();
        for o in [Orientation::Deg0, Orientation::Deg90] {
            assert_eq!(glcm_features(&c, o, 32, 1).unwrap(), (1.0, 0.0));
        }
        let cb = rgb_to_hsv(&checkerboard(6)).unwrap();
        for o in [Orientation::Deg0, Orientation::Deg90] {
            let (h, e) = glcm_features(&cb, o, 2, 1).unwrap();
            assert!((h - 0.5).abs() < 1e-9);
            assert!((e - std::f64::consts::LN_2).abs() < 1e-9);
        }
        let one = rgb_to_hsv(&solid(1, 1, [1, 2, 3])).unwrap();
        assert!(glcm_features(&one, Orientation::Deg0, 32, 1).is_err());
        assert!(glcm_features(&one, Orientation::Deg90, 32, 1).is_err());
    }

    #[test]
    fn bhattacharyya_cases() {
        let h = |v: &[f64]| Histogram::new(v.to_vec()).unwrap();
        assert_eq!(bhattacharyya_distance(&h(&[0.2, 0.8]), &h(&[0.2, 0.8])).unwrap(), 0.0);
        let d = bhattacharyya_distance(&h(&[0.5, 0.5]), &h(&[0.25, 0.75])).unwrap();
        let bc = 0.125f64.sqrt() + 0.375f64.sqrt();
        assert!((bc - 0.96593).abs() < 1e-5);
        assert!((d - 0.03466).abs() < 1e-5);
        let d = bhattacharyya_distance(&h(&[1.0, 0.0]), &h(&[0.0, 1.0])).unwrap();
        assert!((d - 27.631).abs() < 1e-3);
        assert!(bhattacharyya_distance(&h(&[1.0]), &h(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn references_are_bin_wise_means() {
        let mk = |s: &[f64]| ChannelHistograms {
            s: Histogram::new(s.to_vec()).unwrap(),
            v: Histogram::new(vec![1.0, 0.0]).unwrap(),
        };
        let items = [mk(&[1.0, 0.0]), mk(&[1.0, 0.0]), mk(&[0.0, 1.0]), mk(&[0.3, 0.7])];
        let labels = [ClassId::EYE_CLEAN, ClassId::MODERATE, ClassId::MODERATE, ClassId::HEAVY];
        let refs = ClassReferences::from_histograms(items.iter().zip(labels)).unwrap();
        assert_eq!(refs.per_class[1].s.mass(), &[0.5, 0.5]);
        assert_eq!(refs.per_class[0].s.mass(), &[1.0, 0.0]);
        let missing = ClassReferences::from_histograms(items.iter().zip(labels).take(3));
        assert!(missing.is_err());
    }

    #[test]
    fn constant_image_features() {
        let imgs: Vec<(RgbImage, ClassId)> = ClassId::all()
            .map(|c| (solid(4, 4, [40 * (c.index() as u8 + 1), 90, 120]), c))
            .collect();
        let cfg = ClassicalConfig::default();
        let refs = class_reference_histograms(&imgs, cfg.histogram_bins).unwrap();
        let f = extract_classical(&imgs[1].0, &refs, &cfg).unwrap();
        assert_eq!(f.len(), CLASSICAL_DIM);
        assert_eq!([f[1], f[3], f[5], f[7]], [0.0; 4]);
        assert_eq!([f[4], f[6]], [1.0; 2]);
        assert_eq!(f[9], 0.0);
        assert_eq!(f[12], 0.0);
    }
}
