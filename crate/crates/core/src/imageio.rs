//! Loading aligned RGB-T pairs, ground truth and dataset manifests; colour
//! conversion; saliency map output.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Plane;

/// Smallest accepted image side, in pixels.
pub const MIN_SIDE: usize = 16;

/// An RGB image and a thermal image of identical size, already registered.
#[derive(Debug, Clone)]
pub struct AlignedImagePair {
    width: usize,
    height: usize,
    rgb: Vec<[u8; 3]>,
    thermal: Plane,
}

impl AlignedImagePair {
    /// `rgb` is row-major; `thermal` must have values in `[0, 1]`.
    pub fn new(width: usize, height: usize, rgb: Vec<[u8; 3]>, thermal: Plane) -> Result<Self> {
        if thermal.width() != width || thermal.height() != height {
            return Err(Error::Alignment {
                rgb_width: width,
                rgb_height: height,
                thermal_width: thermal.width(),
                thermal_height: thermal.height(),
            });
        }
        if rgb.len() != width * height {
            return Err(Error::Dimension(format!(
                "rgb buffer has {} pixels, expected {}",
                rgb.len(),
                width * height
            )));
        }
        if width < MIN_SIDE || height < MIN_SIDE {
            return Err(Error::Dimension(format!(
                "image {width}x{height} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if thermal.data().iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Parameter(
                "thermal values must lie in [0, 1]".to_string(),
            ));
        }
        Ok(Self {
            width,
            height,
            rgb,
            thermal,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgb(&self) -> &[[u8; 3]] {
        &self.rgb
    }

    pub fn thermal(&self) -> &Plane {
        &self.thermal
    }

    /// Mirror both modalities left to right.
    pub fn flip_horizontal(&self) -> Self {
        let mut rgb = Vec::with_capacity(self.rgb.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                rgb.push(self.rgb[y * self.width + x]);
            }
        }
        Self {
            width: self.width,
            height: self.height,
            rgb,
            thermal: self.thermal.flip_horizontal(),
        }
    }
}

/// Binary pixel-level annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl GroundTruth {
    pub fn new(width: usize, height: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != width * height {
            return Err(Error::Dimension(format!(
                "mask has {} pixels, expected {}",
                mask.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            mask,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut mask = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                mask.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            mask,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn salient_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Fraction of pixels marked salient.
    pub fn density(&self) -> f64 {
        self.salient_count() as f64 / self.mask.len().max(1) as f64
    }

    /// Complement mask.
    pub fn inverted(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            mask: self.mask.iter().map(|m| !m).collect(),
        }
    }
}

/// Annotated challenge attribute of a dataset image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Challenge {
    /// Big salient object.
    #[serde(rename = "BSO")]
    Bso,
    /// Small salient object.
    #[serde(rename = "SSO")]
    Sso,
    /// Multiple salient objects.
    #[serde(rename = "MSO")]
    Mso,
    /// Low illumination.
    #[serde(rename = "LI")]
    Li,
    /// Bad weather.
    #[serde(rename = "BW")]
    Bw,
    /// Center bias.
    #[serde(rename = "CB")]
    Cb,
    /// Cross image boundary.
    #[serde(rename = "CIB")]
    Cib,
    /// Similar appearance.
    #[serde(rename = "SA")]
    Sa,
    /// Thermal crossover.
    #[serde(rename = "TC")]
    Tc,
    /// Image clutter.
    #[serde(rename = "IC")]
    Ic,
    /// Out of focus.
    #[serde(rename = "OF")]
    Of,
}

impl Challenge {
    pub const ALL: [Challenge; 11] = [
        Challenge::Bso,
        Challenge::Sso,
        Challenge::Mso,
        Challenge::Li,
        Challenge::Bw,
        Challenge::Cb,
        Challenge::Cib,
        Challenge::Sa,
        Challenge::Tc,
        Challenge::Ic,
        Challenge::Of,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Challenge::Bso => "BSO",
            Challenge::Sso => "SSO",
            Challenge::Mso => "MSO",
            Challenge::Li => "LI",
            Challenge::Bw => "BW",
            Challenge::Cb => "CB",
            Challenge::Cib => "CIB",
            Challenge::Sa => "SA",
            Challenge::Tc => "TC",
            Challenge::Ic => "IC",
            Challenge::Of => "OF",
        }
    }
}

impl fmt::Display for Challenge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Challenge {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Challenge::ALL
            .iter()
            .copied()
            .find(|c| c.tag() == s)
            .ok_or_else(|| Error::UnknownChallenge(s.to_string()))
    }
}

/// One row of a dataset manifest, with paths resolved against the manifest
/// directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub id: String,
    pub rgb_path: PathBuf,
    pub thermal_path: PathBuf,
    pub gt_path: PathBuf,
    pub challenges: BTreeSet<Challenge>,
}

/// File name looked up when [`load_manifest`] is given a directory.
pub const MANIFEST_FILE: &str = "manifest.csv";

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn load_thermal(path: &Path) -> Result<Plane> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let channels_equal = |px: &[u16]| px[0] == px[1] && px[1] == px[2];
    let data: Vec<f64> = match &img {
        DynamicImage::ImageLuma8(b) => b.pixels().map(|p| p[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| p[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.pixels().map(|p| p[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(b) => b.pixels().map(|p| p[0] as f64 / 65535.0).collect(),
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            let b = img.to_rgb16();
            if !b.pixels().all(|p| channels_equal(&p.0)) {
                return Err(Error::ThermalChannels {
                    path: path.to_path_buf(),
                });
            }
            b.pixels().map(|p| p[0] as f64 / 65535.0).collect()
        }
        _ => {
            let b = img.to_rgb8();
            if !b
                .pixels()
                .all(|p| channels_equal(&[p[0] as u16, p[1] as u16, p[2] as u16]))
            {
                return Err(Error::ThermalChannels {
                    path: path.to_path_buf(),
                });
            }
            b.pixels().map(|p| p[0] as f64 / 255.0).collect()
        }
    };
    Plane::new(w, h, data)
}

/// Load an RGB image and a thermal image and verify they are the same size.
/// Thermal samples are divided by the format's maximum representable value.
pub fn load_pair(rgb_path: &Path, thermal_path: &Path) -> Result<AlignedImagePair> {
    let rgb_img = decode(rgb_path)?.to_rgb8();
    let thermal = load_thermal(thermal_path)?;
    let (w, h) = (rgb_img.width() as usize, rgb_img.height() as usize);
    let rgb = rgb_img.pixels().map(|p| p.0).collect();
    AlignedImagePair::new(w, h, rgb, thermal)
}

/// Load a ground-truth mask; pixels brighter than mid-grey are salient.
pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    let img = decode(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    GroundTruth::new(w, h, img.pixels().map(|p| p[0] >= 128).collect())
}

fn srgb_to_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

// D65 reference white.
const WHITE_X: f64 = 0.95047;
const WHITE_Y: f64 = 1.0;
const WHITE_Z: f64 = 1.08883;

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// CIE L*a*b* (D65) of one 8-bit sRGB pixel, unnormalised.
pub fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (fx, fy, fz) = (lab_f(x / WHITE_X), lab_f(y / WHITE_Y), lab_f(z / WHITE_Z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Convert the RGB modality to L*a*b* and min-max normalise each channel
/// over the image. Constant channels become all zeros.
pub fn rgb_to_lab(pair: &AlignedImagePair) -> [Plane; 3] {
    let (w, h) = (pair.width(), pair.height());
    let mut channels = [
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
    ];
    // 8-bit input has few distinct colours in practice; cache conversions.
    let mut cache: std::collections::HashMap<[u8; 3], [f64; 3]> = Default::default();
    for &px in pair.rgb() {
        let lab = *cache.entry(px).or_insert_with(|| srgb_to_lab(px));
        for c in 0..3 {
            channels[c].push(lab[c]);
        }
    }
    channels.map(|mut data| {
        crate::raster::min_max_normalize(&mut data);
        Plane::new(w, h, data).expect("channel sized from pair")
    })
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    id: String,
    rgb: String,
    thermal: String,
    gt: String,
    challenges: String,
}

fn parse_challenges(field: &str) -> Result<BTreeSet<Challenge>> {
    field
        .split(';')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(Challenge::from_str)
        .collect()
}

/// Read a dataset manifest. `root` may be the CSV file itself or a directory
/// containing `manifest.csv`. Records come back sorted by id.
pub fn load_manifest(root: &Path) -> Result<Vec<DatasetRecord>> {
    let file = if root.is_dir() {
        root.join(MANIFEST_FILE)
    } else {
        root.to_path_buf()
    };
    let base = file.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest_err = |message: String| Error::Manifest {
        path: file.clone(),
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&file)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(&file, io),
                _ => unreachable!(),
            },
            _ => Error::Csv(e),
        })?;
    let headers = reader.headers()?.clone();
    let expected = ["id", "rgb", "thermal", "gt", "challenges"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(manifest_err(format!(
            "expected header `{}`, found `{}`",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut records = Vec::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row?;
        if row.id.is_empty() {
            return Err(manifest_err("empty record id".to_string()));
        }
        let challenges = parse_challenges(&row.challenges)?;
        let resolve = |rel: &str| -> Result<PathBuf> {
            let p = base.join(rel);
            if p.is_file() {
                Ok(p)
            } else {
                Err(Error::MissingFile {
                    id: row.id.clone(),
                    path: p,
                })
            }
        };
        records.push(DatasetRecord {
            rgb_path: resolve(&row.rgb)?,
            thermal_path: resolve(&row.thermal)?,
            gt_path: resolve(&row.gt)?,
            id: row.id,
            challenges,
        });
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(dup) = records.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(manifest_err(format!("duplicate record id {:?}", dup[0].id)));
    }
    Ok(records)
}

/// Quantise a `[0, 1]` value to 8 bits, rounding half away from zero.
#[inline]
pub fn quantize(value: f64) -> u8 {
    (255.0 * value.clamp(0.0, 1.0)).round() as u8
}

/// Write a saliency plane as an 8-bit grayscale PNG.
pub fn write_saliency(values: &Plane, path: &Path) -> Result<()> {
    let img: GrayImage = ImageBuffer::from_fn(values.width() as u32, values.height() as u32, |x, y| {
        Luma([quantize(values.get(x as usize, y as usize))])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| match source {
            image::ImageError::IoError(io) => Error::io(path, io),
            source => Error::Image {
                path: path.to_path_buf(),
                source,
            },
        })
}

/// Read a grayscale saliency map back as values in `[0, 1]`.
pub fn read_saliency(path: &Path) -> Result<Plane> {
    let img = decode(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Plane::new(w, h, img.pixels().map(|p| p[0] as f64 / 255.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mid_gray_lightness_is_fifty() {
        // Reference: sRGB 119 linearises to ~0.1845, cbrt -> 0.5693, L* ~ 50.04.
        let [l, a, b] = srgb_to_lab([119, 119, 119]);
        assert!((l - 50.0).abs() < 0.5, "L* = {l}");
        assert!(a.abs() < 1e-3 && b.abs() < 1e-3);
    }

    #[test]
    fn white_and_black_extremes() {
        let [l, _, _] = srgb_to_lab([255, 255, 255]);
        assert!((l - 100.0).abs() < 1e-3);
        let [l, a, b] = srgb_to_lab([0, 0, 0]);
        assert!(l.abs() < 1e-12 && a.abs() < 1e-12 && b.abs() < 1e-12);
    }

    fn pair_from(rgb: Vec<[u8; 3]>, w: usize, h: usize) -> AlignedImagePair {
        AlignedImagePair::new(w, h, rgb, Plane::filled(w, h, 0.5)).unwrap()
    }

    #[test]
    fn white_pixel_normalises_to_one() {
        let mut rgb = vec![[0, 0, 0]; 16 * 16];
        rgb[5] = [255, 255, 255];
        let lab = rgb_to_lab(&pair_from(rgb, 16, 16));
        assert_eq!(lab[0].data()[5], 1.0);
        assert_eq!(lab[0].data()[0], 0.0);
    }

    #[test]
    fn constant_image_normalises_to_zero() {
        let lab = rgb_to_lab(&pair_from(vec![[10, 200, 30]; 256], 16, 16));
        for c in &lab {
            assert!(c.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn alignment_error_names_both_sizes() {
        let err = AlignedImagePair::new(20, 20, vec![[0; 3]; 400], Plane::filled(16, 18, 0.0))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("20x20") && msg.contains("16x18"), "{msg}");
    }

    #[test]
    fn tiny_images_rejected() {
        assert!(AlignedImagePair::new(8, 20, vec![[0; 3]; 160], Plane::filled(8, 20, 0.0)).is_err());
    }

    #[test]
    fn challenge_vocabulary() {
        for c in Challenge::ALL {
            assert_eq!(c.tag().parse::<Challenge>().unwrap(), c);
        }
        let err = "XYZ".parse::<Challenge>().unwrap_err();
        assert!(err.to_string().contains("XYZ"));
        assert_eq!(parse_challenges("").unwrap().len(), 0);
        assert_eq!(parse_challenges("LI; TC").unwrap().len(), 2);
    }

    #[test]
    fn quantize_rounds_half_away_from_zero() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.7), 255);
    }
}
