//! Nearest-template reference classifier over raw training rasters.
//!
//! Distance is the plain sum of squared intensity differences. Stimuli
//! rendered without antialiasing are two-valued, and for those the distance
//! reduces to set sizes plus one bitset intersection; other images use the
//! dense sum.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{DatasetError, DatasetManifest};
use crate::protocol::PredictionSet;
use crate::raster::{decode_png, CanvasConfig, GrayImage};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("cannot fit a template model on an empty manifest")]
    Empty,
    #[error("{id}: image is {got:?}, templates are {expected:?}")]
    DimensionMismatch {
        id: String,
        got: (u32, u32),
        expected: (u32, u32),
    },
    #[error("templates {first} (class {first_label}) and {second} (class {second_label}) are identical rasters")]
    AmbiguousTemplates {
        first: String,
        first_label: u8,
        second: String,
        second_label: u8,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl BaselineError {
    pub fn is_io(&self) -> bool {
        matches!(self, BaselineError::Dataset(e) if e.is_io())
    }
}

pub type Result<T, E = BaselineError> = std::result::Result<T, E>;

/// A two-valued image as `base` everywhere except `alt` on the set bits.
#[derive(Debug, Clone, PartialEq, Eq)]
struct BinaryRaster {
    base: u8,
    alt: u8,
    count: u64,
    bits: Vec<u64>,
}

impl BinaryRaster {
    fn from_image(img: &GrayImage) -> Option<Self> {
        let base = *img.pixels.first()?;
        let alt = img.pixels.iter().copied().find(|&v| v != base).unwrap_or(base);
        let mut bits = vec![0u64; img.pixels.len().div_ceil(64)];
        let mut count = 0;
        for (i, &v) in img.pixels.iter().enumerate() {
            if v == base {
                continue;
            }
            if v != alt {
                return None;
            }
            bits[i / 64] |= 1 << (i % 64);
            count += 1;
        }
        Some(Self { base, alt, count, bits })
    }

    fn distance(&self, other: &Self, n_pixels: u64) -> u64 {
        let shared: u64 = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| u64::from((a & b).count_ones()))
            .sum();
        let offset = i64::from(self.base) - i64::from(other.base);
        let da = i64::from(self.alt) - i64::from(self.base);
        let db = i64::from(other.alt) - i64::from(other.base);
        let (n, m, k, s) = (n_pixels as i64, self.count as i64, other.count as i64, shared as i64);
        let total = n * offset * offset + 2 * offset * (da * m - db * k) + da * da * m + db * db * k
            - 2 * da * db * s;
        total as u64
    }
}

fn dense_distance(a: &[u8], b: &[u8]) -> u64 {
    a.chunks(4096)
        .zip(b.chunks(4096))
        .map(|(ca, cb)| {
            ca.iter()
                .zip(cb)
                .map(|(&x, &y)| {
                    let d = i32::from(x) - i32::from(y);
                    (d * d) as u32
                })
                .map(u64::from)
                .sum::<u64>()
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct Template {
    pub image_id: String,
    pub class_label: u8,
    pub image: GrayImage,
    binary: Option<BinaryRaster>,
}

impl Template {
    fn distance(&self, image: &GrayImage, binary: Option<&BinaryRaster>) -> u64 {
        match (&self.binary, binary) {
            (Some(a), Some(b)) => a.distance(b, image.pixels.len() as u64),
            _ => dense_distance(&self.image.pixels, &image.pixels),
        }
    }
}

/// The best-matching template for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Match {
    pub class_label: u8,
    pub distance: u64,
    pub template_id: String,
}

#[derive(Debug, Clone)]
pub struct TemplateModel {
    templates: Vec<Template>,
    width: u32,
    height: u32,
    canvas: Option<CanvasConfig>,
}

impl TemplateModel {
    /// Stores every `(image_id, class_label, image)` verbatim.
    ///
    /// Fails if two templates with different labels are the same raster,
    /// since no nearest-neighbour rule could then classify both correctly.
    pub fn fit_images(items: Vec<(String, u8, GrayImage)>) -> Result<Self> {
        let (width, height) = match items.first() {
            Some((_, _, img)) => (img.width, img.height),
            None => return Err(BaselineError::Empty),
        };
        let mut seen: HashMap<&[u8], (&str, u8)> = HashMap::new();
        for (id, label, img) in &items {
            if (img.width, img.height) != (width, height) {
                return Err(BaselineError::DimensionMismatch {
                    id: id.clone(),
                    got: (img.width, img.height),
                    expected: (width, height),
                });
            }
            if let Some(&(first, first_label)) = seen.get(img.pixels.as_slice()) {
                if first_label != *label {
                    return Err(BaselineError::AmbiguousTemplates {
                        first: first.to_string(),
                        first_label,
                        second: id.clone(),
                        second_label: *label,
                    });
                }
            } else {
                seen.insert(&img.pixels, (id, *label));
            }
        }
        let templates = items
            .into_iter()
            .map(|(image_id, class_label, image)| Template {
                binary: BinaryRaster::from_image(&image),
                image_id,
                class_label,
                image,
            })
            .collect();
        Ok(Self {
            templates,
            width,
            height,
            canvas: None,
        })
    }

    /// Loads and stores every image of a training manifest.
    pub fn fit(manifest: &DatasetManifest, root: &Path) -> Result<Self> {
        if manifest.records.is_empty() {
            return Err(BaselineError::Empty);
        }
        let items = manifest
            .records
            .par_iter()
            .map(|r| Ok((r.image_id.clone(), r.class_label, load_image(root, &r.relative_path)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut model = Self::fit_images(items)?;
        model.canvas = Some(manifest.config.canvas);
        Ok(model)
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    pub fn canvas(&self) -> Option<&CanvasConfig> {
        self.canvas.as_ref()
    }

    /// Number of distinct rasters among the templates.
    pub fn distinct_rasters(&self) -> usize {
        let mut set: Vec<&[u8]> = self.templates.iter().map(|t| t.image.pixels.as_slice()).collect();
        set.sort_unstable();
        set.dedup();
        set.len()
    }

    /// Nearest template; ties go to the smaller class label, then the
    /// lexicographically smaller template id.
    pub fn nearest(&self, image: &GrayImage) -> Result<Match> {
        if (image.width, image.height) != (self.width, self.height) {
            return Err(BaselineError::DimensionMismatch {
                id: "<query>".into(),
                got: (image.width, image.height),
                expected: (self.width, self.height),
            });
        }
        let binary = BinaryRaster::from_image(image);
        let best = self
            .templates
            .iter()
            .map(|t| (t.distance(image, binary.as_ref()), t.class_label, t.image_id.as_str()))
            .min()
            .expect("fitted model has templates");
        Ok(Match {
            distance: best.0,
            class_label: best.1,
            template_id: best.2.to_string(),
        })
    }

    pub fn predict(&self, image: &GrayImage) -> Result<u8> {
        Ok(self.nearest(image)?.class_label)
    }

    /// Predicts every record of a split, reading images from `root`.
    pub fn predict_split(&self, model_name: &str, manifest: &DatasetManifest, root: &Path) -> Result<PredictionSet> {
        let pairs = manifest
            .records
            .par_iter()
            .map(|r| {
                let img = load_image(root, &r.relative_path)?;
                let label = self.predict(&img).map_err(|e| match e {
                    BaselineError::DimensionMismatch { got, expected, .. } => BaselineError::DimensionMismatch {
                        id: r.image_id.clone(),
                        got,
                        expected,
                    },
                    other => other,
                })?;
                Ok((r.image_id.clone(), i64::from(label)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PredictionSet::from_pairs(model_name, pairs).expect("manifest ids are unique and labels in range"))
    }
}

fn load_image(root: &Path, relative: &str) -> Result<GrayImage> {
    let path = root.join(relative);
    let bytes = fs::read(&path).map_err(|e| DatasetError::io(&path, e))?;
    decode_png(&bytes).map_err(|source| BaselineError::Dataset(DatasetError::Image { path, source }))
}
