//! Deterministic stroke rasterization and lossless PNG encoding.
//!
//! A pixel belongs to a stroke when its sample point lies within half the
//! stroke width of the segment and projects onto the segment itself (butt
//! caps). Strokes are combined by set union, so the result does not depend
//! on drawing order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Background, GeometryError, Point2, PolygonSpec, Segment};
use crate::scalar::Scalar;

/// Sub-samples per axis when antialiasing.
const AA_GRID: u32 = 4;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("invalid canvas: {0}")]
    InvalidCanvas(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("png encoding failed: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decoding failed: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported png layout: {0}")]
    Unsupported(String),
}

/// Canvas and stroke settings shared by every stimulus of a dataset.
///
/// `light_value` is the background on [`Background::Light`] canvases and the
/// stroke colour on [`Background::Dark`] ones; `dark_value` the reverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanvasConfig {
    pub width: u32,
    pub height: u32,
    pub light_value: u8,
    pub dark_value: u8,
    pub stroke_width_px: f64,
    pub antialias: bool,
}

impl Default for CanvasConfig {
    fn default() -> Self {
        Self {
            width: 224,
            height: 224,
            light_value: 255,
            dark_value: 0,
            stroke_width_px: 2.0,
            antialias: false,
        }
    }
}

impl CanvasConfig {
    pub fn validate(&self) -> Result<(), RasterError> {
        if self.width == 0 || self.height == 0 {
            return Err(RasterError::InvalidCanvas(format!(
                "size {}x{} must be positive",
                self.width, self.height
            )));
        }
        if self.light_value == self.dark_value {
            return Err(RasterError::InvalidCanvas(
                "background and foreground intensities coincide".into(),
            ));
        }
        if self.stroke_width_px.is_nan() || self.stroke_width_px < 1.0 {
            return Err(RasterError::InvalidCanvas(format!(
                "stroke width {} below 1 px",
                self.stroke_width_px
            )));
        }
        Ok(())
    }

    /// `(background, foreground)` intensities for a background polarity.
    pub fn colors(&self, background: Background) -> (u8, u8) {
        match background {
            Background::Light => (self.light_value, self.dark_value),
            Background::Dark => (self.dark_value, self.light_value),
        }
    }
}

/// Row-major 8-bit single-channel image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn corners(&self) -> [u8; 4] {
        let (w, h) = (self.width - 1, self.height - 1);
        [self.get(0, 0), self.get(w, 0), self.get(0, h), self.get(w, h)]
    }
}

/// A rendered stimulus together with the intensities it was drawn with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StimulusImage {
    pub image: GrayImage,
    pub background_value: u8,
    pub foreground_value: u8,
}

/// Number of pixels exactly equal to the foreground intensity.
pub fn stroke_pixel_count(img: &StimulusImage) -> usize {
    img.image
        .pixels
        .iter()
        .filter(|&&v| v == img.foreground_value)
        .count()
}

struct Stroke<T> {
    origin: Point2<T>,
    dir: Point2<T>,
    length: T,
    half_width: T,
}

impl<T: Scalar> Stroke<T> {
    fn new(seg: &Segment<T>, width: T) -> Self {
        let length = seg.length();
        Self {
            origin: seg.p0(),
            dir: (seg.p1() - seg.p0()) * length.recip(),
            length,
            half_width: width / T::lit(2.0),
        }
    }

    #[inline]
    fn covers(&self, q: Point2<T>) -> bool {
        let d = q - self.origin;
        let t = d.dot(self.dir);
        t >= T::zero() && t <= self.length && d.cross(self.dir).abs() <= self.half_width
    }

    /// Inclusive pixel range whose cells intersect the stroke's bounding box.
    fn pixel_bounds(&self, width: u32, height: u32) -> Option<(u32, u32, u32, u32)> {
        let end = self.origin + self.dir * self.length;
        let lo_x = self.origin.x.min(end.x) - self.half_width;
        let hi_x = self.origin.x.max(end.x) + self.half_width;
        let lo_y = self.origin.y.min(end.y) - self.half_width;
        let hi_y = self.origin.y.max(end.y) + self.half_width;
        let clamp = |v: T, max: u32| -> i64 {
            (v.floor().as_f64() as i64).clamp(0, i64::from(max) - 1)
        };
        if hi_x < T::zero() || hi_y < T::zero() {
            return None;
        }
        Some((
            clamp(lo_x, width) as u32,
            clamp(hi_x, width) as u32,
            clamp(lo_y, height) as u32,
            clamp(hi_y, height) as u32,
        ))
    }
}

/// Rasterizes the visible contour of `spec`.
///
/// The stroke width comes from the spec; `cfg` supplies canvas size,
/// intensities and the antialias switch.
pub fn render<T: Scalar>(spec: &PolygonSpec<T>, cfg: &CanvasConfig) -> Result<StimulusImage, RasterError> {
    cfg.validate()?;
    spec.check_fits(cfg.width, cfg.height)?;
    let segments = spec.segments()?;
    let (bg, fg) = cfg.colors(spec.background);

    let grid = if cfg.antialias { AA_GRID } else { 1 };
    let offsets: Vec<T> = (0..grid)
        .map(|s| T::lit((f64::from(s) + 0.5) / f64::from(grid)))
        .collect();
    let full = (1u32 << (grid * grid)) - 1;

    // One bit per sub-sample; union over strokes is a bitwise OR.
    let mut coverage = vec![0u16; cfg.width as usize * cfg.height as usize];
    for seg in &segments {
        let stroke = Stroke::new(seg, spec.stroke_width_px);
        let Some((x0, x1, y0, y1)) = stroke.pixel_bounds(cfg.width, cfg.height) else {
            continue;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                let cell = &mut coverage[y as usize * cfg.width as usize + x as usize];
                if u32::from(*cell) == full {
                    continue;
                }
                let (fx, fy) = (T::lit(f64::from(x)), T::lit(f64::from(y)));
                let mut bit = 0;
                for oy in &offsets {
                    for ox in &offsets {
                        if stroke.covers(Point2::new(fx + *ox, fy + *oy)) {
                            *cell |= 1 << bit;
                        }
                        bit += 1;
                    }
                }
            }
        }
    }

    let samples = grid * grid;
    let pixels = coverage
        .into_iter()
        .map(|bits| {
            let hit = bits.count_ones();
            if hit == 0 {
                bg
            } else if hit == samples {
                fg
            } else {
                let mixed = u32::from(bg) * (samples - hit) + u32::from(fg) * hit;
                ((mixed + samples / 2) / samples) as u8
            }
        })
        .collect();

    Ok(StimulusImage {
        image: GrayImage {
            width: cfg.width,
            height: cfg.height,
            pixels,
        },
        background_value: bg,
        foreground_value: fg,
    })
}

/// Encodes an 8-bit grayscale PNG with fixed encoder settings and no
/// ancillary chunks, so identical images give identical bytes.
pub fn encode_png(img: &GrayImage) -> Result<Vec<u8>, RasterError> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width, img.height);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_compression(png::Compression::Balanced);
        encoder.set_filter(png::Filter::Up);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(&img.pixels)?;
        writer.finish()?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<GrayImage, RasterError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Grayscale || depth != png::BitDepth::Eight {
        return Err(RasterError::Unsupported(format!("{color:?} at {depth:?}")));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| RasterError::Unsupported("image too large".into()))?;
    let mut pixels = vec![0; size];
    let info = reader.next_frame(&mut pixels)?;
    pixels.truncate(info.buffer_size());
    Ok(GrayImage {
        width: info.width,
        height: info.height,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::REMOVAL_LEVELS;

    fn spec(n: u32, removal: u8, background: Background) -> PolygonSpec<f64> {
        PolygonSpec {
            n_sides: n,
            theta_global_deg: 0.0,
            background,
            center: Point2::new(112.0, 112.0),
            circumradius_px: 80.0,
            removal_pct: removal,
            stroke_width_px: 2.0,
        }
    }

    fn count(n: u32, removal: u8) -> usize {
        stroke_pixel_count(&render(&spec(n, removal, Background::Light), &CanvasConfig::default()).unwrap())
    }

    /// Brute-force oracle: test every pixel center against the segment
    /// directly, with no bounding-box culling.
    fn brute_force_count(a: Point2<f64>, b: Point2<f64>, width: f64, size: u32) -> usize {
        let len = a.distance(b);
        let dir = (b - a) * (1.0 / len);
        let mut hits = 0;
        for y in 0..size {
            for x in 0..size {
                let q = Point2::new(f64::from(x) + 0.5, f64::from(y) + 0.5) - a;
                let t = q.dot(dir);
                if (0.0..=len).contains(&t) && q.cross(dir).abs() <= width / 2.0 {
                    hits += 1;
                }
            }
        }
        hits
    }

    #[test]
    fn blank_canvas_has_no_strokes() {
        let img = StimulusImage {
            image: GrayImage::filled(224, 224, 255),
            background_value: 255,
            foreground_value: 0,
        };
        assert_eq!(stroke_pixel_count(&img), 0);
    }

    #[test]
    fn horizontal_segment_pixel_count() {
        let a = Point2::new(60.0, 32.0);
        let b = Point2::new(160.0, 32.0);
        let oracle = brute_force_count(a, b, 2.0, 224);
        assert!((196..=204).contains(&oracle), "oracle {oracle}");

        let seg = Segment::new(a, b).unwrap();
        let stroke = Stroke::new(&seg, 2.0);
        let (x0, x1, y0, y1) = stroke.pixel_bounds(224, 224).unwrap();
        let mut got = 0;
        for y in y0..=y1 {
            for x in x0..=x1 {
                if stroke.covers(Point2::new(f64::from(x) + 0.5, f64::from(y) + 0.5)) {
                    got += 1;
                }
            }
        }
        assert_eq!(got, oracle);
    }

    #[test]
    fn half_removal_halves_pixels() {
        for n in 3..=12 {
            let ratio = count(n, 50) as f64 / count(n, 0) as f64;
            assert!((ratio - 0.5).abs() <= 0.08, "n={n} ratio={ratio}");
        }
    }

    #[test]
    fn triangle_more_removal_fewer_pixels() {
        assert!(count(3, 90) < count(3, 80));
    }

    #[test]
    fn pixel_count_strictly_decreasing() {
        for n in 3..=12 {
            let counts: Vec<usize> = REMOVAL_LEVELS.iter().map(|&p| count(n, p)).collect();
            assert!(counts.windows(2).all(|w| w[1] < w[0]), "n={n}: {counts:?}");
        }
    }

    #[test]
    fn two_valued_without_antialias() {
        let img = render(&spec(7, 30, Background::Dark), &CanvasConfig::default()).unwrap();
        assert!(img.image.pixels.iter().all(|&v| v == 0 || v == 255));
        assert_eq!(img.background_value, 0);
        assert_eq!(img.image.corners(), [0; 4]);
        let img = render(&spec(7, 30, Background::Light), &CanvasConfig::default()).unwrap();
        assert_eq!(img.image.corners(), [255; 4]);
    }

    #[test]
    fn light_and_dark_are_inverses() {
        for n in [3, 8, 12] {
            let light = render(&spec(n, 40, Background::Light), &CanvasConfig::default()).unwrap();
            let dark = render(&spec(n, 40, Background::Dark), &CanvasConfig::default()).unwrap();
            assert!(light
                .image
                .pixels
                .iter()
                .zip(&dark.image.pixels)
                .all(|(l, d)| *l == 255 - *d));
        }
    }

    #[test]
    fn render_is_deterministic() {
        let s = spec(9, 20, Background::Light);
        let a = render(&s, &CanvasConfig::default()).unwrap();
        let b = render(&s, &CanvasConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn render_in_f32_matches_f64_closely() {
        let s = spec(5, 30, Background::Light);
        let s32 = PolygonSpec {
            n_sides: 5,
            theta_global_deg: 0.0f32,
            background: Background::Light,
            center: Point2::new(112.0, 112.0),
            circumradius_px: 80.0,
            removal_pct: 30,
            stroke_width_px: 2.0,
        };
        let a = stroke_pixel_count(&render(&s, &CanvasConfig::default()).unwrap()) as i64;
        let b = stroke_pixel_count(&render(&s32, &CanvasConfig::default()).unwrap()) as i64;
        assert!((a - b).abs() <= 4, "{a} vs {b}");
    }

    #[test]
    fn antialias_produces_intermediate_values() {
        let cfg = CanvasConfig {
            antialias: true,
            ..CanvasConfig::default()
        };
        let img = render(&spec(5, 0, Background::Light), &cfg).unwrap();
        assert!(img.image.pixels.iter().any(|&v| v != 0 && v != 255));
        assert_eq!(img.image.corners(), [255; 4]);
    }

    #[test]
    fn clipping_polygon_is_rejected() {
        let mut s = spec(4, 0, Background::Light);
        s.center = Point2::new(50.0, 112.0);
        assert!(matches!(
            render(&s, &CanvasConfig::default()),
            Err(RasterError::Geometry(GeometryError::Clipped { .. }))
        ));
    }

    #[test]
    fn invalid_canvas_is_rejected() {
        let cfg = CanvasConfig {
            light_value: 10,
            dark_value: 10,
            ..CanvasConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(RasterError::InvalidCanvas(_))));
        let cfg = CanvasConfig {
            width: 0,
            ..CanvasConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn png_round_trip_and_stability() {
        let img = render(&spec(6, 60, Background::Dark), &CanvasConfig::default()).unwrap();
        let bytes = encode_png(&img.image).unwrap();
        assert_eq!(bytes, encode_png(&img.image).unwrap());
        assert_eq!(decode_png(&bytes).unwrap(), img.image);
    }

    #[test]
    fn blank_png_round_trip() {
        let blank = GrayImage::filled(224, 224, 255);
        let back = decode_png(&encode_png(&blank).unwrap()).unwrap();
        assert_eq!((back.width, back.height), (224, 224));
        assert!(back.pixels.iter().all(|&v| v == 255));
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(decode_png(b"not a png").is_err());
    }
}
