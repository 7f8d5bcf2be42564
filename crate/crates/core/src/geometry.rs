//! Continuous-plane construction of regular polygons and their visible
//! contour fragments.
//!
//! Coordinates are canvas pixels with x to the right and y down. Angles stay
//! in degrees everywhere and are converted to radians only at the point of
//! trigonometric evaluation.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub const MIN_SIDES: u32 = 3;
pub const MAX_SIDES: u32 = 12;

/// Allowed per-side removal percentages.
pub const REMOVAL_LEVELS: [u8; 10] = [0, 10, 20, 30, 40, 50, 60, 70, 80, 90];

/// Number of rotations per side count.
pub const ROTATION_STEPS: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("side count {0} outside {MIN_SIDES}..={MAX_SIDES}")]
    SidesOutOfRange(u32),
    #[error("circumradius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("stroke width must be at least 1 px, got {0}")]
    InvalidStroke(f64),
    #[error("removal percentage {0} not one of 0,10,..,90")]
    InvalidRemoval(u8),
    #[error("degenerate polygon: {0}")]
    Degenerate(String),
    #[error(
        "polygon with center ({cx}, {cy}) and extent {extent} px does not fit a {width}x{height} canvas"
    )]
    Clipped {
        cx: f64,
        cy: f64,
        extent: f64,
        width: u32,
        height: u32,
    },
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

pub fn check_sides(n: u32) -> Result<()> {
    if (MIN_SIDES..=MAX_SIDES).contains(&n) {
        Ok(())
    } else {
        Err(GeometryError::SidesOutOfRange(n))
    }
}

pub fn check_removal(pct: u8) -> Result<()> {
    if REMOVAL_LEVELS.contains(&pct) {
        Ok(())
    } else {
        Err(GeometryError::InvalidRemoval(pct))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T> Point2<T> {
    pub const fn new(x: T, y: T) -> Self {
        Self { x, y }
    }
}

impl<T: Scalar> Point2<T> {
    pub fn dot(self, other: Self) -> T {
        self.x * other.x + self.y * other.y
    }

    /// z component of the 3D cross product.
    pub fn cross(self, other: Self) -> T {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> T {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Self) -> T {
        (other - self).norm()
    }
}

impl<T: Scalar> Add for Point2<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl<T: Scalar> Sub for Point2<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl<T: Scalar> Mul<T> for Point2<T> {
    type Output = Self;
    fn mul(self, k: T) -> Self {
        Self::new(self.x * k, self.y * k)
    }
}

/// A visible stroke fragment. Never zero-length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment<T> {
    p0: Point2<T>,
    p1: Point2<T>,
}

impl<T: Scalar> Segment<T> {
    /// Returns `None` when the endpoints coincide.
    pub fn new(p0: Point2<T>, p1: Point2<T>) -> Option<Self> {
        (p0 != p1).then_some(Self { p0, p1 })
    }

    pub fn p0(&self) -> Point2<T> {
        self.p0
    }

    pub fn p1(&self) -> Point2<T> {
        self.p1
    }

    pub fn length(&self) -> T {
        self.p0.distance(self.p1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    /// White canvas, black strokes.
    Light,
    /// Black canvas, white strokes.
    Dark,
}

impl Background {
    pub const ALL: [Background; 2] = [Background::Light, Background::Dark];

    /// Single-letter code used in file names (`w` / `b`).
    pub fn code(self) -> char {
        match self {
            Background::Light => 'w',
            Background::Dark => 'b',
        }
    }
}

impl fmt::Display for Background {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Background::Light => "light",
            Background::Dark => "dark",
        })
    }
}

/// How the eight in-plane rotations of each polygon are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationScheme {
    /// 0, 15, ..., 105 degrees for every side count.
    #[default]
    Uniform15,
    /// `180 (n - 2) i / n` degrees (the interior angle times `i`), reduced mod 360.
    Formula,
}

impl fmt::Display for RotationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RotationScheme::Uniform15 => "uniform15",
            RotationScheme::Formula => "formula",
        })
    }
}

impl std::str::FromStr for RotationScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "uniform15" => Ok(RotationScheme::Uniform15),
            "formula" => Ok(RotationScheme::Formula),
            other => Err(format!("unknown rotation scheme `{other}`")),
        }
    }
}

/// The eight rotation angles (degrees) for an `n`-sided polygon, `i = 0..7`.
pub fn rotation_schedule<T: Scalar>(n: u32, scheme: RotationScheme) -> Result<Vec<T>> {
    check_sides(n)?;
    let full_turn = T::lit(360.0);
    Ok((0..ROTATION_STEPS as u32)
        .map(|i| match scheme {
            RotationScheme::Uniform15 => T::lit(15.0 * f64::from(i)),
            RotationScheme::Formula => {
                // Numerator is an exact integer; only the division rounds.
                let numerator = T::lit(f64::from(180 * (n - 2) * i));
                (numerator / T::lit(f64::from(n))) % full_turn
            }
        })
        .collect())
}

/// Vertices of a regular polygon. Vertex 0 sits straight above the center
/// before rotation; later vertices follow counter-clockwise in mathematical
/// orientation, mapped into the y-down canvas frame.
pub fn polygon_vertices<T: Scalar>(
    n: u32,
    theta_deg: T,
    center: Point2<T>,
    radius: T,
) -> Result<Vec<Point2<T>>> {
    check_sides(n)?;
    if radius.is_nan() || radius <= T::zero() {
        return Err(GeometryError::NonPositiveRadius(radius.as_f64()));
    }
    let step = T::lit(360.0) / T::lit(f64::from(n));
    Ok((0..n)
        .map(|k| {
            let phi = (T::lit(90.0) + theta_deg + step * T::lit(f64::from(k))).to_radians();
            Point2::new(center.x + radius * phi.cos(), center.y - radius * phi.sin())
        })
        .collect())
}

/// Visible fragments of a closed polygon outline with the middle
/// `removal_pct` percent of every side hidden.
///
/// Side `k` runs from vertex `k` to vertex `k + 1`. At 0% each side is one
/// segment; otherwise each side yields two segments anchored at its
/// endpoints, each `(1 - p/100) / 2` of the side long.
pub fn side_segments<T: Scalar>(vertices: &[Point2<T>], removal_pct: u8) -> Result<Vec<Segment<T>>> {
    check_removal(removal_pct)?;
    if vertices.len() < MIN_SIDES as usize {
        return Err(GeometryError::Degenerate(format!(
            "{} vertices",
            vertices.len()
        )));
    }
    let keep_each_end = T::lit(f64::from(100 - removal_pct)) / T::lit(200.0);
    let n = vertices.len();
    let mut out = Vec::with_capacity(if removal_pct == 0 { n } else { 2 * n });
    for k in 0..n {
        let a = vertices[k];
        let b = vertices[(k + 1) % n];
        let degenerate = || GeometryError::Degenerate(format!("side {k} has zero length"));
        if removal_pct == 0 {
            out.push(Segment::new(a, b).ok_or_else(degenerate)?);
            continue;
        }
        let along = (b - a) * keep_each_end;
        out.push(Segment::new(a, a + along).ok_or_else(degenerate)?);
        out.push(Segment::new(b - along, b).ok_or_else(degenerate)?);
    }
    Ok(out)
}

/// Full parametric description of one stimulus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolygonSpec<T> {
    pub n_sides: u32,
    pub theta_global_deg: T,
    pub background: Background,
    pub center: Point2<T>,
    pub circumradius_px: T,
    pub removal_pct: u8,
    pub stroke_width_px: T,
}

impl<T: Scalar> PolygonSpec<T> {
    /// Checks the canvas-independent invariants.
    pub fn validate(&self) -> Result<()> {
        check_sides(self.n_sides)?;
        check_removal(self.removal_pct)?;
        if self.circumradius_px.is_nan() || self.circumradius_px <= T::zero() {
            return Err(GeometryError::NonPositiveRadius(self.circumradius_px.as_f64()));
        }
        if self.stroke_width_px.is_nan() || self.stroke_width_px < T::one() {
            return Err(GeometryError::InvalidStroke(self.stroke_width_px.as_f64()));
        }
        Ok(())
    }

    /// Checks that the stroked circumcircle lies inside a `width` x `height` canvas.
    pub fn check_fits(&self, width: u32, height: u32) -> Result<()> {
        self.validate()?;
        let extent = self.circumradius_px + self.stroke_width_px / T::lit(2.0);
        let (w, h) = (T::lit(f64::from(width)), T::lit(f64::from(height)));
        let c = self.center;
        let fits = c.x - extent >= T::zero()
            && c.y - extent >= T::zero()
            && c.x + extent <= w
            && c.y + extent <= h;
        if fits {
            Ok(())
        } else {
            Err(GeometryError::Clipped {
                cx: c.x.as_f64(),
                cy: c.y.as_f64(),
                extent: extent.as_f64(),
                width,
                height,
            })
        }
    }

    pub fn vertices(&self) -> Result<Vec<Point2<T>>> {
        polygon_vertices(
            self.n_sides,
            self.theta_global_deg,
            self.center,
            self.circumradius_px,
        )
    }

    pub fn segments(&self) -> Result<Vec<Segment<T>>> {
        side_segments(&self.vertices()?, self.removal_pct)
    }
}

/// Closed-polygon perimeter.
pub fn perimeter<T: Scalar>(vertices: &[Point2<T>]) -> T {
    let n = vertices.len();
    (0..n).fold(T::zero(), |acc, k| {
        acc + vertices[k].distance(vertices[(k + 1) % n])
    })
}
