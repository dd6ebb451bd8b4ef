//! Planar points and the polygonal domains the PDE families live on.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 2d cross product.
    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

/// Signed area of the triangle (a, b, c); positive for counter-clockwise order.
pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * (b - a).cross(c - a)
}

/// Euclidean distance from `p` to the closed segment `[a, b]`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn from_center(center: Point, width: f64, height: f64) -> Self {
        Self {
            x0: center.x - 0.5 * width,
            y0: center.y - 0.5 * height,
            x1: center.x + 0.5 * width,
            y1: center.y + 0.5 * height,
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("invalid domain: {0}")]
    Invalid(String),
}

/// Which kind of boundary a boundary edge lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BoundaryTag {
    Outer,
    Inner,
}

/// The computational domains. All live inside the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DomainGeometry {
    /// The unit square `(0,1)²`; used for manufactured-solution studies.
    UnitSquare,
    /// Unit square with an axis-aligned rectangular hole.
    SquareWithHole { hole: Rect },
    /// `(0,1)² \ [corner.x, 1] × [corner.y, 1]`.
    LShaped { corner: Point },
}

impl DomainGeometry {
    pub fn validate(&self) -> Result<(), DomainError> {
        match *self {
            DomainGeometry::UnitSquare => Ok(()),
            DomainGeometry::SquareWithHole { hole } => {
                let coords = [hole.x0, hole.x1, hole.y0, hole.y1];
                if coords.iter().any(|c| !c.is_finite()) {
                    return Err(DomainError::Invalid("non-finite hole coordinates".into()));
                }
                if hole.width() <= 0.0 || hole.height() <= 0.0 {
                    return Err(DomainError::Invalid("hole has zero area".into()));
                }
                if hole.x0 <= 0.0 || hole.y0 <= 0.0 || hole.x1 >= 1.0 || hole.y1 >= 1.0 {
                    return Err(DomainError::Invalid(
                        "hole touches or crosses the outer boundary".into(),
                    ));
                }
                Ok(())
            }
            DomainGeometry::LShaped { corner } => {
                if !corner.is_finite()
                    || corner.x <= 0.0
                    || corner.y <= 0.0
                    || corner.x >= 1.0
                    || corner.y >= 1.0
                {
                    return Err(DomainError::Invalid(
                        "L-domain cutoff corner must lie strictly inside the unit square".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            DomainGeometry::UnitSquare => 1.0,
            DomainGeometry::SquareWithHole { hole } => 1.0 - hole.area(),
            DomainGeometry::LShaped { corner } => 1.0 - (1.0 - corner.x) * (1.0 - corner.y),
        }
    }

    /// Closed-domain membership test.
    pub fn contains(&self, p: Point) -> bool {
        if !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y) {
            return false;
        }
        match *self {
            DomainGeometry::UnitSquare => true,
            DomainGeometry::SquareWithHole { hole } => {
                !(p.x > hole.x0 && p.x < hole.x1 && p.y > hole.y0 && p.y < hole.y1)
            }
            DomainGeometry::LShaped { corner } => !(p.x > corner.x && p.y > corner.y),
        }
    }

    /// Coordinates along one axis where the boundary has a corner, in increasing order.
    pub(crate) fn breakpoints(&self, axis: usize) -> Vec<f64> {
        let mut pts = vec![0.0, 1.0];
        match *self {
            DomainGeometry::UnitSquare => {}
            DomainGeometry::SquareWithHole { hole } => {
                if axis == 0 {
                    pts.extend([hole.x0, hole.x1]);
                } else {
                    pts.extend([hole.y0, hole.y1]);
                }
            }
            DomainGeometry::LShaped { corner } => {
                pts.push(if axis == 0 { corner.x } else { corner.y });
            }
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// Whether an axis-aligned cell (given by its center) belongs to the domain.
    pub(crate) fn contains_cell_center(&self, c: Point) -> bool {
        match *self {
            DomainGeometry::UnitSquare => true,
            DomainGeometry::SquareWithHole { hole } => !hole.contains(c),
            DomainGeometry::LShaped { corner } => !(c.x > corner.x && c.y > corner.y),
        }
    }

    /// Whether a boundary point lies on the inner (hole) boundary.
    pub(crate) fn is_inner_boundary(&self, p: Point) -> bool {
        match *self {
            DomainGeometry::SquareWithHole { hole } => {
                let eps = 1e-12;
                let on_x = (p.x - hole.x0).abs() < eps || (p.x - hole.x1).abs() < eps;
                let on_y = (p.y - hole.y0).abs() < eps || (p.y - hole.y1).abs() < eps;
                let in_x = p.x >= hole.x0 - eps && p.x <= hole.x1 + eps;
                let in_y = p.y >= hole.y0 - eps && p.y <= hole.y1 + eps;
                (on_x && in_y) || (on_y && in_x)
            }
            _ => false,
        }
    }
}
