use super::{MeshError, TriMesh};
use crate::geometry::Point;

/// Tolerance on barycentric coordinates for point-in-triangle tests.
pub const LOCATE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub element: usize,
    pub barycentric: [f64; 3],
}

fn barycentric(tri: &[Point; 3], p: Point) -> [f64; 3] {
    let [a, b, c] = *tri;
    let det = (b - a).cross(c - a);
    let l1 = (p - a).cross(c - a) / det;
    let l2 = (b - a).cross(p - a) / det;
    [1.0 - l1 - l2, l1, l2]
}

fn inside(l: &[f64; 3]) -> bool {
    l.iter().all(|&x| x >= -LOCATE_TOLERANCE)
}

impl TriMesh {
    /// Linear-scan point location. Points on shared edges or vertices resolve to
    /// the lowest element index.
    pub fn locate_point(&self, p: Point) -> Result<Location, MeshError> {
        for e in 0..self.num_elements() {
            let l = barycentric(&self.triangle(e), p);
            if inside(&l) {
                return Ok(Location { element: e, barycentric: l });
            }
        }
        Err(MeshError::PointOutside { x: p.x, y: p.y })
    }
}

/// Uniform bucket grid over element bounding boxes. Gives the same answers
/// as [`TriMesh::locate_point`], including the lowest-index tie break.
#[derive(Debug, Clone)]
pub struct PointLocator<'a> {
    mesh: &'a TriMesh,
    origin: Point,
    cell: (f64, f64),
    dims: (usize, usize),
    offsets: Vec<usize>,
    items: Vec<u32>,
}

impl<'a> PointLocator<'a> {
    pub fn new(mesh: &'a TriMesh) -> Self {
        let n = mesh.num_elements().max(1);
        let (mut lo, mut hi) = (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for v in &mesh.vertices {
            lo = Point::new(lo.x.min(v.x), lo.y.min(v.y));
            hi = Point::new(hi.x.max(v.x), hi.y.max(v.y));
        }
        let side = ((n as f64) / 2.0).sqrt().ceil().max(1.0) as usize;
        let width = (hi.x - lo.x).max(1e-300);
        let height = (hi.y - lo.y).max(1e-300);
        let dims = (side, side);
        let cell = (width / side as f64, height / side as f64);
        let pad = 1e-9;
        let index = |x: f64, lo: f64, size: f64, count: usize| -> usize {
            (((x - lo) / size).floor().max(0.0) as usize).min(count - 1)
        };
        let mut ranges = Vec::with_capacity(mesh.num_elements());
        let mut counts = vec![0usize; dims.0 * dims.1 + 1];
        for e in 0..mesh.num_elements() {
            let t = mesh.triangle(e);
            let xmin = t.iter().map(|p| p.x).fold(f64::INFINITY, f64::min) - pad;
            let xmax = t.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max) + pad;
            let ymin = t.iter().map(|p| p.y).fold(f64::INFINITY, f64::min) - pad;
            let ymax = t.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max) + pad;
            let r = (
                index(xmin, lo.x, cell.0, dims.0),
                index(xmax, lo.x, cell.0, dims.0),
                index(ymin, lo.y, cell.1, dims.1),
                index(ymax, lo.y, cell.1, dims.1),
            );
            for j in r.2..=r.3 {
                for i in r.0..=r.1 {
                    counts[j * dims.0 + i + 1] += 1;
                }
            }
            ranges.push(r);
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let mut items = vec![0u32; *offsets.last().unwrap()];
        for (e, r) in ranges.iter().enumerate() {
            for j in r.2..=r.3 {
                for i in r.0..=r.1 {
                    let c = j * dims.0 + i;
                    items[fill[c]] = e as u32;
                    fill[c] += 1;
                }
            }
        }
        Self { mesh, origin: lo, cell, dims, offsets, items }
    }

    pub fn locate(&self, p: Point) -> Result<Location, MeshError> {
        let fx = (p.x - self.origin.x) / self.cell.0;
        let fy = (p.y - self.origin.y) / self.cell.1;
        if !(fx.is_finite() && fy.is_finite()) || fx < -1e-6 || fy < -1e-6 || fx > self.dims.0 as f64 + 1e-6 || fy > self.dims.1 as f64 + 1e-6 {
            return Err(MeshError::PointOutside { x: p.x, y: p.y });
        }
        let i = (fx.floor().max(0.0) as usize).min(self.dims.0 - 1);
        let j = (fy.floor().max(0.0) as usize).min(self.dims.1 - 1);
        let c = j * self.dims.0 + i;
        // items within a cell are in increasing element order
        for &e in &self.items[self.offsets[c]..self.offsets[c + 1]] {
            let l = barycentric(&self.mesh.triangle(e as usize), p);
            if inside(&l) {
                return Ok(Location { element: e as usize, barycentric: l });
            }
        }
        Err(MeshError::PointOutside { x: p.x, y: p.y })
    }

    pub fn mesh(&self) -> &TriMesh {
        self.mesh
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainGeometry, Rect};
    use crate::mesh::{build_initial_mesh, refine, MarkVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mesh(seed: u64) -> TriMesh {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hole = Rect { x0: 0.3, y0: 0.25, x1: 0.45, y1: 0.6 };
        let mut m = build_initial_mesh(&DomainGeometry::SquareWithHole { hole }, 0.35).unwrap();
        for _ in 0..3 {
            let marks = MarkVector::new((0..m.num_elements()).map(|_| rng.random_bool(0.3)).collect());
            m = refine(&m, &marks).unwrap().0;
        }
        m
    }

    #[test]
    fn centroid_locates_own_element() {
        let m = random_mesh(1);
        let loc = PointLocator::new(&m);
        for e in 0..m.num_elements() {
            let l = loc.locate(m.element_midpoint(e)).unwrap();
            assert_eq!(l.element, e);
            for b in l.barycentric {
                assert!((b - 1.0 / 3.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn vertex_resolves_to_lowest_incident_element() {
        let m = random_mesh(2);
        let loc = PointLocator::new(&m);
        for (v, &p) in m.vertices.iter().enumerate() {
            let lowest = m.elements.iter().position(|el| el.vertex_ids.contains(&v)).unwrap();
            let l = loc.locate(p).unwrap();
            assert_eq!(l.element, lowest);
            assert!(l.barycentric.iter().any(|&b| (b - 1.0).abs() < 1e-12));
            assert_eq!(m.locate_point(p).unwrap().element, lowest);
        }
    }

    #[test]
    fn random_points_round_trip() {
        let m = random_mesh(3);
        let loc = PointLocator::new(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut found = 0;
        while found < 1000 {
            let p = Point::new(rng.random(), rng.random());
            let linear = m.locate_point(p);
            let grid = loc.locate(p);
            match (linear, grid) {
                (Ok(a), Ok(b)) => {
                    assert_eq!(a, b);
                    let t = m.triangle(b.element);
                    let q = t[0] * b.barycentric[0] + t[1] * b.barycentric[1] + t[2] * b.barycentric[2];
                    assert!(q.distance(p) < 1e-10);
                    for x in b.barycentric {
                        assert!((-1e-10..=1.0 + 1e-10).contains(&x));
                    }
                    found += 1;
                }
                (Err(_), Err(_)) => {}
                other => panic!("locators disagree: {other:?}"),
            }
        }
    }

    #[test]
    fn outside_point_errors() {
        let m = random_mesh(5);
        assert!(m.locate_point(Point::new(0.4, 0.4)).is_err());
        assert!(PointLocator::new(&m).locate(Point::new(1.5, 0.5)).is_err());
        assert!(PointLocator::new(&m).locate(Point::new(0.4, 0.4)).is_err());
    }
}
