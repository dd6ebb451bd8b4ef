//! Conforming triangular meshes with newest-vertex bisection refinement.
//!
//! A [`TriMesh`] is immutable: [`refine`] returns a new mesh together with a
//! [`RefinementMap`] that records, for every element of the old mesh, the
//! elements of the new mesh it was split into.

mod build;
mod io;
mod locate;
mod refine;

pub use build::build_initial_mesh;
pub use io::{read_mesh_text, render_svg, write_mesh_text, ColorScale};
pub use locate::{Location, PointLocator};
pub use refine::{compose_refinement_maps, refine, uniform_refine, uniform_refine_with_map};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{signed_area, BoundaryTag, DomainError, Point};

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error(transparent)]
    InvalidDomain(#[from] DomainError),
    #[error("mark vector has length {marks} but the mesh has {elements} elements")]
    MarkLength { marks: usize, elements: usize },
    #[error("refinement map composition mismatch: {0}")]
    Composition(String),
    #[error("point ({x}, {y}) lies outside the meshed domain")]
    PointOutside { x: f64, y: f64 },
    #[error("non-conforming mesh: {0}")]
    NonConforming(String),
    #[error("mesh parse error: {0}")]
    Parse(String),
}

/// A triangle given by three vertex indices in counter-clockwise order.
///
/// `refinement_edge` is the local index of the vertex opposite the edge that
/// is bisected next, i.e. the newest vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub vertex_ids: [usize; 3],
    pub refinement_edge: u8,
    /// Number of bisections separating this element from its initial-mesh ancestor.
    pub level: u16,
}

impl Element {
    /// Vertex indices of local edge `k` (the edge opposite local vertex `k`).
    pub fn edge(&self, k: usize) -> (usize, usize) {
        (self.vertex_ids[(k + 1) % 3], self.vertex_ids[(k + 2) % 3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub vertices: (usize, usize),
    pub tag: BoundaryTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Point>,
    pub elements: Vec<Element>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Number of `refine` calls since the initial mesh.
    pub generation: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub area: f64,
    pub midpoint: Point,
}

/// One boolean per element; `true` requests refinement.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MarkVector {
    pub marks: Vec<bool>,
}

impl MarkVector {
    pub fn new(marks: Vec<bool>) -> Self {
        Self { marks }
    }

    pub fn none(n: usize) -> Self {
        Self { marks: vec![false; n] }
    }

    pub fn all(n: usize) -> Self {
        Self { marks: vec![true; n] }
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn count(&self) -> usize {
        self.marks.iter().filter(|&&m| m).count()
    }
}

/// Parent → children lineage between two consecutive meshes, stored in
/// compressed-row form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementMap {
    offsets: Vec<usize>,
    children: Vec<usize>,
}

impl RefinementMap {
    pub fn identity(n: usize) -> Self {
        Self { offsets: (0..=n).collect(), children: (0..n).collect() }
    }

    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut children = Vec::new();
        offsets.push(0);
        for l in lists {
            children.extend_from_slice(l);
            offsets.push(children.len());
        }
        Self { offsets, children }
    }

    pub(crate) fn from_raw(offsets: Vec<usize>, children: Vec<usize>) -> Self {
        Self { offsets, children }
    }

    pub fn parent_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Total number of children over all parents.
    pub fn child_count(&self) -> usize {
        self.children.len()
    }

    pub fn children(&self, parent: usize) -> &[usize] {
        &self.children[self.offsets[parent]..self.offsets[parent + 1]]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> + '_ {
        (0..self.parent_count()).map(move |i| self.children(i))
    }

    pub fn to_lists(&self) -> Vec<Vec<usize>> {
        self.iter().map(|c| c.to_vec()).collect()
    }

    /// Parent index of every child, or an error if the child sets overlap or
    /// leave gaps.
    pub fn parents(&self) -> Result<Vec<usize>, MeshError> {
        let n = self.children.iter().copied().max().map_or(0, |m| m + 1);
        let mut parent = vec![usize::MAX; n];
        for (p, cs) in self.iter().enumerate() {
            for &c in cs {
                if parent[c] != usize::MAX {
                    return Err(MeshError::Composition(format!("child {c} has two parents")));
                }
                parent[c] = p;
            }
        }
        if parent.iter().any(|&p| p == usize::MAX) {
            return Err(MeshError::Composition("child indices are not contiguous".into()));
        }
        Ok(parent)
    }

    pub fn is_identity(&self) -> bool {
        self.iter().enumerate().all(|(i, c)| c.len() == 1 && c[0] == i)
    }
}

/// Unique edges of a mesh with element incidence, built by sorting.
#[derive(Debug, Clone)]
pub struct EdgeTable {
    /// Vertex pairs `(a, b)` with `a < b`, sorted.
    pub edges: Vec<(usize, usize)>,
    /// Edge id of local edge `k` of every element.
    pub element_edges: Vec<[usize; 3]>,
    /// Up to two incident elements per edge; `usize::MAX` marks a missing one.
    pub edge_elements: Vec<[usize; 2]>,
    /// Incidence count per edge (may exceed 2 for broken meshes).
    pub incidence: Vec<u32>,
}

impl EdgeTable {
    pub fn new(mesh: &TriMesh) -> Self {
        let mut entries: Vec<(usize, usize, u32)> = Vec::with_capacity(mesh.elements.len() * 3);
        for (e, el) in mesh.elements.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = el.edge(k);
                let key = if a < b { (a, b) } else { (b, a) };
                entries.push((key.0, key.1, (e * 3 + k) as u32));
            }
        }
        entries.sort_unstable();
        let mut edges = Vec::with_capacity(entries.len() / 2 + 1);
        let mut element_edges = vec![[0usize; 3]; mesh.elements.len()];
        let mut edge_elements: Vec<[usize; 2]> = Vec::with_capacity(entries.len() / 2 + 1);
        let mut incidence: Vec<u32> = Vec::with_capacity(entries.len() / 2 + 1);
        for (a, b, slot) in entries {
            if edges.last() != Some(&(a, b)) {
                edges.push((a, b));
                edge_elements.push([usize::MAX; 2]);
                incidence.push(0);
            }
            let id = edges.len() - 1;
            let e = slot as usize / 3;
            let k = slot as usize % 3;
            element_edges[e][k] = id;
            let inc = &mut incidence[id];
            if (*inc as usize) < 2 {
                edge_elements[id][*inc as usize] = e;
            }
            *inc += 1;
        }
        Self { edges, element_edges, edge_elements, incidence }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

impl TriMesh {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn triangle(&self, e: usize) -> [Point; 3] {
        let v = self.elements[e].vertex_ids;
        [self.vertices[v[0]], self.vertices[v[1]], self.vertices[v[2]]]
    }

    pub fn element_area(&self, e: usize) -> f64 {
        let [a, b, c] = self.triangle(e);
        signed_area(a, b, c)
    }

    /// Vertex centroid of element `e`.
    pub fn element_midpoint(&self, e: usize) -> Point {
        let [a, b, c] = self.triangle(e);
        Point::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
    }

    /// Area (shoelace) and vertex centroid of every element.
    pub fn element_geometry(&self) -> Vec<ElementGeometry> {
        (0..self.num_elements())
            .map(|e| ElementGeometry { area: self.element_area(e), midpoint: self.element_midpoint(e) })
            .collect()
    }

    pub fn total_area(&self) -> f64 {
        // pairwise-ish: accumulate in element order
        (0..self.num_elements()).map(|e| self.element_area(e)).sum()
    }

    pub fn edge_table(&self) -> EdgeTable {
        EdgeTable::new(self)
    }

    /// Ordered pairs of elements sharing a full edge; both directions, sorted.
    pub fn element_adjacency(&self) -> Vec<(usize, usize)> {
        let table = self.edge_table();
        let mut pairs = Vec::with_capacity(2 * table.len());
        for (id, inc) in table.incidence.iter().enumerate() {
            if *inc == 2 {
                let [a, b] = table.edge_elements[id];
                pairs.push((a, b));
                pairs.push((b, a));
            }
        }
        pairs.sort_unstable();
        pairs
    }

    /// Per-vertex boundary tag, if the vertex lies on a boundary edge. Inner
    /// wins over outer where both meet (they never do for valid domains).
    pub fn vertex_boundary_tags(&self) -> Vec<Option<BoundaryTag>> {
        let mut tags = vec![None; self.num_vertices()];
        for be in &self.boundary_edges {
            for v in [be.vertices.0, be.vertices.1] {
                tags[v] = match (tags[v], be.tag) {
                    (Some(BoundaryTag::Inner), _) | (_, BoundaryTag::Inner) => Some(BoundaryTag::Inner),
                    _ => Some(BoundaryTag::Outer),
                };
            }
        }
        tags
    }

    /// Smallest interior angle over all elements, in radians.
    pub fn min_angle(&self) -> f64 {
        let mut best = f64::INFINITY;
        for e in 0..self.num_elements() {
            let t = self.triangle(e);
            for k in 0..3 {
                let u = t[(k + 1) % 3] - t[k];
                let v = t[(k + 2) % 3] - t[k];
                let ang = (u.cross(v).abs()).atan2(u.dot(v));
                best = best.min(ang);
            }
        }
        best
    }

    /// Largest element diameter (longest edge).
    pub fn max_diameter(&self) -> f64 {
        let mut best: f64 = 0.0;
        for e in 0..self.num_elements() {
            let t = self.triangle(e);
            for k in 0..3 {
                best = best.max(t[k].distance(t[(k + 1) % 3]));
            }
        }
        best
    }

    /// Checks orientation, conformity (no hanging nodes) and boundary-edge
    /// bookkeeping.
    pub fn check_conforming(&self) -> Result<(), MeshError> {
        for (e, el) in self.elements.iter().enumerate() {
            let v = el.vertex_ids;
            if v[0] == v[1] || v[1] == v[2] || v[0] == v[2] {
                return Err(MeshError::NonConforming(format!("element {e} repeats a vertex")));
            }
            if v.iter().any(|&i| i >= self.num_vertices()) {
                return Err(MeshError::NonConforming(format!("element {e} has an invalid vertex")));
            }
            if self.element_area(e) <= 0.0 {
                return Err(MeshError::NonConforming(format!("element {e} is not counter-clockwise")));
            }
        }
        let table = self.edge_table();
        let mut boundary: Vec<(usize, usize)> = self
            .boundary_edges
            .iter()
            .map(|b| {
                let (a, c) = b.vertices;
                if a < c { (a, c) } else { (c, a) }
            })
            .collect();
        boundary.sort_unstable();
        let before = boundary.len();
        boundary.dedup();
        if boundary.len() != before {
            return Err(MeshError::NonConforming("duplicate boundary edge".into()));
        }
        let mut open = Vec::new();
        for (id, &inc) in table.incidence.iter().enumerate() {
            match inc {
                1 => open.push(table.edges[id]),
                2 => {}
                n => {
                    return Err(MeshError::NonConforming(format!(
                        "edge {:?} has {n} incident elements",
                        table.edges[id]
                    )))
                }
            }
        }
        if open != boundary {
            return Err(MeshError::NonConforming(
                "edges with a single incident element differ from the boundary edges (hanging node)"
                    .into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::DomainGeometry;

    pub(crate) fn single_triangle() -> TriMesh {
        TriMesh {
            vertices: vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)],
            elements: vec![Element { vertex_ids: [0, 1, 2], refinement_edge: 0, level: 0 }],
            boundary_edges: vec![
                BoundaryEdge { vertices: (0, 1), tag: BoundaryTag::Outer },
                BoundaryEdge { vertices: (1, 2), tag: BoundaryTag::Outer },
                BoundaryEdge { vertices: (2, 0), tag: BoundaryTag::Outer },
            ],
            generation: 0,
        }
    }

    #[test]
    fn element_geometry_of_reference_triangle() {
        let m = single_triangle();
        let g = m.element_geometry();
        assert_eq!(g[0].area, 0.5);
        assert!((g[0].midpoint.x - 1.0 / 3.0).abs() < 1e-15);
        assert!((g[0].midpoint.y - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unit_square_two_elements() {
        let m = build_initial_mesh(&DomainGeometry::UnitSquare, 1.5).unwrap();
        let areas: Vec<f64> = m.element_geometry().iter().map(|g| g.area).collect();
        assert_eq!(areas, vec![0.5, 0.5]);
        assert_eq!(m.element_adjacency(), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn single_element_has_no_adjacency() {
        assert!(single_triangle().element_adjacency().is_empty());
        single_triangle().check_conforming().unwrap();
    }

    #[test]
    fn quartered_triangle_fans_around_hypotenuse_midpoint() {
        // two bisections give four children sharing the hypotenuse midpoint,
        // forming a chain 1-1-2-2 of neighbour counts rather than a red pattern
        let m = uniform_refine(&single_triangle(), 1);
        assert_eq!(m.num_elements(), 4);
        let adj = m.element_adjacency();
        let degree = |e: usize| adj.iter().filter(|(a, _)| *a == e).count();
        let mut degrees: Vec<usize> = (0..4).map(degree).collect();
        degrees.sort_unstable();
        assert_eq!(degrees, vec![1, 1, 2, 2]);
        let hub = m.elements[0].vertex_ids[1];
        assert!(m.elements.iter().all(|el| el.vertex_ids.contains(&hub)));
    }

    #[test]
    fn detects_hanging_node() {
        // split one of two triangles without touching its neighbour
        let mut m = build_initial_mesh(&DomainGeometry::UnitSquare, 1.5).unwrap();
        let (a, b) = m.elements[0].edge(m.elements[0].refinement_edge as usize);
        let mid = m.vertices[a].midpoint(m.vertices[b]);
        m.vertices.push(mid);
        let apex = m.elements[0].vertex_ids[m.elements[0].refinement_edge as usize];
        let new = m.vertices.len() - 1;
        m.elements[0] = Element { vertex_ids: [new, apex, a], refinement_edge: 0, level: 1 };
        m.elements.push(Element { vertex_ids: [new, b, apex], refinement_edge: 0, level: 1 });
        assert!(m.check_conforming().is_err());
    }
}
