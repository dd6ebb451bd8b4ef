use crate::fem::Solution;
use crate::geometry::{point_segment_distance, BoundaryTag, Point};
use crate::mesh::TriMesh;
use crate::problems::{PdeFamily, PdeProblem};

/// Observation ablations. `no_global_messages` only affects the network, but
/// travels with the other flags so a run is described by one value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ObservationFlags {
    /// Global inputs are zeroed; the global latent still exists.
    pub no_global_features: bool,
    /// The global update is removed from the network altogether.
    pub no_global_messages: bool,
    /// Mean/std of the solution are dropped from the node features.
    pub no_solution: bool,
}

impl ObservationFlags {
    pub fn node_dim(&self) -> usize {
        if self.no_solution { 3 } else { 5 }
    }
}

pub const EDGE_DIM: usize = 1;
pub const GLOBAL_DIM: usize = 3;

/// One node per element, directed edges between neighbours in both
/// directions, and a global feature vector. Features are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationGraph {
    pub node_dim: usize,
    pub node_features: Vec<f64>,
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
    pub edge_features: Vec<f64>,
    pub global_features: Vec<f64>,
}

impl ObservationGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_features.len() / self.node_dim.max(1)
    }

    pub fn num_edges(&self) -> usize {
        self.senders.len()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.node_features[i * self.node_dim..(i + 1) * self.node_dim]
    }

    pub fn is_finite(&self) -> bool {
        self.node_features.iter().chain(&self.edge_features).chain(&self.global_features).all(|v| v.is_finite())
    }
}

fn boundary_segments(mesh: &TriMesh, inner_only: bool) -> Vec<(Point, Point)> {
    mesh.boundary_edges
        .iter()
        .filter(|b| !inner_only || b.tag == BoundaryTag::Inner)
        .map(|b| (mesh.vertices[b.vertices.0], mesh.vertices[b.vertices.1]))
        .collect()
}

fn nearest(p: Point, segments: &[(Point, Point)]) -> f64 {
    segments.iter().map(|&(a, b)| point_segment_distance(p, a, b)).fold(f64::INFINITY, f64::min)
}

/// Node features `[area, distance to boundary, mean u, std u, extra]`, where
/// `extra` is the distance to the inner boundary (Laplace) or the load at the
/// midpoint (Poisson). Edge features are midpoint distances; globals are
/// `[elements, vertices, step]`.
pub fn build_observation(
    mesh: &TriMesh,
    solution: &Solution,
    problem: &PdeProblem,
    step: usize,
    flags: ObservationFlags,
) -> ObservationGraph {
    let node_dim = flags.node_dim();
    let n = mesh.num_elements();
    let outer = boundary_segments(mesh, false);
    let inner = boundary_segments(mesh, true);
    let midpoints: Vec<Point> = (0..n).map(|e| mesh.element_midpoint(e)).collect();
    let mut node_features = Vec::with_capacity(n * node_dim);
    for (e, el) in mesh.elements.iter().enumerate() {
        let p = midpoints[e];
        node_features.push(mesh.element_area(e));
        node_features.push(nearest(p, &outer));
        if !flags.no_solution {
            // sorted so the result does not depend on local vertex order
            let mut u = el.vertex_ids.map(|v| solution.values[v]);
            u.sort_by(f64::total_cmp);
            let mean = (u[0] + u[1] + u[2]) / 3.0;
            let var = ((u[0] - mean).powi(2) + (u[1] - mean).powi(2) + (u[2] - mean).powi(2)) / 3.0;
            node_features.push(mean);
            node_features.push(var.sqrt());
        }
        node_features.push(match problem.family {
            PdeFamily::Laplace => {
                let d = nearest(p, &inner);
                if d.is_finite() { d } else { 0.0 }
            }
            PdeFamily::Poisson => problem.load.as_ref().map_or(0.0, |l| l.eval(p)),
        });
    }
    let adjacency = mesh.element_adjacency();
    let mut senders = Vec::with_capacity(adjacency.len());
    let mut receivers = Vec::with_capacity(adjacency.len());
    let mut edge_features = Vec::with_capacity(adjacency.len());
    for (s, r) in adjacency {
        senders.push(s);
        receivers.push(r);
        edge_features.push(midpoints[s].distance(midpoints[r]));
    }
    let global_features = if flags.no_global_features {
        vec![0.0; GLOBAL_DIM]
    } else {
        vec![n as f64, mesh.num_vertices() as f64, step as f64]
    };
    ObservationGraph { node_dim, node_features, senders, receivers, edge_features, global_features }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::solve_problem;
    use crate::mesh::{build_initial_mesh, refine, MarkVector};
    use crate::problems::{sample_problem, GmmLoad};

    #[test]
    fn two_element_square() {
        let problem = sample_problem(PdeFamily::Laplace, 0).unwrap();
        let mesh = build_initial_mesh(&crate::geometry::DomainGeometry::UnitSquare, 1.5).unwrap();
        let u = Solution { values: vec![0.25; mesh.num_vertices()] };
        let g = build_observation(&mesh, &u, &problem, 0, ObservationFlags::default());
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.edge_features[0], g.edge_features[1]);
        for i in 0..2 {
            assert_eq!(g.node(i)[2], 0.25);
            assert_eq!(g.node(i)[3], 0.0);
            // no inner boundary on this mesh
            assert_eq!(g.node(i)[4], 0.0);
        }
        assert_eq!(g.global_features, vec![2.0, 4.0, 0.0]);
        let g = build_observation(&mesh, &u, &problem, 3, ObservationFlags { no_solution: true, no_global_features: true, ..Default::default() });
        assert_eq!(g.node_dim, 3);
        assert_eq!(g.global_features, vec![0.0; 3]);
    }

    #[test]
    fn rigid_motion_leaves_features_unchanged() {
        for family in [PdeFamily::Laplace, PdeFamily::Poisson] {
            let problem = sample_problem(family, 12).unwrap();
            let m0 = build_initial_mesh(&problem.geometry, 0.3).unwrap();
            let mut marks = MarkVector::none(m0.num_elements());
            marks.marks[2] = true;
            let mesh = refine(&m0, &marks).unwrap().0;
            let u = solve_problem(&problem, &mesh).unwrap();
            let (angle, shift) = (1.1, Point::new(-3.0, 7.5));
            let (s, c) = f64::sin_cos(angle);
            let mut moved = mesh.clone();
            for v in &mut moved.vertices {
                *v = Point::new(c * v.x - s * v.y + shift.x, s * v.x + c * v.y + shift.y);
            }
            let mut moved_problem = problem.clone();
            if let Some(load) = &problem.load {
                moved_problem.load = Some(GmmLoad { components: load.components.iter().map(|g| g.transformed(angle, shift)).collect() });
            }
            let a = build_observation(&mesh, &u, &problem, 1, ObservationFlags::default());
            let b = build_observation(&moved, &u, &moved_problem, 1, ObservationFlags::default());
            assert_eq!(a.senders, b.senders);
            for (x, y) in a.node_features.iter().zip(&b.node_features).chain(a.edge_features.iter().zip(&b.edge_features)) {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0), "{x} vs {y}");
            }
            assert_eq!(a.global_features, b.global_features);
        }
    }
}
