//! Linear (P1) finite elements on triangular meshes.
//!
//! Both problem families are written as `∇²u = f` with Dirichlet data. The
//! discrete system is `K u = −F`, with `K` the stiffness matrix
//! `K_ab = ∫ ∇φ_a·∇φ_b` and `F_a = ∫ f φ_a`; a positive load therefore
//! yields a non-positive solution.

mod sparse;

pub use sparse::{conjugate_gradient, conjugate_gradient_polished, CsrMatrix};

use thiserror::Error;

use crate::geometry::Point;
use crate::mesh::{MeshError, PointLocator, TriMesh};
use crate::problems::{PdeFamily, PdeProblem, ProblemError};

/// Relative residual every solve must reach.
pub const SOLVER_TOLERANCE: f64 = 1e-10;
/// Solves keep iterating towards this residual while it is attainable, which
/// makes reproduced affine fields exact to round-off.
const SOLVER_TARGET: f64 = 1e-14;
const MIN_ELEMENT_AREA: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("degenerate element {element} (area {area:e})")]
    DegenerateElement { element: usize, area: f64 },
    #[error("load evaluates to a non-finite value at ({x}, {y})")]
    NonFiniteLoad { x: f64, y: f64 },
    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("invalid boundary condition: {0}")]
    InvalidBc(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// A linear system, possibly with eliminated Dirichlet rows.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Eliminated vertices and their prescribed values, sorted by vertex.
    pub constrained: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DirichletBC {
    pub vertices: Vec<usize>,
    pub values: Vec<f64>,
}

impl DirichletBC {
    pub fn push(&mut self, vertex: usize, value: f64) {
        self.vertices.push(vertex);
        self.values.push(value);
    }

    /// Every boundary vertex gets the value of its boundary tag.
    pub fn from_tags(mesh: &TriMesh, value: impl Fn(crate::geometry::BoundaryTag) -> f64) -> Self {
        let mut bc = Self::default();
        for (v, tag) in mesh.vertex_boundary_tags().into_iter().enumerate() {
            if let Some(tag) = tag {
                bc.push(v, value(tag));
            }
        }
        bc
    }
}

/// Coefficients of `u` in the hat-function basis, one per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub values: Vec<f64>,
}

/// Gradient coefficients `(b, c)` of the three hat functions times `2A`.
fn hat_gradients(t: &[Point; 3]) -> ([f64; 3], [f64; 3]) {
    let b = [t[1].y - t[2].y, t[2].y - t[0].y, t[0].y - t[1].y];
    let c = [t[2].x - t[1].x, t[0].x - t[2].x, t[1].x - t[0].x];
    (b, c)
}

pub fn assemble_stiffness(mesh: &TriMesh) -> Result<SparseSystem, FemError> {
    let edges = mesh.edge_table();
    let mut matrix = CsrMatrix::from_pattern(mesh.num_vertices(), &edges.edges);
    for (e, el) in mesh.elements.iter().enumerate() {
        let t = mesh.triangle(e);
        let area = mesh.element_area(e);
        if !(area >= MIN_ELEMENT_AREA) {
            return Err(FemError::DegenerateElement { element: e, area });
        }
        let (b, c) = hat_gradients(&t);
        for i in 0..3 {
            for j in 0..3 {
                let k = matrix.position(el.vertex_ids[i], el.vertex_ids[j]).expect("edge in pattern");
                matrix.values[k] += (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
            }
        }
    }
    Ok(SparseSystem { rhs: vec![0.0; matrix.n], matrix, constrained: Vec::new() })
}

/// `F_a = ∫ f φ_a`, using the edge-midpoint rule on every element.
pub fn assemble_load(mesh: &TriMesh, f: impl Fn(Point) -> f64) -> Result<Vec<f64>, FemError> {
    let mut rhs = vec![0.0; mesh.num_vertices()];
    for (e, el) in mesh.elements.iter().enumerate() {
        let t = mesh.triangle(e);
        let w = mesh.element_area(e) / 6.0;
        // fm[k] sits on the edge opposite local vertex k
        let mut fm = [0.0; 3];
        for k in 0..3 {
            let m = t[(k + 1) % 3].midpoint(t[(k + 2) % 3]);
            fm[k] = f(m);
            if !fm[k].is_finite() {
                return Err(FemError::NonFiniteLoad { x: m.x, y: m.y });
            }
        }
        for k in 0..3 {
            rhs[el.vertex_ids[k]] += w * (fm[(k + 1) % 3] + fm[(k + 2) % 3]);
        }
    }
    Ok(rhs)
}

/// Symmetric elimination: constrained rows and columns become identity rows
/// and the right-hand side absorbs the removed column contributions.
pub fn apply_dirichlet(mut system: SparseSystem, bc: &DirichletBC) -> Result<SparseSystem, FemError> {
    let n = system.matrix.n;
    if bc.vertices.len() != bc.values.len() {
        return Err(FemError::InvalidBc("vertex and value counts differ".into()));
    }
    let mut prescribed: Vec<Option<f64>> = vec![None; n];
    for (&v, &g) in bc.vertices.iter().zip(&bc.values) {
        if v >= n {
            return Err(FemError::InvalidBc(format!("vertex {v} out of range")));
        }
        if prescribed[v].replace(g).is_some() {
            return Err(FemError::InvalidBc(format!("vertex {v} constrained twice")));
        }
        if !g.is_finite() {
            return Err(FemError::InvalidBc(format!("non-finite value at vertex {v}")));
        }
    }
    for (v, g) in system.constrained.drain(..) {
        prescribed[v].get_or_insert(g);
    }
    let m = &mut system.matrix;
    for i in 0..n {
        for k in m.row_offsets[i]..m.row_offsets[i + 1] {
            let j = m.col_indices[k];
            match (prescribed[i], prescribed[j]) {
                (None, Some(g)) => {
                    system.rhs[i] -= m.values[k] * g;
                    m.values[k] = 0.0;
                }
                (Some(_), _) => m.values[k] = if i == j { 1.0 } else { 0.0 },
                (None, None) => {}
            }
        }
    }
    for (i, p) in prescribed.iter().enumerate() {
        if let Some(g) = *p {
            system.rhs[i] = g;
            system.constrained.push((i, g));
        }
    }
    Ok(system)
}

pub fn solve(system: &SparseSystem) -> Result<Solution, FemError> {
    let max_iter = 10 * system.matrix.n + 100;
    let mut values = conjugate_gradient_polished(&system.matrix, &system.rhs, SOLVER_TARGET, SOLVER_TOLERANCE, max_iter)?;
    for &(v, g) in &system.constrained {
        values[v] = g;
    }
    Ok(Solution { values })
}

/// Dirichlet data of a problem on a mesh of its domain.
pub fn boundary_conditions(problem: &PdeProblem, mesh: &TriMesh) -> DirichletBC {
    DirichletBC::from_tags(mesh, |tag| problem.bc.value(tag))
}

pub fn solve_problem(problem: &PdeProblem, mesh: &TriMesh) -> Result<Solution, FemError> {
    let mut system = assemble_stiffness(mesh)?;
    if problem.family == PdeFamily::Poisson {
        problem.eval_load(Point::new(0.0, 0.0))?;
        let load = assemble_load(mesh, |p| problem.eval_load(p).unwrap_or(f64::NAN))?;
        for (r, l) in system.rhs.iter_mut().zip(load) {
            *r = -l;
        }
    }
    let system = apply_dirichlet(system, &boundary_conditions(problem, mesh))?;
    solve(&system)
}

/// Value of the piecewise-linear field at `p` (linear scan location).
pub fn interpolate(mesh: &TriMesh, solution: &Solution, p: Point) -> Result<f64, FemError> {
    let loc = mesh.locate_point(p)?;
    let ids = mesh.elements[loc.element].vertex_ids;
    Ok((0..3).map(|k| loc.barycentric[k] * solution.values[ids[k]]).sum())
}

/// Repeated interpolation on one mesh through a bucket-grid locator.
#[derive(Debug, Clone)]
pub struct Interpolator<'a> {
    locator: PointLocator<'a>,
}

impl<'a> Interpolator<'a> {
    pub fn new(mesh: &'a TriMesh) -> Self {
        Self { locator: PointLocator::new(mesh) }
    }

    /// Containing element and interpolated value.
    pub fn eval(&self, values: &[f64], p: Point) -> Result<(usize, f64), FemError> {
        let loc = self.locator.locate(p)?;
        let ids = self.locator.mesh().elements[loc.element].vertex_ids;
        Ok((loc.element, (0..3).map(|k| loc.barycentric[k] * values[ids[k]]).sum()))
    }
}

/// `sqrt(uᵀ K u)` with the unconstrained stiffness matrix.
pub fn energy_norm(mesh: &TriMesh, solution: &Solution) -> Result<f64, FemError> {
    let k = assemble_stiffness(mesh)?.matrix;
    let ku = k.mul_vec(&solution.values);
    Ok(ku.iter().zip(&solution.values).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt())
}

/// Six-point degree-4 rule on the reference triangle (barycentric, weight).
const DUNAVANT6: [([f64; 3], f64); 6] = {
    const A: f64 = 0.445948490915965;
    const WA: f64 = 0.223381589678011;
    const B: f64 = 0.091576213509771;
    const WB: f64 = 0.109951743655322;
    [
        ([1.0 - 2.0 * A, A, A], WA),
        ([A, 1.0 - 2.0 * A, A], WA),
        ([A, A, 1.0 - 2.0 * A], WA),
        ([1.0 - 2.0 * B, B, B], WB),
        ([B, 1.0 - 2.0 * B, B], WB),
        ([B, B, 1.0 - 2.0 * B], WB),
    ]
};

/// `∫ g` over the mesh with a degree-4 rule per element.
pub fn integrate(mesh: &TriMesh, g: impl Fn(Point) -> f64) -> f64 {
    let mut total = 0.0;
    for e in 0..mesh.num_elements() {
        let t = mesh.triangle(e);
        let area = mesh.element_area(e);
        let mut acc = 0.0;
        for (l, w) in DUNAVANT6 {
            let p = Point::new(l[0] * t[0].x + l[1] * t[1].x + l[2] * t[2].x, l[0] * t[0].y + l[1] * t[1].y + l[2] * t[2].y);
            acc += w * g(p);
        }
        total += area * acc;
    }
    total
}

/// L2 distance between the P1 field and `exact`.
pub fn l2_error(mesh: &TriMesh, solution: &Solution, exact: impl Fn(Point) -> f64) -> f64 {
    let mut total = 0.0;
    for (e, el) in mesh.elements.iter().enumerate() {
        let t = mesh.triangle(e);
        let u = el.vertex_ids.map(|v| solution.values[v]);
        let mut acc = 0.0;
        for (l, w) in DUNAVANT6 {
            let p = Point::new(l[0] * t[0].x + l[1] * t[1].x + l[2] * t[2].x, l[0] * t[0].y + l[1] * t[1].y + l[2] * t[2].y);
            let uh = l[0] * u[0] + l[1] * u[1] + l[2] * u[2];
            acc += w * (uh - exact(p)).powi(2);
        }
        total += mesh.element_area(e) * acc;
    }
    total.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainGeometry, Rect};
    use crate::mesh::{build_initial_mesh, refine, uniform_refine, MarkVector};
    use crate::problems::{sample_problem, BoundaryValues, GaussianComponent, GmmLoad};
    use crate::rng::{stream, StreamKey};
    use rand::Rng;
    use std::f64::consts::PI;

    fn random_mesh(seed: u64) -> TriMesh {
        let mut rng = stream(seed, StreamKey::Test, 0);
        let mut m = build_initial_mesh(&DomainGeometry::LShaped { corner: Point::new(0.6, 0.4) }, 0.4).unwrap();
        for _ in 0..3 {
            let marks = MarkVector::new((0..m.num_elements()).map(|_| rng.random_bool(0.3)).collect());
            m = refine(&m, &marks).unwrap().0;
        }
        m
    }

    fn boundary_bc(mesh: &TriMesh, g: impl Fn(Point) -> f64) -> DirichletBC {
        let mut bc = DirichletBC::default();
        for (v, t) in mesh.vertex_boundary_tags().iter().enumerate() {
            if t.is_some() {
                bc.push(v, g(mesh.vertices[v]));
            }
        }
        bc
    }

    #[test]
    fn right_triangle_stiffness() {
        let m = crate::mesh::tests::single_triangle();
        let k = assemble_stiffness(&m).unwrap().matrix;
        let t = m.triangle(0);
        // locate the right-angle corner regardless of vertex order
        let diag = k.diagonal();
        for (i, p) in t.iter().enumerate() {
            let want = if *p == Point::new(0.0, 0.0) { 1.0 } else { 0.5 };
            assert!((diag[m.elements[0].vertex_ids[i]] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn stiffness_rows_sum_to_zero_and_symmetric() {
        for seed in 0..5 {
            let m = random_mesh(seed);
            let k = assemble_stiffness(&m).unwrap().matrix;
            for i in 0..k.n {
                assert!(k.row(i).1.iter().sum::<f64>().abs() < 1e-12);
            }
            assert!(k.asymmetry() < 1e-14);
        }
    }

    #[test]
    fn degenerate_element_rejected() {
        let mut m = crate::mesh::tests::single_triangle();
        m.vertices[2] = m.vertices[1] * 0.5;
        assert!(matches!(assemble_stiffness(&m), Err(FemError::DegenerateElement { .. })));
    }

    #[test]
    fn load_vector_basics() {
        let m = crate::mesh::tests::single_triangle();
        let a = m.element_area(0);
        assert_eq!(assemble_load(&m, |_| 0.0).unwrap(), vec![0.0; 3]);
        for v in assemble_load(&m, |_| 1.0).unwrap() {
            assert!((v - a / 3.0).abs() < 1e-15);
        }
        assert!(matches!(assemble_load(&m, |_| f64::NAN), Err(FemError::NonFiniteLoad { .. })));
    }

    #[test]
    fn load_sum_matches_fine_quadrature() {
        let problem = sample_problem(PdeFamily::Poisson, 17).unwrap();
        let m0 = build_initial_mesh(&problem.geometry, 0.3).unwrap();
        let f = |p| problem.eval_load(p).unwrap();
        let coarse: f64 = assemble_load(&uniform_refine(&m0, 5), f).unwrap().iter().sum();
        let fine = integrate(&uniform_refine(&m0, 6), f);
        assert!((coarse - fine).abs() < 1e-3 * fine, "{coarse} vs {fine}");
    }

    #[test]
    fn dirichlet_elimination() {
        let m = random_mesh(3);
        let n = m.num_vertices();
        // everything constrained
        let mut bc = DirichletBC::default();
        for v in 0..n {
            bc.push(v, v as f64 * 0.1);
        }
        let s = apply_dirichlet(assemble_stiffness(&m).unwrap(), &bc).unwrap();
        let u = solve(&s).unwrap();
        assert_eq!(u.values, bc.values);
        // zero data everywhere on the boundary
        let s = apply_dirichlet(assemble_stiffness(&m).unwrap(), &boundary_bc(&m, |_| 0.0)).unwrap();
        assert!(s.matrix.asymmetry() < 1e-14);
        assert!(s.matrix.diagonal().iter().all(|&d| d > 0.0));
        assert!(solve(&s).unwrap().values.iter().all(|&v| v == 0.0));
        // duplicates are rejected
        let dup = DirichletBC { vertices: vec![0, 0], values: vec![1.0, 1.0] };
        assert!(apply_dirichlet(assemble_stiffness(&m).unwrap(), &dup).is_err());
    }

    #[test]
    fn single_free_vertex() {
        let m = uniform_refine(&build_initial_mesh(&DomainGeometry::UnitSquare, 1.5).unwrap(), 1);
        let s = apply_dirichlet(assemble_stiffness(&m).unwrap(), &boundary_bc(&m, |p| p.x)).unwrap();
        let u = solve(&s).unwrap();
        let centre = m.vertices.iter().position(|&p| p == Point::new(0.5, 0.5)).unwrap();
        assert!((u.values[centre] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn affine_fields_reproduced() {
        for seed in 0..3 {
            let m = random_mesh(seed);
            let g = |p: Point| 2.0 * p.x - 3.0 * p.y + 0.25;
            let s = apply_dirichlet(assemble_stiffness(&m).unwrap(), &boundary_bc(&m, g)).unwrap();
            let u = solve(&s).unwrap();
            for (v, p) in m.vertices.iter().enumerate() {
                assert!((u.values[v] - g(*p)).abs() < 1e-12);
            }
        }
    }

    fn manufactured_error(generation: usize) -> f64 {
        let m0 = build_initial_mesh(&DomainGeometry::UnitSquare, 0.75).unwrap();
        assert_eq!(m0.num_elements(), 8);
        let m = uniform_refine(&m0, generation);
        let exact = |p: Point| (PI * p.x).sin() * (PI * p.y).sin();
        let mut s = assemble_stiffness(&m).unwrap();
        let load = assemble_load(&m, |p| -2.0 * PI * PI * exact(p)).unwrap();
        s.rhs = load.iter().map(|l| -l).collect();
        let s = apply_dirichlet(s, &boundary_bc(&m, |_| 0.0)).unwrap();
        l2_error(&m, &solve(&s).unwrap(), exact)
    }

    #[test]
    fn manufactured_poisson_converges_at_second_order() {
        let errors: Vec<f64> = (2..=5).map(manufactured_error).collect();
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.6..=4.4).contains(&ratio), "ratio {ratio}, errors {errors:?}");
        }
    }

    fn is_non_obtuse(m: &TriMesh) -> bool {
        (0..m.num_elements()).all(|e| {
            let t = m.triangle(e);
            (0..3).all(|k| (t[(k + 1) % 3] - t[k]).dot(t[(k + 2) % 3] - t[k]) >= -1e-14)
        })
    }

    #[test]
    fn laplace_discrete_maximum_principle() {
        let hole = Rect { x0: 0.25, y0: 0.25, x1: 0.5, y1: 0.5 };
        let problem = PdeProblem {
            family: PdeFamily::Laplace,
            geometry: DomainGeometry::SquareWithHole { hole },
            load: None,
            bc: BoundaryValues { outer: 0.0, inner: 1.0 },
            seed: 0,
        };
        let m = uniform_refine(&build_initial_mesh(&problem.geometry, 0.18).unwrap(), 2);
        assert!(is_non_obtuse(&m));
        let u = solve_problem(&problem, &m).unwrap();
        assert!(u.values.iter().all(|&v| (-1e-8..=1.0 + 1e-8).contains(&v)));
        for (v, tag) in m.vertex_boundary_tags().iter().enumerate() {
            match tag {
                Some(crate::geometry::BoundaryTag::Inner) => assert_eq!(u.values[v], 1.0),
                Some(crate::geometry::BoundaryTag::Outer) => assert_eq!(u.values[v], 0.0),
                None => {}
            }
        }
    }

    #[test]
    fn constant_and_zero_solutions() {
        let mut problem = sample_problem(PdeFamily::Laplace, 4).unwrap();
        problem.bc = BoundaryValues { outer: 0.7, inner: 0.7 };
        let m = build_initial_mesh(&problem.geometry, 0.2).unwrap();
        assert!(solve_problem(&problem, &m).unwrap().values.iter().all(|&v| (v - 0.7).abs() < 1e-12));

        let mut poisson = sample_problem(PdeFamily::Poisson, 4).unwrap();
        let c = GaussianComponent::new(Point::new(0.2, 0.2), [1e-3, 1e-3], 0.0, 0.0);
        poisson.load = Some(GmmLoad { components: vec![c; 3] });
        let m = build_initial_mesh(&poisson.geometry, 0.2).unwrap();
        assert!(solve_problem(&poisson, &m).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn poisson_solution_is_non_positive() {
        let problem = sample_problem(PdeFamily::Poisson, 8).unwrap();
        let m = uniform_refine(&build_initial_mesh(&problem.geometry, 0.3).unwrap(), 2);
        let u = solve_problem(&problem, &m).unwrap();
        assert!(u.values.iter().any(|&v| v < 0.0));
        assert!(u.values.iter().all(|&v| v <= 1e-12));
    }

    #[test]
    fn interpolation() {
        let m = random_mesh(1);
        let lin = Solution { values: m.vertices.iter().map(|p| 2.0 * p.x + 3.0 * p.y).collect() };
        for (v, p) in m.vertices.iter().enumerate() {
            assert_eq!(interpolate(&m, &lin, *p).unwrap(), lin.values[v]);
        }
        let fine = uniform_refine(&m, 1);
        let mut coarse_vals = vec![0.0; fine.num_vertices()];
        for (v, p) in fine.vertices.iter().enumerate() {
            coarse_vals[v] = interpolate(&m, &lin, *p).unwrap();
        }
        let injected = Solution { values: coarse_vals };
        let (ic, ifn) = (Interpolator::new(&m), Interpolator::new(&fine));
        let mut rng = stream(5, StreamKey::Test, 0);
        let mut checked = 0;
        while checked < 500 {
            let p = Point::new(rng.random(), rng.random());
            let Ok((_, a)) = ic.eval(&lin.values, p) else { continue };
            let (_, b) = ifn.eval(&injected.values, p).unwrap();
            assert!((a - b).abs() < 1e-12);
            assert!((a - (2.0 * p.x + 3.0 * p.y)).abs() < 1e-12);
            checked += 1;
        }
        assert!(interpolate(&m, &lin, Point::new(0.9, 0.9)).is_err());
    }

    #[test]
    fn laplace_energy_does_not_grow_under_refinement() {
        // The boundary data is piecewise constant per boundary component, so
        // every mesh represents it exactly and the discrete spaces are nested:
        // the Dirichlet energy of the solution can only drop.
        let problem = sample_problem(PdeFamily::Laplace, 2).unwrap();
        let mut m = build_initial_mesh(&problem.geometry, 0.3).unwrap();
        let mut last = energy_norm(&m, &solve_problem(&problem, &m).unwrap()).unwrap();
        let mut rng = stream(9, StreamKey::Test, 0);
        for _ in 0..4 {
            let marks = MarkVector::new((0..m.num_elements()).map(|_| rng.random_bool(0.5)).collect());
            m = refine(&m, &marks).unwrap().0;
            let e = energy_norm(&m, &solve_problem(&problem, &m).unwrap()).unwrap();
            assert!(e <= last * (1.0 + 1e-8), "{e} > {last}");
            last = e;
        }
    }
}
