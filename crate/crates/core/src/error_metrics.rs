//! Per-element errors against a uniformly refined reference solution, and the
//! episode-level normalized error metrics.
//!
//! The reference mesh is integrated with one point per element: its midpoint,
//! weighted by the element area. Every reference midpoint is assigned to
//! exactly one element of the mesh under evaluation (lowest index on ties).

use thiserror::Error;

use crate::fem::{solve_problem, FemError, Interpolator, Solution};
use crate::geometry::Point;
use crate::mesh::{uniform_refine, MeshError, TriMesh};
use crate::problems::PdeProblem;

/// Uniform refinements behind the reference used for training rewards.
pub const TRAIN_REFERENCE_DEPTH: usize = 4;
/// Uniform refinements behind the reference used for evaluation metrics.
pub const EVAL_REFERENCE_DEPTH: usize = 5;
const DEGENERATE_TOTAL: f64 = 1e-15;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("reference midpoint could not be assigned to an element: {0}")]
    Integration(MeshError),
    #[error("initial error {0:e} is too small to normalise by")]
    Degenerate(f64),
    #[error(transparent)]
    Fem(#[from] FemError),
}

#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub mesh: TriMesh,
    pub solution: Solution,
    pub midpoints: Vec<Point>,
    pub areas: Vec<f64>,
    /// Reference solution at each midpoint.
    pub values: Vec<f64>,
}

impl ReferenceSolution {
    /// Solves `problem` on `depth` uniform refinements of `initial`.
    pub fn build(problem: &PdeProblem, initial: &TriMesh, depth: usize) -> Result<Self, MetricsError> {
        let mesh = uniform_refine(initial, depth);
        let solution = solve_problem(problem, &mesh)?;
        Ok(Self::from_parts(mesh, solution))
    }

    pub fn from_parts(mesh: TriMesh, solution: Solution) -> Self {
        let n = mesh.num_elements();
        let mut midpoints = Vec::with_capacity(n);
        let mut areas = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        for (e, el) in mesh.elements.iter().enumerate() {
            midpoints.push(mesh.element_midpoint(e));
            areas.push(mesh.element_area(e));
            // the midpoint is the centroid, so interpolation is the vertex mean
            values.push(el.vertex_ids.iter().map(|&v| solution.values[v]).sum::<f64>() / 3.0);
        }
        Self { mesh, solution, midpoints, areas, values }
    }

    pub fn len(&self) -> usize {
        self.midpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.midpoints.is_empty()
    }

    /// `(element of mesh, u*(p) − u(p))` for every reference midpoint `p`.
    pub fn differences(&self, mesh: &TriMesh, solution: &Solution) -> Result<Vec<(usize, f64)>, MetricsError> {
        let interp = Interpolator::new(mesh);
        self.midpoints
            .iter()
            .zip(&self.values)
            .map(|(&p, &u_ref)| match interp.eval(&solution.values, p) {
                Ok((e, u)) => Ok((e, u_ref - u)),
                Err(FemError::Mesh(m)) => Err(MetricsError::Integration(m)),
                Err(other) => Err(other.into()),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementErrors {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub initial_total: f64,
}

impl ElementErrors {
    pub fn new(raw: Vec<f64>, initial_total: f64) -> Result<Self, MetricsError> {
        let normalized = normalize_errors(&raw, initial_total)?;
        Ok(Self { raw, normalized, initial_total })
    }

    pub fn total(&self) -> f64 {
        self.raw.iter().sum()
    }
}

/// Area-weighted absolute midpoint differences summed per element of `mesh`.
pub fn raw_element_errors(mesh: &TriMesh, solution: &Solution, reference: &ReferenceSolution) -> Result<Vec<f64>, MetricsError> {
    let mut err = vec![0.0; mesh.num_elements()];
    for ((e, d), a) in reference.differences(mesh, solution)?.into_iter().zip(&reference.areas) {
        err[e] += a * d.abs();
    }
    Ok(err)
}

pub fn normalize_errors(raw: &[f64], initial_total: f64) -> Result<Vec<f64>, MetricsError> {
    if !(initial_total > DEGENERATE_TOTAL) {
        return Err(MetricsError::Degenerate(initial_total));
    }
    Ok(raw.iter().map(|r| r / initial_total).collect())
}

fn weighted_sum(reference: &ReferenceSolution, diffs: &[(usize, f64)], power: i32) -> f64 {
    diffs.iter().zip(&reference.areas).map(|((_, d), a)| a * d.abs().powi(power)).sum()
}

fn metric(
    final_state: (&TriMesh, &Solution),
    initial_state: (&TriMesh, &Solution),
    reference: &ReferenceSolution,
    power: i32,
) -> Result<f64, MetricsError> {
    let num = weighted_sum(reference, &reference.differences(final_state.0, final_state.1)?, power);
    let den = weighted_sum(reference, &reference.differences(initial_state.0, initial_state.1)?, power);
    if !(den > 0.0) {
        return Err(MetricsError::Degenerate(den));
    }
    Ok(num / den)
}

/// `Σ A_r (u*(p_r) − u_T(p_r))² / Σ A_r (u*(p_r) − u_0(p_r))²`.
pub fn normalized_squared_error(
    final_state: (&TriMesh, &Solution),
    initial_state: (&TriMesh, &Solution),
    reference: &ReferenceSolution,
) -> Result<f64, MetricsError> {
    metric(final_state, initial_state, reference, 2)
}

/// The same ratio with absolute instead of squared differences.
pub fn normalized_linear_error(
    final_state: (&TriMesh, &Solution),
    initial_state: (&TriMesh, &Solution),
    reference: &ReferenceSolution,
) -> Result<f64, MetricsError> {
    metric(final_state, initial_state, reference, 1)
}
