use super::{BoundaryEdge, Element, MeshError, TriMesh};
use crate::geometry::{BoundaryTag, DomainError, DomainGeometry, Point};

/// Meshes an axis-aligned polygonal domain with right triangles.
///
/// The domain corners define a tensor grid of breakpoints; every interval is
/// subdivided evenly so that cell diagonals stay below `max_element_diameter`.
/// Cells inside the hole (or the cut-off corner) are dropped and every
/// remaining cell is split along a diagonal whose direction alternates in a
/// checkerboard pattern. The hypotenuse of each triangle is its refinement edge.
pub fn build_initial_mesh(
    domain: &DomainGeometry,
    max_element_diameter: f64,
) -> Result<TriMesh, MeshError> {
    domain.validate()?;
    if !(max_element_diameter.is_finite() && max_element_diameter > 0.0) {
        return Err(DomainError::Invalid("maximum element diameter must be positive".into()).into());
    }
    let spacing = max_element_diameter / std::f64::consts::SQRT_2;
    let xs = subdivide(&domain.breakpoints(0), spacing);
    let ys = subdivide(&domain.breakpoints(1), spacing);
    let (nx, ny) = (xs.len() - 1, ys.len() - 1);

    let cell_in = |i: usize, j: usize| -> bool {
        let c = Point::new(0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1]));
        domain.contains_cell_center(c)
    };
    let inside: Vec<bool> = (0..ny).flat_map(|j| (0..nx).map(move |i| (i, j))).map(|(i, j)| cell_in(i, j)).collect();
    let is_in = |i: isize, j: isize| -> bool {
        i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny && inside[j as usize * nx + i as usize]
    };

    // number the grid points that touch at least one kept cell
    let mut vid = vec![usize::MAX; (nx + 1) * (ny + 1)];
    let mut vertices = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            let (ii, jj) = (i as isize, j as isize);
            let used = is_in(ii - 1, jj - 1) || is_in(ii, jj - 1) || is_in(ii - 1, jj) || is_in(ii, jj);
            if used {
                vid[j * (nx + 1) + i] = vertices.len();
                vertices.push(Point::new(xs[i], ys[j]));
            }
        }
    }
    let v = |i: usize, j: usize| vid[j * (nx + 1) + i];

    let mut elements = Vec::new();
    let mut boundary_edges = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if !inside[j * nx + i] {
                continue;
            }
            let (a, b, c, d) = (v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1));
            // vertex 0 is the right-angle corner so that edge (1, 2) is the hypotenuse
            if (i + j) % 2 == 0 {
                elements.push(Element { vertex_ids: [b, c, a], refinement_edge: 0, level: 0 });
                elements.push(Element { vertex_ids: [d, a, c], refinement_edge: 0, level: 0 });
            } else {
                elements.push(Element { vertex_ids: [a, b, d], refinement_edge: 0, level: 0 });
                elements.push(Element { vertex_ids: [c, d, b], refinement_edge: 0, level: 0 });
            }
            let (ii, jj) = (i as isize, j as isize);
            // counter-clockwise cell edges, keeping the domain on the left
            let sides = [
                (!is_in(ii, jj - 1), a, b),
                (!is_in(ii + 1, jj), b, c),
                (!is_in(ii, jj + 1), c, d),
                (!is_in(ii - 1, jj), d, a),
            ];
            for (open, p, q) in sides {
                if open {
                    let mid = vertices[p].midpoint(vertices[q]);
                    let tag = if domain.is_inner_boundary(mid) { BoundaryTag::Inner } else { BoundaryTag::Outer };
                    boundary_edges.push(BoundaryEdge { vertices: (p, q), tag });
                }
            }
        }
    }
    if elements.is_empty() {
        return Err(DomainError::Invalid("domain produced no elements".into()).into());
    }
    Ok(TriMesh { vertices, elements, boundary_edges, generation: 0 })
}

fn subdivide(breaks: &[f64], spacing: f64) -> Vec<f64> {
    let mut out = vec![breaks[0]];
    for w in breaks.windows(2) {
        let len = w[1] - w[0];
        let n = ((len / spacing) - 1e-12).ceil().max(1.0) as usize;
        for k in 1..n {
            out.push(w[0] + len * k as f64 / n as f64);
        }
        out.push(w[1]);
    }
    out
}
