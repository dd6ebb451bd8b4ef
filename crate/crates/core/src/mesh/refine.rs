use super::{BoundaryEdge, EdgeTable, Element, MarkVector, MeshError, RefinementMap, TriMesh};

/// Refines all marked elements by two successive newest-vertex bisections.
///
/// Refinement is driven by edge marks: a marked element marks all three of its
/// edges. Closure then repeats two rules until nothing changes:
/// an element with any marked edge marks its refinement edge, and an element
/// whose refinement edge and exactly one further edge are marked marks the
/// remaining edge too. Every element therefore ends up with 0, 1 or 3 marked
/// edges and is split into 1, 2 or 4 children, and every marked edge is split
/// from both sides, so the result is conforming.
pub fn refine(mesh: &TriMesh, marks: &MarkVector) -> Result<(TriMesh, RefinementMap), MeshError> {
    let n = mesh.num_elements();
    if marks.len() != n {
        return Err(MeshError::MarkLength { marks: marks.len(), elements: n });
    }
    if !marks.marks.iter().any(|&m| m) {
        let mut same = mesh.clone();
        same.generation += 1;
        return Ok((same, RefinementMap::identity(n)));
    }
    let table = EdgeTable::new(mesh);
    let mut edge_marked = vec![false; table.len()];
    let mut work: Vec<usize> = Vec::new();
    for (e, &m) in marks.marks.iter().enumerate() {
        if m {
            for &id in &table.element_edges[e] {
                if !edge_marked[id] {
                    edge_marked[id] = true;
                    push_neighbors(&table, id, &mut work);
                }
            }
        }
    }
    while let Some(e) = work.pop() {
        let ids = table.element_edges[e];
        let r = mesh.elements[e].refinement_edge as usize;
        let count = ids.iter().filter(|&&id| edge_marked[id]).count();
        let mut newly = Vec::new();
        if count > 0 && !edge_marked[ids[r]] {
            newly.push(ids[r]);
        }
        let count_after = count + newly.len();
        if count_after == 2 {
            for &id in &ids {
                if !edge_marked[id] && !newly.contains(&id) {
                    newly.push(id);
                }
            }
        }
        for id in newly {
            edge_marked[id] = true;
            push_neighbors(&table, id, &mut work);
        }
    }

    let mut vertices = mesh.vertices.clone();
    let mut midpoint_of = vec![usize::MAX; table.len()];
    for (id, &(a, b)) in table.edges.iter().enumerate() {
        if edge_marked[id] {
            midpoint_of[id] = vertices.len();
            vertices.push(mesh.vertices[a].midpoint(mesh.vertices[b]));
        }
    }

    let mut elements = Vec::with_capacity(n * 2);
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    for (e, el) in mesh.elements.iter().enumerate() {
        let ids = table.element_edges[e];
        let r = el.refinement_edge as usize;
        if !edge_marked[ids[r]] {
            elements.push(*el);
        } else {
            let (first, second) = bisect(el, midpoint_of[ids[r]]);
            let apex = el.vertex_ids[r];
            let e1 = el.vertex_ids[(r + 1) % 3];
            let e2 = el.vertex_ids[(r + 2) % 3];
            // refinement edges of the children are the original edges (apex, e1) and (e2, apex)
            let edge_apex_e1 = ids[(r + 2) % 3];
            let edge_e2_apex = ids[(r + 1) % 3];
            debug_assert_eq!(el.edge((r + 2) % 3), (apex, e1));
            debug_assert_eq!(el.edge((r + 1) % 3), (e2, apex));
            for (child, edge_id) in [(first, edge_apex_e1), (second, edge_e2_apex)] {
                if edge_marked[edge_id] {
                    let (a, b) = bisect(&child, midpoint_of[edge_id]);
                    elements.push(a);
                    elements.push(b);
                } else {
                    elements.push(child);
                }
            }
        }
        offsets.push(elements.len());
    }
    let children: Vec<usize> = (0..elements.len()).collect();

    let mut boundary_edges = Vec::with_capacity(mesh.boundary_edges.len() * 2);
    let lookup = |a: usize, b: usize| -> Option<usize> {
        let key = if a < b { (a, b) } else { (b, a) };
        table.edges.binary_search(&key).ok()
    };
    for be in &mesh.boundary_edges {
        let (a, b) = be.vertices;
        match lookup(a, b) {
            Some(id) if edge_marked[id] => {
                let m = midpoint_of[id];
                boundary_edges.push(BoundaryEdge { vertices: (a, m), tag: be.tag });
                boundary_edges.push(BoundaryEdge { vertices: (m, b), tag: be.tag });
            }
            _ => boundary_edges.push(*be),
        }
    }

    let refined = TriMesh { vertices, elements, boundary_edges, generation: mesh.generation + 1 };
    Ok((refined, RefinementMap::from_raw(offsets, children)))
}

fn push_neighbors(table: &EdgeTable, id: usize, work: &mut Vec<usize>) {
    for &e in &table.edge_elements[id] {
        if e != usize::MAX {
            work.push(e);
        }
    }
}

/// Splits `el` across its refinement edge at vertex `mid`. The new vertex
/// becomes local vertex 0 of both children.
fn bisect(el: &Element, mid: usize) -> (Element, Element) {
    let r = el.refinement_edge as usize;
    let apex = el.vertex_ids[r];
    let e1 = el.vertex_ids[(r + 1) % 3];
    let e2 = el.vertex_ids[(r + 2) % 3];
    let level = el.level + 1;
    (
        Element { vertex_ids: [mid, apex, e1], refinement_edge: 0, level },
        Element { vertex_ids: [mid, e2, apex], refinement_edge: 0, level },
    )
}

/// `k` rounds of refinement with every element marked.
pub fn uniform_refine(mesh: &TriMesh, k: usize) -> TriMesh {
    uniform_refine_with_map(mesh, k).0
}

/// Like [`uniform_refine`], also returning the composed lineage map from
/// `mesh` to the result.
pub fn uniform_refine_with_map(mesh: &TriMesh, k: usize) -> (TriMesh, RefinementMap) {
    let mut current = mesh.clone();
    let mut maps = Vec::with_capacity(k);
    for _ in 0..k {
        let marks = MarkVector::all(current.num_elements());
        let (next, map) = refine(&current, &marks).expect("mark length matches by construction");
        current = next;
        maps.push(map);
    }
    let composed = if maps.is_empty() {
        RefinementMap::identity(mesh.num_elements())
    } else {
        compose_refinement_maps(&maps).expect("consecutive uniform maps are compatible")
    };
    (current, composed)
}

/// Composes consecutive lineage maps `δ^t, δ^{t+1}, …` into `δ^t_k`.
pub fn compose_refinement_maps(maps: &[RefinementMap]) -> Result<RefinementMap, MeshError> {
    let Some(first) = maps.first() else {
        return Err(MeshError::Composition("no maps to compose".into()));
    };
    let mut lists = first.to_lists();
    for (step, next) in maps.iter().enumerate().skip(1) {
        let prev_children = maps[step - 1].child_count();
        if next.parent_count() != prev_children {
            return Err(MeshError::Composition(format!(
                "map {} has {} parents but map {} produced {} children",
                step,
                next.parent_count(),
                step - 1,
                prev_children
            )));
        }
        for list in &mut lists {
            let mut expanded = Vec::with_capacity(list.len() * 2);
            for &c in list.iter() {
                expanded.extend_from_slice(next.children(c));
            }
            *list = expanded;
        }
    }
    Ok(RefinementMap::from_lists(&lists))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainGeometry, Point, Rect};
    use crate::mesh::build_initial_mesh;
    use crate::mesh::tests::single_triangle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square() -> TriMesh {
        build_initial_mesh(&DomainGeometry::UnitSquare, 1.5).unwrap()
    }

    #[test]
    fn marked_triangle_quarters() {
        let m = single_triangle();
        let (r, map) = refine(&m, &MarkVector::all(1)).unwrap();
        assert_eq!(r.num_elements(), 4);
        assert_eq!(map.children(0), &[0, 1, 2, 3]);
        for e in 0..4 {
            assert!((r.element_area(e) - 0.125).abs() < 1e-15);
        }
        r.check_conforming().unwrap();
    }

    #[test]
    fn no_marks_is_identity() {
        let m = square();
        let (r, map) = refine(&m, &MarkVector::none(2)).unwrap();
        assert_eq!(r.vertices, m.vertices);
        assert_eq!(r.elements, m.elements);
        assert!(map.is_identity());
    }

    #[test]
    fn closure_bisects_neighbor() {
        let m = square();
        let (r, map) = refine(&m, &MarkVector::new(vec![true, false])).unwrap();
        assert_eq!(map.children(0).len(), 4);
        assert!(map.children(1).len() >= 2);
        r.check_conforming().unwrap();
    }

    #[test]
    fn mark_length_checked() {
        assert!(matches!(
            refine(&square(), &MarkVector::all(3)),
            Err(MeshError::MarkLength { marks: 3, elements: 2 })
        ));
    }

    #[test]
    fn uniform_counts() {
        let m = square();
        assert_eq!(uniform_refine(&m, 0).elements, m.elements);
        assert_eq!(uniform_refine(&m, 1).num_elements(), 8);
        assert_eq!(uniform_refine(&m, 4).num_elements(), 512);
    }

    #[test]
    fn compose_examples() {
        let a = RefinementMap::from_lists(&[vec![0, 1]]);
        let b = RefinementMap::from_lists(&[vec![0, 1], vec![2]]);
        let c = compose_refinement_maps(&[a.clone(), b]).unwrap();
        assert_eq!(c.to_lists(), vec![vec![0, 1, 2]]);
        let id = RefinementMap::identity(2);
        assert_eq!(compose_refinement_maps(&[a.clone(), id]).unwrap(), a);
        let bad = RefinementMap::identity(5);
        assert!(compose_refinement_maps(&[a, bad]).is_err());
    }

    #[test]
    fn composed_chains_cover_final_mesh() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let hole = Rect { x0: 0.3, y0: 0.35, x1: 0.55, y1: 0.5 };
        let base = build_initial_mesh(&DomainGeometry::SquareWithHole { hole }, 0.5).unwrap();
        for _ in 0..100 {
            let mut mesh = base.clone();
            let mut maps = Vec::new();
            for _ in 0..3 {
                let p: f64 = rng.random_range(0.0..0.4);
                let marks = MarkVector::new((0..mesh.num_elements()).map(|_| rng.random_bool(p)).collect());
                let (next, map) = refine(&mesh, &marks).unwrap();
                maps.push(map);
                mesh = next;
            }
            let composed = compose_refinement_maps(&maps).unwrap();
            let total: usize = composed.iter().map(|c| c.len()).sum();
            assert_eq!(total, mesh.num_elements());
            composed.parents().unwrap();
        }
    }

    #[test]
    fn shape_regularity_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = build_initial_mesh(&DomainGeometry::LShaped { corner: Point::new(0.55, 0.7) }, 0.4).unwrap();
        let a0 = base.min_angle();
        let mut mesh = base;
        for _ in 0..4 {
            let marks = MarkVector::new((0..mesh.num_elements()).map(|_| rng.random_bool(0.3)).collect());
            mesh = refine(&mesh, &marks).unwrap().0;
        }
        assert!(mesh.min_angle() >= 0.5 * a0);
    }
}
