//! Plain-text mesh records and SVG rendering.
//!
//! Text layout:
//!
//! ```text
//! tri-mesh v1
//! <vertex count>
//! <element count>
//! x y [u]          one line per vertex, u present when a solution is attached
//! i j k flags      one line per element
//! ```
//!
//! Element lines start at the newest vertex, so the refinement edge is always
//! `(j, k)`. `flags` holds one digit per local edge `(j,k)`, `(k,i)`, `(i,j)`:
//! `0` interior, `1` outer boundary, `2` inner boundary.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{BoundaryEdge, EdgeTable, Element, MeshError, TriMesh};
use crate::geometry::{BoundaryTag, Point};

pub fn write_mesh_text(mesh: &TriMesh, solution: Option<&[f64]>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "tri-mesh v1");
    let _ = writeln!(out, "{}", mesh.num_vertices());
    let _ = writeln!(out, "{}", mesh.num_elements());
    for (i, v) in mesh.vertices.iter().enumerate() {
        match solution {
            Some(u) => {
                let _ = writeln!(out, "{:?} {:?} {:?}", v.x, v.y, u[i]);
            }
            None => {
                let _ = writeln!(out, "{:?} {:?}", v.x, v.y);
            }
        }
    }
    let mut tags: HashMap<(usize, usize), BoundaryTag> = HashMap::new();
    for be in &mesh.boundary_edges {
        let (a, b) = be.vertices;
        tags.insert((a.min(b), a.max(b)), be.tag);
    }
    for el in &mesh.elements {
        let r = el.refinement_edge as usize;
        let ids = [el.vertex_ids[r], el.vertex_ids[(r + 1) % 3], el.vertex_ids[(r + 2) % 3]];
        let mut flags = String::with_capacity(3);
        for k in 0..3 {
            let (a, b) = (ids[(k + 1) % 3], ids[(k + 2) % 3]);
            flags.push(match tags.get(&(a.min(b), a.max(b))) {
                None => '0',
                Some(BoundaryTag::Outer) => '1',
                Some(BoundaryTag::Inner) => '2',
            });
        }
        let _ = writeln!(out, "{} {} {} {}", ids[0], ids[1], ids[2], flags);
    }
    out
}

/// Parses a record written by [`write_mesh_text`]. Element levels and the
/// generation counter are not part of the format and read back as zero.
pub fn read_mesh_text(text: &str) -> Result<(TriMesh, Option<Vec<f64>>), MeshError> {
    let err = |m: &str| MeshError::Parse(m.to_string());
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some("tri-mesh v1") {
        return Err(err("missing 'tri-mesh v1' header"));
    }
    let nv: usize = lines.next().and_then(|l| l.trim().parse().ok()).ok_or_else(|| err("bad vertex count"))?;
    let ne: usize = lines.next().and_then(|l| l.trim().parse().ok()).ok_or_else(|| err("bad element count"))?;
    let mut vertices = Vec::with_capacity(nv);
    let mut values = Vec::new();
    let mut with_solution = None;
    for _ in 0..nv {
        let line = lines.next().ok_or_else(|| err("truncated vertex block"))?;
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| err("bad vertex coordinate")))
            .collect::<Result<_, _>>()?;
        let has_u = match nums.len() {
            2 => false,
            3 => true,
            _ => return Err(err("vertex line needs 2 or 3 numbers")),
        };
        if *with_solution.get_or_insert(has_u) != has_u {
            return Err(err("inconsistent solution columns"));
        }
        vertices.push(Point::new(nums[0], nums[1]));
        if has_u {
            values.push(nums[2]);
        }
    }
    let mut elements = Vec::with_capacity(ne);
    let mut boundary_edges = Vec::new();
    for _ in 0..ne {
        let line = lines.next().ok_or_else(|| err("truncated element block"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 || toks[3].len() != 3 {
            return Err(err("element line must be 'i j k flags'"));
        }
        let mut ids = [0usize; 3];
        for k in 0..3 {
            ids[k] = toks[k].parse().map_err(|_| err("bad vertex index"))?;
            if ids[k] >= nv {
                return Err(err("vertex index out of range"));
            }
        }
        for (k, c) in toks[3].chars().enumerate() {
            let tag = match c {
                '0' => None,
                '1' => Some(BoundaryTag::Outer),
                '2' => Some(BoundaryTag::Inner),
                _ => return Err(err("boundary flag must be 0, 1 or 2")),
            };
            if let Some(tag) = tag {
                boundary_edges.push(BoundaryEdge { vertices: (ids[(k + 1) % 3], ids[(k + 2) % 3]), tag });
            }
        }
        elements.push(Element { vertex_ids: ids, refinement_edge: 0, level: 0 });
    }
    let mesh = TriMesh { vertices, elements, boundary_edges, generation: 0 };
    Ok((mesh, with_solution.unwrap_or(false).then_some(values)))
}

/// Color range used when mapping scalars to fill colors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ColorScale {
    Linear,
    /// log10 of the values; non-positive values get the lowest color.
    Log,
}

const VIRIDIS: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

fn colormap(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let s = t * (VIRIDIS.len() - 1) as f64;
    let i = (s.floor() as usize).min(VIRIDIS.len() - 2);
    let f = s - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Renders filled triangles colored by one scalar per element.
pub fn render_svg(mesh: &TriMesh, element_values: &[f64], scale: ColorScale, size_px: u32) -> String {
    let transformed: Vec<f64> = element_values
        .iter()
        .map(|&v| match scale {
            ColorScale::Linear => v,
            ColorScale::Log => if v > 0.0 { v.log10() } else { f64::NAN },
        })
        .collect();
    let finite = transformed.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let s = size_px as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size_px}" height="{size_px}" viewBox="0 0 {size_px} {size_px}">"#
    );
    let edge_count = EdgeTable::new(mesh).len();
    let stroke = if edge_count > 20_000 { 0.2 } else { 0.5 };
    for (e, v) in transformed.iter().enumerate() {
        let t = mesh.triangle(e);
        let pts: Vec<String> = t.iter().map(|p| format!("{:.3},{:.3}", p.x * s, (1.0 - p.y) * s)).collect();
        let color = if v.is_finite() { colormap((v - lo) / span) } else { colormap(0.0) };
        let _ = writeln!(
            out,
            r##"<polygon points="{}" fill="{color}" stroke="#222" stroke-width="{stroke}"/>"##,
            pts.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{DomainGeometry, Rect};
    use crate::mesh::{build_initial_mesh, refine, MarkVector};

    #[test]
    fn text_round_trip_is_exact() {
        let hole = Rect { x0: 0.3, y0: 0.3, x1: 0.45, y1: 0.55 };
        let m0 = build_initial_mesh(&DomainGeometry::SquareWithHole { hole }, 0.4).unwrap();
        let mut marks = MarkVector::none(m0.num_elements());
        marks.marks[3] = true;
        let (m, _) = refine(&m0, &marks).unwrap();
        let u: Vec<f64> = (0..m.num_vertices()).map(|i| (i as f64).sin() / 7.0).collect();
        let text = write_mesh_text(&m, Some(&u));
        assert!(text.starts_with("tri-mesh v1\n"));
        let (back, vals) = read_mesh_text(&text).unwrap();
        assert_eq!(back.vertices, m.vertices);
        assert_eq!(vals.unwrap(), u);
        for (a, b) in back.elements.iter().zip(&m.elements) {
            assert_eq!(a.edge(0), b.edge(b.refinement_edge as usize));
        }
        back.check_conforming().unwrap();
        let mut t1: Vec<_> = back.boundary_edges.iter().map(|b| (b.vertices.0.min(b.vertices.1), b.vertices.0.max(b.vertices.1), b.tag)).collect();
        let mut t2: Vec<_> = m.boundary_edges.iter().map(|b| (b.vertices.0.min(b.vertices.1), b.vertices.0.max(b.vertices.1), b.tag)).collect();
        t1.sort();
        t2.sort();
        assert_eq!(t1, t2);
        // writing again reproduces the same text
        assert_eq!(write_mesh_text(&back, Some(&u)), text);
    }

    #[test]
    fn rejects_bad_header() {
        assert!(read_mesh_text("mesh\n1\n1\n").is_err());
    }

    #[test]
    fn svg_has_one_polygon_per_element() {
        let m = build_initial_mesh(&DomainGeometry::UnitSquare, 0.5).unwrap();
        let vals: Vec<f64> = (0..m.num_elements()).map(|e| e as f64).collect();
        let svg = render_svg(&m, &vals, ColorScale::Linear, 200);
        assert_eq!(svg.matches("<polygon").count(), m.num_elements());
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
