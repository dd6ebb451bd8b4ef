//! SVG pictures of refined meshes.

use crate::env::EpisodeState;
use crate::mesh::{render_svg, ColorScale};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderField {
    /// Element mean of the discrete solution.
    Solution,
    /// Normalized per-element error, log color scale.
    Error,
}

impl RenderField {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "solution" => Some(RenderField::Solution),
            "error" => Some(RenderField::Error),
            _ => None,
        }
    }
}

/// The current mesh of `state`, colored by `field`.
pub fn render_state(state: &EpisodeState, field: RenderField, size_px: u32) -> String {
    let mesh = &state.mesh;
    match field {
        RenderField::Solution => {
            let values: Vec<f64> = mesh
                .elements
                .iter()
                .map(|e| e.vertex_ids.iter().map(|&v| state.solution.values[v]).sum::<f64>() / 3.0)
                .collect();
            render_svg(mesh, &values, ColorScale::Linear, size_px)
        }
        RenderField::Error => render_svg(mesh, &state.errors.normalized, ColorScale::Log, size_px),
    }
}
