//! Random elliptic problem instances: Laplace on a square with a rectangular
//! hole, and Poisson with a Gaussian-mixture load on an L-shaped domain.

mod hexfloat;

pub use hexfloat::{format_hex, parse_hex};

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundaryTag, DomainGeometry, Point, Rect};
use crate::rng::{mix_seed, stream, StreamKey};

/// Number of mixture components in sampled Poisson loads.
pub const GMM_COMPONENTS: usize = 3;
const REJECTION_CAP: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("rejection sampling exceeded {0} attempts")]
    RejectionCap(usize),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("problem record parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdeFamily {
    Laplace,
    Poisson,
}

impl PdeFamily {
    pub fn name(self) -> &'static str {
        match self {
            PdeFamily::Laplace => "laplace",
            PdeFamily::Poisson => "poisson",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "laplace" => Some(PdeFamily::Laplace),
            "poisson" => Some(PdeFamily::Poisson),
            _ => None,
        }
    }
}

/// A bivariate Gaussian whose covariance is `R(angle) diag(variances) R(angle)ᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    pub mean: Point,
    pub variances: [f64; 2],
    pub angle: f64,
    pub weight: f64,
    cov: [f64; 3],
    inv: [f64; 3],
    norm: f64,
}

impl GaussianComponent {
    pub fn new(mean: Point, variances: [f64; 2], angle: f64, weight: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let [v1, v2] = variances;
        let cxx = v1 * c * c + v2 * s * s;
        let cyy = v1 * s * s + v2 * c * c;
        let cxy = (v1 - v2) * c * s;
        let det = cxx * cyy - cxy * cxy;
        Self {
            mean,
            variances,
            angle,
            weight,
            cov: [cxx, cxy, cyy],
            inv: [cyy / det, -cxy / det, cxx / det],
            norm: 1.0 / (2.0 * PI * det.sqrt()),
        }
    }

    /// Covariance as `[[xx, xy], [xy, yy]]`.
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        [[self.cov[0], self.cov[1]], [self.cov[1], self.cov[2]]]
    }

    /// Normal density (without the mixture weight).
    pub fn density(&self, p: Point) -> f64 {
        let d = p - self.mean;
        let q = self.inv[0] * d.x * d.x + 2.0 * self.inv[1] * d.x * d.y + self.inv[2] * d.y * d.y;
        self.norm * (-0.5 * q).exp()
    }

    /// The same Gaussian after `p ↦ rotation·p + translation`.
    pub fn transformed(&self, rotation: f64, translation: Point) -> Self {
        let (s, c) = rotation.sin_cos();
        let m = self.mean;
        let mean = Point::new(c * m.x - s * m.y + translation.x, s * m.x + c * m.y + translation.y);
        Self::new(mean, self.variances, self.angle + rotation, self.weight)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmLoad {
    pub components: Vec<GaussianComponent>,
}

impl GmmLoad {
    pub fn eval(&self, p: Point) -> f64 {
        self.components.iter().map(|c| c.weight * c.density(p)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryValues {
    pub outer: f64,
    pub inner: f64,
}

impl BoundaryValues {
    pub fn value(&self, tag: BoundaryTag) -> f64 {
        match tag {
            BoundaryTag::Outer => self.outer,
            BoundaryTag::Inner => self.inner,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeProblem {
    pub family: PdeFamily,
    pub geometry: DomainGeometry,
    pub load: Option<GmmLoad>,
    pub bc: BoundaryValues,
    /// Seed this instance was sampled from (0 when sampled from a caller RNG).
    pub seed: u64,
}

impl PdeProblem {
    /// Load value at `p`; only Poisson problems have one.
    pub fn eval_load(&self, p: Point) -> Result<f64, ProblemError> {
        match (&self.family, &self.load) {
            (PdeFamily::Poisson, Some(load)) => Ok(load.eval(p)),
            _ => Err(ProblemError::Invalid("load requested on a problem without a load function".into())),
        }
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        self.geometry.validate().map_err(|e| ProblemError::Invalid(e.to_string()))?;
        match (self.family, &self.load) {
            (PdeFamily::Laplace, None) => Ok(()),
            (PdeFamily::Poisson, Some(load)) => {
                if self.bc.outer != 0.0 || self.bc.inner != 0.0 {
                    return Err(ProblemError::Invalid("Poisson problems use zero boundary values".into()));
                }
                if load.components.iter().any(|c| !(c.weight >= 0.0) || c.variances.iter().any(|&v| !(v > 0.0))) {
                    return Err(ProblemError::Invalid("mixture needs non-negative weights and positive variances".into()));
                }
                Ok(())
            }
            (PdeFamily::Laplace, Some(_)) => Err(ProblemError::Invalid("Laplace problems have no load".into())),
            (PdeFamily::Poisson, None) => Err(ProblemError::Invalid("Poisson problems need a load".into())),
        }
    }
}

/// Square with a hole: side lengths ~ U(0.05, 0.25) each, center ~ U(0.2, 0.8)².
/// Boundary values are 0 on the outer square and 1 on the hole.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R) -> PdeProblem {
    let width = rng.random_range(0.05..0.25);
    let height = rng.random_range(0.05..0.25);
    let center = Point::new(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8));
    PdeProblem {
        family: PdeFamily::Laplace,
        geometry: DomainGeometry::SquareWithHole { hole: Rect::from_center(center, width, height) },
        load: None,
        bc: BoundaryValues { outer: 0.0, inner: 1.0 },
        seed: 0,
    }
}

/// L-shaped domain with cut-off corner ~ U(0.2, 0.95)² and a three-component
/// Gaussian mixture load.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R) -> Result<PdeProblem, ProblemError> {
    let corner = Point::new(rng.random_range(0.2..0.95), rng.random_range(0.2..0.95));
    let geometry = DomainGeometry::LShaped { corner };
    let (lo, hi) = (0.0003f64.ln(), 0.003f64.ln());
    let mut raw = Vec::with_capacity(GMM_COMPONENTS);
    for _ in 0..GMM_COMPONENTS {
        let mut mean = None;
        for _ in 0..REJECTION_CAP {
            let p = Point::new(rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
            if !(p.x >= corner.x && p.y >= corner.y) {
                mean = Some(p);
                break;
            }
        }
        let mean = mean.ok_or(ProblemError::RejectionCap(REJECTION_CAP))?;
        let variances = [rng.random_range(lo..hi).exp(), rng.random_range(lo..hi).exp()];
        let angle = rng.random_range(0.0..PI);
        let z: f64 = rng.sample(StandardNormal);
        raw.push((mean, variances, angle, z.exp() + 1.0));
    }
    let total: f64 = raw.iter().map(|r| r.3).sum();
    let components = raw.into_iter().map(|(m, v, a, w)| GaussianComponent::new(m, v, a, w / total)).collect();
    Ok(PdeProblem {
        family: PdeFamily::Poisson,
        geometry,
        load: Some(GmmLoad { components }),
        bc: BoundaryValues { outer: 0.0, inner: 0.0 },
        seed: 0,
    })
}

/// Samples one problem as a pure function of `seed`.
pub fn sample_problem(family: PdeFamily, seed: u64) -> Result<PdeProblem, ProblemError> {
    let mut rng = stream(seed, StreamKey::Problems, 0);
    let mut problem = match family {
        PdeFamily::Laplace => sample_laplace(&mut rng),
        PdeFamily::Poisson => sample_poisson(&mut rng)?,
    };
    problem.seed = seed;
    Ok(problem)
}

/// Fixed evaluation problems: problem `i` depends only on `(seed, i)`.
pub fn sample_eval_suite(family: PdeFamily, seed: u64, n: usize) -> Result<Vec<PdeProblem>, ProblemError> {
    (0..n).map(|i| sample_problem(family, mix_seed(seed ^ 0x5eed_5u64 << 40, i as u64))).collect()
}

fn hex_fields(values: &[f64]) -> String {
    values.iter().map(|&v| format_hex(v)).collect::<Vec<_>>().join(" ")
}

/// Serialises a problem as a text record with hexadecimal floats.
pub fn write_problem(problem: &PdeProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "pde-problem v1");
    let _ = writeln!(out, "family {}", problem.family.name());
    let _ = writeln!(out, "seed {}", problem.seed);
    match problem.geometry {
        DomainGeometry::UnitSquare => {
            let _ = writeln!(out, "domain unit_square");
        }
        DomainGeometry::SquareWithHole { hole } => {
            let _ = writeln!(out, "domain square_with_hole {}", hex_fields(&[hole.x0, hole.y0, hole.x1, hole.y1]));
        }
        DomainGeometry::LShaped { corner } => {
            let _ = writeln!(out, "domain l_shaped {}", hex_fields(&[corner.x, corner.y]));
        }
    }
    let _ = writeln!(out, "boundary {}", hex_fields(&[problem.bc.outer, problem.bc.inner]));
    let comps = problem.load.as_ref().map_or(&[][..], |l| &l.components[..]);
    let _ = writeln!(out, "components {}", comps.len());
    for c in comps {
        let _ = writeln!(
            out,
            "component {}",
            hex_fields(&[c.mean.x, c.mean.y, c.variances[0], c.variances[1], c.angle, c.weight])
        );
    }
    let _ = writeln!(out, "end");
    out
}

pub fn write_problems(problems: &[PdeProblem]) -> String {
    problems.iter().map(write_problem).collect()
}

/// Parses every record in `text`.
pub fn read_problems(text: &str) -> Result<Vec<PdeProblem>, ProblemError> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
    while lines.peek().is_some() {
        out.push(read_one(&mut lines)?);
    }
    Ok(out)
}

fn read_one<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>) -> Result<PdeProblem, ProblemError> {
    let mut next = |expect: &str| -> Result<(usize, Vec<&'a str>), ProblemError> {
        let (n, l) = lines.next().ok_or(ProblemError::Parse { line: 0, msg: format!("expected '{expect}'") })?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.first() != Some(&expect.split_whitespace().next().unwrap()) {
            return Err(ProblemError::Parse { line: n + 1, msg: format!("expected '{expect}'") });
        }
        Ok((n + 1, toks))
    };
    let hex = |line: usize, t: &str| parse_hex(t).ok_or(ProblemError::Parse { line, msg: format!("bad hex float '{t}'") });
    let (line, header) = next("pde-problem")?;
    if header.get(1) != Some(&"v1") {
        return Err(ProblemError::Parse { line, msg: "unsupported record version".into() });
    }
    let (line, fam) = next("family")?;
    let family = fam
        .get(1)
        .and_then(|s| PdeFamily::parse(s))
        .ok_or(ProblemError::Parse { line, msg: "unknown family".into() })?;
    let (line, seed) = next("seed")?;
    let seed = seed.get(1).and_then(|s| s.parse().ok()).ok_or(ProblemError::Parse { line, msg: "bad seed".into() })?;
    let (line, dom) = next("domain")?;
    let nums = |from: usize, count: usize, toks: &[&str], line: usize| -> Result<Vec<f64>, ProblemError> {
        if toks.len() != from + count {
            return Err(ProblemError::Parse { line, msg: format!("expected {count} values") });
        }
        toks[from..].iter().map(|t| hex(line, t)).collect()
    };
    let geometry = match dom.get(1).copied() {
        Some("unit_square") => DomainGeometry::UnitSquare,
        Some("square_with_hole") => {
            let v = nums(2, 4, &dom, line)?;
            DomainGeometry::SquareWithHole { hole: Rect { x0: v[0], y0: v[1], x1: v[2], y1: v[3] } }
        }
        Some("l_shaped") => {
            let v = nums(2, 2, &dom, line)?;
            DomainGeometry::LShaped { corner: Point::new(v[0], v[1]) }
        }
        _ => return Err(ProblemError::Parse { line, msg: "unknown domain kind".into() }),
    };
    let (line, bnd) = next("boundary")?;
    let b = nums(1, 2, &bnd, line)?;
    let (line, comps) = next("components")?;
    let count: usize = comps.get(1).and_then(|s| s.parse().ok()).ok_or(ProblemError::Parse { line, msg: "bad component count".into() })?;
    let mut components = Vec::with_capacity(count);
    for _ in 0..count {
        let (line, c) = next("component")?;
        let v = nums(1, 6, &c, line)?;
        components.push(GaussianComponent::new(Point::new(v[0], v[1]), [v[2], v[3]], v[4], v[5]));
    }
    next("end")?;
    let problem = PdeProblem {
        family,
        geometry,
        load: (family == PdeFamily::Poisson).then_some(GmmLoad { components }),
        bc: BoundaryValues { outer: b[0], inner: b[1] },
        seed,
    };
    Ok(problem)
}
