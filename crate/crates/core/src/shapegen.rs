//! Seeded synthesis of the eight 2D contour datasets.
//!
//! Every shape is sampled by drawing `u ~ U[0, 1)` from a [`SplitMix64`]
//! stream and mapping it onto the contour:
//!
//! - regular n-gons are inscribed in the unit circle with the first vertex at
//!   angle π/2; `u` is an arc-length fraction of the perimeter,
//! - the circle uses θ = 2πu,
//! - the spiral is Archimedean, r(θ) = θ/(4π) with θ = 4πu (two turns).
//!
//! The raw contour points are then mapped into `[-1, 1]²` with
//! [`normalize_to_unit_box`].

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::netcore::Point;
use crate::rng::SplitMix64;
use crate::{Error, Result};

pub const DEFAULT_SAMPLES: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Triangle,
    Square,
    Pentagon,
    Hexagon,
    Heptagon,
    Octagon,
    Circle,
    Spiral,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 8] = [
        ShapeKind::Triangle,
        ShapeKind::Square,
        ShapeKind::Pentagon,
        ShapeKind::Hexagon,
        ShapeKind::Heptagon,
        ShapeKind::Octagon,
        ShapeKind::Circle,
        ShapeKind::Spiral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Triangle => "triangle",
            ShapeKind::Square => "square",
            ShapeKind::Pentagon => "pentagon",
            ShapeKind::Hexagon => "hexagon",
            ShapeKind::Heptagon => "heptagon",
            ShapeKind::Octagon => "octagon",
            ShapeKind::Circle => "circle",
            ShapeKind::Spiral => "spiral",
        }
    }

    /// Vertex count for the polygon members, `None` for circle and spiral.
    pub fn vertex_count(self) -> Option<usize> {
        match self {
            ShapeKind::Triangle => Some(3),
            ShapeKind::Square => Some(4),
            ShapeKind::Pentagon => Some(5),
            ShapeKind::Hexagon => Some(6),
            ShapeKind::Heptagon => Some(7),
            ShapeKind::Octagon => Some(8),
            ShapeKind::Circle | ShapeKind::Spiral => None,
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown shape `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeDataset {
    pub kind: ShapeKind,
    pub seed: u64,
    pub points: Vec<Point>,
}

impl ShapeDataset {
    pub fn count(&self) -> usize {
        self.points.len()
    }
}

/// Vertices of the regular `n`-gon inscribed in the unit circle, first vertex at π/2.
pub fn polygon_vertices(n: usize) -> Vec<Point> {
    (0..n)
        .map(|k| {
            let a = FRAC_PI_2 + 2.0 * PI * k as f64 / n as f64;
            [a.cos(), a.sin()]
        })
        .collect()
}

/// Maps a unit draw `u ∈ [0, 1)` onto the raw (un-normalized) contour.
pub fn contour_point(kind: ShapeKind, u: f64) -> Point {
    match kind.vertex_count() {
        Some(n) => {
            let t = u * n as f64;
            let edge = (t.floor() as usize).min(n - 1);
            let frac = t - edge as f64;
            let a = FRAC_PI_2 + 2.0 * PI * edge as f64 / n as f64;
            let b = FRAC_PI_2 + 2.0 * PI * (edge + 1) as f64 / n as f64;
            let (p, q) = ([a.cos(), a.sin()], [b.cos(), b.sin()]);
            [p[0] + frac * (q[0] - p[0]), p[1] + frac * (q[1] - p[1])]
        }
        None if kind == ShapeKind::Circle => {
            let theta = 2.0 * PI * u;
            [theta.cos(), theta.sin()]
        }
        None => {
            let theta = 4.0 * PI * u;
            let r = theta / (4.0 * PI);
            [r * theta.cos(), r * theta.sin()]
        }
    }
}

/// Raw contour samples before normalization, in draw order.
pub fn raw_contour(kind: ShapeKind, count: usize, seed: u64) -> Vec<Point> {
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| contour_point(kind, rng.next_f64()))
        .collect()
}

pub fn generate(kind: ShapeKind, count: usize, seed: u64) -> Result<ShapeDataset> {
    if count == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let points = normalize_to_unit_box(&raw_contour(kind, count, seed))?;
    Ok(ShapeDataset { kind, seed, points })
}

/// Per-axis affine map of `[min, max]` onto `[-1, 1]`; a degenerate axis maps to 0.
pub fn normalize_to_unit_box(points: &[Point]) -> Result<Vec<Point>> {
    if points.is_empty() {
        return Err(Error::invalid("cannot normalize an empty point set"));
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let map = |v: f64, a: usize| {
        if hi[a] == lo[a] {
            0.0
        } else {
            2.0 * ((v - lo[a]) / (hi[a] - lo[a])) - 1.0
        }
    };
    Ok(points
        .iter()
        .map(|p| [map(p[0], 0), map(p[1], 1)])
        .collect())
}

/// Writes `x,y` then one `%.8f,%.8f` row per point. Returns bytes written.
pub fn export_csv<W: Write>(dataset: &ShapeDataset, mut out: W) -> Result<u64> {
    let mut written = 0u64;
    let mut emit = |line: &str, written: &mut u64| -> Result<()> {
        out.write_all(line.as_bytes())
            .map_err(|source| Error::PartialWrite {
                written: *written,
                source,
            })?;
        *written += line.len() as u64;
        Ok(())
    };
    emit("x,y\n", &mut written)?;
    for p in &dataset.points {
        emit(&format!("{:.8},{:.8}\n", p[0], p[1]), &mut written)?;
    }
    out.flush()
        .map_err(|source| Error::PartialWrite { written, source })?;
    Ok(written)
}

/// Parses a CSV produced by [`export_csv`].
pub fn read_csv<R: BufRead>(input: R) -> Result<Vec<Point>> {
    let mut lines = input.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim() == "x,y" => {}
        other => {
            return Err(Error::Format(format!(
                "expected `x,y` header, found {other:?}"
            )))
        }
    }
    let mut points = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (x, y) = line
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("row {}: missing comma", n + 1)))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("row {}: {e}", n + 1)))
        };
        points.push([parse(x)?, parse(y)?]);
    }
    Ok(points)
}
