use std::fmt::Write as _;

use super::pose::Pose;
use crate::error::{Error, Result};

/// Ordered 3D points, optionally with triangle connectivity.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    pub points: Vec<[f64; 3]>,
    pub faces: Option<Vec<[usize; 3]>>,
}

impl PointSet {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        let p = Self { points, faces: None };
        p.validate()?;
        Ok(p)
    }

    pub fn with_faces(points: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let p = Self {
            points,
            faces: Some(faces),
        };
        p.validate()?;
        Ok(p)
    }

    /// Interprets a flat `[x0, y0, z0, x1, ...]` buffer as points.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::contract(format!(
                "flat coordinate buffer of length {} is not a multiple of 3",
                flat.len()
            )));
        }
        Self::new(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point coordinates".into()));
        }
        if let Some(faces) = &self.faces {
            let n = self.points.len();
            if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
                return Err(Error::contract(format!("face {f:?} indexes past {n} vertices")));
            }
        }
        Ok(())
    }

    /// `scale · P · x + t` for every point; faces are carried over.
    pub fn transformed(&self, pose: &Pose) -> Self {
        Self {
            points: self.points.iter().map(|&p| pose.apply(p)).collect(),
            faces: self.faces.clone(),
        }
    }

    /// Applies a raw row-major `[A | t]` 3×4 block.
    pub fn affine(&self, alpha_p: &[f64]) -> Self {
        let a = alpha_p;
        Self {
            points: self
                .points
                .iter()
                .map(|p| {
                    let mut out = [0.0; 3];
                    for (r, o) in out.iter_mut().enumerate() {
                        *o = a[r * 4] * p[0] + a[r * 4 + 1] * p[1] + a[r * 4 + 2] * p[2] + a[r * 4 + 3];
                    }
                    out
                })
                .collect(),
            faces: self.faces.clone(),
        }
    }

    /// ASCII Wavefront OBJ with `v` and 1-based `f` records.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for p in &self.points {
            let _ = writeln!(s, "v {} {} {}", p[0], p[1], p[2]);
        }
        for f in self.faces.iter().flatten() {
            let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        s
    }

    /// Parses `v` and triangular `f` records; other records are ignored.
    /// Face tokens of the form `i/t/n` keep only the vertex index.
    pub fn from_obj(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        let mut faces = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let mut p = [0.0; 3];
                    for c in &mut p {
                        *c = it
                            .next()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| Error::format(format!("bad vertex on line {}", lineno + 1)))?;
                    }
                    points.push(p);
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|t| t.split('/').next().unwrap_or("").parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::format(format!("bad face on line {}", lineno + 1)))?;
                    if idx.len() != 3 || idx.contains(&0) {
                        return Err(Error::format(format!(
                            "line {}: only 1-based triangles are supported",
                            lineno + 1
                        )));
                    }
                    faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
                }
                _ => {}
            }
        }
        let faces = if faces.is_empty() { None } else { Some(faces) };
        let ps = Self { points, faces };
        ps.validate()?;
        Ok(ps)
    }
}

pub(crate) fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
