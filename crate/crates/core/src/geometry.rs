//! Axis-aligned 3D boxes and the overlap similarities used for association.
//!
//! Every box handled here has zero yaw, so intersections reduce to
//! per-axis interval arithmetic.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box: {0}")]
    InvalidInput(String),
}

pub type SemanticClass = u16;

/// Axis-aligned 3D bounding box with a detection score and class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    /// Yaw in radians. Always zero for boxes built from point extents.
    pub theta: f64,
    /// Extent along x.
    pub l: f64,
    /// Extent along y.
    pub w: f64,
    /// Extent along z.
    pub h: f64,
    pub score: f64,
    pub class_id: SemanticClass,
}

impl Box3D {
    /// Build a zero-yaw box, validating extents and score.
    pub fn new(
        center: [f64; 3],
        dims: [f64; 3],
        score: f64,
        class_id: SemanticClass,
    ) -> Result<Self, GeometryError> {
        let b = Box3D {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            theta: 0.0,
            l: dims[0],
            w: dims[1],
            h: dims[2],
            score,
            class_id,
        };
        b.validate()?;
        if !(0.0..=1.0).contains(&score) {
            return Err(GeometryError::InvalidInput(format!(
                "score {score} outside [0, 1]"
            )));
        }
        Ok(b)
    }

    pub fn center(&self) -> [f64; 3] {
        [self.cx, self.cy, self.cz]
    }

    pub fn dims(&self) -> [f64; 3] {
        [self.l, self.w, self.h]
    }

    pub fn volume(&self) -> f64 {
        self.l * self.w * self.h
    }

    /// Lower corner.
    pub fn min_corner(&self) -> [f64; 3] {
        [
            self.cx - self.l / 2.0,
            self.cy - self.w / 2.0,
            self.cz - self.h / 2.0,
        ]
    }

    /// Upper corner.
    pub fn max_corner(&self) -> [f64; 3] {
        [
            self.cx + self.l / 2.0,
            self.cy + self.w / 2.0,
            self.cz + self.h / 2.0,
        ]
    }

    /// Same box moved by `offset`.
    pub fn translated(&self, offset: [f64; 3]) -> Self {
        Box3D {
            cx: self.cx + offset[0],
            cy: self.cy + offset[1],
            cz: self.cz + offset[2],
            ..*self
        }
    }

    fn validate(&self) -> Result<(), GeometryError> {
        let fields = [self.cx, self.cy, self.cz, self.theta, self.l, self.w, self.h];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidInput("non-finite field".into()));
        }
        if self.l <= 0.0 || self.w <= 0.0 || self.h <= 0.0 {
            return Err(GeometryError::InvalidInput(format!(
                "non-positive dimension (l={}, w={}, h={})",
                self.l, self.w, self.h
            )));
        }
        Ok(())
    }

    /// Whether `p` lies in the closed box.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (p[0] - self.cx).abs() <= self.l / 2.0
            && (p[1] - self.cy).abs() <= self.w / 2.0
            && (p[2] - self.cz).abs() <= self.h / 2.0
    }
}

/// Which similarity drives association.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchingMetric {
    #[default]
    Diou,
    Giou,
}

impl MatchingMetric {
    pub fn similarity(self, a: &Box3D, b: &Box3D) -> Result<f64, GeometryError> {
        match self {
            MatchingMetric::Diou => diou3d(a, b),
            MatchingMetric::Giou => giou3d(a, b),
        }
    }
}

impl std::fmt::Display for MatchingMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MatchingMetric::Diou => "diou",
            MatchingMetric::Giou => "giou",
        })
    }
}

impl std::str::FromStr for MatchingMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "diou" => Ok(MatchingMetric::Diou),
            "giou" => Ok(MatchingMetric::Giou),
            other => Err(format!("unknown matching metric '{other}' (expected diou or giou)")),
        }
    }
}

/// Intermediate volumes shared by the three similarities.
struct Overlap {
    intersection: f64,
    union: f64,
    /// Extents of the smallest box enclosing both inputs.
    enclosing: [f64; 3],
}

fn overlap(a: &Box3D, b: &Box3D) -> Result<Overlap, GeometryError> {
    a.validate()?;
    b.validate()?;
    let (amin, amax) = (a.min_corner(), a.max_corner());
    let (bmin, bmax) = (b.min_corner(), b.max_corner());
    let mut intersection = 1.0;
    let mut enclosing = [0.0; 3];
    for k in 0..3 {
        intersection *= (amax[k].min(bmax[k]) - amin[k].max(bmin[k])).max(0.0);
        enclosing[k] = amax[k].max(bmax[k]) - amin[k].min(bmin[k]);
    }
    let union = a.volume() + b.volume() - intersection;
    Ok(Overlap {
        intersection,
        union,
        enclosing,
    })
}

/// Volume intersection over union.
pub fn iou3d(a: &Box3D, b: &Box3D) -> Result<f64, GeometryError> {
    let o = overlap(a, b)?;
    Ok(o.intersection / o.union)
}

/// Distance-IoU: IoU minus squared center distance over the squared
/// diagonal of the enclosing box.
pub fn diou3d(a: &Box3D, b: &Box3D) -> Result<f64, GeometryError> {
    let o = overlap(a, b)?;
    let rho2 = (a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2) + (a.cz - b.cz).powi(2);
    let c2: f64 = o.enclosing.iter().map(|e| e * e).sum();
    Ok(o.intersection / o.union - rho2 / c2)
}

/// Generalized IoU: IoU minus the fraction of the enclosing volume not
/// covered by the union.
pub fn giou3d(a: &Box3D, b: &Box3D) -> Result<f64, GeometryError> {
    let o = overlap(a, b)?;
    let hull: f64 = o.enclosing.iter().product();
    Ok(o.intersection / o.union - (hull - o.union) / hull)
}

/// Indices of the points inside the closed box (faces included).
pub fn points_in_box(points: &[[f64; 3]], bbox: &Box3D) -> Vec<usize> {
    points
        .iter()
        .enumerate()
        .filter(|(_, p)| bbox.contains(**p))
        .map(|(i, _)| i)
        .collect()
}
