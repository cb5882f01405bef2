//! Synthetic ground-truth shapes with labeled thin substructures.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cloud::{Point3, PointCloud};
use crate::{Error, Result};

/// Fraction of points placed on the thin substructure of shapes that have one.
pub const THIN_FRACTION: f64 = 0.15;

/// Smallest point count accepted for structured shapes.
pub const MIN_STRUCTURED_POINTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    /// Torus-like ring in the xy-plane with a thin vertical spur.
    RingWithSpur,
    /// Two thick orthogonal bars in the xy-plane with a thin strut along z.
    Cross3D,
    /// Square plate of small thickness. Has no labeled substructure.
    ThinPlate,
    /// Points on the sphere of radius `scale`.
    UniformSphere,
}

impl std::str::FromStr for ShapeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ring-with-spur" => Ok(ShapeKind::RingWithSpur),
            "cross3d" | "cross-3d" => Ok(ShapeKind::Cross3D),
            "thin-plate" => Ok(ShapeKind::ThinPlate),
            "uniform-sphere" => Ok(ShapeKind::UniformSphere),
            other => Err(format!(
                "unknown shape '{other}' (expected ring-with-spur, cross3d, thin-plate or uniform-sphere)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub scale: f64,
    pub n_points: usize,
    pub seed: u64,
}

impl ShapeSpec {
    pub fn new(kind: ShapeKind, n_points: usize, seed: u64) -> Self {
        Self {
            kind,
            scale: 1.0,
            n_points,
            seed,
        }
    }
}

/// A generated cloud and, per point, whether it belongs to the thin part.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub cloud: PointCloud,
    pub thin: Vec<bool>,
}

impl Shape {
    pub fn thin_fraction(&self) -> f64 {
        self.thin.iter().filter(|&&t| t).count() as f64 / self.thin.len() as f64
    }
}

pub fn generate_shape(spec: &ShapeSpec) -> Result<Shape> {
    if !(spec.scale > 0.0 && spec.scale.is_finite()) {
        return Err(Error::invalid(format!("scale must be positive, got {}", spec.scale)));
    }
    let min_points = match spec.kind {
        ShapeKind::UniformSphere => 1,
        _ => MIN_STRUCTURED_POINTS,
    };
    if spec.n_points < min_points {
        return Err(Error::invalid(format!(
            "{:?} needs at least {min_points} points, got {}",
            spec.kind, spec.n_points
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_points;
    let n_thin = ((n as f64) * THIN_FRACTION).round() as usize;
    let mut points = Vec::with_capacity(n);
    let mut thin = Vec::with_capacity(n);

    match spec.kind {
        ShapeKind::UniformSphere => {
            points.extend((0..n).map(|_| unit_vector(&mut rng)));
            thin.resize(n, false);
        }
        ShapeKind::RingWithSpur => {
            const MAJOR: f64 = 0.6;
            const MINOR: f64 = 0.05;
            for _ in 0..n - n_thin {
                let theta = rng.gen::<f64>() * TAU;
                let phi = rng.gen::<f64>() * TAU;
                let r = MAJOR + MINOR * phi.cos();
                points.push([r * theta.cos(), r * theta.sin(), MINOR * phi.sin()]);
            }
            // Spur rises from the top of the tube at theta = 0.
            for _ in 0..n_thin {
                let t = rng.gen::<f64>();
                points.push([
                    MAJOR + jitter(&mut rng, 0.004),
                    jitter(&mut rng, 0.004),
                    MINOR + 0.7 * t,
                ]);
            }
            thin.resize(n - n_thin, false);
            thin.resize(n, true);
        }
        ShapeKind::Cross3D => {
            const ARM: f64 = 0.7;
            const HALF_WIDTH: f64 = 0.06;
            for k in 0..n - n_thin {
                let along = (rng.gen::<f64>() * 2.0 - 1.0) * ARM;
                let (u, v) = (jitter(&mut rng, HALF_WIDTH), jitter(&mut rng, HALF_WIDTH));
                points.push(if k % 2 == 0 { [along, u, v] } else { [u, along, v] });
            }
            for _ in 0..n_thin {
                let z = HALF_WIDTH + rng.gen::<f64>() * 0.6;
                points.push([jitter(&mut rng, 0.004), jitter(&mut rng, 0.004), z]);
            }
            thin.resize(n - n_thin, false);
            thin.resize(n, true);
        }
        ShapeKind::ThinPlate => {
            for _ in 0..n {
                let x = (rng.gen::<f64>() * 2.0 - 1.0) * 0.6;
                let y = (rng.gen::<f64>() * 2.0 - 1.0) * 0.6;
                points.push([x, y, jitter(&mut rng, 0.01)]);
            }
            thin.resize(n, false);
        }
    }

    let scaled: Vec<Point3> = points
        .into_iter()
        .map(|p| [p[0] * spec.scale, p[1] * spec.scale, p[2] * spec.scale])
        .collect();
    let label = format!("{:?}", spec.kind);
    Ok(Shape {
        cloud: PointCloud::new(scaled)?.with_label(label),
        thin,
    })
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let v: Point3 = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-12 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

fn jitter(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    (rng.gen::<f64>() * 2.0 - 1.0) * half_width
}
