//! Analytic shape suite used as the desk-scale stand-in dataset.
//!
//! Five classes (sphere, box, cylinder, cone, torus) sampled uniformly on
//! their surfaces with analytic normals and optional Gaussian jitter.
//! Parameter ranges are documented on [`ShapeSpec::sample`].

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub const CLASS_NAMES: [&str; 5] = ["sphere", "box", "cylinder", "cone", "torus"];

/// Shape family plus its size parameters. All shapes are axis-aligned
/// with `z` as the symmetry axis; dataset building applies a random
/// rotation afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeSpec {
    Sphere { radius: f64 },
    Box { hx: f64, hy: f64, hz: f64 },
    Cylinder { radius: f64, half_height: f64 },
    Cone { radius: f64, height: f64 },
    Torus { major_radius: f64, minor_radius: f64 },
}

impl ShapeSpec {
    pub fn class_id(&self) -> u32 {
        match self {
            ShapeSpec::Sphere { .. } => 0,
            ShapeSpec::Box { .. } => 1,
            ShapeSpec::Cylinder { .. } => 2,
            ShapeSpec::Cone { .. } => 3,
            ShapeSpec::Torus { .. } => 4,
        }
    }

    pub fn class_name(&self) -> &'static str {
        CLASS_NAMES[self.class_id() as usize]
    }

    /// Draws randomized size parameters for a class. Ranges (all in scene
    /// units, before cloud normalization):
    /// sphere radius [0.5, 1.0]; box half-extents [0.25, 1.0] each;
    /// cylinder radius [0.25, 0.6], half-height [0.4, 1.0];
    /// cone radius [0.3, 0.7], height [0.8, 1.6];
    /// torus major [0.5, 0.8], minor/major ratio [0.2, 0.55].
    pub fn sample(class_id: u32, rng: &mut ChaCha12Rng) -> Result<ShapeSpec> {
        Ok(match class_id {
            0 => ShapeSpec::Sphere { radius: rng.gen_range(0.5..1.0) },
            1 => ShapeSpec::Box {
                hx: rng.gen_range(0.25..1.0),
                hy: rng.gen_range(0.25..1.0),
                hz: rng.gen_range(0.25..1.0),
            },
            2 => ShapeSpec::Cylinder {
                radius: rng.gen_range(0.25..0.6),
                half_height: rng.gen_range(0.4..1.0),
            },
            3 => ShapeSpec::Cone {
                radius: rng.gen_range(0.3..0.7),
                height: rng.gen_range(0.8..1.6),
            },
            4 => {
                let major = rng.gen_range(0.5..0.8);
                ShapeSpec::Torus { major_radius: major, minor_radius: major * rng.gen_range(0.2..0.55) }
            }
            other => return Err(Error::invalid(format!("unknown class id {other}"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ShapeSpec::Sphere { radius } => radius > 0.0,
            ShapeSpec::Box { hx, hy, hz } => hx > 0.0 && hy > 0.0 && hz > 0.0,
            ShapeSpec::Cylinder { radius, half_height } => radius > 0.0 && half_height > 0.0,
            ShapeSpec::Cone { radius, height } => radius > 0.0 && height > 0.0,
            ShapeSpec::Torus { major_radius, minor_radius } => {
                major_radius > 0.0 && minor_radius > 0.0 && minor_radius < major_radius
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid shape parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticShapeSpec {
    pub shape: ShapeSpec,
    pub jitter_sigma: f64,
}

/// Samples `n_points` uniformly on the surface (area-weighted across
/// parts), attaches analytic normals, then jitters coordinates with
/// `N(0, sigma^2)`. Normals stay those of the un-jittered surface.
pub fn generate_synthetic_object(
    spec: &SyntheticShapeSpec,
    n_points: usize,
    rng: &mut ChaCha12Rng,
) -> Result<PointCloud> {
    spec.shape.validate()?;
    if spec.jitter_sigma < 0.0 {
        return Err(Error::invalid("jitter_sigma must be >= 0"));
    }
    if n_points == 0 {
        return Err(Error::invalid("n_points must be positive"));
    }
    let mut points = Array2::zeros((n_points, 3));
    let mut normals = Array2::zeros((n_points, 3));
    for i in 0..n_points {
        let (p, n) = sample_surface(&spec.shape, rng);
        for k in 0..3 {
            points[[i, k]] = p[k];
            normals[[i, k]] = n[k];
        }
    }
    if spec.jitter_sigma > 0.0 {
        for v in points.iter_mut() {
            let g: f64 = StandardNormal.sample(rng);
            *v += spec.jitter_sigma * g;
        }
    }
    let mut pc = PointCloud::with_normals(points, normals)?;
    pc.label = Some(spec.shape.class_id());
    Ok(pc)
}

fn sample_surface(shape: &ShapeSpec, rng: &mut ChaCha12Rng) -> ([f64; 3], [f64; 3]) {
    use std::f64::consts::TAU;
    match *shape {
        ShapeSpec::Sphere { radius } => {
            let z: f64 = rng.gen_range(-1.0..=1.0);
            let theta = rng.gen_range(0.0..TAU);
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let n = [rho * theta.cos(), rho * theta.sin(), z];
            ([radius * n[0], radius * n[1], radius * n[2]], n)
        }
        ShapeSpec::Box { hx, hy, hz } => {
            // Face pick weighted by area; +/- chosen evenly.
            let ax = hy * hz;
            let ay = hx * hz;
            let az = hx * hy;
            let total = ax + ay + az;
            let pick = rng.gen_range(0.0..total);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let (u, v) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if pick < ax {
                ([sign * hx, u * hy, v * hz], [sign, 0.0, 0.0])
            } else if pick < ax + ay {
                ([u * hx, sign * hy, v * hz], [0.0, sign, 0.0])
            } else {
                ([u * hx, v * hy, sign * hz], [0.0, 0.0, sign])
            }
        }
        ShapeSpec::Cylinder { radius, half_height } => {
            let lateral = TAU * radius * 2.0 * half_height;
            let caps = 2.0 * std::f64::consts::PI * radius * radius;
            if rng.gen_range(0.0..lateral + caps) < lateral {
                let theta = rng.gen_range(0.0..TAU);
                let z = rng.gen_range(-half_height..half_height);
                (
                    [radius * theta.cos(), radius * theta.sin(), z],
                    [theta.cos(), theta.sin(), 0.0],
                )
            } else {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let r = radius * rng.gen::<f64>().sqrt();
                let theta = rng.gen_range(0.0..TAU);
                ([r * theta.cos(), r * theta.sin(), sign * half_height], [0.0, 0.0, sign])
            }
        }
        ShapeSpec::Cone { radius, height } => {
            // Apex at (0, 0, height), base disc at z = 0.
            let slant = (radius * radius + height * height).sqrt();
            let lateral = std::f64::consts::PI * radius * slant;
            let base = std::f64::consts::PI * radius * radius;
            if rng.gen_range(0.0..lateral + base) < lateral {
                // Area density grows linearly away from the apex.
                let t = rng.gen::<f64>().sqrt();
                let theta = rng.gen_range(0.0..TAU);
                let p = [radius * t * theta.cos(), radius * t * theta.sin(), height * (1.0 - t)];
                let n_len = (height * height + radius * radius).sqrt();
                let n = [height * theta.cos() / n_len, height * theta.sin() / n_len, radius / n_len];
                (p, n)
            } else {
                let r = radius * rng.gen::<f64>().sqrt();
                let theta = rng.gen_range(0.0..TAU);
                ([r * theta.cos(), r * theta.sin(), 0.0], [0.0, 0.0, -1.0])
            }
        }
        ShapeSpec::Torus { major_radius, minor_radius } => {
            let phi = rng.gen_range(0.0..TAU);
            // Rejection on the tube angle keeps the sampling uniform in
            // area (density proportional to R + r cos(theta)).
            let theta = loop {
                let theta = rng.gen_range(0.0..TAU);
                let accept = (major_radius + minor_radius * theta.cos())
                    / (major_radius + minor_radius);
                if rng.gen::<f64>() < accept {
                    break theta;
                }
            };
            let ring = major_radius + minor_radius * theta.cos();
            let p = [ring * phi.cos(), ring * phi.sin(), minor_radius * theta.sin()];
            let n = [theta.cos() * phi.cos(), theta.cos() * phi.sin(), theta.sin()];
            (p, n)
        }
    }
}
