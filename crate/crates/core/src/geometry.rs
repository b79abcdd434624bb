//! Shared camera and projection conventions.
//!
//! World frame is right-handed with +z up. Spherical camera coordinates
//! measure azimuth in the xy-plane from +x and polar angle from +z. Pixel
//! `(i, j)` samples the continuous image coordinate `(i + 0.5, j + 0.5)`,
//! with `u` growing to the right and `v` growing downward.

use nalgebra::{Isometry3, Point3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid sampling range `{name}`: min {min} > max {max}")]
    InvalidRange { name: &'static str, min: f64, max: f64 },
    #[error("pixel ({u}, {v}) outside the {width}x{height} image")]
    PixelOutOfBounds { u: f64, v: f64, width: u32, height: u32 },
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min: min.into(), max: max.into() }
    }

    pub fn empty() -> Self {
        Self { min: [f64::INFINITY; 3], max: [f64::NEG_INFINITY; 3] }
    }

    pub fn lo(&self) -> Vec3 {
        Vec3::from(self.min)
    }

    pub fn hi(&self) -> Vec3 {
        Vec3::from(self.max)
    }

    pub fn extent(&self) -> Vec3 {
        self.hi() - self.lo()
    }

    pub fn center(&self) -> Vec3 {
        (self.lo() + self.hi()) * 0.5
    }

    pub fn is_degenerate(&self) -> bool {
        (0..3).any(|a| !(self.max[a] > self.min[a]) || !self.min[a].is_finite() || !self.max[a].is_finite())
    }

    pub fn include(&mut self, p: &Vec3) {
        for a in 0..3 {
            self.min[a] = self.min[a].min(p[a]);
            self.max[a] = self.max[a].max(p[a]);
        }
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        let mut out = *self;
        out.include(&other.lo());
        out.include(&other.hi());
        out
    }

    pub fn padded(&self, pad: f64) -> Aabb {
        let p = Vec3::repeat(pad);
        Aabb::new(self.lo() - p, self.hi() + p)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|a| other.min[a] > self.min[a] && other.max[a] < self.max[a])
    }

    /// Slab test. Returns the parameter interval `[k0, k1]` where the ray is
    /// inside the box, clipped to `k >= 0`.
    pub fn intersect(&self, ray: &Ray) -> Option<(f64, f64)> {
        let mut k0 = 0.0_f64;
        let mut k1 = f64::INFINITY;
        for a in 0..3 {
            let o = ray.origin[a];
            let d = ray.direction[a];
            if d.abs() < 1e-300 {
                if o < self.min[a] || o > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let mut ta = (self.min[a] - o) * inv;
            let mut tb = (self.max[a] - o) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            k0 = k0.max(ta);
            k1 = k1.min(tb);
            if k0 > k1 {
                return None;
            }
        }
        Some((k0, k1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self { origin, direction: direction.normalize() }
    }

    pub fn at(&self, k: f64) -> Vec3 {
        self.origin + self.direction * k
    }
}

/// Pinhole camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub up: [f64; 3],
    /// Vertical field of view in degrees.
    pub fov_y: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

/// Orthonormal camera basis plus focal length in pixels.
#[derive(Debug, Clone, Copy)]
pub struct CameraBasis {
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub focal: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub in_front: bool,
}

impl Projection {
    pub fn in_image(&self, width: u32, height: u32) -> bool {
        self.u >= 0.0 && self.v >= 0.0 && self.u < width as f64 && self.v < height as f64
    }
}

impl Camera {
    pub const DEFAULT_FOV_Y: f64 = 45.0;
    pub const DEFAULT_RESOLUTION: (u32, u32) = (64, 64);
    pub const DEFAULT_NEAR: f64 = 0.05;
    pub const DEFAULT_FAR: f64 = 10.0;

    pub fn new(position: Vec3, look_at: Vec3, fov_y: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let cam = Self {
            position: position.into(),
            look_at: look_at.into(),
            up: [0.0, 0.0, 1.0],
            fov_y,
            width,
            height,
            near: Self::DEFAULT_NEAR,
            far: Self::DEFAULT_FAR,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn with_resolution(mut self, width: u32, height: u32) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: &str| Err(GeometryError::InvalidCamera(m.to_string()));
        let d = self.look_at() - self.position();
        if !(d.norm() > 1e-12) {
            return bad("position coincides with look_at");
        }
        if !(self.fov_y > 0.0 && self.fov_y < 180.0) {
            return bad("fov_y must lie in (0, 180)");
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return bad("require 0 < near < far");
        }
        if self.width == 0 || self.height == 0 {
            return bad("empty resolution");
        }
        if !(self.up().norm() > 0.0) {
            return bad("zero up vector");
        }
        Ok(())
    }

    pub fn position(&self) -> Vec3 {
        Vec3::from(self.position)
    }

    pub fn look_at(&self) -> Vec3 {
        Vec3::from(self.look_at)
    }

    pub fn up(&self) -> Vec3 {
        Vec3::from(self.up)
    }

    pub fn basis(&self) -> CameraBasis {
        let forward = (self.look_at() - self.position()).normalize();
        let mut right = forward.cross(&self.up());
        if right.norm() < 1e-9 {
            // looking along the up vector; fall back to +y as up
            right = forward.cross(&Vec3::y());
        }
        let right = right.normalize();
        let up = right.cross(&forward);
        let focal = 0.5 * self.height as f64 / (0.5 * self.fov_y.to_radians()).tan();
        CameraBasis { forward, right, up, focal }
    }

    pub fn project(&self, p: &Vec3) -> Projection {
        project_with(self, &self.basis(), p)
    }

    /// Ray through the continuous image coordinate `(u, v)`.
    pub fn primary_ray(&self, u: f64, v: f64) -> Result<Ray, GeometryError> {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(u >= 0.0 && u <= w && v >= 0.0 && v <= h) {
            return Err(GeometryError::PixelOutOfBounds { u, v, width: self.width, height: self.height });
        }
        Ok(ray_with(self, &self.basis(), u, v))
    }

    /// Ray through the center of pixel `(i, j)`.
    pub fn pixel_ray(&self, i: u32, j: u32) -> Ray {
        ray_with(self, &self.basis(), i as f64 + 0.5, j as f64 + 0.5)
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> Camera {
        let mut out = *self;
        out.position = iso.transform_point(&Point3::from(self.position())).coords.into();
        out.look_at = iso.transform_point(&Point3::from(self.look_at())).coords.into();
        out.up = iso.transform_vector(&self.up()).into();
        out
    }
}

pub(crate) fn project_with(cam: &Camera, b: &CameraBasis, p: &Vec3) -> Projection {
    let d = p - cam.position();
    let depth = d.dot(&b.forward);
    let x = d.dot(&b.right);
    let y = d.dot(&b.up);
    let u = 0.5 * cam.width as f64 + b.focal * x / depth;
    let v = 0.5 * cam.height as f64 - b.focal * y / depth;
    Projection { u, v, depth, in_front: depth > cam.near }
}

pub(crate) fn ray_with(cam: &Camera, b: &CameraBasis, u: f64, v: f64) -> Ray {
    let x = (u - 0.5 * cam.width as f64) / b.focal;
    let y = (0.5 * cam.height as f64 - v) / b.focal;
    Ray::new(cam.position(), b.forward + b.right * x + b.up * y)
}

/// Camera position in spherical coordinates around a target point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalSample {
    pub radius: f64,
    /// Degrees in [0, 360).
    pub azimuth: f64,
    /// Degrees from the +z zenith.
    pub polar: f64,
}

impl SphericalSample {
    pub fn offset(&self) -> Vec3 {
        let (sp, cp) = self.polar.to_radians().sin_cos();
        let (sa, ca) = self.azimuth.to_radians().sin_cos();
        Vec3::new(sp * ca, sp * sa, cp) * self.radius
    }

    /// Inverse of [`SphericalSample::offset`].
    pub fn from_offset(d: &Vec3) -> Self {
        let radius = d.norm();
        let polar = (d.z / radius).clamp(-1.0, 1.0).acos().to_degrees();
        let mut azimuth = d.y.atan2(d.x).to_degrees();
        if azimuth < 0.0 {
            azimuth += 360.0;
        }
        if azimuth >= 360.0 {
            azimuth -= 360.0;
        }
        Self { radius, azimuth, polar }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSamplingConfig {
    pub radius_range: [f64; 2],
    pub azimuth_range: [f64; 2],
    pub polar_range: [f64; 2],
    pub fov_y: f64,
    pub resolution: [u32; 2],
    /// Center of the sampling shell and the point every camera looks at.
    pub look_at: [f64; 3],
}

impl Default for CameraSamplingConfig {
    fn default() -> Self {
        Self {
            radius_range: [1.0, 2.0],
            azimuth_range: [0.0, 360.0],
            polar_range: [60.0, 120.0],
            fov_y: Camera::DEFAULT_FOV_Y,
            resolution: [Camera::DEFAULT_RESOLUTION.0, Camera::DEFAULT_RESOLUTION.1],
            look_at: [0.0; 3],
        }
    }
}

impl CameraSamplingConfig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        for (name, r) in [
            ("radius_range", self.radius_range),
            ("azimuth_range", self.azimuth_range),
            ("polar_range", self.polar_range),
        ] {
            if !(r[0] <= r[1]) {
                return Err(GeometryError::InvalidRange { name, min: r[0], max: r[1] });
            }
        }
        if !(self.radius_range[0] > 0.0) {
            return Err(GeometryError::InvalidCamera("radius must be positive".into()));
        }
        Ok(())
    }

    /// Camera placed at a given spherical position around `look_at`.
    pub fn camera_at(&self, s: &SphericalSample) -> Result<Camera, GeometryError> {
        let target = Vec3::from(self.look_at);
        Camera::new(target + s.offset(), target, self.fov_y, self.resolution[0], self.resolution[1])
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        // still consume a draw so the stream position does not depend on the ranges
        let _: f64 = rng.random();
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

pub fn sample_spherical<R: Rng + ?Sized>(rng: &mut R, cfg: &CameraSamplingConfig) -> Result<SphericalSample, GeometryError> {
    cfg.validate()?;
    let radius = uniform(rng, cfg.radius_range);
    let mut azimuth = uniform(rng, cfg.azimuth_range) % 360.0;
    if azimuth < 0.0 {
        azimuth += 360.0;
    }
    let polar = uniform(rng, cfg.polar_range);
    Ok(SphericalSample { radius, azimuth, polar })
}

/// Draws a camera uniformly over the configured radius, azimuth and polar
/// ranges, looking at the shell center.
pub fn sample_camera<R: Rng + ?Sized>(rng: &mut R, cfg: &CameraSamplingConfig) -> Result<Camera, GeometryError> {
    let s = sample_spherical(rng, cfg)?;
    cfg.camera_at(&s)
}

/// Rotation taking +z to `axis`, with local +y aligned to `lateral` as far as
/// orthogonality allows. Local +x completes the right-handed frame.
pub fn frame_z_to(origin: Vec3, axis: Vec3, lateral: Vec3) -> Isometry3<f64> {
    let z = axis.normalize();
    let mut y = lateral - z * lateral.dot(&z);
    if y.norm() < 1e-9 {
        let alt = if z.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        y = alt - z * alt.dot(&z);
    }
    let y = y.normalize();
    let x = y.cross(&z);
    iso_from_axes(origin, x, y, z)
}

/// Frame whose local +x is `axis`, local +y follows `lateral`.
pub fn frame_x_to(origin: Vec3, axis: Vec3, lateral: Vec3) -> Isometry3<f64> {
    let x = axis.normalize();
    let mut y = lateral - x * lateral.dot(&x);
    if y.norm() < 1e-9 {
        let alt = if x.z.abs() < 0.9 { Vec3::z() } else { Vec3::y() };
        y = alt - x * alt.dot(&x);
    }
    let y = y.normalize();
    let z = x.cross(&y);
    iso_from_axes(origin, x, y, z)
}

fn iso_from_axes(origin: Vec3, x: Vec3, y: Vec3, z: Vec3) -> Isometry3<f64> {
    let m = nalgebra::Matrix3::from_columns(&[x, y, z]);
    let rot = nalgebra::Rotation3::from_matrix_unchecked(m);
    Isometry3::from_parts(origin.into(), nalgebra::UnitQuaternion::from_rotation_matrix(&rot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn axis_camera(fov: f64) -> Camera {
        Camera::new(Vec3::new(0.0, 0.0, 2.0), Vec3::zeros(), fov, 64, 64).unwrap()
    }

    #[test]
    fn degenerate_ranges_force_the_sample() {
        let cfg = CameraSamplingConfig {
            radius_range: [1.5, 1.5],
            azimuth_range: [0.0, 0.0],
            polar_range: [90.0, 90.0],
            ..Default::default()
        };
        let cam = sample_camera(&mut ChaCha8Rng::seed_from_u64(3), &cfg).unwrap();
        let p = cam.position();
        assert!((p - Vec3::new(1.5, 0.0, 0.0)).norm() < 1e-12, "{p:?}");
        assert_eq!(cam.look_at, [0.0; 3]);
    }

    #[test]
    fn sampling_is_seeded() {
        let cfg = CameraSamplingConfig::default();
        let a = sample_camera(&mut ChaCha8Rng::seed_from_u64(11), &cfg).unwrap();
        let b = sample_camera(&mut ChaCha8Rng::seed_from_u64(11), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inverted_range_is_rejected() {
        let cfg = CameraSamplingConfig { radius_range: [2.0, 1.0], ..Default::default() };
        let err = sample_camera(&mut ChaCha8Rng::seed_from_u64(0), &cfg).unwrap_err();
        assert!(matches!(err, GeometryError::InvalidRange { name: "radius_range", .. }));
    }

    #[test]
    fn projection_examples() {
        let cam = axis_camera(45.0);
        let c = cam.project(&Vec3::zeros());
        assert!((c.u - 32.0).abs() < 1e-12 && (c.v - 32.0).abs() < 1e-12);
        assert!((c.depth - 2.0).abs() < 1e-12 && c.in_front);
        assert!(!cam.project(&Vec3::new(0.0, 0.0, 3.0)).in_front);

        let wide = axis_camera(90.0);
        let e = wide.project(&Vec3::new(1.0, 0.0, 1.0));
        assert!((e.u - 64.0).abs() < 1e-9, "{e:?}");
        assert!((e.v - 32.0).abs() < 1e-9);
    }

    #[test]
    fn center_ray_is_principal_axis() {
        let cam = axis_camera(45.0);
        let r = cam.primary_ray(32.0, 32.0).unwrap();
        assert!((r.direction - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert_eq!(r.origin, cam.position());
        assert!(cam.primary_ray(-1.0, 3.0).is_err());
    }

    #[test]
    fn corner_ray_half_angle() {
        let cam = axis_camera(90.0);
        let b = cam.basis();
        // continuous corner sits exactly on the frustum edge
        let r = cam.primary_ray(0.0, 0.0).unwrap();
        let vert = r.direction.dot(&b.up).atan2(r.direction.dot(&b.forward));
        assert!((vert - 45f64.to_radians()).abs() < 1e-6);
        // the corner pixel center is half a pixel inside it
        let r = cam.pixel_ray(0, 0);
        let vert = r.direction.dot(&b.up).atan2(r.direction.dot(&b.forward));
        let expected = (31.5f64 / 32.0).atan();
        assert!((vert - expected).abs() < 1e-9);
    }

    #[test]
    fn aabb_slab_intersection() {
        let b = Aabb::new(Vec3::repeat(-1.0), Vec3::repeat(1.0));
        let r = Ray::new(Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, 0.0, -1.0));
        let (k0, k1) = b.intersect(&r).unwrap();
        assert!((k0 - 2.0).abs() < 1e-12 && (k1 - 4.0).abs() < 1e-12);
        let miss = Ray::new(Vec3::new(2.0, 0.0, 3.0), Vec3::new(0.0, 0.0, -1.0));
        assert!(b.intersect(&miss).is_none());
    }

    #[test]
    fn frames_are_orthonormal() {
        let f = frame_z_to(Vec3::zeros(), Vec3::new(0.0, 0.0, -1.0), Vec3::y());
        let z = f.transform_vector(&Vec3::z());
        assert!((z - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        let g = frame_x_to(Vec3::zeros(), Vec3::new(1.0, 1.0, 0.0), Vec3::z());
        let x = g.transform_vector(&Vec3::x());
        assert!((x - Vec3::new(1.0, 1.0, 0.0).normalize()).norm() < 1e-12);
    }
}
