use nalgebra::{Isometry3, Matrix4, Point3, Vector2};
use serde::{Deserialize, Serialize};

use super::BalloonError;
use crate::geometry::{frame_x_to, frame_z_to, Aabb, Vec3};
use crate::skeleton::{KeypointName, Skeleton, LIMB_BONES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PrimitiveKind {
    /// Semi-axes along local x, y, z.
    Ellipsoid { radii: [f64; 3] },
    /// Centered on the local origin, axis along local z.
    CappedCylinder { radius: f64, half_length: f64 },
    /// Base disc at the local origin, apex at `+height` on local z.
    Cone { base_radius: f64, height: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyPart {
    Head,
    Torso,
    Limb,
    Tail,
    Snout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdfPrimitive {
    pub kind: PrimitiveKind,
    /// Local-to-world rigid transform.
    pub frame: Isometry3<f64>,
    pub part: BodyPart,
}

impl SdfPrimitive {
    pub fn new(kind: PrimitiveKind, frame: Isometry3<f64>, part: BodyPart) -> Result<Self, BalloonError> {
        let ok = match kind {
            PrimitiveKind::Ellipsoid { radii } => radii.iter().all(|&r| r > 0.0),
            PrimitiveKind::CappedCylinder { radius, half_length } => radius > 0.0 && half_length > 0.0,
            PrimitiveKind::Cone { base_radius, height } => base_radius > 0.0 && height > 0.0,
        };
        if !ok {
            return Err(BalloonError::InvalidPrimitive(format!("{kind:?}")));
        }
        Ok(Self { kind, frame, part })
    }

    pub fn sphere(center: Vec3, radius: f64) -> Self {
        Self {
            kind: PrimitiveKind::Ellipsoid { radii: [radius; 3] },
            frame: Isometry3::translation(center.x, center.y, center.z),
            part: BodyPart::Head,
        }
    }

    /// Signed distance in the primitive's local frame.
    pub fn local_sdf(&self, q: &Vec3) -> f64 {
        match self.kind {
            PrimitiveKind::Ellipsoid { radii } => {
                let s = Vec3::new(q.x / radii[0], q.y / radii[1], q.z / radii[2]);
                let rmin = radii[0].min(radii[1]).min(radii[2]);
                (s.norm() - 1.0) * rmin
            }
            PrimitiveKind::CappedCylinder { radius, half_length } => {
                let d = Vector2::new(q.xy().norm() - radius, q.z.abs() - half_length);
                d.x.max(d.y).min(0.0) + Vector2::new(d.x.max(0.0), d.y.max(0.0)).norm()
            }
            PrimitiveKind::Cone { base_radius, height } => capped_cone(q, base_radius, height),
        }
    }

    pub fn sdf(&self, p: &Vec3) -> f64 {
        let q = self.frame.inverse_transform_point(&Point3::from(*p)).coords;
        self.local_sdf(&q)
    }

    pub fn local_bounds(&self) -> Aabb {
        match self.kind {
            PrimitiveKind::Ellipsoid { radii } => Aabb::new(-Vec3::from(radii), Vec3::from(radii)),
            PrimitiveKind::CappedCylinder { radius, half_length } => {
                Aabb::new(Vec3::new(-radius, -radius, -half_length), Vec3::new(radius, radius, half_length))
            }
            PrimitiveKind::Cone { base_radius, height } => {
                Aabb::new(Vec3::new(-base_radius, -base_radius, 0.0), Vec3::new(base_radius, base_radius, height))
            }
        }
    }

    pub fn bounds(&self) -> Aabb {
        let l = self.local_bounds();
        let mut out = Aabb::empty();
        for c in 0..8 {
            let corner = Vec3::new(
                if c & 1 == 0 { l.min[0] } else { l.max[0] },
                if c & 2 == 0 { l.min[1] } else { l.max[1] },
                if c & 4 == 0 { l.min[2] } else { l.max[2] },
            );
            out.include(&self.frame.transform_point(&Point3::from(corner)).coords);
        }
        out
    }

    pub fn center(&self) -> Vec3 {
        self.frame.translation.vector
    }

    /// World direction of the local z axis.
    pub fn axis(&self) -> Vec3 {
        self.frame.transform_vector(&Vec3::z())
    }
}

/// Exact distance to a cone frustum with bottom radius `r1` at z = 0, apex at
/// z = `h` (after Quilez's capped-cone formula, shifted to a base origin).
fn capped_cone(q: &Vec3, r1: f64, h: f64) -> f64 {
    let half = 0.5 * h;
    let r2 = 0.0;
    let p = Vector2::new(q.xy().norm(), q.z - half);
    let k1 = Vector2::new(r2, half);
    let k2 = Vector2::new(r2 - r1, 2.0 * half);
    let ca = Vector2::new(p.x - p.x.min(if p.y < 0.0 { r1 } else { r2 }), p.y.abs() - half);
    let cb = p - k1 + k2 * ((k1 - p).dot(&k2) / k2.norm_squared()).clamp(0.0, 1.0);
    let s = if cb.x < 0.0 && ca.y < 0.0 { -1.0 } else { 1.0 };
    s * ca.norm_squared().min(cb.norm_squared()).sqrt()
}

/// Tunable sizes of the body parts, in world units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyPartConfig {
    pub head_radii: [f64; 3],
    /// Lower bounds on the torso semi-axes. The long one otherwise spans the
    /// neck-back segment and the girth grows until the thighs are inside.
    pub torso_radii: [f64; 3],
    pub limb_radius: f64,
    pub tail_base_radius: f64,
    pub snout_base_radius: f64,
}

impl Default for BodyPartConfig {
    fn default() -> Self {
        Self {
            head_radii: [0.12, 0.1, 0.1],
            torso_radii: [0.1, 0.13, 0.12],
            limb_radius: 0.05,
            tail_base_radius: 0.04,
            snout_base_radius: 0.06,
        }
    }
}

impl BodyPartConfig {
    pub fn validate(&self) -> Result<(), BalloonError> {
        let fields = [
            ("head_radii", self.head_radii.iter().all(|&v| v > 0.0 && v.is_finite())),
            ("torso_radii", self.torso_radii.iter().all(|&v| v > 0.0 && v.is_finite())),
            ("limb_radius", self.limb_radius > 0.0 && self.limb_radius.is_finite()),
            ("tail_base_radius", self.tail_base_radius > 0.0 && self.tail_base_radius.is_finite()),
            ("snout_base_radius", self.snout_base_radius > 0.0 && self.snout_base_radius.is_finite()),
        ];
        match fields.iter().find(|(_, ok)| !ok) {
            Some((name, _)) => Err(BalloonError::InvalidConfig(name.to_string())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalloonShape {
    primitives: Vec<SdfPrimitive>,
    bounds: Vec<DistanceBound>,
}

/// Cheap lower bound on a primitive's distance: `slope · (|p − center| − radius)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct DistanceBound {
    center: Vec3,
    radius: f64,
    slope: f64,
}

impl DistanceBound {
    fn of(prim: &SdfPrimitive) -> Self {
        let l = prim.local_bounds();
        let local_center = l.center();
        let radius = 0.5 * l.extent().norm();
        let center = prim.frame.transform_point(&Point3::from(local_center)).coords;
        // the scaled ellipsoid distance shrinks by at most rmin / rmax
        let slope = match prim.kind {
            PrimitiveKind::Ellipsoid { radii } => {
                radii.iter().copied().fold(f64::INFINITY, f64::min) / radii.iter().copied().fold(0.0, f64::max)
            }
            _ => 1.0,
        };
        Self { center, radius, slope }
    }

    #[inline]
    fn lower(&self, p: &Vec3) -> f64 {
        ((p - self.center).norm() - self.radius) * self.slope
    }
}

impl BalloonShape {
    pub fn new(primitives: Vec<SdfPrimitive>) -> Self {
        let bounds = primitives.iter().map(DistanceBound::of).collect();
        Self { primitives, bounds }
    }

    pub fn primitives(&self) -> &[SdfPrimitive] {
        &self.primitives
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Union distance: minimum over the primitives. `+inf` for an empty shape.
    pub fn sdf(&self, p: &Vec3) -> f64 {
        let mut best = f64::INFINITY;
        for (prim, bound) in self.primitives.iter().zip(&self.bounds) {
            // skipping is exact: the primitive cannot beat the current minimum
            if bound.lower(p) < best {
                best = best.min(prim.sdf(p));
            }
        }
        best
    }

    pub fn bounds(&self) -> Aabb {
        self.primitives.iter().fold(Aabb::empty(), |acc, p| acc.union(&p.bounds()))
    }

    pub fn count(&self, part: BodyPart) -> usize {
        self.primitives.iter().filter(|p| p.part == part).count()
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> BalloonShape {
        BalloonShape::new(self.primitives.iter().map(|p| SdfPrimitive { frame: iso * p.frame, ..p.clone() }).collect())
    }

    pub fn to_document(&self) -> ShapeDocument {
        ShapeDocument {
            version: 1,
            primitives: self
                .primitives
                .iter()
                .map(|p| {
                    let m: Matrix4<f64> = p.frame.to_homogeneous();
                    let mut frame = [0.0; 16];
                    for r in 0..4 {
                        for c in 0..4 {
                            frame[r * 4 + c] = m[(r, c)];
                        }
                    }
                    PrimitiveRecord { part: p.part, frame, shape: p.kind }
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &ShapeDocument) -> Result<Self, BalloonError> {
        if doc.version != 1 {
            return Err(BalloonError::InvalidShape(format!("unsupported version {}", doc.version)));
        }
        let prims = doc
            .primitives
            .iter()
            .map(|rec| {
                let m = Matrix4::from_row_slice(&rec.frame);
                let rot = m.fixed_view::<3, 3>(0, 0).into_owned();
                let t = Vec3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
                if (rot.transpose() * rot - nalgebra::Matrix3::identity()).norm() > 1e-6 {
                    return Err(BalloonError::InvalidShape("frame is not rigid".into()));
                }
                let q = nalgebra::UnitQuaternion::from_matrix(&rot);
                SdfPrimitive::new(rec.shape, Isometry3::from_parts(t.into(), q), rec.part)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(prims))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("shape serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BalloonError> {
        let doc: ShapeDocument = serde_json::from_str(text).map_err(|e| BalloonError::InvalidShape(e.to_string()))?;
        Self::from_document(&doc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeDocument {
    pub version: u32,
    pub primitives: Vec<PrimitiveRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveRecord {
    pub part: BodyPart,
    /// 4x4 row-major local-to-world matrix.
    pub frame: [f64; 16],
    #[serde(flatten)]
    pub shape: PrimitiveKind,
}

const MIN_BONE: f64 = 1e-9;

/// Normalized ellipsoid radius at which the thighs are placed.
const TORSO_REACH: f64 = 0.95;

fn bone_vector(s: &Skeleton, a: KeypointName, b: KeypointName) -> Result<Vec3, BalloonError> {
    let d = s.get(b) - s.get(a);
    if d.norm() < MIN_BONE {
        return Err(BalloonError::DegenerateBone(a, b));
    }
    Ok(d)
}

/// Places the balloon primitives along the skeleton: head and torso
/// ellipsoids, one capped cylinder per limb segment, a tail cone and a snout
/// cone.
pub fn build_shape(skeleton: &Skeleton, config: &BodyPartConfig) -> Result<BalloonShape, BalloonError> {
    use KeypointName::*;
    config.validate()?;
    let lateral = skeleton.lateral();
    let mut prims = Vec::with_capacity(12);

    // head
    let eyes = 0.5 * (skeleton.get(LeftEye) + skeleton.get(RightEye));
    let nose = skeleton.get(Nose);
    let centroid = (skeleton.get(LeftEye) + skeleton.get(RightEye) + nose) / 3.0;
    let eye_nose = (nose - eyes).norm();
    let to_neck = skeleton.get(NeckEnd) - centroid;
    let head_center = if to_neck.norm() > MIN_BONE {
        centroid + to_neck.normalize() * (0.25 * eye_nose)
    } else {
        centroid
    };
    let snout = nose - head_center;
    if snout.norm() < MIN_BONE {
        return Err(BalloonError::DegenerateBone(NeckEnd, Nose));
    }
    prims.push(SdfPrimitive::new(
        PrimitiveKind::Ellipsoid { radii: config.head_radii },
        frame_x_to(head_center, snout, lateral),
        BodyPart::Head,
    )?);

    // torso
    let spine = bone_vector(skeleton, BackEnd, NeckEnd)?;
    let mid = 0.5 * (skeleton.get(NeckEnd) + skeleton.get(BackEnd));
    let frame = frame_x_to(mid, spine, lateral);
    let mut radii = config.torso_radii;
    radii[0] = radii[0].max(0.5 * spine.norm() + config.limb_radius);
    // grow the girth until every thigh sits inside, so each leg attaches
    for thigh in [FrontLeftThigh, FrontRightThigh, RearLeftThigh, RearRightThigh] {
        let q = frame.inverse_transform_point(&skeleton.get(thigh).into()).coords;
        radii[0] = radii[0].max(q.x.abs() / 0.8);
        let along = (q.x / radii[0]).powi(2);
        let across = ((q.y / radii[1]).powi(2) + (q.z / radii[2]).powi(2)).sqrt();
        let grow = across / (TORSO_REACH * TORSO_REACH - along).sqrt();
        if grow > 1.0 {
            radii[1] *= grow;
            radii[2] *= grow;
        }
    }
    prims.push(SdfPrimitive::new(PrimitiveKind::Ellipsoid { radii }, frame, BodyPart::Torso)?);

    for (a, b) in LIMB_BONES {
        let d = bone_vector(skeleton, a, b)?;
        let center = 0.5 * (skeleton.get(a) + skeleton.get(b));
        prims.push(SdfPrimitive::new(
            PrimitiveKind::CappedCylinder { radius: config.limb_radius, half_length: 0.5 * d.norm() },
            frame_z_to(center, d, lateral),
            BodyPart::Limb,
        )?);
    }

    let tail = bone_vector(skeleton, BackEnd, TailEnd)?;
    prims.push(SdfPrimitive::new(
        PrimitiveKind::Cone { base_radius: config.tail_base_radius, height: tail.norm() },
        frame_z_to(skeleton.get(BackEnd), tail, lateral),
        BodyPart::Tail,
    )?);

    prims.push(SdfPrimitive::new(
        PrimitiveKind::Cone { base_radius: config.snout_base_radius, height: snout.norm() },
        frame_z_to(head_center, snout, lateral),
        BodyPart::Snout,
    )?);

    Ok(BalloonShape::new(prims))
}
