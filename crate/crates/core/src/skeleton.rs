//! The 18-keypoint tetrapod skeleton, its JSON document form, view
//! classification and the head-part visibility rule.
//!
//! Birds reuse the front thigh/knee/paw chain for the wings.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Isometry3, Point3, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Camera, SphericalSample, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkeletonError {
    #[error("missing keypoint {0}")]
    MissingKeypoint(String),
    #[error("unknown keypoint {0}")]
    UnknownKeypoint(String),
    #[error("expected 18 bones, found {0}")]
    BoneCount(usize),
    #[error("duplicate bone {0}–{1}")]
    DuplicateBone(KeypointName, KeypointName),
    #[error("bone {0}–{0} connects a keypoint to itself")]
    SelfLoop(KeypointName),
    #[error("bone graph is not connected")]
    Disconnected,
    #[error("unsupported version {0}, expected 1")]
    Version(u32),
    #[error("non-finite coordinate in keypoint {0}")]
    NonFinite(KeypointName),
    #[error("malformed skeleton document: {0}")]
    Malformed(String),
}

macro_rules! keypoints {
    ($($variant:ident => $name:literal),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum KeypointName { $($variant),* }

        impl KeypointName {
            pub const ALL: [KeypointName; 18] = [$(KeypointName::$variant),*];

            pub fn as_str(self) -> &'static str {
                match self { $(KeypointName::$variant => $name),* }
            }
        }

        impl FromStr for KeypointName {
            type Err = SkeletonError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok(KeypointName::$variant),)*
                    other => Err(SkeletonError::UnknownKeypoint(other.to_string())),
                }
            }
        }
    };
}

keypoints! {
    LeftEye => "left_eye",
    RightEye => "right_eye",
    Nose => "nose",
    NeckEnd => "neck_end",
    FrontLeftThigh => "front_left_thigh",
    FrontRightThigh => "front_right_thigh",
    RearLeftThigh => "rear_left_thigh",
    RearRightThigh => "rear_right_thigh",
    FrontLeftKnee => "front_left_knee",
    FrontRightKnee => "front_right_knee",
    RearLeftKnee => "rear_left_knee",
    RearRightKnee => "rear_right_knee",
    FrontLeftPaw => "front_left_paw",
    FrontRightPaw => "front_right_paw",
    RearLeftPaw => "rear_left_paw",
    RearRightPaw => "rear_right_paw",
    BackEnd => "back_end",
    TailEnd => "tail_end",
}

pub const NUM_KEYPOINTS: usize = 18;
pub const NUM_BONES: usize = 18;

impl KeypointName {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_head(self) -> bool {
        matches!(self, KeypointName::LeftEye | KeypointName::RightEye | KeypointName::Nose)
    }

    /// The keypoint on the other side of the body, if any.
    pub fn mirror(self) -> KeypointName {
        use KeypointName::*;
        match self {
            LeftEye => RightEye,
            RightEye => LeftEye,
            FrontLeftThigh => FrontRightThigh,
            FrontRightThigh => FrontLeftThigh,
            RearLeftThigh => RearRightThigh,
            RearRightThigh => RearLeftThigh,
            FrontLeftKnee => FrontRightKnee,
            FrontRightKnee => FrontLeftKnee,
            RearLeftKnee => RearRightKnee,
            RearRightKnee => RearLeftKnee,
            FrontLeftPaw => FrontRightPaw,
            FrontRightPaw => FrontLeftPaw,
            RearLeftPaw => RearRightPaw,
            RearRightPaw => RearLeftPaw,
            other => other,
        }
    }
}

impl fmt::Display for KeypointName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type Bone = (KeypointName, KeypointName);

/// Canonical bone list: head triangle, neck, spine, shoulders, hips, the
/// eight limb segments and the tail.
pub const CANONICAL_BONES: [Bone; NUM_BONES] = {
    use KeypointName::*;
    [
        (LeftEye, RightEye),
        (LeftEye, Nose),
        (RightEye, Nose),
        (Nose, NeckEnd),
        (NeckEnd, BackEnd),
        (NeckEnd, FrontLeftThigh),
        (NeckEnd, FrontRightThigh),
        (BackEnd, RearLeftThigh),
        (BackEnd, RearRightThigh),
        (FrontLeftThigh, FrontLeftKnee),
        (FrontRightThigh, FrontRightKnee),
        (RearLeftThigh, RearLeftKnee),
        (RearRightThigh, RearRightKnee),
        (FrontLeftKnee, FrontLeftPaw),
        (FrontRightKnee, FrontRightPaw),
        (RearLeftKnee, RearLeftPaw),
        (RearRightKnee, RearRightPaw),
        (BackEnd, TailEnd),
    ]
};

/// The eight thigh–knee and knee–paw segments.
pub const LIMB_BONES: [Bone; 8] = {
    use KeypointName::*;
    [
        (FrontLeftThigh, FrontLeftKnee),
        (FrontRightThigh, FrontRightKnee),
        (RearLeftThigh, RearLeftKnee),
        (RearRightThigh, RearRightKnee),
        (FrontLeftKnee, FrontLeftPaw),
        (FrontRightKnee, FrontRightPaw),
        (RearLeftKnee, RearLeftPaw),
        (RearRightKnee, RearRightPaw),
    ]
};

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    keypoints: [Vec3; NUM_KEYPOINTS],
    bones: Vec<Bone>,
}

impl Skeleton {
    pub fn new(keypoints: [Vec3; NUM_KEYPOINTS], bones: Vec<Bone>) -> Result<Self, SkeletonError> {
        let s = Self { keypoints, bones };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SkeletonError> {
        for name in KeypointName::ALL {
            if !self.keypoints[name.index()].iter().all(|c| c.is_finite()) {
                return Err(SkeletonError::NonFinite(name));
            }
        }
        if self.bones.len() != NUM_BONES {
            return Err(SkeletonError::BoneCount(self.bones.len()));
        }
        let mut seen = HashSet::new();
        for &(a, b) in &self.bones {
            if a == b {
                return Err(SkeletonError::SelfLoop(a));
            }
            let key = if a < b { (a, b) } else { (b, a) };
            if !seen.insert(key) {
                return Err(SkeletonError::DuplicateBone(a, b));
            }
        }
        // union-find over the 18 keypoints
        let mut parent: Vec<usize> = (0..NUM_KEYPOINTS).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for &(a, b) in &self.bones {
            let (ra, rb) = (find(&mut parent, a.index()), find(&mut parent, b.index()));
            parent[ra] = rb;
        }
        let root = find(&mut parent, 0);
        if (1..NUM_KEYPOINTS).any(|i| find(&mut parent, i) != root) {
            return Err(SkeletonError::Disconnected);
        }
        Ok(())
    }

    pub fn get(&self, name: KeypointName) -> Vec3 {
        self.keypoints[name.index()]
    }

    pub fn set(&mut self, name: KeypointName, p: Vec3) {
        self.keypoints[name.index()] = p;
    }

    pub fn keypoints(&self) -> &[Vec3; NUM_KEYPOINTS] {
        &self.keypoints
    }

    pub fn bones(&self) -> &[Bone] {
        &self.bones
    }

    pub fn bounding_box(&self) -> Aabb {
        let mut b = Aabb::empty();
        for p in &self.keypoints {
            b.include(p);
        }
        b
    }

    /// Unit vector pointing from the body's right side to its left side.
    pub fn lateral(&self) -> Vec3 {
        use KeypointName::*;
        let d = (self.get(LeftEye) - self.get(RightEye))
            + (self.get(FrontLeftThigh) - self.get(FrontRightThigh))
            + (self.get(RearLeftThigh) - self.get(RearRightThigh));
        if d.norm() < 1e-12 {
            Vec3::y()
        } else {
            d.normalize()
        }
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> Skeleton {
        let mut out = self.clone();
        for p in out.keypoints.iter_mut() {
            *p = iso.transform_point(&Point3::from(*p)).coords;
        }
        out
    }

    pub fn to_document(&self) -> SkeletonDocument {
        SkeletonDocument {
            version: 1,
            keypoints: KeypointName::ALL
                .iter()
                .map(|&n| (n.as_str().to_string(), self.get(n).into()))
                .collect(),
            bones: self.bones.iter().map(|&(a, b)| [a.as_str().to_string(), b.as_str().to_string()]).collect(),
        }
    }

    pub fn from_document(doc: SkeletonDocument) -> Result<Self, SkeletonError> {
        if doc.version != 1 {
            return Err(SkeletonError::Version(doc.version));
        }
        for name in doc.keypoints.keys() {
            name.parse::<KeypointName>()?;
        }
        let mut keypoints = [Vec3::zeros(); NUM_KEYPOINTS];
        for name in KeypointName::ALL {
            let p = doc
                .keypoints
                .get(name.as_str())
                .ok_or_else(|| SkeletonError::MissingKeypoint(name.as_str().to_string()))?;
            keypoints[name.index()] = Vec3::from(*p);
        }
        if doc.bones.len() != NUM_BONES {
            return Err(SkeletonError::BoneCount(doc.bones.len()));
        }
        let bones = doc
            .bones
            .iter()
            .map(|[a, b]| Ok((a.parse()?, b.parse()?)))
            .collect::<Result<Vec<_>, SkeletonError>>()?;
        Skeleton::new(keypoints, bones)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("skeleton serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SkeletonError> {
        let doc: SkeletonDocument =
            serde_json::from_str(text).map_err(|e| SkeletonError::Malformed(e.to_string()))?;
        Self::from_document(doc)
    }
}

/// Serialized skeleton: `{version, keypoints: {name: [x,y,z]}, bones: [[a,b]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonDocument {
    pub version: u32,
    pub keypoints: BTreeMap<String, [f64; 3]>,
    pub bones: Vec<[String; 2]>,
}

/// Canonical quadruped standing on z = 0 and facing +x, left side at +y.
pub fn default_skeleton() -> Skeleton {
    use KeypointName::*;
    let mut k = [Vec3::zeros(); NUM_KEYPOINTS];
    let mut put = |n: KeypointName, x: f64, y: f64, z: f64| k[n.index()] = Vec3::new(x, y, z);
    put(Nose, 0.46, 0.0, 0.55);
    put(LeftEye, 0.37, 0.05, 0.62);
    put(RightEye, 0.37, -0.05, 0.62);
    put(NeckEnd, 0.26, 0.0, 0.50);
    put(BackEnd, -0.24, 0.0, 0.45);
    put(TailEnd, -0.46, 0.0, 0.30);
    put(FrontLeftThigh, 0.20, 0.08, 0.38);
    put(FrontRightThigh, 0.20, -0.08, 0.38);
    put(RearLeftThigh, -0.20, 0.08, 0.37);
    put(RearRightThigh, -0.20, -0.08, 0.37);
    put(FrontLeftKnee, 0.22, 0.08, 0.20);
    put(FrontRightKnee, 0.22, -0.08, 0.20);
    put(RearLeftKnee, -0.24, 0.08, 0.20);
    put(RearRightKnee, -0.24, -0.08, 0.20);
    put(FrontLeftPaw, 0.22, 0.08, 0.03);
    put(FrontRightPaw, 0.22, -0.08, 0.03);
    put(RearLeftPaw, -0.21, 0.08, 0.03);
    put(RearRightPaw, -0.21, -0.08, 0.03);
    Skeleton::new(k, CANONICAL_BONES.to_vec()).expect("canonical skeleton is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewDescription {
    Front,
    LeftSide,
    Back,
    RightSide,
    Top,
    Bottom,
}

impl ViewDescription {
    pub const ALL: [ViewDescription; 6] = [
        ViewDescription::Front,
        ViewDescription::LeftSide,
        ViewDescription::Back,
        ViewDescription::RightSide,
        ViewDescription::Top,
        ViewDescription::Bottom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ViewDescription::Front => "front",
            ViewDescription::LeftSide => "left_side",
            ViewDescription::Back => "back",
            ViewDescription::RightSide => "right_side",
            ViewDescription::Top => "top",
            ViewDescription::Bottom => "bottom",
        }
    }

    /// Bins on (azimuth, polar) in degrees, measured in the animal frame.
    pub fn from_angles(azimuth: f64, polar: f64) -> Self {
        if polar < 45.0 {
            return ViewDescription::Top;
        }
        if polar > 135.0 {
            return ViewDescription::Bottom;
        }
        let a = azimuth.rem_euclid(360.0);
        if a <= 45.0 || a > 315.0 {
            ViewDescription::Front
        } else if a <= 135.0 {
            ViewDescription::LeftSide
        } else if a <= 225.0 {
            ViewDescription::Back
        } else {
            ViewDescription::RightSide
        }
    }
}

impl fmt::Display for ViewDescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ViewDescription {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ViewDescription::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown view description {s}"))
    }
}

/// Classifies the camera direction in the animal's frame. `animal_frame`
/// maps animal-local axes (facing +x, up +z) to world.
pub fn classify_view(camera: &Camera, animal_frame: &UnitQuaternion<f64>) -> ViewDescription {
    let d = animal_frame.inverse_transform_vector(&(camera.position() - camera.look_at()));
    let s = SphericalSample::from_offset(&d);
    ViewDescription::from_angles(s.azimuth, s.polar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadVisibility {
    pub left_eye_visible: bool,
    pub right_eye_visible: bool,
    pub nose_visible: bool,
}

impl HeadVisibility {
    pub fn allows(&self, name: KeypointName) -> bool {
        match name {
            KeypointName::LeftEye => self.left_eye_visible,
            KeypointName::RightEye => self.right_eye_visible,
            KeypointName::Nose => self.nose_visible,
            _ => true,
        }
    }
}

pub fn head_visibility(view: ViewDescription) -> HeadVisibility {
    let (l, r, n) = match view {
        ViewDescription::Front | ViewDescription::Top | ViewDescription::Bottom => (true, true, true),
        ViewDescription::Back => (false, false, false),
        ViewDescription::LeftSide => (true, false, true),
        ViewDescription::RightSide => (false, true, true),
    };
    HeadVisibility { left_eye_visible: l, right_eye_visible: r, nose_visible: n }
}
