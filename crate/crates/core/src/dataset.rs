//! Preparation of 2D pose control data: keypoint-coverage filtering,
//! rotation/translation/scale augmentation and control-image rendering.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{rasterize_pose, BoneProjection, KeypointProjection, Pose2D, PoseStyle};
use crate::image::RgbImage;
use crate::skeleton::{KeypointName, CANONICAL_BONES, NUM_KEYPOINTS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("malformed annotation: {0}")]
    Malformed(String),
    #[error("missing keypoint slot {0}")]
    MissingSlot(String),
    #[error("invalid augmentation range `{0}`")]
    InvalidRange(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotatedKeypoint {
    pub u: f64,
    pub v: f64,
    pub annotated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationSample {
    pub width: u32,
    pub height: u32,
    pub keypoints: [AnnotatedKeypoint; NUM_KEYPOINTS],
    pub species: String,
}

/// On-disk form: every keypoint name present, `null` when not annotated.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationDocument {
    pub image_size: [u32; 2],
    pub species: String,
    pub keypoints: BTreeMap<String, Option<[f64; 2]>>,
}

impl AnnotationSample {
    pub fn annotated_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.annotated).count()
    }

    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        let doc: AnnotationDocument = serde_json::from_str(text).map_err(|e| DatasetError::Malformed(e.to_string()))?;
        for name in doc.keypoints.keys() {
            name.parse::<KeypointName>().map_err(|e| DatasetError::Malformed(e.to_string()))?;
        }
        let mut keypoints = [AnnotatedKeypoint { u: 0.0, v: 0.0, annotated: false }; NUM_KEYPOINTS];
        for name in KeypointName::ALL {
            let slot = doc
                .keypoints
                .get(name.as_str())
                .ok_or_else(|| DatasetError::MissingSlot(name.as_str().to_string()))?;
            if let Some([u, v]) = *slot {
                keypoints[name.index()] = AnnotatedKeypoint { u, v, annotated: true };
            }
        }
        Ok(Self { width: doc.image_size[0], height: doc.image_size[1], keypoints, species: doc.species })
    }

    pub fn to_json(&self) -> String {
        let doc = AnnotationDocument {
            image_size: [self.width, self.height],
            species: self.species.clone(),
            keypoints: KeypointName::ALL
                .iter()
                .map(|n| {
                    let k = self.keypoints[n.index()];
                    (n.as_str().to_string(), k.annotated.then_some([k.u, k.v]))
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("annotation serializes")
    }

    fn in_image(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }

    /// Pose with annotated keypoints visible; used for control rendering.
    pub fn to_pose(&self) -> Pose2D {
        let keypoints = self.keypoints.map(|k| KeypointProjection {
            u: k.u,
            v: k.v,
            depth: 0.0,
            in_front: k.annotated,
            in_frame: k.annotated && self.in_image(k.u, k.v),
            visible: k.annotated,
        });
        let mut pose = Pose2D {
            width: self.width as usize,
            height: self.height as usize,
            view: None,
            keypoints,
            bones: CANONICAL_BONES.iter().map(|&bone| BoneProjection { bone, drawable: false }).collect(),
        };
        pose.refresh_bones();
        pose
    }
}

/// Keep iff at least `threshold` of the 18 slots are annotated.
pub fn coverage_filter(sample: &AnnotationSample, threshold: f64) -> bool {
    let count = sample.annotated_count();
    count > 0 && count as f64 >= threshold * NUM_KEYPOINTS as f64 - 1e-12
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Degrees; positive turns +u toward +v in raster coordinates.
    pub rotation: f64,
    pub translation: [f64; 2],
    pub scale: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams { rotation: 0.0, translation: [0.0, 0.0], scale: 1.0 };

    /// Parameters of the inverse map in the same scale→rotate→translate form.
    pub fn inverse(&self) -> AugmentParams {
        let (s, c) = (-self.rotation).to_radians().sin_cos();
        let [tx, ty] = self.translation;
        let inv = 1.0 / self.scale;
        AugmentParams {
            rotation: -self.rotation,
            translation: [-inv * (c * tx - s * ty), -inv * (s * tx + c * ty)],
            scale: inv,
        }
    }

    pub fn apply(&self, center: (f64, f64), u: f64, v: f64) -> (f64, f64) {
        let (s, c) = self.rotation.to_radians().sin_cos();
        let (x, y) = ((u - center.0) * self.scale, (v - center.1) * self.scale);
        (center.0 + c * x - s * y + self.translation[0], center.1 + s * x + c * y + self.translation[1])
    }
}

/// Scales, rotates about the image center, then translates every annotated
/// keypoint. Keypoints that leave the image lose their annotation.
pub fn augment(sample: &AnnotationSample, params: &AugmentParams) -> AnnotationSample {
    let center = (0.5 * sample.width as f64, 0.5 * sample.height as f64);
    let mut out = sample.clone();
    for k in out.keypoints.iter_mut().filter(|k| k.annotated) {
        let (u, v) = params.apply(center, k.u, k.v);
        k.u = u;
        k.v = v;
        k.annotated = sample.in_image(u, v);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentRanges {
    pub rotation: [f64; 2],
    /// Fraction of the image size along each axis.
    pub translation: [f64; 2],
    pub scale: [f64; 2],
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self { rotation: [-30.0, 30.0], translation: [-0.1, 0.1], scale: [0.7, 1.3] }
    }
}

impl AugmentRanges {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(self.rotation[0] <= self.rotation[1]) {
            return Err(DatasetError::InvalidRange("rotation"));
        }
        if !(self.translation[0] <= self.translation[1]) {
            return Err(DatasetError::InvalidRange("translation"));
        }
        if !(self.scale[0] <= self.scale[1] && self.scale[0] > 0.0) {
            return Err(DatasetError::InvalidRange("scale"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, width: u32, height: u32) -> AugmentParams {
        let mut draw = |r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.random_range(r[0]..r[1]) };
        let rotation = draw(self.rotation);
        let tx = draw(self.translation) * width as f64;
        let ty = draw(self.translation) * height as f64;
        let scale = draw(self.scale);
        AugmentParams { rotation, translation: [tx, ty], scale }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeciesCounts {
    pub kept: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleError {
    pub id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationReport {
    pub total: usize,
    pub kept: usize,
    pub rejected: usize,
    pub errors: Vec<SampleError>,
    pub per_species: BTreeMap<String, SpeciesCounts>,
}

#[derive(Debug, Clone)]
pub struct ControlSample {
    pub id: String,
    pub params: AugmentParams,
    pub image: RgbImage,
}

/// One raw annotation document and the name it is reported under.
#[derive(Debug, Clone)]
pub struct SourceDocument {
    pub id: String,
    pub text: String,
}

enum Outcome {
    Kept(String, ControlSample),
    Rejected(String),
    Failed(SampleError),
}

fn sample_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 step so neighbouring indices get unrelated streams
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Filters, augments and rasterizes every document. Unreadable documents
/// are reported and skipped. Output order follows input order and the result
/// depends only on the inputs and `seed`.
pub fn make_control_set(
    docs: &[SourceDocument],
    threshold: f64,
    ranges: &AugmentRanges,
    seed: u64,
) -> Result<(Vec<ControlSample>, CurationReport), DatasetError> {
    ranges.validate()?;
    let outcomes: Vec<Outcome> = docs
        .par_iter()
        .enumerate()
        .map(|(i, doc)| {
            let sample = match AnnotationSample::from_json(&doc.text) {
                Ok(s) => s,
                Err(e) => return Outcome::Failed(SampleError { id: doc.id.clone(), message: e.to_string() }),
            };
            if !coverage_filter(&sample, threshold) {
                return Outcome::Rejected(sample.species);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, i));
            let params = ranges.sample(&mut rng, sample.width, sample.height);
            let aug = augment(&sample, &params);
            let image = rasterize_pose(&aug.to_pose(), &PoseStyle::for_width(sample.width as usize));
            Outcome::Kept(sample.species, ControlSample { id: doc.id.clone(), params, image })
        })
        .collect();

    let mut report = CurationReport { total: docs.len(), ..Default::default() };
    let mut kept = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Kept(species, s) => {
                report.kept += 1;
                report.per_species.entry(species).or_default().kept += 1;
                kept.push(s);
            }
            Outcome::Rejected(species) => {
                report.rejected += 1;
                report.per_species.entry(species).or_default().rejected += 1;
            }
            Outcome::Failed(e) => report.errors.push(e),
        }
    }
    Ok((kept, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_with(n: usize) -> AnnotationSample {
        let mut keypoints = [AnnotatedKeypoint { u: 0.0, v: 0.0, annotated: false }; NUM_KEYPOINTS];
        for (i, k) in keypoints.iter_mut().enumerate().take(n) {
            *k = AnnotatedKeypoint { u: 10.0 + 5.0 * i as f64, v: 20.0 + 3.0 * i as f64, annotated: true };
        }
        AnnotationSample { width: 128, height: 128, keypoints, species: "tiger".into() }
    }

    #[test]
    fn coverage_threshold_examples() {
        assert!(!coverage_filter(&sample_with(5), 0.30));
        assert!(coverage_filter(&sample_with(6), 0.30));
        assert!(!coverage_filter(&sample_with(0), 0.30));
        assert!(!coverage_filter(&sample_with(0), 1e-9));
        assert!(coverage_filter(&sample_with(18), 1.0));
    }

    #[test]
    fn identity_augmentation() {
        let s = sample_with(10);
        assert_eq!(augment(&s, &AugmentParams::IDENTITY), s);
    }

    #[test]
    fn quarter_turn_in_raster_coordinates() {
        let mut s = sample_with(1);
        s.keypoints[0] = AnnotatedKeypoint { u: 74.0, v: 64.0, annotated: true };
        let out = augment(&s, &AugmentParams { rotation: 90.0, translation: [0.0, 0.0], scale: 1.0 });
        assert!((out.keypoints[0].u - 64.0).abs() < 1e-9);
        assert!((out.keypoints[0].v - 74.0).abs() < 1e-9);
    }

    #[test]
    fn large_scale_drops_edge_keypoints() {
        let mut s = sample_with(1);
        s.keypoints[0] = AnnotatedKeypoint { u: 120.0, v: 64.0, annotated: true };
        let out = augment(&s, &AugmentParams { rotation: 0.0, translation: [0.0, 0.0], scale: 10.0 });
        assert!(!out.keypoints[0].annotated);
    }

    #[test]
    fn document_round_trip() {
        let s = sample_with(7);
        assert_eq!(AnnotationSample::from_json(&s.to_json()).unwrap(), s);
        let mut doc: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        doc["keypoints"].as_object_mut().unwrap().remove("tail_end");
        let err = AnnotationSample::from_json(&doc.to_string()).unwrap_err();
        assert_eq!(err, DatasetError::MissingSlot("tail_end".into()));
    }

    #[test]
    fn empty_input() {
        let (out, report) = make_control_set(&[], 0.3, &AugmentRanges::default(), 1).unwrap();
        assert!(out.is_empty());
        assert_eq!((report.total, report.kept, report.rejected), (0, 0, 0));
    }

    #[test]
    fn everything_below_threshold() {
        let docs: Vec<_> = (0..4)
            .map(|i| SourceDocument { id: format!("s{i}"), text: sample_with(3).to_json() })
            .collect();
        let (out, report) = make_control_set(&docs, 0.3, &AugmentRanges::default(), 1).unwrap();
        assert!(out.is_empty());
        assert_eq!(report.rejected, 4);
        assert_eq!(report.per_species["tiger"].rejected, 4);
    }

    #[test]
    fn bad_documents_are_reported() {
        let docs = vec![
            SourceDocument { id: "ok".into(), text: sample_with(12).to_json() },
            SourceDocument { id: "bad".into(), text: "{not json".into() },
        ];
        let (out, report) = make_control_set(&docs, 0.3, &AugmentRanges::default(), 1).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].id, "bad");
    }
}
