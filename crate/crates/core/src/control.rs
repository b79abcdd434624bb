//! Conditioning images: sphere-traced depth maps of the balloon shape and
//! rasterized 2D pose images with head-part occlusion culling.

use nalgebra::UnitQuaternion;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balloon::BalloonShape;
use crate::geometry::{project_with, ray_with, Camera};
use crate::image::{png16, Image, RgbImage};
use crate::skeleton::{classify_view, head_visibility, Bone, KeypointName, Skeleton, ViewDescription, NUM_KEYPOINTS};

pub const HIT_EPSILON: f64 = 1e-4;
pub const MAX_STEPS: usize = 128;

/// Camera-forward depth per pixel; `+inf` where the ray misses.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn is_hit(&self, x: usize, y: usize) -> bool {
        self.get(x, y).is_finite()
    }

    pub fn hit_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_finite()).count()
    }

    /// Hit mask as 0/1 values.
    pub fn silhouette(&self) -> Vec<f64> {
        self.values.iter().map(|v| if v.is_finite() { 1.0 } else { 0.0 }).collect()
    }

    /// Little-endian portable float map, rows stored bottom-up. Misses are
    /// written as `+inf`, or as `0.0` when `miss_as_zero` is set.
    pub fn to_pfm(&self, miss_as_zero: bool) -> Vec<u8> {
        let mut out = format!("Pf\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        out.reserve(self.values.len() * 4);
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                let v = self.get(x, y);
                let v = if !v.is_finite() && miss_as_zero { 0.0 } else { v as f32 };
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_pfm(bytes: &[u8]) -> Result<DepthMap, String> {
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated header".into());
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| e.to_string())?.to_string());
        }
        pos += 1;
        if fields[0] != "Pf" {
            return Err(format!("unsupported PFM kind {}", fields[0]));
        }
        let w: usize = fields[1].parse().map_err(|_| "bad width")?;
        let h: usize = fields[2].parse().map_err(|_| "bad height")?;
        let scale: f64 = fields[3].parse().map_err(|_| "bad scale")?;
        if scale >= 0.0 {
            return Err("big-endian PFM is not supported".into());
        }
        let body = &bytes[pos..];
        if body.len() != w * h * 4 {
            return Err(format!("expected {} data bytes, found {}", w * h * 4, body.len()));
        }
        let mut values = vec![0.0; w * h];
        for (i, chunk) in body.chunks_exact(4).enumerate() {
            let (row, x) = (i / w, i % w);
            values[(h - 1 - row) * w + x] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
        Ok(DepthMap { width: w, height: h, values })
    }

    fn hit_range(&self) -> (f64, f64) {
        let hits = self.values.iter().copied().filter(|v| v.is_finite());
        let (lo, hi) = hits.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        (lo, (hi - lo).max(1e-12))
    }

    /// Single-channel conditioning image: hits map linearly from 1 at the
    /// nearest to 1/65535 at the farthest, misses are 0.
    pub fn to_control(&self) -> Image {
        let (lo, span) = self.hit_range();
        let data = self
            .values
            .iter()
            .map(|&v| if v.is_finite() { (1.0 + 65534.0 * (1.0 - (v - lo) / span)) / 65535.0 } else { 0.0 })
            .collect();
        Image::from_data(self.width, self.height, 1, data)
    }

    /// 16-bit grayscale preview of [`DepthMap::to_control`].
    pub fn to_png16(&self) -> Vec<u8> {
        let data: Vec<u16> = self.to_control().data.iter().map(|v| (v * 65535.0).round() as u16).collect();
        png16(self.width, self.height, &data)
    }
}

/// Sphere-traces the union distance for every pixel center.
pub fn render_depth(shape: &BalloonShape, camera: &Camera) -> DepthMap {
    let basis = camera.basis();
    let (w, h) = (camera.width as usize, camera.height as usize);
    let mut values = vec![f64::INFINITY; w * h];
    values.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let ray = ray_with(camera, &basis, x as f64 + 0.5, y as f64 + 0.5);
            let cos = ray.direction.dot(&basis.forward);
            let (k_min, k_max) = (camera.near / cos, camera.far / cos);
            let mut k = k_min;
            for _ in 0..MAX_STEPS {
                let d = shape.sdf(&ray.at(k));
                if d < HIT_EPSILON {
                    *out = k * cos;
                    break;
                }
                k += d;
                if k > k_max {
                    break;
                }
            }
        }
    });
    DepthMap { width: w, height: h, values }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointProjection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub in_front: bool,
    pub in_frame: bool,
    pub visible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoneProjection {
    pub bone: Bone,
    pub drawable: bool,
}

/// Projected skeleton with per-keypoint visibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub width: usize,
    pub height: usize,
    pub view: Option<ViewDescription>,
    pub keypoints: [KeypointProjection; NUM_KEYPOINTS],
    pub bones: Vec<BoneProjection>,
}

impl Pose2D {
    pub fn keypoint(&self, name: KeypointName) -> &KeypointProjection {
        &self.keypoints[name.index()]
    }

    pub fn visible_count(&self) -> usize {
        self.keypoints.iter().filter(|k| k.visible).count()
    }

    /// Recomputes bone drawability from keypoint visibility.
    pub fn refresh_bones(&mut self) {
        for b in self.bones.iter_mut() {
            b.drawable = self.keypoints[b.bone.0.index()].visible && self.keypoints[b.bone.1.index()].visible;
        }
    }
}

pub fn project_pose(skeleton: &Skeleton, camera: &Camera) -> Pose2D {
    project_pose_in_frame(skeleton, camera, &UnitQuaternion::identity())
}

/// Projects every keypoint, hides the head parts the view cannot see, and
/// marks keypoints behind the camera invisible. Off-image keypoints keep
/// their coordinates and are flagged out of frame.
pub fn project_pose_in_frame(skeleton: &Skeleton, camera: &Camera, animal_frame: &UnitQuaternion<f64>) -> Pose2D {
    let basis = camera.basis();
    let view = classify_view(camera, animal_frame);
    let heads = head_visibility(view);
    let keypoints = KeypointName::ALL.map(|name| {
        let p = project_with(camera, &basis, &skeleton.get(name));
        KeypointProjection {
            u: p.u,
            v: p.v,
            depth: p.depth,
            in_front: p.in_front,
            in_frame: p.in_front && p.in_image(camera.width, camera.height),
            visible: p.in_front && heads.allows(name),
        }
    });
    let mut pose = Pose2D {
        width: camera.width as usize,
        height: camera.height as usize,
        view: Some(view),
        keypoints,
        bones: skeleton.bones().iter().map(|&bone| BoneProjection { bone, drawable: false }).collect(),
    };
    pose.refresh_bones();
    pose
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseStyle {
    pub disc_radius: f64,
    pub bone_width: f64,
    pub keypoint_colors: [[u8; 3]; NUM_KEYPOINTS],
    /// Colors for the canonical bone order; extra bones reuse them cyclically.
    pub bone_colors: Vec<[u8; 3]>,
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round() as u8)
}

impl PoseStyle {
    /// 18 evenly spaced hues for keypoints, darker offset hues for bones;
    /// disc radius and bone width are 4 px at 512 px, scaled to `width`.
    pub fn for_width(width: usize) -> Self {
        let scale = width as f64 / 512.0;
        Self {
            disc_radius: (4.0 * scale).max(1.0),
            bone_width: (4.0 * scale).max(1.0),
            keypoint_colors: std::array::from_fn(|i| hsv(i as f64 / 18.0, 1.0, 1.0)),
            bone_colors: (0..18).map(|i| hsv((i as f64 + 0.5) / 18.0, 1.0, 0.6)).collect(),
        }
    }
}

fn paint_disc(img: &mut RgbImage, cx: f64, cy: f64, r: f64, color: [u8; 3]) {
    let (w, h) = (img.width as i64, img.height as i64);
    let x0 = ((cx - r).floor() as i64 - 1).max(0);
    let x1 = ((cx + r).ceil() as i64 + 1).min(w - 1);
    let y0 = ((cy - r).floor() as i64 - 1).max(0);
    let y1 = ((cy + r).ceil() as i64 + 1).min(h - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            if dx * dx + dy * dy <= r * r {
                img.put(x as usize, y as usize, color);
            }
        }
    }
}

fn paint_bar(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), width: f64, color: [u8; 3]) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 < 1e-12 {
        return;
    }
    let half = 0.5 * width;
    let (w, h) = (img.width as i64, img.height as i64);
    let x0 = ((a.0.min(b.0) - half).floor() as i64 - 1).max(0);
    let x1 = ((a.0.max(b.0) + half).ceil() as i64 + 1).min(w - 1);
    let y0 = ((a.1.min(b.1) - half).floor() as i64 - 1).max(0);
    let y1 = ((a.1.max(b.1) + half).ceil() as i64 + 1).min(h - 1);
    let len = len2.sqrt();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64 + 0.5 - a.0, y as f64 + 0.5 - a.1);
            let t = (px * dx + py * dy) / len2;
            let perp = (px * dy - py * dx).abs() / len;
            if (0.0..=1.0).contains(&t) && perp <= half {
                img.put(x as usize, y as usize, color);
            }
        }
    }
}

/// Draws drawable bones far-to-near, then visible keypoint discs far-to-near.
/// No anti-aliasing; the background stays exactly zero.
pub fn rasterize_pose(pose: &Pose2D, style: &PoseStyle) -> RgbImage {
    let mut img = RgbImage::new(pose.width, pose.height);
    let mut bones: Vec<(usize, &BoneProjection)> = pose.bones.iter().enumerate().filter(|(_, b)| b.drawable).collect();
    let mean_depth = |b: &BoneProjection| 0.5 * (pose.keypoint(b.bone.0).depth + pose.keypoint(b.bone.1).depth);
    bones.sort_by(|(ia, a), (ib, b)| mean_depth(b).total_cmp(&mean_depth(a)).then(ia.cmp(ib)));
    for (i, b) in bones {
        let (ka, kb) = (pose.keypoint(b.bone.0), pose.keypoint(b.bone.1));
        let color = style.bone_colors[i % style.bone_colors.len()];
        paint_bar(&mut img, (ka.u, ka.v), (kb.u, kb.v), style.bone_width, color);
    }
    let mut kps: Vec<usize> = (0..NUM_KEYPOINTS).filter(|&i| pose.keypoints[i].visible).collect();
    kps.sort_by(|&a, &b| pose.keypoints[b].depth.total_cmp(&pose.keypoints[a].depth).then(a.cmp(&b)));
    for i in kps {
        let k = &pose.keypoints[i];
        paint_disc(&mut img, k.u, k.v, style.disc_radius, style.keypoint_colors[i]);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balloon::SdfPrimitive;
    use crate::geometry::{SphericalSample, Vec3};
    use crate::skeleton::default_skeleton;

    fn canonical_camera() -> Camera {
        Camera::new(Vec3::new(0.0, 0.0, 2.0), Vec3::zeros(), 45.0, 64, 64).unwrap()
    }

    fn view_camera(az: f64, polar: f64) -> Camera {
        let center = Vec3::new(0.0, 0.0, 0.3);
        let s = SphericalSample { radius: 1.6, azimuth: az, polar };
        Camera::new(center + s.offset(), center, 45.0, 128, 128).unwrap()
    }

    #[test]
    fn sphere_center_depth() {
        let shape = BalloonShape::new(vec![SdfPrimitive::sphere(Vec3::zeros(), 0.5)]);
        let d = render_depth(&shape, &canonical_camera());
        // pixel (32, 32) is half a pixel off axis; depth barely changes
        assert!((d.get(32, 32) - 1.5).abs() < 1e-3, "{}", d.get(32, 32));
        assert!(!d.is_hit(0, 0) && !d.is_hit(63, 63));
        assert!(d.values.iter().filter(|v| v.is_finite()).all(|&v| v > 0.05 && v < 10.0));
    }

    #[test]
    fn back_view_hides_head() {
        let pose = project_pose(&default_skeleton(), &view_camera(180.0, 90.0));
        assert_eq!(pose.view, Some(ViewDescription::Back));
        for n in [KeypointName::LeftEye, KeypointName::RightEye, KeypointName::Nose] {
            assert!(!pose.keypoint(n).visible);
        }
        let img = rasterize_pose(&pose, &PoseStyle::for_width(128));
        let style = PoseStyle::for_width(128);
        for n in [KeypointName::LeftEye, KeypointName::RightEye, KeypointName::Nose] {
            assert!(!img.contains_color(style.keypoint_colors[n.index()]));
        }
    }

    #[test]
    fn front_view_keeps_everything_in_front() {
        let pose = project_pose(&default_skeleton(), &view_camera(0.0, 90.0));
        assert_eq!(pose.view, Some(ViewDescription::Front));
        assert!(pose.keypoints.iter().all(|k| k.in_front));
        assert_eq!(pose.visible_count(), 18);
    }

    #[test]
    fn bones_need_both_endpoints() {
        let pose = project_pose(&default_skeleton(), &view_camera(180.0, 90.0));
        for b in &pose.bones {
            let both = pose.keypoint(b.bone.0).visible && pose.keypoint(b.bone.1).visible;
            assert_eq!(b.drawable, both);
        }
        let nose_neck = pose
            .bones
            .iter()
            .find(|b| b.bone == (KeypointName::Nose, KeypointName::NeckEnd))
            .unwrap();
        assert!(!nose_neck.drawable);
    }

    #[test]
    fn empty_pose_is_black() {
        let mut pose = project_pose(&default_skeleton(), &view_camera(0.0, 90.0));
        for k in pose.keypoints.iter_mut() {
            k.visible = false;
        }
        pose.refresh_bones();
        let img = rasterize_pose(&pose, &PoseStyle::for_width(128));
        assert_eq!(img.nonzero_pixels(), 0);
    }

    #[test]
    fn pfm_round_trip() {
        let shape = BalloonShape::new(vec![SdfPrimitive::sphere(Vec3::zeros(), 0.5)]);
        let d = render_depth(&shape, &canonical_camera().with_resolution(16, 12));
        let back = DepthMap::from_pfm(&d.to_pfm(false)).unwrap();
        for (a, b) in d.values.iter().zip(&back.values) {
            assert!(a == b || (a - b).abs() < 1e-6);
        }
        let zeroed = DepthMap::from_pfm(&d.to_pfm(true)).unwrap();
        assert_eq!(zeroed.get(0, 0), 0.0);
        assert!(d.to_pfm(true).starts_with(b"Pf\n16 12\n-1.0\n"));
    }

    #[test]
    fn depth_png_decodes() {
        let shape = BalloonShape::new(vec![SdfPrimitive::sphere(Vec3::zeros(), 0.5)]);
        let d = render_depth(&shape, &canonical_camera().with_resolution(16, 16));
        let png = d.to_png16();
        let img = image::load_from_memory(&png).unwrap().to_luma16();
        assert_eq!(img.get_pixel(0, 0).0[0], 0);
        assert!(img.get_pixel(8, 8).0[0] > 60000);
    }
}
