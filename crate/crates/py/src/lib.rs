//! Python bindings: skeletons, balloon meshes, control images, annotation
//! curation and the optimization pipeline.

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use tetrapod::balloon::{build_shape, export_obj, extract_mesh, BodyPartConfig};
use tetrapod::control::{project_pose, rasterize_pose, render_depth, PoseStyle};
use tetrapod::dataset::{make_control_set, AugmentRanges, SourceDocument};
use tetrapod::editor::preview_camera;
use tetrapod::geometry::{Camera, Vec3};
use tetrapod::pipeline::{Pipeline, PipelineConfig, Stages};
use tetrapod::skeleton::{default_skeleton, KeypointName};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn keypoint(name: &str) -> PyResult<KeypointName> {
    name.parse().map_err(|_| PyKeyError::new_err(format!("unknown keypoint {name}")))
}

/// 18-keypoint quadruped skeleton.
#[pyclass(name = "Skeleton", from_py_object)]
#[derive(Clone)]
pub struct PySkeleton {
    inner: tetrapod::Skeleton,
}

#[pymethods]
impl PySkeleton {
    /// The built-in standing quadruped.
    #[new]
    fn new() -> Self {
        Self { inner: default_skeleton() }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: tetrapod::Skeleton::from_json(text).map_err(value_err)? })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[staticmethod]
    fn keypoint_names() -> Vec<&'static str> {
        KeypointName::ALL.iter().map(|k| k.as_str()).collect()
    }

    fn get(&self, name: &str) -> PyResult<(f64, f64, f64)> {
        let p = self.inner.get(keypoint(name)?);
        Ok((p.x, p.y, p.z))
    }

    fn set(&mut self, name: &str, position: (f64, f64, f64)) -> PyResult<()> {
        let (x, y, z) = position;
        if ![x, y, z].iter().all(|v| v.is_finite()) {
            return Err(PyValueError::new_err("coordinates must be finite"));
        }
        self.inner.set(keypoint(name)?, Vec3::new(x, y, z));
        Ok(())
    }

    /// Balloon mesh as OBJ text.
    #[pyo3(signature = (resolution = 64, body_json = None))]
    fn mesh_obj(&self, resolution: usize, body_json: Option<&str>) -> PyResult<String> {
        let body = match body_json {
            Some(text) => serde_json::from_str::<BodyPartConfig>(text).map_err(value_err)?,
            None => BodyPartConfig::default(),
        };
        let shape = build_shape(&self.inner, &body).map_err(value_err)?;
        Ok(export_obj(&extract_mesh(&shape, resolution).map_err(value_err)?))
    }

    /// Pose control image as PNG bytes, seen from a camera orbiting the skeleton.
    #[pyo3(signature = (azimuth = 0.0, polar = 90.0, radius = 1.5, size = 256))]
    fn render_pose<'py>(&self, py: Python<'py>, azimuth: f64, polar: f64, radius: f64, size: u32) -> PyResult<Bound<'py, PyBytes>> {
        let cam = self.camera(azimuth, polar, radius, size)?;
        let img = rasterize_pose(&project_pose(&self.inner, &cam), &PoseStyle::for_width(size as usize));
        Ok(PyBytes::new(py, &img.to_png()))
    }

    /// Row-major depth along the view axis; misses are `inf`.
    #[pyo3(signature = (azimuth = 0.0, polar = 90.0, radius = 1.5, size = 64))]
    fn render_depth(&self, azimuth: f64, polar: f64, radius: f64, size: u32) -> PyResult<Vec<f64>> {
        let cam = self.camera(azimuth, polar, radius, size)?;
        let shape = build_shape(&self.inner, &BodyPartConfig::default()).map_err(value_err)?;
        Ok(render_depth(&shape, &cam).values)
    }

    fn __repr__(&self) -> String {
        let n = self.inner.get(KeypointName::Nose);
        format!("Skeleton(nose=({:.3}, {:.3}, {:.3}))", n.x, n.y, n.z)
    }
}

impl PySkeleton {
    fn camera(&self, azimuth: f64, polar: f64, radius: f64, size: u32) -> PyResult<Camera> {
        Ok(preview_camera(&self.inner, azimuth, polar, radius).map_err(value_err)?.with_resolution(size, size))
    }
}

/// Report JSON plus `(id, png)` for every kept document.
type Curated<'py> = (String, Vec<(String, Bound<'py, PyBytes>)>);

/// Filters and augments annotation documents given as `(id, json_text)`
/// pairs. Returns `(report_json, [(id, png_bytes)])`.
#[pyfunction]
#[pyo3(signature = (documents, threshold = 0.3, seed = 0))]
fn curate<'py>(
    py: Python<'py>,
    documents: Vec<(String, String)>,
    threshold: f64,
    seed: u64,
) -> PyResult<Curated<'py>> {
    let docs: Vec<SourceDocument> = documents.into_iter().map(|(id, text)| SourceDocument { id, text }).collect();
    let (samples, report) = make_control_set(&docs, threshold, &AugmentRanges::default(), seed).map_err(value_err)?;
    let images = samples.iter().map(|s| (s.id.clone(), PyBytes::new(py, &s.image.to_png()))).collect();
    Ok((serde_json::to_string(&report).map_err(value_err)?, images))
}

/// Runs the optimization stages for a pipeline config document. `stages`
/// is "1", "2" or "both". Returns the mean silhouette IoU of the final grid
/// on `eval_views` seeded held-out cameras.
#[pyfunction]
#[pyo3(signature = (config_json, stages = "both", eval_views = 4))]
fn optimize(py: Python<'_>, config_json: &str, stages: &str, eval_views: usize) -> PyResult<f64> {
    let config = PipelineConfig::from_json(config_json).map_err(value_err)?;
    let stages = match stages {
        "1" => Stages::First,
        "2" => Stages::Second,
        "both" => Stages::Both,
        other => return Err(PyValueError::new_err(format!("stages must be 1, 2 or both, got {other}"))),
    };
    py.detach(|| {
        let pipeline = Pipeline::new(config).map_err(value_err)?;
        let (grid, _) = pipeline.run(stages, None).map_err(value_err)?;
        let cameras = pipeline.held_out_cameras(eval_views).map_err(value_err)?;
        pipeline.mean_iou(&grid, &cameras).map_err(value_err)
    })
}

#[pymodule]
#[pyo3(name = "tetrapod")]
pub fn tetrapod_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySkeleton>()?;
    m.add_function(wrap_pyfunction!(curate, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    Ok(())
}
