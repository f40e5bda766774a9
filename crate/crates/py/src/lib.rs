//! Python bindings: cameras, Gaussians, rendering, metrics, synthetic scenes
//! and the trainer.

use std::path::PathBuf;

use nalgebra::Quaternion;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use gsdiff::augmentation::ViewOracle;
use gsdiff::geometry::{interpolate_pose_spline, sh_degree_for_len, Camera, CameraIntrinsics, Pose};
use gsdiff::image::{Image, Raster};
use gsdiff::io::synthetic::{arc_cameras, random_gaussians, synthetic_dataset, SyntheticOptions};
use gsdiff::io::{load_dataset, save_dataset, SceneDataset};
use gsdiff::losses::MsSsimDistance;
use gsdiff::primitives::Gaussian3D;
use gsdiff::render::RenderSettings;
use gsdiff::trainer::{
    load_checkpoint, oracle_from_spec, save_checkpoint, save_ground_truth, TrainConfig, Trainer, GROUND_TRUTH_FILE,
};
use gsdiff::Error;

fn py_err(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    match e {
        Error::Io(_) => PyIOError::new_err(msg),
        Error::NonFinite(_) | Error::Oracle(_) => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let list = PyList::empty(py);
            for x in a {
                list.append(json_to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, json_to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn image_dict<'py>(py: Python<'py>, color: &Image, depth: Option<&Raster>) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("width", color.width)?;
    d.set_item("height", color.height)?;
    d.set_item("color", color.data.clone())?;
    if let Some(depth) = depth {
        d.set_item("depth", depth.data.clone())?;
    }
    Ok(d)
}

fn to_image(data: Vec<f64>, width: usize, height: usize) -> PyResult<Image> {
    Image::from_data(width, height, data).map_err(py_err)
}

/// Pinhole camera with a world-to-camera pose `[qw, qx, qy, qz, tx, ty, tz]`.
#[pyclass(name = "Camera", module = "gsdiff")]
#[derive(Clone)]
struct PyCamera {
    inner: Camera,
}

#[pymethods]
impl PyCamera {
    #[new]
    #[pyo3(signature = (fx, fy, cx, cy, width, height, pose=None))]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, pose: Option<[f64; 7]>) -> PyResult<Self> {
        let intrinsics = CameraIntrinsics::new(fx, fy, cx, cy, width, height).map_err(py_err)?;
        let pose = match pose {
            Some(p) => Pose::from_array(p).map_err(py_err)?,
            None => Pose::identity(),
        };
        Ok(Self {
            inner: Camera::new(intrinsics, pose),
        })
    }

    /// Centered camera at `eye` looking at `target`.
    #[staticmethod]
    #[pyo3(signature = (eye, target, focal, width, height, up=[0.0, -1.0, 0.0]))]
    fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        focal: f64,
        width: usize,
        height: usize,
        up: [f64; 3],
    ) -> PyResult<Self> {
        let intrinsics = CameraIntrinsics::centered(focal, width, height).map_err(py_err)?;
        let pose = Pose::look_at(eye.into(), target.into(), up.into());
        Ok(Self {
            inner: Camera::new(intrinsics, pose),
        })
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn pose(&self) -> [f64; 7] {
        self.inner.pose.to_array()
    }

    #[getter]
    fn center(&self) -> [f64; 3] {
        self.inner.center().into()
    }

    fn __repr__(&self) -> String {
        let k = &self.inner.intrinsics;
        format!(
            "Camera({}x{}, fx={}, center={:?})",
            k.width,
            k.height,
            k.fx,
            self.center()
        )
    }
}

/// One 3D Gaussian with log scales, a `(w, x, y, z)` quaternion, an opacity
/// logit and SH coefficients.
#[pyclass(name = "Gaussian", module = "gsdiff")]
#[derive(Clone)]
struct PyGaussian {
    inner: Gaussian3D,
}

#[pymethods]
impl PyGaussian {
    #[new]
    #[pyo3(signature = (mean, log_scale, rotation, opacity_logit, sh))]
    fn new(
        mean: [f64; 3],
        log_scale: [f64; 3],
        rotation: [f64; 4],
        opacity_logit: f64,
        sh: Vec<f64>,
    ) -> PyResult<Self> {
        sh_degree_for_len(sh.len()).map_err(py_err)?;
        let q = Quaternion::new(rotation[0], rotation[1], rotation[2], rotation[3]);
        if q.norm().is_nan() || q.norm() <= 1e-12 {
            return Err(PyValueError::new_err("rotation quaternion has zero norm"));
        }
        Ok(Self {
            inner: Gaussian3D {
                mu: mean.into(),
                log_scale: log_scale.into(),
                rotation: q.normalize(),
                opacity_logit,
                sh,
            },
        })
    }

    #[getter]
    fn mean(&self) -> [f64; 3] {
        self.inner.mu.into()
    }

    #[getter]
    fn log_scale(&self) -> [f64; 3] {
        self.inner.log_scale.into()
    }

    #[getter]
    fn rotation(&self) -> [f64; 4] {
        let q = self.inner.rotation;
        [q.w, q.i, q.j, q.k]
    }

    #[getter]
    fn opacity(&self) -> f64 {
        self.inner.opacity()
    }

    #[getter]
    fn sh(&self) -> Vec<f64> {
        self.inner.sh.clone()
    }
}

fn gaussians_of(list: &[PyRef<'_, PyGaussian>]) -> Vec<Gaussian3D> {
    list.iter().map(|g| g.inner.clone()).collect()
}

/// Renders Gaussians; returns `{width, height, color, depth}` with row-major
/// RGB floats.
#[pyfunction]
#[pyo3(signature = (gaussians, camera, background=[0.0, 0.0, 0.0]))]
fn render<'py>(
    py: Python<'py>,
    gaussians: Vec<PyRef<'py, PyGaussian>>,
    camera: &PyCamera,
    background: [f64; 3],
) -> PyResult<Bound<'py, PyDict>> {
    let settings = RenderSettings {
        background,
        ..Default::default()
    };
    let (out, _) = gsdiff::render::render(&gaussians_of(&gaussians), &camera.inner, &settings).map_err(py_err)?;
    image_dict(py, &out.color, Some(&out.depth))
}

/// PSNR in dB between two flat RGB images; `inf` when identical.
#[pyfunction]
fn psnr(a: Vec<f64>, b: Vec<f64>, width: usize, height: usize) -> PyResult<f64> {
    gsdiff::io::psnr(&to_image(a, width, height)?, &to_image(b, width, height)?).map_err(py_err)
}

#[pyfunction]
fn ssim(a: Vec<f64>, b: Vec<f64>, width: usize, height: usize) -> PyResult<f64> {
    gsdiff::io::ssim(&to_image(a, width, height)?, &to_image(b, width, height)?).map_err(py_err)
}

/// Pose on the spline through `keyframes` at `t` in `[0, len - 1]`.
#[pyfunction]
fn interpolate_pose(keyframes: Vec<[f64; 7]>, t: f64) -> PyResult<[f64; 7]> {
    let keys = keyframes
        .into_iter()
        .map(Pose::from_array)
        .collect::<gsdiff::Result<Vec<_>>>()
        .map_err(py_err)?;
    Ok(interpolate_pose_spline(&keys, t).map_err(py_err)?.to_array())
}

/// Seeded random Gaussians inside the unit cube.
#[pyfunction]
#[pyo3(signature = (count, seed=0))]
fn random_scene(count: usize, seed: u64) -> Vec<PyGaussian> {
    random_gaussians(count, seed)
        .into_iter()
        .map(|inner| PyGaussian { inner })
        .collect()
}

/// Writes a synthetic dataset rendered from an arc of cameras, plus the
/// ground-truth checkpoint used by the `gt` oracle.
#[pyfunction]
#[pyo3(signature = (out, gaussians=60, views=8, size=64, arc=120.0, seed=0, held_out=Vec::new(), depth=false))]
#[allow(clippy::too_many_arguments)]
fn synthesize(
    out: PathBuf,
    gaussians: usize,
    views: usize,
    size: usize,
    arc: f64,
    seed: u64,
    held_out: Vec<usize>,
    depth: bool,
) -> PyResult<()> {
    let g = random_gaussians(gaussians, seed);
    let cams = arc_cameras(views, 4.0, arc, size, size as f64 * 70.0 / 64.0).map_err(py_err)?;
    let opts = SyntheticOptions {
        test_indices: held_out,
        with_depth: depth,
        seed,
        ..Default::default()
    };
    let data = synthetic_dataset(&g, &cams, &opts).map_err(py_err)?;
    save_dataset(&data, &out).map_err(py_err)?;
    save_ground_truth(&g, opts.settings, &out.join(GROUND_TRUTH_FILE)).map_err(py_err)
}

/// A trainer bound to a dataset directory.
#[pyclass(name = "Trainer", module = "gsdiff", unsendable)]
struct PyTrainer {
    trainer: Trainer,
    dataset: SceneDataset,
    oracle: Option<Box<dyn ViewOracle>>,
}

#[pymethods]
impl PyTrainer {
    /// `config` is a JSON string; `oracle` is `identity`, `gt` or `file:PATH`.
    #[new]
    #[pyo3(signature = (data, config=None, oracle=None))]
    fn new(data: PathBuf, config: Option<&str>, oracle: Option<&str>) -> PyResult<Self> {
        let dataset = load_dataset(&data).map_err(py_err)?;
        let config: TrainConfig = match config {
            Some(s) => serde_json::from_str(s).map_err(|e| py_err(e.into()))?,
            None => TrainConfig::default(),
        };
        let trainer = Trainer::new(config, &dataset).map_err(py_err)?;
        let oracle = oracle.map(|o| oracle_from_spec(o, &data)).transpose().map_err(py_err)?;
        Ok(Self {
            trainer,
            dataset,
            oracle,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (checkpoint, data, oracle=None))]
    fn load(checkpoint: PathBuf, data: PathBuf, oracle: Option<&str>) -> PyResult<Self> {
        let trainer = load_checkpoint(&checkpoint).map_err(py_err)?;
        let dataset = load_dataset(&data).map_err(py_err)?;
        let oracle = oracle.map(|o| oracle_from_spec(o, &data)).transpose().map_err(py_err)?;
        Ok(Self {
            trainer,
            dataset,
            oracle,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.trainer, &path).map_err(py_err)
    }

    #[getter]
    fn iteration(&self) -> u64 {
        self.trainer.iteration
    }

    #[getter]
    fn primitive_count(&self) -> usize {
        self.trainer.model.primitive_count()
    }

    /// One step; returns the loss breakdown as a dict.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let b = self
            .trainer
            .train_step(&self.dataset.views, self.oracle.as_deref(), &MsSsimDistance)
            .map_err(py_err)?;
        json_to_py(py, &serde_json::to_value(&b).map_err(|e| py_err(e.into()))?)
    }

    /// Runs `steps` steps; returns the breakdowns.
    fn train<'py>(&mut self, py: Python<'py>, steps: usize) -> PyResult<Vec<Bound<'py, PyAny>>> {
        (0..steps).map(|_| self.step(py)).collect()
    }

    #[pyo3(signature = (camera, appearance=0))]
    fn render<'py>(&self, py: Python<'py>, camera: &PyCamera, appearance: usize) -> PyResult<Bound<'py, PyDict>> {
        let out = self.trainer.render(&camera.inner, appearance).map_err(py_err)?;
        image_dict(py, &out.color, Some(&out.depth))
    }

    /// Training-view cameras in dataset order.
    fn cameras(&self) -> Vec<PyCamera> {
        self.dataset
            .views
            .iter()
            .map(|v| PyCamera { inner: v.camera() })
            .collect()
    }

    /// `{view: (psnr, ssim)}` over held-out views, or training views if none.
    fn evaluate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let views = if self.dataset.test_views.is_empty() {
            &self.dataset.views
        } else {
            &self.dataset.test_views
        };
        let d = PyDict::new(py);
        for v in views {
            let img = self.trainer.render(&v.camera(), v.appearance_id).map_err(py_err)?.color;
            let p = gsdiff::io::psnr(&img, &v.image).map_err(py_err)?;
            let s = gsdiff::io::ssim(&img, &v.image).map_err(py_err)?;
            d.set_item(&v.name, (p, s))?;
        }
        Ok(d)
    }
}

#[pymodule]
#[pyo3(name = "gsdiff")]
fn gsdiff_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCamera>()?;
    m.add_class::<PyGaussian>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate_pose, m)?)?;
    m.add_function(wrap_pyfunction!(random_scene, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    Ok(())
}
