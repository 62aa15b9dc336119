//! Python module `lodsplat`: meshes, avatars, rendering, training and metrics.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{Point3, Vector3};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIndexError, PyValueError};
use pyo3::prelude::*;

use lodsplat::drive::{self, CameraRig};
use lodsplat::optim::{train_stage, KeyframeViews, TrainConfig};
use lodsplat::{avatar, hierarchy, image, mask, metrics, ply, raster, synthetic};

create_exception!(lodsplat, LodsplatError, PyException);

fn err(e: lodsplat::Error) -> PyErr {
    LodsplatError::new_err(format!("[{}] {e}", e.kind()))
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for lodsplat::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

type Vec3 = (f64, f64, f64);

fn tuple3(v: &Vector3<f64>) -> Vec3 {
    (v.x, v.y, v.z)
}

#[pyclass(name = "Image", module = "lodsplat", from_py_object)]
#[derive(Clone)]
struct PyImage(Arc<image::Image>);

#[pymethods]
impl PyImage {
    /// Image filled with one RGB color in [0, 1].
    #[new]
    #[pyo3(signature = (width, height, rgb = (1.0, 1.0, 1.0)))]
    fn new(width: usize, height: usize, rgb: Vec3) -> Self {
        Self(Arc::new(image::Image::filled(width, height, [rgb.0, rgb.1, rgb.2])))
    }

    #[staticmethod]
    fn load_png(path: PathBuf) -> PyResult<Self> {
        Ok(Self(Arc::new(image::Image::load_png(path).py()?)))
    }

    /// Build from a flat row-major list of `width * height * 3` floats.
    #[staticmethod]
    fn from_list(width: usize, height: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self(Arc::new(image::Image::from_data(width, height, data).py()?)))
    }

    fn save_png(&self, path: PathBuf) -> PyResult<()> {
        self.0.save_png(path).py()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    fn pixel(&self, x: usize, y: usize) -> PyResult<Vec3> {
        if x >= self.0.width() || y >= self.0.height() {
            return Err(PyIndexError::new_err(format!("pixel ({x}, {y}) out of range")));
        }
        let p = self.0.pixel(x, y);
        Ok((p[0], p[1], p[2]))
    }

    /// Flat row-major RGB values.
    fn to_list(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{})", self.0.width(), self.0.height())
    }
}

#[pyclass(name = "Mesh", module = "lodsplat", from_py_object)]
#[derive(Clone)]
struct PyMesh(Arc<lodsplat::Mesh>);

#[pymethods]
impl PyMesh {
    #[new]
    fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> PyResult<Self> {
        let verts = vertices.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect();
        Ok(Self(Arc::new(lodsplat::Mesh::new(verts, faces).py()?)))
    }

    #[staticmethod]
    fn load_obj(path: PathBuf) -> PyResult<Self> {
        Ok(Self(Arc::new(lodsplat::Mesh::load_obj(path).py()?)))
    }

    #[staticmethod]
    #[pyo3(signature = (subdivisions = 2, radius = 0.5))]
    fn icosphere(subdivisions: u32, radius: f64) -> Self {
        Self(Arc::new(synthetic::icosphere(subdivisions, radius)))
    }

    #[staticmethod]
    fn uv_sphere(rings: usize, segments: usize, radius: f64) -> Self {
        Self(Arc::new(synthetic::uv_sphere(rings, segments, radius)))
    }

    #[staticmethod]
    #[pyo3(signature = (size = 1.0))]
    fn quad(size: f64) -> Self {
        Self(Arc::new(synthetic::quad(size, None)))
    }

    /// Copy with a texture image.
    fn with_texture(&self, texture: &PyImage) -> Self {
        Self(Arc::new((*self.0).clone().with_texture((*texture.0).clone())))
    }

    /// Copy with a procedural banded texture.
    #[pyo3(signature = (size = 64, frequency = 2.0))]
    fn with_wave_texture(&self, size: usize, frequency: f64) -> Self {
        Self(Arc::new((*self.0).clone().with_texture(synthetic::wave_texture(size, frequency))))
    }

    /// Same topology, new vertex positions.
    fn with_positions(&self, vertices: Vec<Vec3>) -> PyResult<Self> {
        let verts = vertices.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect();
        Ok(Self(Arc::new(self.0.with_positions(verts).py()?)))
    }

    /// Rigidly moved copy: rotation by Euler angles (roll, pitch, yaw), then translation.
    fn transformed(&self, euler: Vec3, translation: Vec3) -> Self {
        let q = nalgebra::Rotation3::from_euler_angles(euler.0, euler.1, euler.2);
        let t = Vector3::new(translation.0, translation.1, translation.2);
        Self(Arc::new(self.0.transformed(&q, &t)))
    }

    fn save_obj(&self, path: PathBuf) -> PyResult<()> {
        self.0.save_obj(path).py()
    }

    #[getter]
    fn vertex_count(&self) -> usize {
        self.0.vertex_count()
    }

    #[getter]
    fn face_count(&self) -> usize {
        self.0.face_count()
    }

    #[getter]
    fn has_texture(&self) -> bool {
        self.0.has_texture()
    }

    #[getter]
    fn vertices(&self) -> Vec<Vec3> {
        self.0.vertices.iter().map(|p| tuple3(&p.coords)).collect()
    }

    #[getter]
    fn faces(&self) -> Vec<[u32; 3]> {
        self.0.faces.clone()
    }

    fn face_area(&self, face: usize) -> PyResult<f64> {
        self.check_face(face)?;
        Ok(self.0.face_area(face))
    }

    /// `(origin, rows of the local-to-world rotation)` of a face.
    fn face_frame(&self, face: usize) -> PyResult<(Vec3, [Vec3; 3])> {
        self.check_face(face)?;
        let f = self.0.face_frame(face).py()?;
        let r = &f.rotation;
        let row = |i: usize| (r[(i, 0)], r[(i, 1)], r[(i, 2)]);
        Ok((tuple3(&f.origin.coords), [row(0), row(1), row(2)]))
    }

    fn __repr__(&self) -> String {
        format!("Mesh(V={}, F={})", self.0.vertex_count(), self.0.face_count())
    }
}

impl PyMesh {
    fn check_face(&self, face: usize) -> PyResult<()> {
        if face >= self.0.face_count() {
            return Err(PyIndexError::new_err(format!("face {face} out of range")));
        }
        Ok(())
    }
}

/// World-space Gaussian.
#[pyclass(name = "Gaussian", module = "lodsplat", from_py_object)]
#[derive(Clone)]
struct PyGaussian(lodsplat::GaussianParams);

#[pymethods]
impl PyGaussian {
    #[new]
    #[pyo3(signature = (position, rotation = (1.0, 0.0, 0.0, 0.0), log_scale = (0.0, 0.0, 0.0), opacity_logit = 0.0, dc = (0.0, 0.0, 0.0)))]
    fn new(position: Vec3, rotation: (f64, f64, f64, f64), log_scale: Vec3, opacity_logit: f64, dc: Vec3) -> Self {
        let mut raw = [0.0; lodsplat::gaussian::RAW_LEN];
        raw[..3].copy_from_slice(&[position.0, position.1, position.2]);
        raw[3..7].copy_from_slice(&[rotation.0, rotation.1, rotation.2, rotation.3]);
        raw[7..10].copy_from_slice(&[log_scale.0, log_scale.1, log_scale.2]);
        raw[10] = opacity_logit;
        raw[11..14].copy_from_slice(&[dc.0, dc.1, dc.2]);
        Self(lodsplat::GaussianParams::from_raw(&raw))
    }

    #[getter]
    fn position(&self) -> Vec3 {
        tuple3(&self.0.position)
    }

    #[getter]
    fn rotation(&self) -> (f64, f64, f64, f64) {
        let q = self.0.rotation;
        (q[0], q[1], q[2], q[3])
    }

    #[getter]
    fn scale(&self) -> Vec3 {
        tuple3(&self.0.scale())
    }

    #[getter]
    fn opacity(&self) -> f64 {
        self.0.opacity()
    }

    /// All parameters in storage order: position, rotation, log-scale,
    /// opacity logit, then 48 color coefficients.
    fn raw(&self) -> Vec<f64> {
        self.0.to_raw().to_vec()
    }

    fn covariance(&self) -> [Vec3; 3] {
        let c = self.0.covariance();
        [0, 1, 2].map(|i| (c[(i, 0)], c[(i, 1)], c[(i, 2)]))
    }

    fn __repr__(&self) -> String {
        let p = self.0.position;
        format!("Gaussian(position=({:.4}, {:.4}, {:.4}), opacity={:.3})", p.x, p.y, p.z, self.0.opacity())
    }
}

#[pyclass(name = "Camera", module = "lodsplat", from_py_object)]
#[derive(Clone)]
struct PyCamera(raster::CameraView);

#[pymethods]
impl PyCamera {
    /// Camera at `center` looking at `target` with a vertical field of view
    /// in degrees.
    #[staticmethod]
    #[pyo3(signature = (center, target = (0.0, 0.0, 0.0), width = 128, height = 128, fov_y_deg = 60.0, id = "cam".to_string()))]
    fn look_at(center: Vec3, target: Vec3, width: usize, height: usize, fov_y_deg: f64, id: String) -> PyResult<Self> {
        let k = raster::Intrinsics::from_vertical_fov(fov_y_deg.to_radians(), width, height);
        raster::CameraView::look_at(
            id,
            Point3::new(center.0, center.1, center.2),
            Point3::new(target.0, target.1, target.2),
            Vector3::y(),
            k,
            width,
            height,
        )
        .py()
        .map(Self)
    }

    /// Copy of the camera moved with the same rigid motion as [`Mesh.transformed`].
    fn transformed(&self, euler: Vec3, translation: Vec3) -> Self {
        let q = nalgebra::Rotation3::from_euler_angles(euler.0, euler.1, euler.2);
        Self(self.0.transformed(&q, &Vector3::new(translation.0, translation.1, translation.2)))
    }

    fn with_target(&self, image: &PyImage) -> Self {
        let mut cam = self.0.clone();
        cam.target = Some(image.0.clone());
        Self(cam)
    }

    fn project(&self, point: Vec3) -> Option<(f64, f64)> {
        self.0.project_point(&Point3::new(point.0, point.1, point.2)).map(|p| (p.x, p.y))
    }

    #[getter]
    fn id(&self) -> String {
        self.0.id.clone()
    }

    #[getter]
    fn center(&self) -> Vec3 {
        tuple3(&self.0.center().coords)
    }

    #[getter]
    fn size(&self) -> (usize, usize) {
        (self.0.width, self.0.height)
    }

    fn __repr__(&self) -> String {
        format!("Camera({}, {}x{})", self.0.id, self.0.width, self.0.height)
    }
}

/// Keyframe meshes with their target views, as used for training.
#[pyclass(name = "Dataset", module = "lodsplat", from_py_object)]
#[derive(Clone)]
struct PyDataset(Vec<KeyframeViews>);

#[pymethods]
impl PyDataset {
    /// Render targets of `mesh` (textured) from every camera.
    #[staticmethod]
    fn render_targets(mesh: &PyMesh, cameras: Vec<PyCamera>) -> PyResult<Self> {
        let views = cameras
            .into_iter()
            .map(|c| Ok(c.0.clone().with_target(drive::render_mesh(&mesh.0, &c.0)?)))
            .collect::<lodsplat::Result<Vec<_>>>()
            .py()?;
        Ok(Self(vec![KeyframeViews { mesh: mesh.0.clone(), views }]))
    }

    /// Load a dataset directory, leaving out the listed camera ids.
    #[staticmethod]
    #[pyo3(signature = (path, holdout = Vec::new()))]
    fn load(path: PathBuf, holdout: Vec<String>) -> PyResult<Self> {
        let exclude: Vec<&str> = holdout.iter().map(String::as_str).collect();
        Ok(Self(drive::load_dataset(path, &exclude).py()?.keyframes))
    }

    fn __len__(&self) -> usize {
        self.0.iter().map(|k| k.views.len()).sum()
    }
}

#[pyclass(name = "Avatar", module = "lodsplat")]
struct PyAvatar(hierarchy::AvatarHierarchy);

#[pymethods]
impl PyAvatar {
    /// Level-0 avatar: one Gaussian per vertex and per face.
    #[new]
    fn new(mesh: &PyMesh) -> PyResult<Self> {
        Ok(Self(hierarchy::AvatarHierarchy::initialize_level0((*mesh.0).clone()).py()?))
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self(avatar::load_avatar(dir).py()?))
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        avatar::save_avatar(&self.0, dir).py()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn level(&self) -> u32 {
        self.0.current_level()
    }

    #[getter]
    fn mesh(&self) -> PyMesh {
        PyMesh(self.0.mesh.clone())
    }

    /// Gaussian count predicted by the closed form for the current tree.
    fn expected_count(&self) -> u64 {
        self.0.expected_count()
    }

    fn root_level(&self, face: usize) -> Option<u32> {
        self.0.root_level(face)
    }

    fn mark_level_optimized(&mut self, level: u32) {
        self.0.mark_level_optimized(level);
    }

    #[pyo3(signature = (faces = None))]
    fn subdivide(&mut self, faces: Option<Vec<usize>>) -> PyResult<()> {
        match faces {
            Some(f) => self.0.subdivide(&f).py(),
            None => self.0.subdivide_all().py(),
        }
    }

    fn enhance(&mut self, faces: Vec<usize>, target_level: u32) -> PyResult<()> {
        self.0.enhance(&faces, target_level).py()
    }

    /// World-space Gaussians on a keyframe (the rest mesh when omitted).
    #[pyo3(signature = (keyframe = None))]
    fn pose(&self, keyframe: Option<&PyMesh>) -> PyResult<Vec<PyGaussian>> {
        let g = match keyframe {
            Some(m) => self.0.pose(&m.0).py()?,
            None => self.0.rest_gaussians(),
        };
        Ok(g.into_iter().map(PyGaussian).collect())
    }

    #[pyo3(signature = (camera, keyframe = None))]
    fn render(&self, py: Python<'_>, camera: &PyCamera, keyframe: Option<&PyMesh>) -> PyResult<PyImage> {
        let world = match keyframe {
            Some(m) => self.0.pose(&m.0).py()?,
            None => self.0.rest_gaussians(),
        };
        let cam = camera.0.clone();
        Ok(PyImage(Arc::new(py.detach(move || raster::render(&world, &cam, &Default::default())))))
    }

    /// Optimize one level; returns the per-iteration losses.
    #[pyo3(signature = (dataset, level, iterations = 3000, seed = 0))]
    fn train(&mut self, py: Python<'_>, dataset: &PyDataset, level: u32, iterations: usize, seed: u64) -> PyResult<Vec<f64>> {
        let cfg = TrainConfig { iterations, seed, log_every: 0, ..Default::default() };
        let h = &mut self.0;
        let data = &dataset.0;
        let report = py.detach(|| train_stage(h, data, level, &cfg)).py()?;
        Ok(report.losses)
    }

    fn export_ply(&self, path: PathBuf) -> PyResult<()> {
        ply::export_ply(&self.0.rest_gaussians(), path).py()
    }

    fn __repr__(&self) -> String {
        format!("Avatar({} gaussians, level {})", self.0.len(), self.0.current_level())
    }
}

/// Gaussians of a mesh with `vertices` vertices whose faces sit at `face_levels`.
#[pyfunction]
fn gaussian_count(vertices: u64, face_levels: Vec<u32>) -> u64 {
    hierarchy::gaussian_count(vertices, &face_levels)
}

/// Gaussians of a mesh refined uniformly to `level`.
#[pyfunction]
fn uniform_gaussian_count(vertices: u64, faces: u64, level: u32) -> u64 {
    hierarchy::uniform_gaussian_count(vertices, faces, level)
}

#[pyfunction]
#[pyo3(signature = (gaussians, camera))]
fn render(py: Python<'_>, gaussians: Vec<PyGaussian>, camera: &PyCamera) -> PyImage {
    let g: Vec<_> = gaussians.into_iter().map(|g| g.0).collect();
    let cam = camera.0.clone();
    PyImage(Arc::new(py.detach(move || raster::render(&g, &cam, &Default::default()))))
}

#[pyfunction]
fn render_mesh(mesh: &PyMesh, camera: &PyCamera) -> PyResult<PyImage> {
    Ok(PyImage(Arc::new(drive::render_mesh(&mesh.0, &camera.0).py()?)))
}

/// Rig of `count` cameras on a sphere of `radius` around the origin.
#[pyfunction]
#[pyo3(signature = (radius = 2.0, count = 42, width = 1080, height = 1080))]
fn camera_rig(radius: f64, count: usize, width: usize, height: usize) -> PyResult<Vec<PyCamera>> {
    Ok(drive::build_camera_rig(radius, count, width, height).py()?.views.into_iter().map(PyCamera).collect())
}

#[pyfunction]
fn load_rig(path: PathBuf) -> PyResult<Vec<PyCamera>> {
    Ok(CameraRig::load(path).py()?.views.into_iter().map(PyCamera).collect())
}

/// Faces whose three `keyframe` vertices project onto true pixels of a mask.
/// `mask` is a row-major list of booleans of the camera's size.
#[pyfunction]
fn select_faces(mesh: &PyMesh, keyframe: &PyMesh, mask: Vec<bool>, camera: &PyCamera) -> PyResult<BTreeSet<usize>> {
    let (w, h) = (camera.0.width, camera.0.height);
    if mask.len() != w * h {
        return Err(PyValueError::new_err(format!("mask has {} values, camera is {w}x{h}", mask.len())));
    }
    let mut img = image::BinaryImage::new(w, h);
    for (i, &v) in mask.iter().enumerate() {
        img.set(i % w, i / w, v);
    }
    let m = mask::Mask::new(img, camera.0.clone()).py()?;
    mask::select_faces(&mesh.0, &keyframe.0, &m).py()
}

#[pyfunction]
fn psnr(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    metrics::psnr(&a.0, &b.0).py()
}

#[pyfunction]
fn ssim(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    metrics::ssim(&a.0, &b.0).py()
}

#[pymodule]
#[pyo3(name = "lodsplat")]
fn lodsplat_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LodsplatError", m.py().get_type::<LodsplatError>())?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyMesh>()?;
    m.add_class::<PyGaussian>()?;
    m.add_class::<PyCamera>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyAvatar>()?;
    m.add_function(wrap_pyfunction!(gaussian_count, m)?)?;
    m.add_function(wrap_pyfunction!(uniform_gaussian_count, m)?)?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(render_mesh, m)?)?;
    m.add_function(wrap_pyfunction!(camera_rig, m)?)?;
    m.add_function(wrap_pyfunction!(load_rig, m)?)?;
    m.add_function(wrap_pyfunction!(select_faces, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    Ok(())
}
