//! On-disk scene layout:
//!
//! ```text
//! images/<name>.png|ppm
//! masks/<name>.pgm          optional, 255 = static
//! depth/<name>.pfm          optional monocular depth
//! cameras.txt               name fx fy cx cy width height qw qx qy qz tx ty tz
//! points3d.txt              x y z r g b
//! test_views.txt            optional, one held-out view name per line
//! ```
//!
//! Names are file stems. Poses are world-to-camera.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use super::codecs::{read_image, read_mask, read_pfm, write_image, write_mask, write_pfm};
use crate::error::{Error, Result};
use crate::geometry::{Camera, CameraIntrinsics, Pose};
use crate::image::{Image, Raster};

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub name: String,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    pub image: Image,
    /// 1 = static, 0 = dynamic.
    pub mask: Option<Raster>,
    pub mono_depth: Option<Raster>,
    pub appearance_id: usize,
}

impl View {
    pub fn camera(&self) -> Camera {
        Camera::new(self.intrinsics, self.pose)
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        let bad = |what: &str| {
            Error::Validation(format!(
                "view '{}': {what} size does not match intrinsics {w}x{h}",
                self.name
            ))
        };
        if self.image.width != w || self.image.height != h {
            return Err(bad("image"));
        }
        if let Some(m) = &self.mask {
            if m.width != w || m.height != h {
                return Err(bad("mask"));
            }
            if m.data.iter().any(|v| *v != 0.0 && *v != 1.0) {
                return Err(Error::Validation(format!("view '{}': mask is not binary", self.name)));
            }
        }
        if let Some(d) = &self.mono_depth {
            if d.width != w || d.height != h {
                return Err(bad("depth"));
            }
            let active = |i: usize| self.mask.as_ref().is_none_or(|m| m.data[i] > 0.5);
            if d.data
                .iter()
                .enumerate()
                .any(|(i, v)| active(i) && !(v.is_finite() && *v > 0.0))
            {
                return Err(Error::Validation(format!(
                    "view '{}': depth must be finite and positive on active pixels",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColoredPoint {
    pub position: Vector3<f64>,
    pub color: [u8; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub views: Vec<View>,
    /// Held-out views, excluded from training.
    pub test_views: Vec<View>,
    pub points: Vec<ColoredPoint>,
    /// Bounding-box diagonal of all camera centers.
    pub scene_scale: f64,
}

impl SceneDataset {
    pub fn new(views: Vec<View>, test_views: Vec<View>, points: Vec<ColoredPoint>) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Validation("dataset has no training views".into()));
        }
        if points.is_empty() {
            return Err(Error::Validation("dataset has no points".into()));
        }
        for v in views.iter().chain(&test_views) {
            v.validate()?;
        }
        let scene_scale = camera_extent(views.iter().chain(&test_views).map(|v| v.pose.center()));
        Ok(Self {
            views,
            test_views,
            points,
            scene_scale,
        })
    }

    /// Size of the appearance table: one entry per image, train or test.
    pub fn image_count(&self) -> usize {
        self.views
            .iter()
            .chain(&self.test_views)
            .map(|v| v.appearance_id + 1)
            .max()
            .unwrap_or(0)
    }
}

fn camera_extent(centers: impl Iterator<Item = Vector3<f64>>) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for c in centers {
        lo = lo.inf(&c);
        hi = hi.sup(&c);
    }
    if lo.x.is_finite() {
        (hi - lo).norm()
    } else {
        0.0
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Non-empty, non-comment lines with their 1-based numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_fields<T: std::str::FromStr>(path: &Path, line: usize, fields: &[&str]) -> Result<Vec<T>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<T>()
                .map_err(|_| parse_err(path, line, format!("bad number '{f}'")))
        })
        .collect()
}

/// Camera lines in file order.
pub fn read_camera_file(path: &Path) -> Result<Vec<(String, CameraIntrinsics, Pose)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in data_lines(&text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 14 {
            return Err(parse_err(path, n, format!("expected 14 fields, found {}", f.len())));
        }
        let k: Vec<f64> = parse_fields(path, n, &f[1..5])?;
        let size: Vec<usize> = parse_fields(path, n, &f[5..7])?;
        let p: Vec<f64> = parse_fields(path, n, &f[7..14])?;
        let intr = CameraIntrinsics::new(k[0], k[1], k[2], k[3], size[0], size[1])
            .map_err(|e| parse_err(path, n, e.to_string()))?;
        let pose = Pose::from_array([p[0], p[1], p[2], p[3], p[4], p[5], p[6]])
            .map_err(|e| parse_err(path, n, e.to_string()))?;
        if out.iter().any(|(name, _, _)| name == f[0]) {
            return Err(parse_err(path, n, format!("duplicate camera '{}'", f[0])));
        }
        out.push((f[0].to_string(), intr, pose));
    }
    Ok(out)
}

fn read_cameras(path: &Path) -> Result<BTreeMap<String, (CameraIntrinsics, Pose)>> {
    Ok(read_camera_file(path)?
        .into_iter()
        .map(|(n, k, p)| (n, (k, p)))
        .collect())
}

fn read_points(path: &Path) -> Result<Vec<ColoredPoint>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in data_lines(&text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(parse_err(path, n, format!("expected 6 fields, found {}", f.len())));
        }
        let p: Vec<f64> = parse_fields(path, n, &f[..3])?;
        let c: Vec<u8> = parse_fields(path, n, &f[3..])?;
        out.push(ColoredPoint {
            position: Vector3::new(p[0], p[1], p[2]),
            color: [c[0], c[1], c[2]],
        });
    }
    Ok(out)
}

/// Files in `dir` keyed by stem, restricted to the given extensions.
fn files_by_stem(dir: &Path, exts: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| exts.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
                return Err(Error::Validation(format!(
                    "ambiguous files for '{stem}': {} and {}",
                    prev.display(),
                    path.display()
                )));
            }
        }
    }
    Ok(out)
}

pub fn load_dataset(dir: &Path) -> Result<SceneDataset> {
    let cameras = read_cameras(&dir.join("cameras.txt"))?;
    let points = read_points(&dir.join("points3d.txt"))?;
    let images = files_by_stem(&dir.join("images"), &["png", "ppm"])?;
    let masks = files_by_stem(&dir.join("masks"), &["pgm"])?;
    let depths = files_by_stem(&dir.join("depth"), &["pfm"])?;
    let test_path = dir.join("test_views.txt");
    let held_out: BTreeSet<String> = if test_path.exists() {
        data_lines(&fs::read_to_string(&test_path)?)
            .map(|(_, l)| l.to_string())
            .collect()
    } else {
        BTreeSet::new()
    };
    for name in cameras.keys() {
        if !images.contains_key(name) {
            return Err(Error::Validation(format!("camera '{name}' has no image")));
        }
    }
    for name in &held_out {
        if !images.contains_key(name) {
            return Err(Error::Validation(format!("held-out view '{name}' has no image")));
        }
    }
    let mut views = Vec::new();
    let mut test_views = Vec::new();
    for (id, (name, path)) in images.iter().enumerate() {
        let (intrinsics, pose) = *cameras
            .get(name)
            .ok_or_else(|| Error::Validation(format!("image '{name}' has no camera line")))?;
        let view = View {
            name: name.clone(),
            intrinsics,
            pose,
            image: read_image(path)?,
            mask: masks.get(name).map(|p| read_mask(p)).transpose()?,
            mono_depth: depths.get(name).map(|p| read_pfm(p)).transpose()?,
            appearance_id: id,
        };
        if held_out.contains(name) {
            test_views.push(view);
        } else {
            views.push(view);
        }
    }
    SceneDataset::new(views, test_views, points)
}

/// Writes a dataset in the layout read by [`load_dataset`]. Images are
/// stored as 8-bit PNG and depth as f32.
pub fn save_dataset(data: &SceneDataset, dir: &Path) -> Result<()> {
    for sub in ["images", "masks", "depth"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let mut cams = String::new();
    let mut all: Vec<&View> = data.views.iter().chain(&data.test_views).collect();
    all.sort_by_key(|v| v.appearance_id);
    for v in &all {
        let k = &v.intrinsics;
        let p = v.pose.to_array();
        cams += &format!(
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {}\n",
            v.name, k.fx, k.fy, k.cx, k.cy, k.width, k.height, p[0], p[1], p[2], p[3], p[4], p[5], p[6]
        );
        write_image(&dir.join("images").join(format!("{}.png", v.name)), &v.image)?;
        if let Some(m) = &v.mask {
            write_mask(&dir.join("masks").join(format!("{}.pgm", v.name)), m)?;
        }
        if let Some(d) = &v.mono_depth {
            write_pfm(&dir.join("depth").join(format!("{}.pfm", v.name)), d)?;
        }
    }
    fs::write(dir.join("cameras.txt"), cams)?;
    let pts: String = data
        .points
        .iter()
        .map(|p| {
            format!(
                "{} {} {} {} {} {}\n",
                p.position.x, p.position.y, p.position.z, p.color[0], p.color[1], p.color[2]
            )
        })
        .collect();
    fs::write(dir.join("points3d.txt"), pts)?;
    if !data.test_views.is_empty() {
        let names: String = data.test_views.iter().map(|v| format!("{}\n", v.name)).collect();
        fs::write(dir.join("test_views.txt"), names)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_minimal(dir: &Path) {
        fs::create_dir_all(dir.join("images")).unwrap();
        write_image(&dir.join("images/a.png"), &Image::filled(4, 3, [0.2, 0.4, 0.6])).unwrap();
        fs::write(dir.join("cameras.txt"), "# comment\na 10 10 2 1.5 4 3 1 0 0 0 0 0 0\n").unwrap();
        fs::write(dir.join("points3d.txt"), "0 0 1 255 0 0\n").unwrap();
    }

    #[test]
    fn minimal_dataset() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal(dir.path());
        let d = load_dataset(dir.path()).unwrap();
        assert_eq!(d.views.len(), 1);
        assert_eq!(d.points.len(), 1);
        assert!(d.views[0].mask.is_none() && d.views[0].mono_depth.is_none());
        assert_eq!(d.scene_scale, 0.0);
    }

    #[test]
    fn mask_only_where_present() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal(dir.path());
        write_image(&dir.path().join("images/b.png"), &Image::filled(4, 3, [0.0; 3])).unwrap();
        fs::write(
            dir.path().join("cameras.txt"),
            "a 10 10 2 1.5 4 3 1 0 0 0 0 0 0\nb 10 10 2 1.5 4 3 1 0 0 0 1 0 0\n",
        )
        .unwrap();
        fs::create_dir_all(dir.path().join("masks")).unwrap();
        write_mask(&dir.path().join("masks/a.pgm"), &Raster::filled(4, 3, 1.0)).unwrap();
        let d = load_dataset(dir.path()).unwrap();
        assert!(d.views[0].mask.is_some());
        assert!(d.views[1].mask.is_none());
        assert_eq!(d.views[1].appearance_id, 1);
    }

    #[test]
    fn malformed_camera_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal(dir.path());
        fs::write(dir.path().join("cameras.txt"), "\na 10 10 2 1.5 4 3 1 0 0\n").unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn size_mismatch_names_view() {
        let dir = tempfile::tempdir().unwrap();
        write_minimal(dir.path());
        fs::write(dir.path().join("cameras.txt"), "a 10 10 2 1.5 5 3 1 0 0 0 0 0 0\n").unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("'a'")), "{err}");
    }
}
