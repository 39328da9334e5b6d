//! Action-conditioning geometry: Euler angles to rotation matrices, pinhole
//! projection, pose-image rasterization and latent fusion.
//!
//! Euler convention: `R = Rz(yaw) * Ry(pitch) * Rx(roll)`. Roll is applied
//! first about the fixed x axis, then pitch about y, then yaw about z.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traj::Pose;

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("point is behind camera (depth {0})")]
    BehindCamera(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("latent shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("latent shape {dims:?} does not match {len} values")]
    BadLatent { dims: Vec<usize>, len: usize },
    #[error("non-finite latent value")]
    NonFinite,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

pub fn mat_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    std::array::from_fn(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

pub fn transpose(a: &Mat3) -> Mat3 {
    std::array::from_fn(|i| std::array::from_fn(|j| a[j][i]))
}

pub fn determinant(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Largest absolute entry of `RᵀR - I`.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    let rtr = mat_mul(&transpose(r), r);
    let mut worst = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            worst = worst.max((rtr[i][j] - IDENTITY[i][j]).abs());
        }
    }
    worst
}

pub fn rpy_to_rotation(roll: f64, pitch: f64, yaw: f64) -> Mat3 {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]];
    let ry = [[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]];
    let rz = [[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&rz, &mat_mul(&ry, &rx))
}

/// Pinhole intrinsics plus the world-to-camera transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major world-to-camera rotation.
    pub extrinsic_rotation: Mat3,
    pub extrinsic_translation: Vec3,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, rotation: Mat3, translation: Vec3) -> Result<Self, PoseError> {
        let cam = CameraModel {
            fx,
            fy,
            cx,
            cy,
            extrinsic_rotation: rotation,
            extrinsic_translation: translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Identity extrinsics.
    pub fn intrinsics_only(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, PoseError> {
        CameraModel::new(fx, fy, cx, cy, IDENTITY, [0.0; 3])
    }

    pub fn validate(&self) -> Result<(), PoseError> {
        let scalars = [self.fx, self.fy, self.cx, self.cy];
        let all_finite = scalars.iter().all(|v| v.is_finite())
            && self.extrinsic_rotation.iter().flatten().all(|v| v.is_finite())
            && self.extrinsic_translation.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(PoseError::InvalidCamera("non-finite parameter".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(PoseError::InvalidCamera("focal lengths must be positive".into()));
        }
        let err = orthonormality_error(&self.extrinsic_rotation);
        if err > 1e-9 {
            return Err(PoseError::InvalidCamera(format!(
                "rotation is not orthonormal (error {err:e})"
            )));
        }
        if determinant(&self.extrinsic_rotation) < 0.0 {
            return Err(PoseError::InvalidCamera("rotation is a reflection".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PoseError> {
        let text = std::fs::read_to_string(path).map_err(|source| PoseError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cam: CameraModel = serde_json::from_str(&text).map_err(|source| PoseError::Json {
            path: path.display().to_string(),
            source,
        })?;
        cam.validate()?;
        Ok(cam)
    }

    pub fn to_camera(&self, p_world: &Vec3) -> Vec3 {
        let r = mat_vec(&self.extrinsic_rotation, p_world);
        std::array::from_fn(|k| r[k] + self.extrinsic_translation[k])
    }

    /// Projects a camera-frame point to pixel coordinates.
    pub fn project_camera(&self, p_cam: &Vec3) -> Result<(f64, f64), PoseError> {
        let z = p_cam[2];
        if z <= 0.0 {
            return Err(PoseError::BehindCamera(z));
        }
        Ok((self.fx * p_cam[0] / z + self.cx, self.fy * p_cam[1] / z + self.cy))
    }
}

pub fn project_point(cam: &CameraModel, p_world: &Vec3) -> Result<(f64, f64), PoseError> {
    cam.project_camera(&cam.to_camera(p_world))
}

pub type Rgb = [u8; 3];

/// Drawing constants for pose images.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseStyle {
    /// World length of each drawn orientation axis, meters.
    pub axis_scale: f64,
    pub circle_radius: i64,
    /// Side of the square position marker, pixels (odd).
    pub marker_size: i64,
    pub left: ArmStyle,
    pub right: ArmStyle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmStyle {
    /// Marker and circle outline color.
    pub base: Rgb,
    /// x, y, z axis colors.
    pub axes: [Rgb; 3],
    /// RGB channel carrying the openness intensity inside the circle.
    pub fill_channel: usize,
}

impl Default for PoseStyle {
    fn default() -> Self {
        PoseStyle {
            axis_scale: 0.05,
            circle_radius: 6,
            marker_size: 3,
            left: ArmStyle {
                base: [230, 60, 60],
                axes: [[255, 60, 60], [200, 140, 60], [200, 60, 140]],
                fill_channel: 0,
            },
            right: ArmStyle {
                base: [60, 60, 230],
                axes: [[140, 60, 200], [60, 140, 200], [60, 60, 255]],
                fill_channel: 2,
            },
        }
    }
}

/// Gripper openness to fill intensity: `round(64 + 191 * o)`.
pub fn openness_intensity(openness: f64) -> u8 {
    (64.0 + 191.0 * openness.clamp(0.0, 1.0)).round() as u8
}

/// Row-major RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoseImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl PoseImage {
    pub fn black(width: usize, height: usize) -> Self {
        PoseImage {
            width,
            height,
            pixels: vec![0; 3 * width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Writes a pixel; coordinates outside the image are ignored.
    pub fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = 3 * (y as usize * self.width + x as usize);
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    pub fn is_black(&self) -> bool {
        self.pixels.iter().all(|&b| b == 0)
    }

    /// Binary PPM (P6, maxval 255).
    pub fn write_ppm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)?;
        w.flush()
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.pixels.len() + 20);
        self.write_ppm(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn save_ppm(&self, path: &Path) -> Result<(), PoseError> {
        std::fs::write(path, self.to_ppm()).map_err(|source| PoseError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    fn line(&mut self, a: (i64, i64), b: (i64, i64), c: Rgb) {
        let (mut x, mut y) = a;
        let dx = (b.0 - x).abs();
        let dy = -(b.1 - y).abs();
        let sx = if x < b.0 { 1 } else { -1 };
        let sy = if y < b.1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.put(x, y, c);
            if (x, y) == b {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn hspan(&mut self, y: i64, x0: i64, x1: i64, c: Rgb) {
        let lo = x0.max(0);
        let hi = x1.min(self.width as i64 - 1);
        for x in lo..=hi {
            self.put(x, y, c);
        }
    }

    /// Midpoint circle: interior spans filled with `fill`, the outline drawn
    /// in `edge`.
    fn circle(&mut self, cx: i64, cy: i64, r: i64, fill: Rgb, edge: Rgb) {
        let mut outline = Vec::new();
        let (mut x, mut y, mut d) = (r, 0i64, 1 - r);
        while x >= y {
            for (px, py) in [(x, y), (y, x), (-y, x), (-x, y), (-x, -y), (-y, -x), (y, -x), (x, -y)] {
                outline.push((cx + px, cy + py));
            }
            y += 1;
            if d < 0 {
                d += 2 * y + 1;
            } else {
                x -= 1;
                d += 2 * (y - x) + 1;
            }
        }
        // fill between the outline extremes of every row
        let mut rows: std::collections::BTreeMap<i64, (i64, i64)> = std::collections::BTreeMap::new();
        for &(px, py) in &outline {
            let e = rows.entry(py).or_insert((px, px));
            e.0 = e.0.min(px);
            e.1 = e.1.max(px);
        }
        for (&py, &(lo, hi)) in &rows {
            self.hspan(py, lo + 1, hi - 1, fill);
        }
        for (px, py) in outline {
            self.put(px, py, edge);
        }
    }
}

// Clip the segment a->b to a guard rectangle around the image so Bresenham
// never walks unbounded distances (Liang-Barsky).
fn clip_segment(a: (f64, f64), b: (f64, f64), w: f64, h: f64) -> Option<((f64, f64), (f64, f64))> {
    let (xmin, xmax, ymin, ymax) = (-w, 2.0 * w, -h, 2.0 * h);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-dx, a.0 - xmin), (dx, xmax - a.0), (-dy, a.1 - ymin), (dy, ymax - a.1)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    Some(((a.0 + t0 * dx, a.1 + t0 * dy), (a.0 + t1 * dx, a.1 + t1 * dy)))
}

fn to_pixel(p: (f64, f64)) -> (i64, i64) {
    (p.0.round() as i64, p.1.round() as i64)
}

fn draw_arm(img: &mut PoseImage, cam: &CameraModel, pose: &Pose, arm: &ArmStyle, style: &PoseStyle) {
    let Ok(center) = project_point(cam, &pose.position) else {
        return;
    };
    let (w, h) = (img.width as f64, img.height as f64);
    let [roll, pitch, yaw] = pose.orientation;
    let rot = rpy_to_rotation(roll, pitch, yaw);

    let mut fill = [0u8; 3];
    fill[arm.fill_channel] = openness_intensity(pose.openness);
    let cpix = to_pixel(center);
    // keep far off-image centres from producing huge loops
    let guard = |v: i64, lim: f64| v > -(lim as i64) - style.circle_radius && v < 2 * lim as i64 + style.circle_radius;
    let center_near = guard(cpix.0, w) && guard(cpix.1, h);
    if center_near {
        img.circle(cpix.0, cpix.1, style.circle_radius, fill, arm.base);
    }

    for (k, color) in arm.axes.iter().enumerate() {
        let tip_world: Vec3 = std::array::from_fn(|i| pose.position[i] + style.axis_scale * rot[i][k]);
        let Ok(tip) = project_point(cam, &tip_world) else {
            continue;
        };
        if let Some((a, b)) = clip_segment(center, tip, w, h) {
            img.line(to_pixel(a), to_pixel(b), *color);
        }
    }

    if center_near {
        let half = style.marker_size / 2;
        for dy in -half..=half {
            for dx in -half..=half {
                img.put(cpix.0 + dx, cpix.1 + dy, arm.base);
            }
        }
    }
}

/// Rasterizes both arms' poses into a camera-aligned conditioning image.
///
/// Per arm: a filled openness circle, three orientation axes and a square
/// position marker. The left arm is drawn first. Geometry behind the camera
/// or outside the frame is clipped.
pub fn render_pose_image(cam: &CameraModel, left: &Pose, right: &Pose, width: usize, height: usize) -> PoseImage {
    render_pose_image_with(cam, left, right, width, height, &PoseStyle::default())
}

pub fn render_pose_image_with(
    cam: &CameraModel,
    left: &Pose,
    right: &Pose,
    width: usize,
    height: usize,
    style: &PoseStyle,
) -> PoseImage {
    let mut img = PoseImage::black(width, height);
    if width == 0 || height == 0 {
        return img;
    }
    draw_arm(&mut img, cam, left, &style.left, style);
    draw_arm(&mut img, cam, right, &style.right, style);
    img
}

/// Dense latent array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl LatentGrid {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, PoseError> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(PoseError::BadLatent { dims, len: data.len() });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(PoseError::NonFinite);
        }
        Ok(LatentGrid { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Elementwise sum of two latents of identical shape.
pub fn fuse_latents(a: &LatentGrid, b: &LatentGrid) -> Result<LatentGrid, PoseError> {
    if a.dims != b.dims {
        return Err(PoseError::ShapeMismatch(a.dims.clone(), b.dims.clone()));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    LatentGrid::new(a.dims.clone(), data)
}
