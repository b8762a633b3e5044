//! Synthetic RGB-D-like view pairs of textured rooms.
//!
//! A scene is a room (floor, ceiling, four walls) furnished with yawed
//! boxes and vertical cylinders. Every surface carries its own procedural
//! texture: a base color plus a few sinusoidal gratings in surface
//! coordinates, so color varies independently of shape. A view is rendered
//! by casting one ray per pixel of a pinhole camera (OpenCV convention: x
//! right, y down, z forward) and keeping the nearest hit, with Gaussian
//! noise along the ray. Points are expressed in the camera frame.
//!
//! The second camera is the first moved by a random relative motion whose
//! rotation angle and translation length are the configured means scaled
//! by `U[0.5, 1.5]`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Unit, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};

/// Bumped whenever generator output for a given seed changes.
pub const GENERATOR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    /// Room footprint range (meters) for both horizontal extents.
    pub room_min: f64,
    pub room_max: f64,
    pub room_height: f64,
    pub min_boxes: usize,
    pub max_boxes: usize,
    pub min_cylinders: usize,
    pub max_cylinders: usize,
    /// Number of sinusoidal gratings per surface texture.
    pub texture_waves: usize,
    /// Grating frequency range in cycles per meter.
    pub texture_freq_min: f64,
    pub texture_freq_max: f64,
    pub texture_amplitude: f64,
    pub image_width: usize,
    pub image_height: usize,
    pub fov_x_deg: f64,
    pub max_depth: f64,
    /// Standard deviation of depth noise along each ray (meters).
    pub noise_sigma: f64,
    pub color_noise: f64,
    pub mean_rotation_deg: f64,
    pub mean_translation_m: f64,
    pub min_overlap: f64,
    pub min_points: usize,
    pub max_retries: usize,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            room_min: 4.0,
            room_max: 6.0,
            room_height: 2.8,
            min_boxes: 4,
            max_boxes: 7,
            min_cylinders: 1,
            max_cylinders: 3,
            texture_waves: 3,
            texture_freq_min: 0.6,
            texture_freq_max: 2.5,
            texture_amplitude: 0.25,
            image_width: 32,
            image_height: 24,
            fov_x_deg: 60.0,
            max_depth: 5.0,
            noise_sigma: 0.003,
            color_noise: 0.01,
            mean_rotation_deg: 11.4,
            mean_translation_m: 0.194,
            min_overlap: 0.6,
            min_points: 200,
            max_retries: 100,
        }
    }
}

impl GeneratorParams {
    /// Larger relative motion and lower overlap, for baseline stress tests.
    pub fn large_motion() -> Self {
        Self {
            mean_rotation_deg: 35.0,
            mean_translation_m: 0.5,
            min_overlap: 0.3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::param(format!("generator: {m}")));
        if !(self.room_min > 1.0 && self.room_max >= self.room_min && self.room_height > 1.5) {
            return bad("room extents must satisfy 1 < room_min <= room_max, room_height > 1.5");
        }
        if self.min_boxes > self.max_boxes || self.min_cylinders > self.max_cylinders {
            return bad("object count ranges are inverted");
        }
        if !(self.texture_freq_min > 0.0 && self.texture_freq_max >= self.texture_freq_min) {
            return bad("texture frequencies must be positive and ordered");
        }
        if self.image_width < 2 || self.image_height < 2 {
            return bad("image must be at least 2x2");
        }
        if !(self.fov_x_deg > 1.0 && self.fov_x_deg < 170.0) {
            return bad("fov_x_deg must be in (1, 170)");
        }
        if !(self.noise_sigma >= 0.0 && self.color_noise >= 0.0 && self.max_depth > 0.0) {
            return bad("noise levels must be non-negative and max_depth positive");
        }
        if !(self.mean_rotation_deg >= 0.0 && self.mean_translation_m >= 0.0) {
            return bad("motion means must be non-negative");
        }
        if !(self.min_overlap >= 0.0 && self.min_overlap < 1.0) {
            return bad("min_overlap must be in [0, 1)");
        }
        if self.max_retries == 0 {
            return bad("max_retries must be positive");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let p: Self = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            message: e.message().to_string(),
        })?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat struct serializes")
    }

    fn focal(&self) -> f64 {
        self.image_width as f64 / 2.0 / (self.fov_x_deg.to_radians() / 2.0).tan()
    }
}

/// Identifies one view pair: scenes are shared by all views with the same
/// `scene` value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairSeed {
    pub scene: u64,
    pub view: u64,
}

fn rng_for(scene: u64, view: Option<u64>) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&scene.to_le_bytes());
    if let Some(v) = view {
        seed[8..16].copy_from_slice(&v.to_le_bytes());
        seed[16] = 1;
    }
    seed[20..24].copy_from_slice(&GENERATOR_VERSION.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub cloud0: PointCloud,
    pub cloud1: PointCloud,
    /// Maps cloud 0's camera frame into cloud 1's.
    pub transform: RigidTransform,
    /// Fraction of cloud 0's points visible from the second camera.
    pub overlap: f64,
    pub scene_id: u64,
    pub seed: PairSeed,
}

#[derive(Debug, Clone, PartialEq)]
struct Texture {
    base: Vector3<f64>,
    waves: Vec<(Vector2<f64>, f64, Vector3<f64>)>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, p: &GeneratorParams) -> Self {
        let base = Vector3::new(
            rng.random_range(0.15..0.85),
            rng.random_range(0.15..0.85),
            rng.random_range(0.15..0.85),
        );
        let waves = (0..p.texture_waves)
            .map(|_| {
                let dir = rng.random_range(0.0..PI);
                let freq = rng.random_range(p.texture_freq_min..=p.texture_freq_max);
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ) * p.texture_amplitude;
                (Vector2::new(dir.cos(), dir.sin()) * freq, phase, amp)
            })
            .collect();
        Self { base, waves }
    }

    fn color(&self, uv: Vector2<f64>) -> Vector3<f64> {
        let mut c = self.base;
        for (f, phase, amp) in &self.waves {
            c += amp * (2.0 * PI * f.dot(&uv) + phase).sin();
        }
        c.map(|v| v.clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    /// Two-sided rectangle: center, unit in-plane axes, half extents.
    Rect {
        center: Vector3<f64>,
        a: Vector3<f64>,
        b: Vector3<f64>,
        half: Vector2<f64>,
    },
    /// Vertical cylinder wall between `z0` and `z1`.
    Cylinder {
        axis_xy: Vector2<f64>,
        radius: f64,
        z0: f64,
        z1: f64,
    },
    /// Horizontal disk.
    Disk {
        center: Vector3<f64>,
        radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Surface {
    shape: Shape,
    texture: usize,
}

/// Ray hit: distance along the ray and texture coordinates.
struct Hit {
    t: f64,
    surface: usize,
    uv: Vector2<f64>,
}

impl Shape {
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector2<f64>)> {
        const EPS: f64 = 1e-9;
        match self {
            Shape::Rect { center, a, b, half } => {
                let n = a.cross(b);
                let denom = d.dot(&n);
                if denom.abs() < EPS {
                    return None;
                }
                let t = (center - o).dot(&n) / denom;
                if t <= EPS {
                    return None;
                }
                let rel = o + d * t - center;
                let (u, v) = (rel.dot(a), rel.dot(b));
                (u.abs() <= half.x && v.abs() <= half.y).then(|| (t, Vector2::new(u, v)))
            }
            Shape::Cylinder {
                axis_xy,
                radius,
                z0,
                z1,
            } => {
                let (ox, oy) = (o.x - axis_xy.x, o.y - axis_xy.y);
                let qa = d.x * d.x + d.y * d.y;
                if qa < EPS {
                    return None;
                }
                let qb = 2.0 * (ox * d.x + oy * d.y);
                let qc = ox * ox + oy * oy - radius * radius;
                let disc = qb * qb - 4.0 * qa * qc;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                for t in [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)] {
                    if t > EPS {
                        let p = o + d * t;
                        if p.z >= *z0 && p.z <= *z1 {
                            let ang = (p.y - axis_xy.y).atan2(p.x - axis_xy.x);
                            return Some((t, Vector2::new(ang * radius, p.z)));
                        }
                    }
                }
                None
            }
            Shape::Disk { center, radius } => {
                if d.z.abs() < EPS {
                    return None;
                }
                let t = (center.z - o.z) / d.z;
                if t <= EPS {
                    return None;
                }
                let p = o + d * t;
                let rel = Vector2::new(p.x - center.x, p.y - center.y);
                (rel.norm() <= *radius).then_some((t, rel))
            }
        }
    }
}

/// A furnished, textured room in world coordinates (z up).
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: u64,
    pub extent: Vector3<f64>,
    surfaces: Vec<Surface>,
    textures: Vec<Texture>,
    /// Footprints (center, radius) of furniture, for camera placement.
    obstacles: Vec<(Vector2<f64>, f64, f64)>,
}

fn rect(center: Vector3<f64>, a: Vector3<f64>, b: Vector3<f64>, ha: f64, hb: f64) -> Shape {
    Shape::Rect {
        center,
        a,
        b,
        half: Vector2::new(ha, hb),
    }
}

impl Scene {
    pub fn generate(id: u64, p: &GeneratorParams) -> Result<Scene> {
        p.validate()?;
        let mut rng = rng_for(id, None);
        let (w, d, h) = (
            rng.random_range(p.room_min..=p.room_max),
            rng.random_range(p.room_min..=p.room_max),
            p.room_height,
        );
        let mut scene = Scene {
            id,
            extent: Vector3::new(w, d, h),
            surfaces: Vec::new(),
            textures: Vec::new(),
            obstacles: Vec::new(),
        };
        let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
        let room = [
            rect(Vector3::new(w / 2.0, d / 2.0, 0.0), x, y, w / 2.0, d / 2.0),
            rect(Vector3::new(w / 2.0, d / 2.0, h), x, y, w / 2.0, d / 2.0),
            rect(Vector3::new(w / 2.0, 0.0, h / 2.0), x, z, w / 2.0, h / 2.0),
            rect(Vector3::new(w / 2.0, d, h / 2.0), x, z, w / 2.0, h / 2.0),
            rect(Vector3::new(0.0, d / 2.0, h / 2.0), y, z, d / 2.0, h / 2.0),
            rect(Vector3::new(w, d / 2.0, h / 2.0), y, z, d / 2.0, h / 2.0),
        ];
        for shape in room {
            scene.add(shape, Texture::random(&mut rng, p));
        }

        let n_boxes = rng.random_range(p.min_boxes..=p.max_boxes);
        for _ in 0..n_boxes {
            let size = Vector3::new(
                rng.random_range(0.3..1.4),
                rng.random_range(0.3..1.4),
                rng.random_range(0.3..1.6),
            );
            let cx = rng.random_range(0.2 + size.x / 2.0..w - 0.2 - size.x / 2.0);
            let cy = rng.random_range(0.2 + size.y / 2.0..d - 0.2 - size.y / 2.0);
            let yaw = rng.random_range(0.0..PI);
            // a box may sit on the floor or float as a shelf
            let base = if rng.random_bool(0.25) {
                rng.random_range(0.6..1.2)
            } else {
                0.0
            };
            let tex = Texture::random(&mut rng, p);
            scene.add_box(Vector3::new(cx, cy, base + size.z / 2.0), size / 2.0, yaw, tex);
            scene
                .obstacles
                .push((Vector2::new(cx, cy), size.xy().norm() / 2.0, base + size.z));
        }

        let n_cyl = rng.random_range(p.min_cylinders..=p.max_cylinders);
        for _ in 0..n_cyl {
            let r = rng.random_range(0.1..0.4);
            let height = rng.random_range(0.5..2.2);
            let cx = rng.random_range(0.2 + r..w - 0.2 - r);
            let cy = rng.random_range(0.2 + r..d - 0.2 - r);
            let tex = Texture::random(&mut rng, p);
            let t = scene.textures.len();
            scene.textures.push(tex);
            scene.surfaces.push(Surface {
                shape: Shape::Cylinder {
                    axis_xy: Vector2::new(cx, cy),
                    radius: r,
                    z0: 0.0,
                    z1: height,
                },
                texture: t,
            });
            scene.surfaces.push(Surface {
                shape: Shape::Disk {
                    center: Vector3::new(cx, cy, height),
                    radius: r,
                },
                texture: t,
            });
            scene.obstacles.push((Vector2::new(cx, cy), r, height));
        }
        Ok(scene)
    }

    fn add(&mut self, shape: Shape, texture: Texture) {
        self.textures.push(texture);
        self.surfaces.push(Surface {
            shape,
            texture: self.textures.len() - 1,
        });
    }

    fn add_box(&mut self, center: Vector3<f64>, half: Vector3<f64>, yaw: f64, texture: Texture) {
        let (c, s) = (yaw.cos(), yaw.sin());
        let ax = Vector3::new(c, s, 0.0);
        let ay = Vector3::new(-s, c, 0.0);
        let az = Vector3::z();
        let t = self.textures.len();
        self.textures.push(texture);
        let faces = [
            rect(center + az * half.z, ax, ay, half.x, half.y),
            rect(center - az * half.z, ax, ay, half.x, half.y),
            rect(center + ax * half.x, ay, az, half.y, half.z),
            rect(center - ax * half.x, ay, az, half.y, half.z),
            rect(center + ay * half.y, ax, az, half.x, half.z),
            rect(center - ay * half.y, ax, az, half.x, half.z),
        ];
        for shape in faces {
            self.surfaces.push(Surface { shape, texture: t });
        }
    }

    fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, s) in self.surfaces.iter().enumerate() {
            if let Some((t, uv)) = s.shape.intersect(o, d) {
                if best.as_ref().is_none_or(|b| t < b.t) {
                    best = Some(Hit { t, surface: i, uv });
                }
            }
        }
        best
    }

    fn color_at(&self, hit: &Hit) -> Vector3<f64> {
        self.textures[self.surfaces[hit.surface].texture].color(hit.uv)
    }

    fn camera_is_free(&self, pos: &Vector3<f64>) -> bool {
        let margin = 0.5;
        pos.x > margin
            && pos.y > margin
            && pos.x < self.extent.x - margin
            && pos.y < self.extent.y - margin
            && self
                .obstacles
                .iter()
                .all(|(c, r, top)| (pos.xy() - c).norm() > r + 0.3 || pos.z > top + 0.3)
    }

    /// Renders the view from camera-to-world pose `pose`; returns camera
    /// frame points with colors, and the noise-free world points.
    pub fn render(
        &self,
        pose: &RigidTransform,
        p: &GeneratorParams,
        rng: &mut ChaCha8Rng,
    ) -> (PointCloud, Vec<Vector3<f64>>) {
        let f = p.focal();
        let (cx, cy) = (p.image_width as f64 / 2.0, p.image_height as f64 / 2.0);
        let depth_noise = Normal::new(0.0, p.noise_sigma.max(0.0)).expect("finite sigma");
        let color_noise = Normal::new(0.0, p.color_noise.max(0.0)).expect("finite sigma");
        let mut positions = Vec::new();
        let mut colors = Vec::new();
        let mut world = Vec::new();
        let origin = pose.translation;
        for v in 0..p.image_height {
            for u in 0..p.image_width {
                let ray_cam = Vector3::new((u as f64 + 0.5 - cx) / f, (v as f64 + 0.5 - cy) / f, 1.0).normalize();
                let ray = pose.rotation * ray_cam;
                let Some(hit) = self.cast(&origin, &ray) else {
                    continue;
                };
                if hit.t > p.max_depth {
                    continue;
                }
                let noisy = if p.noise_sigma > 0.0 {
                    hit.t + depth_noise.sample(rng)
                } else {
                    hit.t
                };
                let mut color = self.color_at(&hit);
                if p.color_noise > 0.0 {
                    color = color.map(|c| (c + color_noise.sample(rng)).clamp(0.0, 1.0));
                }
                positions.push(ray_cam * noisy);
                colors.push(color);
                world.push(origin + ray * hit.t);
            }
        }
        (PointCloud::new(positions).with_colors(colors), world)
    }

    /// Fraction of `world` points that camera `pose` sees unoccluded.
    fn visible_fraction(&self, world: &[Vector3<f64>], pose: &RigidTransform, p: &GeneratorParams) -> f64 {
        if world.is_empty() {
            return 0.0;
        }
        let inv = pose.inverse();
        let f = p.focal();
        let (cx, cy) = (p.image_width as f64 / 2.0, p.image_height as f64 / 2.0);
        let visible = world
            .iter()
            .filter(|x| {
                let c = inv.apply_point(x);
                if c.z <= 1e-6 {
                    return false;
                }
                let (u, v) = (f * c.x / c.z + cx, f * c.y / c.z + cy);
                if u < 0.0 || v < 0.0 || u >= p.image_width as f64 || v >= p.image_height as f64 {
                    return false;
                }
                let dist = c.norm();
                if dist > p.max_depth {
                    return false;
                }
                let dir = (*x - pose.translation) / dist;
                self.cast(&pose.translation, &dir)
                    .is_some_and(|h| h.t >= dist - 1e-3)
            })
            .count();
        visible as f64 / world.len() as f64
    }

    fn random_pose(&self, rng: &mut ChaCha8Rng) -> RigidTransform {
        for _ in 0..1000 {
            let pos = Vector3::new(
                rng.random_range(0.5..self.extent.x - 0.5),
                rng.random_range(0.5..self.extent.y - 0.5),
                rng.random_range(1.1..1.8),
            );
            if !self.camera_is_free(&pos) {
                continue;
            }
            let yaw = rng.random_range(0.0..2.0 * PI);
            let pitch = rng.random_range(-35f64.to_radians()..0.0);
            return look_pose(pos, yaw, pitch);
        }
        // a crowded room: stand in the middle, above the furniture
        look_pose(
            Vector3::new(self.extent.x / 2.0, self.extent.y / 2.0, self.extent.z - 0.3),
            0.0,
            -60f64.to_radians(),
        )
    }
}

/// Camera-to-world pose looking along heading `yaw` tilted by `pitch`
/// (negative looks down), with no roll.
fn look_pose(pos: Vector3<f64>, yaw: f64, pitch: f64) -> RigidTransform {
    let forward = Vector3::new(yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), pitch.sin());
    let right = forward.cross(&Vector3::z()).normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_columns(&[right, down, forward]);
    RigidTransform::from_parts_unchecked(rotation, pos)
}

/// Draws the relative camera motion (camera 1 in camera 0's frame).
fn random_motion(rng: &mut ChaCha8Rng, p: &GeneratorParams) -> RigidTransform {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = p.mean_rotation_deg.to_radians() * rng.random_range(0.5..1.5);
    let dir: [f64; 3] = UnitSphere.sample(rng);
    let length = p.mean_translation_m * rng.random_range(0.5..1.5);
    let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle);
    RigidTransform::from_parts_unchecked(*rotation.matrix(), Vector3::from(dir) * length)
}

/// Generates the view pair `seed.view` of scene `seed.scene`.
pub fn generate_scene_pair(seed: PairSeed, p: &GeneratorParams) -> Result<ScenePair> {
    let scene = Scene::generate(seed.scene, p)?;
    generate_pair_in(&scene, seed.view, p)
}

/// Generates a view pair in an existing scene.
pub fn generate_pair_in(scene: &Scene, view: u64, p: &GeneratorParams) -> Result<ScenePair> {
    p.validate()?;
    let mut rng = rng_for(scene.id, Some(view));
    let motion = random_motion(&mut rng, p);
    let mut best_overlap = 0.0f64;
    for _ in 0..p.max_retries {
        let pose0 = scene.random_pose(&mut rng);
        let pose1 = pose0.compose(&motion);
        if !scene.camera_is_free(&pose1.translation) {
            continue;
        }
        let (cloud0, world0) = scene.render(&pose0, p, &mut rng);
        let (cloud1, _) = scene.render(&pose1, p, &mut rng);
        if cloud0.len() < p.min_points || cloud1.len() < p.min_points {
            continue;
        }
        let overlap = scene.visible_fraction(&world0, &pose1, p);
        best_overlap = best_overlap.max(overlap);
        if overlap < p.min_overlap || overlap <= 0.0 {
            continue;
        }
        return Ok(ScenePair {
            cloud0,
            cloud1,
            transform: motion.inverse(),
            overlap,
            scene_id: scene.id,
            seed: PairSeed {
                scene: scene.id,
                view,
            },
        });
    }
    Err(Error::Generation(format!(
        "scene {} view {view}: overlap target {} not reached in {} attempts (best {best_overlap:.3})",
        scene.id, p.min_overlap, p.max_retries
    )))
}

/// The relative motion of a pair without rendering it, for calibration
/// checks over large populations.
pub fn sample_motion(seed: PairSeed, p: &GeneratorParams) -> RigidTransform {
    let mut rng = rng_for(seed.scene, Some(seed.view));
    random_motion(&mut rng, p).inverse()
}
