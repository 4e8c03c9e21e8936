//! Procedural posed-image dataset generator.
//!
//! Renders toy 3D scenes (ego cube, optional actor cylinder, road slabs) with
//! a primary-ray caster: flat shading from a single directional light, no
//! bounces, constant background. Four archetypes reproduce the scenario
//! layouts used throughout the evaluation: a simple toy scene, a single-scene
//! crossing, a two-scene crossing with probabilistic actor existence, and a
//! two-scene lane merge with variable actor speed.

use crate::error::{Error, Result};
use crate::geom::{intersect_box, intersect_cylinder, v3, Aabb, Hit, Vec3};
use crate::img::Image;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

/// Directional light (towards the light), nearly vertical so top faces carry
/// close-to-full albedo.
const LIGHT_DIR: Vec3 = v3(0.1, -0.08, 0.99);
const AMBIENT: f32 = 0.35;
pub const BACKGROUND: [f32; 3] = [0.5, 0.5, 0.5];
const EGO_POSE_COUNT: usize = 4;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CameraPose {
    pub pose_id: usize,
    pub position: [f32; 3],
    pub target: [f32; 3],
    pub up: [f32; 3],
    /// Focal length in pixels.
    pub focal: f32,
    pub width: usize,
    pub height: usize,
}

impl CameraPose {
    pub fn validate(&self) -> Result<()> {
        let pos = Vec3::from_array(self.position);
        let tgt = Vec3::from_array(self.target);
        let up = Vec3::from_array(self.up);
        if !(pos.is_finite() && tgt.is_finite() && up.is_finite()) {
            return Err(Error::InvalidCamera("non-finite camera fields".into()));
        }
        let fwd = tgt - pos;
        if fwd.norm() < 1e-6 {
            return Err(Error::InvalidCamera("position equals target".into()));
        }
        if fwd.normalized().cross(up.normalized()).norm() < 1e-6 {
            return Err(Error::InvalidCamera("up parallel to view direction".into()));
        }
        if !(self.focal > 0.0) {
            return Err(Error::InvalidCamera("focal must be positive".into()));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::InvalidCamera("resolution below 16x16".into()));
        }
        Ok(())
    }

    /// Orthonormal camera basis: (right, up, forward).
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let fwd = (Vec3::from_array(self.target) - Vec3::from_array(self.position)).normalized();
        let right = fwd.cross(Vec3::from_array(self.up)).normalized();
        let up = right.cross(fwd);
        (right, up, fwd)
    }

    /// Unit direction of the primary ray through pixel center (px, py).
    pub fn ray_dir(&self, px: usize, py: usize) -> Vec3 {
        let (right, up, fwd) = self.basis();
        let u = (px as f32 + 0.5 - self.width as f32 / 2.0) / self.focal;
        let v = (self.height as f32 / 2.0 - (py as f32 + 0.5)) / self.focal;
        (fwd + right.scale(u) + up.scale(v)).normalized()
    }

    /// Pinhole projection of a world point to pixel coordinates.
    pub fn project(&self, p: Vec3) -> Option<(f32, f32)> {
        let (right, up, fwd) = self.basis();
        let rel = p - Vec3::from_array(self.position);
        let depth = rel.dot(fwd);
        if depth <= 1e-6 {
            return None;
        }
        let x = rel.dot(right) / depth * self.focal + self.width as f32 / 2.0 - 0.5;
        let y = self.height as f32 / 2.0 - 0.5 - rel.dot(up) / depth * self.focal;
        Some((x, y))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Box { half_extents: [f32; 3] },
    Cylinder { radius: f32, height: f32 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Ego,
    Actor,
    Static,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PrimitiveSpec {
    pub shape: Shape,
    pub center: [f32; 3],
    pub albedo: [f32; 3],
    pub role: Role,
}

impl PrimitiveSpec {
    fn validate(&self) -> Result<()> {
        let ok = match self.shape {
            Shape::Box { half_extents } => half_extents.iter().all(|&h| h > 0.0),
            Shape::Cylinder { radius, height } => radius > 0.0 && height > 0.0,
        };
        if !ok {
            return Err(Error::Dataset("non-positive primitive dimensions".into()));
        }
        if !Vec3::from_array(self.center).is_finite() {
            return Err(Error::Dataset("non-finite primitive center".into()));
        }
        Ok(())
    }

    /// World-space bounding box with the primitive centered at `center`.
    pub fn bbox_at(&self, center: Vec3) -> Aabb {
        match self.shape {
            Shape::Box { half_extents } => {
                Aabb::from_center_half(center, Vec3::from_array(half_extents))
            }
            Shape::Cylinder { radius, height } => {
                Aabb::from_center_half(center, v3(radius, radius, height / 2.0))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneSpec {
    pub scene_id: usize,
    pub timestamps: usize,
    pub objects: Vec<PrimitiveSpec>,
    /// Per-timestamp actor center; absent when the scene has no actor.
    pub actor_trajectory: Option<Vec<[f32; 3]>>,
    /// Per-timestamp ego center; absent when the ego object is stationary.
    pub ego_trajectory: Option<Vec<[f32; 3]>>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.timestamps < 1 {
            return Err(Error::Dataset("scene needs at least one timestamp".into()));
        }
        let ego_count = self.objects.iter().filter(|o| o.role == Role::Ego).count();
        if ego_count != 1 {
            return Err(Error::Dataset(format!(
                "scene {} has {} ego objects, expected exactly 1",
                self.scene_id, ego_count
            )));
        }
        for o in &self.objects {
            o.validate()?;
        }
        for (traj, name) in [
            (&self.actor_trajectory, "actor"),
            (&self.ego_trajectory, "ego"),
        ] {
            if let Some(t) = traj {
                if t.len() != self.timestamps {
                    return Err(Error::Dataset(format!(
                        "{name} trajectory length {} != timestamps {}",
                        t.len(),
                        self.timestamps
                    )));
                }
            }
        }
        if self.actor_trajectory.is_some() && self.actor().is_none() {
            return Err(Error::Dataset("actor trajectory without actor object".into()));
        }
        Ok(())
    }

    pub fn actor(&self) -> Option<&PrimitiveSpec> {
        self.objects.iter().find(|o| o.role == Role::Actor)
    }

    /// Resolved center of an object at timestamp `t`.
    pub fn center_at(&self, obj: &PrimitiveSpec, t: usize) -> Vec3 {
        let traj = match obj.role {
            Role::Actor => self.actor_trajectory.as_ref(),
            Role::Ego => self.ego_trajectory.as_ref(),
            Role::Static => None,
        };
        match traj {
            Some(tr) => Vec3::from_array(tr[t]),
            None => Vec3::from_array(obj.center),
        }
    }

    pub fn actor_position(&self, t: usize) -> Option<Vec3> {
        self.actor().map(|a| self.center_at(a, t))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FrameRecord {
    pub scene_id: usize,
    pub timestamp: usize,
    pub pose_id: usize,
    pub image_path: String,
    pub actor_present: bool,
    pub actor_position: Option<[f32; 3]>,
    /// Actor present but invisible from this pose.
    pub occluded: bool,
}

/// Key into the frame table.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameKey {
    pub scene_id: usize,
    pub timestamp: usize,
    pub pose_id: usize,
}

/// Scenario metadata consumed by the planner: which scene is the hazard and
/// which single frames serve as the fixed trial inputs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PlannerMeta {
    pub hazard_scene: usize,
    /// Ambiguous input (occluded or shared-state) used for the hazard cell.
    pub hazard_input: FrameKey,
    /// Fully observable input of the hazard-free scene for the clear cell.
    pub clear_input: FrameKey,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Hash, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum Archetype {
    BlenderToy,
    SingleSceneIntersection,
    MultiSceneIntersection,
    TwoLaneMerge,
}

impl std::fmt::Display for Archetype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Archetype::BlenderToy => "blender_toy",
            Archetype::SingleSceneIntersection => "single_scene_intersection",
            Archetype::MultiSceneIntersection => "multi_scene_intersection",
            Archetype::TwoLaneMerge => "two_lane_merge",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Archetype {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blender_toy" => Ok(Archetype::BlenderToy),
            "single_scene_intersection" => Ok(Archetype::SingleSceneIntersection),
            "multi_scene_intersection" => Ok(Archetype::MultiSceneIntersection),
            "two_lane_merge" => Ok(Archetype::TwoLaneMerge),
            other => Err(Error::InvalidConfig(format!("unknown archetype `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub archetype: Archetype,
    pub scenes: Vec<SceneSpec>,
    pub poses: Vec<CameraPose>,
    pub frames: Vec<FrameRecord>,
    pub rng_seed: u64,
    pub background: [f32; 3],
    pub world_bounds: Aabb,
    pub planner: PlannerMeta,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        for s in &self.scenes {
            s.validate()?;
        }
        for p in &self.poses {
            p.validate()?;
        }
        let expected: usize = self
            .scenes
            .iter()
            .map(|s| s.timestamps * self.poses.len())
            .sum();
        if self.frames.len() != expected {
            return Err(Error::Dataset(format!(
                "frame count {} != sum of N x C = {}",
                self.frames.len(),
                expected
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.frames {
            if f.occluded && !f.actor_present {
                return Err(Error::Dataset("occluded frame without actor".into()));
            }
            if f.actor_present != f.actor_position.is_some() {
                return Err(Error::Dataset(
                    "actor_position must be set iff actor_present".into(),
                ));
            }
            if !seen.insert((f.scene_id, f.timestamp, f.pose_id)) {
                return Err(Error::Dataset("duplicate (scene,timestamp,pose)".into()));
            }
        }
        Ok(())
    }

    pub fn frame_index(&self) -> HashMap<FrameKey, usize> {
        self.frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                (
                    FrameKey {
                        scene_id: f.scene_id,
                        timestamp: f.timestamp,
                        pose_id: f.pose_id,
                    },
                    i,
                )
            })
            .collect()
    }

    pub fn scene(&self, scene_id: usize) -> &SceneSpec {
        &self.scenes[scene_id]
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("manifest.json"), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(dir.join("manifest.json"))?;
        let m: DatasetManifest = serde_json::from_str(&json)?;
        m.validate()?;
        Ok(m)
    }

    /// All frame images, aligned with `frames`, loaded from `dir`.
    pub fn load_images(&self, dir: &Path) -> Result<Vec<Image>> {
        self.frames
            .iter()
            .map(|f| Image::load_png(&dir.join(&f.image_path)))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub archetype: Archetype,
    pub out_dir: PathBuf,
    /// Total pose count C: C-4 arc poses plus 4 fixed ego-centric poses.
    pub poses: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn new(archetype: Archetype, out_dir: impl Into<PathBuf>) -> Self {
        DatasetConfig {
            archetype,
            out_dir: out_dir.into(),
            poses: 24,
            width: 64,
            height: 64,
            seed: 0,
        }
    }
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

struct ResolvedObject {
    shape: Shape,
    center: Vec3,
    albedo: [f32; 3],
    role: Role,
}

fn resolve_objects(scene: &SceneSpec, t: usize, include_actor: bool) -> Vec<ResolvedObject> {
    scene
        .objects
        .iter()
        .filter(|o| include_actor || o.role != Role::Actor)
        .map(|o| ResolvedObject {
            shape: o.shape,
            center: scene.center_at(o, t),
            albedo: o.albedo,
            role: o.role,
        })
        .collect()
}

fn intersect_object(origin: Vec3, dir: Vec3, obj: &ResolvedObject) -> Option<Hit> {
    match obj.shape {
        Shape::Box { half_extents } => {
            let aabb = Aabb::from_center_half(obj.center, Vec3::from_array(half_extents));
            intersect_box(origin, dir, &aabb)
        }
        Shape::Cylinder { radius, height } => {
            intersect_cylinder(origin, dir, obj.center, radius, height)
        }
    }
}

fn shade(albedo: [f32; 3], normal: Vec3) -> [f32; 3] {
    let l = LIGHT_DIR.normalized();
    let k = AMBIENT + (1.0 - AMBIENT) * normal.dot(l).max(0.0);
    [albedo[0] * k, albedo[1] * k, albedo[2] * k]
}

/// Render one frame with the primary-ray caster. Deterministic given inputs.
pub fn render_frame(scene: &SceneSpec, t: usize, cam: &CameraPose) -> Result<Image> {
    render_frame_filtered(scene, t, cam, true)
}

/// Same as [`render_frame`] but optionally deleting the actor; used by the
/// occlusion soundness check and the actor-silhouette test oracle.
pub fn render_frame_filtered(
    scene: &SceneSpec,
    t: usize,
    cam: &CameraPose,
    include_actor: bool,
) -> Result<Image> {
    cam.validate()?;
    if t >= scene.timestamps {
        return Err(Error::Dataset(format!(
            "timestamp {t} out of range (scene has {})",
            scene.timestamps
        )));
    }
    let objects = resolve_objects(scene, t, include_actor);
    let origin = Vec3::from_array(cam.position);
    let mut img = Image::new(cam.width, cam.height);
    for py in 0..cam.height {
        for px in 0..cam.width {
            let dir = cam.ray_dir(px, py);
            let mut best: Option<(f32, [f32; 3])> = None;
            for obj in &objects {
                if let Some(hit) = intersect_object(origin, dir, obj) {
                    if best.map_or(true, |(bt, _)| hit.t < bt) {
                        best = Some((hit.t, shade(obj.albedo, hit.normal)));
                    }
                }
            }
            img.set(px, py, best.map_or(BACKGROUND, |(_, c)| c));
        }
    }
    Ok(img)
}

/// True when every sample ray from the camera to the actor's bounding-box
/// corners and center is blocked by other geometry. With convex occluders
/// this is exact: the actor projects inside the occluder silhouette.
pub fn actor_fully_occluded(scene: &SceneSpec, t: usize, cam: &CameraPose) -> bool {
    let Some(actor) = scene.actor() else {
        return false;
    };
    let center = scene.center_at(actor, t);
    let bbox = actor.bbox_at(center);
    let origin = Vec3::from_array(cam.position);
    let blockers = resolve_objects(scene, t, false);

    let mut points = Vec::with_capacity(9);
    points.push(center);
    for &x in &[bbox.min[0], bbox.max[0]] {
        for &y in &[bbox.min[1], bbox.max[1]] {
            for &z in &[bbox.min[2], bbox.max[2]] {
                points.push(v3(x, y, z));
            }
        }
    }
    points.into_iter().all(|p| {
        let to_p = p - origin;
        let dist = to_p.norm();
        let dir = to_p.scale(1.0 / dist);
        blockers
            .iter()
            .filter(|b| b.role != Role::Actor)
            .any(|b| intersect_object(origin, dir, b).map_or(false, |h| h.t < dist - 1e-3))
    })
}

/// Recompute the `occluded` flag of every frame by ray casting.
pub fn occlusion_annotate(mut manifest: DatasetManifest) -> DatasetManifest {
    for f in &mut manifest.frames {
        let scene = &manifest.scenes[f.scene_id];
        f.occluded = f.actor_present
            && actor_fully_occluded(scene, f.timestamp, &manifest.poses[f.pose_id]);
    }
    manifest
}

// ---------------------------------------------------------------------------
// Archetype layouts
// ---------------------------------------------------------------------------

const EGO_ALBEDO: [f32; 3] = [0.08, 0.15, 0.92];
const ACTOR_ALBEDO: [f32; 3] = [0.93, 0.08, 0.08];

fn road(center: [f32; 3], half: [f32; 3], albedo: [f32; 3]) -> PrimitiveSpec {
    PrimitiveSpec {
        shape: Shape::Box { half_extents: half },
        center,
        albedo,
        role: Role::Static,
    }
}

fn ego_cube(half: f32) -> PrimitiveSpec {
    PrimitiveSpec {
        shape: Shape::Box {
            half_extents: [half, half, half],
        },
        center: [0.0, 0.0, half],
        albedo: EGO_ALBEDO,
        role: Role::Ego,
    }
}

fn actor_cylinder(radius: f32, height: f32) -> PrimitiveSpec {
    PrimitiveSpec {
        shape: Shape::Cylinder { radius, height },
        center: [0.0, 0.0, height / 2.0],
        albedo: ACTOR_ALBEDO,
        role: Role::Actor,
    }
}

struct Layout {
    scenes: Vec<SceneSpec>,
    world_bounds: Aabb,
    arc_radius: f32,
    arc_center: Vec3,
    ego_cam_y: f32,
    ego_cam_z: f32,
    ego_cam_target: Vec3,
    hazard_scene: usize,
}

fn intersection_roads() -> Vec<PrimitiveSpec> {
    vec![
        road([0.0, 1.8, 0.06], [4.2, 0.8, 0.06], [0.20, 0.20, 0.22]),
        road([0.0, -1.6, 0.06], [0.8, 3.2, 0.06], [0.28, 0.28, 0.30]),
    ]
}

fn layout(archetype: Archetype) -> Layout {
    match archetype {
        Archetype::BlenderToy => {
            let ground = road([0.0, 0.0, 0.05], [3.2, 3.2, 0.05], [0.62, 0.62, 0.60]);
            let traj: Vec<[f32; 3]> = vec![[-1.6, 2.0, 0.7], [0.0, 2.0, 0.7], [1.6, 2.0, 0.7]];
            let mut cube = ego_cube(0.6);
            cube.center = [0.0, 0.0, 0.7];
            let with_actor = SceneSpec {
                scene_id: 0,
                timestamps: 3,
                objects: vec![ground.clone(), cube.clone(), actor_cylinder(0.60, 1.2)],
                actor_trajectory: Some(traj),
                ego_trajectory: None,
            };
            let without_actor = SceneSpec {
                scene_id: 1,
                timestamps: 3,
                objects: vec![ground, cube],
                actor_trajectory: None,
                ego_trajectory: None,
            };
            Layout {
                scenes: vec![with_actor, without_actor],
                world_bounds: Aabb {
                    min: [-3.6, -3.6, -0.1],
                    max: [3.6, 3.6, 3.0],
                },
                arc_radius: 6.0,
                arc_center: v3(0.0, 0.0, 0.7),
                ego_cam_y: -3.4,
                ego_cam_z: 0.6,
                ego_cam_target: v3(0.0, 2.0, 0.7),
                hazard_scene: 0,
            }
        }
        Archetype::SingleSceneIntersection => {
            let n = 10;
            let mut objects = intersection_roads();
            let mut cube = ego_cube(0.6);
            cube.center = [0.0, -2.2, 0.6];
            objects.push(cube);
            objects.push(actor_cylinder(0.80, 1.3));
            let traj: Vec<[f32; 3]> = (0..n)
                .map(|t| [-3.6 + 0.8 * t as f32, 1.8, 0.55])
                .collect();
            Layout {
                scenes: vec![SceneSpec {
                    scene_id: 0,
                    timestamps: n,
                    objects,
                    actor_trajectory: Some(traj),
                    ego_trajectory: None,
                }],
                world_bounds: Aabb {
                    min: [-4.6, -4.6, -0.1],
                    max: [4.6, 4.6, 3.4],
                },
                arc_radius: 7.5,
                arc_center: v3(0.0, 0.0, 0.6),
                ego_cam_y: -4.6,
                ego_cam_z: 0.5,
                ego_cam_target: v3(0.0, 2.0, 0.55),
                hazard_scene: 0,
            }
        }
        Archetype::MultiSceneIntersection => {
            let ego_traj: Vec<[f32; 3]> =
                vec![[0.0, -3.0, 0.6], [0.0, -2.4, 0.6], [0.0, -1.8, 0.6]];
            let actor_traj: Vec<[f32; 3]> =
                vec![[-2.4, 1.8, 0.55], [0.0, 1.8, 0.55], [2.4, 1.8, 0.55]];
            let mut objs0 = intersection_roads();
            objs0.push(ego_cube(0.6));
            objs0.push(actor_cylinder(1.10, 1.3));
            let mut objs1 = intersection_roads();
            objs1.push(ego_cube(0.6));
            let s0 = SceneSpec {
                scene_id: 0,
                timestamps: 3,
                objects: objs0,
                actor_trajectory: Some(actor_traj),
                ego_trajectory: Some(ego_traj.clone()),
            };
            let s1 = SceneSpec {
                scene_id: 1,
                timestamps: 3,
                objects: objs1,
                actor_trajectory: None,
                ego_trajectory: Some(ego_traj),
            };
            Layout {
                scenes: vec![s0, s1],
                world_bounds: Aabb {
                    min: [-4.6, -4.6, -0.1],
                    max: [4.6, 4.6, 3.4],
                },
                arc_radius: 7.5,
                arc_center: v3(0.0, 0.0, 0.6),
                ego_cam_y: -4.6,
                ego_cam_z: 0.5,
                ego_cam_target: v3(0.0, 2.0, 0.55),
                hazard_scene: 0,
            }
        }
        Archetype::TwoLaneMerge => {
            let roads = vec![
                road([0.0, 0.0, 0.06], [0.8, 4.2, 0.06], [0.28, 0.28, 0.30]),
                road([1.6, 0.0, 0.06], [0.8, 4.2, 0.06], [0.20, 0.20, 0.22]),
            ];
            let ego_traj: Vec<[f32; 3]> =
                vec![[0.0, -3.0, 0.6], [0.0, -2.5, 0.6], [0.0, -2.0, 0.6]];
            let fast: Vec<[f32; 3]> =
                vec![[1.6, -3.2, 0.55], [1.6, 0.8, 0.55], [1.6, 3.0, 0.55]];
            let slow: Vec<[f32; 3]> =
                vec![[1.6, -3.2, 0.55], [1.6, -1.6, 0.55], [1.6, -0.2, 0.55]];
            let mk = |scene_id, traj: Vec<[f32; 3]>| {
                let mut objects = roads.clone();
                objects.push(ego_cube(0.6));
                objects.push(actor_cylinder(0.80, 1.3));
                SceneSpec {
                    scene_id,
                    timestamps: 3,
                    objects,
                    actor_trajectory: Some(traj),
                    ego_trajectory: Some(ego_traj.clone()),
                }
            };
            Layout {
                scenes: vec![mk(0, fast), mk(1, slow)],
                world_bounds: Aabb {
                    min: [-4.6, -4.6, -0.1],
                    max: [4.6, 4.6, 3.4],
                },
                arc_radius: 7.5,
                arc_center: v3(0.8, 0.0, 0.6),
                ego_cam_y: -4.6,
                ego_cam_z: 0.5,
                ego_cam_target: v3(0.8, 2.0, 0.55),
                hazard_scene: 0,
            }
        }
    }
}

/// Pose set: `c_total - 4` poses on a hemisphere arc (alternating elevations)
/// looking at the scene center, plus 4 ego-centric poses behind the ego lane.
fn build_poses(lay: &Layout, c_total: usize, width: usize, height: usize) -> Vec<CameraPose> {
    assert!(c_total >= 8, "need at least 8 poses (4 arc + 4 ego)");
    let n_arc = c_total - EGO_POSE_COUNT;
    let mut poses = Vec::with_capacity(c_total);
    let focal_arc = 60.0 * width as f32 / 64.0;
    let focal_ego = 55.0 * width as f32 / 64.0;
    for i in 0..n_arc {
        let az = 2.0 * std::f32::consts::PI * i as f32 / n_arc as f32;
        let elev = if i % 2 == 0 { 32.0f32 } else { 50.0f32 }.to_radians();
        let r = lay.arc_radius;
        let pos = lay.arc_center
            + v3(
                r * az.cos() * elev.cos(),
                r * az.sin() * elev.cos(),
                r * elev.sin(),
            );
        poses.push(CameraPose {
            pose_id: i,
            position: pos.to_array(),
            target: lay.arc_center.to_array(),
            up: [0.0, 0.0, 1.0],
            focal: focal_arc,
            width,
            height,
        });
    }
    let offsets = [-0.35f32, -0.12, 0.12, 0.35];
    for (j, &dx) in offsets.iter().enumerate() {
        poses.push(CameraPose {
            pose_id: n_arc + j,
            position: [dx, lay.ego_cam_y, lay.ego_cam_z],
            target: [
                lay.ego_cam_target.x + dx * 0.3,
                lay.ego_cam_target.y,
                lay.ego_cam_target.z,
            ],
            up: [0.0, 0.0, 1.0],
            focal: focal_ego,
            width,
            height,
        });
    }
    poses
}

/// Index of the first ego-centric pose in a generated pose list.
pub fn first_ego_pose(pose_count: usize) -> usize {
    pose_count - EGO_POSE_COUNT
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

fn pick_planner_inputs(
    manifest: &DatasetManifest,
    images: &[Image],
    hazard_scene: usize,
) -> Result<PlannerMeta> {
    let safe_scene = if manifest.scenes.len() > 1 {
        manifest
            .scenes
            .iter()
            .map(|s| s.scene_id)
            .find(|&s| s != hazard_scene)
            .unwrap_or(hazard_scene)
    } else {
        hazard_scene
    };
    let index = manifest.frame_index();
    let image_of = |k: FrameKey| &images[index[&k]];

    // Hazard input: an ambiguous frame of the hazard scene. Prefer an
    // occluded ego view; otherwise fall back to a shared-initial-state frame
    // (ego pose at t=0), which covers the dynamics-uncertainty archetype.
    let ego0 = first_ego_pose(manifest.poses.len());
    let hazard_input = manifest
        .frames
        .iter()
        .filter(|f| f.scene_id == hazard_scene && f.occluded && f.pose_id >= ego0)
        .map(|f| FrameKey {
            scene_id: f.scene_id,
            timestamp: f.timestamp,
            pose_id: f.pose_id,
        })
        .next()
        .unwrap_or(FrameKey {
            scene_id: hazard_scene,
            timestamp: 0,
            pose_id: ego0,
        });

    // Clear input: a frame of the safe scene from a pose that visibly
    // disambiguates the scenes (pixels differ from the hazard scene's frame
    // at the same (t, pose)). Prefer the hazard timestamp, then scan the
    // rest — shared-initial-state archetypes only diverge later.
    let t_haz = hazard_input.timestamp;
    let mut clear_input = None;
    if safe_scene != hazard_scene {
        let timestamps = manifest.scene(safe_scene).timestamps;
        let mut t_order: Vec<usize> = (0..timestamps).collect();
        t_order.sort_by_key(|&t| (t != t_haz, t));
        'outer: for t in t_order {
            for pose_id in 0..manifest.poses.len() {
                let ka = FrameKey {
                    scene_id: hazard_scene,
                    timestamp: t,
                    pose_id,
                };
                let kb = FrameKey {
                    scene_id: safe_scene,
                    timestamp: t,
                    pose_id,
                };
                if image_of(ka) != image_of(kb) {
                    clear_input = Some(kb);
                    break 'outer;
                }
            }
        }
    }
    Ok(PlannerMeta {
        hazard_scene,
        hazard_input,
        clear_input: clear_input.unwrap_or(FrameKey {
            scene_id: safe_scene,
            timestamp: t_haz,
            pose_id: 0,
        }),
    })
}

/// Generate a complete dataset on disk: PNG frames plus `manifest.json`.
pub fn generate_dataset(config: &DatasetConfig) -> Result<DatasetManifest> {
    let lay = layout(config.archetype);
    let poses = build_poses(&lay, config.poses, config.width, config.height);
    let images_dir = config.out_dir.join("images");
    std::fs::create_dir_all(&images_dir)?;

    let mut frames = Vec::new();
    let mut images = Vec::new();
    for scene in &lay.scenes {
        scene.validate()?;
        for t in 0..scene.timestamps {
            for cam in &poses {
                let mut img = render_frame(scene, t, cam)?;
                img.quantize();
                let rel = format!("images/s{}_t{}_p{}.png", scene.scene_id, t, cam.pose_id);
                img.save_png(&config.out_dir.join(&rel))?;
                let actor_pos = scene.actor_position(t);
                frames.push(FrameRecord {
                    scene_id: scene.scene_id,
                    timestamp: t,
                    pose_id: cam.pose_id,
                    image_path: rel,
                    actor_present: actor_pos.is_some(),
                    actor_position: actor_pos.map(|p| p.to_array()),
                    occluded: false,
                });
                images.push(img);
            }
        }
    }

    let manifest = DatasetManifest {
        name: config.archetype.to_string(),
        archetype: config.archetype,
        scenes: lay.scenes.clone(),
        poses,
        frames,
        rng_seed: config.seed,
        background: BACKGROUND,
        world_bounds: lay.world_bounds,
        planner: PlannerMeta {
            hazard_scene: lay.hazard_scene,
            hazard_input: FrameKey {
                scene_id: 0,
                timestamp: 0,
                pose_id: 0,
            },
            clear_input: FrameKey {
                scene_id: 0,
                timestamp: 0,
                pose_id: 0,
            },
        },
    };
    let mut manifest = occlusion_annotate(manifest);
    manifest.planner = pick_planner_inputs(&manifest, &images, lay.hazard_scene)?;
    manifest.validate()?;
    manifest.save(&config.out_dir)?;
    Ok(manifest)
}
