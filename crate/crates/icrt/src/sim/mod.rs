//! Deterministic 2.5-D tabletop simulator: multi-task scenes, kinematic
//! stepping, two orthographic cameras, scripted experts, and success scoring.
//!
//! The world is a square workspace with free objects (cubes, spheres) on the
//! z=0 plane and containers (bowls, pots) that accept placements. The gripper
//! is a full SE(3) pose even though interactions are planar.

mod dataset;
mod expert;
mod render;

pub use dataset::{
    file_sha256, generate_dataset, mix_seed, run_expert_episode, Dataset, EpisodeOutcome,
    GenerateConfig, GenerateReport, TrajStep, Trajectory,
};
pub use expert::{expert_policy, Expert, ExpertOptions, Route};
pub use render::{glyph_bbox_px, render, Camera, IMG_SIZE};

use crate::error::{Error, Result};
use crate::geom::{apply_action, proprio_encode, ActionVec, Pose, ProprioVec, Vec3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const WORKSPACE_HALF: f64 = 0.18;
pub const Z_MAX: f64 = 0.15;
pub const STEP_CLAMP: f64 = 0.03;
pub const GRASP_RADIUS: f64 = 0.02;
pub const CONTACT_Z: f64 = 0.03;
pub const CONTACT_RADIUS: f64 = 0.035;
pub const SNAP_RADIUS: f64 = 0.03;
pub const STACK_RADIUS: f64 = 0.025;
pub const STACK_HEIGHT: f64 = 0.04;
pub const POKE_MIN_DISP: f64 = 0.01;
pub const PUSH_MIN_DISP: f64 = 0.045;
pub const OBJECT_RADIUS: f64 = 0.02;
pub const CONTAINER_RADIUS: f64 = 0.04;
pub const EPISODE_BUDGET: u32 = 120;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Shape {
    Cube,
    Sphere,
    Bowl,
    Pot,
}

impl Shape {
    pub fn is_container(self) -> bool {
        matches!(self, Shape::Bowl | Shape::Pot)
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Cube => "cube",
            Shape::Sphere => "sphere",
            Shape::Bowl => "bowl",
            Shape::Pot => "pot",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "cube" => Shape::Cube,
            "sphere" => Shape::Sphere,
            "bowl" => Shape::Bowl,
            "pot" => Shape::Pot,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ColorName {
    Red,
    Green,
    Blue,
    Yellow,
    Cyan,
    Magenta,
    Gray,
    Orange,
    Purple,
}

impl ColorName {
    pub fn rgb(self) -> [u8; 3] {
        match self {
            ColorName::Red => [210, 60, 50],
            ColorName::Green => [70, 200, 70],
            ColorName::Blue => [70, 90, 220],
            ColorName::Yellow => [230, 220, 70],
            ColorName::Cyan => [60, 210, 210],
            ColorName::Magenta => [210, 60, 210],
            ColorName::Gray => [140, 140, 140],
            ColorName::Orange => [235, 140, 40],
            ColorName::Purple => [150, 60, 200],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ColorName::Red => "red",
            ColorName::Green => "green",
            ColorName::Blue => "blue",
            ColorName::Yellow => "yellow",
            ColorName::Cyan => "cyan",
            ColorName::Magenta => "magenta",
            ColorName::Gray => "gray",
            ColorName::Orange => "orange",
            ColorName::Purple => "purple",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "red" => ColorName::Red,
            "green" => ColorName::Green,
            "blue" => ColorName::Blue,
            "yellow" => ColorName::Yellow,
            "cyan" => ColorName::Cyan,
            "magenta" => ColorName::Magenta,
            "gray" => ColorName::Gray,
            "orange" => ColorName::Orange,
            "purple" => ColorName::Purple,
            _ => return None,
        })
    }
}

/// Free-object colors seen during training.
pub const TRAIN_FREE_COLORS: [ColorName; 4] =
    [ColorName::Red, ColorName::Green, ColorName::Blue, ColorName::Yellow];
/// Free-object colors held out for the unseen-object evaluation.
pub const UNSEEN_FREE_COLORS: [ColorName; 2] = [ColorName::Cyan, ColorName::Magenta];
pub const TRAIN_CONTAINER_COLORS: [ColorName; 2] = [ColorName::Gray, ColorName::Orange];
pub const UNSEEN_CONTAINER_COLORS: [ColorName; 1] = [ColorName::Purple];
pub const FREE_SHAPES: [Shape; 2] = [Shape::Cube, Shape::Sphere];

/// Shape + color pair identifying an object class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Descriptor {
    pub shape: Shape,
    pub color: ColorName,
}

impl Descriptor {
    pub fn new(color: ColorName, shape: Shape) -> Self {
        Descriptor { shape, color }
    }

    pub fn label(&self) -> String {
        format!("{}_{}", self.color.name(), self.shape.name())
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (c, sh) = s.split_once('_')?;
        Some(Descriptor { color: ColorName::parse(c)?, shape: Shape::parse(sh)? })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    PickPlace,
    Poke,
    Stack,
    Push,
    Pick,
    OpenClose,
}

impl Primitive {
    pub fn name(self) -> &'static str {
        match self {
            Primitive::PickPlace => "pick_place",
            Primitive::Poke => "poke",
            Primitive::Stack => "stack",
            Primitive::Push => "push",
            Primitive::Pick => "pick",
            Primitive::OpenClose => "open_close",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "pick_place" => Primitive::PickPlace,
            "poke" => Primitive::Poke,
            "stack" => Primitive::Stack,
            "push" => Primitive::Push,
            "pick" => Primitive::Pick,
            "open_close" => Primitive::OpenClose,
            _ => return None,
        })
    }

    pub fn needs_place_target(self) -> bool {
        matches!(self, Primitive::PickPlace | Primitive::Stack)
    }
}

/// A task is a motion primitive plus the object set it acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TaskSpec {
    pub primitive: Primitive,
    pub target: Descriptor,
    pub place_target: Option<Descriptor>,
    /// Scene carries two route-waypoint markers (the multi-modal task).
    pub waypoints: bool,
}

impl TaskSpec {
    pub fn new(primitive: Primitive, target: Descriptor, place_target: Option<Descriptor>) -> Result<Self> {
        if primitive.needs_place_target() != place_target.is_some() {
            return Err(Error::Config(format!(
                "{} requires place_target iff pick_place/stack",
                primitive.name()
            )));
        }
        Ok(TaskSpec { primitive, target, place_target, waypoints: false })
    }

    pub fn with_waypoints(mut self) -> Self {
        self.waypoints = true;
        self
    }

    pub fn label(&self) -> String {
        let mut s = format!("{}:{}", self.primitive.name(), self.target.label());
        if let Some(p) = &self.place_target {
            s.push('>');
            s.push_str(&p.label());
        }
        if self.waypoints {
            s.push_str(":wp");
        }
        s
    }

    pub fn parse(label: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unparseable task label '{label}'"));
        let (mut body, waypoints) = match label.strip_suffix(":wp") {
            Some(b) => (b, true),
            None => (label, false),
        };
        let (prim_s, rest) = body.split_once(':').ok_or_else(bad)?;
        body = rest;
        let primitive = Primitive::parse(prim_s).ok_or_else(bad)?;
        let (target_s, place_s) = match body.split_once('>') {
            Some((t, p)) => (t, Some(p)),
            None => (body, None),
        };
        let target = Descriptor::parse(target_s).ok_or_else(bad)?;
        let place_target = match place_s {
            Some(p) => Some(Descriptor::parse(p).ok_or_else(bad)?),
            None => None,
        };
        let mut spec = TaskSpec::new(primitive, target, place_target)?;
        spec.waypoints = waypoints;
        Ok(spec)
    }
}

#[derive(Clone, Debug)]
pub struct SceneObject {
    pub id: u32,
    pub shape: Shape,
    pub color: ColorName,
    pub position: Vec3,
    pub start_position: Vec3,
    /// Cumulative displacement while contacted by a closed gripper.
    pub closed_disp: f64,
    pub pot_open: bool,
    pub pot_toggles: u32,
}

impl SceneObject {
    pub fn descriptor(&self) -> Descriptor {
        Descriptor { shape: self.shape, color: self.color }
    }

    pub fn is_free(&self) -> bool {
        !self.shape.is_container()
    }
}

#[derive(Clone, Debug)]
pub struct SimScene {
    pub objects: Vec<SceneObject>,
    pub containers: Vec<u32>,
    pub gripper: Pose,
    pub open_frac: f64,
    pub held: Option<u32>,
    pub rng_seed: u64,
    pub step_count: u32,
    pub budget: u32,
    pub gripper_start: Pose,
    pub ever_held: Vec<u32>,
    /// Route marker positions (left, right) when the task carries waypoints.
    pub waypoints: Option<[Vec3; 2]>,
}

#[derive(Clone, Debug)]
pub struct Observation {
    pub side: Vec<u8>,
    pub wrist: Vec<u8>,
    pub proprio: ProprioVec,
}

impl SimScene {
    pub fn object(&self, id: u32) -> &SceneObject {
        &self.objects[id as usize]
    }

    pub fn find(&self, d: &Descriptor) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.descriptor() == *d)
    }

    pub fn observe(&self) -> Observation {
        Observation {
            side: render(self, Camera::Side),
            wrist: render(self, Camera::Wrist),
            proprio: proprio_encode(&self.gripper, self.open_frac)
                .expect("gripper pose stays orthonormal"),
        }
    }
}

fn xy_dist(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn dist3(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Distractor counts per tier. Tier 5 of pick_place adds a distractor
/// placement (second container) instead of another object.
fn tier_distractors(primitive: Primitive, tier: u32) -> Result<usize> {
    if !(1..=5).contains(&tier) {
        return Err(Error::BadTier { tier, primitive: primitive.name().to_string() });
    }
    Ok(match primitive {
        Primitive::PickPlace => {
            if tier == 5 {
                0
            } else {
                tier as usize - 1
            }
        }
        _ => tier as usize - 1,
    })
}

fn sample_position(rng: &mut ChaCha8Rng, margin: f64) -> Vec3 {
    let lim = WORKSPACE_HALF - margin;
    [rng.random_range(-lim..lim), rng.random_range(-lim..lim), 0.0]
}

/// Minimum separation between two placed things, by kind.
fn min_sep(a_container: bool, b_container: bool) -> f64 {
    match (a_container, b_container) {
        (true, true) => 0.11,
        (true, false) | (false, true) => 0.085,
        (false, false) => 0.06,
    }
}

/// Builds a tiered scene for a task. Same seed, same scene.
pub fn reset_scene(task: &TaskSpec, tier: u32, seed: u64) -> Result<SimScene> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_distract = tier_distractors(task.primitive, tier)?;

    // Descriptor plan: target, optional place/base, distractors, waypoint markers.
    let mut descriptors: Vec<Descriptor> = vec![task.target];
    if let Some(p) = task.place_target {
        descriptors.push(p);
    }
    let mut used: Vec<Descriptor> = descriptors.clone();
    let mut free_pool: Vec<Descriptor> = TRAIN_FREE_COLORS
        .iter()
        .flat_map(|&c| FREE_SHAPES.iter().map(move |&s| Descriptor::new(c, s)))
        .filter(|d| !used.contains(d))
        .collect();
    for _ in 0..n_distract {
        if free_pool.is_empty() {
            return Err(Error::Config("distractor palette exhausted".into()));
        }
        let idx = rng.random_range(0..free_pool.len());
        let d = free_pool.swap_remove(idx);
        used.push(d);
        descriptors.push(d);
    }
    if task.primitive == Primitive::PickPlace && tier == 5 {
        // distractor placement: a container of a different color
        let place = task.place_target.expect("pick_place has a place target");
        let colors: Vec<ColorName> = TRAIN_CONTAINER_COLORS
            .iter()
            .chain(UNSEEN_CONTAINER_COLORS.iter())
            .copied()
            .filter(|&c| c != place.color)
            .collect();
        let color = colors[rng.random_range(0..colors.len())];
        let shape = if rng.random_bool(0.5) { Shape::Bowl } else { Shape::Pot };
        descriptors.push(Descriptor::new(color, shape));
    }

    let waypoint_markers = if task.waypoints {
        vec![
            Descriptor::new(ColorName::Orange, Shape::Bowl),
            Descriptor::new(ColorName::Gray, Shape::Bowl),
        ]
    } else {
        vec![]
    };

    // Placement with rejection sampling against pairwise separation.
    let mut placed: Vec<(Descriptor, Vec3)> = Vec::new();
    if task.waypoints {
        // Fixed layout with jitter: markers flank the center, target sits in
        // the top band, gripper starts at the bottom.
        let jit = |rng: &mut ChaCha8Rng| rng.random_range(-0.012..0.012);
        placed.push((waypoint_markers[0], [-0.08 + jit(&mut rng), jit(&mut rng), 0.0]));
        placed.push((waypoint_markers[1], [0.08 + jit(&mut rng), jit(&mut rng), 0.0]));
        let tx = rng.random_range(-0.05..0.05);
        let ty = rng.random_range(0.09..0.14);
        placed.push((task.target, [tx, ty, 0.0]));
        // any remaining descriptors (distractors) go in the top band too
        for d in descriptors.iter().skip(1) {
            let mut ok = false;
            for _ in 0..1000 {
                let p = [rng.random_range(-0.14..0.14), rng.random_range(0.05..0.14), 0.0];
                if placed.iter().all(|(pd, pp)| {
                    xy_dist(&p, pp) >= min_sep(d.shape.is_container(), pd.shape.is_container())
                }) {
                    placed.push((*d, p));
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(Error::PlacementFailed { attempts: 1000 });
            }
        }
    } else {
        for d in &descriptors {
            let margin = if d.shape.is_container() { CONTAINER_RADIUS } else { OBJECT_RADIUS + 0.02 };
            let mut ok = false;
            for _ in 0..1000 {
                let p = sample_position(&mut rng, margin);
                if placed.iter().all(|(pd, pp)| {
                    xy_dist(&p, pp) >= min_sep(d.shape.is_container(), pd.shape.is_container())
                }) {
                    placed.push((*d, p));
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Err(Error::PlacementFailed { attempts: 1000 });
            }
        }
    }

    let mut objects = Vec::new();
    let mut containers = Vec::new();
    let mut waypoints = None;
    if task.waypoints {
        waypoints = Some([placed[0].1, placed[1].1]);
    }
    for (d, p) in &placed {
        let id = objects.len() as u32;
        if d.shape.is_container() {
            containers.push(id);
        }
        objects.push(SceneObject {
            id,
            shape: d.shape,
            color: d.color,
            position: *p,
            start_position: *p,
            closed_disp: 0.0,
            pot_open: false,
            pot_toggles: 0,
        });
    }

    let gripper_t: Vec3 = if task.waypoints {
        [rng.random_range(-0.03..0.03), rng.random_range(-0.14..-0.10), 0.10]
    } else {
        let mut t;
        loop {
            t = [rng.random_range(-0.14..0.14), rng.random_range(-0.14..0.14), 0.10];
            // keep the start clear of container tops so the first frames read cleanly
            if objects.iter().all(|o| xy_dist(&t, &o.position) > 0.05) {
                break;
            }
        }
        t
    };
    let gripper = Pose::from_translation(gripper_t);

    Ok(SimScene {
        objects,
        containers,
        gripper,
        open_frac: 1.0,
        held: None,
        rng_seed: seed,
        step_count: 0,
        budget: EPISODE_BUDGET,
        gripper_start: gripper,
        ever_held: Vec::new(),
        waypoints,
    })
}

/// Kinematic step: clamp the commanded translation to 3 cm, update the
/// gripper, process grasp/release transitions, pushed contacts, and pot
/// presses. Pure in (scene, action).
pub fn step(scene: &SimScene, action: &ActionVec) -> Result<(SimScene, Observation, bool)> {
    if !action.0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("action".into()));
    }
    let mut s = scene.clone();

    // clamp translation magnitude, then apply the SE(3) delta
    let mut a = *action;
    let t = action.translation();
    let n = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
    if n > STEP_CLAMP {
        let k = STEP_CLAMP / n;
        a.0[0] *= k;
        a.0[1] *= k;
        a.0[2] *= k;
    }
    let prev_z = s.gripper.translation[2];
    let (mut pose, grip_cmd) = apply_action(&s.gripper, &a)?;
    pose.translation[0] = pose.translation[0].clamp(-WORKSPACE_HALF, WORKSPACE_HALF);
    pose.translation[1] = pose.translation[1].clamp(-WORKSPACE_HALF, WORKSPACE_HALF);
    pose.translation[2] = pose.translation[2].clamp(0.0, Z_MAX);
    s.gripper = pose;

    let prev_open = s.open_frac;
    let new_open = grip_cmd.clamp(0.0, 1.0);
    s.open_frac = new_open;
    let closed = new_open < 0.5;

    // grasp on the closing transition
    if prev_open >= 0.5 && closed && s.held.is_none() {
        let gp = s.gripper.translation;
        let grabbed = s
            .objects
            .iter()
            .filter(|o| o.is_free())
            .map(|o| (o.id, dist3(&gp, &o.position)))
            .filter(|(_, d)| *d <= GRASP_RADIUS)
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if let Some((id, _)) = grabbed {
            s.held = Some(id);
            if !s.ever_held.contains(&id) {
                s.ever_held.push(id);
            }
        }
    }

    // release on the opening transition
    if prev_open < 0.5 && !closed {
        if let Some(id) = s.held.take() {
            let gp = s.gripper.translation;
            let snap = s
                .containers
                .iter()
                .map(|&c| (c, xy_dist(&gp, &s.objects[c as usize].position)))
                .filter(|(_, d)| *d <= SNAP_RADIUS)
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            let stack_base = s
                .objects
                .iter()
                .filter(|o| o.is_free() && o.id != id)
                .map(|o| (o.id, xy_dist(&gp, &o.position)))
                .filter(|(_, d)| *d <= STACK_RADIUS)
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            let obj = &mut s.objects[id as usize];
            if let Some((c, _)) = snap {
                let cp = scene.objects[c as usize].position;
                obj.position = [cp[0], cp[1], 0.0];
            } else if let Some((b, _)) = stack_base {
                let bp = scene.objects[b as usize].position;
                obj.position = [bp[0], bp[1], STACK_HEIGHT];
            } else {
                obj.position = [gp[0], gp[1], 0.0];
            }
        }
    }

    // held object tracks the gripper
    if let Some(id) = s.held {
        s.objects[id as usize].position = s.gripper.translation;
    }

    // closed-gripper contact pushes free objects out of the contact disk
    if closed && s.held.is_none() && s.gripper.translation[2] <= CONTACT_Z {
        let gp = s.gripper.translation;
        for obj in s.objects.iter_mut().filter(|o| o.is_free()) {
            let d = xy_dist(&gp, &obj.position);
            if d < CONTACT_RADIUS {
                let dir = if d > 1e-9 {
                    [(obj.position[0] - gp[0]) / d, (obj.position[1] - gp[1]) / d]
                } else {
                    [1.0, 0.0]
                };
                let old = obj.position;
                obj.position[0] =
                    (gp[0] + dir[0] * CONTACT_RADIUS).clamp(-WORKSPACE_HALF, WORKSPACE_HALF);
                obj.position[1] =
                    (gp[1] + dir[1] * CONTACT_RADIUS).clamp(-WORKSPACE_HALF, WORKSPACE_HALF);
                obj.closed_disp += xy_dist(&old, &obj.position);
            }
        }
    }

    // pressing down on a pot with a closed gripper toggles its lid state
    if closed && s.held.is_none() && prev_z > CONTACT_Z && s.gripper.translation[2] <= CONTACT_Z {
        let gp = s.gripper.translation;
        for obj in s.objects.iter_mut().filter(|o| o.shape == Shape::Pot) {
            if xy_dist(&gp, &obj.position) <= SNAP_RADIUS {
                obj.pot_open = !obj.pot_open;
                obj.pot_toggles += 1;
            }
        }
    }

    s.step_count += 1;
    let done = s.step_count >= s.budget;
    let obs = s.observe();
    Ok((s, obs, done))
}

/// Partial-credit scoring.
///
/// pick_place: 0.5 for having held the right object, 1.0 if it ends inside
/// the right container. poke: 1 iff the target was displaced >= 1 cm by a
/// closed gripper and no wrong object was; any wrong poke fails the trial.
pub fn evaluate_success(final_scene: &SimScene, task: &TaskSpec) -> f64 {
    let Some(target) = final_scene.find(&task.target) else { return 0.0 };
    match task.primitive {
        Primitive::PickPlace => {
            let place = task
                .place_target
                .as_ref()
                .and_then(|d| final_scene.find(d));
            let placed = place.is_some_and(|c| {
                xy_dist(&target.position, &c.position) <= SNAP_RADIUS
                    && final_scene.held != Some(target.id)
            });
            if placed {
                1.0
            } else if final_scene.ever_held.contains(&target.id) {
                0.5
            } else {
                0.0
            }
        }
        Primitive::Poke => {
            let wrong_poked = final_scene
                .objects
                .iter()
                .any(|o| o.is_free() && o.id != target.id && o.closed_disp >= POKE_MIN_DISP);
            if wrong_poked {
                0.0
            } else if target.closed_disp >= POKE_MIN_DISP {
                1.0
            } else {
                0.0
            }
        }
        Primitive::Stack => {
            let base = task.place_target.as_ref().and_then(|d| final_scene.find(d));
            let ok = base.is_some_and(|b| {
                xy_dist(&target.position, &b.position) <= STACK_RADIUS
                    && target.position[2] > 0.02
                    && final_scene.held != Some(target.id)
            });
            if ok {
                1.0
            } else {
                0.0
            }
        }
        Primitive::Push => {
            if target.closed_disp >= PUSH_MIN_DISP {
                1.0
            } else {
                0.0
            }
        }
        Primitive::Pick => {
            if final_scene.held == Some(target.id) && final_scene.gripper.translation[2] >= 0.06 {
                1.0
            } else {
                0.0
            }
        }
        Primitive::OpenClose => {
            if target.pot_toggles >= 2 && !target.pot_open {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Task labels executable in a scene: used to verify the multi-task
/// disambiguation precondition (tier >= 2 scenes admit at least two tasks).
pub fn executable_tasks(scene: &SimScene) -> Vec<String> {
    let mut tasks = Vec::new();
    let frees: Vec<&SceneObject> = scene.objects.iter().filter(|o| o.is_free()).collect();
    for f in &frees {
        tasks.push(format!("poke:{}", f.descriptor().label()));
        tasks.push(format!("pick:{}", f.descriptor().label()));
        tasks.push(format!("push:{}", f.descriptor().label()));
        for c in &scene.containers {
            let cd = scene.objects[*c as usize].descriptor();
            tasks.push(format!("pick_place:{}>{}", f.descriptor().label(), cd.label()));
        }
        for g in &frees {
            if g.id != f.id {
                tasks.push(format!("stack:{}>{}", f.descriptor().label(), g.descriptor().label()));
            }
        }
    }
    for c in &scene.containers {
        let o = &scene.objects[*c as usize];
        if o.shape == Shape::Pot {
            tasks.push(format!("open_close:{}", o.descriptor().label()));
        }
    }
    tasks.sort();
    tasks.dedup();
    tasks
}

/// The default multi-task training set: 10 tasks over all 6 primitives, with
/// overlapping target objects so scenes stay ambiguous without a prompt.
pub fn default_train_tasks() -> Vec<TaskSpec> {
    let d = Descriptor::new;
    let t = |p, tg, pl: Option<Descriptor>| TaskSpec::new(p, tg, pl).expect("valid task");
    vec![
        t(Primitive::PickPlace, d(ColorName::Red, Shape::Cube), Some(d(ColorName::Gray, Shape::Bowl))),
        t(Primitive::PickPlace, d(ColorName::Green, Shape::Sphere), Some(d(ColorName::Orange, Shape::Pot))),
        t(Primitive::PickPlace, d(ColorName::Blue, Shape::Cube), Some(d(ColorName::Gray, Shape::Bowl))),
        t(Primitive::Poke, d(ColorName::Yellow, Shape::Sphere), None),
        t(Primitive::Poke, d(ColorName::Green, Shape::Cube), None),
        t(Primitive::Poke, d(ColorName::Blue, Shape::Cube), None),
        t(Primitive::Stack, d(ColorName::Yellow, Shape::Cube), Some(d(ColorName::Red, Shape::Cube))),
        t(Primitive::Push, d(ColorName::Green, Shape::Sphere), None),
        t(Primitive::Pick, d(ColorName::Yellow, Shape::Cube), None).with_waypoints(),
        t(Primitive::OpenClose, d(ColorName::Orange, Shape::Pot), None),
    ]
}

/// In-domain evaluation tasks (a subset of the training tasks).
pub fn in_domain_eval_tasks() -> (Vec<TaskSpec>, Vec<TaskSpec>) {
    let all = default_train_tasks();
    let pick_place = all.iter().filter(|t| t.primitive == Primitive::PickPlace).copied().collect();
    let poke = all.iter().filter(|t| t.primitive == Primitive::Poke).copied().collect();
    (pick_place, poke)
}

/// Held-out-object tasks (colors never seen in training).
pub fn unseen_object_tasks() -> (Vec<TaskSpec>, Vec<TaskSpec>) {
    let d = Descriptor::new;
    let t = |p, tg, pl: Option<Descriptor>| TaskSpec::new(p, tg, pl).expect("valid task");
    let pick_place = vec![
        t(Primitive::PickPlace, d(ColorName::Cyan, Shape::Cube), Some(d(ColorName::Purple, Shape::Bowl))),
        t(Primitive::PickPlace, d(ColorName::Magenta, Shape::Sphere), Some(d(ColorName::Purple, Shape::Bowl))),
        t(Primitive::PickPlace, d(ColorName::Cyan, Shape::Sphere), Some(d(ColorName::Purple, Shape::Pot))),
    ];
    let poke = vec![
        t(Primitive::Poke, d(ColorName::Magenta, Shape::Cube), None),
        t(Primitive::Poke, d(ColorName::Cyan, Shape::Sphere), None),
        t(Primitive::Poke, d(ColorName::Magenta, Shape::Sphere), None),
    ];
    (pick_place, poke)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pick_place_task() -> TaskSpec {
        TaskSpec::new(
            Primitive::PickPlace,
            Descriptor::new(ColorName::Red, Shape::Cube),
            Some(Descriptor::new(ColorName::Gray, Shape::Bowl)),
        )
        .unwrap()
    }

    #[test]
    fn task_label_round_trip() {
        for t in default_train_tasks() {
            assert_eq!(TaskSpec::parse(&t.label()).unwrap(), t);
        }
    }

    #[test]
    fn task_place_target_invariant() {
        assert!(TaskSpec::new(
            Primitive::Poke,
            Descriptor::new(ColorName::Red, Shape::Cube),
            Some(Descriptor::new(ColorName::Gray, Shape::Bowl))
        )
        .is_err());
        assert!(TaskSpec::new(Primitive::PickPlace, Descriptor::new(ColorName::Red, Shape::Cube), None)
            .is_err());
    }

    #[test]
    fn reset_tier1_pick_place_has_one_object_one_container() {
        let scene = reset_scene(&pick_place_task(), 1, 7).unwrap();
        assert_eq!(scene.objects.iter().filter(|o| o.is_free()).count(), 1);
        assert_eq!(scene.containers.len(), 1);
    }

    #[test]
    fn reset_tier5_poke_has_four_distractors() {
        let task =
            TaskSpec::new(Primitive::Poke, Descriptor::new(ColorName::Yellow, Shape::Sphere), None)
                .unwrap();
        let scene = reset_scene(&task, 5, 11).unwrap();
        assert_eq!(scene.objects.iter().filter(|o| o.is_free()).count(), 5);
    }

    #[test]
    fn reset_tier5_pick_place_adds_distractor_container_of_other_color() {
        let scene = reset_scene(&pick_place_task(), 5, 3).unwrap();
        assert_eq!(scene.containers.len(), 2);
        let colors: Vec<ColorName> =
            scene.containers.iter().map(|&c| scene.objects[c as usize].color).collect();
        assert!(colors.contains(&ColorName::Gray));
        assert_ne!(colors[0], colors[1]);
    }

    #[test]
    fn reset_deterministic() {
        let a = reset_scene(&pick_place_task(), 3, 42).unwrap();
        let b = reset_scene(&pick_place_task(), 3, 42).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn reset_rejects_bad_tier() {
        assert!(matches!(reset_scene(&pick_place_task(), 0, 1), Err(Error::BadTier { .. })));
        assert!(matches!(reset_scene(&pick_place_task(), 6, 1), Err(Error::BadTier { .. })));
    }

    #[test]
    fn multi_task_property_tier2_and_up() {
        for task in default_train_tasks() {
            for tier in 2..=5 {
                for seed in 0..5 {
                    let scene = reset_scene(&task, tier, 1000 + seed).unwrap();
                    let tasks = executable_tasks(&scene);
                    assert!(tasks.len() >= 2, "{} tier {tier}: {tasks:?}", task.label());
                }
            }
        }
    }

    #[test]
    fn zero_action_only_bumps_step_counter() {
        let scene = reset_scene(&pick_place_task(), 2, 5).unwrap();
        let (s2, _, done) = step(&scene, &ActionVec::rest(1.0)).unwrap();
        assert!(!done);
        assert_eq!(s2.step_count, 1);
        assert_eq!(s2.gripper, scene.gripper);
        for (a, b) in scene.objects.iter().zip(&s2.objects) {
            assert_eq!(a.position, b.position);
        }
    }

    #[test]
    fn step_rejects_non_finite_action() {
        let scene = reset_scene(&pick_place_task(), 1, 5).unwrap();
        let mut a = ActionVec::rest(1.0);
        a.0[0] = f64::NAN;
        assert!(step(&scene, &a).is_err());
    }

    #[test]
    fn step_clamps_translation_to_3cm() {
        let scene = reset_scene(&pick_place_task(), 1, 5).unwrap();
        let mut a = ActionVec::rest(1.0);
        a.0[0] = 1.0; // 1 m requested
        let (s2, _, _) = step(&scene, &a).unwrap();
        let moved = s2.gripper.translation[0] - scene.gripper.translation[0];
        assert!(moved <= STEP_CLAMP + 1e-12 && moved > 0.02);
    }

    #[test]
    fn grasp_when_closing_one_cm_above_object() {
        let mut scene = reset_scene(&pick_place_task(), 1, 5).unwrap();
        let target = scene.find(&pick_place_task().target).unwrap();
        let tp = target.position;
        let tid = target.id;
        scene.gripper.translation = [tp[0], tp[1], 0.01];
        let (s2, _, _) = step(&scene, &ActionVec::rest(0.0)).unwrap();
        assert_eq!(s2.held, Some(tid));
        // held object tracks the gripper afterwards
        let mut up = ActionVec::rest(0.0);
        up.0[2] = 0.03;
        let (s3, _, _) = step(&s2, &up).unwrap();
        assert!((s3.objects[tid as usize].position[2] - 0.04).abs() < 1e-9);
    }

    #[test]
    fn release_above_bowl_snaps_object_into_it() {
        let task = pick_place_task();
        let mut scene = reset_scene(&task, 1, 5).unwrap();
        let tid = scene.find(&task.target).unwrap().id;
        let bowl = scene.objects[scene.containers[0] as usize].position;
        let tp = scene.objects[tid as usize].position;
        scene.gripper.translation = [tp[0], tp[1], 0.01];
        let (s, _, _) = step(&scene, &ActionVec::rest(0.0)).unwrap();
        assert_eq!(s.held, Some(tid));
        // teleport-ish transport in several steps
        let mut s = s;
        for _ in 0..40 {
            let g = s.gripper.translation;
            let mut a = ActionVec::rest(0.0);
            a.0[0] = bowl[0] - g[0];
            a.0[1] = bowl[1] - g[1];
            a.0[2] = 0.08 - g[2];
            s = step(&s, &a).unwrap().0;
        }
        let (s, _, _) = step(&s, &ActionVec::rest(1.0)).unwrap();
        assert_eq!(s.held, None);
        let op = s.objects[tid as usize].position;
        assert_eq!([op[0], op[1]], [bowl[0], bowl[1]]);
        assert_eq!(evaluate_success(&s, &task), 1.0);
    }

    #[test]
    fn poke_scoring_wrong_object_fails() {
        let task =
            TaskSpec::new(Primitive::Poke, Descriptor::new(ColorName::Yellow, Shape::Sphere), None)
                .unwrap();
        let mut scene = reset_scene(&task, 3, 9).unwrap();
        let target_id = scene.find(&task.target).unwrap().id;
        // fake bookkeeping: wrong object displaced by closed contact
        let wrong = scene.objects.iter().position(|o| o.is_free() && o.id != target_id).unwrap();
        scene.objects[wrong].closed_disp = 0.02;
        scene.objects[target_id as usize].closed_disp = 0.05;
        assert_eq!(evaluate_success(&scene, &task), 0.0);
        scene.objects[wrong].closed_disp = 0.0;
        assert_eq!(evaluate_success(&scene, &task), 1.0);
    }

    #[test]
    fn pick_place_partial_credit() {
        let task = pick_place_task();
        let mut scene = reset_scene(&task, 1, 5).unwrap();
        assert_eq!(evaluate_success(&scene, &task), 0.0);
        let tid = scene.find(&task.target).unwrap().id;
        scene.ever_held.push(tid);
        assert_eq!(evaluate_success(&scene, &task), 0.5);
    }

    #[test]
    fn closed_gripper_contact_pushes_object() {
        let task =
            TaskSpec::new(Primitive::Poke, Descriptor::new(ColorName::Yellow, Shape::Sphere), None)
                .unwrap();
        let mut scene = reset_scene(&task, 1, 5).unwrap();
        let tid = scene.find(&task.target).unwrap().id;
        let tp = scene.objects[tid as usize].position;
        scene.gripper.translation = [tp[0] - 0.05, tp[1], 0.015];
        scene.open_frac = 0.0; // already closed
        let mut s = scene;
        for _ in 0..4 {
            let mut a = ActionVec::rest(0.0);
            a.0[0] = 0.03;
            s = step(&s, &a).unwrap().0;
        }
        assert!(s.objects[tid as usize].closed_disp >= POKE_MIN_DISP);
        assert_eq!(evaluate_success(&s, &task), 1.0);
    }

    #[test]
    fn budget_reaches_done() {
        let scene = reset_scene(&pick_place_task(), 1, 5).unwrap();
        let mut s = scene;
        let mut done = false;
        for _ in 0..EPISODE_BUDGET {
            let r = step(&s, &ActionVec::rest(1.0)).unwrap();
            s = r.0;
            done = r.2;
        }
        assert!(done);
    }
}
