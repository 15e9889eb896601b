//! Scripted waypoint experts for every primitive.
//!
//! Each expert is a feedback controller over the live scene: approach above
//! the target, descend, grasp or poke, then transport/retreat. Poke-family
//! primitives plan a contact corridor at episode start and return the
//! gripper to its start pose when finished, so the post-episode observation
//! stays close to the initial one.

use super::{
    evaluate_success, Primitive, SimScene, TaskSpec, CONTACT_RADIUS, POKE_MIN_DISP, PUSH_MIN_DISP,
    STEP_CLAMP, WORKSPACE_HALF,
};
use crate::error::{Error, Result};
use crate::geom::{ActionVec, Vec3};

const APPROACH_Z: f64 = 0.08;
const CARRY_Z: f64 = 0.08;
const GRASP_Z: f64 = 0.005;
const POKE_Z: f64 = 0.015;
const PRESS_Z: f64 = 0.015;
const XY_TOL: f64 = 0.010;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ExpertOptions {
    /// Force the waypoint route on two-mode scenes; defaults to a
    /// seed-derived choice so demonstrations cover both modes.
    pub route: Option<Route>,
}

pub struct Expert {
    task: TaskSpec,
    target_id: u32,
    place_id: Option<u32>,
    poke_dir: Option<[f64; 2]>,
    route: Option<Route>,
    waypoint_visited: bool,
    relifted: bool,
}

fn xy_dist(a: &Vec3, b: &Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Bounded step toward a world point, identity rotation, given gripper command.
fn toward(from: &Vec3, to: &Vec3, gripper: f64) -> ActionVec {
    let mut d = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if n > STEP_CLAMP {
        let k = STEP_CLAMP / n;
        d = [d[0] * k, d[1] * k, d[2] * k];
    }
    let mut a = ActionVec::rest(gripper);
    a.0[0] = d[0];
    a.0[1] = d[1];
    a.0[2] = d[2];
    a
}

fn point_segment_dist(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 < 1e-12 { 0.0 } else { ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0) };
    let c = [a[0] + t * ab[0], a[1] + t * ab[1]];
    ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt()
}

/// Pick a contact direction whose descent point and push corridor stay clear
/// of every other object. Candidates are ordered by closeness to the
/// natural approach direction (start -> target), so the chosen corridor is
/// predictable from the scene.
fn plan_contact_dir(scene: &SimScene, target_id: u32, reach: f64) -> [f64; 2] {
    let t = &scene.objects[target_id as usize].position;
    let s = &scene.gripper_start.translation;
    let base_angle = (t[1] - s[1]).atan2(t[0] - s[0]);
    let mut candidates: Vec<(f64, [f64; 2])> = (0..16)
        .map(|i| {
            let ang = base_angle + i as f64 * std::f64::consts::PI / 8.0;
            (i as f64, [ang.cos(), ang.sin()])
        })
        .collect();
    // stable preference order: small angular deviation first
    candidates.sort_by(|a, b| {
        let ka = (a.0 / 2.0).ceil() + if a.0 % 2.0 == 0.0 { 0.0 } else { 0.25 };
        let kb = (b.0 / 2.0).ceil() + if b.0 % 2.0 == 0.0 { 0.0 } else { 0.25 };
        ka.partial_cmp(&kb).unwrap()
    });

    let clearance = |dir: &[f64; 2]| -> f64 {
        let start = [t[0] - dir[0] * 0.05, t[1] - dir[1] * 0.05];
        if start[0].abs() > WORKSPACE_HALF - 0.01 || start[1].abs() > WORKSPACE_HALF - 0.01 {
            return f64::NEG_INFINITY;
        }
        let end = [t[0] + dir[0] * reach, t[1] + dir[1] * reach];
        let mut worst = f64::INFINITY;
        for o in &scene.objects {
            if o.id == target_id {
                continue;
            }
            let p = [o.position[0], o.position[1]];
            worst = worst.min(point_segment_dist(p, start, end));
        }
        worst
    };

    let mut best = candidates[0].1;
    let mut best_c = f64::NEG_INFINITY;
    for (_, dir) in &candidates {
        let c = clearance(dir);
        if c >= CONTACT_RADIUS + 0.015 {
            return *dir;
        }
        if c > best_c {
            best_c = c;
            best = *dir;
        }
    }
    best
}

impl Expert {
    pub fn new(scene: &SimScene, task: &TaskSpec, opts: ExpertOptions) -> Result<Self> {
        let target_id = scene
            .find(&task.target)
            .map(|o| o.id)
            .ok_or_else(|| Error::TargetNotFound(task.target.label()))?;
        let place_id = match &task.place_target {
            Some(d) => {
                Some(scene.find(d).map(|o| o.id).ok_or_else(|| Error::TargetNotFound(d.label()))?)
            }
            None => None,
        };
        let poke_dir = match task.primitive {
            Primitive::Poke => Some(plan_contact_dir(scene, target_id, 0.03)),
            Primitive::Push => Some(plan_contact_dir(scene, target_id, 0.08)),
            _ => None,
        };
        let route = if task.waypoints {
            Some(opts.route.unwrap_or(if scene.rng_seed.wrapping_mul(0x9E3779B9) & 2 == 0 {
                Route::Left
            } else {
                Route::Right
            }))
        } else {
            None
        };
        Ok(Expert {
            task: *task,
            target_id,
            place_id,
            poke_dir,
            route,
            waypoint_visited: false,
            relifted: false,
        })
    }

    pub fn route(&self) -> Option<Route> {
        self.route
    }

    /// Success plus "expert has parked": safe to stop recording.
    pub fn is_done(&self, scene: &SimScene) -> bool {
        if evaluate_success(scene, &self.task) < 1.0 {
            return false;
        }
        let g = &scene.gripper.translation;
        match self.task.primitive {
            Primitive::Poke | Primitive::Push | Primitive::OpenClose => {
                let rest = &scene.gripper_start.translation;
                scene.open_frac >= 0.5 && xy_dist(g, rest) <= 0.02 && g[2] >= CARRY_Z - 0.02
            }
            _ => true,
        }
    }

    pub fn next(&mut self, scene: &SimScene) -> ActionVec {
        match self.task.primitive {
            Primitive::PickPlace => self.next_pick_place(scene),
            Primitive::Poke => self.next_contact(scene, POKE_MIN_DISP + 0.005, 0.02),
            Primitive::Push => self.next_contact(scene, PUSH_MIN_DISP + 0.008, 0.03),
            Primitive::Stack => self.next_stack(scene),
            Primitive::Pick => self.next_pick(scene),
            Primitive::OpenClose => self.next_open_close(scene),
        }
    }

    fn next_pick_place(&mut self, scene: &SimScene) -> ActionVec {
        let g = &scene.gripper.translation;
        let place = &scene.objects[self.place_id.unwrap() as usize].position;
        if scene.held == Some(self.target_id) {
            if xy_dist(g, place) > 0.015 {
                return toward(g, &[place[0], place[1], CARRY_Z], 0.0);
            }
            return ActionVec::rest(1.0); // release into the container
        }
        let t = &scene.objects[self.target_id as usize].position;
        if evaluate_success(scene, &self.task) >= 1.0 {
            return ActionVec::rest(1.0); // settle
        }
        self.grasp_approach(scene, t)
    }

    fn next_pick(&mut self, scene: &SimScene) -> ActionVec {
        let g = &scene.gripper.translation;
        if scene.held == Some(self.target_id) {
            if g[2] < 0.095 {
                return toward(g, &[g[0], g[1], 0.10], 0.0);
            }
            return ActionVec::rest(0.0); // settle holding
        }
        if let (Some(route), false) = (self.route, self.waypoint_visited) {
            let wps = scene.waypoints.expect("two-mode scene carries waypoints");
            let wp = match route {
                Route::Left => wps[0],
                Route::Right => wps[1],
            };
            if xy_dist(g, &wp) > 0.02 {
                return toward(g, &[wp[0], wp[1], APPROACH_Z], 1.0);
            }
            self.waypoint_visited = true;
        }
        let t = scene.objects[self.target_id as usize].position;
        self.grasp_approach(scene, &t)
    }

    fn next_stack(&mut self, scene: &SimScene) -> ActionVec {
        let g = &scene.gripper.translation;
        let base = &scene.objects[self.place_id.unwrap() as usize].position;
        if scene.held == Some(self.target_id) {
            if xy_dist(g, base) > 0.012 {
                return toward(g, &[base[0], base[1], CARRY_Z], 0.0);
            }
            return ActionVec::rest(1.0); // release onto the base
        }
        if evaluate_success(scene, &self.task) >= 1.0 {
            return ActionVec::rest(1.0);
        }
        let t = scene.objects[self.target_id as usize].position;
        self.grasp_approach(scene, &t)
    }

    /// Shared open-approach-descend-close sequence for grasping primitives.
    fn grasp_approach(&mut self, scene: &SimScene, t: &Vec3) -> ActionVec {
        let g = &scene.gripper.translation;
        if scene.open_frac < 0.5 {
            return ActionVec::rest(1.0); // empty-closed: reopen and retry
        }
        if xy_dist(g, t) > XY_TOL {
            return toward(g, &[t[0], t[1], APPROACH_Z], 1.0);
        }
        if g[2] > GRASP_Z + 0.003 {
            return toward(g, &[t[0], t[1], GRASP_Z], 1.0);
        }
        ActionVec::rest(0.0) // close: grasp happens on the transition
    }

    /// Poke/push: approach a planned corridor point, close, descend, drive
    /// through the object until it has moved `disp_goal`, then retreat to the
    /// start pose and open.
    fn next_contact(&mut self, scene: &SimScene, disp_goal: f64, overshoot: f64) -> ActionVec {
        let g = &scene.gripper.translation;
        let t = &scene.objects[self.target_id as usize];
        let dir = self.poke_dir.expect("contact primitives plan a direction");
        if t.closed_disp >= disp_goal {
            // retreat: lift closed, return to start, open
            let rest = &scene.gripper_start.translation;
            if g[2] < CARRY_Z - 0.005 {
                return toward(g, &[g[0], g[1], CARRY_Z], 0.0);
            }
            if xy_dist(g, rest) > 0.015 {
                return toward(g, &[rest[0], rest[1], CARRY_Z], 0.0);
            }
            return ActionVec::rest(1.0);
        }
        let approach = [t.position[0] - dir[0] * 0.05, t.position[1] - dir[1] * 0.05, 0.0];
        if scene.open_frac >= 0.5 {
            if xy_dist(g, &approach) > 0.012 {
                return toward(g, &[approach[0], approach[1], APPROACH_Z], 1.0);
            }
            return ActionVec::rest(0.0); // close before contact
        }
        if g[2] > POKE_Z + 0.003 && xy_dist(g, &approach) <= 0.035 {
            return toward(g, &[approach[0], approach[1], POKE_Z], 0.0);
        }
        let through =
            [t.position[0] + dir[0] * overshoot, t.position[1] + dir[1] * overshoot, POKE_Z];
        toward(g, &through, 0.0)
    }

    fn next_open_close(&mut self, scene: &SimScene) -> ActionVec {
        let g = &scene.gripper.translation;
        let pot = &scene.objects[self.target_id as usize];
        let p = &pot.position;
        if pot.pot_toggles >= 2 {
            let rest = &scene.gripper_start.translation;
            if g[2] < CARRY_Z - 0.005 {
                return toward(g, &[g[0], g[1], CARRY_Z], 0.0);
            }
            if xy_dist(g, rest) > 0.015 {
                return toward(g, &[rest[0], rest[1], CARRY_Z], 0.0);
            }
            return ActionVec::rest(1.0);
        }
        if scene.open_frac >= 0.5 {
            if xy_dist(g, p) > 0.012 {
                return toward(g, &[p[0], p[1], APPROACH_Z], 1.0);
            }
            return ActionVec::rest(0.0); // close for pressing
        }
        if pot.pot_toggles == 1 && !self.relifted {
            if g[2] < 0.065 {
                return toward(g, &[p[0], p[1], APPROACH_Z], 0.0);
            }
            self.relifted = true;
        }
        toward(g, &[p[0], p[1], PRESS_Z], 0.0)
    }
}

/// Single-shot expert action for a scene/task pair.
pub fn expert_policy(scene: &SimScene, task: &TaskSpec) -> Result<ActionVec> {
    Ok(Expert::new(scene, task, ExpertOptions::default())?.next(scene))
}
