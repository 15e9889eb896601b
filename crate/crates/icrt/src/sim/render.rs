//! Orthographic top-down painter's rasterizer for the two cameras.
//!
//! The side camera covers the whole workspace; the wrist camera is a
//! fixed-size world window centered at the gripper xy (so it magnifies).

use super::{Shape, SimScene, CONTAINER_RADIUS, OBJECT_RADIUS, WORKSPACE_HALF};

pub const IMG_SIZE: usize = 24;
pub const WRIST_HALF: f64 = 0.09;
const BACKGROUND: [u8; 3] = [28, 28, 34];
const GRIPPER_COLOR: [u8; 3] = [255, 255, 255];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Camera {
    Side,
    Wrist,
}

struct View {
    cx: f64,
    cy: f64,
    half: f64,
    px: usize,
}

impl View {
    fn for_camera(scene: &SimScene, camera: Camera) -> View {
        match camera {
            Camera::Side => View { cx: 0.0, cy: 0.0, half: WORKSPACE_HALF, px: IMG_SIZE },
            Camera::Wrist => View {
                cx: scene.gripper.translation[0],
                cy: scene.gripper.translation[1],
                half: WRIST_HALF,
                px: IMG_SIZE,
            },
        }
    }

    /// World coordinates of a pixel center; +y points up in the image.
    fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        let scale = 2.0 * self.half / self.px as f64;
        let x = self.cx - self.half + (col as f64 + 0.5) * scale;
        let y = self.cy + self.half - (row as f64 + 0.5) * scale;
        (x, y)
    }

    /// Pixel bounding box (row0, row1, col0, col1), clamped, half-open.
    fn bbox(&self, x0: f64, y0: f64, x1: f64, y1: f64) -> (usize, usize, usize, usize) {
        let scale = self.px as f64 / (2.0 * self.half);
        let col0 = ((x0 - (self.cx - self.half)) * scale).floor().max(0.0) as usize;
        let col1 = (((x1 - (self.cx - self.half)) * scale).ceil().min(self.px as f64)) as usize;
        let row0 = (((self.cy + self.half) - y1) * scale).floor().max(0.0) as usize;
        let row1 = ((((self.cy + self.half) - y0) * scale).ceil().min(self.px as f64)) as usize;
        (row0, row1, col0, col1)
    }
}

enum Glyph {
    Square { half: f64 },
    Disk { r: f64 },
    Ring { r_out: f64, r_in: f64 },
    /// Square with a square hole (pots).
    Frame { half: f64, hole: f64 },
}

impl Glyph {
    fn extent(&self) -> f64 {
        match *self {
            Glyph::Square { half } => half,
            Glyph::Disk { r } => r,
            Glyph::Ring { r_out, .. } => r_out,
            Glyph::Frame { half, .. } => half,
        }
    }

    fn contains(&self, dx: f64, dy: f64) -> bool {
        match *self {
            Glyph::Square { half } => dx.abs() <= half && dy.abs() <= half,
            Glyph::Disk { r } => dx * dx + dy * dy <= r * r,
            Glyph::Ring { r_out, r_in } => {
                let d2 = dx * dx + dy * dy;
                d2 <= r_out * r_out && d2 >= r_in * r_in
            }
            Glyph::Frame { half, hole } => {
                dx.abs() <= half && dy.abs() <= half && !(dx.abs() < hole && dy.abs() < hole)
            }
        }
    }
}

fn draw(img: &mut [u8], view: &View, x: f64, y: f64, glyph: &Glyph, color: [u8; 3]) {
    let e = glyph.extent();
    let (r0, r1, c0, c1) = view.bbox(x - e, y - e, x + e, y + e);
    for row in r0..r1 {
        for col in c0..c1 {
            let (px, py) = view.pixel_center(row, col);
            if glyph.contains(px - x, py - y) {
                let o = (row * view.px + col) * 3;
                img[o..o + 3].copy_from_slice(&color);
            }
        }
    }
}

fn object_glyph(shape: Shape, pot_open: bool) -> Glyph {
    match shape {
        Shape::Cube => Glyph::Square { half: OBJECT_RADIUS },
        Shape::Sphere => Glyph::Disk { r: OBJECT_RADIUS },
        Shape::Bowl => Glyph::Ring { r_out: CONTAINER_RADIUS, r_in: 0.018 },
        Shape::Pot => {
            if pot_open {
                Glyph::Frame { half: CONTAINER_RADIUS, hole: 0.024 }
            } else {
                Glyph::Frame { half: CONTAINER_RADIUS, hole: 0.010 }
            }
        }
    }
}

/// Deterministic painter's render: background, containers, free objects,
/// held object, gripper glyph on top.
pub fn render(scene: &SimScene, camera: Camera) -> Vec<u8> {
    let view = View::for_camera(scene, camera);
    let mut img = vec![0u8; view.px * view.px * 3];
    for p in img.chunks_mut(3) {
        p.copy_from_slice(&BACKGROUND);
    }

    let mut order: Vec<u32> = scene.containers.clone();
    order.extend(scene.objects.iter().filter(|o| o.is_free()).map(|o| o.id));
    for id in order {
        if scene.held == Some(id) {
            continue;
        }
        let o = &scene.objects[id as usize];
        draw(
            &mut img,
            &view,
            o.position[0],
            o.position[1],
            &object_glyph(o.shape, o.pot_open),
            o.color.rgb(),
        );
    }
    if let Some(id) = scene.held {
        let o = &scene.objects[id as usize];
        let g = scene.gripper.translation;
        draw(&mut img, &view, g[0], g[1], &object_glyph(o.shape, false), o.color.rgb());
    }

    // gripper: open = four corner dots, closed = solid block
    let g = scene.gripper.translation;
    if scene.open_frac >= 0.5 {
        for (ox, oy) in [(-0.013, -0.013), (-0.013, 0.013), (0.013, -0.013), (0.013, 0.013)] {
            draw(&mut img, &view, g[0] + ox, g[1] + oy, &Glyph::Square { half: 0.006 }, GRIPPER_COLOR);
        }
    } else {
        draw(&mut img, &view, g[0], g[1], &Glyph::Square { half: 0.012 }, GRIPPER_COLOR);
    }
    img
}

/// Conservative pixel bounding box of an object's glyph (one pixel margin),
/// used by the rendering-locality test.
pub fn glyph_bbox_px(scene: &SimScene, id: u32, camera: Camera) -> (usize, usize, usize, usize) {
    let view = View::for_camera(scene, camera);
    let o = &scene.objects[id as usize];
    let e = object_glyph(o.shape, o.pot_open).extent() + 2.0 * view.half / view.px as f64;
    let (r0, r1, c0, c1) =
        view.bbox(o.position[0] - e, o.position[1] - e, o.position[0] + e, o.position[1] + e);
    (r0.saturating_sub(1), (r1 + 1).min(view.px), c0.saturating_sub(1), (c1 + 1).min(view.px))
}
