//! SE(3) pose math and the 10-d proprioception/action parameterization.
//!
//! Proprioception is `[translation (3) | rot6d (6) | gripper (1)]` with the
//! rot6d encoding formed from the first two rows of the rotation matrix.
//! Actions carry a delta pose relative to the current end-effector frame
//! plus an absolute gripper command.

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY_ROT: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub translation: Vec3,
    pub rotation: Mat3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProprioVec(pub [f64; 10]);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionVec(pub [f64; 10]);

pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn mat_transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in a.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[j][i] = v;
        }
    }
    out
}

pub fn mat_apply(a: &Mat3, v: &Vec3) -> Vec3 {
    [dot(&a[0], v), dot(&a[1], v), dot(&a[2], v)]
}

pub fn det(a: &Mat3) -> f64 {
    dot(&a[0], &cross(&a[1], &a[2]))
}

/// Max elementwise deviation of R^T R from the identity.
pub fn orthonormality_residual(r: &Mat3) -> f64 {
    let rtr = mat_mul(&mat_transpose(r), r);
    let mut worst: f64 = 0.0;
    for (i, row) in rtr.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
    }
    worst = worst.max((det(r) - 1.0).abs());
    worst
}

impl Pose {
    pub fn identity() -> Self {
        Pose { translation: [0.0; 3], rotation: IDENTITY_ROT }
    }

    pub fn new(translation: Vec3, rotation: Mat3) -> Self {
        Pose { translation, rotation }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Pose { translation, rotation: IDENTITY_ROT }
    }

    pub fn validate(&self) -> Result<()> {
        let res = orthonormality_residual(&self.rotation);
        if res > 1e-6 {
            return Err(Error::NotARotation(res));
        }
        Ok(())
    }

    /// self ∘ other (other expressed in self's frame).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            translation: vec_add(&self.translation, &mat_apply(&self.rotation, &other.translation)),
            rotation: mat_mul(&self.rotation, &other.rotation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = mat_transpose(&self.rotation);
        let t = mat_apply(&rt, &self.translation);
        Pose { translation: [-t[0], -t[1], -t[2]], rotation: rt }
    }
}

fn vec_add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// First two rows of an orthonormal rotation matrix, flattened.
pub fn rot6d_from_matrix(r: &Mat3) -> Result<[f64; 6]> {
    let res = orthonormality_residual(r);
    if res > 1e-4 {
        return Err(Error::NotARotation(res));
    }
    Ok([r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2]])
}

/// Gram-Schmidt decode of the rot6d encoding: normalize the first triple,
/// orthogonalize the second against it, third row by cross product.
pub fn matrix_from_rot6d(v: &[f64; 6]) -> Result<Mat3> {
    let a = [v[0], v[1], v[2]];
    let b = [v[3], v[4], v[5]];
    let na = norm(&a);
    if na < 1e-6 {
        return Err(Error::DegenerateRot6d(*v, "first triple is near zero"));
    }
    let r0 = [a[0] / na, a[1] / na, a[2] / na];
    let proj = dot(&b, &r0);
    let b_orth = [b[0] - proj * r0[0], b[1] - proj * r0[1], b[2] - proj * r0[2]];
    let nb = norm(&b_orth);
    if nb < 1e-6 {
        return Err(Error::DegenerateRot6d(*v, "second triple is parallel to the first"));
    }
    let r1 = [b_orth[0] / nb, b_orth[1] / nb, b_orth[2] / nb];
    let r2 = cross(&r0, &r1);
    Ok([r0, r1, r2])
}

/// Relative transforms the model predicts: action i encodes
/// `current^-1 ∘ future[i]` with the gripper copied through absolutely.
pub fn delta_actions(current: &Pose, futures: &[Pose], grippers: &[f64]) -> Result<Vec<ActionVec>> {
    if futures.len() != grippers.len() || futures.is_empty() {
        return Err(Error::Config(format!(
            "delta_actions: {} poses vs {} grippers (need equal, nonempty)",
            futures.len(),
            grippers.len()
        )));
    }
    let inv = current.inverse();
    futures
        .iter()
        .zip(grippers)
        .map(|(f, &g)| {
            let delta = inv.compose(f);
            let r6 = rot6d_from_matrix(&delta.rotation)?;
            Ok(ActionVec([
                delta.translation[0],
                delta.translation[1],
                delta.translation[2],
                r6[0],
                r6[1],
                r6[2],
                r6[3],
                r6[4],
                r6[5],
                g.clamp(0.0, 1.0),
            ]))
        })
        .collect()
}

/// Execution inverse of [`delta_actions`]: `current ∘ Δ(a)`. Returns the new
/// pose and the gripper command carried by the action.
pub fn apply_action(current: &Pose, a: &ActionVec) -> Result<(Pose, f64)> {
    let v = &a.0;
    let rot = matrix_from_rot6d(&[v[3], v[4], v[5], v[6], v[7], v[8]])?;
    let delta = Pose { translation: [v[0], v[1], v[2]], rotation: rot };
    Ok((current.compose(&delta), v[9]))
}

/// `[t (3) | rot6d (6) | gripper (1)]`. Out-of-range grippers are clamped
/// with a logged warning rather than rejected.
pub fn proprio_encode(pose: &Pose, gripper: f64) -> Result<ProprioVec> {
    let r6 = rot6d_from_matrix(&pose.rotation)?;
    let g = if (0.0..=1.0).contains(&gripper) {
        gripper
    } else {
        log::warn!("gripper {gripper} outside [0,1], clamping");
        gripper.clamp(0.0, 1.0)
    };
    let t = &pose.translation;
    Ok(ProprioVec([t[0], t[1], t[2], r6[0], r6[1], r6[2], r6[3], r6[4], r6[5], g]))
}

pub fn proprio_decode(p: &ProprioVec) -> Result<(Pose, f64)> {
    let v = &p.0;
    let rot = matrix_from_rot6d(&[v[3], v[4], v[5], v[6], v[7], v[8]])?;
    Ok((Pose { translation: [v[0], v[1], v[2]], rotation: rot }, v[9]))
}

impl ActionVec {
    /// Zero motion: identity rotation in rot6d form, gripper as given.
    pub fn rest(gripper: f64) -> Self {
        ActionVec([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, gripper.clamp(0.0, 1.0)])
    }

    pub fn gripper(&self) -> f64 {
        self.0[9]
    }

    pub fn translation(&self) -> Vec3 {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn to_f32(&self) -> [f32; 10] {
        std::array::from_fn(|i| self.0[i] as f32)
    }

    pub fn from_f32(v: &[f32; 10]) -> Self {
        ActionVec(std::array::from_fn(|i| v[i] as f64))
    }
}

impl ProprioVec {
    pub fn to_f32(&self) -> [f32; 10] {
        std::array::from_fn(|i| self.0[i] as f32)
    }

    pub fn from_f32(v: &[f32; 10]) -> Self {
        ProprioVec(std::array::from_fn(|i| v[i] as f64))
    }
}

/// Uniform random rotation via a random unit quaternion.
pub fn random_rotation(rng: &mut impl rand::Rng) -> Mat3 {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n2 = q.iter().map(|v| v * v).sum::<f64>();
        if n2 < 1e-6 || n2 > 1.0 {
            continue;
        }
        let n = n2.sqrt();
        let [w, x, y, z] = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
        return [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ];
    }
}

pub fn max_abs_diff_mat(a: &Mat3, b: &Mat3) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            worst = worst.max((a[i][j] - b[i][j]).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rot_z(deg: f64) -> Mat3 {
        let (s, c) = deg.to_radians().sin_cos();
        [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    }

    #[test]
    fn rot6d_identity_and_flips() {
        assert_eq!(rot6d_from_matrix(&IDENTITY_ROT).unwrap(), [1., 0., 0., 0., 1., 0.]);
        let r6 = rot6d_from_matrix(&rot_z(180.0)).unwrap();
        for (got, want) in r6.iter().zip(&[-1., 0., 0., 0., -1., 0.]) {
            assert!((got - want).abs() < 1e-12);
        }
        // Rz(90): rows [0,-1,0] and [1,0,0]
        let r6 = rot6d_from_matrix(&rot_z(90.0)).unwrap();
        for (got, want) in r6.iter().zip(&[0., -1., 0., 1., 0., 0.]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rot6d_rejects_non_orthonormal() {
        let mut bad = IDENTITY_ROT;
        bad[0][0] = 1.1;
        assert!(matches!(rot6d_from_matrix(&bad), Err(Error::NotARotation(_))));
    }

    #[test]
    fn rot6d_decode_gram_schmidt_hand_case() {
        // [2,0,0, 1,1,0] -> rows [1,0,0], [0,1,0], third [0,0,1]
        let m = matrix_from_rot6d(&[2., 0., 0., 1., 1., 0.]).unwrap();
        assert!(max_abs_diff_mat(&m, &IDENTITY_ROT) < 1e-12);
    }

    #[test]
    fn rot6d_decode_rejects_degenerate() {
        assert!(matrix_from_rot6d(&[0., 0., 0., 1., 0., 0.]).is_err());
        assert!(matrix_from_rot6d(&[1., 0., 0., 2., 0., 0.]).is_err());
    }

    #[test]
    fn rot6d_round_trip_1000_random_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..1000 {
            let r = random_rotation(&mut rng);
            let v = rot6d_from_matrix(&r).unwrap();
            let back = matrix_from_rot6d(&v).unwrap();
            assert!(max_abs_diff_mat(&r, &back) < 1e-6);
        }
    }

    #[test]
    fn delta_apply_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        use rand::Rng;
        for _ in 0..200 {
            let current = Pose::new(
                std::array::from_fn(|_| rng.random_range(-0.5..0.5)),
                random_rotation(&mut rng),
            );
            let target = Pose::new(
                std::array::from_fn(|_| rng.random_range(-0.5..0.5)),
                random_rotation(&mut rng),
            );
            let acts = delta_actions(&current, &[target], &[0.7]).unwrap();
            let (back, g) = apply_action(&current, &acts[0]).unwrap();
            assert!((g - 0.7).abs() < 1e-12);
            assert!(max_abs_diff_mat(&back.rotation, &target.rotation) < 1e-6);
            for i in 0..3 {
                assert!((back.translation[i] - target.translation[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn delta_actions_trivial_cases() {
        let current = Pose::from_translation([0.05, -0.02, 0.1]);
        // future == current -> zero translation, identity rot6d
        let a = delta_actions(&current, &[current], &[1.0]).unwrap();
        assert_eq!(a[0], ActionVec::rest(1.0));
        // pure translation with identity rotations
        let fut = Pose::from_translation([0.15, -0.02, 0.1]);
        let a = delta_actions(&current, &[fut], &[0.0]).unwrap();
        let t = a[0].translation();
        assert!((t[0] - 0.1).abs() < 1e-12 && t[1].abs() < 1e-12 && t[2].abs() < 1e-12);
    }

    #[test]
    fn apply_action_examples() {
        let p = Pose::identity();
        let (q, _) = apply_action(&p, &ActionVec::rest(0.5)).unwrap();
        assert_eq!(q, p);
        let mut a = ActionVec::rest(1.0);
        a.0[1] = 0.2;
        let (q, _) = apply_action(&p, &a).unwrap();
        assert_eq!(q.translation, [0.0, 0.2, 0.0]);
        // two successive deltas equal composing their transforms first
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d1 = Pose::new([0.01, 0.02, 0.0], random_rotation(&mut rng));
        let d2 = Pose::new([-0.03, 0.0, 0.04], random_rotation(&mut rng));
        let a1 = delta_actions(&Pose::identity(), &[d1], &[1.0]).unwrap()[0];
        let step1 = apply_action(&p, &a1).unwrap().0;
        let a2 = delta_actions(&Pose::identity(), &[d2], &[1.0]).unwrap()[0];
        let step2 = apply_action(&step1, &a2).unwrap().0;
        let composed = p.compose(&d1).compose(&d2);
        assert!(max_abs_diff_mat(&step2.rotation, &composed.rotation) < 1e-9);
    }

    #[test]
    fn proprio_encode_decode() {
        let p = proprio_encode(&Pose::identity(), 1.0).unwrap();
        assert_eq!(p.0, [0., 0., 0., 1., 0., 0., 0., 1., 0., 1.]);
        let pose = Pose::from_translation([1., 2., 3.]);
        let p = proprio_encode(&pose, 0.0).unwrap();
        assert_eq!(p.0, [1., 2., 3., 1., 0., 0., 0., 1., 0., 0.]);

        let mut rng = ChaCha8Rng::seed_from_u64(31);
        use rand::Rng;
        for _ in 0..100 {
            let pose = Pose::new(
                std::array::from_fn(|_| rng.random_range(-0.3..0.3)),
                random_rotation(&mut rng),
            );
            let g = rng.random_range(0.0..1.0);
            let enc = proprio_encode(&pose, g).unwrap();
            let (back, gb) = proprio_decode(&enc).unwrap();
            assert!(max_abs_diff_mat(&back.rotation, &pose.rotation) < 1e-6);
            for i in 0..3 {
                assert!((back.translation[i] - pose.translation[i]).abs() < 1e-6);
            }
            assert_eq!(gb, g);
        }
    }

    #[test]
    fn proprio_clamps_out_of_range_gripper() {
        let p = proprio_encode(&Pose::identity(), 1.3).unwrap();
        assert_eq!(p.0[9], 1.0);
        let p = proprio_encode(&Pose::identity(), -0.2).unwrap();
        assert_eq!(p.0[9], 0.0);
    }
}
