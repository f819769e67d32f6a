use facegeom::morphable::{
    compose_pose, decompose_pose, euler_to_rotation, generate_synthetic_basis, reconstruct_frontal, reconstruct_posed,
    rotation_to_euler, BasisSet, EulerAngles, MorphParams, Pose, EXPR_DIM, SHAPE_DIM,
};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

pub fn basis() -> &'static BasisSet {
    static B: OnceLock<BasisSet> = OnceLock::new();
    B.get_or_init(|| generate_synthetic_basis(11, 300).unwrap())
}

fn params(shape: Vec<f64>, expr: Vec<f64>) -> MorphParams {
    MorphParams::new(MorphParams::neutral().pose, shape, expr).unwrap()
}

/// Hand-expanded `R_x(pitch)·R_y(yaw)·R_z(roll)`.
fn rotation_oracle(e: &EulerAngles) -> Matrix3<f64> {
    let (sy, cy) = e.yaw.to_radians().sin_cos();
    let (sp, cp) = e.pitch.to_radians().sin_cos();
    let (sr, cr) = e.roll.to_radians().sin_cos();
    Matrix3::new(
        cy * cr,
        -cy * sr,
        sy,
        sp * sy * cr + cp * sr,
        -sp * sy * sr + cp * cr,
        -sp * cy,
        -cp * sy * cr + sp * sr,
        cp * sy * sr + sp * cr,
        cp * cy,
    )
}

fn angle_diff(a: f64, b: f64) -> f64 {
    ((a - b + 180.0).rem_euclid(360.0) - 180.0).abs()
}

pub fn zero_coefficients_give_the_mean_face() {
    let b = basis();
    let mesh = reconstruct_frontal(b, &MorphParams::neutral()).unwrap();
    let flat: Vec<f64> = mesh.points.iter().flatten().copied().collect();
    assert_eq!(flat, b.mean());
}

pub fn reconstruction_is_linear(s1: &[f64], e1: &[f64], s2: &[f64], e2: &[f64], c: f64) {
    let b = basis();
    let m = b.mean();
    let offset = |p: &MorphParams| -> Vec<f64> {
        let mesh = reconstruct_frontal(b, p).unwrap();
        mesh.points.iter().flatten().zip(m).map(|(v, mv)| v - mv).collect()
    };
    let sum = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a + b).collect::<Vec<_>>();
    let a = offset(&params(s1.to_vec(), e1.to_vec()));
    let bb = offset(&params(s2.to_vec(), e2.to_vec()));
    let ab = offset(&params(sum(s1, s2), sum(e1, e2)));
    for ((x, y), z) in a.iter().zip(&bb).zip(&ab) {
        assert!((x + y - z).abs() < 1e-10, "additivity: {} vs {z}", x + y);
    }
    let scaled = offset(&params(s1.iter().map(|v| c * v).collect(), e1.iter().map(|v| c * v).collect()));
    for (x, y) in a.iter().zip(&scaled) {
        assert!((c * x - y).abs() < 1e-10, "homogeneity: {} vs {y}", c * x);
    }
}

pub fn reconstruction_matches_scalar_loop(s: &[f64], e: &[f64]) {
    let b = basis();
    let mesh = reconstruct_frontal(b, &params(s.to_vec(), e.to_vec())).unwrap();
    for (r, v) in mesh.points.iter().flatten().enumerate() {
        let mut x = b.mean()[r];
        for (j, a) in s.iter().enumerate() {
            x += b.shape_basis()[r * SHAPE_DIM + j] * a;
        }
        for (j, a) in e.iter().enumerate() {
            x += b.expr_basis()[r * EXPR_DIM + j] * a;
        }
        assert!((x - v).abs() < 1e-10, "row {r}: {v} vs {x}");
    }
}

pub fn posed_mesh_applies_the_raw_block(s: &[f64], pose: &[f64]) {
    let b = basis();
    let p = MorphParams::new(pose.to_vec(), s.to_vec(), vec![0.0; EXPR_DIM]).unwrap();
    let frontal = reconstruct_frontal(b, &p).unwrap();
    let posed = reconstruct_posed(b, &p).unwrap();
    for (f, q) in frontal.points.iter().zip(&posed.points) {
        for r in 0..3 {
            let x = pose[r * 4] * f[0] + pose[r * 4 + 1] * f[1] + pose[r * 4 + 2] * f[2] + pose[r * 4 + 3];
            assert!((x - q[r]).abs() < 1e-12, "{x} vs {}", q[r]);
        }
    }
}

pub fn pose_roundtrip(yaw: f64, pitch: f64, roll: f64, scale: f64, t: [f64; 3]) {
    let rotation = euler_to_rotation(&EulerAngles::new(yaw, pitch, roll));
    let pose = Pose::new(scale, rotation, Vector3::from(t)).unwrap();
    let alpha = compose_pose(&pose);
    let back = decompose_pose(&alpha).unwrap();
    assert!((back.scale - scale).abs() < 1e-9);
    assert!((back.rotation - rotation).amax() < 1e-9);
    assert!((back.translation - Vector3::from(t)).amax() < 1e-9);
    let again = compose_pose(&back);
    for (a, b) in alpha.iter().zip(&again) {
        assert!((a - b).abs() < 1e-9);
    }
}

pub fn euler_roundtrip(yaw: f64, pitch: f64, roll: f64) {
    let e = EulerAngles::new(yaw, pitch, roll);
    let m = euler_to_rotation(&e);
    assert!((m - rotation_oracle(&e)).amax() < 1e-12);
    let back = rotation_to_euler(&m).unwrap();
    assert!(angle_diff(back.yaw, yaw) < 1e-9, "yaw {} vs {yaw}", back.yaw);
    assert!(angle_diff(back.pitch, pitch) < 1e-9, "pitch {} vs {pitch}", back.pitch);
    assert!(angle_diff(back.roll, roll) < 1e-9, "roll {} vs {roll}", back.roll);
}

/// Seeded draws over the same ranges the property tests use.
pub fn sweep(rng: &mut ChaCha8Rng, cases: usize) {
    let mut v = |n: usize, s: f64| (0..n).map(|_| rng.gen_range(-s..s)).collect::<Vec<f64>>();
    zero_coefficients_give_the_mean_face();
    for _ in 0..cases {
        let (s1, e1, s2, e2) = (v(SHAPE_DIM, 2.0), v(EXPR_DIM, 2.0), v(SHAPE_DIM, 2.0), v(EXPR_DIM, 2.0));
        let c = v(1, 3.0)[0];
        reconstruction_is_linear(&s1, &e1, &s2, &e2, c);
        reconstruction_matches_scalar_loop(&s1, &e1);
        posed_mesh_applies_the_raw_block(&s2, &v(12, 1.5));
        let a = v(3, 180.0);
        let scale = 0.2 + v(1, 1.0)[0].abs() * 4.8;
        let t = v(3, 10.0);
        pose_roundtrip(a[0], a[1], a[2], scale, [t[0], t[1], t[2]]);
        let (y, pr) = (v(1, 89.0)[0], v(2, 179.0));
        euler_roundtrip(y, pr[0], pr[1]);
    }
}
