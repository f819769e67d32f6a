use facegeom::metrics::{
    icp_register, mae_euler, nme_report, nme_with, point_to_plane_rmse, protocol1_nme, protocol2_nme, EvalRecord,
    NmeReduction,
};
use facegeom::morphable::{
    euler_to_rotation, generate_synthetic_basis, reconstruct_frontal, BasisSet, EulerAngles, MorphParams, PointSet,
    EXPR_DIM, SHAPE_DIM,
};
use nalgebra::{Matrix3, Matrix4, SymmetricEigen, UnitQuaternion, Vector3, Quaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RECORDS: usize = 500;
const TOL: f64 = 1e-10;

type P = [f64; 3];

fn d(a: &P, b: &P) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * a.abs().max(b.abs()).max(1.0)
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<P> {
    (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.3..1.3), rng.gen_range(-0.8..0.8)]).collect()
}

fn jitter(rng: &mut ChaCha8Rng, pts: &[P], s: f64) -> Vec<P> {
    pts.iter().map(|p| [p[0] + rng.gen_range(-s..s), p[1] + rng.gen_range(-s..s), p[2] + rng.gen_range(-s..s)]).collect()
}

fn random_euler(rng: &mut ChaCha8Rng, yaw: f64) -> EulerAngles {
    EulerAngles::new(rng.gen_range(-yaw..yaw), rng.gen_range(-180.0..180.0), rng.gen_range(-180.0..180.0))
}

fn random_record(rng: &mut ChaCha8Rng, i: usize) -> EvalRecord {
    let gt = random_points(rng, 68);
    let spread = rng.gen_range(0.001..0.3);
    let pred = jitter(rng, &gt, spread);
    EvalRecord {
        id: format!("r{i}"),
        pred_landmarks: PointSet::new(pred).unwrap(),
        gt_landmarks: PointSet::new(gt).unwrap(),
        pred_params: MorphParams::neutral(),
        gt_params: MorphParams::neutral(),
        pred_euler: random_euler(rng, 180.0),
        gt_euler: random_euler(rng, 120.0),
    }
}

fn bbox_oracle(pts: &[P]) -> f64 {
    let xs = pts.iter().map(|p| p[0]);
    let ys = pts.iter().map(|p| p[1]);
    let w = xs.clone().fold(f64::MIN, f64::max) - xs.fold(f64::MAX, f64::min);
    let h = ys.clone().fold(f64::MIN, f64::max) - ys.fold(f64::MAX, f64::min);
    (w * h).sqrt()
}

fn nme_oracle(pred: &[P], gt: &[P]) -> f64 {
    let mut s = 0.0;
    for i in 0..gt.len() {
        s += d(&pred[i], &gt[i]);
    }
    100.0 * s / gt.len() as f64 / bbox_oracle(gt)
}

pub fn nme_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let records: Vec<EvalRecord> = (0..RECORDS).map(|i| random_record(&mut rng, i)).collect();
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for r in &records {
        let (p, g) = (&r.pred_landmarks.points, &r.gt_landmarks.points);
        let expect = nme_oracle(p, g);
        let norm = bbox_oracle(g);
        assert!(close(nme_with(&r.pred_landmarks, &r.gt_landmarks, norm, NmeReduction::PerLandmark).unwrap(), expect));
        let frob: f64 = (0..68).map(|i| d(&p[i], &g[i]).powi(2)).sum::<f64>().sqrt();
        assert!(close(
            nme_with(&r.pred_landmarks, &r.gt_landmarks, norm, NmeReduction::GlobalNorm).unwrap(),
            100.0 * frob / norm
        ));
        let a = r.gt_euler.yaw.abs();
        let b = if a < 30.0 {
            0
        } else if a < 60.0 {
            1
        } else if a <= 90.0 {
            2
        } else {
            continue;
        };
        sums[b] += expect;
        counts[b] += 1;
    }
    let report = nme_report(&records, NmeReduction::PerLandmark).unwrap();
    assert_eq!(report.counts, counts);
    for (got, b) in [report.yaw_0_30, report.yaw_30_60, report.yaw_60_90].into_iter().zip(0..3) {
        assert!(close(got.unwrap(), sums[b] / counts[b] as f64));
    }
    let n: usize = counts.iter().sum();
    assert!(n < RECORDS);
    assert!(close(report.all, sums.iter().sum::<f64>() / n as f64));
}

pub fn mae_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let records: Vec<EvalRecord> = (0..RECORDS).map(|i| random_record(&mut rng, i)).collect();
    let wrap = |x: f64| {
        let mut y = x;
        while y > 180.0 {
            y -= 360.0;
        }
        while y < -180.0 {
            y += 360.0;
        }
        y.abs()
    };
    let mut s = [0.0; 3];
    let mut n = 0;
    for r in &records {
        if r.gt_euler.yaw < -99.0 || r.gt_euler.yaw > 99.0 {
            continue;
        }
        s[0] += wrap(r.pred_euler.yaw - r.gt_euler.yaw);
        s[1] += wrap(r.pred_euler.pitch - r.gt_euler.pitch);
        s[2] += wrap(r.pred_euler.roll - r.gt_euler.roll);
        n += 1;
    }
    let m = mae_euler(&records).unwrap();
    assert_eq!(m.count, n);
    assert!(n < RECORDS);
    assert!(close(m.yaw, s[0] / n as f64));
    assert!(close(m.pitch, s[1] / n as f64));
    assert!(close(m.roll, s[2] / n as f64));
    assert!(close(m.mean, (s[0] + s[1] + s[2]) / (3.0 * n as f64)));
}

fn basis() -> BasisSet {
    generate_synthetic_basis(5, 300).unwrap()
}

fn random_mesh(rng: &mut ChaCha8Rng, b: &BasisSet) -> PointSet {
    let shape = (0..SHAPE_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let expr = (0..EXPR_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
    reconstruct_frontal(b, &MorphParams::new(MorphParams::neutral().pose, shape, expr).unwrap()).unwrap()
}

fn random_rigid(rng: &mut ChaCha8Rng, max_deg: f64, max_t: f64) -> (Matrix3<f64>, Vector3<f64>) {
    let e = EulerAngles::new(
        rng.gen_range(-max_deg..max_deg),
        rng.gen_range(-max_deg..max_deg),
        rng.gen_range(-max_deg..max_deg),
    );
    let t = Vector3::new(rng.gen_range(-max_t..max_t), rng.gen_range(-max_t..max_t), rng.gen_range(-max_t..max_t));
    (euler_to_rotation(&e), t)
}

fn moved(pts: &[P], r: &Matrix3<f64>, t: &Vector3<f64>) -> Vec<P> {
    pts.iter()
        .map(|p| {
            let v = r * Vector3::from(*p) + t;
            [v.x, v.y, v.z]
        })
        .collect()
}

/// Closed-form absolute orientation through the unit quaternion of the
/// largest eigenvalue of the 4×4 profile matrix.
fn horn(src: &[P], dst: &[P]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = src.len() as f64;
    let mean = |s: &[P]| s.iter().fold(Vector3::zeros(), |a, p| a + Vector3::from(*p)) / n;
    let (cs, cd) = (mean(src), mean(dst));
    let mut m = Matrix3::zeros();
    for (a, b) in src.iter().zip(dst) {
        m += (Vector3::from(*a) - cs) * (Vector3::from(*b) - cd).transpose();
    }
    let (sxx, sxy, sxz) = (m[(0, 0)], m[(0, 1)], m[(0, 2)]);
    let (syx, syy, syz) = (m[(1, 0)], m[(1, 1)], m[(1, 2)]);
    let (szx, szy, szz) = (m[(2, 0)], m[(2, 1)], m[(2, 2)]);
    let k = Matrix4::new(
        sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
        syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
        szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
        sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(k);
    let best = eig.eigenvalues.imax();
    let q = eig.eigenvectors.column(best);
    let r = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3])).to_rotation_matrix().into_inner();
    (r, cd - r * cs)
}

pub fn protocols_match_oracles() {
    let b = basis();
    let [e0, e1] = b.eye_corner_vertices().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..RECORDS {
        let gt = random_mesh(&mut rng, &b);
        // Small noise keeps nearest neighbours on the shared index, so the
        // registration optimum is the closed-form one.
        let noisy = jitter(&mut rng, &gt.points, 0.002);
        let (r, t) = random_rigid(&mut rng, 40.0, 0.5);
        let pred = PointSet::with_faces(moved(&noisy, &r, &t), b.faces().to_vec()).unwrap();

        let iod = d(&gt.points[e0], &gt.points[e1]);
        let (hr, ht) = horn(&pred.points, &gt.points);
        let aligned = moved(&pred.points, &hr, &ht);
        let mut s = 0.0;
        for i in 0..gt.len() {
            s += d(&aligned[i], &gt.points[i]);
        }
        let expect = 100.0 * s / gt.len() as f64 / iod;
        let got = protocol1_nme(&pred, &gt, iod).unwrap();
        assert!(close(got, expect), "protocol 1: {got} vs {expect}");

        let norm = bbox_oracle(&gt.points);
        let mut s = 0.0;
        for i in 0..gt.len() {
            s += d(&pred.points[i], &gt.points[i]);
        }
        assert!(close(protocol2_nme(&pred, &gt, norm).unwrap(), 100.0 * s / gt.len() as f64 / norm));
    }
}

fn cross(a: &P, b: &P) -> P {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn p2plane_oracle(pred: &[P], gt: &[P], faces: &[[usize; 3]]) -> f64 {
    let mut normals = vec![[0.0; 3]; gt.len()];
    for f in faces {
        let u = [gt[f[1]][0] - gt[f[0]][0], gt[f[1]][1] - gt[f[0]][1], gt[f[1]][2] - gt[f[0]][2]];
        let v = [gt[f[2]][0] - gt[f[0]][0], gt[f[2]][1] - gt[f[0]][1], gt[f[2]][2] - gt[f[0]][2]];
        let c = cross(&u, &v);
        for &i in f {
            for k in 0..3 {
                normals[i][k] += c[k];
            }
        }
    }
    let mut ss = 0.0;
    for p in pred {
        let mut best = 0;
        for (i, q) in gt.iter().enumerate() {
            if d(p, q) < d(p, &gt[best]) {
                best = i;
            }
        }
        let n = normals[best];
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let q = gt[best];
        let r = ((p[0] - q[0]) * n[0] + (p[1] - q[1]) * n[1] + (p[2] - q[2]) * n[2]) / len;
        ss += r * r;
    }
    (ss / pred.len() as f64).sqrt()
}

pub fn point_to_plane_matches_brute_force() {
    let b = basis();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..RECORDS {
        let gt = random_mesh(&mut rng, &b);
        let spread = rng.gen_range(0.001..0.1);
        let pred = PointSet::new(jitter(&mut rng, &gt.points, spread)).unwrap();
        let got = point_to_plane_rmse(&pred, &gt, false).unwrap();
        let expect = p2plane_oracle(&pred.points, &gt.points, b.faces());
        assert!(close(got, expect), "{got} vs {expect}");
    }
}

pub fn icp_recovers_rigid_motion() {
    let b = basis();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let src = random_mesh(&mut rng, &b);
        let (r, t) = random_rigid(&mut rng, 5.0, 0.05);
        let dst = PointSet::new(moved(&src.points, &r, &t)).unwrap();
        let res = icp_register(&src, &dst).unwrap();
        assert!((res.transform.rotation - r).amax() < 1e-5);
        assert!((res.transform.translation - t).amax() < 1e-5);
        assert!(res.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(res.rmse < 1e-5);
    }
}
