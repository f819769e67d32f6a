use facegeom::morphable::{generate_synthetic_basis, EXPR_DIM, PARAM_DIM, POSE_DIM, SHAPE_DIM};
use facegeom::networks::{DimensionLedger, LandmarkModel, NetworkParams, ParamVars, Session};
use facegeom::tensor::{BatchNormMode, BnRunning, Graph, Tensor, Var};
use facegeom::training::{graph_losses, LossWeights};
use facegeom::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SEEDS: std::ops::Range<u64> = 0..5;

/// Central differences at `H` carry roundoff near `ε·|L|/H` (about 1e-10
/// here), so gradients smaller than `FLOOR` are compared absolutely.
const FLOOR: f64 = 1e-5;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Reduces any output to a scalar through `‖out − c‖²` with a fixed random
/// `c`, so every output element gets a distinct upstream gradient.
fn reduce(g: &mut Graph, out: Var, c: &Tensor) -> Var {
    let c = g.constant(c.clone());
    let d = g.sub(out, c).unwrap();
    g.sum_squares(d)
}

/// Max relative error between the taped gradient and central differences,
/// over every element of every input.
pub fn check<F>(seed: u64, inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let probe = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = build(&mut g, &vars).unwrap();
        g.value(out).clone()
    };
    let c = Tensor::new(
        probe.shape().to_vec(),
        (0..probe.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let loss_at = |values: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = build(&mut g, &vars).unwrap();
        let l = reduce(&mut g, out, &c);
        g.value(l).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = build(&mut g, &vars).unwrap();
    let l = reduce(&mut g, out, &c);
    g.backward(l).unwrap();

    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).expect("leaf gradient").to_vec();
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * H);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

pub fn each_seed<F>(name: &str, mut f: F)
where
    F: FnMut(&mut ChaCha8Rng, u64) -> f64,
{
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = f(&mut rng, seed);
        assert!(e < TOL, "{name}, seed {seed}: max relative error {e:e}");
    }
}

pub type OpCase = fn(&mut ChaCha8Rng, u64) -> f64;

/// Every taped operation, each returning its worst relative error for one seed.
pub const OPS: &[(&str, OpCase)] = &[
    ("matmul", |rng, seed| {
        let ins = [uniform(rng, 4, 3, 1.0), uniform(rng, 3, 5, 1.0)];
        check(seed, &ins, |g, v| g.matmul(v[0], v[1]))
    }),
    ("add/sub/scale", |rng, seed| {
        let ins = [uniform(rng, 3, 4, 1.0), uniform(rng, 3, 4, 1.0)];
        check(seed, &ins, |g, v| {
            let a = g.add(v[0], v[1])?;
            let a = g.scale(a, -1.7);
            g.sub(a, v[1])
        })
    }),
    ("relu", |rng, seed| check(seed, &[uniform(rng, 5, 6, 1.0)], |g, v| Ok(g.relu(v[0])))),
    ("concat/slice", |rng, seed| {
        let ins = [uniform(rng, 4, 2, 1.0), uniform(rng, 4, 3, 1.0)];
        check(seed, &ins, |g, v| {
            let c = g.concat_last_dim(&[v[0], v[1], v[0]])?;
            let s = g.slice_cols(c, 1, 5)?;
            g.slice_rows(s, 1, 2)
        })
    }),
    ("repeat/reshape", |rng, seed| {
        check(seed, &[uniform(rng, 2, 3, 1.0)], |g, v| {
            let r = g.repeat_rows(v[0], 3)?;
            g.reshape(r, vec![9, 2])
        })
    }),
    ("max_pool_points", |rng, seed| {
        let x = uniform(rng, 7, 5, 1.0);
        let mut g = Graph::new();
        let v = g.leaf(x.clone(), true);
        let m = g.max_pool_points(v).unwrap();
        let s = g.sum(m);
        g.backward(s).unwrap();
        let grad = g.grad(v).unwrap();
        for col in 0..5 {
            let argmax = (0..7).max_by(|&a, &b| x.get(a, col).total_cmp(&x.get(b, col))).unwrap();
            for row in 0..7 {
                let expect = if row == argmax { 1.0 } else { 0.0 };
                assert_eq!(grad[row * 5 + col], expect, "gradient must route to the argmax");
            }
        }
        check(seed, &[x], |g, v| g.max_pool_points(v[0]))
    }),
    ("max_pool_groups", |rng, seed| check(seed, &[uniform(rng, 6, 4, 1.0)], |g, v| g.max_pool_groups(v[0], 3))),
    ("batch_norm/train", |rng, seed| batch_norm_case(rng, seed, BatchNormMode::Train)),
    ("batch_norm/eval", |rng, seed| batch_norm_case(rng, seed, BatchNormMode::Eval)),
    ("affine_points", |rng, seed| {
        let ins = [uniform(rng, 6, 3, 1.0), uniform(rng, 2, 12, 1.0)];
        check(seed, &ins, |g, v| g.affine_points(v[0], v[1], 3))
    }),
    ("sum", |rng, seed| check(seed, &[uniform(rng, 3, 3, 1.0)], |g, v| Ok(g.sum(v[0])))),
    ("sum_squares", |rng, seed| check(seed, &[uniform(rng, 3, 3, 1.0)], |g, v| Ok(g.sum_squares(v[0])))),
    // Scaled so both branches of the piecewise definition are exercised.
    ("smooth_l1", |rng, seed| check(seed, &[uniform(rng, 4, 3, 2.5)], |g, v| Ok(g.smooth_l1_sum(v[0])))),
];

fn batch_norm_case(rng: &mut ChaCha8Rng, seed: u64, mode: BatchNormMode) -> f64 {
    let mut running = BnRunning::new(4);
    for c in 0..4 {
        running.mean[c] = rng.gen_range(-0.5..0.5);
        running.var[c] = rng.gen_range(0.5..2.0);
    }
    let ins = [uniform(rng, 8, 4, 1.0), uniform(rng, 1, 4, 1.0), uniform(rng, 1, 4, 1.0)];
    check(seed, &ins, |g, v| {
        let mut r = running.clone();
        g.batch_norm(v[0], v[1], v[2], &mut r, mode)
    })
}

pub fn op_case(name: &str) -> OpCase {
    OPS.iter().find(|(n, _)| *n == name).unwrap_or_else(|| panic!("no op case {name}")).1
}

pub fn second_backward_accumulates() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g = Graph::new();
    let a = g.leaf(uniform(&mut rng, 3, 4, 1.0), true);
    let b = g.leaf(uniform(&mut rng, 4, 2, 1.0), true);
    let m = g.matmul(a, b).unwrap();
    let r = g.relu(m);
    let l = g.sum_squares(r);
    g.backward(l).unwrap();
    let once: Vec<Vec<f64>> = [a, b].iter().map(|v| g.grad(*v).unwrap().to_vec()).collect();
    g.backward(l).unwrap();
    for (v, first) in [a, b].iter().zip(&once) {
        for (x, y) in g.grad(*v).unwrap().iter().zip(first) {
            assert_eq!(*x, 2.0 * y);
        }
    }
}

/// Small enough that every parameter can be perturbed.
pub fn micro_ledger() -> DimensionLedger {
    DimensionLedger {
        observation_side: 4,
        encoder_hidden: 6,
        z_dim: 5,
        point_low_dim: 4,
        point_hidden: vec![4],
        point_global_dim: 6,
        decoder_hidden: vec![5],
        lgs_dims: vec![4, 6],
        ..Default::default()
    }
}

struct Batch {
    obs: Tensor,
    gt: [Tensor; 3],
    gt_landmarks: Tensor,
}

fn random_batch(rng: &mut ChaCha8Rng, b: usize, ledger: &DimensionLedger) -> Batch {
    let side = ledger.observation_side;
    let obs = Tensor::matrix(b, side * side, (0..b * side * side).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    // Pose rows near the identity keep the coarse landmarks well scaled.
    let mut pose = uniform(rng, b, POSE_DIM, 0.2);
    for r in 0..b {
        for d in [0, 5, 10] {
            pose.data_mut()[r * POSE_DIM + d] += 1.0;
        }
    }
    Batch {
        obs,
        gt: [pose, uniform(rng, b, SHAPE_DIM, 0.5), uniform(rng, b, EXPR_DIM, 0.5)],
        gt_landmarks: uniform(rng, b * ledger.n_landmarks, 3, 1.0),
    }
}

fn objective(params: &NetworkParams, model: &LandmarkModel, batch: &Batch, track: bool) -> (f64, Vec<Option<Vec<f64>>>) {
    let mut s = Session::new(params, BatchNormMode::Train, track);
    let obs = s.graph.constant(batch.obs.clone());
    let gt = ParamVars {
        pose: s.graph.constant(batch.gt[0].clone()),
        shape: s.graph.constant(batch.gt[1].clone()),
        expr: s.graph.constant(batch.gt[2].clone()),
    };
    let lmk = s.graph.constant(batch.gt_landmarks.clone());
    let v = s.pipeline(obs, model, true).unwrap();
    let losses = graph_losses(&mut s, v.alpha, v.refined, v.alpha_hat, gt, lmk, &LossWeights::default()).unwrap();
    let total = s.graph.value(losses.total).item();
    if track {
        s.graph.backward(losses.total).unwrap();
        (total, s.param_grads())
    } else {
        (total, Vec::new())
    }
}

pub struct FullCheck {
    pub worst: f64,
    pub checked: usize,
    pub kinks: usize,
}

/// Perturbs every scalar parameter of a micro-ledger model and compares the
/// full training objective against central differences.
pub fn full_objective(seed: u64) -> FullCheck {
    let basis = generate_synthetic_basis(2, 256).unwrap();
    let model = LandmarkModel::from_basis(&basis);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = NetworkParams::init(micro_ledger(), seed).unwrap();
    let batch = random_batch(&mut rng, 3, &params.ledger);
    let (_, grads) = objective(&params, &model, &batch, true);
    let base = objective(&params, &model, &batch, false).0;
    let (mut worst, mut checked, mut kinks): (f64, usize, usize) = (0.0, 0, 0);
    for (i, grad) in grads.iter().enumerate() {
        let grad = grad.as_ref().unwrap_or_else(|| panic!("parameter {i} received no gradient"));
        for j in 0..grad.len() {
            let at = |h: f64| {
                let mut p = params.clone();
                p.get_mut(i).data_mut()[j] += h;
                objective(&p, &model, &batch, false).0
            };
            let mut e = rel_err(grad[j], (at(H) - at(-H)) / (2.0 * H));
            if e >= TOL {
                // A ReLU or max-pool switch inside [−h, h] breaks the
                // central difference. Narrower steps and the one-sided
                // slopes locate the smooth side, which must still agree.
                let mut sides = (0.0, 0.0);
                for h in [H, H / 10.0, H / 100.0] {
                    let (up, down) = (at(h), at(-h));
                    sides = ((up - base) / h, (base - down) / h);
                    let best = [(up - down) / (2.0 * h), sides.0, sides.1]
                        .into_iter()
                        .map(|n| rel_err(grad[j], n))
                        .fold(f64::INFINITY, f64::min);
                    e = e.min(best);
                }
                // With the switch exactly at the point (a channel whose
                // pooled rows are all clamped to zero), the taped value
                // must be a subgradient: between the one-sided slopes.
                let (lo, hi) = (sides.0.min(sides.1), sides.0.max(sides.1));
                if e >= TOL && rel_err(lo, hi) > TOL && grad[j] >= lo && grad[j] <= hi {
                    e = 0.0;
                }
                if e < TOL {
                    kinks += 1;
                }
            }
            worst = worst.max(e);
            checked += 1;
        }
    }
    assert_eq!(checked, params.num_parameters(), "every parameter must be perturbed");
    FullCheck { worst, checked, kinks }
}

impl FullCheck {
    pub fn assert_ok(&self, seed: u64) {
        assert!(self.kinks * 100 <= self.checked, "seed {seed}: {} elements straddle a kink", self.kinks);
        assert!(self.worst < TOL, "seed {seed}: max relative error {:e} over {} parameters", self.worst, self.checked);
    }
}

pub fn consistency_gradient_is_antisymmetric() {
    let params = NetworkParams::init(micro_ledger(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut s = Session::new(&params, BatchNormMode::Eval, true);
    let mut block = |s: &mut Session, dim| s.graph.leaf(uniform(&mut rng, 2, dim, 1.0), true);
    let alpha = ParamVars {
        pose: block(&mut s, POSE_DIM),
        shape: block(&mut s, SHAPE_DIM),
        expr: block(&mut s, EXPR_DIM),
    };
    let hat = ParamVars {
        pose: block(&mut s, POSE_DIM),
        shape: block(&mut s, SHAPE_DIM),
        expr: block(&mut s, EXPR_DIM),
    };
    let gt = ParamVars {
        pose: block(&mut s, POSE_DIM),
        shape: block(&mut s, SHAPE_DIM),
        expr: block(&mut s, EXPR_DIM),
    };
    let refined = s.graph.leaf(uniform(&mut rng, 2 * 68, 3, 1.0), true);
    let lmk = s.graph.constant(Tensor::zeros(&[136, 3]));
    let only = LossWeights {
        params: 0.0,
        landmarks: 0.0,
        landmark_params: 0.0,
        consistency: 1.0,
    };
    let l = graph_losses(&mut s, alpha, refined, Some(hat), gt, lmk, &only).unwrap();
    s.graph.backward(l.total).unwrap();
    let mut n = 0;
    for (a, h) in [(alpha.pose, hat.pose), (alpha.shape, hat.shape), (alpha.expr, hat.expr)] {
        for (x, y) in s.graph.grad(a).unwrap().iter().zip(s.graph.grad(h).unwrap()) {
            assert_eq!(*x, -*y);
            n += 1;
        }
    }
    assert_eq!(n, 2 * PARAM_DIM);
}

