//! Finite-difference sweeps of every differentiable op and both losses over
//! randomly drawn shapes.

#![allow(dead_code)]

use petct_core::tensor::gradcheck::{check, GradCheck};
use petct_core::tensor::{Graph, Tensor, TensorError, Var};
use petct_core::train::{loss_bce, loss_dice_ce, TrainError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CASES: usize = 50;
pub const TOL: f64 = 1e-4;
const H: f64 = 1e-6;
const FLOOR: f64 = 1e-6;

fn rand_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    // Keep values away from zero so kinks (relu, max) stay outside ±h.
    let data = (0..n)
        .map(|_| {
            let v: f64 = r.random_range(0.05..1.5);
            if r.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Contracts `y` with a fixed random tensor so every output entry matters.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var, TensorError> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = g.value(y).numel();
    let w = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let p = g.mul_const(y, w)?;
    Ok(g.sum(p))
}

fn dims5(r: &mut ChaCha8Rng, max: usize) -> Vec<usize> {
    vec![
        r.random_range(1..=2),
        r.random_range(1..=3),
        r.random_range(1..=max),
        r.random_range(1..=max),
        r.random_range(1..=max),
    ]
}

/// Worst relative error of one op family over [`CASES`] random cases.
#[derive(Clone, Copy, Debug)]
pub struct OpSweep {
    pub name: &'static str,
    pub worst: f64,
    pub cases: usize,
}

impl OpSweep {
    pub fn passed(&self) -> bool {
        self.cases >= CASES && self.worst < TOL
    }
}

fn run<F>(name: &'static str, seed: u64, mut case: F) -> OpSweep
where
    F: FnMut(&mut ChaCha8Rng) -> GradCheck,
{
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..CASES {
        let res = case(&mut r);
        assert!(res.checked > 0, "{name}: nothing checked");
        worst = worst.max(res.max_rel_err);
    }
    OpSweep {
        name,
        worst,
        cases: CASES,
    }
}

pub fn conv3d_grads() -> OpSweep {
    run("conv3d", 1, |r| {
        let k = [1, 3][r.random_range(0..2)];
        let stride = r.random_range(1..=2);
        let mut xs = dims5(r, 4);
        xs[2..].iter_mut().for_each(|d| *d = (*d).max(k));
        let f = r.random_range(1..=3);
        let x = rand_tensor(r, &xs);
        let w = rand_tensor(r, &[f, xs[1], k, k, k]);
        let b = rand_tensor(r, &[f]);
        check(&[x, w, b], H, FLOOR, |g, v| {
            let y = g.conv3d(v[0], v[1], Some(v[2]), stride, k / 2)?;
            project(g, y, 10)
        })
        .unwrap()
    })
}

pub fn instance_norm_grads() -> OpSweep {
    run("instance_norm", 2, |r| {
        let mut s = dims5(r, 3);
        s[4] = s[4].max(2);
        let x = rand_tensor(r, &s);
        let gamma = rand_tensor(r, &[s[1]]);
        let beta = rand_tensor(r, &[s[1]]);
        check(&[x, gamma, beta], H, FLOOR, |g, v| {
            let y = g.instance_norm(v[0], v[1], v[2])?;
            project(g, y, 11)
        })
        .unwrap()
    })
}

pub fn activation_grads() -> OpSweep {
    run("leaky_relu/relu/sigmoid", 3, |r| {
        let s = dims5(r, 3);
        let x = rand_tensor(r, &s);
        check(&[x], H, FLOOR, |g, v| {
            let a = g.leaky_relu(v[0], 0.01);
            let b = g.relu(v[0]);
            let c = g.sigmoid(v[0]);
            let ab = g.add(a, b)?;
            let y = g.add(ab, c)?;
            project(g, y, 12)
        })
        .unwrap()
    })
}

pub fn softmax_grads() -> OpSweep {
    run("softmax/log_softmax", 4, |r| {
        let s = dims5(r, 3);
        let axis = r.random_range(0..5);
        let x = rand_tensor(r, &s);
        check(&[x], H, FLOOR, |g, v| {
            let a = g.softmax(v[0], axis)?;
            let b = g.log_softmax(v[0], axis)?;
            let y = g.add(a, b)?;
            project(g, y, 13)
        })
        .unwrap()
    })
}

pub fn upsample_and_pool_grads() -> OpSweep {
    run("upsample2/max_pool3d/avg_pool3d/global_avg_pool", 5, |r| {
        let mut s = dims5(r, 4);
        s[2..].iter_mut().for_each(|d| *d = (*d).max(2));
        let x = rand_tensor(r, &s);
        check(&[x], H, FLOOR, |g, v| {
            let u = g.upsample2(v[0])?;
            let m = g.max_pool3d(v[0], 2, 2)?;
            let a = g.avg_pool3d(v[0], 2, 2)?;
            let gp = g.global_avg_pool(v[0])?;
            let pu = project(g, u, 14)?;
            let pm = project(g, m, 15)?;
            let pa = project(g, a, 16)?;
            let pg = project(g, gp, 17)?;
            let t = g.add(pu, pm)?;
            let t = g.add(t, pa)?;
            g.add(t, pg)
        })
        .unwrap()
    })
}

pub fn dense_grads() -> OpSweep {
    run("dense", 6, |r| {
        let (n, i, o) = (r.random_range(1..=3), r.random_range(1..=6), r.random_range(1..=4));
        let x = rand_tensor(r, &[n, i]);
        let w = rand_tensor(r, &[o, i]);
        let b = rand_tensor(r, &[o]);
        check(&[x, w, b], H, FLOOR, |g, v| {
            let y = g.dense(v[0], v[1], Some(v[2]))?;
            project(g, y, 18)
        })
        .unwrap()
    })
}

pub fn elementwise_grads() -> OpSweep {
    run("add/sub/mul/div/scale/add_scalar/mean", 7, |r| {
        let s = dims5(r, 3);
        let a = rand_tensor(r, &s);
        let b = rand_tensor(r, &s);
        let c = r.random_range(-2.0..2.0);
        check(&[a, b], H, FLOOR, |g, v| {
            let s1 = g.add(v[0], v[1])?;
            let s2 = g.sub(v[0], v[1])?;
            let s3 = g.mul(s1, s2)?;
            let s4 = g.div(s3, v[1])?;
            let s5 = g.scale(s4, c);
            let s6 = g.add_scalar(s5, c);
            let m = g.mean(s6);
            let p = project(g, s6, 19)?;
            g.add(m, p)
        })
        .unwrap()
    })
}

pub fn structural_grads() -> OpSweep {
    run("concat/narrow/reshape/dropout", 8, |r| {
        let s = dims5(r, 3);
        let mut s2 = s.clone();
        s2[1] = r.random_range(1..=2);
        let a = rand_tensor(r, &s);
        let b = rand_tensor(r, &s2);
        let start = r.random_range(0..s[1]);
        let len = r.random_range(1..=s[1] - start);
        let flat = s.iter().product::<usize>();
        check(&[a, b], H, FLOOR, |g, v| {
            let c = g.concat(&[v[0], v[1]], 1)?;
            let n = g.narrow(c, 1, start, len)?;
            let rs = g.reshape(v[0], &[flat])?;
            let d = g.dropout(v[1], 0.3, true, &[5, 6])?;
            let p1 = project(g, n, 20)?;
            let p2 = project(g, rs, 21)?;
            let p3 = project(g, d, 22)?;
            let t = g.add(p1, p2)?;
            g.add(t, p3)
        })
        .unwrap()
    })
}

fn untrain(e: TrainError) -> TensorError {
    match e {
        TrainError::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

pub fn bce_loss_grads() -> OpSweep {
    run("bce_with_logits", 9, |r| {
        let n = r.random_range(1..=8);
        let x = rand_tensor(r, &[n, 1]);
        let t: Vec<f64> = (0..n).map(|_| r.random_range(0..2) as f64).collect();
        check(&[x], H, FLOOR, |g, v| loss_bce(g, v[0], &t).map_err(untrain)).unwrap()
    })
}

pub fn dice_ce_loss_grads() -> OpSweep {
    run("dice_ce", 10, |r| {
        let mut s = dims5(r, 3);
        s[1] = 2;
        let x = rand_tensor(r, &s);
        let voxels = s[0] * s[2] * s[3] * s[4];
        let t: Vec<f64> = (0..voxels).map(|_| r.random_range(0..2) as f64).collect();
        check(&[x], H, FLOOR, |g, v| loss_dice_ce(g, v[0], &t).map_err(untrain)).unwrap()
    })
}

pub fn all() -> Vec<OpSweep> {
    vec![
        conv3d_grads(),
        instance_norm_grads(),
        activation_grads(),
        softmax_grads(),
        upsample_and_pool_grads(),
        dense_grads(),
        elementwise_grads(),
        structural_grads(),
        bce_loss_grads(),
        dice_ce_loss_grads(),
    ]
}
