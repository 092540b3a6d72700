//! Central-difference checks for every layer, at the level of single-node graphs.

use invres_core::autodiff::{run_pass, GraphBuilder, Op, ParamStore, StoragePolicy};
use invres_core::layers::*;
use invres_core::rng::SeededRng;
use invres_core::Tensor;

mod common;
use common::central_difference;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;

/// Checks d<w, op(inputs)>/d(input, param) against central differences at
/// a sample of coordinates.
fn check(name: &str, store: &ParamStore<f64>, op: impl Op<f64> + 'static, inputs: Vec<Tensor<f64>>, seed: u64) {
    let mut b = GraphBuilder::new();
    let ids: Vec<_> = inputs.iter().enumerate().map(|(i, t)| b.input(&format!("in{i}"), t.shape())).collect();
    let outs = b.apply_multi(name, op, &ids).unwrap();
    for &o in &outs {
        b.output(o);
    }
    let g = b.build();
    let mut rng = SeededRng::new(seed ^ 0xabc);
    let ws: Vec<Tensor<f64>> = g.output_shapes().iter().map(|s| rng.normal_tensor(s, 1.0)).collect();
    let loss = |s: &ParamStore<f64>, xs: Vec<Tensor<f64>>| -> f64 {
        let ys = g.evaluate(s, xs).unwrap();
        ys.iter().zip(&ws).map(|(y, w)| y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()).sum()
    };
    for policy in [StoragePolicy::Store, StoragePolicy::Invertible] {
        let pass = run_pass(&g, store, policy, inputs.clone(), ws.clone(), true).unwrap();
        let compare = |what: String, fd: f64, an: f64| {
            assert!((fd - an).abs() <= TOL * an.abs().max(1.0), "{name} {what} ({policy:?}): fd {fd} vs analytic {an}");
        };
        for (i, x) in inputs.iter().enumerate() {
            for _ in 0..6 {
                let k = rng.below(x.len());
                let at = |d: f64| {
                    let mut xs = inputs.clone();
                    xs[i].data_mut()[k] += d;
                    loss(store, xs)
                };
                if let Some(fd) = central_difference(at, H) {
                    compare(format!("input {i}[{k}]"), fd, pass.input_grads[i].data()[k]);
                }
            }
        }
        for id in store.ids() {
            for _ in 0..4 {
                let k = rng.below(store.get(id).len());
                let at = |d: f64| {
                    let mut s = store.clone();
                    s.get_mut(id).data_mut()[k] += d;
                    loss(&s, inputs.clone())
                };
                if let Some(fd) = central_difference(at, H) {
                    let an = pass.grads.get(id).map_or(0.0, |g| g.data()[k]);
                    compare(format!("{}[{k}]", store.name(id)), fd, an);
                }
            }
        }
    }
}

fn randn(rng: &mut SeededRng, shape: &[usize]) -> Tensor<f64> {
    rng.normal_tensor(shape, 1.0)
}

/// Perturbs freshly initialized parameters so zero/one initial values do not
/// hide errors.
fn jitter(store: &mut ParamStore<f64>, rng: &mut SeededRng) {
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.get_mut(id).data_mut() {
            *v += 0.3 * rng.normal();
        }
    }
}

const SEEDS: [u64; 3] = [1, 2, 3];

#[test]
fn conv3d() {
    for seed in SEEDS {
        let mut rng = SeededRng::new(seed);
        let mut store = ParamStore::new(seed);
        let op = Conv3dOp::new(&mut store, "conv", 2, 3, 3, ConvInit::He).unwrap();
        jitter(&mut store, &mut rng);
        check("conv", &store, op, vec![randn(&mut rng, &[2, 2, 4, 3, 5])], seed);
        let mut store = ParamStore::new(seed);
        let op = Conv3dOp::new(&mut store, "pw", 3, 2, 1, ConvInit::He).unwrap();
        check("pointwise", &store, op, vec![randn(&mut rng, &[1, 3, 2, 3, 4])], seed);
    }
}

#[test]
fn instance_norm() {
    for seed in SEEDS {
        let mut rng = SeededRng::new(seed);
        let mut store = ParamStore::new(seed);
        let op = InstanceNormOp::new(&mut store, "norm", 3).unwrap();
        jitter(&mut store, &mut rng);
        check("norm", &store, op, vec![randn(&mut rng, &[2, 3, 3, 2, 2])], seed);
    }
}

#[test]
fn activations_and_elementwise() {
    for seed in SEEDS {
        let mut rng = SeededRng::new(seed);
        let store = ParamStore::new(seed);
        check("leaky", &store, LeakyReluOp::default(), vec![randn(&mut rng, &[1, 2, 3, 3, 3])], seed);
        check("softmax", &store, SoftmaxOp, vec![randn(&mut rng, &[2, 3, 2, 2, 2])], seed);
        check("add", &store, AddOp, vec![randn(&mut rng, &[1, 2, 2, 2, 2]), randn(&mut rng, &[1, 2, 2, 2, 2])], seed);
        let mu = randn(&mut rng, &[2, 5]);
        let lv = randn(&mut rng, &[2, 5]).scale(0.5);
        check("reparam", &store, ReparamOp, vec![mu, lv, randn(&mut rng, &[2, 5])], seed);
    }
}

#[test]
fn resampling_and_reshaping() {
    for seed in SEEDS {
        let mut rng = SeededRng::new(seed);
        let store = ParamStore::new(seed);
        check("maxpool", &store, MaxPoolOp { window: 2 }, vec![randn(&mut rng, &[1, 2, 4, 4, 2])], seed);
        check("trilinear", &store, TrilinearOp { factor: 2 }, vec![randn(&mut rng, &[1, 2, 3, 2, 2])], seed);
        check("gap", &store, GapOp, vec![randn(&mut rng, &[2, 3, 2, 2, 2])], seed);
        check("reshape", &store, ReshapeOp { shape: vec![1, 2, 2, 2, 2] }, vec![randn(&mut rng, &[1, 16])], seed);
        check("split", &store, SplitOp { at: 1 }, vec![randn(&mut rng, &[1, 3, 2, 2, 2])], seed);
        check(
            "concat",
            &store,
            ConcatOp { at: 1 },
            vec![randn(&mut rng, &[1, 1, 2, 2, 2]), randn(&mut rng, &[1, 2, 2, 2, 2])],
            seed,
        );
    }
}

#[test]
fn linear() {
    for seed in SEEDS {
        let mut rng = SeededRng::new(seed);
        let mut store = ParamStore::new(seed);
        let op = LinearOp::new(&mut store, "fc", 4, 3).unwrap();
        jitter(&mut store, &mut rng);
        check("linear", &store, op, vec![randn(&mut rng, &[2, 4])], seed);
    }
}

#[test]
fn invertible_resampling() {
    for seed in SEEDS {
        let mut rng = SeededRng::new(seed);
        let mut store = ParamStore::new(seed);
        let down = InvertibleResampleOp::new(&mut store, "down", Direction::Down, 16).unwrap();
        check("down", &store, down, vec![randn(&mut rng, &[1, 2, 2, 4, 2])], seed);
        let mut store = ParamStore::new(seed);
        let up = InvertibleResampleOp::new(&mut store, "up", Direction::Up, 8).unwrap();
        check("up", &store, up, vec![randn(&mut rng, &[1, 8, 1, 2, 1])], seed);
    }
}

#[test]
fn coupling_block() {
    for seed in SEEDS {
        let mut rng = SeededRng::new(seed);
        let mut store = ParamStore::new(seed);
        let op = CouplingBlock::new(&mut store, "cpl", &[1, 4, 3, 3, 3], 2, ConvInit::He).unwrap();
        jitter(&mut store, &mut rng);
        check("coupling", &store, op, vec![randn(&mut rng, &[1, 4, 3, 3, 3])], seed);
    }
}

#[test]
fn composite_block() {
    for seed in SEEDS {
        let mut rng = SeededRng::new(seed);
        let mut store = ParamStore::new(seed);
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[1, 2, 4, 4, 4]);
        let p = b.apply("pool", MaxPoolOp { window: 2 }, &[x]).unwrap();
        let c = Conv3dOp::new(&mut store, "blk.conv", 2, 4, 1, ConvInit::He).unwrap();
        let y = b.apply("conv", c, &[p]).unwrap();
        b.output(y);
        let block = Block::new("down", b.build());
        jitter(&mut store, &mut rng);
        check("block", &store, block, vec![randn(&mut rng, &[1, 2, 4, 4, 4])], seed);
    }
}
