//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The process exits 0 even when a criterion fails so that a red result is
//! reported rather than hidden behind a test-harness abort. Set
//! `INVRES_ACCEPTANCE_STRICT=1` to exit 1 on any failure, and
//! `INVRES_ACCEPTANCE_ONLY=3,5` to run a subset.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use invres::config::{Objective, TrainConfig};
use invres::evaluate::evaluate;
use invres::train::train;
use invres_core::autodiff::{profile_memory, run_pass, Graph, GraphBuilder, Op, ParamStore, StoragePolicy};
use invres_core::data::{generate_synthetic, SyntheticConfig};
use invres_core::layers::*;
use invres_core::losses::{cross_entropy_loss, dice_loss, kl_loss, l2_recon_loss, Reduction};
use invres_core::metrics::{dice_score, hausdorff_distance, Mask};
use invres_core::models::{Arch, Model, ModelSpec};
use invres_core::rng::SeededRng;
use invres_core::tensor::{pixel_shuffle3d, pixel_unshuffle3d};
use invres_core::{Scalar, Tensor};

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn jitter<T: Scalar>(store: &mut ParamStore<T>, rng: &mut SeededRng, scale: f64, skip_mix: bool) {
    for id in store.ids().collect::<Vec<_>>() {
        if skip_mix && store.name(id).ends_with(".mix") {
            continue;
        }
        for v in store.get_mut(id).data_mut() {
            *v = T::from_f64(v.as_f64() + scale * rng.normal());
        }
    }
}

// ---------------------------------------------------------------- 1

fn random_coupling_error<T: Scalar>(seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let width = 2 * (1 + rng.below(8));
    let depth = 1 + rng.below(4);
    let shape = [1 + rng.below(2), width, 1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(8)];
    let mut store = ParamStore::<T>::new(seed);
    let block = CouplingBlock::new(&mut store, "c", &shape, depth, ConvInit::He).unwrap();
    jitter(&mut store, &mut rng, 0.1, false);
    let x: Tensor<T> = rng.normal_tensor(&shape, 1.0);
    let y = coupling_forward(&block, &store, &x).unwrap();
    let back = coupling_inverse(&block, &store, &y).unwrap();
    x.max_abs_diff(&back).unwrap()
}

fn coupling_round_trip() -> Outcome {
    let (mut e64, mut e32) = (0.0f64, 0.0f64);
    for seed in 0..100 {
        e64 = e64.max(random_coupling_error::<f64>(seed));
        e32 = e32.max(random_coupling_error::<f32>(seed));
    }
    ensure(e64 <= 1e-11 && e32 <= 1e-5, format!("100 blocks, max err f64 {e64:.2e}, f32 {e32:.2e}"))
}

// ---------------------------------------------------------------- 2

fn pixel_shuffle_bijective() -> Outcome {
    let mut rng = SeededRng::new(2);
    for i in 0..100 {
        let (n, c) = (1 + rng.below(2), 1 + rng.below(3));
        let s = [2 * (1 + rng.below(4)), 2 * (1 + rng.below(4)), 2 * (1 + rng.below(4))];
        let x: Tensor<f64> = rng.normal_tensor(&[n, c, s[0], s[1], s[2]], 1.0);
        let back = pixel_shuffle3d(&pixel_unshuffle3d(&x, 2).unwrap(), 2).unwrap();
        if back != x {
            return Err(format!("shuffle(unshuffle(x)) differs on tensor {i}"));
        }
        let y: Tensor<f64> = rng.normal_tensor(&[n, 8 * c, s[0] / 2, s[1] / 2, s[2] / 2], 1.0);
        let back = pixel_unshuffle3d(&pixel_shuffle3d(&y, 2).unwrap(), 2).unwrap();
        if back != y {
            return Err(format!("unshuffle(shuffle(y)) differs on tensor {i}"));
        }
    }
    Ok("100 tensors bit-identical in both directions".into())
}

// ---------------------------------------------------------------- 3

fn gradient_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    let mut compared = 0;
    for arch in [Arch::PartiallyInvRes, Arch::FullyInvRes] {
        let spec = ModelSpec {
            arch,
            levels: 2,
            base_width: 4,
            blocks_per_level: 2,
            latent_dim: 8,
            patch: [16; 3],
            ..ModelSpec::default()
        };
        let mut model = Model::<f64>::build(&spec).unwrap();
        let mut rng = SeededRng::new(31);
        jitter(model.params_mut(), &mut rng, 0.05, true);
        let image = rng.uniform_tensor(&spec.input_shape(), 0.0, 1.0);
        let eps = model.sample_eps(&mut rng);
        let inputs = model.inputs(image, eps).unwrap();
        let seeds: Vec<Tensor<f64>> = model.graph().output_shapes().iter().map(|s| rng.normal_tensor(s, 1.0)).collect();
        let run = |p| run_pass(model.graph(), model.params(), p, inputs.clone(), seeds.clone(), false).unwrap();
        let store = run(StoragePolicy::Store);
        let inv = run(StoragePolicy::Invertible);
        // biases feeding an instance norm have an analytically zero gradient;
        // those are compared against a floor of 1e-3 of the largest gradient
        let global =
            store.grads.iter().filter_map(|(_, g)| g).flat_map(|g| g.data()).fold(0.0f64, |m, v| m.max(v.abs()));
        for (id, g) in store.grads.iter() {
            let (Some(a), Some(b)) = (g, inv.grads.get(id)) else {
                if g.is_some() != inv.grads.get(id).is_some() {
                    return Err(format!("{} has a gradient under one policy only", model.params().name(id)));
                }
                continue;
            };
            let own = a.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let rel = a.max_abs_diff(b).unwrap() / own.max(1e-3 * global);
            worst = worst.max(rel);
            compared += 1;
        }
    }
    ensure(worst <= 1e-8, format!("{compared} parameter gradients, max relative diff {worst:.2e}"))
}

// ---------------------------------------------------------------- 4

const FD_H: f64 = 1e-5;
const FD_TOL: f64 = 1e-6;

/// Central difference, or `None` when the one-sided slopes disagree because a
/// kink lies within `h`.
fn central(f: impl Fn(f64) -> f64) -> Option<f64> {
    let (fp, f0, fm) = (f(FD_H), f(0.0), f(-FD_H));
    let (fwd, bwd) = ((fp - f0) / FD_H, (f0 - fm) / FD_H);
    ((fwd - bwd).abs() <= 1e-3 * fwd.abs().max(bwd.abs()).max(1.0)).then(|| (fp - fm) / (2.0 * FD_H))
}

#[derive(Default)]
struct FdTally {
    checked: usize,
    skipped: usize,
    worst: f64,
    failures: Vec<String>,
    subjects: BTreeSet<String>,
}

impl FdTally {
    fn record(&mut self, what: &str, fd: Option<f64>, analytic: f64) {
        self.subjects.insert(what.split(['[', ' ']).next().unwrap_or(what).to_string());
        let Some(fd) = fd else {
            self.skipped += 1;
            return;
        };
        self.checked += 1;
        let err = (fd - analytic).abs() / analytic.abs().max(1.0);
        self.worst = self.worst.max(err);
        if err > FD_TOL {
            self.failures.push(format!("{what}: fd {fd:.8e} vs {analytic:.8e}"));
        }
    }
}

fn single_node(name: &str, op: impl Op<f64> + 'static, inputs: &[Tensor<f64>]) -> Graph<f64> {
    let mut b = GraphBuilder::new();
    let ids: Vec<_> = inputs.iter().enumerate().map(|(i, t)| b.input(&format!("in{i}"), t.shape())).collect();
    for o in b.apply_multi(name, op, &ids).unwrap() {
        b.output(o);
    }
    b.build()
}

fn fd_layer(
    t: &mut FdTally,
    name: &str,
    store: &ParamStore<f64>,
    op: impl Op<f64> + 'static,
    inputs: Vec<Tensor<f64>>,
    seed: u64,
) {
    let g = single_node(name, op, &inputs);
    let mut rng = SeededRng::new(seed ^ 0x5eed);
    let ws: Vec<Tensor<f64>> = g.output_shapes().iter().map(|s| rng.normal_tensor(s, 1.0)).collect();
    let loss = |s: &ParamStore<f64>, xs: Vec<Tensor<f64>>| -> f64 {
        let ys = g.evaluate(s, xs).unwrap();
        ys.iter().zip(&ws).map(|(y, w)| y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()).sum()
    };
    let pass = run_pass(&g, store, StoragePolicy::Invertible, inputs.clone(), ws.clone(), false).unwrap();
    for (i, x) in inputs.iter().enumerate() {
        for _ in 0..6 {
            let k = rng.below(x.len());
            let fd = central(|d| {
                let mut xs = inputs.clone();
                xs[i].data_mut()[k] += d;
                loss(store, xs)
            });
            t.record(&format!("{name} input {i}[{k}]"), fd, pass.input_grads[i].data()[k]);
        }
    }
    for id in store.ids() {
        for _ in 0..4 {
            let k = rng.below(store.get(id).len());
            let fd = central(|d| {
                let mut s = store.clone();
                s.get_mut(id).data_mut()[k] += d;
                loss(&s, inputs.clone())
            });
            t.record(&format!("{name} {}[{k}]", store.name(id)), fd, pass.grads.get(id).map_or(0.0, |g| g.data()[k]));
        }
    }
}

fn fd_loss(
    t: &mut FdTally,
    name: &str,
    x: &Tensor<f64>,
    f: impl Fn(&Tensor<f64>) -> (f64, Tensor<f64>),
    rng: &mut SeededRng,
) {
    let (_, grad) = f(x);
    for _ in 0..8 {
        let k = rng.below(x.len());
        let fd = central(|d| {
            let mut y = x.clone();
            y.data_mut()[k] += d;
            f(&y).0
        });
        t.record(&format!("{name}[{k}]"), fd, grad.data()[k]);
    }
}

fn layers_and_losses_fd() -> Outcome {
    let mut t = FdTally::default();
    for seed in [1u64, 2, 3] {
        let mut rng = SeededRng::new(seed);
        let mut randn = |shape: &[usize]| -> Tensor<f64> { rng.normal_tensor(shape, 1.0) };
        let empty = ParamStore::<f64>::new(seed);

        let mut s = ParamStore::new(seed);
        let op = Conv3dOp::new(&mut s, "conv", 2, 3, 3, ConvInit::He).unwrap();
        let x = randn(&[1, 2, 4, 3, 3]);
        jitter(&mut s, &mut SeededRng::new(seed + 10), 0.3, false);
        fd_layer(&mut t, "conv3d", &s, op, vec![x], seed);

        let mut s = ParamStore::new(seed);
        let op = InstanceNormOp::new(&mut s, "norm", 3).unwrap();
        jitter(&mut s, &mut SeededRng::new(seed + 11), 0.3, false);
        fd_layer(&mut t, "instance_norm", &s, op, vec![randn(&[2, 3, 3, 2, 2])], seed);

        let mut s = ParamStore::new(seed);
        let op = LinearOp::new(&mut s, "fc", 4, 3).unwrap();
        jitter(&mut s, &mut SeededRng::new(seed + 12), 0.3, false);
        fd_layer(&mut t, "linear", &s, op, vec![randn(&[2, 4])], seed);

        fd_layer(&mut t, "leaky_relu", &empty, LeakyReluOp::default(), vec![randn(&[1, 2, 3, 3, 3])], seed);
        fd_layer(&mut t, "softmax", &empty, SoftmaxOp, vec![randn(&[2, 3, 2, 2, 2])], seed);
        fd_layer(&mut t, "add", &empty, AddOp, vec![randn(&[1, 2, 2, 2, 2]), randn(&[1, 2, 2, 2, 2])], seed);
        let (mu, lv, eps) = (randn(&[2, 5]), randn(&[2, 5]).scale(0.5), randn(&[2, 5]));
        fd_layer(&mut t, "reparam", &empty, ReparamOp, vec![mu, lv, eps], seed);
        fd_layer(&mut t, "maxpool", &empty, MaxPoolOp { window: 2 }, vec![randn(&[1, 2, 4, 4, 2])], seed);
        fd_layer(&mut t, "trilinear", &empty, TrilinearOp { factor: 2 }, vec![randn(&[1, 2, 3, 2, 2])], seed);
        fd_layer(&mut t, "gap", &empty, GapOp, vec![randn(&[2, 3, 2, 2, 2])], seed);
        fd_layer(&mut t, "reshape", &empty, ReshapeOp { shape: vec![1, 2, 2, 2, 2] }, vec![randn(&[1, 16])], seed);
        fd_layer(&mut t, "split", &empty, SplitOp { at: 1 }, vec![randn(&[1, 3, 2, 2, 2])], seed);
        let (a, b) = (randn(&[1, 1, 2, 2, 2]), randn(&[1, 2, 2, 2, 2]));
        fd_layer(&mut t, "concat", &empty, ConcatOp { at: 1 }, vec![a, b], seed);

        let mut s = ParamStore::new(seed);
        let op = InvertibleResampleOp::new(&mut s, "down", Direction::Down, 16).unwrap();
        fd_layer(&mut t, "invertible_down", &s, op, vec![randn(&[1, 2, 2, 4, 2])], seed);
        let mut s = ParamStore::new(seed);
        let op = InvertibleResampleOp::new(&mut s, "up", Direction::Up, 8).unwrap();
        fd_layer(&mut t, "invertible_up", &s, op, vec![randn(&[1, 8, 1, 2, 1])], seed);

        let mut s = ParamStore::new(seed);
        let op = CouplingBlock::new(&mut s, "cpl", &[1, 4, 3, 3, 3], 2, ConvInit::He).unwrap();
        jitter(&mut s, &mut SeededRng::new(seed + 13), 0.3, false);
        fd_layer(&mut t, "coupling", &s, op, vec![randn(&[1, 4, 3, 3, 3])], seed);

        let mut s = ParamStore::new(seed);
        let mut b = GraphBuilder::new();
        let x = b.input("x", &[1, 2, 4, 4, 4]);
        let p = b.apply("pool", MaxPoolOp { window: 2 }, &[x]).unwrap();
        let c = Conv3dOp::new(&mut s, "blk.conv", 2, 4, 1, ConvInit::He).unwrap();
        let y = b.apply("conv", c, &[p]).unwrap();
        b.output(y);
        jitter(&mut s, &mut SeededRng::new(seed + 14), 0.3, false);
        fd_layer(&mut t, "block", &s, Block::new("down", b.build()), vec![randn(&[1, 2, 4, 4, 4])], seed);

        let mut rng = SeededRng::new(seed + 20);
        let shape = [2, 3, 2, 3, 2];
        let probs: Tensor<f64> = rng.uniform_tensor(&shape, 0.05, 0.95);
        let target = rng.uniform_tensor::<f64>(&shape, 0.0, 1.0).map(|v: f64| v.round());
        fd_loss(&mut t, "dice_loss", &probs, |s| dice_loss(s, &target).unwrap(), &mut rng);
        fd_loss(&mut t, "cross_entropy", &probs, |s| cross_entropy_loss(s, &target).unwrap(), &mut rng);
        let x: Tensor<f64> = rng.normal_tensor(&shape, 1.0);
        let r: Tensor<f64> = rng.normal_tensor(&shape, 1.0);
        fd_loss(&mut t, "l2_recon", &r, |r| l2_recon_loss(r, &x, Reduction::Mean).unwrap(), &mut rng);
        let mu: Tensor<f64> = rng.normal_tensor(&[2, 4], 1.0);
        let lv: Tensor<f64> = rng.normal_tensor(&[2, 4], 0.5);
        fd_loss(
            &mut t,
            "kl_mu",
            &mu,
            |m| {
                let (l, g, _) = kl_loss(m, &lv, 48).unwrap();
                (l, g)
            },
            &mut rng,
        );
        fd_loss(
            &mut t,
            "kl_logvar",
            &lv,
            |v| {
                let (l, _, g) = kl_loss(&mu, v, 48).unwrap();
                (l, g)
            },
            &mut rng,
        );
    }
    let summary = format!(
        "{} layers and losses x 3 seeds, {} coordinates checked ({} skipped at kinks), max rel err {:.2e}",
        t.subjects.len(),
        t.checked,
        t.skipped,
        t.worst
    );
    match t.failures.first() {
        None => Ok(summary),
        Some(f) => Err(format!("{summary}; first failure {f}")),
    }
}

// ---------------------------------------------------------------- 5

const CHAIN: [usize; 5] = [1, 4, 4, 4, 4];
const CHAIN_S: usize = 4 * 64;

fn chain_peak(blocks: usize, policy: StoragePolicy) -> usize {
    let mut store = ParamStore::<f64>::new(7);
    let mut b = GraphBuilder::new();
    let mut v = b.input("x", &CHAIN);
    for i in 0..blocks {
        let block = CouplingBlock::new(&mut store, &format!("c{i}"), &CHAIN, 1, ConvInit::He).unwrap();
        v = b.apply(&format!("c{i}"), block, &[v]).unwrap();
    }
    b.output(v);
    let g = b.build();
    let x = SeededRng::new(8).normal_tensor(&CHAIN, 1.0);
    profile_memory(&g, &store, policy, vec![x]).unwrap().peak_stored_scalars
}

fn memory_regimes() -> Outcome {
    let ls = [1usize, 2, 4, 8, 16];
    let inv: Vec<usize> = ls.iter().map(|&l| chain_peak(l, StoragePolicy::Invertible)).collect();
    let store: Vec<usize> = ls.iter().map(|&l| chain_peak(l, StoragePolicy::Store)).collect();
    let constant = inv.iter().all(|&p| p == inv[0]);
    let slope = (store[1] as i64 - store[0] as i64) / (ls[1] - ls[0]) as i64;
    let affine =
        slope > 0 && ls.iter().zip(&store).all(|(&l, &p)| p as i64 == store[0] as i64 + slope * (l as i64 - 1));
    // k = m = sqrt(L): k segment boundaries stay resident, and one segment of m
    // blocks is rebuilt with full storage, six block-sized buffers per block
    let mut budget_ok = true;
    let mut ck = Vec::new();
    for (l, k, m) in [(4usize, 2usize, 2usize), (16, 4, 4)] {
        let p = chain_peak(l, StoragePolicy::Checkpoint { segment_len: None });
        budget_ok &= p == (k + 6 * m) * CHAIN_S;
        ck.push(p);
    }
    ensure(
        constant && affine && budget_ok,
        format!("invertible {inv:?}, store {store:?} (slope {slope}), checkpoint L=4,16 {ck:?}"),
    )
}

// ---------------------------------------------------------------- 6

fn memory_ordering() -> Outcome {
    let peak = |arch| {
        let spec = ModelSpec { arch, levels: 3, base_width: 8, vae: false, patch: [32; 3], ..ModelSpec::default() };
        let model = Model::<f32>::build(&spec).unwrap();
        let image = SeededRng::new(6).uniform_tensor(&spec.input_shape(), 0.0, 1.0);
        let inputs = model.inputs(image, None).unwrap();
        profile_memory(model.graph(), model.params(), model.default_policy(), inputs).unwrap().peak_stored_scalars
    };
    let (f, p, b) = (peak(Arch::FullyInvRes), peak(Arch::PartiallyInvRes), peak(Arch::Baseline));
    let gap = |lo: usize, hi: usize| 1.0 - lo as f64 / hi as f64;
    ensure(
        f < p && p < b && gap(f, p) >= 0.1 && gap(p, b) >= 0.1,
        format!("fully {f} < partially {p} < baseline {b} (gaps {:.0}%, {:.0}%)", 100.0 * gap(f, p), 100.0 * gap(p, b)),
    )
}

// ---------------------------------------------------------------- 7

fn small_train_config(steps: usize) -> TrainConfig {
    TrainConfig {
        model: ModelSpec {
            levels: 2,
            base_width: 4,
            blocks_per_level: 1,
            latent_dim: 8,
            patch: [8; 3],
            ..ModelSpec::default()
        },
        steps,
        precision: invres_core::Precision::F64,
        ..TrainConfig::default()
    }
}

fn loss_arithmetic() -> Outcome {
    let cfg = small_train_config(50);
    let data =
        generate_synthetic(&SyntheticConfig { num_volumes: 2, size: [16; 3], seed: 70, ..Default::default() }).unwrap();
    let (_, report) = train::<f64>(&cfg, &data, None).unwrap();
    let mut worst = 0.0f64;
    for r in &report.steps {
        let expected = r.ce + r.dice + 0.1 * r.l2 + 0.1 * r.kl;
        worst = worst.max((r.total - expected).abs() / expected.abs());
    }
    ensure(
        report.steps.len() == 50 && worst <= 1e-12,
        format!("{} steps, max relative diff {worst:.2e}", report.steps.len()),
    )
}

// ---------------------------------------------------------------- 8

const GRID: usize = 8;
type Voxel = (usize, usize, usize);

fn voxel_set(rng: &mut SeededRng, density: f64) -> BTreeSet<Voxel> {
    let mut s = BTreeSet::new();
    for z in 0..GRID {
        for y in 0..GRID {
            for x in 0..GRID {
                if rng.uniform() < density {
                    s.insert((z, y, x));
                }
            }
        }
    }
    s
}

fn mask_of(s: &BTreeSet<Voxel>) -> Mask {
    let mut data = vec![false; GRID * GRID * GRID];
    for &(z, y, x) in s {
        data[(z * GRID + y) * GRID + x] = true;
    }
    Mask::new([GRID; 3], data).unwrap()
}

fn boundary_of(s: &BTreeSet<Voxel>) -> Vec<Voxel> {
    let inside = |z: i64, y: i64, x: i64| {
        let ok = |v: i64| (0..GRID as i64).contains(&v);
        ok(z) && ok(y) && ok(x) && s.contains(&(z as usize, y as usize, x as usize))
    };
    s.iter()
        .copied()
        .filter(|&(z, y, x)| {
            let (z, y, x) = (z as i64, y as i64, x as i64);
            [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                .iter()
                .any(|&(dz, dy, dx)| !inside(z + dz, y + dy, x + dx))
        })
        .collect()
}

fn brute_hausdorff(a: &BTreeSet<Voxel>, b: &BTreeSet<Voxel>, sp: [f64; 3]) -> f64 {
    let (ba, bb) = (boundary_of(a), boundary_of(b));
    let dist = |p: Voxel, q: Voxel| {
        let dz = (p.0 as f64 - q.0 as f64) * sp[0];
        let dy = (p.1 as f64 - q.1 as f64) * sp[1];
        let dx = (p.2 as f64 - q.2 as f64) * sp[2];
        (dz * dz + dy * dy + dx * dx).sqrt()
    };
    let directed = |from: &[Voxel], to: &[Voxel]| {
        from.iter().map(|&p| to.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
    };
    directed(&ba, &bb).max(directed(&bb, &ba))
}

fn metric_oracles() -> Outcome {
    let mut rng = SeededRng::new(8);
    let mut hd_pairs = 0;
    for i in 0..200 {
        let a = voxel_set(&mut rng, 0.02 + 0.003 * i as f64);
        let b = voxel_set(&mut rng, 0.15);
        let (ma, mb) = (mask_of(&a), mask_of(&b));
        let expected = if a.is_empty() && b.is_empty() {
            1.0
        } else {
            2.0 * a.intersection(&b).count() as f64 / (a.len() + b.len()) as f64
        };
        let got = dice_score(&ma, &mb).unwrap();
        if got != expected {
            return Err(format!("pair {i}: dice {got} vs {expected}"));
        }
        let sp = [1.0, 0.5 + rng.uniform(), 2.0];
        let hd = hausdorff_distance(&ma, &mb, sp).unwrap();
        match (a.is_empty() || b.is_empty(), hd) {
            (true, None) => {}
            (false, Some(h)) if h == brute_hausdorff(&a, &b, sp) => hd_pairs += 1,
            (_, h) => return Err(format!("pair {i}: hausdorff {h:?} vs {}", brute_hausdorff(&a, &b, sp))),
        }
    }
    Ok(format!("200 pairs: dice exact, hausdorff exact on {hd_pairs} non-empty pairs"))
}

// ---------------------------------------------------------------- 9

fn segmentation_config(policy: StoragePolicy) -> TrainConfig {
    TrainConfig {
        model: ModelSpec {
            arch: Arch::FullyInvRes,
            levels: 3,
            base_width: 8,
            blocks_per_level: 1,
            latent_dim: 16,
            patch: [16; 3],
            seed: 0,
            ..ModelSpec::default()
        },
        steps: 1000,
        seed: 0,
        policy,
        threads: 1,
        ..TrainConfig::default()
    }
}

fn end_to_end_training() -> Outcome {
    let data = generate_synthetic(&SyntheticConfig { num_volumes: 6, seed: 0, ..Default::default() }).unwrap();
    let (train_set, held_out) = data.split_at(4);
    let mut scores = Vec::new();
    for policy in [StoragePolicy::Invertible, StoragePolicy::Store] {
        let cfg = segmentation_config(policy);
        let (model, _) = train::<f32>(&cfg, train_set, None).unwrap();
        scores.push(evaluate(&model, held_out, 1).unwrap().mean_foreground_dice);
    }
    let (inv, store) = (scores[0], scores[1]);
    ensure(
        inv >= 0.8 && (inv - store).abs() <= 0.02,
        format!("held-out mean foreground dice after 1000 steps: invertible {inv:.4}, store {store:.4}"),
    )
}

// ---------------------------------------------------------------- 10

fn vae_sanity() -> Outcome {
    let zeros = Tensor::<f64>::zeros(&[2, 16]).unwrap();
    let (kl, _, _) = kl_loss(&zeros, &zeros, 100).unwrap();
    if kl != 0.0 {
        return Err(format!("KL at the prior is {kl}"));
    }
    let data = generate_synthetic(&SyntheticConfig {
        num_volumes: 1,
        size: [16; 3],
        noise_sigma: 0.0,
        bias_strength: 0.0,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let mut cfg = segmentation_config(StoragePolicy::Invertible);
    cfg.steps = 500;
    cfg.objective = Objective::VaeOnly;
    cfg.adam.lr = 1e-3;
    let (_, report) = train::<f32>(&cfg, &data, None).unwrap();
    let (first, last) = (report.steps[0].l2, report.steps[report.steps.len() - 1].l2);
    ensure(
        first / last >= 10.0,
        format!("KL(0, 0) = 0; reconstruction MSE {first:.4} -> {last:.5} ({:.1}x) in 500 steps", first / last),
    )
}

// ----------------------------------------------------------------

fn main() {
    let criteria = [
        Criterion { id: 1, name: "coupling round trip", budget: Duration::from_secs(30), run: coupling_round_trip },
        Criterion {
            id: 2,
            name: "pixel shuffle bijectivity",
            budget: Duration::from_secs(5),
            run: pixel_shuffle_bijective,
        },
        Criterion { id: 3, name: "gradient equivalence", budget: Duration::from_secs(120), run: gradient_equivalence },
        Criterion { id: 4, name: "finite differences", budget: Duration::from_secs(120), run: layers_and_losses_fd },
        Criterion { id: 5, name: "memory regimes", budget: Duration::from_secs(60), run: memory_regimes },
        Criterion { id: 6, name: "memory ordering", budget: Duration::from_secs(120), run: memory_ordering },
        Criterion { id: 7, name: "loss arithmetic", budget: Duration::from_secs(60), run: loss_arithmetic },
        Criterion { id: 8, name: "metric oracles", budget: Duration::from_secs(60), run: metric_oracles },
        Criterion { id: 9, name: "end-to-end training", budget: Duration::from_secs(1800), run: end_to_end_training },
        Criterion { id: 10, name: "vae branch sanity", budget: Duration::from_secs(300), run: vae_sanity },
    ];
    let only: Option<Vec<u32>> = std::env::var("INVRES_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let strict = std::env::var("INVRES_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");

    let mut failed = 0;
    let mut ran = 0;
    for c in criteria.iter().filter(|c| only.as_ref().is_none_or(|o| o.contains(&c.id))) {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = started.elapsed();
        let (passed, detail) = match outcome {
            Ok(d) if elapsed <= c.budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {}s budget", c.budget.as_secs())),
            Err(d) => (false, d),
        };
        ran += 1;
        failed += usize::from(!passed);
        let verdict = if passed { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {verdict} {} [{:.1}s]: {detail}", c.id, c.name, elapsed.as_secs_f64());
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
