//! Brute-force reference implementations and check drivers shared by the
//! integration tests and the acceptance suite.
#![allow(dead_code)]

use mldgseg_core::data::{linear_index, LabelMap, Volume};
use mldgseg_core::diffcore::{
    finite_diff_gradient, gradient, max_relative_error, Graph, Mode, NodeId, ParamSet, Tensor,
};
use mldgseg_core::inference::sliding_window_fuse;
use mldgseg_core::segnet::{NetworkConfig, SegNet};
use mldgseg_core::trainer::{meta_gradient, GraphObjective, MetaMode, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------- autodiff

pub const PRIMITIVES: [&str; 14] = [
    "conv3d",
    "conv_transpose3d",
    "maxpool3d",
    "relu",
    "group_norm",
    "dropout",
    "concat",
    "add",
    "mul",
    "scale",
    "softmax",
    "sum",
    "mean",
    "generalized_dice",
];

/// Uniform in ±[0.05, 1] so kinks (ReLU at zero) are never within a FD step.
fn away_from_zero(rng: &mut ChaCha8Rng) -> f64 {
    let m = rng.gen_range(0.05..1.0);
    if rng.gen() {
        m
    } else {
        -m
    }
}

/// Max normwise relative error between the reverse-mode gradient and central
/// differences for one primitive, with random shapes-fixed inputs.
pub fn primitive_gradient_error(op: &str, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::new();
    let mut mode = Mode::Eval;
    let mut extra_inputs: Vec<Tensor<f64>> = Vec::new();
    let x = g.param("x", &[2, 4, 4, 4]).unwrap();
    let out = match op {
        "conv3d" => {
            let w = g.param("w", &[3, 2, 3, 3, 3]).unwrap();
            let b = g.param("b", &[3]).unwrap();
            g.conv3d(x, w, Some(b), 1).unwrap()
        }
        "conv_transpose3d" => {
            let w = g.param("w", &[2, 3, 2, 2, 2]).unwrap();
            let b = g.param("b", &[3]).unwrap();
            g.conv_transpose3d(x, w, Some(b)).unwrap()
        }
        "maxpool3d" => g.maxpool3d(x).unwrap(),
        "relu" => g.relu(x).unwrap(),
        "group_norm" => {
            let ga = g.param("gamma", &[2]).unwrap();
            let be = g.param("beta", &[2]).unwrap();
            g.group_norm(x, ga, be, 1 + (seed % 2) as usize, 1e-5).unwrap()
        }
        "dropout" => {
            mode = Mode::Train;
            g.dropout(x, 0.3).unwrap()
        }
        "concat" => {
            let y = g.param("y", &[1, 4, 4, 4]).unwrap();
            g.concat(x, y).unwrap()
        }
        "add" => {
            let y = g.param("y", &[2, 4, 4, 4]).unwrap();
            g.add(x, y).unwrap()
        }
        "mul" => {
            let y = g.param("y", &[2, 4, 4, 4]).unwrap();
            g.mul(x, y).unwrap()
        }
        "scale" => g.scale(x, -1.7).unwrap(),
        "softmax" => g.softmax(x).unwrap(),
        "sum" => g.sum(x).unwrap(),
        "mean" => g.mean(x).unwrap(),
        "generalized_dice" => {
            let t = g.input("target", &[2, 4, 4, 4]).unwrap();
            let labels: Vec<usize> = (0..64).map(|_| rng.gen_range(0..2)).collect();
            extra_inputs.push(Tensor::from_fn(&[2, 4, 4, 4], |i| (labels[i % 64] == i / 64) as u8 as f64));
            g.generalized_dice(x, t, 1e-5).unwrap()
        }
        other => panic!("unknown primitive {other}"),
    };
    let loss = if g.shape(out).iter().all(|&e| e == 1) {
        out
    } else {
        let shape = g.shape(out).to_vec();
        let r = g.input("weights", &shape).unwrap();
        extra_inputs.insert(0, Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0)));
        let m = g.mul(out, r).unwrap();
        g.sum(m).unwrap()
    };
    let mut params = ParamSet::new();
    for (name, shape) in g.param_shapes() {
        let t = if op == "generalized_dice" {
            Tensor::from_fn(shape, |_| rng.gen_range(0.1..0.9))
        } else {
            Tensor::from_fn(shape, |_| away_from_zero(&mut rng))
        };
        params.push(name.clone(), t).unwrap();
    }
    // Inputs are declared in graph order: weights (if any) before target.
    let (_, grad) = gradient(&g, &params, &extra_inputs, mode, seed, loss).unwrap();
    let fd = finite_diff_gradient(
        |q| Ok(gradient(&g, q, &extra_inputs, mode, seed, loss)?.0),
        &params,
        1e-5,
    )
    .unwrap();
    max_relative_error(&grad.flatten(), &fd.flatten(), 1e-8)
}

// ------------------------------------------------------------ meta-gradient

/// A random conv/GN/pool/tconv/softmax/GDL net; returns the graph, its loss
/// node, and the parameter count.
pub fn random_tiny_network(rng: &mut ChaCha8Rng) -> (Graph, NodeId) {
    let c = rng.gen_range(1..=3);
    let groups = if c % 2 == 0 { 2 } else { 1 };
    let mut g = Graph::new();
    let x = g.input("image", &[1, 4, 4, 4]).unwrap();
    let w1 = g.param("w1", &[c, 1, 3, 3, 3]).unwrap();
    let b1 = g.param("b1", &[c]).unwrap();
    let c1 = g.conv3d(x, w1, Some(b1), 1).unwrap();
    let ga = g.param("gamma", &[c]).unwrap();
    let be = g.param("beta", &[c]).unwrap();
    let n1 = g.group_norm(c1, ga, be, groups, 1e-5).unwrap();
    let r1 = g.relu(n1).unwrap();
    let p1 = g.maxpool3d(r1).unwrap();
    let wt = g.param("wt", &[c, c, 2, 2, 2]).unwrap();
    let bt = g.param("bt", &[c]).unwrap();
    let up = g.conv_transpose3d(p1, wt, Some(bt)).unwrap();
    let cat = g.concat(up, r1).unwrap();
    let wh = g.param("wh", &[2, 2 * c, 1, 1, 1]).unwrap();
    let bh = g.param("bh", &[2]).unwrap();
    let logits = g.conv3d(cat, wh, Some(bh), 0).unwrap();
    let probs = g.softmax(logits).unwrap();
    let target = g.input("target", &[2, 4, 4, 4]).unwrap();
    let loss = g.generalized_dice(probs, target, 1e-5).unwrap();
    (g, loss)
}

pub fn random_segmentation_inputs(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let image = Tensor::from_fn(&[1, 4, 4, 4], |_| rng.gen_range(0.0..1.0));
    let labels: Vec<usize> = (0..64).map(|_| rng.gen_range(0..2)).collect();
    let target = Tensor::from_fn(&[2, 4, 4, 4], |i| (labels[i % 64] == i / 64) as u8 as f64);
    vec![image, target]
}

/// Exact meta-gradient vs central differences of `θ ↦ F(θ) + β·G(θ − α∇F(θ))`
/// on one random network. Returns (relative error, parameter count).
pub fn meta_gradient_fd_error(seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (graph, loss) = random_tiny_network(&mut rng);
    let mut params = ParamSet::new();
    for (name, shape) in graph.param_shapes() {
        params
            .push(name.clone(), Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0)))
            .unwrap();
    }
    let f_in = random_segmentation_inputs(&mut rng);
    let g_in = random_segmentation_inputs(&mut rng);
    let cfg = TrainConfig {
        alpha: rng.gen_range(0.2..1.0),
        beta: rng.gen_range(0.2..1.0),
        meta_mode: MetaMode::Exact,
        ..TrainConfig::default()
    };
    let obj = |inputs: &[Tensor<f64>]| GraphObjective {
        graph: &graph,
        loss,
        inputs: inputs.to_vec(),
        mode: Mode::Eval,
        seed: 0,
    };
    let analytic = meta_gradient(&obj(&f_in), &obj(&g_in), &params, &cfg).unwrap().grad;
    let composite = |p: &ParamSet<f64>| -> mldgseg_core::Result<f64> {
        let (fv, gf) = gradient(&graph, p, &f_in, Mode::Eval, 0, loss)?;
        let adapted = p.axpy(-cfg.alpha, &gf)?;
        let (gv, _) = gradient(&graph, &adapted, &g_in, Mode::Eval, 0, loss)?;
        Ok(fv + cfg.beta * gv)
    };
    let fd = finite_diff_gradient(composite, &params, 1e-6).unwrap();
    (
        max_relative_error(&analytic.flatten(), &fd.flatten(), 1e-8),
        params.num_scalars(),
    )
}

fn half_a_theta_squared(a: f64) -> (Graph, NodeId) {
    let mut g = Graph::new();
    let t = g.param("theta", &[1]).unwrap();
    let sq = g.mul(t, t).unwrap();
    let half = g.scale(sq, 0.5 * a).unwrap();
    let loss = g.sum(half).unwrap();
    (g, loss)
}

/// Meta-gradients of F = ½·0.5·θ², G = ½·2·θ² at θ = 1 with α = β = 1:
/// (exact, first-order). Closed forms are 1.0 and 1.5.
pub fn quadratic_meta_gradients() -> (f64, f64) {
    let (fg, fl) = half_a_theta_squared(0.5);
    let (gg, gl) = half_a_theta_squared(2.0);
    let mut theta = ParamSet::new();
    theta.push("theta", Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
    let obj = |graph, loss| GraphObjective {
        graph,
        loss,
        inputs: vec![],
        mode: Mode::Eval,
        seed: 0,
    };
    let run = |mode| {
        let cfg = TrainConfig {
            alpha: 1.0,
            beta: 1.0,
            meta_mode: mode,
            ..TrainConfig::default()
        };
        meta_gradient(&obj(&fg, fl), &obj(&gg, gl), &theta, &cfg).unwrap().grad.flatten()[0]
    };
    (run(MetaMode::Exact), run(MetaMode::FirstOrder))
}

// ------------------------------------------------------------------ metrics

pub fn random_mask_pair(rng: &mut ChaCha8Rng, max_extent: usize) -> (LabelMap, LabelMap, [f64; 3]) {
    let ex = [0; 3].map(|_| rng.gen_range(2..=max_extent));
    let spacing = [0; 3].map(|_| rng.gen_range(0.5..2.0f32));
    let mut draw = || {
        let density = rng.gen_range(0.05..0.6);
        let n: usize = ex.iter().product();
        let mut v: Vec<u8> = (0..n).map(|_| rng.gen_bool(density) as u8).collect();
        if v.iter().all(|&b| b == 0) {
            let i = rng.gen_range(0..n);
            v[i] = 1;
        }
        LabelMap::new(ex, spacing, v).unwrap()
    };
    let a = draw();
    let b = draw();
    (a, b, spacing.map(f64::from))
}

pub fn brute_dice(a: &LabelMap, b: &LabelMap) -> f64 {
    let na = a.voxels().iter().filter(|&&v| v == 1).count();
    let nb = b.voxels().iter().filter(|&&v| v == 1).count();
    let both = a
        .voxels()
        .iter()
        .zip(b.voxels())
        .filter(|(&x, &y)| x == 1 && y == 1)
        .count();
    if na + nb == 0 {
        100.0
    } else {
        100.0 * 2.0 * both as f64 / (na + nb) as f64
    }
}

fn brute_surface(m: &LabelMap) -> Vec<[usize; 3]> {
    let ex = m.extents();
    let mut out = Vec::new();
    for z in 0..ex[2] {
        for y in 0..ex[1] {
            for x in 0..ex[0] {
                if m.at(x, y, z) == 0 {
                    continue;
                }
                let on_border = x == 0 || y == 0 || z == 0 || x + 1 == ex[0] || y + 1 == ex[1] || z + 1 == ex[2];
                let touches_background = !on_border
                    && (m.at(x - 1, y, z) == 0
                        || m.at(x + 1, y, z) == 0
                        || m.at(x, y - 1, z) == 0
                        || m.at(x, y + 1, z) == 0
                        || m.at(x, y, z - 1) == 0
                        || m.at(x, y, z + 1) == 0);
                if on_border || touches_background {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

/// All-pairs nearest surface distances, averaged over both surfaces.
pub fn brute_assd(a: &LabelMap, b: &LabelMap, spacing: [f64; 3]) -> f64 {
    let sa = brute_surface(a);
    let sb = brute_surface(b);
    let dist = |p: &[usize; 3], q: &[usize; 3]| {
        (0..3)
            .map(|i| ((p[i] as f64 - q[i] as f64) * spacing[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let nearest = |p: &[usize; 3], set: &[[usize; 3]]| set.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min);
    let total: f64 = sa.iter().map(|p| nearest(p, &sb)).sum::<f64>() + sb.iter().map(|p| nearest(p, &sa)).sum::<f64>();
    total / (sa.len() + sb.len()) as f64
}

/// Two single voxels one unit apart along x, unit spacing.
pub fn one_voxel_offset_fixture() -> (LabelMap, LabelMap) {
    let ex = [5, 5, 5];
    let mut a = vec![0u8; 125];
    let mut b = vec![0u8; 125];
    a[linear_index(ex, 2, 2, 2)] = 1;
    b[linear_index(ex, 3, 2, 2)] = 1;
    (
        LabelMap::new(ex, [1.0; 3], a).unwrap(),
        LabelMap::new(ex, [1.0; 3], b).unwrap(),
    )
}

// ----------------------------------------------------------------- wilcoxon

/// Two-sided exact p-value by enumerating all 2ⁿ sign assignments of the
/// midranks of the nonzero differences.
pub fn enumerated_wilcoxon_p(x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|&v| v != 0.0).collect();
    let n = d.len();
    let ranks: Vec<f64> = d
        .iter()
        .map(|di| {
            let below = d.iter().filter(|dj| dj.abs() < di.abs()).count() as f64;
            let tied = d.iter().filter(|dj| dj.abs() == di.abs()).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let w = w_plus.min(total - w_plus);
    let mut at_most = 0u64;
    for signs in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| signs >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s <= w + 1e-9 {
            at_most += 1;
        }
    }
    (2.0 * at_most as f64 / (1u64 << n) as f64).min(1.0)
}

/// Paired sample of length n with integer-valued entries so ties and zero
/// differences occur; guaranteed at least one nonzero difference.
pub fn random_paired_sample(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    loop {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..12) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..12) as f64).collect();
        if x.iter().zip(&y).any(|(a, b)| a != b) {
            return (x, y);
        }
    }
}

// ---------------------------------------------------------------- inference

/// Union-find over every pair of foreground voxels at Chebyshev distance 1;
/// keeps the largest set, ties to the one holding the smallest linear index.
pub fn brute_largest_component(m: &LabelMap) -> LabelMap {
    let ex = m.extents();
    let fg: Vec<usize> = (0..m.len()).filter(|&i| m.voxels()[i] == 1).collect();
    if fg.is_empty() {
        return m.clone();
    }
    let coord = |i: usize| [i % ex[0], (i / ex[0]) % ex[1], i / (ex[0] * ex[1])];
    let mut parent: Vec<usize> = (0..fg.len()).collect();
    fn root(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for a in 0..fg.len() {
        let pa = coord(fg[a]);
        for b in a + 1..fg.len() {
            let pb = coord(fg[b]);
            if (0..3).all(|k| pa[k].abs_diff(pb[k]) <= 1) {
                let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let roots: Vec<usize> = (0..fg.len()).map(|i| root(&mut parent, i)).collect();
    let mut size = vec![0usize; fg.len()];
    for &r in &roots {
        size[r] += 1;
    }
    // Roots are the smallest member index, so scanning ascending breaks ties correctly.
    let best = (0..fg.len()).filter(|&r| roots[r] == r).fold(None, |acc: Option<usize>, r| match acc {
        Some(b) if size[b] >= size[r] => Some(b),
        _ => Some(r),
    });
    let mut v = vec![0u8; m.len()];
    for (i, &r) in roots.iter().enumerate() {
        if Some(r) == best {
            v[fg[i]] = 1;
        }
    }
    LabelMap::new(ex, m.spacing(), v).unwrap()
}

pub fn random_blobby_mask(rng: &mut ChaCha8Rng, max_extent: usize) -> LabelMap {
    let ex = [0; 3].map(|_| rng.gen_range(1..=max_extent));
    let density = rng.gen_range(0.05..0.45);
    let n: usize = ex.iter().product();
    LabelMap::new(ex, [1.0; 3], (0..n).map(|_| rng.gen_bool(density) as u8).collect()).unwrap()
}

pub fn random_volume(rng: &mut ChaCha8Rng, ex: [usize; 3]) -> Volume {
    let n: usize = ex.iter().product();
    Volume::new(ex, [1.0; 3], (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

/// A volume exactly one patch in size fused with any stride reproduces the
/// single forward pass bit for bit.
pub fn single_window_equivalence(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = NetworkConfig {
        encoder_channels: vec![2, 4],
        patch_extent: 8,
        ..NetworkConfig::desk()
    };
    let p = cfg.patch_extent;
    let net = SegNet::new(cfg).unwrap();
    let params = net.init_params::<f64>(seed);
    let vol = random_volume(&mut rng, [p; 3]);
    let x = Tensor::from_fn(&[1, p, p, p], |i| vol.voxels()[i] as f64);
    let direct = net.predict_patch(&params, &x, Mode::Eval, 0).unwrap();
    (1..=p).all(|stride| {
        let fused = mldgseg_core::inference::sliding_window_probabilities(&net, &params, &vol, stride).unwrap();
        fused.counts.iter().all(|&c| c == 1) && fused.probs == direct.data()
    })
}

/// A predictor emitting the same dyadic probabilities everywhere fuses to
/// exactly those probabilities on every voxel for random extents and strides.
pub fn constant_stitching_invariance(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patch = rng.gen_range(2..=6);
    let stride = rng.gen_range(1..=patch);
    let ex = [0; 3].map(|_| rng.gen_range(1..=16));
    let vol = random_volume(&mut rng, ex);
    let p3 = patch * patch * patch;
    let fused = sliding_window_fuse(&vol, patch, 2, stride, |_| {
        Ok((0..2 * p3).map(|i| if i < p3 { 0.25 } else { 0.75 }).collect())
    })
    .unwrap();
    let n = vol.len();
    fused.counts.iter().all(|&c| c >= 1)
        && fused.probs[..n].iter().all(|&v| v == 0.25)
        && fused.probs[n..].iter().all(|&v| v == 0.75)
        && fused.labels(vol.spacing()).unwrap().voxels().iter().all(|&l| l == 1)
}
