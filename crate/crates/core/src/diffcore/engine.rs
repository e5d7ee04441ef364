use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId, Op};
use super::kernels::{self, ConvGeom};
use super::scalar::{Dual, Scalar};
use super::tensor::Tensor;
use super::{GradSet, ParamSet};
use crate::error::{Error, Result};
use crate::losses;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keep-mask for a dropout node; identical for every element type.
pub(crate) fn dropout_keep(seed: u64, node: usize, n: usize, p: f64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(node as u64)));
    (0..n).map(|_| rng.gen::<f64>() >= p).collect()
}

enum Aux<T> {
    None,
    Argmax(Vec<u32>),
    Keep(Vec<bool>, f64),
    Norm { means: Vec<T>, rstds: Vec<T> },
}

struct Tape<T> {
    values: Vec<Option<Tensor<T>>>,
    aux: Vec<Aux<T>>,
}

/// Nodes reachable backwards from `target`.
fn needed(graph: &Graph, target: NodeId) -> Vec<bool> {
    let mut need = vec![false; target.0 + 1];
    need[target.0] = true;
    for i in (0..=target.0).rev() {
        if need[i] {
            for o in graph.nodes()[i].op.operands() {
                need[o.0] = true;
            }
        }
    }
    need
}

fn check_target(graph: &Graph, target: NodeId) -> Result<()> {
    if graph.contains(target) {
        Ok(())
    } else {
        Err(Error::Contract(format!("node {} is not in the graph", target.0)))
    }
}

fn run_forward<T: Scalar>(
    graph: &Graph,
    params: &ParamSet<T>,
    inputs: &[Tensor<T>],
    mode: Mode,
    seed: u64,
    target: NodeId,
) -> Result<Tape<T>> {
    check_target(graph, target)?;
    graph.check_params(params)?;
    let need = needed(graph, target);
    let nodes = graph.nodes();

    // Validate every consumed input before doing any numeric work.
    for (i, node) in nodes[..=target.0].iter().enumerate() {
        if let (true, Op::Input { index }) = (need[i], &node.op) {
            let t = inputs.get(*index).ok_or_else(|| {
                Error::Contract(format!("input {:?} (#{index}) was not supplied", node.name))
            })?;
            if t.shape() != node.shape.as_slice() {
                return Err(Error::shape(
                    &node.name,
                    format!("expected {:?}, got {:?}", node.shape, t.shape()),
                ));
            }
        }
    }

    let mut values: Vec<Option<Tensor<T>>> = Vec::with_capacity(target.0 + 1);
    let mut aux = Vec::with_capacity(target.0 + 1);
    for (i, node) in nodes[..=target.0].iter().enumerate() {
        if !need[i] {
            values.push(None);
            aux.push(Aux::None);
            continue;
        }
        let val = |id: NodeId| -> &Tensor<T> {
            values[id.0].as_ref().expect("operand evaluated before use")
        };
        let mut extra = Aux::None;
        let shape = node.shape.clone();
        let data: Vec<T> = match &node.op {
            Op::Input { index } => inputs[*index].data().to_vec(),
            Op::Param { index } => params.tensor(*index).data().to_vec(),
            Op::Conv3d {
                input,
                weight,
                bias,
                padding,
            } => {
                let x = val(*input);
                let w = val(*weight);
                let g = ConvGeom::new(x.shape(), w.shape(), *padding);
                kernels::conv3d_forward(&g, x.data(), w.data(), bias.map(|b| val(b).data()))
            }
            Op::ConvTranspose3d {
                input,
                weight,
                bias,
            } => {
                let x = val(*input);
                let w = val(*weight);
                kernels::conv_transpose3d_forward(
                    x.shape(),
                    w.shape()[1],
                    x.data(),
                    w.data(),
                    bias.map(|b| val(b).data()),
                )
            }
            Op::MaxPool3d { input } => {
                let x = val(*input);
                let (y, arg) = kernels::maxpool3d_forward(x.shape(), x.data());
                extra = Aux::Argmax(arg);
                y
            }
            Op::Relu { input } => val(*input)
                .data()
                .iter()
                .map(|&v| if v.re() > 0.0 { v } else { T::zero() })
                .collect(),
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                eps,
            } => {
                let x = val(*input);
                let (y, means, rstds) = kernels::group_norm_forward(
                    x.shape(),
                    *groups,
                    *eps,
                    x.data(),
                    val(*gamma).data(),
                    val(*beta).data(),
                );
                extra = Aux::Norm { means, rstds };
                y
            }
            Op::Dropout { input, p } => {
                let x = val(*input);
                match mode {
                    Mode::Eval => x.data().to_vec(),
                    Mode::Train => {
                        let keep = dropout_keep(seed, i, x.numel(), *p);
                        let scale = T::from_f64(1.0 / (1.0 - p));
                        let y = x
                            .data()
                            .iter()
                            .zip(&keep)
                            .map(|(&v, &k)| if k { v * scale } else { T::zero() })
                            .collect();
                        extra = Aux::Keep(keep, *p);
                        y
                    }
                }
            }
            Op::Concat { a, b } => {
                let mut d = val(*a).data().to_vec();
                d.extend_from_slice(val(*b).data());
                d
            }
            Op::Add { a, b } => val(*a)
                .data()
                .iter()
                .zip(val(*b).data())
                .map(|(&x, &y)| x + y)
                .collect(),
            Op::Mul { a, b } => val(*a)
                .data()
                .iter()
                .zip(val(*b).data())
                .map(|(&x, &y)| x * y)
                .collect(),
            Op::Scale { input, factor } => {
                let f = T::from_f64(*factor);
                val(*input).data().iter().map(|&v| v * f).collect()
            }
            Op::Softmax { input } => {
                let x = val(*input);
                kernels::softmax_forward(x.shape(), x.data())
            }
            Op::Sum { input } => vec![val(*input).data().iter().copied().sum()],
            Op::Mean { input } => {
                let x = val(*input);
                vec![x.data().iter().copied().sum::<T>() / T::from_f64(x.numel() as f64)]
            }
            Op::GeneralizedDice { probs, target, eps } => {
                let p = val(*probs);
                vec![losses::gdl_value(
                    p.shape()[0],
                    p.data(),
                    val(*target).data(),
                    *eps,
                )]
            }
        };
        let t = Tensor::new(shape, data).expect("kernel output matches inferred shape");
        if !matches!(node.op, Op::Input { .. } | Op::Param { .. }) && !t.all_finite() {
            return Err(Error::Numerics {
                node: node.name.clone(),
            });
        }
        values.push(Some(t));
        aux.push(extra);
    }
    Ok(Tape { values, aux })
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, shape: &[usize], data: Vec<T>) {
    match slot {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(data) {
                *a += b;
            }
        }
        None => *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape")),
    }
}

fn run_backward<T: Scalar>(
    graph: &Graph,
    params: &ParamSet<T>,
    tape: &Tape<T>,
    loss: NodeId,
) -> Result<GradSet<T>> {
    let nodes = graph.nodes();
    let n = loss.0 + 1;
    let mut requires = vec![false; n];
    for i in 0..n {
        if tape.values[i].is_none() {
            continue;
        }
        requires[i] = match nodes[i].op {
            Op::Param { .. } => true,
            Op::Input { .. } => false,
            ref op => op.operands().iter().any(|o| requires[o.0]),
        };
    }

    let mut out = params.zeros_like();
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
    grads[loss.0] = Some(Tensor::full(&nodes[loss.0].shape, T::one()));

    for i in (0..n).rev() {
        let Some(dy) = grads[i].take() else { continue };
        if !requires[i] {
            continue;
        }
        if !dy.all_finite() {
            return Err(Error::Numerics {
                node: format!("{} (gradient)", nodes[i].name),
            });
        }
        let val = |id: NodeId| tape.values[id.0].as_ref().expect("evaluated");
        let shape_of = |id: NodeId| nodes[id.0].shape.as_slice();
        macro_rules! push {
            ($id:expr, $data:expr) => {{
                let id: NodeId = $id;
                if requires[id.0] {
                    let d = $data;
                    accumulate(&mut grads[id.0], shape_of(id), d);
                }
            }};
        }
        match &nodes[i].op {
            Op::Input { .. } => {}
            Op::Param { index } => {
                *out.tensor_mut(*index) = dy;
            }
            Op::Conv3d {
                input,
                weight,
                bias,
                padding,
            } => {
                let x = val(*input);
                let w = val(*weight);
                let g = ConvGeom::new(x.shape(), w.shape(), *padding);
                let need = (
                    requires[input.0],
                    requires[weight.0],
                    bias.is_some_and(|b| requires[b.0]),
                );
                let r = kernels::conv3d_backward(&g, x.data(), w.data(), dy.data(), need);
                if let Some(dx) = r.dx {
                    push!(*input, dx);
                }
                if let Some(dw) = r.dw {
                    push!(*weight, dw);
                }
                if let (Some(b), Some(db)) = (bias, r.db) {
                    push!(*b, db);
                }
            }
            Op::ConvTranspose3d {
                input,
                weight,
                bias,
            } => {
                let x = val(*input);
                let w = val(*weight);
                let need = (
                    requires[input.0],
                    requires[weight.0],
                    bias.is_some_and(|b| requires[b.0]),
                );
                let r = kernels::conv_transpose3d_backward(
                    x.shape(),
                    w.shape()[1],
                    x.data(),
                    w.data(),
                    dy.data(),
                    need,
                );
                if let Some(dx) = r.dx {
                    push!(*input, dx);
                }
                if let Some(dw) = r.dw {
                    push!(*weight, dw);
                }
                if let (Some(b), Some(db)) = (bias, r.db) {
                    push!(*b, db);
                }
            }
            Op::MaxPool3d { input } => {
                let Aux::Argmax(arg) = &tape.aux[i] else {
                    unreachable!()
                };
                push!(*input, {
                    let mut dx = vec![T::zero(); val(*input).numel()];
                    for (&a, &g) in arg.iter().zip(dy.data()) {
                        dx[a as usize] += g;
                    }
                    dx
                });
            }
            Op::Relu { input } => {
                push!(
                    *input,
                    val(*input)
                        .data()
                        .iter()
                        .zip(dy.data())
                        .map(|(&x, &g)| if x.re() > 0.0 { g } else { T::zero() })
                        .collect()
                );
            }
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                ..
            } => {
                let Aux::Norm { means, rstds } = &tape.aux[i] else {
                    unreachable!()
                };
                let x = val(*input);
                let (dx, dg, db) = kernels::group_norm_backward(
                    x.shape(),
                    *groups,
                    x.data(),
                    val(*gamma).data(),
                    means,
                    rstds,
                    dy.data(),
                );
                push!(*input, dx);
                push!(*gamma, dg);
                push!(*beta, db);
            }
            Op::Dropout { input, .. } => match &tape.aux[i] {
                Aux::Keep(keep, p) => {
                    let scale = T::from_f64(1.0 / (1.0 - p));
                    push!(
                        *input,
                        dy.data()
                            .iter()
                            .zip(keep)
                            .map(|(&g, &k)| if k { g * scale } else { T::zero() })
                            .collect()
                    );
                }
                _ => push!(*input, dy.data().to_vec()),
            },
            Op::Concat { a, b } => {
                let na = val(*a).numel();
                push!(*a, dy.data()[..na].to_vec());
                push!(*b, dy.data()[na..].to_vec());
            }
            Op::Add { a, b } => {
                push!(*a, dy.data().to_vec());
                push!(*b, dy.data().to_vec());
            }
            Op::Mul { a, b } => {
                let (va, vb) = (val(*a), val(*b));
                push!(
                    *a,
                    dy.data().iter().zip(vb.data()).map(|(&g, &y)| g * y).collect()
                );
                push!(
                    *b,
                    dy.data().iter().zip(va.data()).map(|(&g, &x)| g * x).collect()
                );
            }
            Op::Scale { input, factor } => {
                let f = T::from_f64(*factor);
                push!(*input, dy.data().iter().map(|&g| g * f).collect());
            }
            Op::Softmax { input } => {
                let y = tape.values[i].as_ref().expect("evaluated");
                push!(
                    *input,
                    kernels::softmax_backward(y.shape(), y.data(), dy.data())
                );
            }
            Op::Sum { input } => {
                let g = dy.data()[0];
                push!(*input, vec![g; val(*input).numel()]);
            }
            Op::Mean { input } => {
                let m = val(*input).numel();
                let g = dy.data()[0] / T::from_f64(m as f64);
                push!(*input, vec![g; m]);
            }
            Op::GeneralizedDice { probs, target, eps } => {
                let p = val(*probs);
                push!(
                    *probs,
                    losses::gdl_backward(
                        p.shape()[0],
                        p.data(),
                        val(*target).data(),
                        *eps,
                        dy.data()[0],
                    )
                );
            }
        }
    }
    if !out.all_finite() {
        return Err(Error::Numerics {
            node: "parameter gradient".into(),
        });
    }
    Ok(out)
}

/// Evaluates the graph's designated output.
pub fn forward<T: Scalar>(
    graph: &Graph,
    params: &ParamSet<T>,
    inputs: &[Tensor<T>],
    mode: Mode,
    rng_seed: u64,
) -> Result<Tensor<T>> {
    let out = graph
        .output()
        .ok_or_else(|| Error::Contract("empty graph".into()))?;
    forward_node(graph, params, inputs, mode, rng_seed, out)
}

/// Evaluates an arbitrary node; only its ancestors are computed.
pub fn forward_node<T: Scalar>(
    graph: &Graph,
    params: &ParamSet<T>,
    inputs: &[Tensor<T>],
    mode: Mode,
    rng_seed: u64,
    node: NodeId,
) -> Result<Tensor<T>> {
    let mut tape = run_forward(graph, params, inputs, mode, rng_seed, node)?;
    Ok(tape.values[node.0].take().expect("target evaluated"))
}

/// Loss value and exact reverse-mode gradient w.r.t. every parameter.
pub fn gradient<T: Scalar>(
    graph: &Graph,
    params: &ParamSet<T>,
    inputs: &[Tensor<T>],
    mode: Mode,
    rng_seed: u64,
    loss: NodeId,
) -> Result<(T, GradSet<T>)> {
    check_target(graph, loss)?;
    if !graph.node(loss).shape.iter().all(|&e| e == 1) {
        return Err(Error::Contract(format!(
            "loss node {:?} has shape {:?}, expected a scalar",
            graph.node(loss).name,
            graph.node(loss).shape
        )));
    }
    let tape = run_forward(graph, params, inputs, mode, rng_seed, loss)?;
    let value = tape.values[loss.0].as_ref().expect("evaluated").data()[0];
    let grads = run_backward(graph, params, &tape, loss)?;
    Ok((value, grads))
}

/// Gradient together with `H·v`, by forward-mode differentiation of the
/// reverse pass: parameters carry `v` as their tangent.
pub fn gradient_and_hvp<T: Scalar>(
    graph: &Graph,
    params: &ParamSet<T>,
    inputs: &[Tensor<T>],
    mode: Mode,
    rng_seed: u64,
    loss: NodeId,
    v: &GradSet<T>,
) -> Result<(T, GradSet<T>, GradSet<T>)> {
    params.ensure_congruent(v, "hessian_vector_product")?;
    let lifted = params.zip_map(v, |p, t| Dual::new(p, t))?;
    let dual_inputs: Vec<Tensor<Dual<T>>> =
        inputs.iter().map(|t| t.map(Dual::constant)).collect();
    let (value, g) = gradient(graph, &lifted, &dual_inputs, mode, rng_seed, loss)?;
    Ok((value.re, g.map(|d| d.re), g.map(|d| d.du)))
}

pub fn hessian_vector_product<T: Scalar>(
    graph: &Graph,
    params: &ParamSet<T>,
    inputs: &[Tensor<T>],
    mode: Mode,
    rng_seed: u64,
    loss: NodeId,
    v: &GradSet<T>,
) -> Result<GradSet<T>> {
    gradient_and_hvp(graph, params, inputs, mode, rng_seed, loss, v).map(|(_, _, hv)| hv)
}

/// Central-difference gradient of an arbitrary scalar function. Test oracle.
pub fn finite_diff_gradient<F>(
    mut loss_fn: F,
    params: &ParamSet<f64>,
    step: f64,
) -> Result<GradSet<f64>>
where
    F: FnMut(&ParamSet<f64>) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::Contract(format!("finite-difference step {step} must be > 0")));
    }
    let flat = params.flatten();
    let mut out = Vec::with_capacity(flat.len());
    let mut probe = flat.clone();
    for i in 0..flat.len() {
        probe[i] = flat[i] + step;
        let up = loss_fn(&params.with_flat(&probe)?)?;
        probe[i] = flat[i] - step;
        let down = loss_fn(&params.with_flat(&probe)?)?;
        probe[i] = flat[i];
        out.push((up - down) / (2.0 * step));
    }
    params.with_flat(&out)
}
