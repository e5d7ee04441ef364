use rand::Rng;

use super::{MetaMode, TrainConfig};
use crate::diffcore::{self, GradSet, Graph, Mode, NodeId, ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::segnet::{FreezeMask, SegNet};

/// A scalar training objective with first and second-order access.
pub trait Objective<T: Scalar> {
    fn value_and_grad(&self, params: &ParamSet<T>) -> Result<(T, GradSet<T>)>;

    /// Value, gradient, and `H·v` at `params`.
    fn grad_and_hvp(
        &self,
        params: &ParamSet<T>,
        v: &GradSet<T>,
    ) -> Result<(T, GradSet<T>, GradSet<T>)>;
}

/// One training example with its own dropout seed.
#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub image: Tensor<T>,
    pub target: Tensor<T>,
    pub seed: u64,
}

/// Mean per-sample segmentation loss over a batch.
pub struct BatchObjective<'a, T> {
    pub net: &'a SegNet,
    pub samples: &'a [Sample<T>],
}

impl<T: Scalar> BatchObjective<'_, T> {
    fn accumulate(
        &self,
        mut each: impl FnMut(&Sample<T>) -> Result<(T, GradSet<T>, Option<GradSet<T>>)>,
    ) -> Result<(T, GradSet<T>, Option<GradSet<T>>)> {
        if self.samples.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let mut total = T::zero();
        let mut grad: Option<GradSet<T>> = None;
        let mut hv: Option<GradSet<T>> = None;
        for s in self.samples {
            let (l, g, h) = each(s)?;
            total += l;
            grad = Some(match grad {
                None => g,
                Some(acc) => acc.axpy(T::one(), &g)?,
            });
            if let Some(h) = h {
                hv = Some(match hv {
                    None => h,
                    Some(acc) => acc.axpy(T::one(), &h)?,
                });
            }
        }
        let scale = T::from_f64(1.0 / self.samples.len() as f64);
        Ok((
            total * scale,
            grad.expect("non-empty").scaled(scale),
            hv.map(|h| h.scaled(scale)),
        ))
    }

    fn inputs(s: &Sample<T>) -> [Tensor<T>; 2] {
        [s.image.clone(), s.target.clone()]
    }
}

impl<T: Scalar> Objective<T> for BatchObjective<'_, T> {
    fn value_and_grad(&self, params: &ParamSet<T>) -> Result<(T, GradSet<T>)> {
        let g = self.net.graph();
        let (l, grad, _) = self.accumulate(|s| {
            let (l, grad) =
                diffcore::gradient(g, params, &Self::inputs(s), Mode::Train, s.seed, self.net.loss_node())?;
            Ok((l, grad, None))
        })?;
        Ok((l, grad))
    }

    fn grad_and_hvp(
        &self,
        params: &ParamSet<T>,
        v: &GradSet<T>,
    ) -> Result<(T, GradSet<T>, GradSet<T>)> {
        let g = self.net.graph();
        let (l, grad, hv) = self.accumulate(|s| {
            let (l, grad, hv) = diffcore::gradient_and_hvp(
                g,
                params,
                &Self::inputs(s),
                Mode::Train,
                s.seed,
                self.net.loss_node(),
                v,
            )?;
            Ok((l, grad, Some(hv)))
        })?;
        Ok((l, grad, hv.expect("hvp requested")))
    }
}

/// A scalar node of an arbitrary graph with fixed inputs.
pub struct GraphObjective<'a, T> {
    pub graph: &'a Graph,
    pub loss: NodeId,
    pub inputs: Vec<Tensor<T>>,
    pub mode: Mode,
    pub seed: u64,
}

impl<T: Scalar> Objective<T> for GraphObjective<'_, T> {
    fn value_and_grad(&self, params: &ParamSet<T>) -> Result<(T, GradSet<T>)> {
        diffcore::gradient(self.graph, params, &self.inputs, self.mode, self.seed, self.loss)
    }

    fn grad_and_hvp(
        &self,
        params: &ParamSet<T>,
        v: &GradSet<T>,
    ) -> Result<(T, GradSet<T>, GradSet<T>)> {
        diffcore::gradient_and_hvp(self.graph, params, &self.inputs, self.mode, self.seed, self.loss, v)
    }
}

/// Unweighted mean of several objectives.
pub struct MeanObjective<O>(pub Vec<O>);

impl<T: Scalar, O: Objective<T>> Objective<T> for MeanObjective<O> {
    fn value_and_grad(&self, params: &ParamSet<T>) -> Result<(T, GradSet<T>)> {
        let mut parts = self.0.iter().map(|o| o.value_and_grad(params));
        let (mut v, mut g) = parts
            .next()
            .ok_or_else(|| Error::Data("no meta-train domains".into()))??;
        for p in parts {
            let (pv, pg) = p?;
            v += pv;
            g = g.axpy(T::one(), &pg)?;
        }
        let scale = T::from_f64(1.0 / self.0.len() as f64);
        Ok((v * scale, g.scaled(scale)))
    }

    fn grad_and_hvp(
        &self,
        params: &ParamSet<T>,
        v: &GradSet<T>,
    ) -> Result<(T, GradSet<T>, GradSet<T>)> {
        let mut parts = self.0.iter().map(|o| o.grad_and_hvp(params, v));
        let (mut val, mut g, mut h) = parts
            .next()
            .ok_or_else(|| Error::Data("no meta-train domains".into()))??;
        for p in parts {
            let (pv, pg, ph) = p?;
            val += pv;
            g = g.axpy(T::one(), &pg)?;
            h = h.axpy(T::one(), &ph)?;
        }
        let scale = T::from_f64(1.0 / self.0.len() as f64);
        Ok((val * scale, g.scaled(scale), h.scaled(scale)))
    }
}

/// Meta-train / meta-test partition of the source domain indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainSplit {
    pub meta_train: Vec<usize>,
    pub meta_test: Vec<usize>,
}

/// Picks one source domain uniformly as meta-test; the rest are meta-train.
pub fn meta_split(source_domains: &[usize], rng: &mut impl Rng) -> Result<DomainSplit> {
    if source_domains.len() < 2 {
        return Err(Error::Config(format!(
            "meta split needs at least 2 source domains, got {}",
            source_domains.len()
        )));
    }
    let test = rng.gen_range(0..source_domains.len());
    Ok(DomainSplit {
        meta_train: source_domains
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != test)
            .map(|(_, &d)| d)
            .collect(),
        meta_test: vec![source_domains[test]],
    })
}

/// Plain gradient step `θ − α·∇F`.
pub fn inner_update<T: Scalar>(
    params: &ParamSet<T>,
    grad_f: &GradSet<T>,
    alpha: f64,
) -> Result<ParamSet<T>> {
    params.ensure_congruent(grad_f, "inner_update")?;
    params.axpy(T::from_f64(-alpha), grad_f)
}

#[derive(Debug, Clone)]
pub struct MetaGradient<T> {
    pub grad: GradSet<T>,
    /// Meta-train loss at `θ`.
    pub f_value: T,
    /// Meta-test loss at `θ′`; absent when `β = 0`.
    pub g_value: Option<T>,
}

/// Gradient of `F(θ) + β·G(θ − α∇F(θ))`, exactly or with the Hessian term dropped.
pub fn meta_gradient<T: Scalar>(
    f: &impl Objective<T>,
    g: &impl Objective<T>,
    params: &ParamSet<T>,
    config: &TrainConfig,
) -> Result<MetaGradient<T>> {
    let (f_value, grad_f) = f.value_and_grad(params)?;
    if config.beta == 0.0 {
        return Ok(MetaGradient {
            grad: grad_f,
            f_value,
            g_value: None,
        });
    }
    let adapted = inner_update(params, &grad_f, config.alpha)?;
    let (g_value, grad_g) = g.value_and_grad(&adapted)?;
    let correction = match config.meta_mode {
        MetaMode::FirstOrder => grad_g,
        MetaMode::Exact => {
            let (_, _, hv) = f.grad_and_hvp(params, &grad_g)?;
            grad_g.axpy(T::from_f64(-config.alpha), &hv)?
        }
    };
    Ok(MetaGradient {
        grad: grad_f.axpy(T::from_f64(config.beta), &correction)?,
        f_value,
        g_value: Some(g_value),
    })
}

/// SGD momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub buffers: ParamSet<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        OptimizerState {
            buffers: params.zeros_like(),
        }
    }
}

/// `g ← grad + wd·θ; buf ← momentum·buf + g; θ ← θ − γ·lr·buf`, skipping frozen entries.
pub fn outer_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grad: &GradSet<T>,
    state: &mut OptimizerState<T>,
    config: &TrainConfig,
    freeze: Option<&FreezeMask>,
) -> Result<()> {
    params.ensure_congruent(grad, "outer_step gradient")?;
    params.ensure_congruent(&state.buffers, "outer_step optimizer state")?;
    if let Some(mask) = freeze {
        if !mask.is_congruent(params) {
            return Err(Error::Contract("freeze mask does not match parameters".into()));
        }
    }
    let wd = T::from_f64(config.weight_decay);
    let mom = T::from_f64(config.momentum);
    let step = T::from_f64(config.gamma * config.lr);
    for i in 0..params.len() {
        if freeze.is_some_and(|m| m.is_frozen(i)) {
            continue;
        }
        let g = grad.tensor(i).data();
        let buf = state.buffers.tensor_mut(i).data_mut();
        let theta = params.tensor_mut(i).data_mut();
        for ((t, b), &gi) in theta.iter_mut().zip(buf.iter_mut()).zip(g) {
            let gi = gi + wd * *t;
            *b = mom * *b + gi;
            *t -= step * *b;
        }
    }
    Ok(())
}
