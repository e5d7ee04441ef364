//! 3D U-Net-like backbone.
//!
//! Encoder block `l` runs `[maxpool] → (conv → gn → relu) ×2 → dropout`; the
//! first block skips the pooling. Decoder block `j` upsamples the previous
//! output with a transposed convolution, concatenates the matching encoder
//! features (taken before dropout), and applies two conv/gn/relu sets (one for
//! the first decoder block) followed by dropout. A 1³ convolution and a
//! channel softmax produce per-class probabilities.
//!
//! Decoder block `j` emits `encoder_channels[depth − j]` channels at the
//! resolution of encoder level `depth − 1 − j`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{self, Graph, Mode, NodeId, ParamSet, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::losses;

const GN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub patch_extent: usize,
    pub dropout_p: f64,
    /// Upper bound on groups per normalization; each layer uses `min(this, channels)`.
    pub groupnorm_groups: usize,
}

impl NetworkConfig {
    /// The full-size configuration: five encoder blocks on 64³ patches.
    pub fn paper() -> Self {
        NetworkConfig {
            in_channels: 1,
            out_channels: 2,
            encoder_channels: vec![16, 32, 64, 128, 256],
            patch_extent: 64,
            dropout_p: 0.3,
            groupnorm_groups: 8,
        }
    }

    /// Laptop-sized default.
    pub fn desk() -> Self {
        NetworkConfig {
            encoder_channels: vec![4, 8, 16],
            patch_extent: 16,
            ..Self::paper()
        }
    }

    pub fn depth(&self) -> usize {
        self.encoder_channels.len()
    }

    pub fn groups_for(&self, channels: usize) -> usize {
        self.groupnorm_groups.min(channels)
    }

    pub fn validate(&self) -> Result<()> {
        let ch = &self.encoder_channels;
        if ch.len() < 2 {
            return Err(Error::Config(format!(
                "encoder depth must be at least 2, got {}",
                ch.len()
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 || ch[0] == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if ch.windows(2).any(|w| w[1] != 2 * w[0]) {
            return Err(Error::Config(format!(
                "encoder channels must double at every level, got {ch:?}"
            )));
        }
        let factor = 1usize << (ch.len() - 1);
        if self.patch_extent == 0 || self.patch_extent % factor != 0 {
            return Err(Error::Config(format!(
                "patch extent {} is not divisible by {factor}",
                self.patch_extent
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_p
            )));
        }
        if self.groupnorm_groups == 0 {
            return Err(Error::Config("groupnorm_groups must be positive".into()));
        }
        for &c in ch {
            if c % self.groups_for(c) != 0 {
                return Err(Error::Config(format!(
                    "{} groups do not divide {c} channels",
                    self.groups_for(c)
                )));
            }
        }
        Ok(())
    }
}

/// Per-entry trainability of a parameter set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreezeMask {
    names: Vec<String>,
    frozen: Vec<bool>,
}

impl FreezeMask {
    pub fn from_fn<T: Scalar>(params: &ParamSet<T>, f: impl Fn(&str) -> bool) -> Self {
        FreezeMask {
            names: params.names().map(str::to_string).collect(),
            frozen: params.names().map(f).collect(),
        }
    }

    pub fn is_frozen(&self, index: usize) -> bool {
        self.frozen[index]
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen.iter().filter(|&&f| f).count()
    }

    pub fn trainable_count(&self) -> usize {
        self.frozen.len() - self.frozen_count()
    }

    pub fn len(&self) -> usize {
        self.frozen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frozen.is_empty()
    }

    pub fn frozen_names(&self) -> impl Iterator<Item = &str> {
        self.names
            .iter()
            .zip(&self.frozen)
            .filter(|(_, &f)| f)
            .map(|(n, _)| n.as_str())
    }

    pub fn is_congruent<T: Scalar>(&self, params: &ParamSet<T>) -> bool {
        self.names.len() == params.len() && self.names.iter().zip(params.names()).all(|(a, b)| a == b)
    }
}

/// Freezes encoder and bottleneck blocks; decoder and head stay trainable.
pub fn encoder_bottleneck_freeze_mask<T: Scalar>(params: &ParamSet<T>) -> Result<FreezeMask> {
    for name in params.names() {
        if !(name.starts_with("enc") || name.starts_with("dec") || name.starts_with("head")) {
            return Err(Error::Contract(format!(
                "parameter {name:?} belongs to no known block"
            )));
        }
    }
    Ok(FreezeMask::from_fn(params, |n| n.starts_with("enc")))
}

enum Init {
    HeUniform { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone)]
pub struct SegNet {
    config: NetworkConfig,
    graph: Graph,
    probs: NodeId,
    loss: NodeId,
    bottleneck: NodeId,
    encoder_blocks: Vec<NodeId>,
    decoder_blocks: Vec<NodeId>,
}

struct Builder<'a> {
    graph: &'a mut Graph,
    config: &'a NetworkConfig,
    inits: Vec<Init>,
    convs: usize,
}

impl Builder<'_> {
    fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<NodeId> {
        let id = self.graph.param(name, shape)?;
        self.inits.push(init);
        Ok(id)
    }

    /// conv(3³, pad 1) → groupnorm → relu.
    fn conv_gn_relu(&mut self, x: NodeId, cin: usize, cout: usize) -> Result<NodeId> {
        self.convs += 1;
        let i = self.convs;
        let w = self.param(
            &format!("conv{i}.weight"),
            &[cout, cin, 3, 3, 3],
            Init::HeUniform { fan_in: cin * 27 },
        )?;
        let b = self.param(&format!("conv{i}.bias"), &[cout], Init::Zeros)?;
        let c = self.graph.conv3d(x, w, Some(b), 1)?;
        let gamma = self.param(&format!("gn{i}.weight"), &[cout], Init::Ones)?;
        let beta = self.param(&format!("gn{i}.bias"), &[cout], Init::Zeros)?;
        let n = self
            .graph
            .group_norm(c, gamma, beta, self.config.groups_for(cout), GN_EPS)?;
        self.graph.relu(n)
    }
}

impl SegNet {
    /// Builds the graph only; see [`SegNet::init_params`] for weights.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        Self::build(config).map(|(net, _)| net)
    }

    fn build(config: NetworkConfig) -> Result<(Self, Vec<Init>)> {
        config.validate()?;
        let p = config.patch_extent;
        let ch = config.encoder_channels.clone();
        let depth = ch.len();
        let mut graph = Graph::new();
        let image = graph.input("image", &[config.in_channels, p, p, p])?;
        let mut b = Builder {
            graph: &mut graph,
            config: &config,
            inits: Vec::new(),
            convs: 0,
        };

        let mut skips = Vec::with_capacity(depth);
        let mut encoder_blocks = Vec::with_capacity(depth);
        let mut x = image;
        let mut cin = config.in_channels;
        for (l, &c) in ch.iter().enumerate() {
            b.graph.set_scope(format!("enc{}", l + 1));
            b.convs = 0;
            if l > 0 {
                x = b.graph.maxpool3d(x)?;
            }
            x = b.conv_gn_relu(x, cin, c)?;
            x = b.conv_gn_relu(x, c, c)?;
            skips.push(x);
            x = b.graph.dropout(x, config.dropout_p)?;
            encoder_blocks.push(x);
            cin = c;
        }
        let bottleneck = skips[depth - 1];

        let mut decoder_blocks = Vec::with_capacity(depth - 1);
        for j in 1..depth {
            b.graph.set_scope(format!("dec{j}"));
            b.convs = 0;
            let level = depth - 1 - j;
            let cout = ch[depth - j];
            let w = b.param(
                "up.weight",
                &[cin, cin, 2, 2, 2],
                Init::HeUniform { fan_in: cin },
            )?;
            let bias = b.param("up.bias", &[cin], Init::Zeros)?;
            let up = b.graph.conv_transpose3d(x, w, Some(bias))?;
            let cat = b.graph.concat(up, skips[level])?;
            x = b.conv_gn_relu(cat, cin + ch[level], cout)?;
            if j > 1 {
                x = b.conv_gn_relu(x, cout, cout)?;
            }
            x = b.graph.dropout(x, config.dropout_p)?;
            decoder_blocks.push(x);
            cin = cout;
        }

        b.graph.set_scope("head");
        let w = b.param(
            "conv.weight",
            &[config.out_channels, cin, 1, 1, 1],
            Init::HeUniform { fan_in: cin },
        )?;
        let bias = b.param("conv.bias", &[config.out_channels], Init::Zeros)?;
        let logits = b.graph.conv3d(x, w, Some(bias), 0)?;
        let probs = b.graph.softmax(logits)?;
        let target = b.graph.input("target", &[config.out_channels, p, p, p])?;
        let loss = b.graph.generalized_dice(probs, target, losses::DEFAULT_EPS)?;
        let inits = std::mem::take(&mut b.inits);
        graph.set_scope("");
        graph.set_output(probs);

        Ok((
            SegNet {
                config,
                graph,
                probs,
                loss,
                bottleneck,
                encoder_blocks,
                decoder_blocks,
            },
            inits,
        ))
    }

    /// Seeded He-style uniform initialization; biases zero, norm scales one.
    pub fn init_params<T: Scalar>(&self, init_seed: u64) -> ParamSet<T> {
        let (_, inits) = Self::build(self.config.clone()).expect("config already validated");
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut params = ParamSet::new();
        for ((name, shape), init) in self.graph.param_shapes().iter().zip(inits) {
            let t = match init {
                Init::HeUniform { fan_in } => {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..bound)))
                }
                Init::Zeros => Tensor::zeros(shape),
                Init::Ones => Tensor::full(shape, T::one()),
            };
            params.push(name.clone(), t).expect("graph names are unique");
        }
        params
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn probs_node(&self) -> NodeId {
        self.probs
    }

    /// Scalar Generalized Dice loss node; needs inputs `[image, target]`.
    pub fn loss_node(&self) -> NodeId {
        self.loss
    }

    pub fn bottleneck_node(&self) -> NodeId {
        self.bottleneck
    }

    pub fn encoder_output_shapes(&self) -> Vec<Vec<usize>> {
        self.encoder_blocks
            .iter()
            .map(|&n| self.graph.shape(n).to_vec())
            .collect()
    }

    pub fn decoder_output_shapes(&self) -> Vec<Vec<usize>> {
        self.decoder_blocks
            .iter()
            .map(|&n| self.graph.shape(n).to_vec())
            .collect()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.graph.shape(self.probs).to_vec()
    }

    pub fn patch_shape(&self) -> [usize; 4] {
        let p = self.config.patch_extent;
        [self.config.in_channels, p, p, p]
    }

    fn check_patch<T: Scalar>(&self, patch: &Tensor<T>) -> Result<()> {
        if patch.shape() != self.patch_shape() {
            return Err(Error::shape(
                "image",
                format!("expected {:?}, got {:?}", self.patch_shape(), patch.shape()),
            ));
        }
        Ok(())
    }

    /// Class probabilities `[out_channels, P, P, P]`.
    pub fn predict_patch<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        patch: &Tensor<T>,
        mode: Mode,
        seed: u64,
    ) -> Result<Tensor<T>> {
        self.check_patch(patch)?;
        diffcore::forward_node(
            &self.graph,
            params,
            std::slice::from_ref(patch),
            mode,
            seed,
            self.probs,
        )
    }

    /// Flattened bottleneck activation, evaluated in eval mode.
    pub fn extract_bottleneck_features<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        patch: &Tensor<T>,
    ) -> Result<Vec<T>> {
        self.check_patch(patch)?;
        let t = diffcore::forward_node(
            &self.graph,
            params,
            std::slice::from_ref(patch),
            Mode::Eval,
            0,
            self.bottleneck,
        )?;
        Ok(t.into_data())
    }
}

/// Builds the network graph and a freshly initialized parameter set.
pub fn build_network<T: Scalar>(
    config: NetworkConfig,
    init_seed: u64,
) -> Result<(SegNet, ParamSet<T>)> {
    let net = SegNet::new(config)?;
    let params = net.init_params(init_seed);
    Ok((net, params))
}
