//! Static computation graphs with eager shape inference.
//!
//! Nodes are appended in topological order; every builder method infers the
//! output shape immediately and refuses to add a node whose operands do not
//! fit, so a finished graph is always shape-consistent.

use super::scalar::Scalar;
use super::tensor::numel;
use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input {
        index: usize,
    },
    Param {
        index: usize,
    },
    /// Stride-1 convolution over a `[C, D, H, W]` tensor with a cubic odd kernel.
    Conv3d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        padding: usize,
    },
    /// Kernel 2, stride 2 transposed convolution (exact factor-2 upsampling).
    ConvTranspose3d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
    },
    /// Kernel 2, stride 2.
    MaxPool3d {
        input: NodeId,
    },
    Relu {
        input: NodeId,
    },
    GroupNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
        eps: f64,
    },
    /// Inverted dropout; identity in eval mode.
    Dropout {
        input: NodeId,
        p: f64,
    },
    /// Concatenation along the channel (leading) axis.
    Concat {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: f64,
    },
    /// Softmax across the leading axis, independently per trailing position.
    Softmax {
        input: NodeId,
    },
    Sum {
        input: NodeId,
    },
    Mean {
        input: NodeId,
    },
    /// Generalized Dice loss of class probabilities against a one-hot target.
    GeneralizedDice {
        probs: NodeId,
        target: NodeId,
        eps: f64,
    },
}

impl Op {
    pub fn operands(&self) -> Vec<NodeId> {
        match *self {
            Op::Input { .. } | Op::Param { .. } => vec![],
            Op::Conv3d {
                input, weight, bias, ..
            }
            | Op::ConvTranspose3d {
                input, weight, bias,
            } => {
                let mut v = vec![input, weight];
                v.extend(bias);
                v
            }
            Op::MaxPool3d { input }
            | Op::Relu { input }
            | Op::Dropout { input, .. }
            | Op::Scale { input, .. }
            | Op::Softmax { input }
            | Op::Sum { input }
            | Op::Mean { input } => vec![input],
            Op::GroupNorm {
                input, gamma, beta, ..
            } => vec![input, gamma, beta],
            Op::Concat { a, b } | Op::Add { a, b } | Op::Mul { a, b } => vec![a, b],
            Op::GeneralizedDice { probs, target, .. } => vec![probs, target],
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Param { .. } => "param",
            Op::Conv3d { .. } => "conv3d",
            Op::ConvTranspose3d { .. } => "conv_transpose3d",
            Op::MaxPool3d { .. } => "maxpool3d",
            Op::Relu { .. } => "relu",
            Op::GroupNorm { .. } => "groupnorm",
            Op::Dropout { .. } => "dropout",
            Op::Concat { .. } => "concat",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Softmax { .. } => "softmax",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::GeneralizedDice { .. } => "generalized_dice",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
    pub name: String,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: Vec<(String, Vec<usize>)>,
    params: Vec<(String, Vec<usize>)>,
    scope: String,
    output: Option<NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Prefix for the names of subsequently added nodes and parameters.
    pub fn set_scope(&mut self, scope: impl Into<String>) {
        self.scope = scope.into();
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input_shapes(&self) -> &[(String, Vec<usize>)] {
        &self.inputs
    }

    pub fn param_shapes(&self) -> &[(String, Vec<usize>)] {
        &self.params
    }

    /// The designated output; defaults to the most recently added node.
    pub fn output(&self) -> Option<NodeId> {
        self.output.or_else(|| self.nodes.len().checked_sub(1).map(NodeId))
    }

    pub fn set_output(&mut self, id: NodeId) {
        self.output = Some(id);
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.0 < self.nodes.len()
    }

    fn scoped(&self, base: &str) -> String {
        if self.scope.is_empty() {
            base.to_string()
        } else {
            format!("{}/{}", self.scope, base)
        }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let id = NodeId(self.nodes.len());
        let name = match &op {
            Op::Input { index } => self.inputs[*index].0.clone(),
            Op::Param { index } => self.params[*index].0.clone(),
            other => self.scoped(&format!("{}#{}", other.kind(), id.0)),
        };
        self.nodes.push(Node { op, shape, name });
        id
    }

    fn pending_name(&self, kind: &str) -> String {
        self.scoped(&format!("{}#{}", kind, self.nodes.len()))
    }

    fn check_operand(&self, kind: &str, id: NodeId) -> Result<&[usize]> {
        if self.contains(id) {
            Ok(&self.nodes[id.0].shape)
        } else {
            Err(Error::shape(
                self.pending_name(kind),
                format!("operand {} does not exist", id.0),
            ))
        }
    }

    pub fn input(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<NodeId> {
        let name = name.into();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::shape(&name, "zero extent"));
        }
        self.inputs.push((name, shape.to_vec()));
        Ok(self.push(
            Op::Input {
                index: self.inputs.len() - 1,
            },
            shape.to_vec(),
        ))
    }

    /// Declares a parameter leaf; its name is prefixed by the current scope.
    pub fn param(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        let name = self.scoped(name);
        if self.params.iter().any(|(n, _)| *n == name) {
            return Err(Error::shape(&name, "duplicate parameter name"));
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::shape(&name, "zero extent"));
        }
        self.params.push((name, shape.to_vec()));
        Ok(self.push(
            Op::Param {
                index: self.params.len() - 1,
            },
            shape.to_vec(),
        ))
    }

    pub fn conv3d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        padding: usize,
    ) -> Result<NodeId> {
        let kind = "conv3d";
        let x = self.check_operand(kind, input)?.to_vec();
        let w = self.check_operand(kind, weight)?.to_vec();
        let err = |msg: String| Err(Error::shape(self.pending_name(kind), msg));
        if x.len() != 4 {
            return err(format!("input must be [C, D, H, W], got {x:?}"));
        }
        if w.len() != 5 || w[2] != w[3] || w[3] != w[4] || w[2] % 2 == 0 {
            return err(format!("weight must be [Cout, Cin, k, k, k] with odd k, got {w:?}"));
        }
        if w[1] != x[0] {
            return err(format!("weight expects {} input channels, input has {}", w[1], x[0]));
        }
        let k = w[2];
        if x[1..].iter().any(|&e| e + 2 * padding < k) {
            return err(format!("kernel {k} with padding {padding} does not fit {x:?}"));
        }
        if let Some(b) = bias {
            let bs = self.check_operand(kind, b)?;
            if bs != [w[0]] {
                return err(format!("bias must be [{}], got {bs:?}", w[0]));
            }
        }
        let out: Vec<usize> = std::iter::once(w[0])
            .chain(x[1..].iter().map(|&e| e + 2 * padding + 1 - k))
            .collect();
        Ok(self.push(
            Op::Conv3d {
                input,
                weight,
                bias,
                padding,
            },
            out,
        ))
    }

    pub fn conv_transpose3d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
    ) -> Result<NodeId> {
        let kind = "conv_transpose3d";
        let x = self.check_operand(kind, input)?.to_vec();
        let w = self.check_operand(kind, weight)?.to_vec();
        let err = |msg: String| Err(Error::shape(self.pending_name(kind), msg));
        if x.len() != 4 {
            return err(format!("input must be [C, D, H, W], got {x:?}"));
        }
        if w.len() != 5 || w[2..] != [2, 2, 2] {
            return err(format!("weight must be [Cin, Cout, 2, 2, 2], got {w:?}"));
        }
        if w[0] != x[0] {
            return err(format!("weight expects {} input channels, input has {}", w[0], x[0]));
        }
        if let Some(b) = bias {
            let bs = self.check_operand(kind, b)?;
            if bs != [w[1]] {
                return err(format!("bias must be [{}], got {bs:?}", w[1]));
            }
        }
        let out = vec![w[1], 2 * x[1], 2 * x[2], 2 * x[3]];
        Ok(self.push(
            Op::ConvTranspose3d {
                input,
                weight,
                bias,
            },
            out,
        ))
    }

    pub fn maxpool3d(&mut self, input: NodeId) -> Result<NodeId> {
        let kind = "maxpool3d";
        let x = self.check_operand(kind, input)?.to_vec();
        if x.len() != 4 || x[1..].iter().any(|&e| e % 2 != 0) {
            return Err(Error::shape(
                self.pending_name(kind),
                format!("input must be [C, D, H, W] with even spatial extents, got {x:?}"),
            ));
        }
        let out = vec![x[0], x[1] / 2, x[2] / 2, x[3] / 2];
        Ok(self.push(Op::MaxPool3d { input }, out))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.check_operand("relu", input)?.to_vec();
        Ok(self.push(Op::Relu { input }, x))
    }

    pub fn group_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
        eps: f64,
    ) -> Result<NodeId> {
        let kind = "groupnorm";
        let x = self.check_operand(kind, input)?.to_vec();
        let g = self.check_operand(kind, gamma)?.to_vec();
        let b = self.check_operand(kind, beta)?.to_vec();
        let err = |msg: String| Err(Error::shape(self.pending_name(kind), msg));
        if x.len() < 2 {
            return err(format!("input must have a channel axis and spatial axes, got {x:?}"));
        }
        if groups == 0 || x[0] % groups != 0 {
            return err(format!("{groups} groups do not divide {} channels", x[0]));
        }
        if g != [x[0]] || b != [x[0]] {
            return err(format!("affine parameters must be [{}]", x[0]));
        }
        Ok(self.push(
            Op::GroupNorm {
                input,
                gamma,
                beta,
                groups,
                eps,
            },
            x,
        ))
    }

    pub fn dropout(&mut self, input: NodeId, p: f64) -> Result<NodeId> {
        let x = self.check_operand("dropout", input)?.to_vec();
        if !(0.0..1.0).contains(&p) {
            return Err(Error::shape(
                self.pending_name("dropout"),
                format!("probability {p} outside [0, 1)"),
            ));
        }
        Ok(self.push(Op::Dropout { input, p }, x))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.check_operand("concat", a)?.to_vec();
        let sb = self.check_operand("concat", b)?.to_vec();
        if sa.len() != sb.len() || sa.is_empty() || sa[1..] != sb[1..] {
            return Err(Error::shape(
                self.pending_name("concat"),
                format!("cannot concatenate {sa:?} and {sb:?} along channels"),
            ));
        }
        let mut out = sa.clone();
        out[0] += sb[0];
        Ok(self.push(Op::Concat { a, b }, out))
    }

    fn same_shape(&self, kind: &str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        let sa = self.check_operand(kind, a)?.to_vec();
        let sb = self.check_operand(kind, b)?;
        if sa != sb {
            return Err(Error::shape(
                self.pending_name(kind),
                format!("operand shapes differ: {sa:?} vs {sb:?}"),
            ));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("add", a, b)?;
        Ok(self.push(Op::Add { a, b }, s))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("mul", a, b)?;
        Ok(self.push(Op::Mul { a, b }, s))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> Result<NodeId> {
        let x = self.check_operand("scale", input)?.to_vec();
        Ok(self.push(Op::Scale { input, factor }, x))
    }

    pub fn softmax(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.check_operand("softmax", input)?.to_vec();
        if x.is_empty() {
            return Err(Error::shape(self.pending_name("softmax"), "scalar input"));
        }
        Ok(self.push(Op::Softmax { input }, x))
    }

    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_operand("sum", input)?;
        Ok(self.push(Op::Sum { input }, Vec::new()))
    }

    pub fn mean(&mut self, input: NodeId) -> Result<NodeId> {
        self.check_operand("mean", input)?;
        Ok(self.push(Op::Mean { input }, Vec::new()))
    }

    pub fn generalized_dice(&mut self, probs: NodeId, target: NodeId, eps: f64) -> Result<NodeId> {
        let s = self.same_shape("generalized_dice", probs, target)?;
        if s.len() < 2 {
            return Err(Error::shape(
                self.pending_name("generalized_dice"),
                format!("expected [classes, ...], got {s:?}"),
            ));
        }
        Ok(self.push(Op::GeneralizedDice { probs, target, eps }, Vec::new()))
    }

    /// Checks a parameter set against the declared leaves.
    pub fn check_params<T: Scalar>(&self, params: &ParamSet<T>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "graph declares {} parameters, set has {}",
                self.params.len(),
                params.len()
            )));
        }
        for (i, (name, shape)) in self.params.iter().enumerate() {
            if params.name(i) != name {
                return Err(Error::Contract(format!(
                    "parameter {i} is {:?}, graph expects {name:?}",
                    params.name(i)
                )));
            }
            if params.tensor(i).shape() != shape.as_slice() {
                return Err(Error::shape(
                    name,
                    format!("expected {shape:?}, got {:?}", params.tensor(i).shape()),
                ));
            }
        }
        Ok(())
    }

    /// Scalars held by all parameter leaves.
    pub fn num_param_scalars(&self) -> usize {
        self.params.iter().map(|(_, s)| numel(s)).sum()
    }
}
