//! Define-by-run reverse-mode automatic differentiation over dense 2-D arrays.
//!
//! A [`Graph`] is an append-only list of nodes. Every operation appends one
//! node holding its forward value and enough information to run its local
//! backward rule. Inputs always precede their consumers, so append order is
//! a valid topological order and [`Graph::backward`] is a single reverse
//! sweep.
//!
//! All values are `f64` matrices. Vectors are `1×n` rows, scalars are `1×1`.
//!
//! [`Graph::detach`] returns a node with the same value whose backward rule
//! contributes nothing upstream. Nodes whose every path to a gradient-tracked
//! leaf runs through a detach are marked as not requiring gradients and are
//! skipped entirely during the sweep.

mod backward;
mod ops;

pub use backward::Gradients;
pub use ndarray::Axis;

use ndarray::Array2;

/// Dense row-major `f64` matrix used for every value and gradient.
pub type Array = Array2<f64>;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tensor(usize);

impl Tensor {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    AddRow(Tensor, Tensor),
    MulRow(Tensor, Tensor),
    SubCol(Tensor, Tensor),
    DivCol(Tensor, Tensor),
    Transpose(Tensor),
    MeanRows(Tensor),
    VarRows(Tensor),
    MeanCols(Tensor),
    Sum(Tensor),
    Sqrt(Tensor),
    Softmax(Tensor, Axis),
    LogSoftmax(Tensor, Axis),
    LayerNormCore {
        input: Tensor,
        /// `1 / sqrt(eps + Var[x])` for every row.
        scale: Vec<f64>,
        detach_scale: bool,
    },
    Detach(Tensor),
    Identity(Tensor),
    Relu(Tensor),
    Gelu(Tensor),
    Gather {
        table: Tensor,
        ids: Vec<usize>,
    },
    Element {
        input: Tensor,
        row: usize,
        col: usize,
    },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<Tensor> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) | MulRow(a, b)
            | SubCol(a, b) | DivCol(a, b) => vec![*a, *b],
            Scale(a, _) | AddScalar(a) | Transpose(a) | MeanRows(a) | VarRows(a)
            | MeanCols(a) | Sum(a) | Sqrt(a) | Softmax(a, _) | LogSoftmax(a, _) | Detach(a)
            | Identity(a) | Relu(a) | Gelu(a) => vec![*a],
            LayerNormCore { input, .. } => vec![*input],
            Gather { table, .. } => vec![*table],
            Element { input, .. } => vec![*input],
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) value: Array,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Append-only computation graph. Build one per forward pass.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input or parameter node.
    pub fn leaf(&mut self, value: Array, requires_grad: bool) -> Tensor {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Tensor(self.nodes.len() - 1)
    }

    /// Adds a leaf that never receives gradients.
    pub fn constant(&mut self, value: Array) -> Tensor {
        self.leaf(value, false)
    }

    pub fn value(&self, t: Tensor) -> &Array {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: Tensor) -> (usize, usize) {
        self.nodes[t.0].value.dim()
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.0].requires_grad
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, t: Tensor) -> f64 {
        self.nodes[t.0].value[[0, 0]]
    }

    pub(crate) fn push(&mut self, value: Array, op: Op) -> Tensor {
        let requires_grad = match &op {
            Op::Detach(_) => false,
            op => op.inputs().iter().any(|t| self.nodes[t.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Tensor(self.nodes.len() - 1)
    }

    pub(crate) fn nodes(&self) -> &[Node] {
        &self.nodes
    }
}

#[cfg(test)]
mod tests;
