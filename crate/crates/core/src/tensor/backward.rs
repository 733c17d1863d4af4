use ndarray::{Array2, Axis, Zip};

use super::ops::gelu_grad;
use super::{Array, Graph, Op, Tensor};
use crate::error::{Error, Result};

/// Gradients of a scalar root with respect to every node of a graph.
///
/// Intermediate gradients are retained, so relevances at any internal
/// boundary can be read after a single sweep. Nodes that the root does not
/// depend on (or only depends on through a detach) have no entry.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Array>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, t: Tensor) -> Option<&Array> {
        self.grads.get(t.0).and_then(Option::as_ref)
    }

    /// Gradient of `t`, or zeros when nothing flowed into it.
    pub fn wrt(&self, t: Tensor) -> Array {
        self.get(t)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(self.shapes[t.0]))
    }
}

fn accumulate(slot: &mut Option<Array>, delta: Array) {
    match slot {
        Some(g) => *g += &delta,
        None => *slot = Some(delta),
    }
}

impl Graph {
    /// Reverse sweep from a `1×1` root. Deterministic for a fixed graph.
    pub fn backward(&self, root: Tensor) -> Result<Gradients> {
        let shape = self.shape(root);
        if shape != (1, 1) {
            return Err(Error::Usage(format!(
                "backward root must be a 1x1 scalar, got {shape:?}"
            )));
        }
        let nodes = self.nodes();
        let mut grads: Vec<Option<Array>> = vec![None; nodes.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let (lower, upper) = grads.split_at_mut(idx);
            let Some(g) = upper[0].as_ref() else { continue };
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let needs = |t: Tensor| nodes[t.0].requires_grad;
            let val = |t: Tensor| &nodes[t.0].value;
            let mut push = |t: Tensor, delta: Array| {
                if needs(t) {
                    accumulate(&mut lower[t.0], delta);
                }
            };

            match &node.op {
                Op::Leaf | Op::Detach(_) => {}
                Op::MatMul(a, b) => {
                    if needs(*a) {
                        push(*a, g.dot(&val(*b).t()));
                    }
                    if needs(*b) {
                        push(*b, val(*a).t().dot(g));
                    }
                }
                Op::Add(a, b) => {
                    push(*a, g.clone());
                    push(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    push(*a, g.clone());
                    push(*b, -g);
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        push(*a, g * val(*b));
                    }
                    if needs(*b) {
                        push(*b, g * val(*a));
                    }
                }
                Op::Scale(a, c) => push(*a, g * *c),
                Op::AddScalar(a) | Op::Identity(a) => push(*a, g.clone()),
                Op::AddRow(a, row) => {
                    push(*a, g.clone());
                    if needs(*row) {
                        push(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                }
                Op::MulRow(a, row) => {
                    if needs(*a) {
                        push(*a, g * val(*row));
                    }
                    if needs(*row) {
                        push(*row, (g * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                }
                Op::SubCol(a, col) => {
                    push(*a, g.clone());
                    if needs(*col) {
                        push(*col, -g.sum_axis(Axis(1)).insert_axis(Axis(1)));
                    }
                }
                Op::DivCol(a, col) => {
                    let c = val(*col);
                    if needs(*a) {
                        push(*a, g / c);
                    }
                    if needs(*col) {
                        let num = (g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                        push(*col, -num / (c * c));
                    }
                }
                Op::Transpose(a) => push(*a, g.t().to_owned()),
                Op::MeanRows(a) => {
                    let n = val(*a).ncols() as f64;
                    let mut d = Array2::zeros(val(*a).dim());
                    Zip::from(d.rows_mut())
                        .and(g.rows())
                        .for_each(|mut r, gr| r.fill(gr[0] / n));
                    push(*a, d);
                }
                Op::VarRows(a) => {
                    let x = val(*a);
                    let n = x.ncols() as f64;
                    let mut d = x.clone();
                    Zip::from(d.rows_mut())
                        .and(g.rows())
                        .for_each(|mut r, gr| {
                            let mean = r.sum() / n;
                            r.mapv_inplace(|v| gr[0] * 2.0 * (v - mean) / n);
                        });
                    push(*a, d);
                }
                Op::MeanCols(a) => {
                    let (m, n) = val(*a).dim();
                    let row = g / m as f64;
                    push(*a, row.broadcast((m, n)).expect("row broadcast").to_owned());
                }
                Op::Sum(a) => push(*a, Array2::from_elem(val(*a).dim(), g[[0, 0]])),
                Op::Sqrt(a) => push(*a, g / (&node.value * 2.0)),
                Op::Softmax(a, axis) => {
                    let mut d = g.clone();
                    Zip::from(d.lanes_mut(*axis))
                        .and(node.value.lanes(*axis))
                        .for_each(|mut dl, sl| {
                            let dot: f64 = dl.iter().zip(sl.iter()).map(|(x, y)| x * y).sum();
                            Zip::from(&mut dl).and(&sl).for_each(|d, &s| *d = s * (*d - dot));
                        });
                    push(*a, d);
                }
                Op::LogSoftmax(a, axis) => {
                    let mut d = g.clone();
                    Zip::from(d.lanes_mut(*axis))
                        .and(node.value.lanes(*axis))
                        .for_each(|mut dl, yl| {
                            let total = dl.sum();
                            Zip::from(&mut dl)
                                .and(&yl)
                                .for_each(|d, &y| *d -= y.exp() * total);
                        });
                    push(*a, d);
                }
                Op::LayerNormCore {
                    input,
                    scale,
                    detach_scale,
                } => {
                    let n = node.value.ncols() as f64;
                    let mut d = g.clone();
                    for (i, mut row) in d.rows_mut().into_iter().enumerate() {
                        let y = node.value.row(i);
                        let mean_g = row.sum() / n;
                        let alpha = scale[i];
                        if *detach_scale {
                            row.mapv_inplace(|v| alpha * (v - mean_g));
                        } else {
                            let mean_gy = row.dot(&y) / n;
                            Zip::from(&mut row)
                                .and(&y)
                                .for_each(|v, &yv| *v = alpha * (*v - mean_g - yv * mean_gy));
                        }
                    }
                    push(*input, d);
                }
                Op::Relu(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d)
                        .and(val(*a))
                        .for_each(|d, &x| *d = if x > 0.0 { *d } else { 0.0 });
                    push(*a, d);
                }
                Op::Gelu(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d)
                        .and(val(*a))
                        .for_each(|d, &x| *d *= gelu_grad(x));
                    push(*a, d);
                }
                Op::Gather { table, ids } => {
                    let mut d = Array2::zeros(val(*table).dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut dst = d.row_mut(id);
                        dst += &g.row(r);
                    }
                    push(*table, d);
                }
                Op::Element { input, row, col } => {
                    let mut d = Array2::zeros(val(*input).dim());
                    d[[*row, *col]] = g[[0, 0]];
                    push(*input, d);
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.value.dim()).collect();
        Ok(Gradients { grads, shapes })
    }
}
