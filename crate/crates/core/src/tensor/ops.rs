use ndarray::{Array2, Axis, Zip};

use super::{Array, Graph, Op, Tensor};
use crate::error::{Error, Result};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Numerically stable softmax along `axis`: every lane along `axis` sums to one.
pub(crate) fn softmax_array(x: &Array, axis: Axis) -> Array {
    let mut out = x.clone();
    for mut lane in out.lanes_mut(axis) {
        let max = lane.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        lane.mapv_inplace(|v| (v - max).exp());
        let sum = lane.sum();
        lane.mapv_inplace(|v| v / sum);
    }
    out
}

fn log_softmax_array(x: &Array, axis: Axis) -> Array {
    let mut out = x.clone();
    for mut lane in out.lanes_mut(axis) {
        let max = lane.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + lane.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        lane.mapv_inplace(|v| v - lse);
    }
    out
}

fn row_mean_var(x: &Array) -> (Vec<f64>, Vec<f64>) {
    let n = x.ncols() as f64;
    x.rows()
        .into_iter()
        .map(|row| {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var)
        })
        .unzip()
}

impl Graph {
    fn same_shape(&self, op: &'static str, a: Tensor, b: Tensor) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::dim(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn row_operand(&self, op: &'static str, a: Tensor, row: Tensor) -> Result<()> {
        let ((_, n), sr) = (self.shape(a), self.shape(row));
        if sr != (1, n) {
            return Err(Error::dim(op, format!("expected 1x{n} row, got {sr:?}")));
        }
        Ok(())
    }

    fn col_operand(&self, op: &'static str, a: Tensor, col: Tensor) -> Result<()> {
        let ((m, _), sc) = (self.shape(a), self.shape(col));
        if sc != (m, 1) {
            return Err(Error::dim(op, format!("expected {m}x1 column, got {sc:?}")));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let ((m, k), (k2, n)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(Error::dim("matmul", format!("[{m}x{k}] . [{k2}x{n}]")));
        }
        let value = self.value(a).dot(self.value(b));
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.same_shape("add", a, b)?;
        let value = self.value(a) + self.value(b);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a) - self.value(b);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a) * self.value(b);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Tensor, c: f64) -> Tensor {
        let value = self.value(a) * c;
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Tensor, c: f64) -> Tensor {
        let value = self.value(a) + c;
        self.push(value, Op::AddScalar(a))
    }

    /// `a [m×n] + row [1×n]`, broadcast over rows.
    pub fn add_row(&mut self, a: Tensor, row: Tensor) -> Result<Tensor> {
        self.row_operand("add_row", a, row)?;
        let value = self.value(a) + self.value(row);
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    /// `a [m×n] ⊙ row [1×n]`, broadcast over rows.
    pub fn mul_row(&mut self, a: Tensor, row: Tensor) -> Result<Tensor> {
        self.row_operand("mul_row", a, row)?;
        let value = self.value(a) * self.value(row);
        Ok(self.push(value, Op::MulRow(a, row)))
    }

    /// `a [m×n] − col [m×1]`, broadcast over columns.
    pub fn sub_col(&mut self, a: Tensor, col: Tensor) -> Result<Tensor> {
        self.col_operand("sub_col", a, col)?;
        let value = self.value(a) - self.value(col);
        Ok(self.push(value, Op::SubCol(a, col)))
    }

    /// `a [m×n] / col [m×1]`, broadcast over columns.
    pub fn div_col(&mut self, a: Tensor, col: Tensor) -> Result<Tensor> {
        self.col_operand("div_col", a, col)?;
        let value = self.value(a) / self.value(col);
        Ok(self.push(value, Op::DivCol(a, col)))
    }

    pub fn transpose(&mut self, a: Tensor) -> Tensor {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    /// Mean of every row, `[m×n] → [m×1]`.
    pub fn mean_rows(&mut self, a: Tensor) -> Tensor {
        let (mean, _) = row_mean_var(self.value(a));
        let value = Array2::from_shape_vec((mean.len(), 1), mean).expect("column shape");
        self.push(value, Op::MeanRows(a))
    }

    /// Population variance (1/N) of every row, `[m×n] → [m×1]`.
    pub fn var_rows(&mut self, a: Tensor) -> Tensor {
        let (_, var) = row_mean_var(self.value(a));
        let value = Array2::from_shape_vec((var.len(), 1), var).expect("column shape");
        self.push(value, Op::VarRows(a))
    }

    /// Mean over rows, `[m×n] → [1×n]`.
    pub fn mean_cols(&mut self, a: Tensor) -> Tensor {
        let value = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("non-empty")
            .insert_axis(Axis(0));
        self.push(value, Op::MeanCols(a))
    }

    /// Sum of all entries, `→ [1×1]`.
    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn sqrt(&mut self, a: Tensor) -> Tensor {
        let value = self.value(a).mapv(f64::sqrt);
        self.push(value, Op::Sqrt(a))
    }

    /// Softmax along `axis`: `Axis(1)` normalizes every row, `Axis(0)` every column.
    pub fn softmax(&mut self, a: Tensor, axis: Axis) -> Tensor {
        let value = softmax_array(self.value(a), axis);
        self.push(value, Op::Softmax(a, axis))
    }

    pub fn log_softmax(&mut self, a: Tensor, axis: Axis) -> Tensor {
        let value = log_softmax_array(self.value(a), axis);
        self.push(value, Op::LogSoftmax(a, axis))
    }

    /// Row-wise `(x − E[x]) / sqrt(eps + Var[x])` with uniform 1/N moments.
    ///
    /// With `detach_scale` the factor `1 / sqrt(eps + Var[x])` is a constant
    /// for differentiation and only the centering map propagates gradients.
    pub fn layernorm_core(&mut self, a: Tensor, eps: f64, detach_scale: bool) -> Result<Tensor> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Parameter(format!(
                "layernorm eps must be positive, got {eps}"
            )));
        }
        let x = self.value(a);
        let (mean, var) = row_mean_var(x);
        let scale: Vec<f64> = var.iter().map(|v| 1.0 / (eps + v).sqrt()).collect();
        let mut value = x.clone();
        for (i, mut row) in value.rows_mut().into_iter().enumerate() {
            let (m, s) = (mean[i], scale[i]);
            row.mapv_inplace(|v| (v - m) * s);
        }
        Ok(self.push(
            value,
            Op::LayerNormCore {
                input: a,
                scale,
                detach_scale,
            },
        ))
    }

    /// Same value, no gradient through this edge.
    pub fn detach(&mut self, a: Tensor) -> Tensor {
        let value = self.value(a).clone();
        self.push(value, Op::Detach(a))
    }

    /// Copy of `a` as a distinct node, so its gradient can be read separately.
    pub fn identity(&mut self, a: Tensor) -> Tensor {
        let value = self.value(a).clone();
        self.push(value, Op::Identity(a))
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        let value = self.value(a).mapv(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Tensor) -> Tensor {
        let value = self.value(a).mapv(gelu);
        self.push(value, Op::Gelu(a))
    }

    /// Embedding lookup: row `r` of the output is row `ids[r]` of `table`.
    pub fn gather(&mut self, table: Tensor, ids: &[usize]) -> Result<Tensor> {
        let (rows, cols) = self.shape(table);
        if let Some(bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(Error::Input(format!(
                "id {bad} out of range for table with {rows} rows"
            )));
        }
        let t = self.value(table);
        let mut value = Array2::zeros((ids.len(), cols));
        Zip::from(value.rows_mut())
            .and(ndarray::aview1(ids))
            .for_each(|mut dst, &id| dst.assign(&t.row(id)));
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Picks one entry as a `1×1` scalar.
    pub fn element(&mut self, a: Tensor, row: usize, col: usize) -> Result<Tensor> {
        let (m, n) = self.shape(a);
        if row >= m || col >= n {
            return Err(Error::Usage(format!(
                "element ({row}, {col}) out of range for {m}x{n}"
            )));
        }
        let value = Array2::from_elem((1, 1), self.value(a)[[row, col]]);
        Ok(self.push(value, Op::Element { input: a, row, col }))
    }
}
