use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::kernels::{gemm, Trans};
use super::{AutodiffError, NodeId, Primitive, Tensor};

static NEXT_RECORDING: AtomicU64 = AtomicU64::new(1);

enum Op {
    Leaf,
    Prim(Primitive),
}

struct Node {
    op: Op,
    inputs: Vec<Tensor>,
    output: Arc<Vec<f64>>,
    shape: Vec<usize>,
}

/// Append-only log of the primitives applied during a forward pass.
///
/// Nodes are only recorded for outputs that depend on a leaf registered with
/// [`Recording::leaf`]; everything else is evaluated eagerly as a constant.
/// An inactive recording never stores nodes, which is what evaluation uses.
pub struct Recording {
    id: u64,
    active: bool,
    nodes: Vec<Node>,
}

impl Default for Recording {
    fn default() -> Self {
        Self::new()
    }
}

impl Recording {
    pub fn new() -> Self {
        Self {
            id: NEXT_RECORDING.fetch_add(1, Ordering::Relaxed),
            active: true,
            nodes: Vec::new(),
        }
    }

    /// A recording that evaluates but never stores anything.
    pub fn inactive() -> Self {
        Self {
            active: false,
            ..Self::new()
        }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers `value` as a differentiable leaf.
    pub fn leaf(&mut self, value: &Tensor) -> Tensor {
        if !self.active {
            return value.detach();
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            output: Arc::clone(value.values_arc()),
            shape: value.shape().to_vec(),
        });
        value.detach().with_node(id, self.id)
    }

    fn tracks(&self, t: &Tensor) -> bool {
        self.active && t.node_id().is_some() && t.origin() == self.id
    }

    pub fn apply_primitive(
        &mut self,
        prim: Primitive,
        inputs: &[&Tensor],
    ) -> Result<Tensor, AutodiffError> {
        let (shape, values) = forward(&prim, inputs)?;
        let values = Arc::new(values);
        let out = Tensor::from_parts(shape.clone(), Arc::clone(&values));
        if !inputs.iter().any(|t| self.tracks(t)) {
            return Ok(out);
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            op: Op::Prim(prim),
            inputs: inputs
                .iter()
                .map(|t| {
                    if self.tracks(t) {
                        (*t).clone()
                    } else {
                        t.detach()
                    }
                })
                .collect(),
            output: values,
            shape,
        });
        Ok(out.with_node(id, self.id))
    }

    /// Reverse pass from a scalar `loss`. Every registered leaf receives a
    /// gradient, zero when the loss does not depend on it.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients, AutodiffError> {
        if !loss.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(loss.shape().to_vec()));
        }
        let root = match loss.node_id() {
            Some(id) if loss.origin() == self.id && id < self.nodes.len() => id,
            _ => return Err(AutodiffError::LossNotRecorded),
        };
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(vec![1.0]);
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                }
                Op::Prim(prim) => {
                    let input_grads = backward_prim(prim, &node.inputs, &node.output, &node.shape, &g);
                    for (input, ig) in node.inputs.iter().zip(input_grads) {
                        let (Some(src), Some(ig)) = (input.node_id(), ig) else {
                            continue;
                        };
                        if input.origin() != self.id {
                            continue;
                        }
                        match &mut grads[src] {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                            slot => *slot = Some(ig),
                        }
                    }
                }
            }
        }
        let mut leaves = BTreeMap::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf = node.op {
                let g = grads[id].take().unwrap_or_else(|| vec![0.0; node.output.len()]);
                leaves.insert(id, Tensor::from_parts(node.shape.clone(), Arc::new(g)));
            }
        }
        Ok(Gradients {
            recording: self.id,
            leaves,
        })
    }

    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::Mul, &[a, b])
    }

    pub fn add_bias(&mut self, x: &Tensor, bias: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::AddBias, &[x, bias])
    }

    /// `x · w + b`
    pub fn linear(&mut self, x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, AutodiffError> {
        let xw = self.matmul(x, w)?;
        self.add_bias(&xw, b)
    }

    pub fn scale(&mut self, x: &Tensor, c: f64) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::Scale(c), &[x])
    }

    pub fn add_scalar(&mut self, x: &Tensor, c: f64) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::AddScalar(c), &[x])
    }

    pub fn relu(&mut self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::Relu, &[x])
    }

    pub fn leaky_relu(&mut self, x: &Tensor, slope: f64) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::LeakyRelu(slope), &[x])
    }

    pub fn tanh(&mut self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::Tanh, &[x])
    }

    pub fn sigmoid(&mut self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::Sigmoid, &[x])
    }

    pub fn exp(&mut self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::Exp, &[x])
    }

    pub fn log(&mut self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::Log, &[x])
    }

    pub fn log_softmax(&mut self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::LogSoftmax, &[x])
    }

    pub fn concat(&mut self, parts: &[&Tensor], axis: usize) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::Concat { axis }, parts)
    }

    pub fn slice(
        &mut self,
        x: &Tensor,
        axis: usize,
        start: usize,
        end: usize,
    ) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::Slice { axis, start, end }, &[x])
    }

    pub fn sum(&mut self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::Sum, &[x])
    }

    pub fn mean(&mut self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::Mean, &[x])
    }

    pub fn l1_norm(&mut self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::L1Norm, &[x])
    }

    pub fn squared_l2(&mut self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::SquaredL2, &[x])
    }

    pub fn dropout(&mut self, x: &Tensor, mask: Arc<Vec<f64>>) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::Dropout(mask), &[x])
    }

    pub fn transpose(&mut self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::Transpose, &[x])
    }

    pub fn row_sum(&mut self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::RowSum, &[x])
    }

    pub fn row_max(&mut self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::RowMax, &[x])
    }

    pub fn row_norm(&mut self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::RowNorm, &[x])
    }

    pub fn normalize_rows(&mut self, x: &Tensor) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::NormalizeRows, &[x])
    }

    pub fn gather_rows(&mut self, x: &Tensor, rows: &[usize]) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::GatherRows(Arc::new(rows.to_vec())), &[x])
    }

    pub fn reshape(&mut self, x: &Tensor, shape: &[usize]) -> Result<Tensor, AutodiffError> {
        self.apply_primitive(Primitive::Reshape(shape.to_vec()), &[x])
    }
}

/// Leaf gradients produced by [`Recording::backward`].
#[derive(Debug)]
pub struct Gradients {
    recording: u64,
    leaves: BTreeMap<NodeId, Tensor>,
}

impl Gradients {
    /// Gradient for a leaf tensor of the recording that produced these gradients.
    pub fn get(&self, leaf: &Tensor) -> Option<&Tensor> {
        if leaf.origin() != self.recording {
            return None;
        }
        leaf.node_id().and_then(|id| self.leaves.get(&id))
    }

    pub fn by_node(&self, id: NodeId) -> Option<&Tensor> {
        self.leaves.get(&id)
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }
}

fn mismatch(prim: &Primitive, inputs: &[&Tensor]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        primitive: prim.name(),
        shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

fn arity(prim: &Primitive, inputs: &[&Tensor], n: usize) -> Result<(), AutodiffError> {
    if inputs.len() != n {
        return Err(AutodiffError::Arity {
            primitive: prim.name(),
            expected: n,
            got: inputs.len(),
        });
    }
    Ok(())
}

fn map1(x: &Tensor, f: impl Fn(f64) -> f64) -> (Vec<usize>, Vec<f64>) {
    (x.shape().to_vec(), x.values().iter().map(|&v| f(v)).collect())
}

fn as_matrix(t: &Tensor) -> Option<(usize, usize)> {
    match t.shape() {
        [m, n] => Some((*m, *n)),
        _ => None,
    }
}

fn forward(prim: &Primitive, inputs: &[&Tensor]) -> Result<(Vec<usize>, Vec<f64>), AutodiffError> {
    use Primitive as P;
    match prim {
        P::Concat { .. } => {
            if inputs.is_empty() {
                return Err(mismatch(prim, inputs));
            }
        }
        P::MatMul | P::Add | P::Sub | P::Mul | P::AddBias => arity(prim, inputs, 2)?,
        _ => arity(prim, inputs, 1)?,
    }
    let x = inputs[0];
    Ok(match prim {
        P::MatMul => {
            let (Some((m, k)), Some((k2, n))) = (as_matrix(x), as_matrix(inputs[1])) else {
                return Err(mismatch(prim, inputs));
            };
            if k != k2 {
                return Err(mismatch(prim, inputs));
            }
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, x.values(), Trans::No, inputs[1].values(), Trans::No, &mut out, false);
            (vec![m, n], out)
        }
        P::Add | P::Sub | P::Mul => {
            let y = inputs[1];
            if x.shape() != y.shape() {
                return Err(mismatch(prim, inputs));
            }
            let f: fn(f64, f64) -> f64 = match prim {
                P::Add => |a, b| a + b,
                P::Sub => |a, b| a - b,
                _ => |a, b| a * b,
            };
            let out = x.values().iter().zip(y.values()).map(|(&a, &b)| f(a, b)).collect();
            (x.shape().to_vec(), out)
        }
        P::AddBias => {
            let b = inputs[1];
            let Some((m, n)) = as_matrix(x) else {
                return Err(mismatch(prim, inputs));
            };
            let bias_ok = matches!(b.shape(), [k] if *k == n) || matches!(b.shape(), [1, k] if *k == n);
            if !bias_ok {
                return Err(mismatch(prim, inputs));
            }
            let mut out = x.to_vec();
            for row in out.chunks_mut(n) {
                row.iter_mut().zip(b.values()).for_each(|(o, &bv)| *o += bv);
            }
            (vec![m, n], out)
        }
        P::Scale(c) => map1(x, |v| v * c),
        P::AddScalar(c) => map1(x, |v| v + c),
        P::Relu => map1(x, |v| if v > 0.0 { v } else { 0.0 }),
        P::LeakyRelu(s) => map1(x, |v| if v > 0.0 { v } else { s * v }),
        P::Tanh => map1(x, f64::tanh),
        P::Sigmoid => map1(x, sigmoid),
        P::Exp => map1(x, f64::exp),
        P::Log => map1(x, f64::ln),
        P::LogSoftmax => {
            if x.rank() == 0 {
                return Err(mismatch(prim, inputs));
            }
            let n = x.cols();
            let mut out = x.to_vec();
            for row in out.chunks_mut(n) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|v| *v -= lse);
            }
            (x.shape().to_vec(), out)
        }
        P::Concat { axis } => concat_forward(prim, inputs, *axis)?,
        P::Slice { axis, start, end } => {
            let (m, n) = match (x.shape(), axis) {
                ([n], 0) => (1, *n),
                ([m, n], 0 | 1) => (*m, *n),
                _ => return Err(mismatch(prim, inputs)),
            };
            let along = if x.rank() == 1 || *axis == 1 { n } else { m };
            if start >= end || *end > along {
                return Err(mismatch(prim, inputs));
            }
            if x.rank() == 1 {
                (vec![end - start], x.values()[*start..*end].to_vec())
            } else if *axis == 0 {
                (vec![end - start, n], x.values()[start * n..end * n].to_vec())
            } else {
                let mut out = Vec::with_capacity(m * (end - start));
                for row in x.values().chunks(n) {
                    out.extend_from_slice(&row[*start..*end]);
                }
                (vec![m, end - start], out)
            }
        }
        P::Sum => (Vec::new(), vec![x.values().iter().sum()]),
        P::Mean => (Vec::new(), vec![x.values().iter().sum::<f64>() / x.len() as f64]),
        P::L1Norm => (Vec::new(), vec![x.values().iter().map(|v| v.abs()).sum()]),
        P::SquaredL2 => (Vec::new(), vec![x.values().iter().map(|v| v * v).sum()]),
        P::Dropout(mask) => {
            if mask.len() != x.len() {
                return Err(AutodiffError::ShapeMismatch {
                    primitive: prim.name(),
                    shapes: vec![x.shape().to_vec(), vec![mask.len()]],
                });
            }
            let out = x.values().iter().zip(mask.iter()).map(|(a, m)| a * m).collect();
            (x.shape().to_vec(), out)
        }
        P::Transpose => {
            let Some((m, n)) = as_matrix(x) else {
                return Err(mismatch(prim, inputs));
            };
            (vec![n, m], transpose(x.values(), m, n))
        }
        P::RowSum | P::RowMax | P::RowNorm => {
            let Some((m, n)) = as_matrix(x) else {
                return Err(mismatch(prim, inputs));
            };
            let out = x
                .values()
                .chunks(n)
                .map(|row| match prim {
                    P::RowSum => row.iter().sum(),
                    P::RowMax => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    _ => row.iter().map(|v| v * v).sum::<f64>().sqrt(),
                })
                .collect();
            (vec![m, 1], out)
        }
        P::NormalizeRows => {
            let Some((_, n)) = as_matrix(x) else {
                return Err(mismatch(prim, inputs));
            };
            let mut out = x.to_vec();
            for (i, row) in out.chunks_mut(n).enumerate() {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(AutodiffError::ZeroNorm { row: i });
                }
                row.iter_mut().for_each(|v| *v /= norm);
            }
            (x.shape().to_vec(), out)
        }
        P::GatherRows(rows) => {
            let Some((m, n)) = as_matrix(x) else {
                return Err(mismatch(prim, inputs));
            };
            if rows.is_empty() {
                return Err(mismatch(prim, inputs));
            }
            let mut out = Vec::with_capacity(rows.len() * n);
            for &r in rows.iter() {
                if r >= m {
                    return Err(AutodiffError::IndexOutOfRange { index: r, len: m });
                }
                out.extend_from_slice(&x.values()[r * n..(r + 1) * n]);
            }
            (vec![rows.len(), n], out)
        }
        P::Reshape(shape) => {
            if shape.iter().product::<usize>() != x.len() || shape.contains(&0) {
                return Err(AutodiffError::ShapeMismatch {
                    primitive: prim.name(),
                    shapes: vec![x.shape().to_vec(), shape.clone()],
                });
            }
            (shape.clone(), x.to_vec())
        }
    })
}

fn concat_forward(
    prim: &Primitive,
    inputs: &[&Tensor],
    axis: usize,
) -> Result<(Vec<usize>, Vec<f64>), AutodiffError> {
    let first = inputs[0].shape();
    match (first.len(), axis) {
        (1, 0) => {
            if inputs.iter().any(|t| t.rank() != 1) {
                return Err(mismatch(prim, inputs));
            }
            let out: Vec<f64> = inputs.iter().flat_map(|t| t.values().iter().copied()).collect();
            Ok((vec![out.len()], out))
        }
        (2, 0) => {
            let n = first[1];
            if inputs.iter().any(|t| t.rank() != 2 || t.shape()[1] != n) {
                return Err(mismatch(prim, inputs));
            }
            let out: Vec<f64> = inputs.iter().flat_map(|t| t.values().iter().copied()).collect();
            Ok((vec![out.len() / n, n], out))
        }
        (2, 1) => {
            let m = first[0];
            if inputs.iter().any(|t| t.rank() != 2 || t.shape()[0] != m) {
                return Err(mismatch(prim, inputs));
            }
            let total: usize = inputs.iter().map(|t| t.shape()[1]).sum();
            let mut out = Vec::with_capacity(m * total);
            for i in 0..m {
                for t in inputs {
                    out.extend_from_slice(t.row(i));
                }
            }
            Ok((vec![m, total], out))
        }
        _ => Err(mismatch(prim, inputs)),
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn transpose(values: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = values[i * n + j];
        }
    }
    out
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Vector-Jacobian products for one node. Entries are `None` for inputs that
/// do not need a gradient.
fn backward_prim(
    prim: &Primitive,
    inputs: &[Tensor],
    output: &[f64],
    out_shape: &[usize],
    g: &[f64],
) -> Vec<Option<Vec<f64>>> {
    use Primitive as P;
    let needs = |i: usize| inputs[i].node_id().is_some();
    let x = &inputs[0];
    let single = |v: Vec<f64>| vec![Some(v)];
    match prim {
        P::MatMul => {
            let b = &inputs[1];
            let (m, k) = (x.shape()[0], x.shape()[1]);
            let n = b.shape()[1];
            let da = needs(0).then(|| {
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g, Trans::No, b.values(), Trans::Yes, &mut da, false);
                da
            });
            let db = needs(1).then(|| {
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, x.values(), Trans::Yes, g, Trans::No, &mut db, false);
                db
            });
            vec![da, db]
        }
        P::Add => vec![needs(0).then(|| g.to_vec()), needs(1).then(|| g.to_vec())],
        P::Sub => vec![
            needs(0).then(|| g.to_vec()),
            needs(1).then(|| g.iter().map(|v| -v).collect()),
        ],
        P::Mul => {
            let y = &inputs[1];
            vec![
                needs(0).then(|| zip_map(g, y.values(), |a, b| a * b)),
                needs(1).then(|| zip_map(g, x.values(), |a, b| a * b)),
            ]
        }
        P::AddBias => {
            let n = x.cols();
            let db = needs(1).then(|| {
                let mut db = vec![0.0; n];
                for row in g.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
                db
            });
            vec![needs(0).then(|| g.to_vec()), db]
        }
        P::Scale(c) => single(g.iter().map(|v| v * c).collect()),
        P::AddScalar(_) | P::Reshape(_) => single(g.to_vec()),
        P::Relu => single(zip_map(g, x.values(), |gv, xv| if xv > 0.0 { gv } else { 0.0 })),
        P::LeakyRelu(s) => single(zip_map(g, x.values(), |gv, xv| if xv > 0.0 { gv } else { s * gv })),
        P::Tanh => single(zip_map(g, output, |gv, y| gv * (1.0 - y * y))),
        P::Sigmoid => single(zip_map(g, output, |gv, y| gv * y * (1.0 - y))),
        P::Exp => single(zip_map(g, output, |gv, y| gv * y)),
        P::Log => single(zip_map(g, x.values(), |gv, xv| gv / xv)),
        P::LogSoftmax => {
            let n = x.cols();
            let mut dx = Vec::with_capacity(g.len());
            for (grow, yrow) in g.chunks(n).zip(output.chunks(n)) {
                let total: f64 = grow.iter().sum();
                dx.extend(grow.iter().zip(yrow).map(|(gv, y)| gv - y.exp() * total));
            }
            single(dx)
        }
        P::Concat { axis } => {
            let mut out = Vec::with_capacity(inputs.len());
            if x.rank() == 1 || *axis == 0 {
                let mut offset = 0;
                for t in inputs {
                    let len = t.len();
                    out.push(t.node_id().map(|_| g[offset..offset + len].to_vec()));
                    offset += len;
                }
            } else {
                let m = x.shape()[0];
                let total = out_shape[1];
                let mut offset = 0;
                for t in inputs {
                    let w = t.shape()[1];
                    out.push(t.node_id().map(|_| {
                        let mut part = Vec::with_capacity(m * w);
                        for i in 0..m {
                            part.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        part
                    }));
                    offset += w;
                }
            }
            out
        }
        P::Slice { axis, start, end } => {
            let mut dx = vec![0.0; x.len()];
            if x.rank() == 1 {
                dx[*start..*end].copy_from_slice(g);
            } else if *axis == 0 {
                let n = x.shape()[1];
                dx[start * n..end * n].copy_from_slice(g);
            } else {
                let n = x.shape()[1];
                let w = end - start;
                for (i, grow) in g.chunks(w).enumerate() {
                    dx[i * n + start..i * n + end].copy_from_slice(grow);
                }
            }
            single(dx)
        }
        P::Sum => single(vec![g[0]; x.len()]),
        P::Mean => single(vec![g[0] / x.len() as f64; x.len()]),
        P::L1Norm => single(x.values().iter().map(|&v| g[0] * sign(v)).collect()),
        P::SquaredL2 => single(x.values().iter().map(|&v| 2.0 * g[0] * v).collect()),
        P::Dropout(mask) => single(zip_map(g, mask, |a, b| a * b)),
        P::Transpose => {
            let (m, n) = (x.shape()[0], x.shape()[1]);
            single(transpose(g, n, m))
        }
        P::RowSum => {
            let n = x.cols();
            single(g.iter().flat_map(|&gv| std::iter::repeat_n(gv, n)).collect())
        }
        P::RowMax => {
            let n = x.cols();
            let mut dx = vec![0.0; x.len()];
            for (i, row) in x.values().chunks(n).enumerate() {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                dx[i * n + best] = g[i];
            }
            single(dx)
        }
        P::RowNorm => {
            let n = x.cols();
            let mut dx = vec![0.0; x.len()];
            for (i, row) in x.values().chunks(n).enumerate() {
                let norm = output[i];
                if norm > 0.0 {
                    for (j, v) in row.iter().enumerate() {
                        dx[i * n + j] = g[i] * v / norm;
                    }
                }
            }
            single(dx)
        }
        P::NormalizeRows => {
            let n = x.cols();
            let mut dx = vec![0.0; x.len()];
            for (i, (xrow, yrow)) in x.values().chunks(n).zip(output.chunks(n)).enumerate() {
                let norm = xrow.iter().map(|v| v * v).sum::<f64>().sqrt();
                let grow = &g[i * n..(i + 1) * n];
                let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    dx[i * n + j] = (grow[j] - yrow[j] * dot) / norm;
                }
            }
            single(dx)
        }
        P::GatherRows(rows) => {
            let n = x.cols();
            let mut dx = vec![0.0; x.len()];
            for (k, &r) in rows.iter().enumerate() {
                dx[r * n..(r + 1) * n]
                    .iter_mut()
                    .zip(&g[k * n..(k + 1) * n])
                    .for_each(|(d, v)| *d += v);
            }
            single(dx)
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
