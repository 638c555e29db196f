//! Append-only computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the append sequence is a
//! topological order and backward is a single reverse sweep.

use std::collections::HashMap;

use super::kernels::{self, ReduceKind};
use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward rule sees: input and output values, the incoming
/// gradient, and which inputs actually need a gradient.
pub struct BackwardCtx<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    pub grad: &'a Tensor,
    pub needs: Vec<bool>,
}

/// Returns one optional gradient per input, each shaped like that input.
pub type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>> + Send>;

struct Node {
    kind: &'static str,
    value: Tensor,
    inputs: Vec<NodeId>,
    requires_grad: bool,
    is_leaf: bool,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of every `requires_grad` leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    map: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.map.get(&id)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.map.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
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

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { kind: "leaf", value, inputs: Vec::new(), requires_grad, is_leaf: true, backward: None });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn kind(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].kind
    }

    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    /// Appends an operation node. `backward` is dropped when no input needs
    /// a gradient, so inference graphs keep no backward state.
    pub fn custom(&mut self, kind: &'static str, inputs: &[NodeId], value: Tensor, backward: BackwardFn) -> NodeId {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            kind,
            value,
            inputs: inputs.to_vec(),
            requires_grad,
            is_leaf: false,
            backward: requires_grad.then_some(backward),
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_requires_grad(&self, inputs: &[NodeId]) -> bool {
        inputs.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, stride: usize) -> Result<NodeId> {
        let (out, cols, geom) = kernels::conv2d_forward(self.value(x), self.value(w), self.value(b), stride)?;
        let cols = self.any_requires_grad(&[x, w, b]).then_some(cols);
        Ok(self.custom(
            "conv2d",
            &[x, w, b],
            out,
            Box::new(move |ctx| {
                let cols = cols.as_ref().expect("cols kept whenever a gradient is needed");
                let (gx, gw, gb) = kernels::conv2d_backward(ctx.grad.data(), cols, ctx.inputs[1], &geom, ctx.needs[0]);
                vec![
                    gx.map(|g| Tensor::from_parts(ctx.inputs[0].shape().to_vec(), g)),
                    ctx.needs[1].then(|| Tensor::from_parts(ctx.inputs[1].shape().to_vec(), gw)),
                    ctx.needs[2].then(|| Tensor::from_parts(ctx.inputs[2].shape().to_vec(), gb)),
                ]
            }),
        ))
    }

    /// `out[.., i, j, :] = w[i, j] · u[.., i]`.
    pub fn batched_matvec(&mut self, w: NodeId, u: NodeId) -> Result<NodeId> {
        let out = kernels::batched_matvec(self.value(w), self.value(u))?;
        Ok(self.custom(
            "batched_matvec",
            &[w, u],
            out,
            Box::new(|ctx| {
                let (w, u) = (ctx.inputs[0], ctx.inputs[1]);
                let (gw, gu) = kernels::batched_matvec_backward(w, u, ctx.grad.data(), ctx.needs[0], ctx.needs[1]);
                vec![gw.map(|g| Tensor::from_parts(w.shape().to_vec(), g)), gu.map(|g| Tensor::from_parts(u.shape().to_vec(), g))]
            }),
        ))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let out = kernels::linear(self.value(x), self.value(w), self.value(b))?;
        Ok(self.custom(
            "linear",
            &[x, w, b],
            out,
            Box::new(|ctx| {
                use super::gemm::{gemm, MatRef};
                let (x, w) = (ctx.inputs[0], ctx.inputs[1]);
                let (batch, inputs) = (x.shape()[0], x.shape()[1]);
                let outputs = w.shape()[0];
                let gy = ctx.grad.data();
                let gx = ctx.needs[0].then(|| {
                    let mut g = vec![0.0; batch * inputs];
                    gemm(MatRef::new(gy, batch, outputs), MatRef::new(w.data(), outputs, inputs), &mut g, false);
                    Tensor::from_parts(x.shape().to_vec(), g)
                });
                let gw = ctx.needs[1].then(|| {
                    let mut g = vec![0.0; outputs * inputs];
                    gemm(MatRef::new(gy, batch, outputs).t(), MatRef::new(x.data(), batch, inputs), &mut g, false);
                    Tensor::from_parts(w.shape().to_vec(), g)
                });
                let gb = ctx.needs[2].then(|| {
                    let mut g = vec![0.0; outputs];
                    for row in gy.chunks_exact(outputs) {
                        for (acc, v) in g.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    Tensor::from_parts(vec![outputs], g)
                });
                vec![gx, gw, gb]
            }),
        ))
    }

    fn unary(&mut self, kind: &'static str, x: NodeId, f: fn(f64) -> f64, df: fn(f64, f64) -> f64) -> NodeId {
        let xv = self.value(x);
        let out = Tensor::from_parts(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect());
        self.custom(
            kind,
            &[x],
            out,
            Box::new(move |ctx| {
                let g =
                    ctx.inputs[0].data().iter().zip(ctx.output.data()).zip(ctx.grad.data()).map(|((&x, &y), &g)| g * df(x, y)).collect();
                vec![Some(Tensor::from_parts(ctx.output.shape().to_vec(), g))]
            }),
        )
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.unary("relu", x, kernels::relu, |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary("sigmoid", x, kernels::sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary("square", x, |v| v * v, |x, _| 2.0 * x)
    }

    /// `alpha * x + beta`.
    pub fn affine(&mut self, x: NodeId, alpha: f64, beta: f64) -> NodeId {
        let xv = self.value(x);
        let out = Tensor::from_parts(xv.shape().to_vec(), xv.data().iter().map(|&v| alpha * v + beta).collect());
        self.custom(
            "affine",
            &[x],
            out,
            Box::new(move |ctx| {
                let g = ctx.grad.data().iter().map(|&g| alpha * g).collect();
                vec![Some(Tensor::from_parts(ctx.grad.shape().to_vec(), g))]
            }),
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |x, y| x + y, |_, _, g| (g, g))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, |x, y| x - y, |_, _, g| (g, -g))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, |x, y| x * y, |x, y, g| (g * y, g * x))
    }

    fn binary(
        &mut self,
        kind: &'static str,
        a: NodeId,
        b: NodeId,
        f: fn(f64, f64) -> f64,
        df: fn(f64, f64, f64) -> (f64, f64),
    ) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        check_same_shape(kind, av, bv)?;
        let out = Tensor::from_parts(av.shape().to_vec(), av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect());
        Ok(self.custom(
            kind,
            &[a, b],
            out,
            Box::new(move |ctx| {
                let n = ctx.grad.len();
                let (mut ga, mut gb) = (vec![0.0; n], vec![0.0; n]);
                for k in 0..n {
                    let (da, db) = df(ctx.inputs[0].data()[k], ctx.inputs[1].data()[k], ctx.grad.data()[k]);
                    ga[k] = da;
                    gb[k] = db;
                }
                let shape = ctx.grad.shape().to_vec();
                vec![ctx.needs[0].then(|| Tensor::from_parts(shape.clone(), ga)), ctx.needs[1].then(|| Tensor::from_parts(shape, gb))]
            }),
        ))
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let out = kernels::softmax(self.value(x), axis)?;
        Ok(self.custom(
            "softmax",
            &[x],
            out,
            Box::new(move |ctx| {
                let g = kernels::softmax_backward(ctx.output, ctx.grad.data(), axis);
                vec![Some(Tensor::from_parts(ctx.output.shape().to_vec(), g))]
            }),
        ))
    }

    pub fn reduce(&mut self, kind: ReduceKind, x: NodeId, axis: Option<usize>) -> Result<NodeId> {
        let out = kernels::reduce(kind, self.value(x), axis)?;
        Ok(self.custom(
            match kind {
                ReduceKind::Sum => "sum",
                ReduceKind::Mean => "mean",
                ReduceKind::Norm2 => "norm2",
            },
            &[x],
            out,
            Box::new(move |ctx| {
                let g = kernels::reduce_backward(kind, ctx.inputs[0], ctx.output, ctx.grad.data(), axis);
                vec![Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), g))]
            }),
        ))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.reduce(ReduceKind::Sum, x, None).expect("full reduction has no axis to validate")
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.custom(
            "reshape",
            &[x],
            out,
            Box::new(|ctx| vec![Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), ctx.grad.data().to_vec()))]),
        ))
    }

    /// `out.data[k] = x.data[index[k]]`, reshaped to `shape`. Backward
    /// scatter-adds, so repeated indices are allowed.
    pub fn gather(&mut self, x: NodeId, index: Vec<usize>, shape: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= xv.len()) {
            return Err(TensorError::dim("gather", format!("index {bad} out of range for {} values", xv.len())));
        }
        let out = Tensor::new(shape.to_vec(), index.iter().map(|&i| xv.data()[i]).collect())?;
        Ok(self.custom(
            "gather",
            &[x],
            out,
            Box::new(move |ctx| {
                let mut g = vec![0.0; ctx.inputs[0].len()];
                for (&i, &v) in index.iter().zip(ctx.grad.data()) {
                    g[i] += v;
                }
                vec![Some(Tensor::from_parts(ctx.inputs[0].shape().to_vec(), g))]
            }),
        ))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::contract("backward", format!("loss must be scalar, got shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if node.is_leaf || !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else { continue };
            let backward = node.backward.as_ref().expect("requires_grad op nodes keep their rule");
            let ctx = BackwardCtx {
                inputs: node.inputs.iter().map(|&i| &self.nodes[i.0].value).collect(),
                output: &node.value,
                grad: &grad,
                needs: node.inputs.iter().map(|&i| self.nodes[i.0].requires_grad).collect(),
            };
            let input_grads = backward(&ctx);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (&input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[input.0].value.shape(), "{} gradient shape", node.kind);
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        let mut map = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.is_leaf && node.requires_grad {
                let g = grads[idx].take().unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                map.insert(NodeId(idx), g);
            }
        }
        Ok(Gradients { map })
    }

    /// Consumes the graph, moving out the values of `ids` (in order) without
    /// copying. A repeated id yields a placeholder scalar the second time.
    pub fn into_values(mut self, ids: &[NodeId]) -> Vec<Tensor> {
        ids.iter().map(|&id| std::mem::replace(&mut self.nodes[id.0].value, Tensor::scalar(0.0))).collect()
    }

    /// Sign pattern of every relu input; a change between two evaluations
    /// means a kink was crossed.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter(|n| n.kind == "relu")
            .flat_map(|n| self.nodes[n.inputs[0].0].value.data().iter().map(|&v| v > 0.0))
            .collect()
    }
}
