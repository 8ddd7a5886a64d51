use std::collections::HashMap;

use super::params::{ParamGradients, ParamId, ParameterStore};
use super::{Float, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, Float),
    Shift(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Ln(Var),
    ClampMin(Var, Float),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gain: Var, bias: Var, eps: Float },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    GatherRows { x: Var, index: Vec<usize> },
    RepeatRows(Var),
    ScatterAdd { x: Var, index: Vec<usize> },
    Pick { x: Var, index: Vec<usize> },
    Sum(Var),
    Reshape(Var),
    Conv2d { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    AvgPool(Var),
    /// Sigmoid whose backward rule drops the `(1 - y)` factor.
    #[cfg(test)]
    BrokenSigmoid(Var),
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Records forward computations so gradients can be replayed in reverse.
///
/// A tape optionally borrows a [`ParameterStore`]; parameters enter the
/// tape through [`Tape::param`] without being copied.
pub struct Tape<'p> {
    store: Option<&'p ParameterStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn with_params(store: &'p ParameterStore) -> Self {
        Tape {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.expect("param node without store").get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn data(&self, v: Var) -> &[Float] {
        self.value(v).data()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(Value::Owned(t), Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push_raw(Value::Owned(t), Op::Leaf, true)
    }

    /// The tape's leaf for a stored parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        assert!(self.store.is_some(), "tape has no parameter store");
        let v = self.push_raw(Value::Param(id), Op::Param(id), true);
        self.param_vars.insert(id, v);
        v
    }

    fn push_raw(&mut self, value: Value, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<Float>,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite { op: name });
        }
        let t = Tensor::new(shape, data)?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_raw(Value::Owned(t), op, needs_grad))
    }

    /// Reverse-mode sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_t = self.value(loss);
        if loss_t.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_t.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<Float>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .take(loss.0 + 1)
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, Var(i))),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<Float>>], v: Var) -> Option<&'g mut Vec<Float>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.value(v).numel();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, i: usize, g: &[Float], grads: &mut [Option<Vec<Float>>]) {
        let out = self.value(Var(i));
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (m, k, n) = (at.rows(), at.cols(), bt.cols());
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..m {
                        for c in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += g[r * n + j] * bt.data()[c * n + j];
                            }
                            ga[r * k + c] += s;
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    matmul_tn_acc(at.data(), g, m, k, n, gb);
                }
            }
            Op::Affine(x, w, b) => {
                let (xt, wt) = (self.value(*x), self.value(*w));
                let (m, k, n) = (xt.rows(), xt.cols(), wt.cols());
                if let Some(gx) = self.acc(grads, *x) {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for c in 0..k {
                            let wrow = &wt.data()[c * n..(c + 1) * n];
                            gx[r * k + c] += dot(grow, wrow);
                        }
                    }
                }
                if let Some(gw) = self.acc(grads, *w) {
                    matmul_tn_acc(xt.data(), g, m, k, n, gw);
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for r in 0..m {
                        for j in 0..n {
                            gb[j] += g[r * n + j];
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let (r, c) = (out.rows(), out.cols());
                if let Some(ga) = self.acc(grads, *a) {
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] += g[i * c + j];
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(self.nodes[i].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                for (v, s) in [(*a, 1.0), (*b, sign)] {
                    let scalar = self.value(v).numel() == 1 && out.numel() != 1;
                    if let Some(gv) = self.acc(grads, v) {
                        if scalar {
                            gv[0] += s * g.iter().sum::<Float>();
                        } else {
                            gv.iter_mut().zip(g).for_each(|(x, y)| *x += s * y);
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    let scalar = self.value(v).numel() == 1 && out.numel() != 1;
                    let od = self.value(other).data();
                    let ob = |j: usize| if od.len() == 1 { od[0] } else { od[j] };
                    if let Some(gv) = self.acc(grads, v) {
                        if scalar {
                            gv[0] += g.iter().enumerate().map(|(j, y)| y * ob(j)).sum::<Float>();
                        } else {
                            gv.iter_mut().enumerate().for_each(|(j, x)| *x += g[j] * ob(j));
                        }
                    }
                }
            }
            Op::Scale(a, k) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += k * y);
                }
            }
            Op::Shift(a) | Op::Reshape(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), o) in ga.iter_mut().zip(g).zip(out.data()) {
                        *x += y * o * (1.0 - o);
                    }
                }
            }
            #[cfg(test)]
            Op::BrokenSigmoid(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), o) in ga.iter_mut().zip(g).zip(out.data()) {
                        *x += y * o;
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), o) in ga.iter_mut().zip(g).zip(out.data()) {
                        *x += y * (1.0 - o * o);
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), o) in ga.iter_mut().zip(g).zip(out.data()) {
                        if *o > 0.0 {
                            *x += y;
                        }
                    }
                }
            }
            Op::Ln(a) => {
                let ad = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), v) in ga.iter_mut().zip(g).zip(ad) {
                        *x += y / v;
                    }
                }
            }
            Op::ClampMin(a, floor) => {
                let ad = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((x, y), v) in ga.iter_mut().zip(g).zip(ad) {
                        if *v > *floor {
                            *x += y;
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = axis_split(out.shape(), *axis);
                let y = out.data();
                if let Some(gx) = self.acc(grads, *x) {
                    for o in 0..outer {
                        for c in 0..inner {
                            let idx = |j: usize| (o * n + j) * inner + c;
                            let s: Float = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..n {
                                gx[idx(j)] += y[idx(j)] * (g[idx(j)] - s);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let xt = self.value(*x);
                let d = xt.cols();
                let rows = xt.numel() / d;
                let gain_d = self.value(*gain).data().to_vec();
                let mut gx_all = vec![0.0; xt.numel()];
                let mut ggain = vec![0.0; d];
                let mut gbias = vec![0.0; d];
                for r in 0..rows {
                    let xr = &xt.data()[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let (mean, inv) = norm_stats(xr, *eps);
                    let xhat: Vec<Float> = xr.iter().map(|v| (v - mean) * inv).collect();
                    let dy: Vec<Float> = gr.iter().zip(&gain_d).map(|(a, b)| a * b).collect();
                    let mdy = dy.iter().sum::<Float>() / d as Float;
                    let mdyx = dy.iter().zip(&xhat).map(|(a, b)| a * b).sum::<Float>() / d as Float;
                    for j in 0..d {
                        gx_all[r * d + j] = inv * (dy[j] - mdy - xhat[j] * mdyx);
                        ggain[j] += gr[j] * xhat[j];
                        gbias[j] += gr[j];
                    }
                }
                for (v, src) in [(*x, gx_all), (*gain, ggain), (*bias, gbias)] {
                    if let Some(gv) = self.acc(grads, v) {
                        gv.iter_mut().zip(&src).for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(out.shape(), *axis);
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).shape()[*axis];
                    if let Some(gp) = self.acc(grads, *p) {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            for k in 0..len * inner {
                                gp[dst + k] += g[src + k];
                            }
                        }
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let xshape = self.value(*x).shape().to_vec();
                let (outer, total, inner) = axis_split(&xshape, *axis);
                let len = out.shape()[*axis];
                if let Some(gx) = self.acc(grads, *x) {
                    for o in 0..outer {
                        let dst = (o * total + start) * inner;
                        let src = o * len * inner;
                        for k in 0..len * inner {
                            gx[dst + k] += g[src + k];
                        }
                    }
                }
            }
            Op::GatherRows { x, index } => {
                let c = out.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for (r, &src) in index.iter().enumerate() {
                        for j in 0..c {
                            gx[src * c + j] += g[r * c + j];
                        }
                    }
                }
            }
            Op::RepeatRows(x) => {
                let c = out.cols();
                if let Some(gx) = self.acc(grads, *x) {
                    for r in 0..out.rows() {
                        for j in 0..c {
                            gx[j] += g[r * c + j];
                        }
                    }
                }
            }
            Op::ScatterAdd { x, index } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (k, &dst) in index.iter().enumerate() {
                        gx[k] += g[dst];
                    }
                }
            }
            Op::Pick { x, index } => {
                if let Some(gx) = self.acc(grads, *x) {
                    for (k, &src) in index.iter().enumerate() {
                        gx[src] += g[k];
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.acc(grads, *x) {
                    gx.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                self.conv2d_backward(*x, *w, *b, *stride, *pad, out.shape(), g, grads);
            }
            Op::AvgPool(x) => {
                let xs = self.value(*x).shape();
                let (c, hw) = (xs[0], xs[1] * xs[2]);
                if let Some(gx) = self.acc(grads, *x) {
                    for ch in 0..c {
                        let share = g[ch] / hw as Float;
                        gx[ch * hw..(ch + 1) * hw].iter_mut().for_each(|v| *v += share);
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv2d_backward(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        out_shape: &[usize],
        g: &[Float],
        grads: &mut [Option<Vec<Float>>],
    ) {
        let (xt, wt) = (self.value(x), self.value(w));
        let (cin, h, wid) = (xt.shape()[0], xt.shape()[1], xt.shape()[2]);
        let (cout, k) = (wt.shape()[0], wt.shape()[2]);
        let (oh, ow) = (out_shape[1], out_shape[2]);
        let mut gx = vec![0.0; xt.numel()];
        let mut gw = vec![0.0; wt.numel()];
        let mut gb = vec![0.0; cout];
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let go = g[(co * oh + oy) * ow + ox];
                    if go == 0.0 {
                        continue;
                    }
                    gb[co] += go;
                    for ci in 0..cin {
                        for ky in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix >= wid as isize {
                                    continue;
                                }
                                let xi = (ci * h + iy as usize) * wid + ix as usize;
                                let wi = ((co * cin + ci) * k + ky) * k + kx;
                                gx[xi] += go * wt.data()[wi];
                                gw[wi] += go * xt.data()[xi];
                            }
                        }
                    }
                }
            }
        }
        for (v, src) in [(x, gx), (w, gw), (b, gb)] {
            if let Some(gv) = self.acc(grads, v) {
                gv.iter_mut().zip(&src).for_each(|(a, s)| *a += s);
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<Float>>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to `v`; `None` when no path reaches it.
    pub fn wrt(&self, v: Var) -> Option<&[Float]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Extracts the parameter gradients, dropping intermediate buffers.
    pub fn into_params(mut self) -> ParamGradients {
        let mut entries: Vec<(ParamId, Vec<Float>)> = self
            .params
            .iter()
            .filter_map(|(id, v)| self.grads[v.0].take().map(|g| (*id, g)))
            .collect();
        entries.sort_by_key(|(id, _)| *id);
        ParamGradients { entries }
    }
}

pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn norm_stats(row: &[Float], eps: Float) -> (Float, Float) {
    let d = row.len() as Float;
    let mean = row.iter().sum::<Float>() / d;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Float>() / d;
    (mean, 1.0 / (var + eps).sqrt())
}

pub(crate) fn dot(a: &[Float], b: &[Float]) -> Float {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += aᵀ g` for `a: m×k`, `g: m×n`.
fn matmul_tn_acc(a: &[Float], g: &[Float], m: usize, k: usize, n: usize, out: &mut [Float]) {
    for r in 0..m {
        let grow = &g[r * n..(r + 1) * n];
        for c in 0..k {
            let av = a[r * k + c];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[c * n..(c + 1) * n];
            orow.iter_mut().zip(grow).for_each(|(o, y)| *o += av * y);
        }
    }
}
