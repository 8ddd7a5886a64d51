//! Forward rules. Every op checks shapes, computes its output eagerly and
//! records itself for the backward sweep in `tape.rs`.
//!
//! Broadcasting is limited to two cases: equal shapes, or one operand
//! holding a single element.

use super::tape::{axis_split, norm_stats, Op};
use super::{dim_err, Float, Result, Tape, Tensor, Var};

fn sigmoid(x: Float) -> Float {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape<'_> {
    fn require_2d(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return dim_err(op, format!("expected a matrix, got shape {s:?}"));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.require_2d("matmul", a)?;
        let (k2, n) = self.require_2d("matmul", b)?;
        if k != k2 {
            return dim_err("matmul", format!("{m}x{k} · {k2}x{n}"));
        }
        let out = matmul_nn(self.data(a), self.data(b), m, k, n);
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    /// `x · w + b` with `b` added to every row.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (m, k) = self.require_2d("affine", x)?;
        let (k2, n) = self.require_2d("affine", w)?;
        if k != k2 || self.value(b).numel() != n {
            return dim_err(
                "affine",
                format!("x {m}x{k}, w {k2}x{n}, bias {:?}", self.shape(b)),
            );
        }
        let mut out = matmul_nn(self.data(x), self.data(w), m, k, n);
        let bias = self.data(b);
        for r in 0..m {
            out[r * n..(r + 1) * n].iter_mut().zip(bias).for_each(|(o, b)| *o += b);
        }
        self.push("affine", vec![m, n], out, Op::Affine(x, w, b), &[x, w, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.require_2d("transpose", a)?;
        let d = self.data(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        self.push("transpose", vec![c, r], out, Op::Transpose(a), &[a])
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(Float, Float) -> Float,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = if ta.shape() == tb.shape() || tb.numel() == 1 {
            ta.shape().to_vec()
        } else if ta.numel() == 1 {
            tb.shape().to_vec()
        } else {
            return dim_err(name, format!("{:?} vs {:?}", ta.shape(), tb.shape()));
        };
        let n: usize = shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let at = |j: usize| if da.len() == 1 { da[0] } else { da[j] };
        let bt = |j: usize| if db.len() == 1 { db[0] } else { db[j] };
        let out = (0..n).map(|j| f(at(j), bt(j))).collect();
        self.push(name, shape, out, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: Float) -> Result<Var> {
        let t = self.value(a);
        let out = t.data().iter().map(|x| x * k).collect();
        self.push("scale", t.shape().to_vec(), out, Op::Scale(a, k), &[a])
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, a: Var, k: Float) -> Result<Var> {
        let t = self.value(a);
        let out = t.data().iter().map(|x| x + k).collect();
        self.push("shift", t.shape().to_vec(), out, Op::Shift(a), &[a])
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        self.shift(neg, 1.0)
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(Float) -> Float, op: Op) -> Result<Var> {
        let t = self.value(a);
        let out = t.data().iter().map(|&x| f(x)).collect();
        self.push(name, t.shape().to_vec(), out, op, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    #[cfg(test)]
    pub(crate) fn broken_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("broken_sigmoid", a, sigmoid, Op::BrokenSigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, Float::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.unary("ln", a, Float::ln, Op::Ln(a))
    }

    pub fn clamp_min(&mut self, a: Var, floor: Float) -> Result<Var> {
        self.unary("clamp_min", a, |x| x.max(floor), Op::ClampMin(a, floor))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.shape().len() {
            return dim_err("softmax", format!("axis {axis} for shape {:?}", t.shape()));
        }
        let (outer, n, inner) = axis_split(t.shape(), axis);
        let d = t.data();
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for c in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + c;
                let max = (0..n).map(|j| d[idx(j)]).fold(Float::NEG_INFINITY, Float::max);
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (d[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[idx(j)] /= sum;
                }
            }
        }
        let shape = t.shape().to_vec();
        self.push("softmax", shape, out, Op::Softmax { x, axis }, &[x])
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: Float) -> Result<Var> {
        let t = self.value(x);
        let d = t.cols();
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return dim_err("layer_norm", format!("row width {d}, gain/bias size mismatch"));
        }
        let (g, b) = (self.data(gain), self.data(bias));
        let mut out = Vec::with_capacity(t.numel());
        for row in t.data().chunks(d) {
            let (mean, inv) = norm_stats(row, eps);
            out.extend(row.iter().enumerate().map(|(j, v)| (v - mean) * inv * g[j] + b[j]));
        }
        let shape = t.shape().to_vec();
        self.push(
            "layer_norm",
            shape,
            out,
            Op::LayerNorm { x, gain, bias, eps },
            &[x, gain, bias],
        )
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return dim_err("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return dim_err("concat", format!("axis {axis} for shape {base:?}"));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return dim_err("concat", format!("{base:?} vs {s:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for p in parts {
                let t = self.value(*p);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let parts = parts.to_vec();
        let inputs = parts.clone();
        self.push("concat", shape, out, Op::Concat { parts, axis }, &inputs)
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return dim_err("slice", format!("[{start}, {}) on axis {axis} of {shape:?}", start + len));
        }
        let (outer, total, inner) = axis_split(&shape, axis);
        let d = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * total + start) * inner;
            out.extend_from_slice(&d[from..from + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        self.push("slice", oshape, out, Op::Slice { x, axis, start }, &[x])
    }

    /// Row `r` of a matrix as a `1 × cols` tensor.
    pub fn row(&mut self, x: Var, r: usize) -> Result<Var> {
        self.slice(x, 0, r, 1)
    }

    /// Rows of a matrix selected (with repetition) by `index`.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.require_2d("gather_rows", x)?;
        if index.is_empty() || index.iter().any(|&i| i >= r) {
            return dim_err("gather_rows", format!("index out of range for {r} rows"));
        }
        let d = self.data(x);
        let mut out = Vec::with_capacity(index.len() * c);
        for &i in index {
            out.extend_from_slice(&d[i * c..(i + 1) * c]);
        }
        let index = index.to_vec();
        self.push("gather_rows", vec![index.len(), c], out, Op::GatherRows { x, index }, &[x])
    }

    /// Tiles a `1 × c` row into `n × c`.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let (r, c) = self.require_2d("repeat_rows", x)?;
        if r != 1 || n == 0 {
            return dim_err("repeat_rows", format!("needs a 1 x c row, got {r} x {c}"));
        }
        let out = self.data(x).repeat(n);
        self.push("repeat_rows", vec![n, c], out, Op::RepeatRows(x), &[x])
    }

    /// `out[index[k]] += x[k]` into a zeroed `1 × len` row.
    pub fn scatter_add(&mut self, x: Var, index: &[usize], len: usize) -> Result<Var> {
        let d = self.data(x);
        if d.len() != index.len() || index.iter().any(|&i| i >= len) {
            return dim_err("scatter_add", format!("{} values, {} indices, len {len}", d.len(), index.len()));
        }
        let mut out = vec![0.0; len];
        for (v, &i) in d.iter().zip(index) {
            out[i] += v;
        }
        let index = index.to_vec();
        self.push("scatter_add", vec![1, len], out, Op::ScatterAdd { x, index }, &[x])
    }

    /// Flat elements `x[index[k]]` as a `1 × n` row.
    pub fn pick(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let d = self.data(x);
        if index.is_empty() || index.iter().any(|&i| i >= d.len()) {
            return dim_err("pick", format!("index out of range for {} values", d.len()));
        }
        let out = index.iter().map(|&i| d[i]).collect();
        let index = index.to_vec();
        self.push("pick", vec![1, index.len()], out, Op::Pick { x, index }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.numel() || shape.contains(&0) {
            return dim_err("reshape", format!("{:?} -> {shape:?}", t.shape()));
        }
        let out = t.data().to_vec();
        self.push("reshape", shape.to_vec(), out, Op::Reshape(x), &[x])
    }

    /// Dot product of two equal-length vectors, as a one-element tensor.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).numel() != self.value(b).numel() {
            return dim_err("dot", format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        let b = if self.shape(a) == self.shape(b) {
            b
        } else {
            let s = self.shape(a).to_vec();
            self.reshape(b, &s)?
        };
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    /// 2-D convolution of a `C × H × W` input with `O × C × k × k` kernels.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != ws[3] || stride == 0 {
            return dim_err("conv2d", format!("input {xs:?}, kernel {ws:?}"));
        }
        if self.value(b).numel() != ws[0] {
            return dim_err("conv2d", "bias size must equal output channels");
        }
        let (cin, h, wid) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[2]);
        if h + 2 * pad < k || wid + 2 * pad < k {
            return dim_err("conv2d", format!("input {h}x{wid} smaller than kernel {k}"));
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wid + 2 * pad - k) / stride + 1;
        let (xd, wd, bd) = (self.data(x), self.data(w), self.data(b));
        let mut out = vec![0.0; cout * oh * ow];
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = bd[co];
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
                                s += xd[(ci * h + iy as usize) * wid + ix as usize]
                                    * wd[((co * cin + ci) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = s;
                }
            }
        }
        self.push(
            "conv2d",
            vec![cout, oh, ow],
            out,
            Op::Conv2d { x, w, b, stride, pad },
            &[x, w, b],
        )
    }

    /// Spatial mean of a `C × H × W` tensor, as a `1 × C` row.
    pub fn avg_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return dim_err("avg_pool", format!("expected C x H x W, got {s:?}"));
        }
        let hw = s[1] * s[2];
        let out = self.data(x).chunks(hw).map(|c| c.iter().sum::<Float>() / hw as Float).collect();
        self.push("avg_pool", vec![1, s[0]], out, Op::AvgPool(x), &[x])
    }

    /// A zero-filled constant.
    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(Tensor::zeros(shape.to_vec()))
    }
}

fn matmul_nn(a: &[Float], b: &[Float], m: usize, k: usize, n: usize) -> Vec<Float> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let orow = &mut out[r * n..(r + 1) * n];
        for c in 0..k {
            let av = a[r * k + c];
            if av == 0.0 {
                continue;
            }
            let brow = &b[c * n..(c + 1) * n];
            orow.iter_mut().zip(brow).for_each(|(o, bv)| *o += av * bv);
        }
    }
    out
}
