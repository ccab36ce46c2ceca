//! Tape of recorded operations and its reverse sweep.

use crate::error::{Error, Result};

use super::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
        // im2col of the input, [cin*k*k, ho*wo]
        cols: Vec<f64>,
    },
    Adain {
        x: Var,
        scale: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Linear {
        x: Var,
        weight: Var,
        bias: Var,
    },
    LeakyRelu {
        x: Var,
        alpha: f64,
    },
    Tanh {
        x: Var,
    },
    Upsample2x {
        x: Var,
    },
    DownsampleAvg {
        x: Var,
        k: usize,
    },
    L1 {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Narrow {
        x: Var,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape. Build one per forward pass; [`Graph::backward`]
/// consumes it, so intermediate buffers are released after every sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every leaf registered with
/// `requires_grad = true`.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` for leaves that do not require grad or that the output does
    /// not depend on.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Like [`Gradients::get`] but yields zeros of the given length when the
    /// output does not depend on `var`.
    pub fn get_or_zeros(&self, var: Var, len: usize) -> Vec<f64> {
        match self.get(var) {
            Some(g) => g.to_vec(),
            None => vec![0.0; len],
        }
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], usize, usize),
    b: (&[f64], usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices whose extents cover the strided m×k, k×n
    // and m×n (row-major, contiguous) views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn offset(&self, o: usize, kk: usize, n: usize) -> Option<usize> {
        let i = (o * self.stride + kk) as isize - self.padding as isize;
        (i >= 0 && (i as usize) < n).then_some(i as usize)
    }
}

fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let hw = g.ho * g.wo;
    let mut cols = vec![0.0; g.cin * g.k * g.k * hw];
    for ci in 0..g.cin {
        let plane = &input[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * hw;
                for oy in 0..g.ho {
                    let Some(iy) = g.offset(oy, ky, g.h) else { continue };
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let dst = &mut cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        if let Some(ix) = g.offset(ox, kx, g.w) {
                            *d = src[ix];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f64], g: &ConvGeom, out: &mut [f64]) {
    let hw = g.ho * g.wo;
    for ci in 0..g.cin {
        let plane = &mut out[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((ci * g.k + ky) * g.k + kx) * hw;
                for oy in 0..g.ho {
                    let Some(iy) = g.offset(oy, ky, g.h) else { continue };
                    let src = &cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    for (ox, s) in src.iter().enumerate() {
                        if let Some(ix) = g.offset(ox, kx, g.w) {
                            dst[ix] += s;
                        }
                    }
                }
            }
        }
    }
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::dim(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

fn chw(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    expect_rank(op, t, 3)?;
    let s = t.shape();
    Ok((s[0], s[1], s[2]))
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
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

    /// Registers a leaf. Gradients are reported only for leaves created with
    /// `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Strided cross-correlation of `input [C_in,H,W]` with
    /// `kernel [C_out,C_in,k,k]` plus a per-channel bias.
    pub fn conv2d_strided(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        const OP: &str = "conv2d";
        let x = self.value(input);
        let wt = self.value(kernel);
        let b = self.value(bias);
        let (cin, h, w) = chw(OP, x)?;
        expect_rank(OP, wt, 4)?;
        let ks = wt.shape();
        let (cout, k) = (ks[0], ks[2]);
        if ks[1] != cin || ks[3] != k {
            return Err(Error::dim(
                OP,
                format!("kernel {ks:?} incompatible with input {:?}", x.shape()),
            ));
        }
        if b.shape() != [cout] {
            return Err(Error::dim(OP, format!("bias {:?} for {cout} channels", b.shape())));
        }
        if stride == 0 || h + 2 * padding < k || w + 2 * padding < k {
            return Err(Error::dim(
                OP,
                format!("kernel {k} stride {stride} padding {padding} on {h}x{w}"),
            ));
        }
        let geom = ConvGeom {
            cin,
            h,
            w,
            k,
            stride,
            padding,
            ho: (h + 2 * padding - k) / stride + 1,
            wo: (w + 2 * padding - k) / stride + 1,
        };
        let hw = geom.ho * geom.wo;
        let ckk = cin * k * k;
        let cols = im2col(x.data(), &geom);
        let mut out = Vec::with_capacity(cout * hw);
        for &bc in b.data() {
            out.extend(std::iter::repeat_n(bc, hw));
        }
        gemm(cout, ckk, hw, (wt.data(), ckk, 1), (&cols, hw, 1), &mut out, 1.0);
        let value = Tensor::from_parts(vec![cout, geom.ho, geom.wo], out);
        self.push(
            OP,
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
                cols,
            },
            &[input, kernel, bias],
        )
    }

    /// Stride-1 convolution; `padding = (k-1)/2` keeps the spatial size.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, padding: usize) -> Result<Var> {
        self.conv2d_strided(input, kernel, bias, 1, padding)
    }

    /// Adaptive instance normalization: per-channel standardization with
    /// population variance, then `scale[c] * x̂ + bias[c]`.
    pub fn adain(&mut self, x: Var, scale: Var, bias: Var, eps: f64) -> Result<Var> {
        const OP: &str = "adain";
        if eps <= 0.0 {
            return Err(Error::invalid("adain eps must be positive"));
        }
        let xv = self.value(x);
        let (c, h, w) = chw(OP, xv)?;
        let sv = self.value(scale);
        let bv = self.value(bias);
        if sv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::dim(
                OP,
                format!("scale {:?} bias {:?} for {c} channels", sv.shape(), bv.shape()),
            ));
        }
        let n = h * w;
        let mut xhat = vec![0.0; c * n];
        let mut inv_std = vec![0.0; c];
        let mut out = vec![0.0; c * n];
        for ch in 0..c {
            let plane = &xv.data()[ch * n..(ch + 1) * n];
            let mean = plane.iter().sum::<f64>() / n as f64;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[ch] = inv;
            let (s, b) = (sv.data()[ch], bv.data()[ch]);
            for i in 0..n {
                let xh = (plane[i] - mean) * inv;
                xhat[ch * n + i] = xh;
                out[ch * n + i] = s * xh + b;
            }
        }
        let value = Tensor::from_parts(vec![c, h, w], out);
        self.push(
            OP,
            value,
            Op::Adain {
                x,
                scale,
                bias,
                xhat,
                inv_std,
            },
            &[x, scale, bias],
        )
    }

    /// `weight [m,n] · x [n] + bias [m]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "linear";
        let xv = self.value(x);
        let wv = self.value(weight);
        let bv = self.value(bias);
        expect_rank(OP, xv, 1)?;
        expect_rank(OP, wv, 2)?;
        let (m, n) = (wv.shape()[0], wv.shape()[1]);
        if xv.len() != n || bv.shape() != [m] {
            return Err(Error::dim(
                OP,
                format!(
                    "weight {:?}, input {:?}, bias {:?}",
                    wv.shape(),
                    xv.shape(),
                    bv.shape()
                ),
            ));
        }
        let out: Vec<f64> = (0..m)
            .map(|i| {
                let row = &wv.data()[i * n..(i + 1) * n];
                bv.data()[i] + row.iter().zip(xv.data()).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        self.push(OP, Tensor::vector(out), Op::Linear { x, weight, bias }, &[x, weight, bias])
    }

    /// Elementwise `max(x, alpha x)`; the derivative at exactly zero is `alpha`.
    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { alpha * v })
            .collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push("leaky_relu", value, Op::LeakyRelu { x, alpha }, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push("tanh", value, Op::Tanh { x }, &[x])
    }

    /// Nearest-neighbour resize `[C,H,W] -> [C,2H,2W]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (c, h, w) = chw("upsample2x", xv)?;
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                let src = &xv.data()[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
                let dst = &mut out[(ch * h2 + y) * w2..(ch * h2 + y + 1) * w2];
                for (xo, d) in dst.iter_mut().enumerate() {
                    *d = src[xo / 2];
                }
            }
        }
        let value = Tensor::from_parts(vec![c, h2, w2], out);
        self.push("upsample2x", value, Op::Upsample2x { x }, &[x])
    }

    /// Mean over non-overlapping `k×k` blocks.
    pub fn downsample_avg(&mut self, x: Var, k: usize) -> Result<Var> {
        let xv = self.value(x);
        let value = downsample_avg(xv, k)?;
        self.push("downsample_avg", value, Op::DownsampleAvg { x, k }, &[x])
    }

    /// Mean absolute difference, as a one-element tensor.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("l1_loss", av, bv)?;
        let loss = av.l1_distance(bv)?;
        self.push("l1_loss", Tensor::scalar(loss), Op::L1 { a, b }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("add", av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_parts(av.shape().to_vec(), data);
        self.push("add", value, Op::Add { a, b }, &[a, b])
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("mul", av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_parts(av.shape().to_vec(), data);
        self.push("mul", value, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * factor).collect();
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push("scale", value, Op::Scale { x, factor }, &[x])
    }

    /// Contiguous sub-range `[start, start+len)` of a flattened tensor, as a
    /// vector.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.len() {
            return Err(Error::dim(
                "narrow",
                format!("range {start}..{} of {} values", start + len, xv.len()),
            ));
        }
        let value = Tensor::vector(xv.data()[start..start + len].to_vec());
        self.push("narrow", value, Op::Narrow { x, start }, &[x])
    }

    /// Flattens and concatenates into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let parts = parts.to_vec();
        let parents = parts.clone();
        self.push("concat", Tensor::vector(data), Op::Concat { parts }, &parents)
    }

    /// Sum of several scalars (or equally shaped tensors).
    pub fn sum(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::invalid("sum of zero terms"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Reverse sweep from a one-element output. Consumes the tape.
    pub fn backward(self, output: Var) -> Result<Gradients> {
        let n_out = self.nodes[output.0].value.len();
        if n_out != 1 {
            return Err(Error::dim(
                "backward",
                format!("output must be a scalar, has {n_out} values"),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[output.0].requires_grad {
            grads[output.0] = Some(vec![1.0]);
        }
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            self.backprop_node(node, &gout, &mut grads);
        }
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        fn acc<'g>(
            grads: &'g mut [Option<Vec<f64>>],
            nodes: &[Node],
            v: Var,
        ) -> &'g mut Vec<f64> {
            let len = nodes[v.0].value.len();
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
                cols,
            } => {
                let xs = nodes[input.0].value.shape();
                let ks = nodes[kernel.0].value.shape();
                let (cout, k) = (ks[0], ks[2]);
                let os = node.value.shape();
                let geom = ConvGeom {
                    cin: xs[0],
                    h: xs[1],
                    w: xs[2],
                    k,
                    stride: *stride,
                    padding: *padding,
                    ho: os[1],
                    wo: os[2],
                };
                let hw = geom.ho * geom.wo;
                let ckk = geom.cin * k * k;
                if wants(*bias) {
                    let gb = acc(grads, nodes, *bias);
                    for (co, g) in gb.iter_mut().enumerate() {
                        *g += gout[co * hw..(co + 1) * hw].iter().sum::<f64>();
                    }
                }
                if wants(*kernel) {
                    let gk = acc(grads, nodes, *kernel);
                    gemm(cout, hw, ckk, (gout, hw, 1), (cols, 1, hw), gk, 1.0);
                }
                if wants(*input) {
                    let wt = nodes[kernel.0].value.data();
                    let mut dcols = vec![0.0; ckk * hw];
                    gemm(ckk, cout, hw, (wt, 1, ckk), (gout, hw, 1), &mut dcols, 0.0);
                    let gx = acc(grads, nodes, *input);
                    col2im_add(&dcols, &geom, gx);
                }
            }
            Op::Adain {
                x,
                scale,
                bias,
                xhat,
                inv_std,
            } => {
                let c = inv_std.len();
                let n = xhat.len() / c;
                let sv = nodes[scale.0].value.data();
                if wants(*scale) {
                    let gs = acc(grads, nodes, *scale);
                    for ch in 0..c {
                        gs[ch] += gout[ch * n..(ch + 1) * n]
                            .iter()
                            .zip(&xhat[ch * n..(ch + 1) * n])
                            .map(|(g, xh)| g * xh)
                            .sum::<f64>();
                    }
                }
                if wants(*bias) {
                    let gb = acc(grads, nodes, *bias);
                    for ch in 0..c {
                        gb[ch] += gout[ch * n..(ch + 1) * n].iter().sum::<f64>();
                    }
                }
                if wants(*x) {
                    let gx = acc(grads, nodes, *x);
                    let nf = n as f64;
                    for ch in 0..c {
                        let go = &gout[ch * n..(ch + 1) * n];
                        let xh = &xhat[ch * n..(ch + 1) * n];
                        let s = sv[ch];
                        let sum_d: f64 = go.iter().sum::<f64>() * s;
                        let sum_dx: f64 = go.iter().zip(xh).map(|(g, v)| g * v).sum::<f64>() * s;
                        let k = inv_std[ch] / nf;
                        for i in 0..n {
                            gx[ch * n + i] += k * (nf * s * go[i] - sum_d - xh[i] * sum_dx);
                        }
                    }
                }
            }
            Op::Linear { x, weight, bias } => {
                let xv = nodes[x.0].value.data();
                let wv = nodes[weight.0].value.data();
                let (m, n) = (gout.len(), xv.len());
                if wants(*bias) {
                    let gb = acc(grads, nodes, *bias);
                    for (g, d) in gb.iter_mut().zip(gout) {
                        *g += d;
                    }
                }
                if wants(*weight) {
                    let gw = acc(grads, nodes, *weight);
                    for i in 0..m {
                        for j in 0..n {
                            gw[i * n + j] += gout[i] * xv[j];
                        }
                    }
                }
                if wants(*x) {
                    let gx = acc(grads, nodes, *x);
                    for i in 0..m {
                        let row = &wv[i * n..(i + 1) * n];
                        for j in 0..n {
                            gx[j] += gout[i] * row[j];
                        }
                    }
                }
            }
            Op::LeakyRelu { x, alpha } => {
                if wants(*x) {
                    let xv = nodes[x.0].value.data();
                    let gx = acc(grads, nodes, *x);
                    for i in 0..gout.len() {
                        gx[i] += if xv[i] > 0.0 { gout[i] } else { alpha * gout[i] };
                    }
                }
            }
            Op::Tanh { x } => {
                if wants(*x) {
                    let y = node.value.data();
                    let gx = acc(grads, nodes, *x);
                    for i in 0..gout.len() {
                        gx[i] += gout[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            Op::Upsample2x { x } => {
                if wants(*x) {
                    let s = nodes[x.0].value.shape();
                    let (c, h, w) = (s[0], s[1], s[2]);
                    let (h2, w2) = (2 * h, 2 * w);
                    let gx = acc(grads, nodes, *x);
                    for ch in 0..c {
                        for y in 0..h2 {
                            let src = &gout[(ch * h2 + y) * w2..(ch * h2 + y + 1) * w2];
                            let dst = &mut gx[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
                            for (xo, g) in src.iter().enumerate() {
                                dst[xo / 2] += g;
                            }
                        }
                    }
                }
            }
            Op::DownsampleAvg { x, k } => {
                if wants(*x) {
                    let s = nodes[x.0].value.shape();
                    let (c, h, w) = (s[0], s[1], s[2]);
                    let (ho, wo) = (h / k, w / k);
                    let inv = 1.0 / (k * k) as f64;
                    let gx = acc(grads, nodes, *x);
                    for ch in 0..c {
                        for y in 0..h {
                            for xx in 0..w {
                                gx[(ch * h + y) * w + xx] +=
                                    gout[(ch * ho + y / k) * wo + xx / k] * inv;
                            }
                        }
                    }
                }
            }
            Op::L1 { a, b } => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                let scale = gout[0] / av.len().max(1) as f64;
                let sign = |d: f64| {
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                if wants(*a) {
                    let ga = acc(grads, nodes, *a);
                    for i in 0..av.len() {
                        ga[i] += scale * sign(av[i] - bv[i]);
                    }
                }
                if wants(*b) {
                    let gb = acc(grads, nodes, *b);
                    for i in 0..av.len() {
                        gb[i] -= scale * sign(av[i] - bv[i]);
                    }
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if wants(v) {
                        let g = acc(grads, nodes, v);
                        for (gi, d) in g.iter_mut().zip(gout) {
                            *gi += d;
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                if wants(*a) {
                    let g = acc(grads, nodes, *a);
                    for i in 0..g.len() {
                        g[i] += gout[i] * bv[i];
                    }
                }
                if wants(*b) {
                    let g = acc(grads, nodes, *b);
                    for i in 0..g.len() {
                        g[i] += gout[i] * av[i];
                    }
                }
            }
            Op::Scale { x, factor } => {
                if wants(*x) {
                    let g = acc(grads, nodes, *x);
                    for (gi, d) in g.iter_mut().zip(gout) {
                        *gi += factor * d;
                    }
                }
            }
            Op::Narrow { x, start } => {
                if wants(*x) {
                    let g = acc(grads, nodes, *x);
                    for (gi, d) in g[*start..*start + gout.len()].iter_mut().zip(gout) {
                        *gi += d;
                    }
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    if wants(p) {
                        let g = acc(grads, nodes, p);
                        for (gi, d) in g.iter_mut().zip(&gout[offset..offset + len]) {
                            *gi += d;
                        }
                    }
                    offset += len;
                }
            }
        }
    }
}

/// Plain (non-recorded) block-mean downsampling.
pub fn downsample_avg(x: &Tensor, k: usize) -> Result<Tensor> {
    const OP: &str = "downsample_avg";
    let (c, h, w) = chw(OP, x)?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::dim(OP, format!("factor {k} does not divide {h}x{w}")));
    }
    let (ho, wo) = (h / k, w / k);
    let mut out = vec![0.0; c * ho * wo];
    let inv = 1.0 / (k * k) as f64;
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[(ch * ho + y / k) * wo + xx / k] += x.data()[(ch * h + y) * w + xx];
            }
        }
    }
    for v in &mut out {
        *v *= inv;
    }
    Ok(Tensor::from_parts(vec![c, ho, wo], out))
}
