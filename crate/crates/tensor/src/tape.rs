use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops::conv::{
    conv2d_backward, conv2d_forward, conv_out_extent, dwconv2d_backward, dwconv2d_forward,
    tconv2d_backward, tconv2d_forward, tconv_out_extent,
};
use crate::ops::matmul::matmul_t;
use crate::ops::norm::{layer_norm, layer_norm_backward, lanes, softmax, softmax_backward};
use crate::ops::pointwise::{
    clamp01, clamp01_backward, gaussian_bits, gaussian_bits_backward, leaky_relu,
    leaky_relu_backward, sigmoid, sigmoid_backward, softplus, softplus_backward,
};
use crate::tensor::Tensor;

/// Negative-side slope shared by every LeakyReLU in the crate family.
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value held by a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct ValId(u32);

impl ValId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug)]
enum Node {
    Leaf,
    Add(ValId, ValId),
    Sub(ValId, ValId),
    Mul(ValId, ValId),
    Scale(ValId, f64),
    MulSpatial {
        x: ValId,
        m: ValId,
    },
    ExpandSpatial {
        x: ValId,
    },
    Conv2d {
        x: ValId,
        w: ValId,
        b: Option<ValId>,
        stride: usize,
        pad: usize,
    },
    DwConv2d {
        x: ValId,
        w: ValId,
        b: Option<ValId>,
        stride: usize,
        pad: usize,
    },
    TConv2d {
        x: ValId,
        w: ValId,
        b: Option<ValId>,
        stride: usize,
        pad: usize,
    },
    Matmul {
        a: ValId,
        b: ValId,
        tb: bool,
    },
    AddRowBias {
        x: ValId,
        b: ValId,
    },
    LeakyRelu(ValId),
    Sigmoid(ValId),
    Softplus(ValId),
    Clamp01(ValId),
    Softmax {
        x: ValId,
        axis: usize,
    },
    LayerNorm {
        x: ValId,
        gamma: ValId,
        beta: ValId,
    },
    Concat {
        inputs: Vec<ValId>,
        axis: usize,
    },
    Slice {
        x: ValId,
        axis: usize,
        start: usize,
    },
    Reshape(ValId),
    Mean(ValId),
    Sum(ValId),
    Mse(ValId, ValId),
    GaussianBits {
        f: ValId,
        mu: ValId,
        sigma: ValId,
    },
}

/// Records primitive applications in construction order; node inputs always
/// precede their consumers, so one reverse sweep computes all gradients.
pub struct Tape<T: Element> {
    vals: Vec<Tensor<T>>,
    nodes: Vec<Node>,
    trainable: Vec<bool>,
    grad_enabled: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    /// Tape that records backward information.
    pub fn new() -> Self {
        Self {
            vals: Vec::new(),
            nodes: Vec::new(),
            trainable: Vec::new(),
            grad_enabled: true,
        }
    }

    /// Tape that runs the identical forward arithmetic but records nothing,
    /// for the coding paths where determinism matters and gradients do not.
    pub fn no_grad() -> Self {
        Self {
            vals: Vec::new(),
            nodes: Vec::new(),
            trainable: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn val(&self, id: ValId) -> &Tensor<T> {
        &self.vals[id.idx()]
    }

    pub fn is_trainable(&self, id: ValId) -> bool {
        self.trainable[id.idx()]
    }

    pub fn leaf(&mut self, t: Tensor<T>, trainable: bool) -> ValId {
        self.push(t, Node::Leaf, trainable)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> ValId {
        self.leaf(t, false)
    }

    fn push(&mut self, t: Tensor<T>, node: Node, trainable: bool) -> ValId {
        let id = ValId(self.vals.len() as u32);
        self.vals.push(t);
        if self.grad_enabled {
            self.nodes.push(node);
        } else {
            self.nodes.push(Node::Leaf);
        }
        self.trainable.push(trainable);
        id
    }

    fn out(&mut self, t: Tensor<T>, node: Node) -> ValId {
        self.push(t, node, false)
    }

    fn same_shape(&self, a: ValId, b: ValId, ctx: &str) -> Result<()> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(TensorError::ShapeMismatch {
                expected: self.val(a).shape().to_vec(),
                got: self.val(b).shape().to_vec(),
                context: ctx.to_string(),
            });
        }
        Ok(())
    }

    // ---- elementwise -----------------------------------------------------

    pub fn add(&mut self, a: ValId, b: ValId) -> Result<ValId> {
        self.same_shape(a, b, "add")?;
        let data = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::from_parts(self.val(a).shape().to_vec(), data);
        Ok(self.out(t, Node::Add(a, b)))
    }

    pub fn sub(&mut self, a: ValId, b: ValId) -> Result<ValId> {
        self.same_shape(a, b, "sub")?;
        let data = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let t = Tensor::from_parts(self.val(a).shape().to_vec(), data);
        Ok(self.out(t, Node::Sub(a, b)))
    }

    pub fn mul(&mut self, a: ValId, b: ValId) -> Result<ValId> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .val(a)
            .data()
            .iter()
            .zip(self.val(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::from_parts(self.val(a).shape().to_vec(), data);
        Ok(self.out(t, Node::Mul(a, b)))
    }

    pub fn scale(&mut self, x: ValId, c: f64) -> ValId {
        let cc = T::from_f64(c);
        let t = self.val(x).map(|v| v * cc);
        self.out(t, Node::Scale(x, c))
    }

    /// x[c,h,w] * m[h,w], broadcasting m over channels.
    pub fn mul_spatial(&mut self, x: ValId, m: ValId) -> Result<ValId> {
        let (xs, ms) = (self.val(x).shape().to_vec(), self.val(m).shape().to_vec());
        if xs.len() != 3 || ms.len() != 2 || xs[1] != ms[0] || xs[2] != ms[1] {
            return Err(TensorError::ShapeMismatch {
                expected: xs,
                got: ms,
                context: "mul_spatial wants [c,h,w] x [h,w]".into(),
            });
        }
        let (c, hw) = (xs[0], xs[1] * xs[2]);
        let xd = self.val(x).data();
        let md = self.val(m).data();
        let mut data = vec![T::ZERO; c * hw];
        for ch in 0..c {
            for p in 0..hw {
                data[ch * hw + p] = xd[ch * hw + p] * md[p];
            }
        }
        let t = Tensor::from_parts(xs, data);
        Ok(self.out(t, Node::MulSpatial { x, m }))
    }

    /// Broadcast a per-channel vector [c] to [c,h,w].
    pub fn expand_spatial(&mut self, x: ValId, h: usize, w: usize) -> Result<ValId> {
        if self.val(x).rank() != 1 {
            return Err(TensorError::Dimension(
                "expand_spatial wants a rank-1 input".into(),
            ));
        }
        let c = self.val(x).shape()[0];
        let xd = self.val(x).data();
        let mut data = vec![T::ZERO; c * h * w];
        for ch in 0..c {
            data[ch * h * w..(ch + 1) * h * w].fill(xd[ch]);
        }
        let t = Tensor::from_parts(vec![c, h, w], data);
        Ok(self.out(t, Node::ExpandSpatial { x }))
    }

    // ---- convolutions ----------------------------------------------------

    /// Cross-correlation of x[ci,h,w] with w[co,ci,k,k], odd k.
    pub fn conv2d(
        &mut self,
        x: ValId,
        w: ValId,
        b: Option<ValId>,
        stride: usize,
        pad: usize,
    ) -> Result<ValId> {
        let xs = self.val(x).shape().to_vec();
        let ws = self.val(w).shape().to_vec();
        if xs.len() != 3 || ws.len() != 4 {
            return Err(TensorError::Dimension(format!(
                "conv2d wants x[ci,h,w], w[co,ci,k,k]; got {xs:?}, {ws:?}"
            )));
        }
        let (ci, h, wd) = (xs[0], xs[1], xs[2]);
        let (co, wci, k, k2) = (ws[0], ws[1], ws[2], ws[3]);
        if k != k2 || k % 2 == 0 {
            return Err(TensorError::Dimension(format!(
                "conv2d kernel must be square with odd extent, got {k}x{k2}"
            )));
        }
        if wci != ci {
            return Err(TensorError::ShapeMismatch {
                expected: vec![co, ci, k, k],
                got: ws,
                context: "conv2d weight channels".into(),
            });
        }
        if stride == 0 {
            return Err(TensorError::Dimension("conv2d stride must be >= 1".into()));
        }
        if let Some(bid) = b {
            if self.val(bid).shape() != [co] {
                return Err(TensorError::ShapeMismatch {
                    expected: vec![co],
                    got: self.val(bid).shape().to_vec(),
                    context: "conv2d bias".into(),
                });
            }
        }
        let ho = conv_out_extent(h, k, stride, pad)
            .ok_or_else(|| TensorError::Dimension(format!("conv2d output empty: h={h}, k={k}")))?;
        let wo = conv_out_extent(wd, k, stride, pad)
            .ok_or_else(|| TensorError::Dimension(format!("conv2d output empty: w={wd}, k={k}")))?;
        let bias = b.map(|bid| self.val(bid).data().to_vec());
        let out = conv2d_forward(
            self.val(x).data(),
            ci,
            h,
            wd,
            self.val(w).data(),
            co,
            k,
            bias.as_deref(),
            stride,
            pad,
            ho,
            wo,
        );
        let t = Tensor::from_parts(vec![co, ho, wo], out);
        Ok(self.out(t, Node::Conv2d { x, w, b, stride, pad }))
    }

    /// Depthwise cross-correlation of x[c,h,w] with w[c,k,k].
    pub fn depthwise_conv2d(
        &mut self,
        x: ValId,
        w: ValId,
        b: Option<ValId>,
        stride: usize,
        pad: usize,
    ) -> Result<ValId> {
        let xs = self.val(x).shape().to_vec();
        let ws = self.val(w).shape().to_vec();
        if xs.len() != 3 || ws.len() != 3 || ws[0] != xs[0] || ws[1] != ws[2] || ws[1] % 2 == 0 {
            return Err(TensorError::Dimension(format!(
                "depthwise_conv2d wants x[c,h,w], w[c,k,k] with odd k; got {xs:?}, {ws:?}"
            )));
        }
        let (c, h, wd, k) = (xs[0], xs[1], xs[2], ws[1]);
        let ho = conv_out_extent(h, k, stride, pad)
            .ok_or_else(|| TensorError::Dimension("depthwise output empty".into()))?;
        let wo = conv_out_extent(wd, k, stride, pad)
            .ok_or_else(|| TensorError::Dimension("depthwise output empty".into()))?;
        let bias = b.map(|bid| self.val(bid).data().to_vec());
        let out = dwconv2d_forward(
            self.val(x).data(),
            c,
            h,
            wd,
            self.val(w).data(),
            k,
            bias.as_deref(),
            stride,
            pad,
            ho,
            wo,
        );
        let t = Tensor::from_parts(vec![c, ho, wo], out);
        Ok(self.out(t, Node::DwConv2d { x, w, b, stride, pad }))
    }

    /// Transpose convolution of x[ci,hi,wi] with w[ci,co,k,k]: the adjoint of
    /// conv2d sharing the weight layout. Output extent stride*(hi-1)+k-2*pad.
    pub fn transpose_conv2d(
        &mut self,
        x: ValId,
        w: ValId,
        b: Option<ValId>,
        stride: usize,
        pad: usize,
    ) -> Result<ValId> {
        let xs = self.val(x).shape().to_vec();
        let ws = self.val(w).shape().to_vec();
        if xs.len() != 3 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(TensorError::Dimension(format!(
                "transpose_conv2d wants x[ci,h,w], w[ci,co,k,k]; got {xs:?}, {ws:?}"
            )));
        }
        if ws[0] != xs[0] {
            return Err(TensorError::ShapeMismatch {
                expected: vec![xs[0], ws[1], ws[2], ws[3]],
                got: ws,
                context: "transpose_conv2d weight channels".into(),
            });
        }
        let (ci, hi, wi) = (xs[0], xs[1], xs[2]);
        let (co, k) = (ws[1], ws[2]);
        let ho = tconv_out_extent(hi, k, stride, pad)
            .ok_or_else(|| TensorError::Dimension("transpose_conv2d output empty".into()))?;
        let wo = tconv_out_extent(wi, k, stride, pad)
            .ok_or_else(|| TensorError::Dimension("transpose_conv2d output empty".into()))?;
        let bias = b.map(|bid| self.val(bid).data().to_vec());
        let out = tconv2d_forward(
            self.val(x).data(),
            ci,
            hi,
            wi,
            self.val(w).data(),
            co,
            k,
            bias.as_deref(),
            stride,
            pad,
            ho,
            wo,
        );
        let t = Tensor::from_parts(vec![co, ho, wo], out);
        Ok(self.out(t, Node::TConv2d { x, w, b, stride, pad }))
    }

    // ---- linear algebra ---------------------------------------------------

    pub fn matmul(&mut self, a: ValId, b: ValId) -> Result<ValId> {
        self.matmul_impl(a, b, false)
    }

    /// a[m,k] . b[n,k]^T, used by attention without materializing k^T on the
    /// caller side.
    pub fn matmul_nt(&mut self, a: ValId, b: ValId) -> Result<ValId> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: ValId, b: ValId, tb: bool) -> Result<ValId> {
        let asp = self.val(a).shape().to_vec();
        let bsp = self.val(b).shape().to_vec();
        if asp.len() != 2 || bsp.len() != 2 {
            return Err(TensorError::Dimension(format!(
                "matmul wants rank-2 operands, got {asp:?}, {bsp:?}"
            )));
        }
        let inner_b = if tb { bsp[1] } else { bsp[0] };
        if asp[1] != inner_b {
            return Err(TensorError::ShapeMismatch {
                expected: asp.clone(),
                got: bsp.clone(),
                context: "matmul inner extents".into(),
            });
        }
        let n = if tb { bsp[0] } else { bsp[1] };
        let out = matmul_t(
            self.val(a).data(),
            asp[0],
            asp[1],
            false,
            self.val(b).data(),
            bsp[0],
            bsp[1],
            tb,
        );
        let t = Tensor::from_parts(vec![asp[0], n], out);
        Ok(self.out(t, Node::Matmul { a, b, tb }))
    }

    /// x[m,n] + b[n] broadcast over rows.
    pub fn add_row_bias(&mut self, x: ValId, b: ValId) -> Result<ValId> {
        let xs = self.val(x).shape().to_vec();
        let bs = self.val(b).shape().to_vec();
        if xs.len() != 2 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(TensorError::ShapeMismatch {
                expected: vec![xs.last().copied().unwrap_or(0)],
                got: bs,
                context: "add_row_bias".into(),
            });
        }
        let (m, n) = (xs[0], xs[1]);
        let xd = self.val(x).data();
        let bd = self.val(b).data();
        let mut data = vec![T::ZERO; m * n];
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] = xd[i * n + j] + bd[j];
            }
        }
        let t = Tensor::from_parts(xs, data);
        Ok(self.out(t, Node::AddRowBias { x, b }))
    }

    // ---- activations ------------------------------------------------------

    pub fn leaky_relu(&mut self, x: ValId) -> ValId {
        let out = leaky_relu(self.val(x).data(), LEAKY_RELU_SLOPE);
        let t = Tensor::from_parts(self.val(x).shape().to_vec(), out);
        self.out(t, Node::LeakyRelu(x))
    }

    pub fn sigmoid(&mut self, x: ValId) -> ValId {
        let out = sigmoid(self.val(x).data());
        let t = Tensor::from_parts(self.val(x).shape().to_vec(), out);
        self.out(t, Node::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: ValId) -> ValId {
        let out = softplus(self.val(x).data());
        let t = Tensor::from_parts(self.val(x).shape().to_vec(), out);
        self.out(t, Node::Softplus(x))
    }

    pub fn clamp01(&mut self, x: ValId) -> ValId {
        let out = clamp01(self.val(x).data());
        let t = Tensor::from_parts(self.val(x).shape().to_vec(), out);
        self.out(t, Node::Clamp01(x))
    }

    pub fn softmax(&mut self, x: ValId, axis: usize) -> Result<ValId> {
        let shape = self.val(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                axis,
                rank: shape.len(),
            });
        }
        let out = softmax(self.val(x).data(), &shape, axis);
        let t = Tensor::from_parts(shape, out);
        Ok(self.out(t, Node::Softmax { x, axis }))
    }

    /// Layer norm over the last axis with affine gamma/beta of that extent.
    pub fn layer_norm(&mut self, x: ValId, gamma: ValId, beta: ValId) -> Result<ValId> {
        let shape = self.val(x).shape().to_vec();
        let dim = *shape.last().ok_or_else(|| {
            TensorError::Dimension("layer_norm wants rank >= 1".into())
        })?;
        if self.val(gamma).shape() != [dim] || self.val(beta).shape() != [dim] {
            return Err(TensorError::ShapeMismatch {
                expected: vec![dim],
                got: self.val(gamma).shape().to_vec(),
                context: "layer_norm affine params".into(),
            });
        }
        let out = layer_norm(
            self.val(x).data(),
            dim,
            self.val(gamma).data(),
            self.val(beta).data(),
            LAYER_NORM_EPS,
        );
        let t = Tensor::from_parts(shape, out);
        Ok(self.out(t, Node::LayerNorm { x, gamma, beta }))
    }

    // ---- shape ------------------------------------------------------------

    pub fn concat(&mut self, inputs: &[ValId], axis: usize) -> Result<ValId> {
        if inputs.is_empty() {
            return Err(TensorError::Dimension("concat of zero tensors".into()));
        }
        let first = self.val(inputs[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(TensorError::AxisOutOfRange {
                axis,
                rank: first.len(),
            });
        }
        let mut total_axis = 0;
        for &id in inputs {
            let s = self.val(id).shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(first.iter())
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(TensorError::ShapeMismatch {
                    expected: first.clone(),
                    got: s.to_vec(),
                    context: "concat operand".into(),
                });
            }
            total_axis += s[axis];
        }
        let mut shape = first.clone();
        shape[axis] = total_axis;
        let (outer, _, inner) = lanes(&shape, axis);
        let mut data = vec![T::ZERO; shape.iter().product()];
        for o in 0..outer {
            let mut lane_off = 0;
            for &id in inputs {
                let s = self.val(id).shape();
                let l = s[axis];
                let src = self.val(id).data();
                let src_base = o * l * inner;
                let dst_base = (o * total_axis + lane_off) * inner;
                data[dst_base..dst_base + l * inner]
                    .copy_from_slice(&src[src_base..src_base + l * inner]);
                lane_off += l;
            }
        }
        let t = Tensor::from_parts(shape, data);
        Ok(self.out(
            t,
            Node::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    pub fn slice(&mut self, x: ValId, axis: usize, start: usize, len: usize) -> Result<ValId> {
        let shape = self.val(x).shape().to_vec();
        if axis >= shape.len() {
            return Err(TensorError::AxisOutOfRange {
                axis,
                rank: shape.len(),
            });
        }
        if start + len > shape[axis] || len == 0 {
            return Err(TensorError::Dimension(format!(
                "slice [{start}, {start}+{len}) out of range for extent {}",
                shape[axis]
            )));
        }
        let (outer, lane, inner) = lanes(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let src = self.val(x).data();
        let mut data = vec![T::ZERO; outer * len * inner];
        for o in 0..outer {
            let src_base = (o * lane + start) * inner;
            let dst_base = o * len * inner;
            data[dst_base..dst_base + len * inner]
                .copy_from_slice(&src[src_base..src_base + len * inner]);
        }
        let t = Tensor::from_parts(out_shape, data);
        Ok(self.out(t, Node::Slice { x, axis, start }))
    }

    pub fn reshape(&mut self, x: ValId, shape: Vec<usize>) -> Result<ValId> {
        let t = self.val(x).reshaped(shape)?;
        Ok(self.out(t, Node::Reshape(x)))
    }

    // ---- reductions ---------------------------------------------------------

    pub fn mean(&mut self, x: ValId) -> ValId {
        let n = self.val(x).numel();
        let s = self
            .val(x)
            .data()
            .iter()
            .fold(T::ZERO, |acc, &v| acc + v);
        let t = Tensor::scalar(s * T::from_f64(1.0 / n as f64));
        self.out(t, Node::Mean(x))
    }

    pub fn sum(&mut self, x: ValId) -> ValId {
        let s = self
            .val(x)
            .data()
            .iter()
            .fold(T::ZERO, |acc, &v| acc + v);
        let t = Tensor::scalar(s);
        self.out(t, Node::Sum(x))
    }

    /// Mean squared error between same-shaped tensors, as a scalar.
    pub fn mse(&mut self, a: ValId, b: ValId) -> Result<ValId> {
        self.same_shape(a, b, "mse")?;
        let n = self.val(a).numel();
        let mut s = T::ZERO;
        for (&x, &y) in self.val(a).data().iter().zip(self.val(b).data()) {
            let d = x - y;
            s += d * d;
        }
        let t = Tensor::scalar(s * T::from_f64(1.0 / n as f64));
        Ok(self.out(t, Node::Mse(a, b)))
    }

    /// Elementwise discretized-Gaussian code length in bits.
    pub fn gaussian_bits(&mut self, f: ValId, mu: ValId, sigma: ValId) -> Result<ValId> {
        self.same_shape(f, mu, "gaussian_bits mu")?;
        self.same_shape(f, sigma, "gaussian_bits sigma")?;
        let out = gaussian_bits(
            self.val(f).data(),
            self.val(mu).data(),
            self.val(sigma).data(),
        );
        let t = Tensor::from_parts(self.val(f).shape().to_vec(), out);
        Ok(self.out(t, Node::GaussianBits { f, mu, sigma }))
    }

    // ---- backward -----------------------------------------------------------

    /// Reverse sweep from a scalar loss. Every recorded node is visited at
    /// most once, in reverse construction order.
    pub fn backward(&self, loss: ValId) -> Result<Gradients<T>> {
        if self.val(loss).numel() != 1 {
            return Err(TensorError::LossNotScalar(self.val(loss).shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.vals.len()];
        grads[loss.idx()] = Some(vec![T::ONE]);
        for idx in (0..=loss.idx()).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &g, &mut grads);
            // grads for non-leaf nodes are no longer needed once propagated;
            // leaves keep theirs for the caller.
            if matches!(self.nodes[idx], Node::Leaf) {
                grads[idx] = Some(g);
            }
        }
        let out = grads
            .into_iter()
            .zip(self.vals.iter())
            .map(|(g, v)| g.map(|buf| Tensor::from_parts(v.shape().to_vec(), buf)))
            .collect();
        Ok(Gradients { grads: out })
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let acc = |grads: &mut [Option<Vec<T>>], id: ValId, delta: &[T]| {
            let slot = grads[id.idx()].get_or_insert_with(|| vec![T::ZERO; delta.len()]);
            for (a, &d) in slot.iter_mut().zip(delta) {
                *a += d;
            }
        };
        match &self.nodes[idx] {
            Node::Leaf => {}
            Node::Add(a, b) => {
                acc(grads, *a, g);
                acc(grads, *b, g);
            }
            Node::Sub(a, b) => {
                acc(grads, *a, g);
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                acc(grads, *b, &neg);
            }
            Node::Mul(a, b) => {
                let da: Vec<T> = g
                    .iter()
                    .zip(self.val(*b).data())
                    .map(|(&gv, &bv)| gv * bv)
                    .collect();
                let db: Vec<T> = g
                    .iter()
                    .zip(self.val(*a).data())
                    .map(|(&gv, &av)| gv * av)
                    .collect();
                acc(grads, *a, &da);
                acc(grads, *b, &db);
            }
            Node::Scale(x, c) => {
                let cc = T::from_f64(*c);
                let dx: Vec<T> = g.iter().map(|&v| v * cc).collect();
                acc(grads, *x, &dx);
            }
            Node::MulSpatial { x, m } => {
                let xs = self.val(*x).shape();
                let (c, hw) = (xs[0], xs[1] * xs[2]);
                let xd = self.val(*x).data();
                let md = self.val(*m).data();
                let mut dx = vec![T::ZERO; c * hw];
                let mut dm = vec![T::ZERO; hw];
                for ch in 0..c {
                    for p in 0..hw {
                        dx[ch * hw + p] = g[ch * hw + p] * md[p];
                        dm[p] += g[ch * hw + p] * xd[ch * hw + p];
                    }
                }
                acc(grads, *x, &dx);
                acc(grads, *m, &dm);
            }
            Node::ExpandSpatial { x } => {
                let c = self.val(*x).shape()[0];
                let hw = g.len() / c;
                let mut dx = vec![T::ZERO; c];
                for ch in 0..c {
                    for p in 0..hw {
                        dx[ch] += g[ch * hw + p];
                    }
                }
                acc(grads, *x, &dx);
            }
            Node::Conv2d { x, w, b, stride, pad } => {
                let xs = self.val(*x).shape();
                let ws = self.val(*w).shape();
                let os = self.val(ValId(idx as u32)).shape();
                let (dx, dw, db) = conv2d_backward(
                    g,
                    self.val(*x).data(),
                    xs[0],
                    xs[1],
                    xs[2],
                    self.val(*w).data(),
                    ws[0],
                    ws[2],
                    *stride,
                    *pad,
                    os[1],
                    os[2],
                );
                acc(grads, *x, &dx);
                acc(grads, *w, &dw);
                if let Some(bid) = b {
                    acc(grads, *bid, &db);
                }
            }
            Node::DwConv2d { x, w, b, stride, pad } => {
                let xs = self.val(*x).shape();
                let ws = self.val(*w).shape();
                let os = self.val(ValId(idx as u32)).shape();
                let (dx, dw, db) = dwconv2d_backward(
                    g,
                    self.val(*x).data(),
                    xs[0],
                    xs[1],
                    xs[2],
                    self.val(*w).data(),
                    ws[1],
                    *stride,
                    *pad,
                    os[1],
                    os[2],
                );
                acc(grads, *x, &dx);
                acc(grads, *w, &dw);
                if let Some(bid) = b {
                    acc(grads, *bid, &db);
                }
            }
            Node::TConv2d { x, w, b, stride, pad } => {
                let xs = self.val(*x).shape();
                let ws = self.val(*w).shape();
                let os = self.val(ValId(idx as u32)).shape();
                let (dx, dw, db) = tconv2d_backward(
                    g,
                    self.val(*x).data(),
                    xs[0],
                    xs[1],
                    xs[2],
                    self.val(*w).data(),
                    ws[1],
                    ws[2],
                    *stride,
                    *pad,
                    os[1],
                    os[2],
                );
                acc(grads, *x, &dx);
                acc(grads, *w, &dw);
                if let Some(bid) = b {
                    acc(grads, *bid, &db);
                }
            }
            Node::Matmul { a, b, tb } => {
                let asp = self.val(*a).shape();
                let bsp = self.val(*b).shape();
                let (m, k) = (asp[0], asp[1]);
                let n = if *tb { bsp[0] } else { bsp[1] };
                // c = a . op(b); dc is [m,n]
                let da = matmul_t(
                    g,
                    m,
                    n,
                    false,
                    self.val(*b).data(),
                    bsp[0],
                    bsp[1],
                    !*tb,
                );
                let db = if *tb {
                    // b stored [n,k]; db = g^T . a
                    matmul_t(g, m, n, true, self.val(*a).data(), m, k, false)
                } else {
                    // b stored [k,n]; db = a^T . g
                    matmul_t(self.val(*a).data(), m, k, true, g, m, n, false)
                };
                acc(grads, *a, &da);
                acc(grads, *b, &db);
            }
            Node::AddRowBias { x, b } => {
                acc(grads, *x, g);
                let bs = self.val(*b).shape()[0];
                let rows = g.len() / bs;
                let mut db = vec![T::ZERO; bs];
                for r in 0..rows {
                    for j in 0..bs {
                        db[j] += g[r * bs + j];
                    }
                }
                acc(grads, *b, &db);
            }
            Node::LeakyRelu(x) => {
                let dx = leaky_relu_backward(g, self.val(*x).data(), LEAKY_RELU_SLOPE);
                acc(grads, *x, &dx);
            }
            Node::Sigmoid(x) => {
                let y = self.val(ValId(idx as u32)).data();
                let dx = sigmoid_backward(g, y);
                acc(grads, *x, &dx);
            }
            Node::Softplus(x) => {
                let dx = softplus_backward(g, self.val(*x).data());
                acc(grads, *x, &dx);
            }
            Node::Clamp01(x) => {
                let dx = clamp01_backward(g, self.val(*x).data());
                acc(grads, *x, &dx);
            }
            Node::Softmax { x, axis } => {
                let y = self.val(ValId(idx as u32));
                let dx = softmax_backward(g, y.data(), y.shape(), *axis);
                acc(grads, *x, &dx);
            }
            Node::LayerNorm { x, gamma, beta } => {
                let dim = *self.val(*x).shape().last().unwrap();
                let (dx, dgamma, dbeta) = layer_norm_backward(
                    g,
                    self.val(*x).data(),
                    dim,
                    self.val(*gamma).data(),
                    LAYER_NORM_EPS,
                );
                acc(grads, *x, &dx);
                acc(grads, *gamma, &dgamma);
                acc(grads, *beta, &dbeta);
            }
            Node::Concat { inputs, axis } => {
                let out_shape = self.val(ValId(idx as u32)).shape().to_vec();
                let (outer, total, inner) = lanes(&out_shape, *axis);
                let mut lane_off = 0;
                for &id in inputs {
                    let l = self.val(id).shape()[*axis];
                    let mut d = vec![T::ZERO; outer * l * inner];
                    for o in 0..outer {
                        let src_base = (o * total + lane_off) * inner;
                        let dst_base = o * l * inner;
                        d[dst_base..dst_base + l * inner]
                            .copy_from_slice(&g[src_base..src_base + l * inner]);
                    }
                    acc(grads, id, &d);
                    lane_off += l;
                }
            }
            Node::Slice { x, axis, start } => {
                let in_shape = self.val(*x).shape().to_vec();
                let out_shape = self.val(ValId(idx as u32)).shape().to_vec();
                let (outer, lane, inner) = lanes(&in_shape, *axis);
                let l = out_shape[*axis];
                let mut dx = vec![T::ZERO; self.val(*x).numel()];
                for o in 0..outer {
                    let dst_base = (o * lane + start) * inner;
                    let src_base = o * l * inner;
                    dx[dst_base..dst_base + l * inner]
                        .copy_from_slice(&g[src_base..src_base + l * inner]);
                }
                acc(grads, *x, &dx);
            }
            Node::Reshape(x) => {
                acc(grads, *x, g);
            }
            Node::Mean(x) => {
                let n = self.val(*x).numel();
                let gv = g[0] * T::from_f64(1.0 / n as f64);
                let dx = vec![gv; n];
                acc(grads, *x, &dx);
            }
            Node::Sum(x) => {
                let dx = vec![g[0]; self.val(*x).numel()];
                acc(grads, *x, &dx);
            }
            Node::Mse(a, b) => {
                let n = self.val(*a).numel();
                let c = g[0] * T::from_f64(2.0 / n as f64);
                let da: Vec<T> = self
                    .val(*a)
                    .data()
                    .iter()
                    .zip(self.val(*b).data())
                    .map(|(&x, &y)| c * (x - y))
                    .collect();
                let db: Vec<T> = da.iter().map(|&v| -v).collect();
                acc(grads, *a, &da);
                acc(grads, *b, &db);
            }
            Node::GaussianBits { f, mu, sigma } => {
                let (df, dmu, dsigma) = gaussian_bits_backward(
                    g,
                    self.val(*f).data(),
                    self.val(*mu).data(),
                    self.val(*sigma).data(),
                );
                acc(grads, *f, &df);
                acc(grads, *mu, &dmu);
                acc(grads, *sigma, &dsigma);
            }
        }
    }
}

/// Gradient buffers produced by one backward sweep, indexed by [`ValId`].
pub struct Gradients<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, id: ValId) -> Option<&Tensor<T>> {
        self.grads.get(id.0 as usize).and_then(|g| g.as_ref())
    }

    /// Gradient for a value that must have received one.
    pub fn expect(&self, id: ValId) -> &Tensor<T> {
        self.get(id).expect("value received no gradient")
    }
}
