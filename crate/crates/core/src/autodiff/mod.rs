//! Minimal reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] is a define-by-run tape: every operation appends a node that
//! records its inputs, and [`Graph::backward_seeded`] walks the tape in
//! reverse, applying each op's adjoint. Gradients accumulate on leaf nodes
//! that were created with `requires_grad`, so repeated backward calls sum
//! their contributions.
//!
//! The op set is exactly what a small encoder-decoder segmentation network
//! needs; there is no broadcasting beyond per-channel bias addition.

mod conv;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::tensor::{softmax_channels, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    SoftmaxChannels(NodeId),
    BiasAdd { input: NodeId, bias: NodeId },
    Conv { input: NodeId, kernel: NodeId },
    MaxPool2 { input: NodeId, argmax: Vec<u32> },
    UpsampleNearest2(NodeId),
    ConcatChannels(NodeId, NodeId),
    Dropout { input: NodeId, mask: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Define-by-run computation graph.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert an input tensor. Gradients accumulate on it iff `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a `requires_grad` leaf, if any backward pass
    /// has reached it.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<NodeId> {
        // Non-finite intermediates are programming or divergence errors;
        // surface them immediately in debug builds.
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(Error::Numeric(
                "non-finite intermediate in autodiff graph".into(),
            ));
        }
        Ok(self.push(value, op, requires_grad))
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.needs(a) || self.needs(b);
        self.push_checked(value, Op::Add(a, b), rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.needs(a) || self.needs(b);
        self.push_checked(value, Op::Mul(a, b), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.needs(a);
        self.push_checked(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let value = Tensor::scalar(self.value(a).mean());
        let rg = self.needs(a);
        self.push_checked(value, Op::Mean(a), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.needs(a);
        self.push_checked(value, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.needs(a);
        self.push_checked(value, Op::Sigmoid(a), rg)
    }

    pub fn softmax_channels(&mut self, a: NodeId) -> Result<NodeId> {
        let value = softmax_channels(self.value(a))?;
        let rg = self.needs(a);
        self.push_checked(value, Op::SoftmaxChannels(a), rg)
    }

    /// Add a `[C]` bias to a `[C, ...spatial]` tensor, one value per channel.
    pub fn bias_add(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let b = self.value(bias);
        if b.rank() != 1 || x.rank() < 1 || b.shape()[0] != x.shape()[0] {
            return Err(Error::DimensionMismatch(format!(
                "bias shape {:?} does not match input {:?}",
                b.shape(),
                x.shape()
            )));
        }
        let per: usize = x.shape()[1..].iter().product();
        let mut value = x.clone();
        for c in 0..b.shape()[0] {
            let bv = b.data()[c];
            for v in &mut value.data_mut()[c * per..(c + 1) * per] {
                *v += bv;
            }
        }
        let rg = self.needs(input) || self.needs(bias);
        self.push_checked(value, Op::BiasAdd { input, bias }, rg)
    }

    /// Same-padded stride-1 convolution.
    ///
    /// `input` is `[Cin, ...spatial]` (2 or 3 spatial axes), `kernel` is
    /// `[Cout, Cin, ...k]` with odd kernel extents.
    pub fn conv(&mut self, input: NodeId, kernel: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let k = self.value(kernel);
        let spatial = x.rank().saturating_sub(1);
        if spatial != 2 && spatial != 3 {
            return Err(Error::DimensionMismatch(format!(
                "conv input must be [C, ...] with 2 or 3 spatial axes, got {:?}",
                x.shape()
            )));
        }
        if k.rank() != spatial + 2 || k.shape()[1] != x.shape()[0] {
            return Err(Error::DimensionMismatch(format!(
                "kernel shape {:?} does not match input {:?}",
                k.shape(),
                x.shape()
            )));
        }
        if k.shape()[2..].iter().any(|&e| e % 2 == 0) {
            return Err(Error::Config(format!(
                "same-padding conv requires odd kernel extents, got {:?}",
                &k.shape()[2..]
            )));
        }
        let cout = k.shape()[0];
        let cin = x.shape()[0];
        let value = if spatial == 2 {
            let (h, w) = (x.shape()[1], x.shape()[2]);
            let (kh, kw) = (k.shape()[2], k.shape()[3]);
            let data = conv::conv2d_forward(x.data(), cin, h, w, k.data(), cout, kh, kw);
            Tensor::new(vec![cout, h, w], data)?
        } else {
            let (d, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
            let (kd, kh, kw) = (k.shape()[2], k.shape()[3], k.shape()[4]);
            let data = conv::conv3d_forward(x.data(), cin, d, h, w, k.data(), cout, kd, kh, kw);
            Tensor::new(vec![cout, d, h, w], data)?
        };
        let rg = self.needs(input) || self.needs(kernel);
        self.push_checked(value, Op::Conv { input, kernel }, rg)
    }

    /// Max pooling over 2^d windows: every spatial extent halves.
    ///
    /// Requires even spatial extents; ties take the first (row-major) element.
    pub fn maxpool2(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let spatial = x.rank().saturating_sub(1);
        if spatial != 2 && spatial != 3 {
            return Err(Error::DimensionMismatch(format!(
                "maxpool2 input must be [C, ...] with 2 or 3 spatial axes, got {:?}",
                x.shape()
            )));
        }
        if x.shape()[1..].iter().any(|&e| e % 2 != 0) {
            return Err(Error::Config(format!(
                "maxpool2 requires even spatial extents, got {:?}",
                x.shape()
            )));
        }
        let channels = x.shape()[0];
        let mut out_shape = vec![channels];
        out_shape.extend(x.shape()[1..].iter().map(|&e| e / 2));
        let out_len: usize = out_shape.iter().product();
        let mut out = vec![0.0; out_len];
        let mut argmax = vec![0u32; out_len];
        let data = x.data();
        if spatial == 2 {
            let (h, w) = (x.shape()[1], x.shape()[2]);
            let (oh, ow) = (h / 2, w / 2);
            for c in 0..channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_i = 0usize;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = (c * h + 2 * oy + dy) * w + 2 * ox + dx;
                                if data[i] > best {
                                    best = data[i];
                                    best_i = i;
                                }
                            }
                        }
                        let o = (c * oh + oy) * ow + ox;
                        out[o] = best;
                        argmax[o] = best_i as u32;
                    }
                }
            }
        } else {
            let (d, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
            let (od, oh, ow) = (d / 2, h / 2, w / 2);
            for c in 0..channels {
                for oz in 0..od {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_i = 0usize;
                            for dz in 0..2 {
                                for dy in 0..2 {
                                    for dx in 0..2 {
                                        let i = ((c * d + 2 * oz + dz) * h + 2 * oy + dy) * w
                                            + 2 * ox
                                            + dx;
                                        if data[i] > best {
                                            best = data[i];
                                            best_i = i;
                                        }
                                    }
                                }
                            }
                            let o = ((c * od + oz) * oh + oy) * ow + ox;
                            out[o] = best;
                            argmax[o] = best_i as u32;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        let rg = self.needs(input);
        self.push_checked(value, Op::MaxPool2 { input, argmax }, rg)
    }

    /// Nearest-neighbor upsampling: every spatial extent doubles.
    pub fn upsample_nearest2(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let spatial = x.rank().saturating_sub(1);
        if spatial != 2 && spatial != 3 {
            return Err(Error::DimensionMismatch(format!(
                "upsample_nearest2 input must be [C, ...] with 2 or 3 spatial axes, got {:?}",
                x.shape()
            )));
        }
        let mut out_shape = vec![x.shape()[0]];
        out_shape.extend(x.shape()[1..].iter().map(|&e| e * 2));
        let value = if spatial == 2 {
            Tensor::from_fn(&out_shape, |ix| x.get(&[ix[0], ix[1] / 2, ix[2] / 2]))
        } else {
            Tensor::from_fn(&out_shape, |ix| {
                x.get(&[ix[0], ix[1] / 2, ix[2] / 2, ix[3] / 2])
            })
        };
        let rg = self.needs(input);
        self.push_checked(value, Op::UpsampleNearest2(input), rg)
    }

    /// Concatenate two `[C, ...]` tensors along the channel axis.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let x = self.value(a);
        let y = self.value(b);
        if x.rank() != y.rank() || x.shape()[1..] != y.shape()[1..] {
            return Err(Error::DimensionMismatch(format!(
                "concat_channels spatial shapes differ: {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let mut shape = x.shape().to_vec();
        shape[0] += y.shape()[0];
        let mut data = Vec::with_capacity(x.len() + y.len());
        data.extend_from_slice(x.data());
        data.extend_from_slice(y.data());
        let value = Tensor::new(shape, data)?;
        let rg = self.needs(a) || self.needs(b);
        self.push_checked(value, Op::ConcatChannels(a, b), rg)
    }

    /// Inverted dropout: keeps an element with probability `1 - rate` and
    /// scales it by `1/(1 - rate)`.
    ///
    /// With `training == false` (or `rate == 0`) this is the identity and the
    /// input node is returned unchanged, so inference is bit-exact.
    pub fn dropout(&mut self, input: NodeId, rate: f64, training: bool, seed: u64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(input);
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let keep_scale = 1.0 / (1.0 - rate);
        let x = self.value(input);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let mut value = x.clone();
        for (v, &m) in value.data_mut().iter_mut().zip(mask.iter()) {
            *v *= m;
        }
        let rg = self.needs(input);
        self.push_checked(value, Op::Dropout { input, mask }, rg)
    }

    /// Backward from a scalar node with seed gradient 1.
    pub fn backward(&mut self, out: NodeId) -> Result<()> {
        if self.value(out).len() != 1 {
            return Err(Error::DimensionMismatch(
                "backward() needs a scalar output; use backward_seeded".into(),
            ));
        }
        let seed = Tensor::filled(self.value(out).shape(), 1.0);
        self.backward_seeded(out, seed)
    }

    /// Backward pass seeding `d(objective)/d(out) = seed`.
    ///
    /// Leaf gradients accumulate across calls; intermediate gradients are
    /// scoped to this pass.
    pub fn backward_seeded(&mut self, out: NodeId, seed: Tensor) -> Result<()> {
        self.value(out).check_same_shape(&seed)?;
        if !self.needs(out) {
            return Ok(());
        }
        let mut local: Vec<Option<Tensor>> = Vec::with_capacity(out.0 + 1);
        local.resize_with(out.0 + 1, || None);
        local[out.0] = Some(seed);

        for id in (0..=out.0).rev() {
            let Some(g) = local[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {
                    let node = &mut self.nodes[id];
                    match &mut node.grad {
                        Some(acc) => acc.axpy(1.0, &g)?,
                        None => node.grad = Some(g),
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.accumulate(&mut local, a, || g.clone());
                    self.accumulate(&mut local, b, || g.clone());
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    if self.needs(a) {
                        let contrib = g.zip_map(self.value(b), |gv, bv| gv * bv)?;
                        self.accumulate(&mut local, a, || contrib.clone());
                    }
                    if self.needs(b) {
                        let contrib = g.zip_map(self.value(a), |gv, av| gv * av)?;
                        self.accumulate(&mut local, b, || contrib.clone());
                    }
                }
                Op::Sum(a) => {
                    let a = *a;
                    let gv = g.item();
                    let shape = self.value(a).shape().to_vec();
                    self.accumulate(&mut local, a, || Tensor::filled(&shape, gv));
                }
                Op::Mean(a) => {
                    let a = *a;
                    let n = self.value(a).len() as f64;
                    let gv = g.item() / n;
                    let shape = self.value(a).shape().to_vec();
                    self.accumulate(&mut local, a, || Tensor::filled(&shape, gv));
                }
                Op::Relu(a) => {
                    let a = *a;
                    let contrib =
                        g.zip_map(self.value(a), |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    self.accumulate(&mut local, a, || contrib.clone());
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    // Uses the node's own output s: ds/dx = s (1 - s).
                    let s = &self.nodes[id].value;
                    let contrib = g.zip_map(s, |gv, sv| gv * sv * (1.0 - sv))?;
                    self.accumulate(&mut local, a, || contrib.clone());
                }
                Op::SoftmaxChannels(a) => {
                    let a = *a;
                    let p = &self.nodes[id].value;
                    let channels = p.shape()[0];
                    let per: usize = p.shape()[1..].iter().product();
                    let mut contrib = Tensor::zeros(p.shape());
                    {
                        let pd = p.data();
                        let gd = g.data();
                        let cd = contrib.data_mut();
                        for pix in 0..per {
                            let mut dot = 0.0;
                            for c in 0..channels {
                                dot += gd[c * per + pix] * pd[c * per + pix];
                            }
                            for c in 0..channels {
                                let i = c * per + pix;
                                cd[i] = pd[i] * (gd[i] - dot);
                            }
                        }
                    }
                    self.accumulate(&mut local, a, || contrib.clone());
                }
                Op::BiasAdd { input, bias } => {
                    let (input, bias) = (*input, *bias);
                    if self.needs(input) {
                        self.accumulate(&mut local, input, || g.clone());
                    }
                    if self.needs(bias) {
                        let channels = self.value(bias).shape()[0];
                        let per = g.len() / channels;
                        let mut bg = Tensor::zeros(&[channels]);
                        for c in 0..channels {
                            let mut acc = 0.0;
                            for &v in &g.data()[c * per..(c + 1) * per] {
                                acc += v;
                            }
                            bg.data_mut()[c] = acc;
                        }
                        self.accumulate(&mut local, bias, || bg.clone());
                    }
                }
                Op::Conv { input, kernel } => {
                    let (input, kernel) = (*input, *kernel);
                    let x = self.value(input);
                    let k = self.value(kernel);
                    let cin = x.shape()[0];
                    let cout = k.shape()[0];
                    let spatial = x.rank() - 1;
                    let (din, dk) = if spatial == 2 {
                        let (h, w) = (x.shape()[1], x.shape()[2]);
                        let (kh, kw) = (k.shape()[2], k.shape()[3]);
                        let din = self.needs(input).then(|| {
                            conv::conv2d_backward_input(
                                g.data(),
                                k.data(),
                                cin,
                                h,
                                w,
                                cout,
                                kh,
                                kw,
                            )
                        });
                        let dk = self.needs(kernel).then(|| {
                            conv::conv2d_backward_kernel(
                                g.data(),
                                x.data(),
                                cin,
                                h,
                                w,
                                cout,
                                kh,
                                kw,
                            )
                        });
                        (din, dk)
                    } else {
                        let (d, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
                        let (kd, kh, kw) = (k.shape()[2], k.shape()[3], k.shape()[4]);
                        let din = self.needs(input).then(|| {
                            conv::conv3d_backward_input(
                                g.data(),
                                k.data(),
                                cin,
                                d,
                                h,
                                w,
                                cout,
                                kd,
                                kh,
                                kw,
                            )
                        });
                        let dk = self.needs(kernel).then(|| {
                            conv::conv3d_backward_kernel(
                                g.data(),
                                x.data(),
                                cin,
                                d,
                                h,
                                w,
                                cout,
                                kd,
                                kh,
                                kw,
                            )
                        });
                        (din, dk)
                    };
                    let in_shape = x.shape().to_vec();
                    let k_shape = k.shape().to_vec();
                    if let Some(din) = din {
                        let t = Tensor::new(in_shape, din)?;
                        self.accumulate(&mut local, input, || t.clone());
                    }
                    if let Some(dk) = dk {
                        let t = Tensor::new(k_shape, dk)?;
                        self.accumulate(&mut local, kernel, || t.clone());
                    }
                }
                Op::MaxPool2 { input, argmax } => {
                    let input = *input;
                    let mut contrib = Tensor::zeros(self.value(input).shape());
                    {
                        let cd = contrib.data_mut();
                        for (o, &src) in argmax.iter().enumerate() {
                            cd[src as usize] += g.data()[o];
                        }
                    }
                    self.accumulate(&mut local, input, || contrib.clone());
                }
                Op::UpsampleNearest2(a) => {
                    let a = *a;
                    let x_shape = self.value(a).shape().to_vec();
                    let mut contrib = Tensor::zeros(&x_shape);
                    let spatial = x_shape.len() - 1;
                    {
                        let cd = contrib.data_mut();
                        let gd = g.data();
                        if spatial == 2 {
                            let (h2, w2) = (x_shape[1] * 2, x_shape[2] * 2);
                            let (h, w) = (x_shape[1], x_shape[2]);
                            for c in 0..x_shape[0] {
                                for y in 0..h2 {
                                    for x in 0..w2 {
                                        cd[(c * h + y / 2) * w + x / 2] +=
                                            gd[(c * h2 + y) * w2 + x];
                                    }
                                }
                            }
                        } else {
                            let (d2, h2, w2) =
                                (x_shape[1] * 2, x_shape[2] * 2, x_shape[3] * 2);
                            let (d, h, w) = (x_shape[1], x_shape[2], x_shape[3]);
                            for c in 0..x_shape[0] {
                                for z in 0..d2 {
                                    for y in 0..h2 {
                                        for x in 0..w2 {
                                            cd[((c * d + z / 2) * h + y / 2) * w + x / 2] +=
                                                gd[((c * d2 + z) * h2 + y) * w2 + x];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    self.accumulate(&mut local, a, || contrib.clone());
                }
                Op::ConcatChannels(a, b) => {
                    let (a, b) = (*a, *b);
                    let a_len = self.value(a).len();
                    if self.needs(a) {
                        let t = Tensor::new(
                            self.value(a).shape().to_vec(),
                            g.data()[..a_len].to_vec(),
                        )?;
                        self.accumulate(&mut local, a, || t.clone());
                    }
                    if self.needs(b) {
                        let t = Tensor::new(
                            self.value(b).shape().to_vec(),
                            g.data()[a_len..].to_vec(),
                        )?;
                        self.accumulate(&mut local, b, || t.clone());
                    }
                }
                Op::Dropout { input, mask } => {
                    let input = *input;
                    let mut contrib = g.clone();
                    for (c, &m) in contrib.data_mut().iter_mut().zip(mask.iter()) {
                        *c *= m;
                    }
                    self.accumulate(&mut local, input, || contrib.clone());
                }
            }
        }
        Ok(())
    }

    /// Add a contribution to a node's pass-local gradient, skipping nodes the
    /// pass can never use.
    fn accumulate(
        &self,
        local: &mut [Option<Tensor>],
        id: NodeId,
        contrib: impl Fn() -> Tensor,
    ) {
        if !self.needs(id) {
            return;
        }
        match &mut local[id.0] {
            Some(acc) => {
                acc.axpy(1.0, &contrib()).expect("gradient shape mismatch");
            }
            None => local[id.0] = Some(contrib()),
        }
    }
}
