//! The fixed primitive set: dense, 2-D convolution, ReLU, 2x2 max-pool and
//! flatten, each with a forward pass that appends to a
//! [`ComputationRecord`] and a backward pass that consumes it.
//!
//! Image tensors are laid out height x width x channels. Convolution
//! weights are stored `[kh, kw, cin, cout]` and dense weights `[in, out]`,
//! so the inner loops of both run over the output channel.

use crate::tensor::{axpy, dot, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output shrinks by `k - 1`.
    Valid,
    /// Zero padding that preserves height and width (stride 1).
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv2d,
    Relu,
    MaxPool2,
    Flatten,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2 => "maxpool2",
            LayerKind::Flatten => "flatten",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Dense {
        weight: Tensor<T>,
        bias: Tensor<T>,
    },
    Conv2d {
        weight: Tensor<T>,
        bias: Tensor<T>,
        padding: Padding,
    },
    Relu,
    MaxPool2,
    Flatten,
}

/// Why a layer cannot accept a given input shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeProblem {
    pub expected: Vec<usize>,
    pub found: Vec<usize>,
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense { .. } => LayerKind::Dense,
            Layer::Conv2d { .. } => LayerKind::Conv2d,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool2 => LayerKind::MaxPool2,
            Layer::Flatten => LayerKind::Flatten,
        }
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } => {
                vec![weight, bias]
            }
            _ => Vec::new(),
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } => {
                vec![weight, bias]
            }
            _ => Vec::new(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        match self {
            Layer::Dense { weight, bias } => Layer::Dense {
                weight: weight.cast(),
                bias: bias.cast(),
            },
            Layer::Conv2d {
                weight,
                bias,
                padding,
            } => Layer::Conv2d {
                weight: weight.cast(),
                bias: bias.cast(),
                padding: *padding,
            },
            Layer::Relu => Layer::Relu,
            Layer::MaxPool2 => Layer::MaxPool2,
            Layer::Flatten => Layer::Flatten,
        }
    }

    /// Output shape for `input`, or the shape this layer wanted instead.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, ShapeProblem> {
        match self {
            Layer::Dense { weight, bias } => {
                let ws = weight.shape();
                if ws.len() != 2 || bias.shape() != [ws[ws.len() - 1]] {
                    return Err(ShapeProblem {
                        expected: vec![ws[ws.len() - 1]],
                        found: bias.shape().to_vec(),
                    });
                }
                let (n_in, n_out) = (ws[0], ws[1]);
                if input != [n_in] {
                    return Err(ShapeProblem {
                        expected: vec![n_in],
                        found: input.to_vec(),
                    });
                }
                Ok(vec![n_out])
            }
            Layer::Conv2d {
                weight,
                bias,
                padding,
            } => {
                let ws = weight.shape();
                if ws.len() != 4 || bias.shape() != [ws[3]] {
                    return Err(ShapeProblem {
                        expected: vec![ws.last().copied().unwrap_or(0)],
                        found: bias.shape().to_vec(),
                    });
                }
                let (kh, kw, cin, cout) = (ws[0], ws[1], ws[2], ws[3]);
                if input.len() != 3 || input[2] != cin {
                    return Err(ShapeProblem {
                        expected: vec![kh, kw, cin],
                        found: input.to_vec(),
                    });
                }
                let (h, w) = (input[0], input[1]);
                match padding {
                    Padding::Same => Ok(vec![h, w, cout]),
                    Padding::Valid if h >= kh && w >= kw => {
                        Ok(vec![h - kh + 1, w - kw + 1, cout])
                    }
                    Padding::Valid => Err(ShapeProblem {
                        expected: vec![kh, kw, cin],
                        found: input.to_vec(),
                    }),
                }
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2 => {
                if input.len() != 3 || input[0] < 2 || input[1] < 2 {
                    return Err(ShapeProblem {
                        expected: vec![2, 2, input.last().copied().unwrap_or(1)],
                        found: input.to_vec(),
                    });
                }
                Ok(vec![input[0] / 2, input[1] / 2, input[2]])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Applies the layer to an input whose shape has already been validated.
    pub(crate) fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, Saved<T>) {
        match self {
            Layer::Dense { weight, bias } => {
                let n_out = weight.shape()[1];
                let w = weight.data();
                let mut y = bias.data().to_vec();
                for (i, &xi) in x.data().iter().enumerate() {
                    if xi != T::zero() {
                        axpy(xi, &w[i * n_out..(i + 1) * n_out], &mut y);
                    }
                }
                (Tensor::from_parts(vec![n_out], y), Saved::Dense(x.data().to_vec()))
            }
            Layer::Conv2d {
                weight,
                bias,
                padding,
            } => {
                let geom = ConvGeometry::new(x.shape(), weight.shape(), *padding);
                let cols = geom.im2col(x.data());
                let k = geom.patch_len();
                let cout = geom.cout;
                let w = weight.data();
                let mut out = Vec::with_capacity(geom.positions() * cout);
                if k >= WIDE_PATCH {
                    // Long patches: one dot product per output value.
                    let wt = transpose(w, k, cout);
                    for p in 0..geom.positions() {
                        let col = &cols[p * k..(p + 1) * k];
                        for (co, &b) in bias.data().iter().enumerate() {
                            out.push(b + dot(col, &wt[co * k..(co + 1) * k]));
                        }
                    }
                } else {
                    // Short patches over mostly-zero inputs: accumulate rows,
                    // skipping zero pixels.
                    for p in 0..geom.positions() {
                        out.extend_from_slice(bias.data());
                        let row = &mut out[p * cout..(p + 1) * cout];
                        for (j, &c) in cols[p * k..(p + 1) * k].iter().enumerate() {
                            if c != T::zero() {
                                axpy(c, &w[j * cout..(j + 1) * cout], row);
                            }
                        }
                    }
                }
                let shape = vec![geom.out_h, geom.out_w, cout];
                (Tensor::from_parts(shape, out), Saved::Conv { cols, geom })
            }
            Layer::Relu => {
                let mask: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
                let y = x
                    .data()
                    .iter()
                    .zip(&mask)
                    .map(|(&v, &m)| if m { v } else { T::zero() })
                    .collect();
                (Tensor::from_parts(x.shape().to_vec(), y), Saved::Relu(mask))
            }
            Layer::MaxPool2 => {
                let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
                let (oh, ow) = (h / 2, w / 2);
                let d = x.data();
                let mut out = Vec::with_capacity(oh * ow * c);
                let mut arg = Vec::with_capacity(oh * ow * c);
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            // First maximum in (dy, dx) scan order wins.
                            let mut best = ((2 * oy) * w + 2 * ox) * c + ch;
                            for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                                if d[idx] > d[best] {
                                    best = idx;
                                }
                            }
                            out.push(d[best]);
                            arg.push(best as u32);
                        }
                    }
                }
                (
                    Tensor::from_parts(vec![oh, ow, c], out),
                    Saved::MaxPool {
                        argmax: arg,
                        input_shape: x.shape().to_vec(),
                    },
                )
            }
            Layer::Flatten => (
                Tensor::from_parts(vec![x.len()], x.data().to_vec()),
                Saved::Flatten(x.shape().to_vec()),
            ),
        }
    }

    /// Pulls `grad_out` back through the layer. Parameter gradients are
    /// accumulated into `param_grads` (weight, bias) when given; the input
    /// gradient is only formed when `want_input` is set.
    pub(crate) fn backward(
        &self,
        saved: Saved<T>,
        grad_out: &Tensor<T>,
        param_grads: Option<&mut [Tensor<T>]>,
        want_input: bool,
    ) -> Option<Tensor<T>> {
        let g = grad_out.data();
        match (self, saved) {
            (Layer::Dense { weight, .. }, Saved::Dense(input)) => {
                let n_out = weight.shape()[1];
                let w = weight.data();
                if let Some(grads) = param_grads {
                    let (gw, gb) = grads.split_at_mut(1);
                    let gw = gw[0].data_mut();
                    for (i, &xi) in input.iter().enumerate() {
                        if xi != T::zero() {
                            axpy(xi, g, &mut gw[i * n_out..(i + 1) * n_out]);
                        }
                    }
                    axpy(T::one(), g, gb[0].data_mut());
                }
                want_input.then(|| {
                    let dx = (0..input.len())
                        .map(|i| dot(&w[i * n_out..(i + 1) * n_out], g))
                        .collect();
                    Tensor::from_parts(vec![input.len()], dx)
                })
            }
            (Layer::Conv2d { weight, .. }, Saved::Conv { cols, geom }) => {
                let k = geom.patch_len();
                let cout = geom.cout;
                let positions = geom.positions();
                // Pooling and ReLU zero most of the output gradient, so
                // every loop is driven by its nonzero entries.
                if let Some(grads) = param_grads {
                    let (gw, gb) = grads.split_at_mut(1);
                    let gb = gb[0].data_mut();
                    let mut gwt = vec![T::zero(); cout * k];
                    for p in 0..positions {
                        let col = &cols[p * k..(p + 1) * k];
                        for (co, &gv) in g[p * cout..(p + 1) * cout].iter().enumerate() {
                            if gv != T::zero() {
                                gb[co] += gv;
                                axpy(gv, col, &mut gwt[co * k..(co + 1) * k]);
                            }
                        }
                    }
                    let gw = gw[0].data_mut();
                    for j in 0..k {
                        for co in 0..cout {
                            gw[j * cout + co] += gwt[co * k + j];
                        }
                    }
                }
                want_input.then(|| {
                    let wt = transpose(weight.data(), k, cout);
                    let mut dcols = vec![T::zero(); positions * k];
                    for p in 0..positions {
                        let dcol = &mut dcols[p * k..(p + 1) * k];
                        for (co, &gv) in g[p * cout..(p + 1) * cout].iter().enumerate() {
                            if gv != T::zero() {
                                axpy(gv, &wt[co * k..(co + 1) * k], dcol);
                            }
                        }
                    }
                    let dx = geom.col2im(&dcols);
                    Tensor::from_parts(vec![geom.in_h, geom.in_w, geom.cin], dx)
                })
            }
            (Layer::Relu, Saved::Relu(mask)) => want_input.then(|| {
                let dx = g
                    .iter()
                    .zip(&mask)
                    .map(|(&v, &m)| if m { v } else { T::zero() })
                    .collect();
                Tensor::from_parts(grad_out.shape().to_vec(), dx)
            }),
            (Layer::MaxPool2, Saved::MaxPool { argmax, input_shape }) => want_input.then(|| {
                let mut dx = vec![T::zero(); input_shape.iter().product()];
                for (&src, &v) in argmax.iter().zip(g) {
                    dx[src as usize] += v;
                }
                Tensor::from_parts(input_shape, dx)
            }),
            (Layer::Flatten, Saved::Flatten(shape)) => {
                want_input.then(|| Tensor::from_parts(shape, g.to_vec()))
            }
            (layer, _) => unreachable!("record entry does not belong to a {:?} layer", layer.kind()),
        }
    }
}

/// Patch length from which the convolution forward pass switches from
/// row accumulation to dot products.
const WIDE_PATCH: usize = 64;

/// `[rows][cols]` to `[cols][rows]`.
fn transpose<T: Scalar>(m: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

/// Forward-pass state a layer needs to run its backward pass.
#[derive(Debug, Clone)]
pub(crate) enum Saved<T> {
    Dense(Vec<T>),
    Conv { cols: Vec<T>, geom: ConvGeometry },
    Relu(Vec<bool>),
    MaxPool { argmax: Vec<u32>, input_shape: Vec<usize> },
    Flatten(Vec<usize>),
}

/// Ordered log of the layer applications of one forward pass.
///
/// Backward replays the entries strictly last-in first-out.
#[derive(Debug, Clone)]
pub struct ComputationRecord<T> {
    entries: Vec<(usize, Saved<T>)>,
}

impl<T> Default for ComputationRecord<T> {
    fn default() -> Self {
        Self {
            entries: Vec::new(),
        }
    }
}

impl<T> ComputationRecord<T> {
    pub(crate) fn push(&mut self, layer: usize, saved: Saved<T>) {
        self.entries.push((layer, saved));
    }

    pub(crate) fn pop(&mut self) -> Option<(usize, Saved<T>)> {
        self.entries.pop()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Layer indices in the order they were recorded.
    pub fn layer_order(&self) -> Vec<usize> {
        self.entries.iter().map(|(i, _)| *i).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    in_h: usize,
    in_w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    pad_top: usize,
    pad_left: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn new(input: &[usize], weight: &[usize], padding: Padding) -> Self {
        let (in_h, in_w, cin) = (input[0], input[1], input[2]);
        let (kh, kw, cout) = (weight[0], weight[1], weight[3]);
        let (pad_top, pad_left, out_h, out_w) = match padding {
            Padding::Valid => (0, 0, in_h - kh + 1, in_w - kw + 1),
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2, in_h, in_w),
        };
        Self {
            in_h,
            in_w,
            cin,
            kh,
            kw,
            cout,
            pad_top,
            pad_left,
            out_h,
            out_w,
        }
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    /// Source offset into the input for `(out_y, out_x, ky, kx)`, if inside.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy + ky).checked_sub(self.pad_top)?;
        let ix = (ox + kx).checked_sub(self.pad_left)?;
        (iy < self.in_h && ix < self.in_w).then(|| (iy * self.in_w + ix) * self.cin)
    }

    fn im2col<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let k = self.patch_len();
        let mut cols = vec![T::zero(); self.positions() * k];
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let base = (oy * self.out_w + ox) * k;
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        if let Some(src) = self.source(oy, ox, ky, kx) {
                            let dst = base + (ky * self.kw + kx) * self.cin;
                            cols[dst..dst + self.cin].copy_from_slice(&x[src..src + self.cin]);
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Scalar>(&self, dcols: &[T]) -> Vec<T> {
        let k = self.patch_len();
        let mut dx = vec![T::zero(); self.in_h * self.in_w * self.cin];
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let base = (oy * self.out_w + ox) * k;
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        if let Some(dst) = self.source(oy, ox, ky, kx) {
                            let src = base + (ky * self.kw + kx) * self.cin;
                            axpy(T::one(), &dcols[src..src + self.cin], &mut dx[dst..dst + self.cin]);
                        }
                    }
                }
            }
        }
        dx
    }
}
