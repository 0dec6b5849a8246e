//! Segmentation network: a 3×3 convolutional encoder produces per-pixel
//! features, the pixels become nodes of a grid graph, and a stack of
//! simplified GCN layers `σ(Â H W)` maps them to class logits followed by a
//! row-wise softmax.
//!
//! Gradients are written out by hand. [`model_backward`] consumes the cache
//! left by [`model_forward`] and returns the mean per-node NLL together with a
//! [`GradientSet`] shaped like the model.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{build_grid_graph, Connectivity};
use crate::matrix::{CsrMatrix, DenseMatrix, FeatureMap, LinearOperator};

pub const KERNEL_SIZE: usize = 3;
const KERNEL_TAPS: usize = KERNEL_SIZE * KERNEL_SIZE;

/// Weights of one 3×3 same-padded convolution, laid out `out × in × 3 × 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayerParams {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernels: vec![0.0; out_channels * in_channels * KERNEL_TAPS],
            bias: vec![0.0; out_channels],
        }
    }

    #[inline]
    fn kernel(&self, o: usize, i: usize) -> &[f64] {
        let start = (o * self.in_channels + i) * KERNEL_TAPS;
        &self.kernels[start..start + KERNEL_TAPS]
    }

    pub fn kernel_mut(&mut self, o: usize, i: usize) -> &mut [f64] {
        let start = (o * self.in_channels + i) * KERNEL_TAPS;
        &mut self.kernels[start..start + KERNEL_TAPS]
    }

    fn check(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArchitecture(
                "convolution with zero channels".into(),
            ));
        }
        if self.kernels.len() != self.out_channels * self.in_channels * KERNEL_TAPS
            || self.bias.len() != self.out_channels
        {
            return Err(Error::InvalidArchitecture(format!(
                "convolution {}->{} has {} kernel values and {} biases",
                self.in_channels,
                self.out_channels,
                self.kernels.len(),
                self.bias.len()
            )));
        }
        if !self.kernels.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::InvalidArchitecture(
                "convolution has non-finite parameters".into(),
            ));
        }
        Ok(())
    }
}

/// One propagation layer `σ(Â H W)`; no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayerParams {
    pub w: DenseMatrix,
    pub has_relu: bool,
}

impl GcnLayerParams {
    pub fn d_in(&self) -> usize {
        self.w.rows()
    }

    pub fn d_out(&self) -> usize {
        self.w.cols()
    }
}

/// Layer widths and patch geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub in_channels: usize,
    /// Output channels of each convolution, in order.
    pub conv_channels: Vec<usize>,
    /// Output width of each GCN layer; the last entry is the class count.
    pub gcn_dims: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub connectivity: Connectivity,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            in_channels: 3,
            conv_channels: vec![16, 16],
            gcn_dims: vec![32, 2],
            height: 64,
            width: 64,
            connectivity: Connectivity::Four,
        }
    }
}

impl Architecture {
    pub fn num_classes(&self) -> usize {
        self.gcn_dims.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::InvalidArchitecture("zero input channels".into()));
        }
        if self.conv_channels.contains(&0) || self.gcn_dims.contains(&0) {
            return Err(Error::InvalidArchitecture(
                "layer widths must be positive".into(),
            ));
        }
        if self.gcn_dims.is_empty() {
            return Err(Error::InvalidArchitecture(
                "at least one GCN layer is required".into(),
            ));
        }
        if self.num_classes() < 2 {
            return Err(Error::InvalidArchitecture(
                "the final GCN layer must output at least 2 classes".into(),
            ));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::InvalidArchitecture("empty patch grid".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    conv_layers: Vec<ConvLayerParams>,
    gcn_layers: Vec<GcnLayerParams>,
    height: usize,
    width: usize,
    connectivity: Connectivity,
    a_hat: CsrMatrix,
}

impl GcnModel {
    /// Assembles a model from explicit layers, checking that the feature
    /// widths chain and that only the last GCN layer lacks a ReLU.
    pub fn from_layers(
        conv_layers: Vec<ConvLayerParams>,
        gcn_layers: Vec<GcnLayerParams>,
        height: usize,
        width: usize,
        connectivity: Connectivity,
    ) -> Result<Self> {
        let mut channels = match conv_layers.first() {
            Some(l) => l.in_channels,
            None => gcn_layers.first().map_or(0, |l| l.d_in()),
        };
        for (k, layer) in conv_layers.iter().enumerate() {
            layer.check()?;
            if layer.in_channels != channels {
                return Err(Error::InvalidArchitecture(format!(
                    "conv layer {k} expects {} channels but receives {channels}",
                    layer.in_channels
                )));
            }
            channels = layer.out_channels;
        }
        if gcn_layers.is_empty() {
            return Err(Error::InvalidArchitecture(
                "at least one GCN layer is required".into(),
            ));
        }
        for (k, layer) in gcn_layers.iter().enumerate() {
            if layer.d_in() != channels || layer.d_out() == 0 {
                return Err(Error::InvalidArchitecture(format!(
                    "GCN layer {k} is {}x{} but receives {channels} features",
                    layer.d_in(),
                    layer.d_out()
                )));
            }
            if !layer.w.is_finite() {
                return Err(Error::InvalidArchitecture(format!(
                    "GCN layer {k} has non-finite weights"
                )));
            }
            let last = k + 1 == gcn_layers.len();
            if last && layer.has_relu {
                return Err(Error::InvalidArchitecture(
                    "the final GCN layer must not apply ReLU".into(),
                ));
            }
            channels = layer.d_out();
        }
        if channels < 2 {
            return Err(Error::InvalidArchitecture(
                "the final GCN layer must output at least 2 classes".into(),
            ));
        }
        let graph = build_grid_graph(height, width, connectivity)
            .map_err(|e| Error::InvalidArchitecture(e.to_string()))?;
        Ok(Self {
            conv_layers,
            gcn_layers,
            height,
            width,
            connectivity,
            a_hat: graph.renormalized_adjacency_sparse(),
        })
    }

    pub fn conv_layers(&self) -> &[ConvLayerParams] {
        &self.conv_layers
    }

    pub fn gcn_layers(&self) -> &[GcnLayerParams] {
        &self.gcn_layers
    }

    pub fn conv_layers_mut(&mut self) -> &mut [ConvLayerParams] {
        &mut self.conv_layers
    }

    pub fn gcn_layers_mut(&mut self) -> &mut [GcnLayerParams] {
        &mut self.gcn_layers
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn a_hat(&self) -> &CsrMatrix {
        &self.a_hat
    }

    pub fn input_channels(&self) -> usize {
        self.conv_layers
            .first()
            .map_or_else(|| self.gcn_layers[0].d_in(), |l| l.in_channels)
    }

    pub fn num_classes(&self) -> usize {
        self.gcn_layers.last().expect("validated nonempty").d_out()
    }

    /// Same weights on a different grid. Every layer is size-agnostic; only
    /// the propagation operator depends on the patch shape.
    pub fn with_grid(&self, height: usize, width: usize) -> Result<Self> {
        if (height, width) == (self.height, self.width) {
            return Ok(self.clone());
        }
        Self::from_layers(
            self.conv_layers.clone(),
            self.gcn_layers.clone(),
            height,
            width,
            self.connectivity,
        )
    }

    /// Every trainable tensor in a fixed order: conv kernels and bias per
    /// layer, then each GCN weight matrix.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.conv_layers {
            out.push(&l.kernels);
            out.push(&l.bias);
        }
        for l in &self.gcn_layers {
            out.push(l.w.as_slice());
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.conv_layers {
            out.push(&mut l.kernels);
            out.push(&mut l.bias);
        }
        for l in &mut self.gcn_layers {
            out.push(l.w.as_mut_slice());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Mean NLL of the model on one patch.
    pub fn loss(&self, image: &FeatureMap, labels: &[usize]) -> Result<f64> {
        let pass = model_forward(self, image)?;
        nll_from_log_probs(&pass.log_probs, labels)
    }
}

/// Glorot-uniform weights, zero biases, deterministic in `seed`.
pub fn init_model(seed: u64, arch: &Architecture) -> Result<GcnModel> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut glorot = |fan_in: usize, fan_out: usize, len: usize| -> Vec<f64> {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-s, s);
        (0..len).map(|_| dist.sample(&mut rng)).collect()
    };

    let mut conv_layers = Vec::with_capacity(arch.conv_channels.len());
    let mut channels = arch.in_channels;
    for &out in &arch.conv_channels {
        let kernels = glorot(
            channels * KERNEL_TAPS,
            out * KERNEL_TAPS,
            out * channels * KERNEL_TAPS,
        );
        conv_layers.push(ConvLayerParams {
            in_channels: channels,
            out_channels: out,
            kernels,
            bias: vec![0.0; out],
        });
        channels = out;
    }

    let mut gcn_layers = Vec::with_capacity(arch.gcn_dims.len());
    for (k, &out) in arch.gcn_dims.iter().enumerate() {
        let w = DenseMatrix::from_vec(channels, out, glorot(channels, out, channels * out))?;
        gcn_layers.push(GcnLayerParams {
            w,
            has_relu: k + 1 < arch.gcn_dims.len(),
        });
        channels = out;
    }
    GcnModel::from_layers(
        conv_layers,
        gcn_layers,
        arch.height,
        arch.width,
        arch.connectivity,
    )
}

/// Valid output range `[lo, hi)` for a tap offset `d ∈ {−1, 0, 1}` along an
/// axis of length `len`, such that `i + d` stays inside the input.
#[inline]
fn tap_range(d: isize, len: usize) -> (usize, usize) {
    let lo = if d < 0 { 1 } else { 0 };
    let hi = if d > 0 { len.saturating_sub(1) } else { len };
    (lo, hi)
}

/// Same-padded 3×3 convolution plus bias, no activation.
pub fn conv3x3(layer: &ConvLayerParams, input: &FeatureMap) -> Result<FeatureMap> {
    if input.channels() != layer.in_channels {
        return Err(Error::InvalidDimension(format!(
            "convolution expects {} channels, input has {}",
            layer.in_channels,
            input.channels()
        )));
    }
    let (h, w) = (input.height(), input.width());
    let mut out = FeatureMap::zeros(layer.out_channels, h, w);
    for o in 0..layer.out_channels {
        let plane = out.plane_mut(o);
        plane.fill(layer.bias[o]);
        for i in 0..layer.in_channels {
            let src = input.plane(i);
            for (tap, &k) in layer.kernel(o, i).iter().enumerate() {
                if k == 0.0 {
                    continue;
                }
                let dy = (tap / KERNEL_SIZE) as isize - 1;
                let dx = (tap % KERNEL_SIZE) as isize - 1;
                let (y0, y1) = tap_range(dy, h);
                let (x0, x1) = tap_range(dx, w);
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let dst = &mut plane[y * w + x0..y * w + x1];
                    let s0 = (sy * w) as isize + x0 as isize + dx;
                    let s = &src[s0 as usize..s0 as usize + (x1 - x0)];
                    for (d, &v) in dst.iter_mut().zip(s) {
                        *d += k * v;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv3x3`] with respect to its kernels, bias and, when
/// requested, its input.
fn conv3x3_backward(
    layer: &ConvLayerParams,
    input: &FeatureMap,
    d_out: &FeatureMap,
    need_input_grad: bool,
) -> (ConvLayerParams, Option<FeatureMap>) {
    let (h, w) = (input.height(), input.width());
    let mut grad = ConvLayerParams::zeros(layer.in_channels, layer.out_channels);
    let mut d_in = need_input_grad.then(|| FeatureMap::zeros(layer.in_channels, h, w));
    for o in 0..layer.out_channels {
        let g = d_out.plane(o);
        grad.bias[o] = g.iter().sum();
        for i in 0..layer.in_channels {
            let src = input.plane(i);
            for tap in 0..KERNEL_TAPS {
                let dy = (tap / KERNEL_SIZE) as isize - 1;
                let dx = (tap % KERNEL_SIZE) as isize - 1;
                let (y0, y1) = tap_range(dy, h);
                let (x0, x1) = tap_range(dx, w);
                let k = layer.kernel(o, i)[tap];
                let mut acc = 0.0;
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let gy = &g[y * w + x0..y * w + x1];
                    let s0 = ((sy * w) as isize + x0 as isize + dx) as usize;
                    let s = &src[s0..s0 + (x1 - x0)];
                    acc += gy.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                    if let Some(d_in) = d_in.as_mut() {
                        let dst = &mut d_in.plane_mut(i)[s0..s0 + (x1 - x0)];
                        for (d, &gv) in dst.iter_mut().zip(gy) {
                            *d += k * gv;
                        }
                    }
                }
                grad.kernel_mut(o, i)[tap] = acc;
            }
        }
    }
    (grad, d_in)
}

fn relu_in_place(values: &mut [f64]) {
    for v in values {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// The convolutional encoder: every layer is a same-padded 3×3 convolution
/// followed by ReLU, so the spatial size is preserved.
pub fn conv_forward(layers: &[ConvLayerParams], image: &FeatureMap) -> Result<FeatureMap> {
    let mut x = image.clone();
    for layer in layers {
        x = conv3x3(layer, &x)?;
        relu_in_place(x.as_mut_slice());
    }
    Ok(x)
}

/// `σ(Â H W)`, with `σ` = ReLU when the layer asks for it.
pub fn gcn_forward<O: LinearOperator>(
    a_hat: &O,
    h: &DenseMatrix,
    layer: &GcnLayerParams,
) -> Result<DenseMatrix> {
    let (_, z) = gcn_pre_activation(a_hat, h, layer)?;
    Ok(if layer.has_relu { z.map(relu) } else { z })
}

/// Returns `(Â H, Â H W)`.
fn gcn_pre_activation<O: LinearOperator>(
    a_hat: &O,
    h: &DenseMatrix,
    layer: &GcnLayerParams,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if h.cols() != layer.d_in() {
        return Err(Error::InvalidDimension(format!(
            "GCN layer expects {} features, got {}",
            layer.d_in(),
            h.cols()
        )));
    }
    let propagated = a_hat.apply(h)?;
    let z = propagated.matmul(&layer.w)?;
    Ok((propagated, z))
}

fn check_finite(h: &DenseMatrix) -> Result<()> {
    if !h.is_finite() {
        return Err(Error::NumericalFailure("non-finite logits".into()));
    }
    Ok(())
}

/// Row-wise log-softmax via log-sum-exp.
pub fn log_softmax_rows(h: &DenseMatrix) -> Result<DenseMatrix> {
    if h.cols() < 2 {
        return Err(Error::InvalidDimension(format!(
            "softmax needs at least 2 classes, got {}",
            h.cols()
        )));
    }
    check_finite(h)?;
    let mut out = h.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
        for v in row {
            *v -= lse;
        }
    }
    Ok(out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(h: &DenseMatrix) -> Result<DenseMatrix> {
    if h.cols() < 2 {
        return Err(Error::InvalidDimension(format!(
            "softmax needs at least 2 classes, got {}",
            h.cols()
        )));
    }
    check_finite(h)?;
    let mut out = h.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row {
            *v /= sum;
        }
    }
    Ok(out)
}

/// `−(1/n) Σ_i log_probs[i, labels[i]]`.
pub fn nll_from_log_probs(log_probs: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != log_probs.rows() {
        return Err(Error::InvalidDimension(format!(
            "{} labels for {} nodes",
            labels.len(),
            log_probs.rows()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidDimension("no nodes to score".into()));
    }
    let c = log_probs.cols();
    let mut total = 0.0;
    for (node, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::InvalidLabel {
                node,
                label,
                num_classes: c,
            });
        }
        total -= log_probs[(node, label)];
    }
    Ok(total / labels.len() as f64)
}

/// Class with the highest probability per row; ties go to the lower index.
pub fn argmax_rows(probs: &DenseMatrix) -> Vec<usize> {
    (0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Output of [`model_forward`]: class probabilities and everything the
/// backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub probs: DenseMatrix,
    pub log_probs: DenseMatrix,
    /// Input of every conv layer, then the encoder output.
    conv_activations: Vec<FeatureMap>,
    conv_pre: Vec<FeatureMap>,
    /// `Â H_{l−1}` per GCN layer.
    gcn_propagated: Vec<DenseMatrix>,
    gcn_pre: Vec<DenseMatrix>,
}

impl ForwardPass {
    pub fn logits(&self) -> &DenseMatrix {
        self.gcn_pre.last().expect("model has GCN layers")
    }

    pub fn predictions(&self) -> Vec<usize> {
        argmax_rows(&self.probs)
    }
}

pub fn model_forward(m: &GcnModel, image: &FeatureMap) -> Result<ForwardPass> {
    if image.height() != m.height || image.width() != m.width {
        return Err(Error::InvalidDimension(format!(
            "patch is {}x{}, model grid is {}x{}",
            image.height(),
            image.width(),
            m.height,
            m.width
        )));
    }
    if image.channels() != m.input_channels() {
        return Err(Error::InvalidDimension(format!(
            "patch has {} channels, model expects {}",
            image.channels(),
            m.input_channels()
        )));
    }

    let mut conv_activations = Vec::with_capacity(m.conv_layers.len() + 1);
    let mut conv_pre = Vec::with_capacity(m.conv_layers.len());
    conv_activations.push(image.clone());
    for layer in &m.conv_layers {
        let z = conv3x3(layer, conv_activations.last().expect("nonempty"))?;
        let mut a = z.clone();
        relu_in_place(a.as_mut_slice());
        conv_pre.push(z);
        conv_activations.push(a);
    }

    let mut h = conv_activations
        .last()
        .expect("nonempty")
        .to_node_features();
    let mut gcn_propagated = Vec::with_capacity(m.gcn_layers.len());
    let mut gcn_pre = Vec::with_capacity(m.gcn_layers.len());
    for layer in &m.gcn_layers {
        let (p, z) = gcn_pre_activation(&m.a_hat, &h, layer)?;
        h = if layer.has_relu { z.map(relu) } else { z.clone() };
        gcn_propagated.push(p);
        gcn_pre.push(z);
    }

    let log_probs = log_softmax_rows(gcn_pre.last().expect("nonempty"))?;
    let probs = log_probs.map(f64::exp);
    Ok(ForwardPass {
        probs,
        log_probs,
        conv_activations,
        conv_pre,
        gcn_propagated,
        gcn_pre,
    })
}

/// Parameter gradients, congruent with [`GcnModel::param_slices`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub conv: Vec<ConvLayerParams>,
    pub gcn: Vec<DenseMatrix>,
}

impl GradientSet {
    pub fn zeros_like(m: &GcnModel) -> Self {
        Self {
            conv: m
                .conv_layers
                .iter()
                .map(|l| ConvLayerParams::zeros(l.in_channels, l.out_channels))
                .collect(),
            gcn: m
                .gcn_layers
                .iter()
                .map(|l| DenseMatrix::zeros(l.d_in(), l.d_out()))
                .collect(),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.conv {
            out.push(&l.kernels);
            out.push(&l.bias);
        }
        for w in &self.gcn {
            out.push(w.as_slice());
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.conv {
            out.push(&mut l.kernels);
            out.push(&mut l.bias);
        }
        for w in &mut self.gcn {
            out.push(w.as_mut_slice());
        }
        out
    }

    /// `self += other`. Shapes must match.
    pub fn accumulate(&mut self, other: &GradientSet) -> Result<()> {
        let theirs = other.slices();
        let mut mine = self.slices_mut();
        if mine.len() != theirs.len() || mine.iter().zip(&theirs).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::InvalidDimension(
                "gradient sets have different shapes".into(),
            ));
        }
        for (a, b) in mine.iter_mut().zip(theirs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.slices_mut() {
            for v in t {
                *v *= s;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, v| f64::max(m, v.abs()))
    }
}

/// Mean NLL over nodes and its gradient with respect to every parameter.
pub fn model_backward(
    m: &GcnModel,
    pass: &ForwardPass,
    labels: &[usize],
) -> Result<(f64, GradientSet)> {
    let loss = nll_from_log_probs(&pass.log_probs, labels)?;
    let n = labels.len();
    let inv_n = 1.0 / n as f64;

    // softmax + NLL: ∂loss/∂logits = (p − onehot) / n
    let mut upstream = pass.probs.scale(inv_n);
    for (i, &label) in labels.iter().enumerate() {
        upstream[(i, label)] -= inv_n;
    }

    let mut grads = GradientSet::zeros_like(m);
    for (l, layer) in m.gcn_layers.iter().enumerate().rev() {
        let mut d_z = upstream;
        if layer.has_relu {
            for (g, &z) in d_z.as_mut_slice().iter_mut().zip(pass.gcn_pre[l].as_slice()) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        grads.gcn[l] = pass.gcn_propagated[l].t_matmul(&d_z)?;
        // Â is symmetric, so Âᵀ (∂Z Wᵀ) = Â (∂Z Wᵀ)
        upstream = m.a_hat.apply(&d_z.matmul_t(&layer.w)?)?;
    }
    let d_h = upstream;

    if m.conv_layers.is_empty() {
        return Ok((loss, grads));
    }
    let mut d_a = FeatureMap::from_node_features(&d_h, m.height, m.width)?;
    for l in (0..m.conv_layers.len()).rev() {
        let pre = &pass.conv_pre[l];
        for (g, &z) in d_a.as_mut_slice().iter_mut().zip(pre.as_slice()) {
            if z <= 0.0 {
                *g = 0.0;
            }
        }
        let (g, d_in) =
            conv3x3_backward(&m.conv_layers[l], &pass.conv_activations[l], &d_a, l > 0);
        grads.conv[l] = g;
        if let Some(d_in) = d_in {
            d_a = d_in;
        }
    }
    Ok((loss, grads))
}
