//! Shared-backbone classifier with a semantic head (`emb_dim` outputs) and a
//! one-hot head (`num_classes` logits), trained with exact reverse-mode
//! gradients.
//!
//! All parameters live in one flat vector laid out as backbone, semantic head,
//! one-hot head. Images are stored height × width × channels, interleaved.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    pub id: u64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
}

impl ImageTensor {
    pub fn new(id: u64, height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} pixels for a {height}x{width}x{channels} image",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            id,
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(id: u64, height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            id,
            height,
            width,
            channels,
            pixels: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize, c: usize) -> &mut f64 {
        &mut self.pixels[(y * self.width + x) * self.channels + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative(self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    /// Two 3×3 conv blocks (the first followed by 2×2 average pooling), global
    /// average pooling, then one hidden dense layer.
    Conv,
    /// One hidden dense layer over the flattened image.
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub backbone: BackboneKind,
    pub conv_channels: [usize; 2],
    pub hidden: usize,
    pub emb_dim: usize,
    pub num_classes: usize,
    pub activation: Activation,
}

impl ModelConfig {
    pub fn new(height: usize, width: usize, channels: usize, emb_dim: usize, num_classes: usize) -> Self {
        Self {
            height,
            width,
            channels,
            backbone: BackboneKind::Conv,
            conv_channels: [16, 32],
            hidden: 64,
            emb_dim,
            num_classes,
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Layer {
    Conv3x3 {
        h: usize,
        w: usize,
        cin: usize,
        cout: usize,
        offset: usize,
    },
    Act,
    AvgPool2 {
        h: usize,
        w: usize,
        c: usize,
    },
    GlobalAvgPool {
        h: usize,
        w: usize,
        c: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        offset: usize,
    },
}

impl Layer {
    fn param_count(&self) -> usize {
        match *self {
            Layer::Conv3x3 { cin, cout, .. } => 9 * cin * cout + cout,
            Layer::Dense { inputs, outputs, .. } => inputs * outputs + outputs,
            _ => 0,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Layer::Conv3x3 { cin, .. } => 9 * cin,
            Layer::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }

    fn offset(&self) -> Option<usize> {
        match *self {
            Layer::Conv3x3 { offset, .. } | Layer::Dense { offset, .. } => Some(offset),
            _ => None,
        }
    }

    fn forward(&self, act: Activation, params: &[f64], input: &[f64]) -> Vec<f64> {
        match *self {
            Layer::Conv3x3 { h, w, cin, cout, offset } => {
                let weights = &params[offset..offset + 9 * cin * cout];
                let bias = &params[offset + 9 * cin * cout..offset + 9 * cin * cout + cout];
                let mut out = vec![0.0; h * w * cout];
                for y in 0..h {
                    for x in 0..w {
                        let o_px = &mut out[(y * w + x) * cout..(y * w + x + 1) * cout];
                        o_px.copy_from_slice(bias);
                        for ky in 0..3 {
                            let Some(sy) = (y + ky).checked_sub(1).filter(|&s| s < h) else { continue };
                            for kx in 0..3 {
                                let Some(sx) = (x + kx).checked_sub(1).filter(|&s| s < w) else { continue };
                                let px = &input[(sy * w + sx) * cin..(sy * w + sx + 1) * cin];
                                for (o, acc) in o_px.iter_mut().enumerate() {
                                    let k = &weights[((o * 3 + ky) * 3 + kx) * cin..][..cin];
                                    *acc += k.iter().zip(px).map(|(a, b)| a * b).sum::<f64>();
                                }
                            }
                        }
                    }
                }
                out
            }
            Layer::Act => input.iter().map(|&z| act.apply(z)).collect(),
            Layer::AvgPool2 { h, w, c } => {
                let (oh, ow) = (h / 2, w / 2);
                let mut out = vec![0.0; oh * ow * c];
                for y in 0..oh {
                    for x in 0..ow {
                        for ch in 0..c {
                            let at = |yy: usize, xx: usize| input[(yy * w + xx) * c + ch];
                            out[(y * ow + x) * c + ch] = 0.25
                                * (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1));
                        }
                    }
                }
                out
            }
            Layer::GlobalAvgPool { h, w, c } => {
                let mut out = vec![0.0; c];
                for px in input.chunks(c) {
                    out.iter_mut().zip(px).for_each(|(o, v)| *o += v);
                }
                let n = (h * w) as f64;
                out.iter_mut().for_each(|o| *o /= n);
                out
            }
            Layer::Dense { inputs, outputs, offset } => {
                let weights = &params[offset..offset + inputs * outputs];
                let bias = &params[offset + inputs * outputs..offset + inputs * outputs + outputs];
                (0..outputs)
                    .map(|o| {
                        bias[o]
                            + weights[o * inputs..(o + 1) * inputs]
                                .iter()
                                .zip(input)
                                .map(|(a, b)| a * b)
                                .sum::<f64>()
                    })
                    .collect()
            }
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to `input`.
    fn backward(
        &self,
        act: Activation,
        params: &[f64],
        input: &[f64],
        output: &[f64],
        d_out: &[f64],
        grads: &mut [f64],
    ) -> Vec<f64> {
        match *self {
            Layer::Conv3x3 { h, w, cin, cout, offset } => {
                let nw = 9 * cin * cout;
                let weights = &params[offset..offset + nw];
                let (gw, gb) = grads[offset..offset + nw + cout].split_at_mut(nw);
                let mut d_in = vec![0.0; h * w * cin];
                for y in 0..h {
                    for x in 0..w {
                        let d_px = &d_out[(y * w + x) * cout..(y * w + x + 1) * cout];
                        gb.iter_mut().zip(d_px).for_each(|(g, d)| *g += d);
                        for ky in 0..3 {
                            let Some(sy) = (y + ky).checked_sub(1).filter(|&s| s < h) else { continue };
                            for kx in 0..3 {
                                let Some(sx) = (x + kx).checked_sub(1).filter(|&s| s < w) else { continue };
                                let base = (sy * w + sx) * cin;
                                let px = &input[base..base + cin];
                                for (o, &d) in d_px.iter().enumerate() {
                                    if d == 0.0 {
                                        continue;
                                    }
                                    let k0 = ((o * 3 + ky) * 3 + kx) * cin;
                                    let gk = &mut gw[k0..k0 + cin];
                                    gk.iter_mut().zip(px).for_each(|(g, v)| *g += d * v);
                                    let k = &weights[k0..k0 + cin];
                                    d_in[base..base + cin]
                                        .iter_mut()
                                        .zip(k)
                                        .for_each(|(di, kv)| *di += d * kv);
                                }
                            }
                        }
                    }
                }
                d_in
            }
            Layer::Act => d_out
                .iter()
                .zip(output)
                .map(|(d, &o)| d * act.derivative(o))
                .collect(),
            Layer::AvgPool2 { h, w, c } => {
                let (oh, ow) = (h / 2, w / 2);
                let mut d_in = vec![0.0; h * w * c];
                for y in 0..oh {
                    for x in 0..ow {
                        for ch in 0..c {
                            let d = 0.25 * d_out[(y * ow + x) * c + ch];
                            for (yy, xx) in [(2 * y, 2 * x), (2 * y, 2 * x + 1), (2 * y + 1, 2 * x), (2 * y + 1, 2 * x + 1)] {
                                d_in[(yy * w + xx) * c + ch] += d;
                            }
                        }
                    }
                }
                d_in
            }
            Layer::GlobalAvgPool { h, w, c } => {
                let n = (h * w) as f64;
                (0..h * w * c).map(|i| d_out[i % c] / n).collect()
            }
            Layer::Dense { inputs, outputs, offset } => {
                let nw = inputs * outputs;
                let weights = &params[offset..offset + nw];
                let (gw, gb) = grads[offset..offset + nw + outputs].split_at_mut(nw);
                let mut d_in = vec![0.0; inputs];
                for (o, &d) in d_out.iter().enumerate() {
                    gb[o] += d;
                    if d == 0.0 {
                        continue;
                    }
                    let row = &weights[o * inputs..(o + 1) * inputs];
                    gw[o * inputs..(o + 1) * inputs]
                        .iter_mut()
                        .zip(input)
                        .for_each(|(g, x)| *g += d * x);
                    d_in.iter_mut().zip(row).for_each(|(di, wv)| *di += d * wv);
                }
                d_in
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Architecture {
    backbone: Vec<Layer>,
    sc_head: Layer,
    oh_head: Layer,
    backbone_len: usize,
    sc_len: usize,
    total: usize,
}

impl Architecture {
    fn build(cfg: &ModelConfig) -> Result<Self> {
        if cfg.height == 0 || cfg.width == 0 || cfg.channels == 0 {
            return Err(Error::InvalidArgument("image dimensions must be positive".into()));
        }
        if cfg.hidden == 0 || cfg.emb_dim == 0 || cfg.num_classes == 0 {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut push = |layer: Layer, layers: &mut Vec<Layer>| {
            offset += layer.param_count();
            layers.push(layer);
            offset
        };
        let features = match cfg.backbone {
            BackboneKind::Conv => {
                let [c1, c2] = cfg.conv_channels;
                if c1 == 0 || c2 == 0 {
                    return Err(Error::InvalidArgument("conv channels must be positive".into()));
                }
                let (mut h, mut w) = (cfg.height, cfg.width);
                let o = offset_of(&layers);
                push(Layer::Conv3x3 { h, w, cin: cfg.channels, cout: c1, offset: o }, &mut layers);
                push(Layer::Act, &mut layers);
                if h >= 2 && w >= 2 {
                    push(Layer::AvgPool2 { h, w, c: c1 }, &mut layers);
                    h /= 2;
                    w /= 2;
                }
                let o = offset_of(&layers);
                push(Layer::Conv3x3 { h, w, cin: c1, cout: c2, offset: o }, &mut layers);
                push(Layer::Act, &mut layers);
                push(Layer::GlobalAvgPool { h, w, c: c2 }, &mut layers);
                c2
            }
            BackboneKind::Mlp => cfg.height * cfg.width * cfg.channels,
        };
        let o = offset_of(&layers);
        push(Layer::Dense { inputs: features, outputs: cfg.hidden, offset: o }, &mut layers);
        push(Layer::Act, &mut layers);
        let backbone_len = offset_of(&layers);
        let sc_head = Layer::Dense {
            inputs: cfg.hidden,
            outputs: cfg.emb_dim,
            offset: backbone_len,
        };
        let sc_len = sc_head.param_count();
        let oh_head = Layer::Dense {
            inputs: cfg.hidden,
            outputs: cfg.num_classes,
            offset: backbone_len + sc_len,
        };
        let total = backbone_len + sc_len + oh_head.param_count();
        Ok(Self {
            backbone: layers,
            sc_head,
            oh_head,
            backbone_len,
            sc_len,
            total,
        })
    }

    fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.backbone.iter().chain([&self.sc_head, &self.oh_head])
    }
}

fn offset_of(layers: &[Layer]) -> usize {
    layers.iter().map(Layer::param_count).sum()
}

/// Backbone activations of one sample, input first.
struct Trace {
    activations: Vec<Vec<f64>>,
}

/// Live parameters, their exponential moving average and the momentum buffers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelState {
    config: ModelConfig,
    params: Vec<f64>,
    ema: Vec<f64>,
    momentum: Vec<f64>,
    step: u64,
    #[serde(skip)]
    arch: Option<Architecture>,
}

impl PartialEq for ModelState {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params == other.params
            && self.ema == other.ema
            && self.momentum == other.momentum
            && self.step == other.step
    }
}

impl ModelState {
    /// He-uniform weights scaled by fan-in, zero biases; EMA starts as a copy.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let arch = Architecture::build(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; arch.total];
        for layer in arch.layers() {
            let Some(offset) = layer.offset() else { continue };
            let n_weights = layer.param_count()
                - match *layer {
                    Layer::Conv3x3 { cout, .. } => cout,
                    Layer::Dense { outputs, .. } => outputs,
                    _ => 0,
                };
            let bound = (6.0 / layer.fan_in() as f64).sqrt();
            for p in &mut params[offset..offset + n_weights] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        Ok(Self {
            config,
            ema: params.clone(),
            momentum: vec![0.0; arch.total],
            params,
            step: 0,
            arch: Some(arch),
        })
    }

    /// Rebuilds derived layout after deserialization and checks vector sizes.
    pub fn restore(mut self) -> Result<Self> {
        let arch = Architecture::build(&self.config)?;
        for (name, v) in [("params", &self.params), ("ema", &self.ema), ("momentum", &self.momentum)] {
            if v.len() != arch.total {
                return Err(Error::Shape(format!(
                    "{name} has {} entries, architecture needs {}",
                    v.len(),
                    arch.total
                )));
            }
        }
        self.arch = Some(arch);
        Ok(self)
    }

    fn arch(&self) -> &Architecture {
        self.arch.as_ref().expect("model layout is built on construction")
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn ema_params(&self) -> &[f64] {
        &self.ema
    }

    pub fn momentum_buffers(&self) -> &[f64] {
        &self.momentum
    }

    pub fn backbone_params(&self) -> &[f64] {
        &self.params[..self.arch().backbone_len]
    }

    pub fn sc_head_params(&self) -> &[f64] {
        let a = self.arch();
        &self.params[a.backbone_len..a.backbone_len + a.sc_len]
    }

    pub fn oh_head_params(&self) -> &[f64] {
        let a = self.arch();
        &self.params[a.backbone_len + a.sc_len..]
    }

    fn check_batch(&self, batch: &[ImageTensor]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let c = &self.config;
        for img in batch {
            if (img.height, img.width, img.channels) != (c.height, c.width, c.channels)
                || img.pixels.len() != c.height * c.width * c.channels
            {
                return Err(Error::Shape(format!(
                    "image {} is {}x{}x{}, model expects {}x{}x{}",
                    img.id, img.height, img.width, img.channels, c.height, c.width, c.channels
                )));
            }
        }
        Ok(())
    }

    fn trace(&self, params: &[f64], img: &ImageTensor) -> Trace {
        let act = self.config.activation;
        let mut activations = Vec::with_capacity(self.arch().backbone.len() + 1);
        activations.push(img.pixels.clone());
        for layer in &self.arch().backbone {
            let next = layer.forward(act, params, activations.last().unwrap());
            activations.push(next);
        }
        Trace { activations }
    }

    fn run(&self, params: &[f64], batch: &[ImageTensor]) -> Result<(Matrix, Matrix, Vec<Trace>)> {
        self.check_batch(batch)?;
        let arch = self.arch();
        let act = self.config.activation;
        let mut emb = Matrix::zeros(batch.len(), self.config.emb_dim);
        let mut logits = Matrix::zeros(batch.len(), self.config.num_classes);
        let mut traces = Vec::with_capacity(batch.len());
        for (i, img) in batch.iter().enumerate() {
            let t = self.trace(params, img);
            let features = t.activations.last().unwrap();
            emb.row_mut(i).copy_from_slice(&arch.sc_head.forward(act, params, features));
            logits.row_mut(i).copy_from_slice(&arch.oh_head.forward(act, params, features));
            traces.push(t);
        }
        Ok((emb, logits, traces))
    }

    /// Head outputs `(embedding predictions, logits)` for a batch, using the
    /// live parameters or their moving average.
    pub fn forward(&self, batch: &[ImageTensor], use_ema: bool) -> Result<(Matrix, Matrix)> {
        let params = if use_ema { &self.ema } else { &self.params };
        self.run(params, batch).map(|(e, l, _)| (e, l))
    }

    /// Loss value and its exact gradient with respect to all live parameters.
    ///
    /// `loss_fn` receives both heads' outputs and returns the loss together
    /// with its gradients with respect to those outputs.
    pub fn gradients<F>(&self, batch: &[ImageTensor], loss_fn: F) -> Result<(f64, Vec<f64>)>
    where
        F: FnOnce(&Matrix, &Matrix) -> Result<(f64, Matrix, Matrix)>,
    {
        let (emb, logits, traces) = self.run(&self.params, batch)?;
        let (loss, d_emb, d_logits) = loss_fn(&emb, &logits)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss {loss}")));
        }
        if (d_emb.rows(), d_emb.cols()) != (emb.rows(), emb.cols())
            || (d_logits.rows(), d_logits.cols()) != (logits.rows(), logits.cols())
        {
            return Err(Error::Shape("loss gradient does not match head outputs".into()));
        }
        let arch = self.arch();
        let act = self.config.activation;
        let params = &self.params;
        let mut grads = vec![0.0; params.len()];
        for (i, t) in traces.iter().enumerate() {
            let features = t.activations.last().unwrap();
            let mut d_feat = arch
                .sc_head
                .backward(act, params, features, &[], d_emb.row(i), &mut grads);
            let d_oh = arch
                .oh_head
                .backward(act, params, features, &[], d_logits.row(i), &mut grads);
            d_feat.iter_mut().zip(d_oh).for_each(|(a, b)| *a += b);
            for (l, layer) in arch.backbone.iter().enumerate().rev() {
                d_feat = layer.backward(act, params, &t.activations[l], &t.activations[l + 1], &d_feat, &mut grads);
            }
        }
        Ok((loss, grads))
    }

    /// Nesterov-momentum SGD with L2 weight decay folded into the gradient.
    pub fn sgd_step(&mut self, grads: &[f64], lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        let mut params = self.params.clone();
        let mut buffers = self.momentum.clone();
        for ((p, b), &g) in params.iter_mut().zip(buffers.iter_mut()).zip(grads) {
            let d = g + weight_decay * *p;
            *b = momentum * *b + d;
            *p -= lr * (d + momentum * *b);
        }
        if params.iter().chain(&buffers).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters after SGD step".into()));
        }
        self.params = params;
        self.momentum = buffers;
        self.step += 1;
        Ok(())
    }

    /// `ema ← decay·ema + (1 − decay)·live`.
    pub fn ema_update(&mut self, decay: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::InvalidArgument(format!("EMA decay {decay} outside [0, 1]")));
        }
        for (e, p) in self.ema.iter_mut().zip(&self.params) {
            *e = decay * *e + (1.0 - decay) * p;
        }
        Ok(())
    }
}
