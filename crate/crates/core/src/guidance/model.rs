use std::sync::atomic::{AtomicU64, Ordering};

use crate::dataset::{Dims, WindowInputs};
use crate::error::{Error, Result};
use crate::tensor::layers::{AttentionCache, FeedForwardCache, LayerNormCache};
use crate::tensor::{
    dropout, DropoutMask, FeedForward, LayerNorm, Linear, Matrix, MultiHeadAttention, Param,
    RngState, Scalar,
};

use super::config::GuidanceConfig;

/// Scores are clamped to `[PROB_EPS, 1 − PROB_EPS]` so they stay strictly inside (0, 1).
pub const PROB_EPS: f64 = 1e-12;

/// Input-side modalities, in sequence order after the CLS row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Visual,
    Audio,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Visual, Modality::Audio, Modality::Text];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Audio => "audio",
            Modality::Text => "text",
        }
    }
}

fn input_of<T>(inputs: &WindowInputs<T>, m: Modality) -> Option<&Matrix<T>> {
    match m {
        Modality::Visual => inputs.visual.as_ref(),
        Modality::Audio => inputs.audio.as_ref(),
        Modality::Text => inputs.text.as_ref(),
    }
}

/// Linear map into the model width followed by a layer-norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection<T = f32> {
    pub linear: Linear<T>,
    pub norm: LayerNorm<T>,
}

impl<T: Scalar> Projection<T> {
    fn cast<U: Scalar>(&self) -> Projection<U> {
        Projection {
            linear: self.linear.cast(),
            norm: self.norm.cast(),
        }
    }
}

/// Post-norm encoder block: `LN(x + drop(attn(x)))` then `LN(h + drop(ffn(h)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<T = f32> {
    pub attention: MultiHeadAttention<T>,
    pub norm1: LayerNorm<T>,
    pub ffn: FeedForward<T>,
    pub norm2: LayerNorm<T>,
}

struct LayerCache<T> {
    attention: AttentionCache<T>,
    drop1: DropoutMask<T>,
    norm1: LayerNormCache<T>,
    ffn: FeedForwardCache<T>,
    drop2: DropoutMask<T>,
    norm2: LayerNormCache<T>,
}

impl<T: Scalar> EncoderLayer<T> {
    fn new(cfg: &GuidanceConfig, rng: &mut RngState) -> Result<Self> {
        let std = cfg.init_std;
        Ok(Self {
            attention: MultiHeadAttention::new(cfg.d_model, cfg.heads, std, rng)?,
            norm1: LayerNorm::new(cfg.d_model),
            ffn: FeedForward::new(cfg.d_model, cfg.ff_dim(), std, rng),
            norm2: LayerNorm::new(cfg.d_model),
        })
    }

    fn forward(
        &self,
        x: &Matrix<T>,
        p: f64,
        training: bool,
        rng: &mut RngState,
    ) -> Result<(Matrix<T>, LayerCache<T>)> {
        let (a, attention) = self.attention.forward(x)?;
        let (a, drop1) = dropout(&a, p, rng, training)?;
        let (h, norm1) = self.norm1.forward(&x.add(&a)?)?;
        let (f, ffn) = self.ffn.forward(&h)?;
        let (f, drop2) = dropout(&f, p, rng, training)?;
        let (y, norm2) = self.norm2.forward(&h.add(&f)?)?;
        Ok((
            y,
            LayerCache {
                attention,
                drop1,
                norm1,
                ffn,
                drop2,
                norm2,
            },
        ))
    }

    fn backward(&mut self, cache: &LayerCache<T>, dy: &Matrix<T>) -> Result<Matrix<T>> {
        let dr2 = self.norm2.backward(&cache.norm2, dy)?;
        let mut dh = self.ffn.backward(&cache.ffn, &cache.drop2.backward(&dr2))?;
        dh.add_assign(&dr2)?;
        let dr1 = self.norm1.backward(&cache.norm1, &dh)?;
        let mut dx = self
            .attention
            .backward(&cache.attention, &cache.drop1.backward(&dr1))?;
        dx.add_assign(&dr1)?;
        Ok(dx)
    }

    fn params(&self) -> Vec<(&'static str, &Param<T>)> {
        let mut out = Vec::with_capacity(16);
        let attn = ["q.weight", "q.bias", "k.weight", "k.bias", "v.weight", "v.bias", "o.weight", "o.bias"];
        out.extend(attn.into_iter().zip(self.attention.params()));
        out.extend(["norm1.gamma", "norm1.beta"].into_iter().zip(self.norm1.params()));
        let ffn = ["ffn.inner.weight", "ffn.inner.bias", "ffn.outer.weight", "ffn.outer.bias"];
        out.extend(ffn.into_iter().zip(self.ffn.params()));
        out.extend(["norm2.gamma", "norm2.beta"].into_iter().zip(self.norm2.params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = self.attention.params_mut();
        out.extend(self.norm1.params_mut());
        out.extend(self.ffn.params_mut());
        out.extend(self.norm2.params_mut());
        out
    }

    fn cast<U: Scalar>(&self) -> EncoderLayer<U> {
        EncoderLayer {
            attention: self.attention.cast(),
            norm1: self.norm1.cast(),
            ffn: self.ffn.cast(),
            norm2: self.norm2.cast(),
        }
    }
}

/// Counts inference forward passes made through `score_windows`.
#[derive(Debug, Default)]
pub struct PassCounter(AtomicU64);

impl PassCounter {
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.0.store(0, Ordering::Relaxed);
    }

    pub(crate) fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }
}

impl Clone for PassCounter {
    fn clone(&self) -> Self {
        Self(AtomicU64::new(self.get()))
    }
}

struct ModalityCache<T> {
    modality: Modality,
    x: Matrix<T>,
    norm: LayerNormCache<T>,
    mask: DropoutMask<T>,
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache<T> {
    inputs: Vec<ModalityCache<T>>,
    layers: Vec<LayerCache<T>>,
    cls_out: Matrix<T>,
    hidden_pre: Matrix<T>,
    hidden: Matrix<T>,
    rows: usize,
    logit: f64,
}

impl<T> ForwardCache<T> {
    pub fn logit(&self) -> f64 {
        self.logit
    }

    pub fn probability(&self) -> f64 {
        probability(self.logit)
    }
}

/// Transformer classifier over `[CLS; video; audio; text]` returning the
/// probability that a window is describable.
#[derive(Clone, Debug)]
pub struct GuidanceModel<T = f32> {
    config: GuidanceConfig,
    dims: Dims,
    pub visual: Option<Projection<T>>,
    pub audio: Option<Projection<T>>,
    pub text: Option<Projection<T>>,
    pub cls: Param<T>,
    video_pos: Matrix<T>,
    pub audio_pos: Option<Param<T>>,
    pub text_pos: Option<Param<T>>,
    pub layers: Vec<EncoderLayer<T>>,
    pub head_hidden: Linear<T>,
    pub head_out: Linear<T>,
    passes: PassCounter,
}

/// `table[pos][2i] = sin(pos / 10000^(2i/d))`, `table[pos][2i+1] = cos(…)`.
pub fn sinusoidal_table<T: Scalar>(len: usize, dim: usize) -> Matrix<T> {
    Matrix::from_fn(len, dim, |pos, c| {
        let pair = (c / 2 * 2) as f64;
        let angle = pos as f64 / 10000f64.powf(pair / dim as f64);
        T::lit(if c % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid clamped strictly inside (0, 1).
pub fn probability(logit: f64) -> f64 {
    sigmoid(logit).clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy from a logit, with an optional weight on positives.
/// Returns `(loss, dloss/dlogit)`.
pub fn bce_with_logits(logit: f64, label: bool, pos_weight: f64) -> (f64, f64) {
    if label {
        (pos_weight * softplus(-logit), pos_weight * (sigmoid(logit) - 1.0))
    } else {
        (softplus(logit), sigmoid(logit))
    }
}

pub fn bce_loss(logit: f64, label: bool) -> f64 {
    bce_with_logits(logit, label, 1.0).0
}

impl<T: Scalar> GuidanceModel<T> {
    pub fn new(config: GuidanceConfig, dims: Dims, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngState::new(seed);
        let d = config.d_model;
        let std = config.init_std;
        let projection = |enabled: bool, input: usize, rng: &mut RngState| {
            enabled.then(|| Projection {
                linear: Linear::new(input, d, std, rng),
                norm: LayerNorm::new(d),
            })
        };
        let visual = projection(config.modalities.visual, dims.visual, &mut rng);
        let audio = projection(config.modalities.audio, dims.audio, &mut rng);
        let text = projection(config.modalities.text, dims.text, &mut rng);
        let cls = Param::new(rng.normal_matrix(1, d, std));
        let audio_pos = config
            .modalities
            .audio
            .then(|| Param::new(rng.normal_matrix(config.window_len, d, std)));
        let text_pos = config
            .modalities
            .text
            .then(|| Param::new(rng.normal_matrix(config.text_len, d, std)));
        let layers = (0..config.layers)
            .map(|_| EncoderLayer::new(&config, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let head_hidden = Linear::new(d, d, std, &mut rng);
        let head_out = Linear::new(d, 1, std, &mut rng);
        Ok(Self {
            video_pos: sinusoidal_table(config.window_len, d),
            config,
            dims,
            visual,
            audio,
            text,
            cls,
            audio_pos,
            text_pos,
            layers,
            head_hidden,
            head_out,
            passes: PassCounter::default(),
        })
    }

    pub fn config(&self) -> &GuidanceConfig {
        &self.config
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// The frozen video positional table.
    pub fn video_positions(&self) -> &Matrix<T> {
        &self.video_pos
    }

    pub fn pass_counter(&self) -> &PassCounter {
        &self.passes
    }

    fn projection(&self, m: Modality) -> Option<&Projection<T>> {
        match m {
            Modality::Visual => self.visual.as_ref(),
            Modality::Audio => self.audio.as_ref(),
            Modality::Text => self.text.as_ref(),
        }
    }

    fn input_dim(&self, m: Modality) -> usize {
        match m {
            Modality::Visual => self.dims.visual,
            Modality::Audio => self.dims.audio,
            Modality::Text => self.dims.text,
        }
    }

    fn input_rows(&self, m: Modality) -> usize {
        match m {
            Modality::Text => self.config.text_len,
            _ => self.config.window_len,
        }
    }

    fn positions(&self, m: Modality) -> &Matrix<T> {
        match m {
            Modality::Visual => &self.video_pos,
            Modality::Audio => &self.audio_pos.as_ref().expect("audio enabled").value,
            Modality::Text => &self.text_pos.as_ref().expect("text enabled").value,
        }
    }

    /// Assembles the encoder input `[CLS; video; audio; text]`.
    pub fn build_input(
        &self,
        inputs: &WindowInputs<T>,
        training: bool,
        rng: &mut RngState,
    ) -> Result<Matrix<T>> {
        Ok(self.build_input_cached(inputs, training, rng)?.0)
    }

    fn build_input_cached(
        &self,
        inputs: &WindowInputs<T>,
        training: bool,
        rng: &mut RngState,
    ) -> Result<(Matrix<T>, Vec<ModalityCache<T>>)> {
        let mut blocks = vec![self.cls.value.clone()];
        let mut caches = Vec::with_capacity(3);
        for m in Modality::ALL {
            let x = match (self.projection(m), input_of(inputs, m)) {
                (None, None) => continue,
                (Some(_), None) => {
                    return Err(Error::Config(format!(
                        "{} features are required by this model",
                        m.name()
                    )))
                }
                (None, Some(_)) => {
                    return Err(Error::Config(format!(
                        "{} features supplied but the modality is disabled",
                        m.name()
                    )))
                }
                (Some(_), Some(x)) => x,
            };
            let proj = self.projection(m).expect("checked above");
            let expected = (self.input_rows(m), self.input_dim(m));
            if x.shape() != expected {
                return Err(Error::Dimension {
                    op: "build_input",
                    lhs: x.shape(),
                    rhs: expected,
                });
            }
            let (z, norm) = proj.norm.forward(&proj.linear.forward(x)?)?;
            let (mut z, mask) = dropout(&z, self.config.dropout, rng, training)?;
            z.add_assign(self.positions(m))?;
            blocks.push(z);
            caches.push(ModalityCache {
                modality: m,
                x: x.clone(),
                norm,
                mask,
            });
        }
        let refs: Vec<&Matrix<T>> = blocks.iter().collect();
        Ok((Matrix::vstack(&refs)?, caches))
    }

    /// Runs the encoder and head on an assembled input.
    pub fn forward(
        &self,
        e_in: &Matrix<T>,
        training: bool,
        rng: &mut RngState,
    ) -> Result<ForwardCache<T>> {
        if e_in.cols() != self.config.d_model || e_in.rows() == 0 {
            return Err(Error::Dimension {
                op: "forward",
                lhs: e_in.shape(),
                rhs: (self.config.sequence_len(), self.config.d_model),
            });
        }
        let mut x = e_in.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, cache) = layer.forward(&x, self.config.dropout, training, rng)?;
            if !y.all_finite() {
                return Err(Error::Numeric(format!("encoder layer {i} produced non-finite values")));
            }
            layers.push(cache);
            x = y;
        }
        let cls_out = x.rows_padded(0, 1);
        let hidden_pre = self.head_hidden.forward(&cls_out)?;
        let hidden = hidden_pre.map(|v| v.max(T::zero()));
        let logit = self.head_out.forward(&hidden)?.get(0, 0).as_f64();
        if !logit.is_finite() {
            return Err(Error::Numeric(format!("non-finite logit {logit}")));
        }
        Ok(ForwardCache {
            inputs: Vec::new(),
            layers,
            cls_out,
            hidden_pre,
            hidden,
            rows: e_in.rows(),
            logit,
        })
    }

    /// `build_input` followed by `forward`, keeping what `backward` needs.
    pub fn forward_window(
        &self,
        inputs: &WindowInputs<T>,
        training: bool,
        rng: &mut RngState,
    ) -> Result<ForwardCache<T>> {
        let (e_in, caches) = self.build_input_cached(inputs, training, rng)?;
        let mut out = self.forward(&e_in, training, rng)?;
        out.inputs = caches;
        Ok(out)
    }

    /// Describability probability with dropout disabled.
    pub fn predict(&self, inputs: &WindowInputs<T>) -> Result<f64> {
        let mut rng = RngState::new(0);
        Ok(self.forward_window(inputs, false, &mut rng)?.probability())
    }

    /// Accumulates `dlogit · ∂logit/∂θ` into every parameter gradient.
    pub fn backward(&mut self, cache: &ForwardCache<T>, dlogit: f64) -> Result<()> {
        let dl = Matrix::filled(1, 1, T::lit(dlogit));
        let mut dh = self.head_out.backward(&cache.hidden, &dl)?;
        for (g, pre) in dh.as_mut_slice().iter_mut().zip(cache.hidden_pre.as_slice()) {
            if *pre <= T::zero() {
                *g = T::zero();
            }
        }
        let dcls = self.head_hidden.backward(&cache.cls_out, &dh)?;
        let mut dx = Matrix::zeros(cache.rows, self.config.d_model);
        dx.row_mut(0).copy_from_slice(dcls.row(0));
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers).rev() {
            dx = layer.backward(lc, &dx)?;
        }
        for (g, v) in self.cls.grad.as_mut_slice().iter_mut().zip(dx.row(0)) {
            *g = *g + *v;
        }
        let mut offset = 1;
        for mc in &cache.inputs {
            let rows = self.input_rows(mc.modality);
            let block = dx.rows_padded(offset, rows);
            offset += rows;
            let pos = match mc.modality {
                Modality::Visual => None,
                Modality::Audio => self.audio_pos.as_mut(),
                Modality::Text => self.text_pos.as_mut(),
            };
            if let Some(p) = pos {
                p.grad.add_assign(&block)?;
            }
            let proj = match mc.modality {
                Modality::Visual => self.visual.as_mut(),
                Modality::Audio => self.audio.as_mut(),
                Modality::Text => self.text.as_mut(),
            }
            .expect("cache only holds enabled modalities");
            let dz = proj.norm.backward(&mc.norm, &mc.mask.backward(&block))?;
            proj.linear.backward_params(&mc.x, &dz)?;
        }
        Ok(())
    }

    /// Trainable tensors with stable names, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Param<T>)> {
        let mut out: Vec<(String, &Param<T>)> = Vec::new();
        for m in Modality::ALL {
            if let Some(p) = self.projection(m) {
                let names = ["linear.weight", "linear.bias", "norm.gamma", "norm.beta"];
                let params = p.linear.params().into_iter().chain(p.norm.params());
                for (n, param) in names.iter().zip(params) {
                    out.push((format!("proj.{}.{n}", m.name()), param));
                }
            }
        }
        out.push(("cls".into(), &self.cls));
        if let Some(p) = &self.audio_pos {
            out.push(("pos.audio".into(), p));
        }
        if let Some(p) = &self.text_pos {
            out.push(("pos.text".into(), p));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            for (n, p) in layer.params() {
                out.push((format!("layers.{i}.{n}"), p));
            }
        }
        out.push(("head.hidden.weight".into(), &self.head_hidden.weight));
        out.push(("head.hidden.bias".into(), &self.head_hidden.bias));
        out.push(("head.out.weight".into(), &self.head_out.weight));
        out.push(("head.out.bias".into(), &self.head_out.bias));
        out
    }

    /// Same order as [`GuidanceModel::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> = Vec::new();
        for p in [&mut self.visual, &mut self.audio, &mut self.text]
            .into_iter()
            .flatten()
        {
            out.extend(p.linear.params_mut());
            out.extend(p.norm.params_mut());
        }
        out.push(&mut self.cls);
        out.extend(self.audio_pos.as_mut());
        out.extend(self.text_pos.as_mut());
        for layer in &mut self.layers {
            out.extend(layer.params_mut());
        }
        out.extend(self.head_hidden.params_mut());
        out.extend(self.head_out.params_mut());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Copies parameter values (not gradients) from `other`.
    pub fn copy_values_from(&mut self, other: &Self) {
        let src: Vec<&Param<T>> = other.named_params().into_iter().map(|(_, p)| p).collect();
        for (dst, s) in self.params_mut().into_iter().zip(src) {
            dst.value.as_mut_slice().copy_from_slice(s.value.as_slice());
        }
    }

    pub fn cast<U: Scalar>(&self) -> GuidanceModel<U> {
        GuidanceModel {
            config: self.config.clone(),
            dims: self.dims,
            visual: self.visual.as_ref().map(Projection::cast),
            audio: self.audio.as_ref().map(Projection::cast),
            text: self.text.as_ref().map(Projection::cast),
            cls: self.cls.cast(),
            video_pos: sinusoidal_table(self.config.window_len, self.config.d_model),
            audio_pos: self.audio_pos.as_ref().map(Param::cast),
            text_pos: self.text_pos.as_ref().map(Param::cast),
            layers: self.layers.iter().map(EncoderLayer::cast).collect(),
            head_hidden: self.head_hidden.cast(),
            head_out: self.head_out.cast(),
            passes: PassCounter::default(),
        }
    }
}

/// Closed-form trainable parameter count for `cfg` over inputs of `dims`.
pub fn expected_parameter_count(cfg: &GuidanceConfig, dims: Dims) -> usize {
    let d = cfg.d_model;
    let f = cfg.ff_dim();
    let projection = |on: bool, input: usize| if on { input * d + d + 2 * d } else { 0 };
    let mut n = projection(cfg.modalities.visual, dims.visual)
        + projection(cfg.modalities.audio, dims.audio)
        + projection(cfg.modalities.text, dims.text);
    n += d;
    if cfg.modalities.audio {
        n += cfg.window_len * d;
    }
    if cfg.modalities.text {
        n += cfg.text_len * d;
    }
    let per_layer = 4 * (d * d + d) + (d * f + f + f * d + d) + 4 * d;
    n += cfg.layers * per_layer;
    n + (d * d + d) + (d + 1)
}
