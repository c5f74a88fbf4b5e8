//! Convolutional autoencoder that compresses camera images into
//! low-dimensional features through a sigmoid bottleneck.
//!
//! Encoder: three strided 6x6 convolutions (spatial side halves per stage),
//! then fully connected flatten -> 1000 -> 200 -> MID. The decoder mirrors
//! the encoder. MID is 20 for the whole-view model and 30 for the trimmed
//! view. Training minimizes per-frame summed squared reconstruction error
//! averaged over frames, with Adam.

mod adam;
mod layers;

pub use adam::Adam;
pub use layers::{conv_out_side, KERNEL, PAD, STRIDE};

use ndarray::{Array1, Array2, Array3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::rng;

/// Float scalar the autoencoder is generic over: f32 for production speed,
/// f64 for the finite-difference gradient checks.
pub trait Real:
    ndarray::NdFloat + num_traits::FromPrimitive + std::iter::Sum + Send + Sync
{
}
impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageKind {
    Whole,
    Trimmed,
}

impl ImageKind {
    pub fn label(self) -> &'static str {
        match self {
            ImageKind::Whole => "whole",
            ImageKind::Trimmed => "trimmed",
        }
    }
}

/// An input image: (H, W, 3) pixels in [0,1].
#[derive(Debug, Clone)]
pub struct Image<F: Real> {
    pub pixels: Array3<F>,
    pub kind: ImageKind,
}

impl<F: Real> Image<F> {
    pub fn new(pixels: Array3<F>, kind: ImageKind) -> Self {
        Image { pixels, kind }
    }

    pub fn side(&self) -> usize {
        self.pixels.dim().0
    }

    /// (H, W, 3) -> (3, H, W) for the convolution stack.
    fn to_chw(&self) -> Array3<F> {
        let (h, w, c) = self.pixels.dim();
        let mut out = Array3::<F>::zeros((c, h, w));
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[[ci, y, x]] = self.pixels[[y, x, ci]];
                }
            }
        }
        out
    }

    fn from_chw(chw: Array3<F>, kind: ImageKind) -> Self {
        let (c, h, w) = chw.dim();
        let mut pixels = Array3::<F>::zeros((h, w, c));
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    pixels[[y, x, ci]] = chw[[ci, y, x]];
                }
            }
        }
        Image { pixels, kind }
    }
}

/// Bottleneck activation; every component lies strictly in (0,1).
#[derive(Debug, Clone)]
pub struct ImageFeatures<F: Real> {
    pub values: Array1<F>,
}

/// One weight/bias pair. Convolutions store weights as (Cout, Cin*36),
/// transposed convolutions as (Cin, Cout*36), fully connected as (out, in).
#[derive(Debug, Clone)]
pub struct Linear<F: Real> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct CaeParams<F: Real> {
    pub kind: ImageKind,
    /// Input spatial side (square images).
    pub img: usize,
    /// Channel widths [input, stage1, stage2, stage3].
    pub channels: Vec<usize>,
    /// Hidden fully connected widths between flatten and MID.
    pub fc_hidden: Vec<usize>,
    /// Bottleneck width.
    pub mid: usize,
    pub enc_conv: Vec<Linear<F>>,
    pub enc_fc: Vec<Linear<F>>,
    pub dec_fc: Vec<Linear<F>>,
    pub dec_conv: Vec<Linear<F>>,
}

impl<F: Real> CaeParams<F> {
    /// Paper-shaped model for 128x128x3 inputs: channels 3/8/16/32,
    /// flatten 8192 -> 1000 -> 200 -> MID.
    pub fn standard(kind: ImageKind, seed: u64) -> Self {
        let mid = match kind {
            ImageKind::Whole => 20,
            ImageKind::Trimmed => 30,
        };
        Self::with_shape(kind, 128, &[3, 8, 16, 32], &[1000, 200], mid, seed)
    }

    /// Arbitrary-shape constructor; used for reduced nets in tests.
    pub fn with_shape(
        kind: ImageKind,
        img: usize,
        channels: &[usize],
        fc_hidden: &[usize],
        mid: usize,
        seed: u64,
    ) -> Self {
        assert!(channels.len() >= 2, "need at least one conv stage");
        assert_eq!(img % (1 << (channels.len() - 1)), 0, "side must halve per stage");
        let stream = match kind {
            ImageKind::Whole => rng::streams::CAE_WHOLE,
            ImageKind::Trimmed => rng::streams::CAE_TRIMMED,
        };
        let mut r = rng::seeded(seed, stream);
        let kk = KERNEL * KERNEL;
        let mut init_mat = |rows: usize, cols: usize, fan_in: usize| -> Array2<F> {
            Array2::from_shape_fn((rows, cols), |_| {
                F::from_f64(rng::fan_in_uniform(&mut r, fan_in)).unwrap()
            })
        };

        let mut enc_conv = Vec::new();
        for s in 0..channels.len() - 1 {
            let (ci, co) = (channels[s], channels[s + 1]);
            enc_conv.push(Linear {
                w: init_mat(co, ci * kk, ci * kk),
                b: Array1::zeros(co),
            });
        }

        let side_bottom = img >> (channels.len() - 1);
        let flatten = channels.last().unwrap() * side_bottom * side_bottom;
        let mut widths = vec![flatten];
        widths.extend_from_slice(fc_hidden);
        widths.push(mid);
        let mut enc_fc = Vec::new();
        for win in widths.windows(2) {
            enc_fc.push(Linear {
                w: init_mat(win[1], win[0], win[0]),
                b: Array1::zeros(win[1]),
            });
        }
        let mut dec_fc = Vec::new();
        for win in widths.windows(2).rev() {
            dec_fc.push(Linear {
                w: init_mat(win[0], win[1], win[1]),
                b: Array1::zeros(win[0]),
            });
        }
        let mut dec_conv = Vec::new();
        for s in (0..channels.len() - 1).rev() {
            let (ci, co) = (channels[s + 1], channels[s]);
            dec_conv.push(Linear {
                w: init_mat(ci, co * kk, ci * kk),
                b: Array1::zeros(co),
            });
        }

        CaeParams {
            kind,
            img,
            channels: channels.to_vec(),
            fc_hidden: fc_hidden.to_vec(),
            mid,
            enc_conv,
            enc_fc,
            dec_fc,
            dec_conv,
        }
    }

    /// Blocks in canonical (checkpoint) order.
    pub fn blocks(&self) -> Vec<&Linear<F>> {
        self.enc_conv
            .iter()
            .chain(self.enc_fc.iter())
            .chain(self.dec_fc.iter())
            .chain(self.dec_conv.iter())
            .collect()
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Linear<F>> {
        self.enc_conv
            .iter_mut()
            .chain(self.enc_fc.iter_mut())
            .chain(self.dec_fc.iter_mut())
            .chain(self.dec_conv.iter_mut())
            .collect()
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.enc_conv.len() {
            names.push(format!("enc_conv{i}"));
        }
        for i in 0..self.enc_fc.len() {
            names.push(format!("enc_fc{i}"));
        }
        for i in 0..self.dec_fc.len() {
            names.push(format!("dec_fc{i}"));
        }
        for i in 0..self.dec_conv.len() {
            names.push(format!("dec_conv{i}"));
        }
        names
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Cast every weight through f32, the checkpoint storage precision.
    pub fn to_f32(&self) -> CaeParams<f32> {
        CaeParams {
            kind: self.kind,
            img: self.img,
            channels: self.channels.clone(),
            fc_hidden: self.fc_hidden.clone(),
            mid: self.mid,
            enc_conv: cast_blocks(&self.enc_conv),
            enc_fc: cast_blocks(&self.enc_fc),
            dec_fc: cast_blocks(&self.dec_fc),
            dec_conv: cast_blocks(&self.dec_conv),
        }
    }

    fn check_image(&self, img: &Image<F>) -> Result<()> {
        if img.kind != self.kind {
            return Err(NetError::shape(
                "encode image kind",
                self.kind.label(),
                img.kind.label(),
            ));
        }
        let dims = img.pixels.dim();
        if dims != (self.img, self.img, self.channels[0]) {
            return Err(NetError::shape(
                "encode image dims",
                format!("({0}, {0}, {1})", self.img, self.channels[0]),
                format!("{dims:?}"),
            ));
        }
        Ok(())
    }
}

fn cast_blocks<F: Real>(blocks: &[Linear<F>]) -> Vec<Linear<f32>> {
    blocks
        .iter()
        .map(|l| Linear {
            w: l.w.mapv(|v| v.to_f32().unwrap()),
            b: l.b.mapv(|v| v.to_f32().unwrap()),
        })
        .collect()
}

/// Cached intermediate values of one full forward pass.
struct ForwardCtx<F: Real> {
    input_chw: Array3<F>,
    conv_cols: Vec<Array2<F>>,
    conv_pre: Vec<Array3<F>>,
    enc_fc_in: Vec<Array1<F>>,
    enc_fc_pre: Vec<Array1<F>>,
    mid: Array1<F>,
    dec_fc_in: Vec<Array1<F>>,
    dec_fc_pre: Vec<Array1<F>>,
    dec_conv_in: Vec<Array3<F>>,
    dec_conv_pre: Vec<Array3<F>>,
    recon_chw: Array3<F>,
}

fn forward_encoder<F: Real>(p: &CaeParams<F>, chw: &Array3<F>) -> (Array1<F>, Vec<Array2<F>>, Vec<Array3<F>>, Vec<Array1<F>>, Vec<Array1<F>>) {
    let mut act = chw.clone();
    let mut cols_cache = Vec::new();
    let mut pre_cache = Vec::new();
    for layer in &p.enc_conv {
        let (pre, cols) = layers::conv_forward(&act.view(), &layer.w.view(), &layer.b.view());
        act = pre.mapv(layers::relu);
        cols_cache.push(cols);
        pre_cache.push(pre);
    }
    let flat = Array1::from_iter(act.iter().copied());
    let mut fc_in = Vec::new();
    let mut fc_pre = Vec::new();
    let mut v = flat;
    let n_fc = p.enc_fc.len();
    for (i, layer) in p.enc_fc.iter().enumerate() {
        fc_in.push(v.clone());
        let pre = layers::fc_forward(&v.view(), &layer.w.view(), &layer.b.view());
        v = if i + 1 == n_fc {
            pre.mapv(layers::sigmoid)
        } else {
            pre.mapv(layers::relu)
        };
        fc_pre.push(pre);
    }
    (v, cols_cache, pre_cache, fc_in, fc_pre)
}

fn forward_decoder<F: Real>(
    p: &CaeParams<F>,
    mid: &Array1<F>,
) -> (Array3<F>, Vec<Array1<F>>, Vec<Array1<F>>, Vec<Array3<F>>, Vec<Array3<F>>) {
    let mut fc_in = Vec::new();
    let mut fc_pre = Vec::new();
    let mut v = mid.clone();
    for layer in &p.dec_fc {
        fc_in.push(v.clone());
        let pre = layers::fc_forward(&v.view(), &layer.w.view(), &layer.b.view());
        v = pre.mapv(layers::relu);
        fc_pre.push(pre);
    }
    let stages = p.channels.len() - 1;
    let side = p.img >> stages;
    let cbot = *p.channels.last().unwrap();
    let mut act = Array3::from_shape_vec((cbot, side, side), v.to_vec()).unwrap();
    let mut conv_in = Vec::new();
    let mut conv_pre = Vec::new();
    for (i, layer) in p.dec_conv.iter().enumerate() {
        conv_in.push(act.clone());
        let cout = p.channels[stages - 1 - i];
        let pre = layers::deconv_forward(&act.view(), &layer.w.view(), &layer.b.view(), cout);
        act = pre.mapv(layers::relu);
        conv_pre.push(pre);
    }
    (act, fc_in, fc_pre, conv_in, conv_pre)
}

fn forward_full<F: Real>(p: &CaeParams<F>, img: &Image<F>) -> ForwardCtx<F> {
    let chw = img.to_chw();
    let (mid, conv_cols, conv_pre, enc_fc_in, enc_fc_pre) = forward_encoder(p, &chw);
    let (recon, dec_fc_in, dec_fc_pre, dec_conv_in, dec_conv_pre) = forward_decoder(p, &mid);
    ForwardCtx {
        input_chw: chw,
        conv_cols,
        conv_pre,
        enc_fc_in,
        enc_fc_pre,
        mid,
        dec_fc_in,
        dec_fc_pre,
        dec_conv_in,
        dec_conv_pre,
        recon_chw: recon,
    }
}

/// Compress an image to its bottleneck features.
pub fn encode<F: Real>(img: &Image<F>, p: &CaeParams<F>) -> Result<ImageFeatures<F>> {
    p.check_image(img)?;
    let chw = img.to_chw();
    let (mid, ..) = forward_encoder(p, &chw);
    Ok(ImageFeatures { values: mid })
}

/// Reconstruct an image from bottleneck features.
pub fn decode<F: Real>(f: &ImageFeatures<F>, p: &CaeParams<F>) -> Result<Image<F>> {
    if f.values.len() != p.mid {
        return Err(NetError::shape("decode features", p.mid, f.values.len()));
    }
    let (recon, ..) = forward_decoder(p, &f.values);
    Ok(Image::from_chw(recon, p.kind))
}

/// Reconstruction loss: per-frame sum of squared pixel errors, averaged over
/// the batch.
pub fn cae_loss<F: Real>(batch: &[Image<F>], p: &CaeParams<F>) -> Result<F> {
    if batch.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    let mut total = F::zero();
    for img in batch {
        p.check_image(img)?;
        let ctx = forward_full(p, img);
        total = total + frame_sq_error(&ctx.recon_chw, &ctx.input_chw);
    }
    Ok(total / F::from_usize(batch.len()).unwrap())
}

fn frame_sq_error<F: Real>(recon: &Array3<F>, input: &Array3<F>) -> F {
    recon
        .iter()
        .zip(input.iter())
        .map(|(&y, &x)| {
            let d = y - x;
            d * d
        })
        .sum()
}

/// Per-block gradients, aligned with `CaeParams::blocks()`.
pub struct CaeGrads<F: Real> {
    pub blocks: Vec<Linear<F>>,
}

impl<F: Real> CaeGrads<F> {
    fn zeros_like(p: &CaeParams<F>) -> Self {
        CaeGrads {
            blocks: p
                .blocks()
                .iter()
                .map(|l| Linear {
                    w: Array2::zeros(l.w.dim()),
                    b: Array1::zeros(l.b.len()),
                })
                .collect(),
        }
    }

    fn add(&mut self, other: &CaeGrads<F>) {
        for (a, b) in self.blocks.iter_mut().zip(other.blocks.iter()) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    fn scale(&mut self, s: F) {
        for blk in &mut self.blocks {
            blk.w.mapv_inplace(|v| v * s);
            blk.b.mapv_inplace(|v| v * s);
        }
    }
}

/// Loss and gradients for one image (loss normalizer applied by the caller).
fn backward_one<F: Real>(p: &CaeParams<F>, img: &Image<F>) -> (F, CaeGrads<F>) {
    let ctx = forward_full(p, img);
    let loss = frame_sq_error(&ctx.recon_chw, &ctx.input_chw);
    let mut g = CaeGrads::zeros_like(p);
    let n_enc_conv = p.enc_conv.len();
    let n_enc_fc = p.enc_fc.len();
    let n_dec_fc = p.dec_fc.len();
    let two = F::from_f64(2.0).unwrap();

    // d loss / d recon (post-ReLU output)
    let mut d_act: Array3<F> =
        ndarray::Zip::from(&ctx.recon_chw).and(&ctx.input_chw).map_collect(|&y, &x| two * (y - x));

    // decoder transposed convs, last to first
    for i in (0..p.dec_conv.len()).rev() {
        let pre = &ctx.dec_conv_pre[i];
        let d_pre = ndarray::Zip::from(&d_act).and(pre).map_collect(|&d, &v| d * layers::relu_grad(v));
        let x_in = &ctx.dec_conv_in[i];
        let layer = &p.dec_conv[i];
        let (dw, db, dx) = layers::deconv_backward(&d_pre.view(), &x_in.view(), &layer.w.view());
        let slot = n_enc_conv + n_enc_fc + n_dec_fc + i;
        g.blocks[slot].w += &dw;
        g.blocks[slot].b += &db;
        d_act = dx;
    }

    // decoder fully connected, last to first
    let mut d_vec = Array1::from_iter(d_act.iter().copied());
    for i in (0..p.dec_fc.len()).rev() {
        let pre = &ctx.dec_fc_pre[i];
        let d_pre = ndarray::Zip::from(&d_vec).and(pre).map_collect(|&d, &v| d * layers::relu_grad(v));
        let layer = &p.dec_fc[i];
        let (dw, db, dx) =
            layers::fc_backward(&d_pre.view(), &ctx.dec_fc_in[i].view(), &layer.w.view());
        let slot = n_enc_conv + n_enc_fc + i;
        g.blocks[slot].w += &dw;
        g.blocks[slot].b += &db;
        d_vec = dx;
    }

    // bottleneck sigmoid, then encoder fully connected
    let sig_grad = ctx.mid.mapv(|s| s * (F::one() - s));
    d_vec = d_vec * &sig_grad;
    for i in (0..p.enc_fc.len()).rev() {
        let d_pre = if i + 1 == p.enc_fc.len() {
            d_vec.clone() // sigmoid grad already applied
        } else {
            ndarray::Zip::from(&d_vec)
                .and(&ctx.enc_fc_pre[i])
                .map_collect(|&d, &v| d * layers::relu_grad(v))
        };
        let layer = &p.enc_fc[i];
        let (dw, db, dx) =
            layers::fc_backward(&d_pre.view(), &ctx.enc_fc_in[i].view(), &layer.w.view());
        g.blocks[n_enc_conv + i].w += &dw;
        g.blocks[n_enc_conv + i].b += &db;
        d_vec = dx;
    }

    // encoder convolutions, last to first
    let side_bottom = p.img >> (p.channels.len() - 1);
    let cbot = *p.channels.last().unwrap();
    let mut d_conv =
        Array3::from_shape_vec((cbot, side_bottom, side_bottom), d_vec.to_vec()).unwrap();
    for i in (0..p.enc_conv.len()).rev() {
        let pre = &ctx.conv_pre[i];
        let d_pre = ndarray::Zip::from(&d_conv).and(pre).map_collect(|&d, &v| d * layers::relu_grad(v));
        let layer = &p.enc_conv[i];
        let in_dims = if i == 0 {
            ctx.input_chw.dim()
        } else {
            ctx.conv_pre[i - 1].dim()
        };
        let (dw, db, dx) = layers::conv_backward(
            &d_pre.view(),
            &ctx.conv_cols[i].view(),
            &layer.w.view(),
            in_dims,
        );
        g.blocks[i].w += &dw;
        g.blocks[i].b += &db;
        d_conv = dx;
    }

    (loss, g)
}

/// Batch loss and batch-mean gradients (matching `cae_loss`).
pub fn loss_and_grads<F: Real>(batch: &[Image<F>], p: &CaeParams<F>) -> Result<(F, CaeGrads<F>)> {
    if batch.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    for img in batch {
        p.check_image(img)?;
    }
    let per_image: Vec<(F, CaeGrads<F>)> =
        batch.par_iter().map(|img| backward_one(p, img)).collect();
    // fixed-order reduction for determinism
    let mut total = F::zero();
    let mut grads = CaeGrads::zeros_like(p);
    for (loss, g) in &per_image {
        total = total + *loss;
        grads.add(g);
    }
    let inv_n = F::one() / F::from_usize(batch.len()).unwrap();
    grads.scale(inv_n);
    Ok((total * inv_n, grads))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1500,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

pub struct TrainedCae<F: Real> {
    pub params: CaeParams<F>,
    /// (epoch, loss) per epoch; the loss is measured before that epoch's update.
    pub loss_log: Vec<(usize, f64)>,
}

/// Full-batch Adam training.
pub fn train_cae<F: Real>(
    dataset: &[Image<F>],
    kind: ImageKind,
    cfg: &TrainConfig,
) -> Result<TrainedCae<F>> {
    if dataset.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    let mut params = CaeParams::<F>::standard(kind, cfg.seed);
    train_cae_from(dataset, &mut params, cfg).map(|loss_log| TrainedCae { params, loss_log })
}

/// Training loop over pre-built params (any shape).
pub fn train_cae_from<F: Real>(
    dataset: &[Image<F>],
    params: &mut CaeParams<F>,
    cfg: &TrainConfig,
) -> Result<Vec<(usize, f64)>> {
    if dataset.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    let mut adam = Adam::new(params, cfg);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let (loss, grads) = loss_and_grads(dataset, params)?;
        let loss_f = loss.to_f64().unwrap();
        if !loss_f.is_finite() {
            return Err(NetError::NonFinite { context: "cae training loss".into(), step: epoch });
        }
        adam.step(params, &grads);
        log.push((epoch, loss_f));
    }
    Ok(log)
}
