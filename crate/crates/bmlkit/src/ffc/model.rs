//! The inpainting network: two stride-2 encoder convolutions, a stack of FFC
//! residual blocks, two transposed-convolution decoder stages, and a sigmoid
//! head producing a single channel in `[0, 1]`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, GrayImage};
use crate::rng::{child_rng, stream};

use super::layers::{
    relu_backward, relu_forward, sigmoid_backward, sigmoid_forward, BlockCache, ConvLayer,
    ConvTLayer, FfcBlock, FfcLayer, NormCache, NormLayer, SpectralLayer,
};
use super::tensor::Tensor4;

/// Architecture of the inpainter. Spatial input sizes must be divisible by 4
/// (two stride-2 stages each way).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Arch {
    pub in_channels: usize,
    pub enc_channels: usize,
    pub channels: usize,
    pub blocks: usize,
    pub alpha: f64,
    pub dec_channels: usize,
    pub out_stage_channels: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            in_channels: 2,
            enc_channels: 16,
            channels: 32,
            blocks: 4,
            alpha: 0.5,
            dec_channels: 16,
            out_stage_channels: 8,
        }
    }
}

impl Arch {
    /// Narrow two-block variant used for exhaustive gradient checks.
    pub fn tiny() -> Self {
        Self {
            in_channels: 2,
            enc_channels: 8,
            channels: 16,
            blocks: 2,
            alpha: 0.5,
            dec_channels: 8,
            out_stage_channels: 4,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1), got {}", self.alpha)));
        }
        let (c_local, _) = FfcLayer::split(self.channels, self.alpha);
        if c_local == 0 {
            return Err(Error::Config("channel split leaves no local channels".into()));
        }
        if self.in_channels == 0 || self.channels == 0 || self.blocks == 0 {
            return Err(Error::Config("architecture dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InpainterModel {
    pub arch: Arch,
    pub seed: u64,
    pub(crate) enc1: ConvLayer,
    pub(crate) enc1_norm: NormLayer,
    pub(crate) enc2: ConvLayer,
    pub(crate) enc2_norm: NormLayer,
    pub(crate) blocks: Vec<FfcBlock>,
    pub(crate) dec1: ConvTLayer,
    pub(crate) dec1_norm: NormLayer,
    pub(crate) dec2: ConvTLayer,
    pub(crate) dec2_norm: NormLayer,
    pub(crate) head: ConvLayer,
}

fn he_uniform(rng: &mut rand_chacha::ChaCha8Rng, fan_in: usize, len: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-bound..=bound)).collect()
}

impl InpainterModel {
    /// Deterministic He-uniform initialization from a seed.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut t = 0u64;
        let mut next_rng = || {
            t += 1;
            child_rng(seed, stream::INIT, t)
        };
        let conv = |rng: &mut rand_chacha::ChaCha8Rng, co: usize, ci: usize, stride: usize| ConvLayer {
            w: Tensor4::from_vec(co, ci, 3, 3, he_uniform(rng, ci * 9, co * ci * 9)),
            b: vec![0.0; co],
            stride,
            pad: 1,
        };
        let (c_local, c_global) = FfcLayer::split(arch.channels, arch.alpha);
        let blocks = (0..arch.blocks)
            .map(|_| {
                let mut rng = next_rng();
                FfcBlock {
                    ffc: FfcLayer {
                        c_local,
                        c_global,
                        l2l: conv(&mut rng, c_local, c_local, 1),
                        g2l: (c_global > 0).then(|| conv(&mut rng, c_local, c_global, 1)),
                        l2g: (c_global > 0).then(|| conv(&mut rng, c_global, c_local, 1)),
                        spectral: (c_global > 0).then(|| SpectralLayer {
                            w: he_uniform(&mut rng, 2 * c_global, 4 * c_global * c_global),
                            b: vec![0.0; 2 * c_global],
                            channels: c_global,
                        }),
                    },
                    norm: NormLayer::identity(arch.channels),
                }
            })
            .collect();
        Ok(Self {
            enc1: conv(&mut next_rng(), arch.enc_channels, arch.in_channels, 2),
            enc1_norm: NormLayer::identity(arch.enc_channels),
            enc2: conv(&mut next_rng(), arch.channels, arch.enc_channels, 2),
            enc2_norm: NormLayer::identity(arch.channels),
            blocks,
            dec1: ConvTLayer {
                w: Tensor4::from_vec(
                    arch.channels,
                    arch.dec_channels,
                    3,
                    3,
                    he_uniform(&mut next_rng(), arch.channels * 9, arch.channels * arch.dec_channels * 9),
                ),
                b: vec![0.0; arch.dec_channels],
                stride: 2,
                pad: 1,
            },
            dec1_norm: NormLayer::identity(arch.dec_channels),
            dec2: ConvTLayer {
                w: Tensor4::from_vec(
                    arch.dec_channels,
                    arch.out_stage_channels,
                    3,
                    3,
                    he_uniform(
                        &mut next_rng(),
                        arch.dec_channels * 9,
                        arch.dec_channels * arch.out_stage_channels * 9,
                    ),
                ),
                b: vec![0.0; arch.out_stage_channels],
                stride: 2,
                pad: 1,
            },
            dec2_norm: NormLayer::identity(arch.out_stage_channels),
            head: conv(&mut next_rng(), 1, arch.out_stage_channels, 1),
            arch,
            seed,
        })
    }

    /// Same structure with every parameter zeroed; used as a gradient and
    /// optimizer-state container.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_param_mut(|_, p| p.fill(0.0));
        z
    }

    /// Visit every parameter tensor in a fixed order.
    pub fn for_each_param<F: FnMut(&str, &[f64])>(&self, mut f: F) {
        let visit_conv = |name: &str, c: &ConvLayer, f: &mut F| {
            f(&format!("{name}.w"), &c.w.data);
            f(&format!("{name}.b"), &c.b);
        };
        let visit_norm = |name: &str, n: &NormLayer, f: &mut F| {
            f(&format!("{name}.gamma"), &n.gamma);
            f(&format!("{name}.beta"), &n.beta);
        };
        visit_conv("enc1", &self.enc1, &mut f);
        visit_norm("enc1_norm", &self.enc1_norm, &mut f);
        visit_conv("enc2", &self.enc2, &mut f);
        visit_norm("enc2_norm", &self.enc2_norm, &mut f);
        for (i, b) in self.blocks.iter().enumerate() {
            visit_conv(&format!("blocks.{i}.l2l"), &b.ffc.l2l, &mut f);
            if let Some(c) = &b.ffc.g2l {
                visit_conv(&format!("blocks.{i}.g2l"), c, &mut f);
            }
            if let Some(c) = &b.ffc.l2g {
                visit_conv(&format!("blocks.{i}.l2g"), c, &mut f);
            }
            if let Some(s) = &b.ffc.spectral {
                f(&format!("blocks.{i}.spectral.w"), &s.w);
                f(&format!("blocks.{i}.spectral.b"), &s.b);
            }
            visit_norm(&format!("blocks.{i}.norm"), &b.norm, &mut f);
        }
        f("dec1.w", &self.dec1.w.data);
        f("dec1.b", &self.dec1.b);
        visit_norm("dec1_norm", &self.dec1_norm, &mut f);
        f("dec2.w", &self.dec2.w.data);
        f("dec2.b", &self.dec2.b);
        visit_norm("dec2_norm", &self.dec2_norm, &mut f);
        visit_conv("head", &self.head, &mut f);
    }

    /// Mutable variant of [`Self::for_each_param`], same order.
    pub fn for_each_param_mut<F: FnMut(&str, &mut [f64])>(&mut self, mut f: F) {
        let visit_conv = |name: &str, c: &mut ConvLayer, f: &mut F| {
            f(&format!("{name}.w"), &mut c.w.data);
            f(&format!("{name}.b"), &mut c.b);
        };
        let visit_norm = |name: &str, n: &mut NormLayer, f: &mut F| {
            f(&format!("{name}.gamma"), &mut n.gamma);
            f(&format!("{name}.beta"), &mut n.beta);
        };
        visit_conv("enc1", &mut self.enc1, &mut f);
        visit_norm("enc1_norm", &mut self.enc1_norm, &mut f);
        visit_conv("enc2", &mut self.enc2, &mut f);
        visit_norm("enc2_norm", &mut self.enc2_norm, &mut f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            visit_conv(&format!("blocks.{i}.l2l"), &mut b.ffc.l2l, &mut f);
            if let Some(c) = &mut b.ffc.g2l {
                visit_conv(&format!("blocks.{i}.g2l"), c, &mut f);
            }
            if let Some(c) = &mut b.ffc.l2g {
                visit_conv(&format!("blocks.{i}.l2g"), c, &mut f);
            }
            if let Some(s) = &mut b.ffc.spectral {
                f(&format!("blocks.{i}.spectral.w"), &mut s.w);
                f(&format!("blocks.{i}.spectral.b"), &mut s.b);
            }
            visit_norm(&format!("blocks.{i}.norm"), &mut b.norm, &mut f);
        }
        f("dec1.w", &mut self.dec1.w.data);
        f("dec1.b", &mut self.dec1.b);
        visit_norm("dec1_norm", &mut self.dec1_norm, &mut f);
        f("dec2.w", &mut self.dec2.w.data);
        f("dec2.b", &mut self.dec2.b);
        visit_norm("dec2_norm", &mut self.dec2_norm, &mut f);
        visit_conv("head", &mut self.head, &mut f);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(|_, p| n += p.len());
        n
    }

    fn check_input(&self, input: &Tensor4) -> Result<()> {
        if input.c != self.arch.in_channels {
            return Err(Error::Shape(format!(
                "expected {} input channels, got {}",
                self.arch.in_channels, input.c
            )));
        }
        if input.h % 4 != 0 || input.w % 4 != 0 || input.h < 8 || input.w < 8 {
            return Err(Error::Shape(format!(
                "input size {}x{} must be divisible by 4 and at least 8",
                input.h, input.w
            )));
        }
        Ok(())
    }

    /// Inference pass: 1-channel output in `[0, 1]`, same spatial size.
    pub fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        Ok(self.forward_train(input)?.0)
    }

    /// Forward pass keeping every intermediate needed for [`Self::backward`].
    pub fn forward_train(&self, input: &Tensor4) -> Result<(Tensor4, ForwardCache)> {
        self.check_input(input)?;
        let a1 = self.enc1.forward(input);
        let (n1, enc1_norm) = self.enc1_norm.forward(&a1);
        let r1 = relu_forward(&n1);
        let a2 = self.enc2.forward(&r1);
        let (n2, enc2_norm) = self.enc2_norm.forward(&a2);
        let mut cur = relu_forward(&n2);
        let r2 = cur.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (out, cache) = b.forward(&cur);
            blocks.push(cache);
            cur = out;
        }
        let u1 = self.dec1.forward(&cur);
        let (m1, dec1_norm) = self.dec1_norm.forward(&u1);
        let s1 = relu_forward(&m1);
        let u2 = self.dec2.forward(&s1);
        let (m2, dec2_norm) = self.dec2_norm.forward(&u2);
        let s2 = relu_forward(&m2);
        let o = self.head.forward(&s2);
        let y = sigmoid_forward(&o);
        let cache = ForwardCache {
            input: input.clone(),
            r1,
            enc1_norm,
            r2_input: r2,
            enc2_norm,
            blocks,
            block_out: cur,
            dec1_norm,
            s1,
            dec2_norm,
            s2,
            output: y.clone(),
        };
        Ok((y, cache))
    }

    /// Backpropagate `dy` (gradient at the sigmoid output) and accumulate
    /// parameter gradients into `grads`.
    pub fn backward(&self, cache: &ForwardCache, dy: &Tensor4, grads: &mut InpainterModel) {
        let do_ = sigmoid_backward(&cache.output, dy);
        let (d, dw, db) = self.head.backward(&cache.s2, &do_);
        grads.head.w.add_assign(&dw);
        add_vec(&mut grads.head.b, &db);

        let d = relu_backward(&cache.s2, &d);
        let (d, dg, dbeta) = self.dec2_norm.backward(&cache.dec2_norm, &d);
        add_vec(&mut grads.dec2_norm.gamma, &dg);
        add_vec(&mut grads.dec2_norm.beta, &dbeta);
        let (d, dw, db) = self.dec2.backward(&cache.s1, &d);
        grads.dec2.w.add_assign(&dw);
        add_vec(&mut grads.dec2.b, &db);

        let d = relu_backward(&cache.s1, &d);
        let (d, dg, dbeta) = self.dec1_norm.backward(&cache.dec1_norm, &d);
        add_vec(&mut grads.dec1_norm.gamma, &dg);
        add_vec(&mut grads.dec1_norm.beta, &dbeta);
        let (d, dw, db) = self.dec1.backward(&cache.block_out, &d);
        grads.dec1.w.add_assign(&dw);
        add_vec(&mut grads.dec1.b, &db);
        let mut d = d;

        for i in (0..self.blocks.len()).rev() {
            let (dx, bg) = self.blocks[i].backward(&cache.blocks[i], &d);
            let gb = &mut grads.blocks[i];
            gb.ffc.l2l.w.add_assign(&bg.ffc.l2l_w);
            add_vec(&mut gb.ffc.l2l.b, &bg.ffc.l2l_b);
            if let (Some(c), Some(w), Some(bv)) = (&mut gb.ffc.g2l, &bg.ffc.g2l_w, &bg.ffc.g2l_b) {
                c.w.add_assign(w);
                add_vec(&mut c.b, bv);
            }
            if let (Some(c), Some(w), Some(bv)) = (&mut gb.ffc.l2g, &bg.ffc.l2g_w, &bg.ffc.l2g_b) {
                c.w.add_assign(w);
                add_vec(&mut c.b, bv);
            }
            if let (Some(s), Some(w), Some(bv)) = (&mut gb.ffc.spectral, &bg.ffc.spec_w, &bg.ffc.spec_b) {
                add_vec(&mut s.w, w);
                add_vec(&mut s.b, bv);
            }
            add_vec(&mut gb.norm.gamma, &bg.gamma);
            add_vec(&mut gb.norm.beta, &bg.beta);
            d = dx;
        }

        let d = relu_backward(&cache.r2_input, &d);
        let (d, dg, dbeta) = self.enc2_norm.backward(&cache.enc2_norm, &d);
        add_vec(&mut grads.enc2_norm.gamma, &dg);
        add_vec(&mut grads.enc2_norm.beta, &dbeta);
        let (d, dw, db) = self.enc2.backward(&cache.r1, &d);
        grads.enc2.w.add_assign(&dw);
        add_vec(&mut grads.enc2.b, &db);

        let d = relu_backward(&cache.r1, &d);
        let (_, dg, dbeta) = self.enc1_norm.backward(&cache.enc1_norm, &d);
        add_vec(&mut grads.enc1_norm.gamma, &dg);
        add_vec(&mut grads.enc1_norm.beta, &dbeta);
        let (_, dw, db) = self.enc1.backward(&cache.input, &d);
        grads.enc1.w.add_assign(&dw);
        add_vec(&mut grads.enc1.b, &db);
    }

    /// Build the two-channel network input `stack(x * (1 - m), m)`: the
    /// image channel is zeroed exactly where the mask is set.
    pub fn stack_input(image: &GrayImage, mask: &BinaryMask) -> Tensor4 {
        let (w, h) = (image.width(), image.height());
        let mut t = Tensor4::zeros(1, 2, h, w);
        {
            let ch0 = t.plane_mut(0, 0);
            for (o, (&v, &m)) in ch0.iter_mut().zip(image.data().iter().zip(mask.data())) {
                *o = if m { 0.0 } else { v };
            }
        }
        {
            let ch1 = t.plane_mut(0, 1);
            for (o, &m) in ch1.iter_mut().zip(mask.data()) {
                *o = if m { 1.0 } else { 0.0 };
            }
        }
        t
    }

    /// Inpaint `image` inside `mask`: the model prediction replaces masked
    /// pixels, everything else is passed through bit-exact.
    pub fn inpaint(&self, image: &GrayImage, mask: &BinaryMask) -> Result<GrayImage> {
        if !mask.same_size_as_image(image) {
            return Err(Error::Shape("inpaint mask must match image".into()));
        }
        let input = Self::stack_input(image, mask);
        let y = self.forward(&input)?;
        let mut out = image.clone();
        let pred = y.plane(0, 0);
        for (i, (&m, o)) in mask.data().iter().zip(out.data_mut()).enumerate() {
            if m {
                *o = pred[i].clamp(0.0, 1.0);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_checkpoint(path)
    }
}

impl crate::detect::Inpainter for InpainterModel {
    fn inpaint(&self, image: &GrayImage, mask: &BinaryMask) -> Result<GrayImage> {
        InpainterModel::inpaint(self, image, mask)
    }
}

fn add_vec(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Intermediates of one forward pass.
pub struct ForwardCache {
    input: Tensor4,
    r1: Tensor4,
    enc1_norm: NormCache,
    r2_input: Tensor4,
    enc2_norm: NormCache,
    blocks: Vec<BlockCache>,
    block_out: Tensor4,
    dec1_norm: NormCache,
    s1: Tensor4,
    dec2_norm: NormCache,
    s2: Tensor4,
    output: Tensor4,
}

const CKPT_MAGIC: &[u8; 8] = b"BMLKCKPT";
const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    arch: Arch,
    seed: u64,
    tensors: Vec<(String, usize)>,
}

fn save_checkpoint(model: &InpainterModel, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    model.for_each_param(|name, p| {
        tensors.push((name.to_string(), p.len()));
        for &v in p {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    });
    let header = CheckpointHeader {
        arch: model.arch.clone(),
        seed: model.seed,
        tensors,
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header_json.len() + payload.len());
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&payload);
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn load_checkpoint(path: &Path) -> Result<InpainterModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != CKPT_MAGIC {
        return Err(Error::format(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let header: CheckpointHeader = serde_json::from_slice(
        bytes
            .get(16..16 + hlen)
            .ok_or_else(|| Error::format(path, "truncated header"))?,
    )?;
    let payload = &bytes[16 + hlen..];
    let expected: usize = header.tensors.iter().map(|(_, n)| n * 4).sum();
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, header promises {expected}", payload.len()),
        ));
    }
    let mut model = InpainterModel::init(header.arch, header.seed)?;
    let mut offset = 0usize;
    let mut idx = 0usize;
    let mut mismatch = None;
    model.for_each_param_mut(|name, p| {
        if mismatch.is_some() {
            return;
        }
        match header.tensors.get(idx) {
            Some((hname, hlen)) if hname == name && *hlen == p.len() => {}
            _ => {
                mismatch = Some(name.to_string());
                return;
            }
        }
        for v in p.iter_mut() {
            let b = &payload[offset..offset + 4];
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
            offset += 4;
        }
        idx += 1;
    });
    if let Some(name) = mismatch {
        return Err(Error::format(path, format!("tensor layout mismatch at {name}")));
    }
    Ok(model)
}
