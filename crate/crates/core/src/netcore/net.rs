use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    gelu, gelu_backward, gelu_forward, gelu_grad, maxpool_backward, maxpool_forward, Conv2d, ConvTranspose2x2,
    GroupNorm, Linear, NormCache,
};
use super::stack::ChannelStack;
use crate::error::{Error, Result};

/// Architecture of the encoder-decoder vector-field network.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_features: usize,
    pub depth: usize,
    pub embed_dim: usize,
    /// Metadata vector length; 0 disables the metadata path.
    pub meta_len: usize,
    pub has_time: bool,
    /// Step count `N` used to scale the time embedding.
    pub time_steps: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            in_channels: 1,
            out_channels: 1,
            base_features: 16,
            depth: 3,
            embed_dim: 32,
            meta_len: 8,
            has_time: true,
            time_steps: 50,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.base_features == 0 {
            return Err(Error::InvalidArgument("channel counts must be positive".into()));
        }
        if self.has_time && (self.embed_dim < 4 || !self.embed_dim.is_multiple_of(2) || self.time_steps == 0) {
            return Err(Error::InvalidArgument(
                "time embedding needs an even embed_dim >= 4 and time_steps >= 1".into(),
            ));
        }
        if self.meta_len > 0 && self.embed_dim == 0 {
            return Err(Error::InvalidArgument("metadata path needs embed_dim > 0".into()));
        }
        Ok(())
    }

    pub fn has_embedding(&self) -> bool {
        self.has_time || self.meta_len > 0
    }

    pub fn features(&self, level: usize) -> usize {
        self.base_features << level
    }

    /// Spatial sizes must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }
}

/// Parameter families, used to group gradient checks and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    Conv,
    Norm,
    Embedding,
    Upsample,
}

#[derive(Clone, Debug, Serialize)]
pub struct Segment {
    pub name: String,
    pub kind: ParamKind,
    pub offset: usize,
    pub len: usize,
    /// Xavier fans; zero for biases and norm parameters.
    pub fan_in: usize,
    pub fan_out: usize,
    pub init: SegmentInit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SegmentInit {
    Xavier,
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
struct EncoderBlock {
    conv1: Conv2d,
    norm1: GroupNorm,
    embed: Option<Linear>,
    conv2: Conv2d,
    norm2: GroupNorm,
}

#[derive(Clone, Debug)]
struct DoubleConv {
    conv1: Conv2d,
    norm1: GroupNorm,
    conv2: Conv2d,
    norm2: GroupNorm,
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    up: ConvTranspose2x2,
    body: DoubleConv,
}

#[derive(Clone, Debug)]
struct Embedder {
    time: Option<Linear>,
    meta: Option<Linear>,
}

/// Layer graph and flat parameter layout; a pure function of the config.
#[derive(Clone, Debug)]
pub struct Layout {
    config: NetConfig,
    segments: Vec<Segment>,
    embedder: Option<Embedder>,
    encoders: Vec<EncoderBlock>,
    bottleneck: DoubleConv,
    decoders: Vec<DecoderBlock>,
    head: Conv2d,
    total: usize,
}

struct Allocator {
    segments: Vec<Segment>,
    next: usize,
}

impl Allocator {
    fn take(&mut self, name: String, kind: ParamKind, len: usize, fans: (usize, usize), init: SegmentInit) -> usize {
        let offset = self.next;
        self.segments.push(Segment {
            name,
            kind,
            offset,
            len,
            fan_in: fans.0,
            fan_out: fans.1,
            init,
        });
        self.next += len;
        offset
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Conv2d {
        let rf = k * k;
        let w_off = self.take(format!("{name}.weight"), ParamKind::Conv, cout * cin * rf, (cin * rf, cout * rf), SegmentInit::Xavier);
        let b_off = self.take(format!("{name}.bias"), ParamKind::Conv, cout, (0, 0), SegmentInit::Zeros);
        Conv2d {
            cin,
            cout,
            k,
            w_off,
            b_off,
        }
    }

    fn norm(&mut self, name: &str, channels: usize) -> GroupNorm {
        let gamma_off = self.take(format!("{name}.gamma"), ParamKind::Norm, channels, (0, 0), SegmentInit::Ones);
        let beta_off = self.take(format!("{name}.beta"), ParamKind::Norm, channels, (0, 0), SegmentInit::Zeros);
        GroupNorm {
            channels,
            groups: channels / GroupNorm::group_size(channels),
            gamma_off,
            beta_off,
        }
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let w_off = self.take(format!("{name}.weight"), ParamKind::Embedding, fan_in * fan_out, (fan_in, fan_out), SegmentInit::Xavier);
        let b_off = self.take(format!("{name}.bias"), ParamKind::Embedding, fan_out, (0, 0), SegmentInit::Zeros);
        Linear {
            fan_in,
            fan_out,
            w_off,
            b_off,
        }
    }

    fn up(&mut self, name: &str, cin: usize, cout: usize) -> ConvTranspose2x2 {
        let w_off = self.take(format!("{name}.weight"), ParamKind::Upsample, cin * cout * 4, (cout * 4, cin * 4), SegmentInit::Xavier);
        let b_off = self.take(format!("{name}.bias"), ParamKind::Upsample, cout, (0, 0), SegmentInit::Zeros);
        ConvTranspose2x2 {
            cin,
            cout,
            w_off,
            b_off,
        }
    }

    fn double(&mut self, name: &str, cin: usize, cout: usize) -> DoubleConv {
        DoubleConv {
            conv1: self.conv(&format!("{name}.conv1"), cin, cout, 3),
            norm1: self.norm(&format!("{name}.norm1"), cout),
            conv2: self.conv(&format!("{name}.conv2"), cout, cout, 3),
            norm2: self.norm(&format!("{name}.norm2"), cout),
        }
    }
}

impl Layout {
    pub fn new(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let mut a = Allocator {
            segments: Vec::new(),
            next: 0,
        };
        let embedder = config.has_embedding().then(|| Embedder {
            time: config
                .has_time
                .then(|| a.linear("embed.time", config.embed_dim, config.embed_dim)),
            meta: (config.meta_len > 0).then(|| a.linear("embed.meta", config.meta_len, config.embed_dim)),
        });
        let mut encoders = Vec::with_capacity(config.depth);
        let mut cin = config.in_channels;
        for l in 0..config.depth {
            let f = config.features(l);
            let name = format!("enc{l}");
            encoders.push(EncoderBlock {
                conv1: a.conv(&format!("{name}.conv1"), cin, f, 3),
                norm1: a.norm(&format!("{name}.norm1"), f),
                embed: config
                    .has_embedding()
                    .then(|| a.linear(&format!("{name}.embed"), config.embed_dim, f)),
                conv2: a.conv(&format!("{name}.conv2"), f, f, 3),
                norm2: a.norm(&format!("{name}.norm2"), f),
            });
            cin = f;
        }
        let bottleneck = a.double("mid", cin, config.features(config.depth));
        let mut decoders = Vec::with_capacity(config.depth);
        for l in (0..config.depth).rev() {
            let f = config.features(l);
            let name = format!("dec{l}");
            decoders.push(DecoderBlock {
                up: a.up(&format!("{name}.up"), config.features(l + 1), f),
                body: a.double(&name, 2 * f, f),
            });
        }
        let head = a.conv("head", config.features(0), config.out_channels, 1);
        Ok(Layout {
            config: config.clone(),
            total: a.next,
            segments: a.segments,
            embedder,
            encoders,
            bottleneck,
            decoders,
            head,
        })
    }

    pub fn param_count(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }
}

/// Saved activations for one sample's backward pass.
pub struct Tape {
    embed_in: Option<(Vec<f64>, Vec<f64>)>,
    embed_pre: Vec<f64>,
    embed: Vec<f64>,
    enc: Vec<BlockTape>,
    pools: Vec<(Vec<u32>, (usize, usize, usize))>,
    mid: BlockTape,
    dec: Vec<(ChannelStack, BlockTape)>,
    head_in: ChannelStack,
}

struct BlockTape {
    x: ChannelStack,
    n1: NormCache,
    a1: ChannelStack,
    h1e: ChannelStack,
    n2: NormCache,
    a2: ChannelStack,
}

/// The conditional vector field `v(x_t, t, conditions, meta)`.
#[derive(Clone, Debug)]
pub struct VectorFieldNet {
    layout: Arc<Layout>,
    params: Vec<f64>,
}

impl VectorFieldNet {
    /// Xavier-uniform weights, zero biases, unit norm scales.
    pub fn init(config: &NetConfig, seed: u64) -> Result<Self> {
        let layout = Layout::new(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        for s in &layout.segments {
            let dst = &mut params[s.offset..s.offset + s.len];
            match s.init {
                SegmentInit::Zeros => dst.fill(0.0),
                SegmentInit::Ones => dst.fill(1.0),
                SegmentInit::Xavier => {
                    let bound = (6.0 / (s.fan_in + s.fan_out) as f64).sqrt();
                    dst.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
                }
            }
        }
        Ok(VectorFieldNet {
            layout: Arc::new(layout),
            params,
        })
    }

    pub fn from_params(config: &NetConfig, params: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(config)?;
        if params.len() != layout.total {
            return Err(Error::Shape(format!(
                "config needs {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(VectorFieldNet {
            layout: Arc::new(layout),
            params,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.layout.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &ChannelStack, meta: Option<&[f64]>) -> Result<()> {
        let cfg = self.config();
        if x.channels != cfg.in_channels {
            return Err(Error::Shape(format!(
                "net expects {} input channels, got {}",
                cfg.in_channels, x.channels
            )));
        }
        let m = cfg.spatial_multiple();
        if !x.height.is_multiple_of(m) || !x.width.is_multiple_of(m) || x.height == 0 || x.width == 0 {
            return Err(Error::Shape(format!(
                "spatial size {}x{} not divisible by {m}",
                x.height, x.width
            )));
        }
        if let Some(meta) = meta {
            if meta.len() != cfg.meta_len {
                return Err(Error::Shape(format!(
                    "metadata has {} entries, net expects {}",
                    meta.len(),
                    cfg.meta_len
                )));
            }
        }
        Ok(())
    }

    /// Sinusoidal features of `t / N` with frequencies geometric from 1 to N.
    pub fn time_features(&self, t: f64) -> Vec<f64> {
        let cfg = self.config();
        let half = cfg.embed_dim / 2;
        let n = cfg.time_steps as f64;
        let s = t / n;
        let mut out = Vec::with_capacity(cfg.embed_dim);
        for k in 0..half {
            let w = if half > 1 {
                n.powf(k as f64 / (half - 1) as f64)
            } else {
                1.0
            };
            out.push((w * s).sin());
        }
        for k in 0..half {
            let w = if half > 1 {
                n.powf(k as f64 / (half - 1) as f64)
            } else {
                1.0
            };
            out.push((w * s).cos());
        }
        out
    }

    fn run(&self, x: &ChannelStack, t: Option<f64>, meta: Option<&[f64]>, record: bool) -> Result<(ChannelStack, Option<Tape>)> {
        self.check_input(x, meta)?;
        let p = &self.params;
        let lay = &*self.layout;
        let cfg = &lay.config;

        let mut embed_in = None;
        let (embed_pre, embed) = match &lay.embedder {
            Some(e) => {
                let tf = if cfg.has_time {
                    self.time_features(t.unwrap_or(0.0))
                } else {
                    Vec::new()
                };
                let mv = match meta {
                    Some(m) => m.to_vec(),
                    None => vec![0.0; cfg.meta_len],
                };
                let mut pre = vec![0.0; cfg.embed_dim];
                if let Some(lt) = &e.time {
                    pre.iter_mut().zip(lt.forward(p, &tf)).for_each(|(a, b)| *a += b);
                }
                if let Some(lm) = &e.meta {
                    pre.iter_mut().zip(lm.forward(p, &mv)).for_each(|(a, b)| *a += b);
                }
                let act: Vec<f64> = pre.iter().map(|&v| gelu(v)).collect();
                if record {
                    embed_in = Some((tf, mv));
                }
                (pre, act)
            }
            None => (Vec::new(), Vec::new()),
        };

        let mut enc_tapes = Vec::new();
        let mut pools = Vec::new();
        let mut skips = Vec::with_capacity(cfg.depth);
        let mut h = x.clone();
        for blk in &lay.encoders {
            let a1 = blk.conv1.forward(p, &h);
            let (n1o, n1) = blk.norm1.forward(p, &a1);
            let mut h1e = gelu_forward(&n1o);
            if let Some(proj) = &blk.embed {
                let shift = proj.forward(p, &embed);
                for (c, s) in shift.iter().enumerate() {
                    h1e.plane_mut(c).iter_mut().for_each(|v| *v += s);
                }
            }
            let a2 = blk.conv2.forward(p, &h1e);
            let (n2o, n2) = blk.norm2.forward(p, &a2);
            let out = gelu_forward(&n2o);
            let (pooled, arg) = maxpool_forward(&out);
            if record {
                pools.push((arg, (out.channels, out.height, out.width)));
                enc_tapes.push(BlockTape {
                    x: h,
                    n1,
                    a1: n1o,
                    h1e,
                    n2,
                    a2: n2o,
                });
            }
            skips.push(out);
            h = pooled;
        }

        let (mid_out, mid_tape) = double_forward(&lay.bottleneck, p, h, record);
        h = mid_out;

        let mut dec_tapes = Vec::new();
        for (blk, skip) in lay.decoders.iter().zip(skips.iter().rev()) {
            let u = blk.up.forward(p, &h);
            let cat = ChannelStack::concat(&[&u, skip])?;
            let (out, tape) = double_forward(&blk.body, p, cat, record);
            if record {
                dec_tapes.push((h, tape.expect("recorded")));
            }
            h = out;
        }
        let y = lay.head.forward(p, &h);
        let tape = record.then(|| Tape {
            embed_in,
            embed_pre,
            embed,
            enc: enc_tapes,
            pools,
            mid: mid_tape.expect("recorded"),
            dec: dec_tapes,
            head_in: h,
        });
        Ok((y, tape))
    }

    /// Inference. `t` is the flow step (ignored without a time path);
    /// absent metadata is treated as all-zero.
    pub fn forward(&self, x: &ChannelStack, t: Option<f64>, meta: Option<&[f64]>) -> Result<ChannelStack> {
        Ok(self.run(x, t, meta, false)?.0)
    }

    pub fn forward_with_tape(&self, x: &ChannelStack, t: Option<f64>, meta: Option<&[f64]>) -> Result<(ChannelStack, Tape)> {
        let (y, tape) = self.run(x, t, meta, true)?;
        Ok((y, tape.expect("tape requested")))
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, tape: &Tape, gy: &ChannelStack, grad: &mut [f64]) {
        let p = &self.params;
        let lay = &*self.layout;
        let mut g = lay.head.backward(p, &tape.head_in, gy, grad);

        let mut gskips: Vec<ChannelStack> = Vec::with_capacity(lay.decoders.len());
        for (blk, (dec_in, bt)) in lay.decoders.iter().zip(&tape.dec).rev() {
            let gcat = double_backward(&blk.body, p, bt, &g, grad);
            let (gu, gskip) = gcat.split_at(blk.up.cout);
            gskips.push(gskip);
            g = blk.up.backward(p, dec_in, &gu, grad);
        }

        g = double_backward(&lay.bottleneck, p, &tape.mid, &g, grad);

        let mut gembed = vec![0.0; tape.embed.len()];
        for (l, blk) in lay.encoders.iter().enumerate().rev() {
            let (arg, shape) = &tape.pools[l];
            let mut gout = maxpool_backward(arg, *shape, &g);
            // gskips was filled shallowest decoder first, which pairs with encoder 0.
            let skip_grad = &gskips[l];
            gout.data.iter_mut().zip(&skip_grad.data).for_each(|(a, b)| *a += b);
            let bt = &tape.enc[l];
            let gn2 = gelu_backward(&bt.a2, &gout);
            let ga2 = blk.norm2.backward(p, &bt.n2, &gn2, grad);
            let gh1e = blk.conv2.backward(p, &bt.h1e, &ga2, grad);
            if let Some(proj) = &blk.embed {
                let gshift: Vec<f64> = (0..proj.fan_out).map(|c| gh1e.plane(c).iter().sum()).collect();
                let ge = proj.backward(p, &tape.embed, &gshift, grad);
                gembed.iter_mut().zip(ge).for_each(|(a, b)| *a += b);
            }
            let gn1 = gelu_backward(&bt.a1, &gh1e);
            let ga1 = blk.norm1.backward(p, &bt.n1, &gn1, grad);
            g = blk.conv1.backward(p, &bt.x, &ga1, grad);
        }

        if let (Some(e), Some((tf, mv))) = (&lay.embedder, &tape.embed_in) {
            let gpre: Vec<f64> = gembed
                .iter()
                .zip(&tape.embed_pre)
                .map(|(g, &v)| g * gelu_grad(v))
                .collect();
            if let Some(lt) = &e.time {
                lt.backward(p, tf, &gpre, grad);
            }
            if let Some(lm) = &e.meta {
                lm.backward(p, mv, &gpre, grad);
            }
        }
    }
}

fn double_forward(blk: &DoubleConv, p: &[f64], x: ChannelStack, record: bool) -> (ChannelStack, Option<BlockTape>) {
    let a1 = blk.conv1.forward(p, &x);
    let (n1o, n1) = blk.norm1.forward(p, &a1);
    let h1 = gelu_forward(&n1o);
    let a2 = blk.conv2.forward(p, &h1);
    let (n2o, n2) = blk.norm2.forward(p, &a2);
    let out = gelu_forward(&n2o);
    let tape = record.then_some(BlockTape {
        x,
        n1,
        a1: n1o,
        h1e: h1,
        n2,
        a2: n2o,
    });
    (out, tape)
}

fn double_backward(blk: &DoubleConv, p: &[f64], t: &BlockTape, gy: &ChannelStack, grad: &mut [f64]) -> ChannelStack {
    let g = gelu_backward(&t.a2, gy);
    let g = blk.norm2.backward(p, &t.n2, &g, grad);
    let g = blk.conv2.backward(p, &t.h1e, &g, grad);
    let g = gelu_backward(&t.a1, &g);
    let g = blk.norm1.backward(p, &t.n1, &g, grad);
    blk.conv1.backward(p, &t.x, &g, grad)
}
