//! Pre-norm transformer encoder blocks shared by both encoders.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Binder, Graph, ParameterStore, Segment, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            other => Err(format!("expected gelu or relu, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockShape {
    pub d_model: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub activation: Activation,
}

/// Low-rank adapter settings applied to the q/k/v projections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoraShape {
    pub rank: usize,
    pub scale: f64,
}

pub const QKV: [&str; 3] = ["q", "k", "v"];

/// Standard deviation of the normal init for block weight matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightInit {
    Fixed(f64),
    /// `1/√fan_in`, which keeps every sublayer's output at unit scale.
    FanIn,
}

impl WeightInit {
    fn std(self, fan_in: usize) -> f64 {
        match self {
            WeightInit::Fixed(s) => s,
            WeightInit::FanIn => 1.0 / (fan_in as f64).sqrt(),
        }
    }
}

pub fn init_block(
    store: &mut ParameterStore,
    prefix: &str,
    shape: &BlockShape,
    lora: Option<LoraShape>,
    init: WeightInit,
    rng: &mut impl Rng,
) -> Result<()> {
    let d = shape.d_model;
    if shape.heads == 0 || !d.is_multiple_of(shape.heads) {
        return Err(Error::InvalidArgument(format!(
            "d_model {d} not divisible by {} heads",
            shape.heads
        )));
    }
    for ln in ["ln1", "ln2"] {
        store.insert(format!("{prefix}.{ln}.gain"), Tensor::filled(&[d], 1.0), true);
        store.insert(format!("{prefix}.{ln}.bias"), Tensor::zeros(&[d]), true);
    }
    for p in QKV.iter().chain(&["o"]) {
        store.insert_normal(&format!("{prefix}.attn.{p}.weight"), &[d, d], init.std(d), rng, true);
    }
    if let Some(l) = lora {
        for p in QKV {
            init_adapter(store, &format!("{prefix}.attn.{p}"), d, d, l.rank, rng)?;
        }
    }
    store.insert_normal(
        &format!("{prefix}.ffn.w1"),
        &[d, shape.ffn_hidden],
        init.std(d),
        rng,
        true,
    );
    store.insert(format!("{prefix}.ffn.b1"), Tensor::zeros(&[shape.ffn_hidden]), true);
    store.insert_normal(
        &format!("{prefix}.ffn.w2"),
        &[shape.ffn_hidden, d],
        init.std(shape.ffn_hidden),
        rng,
        true,
    );
    store.insert(format!("{prefix}.ffn.b2"), Tensor::zeros(&[d]), true);
    Ok(())
}

/// Adds `{base}.lora_down` (`d_in×r`, small random) and `{base}.lora_up`
/// (`r×d_out`, zero) so the initial low-rank delta is exactly zero.
pub fn init_adapter(
    store: &mut ParameterStore,
    base: &str,
    d_in: usize,
    d_out: usize,
    rank: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    if rank == 0 {
        return Err(Error::InvalidArgument("LoRA rank must be positive".into()));
    }
    store.insert_normal(
        &format!("{base}.lora_down"),
        &[d_in, rank],
        1.0 / (d_in as f64).sqrt(),
        rng,
        true,
    );
    store.insert(format!("{base}.lora_up"), Tensor::zeros(&[rank, d_out]), true);
    Ok(())
}

/// `x·W₀ + scale·(x·down)·up` in row-vector convention, so the effective
/// weight is `W₀ + scale·down·up`. Without an adapter this is `x·W₀`.
pub fn lora_linear(g: &mut Graph<'_>, x: Var, base: Var, adapter: Option<(Var, Var, f64)>) -> Result<Var> {
    let y = g.matmul(x, base)?;
    match adapter {
        None => Ok(y),
        Some((down, up, scale)) => {
            let h = g.matmul(x, down)?;
            let delta = g.matmul(h, up)?;
            let delta = g.scale(delta, scale);
            g.add(y, delta)
        }
    }
}

/// Scaled dot-product multi-head attention: `concat_h(softmax(Q_h K_hᵀ/√d_h) V_h) · W_o`
/// with `Q = x·W_q` and likewise for K and V.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention(
    g: &mut Graph<'_>,
    x: Var,
    wq: Var,
    wk: Var,
    wv: Var,
    wo: Var,
    segments: &[Segment],
    heads: usize,
) -> Result<Var> {
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    let a = g.attention(q, k, v, segments, heads)?;
    g.matmul(a, wo)
}

pub fn linear<'a>(g: &mut Graph<'a>, b: &mut Binder<'a>, x: Var, weight: &str, bias: &str) -> Result<Var> {
    let w = b.param(g, weight)?;
    let bv = b.param(g, bias)?;
    let y = g.matmul(x, w)?;
    g.add_bias(y, bv)
}

pub fn layer_norm<'a>(g: &mut Graph<'a>, b: &mut Binder<'a>, x: Var, prefix: &str) -> Result<Var> {
    let gain = b.param(g, &format!("{prefix}.gain"))?;
    let bias = b.param(g, &format!("{prefix}.bias"))?;
    g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
}

fn activate(g: &mut Graph<'_>, x: Var, act: Activation) -> Var {
    match act {
        Activation::Gelu => g.gelu(x),
        Activation::Relu => g.relu(x),
    }
}

/// One pre-norm block over packed sequences:
/// `h = x + MHA(LN₁(x))`, `y = h + FFN(LN₂(h))`.
///
/// `lora_scale` enables the q/k/v adapters stored under the block prefix.
pub fn encoder_block<'a>(
    g: &mut Graph<'a>,
    b: &mut Binder<'a>,
    prefix: &str,
    x: Var,
    segments: &[Segment],
    shape: &BlockShape,
    lora_scale: Option<f64>,
) -> Result<Var> {
    let n1 = layer_norm(g, b, x, &format!("{prefix}.ln1"))?;
    let mut proj = Vec::with_capacity(3);
    for p in QKV {
        let base = format!("{prefix}.attn.{p}");
        let w = b.param(g, &format!("{base}.weight"))?;
        let adapter = match lora_scale {
            Some(scale) => Some((
                b.param(g, &format!("{base}.lora_down"))?,
                b.param(g, &format!("{base}.lora_up"))?,
                scale,
            )),
            None => None,
        };
        proj.push(lora_linear(g, n1, w, adapter)?);
    }
    let att = g.attention(proj[0], proj[1], proj[2], segments, shape.heads)?;
    let wo = b.param(g, &format!("{prefix}.attn.o.weight"))?;
    let att = g.matmul(att, wo)?;
    let h = g.add(x, att)?;
    let n2 = layer_norm(g, b, h, &format!("{prefix}.ln2"))?;
    let f = linear(g, b, n2, &format!("{prefix}.ffn.w1"), &format!("{prefix}.ffn.b1"))?;
    let f = activate(g, f, shape.activation);
    let f = linear(g, b, f, &format!("{prefix}.ffn.w2"), &format!("{prefix}.ffn.b2"))?;
    g.add(h, f)
}

/// Packs per-sequence lengths into contiguous dense segments.
pub fn pack_segments(lengths: &[usize]) -> Vec<Segment> {
    let mut start = 0;
    lengths
        .iter()
        .map(|&len| {
            let s = Segment::dense(start, len);
            start += len;
            s
        })
        .collect()
}
