use rand::Rng;

use super::fourier::{fourier_project, FourierBasis};
use super::preprocess::PreprocessedSpectrum;
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::numerics::{Binder, Graph, ParameterStore, Tensor, Var};
use crate::transformer::{self, Activation, BlockShape, WeightInit, INIT_STD};

pub const PREFIX: &str = "spec";

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralConfig {
    pub d_model: usize,
    pub d_embed: usize,
    /// Number of Fourier frequencies `D`.
    pub fourier_d: usize,
    pub sigma: f64,
    pub max_peaks: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub intensity_hidden: usize,
    /// `false` feeds the raw normalized intensity to the fusion layer
    /// instead of the intensity MLP.
    pub intensity_mlp: bool,
    /// `false` replaces the Fourier projection with a trainable linear lift
    /// of the scalar mass into the same `2D` channels.
    pub fourier: bool,
    pub activation: Activation,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            d_model: 128,
            d_embed: 128,
            fourier_d: 64,
            sigma: 30.0,
            max_peaks: 64,
            layers: 6,
            heads: 8,
            ffn_hidden: 256,
            intensity_hidden: 16,
            intensity_mlp: true,
            fourier: true,
            activation: Activation::Gelu,
        }
    }
}

impl SpectralConfig {
    fn block_shape(&self) -> BlockShape {
        BlockShape {
            d_model: self.d_model,
            heads: self.heads,
            ffn_hidden: self.ffn_hidden,
            activation: self.activation,
        }
    }

    fn intensity_width(&self) -> usize {
        if self.intensity_mlp {
            self.intensity_hidden
        } else {
            1
        }
    }

    pub fn fusion_input_width(&self) -> usize {
        2 * self.fourier_d + self.intensity_width()
    }
}

/// Peak-sequence encoder: mass/intensity channels, linear fusion, CLS
/// transformer, projection and ℓ2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEncoder {
    pub config: SpectralConfig,
    /// Present iff `config.fourier`.
    pub basis: Option<FourierBasis>,
}

fn p(name: &str) -> String {
    format!("{PREFIX}.{name}")
}

impl SpectralEncoder {
    /// Adds freshly initialized parameters under `spec.*` to `store`.
    pub fn init(
        config: SpectralConfig,
        basis_seed: u64,
        store: &mut ParameterStore,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let basis = if config.fourier {
            Some(FourierBasis::new(config.fourier_d, config.sigma, basis_seed)?)
        } else {
            None
        };
        let d = config.d_model;
        let h = config.intensity_hidden;
        if config.intensity_mlp {
            store.insert_normal(&p("intensity.w1"), &[1, h], 1.0, rng, true);
            store.insert(p("intensity.b1"), Tensor::zeros(&[h]), true);
            store.insert_normal(&p("intensity.w2"), &[h, h], 1.0 / (h as f64).sqrt(), rng, true);
            store.insert(p("intensity.b2"), Tensor::zeros(&[h]), true);
        }
        if !config.fourier {
            store.insert_normal(&p("lift.weight"), &[1, 2 * config.fourier_d], 1.0, rng, true);
            store.insert(p("lift.bias"), Tensor::zeros(&[2 * config.fourier_d]), true);
        }
        let fan_in = config.fusion_input_width();
        store.insert_normal(
            &p("fusion.weight"),
            &[fan_in, d],
            1.0 / (fan_in as f64).sqrt(),
            rng,
            true,
        );
        store.insert(p("fusion.bias"), Tensor::zeros(&[d]), true);
        store.insert_normal(&p("cls"), &[1, d], INIT_STD, rng, true);
        let shape = config.block_shape();
        for i in 0..config.layers {
            transformer::init_block(
                store,
                &p(&format!("block{i}")),
                &shape,
                None,
                WeightInit::Fixed(INIT_STD),
                rng,
            )?;
        }
        store.insert(p("final_ln.gain"), Tensor::filled(&[d], 1.0), true);
        store.insert(p("final_ln.bias"), Tensor::zeros(&[d]), true);
        store.insert_normal(
            &p("out.weight"),
            &[d, config.d_embed],
            1.0 / (d as f64).sqrt(),
            rng,
            true,
        );
        store.insert(p("out.bias"), Tensor::zeros(&[config.d_embed]), true);
        Ok(SpectralEncoder { config, basis })
    }

    /// Peak tokens for every unmasked position of every spectrum, stacked
    /// row-wise in input order, plus the per-spectrum token counts.
    pub fn embed_peaks<'a>(
        &self,
        g: &mut Graph<'a>,
        b: &mut Binder<'a>,
        specs: &[&PreprocessedSpectrum],
    ) -> Result<(Var, Vec<usize>)> {
        let mut xs = Vec::new();
        let mut is = Vec::new();
        let mut lengths = Vec::with_capacity(specs.len());
        for (k, s) in specs.iter().enumerate() {
            if s.x_mz.len() != s.mask.len() || s.i_norm.len() != s.mask.len() {
                return Err(Error::shape(
                    "embed_peaks",
                    &[s.x_mz.len(), s.i_norm.len()],
                    &[s.mask.len()],
                ));
            }
            let before = xs.len();
            for (x, i) in s.real_positions() {
                xs.push(x);
                is.push(i);
            }
            if xs.len() == before {
                return Err(Error::AllMasked(k));
            }
            lengths.push(xs.len() - before);
        }
        let rows = xs.len();
        let mass = if self.config.fourier {
            let basis = self
                .basis
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("Fourier encoder without a basis".into()))?;
            let two_d = 2 * basis.count();
            let mut data = Vec::with_capacity(rows * two_d);
            for &x in &xs {
                data.extend(fourier_project(x, basis));
            }
            g.constant(Tensor::matrix(rows, two_d, data)?)
        } else {
            let col = g.constant(Tensor::matrix(rows, 1, xs)?);
            transformer::linear(g, b, col, &p("lift.weight"), &p("lift.bias"))?
        };
        let icol = g.constant(Tensor::matrix(rows, 1, is)?);
        let intensity = if self.config.intensity_mlp {
            let h = transformer::linear(g, b, icol, &p("intensity.w1"), &p("intensity.b1"))?;
            let h = g.gelu(h);
            transformer::linear(g, b, h, &p("intensity.w2"), &p("intensity.b2"))?
        } else {
            icol
        };
        let fused_in = g.concat_cols(&[mass, intensity])?;
        let tokens = transformer::linear(g, b, fused_in, &p("fusion.weight"), &p("fusion.bias"))?;
        Ok((tokens, lengths))
    }

    /// Unit-norm embeddings, one row per spectrum.
    pub fn forward<'a>(&self, g: &mut Graph<'a>, b: &mut Binder<'a>, specs: &[&PreprocessedSpectrum]) -> Result<Var> {
        let (tokens, lengths) = self.embed_peaks(g, b, specs)?;
        let cls = b.param(g, &p("cls"))?;
        let mut parts = Vec::with_capacity(2 * lengths.len());
        let mut seq_lens = Vec::with_capacity(lengths.len());
        let mut off = 0;
        for &len in &lengths {
            parts.push(cls);
            parts.push(g.slice_rows(tokens, off, len)?);
            off += len;
            seq_lens.push(len + 1);
        }
        let mut x = g.concat_rows(&parts)?;
        let segments = transformer::pack_segments(&seq_lens);
        let shape = self.config.block_shape();
        for i in 0..self.config.layers {
            x = transformer::encoder_block(g, b, &p(&format!("block{i}")), x, &segments, &shape, None)?;
        }
        let starts: Vec<usize> = segments.iter().map(|s| s.start).collect();
        let cls_out = g.select_rows(x, &starts)?;
        let cls_out = transformer::layer_norm(g, b, cls_out, &p("final_ln"))?;
        let z = transformer::linear(g, b, cls_out, &p("out.weight"), &p("out.bias"))?;
        g.l2_normalize_rows(z)
    }

    pub fn encode(&self, store: &ParameterStore, spec: &PreprocessedSpectrum) -> Result<Embedding> {
        Ok(self.encode_batch(store, &[spec])?.remove(0))
    }

    pub fn encode_batch(&self, store: &ParameterStore, specs: &[&PreprocessedSpectrum]) -> Result<Vec<Embedding>> {
        let mut g = Graph::new();
        let mut b = Binder::inference(store);
        let z = self.forward(&mut g, &mut b, specs)?;
        let t = g.value(z);
        Ok((0..t.rows())
            .map(|r| Embedding::normalized(t.row(r).to_vec()))
            .collect())
    }
}
