//! The continuous spectral field prior: latent trunk plus a head queried at
//! arbitrary wavelengths.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{conv_constant_forward, gelu, kernels, Tape, Var};
use crate::error::{Error, Result};
use crate::head::{
    interpolate_bands, wavelength_codes, DiscreteHead, FrequencyBank, HeadConfig, SpectralEmbedding, SpectralRange,
    SynthesisHead,
};
use crate::params::{Bound, ParamStore};
use crate::prior::{Mixer, MixerConfig};
use crate::tensor::Tensor;
use crate::unfold::StagePrior;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub mixer: MixerConfig,
    pub head: HeadConfig,
    pub range: SpectralRange,
    /// Bands in every input estimate.
    pub bands: usize,
}

#[derive(Clone, Debug)]
pub struct CosfPrior {
    pub config: FieldConfig,
    pub bank: FrequencyBank,
    pub mixer: Mixer,
    pub embedding: Option<SpectralEmbedding>,
    pub head: Option<SynthesisHead>,
    pub discrete: Option<DiscreteHead>,
}

impl CosfPrior {
    /// Registers all parameters in `store`. The frequency bank is drawn
    /// from `rng` after the weights.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: FieldConfig, rng: &mut R) -> Result<Self> {
        config.head.validate()?;
        if config.bands == 0 {
            return Err(Error::Config("the prior needs at least one input band".into()));
        }
        let mixer = Mixer::new(store, config.mixer, config.bands, rng)?;
        let c = config.mixer.channels;
        let h = &config.head;
        let (embedding, head, discrete) = if h.ssh_enabled {
            let se = h
                .se_enabled
                .then(|| SpectralEmbedding::new(store, h.code_dim(), h.embed_dim, rng));
            (se, Some(SynthesisHead::new(store, c, h.condition_dim(), rng)), None)
        } else {
            (None, None, Some(DiscreteHead::new(store, c, config.bands, rng)))
        };
        let bank = FrequencyBank::sample(h.freq_count, h.freq_sigma, rng)?;
        Ok(CosfPrior {
            config,
            bank,
            mixer,
            embedding,
            head,
            discrete,
        })
    }

    pub fn check_queries(&self, queries: &[f64]) -> Result<()> {
        if queries.is_empty() {
            return Err(Error::Contract("at least one query wavelength is required".into()));
        }
        queries.iter().try_for_each(|&q| self.config.range.check(q))
    }

    /// Wavelength codes after the optional embedding, `[Q][cond]`.
    fn conditions(&self, tape: &mut Tape, p: &Bound, queries: &[f64]) -> Result<Var> {
        let hats = queries
            .iter()
            .map(|&q| self.config.range.normalize(q))
            .collect::<Result<Vec<_>>>()?;
        let codes = tape.constant(wavelength_codes(&self.bank, &self.config.head, &hats));
        Ok(match &self.embedding {
            Some(se) => se.forward(tape, p, codes),
            None => codes,
        })
    }

    /// `x: [N][H][W]`, `eta: [1]` → `[Q][H][W]`, one plane per query in order.
    pub fn apply(&self, tape: &mut Tape, p: &Bound, x: Var, eta: Var, sensed: &[f64], queries: &[f64]) -> Result<Var> {
        self.check_queries(queries)?;
        if sensed.len() != self.config.bands || tape.shape(x)[0] != sensed.len() {
            return Err(Error::InvalidDimensions(format!(
                "prior expects {} bands, estimate has {} with {} sensed wavelengths",
                self.config.bands,
                tape.shape(x)[0],
                sensed.len()
            )));
        }
        let f = self.mixer.forward(tape, p, x, eta)?;
        let out = match (&self.head, &self.discrete) {
            (Some(head), _) => {
                let e = self.conditions(tape, p, queries)?;
                let prepared = head.prepare(tape, p, f);
                let planes = if tape.requires_grad(prepared) || tape.requires_grad(e) {
                    let cond = tape.shape(e)[1];
                    let planes: Vec<Var> = (0..queries.len())
                        .map(|q| {
                            let row = tape.slice_leading(e, q, 1);
                            let code = tape.reshape(row, &[cond]);
                            head.plane(tape, p, prepared, code)
                        })
                        .collect();
                    tape.concat(&planes)
                } else {
                    let value = planes_untracked(head, tape, p, prepared, e);
                    tape.constant(value)
                };
                if self.config.head.head_residual {
                    let base = interpolate_bands(tape, x, sensed, queries);
                    tape.add(planes, base)
                } else {
                    planes
                }
            }
            (None, Some(discrete)) => {
                let bands = discrete.forward(tape, p, f);
                let bands = if self.config.head.head_residual {
                    tape.add(bands, x)
                } else {
                    bands
                };
                if queries == sensed {
                    bands
                } else {
                    interpolate_bands(tape, bands, sensed, queries)
                }
            }
            (None, None) => unreachable!("prior always has a head"),
        };
        Ok(out)
    }
}

/// Head evaluation without recording intermediates; keeps peak memory at
/// one query's activations.
fn planes_untracked(head: &SynthesisHead, tape: &Tape, p: &Bound, prepared: Var, e: Var) -> Tensor {
    let pre = tape.value(prepared);
    let (_, h, w) = pre.dims3();
    let codes = tape.value(e);
    let cond = codes.shape()[1];
    let w_code = tape.value(p.var(head.w_code));
    let conv = |t: &Tensor, c: &crate::prior::blocks::Conv| {
        kernels::conv2d(t, tape.value(p.var(c.w)), c.b.map(|b| tape.value(p.var(b))), c.spec)
    };
    let mut data = Vec::with_capacity(codes.shape()[0] * h * w);
    for row in codes.data().chunks(cond) {
        let e_q = Tensor::from_parts(vec![cond], row.to_vec());
        let mut a = conv_constant_forward(&e_q, w_code, h, w);
        a.add_assign(pre);
        let a = a.map(gelu);
        let a = conv(&a, &head.conv2).map(gelu);
        data.extend_from_slice(conv(&a, &head.conv3).data());
    }
    Tensor::from_parts(vec![codes.shape()[0], h, w], data)
}

impl StagePrior for CosfPrior {
    fn apply(&self, tape: &mut Tape, p: &Bound, x: Var, eta: Var, sensed: &[f64], queries: &[f64]) -> Result<Var> {
        CosfPrior::apply(self, tape, p, x, eta, sensed, queries)
    }

    fn range(&self) -> Option<SpectralRange> {
        Some(self.config.range)
    }
}
