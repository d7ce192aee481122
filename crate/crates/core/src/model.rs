//! The complete unfolded network: per-stage scalars plus one shared field
//! prior.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::cassi::{Measurement, SensingOperator};
use crate::error::Result;
use crate::field::{CosfPrior, FieldConfig};
use crate::head::{HeadConfig, SpectralRange};
use crate::params::{Bound, ParamStore};
use crate::prior::{MixerConfig, SeqDomain};
use crate::tensor::Tensor;
use crate::unfold::{run_stages, StageDiagnostics, UnfoldParams, Unrolled};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub stages: usize,
    pub channels: usize,
    pub branches: usize,
    pub seq_domain: SeqDomain,
    pub state_dim: usize,
    pub freq_count: usize,
    pub freq_sigma: f64,
    pub embed_dim: usize,
    pub rfe_enabled: bool,
    pub se_enabled: bool,
    pub ssh_enabled: bool,
    pub head_residual: bool,
    /// Bands per measurement.
    pub bands: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl ModelConfig {
    pub fn field(&self) -> Result<FieldConfig> {
        Ok(FieldConfig {
            mixer: MixerConfig {
                channels: self.channels,
                branches: self.branches,
                seq_domain: self.seq_domain,
                state_dim: self.state_dim,
            },
            head: HeadConfig {
                freq_count: self.freq_count,
                freq_sigma: self.freq_sigma,
                embed_dim: self.embed_dim,
                rfe_enabled: self.rfe_enabled,
                se_enabled: self.se_enabled,
                ssh_enabled: self.ssh_enabled,
                head_residual: self.head_residual,
            },
            range: SpectralRange::new(self.lambda_min, self.lambda_max)?,
            bands: self.bands,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub unfold: UnfoldParams,
    pub prior: CosfPrior,
}

/// Inference result as plain values.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub recon: Tensor,
    pub render: Option<Tensor>,
    pub stages: Vec<StageDiagnostics>,
}

impl Model {
    /// Deterministic initialisation from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let unfold = UnfoldParams::new(&mut store, config.stages)?;
        let prior = CosfPrior::new(&mut store, config.field()?, &mut rng)?;
        Ok(Model {
            config,
            store,
            unfold,
            prior,
        })
    }

    pub fn range(&self) -> SpectralRange {
        self.prior.config.range
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bound,
        op: &SensingOperator,
        y: &Measurement,
        queries: &[f64],
    ) -> Result<Unrolled> {
        run_stages(tape, p, op, y, &self.prior, &self.unfold, queries)
    }

    /// Forward pass with frozen parameters.
    pub fn reconstruct(&self, op: &SensingOperator, y: &Measurement, queries: &[f64]) -> Result<Reconstruction> {
        let mut tape = Tape::new();
        let p = self.store.bind_frozen(&mut tape);
        let out = self.forward(&mut tape, &p, op, y, queries)?;
        Ok(Reconstruction {
            recon: tape.value(out.recon).clone(),
            render: out.render.map(|v| tape.value(v).clone()),
            stages: out.stages,
        })
    }
}
