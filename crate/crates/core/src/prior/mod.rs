//! Wavelength-agnostic feature trunk of the continuous spectral field prior.
//!
//! Three cascaded scales (`C/12` channels at full resolution, `C/6` at half,
//! `C/3` at quarter) each pass through one cross-domain encoder; the coarser
//! two are bilinearly upsampled and every scale is mapped by a 1×1 conv so the
//! concatenation has exactly `C` channels.

pub mod blocks;
pub mod ssm;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ConvSpec, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};

use blocks::{downsample, Cdfe, Conv, Embed};

/// Where the state-space layer of each encoder runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeqDomain {
    None,
    Spatial,
    Frequency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixerConfig {
    pub channels: usize,
    pub branches: usize,
    pub seq_domain: SeqDomain,
    pub state_dim: usize,
}

impl MixerConfig {
    pub fn new(channels: usize) -> Self {
        MixerConfig {
            channels,
            branches: 3,
            seq_domain: SeqDomain::Frequency,
            state_dim: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || !self.channels.is_multiple_of(12) {
            return Err(Error::Config(format!(
                "latent channels must be a positive multiple of 12, got {}",
                self.channels
            )));
        }
        if !(1..=3).contains(&self.branches) {
            return Err(Error::Config(format!("branches must be 1, 2 or 3, got {}", self.branches)));
        }
        if self.state_dim == 0 {
            return Err(Error::Config("state dimension must be at least 1".into()));
        }
        Ok(())
    }

    /// Channels emitted by each refinement conv.
    pub fn refine_width(&self) -> usize {
        self.channels / self.branches
    }
}

/// Spatial dims must survive two halvings.
pub fn check_spatial(h: usize, w: usize) -> Result<()> {
    if !h.is_multiple_of(4) || !w.is_multiple_of(4) || h == 0 || w == 0 {
        let pad = |v: usize| (4 - v % 4) % 4;
        return Err(Error::Config(format!(
            "spatial size {h}x{w} must be divisible by 4; pad by {} rows and {} columns",
            pad(h),
            pad(w)
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct Branch {
    down: Conv,
    cdfe: Cdfe,
    refine: Conv,
}

#[derive(Clone, Debug)]
pub struct Mixer {
    pub config: MixerConfig,
    pub embed: Embed,
    pub cdfe_high: Cdfe,
    refine_high: Conv,
    coarser: Vec<Branch>,
}

impl Mixer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: MixerConfig, bands: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c_high = config.channels / 12;
        let out = config.refine_width();
        let embed = Embed::new(store, bands, c_high, rng);
        let cdfe_high = Cdfe::new(store, "cdfe_h", c_high, config.seq_domain, config.state_dim, rng);
        let refine_high = Conv::new(store, "refine_h", c_high, out, 1, ConvSpec::POINTWISE, true, rng);
        let mut coarser = Vec::new();
        let mut c = c_high;
        for (level, tag) in ["m", "l"].iter().enumerate().take(config.branches - 1) {
            let down = downsample(store, &format!("down{}", level + 1), c, rng);
            c *= 2;
            let cdfe = Cdfe::new(store, &format!("cdfe_{tag}"), c, config.seq_domain, config.state_dim, rng);
            let refine = Conv::new(store, &format!("refine_{tag}"), c, out, 1, ConvSpec::POINTWISE, true, rng);
            coarser.push(Branch { down, cdfe, refine });
        }
        Ok(Mixer {
            config,
            embed,
            cdfe_high,
            refine_high,
            coarser,
        })
    }

    /// `x: [N][H][W]`, `eta: [1]` → `f: [C][H][W]`.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, eta: Var) -> Result<Var> {
        let (_, h, w) = tape.value(x).dims3();
        check_spatial(h, w)?;
        let e = self.embed.forward(tape, p, x, eta);
        let mut feat = self.cdfe_high.forward(tape, p, e);
        let mut parts = vec![self.refine_high.forward(tape, p, feat)];
        let mut factor = 1;
        for br in &self.coarser {
            let d = br.down.forward(tape, p, feat);
            feat = br.cdfe.forward(tape, p, d);
            factor *= 2;
            let up = tape.upsample_bilinear(feat, factor);
            parts.push(br.refine.forward(tape, p, up));
        }
        Ok(tape.concat(&parts))
    }

    pub fn encoders(&self) -> Vec<&Cdfe> {
        std::iter::once(&self.cdfe_high).chain(self.coarser.iter().map(|b| &b.cdfe)).collect()
    }

    /// Parameters belonging to the meso and coarse branches.
    pub fn coarse_params(&self, store: &ParamStore) -> Vec<ParamId> {
        store
            .names()
            .iter()
            .filter(|n| ["down", "cdfe_m", "cdfe_l", "refine_m", "refine_l"].iter().any(|p| n.starts_with(p)))
            .filter_map(|n| store.id(n))
            .collect()
    }

    /// Zero every residual-branch output so each encoder is the identity.
    pub fn zero_residual_branches(&self, store: &mut ParamStore) {
        for enc in self.encoders() {
            blocks::zero_params(store, &enc.residual_output_params());
        }
    }
}
