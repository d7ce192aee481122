//! Convolutional building blocks of the feature mixer.

use rand::Rng;

use crate::autodiff::{ConvSpec, Tape, Var};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;

use super::ssm::{FourierMamba, SpatialMamba};
use super::SeqDomain;

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        spec: ConvSpec,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let cg = cin / spec.groups;
        let fan_in = cg * k * k;
        let w = store.add_uniform(format!("{name}.weight"), &[cout, cg, k, k], fan_in, rng);
        let b = bias.then(|| store.add_uniform(format!("{name}.bias"), &[cout], fan_in, rng));
        Conv { w, b, spec }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        tape.conv2d(x, p.var(self.w), self.b.map(|b| p.var(b)), self.spec)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.w).chain(self.b).collect()
    }
}

/// 3×3 convolution over the estimate with the noise level appended as a
/// constant channel.
#[derive(Clone, Debug)]
pub struct Embed {
    pub conv: Conv,
}

impl Embed {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, bands: usize, out: usize, rng: &mut R) -> Self {
        Embed {
            conv: Conv::new(store, "embed", bands + 1, out, 3, ConvSpec::SAME3, true, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var, eta: Var) -> Var {
        let (_, h, w) = tape.value(x).dims3();
        let plane = tape.broadcast_planes(eta, h, w);
        let input = tape.concat(&[x, plane]);
        self.conv.forward(tape, p, input)
    }
}

/// Local depthwise 3×3 branch gated by a channel MLP over the global mean,
/// added back to the input.
#[derive(Clone, Debug)]
pub struct GlamLite {
    pub local: Conv,
    gate1_w: ParamId,
    gate1_b: ParamId,
    gate2_w: ParamId,
    gate2_b: ParamId,
}

impl GlamLite {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, c: usize, rng: &mut R) -> Self {
        GlamLite {
            local: Conv::new(store, &format!("{prefix}.local"), c, c, 3, ConvSpec::depthwise3(c), true, rng),
            gate1_w: store.add_uniform(format!("{prefix}.gate1.weight"), &[c, c], c, rng),
            gate1_b: store.add_uniform(format!("{prefix}.gate1.bias"), &[c], c, rng),
            gate2_w: store.add_uniform(format!("{prefix}.gate2.weight"), &[c, c], c, rng),
            gate2_b: store.add_uniform(format!("{prefix}.gate2.bias"), &[c], c, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        let c = tape.shape(x)[0];
        let pooled = tape.mean_spatial(x);
        let row = tape.reshape(pooled, &[1, c]);
        let hidden = tape.linear(row, p.var(self.gate1_w), Some(p.var(self.gate1_b)));
        let hidden = tape.gelu(hidden);
        let logits = tape.linear(hidden, p.var(self.gate2_w), Some(p.var(self.gate2_b)));
        let gate = tape.sigmoid(logits);
        let gate = tape.reshape(gate, &[c]);
        let local = self.local.forward(tape, p, x);
        let branch = tape.mul_channels(local, gate);
        tape.add(x, branch)
    }
}

/// Gated depthwise feed-forward: `f + proj(GELU(dw(a)) ⊙ dw(b))` with
/// `(a, b)` the halves of a 1×1 expansion to `2γC`.
#[derive(Clone, Debug)]
pub struct Gdfn {
    pub expand: Conv,
    pub depthwise: Conv,
    pub project: Conv,
    hidden: usize,
}

pub const GDFN_EXPANSION: usize = 2;

impl Gdfn {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, c: usize, rng: &mut R) -> Self {
        let hidden = GDFN_EXPANSION * c;
        Gdfn {
            expand: Conv::new(store, &format!("{prefix}.expand"), c, 2 * hidden, 1, ConvSpec::POINTWISE, true, rng),
            depthwise: Conv::new(
                store,
                &format!("{prefix}.dw"),
                2 * hidden,
                2 * hidden,
                3,
                ConvSpec::depthwise3(2 * hidden),
                true,
                rng,
            ),
            project: Conv::new(store, &format!("{prefix}.project"), hidden, c, 1, ConvSpec::POINTWISE, true, rng),
            hidden,
        }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        let e = self.expand.forward(tape, p, x);
        let e = self.depthwise.forward(tape, p, e);
        let a = tape.slice_leading(e, 0, self.hidden);
        let b = tape.slice_leading(e, self.hidden, self.hidden);
        let a = tape.gelu(a);
        let gated = tape.mul(a, b);
        let out = self.project.forward(tape, p, gated);
        tape.add(x, out)
    }
}

#[derive(Clone, Debug)]
pub enum SeqBlock {
    Frequency(FourierMamba),
    Spatial(SpatialMamba),
}

/// Spatial → sequence → channel refinement, each stage residual.
#[derive(Clone, Debug)]
pub struct Cdfe {
    pub glam: GlamLite,
    pub seq: Option<SeqBlock>,
    pub gdfn: Gdfn,
}

impl Cdfe {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        c: usize,
        domain: SeqDomain,
        state_dim: usize,
        rng: &mut R,
    ) -> Self {
        let glam = GlamLite::new(store, &format!("{prefix}.glam"), c, rng);
        let seq = match domain {
            SeqDomain::None => None,
            SeqDomain::Frequency => Some(SeqBlock::Frequency(FourierMamba::new(
                store,
                &format!("{prefix}.fmamba"),
                c,
                state_dim,
                rng,
            ))),
            SeqDomain::Spatial => Some(SeqBlock::Spatial(SpatialMamba::new(
                store,
                &format!("{prefix}.smamba"),
                c,
                state_dim,
                rng,
            ))),
        };
        let gdfn = Gdfn::new(store, &format!("{prefix}.gdfn"), c, rng);
        Cdfe { glam, seq, gdfn }
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x: Var) -> Var {
        let s = self.glam.forward(tape, p, x);
        let f = match &self.seq {
            None => s,
            Some(SeqBlock::Frequency(m)) => m.forward(tape, p, s),
            Some(SeqBlock::Spatial(m)) => m.forward(tape, p, s),
        };
        self.gdfn.forward(tape, p, f)
    }

    /// Parameters whose zeroing turns each residual branch off.
    pub fn residual_output_params(&self) -> Vec<ParamId> {
        let mut ids = self.glam.local.params();
        match &self.seq {
            Some(SeqBlock::Frequency(m)) => ids.extend(m.ssm.output_params()),
            Some(SeqBlock::Spatial(m)) => ids.extend(m.ssm.output_params()),
            None => {}
        }
        ids.extend(self.gdfn.project.params());
        ids
    }
}

/// 4×4 stride-2 convolution doubling the channels.
pub fn downsample<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, c: usize, rng: &mut R) -> Conv {
    Conv::new(
        store,
        name,
        c,
        2 * c,
        4,
        ConvSpec {
            stride: 2,
            pad: 1,
            groups: 1,
        },
        true,
        rng,
    )
}

pub(crate) fn zero_params(store: &mut ParamStore, ids: &[ParamId]) {
    for &id in ids {
        let shape = store.get(id).shape().to_vec();
        *store.get_mut(id) = Tensor::zeros(&shape);
    }
}
