use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::assim::{AssimConfig, Obs, SolverWidths, VarNet};
use crate::autodiff::{Tape, Var};
use crate::data::Modality;
use crate::error::{Error, Result};
use crate::nn::{Bound, ParamId, Params};
use crate::priors::{AeWidths, ConvAe, FcAe, Prior};
use crate::scalar::Scalar;

/// The trainable models compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Per-hour fully connected auto-encoder trained on single hours.
    FcaeTi,
    /// The same per-hour network trained on 24 h windows.
    FcaeTd,
    ConvaeUpa,
    ConvaeUpaEcmwf,
    VarnetUpa,
    VarnetUpaEcmwf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::FcaeTi,
        ModelKind::FcaeTd,
        ModelKind::ConvaeUpa,
        ModelKind::ConvaeUpaEcmwf,
        ModelKind::VarnetUpa,
        ModelKind::VarnetUpaEcmwf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::FcaeTi => "fcae-ti",
            ModelKind::FcaeTd => "fcae-td",
            ModelKind::ConvaeUpa => "convae-upa",
            ModelKind::ConvaeUpaEcmwf => "convae-upa-ecmwf",
            ModelKind::VarnetUpa => "varnet-upa",
            ModelKind::VarnetUpaEcmwf => "varnet-upa-ecmwf",
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            ModelKind::ConvaeUpaEcmwf | ModelKind::VarnetUpaEcmwf => Modality::UpaEcmwf,
            _ => Modality::Upa,
        }
    }

    pub fn is_varnet(self) -> bool {
        matches!(self, ModelKind::VarnetUpa | ModelKind::VarnetUpaEcmwf)
    }

    pub fn is_fc(self) -> bool {
        matches!(self, ModelKind::FcaeTi | ModelKind::FcaeTd)
    }

    /// Training samples are single hours instead of 24 h windows.
    pub fn per_hour(self) -> bool {
        self == ModelKind::FcaeTi
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ModelKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown model `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

/// Network widths for every model family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelWidths {
    pub conv_ae: AeWidths,
    pub fc_ae: AeWidths,
    pub lstm_hidden: usize,
    pub lstm_kernel: usize,
}

impl Default for ModelWidths {
    fn default() -> Self {
        Self { conv_ae: AeWidths::default(), fc_ae: AeWidths::default(), lstm_hidden: 100, lstm_kernel: 3 }
    }
}

#[derive(Clone, Debug)]
enum Net {
    Direct(Prior),
    Var(VarNet),
}

/// A network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<S> {
    pub kind: ModelKind,
    pub params: Params<S>,
    net: Net,
}

impl<S: Scalar> Model<S> {
    pub fn new(kind: ModelKind, widths: &ModelWidths, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let c = kind.modality().channels();
        let net = if kind.is_varnet() {
            let w = SolverWidths {
                prior: widths.conv_ae,
                lstm_hidden: widths.lstm_hidden,
                lstm_kernel: widths.lstm_kernel,
            };
            Net::Var(VarNet::new(&mut params, c, w, &mut rng))
        } else if kind.is_fc() {
            Net::Direct(Prior::Fc(FcAe::new(&mut params, "phi", c, widths.fc_ae, &mut rng)))
        } else {
            Net::Direct(Prior::Conv(ConvAe::new(&mut params, "phi", c, widths.conv_ae, &mut rng)))
        };
        Self { kind, params, net }
    }

    /// Builds the architecture and loads `params` into it by name.
    pub fn with_params(kind: ModelKind, widths: &ModelWidths, params: &Params<S>) -> Result<Self> {
        let mut m = Self::new(kind, widths, 0);
        let n = m.params.load_matching(params)?;
        if n != m.params.len() || n != params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter set does not match a {kind} model ({n} of {} matched)",
                m.params.len()
            )));
        }
        Ok(m)
    }

    /// Optimizer groups: the prior Φ and, for the solver models, Γ + L.
    pub fn param_groups(&self) -> Vec<Vec<ParamId>> {
        let (phi, rest) = VarNet::param_groups(&self.params);
        if rest.is_empty() {
            vec![phi]
        } else {
            vec![phi, rest]
        }
    }

    /// `x̂ = Ψ(y)` on the tape. Direct models apply the prior once to `x⁰`.
    pub fn forward(&self, tape: &mut Tape<S>, p: &Bound, obs: &Obs<S>, cfg: &AssimConfig) -> Result<Var> {
        match &self.net {
            Net::Var(v) => v.reconstruct(tape, p, obs, cfg),
            Net::Direct(prior) => {
                let x0 = tape.constant(VarNet::initial_state(obs));
                prior.forward(tape, p, x0)
            }
        }
    }

    /// Forward pass with fixed parameters.
    pub fn predict(&self, obs: &Obs<S>, cfg: &AssimConfig) -> Result<Array<S>> {
        match &self.net {
            Net::Var(v) => v.predict(&self.params, obs, cfg),
            Net::Direct(_) => {
                let mut tape = Tape::new();
                let p = self.params.bind_frozen(&mut tape);
                let x = self.forward(&mut tape, &p, obs, cfg)?;
                Ok(tape.value(x).clone())
            }
        }
    }
}

