//! A stack of layers with a readout, sharing one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, LossTarget, ParamStore, Tape, Var};
use crate::dense::Mat;
use crate::error::{GsanError, Result};
use crate::filters::CochainBundle;
use crate::operators::StepSize;

use super::config::{GsanLayerConfig, LaplacianKind, ModelFamily};
use super::context::SimplicialContext;
use super::layer::{layer_forward_tape, AttentionNode, Diffusion};
use super::params::{init_layer, LayerLayout};
use super::readout::{ReadoutConfig, ReadoutInput, ReadoutLayout};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub family: ModelFamily,
    /// Defaults to attention for the attentional families and the Hodge
    /// Laplacians for the convolutional one.
    #[serde(default)]
    pub diffusion: Option<Diffusion>,
    pub layers: Vec<GsanLayerConfig>,
    pub readout: ReadoutConfig,
}

impl ModelConfig {
    pub fn diffusion(&self) -> Diffusion {
        self.diffusion.unwrap_or(match self.family {
            ModelFamily::Gsccn => Diffusion::Fixed(LaplacianKind::Hodge),
            _ => Diffusion::Attention,
        })
    }

    /// Step size used to build the shared context.
    pub fn harmonic_eps(&self) -> StepSize {
        self.layers.first().map(|l| l.harmonic_eps).unwrap_or(StepSize::Auto)
    }

    pub fn validate(&self, max_order: usize) -> Result<()> {
        let bad = |field: String, reason: &str| {
            Err(GsanError::InvalidConfig {
                field,
                reason: reason.into(),
            })
        };
        if self.layers.is_empty() {
            return bad("layers".into(), "at least one layer is required");
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.validate().map_err(|e| match e {
                GsanError::InvalidConfig { field, reason } => GsanError::InvalidConfig {
                    field: format!("layers[{i}].{field}"),
                    reason,
                },
                e => e,
            })?;
            if i > 0 && l.f_in != self.layers[i - 1].out_width() {
                return bad(format!("layers[{i}].f_in"), "must equal the previous layer's output width");
            }
            if l.harmonic_eps != self.harmonic_eps() {
                return bad(format!("layers[{i}].harmonic_eps"), "all layers share one harmonic step size");
            }
        }
        if self.family == ModelFamily::Gsccn && self.diffusion() == Diffusion::Attention {
            return bad("diffusion".into(), "the convolutional family has no attention parameters");
        }
        self.readout.validate(max_order)
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].f_in
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map(|l| l.out_width()).unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub max_order: usize,
    pub store: ParamStore,
    pub layers: Vec<LayerLayout>,
    pub readout: ReadoutLayout,
}

#[derive(Clone, Debug)]
pub struct ModelForward {
    pub prediction: Var,
    /// `(layer, node)` for every attention matrix built.
    pub attention: Vec<(usize, AttentionNode)>,
}

impl Model {
    pub fn init(config: &ModelConfig, max_order: usize, seed: u64) -> Result<Self> {
        config.validate(max_order)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let layers = config
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| init_layer(&mut store, &format!("L{i}"), l, config.family, max_order, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let readout = ReadoutLayout::init(&mut store, &config.readout, config.output_width(), max_order, &mut rng)?;
        Ok(Model {
            config: config.clone(),
            max_order,
            store,
            layers,
            readout,
        })
    }

    /// Records the model on `tape` using parameter values from `store`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &SimplicialContext,
        input: &CochainBundle,
        readout: &ReadoutInput,
    ) -> Result<ModelForward> {
        if ctx.max_order() != self.max_order {
            return Err(GsanError::ShapeError(format!(
                "model built for order {} used on a complex of order {}",
                self.max_order,
                ctx.max_order()
            )));
        }
        input.check_sizes(ctx.sizes())?;
        let mut z: Vec<Var> = input.orders().iter().map(|m| tape.constant(m.clone())).collect();
        let mut attention = Vec::new();
        let diffusion = self.config.diffusion();
        for (i, (cfg, layout)) in self.config.layers.iter().zip(&self.layers).enumerate() {
            let out = layer_forward_tape(tape, ctx, cfg, layout, store, diffusion, &z)?;
            attention.extend(out.attention.into_iter().map(|n| (i, n)));
            z = out.orders;
        }
        let prediction = self.readout.forward(tape, store, &z, readout)?;
        Ok(ModelForward { prediction, attention })
    }

    pub fn predict(&self, ctx: &SimplicialContext, input: &CochainBundle, readout: &ReadoutInput) -> Result<Mat> {
        let mut tape = Tape::new();
        let f = self.forward_tape(&mut tape, &self.store, ctx, input, readout)?;
        Ok(tape.value(f.prediction).clone())
    }

    /// Loss and gradients of one example at the current parameters.
    pub fn loss_and_gradients(
        &self,
        ctx: &SimplicialContext,
        input: &CochainBundle,
        readout: &ReadoutInput,
        target: &std::sync::Arc<LossTarget>,
    ) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let f = self.forward_tape(&mut tape, &self.store, ctx, input, readout)?;
        let loss = tape.loss(f.prediction, target.clone())?;
        let g = tape.backward(loss, &self.store)?;
        Ok((tape.value(loss)[(0, 0)], g))
    }
}
