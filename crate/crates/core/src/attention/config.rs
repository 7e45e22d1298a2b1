use serde::{Deserialize, Serialize};

use crate::autodiff::Activation;
use crate::error::{GsanError, Result};
use crate::operators::StepSize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HeadCombine {
    #[default]
    Concat,
    Average,
}

/// Layer family of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    #[default]
    Gsan,
    Gsccn,
    GsanJoint,
}

/// Fixed diffusion used by the convolutional layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    /// The Hodge terms `L_k^(d)`, `L_k^(u)` (or `L_k`) themselves.
    #[default]
    Hodge,
    /// `1/|N_i|` on the support with the diagonal added; signed when the
    /// layer uses signed masking.
    RowNormalized,
}

fn default_slope() -> f64 {
    0.2
}

fn default_heads() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_nonlinearity() -> Activation {
    Activation::Relu
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GsanLayerConfig {
    /// Filter order.
    #[serde(rename = "J")]
    pub j: usize,
    pub f_in: usize,
    pub f_out: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default)]
    pub head_combine: HeadCombine,
    #[serde(default = "default_nonlinearity")]
    pub nonlinearity: Activation,
    #[serde(default = "default_slope")]
    pub attention_slope: f64,
    /// Multiplies attention coefficients by the relative orientation sign
    /// and makes the logit even in each endpoint's features.
    #[serde(default)]
    pub signed_masking: bool,
    #[serde(default = "default_true")]
    pub use_harmonic: bool,
    /// Steps of the sparse harmonic projector; defaults to `J`.
    #[serde(default)]
    pub harmonic_j: Option<usize>,
    /// Only read when building a complex context.
    #[serde(default = "default_eps")]
    pub harmonic_eps: StepSize,
}

fn default_eps() -> StepSize {
    StepSize::Auto
}

impl GsanLayerConfig {
    pub fn new(j: usize, f_in: usize, f_out: usize) -> Self {
        GsanLayerConfig {
            j,
            f_in,
            f_out,
            heads: 1,
            head_combine: HeadCombine::Concat,
            nonlinearity: Activation::Relu,
            attention_slope: default_slope(),
            signed_masking: false,
            use_harmonic: true,
            harmonic_j: None,
            harmonic_eps: StepSize::Auto,
        }
    }

    pub fn harmonic_steps(&self) -> usize {
        self.harmonic_j.unwrap_or(self.j)
    }

    /// Width of the layer output.
    pub fn out_width(&self) -> usize {
        match self.head_combine {
            HeadCombine::Concat => self.heads * self.f_out,
            HeadCombine::Average => self.f_out,
        }
    }

    /// Number of even (same-order) terms, `⌊J/2⌋`.
    pub fn n_even(&self) -> usize {
        self.j / 2
    }

    /// Number of odd (cross-order) terms, `⌈J/2⌉`.
    pub fn n_odd(&self) -> usize {
        self.j.div_ceil(2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(GsanError::InvalidConfig {
                field: field.into(),
                reason: reason.into(),
            })
        };
        if self.j < 1 {
            return bad("J", "must be at least 1");
        }
        if self.heads < 1 {
            return bad("heads", "must be at least 1");
        }
        if self.f_in < 1 || self.f_out < 1 {
            return bad("f_in/f_out", "must be at least 1");
        }
        if !self.attention_slope.is_finite() {
            return bad("attention_slope", "must be finite");
        }
        if self.harmonic_steps() < 1 {
            return bad("harmonic_j", "must be at least 1");
        }
        Ok(())
    }
}

/// `2(7 J F_out + F_in F_out J)` per head.
pub fn parameter_count(config: &GsanLayerConfig) -> usize {
    let (j, fi, fo) = (config.j, config.f_in, config.f_out);
    config.heads * 2 * (7 * j * fo + fi * fo * j)
}
