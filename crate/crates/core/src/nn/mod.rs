//! Layer specifications, the parameter registry with hard sharing, and
//! feed-forward stacks built from them.

mod network;
mod store;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use network::{build_stack, Layer, Naming, Network, Taps};
pub use store::{share_parameters, ParameterStore, StateDict};

/// Slope of every leaky ReLU in the lab.
pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    ConvTranspose,
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    Relu,
    Sigmoid,
    Tanh,
    None,
}

/// One layer: a linear map (conv, transposed conv or dense, each with a
/// bias), then the activation, then optional batch normalization.
///
/// `kernel` is ignored for dense layers, where `out_channels` is the number
/// of output features. `padding`/`output_padding` left as `None` are derived
/// when the stack is built (see [`Network::build`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default = "unit_kernel")]
    pub kernel: [usize; 2],
    pub out_channels: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub batch_norm: bool,
    pub activation: Activation,
    #[serde(default)]
    pub padding: Option<usize>,
    #[serde(default)]
    pub output_padding: Option<usize>,
    /// Whether `channel_scale` applies; output layers whose width is an
    /// interface (RGB, one logit) opt out.
    #[serde(default = "yes")]
    pub scale_channels: bool,
}

fn unit_kernel() -> [usize; 2] {
    [1, 1]
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl LayerSpec {
    pub fn conv(kernel: usize, out_channels: usize, stride: usize) -> Self {
        Self::new(LayerKind::Conv, kernel, out_channels, stride)
    }

    pub fn conv_transpose(kernel: usize, out_channels: usize, stride: usize) -> Self {
        Self::new(LayerKind::ConvTranspose, kernel, out_channels, stride)
    }

    pub fn dense(out_features: usize) -> Self {
        Self::new(LayerKind::Dense, 1, out_features, 1)
    }

    fn new(kind: LayerKind, kernel: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            kind,
            kernel: [kernel, kernel],
            out_channels,
            stride,
            batch_norm: false,
            activation: Activation::None,
            padding: None,
            output_padding: None,
            scale_channels: true,
        }
    }

    pub fn bn(mut self) -> Self {
        self.batch_norm = true;
        self
    }

    pub fn act(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn pad(mut self, padding: usize) -> Self {
        self.padding = Some(padding);
        self
    }

    pub fn out_pad(mut self, output_padding: usize) -> Self {
        self.output_padding = Some(output_padding);
        self
    }

    pub fn fixed_width(mut self) -> Self {
        self.scale_channels = false;
        self
    }

    /// Output width after applying `channel_scale`.
    pub fn scaled_out(&self, channel_scale: f64) -> usize {
        if self.scale_channels {
            (self.out_channels as f64 * channel_scale).round() as usize
        } else {
            self.out_channels
        }
    }
}

/// A channel-concatenation shortcut: the output of layer `from` is appended
/// to the input of layer `to`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipLink {
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    /// Zero-mean normal weights with the given standard deviation.
    Normal { std: f64 },
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    He,
}

impl Default for Init {
    fn default() -> Self {
        Init::Normal { std: 0.02 }
    }
}

/// An ordered list of layers plus shortcuts.
///
/// `bottleneck` is the index of the first decoder layer. When absent it
/// defaults to the first transposed convolution; a stack without one is all
/// encoder. Layers before the split are named with the encoder prefix and
/// layers from it on with the decoder prefix, which is what lets two
/// generators share only their decoders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub skip_links: Vec<SkipLink>,
    #[serde(default = "unit_scale")]
    pub channel_scale: f64,
    #[serde(default)]
    pub bottleneck: Option<usize>,
    #[serde(default)]
    pub init: Init,
}

fn unit_scale() -> f64 {
    1.0
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Self {
        Self { layers, skip_links: Vec::new(), channel_scale: 1.0, bottleneck: None, init: Init::default() }
    }

    pub fn with_scale(mut self, channel_scale: f64) -> Self {
        self.channel_scale = channel_scale;
        self
    }

    pub fn with_skip(mut self, from: usize, to: usize) -> Self {
        self.skip_links.push(SkipLink { from, to });
        self
    }

    pub fn with_bottleneck(mut self, index: usize) -> Self {
        self.bottleneck = Some(index);
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn split(&self) -> usize {
        self.bottleneck.unwrap_or_else(|| {
            self.layers.iter().position(|l| l.kind == LayerKind::ConvTranspose).unwrap_or(self.layers.len())
        })
    }

    /// The layers before the split, without shortcuts.
    pub fn encoder(&self) -> NetworkSpec {
        NetworkSpec {
            layers: self.layers[..self.split()].to_vec(),
            skip_links: Vec::new(),
            bottleneck: None,
            ..self.clone()
        }
    }

    /// The layers from the split on, without shortcuts.
    pub fn decoder(&self) -> NetworkSpec {
        NetworkSpec {
            layers: self.layers[self.split()..].to_vec(),
            skip_links: Vec::new(),
            bottleneck: Some(0),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.channel_scale.is_finite() && self.channel_scale > 0.0) {
            return Err(Error::contract(format!("channel_scale must be positive, got {}", self.channel_scale)));
        }
        if let Some(b) = self.bottleneck {
            if b > self.layers.len() {
                return Err(Error::contract(format!("bottleneck {b} beyond {} layers", self.layers.len())));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            let fail = |detail: String| Err(Error::Construction { layer: i, detail });
            if l.stride == 0 {
                return fail("stride must be at least 1".into());
            }
            if l.out_channels == 0 {
                return fail("output width must be at least 1".into());
            }
            if l.kind != LayerKind::Dense && (l.kernel[0] == 0 || l.kernel[1] == 0) {
                return fail("kernel must be at least 1x1".into());
            }
            if l.scaled_out(self.channel_scale) == 0 {
                return fail(format!("channel_scale {} rounds {} channels to 0", self.channel_scale, l.out_channels));
            }
        }
        for link in &self.skip_links {
            if link.from >= link.to || link.to >= self.layers.len() {
                return Err(Error::contract(format!(
                    "skip link {} -> {} is not a forward link inside {} layers",
                    link.from,
                    link.to,
                    self.layers.len()
                )));
            }
        }
        Ok(())
    }
}
