//! Generator, discriminator and reference autoencoder builders, plus the
//! preset architectures.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Init, LayerSpec, Naming, Network, NetworkSpec, ParameterStore, Taps};
use crate::tensor::{BatchNormMode, Tensor};

pub const REG_ENCODER: &str = "enc_G";
pub const REG_DECODER: &str = "dec_G";
pub const AE_ENCODER: &str = "enc_AE";
pub const AE_DECODER: &str = "dec_AE";
pub const DISCRIMINATOR: &str = "disc";
pub const AAE_ENCODER: &str = "enc_AAE";
pub const AAE_DECODER: &str = "dec_AAE";
pub const CODE_DISCRIMINATOR: &str = "code_disc";

/// Named architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "4layer")]
    FourLayer,
    #[serde(rename = "4layer-skip")]
    FourLayerSkip,
    #[serde(rename = "5layer")]
    FiveLayer,
    #[serde(rename = "6layer")]
    SixLayer,
}

impl Preset {
    pub fn spec(self) -> NetworkSpec {
        match self {
            Preset::FourLayer => generator_4layer(),
            Preset::FourLayerSkip => generator_4layer_skip(),
            Preset::FiveLayer => generator_5layer(),
            Preset::SixLayer => generator_6layer(),
        }
    }
}

fn enc(kernel: usize, out: usize, stride: usize) -> LayerSpec {
    LayerSpec::conv(kernel, out, stride).act(Activation::LeakyRelu).bn()
}

fn dec(kernel: usize, out: usize, stride: usize) -> LayerSpec {
    LayerSpec::conv_transpose(kernel, out, stride).act(Activation::LeakyRelu).bn()
}

fn first(kernel: usize, out: usize, stride: usize) -> LayerSpec {
    LayerSpec::conv(kernel, out, stride).act(Activation::LeakyRelu)
}

fn rgb_head(kernel: usize, stride: usize) -> LayerSpec {
    LayerSpec::conv_transpose(kernel, 3, stride).act(Activation::Tanh).fixed_width()
}

/// Encoder strides 4, 2, 2, 4 and a mirrored decoder; 64x64 images reach a
/// 1x1x512 bottleneck.
pub fn generator_4layer() -> NetworkSpec {
    NetworkSpec::new(vec![
        first(4, 64, 4),
        enc(4, 128, 2),
        enc(4, 256, 2),
        enc(4, 512, 4),
        dec(1, 256, 4),
        dec(4, 128, 2),
        dec(4, 64, 2),
        rgb_head(4, 4),
    ])
}

/// [`generator_4layer`] with the third encoder layer's output concatenated
/// to the input of the second decoder layer.
pub fn generator_4layer_skip() -> NetworkSpec {
    generator_4layer().with_skip(2, 5)
}

pub fn generator_5layer() -> NetworkSpec {
    NetworkSpec::new(vec![
        first(4, 32, 2),
        enc(4, 64, 2),
        enc(4, 128, 2),
        enc(4, 256, 2),
        enc(4, 768, 4),
        dec(1, 256, 4),
        dec(4, 128, 2),
        dec(4, 64, 2),
        dec(4, 32, 2),
        rgb_head(4, 2),
    ])
}

pub fn generator_6layer() -> NetworkSpec {
    NetworkSpec::new(vec![
        first(4, 32, 2),
        enc(4, 64, 2),
        enc(4, 128, 2),
        enc(4, 256, 2),
        enc(4, 512, 2),
        enc(4, 768, 2),
        dec(1, 512, 2),
        dec(1, 256, 2),
        dec(4, 128, 2),
        dec(4, 64, 2),
        dec(4, 32, 2),
        rgb_head(4, 2),
    ])
}

/// Four convolutions with strides 2, 2, 1, 1 and paddings 1, 0, 1, 1; a
/// 64x64 pair maps to a 13x13 logit map.
pub fn discriminator_spec() -> NetworkSpec {
    NetworkSpec::new(vec![
        first(4, 64, 2).pad(1),
        enc(4, 128, 2).pad(0),
        enc(4, 256, 1).pad(1),
        LayerSpec::conv(4, 1, 1).pad(1).fixed_width(),
    ])
}

/// Two dense layers per half with a ReLU after every layer, mapping
/// `in_dim` to a 2-d code and the code to `out_dim`.
pub fn synthetic_spec(hidden: usize, out_dim: usize) -> NetworkSpec {
    let layer = |n: usize| LayerSpec::dense(n).act(Activation::Relu);
    NetworkSpec::new(vec![layer(hidden), layer(2), layer(hidden), layer(out_dim)])
        .with_bottleneck(2)
        .with_init(Init::He)
}

/// A single-pathway or two-pathway generator. The two-pathway form owns an
/// autoencoder pathway whose decoder parameters are aliases of the
/// regression decoder's.
#[derive(Clone)]
pub struct Generator {
    pub reg: Network,
    pub ae: Option<Network>,
}

impl Generator {
    /// The single-pathway conditional GAN generator.
    pub fn build_cgan(
        spec: &NetworkSpec,
        source_shape: &[usize],
        store: &mut ParameterStore,
        seed: u64,
    ) -> Result<Self> {
        let reg = Network::build(spec, source_shape, store, &Naming::split(REG_ENCODER, REG_DECODER), seed)?;
        Ok(Self { reg, ae: None })
    }

    /// Two encoders with independent initialization and one decoder used by
    /// both pathways. The regression pathway's parameters are initialized
    /// exactly as [`build_cgan`](Self::build_cgan) would with the same seed.
    pub fn build_rocgan(
        spec: &NetworkSpec,
        source_shape: &[usize],
        target_shape: &[usize],
        store: &mut ParameterStore,
        seed: u64,
    ) -> Result<Self> {
        let reg = Network::build(spec, source_shape, store, &Naming::split(REG_ENCODER, REG_DECODER), seed)?;
        let mut ae = Network::build(spec, target_shape, store, &Naming::split(AE_ENCODER, AE_DECODER), seed)?;
        if reg.bottleneck_shape() != ae.bottleneck_shape() {
            return Err(Error::shape(
                "build_rocgan",
                format!("bottlenecks differ: {:?} vs {:?}", reg.bottleneck_shape(), ae.bottleneck_shape()),
            ));
        }
        for (g, a) in reg.decoder_param_names().iter().zip(ae.decoder_param_names()) {
            store.share(&[g.as_str(), a.as_str()])?;
        }
        ae.rebind(store)?;
        Ok(Self { reg, ae: Some(ae) })
    }

    pub fn is_two_pathway(&self) -> bool {
        self.ae.is_some()
    }

    pub fn forward_reg(&self, s: &Tensor, mode: BatchNormMode) -> Result<(Tensor, Taps)> {
        self.reg.forward_with_skips(s, mode)
    }

    pub fn forward_ae(&self, y: &Tensor, mode: BatchNormMode) -> Result<(Tensor, Taps)> {
        self.ae
            .as_ref()
            .ok_or_else(|| Error::contract("single-pathway generator has no autoencoder pathway"))?
            .forward_with_skips(y, mode)
    }

    pub fn rebind(&mut self, store: &ParameterStore) -> Result<()> {
        self.reg.rebind(store)?;
        if let Some(ae) = &mut self.ae {
            ae.rebind(store)?;
        }
        Ok(())
    }
}

/// Conditional discriminator: the source and the candidate are
/// concatenated along channels before the convolution stack.
#[derive(Clone)]
pub struct Discriminator {
    pub net: Network,
}

impl Discriminator {
    pub fn build(
        spec: &NetworkSpec,
        source_shape: &[usize],
        target_shape: &[usize],
        store: &mut ParameterStore,
        seed: u64,
    ) -> Result<Self> {
        let (&[sc, ref s_rest @ ..], &[tc, ref t_rest @ ..]) = (source_shape, target_shape) else {
            return Err(Error::shape("discriminator", "empty input shape"));
        };
        if s_rest != t_rest {
            return Err(Error::shape("discriminator", format!("{source_shape:?} vs {target_shape:?}")));
        }
        if spec.layers.len() < 2 {
            return Err(Error::contract("discriminator needs at least two layers"));
        }
        let mut input = vec![sc + tc];
        input.extend_from_slice(s_rest);
        let net = Network::build(spec, &input, store, &Naming::single(DISCRIMINATOR), seed)?;
        Ok(Self { net })
    }

    /// Logits and the penultimate-layer activations used for feature
    /// matching.
    pub fn discriminate(&self, s: &Tensor, candidate: &Tensor, mode: BatchNormMode) -> Result<(Tensor, Tensor)> {
        let x = s.concat_channels(candidate)?;
        let (logits, taps) = self.net.forward_with_skips(&x, mode)?;
        let features = taps[&format!("layer{}", self.net.layers().len() - 2)].clone();
        Ok((logits, features))
    }

    pub fn logits_shape(&self) -> &[usize] {
        self.net.output_shape()
    }
}

/// Adversarial autoencoder on target images: the generator's encoder and
/// decoder plus a two-layer code discriminator that pushes the flattened
/// bottleneck towards a standard normal prior.
#[derive(Clone)]
pub struct Aae {
    pub autoencoder: Network,
    pub code_disc: Network,
}

pub const CODE_DISC_HIDDEN: usize = 64;

impl Aae {
    pub fn build(spec: &NetworkSpec, target_shape: &[usize], store: &mut ParameterStore, seed: u64) -> Result<Self> {
        let autoencoder = Network::build(spec, target_shape, store, &Naming::split(AAE_ENCODER, AAE_DECODER), seed)?;
        let code: usize = autoencoder.bottleneck_shape().iter().product();
        let code_spec = NetworkSpec::new(vec![
            LayerSpec::dense(CODE_DISC_HIDDEN).act(Activation::LeakyRelu),
            LayerSpec::dense(1).fixed_width(),
        ]);
        let code_disc = Network::build(&code_spec, &[code], store, &Naming::single(CODE_DISCRIMINATOR), seed)?;
        Ok(Self { autoencoder, code_disc })
    }

    /// Reconstruction and the flattened code.
    pub fn forward(&self, y: &Tensor, mode: BatchNormMode) -> Result<(Tensor, Tensor)> {
        let (out, taps) = self.autoencoder.forward_with_skips(y, mode)?;
        Ok((out, taps["bottleneck"].flatten_batch()?))
    }

    pub fn code_dim(&self) -> usize {
        self.code_disc.input_shape()[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_stack;

    #[test]
    fn four_layer_shapes_at_64() {
        let mut store = ParameterStore::new();
        let enc = build_stack(&generator_4layer().encoder(), &[3, 64, 64], &mut store, "e", 0).unwrap();
        assert_eq!(enc.output_shape(), &[512, 1, 1]);
        let mut store = ParameterStore::new();
        let scaled = generator_4layer().encoder().with_scale(0.125);
        let enc = build_stack(&scaled, &[3, 64, 64], &mut store, "e", 0).unwrap();
        assert_eq!(enc.output_shape(), &[64, 1, 1]);
    }

    #[test]
    fn presets_reconstruct_input_size() {
        for preset in [Preset::FourLayer, Preset::FourLayerSkip, Preset::FiveLayer, Preset::SixLayer] {
            for side in [32, 64] {
                let mut store = ParameterStore::new();
                let net = build_stack(&preset.spec().with_scale(0.125), &[3, side, side], &mut store, "g", 0).unwrap();
                assert_eq!(net.output_shape(), &[3, side, side], "{preset:?} at {side}");
            }
        }
    }

    #[test]
    fn discriminator_logit_map() {
        let mut store = ParameterStore::new();
        let d = Discriminator::build(&discriminator_spec(), &[3, 64, 64], &[3, 64, 64], &mut store, 0).unwrap();
        assert_eq!(d.logits_shape(), &[1, 13, 13]);
        assert_eq!(d.net.layers()[2].out_shape, vec![256, 14, 14]);
    }
}
