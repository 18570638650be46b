use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};

use super::{
    Activation, Init, LayerKind, LayerSpec, NetworkSpec, ParameterStore, SkipLink, BN_EPS, BN_MOMENTUM, LEAKY_SLOPE,
};
use crate::error::{Error, Result};
use crate::rng::named;
use crate::tensor::{
    batch_norm, conv2d, conv2d_output_size, conv_transpose2d, conv_transpose2d_output_size, BatchNormMode, Tensor,
};

/// Named intermediate activations: `layer{i}` for every layer output and
/// `bottleneck` for the tensor entering the first decoder layer.
pub type Taps = BTreeMap<String, Tensor>;

/// How parameter names are formed. With a split naming, layer `i` before
/// the bottleneck is `{encoder}.{i}` and layer `i` after it is
/// `{decoder}.{i - split}`, so two networks built from one spec with the
/// same decoder prefix pair up parameter by parameter.
#[derive(Clone, Debug)]
pub struct Naming {
    encoder: String,
    decoder: Option<String>,
}

impl Naming {
    pub fn single(prefix: &str) -> Self {
        Self { encoder: prefix.to_string(), decoder: None }
    }

    pub fn split(encoder: &str, decoder: &str) -> Self {
        Self { encoder: encoder.to_string(), decoder: Some(decoder.to_string()) }
    }

    fn layer(&self, index: usize, split: usize) -> String {
        match &self.decoder {
            Some(dec) if index >= split => format!("{dec}.{}", index - split),
            _ => format!("{}.{index}", self.encoder),
        }
    }
}

#[derive(Clone)]
struct BnParams {
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
}

#[derive(Clone)]
pub struct Layer {
    pub index: usize,
    /// Name prefix of the layer's parameters, e.g. `dec_G.2`.
    pub name: String,
    pub spec: LayerSpec,
    pub padding: usize,
    pub output_padding: usize,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    weight: Tensor,
    bias: Tensor,
    bn: Option<BnParams>,
}

impl Layer {
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec![format!("{}.weight", self.name), format!("{}.bias", self.name)];
        if self.bn.is_some() {
            for p in ["gamma", "beta", "running_mean", "running_var"] {
                names.push(format!("{}.{p}", self.name));
            }
        }
        names
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    fn forward(&self, x: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        let s = self.spec.stride;
        let h = match self.spec.kind {
            LayerKind::Conv => conv2d(x, &self.weight, s, self.padding)?.add_channel_bias(&self.bias)?,
            LayerKind::ConvTranspose => {
                conv_transpose2d(x, &self.weight, s, self.padding, self.output_padding)?.add_channel_bias(&self.bias)?
            }
            LayerKind::Dense => {
                let flat = if x.ndim() == 2 { x.clone() } else { x.flatten_batch()? };
                flat.matmul(&self.weight)?.add_channel_bias(&self.bias)?
            }
        };
        let h = match self.spec.activation {
            Activation::LeakyRelu => h.leaky_relu(LEAKY_SLOPE),
            Activation::Relu => h.relu(),
            Activation::Sigmoid => h.sigmoid(),
            Activation::Tanh => h.tanh(),
            Activation::None => h,
        };
        match &self.bn {
            Some(bn) => {
                batch_norm(&h, &bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var, mode, BN_MOMENTUM, BN_EPS)
            }
            None => Ok(h),
        }
    }

    fn rebind(&mut self, store: &ParameterStore) -> Result<()> {
        self.weight = store.get(&format!("{}.weight", self.name))?;
        self.bias = store.get(&format!("{}.bias", self.name))?;
        if let Some(bn) = &mut self.bn {
            bn.gamma = store.get(&format!("{}.gamma", self.name))?;
            bn.beta = store.get(&format!("{}.beta", self.name))?;
            bn.running_mean = store.get(&format!("{}.running_mean", self.name))?;
            bn.running_var = store.get(&format!("{}.running_var", self.name))?;
        }
        Ok(())
    }
}

/// A feed-forward stack with optional channel-concatenation shortcuts.
#[derive(Clone)]
pub struct Network {
    spec: NetworkSpec,
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Network {
    /// Resolves the geometry of every layer, registers its parameters in
    /// `store` and initializes them from streams keyed by `(seed, name)`.
    ///
    /// `input_shape` excludes the batch axis (`[C, H, W]` or `[features]`).
    /// Missing paddings are derived: a convolution gets the smallest padding
    /// whose output is at least `ceil(in / stride)`. A transposed convolution
    /// gets the padding and output padding that reproduce the spatial size
    /// at the input of its mirror encoder layer when the encoder and decoder
    /// have equal depth, and `in * stride` otherwise.
    pub fn build(
        spec: &NetworkSpec,
        input_shape: &[usize],
        store: &mut ParameterStore,
        naming: &Naming,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        let split = spec.split();
        let n_layers = spec.layers.len();
        let mirrored = split > 0 && n_layers == 2 * split;
        let mut in_shapes: Vec<Vec<usize>> = Vec::with_capacity(n_layers);
        let mut layers: Vec<Layer> = Vec::with_capacity(n_layers);

        for (i, ls) in spec.layers.iter().enumerate() {
            let fail = |detail: String| Error::Construction { layer: i, detail };
            let mut in_shape = match layers.last() {
                Some(prev) => prev.out_shape.clone(),
                None => input_shape.to_vec(),
            };
            for link in spec.skip_links.iter().filter(|l| l.to == i) {
                let src = &layers[link.from].out_shape;
                if src.len() != in_shape.len() || src[1..] != in_shape[1..] {
                    return Err(fail(format!(
                        "skip from layer {} has shape {src:?}, incompatible with input {in_shape:?}",
                        link.from
                    )));
                }
                in_shape[0] += src[0];
            }
            let out_c = ls.scaled_out(spec.channel_scale);
            let [kh, kw] = ls.kernel;
            let s = ls.stride;
            let (padding, output_padding, out_shape) = match ls.kind {
                LayerKind::Dense => (0, 0, vec![out_c]),
                LayerKind::Conv => {
                    let &[_, h, w] = in_shape.as_slice() else {
                        return Err(fail(format!("convolution needs [C, H, W] input, got {in_shape:?}")));
                    };
                    let p = ls.padding.unwrap_or_else(|| auto_conv_padding(h, kh, s));
                    let (Some(oh), Some(ow)) = (conv2d_output_size(h, kh, s, p), conv2d_output_size(w, kw, s, p))
                    else {
                        return Err(fail(format!("{kh}x{kw} kernel does not fit {h}x{w} input with padding {p}")));
                    };
                    (p, 0, vec![out_c, oh, ow])
                }
                LayerKind::ConvTranspose => {
                    let &[_, h, w] = in_shape.as_slice() else {
                        return Err(fail(format!("transposed convolution needs [C, H, W] input, got {in_shape:?}")));
                    };
                    let (p, op) = match ls.padding {
                        Some(p) => (p, ls.output_padding.unwrap_or(0)),
                        None => {
                            let target = if mirrored && i >= split { in_shapes[2 * split - 1 - i][1] } else { h * s };
                            solve_transpose_padding(h, kh, s, target).ok_or_else(|| {
                                fail(format!("no padding maps {h} to {target} with kernel {kh}, stride {s}"))
                            })?
                        }
                    };
                    let (Some(oh), Some(ow)) =
                        (conv_transpose2d_output_size(h, kh, s, p, op), conv_transpose2d_output_size(w, kw, s, p, op))
                    else {
                        return Err(fail(format!(
                            "invalid transposed geometry: padding {p}, output padding {op}, stride {s}"
                        )));
                    };
                    (p, op, vec![out_c, oh, ow])
                }
            };

            let name = naming.layer(i, split);
            let in_c = in_shape[0];
            let (w_shape, fan_in) = match ls.kind {
                LayerKind::Conv => (vec![out_c, in_c, kh, kw], in_c * kh * kw),
                LayerKind::ConvTranspose => (vec![in_c, out_c, kh, kw], in_c * kh * kw),
                LayerKind::Dense => {
                    let fan_in: usize = in_shape.iter().product();
                    (vec![fan_in, out_c], fan_in)
                }
            };
            let std = match spec.init {
                Init::Normal { std } => std,
                Init::He => (2.0 / fan_in as f64).sqrt(),
            };
            let weight_name = format!("{name}.weight");
            let weight = store.register(&weight_name, init_normal(&w_shape, std, seed, &weight_name))?;
            let bias = store.register(&format!("{name}.bias"), Tensor::zeros(&[out_c]))?;
            let bn = if ls.batch_norm {
                Some(BnParams {
                    gamma: store.register(&format!("{name}.gamma"), Tensor::ones(&[out_c]))?,
                    beta: store.register(&format!("{name}.beta"), Tensor::zeros(&[out_c]))?,
                    running_mean: store.register_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[out_c]))?,
                    running_var: store.register_buffer(&format!("{name}.running_var"), Tensor::ones(&[out_c]))?,
                })
            } else {
                None
            };
            in_shapes.push(in_shape.clone());
            layers.push(Layer {
                index: i,
                name,
                spec: ls.clone(),
                padding,
                output_padding,
                in_shape,
                out_shape,
                weight,
                bias,
                bn,
            });
        }
        Ok(Self { spec: spec.clone(), input_shape: input_shape.to_vec(), layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers.last().map_or(&self.input_shape, |l| &l.out_shape)
    }

    pub fn split(&self) -> usize {
        self.spec.split()
    }

    /// Shape of the tensor entering the first decoder layer.
    pub fn bottleneck_shape(&self) -> &[usize] {
        match self.split() {
            0 => &self.input_shape,
            k => &self.layers[k - 1].out_shape,
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        self.layers.iter().flat_map(Layer::param_names).collect()
    }

    /// Names of the parameters from the bottleneck split on.
    pub fn decoder_param_names(&self) -> Vec<String> {
        self.layers[self.split()..].iter().flat_map(Layer::param_names).collect()
    }

    /// Re-reads every parameter handle from `store`, picking up aliases
    /// created by [`ParameterStore::share`] after the build.
    pub fn rebind(&mut self, store: &ParameterStore) -> Result<()> {
        self.layers.iter_mut().try_for_each(|l| l.rebind(store))
    }

    pub fn forward(&self, x: &Tensor, mode: BatchNormMode) -> Result<Tensor> {
        Ok(self.forward_with_skips(x, mode)?.0)
    }

    pub fn forward_with_skips(&self, x: &Tensor, mode: BatchNormMode) -> Result<(Tensor, Taps)> {
        if x.shape().get(1..) != Some(self.input_shape.as_slice()) {
            return Err(Error::shape(
                "network",
                format!("input {:?} does not match [N, {:?}]", x.shape(), self.input_shape),
            ));
        }
        let mut outs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            for &SkipLink { from, to } in self.spec.skip_links.iter().filter(|l| l.to == layer.index) {
                h = h
                    .concat_channels(&outs[from])
                    .map_err(|e| Error::contract(format!("skip {from} -> {to} cannot be concatenated: {e}")))?;
            }
            h = layer.forward(&h, mode)?;
            outs.push(h.clone());
        }
        let mut taps = Taps::new();
        let bottleneck = match self.split() {
            0 => x.clone(),
            k => outs[k - 1].clone(),
        };
        taps.insert("bottleneck".into(), bottleneck);
        for (i, t) in outs.into_iter().enumerate() {
            taps.insert(format!("layer{i}"), t);
        }
        Ok((h, taps))
    }
}

/// Convenience wrapper: builds `spec` with a single name prefix.
pub fn build_stack(
    spec: &NetworkSpec,
    input_shape: &[usize],
    store: &mut ParameterStore,
    prefix: &str,
    seed: u64,
) -> Result<Network> {
    Network::build(spec, input_shape, store, &Naming::single(prefix), seed)
}

fn init_normal(shape: &[usize], std: f64, seed: u64, name: &str) -> Tensor {
    let mut rng = named(seed, name);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| std * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

fn auto_conv_padding(input: usize, kernel: usize, stride: usize) -> usize {
    let target = input.div_ceil(stride);
    let needed = stride * (target - 1) + kernel;
    needed.saturating_sub(input).div_ceil(2)
}

/// Padding and output padding taking `input` to `target` under a transposed
/// convolution, with the smallest padding.
fn solve_transpose_padding(input: usize, kernel: usize, stride: usize, target: usize) -> Option<(usize, usize)> {
    // (input - 1) * stride + kernel + op - 2p = target
    let base = ((input - 1) * stride + kernel) as i64 - target as i64;
    let p = if base > 0 { (base + 1) / 2 } else { 0 };
    let op = 2 * p - base;
    (0..stride as i64).contains(&op).then_some((p as usize, op as usize))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_padding_solutions() {
        assert_eq!(solve_transpose_padding(1, 1, 4, 4), Some((0, 3)));
        assert_eq!(solve_transpose_padding(1, 1, 4, 2), Some((0, 1)));
        assert_eq!(solve_transpose_padding(4, 4, 2, 8), Some((1, 0)));
        assert_eq!(solve_transpose_padding(16, 4, 4, 64), Some((0, 0)));
        assert_eq!(solve_transpose_padding(1, 1, 2, 7), None);
    }

    #[test]
    fn conv_padding_targets_ceil() {
        assert_eq!(auto_conv_padding(64, 4, 4), 0);
        assert_eq!(auto_conv_padding(16, 4, 2), 1);
        assert_eq!(auto_conv_padding(2, 4, 4), 1);
        assert_eq!(auto_conv_padding(2, 4, 2), 1);
    }
}
