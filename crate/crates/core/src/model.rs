//! Model assembly: the baseline capsule network, the QCN variant (FC primary
//! capsules), and QCN+ (deconvolution decoder with class-independent
//! masking), plus classification and exact parameter counting.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::distributions::Uniform;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::capsule::{
    conv_primary_caps, dynamic_routing, fc_primary_caps, RoutingState,
    DEFAULT_ROUTING_ITERATIONS,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::loss::{margin_loss, reconstruction_loss, MarginLossParams};
use crate::tensor::Tensor;

/// First feature extractor: 256 channels of 9x9, stride 1, as in the
/// baseline lineage.
pub const CONV1_CHANNELS: usize = 256;
pub const CONV1_KERNEL: usize = 9;
/// Primary-capsule conv stage (baseline): 9x9 kernels, stride 2.
pub const PRIMARY_KERNEL: usize = 9;
pub const PRIMARY_STRIDE: usize = 2;
/// FC decoder hidden widths.
pub const FC_DECODER_HIDDEN: (usize, usize) = (512, 1024);
/// Deconv decoder: seed channels and the three upsampling stage widths.
pub const DECONV_SEED_CHANNELS: usize = 64;
pub const DECONV_STAGE_CHANNELS: [usize; 3] = [256, 128, 96];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    Qcn,
    QcnPlus,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Qcn => "qcn",
            Variant::QcnPlus => "qcn_plus",
        }
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "qcn" => Ok(Variant::Qcn),
            "qcn_plus" | "qcn+" => Ok(Variant::QcnPlus),
            other => Err(Error::config(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    Fc,
    Deconv,
}

/// Full architectural description; every network and every parameter count
/// derives from this.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// (channels, height, width)
    pub input_shape: (usize, usize, usize),
    pub num_classes: usize,
    /// Primary-capsule count for qcn / qcn_plus.
    pub pc_count: usize,
    /// Capsule-type count for the baseline conv stage.
    pub pc_types: usize,
    pub primary_dim: usize,
    pub digit_dim: usize,
    pub routing_iterations: usize,
    pub decoder: DecoderKind,
    pub recon_weight: f32,
    /// Std-dev of the Gaussian init for the prediction-transform bank.
    pub w_init_sigma: f32,
    pub seed: u64,
}

impl ModelConfig {
    pub fn baseline(input_shape: (usize, usize, usize), num_classes: usize) -> Self {
        ModelConfig {
            variant: Variant::Baseline,
            input_shape,
            num_classes,
            pc_count: 0,
            pc_types: 32,
            primary_dim: 8,
            digit_dim: 16,
            routing_iterations: DEFAULT_ROUTING_ITERATIONS,
            decoder: DecoderKind::Fc,
            recon_weight: 0.0005,
            w_init_sigma: 0.05,
            seed: 0,
        }
    }

    pub fn qcn(input_shape: (usize, usize, usize), num_classes: usize, pc_count: usize) -> Self {
        ModelConfig {
            variant: Variant::Qcn,
            pc_count,
            pc_types: 0,
            ..ModelConfig::baseline(input_shape, num_classes)
        }
    }

    pub fn qcn_plus(input_shape: (usize, usize, usize), num_classes: usize, pc_count: usize) -> Self {
        ModelConfig {
            variant: Variant::QcnPlus,
            decoder: DecoderKind::Deconv,
            pc_count,
            pc_types: 0,
            ..ModelConfig::baseline(input_shape, num_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, h, w) = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::config(format!("degenerate input shape {:?}", self.input_shape)));
        }
        if h < 18 || w < 18 {
            return Err(Error::config(format!(
                "unsupported input geometry {h}x{w}: extents below 18 cannot pass the capsule stages"
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if self.routing_iterations == 0 {
            return Err(Error::config("routing_iterations must be >= 1"));
        }
        match self.variant {
            Variant::Baseline => {
                if self.pc_types == 0 {
                    return Err(Error::config("baseline requires pc_types >= 1"));
                }
                if self.decoder != DecoderKind::Fc {
                    return Err(Error::config("baseline uses the fc decoder"));
                }
            }
            Variant::Qcn => {
                if !(1..=64).contains(&self.pc_count) {
                    return Err(Error::config("qcn requires pc_count in 1..=64"));
                }
                if self.decoder != DecoderKind::Fc {
                    return Err(Error::config("qcn uses the fc decoder"));
                }
            }
            Variant::QcnPlus => {
                if !(1..=64).contains(&self.pc_count) {
                    return Err(Error::config("qcn_plus requires pc_count in 1..=64"));
                }
                if self.decoder != DecoderKind::Deconv {
                    return Err(Error::config("qcn_plus uses the deconv decoder"));
                }
                deconv_seed_geometry(self.input_shape)?;
            }
        }
        if self.recon_weight < 0.0 {
            return Err(Error::config("recon_weight must be nonnegative"));
        }
        Ok(())
    }

    /// Number of primary capsules this configuration produces.
    pub fn primary_capsules(&self) -> usize {
        match self.variant {
            Variant::Baseline => {
                let (_, h, w) = self.input_shape;
                let h1 = h - (CONV1_KERNEL - 1);
                let w1 = w - (CONV1_KERNEL - 1);
                let h2 = (h1 - PRIMARY_KERNEL) / PRIMARY_STRIDE + 1;
                let w2 = (w1 - PRIMARY_KERNEL) / PRIMARY_STRIDE + 1;
                self.pc_types * h2 * w2
            }
            Variant::Qcn | Variant::QcnPlus => self.pc_count,
        }
    }
}

/// Seed spatial extent and final-conv kernel for the deconv decoder. Only
/// the shapes the experiments use are supported.
fn deconv_seed_geometry(out_shape: (usize, usize, usize)) -> Result<(usize, usize)> {
    match out_shape {
        (1, 28, 28) => Ok((4, 5)),
        (3, 32, 32) => Ok((4, 1)),
        (1, 40, 40) => Ok((5, 1)),
        other => Err(Error::config(format!(
            "deconv decoder does not support output shape {other:?}"
        ))),
    }
}

/// Named, trainable tensor. The registry is sorted by name, which fixes the
/// checkpoint record order.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor<f32>,
}

#[derive(Debug, Clone, Copy)]
enum DecoderLayout {
    Fc {
        w1: usize,
        b1: usize,
        w2: usize,
        b2: usize,
        w3: usize,
        b3: usize,
    },
    Deconv {
        seed_w: usize,
        seed_b: usize,
        ups: [(usize, usize); 3],
        out_w: usize,
        out_b: usize,
        seed_hw: usize,
    },
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    conv1_w: usize,
    conv1_b: usize,
    primary_w: usize,
    primary_b: usize,
    digit_w: usize,
    decoder: DecoderLayout,
}

/// A built network: configuration plus its parameter registry.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Param>,
    layout: Layout,
}

/// Which capsule the decoder sees.
#[derive(Debug, Clone, Copy)]
pub enum MaskSelect<'a> {
    /// Ground-truth class per sample (training).
    Labels(&'a [usize]),
    /// The capsule with the largest activity (evaluation).
    Largest,
}

/// Handles produced by one forward pass.
#[derive(Debug)]
pub struct ForwardPass {
    pub images: Var,
    pub digit_caps: Var,
    pub lengths: Var,
    pub reconstruction: Var,
    pub routing: RoutingState,
    /// Aligned with [`Model::params`].
    pub param_vars: Vec<Var>,
    /// The mask indices actually applied.
    pub targets: Vec<usize>,
}

struct ParamBuilder {
    params: Vec<Param>,
    rng: ChaCha8Rng,
    sigma: f32,
}

impl ParamBuilder {
    fn new(seed: u64, sigma: f32) -> Self {
        ParamBuilder { params: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed), sigma }
    }

    fn push(&mut self, name: &str, value: Tensor<f32>) {
        self.params.push(Param { name: name.to_string(), value });
    }

    /// Uniform Glorot over the given fan pair.
    fn glorot(&mut self, name: &str, shape: &[usize], fan_in: usize, fan_out: usize) {
        let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
        let n: usize = shape.iter().product();
        let dist = Uniform::new(-limit, limit);
        let data: Vec<f32> = (&mut self.rng).sample_iter(dist).take(n).collect();
        self.push(name, Tensor::from_vec(shape, data).expect("shape/data"));
    }

    fn gaussian(&mut self, name: &str, shape: &[usize]) {
        let dist = Normal::new(0.0f32, self.sigma).expect("sigma > 0");
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (&mut self.rng).sample_iter(dist).take(n).collect();
        self.push(name, Tensor::from_vec(shape, data).expect("shape/data"));
    }

    fn zeros(&mut self, name: &str, shape: &[usize]) {
        self.push(name, Tensor::zeros(shape));
    }
}

/// Builds a network from its configuration. Parameter names are unique and
/// stable across runs; the registry is sorted by name.
pub fn build(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let (in_c, h, w) = config.input_shape;
    let h1 = h - (CONV1_KERNEL - 1);
    let w1 = w - (CONV1_KERNEL - 1);

    let mut b = ParamBuilder::new(config.seed, config.w_init_sigma);

    b.glorot(
        "conv1.weight",
        &[CONV1_CHANNELS, in_c, CONV1_KERNEL, CONV1_KERNEL],
        in_c * CONV1_KERNEL * CONV1_KERNEL,
        CONV1_CHANNELS * CONV1_KERNEL * CONV1_KERNEL,
    );
    b.zeros("conv1.bias", &[CONV1_CHANNELS]);

    match config.variant {
        Variant::Baseline => {
            let out_c = config.primary_dim * config.pc_types;
            b.glorot(
                "primary_conv.weight",
                &[out_c, CONV1_CHANNELS, PRIMARY_KERNEL, PRIMARY_KERNEL],
                CONV1_CHANNELS * PRIMARY_KERNEL * PRIMARY_KERNEL,
                out_c * PRIMARY_KERNEL * PRIMARY_KERNEL,
            );
            b.zeros("primary_conv.bias", &[out_c]);
        }
        Variant::Qcn | Variant::QcnPlus => {
            let flat = CONV1_CHANNELS * h1 * w1;
            let out = config.primary_dim * config.pc_count;
            b.glorot("primary_fc.weight", &[flat, out], flat, out);
            b.zeros("primary_fc.bias", &[out]);
        }
    }

    let num_primary = config.primary_capsules();
    b.gaussian(
        "digit.transform",
        &[num_primary, config.num_classes, config.primary_dim, config.digit_dim],
    );

    match config.decoder {
        DecoderKind::Fc => {
            let masked = config.num_classes * config.digit_dim;
            let (h1d, h2d) = FC_DECODER_HIDDEN;
            let pixels = in_c * h * w;
            b.glorot("decoder.fc1.weight", &[masked, h1d], masked, h1d);
            b.zeros("decoder.fc1.bias", &[h1d]);
            b.glorot("decoder.fc2.weight", &[h1d, h2d], h1d, h2d);
            b.zeros("decoder.fc2.bias", &[h2d]);
            b.glorot("decoder.fc3.weight", &[h2d, pixels], h2d, pixels);
            b.zeros("decoder.fc3.bias", &[pixels]);
        }
        DecoderKind::Deconv => {
            let (seed_hw, final_k) = deconv_seed_geometry(config.input_shape)?;
            let seed_out = DECONV_SEED_CHANNELS * seed_hw * seed_hw;
            b.glorot(
                "decoder.seed.weight",
                &[config.digit_dim, seed_out],
                config.digit_dim,
                seed_out,
            );
            b.zeros("decoder.seed.bias", &[seed_out]);
            let mut ch = DECONV_SEED_CHANNELS;
            for (i, &out_ch) in DECONV_STAGE_CHANNELS.iter().enumerate() {
                b.glorot(
                    &format!("decoder.up{}.weight", i + 1),
                    &[ch, out_ch, 2, 2],
                    ch * 4,
                    out_ch * 4,
                );
                b.zeros(&format!("decoder.up{}.bias", i + 1), &[out_ch]);
                ch = out_ch;
            }
            b.glorot(
                "decoder.out.weight",
                &[in_c, ch, final_k, final_k],
                ch * final_k * final_k,
                in_c * final_k * final_k,
            );
            b.zeros("decoder.out.bias", &[in_c]);
        }
    }

    let mut params = b.params;
    params.sort_by(|a, b| a.name.cmp(&b.name));
    for pair in params.windows(2) {
        debug_assert_ne!(pair[0].name, pair[1].name, "parameter names must be unique");
    }

    let idx = |name: &str| -> usize {
        params
            .binary_search_by(|p| p.name.as_str().cmp(name))
            .unwrap_or_else(|_| panic!("missing parameter {name}"))
    };

    let decoder = match config.decoder {
        DecoderKind::Fc => DecoderLayout::Fc {
            w1: idx("decoder.fc1.weight"),
            b1: idx("decoder.fc1.bias"),
            w2: idx("decoder.fc2.weight"),
            b2: idx("decoder.fc2.bias"),
            w3: idx("decoder.fc3.weight"),
            b3: idx("decoder.fc3.bias"),
        },
        DecoderKind::Deconv => {
            let (seed_hw, _) = deconv_seed_geometry(config.input_shape)?;
            DecoderLayout::Deconv {
                seed_w: idx("decoder.seed.weight"),
                seed_b: idx("decoder.seed.bias"),
                ups: [
                    (idx("decoder.up1.weight"), idx("decoder.up1.bias")),
                    (idx("decoder.up2.weight"), idx("decoder.up2.bias")),
                    (idx("decoder.up3.weight"), idx("decoder.up3.bias")),
                ],
                out_w: idx("decoder.out.weight"),
                out_b: idx("decoder.out.bias"),
                seed_hw,
            }
        }
    };

    let layout = Layout {
        conv1_w: idx("conv1.weight"),
        conv1_b: idx("conv1.bias"),
        primary_w: match config.variant {
            Variant::Baseline => idx("primary_conv.weight"),
            _ => idx("primary_fc.weight"),
        },
        primary_b: match config.variant {
            Variant::Baseline => idx("primary_conv.bias"),
            _ => idx("primary_fc.bias"),
        },
        digit_w: idx("digit.transform"),
        decoder,
    };

    Ok(Model { config: config.clone(), params, layout })
}

/// Exact count of trainable elements.
pub fn count_parameters(model: &Model) -> usize {
    model.params.iter().map(|p| p.value.numel()).sum()
}

/// Argmax of capsule lengths per sample; ties break to the lowest index.
pub fn classify(digit_caps: &Tensor<f32>) -> Vec<usize> {
    let shape = digit_caps.shape();
    assert_eq!(shape.len(), 3, "expected [b,k,d] capsules");
    let (b, k, d) = (shape[0], shape[1], shape[2]);
    let mut out = Vec::with_capacity(b);
    for bi in 0..b {
        let mut best = 0usize;
        let mut best_norm = f32::NEG_INFINITY;
        for ki in 0..k {
            let row = &digit_caps.data()[(bi * k + ki) * d..(bi * k + ki + 1) * d];
            let norm_sq: f32 = row.iter().map(|v| v * v).sum();
            if norm_sq > best_norm {
                best_norm = norm_sq;
                best = ki;
            }
        }
        out.push(best);
    }
    out
}

/// Argmax over a precomputed [b,k] length matrix.
pub fn classify_lengths(lengths: &Tensor<f32>) -> Vec<usize> {
    let shape = lengths.shape();
    assert_eq!(shape.len(), 2, "expected [b,k] lengths");
    let (b, k) = (shape[0], shape[1]);
    let mut out = Vec::with_capacity(b);
    for row in lengths.data().chunks_exact(k) {
        let mut best = 0usize;
        let mut best_len = f32::NEG_INFINITY;
        for (ki, &v) in row.iter().enumerate() {
            if v > best_len {
                best_len = v;
                best = ki;
            }
        }
        let _ = b;
        out.push(best);
    }
    out
}

/// FC decoder parameter handles.
pub struct FcDecoderVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub w3: Var,
    pub b3: Var,
}

/// 160 -> 512 (relu) -> 1024 (relu) -> pixels (sigmoid).
pub fn fc_decoder(g: &mut Graph<f32>, masked: Var, vars: &FcDecoderVars) -> Result<Var> {
    let h1 = g.fully_connected(masked, vars.w1, vars.b1)?;
    let h1 = g.relu(h1);
    let h2 = g.fully_connected(h1, vars.w2, vars.b2)?;
    let h2 = g.relu(h2);
    let out = g.fully_connected(h2, vars.w3, vars.b3)?;
    Ok(g.sigmoid(out))
}

/// Deconv decoder parameter handles.
pub struct DeconvDecoderVars {
    pub seed_w: Var,
    pub seed_b: Var,
    pub ups: [(Var, Var); 3],
    pub out_w: Var,
    pub out_b: Var,
    pub seed_hw: usize,
}

/// 16 -> seed grid (relu) -> three stride-2 deconvolutions (relu) -> final
/// conv (sigmoid), reconstructing the full image.
pub fn deconv_decoder(g: &mut Graph<f32>, masked: Var, vars: &DeconvDecoderVars) -> Result<Var> {
    let batch = g.value(masked).shape()[0];
    let seeded = g.fully_connected(masked, vars.seed_w, vars.seed_b)?;
    let seeded = g.relu(seeded);
    let mut x = g.reshape(seeded, &[batch, DECONV_SEED_CHANNELS, vars.seed_hw, vars.seed_hw])?;
    for &(w, bias) in &vars.ups {
        let up = g.deconv2d(x, w, bias, 2)?;
        x = g.relu(up);
    }
    let out = g.conv2d(x, vars.out_w, vars.out_b, 1)?;
    Ok(g.sigmoid(out))
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Registry in name order.
    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    /// Trainable elements in the decoder alone.
    pub fn decoder_parameter_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with("decoder."))
            .map(|p| p.value.numel())
            .sum()
    }

    /// Replaces the registry values with loaded ones; names and shapes must
    /// match exactly.
    pub fn load_params(&mut self, loaded: &[(String, Tensor<f32>)]) -> Result<()> {
        if loaded.len() != self.params.len() {
            return Err(Error::format(format!(
                "checkpoint has {} parameters, model expects {}",
                loaded.len(),
                self.params.len()
            )));
        }
        for (param, (name, value)) in self.params.iter_mut().zip(loaded) {
            if &param.name != name {
                return Err(Error::format(format!(
                    "checkpoint parameter '{name}' does not match model parameter '{}'",
                    param.name
                )));
            }
            if param.value.shape() != value.shape() {
                return Err(Error::format(format!(
                    "parameter '{name}': checkpoint shape {:?} vs model shape {:?}",
                    value.shape(),
                    param.value.shape()
                )));
            }
            param.value = value.clone();
        }
        Ok(())
    }

    /// One forward pass over a batch of images [b,c,h,w].
    pub fn forward(
        &self,
        g: &mut Graph<f32>,
        images: &Tensor<f32>,
        mask: MaskSelect<'_>,
    ) -> Result<ForwardPass> {
        let (c, h, w) = self.config.input_shape;
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != c || shape[2] != h || shape[3] != w {
            return Err(Error::shape(
                "forward",
                format!("images {shape:?} do not match configured input {:?}", self.config.input_shape),
            ));
        }
        let batch = shape[0];

        let image_var = g.leaf(images.clone(), false);
        let param_vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), true))
            .collect();
        let pv = |i: usize| param_vars[i];

        let conv1 = g.conv2d(image_var, pv(self.layout.conv1_w), pv(self.layout.conv1_b), 1)?;
        let features = g.relu(conv1);

        let primary = match self.config.variant {
            Variant::Baseline => conv_primary_caps(
                g,
                features,
                pv(self.layout.primary_w),
                pv(self.layout.primary_b),
                self.config.pc_types,
            )?,
            Variant::Qcn | Variant::QcnPlus => fc_primary_caps(
                g,
                features,
                pv(self.layout.primary_w),
                pv(self.layout.primary_b),
                self.config.pc_count,
            )?,
        };

        let predictions = g.caps_predict(primary, pv(self.layout.digit_w))?;
        let (digit_caps, routing) = dynamic_routing(g, predictions, self.config.routing_iterations)?;
        let lengths = g.l2_norm(digit_caps, 2)?;

        let targets: Vec<usize> = match mask {
            MaskSelect::Labels(labels) => {
                if labels.len() != batch {
                    return Err(Error::contract(
                        "forward",
                        format!("{} labels for batch of {batch}", labels.len()),
                    ));
                }
                labels.to_vec()
            }
            MaskSelect::Largest => classify_lengths(g.value(lengths)),
        };

        let reconstruction = match self.layout.decoder {
            DecoderLayout::Fc { w1, b1, w2, b2, w3, b3 } => {
                let masked = g.mask_class_dependent(digit_caps, &targets)?;
                let vars = FcDecoderVars {
                    w1: pv(w1),
                    b1: pv(b1),
                    w2: pv(w2),
                    b2: pv(b2),
                    w3: pv(w3),
                    b3: pv(b3),
                };
                fc_decoder(g, masked, &vars)?
            }
            DecoderLayout::Deconv { seed_w, seed_b, ups, out_w, out_b, seed_hw } => {
                let masked = g.mask_class_independent(digit_caps, &targets)?;
                let vars = DeconvDecoderVars {
                    seed_w: pv(seed_w),
                    seed_b: pv(seed_b),
                    ups: [
                        (pv(ups[0].0), pv(ups[0].1)),
                        (pv(ups[1].0), pv(ups[1].1)),
                        (pv(ups[2].0), pv(ups[2].1)),
                    ],
                    out_w: pv(out_w),
                    out_b: pv(out_b),
                    seed_hw,
                };
                deconv_decoder(g, masked, &vars)?
            }
        };

        Ok(ForwardPass {
            images: image_var,
            digit_caps,
            lengths,
            reconstruction,
            routing,
            param_vars,
            targets,
        })
    }

    /// margin loss + weighted reconstruction loss for one forward pass.
    pub fn loss(
        &self,
        g: &mut Graph<f32>,
        fwd: &ForwardPass,
        labels_one_hot: &Tensor<f32>,
        margin: &MarginLossParams,
    ) -> Result<Var> {
        let m = margin_loss(g, fwd.lengths, labels_one_hot, margin)?;
        let recon_shape = g.value(fwd.reconstruction).shape().to_vec();
        let target = if recon_shape.len() == 2 {
            let b = recon_shape[0];
            let px = recon_shape[1];
            g.reshape(fwd.images, &[b, px])?
        } else {
            fwd.images
        };
        let r = reconstruction_loss(g, fwd.reconstruction, target, self.config.recon_weight)?;
        g.add(m, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn baseline_mnist_has_1152_primary_capsules() {
        let cfg = ModelConfig::baseline((1, 28, 28), 10);
        assert_eq!(cfg.primary_capsules(), 1152);
    }

    #[test]
    fn baseline_cifar_grid_is_8x8() {
        let cfg = ModelConfig::baseline((3, 32, 32), 10);
        assert_eq!(cfg.primary_capsules(), 2048);
        let one_type = ModelConfig { pc_types: 1, ..cfg };
        assert_eq!(one_type.primary_capsules(), 64);
    }

    #[test]
    fn mnist_single_type_gives_36() {
        let cfg = ModelConfig { pc_types: 1, ..ModelConfig::baseline((1, 28, 28), 10) };
        assert_eq!(cfg.primary_capsules(), 36);
    }

    #[test]
    fn paper_parameter_counts_match_exactly() {
        // Baseline totals from the published tables.
        let cases: &[(ModelConfig, usize)] = &[
            (ModelConfig::baseline((1, 28, 28), 10), 8_215_568),
            (ModelConfig::baseline((3, 32, 32), 10), 11_749_120),
            (ModelConfig::qcn((1, 28, 28), 10, 4), 4_714_288),
            (ModelConfig::qcn((1, 28, 28), 10, 6), 6_355_264),
            (ModelConfig::qcn((1, 28, 28), 10, 8), 7_996_240),
            (ModelConfig::qcn((3, 32, 32), 10, 4), 8_542_752),
        ];
        for (cfg, want) in cases {
            let model = build(cfg).unwrap();
            assert_eq!(count_parameters(&model), *want, "{:?}", cfg.variant);
        }
    }

    #[test]
    fn pc_type_sweep_counts_match_table() {
        let want = [
            (1usize, 4_066_824usize),
            (4, 4_810_272),
            (8, 5_801_536),
            (16, 7_784_064),
            (32, 11_749_120),
        ];
        for (types, count) in want {
            let cfg = ModelConfig { pc_types: types, ..ModelConfig::baseline((3, 32, 32), 10) };
            let model = build(&cfg).unwrap();
            assert_eq!(count_parameters(&model), count, "types={types}");
        }
    }

    #[test]
    fn deconv_decoder_budgets_within_15_percent() {
        let mnist = build(&ModelConfig::qcn_plus((1, 28, 28), 10, 4)).unwrap();
        let got = mnist.decoder_parameter_count() as f64;
        assert!((got - 287_056.0).abs() / 287_056.0 <= 0.15, "mnist decoder {got}");

        let cifar = build(&ModelConfig::qcn_plus((3, 32, 32), 10, 4)).unwrap();
        let got = cifar.decoder_parameter_count() as f64;
        assert!((got - 303_792.0).abs() / 303_792.0 <= 0.15, "cifar decoder {got}");
    }

    #[test]
    fn small_geometry_rejected() {
        let cfg = ModelConfig::qcn((1, 10, 10), 2, 2);
        let err = build(&cfg).unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err:?}");
    }

    #[test]
    fn classify_rules() {
        let lens = Tensor::from_vec(&[1, 3], vec![0.1f32, 0.9, 0.2]).unwrap();
        assert_eq!(classify_lengths(&lens), vec![1]);

        // Scaling all capsules preserves the argmax.
        let caps = Tensor::from_vec(&[1, 2, 2], vec![0.1f32, 0.2, 0.3, 0.1]).unwrap();
        let scaled = Tensor::from_vec(&[1, 2, 2], vec![0.3f32, 0.6, 0.9, 0.3]).unwrap();
        assert_eq!(classify(&caps), classify(&scaled));

        // Exact tie resolves to the lowest index.
        let tie = Tensor::from_vec(
            &[1, 6, 1],
            vec![0.0f32, 0.0, 0.5, 0.0, 0.0, 0.5],
        )
        .unwrap();
        assert_eq!(classify(&tie), vec![2]);
    }
}
