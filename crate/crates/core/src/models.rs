//! Concrete architectures assembled from the layer engine: a compact
//! two-convolution classifier and a ResNet-18 topology with a width
//! multiplier for desk-scale training. Builders produce a validated layer
//! descriptor list; instantiation turns it into a parameterized network
//! with seeded He-normal initialization.

use crate::nn::{
    BatchNorm2d, Conv2d, Flatten, FullyConnected, GlobalAvgPool, MaxPool2d, Network, NnError,
    Parameter, Relu, ResidualBlock, Scalar, Tensor, Unit,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("spatial dims {h}x{w} must be divisible by 4")]
    Indivisible { h: usize, w: usize },
    #[error("input {h}x{w} below the 32-pixel minimum the stride schedule needs")]
    TooSmall { h: usize, w: usize },
    #[error("width multiplier {0} outside (0, 1]")]
    BadWidthMult(f64),
    #[error("class count {0} below 2")]
    Classes(usize),
    #[error("input channel count must be at least 1")]
    NoChannels,
    #[error("layer {index} ({name}): {reason}")]
    Incompatible {
        index: usize,
        name: String,
        reason: String,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Which classifier to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Convnet,
    Resnet18,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::Convnet => f.write_str("convnet"),
            Arch::Resnet18 => f.write_str("resnet18"),
        }
    }
}

impl FromStr for Arch {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "convnet" => Ok(Arch::Convnet),
            "resnet18" => Ok(Arch::Resnet18),
            other => Err(format!("unknown network {other:?} (expected convnet|resnet18)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv {
        name: String,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    Relu,
    BatchNorm {
        name: String,
        channels: usize,
    },
    MaxPool {
        k: usize,
        stride: usize,
        padding: usize,
    },
    Flatten,
    Fc {
        name: String,
        in_f: usize,
        out_f: usize,
    },
    GlobalAvgPool,
    Residual {
        name: String,
        in_c: usize,
        out_c: usize,
        stride: usize,
    },
}

impl LayerSpec {
    fn projected(&self) -> bool {
        matches!(
            self,
            LayerSpec::Residual { in_c, out_c, stride, .. }
                if stride != &1 || in_c != out_c
        )
    }

    /// Learnable value count contributed by this layer.
    fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                in_c, out_c, k, bias, ..
            } => out_c * in_c * k * k + if bias { out_c } else { 0 },
            LayerSpec::BatchNorm { channels, .. } => 2 * channels,
            LayerSpec::Fc { in_f, out_f, .. } => out_f * in_f + out_f,
            LayerSpec::Residual {
                in_c, out_c, ..
            } => {
                let branch = out_c * in_c * 9 + 2 * out_c + out_c * out_c * 9 + 2 * out_c;
                let proj = if self.projected() {
                    out_c * in_c + 2 * out_c
                } else {
                    0
                };
                branch + proj
            }
            LayerSpec::Relu
            | LayerSpec::MaxPool { .. }
            | LayerSpec::Flatten
            | LayerSpec::GlobalAvgPool => 0,
        }
    }
}

/// Activation shape without the batch dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Chw(usize, usize, usize),
    Flat(usize),
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Chw(c, h, w) => write!(f, "{c}x{h}x{w}"),
            Shape::Flat(n) => write!(f, "{n}"),
        }
    }
}

fn conv_out(h: usize, w: usize, k: usize, s: usize, p: usize) -> Result<(usize, usize), String> {
    if h + 2 * p < k || w + 2 * p < k {
        return Err(format!("{h}x{w} too small for k={k} with padding {p}"));
    }
    Ok(((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1))
}

fn shape_after(spec: &LayerSpec, input: Shape) -> Result<Shape, String> {
    match (spec, input) {
        (
            LayerSpec::Conv {
                in_c,
                out_c,
                k,
                stride,
                padding,
                ..
            },
            Shape::Chw(c, h, w),
        ) => {
            if c != *in_c {
                return Err(format!("expects {in_c} channels, input has {c}"));
            }
            let (oh, ow) = conv_out(h, w, *k, *stride, *padding)?;
            Ok(Shape::Chw(*out_c, oh, ow))
        }
        (LayerSpec::Relu, any) => Ok(any),
        (LayerSpec::BatchNorm { channels, .. }, Shape::Chw(c, h, w)) => {
            if c != *channels {
                return Err(format!("normalizes {channels} channels, input has {c}"));
            }
            Ok(Shape::Chw(c, h, w))
        }
        (
            LayerSpec::MaxPool {
                k,
                stride,
                padding,
            },
            Shape::Chw(c, h, w),
        ) => {
            if *k == 2 && *stride == 2 && *padding == 0 && (h % 2 != 0 || w % 2 != 0) {
                return Err(format!("2x2 stride-2 pooling needs even dims, got {h}x{w}"));
            }
            let (oh, ow) = conv_out(h, w, *k, *stride, *padding)?;
            Ok(Shape::Chw(c, oh, ow))
        }
        (LayerSpec::Flatten, Shape::Chw(c, h, w)) => Ok(Shape::Flat(c * h * w)),
        (LayerSpec::Fc { in_f, out_f, .. }, Shape::Flat(f)) => {
            if f != *in_f {
                return Err(format!("expects {in_f} features, input has {f}"));
            }
            Ok(Shape::Flat(*out_f))
        }
        (LayerSpec::GlobalAvgPool, Shape::Chw(c, _, _)) => Ok(Shape::Flat(c)),
        (
            LayerSpec::Residual {
                in_c,
                out_c,
                stride,
                ..
            },
            Shape::Chw(c, h, w),
        ) => {
            if c != *in_c {
                return Err(format!("expects {in_c} channels, input has {c}"));
            }
            let (oh, ow) = conv_out(h, w, 3, *stride, 1)?;
            Ok(Shape::Chw(*out_c, oh, ow))
        }
        (_, shape) => Err(format!("rank mismatch at input shape {shape}")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub arch: Arch,
    /// Input as (channels, height, width), batch dimension excluded.
    pub input: (usize, usize, usize),
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Recomputes the shape walk, erroring on the first incompatible layer.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut shape = Shape::Chw(self.input.0, self.input.1, self.input.2);
        for (index, layer) in self.layers.iter().enumerate() {
            shape = shape_after(layer, shape).map_err(|reason| ModelError::Incompatible {
                index,
                name: layer_label(layer),
                reason,
            })?;
        }
        match shape {
            Shape::Flat(f) if f == self.classes => Ok(()),
            other => Err(ModelError::Incompatible {
                index: self.layers.len(),
                name: "output".into(),
                reason: format!("final shape {other}, expected {} classes", self.classes),
            }),
        }
    }

    /// Closed-form learnable parameter count from the layer shapes.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// One line per layer with its output shape.
    pub fn describe(&self) -> String {
        let (c, h, w) = self.input;
        let mut out = format!(
            "{} ({c}x{h}x{w} -> {} classes, {} parameters)\n",
            self.arch,
            self.classes,
            self.param_count()
        );
        let mut shape = Shape::Chw(c, h, w);
        for layer in &self.layers {
            shape = shape_after(layer, shape).expect("validated spec");
            out.push_str(&format!("  {:<40} out {shape}\n", layer_label(layer)));
        }
        out
    }

    /// Builds the parameterized network: He-normal conv/fc weights seeded
    /// by `seed`, zero biases, identity batch-norm.
    pub fn instantiate<T: Scalar>(&self, seed: u64) -> Result<Network<T>, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut units = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            units.push(make_unit(layer, &mut rng)?);
        }
        Ok(Network::new(units))
    }
}

fn layer_label(spec: &LayerSpec) -> String {
    match spec {
        LayerSpec::Conv {
            name,
            in_c,
            out_c,
            k,
            stride,
            padding,
            bias,
        } => format!(
            "{name}: Conv {k}x{k} {in_c}->{out_c} s{stride} p{padding}{}",
            if *bias { "" } else { " (no bias)" }
        ),
        LayerSpec::Relu => "ReLU".into(),
        LayerSpec::BatchNorm { name, channels } => format!("{name}: BatchNorm({channels})"),
        LayerSpec::MaxPool {
            k,
            stride,
            padding,
        } => format!("MaxPool {k}x{k} s{stride} p{padding}"),
        LayerSpec::Flatten => "Flatten".into(),
        LayerSpec::Fc { name, in_f, out_f } => format!("{name}: FullyConnected {in_f}->{out_f}"),
        LayerSpec::GlobalAvgPool => "GlobalAvgPool".into(),
        LayerSpec::Residual {
            name,
            in_c,
            out_c,
            stride,
        } => format!(
            "{name}: ResidualBlock {in_c}->{out_c} s{stride}{}",
            if stride != &1 || in_c != out_c {
                " (projected)"
            } else {
                ""
            }
        ),
    }
}

fn he_tensor<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    let data = (0..shape.iter().product::<usize>())
        .map(|_| T::from_f64(dist.sample(rng)))
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

fn make_conv<T: Scalar>(
    name: &str,
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    padding: usize,
    bias: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Conv2d<T>, NnError> {
    let weight = Parameter::new(
        format!("{name}.weight"),
        he_tensor(&[out_c, in_c, k, k], in_c * k * k, rng),
    );
    let bias = bias.then(|| Parameter::new(format!("{name}.bias"), Tensor::zeros(&[out_c])));
    Conv2d::new(weight, bias, stride, padding)
}

fn make_unit<T: Scalar>(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> Result<Unit<T>, ModelError> {
    Ok(match spec {
        LayerSpec::Conv {
            name,
            in_c,
            out_c,
            k,
            stride,
            padding,
            bias,
        } => Unit::Conv(make_conv(name, *in_c, *out_c, *k, *stride, *padding, *bias, rng)?),
        LayerSpec::Relu => Unit::Relu(Relu::new()),
        LayerSpec::BatchNorm { name, channels } => {
            Unit::BatchNorm(BatchNorm2d::new(name.clone(), *channels))
        }
        LayerSpec::MaxPool {
            k,
            stride,
            padding,
        } => Unit::MaxPool(MaxPool2d::new(*k, *stride, *padding)),
        LayerSpec::Flatten => Unit::Flatten(Flatten::new()),
        LayerSpec::Fc { name, in_f, out_f } => Unit::FullyConnected(FullyConnected::new(
            Parameter::new(format!("{name}.weight"), he_tensor(&[*out_f, *in_f], *in_f, rng)),
            Parameter::new(format!("{name}.bias"), Tensor::zeros(&[*out_f])),
        )?),
        LayerSpec::GlobalAvgPool => Unit::GlobalAvgPool(GlobalAvgPool::new()),
        LayerSpec::Residual {
            name,
            in_c,
            out_c,
            stride,
        } => {
            let conv1 = make_conv(&format!("{name}.conv1"), *in_c, *out_c, 3, *stride, 1, false, rng)?;
            let bn1 = BatchNorm2d::new(format!("{name}.bn1"), *out_c);
            let conv2 = make_conv(&format!("{name}.conv2"), *out_c, *out_c, 3, 1, 1, false, rng)?;
            let bn2 = BatchNorm2d::new(format!("{name}.bn2"), *out_c);
            let projection = if spec.projected() {
                Some((
                    make_conv(&format!("{name}.proj"), *in_c, *out_c, 1, *stride, 0, false, rng)?,
                    BatchNorm2d::new(format!("{name}.proj_bn"), *out_c),
                ))
            } else {
                None
            };
            Unit::Residual(ResidualBlock::new(conv1, bn1, conv2, bn2, projection))
        }
    })
}

/// The two-convolution classifier: 5x5/32 conv, ReLU, batch norm, 2x2 max
/// pool, 3x3/64 conv, ReLU, batch norm, 2x2 max pool, then a 1024-unit
/// fully connected layer and the class head. Spatial dims must be divisible
/// by 4 so both pools see even inputs.
pub fn build_deep_convnet(
    input: (usize, usize, usize),
    classes: usize,
) -> Result<NetworkSpec, ModelError> {
    let (c, h, w) = input;
    if c < 1 {
        return Err(ModelError::NoChannels);
    }
    if classes < 2 {
        return Err(ModelError::Classes(classes));
    }
    if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
        return Err(ModelError::Indivisible { h, w });
    }
    let fc_in = 64 * (h / 4) * (w / 4);
    let layers = vec![
        LayerSpec::Conv {
            name: "conv1".into(),
            in_c: c,
            out_c: 32,
            k: 5,
            stride: 1,
            padding: 2,
            bias: true,
        },
        LayerSpec::Relu,
        LayerSpec::BatchNorm {
            name: "bn1".into(),
            channels: 32,
        },
        LayerSpec::MaxPool {
            k: 2,
            stride: 2,
            padding: 0,
        },
        LayerSpec::Conv {
            name: "conv2".into(),
            in_c: 32,
            out_c: 64,
            k: 3,
            stride: 1,
            padding: 1,
            bias: true,
        },
        LayerSpec::Relu,
        LayerSpec::BatchNorm {
            name: "bn2".into(),
            channels: 64,
        },
        LayerSpec::MaxPool {
            k: 2,
            stride: 2,
            padding: 0,
        },
        LayerSpec::Flatten,
        LayerSpec::Fc {
            name: "fc1".into(),
            in_f: fc_in,
            out_f: 1024,
        },
        LayerSpec::Relu,
        LayerSpec::Fc {
            name: "fc2".into(),
            in_f: 1024,
            out_f: classes,
        },
    ];
    let spec = NetworkSpec {
        arch: Arch::Convnet,
        input,
        classes,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// ResNet-18 topology: a 7x7 stride-2 stem, 3x3 stride-2 max pool, four
/// stages of two residual blocks at widths (64, 128, 256, 512) scaled by
/// `width_mult`, global average pooling, and the class head. The first
/// block of stages 2-4 downsamples through a stride-2 projection shortcut.
pub fn build_resnet18(
    input: (usize, usize, usize),
    classes: usize,
    width_mult: f64,
) -> Result<NetworkSpec, ModelError> {
    let (c, h, w) = input;
    if c < 1 {
        return Err(ModelError::NoChannels);
    }
    if classes < 2 {
        return Err(ModelError::Classes(classes));
    }
    if h < 32 || w < 32 {
        return Err(ModelError::TooSmall { h, w });
    }
    if !(width_mult > 0.0 && width_mult <= 1.0) {
        return Err(ModelError::BadWidthMult(width_mult));
    }
    let scale = |base: usize| ((base as f64 * width_mult).round() as usize).max(1);
    let widths = [scale(64), scale(128), scale(256), scale(512)];

    let mut layers = vec![
        LayerSpec::Conv {
            name: "stem".into(),
            in_c: c,
            out_c: widths[0],
            k: 7,
            stride: 2,
            padding: 3,
            bias: false,
        },
        LayerSpec::BatchNorm {
            name: "stem_bn".into(),
            channels: widths[0],
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool {
            k: 3,
            stride: 2,
            padding: 1,
        },
    ];
    let mut in_c = widths[0];
    for (stage, &out_c) in widths.iter().enumerate() {
        for block in 0..2 {
            let stride = if stage > 0 && block == 0 { 2 } else { 1 };
            layers.push(LayerSpec::Residual {
                name: format!("s{}b{}", stage + 1, block + 1),
                in_c,
                out_c,
                stride,
            });
            in_c = out_c;
        }
    }
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Fc {
        name: "fc".into(),
        in_f: widths[3],
        out_f: classes,
    });

    let spec = NetworkSpec {
        arch: Arch::Resnet18,
        input,
        classes,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// Argmax per row; ties resolve to the lower class index.
pub fn predict<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<usize>, NnError> {
    let (n, k) = logits.dims2()?;
    let mut out = Vec::with_capacity(n);
    for row in 0..n {
        let r = &logits.data()[row * k..(row + 1) * k];
        let mut best = 0usize;
        for (j, &v) in r.iter().enumerate() {
            if v > r[best] {
                best = j;
            }
        }
        out.push(best);
    }
    Ok(out)
}
