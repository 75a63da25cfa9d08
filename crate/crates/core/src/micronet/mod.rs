//! MicroBotNet: a sub-million-MAC CIFAR-scale classifier built from
//! squeeze-and-excite inverted bottlenecks with hard activations.
//!
//! [`build_microbotnet`] produces a [`NetworkSpec`] for a width multiplier,
//! [`count_macs`] does integer MAC/parameter accounting under a selectable
//! counting convention, and [`forward`] runs inference from a [`WeightBundle`].

mod forward;
mod macs;
mod weights;

pub use forward::{forward, forward_batch, forward_trace, softmax, FeatureMap};
pub use macs::{count_macs, layer_ops, MacConvention, MacReport, MacRow, Op};
pub use weights::{enumerate_tensors, load_weights, save_weights, Tensor, WeightBundle};

use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MicronetError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("layer {layer}: {reason}")]
    Structure { layer: String, reason: String },
    #[error("tensor #{index}: expected {expected}, found {found}")]
    TensorMismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("weight blob truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("weight manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// `min(max(x + 3, 0), 6) / 6`
#[inline]
pub fn h_sigmoid(x: f64) -> f64 {
    (x + 3.0).clamp(0.0, 6.0) / 6.0
}

/// `x * h_sigmoid(x)`
#[inline]
pub fn h_swish(x: f64) -> f64 {
    x * h_sigmoid(x)
}

pub fn hard_activations(x: f64) -> (f64, f64) {
    (h_sigmoid(x), h_swish(x))
}

/// Rounds a scaled channel count to a multiple of `divisor`: nearest multiple,
/// never below `divisor`, bumped up one step if rounding lost more than 10%.
pub fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut n = (((v + d / 2.0) / d).floor() * d).max(d);
    if n < 0.9 * v {
        n += d;
    }
    n as usize
}

/// Feature-map shape, height x width x channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(into = "[usize; 3]")]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl From<Shape> for [usize; 3] {
    fn from(s: Shape) -> Self {
        [s.h, s.w, s.c]
    }
}

impl Shape {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    pub fn numel(&self) -> usize {
        self.h * self.w * self.c
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
    HSwish,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::None => x,
            Activation::Relu => x.max(0.0),
            Activation::HSwish => x * (x + 3.0).clamp(0.0, 6.0) / 6.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    /// Dense k x k convolution + batch norm + activation.
    Conv,
    /// Inverted residual: 1x1 expand, k x k depthwise, optional SE, 1x1 project.
    Bneck,
    /// Average pooling.
    Pool,
    /// 1x1 convolution, optional batch norm.
    PointwiseConv,
    /// 1x1 convolution with bias over a 1x1 map, i.e. fully connected logits.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub kernel: usize,
    /// Expanded width (bneck only, otherwise 0).
    pub exp_size: usize,
    pub out_channels: usize,
    pub use_se: bool,
    /// SE bottleneck width (0 without SE).
    pub se_channels: usize,
    pub stride: usize,
    pub in_shape: Shape,
    pub batch_norm: bool,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn out_shape(&self) -> Shape {
        let (h, w) = (self.in_shape.h / self.stride, self.in_shape.w / self.stride);
        match self.kind {
            LayerKind::Pool => Shape::new(
                self.in_shape.h / self.kernel,
                self.in_shape.w / self.kernel,
                self.in_shape.c,
            ),
            _ => Shape::new(h, w, self.out_channels),
        }
    }

    /// Inverted-residual skip applies.
    pub fn residual(&self) -> bool {
        self.kind == LayerKind::Bneck && self.stride == 1 && self.in_shape.c == self.out_channels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkSpec {
    pub alpha: f64,
    pub classes: usize,
    pub divisor: usize,
    pub layers: Vec<LayerSpec>,
}

/// Architecture knobs that the published table leaves ambiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    pub divisor: usize,
    /// Attach an SE block to the 1x1 conv that widens to 576 channels.
    /// Off by default: with it the counts no longer match the published totals.
    pub se_on_last_conv: bool,
    pub input: Shape,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            divisor: 8,
            se_on_last_conv: false,
            input: Shape::new(32, 32, 3),
        }
    }
}

// kernel, expansion, out, SE, stride
const BNECKS: [(usize, usize, usize, bool, usize); 10] = [
    (3, 72, 24, false, 2),
    (5, 96, 40, true, 2),
    (5, 240, 40, true, 1),
    (5, 120, 48, true, 1),
    (5, 144, 48, true, 1),
    (5, 288, 96, true, 2),
    (5, 576, 96, true, 1),
    (5, 576, 96, true, 1),
    (5, 576, 96, true, 1),
    (5, 576, 96, true, 1),
];

pub fn build_microbotnet(alpha: f64, classes: usize) -> Result<NetworkSpec, MicronetError> {
    build_microbotnet_with(alpha, classes, &BuildOptions::default())
}

pub fn build_microbotnet_with(
    alpha: f64,
    classes: usize,
    opts: &BuildOptions,
) -> Result<NetworkSpec, MicronetError> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(MicronetError::Config(format!("width multiplier must be > 0, got {alpha}")));
    }
    if classes == 0 || opts.divisor == 0 {
        return Err(MicronetError::Config("classes and divisor must be >= 1".into()));
    }
    if !opts.input.h.is_multiple_of(32) || !opts.input.w.is_multiple_of(32) || opts.input.c == 0 {
        return Err(MicronetError::Config(format!(
            "input {} must be a multiple of 32x32",
            opts.input
        )));
    }
    let width = |c: usize| make_divisible(c as f64 * alpha, opts.divisor);
    let mut layers = Vec::with_capacity(15);
    let mut shape = opts.input;
    let mut push = |layers: &mut Vec<LayerSpec>, mut l: LayerSpec| {
        l.name = format!("{}_{}", kind_tag(l.kind), layers.len());
        l.in_shape = shape;
        shape = l.out_shape();
        layers.push(l);
    };
    let base = LayerSpec {
        name: String::new(),
        kind: LayerKind::Conv,
        kernel: 3,
        exp_size: 0,
        out_channels: 0,
        use_se: false,
        se_channels: 0,
        stride: 1,
        in_shape: opts.input,
        batch_norm: true,
        activation: Activation::HSwish,
    };

    push(
        &mut layers,
        LayerSpec {
            out_channels: width(16),
            stride: 2,
            ..base.clone()
        },
    );
    for (i, &(k, exp, out, se, s)) in BNECKS.iter().enumerate() {
        let e = width(exp);
        push(
            &mut layers,
            LayerSpec {
                kind: LayerKind::Bneck,
                kernel: k,
                exp_size: e,
                out_channels: width(out),
                use_se: se,
                se_channels: if se { make_divisible(e as f64 / 4.0, opts.divisor) } else { 0 },
                stride: s,
                activation: if i == 0 { Activation::Relu } else { Activation::HSwish },
                ..base.clone()
            },
        );
    }
    let last = width(576);
    push(
        &mut layers,
        LayerSpec {
            kind: LayerKind::PointwiseConv,
            kernel: 1,
            out_channels: last,
            use_se: opts.se_on_last_conv,
            se_channels: if opts.se_on_last_conv {
                make_divisible(last as f64 / 4.0, opts.divisor)
            } else {
                0
            },
            ..base.clone()
        },
    );
    push(
        &mut layers,
        LayerSpec {
            kind: LayerKind::Pool,
            kernel: 2,
            out_channels: last,
            batch_norm: false,
            activation: Activation::None,
            ..base.clone()
        },
    );
    push(
        &mut layers,
        LayerSpec {
            kind: LayerKind::PointwiseConv,
            kernel: 1,
            out_channels: width(1024),
            batch_norm: false,
            ..base.clone()
        },
    );
    push(
        &mut layers,
        LayerSpec {
            kind: LayerKind::Linear,
            kernel: 1,
            out_channels: classes,
            batch_norm: false,
            activation: Activation::None,
            ..base
        },
    );

    let spec = NetworkSpec {
        alpha,
        classes,
        divisor: opts.divisor,
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

fn kind_tag(kind: LayerKind) -> &'static str {
    match kind {
        LayerKind::Conv => "conv",
        LayerKind::Bneck => "bneck",
        LayerKind::Pool => "pool",
        LayerKind::PointwiseConv => "pwconv",
        LayerKind::Linear => "linear",
    }
}

impl NetworkSpec {
    pub fn input_shape(&self) -> Shape {
        self.layers[0].in_shape
    }

    /// Checks layer-local invariants and that consecutive shapes chain.
    pub fn validate(&self) -> Result<(), MicronetError> {
        let bad = |l: &LayerSpec, reason: String| MicronetError::Structure {
            layer: l.name.clone(),
            reason,
        };
        if self.layers.is_empty() {
            return Err(MicronetError::Config("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if !matches!(l.stride, 1 | 2) {
                return Err(bad(l, format!("stride {} not in {{1, 2}}", l.stride)));
            }
            if !matches!(l.kernel, 1 | 2 | 3 | 5) {
                return Err(bad(l, format!("kernel {} not in {{1, 2, 3, 5}}", l.kernel)));
            }
            if l.kind == LayerKind::Bneck && l.exp_size < l.in_shape.c {
                return Err(bad(
                    l,
                    format!("expansion {} narrower than input {}", l.exp_size, l.in_shape.c),
                ));
            }
            if l.use_se != (l.se_channels > 0) {
                return Err(bad(l, "SE flag and width disagree".into()));
            }
            let out = l.out_shape();
            if out.h == 0 || out.w == 0 {
                return Err(bad(l, format!("input {} collapses to zero size", l.in_shape)));
            }
            if let Some(next) = self.layers.get(i + 1) {
                if next.in_shape != out {
                    return Err(bad(
                        next,
                        format!("input {} does not chain from previous output {}", next.in_shape, out),
                    ));
                }
            }
        }
        let last = self.layers.last().unwrap();
        if last.out_channels != self.classes {
            return Err(bad(last, format!("emits {} logits, expected {}", last.out_channels, self.classes)));
        }
        Ok(())
    }

    /// Smallest spatial side reached in the first six layers, where the 8x fast
    /// downsampling happens.
    pub fn fast_downsampling_min(&self) -> usize {
        self.layers
            .iter()
            .take(6)
            .map(|l| l.out_shape().h.min(l.out_shape().w))
            .min()
            .unwrap_or(0)
    }
}
