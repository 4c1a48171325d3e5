//! Layer specifications and shape validation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convolution kernel edge (square, stride 1, no padding).
pub const KERNEL: usize = 3;
/// Max-pool window edge (square, stride equal to the window).
pub const POOL: usize = 2;
/// Number of output classes: 0 = Non-Demented, 1 = Demented.
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
    },
    Maxpool2d,
    Relu,
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Softmax,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Maxpool2d => "maxpool2d",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn has_parameters(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }

    /// Weight and bias dims for parameterized layers.
    pub fn parameter_dims(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => Some((vec![out_channels, in_channels, KERNEL, KERNEL], vec![out_channels])),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }

    /// (fan_in, fan_out) used by the Glorot-uniform bound.
    pub fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
            } => Some((in_channels * KERNEL * KERNEL, out_channels * KERNEL * KERNEL)),
            LayerSpec::Dense {
                in_features,
                out_features,
            } => Some((in_features, out_features)),
            _ => None,
        }
    }
}

/// Per-sample activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Image { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Image { c, h, w } => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::Image { c, h, w } => vec![c, h, w],
            Shape::Flat(n) => vec![n],
        }
    }
}

/// A validated network: input shape plus layer list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawArchitecture", into = "RawArchitecture")]
pub struct Architecture {
    input: [usize; 3],
    layers: Vec<LayerSpec>,
    // shapes[k] is the input shape of layer k; shapes[len] is the output.
    shapes: Vec<Shape>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArchitecture {
    input: [usize; 3],
    layers: Vec<LayerSpec>,
}

impl TryFrom<RawArchitecture> for Architecture {
    type Error = Error;

    fn try_from(raw: RawArchitecture) -> Result<Self> {
        Architecture::new(raw.input, raw.layers)
    }
}

impl From<Architecture> for RawArchitecture {
    fn from(a: Architecture) -> Self {
        RawArchitecture {
            input: a.input,
            layers: a.layers,
        }
    }
}

impl Architecture {
    /// Validates layer compatibility for an input of `[channels, height, width]`.
    pub fn new(input: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        let [c, h, w] = input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::config(format!("input dims must be positive, got {input:?}")));
        }
        if layers.is_empty() {
            return Err(Error::config("architecture has no layers"));
        }
        let mut shapes = vec![Shape::Image { c, h, w }];
        for (k, layer) in layers.iter().enumerate() {
            let cur = shapes[k];
            let pair = || {
                if k == 0 {
                    format!("input -> layer 0 ({})", layer.name())
                } else {
                    format!("layer {} ({}) -> layer {} ({})", k - 1, layers[k - 1].name(), k, layer.name())
                }
            };
            let next = match (*layer, cur) {
                (LayerSpec::Conv2d { in_channels, out_channels }, Shape::Image { c, h, w }) => {
                    if in_channels != c || out_channels == 0 || h < KERNEL || w < KERNEL {
                        return Err(Error::config(format!(
                            "incompatible {}: conv2d expects {in_channels} channels of at least {KERNEL}x{KERNEL}, got {c}x{h}x{w}",
                            pair()
                        )));
                    }
                    Shape::Image { c: out_channels, h: h - KERNEL + 1, w: w - KERNEL + 1 }
                }
                (LayerSpec::Maxpool2d, Shape::Image { c, h, w }) => {
                    if h < POOL || w < POOL {
                        return Err(Error::config(format!(
                            "incompatible {}: maxpool2d needs at least {POOL}x{POOL}, got {h}x{w}",
                            pair()
                        )));
                    }
                    Shape::Image { c, h: h / POOL, w: w / POOL }
                }
                (LayerSpec::Relu, s) => s,
                (LayerSpec::Flatten, s) => Shape::Flat(s.len()),
                (LayerSpec::Dense { in_features, out_features }, Shape::Flat(n)) => {
                    if in_features != n || out_features == 0 {
                        return Err(Error::config(format!(
                            "incompatible {}: dense expects {in_features} features, got {n}",
                            pair()
                        )));
                    }
                    Shape::Flat(out_features)
                }
                (LayerSpec::Softmax, Shape::Flat(n)) => {
                    if k + 1 != layers.len() {
                        return Err(Error::config(format!(
                            "incompatible {}: softmax must be the final layer",
                            pair()
                        )));
                    }
                    if n != NUM_CLASSES {
                        return Err(Error::config(format!(
                            "incompatible {}: softmax must cover exactly {NUM_CLASSES} classes, got {n}",
                            pair()
                        )));
                    }
                    Shape::Flat(n)
                }
                (l, s) => {
                    return Err(Error::config(format!(
                        "incompatible {}: {} cannot consume a {:?} activation",
                        pair(),
                        l.name(),
                        s
                    )))
                }
            };
            shapes.push(next);
        }
        if layers.last() != Some(&LayerSpec::Softmax) {
            return Err(Error::config(format!(
                "architecture must end in a {NUM_CLASSES}-class softmax, ends in {}",
                layers[layers.len() - 1].name()
            )));
        }
        Ok(Self { input, layers, shapes })
    }

    /// conv2d(1→4) → relu → maxpool → flatten → dense(196→2) → softmax on 1×16×16.
    pub fn default_cnn() -> Self {
        Self::small_cnn(16, 16, 4)
    }

    /// The default layer stack for arbitrary single-channel image sizes.
    pub fn small_cnn(height: usize, width: usize, filters: usize) -> Self {
        let flat = filters * ((height - KERNEL + 1) / POOL) * ((width - KERNEL + 1) / POOL);
        Self::new(
            [1, height, width],
            vec![
                LayerSpec::Conv2d { in_channels: 1, out_channels: filters },
                LayerSpec::Relu,
                LayerSpec::Maxpool2d,
                LayerSpec::Flatten,
                LayerSpec::Dense { in_features: flat, out_features: NUM_CLASSES },
                LayerSpec::Softmax,
            ],
        )
        .expect("small_cnn is shape-consistent")
    }

    pub fn input(&self) -> [usize; 3] {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Input shape of layer `k` (`k == layers().len()` gives the output shape).
    pub fn shape_at(&self, k: usize) -> Shape {
        self.shapes[k]
    }

    /// Dims of every parameter tensor in order: (weight, bias) per parameterized layer.
    pub fn parameter_dims(&self) -> Vec<Vec<usize>> {
        self.layers
            .iter()
            .filter_map(LayerSpec::parameter_dims)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_dims()
            .iter()
            .map(|d| d.iter().product::<usize>())
            .sum()
    }
}
