//! Architecture descriptions and the CONV-N family.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_size,
            self.kernel_size,
        ]
    }

    pub fn output_extent(&self, input: usize) -> Option<usize> {
        conv_output_extent(input, self.kernel_size, self.stride, self.padding)
    }
}

/// `floor((h + 2·padding − k) / stride) + 1`, or `None` when the kernel does
/// not fit.
pub fn conv_output_extent(h: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 {
        return None;
    }
    (h + 2 * padding).checked_sub(k).map(|v| v / stride + 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv2d(ConvSpec),
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    MaxPool2x2,
    Flatten,
}

impl LayerSpec {
    pub fn is_prunable(&self) -> bool {
        matches!(self, LayerSpec::Conv2d(_) | LayerSpec::Linear { .. })
    }

    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d(c) => Some(c.weight_shape().to_vec()),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => Some(vec![out_features, in_features]),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv2d(c) => Some(c.in_channels * c.kernel_size * c.kernel_size),
            LayerSpec::Linear { in_features, .. } => Some(in_features),
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |detail: String| Error::shape("network spec", detail);
        match *self {
            LayerSpec::Conv2d(c) => {
                if c.in_channels == 0 || c.out_channels == 0 || c.kernel_size == 0 || c.stride == 0 {
                    return Err(Error::Config(format!("conv2d extents must be >= 1: {c:?}")));
                }
                match input {
                    &[n, h, w] if n == c.in_channels => {
                        let (Some(oh), Some(ow)) = (c.output_extent(h), c.output_extent(w)) else {
                            return Err(mismatch(format!(
                                "kernel {} does not fit input {h}x{w}",
                                c.kernel_size
                            )));
                        };
                        Ok(vec![c.out_channels, oh, ow])
                    }
                    _ => Err(mismatch(format!(
                        "conv2d expects [{}, H, W], found {input:?}",
                        c.in_channels
                    ))),
                }
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                if in_features == 0 || out_features == 0 {
                    return Err(Error::Config("linear extents must be >= 1".into()));
                }
                if input != [in_features] {
                    return Err(mismatch(format!(
                        "linear expects [{in_features}], found {input:?}"
                    )));
                }
                Ok(vec![out_features])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool2x2 => match input {
                &[c, h, w] if h % 2 == 0 && w % 2 == 0 => Ok(vec![c, h / 2, w / 2]),
                _ => Err(mismatch(format!(
                    "maxpool2x2 needs even spatial extents, found {input:?}"
                ))),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv2d(c) => write!(
                f,
                "conv2d {} {} {} {} {}",
                c.in_channels, c.out_channels, c.kernel_size, c.stride, c.padding
            ),
            LayerSpec::Linear {
                in_features,
                out_features,
            } => write!(f, "linear {in_features} {out_features}"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool2x2 => f.write_str("maxpool2x2"),
            LayerSpec::Flatten => f.write_str("flatten"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace();
        let kind = parts.next().unwrap_or_default();
        let nums = parts
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("layer line {line:?}: {e}")))?;
        let layer = match (kind, nums.as_slice()) {
            ("conv2d", &[n, m, k, s, p]) => LayerSpec::Conv2d(ConvSpec {
                in_channels: n,
                out_channels: m,
                kernel_size: k,
                stride: s,
                padding: p,
            }),
            ("linear", &[i, o]) => LayerSpec::Linear {
                in_features: i,
                out_features: o,
            },
            ("relu", []) => LayerSpec::Relu,
            ("maxpool2x2", []) => LayerSpec::MaxPool2x2,
            ("flatten", []) => LayerSpec::Flatten,
            _ => return Err(Error::Format(format!("unknown layer line {line:?}"))),
        };
        Ok(layer)
    }
}

/// Conv-family depths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    Conv2,
    Conv4,
    Conv6,
    Conv8,
}

impl Arch {
    pub fn widths(self) -> &'static [usize] {
        match self {
            Arch::Conv2 => &[32, 32],
            Arch::Conv4 => &[32, 32, 64, 64],
            Arch::Conv6 => &[32, 32, 64, 64, 128, 128],
            Arch::Conv8 => &[32, 32, 64, 64, 128, 128, 256, 256],
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Arch::Conv2 => "conv2",
            Arch::Conv4 => "conv4",
            Arch::Conv6 => "conv6",
            Arch::Conv8 => "conv8",
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "conv2" => Ok(Arch::Conv2),
            "conv4" => Ok(Arch::Conv4),
            "conv6" => Ok(Arch::Conv6),
            "conv8" => Ok(Arch::Conv8),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Hidden width of the two-layer classifier head.
pub const HEAD_WIDTH: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    /// Per-sample input shape `[C, H, W]`.
    pub input_shape: [usize; 3],
    pub num_classes: usize,
}

/// A conv or linear layer that carries a weight tensor (and scores).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrunableLayer {
    /// Position in `NetworkSpec::layers`.
    pub layer_index: usize,
    pub weight_shape: Vec<usize>,
    pub fan_in: usize,
    pub is_conv: bool,
}

impl PrunableLayer {
    pub fn len(&self) -> usize {
        self.weight_shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl NetworkSpec {
    /// CONV-N: 3×3 same-padded convolutions with ReLU, a 2×2 max-pool after
    /// every pair, then `flatten → linear(256) → relu → linear(classes)`.
    pub fn conv_family(arch: Arch, input_shape: [usize; 3], num_classes: usize) -> Result<Self> {
        let mut layers = Vec::new();
        let mut channels = input_shape[0];
        for (i, &width) in arch.widths().iter().enumerate() {
            layers.push(LayerSpec::Conv2d(ConvSpec {
                in_channels: channels,
                out_channels: width,
                kernel_size: 3,
                stride: 1,
                padding: 1,
            }));
            layers.push(LayerSpec::Relu);
            if i % 2 == 1 {
                layers.push(LayerSpec::MaxPool2x2);
            }
            channels = width;
        }
        let pools = arch.widths().len() / 2;
        let div = 1 << pools;
        let [_, h, w] = input_shape;
        if h % div != 0 || w % div != 0 {
            return Err(Error::Config(format!(
                "{} needs spatial extents divisible by {div}, got {h}x{w}",
                arch.tag()
            )));
        }
        layers.push(LayerSpec::Flatten);
        layers.push(LayerSpec::Linear {
            in_features: channels * (h / div) * (w / div),
            out_features: HEAD_WIDTH,
        });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::Linear {
            in_features: HEAD_WIDTH,
            out_features: num_classes,
        });
        let spec = Self {
            name: arch.tag().to_string(),
            layers,
            input_shape,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Per-sample shapes at every layer boundary: entry `j` is the input of
    /// layer `j`; the last entry is the logits shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.to_vec()];
        for layer in &self.layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_shape.contains(&0) || self.num_classes == 0 {
            return Err(Error::Config(format!(
                "input shape {:?} and class count {} must be positive",
                self.input_shape, self.num_classes
            )));
        }
        self.shapes()?;
        match self.layers.last() {
            Some(LayerSpec::Linear { out_features, .. }) if *out_features == self.num_classes => Ok(()),
            _ => Err(Error::Config(format!(
                "final layer must be linear with {} outputs",
                self.num_classes
            ))),
        }
    }

    pub fn prunable_layers(&self) -> Vec<PrunableLayer> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                Some(PrunableLayer {
                    layer_index: i,
                    weight_shape: l.weight_shape()?,
                    fan_in: l.fan_in()?,
                    is_conv: matches!(l, LayerSpec::Conv2d(_)),
                })
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.prunable_layers().iter().map(PrunableLayer::len).sum()
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [c, h, w] = self.input_shape;
        writeln!(f, "name {}", self.name)?;
        writeln!(f, "input {c} {h} {w}")?;
        writeln!(f, "classes {}", self.num_classes)?;
        for layer in &self.layers {
            writeln!(f, "{layer}")?;
        }
        Ok(())
    }
}

impl FromStr for NetworkSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let mut header = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("network spec missing {key:?}")))?;
            line.strip_prefix(key)
                .map(|v| v.trim().to_string())
                .ok_or_else(|| Error::Format(format!("expected {key:?}, found {line:?}")))
        };
        let name = header("name")?;
        let dims = header("input")?
            .split_whitespace()
            .map(str::parse::<usize>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("input shape: {e}")))?;
        let input_shape: [usize; 3] = dims
            .try_into()
            .map_err(|_| Error::Format("input shape must have 3 extents".into()))?;
        let num_classes = header("classes")?
            .parse()
            .map_err(|e| Error::Format(format!("classes: {e}")))?;
        let layers = lines.map(str::parse).collect::<Result<Vec<LayerSpec>>>()?;
        let spec = Self {
            name,
            layers,
            input_shape,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_family_shapes_compose() {
        for arch in [Arch::Conv2, Arch::Conv4, Arch::Conv6, Arch::Conv8] {
            let spec = NetworkSpec::conv_family(arch, [3, 32, 32], 10).unwrap();
            let convs = spec.prunable_layers().iter().filter(|l| l.is_conv).count();
            assert_eq!(convs, arch.widths().len());
            assert_eq!(spec.shapes().unwrap().last().unwrap(), &vec![10]);
        }
    }

    #[test]
    fn conv4_head_width_matches_pooling() {
        let spec = NetworkSpec::conv_family(Arch::Conv4, [3, 32, 32], 10).unwrap();
        let head = spec.prunable_layers()[4].clone();
        assert_eq!(head.weight_shape, vec![HEAD_WIDTH, 64 * 8 * 8]);
    }

    #[test]
    fn rejects_indivisible_input() {
        assert!(NetworkSpec::conv_family(Arch::Conv8, [3, 8, 8], 10).is_err());
        assert!(NetworkSpec::conv_family(Arch::Conv6, [3, 12, 12], 10).is_err());
    }

    #[test]
    fn text_form_round_trips() {
        let spec = NetworkSpec::conv_family(Arch::Conv6, [1, 16, 16], 4).unwrap();
        let parsed: NetworkSpec = spec.to_string().parse().unwrap();
        assert_eq!(parsed, spec);
    }

    #[test]
    fn final_layer_must_match_classes() {
        let mut spec = NetworkSpec::conv_family(Arch::Conv2, [1, 4, 4], 3).unwrap();
        spec.num_classes = 4;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn output_extent_formula() {
        assert_eq!(conv_output_extent(5, 3, 1, 0), Some(3));
        assert_eq!(conv_output_extent(5, 3, 2, 1), Some(3));
        assert_eq!(conv_output_extent(2, 3, 1, 0), None);
    }
}
