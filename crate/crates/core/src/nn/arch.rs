use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a feed-forward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layer {
    Dense {
        #[serde(rename = "in")]
        inputs: usize,
        #[serde(rename = "out")]
        outputs: usize,
    },
    /// Valid (unpadded) 2-d convolution over `[channels, height, width]`.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    Flatten,
    /// Terminal layer mapping logits to class probabilities.
    Softmax,
}

impl Layer {
    /// `(fan_in, fan_out, weight count, bias count)` for layers with parameters.
    pub(crate) fn param_dims(&self) -> Option<(usize, usize, usize, usize)> {
        match *self {
            Layer::Dense { inputs, outputs } => {
                Some((inputs, outputs, inputs * outputs, outputs))
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let area = kernel * kernel;
                Some((
                    in_channels * area,
                    out_channels * area,
                    out_channels * in_channels * area,
                    out_channels,
                ))
            }
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_dims().map_or(0, |(_, _, w, b)| w + b)
    }

    /// Output shape of this layer for `input`, or a reason it does not fit.
    fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            Layer::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(format!("dense expects [{inputs}], got {input:?}"));
                }
                if outputs == 0 {
                    return Err("dense layer with zero outputs".into());
                }
                Ok(vec![outputs])
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let [c, h, w] = input else {
                    return Err(format!("conv2d expects [c, h, w], got {input:?}"));
                };
                if *c != in_channels {
                    return Err(format!("conv2d expects {in_channels} channels, got {c}"));
                }
                if kernel == 0 || stride == 0 || out_channels == 0 {
                    return Err("conv2d with zero kernel, stride or channels".into());
                }
                if kernel > *h || kernel > *w {
                    return Err(format!("kernel {kernel} larger than {h}x{w} input"));
                }
                Ok(vec![
                    out_channels,
                    (h - kernel) / stride + 1,
                    (w - kernel) / stride + 1,
                ])
            }
            Layer::MaxPool { size, stride } => {
                let [c, h, w] = input else {
                    return Err(format!("max_pool expects [c, h, w], got {input:?}"));
                };
                if size == 0 || stride == 0 {
                    return Err("max_pool with zero size or stride".into());
                }
                if size > *h || size > *w {
                    return Err(format!("pool size {size} larger than {h}x{w} input"));
                }
                Ok(vec![*c, (h - size) / stride + 1, (w - size) / stride + 1])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(format!("dropout rate {rate} outside [0, 1)"));
                }
                Ok(input.to_vec())
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Softmax => {
                if input.len() != 1 {
                    return Err(format!("softmax expects a vector, got {input:?}"));
                }
                Ok(input.to_vec())
            }
        }
    }
}

/// Architecture of a feed-forward classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub input_shape: Vec<usize>,
    pub class_count: usize,
    pub layers: Vec<Layer>,
}

impl ArchSpec {
    /// Multi-layer perceptron `inputs -> hidden... -> classes` with ReLU
    /// activations and a softmax output.
    pub fn mlp(inputs: usize, hidden: &[usize], classes: usize) -> Self {
        let mut layers = Vec::new();
        let mut width = inputs;
        for &h in hidden {
            layers.push(Layer::Dense {
                inputs: width,
                outputs: h,
            });
            layers.push(Layer::Relu);
            width = h;
        }
        layers.push(Layer::Dense {
            inputs: width,
            outputs: classes,
        });
        layers.push(Layer::Softmax);
        Self {
            input_shape: vec![inputs],
            class_count: classes,
            layers,
        }
    }

    /// Checks that layer shapes compose and returns the shape entering each
    /// layer followed by the final output shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let bad = |layer, reason: String| Error::InvalidArch { layer, reason };
        if self.class_count < 2 {
            return Err(bad(0, format!("class_count {} < 2", self.class_count)));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(bad(0, format!("bad input shape {:?}", self.input_shape)));
        }
        let Some(last) = self.layers.len().checked_sub(1) else {
            return Err(bad(0, "no layers".into()));
        };
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            if matches!(layer, Layer::Softmax) != (i == last) {
                return Err(bad(i, "softmax must appear exactly once, as the last layer".into()));
            }
            let next = layer
                .output_shape(&shapes[i])
                .map_err(|reason| bad(i, reason))?;
            shapes.push(next);
        }
        if shapes[self.layers.len()] != [self.class_count] {
            return Err(bad(
                last,
                format!(
                    "output shape {:?} does not match {} classes",
                    shapes[self.layers.len()],
                    self.class_count
                ),
            ));
        }
        Ok(shapes)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Stable 64-bit FNV-1a fingerprint of the canonical JSON form.
    pub fn fingerprint(&self) -> u64 {
        let text = serde_json::to_string(self).expect("arch serializes");
        text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_param_count() {
        let arch = ArchSpec {
            input_shape: vec![3],
            class_count: 2,
            layers: vec![
                Layer::Dense {
                    inputs: 3,
                    outputs: 2,
                },
                Layer::Softmax,
            ],
        };
        assert_eq!(arch.param_count(), 8);
        arch.shapes().unwrap();
    }

    #[test]
    fn conv_param_count() {
        let conv = Layer::Conv2d {
            in_channels: 1,
            out_channels: 4,
            kernel: 5,
            stride: 1,
        };
        assert_eq!(conv.param_count(), 104);
    }

    #[test]
    fn small_cnn_shapes() {
        let arch = ArchSpec {
            input_shape: vec![1, 12, 12],
            class_count: 3,
            layers: vec![
                Layer::Conv2d {
                    in_channels: 1,
                    out_channels: 2,
                    kernel: 3,
                    stride: 1,
                },
                Layer::Relu,
                Layer::MaxPool { size: 2, stride: 2 },
                Layer::Flatten,
                Layer::Dropout { rate: 0.25 },
                Layer::Dense {
                    inputs: 50,
                    outputs: 3,
                },
                Layer::Softmax,
            ],
        };
        let shapes = arch.shapes().unwrap();
        assert_eq!(shapes[1], vec![2, 10, 10]);
        assert_eq!(shapes[3], vec![2, 5, 5]);
        assert_eq!(shapes.last().unwrap(), &vec![3]);
    }

    #[test]
    fn rejects_broken_compositions() {
        let mut arch = ArchSpec::mlp(4, &[3], 2);
        arch.layers[2] = Layer::Dense {
            inputs: 5,
            outputs: 2,
        };
        assert!(matches!(arch.shapes(), Err(Error::InvalidArch { layer: 2, .. })));

        let mut no_softmax = ArchSpec::mlp(4, &[], 2);
        no_softmax.layers.pop();
        assert!(no_softmax.shapes().is_err());

        let mut two_softmax = ArchSpec::mlp(2, &[], 2);
        two_softmax.layers.insert(1, Layer::Softmax);
        assert!(two_softmax.shapes().is_err());

        let mut wrong_classes = ArchSpec::mlp(2, &[], 2);
        wrong_classes.class_count = 3;
        assert!(wrong_classes.shapes().is_err());

        let mut bad_dropout = ArchSpec::mlp(2, &[2], 2);
        bad_dropout.layers.insert(1, Layer::Dropout { rate: 1.0 });
        assert!(bad_dropout.shapes().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let arch = ArchSpec::mlp(2, &[8], 2);
        let text = toml::to_string(&arch).unwrap();
        assert!(text.contains("type = \"dense\""));
        assert_eq!(toml::from_str::<ArchSpec>(&text).unwrap(), arch);
    }
}
