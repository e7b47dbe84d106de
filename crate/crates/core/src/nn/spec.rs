use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv3d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    BatchNorm {
        ch: usize,
    },
    MaxPool {
        window: usize,
    },
    AvgPool {
        window: usize,
    },
    /// Prepends the output of layer `source`, max-pooled by `pool`, along
    /// the channel axis.
    Concat {
        source: usize,
        pool: usize,
    },
    Flatten,
    Fc {
        input: usize,
        output: usize,
    },
}

impl LayerSpec {
    pub fn conv(in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        LayerSpec::Conv3d { in_ch, out_ch, kernel, stride: 1 }
    }
}

/// Ordered layer list plus the per-sample input shape `[C, D, H, W]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: [usize; 4],
    pub layers: Vec<LayerSpec>,
    /// Network outputs are multiplied by this to give millimetres.
    pub label_scale: f64,
}

impl NetworkSpec {
    /// Builds a spec and checks both the shape chain and the reference
    /// architecture constraints (nine stride-1 convolutions, one skip
    /// concatenation, batch norm after the second convolution and after the
    /// concatenation, scalar fully connected head).
    pub fn new(input: [usize; 4], layers: Vec<LayerSpec>, label_scale: f64) -> Result<Self> {
        let spec = Self::relaxed(input, layers, label_scale)?;
        spec.check_architecture()?;
        Ok(spec)
    }

    /// Shape-checked only; for miniature networks in tests and experiments.
    pub fn relaxed(input: [usize; 4], layers: Vec<LayerSpec>, label_scale: f64) -> Result<Self> {
        if !(label_scale > 0.0 && label_scale.is_finite()) {
            return Err(Error::config("label_scale must be positive"));
        }
        let spec = NetworkSpec { input, layers, label_scale };
        spec.output_shapes()?;
        Ok(spec)
    }

    /// 2 x 32^3 input, four-times downsampled by the front average pool.
    pub fn default_tre() -> Self {
        use LayerSpec::*;
        let layers = vec![
            AvgPool { window: 2 },
            LayerSpec::conv(2, 8, 3),
            Relu,
            LayerSpec::conv(8, 8, 3),
            BatchNorm { ch: 8 },
            Relu,
            LayerSpec::conv(8, 12, 3),
            Relu,
            LayerSpec::conv(12, 12, 3),
            Relu,
            LayerSpec::conv(12, 16, 3),
            Relu,
            MaxPool { window: 2 },
            LayerSpec::conv(16, 16, 1),
            Relu,
            LayerSpec::conv(16, 16, 1),
            Relu,
            LayerSpec::conv(16, 16, 1),
            Relu,
            LayerSpec::conv(16, 16, 1),
            Relu,
            Concat { source: 4, pool: 4 },
            BatchNorm { ch: 24 },
            Relu,
            Flatten,
            Fc { input: 24 * 27, output: 32 },
            Relu,
            Fc { input: 32, output: 1 },
        ];
        NetworkSpec::new([2, 32, 32, 32], layers, 20.0).expect("default architecture is valid")
    }

    /// Per-sample output shape of every layer (without the batch axis).
    pub fn output_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.layers.len());
        let mut cur: Vec<usize> = self.input.to_vec();
        if cur.contains(&0) {
            return Err(Error::shape("input dims must be positive"));
        }
        for (idx, layer) in self.layers.iter().enumerate() {
            let err = |msg: String| Error::shape(format!("layer {idx} ({layer:?}): {msg}"));
            cur = match *layer {
                LayerSpec::Conv3d { in_ch, out_ch, kernel, stride } => {
                    if stride != 1 {
                        return Err(err("only stride 1 is supported".into()));
                    }
                    if cur.len() != 4 || cur[0] != in_ch {
                        return Err(err(format!("input shape {cur:?}")));
                    }
                    if kernel == 0 || out_ch == 0 || cur[1..].iter().any(|&d| d < kernel) {
                        return Err(err(format!("kernel does not fit {cur:?}")));
                    }
                    vec![out_ch, cur[1] - kernel + 1, cur[2] - kernel + 1, cur[3] - kernel + 1]
                }
                LayerSpec::Relu => cur,
                LayerSpec::BatchNorm { ch } => {
                    if cur.len() < 2 || cur[0] != ch {
                        return Err(err(format!("input shape {cur:?}")));
                    }
                    cur
                }
                LayerSpec::MaxPool { window } | LayerSpec::AvgPool { window } => {
                    if cur.len() != 4 || window == 0 || cur[1..].iter().any(|&d| d < window) {
                        return Err(err(format!("window does not fit {cur:?}")));
                    }
                    vec![cur[0], cur[1] / window, cur[2] / window, cur[3] / window]
                }
                LayerSpec::Concat { source, pool } => {
                    if source >= idx {
                        return Err(err("concat source must precede it".into()));
                    }
                    let src = &shapes[source];
                    if src.len() != 4 || cur.len() != 4 || pool == 0 {
                        return Err(err("concat needs 5D feature maps".into()));
                    }
                    let pooled: Vec<usize> = src[1..].iter().map(|d| d / pool).collect();
                    if pooled != cur[1..] {
                        return Err(err(format!("skip {src:?} pooled by {pool} does not match {cur:?}")));
                    }
                    vec![src[0] + cur[0], cur[1], cur[2], cur[3]]
                }
                LayerSpec::Flatten => vec![cur.iter().product()],
                LayerSpec::Fc { input, output } => {
                    if cur != [input] || output == 0 {
                        return Err(err(format!("input shape {cur:?}")));
                    }
                    vec![output]
                }
            };
            shapes.push(cur.clone());
        }
        if cur != [1] {
            return Err(Error::shape(format!("network must end in a scalar, ends in {cur:?}")));
        }
        Ok(shapes)
    }

    fn check_architecture(&self) -> Result<()> {
        let convs: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv3d { .. }))
            .map(|(i, _)| i)
            .collect();
        if convs.len() != 9 {
            return Err(Error::config(format!("expected 9 conv layers, found {}", convs.len())));
        }
        let concats: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Concat { .. }))
            .map(|(i, _)| i)
            .collect();
        if concats.len() != 1 {
            return Err(Error::config(format!("expected one concat, found {}", concats.len())));
        }
        let bn_after = |i: usize| matches!(self.layers.get(i + 1), Some(LayerSpec::BatchNorm { .. }));
        if !bn_after(convs[1]) {
            return Err(Error::config("batch norm must follow the second convolution"));
        }
        if !bn_after(concats[0]) {
            return Err(Error::config("batch norm must follow the concatenation"));
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Fc { output: 1, .. })) {
            return Err(Error::config("last layer must be a scalar fully connected layer"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shapes_chain() {
        let spec = NetworkSpec::default_tre();
        let shapes = spec.output_shapes().unwrap();
        assert_eq!(shapes[0], vec![2, 16, 16, 16]);
        assert_eq!(shapes[4], vec![8, 12, 12, 12]);
        assert_eq!(shapes[12], vec![16, 3, 3, 3]);
        assert_eq!(shapes[21], vec![24, 3, 3, 3]);
        assert_eq!(shapes.last().unwrap(), &vec![1]);
    }

    #[test]
    fn architecture_rules_enforced() {
        let base = NetworkSpec::default_tre();
        // Drop the batch norm after conv #2 (and fix up the skip index).
        let mut layers = base.layers.clone();
        layers.remove(4);
        if let LayerSpec::Concat { source, .. } = &mut layers[20] {
            *source = 3;
        }
        assert!(NetworkSpec::relaxed(base.input, layers.clone(), 20.0).is_ok());
        assert!(NetworkSpec::new(base.input, layers, 20.0).is_err());
    }

    #[test]
    fn shape_mismatch_caught_at_construction() {
        let layers = vec![LayerSpec::conv(2, 4, 3), LayerSpec::Flatten, LayerSpec::Fc { input: 10, output: 1 }];
        assert!(matches!(NetworkSpec::relaxed([2, 4, 4, 4], layers, 1.0), Err(Error::Shape(_))));
    }

    #[test]
    fn spec_serialises() {
        let spec = NetworkSpec::default_tre();
        let json = serde_json::to_string(&spec).unwrap();
        let back: NetworkSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
