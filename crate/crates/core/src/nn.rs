//! Two-level encoder-decoder segmentation network ("U-Net-lite").
//!
//! Layout: two encoder blocks (each two same-padded 3^d convolutions with
//! ReLU), max-pooled between levels; a bottleneck block with dropout; two
//! decoder blocks that upsample and concatenate the matching encoder skip;
//! and a 1^d output convolution producing one logit channel per class.
//! The same structure instantiates in 2D and 3D.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default channel widths per level.
pub const DEFAULT_WIDTHS: [usize; 3] = [8, 16, 32];

/// Default bottleneck dropout rate.
pub const DEFAULT_DROPOUT: f64 = 0.1;

/// A named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedParam {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug)]
struct ConvSpec {
    name: &'static str,
    cin: usize,
    cout: usize,
    k: usize,
}

/// Network parameters plus the architecture hyperparameters that shape them.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetLite {
    spatial_rank: usize,
    in_channels: usize,
    num_classes: usize,
    widths: [usize; 3],
    dropout_rate: f64,
    params: Vec<NamedParam>,
}

/// Node handles produced by building the network into a graph.
pub struct UNetTape {
    pub logits: NodeId,
    /// One node per parameter, in [`UNetLite::params`] order.
    pub param_nodes: Vec<NodeId>,
}

fn conv_specs(in_channels: usize, num_classes: usize, widths: [usize; 3]) -> Vec<ConvSpec> {
    let [w0, w1, w2] = widths;
    vec![
        ConvSpec { name: "enc1a", cin: in_channels, cout: w0, k: 3 },
        ConvSpec { name: "enc1b", cin: w0, cout: w0, k: 3 },
        ConvSpec { name: "enc2a", cin: w0, cout: w1, k: 3 },
        ConvSpec { name: "enc2b", cin: w1, cout: w1, k: 3 },
        ConvSpec { name: "bot_a", cin: w1, cout: w2, k: 3 },
        ConvSpec { name: "bot_b", cin: w2, cout: w2, k: 3 },
        ConvSpec { name: "dec2a", cin: w2 + w1, cout: w1, k: 3 },
        ConvSpec { name: "dec2b", cin: w1, cout: w1, k: 3 },
        ConvSpec { name: "dec1a", cin: w1 + w0, cout: w0, k: 3 },
        ConvSpec { name: "dec1b", cin: w0, cout: w0, k: 3 },
        ConvSpec { name: "out", cin: w0, cout: num_classes, k: 1 },
    ]
}

fn kernel_shape(spec: &ConvSpec, spatial_rank: usize) -> Vec<usize> {
    let mut shape = vec![spec.cout, spec.cin];
    shape.extend(std::iter::repeat_n(spec.k, spatial_rank));
    shape
}

impl UNetLite {
    /// Fresh network with He-normal kernels and zero biases, deterministic
    /// per seed.
    pub fn new(
        spatial_rank: usize,
        in_channels: usize,
        num_classes: usize,
        widths: [usize; 3],
        dropout_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        if spatial_rank != 2 && spatial_rank != 3 {
            return Err(Error::Config(format!(
                "spatial rank must be 2 or 3, got {spatial_rank}"
            )));
        }
        if in_channels == 0 || num_classes < 2 || widths.contains(&0) {
            return Err(Error::Config(
                "channels, classes (>= 2) and widths must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must be in [0, 1), got {dropout_rate}"
            )));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for spec in conv_specs(in_channels, num_classes, widths) {
            let shape = kernel_shape(&spec, spatial_rank);
            let fan_in: usize = shape[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("std is finite and positive");
            let weight = Tensor::from_fn(&shape, |_| normal.sample(&mut rng));
            params.push(NamedParam {
                name: format!("{}.weight", spec.name),
                tensor: weight,
            });
            params.push(NamedParam {
                name: format!("{}.bias", spec.name),
                tensor: Tensor::zeros(&[spec.cout]),
            });
        }
        Ok(UNetLite {
            spatial_rank,
            in_channels,
            num_classes,
            widths,
            dropout_rate,
            params,
        })
    }

    pub fn spatial_rank(&self) -> usize {
        self.spatial_rank
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn widths(&self) -> [usize; 3] {
        self.widths
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn params(&self) -> &[NamedParam] {
        &self.params
    }

    pub fn param_element_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// In-place `theta += scale * grads`, one gradient tensor per parameter.
    pub fn apply_update(&mut self, grads: &[Tensor], scale: f64) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} gradient tensors for {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        for (p, g) in self.params.iter_mut().zip(grads.iter()) {
            p.tensor.axpy(scale, g)?;
        }
        Ok(())
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        if image.rank() != self.spatial_rank + 1 || image.shape()[0] != self.in_channels {
            return Err(Error::DimensionMismatch(format!(
                "expected image [{}, ...] with {} spatial axes, got {:?}",
                self.in_channels,
                self.spatial_rank,
                image.shape()
            )));
        }
        if image.shape()[1..].iter().any(|&e| e % 4 != 0 || e == 0) {
            return Err(Error::Config(format!(
                "spatial extents must be positive and divisible by 4 (two pooling levels), got {:?}",
                &image.shape()[1..]
            )));
        }
        Ok(())
    }

    /// Build the network into `graph` on top of an existing image node.
    ///
    /// Parameters become `requires_grad` leaves when `trainable` is set.
    pub fn build_graph(
        &self,
        graph: &mut Graph,
        image: NodeId,
        training: bool,
        dropout_seed: u64,
        trainable: bool,
    ) -> Result<UNetTape> {
        self.check_image(graph.value(image))?;
        let param_nodes: Vec<NodeId> = self
            .params
            .iter()
            .map(|p| graph.leaf(p.tensor.clone(), trainable))
            .collect();

        // Convolution index -> (weight node, bias node).
        let wb = |i: usize| (param_nodes[2 * i], param_nodes[2 * i + 1]);
        let conv_block = |g: &mut Graph, x: NodeId, i: usize| -> Result<NodeId> {
            let (w, b) = wb(i);
            let c = g.conv(x, w)?;
            let c = g.bias_add(c, b)?;
            g.relu(c)
        };

        let g = graph;
        let s1 = {
            let x = conv_block(g, image, 0)?;
            conv_block(g, x, 1)?
        };
        let p1 = g.maxpool2(s1)?;
        let s2 = {
            let x = conv_block(g, p1, 2)?;
            conv_block(g, x, 3)?
        };
        let p2 = g.maxpool2(s2)?;
        let bot = {
            let x = conv_block(g, p2, 4)?;
            let x = conv_block(g, x, 5)?;
            g.dropout(x, self.dropout_rate, training, dropout_seed)?
        };
        let d2 = {
            let up = g.upsample_nearest2(bot)?;
            let cat = g.concat_channels(up, s2)?;
            let x = conv_block(g, cat, 6)?;
            conv_block(g, x, 7)?
        };
        let d1 = {
            let up = g.upsample_nearest2(d2)?;
            let cat = g.concat_channels(up, s1)?;
            let x = conv_block(g, cat, 8)?;
            conv_block(g, x, 9)?
        };
        let logits = {
            let (w, b) = wb(10);
            let c = g.conv(d1, w)?;
            g.bias_add(c, b)?
        };
        Ok(UNetTape {
            logits,
            param_nodes,
        })
    }

    /// Forward pass returning the logits tensor (`[num_classes, ...spatial]`).
    pub fn forward(&self, image: &Tensor, training: bool, dropout_seed: u64) -> Result<Tensor> {
        let mut g = Graph::new();
        let image_node = g.leaf(image.clone(), false);
        let tape = self.build_graph(&mut g, image_node, training, dropout_seed, false)?;
        Ok(g.value(tape.logits).clone())
    }

    /// Named views of every parameter tensor, in fixed order.
    pub fn named_tensors(&self) -> Vec<(&str, &Tensor)> {
        self.params
            .iter()
            .map(|p| (p.name.as_str(), &p.tensor))
            .collect()
    }

    /// Rebuild a network from named parameter tensors (checkpoint contents).
    ///
    /// The architecture is recovered from the kernel shapes; the dropout rate
    /// is not stored in checkpoints and defaults to 0 (inference).
    pub fn from_named(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let find = |name: &str| -> Result<&Tensor> {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Integrity(format!("checkpoint missing parameter {name}")))
        };
        let enc1a = find("enc1a.weight")?;
        if enc1a.rank() < 4 {
            return Err(Error::Integrity(format!(
                "enc1a.weight has rank {}, expected 4 or 5",
                enc1a.rank()
            )));
        }
        let spatial_rank = enc1a.rank() - 2;
        let in_channels = enc1a.shape()[1];
        let w0 = enc1a.shape()[0];
        let w1 = find("enc2a.weight")?.shape()[0];
        let w2 = find("bot_a.weight")?.shape()[0];
        let num_classes = find("out.weight")?.shape()[0];
        if spatial_rank != 2 && spatial_rank != 3 {
            return Err(Error::Integrity(format!(
                "checkpoint implies spatial rank {spatial_rank}"
            )));
        }

        let widths = [w0, w1, w2];
        let specs = conv_specs(in_channels, num_classes, widths);
        let mut params = Vec::with_capacity(specs.len() * 2);
        for spec in &specs {
            let wname = format!("{}.weight", spec.name);
            let bname = format!("{}.bias", spec.name);
            let weight = find(&wname)?;
            let bias = find(&bname)?;
            let expected = kernel_shape(spec, spatial_rank);
            if weight.shape() != expected.as_slice() {
                return Err(Error::Integrity(format!(
                    "{wname} has shape {:?}, expected {:?}",
                    weight.shape(),
                    expected
                )));
            }
            if bias.shape() != [spec.cout] {
                return Err(Error::Integrity(format!(
                    "{bname} has shape {:?}, expected [{}]",
                    bias.shape(),
                    spec.cout
                )));
            }
            params.push(NamedParam {
                name: wname,
                tensor: weight.clone(),
            });
            params.push(NamedParam {
                name: bname,
                tensor: bias.clone(),
            });
        }
        if entries.len() != params.len() {
            return Err(Error::Integrity(format!(
                "checkpoint has {} tensors, architecture expects {}",
                entries.len(),
                params.len()
            )));
        }
        Ok(UNetLite {
            spatial_rank,
            in_channels,
            num_classes,
            widths,
            dropout_rate: 0.0,
            params,
        })
    }
}
