//! Ordered layer stacks grouped into named blocks.
//!
//! Cut indices count blocks, not primitive layers: a block such as
//! `dense → relu` is the unit a network is split at, mirroring the
//! block-boundary cuts of larger architectures.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::layer::{Layer, LayerSpec};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Per-sample input shape.
    pub input_shape: Vec<usize>,
    pub blocks: Vec<BlockSpec>,
}

impl ModelSpec {
    /// `input → hidden[0] → … → classes`, one block per dense layer. Hidden
    /// blocks are `dense, relu`; the last is `dense, softmax-output`.
    pub fn mlp(inputs: usize, hidden: &[usize], classes: usize) -> Self {
        let mut blocks: Vec<BlockSpec> = hidden
            .iter()
            .enumerate()
            .map(|(i, &h)| BlockSpec {
                name: format!("block{}", i + 1),
                layers: vec![LayerSpec::Dense { outputs: h }, LayerSpec::Relu],
            })
            .collect();
        blocks.push(BlockSpec {
            name: format!("block{}", hidden.len() + 1),
            layers: vec![LayerSpec::Dense { outputs: classes }, LayerSpec::SoftmaxOutput],
        });
        Self { input_shape: vec![inputs], blocks }
    }

    /// Four-block convolutional model for `[channels, h, w]` images.
    pub fn small_conv(input_shape: [usize; 3], classes: usize) -> Self {
        let block = |i: usize, layers: Vec<LayerSpec>| BlockSpec { name: format!("block{i}"), layers };
        Self {
            input_shape: input_shape.to_vec(),
            blocks: vec![
                block(1, vec![LayerSpec::Conv2d { out_channels: 4, kernel: 3 }, LayerSpec::Relu]),
                block(2, vec![LayerSpec::Conv2d { out_channels: 4, kernel: 3 }, LayerSpec::Relu, LayerSpec::Flatten]),
                block(3, vec![LayerSpec::Dense { outputs: 32 }, LayerSpec::Relu]),
                block(4, vec![LayerSpec::Dense { outputs: classes }, LayerSpec::SoftmaxOutput]),
            ],
        }
    }

    /// Every layer in its own block.
    pub fn flat(input_shape: Vec<usize>, layers: &[LayerSpec]) -> Self {
        let blocks = layers
            .iter()
            .enumerate()
            .map(|(i, &l)| BlockSpec { name: format!("layer{}", i + 1), layers: vec![l] })
            .collect();
        Self { input_shape, blocks }
    }
}

#[derive(Debug, Clone)]
pub struct LayeredModel {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// Exclusive end (layer index) of each block.
    block_ends: Vec<usize>,
    block_names: Vec<String>,
}

impl LayeredModel {
    /// Builds and initializes a model. Parameters depend only on `(seed, layer index)`.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let mut model = Self::empty(&spec.input_shape)?;
        for block in &spec.blocks {
            if block.layers.is_empty() {
                return Err(Error::InvalidArgument(format!("block {} has no layers", block.name)));
            }
            for &ls in &block.layers {
                let idx = model.layers.len();
                let mut layer = Layer::new(ls, model.output_shape(), idx)?;
                layer.init_params(seed);
                model.layers.push(layer);
            }
            model.block_ends.push(model.layers.len());
            model.block_names.push(block.name.clone());
        }
        Ok(model)
    }

    /// Zero-layer model: forward and backward are the identity.
    pub fn empty(input_shape: &[usize]) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::EmptyShape(input_shape.to_vec()));
        }
        Ok(Self { input_shape: input_shape.to_vec(), layers: Vec::new(), block_ends: Vec::new(), block_names: Vec::new() })
    }

    pub fn spec(&self) -> ModelSpec {
        let mut start = 0;
        let blocks = self
            .block_ends
            .iter()
            .zip(&self.block_names)
            .map(|(&end, name)| {
                let layers = self.layers[start..end].iter().map(Layer::spec).collect();
                start = end;
                BlockSpec { name: name.clone(), layers }
            })
            .collect();
        ModelSpec { input_shape: self.input_shape.clone(), blocks }
    }

    /// Number of blocks, the unit cut indices refer to.
    pub fn num_blocks(&self) -> usize {
        self.block_ends.len()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn block_names(&self) -> &[String] {
        &self.block_names
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.layers.last().map_or(&self.input_shape, |l| l.out_shape())
    }

    /// Per-sample output element count.
    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| l.params().iter())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut().iter_mut())
    }

    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in self.params() {
            out.extend_from_slice(p.data());
        }
        out
    }

    pub fn load_params(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if values.len() != expected {
            return Err(Error::ParamCount { expected, found: values.len() });
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Copies parameters from a model of identical architecture.
    pub fn copy_params_from(&mut self, other: &LayeredModel) -> Result<()> {
        if self.param_count() != other.param_count() {
            return Err(Error::ParamCount { expected: self.param_count(), found: other.param_count() });
        }
        for (dst, src) in self.params_mut().zip(other.params()) {
            if dst.shape() != src.shape() {
                return Err(Error::GradientMismatch("parameter shapes differ"));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Runs every layer, caching inputs for [`LayeredModel::backward`].
    pub fn forward(&mut self, x: Tensor) -> Result<Tensor> {
        if x.shape().len() < 2 || x.sample_shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                layer: self.layers.first().map_or(0, Layer::index),
                expected: self.input_shape.clone(),
                found: x.shape().get(1..).unwrap_or(&[]).to_vec(),
            });
        }
        self.layers.iter_mut().try_fold(x, |h, layer| layer.forward(h))
    }

    /// Returns gradients for every parameter tensor, in [`LayeredModel::params`]
    /// order, and the gradient with respect to the model input.
    pub fn backward(&mut self, grad_out: Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut g = grad_out;
        for layer in self.layers.iter_mut().rev() {
            let (pg, gin) = layer.backward(g)?;
            per_layer.push(pg);
            g = gin;
        }
        let grads = per_layer.into_iter().rev().flatten().collect();
        Ok((grads, g))
    }

    /// Drops cached forward inputs.
    pub fn clear_caches(&mut self) {
        for layer in &mut self.layers {
            layer.clear_cache();
        }
    }

    /// Deep-copies blocks `[0, cut)` and `[cut, L)`. `cut` may be `0` or `L`,
    /// giving an empty half.
    pub fn split_at_block(&self, cut: usize) -> Result<(LayeredModel, LayeredModel)> {
        let blocks = self.num_blocks();
        if cut > blocks {
            return Err(Error::CutOutOfRange { cut, min: 0, max: blocks });
        }
        let at = if cut == 0 { 0 } else { self.block_ends[cut - 1] };
        let client = LayeredModel {
            input_shape: self.input_shape.clone(),
            layers: self.layers[..at].to_vec(),
            block_ends: self.block_ends[..cut].to_vec(),
            block_names: self.block_names[..cut].to_vec(),
        };
        let server = LayeredModel {
            input_shape: client.output_shape().to_vec(),
            layers: self.layers[at..].to_vec(),
            block_ends: self.block_ends[cut..].iter().map(|e| e - at).collect(),
            block_names: self.block_names[cut..].to_vec(),
        };
        Ok((client, server))
    }

    /// Joins two halves back into one model; layer indices are renumbered from zero.
    pub fn concat(front: &LayeredModel, back: &LayeredModel) -> Result<LayeredModel> {
        if front.output_shape() != back.input_shape() {
            return Err(Error::ShapeMismatch {
                layer: front.num_layers(),
                expected: back.input_shape().to_vec(),
                found: front.output_shape().to_vec(),
            });
        }
        let offset = front.num_layers();
        let mut layers = front.layers.clone();
        layers.extend(back.layers.iter().cloned());
        for (i, l) in layers.iter_mut().enumerate() {
            l.set_index(i);
        }
        let mut block_ends = front.block_ends.clone();
        block_ends.extend(back.block_ends.iter().map(|e| e + offset));
        let mut block_names = front.block_names.clone();
        block_names.extend(back.block_names.iter().cloned());
        Ok(LayeredModel { input_shape: front.input_shape.clone(), layers, block_ends, block_names })
    }
}
