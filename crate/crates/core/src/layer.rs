//! Engine layers with exact layer-local backward passes.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::rng::{self, Purpose};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Relu,
    Conv2d,
    Flatten,
    SoftmaxOutput,
}

/// Layer description; input dimensions are inferred from the incoming shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense { outputs: usize },
    Relu,
    /// Valid (unpadded) stride-1 convolution over `[channels, height, width]`.
    Conv2d { out_channels: usize, kernel: usize },
    Flatten,
    /// Marks the logits. Forward is the identity; softmax is fused into the loss.
    SoftmaxOutput,
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Dense { .. } => LayerKind::Dense,
            LayerSpec::Relu => LayerKind::Relu,
            LayerSpec::Conv2d { .. } => LayerKind::Conv2d,
            LayerSpec::Flatten => LayerKind::Flatten,
            LayerSpec::SoftmaxOutput => LayerKind::SoftmaxOutput,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    spec: LayerSpec,
    index: usize,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    params: Vec<Tensor>,
    cached_input: Option<Tensor>,
}

impl Layer {
    /// Creates a layer at position `index` of its model with zeroed parameters.
    pub fn new(spec: LayerSpec, in_shape: &[usize], index: usize) -> Result<Self> {
        let invalid = |reason| Error::InvalidLayer { layer: index, shape: in_shape.to_vec(), reason };
        if in_shape.is_empty() || in_shape.contains(&0) {
            return Err(invalid("empty input shape"));
        }
        let (out_shape, params) = match spec {
            LayerSpec::Dense { outputs } => {
                if in_shape.len() != 1 {
                    return Err(invalid("dense expects a flat input; insert a flatten layer"));
                }
                if outputs == 0 {
                    return Err(invalid("dense needs at least one output"));
                }
                let inputs = in_shape[0];
                (vec![outputs], vec![Tensor::zeros(vec![outputs, inputs]), Tensor::zeros(vec![outputs])])
            }
            LayerSpec::Conv2d { out_channels, kernel } => {
                if in_shape.len() != 3 {
                    return Err(invalid("conv2d expects [channels, height, width]"));
                }
                if out_channels == 0 || kernel == 0 {
                    return Err(invalid("conv2d needs positive channels and kernel"));
                }
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                if h < kernel || w < kernel {
                    return Err(invalid("kernel larger than the image"));
                }
                (
                    vec![out_channels, h - kernel + 1, w - kernel + 1],
                    vec![Tensor::zeros(vec![out_channels, c, kernel, kernel]), Tensor::zeros(vec![out_channels])],
                )
            }
            LayerSpec::Relu => (in_shape.to_vec(), Vec::new()),
            LayerSpec::Flatten => (vec![in_shape.iter().product()], Vec::new()),
            LayerSpec::SoftmaxOutput => {
                if in_shape.len() != 1 {
                    return Err(invalid("softmax output expects flat logits"));
                }
                (in_shape.to_vec(), Vec::new())
            }
        };
        Ok(Self { spec, index, in_shape: in_shape.to_vec(), out_shape, params, cached_input: None })
    }

    /// Glorot-uniform weights and zero biases, drawn from a stream that depends
    /// only on `(seed, layer index)`.
    pub fn init_params(&mut self, seed: u64) {
        let (fan_in, fan_out) = match self.spec {
            LayerSpec::Dense { outputs } => (self.in_shape[0], outputs),
            LayerSpec::Conv2d { out_channels, kernel } => {
                (self.in_shape[0] * kernel * kernel, out_channels * kernel * kernel)
            }
            _ => return,
        };
        let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        let mut rng = rng::stream(seed, Purpose::Init, &[self.index as u64]);
        for w in self.params[0].data_mut() {
            *w = rng.random_range(-limit..=limit);
        }
        self.params[1].data_mut().fill(0.0);
    }

    pub fn spec(&self) -> LayerSpec {
        self.spec
    }

    pub fn kind(&self) -> LayerKind {
        self.spec.kind()
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub(crate) fn set_index(&mut self, index: usize) {
        self.index = index;
    }

    pub fn in_shape(&self) -> &[usize] {
        &self.in_shape
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn clear_cache(&mut self) {
        self.cached_input = None;
    }

    pub fn has_cached_input(&self) -> bool {
        self.cached_input.is_some()
    }

    pub fn forward(&mut self, x: Tensor) -> Result<Tensor> {
        if x.shape().len() < 2 || x.sample_shape() != self.in_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                layer: self.index,
                expected: self.in_shape.clone(),
                found: x.shape().get(1..).unwrap_or(&[]).to_vec(),
            });
        }
        let y = match self.spec {
            LayerSpec::Dense { .. } => self.dense_forward(&x),
            LayerSpec::Conv2d { .. } => self.conv_forward(&x),
            LayerSpec::Relu => {
                let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                Tensor::new(x.shape().to_vec(), data)?
            }
            LayerSpec::Flatten => {
                let rows = x.rows();
                let width = x.row_len();
                Tensor::new(vec![rows, width], x.data().to_vec())?
            }
            LayerSpec::SoftmaxOutput => x.clone(),
        };
        self.cached_input = Some(x);
        Ok(y)
    }

    /// Consumes the cached input. Returns parameter gradients (same order as
    /// [`Layer::params`]) and the gradient with respect to the layer input.
    pub fn backward(&mut self, grad_out: Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        let x = self.cached_input.take().ok_or(Error::BackwardBeforeForward { layer: self.index })?;
        let mut expected = vec![x.rows()];
        expected.extend_from_slice(&self.out_shape);
        if grad_out.shape() != expected.as_slice() {
            let found = grad_out.shape().to_vec();
            return Err(Error::ShapeMismatch { layer: self.index, expected, found });
        }
        match self.spec {
            LayerSpec::Dense { .. } => Ok(self.dense_backward(&x, &grad_out)),
            LayerSpec::Conv2d { .. } => Ok(self.conv_backward(&x, &grad_out)),
            LayerSpec::Relu => {
                let data = x
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
                    .collect();
                Ok((Vec::new(), Tensor::new(x.shape().to_vec(), data)?))
            }
            LayerSpec::Flatten => Ok((Vec::new(), grad_out.reshape(x.shape().to_vec())?)),
            LayerSpec::SoftmaxOutput => Ok((Vec::new(), grad_out)),
        }
    }

    fn dense_forward(&self, x: &Tensor) -> Tensor {
        let (w, b) = (&self.params[0], &self.params[1]);
        let (outputs, inputs) = (w.shape()[0], w.shape()[1]);
        let rows = x.rows();
        let mut y = Vec::with_capacity(rows * outputs);
        for n in 0..rows {
            let xr = x.row(n);
            for o in 0..outputs {
                let wr = &w.data()[o * inputs..(o + 1) * inputs];
                let mut s = b.data()[o];
                for i in 0..inputs {
                    s += wr[i] * xr[i];
                }
                y.push(s);
            }
        }
        Tensor::new(vec![rows, outputs], y).expect("dense output shape")
    }

    fn dense_backward(&self, x: &Tensor, g: &Tensor) -> (Vec<Tensor>, Tensor) {
        let w = &self.params[0];
        let (outputs, inputs) = (w.shape()[0], w.shape()[1]);
        let rows = x.rows();
        let mut dw = vec![0.0; outputs * inputs];
        let mut db = vec![0.0; outputs];
        let mut dx = vec![0.0; rows * inputs];
        for n in 0..rows {
            let xr = x.row(n);
            let gr = g.row(n);
            let dxr = &mut dx[n * inputs..(n + 1) * inputs];
            for o in 0..outputs {
                let go = gr[o];
                db[o] += go;
                let wr = &w.data()[o * inputs..(o + 1) * inputs];
                let dwr = &mut dw[o * inputs..(o + 1) * inputs];
                for i in 0..inputs {
                    dwr[i] += go * xr[i];
                    dxr[i] += go * wr[i];
                }
            }
        }
        (
            vec![Tensor::from_parts(vec![outputs, inputs], dw), Tensor::from_parts(vec![outputs], db)],
            Tensor::from_parts(x.shape().to_vec(), dx),
        )
    }

    fn conv_dims(&self) -> ConvDims {
        let k = self.params[0].shape()[2];
        ConvDims {
            cin: self.in_shape[0],
            h: self.in_shape[1],
            w: self.in_shape[2],
            cout: self.out_shape[0],
            oh: self.out_shape[1],
            ow: self.out_shape[2],
            k,
        }
    }

    fn conv_forward(&self, x: &Tensor) -> Tensor {
        let d = self.conv_dims();
        let (wt, b) = (self.params[0].data(), self.params[1].data());
        let rows = x.rows();
        let mut y = vec![0.0; rows * d.cout * d.oh * d.ow];
        for n in 0..rows {
            let xr = x.row(n);
            for o in 0..d.cout {
                for p in 0..d.oh {
                    for q in 0..d.ow {
                        let mut s = b[o];
                        for c in 0..d.cin {
                            for i in 0..d.k {
                                for j in 0..d.k {
                                    s += wt[d.widx(o, c, i, j)] * xr[d.xidx(c, p + i, q + j)];
                                }
                            }
                        }
                        y[((n * d.cout + o) * d.oh + p) * d.ow + q] = s;
                    }
                }
            }
        }
        Tensor::new(vec![rows, d.cout, d.oh, d.ow], y).expect("conv output shape")
    }

    fn conv_backward(&self, x: &Tensor, g: &Tensor) -> (Vec<Tensor>, Tensor) {
        let d = self.conv_dims();
        let wt = self.params[0].data();
        let rows = x.rows();
        let mut dw = vec![0.0; wt.len()];
        let mut db = vec![0.0; d.cout];
        let mut dx = vec![0.0; x.len()];
        let xlen = x.row_len();
        for n in 0..rows {
            let xr = x.row(n);
            let gr = g.row(n);
            let dxr = &mut dx[n * xlen..(n + 1) * xlen];
            for o in 0..d.cout {
                for p in 0..d.oh {
                    for q in 0..d.ow {
                        let go = gr[(o * d.oh + p) * d.ow + q];
                        db[o] += go;
                        for c in 0..d.cin {
                            for i in 0..d.k {
                                for j in 0..d.k {
                                    let wi = d.widx(o, c, i, j);
                                    let xi = d.xidx(c, p + i, q + j);
                                    dw[wi] += go * xr[xi];
                                    dxr[xi] += go * wt[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
        (
            vec![
                Tensor::from_parts(self.params[0].shape().to_vec(), dw),
                Tensor::from_parts(vec![d.cout], db),
            ],
            Tensor::from_parts(x.shape().to_vec(), dx),
        )
    }
}

struct ConvDims {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    k: usize,
}

impl ConvDims {
    fn widx(&self, o: usize, c: usize, i: usize, j: usize) -> usize {
        ((o * self.cin + c) * self.k + i) * self.k + j
    }

    fn xidx(&self, c: usize, r: usize, s: usize) -> usize {
        (c * self.h + r) * self.w + s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(w: &[f64], b: &[f64], inputs: usize) -> Layer {
        let mut l = Layer::new(LayerSpec::Dense { outputs: b.len() }, &[inputs], 0).unwrap();
        l.params_mut()[0].data_mut().copy_from_slice(w);
        l.params_mut()[1].data_mut().copy_from_slice(b);
        l
    }

    #[test]
    fn identity_dense_passes_input() {
        let mut l = dense(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 2);
        let y = l.forward(Tensor::from_rows(&[&[1.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0]);
    }

    #[test]
    fn dense_by_hand() {
        let mut l = dense(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0], 2);
        let y = l.forward(Tensor::from_rows(&[&[1.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn dense_backward_by_hand() {
        let mut l = dense(&[2.0], &[0.0], 1);
        l.forward(Tensor::from_rows(&[&[3.0]]).unwrap()).unwrap();
        let (grads, gin) = l.backward(Tensor::from_rows(&[&[1.0]]).unwrap()).unwrap();
        assert_eq!(grads[0].data(), &[3.0]);
        assert_eq!(grads[1].data(), &[1.0]);
        assert_eq!(gin.data(), &[2.0]);
    }

    #[test]
    fn relu_forward_and_gate() {
        let mut l = Layer::new(LayerSpec::Relu, &[3], 0).unwrap();
        let y = l.forward(Tensor::from_rows(&[&[-1.0, 2.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 0.0]);

        let mut l = Layer::new(LayerSpec::Relu, &[2], 0).unwrap();
        l.forward(Tensor::from_rows(&[&[-1.0, 2.0]]).unwrap()).unwrap();
        let (grads, gin) = l.backward(Tensor::from_rows(&[&[5.0, 5.0]]).unwrap()).unwrap();
        assert!(grads.is_empty());
        assert_eq!(gin.data(), &[0.0, 5.0]);
    }

    #[test]
    fn backward_requires_forward() {
        let mut l = Layer::new(LayerSpec::Relu, &[2], 4).unwrap();
        let err = l.backward(Tensor::from_rows(&[&[1.0, 1.0]]).unwrap()).unwrap_err();
        assert_eq!(err, Error::BackwardBeforeForward { layer: 4 });
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let mut l = Layer::new(LayerSpec::Dense { outputs: 2 }, &[3], 5).unwrap();
        let err = l.forward(Tensor::from_rows(&[&[1.0, 1.0]]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { layer: 5, .. }));
    }

    #[test]
    fn conv_output_shape_and_box_filter() {
        let mut l = Layer::new(LayerSpec::Conv2d { out_channels: 1, kernel: 2 }, &[1, 3, 3], 0).unwrap();
        assert_eq!(l.out_shape(), &[1, 2, 2]);
        l.params_mut()[0].data_mut().fill(1.0);
        let x = Tensor::new(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let y = l.forward(x).unwrap();
        // 2x2 window sums of [[1,2,3],[4,5,6],[7,8,9]]
        assert_eq!(y.data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn init_is_reproducible_and_bounded() {
        let mut a = Layer::new(LayerSpec::Dense { outputs: 8 }, &[4], 3).unwrap();
        let mut b = a.clone();
        a.init_params(7);
        b.init_params(7);
        assert_eq!(a.params(), b.params());
        let limit = libm::sqrt(6.0 / 12.0);
        assert!(a.params()[0].data().iter().all(|w| w.abs() <= limit));
        assert!(a.params()[1].data().iter().all(|&v| v == 0.0));
    }
}
