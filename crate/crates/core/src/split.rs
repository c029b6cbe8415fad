//! Cutting a model into a client half (blocks `1..=L_c`) and a training-server
//! half (blocks `L_c+1..=L`).

use alloc::vec::Vec;

use crate::{Error, LayeredModel, Loss, Result, Tensor};

/// Labels travel as 32-bit integers.
pub const LABEL_BYTES_PER_SAMPLE: usize = 4;

#[derive(Debug, Clone)]
pub struct SplitModel {
    client: LayeredModel,
    server: LayeredModel,
    cut: usize,
    full_blocks: usize,
}

/// What crosses the wire for one cut choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CutPayloadProfile {
    /// Cut-layer output elements per sample.
    pub activation_elems: usize,
    pub label_bytes_per_sample: usize,
    pub client_param_count: usize,
    pub server_param_count: usize,
}

/// Result of one training-server pass. No parameters are changed.
#[derive(Debug, Clone)]
pub struct ServerPass {
    pub loss: f64,
    pub param_grads: Vec<Tensor>,
    pub grad_activations: Tensor,
}

impl SplitModel {
    /// Splits at `1 ≤ cut ≤ L−1`. The source model is left untouched.
    pub fn split(model: &LayeredModel, cut: usize) -> Result<Self> {
        let blocks = model.num_blocks();
        if cut == 0 || cut >= blocks {
            return Err(Error::CutOutOfRange { cut, min: 1, max: blocks.saturating_sub(1) });
        }
        Self::split_limit(model, cut)
    }

    /// Like [`SplitModel::split`] but also accepts the degenerate cuts `0`
    /// (everything on the server) and `L` (everything on the client).
    pub fn split_limit(model: &LayeredModel, cut: usize) -> Result<Self> {
        let (client, server) = model.split_at_block(cut)?;
        Ok(Self { client, server, cut, full_blocks: model.num_blocks() })
    }

    pub fn client(&self) -> &LayeredModel {
        &self.client
    }

    pub fn server(&self) -> &LayeredModel {
        &self.server
    }

    pub fn client_mut(&mut self) -> &mut LayeredModel {
        &mut self.client
    }

    pub fn server_mut(&mut self) -> &mut LayeredModel {
        &mut self.server
    }

    pub fn cut(&self) -> usize {
        self.cut
    }

    pub fn full_blocks(&self) -> usize {
        self.full_blocks
    }

    pub fn into_halves(self) -> (LayeredModel, LayeredModel) {
        (self.client, self.server)
    }

    pub fn stitch(&self) -> LayeredModel {
        LayeredModel::concat(&self.client, &self.server).expect("halves of one model compose")
    }

    pub fn client_forward(&mut self, batch: Tensor) -> Result<Tensor> {
        client_forward(&mut self.client, batch)
    }

    pub fn server_forward_backward(&mut self, activations: Tensor, labels: &[usize], loss: Loss) -> Result<ServerPass> {
        server_forward_backward(&mut self.server, activations, labels, loss)
    }

    pub fn client_backward(&mut self, grad_activations: Tensor) -> Result<Vec<Tensor>> {
        client_backward(&mut self.client, grad_activations)
    }

    pub fn payload_profile(&self) -> CutPayloadProfile {
        payload_profile(&self.client, &self.server)
    }
}

/// Client half forward; the output is the activation tensor sent to the server.
pub fn client_forward(client: &mut LayeredModel, batch: Tensor) -> Result<Tensor> {
    client.forward(batch)
}

/// Server half forward, loss, and backward down to the cut.
pub fn server_forward_backward(
    server: &mut LayeredModel,
    activations: Tensor,
    labels: &[usize],
    loss: Loss,
) -> Result<ServerPass> {
    let logits = server.forward(activations)?;
    let (value, grad_logits) = loss.evaluate(&logits, labels)?;
    let (param_grads, grad_activations) = server.backward(grad_logits)?;
    Ok(ServerPass { loss: value, param_grads, grad_activations })
}

/// Finishes backpropagation on the client from the returned cut gradient.
pub fn client_backward(client: &mut LayeredModel, grad_activations: Tensor) -> Result<Vec<Tensor>> {
    Ok(client.backward(grad_activations)?.0)
}

pub fn payload_profile(client: &LayeredModel, server: &LayeredModel) -> CutPayloadProfile {
    CutPayloadProfile {
        activation_elems: client.output_len(),
        label_bytes_per_sample: LABEL_BYTES_PER_SAMPLE,
        client_param_count: client.param_count(),
        server_param_count: server.param_count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{LayerSpec, ModelSpec};
    use alloc::vec;

    fn mlp() -> LayeredModel {
        LayeredModel::build(&ModelSpec::mlp(4, &[8, 8, 8], 3), 13).unwrap()
    }

    #[test]
    fn cut_range_enforced() {
        let m = mlp();
        assert!(matches!(SplitModel::split(&m, 0), Err(Error::CutOutOfRange { .. })));
        assert!(matches!(SplitModel::split(&m, 4), Err(Error::CutOutOfRange { .. })));
        assert!(SplitModel::split_limit(&m, 0).is_ok());
        assert!(SplitModel::split_limit(&m, 4).is_ok());
        assert!(SplitModel::split_limit(&m, 5).is_err());
    }

    #[test]
    fn four_layer_model_cut_one() {
        let spec = ModelSpec::flat(
            vec![4],
            &[LayerSpec::Dense { outputs: 3 }, LayerSpec::Relu, LayerSpec::Dense { outputs: 2 }, LayerSpec::SoftmaxOutput],
        );
        let m = LayeredModel::build(&spec, 1).unwrap();
        let sm = SplitModel::split(&m, 1).unwrap();
        assert_eq!(sm.client().num_layers(), 1);
        assert_eq!(sm.server().num_layers(), 3);
    }

    #[test]
    fn payload_profile_counts() {
        let m = mlp();
        let p1 = SplitModel::split(&m, 1).unwrap().payload_profile();
        assert_eq!(p1.activation_elems, 8);
        assert_eq!(p1.client_param_count, 4 * 8 + 8);
        let p3 = SplitModel::split(&m, 3).unwrap().payload_profile();
        assert_eq!(p3.client_param_count, 40 + 72 + 72);
        for cut in 1..4 {
            let p = SplitModel::split(&m, cut).unwrap().payload_profile();
            assert_eq!(p.client_param_count + p.server_param_count, m.param_count());
        }
    }

    #[test]
    fn split_does_not_alias_source() {
        let m = mlp();
        let before = m.flatten_params();
        let mut sm = SplitModel::split(&m, 2).unwrap();
        for p in sm.client_mut().params_mut() {
            p.data_mut().fill(9.0);
        }
        assert_eq!(m.flatten_params(), before);
    }

    #[test]
    fn identity_client_half_emits_input() {
        let spec = ModelSpec::flat(vec![2], &[LayerSpec::Dense { outputs: 2 }, LayerSpec::Dense { outputs: 2 }]);
        let mut m = LayeredModel::build(&spec, 1).unwrap();
        let mut p = m.flatten_params();
        p[..6].copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        m.load_params(&p).unwrap();
        let mut sm = SplitModel::split(&m, 1).unwrap();
        let x = Tensor::from_rows(&[&[0.5, -2.0]]).unwrap();
        assert_eq!(sm.client_forward(x.clone()).unwrap(), x);
    }

    #[test]
    fn zero_cut_gradient_gives_zero_client_gradients() {
        let mut sm = SplitModel::split(&mlp(), 2).unwrap();
        let a = sm.client_forward(Tensor::new(vec![2, 4], vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8]).unwrap()).unwrap();
        let grads = sm.client_backward(a.zeros_like()).unwrap();
        assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn client_backward_requires_forward() {
        let mut sm = SplitModel::split(&mlp(), 1).unwrap();
        assert!(matches!(sm.client_backward(Tensor::zeros(vec![1, 8])), Err(Error::BackwardBeforeForward { .. })));
    }

    #[test]
    fn uniform_logits_on_softmax_server() {
        let spec = ModelSpec::flat(vec![3], &[LayerSpec::Relu, LayerSpec::SoftmaxOutput]);
        let m = LayeredModel::build(&spec, 1).unwrap();
        let mut sm = SplitModel::split(&m, 1).unwrap();
        let pass = sm
            .server_forward_backward(Tensor::from_rows(&[&[0.4, 0.4, 0.4]]).unwrap(), &[1], Loss::CrossEntropy)
            .unwrap();
        assert!((pass.loss - libm::log(3.0)).abs() < 1e-12);
    }
}
