//! Feed-forward networks: ReLU hidden layers with either a plain linear
//! output or a diagonal-Gaussian head split into mean and log-std halves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, Var};
use crate::tensor::{Real, Tensor};

/// Output head of an [`Mlp`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Head {
    Plain,
    /// Final width is split into (mean, log-std); log-std is clamped to the
    /// given closed interval before any density evaluation or sampling.
    Gaussian { min_log_std: f64, max_log_std: f64 },
}

/// Layer widths (input first) plus the head kind.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub head: Head,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, head: Head) -> Self {
        assert!(widths.len() >= 3, "an MLP needs at least one hidden layer, got widths {widths:?}");
        assert!(widths.iter().all(|&w| w > 0), "zero-width layer in {widths:?}");
        if let Head::Gaussian { min_log_std, max_log_std } = head {
            let out = *widths.last().unwrap();
            assert_eq!(out % 2, 0, "Gaussian head output width {out} must be even");
            assert!(min_log_std < max_log_std, "empty log-std interval");
        }
        MlpSpec { widths, head }
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }
}

/// Output of one forward pass.
pub enum MlpOut {
    Plain(Var),
    Gaussian { mean: Var, log_std: Var },
}

impl MlpOut {
    pub fn plain(self) -> Var {
        match self {
            MlpOut::Plain(v) => v,
            MlpOut::Gaussian { .. } => panic!("expected plain head"),
        }
    }

    pub fn gaussian(self) -> (Var, Var) {
        match self {
            MlpOut::Gaussian { mean, log_std } => (mean, log_std),
            MlpOut::Plain(_) => panic!("expected Gaussian head"),
        }
    }
}

/// Parameter handles of a network bound into one graph, in `[w0, b0, w1, ...]`
/// order matching [`Mlp::params`].
pub struct MlpVars {
    pub vars: Vec<Var>,
}

/// A network: spec plus owned parameter tensors, `[w0, b0, w1, b1, ...]`
/// with weight `i` shaped `[widths[i], widths[i+1]]`.
#[derive(Debug, Clone)]
pub struct Mlp<T: Real> {
    spec: MlpSpec,
    params: Vec<Tensor<T>>,
}

impl<T: Real> Mlp<T> {
    /// Initialize every weight and bias uniformly in `±1/sqrt(fan_in)` from
    /// the given seed. Draw order is layer by layer, weights then bias,
    /// row-major, so a seed pins the network exactly.
    pub fn init(spec: MlpSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(2 * spec.layer_count());
        for l in 0..spec.layer_count() {
            let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = |n: usize| -> Vec<T> {
                (0..n).map(|_| T::from_f64((rng.gen::<f64>() * 2.0 - 1.0) * bound)).collect()
            };
            params.push(Tensor::new(vec![fan_in, fan_out], draw(fan_in * fan_out)).with_grad());
            params.push(Tensor::new(vec![fan_out], draw(fan_out)).with_grad());
        }
        Mlp { spec, params }
    }

    pub fn from_params(spec: MlpSpec, params: Vec<Tensor<T>>) -> Self {
        assert_eq!(params.len(), 2 * spec.layer_count(), "wrong parameter count for {:?}", spec.widths);
        for l in 0..spec.layer_count() {
            assert_eq!(
                params[2 * l].shape(),
                &[spec.widths[l], spec.widths[l + 1]],
                "layer {l} weight shape mismatch"
            );
            assert_eq!(params[2 * l + 1].shape(), &[spec.widths[l + 1]], "layer {l} bias shape mismatch");
        }
        Mlp { spec, params }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    /// Bind parameters into `g` as gradient-requiring leaves.
    pub fn bind(&self, g: &Graph<T>) -> MlpVars {
        MlpVars { vars: self.params.iter().map(|p| g.input(p)).collect() }
    }

    /// Bind parameters as constants; forwards through these variables carry
    /// no gradient (used for target networks and reward terms).
    pub fn bind_const(&self, g: &Graph<T>) -> MlpVars {
        MlpVars { vars: self.params.iter().map(|p| g.input_const(p)).collect() }
    }

    /// Graph-recorded forward pass for a `[batch, input_dim]` operand.
    pub fn apply(&self, g: &Graph<T>, vars: &MlpVars, x: Var) -> MlpOut {
        let in_width = g.shape_of(x);
        assert_eq!(
            in_width.len(),
            2,
            "mlp_apply expects [batch, {}] input, got shape {in_width:?}",
            self.spec.input_dim()
        );
        assert_eq!(
            in_width[1],
            self.spec.input_dim(),
            "mlp_apply layer 0: input width {} does not match spec width {}",
            in_width[1],
            self.spec.input_dim()
        );
        let mut h = x;
        let layers = self.spec.layer_count();
        for l in 0..layers {
            h = g.add_bias(g.matmul(h, vars.vars[2 * l]), vars.vars[2 * l + 1]);
            if l + 1 < layers {
                h = g.relu(h);
            }
        }
        match self.spec.head {
            Head::Plain => MlpOut::Plain(h),
            Head::Gaussian { min_log_std, max_log_std } => {
                let half = self.spec.output_dim() / 2;
                let mean = g.slice_cols(h, 0, half);
                let log_std = g.clamp(
                    g.slice_cols(h, half, half),
                    T::from_f64(min_log_std),
                    T::from_f64(max_log_std),
                );
                MlpOut::Gaussian { mean, log_std }
            }
        }
    }

    /// Forward pass without recording gradients, on a plain tensor.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let g = Graph::new();
        let vars = self.bind_const(&g);
        let xv = g.input_const(x);
        match self.apply(&g, &vars, xv) {
            MlpOut::Plain(v) => g.value(v),
            MlpOut::Gaussian { .. } => panic!("forward on a Gaussian head; use forward_gaussian"),
        }
    }

    /// No-grad forward returning (mean, clamped log-std).
    pub fn forward_gaussian(&self, x: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let g = Graph::new();
        let vars = self.bind_const(&g);
        let xv = g.input_const(x);
        match self.apply(&g, &vars, xv) {
            MlpOut::Gaussian { mean, log_std } => (g.value(mean), g.value(log_std)),
            MlpOut::Plain(_) => panic!("forward_gaussian on a plain head"),
        }
    }
}
