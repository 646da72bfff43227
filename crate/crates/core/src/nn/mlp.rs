//! Dense multilayer perceptrons.

use rand::Rng;

use super::mat::{matmul_t, Mat};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Checkpoint tag.
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::config(format!("unknown activation `{other}`"))),
        }
    }
}

/// `y = activation(W x + b)` with `W: [out×in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    weight: Mat,
    bias: Mat,
    activation: Activation,
}

impl Layer {
    pub fn new(weight: Mat, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::config(format!(
                "bias length {} does not match weight rows {}",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Layer {
            weight,
            bias: Mat::row_vector(&bias),
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Mat {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        self.bias.data()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// Anything trainable: an ordered list of parameter tensors.
///
/// The order is stable and shared by gradients and optimizer moments.
pub trait Params {
    fn tensors(&self) -> Vec<&Mat>;
    fn tensors_mut(&mut self) -> Vec<&mut Mat>;

    fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|t| t.shape()).collect()
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("an MLP needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::config(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (k, l) in layers.iter().enumerate() {
            if !l.weight.is_finite() || !l.bias.is_finite() {
                return Err(Error::non_finite("mlp parameters", Some(k)));
            }
        }
        Ok(MlpParams { layers })
    }

    /// Uniform(−1/√fan_in, 1/√fan_in) initialisation for weights and biases.
    ///
    /// `sizes` lists every width including input and output; hidden layers use `hidden`,
    /// the last layer uses `output`.
    pub fn init<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let (fan_in, fan_out) = (sizes[k], sizes[k + 1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut draw = || rng.random_range(-bound..bound);
                let w: Vec<f64> = (0..fan_in * fan_out).map(|_| draw()).collect();
                let b: Vec<f64> = (0..fan_out).map(|_| draw()).collect();
                Layer {
                    weight: Mat::from_vec(fan_out, fan_in, w).expect("sized"),
                    bias: Mat::row_vector(&b),
                    activation: if k + 1 == n { output } else { hidden },
                }
            })
            .collect();
        MlpParams { layers }
    }

    /// All-zero network with the given widths.
    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| Layer {
                weight: Mat::zeros(sizes[k + 1], sizes[k]),
                bias: Mat::zeros(1, sizes[k + 1]),
                activation: if k + 1 == n { output } else { hidden },
            })
            .collect();
        MlpParams { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Single-input forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&Mat::row_vector(x))?.into_vec())
    }

    /// Forward pass over the rows of `x`.
    pub fn forward_batch(&self, x: &Mat) -> Result<Mat> {
        if x.cols() != self.in_dim() {
            return Err(Error::config(format!(
                "input width {} does not match network input {}",
                x.cols(),
                self.in_dim()
            )));
        }
        let mut h = x.clone();
        for layer in &self.layers {
            let mut z = matmul_t(&h, &layer.weight);
            for i in 0..z.rows() {
                for (v, b) in z.row_mut(i).iter_mut().zip(layer.bias.data()) {
                    *v = layer.activation.apply(*v + b);
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Places the parameters on `tape`, tracked or as constants.
    pub fn on_tape(&self, tape: &mut Tape, tracked: bool) -> MlpVars {
        let vars = self
            .tensors()
            .into_iter()
            .map(|t| {
                if tracked {
                    tape.input(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect::<Vec<_>>();
        self.bind(&vars)
    }

    /// Pairs already-placed tensor vars (in [`Params::tensors`] order) with this architecture.
    pub fn bind(&self, vars: &[Var]) -> MlpVars {
        assert_eq!(vars.len(), 2 * self.layers.len(), "var count mismatch");
        MlpVars {
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(k, l)| (vars[2 * k], vars[2 * k + 1], l.activation))
                .collect(),
        }
    }
}

impl Params for MlpParams {
    fn tensors(&self) -> Vec<&Mat> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// An MLP whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct MlpVars {
    layers: Vec<(Var, Var, Activation)>,
}

impl MlpVars {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for (k, &(w, b, act)) in self.layers.iter().enumerate() {
            tape.set_layer(Some(k));
            let z = tape.affine(h, w, b);
            h = tape.activation(z, act);
        }
        tape.set_layer(None);
        h
    }
}

/// Gradient of a scalar loss, one matrix per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient(pub Vec<Mat>);

impl Gradient {
    pub fn zeros_like<P: Params + ?Sized>(p: &P) -> Self {
        Gradient(
            p.tensors()
                .iter()
                .map(|t| Mat::zeros(t.rows(), t.cols()))
                .collect(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Mat::is_finite)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|m| m.data().iter().copied()).collect()
    }
}

/// Evaluates `loss` on a fresh tape with every tensor of `params` tracked, and returns the
/// loss value together with its gradient.
///
/// The closure receives the tracked vars in [`Params::tensors`] order.
pub fn grad<P, F>(params: &P, loss: F) -> Result<(f64, Gradient)>
where
    P: Params + ?Sized,
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let shapes = params.shapes();
    let vars: Vec<Var> = params
        .tensors()
        .into_iter()
        .map(|t| tape.input(t.clone()))
        .collect();
    let l = loss(&mut tape, &vars)?;
    tape.check_finite(l, "loss")?;
    let value = tape.scalar(l);
    let mut g = tape.backward(l);
    let grads = vars
        .iter()
        .zip(shapes)
        .map(|(&v, s)| g.take(v, s))
        .collect();
    Ok((value, Gradient(grads)))
}
