use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and the output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            _ => Err(Error::Format(format!("unknown activation '{s}'"))),
        }
    }
}

/// Affine layer `y = act(x W + b)` with `W` of shape `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }
    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }
    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Multilayer perceptron over row-major batches (`batch x features`).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    seed: u64,
}

/// Activations recorded by [`Mlp::forward_taped`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    dims: Vec<usize>,
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    outputs: Vec<Array2<f64>>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }
    pub fn output(&self) -> Option<&Array2<f64>> {
        self.outputs.last()
    }
}

/// Parameter gradient (flattened like [`Mlp::params`]) and input gradient.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Array2<f64>,
}

impl Mlp {
    /// He-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases.
    pub fn new(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return domain(format!(
                "{} dims need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            ));
        }
        if dims.contains(&0) {
            return domain("layer widths must be positive");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &activation)| {
                let bound = (6.0 / d[0] as f64).sqrt();
                Dense {
                    weight: Array2::from_shape_fn((d[0], d[1]), |_| rng.random_range(-bound..bound)),
                    bias: Array1::zeros(d[1]),
                    activation,
                }
            })
            .collect();
        Ok(Self { layers, seed })
    }

    pub fn from_layers(layers: Vec<Dense>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return domain("an MLP needs at least one layer");
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.output_dim() {
                return domain(format!("layer {k}: bias length {} != width {}", l.bias.len(), l.output_dim()));
            }
            if k > 0 && layers[k - 1].output_dim() != l.input_dim() {
                return domain(format!(
                    "layer {k} expects {} inputs but layer {} has {} outputs",
                    l.input_dim(),
                    k - 1,
                    layers[k - 1].output_dim()
                ));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return domain(format!("layer {k} has non-finite parameters"));
            }
        }
        Ok(Self { layers, seed })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }
    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.output_dim()))
            .collect()
    }
    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }
    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.n_params()).sum()
    }

    /// All parameters: per layer the weight matrix row-major, then the bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_params() {
            return domain(format!("expected {} parameters, got {}", self.n_params(), p.len()));
        }
        let mut k = 0;
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = p[k];
                k += 1;
            }
            for b in l.bias.iter_mut() {
                *b = p[k];
                k += 1;
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return domain(format!("batch has {} features, model expects {}", x.ncols(), self.input_dim()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut a = x.clone();
        for l in &self.layers {
            let mut z = a.dot(&l.weight);
            z += &l.bias;
            z.mapv_inplace(|v| l.activation.apply(v));
            a = z;
        }
        Ok(a)
    }

    pub fn forward_taped(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_input(x)?;
        let mut tape = Tape {
            dims: self.dims(),
            ..Tape::default()
        };
        let mut a = x.clone();
        for l in &self.layers {
            let mut z = a.dot(&l.weight);
            z += &l.bias;
            let out = z.mapv(|v| l.activation.apply(v));
            tape.inputs.push(a);
            tape.pre.push(z);
            a = out.clone();
            tape.outputs.push(out);
        }
        Ok((a, tape))
    }

    /// Reverse-mode gradients of a loss whose gradient w.r.t. the output is `dy`.
    pub fn backward(&self, tape: &Tape, dy: &Array2<f64>) -> Result<Gradients> {
        if tape.inputs.len() != self.layers.len() || tape.dims != self.dims() {
            return Err(Error::State(
                "backward needs a tape recorded by forward_taped on this model".into(),
            ));
        }
        let n = tape.batch_size();
        if dy.dim() != (n, self.output_dim()) {
            return domain(format!(
                "output gradient has shape {:?}, expected ({n}, {})",
                dy.dim(),
                self.output_dim()
            ));
        }
        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(self.layers.len());
        let mut delta = dy.clone();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let (z, a) = (&tape.pre[k], &tape.outputs[k]);
            if l.activation != Activation::Identity {
                ndarray::Zip::from(&mut delta)
                    .and(z)
                    .and(a)
                    .for_each(|d, &z, &a| *d *= l.activation.derivative(z, a));
            }
            let gw = tape.inputs[k].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            delta = delta.dot(&l.weight.t());
            grads.push((gw, gb));
        }
        grads.reverse();
        let mut params = Vec::with_capacity(self.n_params());
        for (gw, gb) in &grads {
            params.extend(gw.iter());
            params.extend(gb.iter());
        }
        Ok(Gradients { params, input: delta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar_forward(m: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for l in m.layers() {
            let mut next = vec![0.0; l.output_dim()];
            for (o, slot) in next.iter_mut().enumerate() {
                let mut s = l.bias[o];
                for (i, &ai) in a.iter().enumerate() {
                    s += ai * l.weight[[i, o]];
                }
                *slot = l.activation.apply(s);
            }
            a = next;
        }
        a
    }

    fn random_batch(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let l = Dense {
            weight: Array2::eye(3),
            bias: Array1::zeros(3),
            activation: Activation::Identity,
        };
        let m = Mlp::from_layers(vec![l], 0).unwrap();
        let x = array![[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]];
        assert_eq!(m.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_relu_layer_outputs_zero() {
        let l = Dense {
            weight: Array2::zeros((4, 2)),
            bias: Array1::zeros(2),
            activation: Activation::Relu,
        };
        let m = Mlp::from_layers(vec![l], 0).unwrap();
        let y = m.forward(&random_batch(5, 4, 1)).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_scalar_evaluation() {
        let m = Mlp::new(&[5, 7, 6, 3], &[Activation::Relu, Activation::Tanh, Activation::Identity], 11).unwrap();
        let x = random_batch(9, 5, 2);
        let y = m.forward(&x).unwrap();
        for r in 0..9 {
            let s = scalar_forward(&m, x.row(r).as_slice().unwrap());
            for c in 0..3 {
                assert!((y[[r, c]] - s[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_mismatched_dims() {
        let m = Mlp::new(&[3, 4], &[Activation::Relu], 0).unwrap();
        assert!(matches!(m.forward(&random_batch(2, 5, 0)), Err(Error::Domain(_))));
        let bad = vec![
            Dense { weight: Array2::zeros((3, 4)), bias: Array1::zeros(4), activation: Activation::Relu },
            Dense { weight: Array2::zeros((5, 2)), bias: Array1::zeros(2), activation: Activation::Relu },
        ];
        assert!(Mlp::from_layers(bad, 0).is_err());
    }

    #[test]
    fn backward_without_tape_is_a_state_error() {
        let m = Mlp::new(&[3, 4], &[Activation::Relu], 0).unwrap();
        let dy = Array2::zeros((1, 4));
        assert!(matches!(m.backward(&Tape::default(), &dy), Err(Error::State(_))));
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let m = Mlp::new(&[4, 6, 2], &[Activation::Tanh, Activation::Identity], 3).unwrap();
        let (_, tape) = m.forward_taped(&random_batch(3, 4, 4)).unwrap();
        let g = m.backward(&tape, &Array2::zeros((3, 2))).unwrap();
        assert!(g.params.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn params_roundtrip() {
        let m = Mlp::new(&[3, 5, 2], &[Activation::Relu, Activation::Identity], 8).unwrap();
        let mut other = Mlp::new(&[3, 5, 2], &[Activation::Relu, Activation::Identity], 9).unwrap();
        other.set_params(&m.params()).unwrap();
        assert_eq!(other.layers(), m.layers());
    }

    #[test]
    fn initialization_is_seeded() {
        let a = Mlp::new(&[8, 8], &[Activation::Relu], 5).unwrap();
        let b = Mlp::new(&[8, 8], &[Activation::Relu], 5).unwrap();
        let c = Mlp::new(&[8, 8], &[Activation::Relu], 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (6.0f64 / 8.0).sqrt();
        assert!(a.params().iter().all(|w| w.abs() <= bound));
    }
}
