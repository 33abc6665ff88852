use ndarray::{Array1, Array2};

use super::mlp::{Activation, Mlp, Tape};
use crate::cloud::Point3;
use crate::error::{domain, Result};

pub const DEFAULT_GLOBAL_DIM: usize = 64;

/// Shared per-point MLP followed by a coordinate-wise max-pool.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEncoder {
    pub mlp: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub global: Array1<f64>,
    pub per_point: Array2<f64>,
    /// Row that attains the max for every feature (lowest index on ties).
    pub argmax: Vec<usize>,
}

pub fn points_to_array(points: &[Point3]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), 3), |(i, k)| points[i][k])
}

/// Column-wise max with the row that attains it.
pub fn max_pool(features: &Array2<f64>) -> (Array1<f64>, Vec<usize>) {
    let g = features.ncols();
    let mut best = Array1::from_elem(g, f64::NEG_INFINITY);
    let mut arg = vec![0usize; g];
    for (i, row) in features.rows().into_iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v > best[c] {
                best[c] = v;
                arg[c] = i;
            }
        }
    }
    (best, arg)
}

impl PointEncoder {
    /// Widths `3 -> hidden.. -> global_dim`, ReLU hidden layers, linear output.
    pub fn new(hidden: &[usize], global_dim: usize, seed: u64) -> Result<Self> {
        let mut dims = vec![3];
        dims.extend_from_slice(hidden);
        dims.push(global_dim);
        let mut acts = vec![Activation::Relu; hidden.len()];
        acts.push(Activation::Identity);
        Self::from_mlp(Mlp::new(&dims, &acts, seed)?)
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        if mlp.input_dim() != 3 {
            return domain(format!("point encoder input must be 3-D, got {}", mlp.input_dim()));
        }
        Ok(Self { mlp })
    }

    pub fn global_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    pub fn encode(&self, points: &[Point3]) -> Result<Encoding> {
        if points.is_empty() {
            return domain("cannot encode an empty cloud");
        }
        let per_point = self.mlp.forward(&points_to_array(points))?;
        let (global, argmax) = max_pool(&per_point);
        Ok(Encoding {
            global,
            per_point,
            argmax,
        })
    }

    pub fn encode_taped(&self, points: &[Point3]) -> Result<(Encoding, Tape)> {
        if points.is_empty() {
            return domain("cannot encode an empty cloud");
        }
        let (per_point, tape) = self.mlp.forward_taped(&points_to_array(points))?;
        let (global, argmax) = max_pool(&per_point);
        Ok((
            Encoding {
                global,
                per_point,
                argmax,
            },
            tape,
        ))
    }

    /// Parameter gradient for a loss with gradient `dglobal` w.r.t. `g`; the
    /// max-pool routes each component to its argmax row.
    pub fn backward(&self, tape: &Tape, enc: &Encoding, dglobal: &Array1<f64>) -> Result<Vec<f64>> {
        if dglobal.len() != self.global_dim() {
            return domain(format!("global gradient has {} entries, expected {}", dglobal.len(), self.global_dim()));
        }
        let mut dy = Array2::zeros(enc.per_point.dim());
        for (c, &i) in enc.argmax.iter().enumerate() {
            dy[[i, c]] += dglobal[c];
        }
        Ok(self.mlp.backward(tape, &dy)?.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::check_gradient;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect()
    }

    #[test]
    fn output_dim_is_fixed() {
        let enc = PointEncoder::new(&[16, 32], 8, 1).unwrap();
        for n in [1, 7, 100] {
            assert_eq!(enc.encode(&cloud(n, n as u64)).unwrap().global.len(), 8);
        }
        assert!(enc.encode(&[]).is_err());
    }

    #[test]
    fn single_point_global_is_its_feature() {
        let enc = PointEncoder::new(&[16], 8, 2).unwrap();
        let e = enc.encode(&cloud(1, 3)).unwrap();
        assert_eq!(e.global, e.per_point.row(0));
    }

    #[test]
    fn max_pool_gradient_matches_finite_differences() {
        let enc = PointEncoder::new(&[6, 5], 4, 4).unwrap();
        let pts = cloud(10, 5);
        let w = Array1::from(vec![0.3, -1.2, 0.7, 2.0]);
        let (e, tape) = enc.encode_taped(&pts).unwrap();
        let g = enc.backward(&tape, &e, &w).unwrap();
        let f = |p: &[f64]| {
            let mut m = enc.mlp.clone();
            m.set_params(p).unwrap();
            PointEncoder { mlp: m }.encode(&pts).unwrap().global.dot(&w)
        };
        let c = check_gradient(f, &enc.mlp.params(), &g, 1e-6);
        assert!(c.passes(1e-4), "{c:?}");
    }
}
