//! Two-layer projection network with L2-normalized output, and its backward pass.
//!
//! `u = normalize(W2 · tanh(W1 · x + b1) + b2)`. Matrices are row-major.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RankerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionNet {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub proj_dim: usize,
    /// hidden_dim × input_dim
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// proj_dim × hidden_dim
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub hidden: Vec<f64>,
    pub norm: f64,
    pub output: Vec<f64>,
}

/// Gradient with the same layout as [`ProjectionNet`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl NetGradient {
    pub fn zeros(net: &ProjectionNet) -> Self {
        NetGradient {
            w1: vec![0.0; net.w1.len()],
            b1: vec![0.0; net.b1.len()],
            w2: vec![0.0; net.w2.len()],
            b2: vec![0.0; net.b2.len()],
        }
    }

    /// Parameters in the order `w1, b1, w2, b2`.
    pub fn flatten(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn add_assign(&mut self, other: &NetGradient) {
        for (a, b) in self
            .w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .chain(&mut self.b2)
            .zip(other.w1.iter().chain(&other.b1).chain(&other.w2).chain(&other.b2))
        {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self
            .w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .chain(&mut self.b2)
        {
            *v *= factor;
        }
    }
}

impl ProjectionNet {
    /// Weights and biases uniform in ±1/√fan_in, drawn from ChaCha8 seeded by `seed`.
    pub fn init(input_dim: usize, hidden_dim: usize, proj_dim: usize, seed: u64) -> Self {
        assert!(input_dim > 0 && hidden_dim > 0 && proj_dim > 0, "dims must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
        };
        let w1 = uniform(hidden_dim * input_dim, input_dim);
        let b1 = uniform(hidden_dim, input_dim);
        let w2 = uniform(proj_dim * hidden_dim, hidden_dim);
        let b2 = uniform(proj_dim, hidden_dim);
        ProjectionNet {
            input_dim,
            hidden_dim,
            proj_dim,
            w1,
            b1,
            w2,
            b2,
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize, proj_dim: usize) -> Self {
        ProjectionNet {
            input_dim,
            hidden_dim,
            proj_dim,
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; proj_dim * hidden_dim],
            b2: vec![0.0; proj_dim],
        }
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        [&self.w1[..], &self.b1, &self.w2, &self.b2].concat()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .chain(&mut self.b2)
    }

    pub fn validate(&self) -> Result<(), RankerError> {
        let shapes = [
            (self.w1.len(), self.hidden_dim * self.input_dim, "w1"),
            (self.b1.len(), self.hidden_dim, "b1"),
            (self.w2.len(), self.proj_dim * self.hidden_dim, "w2"),
            (self.b2.len(), self.proj_dim, "b2"),
        ];
        for (found, expected, name) in shapes {
            if found != expected {
                return Err(RankerError::Corrupt(format!(
                    "{name} has {found} entries, expected {expected}"
                )));
            }
        }
        if self.flatten().iter().any(|v| !v.is_finite()) {
            return Err(RankerError::Corrupt("non-finite weight".into()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardTrace, RankerError> {
        if input.len() != self.input_dim {
            return Err(RankerError::DimMismatch {
                expected: self.input_dim,
                found: input.len(),
            });
        }
        let hidden: Vec<f64> = (0..self.hidden_dim)
            .map(|j| {
                let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
                (dot(row, input) + self.b1[j]).tanh()
            })
            .collect();
        let z: Vec<f64> = (0..self.proj_dim)
            .map(|p| {
                let row = &self.w2[p * self.hidden_dim..(p + 1) * self.hidden_dim];
                dot(row, &hidden) + self.b2[p]
            })
            .collect();
        let norm = dot(&z, &z).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(RankerError::ZeroNorm);
        }
        let output = z.iter().map(|v| v / norm).collect();
        Ok(ForwardTrace {
            input: input.to_vec(),
            hidden,
            norm,
            output,
        })
    }

    /// Unit-length projection of `input`.
    pub fn project(&self, input: &[f64]) -> Result<Vec<f64>, RankerError> {
        self.forward(input).map(|t| t.output)
    }

    /// Accumulates dL/dθ into `grad` given dL/du for the trace's output `u`.
    pub fn backward(&self, trace: &ForwardTrace, upstream: &[f64], grad: &mut NetGradient) {
        let u = &trace.output;
        let g_dot_u = dot(upstream, u);
        // d normalize(z)/dz = (I - u uᵀ) / ‖z‖
        let dz: Vec<f64> = upstream
            .iter()
            .zip(u)
            .map(|(g, ui)| (g - g_dot_u * ui) / trace.norm)
            .collect();
        let mut dh = vec![0.0; self.hidden_dim];
        for (p, &dzp) in dz.iter().enumerate() {
            grad.b2[p] += dzp;
            let row = p * self.hidden_dim;
            for j in 0..self.hidden_dim {
                grad.w2[row + j] += dzp * trace.hidden[j];
                dh[j] += self.w2[row + j] * dzp;
            }
        }
        for j in 0..self.hidden_dim {
            let h = trace.hidden[j];
            let dpre = dh[j] * (1.0 - h * h);
            grad.b1[j] += dpre;
            let row = j * self.input_dim;
            for (i, &x) in trace.input.iter().enumerate() {
                grad.w1[row + i] += dpre * x;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_is_unit_norm() {
        let net = ProjectionNet::init(7, 5, 4, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
            let u = net.project(&x).unwrap();
            assert!((dot(&u, &u).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_net_is_singular() {
        let net = ProjectionNet::zeros(3, 2, 2);
        assert!(matches!(net.project(&[1.0, 2.0, 3.0]), Err(RankerError::ZeroNorm)));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = ProjectionNet::init(9, 4, 3, 5);
        let b = ProjectionNet::init(9, 4, 3, 5);
        assert_eq!(a, b);
        assert_ne!(a, ProjectionNet::init(9, 4, 3, 6));
        assert!(a.w1.iter().all(|w| w.abs() <= 1.0 / 3.0));
        assert!(a.w2.iter().all(|w| w.abs() <= 0.5));
        let x = [0.5; 9];
        assert_eq!(a.project(&x).unwrap(), b.project(&x).unwrap());
    }

    #[test]
    fn dim_mismatch() {
        let net = ProjectionNet::init(4, 3, 2, 0);
        assert!(matches!(
            net.project(&[1.0]),
            Err(RankerError::DimMismatch { expected: 4, found: 1 })
        ));
    }

    #[test]
    fn validate_catches_shape_errors() {
        let mut net = ProjectionNet::init(4, 3, 2, 0);
        net.validate().unwrap();
        net.b2.push(0.0);
        assert!(net.validate().is_err());
    }
}
