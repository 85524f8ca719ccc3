use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::plan::MlpParams;

/// One-hidden-layer perceptron: tanh hidden units, sigmoid output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// Column the model was trained on; prediction reads the same column.
    pub vector_column: String,
    pub input_dim: usize,
    pub hidden: usize,
    /// Input-major `input_dim x hidden`: the hidden weights of one input
    /// coordinate are contiguous.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub seed: u64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Nonzero coordinates of a vector; embeddings are sparse.
fn sparse(x: &[f64]) -> Vec<(usize, f64)> {
    x.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect()
}

impl MlpModel {
    fn init(vector_column: &str, input_dim: usize, hidden: usize, seed: u64) -> MlpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        MlpModel {
            vector_column: vector_column.to_string(),
            input_dim,
            hidden,
            w1: (0..hidden * input_dim).map(|_| rng.gen_range(-a1..a1)).collect(),
            b1: vec![0.0; hidden],
            w2: (0..hidden).map(|_| rng.gen_range(-a2..a2)).collect(),
            b2: 0.0,
            seed,
        }
    }

    fn hidden_layer(&self, x: &[(usize, f64)], h: &mut [f64]) {
        h.fill(0.0);
        for &(i, v) in x {
            let col = &self.w1[i * self.hidden..(i + 1) * self.hidden];
            for (hj, w) in h.iter_mut().zip(col) {
                *hj += w * v;
            }
        }
        for (hj, b) in h.iter_mut().zip(&self.b1) {
            *hj = (b + *hj).tanh();
        }
    }

    fn output(&self, h: &[f64]) -> f64 {
        sigmoid(self.b2 + h.iter().zip(&self.w2).map(|(a, b)| a * b).sum::<f64>())
    }

    /// Full-batch gradient descent on mean binary cross-entropy.
    pub fn train(xs: &[&[f64]], ys: &[u8], input_dim: usize, params: &MlpParams) -> MlpModel {
        let mut model = MlpModel::init(&params.vector_column, input_dim, params.hidden_units, params.seed);
        let n = xs.len();
        if n == 0 {
            return model;
        }
        let rows: Vec<Vec<(usize, f64)>> = xs.iter().map(|x| sparse(x)).collect();
        let hidden = params.hidden_units;
        let lr = params.learning_rate;
        let mut h = vec![0.0; hidden];
        let mut g_w1 = vec![0.0; hidden * input_dim];
        let mut g_b1 = vec![0.0; hidden];
        let mut g_w2 = vec![0.0; hidden];
        let mut d_h = vec![0.0; hidden];
        for _ in 0..params.epochs {
            g_w1.iter_mut().for_each(|g| *g = 0.0);
            g_b1.iter_mut().for_each(|g| *g = 0.0);
            g_w2.iter_mut().for_each(|g| *g = 0.0);
            let mut g_b2 = 0.0;
            for (x, &y) in rows.iter().zip(ys) {
                model.hidden_layer(x, &mut h);
                let d_out = (model.output(&h) - f64::from(y)) / n as f64;
                g_b2 += d_out;
                for j in 0..hidden {
                    g_w2[j] += d_out * h[j];
                    d_h[j] = d_out * model.w2[j] * (1.0 - h[j] * h[j]);
                    g_b1[j] += d_h[j];
                }
                for &(i, v) in x {
                    let col = &mut g_w1[i * hidden..(i + 1) * hidden];
                    for (g, d) in col.iter_mut().zip(&d_h) {
                        *g += d * v;
                    }
                }
            }
            for (w, g) in model.w1.iter_mut().zip(&g_w1) {
                *w -= lr * g;
            }
            for (w, g) in model.b1.iter_mut().zip(&g_b1) {
                *w -= lr * g;
            }
            for (w, g) in model.w2.iter_mut().zip(&g_w2) {
                *w -= lr * g;
            }
            model.b2 -= lr * g_b2;
        }
        model
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        let mut h = vec![0.0; self.hidden];
        self.hidden_layer(&sparse(x), &mut h);
        self.output(&h)
    }

    pub fn predict(&self, x: &[f64]) -> u8 {
        u8::from(self.probability(x) >= 0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(seed: u64) -> MlpParams {
        MlpParams {
            vector_column: "v".into(),
            label_column: "y".into(),
            hidden_units: 8,
            epochs: 150,
            learning_rate: 1.0,
            seed,
        }
    }

    #[test]
    fn separable_points_are_fit_exactly() {
        let xs: [&[f64]; 4] = [&[1.0, 0.0], &[0.9, 0.1], &[0.0, 1.0], &[0.1, 0.9]];
        let ys = [1, 1, 0, 0];
        let m = MlpModel::train(&xs, &ys, 2, &params(7));
        for (x, y) in xs.iter().zip(ys) {
            assert_eq!(m.predict(x), y);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let xs: [&[f64]; 3] = [&[1.0, 0.0], &[0.0, 1.0], &[0.7, 0.7]];
        let ys = [1, 0, 1];
        assert_eq!(MlpModel::train(&xs, &ys, 2, &params(3)), MlpModel::train(&xs, &ys, 2, &params(3)));
        assert_ne!(MlpModel::train(&xs, &ys, 2, &params(3)), MlpModel::train(&xs, &ys, 2, &params(4)));
    }

    #[test]
    fn zero_vectors_give_constant_predictions() {
        let xs: [&[f64]; 4] = [&[0.0, 0.0]; 4];
        let m = MlpModel::train(&xs, &[1, 0, 1, 1], 2, &params(1));
        let p = m.predict(&[0.0, 0.0]);
        assert!(xs.iter().all(|x| m.predict(x) == p));
    }

    #[test]
    fn single_class_collapses() {
        let xs: [&[f64]; 3] = [&[1.0, 0.0], &[0.0, 1.0], &[0.6, 0.8]];
        let m = MlpModel::train(&xs, &[0, 0, 0], 2, &params(2));
        assert!(xs.iter().all(|x| m.predict(x) == 0));
        assert_eq!(m.predict(&[-1.0, 0.3]), 0);
    }
}
