use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::loss::{bce_loss, sigmoid};
use super::ProbeError;

/// Two-layer perceptron `w2 · relu(W1 x + b1) + b2` with one output logit.
///
/// The same type holds gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// hidden × input, row-major.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
}

impl MlpParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        MlpParams {
            w1: Array2::zeros((hidden, input)),
            b1: Array1::zeros(hidden),
            w2: Array1::zeros(hidden),
            b2: 0.0,
        }
    }

    /// He-uniform weights in ±√(6 / fan_in), zero biases.
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(input, hidden);
        let a1 = (6.0 / input as f64).sqrt();
        p.w1.mapv_inplace(|_| rng.random_range(-a1..a1));
        let a2 = (6.0 / hidden as f64).sqrt();
        p.w2.mapv_inplace(|_| rng.random_range(-a2..a2));
        p
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Parameter blocks in storage order: W1, b1, W2, b2.
    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            std::slice::from_ref(&self.b2),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            std::slice::from_mut(&mut self.b2),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Rounds every parameter to the nearest f32, the precision checkpoints store.
    pub fn quantized(&self) -> Self {
        let mut q = self.clone();
        for t in q.tensors_mut() {
            for x in t.iter_mut() {
                *x = f64::from(*x as f32);
            }
        }
        q
    }

    fn check_input(&self, len: usize) -> Result<(), ProbeError> {
        if len != self.input_dim() {
            return Err(ProbeError::Dimension {
                expected: self.input_dim(),
                actual: len,
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64, ProbeError> {
        self.check_input(x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ProbeError::NonFinite);
        }
        let h = self.w1.dot(&ArrayView1::from(x)) + &self.b1;
        Ok(h.iter().zip(&self.w2).map(|(&a, &w)| a.max(0.0) * w).sum::<f64>() + self.b2)
    }

    fn hidden_pre(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w1.t()) + &self.b1
    }

    /// Logits for each row of `x`.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array1<f64>, ProbeError> {
        self.check_input(x.ncols())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ProbeError::NonFinite);
        }
        let a = self.hidden_pre(x).mapv_into(|v| v.max(0.0));
        Ok(a.dot(&self.w2) + self.b2)
    }

    /// Mean BCE loss over the batch and its gradient.
    pub fn gradients(&self, x: ArrayView2<f64>, labels: &[bool]) -> Result<(MlpParams, f64), ProbeError> {
        self.check_input(x.ncols())?;
        let n = x.nrows();
        if n == 0 || labels.len() != n {
            return Err(ProbeError::EmptyBatch);
        }
        let pre = self.hidden_pre(x);
        let act = pre.mapv(|v| v.max(0.0));
        let logits = act.dot(&self.w2) + self.b2;

        let mut loss = 0.0;
        let mut dz = Array1::zeros(n);
        for i in 0..n {
            let y = if labels[i] { 1.0 } else { 0.0 };
            loss += bce_loss(logits[i], labels[i]);
            dz[i] = (sigmoid(logits[i]) - y) / n as f64;
        }

        let gw2 = act.t().dot(&dz);
        let gb2 = dz.sum();
        // dL/dpre = dz ⊗ w2, masked where relu was inactive (subgradient 0 at 0).
        let mut dpre = dz.view().insert_axis(Axis(1)).dot(&self.w2.view().insert_axis(Axis(0)));
        dpre.zip_mut_with(&pre, |d, &p| {
            if p <= 0.0 {
                *d = 0.0;
            }
        });
        let gw1 = dpre.t().dot(&x).as_standard_layout().into_owned();
        let gb1 = dpre.sum_axis(Axis(0));
        Ok((
            MlpParams {
                w1: gw1,
                b1: gb1,
                w2: gw2,
                b2: gb2,
            },
            loss / n as f64,
        ))
    }

    /// Mean loss and accuracy at threshold 0.5 (logit ≥ 0).
    pub fn evaluate(&self, x: ArrayView2<f64>, labels: &[bool]) -> Result<(f64, f64), ProbeError> {
        if x.nrows() == 0 {
            return Err(ProbeError::EmptyBatch);
        }
        let logits = self.forward_batch(x)?;
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (z, &y) in logits.iter().zip(labels) {
            loss += bce_loss(*z, y);
            if (*z >= 0.0) == y {
                correct += 1;
            }
        }
        let n = labels.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_zero_logit() {
        let p = MlpParams::zeros(3072, 512);
        let x = vec![0.3; 3072];
        assert_eq!(p.forward(&x).unwrap(), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn constant_path_sums_hidden_units() {
        let mut p = MlpParams::zeros(3072, 512);
        p.b1.fill(1.0);
        p.w2.fill(1.0);
        let x = vec![-2.0; 3072];
        assert_eq!(p.forward(&x).unwrap(), 512.0);
    }

    #[test]
    fn batch_matches_single_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = MlpParams::init(9, 5, &mut rng);
        let x = Array2::from_shape_fn((4, 9), |(i, j)| ((i * 9 + j) as f64).sin());
        let batch = p.forward_batch(x.view()).unwrap();
        for i in 0..4 {
            let single = p.forward(x.row(i).as_slice().unwrap()).unwrap();
            assert!((batch[i] - single).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_and_misshaped_inputs_are_rejected() {
        let p = MlpParams::zeros(4, 2);
        assert!(matches!(p.forward(&[0.0, f64::NAN, 0.0, 0.0]), Err(ProbeError::NonFinite)));
        assert!(matches!(p.forward(&[0.0; 3]), Err(ProbeError::Dimension { .. })));
    }

    #[test]
    fn zero_input_zero_params_only_moves_output_bias() {
        let p = MlpParams::zeros(6, 4);
        let x = Array2::zeros((3, 6));
        let (g, _) = p.gradients(x.view(), &[true, false, true]).unwrap();
        assert!(g.w1.iter().chain(&g.b1).chain(&g.w2).all(|&v| v == 0.0));
        // mean(sigmoid(0) - y) = (-0.5 + 0.5 - 0.5) / 3
        assert!((g.b2 - (-0.5 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn duplicated_batch_gives_single_sample_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = MlpParams::init(7, 3, &mut rng);
        let row = Array1::from_shape_fn(7, |j| (j as f64 * 0.7).cos());
        let one = row.clone().insert_axis(Axis(0));
        let three = ndarray::stack(Axis(0), &[row.view(), row.view(), row.view()]).unwrap();
        let (g1, l1) = p.gradients(one.view(), &[true]).unwrap();
        let (g3, l3) = p.gradients(three.view(), &[true, true, true]).unwrap();
        assert!((l1 - l3).abs() < 1e-14);
        for (a, b) in g1.tensors().iter().zip(g3.tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn quantized_is_f32_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = MlpParams::init(5, 4, &mut rng).quantized();
        for t in q.tensors() {
            assert!(t.iter().all(|&x| f64::from(x as f32) == x));
        }
    }
}
