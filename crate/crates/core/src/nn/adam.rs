use super::{NnError, ParamStore};
use crate::tensor::Real;

/// Bias-corrected Adam with constant learning rate.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<F>>,
    second: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients. Every parameter
    /// must carry a gradient.
    pub fn step(&mut self, params: &mut ParamStore<F>) -> Result<(), NnError> {
        if let Some(id) = params.ids().find(|&id| params.get(id).grad().is_none()) {
            return Err(NnError::MissingGradient(params.name(id).to_string()));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|(_, t)| vec![F::zero(); t.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(NnError::Contract("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 / (1.0 - b1.powi(t));
        let c2 = 1.0 / (1.0 - b2.powi(t));
        let (fb1, fb2) = (F::of(b1), F::of(b2));
        let (ob1, ob2) = (F::of(1.0 - b1), F::of(1.0 - b2));
        let (fc1, fc2) = (F::of(c1), F::of(c2));
        let lr = F::of(self.learning_rate);
        let eps = F::of(self.eps);
        for ((tensor, m), v) in params.tensors_mut().iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grad = tensor.grad().expect("checked above").to_vec();
            let data = tensor.data_mut();
            for i in 0..data.len() {
                let g = grad[i];
                m[i] = fb1 * m[i] + ob1 * g;
                v[i] = fb2 * v[i] + ob2 * g * g;
                let mhat = m[i] * fc1;
                let vhat = v[i] * fc2;
                data[i] = data[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("p", Tensor::from_f64(&[values.len()], values).unwrap());
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store(&[1.0, -2.0]);
        let id = s.find("p").unwrap();
        s.get_mut(id).accumulate_grad(&[0.0, 0.0]).unwrap();
        let mut adam = Adam::new(1e-3);
        adam.step(&mut s).unwrap();
        assert_eq!(s.get(id).data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut s = store(&[1.0, -2.0, 0.5]);
        let id = s.find("p").unwrap();
        s.get_mut(id).accumulate_grad(&[3.0, -0.01, 250.0]).unwrap();
        let mut adam = Adam::new(1e-3);
        adam.step(&mut s).unwrap();
        let d = s.get(id).data();
        assert!((d[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((d[1] - (-2.0 + 1e-3)).abs() < 1e-6);
        assert!((d[2] - (0.5 - 1e-3)).abs() < 1e-9);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = store(&[1.0]);
        let mut adam = Adam::new(1e-3);
        assert!(matches!(adam.step(&mut s), Err(NnError::MissingGradient(_))));
    }

    #[test]
    fn converges_on_quadratic() {
        // f(x, y) = (x − 3)² + 10·(y + 1)²
        let mut s = store(&[0.0, 0.0]);
        let id = s.find("p").unwrap();
        let mut adam = Adam::new(0.1);
        for _ in 0..200 {
            let d = s.get(id).data().to_vec();
            s.zero_grad();
            s.get_mut(id)
                .accumulate_grad(&[2.0 * (d[0] - 3.0), 20.0 * (d[1] + 1.0)])
                .unwrap();
            adam.step(&mut s).unwrap();
        }
        let d = s.get(id).data();
        assert!((d[0] - 3.0).abs() < 1e-3 && (d[1] + 1.0).abs() < 1e-3, "{d:?}");
    }
}
