use crate::{Real, Tensor};

/// Adam with bias correction, applied in place to a fixed list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>, beta1: f64, beta2: f64) -> Self {
        let first: Vec<_> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam {
            beta1,
            beta2,
            eps: 1e-8,
            steps: 0,
            second: first.clone(),
            first,
        }
    }

    /// Restores a serialized optimizer state.
    pub fn from_state(beta1: f64, beta2: f64, eps: f64, steps: u64, first: Vec<Tensor<T>>, second: Vec<Tensor<T>>) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            steps,
            first,
            second,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.second
    }

    /// One update. `grads[i]` of `None` leaves the moments of parameter `i`
    /// decaying as if its gradient were zero.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor<T>>, grads: &[Option<&Tensor<T>>], lr: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let step_size = T::from_f64_lossy(lr / bc1);
        let bc2_sqrt = T::from_f64_lossy(bc2.sqrt());
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let eps = T::from_f64_lossy(self.eps);
        for (i, p) in params.into_iter().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            assert_eq!(p.shape(), m.shape(), "parameter {i} changed shape");
            let g = grads.get(i).copied().flatten();
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for j in 0..pd.len() {
                let gj = g.map_or(T::zero(), |g| g.data()[j]);
                md[j] = b1 * md[j] + c1 * gj;
                vd[j] = b2 * vd[j] + c2 * gj * gj;
                let denom = vd[j].sqrt() / bc2_sqrt + eps;
                pd[j] -= step_size * md[j] / denom;
            }
        }
    }
}
