use super::mat::Mat;
use super::mlp::{Gradient, Params};
use crate::error::{Error, Result};

/// Adam moments and hyper-parameters for one model.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    m: Vec<Mat>,
    v: Vec<Mat>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimState {
    pub fn new<P: Params + ?Sized>(params: &P, lr: f64) -> Self {
        let zeros = |p: &P| {
            p.tensors()
                .iter()
                .map(|t| Mat::zeros(t.rows(), t.cols()))
                .collect::<Vec<_>>()
        };
        OptimState {
            m: zeros(params),
            v: zeros(params),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Mat] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Mat] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn adam_step<P: Params + ?Sized>(&mut self, params: &mut P, grads: &Gradient) -> Result<()> {
        let mut tensors = params.tensors_mut();
        if tensors.len() != grads.0.len() || tensors.len() != self.m.len() {
            return Err(Error::config("optimizer/parameter/gradient tensor count mismatch"));
        }
        for (k, (t, g)) in tensors.iter().zip(&grads.0).enumerate() {
            if t.shape() != g.shape() || t.shape() != self.m[k].shape() {
                return Err(Error::config(format!("shape mismatch at tensor {k}")));
            }
            if !g.is_finite() {
                return Err(Error::non_finite("gradient", Some(k / 2)));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, g), (m, v)) in tensors
            .iter_mut()
            .zip(&grads.0)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((p, &g), (m, v)) in iter {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone)]
    struct Scalar(Mat);

    impl Params for Scalar {
        fn tensors(&self) -> Vec<&Mat> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut Mat> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Scalar(Mat::scalar(0.0));
        let mut st = OptimState::new(&p, 0.1);
        st.adam_step(&mut p, &Gradient(vec![Mat::scalar(5.0)])).unwrap();
        let dp = p.0.data()[0];
        assert!((dp + 0.1).abs() < 1e-8, "{dp}");
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn zero_gradient_leaves_fresh_state_params_alone() {
        let mut p = Scalar(Mat::scalar(1.25));
        let mut st = OptimState::new(&p, 0.1);
        for _ in 0..3 {
            st.adam_step(&mut p, &Gradient(vec![Mat::scalar(0.0)])).unwrap();
        }
        assert_eq!(p.0.data()[0], 1.25);
        assert_eq!(st.first_moments()[0].data()[0], 0.0);
        assert_eq!(st.second_moments()[0].data()[0], 0.0);
        assert_eq!(st.step(), 3);
    }

    #[test]
    fn quadratic_matches_scalar_recurrence() {
        // oracle: plain scalar Adam written out by hand
        let (lr, b1, b2, eps) = (0.01, 0.9f64, 0.999f64, 1e-8);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }

        let mut p = Scalar(Mat::scalar(1.0));
        let mut st = OptimState::new(&p, lr);
        for _ in 0..100 {
            let g = 2.0 * p.0.data()[0];
            st.adam_step(&mut p, &Gradient(vec![Mat::scalar(g)])).unwrap();
        }
        let got = p.0.data()[0];
        assert!((got - x).abs() < 1e-12);
        assert!(got.abs() < 1.0 && got.abs() < 0.5);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = Scalar(Mat::scalar(0.0));
        let mut st = OptimState::new(&p, 0.1);
        let err = st
            .adam_step(&mut p, &Gradient(vec![Mat::scalar(f64::NAN)]))
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(st.step(), 0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Scalar(Mat::scalar(0.0));
        let mut st = OptimState::new(&p, 0.1);
        assert!(st
            .adam_step(&mut p, &Gradient(vec![Mat::zeros(2, 1)]))
            .is_err());
    }
}
