//! Finite-difference gradient verification.
//!
//! The checker only ever evaluates the forward pass, so it is independent of
//! the backward implementations it is used to judge. Meant to run in f64:
//! central differences with step 1e-5 leave no usable signal in f32.

use super::tensor::{Element, Tensor};

/// Tolerances for comparing analytic and numeric gradients.
#[derive(Debug, Clone, Copy)]
pub struct FdSettings {
    /// Central-difference step.
    pub step: f64,
    /// Relative tolerance against max(|analytic|, |numeric|).
    pub rel_tol: f64,
    /// Absolute floor for gradients near zero.
    pub abs_tol: f64,
}

impl Default for FdSettings {
    fn default() -> Self {
        FdSettings { step: 1e-5, rel_tol: 1e-4, abs_tol: 1e-7 }
    }
}

impl FdSettings {
    pub fn matches(&self, analytic: f64, numeric: f64) -> bool {
        let diff = (analytic - numeric).abs();
        diff <= f64::max(self.abs_tol, self.rel_tol * f64::max(analytic.abs(), numeric.abs()))
    }
}

/// One gradient element that failed the comparison.
#[derive(Debug, Clone)]
pub struct GradMismatch {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Central-difference gradient of `f` w.r.t. every element of `inputs[which]`.
/// `f` is called with a freshly perturbed copy of the inputs each time.
pub fn fd_gradient<E: Element>(
    f: &mut dyn FnMut(&[Tensor<E>]) -> f64,
    inputs: &[Tensor<E>],
    which: usize,
    step: f64,
) -> Vec<f64> {
    let n = inputs[which].len();
    let mut grad = vec![0.0; n];
    let mut work: Vec<Tensor<E>> = inputs.to_vec();
    for i in 0..n {
        let orig = work[which].data()[i];
        work[which].data_mut()[i] = orig + E::from_f64(step);
        let up = f(&work);
        work[which].data_mut()[i] = orig - E::from_f64(step);
        let down = f(&work);
        work[which].data_mut()[i] = orig;
        grad[i] = (up - down) / (2.0 * step);
    }
    grad
}

/// Compare an analytic gradient tensor against central differences for one
/// input; returns every element that misses the tolerance.
pub fn check_input_gradient<E: Element>(
    name: &str,
    f: &mut dyn FnMut(&[Tensor<E>]) -> f64,
    inputs: &[Tensor<E>],
    which: usize,
    analytic: &Tensor<E>,
    settings: &FdSettings,
) -> Vec<GradMismatch> {
    assert_eq!(analytic.len(), inputs[which].len(), "gradient shape mismatch for {name}");
    let numeric = fd_gradient(f, inputs, which, settings.step);
    analytic
        .data()
        .iter()
        .enumerate()
        .filter_map(|(i, &a)| {
            let a = a.to_f64();
            let n = numeric[i];
            if settings.matches(a, n) {
                None
            } else {
                Some(GradMismatch { tensor: name.to_string(), index: i, analytic: a, numeric: n })
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_gradient_of_quadratic_is_linear() {
        // f(x) = sum(x^2) => df/dx_i = 2 x_i
        let x = Tensor::<f64>::from_vec(&[3], vec![1.0, -2.0, 0.5]);
        let mut f = |inp: &[Tensor<f64>]| inp[0].data().iter().map(|v| v * v).sum::<f64>();
        let g = fd_gradient(&mut f, &[x], 0, 1e-5);
        for (gi, xi) in g.iter().zip([1.0, -2.0, 0.5]) {
            assert!((gi - 2.0 * xi).abs() < 1e-9);
        }
    }

    #[test]
    fn tolerance_rule_has_absolute_floor() {
        let s = FdSettings::default();
        assert!(s.matches(0.0, 5e-8));
        assert!(!s.matches(0.0, 5e-7));
        assert!(s.matches(10.0, 10.0005));
        assert!(!s.matches(10.0, 10.01));
    }
}
