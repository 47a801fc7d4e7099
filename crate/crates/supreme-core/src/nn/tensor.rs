//! Dense row-major tensors over f32 (compute) or f64 (verification).

use std::fmt;
use std::sync::Arc;

use rand_distr::Distribution;

/// Scalar element type for all numeric code. f32 is the compute type;
/// f64 exists so gradient checks can run the identical graph in double
/// precision.
pub trait Element:
    num_traits::Float + num_traits::NumAssign + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn standard_normal(rng: &mut impl rand::Rng) -> Self;
    /// Gauss error function, evaluated in double precision.
    fn erf(self) -> Self;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn standard_normal(rng: &mut impl rand::Rng) -> Self {
        rand_distr::StandardNormal.sample(rng)
    }
    fn erf(self) -> Self {
        libm::erf(self as f64) as f32
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn standard_normal(rng: &mut impl rand::Rng) -> Self {
        rand_distr::StandardNormal.sample(rng)
    }
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

/// Shorthand cast used all over the numeric code.
#[inline]
pub fn el<E: Element>(v: f64) -> E {
    E::from_f64(v)
}

/// Row-major dense tensor. Data is shared copy-on-write; clones are cheap.
#[derive(Clone)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
}

impl<E: Element> Tensor<E> {
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match {} elements",
            shape,
            data.len()
        );
        Tensor { shape: shape.to_vec(), data: Arc::new(data) }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::from_vec(shape, vec![E::zero(); shape.iter().product()])
    }

    pub fn full(shape: &[usize], v: E) -> Self {
        Tensor::from_vec(shape, vec![v; shape.iter().product()])
    }

    pub fn scalar(v: E) -> Self {
        Tensor::from_vec(&[], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    /// Mutable view; clones the buffer first if it is shared.
    pub fn data_mut(&mut self) -> &mut [E] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    /// Same buffer under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.len(),
            "cannot reshape {:?} to {:?}",
            self.shape,
            shape
        );
        Tensor { shape: shape.to_vec(), data: Arc::clone(&self.data) }
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Tensor::from_vec(&self.shape, self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn zip(&self, other: &Tensor<E>, f: impl Fn(E, E) -> E) -> Self {
        assert_eq!(self.shape, other.shape, "shape mismatch in zip");
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Tensor::from_vec(&self.shape, data)
    }

    pub fn scalar_value(&self) -> E {
        assert_eq!(self.len(), 1, "scalar_value on non-scalar tensor");
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Cast element type (f32 <-> f64).
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor::from_vec(
            &self.shape,
            self.data.iter().map(|&x| F::from_f64(x.to_f64())).collect(),
        )
    }
}

impl<E: fmt::Debug> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, " {:?}", &self.data[..])
        } else {
            write!(f, " [{:?}, {:?}, ...]", self.data[0], self.data[1])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reshape_shares_data_and_checks_len() {
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let r = t.reshape(&[3, 2]);
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), t.data());
    }

    #[test]
    #[should_panic]
    fn reshape_wrong_len_panics() {
        let t = Tensor::<f32>::zeros(&[2, 3]);
        let _ = t.reshape(&[4, 2]);
    }

    #[test]
    fn cow_clone_is_isolated() {
        let mut a = Tensor::<f32>::zeros(&[4]);
        let b = a.clone();
        a.data_mut()[0] = 5.0;
        assert_eq!(b.data()[0], 0.0);
        assert_eq!(a.data()[0], 5.0);
    }

    #[test]
    fn erf_matches_known_point() {
        // erf(1/sqrt(2)) = 2*Phi(1) - 1 with Phi(1) = 0.8413447460685429.
        let v = <f64 as Element>::erf(1.0 / std::f64::consts::SQRT_2);
        assert!((v - 0.6826894921370859).abs() < 1e-15);
    }
}
