use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named, ordered parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<(String, Tensor<T>)>,
}

/// Gradients share the layout of the parameters they were taken against.
pub type GradSet<T> = ParamSet<T>;

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::Contract(format!("duplicate parameter name {name:?}")));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn tensor(&self, index: usize) -> &Tensor<T> {
        &self.entries[index].1
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.entries[index].1
    }

    pub fn name(&self, index: usize) -> &str {
        &self.entries[index].0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Same names, same order, same shapes.
    pub fn is_congruent<U: Scalar>(&self, other: &ParamSet<U>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }

    pub fn ensure_congruent<U: Scalar>(&self, other: &ParamSet<U>, what: &str) -> Result<()> {
        if self.is_congruent(other) {
            Ok(())
        } else {
            Err(Error::Contract(format!("{what}: parameter sets are not congruent")))
        }
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_| T::zero())
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.map(&f)))
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        self.map(|v| U::from_f64(v.re()))
    }

    /// Elementwise combination of two congruent sets.
    pub fn zip_map<U: Scalar, V: Scalar>(
        &self,
        other: &ParamSet<U>,
        f: impl Fn(T, U) -> V,
    ) -> Result<ParamSet<V>> {
        self.ensure_congruent(other, "zip_map")?;
        let entries = self
            .entries
            .iter()
            .zip(&other.entries)
            .map(|((n, a), (_, b))| {
                let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
                (n.clone(), Tensor::new(a.shape().to_vec(), data).expect("same shape"))
            })
            .collect();
        Ok(ParamSet { entries })
    }

    /// `self + scale · other`.
    pub fn axpy(&self, scale: T, other: &ParamSet<T>) -> Result<ParamSet<T>> {
        self.zip_map(other, |a, b| a + scale * b)
    }

    pub fn scaled(&self, scale: T) -> ParamSet<T> {
        self.map(|v| scale * v)
    }

    pub fn dot(&self, other: &ParamSet<T>) -> Result<T> {
        self.ensure_congruent(other, "dot")?;
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .flat_map(|((_, a), (_, b))| a.data().iter().zip(b.data()).map(|(&x, &y)| x * y))
            .sum())
    }

    pub fn flatten(&self) -> Vec<T> {
        self.entries
            .iter()
            .flat_map(|(_, t)| t.data().iter().copied())
            .collect()
    }

    /// Rebuilds a congruent set from a flat buffer in entry order.
    pub fn with_flat(&self, flat: &[T]) -> Result<ParamSet<T>> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Contract(format!(
                "flat buffer has {} values, parameter set has {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut offset = 0;
        let entries = self
            .entries
            .iter()
            .map(|(n, t)| {
                let data = flat[offset..offset + t.numel()].to_vec();
                offset += t.numel();
                (n.clone(), Tensor::new(t.shape().to_vec(), data).expect("same shape"))
            })
            .collect();
        Ok(ParamSet { entries })
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("a", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        p.push("b", Tensor::new(vec![1, 1], vec![3.0]).unwrap()).unwrap();
        p
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut p = sample();
        assert!(p.push("a", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn congruence_checks_names_order_and_shapes() {
        let p = sample();
        assert!(p.is_congruent(&p.zeros_like()));
        let mut q = ParamSet::<f64>::new();
        q.push("b", Tensor::zeros(&[1, 1])).unwrap();
        q.push("a", Tensor::zeros(&[2])).unwrap();
        assert!(!p.is_congruent(&q));
        assert!(p.axpy(1.0, &q).is_err());
    }

    #[test]
    fn flat_round_trip_and_dot() {
        let p = sample();
        let flat = p.flatten();
        assert_eq!(flat, vec![1.0, 2.0, 3.0]);
        assert_eq!(p.with_flat(&flat).unwrap(), p);
        assert_eq!(p.dot(&p).unwrap(), 14.0);
    }
}
