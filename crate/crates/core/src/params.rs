//! Named, grouped parameter collections.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Partition tag of a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    /// Convolutional and recurrent weights.
    Body,
    /// Final projection onto character logits.
    Head,
    /// ECA channel-attention kernels.
    Eca,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Body, Group::Head, Group::Eca];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Body => "body",
            Group::Head => "head",
            Group::Eca => "eca",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "body" => Ok(Group::Body),
            "head" => Ok(Group::Head),
            "eca" => Ok(Group::Eca),
            other => Err(Error::Config(format!("unknown parameter group `{other}`"))),
        }
    }
}

/// Set of groups, used both for "frozen" and "trainable" masks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct GroupSet(u8);

impl GroupSet {
    pub const EMPTY: GroupSet = GroupSet(0);
    pub const ALL: GroupSet = GroupSet(0b111);

    fn bit(g: Group) -> u8 {
        match g {
            Group::Body => 1,
            Group::Head => 2,
            Group::Eca => 4,
        }
    }

    pub fn of(groups: &[Group]) -> Self {
        GroupSet(groups.iter().fold(0, |acc, &g| acc | Self::bit(g)))
    }

    pub fn contains(self, g: Group) -> bool {
        self.0 & Self::bit(g) != 0
    }

    pub fn with(self, g: Group) -> Self {
        GroupSet(self.0 | Self::bit(g))
    }

    pub fn complement(self) -> Self {
        GroupSet(!self.0 & 0b111)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

/// One trainable tensor with its gradient and Adadelta accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Scalar = f32> {
    name: String,
    group: Group,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    /// Running average of squared gradients.
    pub square_avg: Tensor<T>,
    /// Running average of squared updates.
    pub acc_delta: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, group: Group, value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            name: name.into(),
            group,
            value,
            grad: Tensor::zeros(&shape),
            square_avg: Tensor::zeros(&shape),
            acc_delta: Tensor::zeros(&shape),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn group(&self) -> Group {
        self.group
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn reset_optimizer(&mut self) {
        self.square_avg.fill(T::zero());
        self.acc_delta.fill(T::zero());
    }

    fn cast<U: Scalar>(&self) -> Param<U> {
        Param {
            name: self.name.clone(),
            group: self.group,
            value: self.value.cast(),
            grad: self.grad.cast(),
            square_avg: self.square_avg.cast(),
            acc_delta: self.acc_delta.cast(),
        }
    }
}

/// Ordered parameter list; the order is fixed when the model is built.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T: Scalar = f32> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new(params: Vec<Param<T>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &params {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::Config(format!("duplicate parameter name `{}`", p.name)));
            }
        }
        Ok(Self { params })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, index: usize) -> &Param<T> {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Param<T> {
        &mut self.params[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn numel_in(&self, group: Group) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .map(|p| p.value.len())
            .sum()
    }

    /// (name, group, shape) signature used for compatibility checks.
    pub fn signature(&self) -> Vec<(String, Group, Vec<usize>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.group, p.shape().to_vec()))
            .collect()
    }

    /// Fails with a protocol error naming the first divergent parameter.
    pub fn check_compatible(&self, other: &ParamSet<T>) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::Protocol(format!(
                "parameter count differs: {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (a, b) in self.params.iter().zip(&other.params) {
            if a.name != b.name || a.group != b.group || a.shape() != b.shape() {
                return Err(Error::Protocol(format!(
                    "parameter `{}` ({}, {:?}) does not match `{}` ({}, {:?})",
                    a.name,
                    a.group,
                    a.shape(),
                    b.name,
                    b.group,
                    b.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub fn reset_optimizer(&mut self) {
        for p in &mut self.params {
            p.reset_optimizer();
        }
    }

    /// Simultaneous shared access to every value and exclusive access to
    /// every gradient, indexed like the set.
    pub fn split_values_grads(&mut self) -> (Vec<&Tensor<T>>, Vec<&mut Tensor<T>>) {
        self.params.iter_mut().map(|p| (&p.value, &mut p.grad)).unzip()
    }

    /// Copies parameter values from `src`, keeping this set's gradients and
    /// optimizer state.
    pub fn load_values(&mut self, src: &ParamSet<T>) -> Result<()> {
        self.check_compatible(src)?;
        for (dst, s) in self.params.iter_mut().zip(&src.params) {
            dst.value.data_mut().copy_from_slice(s.value.data());
        }
        Ok(())
    }

    /// A copy holding only values (zeroed gradients and optimizer state).
    pub fn values_only(&self) -> ParamSet<T> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param::new(p.name.clone(), p.group, p.value.clone()))
                .collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            params: self.params.iter().map(Param::cast).collect(),
        }
    }

    /// Bitwise equality of values for every parameter in `groups`.
    pub fn values_bits_eq(&self, other: &ParamSet<T>, groups: GroupSet) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .filter(|(a, _)| groups.contains(a.group))
                .all(|(a, b)| a.name == b.name && a.value.bits_eq(&b.value))
    }

    /// Flattened values of all parameters, in order.
    pub fn flat_values(&self) -> Vec<T> {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    /// Sum over all parameters of the squared value distance to `other`.
    pub fn squared_distance(&self, other: &ParamSet<T>) -> f64 {
        self.params
            .iter()
            .zip(&other.params)
            .flat_map(|(a, b)| a.value.data().iter().zip(b.value.data()))
            .map(|(&x, &y)| {
                let d = (x - y).as_f64();
                d * d
            })
            .sum()
    }
}

impl<'a, T: Scalar> IntoIterator for &'a ParamSet<T> {
    type Item = &'a Param<T>;
    type IntoIter = std::slice::Iter<'a, Param<T>>;

    fn into_iter(self) -> Self::IntoIter {
        self.params.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(vals: &[f32]) -> ParamSet {
        ParamSet::new(
            vals.iter()
                .enumerate()
                .map(|(i, &v)| {
                    Param::new(format!("p{i}"), Group::Body, Tensor::new(vec![1], vec![v]).unwrap())
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let p = Param::<f32>::new("w", Group::Body, Tensor::zeros(&[1]));
        assert!(ParamSet::new(vec![p.clone(), p]).is_err());
    }

    #[test]
    fn load_values_keeps_optimizer_state() {
        let mut a = scalar_set(&[1.0, 2.0]);
        a.get_mut(0).square_avg.data_mut()[0] = 7.0;
        let b = scalar_set(&[5.0, 6.0]);
        a.load_values(&b).unwrap();
        assert_eq!(a.flat_values(), vec![5.0, 6.0]);
        assert_eq!(a.get(0).square_avg.data()[0], 7.0);
    }

    #[test]
    fn group_set_ops() {
        let s = GroupSet::of(&[Group::Head]);
        assert!(s.contains(Group::Head));
        assert!(!s.contains(Group::Eca));
        let c = s.complement();
        assert!(c.contains(Group::Body) && c.contains(Group::Eca) && !c.contains(Group::Head));
        assert!(GroupSet::EMPTY.is_empty());
    }
}
