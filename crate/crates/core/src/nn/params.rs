use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;

/// What a parameter tensor is for. Aggregation and checkpoints key off it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Dense,
    Conv,
    BatchnormStat,
    BatchnormAffine,
    Bias,
}

impl Role {
    pub fn is_batchnorm(self) -> bool {
        matches!(self, Role::BatchnormStat | Role::BatchnormAffine)
    }

    /// Trainable roles receive gradients; running statistics do not.
    pub fn is_trainable(self) -> bool {
        !matches!(self, Role::BatchnormStat)
    }

    pub fn code(self) -> u8 {
        match self {
            Role::Dense => 0,
            Role::Conv => 1,
            Role::BatchnormStat => 2,
            Role::BatchnormAffine => 3,
            Role::Bias => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Role> {
        Some(match code {
            0 => Role::Dense,
            1 => Role::Conv,
            2 => Role::BatchnormStat,
            3 => Role::BatchnormAffine,
            4 => Role::Bias,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub role: Role,
}

/// Ordered, uniquely named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry; trainable roles are flagged `requires_grad`.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor, role: Role) -> Result<usize> {
        let name = name.into();
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        let tensor = tensor.with_requires_grad(role.is_trainable());
        self.entries.push(ParamEntry { name, tensor, role });
        Ok(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn get(&self, index: usize) -> &ParamEntry {
        &self.entries[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut ParamEntry {
        &mut self.entries[index]
    }

    pub fn find(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Total number of scalar values.
    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Number of scalar values in trainable entries.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.role.is_trainable())
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Names, roles and shapes agree pairwise.
    pub fn is_congruent(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name && a.role == b.role && a.tensor.shape() == b.tensor.shape()
            })
    }

    pub fn ensure_congruent(&self, other: &ParamSet) -> Result<()> {
        if self.is_congruent(other) {
            Ok(())
        } else {
            Err(Error::invalid("parameter sets are not congruent"))
        }
    }

    /// Same layout, all values zero, no gradients.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    tensor: Tensor::zeros(e.tensor.shape()).with_requires_grad(e.tensor.requires_grad()),
                    role: e.role,
                })
                .collect(),
        }
    }

    /// Records every entry on the tape as a leaf.
    pub fn attach(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries.iter().map(|e| tape.leaf(&e.tensor)).collect()
    }

    /// Copies gradients for all trainable entries out of a finished tape.
    pub fn collect_grads(&mut self, tape: &Tape, vars: &[Var]) -> Result<()> {
        if vars.len() != self.entries.len() {
            return Err(Error::invalid("variable list does not match parameter set"));
        }
        for (e, &v) in self.entries.iter_mut().zip(vars) {
            if e.tensor.requires_grad() {
                tape.write_grad(v, &mut e.tensor)?;
            }
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.clear_grad();
        }
    }

    /// Squared Euclidean distance over trainable entries.
    pub fn squared_distance(&self, other: &ParamSet) -> Result<f64> {
        self.ensure_congruent(other)?;
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .filter(|(a, _)| a.role.is_trainable())
            .flat_map(|(a, b)| a.tensor.data().iter().zip(b.tensor.data()))
            .map(|(x, y)| (x - y) * (x - y))
            .sum())
    }

    /// All values, concatenated in entry order.
    pub fn flatten_values(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|e| e.tensor.data().iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(names: &[(&str, Role, &[usize])]) -> ParamSet {
        let mut p = ParamSet::new();
        for (n, r, s) in names {
            p.push(*n, Tensor::zeros(s), *r).unwrap();
        }
        p
    }

    #[test]
    fn names_must_be_unique() {
        let mut p = ParamSet::new();
        p.push("w", Tensor::zeros(&[1]), Role::Dense).unwrap();
        assert!(p.push("w", Tensor::zeros(&[1]), Role::Bias).is_err());
    }

    #[test]
    fn congruence_checks_name_role_and_shape() {
        let a = set(&[("w", Role::Dense, &[2, 2]), ("b", Role::Bias, &[2])]);
        assert!(a.is_congruent(&a.zeros_like()));
        assert!(!a.is_congruent(&set(&[("w", Role::Dense, &[2, 2]), ("c", Role::Bias, &[2])])));
        assert!(!a.is_congruent(&set(&[("w", Role::Conv, &[2, 2]), ("b", Role::Bias, &[2])])));
        assert!(!a.is_congruent(&set(&[("w", Role::Dense, &[4]), ("b", Role::Bias, &[2])])));
    }

    #[test]
    fn running_stats_are_not_trainable() {
        let p = set(&[("m", Role::BatchnormStat, &[3]), ("g", Role::BatchnormAffine, &[3])]);
        assert!(!p.get(0).tensor.requires_grad());
        assert!(p.get(1).tensor.requires_grad());
        assert_eq!(p.num_trainable(), 3);
    }

    #[test]
    fn role_codes_round_trip() {
        for r in [Role::Dense, Role::Conv, Role::BatchnormStat, Role::BatchnormAffine, Role::Bias] {
            assert_eq!(Role::from_code(r.code()), Some(r));
        }
        assert_eq!(Role::from_code(9), None);
    }
}
