use std::collections::BTreeMap;

use crate::diffcompute::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Adam first/second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub first: Tensor<T>,
    pub second: Tensor<T>,
    pub step: u64,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Moments { first: Tensor::zeros(shape), second: Tensor::zeros(shape), step: 0 }
    }
}

/// A trainable tensor with its gradient buffer and default optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub moments: Moments<T>,
}

/// Named collection of trainable tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet<T> {
    entries: BTreeMap<String, ParamEntry<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        ParameterSet { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter '{name}'")));
        }
        let shape = value.shape().to_vec();
        self.entries.insert(
            name,
            ParamEntry { value, grad: Tensor::zeros(&shape), moments: Moments::zeros(&shape) },
        );
        Ok(())
    }

    /// Restores a full entry, optimizer state included (used by checkpoint loading).
    pub fn insert_entry(&mut self, name: impl Into<String>, entry: ParamEntry<T>) -> Result<()> {
        let name = name.into();
        if entry.value.shape() != entry.grad.shape()
            || entry.value.shape() != entry.moments.first.shape()
            || entry.value.shape() != entry.moments.second.shape()
        {
            return Err(Error::Config(format!("parameter '{name}' has inconsistent shapes")));
        }
        self.entries.insert(name, entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.get(name)
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Internal(format!("missing parameter '{name}'")))
    }

    pub fn entry_mut(&mut self, name: &str) -> Result<&mut ParamEntry<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Internal(format!("missing parameter '{name}'")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.entry(name).map(|e| &e.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry<T>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry<T>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(T::zero());
        }
    }

    /// Squared L2 norm of every value in the set.
    pub fn sum_squares(&self) -> T {
        self.entries.values().map(|e| e.value.sum_squares()).sum()
    }

    /// Adds the gradient of `coeff * ||values||^2` to the gradient buffers and
    /// returns the penalty value.
    pub fn add_l2_penalty_grad(&mut self, coeff: T) -> T {
        let two = T::of(2.0);
        for e in self.entries.values_mut() {
            for (g, &v) in e.grad.data_mut().iter_mut().zip(e.value.data()) {
                *g += two * coeff * v;
            }
        }
        coeff * self.sum_squares()
    }

    /// Overwrites values from `other`; optimizer state and gradients untouched.
    pub fn copy_values_from(&mut self, other: &ParameterSet<T>) -> Result<()> {
        self.check_compatible(other)?;
        for (name, e) in self.entries.iter_mut() {
            e.value.data_mut().copy_from_slice(other.entries[name].value.data());
        }
        Ok(())
    }

    /// Clone containing only values; gradients and optimizer state are fresh.
    pub fn values_only(&self) -> Self {
        let mut out = ParameterSet::new();
        for (name, e) in &self.entries {
            out.insert(name.clone(), e.value.clone()).expect("names are unique");
        }
        out
    }

    /// Same parameter names with identical values.
    pub fn values_equal(&self, other: &ParameterSet<T>) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().all(|(name, e)| {
                other.entries.get(name).is_some_and(|o| o.value == e.value)
            })
    }

    pub fn check_compatible(&self, other: &ParameterSet<T>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Config(format!(
                "parameter sets differ in size ({} vs {})",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (name, e) in &self.entries {
            match other.entries.get(name) {
                Some(o) if o.value.shape() == e.value.shape() => {}
                Some(o) => {
                    return Err(Error::Config(format!(
                        "parameter '{name}' shape {:?} vs {:?}",
                        e.value.shape(),
                        o.value.shape()
                    )))
                }
                None => return Err(Error::Config(format!("parameter '{name}' missing"))),
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        let entries = self
            .entries
            .iter()
            .map(|(name, e)| {
                let entry = ParamEntry {
                    value: e.value.cast(),
                    grad: e.grad.cast(),
                    moments: Moments {
                        first: e.moments.first.cast(),
                        second: e.moments.second.cast(),
                        step: e.moments.step,
                    },
                };
                (name.clone(), entry)
            })
            .collect();
        ParameterSet { entries }
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        for (name, e) in &self.entries {
            e.value.ensure_finite(&format!("{what} value '{name}'"))?;
            e.grad.ensure_finite(&format!("{what} gradient '{name}'"))?;
        }
        Ok(())
    }
}

/// Optimizer state kept outside a [`ParameterSet`], for parameters that more
/// than one optimizer updates (the shared encoder).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MomentBank<T> {
    moments: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> MomentBank<T> {
    pub fn new() -> Self {
        MomentBank { moments: BTreeMap::new() }
    }

    pub fn get(&self, name: &str) -> Option<&Moments<T>> {
        self.moments.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, m: Moments<T>) {
        self.moments.insert(name.into(), m);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Moments<T>)> {
        self.moments.iter()
    }

    pub fn len(&self) -> usize {
        self.moments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moments.is_empty()
    }
}

/// Bias-corrected Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    /// Conventional defaults (0.9, 0.999, 1e-8) at the given learning rate.
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    fn update<T: Scalar>(&self, value: &mut Tensor<T>, grad: &Tensor<T>, m: &mut Moments<T>) {
        m.step += 1;
        let t = m.step as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let one = T::one();
        let bias1 = one - b1.powi(t);
        let bias2 = one - b2.powi(t);
        let lr = T::of(self.lr);
        let eps = T::of(self.eps);
        let values = value.data_mut().iter_mut();
        let firsts = m.first.data_mut().iter_mut();
        let seconds = m.second.data_mut().iter_mut();
        for (((p, &g), mf), ms) in values.zip(grad.data()).zip(firsts).zip(seconds) {
            *mf = b1 * *mf + (one - b1) * g;
            *ms = b2 * *ms + (one - b2) * g * g;
            let m_hat = *mf / bias1;
            let v_hat = *ms / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// One Adam step on every entry using the entries' own moment buffers.
/// Gradients are left in place; callers zero them.
pub fn adam_step<T: Scalar>(params: &mut ParameterSet<T>, cfg: &AdamConfig) -> Result<()> {
    for (name, e) in params.entries.iter_mut() {
        e.grad.ensure_finite(&format!("gradient '{name}'"))?;
        cfg.update(&mut e.value, &e.grad, &mut e.moments);
        e.value.ensure_finite(&format!("parameter '{name}' after Adam"))?;
    }
    Ok(())
}

/// One Adam step on every entry using moments held in `bank`, created on first use.
pub fn adam_step_with<T: Scalar>(
    params: &mut ParameterSet<T>,
    bank: &mut MomentBank<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, e) in params.entries.iter_mut() {
        e.grad.ensure_finite(&format!("gradient '{name}'"))?;
        let m = bank
            .moments
            .entry(name.clone())
            .or_insert_with(|| Moments::zeros(e.value.shape()));
        if m.first.shape() != e.value.shape() {
            return Err(Error::Internal(format!("moment bank shape mismatch for '{name}'")));
        }
        cfg.update(&mut e.value, &e.grad, m);
        e.value.ensure_finite(&format!("parameter '{name}' after Adam"))?;
    }
    Ok(())
}

/// Polyak averaging: `target <- (1 - tau) * target + tau * online`, computed
/// as `target + tau * (online - target)` so equal values stay bit-identical.
pub fn soft_update<T: Scalar>(
    target: &mut ParameterSet<T>,
    online: &ParameterSet<T>,
    tau: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("soft update rate {tau} outside [0, 1]")));
    }
    target.check_compatible(online)?;
    let tau_t = T::of(tau);
    for (name, e) in target.entries.iter_mut() {
        let src = online.entries[name].value.data();
        if tau == 1.0 {
            e.value.data_mut().copy_from_slice(src);
        } else if tau != 0.0 {
            for (t, &o) in e.value.data_mut().iter_mut().zip(src) {
                *t += tau_t * (o - *t);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> ParameterSet<f64> {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::from_vec(vec![v])).unwrap();
        p
    }

    /// Plain scalar Adam recurrence, written independently of the tensor code.
    fn scalar_adam(p0: f64, grads: &[f64], lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
        let mut out = Vec::new();
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            out.push(p);
        }
        out
    }

    #[test]
    fn zero_gradient_leaves_values_unchanged() {
        let mut p = scalar_set(0.7);
        adam_step(&mut p, &AdamConfig::with_lr(1e-3)).unwrap();
        assert_eq!(p.value("w").unwrap().data(), &[0.7]);
        assert_eq!(p.entry("w").unwrap().moments.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_set(1.0);
        p.entry_mut("w").unwrap().grad.data_mut()[0] = 1.0;
        adam_step(&mut p, &AdamConfig::with_lr(1e-3)).unwrap();
        let delta = 1.0 - p.value("w").unwrap().data()[0];
        // |m_hat| / (sqrt(v_hat) + eps) = 1 / (1 + 1e-8)
        assert!((delta - 1e-3 / (1.0 + 1e-8)).abs() < 1e-15, "delta {delta}");
        // gradients are untouched
        assert_eq!(p.entry("w").unwrap().grad.data(), &[1.0]);
    }

    #[test]
    fn two_identical_gradients_match_scalar_recurrence() {
        let mut p = scalar_set(0.5);
        let expected = scalar_adam(0.5, &[0.3, 0.3], 1e-3);
        for want in expected {
            p.entry_mut("w").unwrap().grad.data_mut()[0] = 0.3;
            adam_step(&mut p, &AdamConfig::with_lr(1e-3)).unwrap();
            assert!((p.value("w").unwrap().data()[0] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn external_bank_is_independent_of_entry_moments() {
        let mut p = scalar_set(0.0);
        p.entry_mut("w").unwrap().grad.data_mut()[0] = 2.0;
        let mut bank = MomentBank::new();
        adam_step_with(&mut p, &mut bank, &AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(p.entry("w").unwrap().moments.step, 0);
        assert_eq!(bank.get("w").unwrap().step, 1);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = scalar_set(0.0);
        p.entry_mut("w").unwrap().grad.data_mut()[0] = f64::INFINITY;
        assert!(matches!(adam_step(&mut p, &AdamConfig::with_lr(0.1)), Err(Error::Numeric(_))));
    }

    #[test]
    fn soft_update_endpoints_and_interpolation() {
        let online = scalar_set(1.0);
        let mut target = scalar_set(0.0);
        soft_update(&mut target, &online, 0.0).unwrap();
        assert_eq!(target.value("w").unwrap().data(), &[0.0]);
        soft_update(&mut target, &online, 0.01).unwrap();
        assert!((target.value("w").unwrap().data()[0] - 0.01).abs() < 1e-15);
        soft_update(&mut target, &online, 1.0).unwrap();
        assert!(target.values_equal(&online));
    }

    #[test]
    fn soft_update_rejects_mismatched_sets() {
        let mut target = scalar_set(0.0);
        let mut other = ParameterSet::new();
        other.insert("w", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        assert!(matches!(soft_update(&mut target, &other, 0.5), Err(Error::Config(_))));
        assert!(soft_update(&mut target, &scalar_set(1.0), 1.5).is_err());
    }
}
