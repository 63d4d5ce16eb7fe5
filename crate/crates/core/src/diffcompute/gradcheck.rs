//! Central finite-difference comparison for 64-bit parameter gradients.

use crate::diffcompute::ParameterSet;
use crate::error::Result;

/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps near-zero pairs from
/// producing huge ratios out of rounding noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// `name[index]` of the worst coordinate.
    pub worst: String,
    pub coordinates: usize,
}

/// Compares the gradients stored in `params` with central differences of
/// `loss`, perturbing every scalar by `±h`.
pub fn check_gradients(
    params: &ParameterSet<f64>,
    h: f64,
    mut loss: impl FnMut(&ParameterSet<f64>) -> Result<f64>,
) -> Result<GradCheck> {
    let mut report = GradCheck { max_relative_error: 0.0, worst: String::new(), coordinates: 0 };
    let mut probe = params.values_only();
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for name in names {
        let analytic = params.entry(&name)?.grad.data().to_vec();
        for (k, &a) in analytic.iter().enumerate() {
            let original = probe.entry(&name)?.value.data()[k];
            probe.entry_mut(&name)?.value.data_mut()[k] = original + h;
            let plus = loss(&probe)?;
            probe.entry_mut(&name)?.value.data_mut()[k] = original - h;
            let minus = loss(&probe)?;
            probe.entry_mut(&name)?.value.data_mut()[k] = original;
            let err = relative_error(a, (plus - minus) / (2.0 * h));
            report.coordinates += 1;
            if err > report.max_relative_error || report.worst.is_empty() {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = format!("{name}[{k}]");
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcompute::Tensor;

    #[test]
    fn quadratic_gradient_passes_and_wrong_one_fails() {
        let mut p = ParameterSet::<f64>::new();
        p.insert("w", Tensor::new(vec![2], vec![1.5, -2.0]).unwrap()).unwrap();
        let loss = |q: &ParameterSet<f64>| Ok(q.value("w")?.data().iter().map(|v| v * v * v).sum());
        p.entry_mut("w").unwrap().grad = Tensor::new(vec![2], vec![3.0 * 2.25, 3.0 * 4.0]).unwrap();
        assert!(check_gradients(&p, 1e-5, loss).unwrap().max_relative_error < 1e-8);
        p.entry_mut("w").unwrap().grad.data_mut()[1] = 11.0;
        let bad = check_gradients(&p, 1e-5, loss).unwrap();
        assert!(bad.max_relative_error > 0.05);
        assert_eq!(bad.worst, "w[1]");
    }
}
