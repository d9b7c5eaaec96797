//! Central finite-difference gradient checking.

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::Result;

/// Central differences `(f(x + h) - f(x - h)) / 2h` for every entry of every
/// tensor.
pub fn numeric_gradient<F>(values: &[Tensor], step: f64, mut f: F) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    let mut work = values.to_vec();
    let mut out = Vec::with_capacity(values.len());
    for t in 0..values.len() {
        let mut grad = Tensor::zeros(values[t].shape());
        for i in 0..values[t].len() {
            let original = values[t].data()[i];
            work[t].data_mut()[i] = original + step;
            let plus = f(&work)?;
            work[t].data_mut()[i] = original - step;
            let minus = f(&work)?;
            work[t].data_mut()[i] = original;
            grad.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        out.push(grad);
    }
    Ok(out)
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error < self.tolerance)
    }

    /// Worst error per group, where `group_of` maps a tensor name to its
    /// group label. Groups appear in first-seen order.
    pub fn by_group<F: Fn(&str) -> String>(&self, group_of: F) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for entry in &self.entries {
            let group = group_of(&entry.name);
            match out.iter_mut().find(|(g, _)| *g == group) {
                Some((_, worst)) => *worst = worst.max(entry.max_rel_error),
                None => out.push((group, entry.max_rel_error)),
            }
        }
        out
    }
}

/// Compares the analytic gradient returned by `f` at `params` against central
/// differences. Mismatches are reported, never raised; errors from `f`
/// itself are propagated.
pub fn grad_check<F>(params: &ParamSet, step: f64, tolerance: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    let (_, analytic) = f(params.tensors())?;
    let numeric = numeric_gradient(params.tensors(), step, |values| f(values).map(|(loss, _)| loss))?;
    let entries = params
        .names()
        .iter()
        .zip(analytic.iter().zip(&numeric))
        .map(|(name, (a, n))| {
            let mut entry = GradCheckEntry {
                name: name.clone(),
                max_rel_error: 0.0,
                worst_index: 0,
                analytic: 0.0,
                numeric: 0.0,
            };
            for (i, (&av, &nv)) in a.data().iter().zip(n.data()).enumerate() {
                let err = relative_error(av, nv);
                if err > entry.max_rel_error || i == 0 {
                    entry = GradCheckEntry { max_rel_error: err, worst_index: i, analytic: av, numeric: nv, ..entry };
                }
            }
            entry
        })
        .collect();
    Ok(GradCheckReport { tolerance, entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_passes_and_wrong_gradient_is_reported() {
        let mut params = ParamSet::new();
        params.push("x", Tensor::vector(vec![1.5, -0.5]));
        let good = grad_check(&params, 1e-5, 1e-4, |v| {
            let x = v[0].data();
            Ok((x[0].powi(3) + x[1].powi(3), vec![Tensor::vector(vec![3.0 * x[0] * x[0], 3.0 * x[1] * x[1]])]))
        })
        .unwrap();
        assert!(good.passed(), "{good:?}");

        let bad = grad_check(&params, 1e-5, 1e-4, |v| {
            let x = v[0].data();
            Ok((x[0].powi(3) + x[1].powi(3), vec![Tensor::vector(vec![x[0] * x[0], 3.0 * x[1] * x[1]])]))
        })
        .unwrap();
        assert!(!bad.passed());
        assert_eq!(bad.entries[0].worst_index, 0);
        assert_eq!(bad.by_group(|_| "all".into()).len(), 1);
    }
}
