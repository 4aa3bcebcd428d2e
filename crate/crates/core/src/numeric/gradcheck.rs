use super::ParamStore;
use crate::error::{Error, Result};

/// Below this gradient magnitude the comparison is effectively absolute.
/// Central differences at ε = 1e-5 on losses of order 10 carry about 1e-10
/// of rounding noise, which would swamp a purely relative measure.
pub const DENOMINATOR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coordinates: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Compares analytic gradients against central differences.
///
/// `loss` must evaluate the objective for the current store values and
/// accumulate its gradient into the store (a forward pass plus
/// [`Graph::backward`](super::Graph::backward)). It must be deterministic.
/// With `per_param = Some(k)` at most `k` evenly spaced coordinates of each
/// parameter are probed.
pub fn finite_difference_check<F>(
    store: &mut ParamStore,
    epsilon: f64,
    per_param: Option<usize>,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamStore) -> Result<f64>,
{
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Usage(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    store.zero_grads();
    let base = loss(store)?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss {base} at unperturbed point"
        )));
    }
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.data().to_vec()).collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coordinates: 0,
        worst: None,
    };
    let ids: Vec<_> = store.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        let len = store.get(id).value.len();
        let step = match per_param {
            Some(k) if k > 0 && len > k => len.div_ceil(k),
            _ => 1,
        };
        for i in (0..len).step_by(step) {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + epsilon;
            let plus = loss(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - epsilon;
            let minus = loss(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss at perturbed coordinate {i} of `{}`",
                    store.get(id).name
                )));
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[pi][i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(DENOMINATOR_FLOOR);
            report.coordinates += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.get(id).name.clone(), i));
            }
        }
    }
    store.zero_grads();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{Graph, Tensor};

    #[test]
    fn quadratic_loss_is_exact() {
        let mut store = ParamStore::new();
        store
            .add(
                "theta",
                Tensor::from_vec(1, 4, vec![0.5, -1.25, 2.0, 3.5]).unwrap(),
            )
            .unwrap();
        let id = store.id("theta").unwrap();
        let report = finite_difference_check(&mut store, 1e-5, None, |s| {
            let mut g = Graph::new();
            let p = g.param(s, id);
            let sq = g.mul(p, p)?;
            let total = g.sum(sq);
            let loss = g.scale(total, 0.5);
            g.backward(loss, s)?;
            Ok(g.scalar(loss))
        })
        .unwrap();
        assert_eq!(report.coordinates, 4);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(2, 2)).unwrap();
        let report = finite_difference_check(&mut store, 1e-5, None, |_| Ok(3.0)).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(1, 1)).unwrap();
        let err = finite_difference_check(&mut store, 1e-5, None, |_| Ok(f64::NAN)).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }
}
