use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Largest central-difference step `h`; the estimate combines steps `h`
    /// and `h/2` by Richardson extrapolation.
    pub epsilon: f64,
    /// Denominator floor for the relative error, so that gradients that are
    /// zero up to rounding compare on absolute terms.
    pub floor: f64,
    /// Check at most this many coordinates per parameter (evenly strided).
    pub max_coords_per_param: Option<usize>,
    /// Restrict the check to these parameters.
    pub params: Option<Vec<ParamId>>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            floor: 1e-3,
            max_coords_per_param: None,
            params: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub coords_checked: usize,
    pub loss: f64,
}

fn evaluate<F>(store: &ParamStore, loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let out = loss_fn(&mut g)?;
    if g.shape(out) != (1, 1) {
        return Err(Error::GradCheck(format!("loss has shape {:?}", g.shape(out))));
    }
    Ok(g.scalar(out))
}

/// Compares reverse-mode gradients against extrapolated central finite
/// differences.
///
/// The loss is evaluated twice before anything else; differing values abort
/// the check, since finite differences are meaningless on a noisy function.
pub fn grad_check<F>(store: &mut ParamStore, options: &GradCheckOptions, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let (loss, analytic) = {
        let mut g = Graph::new(store);
        let out = loss_fn(&mut g)?;
        let grads = g.backward(out)?;
        (g.scalar(out), grads)
    };
    let again = evaluate(store, &loss_fn)?;
    if again.to_bits() != loss.to_bits() {
        return Err(Error::GradCheck(format!(
            "loss is not deterministic ({loss} then {again})"
        )));
    }

    let ids: Vec<ParamId> = match &options.params {
        Some(ids) => ids.clone(),
        None => store.iter().map(|(id, _)| id).collect(),
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: None,
        worst_index: 0,
        coords_checked: 0,
        loss,
    };
    for id in ids {
        let n = store.value(id).len();
        let stride = match options.max_coords_per_param {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        for k in (0..n).step_by(stride) {
            let mut central = |h: f64| -> Result<f64> {
                let original = store.value(id).data()[k];
                store.get_mut(id).value.data_mut()[k] = original + h;
                let plus = evaluate(store, &loss_fn);
                store.get_mut(id).value.data_mut()[k] = original - h;
                let minus = evaluate(store, &loss_fn);
                store.get_mut(id).value.data_mut()[k] = original;
                Ok((plus? - minus?) / (2.0 * h))
            };
            let coarse = central(options.epsilon)?;
            let fine = central(options.epsilon / 2.0)?;
            let numeric = (4.0 * fine - coarse) / 3.0;
            let exact = analytic.get(id).map_or(0.0, |g| g.data()[k]);
            let denom = exact.abs().max(numeric.abs()).max(options.floor);
            let rel = (exact - numeric).abs() / denom;
            report.coords_checked += 1;
            if report.worst_param.is_none() || rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_param = Some(store.get(id).name.clone());
                report.worst_index = k;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::matrix::Matrix;
    use std::cell::Cell;

    #[test]
    fn quadratic_loss_is_exact() {
        let mut store = ParamStore::new();
        let w = store
            .register("w", Matrix::row_vector(&[0.3, -1.2, 2.5]).unwrap())
            .unwrap();
        let c = Matrix::row_vector(&[1.0, 2.0, 0.5]).unwrap();
        let report = grad_check(&mut store, &GradCheckOptions::default(), |g| {
            let x = g.param(w);
            let sq = g.mul(x, x)?;
            let weighted = g.mul_const(sq, c.clone())?;
            Ok(g.sum(weighted))
        })
        .unwrap();
        assert!(report.max_relative_error < 1e-8, "{report:?}");
        assert_eq!(report.coords_checked, 3);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut store = ParamStore::new();
        let w = store.register("w", Matrix::row_vector(&[1.0, 2.0]).unwrap()).unwrap();
        let mut g = Graph::new(&store);
        let x = g.param(w);
        let zero = g.scale(x, 0.0);
        let s = g.sum(zero);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(w).unwrap().data().iter().all(|&v| v == 0.0));
        let report = grad_check(&mut store, &GradCheckOptions::default(), |g| {
            let x = g.param(w);
            let zero = g.scale(x, 0.0);
            Ok(g.sum(zero))
        })
        .unwrap();
        assert_eq!(report.max_relative_error, 0.0);
    }

    #[test]
    fn nondeterministic_loss_aborts() {
        let mut store = ParamStore::new();
        let w = store.register("w", Matrix::scalar(1.0)).unwrap();
        let calls = Cell::new(0.0);
        let err = grad_check(&mut store, &GradCheckOptions::default(), |g| {
            calls.set(calls.get() + 1.0);
            let x = g.param(w);
            let s = g.scale(x, calls.get());
            Ok(g.sum(s))
        })
        .unwrap_err();
        assert!(matches!(err, Error::GradCheck(_)));
    }
}
