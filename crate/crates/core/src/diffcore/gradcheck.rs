//! Central finite-difference checks of analytic gradients.

use super::{DiffError, Graph, NodeId, ParamId, ParameterRegistry};

/// Denominator floor for the relative error, so gradients that are zero up
/// to round-off are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<GradCheckEntry>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `backward` against `(f(θ+h) - f(θ-h)) / 2h` for every entry of
/// the selected parameters (all parameters when `only` is empty), visiting at
/// most `max_per_param` evenly spaced entries of each.
pub fn check_gradients<F>(
    registry: &ParameterRegistry,
    only: &[ParamId],
    h: f64,
    max_per_param: usize,
    f: F,
) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId, DiffError>,
{
    let analytic = {
        let mut g = Graph::new(registry);
        let loss = f(&mut g)?;
        g.backward(loss)?.into_params()
    };
    let ids: Vec<ParamId> = if only.is_empty() {
        registry.ids().collect()
    } else {
        only.to_vec()
    };
    let eval = |reg: &ParameterRegistry| -> Result<f64, DiffError> {
        let mut g = Graph::new(reg);
        let loss = f(&mut g)?;
        Ok(g.scalar(loss))
    };

    let mut work = registry.clone();
    let mut report = GradCheckReport::default();
    for id in ids {
        let n = registry.value(id).len();
        let step = n.div_ceil(max_per_param.max(1)).max(1);
        for k in (0..n).step_by(step) {
            let orig = work.value(id).data()[k];
            work.value_mut(id).data_mut()[k] = orig + h;
            let plus = eval(&work)?;
            work.value_mut(id).data_mut()[k] = orig - h;
            let minus = eval(&work)?;
            work.value_mut(id).data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id).data()[k];
            let rel = relative_error(a, numeric);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some(GradCheckEntry {
                    param: registry.name(id).to_string(),
                    index: k,
                    analytic: a,
                    numeric,
                    rel_error: rel,
                });
            }
        }
    }
    Ok(report)
}
