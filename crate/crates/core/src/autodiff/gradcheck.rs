use super::{AutodiffError, Recording, Tensor};

/// Denominator floor used by [`relative_error`].
pub const REL_ERROR_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares reverse-mode gradients of `f` against central differences at
/// every coordinate of every leaf and returns the worst relative error.
///
/// `f` receives a recording and the leaves (registered on that recording
/// when gradients are wanted) and must return a scalar.
pub fn finite_diff_check<F>(f: F, leaves: &[Tensor], step: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Recording, &[Tensor]) -> Result<Tensor, AutodiffError>,
{
    if !(step > 0.0) {
        return Err(AutodiffError::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let eval = |points: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut rec = Recording::inactive();
        let out = f(&mut rec, points)?;
        if !out.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(out.shape().to_vec()));
        }
        Ok(out.item())
    };

    let base: Vec<Tensor> = leaves.iter().map(Tensor::detach).collect();
    let first = eval(&base)?;
    let second = eval(&base)?;
    if first.to_bits() != second.to_bits() {
        return Err(AutodiffError::NonDeterministic { first, second });
    }

    let mut rec = Recording::new();
    let registered: Vec<Tensor> = base.iter().map(|t| rec.leaf(t)).collect();
    let loss = f(&mut rec, &registered)?;
    if loss.item().to_bits() != first.to_bits() {
        return Err(AutodiffError::NonDeterministic {
            first,
            second: loss.item(),
        });
    }
    // A loss that never touched a leaf has zero gradient everywhere.
    let grads = match loss.node_id() {
        Some(_) => Some(rec.backward(&loss)?),
        None => None,
    };

    let mut worst: f64 = 0.0;
    for (i, leaf) in registered.iter().enumerate() {
        let analytic = match &grads {
            Some(g) => g.get(leaf).ok_or(AutodiffError::LossNotRecorded)?.to_vec(),
            None => vec![0.0; leaf.len()],
        };
        for j in 0..leaf.len() {
            let mut points = base.clone();
            let probe = |delta: f64, points: &mut Vec<Tensor>| {
                let mut v = base[i].to_vec();
                v[j] += delta;
                points[i] = Tensor::new(base[i].shape().to_vec(), v).expect("same shape");
            };
            probe(step, &mut points);
            let plus = eval(&points)?;
            probe(-step, &mut points);
            let minus = eval(&points)?;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(analytic[j], numeric));
        }
    }
    Ok(worst)
}
