//! Central finite differences, used as an independent gradient oracle.

use crate::error::{Error, Result};
use crate::nn::params::ParamSet;

/// `(f(w + h) - f(w - h)) / 2h` for every scalar of every trainable entry.
pub fn finite_difference_gradient<F>(mut f: F, params: &ParamSet, step: f64) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    let coords: Vec<(usize, usize)> = params
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.role.is_trainable())
        .flat_map(|(i, e)| (0..e.tensor.len()).map(move |j| (i, j)))
        .collect();
    let values = finite_difference_at(&mut f, params, &coords, step)?;
    let mut out: Vec<Vec<f64>> = params
        .entries()
        .iter()
        .map(|e| if e.role.is_trainable() { vec![0.0; e.tensor.len()] } else { Vec::new() })
        .collect();
    for ((i, j), v) in coords.into_iter().zip(values) {
        out[i][j] = v;
    }
    Ok(out)
}

/// Central differences at selected `(entry, flat index)` coordinates.
pub fn finite_difference_at<F>(
    mut f: F,
    params: &ParamSet,
    coords: &[(usize, usize)],
    step: f64,
) -> Result<Vec<f64>>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {step}")));
    }
    let mut work = params.clone();
    let mut out = Vec::with_capacity(coords.len());
    for &(i, j) in coords {
        let orig = work.get(i).tensor.data()[j];
        work.get_mut(i).tensor.data_mut()[j] = orig + step;
        let plus = f(&work)?;
        work.get_mut(i).tensor.data_mut()[j] = orig - step;
        let minus = f(&work)?;
        work.get_mut(i).tensor.data_mut()[j] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps near-zero pairs from
/// reporting huge relative error on rounding noise.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::Role;
    use crate::nn::tensor::Tensor;

    fn scalar_param(w: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.push("w", Tensor::scalar(w), Role::Dense).unwrap();
        p
    }

    #[test]
    fn identity_has_unit_slope() {
        let p = scalar_param(0.7);
        let step = 1e-3;
        let g = finite_difference_gradient(|p| Ok(p.get(0).tensor.data()[0]), &p, step).unwrap();
        assert!((g[0][0] - 1.0).abs() <= step * step);
    }

    #[test]
    fn quadratic_is_exact_up_to_rounding() {
        let p = scalar_param(3.0);
        let g = finite_difference_gradient(
            |p| {
                let w = p.get(0).tensor.data()[0];
                Ok(w * w)
            },
            &p,
            1e-4,
        )
        .unwrap();
        assert!((g[0][0] - 6.0).abs() < 1e-7);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let p = scalar_param(1.0);
        assert!(finite_difference_gradient(|_| Ok(0.0), &p, 0.0).is_err());
    }
}
