//! Finite-difference gradient verification.

use crate::tensor::Tensor;

/// Result of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f32,
    pub checked: usize,
    pub skipped_kinks: usize,
}

/// Compares the analytic gradient of a scalar-valued map against central
/// finite differences over every coordinate.
///
/// `f` evaluates the map at a point and returns `(value, gradient)`; it must
/// be deterministic, and the value should be accumulated in f64 so that the
/// difference quotient is not dominated by quantization. Coordinates whose
/// one-sided difference quotients disagree are treated as sitting on a
/// ReLU/maxpool kink within `eps` and skipped.
pub fn grad_check<F>(f: &mut F, x: &Tensor, eps: f32) -> GradCheckReport
where
    F: FnMut(&Tensor) -> (f64, Tensor),
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    grad_check_at(f, x, eps, &coords)
}

/// Budgeted variant for large inputs: checks at most `max_coords`
/// evenly spaced coordinates.
pub fn grad_check_sampled<F>(f: &mut F, x: &Tensor, eps: f32, max_coords: usize) -> GradCheckReport
where
    F: FnMut(&Tensor) -> (f64, Tensor),
{
    let n = x.numel();
    if n <= max_coords {
        return grad_check(f, x, eps);
    }
    let coords: Vec<usize> = (0..max_coords).map(|i| i * n / max_coords).collect();
    grad_check_at(f, x, eps, &coords)
}

fn grad_check_at<F>(f: &mut F, x: &Tensor, eps: f32, coords: &[usize]) -> GradCheckReport
where
    F: FnMut(&Tensor) -> (f64, Tensor),
{
    let (_, analytic) = f(x);
    assert_eq!(analytic.shape(), x.shape(), "gradient shape mismatch");
    let mut max_rel = 0.0f32;
    let mut checked = 0;
    let mut skipped = 0;
    let mut xp = x.clone();
    for &i in coords {
        let orig = x.data()[i];
        xp.data_mut()[i] = orig + eps;
        let (fp, gp) = f(&xp);
        xp.data_mut()[i] = orig - eps;
        let (fm, gm) = f(&xp);
        xp.data_mut()[i] = orig;
        let (f0, _) = f(&xp);

        let e = eps as f64;
        let d_plus = (fp - f0) / e;
        let d_minus = (f0 - fm) / e;
        // a kink within eps makes the one-sided quotients disagree beyond
        // what smooth curvature at this step size produces
        let spread = (d_plus - d_minus).abs();
        if spread > 0.03 * (d_plus.abs() + d_minus.abs()) + 1e-5 {
            skipped += 1;
            continue;
        }
        // a ReLU/maxpool flip between the probe points also shows up as a
        // jump in the analytic gradient itself
        let (gpi, gmi) = (gp.data()[i] as f64, gm.data()[i] as f64);
        if (gpi - gmi).abs() > 0.03 * (gpi.abs() + gmi.abs()) + 1e-5 {
            skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * e);
        let a = analytic.data()[i] as f64;
        let denom = a.abs().max(numeric.abs()).max(1.0);
        let rel = ((a - numeric).abs() / denom) as f32;
        if rel > max_rel {
            max_rel = rel;
        }
        checked += 1;
    }
    GradCheckReport {
        max_rel_err: max_rel,
        checked,
        skipped_kinks: skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact() {
        // f(x) = sum(x^2), grad = 2x
        let mut f = |x: &Tensor| {
            let v: f64 = x.data().iter().map(|&a| (a as f64) * (a as f64)).sum();
            (v, x.map(|a| 2.0 * a))
        };
        let x = Tensor::from_vec(&[3], vec![0.3, -0.7, 1.1]);
        let rep = grad_check(&mut f, &x, 1e-3);
        assert_eq!(rep.checked, 3);
        assert!(rep.max_rel_err < 1e-3, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn relu_kink_is_skipped() {
        let mut f = |x: &Tensor| {
            let v: f64 = x.data().iter().map(|&a| a.max(0.0) as f64).sum();
            (v, x.map(|a| if a > 0.0 { 1.0 } else { 0.0 }))
        };
        // one coordinate sits exactly on the kink
        let x = Tensor::from_vec(&[3], vec![0.5, 0.0, -0.5]);
        let rep = grad_check(&mut f, &x, 1e-3);
        assert_eq!(rep.skipped_kinks, 1);
        assert!(rep.max_rel_err < 1e-3);
    }

    #[test]
    fn sampling_spreads_coordinates() {
        let mut f = |x: &Tensor| {
            let v: f64 = x.data().iter().map(|&a| a as f64).sum();
            (v, Tensor::filled(x.shape(), 1.0))
        };
        let x = Tensor::zeros(&[100]);
        let rep = grad_check_sampled(&mut f, &x, 1e-3, 10);
        assert_eq!(rep.checked, 10);
    }
}
