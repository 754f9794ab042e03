use crate::error::Result;
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Location of one scalar inside a list of parameter tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coord {
    pub tensor: usize,
    pub index: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheck<T> {
    /// Max over checked scalars of `|g_ad − g_fd| / max(|g_ad|, |g_fd|, floor)`.
    pub max_rel_error: T,
    pub worst: Option<Coord>,
    pub checked: usize,
    /// Scalars where the one-sided differences disagree (a kink such as
    /// ReLU at 0); these are left out of `max_rel_error`.
    pub excluded: Vec<Coord>,
}

/// Compares autodiff gradients to central finite differences.
///
/// `loss` evaluates the (deterministic) objective at the given parameters;
/// `grad` returns the autodiff gradient at the unperturbed parameters.
///
/// The denominator floor is `max(1e-8, 1e4 · r)` with
/// `r = 100 ε · max(|loss|, 1) / eps`, the slope a central difference can
/// resolve when the loss carries ~100 ulps of roundoff. Near-zero gradients
/// (dead ReLU units, say) are thus compared in absolute terms at that
/// resolution.
pub fn finite_difference_check<T, L, G>(
    params: &[Matrix<T>],
    eps: T,
    mut loss: L,
    grad: G,
) -> Result<GradCheck<T>>
where
    T: Scalar,
    L: FnMut(&[Matrix<T>]) -> Result<T>,
    G: FnOnce(&[Matrix<T>]) -> Result<Vec<Matrix<T>>>,
{
    let analytic = grad(params)?;
    let base = loss(params)?;
    let mut work: Vec<Matrix<T>> = params.to_vec();
    let resolution = T::lit(100.0) * T::epsilon() * base.abs().max(T::one()) / eps;
    let floor = T::lit(1e-8).max(T::lit(1e4) * resolution);
    let two = T::lit(2.0);
    let kink_abs = T::lit(1e-3);
    let kink_rel = T::lit(0.1);

    let mut report = GradCheck {
        max_rel_error: T::zero(),
        worst: None,
        checked: 0,
        excluded: Vec::new(),
    };
    for (t, p) in params.iter().enumerate() {
        for idx in 0..p.len() {
            let orig = p.as_slice()[idx];
            work[t].as_mut_slice()[idx] = orig + eps;
            let up = loss(&work)?;
            work[t].as_mut_slice()[idx] = orig - eps;
            let down = loss(&work)?;
            work[t].as_mut_slice()[idx] = orig;

            let coord = Coord { tensor: t, index: idx };
            let fwd = (up - base) / eps;
            let bwd = (base - down) / eps;
            let gap = (fwd - bwd).abs();
            if gap > kink_abs && gap > kink_rel * fwd.abs().max(bwd.abs()) {
                report.excluded.push(coord);
                continue;
            }
            let fd = (up - down) / (two * eps);
            let ad = analytic[t].as_slice()[idx];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some(coord);
            }
        }
    }
    Ok(report)
}
