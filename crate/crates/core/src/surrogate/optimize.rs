//! Derivative-free Nelder–Mead simplex search with box clamping.

use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of objective values across the simplex is below this.
    pub f_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 400,
            f_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum<T> {
    pub x: Vec<T>,
    pub value: T,
    pub evals: usize,
}

/// Minimise `f` starting at `x0`. Non-finite objective values are treated as
/// `+inf`. Every trial point is clamped into `[lower, upper]`.
pub fn nelder_mead<T: Real>(
    f: impl Fn(&[T]) -> T,
    x0: &[T],
    step: &[T],
    lower: &[T],
    upper: &[T],
    opts: &NelderMeadOptions,
) -> Minimum<T> {
    let dim = x0.len();
    let clamp = |x: &mut Vec<T>| {
        for ((v, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
            *v = v.max(lo).min(hi);
        }
    };
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[T]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            T::infinity()
        }
    };
    if dim == 0 {
        let value = eval(x0);
        return Minimum {
            x: Vec::new(),
            value,
            evals: evals.get(),
        };
    }

    let mut simplex: Vec<(Vec<T>, T)> = Vec::with_capacity(dim + 1);
    let mut start = x0.to_vec();
    clamp(&mut start);
    let v0 = eval(&start);
    simplex.push((start.clone(), v0));
    for i in 0..dim {
        let mut p = start.clone();
        p[i] = p[i] + step[i];
        clamp(&mut p);
        if p[i] == start[i] {
            p[i] = p[i] - step[i];
            clamp(&mut p);
        }
        let v = eval(&p);
        simplex.push((p, v));
    }

    let (alpha, gamma, rho, sigma) = (T::one(), T::lit(2.0), T::lit(0.5), T::lit(0.5));
    let f_tol = T::lit(opts.f_tol);
    while evals.get() < opts.max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        if worst.is_finite() && (worst - best).abs() <= f_tol * (T::one() + best.abs()) {
            break;
        }
        let mut centroid = vec![T::zero(); dim];
        for (p, _) in &simplex[..dim] {
            for (c, &v) in centroid.iter_mut().zip(p) {
                *c = *c + v;
            }
        }
        for c in &mut centroid {
            *c = *c / T::lit(dim as f64);
        }
        let toward = |coef: T| -> Vec<T> {
            centroid
                .iter()
                .zip(&simplex[dim].0)
                .map(|(&c, &w)| c + coef * (c - w))
                .collect()
        };
        let mut xr = toward(alpha);
        clamp(&mut xr);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let mut xe = toward(gamma);
            clamp(&mut xe);
            let fe = eval(&xe);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
            continue;
        }
        let (mut xc, outside) = if fr < simplex[dim].1 {
            (toward(rho), true)
        } else {
            (toward(-rho), false)
        };
        clamp(&mut xc);
        let fc = eval(&xc);
        if (outside && fc <= fr) || (!outside && fc < simplex[dim].1) {
            simplex[dim] = (xc, fc);
            continue;
        }
        // shrink toward the best vertex
        let best_x = simplex[0].0.clone();
        for (p, v) in simplex.iter_mut().skip(1) {
            for (pi, &bi) in p.iter_mut().zip(&best_x) {
                *pi = bi + sigma * (*pi - bi);
            }
            *v = eval(p);
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let (x, value) = simplex.swap_remove(0);
    Minimum {
        x,
        value,
        evals: evals.get(),
    }
}
