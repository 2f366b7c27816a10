//! Derivative-free local search (Nelder–Mead) used for the covariance search.

/// Stopping rules and the size of the initial simplex.
#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop once the spread of simplex values is below `f_tol` and its
    /// diameter is below `x_tol`.
    pub f_tol: f64,
    pub x_tol: f64,
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { max_evals: 400, f_tol: 1e-9, x_tol: 1e-7, initial_step: 0.25 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

/// Minimizes `f` from `x0`. Non-finite values are treated as `+inf`.
/// `stop_below` ends the search as soon as some evaluation reaches it.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    opts: &NelderMeadOptions,
    stop_below: Option<f64>,
) -> Minimum {
    let d = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let reached = |v: f64| stop_below.is_some_and(|t| v <= t);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    let mut values: Vec<f64> = Vec::with_capacity(d + 1);
    simplex.push(x0.to_vec());
    values.push(eval(x0, &mut evals));
    if d == 0 || reached(values[0]) {
        return Minimum { x: x0.to_vec(), value: values[0], evals };
    }
    for i in 0..d {
        let mut x = x0.to_vec();
        let step = if x[i].abs() > 1e-8 { opts.initial_step * x[i].abs().max(0.1) } else { opts.initial_step };
        x[i] += step;
        let v = eval(&x, &mut evals);
        simplex.push(x);
        values.push(v);
        if reached(v) {
            return Minimum { x: simplex.pop().unwrap(), value: v, evals };
        }
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut order: Vec<usize> = (0..=d).collect();
    while evals < opts.max_evals {
        // stable sort keeps ties in insertion order, so runs are reproducible
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[d];
        let second = order[d - 1];
        if reached(values[best]) {
            break;
        }
        let spread = values[worst] - values[best];
        let diameter = simplex
            .iter()
            .map(|x| x.iter().zip(&simplex[best]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread <= opts.f_tol && diameter <= opts.x_tol {
            break;
        }

        let mut centroid = vec![0.0; d];
        for &i in &order[..d] {
            for (c, v) in centroid.iter_mut().zip(&simplex[i]) {
                *c += v / d as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[worst]).map(|(c, w)| c + t * (c - w)).collect()
        };

        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < values[best] {
            let xe = along(gamma);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                simplex[worst] = xe;
                values[worst] = fe;
            } else {
                simplex[worst] = xr;
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second] {
            simplex[worst] = xr;
            values[worst] = fr;
            continue;
        }
        let (xc, fc) = if fr < values[worst] {
            let xc = along(rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = eval(&xc, &mut evals);
            (xc, fc)
        };
        if fc < values[worst].min(fr) {
            simplex[worst] = xc;
            values[worst] = fc;
            continue;
        }
        // shrink toward the best vertex
        let xb = simplex[best].clone();
        for &i in &order[1..] {
            let x: Vec<f64> = xb.iter().zip(&simplex[i]).map(|(b, v)| b + sigma * (v - b)).collect();
            values[i] = eval(&x, &mut evals);
            simplex[i] = x;
        }
    }
    let best = (0..=d).min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b))).unwrap();
    Minimum { x: simplex[best].clone(), value: values[best], evals }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let opts = NelderMeadOptions { max_evals: 2000, ..Default::default() };
        let m = nelder_mead(|x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2), &[0.0, 0.0], &opts, None);
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] + 2.0).abs() < 1e-3, "{:?}", m.x);
    }

    #[test]
    fn rosenbrock() {
        let opts = NelderMeadOptions { max_evals: 5000, f_tol: 1e-14, x_tol: 1e-10, initial_step: 0.5 };
        let m = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &opts,
            None,
        );
        assert!(m.value < 1e-6, "{}", m.value);
    }

    #[test]
    fn early_stop_and_eval_budget() {
        let opts = NelderMeadOptions { max_evals: 50, ..Default::default() };
        let m = nelder_mead(|x| x[0] * x[0], &[3.0], &opts, Some(10.0));
        assert_eq!(m.evals, 1);
        let m = nelder_mead(|x| x.iter().map(|v| v.abs()).sum(), &[5.0; 4], &opts, None);
        assert!(m.evals <= 50 + 4 + 2);
    }
}
