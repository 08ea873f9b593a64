//! Nelder-Mead simplex minimization with dimension-adaptive coefficients
//! (Gao & Han) and restarts from the best vertex.

#[derive(Clone, Debug)]
pub(crate) struct SimplexOptions {
    pub max_iter: usize,
    /// Converged when the spread of vertex values is below
    /// `ftol * max(1, |f_best|)`.
    pub ftol: f64,
    pub initial_step: f64,
    /// Fresh simplices built around the incumbent after a converged pass.
    pub polish_passes: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            ftol: 1e-10,
            initial_step: 0.1,
            polish_passes: 3,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct SimplexResult {
    pub x: Vec<f64>,
    pub fval: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

pub(crate) fn minimize<F>(mut f: F, x0: &[f64], opts: &SimplexOptions) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = x0.to_vec();
    let mut fval = sanitize(f(&x));
    let mut iterations = 0;
    let mut step = opts.initial_step;
    let mut converged = false;

    for pass in 0..=opts.polish_passes {
        let budget = opts.max_iter.saturating_sub(iterations);
        if budget == 0 {
            converged = false;
            break;
        }
        let run = nelder_mead(&mut f, &x, step, opts.ftol, budget);
        iterations += run.iterations;
        let improvement = fval - run.fval;
        let improved = run.fval < fval;
        if improved {
            x = run.x;
            fval = run.fval;
        }
        converged = run.converged;
        if !run.converged {
            break;
        }
        // A fresh simplex that cannot improve on the incumbent confirms the optimum.
        if pass > 0 && improvement <= opts.ftol * fval.abs().max(1.0) {
            break;
        }
        step *= 0.1;
    }

    SimplexResult {
        x,
        fval,
        iterations,
        converged,
    }
}

fn nelder_mead<F>(f: &mut F, x0: &[f64], step: f64, ftol: f64, max_iter: usize) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let nf = n as f64;
    let alpha = 1.0;
    let gamma = 1.0 + 2.0 / nf;
    let rho = 0.75 - 1.0 / (2.0 * nf);
    let sigma = 1.0 - 1.0 / nf;

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        let h = if v[i].abs() > 1e-8 { step * v[i].abs().max(step) } else { step };
        v[i] += h;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| sanitize(f(v))).collect();

    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let best = values[0];
        let worst = values[n];
        if (worst - best).abs() <= ftol * best.abs().max(1.0) {
            converged = true;
            break;
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / nf;
            }
        }

        let along = |out: &mut Vec<f64>, coef: f64, worst: &[f64], centroid: &[f64]| {
            for ((o, c), w) in out.iter_mut().zip(centroid).zip(worst) {
                *o = c + coef * (c - w);
            }
        };

        along(&mut trial, alpha, &simplex[n], &centroid);
        let fr = sanitize(f(&trial));

        if fr < values[0] {
            along(&mut trial2, gamma, &simplex[n], &centroid);
            let fe = sanitize(f(&trial2));
            if fe < fr {
                simplex[n].copy_from_slice(&trial2);
                values[n] = fe;
            } else {
                simplex[n].copy_from_slice(&trial);
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n].copy_from_slice(&trial);
            values[n] = fr;
            continue;
        }
        // contraction
        let (coef, reference) = if fr < values[n] { (rho, fr) } else { (-rho, values[n]) };
        along(&mut trial2, coef, &simplex[n], &centroid);
        let fc = sanitize(f(&trial2));
        if fc < reference {
            simplex[n].copy_from_slice(&trial2);
            values[n] = fc;
            continue;
        }
        // shrink towards the best vertex
        let best_vertex = simplex[0].clone();
        for i in 1..=n {
            for (x, b) in simplex[i].iter_mut().zip(&best_vertex) {
                *x = b + sigma * (*x - b);
            }
            values[i] = sanitize(f(&simplex[i]));
        }
    }

    let (ibest, _) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("simplex is non-empty");
    SimplexResult {
        x: simplex[ibest].clone(),
        fval: values[ibest],
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let res = minimize(rosen, &[-1.2, 1.0], &SimplexOptions { ftol: 1e-14, ..Default::default() });
        assert!(res.converged);
        assert!((res.x[0] - 1.0).abs() < 1e-5 && (res.x[1] - 1.0).abs() < 1e-5, "{:?}", res.x);
    }

    #[test]
    fn minimizes_shifted_quadratic_in_17_dimensions() {
        let target: Vec<f64> = (0..17).map(|i| (i as f64 * 0.37).sin()).collect();
        let q = |x: &[f64]| {
            x.iter()
                .zip(&target)
                .enumerate()
                .map(|(i, (a, b))| (1.0 + i as f64) * (a - b).powi(2))
                .sum::<f64>()
        };
        let res = minimize(q, &[0.0; 17], &SimplexOptions { ftol: 1e-16, max_iter: 200_000, ..Default::default() });
        assert!(res.fval < 1e-10, "{}", res.fval);
    }

    #[test]
    fn reports_non_convergence_when_budget_is_exhausted() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let res = minimize(rosen, &[-1.2, 1.0], &SimplexOptions { max_iter: 5, ..Default::default() });
        assert!(!res.converged);
        assert_eq!(res.iterations, 5);
    }
}
