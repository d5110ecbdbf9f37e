//! Nelder-Mead on a box, with trial points projected onto the bounds.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    /// Converged once every vertex lies within this distance (max-norm) of
    /// the best one.
    pub tol: f64,
    /// Initial simplex edge as a fraction of each bound width.
    pub initial_step: f64,
    /// Fresh simplices built around the best point after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            max_iter: 2000,
            tol: 1e-10,
            initial_step: 0.05,
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub simplex_size: f64,
    /// Best objective after each iteration.
    pub history: Vec<f64>,
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *v = v.clamp(lo, hi);
    }
}

/// Minimises `f` over the box `bounds` starting from `x0`.
pub fn minimize<F>(f: F, x0: &[f64], bounds: &[(f64, f64)], opts: &NelderMeadOptions) -> NelderMeadResult
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(x0.len(), bounds.len());
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut start = x0.to_vec();
    project(&mut start, bounds);
    let mut best_f = eval(&start);
    let mut history = Vec::new();
    let mut iterations = 0usize;
    let mut converged = false;
    let mut simplex_size = f64::INFINITY;

    for _round in 0..=opts.restarts {
        let (x, fx, size, ok) = run(
            &mut eval,
            &start,
            best_f,
            bounds,
            opts,
            &mut iterations,
            &mut history,
        );
        let improved = fx < best_f;
        simplex_size = size;
        converged = ok;
        start = x;
        best_f = fx;
        if !ok || !improved {
            break;
        }
    }

    NelderMeadResult {
        x: start,
        f: best_f,
        iterations,
        evaluations,
        converged,
        simplex_size,
        history,
    }
}

fn run(
    eval: &mut impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    f0: f64,
    bounds: &[(f64, f64)],
    opts: &NelderMeadOptions,
    iterations: &mut usize,
    history: &mut Vec<f64>,
) -> (Vec<f64>, f64, f64, bool) {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let (lo, hi) = bounds[i];
        let step = opts.initial_step * (hi - lo);
        let mut x = x0.to_vec();
        x[i] = if x[i] + step <= hi { x[i] + step } else { x[i] - step };
        project(&mut x, bounds);
        let fx = eval(&x);
        simplex.push((x, fx));
    }

    let size_of = |s: &[(Vec<f64>, f64)]| {
        s[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&s[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    };

    loop {
        // stable: ties keep the older vertex ahead
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let size = size_of(&simplex);
        if size < opts.tol {
            return (simplex[0].0.clone(), simplex[0].1, size, true);
        }
        if *iterations >= opts.max_iter {
            return (simplex[0].0.clone(), simplex[0].1, size, false);
        }
        *iterations += 1;

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let along = |t: f64| {
            let mut x: Vec<f64> = centroid.iter().zip(&worst.0).map(|(c, w)| c + t * (c - w)).collect();
            project(&mut x, bounds);
            x
        };

        let xr = along(REFLECT);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(EXPAND);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = along(CONTRACT);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(-CONTRACT);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let mut x: Vec<f64> = best.iter().zip(&v.0).map(|(b, x)| b + SHRINK * (x - b)).collect();
                    project(&mut x, bounds);
                    v.1 = eval(&x);
                    v.0 = x;
                }
            }
        }
        let best = simplex.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
        history.push(best);
    }
}
