//! Derivative-free local optimizers on boxes.
//!
//! All routines minimize; callers maximizing a log-likelihood pass its
//! negation. Non-finite objective values are treated as `+∞`.

/// Axis-aligned box `[lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        debug_assert!(lower.iter().zip(&upper).all(|(l, u)| l <= u));
        Bounds { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOptions {
    /// Initial step per coordinate, as a fraction of the box width.
    pub initial_step: f64,
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below `f_tol`.
    pub f_tol: f64,
    /// ... and the simplex diameter falls below `x_tol`.
    pub x_tol: f64,
    /// Number of restarts from the best vertex after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions {
            initial_step: 0.05,
            max_evals: 2000,
            f_tol: 1e-8,
            x_tol: 1e-6,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

fn clean(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Nelder–Mead on a box: every trial point is projected onto the box.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], bounds: &Bounds, opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    assert_eq!(dim, bounds.dim());
    let mut start = x0.to_vec();
    bounds.project(&mut start);
    let mut evals = 0usize;
    let mut best = Minimum {
        f: {
            evals += 1;
            clean(f(&start))
        },
        x: start,
        evals: 0,
        converged: false,
    };
    for _ in 0..=opts.restarts {
        let run = nelder_mead_once(&mut f, &best.x, bounds, opts, &mut evals);
        let improved = run.f < best.f;
        let converged = run.converged;
        if improved || best.f.is_infinite() {
            best = run;
        }
        best.converged = converged;
        if evals >= opts.max_evals {
            break;
        }
    }
    best.evals = evals;
    best
}

fn nelder_mead_once<F>(f: &mut F, x0: &[f64], bounds: &Bounds, opts: &NelderMeadOptions, evals: &mut usize) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    let (alpha, gamma, rho, shrink) = (1.0, 2.0, 0.5, 0.5);
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        clean(f(x))
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    for i in 0..dim {
        let width = bounds.upper[i] - bounds.lower[i];
        let step = if width.is_finite() && width > 0.0 {
            opts.initial_step * width
        } else {
            opts.initial_step * x0[i].abs().max(1.0)
        };
        let mut v = x0.to_vec();
        v[i] += step;
        if v[i] > bounds.upper[i] {
            v[i] = x0[i] - step;
        }
        bounds.project(&mut v);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, evals)).collect();
    let mut converged = false;

    while *evals < opts.max_evals {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[dim] - values[0];
        let diameter = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread.is_finite() && spread <= opts.f_tol * (1.0 + values[0].abs()) && diameter <= opts.x_tol {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; dim];
        for v in &simplex[..dim] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / dim as f64;
            }
        }
        let toward = |coef: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&simplex[dim])
                .map(|(c, w)| c + coef * (c - w))
                .collect();
            bounds.project(&mut p);
            p
        };

        let reflected = toward(alpha);
        let fr = eval(&reflected, evals);
        if fr < values[0] {
            let expanded = toward(gamma);
            let fe = eval(&expanded, evals);
            if fe < fr {
                simplex[dim] = expanded;
                values[dim] = fe;
            } else {
                simplex[dim] = reflected;
                values[dim] = fr;
            }
            continue;
        }
        if fr < values[dim - 1] {
            simplex[dim] = reflected;
            values[dim] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[dim] {
            let p = toward(rho * alpha);
            let fp = eval(&p, evals);
            (p, fp)
        } else {
            let p = toward(-rho);
            let fp = eval(&p, evals);
            (p, fp)
        };
        if fc < values[dim].min(fr) {
            simplex[dim] = contracted;
            values[dim] = fc;
            continue;
        }
        let best = simplex[0].clone();
        for i in 1..=dim {
            let mut p: Vec<f64> = best
                .iter()
                .zip(&simplex[i])
                .map(|(b, v)| b + shrink * (v - b))
                .collect();
            bounds.project(&mut p);
            values[i] = eval(&p, evals);
            simplex[i] = p;
        }
    }

    let best = (0..=dim).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        f: values[best],
        evals: *evals,
        converged,
    }
}

/// Brent's bounded scalar minimization (golden section with parabolic steps).
pub fn brent<F>(mut f: F, lower: f64, upper: f64, x_tol: f64, max_evals: usize) -> Minimum
where
    F: FnMut(f64) -> f64,
{
    let golden = 0.5 * (3.0 - 5f64.sqrt());
    let (mut a, mut b) = (lower, upper);
    let mut x = a + golden * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = clean(f(x));
    let (mut fw, mut fv) = (fx, fx);
    let mut evals = 1;
    let (mut d, mut e) = (0.0f64, 0.0f64);
    let mut converged = false;

    while evals < max_evals {
        let mid = 0.5 * (a + b);
        let tol1 = 1.5e-8 * x.abs() + x_tol / 3.0;
        let tol2 = 2.0 * tol1;
        if (x - mid).abs() <= tol2 - 0.5 * (b - a) {
            converged = true;
            break;
        }
        let mut golden_step = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if (u - a) < tol2 || (b - u) < tol2 {
                    d = if x < mid { tol1 } else { -tol1 };
                }
                golden_step = false;
            }
        }
        if golden_step {
            e = if x >= mid { a - x } else { b - x };
            d = golden * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = clean(f(u));
        evals += 1;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    Minimum {
        x: vec![x],
        f: fx,
        evals,
        converged,
    }
}

/// Central-difference Hessian of `f` at `x` with per-coordinate steps `h`.
pub fn numerical_hessian<F>(mut f: F, x: &[f64], h: &[f64]) -> Vec<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x.len();
    let f0 = f(x);
    let mut at = |shifts: &[(usize, f64)]| {
        let mut p = x.to_vec();
        for &(i, s) in shifts {
            p[i] += s;
        }
        f(&p)
    };
    let mut hess = vec![vec![0.0; d]; d];
    for i in 0..d {
        let fp = at(&[(i, h[i])]);
        let fm = at(&[(i, -h[i])]);
        hess[i][i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let pp = at(&[(i, h[i]), (j, h[j])]);
            let pm = at(&[(i, h[i]), (j, -h[j])]);
            let mp = at(&[(i, -h[i]), (j, h[j])]);
            let mm = at(&[(i, -h[i]), (j, -h[j])]);
            let v = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    hess
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_rosenbrock() {
        let bounds = Bounds::new(vec![-5.0, -5.0], vec![5.0, 5.0]);
        let m = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &bounds,
            &NelderMeadOptions {
                max_evals: 5000,
                ..Default::default()
            },
        );
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn nelder_mead_respects_bounds() {
        let bounds = Bounds::new(vec![1.0, -1.0], vec![3.0, 1.0]);
        let m = nelder_mead(
            |x| x[0] * x[0] + (x[1] - 4.0).powi(2),
            &[2.0, 0.0],
            &bounds,
            &NelderMeadOptions::default(),
        );
        assert!((m.x[0] - 1.0).abs() < 1e-6);
        assert!((m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nelder_mead_handles_nan_regions() {
        let bounds = Bounds::new(vec![-2.0], vec![2.0]);
        let m = nelder_mead(
            |x| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.5).powi(2) },
            &[1.5],
            &bounds,
            &NelderMeadOptions::default(),
        );
        assert!((m.x[0] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn brent_finds_interior_and_boundary_minima() {
        let m = brent(|x| (x - 0.7).powi(2) + 3.0, -4.0, 4.0, 1e-10, 200);
        assert!(m.converged);
        assert!((m.x[0] - 0.7).abs() < 1e-7);
        let edge = brent(|x| x, -1.0, 2.0, 1e-10, 200);
        assert!((edge.x[0] + 1.0).abs() < 1e-6);
        let c = brent(|x| x.cosh() - 0.3 * x, -20.0, 20.0, 1e-10, 200);
        assert!((c.x[0] - 0.3f64.asinh()).abs() < 1e-7);
    }

    #[test]
    fn hessian_of_quadratic() {
        let h = numerical_hessian(
            |x| 3.0 * x[0] * x[0] + 2.0 * x[0] * x[1] - x[1] * x[1] + x[0],
            &[0.3, -0.7],
            &[1e-3, 1e-3],
        );
        let expect = [[6.0, 2.0], [2.0, -2.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((h[i][j] - expect[i][j]).abs() < 1e-6);
            }
        }
    }
}
