//! Optimizers for the model families: Nelder-Mead, BFGS on numeric
//! gradients with a Nelder-Mead fallback, Adam for network training, and a
//! bounded scalar minimizer, plus the central-difference engine used both
//! as the EMOS gradient and as the gradient-checking oracle everywhere.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("objective returned non-finite value at iteration {iteration}, point {point:?}")]
    NonFiniteObjective { iteration: usize, point: Vec<f64> },
    #[error("non-finite gradient component {coordinate} at {point:?}")]
    NonFiniteGradient { coordinate: usize, point: Vec<f64> },
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, OptimError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    NelderMead,
    BfgsNumeric,
    Adam,
    Brent1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub max_iters: usize,
    /// Convergence tolerance on function decrease and step/simplex size.
    pub tolerance: f64,
    pub adam_step: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Relative central-difference step.
    pub fd_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::BfgsNumeric,
            max_iters: 5000,
            tolerance: 1e-8,
            adam_step: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            fd_step: 1e-6,
        }
    }
}

impl OptimizerConfig {
    pub fn nelder_mead() -> Self {
        Self { kind: OptimizerKind::NelderMead, ..Self::default() }
    }
    pub fn bfgs() -> Self {
        Self { kind: OptimizerKind::BfgsNumeric, ..Self::default() }
    }
    pub fn adam(step: f64) -> Self {
        Self { kind: OptimizerKind::Adam, adam_step: step, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iters == 0
            || !(self.tolerance > 0.0)
            || !(self.adam_step > 0.0)
            || !(self.fd_step > 0.0)
            || !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
        {
            return Err(OptimError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub params: Vec<f64>,
    pub final_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub fallback_used: bool,
}

fn check_finite(v: f64, iteration: usize, point: &[f64]) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(OptimError::NonFiniteObjective { iteration, point: point.to_vec() })
    }
}

// ---------------------------------------------------------------------------
// Central differences
// ---------------------------------------------------------------------------

/// Central-difference gradient with per-coordinate step h * max(1, |x_i|).
pub fn numeric_gradient<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let mut grad = Vec::with_capacity(x.len());
    let mut xs = x.to_vec();
    for i in 0..x.len() {
        let step = h * x[i].abs().max(1.0);
        xs[i] = x[i] + step;
        let up = f(&xs);
        xs[i] = x[i] - step;
        let dn = f(&xs);
        xs[i] = x[i];
        let g = (up - dn) / (2.0 * step);
        if !g.is_finite() {
            return Err(OptimError::NonFiniteGradient { coordinate: i, point: x.to_vec() });
        }
        grad.push(g);
    }
    Ok(grad)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// First/second-moment state for Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dim: usize, cfg: &OptimizerConfig) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            step_size: cfg.adam_step,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    /// One update in place; deterministic given the state and gradient.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len(), "Adam state dimension mismatch");
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.step_size * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Nelder-Mead
// ---------------------------------------------------------------------------

const NM_REFLECT: f64 = 1.0;
const NM_EXPAND: f64 = 2.0;
const NM_CONTRACT: f64 = 0.5;
const NM_SHRINK: f64 = 0.5;

fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x0: &[f64],
    cfg: &OptimizerConfig,
) -> Result<OptimResult> {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if v[i] != 0.0 { 0.05 * v[i].abs() } else { 0.00025 };
        simplex.push(v);
    }
    let mut values: Vec<f64> = Vec::with_capacity(n + 1);
    for (k, v) in simplex.iter().enumerate() {
        values.push(check_finite(f(v), k, v)?);
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        // Order ascending by value.
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|a, b| values[*a].partial_cmp(&values[*b]).unwrap());
        let reorder_points: Vec<Vec<f64>> = order.iter().map(|i| simplex[*i].clone()).collect();
        let reorder_vals: Vec<f64> = order.iter().map(|i| values[*i]).collect();
        simplex = reorder_points;
        values = reorder_vals;

        let f_spread = values[n] - values[0];
        let size = simplex[1..]
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        if f_spread.abs() < cfg.tolerance && size < cfg.tolerance.max(1e-10) {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let mk = |coef: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&worst)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let reflected = mk(NM_REFLECT);
        let fr = check_finite(f(&reflected), iterations, &reflected)?;
        if fr < values[0] {
            let expanded = mk(NM_EXPAND);
            let fe = check_finite(f(&expanded), iterations, &expanded)?;
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let contracted = if fr < values[n] { mk(NM_CONTRACT) } else { mk(-NM_CONTRACT) };
            let fc = check_finite(f(&contracted), iterations, &contracted)?;
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                // Shrink toward the best point.
                for k in 1..=n {
                    let shrunk: Vec<f64> = simplex[0]
                        .iter()
                        .zip(&simplex[k])
                        .map(|(b, p)| b + NM_SHRINK * (p - b))
                        .collect();
                    values[k] = check_finite(f(&shrunk), iterations, &shrunk)?;
                    simplex[k] = shrunk;
                }
            }
        }
    }

    let mut best = 0;
    for k in 1..=n {
        if values[k] < values[best] {
            best = k;
        }
    }
    Ok(OptimResult {
        params: simplex[best].clone(),
        final_value: values[best],
        iterations,
        converged,
        fallback_used: false,
    })
}

// ---------------------------------------------------------------------------
// BFGS with numeric gradients
// ---------------------------------------------------------------------------

fn bfgs_numeric<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x0: &[f64],
    cfg: &OptimizerConfig,
) -> Result<OptimResult> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = check_finite(f(&x), 0, &x)?;
    // Inverse Hessian approximation, identity to start.
    let mut h_inv = vec![vec![0.0; n]; n];
    for (i, row) in h_inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut grad = numeric_gradient(&mut *f, &x, cfg.fd_step)?;
    let mut iterations = 0;
    let mut converged = false;
    let mut line_search_failed = false;

    while iterations < cfg.max_iters {
        iterations += 1;
        let grad_norm = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if grad_norm < cfg.tolerance.max(1e-10) {
            converged = true;
            break;
        }
        // Search direction -H g.
        let mut dir = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                dir[i] -= h_inv[i][j] * grad[j];
            }
        }
        let slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
        if slope >= 0.0 {
            // Not a descent direction; reset the approximation.
            for (i, row) in h_inv.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if i == j { 1.0 } else { 0.0 };
                }
            }
            for i in 0..n {
                dir[i] = -grad[i];
            }
        }
        let slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();

        // Armijo backtracking.
        let mut step = 1.0;
        let mut accepted = false;
        let mut x_new = x.clone();
        let mut f_new = fx;
        for _ in 0..50 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            let candidate = f(&x_new);
            if candidate.is_finite() && candidate <= fx + 1e-4 * step * slope {
                f_new = candidate;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            line_search_failed = true;
            break;
        }

        let grad_new = numeric_gradient(&mut *f, &x_new, cfg.fd_step)?;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = grad_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            // Standard BFGS inverse update.
            let rho = 1.0 / sy;
            let mut hy = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    hy[i] += h_inv[i][j] * yv[j];
                }
            }
            let yhy: f64 = yv.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h_inv[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j]
                        - rho * (s[i] * hy[j] + hy[i] * s[j]);
                }
            }
        }

        let step_size = s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let decrease = fx - f_new;
        x = x_new.clone();
        fx = f_new;
        grad = grad_new;
        if step_size < cfg.tolerance && decrease < cfg.tolerance * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
    }

    if line_search_failed {
        // Fall back to Nelder-Mead from the best point reached.
        let mut nm = nelder_mead(f, &x, cfg)?;
        nm.fallback_used = true;
        nm.iterations += iterations;
        if nm.final_value > fx {
            nm.params = x;
            nm.final_value = fx;
        }
        return Ok(nm);
    }
    Ok(OptimResult { params: x, final_value: fx, iterations, converged, fallback_used: false })
}

// ---------------------------------------------------------------------------
// Adam as a full minimizer (numeric gradients)
// ---------------------------------------------------------------------------

fn adam_minimize<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x0: &[f64],
    cfg: &OptimizerConfig,
) -> Result<OptimResult> {
    let mut x = x0.to_vec();
    let mut state = AdamState::new(x.len(), cfg);
    let mut best = x.clone();
    let mut best_val = check_finite(f(&x), 0, &x)?;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        let grad = numeric_gradient(&mut *f, &x, cfg.fd_step)?;
        let grad_norm = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        state.step(&mut x, &grad);
        let val = check_finite(f(&x), iterations, &x)?;
        if val < best_val {
            best_val = val;
            best = x.clone();
        }
        if grad_norm < cfg.tolerance {
            converged = true;
            break;
        }
    }
    Ok(OptimResult {
        params: best,
        final_value: best_val,
        iterations,
        converged,
        fallback_used: false,
    })
}

/// `minimize` while recording each objective evaluation as an
/// (evaluation index, value) trace row.
pub fn minimize_with_trace<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    cfg: &OptimizerConfig,
) -> Result<(OptimResult, Vec<(usize, f64)>)> {
    let mut trace = Vec::new();
    let res = minimize(
        |x| {
            let v = f(x);
            trace.push((trace.len(), v));
            v
        },
        x0,
        cfg,
    )?;
    Ok((res, trace))
}

/// Minimize a multivariate objective with the configured algorithm. The
/// result never has a higher objective value than the starting point.
pub fn minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    cfg: &OptimizerConfig,
) -> Result<OptimResult> {
    cfg.validate()?;
    let f0 = check_finite(f(x0), 0, x0)?;
    let mut res = match cfg.kind {
        OptimizerKind::NelderMead => nelder_mead(&mut f, x0, cfg)?,
        OptimizerKind::BfgsNumeric => bfgs_numeric(&mut f, x0, cfg)?,
        OptimizerKind::Adam => adam_minimize(&mut f, x0, cfg)?,
        OptimizerKind::Brent1d => {
            return Err(OptimError::InvalidConfig(
                "brent-1d requires minimize_scalar_bounded".into(),
            ))
        }
    };
    if res.final_value > f0 {
        res.params = x0.to_vec();
        res.final_value = f0;
    }
    Ok(res)
}

// ---------------------------------------------------------------------------
// Bounded scalar minimization (golden section + parabolic steps)
// ---------------------------------------------------------------------------

/// Brent-style bounded minimization on [lo, hi]; the returned argument is
/// always inside the interval and the bracket width at exit is below the
/// configured tolerance (or the iteration budget was hit).
pub fn minimize_scalar_bounded<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    cfg: &OptimizerConfig,
) -> Result<OptimResult> {
    cfg.validate()?;
    if !(lo < hi) {
        return Err(OptimError::InvalidConfig(format!("empty interval [{lo}, {hi}]")));
    }
    const GOLD: f64 = 0.381_966_011_250_105; // 2 - golden ratio
    let (mut a, mut b) = (lo, hi);
    let mut x = a + GOLD * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = check_finite(f(x), 0, &[x])?;
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    let tol = cfg.tolerance.max(1e-12);

    while iterations < cfg.max_iters {
        iterations += 1;
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            converged = true;
            break;
        }
        let mut use_golden = true;
        if e.abs() > tol1 {
            // Parabolic interpolation through (v, w, x).
            let r = (x - w) * (fx - fv);
            let q0 = (x - v) * (fx - fw);
            let mut p = (x - v) * q0 - (x - w) * r;
            let mut q = 2.0 * (q0 - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_old = e;
            e = d;
            if p.abs() < (0.5 * q * e_old).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if m > x { tol1 } else { -tol1 };
                }
                use_golden = false;
            }
        }
        if use_golden {
            e = if x < m { b - x } else { a - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + if d > 0.0 { tol1 } else { -tol1 } };
        let fu = check_finite(f(u), iterations, &[u])?;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
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
    Ok(OptimResult {
        params: vec![x],
        final_value: fx,
        iterations,
        converged,
        fallback_used: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_minimum_every_kind() {
        let f = |x: &[f64]| (x[0] - 3.0) * (x[0] - 3.0);
        for cfg in [
            OptimizerConfig::nelder_mead(),
            OptimizerConfig::bfgs(),
            OptimizerConfig { max_iters: 20_000, ..OptimizerConfig::adam(0.05) },
        ] {
            let res = minimize(f, &[0.0], &cfg).unwrap();
            assert!(
                (res.params[0] - 3.0).abs() < 1e-5,
                "{:?}: got {}",
                cfg.kind,
                res.params[0]
            );
            assert!(res.final_value <= f(&[0.0]));
        }
    }

    #[test]
    fn rosenbrock_bfgs() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            (1.0 - a) * (1.0 - a) + 100.0 * (b - a * a) * (b - a * a)
        };
        let cfg = OptimizerConfig { max_iters: 20_000, ..OptimizerConfig::bfgs() };
        let res = minimize(f, &[-1.2, 1.0], &cfg).unwrap();
        assert!((res.params[0] - 1.0).abs() < 1e-3, "x = {:?}", res.params);
        assert!((res.params[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn absolute_value_nelder_mead() {
        let f = |x: &[f64]| x[0].abs();
        let res = minimize(f, &[1.7], &OptimizerConfig::nelder_mead()).unwrap();
        assert!(res.params[0].abs() < 1e-4, "got {}", res.params[0]);
    }

    #[test]
    fn never_worse_than_start() {
        // A nasty objective with a cliff; result must not exceed f(x0).
        let f = |x: &[f64]| if x[0] > 0.5 { 1e6 } else { x[0].cos() };
        for cfg in [OptimizerConfig::nelder_mead(), OptimizerConfig::bfgs()] {
            let res = minimize(f, &[0.4], &cfg).unwrap();
            assert!(res.final_value <= f(&[0.4]) + 1e-12);
        }
    }

    #[test]
    fn nan_objective_aborts_with_diagnostic() {
        let f = |x: &[f64]| if x[0] > 1.0 { f64::NAN } else { (x[0] - 3.0).powi(2) };
        let err = minimize(f, &[0.0], &OptimizerConfig::nelder_mead()).unwrap_err();
        assert!(matches!(err, OptimError::NonFiniteObjective { .. }));
    }

    #[test]
    fn scalar_bounded_hand_cases() {
        let cfg = OptimizerConfig { tolerance: 1e-10, ..OptimizerConfig::default() };
        let res = minimize_scalar_bounded(|a| (a - 0.3) * (a - 0.3), 0.0, 1.0, &cfg).unwrap();
        assert!((res.params[0] - 0.3).abs() < 1e-6);
        // Monotone decreasing: boundary minimum at 1.
        let res = minimize_scalar_bounded(|a| -a, 0.0, 1.0, &cfg).unwrap();
        assert!((res.params[0] - 1.0).abs() < 1e-5);
        assert!(minimize_scalar_bounded(|a| a, 1.0, 0.0, &cfg).is_err());
    }

    #[test]
    fn adam_state_hand_checks() {
        let cfg = OptimizerConfig::adam(0.1);
        let mut state = AdamState::new(2, &cfg);
        let mut params = vec![1.0, -2.0];
        // Zero gradient leaves parameters unchanged.
        state.step(&mut params, &[0.0, 0.0]);
        assert_eq!(params, vec![1.0, -2.0]);
        // Constant positive gradient moves the parameter down.
        let mut state = AdamState::new(1, &cfg);
        let mut p = vec![0.0];
        for _ in 0..100 {
            state.step(&mut p, &[2.5]);
        }
        assert!(p[0] < -1e-3);
    }

    #[test]
    fn adam_converges_on_quadratic_bowl() {
        let cfg = OptimizerConfig::adam(0.05);
        let mut state = AdamState::new(3, &cfg);
        let mut p = vec![1.0, -2.0, 0.5];
        let loss = |p: &[f64]| p.iter().map(|x| x * x).sum::<f64>();
        let initial = loss(&p);
        for _ in 0..200 {
            let grad: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            state.step(&mut p, &grad);
        }
        assert!(loss(&p) < 0.01 * initial, "loss {}", loss(&p));
    }

    #[test]
    fn numeric_gradient_hand_cases() {
        let g = numeric_gradient(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        // Central differences are exact on affine functions.
        let g = numeric_gradient(|x| 2.0 * x[0] - 7.0 * x[1] + 1.0, &[0.3, -1.2], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-10);
        assert!((g[1] + 7.0).abs() < 1e-10);
        // NaN propagation names the coordinate.
        let err = numeric_gradient(|x| if x[1] > 0.0 { f64::NAN } else { 0.0 }, &[0.0, 0.0], 1e-5)
            .unwrap_err();
        assert!(matches!(err, OptimError::NonFiniteGradient { coordinate: 1, .. }));
    }

    #[test]
    fn numeric_gradient_agrees_with_analytic_crps() {
        use crate::scores::crps_tn_grad;
        let (mu, sigma, y) = (1.3, 0.8, 2.1);
        let (_, dmu, dls) = crps_tn_grad(mu, sigma, 0.0, y);
        let g = numeric_gradient(
            |p: &[f64]| {
                let d = crate::dist::TruncatedNormal::new(p[0], p[1].exp(), 0.0).unwrap();
                crate::scores::crps_closed_tn(&d, y)
            },
            &[mu, sigma.ln()],
            1e-6,
        )
        .unwrap();
        assert!((g[0] - dmu).abs() < 1e-4 * (1.0 + dmu.abs()));
        assert!((g[1] - dls).abs() < 1e-4 * (1.0 + dls.abs()));
    }

    #[test]
    fn optimizers_are_deterministic() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + (x[1] + 2.0).powi(4);
        for cfg in [OptimizerConfig::nelder_mead(), OptimizerConfig::bfgs()] {
            let a = minimize(f, &[0.0, 0.0], &cfg).unwrap();
            let b = minimize(f, &[0.0, 0.0], &cfg).unwrap();
            assert_eq!(a.params, b.params);
            assert_eq!(a.iterations, b.iterations);
        }
    }
}
