//! Constrained least-squares engine behind TCCO.
//!
//! Solves
//!
//! ```text
//! min_b ||y − Xb||²    subject to  b ≥ 0,
//!                                  y − Xb ≥ 0        (pointwise, optional)
//!                                  w·y ≥ w·(Xb)      (moment, optional)
//! ```
//!
//! for tiny coefficient dimension p (1–5 in practice) and up to ~10⁵
//! pointwise rows. The problem is a convex QP, so a primal active-set
//! method finds the global minimizer; every returned solution carries a KKT
//! certificate.
//!
//! Pointwise rows where the regressor signal is negligible
//! (`x_ij ≤ 1e-6·max(x_j)` in every column) produce ratio bounds dominated
//! by noise and are excluded from the constraint system. The remaining rows
//! are pruned to the smallest-ratio candidates before the active-set loop;
//! the solution is then verified against all eligible rows and re-solved
//! with any violated row added, so pruning never changes the answer.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Fraction of the column maximum below which a regressor entry is treated
/// as numerically zero for ratio bounds.
pub const POS_TOL_FRACTION: f64 = 1e-6;

/// Pointwise rows kept for the active-set loop before verification.
const PRUNE_KEEP: usize = 1000;

/// One calibration least-squares instance.
#[derive(Debug, Clone)]
pub struct TccoProblem {
    y: DVector<f64>,
    x: DMatrix<f64>,
    quad_weights: DVector<f64>,
    pub enforce_pointwise: bool,
    pub enforce_moment: bool,
    pub feas_tol: f64,
    /// Absolute regressor level below which a row carries no usable signal
    /// for ratio bounds. 0 keeps the pure relative pos-tol rule; callers
    /// that know the measurement noise scale should raise it, because a
    /// pointwise bound at a noise-dominated row is a random clamp on the
    /// coefficient.
    pub signal_floor: f64,
}

/// Solution with its optimality certificate.
#[derive(Debug, Clone)]
pub struct TccoSolution {
    /// Calibration coefficients, one per regressor column.
    pub b: Vec<f64>,
    /// `y − Xb`.
    pub residuals: Vec<f64>,
    /// `||y − Xb||²`.
    pub objective: f64,
    /// Global constraint ids active at the solution: `0..p` are the
    /// nonnegativity bounds, `p + i` the pointwise row `i`, `p + N` the
    /// moment constraint.
    pub active_set: Vec<usize>,
    /// Max of stationarity, complementary-slackness, and feasibility
    /// violations (see [`check_kkt`]).
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Error)]
pub enum CqpError {
    #[error("problem needs at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("need at least one regressor column")]
    NoRegressors,
    #[error("more regressors ({p}) than rows ({n})")]
    OverDetermined { p: usize, n: usize },
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("quadrature weights must be positive")]
    NonPositiveWeight,
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("active-set method did not converge within {0} iterations")]
    NonConvergence(usize),
}

impl TccoProblem {
    /// Build a problem; `x_columns` are the regressor fluxes, one vector per
    /// column. `feas_tol = None` uses the default `1e-9·max|y|`.
    pub fn new(
        y: Vec<f64>,
        x_columns: &[Vec<f64>],
        quad_weights: Vec<f64>,
        enforce_pointwise: bool,
        enforce_moment: bool,
        feas_tol: Option<f64>,
    ) -> Result<Self, CqpError> {
        let n = y.len();
        let p = x_columns.len();
        if p == 0 {
            return Err(CqpError::NoRegressors);
        }
        if n < 8 {
            return Err(CqpError::TooFewRows { need: 8, got: n });
        }
        if n < p {
            return Err(CqpError::OverDetermined { p, n });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(CqpError::NonFinite("y"));
        }
        if quad_weights.len() != n || quad_weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(CqpError::NonPositiveWeight);
        }
        let mut x = DMatrix::zeros(n, p);
        for (j, col) in x_columns.iter().enumerate() {
            if col.len() != n {
                return Err(CqpError::TooFewRows { need: n, got: col.len() });
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(CqpError::NonFinite("X"));
            }
            x.set_column(j, &DVector::from_column_slice(col));
        }
        let max_y = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let feas_tol = feas_tol.unwrap_or(1e-9 * max_y.max(f64::MIN_POSITIVE));
        Ok(TccoProblem {
            y: DVector::from_vec(y),
            x,
            quad_weights: DVector::from_vec(quad_weights),
            enforce_pointwise,
            enforce_moment,
            feas_tol,
            signal_floor: 0.0,
        })
    }

    pub fn with_signal_floor(mut self, floor: f64) -> Self {
        self.signal_floor = floor.max(0.0);
        self
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_coeffs(&self) -> usize {
        self.x.ncols()
    }

    /// Rows with a usable regressor signal: some column above both its
    /// relative pos-tol and the absolute signal floor.
    fn eligible_rows(&self) -> Vec<usize> {
        let n = self.n_rows();
        let p = self.n_coeffs();
        let col_tols: Vec<f64> = (0..p)
            .map(|j| {
                let cmax = self.x.column(j).iter().fold(0.0_f64, |m, v| m.max(*v));
                (POS_TOL_FRACTION * cmax).max(self.signal_floor)
            })
            .collect();
        (0..n)
            .filter(|&i| (0..p).any(|j| self.x[(i, j)] > col_tols[j] && col_tols[j] > 0.0))
            .collect()
    }
}

/// A linear inequality `a·b ≤ h` with its global id for reporting.
#[derive(Clone)]
struct Constraint {
    a: DVector<f64>,
    h: f64,
    id: usize,
}

/// Solve the TCCO problem to global optimality.
pub fn solve(problem: &TccoProblem) -> Result<TccoSolution, CqpError> {
    let n = problem.n_rows();
    let p = problem.n_coeffs();
    let eligible = problem.eligible_rows();

    // b = 0 is the starting point; if it violates the enabled constraints
    // the feasible set is empty for the signal-dominated rows.
    if problem.enforce_pointwise {
        if let Some(&i) = eligible
            .iter()
            .find(|&&i| problem.y[i] < -problem.feas_tol)
        {
            return Err(CqpError::Infeasible(format!(
                "pointwise constraint requires y >= 0 but y[{i}] = {}",
                problem.y[i]
            )));
        }
    }
    let wy = problem.quad_weights.dot(&problem.y);
    if problem.enforce_moment && wy < -problem.feas_tol {
        return Err(CqpError::Infeasible(format!(
            "moment constraint requires w·y >= 0 but w·y = {wy}"
        )));
    }

    // Pointwise rows most likely to bind: smallest response-to-signal ratio.
    let mut candidate_rows: Vec<usize> = if problem.enforce_pointwise {
        let mut rows = eligible.clone();
        if rows.len() > PRUNE_KEEP {
            let key = |i: usize| {
                let s: f64 = (0..p).map(|j| problem.x[(i, j)].max(0.0)).sum();
                problem.y[i] / s.max(f64::MIN_POSITIVE)
            };
            rows.sort_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap());
            rows.truncate(PRUNE_KEEP);
            rows.sort_unstable();
        }
        rows
    } else {
        Vec::new()
    };

    let max_iter = 10 * p * n.max(8);
    let mut total_iterations = 0;

    // Outer loop: solve on the pruned rows, then verify against every
    // eligible row and pull in any violated ones.
    for _round in 0..8 {
        let constraints = build_constraints(problem, &candidate_rows, wy);
        let (b, active, iterations) =
            active_set(problem, &constraints, max_iter - total_iterations)?;
        total_iterations += iterations;

        let violated: Vec<usize> = if problem.enforce_pointwise {
            let xb = &problem.x * &b;
            eligible
                .iter()
                .copied()
                .filter(|&i| xb[i] - problem.y[i] > problem.feas_tol)
                .filter(|i| !candidate_rows.contains(i))
                .collect()
        } else {
            Vec::new()
        };
        if violated.is_empty() {
            return Ok(finish(problem, b, active, total_iterations));
        }
        candidate_rows.extend(violated);
        candidate_rows.sort_unstable();
        candidate_rows.dedup();
    }
    Err(CqpError::NonConvergence(total_iterations))
}

fn build_constraints(problem: &TccoProblem, rows: &[usize], wy: f64) -> Vec<Constraint> {
    let n = problem.n_rows();
    let p = problem.n_coeffs();
    // feas_tol enters the right-hand sides: the invariants are
    // residuals >= -feas_tol and w·y >= w·Xb - feas_tol.
    let ft = problem.feas_tol;
    let mut constraints = Vec::with_capacity(p + rows.len() + 1);
    for j in 0..p {
        let mut a = DVector::zeros(p);
        a[j] = -1.0;
        constraints.push(Constraint { a, h: 0.0, id: j });
    }
    for &i in rows {
        constraints.push(Constraint {
            a: problem.x.row(i).transpose(),
            h: problem.y[i] + ft,
            id: p + i,
        });
    }
    if problem.enforce_moment {
        constraints.push(Constraint {
            a: problem.x.tr_mul(&problem.quad_weights),
            h: wy + ft,
            id: p + n,
        });
    }
    constraints
}

/// Primal active-set iteration from the feasible point b = 0.
fn active_set(
    problem: &TccoProblem,
    constraints: &[Constraint],
    max_iter: usize,
) -> Result<(DVector<f64>, Vec<usize>, usize), CqpError> {
    let p = problem.n_coeffs();
    let hess2 = 2.0 * problem.x.tr_mul(&problem.x); // 2H
    let grad_lin2 = 2.0 * problem.x.tr_mul(&problem.y); // 2g
    let scale = 1.0 + grad_lin2.amax();
    let lambda_tol = 1e-9 * scale;

    let mut b = DVector::zeros(p);
    // Nonnegativity bounds start active at the origin.
    let mut working: Vec<usize> = (0..p).collect();

    for iteration in 1..=max_iter.max(1) {
        let (b_star, lambdas) = solve_eqp(&hess2, &grad_lin2, constraints, &working);
        let step = &b_star - &b;
        let step_size = step.amax();

        if step_size <= 1e-11 * (1.0 + b_star.amax()) {
            // Stationary on the working set; check multiplier signs.
            let mut worst = None;
            for (k, &lam) in lambdas.iter().enumerate() {
                if lam < -lambda_tol {
                    let better = match worst {
                        None => true,
                        Some((_, w_lam, w_id)) => {
                            lam < w_lam
                                || (lam == w_lam && constraints[working[k]].id < w_id)
                        }
                    };
                    if better {
                        worst = Some((k, lam, constraints[working[k]].id));
                    }
                }
            }
            match worst {
                None => {
                    let active = working.iter().map(|&k| constraints[k].id).collect();
                    return Ok((b_star, active, iteration));
                }
                Some((k, _, _)) => {
                    working.remove(k);
                }
            }
        } else {
            // Ratio test toward b_star over constraints not in the working set.
            let mut alpha = 1.0_f64;
            let mut blocking: Option<usize> = None;
            for (k, c) in constraints.iter().enumerate() {
                if working.contains(&k) {
                    continue;
                }
                let ad = c.a.dot(&step);
                if ad > 1e-14 * scale {
                    let slack = (c.h - c.a.dot(&b)).max(0.0);
                    let ratio = slack / ad;
                    if ratio < alpha - 1e-12 {
                        alpha = ratio;
                        blocking = Some(k);
                    }
                }
            }
            b += alpha * step;
            if let Some(k) = blocking {
                working.push(k);
            }
        }
    }
    Err(CqpError::NonConvergence(max_iter))
}

/// Equality-constrained subproblem: minimize over the working set treated
/// as equalities. Returns the minimizer and its multipliers.
fn solve_eqp(
    hess2: &DMatrix<f64>,
    grad_lin2: &DVector<f64>,
    constraints: &[Constraint],
    working: &[usize],
) -> (DVector<f64>, Vec<f64>) {
    let p = hess2.nrows();
    let m = working.len();
    let dim = p + m;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (p, p)).copy_from(hess2);
    for (row, &k) in working.iter().enumerate() {
        let a = &constraints[k].a;
        for j in 0..p {
            kkt[(p + row, j)] = a[j];
            kkt[(j, p + row)] = a[j];
        }
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, p).copy_from(grad_lin2);
    for (row, &k) in working.iter().enumerate() {
        rhs[p + row] = constraints[k].h;
    }
    let solution = kkt
        .clone()
        .lu()
        .solve(&rhs)
        .unwrap_or_else(|| {
            // Degenerate working set; fall back to a least-squares solve.
            kkt.svd(true, true)
                .solve(&rhs, 1e-12)
                .expect("SVD solve cannot fail")
        });
    let b = solution.rows(0, p).into_owned();
    let lambdas = (0..m).map(|i| solution[p + i]).collect();
    (b, lambdas)
}

fn finish(
    problem: &TccoProblem,
    b: DVector<f64>,
    active_set: Vec<usize>,
    iterations: usize,
) -> TccoSolution {
    let residuals = &problem.y - &problem.x * &b;
    let objective = residuals.norm_squared();
    let mut solution = TccoSolution {
        b: b.iter().copied().collect(),
        residuals: residuals.iter().copied().collect(),
        objective,
        active_set,
        kkt_residual: f64::NAN,
        iterations,
    };
    solution.kkt_residual = check_kkt(problem, &solution);
    solution
}

/// Closed-form minimizer of the one-regressor problem; the independent
/// oracle for [`solve`].
///
/// The 1-D objective is a convex parabola in b, so the constrained optimum
/// is the unconstrained vertex clamped into the feasible interval
/// `[0, min(pointwise ratio bound, moment ratio bound)]`.
pub fn oracle_1d(y: &[f64], x: &[f64], quad_weights: &[f64]) -> f64 {
    assert_eq!(y.len(), x.len());
    assert_eq!(y.len(), quad_weights.len());
    let xx: f64 = x.iter().map(|v| v * v).sum();
    assert!(xx > 0.0, "x must not be identically zero");
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let b_ols = xy / xx;

    let x_max = x.iter().fold(0.0_f64, |m, v| m.max(*v));
    let pos_tol = POS_TOL_FRACTION * x_max;
    let mut b_max = f64::INFINITY;
    for (xi, yi) in x.iter().zip(y) {
        if *xi > pos_tol {
            b_max = b_max.min(yi / xi);
        }
    }
    let wx: f64 = quad_weights.iter().zip(x).map(|(w, v)| w * v).sum();
    if wx > 0.0 {
        let wy: f64 = quad_weights.iter().zip(y).map(|(w, v)| w * v).sum();
        b_max = b_max.min(wy / wx);
    }
    b_ols.min(b_max).max(0.0).min(b_max.max(0.0))
}

/// KKT certificate: max of the stationarity residual (with nonnegative
/// least-squares multipliers on the active set), complementary-slackness
/// violation, and primal-feasibility violation.
pub fn check_kkt(problem: &TccoProblem, solution: &TccoSolution) -> f64 {
    let p = problem.n_coeffs();
    let n = problem.n_rows();
    let b = DVector::from_column_slice(&solution.b);
    let grad = 2.0 * (problem.x.tr_mul(&(&problem.x * &b)) - problem.x.tr_mul(&problem.y));

    let gradient_of = |id: usize| -> DVector<f64> {
        if id < p {
            let mut a = DVector::zeros(p);
            a[id] = -1.0;
            a
        } else if id < p + n {
            problem.x.row(id - p).transpose()
        } else {
            problem.x.tr_mul(&problem.quad_weights)
        }
    };
    let value_of = |id: usize| -> f64 {
        // g(b) = a·b − h ≤ 0 form, with feas_tol folded into h exactly as
        // the solver sees it.
        if id < p {
            -b[id]
        } else if id < p + n {
            let i = id - p;
            problem.x.row(i).transpose().dot(&b) - problem.y[i] - problem.feas_tol
        } else {
            problem.x.tr_mul(&problem.quad_weights).dot(&b)
                - problem.quad_weights.dot(&problem.y)
                - problem.feas_tol
        }
    };

    // Least-squares multipliers on the active set, clamped nonnegative.
    let m = solution.active_set.len();
    let lambdas: Vec<f64> = if m == 0 {
        Vec::new()
    } else {
        let mut at = DMatrix::zeros(p, m);
        for (k, &id) in solution.active_set.iter().enumerate() {
            at.set_column(k, &gradient_of(id));
        }
        let rhs = -&grad;
        at.svd(true, true)
            .solve(&rhs, 1e-13)
            .expect("SVD solve cannot fail")
            .iter()
            .map(|l| l.max(0.0))
            .collect()
    };

    let mut stationarity = grad.clone();
    for (k, &id) in solution.active_set.iter().enumerate() {
        stationarity += lambdas[k] * gradient_of(id);
    }
    let mut worst = stationarity.amax();

    for (k, &id) in solution.active_set.iter().enumerate() {
        worst = worst.max((lambdas[k] * value_of(id)).abs());
    }

    // Primal feasibility over bounds, eligible pointwise rows, and moment.
    for id in 0..p {
        worst = worst.max(value_of(id));
    }
    if problem.enforce_pointwise {
        for i in problem.eligible_rows() {
            worst = worst.max(value_of(p + i));
        }
    }
    if problem.enforce_moment {
        worst = worst.max(value_of(p + n));
    }
    worst.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::trapezoid_weights;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn weights(n: usize) -> Vec<f64> {
        trapezoid_weights(0.01, n)
    }

    fn problem_1d(
        y: Vec<f64>,
        x: Vec<f64>,
        pointwise: bool,
        moment: bool,
    ) -> TccoProblem {
        let w = weights(y.len());
        TccoProblem::new(y, &[x], w, pointwise, moment, Some(0.0)).unwrap()
    }

    /// Random feasible 1-D instance mixing interior, bound-active, and
    /// zero-coefficient optima.
    pub(crate) fn random_instance(seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(8..64);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..2.0)).collect();
        let c = rng.random_range(0.05..3.0);
        let mode = seed % 3;
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, xi)| {
                let bump = match mode {
                    0 => rng.random_range(0.0..0.5),                    // ratios >= c
                    1 => rng.random_range(-0.2..0.8) * (i as f64 / n as f64), // mixed
                    _ => rng.random_range(0.0..0.1) - 0.5 * c * xi,     // drives b to 0
                };
                (c * xi + bump).max(0.0)
            })
            .collect();
        (y, x)
    }

    #[test]
    fn interior_ols_solution() {
        let x: Vec<f64> = (0..16).map(|i| 0.1 + i as f64 * 0.05).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let sol = solve(&problem_1d(y, x, true, true)).unwrap();
        assert_abs_diff_eq!(sol.b[0], 2.0, epsilon = 1e-10);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn pointwise_bound_beats_ols_and_moment() {
        let x = vec![1.0, 2.0, 3.0, 2.0, 1.0, 1.0, 2.0, 1.0];
        let ratios = [3.2, 2.9, 2.5, 3.0, 3.3, 3.1, 2.8, 3.4];
        let y: Vec<f64> = x.iter().zip(ratios).map(|(xi, r)| xi * r).collect();
        let sol = solve(&problem_1d(y.clone(), x.clone(), true, true)).unwrap();
        assert_abs_diff_eq!(sol.b[0], 2.5, epsilon = 1e-10);
        assert_abs_diff_eq!(sol.b[0], oracle_1d(&y, &x, &weights(8)), epsilon = 1e-12);
    }

    #[test]
    fn negative_correlation_pins_to_zero() {
        let x: Vec<f64> = (0..12).map(|i| 0.1 + i as f64 * 0.1).collect();
        // x·y < 0, so the unconstrained coefficient is negative.
        let y: Vec<f64> = x.iter().map(|v| 0.1 - 0.5 * v).collect();
        let sol = solve(&problem_1d(y, x, false, false)).unwrap();
        assert_eq!(sol.b[0], 0.0);
        assert_eq!(sol.active_set, vec![0]);
    }

    #[test]
    fn ratio_tightest_point_wins() {
        let x = vec![1.0; 8];
        let mut y = vec![1.0; 8];
        y[3] = 0.5;
        let sol = solve(&problem_1d(y.clone(), x.clone(), true, false)).unwrap();
        assert_abs_diff_eq!(sol.b[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(oracle_1d(&y, &x, &weights(8)), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn matches_oracle_on_random_instances() {
        for seed in 0..200 {
            let (y, x) = random_instance(seed);
            let w = weights(y.len());
            let oracle = oracle_1d(&y, &x, &w);
            let sol = solve(
                &TccoProblem::new(y, &[x], w, true, true, Some(0.0)).unwrap(),
            )
            .unwrap();
            assert_abs_diff_eq!(sol.b[0], oracle, epsilon = 1e-8);
            assert!(sol.kkt_residual <= 1e-8, "seed {seed}: kkt {}", sol.kkt_residual);
        }
    }

    #[test]
    fn pointwise_implies_moment() {
        // With positive weights, pointwise residual nonnegativity implies
        // the aggregate moment constraint; enabling both must not move b.
        for seed in [1, 7, 42, 99] {
            let (y, x) = random_instance(seed);
            let w = weights(y.len());
            let only_pw = solve(
                &TccoProblem::new(y.clone(), &[x.clone()], w.clone(), true, false, Some(0.0)).unwrap(),
            )
            .unwrap();
            let both = solve(
                &TccoProblem::new(y.clone(), &[x.clone()], w.clone(), true, true, Some(0.0)).unwrap(),
            )
            .unwrap();
            assert_abs_diff_eq!(only_pw.b[0], both.b[0], epsilon = 1e-9);
            let wy: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
            let wxb: f64 = w.iter().zip(&x).map(|(a, b)| a * b * both.b[0]).sum();
            assert!(wy >= wxb - 1e-9);
        }
    }

    #[test]
    fn adding_constraints_never_improves_objective() {
        for seed in [3, 12, 77] {
            let (y, x) = random_instance(seed);
            let w = weights(y.len());
            let mk = |pw, mo| {
                solve(&TccoProblem::new(y.clone(), &[x.clone()], w.clone(), pw, mo, Some(0.0)).unwrap())
                    .unwrap()
                    .objective
            };
            let free = mk(false, false);
            let moment = mk(false, true);
            let pointwise = mk(true, false);
            let both = mk(true, true);
            assert!(moment >= free - 1e-12);
            assert!(pointwise >= moment - 1e-12);
            assert!(both >= free - 1e-12);
        }
    }

    #[test]
    fn two_regressor_instance_matches_grid_search() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 24;
        let x1: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.5)).collect();
        let x2: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.5)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 0.6 * x1[i] + 0.3 * x2[i] + rng.random_range(0.0..0.05))
            .collect();
        let w = weights(n);
        let sol = solve(
            &TccoProblem::new(y.clone(), &[x1.clone(), x2.clone()], w.clone(), true, true, Some(0.0))
                .unwrap(),
        )
        .unwrap();

        // Coarse-to-fine lattice search (step 1e-3 at the fine stage).
        let objective = |b1: f64, b2: f64| -> Option<f64> {
            let mut obj = 0.0;
            let mut wy = 0.0;
            let mut wxb = 0.0;
            for i in 0..n {
                let fit = b1 * x1[i] + b2 * x2[i];
                let r = y[i] - fit;
                if r < -1e-9 {
                    return None;
                }
                obj += r * r;
                wy += w[i] * y[i];
                wxb += w[i] * fit;
            }
            (wy >= wxb - 1e-9).then_some(obj)
        };
        let mut best = (0.0, 0.0, f64::INFINITY);
        for i in 0..=100 {
            for j in 0..=100 {
                let (b1, b2) = (i as f64 * 0.02, j as f64 * 0.02);
                if let Some(obj) = objective(b1, b2) {
                    if obj < best.2 {
                        best = (b1, b2, obj);
                    }
                }
            }
        }
        let center = (best.0, best.1);
        for i in -25..=25 {
            for j in -25..=25 {
                let b1 = (center.0 + i as f64 * 1e-3).max(0.0);
                let b2 = (center.1 + j as f64 * 1e-3).max(0.0);
                if let Some(obj) = objective(b1, b2) {
                    if obj < best.2 {
                        best = (b1, b2, obj);
                    }
                }
            }
        }
        assert_abs_diff_eq!(sol.b[0], best.0, epsilon = 2e-3);
        assert_abs_diff_eq!(sol.b[1], best.1, epsilon = 2e-3);
        assert!(sol.b.iter().all(|&b| b >= -1e-12));
    }

    #[test]
    fn kkt_interior_boundary_and_perturbed() {
        // Interior optimum: gradient alone is near zero.
        let x: Vec<f64> = (0..16).map(|i| 0.2 + 0.05 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.4 * v).collect();
        let p = problem_1d(y, x, false, false);
        let sol = solve(&p).unwrap();
        assert!(sol.kkt_residual <= 1e-10);

        // Bound active with a genuinely positive multiplier (x·y < 0).
        let x2: Vec<f64> = (0..12).map(|i| 0.1 + 0.1 * i as f64).collect();
        let y2: Vec<f64> = x2.iter().map(|v| 0.1 - 0.4 * v).collect();
        let p2 = problem_1d(y2, x2, false, false);
        let sol2 = solve(&p2).unwrap();
        assert_eq!(sol2.b[0], 0.0);
        assert!(sol2.kkt_residual <= 1e-8);

        // Perturbing the solution must break the certificate.
        let mut fake = sol2.clone();
        fake.b[0] += 1e-3;
        assert!(check_kkt(&p2, &fake) > 1e-4);
    }

    #[test]
    fn infeasible_pointwise_reports_error() {
        let x: Vec<f64> = vec![1.0; 8];
        let mut y = vec![0.5; 8];
        y[4] = -0.2;
        let err = solve(&problem_1d(y, x, true, false)).unwrap_err();
        assert!(matches!(err, CqpError::Infeasible(_)));
    }

    #[test]
    fn near_zero_regressor_rows_do_not_poison_the_bound() {
        // A row with x below pos-tol and tiny y must not clamp b to ~0.
        let mut x = vec![1.0; 10];
        let mut y = vec![2.0; 10];
        x[9] = 1e-9;
        y[9] = 1e-12;
        let sol = solve(&problem_1d(y.clone(), x.clone(), true, true)).unwrap();
        // The moment bound legitimately sits a hair below 2 because the
        // degenerate row contributes signal but almost no response.
        assert_abs_diff_eq!(sol.b[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(oracle_1d(&y, &x, &weights(10)), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn scale_equivariance() {
        let (y, x) = random_instance(17);
        let w = weights(y.len());
        let base = solve(&TccoProblem::new(y.clone(), &[x.clone()], w.clone(), true, true, Some(0.0)).unwrap())
            .unwrap();
        for c in [0.2, 3.7] {
            let xc: Vec<f64> = x.iter().map(|v| c * v).collect();
            let scaled =
                solve(&TccoProblem::new(y.clone(), &[xc], w.clone(), true, true, Some(0.0)).unwrap())
                    .unwrap();
            assert_abs_diff_eq!(scaled.b[0], base.b[0] / c, epsilon = 1e-9);
            assert_abs_diff_eq!(scaled.objective, base.objective, epsilon = 1e-9);
        }
    }

    #[test]
    fn global_optimality_against_random_feasible_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for seed in [2, 13, 29] {
            let (y, x) = random_instance(seed);
            let w = weights(y.len());
            let problem = TccoProblem::new(y.clone(), &[x.clone()], w.clone(), true, true, Some(0.0)).unwrap();
            let sol = solve(&problem).unwrap();
            for _ in 0..10_000 {
                let b = rng.random_range(0.0..4.0);
                let feasible = y.iter().zip(&x).all(|(yi, xi)| yi - b * xi >= -1e-12)
                    && {
                        let wy: f64 = w.iter().zip(&y).map(|(a, v)| a * v).sum();
                        let wxb: f64 = w.iter().zip(&x).map(|(a, v)| a * v * b).sum();
                        wy >= wxb - 1e-12
                    };
                if feasible {
                    let obj: f64 = y.iter().zip(&x).map(|(yi, xi)| (yi - b * xi).powi(2)).sum();
                    assert!(
                        sol.objective <= obj + 1e-10,
                        "seed {seed}: found better b = {b}"
                    );
                }
            }
        }
    }
}
