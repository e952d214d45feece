//! Entropic-regularized optimal transport.
//!
//! The solver takes a cost matrix built as `C = 1 - F` from a composite
//! similarity matrix, runs Sinkhorn-Knopp matrix scaling (plain or
//! log-domain), and reports the transport term `sum_ij P*(i,j) C(i,j)` as the
//! candidate's cost. A brute-force permanent-style oracle over permutation
//! matrices covers small uniform square problems for testing.

use ndarray::Array2;

use crate::error::{MotorError, Result};
use crate::types::SinkhornMode;

/// Largest instance the brute-force oracle accepts (n! enumeration).
pub const ORACLE_MAX_N: usize = 6;

/// Marginal tolerance used when checking that `u` and `v` are probability
/// vectors.
const MARGINAL_SUM_TOL: f64 = 1e-9;

/// A finite, validated transport cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Array2<f64>,
}

impl CostMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if let Some(bad) = entries.iter().find(|e| !e.is_finite()) {
            return Err(MotorError::NonFiniteInput(format!(
                "cost matrix entry {bad}"
            )));
        }
        Ok(Self { entries })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.len());
        let mut m = Array2::zeros((n_rows, n_cols));
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n_cols, "ragged cost matrix");
            for (j, &c) in row.iter().enumerate() {
                m[[i, j]] = c;
            }
        }
        Self::new(m)
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn n_rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.entries.ncols()
    }

    /// A copy with `c` added to every entry.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(&self.entries + c)
    }
}

/// Build `C = 1 - F` from a similarity matrix. Entries land in [0, 2] when
/// `F` holds clamped cosine similarities.
pub fn build_cost_matrix(similarity: &Array2<f64>) -> Result<CostMatrix> {
    if let Some(bad) = similarity.iter().find(|e| !e.is_finite()) {
        return Err(MotorError::NonFiniteInput(format!(
            "similarity matrix entry {bad}"
        )));
    }
    CostMatrix::new(similarity.mapv(|f| 1.0 - f))
}

/// Solver knobs. `mode` picks plain matrix scaling or the log-domain form;
/// plain underflows once `gamma` is small relative to the cost range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornParams {
    pub gamma: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub mode: SinkhornMode,
}

impl SinkhornParams {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            max_iters: 1000,
            tol: 1e-6,
            mode: SinkhornMode::Plain,
        }
    }

    /// Like [`SinkhornParams::new`] but switches to log-domain below
    /// `gamma = 0.05`, where the plain kernel is at risk of collapsing.
    pub fn for_gamma(gamma: f64) -> Self {
        let mode = if gamma < 0.05 {
            SinkhornMode::LogDomain
        } else {
            SinkhornMode::Plain
        };
        Self {
            mode,
            ..Self::new(gamma)
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_mode(mut self, mode: SinkhornMode) -> Self {
        self.mode = mode;
        self
    }

    fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(MotorError::InvalidConfig(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.max_iters == 0 {
            return Err(MotorError::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(MotorError::InvalidConfig(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// A transport plan with the marginals it was solved against.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    plan: Array2<f64>,
    row_marginal: Vec<f64>,
    col_marginal: Vec<f64>,
    cost: f64,
    iterations: usize,
    converged: bool,
}

impl TransportPlan {
    pub fn plan(&self) -> &Array2<f64> {
        &self.plan
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.col_marginal
    }

    /// Transport term `sum_ij P(i,j) C(i,j)`.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Worst deviation of the plan's row/column sums from the prescribed
    /// marginals, recomputed from the plan itself.
    pub fn marginal_violation(&self) -> f64 {
        marginal_violation(&self.plan, &self.row_marginal, &self.col_marginal)
    }
}

/// Uniform probability vector of length `n`.
pub fn uniform_marginal(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn marginal_violation(plan: &Array2<f64>, u: &[f64], v: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (i, &ui) in u.iter().enumerate() {
        let row_sum: f64 = plan.row(i).sum();
        worst = worst.max((row_sum - ui).abs());
    }
    for (j, &vj) in v.iter().enumerate() {
        let col_sum: f64 = plan.column(j).sum();
        worst = worst.max((col_sum - vj).abs());
    }
    worst
}

fn check_marginals(cost: &CostMatrix, u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != cost.n_rows() {
        return Err(MotorError::DimensionMismatch {
            context: "row marginal".into(),
            expected: cost.n_rows(),
            got: u.len(),
        });
    }
    if v.len() != cost.n_cols() {
        return Err(MotorError::DimensionMismatch {
            context: "column marginal".into(),
            expected: cost.n_cols(),
            got: v.len(),
        });
    }
    for (name, m) in [("u", u), ("v", v)] {
        if m.is_empty() {
            return Err(MotorError::InvalidMarginals(format!("{name} is empty")));
        }
        if let Some(bad) = m.iter().find(|x| !x.is_finite() || **x <= 0.0) {
            return Err(MotorError::InvalidMarginals(format!(
                "{name} has nonpositive entry {bad}"
            )));
        }
        let sum: f64 = m.iter().sum();
        if (sum - 1.0).abs() > MARGINAL_SUM_TOL {
            return Err(MotorError::InvalidMarginals(format!(
                "{name} sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Solve the entropic OT problem `min <P, C> + gamma <P, log P>` subject to
/// row sums `u` and column sums `v`.
///
/// Returns the plan with `converged = true` once the worst marginal violation
/// drops to `params.tol`, or the best iterate with `converged = false` when
/// `max_iters` is exhausted. The reported cost is the transport term only.
pub fn sinkhorn(
    cost: &CostMatrix,
    u: &[f64],
    v: &[f64],
    params: &SinkhornParams,
) -> Result<TransportPlan> {
    params.validate()?;
    check_marginals(cost, u, v)?;
    match params.mode {
        SinkhornMode::Plain => sinkhorn_plain(cost, u, v, params),
        SinkhornMode::LogDomain => sinkhorn_log(cost, u, v, params),
    }
}

fn finish(
    plan: Array2<f64>,
    cost: &CostMatrix,
    u: &[f64],
    v: &[f64],
    iterations: usize,
    converged: bool,
) -> TransportPlan {
    let transport: f64 = plan
        .iter()
        .zip(cost.entries().iter())
        .map(|(p, c)| p * c)
        .sum();
    TransportPlan {
        plan,
        row_marginal: u.to_vec(),
        col_marginal: v.to_vec(),
        cost: transport,
        iterations,
        converged,
    }
}

fn sinkhorn_plain(
    cost: &CostMatrix,
    u: &[f64],
    v: &[f64],
    params: &SinkhornParams,
) -> Result<TransportPlan> {
    let (m, n) = (cost.n_rows(), cost.n_cols());
    let kernel = cost.entries().mapv(|c| (-c / params.gamma).exp());

    // A row or column of all zeros can never be rescaled to a positive
    // marginal: gamma is too small for plain mode.
    for i in 0..m {
        if kernel.row(i).iter().all(|&x| x <= 0.0) {
            return Err(MotorError::NumericalUnderflow);
        }
    }
    for j in 0..n {
        if kernel.column(j).iter().all(|&x| x <= 0.0) {
            return Err(MotorError::NumericalUnderflow);
        }
    }

    let mut a = vec![1.0f64; m];
    let mut b = vec![1.0f64; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iters {
        iterations += 1;

        // a <- u ./ (K b)
        for i in 0..m {
            let kb: f64 = (0..n).map(|j| kernel[[i, j]] * b[j]).sum();
            if kb <= 0.0 || !kb.is_finite() {
                return Err(MotorError::NumericalUnderflow);
            }
            a[i] = u[i] / kb;
        }
        // b <- v ./ (K^T a)
        for j in 0..n {
            let kta: f64 = (0..m).map(|i| kernel[[i, j]] * a[i]).sum();
            if kta <= 0.0 || !kta.is_finite() {
                return Err(MotorError::NumericalUnderflow);
            }
            b[j] = v[j] / kta;
        }

        // Column sums hold exactly after the b update; rows carry the error.
        let mut violation = 0.0f64;
        for i in 0..m {
            let row_sum: f64 = (0..n).map(|j| a[i] * kernel[[i, j]] * b[j]).sum();
            violation = violation.max((row_sum - u[i]).abs());
        }
        if violation <= params.tol {
            converged = true;
            break;
        }
    }

    let mut plan = Array2::zeros((m, n));
    for i in 0..m {
        for j in 0..n {
            plan[[i, j]] = a[i] * kernel[[i, j]] * b[j];
        }
    }
    if plan.iter().any(|p| !p.is_finite()) {
        return Err(MotorError::NumericalUnderflow);
    }
    Ok(finish(plan, cost, u, v, iterations, converged))
}

/// Numerically stable `log(sum_i exp(x_i))`.
fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn sinkhorn_log(
    cost: &CostMatrix,
    u: &[f64],
    v: &[f64],
    params: &SinkhornParams,
) -> Result<TransportPlan> {
    let (m, n) = (cost.n_rows(), cost.n_cols());
    let gamma = params.gamma;
    let c = cost.entries();
    let log_u: Vec<f64> = u.iter().map(|x| x.ln()).collect();
    let log_v: Vec<f64> = v.iter().map(|x| x.ln()).collect();

    // Dual potentials; P(i,j) = exp((f_i + g_j - C_ij) / gamma).
    let mut f = vec![0.0f64; m];
    let mut g = vec![0.0f64; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iters {
        iterations += 1;

        for i in 0..m {
            let lse = logsumexp((0..n).map(|j| (g[j] - c[[i, j]]) / gamma));
            f[i] = gamma * (log_u[i] - lse);
        }
        for j in 0..n {
            let lse = logsumexp((0..m).map(|i| (f[i] - c[[i, j]]) / gamma));
            g[j] = gamma * (log_v[j] - lse);
        }

        // Column sums hold exactly after the g update; rows carry the error.
        let mut violation = 0.0f64;
        for i in 0..m {
            let lse = logsumexp((0..n).map(|j| (g[j] - c[[i, j]]) / gamma));
            let row_sum = (f[i] / gamma + lse).exp();
            violation = violation.max((row_sum - u[i]).abs());
        }
        if violation <= params.tol {
            converged = true;
            break;
        }
    }

    let mut plan = Array2::zeros((m, n));
    for i in 0..m {
        for j in 0..n {
            plan[[i, j]] = ((f[i] + g[j] - c[[i, j]]) / gamma).exp();
        }
    }
    if plan.iter().any(|p| !p.is_finite()) {
        return Err(MotorError::NumericalUnderflow);
    }
    Ok(finish(plan, cost, u, v, iterations, converged))
}

/// Exact unregularized OT cost for small uniform square problems.
///
/// By Birkhoff's theorem the optimum over doubly-stochastic plans with
/// uniform marginals is attained at a permutation matrix, so the cost is
/// `min_sigma (1/n) sum_i C(i, sigma(i))` over all n! permutations.
pub fn exact_ot_bruteforce(cost: &CostMatrix, u: &[f64], v: &[f64]) -> Result<f64> {
    check_marginals(cost, u, v)?;
    let n = cost.n_rows();
    if cost.n_cols() != n {
        return Err(MotorError::OracleScopeExceeded(format!(
            "non-square problem {}x{}",
            n,
            cost.n_cols()
        )));
    }
    if n > ORACLE_MAX_N {
        return Err(MotorError::OracleScopeExceeded(format!(
            "n = {n} exceeds oracle limit {ORACLE_MAX_N}"
        )));
    }
    let expected = 1.0 / n as f64;
    for m in [u, v] {
        if m.iter().any(|&x| (x - expected).abs() > MARGINAL_SUM_TOL) {
            return Err(MotorError::OracleScopeExceeded(
                "marginals are not uniform".into(),
            ));
        }
    }

    let c = cost.entries();
    let mut best = f64::INFINITY;
    let mut perm: Vec<usize> = (0..n).collect();
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = p.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum();
        best = best.min(total / n as f64);
    });
    Ok(best)
}

fn permute(items: &mut [usize], start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn solve(c: &CostMatrix, gamma: f64) -> TransportPlan {
        let u = uniform_marginal(c.n_rows());
        let v = uniform_marginal(c.n_cols());
        let params = SinkhornParams::for_gamma(gamma)
            .with_tol(1e-10)
            .with_max_iters(20_000);
        sinkhorn(c, &u, &v, &params).unwrap()
    }

    /// Closed-form entropic optimum for a 2x2 problem with uniform marginals.
    ///
    /// With both marginals (1/2, 1/2) the feasible set is
    /// P = [[p, 1/2-p], [1/2-p, p]]; minimizing the entropic objective in p
    /// gives p = 1/2 * sigmoid(((C12+C21) - (C11+C22)) / (2 gamma)).
    fn closed_form_2x2_cost(c: &CostMatrix, gamma: f64) -> f64 {
        let m = c.entries();
        let diag = m[[0, 0]] + m[[1, 1]];
        let off = m[[0, 1]] + m[[1, 0]];
        let z = (off - diag) / (2.0 * gamma);
        let p = 0.5 / (1.0 + (-z).exp());
        p * diag + (0.5 - p) * off
    }

    #[test]
    fn build_cost_matrix_all_ones_similarity() {
        let f = array![[1.0, 1.0], [1.0, 1.0]];
        let c = build_cost_matrix(&f).unwrap();
        assert!(c.entries().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn build_cost_matrix_direct_substitution() {
        let f = array![[0.5, -0.5]];
        let c = build_cost_matrix(&f).unwrap();
        assert_eq!(c.entries()[[0, 0]], 0.5);
        assert_eq!(c.entries()[[0, 1]], 1.5);
    }

    #[test]
    fn build_cost_matrix_rejects_nan() {
        let f = array![[0.5, f64::NAN]];
        assert!(matches!(
            build_cost_matrix(&f),
            Err(MotorError::NonFiniteInput(_))
        ));
    }

    #[test]
    fn one_by_one_problem() {
        let c = CostMatrix::from_rows(&[&[0.3]]).unwrap();
        let plan = sinkhorn(&c, &[1.0], &[1.0], &SinkhornParams::new(1.0)).unwrap();
        assert!((plan.plan()[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((plan.cost() - 0.3).abs() < 1e-12);
        assert!(plan.converged());
    }

    #[test]
    fn zero_cost_gives_outer_product_plan() {
        let c = CostMatrix::new(Array2::zeros((2, 3))).unwrap();
        let u = uniform_marginal(2);
        let v = uniform_marginal(3);
        let plan = sinkhorn(&c, &u, &v, &SinkhornParams::new(1.0)).unwrap();
        assert!(plan.cost().abs() < 1e-12);
        for (i, ui) in u.iter().enumerate() {
            for (j, vj) in v.iter().enumerate() {
                assert!((plan.plan()[[i, j]] - ui * vj).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn matches_closed_form_2x2() {
        let c = CostMatrix::from_rows(&[&[0.1, 0.9], &[0.7, 0.2]]).unwrap();
        for gamma in [1.0, 0.3, 0.1] {
            let plan = solve(&c, gamma);
            assert!(plan.converged());
            let expected = closed_form_2x2_cost(&c, gamma);
            assert!(
                (plan.cost() - expected).abs() < 1e-9,
                "gamma={gamma}: {} vs {expected}",
                plan.cost()
            );
        }
    }

    #[test]
    fn small_gamma_tracks_bruteforce() {
        // The optimal assignment (the diagonal, cost 0.2) is well separated
        // from the runner-up (0.633), so the entropic plan at gamma = 0.01
        // carries no visible mixing bias.
        let c =
            CostMatrix::from_rows(&[&[0.1, 1.2, 0.9], &[1.3, 0.2, 1.0], &[0.8, 0.9, 0.3]]).unwrap();
        let u = uniform_marginal(3);
        let exact = exact_ot_bruteforce(&c, &u, &u).unwrap();
        assert!((exact - 0.2).abs() < 1e-12);
        let plan = solve(&c, 0.01);
        assert!(
            (plan.cost() - exact).abs() < 1e-3,
            "{} vs {exact}",
            plan.cost()
        );
    }

    #[test]
    fn oracle_zero_cost_matching_on_diagonal() {
        let c = CostMatrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let u = uniform_marginal(2);
        assert_eq!(exact_ot_bruteforce(&c, &u, &u).unwrap(), 0.0);
    }

    #[test]
    fn oracle_zero_cost_matching_on_antidiagonal() {
        let c = CostMatrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let u = uniform_marginal(2);
        assert_eq!(exact_ot_bruteforce(&c, &u, &u).unwrap(), 0.0);
    }

    #[test]
    fn oracle_scope_errors() {
        let c = CostMatrix::new(Array2::zeros((2, 3))).unwrap();
        let err = exact_ot_bruteforce(&c, &uniform_marginal(2), &uniform_marginal(3));
        assert!(matches!(err, Err(MotorError::OracleScopeExceeded(_))));

        let c7 = CostMatrix::new(Array2::zeros((7, 7))).unwrap();
        let err = exact_ot_bruteforce(&c7, &uniform_marginal(7), &uniform_marginal(7));
        assert!(matches!(err, Err(MotorError::OracleScopeExceeded(_))));

        let c2 = CostMatrix::new(Array2::zeros((2, 2))).unwrap();
        let err = exact_ot_bruteforce(&c2, &[0.7, 0.3], &[0.5, 0.5]);
        assert!(matches!(err, Err(MotorError::OracleScopeExceeded(_))));
    }

    #[test]
    fn invalid_marginals_rejected() {
        let c = CostMatrix::new(Array2::zeros((2, 2))).unwrap();
        let p = SinkhornParams::new(1.0);
        assert!(matches!(
            sinkhorn(&c, &[0.5, -0.5], &[0.5, 0.5], &p),
            Err(MotorError::InvalidMarginals(_))
        ));
        assert!(matches!(
            sinkhorn(&c, &[0.5, 0.4], &[0.5, 0.5], &p),
            Err(MotorError::InvalidMarginals(_))
        ));
        assert!(matches!(
            sinkhorn(&c, &[0.5, 0.5, 0.0], &[0.5, 0.5], &p),
            Err(MotorError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn plain_mode_underflow_is_reported() {
        // Costs of ~1 at gamma 1e-4 drive exp(-C/gamma) to exactly 0.
        let c = CostMatrix::from_rows(&[&[1.0, 1.2], &[0.9, 1.1]]).unwrap();
        let u = uniform_marginal(2);
        let params = SinkhornParams::new(1e-4); // plain on purpose
        assert!(matches!(
            sinkhorn(&c, &u, &u, &params),
            Err(MotorError::NumericalUnderflow)
        ));
        // The log-domain form handles the same instance.
        let log = SinkhornParams::new(1e-4).with_mode(SinkhornMode::LogDomain);
        assert!(sinkhorn(&c, &u, &u, &log).is_ok());
    }

    #[test]
    fn non_convergence_returns_best_iterate() {
        let c = CostMatrix::from_rows(&[&[0.1, 0.9], &[0.7, 0.2]]).unwrap();
        let u = uniform_marginal(2);
        let params = SinkhornParams::new(0.05).with_tol(1e-14).with_max_iters(2);
        let plan = sinkhorn(&c, &u, &u, &params).unwrap();
        assert!(!plan.converged());
        assert_eq!(plan.iterations(), 2);
        assert!(plan.cost().is_finite());
    }

    fn arb_cost(max_n: usize) -> impl Strategy<Value = CostMatrix> {
        (1..=max_n, 1..=max_n).prop_flat_map(|(m, n)| {
            prop::collection::vec(0.0f64..2.0, m * n).prop_map(move |vals| {
                CostMatrix::new(Array2::from_shape_vec((m, n), vals).unwrap()).unwrap()
            })
        })
    }

    fn arb_square_cost(max_n: usize) -> impl Strategy<Value = CostMatrix> {
        (1..=max_n).prop_flat_map(|n| {
            prop::collection::vec(0.0f64..2.0, n * n).prop_map(move |vals| {
                CostMatrix::new(Array2::from_shape_vec((n, n), vals).unwrap()).unwrap()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn converged_plans_satisfy_marginals(c in arb_cost(6), gamma in 0.1f64..2.0) {
            let u = uniform_marginal(c.n_rows());
            let v = uniform_marginal(c.n_cols());
            let params = SinkhornParams::new(gamma).with_max_iters(5000);
            let plan = sinkhorn(&c, &u, &v, &params).unwrap();
            prop_assume!(plan.converged());
            prop_assert!(plan.marginal_violation() <= params.tol * 1.01);
        }

        #[test]
        fn cost_bounded_by_extremes(c in arb_cost(5), gamma in 0.1f64..2.0) {
            let u = uniform_marginal(c.n_rows());
            let v = uniform_marginal(c.n_cols());
            let plan = sinkhorn(&c, &u, &v, &SinkhornParams::new(gamma)).unwrap();
            let lo = c.entries().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = c.entries().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(plan.cost() >= lo - 1e-9 && plan.cost() <= hi + 1e-9);
        }

        #[test]
        fn shift_equivariance(c in arb_cost(5), shift in -0.5f64..0.5) {
            let u = uniform_marginal(c.n_rows());
            let v = uniform_marginal(c.n_cols());
            let params = SinkhornParams::new(1.0).with_tol(1e-12).with_max_iters(20_000);
            let base = sinkhorn(&c, &u, &v, &params).unwrap();
            let moved = sinkhorn(&c.shifted(shift).unwrap(), &u, &v, &params).unwrap();
            prop_assert!((moved.cost() - base.cost() - shift).abs() < 1e-9);
            for (p, q) in base.plan().iter().zip(moved.plan().iter()) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn permutation_equivariance(c in arb_square_cost(4), gamma in 0.2f64..2.0) {
            let n = c.n_rows();
            let u = uniform_marginal(n);
            let params = SinkhornParams::new(gamma).with_tol(1e-10).with_max_iters(20_000);
            let base = sinkhorn(&c, &u, &u, &params).unwrap();

            // Rotate the rows by one; uniform marginals are unchanged.
            let mut rotated = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    rotated[[(i + 1) % n, j]] = c.entries()[[i, j]];
                }
            }
            let plan = sinkhorn(&CostMatrix::new(rotated).unwrap(), &u, &u, &params).unwrap();
            prop_assert!((plan.cost() - base.cost()).abs() < 1e-12);
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((plan.plan()[[(i + 1) % n, j]] - base.plan()[[i, j]]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn log_and_plain_agree(c in arb_cost(5), gamma in 0.1f64..2.0) {
            let u = uniform_marginal(c.n_rows());
            let v = uniform_marginal(c.n_cols());
            let tol = 1e-10;
            let plain = sinkhorn(&c, &u, &v,
                &SinkhornParams::new(gamma).with_tol(tol).with_max_iters(20_000)).unwrap();
            let log = sinkhorn(&c, &u, &v,
                &SinkhornParams::new(gamma).with_tol(tol).with_max_iters(20_000)
                    .with_mode(SinkhornMode::LogDomain)).unwrap();
            prop_assume!(plain.converged());
            for (p, q) in plain.plan().iter().zip(log.plan().iter()) {
                prop_assert!((p - q).abs() < 1e-8);
            }
        }

        #[test]
        fn entropic_gap_shrinks_with_gamma(c in arb_square_cost(4)) {
            // The 1e-9 budgets hold for exact solves. A solve that stalls
            // before `tol` (Sinkhorn's rate degenerates for strongly
            // separated plans at small gamma) carries a cost error on the
            // order of its marginal violation times the cost scale, so each
            // assertion widens by that much.
            let u = uniform_marginal(c.n_rows());
            let exact = exact_ot_bruteforce(&c, &u, &u).unwrap();
            let scale = c.entries().iter().cloned().fold(0.0, f64::max);
            let mut last = f64::INFINITY;
            let mut last_viol = 0.0;
            for gamma in [1.0, 0.3, 0.1, 0.03, 0.01] {
                let params = SinkhornParams::for_gamma(gamma)
                    .with_tol(1e-10)
                    .with_max_iters(20_000);
                let plan = sinkhorn(&c, &u, &u, &params).unwrap();
                let cost = plan.cost();
                let viol = plan.marginal_violation();
                let step_slack = 1e-9 + 4.0 * (viol + last_viol) * scale;
                prop_assert!(
                    cost <= last + step_slack,
                    "cost {cost} rose from {last} at gamma {gamma} (slack {step_slack:.3e})"
                );
                let floor_slack = 1e-9 + 4.0 * viol * scale;
                prop_assert!(
                    cost >= exact - floor_slack,
                    "cost {cost} below exact {exact} (slack {floor_slack:.3e})"
                );
                last = cost;
                last_viol = viol;
            }
        }

        #[test]
        fn oracle_matches_exhaustive_recount(c in arb_square_cost(4)) {
            // Independent recount: enumerate permutations in lexicographic
            // order via index arithmetic instead of the recursive generator.
            let n = c.n_rows();
            let u = uniform_marginal(n);
            let oracle = exact_ot_bruteforce(&c, &u, &u).unwrap();

            let mut indices: Vec<usize> = (0..n).collect();
            let mut best = f64::INFINITY;
            loop {
                let total: f64 = indices.iter().enumerate()
                    .map(|(i, &j)| c.entries()[[i, j]])
                    .sum();
                best = best.min(total / n as f64);
                // next_permutation
                let Some(k) = (0..n.saturating_sub(1)).rev()
                    .find(|&k| indices[k] < indices[k + 1]) else { break };
                let l = (k + 1..n).rev().find(|&l| indices[l] > indices[k]).unwrap();
                indices.swap(k, l);
                indices[k + 1..].reverse();
            }
            prop_assert!((oracle - best).abs() < 1e-12);
        }
    }
}
