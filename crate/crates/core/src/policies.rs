//! Decision rules and analysis oracles over exactly solvable quadratic
//! problems: closed-form optima for federated least squares, the
//! objective-shift displacement bound for client departure/arrival, and the
//! inactive-client abandonment rule.

use crate::error::{Error, Result};
use crate::numkit::ParamVector;
use nalgebra::{DMatrix, DVector};

/// One client's least-squares data: row-major design matrix and targets.
#[derive(Debug, Clone)]
pub struct QuadraticClient {
    design: Vec<f64>,
    targets: Vec<f64>,
    dim: usize,
}

impl QuadraticClient {
    pub fn new(design: Vec<f64>, targets: Vec<f64>, dim: usize) -> Self {
        assert!(dim > 0 && !targets.is_empty());
        assert_eq!(design.len(), targets.len() * dim, "design shape mismatch");
        QuadraticClient {
            design,
            targets,
            dim,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.targets.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.design[i * self.dim..(i + 1) * self.dim]
    }
}

/// Federated least-squares problem. The k-th local objective is
/// `1/(2 n_k) ||X_k w - y_k||^2 + l2/2 ||w||^2`, weighted by `n_k / n` in the
/// global objective.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    pub clients: Vec<QuadraticClient>,
    pub l2: f64,
    dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftMode {
    Leave,
    Join,
}

impl QuadraticProblem {
    pub fn new(clients: Vec<QuadraticClient>, l2: f64) -> Self {
        assert!(!clients.is_empty(), "problem needs at least one client");
        let dim = clients[0].dim;
        assert!(clients.iter().all(|c| c.dim == dim), "mixed dimensions");
        QuadraticProblem { clients, l2, dim }
    }

    /// Build from a federated regression dataset, appending a constant-one
    /// column so the quadratic matches the linear-regression model's bias.
    pub fn from_regression_dataset(fd: &crate::data::FederatedDataset, l2: f64) -> Self {
        let clients = fd
            .clients
            .iter()
            .map(|c| {
                let b = &c.train;
                let d = b.input_dim() + 1;
                let mut design = Vec::with_capacity(b.len() * d);
                let mut targets = Vec::with_capacity(b.len());
                for i in 0..b.len() {
                    design.extend_from_slice(b.feature_row(i));
                    design.push(1.0);
                    targets.push(b.target(i));
                }
                QuadraticClient::new(design, targets, d)
            })
            .collect();
        QuadraticProblem::new(clients, l2)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn total_samples(&self) -> usize {
        self.clients.iter().map(|c| c.n_samples()).sum()
    }

    fn included(&self, exclude: Option<usize>) -> Vec<usize> {
        (0..self.clients.len())
            .filter(|k| Some(*k) != exclude)
            .collect()
    }

    /// Accumulate `sum X_k^T X_k` and `sum X_k^T y_k` over a client subset.
    fn normal_equations(&self, subset: &[usize]) -> (DMatrix<f64>, DVector<f64>, usize) {
        let d = self.dim;
        let mut a = DMatrix::zeros(d, d);
        let mut b = DVector::zeros(d);
        let mut n = 0usize;
        for &k in subset {
            let c = &self.clients[k];
            n += c.n_samples();
            for i in 0..c.n_samples() {
                let x = c.row(i);
                let y = c.targets[i];
                for p in 0..d {
                    b[p] += x[p] * y;
                    for r in 0..d {
                        a[(p, r)] += x[p] * x[r];
                    }
                }
            }
        }
        (a, b, n)
    }

    /// Global Hessian over `subset`, with weights `n_k / n_ref`.
    fn hessian(&self, subset: &[usize], n_ref: usize) -> DMatrix<f64> {
        let (mut a, _, n_sub) = self.normal_equations(subset);
        let d = self.dim;
        a /= n_ref as f64;
        let ridge = self.l2 * n_sub as f64 / n_ref as f64;
        for p in 0..d {
            a[(p, p)] += ridge;
        }
        a
    }

    /// Extreme eigenvalues (min, max) of the global Hessian over `subset`.
    pub fn hessian_extremes(&self, subset: &[usize], n_ref: usize) -> (f64, f64) {
        let eig = self.hessian(subset, n_ref).symmetric_eigenvalues();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in eig.iter() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        (lo, hi)
    }

    /// Local objective of client `k` at `w`.
    pub fn local_objective(&self, k: usize, w: &ParamVector) -> f64 {
        let c = &self.clients[k];
        assert_eq!(w.dim(), self.dim);
        let ws = w.as_slice();
        let mut sq = 0.0;
        for i in 0..c.n_samples() {
            let x = c.row(i);
            let mut r = -c.targets[i];
            for j in 0..self.dim {
                r += x[j] * ws[j];
            }
            sq += r * r;
        }
        0.5 * sq / c.n_samples() as f64 + 0.5 * self.l2 * ws.iter().map(|v| v * v).sum::<f64>()
    }

    /// Gradient of the (subset-weighted) global objective at `w`, normalized
    /// by the subset's sample count.
    fn global_grad_norm(&self, subset: &[usize], w: &DVector<f64>) -> f64 {
        let (a, b, n) = self.normal_equations(subset);
        let ridge = self.l2;
        let g = (&a * w - b) / n as f64 + ridge * w;
        g.norm()
    }

    fn solve(&self, subset: &[usize]) -> Result<ParamVector> {
        if subset.is_empty() {
            return Err(Error::Singular("no clients left in objective".into()));
        }
        let (mut a, b, n) = self.normal_equations(subset);
        let d = self.dim;
        let ridge = self.l2 * n as f64;
        for p in 0..d {
            a[(p, p)] += ridge;
        }
        let chol = nalgebra::Cholesky::new(a).ok_or_else(|| {
            Error::Singular("global Hessian is not positive definite".into())
        })?;
        let w = chol.solve(&b);
        debug_assert!(
            self.global_grad_norm(subset, &w) <= 1e-10,
            "optimality certificate failed"
        );
        Ok(ParamVector::from_vec(w.iter().cloned().collect()))
    }

    /// Uniform smoothness/strong-convexity constants for the instance: the
    /// extreme eigenvalues over every client's local Hessian and the global
    /// Hessians before and after the shift (each in per-sample scale). These
    /// are the `L` that bounds every local objective and the `mu` below
    /// every relevant curvature.
    pub fn uniform_constants(&self, pre: &[usize], post: &[usize]) -> (f64, f64) {
        let mut mu = f64::INFINITY;
        let mut l = f64::NEG_INFINITY;
        for k in 0..self.clients.len() {
            let n_k = self.clients[k].n_samples();
            let (lo, hi) = self.hessian_extremes(&[k], n_k);
            mu = mu.min(lo);
            l = l.max(hi);
        }
        for subset in [pre, post] {
            let n: usize = subset.iter().map(|&k| self.clients[k].n_samples()).sum();
            let (lo, hi) = self.hessian_extremes(subset, n);
            mu = mu.min(lo);
            l = l.max(hi);
        }
        (mu, l)
    }
}

/// Closed-form minimizer of the global objective, optionally excluding one
/// client. Errors if the resulting system is singular.
pub fn exact_optimum(p: &QuadraticProblem, exclude: Option<usize>) -> Result<ParamVector> {
    p.solve(&p.included(exclude))
}

/// Minimizer of a single client's local objective.
pub fn local_optimum(p: &QuadraticProblem, k: usize) -> Result<ParamVector> {
    p.solve(&[k])
}

/// Objective-shift displacement against its theoretical bound.
///
/// Returns `(lhs, rhs)` where `lhs = ||w* - w_hat*||^2` for the optima before
/// and after client `a` leaves or joins, and `rhs` is the bound
/// `8 L n_a^2 D_a / (mu^2 n_before^2)` (leave) or
/// `8 L n_a^2 D_a / (mu^2 (n_before + n_a)^2)` (join), with
/// `D_a = f_a(w_hat*) - min f_a` computed exactly. `mu` and `L` are the
/// uniform constants shared by all local objectives and the global one
/// ([`QuadraticProblem::uniform_constants`]); the join-mode bound is
/// meaningful when the joining client holds a minority of the samples.
pub fn shift_bound(p: &QuadraticProblem, a: usize, mode: ShiftMode) -> Result<(f64, f64)> {
    assert!(a < p.clients.len(), "no such client {a}");
    let n_a = p.clients[a].n_samples() as f64;
    let n_all = p.total_samples();

    let (pre, post, pre_subset, post_subset) = match mode {
        ShiftMode::Leave => {
            let pre = exact_optimum(p, None)?;
            let post = exact_optimum(p, Some(a))?;
            (pre, post, p.included(None), p.included(Some(a)))
        }
        ShiftMode::Join => {
            let pre = exact_optimum(p, Some(a))?;
            let post = exact_optimum(p, None)?;
            (pre, post, p.included(Some(a)), p.included(None))
        }
    };
    // Both modes divide by the total that includes the shifting client:
    // `n` before a departure, `n + n_a` for an arrival.
    let denom = n_all as f64;

    let lhs = {
        let d = pre.sub(&post);
        d.dot(&d)
    };

    let (mu, l_max) = p.uniform_constants(&pre_subset, &post_subset);
    if mu <= 0.0 {
        return Err(Error::Singular(
            "shifted objective is not positive definite".into(),
        ));
    }

    let w_a = local_optimum(p, a)?;
    let d_hat = (p.local_objective(a, &post) - p.local_objective(a, &w_a)).max(0.0);

    let rhs = 8.0 * l_max * n_a * n_a * d_hat / (mu * mu * denom * denom);
    Ok((lhs, rhs))
}

/// Abandonment rule for a chronically inactive client: abandon when its
/// inactivity probability exceeds `c_ratio / (T * E)`.
pub fn should_abandon(y_a: f64, rounds: u32, steps_per_round: u32, c_ratio: f64) -> bool {
    assert!((0.0..=1.0).contains(&y_a), "probability out of range");
    assert!(c_ratio > 0.0, "c_ratio must be positive");
    y_a > c_ratio / (rounds as f64 * steps_per_round as f64)
}
