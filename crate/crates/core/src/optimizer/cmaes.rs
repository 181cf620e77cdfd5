//! (mu/mu_w, lambda)-CMA-ES with rank-one and rank-mu covariance updates.
//!
//! Constants follow Hansen's canonical parameterisation ("The CMA Evolution
//! Strategy: A Tutorial", default strategy parameters):
//!
//! - `lambda = 4 + floor(3 ln n)`, `mu = floor(lambda / 2)`
//! - `w_i ∝ ln(mu + 1/2) - ln i`, normalised to sum 1
//! - `c_sigma = (mu_eff + 2) / (n + mu_eff + 5)`
//! - `d_sigma = 1 + 2 max(0, sqrt((mu_eff - 1)/(n + 1)) - 1) + c_sigma`
//! - `c_c = (4 + mu_eff/n) / (n + 4 + 2 mu_eff/n)`
//! - `c_1 = 2 / ((n + 1.3)^2 + mu_eff)`
//! - `c_mu = min(1 - c_1, 2 (mu_eff - 2 + 1/mu_eff) / ((n + 2)^2 + mu_eff))`

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIterations,
    /// Recent best values and the current generation span less than `tol_fun`.
    TolFun,
    /// Step size times the largest axis fell below `tol_x`.
    TolX,
    /// Best-ever loss did not improve for `stall_iterations` generations.
    Stall,
    /// Covariance condition number exceeded 1e14.
    ConditionCov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaesConfig {
    /// `None` picks `4 + floor(3 ln n)`.
    #[serde(default)]
    pub population_size: Option<usize>,
    #[serde(default = "default_sigma0")]
    pub sigma0: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub seed: u64,
    /// Extra independent runs from fresh start points after an early stop.
    #[serde(default)]
    pub restart_count: usize,
    #[serde(default = "default_tol_fun")]
    pub tol_fun: f64,
    /// Absolute, in search-space units. `None` means `1e-11 * sigma0`.
    #[serde(default)]
    pub tol_x: Option<f64>,
    /// Stop when the best-ever loss has not improved (relative 1e-9) for this
    /// many generations. `None` disables the check.
    #[serde(default)]
    pub stall_iterations: Option<usize>,
}

fn default_sigma0() -> f64 {
    12.5
}

fn default_max_iterations() -> usize {
    1000
}

fn default_tol_fun() -> f64 {
    1e-12
}

impl Default for CmaesConfig {
    fn default() -> Self {
        CmaesConfig {
            population_size: None,
            sigma0: default_sigma0(),
            max_iterations: default_max_iterations(),
            seed: 0,
            restart_count: 0,
            tol_fun: default_tol_fun(),
            tol_x: None,
            stall_iterations: None,
        }
    }
}

impl CmaesConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.population_size {
            if l < 2 {
                return Err(Error::invalid("population size", format!("must be >= 2, got {l}")));
            }
        }
        if !(self.sigma0.is_finite() && self.sigma0 > 0.0) {
            return Err(Error::invalid("sigma0", format!("must be > 0, got {}", self.sigma0)));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max iterations", "must be >= 1"));
        }
        if !(self.tol_fun >= 0.0) {
            return Err(Error::invalid("tol_fun", "must be >= 0"));
        }
        Ok(())
    }

    pub fn lambda_for(&self, n: usize) -> usize {
        self.population_size
            .unwrap_or_else(|| 4 + (3.0 * (n.max(1) as f64).ln()).floor() as usize)
    }
}

/// One CMA-ES state. Drive it with [`Cmaes::ask`] and [`Cmaes::tell`].
pub struct Cmaes {
    n: usize,
    lambda: usize,
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    p_c: DVector<f64>,
    p_sigma: DVector<f64>,
    basis: DMatrix<f64>,
    axes: DVector<f64>,
    rng: ChaCha8Rng,
    generation: usize,
    /// Smallest covariance eigenvalue seen after any update.
    min_eigenvalue: f64,
    eigen_repairs: usize,
    pending: Vec<DVector<f64>>,
}

impl Cmaes {
    pub fn new(mean: Vec<f64>, sigma: f64, lambda: usize, seed: u64) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(Error::invalid("search space", "has no free coordinates"));
        }
        if lambda < 2 {
            return Err(Error::invalid("population size", format!("must be >= 2, got {lambda}")));
        }
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu).map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Ok(Cmaes {
            n,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            mean: DVector::from_vec(mean),
            sigma,
            cov: DMatrix::identity(n, n),
            p_c: DVector::zeros(n),
            p_sigma: DVector::zeros(n),
            basis: DMatrix::identity(n, n),
            axes: DVector::from_element(n, 1.0),
            rng: ChaCha8Rng::seed_from_u64(seed),
            generation: 0,
            min_eigenvalue: 1.0,
            eigen_repairs: 0,
            pending: Vec::new(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// Times an eigenvalue had to be floored to keep the covariance positive definite.
    pub fn eigen_repairs(&self) -> usize {
        self.eigen_repairs
    }

    /// Largest over smallest covariance eigenvalue.
    pub fn condition(&self) -> f64 {
        let max = self.axes.max();
        let min = self.axes.min();
        (max * max) / (min * min)
    }

    /// Samples one generation of candidates.
    pub fn ask(&mut self) -> Vec<Vec<f64>> {
        self.pending.clear();
        let mut out = Vec::with_capacity(self.lambda);
        for _ in 0..self.lambda {
            let z = DVector::from_fn(self.n, |_, _| StandardNormal.sample(&mut self.rng));
            let y = &self.basis * self.axes.component_mul(&z);
            let x = &self.mean + self.sigma * &y;
            out.push(x.as_slice().to_vec());
            self.pending.push(y);
        }
        out
    }

    /// Updates the distribution from the losses of the last [`Cmaes::ask`].
    /// Ties are broken by candidate index, so the update is deterministic.
    pub fn tell(&mut self, fitness: &[f64]) -> Result<()> {
        if fitness.len() != self.pending.len() || self.pending.is_empty() {
            return Err(Error::invalid(
                "cma-es update",
                format!("expected {} losses, got {}", self.pending.len(), fitness.len()),
            ));
        }
        let mut order: Vec<usize> = (0..fitness.len()).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));

        let mut y_w = DVector::zeros(self.n);
        for (w, &i) in self.weights.iter().zip(&order) {
            y_w += *w * &self.pending[i];
        }
        self.mean += self.sigma * &y_w;

        // C^{-1/2} y_w = B D^{-1} B^T y_w
        let inv_sqrt = &self.basis * (self.basis.transpose() * &y_w).component_div(&self.axes);
        self.p_sigma = (1.0 - self.c_sigma) * &self.p_sigma
            + (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt() * inv_sqrt;
        let g = (self.generation + 1) as f64;
        let ps_norm = self.p_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - self.c_sigma).powf(2.0 * g)).sqrt() / self.chi_n
            < 1.4 + 2.0 / (self.n as f64 + 1.0);
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.p_c = (1.0 - self.c_c) * &self.p_c + h * (self.c_c * (2.0 - self.c_c) * self.mu_eff).sqrt() * &y_w;

        let mut rank_mu = DMatrix::zeros(self.n, self.n);
        for (w, &i) in self.weights.iter().zip(&order) {
            let y = &self.pending[i];
            rank_mu += *w * y * y.transpose();
        }
        let delta_h = (1.0 - h) * self.c_c * (2.0 - self.c_c);
        self.cov = (1.0 - self.c_1 - self.c_mu) * &self.cov
            + self.c_1 * (&self.p_c * self.p_c.transpose() + delta_h * &self.cov)
            + self.c_mu * rank_mu;
        self.sigma *= ((self.c_sigma / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();
        self.generation += 1;
        self.pending.clear();
        self.decompose()
    }

    fn decompose(&mut self) -> Result<()> {
        // Symmetrise against rounding before the eigendecomposition.
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let mut values = eig.eigenvalues;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cma-es covariance", "non-finite eigenvalue"));
        }
        let min = values.min();
        self.min_eigenvalue = self.min_eigenvalue.min(min);
        let floor = values.max().abs() * 1e-14;
        if min <= floor {
            self.eigen_repairs += 1;
            values.apply(|v| *v = v.max(floor.max(f64::MIN_POSITIVE)));
        }
        self.basis = eig.eigenvectors;
        self.axes = values.map(f64::sqrt);
        let rebuilt = &self.basis * DMatrix::from_diagonal(&values) * self.basis.transpose();
        // Averaging with the transpose makes the stored matrix exactly symmetric.
        self.cov = (&rebuilt + rebuilt.transpose()) * 0.5;
        Ok(())
    }

    /// `sigma * max_i sqrt(C_ii)`.
    pub fn max_std(&self) -> f64 {
        self.sigma * self.cov.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.sqrt()))
    }

    pub fn mu(&self) -> usize {
        self.mu
    }
}

/// Outcome of [`minimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Smallest covariance eigenvalue seen over the run.
    pub min_eigenvalue: f64,
    pub eigen_repairs: usize,
    /// Best loss of each generation.
    pub history: Vec<f64>,
}

/// Tracks the stopping rules shared by [`minimize`] and the path optimizer.
pub(crate) struct Stopper {
    tol_fun: f64,
    tol_x: f64,
    stall: Option<usize>,
    max_iterations: usize,
    window: usize,
    recent: Vec<f64>,
    best: f64,
    best_at: usize,
}

impl Stopper {
    pub(crate) fn new(cfg: &CmaesConfig, n: usize, lambda: usize) -> Self {
        Stopper {
            tol_fun: cfg.tol_fun,
            tol_x: cfg.tol_x.unwrap_or(1e-11 * cfg.sigma0),
            stall: cfg.stall_iterations,
            max_iterations: cfg.max_iterations,
            window: 10 + (30 * n).div_ceil(lambda),
            recent: Vec::new(),
            best: f64::INFINITY,
            best_at: 0,
        }
    }

    /// Records one finished generation and says whether to stop.
    pub(crate) fn check(&mut self, es: &Cmaes, fitness: &[f64]) -> Option<Termination> {
        let gen_best = fitness.iter().copied().fold(f64::INFINITY, f64::min);
        let gen_worst = fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let it = es.generation();
        if !self.best.is_finite() || gen_best < self.best - 1e-9 * self.best.abs() {
            self.best_at = it;
        }
        self.best = self.best.min(gen_best);
        self.recent.push(gen_best);
        if self.recent.len() > self.window {
            self.recent.remove(0);
        }
        if it >= self.max_iterations {
            return Some(Termination::MaxIterations);
        }
        if self.recent.len() == self.window {
            let hi = self.recent.iter().copied().fold(gen_worst, f64::max);
            let lo = self.recent.iter().copied().fold(gen_best, f64::min);
            if hi - lo < self.tol_fun {
                return Some(Termination::TolFun);
            }
        }
        if es.max_std() < self.tol_x {
            return Some(Termination::TolX);
        }
        if es.condition() > 1e14 {
            return Some(Termination::ConditionCov);
        }
        if let Some(stall) = self.stall {
            if it - self.best_at >= stall {
                return Some(Termination::Stall);
            }
        }
        None
    }
}

/// Minimises `f` from `x0`. Candidates are evaluated one by one, in order.
pub fn minimize(f: impl Fn(&[f64]) -> f64, x0: Vec<f64>, cfg: &CmaesConfig) -> Result<Minimum> {
    cfg.validate()?;
    let n = x0.len();
    let mut es = Cmaes::new(x0, cfg.sigma0, cfg.lambda_for(n), cfg.seed)?;
    let mut stopper = Stopper::new(cfg, n, es.lambda());
    let (mut best_x, mut best) = (es.mean().to_vec(), f64::INFINITY);
    let mut history = Vec::new();
    let mut evaluations = 0;
    loop {
        let candidates = es.ask();
        let fitness: Vec<f64> = candidates.iter().map(|x| f(x)).collect();
        evaluations += fitness.len();
        let mut gen_best = f64::INFINITY;
        for (x, &v) in candidates.iter().zip(&fitness) {
            gen_best = gen_best.min(v);
            if v < best {
                best = v;
                best_x = x.clone();
            }
        }
        history.push(gen_best);
        es.tell(&fitness)?;
        if let Some(termination) = stopper.check(&es, &fitness) {
            return Ok(Minimum {
                x: best_x,
                value: best,
                iterations: es.generation(),
                evaluations,
                termination,
                min_eigenvalue: es.min_eigenvalue(),
                eigen_repairs: es.eigen_repairs(),
                history,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn default_constants_match_the_tutorial_for_n_10() {
        let es = Cmaes::new(vec![0.0; 10], 1.0, 10, 0).unwrap();
        assert_eq!(es.mu(), 5);
        // mu_eff for lambda = 10 is 3.1672...
        assert!((es.mu_eff - 3.167_299).abs() < 1e-5, "{}", es.mu_eff);
        assert!((es.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(es.weights.windows(2).all(|w| w[0] > w[1]));
        assert!((es.chi_n - 3.084_727).abs() < 1e-5, "{}", es.chi_n);
    }

    #[test]
    fn default_lambda() {
        let cfg = CmaesConfig::default();
        assert_eq!(cfg.lambda_for(12), 11);
        assert_eq!(cfg.lambda_for(20), 12);
        assert_eq!(cfg.lambda_for(2), 6);
    }

    #[test]
    fn sphere_20d_converges() {
        let cfg = CmaesConfig {
            sigma0: 1.0,
            seed: 7,
            ..Default::default()
        };
        let m = minimize(sphere, vec![3.0; 20], &cfg).unwrap();
        assert!(m.value < 1e-6, "{m:?}");
        assert!(m.iterations <= 1000);
        assert!(m.min_eigenvalue > 0.0);
        assert_eq!(m.eigen_repairs, 0);
    }

    #[test]
    fn same_seed_same_run() {
        let cfg = CmaesConfig {
            sigma0: 0.5,
            seed: 3,
            max_iterations: 50,
            ..Default::default()
        };
        let a = minimize(sphere, vec![1.0; 5], &cfg).unwrap();
        let b = minimize(sphere, vec![1.0; 5], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ellipsoid_learns_the_scaling() {
        let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| 10f64.powi(i as i32) * v * v).sum::<f64>();
        let cfg = CmaesConfig {
            sigma0: 1.0,
            seed: 1,
            ..Default::default()
        };
        let m = minimize(f, vec![1.0; 6], &cfg).unwrap();
        assert!(m.value < 1e-8, "{m:?}");
    }

    #[test]
    fn stall_stops_early_on_flat_function() {
        let cfg = CmaesConfig {
            stall_iterations: Some(5),
            tol_fun: 0.0,
            ..Default::default()
        };
        let m = minimize(|_| 1.0, vec![0.0; 3], &cfg).unwrap();
        assert_eq!(m.termination, Termination::Stall);
        assert_eq!(m.iterations, 6);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(CmaesConfig { sigma0: 0.0, ..Default::default() }.validate().is_err());
        assert!(CmaesConfig { population_size: Some(1), ..Default::default() }.validate().is_err());
        assert!(CmaesConfig { max_iterations: 0, ..Default::default() }.validate().is_err());
    }
}
