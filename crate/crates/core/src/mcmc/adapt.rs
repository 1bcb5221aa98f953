use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Robbins–Monro exponent of the adaptation gain `γ_t = t^-0.6`.
pub const GAIN_EXPONENT: f64 = 0.6;

/// One Robbins–Monro update `log δ' = log δ + γ_t (acc − target)`, `t ≥ 1`.
pub fn adapt_step(delta: f64, acc: f64, target: f64, t: usize) -> f64 {
    let gamma = (t.max(1) as f64).powf(-GAIN_EXPONENT);
    (delta.ln() + gamma * (acc - target)).exp()
}

/// Step size of one block with its adaptation clock.
#[derive(Debug, Clone, PartialEq)]
pub struct StepAdapter {
    pub delta: f64,
    pub target: f64,
    t: usize,
    frozen: bool,
    warned: bool,
}

impl StepAdapter {
    pub fn new(delta: f64, target: f64) -> Self {
        StepAdapter { delta, target, t: 0, frozen: false, warned: false }
    }

    /// Feeds one acceptance probability. After [`StepAdapter::freeze`] the
    /// step is left unchanged and a warning is logged once.
    pub fn update(&mut self, acc: f64) -> f64 {
        if self.frozen {
            if !self.warned {
                warn!("step-size adaptation requested after burn-in; step left at {}", self.delta);
                self.warned = true;
            }
            return self.delta;
        }
        self.t += 1;
        self.delta = adapt_step(self.delta, acc, self.target, self.t);
        self.delta
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Sets a new step and restarts the adaptation clock, for use after the
    /// proposal geometry changed. Ignored once frozen.
    pub fn restart(&mut self, delta: f64) {
        if !self.frozen {
            self.delta = delta;
            self.t = 0;
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }
}

/// Minimum number of stored points before the empirical covariance replaces
/// the initial diagonal proposal.
const COV_WARMUP: usize = 200;
/// Covariance refresh period during burn-in.
const COV_REFRESH: usize = 100;
/// Diagonal jitter keeping the learned covariance positive definite.
const COV_JITTER: f64 = 1e-10;

/// Gaussian random-walk proposal `y = x + δ L ε` whose shape `L Lᵀ` is
/// learned from the chain history while adaptation runs.
#[derive(Debug, Clone)]
pub struct RandomWalk {
    pub step: StepAdapter,
    lower: DMatrix<f64>,
    learn: bool,
    n: usize,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
    learned: bool,
}

impl RandomWalk {
    /// Isotropic proposal of scale `delta`; `learn_shape` enables covariance learning.
    pub fn new(dim: usize, delta: f64, target: f64, learn_shape: bool) -> Self {
        RandomWalk {
            step: StepAdapter::new(delta, target),
            lower: DMatrix::identity(dim, dim),
            learn: learn_shape,
            n: 0,
            mean: DVector::zeros(dim),
            scatter: DMatrix::zeros(dim, dim),
            learned: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn propose<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let eps = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = &self.lower * eps;
        x.iter().zip(z.iter()).map(|(a, b)| a + self.step.delta * b).collect()
    }

    /// Records the post-update point and adapts the step; no-op once frozen.
    pub fn adapt(&mut self, x: &[f64], acc: f64) {
        if self.step.is_frozen() {
            return;
        }
        self.step.update(acc);
        if !self.learn {
            return;
        }
        // Welford update of mean and scatter
        self.n += 1;
        let v = DVector::from_column_slice(x);
        let d = &v - &self.mean;
        self.mean += &d / self.n as f64;
        let d2 = &v - &self.mean;
        self.scatter += &d * d2.transpose();
        if self.n >= COV_WARMUP && self.n % COV_REFRESH == 0 {
            self.refresh_shape();
        }
    }

    fn refresh_shape(&mut self) {
        let dim = self.dim();
        let cov = &self.scatter / (self.n - 1) as f64 + DMatrix::identity(dim, dim) * COV_JITTER;
        if let Some(ch) = nalgebra::Cholesky::new(cov) {
            self.lower = ch.l();
            if !self.learned {
                // optimal random-walk scale for a Gaussian target
                self.step.delta = 2.38 / (dim as f64).sqrt();
                self.learned = true;
            }
        }
    }

    pub fn freeze(&mut self) {
        self.step.freeze();
    }
}
