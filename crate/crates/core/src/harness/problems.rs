//! Deterministic test objectives with closed-form gradients.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optim::ParamSpec;
use crate::rng::{derive_seed, SeededRng};

/// A differentiable objective over a fixed list of matrix parameters.
pub trait Problem: Send + Sync {
    fn name(&self) -> &str;
    fn param_specs(&self) -> Vec<ParamSpec>;
    fn initial_params(&self) -> Vec<Matrix>;
    fn loss(&self, params: &[Matrix]) -> Result<f64>;
    fn grads(&self, params: &[Matrix]) -> Result<Vec<Matrix>>;

    /// Standard deviation of additive Gaussian gradient noise; zero disables it.
    fn noise_std(&self) -> f64 {
        0.0
    }

    fn noise_seed(&self) -> u64 {
        0
    }
}

/// Gradients at `params` for step `step`, including the problem's seeded noise.
pub fn step_grads(problem: &dyn Problem, params: &[Matrix], step: u64) -> Result<Vec<Matrix>> {
    let grads = problem.grads(params)?;
    let std = problem.noise_std();
    if std == 0.0 {
        return Ok(grads);
    }
    let mut rng = SeededRng::new(derive_seed(problem.noise_seed(), step));
    grads
        .into_iter()
        .map(|g| {
            let noise = rng.normal_matrix(g.rows(), g.cols(), std);
            g.add(&noise)
        })
        .collect()
}

fn check_arity(params: &[Matrix], specs: &[ParamSpec]) -> Result<()> {
    if params.len() != specs.len() {
        return Err(Error::Argument(format!(
            "expected {} parameters, got {}",
            specs.len(),
            params.len()
        )));
    }
    for (p, s) in params.iter().zip(specs) {
        if p.shape() != s.shape.dims() {
            return Err(Error::Shape {
                op: "problem parameters",
                left: s.shape.dims(),
                right: p.shape(),
            });
        }
    }
    Ok(())
}

/// `f(θ) = ½⟨θ, H∘θ⟩` with a fixed positive curvature field `H`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    curvature: Matrix,
    theta0: Matrix,
}

/// Curvatures are log-spaced over `[1, condition]` and shuffled by `seed`;
/// the starting point is standard normal.
pub fn quadratic_problem(p: usize, q: usize, condition: f64, seed: u64) -> Result<QuadraticProblem> {
    if !(condition >= 1.0) || !condition.is_finite() {
        return Err(Error::Argument(format!("condition must be >= 1, got {condition}")));
    }
    let n = p * q;
    let mut values: Vec<f64> = (0..n)
        .map(|k| {
            if n == 1 {
                1.0
            } else {
                condition.powf(k as f64 / (n - 1) as f64)
            }
        })
        .collect();
    SeededRng::new(derive_seed(seed, 0)).shuffle(&mut values);
    let curvature = Matrix::from_vec(p, q, values)?;
    let theta0 = SeededRng::new(derive_seed(seed, 1)).normal_matrix(p, q, 1.0);
    Ok(QuadraticProblem { curvature, theta0 })
}

impl QuadraticProblem {
    pub fn curvature(&self) -> &Matrix {
        &self.curvature
    }
}

impl Problem for QuadraticProblem {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn param_specs(&self) -> Vec<ParamSpec> {
        let (p, q) = self.curvature.shape();
        vec![ParamSpec::matrix("theta", p, q)]
    }

    fn initial_params(&self) -> Vec<Matrix> {
        vec![self.theta0.clone()]
    }

    fn loss(&self, params: &[Matrix]) -> Result<f64> {
        check_arity(params, &self.param_specs())?;
        let t = &params[0];
        Ok(0.5 * t.dot(&self.curvature.hadamard(t)?)?)
    }

    fn grads(&self, params: &[Matrix]) -> Result<Vec<Matrix>> {
        check_arity(params, &self.param_specs())?;
        Ok(vec![self.curvature.hadamard(&params[0])?])
    }
}

/// `f(θ) = ½‖θ − M*‖²_F` with a hidden rank-`k` target `M* = U·C·Vᵀ`.
#[derive(Debug, Clone)]
pub struct SensingProblem {
    target: Matrix,
    true_rank: usize,
    noise_std: f64,
    noise_seed: u64,
}

/// Orthonormal `U`, `V` from Gram–Schmidt on Gaussian draws and a diagonal
/// `C` with entries uniform in `[1, 3]`. Starts from `θ = 0`.
pub fn low_rank_sensing_problem(
    p: usize,
    q: usize,
    true_rank: usize,
    noise_std: f64,
    seed: u64,
) -> Result<SensingProblem> {
    if true_rank == 0 || true_rank > p.min(q) {
        return Err(Error::Argument(format!(
            "true_rank must lie in 1..={}, got {true_rank}",
            p.min(q)
        )));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::Argument(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let mut rng = SeededRng::new(derive_seed(seed, 0));
    let u = orthonormal_columns(&rng.normal_matrix(p, true_rank, 1.0));
    let v = orthonormal_columns(&rng.normal_matrix(q, true_rank, 1.0));
    let c: Vec<f64> = (0..true_rank).map(|_| rng.uniform_range(1.0, 3.0)).collect();
    let target = u.matmul(&Matrix::diag(&c))?.matmul_t(&v)?;
    Ok(SensingProblem {
        target,
        true_rank,
        noise_std,
        noise_seed: derive_seed(seed, 1),
    })
}

fn orthonormal_columns(x: &Matrix) -> Matrix {
    let (p, k) = x.shape();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let mut c = x.col(j);
        for _ in 0..2 {
            for prev in &cols {
                let d: f64 = c.iter().zip(prev).map(|(a, b)| a * b).sum();
                c.iter_mut().zip(prev).for_each(|(a, b)| *a -= d * b);
            }
        }
        let n = c.iter().map(|a| a * a).sum::<f64>().sqrt();
        cols.push(c.into_iter().map(|a| a / n).collect());
    }
    Matrix::from_fn(p, k, |i, j| cols[j][i])
}

impl SensingProblem {
    pub fn target(&self) -> &Matrix {
        &self.target
    }

    pub fn true_rank(&self) -> usize {
        self.true_rank
    }
}

impl Problem for SensingProblem {
    fn name(&self) -> &str {
        "sensing"
    }

    fn param_specs(&self) -> Vec<ParamSpec> {
        let (p, q) = self.target.shape();
        vec![ParamSpec::matrix("theta", p, q)]
    }

    fn initial_params(&self) -> Vec<Matrix> {
        let (p, q) = self.target.shape();
        vec![Matrix::zeros(p, q)]
    }

    fn loss(&self, params: &[Matrix]) -> Result<f64> {
        check_arity(params, &self.param_specs())?;
        let r = params[0].sub(&self.target)?;
        Ok(0.5 * r.dot(&r)?)
    }

    fn grads(&self, params: &[Matrix]) -> Result<Vec<Matrix>> {
        check_arity(params, &self.param_specs())?;
        Ok(vec![params[0].sub(&self.target)?])
    }

    fn noise_std(&self) -> f64 {
        self.noise_std
    }

    fn noise_seed(&self) -> u64 {
        self.noise_seed
    }
}

/// Two-layer `tanh(X·W₁)·W₂` classifier with mean softmax cross-entropy.
#[derive(Debug, Clone)]
pub struct MlpProblem {
    inputs: Matrix,
    labels: Vec<usize>,
    classes: usize,
    hidden: usize,
    init: Vec<Matrix>,
}

/// Gaussian blobs: class centres `N(0, 2²)`, samples `centre + N(0, 1)`,
/// labels assigned round-robin.
pub fn tiny_mlp_problem(
    input_dim: usize,
    hidden_dim: usize,
    classes: usize,
    n_samples: usize,
    seed: u64,
) -> Result<MlpProblem> {
    for (field, v) in [
        ("input_dim", input_dim),
        ("hidden_dim", hidden_dim),
        ("classes", classes),
        ("n_samples", n_samples),
    ] {
        if v == 0 || (field != "n_samples" && v > 256) {
            return Err(Error::Argument(format!("{field} must lie in 1..=256, got {v}")));
        }
    }
    if classes < 2 {
        return Err(Error::Argument("classes must be at least 2".into()));
    }
    let mut rng = SeededRng::new(derive_seed(seed, 0));
    let centres = rng.normal_matrix(classes, input_dim, 2.0);
    let labels: Vec<usize> = (0..n_samples).map(|i| i % classes).collect();
    let inputs = Matrix::from_fn(n_samples, input_dim, |i, j| {
        centres.get(labels[i], j) + rng.standard_normal()
    });
    MlpProblem::from_data(inputs, labels, classes, hidden_dim, derive_seed(seed, 1))
}

impl MlpProblem {
    /// Builds the problem from explicit data; `W₁ ~ N(0, 1/d)`, `W₂ ~ N(0, 1/h)`.
    pub fn from_data(
        inputs: Matrix,
        labels: Vec<usize>,
        classes: usize,
        hidden: usize,
        init_seed: u64,
    ) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(Error::Argument("one label per input row required".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Argument(format!("label {bad} out of range for {classes} classes")));
        }
        let d = inputs.cols();
        let mut rng = SeededRng::new(init_seed);
        let w1 = rng.normal_matrix(d, hidden, 1.0 / (d as f64).sqrt());
        let w2 = rng.normal_matrix(hidden, classes, 1.0 / (hidden as f64).sqrt());
        Ok(Self {
            inputs,
            labels,
            classes,
            hidden,
            init: vec![w1, w2],
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    /// Hidden activations and row-wise softmax probabilities.
    fn forward(&self, params: &[Matrix]) -> Result<(Matrix, Matrix)> {
        check_arity(params, &self.param_specs())?;
        let hidden = self.inputs.matmul(&params[0])?.map(f64::tanh);
        let logits = hidden.matmul(&params[1])?;
        let c = self.classes;
        let mut probs = vec![0.0; logits.rows() * c];
        for i in 0..logits.rows() {
            let row = logits.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            for j in 0..c {
                probs[i * c + j] = (row[j] - max).exp() / z;
            }
        }
        Ok((hidden, Matrix::from_vec(logits.rows(), c, probs)?))
    }
}

impl Problem for MlpProblem {
    fn name(&self) -> &str {
        "mlp"
    }

    fn param_specs(&self) -> Vec<ParamSpec> {
        vec![
            ParamSpec::matrix("w1", self.inputs.cols(), self.hidden),
            ParamSpec::matrix("w2", self.hidden, self.classes),
        ]
    }

    fn initial_params(&self) -> Vec<Matrix> {
        self.init.clone()
    }

    fn loss(&self, params: &[Matrix]) -> Result<f64> {
        check_arity(params, &self.param_specs())?;
        let hidden = self.inputs.matmul(&params[0])?.map(f64::tanh);
        let logits = hidden.matmul(&params[1])?;
        let n = logits.rows();
        let mut total = 0.0;
        for i in 0..n {
            let row = logits.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[self.labels[i]];
        }
        Ok(total / n as f64)
    }

    fn grads(&self, params: &[Matrix]) -> Result<Vec<Matrix>> {
        let (hidden, probs) = self.forward(params)?;
        let n = probs.rows();
        // dL/dlogits = (softmax − onehot) / n
        let d_logits = Matrix::from_fn(n, self.classes, |i, j| {
            let y = if self.labels[i] == j { 1.0 } else { 0.0 };
            (probs.get(i, j) - y) / n as f64
        });
        let g2 = hidden.t_matmul(&d_logits)?;
        let d_hidden = d_logits.matmul_t(&params[1])?;
        let d_pre = d_hidden.zip_map(&hidden, "mlp backprop", |d, h| d * (1.0 - h * h))?;
        let g1 = self.inputs.t_matmul(&d_pre)?;
        Ok(vec![g1, g2])
    }
}

/// Worst relative error between `grads` and central finite differences of
/// `loss` over `points` random perturbations of the initial parameters.
pub fn gradient_self_test(problem: &dyn Problem, points: usize, seed: u64) -> Result<f64> {
    let h = 1e-5;
    let mut rng = SeededRng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let params: Vec<Matrix> = problem
            .initial_params()
            .iter()
            .map(|p| p.add(&rng.normal_matrix(p.rows(), p.cols(), 0.5)))
            .collect::<Result<_>>()?;
        let analytic = problem.grads(&params)?;
        let mut diff_sq = 0.0;
        let mut norm_sq = 0.0;
        for (k, g) in analytic.iter().enumerate() {
            for i in 0..g.rows() {
                for j in 0..g.cols() {
                    let mut plus = params.clone();
                    plus[k].set(i, j, params[k].get(i, j) + h);
                    let mut minus = params.clone();
                    minus[k].set(i, j, params[k].get(i, j) - h);
                    let fd = (problem.loss(&plus)? - problem.loss(&minus)?) / (2.0 * h);
                    diff_sq += (fd - g.get(i, j)).powi(2);
                    norm_sq += g.get(i, j).powi(2);
                }
            }
        }
        let rel = diff_sq.sqrt() / norm_sq.sqrt().max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
