use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{kkt_from_gradient, l1, mean_log_likelihood, soft_threshold, ModelSpec, Variant};
use crate::data::ObservationTable;
use crate::error::{Error, Result};
use crate::kernels::KernelOperator;
use crate::matrix::Matrix;
use crate::scalar::{sigmoid, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Relative objective change below which optimality is checked.
    pub rel_tolerance: f64,
    /// Optimality residual accepted as converged.
    pub kkt_tolerance: f64,
    /// Monotone momentum with function-value restarts.
    pub accelerate: bool,
    /// Optimality is also checked every this many iterations.
    pub check_interval: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 20_000,
            rel_tolerance: 1e-9,
            kkt_tolerance: 1e-6,
            accelerate: true,
            check_interval: 10,
        }
    }
}

/// Which coefficient blocks are free to move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Blocks {
    pub beta: bool,
    pub alpha: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    /// Final backtracking factor applied to the per-block `1/L` steps.
    pub step: f64,
    pub kkt: f64,
    pub objective: f64,
    /// Not serialized, so saved documents are reproducible byte for byte.
    #[serde(skip)]
    pub wall_time_secs: f64,
    pub converged: bool,
    /// First-stage (features only) diagnostics for sequential fits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1: Option<Box<Diagnostics>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    pub variant: Variant,
    pub lambda: f64,
    pub beta: Vec<T>,
    pub alpha: Vec<T>,
    pub feature_names: Vec<String>,
    /// Ids of the training observations, aligned with `alpha`.
    pub train_ids: Vec<String>,
    pub objective: T,
    pub diagnostics: Diagnostics,
}

impl<T: Scalar> FitResult<T> {
    /// Training observations with nonzero kernel coefficients.
    pub fn representative_ids(&self) -> Vec<String> {
        self.alpha
            .iter()
            .zip(&self.train_ids)
            .filter(|(a, _)| **a != T::zero())
            .map(|(_, id)| id.clone())
            .collect()
    }

    pub fn n_representatives(&self) -> usize {
        self.alpha.iter().filter(|a| **a != T::zero()).count()
    }
}

struct Engine<'a, T: Scalar> {
    phi: &'a Matrix<T>,
    kernel: Option<&'a dyn KernelOperator<T>>,
    y: &'a [T],
    lambda: T,
    blocks: Blocks,
    inv_n: T,
}

#[derive(Clone)]
struct Point<T> {
    beta: Vec<T>,
    alpha: Vec<T>,
    eta: Vec<T>,
}

impl<'a, T: Scalar> Engine<'a, T> {
    fn eta(&self, beta: &[T], alpha: &[T]) -> Vec<T> {
        let mut eta = vec![T::zero(); self.y.len()];
        if beta.iter().any(|b| *b != T::zero()) {
            self.phi.mul_vec_into(beta, &mut eta);
        }
        if let Some(k) = self.kernel {
            if alpha.iter().any(|a| *a != T::zero()) {
                let mut ka = vec![T::zero(); eta.len()];
                k.mul_vec_into(alpha, &mut ka);
                for (e, v) in eta.iter_mut().zip(ka) {
                    *e += v;
                }
            }
        }
        eta
    }

    fn point(&self, beta: Vec<T>, alpha: Vec<T>) -> Point<T> {
        let eta = self.eta(&beta, &alpha);
        Point { beta, alpha, eta }
    }

    fn smooth(&self, eta: &[T]) -> T {
        mean_log_likelihood(eta, self.y)
    }

    fn total(&self, p: &Point<T>) -> T {
        self.smooth(&p.eta) - self.lambda * l1(&p.alpha)
    }

    /// Gradient of the smooth part restricted to the free blocks.
    fn gradient(&self, eta: &[T], nb: usize, na: usize) -> (Vec<T>, Vec<T>) {
        let r: Vec<T> = eta
            .iter()
            .zip(self.y)
            .map(|(&e, &y)| (y - sigmoid(e)) * self.inv_n)
            .collect();
        let gb = if self.blocks.beta {
            self.phi.tr_mul_vec(&r)
        } else {
            vec![T::zero(); nb]
        };
        let mut ga = vec![T::zero(); na];
        if self.blocks.alpha {
            if let Some(k) = self.kernel {
                k.tr_mul_vec_into(&r, &mut ga);
            }
        }
        (gb, ga)
    }

    fn kkt(&self, p: &Point<T>) -> T {
        let (gb, ga) = self.gradient(&p.eta, p.beta.len(), p.alpha.len());
        kkt_from_gradient(&gb, &p.alpha, &ga, self.lambda, self.blocks)
    }

    /// Largest eigenvalue of `AᵀA / 4n` for `A = Φ` (`on_beta`) or `A = K`.
    fn lipschitz(&self, nb: usize, na: usize, on_beta: bool) -> T {
        let (mut vb, mut va) = (
            vec![if on_beta { T::one() } else { T::zero() }; nb],
            vec![if !on_beta && self.kernel.is_some() { T::one() } else { T::zero() }; na],
        );
        let mut estimate = T::zero();
        for _ in 0..30 {
            let norm = (vb.iter().chain(&va).map(|v| *v * *v).sum::<T>()).sqrt();
            if norm == T::zero() {
                return T::zero();
            }
            vb.iter_mut().chain(va.iter_mut()).for_each(|v| *v /= norm);
            let av = self.eta(&vb, &va);
            let mut gb = if on_beta { self.phi.tr_mul_vec(&av) } else { vec![T::zero(); nb] };
            let mut ga = vec![T::zero(); na];
            if !on_beta {
                if let Some(k) = self.kernel {
                    k.tr_mul_vec_into(&av, &mut ga);
                }
            }
            estimate = av.iter().map(|v| *v * *v).sum::<T>();
            std::mem::swap(&mut vb, &mut gb);
            std::mem::swap(&mut va, &mut ga);
        }
        estimate * self.inv_n * T::lit(0.25)
    }

    /// Step `t·scale` per block, i.e. a gradient step in the block-diagonal metric.
    fn prox_step(&self, y: &Point<T>, gb: &[T], ga: &[T], t: T, scale: (T, T)) -> Point<T> {
        let beta = if self.blocks.beta {
            let t = t * scale.0;
            y.beta.iter().zip(gb).map(|(&b, &g)| b + t * g).collect()
        } else {
            y.beta.clone()
        };
        let alpha = if self.blocks.alpha {
            let t = t * scale.1;
            let thr = t * self.lambda;
            y.alpha
                .iter()
                .zip(ga)
                .map(|(&a, &g)| soft_threshold(a + t * g, thr))
                .collect()
        } else {
            y.alpha.clone()
        };
        self.point(beta, alpha)
    }
}

fn combine<T: Scalar>(z: &[T], x: &[T], c: T) -> Vec<T> {
    z.iter().zip(x).map(|(&a, &b)| a + c * (a - b)).collect()
}

/// Maximizes the penalized likelihood over the free blocks by proximal
/// gradient ascent with backtracking, starting from `(beta0, alpha0)`.
///
/// Returns `(beta, alpha, objective, diagnostics)`.
#[allow(clippy::too_many_arguments)]
pub fn proximal_ascent<T: Scalar>(
    features: &Matrix<T>,
    kernel: Option<&dyn KernelOperator<T>>,
    outcomes: &[T],
    lambda: T,
    blocks: Blocks,
    beta0: Vec<T>,
    alpha0: Vec<T>,
    config: &SolverConfig,
) -> Result<(Vec<T>, Vec<T>, T, Diagnostics)> {
    let start = Instant::now();
    let n = outcomes.len();
    if features.nrows() != n || beta0.len() != features.ncols() {
        return Err(Error::Dimension(format!(
            "feature block {}x{} with {} outcomes and {} coefficients",
            features.nrows(),
            features.ncols(),
            n,
            beta0.len()
        )));
    }
    match kernel {
        Some(k) if k.nrows() != n || k.ncols() != alpha0.len() => {
            return Err(Error::Dimension(format!(
                "kernel block {}x{} with {} outcomes and {} coefficients",
                k.nrows(),
                k.ncols(),
                n,
                alpha0.len()
            )))
        }
        None if blocks.alpha && !alpha0.is_empty() => {
            return Err(Error::Dimension("kernel coefficients are free but no kernel was given".into()))
        }
        _ => {}
    }
    if lambda < T::zero() {
        return Err(Error::Config("lambda must be nonnegative".into()));
    }
    let engine = Engine {
        phi: features,
        kernel,
        y: outcomes,
        lambda,
        blocks,
        inv_n: T::one() / T::from_usize_lossy(n.max(1)),
    };
    let (nb, na) = (beta0.len(), alpha0.len());
    // Each block gets its own curvature scale; backtracking on the shared
    // factor `t` absorbs the coupling between blocks.
    let inverse = |l: T| if l > T::zero() { T::one() / l } else { T::one() };
    let scale = (
        if blocks.beta { inverse(engine.lipschitz(nb, na, true)) } else { T::one() },
        if blocks.alpha && kernel.is_some() { inverse(engine.lipschitz(nb, na, false)) } else { T::one() },
    );
    let t0 = T::one();
    let t_floor = t0 * T::lit(1e-20);
    let slack_scale = T::lit(1e-12).max(T::epsilon() * T::lit(16.0));
    let rel_tol = T::lit(config.rel_tolerance);
    let kkt_tol = T::lit(config.kkt_tolerance);

    let mut x = engine.point(beta0, alpha0);
    let mut fx = engine.total(&x);
    if !fx.is_finite() {
        return Err(Error::Divergence { iteration: 0 });
    }
    let mut y = x.clone();
    let mut y_is_x = true;
    let mut theta = T::one();
    let mut t = t0;
    let mut kkt = T::nan();
    let mut converged = false;
    let mut iterations = 0;

    if !blocks.beta && (!blocks.alpha || kernel.is_none()) {
        // nothing is free
        kkt = T::zero();
        converged = true;
    }

    while !converged && iterations < config.max_iterations {
        iterations += 1;
        let f_y = engine.smooth(&y.eta);
        let (gb, ga) = engine.gradient(&y.eta, nb, na);
        let slack = slack_scale * T::one().max(f_y.abs());
        let mut stalled = false;
        let (z, f_z) = loop {
            let z = engine.prox_step(&y, &gb, &ga, t, scale);
            let f_z = engine.smooth(&z.eta);
            let mut lin = T::zero();
            let mut sq = T::zero();
            for ((&a, &b), &g) in z.beta.iter().zip(&y.beta).zip(&gb) {
                lin += g * (a - b);
                sq += (a - b) * (a - b) / scale.0;
            }
            for ((&a, &b), &g) in z.alpha.iter().zip(&y.alpha).zip(&ga) {
                lin += g * (a - b);
                sq += (a - b) * (a - b) / scale.1;
            }
            if f_z.is_finite() && f_z >= f_y + lin - sq / (T::lit(2.0) * t) - slack {
                break (z, f_z);
            }
            t /= T::lit(2.0);
            if t < t_floor {
                stalled = true;
                break (z, f_z);
            }
        };
        if stalled {
            kkt = engine.kkt(&x);
            converged = kkt <= kkt_tol;
            break;
        }
        let f_total = f_z - lambda * l1(&z.alpha);
        if !f_total.is_finite() {
            return Err(Error::Divergence { iteration: iterations });
        }
        let previous = fx;
        if f_total >= fx {
            if config.accelerate {
                let theta_next = (T::one() + (T::one() + T::lit(4.0) * theta * theta).sqrt()) / T::lit(2.0);
                let c = (theta - T::one()) / theta_next;
                y = Point {
                    beta: combine(&z.beta, &x.beta, c),
                    alpha: combine(&z.alpha, &x.alpha, c),
                    eta: combine(&z.eta, &x.eta, c),
                };
                theta = theta_next;
                y_is_x = c == T::zero();
            } else {
                y = z.clone();
                y_is_x = true;
            }
            x = z;
            fx = f_total;
        } else {
            // No ascent: drop momentum; if already at x, shorten the step.
            if y_is_x {
                t /= T::lit(2.0);
            }
            theta = T::one();
            y = x.clone();
            y_is_x = true;
        }
        let rel = (fx - previous).abs() / T::one().max(fx.abs());
        if rel < rel_tol || iterations % config.check_interval.max(1) == 0 {
            kkt = engine.kkt(&x);
            if kkt <= kkt_tol {
                converged = true;
            }
        }
    }
    if kkt.is_nan() {
        kkt = engine.kkt(&x);
    }
    let diagnostics = Diagnostics {
        iterations,
        step: t.as_f64(),
        kkt: kkt.as_f64(),
        objective: fx.as_f64(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        converged,
        stage1: None,
    };
    Ok((x.beta, x.alpha, fx, diagnostics))
}

/// Fits `spec` on `train` from a cold start. `kernel` must be the
/// training-by-training block when the variant uses a kernel.
pub fn fit<T: Scalar>(
    spec: &ModelSpec,
    train: &ObservationTable<T>,
    kernel: Option<&dyn KernelOperator<T>>,
    config: &SolverConfig,
) -> Result<FitResult<T>> {
    fit_warm(spec, train, kernel, config, None)
}

/// As [`fit`], starting the penalized stage from `warm` when given. The
/// features-only first stage of a sequential fit always starts cold.
pub fn fit_warm<T: Scalar>(
    spec: &ModelSpec,
    train: &ObservationTable<T>,
    kernel: Option<&dyn KernelOperator<T>>,
    config: &SolverConfig,
    warm: Option<&FitResult<T>>,
) -> Result<FitResult<T>> {
    spec.validate_variant()?;
    let n = train.len();
    let m = train.features().ncols();
    let y = train.outcomes_scalar();
    let lambda = T::lit(spec.lambda);
    let kernel = if spec.variant.uses_kernel() {
        let k = kernel.ok_or_else(|| Error::Config(format!("{} requires a kernel block", spec.variant.name())))?;
        if k.nrows() != n || k.ncols() != n {
            return Err(Error::Dimension(format!(
                "training kernel is {}x{} for {n} observations",
                k.nrows(),
                k.ncols()
            )));
        }
        if (!k.col_ids().is_empty() && k.col_ids() != train.ids())
            || (!k.row_ids().is_empty() && k.row_ids() != train.ids())
        {
            return Err(Error::Dimension("kernel ids do not match the training table".into()));
        }
        Some(k)
    } else {
        None
    };
    let fixed_beta = match &spec.fixed_beta {
        Some(b) if spec.variant == Variant::Klr => {
            let _ = b;
            return Err(Error::Config("KLR has no feature coefficients to fix".into()));
        }
        Some(b) if b.len() != m => {
            return Err(Error::Dimension(format!(
                "{} fixed coefficients for {m} feature columns",
                b.len()
            )))
        }
        Some(b) => Some(b.iter().map(|&v| T::lit(v)).collect::<Vec<T>>()),
        None => None,
    };
    let warm_alpha = |len: usize| -> Vec<T> {
        match warm {
            Some(w) if w.alpha.len() == len => w.alpha.clone(),
            _ => vec![T::zero(); len],
        }
    };
    let warm_beta = || -> Vec<T> {
        match warm {
            Some(w) if w.beta.len() == m => w.beta.clone(),
            _ => vec![T::zero(); m],
        }
    };

    let (beta, alpha, objective, diagnostics) = match spec.variant {
        Variant::Lr => {
            let blocks = Blocks {
                beta: fixed_beta.is_none(),
                alpha: false,
            };
            let b0 = fixed_beta.unwrap_or_else(|| vec![T::zero(); m]);
            let (b, _, obj, d) = proximal_ascent(train.features(), None, &y, lambda, blocks, b0, vec![], config)?;
            (b, vec![T::zero(); n], obj, d)
        }
        Variant::Klr => proximal_ascent(
            train.features(),
            kernel,
            &y,
            lambda,
            Blocks {
                beta: false,
                alpha: true,
            },
            vec![T::zero(); m],
            warm_alpha(n),
            config,
        )?,
        Variant::HfsmSeq => {
            let (b, stage1) = match fixed_beta {
                Some(b) => (b, None),
                None => {
                    let (b, _, _, d) = proximal_ascent(
                        train.features(),
                        None,
                        &y,
                        T::zero(),
                        Blocks {
                            beta: true,
                            alpha: false,
                        },
                        vec![T::zero(); m],
                        vec![],
                        config,
                    )?;
                    (b, Some(Box::new(d)))
                }
            };
            let (b, a, obj, mut d) = proximal_ascent(
                train.features(),
                kernel,
                &y,
                lambda,
                Blocks {
                    beta: false,
                    alpha: true,
                },
                b,
                warm_alpha(n),
                config,
            )?;
            d.stage1 = stage1;
            (b, a, obj, d)
        }
        Variant::HfsmSim => {
            let blocks = Blocks {
                beta: fixed_beta.is_none(),
                alpha: true,
            };
            let b0 = fixed_beta.unwrap_or_else(warm_beta);
            proximal_ascent(train.features(), kernel, &y, lambda, blocks, b0, warm_alpha(n), config)?
        }
    };
    Ok(FitResult {
        variant: spec.variant,
        lambda: spec.lambda,
        beta,
        alpha,
        feature_names: train.feature_names().to_vec(),
        train_ids: train.ids().to_vec(),
        objective,
        diagnostics,
    })
}
