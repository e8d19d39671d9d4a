//! First-order bi-level optimization.
//!
//! For each task the inner loop adapts a private copy of the parameters on
//! the support set, `θ′ = θ − α ∇[L(θ; support) + λ‖θ‖²]` (repeated
//! `n_inner` times). The outer step evaluates the gradient of the query
//! objective at `θ′`, treats the adaptation Jacobian as the identity, averages
//! over tasks and moves `θ ← θ − β · mean_task ∇L_meta(θ′)`.
//!
//! The query objective used for the gradient is the *mean* NF loss over the
//! query set plus `λ‖θ′‖²`; [`meta_objective`] reports the summed form.

use alloc::vec::Vec;

use crate::flow::FlowModel;
use crate::ndgrad::Tensor;
use crate::rng::{self, mix};
use crate::{Error, Result};

/// Parameterised model trainable by the bi-level loop.
pub trait MetaModel: Clone {
    /// Mean per-sample loss over `batch` plus `λ‖θ‖²`, with its gradient.
    fn value_and_grad(&self, batch: &[&[f64]], lambda: f64) -> Result<(f64, Vec<Tensor>)>;
    /// Summed per-sample loss over `batch` (no regularization).
    fn loss_sum(&self, batch: &[&[f64]]) -> Result<f64>;
    fn param_sq_norm(&self) -> f64;
    /// `θ ← θ + scale · direction`.
    fn apply_update(&mut self, scale: f64, direction: &[Tensor]);
}

impl MetaModel for FlowModel {
    fn value_and_grad(&self, batch: &[&[f64]], lambda: f64) -> Result<(f64, Vec<Tensor>)> {
        FlowModel::value_and_grad(self, batch, lambda)
    }

    fn loss_sum(&self, batch: &[&[f64]]) -> Result<f64> {
        batch.iter().map(|u| self.nf_loss(u)).sum()
    }

    fn param_sq_norm(&self) -> f64 {
        FlowModel::param_sq_norm(self)
    }

    fn apply_update(&mut self, scale: f64, direction: &[Tensor]) {
        FlowModel::apply_update(self, scale, direction)
    }
}

/// Disjoint support/query split, as indices into the pool passed to [`sample_tasks`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub support: Vec<usize>,
    pub query: Vec<usize>,
    pub seed: u64,
}

impl Task {
    pub fn rows<'a, R: AsRef<[f64]>>(&self, data: &'a [R]) -> (Vec<&'a [f64]>, Vec<&'a [f64]>) {
        (
            self.support.iter().map(|&i| data[i].as_ref()).collect(),
            self.query.iter().map(|&i| data[i].as_ref()).collect(),
        )
    }
}

/// `count` seeded random partitions of `pool` into support and query parts.
pub fn sample_tasks(pool: &[usize], count: usize, support_frac: f64, seed: u64) -> Result<Vec<Task>> {
    if pool.len() < 2 {
        return Err(Error::TooFewSamples {
            context: "sample_tasks (one support and one query sample per task)",
            needed: 2,
            found: pool.len(),
        });
    }
    if !(support_frac > 0.0 && support_frac < 1.0) {
        return Err(Error::InvalidArgument(
            "support fraction must lie strictly between 0 and 1".into(),
        ));
    }
    let n = pool.len();
    let n_support = (libm::round(support_frac * n as f64) as usize).clamp(1, n - 1);
    (0..count)
        .map(|i| {
            let task_seed = mix(seed, i as u64);
            let mut order = pool.to_vec();
            rng::shuffle(&mut rng::seeded(task_seed), &mut order);
            let query = order.split_off(n_support);
            Ok(Task {
                support: order,
                query,
                seed: task_seed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaState<M> {
    pub model: M,
    pub alpha: f64,
    pub beta: f64,
    pub n_inner: usize,
    pub tasks_per_batch: usize,
}

impl<M: MetaModel> MetaState<M> {
    pub fn new(model: M, alpha: f64, beta: f64, n_inner: usize, tasks_per_batch: usize) -> Result<Self> {
        if !(alpha > 0.0) || !(beta >= 0.0) || n_inner == 0 || tasks_per_batch == 0 {
            return Err(Error::InvalidArgument(
                "meta state needs α > 0, β ≥ 0, n_inner ≥ 1, T ≥ 1".into(),
            ));
        }
        Ok(MetaState {
            model,
            alpha,
            beta,
            n_inner,
            tasks_per_batch,
        })
    }
}

/// Per-outer-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterReport {
    /// Mean over tasks of the mean-reduced query objective at `θ′`.
    pub objective: f64,
    pub grad_norm: f64,
    pub lambda: f64,
}

fn check_finite(grads: &[Tensor], context: &'static str) -> Result<()> {
    if grads.iter().all(|g| g.all_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { context })
    }
}

/// `n_inner` gradient steps from `model` on `support`; `model` is not modified.
pub fn inner_step<M: MetaModel>(model: &M, support: &[&[f64]], alpha: f64, lambda: f64, n_inner: usize) -> Result<M> {
    if support.is_empty() {
        return Err(Error::TooFewSamples {
            context: "inner_step support set",
            needed: 1,
            found: 0,
        });
    }
    let mut adapted = model.clone();
    for _ in 0..n_inner {
        let (_, grads) = adapted.value_and_grad(support, lambda)?;
        check_finite(&grads, "inner-loop gradient")?;
        adapted.apply_update(-alpha, &grads);
    }
    Ok(adapted)
}

/// `Σ_query L(x | θ′) + λ‖θ′‖²`.
pub fn meta_objective<M: MetaModel>(adapted: &M, query: &[&[f64]], lambda: f64) -> Result<f64> {
    if query.is_empty() {
        return Err(Error::TooFewSamples {
            context: "meta_objective query set",
            needed: 1,
            found: 0,
        });
    }
    Ok(adapted.loss_sum(query)? + lambda * adapted.param_sq_norm())
}

/// One first-order meta-update over `tasks`, each given as `(support, query)` rows.
pub fn outer_step<M: MetaModel>(
    state: &mut MetaState<M>,
    tasks: &[(Vec<&[f64]>, Vec<&[f64]>)],
    lambda: f64,
) -> Result<OuterReport> {
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("outer step needs at least one task".into()));
    }
    let mut mean_grad: Option<Vec<Tensor>> = None;
    let mut objective = 0.0;
    let w = 1.0 / tasks.len() as f64;
    for (support, query) in tasks {
        if query.is_empty() {
            return Err(Error::TooFewSamples {
                context: "outer_step query set",
                needed: 1,
                found: 0,
            });
        }
        let adapted = inner_step(&state.model, support, state.alpha, lambda, state.n_inner)?;
        let (value, grads) = adapted.value_and_grad(query, lambda)?;
        check_finite(&grads, "meta gradient")?;
        objective += w * value;
        match &mut mean_grad {
            None => {
                let mut g = grads;
                g.iter_mut().for_each(|t| t.data_mut().iter_mut().for_each(|x| *x *= w));
                mean_grad = Some(g);
            }
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.axpy(w, g);
                }
            }
        }
    }
    let grad = mean_grad.expect("non-empty tasks");
    let grad_norm = libm::sqrt(grad.iter().map(|g| g.sq_norm()).sum::<f64>());
    state.model.apply_update(-state.beta, &grad);
    Ok(OuterReport {
        objective,
        grad_norm,
        lambda,
    })
}
