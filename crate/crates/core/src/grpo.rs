//! Group-relative advantages and the clipped, KL-regularized surrogate.
//!
//! For a group of `N` trajectories sampled for one context:
//!
//! ```text
//! A_i = (r_i - mean(r)) / std(r)             population std, 0 if std <= floor
//! d_i = exp(log pi(y_i) - log pi_old(y_i))
//! J   = 1/N sum_i min(d_i A_i, clip(d_i, 1-eps, 1+eps) A_i - beta KL_i)
//! ```
//!
//! The KL term sits inside the second argument of the `min` by default;
//! [`KlPlacement::Outside`] subtracts it after the `min` instead.

use alloc::format;
use alloc::vec::Vec;

use crate::math;
use crate::policy::{Context, Matrix, PolicyParams, Trajectory};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum KlPlacement {
    /// `min(dA, clip(d)A - beta KL)`.
    #[default]
    Inside,
    /// `min(dA, clip(d)A) - beta KL`.
    Outside,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum KlEstimator {
    /// Exact categorical KL averaged over the visited prefixes.
    #[default]
    Exact,
    /// Sequence log-ratio `(log pi - log pi_ref) / len`.
    LogRatio,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_coef: f64,
    pub learning_rate: f64,
    pub std_floor: f64,
    pub kl_placement: KlPlacement,
    pub kl_estimator: KlEstimator,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 4,
            clip_epsilon: 0.2,
            kl_coef: 0.04,
            learning_rate: 5.0,
            std_floor: 1e-8,
            kl_placement: KlPlacement::Inside,
            kl_estimator: KlEstimator::Exact,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config(format!(
                "grpo.group_size must be >= 2, got {}",
                self.group_size
            )));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::Config(format!(
                "grpo.clip_epsilon must lie in (0, 1), got {}",
                self.clip_epsilon
            )));
        }
        if !(self.kl_coef >= 0.0) || !self.kl_coef.is_finite() {
            return Err(Error::Config("grpo.kl_coef must be finite and >= 0".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("grpo.learning_rate must be finite and >= 0".into()));
        }
        if !(self.std_floor >= 0.0) {
            return Err(Error::Config("grpo.std_floor must be >= 0".into()));
        }
        Ok(())
    }
}

/// Standardizes a group's rewards. Degenerate groups get all-zero advantages.
pub fn compute_advantages(rewards: &[f64], config: &GrpoConfig) -> Result<Vec<f64>> {
    if rewards.len() != config.group_size {
        return Err(Error::Config(format!(
            "group has {} rewards, grpo.group_size is {}",
            rewards.len(),
            config.group_size
        )));
    }
    let mean = math::mean(rewards);
    let std = math::pop_std(rewards);
    if !(std > config.std_floor) {
        return Ok(alloc::vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// `N` trajectories for one context with their rewards and advantages.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrajectoryGroup {
    pub context: Context,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl TrajectoryGroup {
    pub fn new(
        context: Context,
        trajectories: Vec<Trajectory>,
        rewards: Vec<f64>,
        config: &GrpoConfig,
    ) -> Result<Self> {
        if trajectories.len() != rewards.len() {
            return Err(Error::LengthMismatch {
                left: trajectories.len(),
                right: rewards.len(),
            });
        }
        let advantages = compute_advantages(&rewards, config)?;
        Ok(Self {
            context,
            trajectories,
            rewards,
            advantages,
        })
    }
}

/// Which argument of the `min` was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Branch {
    Unclipped,
    Clipped,
}

/// Per-trajectory bookkeeping of the surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermReport {
    pub ratio: f64,
    pub advantage: f64,
    pub kl: f64,
    pub value: f64,
    pub branch: Branch,
    /// The clipped branch won with the ratio outside `(1-eps, 1+eps)`, so
    /// the ratio contributes no gradient.
    pub clip_active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub value: f64,
    /// `None` for trajectories skipped because their ratio was not finite.
    pub terms: Vec<Option<TermReport>>,
}

impl ObjectiveReport {
    pub fn used(&self) -> usize {
        self.terms.iter().flatten().count()
    }

    pub fn skipped(&self) -> usize {
        self.terms.len() - self.used()
    }
}

fn estimate_kl(
    params: &PolicyParams,
    params_ref: &PolicyParams,
    context: &Context,
    tokens: &[usize],
    log_prob: f64,
    config: &GrpoConfig,
    grad: Option<(f64, &mut Matrix)>,
) -> Result<f64> {
    match config.kl_estimator {
        KlEstimator::Exact => params.kl_with_grad(params_ref, context, tokens, grad),
        KlEstimator::LogRatio => {
            let len = effective_len(params, tokens);
            if len == 0 {
                return Ok(0.0);
            }
            let lp_ref = params_ref.log_prob(context, tokens)?;
            if let Some((scale, g)) = grad {
                params.accumulate_grad_log_prob(context, tokens, scale / len as f64, g)?;
            }
            Ok((log_prob - lp_ref) / len as f64)
        }
    }
}

fn effective_len(params: &PolicyParams, tokens: &[usize]) -> usize {
    match params.vocab().eos() {
        Some(e) => tokens.iter().position(|&t| t == e).map_or(tokens.len(), |i| i + 1),
        None => tokens.len(),
    }
}

/// Evaluates one term and optionally accumulates `scale * grad` into `grad`.
#[allow(clippy::too_many_arguments)]
fn term(
    context: &Context,
    traj: &Trajectory,
    advantage: f64,
    params: &PolicyParams,
    params_old: &PolicyParams,
    params_ref: &PolicyParams,
    config: &GrpoConfig,
    mut grad: Option<(f64, &mut Matrix)>,
) -> Result<Option<TermReport>> {
    let lp = params.log_prob(context, &traj.tokens)?;
    let lp_old = params_old.log_prob(context, &traj.tokens)?;
    let ratio = math::exp(lp - lp_old);
    if !ratio.is_finite() || !(ratio > 0.0) {
        #[cfg(feature = "std")]
        std::eprintln!("warning: skipping trajectory with non-finite importance ratio");
        return Ok(None);
    }
    let kl = estimate_kl(params, params_ref, context, &traj.tokens, lp, config, None)?;
    let eps = config.clip_epsilon;
    let beta = config.kl_coef;
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    let (value, branch) = match config.kl_placement {
        KlPlacement::Inside => {
            let second = clipped - beta * kl;
            if unclipped <= second {
                (unclipped, Branch::Unclipped)
            } else {
                (second, Branch::Clipped)
            }
        }
        KlPlacement::Outside => {
            let b = if unclipped <= clipped {
                Branch::Unclipped
            } else {
                Branch::Clipped
            };
            (unclipped.min(clipped) - beta * kl, b)
        }
    };
    let inside_band = ratio > 1.0 - eps && ratio < 1.0 + eps;
    let clip_active = branch == Branch::Clipped && !inside_band;

    if let Some((scale, g)) = grad.as_mut() {
        let scale = *scale;
        // d(ratio)/dW = ratio * grad log pi
        let ratio_live = branch == Branch::Unclipped || inside_band;
        if ratio_live && advantage != 0.0 {
            params.accumulate_grad_log_prob(context, &traj.tokens, scale * advantage * ratio, g)?;
        }
        let kl_live = match config.kl_placement {
            KlPlacement::Inside => branch == Branch::Clipped,
            KlPlacement::Outside => true,
        };
        if kl_live && beta != 0.0 {
            estimate_kl(params, params_ref, context, &traj.tokens, lp, config, Some((-scale * beta, &mut **g)))?;
        }
    }

    Ok(Some(TermReport {
        ratio,
        advantage,
        kl,
        value,
        branch,
        clip_active,
    }))
}

fn objective_impl(
    group: &TrajectoryGroup,
    params: &PolicyParams,
    params_old: &PolicyParams,
    params_ref: &PolicyParams,
    config: &GrpoConfig,
    mut grad: Option<&mut Matrix>,
) -> Result<ObjectiveReport> {
    if group.trajectories.len() != group.advantages.len() {
        return Err(Error::LengthMismatch {
            left: group.trajectories.len(),
            right: group.advantages.len(),
        });
    }
    // Per-term gradients are accumulated into a scratch buffer and rescaled
    // once the number of usable trajectories is known.
    let mut scratch = grad.as_ref().map(|g| Matrix::zeros(g.rows, g.cols));
    let mut terms = Vec::with_capacity(group.trajectories.len());
    for (traj, &adv) in group.trajectories.iter().zip(&group.advantages) {
        let t = term(
            &group.context,
            traj,
            adv,
            params,
            params_old,
            params_ref,
            config,
            scratch.as_mut().map(|s| (1.0, s)),
        )?;
        terms.push(t);
    }
    let used = terms.iter().flatten().count();
    let value = if used == 0 {
        0.0
    } else {
        terms.iter().flatten().map(|t| t.value).sum::<f64>() / used as f64
    };
    if let (Some(g), Some(s)) = (grad.as_mut(), scratch) {
        if used > 0 {
            g.axpy(1.0 / used as f64, &s);
        }
    }
    Ok(ObjectiveReport { value, terms })
}

/// Value of the surrogate objective for one group.
pub fn surrogate_objective(
    group: &TrajectoryGroup,
    params: &PolicyParams,
    params_old: &PolicyParams,
    params_ref: &PolicyParams,
    config: &GrpoConfig,
) -> Result<ObjectiveReport> {
    objective_impl(group, params, params_old, params_ref, config, None)
}

/// Value and gradient (with respect to `params`) of the surrogate for one group.
pub fn surrogate_gradient(
    group: &TrajectoryGroup,
    params: &PolicyParams,
    params_old: &PolicyParams,
    params_ref: &PolicyParams,
    config: &GrpoConfig,
) -> Result<(ObjectiveReport, Matrix)> {
    let w = params.weights();
    let mut g = Matrix::zeros(w.rows, w.cols);
    let report = objective_impl(group, params, params_old, params_ref, config, Some(&mut g))?;
    Ok((report, g))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepDiagnostics {
    /// Mean surrogate value over groups.
    pub objective: f64,
    pub mean_reward: f64,
    pub mean_abs_advantage: f64,
    pub clip_fraction: f64,
    pub mean_kl: f64,
    pub skipped: usize,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub params: PolicyParams,
    pub diagnostics: StepDiagnostics,
}

/// One gradient-ascent step on the batch-mean surrogate.
pub fn grpo_step(
    groups: &[TrajectoryGroup],
    params: &PolicyParams,
    params_old: &PolicyParams,
    params_ref: &PolicyParams,
    config: &GrpoConfig,
) -> Result<StepOutcome> {
    config.validate()?;
    let w = params.weights();
    let mut total = Matrix::zeros(w.rows, w.cols);
    let mut diag = StepDiagnostics::default();
    let mut n_traj = 0usize;
    let mut n_used = 0usize;
    let mut clipped = 0usize;
    for group in groups {
        let report = objective_impl(group, params, params_old, params_ref, config, Some(&mut total))?;
        diag.objective += report.value;
        diag.mean_reward += group.rewards.iter().sum::<f64>();
        diag.mean_abs_advantage += group.advantages.iter().map(|a| a.abs()).sum::<f64>();
        n_traj += group.trajectories.len();
        for t in report.terms.iter().flatten() {
            n_used += 1;
            diag.mean_kl += t.kl;
            if t.clip_active {
                clipped += 1;
            }
        }
        diag.skipped += report.skipped();
    }
    if !groups.is_empty() {
        let n = groups.len() as f64;
        total.scale(1.0 / n);
        diag.objective /= n;
    }
    if n_traj > 0 {
        diag.mean_reward /= n_traj as f64;
        diag.mean_abs_advantage /= n_traj as f64;
    }
    if n_used > 0 {
        diag.mean_kl /= n_used as f64;
        diag.clip_fraction = clipped as f64 / n_used as f64;
    }
    diag.gradient_norm = total.norm();
    let next = if config.learning_rate == 0.0 {
        params.clone()
    } else {
        params.stepped(config.learning_rate, &total)
    };
    Ok(StepOutcome {
        params: next,
        diagnostics: diag,
    })
}
