//! Central finite-difference verification of analytic gradients, one report
//! line per parameter group.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::cook::CookMatrix;
use crate::error::{Error, Result};
use crate::model::{Model, ModelParams, PairTarget, TaskMode};
use crate::scene::SceneAnnotation;

pub const DEFAULT_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Differences below this are indistinguishable from round-off in the
/// central difference of an O(1) loss at `h = 1e-6`.
pub const ABS_NOISE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub name: String,
    pub n_params: usize,
    /// `max |analytic − numeric| / max(max |analytic|, max |numeric|, 1e-10)`
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub max_abs_gradient: f64,
    /// Group was not probed because it is frozen; its gradient must be exactly zero.
    pub frozen: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub groups: Vec<GroupReport>,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `loss` around
/// `params`. Groups for which `frozen` returns true are not perturbed and
/// pass only if their analytic gradient is identically zero. A probed group
/// passes when its relative error is below `tolerance` or its absolute error
/// is below [`ABS_NOISE_FLOOR`].
pub fn check_groups<F>(
    params: &ModelParams,
    analytic: &ModelParams,
    mut loss: F,
    h: f64,
    tolerance: f64,
    frozen: impl Fn(&str) -> bool,
) -> Result<GradCheckReport>
where
    F: FnMut(&ModelParams) -> Result<f64>,
{
    if !analytic.is_finite() {
        return Err(Error::NonFinite("analytic gradient".into()));
    }
    let mut work = params.clone();
    let a_groups = analytic.groups();
    let n_groups = a_groups.len();
    let mut reports = Vec::with_capacity(n_groups);
    for gi in 0..n_groups {
        let name = a_groups[gi].name.clone();
        let a_vals: Vec<f64> = a_groups[gi].slices.iter().flat_map(|s| s.iter().copied()).collect();
        let max_a = a_vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if frozen(&name) {
            reports.push(GroupReport {
                n_params: a_vals.len(),
                max_rel_error: if max_a == 0.0 { 0.0 } else { f64::INFINITY },
                max_abs_error: max_a,
                max_abs_gradient: max_a,
                frozen: true,
                passed: max_a == 0.0,
                name,
            });
            continue;
        }
        let mut numeric = Vec::with_capacity(a_vals.len());
        let lens: Vec<usize> = a_groups[gi].slices.iter().map(|s| s.len()).collect();
        for (si, &len) in lens.iter().enumerate() {
            for k in 0..len {
                let orig = work.groups()[gi].slices[si][k];
                work.groups_mut()[gi].slices[si][k] = orig + h;
                let lp = loss(&work)?;
                work.groups_mut()[gi].slices[si][k] = orig - h;
                let lm = loss(&work)?;
                work.groups_mut()[gi].slices[si][k] = orig;
                let n = (lp - lm) / (2.0 * h);
                if !n.is_finite() {
                    return Err(Error::NonFinite(format!("finite difference in group {name}")));
                }
                numeric.push(n);
            }
        }
        let max_n = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let max_diff = a_vals.iter().zip(&numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        let rel = max_diff / max_a.max(max_n).max(1e-10);
        reports.push(GroupReport {
            n_params: a_vals.len(),
            max_rel_error: rel,
            max_abs_error: max_diff,
            max_abs_gradient: max_a,
            frozen: false,
            passed: rel < tolerance || max_diff < ABS_NOISE_FLOOR,
            name,
        });
    }
    let passed = reports.iter().all(|r| r.passed);
    Ok(GradCheckReport {
        tolerance,
        step: h,
        groups: reports,
        passed,
    })
}

/// Checks the model's backward pass on one supervised minibatch.
pub fn gradient_check(
    model: &Model,
    scenes: &[&SceneAnnotation],
    mode: TaskMode,
    cook: Option<&CookMatrix>,
    supervision: &[Vec<PairTarget>],
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = model.loss_and_grad(scenes, mode, cook, supervision)?;
    let live_tfidf = model.config.use_tfidf && model.params.tfidf.learnable;
    let mut probe = model.clone();
    check_groups(
        &model.params,
        &analytic,
        |p| {
            probe.params.clone_from(p);
            Ok(probe.loss(scenes, mode, cook, supervision)?.total)
        },
        DEFAULT_STEP,
        tolerance,
        |name| !live_tfidf && (name == "epsilon" || name == "gamma"),
    )
}
