//! Structural edits of the Gaussian set that touch only the number factor
//! and the opacity row of the template factor.

use std::fmt;

use nalgebra::DMatrix;

use crate::gaussian::{sigmoid, OPACITY};
use crate::tensor::{compression_stats, opacity_vector, CpFactors};

/// Slice index of the object (medium-free) Gaussians.
pub const OBJECT_SLICE: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdsConfig {
    pub grad_threshold: f64,
    pub opacity_threshold: f64,
    pub reset_interval: u64,
    pub densify_until: u64,
    pub interval: u64,
}

impl Default for TdsConfig {
    fn default() -> Self {
        Self { grad_threshold: 1e-3, opacity_threshold: 0.1, reset_interval: 1000, densify_until: 10_000, interval: 100 }
    }
}

/// Per-row state that has to follow the number factor through clones and prunes.
pub trait RowState {
    /// Append `count` zeroed rows.
    fn append_zeroed(&mut self, count: usize);
    /// Keep only rows `keep`, in order.
    fn retain_rows(&mut self, keep: &[usize]);
}

impl RowState for () {
    fn append_zeroed(&mut self, _: usize) {}
    fn retain_rows(&mut self, _: &[usize]) {}
}

pub(crate) fn append_zero_rows(m: &mut DMatrix<f64>, count: usize) {
    let (n, r) = m.shape();
    let old = std::mem::replace(m, DMatrix::zeros(0, 0));
    *m = old.resize(n + count, r, 0.0);
}

pub(crate) fn select_rows(m: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(keep.len(), m.ncols(), |i, j| m[(keep[i], j)])
}

/// Running mean of screen-space positional gradient norms per Gaussian.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradAccumulator {
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl GradAccumulator {
    pub fn new(n: usize) -> Self {
        Self { sum: vec![0.0; n], count: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sum.is_empty()
    }

    /// Adds one observation for every visible Gaussian.
    pub fn add(&mut self, norms: &[f64], visible: &[bool]) {
        assert_eq!(norms.len(), self.sum.len());
        assert_eq!(visible.len(), self.sum.len());
        for i in 0..norms.len() {
            if visible[i] {
                self.sum[i] += norms[i];
                self.count[i] += 1;
            }
        }
    }

    pub fn averages(&self) -> Vec<f64> {
        self.sum.iter().zip(&self.count).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect()
    }

    pub fn clear(&mut self) {
        self.sum.iter_mut().for_each(|v| *v = 0.0);
        self.count.iter_mut().for_each(|v| *v = 0);
    }
}

impl RowState for GradAccumulator {
    fn append_zeroed(&mut self, count: usize) {
        self.sum.extend(std::iter::repeat(0.0).take(count));
        self.count.extend(std::iter::repeat(0).take(count));
    }

    fn retain_rows(&mut self, keep: &[usize]) {
        self.sum = keep.iter().map(|&i| self.sum[i]).collect();
        self.count = keep.iter().map(|&i| self.count[i]).collect();
    }
}

/// Appends a copy of `U²[i, :]` for every `i` whose gradient statistic exceeds
/// the threshold. Returns the cloned source indices.
pub fn densify_clone(factors: &mut CpFactors, grad_norms: &[f64], cfg: &TdsConfig) -> Vec<usize> {
    assert_eq!(grad_norms.len(), factors.num_gaussians(), "one gradient statistic per Gaussian");
    let sources: Vec<usize> = (0..grad_norms.len()).filter(|&i| grad_norms[i] > cfg.grad_threshold).collect();
    if sources.is_empty() {
        return sources;
    }
    let n = factors.num_gaussians();
    let u2 = factors.number_mut();
    append_zero_rows(u2, sources.len());
    for (k, &src) in sources.iter().enumerate() {
        for r in 0..u2.ncols() {
            u2[(n + k, r)] = u2[(src, r)];
        }
    }
    sources
}

/// Activated object-slice opacities, computed from the factors.
pub fn object_opacities(factors: &CpFactors) -> Vec<f64> {
    opacity_vector(factors, OBJECT_SLICE)
        .expect("object slice always exists")
        .iter()
        .map(|&o| sigmoid(o))
        .collect()
}

/// Keeps rows whose activated object-slice opacity is at least the threshold.
/// Returns the surviving row indices in their original order.
pub fn prune_low_opacity(factors: &mut CpFactors, cfg: &TdsConfig) -> Vec<usize> {
    let n = factors.num_gaussians();
    if n == 0 {
        return Vec::new();
    }
    let op = object_opacities(factors);
    let mut keep: Vec<usize> = (0..n).filter(|&i| op[i] >= cfg.opacity_threshold).collect();
    if keep.is_empty() {
        let best = (0..n).max_by(|&a, &b| op[a].total_cmp(&op[b]).then(b.cmp(&a))).expect("n > 0");
        log::warn!("every Gaussian is below the opacity threshold; keeping row {best} (opacity {:.4})", op[best]);
        keep.push(best);
    }
    if keep.len() < n {
        let u2 = select_rows(factors.number(), &keep);
        *factors.number_mut() = u2;
    }
    keep
}

/// Zeroes the opacity row of the template factor, leaving every Gaussian at raw opacity 0.
pub fn reset_opacity(factors: &mut CpFactors) {
    factors.template_mut().row_mut(OPACITY).fill(0.0);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TdsReport {
    pub step: u64,
    pub n_before: usize,
    pub cloned: usize,
    pub pruned: usize,
    pub n_after: usize,
    pub compressed_params: u64,
    pub reset: bool,
}

impl fmt::Display for TdsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} n_before={} cloned={} pruned={} n_after={} compressed_params={}",
            self.step, self.n_before, self.cloned, self.pruned, self.n_after, self.compressed_params
        )?;
        if self.reset {
            write!(f, " opacity_reset")?;
        }
        Ok(())
    }
}

/// Runs the scheduled structural pass for `step`, if any.
///
/// `rows` holds per-Gaussian state (optimizer moments of `U²`) that must be
/// cloned (zeroed) and pruned in lockstep with the number factor.
pub fn tds_step(
    factors: &mut CpFactors,
    rows: &mut dyn RowState,
    acc: &mut GradAccumulator,
    step: u64,
    cfg: &TdsConfig,
) -> Option<TdsReport> {
    if step == 0 || step >= cfg.densify_until || step % cfg.interval != 0 {
        return None;
    }
    let n_before = factors.num_gaussians();
    let cloned = densify_clone(factors, &acc.averages(), cfg);
    rows.append_zeroed(cloned.len());
    acc.append_zeroed(cloned.len());
    let keep = prune_low_opacity(factors, cfg);
    let n_mid = n_before + cloned.len();
    if keep.len() < n_mid {
        rows.retain_rows(&keep);
        acc.retain_rows(&keep);
    }
    let reset = step % cfg.reset_interval == 0;
    if reset {
        reset_opacity(factors);
    }
    acc.clear();
    let n_after = factors.num_gaussians();
    let stats = compression_stats(n_after as u64, factors.num_attributes() as u64, factors.rank() as u64);
    let report = TdsReport {
        step,
        n_before,
        cloned: cloned.len(),
        pruned: n_mid - n_after,
        n_after,
        compressed_params: stats.compressed_params,
        reset,
    };
    log::info!("densify {report}");
    Some(report)
}
