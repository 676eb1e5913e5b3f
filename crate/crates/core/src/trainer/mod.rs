//! Initialization, the differentiable forward/backward pipeline over the CP
//! factors, and the optimization loop.

mod init;

pub use init::{factorize_rows, initial_rows, knn_mean_distance, Point, FALLBACK_SCALE, INITIAL_OPACITY};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::densify::{tds_step, GradAccumulator, TdsConfig, TdsReport};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{total_loss, LossBreakdown, LossInputs, LossWeights, BACKSCATTER_K};
use crate::medium::{ame_backward, backscatter_image, compose_underwater, MediumParams};
use crate::optim::{exponential_lr, AdamConfig, AdamMoments};
use crate::render::{render, render_backward, RenderOutput};
use crate::tensor::{mode1_slice, AlsOptions, CpFactors};

/// Number of learnable medium scalars (γ^∞, conv weights, conv biases).
pub const MEDIUM_PARAMS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MediumMode {
    /// Object and medium slices composed with the underwater model.
    Underwater,
    /// No medium: the composed image is the object render.
    Disabled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub rank: usize,
    pub lr_factors_init: f64,
    pub lr_factors_final: f64,
    pub lr_medium: f64,
    pub weights: LossWeights,
    pub tds: TdsConfig,
    pub seed: u64,
    pub medium: MediumMode,
    pub bs_k: f64,
    pub checkpoint_interval: u64,
    pub als_iters: usize,
    pub als_tol: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            rank: 20,
            lr_factors_init: 1.6e-4,
            lr_factors_final: 1.6e-6,
            lr_medium: 1e-3,
            weights: LossWeights::default(),
            tds: TdsConfig::default(),
            seed: 0,
            medium: MediumMode::Underwater,
            bs_k: BACKSCATTER_K,
            checkpoint_interval: 1000,
            als_iters: 100,
            als_tol: 1e-9,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if self.rank == 0 {
            return Err(Error::invalid("rank must be at least 1"));
        }
        let t = &self.tds;
        if !(t.grad_threshold > 0.0 && t.opacity_threshold > 0.0)
            || t.interval == 0
            || t.reset_interval == 0
            || t.densify_until == 0
        {
            return Err(Error::invalid("densification settings must be positive"));
        }
        let lrs = [self.lr_factors_init, self.lr_factors_final, self.lr_medium];
        if lrs.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("learning rates must be finite and non-negative"));
        }
        Ok(())
    }

    /// Factor learning rate at `step`.
    pub fn factor_lr(&self, step: u64) -> f64 {
        exponential_lr(step, self.lr_factors_init, self.lr_factors_final, self.steps)
    }
}

/// Adam state for every parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub medium_factor: AdamMoments,
    pub number: AdamMoments,
    pub template: AdamMoments,
    pub medium: AdamMoments,
}

impl Moments {
    pub fn for_factors(f: &CpFactors) -> Self {
        Self {
            medium_factor: AdamMoments::zeros(f.slices(), f.rank()),
            number: AdamMoments::zeros(f.num_gaussians(), f.rank()),
            template: AdamMoments::zeros(f.num_attributes(), f.rank()),
            medium: AdamMoments::zeros(MEDIUM_PARAMS, 1),
        }
    }

    fn is_finite(&self) -> bool {
        self.medium_factor.is_finite() && self.number.is_finite() && self.template.is_finite() && self.medium.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub factors: CpFactors,
    pub medium: MediumParams,
    pub moments: Moments,
    pub step: u64,
    pub grad_acc: GradAccumulator,
    /// Multiplier on every learning rate; halved once after a non-finite step.
    pub lr_scale: f64,
}

impl TrainerState {
    pub fn new(factors: CpFactors, medium: MediumParams) -> Self {
        let moments = Moments::for_factors(&factors);
        let grad_acc = GradAccumulator::new(factors.num_gaussians());
        Self { factors, medium, moments, step: 0, grad_acc, lr_scale: 1.0 }
    }

    pub fn num_gaussians(&self) -> usize {
        self.factors.num_gaussians()
    }

    /// CP factor entries plus the medium parameters.
    pub fn parameter_count(&self) -> usize {
        self.factors.parameter_count() + MEDIUM_PARAMS
    }
}

/// Builds the initial state from a point cloud.
pub fn init_from_points(points: &[Point], cfg: &TrainConfig) -> Result<TrainerState> {
    if points.is_empty() {
        return Err(Error::invalid("empty point cloud"));
    }
    cfg.validate()?;
    let rows = initial_rows(points);
    let opts = AlsOptions { max_iters: cfg.als_iters, tol: cfg.als_tol, seed: cfg.seed, ..AlsOptions::default() };
    let factors = factorize_rows(&rows, cfg.rank, &opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(TrainerState::new(factors, MediumParams::initial(&mut rng)))
}

/// Everything rendered for one view.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Object slice: color is the restoration `J`, depth is `z_u`.
    pub object: RenderOutput,
    /// Medium slice: color is the attenuation image `F^α`, depth is `z_α`.
    pub medium: RenderOutput,
    pub backscatter: Image,
    /// Composed image `I`.
    pub composed: Image,
}

pub fn forward(factors: &CpFactors, medium: &MediumParams, cam: &Camera, mode: MediumMode) -> Result<Forward> {
    let object = render(&mode1_slice(factors, 0)?, cam);
    match mode {
        MediumMode::Underwater => {
            let med = render(&mode1_slice(factors, 1)?, cam);
            let backscatter = backscatter_image(&med.depth, medium);
            let composed = compose_underwater(&object.color, &med.color, &med.depth, &backscatter)?;
            Ok(Forward { object, medium: med, backscatter, composed })
        }
        MediumMode::Disabled => {
            let (w, h) = (cam.width, cam.height);
            let composed = object.color.clone();
            let med = RenderOutput { color: Image::zeros(w, h, 3), depth: Image::zeros(w, h, 1), alpha: Image::zeros(w, h, 1) };
            Ok(Forward { object, medium: med, backscatter: Image::zeros(w, h, 3), composed })
        }
    }
}

/// Gradients of the total loss for one view.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub medium_factor: DMatrix<f64>,
    pub number: DMatrix<f64>,
    pub template: DMatrix<f64>,
    pub medium: [f64; MEDIUM_PARAMS],
    /// Object-slice screen-space positional gradient norm per Gaussian, in
    /// normalized device units per mean color entry.
    pub screen_norms: Vec<f64>,
    pub visible: Vec<bool>,
}

impl Gradients {
    fn is_finite(&self) -> bool {
        self.medium_factor.iter().chain(self.number.iter()).chain(self.template.iter()).all(|v| v.is_finite())
            && self.medium.iter().all(|v| v.is_finite())
    }
}

/// Chains per-slice gradients `∂L/∂S_i` through `S_i = U² diag(U¹[i,:]) U³ᵀ`.
pub fn factor_gradients(f: &CpFactors, d_slices: &[&DMatrix<f64>]) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let (u1, u2, u3) = (f.medium(), f.number(), f.template());
    let r = f.rank();
    let mut d1 = DMatrix::zeros(u1.nrows(), r);
    let mut d2 = DMatrix::zeros(u2.nrows(), r);
    let mut d3 = DMatrix::zeros(u3.nrows(), r);
    for (i, ds) in d_slices.iter().enumerate() {
        let w = u1.row(i);
        let ds_u3 = *ds * u3;
        let ds_t_u2 = ds.transpose() * u2;
        for c in 0..r {
            d1[(i, c)] = ds_u3.column(c).dot(&u2.column(c));
            let mut col2 = d2.column_mut(c);
            col2.axpy(w[c], &ds_u3.column(c), 1.0);
            let mut col3 = d3.column_mut(c);
            col3.axpy(w[c], &ds_t_u2.column(c), 1.0);
        }
    }
    (d1, d2, d3)
}

/// Loss and gradients for one view without touching the state.
pub fn compute_gradients(
    factors: &CpFactors,
    medium: &MediumParams,
    cam: &Camera,
    gt: &Image,
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Gradients)> {
    if gt.width() != cam.width || gt.height() != cam.height || gt.channels() != 3 {
        return Err(Error::invalid(format!(
            "ground truth is {}x{}x{}, camera expects {}x{}x3",
            gt.width(),
            gt.height(),
            gt.channels(),
            cam.width,
            cam.height
        )));
    }
    let fwd = forward(factors, medium, cam, cfg.medium)?;
    let direct = gt.zip_map(&fwd.backscatter, |g, b| g - b);
    let inputs = LossInputs {
        gt,
        rendered: &fwd.composed,
        restored: &fwd.object.color,
        direct: &direct,
        z_u: &fwd.object.depth,
        z_alpha: &fwd.medium.depth,
        bs_k: cfg.bs_k,
    };
    let (loss, lg) = total_loss(&inputs, &cfg.weights)?;

    let s0 = mode1_slice(factors, 0)?;
    let mut medium_grad = [0.0; MEDIUM_PARAMS];
    let (g0, g1) = match cfg.medium {
        MediumMode::Underwater => {
            let d_b = lg.direct.map(|v| -v);
            let ame = ame_backward(&fwd.object.color, &fwd.medium.color, &fwd.medium.depth, medium, &lg.rendered, Some(&d_b))?;
            let mut d_j = lg.restored.clone();
            d_j.add_assign(&ame.j);
            let mut d_za = lg.z_alpha.clone();
            d_za.add_assign(&ame.z_alpha);
            medium_grad = ame.medium.to_array();
            let g0 = render_backward(&s0, cam, &d_j, &lg.z_u);
            let s1 = mode1_slice(factors, 1)?;
            let g1 = render_backward(&s1, cam, &ame.f_alpha, &d_za);
            (g0, Some(g1))
        }
        MediumMode::Disabled => {
            let mut d_j = lg.restored.clone();
            d_j.add_assign(&lg.rendered);
            (render_backward(&s0, cam, &d_j, &lg.z_u), None)
        }
    };
    let zero;
    let d1 = match &g1 {
        Some(g) => &g.params,
        None => {
            zero = DMatrix::zeros(s0.nrows(), s0.ncols());
            &zero
        }
    };
    let (dm, dn, dt) = factor_gradients(factors, &[&g0.params, d1]);

    let (w, h) = (cam.width as f64, cam.height as f64);
    let norm = 3.0 * w * h;
    let screen_norms = g0
        .mean2d
        .iter()
        .map(|g| ((g[0] * w / 2.0).powi(2) + (g[1] * h / 2.0).powi(2)).sqrt() / norm)
        .collect();
    let grads = Gradients { medium_factor: dm, number: dn, template: dt, medium: medium_grad, screen_norms, visible: g0.visible };
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Applied { loss: LossBreakdown, tds: Option<TdsReport> },
    /// Non-finite values were detected; the state was left as before and the
    /// learning rates halved.
    Skipped { loss: LossBreakdown },
}

impl StepOutcome {
    pub fn loss(&self) -> &LossBreakdown {
        match self {
            StepOutcome::Applied { loss, .. } | StepOutcome::Skipped { loss } => loss,
        }
    }
}

fn diverged(state: &mut TrainerState, loss: LossBreakdown, why: &str) -> Result<StepOutcome> {
    if state.lr_scale < 1.0 {
        return Err(Error::Diverged { step: state.step, message: why.to_string() });
    }
    log::warn!("step {}: {why}; skipping the step and halving learning rates", state.step);
    state.lr_scale *= 0.5;
    Ok(StepOutcome::Skipped { loss })
}

/// One optimization step on a single view followed by the densification schedule.
pub fn train_step(state: &mut TrainerState, cam: &Camera, gt: &Image, cfg: &TrainConfig) -> Result<StepOutcome> {
    let (loss, grads) = compute_gradients(&state.factors, &state.medium, cam, gt, cfg)?;
    if !loss.total.is_finite() || !grads.is_finite() {
        return diverged(state, loss, "non-finite loss or gradient");
    }
    let backup = (state.factors.clone(), state.medium, state.moments.clone());

    let lr_f = cfg.factor_lr(state.step) * state.lr_scale;
    let lr_m = cfg.lr_medium * state.lr_scale;
    let adam = cfg.adam;
    state.moments.medium_factor.step(state.factors.medium_mut(), &grads.medium_factor, lr_f, &adam);
    state.moments.number.step(state.factors.number_mut(), &grads.number, lr_f, &adam);
    state.moments.template.step(state.factors.template_mut(), &grads.template, lr_f, &adam);
    if cfg.medium == MediumMode::Underwater {
        let mut m = DMatrix::from_column_slice(MEDIUM_PARAMS, 1, &state.medium.to_array());
        let g = DMatrix::from_column_slice(MEDIUM_PARAMS, 1, &grads.medium);
        state.moments.medium.step(&mut m, &g, lr_m, &adam);
        let mut arr = [0.0; MEDIUM_PARAMS];
        arr.copy_from_slice(m.as_slice());
        state.medium = MediumParams::from_array(arr);
        state.medium.clamp_gamma();
    }
    if !state.factors.is_finite() || !state.medium.is_finite() || !state.moments.is_finite() {
        (state.factors, state.medium, state.moments) = backup;
        return diverged(state, loss, "non-finite parameters after update");
    }

    state.step += 1;
    state.grad_acc.add(&grads.screen_norms, &grads.visible);
    let tds = tds_step(&mut state.factors, &mut state.moments.number, &mut state.grad_acc, state.step, &cfg.tds);
    Ok(StepOutcome::Applied { loss, tds })
}

/// A posed training or evaluation image.
#[derive(Debug, Clone)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
}

/// Per-step record handed to the training observer.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: u64,
    pub view: usize,
    pub outcome: StepOutcome,
}

/// Runs `cfg.steps - state.step` steps, visiting views in a seeded shuffled
/// order per epoch. `observer` sees the state after every step; returning an
/// error stops training.
pub fn train(
    cfg: &TrainConfig,
    state: &mut TrainerState,
    views: &[View],
    mut observer: impl FnMut(&TrainerState, &StepRecord) -> Result<()>,
) -> Result<Vec<LossBreakdown>> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::invalid("dataset has no training views"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7e_a1);
    let mut order: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    while state.step < cfg.steps {
        if order.is_empty() {
            order = (0..views.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let v = order.pop().expect("refilled above");
        let outcome = train_step(state, &views[v].camera, &views[v].image, cfg)?;
        history.push(*outcome.loss());
        observer(state, &StepRecord { step: state.step, view: v, outcome })?;
    }
    Ok(history)
}
