//! Per-scan reconstruction loop: fit the randomly initialized network to one
//! undersampled acquisition by minimizing the data-consistency loss, with an
//! optional squared-norm penalty on the parameters.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::io::{write_array, ArrayData, ArrayFile};
use crate::mri::{
    data_loss, zero_fill, CoilSensitivities, ComplexImage, MultiCoilKSpace, SamplingMask,
};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::scalar::Real;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::unet::{build_unet, param_l2, unet_forward, NetworkParams, UNetConfig};

/// Which objective the parameter updates follow.
///
/// `Unregularized` minimizes the data term alone; `Regularized` adds
/// `lambda * ||theta||^2`. With `lambda = 0` the regularized path degenerates
/// to the exact same trajectory as the unregularized one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Unregularized,
    Regularized,
}

/// Conventional penalty weight to start from when the regularized objective
/// is wanted but no lambda has been chosen yet.
pub const DEFAULT_REGULARIZED_LAMBDA: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ReconConfig<T> {
    pub unet: UNetConfig<T>,
    pub lr: T,
    pub iterations: usize,
    /// Parameter penalty weight; 0 selects the unregularized objective.
    pub lambda: T,
    /// Seeds the parameter initialization (overrides `unet.seed`).
    pub seed: u64,
    /// Write a parameter checkpoint every this many iterations (0 = off).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Stop early once the total loss plateaus (relative change below 1e-7
    /// over 200 iterations). Off by default.
    pub plateau_stop: bool,
}

impl<T: Real> Default for ReconConfig<T> {
    fn default() -> Self {
        ReconConfig {
            unet: UNetConfig::default(),
            lr: T::cast(1e-3),
            iterations: 2000,
            lambda: T::zero(),
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
            plateau_stop: false,
        }
    }
}

impl<T: Real> ReconConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
        if !(self.lr > T::zero()) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.lambda < T::zero() {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEntry<T> {
    pub data: T,
    pub reg: T,
    pub total: T,
}

#[derive(Debug, Clone)]
pub struct ReconResult<T> {
    /// De-normalized reconstruction (network output times the zero-fill scale).
    pub image: ComplexImage<T>,
    pub loss_history: Vec<LossEntry<T>>,
    pub iterations_run: usize,
    /// Peak magnitude of the raw zero-filled image; the normalization factor.
    pub scale: T,
}

/// Total objective value: `data_term + lambda * ||theta||^2`.
pub fn total_loss<T: Real>(data_term: T, params: &NetworkParams<T>, lambda: T) -> T {
    data_term + lambda * param_l2(params)
}

/// Reconstruct with the objective implied by `cfg.lambda`.
pub fn reconstruct<T: Real>(
    d_u: &MultiCoilKSpace<T>,
    s: &CoilSensitivities<T>,
    p: &SamplingMask,
    cfg: &ReconConfig<T>,
) -> Result<ReconResult<T>> {
    let mode = if cfg.lambda > T::zero() {
        LossMode::Regularized
    } else {
        LossMode::Unregularized
    };
    reconstruct_with_mode(d_u, s, p, cfg, mode)
}

/// Reconstruct with an explicit objective selection.
///
/// Each iteration evaluates the network on the fixed zero-filled input,
/// evaluates the data term and its gradient at the network output,
/// backpropagates, adds the parameter-penalty gradient `2*lambda*theta` when
/// the regularized objective is selected, and takes one ADAM step. The
/// returned image is the network output of the final iteration (the one the
/// last loss entry was evaluated at), de-normalized. Deterministic for a
/// fixed `cfg.seed`.
pub fn reconstruct_with_mode<T: Real>(
    d_u: &MultiCoilKSpace<T>,
    s: &CoilSensitivities<T>,
    p: &SamplingMask,
    cfg: &ReconConfig<T>,
    mode: LossMode,
) -> Result<ReconResult<T>> {
    cfg.validate()?;
    s.validate()?;
    let lambda = match mode {
        LossMode::Unregularized => T::zero(),
        LossMode::Regularized => cfg.lambda,
    };

    // enforce the masked-data contract, then normalize
    let mut d = d_u.clone();
    p.apply(&mut d);
    let (x0_img, scale) = zero_fill(&d, s, p)?;
    let d_n = d.scale(T::one() / scale);
    let x0 = x0_img.to_two_channel();

    let mut net_cfg = cfg.unet.clone();
    net_cfg.seed = cfg.seed;
    let mut params = build_unet(&net_cfg)?;
    let mut state = AdamState::new(&params);
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };

    let checkpoint_dir = if cfg.checkpoint_every > 0 {
        if let Some(dir) = &cfg.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            Some(dir.clone())
        } else {
            None
        }
    } else {
        None
    };

    let two_lambda = T::cast(2.0) * lambda;
    let mut history: Vec<LossEntry<T>> = Vec::with_capacity(cfg.iterations);
    let mut last_output: Option<ComplexImage<T>> = None;

    for it in 1..=cfg.iterations {
        let mut tape = Tape::new();
        let pass =
            unet_forward(&net_cfg, &params, &x0, &mut tape).map_err(|e| at_iteration(e, it))?;
        let x = ComplexImage::from_two_channel(tape.value(pass.output))
            .map_err(|e| at_iteration(e, it))?;
        let (data_term, grad_img) =
            data_loss(&x, &d_n, s, p).map_err(|e| at_iteration(e, it))?;

        // penalty at the parameters the data term was evaluated with
        let reg = param_l2(&params);
        let total = data_term + lambda * reg;
        history.push(LossEntry {
            data: data_term,
            reg,
            total,
        });
        last_output = Some(x);

        let grads_by_node = tape
            .backward_seeded(pass.output, grad_img.to_two_channel())
            .map_err(|e| at_iteration(e, it))?;
        let mut grads: Vec<Tensor<T>> = Vec::with_capacity(params.len());
        for &node in &pass.param_nodes {
            grads.push(
                grads_by_node
                    .wrt(node)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tape.value(node).shape())),
            );
        }
        drop(tape);
        if mode == LossMode::Regularized {
            for (g, theta) in grads.iter_mut().zip(params.tensors()) {
                for (gv, &tv) in g.data_mut().iter_mut().zip(theta.data()) {
                    *gv += two_lambda * tv;
                }
            }
        }
        adam_step(&mut params, &grads, &mut state, &adam_cfg).map_err(|e| at_iteration(e, it))?;

        if let Some(dir) = &checkpoint_dir {
            if it % cfg.checkpoint_every == 0 {
                let flat = params.to_flat().iter().map(|v| v.to_f64().unwrap()).collect();
                let array = ArrayFile::new(vec![params.count_scalars()], ArrayData::Real64(flat))?;
                write_array(&dir.join(format!("iter_{it:06}.nldt")), &array)?;
            }
        }

        if cfg.plateau_stop && it > 200 {
            let prev = history[it - 201].total;
            let cur = history[it - 1].total;
            let denom = prev.abs().max(T::min_positive_value());
            if ((cur - prev) / denom).abs() < T::cast(1e-7) {
                break;
            }
        }
    }

    let image = last_output.expect("at least one iteration ran").scale(scale);
    let iterations_run = history.len();
    Ok(ReconResult {
        image,
        loss_history: history,
        iterations_run,
        scale,
    })
}

fn at_iteration(e: Error, it: usize) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("iteration {it}: {m}")),
        Error::Shape(m) => Error::Shape(format!("iteration {it}: {m}")),
        other => other,
    }
}
