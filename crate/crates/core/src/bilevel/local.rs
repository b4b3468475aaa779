use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, OptimizerState};
use super::inner::{inner_loss_grad, InnerBatchView};
use super::model::ReKoModel;
use super::outer::{outer_loss_grad, OuterSample, Propagator};
use crate::data::{make_trajectories, split_shard, train_split_len};
use crate::koopman::project_spectral;
use crate::reservoir::{ReservoirBank, StateTrace};
use crate::{Error, Result};

/// Hyperparameters of one client's local phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalSettings {
    pub epochs: usize,
    pub inner_batch: usize,
    pub outer_batch: usize,
    pub weight_decay: f64,
    pub rho_target: f64,
    pub adam: AdamConfig,
}

impl Default for LocalSettings {
    fn default() -> Self {
        LocalSettings {
            epochs: 5,
            inner_batch: 512,
            outer_batch: 128,
            weight_decay: 1e-4,
            rho_target: 0.99,
            adam: AdamConfig::default(),
        }
    }
}

/// Held-out losses averaged per pair and per predicted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationLoss {
    pub inner: f64,
    pub outer: f64,
}

/// One client's standardized training series with its cached reservoir
/// trace and the index sets of every loss term.
///
/// The series is cut into a training part `[0, train_len)` and a validation
/// tail. The training part is split at `s`: pairs inside `[washout, s)` feed
/// the inner problem and trajectories tiling `[s - 1, train_len)` the outer
/// one. The validation tail is used the same way for both losses.
#[derive(Debug, Clone)]
pub struct ClientData {
    pub id: usize,
    pub values: Array2<f64>,
    pub trace: StateTrace,
    pub train_len: usize,
    pub s: usize,
    pub inner_pairs: Vec<usize>,
    pub outer: Vec<OuterSample>,
    pub val_pairs: Vec<usize>,
    pub val_outer: Vec<OuterSample>,
}

fn samples_from(
    values: ArrayView2<f64>,
    trace: &StateTrace,
    start: usize,
    end: usize,
    horizon: usize,
) -> Result<Vec<OuterSample>> {
    let block = values.slice(s![.., start..end]);
    Ok(make_trajectories(block, horizon)?
        .into_iter()
        .filter(|tr| start + tr.start_index >= trace.washout)
        .map(|tr| OuterSample {
            r0: trace.states.column(start + tr.start_index).to_owned(),
            targets: tr.targets,
        })
        .collect())
}

impl ClientData {
    /// `values` must already be standardized (`n × L`).
    pub fn new(
        id: usize,
        values: Array2<f64>,
        bank: &ReservoirBank,
        train_fraction: f64,
        s_fraction: f64,
        horizon: usize,
        washout: usize,
    ) -> Result<Self> {
        let len = values.ncols();
        let train_len = train_split_len(len, train_fraction)?;
        let split = split_shard(values.slice(s![.., ..train_len]), s_fraction)?;
        let s = split.s;
        let trace = bank.run(values.view(), None, washout)?;

        let inner_pairs: Vec<usize> = (washout..s.saturating_sub(1)).collect();
        if inner_pairs.is_empty() {
            return Err(Error::Shape(format!(
                "client {id}: inner block of {s} steps is inside the washout of {washout}"
            )));
        }
        let outer = samples_from(
            values.view(),
            &trace,
            split.outer_offset(),
            train_len,
            horizon,
        )?;
        if outer.is_empty() {
            return Err(Error::Shape(format!(
                "client {id}: outer block yields no trajectories"
            )));
        }
        let val_pairs: Vec<usize> = (train_len.max(washout)..len - 1).collect();
        let val_outer = samples_from(values.view(), &trace, train_len, len, horizon)?;

        Ok(ClientData {
            id,
            values,
            trace,
            train_len,
            s,
            inner_pairs,
            outer,
            val_pairs,
            val_outer,
        })
    }

    pub fn n_features(&self) -> usize {
        self.values.nrows()
    }

    fn inner_batch(&self, model: &ReKoModel, pairs: &[usize]) -> InnerBatchView {
        let next: Vec<usize> = pairs.iter().map(|t| t + 1).collect();
        let readout = model.readout();
        InnerBatchView {
            phi_t: readout.apply_columns(self.trace.states.select(Axis(1), pairs).view()),
            phi_t1: readout.apply_columns(self.trace.states.select(Axis(1), &next).view()),
            x_t1: self.values.select(Axis(1), &next),
        }
    }

    /// Held-out losses of `model`, without weight decay.
    pub fn validation_loss(&self, model: &ReKoModel, propagator: &Propagator) -> ValidationLoss {
        let inner = if self.val_pairs.is_empty() {
            f64::NAN
        } else {
            let batch = self.inner_batch(model, &self.val_pairs);
            inner_loss_grad(model.k.view(), model.v.view(), &batch, 0.0).0
                / self.val_pairs.len() as f64
        };
        let steps: usize = self.val_outer.iter().map(|t| t.targets.ncols()).sum();
        let outer = if steps == 0 {
            f64::NAN
        } else {
            outer_loss_grad(
                model.w.view(),
                model.v.view(),
                propagator,
                &self.val_outer,
                model.readout,
                0.0,
            )
            .loss
                / steps as f64
        };
        ValidationLoss { inner, outer }
    }
}

fn check_finite(a: &Array2<f64>, what: &str, round: usize, client: usize) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Training {
            round,
            client,
            message: format!("{what} became non-finite"),
        })
    }
}

/// Adam over shuffled pair batches on `K` with `W` and `V` fixed, projecting
/// onto the spectral-radius ball after every epoch. Returns the new `K`.
pub fn local_inner_solve<R: Rng + ?Sized>(
    client: &ClientData,
    model: &ReKoModel,
    settings: &LocalSettings,
    round: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let mut k = model.k.clone();
    if settings.epochs == 0 {
        return Ok(k);
    }
    let batch_size = settings.inner_batch.max(1);
    let mut opt = OptimizerState::new(k.dim(), settings.adam);
    let mut order = client.inner_pairs.clone();
    for _ in 0..settings.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let batch = client.inner_batch(model, chunk);
            let (_, grad) =
                inner_loss_grad(k.view(), model.v.view(), &batch, settings.weight_decay);
            adam_step(&mut opt, &mut k, grad.view());
        }
        check_finite(&k, "Koopman operator", round, client.id)?;
        k = project_spectral(k.view(), settings.rho_target)?;
    }
    Ok(k)
}

/// Adam over shuffled trajectory batches on `W` and `V` with the round's
/// eigenvalues fixed. Returns the new `(W, V)`.
pub fn local_outer_solve<R: Rng + ?Sized>(
    client: &ClientData,
    model: &ReKoModel,
    propagator: &Propagator,
    settings: &LocalSettings,
    round: usize,
    rng: &mut R,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut w = model.w.clone();
    let mut v = model.v.clone();
    if settings.epochs == 0 {
        return Ok((w, v));
    }
    let batch_size = settings.outer_batch.max(1);
    let mut opt_w = OptimizerState::new(w.dim(), settings.adam);
    let mut opt_v = OptimizerState::new(v.dim(), settings.adam);
    let mut order: Vec<usize> = (0..client.outer.len()).collect();
    for _ in 0..settings.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            let g = outer_loss_grad(
                w.view(),
                v.view(),
                propagator,
                chunk.iter().map(|&i| &client.outer[i]),
                model.readout,
                settings.weight_decay,
            );
            adam_step(&mut opt_w, &mut w, g.grad_w.view());
            adam_step(&mut opt_v, &mut v, g.grad_v.view());
        }
        check_finite(&w, "readout", round, client.id)?;
        check_finite(&v, "reconstruction matrix", round, client.id)?;
    }
    Ok((w, v))
}
