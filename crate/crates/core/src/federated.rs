//! The federated round loop: sampling, local solves, momentum aggregation,
//! spectral projection and broadcast.
//!
//! Each round runs two barrier-separated phases. Sampled clients first fit
//! `K` locally; the server blends the results into the global `K`, projects
//! it and broadcasts it. The server then extracts the eigenvalues once,
//! sampled clients refine `W` and `V` against them, and the server blends and
//! broadcasts those.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::index;

use crate::bilevel::{
    local_inner_solve, local_outer_solve, ClientData, LocalSettings, Propagator, ReKoModel,
};
use crate::config::FedConfig;
use crate::koopman::{eig, project_spectral_report, spectral_radius};
use crate::par;
use crate::reservoir::ReservoirBank;
use crate::seed::{self, Stream};
use crate::{Error, Result};

/// Sorted ids of `max(1, ceil(rate·n))` clients drawn without replacement.
pub fn sample_clients(n: usize, rate: f64, round: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidParameter("no clients to sample from".into()));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sample rate must lie in (0, 1], got {rate}"
        )));
    }
    // The small slack keeps products like 0.25 * 24 from rounding up.
    let size = ((rate * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut rng = seed::rng(seed, round as u64, 0, Stream::Sampling);
    let mut ids = index::sample(&mut rng, n, size).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// `β · prev + (1 − β) · mean(locals)`, summing locals in the given order.
pub fn aggregate_momentum(
    prev: &Array2<f64>,
    locals: &[Array2<f64>],
    beta: f64,
) -> Result<Array2<f64>> {
    if locals.is_empty() {
        return Err(Error::InvalidParameter("nothing to aggregate".into()));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidParameter(format!(
            "beta must lie in [0, 1], got {beta}"
        )));
    }
    if let Some(bad) = locals.iter().find(|l| l.dim() != prev.dim()) {
        return Err(Error::Shape(format!(
            "local parameter is {:?}, global is {:?}",
            bad.dim(),
            prev.dim()
        )));
    }
    if beta == 1.0 {
        return Ok(prev.clone());
    }
    let mut mean = locals[0].clone();
    for l in &locals[1..] {
        mean += l;
    }
    mean /= locals.len() as f64;
    if beta == 0.0 {
        return Ok(mean);
    }
    mean *= 1.0 - beta;
    mean.scaled_add(beta, prev);
    Ok(mean)
}

/// Summary of one round. Losses are validation losses of the global model
/// after the round, averaged over all clients.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub sampled: Vec<usize>,
    pub inner_loss: f64,
    pub outer_loss: f64,
    pub rho_before: f64,
    pub rho_after: f64,
    pub seconds: f64,
    /// True when the round used matrix powers instead of modes.
    pub power_fallback: bool,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub model: ReKoModel,
    pub round: usize,
    pub beta: f64,
    pub rho_target: f64,
    pub history: Vec<RoundRecord>,
}

impl ServerState {
    pub fn new(model: ReKoModel, beta: f64, rho_target: f64) -> Self {
        ServerState {
            model,
            round: 0,
            beta,
            rho_target,
            history: Vec::new(),
        }
    }
}

/// One client slot: its data and its copy of the model.
#[derive(Debug, Clone)]
pub struct ClientSlot {
    pub data: ClientData,
    pub model: ReKoModel,
}

/// All clients together with the reservoir they share.
#[derive(Debug, Clone)]
pub struct ClientRegistry {
    pub bank: ReservoirBank,
    pub clients: Vec<ClientSlot>,
}

impl ClientRegistry {
    pub fn new(bank: ReservoirBank, data: Vec<ClientData>, initial: &ReKoModel) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidParameter("need at least one client".into()));
        }
        if let Some(c) = data.iter().find(|c| c.n_features() != initial.n_features()) {
            return Err(Error::Shape(format!(
                "client {} has {} features, model expects {}",
                c.id,
                c.n_features(),
                initial.n_features()
            )));
        }
        let clients = data
            .into_iter()
            .map(|data| ClientSlot {
                data,
                model: initial.clone(),
            })
            .collect();
        Ok(ClientRegistry { bank, clients })
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    fn broadcast(&mut self, f: impl Fn(&mut ReKoModel)) {
        for c in &mut self.clients {
            f(&mut c.model);
        }
    }
}

fn mean_finite(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = xs
        .filter(|x| x.is_finite())
        .fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Knobs of the round loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundSettings {
    pub sample_rate: f64,
    pub horizon: usize,
    pub seed: u64,
    pub local: LocalSettings,
}

impl RoundSettings {
    pub fn from_config(cfg: &FedConfig) -> Self {
        RoundSettings {
            sample_rate: cfg.sample_rate,
            horizon: cfg.horizon,
            seed: cfg.seed,
            local: cfg.local_settings(),
        }
    }
}

/// Runs the next round and appends its record to the server history.
pub fn run_round(
    server: &mut ServerState,
    registry: &mut ClientRegistry,
    settings: &RoundSettings,
) -> Result<()> {
    let started = Instant::now();
    let round = server.round + 1;
    let sampled = sample_clients(registry.len(), settings.sample_rate, round, settings.seed)?;
    let local = &settings.local;
    let client_rng = |id: usize, stream| seed::rng(settings.seed, round as u64, id as u64, stream);

    // Inner phase.
    let slots: Vec<&ClientSlot> = sampled.iter().map(|&i| &registry.clients[i]).collect();
    let ks: Vec<Array2<f64>> = par::map_ordered_ref(&slots, |c| {
        let mut rng = client_rng(c.data.id, Stream::Inner);
        local_inner_solve(&c.data, &c.model, local, round, &mut rng)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let blended = aggregate_momentum(&server.model.k, &ks, server.beta)?;
    let projection = project_spectral_report(blended.view(), server.rho_target)?;
    server.model.k = projection.k;
    let k = server.model.k.clone();
    registry.broadcast(|m| m.k.clone_from(&k));

    // Eigenvalues are extracted once from the broadcast operator; every
    // sampled client would obtain the same ones.
    let (propagator, power_fallback, rho_after) = match eig(server.model.k.view()) {
        Ok(sys) => (
            Propagator::modes(&sys.lambdas, settings.horizon),
            false,
            sys.spectral_radius(),
        ),
        Err(e @ (Error::NearDefective { .. } | Error::EigenFailure)) => {
            log::warn!("round {round}: {e}; using matrix powers");
            let rho = spectral_radius(server.model.k.view())?;
            (Propagator::Power(server.model.k.clone()), true, rho)
        }
        Err(e) => return Err(e),
    };

    // Outer phase.
    let slots: Vec<&ClientSlot> = sampled.iter().map(|&i| &registry.clients[i]).collect();
    let wvs: Vec<(Array2<f64>, Array2<f64>)> = par::map_ordered_ref(&slots, |c| {
        let mut rng = client_rng(c.data.id, Stream::Outer);
        local_outer_solve(&c.data, &c.model, &propagator, local, round, &mut rng)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let (ws, vs): (Vec<_>, Vec<_>) = wvs.into_iter().unzip();
    server.model.w = aggregate_momentum(&server.model.w, &ws, server.beta)?;
    server.model.v = aggregate_momentum(&server.model.v, &vs, server.beta)?;
    let (w, v) = (server.model.w.clone(), server.model.v.clone());
    registry.broadcast(|m| {
        m.w.clone_from(&w);
        m.v.clone_from(&v);
    });
    if !server.model.is_finite() {
        return Err(Error::Training {
            round,
            client: usize::MAX,
            message: "global model became non-finite".into(),
        });
    }

    let model = &server.model;
    let losses = par::map_ordered_ref(&registry.clients, |c| {
        c.data.validation_loss(model, &propagator)
    });
    let record = RoundRecord {
        round,
        sampled,
        inner_loss: mean_finite(losses.iter().map(|l| l.inner)),
        outer_loss: mean_finite(losses.iter().map(|l| l.outer)),
        rho_before: projection.rho_before,
        rho_after,
        seconds: started.elapsed().as_secs_f64(),
        power_fallback,
    };
    log::info!(
        "round {round}: clients {:?}, val inner {:.5}, val outer {:.5}, rho {:.4} -> {:.4}",
        record.sampled,
        record.inner_loss,
        record.outer_loss,
        record.rho_before,
        record.rho_after
    );
    server.history.push(record);
    server.round = round;
    Ok(())
}

/// Runs `rounds` rounds starting from `initial`, which also serves as the
/// previous global model of the first aggregation.
pub fn train(
    registry: &mut ClientRegistry,
    initial: ReKoModel,
    rounds: usize,
    beta: f64,
    settings: &RoundSettings,
) -> Result<ServerState> {
    let mut server = ServerState::new(initial, beta, settings.local.rho_target);
    for _ in 0..rounds {
        run_round(&mut server, registry, settings)?;
    }
    Ok(server)
}

pub const HISTORY_HEADER: [&str; 7] = [
    "round",
    "n_sampled",
    "inner_loss",
    "outer_loss",
    "rho_before",
    "rho_after",
    "seconds",
];

pub fn write_history(path: impl AsRef<Path>, history: &[RoundRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "{}", HISTORY_HEADER.join(",")).map_err(io)?;
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.round,
            r.sampled.len(),
            r.inner_loss,
            r.outer_loss,
            r.rho_before,
            r.rho_after,
            r.seconds
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}
