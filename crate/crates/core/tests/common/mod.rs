#![allow(dead_code)]

use koopres::bilevel::{
    adam_step, inner_closed_form, inner_loss, inner_loss_grad, outer_loss, outer_loss_grad,
    AdamConfig, InnerBatchView, OptimizerState, OuterSample, Propagator,
};
use koopres::reservoir::Activation;
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
}

pub fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|x| x * x).sum().sqrt();
    let scale = b.mapv(|x| x * x).sum().sqrt().max(1e-300);
    diff / scale
}

/// Central differences of `f` around `x`, one entry at a time.
pub fn numeric_grad(x: &Array2<f64>, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = probe[idx];
        probe[idx] = orig + FD_STEP;
        let up = f(&probe);
        probe[idx] = orig - FD_STEP;
        let down = f(&probe);
        probe[idx] = orig;
        g[idx] = (up - down) / (2.0 * FD_STEP);
    }
    g
}

pub fn inner_instance(
    seed: u64,
    m: usize,
    n: usize,
    b: usize,
) -> (Array2<f64>, Array2<f64>, InnerBatchView) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = random(&mut rng, m, m) * 0.5;
    let v = random(&mut rng, m, n);
    let batch = InnerBatchView {
        phi_t: random(&mut rng, m, b),
        phi_t1: random(&mut rng, m, b),
        x_t1: random(&mut rng, n, b),
    };
    (k, v, batch)
}

/// Relative error between the analytic and finite-difference inner gradient.
pub fn inner_fd_error(seed: u64) -> f64 {
    let (k, v, batch) = inner_instance(seed, 4, 3, 10);
    let wd = 1e-2;
    let (_, analytic) = inner_loss_grad(k.view(), v.view(), &batch, wd);
    let numeric = numeric_grad(&k, |kk| inner_loss(kk.view(), v.view(), &batch, wd));
    rel_err(&analytic, &numeric)
}

pub struct OuterInstance {
    pub w: Array2<f64>,
    pub v: Array2<f64>,
    pub propagator: Propagator,
    pub samples: Vec<OuterSample>,
}

/// Random `m=6, d=5, n=3, H=4` instance. Eigenvalues come in a conjugate pair
/// plus real values so the damped-cosine factors are exercised.
pub fn outer_instance(seed: u64, power: bool) -> OuterInstance {
    let (m, d, n, h) = (6, 5, 3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, m, d);
    let v = random(&mut rng, m, n);
    let propagator = if power {
        Propagator::Power(random(&mut rng, m, m) * 0.4)
    } else {
        let re = rng.random_range(-0.9..0.9);
        let im = rng.random_range(0.05..0.4);
        let mut lambdas = vec![Complex64::new(re, im), Complex64::new(re, -im)];
        while lambdas.len() < m {
            lambdas.push(Complex64::new(rng.random_range(-0.95..0.95), 0.0));
        }
        Propagator::modes(&lambdas, h)
    };
    let samples = (0..3)
        .map(|_| OuterSample {
            r0: random(&mut rng, d, 1).column(0).to_owned(),
            targets: random(&mut rng, n, h),
        })
        .collect();
    OuterInstance {
        w,
        v,
        propagator,
        samples,
    }
}

/// Worst relative error over the `W` and `V` blocks.
pub fn outer_fd_error(seed: u64, readout: Activation, power: bool) -> f64 {
    let inst = outer_instance(seed, power);
    let wd = 1e-2;
    let g = outer_loss_grad(
        inst.w.view(),
        inst.v.view(),
        &inst.propagator,
        &inst.samples,
        readout,
        wd,
    );
    let num_w = numeric_grad(&inst.w, |w| {
        outer_loss(
            w.view(),
            inst.v.view(),
            &inst.propagator,
            &inst.samples,
            readout,
            wd,
        )
    });
    let num_v = numeric_grad(&inst.v, |v| {
        outer_loss(
            inst.w.view(),
            v.view(),
            &inst.propagator,
            &inst.samples,
            readout,
            wd,
        )
    });
    rel_err(&g.grad_w, &num_w).max(rel_err(&g.grad_v, &num_v))
}

/// Closed-form inner minimizer against full-batch Adam from zero on an
/// `m=8, b=64` instance. Returns the relative Frobenius distance and the
/// gradient norm at the closed-form solution.
pub fn closed_form_vs_adam(seed: u64, steps: usize, lr: f64) -> (f64, f64) {
    let (m, n, b) = (8, 3, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k_true = random(&mut rng, m, m) * 0.3;
    let v = random(&mut rng, m, n) * 0.5;
    let phi_t = random(&mut rng, m, b);
    let phi_t1 = k_true.dot(&phi_t) + random(&mut rng, m, b) * 0.05;
    let x_t1 = v.t().dot(&phi_t1) + random(&mut rng, n, b) * 0.05;
    let batch = InnerBatchView {
        phi_t,
        phi_t1,
        x_t1,
    };
    let wd = 1e-4;

    let closed = inner_closed_form(v.view(), &batch, wd).expect("well-posed instance");
    let (_, g) = inner_loss_grad(closed.view(), v.view(), &batch, wd);
    let grad_norm = g.mapv(|x| x * x).sum().sqrt();

    let mut k = Array2::zeros((m, m));
    let mut opt = OptimizerState::new(
        (m, m),
        AdamConfig {
            lr,
            ..AdamConfig::default()
        },
    );
    for _ in 0..steps {
        let (_, g) = inner_loss_grad(k.view(), v.view(), &batch, wd);
        adam_step(&mut opt, &mut k, g.view());
    }
    (rel_err(&k, &closed), grad_norm)
}

pub mod oracle {
    use koopres::config::FedConfig;
    use koopres::data::Dataset;
    use koopres::detect::{self, EvalNode, EvalReport, ThresholdMode};
    use koopres::pipeline::{self, SynthSpec, Trained};
    use koopres::reservoir::ReservoirParams;

    pub const SEEDS: [u64; 3] = [11, 22, 33];

    pub fn spec(seed: u64) -> SynthSpec {
        SynthSpec {
            nodes: 4,
            len: 2000,
            features: 5,
            rho_a: 0.9,
            noise_std: 0.05,
            anomaly_rate: 0.05,
            magnitude: 8.0,
            seed,
        }
    }

    pub fn config(seed: u64, beta: f64) -> FedConfig {
        FedConfig {
            rounds: 10,
            sample_rate: 1.0,
            beta,
            m: 32,
            reservoir: ReservoirParams {
                d: 64,
                ..ReservoirParams::default()
            },
            seed,
            ..FedConfig::default()
        }
    }

    pub struct Run {
        pub trained: Trained,
        pub report: EvalReport,
    }

    pub fn run(seed: u64, beta: f64) -> Run {
        let nodes = pipeline::gen_synth(&spec(seed)).expect("synthetic data");
        let cfg = config(seed, beta);
        let trains: Vec<Dataset> = nodes.iter().map(|n| n.train.clone()).collect();
        let trained = pipeline::train_datasets(&cfg, &trains).expect("training");
        let evals: Vec<EvalNode> = nodes
            .iter()
            .map(|n| {
                pipeline::eval_node(&n.train.name, &n.train, &n.test, &cfg).expect("eval node")
            })
            .collect();
        let (report, _) = detect::evaluate(
            &trained.bundle.model,
            &trained.bundle.bank,
            &evals,
            ThresholdMode::BestF1,
            1,
            cfg.washout,
        )
        .expect("evaluation");
        Run { trained, report }
    }
}

pub mod spectral {
    use super::random;
    use koopres::koopman::{eig, predict_modes, predict_power};
    use ndarray::{Array1, Array2};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Eigenpair residual of a dense Gaussian `m × m` matrix.
    pub fn random_residual(seed: u64, m: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = random(&mut rng, m, m) / (m as f64).sqrt();
        eig(k.view()).expect("diagonalizable").residual
    }

    fn invert(a: &Array2<f64>) -> Array2<f64> {
        use faer::linalg::solvers::DenseSolveCore;
        let m = faer::Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]]);
        let inv = m.partial_piv_lu().inverse();
        Array2::from_shape_fn(a.dim(), |(i, j)| inv[(i, j)])
    }

    /// `K = E diag(λ) E⁻¹` with real spectrum. The mode forecast reads the
    /// state in eigen-coordinates `E⁻¹ φ` with modes `Eᵀ V` and must match
    /// the matrix-power forecast of `φ`. Returns the worst relative error
    /// over `j = 0..=jmax`.
    pub fn modes_vs_power(seed: u64, m: usize, n: usize, jmax: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut e = random(&mut rng, m, m);
        for i in 0..m {
            e[[i, i]] += 3.0;
        }
        let lambdas: Vec<f64> = (0..m)
            .map(|i| {
                let mag = 0.98 - 0.9 * i as f64 / m as f64;
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        let e_inv = invert(&e);
        let k = e
            .dot(&Array2::from_diag(&Array1::from(lambdas.clone())))
            .dot(&e_inv);
        let v = random(&mut rng, m, n);
        let phi = random(&mut rng, m, 1).column(0).to_owned();

        // Use the decomposition computed by the library, not the construction.
        let sys = eig(k.view()).expect("diagonalizable");
        assert!(
            sys.lambdas.iter().all(|l| l.im == 0.0),
            "constructed spectrum is real"
        );
        let e_hat = sys.vectors.mapv(|z: Complex64| z.re);
        let coords = invert(&e_hat).dot(&phi);
        let modes_v = e_hat.t().dot(&v);

        let mut worst: f64 = 0.0;
        for j in 0..=jmax {
            let a = predict_modes(&sys.lambdas, modes_v.view(), coords.view(), j).unwrap();
            let b = predict_power(k.view(), v.view(), phi.view(), j).unwrap();
            let scale = b.dot(&b).sqrt().max(1e-300);
            let diff = &a - &b;
            worst = worst.max(diff.dot(&diff).sqrt() / scale);
        }
        worst
    }
}

pub mod metrics {
    /// Pair-counting AUC: `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`.
    pub fn auc_brute(scores: &[f64], labels: &[u8]) -> f64 {
        let mut twice = 0u64;
        let (mut np, mut nn) = (0u64, 0u64);
        for (i, &li) in labels.iter().enumerate() {
            if li == 1 {
                np += 1;
            } else {
                nn += 1;
            }
            if li != 1 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj == 1 {
                    continue;
                }
                if scores[i] > scores[j] {
                    twice += 2;
                } else if scores[i] == scores[j] {
                    twice += 1;
                }
            }
        }
        twice as f64 / (2 * np * nn) as f64
    }

    pub fn prf_brute(preds: &[u8], labels: &[u8]) -> (f64, f64, f64) {
        let mut cm = [[0usize; 2]; 2];
        for (&p, &l) in preds.iter().zip(labels) {
            cm[p as usize][l as usize] += 1;
        }
        let (tp, fp, fn_) = (cm[1][1], cm[1][0], cm[0][1]);
        let p = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let r = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f = if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        };
        (p, r, f)
    }

    /// Point adjustment straight from the definition: a step is predicted
    /// when it was, or when it is labeled and some step of the same labeled
    /// run (reached without crossing a normal step) was predicted.
    pub fn point_adjust_brute(preds: &[u8], labels: &[u8]) -> Vec<u8> {
        (0..preds.len())
            .map(|t| {
                if preds[t] == 1 {
                    return 1;
                }
                if labels[t] == 0 {
                    return 0;
                }
                let mut lo = t;
                while lo > 0 && labels[lo - 1] == 1 {
                    lo -= 1;
                }
                let mut hi = t;
                while hi + 1 < labels.len() && labels[hi + 1] == 1 {
                    hi += 1;
                }
                u8::from(preds[lo..=hi].contains(&1))
            })
            .collect()
    }

    /// Every label/prediction pair of length `len`.
    pub fn all_patterns(len: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
        let bits = |mask: usize| {
            (0..len)
                .map(|i| ((mask >> i) & 1) as u8)
                .collect::<Vec<u8>>()
        };
        let mut out = Vec::new();
        for l in 0..1usize << len {
            for p in 0..1usize << len {
                out.push((bits(l), bits(p)));
            }
        }
        out
    }
}
