//! Round-by-round simulation driver. Clients within a round are independent
//! and run in parallel when the `parallel` feature is enabled; aggregation is
//! a sequential reduction in client-id order, so results are bit-identical
//! across schedules and between the parallel and sequential paths.

use super::*;
use crate::compress::Payload;
use crate::data::{BatchCycle, ClientData, FederatedDataset};
use crate::models;
use crate::numkit::{Purpose, RngStream, SERVER};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution knobs that do not affect results.
#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    /// Run the per-client phase on the rayon pool. Requires the `parallel`
    /// feature; without it this flag falls back to sequential execution.
    pub parallel: bool,
    /// Record per-round movement/decode vectors for audits.
    pub trace: bool,
}

// Not derivable: the default depends on the compiled feature set.
#[allow(clippy::derivable_impls)]
impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            parallel: cfg!(feature = "parallel"),
            trace: false,
        }
    }
}

/// What one client produced in a round.
pub struct ClientOutput {
    pub upstream: Payload,
    /// Local movement `w_after - w_before`, before residual feedback.
    pub raw_move: ParamVector,
}

/// Per-round audit record (enabled by [`SimOptions::trace`]).
#[derive(Debug, Clone)]
pub struct ClientTrace {
    pub raw_move: ParamVector,
    pub upstream_decoded: ParamVector,
}

#[derive(Debug, Clone)]
pub struct RoundTrace {
    pub clients: Vec<Option<ClientTrace>>,
    /// Fresh weighted aggregate of decoded client updates.
    pub agg_raw: ParamVector,
    /// Aggregate plus the carried downstream residual.
    pub delta_g: ParamVector,
    /// Decoded form of the message encoded this round.
    pub broadcast_out_decoded: ParamVector,
}

#[derive(Debug, Clone, Copy)]
pub struct StepSummary {
    /// Clients whose updates entered this round's aggregate.
    pub participants: u32,
    /// Mean local step count over clients present this round.
    pub mean_s: f64,
    pub bits_up: u64,
    pub bits_down: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalSummary {
    pub train_loss: f64,
    pub test_acc_global: f64,
    pub test_acc_mean: f64,
    pub test_acc_std: f64,
}

/// Apply the broadcast, run `s` local SGD steps, and emit the (possibly
/// compressed) update with residual feedback. For the elastic algorithm the
/// Fisher statistics at the final iterate are stored on the client.
#[allow(clippy::too_many_arguments)]
pub fn client_update(
    state: &mut ClientState,
    train: &Batch,
    broadcast: Option<&Payload>,
    u_sum: &ParamVector,
    v_sum: &ParamVector,
    s: u32,
    model: &ModelSpec,
    hp: &HyperParams,
    round: u32,
    seed: u64,
) -> ClientOutput {
    assert!(s >= 1, "client_update requires at least one local step");
    if let Some(p) = broadcast {
        state.model.axpy(1.0, &p.decode());
    }
    let w_before = state.model.clone();
    let mut local = state.model.clone();
    let eta = lr(hp.lr, round);
    let mut cycle = BatchCycle::new(
        train,
        hp.batch_size,
        RngStream::new(seed, state.id, round, Purpose::BatchShuffle),
    );
    for _ in 0..s {
        let batch = cycle.next_batch();
        let g = match hp.algorithm {
            Algorithm::Efl => local_grad(
                model,
                &local,
                &batch,
                GradContext::Efl {
                    lambda: hp.lambda,
                    u_sum,
                    v_sum,
                },
            ),
            Algorithm::FedAvg => local_grad(model, &local, &batch, GradContext::FedAvg),
            Algorithm::FedProx { mu } => local_grad(
                model,
                &local,
                &batch,
                GradContext::FedProx {
                    mu,
                    anchor: &w_before,
                },
            ),
        };
        local.axpy(-eta, &g);
    }
    let raw_move = local.sub(&w_before);
    let delta = state.residual.scale_add(&raw_move, 1.0);
    let upstream = hp.up_codec().encode(&delta);
    state.residual = upstream.residual_from(&delta);

    if matches!(hp.algorithm, Algorithm::Efl) {
        let owned;
        let fisher_batch: &Batch = match hp.fisher_samples {
            Some(cap) if cap < train.len() => {
                let mut idx: Vec<usize> = (0..train.len()).collect();
                let mut fs = RngStream::new(seed, state.id, round, Purpose::Fisher);
                fs.shuffle(&mut idx);
                idx.truncate(cap);
                idx.sort_unstable();
                owned = train.select(&idx);
                &owned
            }
            _ => train,
        };
        let u = models::fisher_diag(model, &local, fisher_batch);
        let v = u.hadamard(&local);
        state.fisher = Some((u, v));
    }

    ClientOutput { upstream, raw_move }
}

/// Server-side coefficient for each client this round, or `None` when the
/// update is excluded. The elastic algorithm takes every client with work
/// (coefficients per the configured scheme, not renormalized); FedAvg keeps
/// only full-work clients and FedProx every working client, both with base
/// weights renormalized over the kept set.
fn aggregation_weights(
    hp: &HyperParams,
    clients: &[ClientState],
    s_all: &[u32],
) -> Vec<Option<f64>> {
    match hp.algorithm {
        Algorithm::Efl => clients
            .iter()
            .zip(s_all)
            .map(|(c, &s)| {
                (s >= 1).then(|| {
                    aggregation_coeff(hp.aggregation, c.base_weight, s, hp.local_steps, hp.theta)
                })
            })
            .collect(),
        Algorithm::FedAvg | Algorithm::FedProx { .. } => {
            let keep = |s: u32| match hp.algorithm {
                Algorithm::FedAvg => s == hp.local_steps,
                _ => s >= 1,
            };
            // Weights are sample-count ratios over the kept set, so with
            // everyone kept they equal the base weights exactly.
            let total: usize = clients
                .iter()
                .zip(s_all)
                .filter(|(_, &s)| keep(s))
                .map(|(c, _)| c.n_train)
                .sum();
            clients
                .iter()
                .zip(s_all)
                .map(|(c, &s)| {
                    (keep(s) && total > 0).then(|| c.n_train as f64 / total as f64)
                })
                .collect()
        }
    }
}

#[cfg(debug_assertions)]
struct Audit {
    cum_raw_move: Vec<ParamVector>,
    cum_up_decoded: Vec<ParamVector>,
    cum_agg_raw: ParamVector,
    cum_out_decoded: ParamVector,
}

/// One experiment run: a frozen dataset, model, hyperparameters, and
/// per-client participation behavior, advanced round by round.
pub struct Simulation {
    model: ModelSpec,
    hp: HyperParams,
    dataset: FederatedDataset,
    seed: u64,
    options: SimOptions,
    server: ServerState,
    clients: Vec<ClientState>,
    next_broadcast: Option<Payload>,
    last_trace: Option<RoundTrace>,
    #[cfg(debug_assertions)]
    audit: Audit,
}

impl Simulation {
    pub fn new(
        dataset: FederatedDataset,
        model: ModelSpec,
        hp: HyperParams,
        participation: Vec<ParticipationSpec>,
        seed: u64,
        options: SimOptions,
    ) -> Simulation {
        let n = dataset.n_clients();
        assert_eq!(participation.len(), n, "one participation spec per client");
        assert!(n > 0, "need at least one client");
        for c in &dataset.clients {
            assert_eq!(c.train.input_dim(), model.input_dim, "dataset/model input_dim mismatch");
            assert!(!c.train.is_empty(), "client with empty train partition");
        }
        if let Some(c) = model.classes() {
            assert!(
                dataset.class_count <= c,
                "dataset has {} classes but model only {}",
                dataset.class_count,
                c
            );
        }

        let d = model.param_dim();
        let mut init_stream = RngStream::new(seed, SERVER, 0, Purpose::Init);
        let w0 = models::init_weights(&model, &mut init_stream);

        // Base weights over clients present at round 0; later arrivals keep
        // the same denominator, mirroring the objective-shift framing.
        let n0: usize = dataset
            .clients
            .iter()
            .zip(&participation)
            .filter(|(_, p)| p.present(0))
            .map(|(c, _)| c.train.len())
            .sum();
        assert!(n0 > 0, "no client present at round 0");

        let clients: Vec<ClientState> = dataset
            .clients
            .iter()
            .zip(&participation)
            .enumerate()
            .map(|(k, (c, &p))| ClientState {
                id: k as u32,
                n_train: c.train.len(),
                base_weight: c.train.len() as f64 / n0 as f64,
                model: w0.clone(),
                residual: ParamVector::zeros(d),
                fisher: None,
                participation: p,
            })
            .collect();

        Simulation {
            model,
            hp,
            dataset,
            seed,
            options,
            server: ServerState {
                w_sync: w0,
                residual: ParamVector::zeros(d),
                u_sum: ParamVector::zeros(d),
                v_sum: ParamVector::zeros(d),
                round: 0,
            },
            clients,
            next_broadcast: None,
            last_trace: None,
            #[cfg(debug_assertions)]
            audit: Audit {
                cum_raw_move: vec![ParamVector::zeros(d); n],
                cum_up_decoded: vec![ParamVector::zeros(d); n],
                cum_agg_raw: ParamVector::zeros(d),
                cum_out_decoded: ParamVector::zeros(d),
            },
        }
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn dataset(&self) -> &FederatedDataset {
        &self.dataset
    }

    pub fn hp(&self) -> &HyperParams {
        &self.hp
    }

    pub fn model_spec(&self) -> &ModelSpec {
        &self.model
    }

    pub fn round(&self) -> u32 {
        self.server.round
    }

    pub fn last_trace(&self) -> Option<&RoundTrace> {
        self.last_trace.as_ref()
    }

    /// Execute one protocol round.
    pub fn step(&mut self) -> StepSummary {
        let round = self.server.round;
        let d = self.model.param_dim();
        let specs: Vec<ParticipationSpec> =
            self.clients.iter().map(|c| c.participation).collect();
        let s_all = sample_s(&specs, round, self.hp.local_steps, self.seed);
        let weights = aggregation_weights(&self.hp, &self.clients, &s_all);
        let broadcast = self.next_broadcast.take();

        let present: Vec<bool> = specs.iter().map(|p| p.present(round)).collect();
        let receivers = present.iter().filter(|p| **p).count() as u64;
        let bits_down = broadcast.as_ref().map_or(0, |p| p.bits() * receivers);

        let outputs = client_phase(
            &mut self.clients,
            &self.dataset.clients,
            &self.model,
            &self.hp,
            &self.server,
            self.seed,
            round,
            &s_all,
            &weights,
            broadcast.as_ref(),
            self.options.parallel,
        );

        #[cfg(debug_assertions)]
        {
            // Sync consistency: every client base model equals w_sync exactly
            // at the round boundary (both have applied the same broadcasts).
            for c in &self.clients {
                debug_assert_eq!(
                    c.model.max_abs_diff(&self.server.w_sync),
                    0.0,
                    "client {} out of sync at round {round}",
                    c.id
                );
            }
        }

        // Sequential reduction in client-id order.
        let mut agg_raw = ParamVector::zeros(d);
        let mut bits_up = 0u64;
        let mut participants = 0u32;
        for (k, out) in outputs.iter().enumerate() {
            if let Some(out) = out {
                let coeff = weights[k].expect("output without a coefficient");
                agg_raw.axpy(coeff, &out.upstream.decode());
                bits_up += out.upstream.bits();
                participants += 1;
            }
        }

        let (delta_g, out_decoded) = if participants > 0 {
            let delta_g = self.server.residual.scale_add(&agg_raw, 1.0);
            let msg = self.hp.down_codec().encode(&delta_g);
            self.server.residual = msg.residual_from(&delta_g);
            let out_decoded = msg.decode();
            self.server.w_sync.axpy(1.0, &out_decoded);
            self.next_broadcast = Some(msg);
            (delta_g, out_decoded)
        } else {
            // No useful work anywhere: the round is a no-op and nothing is
            // broadcast next round.
            self.next_broadcast = None;
            (ParamVector::zeros(d), ParamVector::zeros(d))
        };

        // Fisher sums over the latest report of every client still in the
        // federation next round (departures drop out, stale entries persist).
        let mut u_sum = ParamVector::zeros(d);
        let mut v_sum = ParamVector::zeros(d);
        for c in &self.clients {
            if let Some((u, v)) = &c.fisher {
                if c.participation.present(round + 1) {
                    u_sum.axpy(1.0, u);
                    v_sum.axpy(1.0, v);
                }
            }
        }
        self.server.u_sum = u_sum;
        self.server.v_sum = v_sum;

        #[cfg(debug_assertions)]
        {
            for (k, out) in outputs.iter().enumerate() {
                if let Some(out) = out {
                    self.audit.cum_raw_move[k].axpy(1.0, &out.raw_move);
                    self.audit.cum_up_decoded[k].axpy(1.0, &out.upstream.decode());
                    let lhs = self.audit.cum_up_decoded[k]
                        .scale_add(&self.clients[k].residual, 1.0);
                    debug_assert!(
                        lhs.max_abs_diff(&self.audit.cum_raw_move[k]) <= 1e-9,
                        "upstream telescoping broken for client {k} at round {round}"
                    );
                }
            }
            self.audit.cum_agg_raw.axpy(1.0, &agg_raw);
            self.audit.cum_out_decoded.axpy(1.0, &out_decoded);
            let lhs = self.audit.cum_out_decoded.scale_add(&self.server.residual, 1.0);
            debug_assert!(
                lhs.max_abs_diff(&self.audit.cum_agg_raw) <= 1e-9,
                "downstream telescoping broken at round {round}"
            );
        }

        if self.options.trace {
            self.last_trace = Some(RoundTrace {
                clients: outputs
                    .iter()
                    .map(|o| {
                        o.as_ref().map(|out| ClientTrace {
                            raw_move: out.raw_move.clone(),
                            upstream_decoded: out.upstream.decode(),
                        })
                    })
                    .collect(),
                agg_raw,
                delta_g,
                broadcast_out_decoded: out_decoded,
            });
        }

        let present_count: u32 = present.iter().map(|p| u32::from(*p)).sum();
        let mean_s = if present_count > 0 {
            s_all
                .iter()
                .zip(&present)
                .filter(|(_, p)| **p)
                .map(|(&s, _)| s as f64)
                .sum::<f64>()
                / present_count as f64
        } else {
            0.0
        };

        self.server.round += 1;
        StepSummary {
            participants,
            mean_s,
            bits_up,
            bits_down,
        }
    }

    /// Evaluate the synchronized model: sample-weighted train loss over all
    /// clients, accuracy on the shared test set, and the per-client test
    /// accuracy mean/std. Accuracy fields are NaN for regression models.
    pub fn evaluate(&self) -> EvalSummary {
        let w = &self.server.w_sync;
        let total: usize = self.dataset.clients.iter().map(|c| c.train.len()).sum();
        let mut train_loss = 0.0;
        for c in &self.dataset.clients {
            let p = c.train.len() as f64 / total as f64;
            train_loss += p * models::loss(&self.model, w, &c.train);
        }

        if !self.model.is_classification() {
            return EvalSummary {
                train_loss,
                test_acc_global: f64::NAN,
                test_acc_mean: f64::NAN,
                test_acc_std: f64::NAN,
            };
        }

        let test_acc_global = if self.dataset.global_test.is_empty() {
            f64::NAN
        } else {
            models::accuracy(&self.model, w, &self.dataset.global_test)
        };

        let accs: Vec<f64> = self
            .dataset
            .clients
            .iter()
            .filter(|c| !c.test.is_empty())
            .map(|c| models::accuracy(&self.model, w, &c.test))
            .collect();
        let (mean, std) = if accs.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / accs.len() as f64;
            (mean, var.sqrt())
        };

        EvalSummary {
            train_loss,
            test_acc_global,
            test_acc_mean: mean,
            test_acc_std: std,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn client_phase(
    clients: &mut [ClientState],
    data: &[ClientData],
    model: &ModelSpec,
    hp: &HyperParams,
    server: &ServerState,
    seed: u64,
    round: u32,
    s_all: &[u32],
    weights: &[Option<f64>],
    broadcast: Option<&Payload>,
    parallel: bool,
) -> Vec<Option<ClientOutput>> {
    let run_one = |(k, state): (usize, &mut ClientState)| -> Option<ClientOutput> {
        if weights[k].is_some() {
            Some(client_update(
                state,
                &data[k].train,
                broadcast,
                &server.u_sum,
                &server.v_sum,
                s_all[k],
                model,
                hp,
                round,
                seed,
            ))
        } else {
            // Skipped clients (inactive, departed, abandoned stragglers)
            // still receive the broadcast so they stay in sync.
            if let Some(p) = broadcast {
                state.model.axpy(1.0, &p.decode());
            }
            None
        }
    };

    #[cfg(feature = "parallel")]
    if parallel {
        return clients.par_iter_mut().enumerate().map(run_one).collect();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallel;
    clients.iter_mut().enumerate().map(run_one).collect()
}

/// Run `hp.rounds` rounds and collect metrics every `eval_every` rounds
/// (always including the final round).
pub fn run_rounds(
    dataset: FederatedDataset,
    model: ModelSpec,
    hp: HyperParams,
    participation: Vec<ParticipationSpec>,
    seed: u64,
    eval_every: u32,
    options: SimOptions,
) -> Vec<RoundMetrics> {
    assert!(eval_every >= 1, "eval_every must be at least 1");
    let rounds = hp.rounds;
    let mut sim = Simulation::new(dataset, model, hp, participation, seed, options);
    let mut out = Vec::new();
    for round in 0..rounds {
        let t0 = std::time::Instant::now();
        let step = sim.step();
        let wall_ms = t0.elapsed().as_millis() as u64;
        if (round + 1) % eval_every == 0 || round + 1 == rounds {
            let ev = sim.evaluate();
            out.push(RoundMetrics {
                round,
                train_loss: ev.train_loss,
                test_acc_global: ev.test_acc_global,
                test_acc_mean: ev.test_acc_mean,
                test_acc_std: ev.test_acc_std,
                bits_up: step.bits_up,
                bits_down: step.bits_down,
                participants: step.participants,
                mean_s: step.mean_s,
                wall_ms,
                w_norm: sim.server().w_sync.norm2(),
            });
        }
    }
    out
}
