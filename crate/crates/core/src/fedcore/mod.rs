//! The federated round protocol: elastic local objective, client updates with
//! residual feedback, server aggregation with a downstream residual,
//! participation models, and aggregation-coefficient schemes. FedAvg and
//! FedProx run through the same machinery as baselines.

mod sim;

pub use sim::{
    client_update, run_rounds, ClientOutput, ClientTrace, EvalSummary, RoundTrace, SimOptions,
    Simulation, StepSummary,
};

use crate::compress::Codec;
use crate::models::{self, Batch, ModelSpec};
use crate::numkit::{ParamVector, RngStream};
use serde::{Deserialize, Serialize};

/// Learning-rate schedule over rounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant { eta0: f64 },
    /// `eta0 * gamma0 / (round + gamma0)`.
    InverseTime { eta0: f64, gamma0: f64 },
}

/// Learning rate for round `round` (0-based).
pub fn lr(schedule: LrSchedule, round: u32) -> f64 {
    match schedule {
        LrSchedule::Constant { eta0 } => eta0,
        LrSchedule::InverseTime { eta0, gamma0 } => eta0 * gamma0 / (round as f64 + gamma0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm {
    /// Elastic objective, ternary compression, adaptive coefficients.
    Efl,
    /// Plain local SGD; incomplete clients' updates are dropped entirely.
    FedAvg,
    /// FedAvg plus a proximal pull toward the synchronized model.
    FedProx { mu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationScheme {
    /// Base weight as-is.
    Static,
    /// Scale partial work up: `min(E p / s, theta p)`.
    Adaptive,
}

/// Per-client availability model. `s = 0` means no useful work that round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParticipationSpec {
    AlwaysFull,
    /// Whole round skipped with the given probability, otherwise full work.
    Inactive { prob: f64 },
    /// Skipped with `inactive_prob`, otherwise a uniform step count in
    /// `[min_steps, max_steps]`.
    Incomplete {
        inactive_prob: f64,
        min_steps: u32,
        max_steps: u32,
    },
    /// Participates through round `at` (0-based), then leaves for good.
    Depart { at: u32 },
    /// First participates at round `at` (0-based).
    Arrive { at: u32 },
}

impl ParticipationSpec {
    /// Whether the client is part of the federation at `round` (departed and
    /// not-yet-arrived clients are out).
    pub fn present(&self, round: u32) -> bool {
        match *self {
            ParticipationSpec::Depart { at } => round <= at,
            ParticipationSpec::Arrive { at } => round >= at,
            _ => true,
        }
    }
}

/// Draw the per-client local step counts for one round. Deterministic in
/// `(seed, client, round)`; inactive, departed, and not-yet-arrived clients
/// get `s = 0`.
pub fn sample_s(specs: &[ParticipationSpec], round: u32, steps: u32, seed: u64) -> Vec<u32> {
    specs
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let mut stream = RngStream::new(seed, k as u32, round, crate::numkit::Purpose::Participation);
            match *spec {
                ParticipationSpec::AlwaysFull => steps,
                ParticipationSpec::Inactive { prob } => {
                    if stream.gen_bool(prob) {
                        0
                    } else {
                        steps
                    }
                }
                ParticipationSpec::Incomplete {
                    inactive_prob,
                    min_steps,
                    max_steps,
                } => {
                    if stream.gen_bool(inactive_prob) {
                        0
                    } else {
                        min_steps + stream.gen_range((max_steps - min_steps + 1) as usize) as u32
                    }
                }
                ParticipationSpec::Depart { at } => {
                    if round <= at {
                        steps
                    } else {
                        0
                    }
                }
                ParticipationSpec::Arrive { at } => {
                    if round >= at {
                        steps
                    } else {
                        0
                    }
                }
            }
        })
        .collect()
}

/// Server-side weight on a client's update. `s = 0` clients never reach this.
pub fn aggregation_coeff(scheme: AggregationScheme, p_k: f64, s: u32, steps: u32, theta: f64) -> f64 {
    assert!(s >= 1, "aggregation coefficient for an inactive client");
    match scheme {
        AggregationScheme::Static => p_k,
        AggregationScheme::Adaptive => (steps as f64 * p_k / s as f64).min(theta * p_k),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub rounds: u32,
    pub local_steps: u32,
    pub batch_size: usize,
    pub lambda: f64,
    pub lr: LrSchedule,
    pub theta: f64,
    pub q_up: Option<f64>,
    pub q_down: Option<f64>,
    pub algorithm: Algorithm,
    pub aggregation: AggregationScheme,
    /// Cap on the Fisher evaluation batch; `None` uses the full local set.
    pub fisher_samples: Option<usize>,
}

impl HyperParams {
    /// Client-to-server codec. Compression applies to the elastic algorithm
    /// only; the baselines communicate dense.
    pub fn up_codec(&self) -> Codec {
        match (self.algorithm, self.q_up) {
            (Algorithm::Efl, Some(q)) => Codec::Ternary { q },
            _ => Codec::None,
        }
    }

    /// Server-to-client codec.
    pub fn down_codec(&self) -> Codec {
        match (self.algorithm, self.q_down) {
            (Algorithm::Efl, Some(q)) => Codec::Ternary { q },
            _ => Codec::None,
        }
    }
}

/// Gradient of the quadratic elastic term: `lambda * (u_sum . w - v_sum)`.
pub fn elastic_grad(
    w: &ParamVector,
    lambda: f64,
    u_sum: &ParamVector,
    v_sum: &ParamVector,
) -> ParamVector {
    assert!(lambda >= 0.0, "lambda must be nonnegative");
    let g = u_sum.hadamard(w).sub(v_sum);
    ParamVector::from_vec(g.as_slice().iter().map(|v| lambda * v).collect())
}

/// Algorithm-dependent extras added to the plain data gradient.
#[derive(Debug, Clone, Copy)]
pub enum GradContext<'a> {
    Efl {
        lambda: f64,
        u_sum: &'a ParamVector,
        v_sum: &'a ParamVector,
    },
    FedAvg,
    FedProx { mu: f64, anchor: &'a ParamVector },
}

/// Stochastic gradient of the local objective on one mini-batch.
pub fn local_grad(
    spec: &ModelSpec,
    w: &ParamVector,
    batch: &Batch,
    ctx: GradContext<'_>,
) -> ParamVector {
    let mut g = models::grad(spec, w, batch);
    match ctx {
        GradContext::Efl { lambda, u_sum, v_sum } => {
            if lambda != 0.0 {
                g.axpy(1.0, &elastic_grad(w, lambda, u_sum, v_sum));
            }
        }
        GradContext::FedAvg => {}
        GradContext::FedProx { mu, anchor } => {
            if mu != 0.0 {
                g.axpy(mu, &w.sub(anchor));
            }
        }
    }
    g
}

/// Per-client persistent state across rounds.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: u32,
    /// Local train sample count.
    pub n_train: usize,
    /// Base aggregation weight, `n_k / n` over clients present at round 0.
    pub base_weight: f64,
    /// Synchronized copy of the model; only broadcasts move it.
    pub model: ParamVector,
    /// Upstream error-feedback residual.
    pub residual: ParamVector,
    /// Latest reported Fisher diagonal and Fisher-weighted parameters.
    pub fisher: Option<(ParamVector, ParamVector)>,
    pub participation: ParticipationSpec,
}

/// Server-side state.
#[derive(Debug, Clone)]
pub struct ServerState {
    /// The model as clients see it: the accumulated decoded broadcasts.
    pub w_sync: ParamVector,
    /// Downstream error-feedback residual.
    pub residual: ParamVector,
    pub u_sum: ParamVector,
    pub v_sum: ParamVector,
    pub round: u32,
}

/// Per-round observability record. `wall_ms` is measured and therefore
/// excluded from serialized metrics, which must be byte-identical across
/// reruns of the same seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RoundMetrics {
    pub round: u32,
    pub train_loss: f64,
    pub test_acc_global: f64,
    pub test_acc_mean: f64,
    pub test_acc_std: f64,
    pub bits_up: u64,
    pub bits_down: u64,
    pub participants: u32,
    pub mean_s: f64,
    #[serde(skip)]
    pub wall_ms: u64,
    pub w_norm: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Purpose;

    #[test]
    fn lr_schedules() {
        let c = LrSchedule::Constant { eta0: 0.3 };
        assert_eq!(lr(c, 0), 0.3);
        assert_eq!(lr(c, 1000), 0.3);

        let it = LrSchedule::InverseTime { eta0: 0.3, gamma0: 20.0 };
        assert_eq!(lr(it, 0), 0.3);
        assert!((lr(it, 20) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn elastic_grad_cases() {
        // Single contributing client: at the anchor the penalty gradient
        // vanishes.
        let u = ParamVector::from_vec(vec![2.0, 0.5, 1.0]);
        let anchor = ParamVector::from_vec(vec![0.3, -1.0, 2.0]);
        let v = u.hadamard(&anchor);
        let g = elastic_grad(&anchor, 0.7, &u, &v);
        assert!(g.norm2() < 1e-15);

        // lambda = 0 kills the term regardless of inputs.
        let w = ParamVector::from_vec(vec![5.0, 5.0, 5.0]);
        assert_eq!(elastic_grad(&w, 0.0, &u, &v).as_slice(), &[0.0, 0.0, 0.0]);

        // Scalar case: lambda=1, U=[2], V=[2], w=[3] -> 2*3 - 2 = 4.
        let g = elastic_grad(
            &ParamVector::from_vec(vec![3.0]),
            1.0,
            &ParamVector::from_vec(vec![2.0]),
            &ParamVector::from_vec(vec![2.0]),
        );
        assert_eq!(g.as_slice(), &[4.0]);
    }

    #[test]
    fn elastic_sgd_converges_to_single_anchor() {
        // With no data term, SGD on the elastic objective walks to the single
        // anchor and the gradient norm decreases along the way.
        let u = ParamVector::from_vec(vec![1.0, 3.0, 0.5, 2.0]);
        let anchor = ParamVector::from_vec(vec![0.2, -0.4, 1.5, 0.0]);
        let v = u.hadamard(&anchor);
        let mut w = ParamVector::from_vec(vec![2.0, 2.0, 2.0, 2.0]);
        let mut last_norm = f64::INFINITY;
        for _ in 0..200 {
            let g = elastic_grad(&w, 1.0, &u, &v);
            let n = g.norm2();
            assert!(n <= last_norm + 1e-12, "gradient norm increased");
            last_norm = n;
            w.axpy(-0.2, &g);
        }
        assert!(w.max_abs_diff(&anchor) < 1e-6);
    }

    #[test]
    fn local_grad_reductions() {
        let spec = ModelSpec::softmax_regression(4, 3, 0.05);
        let mut s = RngStream::new(3, 0, 0, Purpose::Init);
        let w = ParamVector::from_vec((0..spec.param_dim()).map(|_| s.next_gaussian(0.0, 0.4)).collect());
        let features: Vec<f64> = (0..20).map(|_| s.next_gaussian(0.0, 1.0)).collect();
        let labels: Vec<u32> = (0..5).map(|_| s.gen_range(3) as u32).collect();
        let batch = Batch::new(features, 4, crate::models::Labels::Classes(labels));

        let u = ParamVector::from_vec(vec![1.0; spec.param_dim()]);
        let v = ParamVector::zeros(spec.param_dim());

        // lambda = 0 elastic equals the plain gradient exactly.
        let plain = local_grad(&spec, &w, &batch, GradContext::FedAvg);
        let efl0 = local_grad(
            &spec,
            &w,
            &batch,
            GradContext::Efl { lambda: 0.0, u_sum: &u, v_sum: &v },
        );
        assert_eq!(plain, efl0);

        // FedProx anchored at the current iterate equals the plain gradient.
        let prox = local_grad(&spec, &w, &batch, GradContext::FedProx { mu: 0.5, anchor: &w });
        assert!(prox.max_abs_diff(&plain) < 1e-15);
    }

    #[test]
    fn full_elastic_objective_passes_finite_differences() {
        let spec = ModelSpec::softmax_regression(3, 3, 0.02);
        let d = spec.param_dim();
        for trial in 0..100u32 {
            let mut s = RngStream::new(1234, trial, 0, Purpose::Init);
            let w = ParamVector::from_vec((0..d).map(|_| s.next_gaussian(0.0, 0.5)).collect());
            let u = ParamVector::from_vec((0..d).map(|_| s.next_f64()).collect());
            let v = ParamVector::from_vec((0..d).map(|_| s.next_gaussian(0.0, 0.3)).collect());
            let lambda = 0.4;
            let features: Vec<f64> = (0..12).map(|_| s.next_gaussian(0.0, 1.0)).collect();
            let labels: Vec<u32> = (0..4).map(|_| s.gen_range(3) as u32).collect();
            let batch = Batch::new(features, 3, crate::models::Labels::Classes(labels));

            let objective = |w: &ParamVector| {
                crate::models::loss(&spec, w, &batch)
                    + 0.5 * lambda * u.hadamard(w).dot(w)
                    - lambda * v.dot(w)
            };
            let g = local_grad(&spec, &w, &batch, GradContext::Efl { lambda, u_sum: &u, v_sum: &v });
            for j in 0..d {
                let mut wp = w.clone();
                wp.as_mut_slice()[j] += 1e-6;
                let mut wm = w.clone();
                wm.as_mut_slice()[j] -= 1e-6;
                let fd = (objective(&wp) - objective(&wm)) / 2e-6;
                let rel = (g.as_slice()[j] - fd).abs() / f64::max(1.0, fd.abs());
                assert!(rel <= 1e-5, "trial {trial} coord {j}: rel {rel}");
            }
        }
    }

    #[test]
    fn sample_s_participation_kinds() {
        let e = 5;
        let specs = vec![
            ParticipationSpec::AlwaysFull,
            ParticipationSpec::Inactive { prob: 1.0 },
            ParticipationSpec::Depart { at: 3 },
            ParticipationSpec::Arrive { at: 4 },
            ParticipationSpec::Incomplete { inactive_prob: 0.0, min_steps: 1, max_steps: 5 },
        ];
        for round in 0..10 {
            let s = sample_s(&specs, round, e, 99);
            assert_eq!(s[0], e);
            assert_eq!(s[1], 0);
            assert_eq!(s[2], if round <= 3 { e } else { 0 });
            assert_eq!(s[3], if round >= 4 { e } else { 0 });
            assert!(s[4] >= 1 && s[4] <= e);
        }
        // Deterministic under the same seed, varies across rounds.
        let a = sample_s(&specs, 2, e, 7);
        let b = sample_s(&specs, 2, e, 7);
        assert_eq!(a, b);
    }

    #[test]
    fn sample_s_inactive_rate_matches_probability() {
        let specs = vec![ParticipationSpec::Inactive { prob: 0.3 }; 1];
        let mut zeros = 0;
        for round in 0..10_000 {
            if sample_s(&specs, round, 5, 21)[0] == 0 {
                zeros += 1;
            }
        }
        let rate = zeros as f64 / 10_000.0;
        assert!((rate - 0.3).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn aggregation_coeff_cases() {
        assert!((aggregation_coeff(AggregationScheme::Adaptive, 0.1, 5, 5, 10.0) - 0.1).abs() < 1e-15);
        assert!((aggregation_coeff(AggregationScheme::Adaptive, 0.1, 1, 5, 5.0) - 0.5).abs() < 1e-15);
        assert!((aggregation_coeff(AggregationScheme::Adaptive, 0.1, 1, 5, 2.0) - 0.2).abs() < 1e-15);
        assert!((aggregation_coeff(AggregationScheme::Static, 0.1, 1, 5, 2.0) - 0.1).abs() < 1e-15);
    }

    #[test]
    #[should_panic(expected = "inactive client")]
    fn aggregation_coeff_rejects_zero_steps() {
        let _ = aggregation_coeff(AggregationScheme::Adaptive, 0.1, 0, 5, 2.0);
    }

    #[test]
    fn codecs_follow_algorithm() {
        let mut hp = HyperParams {
            rounds: 1,
            local_steps: 5,
            batch_size: 8,
            lambda: 0.1,
            lr: LrSchedule::Constant { eta0: 0.1 },
            theta: 5.0,
            q_up: Some(0.05),
            q_down: Some(0.1),
            algorithm: Algorithm::Efl,
            aggregation: AggregationScheme::Adaptive,
            fisher_samples: None,
        };
        assert_eq!(hp.up_codec(), Codec::Ternary { q: 0.05 });
        assert_eq!(hp.down_codec(), Codec::Ternary { q: 0.1 });
        hp.algorithm = Algorithm::FedAvg;
        assert_eq!(hp.up_codec(), Codec::None);
        hp.algorithm = Algorithm::Efl;
        hp.q_up = None;
        assert_eq!(hp.up_codec(), Codec::None);
    }
}
