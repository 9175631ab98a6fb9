//! Monte Carlo validation: replay the true uncertain network under the
//! refined controllers and compare empirical satisfaction against the
//! synthesized lower bounds.
//!
//! Verdicts are judged by the automaton on the exact labels of the concrete
//! output trace; the epsilon-robustification belongs to synthesis only and
//! is used here just for the controllers' own memory updates. The true
//! parameter is drawn per run and held fixed within it.

use crate::gmm::GaussianMixture;
use crate::logic::LogicError;
use crate::network::Network;
use crate::par;
use crate::synth::Controller;
use crate::system::SystemError;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("true parameter for `{0}` lies outside its uncertainty box")]
    ThetaOutsideBox(String),
    #[error("controller for `{expected}` got `{actual}`")]
    ControllerMismatch { expected: String, actual: String },
    #[error("need at least {min} episodes, got {got}")]
    TooFewEpisodes { min: usize, got: usize },
    #[error("{context}: expected {expected} entries, got {actual}")]
    CountMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Logic(#[from] LogicError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Satisfied,
    Unsatisfied,
}

/// One recorded step of a coupled trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    /// Per-subsystem state after the step.
    pub states: Vec<Vec<f64>>,
    /// Per-subsystem concatenated input (external then internal) applied at
    /// the step.
    pub inputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub verdict: Verdict,
    /// Step at which the last pending subsystem accepted.
    pub accepted_at: Option<usize>,
    pub escaped: bool,
    pub trace: Vec<StepRecord>,
}

/// The coupled true network ready to simulate: subsystems, their refined
/// controllers (aligned by index), and a fixed true parameter per
/// subsystem.
pub struct CoupledRun<'a> {
    pub network: &'a Network,
    pub controllers: &'a [Controller],
    pub thetas: &'a [Vec<f64>],
}

impl<'a> CoupledRun<'a> {
    pub fn new(
        network: &'a Network,
        controllers: &'a [Controller],
        thetas: &'a [Vec<f64>],
    ) -> Result<Self, SimError> {
        if controllers.len() != network.subsystems.len() {
            return Err(SimError::CountMismatch {
                context: "controllers",
                expected: network.subsystems.len(),
                actual: controllers.len(),
            });
        }
        if thetas.len() != network.subsystems.len() {
            return Err(SimError::CountMismatch {
                context: "theta samples",
                expected: network.subsystems.len(),
                actual: thetas.len(),
            });
        }
        for (s, c) in network.subsystems.iter().zip(controllers) {
            if s.id != c.subsystem_id {
                return Err(SimError::ControllerMismatch {
                    expected: s.id.clone(),
                    actual: c.subsystem_id.clone(),
                });
            }
        }
        for (s, theta) in network.subsystems.iter().zip(thetas) {
            if !s.theta_box.contains(theta) {
                return Err(SimError::ThetaOutsideBox(s.id.clone()));
            }
        }
        Ok(Self {
            network,
            controllers,
            thetas,
        })
    }
}

/// Steps the coupled dynamics for one episode. Interconnection constraints
/// are applied every step (internal inputs are the sources' current
/// outputs); controllers are refined through the identity interface; the
/// per-subsystem verdict automaton consumes exact output labels, starting
/// with the initial output. A subsystem escaping the state box before its
/// acceptance makes the episode unsatisfied.
pub fn simulate_episode(
    run: &CoupledRun<'_>,
    initial_states: &[Vec<f64>],
    seed: u64,
    horizon: usize,
    record_trace: bool,
) -> Result<EpisodeResult, SimError> {
    let n = run.network.subsystems.len();
    if initial_states.len() != n {
        return Err(SimError::CountMismatch {
            context: "initial states",
            expected: n,
            actual: initial_states.len(),
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mixtures: Vec<GaussianMixture> = run
        .network
        .subsystems
        .iter()
        .zip(run.thetas)
        .map(|(s, th)| s.mixture_at(th))
        .collect::<Result<_, _>>()?;

    let mut states: Vec<Vec<f64>> = initial_states.to_vec();
    let mut memory: Vec<usize> = Vec::with_capacity(n);
    let mut verdict_q: Vec<usize> = Vec::with_capacity(n);
    let mut accepted = vec![false; n];
    let mut last_inputs: Vec<Vec<f64>> =
        run.controllers.iter().map(|c| c.ext_inputs[0].clone()).collect();
    let mut escaped = false;
    let mut trace = Vec::new();

    for (i, c) in run.controllers.iter().enumerate() {
        memory.push(c.initial_memory(&states[i])?);
        let y0 = run.network.subsystems[i].output(&states[i]);
        let letter = c.regions.exact_letter(&y0);
        let q = c.dfa.step(c.dfa.initial, letter);
        accepted[i] = c.dfa.is_accepting(q);
        verdict_q.push(q);
    }

    let mut accepted_at = if accepted.iter().all(|a| *a) {
        Some(0)
    } else {
        None
    };

    for t in 0..horizon {
        if accepted_at.is_some() {
            break;
        }
        // outputs before the step feed the internal inputs of this step
        let outputs: Vec<Vec<f64>> = run
            .network
            .subsystems
            .iter()
            .zip(&states)
            .map(|(s, x)| s.output(x))
            .collect();
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (i, s) in run.network.subsystems.iter().enumerate() {
            let mut u = match run.controllers[i].input_for(&states[i], memory[i]) {
                Some(u) => {
                    last_inputs[i] = u.clone();
                    u
                }
                // outside the box: hold the last input
                None => last_inputs[i].clone(),
            };
            for ii in &s.internal_inputs {
                let src_idx = run
                    .network
                    .subsystems
                    .iter()
                    .position(|o| o.id == ii.source)
                    .ok_or_else(|| SimError::ControllerMismatch {
                        expected: ii.source.clone(),
                        actual: "<missing source>".into(),
                    })?;
                for d in &ii.source_output_dims {
                    u.push(outputs[src_idx][*d]);
                }
            }
            inputs.push(u);
        }
        // step every subsystem with its own noise draw, subsystem order
        let mut next_states = Vec::with_capacity(n);
        for (i, s) in run.network.subsystems.iter().enumerate() {
            let drift = s.eval_dynamics(&states[i], &inputs[i], &run.thetas[i])?;
            let w = mixtures[i].sample_one(&mut rng);
            let x_next: Vec<f64> = drift.iter().zip(&w).map(|(a, b)| a + b).collect();
            next_states.push(x_next);
        }
        // bookkeeping: memory on robust abstract labels, verdict on exact
        let mut failed = false;
        for (i, s) in run.network.subsystems.iter().enumerate() {
            let inside = s.state_box.contains(&next_states[i]);
            if !inside && !accepted[i] {
                failed = true;
                escaped = true;
            }
            memory[i] = run.controllers[i].advance_memory(memory[i], &next_states[i])?;
            let y = s.output(&next_states[i]);
            let letter = run.controllers[i].regions.exact_letter(&y);
            verdict_q[i] = run.controllers[i].dfa.step(verdict_q[i], letter);
            accepted[i] = accepted[i] || run.controllers[i].dfa.is_accepting(verdict_q[i]);
        }
        states = next_states;
        if record_trace {
            trace.push(StepRecord {
                states: states.clone(),
                inputs,
            });
        }
        if failed {
            // conservative accounting: an escape before acceptance sinks
            // the episode
            return Ok(EpisodeResult {
                verdict: Verdict::Unsatisfied,
                accepted_at: None,
                escaped,
                trace,
            });
        }
        if accepted.iter().all(|a| *a) {
            accepted_at = Some(t + 1);
        }
    }

    Ok(EpisodeResult {
        verdict: if accepted_at.is_some() {
            Verdict::Satisfied
        } else {
            Verdict::Unsatisfied
        },
        accepted_at,
        escaped,
        trace,
    })
}

/// Summary of one Monte Carlo estimation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationRun {
    pub thetas: Vec<Vec<f64>>,
    pub seed: u64,
    pub horizon: usize,
    pub episodes: usize,
    pub successes: usize,
    pub rate: f64,
    /// 95% Wilson score interval.
    pub wilson_low: f64,
    pub wilson_high: f64,
}

const WILSON_Z: f64 = 1.959963984540054;
const MIN_EPISODES: usize = 100;

pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = WILSON_Z * WILSON_Z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

fn episode_seed(seed: u64, episode: u64) -> u64 {
    // splitmix64 over the (seed, episode) pair
    let mut z = seed ^ episode.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded Monte Carlo estimate of the satisfaction probability from a fixed
/// initial state. Episodes run on independent derived streams, so the
/// verdict sequence is a pure function of the seed regardless of thread
/// count.
pub fn monte_carlo_estimate(
    run: &CoupledRun<'_>,
    initial_states: &[Vec<f64>],
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<SimulationRun, SimError> {
    if episodes < MIN_EPISODES {
        return Err(SimError::TooFewEpisodes {
            min: MIN_EPISODES,
            got: episodes,
        });
    }
    let verdicts: Vec<Result<Verdict, SimError>> = par::map_indexed(episodes, |ep| {
        simulate_episode(
            run,
            initial_states,
            episode_seed(seed, ep as u64),
            horizon,
            false,
        )
        .map(|r| r.verdict)
    });
    let mut successes = 0usize;
    for v in verdicts {
        if v? == Verdict::Satisfied {
            successes += 1;
        }
    }
    let rate = successes as f64 / episodes as f64;
    let (lo, hi) = wilson_interval(successes, episodes);
    Ok(SimulationRun {
        thetas: run.thetas.to_vec(),
        seed,
        horizon,
        episodes,
        successes,
        rate,
        wilson_low: lo,
        wilson_high: hi,
    })
}

/// Result of checking an empirical run against a synthesized bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundCheck {
    pub bound: f64,
    pub empirical_rate: f64,
    pub wilson_low: f64,
    pub tolerance: f64,
    pub margin: f64,
    pub pass: bool,
}

/// Passes iff the empirical lower confidence limit clears the bound minus
/// the declared statistical tolerance.
pub fn check_bound(run: &SimulationRun, bound: f64, tolerance: f64) -> BoundCheck {
    let margin = run.wilson_low - (bound - tolerance);
    BoundCheck {
        bound,
        empirical_rate: run.rate,
        wilson_low: run.wilson_low,
        tolerance,
        margin,
        pass: margin >= 0.0,
    }
}
