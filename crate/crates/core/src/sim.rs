//! Exact event-driven simulation of the particle system.
//!
//! Particles sitting at the same state are exchangeable, so the process is
//! tracked as an occupancy vector. State `x` fires events at total rate
//! `n_x (q_x + beta(x))`; a motion event moves one particle along a row of
//! `Q` (or kills it on the row deficit), a branching event replaces it by
//! `k` particles drawn from `p(x)`.
//!
//! Replicate `r` of an ensemble draws from ChaCha8 stream `r` keyed by the
//! master seed, so results do not depend on how replicates are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function::FunctionOnE;
use crate::linalg::C64;
use crate::model::FiniteModel;
use crate::spectral::{Regime, SpectralDecomposition};

pub const DEFAULT_POPULATION_CAP: u64 = 10_000_000;

/// Occupancy of every state at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSnapshot {
    pub time: f64,
    pub counts: Vec<u64>,
    /// Particles absorbed at the cemetery so far.
    pub killed_mass: u64,
}

impl ParticleSnapshot {
    pub fn new(time: f64, counts: Vec<u64>, killed_mass: u64) -> Self {
        Self {
            time,
            counts,
            killed_mass,
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// `<f, X> = sum_x counts[x] f(x)`.
pub fn observe(snapshot: &ParticleSnapshot, f: &FunctionOnE) -> C64 {
    snapshot
        .counts
        .iter()
        .zip(f.values())
        .map(|(c, v)| v * *c as f64)
        .sum()
}

pub fn observe_real(snapshot: &ParticleSnapshot, f: &[f64]) -> f64 {
    snapshot.counts.iter().zip(f).map(|(c, v)| *c as f64 * v).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub checkpoints: Vec<ParticleSnapshot>,
    pub seed: u64,
    pub model_hash: String,
}

impl TrajectoryRecord {
    /// `time,state_0,...,killed` rows.
    pub fn to_csv(&self, states: &[String]) -> String {
        let mut out = String::from("time");
        for s in states {
            out.push(',');
            out.push_str(s);
        }
        out.push_str(",killed\n");
        for snap in &self.checkpoints {
            out.push_str(&format!("{}", snap.time()));
            for c in &snap.counts {
                out.push_str(&format!(",{c}"));
            }
            out.push_str(&format!(",{}\n", snap.killed_mass));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub population_cap: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            population_cap: DEFAULT_POPULATION_CAP,
        }
    }
}

/// RNG for replicate `r`: stream `r` of ChaCha8 keyed by `master_seed`.
pub fn replicate_rng(master_seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(r);
    rng
}

/// Per-state event tables, precomputed once per model.
#[derive(Debug, Clone)]
pub struct EventTables {
    /// `q_x + beta(x)`.
    rate: Vec<f64>,
    /// Probability that an event at `x` is a motion event.
    motion_share: Vec<f64>,
    /// Cumulative jump weights over target states; the last slot is the cemetery.
    jumps: Vec<Vec<f64>>,
    /// Cumulative offspring law.
    offspring: Vec<Vec<f64>>,
}

impl EventTables {
    pub fn new(model: &FiniteModel) -> Self {
        let n = model.n();
        let mut rate = Vec::with_capacity(n);
        let mut motion_share = Vec::with_capacity(n);
        let mut jumps = Vec::with_capacity(n);
        let mut offspring = Vec::with_capacity(n);
        for x in 0..n {
            let q_out: Vec<f64> = (0..n)
                .map(|y| if y == x { 0.0 } else { model.q[(x, y)] })
                .chain(std::iter::once(model.killing_rate(x)))
                .collect();
            let qx: f64 = q_out.iter().sum();
            let r = qx + model.beta[x];
            rate.push(r);
            motion_share.push(if r > 0.0 { qx / r } else { 0.0 });
            jumps.push(cumulative(&q_out));
            offspring.push(cumulative(&model.offspring[x].0));
        }
        Self {
            rate,
            motion_share,
            jumps,
            offspring,
        }
    }
}

fn cumulative(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return vec![0.0; w.len()];
    }
    let mut acc = 0.0;
    let mut out: Vec<f64> = w
        .iter()
        .map(|v| {
            acc += v;
            acc / total
        })
        .collect();
    // round-off must not leave a gap above the last reachable bin
    let top = w.iter().rposition(|v| *v > 0.0).unwrap_or(0);
    for v in out.iter_mut().skip(top) {
        *v = 1.0;
    }
    out
}

fn pick(cum: &[f64], u: f64) -> usize {
    cum.iter().position(|c| u < *c).unwrap_or(cum.len() - 1)
}

fn validate_checkpoints(t_end: f64, checkpoints: &[f64]) -> Result<()> {
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::NegativeTime(t_end));
    }
    let mut prev = f64::NEG_INFINITY;
    for &c in checkpoints {
        if !(c >= 0.0) || !c.is_finite() || c <= prev || c > t_end {
            return Err(Error::InvalidCheckpoint(format!(
                "checkpoint {c} must be finite, strictly increasing and within [0, {t_end}]"
            )));
        }
        prev = c;
    }
    Ok(())
}

/// Simulate from `nu` and record the occupancy at each checkpoint, then at
/// `t_end` if that is not already the last checkpoint.
pub fn simulate_with<R: Rng + ?Sized>(
    model: &FiniteModel,
    tables: &EventTables,
    nu: &[u64],
    t_end: f64,
    checkpoints: &[f64],
    rng: &mut R,
    opts: &SimOptions,
) -> Result<Vec<ParticleSnapshot>> {
    let n = model.n();
    if nu.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "initial configuration has {} entries, model has {} states",
            nu.len(),
            n
        )));
    }
    validate_checkpoints(t_end, checkpoints)?;
    let mut times: Vec<f64> = checkpoints.to_vec();
    if times.last().is_none_or(|&c| c < t_end) {
        times.push(t_end);
    }
    let mut counts = nu.to_vec();
    let mut total: u64 = counts.iter().sum();
    let mut killed = 0u64;
    let mut out = Vec::with_capacity(times.len());
    let mut next_cp = 0;
    let mut t = 0.0;
    let mut weights = vec![0.0; n];
    if total > opts.population_cap {
        return Err(Error::PopulationCap {
            population: total,
            cap: opts.population_cap,
        });
    }
    loop {
        let mut rate_total = 0.0;
        for x in 0..n {
            weights[x] = counts[x] as f64 * tables.rate[x];
            rate_total += weights[x];
        }
        let dt = if rate_total > 0.0 {
            -(1.0 - rng.random::<f64>()).ln() / rate_total
        } else {
            f64::INFINITY
        };
        let t_next = t + dt;
        while next_cp < times.len() && times[next_cp] < t_next {
            out.push(ParticleSnapshot::new(times[next_cp], counts.clone(), killed));
            next_cp += 1;
        }
        if next_cp == times.len() {
            return Ok(out);
        }
        t = t_next;
        let mut u = rng.random::<f64>() * rate_total;
        let mut x = n - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                x = i;
                break;
            }
            u -= w;
        }
        if counts[x] == 0 {
            // round-off landed on an empty state; pick the last occupied one
            x = (0..n).rev().find(|&i| weights[i] > 0.0).unwrap_or(x);
        }
        let v = rng.random::<f64>();
        if v < tables.motion_share[x] {
            let y = pick(&tables.jumps[x], rng.random::<f64>());
            counts[x] -= 1;
            if y == n {
                killed += 1;
                total -= 1;
            } else {
                counts[y] += 1;
            }
        } else {
            let k = pick(&tables.offspring[x], rng.random::<f64>()) as u64;
            counts[x] = counts[x] - 1 + k;
            total = total - 1 + k;
            if total > opts.population_cap {
                return Err(Error::PopulationCap {
                    population: total,
                    cap: opts.population_cap,
                });
            }
        }
    }
}

pub fn model_hash(model: &FiniteModel) -> String {
    crate::provenance::hash_json(&model.config())
}

/// One seeded trajectory.
pub fn simulate(
    model: &FiniteModel,
    nu: &[u64],
    t_end: f64,
    checkpoints: &[f64],
    seed: u64,
) -> Result<TrajectoryRecord> {
    let tables = EventTables::new(model);
    let mut rng = replicate_rng(seed, 0);
    let snaps = simulate_with(model, &tables, nu, t_end, checkpoints, &mut rng, &SimOptions::default())?;
    Ok(TrajectoryRecord {
        checkpoints: snaps,
        seed,
        model_hash: model_hash(model),
    })
}

/// `W_t` and the block martingales `H_t^(k)` read from one snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReadout {
    pub w: f64,
    /// `(k, H_t^(k))` for every block with `lambda_1 > 2 Re lambda_k`.
    pub h: Vec<(usize, Vec<C64>)>,
}

/// `H^(k) = e^{lambda_k t} (<phi_l^(k), X_t>)_l D_k(t)^{-1}`.
pub fn block_martingale(decomp: &SpectralDecomposition, k: usize, snapshot: &ParticleSnapshot) -> Vec<C64> {
    let b = &decomp.blocks[k];
    let t = snapshot.time();
    let obs: Vec<C64> = (0..b.n_k()).map(|l| observe(snapshot, &b.phi_fn(l))).collect();
    let dinv = b.d(-t);
    let e = (b.lambda * t).exp();
    (0..b.n_k())
        .map(|c| e * (0..b.n_k()).map(|r| obs[r] * dinv[(r, c)]).sum::<C64>())
        .collect()
}

pub fn martingales(decomp: &SpectralDecomposition, snapshot: &ParticleSnapshot) -> MartingaleReadout {
    let t = snapshot.time();
    let w = (decomp.lambda1() * t).exp() * observe_real(snapshot, &decomp.phi1);
    let h = (0..decomp.blocks.len())
        .filter(|&k| decomp.block_regime(k) == Regime::Large)
        .map(|k| (k, block_martingale(decomp, k, snapshot)))
        .collect();
    MartingaleReadout { w: w.max(0.0), h }
}

/// Checkpoint snapshots of every replicate, in replicate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub checkpoints: Vec<f64>,
    pub master_seed: u64,
    pub replicates: Vec<Vec<ParticleSnapshot>>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.replicates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicates.is_empty()
    }

    /// Snapshots at checkpoint `c` across replicates.
    pub fn at(&self, c: usize) -> impl Iterator<Item = &ParticleSnapshot> {
        self.replicates.iter().map(move |r| &r[c])
    }

    pub fn checkpoint_index(&self, t: f64) -> Option<usize> {
        self.checkpoints.iter().position(|c| (*c - t).abs() <= 1e-12 * t.abs().max(1.0))
    }
}

/// Run `n_replicates` independent trajectories. With the `parallel`
/// feature the replicates are spread over the rayon pool; the output is
/// identical either way.
pub fn run_replicates(
    model: &FiniteModel,
    nu: &[u64],
    checkpoints: &[f64],
    n_replicates: usize,
    master_seed: u64,
    opts: &SimOptions,
) -> Result<Ensemble> {
    if n_replicates < 2 {
        return Err(Error::InvalidArgument("an ensemble needs at least 2 replicates".into()));
    }
    let Some(&t_end) = checkpoints.last() else {
        return Err(Error::InvalidCheckpoint("no checkpoints requested".into()));
    };
    validate_checkpoints(t_end, checkpoints)?;
    let tables = EventTables::new(model);
    let one = |r: usize| {
        let mut rng = replicate_rng(master_seed, r as u64);
        simulate_with(model, &tables, nu, t_end, checkpoints, &mut rng, opts)
    };
    #[cfg(feature = "parallel")]
    let replicates: Result<Vec<_>> = {
        use rayon::prelude::*;
        (0..n_replicates).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let replicates: Result<Vec<_>> = (0..n_replicates).map(one).collect();
    Ok(Ensemble {
        checkpoints: checkpoints.to_vec(),
        master_seed,
        replicates: replicates?,
    })
}

/// Same as [`run_replicates`] but always on the calling thread.
pub fn run_replicates_sequential(
    model: &FiniteModel,
    nu: &[u64],
    checkpoints: &[f64],
    n_replicates: usize,
    master_seed: u64,
    opts: &SimOptions,
) -> Result<Ensemble> {
    let Some(&t_end) = checkpoints.last() else {
        return Err(Error::InvalidCheckpoint("no checkpoints requested".into()));
    };
    validate_checkpoints(t_end, checkpoints)?;
    let tables = EventTables::new(model);
    let replicates = (0..n_replicates)
        .map(|r| {
            let mut rng = replicate_rng(master_seed, r as u64);
            simulate_with(model, &tables, nu, t_end, checkpoints, &mut rng, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        checkpoints: checkpoints.to_vec(),
        master_seed,
        replicates,
    })
}
