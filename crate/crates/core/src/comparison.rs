//! The lower-bounding line chain `Z`: `n` independent particles on
//! `{0, ..., D}` that drift toward 0, used to bound how long a heavy vertex
//! keeps its particles when attraction is strong.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{replica_rng, ArwKernel, ArwRng};
use crate::error::{ArwError, Result};
use crate::exact::{Distribution, TransitionMatrix};
use crate::graph::Graph;

/// Inputs from which `p` and `q` were computed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZModelInputs {
    pub beta: f64,
    pub delta: f64,
    pub max_degree: usize,
    pub n: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZChainParams {
    /// Line length (diameter of the underlying graph).
    pub d: usize,
    pub p: f64,
    pub q: f64,
    pub model: Option<ZModelInputs>,
}

/// `p = 1/(e^{beta delta} + Delta)` and
/// `q = e^a / (e^a + e^{beta delta} + Delta - 1)` with `a = beta (1-delta) - beta/n`.
pub fn compute_pq(beta: f64, delta: f64, max_degree: usize, n: u32) -> Result<(f64, f64)> {
    if !(beta >= 0.0) || beta.is_infinite() {
        return Err(ArwError::InvalidChainParams(format!("beta must be finite and >= 0, got {beta}")));
    }
    if n == 0 || max_degree == 0 {
        return Err(ArwError::InvalidChainParams("need n >= 1 and Delta >= 1".into()));
    }
    let delta_deg = max_degree as f64;
    let bd = beta * delta;
    let a = beta * (1.0 - delta) - beta / f64::from(n);
    let p = 1.0 / (bd.exp() + delta_deg);
    // divide through by e^a so that large beta does not overflow
    let q = 1.0 / (1.0 + (bd - a).exp() + (delta_deg - 1.0) * (-a).exp());
    if p >= q {
        return Err(ArwError::InvalidChainParams(format!("p = {p} >= q = {q}; beta too small for comparison")));
    }
    Ok((p, q))
}

impl ZChainParams {
    pub fn from_model(beta: f64, delta: f64, max_degree: usize, n: u32, d: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 0.5) {
            return Err(ArwError::InvalidChainParams(format!("delta must lie in (0, 1/2), got {delta}")));
        }
        if d == 0 {
            return Err(ArwError::InvalidChainParams("line length D must be at least 1".into()));
        }
        let (p, q) = compute_pq(beta, delta, max_degree, n)?;
        Ok(ZChainParams { d, p, q, model: Some(ZModelInputs { beta, delta, max_degree, n }) })
    }

    /// Uses `delta = 1/(3D)` with `D`, `Delta` taken from the graph.
    pub fn for_graph(g: &Graph, beta: f64, n: u32) -> Result<Self> {
        let d = g.diameter();
        Self::from_model(beta, default_delta(d), g.max_degree(), n, d)
    }

    /// Direct parameters; `q = 1` is allowed as a degenerate chain.
    pub fn from_pq(d: usize, p: f64, q: f64) -> Result<Self> {
        if d == 0 {
            return Err(ArwError::InvalidChainParams("line length D must be at least 1".into()));
        }
        if !(p > 0.0 && p < q && q <= 1.0) {
            return Err(ArwError::InvalidChainParams(format!("need 0 < p < q <= 1, got p = {p}, q = {q}")));
        }
        Ok(ZChainParams { d, p, q, model: None })
    }

    /// Single-particle moves from position `at` as `(target, probability)`.
    pub fn moves(&self, at: usize) -> [(usize, f64); 2] {
        let (d, p, q) = (self.d, self.p, self.q);
        if d == 1 {
            return [(0, q), (1, 1.0 - q)];
        }
        match at {
            0 | 1 => [(0, q), (at + 1, 1.0 - q)],
            _ => [(at - 1, p), ((at + 1).min(d), 1.0 - p)],
        }
    }

    /// The `(D+1)`-state single-particle chain.
    pub fn single_particle_matrix(&self) -> TransitionMatrix {
        let rows = (0..=self.d)
            .map(|at| {
                let mut row: Vec<(usize, f64)> = Vec::with_capacity(2);
                for (to, prob) in self.moves(at) {
                    match row.iter_mut().find(|(c, _)| *c == to) {
                        Some(entry) => entry.1 += prob,
                        None => row.push((to, prob)),
                    }
                }
                row
            })
            .collect();
        TransitionMatrix::from_rows(rows).expect("Z rows are stochastic")
    }
}

pub fn default_delta(d: usize) -> f64 {
    1.0 / (3.0 * d as f64)
}

fn geometric_tail(r: f64, d: usize) -> f64 {
    // (1 - r^{D-1}) / (1 - r), with the r = 1 limit
    if (r - 1.0).abs() < 1e-12 {
        (d - 1) as f64
    } else {
        (1.0 - r.powi(d as i32 - 1)) / (1.0 - r)
    }
}

/// Closed form for `lambda(0)`.
pub fn z_lambda0_closed_form(params: &ZChainParams) -> f64 {
    let (d, p, q) = (params.d, params.p, params.q);
    if d == 1 {
        return q;
    }
    let r = p / (1.0 - p);
    let bracket = 1.0 + (1.0 - q).powi(2) / p * r.powi(2 - d as i32) * geometric_tail(r, d);
    q / bracket
}

/// The `D = 2` form `q / (1 + (1-q)^2 / p)`.
pub fn z_lambda0_d2(p: f64, q: f64) -> f64 {
    q / (1.0 + (1.0 - q).powi(2) / p)
}

/// Stationary law of one particle, from the balance recursion.
pub fn z_stationary(params: &ZChainParams) -> Distribution {
    let (d, p, q) = (params.d, params.p, params.q);
    if d == 1 {
        return Distribution::new(vec![q, 1.0 - q]);
    }
    if q >= 1.0 {
        let mut point = vec![0.0; d + 1];
        point[0] = 1.0;
        return Distribution::new(point);
    }
    let r = p / (1.0 - p);
    // unnormalised, with lambda(D) = 1
    let mut lambda = vec![0.0; d + 1];
    for i in 0..=d - 2 {
        lambda[d - i] = r.powi(i as i32);
    }
    lambda[1] = p * r.powi(d as i32 - 2) / (1.0 - q);
    lambda[0] = q / (1.0 - q) * lambda[1];
    let total: f64 = lambda.iter().sum();
    Distribution::new(lambda.into_iter().map(|l| l / total).collect())
}

/// `E[Z(0)] = lambda(0) n` under the product stationary law.
pub fn expected_occupancy_zero(params: &ZChainParams, n: u32) -> f64 {
    z_stationary(params)[0] * f64::from(n)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BetaThreshold {
    /// First doubled `beta` meeting the target.
    pub beta: f64,
    /// Bisection refinement between the last failing and first passing `beta`.
    pub refined_beta: f64,
    pub lambda0: f64,
    pub target: f64,
}

/// Doubling search for a `beta` with `lambda(0) >= 1 - delta + eps_bar`.
pub fn find_beta_threshold(delta: f64, max_degree: usize, n: u32, d: usize, eps_bar: f64) -> Result<BetaThreshold> {
    let target = 1.0 - delta + eps_bar;
    let meets = |beta: f64| -> Result<Option<f64>> {
        match ZChainParams::from_model(beta, delta, max_degree, n, d) {
            Ok(params) => {
                let l0 = z_stationary(&params)[0];
                Ok((l0 >= target).then_some(l0))
            }
            Err(ArwError::InvalidChainParams(msg)) if msg.contains(">= q") => Ok(None),
            Err(e) => Err(e),
        }
    };
    let mut lo = 0.0;
    let mut beta = 1.0;
    while beta <= 1e9 {
        if let Some(lambda0) = meets(beta)? {
            let mut hi = beta;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if meets(mid)?.is_some() {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(BetaThreshold { beta, refined_beta: hi, lambda0, target });
        }
        lo = beta;
        beta *= 2.0;
    }
    Err(ArwError::InvalidChainParams(format!("no beta up to 1e9 reaches lambda(0) >= {target}")))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome", content = "steps")]
pub enum HittingOutcome {
    Hit(u64),
    Censored(u64),
}

impl HittingOutcome {
    pub fn steps(self) -> u64 {
        match self {
            HittingOutcome::Hit(t) | HittingOutcome::Censored(t) => t,
        }
    }

    pub fn is_censored(self) -> bool {
        matches!(self, HittingOutcome::Censored(_))
    }
}

/// Z chain with all `n` particles started at 0 and tracked as position counts.
#[derive(Clone, Debug)]
pub struct ZProcess {
    params: ZChainParams,
    counts: Vec<u32>,
    n: u32,
}

impl ZProcess {
    pub fn new(params: ZChainParams, n: u32) -> Self {
        let mut counts = vec![0; params.d + 1];
        counts[0] = n;
        ZProcess { params, counts, n }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mut pick = rng.random_range(0..self.n);
        let mut at = 0;
        while pick >= self.counts[at] {
            pick -= self.counts[at];
            at += 1;
        }
        let [(first, p_first), (second, _)] = self.params.moves(at);
        let to = if rng.random::<f64>() < p_first { first } else { second };
        self.counts[at] -= 1;
        self.counts[to] += 1;
    }
}

/// First time the occupancy of 0 drops to `(1 - threshold_delta) n` or below.
pub fn simulate_z_hitting<R: Rng + ?Sized>(
    params: &ZChainParams,
    n: u32,
    threshold_delta: f64,
    rng: &mut R,
    max_steps: u64,
) -> HittingOutcome {
    let bound = (1.0 - threshold_delta) * f64::from(n);
    let mut z = ZProcess::new(*params, n);
    for t in 1..=max_steps {
        z.step(rng);
        if f64::from(z.counts[0]) <= bound {
            return HittingOutcome::Hit(t);
        }
    }
    HittingOutcome::Censored(max_steps)
}

/// Hitting times of `replicas` independent runs, replica `r` on stream `r` of `seed`.
pub fn hitting_replicas(
    params: &ZChainParams,
    n: u32,
    threshold_delta: f64,
    replicas: usize,
    seed: u64,
    max_steps: u64,
) -> Vec<HittingOutcome> {
    (0..replicas)
        .into_par_iter()
        .map(|r| simulate_z_hitting(params, n, threshold_delta, &mut replica_rng(seed, r), max_steps))
        .collect()
}

/// Median with censored samples treated as `+inf`; `None` if half or more are censored.
pub fn censored_median(samples: &[HittingOutcome]) -> Option<f64> {
    let mut values: Vec<f64> = samples
        .iter()
        .map(|s| match s {
            HittingOutcome::Hit(t) => *t as f64,
            HittingOutcome::Censored(_) => f64::INFINITY,
        })
        .collect();
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m == 0 {
        return None;
    }
    let median = if m % 2 == 1 { values[m / 2] } else { 0.5 * (values[m / 2 - 1] + values[m / 2]) };
    median.is_finite().then_some(median)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct OccupancyCheck {
    pub mean: f64,
    pub expected: f64,
    /// Three standard errors of the replica mean.
    pub band: f64,
    pub within: bool,
}

/// Mean occupancy of 0 after `burn_in` steps across replicas against `lambda(0) n`.
pub fn stationary_occupancy_check(
    params: &ZChainParams,
    n: u32,
    burn_in: u64,
    replicas: usize,
    seed: u64,
) -> OccupancyCheck {
    let finals: Vec<u32> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            let mut z = ZProcess::new(*params, n);
            for _ in 0..burn_in {
                z.step(&mut rng);
            }
            z.counts[0]
        })
        .collect();
    let mean = finals.iter().map(|&c| f64::from(c)).sum::<f64>() / replicas as f64;
    let lambda0 = z_stationary(params)[0];
    let expected = lambda0 * f64::from(n);
    let band = 3.0 * (f64::from(n) * lambda0 * (1.0 - lambda0) / replicas as f64).sqrt();
    OccupancyCheck { mean, expected, band, within: (mean - expected).abs() <= band }
}

#[derive(Clone, Debug, Serialize)]
pub struct DominanceReport {
    pub steps_checked: u64,
    pub violations: u64,
    /// Step at which the heavy vertex dropped to `(1-delta) n` or below, if it did.
    pub exit_step: Option<u64>,
}

/// Synchronous coupling of the ARW chain (projected to distances from `u`)
/// with the Z chain. Particles are paired; at each step the same particle
/// moves in both, with destinations drawn by a shared uniform against
/// distance-ordered cumulative laws. Checks prefix-count dominance while
/// `X(u) > (1 - delta) n`.
pub fn coupled_dominance_run(
    graph: Arc<Graph>,
    u: usize,
    n: u32,
    beta: f64,
    delta: f64,
    steps: u64,
    rng: &mut ArwRng,
) -> Result<DominanceReport> {
    let dist = graph.distances_from(u);
    let d = graph.diameter();
    let params = ZChainParams::from_model(beta, delta, graph.max_degree(), n, d)?;
    let kernel = ArwKernel::new(graph.clone(), n, beta, false)?;
    let k = graph.k();
    let mut x_pos = vec![u; n as usize];
    let mut z_pos = vec![0usize; n as usize];
    let mut occ = vec![0u32; k];
    occ[u] = n;
    let bound = (1.0 - delta) * f64::from(n);
    let mut violations = 0;
    for t in 1..=steps {
        if f64::from(occ[u]) <= bound {
            return Ok(DominanceReport { steps_checked: t - 1, violations, exit_step: Some(t - 1) });
        }
        let particle = rng.random_range(0..n as usize);
        let uniform: f64 = rng.random();

        let from = x_pos[particle];
        let law = kernel.move_distribution_unchecked(&occ, from);
        let mut targets: Vec<(usize, f64)> =
            law.support.iter().copied().zip(law.probabilities.iter().copied()).collect();
        targets.sort_by_key(|&(v, _)| dist[v]);
        let x_to = quantile(&targets, uniform);
        occ[from] -= 1;
        occ[x_to] += 1;
        x_pos[particle] = x_to;

        let mut z_moves = params.moves(z_pos[particle]).to_vec();
        z_moves.sort_by_key(|&(to, _)| to);
        z_pos[particle] = quantile(&z_moves, uniform);

        let mut x_prefix = vec![0u32; d + 1];
        let mut z_prefix = vec![0u32; d + 1];
        for (&xp, &zp) in x_pos.iter().zip(&z_pos) {
            x_prefix[dist[xp]] += 1;
            z_prefix[zp] += 1;
        }
        let (mut xs, mut zs) = (0, 0);
        for r in 0..=d {
            xs += x_prefix[r];
            zs += z_prefix[r];
            if zs > xs {
                violations += 1;
                break;
            }
        }
    }
    Ok(DominanceReport { steps_checked: steps, violations, exit_step: None })
}

fn quantile(ordered: &[(usize, f64)], uniform: f64) -> usize {
    let mut acc = 0.0;
    for &(v, p) in ordered {
        acc += p;
        if uniform < acc {
            return v;
        }
    }
    ordered.iter().rev().find(|&&(_, p)| p > 0.0).map_or(ordered[0].0, |&(v, _)| v)
}
