//! Exact finite-state analysis over an enumerated state space: transition
//! matrices, stationary laws, worst-case TV decay and mixing times, Cheeger
//! constants, and reversibility diagnostics.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::ArwKernel;
use crate::error::{ArwError, Result};
use crate::graph::Graph;
use crate::state_space::{Configuration, StateSpace};

pub const STOCHASTIC_TOL: f64 = 1e-12;
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;
pub const REVERSIBILITY_VIOLATION: f64 = 1e-6;
pub const DIRECT_SOLVE_CAP: usize = 2000;
pub const POWER_TOL: f64 = 1e-13;
pub const POWER_MAX_ITERATIONS: u64 = 10_000_000;
pub const DENSE_CAP: usize = 5000;
pub const SQUARING_CAP: usize = 1500;
pub const CHEEGER_CAP: usize = 24;

/// Row-sparse stochastic matrix; columns within a row are sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    rows: Vec<Vec<(usize, f64)>>,
}

impl TransitionMatrix {
    /// Validates that every row is a probability vector within 1e-12.
    pub fn from_rows(mut rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let size = rows.len();
        for (x, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|&(y, _)| y);
            let mut total = 0.0;
            for &(y, p) in row.iter() {
                if y >= size || !(p >= 0.0) {
                    return Err(ArwError::Config(format!("bad entry ({x},{y}) = {p}")));
                }
                total += p;
            }
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(ArwError::Config(format!("row {x} sums to {total}")));
            }
        }
        Ok(TransitionMatrix { rows })
    }

    /// Exact transition matrix of `kernel` indexed by `space`.
    pub fn build(kernel: &ArwKernel, space: &StateSpace) -> Result<Self> {
        if space.k() != kernel.k() || space.n() != kernel.n() {
            return Err(ArwError::SpaceMismatch {
                space_k: space.k(),
                space_n: space.n() as usize,
                kernel_k: kernel.k(),
                kernel_n: kernel.n() as usize,
            });
        }
        if kernel.beta().finite().is_none() {
            return Err(ArwError::InfiniteBeta);
        }
        let rows = (0..space.len())
            .into_par_iter()
            .map(|x| {
                let law = kernel.step_distribution(&space.config(x))?;
                let mut row: Vec<(usize, f64)> =
                    law.into_iter().map(|(c, p)| (space.rank_unchecked(c.occupancy()), p)).collect();
                row.sort_by_key(|&(y, _)| y);
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, x: usize) -> &[(usize, f64)] {
        &self.rows[x]
    }

    pub fn prob(&self, x: usize, y: usize) -> f64 {
        let row = &self.rows[x];
        row.binary_search_by_key(&y, |&(c, _)| c).map_or(0.0, |at| row[at].1)
    }

    /// `(P + I) / 2`.
    pub fn lazy(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(x, row)| {
                let mut out: Vec<(usize, f64)> = row.iter().map(|&(y, p)| (y, 0.5 * p)).collect();
                match out.binary_search_by_key(&x, |&(c, _)| c) {
                    Ok(at) => out[at].1 += 0.5,
                    Err(at) => out.insert(at, (x, 0.5)),
                }
                out
            })
            .collect();
        TransitionMatrix { rows }
    }

    pub fn is_lazy(&self) -> bool {
        (0..self.len()).all(|x| self.prob(x, x) >= 0.5)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.len();
        let mut dense = DMatrix::zeros(m, m);
        for (x, row) in self.rows.iter().enumerate() {
            for &(y, p) in row {
                dense[(x, y)] = p;
            }
        }
        dense
    }

    /// `mu P` for a row vector `mu`.
    pub fn propagate(&self, mu: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (x, row) in self.rows.iter().enumerate() {
            let mass = mu[x];
            if mass != 0.0 {
                for &(y, p) in row {
                    out[y] += mass * p;
                }
            }
        }
        out
    }
}

/// Probability vector aligned with a state ordering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(p: Vec<f64>) -> Self {
        Distribution(p)
    }

    pub fn point_mass(size: usize, at: usize) -> Self {
        let mut p = vec![0.0; size];
        p[at] = 1.0;
        Distribution(p)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl Deref for Distribution {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Half the L1 distance.
pub fn tv_distance(mu: &[f64], nu: &[f64]) -> f64 {
    assert_eq!(mu.len(), nu.len(), "distributions must be aligned");
    0.5 * mu.iter().zip(nu).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub fn l1_distance(mu: &[f64], nu: &[f64]) -> f64 {
    2.0 * tv_distance(mu, nu)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationaryMethod {
    /// Direct solve up to 2000 states, power iteration above.
    Auto,
    Direct,
    /// Power iteration on the lazy matrix.
    Power,
}

#[derive(Clone, Debug)]
pub struct StationaryResult {
    pub pi: Distribution,
    /// `||pi P - pi||_1` against the matrix that was passed in.
    pub residual: f64,
    pub method: StationaryMethod,
    pub iterations: u64,
}

/// Stationary law of an irreducible chain.
pub fn stationary(matrix: &TransitionMatrix, method: StationaryMethod) -> Result<StationaryResult> {
    let method = match method {
        StationaryMethod::Auto if matrix.len() <= DIRECT_SOLVE_CAP => StationaryMethod::Direct,
        StationaryMethod::Auto => StationaryMethod::Power,
        m => m,
    };
    let (pi, iterations) = match method {
        StationaryMethod::Direct => (direct_stationary(matrix)?, 0),
        _ => power_stationary(matrix, POWER_TOL, POWER_MAX_ITERATIONS)?,
    };
    let residual = l1_distance(&matrix.propagate(&pi), &pi);
    if residual > STATIONARY_RESIDUAL_TOL {
        return Err(ArwError::NoConvergence { what: "stationary residual", iterations, last_change: residual });
    }
    Ok(StationaryResult { pi: Distribution(pi), residual, method, iterations })
}

fn direct_stationary(matrix: &TransitionMatrix) -> Result<Vec<f64>> {
    let m = matrix.len();
    if m > DENSE_CAP {
        return Err(ArwError::CapExceeded { what: "direct stationary solve", size: m, cap: DENSE_CAP });
    }
    // (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1
    let mut a = matrix.to_dense().transpose();
    for i in 0..m {
        a[(i, i)] -= 1.0;
    }
    for j in 0..m {
        a[(m - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(m);
    b[m - 1] = 1.0;
    let solution = a.lu().solve(&b).ok_or(ArwError::Singular("stationary solve"))?;
    let mut pi: Vec<f64> = solution.iter().map(|&p| p.max(0.0)).collect();
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    Ok(pi)
}

fn power_stationary(matrix: &TransitionMatrix, tol: f64, cap: u64) -> Result<(Vec<f64>, u64)> {
    let lazy = matrix.lazy();
    let m = lazy.len();
    let mut pi = vec![1.0 / m as f64; m];
    let mut change = f64::INFINITY;
    for it in 1..=cap {
        let next = lazy.propagate(&pi);
        change = l1_distance(&next, &pi);
        pi = next;
        if change <= tol {
            let total: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|p| *p /= total);
            return Ok((pi, it));
        }
    }
    Err(ArwError::NoConvergence { what: "power iteration", iterations: cap, last_change: change })
}

/// Closed-form stationary law on the complete graph K_k, aligned with
/// `StateSpace::enumerate(k, n)`: proportional to
/// `multinomial(n; x) * exp(beta / (2n) * sum_i x(i)^2)`.
pub fn complete_graph_stationary(k: usize, n: u32, beta: f64) -> Result<Distribution> {
    if k < 2 {
        return Err(ArwError::Config("closed form needs k >= 2".into()));
    }
    let space = StateSpace::enumerate(k, n)?;
    Ok(complete_graph_stationary_on(&space, beta))
}

pub fn complete_graph_stationary_on(space: &StateSpace, beta: f64) -> Distribution {
    let n = space.n();
    let mut ln_fact = vec![0.0f64; n as usize + 1];
    for m in 1..=n as usize {
        ln_fact[m] = ln_fact[m - 1] + (m as f64).ln();
    }
    let scale = beta / (2.0 * f64::from(n));
    let logs: Vec<f64> = (0..space.len())
        .map(|idx| {
            let occ = space.occupancy(idx);
            let multinomial = ln_fact[n as usize] - occ.iter().map(|&c| ln_fact[c as usize]).sum::<f64>();
            let energy: f64 = occ.iter().map(|&c| f64::from(c) * f64::from(c)).sum();
            multinomial + scale * energy
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    Distribution(weights.into_iter().map(|w| w / total).collect())
}

/// `max_x TV(delta_x P^t, pi)` from a matrix of rows `P^t(x, .)`.
fn worst_row_tv(rows: &DMatrix<f64>, pi: &[f64]) -> f64 {
    (0..rows.nrows())
        .map(|x| 0.5 * rows.row(x).iter().zip(pi).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn check_dense(matrix: &TransitionMatrix) -> Result<()> {
    if matrix.len() > DENSE_CAP {
        return Err(ArwError::CapExceeded { what: "dense mixing analysis", size: matrix.len(), cap: DENSE_CAP });
    }
    Ok(())
}

/// Worst-case distance to stationarity after `t` steps.
pub fn worst_case_tv(matrix: &TransitionMatrix, pi: &[f64], t: u64) -> Result<f64> {
    check_dense(matrix)?;
    let m = matrix.len();
    if m <= SQUARING_CAP {
        let mut result = DMatrix::identity(m, m);
        let mut base = matrix.to_dense();
        let mut e = t;
        while e > 0 {
            if e & 1 == 1 {
                result = &result * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        Ok(worst_row_tv(&result, pi))
    } else {
        let mut rows = DMatrix::identity(m, m);
        for _ in 0..t {
            rows = sparse_step(&rows, matrix);
        }
        Ok(worst_row_tv(&rows, pi))
    }
}

fn sparse_step(rows: &DMatrix<f64>, matrix: &TransitionMatrix) -> DMatrix<f64> {
    let m = rows.nrows();
    let columns: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|x| {
            let current: Vec<f64> = rows.row(x).iter().copied().collect();
            matrix.propagate(&current)
        })
        .collect();
    DMatrix::from_fn(m, m, |x, y| columns[x][y])
}

#[derive(Clone, Copy, Debug)]
pub struct MixingOptions {
    /// Largest `t` the squaring search may reach, as a power of two.
    pub max_doublings: u32,
    /// Step cap for linear propagation above the squaring cap.
    pub max_linear_steps: u64,
}

impl Default for MixingOptions {
    fn default() -> Self {
        MixingOptions { max_doublings: 62, max_linear_steps: 100_000 }
    }
}

/// Least `t` with `d(t) <= eps`.
pub fn mixing_time(matrix: &TransitionMatrix, pi: &[f64], eps: f64) -> Result<u64> {
    mixing_time_with(matrix, pi, eps, MixingOptions::default())
}

pub fn mixing_time_with(matrix: &TransitionMatrix, pi: &[f64], eps: f64, opts: MixingOptions) -> Result<u64> {
    check_dense(matrix)?;
    let m = matrix.len();
    let identity = DMatrix::identity(m, m);
    if worst_row_tv(&identity, pi) <= eps {
        return Ok(0);
    }
    if m > SQUARING_CAP {
        let mut rows = identity;
        for t in 1..=opts.max_linear_steps {
            rows = sparse_step(&rows, matrix);
            if worst_row_tv(&rows, pi) <= eps {
                return Ok(t);
            }
        }
        return Err(ArwError::MixingCapExceeded(opts.max_linear_steps));
    }
    // powers[j] = P^(2^j); find the first power of two with d <= eps
    let mut powers = vec![matrix.to_dense()];
    loop {
        let j = powers.len() - 1;
        if worst_row_tv(&powers[j], pi) <= eps {
            break;
        }
        if j as u32 >= opts.max_doublings {
            return Err(ArwError::MixingCapExceeded(1u64 << opts.max_doublings));
        }
        let next = &powers[j] * &powers[j];
        powers.push(next);
    }
    let top = powers.len() - 1;
    if top == 0 {
        return Ok(1);
    }
    // d(lo) > eps holds throughout; binary lifting over the lower powers
    let mut lo: u64 = 1 << (top - 1);
    let mut current = powers[top - 1].clone();
    for j in (0..top - 1).rev() {
        let candidate = &current * &powers[j];
        if worst_row_tv(&candidate, pi) > eps {
            current = candidate;
            lo += 1 << j;
        }
    }
    Ok(lo + 1)
}

#[derive(Clone, Debug, Serialize)]
pub struct CheegerResult {
    pub phi_star: f64,
    /// State indices of a minimizing set `S` with `pi(S) <= 1/2`.
    pub argmin_set: Vec<usize>,
    pub argmin_mass: f64,
}

/// Exact Cheeger constant by enumerating all `2^|Omega|` subsets.
pub fn cheeger_constant(matrix: &TransitionMatrix, pi: &[f64]) -> Result<CheegerResult> {
    let m = matrix.len();
    if m > CHEEGER_CAP {
        return Err(ArwError::CapExceeded { what: "exhaustive Cheeger enumeration", size: m, cap: CHEEGER_CAP });
    }
    if m < 2 {
        return Err(ArwError::Config("Cheeger constant needs at least two states".into()));
    }
    // edge measure Q(x,y) = pi(x) P(x,y), off-diagonal only
    let mut q = vec![vec![0.0f64; m]; m];
    let mut out_mask = vec![0u32; m];
    let mut in_mask = vec![0u32; m];
    for x in 0..m {
        for &(y, p) in matrix.row(x) {
            if y != x && p > 0.0 {
                q[x][y] = pi[x] * p;
                out_mask[x] |= 1 << y;
                in_mask[y] |= 1 << x;
            }
        }
    }
    let full: u32 = if m == 32 { u32::MAX } else { (1u32 << m) - 1 };
    let bits = |mut mask: u32| {
        std::iter::from_fn(move || {
            if mask == 0 {
                None
            } else {
                let b = mask.trailing_zeros() as usize;
                mask &= mask - 1;
                Some(b)
            }
        })
    };
    let boundary = |mask: u32| -> (f64, f64) {
        let mass: f64 = bits(mask).map(|x| pi[x]).sum();
        let flow: f64 = bits(mask).map(|x| bits(out_mask[x] & !mask).map(|y| q[x][y]).sum::<f64>()).sum();
        (mass, flow)
    };
    // membership toggle of state s relative to the rest of the mask
    let delta_add = |s: usize, rest: u32| -> f64 {
        let leaving: f64 = bits(out_mask[s] & !rest & full).map(|y| q[s][y]).sum();
        let absorbed: f64 = bits(in_mask[s] & rest).map(|x| q[x][s]).sum();
        leaving - absorbed
    };

    let low_bits = m.min(16);
    let high_bits = m - low_bits;
    let mut best = (f64::INFINITY, 0u32);
    let admissible = 0.5 + 1e-12;
    for hi in 0u32..(1 << high_bits) {
        let mut mask = hi << low_bits;
        // recompute from scratch per block to keep the running sums from drifting
        let (mut mass, mut flow) = boundary(mask);
        let mut visit = |mask: u32, mass: f64, flow: f64| {
            if mask != 0 && mass <= admissible {
                let phi = flow / mass;
                if phi < best.0 {
                    best = (phi, mask);
                }
            }
        };
        visit(mask, mass, flow);
        for g in 1u32..(1 << low_bits) {
            let s = g.trailing_zeros() as usize;
            let bit = 1u32 << s;
            let rest = mask & !bit;
            let d = delta_add(s, rest);
            if mask & bit == 0 {
                mask |= bit;
                mass += pi[s];
                flow += d;
            } else {
                mask = rest;
                mass -= pi[s];
                flow -= d;
            }
            visit(mask, mass, flow);
        }
    }
    let (mass, flow) = boundary(best.1);
    Ok(CheegerResult { phi_star: flow / mass, argmin_set: bits(best.1).collect(), argmin_mass: mass })
}

/// `t_mix(1/4) >= 1 / (4 Phi*)`.
pub fn cheeger_lower_bound(phi_star: f64) -> f64 {
    1.0 / (4.0 * phi_star)
}

/// `t_mix(eps) <= 2 log(1/(2 eps sqrt(pi_min))) / log(2/(2 - Phi*^2))` for
/// chains with holding probability at least 1/2.
pub fn cheeger_upper_bound(phi_star: f64, eps: f64, pi_min: f64) -> f64 {
    let numerator = 2.0 * (1.0 / (2.0 * eps * pi_min.sqrt())).ln();
    // log(2/(2-z)) = -log1p(-z/2), accurate for tiny z
    let denominator = -(-0.5 * phi_star * phi_star).ln_1p();
    numerator / denominator
}

#[derive(Clone, Debug, Serialize)]
pub struct CheegerSandwich {
    pub phi_star: f64,
    pub lower: f64,
    pub upper: f64,
    pub pi_min: f64,
}

/// Both Cheeger bounds on `t_mix(eps)`; the matrix must be lazy.
pub fn cheeger_sandwich(matrix: &TransitionMatrix, pi: &[f64], eps: f64) -> Result<CheegerSandwich> {
    if let Some(state) = (0..matrix.len()).find(|&x| matrix.prob(x, x) < 0.5) {
        return Err(ArwError::NotLazy { state, holding: matrix.prob(state, state) });
    }
    let cheeger = cheeger_constant(matrix, pi)?;
    let pi_min = pi.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(CheegerSandwich {
        phi_star: cheeger.phi_star,
        lower: cheeger_lower_bound(cheeger.phi_star),
        upper: cheeger_upper_bound(cheeger.phi_star, eps, pi_min),
        pi_min,
    })
}

/// Natural log of the analytic bound `(1/(n (Delta + e^beta)))^(n diam)`
/// on the smallest stationary probability.
pub fn ln_analytic_pi_min_bound(n: u32, max_degree: usize, beta: f64, diameter: usize) -> f64 {
    let per_step = -(f64::from(n) * (max_degree as f64 + beta.exp())).ln();
    f64::from(n) * diameter as f64 * per_step
}

/// `max |pi(x) P(x,y) - pi(y) P(y,x)|`.
pub fn check_detailed_balance(matrix: &TransitionMatrix, pi: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for x in 0..matrix.len() {
        for &(y, p) in matrix.row(x) {
            let gap = (pi[x] * p - pi[y] * matrix.prob(y, x)).abs();
            worst = worst.max(gap);
        }
    }
    worst
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CycleProducts {
    pub log_forward: f64,
    pub log_reverse: f64,
}

impl CycleProducts {
    pub fn forward(&self) -> f64 {
        self.log_forward.exp()
    }

    pub fn reverse(&self) -> f64 {
        self.log_reverse.exp()
    }

    /// `|forward - reverse| / max(forward, reverse)`.
    pub fn relative_gap(&self) -> f64 {
        let hi = self.log_forward.max(self.log_reverse);
        let lo = self.log_forward.min(self.log_reverse);
        1.0 - (lo - hi).exp()
    }
}

/// Forward and reverse transition products around a closed cycle of
/// configurations (the first state is not repeated at the end).
pub fn kolmogorov_cycle_products(kernel: &ArwKernel, cycle: &[Configuration]) -> Result<CycleProducts> {
    let len = cycle.len();
    let mut log_forward = 0.0;
    let mut log_reverse = 0.0;
    for a in 0..len {
        let b = (a + 1) % len;
        let (x, y) = (&cycle[a], &cycle[b]);
        if x != y && x.single_move_to(y).is_none() {
            return Err(ArwError::BrokenCycle(a, b));
        }
        let forward = kernel.transition_probability(x, y)?;
        if forward <= 0.0 {
            return Err(ArwError::ZeroProbabilityStep(a, b));
        }
        let reverse = kernel.transition_probability(y, x)?;
        if reverse <= 0.0 {
            return Err(ArwError::ZeroProbabilityStep(b, a));
        }
        log_forward += forward.ln();
        log_reverse += reverse.ln();
    }
    Ok(CycleProducts { log_forward, log_reverse })
}

/// The four-move cycle that witnesses non-reversibility: pick `u ~ v ~ w`
/// with `u` and `w` non-adjacent, put `n-2` particles on `u` and 2 on `v`,
/// then move `v->u`, `v->w`, `u->v`, `w->v`. `None` on complete graphs.
pub fn kolmogorov_witness_cycle(g: &Graph, n: u32) -> Option<Vec<Configuration>> {
    if n < 3 {
        return None;
    }
    let (u, v, w) = (0..g.k()).find_map(|v| {
        let nb = g.neighbors(v);
        nb.iter()
            .flat_map(|&u| nb.iter().map(move |&w| (u, w)))
            .find(|&(u, w)| u != w && !g.is_adjacent(u, w))
            .map(|(u, w)| (u, v, w))
    })?;
    let mut start = vec![0u32; g.k()];
    start[u] = n - 2;
    start[v] = 2;
    let mut cycle = vec![Configuration::new(start)];
    for (from, to) in [(v, u), (v, w), (u, v)] {
        let next = cycle.last().expect("non-empty").moved(from, to)?;
        cycle.push(next);
    }
    Some(cycle)
}

/// `pi(S_v)` for each vertex `v`, where `S_v` holds the configurations in
/// which `v` carries a maximal count (ties count toward every maximizer).
pub fn heaviest_vertex_masses(space: &StateSpace, pi: &[f64]) -> Vec<f64> {
    let mut masses = vec![0.0; space.k()];
    for idx in 0..space.len() {
        let occ = space.occupancy(idx);
        let top = occ.iter().copied().max().unwrap_or(0);
        for (v, &c) in occ.iter().enumerate() {
            if c == top {
                masses[v] += pi[idx];
            }
        }
    }
    masses
}

#[cfg(test)]
mod tests {
    use std::f64::consts::E;
    use std::sync::Arc;

    use super::*;

    fn matrix_for(g: Graph, n: u32, beta: f64, lazy: bool) -> (ArwKernel, StateSpace, TransitionMatrix) {
        let kernel = ArwKernel::new(Arc::new(g), n, beta, lazy).unwrap();
        let space = StateSpace::enumerate(kernel.k(), n).unwrap();
        let matrix = TransitionMatrix::build(&kernel, &space).unwrap();
        (kernel, space, matrix)
    }

    fn two_state(p: f64) -> TransitionMatrix {
        TransitionMatrix::from_rows(vec![vec![(0, 1.0 - p), (1, p)], vec![(0, p), (1, 1.0 - p)]]).unwrap()
    }

    #[test]
    fn k2_matrices() {
        let (_, _, m) = matrix_for(Graph::complete(2).unwrap(), 2, 0.0, false);
        assert_eq!(m.row(1), &[(0, 0.25), (1, 0.5), (2, 0.25)]);
        let (_, _, m) = matrix_for(Graph::complete(2).unwrap(), 2, 2.0, false);
        assert_eq!(m.prob(2, 0), 0.0);
        assert!((m.prob(2, 1) - 1.0 / (E + 1.0)).abs() < 1e-15);
        assert!((m.prob(2, 2) - E / (E + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn build_rejects_mismatch_and_infinite_beta() {
        let kernel = ArwKernel::new(Arc::new(Graph::path(3).unwrap()), 3, 1.0, false).unwrap();
        let space = StateSpace::enumerate(3, 4).unwrap();
        assert!(matches!(TransitionMatrix::build(&kernel, &space), Err(ArwError::SpaceMismatch { .. })));
        let kernel = kernel.with_beta(crate::dynamics::Beta::NegInfinity);
        let space = StateSpace::enumerate(3, 3).unwrap();
        assert_eq!(TransitionMatrix::build(&kernel, &space), Err(ArwError::InfiniteBeta));
    }

    #[test]
    fn rows_are_supported_on_one_step_neighbors() {
        let (kernel, space, m) = matrix_for(Graph::star(4).unwrap(), 4, 1.3, false);
        for x in 0..space.len() {
            let cx = space.config(x);
            let allowed: Vec<usize> = crate::state_space::one_step_neighbors(&cx, kernel.graph())
                .into_iter()
                .map(|(c, _)| space.rank(&c).unwrap())
                .collect();
            for &(y, _) in m.row(x) {
                assert!(allowed.contains(&y));
            }
        }
    }

    #[test]
    fn stationary_small_cases() {
        let (_, _, m) = matrix_for(Graph::complete(2).unwrap(), 2, 0.0, false);
        for method in [StationaryMethod::Direct, StationaryMethod::Power] {
            let r = stationary(&m, method).unwrap();
            assert!(l1_distance(&r.pi, &[0.25, 0.5, 0.25]) < 1e-12);
            assert!(r.residual <= 1e-12);
        }
    }

    #[test]
    fn closed_form_k2_hand_values() {
        let d = complete_graph_stationary(2, 2, 0.0).unwrap();
        assert!(l1_distance(&d, &[0.25, 0.5, 0.25]) < 1e-15);
        for beta in [-2.0f64, 1.0, 3.0] {
            let z = 2.0 * beta.exp() + 2.0 * (beta / 2.0).exp();
            let expect = [beta.exp() / z, 2.0 * (beta / 2.0).exp() / z, beta.exp() / z];
            let d = complete_graph_stationary(2, 2, beta).unwrap();
            assert!(l1_distance(&d, &expect) < 1e-14);
            let (_, _, m) = matrix_for(Graph::complete(2).unwrap(), 2, beta, false);
            let r = stationary(&m, StationaryMethod::Direct).unwrap();
            assert!(l1_distance(&r.pi, &expect) < 1e-12);
        }
    }

    #[test]
    fn closed_form_is_permutation_symmetric() {
        for (k, n, beta) in [(3usize, 5u32, 1.7f64), (4, 4, -2.0), (3, 6, 6.0)] {
            let space = StateSpace::enumerate(k, n).unwrap();
            let d = complete_graph_stationary_on(&space, beta);
            for idx in 0..space.len() {
                let mut occ = space.occupancy(idx).to_vec();
                occ.rotate_left(1);
                let other = space.rank(&Configuration::new(occ.clone())).unwrap();
                assert!((d[idx] - d[other]).abs() < 1e-15);
                occ.swap(0, 1);
                let other = space.rank(&Configuration::new(occ)).unwrap();
                assert!((d[idx] - d[other]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn k3_stationary_matches_closed_form() {
        let (_, _, m) = matrix_for(Graph::complete(3).unwrap(), 4, 1.0, false);
        let r = stationary(&m, StationaryMethod::Auto).unwrap();
        assert!(l1_distance(&r.pi, &complete_graph_stationary(3, 4, 1.0).unwrap()) < 1e-10);
    }

    #[test]
    fn lazy_and_base_share_stationary_law() {
        for g in [Graph::path(3).unwrap(), Graph::star(4).unwrap(), Graph::complete(3).unwrap()] {
            let (_, _, m) = matrix_for(g, 4, 2.0, false);
            let a = stationary(&m, StationaryMethod::Direct).unwrap();
            let b = stationary(&m.lazy(), StationaryMethod::Direct).unwrap();
            let c = stationary(&m, StationaryMethod::Power).unwrap();
            assert!(l1_distance(&a.pi, &b.pi) < 1e-10);
            assert!(l1_distance(&a.pi, &c.pi) < 1e-10);
        }
    }

    #[test]
    fn tv_basics() {
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(tv_distance(&[1.0, 0.0], &[0.5, 0.5]), 0.5);
    }

    #[test]
    fn one_particle_on_k2_mixes_in_one_step() {
        let (_, _, m) = matrix_for(Graph::complete(2).unwrap(), 1, 0.0, false);
        let pi = [0.5, 0.5];
        assert_eq!(worst_case_tv(&m, &pi, 0).unwrap(), 0.5);
        assert_eq!(worst_case_tv(&m, &pi, 1).unwrap(), 0.0);
        assert_eq!(mixing_time(&m, &pi, 0.25).unwrap(), 1);
    }

    #[test]
    fn mixing_search_matches_linear_scan() {
        for (g, n, beta) in [
            (Graph::path(3).unwrap(), 4u32, 0.5f64),
            (Graph::complete(3).unwrap(), 5, 3.0),
            (Graph::star(4).unwrap(), 3, -1.0),
        ] {
            let (_, _, m) = matrix_for(g, n, beta, false);
            let pi = stationary(&m, StationaryMethod::Direct).unwrap().pi;
            for eps in [0.25, 0.1, 0.01] {
                let t = mixing_time(&m, &pi, eps).unwrap();
                let mut rows = DMatrix::identity(m.len(), m.len());
                let mut scan = 0;
                while worst_row_tv(&rows, &pi) > eps {
                    rows = sparse_step(&rows, &m);
                    scan += 1;
                }
                assert_eq!(t, scan);
                assert!(worst_case_tv(&m, &pi, t).unwrap() <= eps);
                assert!(worst_case_tv(&m, &pi, t - 1).unwrap() > eps);
            }
        }
    }

    #[test]
    fn worst_case_tv_is_non_increasing_on_lazy_chains() {
        let (_, _, m) = matrix_for(Graph::path(4).unwrap(), 3, 1.0, true);
        let pi = stationary(&m, StationaryMethod::Direct).unwrap().pi;
        let ds: Vec<f64> = (0..40).map(|t| worst_case_tv(&m, &pi, t).unwrap()).collect();
        assert!((ds[0] - (1.0 - pi.min())).abs() < 1e-12);
        assert!(ds.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn k3_mixing_slows_with_attraction() {
        let (_, _, fast) = matrix_for(Graph::complete(3).unwrap(), 6, 0.1, false);
        let (_, _, slow) = matrix_for(Graph::complete(3).unwrap(), 6, 12.0, false);
        let pf = stationary(&fast, StationaryMethod::Direct).unwrap().pi;
        let ps = stationary(&slow, StationaryMethod::Direct).unwrap().pi;
        assert!(mixing_time(&fast, &pf, 0.25).unwrap() < mixing_time(&slow, &ps, 0.25).unwrap());
    }

    #[test]
    fn cheeger_two_state() {
        for p in [0.1, 0.25, 0.6] {
            let m = two_state(p);
            let c = cheeger_constant(&m, &[0.5, 0.5]).unwrap();
            assert!((c.phi_star - p).abs() < 1e-15);
            assert_eq!(c.argmin_set.len(), 1);
        }
        let lazy = two_state(0.25);
        let s = cheeger_sandwich(&lazy, &[0.5, 0.5], 0.25).unwrap();
        assert_eq!(s.lower, 1.0);
        let t = mixing_time(&lazy, &[0.5, 0.5], 0.25).unwrap();
        assert!(s.lower <= t as f64 && t as f64 <= s.upper);
    }

    #[test]
    fn cheeger_matches_naive_enumeration() {
        let (_, _, m) = matrix_for(Graph::path(3).unwrap(), 3, 1.5, false);
        let pi = stationary(&m, StationaryMethod::Direct).unwrap().pi;
        let fast = cheeger_constant(&m, &pi).unwrap();
        let size = m.len();
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << size) {
            let inside = |x: usize| mask >> x & 1 == 1;
            let mass: f64 = (0..size).filter(|&x| inside(x)).map(|x| pi[x]).sum();
            if mass > 0.5 + 1e-12 {
                continue;
            }
            let mut flow = 0.0;
            for x in (0..size).filter(|&x| inside(x)) {
                for &(y, p) in m.row(x) {
                    if !inside(y) {
                        flow += pi[x] * p;
                    }
                }
            }
            best = best.min(flow / mass);
        }
        assert!((fast.phi_star - best).abs() < 1e-13);
        assert!(fast.phi_star > 0.0 && fast.phi_star <= 1.0);
        assert!(fast.argmin_mass <= 0.5 + 1e-12);
    }

    #[test]
    fn cheeger_shrinks_with_attraction() {
        let (_, _, m0) = matrix_for(Graph::complete(2).unwrap(), 4, 0.0, false);
        let (_, _, m8) = matrix_for(Graph::complete(2).unwrap(), 4, 8.0, false);
        let p0 = stationary(&m0, StationaryMethod::Direct).unwrap().pi;
        let p8 = stationary(&m8, StationaryMethod::Direct).unwrap().pi;
        assert!(cheeger_constant(&m8, &p8).unwrap().phi_star < cheeger_constant(&m0, &p0).unwrap().phi_star);
    }

    #[test]
    fn cheeger_caps_and_laziness() {
        let (_, _, m) = matrix_for(Graph::complete(3).unwrap(), 6, 0.0, false);
        let pi = stationary(&m, StationaryMethod::Direct).unwrap().pi;
        assert!(matches!(cheeger_constant(&m, &pi), Err(ArwError::CapExceeded { .. })));
        let (_, _, m) = matrix_for(Graph::complete(3).unwrap(), 2, 0.0, false);
        let pi = stationary(&m, StationaryMethod::Direct).unwrap().pi;
        assert!(matches!(cheeger_sandwich(&m, &pi, 0.25), Err(ArwError::NotLazy { .. })));
        assert!(cheeger_sandwich(&m.lazy(), &pi, 0.25).is_ok());
    }

    #[test]
    fn upper_bound_small_phi_asymptotics() {
        let (eps, pi_min, phi) = (0.25, 1e-3, 1e-3);
        let log_term = (1.0 / (2.0 * eps * f64::sqrt(pi_min))).ln();
        let asymptotic = 4.0 * log_term / (phi * phi);
        let ratio = cheeger_upper_bound(phi, eps, pi_min) / asymptotic;
        assert!((1.0 - 1e-6..=1.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn reversibility_dichotomy() {
        for k in [2usize, 3] {
            for n in 3..=5u32 {
                for beta in [-1.0, 0.0, 2.0] {
                    let (_, _, m) = matrix_for(Graph::complete(k).unwrap(), n, beta, false);
                    let pi = stationary(&m, StationaryMethod::Direct).unwrap().pi;
                    assert!(check_detailed_balance(&m, &pi) <= 1e-12);
                }
            }
        }
        let (_, _, m) = matrix_for(Graph::path(3).unwrap(), 3, 1.0, false);
        let pi = stationary(&m, StationaryMethod::Direct).unwrap().pi;
        assert!(check_detailed_balance(&m, &pi) > REVERSIBILITY_VIOLATION);
        for g in [Graph::path(4).unwrap(), Graph::grid(2, 2).unwrap(), Graph::star(4).unwrap()] {
            let (_, _, m) = matrix_for(g, 3, 0.0, false);
            let pi = stationary(&m, StationaryMethod::Direct).unwrap().pi;
            assert!(check_detailed_balance(&m, &pi) <= 1e-12);
        }
    }

    #[test]
    fn kolmogorov_witness_on_three_path() {
        let g = Graph::path(3).unwrap();
        let cycle = kolmogorov_witness_cycle(&g, 4).unwrap();
        let expect: Vec<Configuration> =
            [[2u32, 2, 0], [3, 1, 0], [3, 0, 1], [2, 1, 1]].iter().map(|c| Configuration::new(c.to_vec())).collect();
        assert_eq!(cycle, expect);
        let kernel = ArwKernel::new(Arc::new(g), 4, 1.0, false).unwrap();
        assert!(kolmogorov_cycle_products(&kernel, &cycle).unwrap().relative_gap() > 1e-6);
        let flat = kolmogorov_cycle_products(&kernel.with_beta(0.0), &cycle).unwrap();
        assert!((flat.forward() - flat.reverse()).abs() <= 1e-12);
        assert!(kolmogorov_witness_cycle(&Graph::complete(4).unwrap(), 4).is_none());
    }

    #[test]
    fn kolmogorov_two_cycle_and_errors() {
        let kernel = ArwKernel::new(Arc::new(Graph::path(3).unwrap()), 3, 1.7, false).unwrap();
        let x = Configuration::new(vec![2, 1, 0]);
        let y = Configuration::new(vec![1, 2, 0]);
        let two = kolmogorov_cycle_products(&kernel, &[x.clone(), y.clone()]).unwrap();
        assert!((two.log_forward - two.log_reverse).abs() < 1e-15);
        let far = Configuration::new(vec![0, 2, 1]);
        assert_eq!(kolmogorov_cycle_products(&kernel, &[x.clone(), far]), Err(ArwError::BrokenCycle(0, 1)));
        let jump = Configuration::new(vec![1, 1, 1]);
        assert_eq!(kolmogorov_cycle_products(&kernel, &[x, jump]), Err(ArwError::ZeroProbabilityStep(0, 1)));
    }

    #[test]
    fn heaviest_vertex_mass_is_at_least_one_over_k() {
        for (g, n, beta) in [
            (Graph::path(3).unwrap(), 5u32, 2.0f64),
            (Graph::star(4).unwrap(), 4, 5.0),
            (Graph::grid(2, 2).unwrap(), 4, -1.0),
        ] {
            let (kernel, space, m) = matrix_for(g, n, beta, false);
            let pi = stationary(&m, StationaryMethod::Direct).unwrap().pi;
            let masses = heaviest_vertex_masses(&space, &pi);
            assert!(masses.iter().any(|&s| s >= 1.0 / kernel.k() as f64));
        }
    }

    #[test]
    fn analytic_pi_min_bound_is_below_exact() {
        let (kernel, _, m) = matrix_for(Graph::path(3).unwrap(), 3, 1.0, true);
        let pi = stationary(&m, StationaryMethod::Direct).unwrap().pi;
        let g = kernel.graph();
        let ln_bound = ln_analytic_pi_min_bound(3, g.max_degree(), 1.0, g.diameter());
        assert!(ln_bound <= pi.min().ln());
    }
}
