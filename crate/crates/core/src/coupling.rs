//! Optimal transport and coupling diagnostics: meeting-time metric of the
//! single walk, path metric on configurations, exact Kantorovich transport
//! with a dual certificate, contraction sweeps, and exhaustive TV audits.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simple_walk_distribution, ArwKernel, MoveDistribution};
use crate::error::{ArwError, Result};
use crate::exact::tv_distance;
use crate::graph::Graph;
use crate::state_space::{Configuration, StateSpace};

pub const CERTIFICATE_TOL: f64 = 1e-9;
const FLOW_EPS: f64 = 1e-15;
const POSITIVE_FLOW: f64 = 1e-12;
const MAX_AUGMENTATIONS: usize = 100_000;

/// Expected meeting times `d(x, y)` of two independent stay-or-move walks.
#[derive(Clone, Debug, Serialize)]
pub struct MeetingTimeMetric {
    pub d: Vec<Vec<f64>>,
    pub d_max: f64,
    /// Maximum of `d` over adjacent vertex pairs.
    pub d_prime_max: f64,
    pub residual: f64,
}

/// Solves `d(x,y) = 1 + sum_{a,b} Q(x,a) Q(y,b) d(a,b)` over unordered pairs
/// with `d(x,x) = 0`.
pub fn meeting_time_metric(g: &Graph) -> Result<MeetingTimeMetric> {
    let k = g.k();
    let laws: Vec<MoveDistribution> = (0..k).map(|v| simple_walk_distribution(g, v)).collect();
    let mut pair_index = vec![vec![usize::MAX; k]; k];
    let mut pairs = Vec::new();
    for x in 0..k {
        for y in x + 1..k {
            pair_index[x][y] = pairs.len();
            pair_index[y][x] = pairs.len();
            pairs.push((x, y));
        }
    }
    let m = pairs.len();
    if m == 0 {
        return Ok(MeetingTimeMetric { d: vec![vec![0.0]; k], d_max: 0.0, d_prime_max: 0.0, residual: 0.0 });
    }
    let mut a = DMatrix::<f64>::identity(m, m);
    let b = DVector::<f64>::from_element(m, 1.0);
    for (row, &(x, y)) in pairs.iter().enumerate() {
        for (&s, &ps) in laws[x].support.iter().zip(&laws[x].probabilities) {
            for (&t, &pt) in laws[y].support.iter().zip(&laws[y].probabilities) {
                if s != t {
                    a[(row, pair_index[s][t])] -= ps * pt;
                }
            }
        }
    }
    let solution = a.clone().lu().solve(&b).ok_or(ArwError::Singular("meeting-time system"))?;
    let residual = (&a * &solution - &b).amax() / solution.amax().max(1.0);
    if residual > 1e-10 {
        return Err(ArwError::Singular("meeting-time system (residual too large)"));
    }
    let mut d = vec![vec![0.0; k]; k];
    for (row, &(x, y)) in pairs.iter().enumerate() {
        d[x][y] = solution[row];
        d[y][x] = solution[row];
    }
    let d_max = solution.max();
    let d_prime_max =
        (0..k).flat_map(|x| g.neighbors(x).iter().map(move |&y| (x, y))).map(|(x, y)| d[x][y]).fold(0.0, f64::max);
    Ok(MeetingTimeMetric { d, d_max, d_prime_max, residual })
}

#[derive(Clone, Debug, Serialize)]
pub struct TransportPlan {
    /// `(source index, target index, mass)` with positive mass.
    pub pairs: Vec<(usize, usize, f64)>,
    pub value: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub dual_value: f64,
}

/// Optimal coupling of `mu` and `nu` under `cost[i][j]`, by successive
/// shortest paths, with an optimality certificate from the residual graph.
pub fn transport(mu: &[f64], nu: &[f64], cost: &[Vec<f64>]) -> Result<TransportPlan> {
    let (a, b) = (mu.len(), nu.len());
    let (mass_mu, mass_nu) = (mu.iter().sum::<f64>(), nu.iter().sum::<f64>());
    if (mass_mu - mass_nu).abs() > CERTIFICATE_TOL {
        return Err(ArwError::MarginalMismatch(mass_mu, mass_nu));
    }
    let mut supply = mu.to_vec();
    let mut demand = nu.to_vec();
    let mut flow = vec![vec![0.0f64; b]; a];
    let target = mass_mu.min(mass_nu) - 1e-14;
    let mut shipped = 0.0;
    // node layout: 0 = source, 1..=a left, a+1..=a+b right, a+b+1 = sink
    let nodes = a + b + 2;
    let sink = nodes - 1;
    let mut augmentations = 0;
    while shipped < target {
        augmentations += 1;
        if augmentations > MAX_AUGMENTATIONS {
            return Err(ArwError::CertificateFailed("too many augmentations".into()));
        }
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev = vec![usize::MAX; nodes];
        dist[0] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for i in 0..a {
                if supply[i] > FLOW_EPS && dist[0] < dist[1 + i] {
                    dist[1 + i] = dist[0];
                    prev[1 + i] = 0;
                    changed = true;
                }
                if !dist[1 + i].is_finite() {
                    continue;
                }
                for j in 0..b {
                    let through = dist[1 + i] + cost[i][j];
                    if through < dist[1 + a + j] - 1e-14 {
                        dist[1 + a + j] = through;
                        prev[1 + a + j] = 1 + i;
                        changed = true;
                    }
                }
            }
            for j in 0..b {
                if !dist[1 + a + j].is_finite() {
                    continue;
                }
                for i in 0..a {
                    if flow[i][j] > FLOW_EPS {
                        let back = dist[1 + a + j] - cost[i][j];
                        if back < dist[1 + i] - 1e-14 {
                            dist[1 + i] = back;
                            prev[1 + i] = 1 + a + j;
                            changed = true;
                        }
                    }
                }
                if demand[j] > FLOW_EPS && dist[1 + a + j] < dist[sink] {
                    dist[sink] = dist[1 + a + j];
                    prev[sink] = 1 + a + j;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        // walk back to collect the path and its bottleneck
        let mut path = vec![sink];
        let mut node = sink;
        while node != 0 {
            node = prev[node];
            path.push(node);
            if path.len() > nodes + 1 {
                return Err(ArwError::CertificateFailed("cycle in augmenting path".into()));
            }
        }
        path.reverse();
        let first = path[1] - 1;
        let last = path[path.len() - 2] - 1 - a;
        let mut bottleneck = supply[first].min(demand[last]);
        for w in path[1..path.len() - 1].windows(2) {
            if w[0] > a {
                bottleneck = bottleneck.min(flow[w[1] - 1][w[0] - 1 - a]);
            }
        }
        supply[first] -= bottleneck;
        demand[last] -= bottleneck;
        for w in path[1..path.len() - 1].windows(2) {
            if w[0] <= a {
                flow[w[0] - 1][w[1] - 1 - a] += bottleneck;
            } else {
                flow[w[1] - 1][w[0] - 1 - a] -= bottleneck;
            }
        }
        shipped += bottleneck;
    }

    let (u, v) = residual_duals(&flow, cost)?;
    let mut pairs = Vec::new();
    let mut value = 0.0;
    for i in 0..a {
        for j in 0..b {
            if flow[i][j] > 0.0 {
                pairs.push((i, j, flow[i][j]));
                value += flow[i][j] * cost[i][j];
            }
        }
    }
    let dual_value =
        u.iter().zip(mu).map(|(x, m)| x * m).sum::<f64>() + v.iter().zip(nu).map(|(y, m)| y * m).sum::<f64>();
    let plan = TransportPlan { pairs, value, u, v, dual_value };
    certify(&plan, mu, nu, cost)?;
    Ok(plan)
}

/// Shortest distances in the residual bipartite graph from a virtual root;
/// `u_i = -dist_i`, `v_j = dist_j` is dual feasible and slack-free on used pairs.
fn residual_duals(flow: &[Vec<f64>], cost: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let a = flow.len();
    let b = cost.first().map_or(0, Vec::len);
    let mut dist = vec![0.0f64; a + b];
    for round in 0..=a + b {
        let mut changed = false;
        for i in 0..a {
            for j in 0..b {
                if dist[i] + cost[i][j] < dist[a + j] - 1e-13 {
                    dist[a + j] = dist[i] + cost[i][j];
                    changed = true;
                }
                if flow[i][j] > POSITIVE_FLOW && dist[a + j] - cost[i][j] < dist[i] - 1e-13 {
                    dist[i] = dist[a + j] - cost[i][j];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
        if round == a + b {
            return Err(ArwError::CertificateFailed("negative cycle in residual graph".into()));
        }
    }
    Ok((dist[..a].iter().map(|d| -d).collect(), dist[a..].to_vec()))
}

/// Checks marginals, nonnegativity, dual feasibility, complementary
/// slackness and the duality gap at 1e-9.
pub fn certify(plan: &TransportPlan, mu: &[f64], nu: &[f64], cost: &[Vec<f64>]) -> Result<()> {
    let fail = |msg: String| Err(ArwError::CertificateFailed(msg));
    let mut row = vec![0.0; mu.len()];
    let mut col = vec![0.0; nu.len()];
    let mut value = 0.0;
    for &(i, j, m) in &plan.pairs {
        if m < 0.0 {
            return fail(format!("negative mass {m} at ({i},{j})"));
        }
        row[i] += m;
        col[j] += m;
        value += m * cost[i][j];
        if m > POSITIVE_FLOW && cost[i][j] - plan.u[i] - plan.v[j] > CERTIFICATE_TOL {
            return fail(format!("slackness violated at ({i},{j})"));
        }
    }
    for (i, (&r, &m)) in row.iter().zip(mu).enumerate() {
        if (r - m).abs() > CERTIFICATE_TOL {
            return fail(format!("source marginal {i}: {r} vs {m}"));
        }
    }
    for (j, (&c, &m)) in col.iter().zip(nu).enumerate() {
        if (c - m).abs() > CERTIFICATE_TOL {
            return fail(format!("target marginal {j}: {c} vs {m}"));
        }
    }
    for i in 0..mu.len() {
        for j in 0..nu.len() {
            if plan.u[i] + plan.v[j] > cost[i][j] + CERTIFICATE_TOL {
                return fail(format!("dual infeasible at ({i},{j})"));
            }
        }
    }
    if (value - plan.value).abs() > CERTIFICATE_TOL || (plan.value - plan.dual_value).abs() > CERTIFICATE_TOL {
        return fail(format!("primal {} vs dual {}", plan.value, plan.dual_value));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    /// Every configuration edge has length 1.
    Unit,
    /// An edge moving a particle from `i` to `j` has length `d(i, j)`.
    MeetingTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgePolicy {
    /// `y = x - e_i + e_j` for any `i != j`.
    AllPairs,
    /// Only for adjacent `i ~ j`.
    AdjacentOnly,
}

macro_rules! kebab_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),+ })
            }
        }
        impl FromStr for $ty {
            type Err = ArwError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    other => Err(ArwError::Config(format!("unknown {} {other:?}", stringify!($ty)))),
                }
            }
        }
    };
}

kebab_enum!(MetricKind { Unit => "unit", MeetingTime => "meeting-time" });
kebab_enum!(EdgePolicy { AllPairs => "all-pairs", AdjacentOnly => "adjacent-only" });

/// Path metric `rho` on configurations induced by the configuration graph
/// with the chosen edge set and lengths.
#[derive(Clone, Debug)]
pub struct ConfigMetric {
    kind: MetricKind,
    policy: EdgePolicy,
    /// Shortest-path cost of moving one particle between vertices.
    vertex_cost: Vec<Vec<f64>>,
}

impl ConfigMetric {
    pub fn new(g: &Graph, kind: MetricKind, policy: EdgePolicy) -> Result<Self> {
        let k = g.k();
        let meeting = match kind {
            MetricKind::MeetingTime => Some(meeting_time_metric(g)?),
            MetricKind::Unit => None,
        };
        let mut cost = vec![vec![f64::INFINITY; k]; k];
        for i in 0..k {
            cost[i][i] = 0.0;
            for j in 0..k {
                let allowed = i != j && (policy == EdgePolicy::AllPairs || g.is_adjacent(i, j));
                if allowed {
                    cost[i][j] = meeting.as_ref().map_or(1.0, |m| m.d[i][j]);
                }
            }
        }
        for via in 0..k {
            for i in 0..k {
                for j in 0..k {
                    let through = cost[i][via] + cost[via][j];
                    if through < cost[i][j] {
                        cost[i][j] = through;
                    }
                }
            }
        }
        Ok(ConfigMetric { kind, policy, vertex_cost: cost })
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn policy(&self) -> EdgePolicy {
        self.policy
    }

    pub fn vertex_cost(&self) -> &[Vec<f64>] {
        &self.vertex_cost
    }

    /// `rho(x, y)`: the move cost for single-move pairs, otherwise the
    /// minimum-cost transport of the occupancy difference.
    pub fn distance(&self, x: &Configuration, y: &Configuration) -> Result<f64> {
        if x.particles() != y.particles() {
            return Err(ArwError::ParticleCountMismatch(x.particles(), y.particles()));
        }
        if x == y {
            return Ok(0.0);
        }
        if let Some((i, j)) = x.single_move_to(y) {
            return Ok(self.vertex_cost[i][j]);
        }
        let mut surplus = Vec::new();
        let mut deficit = Vec::new();
        for v in 0..x.k() {
            let (a, b) = (x[v], y[v]);
            if a > b {
                surplus.push((v, f64::from(a - b)));
            } else if b > a {
                deficit.push((v, f64::from(b - a)));
            }
        }
        let cost: Vec<Vec<f64>> =
            surplus.iter().map(|&(i, _)| deficit.iter().map(|&(j, _)| self.vertex_cost[i][j]).collect()).collect();
        let mu: Vec<f64> = surplus.iter().map(|s| s.1).collect();
        let nu: Vec<f64> = deficit.iter().map(|s| s.1).collect();
        Ok(transport(&mu, &nu, &cost)?.value)
    }

    /// Whether `(x, y)` is an edge of the configuration graph.
    pub fn is_edge(&self, g: &Graph, x: &Configuration, y: &Configuration) -> bool {
        match x.single_move_to(y) {
            Some((i, j)) => self.policy == EdgePolicy::AllPairs || g.is_adjacent(i, j),
            None => false,
        }
    }
}

/// Transport between laws on configurations, with `rho` as the cost.
#[derive(Clone, Debug, Serialize)]
pub struct ConfigTransport {
    pub sources: Vec<(Configuration, f64)>,
    pub targets: Vec<(Configuration, f64)>,
    pub cost: Vec<Vec<f64>>,
    pub plan: TransportPlan,
}

pub fn wasserstein_lp(
    mu: &[(Configuration, f64)],
    nu: &[(Configuration, f64)],
    rho: &ConfigMetric,
) -> Result<ConfigTransport> {
    let sources: Vec<(Configuration, f64)> = mu.iter().filter(|s| s.1 > 0.0).cloned().collect();
    let targets: Vec<(Configuration, f64)> = nu.iter().filter(|s| s.1 > 0.0).cloned().collect();
    let cost = sources
        .iter()
        .map(|(x, _)| targets.iter().map(|(y, _)| rho.distance(x, y)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let m: Vec<f64> = sources.iter().map(|s| s.1).collect();
    let n: Vec<f64> = targets.iter().map(|s| s.1).collect();
    let plan = transport(&m, &n, &cost)?;
    Ok(ConfigTransport { sources, targets, cost, plan })
}

#[derive(Clone, Debug, Serialize)]
pub struct EdgeRatio {
    pub x: Configuration,
    pub y: Configuration,
    pub wasserstein: f64,
    pub rho: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionReport {
    pub edges: Vec<EdgeRatio>,
    pub max_ratio: f64,
    /// `1 - max_ratio`; negative when some edge expands.
    pub delta: f64,
    pub worst: Option<usize>,
}

/// Exact `W_rho(P(x,.), P(y,.)) / rho(x,y)` over every configuration edge,
/// each unordered pair once.
pub fn contraction_report(kernel: &ArwKernel, metric: &ConfigMetric, space: &StateSpace) -> Result<ContractionReport> {
    let g = kernel.graph();
    let mut pairs = Vec::new();
    for xi in 0..space.len() {
        let occ = space.occupancy(xi);
        for i in (0..g.k()).filter(|&i| occ[i] > 0) {
            for j in 0..g.k() {
                if i == j || (metric.policy() == EdgePolicy::AdjacentOnly && !g.is_adjacent(i, j)) {
                    continue;
                }
                let x = space.config(xi);
                let y = x.moved(i, j).expect("occupied source");
                if space.rank(&y)? > xi {
                    pairs.push((x, y));
                }
            }
        }
    }
    let edges = pairs
        .into_par_iter()
        .map(|(x, y)| {
            let w = wasserstein_lp(&kernel.step_distribution(&x)?, &kernel.step_distribution(&y)?, metric)?.plan.value;
            let rho = metric.distance(&x, &y)?;
            Ok(EdgeRatio { x, y, wasserstein: w, rho, ratio: w / rho })
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = (0..edges.len()).max_by(|&a, &b| edges[a].ratio.total_cmp(&edges[b].ratio));
    let max_ratio = worst.map_or(0.0, |w| edges[w].ratio);
    Ok(ContractionReport { edges, max_ratio, delta: 1.0 - max_ratio, worst })
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionThreshold {
    /// Largest scanned beta with `max_ratio < 1`.
    pub below: f64,
    /// Smallest scanned beta with `max_ratio >= 1`.
    pub above: f64,
    /// `(beta, max_ratio)` for every evaluated beta, in evaluation order.
    pub scanned: Vec<(f64, f64)>,
}

/// Bisection on `beta >= 0` for where the maximum ratio reaches 1, starting
/// from `beta = 0` (which must contract) and doubling an upper bracket.
pub fn contraction_threshold(
    graph: Arc<Graph>,
    n: u32,
    metric: &ConfigMetric,
    tol: f64,
    beta_cap: f64,
) -> Result<ContractionThreshold> {
    let space = StateSpace::enumerate(graph.k(), n)?;
    let base = ArwKernel::new(graph, n, 0.0, false)?;
    let mut scanned = Vec::new();
    let mut eval = |beta: f64| -> Result<f64> {
        let r = contraction_report(&base.with_beta(beta), metric, &space)?.max_ratio;
        scanned.push((beta, r));
        Ok(r)
    };
    if eval(0.0)? >= 1.0 {
        return Err(ArwError::Config("no contraction at beta = 0".into()));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while eval(hi)? < 1.0 {
        lo = hi;
        hi *= 2.0;
        if hi > beta_cap {
            return Err(ArwError::Config(format!("ratio stays below 1 up to beta = {beta_cap}")));
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if eval(mid)? < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ContractionThreshold { below: lo, above: hi, scanned })
}

/// Exact expected `rho` under the pairing coupling: the displaced particle
/// in `x` (at `i`) is paired with the one in `y` (at `j`), all others by
/// location; paired particles move together as often as TV allows. An
/// upper bound on the transport optimum.
pub fn pairing_coupling_cost(
    kernel: &ArwKernel,
    metric: &ConfigMetric,
    x: &Configuration,
    i: usize,
    j: usize,
) -> Result<f64> {
    let y = x.moved(i, j).ok_or(ArwError::EmptyVertex(i))?;
    let n = f64::from(kernel.n());
    let mut expected = 0.0;
    let mut add =
        |px: &MoveDistribution, py: &MoveDistribution, from_x: usize, from_y: usize, weight: f64| -> Result<()> {
            for (a, b, m) in maximal_coupling(px, py) {
                let nx = x.moved(from_x, a).expect("occupied");
                let ny = y.moved(from_y, b).expect("occupied");
                expected += weight * m * metric.distance(&nx, &ny)?;
            }
            Ok(())
        };
    let move_weight = if kernel.is_lazy() { 0.5 } else { 1.0 };
    add(&kernel.particle_move_distribution(x, i)?, &kernel.particle_move_distribution(&y, j)?, i, j, move_weight / n)?;
    for v in 0..x.k() {
        let paired = x[v] - u32::from(v == i);
        if paired > 0 {
            let w = move_weight * f64::from(paired) / n;
            add(&kernel.particle_move_distribution(x, v)?, &kernel.particle_move_distribution(&y, v)?, v, v, w)?;
        }
    }
    if kernel.is_lazy() {
        expected += 0.5 * metric.distance(x, &y)?;
    }
    Ok(expected)
}

/// Coupling that agrees with probability `1 - TV`, mixing the residuals
/// independently otherwise.
fn maximal_coupling(a: &MoveDistribution, b: &MoveDistribution) -> Vec<(usize, usize, f64)> {
    let mut verts: Vec<usize> = a.support.iter().chain(&b.support).copied().collect();
    verts.sort_unstable();
    verts.dedup();
    let pa: Vec<f64> = verts.iter().map(|&v| a.prob_of(v)).collect();
    let pb: Vec<f64> = verts.iter().map(|&v| b.prob_of(v)).collect();
    let mut out = Vec::new();
    let mut rest = 0.0;
    for (s, &v) in verts.iter().enumerate() {
        let common = pa[s].min(pb[s]);
        if common > 0.0 {
            out.push((v, v, common));
        }
        rest += pa[s] - common;
    }
    if rest > 0.0 {
        for (s, &v) in verts.iter().enumerate() {
            let ra = pa[s] - pa[s].min(pb[s]);
            for (t, &w) in verts.iter().enumerate() {
                let rb = pb[t] - pa[t].min(pb[t]);
                if ra > 0.0 && rb > 0.0 {
                    out.push((v, w, ra * rb / rest));
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct NoContractionCertificate {
    pub x: Configuration,
    pub y: Configuration,
    pub value: f64,
    pub dual_value: f64,
    /// Objective of the hand-built dual below, and whether it is feasible.
    pub explicit_dual_value: f64,
    pub explicit_dual_feasible: bool,
}

/// The 4-path at `beta = 0` with unit lengths on adjacent moves: `x` is
/// uniform with one particle per vertex and `y` moves a particle from
/// vertex 1 to vertex 2 (the two middle vertices).
pub fn no_contraction_check() -> Result<NoContractionCertificate> {
    let g = Arc::new(Graph::path(4)?);
    let kernel = ArwKernel::new(g.clone(), 4, 0.0, false)?;
    let metric = ConfigMetric::new(&g, MetricKind::Unit, EdgePolicy::AdjacentOnly)?;
    let x = Configuration::new(vec![1, 1, 1, 1]);
    let y = x.moved(1, 2).expect("occupied");
    let result = wasserstein_lp(&kernel.step_distribution(&x)?, &kernel.step_distribution(&y)?, &metric)?;

    // hand-built dual: values on x, y and their one-move neighbours
    let u_of = |c: &Configuration| -> Option<f64> {
        if c == &x {
            return Some(1.0);
        }
        let (a, b) = x.single_move_to(c)?;
        [((0, 1), 0.0), ((1, 0), 2.0), ((1, 2), 0.0), ((2, 1), 2.0), ((2, 3), 0.0), ((3, 2), 0.0)]
            .iter()
            .find(|(m, _)| *m == (a, b))
            .map(|&(_, val)| val)
    };
    let v_of = |c: &Configuration| -> Option<f64> {
        if c == &y {
            return Some(0.0);
        }
        let (a, b) = y.single_move_to(c)?;
        [((0, 1), 1.0), ((1, 0), -1.0), ((1, 2), 1.0), ((2, 1), -1.0), ((2, 3), 1.0), ((3, 2), 1.0)]
            .iter()
            .find(|(m, _)| *m == (a, b))
            .map(|&(_, val)| val)
    };
    let mut explicit_dual_value = 0.0;
    let mut feasible = true;
    let us = result.sources.iter().map(|(c, _)| u_of(c)).collect::<Option<Vec<_>>>();
    let vs = result.targets.iter().map(|(c, _)| v_of(c)).collect::<Option<Vec<_>>>();
    match (us, vs) {
        (Some(us), Some(vs)) => {
            for (s, &(_, p)) in result.sources.iter().enumerate() {
                explicit_dual_value += us[s] * p;
                for (t, vt) in vs.iter().enumerate() {
                    feasible &= us[s] + vt <= result.cost[s][t] + CERTIFICATE_TOL;
                }
            }
            for (t, &(_, p)) in result.targets.iter().enumerate() {
                explicit_dual_value += vs[t] * p;
            }
        }
        _ => feasible = false,
    }
    Ok(NoContractionCertificate {
        x,
        y,
        value: result.plan.value,
        dual_value: result.plan.dual_value,
        explicit_dual_value,
        explicit_dual_feasible: feasible,
    })
}

/// One audited inequality: the largest left-hand side found against its bound.
#[derive(Clone, Debug, Serialize)]
pub struct LemmaCheck {
    pub name: &'static str,
    pub max_lhs: f64,
    pub bound: f64,
    pub margin: f64,
    pub holds: bool,
    pub cases: usize,
    /// `None` when the inequality has no side condition.
    pub proviso_met: Option<bool>,
}

impl LemmaCheck {
    fn new(name: &'static str, max_lhs: f64, bound: f64, cases: usize, proviso_met: Option<bool>) -> Self {
        let margin = bound - max_lhs;
        LemmaCheck { name, max_lhs, bound, margin, holds: margin >= -1e-12, cases, proviso_met }
    }
}

pub fn close_distributions_bound(beta: f64) -> f64 {
    let h = (beta / 2.0).exp();
    (h - 1.0) / (h + 1.0)
}

/// `e^beta / (d + e^beta) - 1 / (d + 1)` for a vertex of degree `d`.
pub fn convex_extreme_bound(beta: f64, degree: usize) -> f64 {
    let d = degree as f64;
    1.0 / (1.0 + d * (-beta).exp()) - 1.0 / (d + 1.0)
}

pub fn same_vertex_bound(beta: f64, max_degree: usize, n: u32) -> f64 {
    (max_degree as f64 + 1.0) * beta / f64::from(n)
}

pub fn complete_graph_bound(beta: f64, k: usize, n: u32, lambda: f64) -> f64 {
    (-5.0 * beta / f64::from(n)) / (2.0 + (k as f64 - 2.0) * (2.0 * lambda * beta).exp())
}

pub fn complete_graph_proviso(beta: f64, n: u32) -> bool {
    f64::from(n) >= -3.0 * beta / (5.0f64 / 4.0).ln()
}

/// `lambda_beta = log(1 - delta) / (4 beta)`, positive for `beta < 0`.
pub fn lambda_beta(beta: f64, delta: f64) -> f64 {
    (1.0 - delta).ln() / (4.0 * beta)
}

/// `-10 beta < 2 + (k - 2) e^{4 lambda beta}`.
pub fn beta_bound_predicate(beta: f64, k: usize, lambda: f64) -> bool {
    -10.0 * beta < 2.0 + (k as f64 - 2.0) * (4.0 * lambda * beta).exp()
}

fn occupied_moves(space: &StateSpace, g: &Graph) -> Vec<(Configuration, Configuration)> {
    let mut out = Vec::new();
    for xi in 0..space.len() {
        let x = space.config(xi);
        for i in (0..g.k()).filter(|&i| x[i] > 0) {
            for j in (0..g.k()).filter(|&j| j != i) {
                out.push((x.clone(), x.moved(i, j).expect("occupied")));
            }
        }
    }
    out
}

/// `max TV(P_x(i,.), Q(i,.))` over occupied `i`, against the uniform bound and,
/// per degree, the extreme-point bound.
pub fn audit_close_distributions(kernel: &ArwKernel, space: &StateSpace) -> Result<(LemmaCheck, LemmaCheck)> {
    let beta = kernel.beta().finite().ok_or(ArwError::InfiniteBeta)?;
    let g = kernel.graph();
    let walks: Vec<MoveDistribution> = (0..g.k()).map(|v| simple_walk_distribution(g, v)).collect();
    let mut worst = 0.0f64;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut cases = 0;
    for xi in 0..space.len() {
        let x = space.config(xi);
        for i in (0..g.k()).filter(|&i| x[i] > 0) {
            let law = kernel.particle_move_distribution(&x, i)?;
            let tv = tv_distance(&law.probabilities, &walks[i].probabilities);
            worst = worst.max(tv);
            worst_excess = worst_excess.max(tv - convex_extreme_bound(beta, g.degree(i)));
            cases += 1;
        }
    }
    let uniform = LemmaCheck::new("close-distributions", worst, close_distributions_bound(beta), cases, None);
    // left-hand side here is the largest excess over the per-degree bound
    let convex = LemmaCheck::new("convex-extreme-point", worst_excess, 0.0, cases, None);
    Ok((uniform, convex))
}

/// `max TV(P_x(v,.), P_y(v,.))` over configuration edges (all `i != j`) and
/// vertices `v` occupied in both.
pub fn audit_same_vertex(kernel: &ArwKernel, space: &StateSpace) -> Result<LemmaCheck> {
    let beta = kernel.beta().finite().ok_or(ArwError::InfiniteBeta)?;
    let g = kernel.graph();
    let (worst, cases) = max_same_vertex_tv(kernel, occupied_moves(space, g))?;
    Ok(LemmaCheck::new("same-vertex", worst, same_vertex_bound(beta, g.max_degree(), kernel.n()), cases, None))
}

fn max_same_vertex_tv(kernel: &ArwKernel, pairs: Vec<(Configuration, Configuration)>) -> Result<(f64, usize)> {
    let results = pairs
        .par_iter()
        .map(|(x, y)| {
            let mut worst = 0.0f64;
            let mut cases = 0;
            for v in (0..x.k()).filter(|&v| x[v] > 0 && y[v] > 0) {
                let px = kernel.particle_move_distribution(x, v)?;
                let py = kernel.particle_move_distribution(y, v)?;
                worst = worst.max(tv_distance(&px.probabilities, &py.probabilities));
                cases += 1;
            }
            Ok((worst, cases))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(results.into_iter().fold((0.0, 0), |(w, c), (w2, c2)| (w.max(w2), c + c2)))
}

/// `C(lambda)`: every occupancy within `lambda n` of `n / k`.
pub fn in_balanced_set(x: &Configuration, lambda: f64) -> bool {
    let n = f64::from(x.particles());
    let mean = n / x.k() as f64;
    x.occupancy().iter().all(|&c| (f64::from(c) - mean).abs() <= lambda * n + 1e-12)
}

/// Complete graph, `beta < 0`: same-vertex TV over edges with both ends in `C(lambda)`.
pub fn audit_complete_graph(kernel: &ArwKernel, space: &StateSpace, lambda: f64) -> Result<LemmaCheck> {
    let beta = kernel.beta().finite().ok_or(ArwError::InfiniteBeta)?;
    let g = kernel.graph();
    if !g.is_complete() {
        return Err(ArwError::Config("complete-graph audit needs a complete graph".into()));
    }
    let pairs: Vec<_> = occupied_moves(space, g)
        .into_iter()
        .filter(|(x, y)| in_balanced_set(x, lambda) && in_balanced_set(y, lambda))
        .collect();
    let (worst, cases) = max_same_vertex_tv(kernel, pairs)?;
    let bound = complete_graph_bound(beta, g.k(), kernel.n(), lambda);
    Ok(LemmaCheck::new("complete-graph", worst, bound, cases, Some(complete_graph_proviso(beta, kernel.n()))))
}

#[derive(Clone, Debug, Serialize)]
pub struct TvAudit {
    pub beta: f64,
    pub lambda: Option<f64>,
    pub checks: Vec<LemmaCheck>,
}

/// Runs the audits that apply to the sign of beta. `lambda` defaults to
/// `lambda_beta` with `delta = 1/2`.
pub fn tv_lemma_audit(kernel: &ArwKernel, space: &StateSpace, lambda: Option<f64>) -> Result<TvAudit> {
    let beta = kernel.beta().finite().ok_or(ArwError::InfiniteBeta)?;
    if beta >= 0.0 {
        let (uniform, convex) = audit_close_distributions(kernel, space)?;
        let same = audit_same_vertex(kernel, space)?;
        Ok(TvAudit { beta, lambda: None, checks: vec![uniform, convex, same] })
    } else {
        let lambda = lambda.unwrap_or_else(|| lambda_beta(beta, 0.5));
        let check = audit_complete_graph(kernel, space, lambda)?;
        Ok(TvAudit { beta, lambda: Some(lambda), checks: vec![check] })
    }
}

/// One-step probabilities that vertex `v` gains and loses a particle.
fn gain_loss(kernel: &ArwKernel, x: &Configuration, v: usize) -> Result<(f64, f64)> {
    let n = f64::from(kernel.n());
    let mut gain = 0.0;
    for w in (0..x.k()).filter(|&w| w != v && x[w] > 0) {
        gain += f64::from(x[w]) / n * kernel.particle_move_distribution(x, w)?.prob_of(v);
    }
    let loss =
        if x[v] > 0 { f64::from(x[v]) / n * (1.0 - kernel.particle_move_distribution(x, v)?.prob_of(v)) } else { 0.0 };
    Ok((gain, loss))
}

#[derive(Clone, Debug, Serialize)]
pub struct DominanceCheck {
    pub cases: usize,
    /// `(configuration, vertex, which inequality)` for each failure.
    pub violations: Vec<(Configuration, usize, u8)>,
    pub worst_gap: f64,
}

/// One-step comparison of the repelling chain against independent walks
/// (`beta = 0`) in `|x(v) - n/k|`: away from the mean the repelling chain is
/// no more likely to move outward and no less likely to move inward; at the
/// mean it is no more likely to move either way.
pub fn negative_comparison_check(kernel: &ArwKernel, space: &StateSpace) -> Result<DominanceCheck> {
    let free = kernel.with_beta(0.0);
    let mean = f64::from(kernel.n()) / kernel.k() as f64;
    let mut violations = Vec::new();
    let mut worst_gap = f64::NEG_INFINITY;
    let mut cases = 0;
    for x in space.iter() {
        for v in 0..x.k() {
            let (gx, lx) = gain_loss(kernel, &x, v)?;
            let (gy, ly) = gain_loss(&free, &x, v)?;
            let here = (f64::from(x[v]) - mean).abs();
            let up = (f64::from(x[v]) + 1.0 - mean).abs();
            let down = (f64::from(x[v]) - 1.0 - mean).abs();
            // (x-side, y-side, label) with required x <= y
            let mut tests: Vec<(f64, f64, u8)> = Vec::new();
            if here == 0.0 {
                tests.push((gx, gy, 3));
                tests.push((lx, ly, 4));
            } else {
                let (out_x, out_y, in_x, in_y) = if up > here { (gx, gy, lx, ly) } else { (lx, ly, gx, gy) };
                if up.max(down) > here {
                    tests.push((out_x, out_y, 1));
                }
                if up.min(down) < here {
                    tests.push((in_y, in_x, 2));
                }
            }
            for (a, b, label) in tests {
                cases += 1;
                worst_gap = worst_gap.max(a - b);
                if a > b + 1e-12 {
                    violations.push((x.clone(), v, label));
                }
            }
        }
    }
    Ok(DominanceCheck { cases, violations, worst_gap })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel(g: Graph, n: u32, beta: f64) -> ArwKernel {
        ArwKernel::new(Arc::new(g), n, beta, false).unwrap()
    }

    #[test]
    fn meeting_times_on_small_graphs() {
        let m = meeting_time_metric(&Graph::complete(2).unwrap()).unwrap();
        assert!((m.d[0][1] - 2.0).abs() < 1e-10);
        let m = meeting_time_metric(&Graph::complete(3).unwrap()).unwrap();
        assert!((m.d[0][1] - 3.0).abs() < 1e-10);
        // two walks on the 3-path: brute-force value iteration as an oracle
        let g = Graph::path(3).unwrap();
        let m = meeting_time_metric(&g).unwrap();
        let q: Vec<Vec<f64>> = (0..3)
            .map(|v| {
                let law = simple_walk_distribution(&g, v);
                (0..3).map(|w| law.prob_of(w)).collect()
            })
            .collect();
        let mut d = [[0.0f64; 3]; 3];
        for _ in 0..20_000 {
            let mut next = [[0.0; 3]; 3];
            for x in 0..3 {
                for y in 0..3 {
                    if x != y {
                        let mut s = 1.0;
                        for a in 0..3 {
                            for b in 0..3 {
                                s += q[x][a] * q[y][b] * d[a][b];
                            }
                        }
                        next[x][y] = s;
                    }
                }
            }
            d = next;
        }
        for x in 0..3 {
            for y in 0..3 {
                assert!((m.d[x][y] - d[x][y]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn two_point_transport() {
        let cost = vec![vec![0.0, 3.0], vec![3.0, 0.0]];
        let plan = transport(&[0.7, 0.3], &[0.4, 0.6], &cost).unwrap();
        assert!((plan.value - 0.9).abs() < 1e-12);
        let plan = transport(&[0.5, 0.5], &[0.5, 0.5], &cost).unwrap();
        assert_eq!(plan.value, 0.0);
        assert!(plan.pairs.iter().all(|&(i, j, _)| i == j));
    }

    #[test]
    fn transport_matches_brute_force_on_assignment() {
        // uniform 3x3 marginals: optimum is the best permutation
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let third = 1.0 / 3.0;
        let plan = transport(&[third; 3], &[third; 3], &cost).unwrap();
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let best = perms.iter().map(|p| (0..3).map(|i| cost[i][p[i]]).sum::<f64>()).fold(f64::INFINITY, f64::min);
        assert!((plan.value - best * third).abs() < 1e-12);
    }

    #[test]
    fn transport_rejects_mismatch() {
        assert!(matches!(transport(&[1.0], &[0.5], &[vec![0.0]]), Err(ArwError::MarginalMismatch(..))));
    }

    #[test]
    fn config_metric_distances() {
        let g = Graph::path(4).unwrap();
        let unit = ConfigMetric::new(&g, MetricKind::Unit, EdgePolicy::AdjacentOnly).unwrap();
        let x = Configuration::new(vec![1, 1, 1, 1]);
        assert_eq!(unit.distance(&x, &x).unwrap(), 0.0);
        assert_eq!(unit.distance(&x, &x.moved(1, 2).unwrap()).unwrap(), 1.0);
        let y = x.moved(1, 2).unwrap();
        assert_eq!(unit.distance(&x.moved(0, 1).unwrap(), &y.moved(2, 3).unwrap()).unwrap(), 3.0);
        assert_eq!(unit.distance(&x.moved(1, 0).unwrap(), &y.moved(2, 1).unwrap()).unwrap(), 1.0);
        let flat = ConfigMetric::new(&g, MetricKind::Unit, EdgePolicy::AllPairs).unwrap();
        assert_eq!(flat.distance(&x, &x.moved(0, 3).unwrap()).unwrap(), 1.0);
        let other = Configuration::new(vec![1, 1, 1]);
        assert!(matches!(unit.distance(&x, &other), Err(ArwError::ParticleCountMismatch(4, 3))));
    }

    #[test]
    fn no_contraction_value_and_explicit_dual() {
        let cert = no_contraction_check().unwrap();
        assert!((cert.value - 1.0).abs() < 1e-9);
        assert!((cert.dual_value - 1.0).abs() < 1e-9);
        assert!(cert.explicit_dual_feasible);
        assert!((cert.explicit_dual_value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn path_coupling_fails_on_four_path_at_beta_zero() {
        let g = Graph::path(4).unwrap();
        let metric = ConfigMetric::new(&g, MetricKind::Unit, EdgePolicy::AdjacentOnly).unwrap();
        for n in 2..=4 {
            let space = StateSpace::enumerate(4, n).unwrap();
            let report = contraction_report(&kernel(g.clone(), n, 0.0), &metric, &space).unwrap();
            assert!(report.max_ratio >= 1.0 - 1e-9, "n={n}: {}", report.max_ratio);
        }
    }

    #[test]
    fn meeting_metric_contracts_on_k3() {
        let g = Graph::complete(3).unwrap();
        let metric = ConfigMetric::new(&g, MetricKind::MeetingTime, EdgePolicy::AllPairs).unwrap();
        let space = StateSpace::enumerate(3, 3).unwrap();
        let report = contraction_report(&kernel(g, 3, 0.0), &metric, &space).unwrap();
        assert!(report.max_ratio < 1.0);
        assert!(report.delta > 0.0);
        assert!(report.edges.iter().all(|e| e.ratio >= 0.0));
    }

    #[test]
    fn pairing_coupling_upper_bounds_lp() {
        let g = Graph::path(3).unwrap();
        let metric = ConfigMetric::new(&g, MetricKind::MeetingTime, EdgePolicy::AllPairs).unwrap();
        for lazy in [false, true] {
            let k = ArwKernel::new(Arc::new(g.clone()), 3, 0.8, lazy).unwrap();
            for x in StateSpace::enumerate(3, 3).unwrap().iter() {
                for i in (0..3).filter(|&i| x[i] > 0) {
                    for j in (0..3).filter(|&j| j != i) {
                        let y = x.moved(i, j).unwrap();
                        let lp = wasserstein_lp(
                            &k.step_distribution(&x).unwrap(),
                            &k.step_distribution(&y).unwrap(),
                            &metric,
                        )
                        .unwrap()
                        .plan
                        .value;
                        let coupled = pairing_coupling_cost(&k, &metric, &x, i, j).unwrap();
                        assert!(coupled >= lp - 1e-9, "{x} {i}->{j}: {coupled} < {lp}");
                    }
                }
            }
        }
    }

    #[test]
    fn tv_audit_at_beta_zero_is_trivial() {
        let k = kernel(Graph::complete(3).unwrap(), 4, 0.0);
        let space = StateSpace::enumerate(3, 4).unwrap();
        let audit = tv_lemma_audit(&k, &space, None).unwrap();
        for c in &audit.checks {
            assert!(c.max_lhs.abs() < 1e-15, "{}", c.name);
            assert!(c.holds);
        }
    }

    #[test]
    fn tv_audit_k3_positive_beta() {
        let k = kernel(Graph::complete(3).unwrap(), 6, 1.0);
        let space = StateSpace::enumerate(3, 6).unwrap();
        let audit = tv_lemma_audit(&k, &space, None).unwrap();
        assert!(audit.checks.iter().all(|c| c.holds));
        assert!(audit.checks[0].margin > 0.0 && audit.checks[2].margin > 0.0);
    }

    #[test]
    fn tv_audit_complete_graph_negative_beta() {
        let k = kernel(Graph::complete(3).unwrap(), 30, -1.0);
        let space = StateSpace::enumerate(3, 30).unwrap();
        let audit = tv_lemma_audit(&k, &space, Some(0.1)).unwrap();
        let check = &audit.checks[0];
        assert_eq!(check.proviso_met, Some(true));
        assert!(check.holds && check.cases > 0, "{check:?}");
    }

    #[test]
    fn lambda_and_beta_predicate() {
        let l = lambda_beta(-0.1, 0.5);
        assert!(l > 0.0);
        assert!(((4.0 * l * -0.1f64).exp() - 0.5).abs() < 1e-15);
        assert!(beta_bound_predicate(-0.1, 3, l));
        assert!(!beta_bound_predicate(-2.0, 3, lambda_beta(-2.0, 0.5)));
    }

    #[test]
    fn convex_bound_peaks_at_half_beta() {
        for beta in [0.5f64, 1.0, 3.0] {
            let peak = (beta / 2.0).exp();
            let continuous = |d: f64| beta.exp() / (d + beta.exp()) - 1.0 / (d + 1.0);
            assert!((continuous(peak) - close_distributions_bound(beta)).abs() < 1e-14);
            for d in 1..10 {
                assert!(convex_extreme_bound(beta, d) <= close_distributions_bound(beta) + 1e-15);
            }
        }
    }

    #[test]
    fn negative_comparison_on_k3() {
        for beta in [-0.5, -2.0] {
            let k = kernel(Graph::complete(3).unwrap(), 6, beta);
            let space = StateSpace::enumerate(3, 6).unwrap();
            let check = negative_comparison_check(&k, &space).unwrap();
            assert!(check.violations.is_empty(), "{:?}", check.violations);
        }
    }

    #[test]
    fn metric_kinds_parse() {
        assert_eq!("meeting-time".parse::<MetricKind>().unwrap(), MetricKind::MeetingTime);
        assert_eq!("adjacent-only".parse::<EdgePolicy>().unwrap(), EdgePolicy::AdjacentOnly);
        assert_eq!(EdgePolicy::AllPairs.to_string(), "all-pairs");
        assert!("nope".parse::<MetricKind>().is_err());
    }
}
