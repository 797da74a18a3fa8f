//! Command implementations behind the `arw` binary.

pub mod args;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use arw::comparison::{
    censored_median, expected_occupancy_zero, find_beta_threshold, hitting_replicas, z_lambda0_closed_form,
    z_stationary, ZChainParams,
};
use arw::coupling::{contraction_report, no_contraction_check, tv_lemma_audit, ConfigMetric};
use arw::dynamics::{replica_rng, ArwKernel};
use arw::error::{ArwError, Result};
use arw::exact::{
    check_detailed_balance, cheeger_constant, cheeger_lower_bound, cheeger_upper_bound, kolmogorov_cycle_products,
    kolmogorov_witness_cycle, mixing_time, stationary, StationaryMethod, TransitionMatrix, STATIONARY_RESIDUAL_TOL,
    STOCHASTIC_TOL,
};
use arw::experiment::{
    CouplingCheck, ExperimentConfig, StartSpec, Task, TrajectoryHeader, TrajectoryWriter, ZchainMode,
};
use arw::graph::Graph;
use arw::state_space::{Configuration, StateSpace};
use arw::suite::{run_suite, Status, SuiteOptions};
use rand::Rng;
use serde_json::{json, Value};

/// Detailed-balance residual below which a chain is reported reversible.
pub const REVERSIBLE_TOL: f64 = 1e-10;

/// What a command printed and how the process should exit.
#[derive(Debug)]
pub struct Outcome {
    pub stdout: String,
    pub exit_code: i32,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Outcome { stdout, exit_code: 0 }
    }
}

pub fn run(config: &ExperimentConfig) -> Result<Outcome> {
    config.validate()?;
    match &config.task {
        Task::Simulate { steps, stride, start } => simulate(config, *steps, *stride, *start),
        Task::Analyze { stationary, mixing_time, cheeger, reversibility } => {
            analyze(config, *stationary, *mixing_time, *cheeger, *reversibility)
        }
        Task::Zchain { d, delta, max_degree, mode } => zchain(config, *d, *delta, *max_degree, *mode),
        Task::Coupling { check } => coupling(config, *check),
        Task::Suite { suite } => {
            let opts = SuiteOptions { out_dir: config.out.clone(), seed: config.seed };
            let reports = run_suite(*suite, &opts);
            let mut stdout = String::new();
            for r in &reports {
                stdout.push_str(&format!("{r}\n"));
            }
            if let Some(dir) = &config.out {
                let report = json!({ "config": config, "criteria": reports });
                write_file(&dir.join("report.json"), &pretty(&report))?;
            }
            let failed = reports.iter().filter(|r| r.status == Status::Fail).count();
            stdout.push_str(&format!(
                "{} criteria: {} passed, {} warned, {failed} failed\n",
                reports.len(),
                reports.iter().filter(|r| r.status == Status::Pass).count(),
                reports.iter().filter(|r| r.status == Status::Warn).count()
            ));
            Ok(Outcome { stdout, exit_code: i32::from(failed > 0) })
        }
    }
}

fn pretty(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json value serializes");
    s.push('\n');
    s
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

/// JSON goes to `out` when set; stdout always gets a copy.
fn emit_json(config: &ExperimentConfig, value: Value) -> Result<Outcome> {
    let text = pretty(&value);
    if let Some(path) = &config.out {
        write_file(path, &text)?;
    }
    Ok(Outcome::ok(text))
}

fn build_graph(config: &ExperimentConfig) -> Result<Arc<Graph>> {
    let spec = config.graph.as_ref().ok_or_else(|| ArwError::Config("missing graph".into()))?;
    Ok(Arc::new(spec.build()?))
}

fn simulate(config: &ExperimentConfig, steps: u64, stride: u64, start: StartSpec) -> Result<Outcome> {
    let g = build_graph(config)?;
    let k = g.k();
    let kernel = ArwKernel::new(g, config.n, config.beta, config.lazy)?;
    let mut rng = replica_rng(config.seed, 0);
    let x0 = match start {
        StartSpec::Uniform => {
            let mut occ = vec![0u32; k];
            for _ in 0..config.n {
                occ[rng.random_range(0..k)] += 1;
            }
            Configuration::new(occ)
        }
        StartSpec::Spread => Configuration::spread(k, config.n),
        StartSpec::Concentrated(v) if v < k => Configuration::concentrated(k, config.n, v),
        StartSpec::Concentrated(v) => return Err(ArwError::VertexOutOfRange { index: v, k }),
    };
    let header = TrajectoryHeader {
        seed: config.seed,
        graph: config.graph.as_ref().map(ToString::to_string).unwrap_or_default(),
        beta: config.beta,
        n: config.n,
        lazy: config.lazy,
        steps,
        stride,
        k,
        config: Some(config.to_json()),
    };
    let mut writer = TrajectoryWriter::new(Vec::new(), &header)?;
    let mut failure = None;
    let last = kernel.run(&x0, steps, &mut rng, |t, x| {
        if failure.is_none() {
            failure = writer.observe(t, x).err();
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let csv = String::from_utf8(writer.finish()?).expect("csv is utf-8");
    match &config.out {
        Some(path) => {
            write_file(path, &csv)?;
            let summary = json!({
                "config": config,
                "seed": config.seed,
                "csv": path,
                "final": last.occupancy(),
                "max_occupancy": last.max_occupancy(),
                "min_occupancy": last.min_occupancy(),
            });
            Ok(Outcome::ok(pretty(&summary)))
        }
        None => Ok(Outcome::ok(csv)),
    }
}

fn analyze(
    config: &ExperimentConfig,
    want_pi: bool,
    mixing_eps: Option<f64>,
    want_cheeger: bool,
    want_reversibility: bool,
) -> Result<Outcome> {
    let g = build_graph(config)?;
    let kernel = ArwKernel::new(g.clone(), config.n, config.beta, config.lazy)?;
    let space = StateSpace::enumerate(kernel.k(), config.n)?;
    let matrix = TransitionMatrix::build(&kernel, &space)?;
    let solved = stationary(&matrix, StationaryMethod::Auto)?;
    let pi = &solved.pi;
    let states: Vec<Configuration> = space.iter().collect();
    let mut out = json!({
        "config": config,
        "states": states.len(),
        "stationary_residual": solved.residual,
        "stationary_method": solved.method,
        "tolerances": { "stochastic": STOCHASTIC_TOL, "stationary_residual": STATIONARY_RESIDUAL_TOL, "reversible": REVERSIBLE_TOL },
    });
    if want_pi {
        out["configurations"] = json!(states);
        out["pi"] = json!(pi);
    }
    if let Some(eps) = mixing_eps {
        out["eps"] = json!(eps);
        out["t_mix"] = json!(mixing_time(&matrix, pi, eps)?);
    }
    if want_cheeger {
        let c = cheeger_constant(&matrix, pi)?;
        let argmin: Vec<&Configuration> = c.argmin_set.iter().map(|&s| &states[s]).collect();
        out["phi_star"] = json!(c.phi_star);
        out["argmin_set"] = json!(argmin);
        out["argmin_mass"] = json!(c.argmin_mass);
        if matrix.is_lazy() {
            let eps = mixing_eps.unwrap_or(0.25);
            out["cheeger_bounds"] = json!({
                "eps": eps,
                "lower": cheeger_lower_bound(c.phi_star),
                "upper": cheeger_upper_bound(c.phi_star, eps, pi.min()),
            });
        }
    }
    if want_reversibility {
        let residual = check_detailed_balance(&matrix, pi);
        out["db_residual"] = json!(residual);
        out["reversible"] = json!(residual <= REVERSIBLE_TOL);
        if let Some(cycle) = kolmogorov_witness_cycle(&g, config.n) {
            let products = kolmogorov_cycle_products(&kernel, &cycle)?;
            out["kolmogorov_cycle"] = json!({
                "cycle": cycle,
                "forward": products.forward(),
                "reverse": products.reverse(),
                "relative_gap": products.relative_gap(),
            });
        }
    }
    emit_json(config, out)
}

fn zchain(config: &ExperimentConfig, d: usize, delta: f64, max_degree: usize, mode: ZchainMode) -> Result<Outcome> {
    let beta = config.beta.finite().ok_or(ArwError::InfiniteBeta)?;
    let params = ZChainParams::from_model(beta, delta, max_degree, config.n, d)?;
    match mode {
        ZchainMode::Stationary => {
            let eps_bar = delta / 4.0;
            let threshold = find_beta_threshold(delta, max_degree, config.n, d, eps_bar).ok();
            emit_json(
                config,
                json!({
                    "config": config,
                    "p": params.p,
                    "q": params.q,
                    "lambda": z_stationary(&params),
                    "lambda0_closed_form": z_lambda0_closed_form(&params),
                    "expected_occupancy_zero": expected_occupancy_zero(&params, config.n),
                    "concentration_target": (1.0 - delta + eps_bar) * f64::from(config.n),
                    "beta_threshold": threshold,
                }),
            )
        }
        ZchainMode::Hitting { replicas, max_steps } => {
            let samples = hitting_replicas(&params, config.n, delta, replicas, config.seed, max_steps);
            let mut csv = Vec::new();
            writeln!(csv, "# seed={}", config.seed)?;
            writeln!(csv, "# config={}", config.to_json())?;
            writeln!(csv, "# p={} q={}", params.p, params.q)?;
            writeln!(csv, "replica,steps,censored")?;
            for (r, s) in samples.iter().enumerate() {
                writeln!(csv, "{r},{},{}", s.steps(), s.is_censored())?;
            }
            let csv = String::from_utf8(csv).expect("csv is utf-8");
            match &config.out {
                Some(path) => {
                    write_file(path, &csv)?;
                    let summary = json!({
                        "config": config,
                        "seed": config.seed,
                        "csv": path,
                        "p": params.p,
                        "q": params.q,
                        "replicas": replicas,
                        "censored": samples.iter().filter(|s| s.is_censored()).count(),
                        "median": censored_median(&samples),
                    });
                    Ok(Outcome::ok(pretty(&summary)))
                }
                None => Ok(Outcome::ok(csv)),
            }
        }
    }
}

fn coupling(config: &ExperimentConfig, check: CouplingCheck) -> Result<Outcome> {
    let value = match check {
        CouplingCheck::NoContraction => {
            let cert = no_contraction_check()?;
            json!({ "config": config, "certificate": cert })
        }
        CouplingCheck::Contraction { metric, policy } => {
            let g = build_graph(config)?;
            let kernel = ArwKernel::new(g.clone(), config.n, config.beta, config.lazy)?;
            let space = StateSpace::enumerate(kernel.k(), config.n)?;
            let metric = ConfigMetric::new(&g, metric, policy)?;
            json!({ "config": config, "report": contraction_report(&kernel, &metric, &space)? })
        }
        CouplingCheck::TvAudit { lambda } => {
            let g = build_graph(config)?;
            let kernel = ArwKernel::new(g, config.n, config.beta, config.lazy)?;
            let space = StateSpace::enumerate(kernel.k(), config.n)?;
            json!({ "config": config, "audit": tv_lemma_audit(&kernel, &space, lambda)? })
        }
    };
    emit_json(config, value)
}
