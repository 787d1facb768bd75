//! The four subcommands.
//!
//! Each command resolves the configuration, echoes it to `<out>/config.json`
//! and writes its artifacts below `<out>`. Replications run in parallel on
//! the rayon pool; each replication is sequential and keyed by its seed, so
//! outputs do not depend on the thread count.

use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use dqbrm_core::adp::{extract_policy, Solver, ValueTable};
use dqbrm_core::rds::{mixture_pdf_from_values, QuadratureGrid};
use dqbrm_core::saa::{evaluate_policy, myopic_policy, percent_optimality, saa_optimal, ScenarioSet};
use dqbrm_core::trace::{NullSink, TraceCadence, TraceRecord};
use dqbrm_core::{MdpModel, NoisePoint, QbrmSpec};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::output::{self, fmt};
use crate::registry::{prepare, Prepared};
use crate::{config_err, with_model};

pub const SUMMARY_SCHEMA: &str = "dqbrm-summary/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Benchmark,
    CompareRds,
    ExportDensity,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Benchmark => "benchmark",
            Command::CompareRds => "compare-rds",
            Command::ExportDensity => "export-density",
        }
    }
}

/// Resolves `cfg`, echoes it and runs `cmd`.
pub fn execute(cmd: Command, mut cfg: ExperimentConfig) -> anyhow::Result<()> {
    let prepared = prepare(&mut cfg)?;
    if cmd == Command::CompareRds && cfg.seeds.len() < 2 {
        return Err(config_err("seeds: compare-rds needs at least two seeds"));
    }
    if cmd == Command::ExportDensity && cfg.density.is_none() {
        return Err(config_err("density: export-density needs a density section"));
    }
    if cmd == Command::ExportDensity && prepared.rds.is_none() {
        return Err(config_err("rds.basis: export-density needs a basis"));
    }
    std::fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    std::fs::write(cfg.out.join("config.json"), cfg.to_json()? + "\n")?;
    match cmd {
        Command::Run => cmd_run(&prepared, &cfg),
        Command::Benchmark => cmd_benchmark(&prepared, &cfg),
        Command::CompareRds => cmd_compare_rds(&prepared, &cfg),
        Command::ExportDensity => cmd_export_density(&prepared, &cfg),
    }
}

fn solver<'m, M: MdpModel>(
    model: &'m M,
    p: &Prepared,
    spec: QbrmSpec,
    seed: u64,
    rds: bool,
) -> anyhow::Result<Solver<'m, M>> {
    let s = Solver::new(model, spec, p.settings.clone(), seed).map_err(|e| config_err(e.to_string()))?;
    if !rds {
        return Ok(s);
    }
    let r = p.rds.clone().ok_or_else(|| config_err("rds.basis: missing"))?;
    s.with_rds(r).map_err(|e| config_err(format!("rds: {e}")))
}

/// Result of one `run` replication.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub records: Vec<TraceRecord>,
    pub runtime_s: f64,
    pub lr_cap_hits: u64,
    pub zero_theta_rows: Option<usize>,
    pub final_error: Option<(f64, f64)>,
}

fn run_one<M: MdpModel>(
    model: &M,
    p: &Prepared,
    cfg: &ExperimentConfig,
    reference: Option<&ValueTable>,
    seed: u64,
) -> anyhow::Result<RunOutcome> {
    let start = Instant::now();
    let mut s = solver(model, p, p.spec.clone(), seed, cfg.rds.enabled)?;
    if let Some(r) = reference {
        s = s.with_reference(r.entries().to_vec())?;
    }
    let space = s.space().clone();
    let watch = cfg
        .trace
        .watch
        .iter()
        .map(|&[t, st, a]| (t, space.index(st, a).expect("validated")))
        .collect();
    s = s.watch(watch)?;
    let n = cfg.solver.iterations;
    let cadence = match cfg.trace.every {
        Some(k) => TraceCadence::every(k),
        None => TraceCadence::for_total(n),
    };
    let mut records = Vec::new();
    s.advance(n, &cadence, &mut records)?;
    let final_error = reference.map(|r| s.value_table().distance(r.entries()));
    let out_dir = &cfg.out;
    output::write_tables(
        &out_dir.join("tables").join(format!("{seed}.csv")),
        &space,
        s.value_table(),
        Some(s.aux_table()),
    )?;
    let runtime_s = start.elapsed().as_secs_f64();
    Ok(RunOutcome {
        seed,
        records,
        runtime_s,
        lr_cap_hits: s.lr_cap_hits(),
        zero_theta_rows: s.coefficients().map(|c| c.zero_rows()),
        final_error,
    })
}

fn cmd_run(p: &Prepared, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let start = Instant::now();
    let horizon = p.model.horizon();
    let space = p.model.space();
    let reference = cfg
        .reference
        .as_deref()
        .map(|path| output::read_q_table(path, &space, horizon))
        .transpose()?;
    let outcomes = with_model!(&p.model, m => cfg
        .seeds
        .par_iter()
        .map(|&seed| run_one(m, p, cfg, reference.as_ref(), seed))
        .collect::<anyhow::Result<Vec<_>>>())?;
    let m = p.spec.m();
    for o in &outcomes {
        output::write_trace(
            &cfg.out.join("traces").join(format!("{}.csv", o.seed)),
            &o.records,
            reference.is_some(),
            &cfg.trace.watch,
            m,
        )?;
    }
    let runs: Vec<_> = outcomes
        .iter()
        .map(|o| {
            json!({
                "seed": o.seed,
                "runtime_s": o.runtime_s,
                "final_err_inf": o.final_error.map(|e| e.0),
                "final_err_l2": o.final_error.map(|e| e.1),
                "lr_cap_hits": o.lr_cap_hits,
                "zero_theta_rows": o.zero_theta_rows,
            })
        })
        .collect();
    output::write_json(
        &cfg.out.join("summary.json"),
        &json!({
            "schema": SUMMARY_SCHEMA,
            "command": "run",
            "model": cfg.model.name,
            "iterations": cfg.solver.iterations,
            "rds": cfg.rds.enabled,
            "seeds": cfg.seeds,
            "runs": runs,
            "total_runtime_s": start.elapsed().as_secs_f64(),
            "config": cfg,
        }),
    )
}

/// One row of `benchmark.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub policy: String,
    pub lambda: f64,
    pub v0: f64,
    pub pct_optimality: f64,
}

/// SAA-optimal and myopic values plus every configured policy, per `λ`.
pub fn benchmark_rows(p: &Prepared, cfg: &ExperimentConfig) -> anyhow::Result<Vec<BenchmarkRow>> {
    let horizon = p.model.horizon();
    let space = p.model.space();
    let tables = cfg
        .policies
        .iter()
        .map(|f| Ok((f.name.clone(), output::read_q_table(&f.tables, &space, horizon)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let s0 = p.model.initial_state();
    let mut rows = Vec::new();
    with_model!(&p.model, m => {
        let scenarios = ScenarioSet::generate(m, cfg.saa.scenarios, cfg.saa.seed)?;
        let mut f = std::fs::File::create(cfg.out.join("scenarios.csv"))?;
        scenarios.write_csv(&mut f)?;
        for lambda in p.lambdas(cfg)? {
            let spec = p.spec_for_lambda(lambda)?;
            let opt = saa_optimal(m, &spec, &scenarios)?;
            let myopic = myopic_policy(m, &spec, &scenarios)?;
            let v_star = opt.values.value(0, s0);
            let v_my = evaluate_policy(m, &spec, &myopic, &scenarios)?.value(0, s0);
            let qstar = ValueTable::from_entries(horizon, space.len(), opt.q.clone())?;
            output::write_tables(
                &cfg.out.join("qstar").join(format!("lambda_{}.csv", fmt(lambda))),
                &space,
                &qstar,
                None,
            )?;
            rows.push(BenchmarkRow { policy: "optimal".into(), lambda, v0: v_star, pct_optimality: percent_optimality(v_star, v_my, v_star)? });
            rows.push(BenchmarkRow { policy: "myopic".into(), lambda, v0: v_my, pct_optimality: percent_optimality(v_my, v_my, v_star)? });
            for (name, q) in &tables {
                let v = evaluate_policy(m, &spec, &extract_policy(&space, q), &scenarios)?.value(0, s0);
                rows.push(BenchmarkRow { policy: name.clone(), lambda, v0: v, pct_optimality: percent_optimality(v, v_my, v_star)? });
            }
        }
        anyhow::Ok(())
    })?;
    Ok(rows)
}

fn cmd_benchmark(p: &Prepared, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let start = Instant::now();
    let rows = benchmark_rows(p, cfg)?;
    let mut w = output::csv_writer(&cfg.out.join("benchmark.csv"), output::BENCHMARK_SCHEMA)?;
    w.write_record(["policy", "lambda", "v0", "pct_optimality"])?;
    for r in &rows {
        w.write_record([r.policy.clone(), fmt(r.lambda), fmt(r.v0), fmt(r.pct_optimality)])?;
    }
    w.flush()?;
    output::write_json(
        &cfg.out.join("summary.json"),
        &json!({
            "schema": SUMMARY_SCHEMA,
            "command": "benchmark",
            "model": cfg.model.name,
            "scenarios": cfg.saa.scenarios,
            "rows": rows,
            "total_runtime_s": start.elapsed().as_secs_f64(),
            "config": cfg,
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Plain,
    Rds,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Rds => "rds",
        }
    }
}

/// Percent optimality of one replication at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRow {
    pub variant: Variant,
    pub lambda: f64,
    pub seed: u64,
    pub checkpoint: u64,
    pub v0: f64,
    pub pct_optimality: f64,
}

/// Mean over seeds of [`PairRow::pct_optimality`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub variant: Variant,
    pub lambda: f64,
    pub checkpoint: u64,
    pub mean_pct: f64,
    pub stderr_pct: f64,
    pub seeds: usize,
}

/// Matched plain/RDS runs: both variants of a seed share the keyed random
/// streams, so their `W^u` draws and initial pairs coincide.
pub fn compare_rows(p: &Prepared, cfg: &ExperimentConfig) -> anyhow::Result<(Vec<PairRow>, Vec<ComparisonRow>)> {
    let lambdas = p.lambdas(cfg)?;
    let checkpoints = cfg.effective_checkpoints();
    let s0 = p.model.initial_state();
    let pairs: Vec<PairRow> = with_model!(&p.model, m => {
        let scenarios = ScenarioSet::generate(m, cfg.saa.scenarios, cfg.saa.seed)?;
        let mut benches = Vec::new();
        for &lambda in &lambdas {
            let spec = p.spec_for_lambda(lambda)?;
            let v_star = saa_optimal(m, &spec, &scenarios)?.values.value(0, s0);
            let myopic = myopic_policy(m, &spec, &scenarios)?;
            let v_my = evaluate_policy(m, &spec, &myopic, &scenarios)?.value(0, s0);
            benches.push((lambda, spec, v_star, v_my));
        }
        let jobs: Vec<_> = benches
            .iter()
            .flat_map(|b| cfg.seeds.iter().flat_map(move |&s| [(b, s, Variant::Plain), (b, s, Variant::Rds)]))
            .collect();
        let per_job = jobs
            .par_iter()
            .map(|((lambda, spec, v_star, v_my), seed, variant)| {
                let mut s = solver(m, p, spec.clone(), *seed, *variant == Variant::Rds)?;
                let mut rows = Vec::with_capacity(checkpoints.len());
                for &c in &checkpoints {
                    s.advance(c - s.iterations_done(), &TraceCadence::never(), &mut NullSink)?;
                    let v0 = evaluate_policy(m, spec, &s.policy(), &scenarios)?.value(0, s0);
                    rows.push(PairRow {
                        variant: *variant,
                        lambda: *lambda,
                        seed: *seed,
                        checkpoint: c,
                        v0,
                        pct_optimality: percent_optimality(v0, *v_my, *v_star)?,
                    });
                }
                anyhow::Ok(rows)
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        per_job.into_iter().flatten().collect()
    });
    let mut summary = Vec::new();
    for &lambda in &lambdas {
        for variant in [Variant::Plain, Variant::Rds] {
            for &c in &checkpoints {
                let xs: Vec<f64> = pairs
                    .iter()
                    .filter(|r| r.variant == variant && r.lambda == lambda && r.checkpoint == c)
                    .map(|r| r.pct_optimality)
                    .collect();
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = if xs.len() > 1 {
                    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                summary.push(ComparisonRow {
                    variant,
                    lambda,
                    checkpoint: c,
                    mean_pct: mean,
                    stderr_pct: (var / n).sqrt(),
                    seeds: xs.len(),
                });
            }
        }
    }
    Ok((pairs, summary))
}

pub fn write_comparison(out: &Path, pairs: &[PairRow], summary: &[ComparisonRow]) -> anyhow::Result<()> {
    let mut w = output::csv_writer(&out.join("pairs.csv"), output::PAIRS_SCHEMA)?;
    w.write_record(["variant", "lambda", "seed", "checkpoint", "v0", "pct_optimality"])?;
    for r in pairs {
        w.write_record([
            r.variant.name().to_string(),
            fmt(r.lambda),
            r.seed.to_string(),
            r.checkpoint.to_string(),
            fmt(r.v0),
            fmt(r.pct_optimality),
        ])?;
    }
    w.flush()?;
    let mut w = output::csv_writer(&out.join("comparison.csv"), output::COMPARISON_SCHEMA)?;
    w.write_record(["variant", "lambda", "checkpoint", "mean_pct", "stderr_pct", "seeds"])?;
    for r in summary {
        w.write_record([
            r.variant.name().to_string(),
            fmt(r.lambda),
            r.checkpoint.to_string(),
            fmt(r.mean_pct),
            fmt(r.stderr_pct),
            r.seeds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_compare_rds(p: &Prepared, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let start = Instant::now();
    let (pairs, summary) = compare_rows(p, cfg)?;
    write_comparison(&cfg.out, &pairs, &summary)?;
    output::write_json(
        &cfg.out.join("summary.json"),
        &json!({
            "schema": SUMMARY_SCHEMA,
            "command": "compare-rds",
            "model": cfg.model.name,
            "seeds": cfg.seeds,
            "checkpoints": cfg.effective_checkpoints(),
            "comparison": summary,
            "total_runtime_s": start.elapsed().as_secs_f64(),
            "config": cfg,
        }),
    )
}

fn cmd_export_density(p: &Prepared, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let start = Instant::now();
    let dc = cfg.density.as_ref().expect("checked in execute");
    let seed = cfg.seeds[0];
    let basis = &p.rds.as_ref().expect("checked in execute").basis;
    let space = p.model.space();
    let pair = space.index(dc.state, dc.action).expect("validated");
    let grid = QuadratureGrid::midpoint(basis.support(), dc.per_dim)?;
    let dim = basis.support().dim();
    let theta = with_model!(&p.model, m => {
        let mut s = solver(m, p, p.spec.clone(), seed, true)?;
        s.advance(cfg.solver.iterations, &TraceCadence::never(), &mut NullSink)?;
        let theta = s.coefficients().expect("sampling enabled").row(dc.t, pair).to_vec();
        let mut header: Vec<String> = (0..dim).map(|j| format!("w{j}")).collect();
        header.push("density".into());
        let mut w = output::csv_writer(&cfg.out.join("density.csv"), output::DENSITY_SCHEMA)?;
        w.write_record(&header)?;
        let mut phi = Vec::new();
        for point in grid.points() {
            let noise = NoisePoint::from_coords(point);
            basis.eval(m, dc.t, &noise, &mut phi);
            let mut row: Vec<String> = point.iter().map(|x| fmt(*x)).collect();
            row.push(fmt(mixture_pdf_from_values(&theta, &phi)));
            w.write_record(&row)?;
        }
        w.flush()?;
        theta
    });
    output::write_json(
        &cfg.out.join("summary.json"),
        &json!({
            "schema": SUMMARY_SCHEMA,
            "command": "export-density",
            "model": cfg.model.name,
            "seed": seed,
            "iterations": cfg.solver.iterations,
            "t": dc.t,
            "state": dc.state,
            "action": dc.action,
            "per_dim": dc.per_dim,
            "theta": theta,
            "total_runtime_s": start.elapsed().as_secs_f64(),
            "config": cfg,
        }),
    )
}
