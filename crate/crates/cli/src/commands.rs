use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use serde::Serialize;
use serde_json::json;
use specplan_core::analytics::{
    accuracy_breakdown_csv, approx_accuracy, breaking_points, measure_log, verified_steps, MetricsReport,
    PriceTable,
};
use specplan_core::presentation::{project_transcript, render_transcript, replay_presentations};
use specplan_core::simkit::{
    approx_only, run_accuracy_k_grid, run_interruption_study, run_speed_grid, sim_config, simulate_run,
    simulate_with, target_only, ImpatientUser, SimError, Study,
};
use specplan_core::EventLog;

use crate::settings::{load_file, GridSettings, SimulateSettings};
use crate::{usage, AnalyzeArgs, GridArgs, ReplayArgs, ServeArgs, SimulateArgs};

fn sim_error(e: SimError) -> anyhow::Error {
    match e {
        SimError::Invalid(m) => usage(m),
        other => anyhow!(other),
    }
}

/// Fails unless none of `files` exist under `out` or `force` is set.
fn claim_outputs(out: &Path, files: &[&str], force: bool) -> anyhow::Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = files.iter().map(|f| out.join(f)).collect();
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            return Err(usage(format!(
                "refusing to overwrite {} (pass --force)",
                p.display()
            )));
        }
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(paths)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn metrics_table(m: &MetricsReport) -> String {
    let mut out = String::new();
    let rows = [
        ("TT", m.tt),
        ("ST", m.st),
        ("TO", m.to),
        ("SO", m.so),
        ("MC", m.mc),
        ("cost", m.cost),
    ];
    for (name, v) in rows {
        let _ = writeln!(out, "{name:<6}{v:>14.3}");
    }
    let _ = writeln!(out, "{:<6}{:>14}", "steps", m.steps);
    out
}

pub fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let s = SimulateSettings::resolve(&args)?;
    let paths = claim_outputs(&args.output.out, &["events.jsonl", "metrics.json"], args.output.force)?;
    let base = s.base();
    let world = base.world(s.acc, s.seed);
    let run = if s.interrupts > 0 {
        let user = ImpatientUser::new(s.impatience(), &world, s.seed ^ 0x5eed);
        simulate_with(&world, &base.approx_spec(), &base.target_spec(), sim_config(&world, s.k), Some(Box::new(user)))
    } else {
        simulate_run(&world, &base.approx_spec(), &base.target_spec(), s.k)
    }
    .map_err(sim_error)?;
    let lower = approx_only(&world, &base.approx_spec()).map_err(sim_error)?;
    let upper = target_only(&world, &base.target_spec()).map_err(sim_error)?;

    let mut doc = serde_json::to_value(&run.metrics)?;
    let extra = json!({
        "outcome": run.result.outcome.label(),
        "accepted_interrupts": run.accepted_interrupts,
        "approx_only_TT": lower.metrics.tt,
        "target_only_TT": upper.metrics.tt,
        "settings": s,
    });
    doc.as_object_mut()
        .expect("metrics serialize as an object")
        .extend(extra.as_object().expect("object literal").clone());
    write(&paths[0], run.result.events.to_jsonl())?;
    write(&paths[1], pretty(&doc))?;

    print!("{}", metrics_table(&run.metrics));
    println!("outcome {}", run.result.outcome.label());
    println!("wrote {} and {}", paths[0].display(), paths[1].display());
    Ok(())
}

fn study_label(study: Study) -> &'static str {
    match study {
        Study::AccuracyK => "accuracy_k",
        Study::Speed => "speed",
        Study::Interruption => "interruption",
    }
}

pub fn grid(args: GridArgs) -> anyhow::Result<()> {
    let s = GridSettings::resolve(&args)?;
    let label = study_label(s.study);
    let raw = format!("{label}_raw.csv");
    let agg = format!("{label}_aggregate.csv");
    let baselines = format!("{label}_baselines.csv");
    let mut files = vec![raw.as_str(), agg.as_str()];
    if s.study == Study::AccuracyK {
        files.push(&baselines);
    }
    let paths = claim_outputs(&args.output.out, &files, args.output.force)?;
    let base = s.base();
    let result = match s.study {
        Study::AccuracyK => run_accuracy_k_grid(&base, &s.accuracies, &s.ks, s.seeds),
        Study::Speed => run_speed_grid(&base, &s.speeds, &s.accuracies, s.k(), s.seeds),
        Study::Interruption => run_interruption_study(&base, s.acc, s.k(), s.impatience(), &s.counts, s.sims),
    }
    .map_err(sim_error)?;
    let aggregate = result.aggregate_csv();
    write(&paths[0], result.raw_csv())?;
    write(&paths[1], &aggregate)?;
    if let Some(p) = paths.get(2) {
        write(p, result.baselines_csv())?;
    }
    print!("{aggregate}");
    for p in &paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct Analysis {
    log: String,
    #[serde(flatten)]
    metrics: MetricsReport,
    approx_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    breaking_points: Option<Vec<i64>>,
}

fn read_log(path: &Path) -> anyhow::Result<EventLog> {
    EventLog::read_file(path).with_context(|| format!("reading {}", path.display()))
}

pub fn analyze(args: AnalyzeArgs) -> anyhow::Result<()> {
    let prices: PriceTable = match &args.prices {
        Some(p) => load_file(p)?,
        None => PriceTable::default(),
    };
    prices.validate().map_err(usage)?;
    if args.k == Some(0) {
        return Err(usage("k must be at least 1"));
    }
    let paths = match &args.out {
        Some(out) => Some(claim_outputs(out, &["analysis.json", "accuracy_breakdown.csv"], args.force)?),
        None => None,
    };
    let mut analyses = Vec::new();
    for path in &args.logs {
        let log = read_log(path)?;
        let n = verified_steps(&log);
        analyses.push(Analysis {
            log: path.display().to_string(),
            metrics: measure_log(&log, &prices),
            approx_accuracy: approx_accuracy(&log),
            breaking_points: args
                .k
                .filter(|_| n > 0)
                .map(|k| breaking_points(&log, k, n).points),
        });
    }
    let text = pretty(&analyses);
    print!("{text}");
    if let Some(paths) = paths {
        let runs: Vec<_> = analyses.iter().map(|a| (a.approx_accuracy, a.metrics.clone())).collect();
        write(&paths[0], &text)?;
        write(&paths[1], accuracy_breakdown_csv(&runs, args.buckets))?;
    }
    Ok(())
}

pub fn replay(args: ReplayArgs) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(&args.log).with_context(|| format!("reading {}", args.log.display()))?;
    if text.trim().is_empty() {
        return Ok(());
    }
    let log = EventLog::from_jsonl(&text).with_context(|| format!("reading {}", args.log.display()))?;
    let presented = replay_presentations(&log);
    let mut stdout = std::io::stdout().lock();
    if args.final_only {
        for (i, step) in project_transcript(&presented).iter().enumerate() {
            writeln!(stdout, "{i:>3}  {step}")?;
        }
    } else {
        stdout.write_all(render_transcript(&presented).as_bytes())?;
    }
    Ok(())
}

pub fn serve(args: ServeArgs) -> anyhow::Result<()> {
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.addr)
            .await
            .with_context(|| format!("cannot listen on {}", args.addr))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;
        let state = specplan_service::AppState::new(specplan_service::ServiceConfig { log_dir: args.out });
        specplan_service::serve(listener, state).await.context("server failed")
    })
}
