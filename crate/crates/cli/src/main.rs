use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gridbatch::grid::{parse_outage_list, GridCase, InitMode, ScenarioTable};
use gridbatch::lu::{LuConfig, Ordering, Stage};
use gridbatch::newton::{NrConfig, TaskStatus};
use gridbatch::runtime::{
    default_workers, report_json, sample_montecarlo, write_flows_csv, write_results_csv,
    ExecConfig, JobSpec, Mode, Pipeline, RunReport, SamplingSpec, TaskResult, Workload,
};
use gridbatch::timing::PhaseTimes;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(
    name = "gridbatch",
    version,
    about = "Batched Newton-Raphson AC power flow"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the case once, or once per row of a scenario table.
    Run {
        #[command(flatten)]
        common: Common,
        /// Scenario CSV: one row per task, columns `bus:<id>:p`, `bus:<id>:q`, `bus:<id>:vm`.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Screen single-branch outages.
    Contingency {
        #[command(flatten)]
        common: Common,
        /// One branch per line (1-based number or `from to` bus pair);
        /// every branch when omitted.
        #[arg(long)]
        outages: Option<PathBuf>,
    },
    /// Solve sampled load scenarios.
    Montecarlo {
        #[command(flatten)]
        common: Common,
        /// Sampling CSV with header `bus,quantity,dist,a,b`.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 1000)]
        tasks: usize,
    },
    /// Time every phase over a sweep of worker counts and mini-batch widths.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Sampling CSV; ±10% uniform on every load when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        tasks: usize,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        sweep_workers: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        sweep_widths: Vec<usize>,
        /// Jacobian scatter paths to time: `direct` into the LU tape, or
        /// `copy` through a separate A tape.
        #[arg(long, value_enum, value_delimiter = ',', default_value = "direct")]
        sweep_scatter: Vec<ScatterArg>,
        /// Untimed runs before each timed one.
        #[arg(long, default_value_t = 1)]
        warmup: usize,
    },
    /// Print the structure of the frozen factorization.
    Inspect {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    Csv,
    Json,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderingArg {
    Amd,
    Natural,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScatterArg {
    Direct,
    Copy,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Flat,
    Case,
}

#[derive(Args)]
struct Common {
    /// MATPOWER `.m` or JSON case file.
    case: PathBuf,
    #[arg(short, long, default_value = "gridbatch-out")]
    out: PathBuf,
    #[arg(long, env = "GRIDBATCH_WORKERS")]
    workers: Option<usize>,
    #[arg(long, default_value_t = 4096)]
    batch_size: usize,
    #[arg(long, default_value_t = 4)]
    minibatch: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 10)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-3)]
    pivot_tol: f64,
    #[arg(long, value_enum, default_value = "amd")]
    ordering: OrderingArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "both")]
    emit: Emit,
    #[arg(long, value_enum, default_value = "flat")]
    init: InitArg,
    /// Add per-bus vm/va columns to the results CSV.
    #[arg(long)]
    voltages: bool,
    /// Write branch flows to flows.csv.
    #[arg(long)]
    flows: bool,
}

impl Common {
    fn load_case(&self) -> Result<GridCase> {
        let text = fs::read_to_string(&self.case)
            .with_context(|| format!("cannot read {}", self.case.display()))?;
        GridCase::parse(&text).with_context(|| format!("{}", self.case.display()))
    }

    fn nr(&self) -> NrConfig {
        NrConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            minibatch_width: self.minibatch,
        }
    }

    fn lu(&self) -> Result<LuConfig> {
        if !(self.pivot_tol > 0.0 && self.pivot_tol <= 1.0) {
            bail!("--pivot-tol must be in (0, 1], got {}", self.pivot_tol);
        }
        Ok(LuConfig {
            pivot_tol: self.pivot_tol,
            ordering: match self.ordering {
                OrderingArg::Amd => Ordering::Amd,
                OrderingArg::Natural => Ordering::Natural,
            },
            ..LuConfig::default()
        })
    }

    fn exec(&self) -> ExecConfig {
        ExecConfig {
            workers: self.workers.unwrap_or_else(default_workers),
            batch_size: self.batch_size,
            ..ExecConfig::default()
        }
    }

    fn init_mode(&self) -> InitMode {
        match self.init {
            InitArg::Flat => InitMode::Flat,
            InitArg::Case => InitMode::Case,
        }
    }

    fn pipeline(&self, case: GridCase) -> Result<Pipeline> {
        Ok(Pipeline::initialize(case, self.nr(), self.lu()?)?)
    }

    fn job(&self, mode: Mode, workload: Workload) -> JobSpec {
        JobSpec {
            mode,
            workload,
            init: self.init_mode(),
            exec: self.exec(),
            flows: self.flows,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| {
        format!("cannot create {}", path.display())
    })?))
}

fn write_outputs(
    common: &Common,
    case: &GridCase,
    results: &[TaskResult],
    report: &RunReport,
) -> Result<()> {
    fs::create_dir_all(&common.out)
        .with_context(|| format!("cannot create {}", common.out.display()))?;
    if matches!(common.emit, Emit::Csv | Emit::Both) {
        write_results_csv(
            results,
            case,
            common.voltages,
            create(&common.out, "results.csv")?,
        )?;
    }
    if matches!(common.emit, Emit::Json | Emit::Both) {
        fs::write(common.out.join("report.json"), report_json(report))?;
    }
    if common.flows {
        write_flows_csv(results, case, create(&common.out, "flows.csv")?)?;
    }
    Ok(())
}

fn summarize(report: &RunReport) -> ExitCode {
    let counts: Vec<String> = report
        .status_counts
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    println!(
        "{} tasks in {:.3}s on {} worker(s), {}-level: {}",
        report.n_tasks,
        report.total_seconds,
        report.workers,
        report.execution,
        counts.join(" ")
    );
    if report.count(TaskStatus::Singular) + report.count(TaskStatus::Diverged) > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn solve(
    common: &Common,
    mode: Mode,
    workload: impl FnOnce(&GridCase) -> Result<Workload>,
) -> Result<ExitCode> {
    let case = common.load_case()?;
    let workload = workload(&case)?;
    let mut pipeline = common.pipeline(case)?;
    let (results, report) = pipeline.run(&common.job(mode, workload))?;
    write_outputs(common, pipeline.case(), &results, &report)?;
    Ok(summarize(&report))
}

#[derive(Serialize)]
struct BenchRun {
    workers: usize,
    minibatch_width: usize,
    direct_scatter: bool,
    execution: &'static str,
    total_seconds: f64,
    tasks_per_second: f64,
    phases: PhaseTimes,
    checksum: String,
}

#[derive(Serialize)]
struct BenchReport {
    case: String,
    tasks: usize,
    seed: u64,
    warmup: usize,
    runs: Vec<BenchRun>,
}

/// SHA-256 over every task's status, iteration count and voltage bits.
fn checksum(results: &[TaskResult]) -> String {
    let mut h = Sha256::new();
    for r in results {
        h.update(r.status.as_str().as_bytes());
        h.update((r.iterations as u64).to_le_bytes());
        for v in r.vm.iter().chain(&r.va) {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn bench(
    common: &Common,
    spec: Option<&Path>,
    tasks: usize,
    workers: &[usize],
    widths: &[usize],
    scatter: &[ScatterArg],
    warmup: usize,
) -> Result<ExitCode> {
    let case = common.load_case()?;
    let spec = match spec {
        Some(p) => SamplingSpec::from_csv(&read(p)?)?,
        None => SamplingSpec::from_csv(
            "bus,quantity,dist,a,b\n*,p,uniform,0.9,1.1\n*,q,uniform,0.9,1.1\n",
        )?,
    };
    let table = sample_montecarlo(&spec, &case, tasks, common.seed)?;
    let mut runs = Vec::new();
    println!("workers width  scatter exec        total      npm     jacobian  refactor  fsbs      tasks/s");
    for &width in widths {
        let nr = NrConfig {
            minibatch_width: width,
            ..common.nr()
        };
        let mut pipeline = Pipeline::initialize(case.clone(), nr, common.lu()?)?;
        for &w in workers {
            for &path in scatter {
                let mut job = common.job(Mode::MonteCarlo, Workload::Table(table.clone()));
                job.exec.workers = w;
                job.exec.direct_scatter = path == ScatterArg::Direct;
                for _ in 0..warmup {
                    pipeline.run(&job)?;
                }
                let (results, report) = pipeline.run(&job)?;
                let p = &report.phases;
                let run = BenchRun {
                    workers: w,
                    minibatch_width: width,
                    direct_scatter: job.exec.direct_scatter,
                    execution: report.execution,
                    total_seconds: report.total_seconds,
                    tasks_per_second: tasks as f64 / report.total_seconds,
                    phases: *p,
                    checksum: checksum(&results),
                };
                println!(
                    "{:<7} {:<6} {:<7} {:<6} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>10.0}",
                    w,
                    width,
                    if run.direct_scatter { "direct" } else { "copy" },
                    run.execution,
                    run.total_seconds,
                    p.npm,
                    p.jacobian,
                    p.refactorize,
                    p.fsbs,
                    run.tasks_per_second
                );
                runs.push(run);
            }
        }
    }
    let report = BenchReport {
        case: common.case.display().to_string(),
        tasks,
        seed: common.seed,
        warmup,
        runs,
    };
    fs::create_dir_all(&common.out)?;
    fs::write(
        common.out.join("bench.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn inspect(common: &Common) -> Result<ExitCode> {
    let pipeline = common.pipeline(common.load_case()?)?;
    let s = pipeline.structure();
    println!("buses          {}", s.n_bus);
    println!("branches       {}", s.n_branch);
    println!("ybus nnz       {}", s.ybus_nnz);
    println!(
        "jacobian       {0}x{0}, nnz {1}",
        s.jacobian_dim, s.jacobian_nnz
    );
    println!("lu nnz         {}", s.lu_nnz);
    println!("fill-in        {}", s.fill_in);
    println!("levels         {}", s.levels.len());
    println!(
        "stages         bulk {} narrow {} scalar {}",
        s.stage_counts[0], s.stage_counts[1], s.stage_counts[2]
    );
    fs::create_dir_all(&common.out)?;
    let mut w = csv::Writer::from_writer(create(&common.out, "levels.csv")?);
    w.write_record(["level", "columns", "stage"])?;
    let sched = pipeline.symbolic().schedule();
    for (l, n) in s.levels.iter().enumerate() {
        let stage = match sched.stage(l) {
            Stage::Bulk => "bulk",
            Stage::Narrow => "narrow",
            Stage::Scalar => "scalar",
        };
        w.write_record([l.to_string(), n.to_string(), stage.to_string()])?;
    }
    w.flush()?;
    fs::write(
        common.out.join("structure.json"),
        serde_json::to_string_pretty(&s)?,
    )?;
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Run { common, scenario } => {
            let table = scenario.as_deref().map(read).transpose()?;
            let mode = if table.is_some() {
                Mode::TimeSeries
            } else {
                Mode::Single
            };
            solve(common, mode, |_| {
                Ok(Workload::Table(match table {
                    Some(text) => ScenarioTable::from_csv(&text)?,
                    None => ScenarioTable::base(1),
                }))
            })
        }
        Command::Contingency { common, outages } => {
            let text = outages.as_deref().map(read).transpose()?;
            solve(common, Mode::Contingency, |case| {
                Ok(Workload::Outages(match text {
                    Some(t) => parse_outage_list(&t, case)?,
                    None => (0..case.branches().len())
                        .filter(|&k| case.branches()[k].in_service)
                        .collect(),
                }))
            })
        }
        Command::Montecarlo {
            common,
            spec,
            tasks,
        } => {
            let spec = SamplingSpec::from_csv(&read(spec)?)?;
            solve(common, Mode::MonteCarlo, |case| {
                Ok(Workload::Table(sample_montecarlo(
                    &spec,
                    case,
                    *tasks,
                    common.seed,
                )?))
            })
        }
        Command::Bench {
            common,
            spec,
            tasks,
            sweep_workers,
            sweep_widths,
            sweep_scatter,
            warmup,
        } => bench(
            common,
            spec.as_deref(),
            *tasks,
            sweep_workers,
            sweep_widths,
            sweep_scatter,
            *warmup,
        ),
        Command::Inspect { common } => inspect(common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
