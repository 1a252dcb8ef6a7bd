//! Acceptance criteria 1 to 10. Each prints one PASS / FAIL / SKIP line;
//! the test fails if any criterion fails.

mod common;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use gridbatch::grid::{assemble_profiles, build_ybus, GridCase, InitMode, Quantity, ScenarioTable};
use gridbatch::lu::{
    execute_schedule, factorize_initial, factorize_with_columns, fs_bs_batch, refactorize_batch,
    refactorize_in_place, LuConfig, Ordering, SymbolicLu,
};
use gridbatch::newton::{
    compute_npm, update_jacobian, MismatchBatch, NrConfig, PolarVoltageBatch, TaskStatus, YbusPolar,
};
use gridbatch::runtime::{
    sample_montecarlo, ExecConfig, JobSpec, Mode, Pipeline, SamplingSpec, Workload,
};
use gridbatch::sparse::SparseCrs;
use gridbatch::tape::{minibatch_ranges, BatchTape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOLTAGE_TOL: f64 = 1e-6;
const ANGLE_TOL: f64 = 1e-6;
const MISMATCH_TOL: f64 = 1e-8;
const LU_RESIDUAL_TOL: f64 = 1e-10;
const LU_BATCHES: usize = 200;
const LU_MAX_N: usize = 300;
const LU_MAX_BATCH: usize = 64;
const SCHEDULE_WORKERS: [usize; 4] = [1, 2, 4, 8];
const REFACTOR_REPEATS: usize = 1000;
const REFACTOR_RATIO_GATE: f64 = 1.0;
const REFACTOR_RATIO_TARGET: f64 = 0.5;
const SCALING_TASKS: usize = 10_000;
const SCALING_GATE: f64 = 2.0;
const SCALING_MIN_CORES: usize = 4;
const WIDTHS: [usize; 4] = [1, 2, 4, 8];
const SERIAL_LEVEL_COLUMNS: usize = 4;
const SERIAL_LEVEL_SHARE: f64 = 0.5;
const FIRST_DECILE_SHARE: f64 = 0.25;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn table(case: &GridCase, n: usize, seed: u64, spread: f64) -> ScenarioTable {
    let spec = format!(
        "bus,quantity,dist,a,b\n*,p,uniform,{},{}\n*,q,uniform,{},{}\n",
        1.0 - spread,
        1.0 + spread,
        1.0 - spread,
        1.0 + spread
    );
    sample_montecarlo(&SamplingSpec::from_csv(&spec).unwrap(), case, n, seed).unwrap()
}

fn job(workload: Workload, mode: Mode, workers: usize) -> JobSpec {
    JobSpec {
        mode,
        workload,
        init: InitMode::Flat,
        exec: ExecConfig {
            workers,
            ..ExecConfig::default()
        },
        flows: false,
    }
}

fn loads(case: &GridCase, t: &ScenarioTable, task: usize) -> (Vec<f64>, Vec<f64>) {
    let mut pd: Vec<f64> = case.buses().iter().map(|b| b.p_load).collect();
    let mut qd: Vec<f64> = case.buses().iter().map(|b| b.q_load).collect();
    for (c, v) in t.columns().iter().zip(&t.rows()[task]) {
        let b = case.bus_index(c.bus).unwrap();
        match c.quantity {
            Quantity::P => pd[b] = *v,
            _ => qd[b] = *v,
        }
    }
    (pd, qd)
}

fn criterion_1() -> Verdict {
    let (mut dv, mut da, mut worst_mis, mut failures) = (0.0f64, 0.0f64, 0.0f64, Vec::new());
    for name in FIXTURES {
        let case = load(name);
        let scenarios = table(&case, 8, 1, 0.1);
        let mut p =
            Pipeline::initialize(case.clone(), NrConfig::default(), LuConfig::default()).unwrap();
        let (res, _) = p
            .run(&job(
                Workload::Table(scenarios.clone()),
                Mode::MonteCarlo,
                1,
            ))
            .unwrap();
        let y = dense_ybus(&case, |k| case.branches()[k].in_service);
        let (vm0, va0) = flat_start(&case);
        for (t, r) in res.iter().enumerate() {
            let (pd, qd) = loads(&case, &scenarios, t);
            let oracle = dense_newton(
                &case,
                &y,
                &injections(&case, Some(&pd), Some(&qd)),
                &vm0,
                &va0,
                1e-11,
                30,
            )
            .unwrap();
            if r.status != TaskStatus::Converged {
                failures.push(format!("{name}/{t} {:?}", r.status));
                continue;
            }
            worst_mis = worst_mis.max(r.max_mismatch);
            for b in 0..case.n_bus() {
                dv = dv.max((r.vm[b] - oracle.vm[b]).abs());
                da = da.max((r.va[b] - oracle.va[b]).abs());
            }
        }
    }
    check(
        failures.is_empty() && dv <= VOLTAGE_TOL && da <= ANGLE_TOL && worst_mis <= MISMATCH_TOL,
        format!("5 fixtures x 8 tasks vs dense NR: max |dVm| {dv:.1e} p.u., max |dVa| {da:.1e} rad, max mismatch {worst_mis:.1e} p.u., unconverged {failures:?}"),
    )
}

fn a_tape(sym: &SymbolicLu, tasks: &[Vec<f64>]) -> BatchTape {
    let rows: Vec<Vec<f64>> = tasks
        .iter()
        .map(|v| {
            let mut t = vec![0.0; sym.lu_nnz()];
            sym.scatter().scatter(v, &mut t);
            t
        })
        .collect();
    BatchTape::from_task_major(&rows)
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut checked, mut flagged) = (0.0f64, 0usize, 0usize);
    for _ in 0..LU_BATCHES {
        let n = rng.random_range(1..=LU_MAX_N);
        let width = rng.random_range(1..=LU_MAX_BATCH);
        let per_row = rng.random_range(1..4);
        let (pattern, base) = random_system(&mut rng, n, per_row);
        let (sym, _) = factorize_initial(&pattern, &base, &LuConfig::default()).unwrap();
        let tasks: Vec<Vec<f64>> = (0..width)
            .map(|_| {
                base.iter()
                    .map(|v| v * rng.random_range(0.9..1.1))
                    .collect()
            })
            .collect();
        let mut lu = BatchTape::zeros(sym.lu_nnz(), width);
        let out = refactorize_batch(&sym, &a_tape(&sym, &tasks), &mut lu, 1e-14);
        for (t, values) in tasks.iter().enumerate() {
            if out.unstable[t] {
                flagged += 1;
                continue;
            }
            worst = worst.max(lu_relative_residual(&sym, values, &lu.task(t)));
            checked += 1;
        }
    }
    check(
        worst <= LU_RESIDUAL_TOL && checked > 0,
        format!("{LU_BATCHES} batches, n <= {LU_MAX_N}, width <= {LU_MAX_BATCH}: {checked} tasks, worst relative residual {worst:.1e} ({flagged} flagged lanes skipped)"),
    )
}

fn fixture_batch(p: &Pipeline, width: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = p.case().n_bus();
    let y = YbusPolar::shared(p.ybus());
    (0..width)
        .map(|_| {
            let vm: Vec<f64> = (0..n).map(|_| rng.random_range(0.95..1.05)).collect();
            let va: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
            p.reduced_jacobian(&y, 0, &vm, &va)
        })
        .collect()
}

fn criterion_3() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    for name in FIXTURES {
        let p = Pipeline::initialize(load(name), NrConfig::default(), LuConfig::default()).unwrap();
        let sym = p.symbolic();
        let sched = sym.schedule();
        let topo = (0..sym.n()).all(|c| {
            sym.u_rows(c)
                .iter()
                .all(|&r| sched.level_of(r as usize) < sched.level_of(c))
        });
        let tasks = fixture_batch(&p, 8, 3);
        let mut seq = a_tape(sym, &tasks);
        refactorize_in_place(sym, &mut seq, 1e-14);
        let identical = SCHEDULE_WORKERS.iter().all(|&w| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .unwrap();
            let mut par = a_tape(sym, &tasks);
            execute_schedule(sym, &mut par, 1e-14, &pool);
            par.as_slice()
                .iter()
                .zip(seq.as_slice())
                .all(|(a, b)| a.to_bits() == b.to_bits())
        });
        ok &= topo && identical;
        notes.push(format!(
            "{name} {} levels{}",
            sched.n_levels(),
            if topo && identical { "" } else { " MISMATCH" }
        ));
    }
    check(
        ok,
        format!(
            "topological and bit-identical for workers {SCHEDULE_WORKERS:?}: {}",
            notes.join(", ")
        ),
    )
}

fn criterion_4() -> Verdict {
    let p =
        Pipeline::initialize(load("case300"), NrConfig::default(), LuConfig::default()).unwrap();
    let sym = p.symbolic();
    let values = fixture_batch(&p, 1, 4).remove(0);
    let pattern: &SparseCrs = p.jacobian().reduced();
    let b = BatchTape::broadcast(&vec![1.0; sym.n()], 1);
    let a = a_tape(sym, std::slice::from_ref(&values));

    // fresh pivoting factorization with the column ordering already known
    let start = Instant::now();
    let mut sink = 0.0;
    for _ in 0..REFACTOR_REPEATS {
        let (s, lu) =
            factorize_with_columns(pattern, &values, sym.perm_col().clone(), p.lu_config())
                .unwrap();
        sink += lu[0] + s.n() as f64;
    }
    let fresh = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let mut lu = BatchTape::zeros(sym.lu_nnz(), 1);
    for _ in 0..REFACTOR_REPEATS {
        refactorize_batch(sym, &a, &mut lu, 1e-14);
        sink += fs_bs_batch(sym, &lu, &b).get(0, 0);
    }
    let refactor = start.elapsed().as_secs_f64();
    assert!(sink.is_finite());
    let ratio = refactor / fresh;
    check(
        ratio < REFACTOR_RATIO_GATE,
        format!(
            "case300, {REFACTOR_REPEATS} solves: refactorize+FS-BS {refactor:.3}s vs fresh factorization {fresh:.3}s, ratio {ratio:.3} (gate < {REFACTOR_RATIO_GATE}, target < {REFACTOR_RATIO_TARGET}: {})",
            if ratio < REFACTOR_RATIO_TARGET { "met" } else { "missed" }
        ),
    )
}

/// Wall time of the mismatch and Jacobian kernels over every task.
fn npm_jacobian_seconds(p: &Pipeline, prof: &gridbatch::grid::Profiles, workers: usize) -> f64 {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .unwrap();
    let jac = p.jacobian();
    let y = YbusPolar::shared(p.ybus());
    let ranges = minibatch_ranges(prof.n_tasks(), 4);
    let start = Instant::now();
    pool.install(|| {
        use rayon::prelude::*;
        ranges.into_par_iter().for_each(|r| {
            let v = PolarVoltageBatch {
                vm: prof.vm0.extract(r.clone()),
                va: prof.va0.extract(r.clone()),
            };
            let mut mis = MismatchBatch::zeros(jac, r.len());
            compute_npm(
                jac,
                &y,
                &v,
                &prof.p0.extract(r.clone()),
                &prof.q0.extract(r.clone()),
                &mut mis,
            );
            let mut out = BatchTape::zeros(jac.reduced().nnz(), r.len());
            update_jacobian(jac, &y, &v, jac.reduced_map(), &mut out);
        });
    });
    start.elapsed().as_secs_f64()
}

fn criterion_5() -> Verdict {
    let cores = num_cpus::get_physical();
    let case = load("case118");
    let p = Pipeline::initialize(case.clone(), NrConfig::default(), LuConfig::default()).unwrap();
    let prof =
        assemble_profiles(&case, &table(&case, SCALING_TASKS, 5, 0.1), InitMode::Flat).unwrap();
    let mut counts: Vec<usize> = std::iter::successors(Some(1), |w| Some(w * 2))
        .take_while(|&w| w < cores)
        .collect();
    counts.push(cores);
    let base = npm_jacobian_seconds(&p, &prof, 1);
    let curve: Vec<(usize, f64)> = counts
        .iter()
        .map(|&w| (w, base / npm_jacobian_seconds(&p, &prof, w)))
        .collect();
    let text: Vec<String> = curve.iter().map(|(w, s)| format!("{w}:{s:.2}x")).collect();
    if cores < SCALING_MIN_CORES {
        return Verdict::Skip(format!(
            "host has {cores} physical core(s), gate needs >= {SCALING_MIN_CORES}; measured speedup curve {}",
            text.join(" ")
        ));
    }
    let speedup = curve.last().unwrap().1;
    check(
        speedup >= SCALING_GATE,
        format!("NPM+Jacobian, {SCALING_TASKS} tasks on case118, speedup by workers {} (gate >= {SCALING_GATE}x)", text.join(" ")),
    )
}

fn criterion_6() -> Verdict {
    let mut differing = Vec::new();
    for name in FIXTURES {
        let case = load(name);
        let scenarios = table(&case, 19, 6, 0.15);
        let runs: Vec<_> = WIDTHS
            .iter()
            .map(|&w| {
                let nr = NrConfig {
                    minibatch_width: w,
                    ..NrConfig::default()
                };
                let mut p = Pipeline::initialize(case.clone(), nr, LuConfig::default()).unwrap();
                p.run(&job(
                    Workload::Table(scenarios.clone()),
                    Mode::MonteCarlo,
                    1,
                ))
                .unwrap()
                .0
            })
            .collect();
        if runs.iter().any(|r| *r != runs[0]) {
            differing.push(name);
        }
    }
    check(
        differing.is_empty(),
        format!("widths {WIDTHS:?}, 19 tasks per fixture: differing fixtures {differing:?}"),
    )
}

fn lossless(case: &GridCase) -> GridCase {
    let mut json: serde_json::Value = serde_json::from_str(&case.to_json()).unwrap();
    json["branches"][0]["r"] = 0.0.into();
    json["branches"][0]["b_charge"] = 0.0.into();
    GridCase::parse(&json.to_string()).unwrap()
}

fn criterion_7() -> Verdict {
    // The 2-bus case with its row permutation frozen from [[ε, 1], [1, ε]]
    // pivots column 0 on ∂Q/∂θ, which vanishes for a lossless line at flat
    // start. Lossy peers keep a sound pivot.
    let case = load("case2");
    let mut p =
        Pipeline::initialize(case.clone(), NrConfig::default(), LuConfig::default()).unwrap();
    p.refreeze(&[1e-6, 1.0, 1.0, 1e-6]).unwrap();
    let lossy = build_ybus(&case);
    let ideal = build_ybus(&lossless(&case));
    let ybus = |mask: &[bool]| {
        let v: Vec<(Vec<f64>, Vec<f64>)> = mask
            .iter()
            .map(|&l| {
                let y = if l { &ideal } else { &lossy };
                (y.re().to_vec(), y.im().to_vec())
            })
            .collect();
        YbusPolar::per_task(&v)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let exec = ExecConfig {
        workers: 1,
        ..ExecConfig::default()
    };
    let mask = [false, false, true, false, false, false];
    let prof = assemble_profiles(&case, &ScenarioTable::base(mask.len()), InitMode::Flat).unwrap();
    let mixed = p.solve(&ybus(&mask), &prof, &[None; 6], &exec, &pool);
    let solo_prof = assemble_profiles(&case, &ScenarioTable::base(1), InitMode::Flat).unwrap();
    let solo = p
        .solve(&ybus(&[false]), &solo_prof, &[None], &exec, &pool)
        .outcomes
        .remove(0);
    let target = &mixed.outcomes[2];
    let peers_equal = mask.iter().enumerate().filter(|(_, &l)| !l).all(|(t, _)| {
        let o = &mixed.outcomes[t];
        o.status == solo.status
            && o.vm == solo.vm
            && o.va == solo.va
            && o.iterations == solo.iterations
            && !o.flagged
    });
    // the lossless task against the dense oracle of its own grid
    let ideal_case = lossless(&case);
    let oracle = solve_case(&ideal_case);
    let dv = target
        .vm
        .iter()
        .zip(&oracle.vm)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    check(
        target.status == TaskStatus::FallbackConverged && target.flagged_first && peers_equal && dv <= VOLTAGE_TOL,
        format!(
            "flagged task: {} after {} iterations, |dVm| vs oracle {dv:.1e}; 5 peers bit-identical to a solo run: {peers_equal}",
            target.status.as_str(),
            target.iterations
        ),
    )
}

fn fill_oracle(sym: &SymbolicLu) -> usize {
    let n = sym.n();
    let mut nz = vec![vec![false; n]; n];
    for (r, c, _) in sym.input_pattern().entries() {
        nz[sym.perm_row().new_of(r)][sym.perm_col().new_of(c)] = true;
    }
    symbolic_lu_nnz(nz) - sym.input_pattern().nnz()
}

fn criterion_8() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    for name in ["case30", "case300"] {
        let p = Pipeline::initialize(load(name), NrConfig::default(), LuConfig::default()).unwrap();
        let values = fixture_batch(&p, 1, 8).remove(0);
        let pattern = p.jacobian().reduced();
        let (amd, _) = factorize_initial(pattern, &values, &LuConfig::default()).unwrap();
        let (nat, _) = factorize_initial(
            pattern,
            &values,
            &LuConfig {
                ordering: Ordering::Natural,
                ..LuConfig::default()
            },
        )
        .unwrap();
        let (fa, fn_) = (fill_oracle(&amd), fill_oracle(&nat));
        ok &= fa <= fn_ && fa == amd.fill_in() && fn_ == nat.fill_in();
        notes.push(format!("{name} amd {fa} vs natural {fn_}"));
    }
    let n = 16;
    let arrow = SparseCrs::from_coordinates(n, n, (1..n).flat_map(|i| [(0, i), (i, 0)])).unwrap();
    let values: Vec<f64> = arrow
        .entries()
        .map(|(r, c, _)| if r == c { 30.0 } else { 1.0 })
        .collect();
    let (sym, _) = factorize_initial(&arrow, &values, &LuConfig::default()).unwrap();
    let arrow_ok = fill_oracle(&sym) == 0 && sym.perm_col().new_of(0) == n - 1;
    check(
        ok && arrow_ok,
        format!(
            "fill-in {}; arrow n={n}: fill {}, hub at position {}",
            notes.join(", "),
            fill_oracle(&sym),
            sym.perm_col().new_of(0)
        ),
    )
}

fn criterion_9() -> Verdict {
    let case = load("case30");
    let mut p =
        Pipeline::initialize(case.clone(), NrConfig::default(), LuConfig::default()).unwrap();
    let before = p.symbolic().clone();
    let outages: Vec<usize> = (0..case.branches().len()).collect();
    let (res, report) = p
        .run(&job(
            Workload::Outages(outages.clone()),
            Mode::Contingency,
            1,
        ))
        .unwrap();
    let reused = !report.rederived
        && p.symbolic().perm_row() == before.perm_row()
        && p.symbolic().perm_col() == before.perm_col()
        && p.symbolic().lu_pattern() == before.lu_pattern();
    let (mut islanded, mut converged, mut wrong) = (0, 0, Vec::new());
    for (r, &k) in res.iter().zip(&outages) {
        let expect_island = islands(&case, |b| b != k && case.branches()[b].in_service);
        match (expect_island, r.status) {
            (true, TaskStatus::Islanded) => islanded += 1,
            (false, s) if s.is_converged() => converged += 1,
            (_, s) => wrong.push((k + 1, s.as_str())),
        }
    }
    check(
        reused && wrong.is_empty() && res.len() == 41,
        format!("{} outages, one frozen structure reused: {reused}; {converged} converged, {islanded} islanded (oracle agrees), mismatched {wrong:?}", res.len()),
    )
}

fn criterion_10() -> Verdict {
    let p =
        Pipeline::initialize(load("case300"), NrConfig::default(), LuConfig::default()).unwrap();
    let hist = p.symbolic().schedule().histogram();
    let levels = hist.len();
    let serial = hist.iter().filter(|&&c| c < SERIAL_LEVEL_COLUMNS).count();
    let decile = levels.div_ceil(10);
    let total: usize = hist.iter().sum();
    let head: usize = hist[..decile].iter().sum();
    let serial_share = serial as f64 / levels as f64;
    let head_share = head as f64 / total as f64;
    check(
        serial_share >= SERIAL_LEVEL_SHARE && head_share >= FIRST_DECILE_SHARE,
        format!(
            "case300: {levels} levels over {total} columns; {:.0}% of levels have < {SERIAL_LEVEL_COLUMNS} columns, first {decile} levels hold {:.0}% of columns",
            100.0 * serial_share,
            100.0 * head_share
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [(usize, fn() -> Verdict); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let mut failed = Vec::new();
    let mut err = std::io::stderr();
    for (id, f) in criteria {
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Verdict::Fail(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let line = match &verdict {
            Verdict::Pass(d) => format!("criterion {id:>2}: PASS  {d}"),
            Verdict::Fail(d) => {
                failed.push(id);
                format!("criterion {id:>2}: FAIL  {d}")
            }
            Verdict::Skip(d) => format!("criterion {id:>2}: SKIP  {d}"),
        };
        // written past the test harness capture so the lines always show
        writeln!(err, "{line}").unwrap();
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
