use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use spinbench::instances::{instance_to_string, normalize, read_instance, sample_instance, Instance, InstanceClass};
use spinbench::mining::{filter_benchmark_set, instance_seed, summarize_instance, MiningReport};
use spinbench::model::SpinConfig;
use spinbench::oracle::{exact_solve, OracleOptions, DEFAULT_MAX_N};
use spinbench::resilience::{
    assemble_record, original_ground_state, relaxed_resilience, resilience_trial, LevelLadder, NoiseSpec,
    ResilienceRecord, TrialOutcome,
};
use spinbench::seeds::derive_seed;
use spinbench::solver::{Engine, GroundStateReport};
use spinbench::stats::spearman;
use spinbench::topology::Graph;

use crate::args::{default_path, GenerateArgs, Ladder, MineArgs, ResilienceArgs, RunOpts, SolveArgs, SolverOpts, YieldArgs};
use crate::output::{create, Header, Sink};
use crate::records::*;
use crate::report;

// Labels of the seed streams hanging off the master seed.
const SOLVE_STREAM: u64 = 0x501E;
const TRIAL_STREAM: u64 = 0x7A1A;
const NOISE_STREAM: u64 = 0x0153;

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let n = match workers {
        Some(0) => bail!("--workers must be at least 1"),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?)
}

fn label(path: &Path) -> String {
    path.display().to_string()
}

/// Read an instance file; sampled instances are normalized on load.
pub fn load_instance(path: &Path) -> Result<Instance> {
    let f = fs::File::open(path).with_context(|| format!("cannot open instance {}", path.display()))?;
    let inst = read_instance(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
    Ok(if inst.class().is_some() && !inst.is_normalized() { normalize(&inst)? } else { inst })
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<Instance>> {
    paths.iter().map(|p| load_instance(p)).collect()
}

fn timed<T>(on: bool, f: impl FnOnce() -> T) -> (T, Option<f64>) {
    let start = Instant::now();
    let out = f();
    (out, on.then(|| start.elapsed().as_secs_f64() * 1e3))
}

fn open_sink(run: &RunOpts, kind: &str, header: &Header) -> Result<Sink> {
    Sink::open(default_path(&run.out, &format!("{kind}.jsonl")), header)
}

fn finish(sink: Sink, kind: &str, notices: usize) -> Result<()> {
    let (path, n) = sink.finish()?;
    if let Some(p) = path {
        eprintln!("{kind}: {n} records written to {}", p.display());
    }
    if notices > 0 {
        eprintln!("{kind}: {notices} instances skipped or failed; see their records");
    }
    Ok(())
}

fn count_notices(rs: &[Record]) -> usize {
    rs.iter().filter(|r| matches!(r, Record::Skip(_) | Record::Error(_))).count()
}

fn notice(file: Option<String>, seed: Option<u64>, err: impl std::fmt::Display) -> Notice {
    Notice { file, instance_seed: seed, message: err.to_string() }
}

fn spin_string(c: &SpinConfig) -> String {
    c.spins().iter().map(|&s| if s > 0 { '+' } else { '-' }).collect()
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let Some(dir) = default_path(&a.out, "instances") else {
        bail!("no output directory: pass --out or set {}", crate::OUT_ENV);
    };
    let classes = a.class.resolve()?;
    let g = Arc::new(a.topology.graph()?);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let header = Header::new("generate", &a)?;
    let mut manifest = Sink::open(Some(dir.join("manifest.jsonl")), &header)?;
    for class in classes {
        for index in 0..a.count {
            let seed = instance_seed(a.seed, class, index);
            let inst = sample_instance(class, g.clone(), seed);
            let name = instance_file_name(class, &g, index);
            fs::write(dir.join(&name), instance_to_string(&inst)?)
                .with_context(|| format!("writing {}", dir.join(&name).display()))?;
            manifest.write(&Record::Instance(entry(name, class, index, &inst)))?;
        }
    }
    finish(manifest, "generate", 0)
}

fn instance_file_name(class: InstanceClass, g: &Graph, index: u64) -> String {
    format!("{}-n{}-{index:05}.txt", class.name().to_lowercase(), g.n_vertices())
}

fn entry(file: String, class: InstanceClass, index: u64, inst: &Instance) -> InstanceEntry {
    InstanceEntry { file, class, index, seed: inst.seed(), n_spins: inst.n_spins(), n_edges: inst.graph().n_edges() }
}

fn solve_engine(solver: &SolverOpts, master: u64, inst: &Instance) -> Result<Engine> {
    solver.engine(inst.class(), derive_seed(master, &[SOLVE_STREAM, inst.seed()]))
}

pub fn solve(mut a: SolveArgs) -> Result<()> {
    a.solver.load()?;
    let header = Header::new("solve", &a)?;
    let insts = load_all(&a.files)?;
    let records: Vec<Record> = pool(a.run.workers)?.install(|| {
        insts.par_iter().zip(&a.files).map(|(inst, path)| solve_one(&a, inst, label(path))).collect()
    });
    let mut sink = open_sink(&a.run, "solve", &header)?;
    sink.write_all(&records)?;
    finish(sink, "solve", count_notices(&records))
}

fn solve_one(a: &SolveArgs, inst: &Instance, file: String) -> Record {
    let (rep, wall_ms) = timed(a.run.timing, || -> Result<_> { Ok(solve_engine(&a.solver, a.run.seed, inst)?.solve(inst)?) });
    match rep {
        Ok(gs) => Record::Solve(SolveRecord {
            file,
            instance_seed: inst.seed(),
            class: inst.class(),
            n_spins: inst.n_spins(),
            engine: gs.engine,
            e0: gs.e0,
            degeneracy: gs.degeneracy_estimate,
            unique: gs.unique_config(inst.has_zero_fields()).is_some(),
            excited_energy: gs.excited_energy,
            n1: gs.n1,
            agreement: gs.agreement,
            overflow: gs.gs_overflow || gs.excited_overflow,
            sweeps: gs.sweeps_used,
            thermalized: gs.thermalized,
            ground_state: gs.gs_configs.first().map(spin_string),
            wall_ms,
        }),
        Err(e) => Record::Error(notice(Some(file), Some(inst.seed()), format!("{e:#}"))),
    }
}

/// An instance whose unique ground state is known, ready for noise trials.
struct Prepared<'a> {
    inst: &'a Instance,
    file: Option<String>,
    gs: GroundStateReport,
    original: SpinConfig,
    ladder: LevelLadder,
}

/// Everything a batch of noise trials needs besides the instances.
struct TrialPlan<'a> {
    solver: &'a SolverOpts,
    master: u64,
    points: &'a [NoiseSpec],
    timing: bool,
}

impl TrialPlan<'_> {
    /// Run every (instance, noise point, trial) unit and assemble one record
    /// per (instance, noise point), in instance then point order.
    fn run(&self, prepared: &[Prepared]) -> Vec<Result<(ResilienceRecord, Option<f64>)>> {
        self.run_refs(&prepared.iter().collect::<Vec<_>>())
    }

    fn run_refs(&self, prepared: &[&Prepared]) -> Vec<Result<(ResilienceRecord, Option<f64>)>> {
        let units: Vec<(usize, usize, u64)> = (0..prepared.len())
            .flat_map(|i| {
                (0..self.points.len()).flat_map(move |p| (0..self.points[p].n_trials as u64).map(move |t| (i, p, t)))
            })
            .collect();
        let outcomes: Vec<(Result<TrialOutcome>, Option<f64>)> = units
            .par_iter()
            .map(|&(i, p, t)| {
                let pr = &prepared[i];
                timed(self.timing, || {
                    let seed = derive_seed(self.master, &[TRIAL_STREAM, pr.inst.seed(), p as u64, t]);
                    let engine = self.solver.engine(pr.inst.class(), seed)?;
                    Ok(resilience_trial(pr.inst, &pr.original, &self.points[p], t, &engine)?)
                })
            })
            .collect();
        let mut groups: BTreeMap<(usize, usize), Group> = BTreeMap::new();
        for (&(i, p, _), (res, ms)) in units.iter().zip(outcomes) {
            let g = groups.entry((i, p)).or_default();
            match res {
                Ok(o) => g.0.push(o),
                Err(e) => g.1.push(format!("{e:#}")),
            }
            if let Some(ms) = ms {
                *g.2.get_or_insert(0.0) += ms;
            }
        }
        groups
            .into_iter()
            .map(|((i, p), (trials, errors, ms))| {
                if let Some(e) = errors.first() {
                    bail!("trial failed: {e}");
                }
                Ok((assemble_record(prepared[i].inst, &prepared[i].gs, &self.points[p], trials)?, ms))
            })
            .collect()
    }
}

/// Trials, error messages and summed wall time of one (instance, point) pair.
type Group = (Vec<TrialOutcome>, Vec<String>, Option<f64>);

/// Solve an instance and check its ground state is unique; `Err` carries the
/// skip or error record.
fn prepare<'a>(
    solver: &SolverOpts,
    master: u64,
    ladder: Ladder,
    max_k: i64,
    inst: &'a Instance,
    file: Option<String>,
) -> std::result::Result<Prepared<'a>, Record> {
    let fail = |e: anyhow::Error| Record::Error(notice(file.clone(), Some(inst.seed()), format!("{e:#}")));
    let gs = solve_engine(solver, master, inst).and_then(|e| Ok(e.solve(inst)?)).map_err(fail)?;
    let original = original_ground_state(inst, &gs)
        .map_err(|e| Record::Skip(notice(file.clone(), Some(inst.seed()), e)))?;
    let ladder = match ladder {
        Ladder::Uniform => LevelLadder::Uniform,
        Ladder::Populated => LevelLadder::Populated(populated_levels(inst, max_k).map_err(fail)?),
    };
    Ok(Prepared { inst, file, gs, original, ladder })
}

/// The lowest `max_k + 1` populated levels of the exact spectrum (fewer if the
/// spectrum has fewer).
fn populated_levels(inst: &Instance, max_k: i64) -> Result<Vec<f64>> {
    if inst.n_spins() > DEFAULT_MAX_N {
        bail!("the populated ladder needs the exact spectrum, limited to {DEFAULT_MAX_N} spins");
    }
    let want = max_k as usize + 1;
    let gap = inst.level_gap().context("instance has no class, so no level spacing")?;
    let span: f64 = inst.couplers().iter().chain(inst.fields()).map(|x| 2.0 * x.abs()).sum();
    let mut window = want as f64 * gap;
    loop {
        let opts = OracleOptions { level_window: Some(window), ..OracleOptions::default() };
        let levels = exact_solve(inst, &opts)?.level_energies();
        if levels.len() >= want || window > span {
            return Ok(levels.into_iter().take(want).collect());
        }
        window *= 2.0;
    }
}

fn relaxed_values(record: &ResilienceRecord, ks: &[i64], ladder: &LevelLadder) -> Result<Vec<Relaxed>> {
    ks.iter().map(|&k| Ok(Relaxed { k, r: relaxed_resilience(record, k, ladder)? })).collect()
}

pub fn resilience(mut a: ResilienceArgs) -> Result<()> {
    a.solver.load()?;
    if let Some(k) = a.ks.iter().find(|&&k| k < 0) {
        bail!("relaxed levels must be non-negative, got {k}");
    }
    let points = a.noise.points(derive_seed(a.run.seed, &[NOISE_STREAM]))?;
    let header = Header::new("resilience", &a)?;
    let insts = load_all(&a.files)?;
    let max_k = a.ks.iter().copied().max().unwrap_or(0);
    let pool = pool(a.run.workers)?;
    let plan = TrialPlan { solver: &a.solver, master: a.run.seed, points: &points, timing: a.run.timing };

    let records = pool.install(|| -> Result<Vec<Record>> {
        let prepared: Vec<_> = insts
            .par_iter()
            .zip(&a.files)
            .map(|(inst, path)| prepare(&a.solver, a.run.seed, a.ladder, max_k, inst, Some(label(path))))
            .collect();
        let ok: Vec<&Prepared> = prepared.iter().filter_map(|p| p.as_ref().ok()).collect();
        let mut results = plan.run_refs(&ok).into_iter();
        let mut lines = Vec::new();
        // input order: each instance's notice or its records, one per noise point
        for slot in &prepared {
            let pr = match slot {
                Ok(pr) => pr,
                Err(rec) => {
                    lines.push(rec.clone());
                    continue;
                }
            };
            for res in results.by_ref().take(points.len()) {
                match res.and_then(|(record, wall_ms)| {
                    let relaxed = relaxed_values(&record, &a.ks, &pr.ladder)?;
                    Ok(ResilienceLine { file: pr.file.clone(), record, ladder: a.ladder, relaxed, wall_ms })
                }) {
                    Ok(line) => lines.push(Record::Resilience(line)),
                    Err(e) => lines.push(Record::Error(notice(pr.file.clone(), Some(pr.inst.seed()), format!("{e:#}")))),
                }
            }
        }
        Ok(lines)
    })?;

    if let Some(path) = &a.csv {
        let lines: Vec<ResilienceLine> = records
            .iter()
            .filter_map(|r| if let Record::Resilience(l) = r { Some(l.clone()) } else { None })
            .collect();
        report::resilience_table(&lines)?.write_csv(path)?;
    }
    let mut sink = open_sink(&a.run, "resilience", &header)?;
    sink.write_all(&records)?;
    finish(sink, "resilience", count_notices(&records))
}

/// Generate, normalize and summarize `count` instances of `class`.
fn summarize_class(
    solver: &SolverOpts,
    run: &RunOpts,
    class: InstanceClass,
    g: &Arc<Graph>,
    count: u64,
) -> Vec<std::result::Result<(Instance, SummaryLine, GroundStateReport), Record>> {
    (0..count)
        .into_par_iter()
        .map(|index| {
            let seed = instance_seed(run.seed, class, index);
            let (res, wall_ms) = timed(run.timing, || -> Result<_> {
                let inst = normalize(&sample_instance(class, g.clone(), seed))?;
                let (summary, gs) = summarize_instance(&inst, &solve_engine(solver, run.seed, &inst)?)?;
                Ok((inst, summary, gs))
            });
            res.map(|(inst, summary, gs)| {
                (inst, SummaryLine { class, n_spins: g.n_vertices(), summary, selected: None, wall_ms }, gs)
            })
            .map_err(|e| Record::Error(notice(None, Some(seed), format!("{e:#}"))))
        })
        .collect()
}

pub fn yield_line(class: InstanceClass, n_spins: usize, lines: &[SummaryLine]) -> YieldLine {
    let rep = MiningReport::from_summaries(class, n_spins, lines.iter().map(|l| l.summary.clone()).collect());
    YieldLine {
        class,
        n_spins,
        n_total: rep.n_total,
        n_unique: rep.n_unique,
        yield_: rep.yield_,
        yield_error: rep.yield_error,
    }
}

pub fn yield_(mut a: YieldArgs) -> Result<()> {
    a.solver.load()?;
    let header = Header::new("yield", &a)?;
    let classes = a.class.resolve()?;
    let g = Arc::new(a.topology.graph()?);
    let pool = pool(a.run.workers)?;
    let mut records = Vec::new();
    for class in classes {
        let results = pool.install(|| summarize_class(&a.solver, &a.run, class, &g, a.count));
        let mut lines = Vec::new();
        for r in results {
            match r {
                Ok((_, line, _)) => {
                    lines.push(line.clone());
                    records.push(Record::Summary(line));
                }
                Err(rec) => records.push(rec),
            }
        }
        records.push(Record::Yield(yield_line(class, g.n_vertices(), &lines)));
    }
    let mut sink = open_sink(&a.run, "yield", &header)?;
    sink.write_all(&records)?;
    finish(sink, "yield", count_notices(&records))
}

pub fn mine(mut a: MineArgs) -> Result<()> {
    a.solver.load()?;
    let points = a.noise.points(derive_seed(a.run.seed, &[NOISE_STREAM]))?;
    let [point] = points.as_slice() else {
        bail!("mine takes exactly one noise point, got {}", points.len());
    };
    let header = Header::new("mine", &a)?;
    let classes = a.class.resolve()?;
    let g = Arc::new(a.topology.graph()?);
    let n = g.n_vertices();
    let pool = pool(a.run.workers)?;
    let plan = TrialPlan { solver: &a.solver, master: a.run.seed, points: std::slice::from_ref(point), timing: a.run.timing };
    let mut records = Vec::new();
    let mut exported = Vec::new();

    for class in classes {
        let results = pool.install(|| summarize_class(&a.solver, &a.run, class, &g, a.count));
        let mut solved = Vec::new();
        for r in results {
            match r {
                Ok(x) => solved.push(x),
                Err(rec) => records.push(rec),
            }
        }
        let summaries: Vec<_> = solved.iter().map(|(_, l, _)| l.summary.clone()).collect();
        let keep = filter_benchmark_set(&summaries, a.max_n1, !a.allow_degenerate);
        let mut prepared = Vec::new();
        for (inst, line, gs) in &mut solved {
            let selected = keep.contains(&inst.seed());
            line.selected = Some(selected);
            if selected {
                exported.push((class, inst.clone()));
                if let Ok(original) = original_ground_state(inst, gs) {
                    let gs = gs.clone();
                    prepared.push(Prepared { inst, file: None, gs, original, ladder: LevelLadder::Uniform });
                }
            }
        }
        let results = pool.install(|| plan.run(&prepared));
        let mut r_of = BTreeMap::new();
        for (pr, res) in prepared.iter().zip(results) {
            match res {
                Ok((record, _)) => {
                    r_of.insert(pr.inst.seed(), record.r);
                }
                Err(e) => records.push(Record::Error(notice(None, Some(pr.inst.seed()), format!("{e:#}")))),
            }
        }
        let mut lines: Vec<SummaryLine> = solved.into_iter().map(|(_, l, _)| l).collect();
        for l in &mut lines {
            l.summary.resilience = r_of.get(&l.summary.seed).copied();
        }
        let yl = yield_line(class, n, &lines);
        records.extend(lines.iter().cloned().map(Record::Summary));
        records.push(Record::Yield(yl));
        records.extend(mined_tables(class, n, &lines));
    }

    if let Some(dir) = &a.export {
        export(dir, &header, &exported)?;
    }
    let mut sink = open_sink(&a.run, "mine", &header)?;
    sink.write_all(&records)?;
    finish(sink, "mine", count_notices(&records))
}

/// N1 profile and the rank correlations of resilience, over instances that have one.
pub fn mined_tables(class: InstanceClass, n_spins: usize, lines: &[SummaryLine]) -> Vec<Record> {
    let with_r: Vec<_> = lines.iter().map(|l| &l.summary).filter(|s| s.resilience.is_some()).cloned().collect();
    let mut out = Vec::new();
    let profile = spinbench::mining::n1_resilience_profile(&with_r).expect("filtered on resilience");
    for row in profile {
        out.push(Record::N1Profile(N1Line { class, n_spins, n1: row.n1, mean_r: row.mean_r, count: row.count }));
    }
    let r: Vec<f64> = with_r.iter().map(|s| s.resilience.expect("filtered")).collect();
    let n1: Vec<f64> = with_r.iter().map(|s| s.n1 as f64).collect();
    let ham: Vec<(f64, f64)> =
        with_r.iter().filter_map(|s| Some((s.hamming?.1, s.resilience.expect("filtered")))).collect();
    let (hx, hy): (Vec<f64>, Vec<f64>) = ham.into_iter().unzip();
    for (x, xs, ys) in [("n1", &n1, &r), ("mean_hamming", &hx, &hy)] {
        match spearman(xs, ys) {
            Ok(c) => out.push(Record::Correlation(CorrelationLine {
                class,
                n_spins,
                x: x.into(),
                rho: c.rho,
                p_value: c.p_value,
                n: c.n,
            })),
            Err(e) => eprintln!("mine: no {x} correlation for {class}: {e}"),
        }
    }
    out
}

fn export(dir: &Path, header: &Header, insts: &[(InstanceClass, Instance)]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut manifest = Sink::open(Some(dir.join("manifest.jsonl")), header)?;
    let mut index_of: BTreeMap<InstanceClass, u64> = BTreeMap::new();
    for (class, inst) in insts {
        let index = index_of.entry(*class).or_default();
        let name = instance_file_name(*class, inst.graph(), *index);
        let mut f = create(&dir.join(&name))?;
        spinbench::instances::write_instance(inst, &mut f)?;
        manifest.write(&Record::Instance(entry(name, *class, *index, inst)))?;
        *index += 1;
    }
    manifest.finish()?;
    Ok(())
}
