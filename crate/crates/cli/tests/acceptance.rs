//! Acceptance suite: one numbered check per line, exit status 1 if any fails.
//!
//! `cargo test -p spinbench-cli --test acceptance -- 1 2 5` runs a subset.
//! The full run takes most of an hour on a single core; criterion 3 dominates.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use spinbench::instances::{classical_gap, normalize, sample_instance, zero_field_class_average, Instance, InstanceClass};
use spinbench::mining::{instance_seed, summarize_instance};
use spinbench::model::{compile, Compiled, SpinConfig};
use spinbench::oracle::{exact_solve, OracleOptions};
use spinbench::resilience::{
    class_resilience, instance_resilience, original_ground_state, perturb, NoiseSpec, ResilienceRecord,
};
use spinbench::seeds::{derive_seed, rng_from};
use spinbench::solver::{find_ground_state, Engine, Ensemble, GroundStateReport, LaneEnsemble, SolverParams};
use spinbench::stats::spearman;
use spinbench::topology::{build_chimera, build_chimera_rect, Graph};

const MASTER: u64 = 20_160_317;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn chimera(rows: usize, cols: usize) -> Arc<Graph> {
    Arc::new(build_chimera_rect(rows, cols).unwrap())
}

fn class_instance(class: InstanceClass, g: &Arc<Graph>, master: u64, index: u64) -> Instance {
    normalize(&sample_instance(class, g.clone(), instance_seed(master, class, index))).unwrap()
}

/// Energy summed edge by edge, in units of `scale`; exact for integer instances.
fn int_energy(inst: &Instance, scale: i64, c: &SpinConfig) -> i64 {
    let s = c.spins();
    let q = |x: f64| (x * scale as f64).round() as i64;
    let bonds: i64 = inst
        .graph()
        .edges()
        .iter()
        .zip(inst.couplers())
        .map(|(&(i, j), &v)| q(v) * i64::from(s[i as usize]) * i64::from(s[j as usize]))
        .sum();
    let fields: i64 = inst.fields().iter().zip(&s).map(|(&h, &si)| q(h) * i64::from(si)).sum();
    -bonds - fields
}

fn float_energy(inst: &Instance, c: &SpinConfig) -> f64 {
    let s = c.spins();
    let bonds: f64 = inst
        .graph()
        .edges()
        .iter()
        .zip(inst.couplers())
        .map(|(&(i, j), &v)| v * f64::from(s[i as usize]) * f64::from(s[j as usize]))
        .sum();
    let fields: f64 = inst.fields().iter().zip(&s).map(|(&h, &si)| h * f64::from(si)).sum();
    -bonds - fields
}

fn zero_field_averages() -> Outcome {
    let g = build_chimera(8).unwrap();
    let expected = [(InstanceClass::U1, 23.0), (InstanceClass::U4, 6.0), (InstanceClass::U567, 4.5), (InstanceClass::S28, 1.5)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (class, pct) in expected {
        let got = 100.0 * zero_field_class_average(class, &g);
        pass &= (got - pct).abs() <= 0.5;
        parts.push(format!("{class} {got:.2}% (want {pct}%)"));
    }
    outcome(pass, parts.join(", "))
}

fn gaps() -> Outcome {
    let expected = [2.0, 1.0 / 2.0, 2.0 / 7.0, 1.0 / 14.0];
    let got: Vec<f64> = InstanceClass::ALL.iter().map(|&c| classical_gap(c)).collect();
    outcome(got == expected, format!("{got:?}"))
}

fn oracle_equivalence() -> Outcome {
    let per_class = 100u64;
    let mut parts = Vec::new();
    let mut pass = true;
    for (rows, cols) in [(1, 1), (1, 2)] {
        let g = chimera(rows, cols);
        for class in InstanceClass::ALL {
            let params = SolverParams::table_one(class);
            let misses: Vec<u64> = (0..per_class)
                .into_par_iter()
                .filter(|&i| {
                    let inst = class_instance(class, &g, MASTER, i);
                    let exact = exact_solve(&inst, &OracleOptions::default()).unwrap();
                    let p = params.clone().with_seed(derive_seed(MASTER, &[3, class as u64, i]));
                    let h = find_ground_state(&inst, &p).unwrap();
                    !((h.e0 - exact.e0).abs() <= 1e-9
                        && h.degeneracy_estimate == exact.degeneracy
                        && h.n1 == exact.excited_count
                        && !h.gs_overflow
                        && !h.excited_overflow)
                })
                .collect();
            pass &= misses.is_empty();
            parts.push(format!("N={} {class} {}/{per_class}", g.n_vertices(), per_class - misses.len() as u64));
        }
    }
    outcome(pass, format!("matches at 2^19 sweeps: {}", parts.join(", ")))
}

fn icm_conservation() -> Outcome {
    let temps: Vec<f64> = (0..8).map(|i| 0.2 * 15f64.powf(i as f64 / 7.0)).collect();
    let g = chimera(2, 2);
    let (mut int_moves, mut float_moves, mut violations) = (0u64, 0u64, 0u64);
    let target = 1_000_000u64;
    let mut index = 0u64;
    let mut log = Vec::new();
    while int_moves < target || float_moves < target {
        let class = InstanceClass::ALL[(index % 4) as usize];
        let inst = class_instance(class, &g, MASTER ^ 4, index);
        let noisy = perturb(&inst, &NoiseSpec::new(0.05, 0.05).with_seed_base(MASTER), index).unwrap();
        let mut rng = rng_from(MASTER, &[4, index]);
        index += 1;
        if int_moves < target {
            let scale = inst.exact_scale().expect("class instances are exact");
            let Compiled::Exact(k) = compile(&inst) else { panic!("class instance compiled to floats") };
            let mut lanes = LaneEnsemble::new(&k, &temps, 4, temps.len(), &mut rng);
            let mut scalar = Ensemble::new(&k, &temps, 4, temps.len(), &mut rng);
            for _ in 0..4000 {
                lanes.sweep_all();
                scalar.sweep_all(&mut rng);
                let before_l: Vec<i64> = (0..4 * temps.len())
                    .map(|x| int_energy(&inst, scale, &lanes.config(x / temps.len(), x % temps.len())))
                    .collect();
                let before_s: Vec<i64> = (0..4 * temps.len())
                    .map(|x| int_energy(&inst, scale, &scalar.replica(x / temps.len(), x % temps.len()).config()))
                    .collect();
                log.clear();
                lanes.icm_move_logged(&mut rng, &mut log);
                for m in &log {
                    let b = before_l[m.a * temps.len() + m.temp] + before_l[m.b * temps.len() + m.temp];
                    let a = int_energy(&inst, scale, &lanes.config(m.a, m.temp))
                        + int_energy(&inst, scale, &lanes.config(m.b, m.temp));
                    violations += u64::from(a != b);
                }
                int_moves += log.len() as u64;
                log.clear();
                scalar.icm_move_logged(&mut rng, &mut log);
                for m in &log {
                    let b = before_s[m.a * temps.len() + m.temp] + before_s[m.b * temps.len() + m.temp];
                    let a = int_energy(&inst, scale, &scalar.replica(m.a, m.temp).config())
                        + int_energy(&inst, scale, &scalar.replica(m.b, m.temp).config());
                    violations += u64::from(a != b);
                }
                int_moves += log.len() as u64;
            }
        }
        if float_moves < target {
            let Compiled::Float(k) = compile(&noisy) else { panic!("perturbed instance compiled to integers") };
            let mut ens = Ensemble::new(&k, &temps, 4, temps.len(), &mut rng);
            for _ in 0..8000 {
                ens.sweep_all(&mut rng);
                let before: Vec<f64> = (0..4 * temps.len())
                    .map(|x| float_energy(&noisy, &ens.replica(x / temps.len(), x % temps.len()).config()))
                    .collect();
                log.clear();
                ens.icm_move_logged(&mut rng, &mut log);
                for m in &log {
                    let b = before[m.a * temps.len() + m.temp] + before[m.b * temps.len() + m.temp];
                    let a = float_energy(&noisy, &ens.replica(m.a, m.temp).config())
                        + float_energy(&noisy, &ens.replica(m.b, m.temp).config());
                    violations += u64::from((a - b).abs() > 1e-9);
                }
                float_moves += log.len() as u64;
            }
        }
    }
    outcome(
        violations == 0 && int_moves >= target && float_moves >= target,
        format!("{int_moves} integer and {float_moves} perturbed moves over {index} instances, {violations} violations"),
    )
}

fn boltzmann() -> Outcome {
    let g = Arc::new(Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap());
    let sweeps = 1_000_000u64;
    let check = |inst: &Instance, temp: f64, hist: &[u64; 8]| -> (bool, f64) {
        let w: Vec<f64> = (0..8u64).map(|b| (-float_energy(inst, &SpinConfig::from_bits(3, b)) / temp).exp()).collect();
        let z: f64 = w.iter().sum();
        let mut worst = 0.0f64;
        for (b, wb) in w.iter().enumerate() {
            let p = wb / z;
            let sigma = (sweeps as f64 * p * (1.0 - p)).sqrt();
            worst = worst.max((hist[b] as f64 - p * sweeps as f64).abs() / sigma);
        }
        (worst <= 3.0, worst)
    };

    let float_inst = Instance::custom(g.clone(), vec![1.0, -0.5], vec![0.3, 0.0, -0.2]).unwrap();
    let Compiled::Float(k) = compile(&float_inst) else { panic!("expected a float chain") };
    let mut rng = rng_from(MASTER, &[5]);
    let mut ens = Ensemble::new(&k, &[1.0, 1.8], 1, 1, &mut rng);
    let mut hist = [0u64; 8];
    for _ in 0..sweeps {
        ens.sweep_all(&mut rng);
        ens.pt_exchange(&mut rng);
        hist[ens.replica(0, 0).config().words()[0] as usize] += 1;
    }
    let (ok_f, worst_f) = check(&float_inst, 1.0, &hist);

    let int_inst = Instance::custom(g, vec![1.0, -2.0], vec![1.0, 0.0, -1.0]).unwrap();
    let Compiled::Exact(k) = compile(&int_inst) else { panic!("expected an integer chain") };
    let mut lanes = LaneEnsemble::new(&k, &[1.5, 3.0], 1, 1, &mut rng);
    let mut hist = [0u64; 8];
    for _ in 0..sweeps {
        lanes.sweep_all();
        lanes.pt_exchange(&mut rng);
        hist[lanes.config(0, 0).words()[0] as usize] += 1;
    }
    let (ok_i, worst_i) = check(&int_inst, 1.5, &hist);
    outcome(ok_f && ok_i, format!("largest deviation {worst_f:.2} sigma (float engine), {worst_i:.2} sigma (lane engine)"))
}

/// The first `want` instances of `class` with a unique ground state.
fn unique_instances(class: InstanceClass, g: &Arc<Graph>, master: u64, want: usize) -> Vec<(Instance, GroundStateReport)> {
    let mut out = Vec::new();
    let mut next = 0u64;
    while out.len() < want {
        let batch: Vec<_> = (next..next + 64)
            .into_par_iter()
            .filter_map(|i| {
                let inst = class_instance(class, g, master, i);
                let gs = Engine::Oracle.solve(&inst).unwrap();
                original_ground_state(&inst, &gs).is_ok().then_some((inst, gs))
            })
            .collect();
        out.extend(batch);
        next += 64;
        assert!(next < 100 * want as u64, "{class} yields almost no unique instances");
    }
    out.truncate(want);
    out
}

fn resilience_records(pool: &[(Instance, GroundStateReport)], spec: &NoiseSpec) -> Vec<ResilienceRecord> {
    pool.par_iter().map(|(inst, gs)| instance_resilience(inst, gs, spec, &Engine::Oracle).unwrap()).collect()
}

fn resilience_properties(records: &mut Vec<ResilienceRecord>) -> Outcome {
    let g = chimera(2, 2);
    let grid = [0.0, 0.01, 0.05, 0.10];
    let mut means: BTreeMap<(InstanceClass, usize), (f64, f64)> = BTreeMap::new();
    let mut zero_ok = true;
    let mut parts = Vec::new();
    for class in InstanceClass::ALL {
        let pool = unique_instances(class, &g, MASTER ^ 6, 100);
        let mut row = Vec::new();
        for (p, &dj) in grid.iter().enumerate() {
            let spec = NoiseSpec::bonds(dj).with_seed_base(derive_seed(MASTER, &[6]));
            let recs = resilience_records(&pool, &spec);
            let c = class_resilience(&recs).unwrap();
            if dj == 0.0 {
                zero_ok &= recs.iter().all(|r| r.r == 1.0);
            }
            means.insert((class, p), (c.mean, c.error));
            row.push(format!("{:.3}({:.0})", c.mean, 1e3 * c.error));
            records.extend(recs);
        }
        parts.push(format!("{class} [{}]", row.join(" ")));
    }
    // U567 with field noise too, so the relaxed-level relation is also seen with fields
    let pool = unique_instances(InstanceClass::U567, &g, MASTER ^ 6, 100);
    records.extend(resilience_records(&pool, &NoiseSpec::new(0.05, 0.05).with_seed_base(derive_seed(MASTER, &[6]))));

    let within = |hi: (f64, f64), lo: (f64, f64)| hi.0 + 2.0 * (hi.1 * hi.1 + lo.1 * lo.1).sqrt() >= lo.0;
    let mut monotone = true;
    for class in InstanceClass::ALL {
        for p in 1..grid.len() - 1 {
            monotone &= within(means[&(class, p)], means[&(class, p + 1)]);
        }
    }
    let at = |c| means[&(c, 2)];
    let order = within(at(InstanceClass::U1), at(InstanceClass::U4)) && within(at(InstanceClass::U567), at(InstanceClass::S28));
    outcome(
        zero_ok && monotone && order,
        format!(
            "R=1 at zero noise: {zero_ok}; nonincreasing: {monotone}; class order at 0.05: {order}; R over dJ {grid:?}: {}",
            parts.join(", ")
        ),
    )
}

fn relaxed_relation(records: &[ResilienceRecord]) -> Outcome {
    let (mut monotone, mut below, mut equal_without_fields) = (true, true, true);
    let mut field_gaps = 0usize;
    for r in records {
        monotone &= r.r_k.windows(2).all(|w| w[0] <= w[1]);
        // R_0 recounted from the trial energies under the original couplings
        let r0 = r.trials.iter().filter(|t| t.energy <= r.e0 + 1e-9).count() as f64 / r.trials.len() as f64;
        below &= r.r <= r0 && r0 == r.r_k[0];
        if r.noise.delta_h == 0.0 {
            equal_without_fields &= r.r == r0;
        } else if r.r < r0 {
            field_gaps += 1;
        }
    }
    outcome(
        monotone && below && equal_without_fields,
        format!(
            "{} records; R_k nondecreasing: {monotone}; R <= R_0: {below}; R = R_0 without field noise: {equal_without_fields}; \
             records with R < R_0 under field noise: {field_gaps}",
            records.len()
        ),
    )
}

fn yield_equivalence() -> Outcome {
    let g = chimera(2, 2);
    let seeds = 500u64;
    let b = 14;
    let mut pass = true;
    let mut parts = Vec::new();
    let mut u1_yield = f64::NAN;
    for class in InstanceClass::ALL {
        let params = SolverParams::table_one(class).with_log2_sweeps(b);
        let rows: Vec<(bool, bool)> = (0..seeds)
            .into_par_iter()
            .map(|i| {
                let inst = class_instance(class, &g, MASTER ^ 8, i);
                let exact = Engine::Oracle.solve(&inst).unwrap();
                let p = params.clone().with_seed(derive_seed(MASTER, &[8, class as u64, i]));
                let heur = Engine::Heuristic(p).solve(&inst).unwrap();
                let unique = |gs: &GroundStateReport| gs.unique_config(true).is_some();
                (unique(&exact), unique(&heur))
            })
            .collect();
        let n_exact = rows.iter().filter(|r| r.0).count();
        let n_heur = rows.iter().filter(|r| r.1).count();
        let same = rows.iter().all(|r| r.0 == r.1);
        pass &= same && n_exact == n_heur;
        if class == InstanceClass::U1 {
            u1_yield = n_exact as f64 / seeds as f64;
        }
        parts.push(format!("{class} {n_heur}/{n_exact}"));
    }
    outcome(
        pass,
        format!(
            "unique counts heuristic/oracle over {seeds} seeds at 2^{b} sweeps: {}; U1 yield {u1_yield:.3} \
             (zero expected; all degree-5 vertices here, equality governs)",
            parts.join(", ")
        ),
    )
}

fn correlations() -> Outcome {
    let g = chimera(2, 2);
    let pool = unique_instances(InstanceClass::U567, &g, MASTER ^ 9, 200);
    let spec = NoiseSpec::bonds(0.05).with_seed_base(derive_seed(MASTER, &[9]));
    let rows: Vec<(u64, Option<f64>, f64)> = pool
        .par_iter()
        .map(|(inst, gs)| {
            let (summary, _) = summarize_instance(inst, &Engine::Oracle).unwrap();
            let r = instance_resilience(inst, gs, &spec, &Engine::Oracle).unwrap().r;
            (summary.n1, summary.hamming.map(|h| h.1), r)
        })
        .collect();
    let n1: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
    let rs: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let (hx, hy): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|r| Some((r.1?, r.2))).unzip();
    let a = spearman(&n1, &rs).unwrap();
    let b = spearman(&hx, &hy).unwrap();
    outcome(
        a.significantly_negative(0.05) && b.significantly_negative(0.05),
        format!(
            "Spearman(N1, R) = {:.3} (p {:.1e}, n {}); Spearman(mean Hamming, R) = {:.3} (p {:.1e}, n {} with N1 > 0)",
            a.rho, a.p_value, a.n, b.rho, b.p_value, b.n
        ),
    )
}

fn cli<S: AsRef<str>>(args: &[S]) {
    let argv: Vec<&str> = std::iter::once("spinbench").chain(args.iter().map(AsRef::as_ref)).collect();
    spinbench_cli::run_args(&argv).unwrap_or_else(|e| panic!("{}: {e:#}", argv.join(" ")));
}

/// Run the whole pipeline in `dir` and return every file it wrote.
fn pipeline(dir: &Path, workers: &str) -> BTreeMap<String, Vec<u8>> {
    let _ = fs::remove_dir_all(dir);
    fs::create_dir_all(dir).unwrap();
    let d = |name: &str| dir.join(name).to_str().unwrap().to_string();
    cli(&["generate", "--class", "U567", "--class", "S28", "--m", "2", "--count", "4", "--seed", "5", "-o", &d("inst")]);
    let mut files: Vec<String> = fs::read_dir(dir.join("inst"))
        .unwrap()
        .map(|e| e.unwrap().path().to_str().unwrap().to_string())
        .filter(|p| p.ends_with(".txt"))
        .collect();
    files.sort();
    let with = |head: &[&str], tail: Vec<String>| -> Vec<String> {
        head.iter().map(|s| s.to_string()).chain(files.iter().cloned()).chain(tail).collect()
    };
    let run = |v: Vec<String>| cli(&v);
    let common = |extra: &[&str]| -> Vec<String> {
        ["--workers", workers, "--seed", "11"].iter().chain(extra).map(|s| s.to_string()).collect()
    };
    run(with(&["solve"], [common(&["--engine", "pt-icm", "--b", "10", "-o"]), vec![d("solve.jsonl")]].concat()));
    run(with(
        &["resilience"],
        [
            common(&["--delta-j", "0.05", "--delta-h", "0,0.05", "--trials", "4", "--engine", "pt-icm", "--b", "9"]),
            vec!["--csv".into(), d("agg.csv"), "-o".into(), d("res.jsonl")],
        ]
        .concat(),
    ));
    run([vec!["yield".to_string()], common(&["--class", "U4", "--m", "1", "--cols", "2", "--count", "10", "--engine", "pt-icm", "--b", "10", "-o"]), vec![d("yield.jsonl")]].concat());
    run([
        vec!["mine".to_string()],
        common(&["--class", "U567", "--m", "2", "--count", "16", "--delta-j", "0.05", "--trials", "4", "--export"]),
        vec![d("set"), "-o".into(), d("mine.jsonl")],
    ]
    .concat());
    cli(&["report", &d("mine.jsonl"), "--csv", &d("tables"), "-o", &d("report.txt")]);

    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(p) = stack.pop() {
        for e in fs::read_dir(&p).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_str().unwrap().to_string();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn sorted_lines(bytes: &[u8]) -> Vec<String> {
    let mut lines: Vec<String> = String::from_utf8_lossy(bytes).lines().map(str::to_string).collect();
    lines.sort();
    lines
}

fn determinism() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let dir = tmp.path().join("run");
    let first = pipeline(&dir, "1");
    let second = pipeline(&dir, "1");
    let parallel = pipeline(&dir, "3");
    let identical = first == second;
    let sorted_same = first.len() == parallel.len()
        && first.iter().all(|(k, v)| parallel.get(k).is_some_and(|w| sorted_lines(v) == sorted_lines(w)));
    let bytes: usize = first.values().map(Vec::len).sum();
    outcome(
        identical && sorted_same && first.len() > 10,
        format!(
            "{} files ({bytes} bytes): single-worker reruns identical: {identical}; three workers sorted-identical: {sorted_same} \
             (byte-identical: {})",
            first.len(),
            first == parallel
        ),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| selected.is_empty() || selected.contains(&n) || (n == 6 && selected.contains(&7));
    let mut records = Vec::new();
    let mut failed = Vec::new();
    let mut report = |n: usize, f: &mut dyn FnMut() -> Outcome| {
        if !want(n) {
            return;
        }
        let start = Instant::now();
        let o = f();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {status} ({:.1} s): {}", start.elapsed().as_secs_f64(), o.detail);
        if !o.pass {
            failed.push(n);
        }
    };
    report(1, &mut zero_field_averages);
    report(2, &mut gaps);
    report(3, &mut oracle_equivalence);
    report(4, &mut icm_conservation);
    report(5, &mut boltzmann);
    report(6, &mut || resilience_properties(&mut records));
    if want(7) {
        report(7, &mut || relaxed_relation(&records));
    }
    report(8, &mut yield_equivalence);
    report(9, &mut correlations);
    report(10, &mut determinism);
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
