//! Aggregation of results files. Every table is a pure function of the set of
//! records: inputs are grouped and sorted before anything is summed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use spinbench::instances::InstanceClass;
use spinbench::resilience::{class_resilience, ResilienceRecord};

use crate::args::ReportArgs;
use crate::commands::mined_tables;
use crate::output::{read_results, write_csv, Header};
use crate::records::*;

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub head: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, head: &[&str]) -> Self {
        Self { name: name.into(), head: head.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn render(&self) -> String {
        let mut width: Vec<usize> = self.head.iter().map(String::len).collect();
        for row in &self.rows {
            for (w, cell) in width.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = format!("## {}\n", self.name);
        for row in std::iter::once(&self.head).chain(&self.rows) {
            let cells: Vec<String> = row.iter().zip(&width).map(|(c, &w)| format!("{c:>w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let head: Vec<&str> = self.head.iter().map(String::as_str).collect();
        write_csv(path, &head, &self.rows)
    }
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

fn class_name(c: Option<InstanceClass>) -> String {
    c.map_or_else(|| "none".into(), |c| c.name().into())
}

/// Class averages per noise point, with mean relaxed resilience per level.
pub fn resilience_table(lines: &[ResilienceLine]) -> Result<Table> {
    type Key = (Option<InstanceClass>, usize, u64, u64);
    let mut groups: BTreeMap<Key, Vec<&ResilienceLine>> = BTreeMap::new();
    for l in lines {
        let r = &l.record;
        groups.entry((r.class, r.n_spins, r.noise.delta_j.to_bits(), r.noise.delta_h.to_bits())).or_default().push(l);
    }
    let ks: BTreeSet<i64> = lines.iter().flat_map(|l| l.relaxed.iter().map(|x| x.k)).collect();
    let mut head = vec!["class", "n_spins", "delta_j", "delta_h", "n_instances", "mean_r", "error"];
    let k_names: Vec<String> = ks.iter().map(|k| format!("r_k{k}")).collect();
    head.extend(k_names.iter().map(String::as_str));
    let mut t = Table::new("resilience", &head);
    for ((class, n, dj, dh), mut group) in groups {
        group.sort_by(|a, b| (a.record.instance_seed, &a.file).cmp(&(b.record.instance_seed, &b.file)));
        let records: Vec<ResilienceRecord> = group.iter().map(|l| l.record.clone()).collect();
        let mean = records.iter().map(|r| r.r).sum::<f64>() / records.len() as f64;
        let error = if records.len() >= 2 { f(class_resilience(&records)?.error) } else { String::new() };
        let mut row = vec![
            class_name(class),
            n.to_string(),
            f64::from_bits(dj).to_string(),
            f64::from_bits(dh).to_string(),
            records.len().to_string(),
            f(mean),
            error,
        ];
        for &k in &ks {
            let vals: Vec<f64> = group.iter().filter_map(|l| l.relaxed.iter().find(|x| x.k == k).map(|x| x.r)).collect();
            row.push(if vals.is_empty() { String::new() } else { f(vals.iter().sum::<f64>() / vals.len() as f64) });
        }
        t.rows.push(row);
    }
    Ok(t)
}

fn group_summaries(records: &[Record]) -> BTreeMap<(InstanceClass, usize), Vec<SummaryLine>> {
    let mut groups: BTreeMap<_, Vec<SummaryLine>> = BTreeMap::new();
    for r in records {
        if let Record::Summary(s) = r {
            groups.entry((s.class, s.n_spins)).or_default().push(s.clone());
        }
    }
    for g in groups.values_mut() {
        g.sort_by(|a, b| a.summary.seed.cmp(&b.summary.seed).then(a.summary.e0.total_cmp(&b.summary.e0)));
    }
    groups
}

fn yield_table(groups: &BTreeMap<(InstanceClass, usize), Vec<SummaryLine>>) -> Table {
    let mut t = Table::new("yield", &["class", "n_spins", "n_total", "n_unique", "yield", "error"]);
    for (&(class, n), lines) in groups {
        let y = crate::commands::yield_line(class, n, lines);
        t.rows.push(vec![
            class.name().into(),
            n.to_string(),
            y.n_total.to_string(),
            y.n_unique.to_string(),
            f(y.yield_),
            f(y.yield_error),
        ]);
    }
    t
}

fn mine_tables(groups: &BTreeMap<(InstanceClass, usize), Vec<SummaryLine>>) -> Vec<Table> {
    let mut n1 = Table::new("n1_profile", &["class", "n_spins", "n1", "mean_r", "count"]);
    let mut corr = Table::new("correlation", &["class", "n_spins", "x", "rho", "p_value", "n"]);
    for (&(class, n), lines) in groups {
        for r in mined_tables(class, n, lines) {
            match r {
                Record::N1Profile(l) => {
                    n1.rows.push(vec![class.name().into(), n.to_string(), l.n1.to_string(), f(l.mean_r), l.count.to_string()])
                }
                Record::Correlation(c) => corr.rows.push(vec![
                    class.name().into(),
                    n.to_string(),
                    c.x,
                    f(c.rho),
                    format!("{:.3e}", c.p_value),
                    c.n.to_string(),
                ]),
                _ => {}
            }
        }
    }
    vec![n1, corr]
}

fn solve_table(records: &[Record]) -> Table {
    let mut rows: Vec<&SolveRecord> =
        records.iter().filter_map(|r| if let Record::Solve(s) = r { Some(s) } else { None }).collect();
    rows.sort_by(|a, b| (&a.file, a.instance_seed).cmp(&(&b.file, b.instance_seed)));
    let mut t = Table::new(
        "solve",
        &["file", "class", "n_spins", "engine", "e0", "degeneracy", "n1", "agreement", "sweeps"],
    );
    for s in rows {
        t.rows.push(vec![
            s.file.clone(),
            class_name(s.class),
            s.n_spins.to_string(),
            s.engine.to_string(),
            s.e0.to_string(),
            s.degeneracy.to_string(),
            s.n1.to_string(),
            s.agreement.to_string(),
            s.sweeps.to_string(),
        ]);
    }
    t
}

fn instance_table(records: &[Record]) -> Table {
    let mut counts: BTreeMap<(InstanceClass, usize), u64> = BTreeMap::new();
    for r in records {
        if let Record::Instance(e) = r {
            *counts.entry((e.class, e.n_spins)).or_default() += 1;
        }
    }
    let mut t = Table::new("instances", &["class", "n_spins", "count"]);
    for ((class, n), c) in counts {
        t.rows.push(vec![class.name().into(), n.to_string(), c.to_string()]);
    }
    t
}

fn notice_table(records: &[Record]) -> Option<Table> {
    let mut rows: Vec<Vec<String>> = records
        .iter()
        .filter_map(|r| match r {
            Record::Skip(n) => Some(("skip", n)),
            Record::Error(n) => Some(("error", n)),
            _ => None,
        })
        .map(|(kind, n)| {
            vec![
                kind.into(),
                n.file.clone().unwrap_or_default(),
                n.instance_seed.map(|s| s.to_string()).unwrap_or_default(),
                n.message.clone(),
            ]
        })
        .collect();
    if rows.is_empty() {
        return None;
    }
    rows.sort();
    let mut t = Table::new("notices", &["kind", "file", "instance_seed", "message"]);
    t.rows = rows;
    Some(t)
}

/// Tables for the records of results files of one kind.
pub fn tables(kind: &str, records: &[Record]) -> Result<Vec<Table>> {
    let mut out = match kind {
        "generate" => vec![instance_table(records)],
        "solve" => vec![solve_table(records)],
        "resilience" => {
            let lines: Vec<ResilienceLine> = records
                .iter()
                .filter_map(|r| if let Record::Resilience(l) = r { Some(l.clone()) } else { None })
                .collect();
            vec![resilience_table(&lines)?]
        }
        "yield" => vec![yield_table(&group_summaries(records))],
        "mine" => {
            let groups = group_summaries(records);
            let mut t = vec![yield_table(&groups)];
            t.extend(mine_tables(&groups));
            t
        }
        other => bail!("cannot report on results of kind '{other}'"),
    };
    out.extend(notice_table(records));
    Ok(out)
}

/// Read results files, which must share kind, format and version.
pub fn load(paths: &[std::path::PathBuf]) -> Result<(Header, Vec<Record>)> {
    let mut first: Option<Header> = None;
    let mut all = Vec::new();
    for p in paths {
        let (h, mut records) = read_results(p)?;
        if let Some(f) = &first {
            if (&f.kind, &f.format, &f.version) != (&h.kind, &h.format, &h.version) {
                bail!(
                    "incompatible results headers: {} is '{}' ({} {}), expected '{}' ({} {})",
                    p.display(),
                    h.kind,
                    h.format,
                    h.version,
                    f.kind,
                    f.format,
                    f.version
                );
            }
        } else {
            first = Some(h);
        }
        all.append(&mut records);
    }
    Ok((first.context("no results files")?, all))
}

pub fn run(a: ReportArgs) -> Result<()> {
    let (header, records) = load(&a.files)?;
    let tables = tables(&header.kind, &records)?;
    let text: String = tables.iter().map(Table::render).collect::<Vec<_>>().join("\n");
    match &a.out {
        Some(p) => std::fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    if let Some(dir) = &a.csv {
        for t in &tables {
            t.write_csv(&dir.join(format!("{}.csv", t.name)))?;
        }
    }
    Ok(())
}
