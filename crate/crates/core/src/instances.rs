//! Disorder classes, instance sampling, normalization and class-level
//! analytic properties.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::topology::{build_chimera_rect, degree_histogram, Graph, Topology};

/// Discrete coupler distributions. Couplers are drawn uniformly from
/// `{±v : v in coupler_values}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InstanceClass {
    U1,
    U4,
    U567,
    S28,
}

impl InstanceClass {
    pub const ALL: [InstanceClass; 4] = [InstanceClass::U1, InstanceClass::U4, InstanceClass::U567, InstanceClass::S28];

    pub fn name(self) -> &'static str {
        match self {
            InstanceClass::U1 => "U1",
            InstanceClass::U4 => "U4",
            InstanceClass::U567 => "U567",
            InstanceClass::S28 => "S28",
        }
    }

    pub fn coupler_values(self) -> &'static [i64] {
        match self {
            InstanceClass::U1 => &[1],
            InstanceClass::U4 => &[1, 2, 3, 4],
            InstanceClass::U567 => &[5, 6, 7],
            InstanceClass::S28 => &[8, 13, 19, 28],
        }
    }

    pub fn i_max(self) -> i64 {
        *self.coupler_values().iter().max().unwrap()
    }

    /// Greatest common divisor of the coupler magnitudes.
    pub fn value_gcd(self) -> i64 {
        self.coupler_values().iter().fold(0, |g, &v| gcd(g, v))
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl fmt::Display for InstanceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InstanceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "U1" => Ok(InstanceClass::U1),
            "U4" => Ok(InstanceClass::U4),
            "U567" | "U5,6,7" | "U5_6_7" => Ok(InstanceClass::U567),
            "S28" => Ok(InstanceClass::S28),
            _ => Err(Error::InvalidInput(format!("unknown instance class '{s}'"))),
        }
    }
}

/// Minimum single-flip energy change in normalized units: `2 / i_max`.
pub fn classical_gap(class: InstanceClass) -> f64 {
    2.0 / class.i_max() as f64
}

/// Couplers `J_ij` (one per graph edge, canonical edge order) and fields `h_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    graph: Arc<Graph>,
    couplers: Vec<f64>,
    fields: Vec<f64>,
    class: Option<InstanceClass>,
    seed: u64,
    normalized: bool,
}

impl Instance {
    /// Instance with explicit couplers and fields and no class tag.
    pub fn custom(graph: Arc<Graph>, couplers: Vec<f64>, fields: Vec<f64>) -> Result<Self> {
        Self::from_parts(graph, couplers, fields, None, 0, false)
    }

    pub fn from_parts(
        graph: Arc<Graph>,
        couplers: Vec<f64>,
        fields: Vec<f64>,
        class: Option<InstanceClass>,
        seed: u64,
        normalized: bool,
    ) -> Result<Self> {
        if couplers.len() != graph.n_edges() {
            return Err(Error::InvalidInput(format!(
                "{} couplers for a graph with {} edges",
                couplers.len(),
                graph.n_edges()
            )));
        }
        if fields.len() != graph.n_vertices() {
            return Err(Error::InvalidInput(format!(
                "{} fields for a graph with {} vertices",
                fields.len(),
                graph.n_vertices()
            )));
        }
        if couplers.iter().chain(fields.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite coupler or field".into()));
        }
        Ok(Self { graph, couplers, fields, class, seed, normalized })
    }

    pub fn graph(&self) -> &Arc<Graph> {
        &self.graph
    }

    pub fn n_spins(&self) -> usize {
        self.graph.n_vertices()
    }

    pub fn couplers(&self) -> &[f64] {
        &self.couplers
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    pub fn class(&self) -> Option<InstanceClass> {
        self.class
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn has_zero_fields(&self) -> bool {
        self.fields.iter().all(|&h| h == 0.0)
    }

    /// Replace couplers and fields, keeping class, seed and normalization tag.
    pub fn with_values(&self, couplers: Vec<f64>, fields: Vec<f64>) -> Result<Self> {
        Self::from_parts(self.graph.clone(), couplers, fields, self.class, self.seed, self.normalized)
    }

    /// Class gap `ΔE` expressed in this instance's energy units.
    pub fn level_gap(&self) -> Option<f64> {
        let class = self.class?;
        Some(if self.normalized { classical_gap(class) } else { 2.0 })
    }

    /// Integer multiplier that maps every coupler and field onto an integer,
    /// if one exists among the natural candidates (1, or `i_max` when normalized).
    pub fn exact_scale(&self) -> Option<i64> {
        let mut candidates = vec![1];
        if let Some(class) = self.class {
            candidates.push(class.i_max());
        }
        candidates.into_iter().find(|&s| {
            self.couplers.iter().chain(self.fields.iter()).all(|&x| as_integer(x * s as f64).is_some())
        })
    }
}

/// Integer value of `x` when `x` lies within round-off of one.
pub(crate) fn as_integer(x: f64) -> Option<i64> {
    const LIMIT: f64 = (1u64 << 40) as f64;
    let r = x.round();
    if r.abs() < LIMIT && (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        Some(r as i64)
    } else {
        None
    }
}

/// Draw one disorder realization. Each edge receives an independent uniform
/// draw from `±coupler_values`; all fields are zero.
pub fn sample_instance(class: InstanceClass, graph: Arc<Graph>, seed: u64) -> Instance {
    let values = class.coupler_values();
    let mut rng = seeds::rng_from(seed, &[0x1D57]);
    let couplers = (0..graph.n_edges())
        .map(|_| {
            let k = rng.random_range(0..2 * values.len());
            let v = values[k / 2] as f64;
            if k % 2 == 0 {
                v
            } else {
                -v
            }
        })
        .collect();
    let fields = vec![0.0; graph.n_vertices()];
    Instance { graph, couplers, fields, class: Some(class), seed, normalized: false }
}

/// Divide couplers and fields by the class `i_max`.
pub fn normalize(inst: &Instance) -> Result<Instance> {
    if inst.normalized {
        return Err(Error::InvalidState("instance is already normalized".into()));
    }
    let class = inst
        .class
        .ok_or_else(|| Error::InvalidState("cannot normalize an instance without a class".into()))?;
    let scale = class.i_max() as f64;
    Ok(Instance {
        graph: inst.graph.clone(),
        couplers: inst.couplers.iter().map(|j| j / scale).collect(),
        fields: inst.fields.iter().map(|h| h / scale).collect(),
        class: inst.class,
        seed: inst.seed,
        normalized: true,
    })
}

/// Exact probability that a sum of `degree` iid couplers drawn uniformly
/// from `±coupler_values` vanishes, as `(numerator, denominator)`.
pub fn zero_field_count(class: InstanceClass, degree: usize) -> (u128, u128) {
    let values = class.coupler_values();
    let reach = class.i_max() as usize * degree;
    // dist[k] counts sign/magnitude sequences with sum k - reach
    let mut dist = vec![0u128; 2 * reach + 1];
    dist[reach] = 1;
    for _ in 0..degree {
        let mut next = vec![0u128; dist.len()];
        for (k, &count) in dist.iter().enumerate() {
            if count == 0 {
                continue;
            }
            for &v in values {
                let v = v as usize;
                if k + v < next.len() {
                    next[k + v] += count;
                }
                if k >= v {
                    next[k - v] += count;
                }
            }
        }
        dist = next;
    }
    let denominator = (2 * values.len() as u128).pow(degree as u32);
    (dist[reach], denominator)
}

/// Probability that a vertex of the given degree has zero local field,
/// for uniform random couplers and neighbor spins and no external field.
pub fn zero_field_prob(class: InstanceClass, degree: usize) -> f64 {
    let (num, den) = zero_field_count(class, degree);
    num as f64 / den as f64
}

/// Degree-weighted average of [`zero_field_prob`] over all vertices of `g`.
pub fn zero_field_class_average(class: InstanceClass, g: &Graph) -> f64 {
    if g.n_vertices() == 0 {
        return 0.0;
    }
    let total: f64 = degree_histogram(g)
        .into_iter()
        .map(|(d, count)| count as f64 * zero_field_prob(class, d))
        .sum();
    total / g.n_vertices() as f64
}

pub const FORMAT_VERSION: &str = "v1";

fn topology_tag(g: &Graph) -> Result<String> {
    match g.topology() {
        Topology::Chimera { rows, cols } if rows == cols => Ok(rows.to_string()),
        Topology::Chimera { rows, cols } => Ok(format!("{rows}x{cols}")),
        Topology::Custom => Err(Error::InvalidInput("only chimera instances can be serialized".into())),
    }
}

/// Write an instance in the versioned text format.
///
/// ```text
/// # spinbench v1 class=U567 m=8 seed=42 normalized=0
/// e 0 4 -6
/// f 3 0.25
/// ```
pub fn write_instance<W: Write>(inst: &Instance, mut w: W) -> Result<()> {
    let class = inst.class.map(|c| c.name()).unwrap_or("none");
    writeln!(
        w,
        "# spinbench {FORMAT_VERSION} class={class} m={} seed={} normalized={}",
        topology_tag(&inst.graph)?,
        inst.seed,
        u8::from(inst.normalized)
    )?;
    for (&(i, j), &value) in inst.graph.edges().iter().zip(&inst.couplers) {
        writeln!(w, "e {i} {j} {value}")?;
    }
    for (i, &h) in inst.fields.iter().enumerate() {
        if h != 0.0 {
            writeln!(w, "f {i} {h}")?;
        }
    }
    Ok(())
}

pub fn instance_to_string(inst: &Instance) -> Result<String> {
    let mut buf = Vec::new();
    write_instance(inst, &mut buf)?;
    Ok(String::from_utf8(buf).expect("instance text is ascii"))
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Read an instance written by [`write_instance`]. Edges missing from the
/// file get a zero coupler.
pub fn read_instance<R: BufRead>(r: R) -> Result<Instance> {
    let mut lines = r.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty instance file"))?;
    let header = header?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some("#") || tokens.next() != Some("spinbench") {
        return Err(parse_err(1, "missing '# spinbench' header"));
    }
    if tokens.next() != Some(FORMAT_VERSION) {
        return Err(parse_err(1, format!("unsupported format version (expected {FORMAT_VERSION})")));
    }
    let mut kv = HashMap::new();
    for tok in tokens {
        let (k, v) = tok.split_once('=').ok_or_else(|| parse_err(1, format!("malformed header token '{tok}'")))?;
        kv.insert(k, v);
    }
    let get = |k: &str| kv.get(k).copied().ok_or_else(|| parse_err(1, format!("header lacks '{k}'")));
    let class = match get("class")? {
        "none" => None,
        name => Some(name.parse::<InstanceClass>().map_err(|e| parse_err(1, e.to_string()))?),
    };
    let m = get("m")?;
    let (rows, cols) = match m.split_once('x') {
        Some((r, c)) => (r.parse(), c.parse()),
        None => (m.parse(), m.parse()),
    };
    let (rows, cols): (usize, usize) = (
        rows.map_err(|_| parse_err(1, format!("bad m '{m}'")))?,
        cols.map_err(|_| parse_err(1, format!("bad m '{m}'")))?,
    );
    let seed: u64 = get("seed")?.parse().map_err(|_| parse_err(1, "bad seed"))?;
    let normalized = match get("normalized")? {
        "0" => false,
        "1" => true,
        other => return Err(parse_err(1, format!("bad normalized flag '{other}'"))),
    };
    let graph = Arc::new(build_chimera_rect(rows, cols)?);
    let mut couplers = vec![0.0; graph.n_edges()];
    let mut fields = vec![0.0; graph.n_vertices()];
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            [] => {}
            [c, ..] if c.starts_with('#') => {}
            ["e", i, j, v] => {
                let i: usize = i.parse().map_err(|_| parse_err(lineno, "bad vertex index"))?;
                let j: usize = j.parse().map_err(|_| parse_err(lineno, "bad vertex index"))?;
                let e = graph
                    .edge_index(i, j)
                    .ok_or_else(|| parse_err(lineno, format!("({i}, {j}) is not an edge of the graph")))?;
                couplers[e] = v.parse().map_err(|_| parse_err(lineno, "bad coupler value"))?;
            }
            ["f", i, v] => {
                let i: usize = i.parse().map_err(|_| parse_err(lineno, "bad vertex index"))?;
                if i >= fields.len() {
                    return Err(parse_err(lineno, format!("vertex {i} out of range")));
                }
                fields[i] = v.parse().map_err(|_| parse_err(lineno, "bad field value"))?;
            }
            _ => return Err(parse_err(lineno, format!("unrecognized record '{line}'"))),
        }
    }
    Instance::from_parts(graph, couplers, fields, class, seed, normalized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_chimera;
    use proptest::prelude::*;
    use rand::Rng;

    fn chimera(m: usize) -> Arc<Graph> {
        Arc::new(build_chimera(m).unwrap())
    }

    #[test]
    fn class_constants() {
        let imax: Vec<i64> = InstanceClass::ALL.iter().map(|c| c.i_max()).collect();
        assert_eq!(imax, vec![1, 4, 7, 28]);
        assert_eq!(classical_gap(InstanceClass::U1), 2.0);
        assert_eq!(classical_gap(InstanceClass::U4), 0.5);
        assert_eq!(classical_gap(InstanceClass::U567), 2.0 / 7.0);
        assert_eq!(classical_gap(InstanceClass::S28), 1.0 / 14.0);
        for c in InstanceClass::ALL {
            assert_eq!(c.name().parse::<InstanceClass>().unwrap(), c);
        }
        assert!("U9".parse::<InstanceClass>().is_err());
    }

    #[test]
    fn sampled_values_stay_in_class() {
        let g = chimera(8);
        let u1 = sample_instance(InstanceClass::U1, g.clone(), 1);
        assert!(u1.couplers().iter().all(|j| j.abs() == 1.0));
        let s28 = sample_instance(InstanceClass::S28, g.clone(), 2);
        assert!(s28.couplers().iter().all(|j| [8.0, 13.0, 19.0, 28.0].contains(&j.abs())));
        assert!(s28.has_zero_fields());
        assert_eq!(sample_instance(InstanceClass::U4, g.clone(), 9), sample_instance(InstanceClass::U4, g, 9));
    }

    #[test]
    fn u567_frequencies_within_binomial_bound() {
        let g = chimera(8);
        let inst = sample_instance(InstanceClass::U567, g, 12345);
        let n = inst.couplers().len() as f64;
        let p = 1.0 / 6.0;
        let sigma = (n * p * (1.0 - p)).sqrt();
        for v in [-7.0, -6.0, -5.0, 5.0, 6.0, 7.0] {
            let count = inst.couplers().iter().filter(|&&j| j == v).count() as f64;
            assert!((count - n * p).abs() <= 3.0 * sigma, "value {v}: {count}");
        }
    }

    #[test]
    fn normalization() {
        let g = chimera(2);
        let u1 = sample_instance(InstanceClass::U1, g.clone(), 3);
        assert_eq!(normalize(&u1).unwrap().couplers(), u1.couplers());

        let s28 = sample_instance(InstanceClass::S28, g, 4);
        let norm = normalize(&s28).unwrap();
        for (a, b) in s28.couplers().iter().zip(norm.couplers()) {
            assert_eq!(*b, a / 28.0);
            assert!(b.abs() <= 1.0);
        }
        assert!(norm.couplers().contains(&1.0) || norm.couplers().contains(&-1.0));
        assert!(matches!(normalize(&norm), Err(Error::InvalidState(_))));
        assert_eq!(s28.exact_scale(), Some(1));
        assert_eq!(norm.exact_scale(), Some(28));
        assert_eq!(norm.level_gap(), Some(1.0 / 14.0));
        assert_eq!(s28.level_gap(), Some(2.0));
    }

    #[test]
    fn zero_field_probabilities() {
        assert_eq!(zero_field_prob(InstanceClass::U1, 5), 0.0);
        assert_eq!(zero_field_prob(InstanceClass::U1, 6), 0.3125);
        // Σ over 6 iid ±{5,6,7}: brute force over all 6^6 sequences
        let vals = [-7i64, -6, -5, 5, 6, 7];
        let mut zeros = 0u64;
        for code in 0..6u64.pow(6) {
            let mut c = code;
            let mut s = 0;
            for _ in 0..6 {
                s += vals[(c % 6) as usize];
                c /= 6;
            }
            zeros += u64::from(s == 0);
        }
        assert_eq!(zero_field_count(InstanceClass::U567, 6), (zeros as u128, 46656));
    }

    #[test]
    fn class_averages_on_chimera_512() {
        let g = build_chimera(8).unwrap();
        let u1 = zero_field_class_average(InstanceClass::U1, &g);
        assert!((u1 - (384.0 * 0.3125) / 512.0).abs() < 1e-15);
        assert!((u1 - 0.23).abs() <= 0.005);
        assert!((zero_field_class_average(InstanceClass::U4, &g) - 0.06).abs() <= 0.005);
        assert!((zero_field_class_average(InstanceClass::U567, &g) - 0.045).abs() <= 0.005);
        assert!((zero_field_class_average(InstanceClass::S28, &g) - 0.015).abs() <= 0.005);
    }

    #[test]
    fn zero_field_prob_matches_sampling() {
        use rand::SeedableRng;
        let mut rng = crate::seeds::Rng::seed_from_u64(77);
        let trials = 200_000;
        for class in InstanceClass::ALL {
            let vals = class.coupler_values();
            for degree in [4usize, 5, 6] {
                let p = zero_field_prob(class, degree);
                let hits = (0..trials)
                    .filter(|_| {
                        let s: i64 = (0..degree)
                            .map(|_| {
                                let v = vals[rng.random_range(0..vals.len())];
                                if rng.random::<bool>() {
                                    v
                                } else {
                                    -v
                                }
                            })
                            .sum();
                        s == 0
                    })
                    .count() as f64;
                let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
                assert!((hits - trials as f64 * p).abs() <= 4.0 * sigma + 1.0, "{class} degree {degree}");
            }
        }
    }

    #[test]
    fn file_format_rejects_garbage() {
        assert!(read_instance("".as_bytes()).is_err());
        assert!(read_instance("# spinbench v2 class=U1 m=1 seed=0 normalized=0\n".as_bytes()).is_err());
        let bad_edge = "# spinbench v1 class=U1 m=1 seed=0 normalized=0\ne 0 1 1\n";
        assert!(matches!(read_instance(bad_edge.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let custom = Instance::custom(Arc::new(Graph::from_edges(2, &[(0, 1)]).unwrap()), vec![1.0], vec![0.0, 0.0]).unwrap();
        assert!(instance_to_string(&custom).is_err());
    }

    #[test]
    fn rectangular_header_round_trip() {
        let g = Arc::new(crate::topology::build_chimera_rect(1, 2).unwrap());
        let inst = sample_instance(InstanceClass::U4, g, 8);
        let text = instance_to_string(&inst).unwrap();
        assert!(text.starts_with("# spinbench v1 class=U4 m=1x2 seed=8 normalized=0\n"));
        assert_eq!(read_instance(text.as_bytes()).unwrap(), inst);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn file_round_trip_is_lossless(seed in any::<u64>(), class_idx in 0usize..4, m in 1usize..4,
                                       norm in any::<bool>(), field_seed in any::<u64>()) {
            let class = InstanceClass::ALL[class_idx];
            let mut inst = sample_instance(class, chimera(m), seed);
            if norm {
                inst = normalize(&inst).unwrap();
            }
            let mut rng = crate::seeds::rng_from(field_seed, &[]);
            let fields: Vec<f64> = (0..inst.n_spins())
                .map(|_| if rng.random::<f64>() < 0.3 { rng.random::<f64>() - 0.5 } else { 0.0 })
                .collect();
            let inst = inst.with_values(inst.couplers().to_vec(), fields).unwrap();
            let text = instance_to_string(&inst).unwrap();
            let back = read_instance(text.as_bytes()).unwrap();
            prop_assert_eq!(&back, &inst);
            prop_assert_eq!(instance_to_string(&back).unwrap(), text);
        }
    }
}
