//! Serially sampled Λ-coalescent genealogies and the datasets they induce.
//!
//! Times are ages measured backwards from the most recent sample: a batch
//! sampled at time `t` enters the ancestral process as `n` fresh blocks when
//! the backwards clock reaches `t`, and ancestry continues through all
//! batches until a single block (the MRCA) remains.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};

use crate::error::{domain, Error, Result};
use crate::measure::{LambdaMeasure, MergerRates};
use crate::mutation::MutationModel;

/// Deterministic random stream `stream` under master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSchedule {
    batches: Vec<(f64, usize)>,
}

impl SamplingSchedule {
    pub fn new(batches: Vec<(f64, usize)>) -> Result<Self> {
        if batches.is_empty() {
            return domain("sampling schedule is empty");
        }
        if batches[0].0 != 0.0 {
            return domain(format!("first sampling time must be 0, got {}", batches[0].0));
        }
        for w in batches.windows(2) {
            if !(w[1].0 > w[0].0) {
                return domain("sampling times must be strictly increasing");
            }
        }
        if batches.iter().any(|b| b.1 == 0 || !b.0.is_finite()) {
            return domain("sample sizes must be >= 1 and times finite");
        }
        Ok(Self { batches })
    }

    pub fn single(n: usize) -> Result<Self> {
        Self::new(vec![(0.0, n)])
    }

    /// `0:20,0.5:20,…`.
    pub fn parse(text: &str) -> Result<Self> {
        let batches = text
            .split(',')
            .map(|item| {
                let (t, n) = item
                    .split_once(':')
                    .ok_or_else(|| Error::Domain(format!("schedule entry `{item}` is not time:size")))?;
                let t: f64 = t.trim().parse().map_err(|_| Error::Domain(format!("bad time `{t}`")))?;
                let n: usize = n.trim().parse().map_err(|_| Error::Domain(format!("bad size `{n}`")))?;
                Ok((t, n))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(batches)
    }

    pub fn batches(&self) -> &[(f64, usize)] {
        &self.batches
    }

    pub fn total(&self) -> usize {
        self.batches.iter().map(|b| b.1).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub time: f64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Sampling batch for leaves.
    pub batch: Option<usize>,
    pub kind: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    LeafInsertion { time: f64, batch: usize, leaves: Vec<usize> },
    Merge { time: f64, children: Vec<usize>, parent: usize },
    /// Mutation on the branch above `node`.
    Mutation { time: f64, node: usize, from: usize, to: usize },
}

/// A genealogy stored as a node arena; leaves come first in batch order.
#[derive(Debug, Clone, PartialEq)]
pub struct Genealogy {
    pub nodes: Vec<Node>,
    pub events: Vec<Event>,
    pub root: usize,
}

impl Genealogy {
    pub fn root_type(&self) -> Option<usize> {
        self.nodes[self.root].kind
    }

    /// Leaf indices of one batch.
    pub fn batch_leaves(&self, batch: usize) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.batch == Some(batch))
            .map(|(i, _)| i)
            .collect()
    }

    /// Nodes ordered so every child precedes its parent.
    pub fn postorder(&self) -> Vec<usize> {
        // parents are always created after their children
        (0..self.nodes.len()).collect()
    }

    pub fn merge_sizes(&self) -> Vec<usize> {
        self.events
            .iter()
            .filter_map(|e| match e {
                Event::Merge { children, .. } => Some(children.len()),
                _ => None,
            })
            .collect()
    }

    /// Time of the MRCA.
    pub fn height(&self) -> f64 {
        self.nodes[self.root].time
    }
}

/// Untyped serial coalescent with the given rates. `rates` must cover the
/// total sample size.
pub fn simulate_topology<R: Rng + ?Sized>(
    rates: &MergerRates,
    schedule: &SamplingSchedule,
    rng: &mut R,
) -> Result<Genealogy> {
    let total = schedule.total();
    if rates.max_blocks() < total.max(2) {
        return domain(format!("merger rates cover {} blocks, sample has {total}", rates.max_blocks()));
    }
    let mut nodes: Vec<Node> = Vec::with_capacity(2 * total);
    let mut events = Vec::new();
    for (b, &(t, n)) in schedule.batches().iter().enumerate() {
        for _ in 0..n {
            nodes.push(Node { time: t, parent: None, children: vec![], batch: Some(b), kind: None });
        }
    }
    let mut active: Vec<usize> = Vec::with_capacity(total);
    let mut next_leaf = 0;
    let mut time = 0.0;
    let batches = schedule.batches();
    let mut next_batch = 0;
    loop {
        if next_batch < batches.len() && (active.len() < 2 || batches[next_batch].0 <= time) {
            let (t, n) = batches[next_batch];
            time = time.max(t);
            let leaves: Vec<usize> = (next_leaf..next_leaf + n).collect();
            active.extend_from_slice(&leaves);
            events.push(Event::LeafInsertion { time: t, batch: next_batch, leaves });
            next_leaf += n;
            next_batch += 1;
            continue;
        }
        let p = active.len();
        if p < 2 {
            break;
        }
        let rate = rates.total(p);
        if !(rate > 0.0) {
            return Err(Error::Numerical(format!("total merger rate with {p} blocks is {rate}")));
        }
        let dt = Exp::new(rate).expect("positive rate").sample(rng);
        if next_batch < batches.len() && time + dt >= batches[next_batch].0 {
            // memorylessness: restart the clock at the insertion time
            time = batches[next_batch].0;
            continue;
        }
        time += dt;
        let k = sample_merger_size(rates.event_rates(p), rate, rng);
        for i in 0..k {
            let j = rng.random_range(i..p);
            active.swap(i, j);
        }
        let children: Vec<usize> = active.drain(..k).collect();
        let parent = nodes.len();
        for &c in &children {
            nodes[c].parent = Some(parent);
        }
        nodes.push(Node { time, parent: None, children: children.clone(), batch: None, kind: None });
        active.push(parent);
        events.push(Event::Merge { time, children, parent });
    }
    let root = active[0];
    Ok(Genealogy { nodes, events, root })
}

fn sample_merger_size<R: Rng + ?Sized>(event_rates: &[f64], total: f64, rng: &mut R) -> usize {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, r) in event_rates.iter().enumerate().skip(2) {
        acc += r;
        if u < acc {
            return k;
        }
    }
    event_rates.iter().rposition(|&r| r > 0.0).unwrap_or(2).max(2)
}

/// Root type from the stationary law, then Poisson(θ · length) mutations
/// per branch, propagated leafward.
pub fn assign_types<R: Rng + ?Sized>(g: &mut Genealogy, model: &MutationModel, rng: &mut R) {
    let root = g.root;
    g.nodes[root].kind = Some(model.sample_stationary(rng));
    // reverse of postorder visits parents before children
    for v in (0..g.nodes.len()).rev() {
        let Some(parent) = g.nodes[v].parent else { continue };
        let top = g.nodes[parent].time;
        let bottom = g.nodes[v].time;
        let mut kind = g.nodes[parent].kind.expect("parent typed before child");
        let mean = model.theta() * (top - bottom);
        if mean > 0.0 {
            let count = Poisson::new(mean).expect("positive mean").sample(rng) as usize;
            let mut times: Vec<f64> = (0..count).map(|_| top - rng.random::<f64>() * (top - bottom)).collect();
            // leafward order is decreasing age
            times.sort_by(|a, b| b.total_cmp(a));
            for t in times {
                let to = model.sample_jump(kind, rng);
                g.events.push(Event::Mutation { time: t, node: v, from: kind, to });
                kind = to;
            }
        }
        g.nodes[v].kind = Some(kind);
    }
}

pub fn simulate_serial_coalescent(
    measure: &LambdaMeasure,
    model: &MutationModel,
    schedule: &SamplingSchedule,
    seed: u64,
) -> Result<Genealogy> {
    let rates = measure.merger_rates(schedule.total().max(2));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = simulate_topology(&rates, schedule, &mut rng)?;
    assign_types(&mut g, model, &mut rng);
    Ok(g)
}

/// Haplotype counts per sampling time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesData {
    batches: Vec<(f64, BTreeMap<String, usize>)>,
}

impl TimeSeriesData {
    pub fn new(batches: Vec<(f64, BTreeMap<String, usize>)>) -> Result<Self> {
        if batches.is_empty() {
            return Err(Error::Data("dataset has no samples".into()));
        }
        let mut len = None;
        for (t, counts) in &batches {
            if counts.is_empty() || counts.values().any(|&c| c == 0) {
                return Err(Error::Data(format!("time {t} has an empty or zero count")));
            }
            for h in counts.keys() {
                match len {
                    None => len = Some(h.len()),
                    Some(l) if l != h.len() => {
                        return Err(Error::Data(format!("haplotype `{h}` has length {}, expected {l}", h.len())))
                    }
                    _ => {}
                }
            }
        }
        let data = Self { batches };
        SamplingSchedule::new(data.schedule_entries()).map_err(|e| Error::Data(e.to_string()))?;
        Ok(data)
    }

    fn schedule_entries(&self) -> Vec<(f64, usize)> {
        self.batches.iter().map(|(t, c)| (*t, c.values().sum())).collect()
    }

    pub fn schedule(&self) -> SamplingSchedule {
        SamplingSchedule::new(self.schedule_entries()).expect("validated on construction")
    }

    pub fn batches(&self) -> &[(f64, BTreeMap<String, usize>)] {
        &self.batches
    }

    pub fn total(&self) -> usize {
        self.batches.iter().map(|(_, c)| c.values().sum::<usize>()).sum()
    }

    /// Length of the haplotype strings.
    pub fn haplotype_len(&self) -> usize {
        self.batches[0].1.keys().next().map_or(0, String::len)
    }

    /// Parse `<time> <count> <haplotype>` records. Blank lines and `#`
    /// comments are skipped; records for one time must be contiguous and
    /// times nondecreasing.
    pub fn parse(text: &str) -> Result<Self> {
        let mut batches: Vec<(f64, BTreeMap<String, usize>)> = Vec::new();
        let mut len: Option<usize> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(err(format!("expected `<time> <count> <haplotype>`, found `{line}`")));
            }
            let t: f64 = fields[0].parse().map_err(|_| err(format!("bad time `{}`", fields[0])))?;
            let c: usize = fields[1].parse().map_err(|_| err(format!("bad count `{}`", fields[1])))?;
            let h = fields[2];
            if c == 0 {
                return Err(err("counts must be positive".into()));
            }
            if !t.is_finite() || t < 0.0 {
                return Err(err(format!("time must be finite and nonnegative, got {t}")));
            }
            match len {
                None => len = Some(h.len()),
                Some(l) if l != h.len() => {
                    return Err(Error::Data(format!(
                        "line {}: haplotype `{h}` has length {}, expected {l}",
                        i + 1,
                        h.len()
                    )))
                }
                _ => {}
            }
            match batches.last_mut() {
                Some((last, counts)) if *last == t => *counts.entry(h.to_string()).or_insert(0) += c,
                Some((last, _)) if *last > t => {
                    return Err(err(format!("time {t} follows later time {last}; times must be sorted")))
                }
                _ => batches.push((t, BTreeMap::from([(h.to_string(), c)]))),
            }
        }
        if batches.is_empty() {
            return Err(Error::Data("dataset is empty".into()));
        }
        Self::new(batches)
    }

    /// Tab-separated records, one line per (time, haplotype).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (t, counts) in &self.batches {
            for (h, c) in counts {
                let _ = writeln!(s, "{t:?}\t{c}\t{h}");
            }
        }
        s
    }
}

pub fn genealogy_to_data(g: &Genealogy, schedule: &SamplingSchedule, model: &MutationModel) -> Result<TimeSeriesData> {
    let mut batches = Vec::with_capacity(schedule.batches().len());
    for (b, &(t, n)) in schedule.batches().iter().enumerate() {
        let leaves = g.batch_leaves(b);
        if leaves.len() != n {
            return Err(Error::Data(format!("batch {b} has {} leaves, schedule expects {n}", leaves.len())));
        }
        let mut counts = BTreeMap::new();
        for v in leaves {
            if g.nodes[v].time != t {
                return Err(Error::Data(format!("leaf {v} sits at time {}, batch time is {t}", g.nodes[v].time)));
            }
            let kind = g.nodes[v].kind.ok_or_else(|| Error::Data(format!("leaf {v} is untyped")))?;
            *counts.entry(model.format_type(kind)).or_insert(0) += 1;
        }
        batches.push((t, counts));
    }
    TimeSeriesData::new(batches)
}

pub fn simulate_dataset(
    measure: &LambdaMeasure,
    model: &MutationModel,
    schedule: &SamplingSchedule,
    seed: u64,
) -> Result<TimeSeriesData> {
    let g = simulate_serial_coalescent(measure, model, schedule, seed)?;
    genealogy_to_data(&g, schedule, model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_tree_is_one_merger() {
        let g = simulate_serial_coalescent(
            &LambdaMeasure::star(),
            &MutationModel::parent_independent(0.0, 2).unwrap(),
            &SamplingSchedule::single(7).unwrap(),
            3,
        )
        .unwrap();
        assert_eq!(g.merge_sizes(), vec![7]);
        let root_type = g.root_type().unwrap();
        let data = genealogy_to_data(&g, &SamplingSchedule::single(7).unwrap(), &MutationModel::parent_independent(0.0, 2).unwrap()).unwrap();
        assert_eq!(data.batches()[0].1.get(&root_type.to_string()), Some(&7));
    }

    #[test]
    fn kingman_pairwise_and_terminates() {
        let schedule = SamplingSchedule::parse("0:5,0.5:4,2:3").unwrap();
        let model = MutationModel::binary_loci(1.0, 4).unwrap();
        let g = simulate_serial_coalescent(&LambdaMeasure::kingman(), &model, &schedule, 11).unwrap();
        assert!(g.merge_sizes().iter().all(|&k| k == 2));
        assert_eq!(g.merge_sizes().len(), 11);
        assert!(g.nodes.iter().filter(|n| n.parent.is_none()).count() == 1);
        for n in &g.nodes {
            if let Some(p) = n.parent {
                assert!(g.nodes[p].time >= n.time);
            }
        }
        let data = genealogy_to_data(&g, &schedule, &model).unwrap();
        assert_eq!(data.schedule(), schedule);
    }

    #[test]
    fn dataset_text_round_trip() {
        let schedule = SamplingSchedule::parse("0:20,0.5:20,1:20,1.5:20,2:20").unwrap();
        let model = MutationModel::binary_loci(0.1, 10).unwrap();
        let data = simulate_dataset(&LambdaMeasure::kingman(), &model, &schedule, 5).unwrap();
        assert_eq!(data.batches().len(), 5);
        assert!(data.batches().iter().all(|(_, c)| c.values().sum::<usize>() == 20));
        let text = data.to_text();
        assert_eq!(TimeSeriesData::parse(&text).unwrap(), data);
        assert_eq!(simulate_dataset(&LambdaMeasure::kingman(), &model, &schedule, 5).unwrap().to_text(), text);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(TimeSeriesData::parse(""), Err(Error::Data(_))));
        assert!(matches!(TimeSeriesData::parse("0 2 01\n0 x 10\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(TimeSeriesData::parse("0 2 01\n0 1 101\n"), Err(Error::Data(_))));
        assert!(matches!(TimeSeriesData::parse("0 2 01\n1 1 10\n0.5 1 10\n"), Err(Error::Parse { line: 3, .. })));
        assert!(TimeSeriesData::parse("0.5 2 01\n").is_err());
        assert!(SamplingSchedule::parse("0:2,0:3").is_err());
        assert!(SamplingSchedule::parse("0:0").is_err());
    }
}
