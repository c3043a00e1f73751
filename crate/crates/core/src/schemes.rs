//! Phased point-to-point plans for the SpMBV halo exchange.
//!
//! Four schemes are built from the same [`CommPattern`]:
//!
//! * **standard**: every owner sends directly to every rank that needs its rows.
//! * **2-step**: every rank sends the rows it owns that are needed anywhere on a
//!   remote node to the rank with the same local index there, which then
//!   redistributes on-node.
//! * **3-step**: rows bound for a remote node are gathered on-node to one rank,
//!   sent as one message per node pair, and redistributed on the receiving node.
//! * **nodal-optimal**: per source node, payloads at or below a byte threshold
//!   travel as one buffer per destination node while larger payloads are split
//!   by rows across several ranks; the resulting messages are handed out in
//!   descending size to the least-loaded rank on the node.
//!
//! All node-aware schemes send each `(row, destination node)` at most once
//! across the network. Within the final on-node phase, rows that a rank owns
//! and a same-node rank needs are sent directly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{CommPattern, Locality, RowPartition, Topology};

/// Default nodal-optimal split threshold in bytes.
pub const DEFAULT_THRESHOLD: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "standard")]
    Standard,
    #[serde(rename = "2step")]
    TwoStep,
    #[serde(rename = "3step")]
    ThreeStep,
    #[serde(rename = "optimal")]
    NodalOptimal,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Standard,
        Scheme::TwoStep,
        Scheme::ThreeStep,
        Scheme::NodalOptimal,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Scheme::Standard => "standard",
            Scheme::TwoStep => "2step",
            Scheme::ThreeStep => "3step",
            Scheme::NodalOptimal => "optimal",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|scheme| scheme.label() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseKind {
    Direct,
    Gather,
    InterNode,
    Redistribute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub src: usize,
    pub dst: usize,
    /// Global row indices carried, ascending; each row is `t` values wide.
    pub rows: Vec<usize>,
    pub bytes: usize,
    pub locality: Locality,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub kind: PhaseKind,
    pub messages: Vec<Message>,
}

/// A phase-ordered list of messages realizing one scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommPlan {
    pub scheme: Scheme,
    pub t: usize,
    /// Bytes per float.
    pub f: usize,
    pub p: usize,
    pub ppn: usize,
    pub phases: Vec<Phase>,
    #[serde(skip)]
    topology: Topology,
    #[serde(skip)]
    partition: RowPartition,
    #[serde(skip)]
    demands: Vec<Vec<usize>>,
}

impl CommPlan {
    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn partition(&self) -> &RowPartition {
        &self.partition
    }

    /// Remote rows each rank must end up holding, ascending.
    pub fn demands(&self, rank: usize) -> &[usize] {
        &self.demands[rank]
    }

    pub fn messages(&self) -> impl Iterator<Item = &Message> {
        self.phases.iter().flat_map(|p| p.messages.iter())
    }

    pub fn message_count(&self) -> usize {
        self.phases.iter().map(|p| p.messages.len()).sum()
    }

    pub fn inter_node_messages(&self) -> impl Iterator<Item = &Message> {
        self.messages().filter(|m| m.locality == Locality::OffNode)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    fn new(scheme: Scheme, pattern: &CommPattern, t: usize, f: usize, phases: Vec<Phase>) -> Self {
        let topology = pattern.topology();
        Self {
            scheme,
            t,
            f,
            p: topology.p(),
            ppn: topology.ppn(),
            phases,
            topology,
            partition: pattern.partition().clone(),
            demands: (0..pattern.n_ranks())
                .map(|r| pattern.required_rows(r))
                .collect(),
        }
    }
}

/// Turns grouped `(src, dst) -> rows` payloads into messages.
fn messages_from(
    groups: BTreeMap<(usize, usize), BTreeSet<usize>>,
    topo: Topology,
    t: usize,
    f: usize,
) -> Vec<Message> {
    groups
        .into_iter()
        .filter(|(_, rows)| !rows.is_empty())
        .map(|((src, dst), rows)| Message {
            src,
            dst,
            bytes: rows.len() * t * f,
            rows: rows.into_iter().collect(),
            locality: topo.locality(src, dst),
        })
        .collect()
}

fn check_width(t: usize, f: usize) -> Result<()> {
    if t == 0 || f == 0 {
        return Err(Error::InvalidArgument(format!(
            "block width and float size must be positive (t = {t}, f = {f})"
        )));
    }
    Ok(())
}

/// One message per `(owner, requiring rank)` pair.
pub fn plan_standard(pattern: &CommPattern, t: usize, f: usize) -> Result<CommPlan> {
    check_width(t, f)?;
    let topo = pattern.topology();
    let mut groups = BTreeMap::new();
    for dst in 0..pattern.n_ranks() {
        for req in pattern.recvs(dst) {
            groups.insert((req.source, dst), req.rows.iter().copied().collect());
        }
    }
    let messages = messages_from(groups, topo, t, f);
    let phases = if messages.is_empty() {
        Vec::new()
    } else {
        vec![Phase {
            kind: PhaseKind::Direct,
            messages,
        }]
    };
    Ok(CommPlan::new(Scheme::Standard, pattern, t, f, phases))
}

/// Rows owned by `rank` that are needed on each remote node, deduplicated.
fn rank_to_node_payloads(pattern: &CommPattern) -> BTreeMap<(usize, usize), BTreeSet<usize>> {
    let topo = pattern.topology();
    let mut out: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for dst in 0..pattern.n_ranks() {
        let dst_node = topo.node_of(dst);
        for req in pattern.recvs(dst) {
            if req.locality == Locality::OffNode {
                out.entry((req.source, dst_node))
                    .or_default()
                    .extend(req.rows.iter().copied());
            }
        }
    }
    out
}

/// Rows owned on each source node that are needed on each remote node.
fn node_to_node_payloads(pattern: &CommPattern) -> BTreeMap<(usize, usize), BTreeSet<usize>> {
    let topo = pattern.topology();
    let mut out: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for ((src, dst_node), rows) in rank_to_node_payloads(pattern) {
        out.entry((topo.node_of(src), dst_node))
            .or_default()
            .extend(rows);
    }
    out
}

/// On-node gather feeding a set of inter-node messages: every row the sender
/// does not own is shipped to it by its owner, once per `(owner, sender)`.
fn gather_phase(
    inter: &[Message],
    pattern: &CommPattern,
    t: usize,
    f: usize,
) -> Phase {
    let part = pattern.partition();
    let mut groups: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for m in inter {
        for &row in &m.rows {
            let owner = part.owner(row);
            if owner != m.src {
                groups.entry((owner, m.src)).or_default().insert(row);
            }
        }
    }
    Phase {
        kind: PhaseKind::Gather,
        messages: messages_from(groups, pattern.topology(), t, f),
    }
}

/// Final on-node phase: each rank gets every required row it does not yet
/// hold from the rank on its node that holds it.
fn redistribute_phase(earlier: &[&Phase], pattern: &CommPattern, t: usize, f: usize) -> Result<Phase> {
    let topo = pattern.topology();
    let part = pattern.partition();
    let mut held: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); pattern.n_ranks()];
    // off-node rows that have landed on each node, with the first rank holding them
    let mut landed: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); topo.n_nodes()];
    for phase in earlier {
        for m in &phase.messages {
            held[m.dst].extend(m.rows.iter().copied());
            let node = topo.node_of(m.dst);
            for &row in &m.rows {
                if !topo.same_node(part.owner(row), m.dst) {
                    landed[node].entry(row).or_insert(m.dst);
                }
            }
        }
    }
    let mut groups: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for (dst, already) in held.iter().enumerate() {
        let node = topo.node_of(dst);
        for row in pattern.required_rows(dst) {
            if already.contains(&row) {
                continue;
            }
            let owner = part.owner(row);
            let holder = if topo.same_node(owner, dst) {
                owner
            } else {
                *landed[node]
                    .get(&row)
                    .ok_or(Error::MissingRow { rank: dst, row })?
            };
            groups.entry((holder, dst)).or_default().insert(row);
        }
    }
    Ok(Phase {
        kind: PhaseKind::Redistribute,
        messages: messages_from(groups, topo, t, f),
    })
}

fn assemble(scheme: Scheme, pattern: &CommPattern, t: usize, f: usize, mut phases: Vec<Phase>) -> Result<CommPlan> {
    let refs: Vec<&Phase> = phases.iter().collect();
    let last = redistribute_phase(&refs, pattern, t, f)?;
    phases.push(last);
    phases.retain(|p| !p.messages.is_empty());
    Ok(CommPlan::new(scheme, pattern, t, f, phases))
}

/// Each rank sends its rows needed on a remote node straight to the rank with
/// the same local index there.
pub fn plan_two_step(pattern: &CommPattern, t: usize, f: usize) -> Result<CommPlan> {
    check_width(t, f)?;
    let topo = pattern.topology();
    let groups: BTreeMap<(usize, usize), BTreeSet<usize>> = rank_to_node_payloads(pattern)
        .into_iter()
        .map(|((src, node), rows)| ((src, topo.rank_at(node, topo.local_index(src))), rows))
        .collect();
    let inter = Phase {
        kind: PhaseKind::InterNode,
        messages: messages_from(groups, topo, t, f),
    };
    assemble(Scheme::TwoStep, pattern, t, f, vec![inter])
}

/// One message per node pair between the ranks with local index
/// `destination node mod ppn` on either side.
pub fn plan_three_step(pattern: &CommPattern, t: usize, f: usize) -> Result<CommPlan> {
    check_width(t, f)?;
    let topo = pattern.topology();
    let groups: BTreeMap<(usize, usize), BTreeSet<usize>> = node_to_node_payloads(pattern)
        .into_iter()
        .map(|((src_node, dst_node), rows)| {
            let local = dst_node % topo.ppn();
            ((topo.rank_at(src_node, local), topo.rank_at(dst_node, local)), rows)
        })
        .collect();
    let inter = messages_from(groups, topo, t, f);
    let gather = gather_phase(&inter, pattern, t, f);
    let inter = Phase {
        kind: PhaseKind::InterNode,
        messages: inter,
    };
    assemble(Scheme::ThreeStep, pattern, t, f, vec![gather, inter])
}

/// An inter-node buffer before it is given to a sending rank.
#[derive(Debug)]
struct Buffer {
    dst_node: usize,
    chunk: usize,
    rows: Vec<usize>,
}

/// Splits ascending `rows` into `parts` contiguous chunks, larger chunks first.
fn split_rows(rows: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let (base, extra) = (rows.len() / parts, rows.len() % parts);
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for k in 0..parts {
        let len = base + usize::from(k < extra);
        out.push(rows[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Nodal-optimal plan with splitting threshold `threshold` bytes.
///
/// Per source node the deduplicated payload for each destination node is one
/// buffer if it is at most `threshold` bytes. Larger payloads are split by rows
/// into `min(ceil(bytes / threshold), ranks on node)` chunks, largest payloads
/// first, while the node's message total stays within
/// `ranks on node * max(max destination nodes of any of its ranks, ppn)`; that
/// budget keeps the per-rank count inside `max(m_proc->node, ppn)`.
pub fn plan_nodal_optimal(
    pattern: &CommPattern,
    t: usize,
    f: usize,
    threshold: usize,
) -> Result<CommPlan> {
    check_width(t, f)?;
    if threshold == 0 {
        return Err(Error::InvalidArgument("threshold must be positive".into()));
    }
    let topo = pattern.topology();
    let row_bytes = t * f;

    let mut dest_nodes_per_rank = vec![0usize; pattern.n_ranks()];
    for &(src, _) in rank_to_node_payloads(pattern).keys() {
        dest_nodes_per_rank[src] += 1;
    }

    let mut per_source: BTreeMap<usize, Vec<(usize, Vec<usize>)>> = BTreeMap::new();
    for ((src_node, dst_node), rows) in node_to_node_payloads(pattern) {
        per_source
            .entry(src_node)
            .or_default()
            .push((dst_node, rows.into_iter().collect()));
    }

    let mut inter = Vec::new();
    for (src_node, payloads) in per_source {
        let ranks = topo.node_ranks(src_node);
        let size = ranks.len();
        let max_dest = ranks.clone().map(|r| dest_nodes_per_rank[r]).max().unwrap_or(0);
        let budget = size * max_dest.max(topo.ppn());
        let mut spare = budget.saturating_sub(payloads.len());

        // chunk counts, granted largest payload first
        let mut order: Vec<usize> = (0..payloads.len()).collect();
        order.sort_by_key(|&k| (std::cmp::Reverse(payloads[k].1.len()), payloads[k].0));
        let mut chunks = vec![1usize; payloads.len()];
        for k in order {
            let bytes = payloads[k].1.len() * row_bytes;
            if bytes <= threshold {
                continue;
            }
            let wanted = bytes
                .div_ceil(threshold)
                .min(size)
                .min(payloads[k].1.len());
            let extra = (wanted - 1).min(spare);
            spare -= extra;
            chunks[k] += extra;
        }

        let mut buffers: Vec<Buffer> = payloads
            .iter()
            .zip(&chunks)
            .flat_map(|((dst_node, rows), &parts)| {
                split_rows(rows, parts)
                    .into_iter()
                    .enumerate()
                    .map(move |(chunk, rows)| Buffer {
                        dst_node: *dst_node,
                        chunk,
                        rows,
                    })
            })
            .collect();
        buffers.sort_by_key(|b| (std::cmp::Reverse(b.rows.len()), b.dst_node, b.chunk));

        // first available rank: fewest buffers so far, preferring the 3-step
        // partner, then lowest local index
        let mut load = vec![0usize; size];
        for buffer in buffers {
            let paired = (buffer.dst_node % topo.ppn()) % size;
            let local = (0..size)
                .min_by_key(|&l| (load[l], l != paired, l))
                .expect("node has at least one rank");
            load[local] += 1;
            let src = ranks.start + local;
            let dst = topo.rank_at(buffer.dst_node, local);
            inter.push(Message {
                src,
                dst,
                bytes: buffer.rows.len() * row_bytes,
                rows: buffer.rows,
                locality: Locality::OffNode,
            });
        }
    }
    inter.sort_by(|a, b| (a.src, a.dst, &a.rows).cmp(&(b.src, b.dst, &b.rows)));

    let gather = gather_phase(&inter, pattern, t, f);
    let inter = Phase {
        kind: PhaseKind::InterNode,
        messages: inter,
    };
    assemble(Scheme::NodalOptimal, pattern, t, f, vec![gather, inter])
}

pub fn build_plan(
    scheme: Scheme,
    pattern: &CommPattern,
    t: usize,
    f: usize,
    threshold: usize,
) -> Result<CommPlan> {
    match scheme {
        Scheme::Standard => plan_standard(pattern, t, f),
        Scheme::TwoStep => plan_two_step(pattern, t, f),
        Scheme::ThreeStep => plan_three_step(pattern, t, f),
        Scheme::NodalOptimal => plan_nodal_optimal(pattern, t, f, threshold),
    }
}

/// Message and byte maxima of a plan. Byte fields include the block width
/// `t` the plan was built with; [`CommStats::unit_width`] divides it out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CommStats {
    /// Block width the byte fields refer to.
    pub t: usize,
    /// Max messages sent by a rank, any locality.
    pub m: usize,
    /// Max bytes sent by a rank, any locality.
    pub s: usize,
    /// Max bytes a rank sends off-node.
    pub s_proc: usize,
    /// Max bytes injected into the network by a node.
    pub s_node: usize,
    /// Max distinct destination nodes of a rank.
    pub m_proc_to_node: usize,
    /// Max messages between an ordered node pair.
    pub m_node_to_node: usize,
    /// Max bytes between an ordered node pair.
    pub s_node_to_node: usize,
    /// Max inter-node messages injected by a rank.
    pub n_opt: usize,
    pub total_internode_bytes: usize,
    pub total_onnode_bytes: usize,
    pub total_messages: usize,
    pub total_internode_messages: usize,
}

impl CommStats {
    /// Same counts with every byte field expressed for a single vector (`t = 1`).
    pub fn unit_width(&self) -> Self {
        let t = self.t.max(1);
        Self {
            t: 1,
            s: self.s / t,
            s_proc: self.s_proc / t,
            s_node: self.s_node / t,
            s_node_to_node: self.s_node_to_node / t,
            total_internode_bytes: self.total_internode_bytes / t,
            total_onnode_bytes: self.total_onnode_bytes / t,
            ..*self
        }
    }
}

/// Accumulates [`CommStats`] from a stream of `(src, dst, bytes)` messages.
#[derive(Debug, Clone)]
pub struct StatsAccumulator {
    topology: Topology,
    t: usize,
    sent_msgs: Vec<usize>,
    sent_bytes: Vec<usize>,
    off_msgs: Vec<usize>,
    off_bytes: Vec<usize>,
    dest_nodes: Vec<BTreeSet<usize>>,
    node_bytes: Vec<usize>,
    pair: BTreeMap<(usize, usize), (usize, usize)>,
    total_on: usize,
    total_messages: usize,
}

impl StatsAccumulator {
    pub fn new(topology: Topology, t: usize) -> Self {
        let p = topology.p();
        Self {
            topology,
            t,
            sent_msgs: vec![0; p],
            sent_bytes: vec![0; p],
            off_msgs: vec![0; p],
            off_bytes: vec![0; p],
            dest_nodes: vec![BTreeSet::new(); p],
            node_bytes: vec![0; topology.n_nodes()],
            pair: BTreeMap::new(),
            total_on: 0,
            total_messages: 0,
        }
    }

    pub fn record(&mut self, src: usize, dst: usize, bytes: usize) {
        let topo = self.topology;
        self.total_messages += 1;
        self.sent_msgs[src] += 1;
        self.sent_bytes[src] += bytes;
        if topo.same_node(src, dst) {
            self.total_on += bytes;
            return;
        }
        let (sn, dn) = (topo.node_of(src), topo.node_of(dst));
        self.off_msgs[src] += 1;
        self.off_bytes[src] += bytes;
        self.dest_nodes[src].insert(dn);
        self.node_bytes[sn] += bytes;
        let entry = self.pair.entry((sn, dn)).or_default();
        entry.0 += 1;
        entry.1 += bytes;
    }

    pub fn finish(&self) -> CommStats {
        let max = |v: &[usize]| v.iter().copied().max().unwrap_or(0);
        CommStats {
            t: self.t,
            m: max(&self.sent_msgs),
            s: max(&self.sent_bytes),
            s_proc: max(&self.off_bytes),
            s_node: max(&self.node_bytes),
            m_proc_to_node: self.dest_nodes.iter().map(BTreeSet::len).max().unwrap_or(0),
            m_node_to_node: self.pair.values().map(|v| v.0).max().unwrap_or(0),
            s_node_to_node: self.pair.values().map(|v| v.1).max().unwrap_or(0),
            n_opt: max(&self.off_msgs),
            total_internode_bytes: self.node_bytes.iter().sum(),
            total_onnode_bytes: self.total_on,
            total_messages: self.total_messages,
            total_internode_messages: self.off_msgs.iter().sum(),
        }
    }
}

pub fn plan_stats(plan: &CommPlan) -> CommStats {
    let mut acc = StatsAccumulator::new(plan.topology(), plan.t);
    for m in plan.messages() {
        acc.record(m.src, m.dst, m.bytes);
    }
    acc.finish()
}
