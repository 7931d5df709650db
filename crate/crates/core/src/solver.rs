//! Nodal analysis of the crossbar's resistive network.
//!
//! The 15x15 array is modeled as 450 internal nodes: every device (i,j)
//! bridges a row-line node R(i,j) and a column-line node C(i,j); consecutive
//! nodes along a line are joined by the per-segment line resistance. Row
//! ports attach at the left edge and column ports at the bottom edge through
//! a contact resistance plus an optional per-line lead resistance. Every
//! port always has a defined boundary condition (driven or grounded), so the
//! reduced system is symmetric positive definite and is factorized by a
//! banded Cholesky decomposition.
//!
//! Zero-resistance segments and contacts are contracted away with a
//! union-find pass instead of producing near-singular matrices: a line with
//! r_segment = 0 collapses to one supernode, and a port with zero contact
//! resistance pins its line end directly to the drive voltage. In the fully
//! ideal case every node is pinned and a solve is plain arithmetic.
//!
//! Programming an array issues thousands of solves that differ from one
//! another by a single device state. The engine therefore keeps a baseline
//! factorization keyed by the device-state bitmap, caches per-port unit
//! solutions (solutions are linear in the port drives), and answers
//! single-device deviations with a Sherman-Morrison rank-1 correction
//! instead of refactorizing. Any larger state change rebases the cache.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROWS: usize = 15;
pub const COLS: usize = 15;
pub const N_DEVICES: usize = ROWS * COLS;
pub const N_PORTS: usize = ROWS + COLS;
pub const N_NODES: usize = 2 * ROWS * COLS;

/// How far the cached baseline may drift (in toggled devices) before the
/// engine refactors instead of applying a low-rank correction.
const MAX_RANK: usize = 16;

/// Gaussian elimination with partial pivoting for the small dense systems
/// of the low-rank correction; `a` is k×k row-major, `b` the rhs, both
/// clobbered, solution left in `b`.
fn solve_small(a: &mut [f64], b: &mut [f64], k: usize) -> Result<()> {
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&r1, &r2| {
                a[r1 * k + col]
                    .abs()
                    .partial_cmp(&a[r2 * k + col].abs())
                    .expect("finite entries")
            })
            .expect("k >= 1");
        if a[pivot * k + col].abs() < 1e-300 {
            return Err(Error::Solver("singular low-rank correction".into()));
        }
        if pivot != col {
            for j in 0..k {
                a.swap(col * k + j, pivot * k + j);
            }
            b.swap(col, pivot);
        }
        let inv = 1.0 / a[col * k + col];
        for row in col + 1..k {
            let f = a[row * k + col] * inv;
            if f == 0.0 {
                continue;
            }
            for j in col + 1..k {
                a[row * k + j] -= f * a[col * k + j];
            }
            b[row] -= f * b[col];
        }
    }
    for row in (0..k).rev() {
        let mut acc = b[row];
        for j in row + 1..k {
            acc -= a[row * k + j] * b[j];
        }
        b[row] = acc / a[row * k + row];
    }
    Ok(())
}

/// Boundary condition of one port. Grounding is driving at 0 V.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PortDrive {
    Voltage(f64),
    Ground,
}

impl PortDrive {
    pub fn volts(self) -> f64 {
        match self {
            PortDrive::Voltage(v) => v,
            PortDrive::Ground => 0.0,
        }
    }
}

/// Index of the row port of line `i` (0-based).
pub fn row_port(i: usize) -> usize {
    i
}

/// Index of the column port of line `j` (0-based).
pub fn col_port(j: usize) -> usize {
    ROWS + j
}

/// Index of row-line node (i, j) in the node-voltage vector.
pub fn row_node(i: usize, j: usize) -> usize {
    2 * (i * COLS + j)
}

/// Index of column-line node (i, j) in the node-voltage vector.
pub fn col_node(i: usize, j: usize) -> usize {
    2 * (i * COLS + j) + 1
}

/// Full solution of one network solve: voltages of all 450 internal nodes
/// plus the current flowing from every port into the array (uA, positive
/// into the network).
#[derive(Debug, Clone)]
pub struct NetworkSolve {
    pub node_voltages: Vec<f64>,
    pub port_currents: [f64; N_PORTS],
}

/// Electrical geometry of the array interconnect. Resistances in ohms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub r_segment_ohm: f64,
    pub r_contact_ohm: f64,
    pub lead_profile: LeadProfile,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig {
            r_segment_ohm: 20.0,
            r_contact_ohm: 10.0,
            lead_profile: LeadProfile::Triangular { peak_ohm: 3000.0 },
        }
    }
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_segment_ohm < 0.0 || self.r_contact_ohm < 0.0 {
            return Err(Error::Config("line resistances must be >= 0".into()));
        }
        self.lead_profile.validate()
    }

    /// A copy with every parasitic zeroed (ideal interconnect).
    pub fn ideal() -> Self {
        ArrayConfig {
            r_segment_ohm: 0.0,
            r_contact_ohm: 0.0,
            lead_profile: LeadProfile::None,
        }
    }

    pub fn lead_row(&self, i: usize) -> f64 {
        self.lead_profile.lead_ohm(i)
    }

    pub fn lead_col(&self, j: usize) -> f64 {
        self.lead_profile.lead_ohm(j)
    }
}

/// Per-line extra lead resistance, standing in for the unequal routing
/// lengths of the physical array. The default triangular profile peaks at
/// the center line and falls to zero at the edge lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LeadProfile {
    #[default]
    None,
    Triangular {
        peak_ohm: f64,
    },
    PerLine {
        row_ohm: Vec<f64>,
        col_ohm: Vec<f64>,
    },
}

impl LeadProfile {
    fn validate(&self) -> Result<()> {
        match self {
            LeadProfile::None => Ok(()),
            LeadProfile::Triangular { peak_ohm } => {
                if *peak_ohm < 0.0 {
                    Err(Error::Config("lead peak_ohm must be >= 0".into()))
                } else {
                    Ok(())
                }
            }
            LeadProfile::PerLine { row_ohm, col_ohm } => {
                if row_ohm.len() != ROWS || col_ohm.len() != COLS {
                    return Err(Error::Config(format!(
                        "per-line lead profile needs {ROWS} row and {COLS} column entries"
                    )));
                }
                if row_ohm.iter().chain(col_ohm).any(|&r| r < 0.0) {
                    return Err(Error::Config("lead resistances must be >= 0".into()));
                }
                Ok(())
            }
        }
    }

    fn lead_ohm(&self, line: usize) -> f64 {
        match self {
            LeadProfile::None => 0.0,
            LeadProfile::Triangular { peak_ohm } => {
                let center = (ROWS - 1) as f64 / 2.0;
                let dist = (line as f64 - center).abs() / center;
                peak_ohm * (1.0 - dist)
            }
            LeadProfile::PerLine { row_ohm, .. } => row_ohm[line],
        }
    }

    fn lead_col_ohm(&self, line: usize) -> f64 {
        match self {
            LeadProfile::PerLine { col_ohm, .. } => col_ohm[line],
            other => other.lead_ohm(line),
        }
    }
}

fn ohm_to_us(r_ohm: f64) -> f64 {
    1e6 / r_ohm
}

/// Compact bitmap of the 225 device states (bit set = on).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StateBits(pub [u64; 4]);

impl StateBits {
    pub fn set(&mut self, d: usize, on: bool) {
        let (w, b) = (d / 64, d % 64);
        if on {
            self.0[w] |= 1 << b;
        } else {
            self.0[w] &= !(1 << b);
        }
    }

    /// Indices of devices whose state differs, early-exiting once the
    /// collection would overflow the rank budget.
    fn diff(&self, other: &StateBits, cap: usize) -> DiffSummary {
        let mut devices = Vec::new();
        let mut count = 0usize;
        for w in 0..4 {
            let mut x = self.0[w] ^ other.0[w];
            count += x.count_ones() as usize;
            while x != 0 && devices.len() < cap {
                let b = x.trailing_zeros() as usize;
                devices.push(w * 64 + b);
                x &= x - 1;
            }
        }
        DiffSummary { count, devices }
    }
}

struct DiffSummary {
    count: usize,
    devices: Vec<usize>,
}

/// One endpoint of an edge after contraction: either a reduced unknown or a
/// node pinned to a port's drive voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
enum NodeRef {
    Unknown(u32),
    Pinned(u8),
}

/// Constant-conductance edge between an unknown and a pinned drive.
#[derive(Debug, Clone, Copy)]
struct PinEdge {
    unknown: u32,
    port: u8,
    g: f64,
}

/// Constant-conductance edge between two unknowns.
#[derive(Debug, Clone, Copy)]
struct InnerEdge {
    a: u32,
    b: u32,
    g: f64,
}

/// Where a device landed after contraction.
#[derive(Debug, Clone, Copy)]
enum DevSlot {
    Inner { a: u32, b: u32 },
    Half { unknown: u32, port: u8 },
    Bridged { pa: u8, pb: u8 },
}

struct UnionFind(Vec<u32>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n as u32).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] as usize != r {
            r = self.0[r] as usize;
        }
        let mut c = x;
        while self.0[c] as usize != c {
            let next = self.0[c] as usize;
            self.0[c] = r as u32;
            c = next;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Attach the larger root under the smaller to keep compacted
            // indices in first-appearance order.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo as u32;
        }
    }
}

/// Contracted, ordered description of the network. Fixed for the life of a
/// crossbar: only device conductance VALUES change between solves.
pub struct Network {
    n_unknown: usize,
    bandwidth: usize,
    /// node -> reduced reference, for expanding solutions back to 450 nodes.
    node_map: Vec<NodeRef>,
    inner_edges: Vec<InnerEdge>,
    pin_edges: Vec<PinEdge>,
    dev_slots: Vec<DevSlot>,
    /// Pin edges grouped by port for current extraction.
    port_pin_edges: Vec<Vec<usize>>,
    /// Caching works when no internal node is pinned and devices never
    /// touch a pinned node (all ports attach through finite resistance).
    cache_capable: bool,
}

impl Network {
    pub fn build(cfg: &ArrayConfig) -> Result<Self> {
        cfg.validate()?;
        let mut uf = UnionFind::new(N_NODES);
        if cfg.r_segment_ohm == 0.0 {
            for i in 0..ROWS {
                for j in 1..COLS {
                    uf.union(row_node(i, 0), row_node(i, j));
                }
            }
            for j in 0..COLS {
                for i in 1..ROWS {
                    uf.union(col_node(0, j), col_node(i, j));
                }
            }
        }

        // Pin line ends whose total port resistance is zero.
        let mut pinned_port: Vec<Option<u8>> = vec![None; N_NODES];
        let mut port_resistance = [0.0f64; N_PORTS];
        for i in 0..ROWS {
            port_resistance[row_port(i)] = cfg.r_contact_ohm + cfg.lead_profile.lead_ohm(i);
        }
        for j in 0..COLS {
            port_resistance[col_port(j)] =
                cfg.r_contact_ohm + cfg.lead_profile.lead_col_ohm(j);
        }
        for i in 0..ROWS {
            if port_resistance[row_port(i)] == 0.0 {
                let root = uf.find(row_node(i, 0));
                pinned_port[root] = Some(row_port(i) as u8);
            }
        }
        for j in 0..COLS {
            if port_resistance[col_port(j)] == 0.0 {
                let root = uf.find(col_node(ROWS - 1, j));
                if pinned_port[root].is_some() {
                    return Err(Error::Solver(
                        "two zero-resistance ports pin the same electrical node".into(),
                    ));
                }
                pinned_port[root] = Some(col_port(j) as u8);
            }
        }

        // Assign compact unknown indices in node order.
        let mut unknown_of_root: Vec<Option<u32>> = vec![None; N_NODES];
        let mut n_unknown = 0u32;
        let mut node_map = Vec::with_capacity(N_NODES);
        for node in 0..N_NODES {
            let root = uf.find(node);
            let r = if let Some(p) = pinned_port[root] {
                NodeRef::Pinned(p)
            } else {
                let idx = *unknown_of_root[root].get_or_insert_with(|| {
                    let idx = n_unknown;
                    n_unknown += 1;
                    idx
                });
                NodeRef::Unknown(idx)
            };
            node_map.push(r);
        }

        let mut inner_edges = Vec::new();
        let mut pin_edges = Vec::new();
        let mut push_edge = |a: NodeRef, b: NodeRef, g: f64| -> Result<()> {
            match (a, b) {
                (NodeRef::Unknown(ua), NodeRef::Unknown(ub)) => {
                    if ua != ub {
                        inner_edges.push(InnerEdge { a: ua, b: ub, g });
                    }
                    Ok(())
                }
                (NodeRef::Unknown(u), NodeRef::Pinned(p))
                | (NodeRef::Pinned(p), NodeRef::Unknown(u)) => {
                    pin_edges.push(PinEdge { unknown: u, port: p, g });
                    Ok(())
                }
                (NodeRef::Pinned(_), NodeRef::Pinned(_)) => Err(Error::Solver(
                    "resistive segment directly between two pinned nodes".into(),
                )),
            }
        };

        if cfg.r_segment_ohm > 0.0 {
            let g_seg = ohm_to_us(cfg.r_segment_ohm);
            for i in 0..ROWS {
                for j in 0..COLS - 1 {
                    push_edge(node_map[row_node(i, j)], node_map[row_node(i, j + 1)], g_seg)?;
                }
            }
            for j in 0..COLS {
                for i in 0..ROWS - 1 {
                    push_edge(node_map[col_node(i, j)], node_map[col_node(i + 1, j)], g_seg)?;
                }
            }
        }
        for i in 0..ROWS {
            let r = port_resistance[row_port(i)];
            if r > 0.0 {
                match node_map[row_node(i, 0)] {
                    NodeRef::Unknown(u) => pin_edges.push(PinEdge {
                        unknown: u,
                        port: row_port(i) as u8,
                        g: ohm_to_us(r),
                    }),
                    NodeRef::Pinned(_) => {
                        return Err(Error::Solver(
                            "row line end pinned by a foreign port".into(),
                        ))
                    }
                }
            }
        }
        for j in 0..COLS {
            let r = port_resistance[col_port(j)];
            if r > 0.0 {
                match node_map[col_node(ROWS - 1, j)] {
                    NodeRef::Unknown(u) => pin_edges.push(PinEdge {
                        unknown: u,
                        port: col_port(j) as u8,
                        g: ohm_to_us(r),
                    }),
                    NodeRef::Pinned(_) => {
                        return Err(Error::Solver(
                            "column line end pinned by a foreign port".into(),
                        ))
                    }
                }
            }
        }

        let mut dev_slots = Vec::with_capacity(N_DEVICES);
        for i in 0..ROWS {
            for j in 0..COLS {
                let slot = match (node_map[row_node(i, j)], node_map[col_node(i, j)]) {
                    (NodeRef::Unknown(a), NodeRef::Unknown(b)) => DevSlot::Inner { a, b },
                    (NodeRef::Unknown(u), NodeRef::Pinned(p))
                    | (NodeRef::Pinned(p), NodeRef::Unknown(u)) => DevSlot::Half { unknown: u, port: p },
                    (NodeRef::Pinned(pa), NodeRef::Pinned(pb)) => DevSlot::Bridged { pa, pb },
                };
                dev_slots.push(slot);
            }
        }

        let mut bandwidth = 0usize;
        for e in &inner_edges {
            bandwidth = bandwidth.max(e.a.abs_diff(e.b) as usize);
        }
        for s in &dev_slots {
            if let DevSlot::Inner { a, b } = s {
                bandwidth = bandwidth.max(a.abs_diff(*b) as usize);
            }
        }

        let mut port_pin_edges = vec![Vec::new(); N_PORTS];
        for (k, e) in pin_edges.iter().enumerate() {
            port_pin_edges[e.port as usize].push(k);
        }

        let cache_capable = dev_slots
            .iter()
            .all(|s| matches!(s, DevSlot::Inner { .. }))
            && pinned_port.iter().all(|p| p.is_none());

        Ok(Network {
            n_unknown: n_unknown as usize,
            bandwidth,
            node_map,
            inner_edges,
            pin_edges,
            dev_slots,
            port_pin_edges,
            cache_capable,
        })
    }

    pub fn n_unknown(&self) -> usize {
        self.n_unknown
    }

    fn stride(&self) -> usize {
        self.bandwidth + 1
    }

    /// Assemble the band matrix for the given device conductances.
    fn assemble(&self, g_dev: &[f64; N_DEVICES], out: &mut [f64]) {
        out.fill(0.0);
        let s = self.stride();
        let mut add = |a: u32, b: u32, g: f64| {
            let (a, b) = (a as usize, b as usize);
            out[a * s] += g;
            out[b * s] += g;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            out[hi * s + (hi - lo)] -= g;
        };
        for e in &self.inner_edges {
            add(e.a, e.b, e.g);
        }
        for (d, slot) in self.dev_slots.iter().enumerate() {
            if let DevSlot::Inner { a, b } = slot {
                add(*a, *b, g_dev[d]);
            }
        }
        for e in &self.pin_edges {
            out[e.unknown as usize * s] += e.g;
        }
        for (d, slot) in self.dev_slots.iter().enumerate() {
            if let DevSlot::Half { unknown, .. } = slot {
                out[*unknown as usize * s] += g_dev[d];
            }
        }
    }

    /// Right-hand side for the given drives (uses device conductances only
    /// through device-to-pinned-node edges, which exist only in contracted
    /// geometries).
    fn assemble_rhs(&self, g_dev: &[f64; N_DEVICES], volts: &[f64; N_PORTS], out: &mut [f64]) {
        out.fill(0.0);
        for e in &self.pin_edges {
            out[e.unknown as usize] += e.g * volts[e.port as usize];
        }
        for (d, slot) in self.dev_slots.iter().enumerate() {
            if let DevSlot::Half { unknown, port } = slot {
                out[*unknown as usize] += g_dev[d] * volts[*port as usize];
            }
        }
    }

    /// Port currents for solution `v` under `volts`.
    fn port_currents(
        &self,
        g_dev: &[f64; N_DEVICES],
        volts: &[f64; N_PORTS],
        v: &[f64],
    ) -> [f64; N_PORTS] {
        let mut currents = [0.0; N_PORTS];
        for e in &self.pin_edges {
            currents[e.port as usize] += e.g * (volts[e.port as usize] - v[e.unknown as usize]);
        }
        for (d, slot) in self.dev_slots.iter().enumerate() {
            match slot {
                DevSlot::Half { unknown, port } => {
                    currents[*port as usize] +=
                        g_dev[d] * (volts[*port as usize] - v[*unknown as usize]);
                }
                DevSlot::Bridged { pa, pb } => {
                    let dv = volts[*pa as usize] - volts[*pb as usize];
                    currents[*pa as usize] += g_dev[d] * dv;
                    currents[*pb as usize] -= g_dev[d] * dv;
                }
                DevSlot::Inner { .. } => {}
            }
        }
        currents
    }

    /// Voltage of every internal node given reduced solution `v`.
    fn expand(&self, volts: &[f64; N_PORTS], v: &[f64]) -> Vec<f64> {
        self.node_map
            .iter()
            .map(|r| match r {
                NodeRef::Unknown(u) => v[*u as usize],
                NodeRef::Pinned(p) => volts[*p as usize],
            })
            .collect()
    }

    /// Voltage across device `d` (column node minus row node), given the
    /// expanded node voltages.
    pub fn device_voltage(node_voltages: &[f64], i: usize, j: usize) -> f64 {
        node_voltages[col_node(i, j)] - node_voltages[row_node(i, j)]
    }
}

/// Lower-triangular banded Cholesky factor, row-major band storage:
/// entry (i, i-d) lives at l[i*(bw+1) + d].
struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    fn factor(band: &[f64], n: usize, bw: usize) -> Result<Self> {
        let s = bw + 1;
        let mut l = band.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let lo2 = lo.max(j.saturating_sub(bw));
                let mut sum = l[i * s + (i - j)];
                for k in lo2..j {
                    sum -= l[i * s + (i - k)] * l[j * s + (j - k)];
                }
                if j < i {
                    l[i * s + (i - j)] = sum / l[j * s];
                } else {
                    if sum <= 0.0 {
                        return Err(Error::Solver(format!(
                            "non-positive pivot at node {i}: network is singular"
                        )));
                    }
                    l[i * s] = sum.sqrt();
                }
            }
        }
        Ok(BandCholesky { n, bw, l })
    }

    /// Solve A x = b in place.
    fn solve(&self, b: &mut [f64]) {
        let s = self.bw + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let mut sum = b[i];
            for k in lo..i {
                sum -= self.l[i * s + (i - k)] * b[k];
            }
            b[i] = sum / self.l[i * s];
        }
        for j in (0..self.n).rev() {
            let hi = (j + self.bw).min(self.n - 1);
            let mut sum = b[j];
            for i in j + 1..=hi {
                sum -= self.l[i * s + (i - j)] * b[i];
            }
            b[j] = sum / self.l[j * s];
        }
    }
}

/// Per-port unit solution: reduced voltages and port currents when this
/// port is driven at exactly 1 V and every other port is grounded.
struct UnitSolution {
    v: Vec<f64>,
    currents: [f64; N_PORTS],
}

/// Cached rank-1 data for toggling one device away from the baseline:
/// w = A_baseline^-1 (e_a - e_b) and the port-current response to w.
struct ToggleSolution {
    w: Vec<f64>,
    w_a_minus_b: f64,
    currents: [f64; N_PORTS],
}

struct Baseline {
    bits: StateBits,
    g_base: [f64; N_DEVICES],
    chol: BandCholesky,
    units: Vec<Option<Box<UnitSolution>>>,
    toggles: Vec<Option<Box<ToggleSolution>>>,
}

/// Stateful solver bound to one crossbar geometry.
pub struct SolveEngine {
    network: Network,
    scratch_band: Vec<f64>,
    baseline: Option<Baseline>,
}

impl SolveEngine {
    pub fn new(cfg: &ArrayConfig) -> Result<Self> {
        let network = Network::build(cfg)?;
        let band_len = network.n_unknown * network.stride();
        Ok(SolveEngine {
            network,
            scratch_band: vec![0.0; band_len],
            baseline: None,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    /// One-shot solve: assemble, factor, solve. Valid for every geometry;
    /// used for nonlinear fixed-point iterations and uncached paths.
    pub fn solve_direct(
        &mut self,
        g_dev: &[f64; N_DEVICES],
        volts: &[f64; N_PORTS],
    ) -> Result<NetworkSolve> {
        let n = self.network.n_unknown;
        let mut v = vec![0.0; n];
        if n > 0 {
            self.network.assemble(g_dev, &mut self.scratch_band);
            let chol = BandCholesky::factor(&self.scratch_band, n, self.network.bandwidth)?;
            self.network.assemble_rhs(g_dev, volts, &mut v);
            chol.solve(&mut v);
        }
        Ok(NetworkSolve {
            port_currents: self.network.port_currents(g_dev, volts, &v),
            node_voltages: self.network.expand(volts, &v),
        })
    }

    /// Cached solve for linear devices. `bits` is the current device-state
    /// bitmap; `g_dev` must be the zero-bias conductances for that state.
    /// Falls back to the direct path on geometries that cannot cache.
    pub fn solve(
        &mut self,
        g_dev: &[f64; N_DEVICES],
        bits: &StateBits,
        volts: &[f64; N_PORTS],
    ) -> Result<NetworkSolve> {
        if !self.network.cache_capable || self.network.n_unknown == 0 {
            return self.solve_direct(g_dev, volts);
        }

        let rebase = match &self.baseline {
            Some(b) => b.bits.diff(bits, MAX_RANK).count > MAX_RANK,
            None => true,
        };
        if rebase {
            self.network.assemble(g_dev, &mut self.scratch_band);
            let chol = BandCholesky::factor(
                &self.scratch_band,
                self.network.n_unknown,
                self.network.bandwidth,
            )?;
            self.baseline = Some(Baseline {
                bits: *bits,
                g_base: *g_dev,
                chol,
                units: (0..N_PORTS).map(|_| None).collect(),
                toggles: (0..N_DEVICES).map(|_| None).collect(),
            });
        }

        let diff = self
            .baseline
            .as_ref()
            .unwrap()
            .bits
            .diff(bits, MAX_RANK);
        let n = self.network.n_unknown;

        // Baseline response: superpose cached unit solutions of the driven
        // ports (solutions are linear in the drive vector).
        let mut v = vec![0.0; n];
        let mut currents = [0.0; N_PORTS];
        for p in 0..N_PORTS {
            if volts[p] == 0.0 {
                continue;
            }
            self.ensure_unit(p)?;
            let unit = self.baseline.as_ref().unwrap().units[p].as_ref().unwrap();
            for (vi, ui) in v.iter_mut().zip(&unit.v) {
                *vi += volts[p] * ui;
            }
            for q in 0..N_PORTS {
                currents[q] += volts[p] * unit.currents[q];
            }
        }

        match diff.devices.len() {
            0 => {}
            1 => {
                // Sherman-Morrison correction for the single toggled device.
                let d = diff.devices[0];
                self.ensure_toggle(d)?;
                let baseline = self.baseline.as_ref().unwrap();
                let tog = baseline.toggles[d].as_ref().unwrap();
                let DevSlot::Inner { a, b } = self.network.dev_slots[d] else {
                    unreachable!("cache_capable guarantees inner device slots");
                };
                let delta_g = g_dev[d] - baseline.g_base[d];
                let u_dot_v = v[a as usize] - v[b as usize];
                let denom = 1.0 + delta_g * tog.w_a_minus_b;
                if denom.abs() < 1e-300 {
                    return Err(Error::Solver("singular rank-1 update".into()));
                }
                let beta = delta_g * u_dot_v / denom;
                for (vi, wi) in v.iter_mut().zip(&tog.w) {
                    *vi -= beta * wi;
                }
                for q in 0..N_PORTS {
                    currents[q] += beta * tog.currents[q];
                }
            }
            k => {
                // Woodbury correction for k toggled devices: with
                // A = A0 + U diag(δ) Uᵀ and W = A0⁻¹U (cached columns),
                // x = x0 − W c where (diag(δ)⁻¹ + UᵀW) c = Uᵀ x0.
                for &d in &diff.devices {
                    self.ensure_toggle(d)?;
                }
                let baseline = self.baseline.as_ref().unwrap();
                let mut s = vec![0.0; k * k];
                let mut y = vec![0.0; k];
                for (r, &d) in diff.devices.iter().enumerate() {
                    let DevSlot::Inner { a, b } = self.network.dev_slots[d] else {
                        unreachable!("cache_capable guarantees inner device slots");
                    };
                    let (a, b) = (a as usize, b as usize);
                    let delta_g = g_dev[d] - baseline.g_base[d];
                    if delta_g == 0.0 {
                        return Err(Error::Solver("zero-contrast toggle".into()));
                    }
                    y[r] = v[a] - v[b];
                    for (c, &e) in diff.devices.iter().enumerate() {
                        let w_e = &baseline.toggles[e].as_ref().unwrap().w;
                        s[r * k + c] = w_e[a] - w_e[b];
                    }
                    s[r * k + r] += 1.0 / delta_g;
                }
                solve_small(&mut s, &mut y, k)?;
                for (r, &d) in diff.devices.iter().enumerate() {
                    let tog = baseline.toggles[d].as_ref().unwrap();
                    let c = y[r];
                    if c == 0.0 {
                        continue;
                    }
                    for (vi, wi) in v.iter_mut().zip(&tog.w) {
                        *vi -= c * wi;
                    }
                    for q in 0..N_PORTS {
                        currents[q] += c * tog.currents[q];
                    }
                }
            }
        }

        Ok(NetworkSolve {
            port_currents: currents,
            node_voltages: self.network.expand(volts, &v),
        })
    }

    fn ensure_unit(&mut self, p: usize) -> Result<()> {
        if self.baseline.as_ref().unwrap().units[p].is_some() {
            return Ok(());
        }
        let n = self.network.n_unknown;
        let mut rhs = vec![0.0; n];
        for &k in &self.network.port_pin_edges[p] {
            let e = self.network.pin_edges[k];
            rhs[e.unknown as usize] += e.g;
        }
        let baseline = self.baseline.as_mut().unwrap();
        baseline.chol.solve(&mut rhs);
        let mut currents = [0.0; N_PORTS];
        for e in &self.network.pin_edges {
            let drive = if e.port as usize == p { 1.0 } else { 0.0 };
            currents[e.port as usize] += e.g * (drive - rhs[e.unknown as usize]);
        }
        baseline.units[p] = Some(Box::new(UnitSolution { v: rhs, currents }));
        Ok(())
    }

    fn ensure_toggle(&mut self, d: usize) -> Result<()> {
        if self.baseline.as_ref().unwrap().toggles[d].is_some() {
            return Ok(());
        }
        let DevSlot::Inner { a, b } = self.network.dev_slots[d] else {
            unreachable!();
        };
        let n = self.network.n_unknown;
        let mut w = vec![0.0; n];
        w[a as usize] = 1.0;
        w[b as usize] = -1.0;
        let baseline = self.baseline.as_mut().unwrap();
        baseline.chol.solve(&mut w);
        let mut currents = [0.0; N_PORTS];
        for e in &self.network.pin_edges {
            currents[e.port as usize] += e.g * w[e.unknown as usize];
        }
        let w_a_minus_b = w[a as usize] - w[b as usize];
        baseline.toggles[d] = Some(Box::new(ToggleSolution {
            w,
            w_a_minus_b,
            currents,
        }));
        Ok(())
    }

    /// Drop cached factorizations (used after bulk state edits).
    pub fn invalidate(&mut self) {
        self.baseline = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_g(g: f64) -> [f64; N_DEVICES] {
        [g; N_DEVICES]
    }

    #[test]
    fn zero_line_resistance_single_row_drive() {
        let cfg = ArrayConfig::ideal();
        let mut eng = SolveEngine::new(&cfg).unwrap();
        assert_eq!(eng.network().n_unknown(), 0);
        let g = uniform_g(10.0);
        let mut volts = [0.0; N_PORTS];
        volts[row_port(3)] = 0.2;
        let sol = eng.solve_direct(&g, &volts).unwrap();
        for j in 0..COLS {
            // Column port current is -g*V: the current flows out of the port.
            assert!(
                (sol.port_currents[col_port(j)] + 10.0 * 0.2).abs() < 1e-12,
                "col {j}: {}",
                sol.port_currents[col_port(j)]
            );
        }
        assert!((sol.port_currents[row_port(3)] - 15.0 * 10.0 * 0.2).abs() < 1e-9);
    }

    #[test]
    fn kirchhoff_sum_is_zero() {
        let cfg = ArrayConfig {
            r_segment_ohm: 20.0,
            r_contact_ohm: 10.0,
            lead_profile: LeadProfile::Triangular { peak_ohm: 300.0 },
        };
        let mut eng = SolveEngine::new(&cfg).unwrap();
        let mut g = uniform_g(9.0);
        g[37] = 18.0;
        g[120] = 16.2;
        let mut volts = [0.0; N_PORTS];
        volts[row_port(7)] = -1.1;
        volts[col_port(7)] = 1.1;
        volts[row_port(2)] = 0.3;
        let sol = eng.solve_direct(&g, &volts).unwrap();
        let total: f64 = sol.port_currents.iter().sum();
        let scale: f64 = sol.port_currents.iter().map(|c| c.abs()).sum();
        assert!(total.abs() <= 1e-12 * scale.max(1.0), "sum {total}, scale {scale}");
    }

    #[test]
    fn superposition_of_drives() {
        let cfg = ArrayConfig::default();
        let mut eng = SolveEngine::new(&cfg).unwrap();
        let g = uniform_g(12.0);
        let bits = StateBits::default();
        let mut va = [0.0; N_PORTS];
        va[row_port(0)] = 0.4;
        let mut vb = [0.0; N_PORTS];
        vb[row_port(9)] = -0.25;
        let mut vab = [0.0; N_PORTS];
        vab[row_port(0)] = 0.4;
        vab[row_port(9)] = -0.25;
        let sa = eng.solve(&g, &bits, &va).unwrap();
        let sb = eng.solve(&g, &bits, &vb).unwrap();
        let sab = eng.solve(&g, &bits, &vab).unwrap();
        for p in 0..N_PORTS {
            let sum = sa.port_currents[p] + sb.port_currents[p];
            assert!((sab.port_currents[p] - sum).abs() < 1e-9 * sum.abs().max(1.0));
        }
    }

    #[test]
    fn cached_solve_matches_direct_after_toggles() {
        let cfg = ArrayConfig {
            r_segment_ohm: 15.0,
            r_contact_ohm: 5.0,
            lead_profile: LeadProfile::Triangular { peak_ohm: 120.0 },
        };
        let mut eng = SolveEngine::new(&cfg).unwrap();
        let mut g = uniform_g(9.0);
        let mut bits = StateBits::default();
        let mut volts = [0.0; N_PORTS];
        volts[row_port(4)] = -0.8;
        volts[col_port(11)] = 0.8;

        // Exercise the whole correction ladder: baseline, single toggle,
        // toggle back, growing multi-device drift up to and past the rank
        // budget (device 17 flips twice, 100 flips twice, then a block of
        // MAX_RANK + 3 distinct devices accumulates).
        let mut toggled = vec![17usize, 17, 100, 100, 55, 56, 57];
        toggled.extend(60..60 + MAX_RANK + 3);
        for &d in &toggled {
            let on = g[d] == 9.0;
            g[d] = if on { 17.5 } else { 9.0 };
            bits.set(d, on);
            let fast = eng.solve(&g, &bits, &volts).unwrap();
            let mut fresh = SolveEngine::new(&cfg).unwrap();
            let slow = fresh.solve_direct(&g, &volts).unwrap();
            for p in 0..N_PORTS {
                let diff = (fast.port_currents[p] - slow.port_currents[p]).abs();
                assert!(
                    diff <= 1e-9 * slow.port_currents[p].abs().max(1e-6),
                    "device {d} port {p}: fast {} slow {}",
                    fast.port_currents[p],
                    slow.port_currents[p]
                );
            }
            for k in 0..N_NODES {
                let diff = (fast.node_voltages[k] - slow.node_voltages[k]).abs();
                assert!(diff <= 1e-9, "node {k} diff {diff}");
            }
        }
    }

    #[test]
    fn cached_solve_matches_direct_with_mixed_sign_drift() {
        // Devices moving in both directions from the baseline make the
        // correction's small system indefinite; it must still solve.
        let cfg = ArrayConfig::default();
        let mut eng = SolveEngine::new(&cfg).unwrap();
        let mut g = uniform_g(9.0);
        let mut bits = StateBits::default();
        for d in [3usize, 40, 91, 130, 200] {
            g[d] = 17.5;
            bits.set(d, true);
        }
        let mut volts = [0.0; N_PORTS];
        volts[row_port(7)] = 0.2;
        // Prime the baseline on the mixed state.
        eng.solve(&g, &bits, &volts).unwrap();

        // Drift: some on->off, some off->on.
        for d in [3usize, 91] {
            g[d] = 9.0;
            bits.set(d, false);
        }
        for d in [10usize, 111, 224] {
            g[d] = 17.5;
            bits.set(d, true);
        }
        for drive in [row_port(7), col_port(0), col_port(14)] {
            let mut volts = [0.0; N_PORTS];
            volts[drive] = 0.3;
            let fast = eng.solve(&g, &bits, &volts).unwrap();
            let slow = SolveEngine::new(&cfg)
                .unwrap()
                .solve_direct(&g, &volts)
                .unwrap();
            for p in 0..N_PORTS {
                let diff = (fast.port_currents[p] - slow.port_currents[p]).abs();
                assert!(
                    diff <= 1e-9 * slow.port_currents[p].abs().max(1e-6),
                    "port {p}: fast {} slow {}",
                    fast.port_currents[p],
                    slow.port_currents[p]
                );
            }
        }
    }

    #[test]
    fn all_ports_grounded_yields_zero() {
        let cfg = ArrayConfig::default();
        let mut eng = SolveEngine::new(&cfg).unwrap();
        let g = uniform_g(10.0);
        let volts = [0.0; N_PORTS];
        let sol = eng.solve_direct(&g, &volts).unwrap();
        assert!(sol.port_currents.iter().all(|&c| c.abs() < 1e-12));
        assert!(sol.node_voltages.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn contracted_geometry_keeps_line_identity() {
        // r_segment = 0 with finite contacts: each line is one supernode.
        let cfg = ArrayConfig {
            r_segment_ohm: 0.0,
            r_contact_ohm: 50.0,
            lead_profile: LeadProfile::None,
        };
        let mut eng = SolveEngine::new(&cfg).unwrap();
        assert_eq!(eng.network().n_unknown(), ROWS + COLS);
        let g = uniform_g(10.0);
        let mut volts = [0.0; N_PORTS];
        volts[row_port(0)] = 1.0;
        let sol = eng.solve_direct(&g, &volts).unwrap();
        let total: f64 = sol.port_currents.iter().sum();
        assert!(total.abs() < 1e-10);
        // All nodes of row line 0 share one voltage.
        let v0 = sol.node_voltages[row_node(0, 0)];
        for j in 1..COLS {
            assert_eq!(sol.node_voltages[row_node(0, j)], v0);
        }
    }
}
