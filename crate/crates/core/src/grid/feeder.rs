use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{GridError, LoadScenario};

/// Fixture format understood by [`FeederSpec::from_toml_str`].
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Nominal phase angle of a positive-sequence set (0, -120, +120 degrees).
    pub fn nominal_angle(self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Phase::A => 0.0,
            Phase::B => -2.0 * PI / 3.0,
            Phase::C => 2.0 * PI / 3.0,
        }
    }

    pub fn from_char(c: char) -> Option<Phase> {
        match c.to_ascii_uppercase() {
            'A' => Some(Phase::A),
            'B' => Some(Phase::B),
            'C' => Some(Phase::C),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Phase::A => 'A',
            Phase::B => 'B',
            Phase::C => 'C',
        };
        write!(f, "{c}")
    }
}

/// Set of active phases at a bus, as a 3-bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn parse(s: &str) -> Result<PhaseSet, GridError> {
        let mut bits = 0u8;
        for c in s.chars() {
            let p = Phase::from_char(c).ok_or_else(|| GridError::InvalidPhases(s.to_string()))?;
            let bit = 1 << p.index();
            if bits & bit != 0 {
                return Err(GridError::InvalidPhases(s.to_string()));
            }
            bits |= bit;
        }
        if bits == 0 {
            return Err(GridError::InvalidPhases(s.to_string()));
        }
        Ok(PhaseSet(bits))
    }

    pub fn contains(self, p: Phase) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn is_subset_of(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

/// 3x3 series impedance of a line segment in per-unit, indexed by phase.
pub type PhaseImpedance = [[Complex64; 3]; 3];

#[derive(Debug, Clone)]
pub struct Bus {
    pub id: String,
    pub phases: PhaseSet,
}

/// A line oriented away from the slack bus. Its conducting phases are the
/// phases of the downstream bus.
#[derive(Debug, Clone)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub impedance: PhaseImpedance,
    pub phases: PhaseSet,
    /// Series admittance over `phases`, in phase order.
    pub(crate) admittance: DMatrix<Complex64>,
}

#[derive(Debug, Clone)]
pub struct Slack {
    pub bus: usize,
    pub voltage: [Complex64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bases {
    pub voltage_kv: f64,
    pub power_kva: f64,
}

impl Default for Bases {
    fn default() -> Self {
        Bases {
            voltage_kv: 4.16,
            power_kva: 1000.0,
        }
    }
}

/// One conductor at one bus: the unit at which voltages are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseNode {
    pub bus: usize,
    pub phase: Phase,
}

/// Validated radial feeder.
#[derive(Debug, Clone)]
pub struct Feeder {
    pub name: String,
    pub bases: Bases,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    slack: Slack,
    nodes: Vec<PhaseNode>,
    node_index: Vec<[Option<usize>; 3]>,
    bus_index: HashMap<String, usize>,
    /// Buses in breadth-first order from the slack.
    order: Vec<usize>,
    parent_line: Vec<Option<usize>>,
    depth: Vec<usize>,
    nominal_load: LoadScenario,
}

impl Feeder {
    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn slack(&self) -> &Slack {
        &self.slack
    }

    /// All phase-nodes, ordered by bus then phase.
    pub fn nodes(&self) -> &[PhaseNode] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.bus_index.get(id).copied()
    }

    pub fn node_index(&self, bus: usize, phase: Phase) -> Option<usize> {
        self.node_index.get(bus).and_then(|n| n[phase.index()])
    }

    pub fn node_by_id(&self, bus_id: &str, phase: Phase) -> Option<usize> {
        self.bus_index(bus_id).and_then(|b| self.node_index(b, phase))
    }

    pub fn is_slack_node(&self, node: usize) -> bool {
        self.nodes[node].bus == self.slack.bus
    }

    /// Indices of every phase-node that is not fixed by the slack.
    pub fn non_slack_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&n| !self.is_slack_node(n)).collect()
    }

    pub fn slack_voltage(&self, phase: Phase) -> Complex64 {
        self.slack.voltage[phase.index()]
    }

    pub fn bfs_order(&self) -> &[usize] {
        &self.order
    }

    pub fn parent_line(&self, bus: usize) -> Option<usize> {
        self.parent_line[bus]
    }

    pub fn depth(&self, bus: usize) -> usize {
        self.depth[bus]
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn node_label(&self, node: usize) -> String {
        let n = self.nodes[node];
        format!("{}:{}", self.buses[n.bus].id, n.phase)
    }

    /// Loads listed in the fixture, or zero load when none were given.
    pub fn nominal_load(&self) -> &LoadScenario {
        &self.nominal_load
    }

    /// Voltage vector with every phase-node at its slack phase voltage.
    pub fn flat_voltages(&self) -> Vec<Complex64> {
        self.nodes.iter().map(|n| self.slack_voltage(n.phase)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlackSpec {
    pub bus: String,
    #[serde(default = "one")]
    pub magnitude: f64,
    /// Per-phase angles; defaults to the balanced 0/-120/+120 set.
    #[serde(default)]
    pub angle_deg: Option<[f64; 3]>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusSpec {
    pub id: String,
    pub phases: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LineSpec {
    pub from: String,
    pub to: String,
    pub z_re: [[f64; 3]; 3],
    pub z_im: [[f64; 3]; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoadSpec {
    pub bus: String,
    pub phase: Phase,
    pub p: f64,
    pub q: f64,
}

/// Structured feeder description, as stored in fixture files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeederSpec {
    pub format_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub bases: Bases,
    pub slack: SlackSpec,
    #[serde(rename = "bus")]
    pub buses: Vec<BusSpec>,
    #[serde(rename = "line", default)]
    pub lines: Vec<LineSpec>,
    #[serde(rename = "load", default)]
    pub loads: Vec<LoadSpec>,
}

impl FeederSpec {
    pub fn from_toml_str(s: &str) -> Result<FeederSpec, GridError> {
        let spec: FeederSpec = toml::from_str(s).map_err(|e| GridError::Parse(e.to_string()))?;
        if spec.format_version != FORMAT_VERSION {
            return Err(GridError::UnsupportedVersion(spec.format_version));
        }
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("feeder spec serializes")
    }
}

/// Reads and validates a feeder fixture file.
pub fn load_feeder(path: impl AsRef<Path>) -> Result<Feeder, GridError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })?;
    build_feeder(&FeederSpec::from_toml_str(&text)?)
}

/// Validates a feeder description and derives its radial structure.
pub fn build_feeder(spec: &FeederSpec) -> Result<Feeder, GridError> {
    let mut bus_index = HashMap::new();
    let mut buses = Vec::with_capacity(spec.buses.len());
    for b in &spec.buses {
        if bus_index.insert(b.id.clone(), buses.len()).is_some() {
            return Err(GridError::DuplicateId(b.id.clone()));
        }
        buses.push(Bus {
            id: b.id.clone(),
            phases: PhaseSet::parse(&b.phases)?,
        });
    }
    let lookup = |id: &str| bus_index.get(id).copied().ok_or_else(|| GridError::UnknownBus(id.to_string()));

    let slack_bus = lookup(&spec.slack.bus)?;
    if !(spec.slack.magnitude.is_finite() && spec.slack.magnitude > 0.0) {
        return Err(GridError::InvalidSlack(format!(
            "magnitude must be positive, got {}",
            spec.slack.magnitude
        )));
    }
    let mut slack_voltage = [Complex64::new(0.0, 0.0); 3];
    for p in Phase::ALL {
        let angle = match spec.slack.angle_deg {
            Some(a) => a[p.index()].to_radians(),
            None => p.nominal_angle(),
        };
        slack_voltage[p.index()] = Complex64::from_polar(spec.slack.magnitude, angle);
    }

    // Undirected adjacency; union-find rejects any edge closing a loop.
    let n = buses.len();
    let mut uf: Vec<usize> = (0..n).collect();
    fn root(uf: &mut [usize], mut i: usize) -> usize {
        while uf[i] != i {
            uf[i] = uf[uf[i]];
            i = uf[i];
        }
        i
    }
    let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, l) in spec.lines.iter().enumerate() {
        let a = lookup(&l.from)?;
        let b = lookup(&l.to)?;
        let (ra, rb) = (root(&mut uf, a), root(&mut uf, b));
        if a == b || ra == rb {
            return Err(GridError::CycleDetected {
                from: l.from.clone(),
                to: l.to.clone(),
            });
        }
        uf[ra] = rb;
        adjacency[a].push((b, k));
        adjacency[b].push((a, k));
    }

    let mut order = Vec::with_capacity(n);
    let mut parent_line: Vec<Option<usize>> = vec![None; n];
    let mut depth = vec![0usize; n];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([slack_bus]);
    seen[slack_bus] = true;
    let mut lines = Vec::with_capacity(spec.lines.len());
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(v, k) in &adjacency[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            depth[v] = depth[u] + 1;
            parent_line[v] = Some(lines.len());
            lines.push(oriented_line(&spec.lines[k], u, v, &buses)?);
            queue.push_back(v);
        }
    }
    if let Some(b) = (0..n).find(|&b| !seen[b]) {
        return Err(GridError::DisconnectedBus(buses[b].id.clone()));
    }

    let mut nodes = Vec::new();
    let mut node_index = vec![[None; 3]; n];
    for (b, bus) in buses.iter().enumerate() {
        for p in bus.phases.iter() {
            node_index[b][p.index()] = Some(nodes.len());
            nodes.push(PhaseNode { bus: b, phase: p });
        }
    }

    let mut feeder = Feeder {
        name: spec.name.clone(),
        bases: spec.bases,
        buses,
        lines,
        slack: Slack {
            bus: slack_bus,
            voltage: slack_voltage,
        },
        nodes,
        node_index,
        bus_index,
        order,
        parent_line,
        depth,
        nominal_load: LoadScenario::default(),
    };
    let mut load = LoadScenario::zero(&feeder);
    for l in &spec.loads {
        load.add(&feeder, &l.bus, l.phase, Complex64::new(l.p, l.q))?;
    }
    feeder.nominal_load = load;
    Ok(feeder)
}

fn oriented_line(spec: &LineSpec, from: usize, to: usize, buses: &[Bus]) -> Result<Line, GridError> {
    let phases = buses[to].phases;
    if !phases.is_subset_of(buses[from].phases) {
        return Err(GridError::PhaseMismatch {
            from: buses[from].id.clone(),
            to: buses[to].id.clone(),
        });
    }
    let mut impedance = [[Complex64::new(0.0, 0.0); 3]; 3];
    for (i, row) in impedance.iter_mut().enumerate() {
        for (j, z) in row.iter_mut().enumerate() {
            *z = Complex64::new(spec.z_re[i][j], spec.z_im[i][j]);
        }
    }
    let singular = || GridError::SingularImpedance {
        from: buses[from].id.clone(),
        to: buses[to].id.clone(),
    };
    let active: Vec<usize> = phases.iter().map(Phase::index).collect();
    let z = DMatrix::from_fn(active.len(), active.len(), |i, j| impedance[active[i]][active[j]]);
    if z.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(singular());
    }
    let scale = z.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let det = z.clone().determinant();
    if scale == 0.0 || det.norm() <= 1e-12 * scale.powi(active.len() as i32) {
        return Err(singular());
    }
    let admittance = z.try_inverse().ok_or_else(singular)?;
    Ok(Line {
        from,
        to,
        impedance,
        phases,
        admittance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(from: &str, to: &str) -> LineSpec {
        let mut z_re = [[0.0; 3]; 3];
        let mut z_im = [[0.0; 3]; 3];
        for i in 0..3 {
            z_re[i][i] = 0.01;
            z_im[i][i] = 0.02;
        }
        LineSpec {
            from: from.into(),
            to: to.into(),
            z_re,
            z_im,
        }
    }

    fn spec(buses: &[(&str, &str)], lines: Vec<LineSpec>) -> FeederSpec {
        FeederSpec {
            format_version: FORMAT_VERSION,
            name: "t".into(),
            bases: Bases::default(),
            slack: SlackSpec {
                bus: buses[0].0.into(),
                magnitude: 1.0,
                angle_deg: None,
            },
            buses: buses
                .iter()
                .map(|(id, ph)| BusSpec {
                    id: id.to_string(),
                    phases: ph.to_string(),
                })
                .collect(),
            lines,
            loads: vec![],
        }
    }

    #[test]
    fn smallest_feeder() {
        let f = build_feeder(&spec(&[("s", "A"), ("b", "A")], vec![line("s", "b")])).unwrap();
        assert_eq!(f.lines().len(), 1);
        assert_eq!(f.max_depth(), 1);
        assert_eq!(f.node_count(), 2);
    }

    #[test]
    fn reversed_duplicate_line_is_a_cycle() {
        let err = build_feeder(&spec(
            &[("s", "A"), ("b", "A")],
            vec![line("s", "b"), line("b", "s")],
        ))
        .unwrap_err();
        assert!(matches!(err, GridError::CycleDetected { .. }));
    }

    #[test]
    fn disconnected_and_duplicate() {
        let err = build_feeder(&spec(&[("s", "A"), ("b", "A"), ("c", "A")], vec![line("s", "b")])).unwrap_err();
        assert!(matches!(err, GridError::DisconnectedBus(ref id) if id == "c"));
        let err = build_feeder(&spec(&[("s", "A"), ("s", "A")], vec![])).unwrap_err();
        assert!(matches!(err, GridError::DuplicateId(_)));
    }

    #[test]
    fn upstream_orientation_is_recovered() {
        let f = build_feeder(&spec(
            &[("s", "ABC"), ("b", "ABC"), ("c", "AB")],
            vec![line("c", "b"), line("b", "s")],
        ))
        .unwrap();
        let c = f.bus_index("c").unwrap();
        let l = &f.lines()[f.parent_line(c).unwrap()];
        assert_eq!(f.buses()[l.from].id, "b");
        assert_eq!(f.depth(c), 2);
        assert_eq!(f.node_count(), 8);
    }

    #[test]
    fn singular_impedance_rejected() {
        let mut l = line("s", "b");
        l.z_re = [[0.01; 3]; 3];
        l.z_im = [[0.02; 3]; 3];
        let err = build_feeder(&spec(&[("s", "ABC"), ("b", "ABC")], vec![l])).unwrap_err();
        assert!(matches!(err, GridError::SingularImpedance { .. }));
        // The same rank-one matrix is fine on a single phase.
        let mut l = line("s", "b");
        l.z_re = [[0.01; 3]; 3];
        l.z_im = [[0.02; 3]; 3];
        assert!(build_feeder(&spec(&[("s", "ABC"), ("b", "C")], vec![l])).is_ok());
    }

    #[test]
    fn lateral_phases_must_exist_upstream() {
        let err = build_feeder(&spec(&[("s", "A"), ("b", "AB")], vec![line("s", "b")])).unwrap_err();
        assert!(matches!(err, GridError::PhaseMismatch { .. }));
    }

    #[test]
    fn phase_set_parsing() {
        assert_eq!(PhaseSet::parse("CA").unwrap().to_string(), "AC");
        assert!(PhaseSet::parse("").is_err());
        assert!(PhaseSet::parse("AA").is_err());
        assert!(PhaseSet::parse("AD").is_err());
    }
}
