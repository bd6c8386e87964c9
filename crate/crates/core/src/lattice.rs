//! Diluted Chimera graphs and quenched coupling disorder.
//!
//! Sites are indexed cell-major: the flat index of `(cell_row, cell_col,
//! partition, leg)` is `((cell_row * L + cell_col) * 2 + partition) * 4 + leg`.
//! Partition 0 is the "left" half of a unit cell and carries the vertical
//! inter-cell couplers; partition 1 is the "right" half and carries the
//! horizontal ones.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of sites per partition of a unit cell.
pub const LEGS: usize = 4;
/// Number of sites per unit cell.
pub const CELL_SITES: usize = 2 * LEGS;

/// Position of a site inside the Chimera grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SiteCoord {
    pub row: usize,
    pub col: usize,
    pub partition: usize,
    pub leg: usize,
}

impl SiteCoord {
    pub fn index(&self, l: usize) -> usize {
        ((self.row * l + self.col) * 2 + self.partition) * LEGS + self.leg
    }

    pub fn from_index(index: usize, l: usize) -> Self {
        let leg = index % LEGS;
        let partition = (index / LEGS) % 2;
        let cell = index / CELL_SITES;
        SiteCoord { row: cell / l, col: cell % l, partition, leg }
    }
}

/// Which couplers of the full Chimera graph survive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DilutionPattern {
    /// The complete Chimera graph.
    None,
    /// Every left-partition site keeps the two staggered intra-cell couplers
    /// `(k, k)` and `(k, k+1 mod 4)`; all inter-cell couplers are kept.
    /// This is a stand-in for the hardware dilution, whose exact edge list is
    /// not published.
    Default,
    /// An explicit list of kept couplers.
    Explicit(Vec<(usize, usize)>),
}

impl DilutionPattern {
    pub fn id(&self) -> &'static str {
        match self {
            DilutionPattern::None => "none",
            DilutionPattern::Default => "default",
            DilutionPattern::Explicit(_) => "explicit",
        }
    }
}

/// An `L x L` grid of K(4,4) unit cells with a subset of couplers kept.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChimeraGraph {
    l: usize,
    edges: Vec<(usize, usize)>,
    pattern: DilutionPattern,
}

/// Full Chimera edge count, `16 L^2 + 8 L (L - 1)`.
pub fn full_edge_count(l: usize) -> usize {
    16 * l * l + 8 * l * l.saturating_sub(1)
}

fn full_chimera_edges(l: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(full_edge_count(l));
    for row in 0..l {
        for col in 0..l {
            for k in 0..LEGS {
                let left = SiteCoord { row, col, partition: 0, leg: k }.index(l);
                for m in 0..LEGS {
                    let right = SiteCoord { row, col, partition: 1, leg: m }.index(l);
                    edges.push((left, right));
                }
                if row + 1 < l {
                    let below = SiteCoord { row: row + 1, col, partition: 0, leg: k }.index(l);
                    edges.push((left, below));
                }
                if col + 1 < l {
                    let right = SiteCoord { row, col, partition: 1, leg: k }.index(l);
                    let next = SiteCoord { row, col: col + 1, partition: 1, leg: k }.index(l);
                    edges.push((right, next));
                }
            }
        }
    }
    edges.sort_unstable();
    edges
}

/// True when `(i, j)` is a coupler of the full `L x L` Chimera graph.
pub fn is_chimera_edge(l: usize, i: usize, j: usize) -> bool {
    let n = CELL_SITES * l * l;
    if i >= n || j >= n || i == j {
        return false;
    }
    let (a, b) = (SiteCoord::from_index(i, l), SiteCoord::from_index(j, l));
    let same_cell = a.row == b.row && a.col == b.col;
    if same_cell {
        return a.partition != b.partition;
    }
    if a.partition != b.partition || a.leg != b.leg {
        return false;
    }
    match a.partition {
        0 => a.col == b.col && a.row.abs_diff(b.row) == 1,
        _ => a.row == b.row && a.col.abs_diff(b.col) == 1,
    }
}

/// Builds a Chimera graph of `l x l` cells with the given dilution.
pub fn build_diluted_chimera(l: usize, pattern: DilutionPattern) -> Result<ChimeraGraph> {
    if l == 0 {
        return Err(Error::Validation("Chimera size L must be at least 1".into()));
    }
    let edges = match &pattern {
        DilutionPattern::None => full_chimera_edges(l),
        DilutionPattern::Default => full_chimera_edges(l)
            .into_iter()
            .filter(|&(i, j)| {
                let (a, b) = (SiteCoord::from_index(i, l), SiteCoord::from_index(j, l));
                if a.row != b.row || a.col != b.col {
                    return true;
                }
                let (left, right) = if a.partition == 0 { (a, b) } else { (b, a) };
                right.leg == left.leg || right.leg == (left.leg + 1) % LEGS
            })
            .collect(),
        DilutionPattern::Explicit(mask) => {
            let n = CELL_SITES * l * l;
            let mut seen = HashSet::with_capacity(mask.len());
            let mut edges = Vec::with_capacity(mask.len());
            for (pos, &(i, j)) in mask.iter().enumerate() {
                if i >= n || j >= n {
                    return Err(Error::Validation(format!(
                        "edge mask entry {pos}: ({i}, {j}) outside [0, {n})"
                    )));
                }
                if !is_chimera_edge(l, i, j) {
                    return Err(Error::Validation(format!(
                        "edge mask entry {pos}: ({i}, {j}) is not a Chimera coupler"
                    )));
                }
                let e = (i.min(j), i.max(j));
                if !seen.insert(e) {
                    return Err(Error::Validation(format!(
                        "edge mask entry {pos}: duplicate coupler ({}, {})",
                        e.0, e.1
                    )));
                }
                edges.push(e);
            }
            edges.sort_unstable();
            edges
        }
    };
    Ok(ChimeraGraph { l, edges, pattern })
}

impl ChimeraGraph {
    pub fn l(&self) -> usize {
        self.l
    }

    pub fn n_sites(&self) -> usize {
        CELL_SITES * self.l * self.l
    }

    /// Kept couplers as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn pattern(&self) -> &DilutionPattern {
        &self.pattern
    }

    /// Proper two-coloring of the (bipartite) graph: partition parity XOR
    /// cell checkerboard parity.
    pub fn color(&self, site: usize) -> usize {
        let c = SiteCoord::from_index(site, self.l);
        (c.partition + c.row + c.col) % 2
    }

    pub fn degree(&self, site: usize) -> usize {
        self.edges.iter().filter(|&&(i, j)| i == site || j == site).count()
    }
}

/// Law from which the coupler strengths are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DisorderDistribution {
    /// Uniform on `{0, -0.2, -0.4, -0.6, -0.8, -1.0}`.
    #[serde(rename = "qmc-six-level")]
    QmcSixLevel,
    /// Uniform on `{0, -0.1, -0.2, -0.3, -0.4, -0.5}` (annealer units).
    #[serde(rename = "dwave-six-level")]
    DwaveSixLevel,
}

impl DisorderDistribution {
    pub fn id(&self) -> &'static str {
        match self {
            DisorderDistribution::QmcSixLevel => "qmc-six-level",
            DisorderDistribution::DwaveSixLevel => "dwave-six-level",
        }
    }

    fn step(&self) -> f64 {
        match self {
            DisorderDistribution::QmcSixLevel => 0.2,
            DisorderDistribution::DwaveSixLevel => 0.1,
        }
    }

    pub fn support(&self) -> [f64; 6] {
        let s = self.step();
        [0.0, -s, -2.0 * s, -3.0 * s, -4.0 * s, -5.0 * s]
    }

    pub fn contains(&self, value: f64) -> bool {
        self.support().iter().any(|&v| v == value)
    }
}

impl fmt::Display for DisorderDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for DisorderDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qmc-six-level" => Ok(DisorderDistribution::QmcSixLevel),
            "dwave-six-level" => Ok(DisorderDistribution::DwaveSixLevel),
            other => Err(Error::Validation(format!("unknown disorder distribution `{other}`"))),
        }
    }
}

/// One realization of the quenched couplings on a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct DisorderInstance {
    graph: ChimeraGraph,
    couplings: Vec<f64>,
    seed: u64,
    distribution: DisorderDistribution,
}

/// Draws one coupling per edge, i.i.d. from `distribution`.
pub fn sample_disorder(
    graph: &ChimeraGraph,
    distribution: DisorderDistribution,
    seed: u64,
) -> DisorderInstance {
    let support = distribution.support();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let couplings = graph
        .edges()
        .iter()
        .map(|_| support[rng.random_range(0..support.len())])
        .collect();
    DisorderInstance { graph: graph.clone(), couplings, seed, distribution }
}

impl DisorderInstance {
    /// Builds an instance from explicit couplings, for tests and oracles.
    /// Couplings are not checked against the distribution support.
    pub fn from_parts(
        graph: ChimeraGraph,
        couplings: Vec<f64>,
        seed: u64,
        distribution: DisorderDistribution,
    ) -> Result<Self> {
        if couplings.len() != graph.edges().len() {
            return Err(Error::Validation(format!(
                "{} couplings for {} edges",
                couplings.len(),
                graph.edges().len()
            )));
        }
        Ok(DisorderInstance { graph, couplings, seed, distribution })
    }

    pub fn graph(&self) -> &ChimeraGraph {
        &self.graph
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn distribution(&self) -> DisorderDistribution {
        self.distribution
    }

    pub fn n_sites(&self) -> usize {
        self.graph.n_sites()
    }

    /// `(i, j, J_ij)` triples in edge order.
    pub fn bonds(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.graph.edges().iter().zip(&self.couplings).map(|(&(i, j), &c)| (i, j, c))
    }

    /// Same graph with every coupling multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> DisorderInstance {
        DisorderInstance {
            couplings: self.couplings.iter().map(|c| c * factor).collect(),
            ..self.clone()
        }
    }

    /// Same graph with couplings replaced.
    pub fn with_couplings(&self, couplings: Vec<f64>) -> Result<DisorderInstance> {
        DisorderInstance::from_parts(self.graph.clone(), couplings, self.seed, self.distribution)
    }

    pub fn is_free(&self) -> bool {
        self.couplings.iter().all(|&c| c == 0.0)
    }

    pub fn to_file(&self) -> InstanceFile {
        InstanceFile {
            l: self.graph.l(),
            pattern: self.graph.pattern().id().to_string(),
            seed: self.seed,
            distribution_id: self.distribution.id().to_string(),
            edges: self.bonds().map(|(i, j, c)| (i, j, c)).collect(),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_file())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<DisorderInstance> {
        let text = std::fs::read_to_string(path)?;
        let file: InstanceFile = serde_json::from_str(&text)?;
        file.into_instance()
    }
}

/// On-disk instance document. Field order is fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    #[serde(rename = "L")]
    pub l: usize,
    pub pattern: String,
    pub seed: u64,
    pub distribution_id: String,
    pub edges: Vec<(usize, usize, f64)>,
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<DisorderInstance> {
        let distribution: DisorderDistribution = self.distribution_id.parse()?;
        let mask: Vec<(usize, usize)> = self.edges.iter().map(|&(i, j, _)| (i, j)).collect();
        let explicit = build_diluted_chimera(self.l, DilutionPattern::Explicit(mask))?;
        let pattern = match self.pattern.as_str() {
            "none" => DilutionPattern::None,
            "default" => DilutionPattern::Default,
            "explicit" => explicit.pattern().clone(),
            other => return Err(Error::Validation(format!("unknown dilution pattern `{other}`"))),
        };
        let graph = if matches!(pattern, DilutionPattern::Explicit(_)) {
            explicit
        } else {
            let g = build_diluted_chimera(self.l, pattern)?;
            if g.edges() != explicit.edges() {
                return Err(Error::Validation(format!(
                    "edge list does not match the `{}` pattern",
                    self.pattern
                )));
            }
            g
        };
        // Edges may be listed in any order; map each coupling onto the sorted edge list.
        let mut sorted: Vec<(usize, usize, f64)> = self
            .edges
            .iter()
            .map(|&(i, j, c)| (i.min(j), i.max(j), c))
            .collect();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for &(i, j, c) in &sorted {
            if !distribution.contains(c) {
                return Err(Error::Validation(format!(
                    "coupling {c} on ({i}, {j}) outside the {distribution} support"
                )));
            }
        }
        let couplings = sorted.into_iter().map(|(_, _, c)| c).collect();
        DisorderInstance::from_parts(graph, couplings, self.seed, distribution)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_full_graph_is_k44() {
        let g = build_diluted_chimera(1, DilutionPattern::None).unwrap();
        assert_eq!(g.edges().len(), 16);
        assert_eq!(g.n_sites(), 8);
        for &(i, j) in g.edges() {
            let (a, b) = (SiteCoord::from_index(i, 1), SiteCoord::from_index(j, 1));
            assert_ne!(a.partition, b.partition);
        }
    }

    #[test]
    fn two_by_two_full_graph_edge_count() {
        let g = build_diluted_chimera(2, DilutionPattern::None).unwrap();
        assert_eq!(g.edges().len(), 80);
    }

    #[test]
    fn edge_count_formula_holds_up_to_sixteen() {
        for l in 1..=16 {
            let g = build_diluted_chimera(l, DilutionPattern::None).unwrap();
            assert_eq!(g.edges().len(), full_edge_count(l), "L = {l}");
            let diluted = build_diluted_chimera(l, DilutionPattern::Default).unwrap();
            assert_eq!(diluted.edges().len(), 8 * l * l + 8 * l * (l - 1), "L = {l}");
        }
    }

    #[test]
    fn default_dilution_keeps_two_couplers_per_left_site() {
        let g = build_diluted_chimera(1, DilutionPattern::Default).unwrap();
        for leg in 0..LEGS {
            let site = SiteCoord { row: 0, col: 0, partition: 0, leg }.index(1);
            assert_eq!(g.degree(site), 2);
        }
    }

    #[test]
    fn coloring_is_proper() {
        let g = build_diluted_chimera(4, DilutionPattern::None).unwrap();
        for &(i, j) in g.edges() {
            assert_ne!(g.color(i), g.color(j));
        }
    }

    #[test]
    fn explicit_mask_validation() {
        let bad_range = build_diluted_chimera(1, DilutionPattern::Explicit(vec![(0, 99)]));
        assert!(matches!(bad_range, Err(Error::Validation(_))));
        // Two left-partition sites of one cell are never coupled.
        let not_chimera = build_diluted_chimera(1, DilutionPattern::Explicit(vec![(0, 1)]));
        assert!(matches!(not_chimera, Err(Error::Validation(_))));
        let dup = build_diluted_chimera(1, DilutionPattern::Explicit(vec![(0, 4), (4, 0)]));
        assert!(matches!(dup, Err(Error::Validation(_))));
        let ok = build_diluted_chimera(1, DilutionPattern::Explicit(vec![(4, 0)])).unwrap();
        assert_eq!(ok.edges(), &[(0, 4)]);
    }

    #[test]
    fn inter_cell_edges_join_matching_legs() {
        let g = build_diluted_chimera(3, DilutionPattern::None).unwrap();
        for &(i, j) in g.edges() {
            let (a, b) = (SiteCoord::from_index(i, 3), SiteCoord::from_index(j, 3));
            if (a.row, a.col) != (b.row, b.col) {
                assert_eq!(a.partition, b.partition);
                assert_eq!(a.leg, b.leg);
            }
        }
    }

    #[test]
    fn disorder_is_deterministic_and_in_support() {
        let g = build_diluted_chimera(3, DilutionPattern::Default).unwrap();
        let a = sample_disorder(&g, DisorderDistribution::DwaveSixLevel, 7);
        let b = sample_disorder(&g, DisorderDistribution::DwaveSixLevel, 7);
        assert_eq!(a, b);
        assert!(a.couplings().iter().all(|c| c.abs() <= 0.5));
        let c = sample_disorder(&g, DisorderDistribution::DwaveSixLevel, 8);
        assert_ne!(a.couplings(), c.couplings());
    }

    #[test]
    fn unknown_distribution_is_rejected() {
        assert!("gaussian".parse::<DisorderDistribution>().is_err());
    }

    #[test]
    fn instance_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        let g = build_diluted_chimera(2, DilutionPattern::Default).unwrap();
        let inst = sample_disorder(&g, DisorderDistribution::QmcSixLevel, 42);
        inst.write_json(&path).unwrap();
        let back = DisorderInstance::read_json(&path).unwrap();
        assert_eq!(inst, back);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("{\"L\":2,\"pattern\":\"default\",\"seed\":42,"));
    }
}
