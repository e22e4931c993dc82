//! Chain topology over consecutive time points and graph convolutions on it.
//!
//! A segmented recording of `N` time points becomes a graph whose node `i`
//! carries the 16 sensor readings at that instant and links to node `i + 1`.
//! The adjacency is never materialised for real inputs: both normalisation
//! modes produce a [`Tridiagonal`] propagation matrix.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Tridiagonal, Var};

/// Number of sensor channels, i.e. features per node.
pub const SENSOR_CHANNELS: usize = 16;

/// Pair of gases recorded together. Gas A is CO or methane, gas B is ethylene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GasGroup {
    CoEthylene,
    MethaneEthylene,
}

impl GasGroup {
    pub const ALL: [GasGroup; 2] = [GasGroup::CoEthylene, GasGroup::MethaneEthylene];

    pub fn tag(self) -> &'static str {
        match self {
            GasGroup::CoEthylene => "co_ethylene",
            GasGroup::MethaneEthylene => "methane_ethylene",
        }
    }

    pub fn gas_names(self) -> [&'static str; 2] {
        match self {
            GasGroup::CoEthylene => ["CO", "ethylene"],
            GasGroup::MethaneEthylene => ["methane", "ethylene"],
        }
    }
}

impl fmt::Display for GasGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for GasGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "co_ethylene" => Ok(GasGroup::CoEthylene),
            "methane_ethylene" => Ok(GasGroup::MethaneEthylene),
            other => Err(Error::Config(format!(
                "unknown gas group {other:?} (expected co_ethylene or methane_ethylene)"
            ))),
        }
    }
}

/// Which gases of the group are present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Composition {
    #[serde(rename = "A")]
    A,
    #[serde(rename = "B")]
    B,
    #[serde(rename = "A+B")]
    Mixture,
}

impl Composition {
    pub const ALL: [Composition; 3] = [Composition::A, Composition::B, Composition::Mixture];

    /// Composition implied by which concentrations are strictly positive.
    pub fn from_presence(a: bool, b: bool) -> Option<Self> {
        match (a, b) {
            (true, false) => Some(Composition::A),
            (false, true) => Some(Composition::B),
            (true, true) => Some(Composition::Mixture),
            (false, false) => None,
        }
    }

    pub fn from_targets(targets: [f64; 2]) -> Option<Self> {
        Self::from_presence(targets[0] > 0.0, targets[1] > 0.0)
    }

    pub fn index(self) -> usize {
        match self {
            Composition::A => 0,
            Composition::B => 1,
            Composition::Mixture => 2,
        }
    }

    pub fn contains(self, gas: usize) -> bool {
        match self {
            Composition::A => gas == 0,
            Composition::B => gas == 1,
            Composition::Mixture => gas < 2,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Composition::A => "A",
            Composition::B => "B",
            Composition::Mixture => "A+B",
        }
    }

    /// Human label with the group's gas names, e.g. `CO+ethylene`.
    pub fn label(self, group: GasGroup) -> String {
        let [a, b] = group.gas_names();
        match self {
            Composition::A => a.to_string(),
            Composition::B => b.to_string(),
            Composition::Mixture => format!("{a}+{b}"),
        }
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Composition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Composition::A),
            "B" => Ok(Composition::B),
            "A+B" => Ok(Composition::Mixture),
            other => Err(Error::Data(format!("unknown composition {other:?}"))),
        }
    }
}

/// Where a graph came from in its source recording.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub source: String,
    /// First row (inclusive) in the downsampled stream.
    pub start_row: usize,
    /// Last row (exclusive) in the downsampled stream.
    pub end_row: usize,
}

/// One segmented sample: `N` time points with 16 features each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorGraph {
    node_features: Tensor,
    targets: [f64; 2],
    ppm: [f64; 2],
    composition: Composition,
    group: GasGroup,
    meta: GraphMeta,
}

impl SensorGraph {
    pub fn new(
        node_features: Tensor,
        targets: [f64; 2],
        ppm: [f64; 2],
        group: GasGroup,
        meta: GraphMeta,
    ) -> Result<Self> {
        let (n, f) = node_features.as_matrix("SensorGraph")?;
        if f != SENSOR_CHANNELS || n == 0 {
            return Err(Error::dim(
                "SensorGraph",
                node_features.shape(),
                &[n.max(1), SENSOR_CHANNELS],
            ));
        }
        if targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Domain(format!(
                "normalized targets must lie in [0, 1], got {targets:?}"
            )));
        }
        let composition = Composition::from_targets(targets).ok_or_else(|| {
            Error::Data(format!("graph from {} has no gas present", meta.source))
        })?;
        Ok(SensorGraph {
            node_features,
            targets,
            ppm,
            composition,
            group,
            meta,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    pub fn targets(&self) -> [f64; 2] {
        self.targets
    }

    pub fn ppm(&self) -> [f64; 2] {
        self.ppm
    }

    pub fn composition(&self) -> Composition {
        self.composition
    }

    pub fn group(&self) -> GasGroup {
        self.group
    }

    pub fn meta(&self) -> &GraphMeta {
        &self.meta
    }

    /// Validates invariants after deserialisation.
    pub fn validate(self) -> Result<Self> {
        let stored = self.composition;
        let g = SensorGraph::new(self.node_features, self.targets, self.ppm, self.group, self.meta)?;
        if g.composition != stored {
            return Err(Error::Data(format!(
                "stored composition {stored} disagrees with targets {:?}",
                g.targets
            )));
        }
        Ok(g)
    }
}

/// How the chain adjacency is renormalised before propagation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyMode {
    /// `D̃^{-1/2} (A + Aᵀ + I) D̃^{-1/2}`
    #[default]
    Symmetric,
    /// `D̃^{-1} (A + I)` on the directed chain.
    Row,
}

/// Directed chain `0 → 1 → … → N-1`, stored implicitly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainAdjacency {
    n_nodes: usize,
}

impl ChainAdjacency {
    pub fn new(n_nodes: usize) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::Domain("chain graph needs at least one node".into()));
        }
        Ok(ChainAdjacency { n_nodes })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edge_count(&self) -> usize {
        self.n_nodes - 1
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> {
        (0..self.n_nodes - 1).map(|i| (i, i + 1))
    }

    /// Ones on the first superdiagonal. Intended for small `N`.
    pub fn to_dense(&self) -> Tensor {
        let n = self.n_nodes;
        let mut t = Tensor::zeros(vec![n, n]);
        for (i, j) in self.edges() {
            t.data_mut()[i * n + j] = 1.0;
        }
        t
    }

    pub fn normalize(&self, mode: AdjacencyMode) -> Tridiagonal {
        let n = self.n_nodes;
        let (lower, diag, upper) = match mode {
            AdjacencyMode::Symmetric => {
                // self loop plus one neighbour per side
                let degree = |i: usize| 1.0 + (i > 0) as u8 as f64 + (i + 1 < n) as u8 as f64;
                let diag: Vec<f64> = (0..n).map(|i| 1.0 / degree(i)).collect();
                let off: Vec<f64> = (0..n - 1)
                    .map(|i| 1.0 / (degree(i) * degree(i + 1)).sqrt())
                    .collect();
                (off.clone(), diag, off)
            }
            AdjacencyMode::Row => {
                let degree = |i: usize| 1.0 + (i + 1 < n) as u8 as f64;
                let diag: Vec<f64> = (0..n).map(|i| 1.0 / degree(i)).collect();
                let upper: Vec<f64> = (0..n - 1).map(|i| 1.0 / degree(i)).collect();
                (vec![0.0; n - 1], diag, upper)
            }
        };
        Tridiagonal::new(lower, diag, upper).expect("chain bands have consistent lengths")
    }
}

/// `relu(Â · X · W)`.
pub fn gcn_layer(tape: &mut Tape, x: Var, a_hat: &Rc<Tridiagonal>, w: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let propagated = tape.propagate(Rc::clone(a_hat), xw)?;
    Ok(tape.relu(propagated))
}

/// Runs the GCN layers in sequence and concatenates every layer's output
/// along the feature axis, giving an `N × (layers·filters)` matrix that must
/// be `d_model` wide.
pub fn gcn_stack(
    tape: &mut Tape,
    x: Var,
    a_hat: &Rc<Tridiagonal>,
    weights: &[Var],
    d_model: usize,
) -> Result<Var> {
    let filters = weights
        .first()
        .map(|w| tape.value(*w).cols())
        .ok_or_else(|| Error::Config("GCN stack needs at least one layer".into()))?;
    if weights.iter().any(|w| tape.value(*w).cols() != filters) {
        return Err(Error::Config("all GCN layers must have the same filter count".into()));
    }
    if weights.len() * filters != d_model {
        return Err(Error::Config(format!(
            "{} GCN layers x {filters} filters != d_model {d_model}",
            weights.len()
        )));
    }
    let mut h = x;
    let mut outputs = Vec::with_capacity(weights.len());
    for &w in weights {
        h = gcn_layer(tape, h, a_hat, w)?;
        outputs.push(h);
    }
    tape.concat_cols(&outputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjacency_matches_superdiagonal_pattern() {
        let a = ChainAdjacency::new(3).unwrap().to_dense();
        assert_eq!(a.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(ChainAdjacency::new(1).unwrap().to_dense().data(), &[0.0]);
        let five = ChainAdjacency::new(5).unwrap();
        assert_eq!(five.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
        assert!(matches!(ChainAdjacency::new(0), Err(Error::Domain(_))));
    }

    #[test]
    fn symmetric_normalization_small_cases() {
        let n2 = ChainAdjacency::new(2).unwrap().normalize(AdjacencyMode::Symmetric);
        assert!(n2.to_dense().data().iter().all(|&v| (v - 0.5).abs() < 1e-12));

        let n1 = ChainAdjacency::new(1).unwrap().normalize(AdjacencyMode::Symmetric);
        assert_eq!(n1.to_dense().data(), &[1.0]);

        let n3 = ChainAdjacency::new(3).unwrap().normalize(AdjacencyMode::Symmetric);
        let s = 1.0 / 6f64.sqrt();
        let want = [0.5, s, 0.0, s, 1.0 / 3.0, s, 0.0, s, 0.5];
        for (got, want) in n3.to_dense().data().iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn row_normalization_rows_sum_to_one() {
        let p = ChainAdjacency::new(4).unwrap().normalize(AdjacencyMode::Row);
        let d = p.to_dense();
        for r in 0..4 {
            assert!((d.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(p.lower().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gcn_layer_examples() {
        let a_hat = Rc::new(ChainAdjacency::new(2).unwrap().normalize(AdjacencyMode::Symmetric));
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::identity(2));
        let w = tape.constant(Tensor::identity(2));
        let out = gcn_layer(&mut tape, x, &a_hat, w).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| (v - 0.5).abs() < 1e-12));

        let zero_w = tape.constant(Tensor::zeros(vec![2, 3]));
        let out = gcn_layer(&mut tape, x, &a_hat, zero_w).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));

        let neg_w = tape.constant(Tensor::filled(vec![2, 2], -1.0));
        let out = gcn_layer(&mut tape, x, &a_hat, neg_w).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));

        let bad_w = tape.constant(Tensor::zeros(vec![3, 2]));
        assert!(gcn_layer(&mut tape, x, &a_hat, bad_w).is_err());
    }

    #[test]
    fn gcn_stack_shapes_and_config() {
        let a_hat = Rc::new(ChainAdjacency::new(5).unwrap().normalize(AdjacencyMode::Symmetric));
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(vec![5, SENSOR_CHANNELS], 0.1));
        let w0 = tape.constant(Tensor::filled(vec![16, 16], 0.05));
        let w1 = tape.constant(Tensor::filled(vec![16, 16], 0.05));
        let out = gcn_stack(&mut tape, x, &a_hat, &[w0, w1, w1], 48).unwrap();
        assert_eq!(tape.value(out).shape(), &[5, 48]);

        let wide = tape.constant(Tensor::filled(vec![16, 48], 0.05));
        let out = gcn_stack(&mut tape, x, &a_hat, &[wide], 48).unwrap();
        assert_eq!(tape.value(out).shape(), &[5, 48]);

        let zero = tape.constant(Tensor::zeros(vec![16, 16]));
        let out = gcn_stack(&mut tape, x, &a_hat, &[zero, zero, zero], 48).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));

        assert!(matches!(
            gcn_stack(&mut tape, x, &a_hat, &[w0, w1], 48),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sensor_graph_invariants() {
        let meta = GraphMeta {
            source: "t".into(),
            start_row: 0,
            end_row: 2,
        };
        let f = Tensor::zeros(vec![2, SENSOR_CHANNELS]);
        let g = SensorGraph::new(f.clone(), [0.0, 0.5], [0.0, 10.0], GasGroup::CoEthylene, meta.clone())
            .unwrap();
        assert_eq!(g.composition(), Composition::B);
        assert!(SensorGraph::new(f.clone(), [0.0, 1.5], [0.0, 1.0], GasGroup::CoEthylene, meta.clone()).is_err());
        assert!(SensorGraph::new(f, [0.0, 0.0], [0.0, 0.0], GasGroup::CoEthylene, meta.clone()).is_err());
        let narrow = Tensor::zeros(vec![2, 15]);
        assert!(SensorGraph::new(narrow, [0.5, 0.5], [1.0, 1.0], GasGroup::CoEthylene, meta).is_err());
    }
}
