//! Cage graph and rest geometry.
//!
//! 321 nodes: ten rings of 32 plus a bottom node. Ring nodes form a cycle
//! within each layer, every node connects vertically to the node directly
//! above it, and the bottom node connects to all of layer 10.

use nalgebra::DMatrix;
use thiserror::Error;

pub const RING_NODES: usize = 32;
pub const LAYERS: usize = 10;
pub const NODE_COUNT: usize = LAYERS * RING_NODES + 1;
/// Index of the bottom node (last node).
pub const BOTTOM_NODE: usize = NODE_COUNT - 1;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("geometry parameters must be positive, got diameter {0}, cyl {1}, bottom {2}")]
    NonPositive(f64, f64, f64),
    #[error("bottom depth {0} must exceed the cylindrical depth {1}")]
    BottomAboveCylinder(f64, f64),
}

/// The cage graph: adjacency, edge list and per-node rest coordinates.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CageTopology {
    /// N x N symmetric 0/1 matrix, zero diagonal.
    pub adjacency: DMatrix<f64>,
    /// Undirected edges, each stored once with i < j.
    pub edges: Vec<(usize, usize)>,
    /// N x 3 rest coordinates (m); z is negative below the surface.
    pub rest_positions: DMatrix<f64>,
}

/// Node index of ring position `j` in 1-based layer `layer`.
pub fn ring_node(layer: usize, j: usize) -> usize {
    (layer - 1) * RING_NODES + (j % RING_NODES)
}

/// 1-based layer of a node, or `None` for the bottom node.
pub fn layer_of(node: usize) -> Option<usize> {
    if node >= LAYERS * RING_NODES {
        None
    } else {
        Some(node / RING_NODES + 1)
    }
}

/// Build the adjacency structure; rest coordinates are left at zero
/// (see [`rest_geometry`]).
pub fn build_topology() -> CageTopology {
    let mut adjacency = DMatrix::zeros(NODE_COUNT, NODE_COUNT);
    let mut edges = Vec::with_capacity(640);
    let mut connect = |a: usize, b: usize| {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        adjacency[(lo, hi)] = 1.0;
        adjacency[(hi, lo)] = 1.0;
        edges.push((lo, hi));
    };
    for layer in 1..=LAYERS {
        for j in 0..RING_NODES {
            connect(ring_node(layer, j), ring_node(layer, j + 1));
            if layer >= 2 {
                connect(ring_node(layer, j), ring_node(layer - 1, j));
            }
        }
    }
    for j in 0..RING_NODES {
        connect(ring_node(LAYERS, j), BOTTOM_NODE);
    }
    edges.sort_unstable();
    CageTopology {
        adjacency,
        edges,
        rest_positions: DMatrix::zeros(NODE_COUNT, 3),
    }
}

/// Rest coordinates: rings of radius `diameter / 2` spaced linearly over the
/// cylindrical section, then a conical taper down to the bottom node at
/// `bottom_depth`. Ring azimuths step by 360/32 degrees.
pub fn rest_geometry(
    diameter: f64,
    cyl_depth: f64,
    bottom_depth: f64,
) -> Result<DMatrix<f64>, GeometryError> {
    if diameter <= 0.0 || cyl_depth <= 0.0 || bottom_depth <= 0.0 {
        return Err(GeometryError::NonPositive(diameter, cyl_depth, bottom_depth));
    }
    if bottom_depth <= cyl_depth {
        return Err(GeometryError::BottomAboveCylinder(bottom_depth, cyl_depth));
    }
    let radius = diameter / 2.0;
    // cylindrical layer count proportional to the depth split
    let n_cyl = (1.0 + ((LAYERS - 1) as f64 * cyl_depth / bottom_depth).round())
        .clamp(2.0, (LAYERS - 1) as f64) as usize;

    let mut pos = DMatrix::zeros(NODE_COUNT, 3);
    let dtheta = 2.0 * std::f64::consts::PI / RING_NODES as f64;
    for layer in 1..=LAYERS {
        let (r, depth) = if layer <= n_cyl {
            (radius, (layer - 1) as f64 * cyl_depth / (n_cyl - 1) as f64)
        } else {
            let t = (layer - n_cyl) as f64 / (LAYERS - n_cyl + 1) as f64;
            (radius * (1.0 - t), cyl_depth + t * (bottom_depth - cyl_depth))
        };
        for j in 0..RING_NODES {
            let theta = j as f64 * dtheta;
            let node = ring_node(layer, j);
            pos[(node, 0)] = r * theta.cos();
            pos[(node, 1)] = r * theta.sin();
            pos[(node, 2)] = -depth;
        }
    }
    pos[(BOTTOM_NODE, 2)] = -bottom_depth;
    Ok(pos)
}

impl CageTopology {
    /// Adjacency plus the default rest geometry.
    pub fn standard(diameter: f64, cyl_depth: f64, bottom_depth: f64) -> Result<Self, GeometryError> {
        let mut topo = build_topology();
        topo.rest_positions = rest_geometry(diameter, cyl_depth, bottom_depth)?;
        Ok(topo)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency.row(node).iter().filter(|v| **v > 0.5).count()
    }

    /// Node on the reference azimuth (ring position 0) closest to the target
    /// depth, considering the bottom node as well.
    pub fn node_at_depth(&self, target_depth: f64) -> usize {
        let mut best = BOTTOM_NODE;
        let mut best_err = (self.rest_positions[(BOTTOM_NODE, 2)] + target_depth).abs();
        for layer in 1..=LAYERS {
            let node = ring_node(layer, 0);
            let err = (self.rest_positions[(node, 2)] + target_depth).abs();
            if err < best_err {
                best_err = err;
                best = node;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: enumerate the expected edge set from the layer
    /// rules and compare.
    #[test]
    fn edge_set_matches_enumeration() {
        let topo = build_topology();
        let mut expected = std::collections::BTreeSet::new();
        for layer in 1..=LAYERS {
            for j in 0..RING_NODES {
                let a = ring_node(layer, j);
                let b = ring_node(layer, j + 1);
                expected.insert((a.min(b), a.max(b)));
                if layer >= 2 {
                    let up = ring_node(layer - 1, j);
                    expected.insert((a.min(up), a.max(up)));
                }
            }
        }
        for j in 0..RING_NODES {
            let a = ring_node(LAYERS, j);
            expected.insert((a, BOTTOM_NODE));
        }
        assert_eq!(expected.len(), 640);
        let got: std::collections::BTreeSet<_> = topo.edges.iter().copied().collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn degree_sequence() {
        let topo = build_topology();
        let mut threes = 0;
        let mut fours = 0;
        for node in 0..NODE_COUNT - 1 {
            match topo.degree(node) {
                3 => threes += 1,
                4 => fours += 1,
                d => panic!("node {node} has degree {d}"),
            }
        }
        assert_eq!(threes, 32); // top ring
        assert_eq!(fours, 32 * 9);
        assert_eq!(topo.degree(BOTTOM_NODE), 32);
    }

    #[test]
    fn adjacency_symmetric_zero_diagonal() {
        let topo = build_topology();
        assert_eq!(topo.adjacency, topo.adjacency.transpose());
        for i in 0..NODE_COUNT {
            assert_eq!(topo.adjacency[(i, i)], 0.0);
        }
    }

    #[test]
    fn vertical_rule_connects_layers() {
        let topo = build_topology();
        // node 33 (index 32) is layer 2 position 0, above it node 1 (index 0)
        assert_eq!(topo.adjacency[(32, 0)], 1.0);
    }

    #[test]
    fn bottom_node_connects_to_layer_ten() {
        let topo = build_topology();
        for j in 0..RING_NODES {
            assert_eq!(topo.adjacency[(ring_node(10, j), BOTTOM_NODE)], 1.0);
        }
    }

    #[test]
    fn default_geometry_dimensions() {
        let pos = rest_geometry(50.0, 18.0, 31.0).unwrap();
        // layer 1 radius 25 m at the surface
        for j in 0..RING_NODES {
            let r = (pos[(j, 0)].powi(2) + pos[(j, 1)].powi(2)).sqrt();
            assert!((r - 25.0).abs() < 1e-12);
            assert_eq!(pos[(j, 2)], 0.0);
        }
        // bottom node at the apex
        assert_eq!(pos[(BOTTOM_NODE, 0)], 0.0);
        assert_eq!(pos[(BOTTOM_NODE, 1)], 0.0);
        assert_eq!(pos[(BOTTOM_NODE, 2)], -31.0);
    }

    #[test]
    fn ring_azimuth_spacing() {
        let pos = rest_geometry(50.0, 18.0, 31.0).unwrap();
        let a0 = pos[(0, 1)].atan2(pos[(0, 0)]);
        let a1 = pos[(1, 1)].atan2(pos[(1, 0)]);
        assert!(((a1 - a0).to_degrees() - 11.25).abs() < 1e-10);
    }

    #[test]
    fn invalid_geometry_rejected() {
        assert!(rest_geometry(-1.0, 18.0, 31.0).is_err());
        assert!(matches!(
            rest_geometry(50.0, 31.0, 18.0),
            Err(GeometryError::BottomAboveCylinder(18.0, 31.0))
        ));
    }

    #[test]
    fn sensor_depths_resolve_to_expected_nodes() {
        let topo = CageTopology::standard(50.0, 18.0, 31.0).unwrap();
        // bottom sensor maps to the apex node
        assert_eq!(topo.node_at_depth(31.0), BOTTOM_NODE);
        let n7 = topo.node_at_depth(7.0);
        let n15 = topo.node_at_depth(15.0);
        assert!(layer_of(n7).is_some());
        assert!(layer_of(n15).is_some());
        // strictly increasing depth ordering
        let d7 = -topo.rest_positions[(n7, 2)];
        let d15 = -topo.rest_positions[(n15, 2)];
        assert!(d7 < d15 && d15 < 31.0);
    }
}
