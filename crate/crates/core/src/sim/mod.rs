//! Synthetic data factory for the cage twin: the 321-node cage graph, a
//! quasi-static deformation and mooring-load solver, virtual sensors, and a
//! seeded nonlinear discrepancy that produces the high-fidelity truth.
//!
//! All physical constants live in `params/default.toml` at the repository
//! root; datasets record the SHA-256 of the parameter source they were
//! generated with.

pub mod equilibrium;
pub mod highfidelity;
pub mod series;
pub mod topology;

pub use equilibrium::{solve_equilibrium, CageDeformation, MooringLoads, SolveError, SolveStats};
pub use highfidelity::{synth_high_fidelity, DiscrepancyParams};
pub use series::{
    generate_hf_dataset, generate_lf_dataset, HfDataset, HfRecord, LfDataset, LfScenario,
};
pub use topology::{
    build_topology, rest_geometry, CageTopology, GeometryError, BOTTOM_NODE, LAYERS, NODE_COUNT,
    RING_NODES,
};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("invalid sensor configuration: {0}")]
    InvalidSensorIndex(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("parameter file: {0}")]
    Params(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset field {0:?} on row {1} is not a number")]
    BadField(String, usize),
}

/// Environmental input vector. Directions are "toward" azimuths in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeaState {
    /// m/s.
    pub current_speed: f64,
    /// deg, wrapped to [0, 360).
    pub current_dir: f64,
    /// m.
    pub sig_wave_height: f64,
    /// s.
    pub peak_period: f64,
    /// deg.
    pub wave_dir: f64,
}

pub fn wrap_degrees(d: f64) -> f64 {
    let mut v = d % 360.0;
    if v < 0.0 {
        v += 360.0;
    }
    v
}

impl SeaState {
    pub fn new(cs: f64, cd: f64, hs: f64, tp: f64, wd: f64) -> Self {
        Self {
            current_speed: cs,
            current_dir: wrap_degrees(cd),
            sig_wave_height: hs,
            peak_period: tp,
            wave_dir: wrap_degrees(wd),
        }
    }

    pub fn calm() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn current_only(speed: f64, dir: f64) -> Self {
        Self::new(speed, dir, 0.0, 0.0, 0.0)
    }

    /// Whether the state lies inside the data-generation ranges. Prediction
    /// accepts out-of-range states with a warning flag downstream.
    pub fn in_generation_range(&self, r: &SeaStateRanges) -> bool {
        self.current_speed >= r.current_speed.0
            && self.current_speed <= r.current_speed.1
            && self.sig_wave_height >= r.sig_wave_height.0
            && self.sig_wave_height <= r.sig_wave_height.1
            && self.peak_period >= r.peak_period.0
            && self.peak_period <= r.peak_period.1
    }

    pub fn is_finite(&self) -> bool {
        self.current_speed.is_finite()
            && self.current_dir.is_finite()
            && self.sig_wave_height.is_finite()
            && self.peak_period.is_finite()
            && self.wave_dir.is_finite()
    }
}

/// Sampling ranges for dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeaStateRanges {
    pub current_speed: (f64, f64),
    pub sig_wave_height: (f64, f64),
    pub peak_period: (f64, f64),
}

impl SeaStateRanges {
    /// Generation ranges used for the reference dataset: current 0..1 m/s,
    /// Hs 0..3 m, Tp 0..8.66 s, directions over the full circle.
    pub fn standard() -> Self {
        Self {
            current_speed: (0.0, 1.0),
            sig_wave_height: (0.0, 3.0),
            peak_period: (0.0, 8.66),
        }
    }
}

/// Seeded stratified (latin hypercube) sea-state sample: every dimension is
/// split into `n` strata holding exactly one point, with independent seeded
/// stratum permutations per dimension.
pub fn sample_sea_states(
    n: usize,
    ranges: &SeaStateRanges,
    seed: u64,
) -> Result<Vec<SeaState>, SimError> {
    if n == 0 {
        return Err(SimError::InvalidRange("need at least one sample".into()));
    }
    for (name, (lo, hi)) in [
        ("current_speed", ranges.current_speed),
        ("sig_wave_height", ranges.sig_wave_height),
        ("peak_period", ranges.peak_period),
    ] {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(SimError::InvalidRange(format!("{name}: {lo}..{hi}")));
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut dimension = |lo: f64, hi: f64| -> Vec<f64> {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        (0..n)
            .map(|i| {
                let u: f64 = rng.random_range(0.0..1.0);
                lo + (hi - lo) * ((perm[i] as f64 + u) / n as f64)
            })
            .collect()
    };
    let speeds = dimension(ranges.current_speed.0, ranges.current_speed.1);
    let cdirs = dimension(0.0, 360.0);
    let heights = dimension(ranges.sig_wave_height.0, ranges.sig_wave_height.1);
    let periods = dimension(ranges.peak_period.0, ranges.peak_period.1);
    let wdirs = dimension(0.0, 360.0);
    Ok((0..n)
        .map(|i| SeaState::new(speeds[i], cdirs[i], heights[i], periods[i], wdirs[i]))
        .collect())
}

// parameter file sections

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryParams {
    pub diameter: f64,
    pub cyl_depth: f64,
    pub bottom_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureParams {
    pub edge_axial_stiffness: f64,
    pub anchor_stiffness: f64,
    pub mooring_pretension: f64,
    pub mooring_lines: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydroParams {
    pub water_density: f64,
    pub normal_drag_coeff: f64,
    pub tangential_drag_coeff: f64,
    pub solidity: f64,
    pub wave_drag_coeff: f64,
    pub gravity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub rel_tolerance: f64,
    pub disp_tolerance: f64,
    pub max_iterations: usize,
    pub mass_safety: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesParams {
    pub steps: usize,
    pub oscillation_amplitude: f64,
    pub noise_std: f64,
}

/// All physical and numerical constants of the simulator, parsed from the
/// versioned parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub schema: u32,
    pub geometry: GeometryParams,
    pub structure: StructureParams,
    pub hydro: HydroParams,
    pub solver: SolverParams,
    pub series: SeriesParams,
    pub discrepancy: DiscrepancyParams,
    /// SHA-256 of the parameter source text.
    #[serde(skip)]
    pub source_hash: String,
}

/// The parameter file checked into the repository.
pub const DEFAULT_PARAMS_TOML: &str = include_str!("../../../../params/default.toml");

impl SimParams {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let mut params: SimParams =
            toml::from_str(text).map_err(|e| SimError::Params(e.to_string()))?;
        params.source_hash = hex::encode(Sha256::digest(text.as_bytes()));
        Ok(params)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn topology(&self) -> Result<CageTopology, GeometryError> {
        CageTopology::standard(
            self.geometry.diameter,
            self.geometry.cyl_depth,
            self.geometry.bottom_depth,
        )
    }
}

impl Default for SimParams {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_PARAMS_TOML).expect("embedded parameter file parses")
    }
}

/// Virtual sensor layout: load shackles on five upstream bridle lines and
/// three depth sensors on the reference azimuth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    /// Mooring line indices carrying load shackles.
    pub shackle_lines: [usize; 5],
    /// Node indices whose vertical displacement the depth sensors read.
    pub depth_nodes: [usize; 3],
    /// Nominal sensor depths (m), strictly increasing.
    pub depths_m: [f64; 3],
}

impl SensorConfig {
    /// Shackles around the side facing an incoming current that travels
    /// toward azimuth 0; depth sensors at 7 m, 15 m and the bottom.
    pub fn standard(topo: &CageTopology) -> Self {
        Self {
            shackle_lines: [4, 5, 6, 7, 8],
            depth_nodes: [
                topo.node_at_depth(7.0),
                topo.node_at_depth(15.0),
                topo.node_at_depth(31.0),
            ],
            depths_m: [7.0, 15.0, 31.0],
        }
    }

    pub fn validate(&self, mooring_lines: usize, node_count: usize) -> Result<(), SimError> {
        for &l in &self.shackle_lines {
            if l >= mooring_lines {
                return Err(SimError::InvalidSensorIndex(format!(
                    "shackle line {l} out of 0..{mooring_lines}"
                )));
            }
        }
        for &n in &self.depth_nodes {
            if n >= node_count {
                return Err(SimError::InvalidSensorIndex(format!(
                    "depth node {n} out of 0..{node_count}"
                )));
            }
        }
        if !(self.depths_m[0] < self.depths_m[1] && self.depths_m[1] < self.depths_m[2]) {
            return Err(SimError::InvalidSensorIndex(
                "sensor depths must increase strictly".into(),
            ));
        }
        Ok(())
    }
}

/// What the field sensors would report for one cage state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReadings {
    /// kN, one per configured shackle line.
    pub shackle_loads: [f64; 5],
    /// m, vertical displacement at each depth sensor's node.
    pub depth_displacements: [f64; 3],
}

/// Read the configured sensors off a solved cage state.
pub fn sensor_extract(
    def: &CageDeformation,
    loads: &MooringLoads,
    cfg: &SensorConfig,
) -> Result<SensorReadings, SimError> {
    cfg.validate(loads.tensions.len(), def.displacements.nrows())?;
    let mut shackle_loads = [0.0; 5];
    for (k, &l) in cfg.shackle_lines.iter().enumerate() {
        shackle_loads[k] = loads.tensions[l];
    }
    let mut depth_displacements = [0.0; 3];
    for (k, &n) in cfg.depth_nodes.iter().enumerate() {
        depth_displacements[k] = def.displacements[(n, 2)];
    }
    Ok(SensorReadings {
        shackle_loads,
        depth_displacements,
    })
}
