//! Quasi-static deformation of the elastic net under current and wave drag.
//!
//! The net is an elastic edge network hanging from a fixed collar (layer 1).
//! Buoyancy and weight are pre-balanced at rest, so the rest state carries no
//! net force; a small per-node anchor stiffness stands in for the lateral
//! geometric stiffness the pretensioned twines would provide. Drag acts on
//! the net panels (quads between rings, triangles to the bottom node) with
//! the screen model: quadratic in the normal relative velocity, scaled by
//! solidity, plus a small tangential term. Waves contribute an averaged
//! drag along the wave direction from the depth-decayed orbital velocity.
//!
//! Equilibrium is found by dynamic relaxation with kinetic damping: explicit
//! pseudo-time stepping with per-node masses matched to the local stiffness,
//! velocities zeroed whenever kinetic energy peaks. Deterministic.
//!
//! Mooring tensions are read out from the horizontal force balance: twelve
//! evenly spread lines share the total horizontal drag carried by the
//! collar, so line l sees `pretension - (D . d_l) / 6` (clamped at zero),
//! `d_l` its outward unit direction. The spread factor 6 is `sum cos^2`
//! over twelve even azimuths.

use super::topology::{CageTopology, BOTTOM_NODE, LAYERS, NODE_COUNT, RING_NODES};
use super::{SeaState, SimParams};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("no convergence after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Per-node displacement from rest, with the sea state that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CageDeformation {
    /// N x 3 (m).
    pub displacements: DMatrix<f64>,
    pub sea_state: SeaState,
}

/// Tensions of the twelve bridle lines, indexed by azimuth order (kN).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MooringLoads {
    pub tensions: Vec<f64>,
}

/// Convergence report kept alongside each solve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
    pub elastic_energy: f64,
}

struct Panels {
    /// Quad panels as corner node indices.
    quads: Vec<[usize; 4]>,
    /// Triangle panels to the bottom node.
    tris: Vec<[usize; 3]>,
}

fn build_panels() -> Panels {
    let mut quads = Vec::with_capacity((LAYERS - 1) * RING_NODES);
    for layer in 1..LAYERS {
        for j in 0..RING_NODES {
            let a = (layer - 1) * RING_NODES + j;
            let b = (layer - 1) * RING_NODES + (j + 1) % RING_NODES;
            let c = layer * RING_NODES + (j + 1) % RING_NODES;
            let d = layer * RING_NODES + j;
            quads.push([a, b, c, d]);
        }
    }
    let mut tris = Vec::with_capacity(RING_NODES);
    for j in 0..RING_NODES {
        let a = (LAYERS - 1) * RING_NODES + j;
        let b = (LAYERS - 1) * RING_NODES + (j + 1) % RING_NODES;
        tris.push([a, b, BOTTOM_NODE]);
    }
    Panels { quads, tris }
}

#[inline]
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Accumulate drag forces onto `force`; returns the total horizontal load (N).
fn accumulate_drag(
    pos: &[[f64; 3]],
    panels: &Panels,
    sea: &SeaState,
    p: &SimParams,
    force: &mut [[f64; 3]],
) -> [f64; 2] {
    let speed = sea.current_speed;
    let dir = sea.current_dir.to_radians();
    let v = [speed * dir.cos(), speed * dir.sin(), 0.0];
    let half_rho_s = 0.5 * p.hydro.water_density * p.hydro.solidity;

    let wave_on = sea.sig_wave_height > 0.0 && sea.peak_period > 0.5;
    let (wave_dirx, wave_diry, orb_coeff, wave_decay) = if wave_on {
        let wd = sea.wave_dir.to_radians();
        let orb = std::f64::consts::PI * sea.sig_wave_height / sea.peak_period;
        let omega = 2.0 * std::f64::consts::PI / sea.peak_period;
        let k_w = omega * omega / p.hydro.gravity;
        (wd.cos(), wd.sin(), orb, k_w)
    } else {
        (0.0, 0.0, 0.0, 0.0)
    };

    let mut total = [0.0f64; 2];
    let mut apply_panel = |nodes: &[usize], area_vec: [f64; 3], z_mean: f64| {
        let area = (area_vec[0] * area_vec[0] + area_vec[1] * area_vec[1] + area_vec[2] * area_vec[2])
            .sqrt();
        if area < 1e-12 {
            return;
        }
        let n = [area_vec[0] / area, area_vec[1] / area, area_vec[2] / area];
        let vn = v[0] * n[0] + v[1] * n[1] + v[2] * n[2];
        let mut f = [0.0f64; 3];
        // normal screen drag, sign carried by vn
        let fn_mag = half_rho_s * p.hydro.normal_drag_coeff * area * vn.abs() * vn;
        for c in 0..3 {
            f[c] += fn_mag * n[c];
        }
        // tangential skin drag
        let vt = [v[0] - vn * n[0], v[1] - vn * n[1], v[2] - vn * n[2]];
        let vt_mag = (vt[0] * vt[0] + vt[1] * vt[1] + vt[2] * vt[2]).sqrt();
        let ft_coeff = half_rho_s * p.hydro.tangential_drag_coeff * area * vt_mag;
        for c in 0..3 {
            f[c] += ft_coeff * vt[c];
        }
        // averaged wave drift drag along the wave direction
        if wave_on {
            let orb = orb_coeff * (wave_decay * z_mean).exp();
            let fw = half_rho_s * p.hydro.wave_drag_coeff * area * 0.5 * orb * orb;
            f[0] += fw * wave_dirx;
            f[1] += fw * wave_diry;
        }
        total[0] += f[0];
        total[1] += f[1];
        let share = 1.0 / nodes.len() as f64;
        for &node in nodes {
            for c in 0..3 {
                force[node][c] += f[c] * share;
            }
        }
    };

    for q in &panels.quads {
        let (a, b, c, d) = (pos[q[0]], pos[q[1]], pos[q[2]], pos[q[3]]);
        let d1 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let d2 = [d[0] - b[0], d[1] - b[1], d[2] - b[2]];
        let av = cross(d1, d2).map(|x| 0.5 * x);
        let zm = 0.25 * (a[2] + b[2] + c[2] + d[2]);
        apply_panel(q, av, zm);
    }
    for t in &panels.tris {
        let (a, b, c) = (pos[t[0]], pos[t[1]], pos[t[2]]);
        let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let av = cross(e1, e2).map(|x| 0.5 * x);
        let zm = (a[2] + b[2] + c[2]) / 3.0;
        apply_panel(t, av, zm);
    }
    total
}

/// Mooring tensions from the horizontal load carried by the collar.
fn mooring_from_load(total_n: [f64; 2], p: &SimParams) -> MooringLoads {
    let lines = p.structure.mooring_lines;
    let spread = lines as f64 / 2.0;
    let tensions = (0..lines)
        .map(|l| {
            let phi = 2.0 * std::f64::consts::PI * l as f64 / lines as f64;
            let d = [phi.cos(), phi.sin()];
            let delta_kn = -(total_n[0] * d[0] + total_n[1] * d[1]) / spread / 1000.0;
            (p.structure.mooring_pretension + delta_kn).max(0.0)
        })
        .collect();
    MooringLoads { tensions }
}

/// Solve the quasi-static equilibrium for one sea state.
///
/// Zero external load returns the rest state exactly. Convergence demands
/// the residual force drop below `rel_tolerance` times the external load
/// and below the absolute floor `anchor_stiffness * disp_tolerance`.
pub fn solve_equilibrium(
    topo: &CageTopology,
    sea: &SeaState,
    p: &SimParams,
) -> Result<(CageDeformation, MooringLoads, SolveStats), SolveError> {
    if p.structure.edge_axial_stiffness <= 0.0 || p.structure.anchor_stiffness <= 0.0 {
        return Err(SolveError::InvalidParams("stiffness must be positive".into()));
    }
    if p.solver.rel_tolerance <= 0.0 || p.solver.disp_tolerance <= 0.0 {
        return Err(SolveError::InvalidParams("tolerances must be positive".into()));
    }
    let n = topo.node_count();
    let panels = build_panels();
    let rest: Vec<[f64; 3]> = (0..n)
        .map(|i| {
            [
                topo.rest_positions[(i, 0)],
                topo.rest_positions[(i, 1)],
                topo.rest_positions[(i, 2)],
            ]
        })
        .collect();
    let rest_len: Vec<f64> = topo
        .edges
        .iter()
        .map(|&(i, j)| {
            let d = [
                rest[j][0] - rest[i][0],
                rest[j][1] - rest[i][1],
                rest[j][2] - rest[i][2],
            ];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
        })
        .collect();
    let edge_k: Vec<f64> = rest_len
        .iter()
        .map(|l| p.structure.edge_axial_stiffness / l.max(1e-6))
        .collect();

    // per-node pseudo-mass matched to incident stiffness
    let mut stiff_sum = vec![p.structure.anchor_stiffness; n];
    for (e, &(i, j)) in topo.edges.iter().enumerate() {
        stiff_sum[i] += edge_k[e];
        stiff_sum[j] += edge_k[e];
    }
    let masses: Vec<f64> = stiff_sum.iter().map(|k| p.solver.mass_safety * 0.5 * k).collect();

    let free = |i: usize| i >= RING_NODES; // layer 1 is the fixed collar

    let mut pos = rest.clone();
    let mut vel = vec![[0.0f64; 3]; n];
    let mut force = vec![[0.0f64; 3]; n];
    let mut ke_prev = 0.0f64;
    let mut iterations = 0usize;
    let mut residual_rel = 0.0;
    let mut total_h = [0.0f64; 2];
    let force_floor = p.structure.anchor_stiffness * p.solver.disp_tolerance;

    for iter in 0..p.solver.max_iterations {
        iterations = iter;
        for f in force.iter_mut() {
            *f = [0.0; 3];
        }
        let mut ext_norm2 = 0.0f64;
        total_h = accumulate_drag(&pos, &panels, sea, p, &mut force);
        for (i, f) in force.iter().enumerate() {
            if free(i) {
                ext_norm2 += f[0] * f[0] + f[1] * f[1] + f[2] * f[2];
            }
        }
        // elastic edges
        for (e, &(i, j)) in topo.edges.iter().enumerate() {
            let d = [
                pos[j][0] - pos[i][0],
                pos[j][1] - pos[i][1],
                pos[j][2] - pos[i][2],
            ];
            let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-9);
            let t = edge_k[e] * (len - rest_len[e]) / len;
            for c in 0..3 {
                force[i][c] += t * d[c];
                force[j][c] -= t * d[c];
            }
        }
        // anchor springs on displacement
        for i in 0..n {
            if free(i) {
                for c in 0..3 {
                    force[i][c] -= p.structure.anchor_stiffness * (pos[i][c] - rest[i][c]);
                }
            }
        }

        let mut res2 = 0.0f64;
        for (i, f) in force.iter().enumerate() {
            if free(i) {
                res2 += f[0] * f[0] + f[1] * f[1] + f[2] * f[2];
            }
        }
        let res = res2.sqrt();
        let ext = ext_norm2.sqrt();
        residual_rel = if ext > 0.0 { res / ext } else { 0.0 };
        let res_max = force
            .iter()
            .enumerate()
            .filter(|(i, _)| free(*i))
            .map(|(_, f)| f[0].abs().max(f[1].abs()).max(f[2].abs()))
            .fold(0.0f64, f64::max);
        if (ext == 0.0 && res == 0.0)
            || (residual_rel < p.solver.rel_tolerance && res_max < force_floor)
        {
            break;
        }

        // explicit step with kinetic damping
        let mut ke = 0.0f64;
        for i in 0..n {
            if !free(i) {
                continue;
            }
            for c in 0..3 {
                vel[i][c] += force[i][c] / masses[i];
                pos[i][c] += vel[i][c];
            }
            ke += masses[i]
                * (vel[i][0] * vel[i][0] + vel[i][1] * vel[i][1] + vel[i][2] * vel[i][2]);
        }
        if ke < ke_prev {
            for v in vel.iter_mut() {
                *v = [0.0; 3];
            }
            ke = 0.0;
        }
        ke_prev = ke;
    }

    if iterations + 1 >= p.solver.max_iterations {
        return Err(SolveError::NoConvergence {
            residual: residual_rel,
            iterations,
        });
    }

    let mut displacements = DMatrix::zeros(n, 3);
    for i in 0..n {
        for c in 0..3 {
            displacements[(i, c)] = pos[i][c] - rest[i][c];
        }
    }
    let mut elastic = 0.0;
    for (e, &(i, j)) in topo.edges.iter().enumerate() {
        let d = [
            pos[j][0] - pos[i][0],
            pos[j][1] - pos[i][1],
            pos[j][2] - pos[i][2],
        ];
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        elastic += 0.5 * edge_k[e] * (len - rest_len[e]).powi(2);
    }
    for i in RING_NODES..n {
        let u2 = displacements.row(i).norm_squared();
        elastic += 0.5 * p.structure.anchor_stiffness * u2;
    }

    let loads = mooring_from_load(total_h, p);
    Ok((
        CageDeformation {
            displacements,
            sea_state: sea.clone(),
        },
        loads,
        SolveStats {
            iterations,
            residual: residual_rel,
            elastic_energy: elastic,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SimParams;

    fn setup() -> (CageTopology, SimParams) {
        let p = SimParams::default();
        let topo = CageTopology::standard(
            p.geometry.diameter,
            p.geometry.cyl_depth,
            p.geometry.bottom_depth,
        )
        .unwrap();
        (topo, p)
    }

    #[test]
    fn zero_current_is_rest_state() {
        let (topo, p) = setup();
        let sea = SeaState::calm();
        let (def, loads, stats) = solve_equilibrium(&topo, &sea, &p).unwrap();
        assert!(def.displacements.amax() < 1e-8);
        assert_eq!(stats.iterations, 0);
        for t in &loads.tensions {
            assert!((t - p.structure.mooring_pretension).abs() < 1e-8);
        }
    }

    #[test]
    fn current_pushes_cage_downstream() {
        let (topo, p) = setup();
        let sea = SeaState::current_only(0.5, 0.0);
        let (def, loads, stats) = solve_equilibrium(&topo, &sea, &p).unwrap();
        assert!(stats.residual < p.solver.rel_tolerance);
        // bottom node swept along +x, lifted upward
        let bx = def.displacements[(NODE_COUNT - 1, 0)];
        let bz = def.displacements[(NODE_COUNT - 1, 2)];
        assert!(bx > 0.5, "bottom x displacement {bx}");
        assert!(bz > 0.0, "bottom z displacement {bz}");
        // upstream line (azimuth 180) carries the most load
        let t_up = loads.tensions[6];
        let t_down = loads.tensions[0];
        assert!(t_up > t_down);
    }

    #[test]
    fn rotational_equivariance_one_ring_step() {
        let (topo, mut p) = setup();
        p.solver.disp_tolerance = 1e-8;
        let (d0, _, _) = solve_equilibrium(&topo, &SeaState::current_only(0.6, 0.0), &p).unwrap();
        let (d1, _, _) =
            solve_equilibrium(&topo, &SeaState::current_only(0.6, 11.25), &p).unwrap();
        let rot = 11.25f64.to_radians();
        let (s, c) = rot.sin_cos();
        let mut worst = 0.0f64;
        for layer in 1..=LAYERS {
            for j in 0..RING_NODES {
                let from = super::super::topology::ring_node(layer, j);
                let to = super::super::topology::ring_node(layer, j + 1);
                let (ux, uy, uz) = (
                    d0.displacements[(from, 0)],
                    d0.displacements[(from, 1)],
                    d0.displacements[(from, 2)],
                );
                let expect = [c * ux - s * uy, s * ux + c * uy, uz];
                for comp in 0..3 {
                    worst = worst.max((d1.displacements[(to, comp)] - expect[comp]).abs());
                }
            }
        }
        assert!(worst < 1e-6, "worst node mismatch {worst}");
    }

    #[test]
    fn mirror_symmetry_about_flow_axis() {
        let (topo, mut p) = setup();
        p.solver.disp_tolerance = 1e-8;
        let (da, _, _) = solve_equilibrium(&topo, &SeaState::current_only(0.6, 33.75), &p).unwrap();
        let (db, _, _) =
            solve_equilibrium(&topo, &SeaState::current_only(0.6, -33.75), &p).unwrap();
        let mut worst = 0.0f64;
        for layer in 1..=LAYERS {
            for j in 0..RING_NODES {
                let from = super::super::topology::ring_node(layer, j);
                let to = super::super::topology::ring_node(layer, (RING_NODES - j) % RING_NODES);
                worst = worst
                    .max((da.displacements[(from, 0)] - db.displacements[(to, 0)]).abs())
                    .max((da.displacements[(from, 1)] + db.displacements[(to, 1)]).abs())
                    .max((da.displacements[(from, 2)] - db.displacements[(to, 2)]).abs());
            }
        }
        assert!(worst < 1e-6, "worst mirror mismatch {worst}");
    }

    /// Sweep oracle: quadratic drag must give monotone loads and energy.
    #[test]
    fn load_and_energy_monotone_in_speed() {
        let (topo, p) = setup();
        let mut prev_max = -1.0;
        let mut prev_sum = -1.0;
        let mut prev_energy = -1.0;
        for k in 0..8 {
            let speed = k as f64 / 7.0;
            let (_, loads, stats) =
                solve_equilibrium(&topo, &SeaState::current_only(speed, 45.0), &p).unwrap();
            let max_t = loads.tensions.iter().cloned().fold(0.0f64, f64::max);
            let sum_t: f64 = loads.tensions.iter().sum();
            assert!(max_t >= prev_max, "max tension dropped at {speed}");
            assert!(sum_t >= prev_sum - 1e-9, "sum tension dropped at {speed}");
            assert!(stats.elastic_energy >= prev_energy, "energy dropped at {speed}");
            assert!(loads.tensions.iter().all(|t| *t >= 0.0));
            prev_max = max_t;
            prev_sum = sum_t;
            prev_energy = stats.elastic_energy;
        }
        assert!(prev_max > p.structure.mooring_pretension);
    }

    #[test]
    fn hopeless_iteration_budget_reports_no_convergence() {
        let (topo, mut p) = setup();
        p.solver.max_iterations = 3;
        let err = solve_equilibrium(&topo, &SeaState::current_only(0.8, 0.0), &p).unwrap_err();
        assert!(matches!(err, SolveError::NoConvergence { .. }));
    }
}
