//! Finite-difference oracle for the variational inequality
//! `max{(L - r)V, g - V} = 0`.
//!
//! Independent cross-validation for the Monte-Carlo boundary: no sampling,
//! no integral equation — just the generator of the joint
//! (profit, belief) diffusion on a truncated log-profit lattice, solved by
//! projected SOR, with the boundary read off the contact set.
//!
//! In `s = ln x` the generator reads
//!
//! ```text
//! (L u)(s, pi) = (mu(pi) - sigma^2/2) u_s + sigma^2/2 u_ss
//!              + (mu1 - mu0) pi (1 - pi) u_{s pi}
//!              + ((mu1 - mu0)/sigma)^2 pi^2 (1 - pi)^2 / 2 u_{pi pi}
//! ```
//!
//! with `mu(pi) = mu0 + pi (mu1 - mu0)`. The belief diffusion and the
//! cross term vanish at `pi in {0, 1}`, so those rows are genuine 1-D
//! known-drift problems: they are solved first (same scheme, degenerate
//! row) and then act as Dirichlet data for the interior. Discretization:
//! central second differences, upwinded first-order term, central cross
//! term. The cross term can break strict monotonicity of the scheme; the
//! complementarity residual is the correctness gate.

use serde::{Deserialize, Serialize};

use crate::boundary::{project_into_class, BoundaryCurve};
use crate::closed_form::ClosedFormPack;
use crate::error::{Result, StopwellError};
use crate::model::{payoff_dpi, payoff_dx, ModelParams};

/// Lattice: uniform in `s = ln x` and in `pi`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdeGrid {
    pub s_nodes: Vec<f64>,
    pub pi_nodes: Vec<f64>,
    pub x_nodes: Vec<f64>,
    pub hs: f64,
    pub hp: f64,
}

impl PdeGrid {
    /// Grid centred on the known thresholds: `s` spans
    /// `[ln x*_0 - left_width, ln x*_0 + right_width]`.
    ///
    /// The left edge carries the absorbing condition `V = 0` (the value
    /// vanishes with the profit level), the right edge `V = g` (deep in
    /// the stopping region). Truncation error decays with the widths and
    /// is checked by widening.
    pub fn new(
        pack: &ClosedFormPack,
        ns: usize,
        npi: usize,
        left_width: f64,
        right_width: f64,
    ) -> Result<Self> {
        if ns < 3 {
            return Err(StopwellError::GridTooCoarse("need at least 3 x nodes".into()));
        }
        if npi < 11 {
            return Err(StopwellError::GridTooCoarse(
                "need at least 11 pi nodes for the cross term".into(),
            ));
        }
        if !(left_width > 0.0) || !(right_width > 0.0) {
            return Err(StopwellError::InvalidInput("domain widths must be positive".into()));
        }
        let s_hi = pack.xstar0.ln() + right_width;
        let s_lo = pack.xstar0.ln() - left_width;
        let hs = (s_hi - s_lo) / (ns - 1) as f64;
        let s_nodes: Vec<f64> = (0..ns).map(|i| s_lo + i as f64 * hs).collect();
        let x_nodes: Vec<f64> = s_nodes.iter().map(|&s| s.exp()).collect();
        let hp = 1.0 / (npi - 1) as f64;
        let mut pi_nodes: Vec<f64> = (0..npi).map(|j| j as f64 * hp).collect();
        pi_nodes[npi - 1] = 1.0;
        Ok(PdeGrid { s_nodes, pi_nodes, x_nodes, hs, hp })
    }

    #[inline]
    pub fn ns(&self) -> usize {
        self.s_nodes.len()
    }

    #[inline]
    pub fn npi(&self) -> usize {
        self.pi_nodes.len()
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.npi() + j
    }
}

/// Discrete `(L - r)` on the grid; one coefficient set per pi column.
#[derive(Debug, Clone)]
pub struct GeneratorStencil {
    grid: PdeGrid,
    /// Upwinded first-order s coefficient per column.
    a1: Vec<f64>,
    /// Cross coefficient per column.
    rho: Vec<f64>,
    /// Belief diffusion coefficient per column.
    a3: Vec<f64>,
    a2: f64,
    r: f64,
}

/// Builds the discrete generator. Rejects grids too coarse for the cross
/// term.
pub fn build_generator_stencil(params: &ModelParams, grid: PdeGrid) -> Result<GeneratorStencil> {
    if grid.npi() < 11 {
        return Err(StopwellError::GridTooCoarse(
            "need at least 11 pi nodes for the cross term".into(),
        ));
    }
    let dmu = params.mu1 - params.mu0;
    let s2 = params.sigma * params.sigma;
    let a1 = grid.pi_nodes.iter().map(|&p| params.drift_at(p) - 0.5 * s2).collect();
    let rho = grid.pi_nodes.iter().map(|&p| dmu * p * (1.0 - p)).collect();
    let a3 = grid
        .pi_nodes
        .iter()
        .map(|&p| 0.5 * (dmu / params.sigma).powi(2) * p * p * (1.0 - p) * (1.0 - p))
        .collect();
    Ok(GeneratorStencil { a2: 0.5 * s2, r: params.r, a1, rho, a3, grid })
}

impl GeneratorStencil {
    pub fn grid(&self) -> &PdeGrid {
        &self.grid
    }

    /// `(L - r)` applied to grid values at node `(i, j)`; `i` must be
    /// interior. Rows `j in {0, npi-1}` use the degenerate 1-D generator.
    pub fn residual_at(&self, v: &[f64], i: usize, j: usize) -> f64 {
        let g = &self.grid;
        let (ns, npi) = (g.ns(), g.npi());
        debug_assert!(i > 0 && i + 1 < ns);
        let id = |i: usize, j: usize| g.idx(i, j);
        let hs = g.hs;
        let center = v[id(i, j)];
        let u_ss = (v[id(i + 1, j)] - 2.0 * center + v[id(i - 1, j)]) / (hs * hs);
        let u_s = if self.a1[j] >= 0.0 {
            (v[id(i + 1, j)] - center) / hs
        } else {
            (center - v[id(i - 1, j)]) / hs
        };
        let mut acc = self.a1[j] * u_s + self.a2 * u_ss - self.r * center;
        if j > 0 && j + 1 < npi {
            let hp = g.hp;
            let u_pp = (v[id(i, j + 1)] - 2.0 * center + v[id(i, j - 1)]) / (hp * hp);
            let u_sp = (v[id(i + 1, j + 1)] - v[id(i + 1, j - 1)] - v[id(i - 1, j + 1)]
                + v[id(i - 1, j - 1)])
                / (4.0 * hs * hp);
            acc += self.a3[j] * u_pp + self.rho[j] * u_sp;
        }
        acc
    }

    /// `(L - r)` applied to a smooth function sampled on the grid, at all
    /// nodes with interior `i` (includes the degenerate boundary rows).
    pub fn apply<F>(&self, field: F) -> Vec<Vec<f64>>
    where
        F: Fn(f64, f64) -> f64,
    {
        let g = &self.grid;
        let v: Vec<f64> = (0..g.ns())
            .flat_map(|i| {
                let x = g.x_nodes[i];
                g.pi_nodes.iter().map(move |&p| (x, p))
            })
            .map(|(x, p)| field(x, p))
            .collect();
        (1..g.ns() - 1)
            .map(|i| (0..g.npi()).map(|j| self.residual_at(&v, i, j)).collect())
            .collect()
    }
}

/// Sweep ordering of the projected SOR iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepOrder {
    /// Deterministic single-threaded Gauss-Seidel ordering (default).
    #[default]
    Lexicographic,
    /// Two-colour ordering; same fixed point within tolerance.
    RedBlack,
}

/// Obstacle-problem solution on the grid.
#[derive(Debug, Clone)]
pub struct GridSolution {
    pub grid: PdeGrid,
    pub params: ModelParams,
    /// Value surface, row-major over (x index, pi index).
    pub v: Vec<f64>,
    /// Payoff surface.
    pub g: Vec<f64>,
    /// Contact set: `v - g < eps_contact`.
    pub stop_mask: Vec<bool>,
    pub eps_contact: f64,
    pub sweeps: usize,
}

/// Per-row smooth-fit mismatch of one-sided derivatives against the
/// payoff gradient at the extracted boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothFitReport {
    pub pi: Vec<f64>,
    pub dx_mismatch: Vec<f64>,
    pub dpi_mismatch: Vec<f64>,
    pub max_dx_mismatch: f64,
    pub max_dpi_mismatch: f64,
}

fn payoff_on_grid(params: &ModelParams, grid: &PdeGrid) -> Vec<f64> {
    let mut g = vec![0.0; grid.ns() * grid.npi()];
    for i in 0..grid.ns() {
        for j in 0..grid.npi() {
            g[grid.idx(i, j)] =
                grid.x_nodes[i] * params.perpetuity_factor(grid.pi_nodes[j]) - params.invest_cost;
        }
    }
    g
}

/// 1-D projected SOR for a known-drift row.
fn solve_row(
    stencil: &GeneratorStencil,
    v: &mut [f64],
    g: &[f64],
    j: usize,
    tol: f64,
    max_sweeps: usize,
) -> Result<usize> {
    let grid = &stencil.grid;
    let ns = grid.ns();
    let hs = grid.hs;
    let a1 = stencil.a1[j];
    let a2 = stencil.a2;
    let diag = -2.0 * a2 / (hs * hs) - stencil.r - a1.abs() / hs;
    let cu = a2 / (hs * hs) + if a1 >= 0.0 { a1 / hs } else { 0.0 };
    let cd = a2 / (hs * hs) + if a1 < 0.0 { -a1 / hs } else { 0.0 };
    let omega = 1.9;
    for sweep in 0..max_sweeps {
        let mut diff: f64 = 0.0;
        for i in 1..ns - 1 {
            let rhs = cu * v[grid.idx(i + 1, j)] + cd * v[grid.idx(i - 1, j)];
            let gs = -rhs / diag;
            let id = grid.idx(i, j);
            let relaxed = v[id] + omega * (gs - v[id]);
            let vnew = relaxed.max(g[id]);
            diff = diff.max((vnew - v[id]).abs());
            v[id] = vnew;
        }
        if diff < tol {
            return Ok(sweep + 1);
        }
    }
    Err(StopwellError::PdeNonConvergence { max_sweeps, last_update: f64::NAN })
}

/// Solves the obstacle problem by projected SOR.
///
/// The two `pi` rows are solved first as 1-D problems and then act as
/// Dirichlet data; the left x edge is 0, the right edge is pinned to the
/// payoff. Sweeps run until the largest nodal update falls below
/// `tol * x*_0`.
pub fn solve_obstacle(
    pack: &ClosedFormPack,
    grid: PdeGrid,
    tol: f64,
    max_sweeps: usize,
    omega: f64,
    order: SweepOrder,
) -> Result<GridSolution> {
    if !(0.0 < omega && omega < 2.0) {
        return Err(StopwellError::InvalidInput(format!(
            "SOR relaxation must lie in (0, 2), got {omega}"
        )));
    }
    let params = pack.params;
    let stencil = build_generator_stencil(&params, grid)?;
    let grid = stencil.grid.clone();
    let (ns, npi) = (grid.ns(), grid.npi());
    let g = payoff_on_grid(&params, &grid);
    let mut v: Vec<f64> = g.iter().map(|&gv| gv.max(0.0)).collect();

    // Dirichlet data: degenerate rows, then the x edges
    let row_tol = 1e-13 * pack.xstar0;
    solve_row(&stencil, &mut v, &g, 0, row_tol, max_sweeps)?;
    solve_row(&stencil, &mut v, &g, npi - 1, row_tol, max_sweeps)?;
    for j in 0..npi {
        v[grid.idx(0, j)] = 0.0;
        let id = grid.idx(ns - 1, j);
        v[id] = g[id];
    }

    let hs = grid.hs;
    let hp = grid.hp;
    let a2 = stencil.a2;
    // per-column coefficients of the interior linear system
    let mut diag = vec![0.0; npi];
    let mut c_up = vec![0.0; npi];
    let mut c_dn = vec![0.0; npi];
    let mut c_n = vec![0.0; npi];
    let mut c_x = vec![0.0; npi];
    for j in 1..npi - 1 {
        let a1 = stencil.a1[j];
        diag[j] = -2.0 * a2 / (hs * hs) - 2.0 * stencil.a3[j] / (hp * hp)
            - params.r
            - a1.abs() / hs;
        c_up[j] = a2 / (hs * hs) + if a1 >= 0.0 { a1 / hs } else { 0.0 };
        c_dn[j] = a2 / (hs * hs) + if a1 < 0.0 { -a1 / hs } else { 0.0 };
        c_n[j] = stencil.a3[j] / (hp * hp);
        c_x[j] = stencil.rho[j] / (4.0 * hs * hp);
    }

    let tol_abs = tol * pack.xstar0;
    let mut sweeps = 0;
    'outer: for sweep in 0..max_sweeps {
        let mut diff: f64 = 0.0;
        let colors: &[Option<usize>] = match order {
            SweepOrder::Lexicographic => &[None],
            SweepOrder::RedBlack => &[Some(0), Some(1)],
        };
        for &color in colors {
            for j in 1..npi - 1 {
                for i in 1..ns - 1 {
                    if let Some(c) = color {
                        if (i + j) % 2 != c {
                            continue;
                        }
                    }
                    let rhs = c_up[j] * v[grid.idx(i + 1, j)]
                        + c_dn[j] * v[grid.idx(i - 1, j)]
                        + c_n[j] * (v[grid.idx(i, j + 1)] + v[grid.idx(i, j - 1)])
                        + c_x[j]
                            * (v[grid.idx(i + 1, j + 1)] - v[grid.idx(i + 1, j - 1)]
                                - v[grid.idx(i - 1, j + 1)]
                                + v[grid.idx(i - 1, j - 1)]);
                    let gs = -rhs / diag[j];
                    let id = grid.idx(i, j);
                    let relaxed = v[id] + omega * (gs - v[id]);
                    let vnew = relaxed.max(g[id]);
                    diff = diff.max((vnew - v[id]).abs());
                    v[id] = vnew;
                }
            }
        }
        sweeps = sweep + 1;
        if diff < tol_abs {
            break 'outer;
        }
        if sweep + 1 == max_sweeps {
            return Err(StopwellError::PdeNonConvergence { max_sweeps, last_update: diff });
        }
    }

    let eps_contact = 1e-6 * pack.xstar0;
    let stop_mask = v
        .iter()
        .zip(&g)
        .map(|(&vv, &gv)| vv - gv < eps_contact)
        .collect();
    Ok(GridSolution { grid, params, v, g, stop_mask, eps_contact, sweeps })
}

impl GridSolution {
    /// Max over interior nodes of `min(|(L - r)V|, |V - g|)`: at every
    /// node at least one side of the complementarity pair must vanish.
    pub fn complementarity_residual(&self) -> f64 {
        let stencil = build_generator_stencil(&self.params, self.grid.clone())
            .expect("grid was accepted before");
        let mut worst: f64 = 0.0;
        for i in 1..self.grid.ns() - 1 {
            for j in 1..self.grid.npi() - 1 {
                let res = stencil.residual_at(&self.v, i, j).abs();
                let contact = (self.v[self.grid.idx(i, j)] - self.g[self.grid.idx(i, j)]).abs();
                worst = worst.max(res.min(contact));
            }
        }
        worst
    }

    /// Whether every pi row's contact set is an upper x interval.
    pub fn stop_mask_is_up_monotone(&self) -> bool {
        for j in 0..self.grid.npi() {
            let mut seen_stop = false;
            for i in 0..self.grid.ns() {
                let m = self.stop_mask[self.grid.idx(i, j)];
                if seen_stop && !m {
                    return false;
                }
                seen_stop |= m;
            }
        }
        true
    }
}

/// Reads the boundary off the contact set: per pi row, the first stopping
/// node, refined by linear interpolation of `V - g` across the last
/// continuation cell, then projected into the admissible class.
pub fn extract_boundary(pack: &ClosedFormPack, sol: &GridSolution) -> Result<BoundaryCurve> {
    let grid = &sol.grid;
    let (ns, npi) = (grid.ns(), grid.npi());
    let mut values = Vec::with_capacity(npi);
    for j in 0..npi {
        let first = (0..ns).find(|&i| sol.stop_mask[grid.idx(i, j)]);
        let Some(i1) = first else {
            return Err(StopwellError::EmptyStoppingRow(grid.pi_nodes[j]));
        };
        if i1 == 0 {
            values.push(grid.x_nodes[0]);
            continue;
        }
        let d0 = sol.v[grid.idx(i1 - 1, j)] - sol.g[grid.idx(i1 - 1, j)];
        let d1 = sol.v[grid.idx(i1, j)] - sol.g[grid.idx(i1, j)];
        let w = if d0 > d1 { (d0 / (d0 - d1)).clamp(0.0, 1.0) } else { 1.0 };
        values.push(grid.x_nodes[i1 - 1] + w * (grid.x_nodes[i1] - grid.x_nodes[i1 - 1]));
    }
    project_into_class(pack, &grid.pi_nodes, &values)
}

/// One-sided difference quotients of V across the extracted boundary in
/// both directions, compared against the payoff gradient. First-order
/// consistent: the mismatch should shrink linearly under grid refinement.
pub fn smooth_fit_diagnostic(sol: &GridSolution, boundary: &BoundaryCurve) -> SmoothFitReport {
    let grid = &sol.grid;
    let (ns, npi) = (grid.ns(), grid.npi());
    let mut pi = Vec::new();
    let mut dxm = Vec::new();
    let mut dpim = Vec::new();
    for j in 1..npi - 1 {
        let p = grid.pi_nodes[j];
        let b = boundary.eval(p);
        // last node on the continuation side of the boundary
        let Some(i) = (0..ns).rev().find(|&i| grid.x_nodes[i] <= b) else {
            continue;
        };
        if i < 2 || i + 1 >= ns {
            continue;
        }
        let dvdx = (sol.v[grid.idx(i, j)] - sol.v[grid.idx(i - 1, j)])
            / (grid.x_nodes[i] - grid.x_nodes[i - 1]);
        let dvdpi = (sol.v[grid.idx(i, j)] - sol.v[grid.idx(i, j - 1)]) / grid.hp;
        pi.push(p);
        dxm.push((dvdx - payoff_dx(&sol.params, p)).abs());
        dpim.push((dvdpi - payoff_dpi(&sol.params, grid.x_nodes[i])).abs());
    }
    let max_dx_mismatch = dxm.iter().copied().fold(0.0, f64::max);
    let max_dpi_mismatch = dpim.iter().copied().fold(0.0, f64::max);
    SmoothFitReport { pi, dx_mismatch: dxm, dpi_mismatch: dpim, max_dx_mismatch, max_dpi_mismatch }
}
