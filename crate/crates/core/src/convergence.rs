//! Refinement sweeps against closed-form solutions.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::SpaceTimeGrid;
use crate::solver::{solve_forward, DirichletData, ElectromagneticPotential};
use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Study {
    /// Free Dirichlet eigenmode `sin(πx)e^{−iπ²t}` on `(0,1)`.
    Eigenmode,
    /// `‖u_{∇ψ} − e^{−iψ}u₀‖` for `ψ = 0.3 sin(πx)`.
    Gauge,
}

impl Study {
    pub fn name(self) -> &'static str {
        match self {
            Study::Eigenmode => "eigenmode",
            Study::Gauge => "gauge",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "eigenmode" => Some(Study::Eigenmode),
            "gauge" => Some(Study::Gauge),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub nx: usize,
    pub nt: usize,
    pub h: f64,
    pub tau: f64,
    /// `L²(Q)` error.
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceSweep {
    pub study: Study,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceSweep {
    /// `e_k / e_{k+1}` for consecutive levels.
    pub fn ratios(&self) -> Vec<f64> {
        self.rows.windows(2).map(|w| w[0].error / w[1].error).collect()
    }

    /// `log(e_k/e_{k+1}) / log(h_k/h_{k+1})`.
    pub fn orders(&self) -> Vec<f64> {
        self.rows
            .windows(2)
            .map(|w| (w[0].error / w[1].error).ln() / (w[0].h / w[1].h).ln())
            .collect()
    }
}

/// Observed orders of a sequence of errors under halving.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

fn check_levels(nxs: &[usize]) -> Result<()> {
    if nxs.len() < 2 {
        return Err(Error::InvalidParameter("a refinement sweep needs at least two levels".into()));
    }
    if nxs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(format!("levels must increase: {nxs:?}")));
    }
    Ok(())
}

fn eigenmode_error(nx: usize, t_final: f64) -> Result<ConvergenceRow> {
    let g = SpaceTimeGrid::unit(1, nx, nx, t_final)?;
    let pot = ElectromagneticPotential::zero(&g);
    let u0 = g.sample(|x| C64::new((PI * x[0]).sin(), 0.0));
    let sol = solve_forward(&g, &pot, &u0.view(), &DirichletData::zero(&g))?;
    let exact = g.sample_spacetime(|x, t| (PI * x[0]).sin() * C64::from_polar(1.0, -PI * PI * t));
    Ok(ConvergenceRow { nx, nt: nx, h: g.h(0), tau: g.tau(), error: g.norm_spacetime(&(&sol.u - &exact).view()) })
}

fn gauge_error(nx: usize, t_final: f64) -> Result<ConvergenceRow> {
    let g = SpaceTimeGrid::unit(1, nx, nx, t_final)?;
    let psi = |x: [f64; 2]| 0.3 * (PI * x[0]).sin();
    let gauge = ElectromagneticPotential::from_fn(
        &g,
        |_| C64::new(0.0, 0.0),
        |x| [0.3 * PI * (PI * x[0]).cos(), 0.0],
        |x| -0.3 * PI * PI * (PI * x[0]).sin(),
    )?;
    let u0 = g.sample(|x| (PI * x[0]).sin().powi(3) * C64::new(1.0, x[0]));
    let u0_gauged = g.sample(|x| C64::from_polar(1.0, -psi(x)) * (PI * x[0]).sin().powi(3) * C64::new(1.0, x[0]));
    let data = DirichletData::zero(&g);
    let free = solve_forward(&g, &ElectromagneticPotential::zero(&g), &u0.view(), &data)?;
    let with_a = solve_forward(&g, &gauge, &u0_gauged.view(), &data)?;
    let phase = g.sample(|x| C64::from_polar(1.0, -psi(x)));
    let mut diff = with_a.u.clone();
    for (mut row, free_row) in diff.rows_mut().into_iter().zip(free.u.rows()) {
        for p in 0..g.n_nodes() {
            row[p] -= phase[p] * free_row[p];
        }
    }
    Ok(ConvergenceRow { nx, nt: nx, h: g.h(0), tau: g.tau(), error: g.norm_spacetime(&diff.view()) })
}

/// Simultaneous `(h, τ)` refinement with `nt = nx` on `(0,1) × (0,T)`.
pub fn run_sweep(study: Study, nxs: &[usize], t_final: f64, exec: Execution) -> Result<ConvergenceSweep> {
    check_levels(nxs)?;
    let rows = exec.map(nxs, |&nx| match study {
        Study::Eigenmode => eigenmode_error(nx, t_final),
        Study::Gauge => gauge_error(nx, t_final),
    });
    Ok(ConvergenceSweep { study, rows: rows.into_iter().collect::<Result<_>>()? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenmode_is_second_order() {
        let sweep = run_sweep(Study::Eigenmode, &[26, 51, 101], 1.0, Execution::Sequential).unwrap();
        for r in sweep.ratios() {
            assert!((3.4..=4.6).contains(&r), "{r}");
        }
    }

    #[test]
    fn gauge_defect_shrinks() {
        let sweep = run_sweep(Study::Gauge, &[26, 51, 101], 1.0, Execution::Sequential).unwrap();
        for o in sweep.orders() {
            assert!(o > 1.8, "{o}");
        }
    }

    #[test]
    fn orders_of_exact_quadratic_sequence() {
        assert_eq!(observed_orders(&[16.0, 4.0, 1.0]), vec![2.0, 2.0]);
    }

    #[test]
    fn rejects_bad_levels() {
        assert!(run_sweep(Study::Eigenmode, &[51], 1.0, Execution::Sequential).is_err());
        assert!(run_sweep(Study::Eigenmode, &[51, 26], 1.0, Execution::Sequential).is_err());
    }
}
