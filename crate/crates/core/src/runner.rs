//! Manifest execution and CSV emission.
//!
//! Every experiment is prepared (pairs built and validated) before the first
//! solve; results are rendered in memory and written with a
//! write-temp-then-rename so readers never see partial files.

use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::carleman::verify_ensemble;
use crate::convergence::run_sweep;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::SpaceTimeGrid;
use crate::manifest::{ExperimentSpec, Kind, Manifest, Validated};
use crate::solver::{dirichlet_data_from_reference, solve_forward, DirichletData, ElectromagneticPotential};
use crate::stability::{make_initial_states, make_pair, run_stability, Case, PairOptions, PotentialPair, StabilityReport};
use crate::weight::{build_default_weight, CarlemanWeight};
use crate::C64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Degenerate,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Degenerate => "degenerate",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: String,
    pub kind: Kind,
    pub status: Status,
    /// The quantity compared with `threshold` (NaN when nothing is checked).
    pub metric: f64,
    pub threshold: f64,
    pub detail: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub outcomes: Vec<Outcome>,
    pub summary_path: PathBuf,
}

impl RunSummary {
    /// 0 when every experiment passed or was degenerate, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.outcomes.iter().any(|o| o.status == Status::Fail) {
            1
        } else {
            0
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides `[output].dir`.
    pub out_dir: Option<PathBuf>,
    /// Overrides the manifest seed.
    pub seed: Option<u64>,
    pub exec: Execution,
    /// Only run experiments of this kind.
    pub kind: Option<Kind>,
    /// Only run stability experiments of this case.
    pub case: Option<Case>,
}

/// Fixed 17-significant-digit rendering.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(header: &[&str]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).map_err(csv_err)?;
        Ok(Self { writer })
    }

    fn row(&mut self, fields: Vec<String>) -> Result<()> {
        self.writer.write_record(&fields).map_err(csv_err)
    }

    fn finish(self) -> Result<Vec<u8>> {
        self.writer.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Pair (or degeneracy) per amplitude, on the run grid and optionally the refined one.
struct PreparedPairs {
    deltas: Vec<f64>,
    base: Vec<Option<PotentialPair>>,
    refined: Vec<Option<PotentialPair>>,
}

enum Prepared<'a> {
    Solve { spec: &'a ExperimentSpec, pair: Option<Option<PotentialPair>> },
    Carleman { spec: &'a ExperimentSpec },
    Stability { spec: &'a ExperimentSpec, pairs: PreparedPairs, refined_grid: Option<SpaceTimeGrid> },
    Convergence { spec: &'a ExperimentSpec },
}

fn build_pair(grid: &SpaceTimeGrid, spec: &ExperimentSpec, delta: f64) -> Result<Option<PotentialPair>> {
    let opts = PairOptions { cutoff: spec.cutoff()?, m_cap: spec.m_cap };
    match make_pair(grid, spec.pair_spec()?, delta, opts) {
        Ok(p) => Ok(Some(p)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(Error::Manifest(format!("experiment `{}` (δ = {delta}): {e}", spec.name))),
    }
}

fn prepare<'a>(spec: &'a ExperimentSpec, plan: &Validated) -> Result<Prepared<'a>> {
    Ok(match spec.kind()? {
        Kind::Solve => {
            let grid = plan.grid.as_ref().expect("validated");
            let pair = match spec.case {
                Some(_) => Some(build_pair(grid, spec, spec.delta.as_ref().map_or(0.1, |d| d[0]))?),
                None => None,
            };
            Prepared::Solve { spec, pair }
        }
        Kind::Carleman => Prepared::Carleman { spec },
        Kind::Stability => {
            let grid = plan.grid.as_ref().expect("validated");
            let deltas = spec.deltas();
            let base = deltas.iter().map(|&d| build_pair(grid, spec, d)).collect::<Result<Vec<_>>>()?;
            let (refined, refined_grid) = if spec.refine.unwrap_or(false) {
                let fine = grid.refined();
                let r = deltas.iter().map(|&d| build_pair(&fine, spec, d)).collect::<Result<Vec<_>>>()?;
                (r, Some(fine))
            } else {
                (Vec::new(), None)
            };
            Prepared::Stability { spec, pairs: PreparedPairs { deltas, base, refined }, refined_grid }
        }
        Kind::Convergence => Prepared::Convergence { spec },
    })
}

/// Validate, run and write every selected experiment plus `summary.csv`.
pub fn run_manifest(manifest: &Manifest, opts: &RunOptions) -> Result<RunSummary> {
    let mut m = manifest.clone();
    if let Some(seed) = opts.seed {
        m.seed = seed;
    }
    m.experiments.retain(|e| {
        opts.kind.is_none_or(|k| e.kind == Some(k))
            && opts.case.is_none_or(|c| e.case.as_deref().and_then(Case::parse) == Some(c))
    });
    if m.experiments.is_empty() {
        let what = match (opts.kind, opts.case) {
            (Some(k), Some(c)) => format!("{} experiments for {}", k.name(), c.name()),
            (Some(k), None) => format!("{} experiments", k.name()),
            _ => "experiments".into(),
        };
        return Err(Error::Manifest(format!("the manifest declares no {what}")));
    }
    let plan = m.validate()?;
    let prepared = m.experiments.iter().map(|e| prepare(e, &plan)).collect::<Result<Vec<_>>>()?;
    let out_dir = opts.out_dir.clone().unwrap_or_else(|| m.output.dir.clone());
    let results = opts.exec.map(&prepared, |p| execute(p, &m, &plan, opts.exec));
    let mut outcomes = Vec::with_capacity(results.len());
    for r in results {
        let (mut outcome, bytes) = r?;
        outcome.path = out_dir.join(format!("{}.csv", outcome.name));
        write_atomic(&outcome.path, &bytes)?;
        outcomes.push(outcome);
    }
    let mut table = Table::new(&["name", "kind", "status", "metric", "threshold", "detail"])?;
    for o in &outcomes {
        table.row(vec![
            o.name.clone(),
            o.kind.name().into(),
            o.status.name().into(),
            fmt_f64(o.metric),
            fmt_f64(o.threshold),
            o.detail.clone(),
        ])?;
    }
    let summary_path = out_dir.join("summary.csv");
    write_atomic(&summary_path, &table.finish()?)?;
    Ok(RunSummary { outcomes, summary_path })
}

fn outcome(spec: &ExperimentSpec, kind: Kind, status: Status, metric: f64, threshold: f64, detail: String) -> Outcome {
    Outcome { name: spec.name.clone(), kind, status, metric, threshold, detail, path: PathBuf::new() }
}

fn execute(p: &Prepared, m: &Manifest, plan: &Validated, exec: Execution) -> Result<(Outcome, Vec<u8>)> {
    match p {
        Prepared::Solve { spec, pair } => run_solve(spec, pair.as_ref(), m, plan),
        Prepared::Carleman { spec } => run_carleman(spec, m, plan, exec),
        Prepared::Stability { spec, pairs, refined_grid } => {
            run_stability_experiment(spec, pairs, refined_grid.as_ref(), m, plan, exec)
        }
        Prepared::Convergence { spec } => run_convergence(spec, exec),
    }
}

fn run_solve(
    spec: &ExperimentSpec,
    pair: Option<&Option<PotentialPair>>,
    m: &Manifest,
    plan: &Validated,
) -> Result<(Outcome, Vec<u8>)> {
    let grid = plan.grid.as_ref().expect("validated");
    let mut table = Table::new(&["node", "t_index", "re_u", "im_u"])?;
    let (pot, u0, data) = match pair {
        Some(None) => {
            let o = outcome(spec, Kind::Solve, Status::Degenerate, f64::NAN, f64::NAN, "δ = 0 gives identical potentials".into());
            return Ok((o, table.finish()?));
        }
        Some(Some(pair)) => {
            let states = make_initial_states(pair.case(), grid, m.states.r0)?;
            let k = spec.state.unwrap_or(0);
            let u0 = states.states.get(k).cloned().ok_or_else(|| {
                Error::Manifest(format!("experiment `{}`.state: index {k} of {} states", spec.name, states.states.len()))
            })?;
            let data = dirichlet_data_from_reference(grid, &pair.base, &u0.view())?;
            (pair.first.clone(), u0, data)
        }
        None => {
            // product of first Dirichlet modes, homogeneous data
            let u0 = grid.sample(|x| {
                let v: f64 = (0..grid.dim())
                    .map(|i| {
                        let (a, b) = grid.extent(i);
                        (PI * (x[i] - a) / (b - a)).sin()
                    })
                    .product();
                C64::new(v, 0.0)
            });
            (ElectromagneticPotential::zero(grid), u0, DirichletData::zero(grid))
        }
    };
    let sol = solve_forward(grid, &pot, &u0.view(), &data)?;
    for (t, row) in sol.u.rows().into_iter().enumerate() {
        for (node, v) in row.iter().enumerate() {
            table.row(vec![node.to_string(), t.to_string(), fmt_f64(v.re), fmt_f64(v.im)])?;
        }
    }
    let n0 = grid.norm_space(&sol.u.row(0));
    let n1 = grid.norm_space(&sol.u.row(grid.nt() - 1));
    let growth = if n0 > 0.0 { n1 / n0 } else { 0.0 };
    let o = outcome(spec, Kind::Solve, Status::Pass, growth, f64::NAN, format!("‖u(T)‖/‖u(0)‖ = {growth:.6}"));
    Ok((o, table.finish()?))
}

fn run_carleman(spec: &ExperimentSpec, m: &Manifest, plan: &Validated, exec: Execution) -> Result<(Outcome, Vec<u8>)> {
    let grid = plan.grid.as_ref().expect("validated");
    let members = spec.members.unwrap_or(50);
    let tol = spec.tolerance_or_default();
    let mut table = Table::new(&[
        "s",
        "term1",
        "term2",
        "term3",
        "term4",
        "term5",
        "term6",
        "term7",
        "C_hat",
        "ok",
        "boundary_weighted",
        "c_hat_literal",
        "log_scale",
        "member",
        "lambda",
    ])?;
    let mut worst: f64 = 1.0;
    let mut violations = 0;
    let mut notes = Vec::new();
    for w in &plan.weights {
        let report = verify_ensemble(grid, w, &plan.s_grid, members, m.seed, exec)?;
        for (k, r) in report.reports.iter().enumerate() {
            for row in &r.rows {
                violations += usize::from(!row.ok);
                table.row(vec![
                    fmt_f64(row.s),
                    fmt_f64(row.r1),
                    fmt_f64(row.r2),
                    fmt_f64(row.grad),
                    fmt_f64(row.mass),
                    fmt_f64(row.lu),
                    fmt_f64(row.boundary),
                    fmt_f64(row.z),
                    fmt_f64(row.c_hat),
                    row.ok.to_string(),
                    fmt_f64(row.boundary_weighted),
                    fmt_f64(row.c_hat_literal),
                    fmt_f64(row.log_scale),
                    k.to_string(),
                    fmt_f64(w.lambda()),
                ])?;
            }
        }
        let v = report.upper_half_variation();
        let top = report.max_c_hat().last().copied().unwrap_or(0.0);
        notes.push(format!("λ = {}: spread {v:.4}, max Ĉ {top:.4}", w.lambda()));
        worst = if v.is_finite() { worst.max(v) } else { f64::INFINITY };
    }
    let status = if violations == 0 && worst <= tol { Status::Pass } else { Status::Fail };
    let mut detail = notes.join("; ");
    if violations > 0 {
        detail.push_str(&format!("; {violations} rows with vanishing right side"));
    }
    Ok((outcome(spec, Kind::Carleman, status, worst, tol, detail), table.finish()?))
}

fn weight_on(grid: &SpaceTimeGrid, m: &Manifest, w: &CarlemanWeight) -> Result<CarlemanWeight> {
    build_default_weight(grid, &m.weight.x0_for(grid), w.lambda(), w.s())
}

fn stability_row(table: &mut Table, case: Case, delta: f64, grid: &SpaceTimeGrid, w: &CarlemanWeight, r: Option<&StabilityReport>) -> Result<()> {
    let fields = match r {
        Some(r) => vec![
            r.case.name().into(),
            fmt_f64(r.delta),
            fmt_f64(r.h),
            fmt_f64(r.tau),
            fmt_f64(r.s),
            fmt_f64(r.lambda),
            fmt_f64(r.norm_rho),
            fmt_f64(r.norm_a),
            fmt_f64(r.norm_div_a),
            fmt_f64(r.obs_norm),
            fmt_f64(r.ratio),
            fmt_f64(r.effective_m),
            fmt_f64(r.linearized_residual),
            fmt_f64(r.v0_residual),
            r.initial_bound_ok().to_string(),
            r.degenerate.to_string(),
            r.violation.to_string(),
        ],
        None => {
            let zero = fmt_f64(0.0);
            vec![
                case.name().into(),
                fmt_f64(delta),
                fmt_f64(grid.h_max()),
                fmt_f64(grid.tau()),
                fmt_f64(w.s()),
                fmt_f64(w.lambda()),
                zero.clone(),
                zero.clone(),
                zero.clone(),
                zero.clone(),
                fmt_f64(f64::NAN),
                zero.clone(),
                zero.clone(),
                zero,
                "true".into(),
                "true".into(),
                "false".into(),
            ]
        }
    };
    table.row(fields)
}

fn spread(values: &[f64]) -> f64 {
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if values.is_empty() {
        1.0
    } else {
        hi / lo
    }
}

fn run_stability_experiment(
    spec: &ExperimentSpec,
    pairs: &PreparedPairs,
    refined_grid: Option<&SpaceTimeGrid>,
    m: &Manifest,
    plan: &Validated,
    exec: Execution,
) -> Result<(Outcome, Vec<u8>)> {
    let grid = plan.grid.as_ref().expect("validated");
    let case = spec.case()?;
    let weight = &plan.weights[0];
    let states = make_initial_states(case, grid, m.states.r0)?;
    let mut table = Table::new(&[
        "case",
        "delta",
        "h",
        "tau",
        "s",
        "lambda",
        "norm_rho",
        "norm_A",
        "norm_divA",
        "obs_norm",
        "ratio",
        "effective_M",
        "linearized_residual",
        "v0_residual",
        "initial_bound_ok",
        "degenerate",
        "violation",
    ])?;
    let mut base = Vec::new();
    for (&delta, pair) in pairs.deltas.iter().zip(&pairs.base) {
        let r = match pair {
            Some(p) => Some(run_stability(grid, p, &states, weight, &plan.s_grid, exec)?),
            None => None,
        };
        stability_row(&mut table, case, delta, grid, weight, r.as_ref())?;
        base.push(r);
    }
    let mut fine = Vec::new();
    if let Some(fg) = refined_grid {
        let fw = weight_on(fg, m, weight)?;
        let fstates = make_initial_states(case, fg, m.states.r0)?;
        for (&delta, pair) in pairs.deltas.iter().zip(&pairs.refined) {
            let r = match pair {
                Some(p) => Some(run_stability(fg, p, &fstates, &fw, &plan.s_grid, exec)?),
                None => None,
            };
            stability_row(&mut table, case, delta, fg, &fw, r.as_ref())?;
            fine.push(r);
        }
    }
    let tol = spec.tolerance_or_default();
    let live: Vec<&StabilityReport> = base.iter().flatten().collect();
    if live.is_empty() {
        let o = outcome(spec, Kind::Stability, Status::Degenerate, f64::NAN, tol, "every amplitude gives identical potentials".into());
        return Ok((o, table.finish()?));
    }
    let ratios: Vec<f64> = live.iter().map(|r| r.ratio).collect();
    let sweep = spread(&ratios);
    let mut problems = Vec::new();
    let all: Vec<&StabilityReport> = live.iter().copied().chain(fine.iter().flatten()).collect();
    if all.iter().any(|r| r.violation) {
        problems.push("vanishing observation with non-zero coefficient difference".to_string());
    }
    let bounds: Vec<_> = all.iter().flat_map(|r| r.initial_bounds.iter()).collect();
    let failed_bounds = bounds.iter().filter(|b| !b.ok).count();
    if failed_bounds > 0 {
        problems.push(format!("initial-slice bound fails for {failed_bounds} of {} (state, s) pairs", bounds.len()));
    }
    if !(sweep <= tol) {
        problems.push(format!("ratio spread {sweep:.4} over the amplitude sweep exceeds {tol}"));
    }
    let mut detail = format!("ratio spread {sweep:.4} over {} amplitudes", ratios.len());
    for (b, f) in base.iter().zip(&fine) {
        if let (Some(b), Some(f)) = (b, f) {
            let change = spread(&[b.ratio, f.ratio]);
            detail.push_str(&format!("; refinement change {change:.4} at δ = {}", b.delta));
            if !(change < 2.0) {
                problems.push(format!("ratio changes by {change:.4} under refinement at δ = {}", b.delta));
            }
        }
    }
    let m_eff = live.iter().map(|r| r.effective_m).fold(0.0, f64::max);
    if m_eff > 0.0 {
        detail.push_str(&format!("; effective M {m_eff:.4e}"));
    }
    let skipped = base.iter().filter(|r| r.is_none()).count();
    if skipped > 0 {
        detail.push_str(&format!("; {skipped} degenerate amplitudes"));
    }
    let status = if problems.is_empty() { Status::Pass } else { Status::Fail };
    if !problems.is_empty() {
        detail = format!("{}; {detail}", problems.join("; "));
    }
    Ok((outcome(spec, Kind::Stability, status, sweep, tol, detail), table.finish()?))
}

fn run_convergence(spec: &ExperimentSpec, exec: Execution) -> Result<(Outcome, Vec<u8>)> {
    let study = spec.study()?;
    let sweep = run_sweep(study, &spec.levels(), spec.t_final.unwrap_or(1.0), exec)?;
    let [lo, hi] = spec.order_range.unwrap_or([1.8, 2.2]);
    let mut table = Table::new(&["nx", "nt", "h", "tau", "error", "ratio", "order"])?;
    let ratios = sweep.ratios();
    let orders = sweep.orders();
    for (k, r) in sweep.rows.iter().enumerate() {
        let (ratio, order) = if k == 0 { (f64::NAN, f64::NAN) } else { (ratios[k - 1], orders[k - 1]) };
        table.row(vec![
            r.nx.to_string(),
            r.nt.to_string(),
            fmt_f64(r.h),
            fmt_f64(r.tau),
            fmt_f64(r.error),
            fmt_f64(ratio),
            fmt_f64(order),
        ])?;
    }
    let worst = orders.iter().cloned().fold(f64::INFINITY, f64::min);
    let ok = orders.iter().all(|o| (lo..=hi).contains(o));
    let detail = format!(
        "{} observed orders [{}] (accepted [{lo}, {hi}])",
        study.name(),
        orders.iter().map(|o| format!("{o:.4}")).collect::<Vec<_>>().join(", ")
    );
    let status = if ok { Status::Pass } else { Status::Fail };
    Ok((outcome(spec, Kind::Convergence, status, worst, lo, detail), table.finish()?))
}

/// Manifest used when a subcommand is invoked without `--manifest`.
pub fn default_manifest(kind: Kind, case: Option<Case>) -> Manifest {
    let grid_1d = "[grid]\ndim = 1\nnx = 101\nnt = 201\nt_final = 2.0\n";
    let grid_2d = "[grid]\ndim = 2\nnx = 31\nnt = 61\nt_final = 2.0\n";
    let text = match kind {
        Kind::Solve => format!("{grid_1d}\n[[experiment]]\nname = \"solve\"\nkind = \"solve\"\ncase = \"case1\"\n"),
        Kind::Carleman => format!("{grid_1d}\n[[experiment]]\nname = \"carleman\"\nkind = \"carleman\"\n"),
        Kind::Stability => {
            let case = case.unwrap_or(Case::Case1);
            let grid = if case == Case::Case1 { grid_1d } else { grid_2d };
            let name = case.name();
            format!("{grid}\n[[experiment]]\nname = \"{name}\"\nkind = \"stability\"\ncase = \"{name}\"\n")
        }
        Kind::Convergence => "[[experiment]]\nname = \"eigenmode\"\nkind = \"convergence\"\nstudy = \"eigenmode\"\n\n\
             [[experiment]]\nname = \"gauge\"\nkind = \"convergence\"\nstudy = \"gauge\"\n"
            .to_string(),
    };
    Manifest::from_toml(&text).expect("built-in manifest parses")
}
