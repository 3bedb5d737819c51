//! TOML experiment manifests.
//!
//! ```toml
//! seed = 7
//!
//! [grid]
//! dim = 1
//! nx = 201
//! nt = 401
//! t_final = 2.0
//!
//! [weight]
//! x0 = [-0.1]
//! lambda = [1.0]
//!
//! [output]
//! dir = "results"
//!
//! [[experiment]]
//! name = "case1"
//! kind = "stability"
//! case = "case1"
//! delta = [0.1, 0.01, 0.001]
//! ```
//!
//! Everything is validated by [`Manifest::validate`] before any solve starts.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::carleman::geometric_s_grid;
use crate::convergence::Study;
use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::stability::{Case, Cutoff, PairSpec};
use crate::weight::{build_default_weight, CarlemanWeight};
use crate::C64;

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub seed: u64,
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub weight: WeightSpec,
    #[serde(default)]
    pub states: StateSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default, rename = "experiment")]
    pub experiments: Vec<ExperimentSpec>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    /// Per-axis `[a, b]`; the unit interval/square when absent.
    pub extents: Option<Vec<[f64; 2]>>,
    pub nx: usize,
    pub nt: usize,
    pub t_final: f64,
}

impl GridSpec {
    pub fn build(&self) -> Result<SpaceTimeGrid> {
        let extents: Vec<(f64, f64)> = match &self.extents {
            Some(e) => e.iter().map(|&[a, b]| (a, b)).collect(),
            None => vec![(0.0, 1.0); self.dim],
        };
        SpaceTimeGrid::new(self.dim, &extents, self.nx, self.nt, self.t_final)
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    /// Defaults to a point just left of `Ω`, vertically centred.
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_lambda")]
    pub lambda: Vec<f64>,
    #[serde(default = "default_s_min")]
    pub s_min: f64,
    #[serde(default = "default_s_max")]
    pub s_max: f64,
    #[serde(default = "default_s_count")]
    pub s_count: usize,
}

fn default_lambda() -> Vec<f64> {
    vec![1.0]
}
fn default_s_min() -> f64 {
    1.0
}
fn default_s_max() -> f64 {
    100.0
}
fn default_s_count() -> usize {
    12
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self { x0: None, lambda: default_lambda(), s_min: default_s_min(), s_max: default_s_max(), s_count: default_s_count() }
    }
}

impl WeightSpec {
    pub fn x0_for(&self, grid: &SpaceTimeGrid) -> Vec<f64> {
        self.x0.clone().unwrap_or_else(|| default_x0(grid))
    }

    pub fn s_grid(&self) -> Result<Vec<f64>> {
        geometric_s_grid(self.s_min, self.s_max, self.s_count)
    }
}

/// `a₀ − 0.1(b₀ − a₀)` along `x`, the midpoint along `y`.
pub fn default_x0(grid: &SpaceTimeGrid) -> Vec<f64> {
    let (a, b) = grid.extent(0);
    let mut x0 = vec![a - 0.1 * (b - a)];
    if grid.dim() == 2 {
        let (c, d) = grid.extent(1);
        x0.push(0.5 * (c + d));
    }
    x0
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    #[serde(default = "default_r0")]
    pub r0: f64,
}

fn default_r0() -> f64 {
    1.0
}

impl Default for StateSpec {
    fn default() -> Self {
        Self { r0: default_r0() }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

fn default_dir() -> PathBuf {
    PathBuf::from("results")
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq, Hash)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Solve,
    Carleman,
    Stability,
    Convergence,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Solve => "solve",
            Kind::Carleman => "carleman",
            Kind::Stability => "stability",
            Kind::Convergence => "convergence",
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub kind: Option<Kind>,
    /// `case1`, `case2`, `case3` or `case3-divfree` (stability, solve).
    pub case: Option<String>,
    /// Perturbation amplitudes (stability) or the single amplitude used by `solve`.
    pub delta: Option<Vec<f64>>,
    /// `quartic` (default) or `quadratic`.
    pub cutoff: Option<String>,
    pub m_cap: Option<f64>,
    /// Pair family parameters; unset ones take the family default.
    pub a: Option<[f64; 2]>,
    pub delta_base: Option<f64>,
    pub a_vec: Option<[f64; 2]>,
    pub p: Option<[f64; 2]>,
    pub c: Option<f64>,
    pub r_amp: Option<f64>,
    pub theta0: Option<f64>,
    pub kappa: Option<f64>,
    pub sigma: Option<f64>,
    /// Also run every amplitude on the once-refined grid (stability).
    pub refine: Option<bool>,
    /// Initial state index (solve).
    pub state: Option<usize>,
    /// Ensemble size (carleman).
    pub members: Option<usize>,
    /// `eigenmode` or `gauge` (convergence).
    pub study: Option<String>,
    /// Refinement levels (convergence).
    pub levels: Option<Vec<usize>>,
    pub t_final: Option<f64>,
    /// Pass threshold: max/min spread of the reported metric.
    pub tolerance: Option<f64>,
    /// Accepted observed orders (convergence).
    pub order_range: Option<[f64; 2]>,
}

fn manifest_err(field: impl AsRef<str>, msg: impl AsRef<str>) -> Error {
    Error::Manifest(format!("{}: {}", field.as_ref(), msg.as_ref()))
}

impl ExperimentSpec {
    pub fn kind(&self) -> Result<Kind> {
        self.kind.ok_or_else(|| manifest_err(format!("experiment `{}`.kind", self.name), "missing"))
    }

    pub fn case(&self) -> Result<Case> {
        let field = format!("experiment `{}`.case", self.name);
        let name = self.case.as_deref().ok_or_else(|| manifest_err(&field, "missing"))?;
        Case::parse(name).ok_or_else(|| manifest_err(&field, format!("unknown case `{name}`")))
    }

    pub fn cutoff(&self) -> Result<Cutoff> {
        match self.cutoff.as_deref() {
            None => Ok(Cutoff::default()),
            Some(s) => Cutoff::parse(s).ok_or_else(|| {
                manifest_err(format!("experiment `{}`.cutoff", self.name), format!("unknown cutoff `{s}`"))
            }),
        }
    }

    pub fn study(&self) -> Result<Study> {
        let field = format!("experiment `{}`.study", self.name);
        let name = self.study.as_deref().unwrap_or("eigenmode");
        Study::parse(name).ok_or_else(|| manifest_err(&field, format!("unknown study `{name}`")))
    }

    /// Pair family with the experiment's overrides applied.
    pub fn pair_spec(&self) -> Result<PairSpec> {
        let cx = |v: [f64; 2]| C64::new(v[0], v[1]);
        Ok(match PairSpec::default_for(self.case()?) {
            PairSpec::Case1 { a, delta_base } => PairSpec::Case1 {
                a: self.a.map(cx).unwrap_or(a),
                delta_base: self.delta_base.unwrap_or(delta_base),
            },
            PairSpec::Case2 { a, a_vec, p, c } => PairSpec::Case2 {
                a: self.a.map(cx).unwrap_or(a),
                a_vec: self.a_vec.unwrap_or(a_vec),
                p: self.p.map(cx).unwrap_or(p),
                c: self.c.unwrap_or(c),
            },
            PairSpec::Case3 { r_amp, theta0, kappa } => PairSpec::Case3 {
                r_amp: self.r_amp.unwrap_or(r_amp),
                theta0: self.theta0.unwrap_or(theta0),
                kappa: self.kappa.unwrap_or(kappa),
            },
            PairSpec::Case3DivFree { sigma } => PairSpec::Case3DivFree { sigma: self.sigma.unwrap_or(sigma) },
        })
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.delta.clone().unwrap_or_else(|| vec![0.1, 0.01, 0.001])
    }

    pub fn levels(&self) -> Vec<usize> {
        self.levels.clone().unwrap_or_else(|| vec![51, 101, 201])
    }

    /// Default pass threshold per kind.
    pub fn tolerance_or_default(&self) -> f64 {
        self.tolerance.unwrap_or(match self.kind {
            Some(Kind::Carleman) => 2.0,
            _ => 10.0,
        })
    }
}

/// Everything a run needs, built once from a manifest.
#[derive(Clone, Debug)]
pub struct Validated {
    pub grid: Option<SpaceTimeGrid>,
    /// One weight per `λ`, at `s = s_max`.
    pub weights: Vec<CarlemanWeight>,
    pub s_grid: Vec<f64>,
}

impl Manifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Check every parameter; the returned plan is what experiments run on.
    pub fn validate(&self) -> Result<Validated> {
        if self.experiments.is_empty() {
            return Err(manifest_err("experiment", "the manifest declares no experiments"));
        }
        let mut names = std::collections::HashSet::new();
        let mut needs_grid = false;
        for e in &self.experiments {
            let ok_name = !e.name.is_empty()
                && e.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
                && !e.name.starts_with('.');
            if !ok_name {
                return Err(manifest_err(
                    format!("experiment `{}`.name", e.name),
                    "use letters, digits, '-', '_' or '.' (it names the output file)",
                ));
            }
            if e.name == "summary" {
                return Err(manifest_err("experiment.name", "`summary` is reserved"));
            }
            if !names.insert(e.name.clone()) {
                return Err(manifest_err(format!("experiment `{}`.name", e.name), "duplicate name"));
            }
            let kind = e.kind()?;
            let field = |f: &str| format!("experiment `{}`.{f}", e.name);
            match kind {
                Kind::Solve => {
                    needs_grid = true;
                    if e.case.is_some() {
                        e.pair_spec()?;
                        e.cutoff()?;
                    }
                    if e.delta.as_ref().is_some_and(|d| d.len() != 1) {
                        return Err(manifest_err(field("delta"), "solve takes exactly one amplitude"));
                    }
                }
                Kind::Carleman => {
                    needs_grid = true;
                    if e.members == Some(0) {
                        return Err(manifest_err(field("members"), "ensemble size must be positive"));
                    }
                }
                Kind::Stability => {
                    needs_grid = true;
                    e.pair_spec()?;
                    e.cutoff()?;
                    let d = e.deltas();
                    if d.is_empty() || d.iter().any(|v| !v.is_finite()) {
                        return Err(manifest_err(field("delta"), "need at least one finite amplitude"));
                    }
                }
                Kind::Convergence => {
                    e.study()?;
                    let lv = e.levels();
                    if lv.len() < 2 || lv.windows(2).any(|w| w[1] <= w[0]) || lv[0] < crate::grid::MIN_POINTS {
                        return Err(manifest_err(field("levels"), format!("need ≥ 2 increasing sizes ≥ 5, got {lv:?}")));
                    }
                    if let Some(r) = e.order_range {
                        if !(r[0] <= r[1]) {
                            return Err(manifest_err(field("order_range"), "lower bound exceeds upper bound"));
                        }
                    }
                    if e.t_final.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
                        return Err(manifest_err(field("t_final"), "must be positive"));
                    }
                }
            }
            if e.tolerance.is_some_and(|t| !(t >= 1.0)) {
                return Err(manifest_err(field("tolerance"), "a spread threshold must be ≥ 1"));
            }
            if let Some(cap) = e.m_cap {
                if !(cap > 0.0) {
                    return Err(manifest_err(field("m_cap"), "must be positive"));
                }
            }
        }
        if !(self.states.r0 > 0.0 && self.states.r0.is_finite()) {
            return Err(manifest_err("states.r0", "must be positive"));
        }
        let grid = match (&self.grid, needs_grid) {
            (Some(g), _) => Some(g.build().map_err(|e| manifest_err("grid", e.to_string()))?),
            (None, true) => return Err(manifest_err("grid", "missing, but required by the declared experiments")),
            (None, false) => None,
        };
        let s_grid = self.weight.s_grid().map_err(|e| manifest_err("weight", e.to_string()))?;
        let mut weights = Vec::new();
        if let Some(g) = &grid {
            if self.weight.lambda.is_empty() {
                return Err(manifest_err("weight.lambda", "empty list"));
            }
            let x0 = self.weight.x0_for(g);
            for &lambda in &self.weight.lambda {
                let w = build_default_weight(g, &x0, lambda, *s_grid.last().expect("non-empty s-grid"))?;
                weights.push(w);
            }
        }
        Ok(Validated { grid, weights, s_grid })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
seed = 3
[grid]
dim = 1
nx = 21
nt = 21
t_final = 2.0

[[experiment]]
name = "c1"
kind = "stability"
case = "case1"
delta = [0.1, 0.01]
"#;

    #[test]
    fn parses_with_defaults() {
        let m = Manifest::from_toml(BASIC).unwrap();
        assert_eq!(m.seed, 3);
        assert_eq!(m.weight.lambda, vec![1.0]);
        assert_eq!(m.output.dir, PathBuf::from("results"));
        let v = m.validate().unwrap();
        assert_eq!(v.s_grid.len(), 12);
        assert_eq!(v.weights.len(), 1);
        assert_eq!(m.experiments[0].case().unwrap(), Case::Case1);
    }

    #[test]
    fn unknown_field_reports_location() {
        let text = BASIC.replace("t_final = 2.0", "t_final = 2.0\nbogus = 1");
        let err = Manifest::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn x0_inside_domain_is_rejected() {
        let text = BASIC.replace("[[experiment]]", "[weight]\nx0 = [0.5]\n\n[[experiment]]");
        let err = Manifest::from_toml(&text).unwrap().validate().unwrap_err();
        assert!(matches!(err, Error::WeightPrecondition(_)), "{err}");
    }

    #[test]
    fn bad_names_and_cases() {
        let dup = format!("{BASIC}\n[[experiment]]\nname = \"c1\"\nkind = \"carleman\"\n");
        assert!(Manifest::from_toml(&dup).unwrap().validate().is_err());
        let bad = BASIC.replace("case = \"case1\"", "case = \"case9\"");
        let err = Manifest::from_toml(&bad).unwrap().validate().unwrap_err().to_string();
        assert!(err.contains("case9"), "{err}");
        let slash = BASIC.replace("name = \"c1\"", "name = \"../c1\"");
        assert!(Manifest::from_toml(&slash).unwrap().validate().is_err());
    }

    #[test]
    fn convergence_needs_no_grid() {
        let m = Manifest::from_toml("[[experiment]]\nname = \"eig\"\nkind = \"convergence\"\n").unwrap();
        let v = m.validate().unwrap();
        assert!(v.grid.is_none() && v.weights.is_empty());
        let m = Manifest::from_toml("[[experiment]]\nname = \"c\"\nkind = \"carleman\"\n").unwrap();
        assert!(m.validate().is_err());
    }

    #[test]
    fn overrides_reach_the_pair_spec() {
        let text = BASIC.replace("delta = [0.1, 0.01]", "delta = [0.1]\na = [2.0, -1.0]\ndelta_base = 0.25");
        let m = Manifest::from_toml(&text).unwrap();
        assert_eq!(
            m.experiments[0].pair_spec().unwrap(),
            PairSpec::Case1 { a: C64::new(2.0, -1.0), delta_base: 0.25 }
        );
    }
}
