//! Equilibrium summaries over two-parameter grids.

use std::io::Write;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::equilibrium::{entropy, solve_equilibrium};
use crate::error::{Error, Result};
use crate::model::{ChoiceSpec, SystemParams};

use super::output::{format_real, write_table};

/// A plane of parameter space: two named axes and how a node's values
/// modify the base configuration.
pub trait SweepPlane: Send + Sync {
    fn name(&self) -> &'static str;
    /// Names of the x and y axes as used in grid specs.
    fn axes(&self) -> [&'static str; 2];
    fn apply(&self, base: &SystemParams, x: f64, y: f64) -> Result<SystemParams>;
}

struct ChoicePlane {
    name: &'static str,
    param: &'static str,
    build: fn(f64) -> Result<ChoiceSpec>,
}

impl SweepPlane for ChoicePlane {
    fn name(&self) -> &'static str {
        self.name
    }

    fn axes(&self) -> [&'static str; 2] {
        ["p", self.param]
    }

    fn apply(&self, base: &SystemParams, x: f64, y: f64) -> Result<SystemParams> {
        let choice = (self.build)(y)?;
        base.modified(|raw| {
            raw.p = x;
            raw.choice = choice;
        })
    }
}

struct GammaPlane;

impl SweepPlane for GammaPlane {
    fn name(&self) -> &'static str {
        "p-gamma"
    }

    fn axes(&self) -> [&'static str; 2] {
        ["p", "gamma"]
    }

    fn apply(&self, base: &SystemParams, x: f64, y: f64) -> Result<SystemParams> {
        base.with_gamma(y)?.with_p(x)
    }
}

fn minimum_choice(c: f64) -> Result<ChoiceSpec> {
    if c.fract() != 0.0 || c < 0.0 || c > u32::MAX as f64 {
        return Err(Error::validation("c", format!("must be a non-negative integer, got {c}")));
    }
    Ok(ChoiceSpec::minimum(c as u32))
}

/// Sweep planes selectable by name.
pub struct PlaneRegistry {
    planes: Vec<Box<dyn SweepPlane>>,
}

impl PlaneRegistry {
    pub fn empty() -> Self {
        PlaneRegistry { planes: Vec::new() }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(ChoicePlane {
            name: "p-theta",
            param: "theta",
            build: |v| Ok(ChoiceSpec::exponential(v)),
        }));
        r.register(Box::new(ChoicePlane {
            name: "p-c",
            param: "c",
            build: minimum_choice,
        }));
        r.register(Box::new(ChoicePlane {
            name: "p-alpha",
            param: "alpha",
            build: |v| Ok(ChoiceSpec::polynomial(v)),
        }));
        r.register(Box::new(GammaPlane));
        r
    }

    pub fn global() -> &'static PlaneRegistry {
        static REGISTRY: OnceLock<PlaneRegistry> = OnceLock::new();
        REGISTRY.get_or_init(Self::with_builtins)
    }

    /// Replaces any plane of the same name.
    pub fn register(&mut self, plane: Box<dyn SweepPlane>) {
        self.planes.retain(|p| p.name() != plane.name());
        self.planes.push(plane);
    }

    pub fn get(&self, name: &str) -> Result<&dyn SweepPlane> {
        self.planes
            .iter()
            .find(|p| p.name() == name)
            .map(|p| p.as_ref())
            .ok_or_else(|| Error::validation("plane", format!("unknown plane `{name}`; known: {}", self.names().join(", "))))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.planes.iter().map(|p| p.name()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

impl Axis {
    /// `start:end:step` (end included when it lies on the lattice) or a
    /// single value.
    fn parse(name: &str, text: &str) -> Result<Axis> {
        let field = format!("grid.{name}");
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::validation(field.clone(), format!("`{s}` is not a number")))
        };
        let parts: Vec<&str> = text.split(':').collect();
        let values = match parts.as_slice() {
            [v] => vec![num(v)?],
            [a, b, s] => {
                let (start, end, step) = (num(a)?, num(b)?, num(s)?);
                if !(step > 0.0) || end < start {
                    return Err(Error::validation(field, "need start <= end and step > 0"));
                }
                let count = ((end - start) / step + 1e-9).floor() as usize + 1;
                if count > 1_000_000 {
                    return Err(Error::validation(field, "more than a million grid points"));
                }
                (0..count).map(|i| start + i as f64 * step).collect()
            }
            _ => return Err(Error::validation(field, format!("expected `start:end:step` or a value, got `{text}`"))),
        };
        Ok(Axis {
            name: name.to_string(),
            values,
        })
    }
}

/// Named axes, e.g. `p=0:1:0.05,theta=0:2:0.1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub axes: Vec<Axis>,
}

impl std::str::FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut axes = Vec::new();
        for item in s.split(',').filter(|t| !t.trim().is_empty()) {
            let (name, range) = item
                .split_once('=')
                .ok_or_else(|| Error::validation("grid", format!("expected `name=range`, got `{item}`")))?;
            let name = name.trim();
            if axes.iter().any(|a: &Axis| a.name == name) {
                return Err(Error::validation("grid", format!("axis `{name}` given twice")));
            }
            axes.push(Axis::parse(name, range)?);
        }
        Ok(GridSpec { axes })
    }
}

impl GridSpec {
    fn axis(&self, name: &str) -> Result<&Axis> {
        self.axes
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::validation("grid", format!("axis `{name}` is missing")))
    }
}

/// Equilibrium summary at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeSummary {
    pub ybar0: f64,
    pub ybar1: f64,
    pub ybar_km1: f64,
    pub ybar_k: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepNode {
    pub x: f64,
    pub y: f64,
    /// The error message when the node could not be solved.
    pub summary: std::result::Result<NodeSummary, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub plane: String,
    pub x_name: String,
    pub y_name: String,
    /// Row-major in x, then y.
    pub nodes: Vec<SweepNode>,
}

impl Surface {
    pub fn failed(&self) -> usize {
        self.nodes.iter().filter(|n| n.summary.is_err()).count()
    }

    pub fn get(&self, x: f64, y: f64) -> Option<&SweepNode> {
        self.nodes.iter().find(|n| n.x == x && n.y == y)
    }

    /// Columns `x, y, ybar0, ybar1, ybarKm1, ybarK, entropy, status`; a failed
    /// node has NaN values and its error in `status`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows = self.nodes.iter().map(|n| {
            let mut row = vec![format_real(n.x), format_real(n.y)];
            match &n.summary {
                Ok(s) => {
                    row.extend([s.ybar0, s.ybar1, s.ybar_km1, s.ybar_k, s.entropy].map(format_real));
                    row.push("ok".into());
                }
                Err(e) => {
                    row.extend(std::iter::repeat_n(format_real(f64::NAN), 5));
                    row.push(format!("failed: {e}"));
                }
            }
            row
        });
        write_table(out, &["x", "y", "ybar0", "ybar1", "ybarKm1", "ybarK", "entropy", "status"], rows)
    }
}

fn solve_node(plane: &dyn SweepPlane, base: &SystemParams, x: f64, y: f64) -> Result<NodeSummary> {
    let params = plane.apply(base, x, y)?;
    let eq = solve_equilibrium(&params)?;
    let v = eq.y_bar.as_slice();
    let k = v.len() - 1;
    Ok(NodeSummary {
        ybar0: v[0],
        ybar1: v[1.min(k)],
        ybar_km1: v[k.saturating_sub(1)],
        ybar_k: v[k],
        entropy: entropy(v),
    })
}

/// Solves the equilibrium at every node of `grid` on `plane`. Nodes that
/// fail are flagged and the sweep continues.
pub fn sweep(plane: &dyn SweepPlane, grid: &GridSpec, base: &SystemParams) -> Result<Surface> {
    if !base.arrival.is_constant() {
        return Err(Error::validation("arrival", "sweeps need a constant arrival rate"));
    }
    if base.uniform_capacity().is_none() {
        return Err(Error::validation("capacity", "sweeps need a uniform capacity"));
    }
    let [xn, yn] = plane.axes();
    if let Some(extra) = grid.axes.iter().find(|a| a.name != xn && a.name != yn) {
        return Err(Error::validation(
            "grid",
            format!("axis `{}` is not on plane {} ({xn}, {yn})", extra.name, plane.name()),
        ));
    }
    let xs = &grid.axis(xn)?.values;
    let ys = &grid.axis(yn)?.values;
    let points: Vec<(f64, f64)> = xs.iter().flat_map(|&x| ys.iter().map(move |&y| (x, y))).collect();
    let nodes = points
        .par_iter()
        .map(|&(x, y)| {
            let summary = solve_node(plane, base, x, y).map_err(|e| e.to_string());
            if let Err(e) = &summary {
                log::warn!("{} node ({xn} = {x}, {yn} = {y}) failed: {e}", plane.name());
            }
            SweepNode { x, y, summary }
        })
        .collect();
    Ok(Surface {
        plane: plane.name().into(),
        x_name: xn.into(),
        y_name: yn.into(),
        nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::base_config;

    #[test]
    fn grid_parsing() {
        let g: GridSpec = "p=0:1:0.25, theta=2".parse().unwrap();
        assert_eq!(g.axes[0].values, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.axes[1].values, vec![2.0]);
        let g: GridSpec = "p=0:1:0.05".parse().unwrap();
        assert_eq!(g.axes[0].values.len(), 21);
        assert!((g.axes[0].values[20] - 1.0).abs() < 1e-15);
        for bad in ["p", "p=1:0:0.1", "p=0:1:0", "p=a", "p=0,p=1", "p=0:1"] {
            assert!(bad.parse::<GridSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn registry_has_four_planes() {
        let r = PlaneRegistry::global();
        assert_eq!(r.names(), ["p-theta", "p-c", "p-alpha", "p-gamma"]);
        assert_eq!(r.get("p-alpha").unwrap().axes(), ["p", "alpha"]);
        assert!(r.get("q-r").is_err());
    }

    #[test]
    fn no_informed_riders_flatten_theta() {
        let plane = PlaneRegistry::global().get("p-theta").unwrap();
        let s = sweep(plane, &"p=0,theta=0:2:0.5".parse().unwrap(), &base_config(100)).unwrap();
        let first = s.nodes[0].summary.clone().unwrap();
        for n in &s.nodes {
            assert_eq!(n.summary.clone().unwrap(), first);
        }
    }

    #[test]
    fn bad_nodes_are_flagged() {
        let plane = PlaneRegistry::global().get("p-c").unwrap();
        let s = sweep(plane, &"p=0.5,c=1:2:0.5".parse().unwrap(), &base_config(100)).unwrap();
        assert_eq!(s.nodes.len(), 3);
        assert_eq!(s.failed(), 1);
        assert!(s.nodes[1].summary.as_ref().unwrap_err().contains("integer"));
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,y,ybar0,ybar1,ybarKm1,ybarK,entropy,status\n"));
        assert_eq!(text.lines().filter(|l| l.contains("NaN")).count(), 1);
    }

    #[test]
    fn axes_must_match_the_plane() {
        let plane = PlaneRegistry::global().get("p-gamma").unwrap();
        assert!(sweep(plane, &"p=0,theta=1".parse().unwrap(), &base_config(10)).is_err());
        let s = sweep(plane, &"p=0.5,gamma=5:15:5".parse().unwrap(), &base_config(10)).unwrap();
        assert_eq!(s.failed(), 0);
        // more bikes, fewer empty stations
        let y0: Vec<f64> = s.nodes.iter().map(|n| n.summary.as_ref().unwrap().ybar0).collect();
        assert!(y0[0] > y0[1] && y0[1] > y0[2], "{y0:?}");
    }
}
