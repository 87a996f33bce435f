use cechlat::exact::{parse_q, Q};
use cechlat::geometry::{SemilinearSet, MAX_DIM};
use cechlat::invariants::ConeGraph;
use cechlat::lattice::{LatticeSystem, DEFAULT_DIM_CAP};
use cechlat::nerve::{fundamental_cocycle, Cochain, Cover, Nerve};
use cechlat::state::SpinModel;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::sync::Arc;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    pub lattice: Option<LatticeSpec>,
    pub model: ModelSpec,
    #[serde(default)]
    pub symmetry: SymmetrySpec,
    pub cover: Option<CoverSpec>,
    #[serde(default)]
    pub cocycle: CocycleSpec,
    #[serde(default)]
    pub filter: FilterSpec,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub output: Option<String>,
    pub seed: Option<u64>,
    pub model_id: Option<String>,
    pub cover_id: Option<String>,
    /// Order in which cover elements are split off.
    pub split_order: Option<Vec<usize>>,
    /// Thickening radius confining the lattice to a conical subset.
    pub epsilon: Option<String>,
}

fn default_dimension() -> usize {
    2
}

fn default_order() -> usize {
    2
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub lo: Option<Vec<i64>>,
    pub hi: Option<Vec<i64>>,
    pub shape: Option<Vec<i64>>,
}

impl LatticeSpec {
    pub fn build(&self, dimension: usize) -> Result<Arc<LatticeSystem>, CliError> {
        let (lo, hi) = match (&self.shape, &self.lo, &self.hi) {
            (Some(s), None, None) => (vec![0; s.len()], s.iter().map(|v| v - 1).collect::<Vec<_>>()),
            (None, Some(lo), Some(hi)) => (lo.clone(), hi.clone()),
            _ => return Err(CliError::Usage("lattice needs either `shape` or both `lo` and `hi`".into())),
        };
        if lo.len() != dimension {
            return Err(CliError::Usage(format!("lattice has dimension {}, config says {dimension}", lo.len())));
        }
        let sites: i64 = lo.iter().zip(&hi).map(|(a, b)| (b - a + 1).max(0)).product();
        if sites <= 0 || sites > 12 {
            return Err(CliError::Usage(format!("lattice with {sites} sites exceeds the dimension cap {DEFAULT_DIM_CAP}")));
        }
        LatticeSystem::new(&lo, &hi, 2).map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Tfim { j: f64, g: f64 },
    Xxz { jxy: f64, jz: f64, field: f64 },
    Zfield { hz: f64 },
    Custom { onsite: Vec<(Vec<i64>, [f64; 3])>, bonds: Vec<(Vec<i64>, Vec<i64>, [f64; 3])> },
    /// Free-fermion oracle: two-band model on an `l × l` torus.
    Qwz {
        l: usize,
        masses: Vec<f64>,
        #[serde(default = "default_grid")]
        grid: usize,
    },
}

fn default_grid() -> usize {
    48
}

impl ModelSpec {
    pub fn spin_model(&self, lat: &LatticeSystem) -> Option<SpinModel> {
        Some(match self {
            ModelSpec::Tfim { j, g } => SpinModel::tfim(lat, *j, *g),
            ModelSpec::Xxz { jxy, jz, field } => SpinModel::xxz(lat, *jxy, *jz, *field),
            ModelSpec::Zfield { hz } => SpinModel::zfield(lat, *hz),
            ModelSpec::Custom { onsite, bonds } => SpinModel { onsite: onsite.clone(), bonds: bonds.clone() },
            ModelSpec::Qwz { .. } => return None,
        })
    }

    pub fn id(&self) -> String {
        match self {
            ModelSpec::Tfim { j, g } => format!("tfim(j={j};g={g})"),
            ModelSpec::Xxz { jxy, jz, field } => format!("xxz(jxy={jxy};jz={jz};b={field})"),
            ModelSpec::Zfield { hz } => format!("zfield(h={hz})"),
            ModelSpec::Custom { .. } => "custom".into(),
            ModelSpec::Qwz { l, .. } => format!("qwz(l={l})"),
        }
    }
}

#[derive(Debug, Default, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SymmetrySpec {
    #[default]
    U1,
    Su2,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoverSpec {
    PlanarCones { directions: Vec<[i64; 2]> },
    Orthants { n: usize },
    Graph { vertices: Vec<[i64; 3]>, edges: Vec<(usize, usize)> },
    Sets { base: serde_json::Value, elements: Vec<serde_json::Value> },
}

impl CoverSpec {
    pub fn build(&self) -> Result<Cover, CliError> {
        let usage = |e: &dyn std::fmt::Display| CliError::Usage(e.to_string());
        match self {
            CoverSpec::PlanarCones { directions } => Cover::planar_cones(directions).map_err(|e| usage(&e)),
            CoverSpec::Orthants { n } => {
                if *n == 0 || *n > MAX_DIM {
                    return Err(CliError::Usage(format!("orthant dimension {n} outside 1..={MAX_DIM}")));
                }
                Ok(Cover::orthants(*n))
            }
            CoverSpec::Graph { .. } => self.graph().expect("graph").star_cover().map_err(|e| usage(&e)),
            CoverSpec::Sets { base, elements } => {
                let base = SemilinearSet::from_json(base).map_err(|e| usage(&e))?;
                let elements = elements
                    .iter()
                    .map(SemilinearSet::from_json)
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| usage(&e))?;
                Cover::new(base, elements).map_err(|e| usage(&e))
            }
        }
    }

    pub fn graph(&self) -> Option<ConeGraph> {
        match self {
            CoverSpec::Graph { vertices, edges } => Some(ConeGraph { vertices: vertices.clone(), edges: edges.clone() }),
            _ => None,
        }
    }

    pub fn id(&self) -> String {
        match self {
            CoverSpec::PlanarCones { directions } => format!("cones{}", directions.len()),
            CoverSpec::Orthants { n } => format!("orthants{n}"),
            CoverSpec::Graph { vertices, edges } => format!("graph(v={};e={})", vertices.len(), edges.len()),
            CoverSpec::Sets { elements, .. } => format!("sets{}", elements.len()),
        }
    }
}

/// Either the fundamental class with an orientation, or explicit values on
/// index tuples written `"i,j"`; `shift` adds the coboundary of a 0-cochain.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CocycleSpec {
    pub orientation: Option<i32>,
    pub values: Option<BTreeMap<String, String>>,
    pub shift: Option<BTreeMap<String, String>>,
}

fn parse_tuple(key: &str) -> Result<Vec<usize>, CliError> {
    key.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| CliError::Usage(format!("bad index tuple {key:?}"))))
        .collect()
}

fn parse_rational(s: &str) -> Result<Q, CliError> {
    parse_q(s).ok_or_else(|| CliError::Usage(format!("bad rational {s:?}")))
}

impl CocycleSpec {
    pub fn build(&self, cover: &Cover, nerve: &Nerve) -> Result<Cochain, CliError> {
        let mut beta = match &self.values {
            Some(vals) => {
                let mut c: Option<Cochain> = None;
                for (k, v) in vals {
                    let s = parse_tuple(k)?;
                    let unit = Cochain::unit(s).scale(&parse_rational(v)?);
                    c = Some(match c {
                        Some(acc) if acc.degree != unit.degree => {
                            return Err(CliError::Usage("cocycle values of mixed degree".into()))
                        }
                        Some(acc) => acc.add(&unit),
                        None => unit,
                    });
                }
                c.ok_or_else(|| CliError::Usage("empty cocycle".into()))?
            }
            None => fundamental_cocycle(cover, self.orientation.unwrap_or(1)).map_err(|e| CliError::Usage(e.to_string()))?,
        };
        if let Some(shift) = &self.shift {
            let mut b = Cochain::zero(0);
            for (k, v) in shift {
                b = b.add(&Cochain::unit(parse_tuple(k)?).scale(&parse_rational(v)?));
            }
            if beta.degree != 1 {
                return Err(CliError::Usage("coboundary shifts are supported for 1-cocycles".into()));
            }
            beta = beta.add(&b.coboundary(nerve));
        }
        if !beta.is_cocycle(nerve) {
            return Err(CliError::Usage("cochain is not a cocycle on the nerve".into()));
        }
        Ok(beta)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    /// Declared spectral gap; the filter is supported in `|ω| < gap/2`.
    pub gap: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec { gap: 0.05 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "tol_preservation")]
    pub preservation: f64,
    #[serde(default = "tol_mc")]
    pub mc: f64,
    #[serde(default = "tol_chern")]
    pub chern: f64,
}

fn tol_preservation() -> f64 {
    1e-8
}
fn tol_mc() -> f64 {
    1e-9
}
fn tol_chern() -> f64 {
    1e-6
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { preservation: tol_preservation(), mc: tol_mc(), chern: tol_chern() }
    }
}

/// Input of the `site` command.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteQuery {
    pub op: SiteOp,
    pub a: serde_json::Value,
    pub b: Option<serde_json::Value>,
    pub radius: Option<String>,
}

#[derive(Debug, Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
pub enum SiteOp {
    Canonicalize,
    Meet,
    Join,
    FuzzyLeq,
    Thicken,
}

impl SiteQuery {
    pub fn sets(&self) -> Result<(SemilinearSet, Option<SemilinearSet>), CliError> {
        let parse = |v: &serde_json::Value| SemilinearSet::from_json(v).map_err(|e| CliError::Usage(e.to_string()));
        let a = parse(&self.a)?;
        let b = self.b.as_ref().map(parse).transpose()?;
        Ok((a, b))
    }

    pub fn radius(&self) -> Result<Q, CliError> {
        parse_rational(self.radius.as_deref().ok_or_else(|| CliError::Usage("thicken needs `radius`".into()))?)
    }
}

/// Input of the `nerve` command.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NerveQuery {
    pub cover: CoverSpec,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {path}: {e}")))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {path}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cechlat::nerve::build_nerve;

    fn parse<T: serde::de::DeserializeOwned>(s: &str) -> T {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn run_config_defaults() {
        let c: RunConfig = parse(r#"{"lattice": {"shape": [2, 2]}, "model": {"kind": "tfim", "j": 1.0, "g": 2.0}}"#);
        assert_eq!(c.dimension, 2);
        assert_eq!(c.order, 2);
        assert_eq!(c.symmetry, SymmetrySpec::U1);
        assert_eq!(c.filter.gap, 0.05);
        assert_eq!(c.tolerances.mc, 1e-9);
        assert_eq!(c.model.id(), "tfim(j=1;g=2)");
        assert!(serde_json::from_str::<RunConfig>(r#"{"model": {"kind": "zfield", "hz": 1.0}, "extra": 0}"#).is_err());
    }

    #[test]
    fn lattice_bounds_and_cap() {
        let ok: LatticeSpec = parse(r#"{"lo": [-1, 0], "hi": [0, 2]}"#);
        assert_eq!(ok.build(2).unwrap().sites.len(), 6);
        assert!(matches!(ok.build(3), Err(CliError::Usage(_))));
        let big: LatticeSpec = parse(r#"{"shape": [4, 4]}"#);
        assert!(matches!(big.build(2), Err(CliError::Usage(_))));
        let both: LatticeSpec = parse(r#"{"shape": [2], "lo": [0]}"#);
        assert!(both.build(1).is_err());
    }

    #[test]
    fn cocycles_from_values_and_shifts() {
        let cover: CoverSpec = parse(r#"{"kind": "planar_cones", "directions": [[1, 0], [-1, 1], [-1, -1]]}"#);
        let cover = cover.build().unwrap();
        let nerve = build_nerve(&cover);
        let fundamental = CocycleSpec::default().build(&cover, &nerve).unwrap();
        let shifted: CocycleSpec = parse(r#"{"shift": {"1": "3/2"}}"#);
        let shifted = shifted.build(&cover, &nerve).unwrap();
        assert!(shifted.is_cocycle(&nerve));
        assert_ne!(shifted.to_json(), fundamental.to_json());
        let bad: CocycleSpec = parse(r#"{"values": {"0,1": "1", "0": "1"}}"#);
        assert!(bad.build(&cover, &nerve).is_err());
        let garbage: CocycleSpec = parse(r#"{"values": {"0,x": "1"}}"#);
        assert!(garbage.build(&cover, &nerve).is_err());
    }

    #[test]
    fn covers_and_site_queries() {
        let o: CoverSpec = parse(r#"{"kind": "orthants", "n": 3}"#);
        assert_eq!(o.build().unwrap().len(), 8);
        assert_eq!(o.id(), "orthants3");
        let huge: CoverSpec = parse(r#"{"kind": "orthants", "n": 9}"#);
        assert!(huge.build().is_err());
        let q: SiteQuery = parse(r#"{"op": "thicken", "a": {"dim": 1, "pieces": [{"halfspaces": []}]}, "radius": "2/3"}"#);
        assert_eq!(q.radius().unwrap(), cechlat::exact::qr(2, 3));
        assert!(q.sets().unwrap().1.is_none());
    }
}
