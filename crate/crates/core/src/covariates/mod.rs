//! Per-site covariate extraction from feature layers and grids.
//!
//! A covariate set is a list of [`CovariateSpec`]s, each naming a source
//! (a feature layer, a real-valued grid or a land-cover grid) and the measure
//! to take around every site. [`build_matrix`] evaluates a set for a list of
//! locations and assembles a [`CovariateMatrix`].
//!
//! Layer sources may carry a category filter, `pois:gas_station`, which
//! restricts the layer to features with that label.

mod buffer;
mod ladder;
mod matrix;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use buffer::{
    count_points_in_buffer, count_points_in_buffers, distance_to_nearest, landcover_fraction,
    line_length_in_buffer, line_length_in_buffers, segment_length_in_disk, LandcoverIndex,
};
pub use ladder::{default_covariate_set, DefaultSetSources, FIRE_BUFFERS_M, LANDCOVER_WINDOWS_M, POI_BUFFERS_M, ROAD_BUFFERS_M};
pub use matrix::{ColumnMeta, CovariateMatrix};

use crate::error::{Error, Result};
use crate::geodata::{CategoricalGrid, FeatureLayer, Lattice, RasterGrid, DEFAULT_NODATA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    PointCount,
    LineLength,
    LandcoverFraction,
    DistanceToNearest,
    GridSample,
    CoordinateX,
    CoordinateY,
}

impl CovariateKind {
    fn needs_buffer(self) -> bool {
        matches!(
            self,
            CovariateKind::PointCount | CovariateKind::LineLength | CovariateKind::LandcoverFraction
        )
    }
}

/// One covariate definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(default)]
    pub source: String,
    pub kind: CovariateKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<i32>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub buffer_m: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl CovariateSpec {
    pub fn new(name: impl Into<String>, source: impl Into<String>, kind: CovariateKind) -> Self {
        Self {
            name: name.into(),
            source: source.into(),
            kind,
            category: None,
            buffer_m: 0.0,
        }
    }

    pub fn buffered(mut self, buffer_m: f64) -> Self {
        self.buffer_m = buffer_m;
        self
    }

    pub fn with_category(mut self, category: i32) -> Self {
        self.category = Some(category);
        self
    }

    pub fn coordinate_x() -> Self {
        Self::new("x_coord", "", CovariateKind::CoordinateX)
    }

    pub fn coordinate_y() -> Self {
        Self::new("y_coord", "", CovariateKind::CoordinateY)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::invalid("covariate name is empty"));
        }
        if self.kind.needs_buffer() && !(self.buffer_m > 0.0) {
            return Err(Error::invalid(format!(
                "covariate `{}` needs buffer_m > 0",
                self.name
            )));
        }
        if self.kind == CovariateKind::LandcoverFraction && self.category.is_none() {
            return Err(Error::invalid(format!(
                "covariate `{}` needs a land-cover category",
                self.name
            )));
        }
        Ok(())
    }
}

/// Checks every spec and name uniqueness.
pub fn validate_specs(specs: &[CovariateSpec]) -> Result<()> {
    let mut seen = HashSet::new();
    for s in specs {
        s.validate()?;
        if !seen.insert(s.name.as_str()) {
            return Err(Error::invalid(format!("duplicate covariate name `{}`", s.name)));
        }
    }
    Ok(())
}

pub fn read_specs(path: impl AsRef<Path>) -> Result<Vec<CovariateSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let specs: Vec<CovariateSpec> = serde_json::from_str(&text)?;
    validate_specs(&specs)?;
    Ok(specs)
}

/// A location to evaluate covariates at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SitePoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

impl SitePoint {
    pub fn new(id: impl Into<String>, x: f64, y: f64) -> Self {
        Self { id: id.into(), x, y }
    }
}

/// Named data that covariate specs refer to.
#[derive(Debug, Clone, Default)]
pub struct CovariateSources {
    pub layers: BTreeMap<String, FeatureLayer>,
    pub grids: BTreeMap<String, RasterGrid>,
    pub landcover: BTreeMap<String, CategoricalGrid>,
}

impl CovariateSources {
    pub fn with_layer(mut self, name: impl Into<String>, layer: FeatureLayer) -> Self {
        self.layers.insert(name.into(), layer);
        self
    }

    pub fn with_grid(mut self, name: impl Into<String>, grid: RasterGrid) -> Self {
        self.grids.insert(name.into(), grid);
        self
    }

    pub fn with_landcover(mut self, name: impl Into<String>, grid: CategoricalGrid) -> Self {
        self.landcover.insert(name.into(), grid);
        self
    }
}

enum Resolved<'a> {
    Layer(std::borrow::Cow<'a, FeatureLayer>),
    Grid(&'a RasterGrid),
    Landcover(LandcoverIndex),
    None,
}

fn resolve<'a>(sources: &'a CovariateSources, spec: &CovariateSpec) -> Result<Resolved<'a>> {
    use std::borrow::Cow;
    let missing = |what: &str| Error::invalid(format!("covariate `{}`: unknown {what} `{}`", spec.name, spec.source));
    Ok(match spec.kind {
        CovariateKind::CoordinateX | CovariateKind::CoordinateY => Resolved::None,
        CovariateKind::GridSample => Resolved::Grid(sources.grids.get(&spec.source).ok_or_else(|| missing("grid"))?),
        CovariateKind::LandcoverFraction => {
            let g = sources.landcover.get(&spec.source).ok_or_else(|| missing("land-cover grid"))?;
            Resolved::Landcover(LandcoverIndex::new(g))
        }
        CovariateKind::PointCount | CovariateKind::LineLength | CovariateKind::DistanceToNearest => {
            match spec.source.split_once(':') {
                Some((layer, category)) => {
                    let l = sources.layers.get(layer).ok_or_else(|| missing("layer"))?;
                    Resolved::Layer(Cow::Owned(l.filter_category(category)?))
                }
                None => Resolved::Layer(Cow::Borrowed(
                    sources.layers.get(&spec.source).ok_or_else(|| missing("layer"))?,
                )),
            }
        }
    })
}

/// Evaluates every spec at every site.
///
/// Specs sharing a source and a buffered kind are evaluated together so a
/// ladder of radii costs one candidate sweep per site. Any site yielding
/// nodata for any spec fails the whole build with the full list of offending
/// (site, spec) pairs.
pub fn build_matrix(sites: &[SitePoint], specs: &[CovariateSpec], sources: &CovariateSources) -> Result<CovariateMatrix> {
    let points: Vec<(f64, f64)> = sites.iter().map(|s| (s.x, s.y)).collect();
    let raw = evaluate_specs(&points, specs, sources)?;
    let mut failures: Vec<(usize, usize)> = Vec::new();
    let columns: Vec<Vec<f64>> = raw
        .into_iter()
        .enumerate()
        .map(|(j, col)| {
            col.into_iter()
                .enumerate()
                .map(|(i, v)| {
                    v.unwrap_or_else(|| {
                        failures.push((i, j));
                        f64::NAN
                    })
                })
                .collect()
        })
        .collect();
    if !failures.is_empty() {
        failures.sort_unstable();
        return Err(Error::CovariateNodata(
            failures
                .into_iter()
                .map(|(i, j)| (sites[i].id.clone(), specs[j].name.clone()))
                .collect(),
        ));
    }
    CovariateMatrix::from_columns(
        sites.iter().map(|s| s.id.clone()).collect(),
        specs.iter().map(|s| s.name.clone()).collect(),
        columns,
    )
}

/// Evaluates every spec at every cell center of `lattice`; cells where a
/// spec has no data hold the grid's nodata value.
pub fn build_grids(lattice: &Lattice, specs: &[CovariateSpec], sources: &CovariateSources) -> Result<BTreeMap<String, RasterGrid>> {
    let points: Vec<(f64, f64)> = (0..lattice.len()).map(|i| lattice.center_of(i)).collect();
    let raw = evaluate_specs(&points, specs, sources)?;
    let mut out = BTreeMap::new();
    for (spec, col) in specs.iter().zip(raw) {
        let values = col.into_iter().map(|v| v.unwrap_or(DEFAULT_NODATA)).collect();
        out.insert(spec.name.clone(), RasterGrid::new(*lattice, values, DEFAULT_NODATA)?);
    }
    Ok(out)
}

/// Column-major spec values at each point, `None` where a source has no data.
pub fn evaluate_specs(points: &[(f64, f64)], specs: &[CovariateSpec], sources: &CovariateSources) -> Result<Vec<Vec<Option<f64>>>> {
    validate_specs(specs)?;

    // group indices by (kind, source[, category]) so ladders share work
    let mut groups: Vec<(CovariateKind, String, Vec<usize>)> = Vec::new();
    let mut by_key: HashMap<(CovariateKind, &str), usize> = HashMap::new();
    for (j, s) in specs.iter().enumerate() {
        let shareable = matches!(s.kind, CovariateKind::PointCount | CovariateKind::LineLength | CovariateKind::LandcoverFraction);
        if shareable {
            if let Some(&g) = by_key.get(&(s.kind, s.source.as_str())) {
                groups[g].2.push(j);
                continue;
            }
            by_key.insert((s.kind, s.source.as_str()), groups.len());
        }
        groups.push((s.kind, s.source.clone(), vec![j]));
    }

    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); specs.len()];
    for (kind, _, members) in &groups {
        let resolved = resolve(sources, &specs[members[0]])?;
        if let (Resolved::Layer(layer), CovariateKind::PointCount | CovariateKind::LineLength) = (&resolved, kind) {
            let want = if *kind == CovariateKind::PointCount {
                crate::geodata::FeatureKind::Points
            } else {
                crate::geodata::FeatureKind::Polylines
            };
            if layer.kind() != want {
                return Err(Error::invalid(format!(
                    "covariate `{}`: layer `{}` is not a {want:?} layer",
                    specs[members[0]].name, specs[members[0]].source
                )));
            }
        }
        let radii: Vec<f64> = members.iter().map(|&j| specs[j].buffer_m).collect();
        let per_site: Vec<Vec<Option<f64>>> = points
            .par_iter()
            .map(|&(x, y)| -> Result<Vec<Option<f64>>> {
                Ok(match (&resolved, kind) {
                    (_, CovariateKind::CoordinateX) => vec![Some(x)],
                    (_, CovariateKind::CoordinateY) => vec![Some(y)],
                    (Resolved::Grid(g), _) => vec![match g.bilinear_sample(x, y) {
                        Ok(v) => Some(v),
                        Err(Error::Nodata(_) | Error::OutOfDomain { .. }) => None,
                        Err(e) => return Err(e),
                    }],
                    (Resolved::Layer(l), CovariateKind::PointCount) => count_points_in_buffers(l, x, y, &radii)?
                        .into_iter()
                        .map(|c| Some(c as f64))
                        .collect(),
                    (Resolved::Layer(l), CovariateKind::LineLength) => {
                        line_length_in_buffers(l, x, y, &radii)?.into_iter().map(Some).collect()
                    }
                    (Resolved::Layer(l), CovariateKind::DistanceToNearest) => vec![Some(distance_to_nearest(l, x, y)?)],
                    (Resolved::Landcover(idx), _) => members
                        .iter()
                        .map(|&j| {
                            let s = &specs[j];
                            match idx.fraction(s.category.unwrap_or_default(), x, y, s.buffer_m) {
                                Ok(v) => Ok(Some(v)),
                                Err(Error::Nodata(_)) => Ok(None),
                                Err(e) => Err(e),
                            }
                        })
                        .collect::<Result<Vec<_>>>()?,
                    _ => unreachable!("source resolution matches kind"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for (k, &j) in members.iter().enumerate() {
            columns[j] = per_site.iter().map(|vals| vals[k]).collect();
        }
    }
    Ok(columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{Feature, FeatureKind, Lattice};

    #[test]
    fn coordinates_only() {
        let sites = vec![SitePoint::new("s1", 1234.5, -87.0)];
        let m = build_matrix(
            &sites,
            &[CovariateSpec::coordinate_x(), CovariateSpec::coordinate_y()],
            &CovariateSources::default(),
        )
        .unwrap();
        assert_eq!(m.row(0), vec![1234.5, -87.0]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let sites = vec![SitePoint::new("s1", 0.0, 0.0)];
        let specs = vec![CovariateSpec::coordinate_x(), CovariateSpec::new("x_coord", "", CovariateKind::CoordinateY)];
        assert!(matches!(
            build_matrix(&sites, &specs, &CovariateSources::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn buffer_kinds_need_radius() {
        let s = CovariateSpec::new("poi", "pois", CovariateKind::PointCount);
        assert!(s.validate().is_err());
        assert!(s.buffered(100.0).validate().is_ok());
        let lc = CovariateSpec::new("lc", "lc", CovariateKind::LandcoverFraction).buffered(300.0);
        assert!(lc.validate().is_err());
    }

    #[test]
    fn nodata_sites_are_listed() {
        let lat = Lattice::new(0.0, 0.0, 10.0, 3, 3).unwrap();
        let grid = RasterGrid::filled(lat, 1.0);
        let sources = CovariateSources::default().with_grid("elev", grid);
        let sites = vec![SitePoint::new("in", 15.0, 15.0), SitePoint::new("out", 500.0, 500.0)];
        let specs = vec![CovariateSpec::new("elev", "elev", CovariateKind::GridSample)];
        match build_matrix(&sites, &specs, &sources) {
            Err(Error::CovariateNodata(pairs)) => assert_eq!(pairs, vec![("out".to_string(), "elev".to_string())]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn category_filtered_source() {
        let layer = FeatureLayer::new(
            FeatureKind::Points,
            vec![
                Feature::point("a", 1.0, 0.0).with_category("bus"),
                Feature::point("b", 2.0, 0.0).with_category("gas"),
                Feature::point("c", 3.0, 0.0).with_category("bus"),
            ],
        )
        .unwrap();
        let sources = CovariateSources::default().with_layer("pois", layer);
        let specs = vec![
            CovariateSpec::new("bus_10", "pois:bus", CovariateKind::PointCount).buffered(10.0),
            CovariateSpec::new("all_10", "pois", CovariateKind::PointCount).buffered(10.0),
            CovariateSpec::new("all_1", "pois", CovariateKind::PointCount).buffered(1.5),
        ];
        let m = build_matrix(&[SitePoint::new("s", 0.0, 0.0)], &specs, &sources).unwrap();
        assert_eq!(m.row(0), vec![2.0, 3.0, 1.0]);
    }

    #[test]
    fn wrong_layer_kind_for_line_length() {
        let layer = FeatureLayer::new(FeatureKind::Points, vec![Feature::point("a", 1.0, 0.0)]).unwrap();
        let sources = CovariateSources::default().with_layer("p", layer);
        let specs = vec![CovariateSpec::new("len", "p", CovariateKind::LineLength).buffered(10.0)];
        assert!(build_matrix(&[SitePoint::new("s", 0.0, 0.0)], &specs, &sources).is_err());
    }

    #[test]
    fn spec_json_shape() {
        let json = r#"[{"name":"road_500","source":"roads","kind":"line_length","buffer_m":500},
                       {"name":"lc_1_300","source":"lc","kind":"landcover_fraction","category":1,"buffer_m":300},
                       {"name":"x","kind":"coordinate_x"}]"#;
        let specs: Vec<CovariateSpec> = serde_json::from_str(json).unwrap();
        validate_specs(&specs).unwrap();
        assert_eq!(specs[1].category, Some(1));
        assert_eq!(specs[2].source, "");
    }
}
