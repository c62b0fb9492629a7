//! Default buffer ladders and the covariate set built from them.

use super::{CovariateKind, CovariateSpec};

/// Road and railway length buffers: 16 radii from 100 m to 10 km.
pub const ROAD_BUFFERS_M: [f64; 16] = [
    100.0, 200.0, 300.0, 400.0, 500.0, 750.0, 1000.0, 1250.0, 1500.0, 2000.0, 2500.0, 3000.0, 4000.0,
    5000.0, 7500.0, 10000.0,
];

/// Land-cover moving windows: 11 sides from 300 m to 30 km.
pub const LANDCOVER_WINDOWS_M: [f64; 11] = [
    300.0, 500.0, 750.0, 1000.0, 1500.0, 2000.0, 3000.0, 5000.0, 10000.0, 20000.0, 30000.0,
];

/// Point-of-interest count buffers: 22 radii from 100 m to 50 km.
pub const POI_BUFFERS_M: [f64; 22] = [
    100.0, 200.0, 300.0, 400.0, 500.0, 750.0, 1000.0, 1250.0, 1500.0, 2000.0, 2500.0, 3000.0, 4000.0,
    5000.0, 7500.0, 10000.0, 15000.0, 20000.0, 25000.0, 30000.0, 40000.0, 50000.0,
];

/// Fire-spot count buffers: 10 radii from 5 km to 100 km.
pub const FIRE_BUFFERS_M: [f64; 10] = [
    5000.0, 10000.0, 15000.0, 20000.0, 30000.0, 40000.0, 50000.0, 60000.0, 80000.0, 100000.0,
];

/// Source names feeding [`default_covariate_set`].
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DefaultSetSources {
    /// Polyline layers measured by length in [`ROAD_BUFFERS_M`].
    pub line_layers: Vec<String>,
    /// Layers measured by distance to the nearest feature.
    pub distance_layers: Vec<String>,
    /// Point layers (optionally `layer:category`) counted in [`POI_BUFFERS_M`].
    pub poi_layers: Vec<String>,
    /// Point layers counted in [`FIRE_BUFFERS_M`].
    pub fire_layers: Vec<String>,
    /// Land-cover grid name and its category codes.
    pub landcover: Option<(String, Vec<i32>)>,
    /// Real-valued grids sampled at each site.
    pub grids: Vec<String>,
    pub coordinates: bool,
}

fn tag(source: &str) -> String {
    source.replace(':', "_")
}

fn fmt_m(m: f64) -> String {
    format!("{}", m as u64)
}

/// Expands the default ladders over the given sources.
pub fn default_covariate_set(src: &DefaultSetSources) -> Vec<CovariateSpec> {
    let mut specs = Vec::new();
    for l in &src.line_layers {
        for &r in &ROAD_BUFFERS_M {
            specs.push(CovariateSpec::new(format!("{}_len_{}", tag(l), fmt_m(r)), l, CovariateKind::LineLength).buffered(r));
        }
    }
    for l in &src.distance_layers {
        specs.push(CovariateSpec::new(format!("{}_dist", tag(l)), l, CovariateKind::DistanceToNearest));
    }
    if let Some((grid, cats)) = &src.landcover {
        for &c in cats {
            for &w in &LANDCOVER_WINDOWS_M {
                specs.push(
                    CovariateSpec::new(format!("{}_{c}_{}", tag(grid), fmt_m(w)), grid, CovariateKind::LandcoverFraction)
                        .with_category(c)
                        .buffered(w),
                );
            }
        }
    }
    for l in &src.poi_layers {
        for &r in &POI_BUFFERS_M {
            specs.push(CovariateSpec::new(format!("{}_n_{}", tag(l), fmt_m(r)), l, CovariateKind::PointCount).buffered(r));
        }
    }
    for l in &src.fire_layers {
        for &r in &FIRE_BUFFERS_M {
            specs.push(CovariateSpec::new(format!("{}_n_{}", tag(l), fmt_m(r)), l, CovariateKind::PointCount).buffered(r));
        }
    }
    for g in &src.grids {
        specs.push(CovariateSpec::new(tag(g), g, CovariateKind::GridSample));
    }
    if src.coordinates {
        specs.push(CovariateSpec::coordinate_x());
        specs.push(CovariateSpec::coordinate_y());
    }
    specs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::validate_specs;

    #[test]
    fn ladder_sizes() {
        assert_eq!(ROAD_BUFFERS_M.len(), 16);
        assert_eq!(LANDCOVER_WINDOWS_M.len(), 11);
        assert_eq!(POI_BUFFERS_M.len(), 22);
        assert_eq!(FIRE_BUFFERS_M.len(), 10);
        assert_eq!((ROAD_BUFFERS_M[0], ROAD_BUFFERS_M[15]), (100.0, 10_000.0));
        assert_eq!((POI_BUFFERS_M[0], POI_BUFFERS_M[21]), (100.0, 50_000.0));
        assert_eq!((FIRE_BUFFERS_M[0], FIRE_BUFFERS_M[9]), (5_000.0, 100_000.0));
        assert_eq!((LANDCOVER_WINDOWS_M[0], LANDCOVER_WINDOWS_M[10]), (300.0, 30_000.0));
    }

    #[test]
    fn national_style_set_has_expected_size() {
        let src = DefaultSetSources {
            line_layers: vec!["roads".into(), "major".into(), "secondary".into(), "rail".into()],
            distance_layers: vec!["major".into(), "secondary".into(), "rail".into()],
            poi_layers: ["gas", "heat", "factory", "bus", "restaurant"].iter().map(|c| format!("pois:{c}")).collect(),
            fire_layers: vec!["fires".into()],
            landcover: Some(("lc".into(), (1..=8).collect())),
            grids: (0..14).map(|i| format!("g{i}")).collect(),
            coordinates: true,
        };
        let specs = default_covariate_set(&src);
        // 64 road + 3 distance + 88 land cover + 110 POI + 10 fire + 14 grids + 2 coordinates
        assert_eq!(specs.len(), 291);
        validate_specs(&specs).unwrap();
    }
}
