use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar point in projected meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned box, closed on all sides.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn of_points(points: &[Point]) -> Self {
        let mut b = BBox {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for p in points {
            b.min_x = b.min_x.min(p.x);
            b.min_y = b.min_y.min(p.y);
            b.max_x = b.max_x.max(p.x);
            b.max_y = b.max_y.max(p.y);
        }
        b
    }

    #[inline]
    pub fn intersects(&self, other: &BBox) -> bool {
        self.min_x <= other.max_x
            && other.min_x <= self.max_x
            && self.min_y <= other.max_y
            && other.min_y <= self.max_y
    }

    pub fn diagonal(&self) -> f64 {
        (self.max_x - self.min_x).hypot(self.max_y - self.min_y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Geometry {
    Point(Point),
    LineString(Vec<Point>),
}

impl Geometry {
    fn vertices(&self) -> &[Point] {
        match self {
            Geometry::Point(p) => std::slice::from_ref(p),
            Geometry::LineString(v) => v,
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox::of_points(self.vertices())
    }

    pub fn to_wkt(&self) -> String {
        match self {
            Geometry::Point(p) => format!("POINT({} {})", p.x, p.y),
            Geometry::LineString(v) => {
                let coords: Vec<String> = v.iter().map(|p| format!("{} {}", p.x, p.y)).collect();
                format!("LINESTRING({})", coords.join(", "))
            }
        }
    }

    pub fn parse_wkt(text: &str) -> Result<Geometry> {
        let t = text.trim();
        let open = t
            .find('(')
            .ok_or_else(|| Error::invalid(format!("malformed WKT `{t}`")))?;
        if !t.ends_with(')') {
            return Err(Error::invalid(format!("malformed WKT `{t}`")));
        }
        let tag = t[..open].trim().to_ascii_uppercase();
        let body = &t[open + 1..t.len() - 1];
        let parse_pair = |s: &str| -> Result<Point> {
            let mut it = s.split_whitespace();
            let (Some(x), Some(y), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::invalid(format!("bad coordinate pair `{s}`")));
            };
            let num = |v: &str| {
                v.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::invalid(format!("bad coordinate `{v}`")))
            };
            Ok(Point::new(num(x)?, num(y)?))
        };
        match tag.as_str() {
            "POINT" => Ok(Geometry::Point(parse_pair(body)?)),
            "LINESTRING" => {
                let pts = body.split(',').map(parse_pair).collect::<Result<Vec<_>>>()?;
                Ok(Geometry::LineString(pts))
            }
            other => Err(Error::invalid(format!("unsupported WKT type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Points,
    Polylines,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub id: String,
    pub category: Option<String>,
    pub geometry: Geometry,
}

impl Feature {
    pub fn point(id: impl Into<String>, x: f64, y: f64) -> Self {
        Self {
            id: id.into(),
            category: None,
            geometry: Geometry::Point(Point::new(x, y)),
        }
    }

    pub fn line(id: impl Into<String>, vertices: Vec<Point>) -> Self {
        Self {
            id: id.into(),
            category: None,
            geometry: Geometry::LineString(vertices),
        }
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = Some(category.into());
        self
    }
}

/// Straight piece of a polyline, or a degenerate one standing in for a point.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Primitive {
    pub a: Point,
    pub b: Point,
}

impl Primitive {
    fn bbox(&self) -> BBox {
        BBox::of_points(&[self.a, self.b])
    }

    /// Euclidean distance from `p` to the closed segment.
    #[inline]
    pub fn distance_to(&self, p: Point) -> f64 {
        point_segment_distance(p, self.a, self.b)
    }
}

pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.distance(&a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.distance(&Point::new(a.x + t * dx, a.y + t * dy))
}

// An item spanning more buckets than this is kept on a side list that every
// query scans.
const MAX_BUCKET_SPAN: i64 = 64;

// Occupied extents up to this many buckets use flat offset arrays; larger
// ones fall back to a hash map keyed by bucket.
const MAX_DENSE_BUCKETS: i64 = 1 << 24;

#[derive(Debug, Clone)]
enum Buckets {
    Dense { width: i64, offsets: Vec<u32>, ids: Vec<u32> },
    Sparse(HashMap<(i64, i64), Vec<u32>>),
}

/// Uniform bucket grid over item bounding boxes.
#[derive(Debug, Clone)]
pub(crate) struct BucketIndex {
    size: f64,
    buckets: Buckets,
    occupied: usize,
    oversized: Vec<u32>,
    lo: (i64, i64),
    hi: (i64, i64),
}

impl BucketIndex {
    fn build(size: f64, boxes: &[BBox]) -> Self {
        let cell = |x: f64, y: f64| ((x / size).floor() as i64, (y / size).floor() as i64);
        let mut entries: Vec<((i64, i64), u32)> = Vec::new();
        let mut oversized = Vec::new();
        let mut lo = (i64::MAX, i64::MAX);
        let mut hi = (i64::MIN, i64::MIN);
        for (id, b) in boxes.iter().enumerate() {
            let (c0, r0) = cell(b.min_x, b.min_y);
            let (c1, r1) = cell(b.max_x, b.max_y);
            if (c1 - c0 + 1) * (r1 - r0 + 1) > MAX_BUCKET_SPAN {
                oversized.push(id as u32);
                continue;
            }
            lo = (lo.0.min(c0), lo.1.min(r0));
            hi = (hi.0.max(c1), hi.1.max(r1));
            for r in r0..=r1 {
                for c in c0..=c1 {
                    entries.push(((c, r), id as u32));
                }
            }
        }
        let (buckets, occupied) = if entries.is_empty() {
            (Buckets::Sparse(HashMap::new()), 0)
        } else {
            let width = hi.0 - lo.0 + 1;
            let height = hi.1 - lo.1 + 1;
            if width.saturating_mul(height) <= MAX_DENSE_BUCKETS {
                let slot = |(c, r): (i64, i64)| ((r - lo.1) * width + (c - lo.0)) as usize;
                let mut offsets = vec![0u32; (width * height) as usize + 1];
                for (b, _) in &entries {
                    offsets[slot(*b) + 1] += 1;
                }
                let occupied = offsets.iter().filter(|&&n| n > 0).count();
                for k in 1..offsets.len() {
                    offsets[k] += offsets[k - 1];
                }
                let mut fill = offsets.clone();
                let mut ids = vec![0u32; entries.len()];
                for (b, id) in &entries {
                    let s = slot(*b);
                    ids[fill[s] as usize] = *id;
                    fill[s] += 1;
                }
                (Buckets::Dense { width, offsets, ids }, occupied)
            } else {
                let mut map: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
                for (b, id) in entries {
                    map.entry(b).or_default().push(id);
                }
                let n = map.len();
                (Buckets::Sparse(map), n)
            }
        };
        BucketIndex {
            size,
            buckets,
            occupied,
            oversized,
            lo,
            hi,
        }
    }

    #[inline]
    fn cell(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.size).floor() as i64, (y / self.size).floor() as i64)
    }

    #[inline]
    fn get(&self, c: i64, r: i64) -> &[u32] {
        if c < self.lo.0 || c > self.hi.0 || r < self.lo.1 || r > self.hi.1 {
            return &[];
        }
        match &self.buckets {
            Buckets::Dense { width, offsets, ids } => {
                let s = ((r - self.lo.1) * width + (c - self.lo.0)) as usize;
                &ids[offsets[s] as usize..offsets[s + 1] as usize]
            }
            Buckets::Sparse(map) => map.get(&(c, r)).map(Vec::as_slice).unwrap_or(&[]),
        }
    }

    /// Every non-empty bucket with its coordinates.
    fn for_each_bucket(&self, mut f: impl FnMut(i64, i64, &[u32])) {
        match &self.buckets {
            Buckets::Dense { width, offsets, ids } => {
                for s in 0..offsets.len() - 1 {
                    let (a, b) = (offsets[s] as usize, offsets[s + 1] as usize);
                    if a < b {
                        let s = s as i64;
                        f(self.lo.0 + s % width, self.lo.1 + s / width, &ids[a..b]);
                    }
                }
            }
            Buckets::Sparse(map) => {
                for (&(c, r), ids) in map {
                    f(c, r, ids);
                }
            }
        }
    }

    /// Sorted, de-duplicated ids of items whose buckets touch `window`.
    fn candidates(&self, window: &BBox) -> Vec<u32> {
        let mut out = self.oversized.clone();
        if self.occupied > 0 {
            let (c0, r0) = self.cell(window.min_x, window.min_y);
            let (c1, r1) = self.cell(window.max_x, window.max_y);
            let (c0, r0) = (c0.max(self.lo.0), r0.max(self.lo.1));
            let (c1, r1) = (c1.min(self.hi.0), r1.min(self.hi.1));
            if c0 <= c1 && r0 <= r1 {
                let span = ((c1 - c0 + 1) as u128) * ((r1 - r0 + 1) as u128);
                if matches!(self.buckets, Buckets::Sparse(_)) && span > self.occupied as u128 {
                    self.for_each_bucket(|c, r, ids| {
                        if c >= c0 && c <= c1 && r >= r0 && r <= r1 {
                            out.extend_from_slice(ids);
                        }
                    });
                } else {
                    for r in r0..=r1 {
                        for c in c0..=c1 {
                            out.extend_from_slice(self.get(c, r));
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Nearest item by `dist`, searching rings of buckets outward from `p`.
    fn nearest(&self, p: Point, dist: impl Fn(u32) -> f64) -> Option<f64> {
        let mut best = self
            .oversized
            .iter()
            .map(|&id| dist(id))
            .fold(f64::INFINITY, f64::min);
        if self.occupied == 0 {
            return best.is_finite().then_some(best);
        }
        let (bx, by) = self.cell(p.x, p.y);
        let k_max = [bx - self.lo.0, self.hi.0 - bx, by - self.lo.1, self.hi.1 - by]
            .into_iter()
            .max()
            .unwrap_or(0)
            .max(0);
        let mut k: i64 = 0;
        loop {
            // everything unvisited lies outside the block of rings 0..k-1
            let s = self.size;
            let margin = (p.x - (bx - k + 1) as f64 * s)
                .min((bx + k) as f64 * s - p.x)
                .min(p.y - (by - k + 1) as f64 * s)
                .min((by + k) as f64 * s - p.y);
            if best <= margin || k > k_max {
                break;
            }
            // Once the block outgrows the occupied buckets, finish with a
            // direct sweep of what's left.
            let block = (2 * k + 1) as u128;
            if block * block > self.occupied as u128 * 4 {
                self.for_each_bucket(|c, r, ids| {
                    if (c - bx).abs() >= k || (r - by).abs() >= k {
                        for &id in ids {
                            best = best.min(dist(id));
                        }
                    }
                });
                break;
            }
            let mut visit = |c: i64, r: i64| {
                for &id in self.get(c, r) {
                    best = best.min(dist(id));
                }
            };
            if k == 0 {
                visit(bx, by);
            } else {
                for c in bx - k..=bx + k {
                    visit(c, by - k);
                    visit(c, by + k);
                }
                for r in by - k + 1..=by + k - 1 {
                    visit(bx - k, r);
                    visit(bx + k, r);
                }
            }
            k += 1;
        }
        best.is_finite().then_some(best)
    }
}

/// Indexed collection of point or polyline features.
#[derive(Debug, Clone)]
pub struct FeatureLayer {
    kind: FeatureKind,
    features: Vec<Feature>,
    bboxes: Vec<BBox>,
    feature_index: BucketIndex,
    primitives: Vec<Primitive>,
    primitive_index: BucketIndex,
}

impl FeatureLayer {
    /// Builds a layer, validating geometry against `kind`. Bucket size is the
    /// median feature-box diagonal, at least 1 km.
    pub fn new(kind: FeatureKind, features: Vec<Feature>) -> Result<Self> {
        let mut diagonals = Vec::with_capacity(features.len());
        for f in &features {
            validate_geometry(kind, f)?;
            diagonals.push(f.geometry.bbox().diagonal());
        }
        diagonals.sort_by(f64::total_cmp);
        let median = diagonals.get(diagonals.len() / 2).copied().unwrap_or(0.0);
        Self::with_bucket_size(kind, features, median.max(1000.0))
    }

    pub fn with_bucket_size(kind: FeatureKind, features: Vec<Feature>, bucket_size: f64) -> Result<Self> {
        if !(bucket_size > 0.0) {
            return Err(Error::invalid("bucket size must be > 0"));
        }
        for f in &features {
            validate_geometry(kind, f)?;
        }
        let bboxes: Vec<BBox> = features.iter().map(|f| f.geometry.bbox()).collect();
        let mut primitives = Vec::new();
        for f in &features {
            match &f.geometry {
                Geometry::Point(p) => primitives.push(Primitive { a: *p, b: *p }),
                Geometry::LineString(v) => {
                    for w in v.windows(2) {
                        primitives.push(Primitive { a: w[0], b: w[1] });
                    }
                }
            }
        }
        let prim_boxes: Vec<BBox> = primitives.iter().map(Primitive::bbox).collect();
        Ok(Self {
            kind,
            feature_index: BucketIndex::build(bucket_size, &bboxes),
            primitive_index: BucketIndex::build(bucket_size, &prim_boxes),
            features,
            bboxes,
            primitives,
        })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// New layer holding only features with the given category label.
    pub fn filter_category(&self, category: &str) -> Result<FeatureLayer> {
        let subset = self
            .features
            .iter()
            .filter(|f| f.category.as_deref() == Some(category))
            .cloned()
            .collect();
        FeatureLayer::new(self.kind, subset)
    }

    /// Ids of every feature whose bounding box intersects the closed window.
    pub fn query_window(&self, x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Vec<String> {
        self.query_window_indices(x_min, y_min, x_max, y_max)
            .into_iter()
            .map(|i| self.features[i].id.clone())
            .collect()
    }

    pub fn query_window_indices(&self, x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Vec<usize> {
        let window = BBox {
            min_x: x_min.min(x_max),
            min_y: y_min.min(y_max),
            max_x: x_max.max(x_min),
            max_y: y_max.max(y_min),
        };
        self.feature_index
            .candidates(&window)
            .into_iter()
            .map(|i| i as usize)
            .filter(|&i| self.bboxes[i].intersects(&window))
            .collect()
    }

    /// Primitives whose boxes touch `window`, unfiltered.
    pub(crate) fn primitives_near(&self, window: &BBox) -> impl Iterator<Item = &Primitive> + '_ {
        self.primitive_index
            .candidates(window)
            .into_iter()
            .map(move |i| &self.primitives[i as usize])
    }

    pub(crate) fn nearest_distance(&self, p: Point) -> Option<f64> {
        self.primitive_index
            .nearest(p, |id| self.primitives[id as usize].distance_to(p))
    }

    /// Sum of all polyline lengths.
    pub fn total_length(&self) -> f64 {
        self.primitives.iter().map(|s| s.a.distance(&s.b)).sum()
    }
}

fn validate_geometry(kind: FeatureKind, f: &Feature) -> Result<()> {
    match (&f.geometry, kind) {
        (Geometry::Point(_), FeatureKind::Points) => Ok(()),
        (Geometry::LineString(v), FeatureKind::Polylines) => {
            if v.len() < 2 {
                return Err(Error::invalid(format!(
                    "polyline `{}` has fewer than 2 vertices",
                    f.id
                )));
            }
            if v.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid(format!(
                    "polyline `{}` repeats a vertex consecutively",
                    f.id
                )));
            }
            Ok(())
        }
        _ => Err(Error::invalid(format!(
            "feature `{}` does not match layer kind {kind:?}",
            f.id
        ))),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureRow {
    id: String,
    kind: String,
    category: String,
    wkt: String,
}

fn parse_kind(s: &str) -> Result<FeatureKind> {
    match s.trim().to_ascii_lowercase().as_str() {
        "point" | "points" => Ok(FeatureKind::Points),
        "polyline" | "polylines" | "line" | "linestring" => Ok(FeatureKind::Polylines),
        other => Err(Error::invalid(format!("unknown feature kind `{other}`"))),
    }
}

/// Reads a `id,kind,category,wkt` CSV feature layer.
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureLayer> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_features_from(file)
}

pub fn read_features_from(reader: impl std::io::Read) -> Result<FeatureLayer> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut kind: Option<FeatureKind> = None;
    let mut features = Vec::new();
    for (i, row) in rdr.deserialize::<FeatureRow>().enumerate() {
        let row = row?;
        let line = i + 2;
        let row_kind = parse_kind(&row.kind).map_err(|e| Error::Format {
            line,
            message: e.to_string(),
        })?;
        match kind {
            None => kind = Some(row_kind),
            Some(k) if k != row_kind => {
                return Err(Error::Format {
                    line,
                    message: "layer mixes points and polylines".into(),
                })
            }
            _ => {}
        }
        let geometry = Geometry::parse_wkt(&row.wkt).map_err(|e| Error::Format {
            line,
            message: e.to_string(),
        })?;
        let category = (!row.category.is_empty()).then_some(row.category);
        features.push(Feature {
            id: row.id,
            category,
            geometry,
        });
    }
    FeatureLayer::new(kind.unwrap_or(FeatureKind::Points), features)
}

pub fn write_features(layer: &FeatureLayer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let kind = match layer.kind {
        FeatureKind::Points => "point",
        FeatureKind::Polylines => "polyline",
    };
    for f in &layer.features {
        w.serialize(FeatureRow {
            id: f.id.clone(),
            kind: kind.to_string(),
            category: f.category.clone().unwrap_or_default(),
            wkt: f.geometry.to_wkt(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_query_hits_and_misses() {
        let layer = FeatureLayer::new(FeatureKind::Points, vec![Feature::point("a", 5.0, 5.0)]).unwrap();
        assert_eq!(layer.query_window(0.0, 0.0, 10.0, 10.0), vec!["a".to_string()]);
        assert!(layer.query_window(6.0, 6.0, 10.0, 10.0).is_empty());
    }

    #[test]
    fn rejects_bad_polylines() {
        let short = Feature::line("s", vec![Point::new(0.0, 0.0)]);
        assert!(FeatureLayer::new(FeatureKind::Polylines, vec![short]).is_err());
        let dup = Feature::line("d", vec![Point::new(0.0, 0.0), Point::new(0.0, 0.0), Point::new(1.0, 0.0)]);
        assert!(FeatureLayer::new(FeatureKind::Polylines, vec![dup]).is_err());
        let p = Feature::point("p", 0.0, 0.0);
        assert!(FeatureLayer::new(FeatureKind::Polylines, vec![p]).is_err());
    }

    #[test]
    fn wkt_parsing() {
        assert_eq!(
            Geometry::parse_wkt("POINT(1 2)").unwrap(),
            Geometry::Point(Point::new(1.0, 2.0))
        );
        assert_eq!(
            Geometry::parse_wkt(" linestring (0 0, 3.5 -1) ").unwrap(),
            Geometry::LineString(vec![Point::new(0.0, 0.0), Point::new(3.5, -1.0)])
        );
        assert!(Geometry::parse_wkt("POLYGON((0 0, 1 1, 0 1, 0 0))").is_err());
        assert!(Geometry::parse_wkt("POINT(1)").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let layer = FeatureLayer::new(
            FeatureKind::Polylines,
            vec![
                Feature::line("r1", vec![Point::new(0.0, 0.0), Point::new(10.5, 2.0)]).with_category("major"),
                Feature::line("r2", vec![Point::new(1.0, 1.0), Point::new(2.0, 2.0), Point::new(3.0, 1.0)]),
            ],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roads.csv");
        write_features(&layer, &path).unwrap();
        let back = read_features(&path).unwrap();
        assert_eq!(back.features(), layer.features());
        assert_eq!(back.kind(), FeatureKind::Polylines);
    }

    #[test]
    fn long_feature_goes_to_oversized_list() {
        let long = Feature::line("rail", vec![Point::new(0.0, 0.0), Point::new(500_000.0, 400_000.0)]);
        let layer = FeatureLayer::with_bucket_size(FeatureKind::Polylines, vec![long], 1000.0).unwrap();
        assert_eq!(layer.query_window(100.0, 100.0, 200.0, 200.0), vec!["rail".to_string()]);
        let d = layer.nearest_distance(Point::new(250_000.0, 0.0)).unwrap();
        let expected = point_segment_distance(
            Point::new(250_000.0, 0.0),
            Point::new(0.0, 0.0),
            Point::new(500_000.0, 400_000.0),
        );
        assert!((d - expected).abs() < 1e-9);
    }
}
