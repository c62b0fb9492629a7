//! Buffer, window and proximity measures around a single location.

use crate::error::{Error, Result};
use crate::geodata::{BBox, CategoricalGrid, FeatureKind, FeatureLayer, Lattice, Point};

fn disk_box(x: f64, y: f64, r: f64) -> BBox {
    BBox {
        min_x: x - r,
        min_y: y - r,
        max_x: x + r,
        max_y: y + r,
    }
}

fn check_radius(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("buffer radius must be > 0, got {r}")))
    }
}

/// Number of points within distance `r` (inclusive) of `(x, y)`.
pub fn count_points_in_buffer(layer: &FeatureLayer, x: f64, y: f64, r: f64) -> Result<usize> {
    Ok(count_points_in_buffers(layer, x, y, &[r])?[0])
}

/// Point counts for several radii from a single candidate sweep.
pub fn count_points_in_buffers(layer: &FeatureLayer, x: f64, y: f64, radii: &[f64]) -> Result<Vec<usize>> {
    if layer.kind() != FeatureKind::Points {
        return Err(Error::invalid("point counts need a point layer"));
    }
    for &r in radii {
        check_radius(r)?;
    }
    let r_max = radii.iter().copied().fold(0.0, f64::max);
    let mut d2: Vec<f64> = layer
        .primitives_near(&disk_box(x, y, r_max))
        .map(|p| {
            let dx = p.a.x - x;
            let dy = p.a.y - y;
            dx * dx + dy * dy
        })
        .collect();
    d2.sort_by(f64::total_cmp);
    Ok(radii
        .iter()
        .map(|&r| d2.partition_point(|&d| d <= r * r))
        .collect())
}

/// Length of the part of segment `a`-`b` inside the closed disk.
pub fn segment_length_in_disk(a: Point, b: Point, center: Point, r: f64) -> f64 {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let qa = dx * dx + dy * dy;
    if qa == 0.0 {
        return 0.0;
    }
    let fx = a.x - center.x;
    let fy = a.y - center.y;
    let qb = 2.0 * (fx * dx + fy * dy);
    let qc = fx * fx + fy * fy - r * r;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc <= 0.0 {
        return 0.0;
    }
    let sq = disc.sqrt();
    // stable root pair; q != 0 because disc > 0
    let q = -0.5 * (qb + if qb >= 0.0 { sq } else { -sq });
    let (mut t1, mut t2) = (q / qa, qc / q);
    if t1 > t2 {
        std::mem::swap(&mut t1, &mut t2);
    }
    let lo = t1.max(0.0);
    let hi = t2.min(1.0);
    if hi > lo {
        (hi - lo) * qa.sqrt()
    } else {
        0.0
    }
}

/// Total polyline length inside the closed disk of radius `r`.
pub fn line_length_in_buffer(layer: &FeatureLayer, x: f64, y: f64, r: f64) -> Result<f64> {
    Ok(line_length_in_buffers(layer, x, y, &[r])?[0])
}

pub fn line_length_in_buffers(layer: &FeatureLayer, x: f64, y: f64, radii: &[f64]) -> Result<Vec<f64>> {
    if layer.kind() != FeatureKind::Polylines {
        return Err(Error::invalid("line lengths need a polyline layer"));
    }
    for &r in radii {
        check_radius(r)?;
    }
    let r_max = radii.iter().copied().fold(0.0, f64::max);
    let center = Point::new(x, y);
    let mut totals = vec![0.0; radii.len()];
    for seg in layer.primitives_near(&disk_box(x, y, r_max)) {
        // skip segments that cannot reach the largest disk
        if seg.distance_to(center) > r_max {
            continue;
        }
        for (t, &r) in totals.iter_mut().zip(radii) {
            *t += segment_length_in_disk(seg.a, seg.b, center, r);
        }
    }
    Ok(totals)
}

/// Minimum distance from `(x, y)` to any feature of the layer.
pub fn distance_to_nearest(layer: &FeatureLayer, x: f64, y: f64) -> Result<f64> {
    if layer.is_empty() {
        return Err(Error::NoFeatures);
    }
    layer
        .nearest_distance(Point::new(x, y))
        .ok_or(Error::NoFeatures)
}

/// Inclusive range of cell indices whose centers lie in `[lo, hi]` along one axis.
pub(crate) fn center_range(origin: f64, size: f64, n: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
    let center = |i: i64| origin + (i as f64 + 0.5) * size;
    let n = n as i64;
    let mut first = (((lo - origin) / size - 0.5).ceil() as i64).clamp(0, n);
    while first > 0 && center(first - 1) >= lo {
        first -= 1;
    }
    while first < n && center(first) < lo {
        first += 1;
    }
    let mut last = (((hi - origin) / size - 0.5).floor() as i64).clamp(-1, n - 1);
    while last < n - 1 && center(last + 1) <= hi {
        last += 1;
    }
    while last >= 0 && center(last) > hi {
        last -= 1;
    }
    (first <= last && first < n && last >= 0).then(|| (first as usize, last as usize))
}

fn window_ranges(lat: &Lattice, x: f64, y: f64, window_m: f64) -> Option<((usize, usize), (usize, usize))> {
    let half = 0.5 * window_m;
    let cols = center_range(lat.origin_x, lat.cell_size, lat.n_cols, x - half, x + half)?;
    let rows = center_range(lat.origin_y, lat.cell_size, lat.n_rows, y - half, y + half)?;
    Some((cols, rows))
}

fn check_window(window_m: f64) -> Result<()> {
    if window_m > 0.0 && window_m.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("window size must be > 0, got {window_m}")))
    }
}

/// Share of valid cells of `category` among cells centered in the square
/// window of side `window_m` around `(x, y)`.
pub fn landcover_fraction(grid: &CategoricalGrid, category: i32, x: f64, y: f64, window_m: f64) -> Result<f64> {
    check_window(window_m)?;
    let lat = &grid.lattice;
    let ((c0, c1), (r0, r1)) = window_ranges(lat, x, y, window_m)
        .ok_or_else(|| Error::Nodata(format!("window at ({x}, {y}) holds no cells")))?;
    let mut hit = 0usize;
    let mut valid = 0usize;
    for r in r0..=r1 {
        let row = &grid.codes[lat.index(c0, r)..=lat.index(c1, r)];
        for &code in row {
            if !grid.is_nodata(code) {
                valid += 1;
                hit += usize::from(code == category);
            }
        }
    }
    if valid == 0 {
        return Err(Error::Nodata(format!("window at ({x}, {y}) holds only nodata")));
    }
    Ok(hit as f64 / valid as f64)
}

/// Summed-area tables over a categorical grid, one per category plus one
/// for valid cells, answering window fractions in constant time.
#[derive(Debug, Clone)]
pub struct LandcoverIndex {
    lattice: Lattice,
    categories: Vec<i32>,
    tables: Vec<Vec<u32>>,
    valid: Vec<u32>,
}

impl LandcoverIndex {
    pub fn new(grid: &CategoricalGrid) -> Self {
        let lat = grid.lattice;
        let w = lat.n_cols + 1;
        let cells = w * (lat.n_rows + 1);
        let categories: Vec<i32> = grid.categories.iter().copied().collect();
        let build = |pred: &dyn Fn(i32) -> bool| {
            let mut t = vec![0u32; cells];
            for r in 0..lat.n_rows {
                let mut run = 0u32;
                for c in 0..lat.n_cols {
                    run += u32::from(pred(grid.codes[lat.index(c, r)]));
                    t[(r + 1) * w + c + 1] = t[r * w + c + 1] + run;
                }
            }
            t
        };
        let tables = categories.iter().map(|&k| build(&|code| code == k)).collect();
        let nodata = grid.nodata;
        let valid = build(&|code| code != nodata);
        Self {
            lattice: lat,
            categories,
            tables,
            valid,
        }
    }

    fn sum(&self, t: &[u32], (c0, c1): (usize, usize), (r0, r1): (usize, usize)) -> u32 {
        let w = self.lattice.n_cols + 1;
        t[(r1 + 1) * w + c1 + 1] + t[r0 * w + c0] - t[r0 * w + c1 + 1] - t[(r1 + 1) * w + c0]
    }

    pub fn fraction(&self, category: i32, x: f64, y: f64, window_m: f64) -> Result<f64> {
        check_window(window_m)?;
        let k = self
            .categories
            .iter()
            .position(|&c| c == category)
            .ok_or_else(|| Error::invalid(format!("undeclared land-cover category {category}")))?;
        let (cols, rows) = window_ranges(&self.lattice, x, y, window_m)
            .ok_or_else(|| Error::Nodata(format!("window at ({x}, {y}) holds no cells")))?;
        let valid = self.sum(&self.valid, cols, rows);
        if valid == 0 {
            return Err(Error::Nodata(format!("window at ({x}, {y}) holds only nodata")));
        }
        Ok(self.sum(&self.tables[k], cols, rows) as f64 / valid as f64)
    }
}
