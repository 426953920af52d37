//! Great-circle distance and rectangular grid assignment over a city bounding box.
//!
//! Grids use a locally flat equirectangular projection: one mile-per-degree
//! factor for latitude and one for longitude, both taken at the bounding box's
//! centre latitude. At city scale the distortion is far below a cell width.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used everywhere distances are computed.
pub const EARTH_RADIUS_MILES: f64 = 3958.8;

/// Miles per degree of latitude under [`EARTH_RADIUS_MILES`].
pub fn miles_per_degree_lat() -> f64 {
    EARTH_RADIUS_MILES * std::f64::consts::PI / 180.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon)
        {
            return Err(Error::InvalidPoint { lat, lon });
        }
        Ok(GeoPoint { lat, lon })
    }
}

/// Haversine distance in miles.
pub fn haversine_miles(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_MILES * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BBox {
    /// Square box of `side` miles centred on `center`, measured with the same
    /// projection the grid uses.
    pub fn square_miles(center: GeoPoint, side: f64) -> BBox {
        let dlat = side / miles_per_degree_lat();
        let dlon = side / (miles_per_degree_lat() * center.lat.to_radians().cos());
        BBox {
            min_lat: center.lat - dlat / 2.0,
            min_lon: center.lon - dlon / 2.0,
            max_lat: center.lat + dlat / 2.0,
            max_lon: center.lon + dlon / 2.0,
        }
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.min_lat..=self.max_lat).contains(&p.lat) && (self.min_lon..=self.max_lon).contains(&p.lon)
    }

    fn validate(&self) -> Result<()> {
        let fields = [self.min_lat, self.min_lon, self.max_lat, self.max_lon];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateBbox("non-finite coordinate".into()));
        }
        if self.max_lat <= self.min_lat || self.max_lon <= self.min_lon {
            return Err(Error::DegenerateBbox(format!(
                "need max > min on both axes, got lat [{}, {}] lon [{}, {}]",
                self.min_lat, self.max_lat, self.min_lon, self.max_lon
            )));
        }
        if self.min_lat < -90.0 || self.max_lat > 90.0 || self.min_lon < -180.0 || self.max_lon > 180.0 {
            return Err(Error::DegenerateBbox("coordinates out of range".into()));
        }
        Ok(())
    }
}

/// Index of a grid cell, dense in `[0, n_rows * n_cols)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridCell(pub u32);

impl fmt::Display for GridCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bbox: BBox,
    pub cell_size: f64,
    pub n_rows: u32,
    pub n_cols: u32,
    miles_per_deg_lat: f64,
    miles_per_deg_lon: f64,
}

// Ceil that ignores floating noise just above an integer.
fn ceil_tolerant(x: f64) -> u32 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r.max(1.0) as u32
    } else {
        x.ceil().max(1.0) as u32
    }
}

// Floor that snaps values within rounding noise of a boundary onto it.
fn floor_tolerant(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r.max(0.0)
    } else {
        x.floor().max(0.0)
    }
}

/// Tile `bbox` with square cells of `cell_size` miles.
pub fn build_grid_spec(bbox: BBox, cell_size: f64) -> Result<GridSpec> {
    bbox.validate()?;
    if !(cell_size.is_finite() && cell_size > 0.0) {
        return Err(Error::InvalidCellSize(cell_size));
    }
    let center_lat = (bbox.min_lat + bbox.max_lat) / 2.0;
    let mpd_lat = miles_per_degree_lat();
    let mpd_lon = mpd_lat * center_lat.to_radians().cos();
    let height = (bbox.max_lat - bbox.min_lat) * mpd_lat;
    let width = (bbox.max_lon - bbox.min_lon) * mpd_lon;
    let n_rows = ceil_tolerant(height / cell_size);
    let n_cols = ceil_tolerant(width / cell_size);
    if u64::from(n_rows) * u64::from(n_cols) > u64::from(u32::MAX) {
        return Err(Error::InvalidCellSize(cell_size));
    }
    Ok(GridSpec {
        bbox,
        cell_size,
        n_rows,
        n_cols,
        miles_per_deg_lat: mpd_lat,
        miles_per_deg_lon: mpd_lon,
    })
}

impl GridSpec {
    pub fn n_cells(&self) -> u32 {
        self.n_rows * self.n_cols
    }

    pub fn row_col(&self, cell: GridCell) -> (u32, u32) {
        (cell.0 / self.n_cols, cell.0 % self.n_cols)
    }

    /// Assign a point to its cell. Cells are half-open, except that the
    /// maximum edges of the box belong to the last row/column.
    pub fn assign(&self, p: GeoPoint) -> Result<GridCell> {
        if !self.bbox.contains(p) {
            return Err(Error::OutsideGrid { lat: p.lat, lon: p.lon });
        }
        let dy = (p.lat - self.bbox.min_lat) * self.miles_per_deg_lat;
        let dx = (p.lon - self.bbox.min_lon) * self.miles_per_deg_lon;
        let row = (floor_tolerant(dy / self.cell_size) as u32).min(self.n_rows - 1);
        let col = (floor_tolerant(dx / self.cell_size) as u32).min(self.n_cols - 1);
        Ok(GridCell(row * self.n_cols + col))
    }

    /// Geographic footprint of a cell as `(min corner, max corner)`.
    ///
    /// The last row/column may extend past the box when the extent is not a
    /// whole number of cells.
    pub fn footprint(&self, cell: GridCell) -> (GeoPoint, GeoPoint) {
        let (row, col) = self.row_col(cell);
        let dlat = self.cell_size / self.miles_per_deg_lat;
        let dlon = self.cell_size / self.miles_per_deg_lon;
        let min = GeoPoint {
            lat: self.bbox.min_lat + f64::from(row) * dlat,
            lon: self.bbox.min_lon + f64::from(col) * dlon,
        };
        let max = GeoPoint {
            lat: min.lat + dlat,
            lon: min.lon + dlon,
        };
        (min, max)
    }

    pub fn center(&self, cell: GridCell) -> GeoPoint {
        let (min, max) = self.footprint(cell);
        GeoPoint {
            lat: (min.lat + max.lat) / 2.0,
            lon: (min.lon + max.lon) / 2.0,
        }
    }

    /// Planar distance between cell centres in miles.
    pub fn center_distance(&self, a: GridCell, b: GridCell) -> f64 {
        let (ra, ca) = self.row_col(a);
        let (rb, cb) = self.row_col(b);
        let dr = f64::from(ra) - f64::from(rb);
        let dc = f64::from(ca) - f64::from(cb);
        (dr * dr + dc * dc).sqrt() * self.cell_size
    }

    /// Offset a point by `(north, east)` miles in the grid's projection.
    pub fn offset(&self, p: GeoPoint, north: f64, east: f64) -> GeoPoint {
        GeoPoint {
            lat: p.lat + north / self.miles_per_deg_lat,
            lon: p.lon + east / self.miles_per_deg_lon,
        }
    }

    /// Short digest identifying the grid, used in artifact headers.
    pub fn digest(&self) -> String {
        let text = format!(
            "{:.9},{:.9},{:.9},{:.9},{:.9},{},{}",
            self.bbox.min_lat,
            self.bbox.min_lon,
            self.bbox.max_lat,
            self.bbox.max_lon,
            self.cell_size,
            self.n_rows,
            self.n_cols
        );
        format!("{:016x}", crate::par::fnv1a(text.as_bytes()))
    }
}

/// Free-function form of [`GridSpec::assign`].
pub fn assign_grid(p: GeoPoint, spec: &GridSpec) -> Result<GridCell> {
    spec.assign(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn nyc() -> GeoPoint {
        GeoPoint::new(40.7128, -74.0060).unwrap()
    }

    // Independent closed form: spherical law of cosines.
    fn cosine_law_miles(a: GeoPoint, b: GeoPoint) -> f64 {
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let dl = (b.lon - a.lon).to_radians();
        let c = (p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos()).clamp(-1.0, 1.0);
        EARTH_RADIUS_MILES * c.acos()
    }

    #[test]
    fn haversine_identity_and_known_distances() {
        let p = nyc();
        assert_eq!(haversine_miles(p, p), 0.0);

        let a = GeoPoint::new(0.0, 0.0).unwrap();
        let b = GeoPoint::new(0.0, 1.0).unwrap();
        // One degree of arc on a 3958.8 mi sphere.
        assert_abs_diff_eq!(haversine_miles(a, b), 69.0934, epsilon = 1e-3);
        assert_abs_diff_eq!(haversine_miles(a, b), cosine_law_miles(a, b), epsilon = 1e-6);

        let dc = GeoPoint::new(38.9072, -77.0369).unwrap();
        let d = haversine_miles(nyc(), dc);
        assert!((203.0..=205.0).contains(&d), "{d}");
        assert_abs_diff_eq!(d, cosine_law_miles(nyc(), dc), epsilon = 1e-6);
    }

    #[test]
    fn city_square_grid_counts() {
        let bbox = BBox::square_miles(nyc(), 29.0);
        assert_eq!(build_grid_spec(bbox, 1.0).unwrap().n_cells(), 841);
        assert_eq!(build_grid_spec(bbox, 0.5).unwrap().n_cells(), 3364);
        assert_eq!(build_grid_spec(bbox, 0.1).unwrap().n_cells(), 84_100);
        let one = BBox::square_miles(nyc(), 1.0);
        assert_eq!(build_grid_spec(one, 1.0).unwrap().n_cells(), 1);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let mut bbox = BBox::square_miles(nyc(), 5.0);
        assert!(matches!(build_grid_spec(bbox, 0.0), Err(Error::InvalidCellSize(_))));
        assert!(matches!(build_grid_spec(bbox, -1.0), Err(Error::InvalidCellSize(_))));
        bbox.max_lat = bbox.min_lat;
        assert!(matches!(build_grid_spec(bbox, 1.0), Err(Error::DegenerateBbox(_))));
    }

    #[test]
    fn corner_and_interior_assignment() {
        let spec = build_grid_spec(BBox::square_miles(nyc(), 10.0), 1.0).unwrap();
        assert_eq!(spec.n_cols, 10);
        let min = GeoPoint::new(spec.bbox.min_lat, spec.bbox.min_lon).unwrap();
        let max = GeoPoint::new(spec.bbox.max_lat, spec.bbox.max_lon).unwrap();
        assert_eq!(spec.assign(min).unwrap(), GridCell(0));
        assert_eq!(spec.assign(max).unwrap(), GridCell(spec.n_cells() - 1));
        // centre of (row 2, col 3): 2.5 mi north, 3.5 mi east of the min corner
        let p = spec.offset(min, 2.5, 3.5);
        assert_eq!(spec.assign(p).unwrap(), GridCell(23));
        assert_eq!(spec.assign(spec.center(GridCell(23))).unwrap(), GridCell(23));
        let outside = spec.offset(max, 0.1, 0.0);
        assert!(matches!(spec.assign(outside), Err(Error::OutsideGrid { .. })));
    }

    #[test]
    fn boundary_points_go_to_larger_index() {
        let spec = build_grid_spec(BBox::square_miles(nyc(), 4.0), 1.0).unwrap();
        let min = GeoPoint::new(spec.bbox.min_lat, spec.bbox.min_lon).unwrap();
        let (_, max_of_first) = spec.footprint(GridCell(0));
        let on_edge = GeoPoint { lat: min.lat + 1e-7, lon: max_of_first.lon };
        assert_eq!(spec.assign(on_edge).unwrap(), GridCell(1));
    }

    fn in_box() -> impl Strategy<Value = (f64, f64)> {
        (0.0f64..=1.0, 0.0f64..=1.0)
    }

    proptest! {
        #[test]
        fn assignment_in_range_and_deterministic((fy, fx) in in_box()) {
            let spec = build_grid_spec(BBox::square_miles(nyc(), 7.3), 0.5).unwrap();
            let b = spec.bbox;
            let p = GeoPoint { lat: b.min_lat + fy * (b.max_lat - b.min_lat), lon: b.min_lon + fx * (b.max_lon - b.min_lon) };
            let c = spec.assign(p).unwrap();
            prop_assert!(c.0 < spec.n_cells());
            prop_assert_eq!(c, spec.assign(p).unwrap());
        }

        #[test]
        fn half_mile_cell_nests_in_mile_cell((fy, fx) in in_box()) {
            let bbox = BBox::square_miles(nyc(), 12.0);
            let coarse = build_grid_spec(bbox, 1.0).unwrap();
            let fine = build_grid_spec(bbox, 0.5).unwrap();
            let p = GeoPoint { lat: bbox.min_lat + fy * (bbox.max_lat - bbox.min_lat), lon: bbox.min_lon + fx * (bbox.max_lon - bbox.min_lon) };
            let (cmin, cmax) = coarse.footprint(coarse.assign(p).unwrap());
            let (fmin, fmax) = fine.footprint(fine.assign(p).unwrap());
            let tol = 1e-9;
            prop_assert!(fmin.lat >= cmin.lat - tol && fmin.lon >= cmin.lon - tol);
            prop_assert!(fmax.lat <= cmax.lat + tol && fmax.lon <= cmax.lon + tol);
        }

        #[test]
        fn haversine_metric_properties(
            a in (-60.0f64..60.0, -170.0f64..170.0),
            b in (-60.0f64..60.0, -170.0f64..170.0),
            c in (-60.0f64..60.0, -170.0f64..170.0),
        ) {
            let (a, b, c) = (GeoPoint { lat: a.0, lon: a.1 }, GeoPoint { lat: b.0, lon: b.1 }, GeoPoint { lat: c.0, lon: c.1 });
            let ab = haversine_miles(a, b);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - haversine_miles(b, a)).abs() <= 1e-9 * ab.max(1.0));
            let lhs = haversine_miles(a, c);
            let rhs = ab + haversine_miles(b, c);
            prop_assert!(lhs <= rhs * (1.0 + 1e-9) + 1e-9);
        }
    }
}
