//! Geodetic ↔ Gauss-Krüger conversion and POS file ingestion.
//!
//! The projection is the transverse Mercator in Krüger's formulation, carried
//! to sixth order in the third flattening `n`. At `n ≈ 1.7e-3` the truncation
//! error is far below a micrometre, so the implementation is limited by
//! floating-point rounding only.

use std::collections::HashSet;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("longitude {longitude}° is {offset:.3}° from central meridian {central_meridian}° (limit 3.5°)")]
    OutOfZone {
        longitude: f64,
        central_meridian: f64,
        offset: f64,
    },
    #[error("inverse projection did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("POS line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("POS line {line}: duplicate image id `{image_id}`")]
    DuplicateImageId { line: u64, image_id: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Maximum longitude offset from the central meridian accepted by the forward
/// mapping.
pub const MAX_ZONE_OFFSET_DEG: f64 = 3.5;

/// Default horizontal GNSS sigma, meters.
pub const DEFAULT_HORIZONTAL_SIGMA: f64 = 0.01;
/// Default vertical GNSS sigma, meters.
pub const DEFAULT_VERTICAL_SIGMA: f64 = 0.03;

const MAX_INVERSE_ITERATIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodeticCoord {
    /// Degrees in `[-90, 90]`.
    pub latitude: f64,
    /// Degrees in `(-180, 180]`.
    pub longitude: f64,
    /// Ellipsoidal height, meters.
    pub altitude: f64,
}

impl GeodeticCoord {
    pub fn new(latitude: f64, longitude: f64, altitude: f64) -> Result<Self, GeoError> {
        let coord = Self {
            latitude,
            longitude,
            altitude,
        };
        coord.validate()?;
        Ok(coord)
    }

    fn validate(&self) -> Result<(), GeoError> {
        if !(self.latitude.is_finite() && (-90.0..=90.0).contains(&self.latitude)) {
            return Err(GeoError::InvalidParameter(format!(
                "latitude {} outside [-90, 90]",
                self.latitude
            )));
        }
        if !(self.longitude.is_finite() && self.longitude > -180.0 && self.longitude <= 180.0) {
            return Err(GeoError::InvalidParameter(format!(
                "longitude {} outside (-180, 180]",
                self.longitude
            )));
        }
        if !self.altitude.is_finite() {
            return Err(GeoError::InvalidParameter("altitude is not finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedCoord {
    pub easting: f64,
    pub northing: f64,
    pub altitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub semi_major_axis: f64,
    pub inverse_flattening: f64,
}

impl Ellipsoid {
    /// CGCS2000 / GRS80 parameters.
    pub const CGCS2000: Ellipsoid = Ellipsoid {
        semi_major_axis: 6_378_137.0,
        inverse_flattening: 298.257_222_101,
    };

    pub fn new(semi_major_axis: f64, inverse_flattening: f64) -> Result<Self, GeoError> {
        if !(semi_major_axis > 0.0 && semi_major_axis.is_finite()) {
            return Err(GeoError::InvalidParameter(
                "semi-major axis must be positive".into(),
            ));
        }
        if !(inverse_flattening > 1.0 && inverse_flattening.is_finite()) {
            return Err(GeoError::InvalidParameter(
                "inverse flattening must exceed 1".into(),
            ));
        }
        Ok(Self {
            semi_major_axis,
            inverse_flattening,
        })
    }

    pub fn flattening(&self) -> f64 {
        1.0 / self.inverse_flattening
    }

    /// First eccentricity.
    pub fn eccentricity(&self) -> f64 {
        let f = self.flattening();
        (f * (2.0 - f)).sqrt()
    }

    /// Third flattening `n = f / (2 - f)`.
    pub fn third_flattening(&self) -> f64 {
        let f = self.flattening();
        f / (2.0 - f)
    }
}

impl Default for Ellipsoid {
    fn default() -> Self {
        Self::CGCS2000
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneConfig {
    pub central_meridian: f64,
    pub false_easting: f64,
    pub scale_factor: f64,
}

impl ZoneConfig {
    pub fn new(central_meridian: f64) -> Self {
        Self {
            central_meridian,
            false_easting: 500_000.0,
            scale_factor: 1.0,
        }
    }

    fn validate(&self) -> Result<(), GeoError> {
        if !(self.scale_factor > 0.0 && self.scale_factor.is_finite()) {
            return Err(GeoError::InvalidParameter(
                "scale factor must be positive".into(),
            ));
        }
        if !self.central_meridian.is_finite() || !self.false_easting.is_finite() {
            return Err(GeoError::InvalidParameter("zone parameters must be finite".into()));
        }
        Ok(())
    }
}

/// Series coefficients for one ellipsoid.
struct KruegerSeries {
    rectifying_radius: f64,
    eccentricity: f64,
    alpha: [f64; 6],
    beta: [f64; 6],
}

impl KruegerSeries {
    fn new(e: &Ellipsoid) -> Self {
        let n = e.third_flattening();
        let n2 = n * n;
        let n3 = n2 * n;
        let n4 = n3 * n;
        let n5 = n4 * n;
        let n6 = n5 * n;
        let rectifying_radius =
            e.semi_major_axis / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
        let alpha = [
            n / 2.0 - 2.0 * n2 / 3.0 + 5.0 * n3 / 16.0 + 41.0 * n4 / 180.0 - 127.0 * n5 / 288.0
                + 7891.0 * n6 / 37800.0,
            13.0 * n2 / 48.0 - 3.0 * n3 / 5.0 + 557.0 * n4 / 1440.0 + 281.0 * n5 / 630.0
                - 1983433.0 * n6 / 1935360.0,
            61.0 * n3 / 240.0 - 103.0 * n4 / 140.0 + 15061.0 * n5 / 26880.0
                + 167603.0 * n6 / 181440.0,
            49561.0 * n4 / 161280.0 - 179.0 * n5 / 168.0 + 6601661.0 * n6 / 7257600.0,
            34729.0 * n5 / 80640.0 - 3418889.0 * n6 / 1995840.0,
            212378941.0 * n6 / 319334400.0,
        ];
        let beta = [
            n / 2.0 - 2.0 * n2 / 3.0 + 37.0 * n3 / 96.0 - n4 / 360.0 - 81.0 * n5 / 512.0
                + 96199.0 * n6 / 604800.0,
            n2 / 48.0 + n3 / 15.0 - 437.0 * n4 / 1440.0 + 46.0 * n5 / 105.0
                - 1118711.0 * n6 / 3870720.0,
            17.0 * n3 / 480.0 - 37.0 * n4 / 840.0 - 209.0 * n5 / 4480.0 + 5569.0 * n6 / 90720.0,
            4397.0 * n4 / 161280.0 - 11.0 * n5 / 504.0 - 830251.0 * n6 / 7257600.0,
            4583.0 * n5 / 161280.0 - 108847.0 * n6 / 3991680.0,
            20648693.0 * n6 / 638668800.0,
        ];
        Self {
            rectifying_radius,
            eccentricity: e.eccentricity(),
            alpha,
            beta,
        }
    }

    /// tan(conformal latitude) from tan(geodetic latitude).
    fn conformal_tan(&self, tau: f64) -> f64 {
        let e = self.eccentricity;
        let sigma = (e * (e * tau / tau.hypot(1.0)).atanh()).sinh();
        tau * sigma.hypot(1.0) - sigma * tau.hypot(1.0)
    }
}

/// Forward Gauss-Krüger mapping. Altitude is passed through unchanged.
pub fn geodetic_to_gauss_kruger(
    p: &GeodeticCoord,
    ellipsoid: &Ellipsoid,
    zone: &ZoneConfig,
) -> Result<ProjectedCoord, GeoError> {
    p.validate()?;
    zone.validate()?;
    let mut dlon = p.longitude - zone.central_meridian;
    dlon = (dlon + 180.0).rem_euclid(360.0) - 180.0;
    if dlon.abs() > MAX_ZONE_OFFSET_DEG {
        return Err(GeoError::OutOfZone {
            longitude: p.longitude,
            central_meridian: zone.central_meridian,
            offset: dlon,
        });
    }
    let series = KruegerSeries::new(ellipsoid);
    let lambda = dlon.to_radians();
    let phi = p.latitude.to_radians();

    let (xi_p, eta_p) = if p.latitude.abs() == 90.0 {
        (phi.signum() * std::f64::consts::FRAC_PI_2, 0.0)
    } else {
        let tau_p = series.conformal_tan(phi.tan());
        let xi_p = tau_p.atan2(lambda.cos());
        let eta_p = (lambda.sin() / tau_p.hypot(lambda.cos())).asinh();
        (xi_p, eta_p)
    };

    let mut xi = xi_p;
    let mut eta = eta_p;
    for (j, a) in series.alpha.iter().enumerate() {
        let k = 2.0 * (j as f64 + 1.0);
        xi += a * (k * xi_p).sin() * (k * eta_p).cosh();
        eta += a * (k * xi_p).cos() * (k * eta_p).sinh();
    }
    let scale = zone.scale_factor * series.rectifying_radius;
    Ok(ProjectedCoord {
        easting: zone.false_easting + scale * eta,
        northing: scale * xi,
        altitude: p.altitude,
    })
}

/// Inverse Gauss-Krüger mapping.
pub fn gauss_kruger_to_geodetic(
    p: &ProjectedCoord,
    ellipsoid: &Ellipsoid,
    zone: &ZoneConfig,
) -> Result<GeodeticCoord, GeoError> {
    zone.validate()?;
    if !(p.easting.is_finite() && p.northing.is_finite() && p.altitude.is_finite()) {
        return Err(GeoError::InvalidParameter(
            "projected coordinate is not finite".into(),
        ));
    }
    let series = KruegerSeries::new(ellipsoid);
    let scale = zone.scale_factor * series.rectifying_radius;
    let xi = p.northing / scale;
    let eta = (p.easting - zone.false_easting) / scale;

    let mut xi_p = xi;
    let mut eta_p = eta;
    for (j, b) in series.beta.iter().enumerate() {
        let k = 2.0 * (j as f64 + 1.0);
        xi_p -= b * (k * xi).sin() * (k * eta).cosh();
        eta_p -= b * (k * xi).cos() * (k * eta).sinh();
    }

    let tau_p = xi_p.sin() / eta_p.sinh().hypot(xi_p.cos());
    let lambda = eta_p.sinh().atan2(xi_p.cos());

    let e2 = series.eccentricity * series.eccentricity;
    let mut tau = tau_p;
    let mut converged = false;
    for _ in 0..MAX_INVERSE_ITERATIONS {
        let tau_i = series.conformal_tan(tau);
        let step = (tau_p - tau_i) / tau_i.hypot(1.0) * (1.0 + (1.0 - e2) * tau * tau)
            / ((1.0 - e2) * tau.hypot(1.0));
        tau += step;
        if !tau.is_finite() {
            break;
        }
        if step.abs() <= 1e-15 * tau.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(GeoError::NoConvergence(MAX_INVERSE_ITERATIONS));
    }

    let mut longitude = zone.central_meridian + lambda.to_degrees();
    if longitude > 180.0 {
        longitude -= 360.0;
    } else if longitude <= -180.0 {
        longitude += 360.0;
    }
    Ok(GeodeticCoord {
        latitude: tau.atan().to_degrees(),
        longitude,
        altitude: p.altitude,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Position {
    Geodetic(GeodeticCoord),
    Projected(ProjectedCoord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosRecord {
    pub image_id: String,
    pub position: Position,
    pub horizontal_sigma: f64,
    pub vertical_sigma: f64,
}

impl PosRecord {
    /// Projected position, if this record is already in map coordinates.
    pub fn projected(&self) -> Option<ProjectedCoord> {
        match self.position {
            Position::Projected(p) => Some(p),
            Position::Geodetic(_) => None,
        }
    }

    /// Returns a copy with a geodetic position converted to Gauss-Krüger.
    pub fn to_projected(&self, ellipsoid: &Ellipsoid, zone: &ZoneConfig) -> Result<Self, GeoError> {
        let position = match self.position {
            Position::Geodetic(g) => {
                Position::Projected(geodetic_to_gauss_kruger(&g, ellipsoid, zone)?)
            }
            p @ Position::Projected(_) => p,
        };
        Ok(Self {
            position,
            ..self.clone()
        })
    }
}

/// Parses a POS CSV. The header selects the coordinate kind:
/// `image_id,lat_deg,lon_deg,alt_m[,hsigma_m,vsigma_m]` or
/// `image_id,easting_m,northing_m,alt_m[,hsigma_m,vsigma_m]`.
pub fn parse_pos_file(content: &[u8]) -> Result<Vec<PosRecord>, GeoError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(content);

    let header = reader
        .headers()
        .map_err(|e| GeoError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    let geodetic = match names.as_slice() {
        ["image_id", "lat_deg", "lon_deg", "alt_m", rest @ ..] => {
            check_sigma_header(rest)?;
            true
        }
        ["image_id", "easting_m", "northing_m", "alt_m", rest @ ..] => {
            check_sigma_header(rest)?;
            false
        }
        [] => return Ok(Vec::new()),
        _ => {
            return Err(GeoError::Parse {
                line: 1,
                message: format!("unrecognised header `{}`", names.join(",")),
            })
        }
    };
    let columns = names.len();

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| GeoError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() == 1 && row.get(0) == Some("") {
            continue;
        }
        if row.len() != columns {
            return Err(GeoError::Parse {
                line,
                message: format!("expected {columns} fields, found {}", row.len()),
            });
        }
        let field = |i: usize| -> Result<f64, GeoError> {
            let raw = &row[i];
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| GeoError::Parse {
                    line,
                    message: format!("field {} (`{raw}`) is not a finite number", header[i].to_owned()),
                })
        };
        let image_id = row[0].to_string();
        if image_id.is_empty() {
            return Err(GeoError::Parse {
                line,
                message: "empty image id".into(),
            });
        }
        let (a, b, alt) = (field(1)?, field(2)?, field(3)?);
        let position = if geodetic {
            let coord = GeodeticCoord::new(a, b, alt).map_err(|e| GeoError::Parse {
                line,
                message: e.to_string(),
            })?;
            Position::Geodetic(coord)
        } else {
            Position::Projected(ProjectedCoord {
                easting: a,
                northing: b,
                altitude: alt,
            })
        };
        let (horizontal_sigma, vertical_sigma) = if columns == 6 {
            (field(4)?, field(5)?)
        } else {
            (DEFAULT_HORIZONTAL_SIGMA, DEFAULT_VERTICAL_SIGMA)
        };
        if horizontal_sigma <= 0.0 || vertical_sigma <= 0.0 {
            return Err(GeoError::Parse {
                line,
                message: "sigmas must be positive".into(),
            });
        }
        if !seen.insert(image_id.clone()) {
            return Err(GeoError::DuplicateImageId { line, image_id });
        }
        records.push(PosRecord {
            image_id,
            position,
            horizontal_sigma,
            vertical_sigma,
        });
    }
    Ok(records)
}

fn check_sigma_header(rest: &[&str]) -> Result<(), GeoError> {
    match rest {
        [] | ["hsigma_m", "vsigma_m"] => Ok(()),
        _ => Err(GeoError::Parse {
            line: 1,
            message: format!("unexpected trailing columns `{}`", rest.join(",")),
        }),
    }
}

/// Serialises records with explicit sigma columns. All records must share one
/// coordinate kind.
pub fn write_pos_file(records: &[PosRecord]) -> Result<String, GeoError> {
    let geodetic = matches!(
        records.first().map(|r| r.position),
        Some(Position::Geodetic(_))
    );
    let mut out = String::new();
    if geodetic {
        out.push_str("image_id,lat_deg,lon_deg,alt_m,hsigma_m,vsigma_m\n");
    } else {
        out.push_str("image_id,easting_m,northing_m,alt_m,hsigma_m,vsigma_m\n");
    }
    for r in records {
        let (a, b, alt) = match (r.position, geodetic) {
            (Position::Geodetic(g), true) => (g.latitude, g.longitude, g.altitude),
            (Position::Projected(p), false) => (p.easting, p.northing, p.altitude),
            _ => {
                return Err(GeoError::InvalidParameter(
                    "mixed geodetic and projected records".into(),
                ))
            }
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.image_id, a, b, alt, r.horizontal_sigma, r.vertical_sigma
        );
    }
    Ok(out)
}
