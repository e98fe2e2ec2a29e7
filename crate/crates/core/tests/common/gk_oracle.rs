//! Independent transverse-Mercator oracle.
//!
//! The ellipsoidal transverse Mercator is the analytic continuation of the
//! meridian arc expressed as a function of conformal latitude. The oracle
//! evaluates it by integrating the complex derivative
//! `dm/dχ = ν cos φ / cos χ` along the straight path from 0 to
//! `ξ' + iη'` with composite Gauss-Legendre quadrature, recovering the
//! complex geodetic latitude `φ(χ)` by Newton iteration on the isometric
//! latitude. No series coefficients are shared with the library.

use aerotri::geo::Ellipsoid;
use num_complex::Complex64;

pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 1..=n {
        let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

pub struct Oracle {
    a: f64,
    e: f64,
    nodes: Vec<(f64, f64)>,
}

impl Oracle {
    pub fn new(ellipsoid: &Ellipsoid) -> Self {
        let f = 1.0 / ellipsoid.inverse_flattening;
        Self {
            a: ellipsoid.semi_major_axis,
            e: (f * (2.0 - f)).sqrt(),
            nodes: gauss_legendre(24),
        }
    }

    fn isometric(&self, phi: Complex64) -> Complex64 {
        let s = phi.sin();
        s.atanh() - (s * self.e).atanh() * self.e
    }

    /// Complex geodetic latitude whose conformal latitude is `chi`.
    fn geodetic_of_conformal(&self, chi: Complex64) -> Complex64 {
        let target = chi.sin().atanh();
        let e2 = self.e * self.e;
        let mut phi = chi;
        for _ in 0..100 {
            let s = phi.sin();
            let deriv = Complex64::new(1.0 - e2, 0.0) / ((Complex64::new(1.0, 0.0) - s * s * e2) * phi.cos());
            let step = (self.isometric(phi) - target) / deriv;
            phi -= step;
            if step.norm() < 1e-17 {
                break;
            }
        }
        phi
    }

    fn arc_derivative(&self, chi: Complex64) -> Complex64 {
        let phi = self.geodetic_of_conformal(chi);
        let s = phi.sin();
        let nu = Complex64::new(self.a, 0.0) / (Complex64::new(1.0, 0.0) - s * s * (self.e * self.e)).sqrt();
        nu * phi.cos() / chi.cos()
    }

    /// (easting offset, northing) at unit scale factor.
    pub fn project(&self, lat_deg: f64, dlon_deg: f64) -> (f64, f64) {
        let phi = lat_deg.to_radians();
        let lambda = dlon_deg.to_radians();
        let psi = phi.sin().atanh() - self.e * (self.e * phi.sin()).atanh();
        let xi_p = psi.sinh().atan2(lambda.cos());
        let eta_p = (lambda.sin() / psi.cosh()).atanh();
        let end = Complex64::new(xi_p, eta_p);

        let panels = 32;
        let mut total = Complex64::new(0.0, 0.0);
        for k in 0..panels {
            let z0 = end * (k as f64 / panels as f64);
            let z1 = end * ((k + 1) as f64 / panels as f64);
            let half = (z1 - z0) * 0.5;
            let mid = (z1 + z0) * 0.5;
            for &(x, w) in &self.nodes {
                total += self.arc_derivative(mid + half * x) * half * w;
            }
        }
        (total.im, total.re)
    }
}

// Values produced by `Oracle::project` for CGCS2000, lat 29.56°, lon 106.55°,
// central meridian 105°, false easting 500 km, unit scale.
pub const CHONGQING_EASTING: f64 = 650_218.538_605_999_2;
pub const CHONGQING_NORTHING: f64 = 3_272_342.512_407_082_1;
