//! Complex impedance of branch networks with a constant-Q inductor model.

use num_complex::Complex64;

use crate::circuit_model::{Element, ElementKind, OnePortNetwork, TablePoint};
use crate::error::{PfdError, Result};

/// Impedance magnitude cap used at poles.
pub const POLE_CAP_OHM: f64 = 1e12;

/// Relative bisection tolerance for [`find_resonance`].
pub const RESONANCE_REL_TOL: f64 = 1e-10;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpedanceSample {
    pub omega: f64,
    pub z: Complex64,
    /// Set when `|z|` was clamped to [`POLE_CAP_OHM`].
    pub at_pole: bool,
}

impl ImpedanceSample {
    /// Admittance, exactly zero at a pole.
    pub fn admittance(&self) -> Complex64 {
        if self.at_pole {
            Complex64::new(0.0, 0.0)
        } else {
            1.0 / self.z
        }
    }
}

/// Phasor impedance of a single element.
pub fn element_impedance(element: &Element, omega: f64) -> Complex64 {
    match element.kind {
        ElementKind::Resistor => Complex64::new(element.value, 0.0),
        ElementKind::Capacitor => 1.0 / (I * omega * element.value),
        ElementKind::Inductor => {
            let x = omega * element.value;
            let r = element.q.map_or(0.0, |q| x / q);
            Complex64::new(r, x)
        }
    }
}

fn interpolate(points: &[TablePoint], omega: f64) -> Result<Complex64> {
    let f = omega / (2.0 * std::f64::consts::PI);
    let lo = points.first().map_or(f64::NAN, |p| p.f_hz);
    let hi = points.last().map_or(f64::NAN, |p| p.f_hz);
    if !(f >= lo && f <= hi) {
        return Err(PfdError::OutOfRange { freq_hz: f, lo_hz: lo, hi_hz: hi });
    }
    let k = points.partition_point(|p| p.f_hz <= f).clamp(1, points.len() - 1);
    let (a, b) = (points[k - 1], points[k]);
    let t = (f - a.f_hz) / (b.f_hz - a.f_hz);
    Ok(Complex64::new(a.re + t * (b.re - a.re), a.im + t * (b.im - a.im)))
}

fn raw_impedance(network: &OnePortNetwork, omega: f64, c_dc: f64) -> Result<Complex64> {
    Ok(match network {
        OnePortNetwork::Element(e) => element_impedance(e, omega),
        OnePortNetwork::VaractorStatic => 1.0 / (I * omega * c_dc),
        OnePortNetwork::Table(points) => interpolate(points, omega)?,
        OnePortNetwork::Series(items) => {
            let mut z = Complex64::new(0.0, 0.0);
            for item in items {
                z += raw_impedance(item, omega, c_dc)?;
            }
            z
        }
        OnePortNetwork::Parallel(items) => {
            let mut y = Complex64::new(0.0, 0.0);
            for item in items {
                let z = raw_impedance(item, omega, c_dc)?;
                if z.norm() == 0.0 {
                    return Ok(Complex64::new(0.0, 0.0));
                }
                if z.is_finite() {
                    y += 1.0 / z;
                }
            }
            if y.norm() == 0.0 {
                Complex64::new(f64::INFINITY, 0.0)
            } else {
                1.0 / y
            }
        }
    })
}

/// Impedance of a branch tree, clamped to [`POLE_CAP_OHM`] at poles.
pub fn branch_impedance(network: &OnePortNetwork, omega: f64, c_dc: f64) -> Result<ImpedanceSample> {
    let z = raw_impedance(network, omega, c_dc)?;
    let mag = z.norm();
    if z.is_finite() && mag <= POLE_CAP_OHM {
        return Ok(ImpedanceSample { omega, z, at_pole: false });
    }
    let z = if z.is_finite() && mag > 0.0 {
        z * (POLE_CAP_OHM / mag)
    } else {
        Complex64::new(POLE_CAP_OHM, 0.0)
    };
    Ok(ImpedanceSample { omega, z, at_pole: true })
}

/// `z2 z3 + z1 (z2 + z3)`.
pub fn z_eq(z1: Complex64, z2: Complex64, z3: Complex64) -> Complex64 {
    z2 * z3 + z1 * (z2 + z3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResonanceMode {
    /// Zero of Im{Z}.
    Series,
    /// Zero of Im{1/Z}.
    Parallel,
}

/// Bisects the zero of the reactive part inside `bracket` (rad/s).
pub fn find_resonance(
    network: &OnePortNetwork,
    mode: ResonanceMode,
    bracket: [f64; 2],
    c_dc: f64,
) -> Result<f64> {
    let g = |w: f64| -> Result<f64> {
        let s = branch_impedance(network, w, c_dc)?;
        Ok(match mode {
            ResonanceMode::Series => s.z.im,
            ResonanceMode::Parallel => s.admittance().im,
        })
    };
    let (mut lo, mut hi) = (bracket[0], bracket[1]);
    let (mut glo, ghi) = (g(lo)?, g(hi)?);
    if !(glo * ghi < 0.0) {
        return Err(PfdError::NotFound { lo, hi });
    }
    while hi - lo > RESONANCE_REL_TOL * hi.abs() {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid)?;
        if gm == 0.0 {
            return Ok(mid);
        }
        if (gm < 0.0) == (glo < 0.0) {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
