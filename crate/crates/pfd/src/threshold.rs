//! Closed-form parametric threshold and its determinant cross-check.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::circuit_model::{FrequencyPair, PfdDesign};
use crate::error::{PfdError, Result};
use crate::impedance::{branch_impedance, z_eq, ImpedanceSample};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// The three branch impedances at the output and pump frequencies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchSet {
    pub z1o: ImpedanceSample,
    pub z2o: ImpedanceSample,
    pub z3o: ImpedanceSample,
    pub z1p: ImpedanceSample,
    pub z2p: ImpedanceSample,
    pub z3p: ImpedanceSample,
}

impl BranchSet {
    pub fn evaluate(design: &PfdDesign, f_out: f64) -> Result<Self> {
        let w = FrequencyPair::from_f_out(f_out);
        let c = design.varactor.c_dc;
        Ok(BranchSet {
            z1o: branch_impedance(&design.z1, w.omega_o, c)?,
            z2o: branch_impedance(&design.z2, w.omega_o, c)?,
            z3o: branch_impedance(&design.z3, w.omega_o, c)?,
            z1p: branch_impedance(&design.z1, w.omega_p, c)?,
            z2p: branch_impedance(&design.z2, w.omega_p, c)?,
            z3p: branch_impedance(&design.z3, w.omega_p, c)?,
        })
    }

    pub fn any_pole(&self) -> bool {
        [self.z1o, self.z2o, self.z3o, self.z1p, self.z2p, self.z3p]
            .iter()
            .any(|s| s.at_pole)
    }

    /// `Z2p / Zeq_p`, finite when `Z2p` is at a pole.
    pub fn pump_ratio(&self) -> Complex64 {
        let (z1, z2, z3) = (self.z1p.z, self.z2p.z, self.z3p.z);
        if self.z2p.at_pole {
            1.0 / (z1 + z3 + z1 * z3 * self.z2p.admittance())
        } else {
            z2 / z_eq(z1, z2, z3)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdResult {
    /// Complex threshold voltage; only its magnitude is physical.
    pub v_th: Complex64,
    pub v_th_mag: f64,
    pub p_th_w: f64,
    pub p_th_dbm: f64,
    pub branch_impedances: BranchSet,
}

pub fn watts_to_dbm(p_w: f64) -> f64 {
    10.0 * (p_w / 1e-3).log10()
}

pub fn dbm_to_watts(p_dbm: f64) -> f64 {
    1e-3 * 10f64.powf(p_dbm / 10.0)
}

/// Available-power convention for a source amplitude `v` behind `r_s`.
pub fn power_from_voltage(v: f64, r_s: f64) -> f64 {
    v * v / (8.0 * r_s)
}

pub fn voltage_from_power(p_w: f64, r_s: f64) -> f64 {
    (8.0 * r_s * p_w).sqrt()
}

fn prefactor(design: &PfdDesign, omega_o: f64) -> Result<f64> {
    let c_d = design.varactor.c_d.abs();
    if c_d == 0.0 {
        return Err(PfdError::NoDivision);
    }
    let c = design.varactor.c_dc;
    Ok(4.0 * c * c * omega_o * omega_o / c_d)
}

/// Threshold from the impedance products, no pole handling.
pub fn vth_direct(b: &BranchSet, design: &PfdDesign, omega_o: f64) -> Result<Complex64> {
    let k = prefactor(design, omega_o)?;
    let zo = z_eq(b.z1o.z, b.z2o.z, b.z3o.z);
    let zp = z_eq(b.z1p.z, b.z2p.z, b.z3p.z);
    Ok(k * zo * zp / ((b.z1o.z + b.z2o.z) * b.z2p.z))
}

/// Same threshold with numerator and denominator divided by `Z1o Z2p`.
pub fn vth_normalized(b: &BranchSet, design: &PfdDesign, omega_o: f64) -> Result<Complex64> {
    let k = prefactor(design, omega_o)?;
    let (z2o, z3o) = (b.z2o.z, b.z3o.z);
    let (z1p, z3p) = (b.z1p.z, b.z3p.z);
    let y1o = b.z1o.admittance();
    let y2p = b.z2p.admittance();
    let num = (z2o + z3o + z2o * z3o * y1o) * (z1p + z3p + z1p * z3p * y2p);
    Ok(k * num / (1.0 + z2o * y1o))
}

/// Closed-form threshold at `f_out` with the pump at `2 f_out`.
pub fn vth_closed_form(design: &PfdDesign, f_out: f64) -> Result<ThresholdResult> {
    let b = BranchSet::evaluate(design, f_out)?;
    let w = FrequencyPair::from_f_out(f_out);
    let v_th = if b.any_pole() {
        vth_normalized(&b, design, w.omega_o)?
    } else {
        vth_direct(&b, design, w.omega_o)?
    };
    let v_th_mag = v_th.norm();
    let p_th_w = power_from_voltage(v_th_mag, design.r_source);
    Ok(ThresholdResult { v_th, v_th_mag, p_th_w, p_th_dbm: watts_to_dbm(p_th_w), branch_impedances: b })
}

/// Threshold of an optimally resonated design: `4 C^2 R_L R_S w^2 / C_d`.
pub fn vth_min_optimal(c_dc: f64, c_d: f64, r_s_eff: f64, r_l_eff: f64, omega_o: f64) -> f64 {
    4.0 * c_dc * c_dc * r_l_eff * r_s_eff * omega_o * omega_o / c_d.abs()
}

/// Determinant of the small-signal output-frequency system together with
/// the product of its row norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Determinant {
    pub det: Complex64,
    pub row_norm_product: f64,
}

impl Determinant {
    pub fn relative(&self) -> f64 {
        self.det.norm() / self.row_norm_product
    }
}

/// Builds the 3x3 output-frequency matrix pumped by the `Z_o = 0` pump
/// solution at drive `v1` and returns its determinant.
pub fn det_a(design: &PfdDesign, f_out: f64, v1: Complex64) -> Result<Determinant> {
    let b = BranchSet::evaluate(design, f_out)?;
    let w = FrequencyPair::from_f_out(f_out).omega_o;
    let c = design.varactor.c_dc;
    let c_d = -design.varactor.c_d.abs();
    let e = -I * v1 * c_d * b.pump_ratio() / (4.0 * c * c * w);
    let scale = if b.z1o.at_pole { 1.0 / b.z1o.z } else { Complex64::new(1.0, 0.0) };
    let rows = [
        [-I * b.z1o.z * w * scale, -I * b.z2o.z * w * scale, Complex64::new(0.0, 0.0)],
        [-I * b.z1o.z * w * scale, Complex64::new(0.0, 0.0), (-I * b.z3o.z * w + e) * scale],
        [Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0), Complex64::new(-1.0, 0.0)],
    ];
    let m = &rows;
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let row_norm_product = rows
        .iter()
        .map(|r| r.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt())
        .product();
    Ok(Determinant { det, row_norm_product })
}

/// One row of a threshold sweep; `None` marks a failed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub f_out: f64,
    pub result: Option<ThresholdResult>,
}

/// Closed-form threshold of a fixed circuit over a grid of output frequencies.
pub fn threshold_sweep(design: &PfdDesign, f_out_grid: &[f64]) -> Vec<SweepRow> {
    f_out_grid
        .par_iter()
        .map(|&f| SweepRow { f_out: f, result: vth_closed_form(design, f).ok() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit_model::{CanonicalCircuit, VaractorModel};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn fig2() -> PfdDesign {
        PfdDesign::canonical(
            CanonicalCircuit {
                l1: 382.5e-9,
                c1: 6.6e-12,
                l2: 742.5e-9,
                c2: 0.85e-12,
                l3: 500e-9,
                inductor_q: None,
                transformer: None,
            },
            VaractorModel { c_dc: 1.7e-12, c_d: -0.3, c_d2: 0.02, v_bias: None },
            100e6,
            50.0,
            50.0,
        )
    }

    #[test]
    fn fig2_threshold() {
        let r = vth_closed_form(&fig2(), 100e6).unwrap();
        assert_relative_eq!(r.v_th_mag, 0.038, max_relative = 0.01);
        assert!((r.p_th_dbm + 24.4).abs() < 0.15, "{}", r.p_th_dbm);
        assert_relative_eq!(r.p_th_w, r.v_th_mag.powi(2) / 400.0, max_relative = 1e-12);
    }

    #[test]
    fn halving_c_d_doubles_threshold() {
        let d = fig2();
        let mut h = d.clone();
        h.varactor.c_d /= 2.0;
        let a = vth_closed_form(&d, 100e6).unwrap().v_th_mag;
        let b = vth_closed_form(&h, 100e6).unwrap().v_th_mag;
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-12);
    }

    #[test]
    fn zero_c_d_is_error() {
        let mut d = fig2();
        d.varactor.c_d = 0.0;
        assert_eq!(vth_closed_form(&d, 100e6).unwrap_err(), PfdError::NoDivision);
    }

    #[test]
    fn optimal_minimum_examples() {
        let w = 2.0 * PI * 100e6;
        assert_relative_eq!(vth_min_optimal(1.7e-12, 0.3, 50.0, 50.0, w), 0.0380, max_relative = 2e-3);
        let a = vth_min_optimal(1.7e-12, 0.3, 50.0, 0.96, w);
        assert_relative_eq!(a, 7.3e-4, max_relative = 0.01);
        assert_relative_eq!(
            vth_min_optimal(1.7e-12, 0.3, 50.0, 50.0, 2.0 * w),
            4.0 * vth_min_optimal(1.7e-12, 0.3, 50.0, 50.0, w),
            max_relative = 1e-12
        );
    }

    #[test]
    fn dbm_of_one_milliwatt_is_zero() {
        assert_eq!(watts_to_dbm(1e-3), 0.0);
    }

    #[test]
    fn forms_agree_without_poles() {
        let d = fig2();
        for f in [90e6, 97e6, 103.3e6, 111e6] {
            let b = BranchSet::evaluate(&d, f).unwrap();
            assert!(!b.any_pole());
            let w = 2.0 * PI * f;
            let a = vth_direct(&b, &d, w).unwrap();
            let n = vth_normalized(&b, &d, w).unwrap();
            assert!((a - n).norm() < 1e-9 * a.norm());
        }
    }

    #[test]
    fn determinant_vanishes_at_threshold() {
        let d = fig2();
        let v = vth_closed_form(&d, 100e6).unwrap().v_th;
        assert!(det_a(&d, 100e6, v).unwrap().relative() < 1e-6);
        let unpumped = det_a(&d, 100e6, Complex64::new(0.0, 0.0)).unwrap();
        let at = det_a(&d, 100e6, v).unwrap().relative();
        assert!(unpumped.relative() > 1e3 * at, "{} {}", unpumped.relative(), at);
    }

    #[test]
    fn determinant_changes_across_threshold() {
        let d = fig2();
        let v = vth_closed_form(&d, 100e6).unwrap().v_th;
        let lo = det_a(&d, 100e6, 0.5 * v).unwrap().det;
        let hi = det_a(&d, 100e6, 2.0 * v).unwrap().det;
        assert!((lo / hi).re < 0.0 || (lo / hi).arg().abs() > 0.5);
    }

    #[test]
    fn sweep_minimum_at_center() {
        let rows = threshold_sweep(&fig2(), &[95e6, 100e6, 105e6]);
        let v: Vec<f64> = rows.iter().map(|r| r.result.unwrap().v_th_mag).collect();
        assert!(v[1] < v[0] && v[1] < v[2]);
        assert!(threshold_sweep(&fig2(), &[]).is_empty());
        assert_eq!(rows[2].f_out, 105e6);
    }
}
