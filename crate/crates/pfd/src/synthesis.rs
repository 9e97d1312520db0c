//! Minimum-threshold component synthesis, lumped quarter-wave transformer
//! and threshold design surfaces.

use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::circuit_model::{CanonicalCircuit, PfdDesign, TransformerShorthand, VaractorModel};
use crate::error::{PfdError, Result};
use crate::threshold::vth_closed_form;

/// Tank values that put `L1||C1` and `L2||C2` at poles and series-resonate
/// `Z2+Z3` at `f_out` and `Z1+Z3` at `2 f_out`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalValues {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub c1: f64,
    pub c2: f64,
    pub feasible: bool,
    /// Closed-form `C2` line `-4 C3 / (3 (-1 + 4 L3 C3 f^2 pi^2))`, kept for comparison.
    pub printed_c2: f64,
}

impl CanonicalValues {
    /// Message when the closed-form `C2` line disagrees with the resonance value.
    pub fn c2_note(&self) -> Option<String> {
        if !self.feasible || ((self.printed_c2 - self.c2) / self.c2).abs() < 1e-6 {
            return None;
        }
        Some(format!(
            "note: closed-form C2 line gives {:.4e} F; using parallel-resonance value {:.4e} F",
            self.printed_c2, self.c2
        ))
    }

    pub fn circuit(&self, inductor_q: Option<f64>, transformer: Option<TransformerShorthand>) -> CanonicalCircuit {
        CanonicalCircuit {
            l1: self.l1,
            c1: self.c1,
            l2: self.l2,
            c2: self.c2,
            l3: self.l3,
            inductor_q,
            transformer,
        }
    }
}

/// Open interval of `L3` for which synthesis yields positive tanks.
pub fn feasibility_window(c_dc: f64, f_out: f64) -> (f64, f64) {
    let k = PI * PI * f_out * f_out * c_dc;
    (1.0 / (16.0 * k), 1.0 / (4.0 * k))
}

pub fn synthesize_canonical(l3: f64, c_dc: f64, f_out: f64) -> CanonicalValues {
    let k = PI * PI * f_out * f_out;
    let a = 16.0 * l3 * c_dc * k;
    let b = 4.0 * l3 * c_dc * k;
    let (lo, hi) = feasibility_window(c_dc, f_out);
    let feasible = l3 > lo && l3 < hi;
    let printed_c2 = -4.0 * c_dc / (3.0 * (-1.0 + b));
    if !feasible {
        return CanonicalValues {
            l1: f64::NAN,
            l2: f64::NAN,
            l3,
            c1: f64::NAN,
            c2: f64::NAN,
            feasible,
            printed_c2,
        };
    }
    let l1 = 3.0 * (-1.0 + a) / (16.0 * c_dc * k);
    let l2 = -3.0 * (-1.0 + b) / (16.0 * c_dc * k);
    let wo = 2.0 * PI * f_out;
    let wp = 2.0 * wo;
    CanonicalValues {
        l1,
        l2,
        l3,
        c1: 1.0 / (wo * wo * l1),
        c2: 1.0 / (wp * wp * l2),
        feasible,
        printed_c2,
    }
}

/// Series-C / shunt-L lumped quarter-wave stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerValues {
    pub c_match: f64,
    pub l_match: f64,
    pub z0: f64,
    /// Input impedance at `f_out` with the load attached.
    pub r_transformed: Complex64,
}

impl TransformerValues {
    pub fn shorthand(&self) -> TransformerShorthand {
        TransformerShorthand { c_match_f: self.c_match, l_match_h: self.l_match }
    }
}

pub fn quarter_wave_lsection(z0: f64, f_out: f64, r_load: f64) -> TransformerValues {
    let w = 2.0 * PI * f_out;
    let c_match = 1.0 / (w * z0);
    let l_match = z0 / w;
    let zc = 1.0 / Complex64::new(0.0, w * c_match);
    let zl = Complex64::new(0.0, w * l_match);
    let r = Complex64::new(r_load, 0.0);
    TransformerValues { c_match, l_match, z0, r_transformed: zc + zl * r / (zl + r) }
}

/// Characteristic impedance that steps `r_load` down to `r_target`.
pub fn z0_for_target(r_load: f64, r_target: f64) -> f64 {
    (r_load * r_target).sqrt()
}

/// Varactor `C_d` as a function of `C_DC`.
#[derive(Debug, Clone, PartialEq)]
pub enum VaractorLaw {
    Constant(f64),
    /// `(c_dc, c_d)` pairs, strictly increasing in `c_dc`, linearly interpolated.
    Table(Vec<(f64, f64)>),
}

impl Default for VaractorLaw {
    fn default() -> Self {
        VaractorLaw::Constant(-0.3)
    }
}

impl VaractorLaw {
    pub fn c_d(&self, c_dc: f64) -> Result<f64> {
        match self {
            VaractorLaw::Constant(v) => Ok(*v),
            VaractorLaw::Table(t) => {
                let (lo, hi) = (t.first().map_or(f64::NAN, |p| p.0), t.last().map_or(f64::NAN, |p| p.0));
                if !(c_dc >= lo && c_dc <= hi) || t.len() < 2 {
                    return Err(PfdError::OutOfRange { freq_hz: c_dc, lo_hz: lo, hi_hz: hi });
                }
                let k = t.partition_point(|p| p.0 <= c_dc).clamp(1, t.len() - 1);
                let (a, b) = (t[k - 1], t[k]);
                Ok(a.1 + (c_dc - a.0) / (b.0 - a.0) * (b.1 - a.1))
            }
        }
    }
}

/// Fixed parameters shared by every point of a design surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSetup {
    pub r_source: f64,
    pub r_load: f64,
    pub c_d2: f64,
    pub law: VaractorLaw,
}

impl Default for SurfaceSetup {
    fn default() -> Self {
        SurfaceSetup { r_source: 50.0, r_load: 50.0, c_d2: 0.02, law: VaractorLaw::default() }
    }
}

/// Synthesized canonical design with optional inductor Q and transformer.
pub fn synthesized_design(
    l3: f64,
    c_dc: f64,
    f_out: f64,
    q: Option<f64>,
    transformer: Option<&TransformerValues>,
    setup: &SurfaceSetup,
) -> Result<PfdDesign> {
    let values = synthesize_canonical(l3, c_dc, f_out);
    if !values.feasible {
        return Err(PfdError::Invalid(format!("l3 = {l3:e} H is outside the feasible window")));
    }
    let varactor = VaractorModel { c_dc, c_d: setup.law.c_d(c_dc)?, c_d2: setup.c_d2, v_bias: None };
    Ok(PfdDesign::canonical(
        values.circuit(q, transformer.map(|t| t.shorthand())),
        varactor,
        f_out,
        setup.r_source,
        setup.r_load,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub l3: f64,
    pub c_dc: f64,
    pub q: Option<f64>,
    /// `NaN` when infeasible or failed.
    pub p_th_dbm: f64,
    pub feasible: bool,
}

fn surface_point(
    l3: f64,
    c_dc: f64,
    q: Option<f64>,
    f_out: f64,
    transformer: Option<&TransformerValues>,
    setup: &SurfaceSetup,
) -> SurfacePoint {
    let feasible = synthesize_canonical(l3, c_dc, f_out).feasible;
    let p_th_dbm = synthesized_design(l3, c_dc, f_out, q, transformer, setup)
        .and_then(|d| vth_closed_form(&d, f_out))
        .map_or(f64::NAN, |r| r.p_th_dbm);
    SurfacePoint { l3, c_dc, q, p_th_dbm, feasible }
}

/// Threshold power over an `l3` x `c_dc` grid, `l3`-major.
pub fn pth_surface(
    l3_grid: &[f64],
    c_dc_grid: &[f64],
    q: Option<f64>,
    f_out: f64,
    transformer: Option<&TransformerValues>,
    setup: &SurfaceSetup,
) -> Vec<SurfacePoint> {
    let cells: Vec<(f64, f64)> = l3_grid
        .iter()
        .flat_map(|&l| c_dc_grid.iter().map(move |&c| (l, c)))
        .collect();
    cells
        .par_iter()
        .map(|&(l, c)| surface_point(l, c, q, f_out, transformer, setup))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QSensitivity {
    /// `q`-major rows.
    pub points: Vec<SurfacePoint>,
    /// Per `q`, the `c_dc` with the lowest threshold (`NaN` if none feasible).
    pub argmin_c_dc: Vec<(Option<f64>, f64)>,
}

/// Threshold power over `c_dc` and `q` at fixed `l3`; `None` in `q_grid` is lossless.
pub fn q_sensitivity(
    l3: f64,
    c_dc_grid: &[f64],
    q_grid: &[Option<f64>],
    f_out: f64,
    setup: &SurfaceSetup,
) -> QSensitivity {
    let cells: Vec<(Option<f64>, f64)> = q_grid
        .iter()
        .flat_map(|&q| c_dc_grid.iter().map(move |&c| (q, c)))
        .collect();
    let points: Vec<SurfacePoint> = cells
        .par_iter()
        .map(|&(q, c)| surface_point(l3, c, q, f_out, None, setup))
        .collect();
    let argmin_c_dc = q_grid
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let row = &points[i * c_dc_grid.len()..(i + 1) * c_dc_grid.len()];
            let best = row
                .iter()
                .filter(|p| p.p_th_dbm.is_finite())
                .min_by(|a, b| a.p_th_dbm.total_cmp(&b.p_th_dbm))
                .map_or(f64::NAN, |p| p.c_dc);
            (q, best)
        })
        .collect();
    QSensitivity { points, argmin_c_dc }
}
