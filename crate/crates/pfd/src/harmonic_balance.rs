//! Two-tone harmonic balance at the output and pump frequencies.
//!
//! Charges are written `q(t) = X e^{i w t} + conj`, so a coefficient `X`
//! carries a current amplitude `2 w |X|`. The varactor voltage is the
//! integral of `dq / C(q)`,
//!
//! `v(q) = q/C_DC + a2 q^2 + a3 q^3`, `a2 = -C_d / (2 C_DC^2)`,
//! `a3 = (C_d^2 - C_d2) / (3 C_DC^3)`,
//!
//! and its products are projected onto the two tones with full conjugate
//! mixing. Unknowns are `[X_o, Y_o, Z_o, X_p, Y_p, Z_p]` for the input,
//! output and varactor branch charges.
//!
//! Two solution sheets are supported. [`Sheet::Physical`] is the balance
//! above. [`Sheet::Continued`] replaces `conj(Z_o)` with `-conj(Z_o)`, the
//! analytic continuation of the output amplitude through `|Z_o|^2 = 0`; it
//! carries the dividing branch below threshold and the spurious large branch.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::circuit_model::{FrequencyPair, PfdDesign};
use crate::error::{PfdError, Result};
use crate::impedance::{branch_impedance, ImpedanceSample};
use crate::threshold::{dbm_to_watts, voltage_from_power, watts_to_dbm, BranchSet};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Newton convergence threshold on the scaled residual norm.
pub const NEWTON_TOL: f64 = 1e-12;
/// Accepted when iterations stagnate in round-off.
pub const NEWTON_STAGNATION_TOL: f64 = 1e-9;
pub const NEWTON_MAX_ITER: usize = 200;
pub const NEWTON_MAX_HALVINGS: usize = 30;

/// Seed magnitudes for `|Z_o|`, in units of `C_DC x 1 V`.
pub const SEED_MAGNITUDES: [f64; 6] = [1e-3, 1e-2, 0.05, 0.15, 0.3, 0.6];
pub const SEED_PHASES: usize = 8;

/// Coefficients closer than this fraction of the largest one are the same solution.
pub const DEDUP_REL: f64 = 1e-6;
/// `|Z_o|` below this fraction of `|Z_p|` is the trivial solution.
pub const TRIVIAL_REL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sheet {
    Physical,
    Continued,
}

impl Sheet {
    fn sign(self) -> f64 {
        match self {
            Sheet::Physical => 1.0,
            Sheet::Continued => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    S1,
    S2,
    S3,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Branch::S1 => "S1",
            Branch::S2 => "S2",
            Branch::S3 => "S3",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HbSolution {
    pub x_o: Complex64,
    pub y_o: Complex64,
    pub z_o: Complex64,
    pub x_p: Complex64,
    pub y_p: Complex64,
    pub z_p: Complex64,
    pub v1: f64,
    /// Leading growth rate of output-frequency perturbations, 1/s.
    pub alpha: f64,
    pub branch: Branch,
    /// Scaled residual norm at convergence.
    pub residual_norm: f64,
    pub sheet: Sheet,
}

impl HbSolution {
    pub fn unknowns(&self) -> [Complex64; 6] {
        [self.x_o, self.y_o, self.z_o, self.x_p, self.y_p, self.z_p]
    }

    pub fn is_stable(&self) -> bool {
        self.alpha < 0.0
    }
}

/// Model switches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HbOptions {
    pub sheet: Sheet,
    /// Keep the cubic varactor term.
    pub include_cubic: bool,
}

impl Default for HbOptions {
    fn default() -> Self {
        HbOptions { sheet: Sheet::Physical, include_cubic: true }
    }
}

/// Balance equations of one design at one drive level.
#[derive(Debug, Clone)]
pub struct HbSystem {
    pub omega_o: f64,
    pub omega_p: f64,
    y1o: Complex64,
    y2o: Complex64,
    z3o: Complex64,
    y1p: Complex64,
    y2p: Complex64,
    z3p: Complex64,
    a2: f64,
    a3: f64,
    v1: f64,
    r_s: f64,
    r_l: f64,
    c_dc: f64,
    s: f64,
    kappa: f64,
    /// Output-loop characteristic `s (Z3 + 1/(Y1+Y2))` at `i w_o` and its `s`-derivative.
    h: Complex64,
    h_prime: Complex64,
}

fn loop_h(design: &PfdDesign, omega: f64) -> Result<Complex64> {
    let c = design.varactor.c_dc;
    let y1 = branch_impedance(&design.z1, omega, c)?.admittance();
    let y2 = branch_impedance(&design.z2, omega, c)?.admittance();
    let z3 = branch_impedance(&design.z3, omega, c)?.z;
    let y = y1 + y2;
    if y.norm() == 0.0 {
        return Err(PfdError::Degenerate("Y1 + Y2 vanishes at the output frequency".into()));
    }
    Ok(I * omega * (z3 + 1.0 / y))
}

impl HbSystem {
    pub fn new(design: &PfdDesign, f_out: f64, v1: f64, options: HbOptions) -> Result<Self> {
        let b = BranchSet::evaluate(design, f_out)?;
        let w = FrequencyPair::from_f_out(f_out);
        let v = &design.varactor;
        let c = v.c_dc;
        let step = 1e-5 * w.omega_o;
        let hp = loop_h(design, w.omega_o + step)?;
        let hm = loop_h(design, w.omega_o - step)?;
        let hp2 = loop_h(design, w.omega_o + 2.0 * step)?;
        let hm2 = loop_h(design, w.omega_o - 2.0 * step)?;
        let dh_domega = (8.0 * (hp - hm) - (hp2 - hm2)) / (12.0 * step);
        Ok(HbSystem {
            omega_o: w.omega_o,
            omega_p: w.omega_p,
            y1o: b.z1o.admittance(),
            y2o: b.z2o.admittance(),
            z3o: b.z3o.z,
            y1p: b.z1p.admittance(),
            y2p: b.z2p.admittance(),
            z3p: b.z3p.z,
            a2: -v.c_d / (2.0 * c * c),
            a3: (v.c_d * v.c_d - v.c_d2) / (3.0 * c * c * c),
            v1,
            r_s: design.r_source,
            r_l: design.r_load,
            c_dc: c,
            s: options.sheet.sign(),
            kappa: if options.include_cubic { 1.0 } else { 0.0 },
            h: loop_h(design, w.omega_o)?,
            h_prime: -I * dh_domega,
        })
    }

    fn vnorm(&self) -> f64 {
        self.v1.abs().max(1e-3)
    }

    /// Row weights turning raw rows into dimensionless residuals.
    fn row_scales(&self) -> [f64; 6] {
        let n = self.vnorm();
        [self.r_s / n, self.r_l / n, 1.0 / (self.c_dc * n), self.r_s / n, self.r_l / n, 1.0 / (self.c_dc * n)]
    }

    fn nonlinear(&self, zo: Complex64, zp: Complex64) -> (Complex64, Complex64) {
        let (s, k) = (self.s, self.kappa);
        let (ao, ap) = (zo.norm_sqr(), zp.norm_sqr());
        let no = 2.0 * self.a2 * s * zp * zo.conj() + 3.0 * k * self.a3 * zo * (s * ao + 2.0 * ap);
        let np = self.a2 * zo * zo + 3.0 * k * self.a3 * zp * (ap + 2.0 * s * ao);
        (no, np)
    }

    /// Wirtinger derivatives of the two nonlinear terms with respect to
    /// `(Z_o, conj Z_o, Z_p, conj Z_p)`.
    fn nonlinear_derivatives(&self, zo: Complex64, zp: Complex64) -> ([Complex64; 4], [Complex64; 4]) {
        let (s, k, a2, a3) = (self.s, self.kappa, self.a2, self.a3);
        let (ao, ap) = (zo.norm_sqr(), zp.norm_sqr());
        let d_no = [
            Complex64::new(3.0 * k * a3 * (2.0 * s * ao + 2.0 * ap), 0.0),
            2.0 * a2 * s * zp + 3.0 * k * a3 * s * zo * zo,
            2.0 * a2 * s * zo.conj() + 6.0 * k * a3 * zo * zp.conj(),
            6.0 * k * a3 * zo * zp,
        ];
        let d_np = [
            2.0 * a2 * zo + 6.0 * k * a3 * s * zp * zo.conj(),
            6.0 * k * a3 * s * zp * zo,
            Complex64::new(3.0 * k * a3 * (2.0 * ap + 2.0 * s * ao), 0.0),
            3.0 * k * a3 * zp * zp,
        ];
        (d_no, d_np)
    }

    /// Unscaled rows: branch-1 and branch-2 currents in amperes, KCL in coulombs.
    pub fn raw_residual(&self, u: &[Complex64; 6]) -> [Complex64; 6] {
        let [xo, yo, zo, xp, yp, zp] = *u;
        let (no, np) = self.nonlinear(zo, zp);
        let (wo, wp) = (self.omega_o, self.omega_p);
        let vn_o = I * wo * self.z3o * zo + no;
        let vn_p = I * wp * self.z3p * zp + np;
        let vs = Complex64::new(0.5 * self.v1, 0.0);
        [
            I * wo * xo + vn_o * self.y1o,
            I * wo * yo - vn_o * self.y2o,
            xo - yo - zo,
            I * wp * xp - (vs - vn_p) * self.y1p,
            I * wp * yp - vn_p * self.y2p,
            xp - yp - zp,
        ]
    }

    /// Scaled residual as 12 reals `(re, im)` per row.
    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = self.raw_residual(&unpack(x));
        let sc = self.row_scales();
        let mut out = DVector::zeros(12);
        for k in 0..6 {
            out[2 * k] = r[k].re * sc[k];
            out[2 * k + 1] = r[k].im * sc[k];
        }
        out
    }

    /// Analytic 12x12 Jacobian of [`HbSystem::residual`].
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let u = unpack(x);
        let (zo, zp) = (u[2], u[5]);
        let (d_no, d_np) = self.nonlinear_derivatives(zo, zp);
        let (wo, wp) = (self.omega_o, self.omega_p);
        // a[r][c], b[r][c]: derivatives of row r w.r.t. unknown c and its conjugate
        let mut a = [[ZERO; 6]; 6];
        let mut b = [[ZERO; 6]; 6];
        let mut vn_o_a = [ZERO; 6];
        let mut vn_o_b = [ZERO; 6];
        vn_o_a[2] = I * wo * self.z3o + d_no[0];
        vn_o_b[2] = d_no[1];
        vn_o_a[5] = d_no[2];
        vn_o_b[5] = d_no[3];
        let mut vn_p_a = [ZERO; 6];
        let mut vn_p_b = [ZERO; 6];
        vn_p_a[2] = d_np[0];
        vn_p_b[2] = d_np[1];
        vn_p_a[5] = I * wp * self.z3p + d_np[2];
        vn_p_b[5] = d_np[3];
        for c in 0..6 {
            a[0][c] = vn_o_a[c] * self.y1o;
            b[0][c] = vn_o_b[c] * self.y1o;
            a[1][c] = -vn_o_a[c] * self.y2o;
            b[1][c] = -vn_o_b[c] * self.y2o;
            a[3][c] = vn_p_a[c] * self.y1p;
            b[3][c] = vn_p_b[c] * self.y1p;
            a[4][c] = -vn_p_a[c] * self.y2p;
            b[4][c] = -vn_p_b[c] * self.y2p;
        }
        a[0][0] += I * wo;
        a[1][1] += I * wo;
        a[2][0] = Complex64::new(1.0, 0.0);
        a[2][1] = Complex64::new(-1.0, 0.0);
        a[2][2] = Complex64::new(-1.0, 0.0);
        a[3][3] += I * wp;
        a[4][4] += I * wp;
        a[5][3] = Complex64::new(1.0, 0.0);
        a[5][4] = Complex64::new(-1.0, 0.0);
        a[5][5] = Complex64::new(-1.0, 0.0);
        let sc = self.row_scales();
        let mut j = DMatrix::zeros(12, 12);
        for r in 0..6 {
            for c in 0..6 {
                let blk = real_block(a[r][c], b[r][c]);
                for (i, row) in blk.iter().enumerate() {
                    for (k, v) in row.iter().enumerate() {
                        j[(2 * r + i, 2 * c + k)] = v * sc[r];
                    }
                }
            }
        }
        j
    }

    /// Central-difference Jacobian with a Richardson-selected step.
    pub fn jacobian_fd(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let scale = x.amax().max(self.c_dc * self.vnorm() * 1e-3);
        let fd = |h: f64| {
            let mut j = DMatrix::zeros(12, 12);
            for c in 0..12 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += h;
                xm[c] -= h;
                let col = (self.residual(&xp) - self.residual(&xm)) / (2.0 * h);
                j.set_column(c, &col);
            }
            j
        };
        let (h1, h2) = (1e-4 * scale, 5e-5 * scale);
        let j1 = fd(h1);
        let j2 = fd(h2);
        (4.0 * &j2 - j1) / 3.0
    }

    /// Relative Frobenius difference between analytic and finite-difference Jacobians.
    pub fn jacobian_error(&self, x: &DVector<f64>) -> f64 {
        let ja = self.jacobian(x);
        let jf = self.jacobian_fd(x);
        (&ja - &jf).norm() / ja.norm()
    }

    /// Small-signal pump coefficients for `Z_o = 0`.
    pub fn pump_smallsignal(&self) -> Result<(Complex64, Complex64, Complex64)> {
        let (y1, y2, z3) = (self.y1p, self.y2p, self.z3p);
        // Z_eq / (Z1 Z2) with Z_eq = Z1 Z2 + Z1 Z3 + Z2 Z3
        let den = 1.0 + z3 * (y1 + y2);
        if den.norm() == 0.0 {
            return Err(PfdError::Degenerate("Z_eq vanishes at the pump frequency".into()));
        }
        let k = -I * self.v1 / (2.0 * self.omega_p);
        let xp = k * y1 * (1.0 + z3 * y2) / den;
        let zp = k * y1 / den;
        let yp = xp - zp;
        Ok((xp, yp, zp))
    }

    /// Growth rate (1/s) of output-frequency perturbations around `u`.
    ///
    /// The pump is slaved through the pump-frequency rows; the output
    /// envelope obeys `H'(i w_o) dZ_o/dt = -(H Z_o + N_o)`. The input and
    /// output branch charges follow `Z_o` at rate `w_o`, so the returned value
    /// is the larger of `-w_o` and the leading eigenvalue of the `Z_o` block.
    pub fn alpha(&self, u: &[Complex64; 6]) -> f64 {
        let x = pack(u);
        let j = self.jacobian(&x);
        let jpp = j.view((6, 6), (6, 6)).into_owned();
        let jpz = j.view((6, 4), (6, 2)).into_owned();
        let dp = match jpp.lu().solve(&jpz) {
            Some(m) => -m,
            None => return f64::NAN,
        };
        let dzp = dp.view((4, 0), (2, 2)).into_owned();
        let (d_no, _) = self.nonlinear_derivatives(u[2], u[5]);
        let m_h = real_block(self.h, ZERO);
        let d_zo = real_block(d_no[0], d_no[1]);
        let d_zp = real_block(d_no[2], d_no[3]);
        let to_m = |b: [[f64; 2]; 2]| nalgebra::Matrix2::new(b[0][0], b[0][1], b[1][0], b[1][1]);
        let dzp2 = nalgebra::Matrix2::new(dzp[(0, 0)], dzp[(0, 1)], dzp[(1, 0)], dzp[(1, 1)]);
        let df = to_m(m_h) + to_m(d_zo) + to_m(d_zp) * dzp2;
        let jzz = -to_m(real_block(1.0 / self.h_prime, ZERO)) * df;
        let tr = jzz.trace();
        let det = jzz.determinant();
        let disc = tr * tr / 4.0 - det;
        let lead = if disc >= 0.0 { tr / 2.0 + disc.sqrt() } else { tr / 2.0 };
        lead.max(-self.omega_o)
    }
}

/// Real 2x2 matrix of `dz -> a dz + b conj(dz)`.
fn real_block(a: Complex64, b: Complex64) -> [[f64; 2]; 2] {
    let dx = a + b;
    let dy = I * (a - b);
    [[dx.re, dy.re], [dx.im, dy.im]]
}

pub fn pack(u: &[Complex64; 6]) -> DVector<f64> {
    DVector::from_iterator(12, u.iter().flat_map(|c| [c.re, c.im]))
}

pub fn unpack(x: &DVector<f64>) -> [Complex64; 6] {
    std::array::from_fn(|k| Complex64::new(x[2 * k], x[2 * k + 1]))
}

/// Small-signal pump coefficients `(X_p, Y_p, Z_p)` with the output tone absent.
pub fn pump_smallsignal(design: &PfdDesign, v1: f64, f_out: f64) -> Result<(Complex64, Complex64, Complex64)> {
    HbSystem::new(design, f_out, v1, HbOptions::default())?.pump_smallsignal()
}

/// Balance residuals on the physical sheet. Rows 1, 2, 4, 5 are in volts
/// normalized by `max(|V1|, 1 mV)`; rows 3 and 6 are the raw charge-conservation
/// violations in coulombs.
pub fn hb_residual(design: &PfdDesign, f_out: f64, v1: f64, unknowns: &[Complex64; 6]) -> Result<[Complex64; 6]> {
    let sys = HbSystem::new(design, f_out, v1, HbOptions::default())?;
    let raw = sys.raw_residual(unknowns);
    let sc = sys.row_scales();
    Ok(std::array::from_fn(|k| if k == 2 || k == 5 { raw[k] } else { raw[k] * sc[k] }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped Newton iteration on the scaled residual.
pub fn newton(sys: &HbSystem, x0: DVector<f64>) -> NewtonOutcome {
    let mut x = x0;
    let mut f = sys.residual(&x);
    let mut norm = f.norm();
    for it in 0..NEWTON_MAX_ITER {
        if !norm.is_finite() {
            break;
        }
        if norm < NEWTON_TOL {
            return NewtonOutcome { x, residual_norm: norm, iterations: it, converged: true };
        }
        let Some(dx) = sys.jacobian(&x).lu().solve(&f) else { break };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=NEWTON_MAX_HALVINGS {
            let trial = &x - lambda * &dx;
            let ft = sys.residual(&trial);
            let nt = ft.norm();
            if nt < norm {
                x = trial;
                f = ft;
                norm = nt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            let converged = norm < NEWTON_STAGNATION_TOL;
            return NewtonOutcome { x, residual_norm: norm, iterations: it, converged };
        }
    }
    let converged = norm < NEWTON_TOL;
    NewtonOutcome { x, residual_norm: norm, iterations: NEWTON_MAX_ITER, converged }
}

/// `Z_o -> -Z_o` maps solutions to solutions; pick `arg(Z_o)` in `[0, pi)`.
pub fn canonicalize(u: [Complex64; 6]) -> [Complex64; 6] {
    let a = u[2].arg();
    if u[2].norm() > 0.0 && !(0.0..PI).contains(&a) {
        [-u[0], -u[1], -u[2], u[3], u[4], u[5]]
    } else {
        u
    }
}

fn distance(a: &[Complex64; 6], b: &[Complex64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn max_coeff(a: &[Complex64; 6]) -> f64 {
    a.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

fn is_trivial(u: &[Complex64; 6], q_ref: f64) -> bool {
    u[2].norm() <= TRIVIAL_REL * u[5].norm().max(q_ref)
}

/// Single-point branch label: trivial, in-phase pump (dividing), anti-phase pump (spurious).
fn label(u: &[Complex64; 6], zp_small: Complex64, q_ref: f64) -> Branch {
    if is_trivial(u, q_ref) {
        Branch::S1
    } else if zp_small.norm() == 0.0 || (u[5] / zp_small).arg().abs() < PI / 2.0 {
        Branch::S2
    } else {
        Branch::S3
    }
}

/// Solutions of one drive level plus any diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct HbReport {
    pub v1: f64,
    pub solutions: Vec<HbSolution>,
    pub diagnostics: Vec<String>,
}

/// Deterministic seed schedule: the trivial seed plus `|Z_o|` magnitudes x 8 phases,
/// pump part from the small-signal solution.
pub fn seed_schedule(sys: &HbSystem) -> Result<Vec<[Complex64; 6]>> {
    let (xp, yp, zp) = sys.pump_smallsignal()?;
    let q_ref = sys.c_dc;
    let mut seeds = vec![[ZERO, ZERO, ZERO, xp, yp, zp]];
    for &m in SEED_MAGNITUDES.iter() {
        for k in 0..SEED_PHASES {
            let zo = Complex64::from_polar(m * q_ref, 2.0 * PI * k as f64 / SEED_PHASES as f64);
            seeds.push([ZERO, -zo, zo, xp, yp, zp]);
        }
    }
    Ok(seeds)
}

/// Solves both sheets from the seed schedule plus `extra_seeds`.
pub fn hb_solve_with(
    design: &PfdDesign,
    f_out: f64,
    v1: f64,
    include_cubic: bool,
    extra_seeds: &[(Sheet, [Complex64; 6])],
) -> Result<HbReport> {
    let mut solutions: Vec<HbSolution> = Vec::new();
    let mut diagnostics = Vec::new();
    for sheet in [Sheet::Physical, Sheet::Continued] {
        let sys = HbSystem::new(design, f_out, v1, HbOptions { sheet, include_cubic })?;
        let (_, _, zp_small) = sys.pump_smallsignal()?;
        let mut seeds: Vec<[Complex64; 6]> =
            extra_seeds.iter().filter(|(s, _)| *s == sheet).map(|(_, u)| *u).collect();
        seeds.extend(seed_schedule(&sys)?);
        if sheet == Sheet::Physical {
            let err = sys.jacobian_error(&pack(&seeds[seeds.len() - 1]));
            if err > 1e-6 {
                diagnostics.push(format!("jacobian check: relative error {err:.2e}"));
            }
        }
        for seed in seeds {
            let out = newton(&sys, pack(&seed));
            if !out.converged {
                continue;
            }
            let u = canonicalize(unpack(&out.x));
            let q_ref = sys.c_dc * sys.vnorm();
            let trivial = is_trivial(&u, q_ref);
            // the trivial point is shared by both sheets
            if trivial && sheet == Sheet::Continued {
                continue;
            }
            let scale = max_coeff(&u).max(q_ref);
            if solutions
                .iter()
                .any(|s| s.sheet == sheet && distance(&s.unknowns(), &u) <= DEDUP_REL * scale)
            {
                continue;
            }
            let u = if trivial { [ZERO, ZERO, ZERO, u[3], u[4], u[5]] } else { u };
            solutions.push(HbSolution {
                x_o: u[0],
                y_o: u[1],
                z_o: u[2],
                x_p: u[3],
                y_p: u[4],
                z_p: u[5],
                v1,
                alpha: sys.alpha(&u),
                branch: label(&u, zp_small, q_ref),
                residual_norm: out.residual_norm,
                sheet,
            });
        }
    }
    if solutions.is_empty() {
        diagnostics.push("no seed converged".into());
    }
    solutions.sort_by(|a, b| {
        a.branch.cmp(&b.branch).then(a.z_o.norm().total_cmp(&b.z_o.norm()))
    });
    Ok(HbReport { v1, solutions, diagnostics })
}

/// All steady states at drive `v1`, with branch labels and growth rates.
pub fn hb_solve(design: &PfdDesign, f_out: f64, v1: f64) -> Result<HbReport> {
    hb_solve_with(design, f_out, v1, true, &[])
}

/// One grid point of a branch continuation.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchPoint {
    pub v1: f64,
    pub s1: Option<HbSolution>,
    pub s2: Option<HbSolution>,
    pub s3: Option<HbSolution>,
}

impl BranchPoint {
    pub fn get(&self, b: Branch) -> Option<&HbSolution> {
        match b {
            Branch::S1 => self.s1.as_ref(),
            Branch::S2 => self.s2.as_ref(),
            Branch::S3 => self.s3.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub points: Vec<BranchPoint>,
    pub diagnostics: Vec<String>,
}

impl Classification {
    /// Index `k` such that `alpha` of `branch` changes sign between points `k` and `k+1`.
    pub fn sign_change(&self, branch: Branch) -> Option<usize> {
        let alphas: Vec<Option<f64>> = self.points.iter().map(|p| p.get(branch).map(|s| s.alpha)).collect();
        (0..alphas.len().saturating_sub(1)).find(|&k| match (alphas[k], alphas[k + 1]) {
            (Some(a), Some(b)) => (a < 0.0) != (b < 0.0),
            _ => false,
        })
    }
}

fn pick(cands: &[HbSolution], prev: Option<&HbSolution>) -> Option<HbSolution> {
    match prev {
        Some(p) => cands
            .iter()
            .min_by(|a, b| {
                distance(&a.unknowns(), &p.unknowns()).total_cmp(&distance(&b.unknowns(), &p.unknowns()))
            })
            .copied(),
        None => cands.iter().min_by(|a, b| a.z_o.norm().total_cmp(&b.z_o.norm())).copied(),
    }
}

/// Continuation over an ascending drive grid, linking solutions into S1/S2/S3.
pub fn classify_and_stability(design: &PfdDesign, f_out: f64, v1_grid: &[f64]) -> Result<Classification> {
    let mut points: Vec<BranchPoint> = Vec::with_capacity(v1_grid.len());
    let mut diagnostics = Vec::new();
    for (k, &v1) in v1_grid.iter().enumerate() {
        if k > 0 && v1 < v1_grid[k - 1] {
            return Err(PfdError::Invalid("v1 grid must be ascending".into()));
        }
        let extra: Vec<(Sheet, [Complex64; 6])> = points
            .last()
            .map(|p: &BranchPoint| {
                [p.s2, p.s3].iter().flatten().map(|s| (s.sheet, s.unknowns())).collect()
            })
            .unwrap_or_default();
        let report = hb_solve_with(design, f_out, v1, true, &extra)?;
        diagnostics.extend(report.diagnostics.iter().map(|d| format!("v1 = {v1:e}: {d}")));
        let of = |b: Branch| -> Vec<HbSolution> {
            report.solutions.iter().filter(|s| s.branch == b).copied().collect()
        };
        let prev = points.last();
        let bp = BranchPoint {
            v1,
            s1: pick(&of(Branch::S1), prev.and_then(|p| p.s1.as_ref())),
            s2: pick(&of(Branch::S2), prev.and_then(|p| p.s2.as_ref())),
            s3: pick(&of(Branch::S3), prev.and_then(|p| p.s3.as_ref())),
        };
        if let Some(p) = prev {
            for b in [Branch::S2, Branch::S3] {
                if p.get(b).is_some() && bp.get(b).is_none() {
                    diagnostics.push(format!("v1 = {v1:e}: branch {b} lost without a detected crossing"));
                }
            }
        }
        points.push(bp);
    }
    Ok(Classification { points, diagnostics })
}

/// One row of the output power characteristic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoutRow {
    pub p_in_dbm: f64,
    pub p_out_dbm: f64,
    /// Branch of the stable solution used, `None` if no stable solution was found.
    pub branch: Option<Branch>,
}

/// Output power delivered to the real part of `Z2` by an output-frequency coefficient `y_o`.
pub fn output_power(design: &PfdDesign, f_out: f64, y_o: Complex64) -> Result<f64> {
    let w = FrequencyPair::from_f_out(f_out).omega_o;
    let z2: ImpedanceSample = branch_impedance(&design.z2, w, design.varactor.c_dc)?;
    let i = 2.0 * w * y_o.norm();
    Ok(0.5 * i * i * z2.z.re)
}

/// Output power at `f_out` versus available input power.
pub fn pout_vs_pin(design: &PfdDesign, f_out: f64, pin_grid_dbm: &[f64], noise_floor_dbm: f64) -> Result<Vec<PoutRow>> {
    pin_grid_dbm
        .par_iter()
        .map(|&p_in_dbm| {
            let v1 = voltage_from_power(dbm_to_watts(p_in_dbm), design.r_source);
            let report = hb_solve(design, f_out, v1)?;
            let stable = report
                .solutions
                .iter()
                .filter(|s| s.sheet == Sheet::Physical && s.is_stable())
                .max_by(|a, b| a.z_o.norm().total_cmp(&b.z_o.norm()));
            let (p_out_dbm, branch) = match stable {
                Some(s) if s.branch != Branch::S1 => {
                    let p = watts_to_dbm(output_power(design, f_out, s.y_o)?);
                    (p.max(noise_floor_dbm), Some(s.branch))
                }
                Some(s) => (noise_floor_dbm, Some(s.branch)),
                None => (noise_floor_dbm, None),
            };
            Ok(PoutRow { p_in_dbm, p_out_dbm, branch })
        })
        .collect()
}
