//! Acceptance suite. One PASS/FAIL line per criterion; exits non-zero if any fails.

use num_complex::Complex64;
use pfd::circuit_model::PfdDesign;
use pfd::harmonic_balance::{classify_and_stability, pack, pout_vs_pin, Branch, HbOptions, HbSystem, Sheet};
use pfd::synthesis::{
    feasibility_window, pth_surface, q_sensitivity, quarter_wave_lsection, synthesize_canonical, synthesized_design,
    SurfaceSetup, VaractorLaw,
};
use pfd::threshold::{det_a, vth_closed_form, vth_min_optimal, watts_to_dbm};
use pfd::timedomain::{detect_period_doubling, integrate, poincare_map, steady_spectrum, td_threshold, SimConfig};
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use std::f64::consts::PI;
use std::time::{Duration, Instant};

const F_OUT: f64 = 100e6;
const L3: f64 = 500e-9;
const C_DC: f64 = 1.7e-12;

const VTH_ANCHOR_V: f64 = 0.038;
const VTH_REL_TOL: f64 = 0.01;
const PTH_ANCHOR_DBM: f64 = -24.4;
const PTH_TOL_DB: f64 = 0.15;
const FAST_LIMIT: Duration = Duration::from_millis(1);

const L1_NH: f64 = 382.5;
const L2_NH: f64 = 742.5;
const L_REL_TOL: f64 = 0.001;
const C1_PF: f64 = 6.6;
const C2_PF: f64 = 0.85;
const C_REL_TOL: f64 = 0.015;

const TRANSFORMER_Z0: f64 = 7.01;
const C_MATCH_PF: f64 = 227.0;
const C_MATCH_TOL: f64 = 0.02;
const L_MATCH_NH: f64 = 11.3;
const L_MATCH_TOL: f64 = 0.05;
const R_TRANSFORMED_MAX: f64 = 1.0;

const ORACLE_REL_TOL: f64 = 0.05;
const ORACLE_FREQS: [f64; 3] = [95e6, 100e6, 105e6];
const FIG4_WINDOW: (f64, f64) = (0.037, 0.039);
const ORACLE_LIMIT: Duration = Duration::from_secs(300);

const ONSET_REL_TOL: f64 = 0.02;
const BIFURCATION_LIMIT: Duration = Duration::from_secs(120);

const HB_POINTS: usize = 41;
const SUPERCRITICAL_JUMP: f64 = 3.0;
const HB_LIMIT: Duration = Duration::from_secs(60);

const FLOOR_DBM: f64 = -80.0;
const KNEE_TOL_DB: f64 = 0.5;
const TD_POUT_TOL_DB: f64 = 1.5;

const WINDOW_REL_TOL: f64 = 0.01;
const ARGMIN_SPREAD: f64 = 0.2;

const SCALING_REL_TOL: f64 = 1e-12;

const BOARD_BAND_DBM: (f64, f64) = (-30.0, -10.0);
const BOARD_Q: f64 = 50.0;

const JACOBIAN_TOL: f64 = 1e-6;
const ENERGY_TOL: f64 = 0.01;
const DET_TOL: f64 = 1e-6;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: &str, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("{} {id} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn fig2() -> PfdDesign {
    synthesized_design(L3, C_DC, F_OUT, None, None, &SurfaceSetup::default()).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn mean_duration(n: u32, mut f: impl FnMut()) -> Duration {
    let t = Instant::now();
    for _ in 0..n {
        f();
    }
    t.elapsed() / n
}

fn c1_threshold(r: &mut Report) {
    let d = fig2();
    let res = vth_closed_form(&d, F_OUT).unwrap();
    let dt = mean_duration(100, || {
        std::hint::black_box(vth_closed_form(&d, F_OUT).unwrap());
    });
    let pass = rel(res.v_th_mag, VTH_ANCHOR_V) <= VTH_REL_TOL
        && (res.p_th_dbm - PTH_ANCHOR_DBM).abs() <= PTH_TOL_DB
        && dt < FAST_LIMIT;
    r.line(
        "1",
        "closed-form threshold anchor",
        pass,
        format!("|V_th| = {:.5} V, P_th = {:.3} dBm, {:?} per call", res.v_th_mag, res.p_th_dbm, dt),
    );
}

fn c2_synthesis(r: &mut Report) {
    let v = synthesize_canonical(L3, C_DC, F_OUT);
    let dt = mean_duration(100, || {
        std::hint::black_box(synthesize_canonical(L3, C_DC, F_OUT));
    });
    let pass = rel(v.l1 * 1e9, L1_NH) <= L_REL_TOL
        && rel(v.l2 * 1e9, L2_NH) <= L_REL_TOL
        && rel(v.c1 * 1e12, C1_PF) <= C_REL_TOL
        && rel(v.c2 * 1e12, C2_PF) <= C_REL_TOL
        && dt < FAST_LIMIT;
    r.line(
        "2",
        "synthesis anchor",
        pass,
        format!(
            "L1 = {:.2} nH, L2 = {:.2} nH, C1 = {:.3} pF, C2 = {:.4} pF, {:?} per call",
            v.l1 * 1e9,
            v.l2 * 1e9,
            v.c1 * 1e12,
            v.c2 * 1e12,
            dt
        ),
    );
}

fn c3_transformer(r: &mut Report) {
    let t = quarter_wave_lsection(TRANSFORMER_Z0, F_OUT, 50.0);
    let pass = rel(t.c_match * 1e12, C_MATCH_PF) <= C_MATCH_TOL
        && rel(t.l_match * 1e9, L_MATCH_NH) <= L_MATCH_TOL
        && t.r_transformed.re < R_TRANSFORMED_MAX;
    r.line(
        "3",
        "transformer anchor",
        pass,
        format!(
            "C = {:.1} pF, L = {:.2} nH, Re Z_in = {:.3} ohm",
            t.c_match * 1e12,
            t.l_match * 1e9,
            t.r_transformed.re
        ),
    );
}

fn c4_oracle(r: &mut Report) {
    let d = fig2();
    let cfg = SimConfig::default();
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for f in ORACLE_FREQS {
        let cf = vth_closed_form(&d, f).unwrap().v_th_mag;
        let bracket = if f == F_OUT { [0.03, 0.05] } else { [0.5 * cf, 1.2 * cf] };
        match td_threshold(&d, f, bracket, &cfg) {
            Ok(td) => {
                let e = rel(td, cf);
                pass &= e <= ORACLE_REL_TOL;
                if f == F_OUT {
                    pass &= td > FIG4_WINDOW.0 && td < FIG4_WINDOW.1;
                }
                parts.push(format!("{:.0} MHz: TD {td:.5} V vs {cf:.5} V ({:+.1}%)", f / 1e6, 100.0 * (td / cf - 1.0)));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{:.0} MHz: closed form {cf:.5} V, TD {e}", f / 1e6));
            }
        }
    }
    let dt = t.elapsed();
    pass &= dt < ORACLE_LIMIT;
    r.line("4", "time-domain oracle agreement", pass, format!("{}; {:.1?}", parts.join("; "), dt));
}

fn c5_bifurcation(r: &mut Report) {
    let d = fig2();
    let cfg = SimConfig::default();
    let t = Instant::now();
    let below = detect_period_doubling(&integrate(&d, F_OUT, FIG4_WINDOW.0, &cfg).unwrap()).map(|x| x.0);
    let above = detect_period_doubling(&integrate(&d, F_OUT, FIG4_WINDOW.1, &cfg).unwrap()).map(|x| x.0);
    let vth = vth_closed_form(&d, F_OUT).unwrap().v_th_mag;
    let grid: Vec<f64> = (0..41).map(|i| (0.8 + 0.01 * i as f64) * vth).collect();
    let pm = poincare_map(&d, F_OUT, &grid, &cfg).unwrap();
    let onset = pm.iter().position(|p| p.divided);
    let single_then_double = onset.is_some_and(|k| pm[k..].iter().all(|p| p.divided));
    let last = pm.last().unwrap();
    let split_at_end = (last.r_even - last.r_odd).abs() > 1e-3 * last.r_even;
    let onset_v = onset.map(|k| pm[k].v1);
    let onset_ok = onset_v.is_some_and(|v| rel(v, vth) <= ONSET_REL_TOL);
    let dt = t.elapsed();
    let pass = below == Ok(false) && above == Ok(true) && single_then_double && split_at_end && onset_ok && dt < BIFURCATION_LIMIT;
    r.line(
        "5",
        "period-doubling bifurcation",
        pass,
        format!(
            "divided at 0.037 V: {below:?}, at 0.039 V: {above:?}; Poincare onset {} (V_th {vth:.5} V); final r_even/r_odd = {:.4e}/{:.4e}; {dt:.1?}",
            onset_v.map_or("none".into(), |v| format!("{v:.5} V ({:+.2}%)", 100.0 * (v / vth - 1.0))),
            last.r_even,
            last.r_odd
        ),
    );
}

fn c6_branches(r: &mut Report) {
    let d = fig2();
    let vth = vth_closed_form(&d, F_OUT).unwrap().v_th_mag;
    let grid: Vec<f64> = (0..HB_POINTS).map(|i| (0.5 + i as f64 / (HB_POINTS - 1) as f64) * vth).collect();
    let t = Instant::now();
    let c = classify_and_stability(&d, F_OUT, &grid).unwrap();
    let dt = t.elapsed();
    let k1 = c.sign_change(Branch::S1);
    let k2 = c.sign_change(Branch::S2);
    let contains = |k: Option<usize>| k.is_some_and(|k| grid[k] <= vth && vth <= grid[k + 1]);
    let s3_all = c.points.iter().all(|p| p.s3.is_some_and(|s| s.alpha > 0.0));
    let phys: Vec<f64> = c
        .points
        .iter()
        .filter_map(|p| p.s2.filter(|s| s.sheet == Sheet::Physical).map(|s| s.z_o.norm()))
        .collect();
    let supercritical = phys.len() >= 2 && phys[0] <= SUPERCRITICAL_JUMP * (phys[1] - phys[0]);
    let pass = k1.is_some() && k1 == k2 && contains(k1) && s3_all && supercritical && dt < HB_LIMIT;
    r.line(
        "6",
        "branch stability",
        pass,
        format!(
            "S1 flips in interval {k1:?}, S2 in {k2:?} (V_th at {:.3} of grid span); S3 alpha > 0 at all points: {s3_all}; first S2 |z_o| {:.3e} C vs next step {:.3e} C; {dt:.1?}",
            (vth - grid[0]) / (grid[HB_POINTS - 1] - grid[0]),
            phys.first().copied().unwrap_or(f64::NAN),
            if phys.len() >= 2 { phys[1] - phys[0] } else { f64::NAN },
        ),
    );
}

fn c7_pout(r: &mut Report) {
    let d = fig2();
    let pth = vth_closed_form(&d, F_OUT).unwrap().p_th_dbm;
    let grid: Vec<f64> = (0..=200).map(|i| pth - 10.0 + 0.1 * i as f64).collect();
    let rows = pout_vs_pin(&d, F_OUT, &grid, FLOOR_DBM).unwrap();
    let knee = rows.iter().find(|r| r.p_out_dbm > FLOOR_DBM).map(|r| r.p_in_dbm);
    let floor_ok = rows.iter().filter(|r| r.p_in_dbm < pth - 0.05).all(|r| r.p_out_dbm == FLOOR_DBM);
    let knee_ok = knee.is_some_and(|k| (k - PTH_ANCHOR_DBM).abs() <= KNEE_TOL_DB);
    let upper: Vec<f64> = rows.iter().filter(|r| r.p_in_dbm >= pth && r.p_in_dbm <= pth + 10.0).map(|r| r.p_out_dbm).collect();
    let monotone = upper.windows(2).all(|w| w[1] >= w[0]);
    let cfg = SimConfig { periods_settle: 8000, ..SimConfig::default() };
    let mut td_parts = Vec::new();
    let mut td_ok = true;
    for delta in [2.0, 4.0, 6.0] {
        let p_in = pth + delta;
        let v1 = pfd::threshold::voltage_from_power(pfd::threshold::dbm_to_watts(p_in), d.r_source);
        let hb = pout_vs_pin(&d, F_OUT, &[p_in], FLOOR_DBM).unwrap()[0].p_out_dbm;
        let td = integrate(&d, F_OUT, v1, &cfg)
            .and_then(|tr| steady_spectrum(&tr))
            .map(|lines| watts_to_dbm(2.0 * lines[0].vout.norm_sqr() / d.r_load));
        match td {
            Ok(td) => {
                td_ok &= (td - hb).abs() <= TD_POUT_TOL_DB;
                td_parts.push(format!("{p_in:.2} dBm in: HB {hb:.2} / TD {td:.2} dBm"));
            }
            Err(e) => {
                td_ok = false;
                td_parts.push(format!("{p_in:.2} dBm in: {e}"));
            }
        }
    }
    let pass = floor_ok && knee_ok && monotone && td_ok;
    r.line(
        "7",
        "output power characteristic",
        pass,
        format!(
            "floor below threshold: {floor_ok}; knee at {} dBm; monotone over [P_th, P_th+10]: {monotone}; {}",
            knee.map_or("none".into(), |k| format!("{k:.2}")),
            td_parts.join("; ")
        ),
    );
}

fn c8_surfaces(r: &mut Report) {
    let setup = SurfaceSetup::default();
    let (lo, hi) = feasibility_window(C_DC, F_OUT);
    let l3s: Vec<f64> = (1..40).map(|i| lo + (hi - lo) * i as f64 / 40.0).collect();
    let pts = pth_surface(&l3s, &[C_DC], None, F_OUT, None, &setup);
    let strictly = pts.windows(2).all(|w| w[1].p_th_dbm < w[0].p_th_dbm);
    let spread = pts.iter().map(|p| p.p_th_dbm).fold(f64::NEG_INFINITY, f64::max)
        - pts.iter().map(|p| p.p_th_dbm).fold(f64::INFINITY, f64::min);
    r.line(
        "8a",
        "lossless P_th strictly decreasing in L3",
        strictly,
        format!("{} feasible L3 points, P_th spread {spread:.3e} dB (flat surface)", pts.len()),
    );

    let fine: Vec<f64> = (0..=1300).map(|i| 300e-9 + 1e-9 * i as f64).collect();
    let pts = pth_surface(&fine, &[C_DC], None, F_OUT, None, &setup);
    let first = pts.iter().find(|p| p.feasible).map(|p| p.l3).unwrap_or(f64::NAN);
    let last = pts.iter().rev().find(|p| p.feasible).map(|p| p.l3).unwrap_or(f64::NAN);
    let pass = rel(first, 372.5e-9) <= WINDOW_REL_TOL && rel(last, 1490e-9) <= WINDOW_REL_TOL;
    r.line(
        "8b",
        "infeasible region matches window bounds",
        pass,
        format!("feasible L3 from {:.1} nH to {:.1} nH", first * 1e9, last * 1e9),
    );

    let (clo, chi) = feasibility_window_cdc(L3, F_OUT);
    let cdcs: Vec<f64> = (1..200).map(|i| clo + (chi - clo) * i as f64 / 200.0).collect();
    let qs: Vec<Option<f64>> = [10.0, 20.0, 30.0, 40.0, 50.0].iter().map(|&q| Some(q)).collect();
    let s = q_sensitivity(L3, &cdcs, &qs, F_OUT, &SurfaceSetup { law: VaractorLaw::Constant(-0.3), ..setup });
    let arg: Vec<f64> = s.argmin_c_dc.iter().map(|a| a.1).collect();
    let mx = arg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mn = arg.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = (mx - mn) / (0.5 * (mx + mn));
    r.line(
        "8c",
        "argmin C_DC nearly independent of Q",
        spread < ARGMIN_SPREAD,
        format!(
            "argmin C_DC = [{}] pF, spread {:.1}%",
            arg.iter().map(|c| format!("{:.3}", c * 1e12)).collect::<Vec<_>>().join(", "),
            100.0 * spread
        ),
    );
}

/// `C_DC` window for which `l3` is feasible.
fn feasibility_window_cdc(l3: f64, f_out: f64) -> (f64, f64) {
    let k = PI * PI * f_out * f_out * l3;
    (1.0 / (16.0 * k), 1.0 / (4.0 * k))
}

fn c9_scaling(r: &mut Report) {
    let w = 2.0 * PI * F_OUT;
    let a = vth_min_optimal(C_DC, 0.3, 50.0, 50.0, w);
    let b = vth_min_optimal(C_DC, 0.3, 50.0, 50.0, 2.0 * w);
    let e = rel(b / a, 4.0);
    r.line("9", "optimal threshold scaling", e <= SCALING_REL_TOL, format!("ratio {:.15}, rel. error {e:.1e}", b / a));
}

fn c10_board(r: &mut Report) {
    let t = quarter_wave_lsection(TRANSFORMER_Z0, F_OUT, 50.0);
    let d = synthesized_design(L3, C_DC, F_OUT, Some(BOARD_Q), Some(&t), &SurfaceSetup::default()).unwrap();
    let p = vth_closed_form(&d, F_OUT).unwrap().p_th_dbm;
    let pass = p > BOARD_BAND_DBM.0 && p < BOARD_BAND_DBM.1;
    r.line(
        "10",
        "board-level sanity band (qualitative)",
        pass,
        format!("Q = 50 with transformer: P_th = {p:.2} dBm; board measurement not reproducible without vendor data"),
    );
}

fn design_strategy() -> impl Strategy<Value = PfdDesign> {
    (0.05f64..0.95, 0.8e-12f64..4e-12, 50e6f64..500e6, prop::option::of(20.0f64..200.0), -0.6f64..-0.1)
        .prop_map(|(frac, c_dc, f, q, c_d)| {
            let (lo, hi) = feasibility_window(c_dc, f);
            let setup = SurfaceSetup { law: VaractorLaw::Constant(c_d), ..SurfaceSetup::default() };
            synthesized_design(lo + frac * (hi - lo), c_dc, f, q, None, &setup).unwrap()
        })
}

fn c11_hygiene(r: &mut Report) {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let strat = (design_strategy(), 0.0f64..0.2, prop::collection::vec(-1.0f64..1.0, 12), any::<bool>());
    let mut jac = 0.0f64;
    for _ in 0..50 {
        let (d, v1, u, cont) = strat.new_tree(&mut runner).unwrap().current();
        let sheet = if cont { Sheet::Continued } else { Sheet::Physical };
        let sys = HbSystem::new(&d, d.f_out, v1, HbOptions { sheet, include_cubic: true }).unwrap();
        let z: [Complex64; 6] = std::array::from_fn(|k| Complex64::new(u[2 * k], u[2 * k + 1]) * d.varactor.c_dc * 0.3);
        jac = jac.max(sys.jacobian_error(&pack(&z)));
    }
    let d = fig2();
    let vth = vth_closed_form(&d, F_OUT).unwrap().v_th_mag;
    let mut energy = 0.0f64;
    for (v1, settle) in [(0.02, 300), (1.5 * vth, 4000)] {
        let tr = integrate(&d, F_OUT, v1, &SimConfig { periods_settle: settle, ..SimConfig::default() }).unwrap();
        energy = energy.max(tr.energy.relative_imbalance());
    }
    let strat = design_strategy();
    let mut det = 0.0f64;
    for _ in 0..50 {
        let d = strat.new_tree(&mut runner).unwrap().current();
        let v = vth_closed_form(&d, d.f_out).unwrap().v_th;
        det = det.max(det_a(&d, d.f_out, v).unwrap().relative());
    }
    let pass = jac < JACOBIAN_TOL && energy < ENERGY_TOL && det < DET_TOL;
    r.line(
        "11",
        "numerical hygiene",
        pass,
        format!("max Jacobian error {jac:.1e}; max energy imbalance {energy:.1e}; max relative det_A at V_th {det:.1e}"),
    );
}

fn main() {
    let mut r = Report { failed: 0 };
    c1_threshold(&mut r);
    c2_synthesis(&mut r);
    c3_transformer(&mut r);
    c4_oracle(&mut r);
    c5_bifurcation(&mut r);
    c6_branches(&mut r);
    c7_pout(&mut r);
    c8_surfaces(&mut r);
    c9_scaling(&mut r);
    c10_board(&mut r);
    c11_hygiene(&mut r);
    println!("{} criteria failed", r.failed);
    if r.failed > 0 {
        std::process::exit(1);
    }
}
