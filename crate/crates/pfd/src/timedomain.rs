//! Transient integration of the canonical divider, period-doubling
//! detection, threshold bisection and stroboscopic maps.
//!
//! The canonical circuit is integrated in nodal form. State is the two tank
//! inductor currents and capacitor voltages, the varactor-branch current and
//! charge, the source-branch charge, and running energy integrals. The
//! varactor obeys `v(q) = q/C_DC + a2 q^2 + a3 q^3`, the same law as the
//! harmonic balance.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

use crate::circuit_model::PfdDesign;
use crate::error::{PfdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Lossless,
    /// `R = w_o L / Q` in series with every inductor, `Q` taken from the design.
    FixedR,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Pump periods integrated before the measurement window.
    pub periods_settle: usize,
    /// Pump periods in the measurement window, a power of two.
    pub periods_measure: usize,
    pub rel_tol: f64,
    /// Charge-equivalent absolute tolerance, C.
    pub abs_tol: f64,
    /// Length of the linear drive ramp, pump periods.
    pub ramp_periods: usize,
    pub loss_mode: LossMode,
    pub samples_per_period: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            periods_settle: 300,
            periods_measure: 64,
            rel_tol: 1e-9,
            abs_tol: 1e-15,
            ramp_periods: 50,
            loss_mode: LossMode::Lossless,
            samples_per_period: 64,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(PfdError::Invalid("tolerances must be positive".into()));
        }
        if self.periods_measure < 2 || !self.periods_measure.is_power_of_two() {
            return Err(PfdError::Invalid("periods_measure must be a power of two >= 2".into()));
        }
        if self.samples_per_period < 64 {
            return Err(PfdError::Invalid("samples_per_period must be at least 64".into()));
        }
        Ok(())
    }
}

pub const N_STATE: usize = 11;
const IL1: usize = 0;
const VT1: usize = 1;
const IL2: usize = 2;
const VT2: usize = 3;
const I3: usize = 4;
const Q3: usize = 5;
const Q1: usize = 6;
const E_SRC: usize = 7;
const E_RS: usize = 8;
const E_RL: usize = 9;
const E_LOSS: usize = 10;

pub type State = [f64; N_STATE];

/// Lumped values of the canonical circuit as integrated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TankCircuit {
    pub l1: f64,
    pub c1: f64,
    pub l2: f64,
    pub c2: f64,
    pub l3: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r_s: f64,
    pub r_l: f64,
    pub c_dc: f64,
    pub a2: f64,
    pub a3: f64,
    pub omega_p: f64,
}

impl TankCircuit {
    pub fn new(design: &PfdDesign, f_out: f64, loss_mode: LossMode) -> Result<Self> {
        let c = design
            .canonical
            .as_ref()
            .ok_or_else(|| PfdError::UnsupportedTopology("time-domain needs the canonical tank topology".into()))?;
        if c.transformer.is_some() {
            return Err(PfdError::UnsupportedTopology("transformer-extended output is frequency-domain only".into()));
        }
        let wo = 2.0 * PI * design.f_out;
        let r = |l: f64| match (loss_mode, c.inductor_q) {
            (LossMode::Lossless, _) => Ok(0.0),
            (LossMode::FixedR, Some(q)) => Ok(wo * l / q),
            (LossMode::FixedR, None) => Err(PfdError::Invalid("fixed-R loss mode needs an inductor Q".into())),
        };
        let v = &design.varactor;
        let cd = v.c_dc;
        Ok(TankCircuit {
            l1: c.l1,
            c1: c.c1,
            l2: c.l2,
            c2: c.c2,
            l3: c.l3,
            r1: r(c.l1)?,
            r2: r(c.l2)?,
            r3: r(c.l3)?,
            r_s: design.r_source,
            r_l: design.r_load,
            c_dc: cd,
            a2: -v.c_d / (2.0 * cd * cd),
            a3: (v.c_d * v.c_d - v.c_d2) / (3.0 * cd * cd * cd),
            omega_p: 4.0 * PI * f_out,
        })
    }

    pub fn varactor_voltage(&self, q: f64) -> f64 {
        q / self.c_dc + self.a2 * q * q + self.a3 * q * q * q
    }

    fn varactor_energy(&self, q: f64) -> f64 {
        q * q / (2.0 * self.c_dc) + self.a2 * q * q * q / 3.0 + self.a3 * q * q * q * q / 4.0
    }

    pub fn stored_energy(&self, s: &State) -> f64 {
        0.5 * (self.l1 * s[IL1] * s[IL1]
            + self.c1 * s[VT1] * s[VT1]
            + self.l2 * s[IL2] * s[IL2]
            + self.c2 * s[VT2] * s[VT2]
            + self.l3 * s[I3] * s[I3])
            + self.varactor_energy(s[Q3])
    }

    /// Source-branch and load-branch currents.
    pub fn branch_currents(&self, s: &State, vs: f64) -> (f64, f64) {
        let g = 1.0 / self.r_s + 1.0 / self.r_l;
        let vn = ((vs - s[VT1]) / self.r_s + s[VT2] / self.r_l - s[I3]) / g;
        ((vs - s[VT1] - vn) / self.r_s, (vn - s[VT2]) / self.r_l)
    }
}

/// Drive `ramp(t) V1 cos(w_p t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drive {
    pub v1: f64,
    pub omega_p: f64,
    /// Ramp length in seconds; zero for a drive that is on from `t = 0`.
    pub ramp_s: f64,
}

impl Drive {
    pub fn at(&self, t: f64) -> f64 {
        let ramp = if self.ramp_s > 0.0 { (t / self.ramp_s).min(1.0) } else { 1.0 };
        ramp * self.v1 * (self.omega_p * t).cos()
    }
}

pub fn state_derivative(ckt: &TankCircuit, s: &State, t: f64, drive: &Drive) -> State {
    let vs = drive.at(t);
    let (i1, i2) = ckt.branch_currents(s, vs);
    let vn = s[VT2] + i2 * ckt.r_l;
    let mut d = [0.0; N_STATE];
    d[IL1] = (s[VT1] - ckt.r1 * s[IL1]) / ckt.l1;
    d[VT1] = (i1 - s[IL1]) / ckt.c1;
    d[IL2] = (s[VT2] - ckt.r2 * s[IL2]) / ckt.l2;
    d[VT2] = (i2 - s[IL2]) / ckt.c2;
    d[I3] = (vn - ckt.varactor_voltage(s[Q3]) - ckt.r3 * s[I3]) / ckt.l3;
    d[Q3] = s[I3];
    d[Q1] = i1;
    d[E_SRC] = vs * i1;
    d[E_RS] = ckt.r_s * i1 * i1;
    d[E_RL] = ckt.r_l * i2 * i2;
    d[E_LOSS] = ckt.r1 * s[IL1] * s[IL1] + ckt.r2 * s[IL2] * s[IL2] + ckt.r3 * s[I3] * s[I3];
    d
}

// Dormand-Prince 5(4)
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Dense-output polynomial of one accepted step.
struct Dense {
    t0: f64,
    h: f64,
    r: [State; 5],
}

impl Dense {
    fn eval(&self, t: f64) -> State {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        std::array::from_fn(|i| {
            let r = &self.r;
            r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])))
        })
    }
}

struct Stepper<'a> {
    ckt: &'a TankCircuit,
    drive: Drive,
    rel_tol: f64,
    weights: [f64; N_STATE],
}

impl<'a> Stepper<'a> {
    fn f(&self, s: &State, t: f64) -> State {
        state_derivative(self.ckt, s, t, &self.drive)
    }

    /// Integrates to `t_end`, calling `sink` with every accepted step's dense output.
    fn run(&self, mut y: State, t0: f64, t_end: f64, mut sink: impl FnMut(&Dense)) -> Result<State> {
        let period = 2.0 * PI / self.ckt.omega_p;
        let h_min = 1e-9 * period;
        let mut t = t0;
        let mut h = period / 200.0;
        let mut k1 = self.f(&y, t);
        while t < t_end {
            if t + h > t_end {
                h = t_end - t;
            }
            let mut k = [[0.0; N_STATE]; 7];
            k[0] = k1;
            for st in 1..7 {
                let ys: State = std::array::from_fn(|i| y[i] + h * (0..st).map(|j| A[st][j] * k[j][i]).sum::<f64>());
                k[st] = self.f(&ys, t + C[st] * h);
            }
            let y_new: State = std::array::from_fn(|i| y[i] + h * (0..6).map(|j| A[6][j] * k[j][i]).sum::<f64>());
            let mut err = 0.0;
            for i in 0..N_STATE {
                let e = h * (0..7).map(|j| E[j] * k[j][i]).sum::<f64>();
                let sc = self.weights[i] + self.rel_tol * y[i].abs().max(y_new[i].abs());
                err += (e / sc).powi(2);
            }
            let err = (err / N_STATE as f64).sqrt();
            if err <= 1.0 {
                let ydiff: State = std::array::from_fn(|i| y_new[i] - y[i]);
                let bspl: State = std::array::from_fn(|i| h * k[0][i] - ydiff[i]);
                let dense = Dense {
                    t0: t,
                    h,
                    r: [
                        y,
                        ydiff,
                        bspl,
                        std::array::from_fn(|i| ydiff[i] - h * k[6][i] - bspl[i]),
                        std::array::from_fn(|i| h * (0..7).map(|j| D[j] * k[j][i]).sum::<f64>()),
                    ],
                };
                sink(&dense);
                t += h;
                y = y_new;
                k1 = k[6];
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
            if h < h_min && t < t_end - h_min {
                return Err(PfdError::Stiff { t });
            }
        }
        Ok(y)
    }
}

/// Energy integrals over the measurement window, joules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyWindow {
    pub source: f64,
    pub r_source: f64,
    pub r_load: f64,
    pub inductor_loss: f64,
    pub stored_change: f64,
    pub duration: f64,
}

impl EnergyWindow {
    /// `|E_src - E_dissipated| / |E_src|`, ignoring the stored-energy change.
    pub fn relative_imbalance(&self) -> f64 {
        let diss = self.r_source + self.r_load + self.inductor_loss;
        if self.source == 0.0 {
            return if diss == 0.0 { 0.0 } else { f64::INFINITY };
        }
        ((self.source - diss) / self.source).abs()
    }
}

/// Uniformly resampled measurement window.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub q1: Vec<f64>,
    pub dq1: Vec<f64>,
    pub q2: Vec<f64>,
    pub q3: Vec<f64>,
    pub dq3: Vec<f64>,
    pub vout: Vec<f64>,
    pub v1: f64,
    pub omega_p: f64,
    pub samples_per_period: usize,
    pub energy: EnergyWindow,
}

impl Trajectory {
    pub fn periods(&self) -> usize {
        self.t.len() / self.samples_per_period
    }

    fn check_window(&self) -> Result<()> {
        if self.samples_per_period == 0 || self.t.len() % self.samples_per_period != 0 || self.t.is_empty() {
            return Err(PfdError::Window("window is not an integer number of pump periods".into()));
        }
        Ok(())
    }
}

fn run_window(
    design: &PfdDesign,
    f_out: f64,
    v1: f64,
    config: &SimConfig,
    initial: Option<State>,
) -> Result<(Trajectory, State)> {
    config.validate()?;
    let ckt = TankCircuit::new(design, f_out, config.loss_mode)?;
    let period = 2.0 * PI / ckt.omega_p;
    let ramp_s = if initial.is_some() { 0.0 } else { config.ramp_periods as f64 * period };
    let drive = Drive { v1, omega_p: ckt.omega_p, ramp_s };
    let a = config.abs_tol;
    let ae = a * a / ckt.c_dc;
    let weights = [a * ckt.omega_p, a / ckt.c_dc, a * ckt.omega_p, a / ckt.c_dc, a * ckt.omega_p, a, a, ae, ae, ae, ae];
    let stepper = Stepper { ckt: &ckt, drive, rel_tol: config.rel_tol, weights };
    let spp = config.samples_per_period;
    let n = config.periods_measure * spp;
    let t_start = config.periods_settle as f64 * period;
    let t_end = (config.periods_settle + config.periods_measure) as f64 * period;
    let dt = period / spp as f64;
    let mut samples: Vec<State> = Vec::with_capacity(n);
    let mut start_state = None;
    let y0 = initial.map(|mut s| {
        s[E_SRC..].fill(0.0);
        s
    });
    let y_end = stepper.run(y0.unwrap_or([0.0; N_STATE]), 0.0, t_end, |d| {
        let t1 = d.t0 + d.h;
        if start_state.is_none() && t1 >= t_start {
            start_state = Some(d.eval(t_start));
        }
        while samples.len() < n {
            let ts = t_start + samples.len() as f64 * dt;
            if ts > t1 {
                break;
            }
            samples.push(d.eval(ts));
        }
    })?;
    let s0 = start_state.unwrap_or(y_end);
    let energy = EnergyWindow {
        source: y_end[E_SRC] - s0[E_SRC],
        r_source: y_end[E_RS] - s0[E_RS],
        r_load: y_end[E_RL] - s0[E_RL],
        inductor_loss: y_end[E_LOSS] - s0[E_LOSS],
        stored_change: ckt.stored_energy(&y_end) - ckt.stored_energy(&s0),
        duration: t_end - t_start,
    };
    let mut tr = Trajectory {
        t: Vec::with_capacity(n),
        q1: Vec::with_capacity(n),
        dq1: Vec::with_capacity(n),
        q2: Vec::with_capacity(n),
        q3: Vec::with_capacity(n),
        dq3: Vec::with_capacity(n),
        vout: Vec::with_capacity(n),
        v1,
        omega_p: ckt.omega_p,
        samples_per_period: spp,
        energy,
    };
    for (k, s) in samples.iter().enumerate() {
        let t = t_start + k as f64 * dt;
        let (i1, i2) = ckt.branch_currents(s, drive.at(t));
        tr.t.push(t);
        tr.q1.push(s[Q1]);
        tr.dq1.push(i1);
        tr.q2.push(s[Q1] - s[Q3]);
        tr.q3.push(s[Q3]);
        tr.dq3.push(s[I3]);
        tr.vout.push(ckt.r_l * i2);
    }
    Ok((tr, y_end))
}

/// Integrates from the discharged state with the drive ramped in.
pub fn integrate(design: &PfdDesign, f_out: f64, v1: f64, config: &SimConfig) -> Result<Trajectory> {
    run_window(design, f_out, v1, config, None).map(|r| r.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DetectionMetrics {
    /// Distance between odd and even stroboscopic centroids, C.
    pub separation: f64,
    /// Mean distance of stroboscopic returns from the origin, C.
    pub cycle_radius: f64,
    /// Output-frequency line of `q3` above the spectral noise floor, dB.
    pub subharmonic_db: f64,
    /// Log growth of the output-frequency amplitude per output period.
    pub growth_per_period: f64,
    /// Centroid drift between the two halves of the window, relative to the radius.
    pub drift: f64,
}

/// Stroboscopic returns `(q3, q3'/w_p)` once per pump period.
pub fn strobe(tr: &Trajectory) -> Vec<(f64, f64)> {
    (0..tr.periods())
        .map(|k| {
            let i = k * tr.samples_per_period;
            (tr.q3[i], tr.dq3[i] / tr.omega_p)
        })
        .collect()
}

fn centroid(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len().max(1) as f64;
    let (x, y) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    (x / n, y / n)
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// `(1/N) sum x e^{-i w t}`: the coefficient `c` of `x = c e^{i w t} + conj`.
fn project(t: &[f64], x: &[f64], omega: f64) -> Complex64 {
    let s: Complex64 = t.iter().zip(x).map(|(&t, &x)| x * Complex64::from_polar(1.0, -omega * t)).sum();
    s / t.len() as f64
}

fn spectrum_db(tr: &Trajectory) -> f64 {
    let n = tr.q3.len();
    let mut buf: Vec<Complex64> = tr.q3.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let m = tr.periods();
    let line = buf[m / 2].norm();
    let mut floor: Vec<f64> = (1..n / 2).filter(|k| k % (m / 2) != 0).map(|k| buf[k].norm()).collect();
    floor.sort_by(f64::total_cmp);
    let median = floor.get(floor.len() / 2).copied().unwrap_or(0.0);
    if line == 0.0 {
        return f64::NEG_INFINITY;
    }
    20.0 * (line / median.max(f64::MIN_POSITIVE)).log10()
}

fn growth(tr: &Trajectory) -> f64 {
    let w = 2 * tr.samples_per_period;
    let omega_o = 0.5 * tr.omega_p;
    let logs: Vec<f64> = (0..tr.t.len() / w)
        .map(|m| project(&tr.t[m * w..(m + 1) * w], &tr.q3[m * w..(m + 1) * w], omega_o).norm().ln())
        .collect();
    if logs.len() < 2 || logs.iter().any(|v| !v.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let n = logs.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = logs.iter().sum::<f64>() / n;
    let (num, den) = logs.iter().enumerate().fold((0.0, 0.0), |(a, b), (i, y)| {
        let dx = i as f64 - xm;
        (a + dx * (y - ym), b + dx * dx)
    });
    num / den
}

/// Separation threshold relative to the cycle radius.
pub const SEPARATION_REL: f64 = 1e-3;
pub const SPECTRAL_MARGIN_DB: f64 = 20.0;
pub const DRIFT_REL: f64 = 0.1;

/// Period-doubling test on a settled trajectory.
///
/// Divided when the output-frequency line stands `SPECTRAL_MARGIN_DB` above
/// the floor and either the odd/even stroboscopic clusters are separated or
/// the output-frequency amplitude is still growing.
pub fn detect_period_doubling(tr: &Trajectory) -> Result<(bool, DetectionMetrics)> {
    tr.check_window()?;
    let pts = strobe(tr);
    let cycle_radius = pts.iter().map(|p| p.0.hypot(p.1)).sum::<f64>() / pts.len() as f64;
    if cycle_radius == 0.0 {
        return Ok((false, DetectionMetrics::default()));
    }
    let even: Vec<_> = pts.iter().step_by(2).copied().collect();
    let odd: Vec<_> = pts.iter().skip(1).step_by(2).copied().collect();
    let separation = dist(centroid(&even), centroid(&odd));
    let h = even.len() / 2;
    let drift = dist(centroid(&even[..h]), centroid(&even[h..]))
        .max(dist(centroid(&odd[..h]), centroid(&odd[h..])))
        / cycle_radius;
    let metrics = DetectionMetrics {
        separation,
        cycle_radius,
        subharmonic_db: spectrum_db(tr),
        growth_per_period: growth(tr),
        drift,
    };
    if drift > DRIFT_REL {
        return Err(PfdError::NotSettled(format!("centroid drift {drift:.3} of the cycle radius")));
    }
    let divided = metrics.subharmonic_db > SPECTRAL_MARGIN_DB
        && (separation > SEPARATION_REL * cycle_radius || metrics.growth_per_period > 0.0);
    Ok((divided, metrics))
}

fn detect_at(design: &PfdDesign, f_out: f64, v1: f64, config: &SimConfig) -> Result<bool> {
    match detect_period_doubling(&integrate(design, f_out, v1, config)?) {
        Ok((d, _)) => Ok(d),
        Err(PfdError::NotSettled(_)) => {
            let longer = SimConfig { periods_settle: 4 * config.periods_settle, ..*config };
            detect_period_doubling(&integrate(design, f_out, v1, &longer)?).map(|r| r.0)
        }
        Err(e) => Err(e),
    }
}

/// Bisection on the drive amplitude to `1e-3` relative.
pub fn td_threshold(design: &PfdDesign, f_out: f64, bracket: [f64; 2], config: &SimConfig) -> Result<f64> {
    let [mut lo, mut hi] = bracket;
    if !(lo >= 0.0 && hi > lo) {
        return Err(PfdError::Invalid("bracket must satisfy 0 <= lo < hi".into()));
    }
    let (at_lo, at_hi) = (detect_at(design, f_out, lo, config)?, detect_at(design, f_out, hi, config)?);
    if at_lo || !at_hi {
        return Err(PfdError::Bracket { lo, hi, at_lo, at_hi });
    }
    while hi - lo > 1e-3 * 0.5 * (hi + lo) {
        let mid = 0.5 * (lo + hi);
        if detect_at(design, f_out, mid, config)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoincarePoint {
    pub v1: f64,
    /// Mean stroboscopic radius at even returns, C.
    pub r_even: f64,
    pub r_odd: f64,
    pub divided: bool,
    pub settled: bool,
}

/// Relative kick applied to the carried-over varactor charge at each
/// continuation step, so a subharmonic that decayed below round-off can regrow.
pub const CONTINUATION_KICK: f64 = 1e-6;

/// Stroboscopic radii over an ascending drive grid, carrying the state between points.
pub fn poincare_map(design: &PfdDesign, f_out: f64, v1_grid: &[f64], config: &SimConfig) -> Result<Vec<PoincarePoint>> {
    if v1_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(PfdError::Invalid("v1 grid must be ascending".into()));
    }
    let mut out = Vec::with_capacity(v1_grid.len());
    let mut state: Option<State> = None;
    for &v1 in v1_grid {
        let init = state.map(|mut s| {
            s[Q3] += CONTINUATION_KICK * s[Q3].abs().max(s[I3].abs() / (4.0 * PI * f_out));
            s
        });
        let (tr, end) = run_window(design, f_out, v1, config, init)?;
        state = Some(end);
        let pts = strobe(&tr);
        let radius = |sel: usize| {
            let r: Vec<f64> = pts.iter().skip(sel).step_by(2).map(|p| p.0.hypot(p.1)).collect();
            r.iter().sum::<f64>() / r.len() as f64
        };
        let (divided, settled) = match detect_period_doubling(&tr) {
            Ok((d, _)) => (d, true),
            Err(PfdError::NotSettled(_)) => (growth(&tr) > 0.0, false),
            Err(e) => return Err(e),
        };
        out.push(PoincarePoint { v1, r_even: radius(0), r_odd: radius(1), divided, settled });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralLine {
    pub omega: f64,
    pub q1: Complex64,
    pub q2: Complex64,
    pub q3: Complex64,
    pub vout: Complex64,
}

/// Single-bin projections at `w_o`, `w_p` and `2 w_p`.
pub fn steady_spectrum(tr: &Trajectory) -> Result<Vec<SpectralLine>> {
    tr.check_window()?;
    if tr.periods() % 2 != 0 {
        return Err(PfdError::Window("output-frequency projection needs an even number of pump periods".into()));
    }
    Ok([0.5, 1.0, 2.0]
        .iter()
        .map(|&k| {
            let omega = k * tr.omega_p;
            SpectralLine {
                omega,
                q1: project(&tr.t, &tr.q1, omega),
                q2: project(&tr.t, &tr.q2, omega),
                q3: project(&tr.t, &tr.q3, omega),
                vout: project(&tr.t, &tr.vout, omega),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic_balance::pump_smallsignal;
    use crate::synthesis::{synthesized_design, SurfaceSetup};

    fn fig2() -> PfdDesign {
        synthesized_design(500e-9, 1.7e-12, 100e6, None, None, &SurfaceSetup::default()).unwrap()
    }

    #[test]
    fn zero_state_is_equilibrium() {
        let d = fig2();
        let ckt = TankCircuit::new(&d, 100e6, LossMode::Lossless).unwrap();
        let drive = Drive { v1: 0.0, omega_p: ckt.omega_p, ramp_s: 0.0 };
        assert!(state_derivative(&ckt, &[0.0; N_STATE], 1e-9, &drive).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn varactor_slope_at_origin() {
        let ckt = TankCircuit::new(&fig2(), 100e6, LossMode::Lossless).unwrap();
        let h = 1e-18;
        let slope = (ckt.varactor_voltage(h) - ckt.varactor_voltage(-h)) / (2.0 * h);
        assert!((slope * ckt.c_dc - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_drive_stays_zero() {
        let tr = integrate(&fig2(), 100e6, 0.0, &SimConfig::default()).unwrap();
        assert!(tr.q3.iter().chain(&tr.q1).all(|q| q.abs() < 1e-15));
        let (d, m) = detect_period_doubling(&tr).unwrap();
        assert!(!d);
        assert_eq!(m, DetectionMetrics::default());
        assert!(steady_spectrum(&tr).unwrap().iter().all(|l| l.q3.norm() == 0.0));
    }

    #[test]
    fn window_is_uniform_whole_periods() {
        let cfg = SimConfig { periods_settle: 20, periods_measure: 8, ..Default::default() };
        let tr = integrate(&fig2(), 100e6, 0.01, &cfg).unwrap();
        assert_eq!(tr.t.len(), 8 * 64);
        let dt = tr.t[1] - tr.t[0];
        assert!(tr.t.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() < 1e-9 * dt));
        assert!((tr.q2[5] - (tr.q1[5] - tr.q3[5])).abs() == 0.0);
    }

    #[test]
    fn pump_line_matches_small_signal() {
        let d = fig2();
        let tr = integrate(&d, 100e6, 0.02, &SimConfig::default()).unwrap();
        let lines = steady_spectrum(&tr).unwrap();
        let (_, _, zp) = pump_smallsignal(&d, 0.02, 100e6).unwrap();
        let rel = (lines[1].q3.norm() - zp.norm()).abs() / zp.norm();
        assert!(rel < 0.05, "{rel}");
    }

    #[test]
    fn lossless_energy_balance() {
        let tr = integrate(&fig2(), 100e6, 0.02, &SimConfig::default()).unwrap();
        assert!(tr.energy.relative_imbalance() < 0.01, "{:?}", tr.energy);
    }

    #[test]
    fn fig4_pair() {
        let d = fig2();
        let cfg = SimConfig::default();
        let (below, mb) = detect_period_doubling(&integrate(&d, 100e6, 0.037, &cfg).unwrap()).unwrap();
        let (above, ma) = detect_period_doubling(&integrate(&d, 100e6, 0.039, &cfg).unwrap()).unwrap();
        assert!(!below, "{mb:?}");
        assert!(above, "{ma:?}");
    }

    #[test]
    fn bracket_below_threshold_rejected() {
        let r = td_threshold(&fig2(), 100e6, [0.001, 0.002], &SimConfig::default());
        assert!(matches!(r, Err(PfdError::Bracket { .. })));
    }

    #[test]
    fn transformer_topology_rejected() {
        let t = crate::synthesis::quarter_wave_lsection(7.01, 100e6, 50.0);
        let d = synthesized_design(500e-9, 1.7e-12, 100e6, Some(50.0), Some(&t), &SurfaceSetup::default()).unwrap();
        assert!(matches!(integrate(&d, 100e6, 0.02, &SimConfig::default()), Err(PfdError::UnsupportedTopology(_))));
    }

    #[test]
    fn deterministic() {
        let cfg = SimConfig { periods_settle: 30, periods_measure: 4, ..Default::default() };
        let a = integrate(&fig2(), 100e6, 0.03, &cfg).unwrap();
        let b = integrate(&fig2(), 100e6, 0.03, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
