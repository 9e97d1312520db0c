//! Command-line front end.

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::circuit_model::{parse_design, serialize_design, validate_design, PfdDesign, Severity};
use crate::error::{PfdError, Result};
use crate::harmonic_balance::{classify_and_stability, pout_vs_pin, Branch};
use crate::synthesis::{
    pth_surface, q_sensitivity, quarter_wave_lsection, synthesize_canonical, synthesized_design, SurfaceSetup,
    VaractorLaw,
};
use crate::threshold::{threshold_sweep, vth_closed_form};
use crate::timedomain::{integrate, poincare_map, td_threshold, SimConfig};

#[derive(Debug, Parser)]
#[command(name = "pfd", version, about = "Varactor parametric frequency divider toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DesignArg {
    /// Design file (JSON)
    #[arg(long)]
    pub design: PathBuf,
    /// Output frequency, Hz (defaults to the design's)
    #[arg(long)]
    pub fout: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and check a design file
    Validate {
        #[arg(long)]
        design: PathBuf,
    },
    /// Synthesize the minimum-threshold canonical design
    Synth {
        #[arg(long)]
        l3: f64,
        #[arg(long)]
        cdc: f64,
        #[arg(long)]
        fout: f64,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long = "transformer-z0")]
        transformer_z0: Option<f64>,
        #[arg(long, default_value_t = 50.0)]
        r_source: f64,
        #[arg(long, default_value_t = 50.0)]
        r_load: f64,
        #[arg(long, default_value_t = -0.3, allow_hyphen_values = true)]
        cd: f64,
        #[arg(long, default_value_t = 0.02, allow_hyphen_values = true)]
        cd2: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-form threshold
    Threshold {
        #[command(flatten)]
        d: DesignArg,
    },
    /// Threshold versus output frequency
    Sweep {
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        fout_start: f64,
        #[arg(long)]
        fout_stop: f64,
        #[arg(long)]
        points: usize,
        #[arg(long, alias = "csv")]
        out: PathBuf,
    },
    /// Threshold over an L3 x C_DC grid of synthesized designs
    Surface {
        /// start,stop,points
        #[arg(long)]
        l3_range: String,
        /// start,stop,points
        #[arg(long)]
        cdc_range: String,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        fout: f64,
        #[arg(long = "transformer-z0")]
        transformer_z0: Option<f64>,
        #[arg(long, alias = "csv")]
        out: PathBuf,
    },
    /// Threshold versus C_DC for several inductor Q values
    Qsens {
        #[arg(long)]
        l3: f64,
        /// start,stop,points
        #[arg(long)]
        cdc_range: String,
        /// Comma-separated Q values; `none` for lossless
        #[arg(long)]
        q_range: String,
        #[arg(long)]
        fout: f64,
        #[arg(long, alias = "csv")]
        out: PathBuf,
    },
    /// Harmonic-balance branches and stability over a drive grid
    Hb {
        #[command(flatten)]
        d: DesignArg,
        #[arg(long)]
        v1_start: f64,
        #[arg(long)]
        v1_stop: f64,
        #[arg(long)]
        points: usize,
        #[arg(long, alias = "csv")]
        out: PathBuf,
    },
    /// Output power versus input power
    Pout {
        #[command(flatten)]
        d: DesignArg,
        #[arg(long, allow_hyphen_values = true)]
        pin_start: f64,
        #[arg(long, allow_hyphen_values = true)]
        pin_stop: f64,
        #[arg(long)]
        points: usize,
        #[arg(long, allow_hyphen_values = true)]
        floor: Option<f64>,
        #[arg(long, alias = "csv")]
        out: PathBuf,
    },
    /// Time-domain trajectory
    Sim {
        #[command(flatten)]
        d: DesignArg,
        #[arg(long)]
        v1: f64,
        /// Measured pump periods (power of two)
        #[arg(long, default_value_t = 64)]
        periods: usize,
        #[arg(long, default_value_t = 300)]
        settle: usize,
        #[arg(long, alias = "csv")]
        out: PathBuf,
    },
    /// Time-domain threshold by bisection
    Tdthreshold {
        #[command(flatten)]
        d: DesignArg,
        #[arg(long)]
        vlo: f64,
        #[arg(long)]
        vhi: f64,
    },
    /// Stroboscopic radii over a drive grid
    Poincare {
        #[command(flatten)]
        d: DesignArg,
        #[arg(long)]
        v1_start: f64,
        #[arg(long)]
        v1_stop: f64,
        #[arg(long)]
        points: usize,
        #[arg(long, alias = "csv")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub parameters: BTreeMap<String, String>,
    pub version: String,
    pub input_digest: String,
    pub duration_s: f64,
}

enum Failure {
    Usage(String),
    Compute(PfdError),
}

impl From<PfdError> for Failure {
    fn from(e: PfdError) -> Self {
        Failure::Compute(e)
    }
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn linspace(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        n => (0..n).map(|i| start + (stop - start) * i as f64 / (n - 1) as f64).collect(),
    }
}

fn parse_range(s: &str) -> std::result::Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || Failure::Usage(format!("range `{s}` must be start,stop,points"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].parse().map_err(|_| bad())?;
    let b: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    Ok(linspace(a, b, n))
}

fn parse_q_list(s: &str) -> std::result::Result<Vec<Option<f64>>, Failure> {
    s.split(',')
        .map(str::trim)
        .map(|t| match t {
            "none" | "lossless" => Ok(None),
            _ => t.parse().map(Some).map_err(|_| Failure::Usage(format!("bad Q value `{t}`"))),
        })
        .collect()
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| PfdError::Io(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| PfdError::Io(format!("{}: {e}", path.display())))
}

fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn load(path: &Path) -> Result<(PfdDesign, String)> {
    let text = read_file(path)?;
    Ok((parse_design(&text)?, digest(text.as_bytes())))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

struct Run {
    name: &'static str,
    params: BTreeMap<String, String>,
    digest: Option<String>,
    start: Instant,
}

impl Run {
    fn param(&mut self, k: &str, v: impl ToString) {
        self.params.insert(k.to_string(), v.to_string());
    }

    fn finish(self, out: &Path, body: &str) -> Result<()> {
        write_file(out, body)?;
        let input_digest = self.digest.clone().unwrap_or_else(|| {
            let canon: String = self.params.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
            digest(canon.as_bytes())
        });
        let m = RunManifest {
            subcommand: self.name.to_string(),
            parameters: self.params,
            version: env!("CARGO_PKG_VERSION").to_string(),
            input_digest,
            duration_s: self.start.elapsed().as_secs_f64(),
        };
        let json = serde_json::to_string_pretty(&m).map_err(|e| PfdError::Io(e.to_string()))?;
        write_file(&manifest_path(out), &json)
    }
}

fn design_arg(run: &mut Run, d: &DesignArg) -> Result<(PfdDesign, f64)> {
    let (design, dg) = load(&d.design)?;
    let f = d.fout.unwrap_or(design.f_out);
    run.digest = Some(dg);
    run.param("design", d.design.display());
    run.param("fout", num(f));
    Ok((design, f))
}

fn execute(cmd: Command) -> std::result::Result<(), Failure> {
    let name = match &cmd {
        Command::Validate { .. } => "validate",
        Command::Synth { .. } => "synth",
        Command::Threshold { .. } => "threshold",
        Command::Sweep { .. } => "sweep",
        Command::Surface { .. } => "surface",
        Command::Qsens { .. } => "qsens",
        Command::Hb { .. } => "hb",
        Command::Pout { .. } => "pout",
        Command::Sim { .. } => "sim",
        Command::Tdthreshold { .. } => "tdthreshold",
        Command::Poincare { .. } => "poincare",
    };
    let mut run = Run { name, params: BTreeMap::new(), digest: None, start: Instant::now() };
    match cmd {
        Command::Validate { design } => {
            let text = read_file(&design)?;
            let d = parse_design(&text)?;
            for diag in validate_design(&d) {
                let tag = match diag.severity {
                    Severity::Error => "error",
                    Severity::Warning => "warning",
                };
                eprintln!("{tag}: {}", diag.message);
            }
            println!("ok");
        }
        Command::Synth { l3, cdc, fout, q, transformer_z0, r_source, r_load, cd, cd2, out } => {
            let values = synthesize_canonical(l3, cdc, fout);
            if let Some(note) = values.c2_note() {
                eprintln!("{note}");
            }
            let setup = SurfaceSetup { r_source, r_load, c_d2: cd2, law: VaractorLaw::Constant(cd) };
            let t = transformer_z0.map(|z0| quarter_wave_lsection(z0, fout, r_load));
            let design = synthesized_design(l3, cdc, fout, q, t.as_ref(), &setup)?;
            for (k, v) in [("l3", l3), ("cdc", cdc), ("fout", fout), ("r_source", r_source), ("r_load", r_load), ("cd", cd), ("cd2", cd2)] {
                run.param(k, num(v));
            }
            run.param("q", q.map_or("none".into(), num));
            run.param("transformer_z0", transformer_z0.map_or("none".into(), num));
            run.finish(&out, &serialize_design(&design))?;
        }
        Command::Threshold { d } => {
            let (design, f) = design_arg(&mut run, &d)?;
            let r = vth_closed_form(&design, f)?;
            println!("vth_v={}", num(r.v_th_mag));
            println!("pth_dbm={}", num(r.p_th_dbm));
        }
        Command::Sweep { design, fout_start, fout_stop, points, out } => {
            let (d, dg) = load(&design)?;
            run.digest = Some(dg);
            run.param("design", design.display());
            run.param("fout_start", num(fout_start));
            run.param("fout_stop", num(fout_stop));
            run.param("points", points);
            let mut body = String::from("f_out_hz,vth_v,pth_dbm\n");
            for row in threshold_sweep(&d, &linspace(fout_start, fout_stop, points)) {
                let (v, p) = row.result.map_or((f64::NAN, f64::NAN), |r| (r.v_th_mag, r.p_th_dbm));
                let _ = writeln!(body, "{},{},{}", num(row.f_out), num(v), num(p));
            }
            run.finish(&out, &body)?;
        }
        Command::Surface { l3_range, cdc_range, q, fout, transformer_z0, out } => {
            let l3s = parse_range(&l3_range)?;
            let cdcs = parse_range(&cdc_range)?;
            run.param("l3_range", &l3_range);
            run.param("cdc_range", &cdc_range);
            run.param("q", q.map_or("none".into(), num));
            run.param("fout", num(fout));
            run.param("transformer_z0", transformer_z0.map_or("none".into(), num));
            let setup = SurfaceSetup::default();
            let t = transformer_z0.map(|z0| quarter_wave_lsection(z0, fout, setup.r_load));
            let mut body = String::from("l3_h,cdc_f,q,pth_dbm,feasible\n");
            for p in pth_surface(&l3s, &cdcs, q, fout, t.as_ref(), &setup) {
                let qs = p.q.map_or("inf".into(), num);
                let _ = writeln!(body, "{},{},{},{},{}", num(p.l3), num(p.c_dc), qs, num(p.p_th_dbm), p.feasible);
            }
            run.finish(&out, &body)?;
        }
        Command::Qsens { l3, cdc_range, q_range, fout, out } => {
            let cdcs = parse_range(&cdc_range)?;
            let qs = parse_q_list(&q_range)?;
            run.param("l3", num(l3));
            run.param("cdc_range", &cdc_range);
            run.param("q_range", &q_range);
            run.param("fout", num(fout));
            let s = q_sensitivity(l3, &cdcs, &qs, fout, &SurfaceSetup::default());
            let mut body = String::from("cdc_f,q,pth_dbm\n");
            for p in &s.points {
                let _ = writeln!(body, "{},{},{}", num(p.c_dc), p.q.map_or("inf".into(), num), num(p.p_th_dbm));
            }
            for (q, c) in &s.argmin_c_dc {
                eprintln!("argmin q={}: cdc_f={}", q.map_or("inf".into(), num), num(*c));
            }
            run.finish(&out, &body)?;
        }
        Command::Hb { d, v1_start, v1_stop, points, out } => {
            let (design, f) = design_arg(&mut run, &d)?;
            run.param("v1_start", num(v1_start));
            run.param("v1_stop", num(v1_stop));
            run.param("points", points);
            let c = classify_and_stability(&design, f, &linspace(v1_start, v1_stop, points))?;
            for diag in &c.diagnostics {
                eprintln!("{diag}");
            }
            let mut body = String::from("v1_v,branch,sheet,alpha_per_s,zo_abs_c,zp_abs_c,stable\n");
            for p in &c.points {
                for b in [Branch::S1, Branch::S2, Branch::S3] {
                    if let Some(s) = p.get(b) {
                        let sheet = format!("{:?}", s.sheet).to_lowercase();
                        let _ = writeln!(
                            body,
                            "{},{},{},{},{},{},{}",
                            num(p.v1),
                            b,
                            sheet,
                            num(s.alpha),
                            num(s.z_o.norm()),
                            num(s.z_p.norm()),
                            s.is_stable()
                        );
                    }
                }
            }
            run.finish(&out, &body)?;
        }
        Command::Pout { d, pin_start, pin_stop, points, floor, out } => {
            let (design, f) = design_arg(&mut run, &d)?;
            let floor = floor.unwrap_or(design.noise_floor_dbm);
            run.param("pin_start", num(pin_start));
            run.param("pin_stop", num(pin_stop));
            run.param("points", points);
            run.param("floor", num(floor));
            let rows = pout_vs_pin(&design, f, &linspace(pin_start, pin_stop, points), floor)?;
            let mut body = String::from("pin_dbm,pout_dbm,branch\n");
            for r in rows {
                let b = r.branch.map_or("none".to_string(), |b| b.to_string());
                let _ = writeln!(body, "{},{},{}", num(r.p_in_dbm), num(r.p_out_dbm), b);
            }
            run.finish(&out, &body)?;
        }
        Command::Sim { d, v1, periods, settle, out } => {
            let (design, f) = design_arg(&mut run, &d)?;
            run.param("v1", num(v1));
            run.param("periods", periods);
            run.param("settle", settle);
            let cfg = SimConfig { periods_measure: periods, periods_settle: settle, ..SimConfig::default() };
            let tr = integrate(&design, f, v1, &cfg)?;
            let mut body = String::from("t_s,q1_c,q2_c,q3_c,dq3_c_per_s,vout_v\n");
            for i in 0..tr.t.len() {
                let _ = writeln!(
                    body,
                    "{},{},{},{},{},{}",
                    num(tr.t[i]),
                    num(tr.q1[i]),
                    num(tr.q2[i]),
                    num(tr.q3[i]),
                    num(tr.dq3[i]),
                    num(tr.vout[i])
                );
            }
            run.finish(&out, &body)?;
        }
        Command::Tdthreshold { d, vlo, vhi } => {
            let (design, f) = design_arg(&mut run, &d)?;
            let v = td_threshold(&design, f, [vlo, vhi], &SimConfig::default())?;
            println!("vth_td_v={}", num(v));
        }
        Command::Poincare { d, v1_start, v1_stop, points, out } => {
            let (design, f) = design_arg(&mut run, &d)?;
            run.param("v1_start", num(v1_start));
            run.param("v1_stop", num(v1_stop));
            run.param("points", points);
            let pm = poincare_map(&design, f, &linspace(v1_start, v1_stop, points), &SimConfig::default())?;
            let mut body = String::from("v1_v,r_even,r_odd\n");
            for p in &pm {
                if !p.settled {
                    eprintln!("v1 = {}: not settled", num(p.v1));
                }
                let _ = writeln!(body, "{},{},{}", num(p.v1), num(p.r_even), num(p.r_odd));
            }
            run.finish(&out, &body)?;
        }
    }
    Ok(())
}

/// Caps the global worker pool from `PFD_THREADS` (unset or 0: all cores).
pub fn configure_threads() {
    let n = std::env::var("PFD_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()).unwrap_or(0);
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Runs the tool and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}
