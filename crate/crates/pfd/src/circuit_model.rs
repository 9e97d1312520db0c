//! Data model for parametric frequency divider designs.
//!
//! A design is three one-port branches meeting at a common node: the input
//! branch `z1` (source plus input tank), the output branch `z2` (output tank
//! plus load) and the shunt branch `z3` holding the varactor. The design file
//! is JSON; see [`parse_design`] for the accepted layout.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{PfdError, Result};

/// Half-width of the voltage window over which the capacitance expansion must stay positive.
pub const VARACTOR_WINDOW_V: f64 = 2.0;

/// Inductor Q below which `validate_design` warns.
pub const LOW_Q_WARNING: f64 = 10.0;

/// Default output-spectrum floor.
pub const DEFAULT_NOISE_FLOOR_DBM: f64 = -80.0;

/// Second-order expansion of the modulated capacitance,
/// `C(v) = C_DC (1 + C_d v + C_d2 v^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaractorModel {
    /// Static capacitance in farads.
    pub c_dc: f64,
    /// First-order coefficient in 1/V.
    pub c_d: f64,
    /// Second-order coefficient in 1/V^2.
    pub c_d2: f64,
    /// Bias voltage, carried as metadata.
    pub v_bias: Option<f64>,
}

impl VaractorModel {
    pub fn capacitance(&self, v: f64) -> f64 {
        self.c_dc * (1.0 + self.c_d * v + self.c_d2 * v * v)
    }

    /// Smallest value of `C(v)/C_DC` over `|v| <= half_width`.
    pub fn min_relative_capacitance(&self, half_width: f64) -> f64 {
        let f = |v: f64| 1.0 + self.c_d * v + self.c_d2 * v * v;
        let mut m = f(-half_width).min(f(half_width));
        if self.c_d2 > 0.0 {
            let v = -self.c_d / (2.0 * self.c_d2);
            if v.abs() <= half_width {
                m = m.min(f(v));
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElementKind {
    Resistor,
    Inductor,
    Capacitor,
}

/// Marks the resistors that stand for the source and load terminations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Load,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    pub kind: ElementKind,
    pub value: f64,
    /// Quality factor, inductors only; `None` is lossless.
    pub q: Option<f64>,
    pub role: Option<Role>,
}

impl Element {
    pub fn resistor(value: f64) -> Self {
        Self { kind: ElementKind::Resistor, value, q: None, role: None }
    }

    pub fn inductor(value: f64, q: Option<f64>) -> Self {
        Self { kind: ElementKind::Inductor, value, q, role: None }
    }

    pub fn capacitor(value: f64) -> Self {
        Self { kind: ElementKind::Capacitor, value, q: None, role: None }
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = Some(role);
        self
    }
}

/// One tabulated impedance sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TablePoint {
    pub f_hz: f64,
    pub re: f64,
    pub im: f64,
}

/// Composition tree of a one-port branch.
#[derive(Debug, Clone, PartialEq)]
pub enum OnePortNetwork {
    Element(Element),
    Series(Vec<OnePortNetwork>),
    Parallel(Vec<OnePortNetwork>),
    Table(Vec<TablePoint>),
    /// Resolves to the static varactor capacitance.
    VaractorStatic,
}

impl OnePortNetwork {
    pub fn series(items: Vec<OnePortNetwork>) -> Self {
        OnePortNetwork::Series(items)
    }

    pub fn parallel(items: Vec<OnePortNetwork>) -> Self {
        OnePortNetwork::Parallel(items)
    }

    pub fn element(e: Element) -> Self {
        OnePortNetwork::Element(e)
    }

    pub fn varactor_count(&self) -> usize {
        match self {
            OnePortNetwork::VaractorStatic => 1,
            OnePortNetwork::Series(v) | OnePortNetwork::Parallel(v) => {
                v.iter().map(|n| n.varactor_count()).sum()
            }
            _ => 0,
        }
    }

    /// Depth-first list of all elements.
    pub fn elements(&self) -> Vec<Element> {
        let mut out = Vec::new();
        self.collect_elements(&mut out);
        out
    }

    fn collect_elements(&self, out: &mut Vec<Element>) {
        match self {
            OnePortNetwork::Element(e) => out.push(*e),
            OnePortNetwork::Series(v) | OnePortNetwork::Parallel(v) => {
                v.iter().for_each(|n| n.collect_elements(out))
            }
            _ => {}
        }
    }

    /// Resistor carrying `role`, or the only resistor if none is tagged.
    pub fn termination(&self, role: Role) -> Option<f64> {
        let resistors: Vec<Element> = self
            .elements()
            .into_iter()
            .filter(|e| e.kind == ElementKind::Resistor)
            .collect();
        if let Some(e) = resistors.iter().find(|e| e.role == Some(role)) {
            return Some(e.value);
        }
        if resistors.len() == 1 && resistors[0].role.is_none() {
            return Some(resistors[0].value);
        }
        None
    }

    /// Copy with every inductor given quality factor `q`.
    pub fn with_inductor_q(&self, q: Option<f64>) -> Self {
        match self {
            OnePortNetwork::Element(e) if e.kind == ElementKind::Inductor => {
                OnePortNetwork::Element(Element { q, ..*e })
            }
            OnePortNetwork::Series(v) => {
                OnePortNetwork::Series(v.iter().map(|n| n.with_inductor_q(q)).collect())
            }
            OnePortNetwork::Parallel(v) => {
                OnePortNetwork::Parallel(v.iter().map(|n| n.with_inductor_q(q)).collect())
            }
            other => other.clone(),
        }
    }
}

/// Lumped quarter-wave step-down inserted between the output tank and the load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformerShorthand {
    pub c_match_f: f64,
    pub l_match_h: f64,
}

/// Component values of the canonical three-tank topology.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalCircuit {
    pub l1: f64,
    pub c1: f64,
    pub l2: f64,
    pub c2: f64,
    pub l3: f64,
    pub inductor_q: Option<f64>,
    pub transformer: Option<TransformerShorthand>,
}

/// Complete divider description.
#[derive(Debug, Clone, PartialEq)]
pub struct PfdDesign {
    pub z1: OnePortNetwork,
    pub z2: OnePortNetwork,
    pub z3: OnePortNetwork,
    pub varactor: VaractorModel,
    pub f_out: f64,
    pub r_source: f64,
    pub r_load: f64,
    pub noise_floor_dbm: f64,
    /// Present when the design came from the canonical shorthand.
    pub canonical: Option<CanonicalCircuit>,
}

impl PfdDesign {
    /// Expands the canonical shorthand into branch trees.
    pub fn canonical(
        circuit: CanonicalCircuit,
        varactor: VaractorModel,
        f_out: f64,
        r_source: f64,
        r_load: f64,
    ) -> Self {
        let q = circuit.inductor_q;
        let z1 = OnePortNetwork::series(vec![
            OnePortNetwork::element(Element::resistor(r_source).with_role(Role::Source)),
            OnePortNetwork::parallel(vec![
                OnePortNetwork::element(Element::inductor(circuit.l1, q)),
                OnePortNetwork::element(Element::capacitor(circuit.c1)),
            ]),
        ]);
        let tank2 = OnePortNetwork::parallel(vec![
            OnePortNetwork::element(Element::inductor(circuit.l2, q)),
            OnePortNetwork::element(Element::capacitor(circuit.c2)),
        ]);
        let load = OnePortNetwork::element(Element::resistor(r_load).with_role(Role::Load));
        let z2 = match circuit.transformer {
            None => OnePortNetwork::series(vec![tank2, load]),
            Some(t) => OnePortNetwork::series(vec![
                tank2,
                OnePortNetwork::element(Element::capacitor(t.c_match_f)),
                OnePortNetwork::parallel(vec![
                    OnePortNetwork::element(Element::inductor(t.l_match_h, q)),
                    load,
                ]),
            ]),
        };
        let z3 = OnePortNetwork::series(vec![
            OnePortNetwork::element(Element::inductor(circuit.l3, q)),
            OnePortNetwork::VaractorStatic,
        ]);
        PfdDesign {
            z1,
            z2,
            z3,
            varactor,
            f_out,
            r_source,
            r_load,
            noise_floor_dbm: DEFAULT_NOISE_FLOOR_DBM,
            canonical: Some(circuit),
        }
    }

    /// Same circuit with the output target moved to `f_out`.
    pub fn at_frequency(&self, f_out: f64) -> Self {
        PfdDesign { f_out, ..self.clone() }
    }

    pub fn frequencies(&self) -> FrequencyPair {
        FrequencyPair::from_f_out(self.f_out)
    }
}

/// Output and pump angular frequencies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyPair {
    pub omega_o: f64,
    pub omega_p: f64,
}

impl FrequencyPair {
    pub fn from_f_out(f_out: f64) -> Self {
        let omega_o = 2.0 * PI * f_out;
        FrequencyPair { omega_o, omega_p: 2.0 * omega_o }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Error, message: message.into() }
    }

    fn warning(message: impl Into<String>) -> Self {
        Diagnostic { severity: Severity::Warning, message: message.into() }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

fn check_network(name: &str, net: &OnePortNetwork, out: &mut Vec<Diagnostic>) {
    match net {
        OnePortNetwork::Element(e) => {
            if !(e.value > 0.0) || !e.value.is_finite() {
                out.push(Diagnostic::error(format!("{name}: element value must be positive")));
            }
            if let Some(q) = e.q {
                if e.kind != ElementKind::Inductor {
                    out.push(Diagnostic::error(format!("{name}: q is only allowed on inductors")));
                }
                if !(q > 0.0) {
                    out.push(Diagnostic::error("q must be positive"));
                } else if q < LOW_Q_WARNING {
                    out.push(Diagnostic::warning(format!("{name}: low inductor q = {q}")));
                }
            }
        }
        OnePortNetwork::Series(items) | OnePortNetwork::Parallel(items) => {
            if items.len() < 2 {
                out.push(Diagnostic::error(format!(
                    "{name}: series/parallel combinators need at least two items"
                )));
            }
            items.iter().for_each(|n| check_network(name, n, out));
        }
        OnePortNetwork::Table(points) => {
            if points.len() < 2 {
                out.push(Diagnostic::error(format!("{name}: table needs at least two points")));
            }
            if points.windows(2).any(|w| !(w[1].f_hz > w[0].f_hz)) {
                out.push(Diagnostic::error(format!(
                    "{name}: table frequencies must be strictly increasing"
                )));
            }
        }
        OnePortNetwork::VaractorStatic => {}
    }
}

/// Checks every design invariant; an empty list means the design is valid.
pub fn validate_design(design: &PfdDesign) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let v = &design.varactor;
    if !(v.c_dc > 0.0) {
        out.push(Diagnostic::error("c_dc must be positive"));
    } else if v.min_relative_capacitance(VARACTOR_WINDOW_V) <= 0.0 {
        out.push(Diagnostic::warning(format!(
            "varactor expansion C(v) is non-positive inside |v| <= {VARACTOR_WINDOW_V} V"
        )));
    }
    if !(design.f_out > 0.0) {
        out.push(Diagnostic::error("f_out must be positive"));
    }
    if !(design.r_source > 0.0) {
        out.push(Diagnostic::error("source resistance must be positive"));
    }
    if !(design.r_load > 0.0) {
        out.push(Diagnostic::error("load resistance must be positive"));
    }
    check_network("z1", &design.z1, &mut out);
    check_network("z2", &design.z2, &mut out);
    check_network("z3", &design.z3, &mut out);
    if design.z3.varactor_count() != 1 {
        out.push(Diagnostic::error("z3 must contain exactly one varactor"));
    }
    if design.z1.varactor_count() != 0 || design.z2.varactor_count() != 0 {
        out.push(Diagnostic::error("z1 and z2 must not contain a varactor"));
    }
    match design.z1.termination(Role::Source) {
        None => out.push(Diagnostic::error("z1 must contain the source resistor")),
        Some(r) if r != design.r_source => out.push(Diagnostic::error(format!(
            "source resistor in z1 ({r} ohm) differs from source_resistance_ohm ({})",
            design.r_source
        ))),
        _ => {}
    }
    match design.z2.termination(Role::Load) {
        None => out.push(Diagnostic::error("z2 must contain the load resistor")),
        Some(r) if r != design.r_load => out.push(Diagnostic::error(format!(
            "load resistor in z2 ({r} ohm) differs from load_resistance_ohm ({})",
            design.r_load
        ))),
        _ => {}
    }
    out
}

// ---------------------------------------------------------------------------
// Design file

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VaractorFile {
    c_dc_f: f64,
    c_d_per_v: f64,
    c_d2_per_v2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_bias_v: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
enum NodeFile {
    #[serde(rename = "series")]
    Series { items: Vec<NodeFile> },
    #[serde(rename = "parallel")]
    Parallel { items: Vec<NodeFile> },
    R {
        value_ohm: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        role: Option<Role>,
    },
    L {
        value_h: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q: Option<f64>,
    },
    C { value_f: f64 },
    #[serde(rename = "table")]
    Table { points: Vec<[f64; 3]> },
    #[serde(rename = "varactor_static")]
    VaractorStatic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchesFile {
    z1: NodeFile,
    z2: NodeFile,
    z3: NodeFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignFile {
    f_out_hz: f64,
    source_resistance_ohm: f64,
    load_resistance_ohm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise_floor_dbm: Option<f64>,
    varactor: VaractorFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    topology: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    l1_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c1_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    l2_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    c2_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    l3_h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    inductor_q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transformer: Option<TransformerShorthand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    branches: Option<BranchesFile>,
}

fn node_from_file(n: &NodeFile) -> OnePortNetwork {
    match n {
        NodeFile::Series { items } => {
            OnePortNetwork::Series(items.iter().map(node_from_file).collect())
        }
        NodeFile::Parallel { items } => {
            OnePortNetwork::Parallel(items.iter().map(node_from_file).collect())
        }
        NodeFile::R { value_ohm, role } => OnePortNetwork::Element(Element {
            kind: ElementKind::Resistor,
            value: *value_ohm,
            q: None,
            role: *role,
        }),
        NodeFile::L { value_h, q } => OnePortNetwork::element(Element::inductor(*value_h, *q)),
        NodeFile::C { value_f } => OnePortNetwork::element(Element::capacitor(*value_f)),
        NodeFile::Table { points } => OnePortNetwork::Table(
            points.iter().map(|p| TablePoint { f_hz: p[0], re: p[1], im: p[2] }).collect(),
        ),
        NodeFile::VaractorStatic => OnePortNetwork::VaractorStatic,
    }
}

fn node_to_file(n: &OnePortNetwork) -> NodeFile {
    match n {
        OnePortNetwork::Series(items) => NodeFile::Series { items: items.iter().map(node_to_file).collect() },
        OnePortNetwork::Parallel(items) => {
            NodeFile::Parallel { items: items.iter().map(node_to_file).collect() }
        }
        OnePortNetwork::Element(e) => match e.kind {
            ElementKind::Resistor => NodeFile::R { value_ohm: e.value, role: e.role },
            ElementKind::Inductor => NodeFile::L { value_h: e.value, q: e.q },
            ElementKind::Capacitor => NodeFile::C { value_f: e.value },
        },
        OnePortNetwork::Table(points) => {
            NodeFile::Table { points: points.iter().map(|p| [p.f_hz, p.re, p.im]).collect() }
        }
        OnePortNetwork::VaractorStatic => NodeFile::VaractorStatic,
    }
}

fn missing(key: &str) -> PfdError {
    PfdError::Schema(format!("missing key `{key}` for canonical topology"))
}

/// Parses a design document and rejects it if any invariant fails.
///
/// Canonical layout:
///
/// ```json
/// { "f_out_hz": 100e6, "source_resistance_ohm": 50, "load_resistance_ohm": 50,
///   "varactor": {"c_dc_f": 1.7e-12, "c_d_per_v": -0.3, "c_d2_per_v2": 0.02},
///   "topology": "canonical",
///   "l1_h": 382.5e-9, "c1_f": 6.6e-12, "l2_h": 742.5e-9, "c2_f": 0.85e-12, "l3_h": 500e-9 }
/// ```
///
/// Explicit branches replace the topology keys with
/// `"branches": {"z1": node, "z2": node, "z3": node}` where a node is one of
/// `{"kind": "series"|"parallel", "items": [..]}`,
/// `{"kind": "R", "value_ohm": .., "role": "source"|"load"}`,
/// `{"kind": "L", "value_h": .., "q": ..}`, `{"kind": "C", "value_f": ..}`,
/// `{"kind": "table", "points": [[f_hz, re_ohm, im_ohm], ..]}` or
/// `{"kind": "varactor_static"}`.
pub fn parse_design(document: &str) -> Result<PfdDesign> {
    let file: DesignFile = serde_json::from_str(document).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Syntax | Category::Eof | Category::Io => PfdError::Syntax {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            },
            Category::Data => PfdError::Schema(e.to_string()),
        }
    })?;
    let design = design_from_file(&file)?;
    let errors: Vec<String> = validate_design(&design)
        .into_iter()
        .filter(|d| d.severity == Severity::Error)
        .map(|d| d.message)
        .collect();
    if !errors.is_empty() {
        return Err(PfdError::Invalid(errors.join("; ")));
    }
    Ok(design)
}

fn design_from_file(file: &DesignFile) -> Result<PfdDesign> {
    let varactor = VaractorModel {
        c_dc: file.varactor.c_dc_f,
        c_d: file.varactor.c_d_per_v,
        c_d2: file.varactor.c_d2_per_v2,
        v_bias: file.varactor.v_bias_v,
    };
    let mut design = match (&file.topology, &file.branches) {
        (Some(t), None) if t == "canonical" => {
            let circuit = CanonicalCircuit {
                l1: file.l1_h.ok_or_else(|| missing("l1_h"))?,
                c1: file.c1_f.ok_or_else(|| missing("c1_f"))?,
                l2: file.l2_h.ok_or_else(|| missing("l2_h"))?,
                c2: file.c2_f.ok_or_else(|| missing("c2_f"))?,
                l3: file.l3_h.ok_or_else(|| missing("l3_h"))?,
                inductor_q: file.inductor_q,
                transformer: file.transformer,
            };
            PfdDesign::canonical(
                circuit,
                varactor,
                file.f_out_hz,
                file.source_resistance_ohm,
                file.load_resistance_ohm,
            )
        }
        (Some(t), None) => return Err(PfdError::Schema(format!("unknown topology `{t}`"))),
        (None, Some(b)) => {
            let canonical_keys = [file.l1_h, file.c1_f, file.l2_h, file.c2_f, file.l3_h, file.inductor_q];
            if canonical_keys.iter().any(|k| k.is_some()) || file.transformer.is_some() {
                return Err(PfdError::Schema(
                    "canonical component keys are not allowed with explicit branches".into(),
                ));
            }
            PfdDesign {
                z1: node_from_file(&b.z1),
                z2: node_from_file(&b.z2),
                z3: node_from_file(&b.z3),
                varactor,
                f_out: file.f_out_hz,
                r_source: file.source_resistance_ohm,
                r_load: file.load_resistance_ohm,
                noise_floor_dbm: DEFAULT_NOISE_FLOOR_DBM,
                canonical: None,
            }
        }
        (Some(_), Some(_)) => {
            return Err(PfdError::Schema("`topology` and `branches` are mutually exclusive".into()))
        }
        (None, None) => {
            return Err(PfdError::Schema("one of `topology` or `branches` is required".into()))
        }
    };
    if let Some(floor) = file.noise_floor_dbm {
        design.noise_floor_dbm = floor;
    }
    Ok(design)
}

/// Serializes a design back to the file format.
pub fn serialize_design(design: &PfdDesign) -> String {
    let v = &design.varactor;
    let mut file = DesignFile {
        f_out_hz: design.f_out,
        source_resistance_ohm: design.r_source,
        load_resistance_ohm: design.r_load,
        noise_floor_dbm: Some(design.noise_floor_dbm),
        varactor: VaractorFile {
            c_dc_f: v.c_dc,
            c_d_per_v: v.c_d,
            c_d2_per_v2: v.c_d2,
            v_bias_v: v.v_bias,
        },
        topology: None,
        l1_h: None,
        c1_f: None,
        l2_h: None,
        c2_f: None,
        l3_h: None,
        inductor_q: None,
        transformer: None,
        branches: None,
    };
    match design.canonical {
        Some(c) => {
            file.topology = Some("canonical".into());
            file.l1_h = Some(c.l1);
            file.c1_f = Some(c.c1);
            file.l2_h = Some(c.l2);
            file.c2_f = Some(c.c2);
            file.l3_h = Some(c.l3);
            file.inductor_q = c.inductor_q;
            file.transformer = c.transformer;
        }
        None => {
            file.branches = Some(BranchesFile {
                z1: node_to_file(&design.z1),
                z2: node_to_file(&design.z2),
                z3: node_to_file(&design.z3),
            });
        }
    }
    serde_json::to_string_pretty(&file).expect("design serialization cannot fail")
}

/// Explicit-branch copy of a design (drops the canonical shorthand).
pub fn to_explicit(design: &PfdDesign) -> PfdDesign {
    PfdDesign { canonical: None, ..design.clone() }
}
