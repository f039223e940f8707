//! Scenario documents: services, process net, rules, fault schedule and
//! run parameters, plus the built-in healthcare process.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::analysis::UnsafeSpec;
use crate::change::{OperationSignature, Param, ServiceDescriptor};
use crate::detection::PollingConfig;
use crate::hierarchy::{flatten, refine, HierarchicalNet};
use crate::net::{Marking, Net, NetBuilder, PlaceId};
use crate::reaction::{ReactionPolicy, ServiceBinding};
use crate::reconfig::{build_pnac, Pnac, RewriteRule};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl fmt::Display) -> ScenarioError {
    ScenarioError::Validation {
        field: field.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinProcess {
    Healthcare,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessSpec {
    Builtin(BuiltinProcess),
    Hierarchical(HierarchicalNet),
    /// An already flat net, as written by `export --format json`.
    Net(Net),
}

/// What a scheduled fault does to its service.
#[derive(Debug, Clone, PartialEq)]
pub enum FaultChange {
    Available(bool),
    Reliable(bool),
    Cost(f64),
    Responsiveness(f64),
    BehaviorVersion(u32),
    AddOperation(OperationSignature),
    RemoveOperation(String),
    /// A new service announces itself.
    Advertise(Box<ServiceDescriptor>),
}

impl FaultChange {
    pub fn field(&self) -> &'static str {
        match self {
            FaultChange::Available(_) => "available",
            FaultChange::Reliable(_) => "reliable",
            FaultChange::Cost(_) => "cost",
            FaultChange::Responsiveness(_) => "responsiveness",
            FaultChange::BehaviorVersion(_) => "behavior_version",
            FaultChange::AddOperation(_) => "add_operation",
            FaultChange::RemoveOperation(_) => "remove_operation",
            FaultChange::Advertise(_) => "advertise",
        }
    }

    /// Compact rendering for trace lines.
    pub fn value_text(&self) -> String {
        match self {
            FaultChange::Available(b) | FaultChange::Reliable(b) => b.to_string(),
            FaultChange::Cost(x) | FaultChange::Responsiveness(x) => x.to_string(),
            FaultChange::BehaviorVersion(v) => v.to_string(),
            FaultChange::AddOperation(op) => op.to_string(),
            FaultChange::RemoveOperation(name) => name.clone(),
            FaultChange::Advertise(d) => d.role_name.clone(),
        }
    }

    fn value(&self) -> Value {
        match self {
            FaultChange::Available(b) | FaultChange::Reliable(b) => Value::from(*b),
            FaultChange::Cost(x) | FaultChange::Responsiveness(x) => Value::from(*x),
            FaultChange::BehaviorVersion(v) => Value::from(*v),
            FaultChange::AddOperation(op) => serde_json::to_value(op).expect("plain data"),
            FaultChange::RemoveOperation(name) => Value::from(name.as_str()),
            FaultChange::Advertise(d) => serde_json::to_value(d).expect("plain data"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFault", into = "RawFault")]
pub struct Fault {
    pub tick: u64,
    pub service: String,
    pub change: FaultChange,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFault {
    tick: u64,
    service: String,
    field: String,
    value: Value,
}

impl TryFrom<RawFault> for Fault {
    type Error = String;

    fn try_from(raw: RawFault) -> Result<Self, String> {
        fn typed<T: serde::de::DeserializeOwned>(field: &str, v: Value) -> Result<T, String> {
            serde_json::from_value(v).map_err(|e| format!("bad value for `{field}`: {e}"))
        }
        let v = raw.value;
        let change = match raw.field.as_str() {
            "available" => FaultChange::Available(typed("available", v)?),
            "reliable" => FaultChange::Reliable(typed("reliable", v)?),
            "cost" => FaultChange::Cost(typed("cost", v)?),
            "responsiveness" => FaultChange::Responsiveness(typed("responsiveness", v)?),
            "behavior_version" => FaultChange::BehaviorVersion(typed("behavior_version", v)?),
            "add_operation" => FaultChange::AddOperation(typed("add_operation", v)?),
            "remove_operation" => FaultChange::RemoveOperation(typed("remove_operation", v)?),
            "advertise" => FaultChange::Advertise(Box::new(typed("advertise", v)?)),
            other => return Err(format!("unknown fault field `{other}`")),
        };
        Ok(Fault {
            tick: raw.tick,
            service: raw.service,
            change,
        })
    }
}

impl From<Fault> for RawFault {
    fn from(f: Fault) -> Self {
        RawFault {
            tick: f.tick,
            service: f.service,
            field: f.change.field().to_owned(),
            value: f.change.value(),
        }
    }
}

fn default_max_ticks() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub services: Vec<ServiceDescriptor>,
    pub process: ProcessSpec,
    /// Service id -> the process fragment it realizes. The built-in
    /// process supplies its own when this is empty.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bindings: BTreeMap<String, ServiceBinding>,
    /// Defaults to one plain token in the input place.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_marking: Option<Marking>,
    #[serde(default)]
    pub rules: Vec<RewriteRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unsafe_spec: Option<UnsafeSpec>,
    #[serde(default)]
    pub fault_schedule: Vec<Fault>,
    #[serde(default)]
    pub polling: PollingConfig,
    #[serde(default)]
    pub policy: ReactionPolicy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
    /// Relative dead band for numeric attribute changes.
    #[serde(default)]
    pub dead_band: f64,
}

impl ScenarioConfig {
    /// The process hierarchy, unless the scenario gives a flat net.
    pub fn hierarchical_net(&self) -> Option<HierarchicalNet> {
        match &self.process {
            ProcessSpec::Builtin(BuiltinProcess::Healthcare) => Some(healthcare_process()),
            ProcessSpec::Hierarchical(h) => Some(h.clone()),
            ProcessSpec::Net(_) => None,
        }
    }

    /// The flattened process the orchestration executes.
    pub fn process_net(&self) -> Net {
        match &self.process {
            ProcessSpec::Net(net) => net.clone(),
            _ => flatten(&self.hierarchical_net().expect("not a flat net")),
        }
    }

    pub fn effective_bindings(&self) -> BTreeMap<String, ServiceBinding> {
        match (&self.process, self.bindings.is_empty()) {
            (ProcessSpec::Builtin(BuiltinProcess::Healthcare), true) => healthcare_bindings(),
            _ => self.bindings.clone(),
        }
    }

    pub fn initial(&self, net: &Net) -> Marking {
        self.initial_marking
            .clone()
            .unwrap_or_else(|| Marking::plain(net.p_in().clone(), 1))
    }

    pub fn unsafe_spec(&self) -> UnsafeSpec {
        self.unsafe_spec.clone().unwrap_or_default()
    }

    /// Service ids that exist at some point: configured or advertised.
    pub fn known_services(&self) -> BTreeSet<String> {
        self.services
            .iter()
            .map(|s| s.id.clone())
            .chain(self.fault_schedule.iter().filter_map(|f| match &f.change {
                FaultChange::Advertise(d) => Some(d.id.clone()),
                _ => None,
            }))
            .collect()
    }

    /// The process as a reconfigurable net with the scenario's rules.
    pub fn pnac(&self) -> Result<Pnac, ScenarioError> {
        let net = self.process_net();
        let initial = self.initial(&net);
        build_pnac(net, self.rules.iter().cloned(), initial).map_err(|e| invalid("rules", e))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.max_ticks == 0 {
            return Err(invalid("max_ticks", "must be at least 1"));
        }
        self.polling.validate().map_err(|e| invalid("polling", e))?;
        if self.policy.heartbeat_limit == 0 {
            return Err(invalid("policy.heartbeat_limit", "must be at least 1"));
        }
        if !self.dead_band.is_finite() || self.dead_band < 0.0 {
            return Err(invalid("dead_band", "must be a non-negative number"));
        }

        let mut ids = BTreeSet::new();
        for (i, s) in self.services.iter().enumerate() {
            s.validate().map_err(|e| invalid(format!("services[{i}]"), e))?;
            if !ids.insert(s.id.as_str()) {
                return Err(invalid(format!("services[{i}].id"), format!("duplicate id `{}`", s.id)));
            }
        }

        let mut advertised = BTreeSet::new();
        for (i, f) in self.fault_schedule.iter().enumerate() {
            let field = format!("fault_schedule[{i}]");
            if f.tick > self.max_ticks {
                return Err(invalid(
                    format!("{field}.tick"),
                    format!("tick {} is past max_ticks {}", f.tick, self.max_ticks),
                ));
            }
            match &f.change {
                FaultChange::Advertise(d) => {
                    if d.id != f.service {
                        return Err(invalid(
                            format!("{field}.value.id"),
                            format!("`{}` differs from the fault's service `{}`", d.id, f.service),
                        ));
                    }
                    if ids.contains(d.id.as_str()) || !advertised.insert(d.id.as_str()) {
                        return Err(invalid(
                            format!("{field}.service"),
                            format!("`{}` is already known", d.id),
                        ));
                    }
                    d.validate().map_err(|e| invalid(format!("{field}.value"), e))?;
                }
                _ if !ids.contains(f.service.as_str()) && !advertised.contains(f.service.as_str()) => {
                    return Err(invalid(
                        format!("{field}.service"),
                        format!("unknown service `{}`", f.service),
                    ));
                }
                FaultChange::Cost(x) | FaultChange::Responsiveness(x) if !x.is_finite() || *x < 0.0 => {
                    return Err(invalid(format!("{field}.value"), "must be a non-negative number"));
                }
                _ => {}
            }
        }

        let known = self.known_services();
        for s in &self.services {
            if let Some(missing) = s.substitutes.iter().find(|id| !known.contains(*id)) {
                return Err(invalid(
                    format!("services.{}.substitutes", s.id),
                    format!("unknown service `{missing}`"),
                ));
            }
        }

        let net = self.process_net();
        for (service, b) in self.effective_bindings() {
            let field = format!("bindings.{service}");
            if !ids.contains(service.as_str()) {
                return Err(invalid(field, format!("unknown service `{service}`")));
            }
            if let Some(p) = b.places.iter().find(|p| !net.has_place(p)) {
                return Err(invalid(field, format!("place `{p}` not in the process net")));
            }
            if let Some(t) = b.transitions.iter().find(|t| !net.has_transition(t)) {
                return Err(invalid(field, format!("transition `{t}` not in the process net")));
            }
        }
        if let Some(m) = &self.initial_marking {
            if let Some(p) = m.places().find(|p| !net.has_place(p.as_str())) {
                return Err(invalid("initial_marking", format!("unknown place `{p}`")));
            }
        }
        self.pnac()?;
        Ok(())
    }
}

/// Parses and validates a scenario document.
pub fn load_scenario(document: &str) -> Result<ScenarioConfig, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(document);
    let config: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ScenarioError::Parse {
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_scenario_file(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    load_scenario(&text)
}

/// Top-level services of the healthcare process with the operation each
/// is invoked for.
pub const HEALTHCARE_TOP_LEVEL: [(&str, &str, &str); 5] = [
    ("HS", "HealthService", "subscribe"),
    ("AS", "AccountingService", "recordContact"),
    ("SS", "SpecialistService", "analyzeVitals"),
    ("FS", "FinancialService", "settlePayment"),
    ("IS", "InsuranceService", "processClaim"),
];

/// Member services assembled inside the health service.
pub const HEALTHCARE_SUB_SERVICES: [(&str, &str, &str); 9] = [
    ("PhysInfoWS", "PhysiologicalInfo", "getPhysiologicalData"),
    ("EnvInfoWS", "EnvironmentInfo", "getEnvironmentData"),
    ("SubjFeelWS", "SubjectiveFeelings", "getSubjectiveFeelings"),
    ("CoronaryDiagWS", "CoronaryDiagnosis", "diagnoseCoronary"),
    ("AssessmentWS", "RiskAssessment", "assessRisk"),
    ("EmrWS", "MedicalRecord", "updateRecord"),
    ("GeoWS", "Geolocation", "locatePatient"),
    ("EmerWS", "EmergencyDispatch", "dispatchEmergency"),
    ("GuideWS", "Guidance", "provideGuidance"),
];

const ACQUISITION: [&str; 3] = ["PhysInfoWS", "EnvInfoWS", "SubjFeelWS"];
const PIPELINE: [&str; 6] = [
    "CoronaryDiagWS",
    "AssessmentWS",
    "EmrWS",
    "GeoWS",
    "EmerWS",
    "GuideWS",
];

fn ready(service: &str) -> String {
    format!("{service}.ready")
}

/// The health service's internal assembly: three acquisition services in
/// parallel, joined, then a sequential diagnosis and response pipeline.
pub fn health_service_subnet() -> Net {
    let mut b = NetBuilder::new("in", "out")
        .places(["in", "out"])
        .named_transition("Acquire", "fork acquisition", None)
        .transition("Collect");
    for s in ACQUISITION {
        let collected = format!("Collect.{s}");
        b = b
            .place(&ready(s))
            .place(&collected)
            .transition(s)
            .arc("Acquire", &ready(s), 1)
            .step(&ready(s), s, &collected)
            .arc(&collected, "Collect", 1);
    }
    let mut prev = "Collect".to_owned();
    for s in PIPELINE {
        b = b
            .place(&ready(s))
            .transition(s)
            .arc(&prev, &ready(s), 1)
            .arc(&ready(s), s, 1);
        prev = s.to_owned();
    }
    b.arc("in", "Acquire", 1)
        .arc(&prev, "out", 1)
        .build()
        .expect("health service subnet is well formed")
}

/// Root process: HS forks into accounting and specialist analysis, the
/// financial service joins them, insurance closes the case.
pub fn healthcare_root() -> Net {
    NetBuilder::new("start", "end")
        .places(["start", "end", "AS.ready", "SS.ready", "FS.from_AS", "FS.from_SS", "IS.ready"])
        .named_transition("HS", "HealthService", None)
        .named_transition("AS", "AccountingService", None)
        .named_transition("SS", "SpecialistService", None)
        .named_transition("FS", "FinancialService", None)
        .named_transition("IS", "InsuranceService", None)
        .arc("start", "HS", 1)
        .arc("HS", "AS.ready", 1)
        .arc("HS", "SS.ready", 1)
        .step("AS.ready", "AS", "FS.from_AS")
        .step("SS.ready", "SS", "FS.from_SS")
        .arc("FS.from_AS", "FS", 1)
        .arc("FS.from_SS", "FS", 1)
        .arc("FS", "IS.ready", 1)
        .step("IS.ready", "IS", "end")
        .build()
        .expect("healthcare root is well formed")
}

pub fn healthcare_process() -> HierarchicalNet {
    let root = HierarchicalNet::new("healthcare", healthcare_root()).expect("valid root");
    let sub = HierarchicalNet::new("HealthService", health_service_subnet()).expect("valid subnet");
    refine(&root, "HS", &sub).expect("HS is refinable")
}

pub fn healthcare_bindings() -> BTreeMap<String, ServiceBinding> {
    let top = HEALTHCARE_TOP_LEVEL
        .iter()
        .filter(|(id, _, _)| *id != "HS")
        .map(|(id, _, op)| (id.to_string(), String::new(), *op));
    let sub = HEALTHCARE_SUB_SERVICES
        .iter()
        .map(|(id, _, op)| (id.to_string(), "HS/".to_owned(), *op));
    top.chain(sub)
        .map(|(id, prefix, op)| {
            // FS joins two branches and owns no single ready place
            let places = if id == "FS" {
                Vec::new()
            } else {
                vec![format!("{prefix}{}", ready(&id))]
            };
            let binding = ServiceBinding {
                places,
                transitions: vec![format!("{prefix}{id}")],
                invokes: BTreeSet::from([op.to_owned()]),
            };
            (id, binding)
        })
        .collect()
}

fn descriptor(id: &str, role: &str, op: &str, cost: f64) -> ServiceDescriptor {
    let mut d = ServiceDescriptor::new(id, role);
    d.operations.push(OperationSignature {
        name: op.to_owned(),
        inputs: vec![Param {
            name: "patient".into(),
            ty: "PatientId".into(),
        }],
        outputs: vec![Param {
            name: "result".into(),
            ty: "Report".into(),
        }],
    });
    d.cost = cost;
    d.responsiveness = 100.0;
    d
}

/// The five top-level services followed by the nine sub-services.
pub fn healthcare_services() -> Vec<ServiceDescriptor> {
    HEALTHCARE_TOP_LEVEL
        .iter()
        .chain(HEALTHCARE_SUB_SERVICES.iter())
        .enumerate()
        .map(|(i, (id, role, op))| {
            let mut d = descriptor(id, role, op, 10.0 + i as f64);
            d.critical = matches!(*id, "SS" | "CoronaryDiagWS");
            d
        })
        .collect()
}

/// A second specialist service able to stand in for SS.
pub fn specialist_substitute(id: &str) -> ServiceDescriptor {
    let mut d = descriptor(id, "SpecialistService", "analyzeVitals", 15.0);
    d.critical = true;
    d
}

/// The nominal healthcare scenario with no faults.
pub fn healthcare_scenario() -> ScenarioConfig {
    ScenarioConfig {
        name: "healthcare-nominal".into(),
        services: healthcare_services(),
        process: ProcessSpec::Builtin(BuiltinProcess::Healthcare),
        bindings: BTreeMap::new(),
        initial_marking: None,
        rules: Vec::new(),
        unsafe_spec: Some(one_safety_spec(&flatten(&healthcare_process()))),
        fault_schedule: Vec::new(),
        polling: PollingConfig::default(),
        policy: ReactionPolicy::default(),
        seed: 0,
        max_ticks: 40,
        dead_band: 0.0,
    }
}

/// Unsafe iff some place of `net` holds more than one token.
pub fn one_safety_spec(net: &Net) -> UnsafeSpec {
    UnsafeSpec::Any {
        of: net
            .places()
            .map(PlaceId::as_str)
            .map(|p| UnsafeSpec::CountAbove {
                place: p.to_owned(),
                limit: 1,
            })
            .collect(),
    }
}

/// The built-in scenario as a JSON document.
pub fn healthcare_document() -> String {
    serde_json::to_string_pretty(&healthcare_scenario()).expect("plain data")
}
