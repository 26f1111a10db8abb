//! Mutation-based dependency generation.
//!
//! For every argument slot, run `bound` operation units: build random
//! arguments, derive a second argument list in which only that slot is
//! mutated, call the function on both lists one after the other, and diff
//! the post-call arguments and return values. Every difference becomes an
//! edge from the changed output field to the mutated input field.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::executor::{ExecError, ExecutorHandle, FunctionSig, DEFAULT_BUDGET};
use crate::typesys::{
    construct_random, diff_paths, mutate, resolve_concrete, Chain, GenConfig, Rng, TypeDesc, TypeError, Value,
};

#[derive(Debug, Error)]
pub enum DepGenError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed field path `{0}`")]
    BadPath(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    Arg(usize),
    Return,
}

/// `Type@slot.field.field`: an argument slot (or the return value) plus a
/// field chain below it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FieldPath {
    pub slot: Slot,
    pub type_name: String,
    pub chain: Chain,
}

impl FieldPath {
    pub fn arg(index: usize, type_name: impl Into<String>, chain: &[&str]) -> Self {
        FieldPath {
            slot: Slot::Arg(index),
            type_name: type_name.into(),
            chain: chain.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn ret(type_name: impl Into<String>, chain: &[&str]) -> Self {
        FieldPath {
            slot: Slot::Return,
            type_name: type_name.into(),
            chain: chain.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Whether `self` names `other` or one of its ancestors.
    pub fn is_prefix_of(&self, other: &FieldPath) -> bool {
        self.slot == other.slot && other.chain.starts_with(&self.chain)
    }
}

impl fmt::Display for FieldPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.slot {
            Slot::Arg(i) => write!(f, "{}@{}", self.type_name, i)?,
            Slot::Return => write!(f, "{}@return", self.type_name)?,
        }
        for c in &self.chain {
            write!(f, ".{c}")?;
        }
        Ok(())
    }
}

impl FromStr for FieldPath {
    type Err = DepGenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DepGenError::BadPath(s.to_string());
        let (type_name, rest) = s.split_once('@').ok_or_else(bad)?;
        let mut parts = rest.split('.');
        let slot = match parts.next().ok_or_else(bad)? {
            "return" => Slot::Return,
            idx => Slot::Arg(idx.parse().map_err(|_| bad())?),
        };
        let chain: Chain = parts.map(str::to_string).collect();
        if type_name.is_empty() || chain.iter().any(String::is_empty) {
            return Err(bad());
        }
        Ok(FieldPath {
            slot,
            type_name: type_name.to_string(),
            chain,
        })
    }
}

impl Serialize for FieldPath {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FieldPath {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `out` may change when `inp` changes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub out: FieldPath,
    #[serde(rename = "in")]
    pub inp: FieldPath,
}

impl Edge {
    pub fn new(out: FieldPath, inp: FieldPath) -> Self {
        Edge { out, inp }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} <- {}", self.out, self.inp)
    }
}

/// Functions whose relation is not derived from operation units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marker {
    /// Static with no arguments: treated as generating fresh taint.
    TaintGen,
    /// Static, primitive-only arguments, void: nothing can flow.
    EmptyStub,
    /// Every operation unit failed.
    Unknown,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitStats {
    pub completed: u32,
    pub faulted: u32,
    pub skipped: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DependencyRelation {
    pub function: String,
    pub marker: Option<Marker>,
    /// Edge → number of operation units that observed it.
    pub edges: BTreeMap<Edge, u32>,
    pub stats: UnitStats,
}

impl DependencyRelation {
    pub fn new(function: impl Into<String>) -> Self {
        DependencyRelation {
            function: function.into(),
            ..Default::default()
        }
    }

    pub fn with_marker(function: impl Into<String>, marker: Marker) -> Self {
        DependencyRelation {
            marker: Some(marker),
            ..DependencyRelation::new(function)
        }
    }

    pub fn edge_set(&self) -> BTreeSet<Edge> {
        self.edges.keys().cloned().collect()
    }

    pub fn insert(&mut self, edge: Edge) {
        *self.edges.entry(edge).or_insert(0) += 1;
    }

    /// Stable text rendering, one edge per line.
    pub fn to_text(&self) -> String {
        let mut out = self.function.clone();
        match self.marker {
            Some(Marker::TaintGen) => out.push_str(" [taint_gen: source-like, fresh taint on outputs]"),
            Some(Marker::EmptyStub) => out.push_str(" [empty_stub]"),
            Some(Marker::Unknown) => out.push_str(" [unknown: all operation units failed]"),
            None => {}
        }
        out.push('\n');
        for (e, w) in &self.edges {
            out.push_str(&format!("  {e} (w={w})\n"));
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct EdgeDoc {
    out: FieldPath,
    #[serde(rename = "in")]
    inp: FieldPath,
    witnesses: u32,
}

#[derive(Serialize, Deserialize)]
struct RelationDoc {
    function: String,
    marker: Option<Marker>,
    edges: Vec<EdgeDoc>,
    #[serde(default)]
    units: UnitStats,
}

impl Serialize for DependencyRelation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RelationDoc {
            function: self.function.clone(),
            marker: self.marker,
            edges: self
                .edges
                .iter()
                .map(|(e, w)| EdgeDoc {
                    out: e.out.clone(),
                    inp: e.inp.clone(),
                    witnesses: *w,
                })
                .collect(),
            units: self.stats,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DependencyRelation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let doc = RelationDoc::deserialize(d)?;
        Ok(DependencyRelation {
            function: doc.function,
            marker: doc.marker,
            edges: doc
                .edges
                .into_iter()
                .map(|e| (Edge::new(e.out, e.inp), e.witnesses))
                .collect(),
            stats: doc.units,
        })
    }
}

/// JSON rendering of a relation (same shape as one entry of `deps.json`).
pub fn relation_to_report(d: &DependencyRelation) -> (String, serde_json::Value) {
    (
        d.to_text(),
        serde_json::to_value(d).expect("relation serialization is infallible"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Isolation {
    /// Fresh callee state for every operation unit.
    Unit,
    /// One callee state for the whole run.
    Session,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepGenConfig {
    /// Operation units per argument slot (and per concrete subtype).
    pub bound: usize,
    /// Maximum field-chain length recorded in edges.
    pub depth: usize,
    pub gen: GenConfig,
    pub seed: u64,
    pub isolate: Isolation,
    #[serde(with = "millis")]
    pub budget: Duration,
    /// Extra attempts, each with a fresh seed, for a faulted unit.
    pub max_retries: usize,
}

impl Default for DepGenConfig {
    fn default() -> Self {
        DepGenConfig {
            bound: 15,
            depth: 5,
            gen: GenConfig::default(),
            seed: 0,
            isolate: Isolation::Unit,
            budget: DEFAULT_BUDGET,
            max_retries: 3,
        }
    }
}

impl DepGenConfig {
    pub fn validate(&self) -> Result<(), DepGenError> {
        if self.bound == 0 {
            return Err(DepGenError::Config("bound must be at least 1".into()));
        }
        self.gen.validate().map_err(DepGenError::Config)
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Outcome of one operation unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UnitOutcome {
    Edges(BTreeSet<Edge>),
    /// One of the two calls faulted or timed out.
    Faulted(String),
    /// The mutated slot held nothing mutable (empty array, field-less record).
    Skipped,
}

fn concrete_name(declared: &TypeDesc, v: &Value) -> String {
    match v {
        Value::Rec { type_name, .. } => type_name.clone(),
        _ => declared.display_name(),
    }
}

fn truncate(mut chain: Chain, depth: usize) -> Chain {
    chain.truncate(depth);
    chain
}

/// Runs one operation unit that mutates `mutated_slot`. `concrete` replaces
/// the declared type of that slot (used to pin abstract slots to one
/// subtype).
pub fn run_unit(
    h: &mut ExecutorHandle,
    sig: &FunctionSig,
    mutated_slot: usize,
    concrete: Option<&TypeDesc>,
    rng: &mut Rng,
    cfg: &DepGenConfig,
) -> Result<UnitOutcome, DepGenError> {
    let slots = sig.slot_types();
    if mutated_slot >= slots.len() {
        return Err(DepGenError::Config(format!(
            "slot {mutated_slot} out of range for `{}`",
            sig.name
        )));
    }
    let reg = h.types().clone();
    let mut args = Vec::with_capacity(slots.len());
    for (k, t) in slots.iter().enumerate() {
        let t = if k == mutated_slot { concrete.unwrap_or(t) } else { t };
        args.push(construct_random(&reg, t, rng, &cfg.gen)?);
    }
    let mutation = match mutate(&reg, &slots[mutated_slot], &args[mutated_slot], rng, &cfg.gen) {
        Ok(m) => m,
        Err(TypeError::EmptyAggregate { .. }) => return Ok(UnitOutcome::Skipped),
        Err(e) => return Err(e.into()),
    };
    // Primitive and immutable slots are shared by value; everything else is
    // a deep copy, which the serialized call boundary already guarantees.
    let mut xi_args = args.clone();
    xi_args[mutated_slot] = mutation.value;

    if cfg.isolate == Isolation::Unit {
        h.reset()?;
    }
    let first = h.invoke(sig, &args, cfg.budget)?;
    if !first.is_ok() {
        return Ok(UnitOutcome::Faulted(first.log));
    }
    let second = h.invoke(sig, &xi_args, cfg.budget)?;
    if !second.is_ok() {
        return Ok(UnitOutcome::Faulted(second.log));
    }

    let inp = FieldPath {
        slot: Slot::Arg(mutated_slot),
        type_name: concrete_name(&slots[mutated_slot], &args[mutated_slot]),
        chain: truncate(mutation.chain, cfg.depth),
    };
    let mut edges = BTreeSet::new();
    for (k, t) in slots.iter().enumerate() {
        if k == mutated_slot || t.is_primitive() {
            continue;
        }
        let (a, b) = (&first.args_post[k], &second.args_post[k]);
        for chain in diff_paths(&reg, t, a, b, cfg.depth)? {
            edges.insert(Edge::new(
                FieldPath {
                    slot: Slot::Arg(k),
                    type_name: concrete_name(t, a),
                    chain,
                },
                inp.clone(),
            ));
        }
    }
    if let Some(rt) = &sig.returns {
        let (a, b) = (
            first.ret.clone().unwrap_or(Value::Null),
            second.ret.clone().unwrap_or(Value::Null),
        );
        for chain in diff_paths(&reg, rt, &a, &b, cfg.depth)? {
            edges.insert(Edge::new(
                FieldPath {
                    slot: Slot::Return,
                    type_name: concrete_name(rt, &a),
                    chain,
                },
                inp.clone(),
            ));
        }
    }
    Ok(UnitOutcome::Edges(edges))
}

/// The special forms that get no operation units.
pub fn special_marker(sig: &FunctionSig) -> Option<Marker> {
    if !sig.is_static {
        return None;
    }
    if sig.params.is_empty() {
        return Some(Marker::TaintGen);
    }
    if sig.returns.is_none() && sig.params.iter().all(TypeDesc::is_primitive) {
        return Some(Marker::EmptyStub);
    }
    None
}

/// Computes the dependency relation of `sig` by differential execution.
pub fn generate(
    h: &mut ExecutorHandle,
    sig: &FunctionSig,
    cfg: &DepGenConfig,
) -> Result<DependencyRelation, DepGenError> {
    cfg.validate()?;
    if let Some(marker) = special_marker(sig) {
        return Ok(DependencyRelation::with_marker(&sig.name, marker));
    }
    let mut rel = DependencyRelation::new(&sig.name);
    let reg = h.types().clone();
    for (slot, declared) in sig.slot_types().iter().enumerate() {
        let concretes = resolve_concrete(declared, &reg)?;
        let pin = matches!(declared, TypeDesc::Abstract(_));
        for (ci, concrete) in concretes.iter().enumerate() {
            for iteration in 0..cfg.bound {
                for attempt in 0..=cfg.max_retries {
                    let mut rng = Rng::derive(cfg.seed, &[slot as u64, ci as u64, iteration as u64, attempt as u64]);
                    let outcome = run_unit(h, sig, slot, pin.then_some(concrete), &mut rng, cfg)?;
                    match outcome {
                        UnitOutcome::Edges(edges) => {
                            rel.stats.completed += 1;
                            edges.into_iter().for_each(|e| rel.insert(e));
                            break;
                        }
                        UnitOutcome::Skipped => {
                            rel.stats.skipped += 1;
                            break;
                        }
                        UnitOutcome::Faulted(msg) => {
                            rel.stats.faulted += 1;
                            log::debug!("{}: unit discarded ({msg})", sig.name);
                        }
                    }
                }
            }
        }
    }
    if rel.stats.completed == 0 && rel.stats.faulted > 0 {
        warn!("{}: every operation unit failed; relation unknown", sig.name);
        rel.marker = Some(Marker::Unknown);
    }
    Ok(rel)
}
