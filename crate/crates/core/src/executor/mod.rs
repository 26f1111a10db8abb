//! Invocation boundary to opaque functions.
//!
//! An [`ExecutorHandle`] owns one transport and runs calls strictly one after
//! another; parallelism means more handles, never concurrent calls on one.

mod inprocess;
mod local;
pub mod protocol;
mod subprocess;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::codec::CodecError;
use crate::typesys::{conforms, TypeDesc, TypeError, TypeRegistry, Value};

pub use inprocess::{InProcessTransport, ENTRY_SYMBOL, FREE_SYMBOL};
pub use local::{CallResult, LocalTransport};
pub use protocol::{ExecRequest, ExecResponse, ExecStatus, LIST_FUNCTIONS};
pub use subprocess::SubprocessTransport;

pub const DEFAULT_BUDGET: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("functions not provided by the backend: {}", .0.join(", "))]
    Load(Vec<String>),
    #[error("backend unavailable: {0}")]
    Backend(String),
    #[error("function `{0}` is not in the manifest")]
    UnknownFunction(String),
    #[error("arguments do not match `{function}`: {detail}")]
    BadArgs { function: String, detail: String },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Signature of an opaque function. Argument slot 0 is the receiver for
/// instance methods; parameters follow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionSig {
    pub name: String,
    #[serde(rename = "static")]
    pub is_static: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub receiver: Option<String>,
    pub params: Vec<TypeDesc>,
    #[serde(default)]
    pub returns: Option<TypeDesc>,
}

impl FunctionSig {
    pub fn new_static(name: impl Into<String>, params: Vec<TypeDesc>, returns: Option<TypeDesc>) -> Self {
        FunctionSig {
            name: name.into(),
            is_static: true,
            receiver: None,
            params,
            returns,
        }
    }

    pub fn new_instance(
        name: impl Into<String>,
        receiver: impl Into<String>,
        params: Vec<TypeDesc>,
        returns: Option<TypeDesc>,
    ) -> Self {
        FunctionSig {
            name: name.into(),
            is_static: false,
            receiver: Some(receiver.into()),
            params,
            returns,
        }
    }

    /// Types of all argument slots, receiver first.
    pub fn slot_types(&self) -> Vec<TypeDesc> {
        let mut out = Vec::with_capacity(self.params.len() + 1);
        if let Some(r) = &self.receiver {
            out.push(TypeDesc::Record(r.clone()));
        }
        out.extend(self.params.iter().cloned());
        out
    }

    pub fn slot_count(&self) -> usize {
        self.params.len() + usize::from(self.receiver.is_some())
    }

    pub fn validate(&self, reg: &TypeRegistry) -> Result<(), ExecError> {
        if !self.is_static && self.receiver.is_none() {
            return Err(ExecError::Manifest(format!(
                "instance function `{}` has no receiver type",
                self.name
            )));
        }
        for t in self.slot_types().iter().chain(self.returns.iter()) {
            reg.check_type(t)?;
        }
        Ok(())
    }
}

/// Function signatures plus the types they mention.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub types: TypeRegistry,
    pub functions: Vec<FunctionSig>,
}

impl Manifest {
    /// Accepts either `{"types": ..., "functions": [...]}` or a bare list of
    /// signatures (when no record types are involved).
    pub fn from_json(j: &Json) -> Result<Manifest, ExecError> {
        let m = if j.is_array() {
            Manifest {
                types: TypeRegistry::new(),
                functions: serde_json::from_value(j.clone()).map_err(CodecError::from)?,
            }
        } else {
            serde_json::from_value(j.clone()).map_err(CodecError::from)?
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        self.types.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for f in &self.functions {
            if !seen.insert(f.name.as_str()) {
                return Err(ExecError::Manifest(format!("duplicate function `{}`", f.name)));
            }
            f.validate(&self.types)?;
        }
        Ok(())
    }

    pub fn function(&self, name: &str) -> Option<&FunctionSig> {
        self.functions.iter().find(|f| f.name == name)
    }
}

/// Failure of the byte-level exchange itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// The callee did not answer within the budget.
    Timeout,
    /// The callee died or broke the stream.
    Fault(String),
}

/// Moves framed request bytes to a callee and framed response bytes back.
pub trait Transport: Send {
    fn exchange(&mut self, request: &[u8], budget: Duration) -> Result<Vec<u8>, TransportError>;

    /// Discards callee state (fresh process, where the transport can).
    fn restart(&mut self) -> Result<(), ExecError> {
        Ok(())
    }
}

/// Where opaque functions live.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExecutorBackend {
    /// Shared library exporting `mudep_exec` / `mudep_free`.
    InProcess { library: PathBuf },
    /// Executable speaking the framed protocol on stdin/stdout.
    Subprocess {
        command: Vec<String>,
        /// Start a fresh process for every call instead of one per session.
        #[serde(default)]
        per_call: bool,
    },
}

/// Loads `backend` and checks that it provides every manifest function.
pub fn load(backend: &ExecutorBackend, manifest: &Manifest) -> Result<ExecutorHandle, ExecError> {
    let transport: Box<dyn Transport> = match backend {
        ExecutorBackend::InProcess { library } => Box::new(InProcessTransport::open(library)?),
        ExecutorBackend::Subprocess { command, per_call } => {
            Box::new(SubprocessTransport::new(command.clone(), *per_call)?)
        }
    };
    ExecutorHandle::new(transport, manifest)
}

pub struct ExecutorHandle {
    transport: Box<dyn Transport>,
    types: TypeRegistry,
    functions: BTreeMap<String, FunctionSig>,
}

impl std::fmt::Debug for ExecutorHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExecutorHandle")
            .field("functions", &self.functions.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl ExecutorHandle {
    /// Wraps an arbitrary transport. Missing functions are reported eagerly.
    pub fn new(mut transport: Box<dyn Transport>, manifest: &Manifest) -> Result<Self, ExecError> {
        manifest.validate()?;
        let provided = list_functions(transport.as_mut())?;
        let missing: Vec<String> = manifest
            .functions
            .iter()
            .filter(|f| !provided.iter().any(|p| p == &f.name))
            .map(|f| f.name.clone())
            .collect();
        if !missing.is_empty() {
            return Err(ExecError::Load(missing));
        }
        Ok(ExecutorHandle {
            transport,
            types: manifest.types.clone(),
            functions: manifest.functions.iter().map(|f| (f.name.clone(), f.clone())).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn function(&self, name: &str) -> Option<&FunctionSig> {
        self.functions.get(name)
    }

    pub fn types(&self) -> &TypeRegistry {
        &self.types
    }

    pub fn reset(&mut self) -> Result<(), ExecError> {
        self.transport.restart()
    }

    /// Runs one call. Faults and timeouts come back as responses with the
    /// corresponding status; `Err` is reserved for caller mistakes.
    pub fn invoke(&mut self, sig: &FunctionSig, args: &[Value], budget: Duration) -> Result<ExecResponse, ExecError> {
        let known = self
            .functions
            .get(&sig.name)
            .ok_or_else(|| ExecError::UnknownFunction(sig.name.clone()))?;
        let slots = known.slot_types();
        if slots.len() != args.len() {
            return Err(ExecError::BadArgs {
                function: sig.name.clone(),
                detail: format!("expected {} arguments, got {}", slots.len(), args.len()),
            });
        }
        for (t, v) in slots.iter().zip(args) {
            conforms(&self.types, t, v).map_err(|e| ExecError::BadArgs {
                function: sig.name.clone(),
                detail: e.to_string(),
            })?;
        }
        let request = protocol::encode_request(&ExecRequest {
            function: sig.name.clone(),
            args: args.to_vec(),
        });
        let raw = match self.transport.exchange(&request, budget) {
            Ok(raw) => raw,
            Err(TransportError::Timeout) => return Ok(ExecResponse::timeout(format!("exceeded {budget:?}"))),
            Err(TransportError::Fault(msg)) => return Ok(ExecResponse::fault(msg)),
        };
        let resp = match protocol::decode_response(&raw) {
            Ok(r) => r,
            Err(e) => return Ok(ExecResponse::fault(format!("undecodable response: {e}"))),
        };
        if !resp.is_ok() {
            return Ok(resp);
        }
        Ok(match self.check_response(known, args, &resp) {
            Ok(()) => resp,
            Err(detail) => ExecResponse::fault(format!("non-conforming response: {detail}")),
        })
    }

    fn check_response(&self, sig: &FunctionSig, args: &[Value], resp: &ExecResponse) -> Result<(), String> {
        match (&sig.returns, &resp.ret) {
            (None, None) | (None, Some(Value::Null)) => {}
            (Some(t), Some(v)) => conforms(&self.types, t, v).map_err(|e| e.to_string())?,
            (Some(_), None) => return Err("missing return value".into()),
            (None, Some(_)) => return Err("void function returned a value".into()),
        }
        if resp.args_post.len() != args.len() {
            return Err(format!(
                "{} post-call arguments for {} slots",
                resp.args_post.len(),
                args.len()
            ));
        }
        for ((t, before), after) in sig.slot_types().iter().zip(args).zip(&resp.args_post) {
            conforms(&self.types, t, after).map_err(|e| e.to_string())?;
            if t.is_primitive() && before != after {
                return Err("primitive argument changed across the call".into());
            }
        }
        Ok(())
    }
}

fn list_functions(transport: &mut dyn Transport) -> Result<Vec<String>, ExecError> {
    let request = protocol::encode_request(&ExecRequest {
        function: LIST_FUNCTIONS.to_string(),
        args: Vec::new(),
    });
    let raw = transport
        .exchange(&request, DEFAULT_BUDGET)
        .map_err(|e| ExecError::Backend(format!("function listing failed: {e:?}")))?;
    let resp = protocol::decode_response(&raw)?;
    match resp.ret {
        Some(Value::Arr { elems, .. }) if resp.is_ok() => elems
            .into_iter()
            .map(|v| match v {
                Value::Str(s) => Ok(s),
                other => Err(ExecError::Backend(format!(
                    "function listing contains {}",
                    other.kind_name()
                ))),
            })
            .collect(),
        _ => Err(ExecError::Backend(format!("function listing rejected: {}", resp.log))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::typesys::PrimKind;

    /// Transport answering from a closure, for exercising handle logic.
    struct Scripted<F>(F);

    impl<F> Transport for Scripted<F>
    where
        F: FnMut(ExecRequest) -> ExecResponse + Send,
    {
        fn exchange(&mut self, request: &[u8], _budget: Duration) -> Result<Vec<u8>, TransportError> {
            let req = protocol::decode_request(request).map_err(|e| TransportError::Fault(e.to_string()))?;
            Ok(protocol::encode_response(&(self.0)(req)))
        }
    }

    fn int() -> TypeDesc {
        TypeDesc::Prim(PrimKind::Int32)
    }

    fn identity_transport() -> Box<dyn Transport> {
        Box::new(Scripted(|req: ExecRequest| {
            if req.function == LIST_FUNCTIONS {
                return ExecResponse::function_list(["id", "clobber"]);
            }
            let ret = req.args.first().cloned();
            let mut post = req.args.clone();
            if req.function == "clobber" {
                post[0] = Value::Int32(99);
            }
            ExecResponse::ok(ret, post)
        }))
    }

    fn manifest(names: &[&str]) -> Manifest {
        Manifest {
            types: TypeRegistry::new(),
            functions: names
                .iter()
                .map(|n| FunctionSig::new_static(*n, vec![int()], Some(int())))
                .collect(),
        }
    }

    #[test]
    fn identity_call_echoes_value() {
        let m = manifest(&["id"]);
        let mut h = ExecutorHandle::new(identity_transport(), &m).unwrap();
        let resp = h.invoke(&m.functions[0], &[Value::Int32(5)], DEFAULT_BUDGET).unwrap();
        assert!(resp.is_ok());
        assert_eq!(resp.ret, Some(Value::Int32(5)));
    }

    #[test]
    fn missing_function_is_a_load_error() {
        let m = manifest(&["id", "absent"]);
        match ExecutorHandle::new(identity_transport(), &m) {
            Err(ExecError::Load(missing)) => assert_eq!(missing, vec!["absent".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_manifest_loads_with_no_entries() {
        let h = ExecutorHandle::new(identity_transport(), &Manifest::default()).unwrap();
        assert!(h.is_empty());
    }

    #[test]
    fn modified_primitive_argument_is_a_fault() {
        let m = manifest(&["clobber"]);
        let mut h = ExecutorHandle::new(identity_transport(), &m).unwrap();
        let resp = h.invoke(&m.functions[0], &[Value::Int32(1)], DEFAULT_BUDGET).unwrap();
        assert_eq!(resp.status, ExecStatus::Fault);
    }

    #[test]
    fn wrong_argument_shape_is_rejected_before_the_call() {
        let m = manifest(&["id"]);
        let mut h = ExecutorHandle::new(identity_transport(), &m).unwrap();
        let err = h.invoke(&m.functions[0], &[Value::str("x")], DEFAULT_BUDGET);
        assert!(matches!(err, Err(ExecError::BadArgs { .. })));
    }

    #[test]
    fn manifest_accepts_bare_list_and_rejects_receiverless_instance() {
        let j = serde_json::json!([
            {"name": "f", "static": true, "params": [{"kind": "int32"}], "returns": {"kind": "int32"}}
        ]);
        let m = Manifest::from_json(&j).unwrap();
        assert_eq!(m.functions[0].slot_count(), 1);
        let bad = serde_json::json!([
            {"name": "g", "static": false, "params": [], "returns": null}
        ]);
        assert!(Manifest::from_json(&bad).is_err());
    }
}
