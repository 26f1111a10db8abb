use std::panic::{self, AssertUnwindSafe};
use std::time::Duration;

use super::protocol::{self, ExecResponse, LIST_FUNCTIONS};
use super::{Transport, TransportError};
use crate::typesys::Value;

/// Outcome of one native call: the return value (if any) or a fault message.
pub type CallResult = Result<Option<Value>, String>;

type Dispatch = Box<dyn FnMut(&str, &mut [Value]) -> CallResult + Send>;

/// Runs Rust closures in the calling thread behind the regular wire format.
///
/// Requests and responses still go through the codec so arguments are deep
/// copies, exactly as with the out-of-process backends. The budget is not
/// enforced and panics are reported as faults.
pub struct LocalTransport {
    names: Vec<String>,
    dispatch: Dispatch,
    reset: Option<Box<dyn FnMut() + Send>>,
}

impl LocalTransport {
    pub fn new<F>(names: impl IntoIterator<Item = impl Into<String>>, dispatch: F) -> Self
    where
        F: FnMut(&str, &mut [Value]) -> CallResult + Send + 'static,
    {
        LocalTransport {
            names: names.into_iter().map(Into::into).collect(),
            dispatch: Box::new(dispatch),
            reset: None,
        }
    }

    /// Hook run on every restart, for dispatchers that keep state.
    pub fn on_reset(mut self, f: impl FnMut() + Send + 'static) -> Self {
        self.reset = Some(Box::new(f));
        self
    }
}

impl Transport for LocalTransport {
    fn exchange(&mut self, request: &[u8], _budget: Duration) -> Result<Vec<u8>, TransportError> {
        let req = protocol::decode_request(request).map_err(|e| TransportError::Fault(e.to_string()))?;
        let resp = if req.function == LIST_FUNCTIONS {
            ExecResponse::function_list(self.names.iter().map(String::as_str))
        } else if !self.names.contains(&req.function) {
            ExecResponse::fault(format!("no such function `{}`", req.function))
        } else {
            let mut args = req.args;
            let dispatch = &mut self.dispatch;
            match panic::catch_unwind(AssertUnwindSafe(|| dispatch(&req.function, &mut args))) {
                Ok(Ok(ret)) => ExecResponse::ok(ret, args),
                Ok(Err(msg)) => ExecResponse::fault(msg),
                Err(_) => ExecResponse::fault("native code panicked"),
            }
        };
        Ok(protocol::encode_response(&resp))
    }

    fn restart(&mut self) -> Result<(), super::ExecError> {
        if let Some(f) = self.reset.as_mut() {
            f();
        }
        Ok(())
    }
}
