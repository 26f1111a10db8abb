//! Executor side of the wire protocol for the reference corpus, usable
//! inline, from the `mudep-shim` executable or through the shared-library
//! entry points.

use std::panic::{self, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Duration;

use mudep_core::executor::protocol::{decode_request, encode_response};
use mudep_core::executor::{ExecResponse, Transport, TransportError, LIST_FUNCTIONS};

use crate::corpus::{self, CorpusEntry};

fn table() -> &'static [CorpusEntry] {
    static TABLE: OnceLock<Vec<CorpusEntry>> = OnceLock::new();
    TABLE.get_or_init(corpus::entries)
}

fn respond(request: &[u8], contain_panics: bool) -> ExecResponse {
    let req = match decode_request(request) {
        Ok(r) => r,
        Err(e) => return ExecResponse::fault(format!("malformed request: {e}")),
    };
    if req.function == LIST_FUNCTIONS {
        return ExecResponse::function_list(table().iter().map(CorpusEntry::name));
    }
    let Some(entry) = table().iter().find(|e| e.name() == req.function) else {
        return ExecResponse::fault(format!("no such function `{}`", req.function));
    };
    let mut args = req.args;
    let result = if contain_panics {
        match panic::catch_unwind(AssertUnwindSafe(|| entry.call(&mut args))) {
            Ok(r) => r,
            Err(_) => Err(format!("`{}` crashed", req.function)),
        }
    } else {
        entry.call(&mut args)
    };
    match result {
        Ok(ret) => ExecResponse::ok(ret, args),
        Err(msg) => ExecResponse::fault(msg),
    }
}

/// Handles one framed request. A crashing corpus function becomes a fault
/// response.
pub fn dispatch(request: &[u8]) -> Vec<u8> {
    encode_response(&respond(request, true))
}

/// Like [`dispatch`], but a crashing corpus function takes the process
/// down, as native code would.
pub fn dispatch_uncontained(request: &[u8]) -> Vec<u8> {
    encode_response(&respond(request, false))
}

/// Runs the corpus in the calling thread. The budget is ignored, so the
/// hanging entry must not be called through it.
#[derive(Debug, Default)]
pub struct ShimTransport;

impl Transport for ShimTransport {
    fn exchange(&mut self, request: &[u8], _budget: Duration) -> Result<Vec<u8>, TransportError> {
        Ok(dispatch(request))
    }
}

/// # Safety
///
/// `input` must point to `len` readable bytes and `out_len` must be
/// writable. The returned buffer must be released with [`mudep_free`].
#[no_mangle]
pub unsafe extern "C" fn mudep_exec(input: *const u8, len: usize, out_len: *mut usize) -> *mut u8 {
    let request = if input.is_null() {
        &[][..]
    } else {
        // SAFETY: guaranteed by the caller.
        unsafe { std::slice::from_raw_parts(input, len) }
    };
    let response = dispatch(request).into_boxed_slice();
    // SAFETY: guaranteed by the caller.
    unsafe { *out_len = response.len() };
    Box::into_raw(response) as *mut u8
}

/// # Safety
///
/// `ptr` and `len` must come from one earlier [`mudep_exec`] call and be
/// released only once.
#[no_mangle]
pub unsafe extern "C" fn mudep_free(ptr: *mut u8, len: usize) {
    if !ptr.is_null() {
        // SAFETY: the buffer was produced by `Box::into_raw` on a boxed
        // slice of exactly `len` bytes.
        drop(unsafe { Box::from_raw(std::ptr::slice_from_raw_parts_mut(ptr, len)) });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mudep_core::codec;
    use mudep_core::executor::protocol::{decode_response, encode_request};
    use mudep_core::executor::{ExecRequest, ExecStatus};
    use mudep_core::typesys::Value;

    fn call(function: &str, args: Vec<Value>) -> ExecResponse {
        let req = encode_request(&ExecRequest {
            function: function.into(),
            args,
        });
        decode_response(&dispatch(&req)).unwrap()
    }

    #[test]
    fn lists_every_entry() {
        let r = call(LIST_FUNCTIONS, vec![]);
        let Some(Value::Arr { elems, .. }) = r.ret else {
            panic!("no list")
        };
        assert_eq!(elems.len(), corpus::entries().len());
    }

    #[test]
    fn unknown_malformed_and_crashing_calls_fault() {
        assert_eq!(call("nope", vec![]).status, ExecStatus::Fault);
        let r = decode_response(&dispatch(&codec::frame(b"{not json"))).unwrap();
        assert!(r.log.contains("malformed"), "{}", r.log);
        let r = decode_response(&dispatch(&[1, 2])).unwrap();
        assert_eq!(r.status, ExecStatus::Fault);
        let d = Value::record("Data", vec![("s", Value::str("x"))]);
        assert_eq!(call("nfb.Misc.crash", vec![d]).status, ExecStatus::Fault);
    }

    #[test]
    fn exported_entry_round_trips() {
        let req = encode_request(&ExecRequest {
            function: "nfb.Misc.sum".into(),
            args: vec![Value::Int32(2), Value::Int32(40)],
        });
        let mut n = 0usize;
        // SAFETY: valid buffers, released once.
        let bytes = unsafe {
            let p = mudep_exec(req.as_ptr(), req.len(), &mut n);
            let v = std::slice::from_raw_parts(p, n).to_vec();
            mudep_free(p, n);
            v
        };
        let r = decode_response(&bytes).unwrap();
        assert_eq!(r.ret, Some(Value::Int32(42)));
    }
}
