use std::path::Path;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use libloading::Library;

use super::{ExecError, Transport, TransportError};

/// Entry symbol: takes a framed request and returns a framed response
/// allocated by the library, writing its length through `out_len`.
pub const ENTRY_SYMBOL: &str = "mudep_exec";
/// Releases a buffer returned by [`ENTRY_SYMBOL`].
pub const FREE_SYMBOL: &str = "mudep_free";

type ExecFn = unsafe extern "C" fn(*const u8, usize, *mut usize) -> *mut u8;
type FreeFn = unsafe extern "C" fn(*mut u8, usize);

/// Calls into a shared library loaded in this process.
///
/// Each call runs on a helper thread so the budget can be enforced; a call
/// that overruns is abandoned (the thread keeps running), which is only safe
/// for stateless libraries.
pub struct InProcessTransport {
    library: Arc<Library>,
    exec: ExecFn,
    free: FreeFn,
}

impl InProcessTransport {
    pub fn open(path: &Path) -> Result<Self, ExecError> {
        // SAFETY: loading runs the library's initializers; the library is
        // expected to honor the executor ABI.
        let library = unsafe { Library::new(path) }
            .map_err(|e| ExecError::Backend(format!("cannot load {}: {e}", path.display())))?;
        // SAFETY: symbol types follow the documented entry convention.
        let (exec, free) = unsafe {
            let exec = *library
                .get::<ExecFn>(ENTRY_SYMBOL.as_bytes())
                .map_err(|e| ExecError::Backend(format!("missing `{ENTRY_SYMBOL}`: {e}")))?;
            let free = *library
                .get::<FreeFn>(FREE_SYMBOL.as_bytes())
                .map_err(|e| ExecError::Backend(format!("missing `{FREE_SYMBOL}`: {e}")))?;
            (exec, free)
        };
        Ok(InProcessTransport {
            library: Arc::new(library),
            exec,
            free,
        })
    }
}

impl Transport for InProcessTransport {
    fn exchange(&mut self, request: &[u8], budget: Duration) -> Result<Vec<u8>, TransportError> {
        let (tx, rx) = mpsc::channel();
        let library = Arc::clone(&self.library);
        let (exec, free) = (self.exec, self.free);
        let request = request.to_vec();
        thread::spawn(move || {
            let _keep_loaded = library;
            let mut out_len = 0usize;
            // SAFETY: `request` outlives the call, and the returned buffer is
            // copied before being handed back to the library for release.
            let out = unsafe {
                let ptr = exec(request.as_ptr(), request.len(), &mut out_len);
                if ptr.is_null() {
                    None
                } else {
                    let bytes = std::slice::from_raw_parts(ptr, out_len).to_vec();
                    free(ptr, out_len);
                    Some(bytes)
                }
            };
            let _ = tx.send(out);
        });
        match rx.recv_timeout(budget) {
            Ok(Some(bytes)) => Ok(bytes),
            Ok(None) => Err(TransportError::Fault("entry point returned no buffer".into())),
            Err(mpsc::RecvTimeoutError::Timeout) => Err(TransportError::Timeout),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(TransportError::Fault("library call aborted".into())),
        }
    }
}
