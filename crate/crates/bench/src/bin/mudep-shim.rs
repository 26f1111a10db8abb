//! Subprocess executor for the reference corpus: reads framed requests on
//! stdin and answers each with a framed response on stdout until EOF.

use std::io::{self, Write};
use std::process::ExitCode;

use mudep_bench::shim;
use mudep_core::codec;

fn main() -> ExitCode {
    let stdin = io::stdin();
    let stdout = io::stdout();
    let (mut input, mut output) = (stdin.lock(), stdout.lock());
    loop {
        let body = match codec::read_frame(&mut input) {
            Ok(Some(body)) => body,
            Ok(None) => return ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("mudep-shim: {e}");
                return ExitCode::FAILURE;
            }
        };
        let response = shim::dispatch_uncontained(&codec::frame(&body));
        if output.write_all(&response).and_then(|_| output.flush()).is_err() {
            return ExitCode::FAILURE;
        }
    }
}
