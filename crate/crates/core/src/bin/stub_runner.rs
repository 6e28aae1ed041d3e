//! Subprocess runner with the stub semantics: one request on stdin, one
//! verdict on stdout.

use std::io::{Read, Write};

use profilecp::harness::RunnerRequest;
use profilecp::stub::{execute, StubOutcome};

fn main() {
    let mut input = String::new();
    if let Err(e) = std::io::stdin().read_to_string(&mut input) {
        eprintln!("stub runner: {e}");
        std::process::exit(2);
    }
    let request: RunnerRequest = match serde_json::from_str(&input) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("stub runner: bad request: {e}");
            std::process::exit(2);
        }
    };
    let mut out = std::io::stdout().lock();
    match execute(&request) {
        StubOutcome::Respond(v) => {
            let _ = writeln!(out, "{}", serde_json::to_string(&v).expect("verdict serializes"));
        }
        StubOutcome::Garble => {
            let _ = writeln!(out, "this is not json {{");
        }
        StubOutcome::Exit(code) => std::process::exit(code),
    }
}
