//! A protocol-conformant stand-in for the CP runner.
//!
//! It does not solve anything. It reads directives embedded as comments in
//! the model source and answers accordingly, which makes control flow in the
//! pipeline scriptable without a CP toolchain:
//!
//! ```text
//! # stub: n=3 -> SAT objective=12 solution={"x":[1,2,3]}
//! # stub: * -> UNSAT
//! # stub: * -> RAISE NameError: name 'foo' is not defined
//! # stub: * -> SLEEP 30
//! ```
//!
//! The first directive whose selector matches the request data wins. `*`
//! matches anything; `key=value` compares `data[key]` to `value` (parsed as
//! JSON when possible, otherwise taken as a string). Source with no matching
//! directive behaves like a program that fails at runtime.

use std::time::{Duration, Instant};

use serde_json::{Number, Value};

use crate::harness::{Runner, RunnerRequest, RunnerUnavailable, Status, Verdict};

const PREFIX: &str = "# stub:";

#[derive(Debug, Clone, PartialEq)]
enum Selector {
    Any,
    Field(String, Value),
}

#[derive(Debug, Clone, PartialEq)]
enum Action {
    Sat {
        objective: Option<Number>,
        solution: Value,
    },
    Unsat,
    Raise(String),
    Sleep(f64),
    /// Emit an unreadable response (binary) / a protocol error (in-process).
    Garble,
    /// Exit with this code and no response (binary only).
    Exit(i32),
}

/// What the stub decided for a request.
#[derive(Debug, Clone, PartialEq)]
pub enum StubOutcome {
    Respond(Verdict),
    Garble,
    Exit(i32),
}

fn parse_value(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()))
}

fn parse_selector(text: &str) -> Option<Selector> {
    let text = text.trim();
    if text == "*" {
        return Some(Selector::Any);
    }
    let (k, v) = text.split_once('=')?;
    Some(Selector::Field(k.trim().to_string(), parse_value(v.trim())))
}

fn parse_action(text: &str) -> Option<Action> {
    let text = text.trim();
    let (word, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
    let rest = rest.trim();
    Some(match word {
        "SAT" => {
            let mut objective = None;
            let mut solution = Value::Object(Default::default());
            let mut rest = rest;
            while !rest.is_empty() {
                if let Some(r) = rest.strip_prefix("objective=") {
                    let (num, tail) = r.split_once(char::is_whitespace).unwrap_or((r, ""));
                    objective = serde_json::from_str::<Number>(num).ok();
                    rest = tail.trim_start();
                } else {
                    solution = serde_json::from_str(rest.strip_prefix("solution=")?).ok()?;
                    rest = "";
                }
            }
            Action::Sat { objective, solution }
        }
        "UNSAT" => Action::Unsat,
        "RAISE" => Action::Raise(if rest.is_empty() {
            "Exception".into()
        } else {
            rest.into()
        }),
        "SLEEP" => Action::Sleep(rest.parse().ok()?),
        "GARBLE" => Action::Garble,
        "EXIT" => Action::Exit(rest.parse().ok()?),
        _ => return None,
    })
}

fn directives(code: &str) -> Vec<(Selector, Action)> {
    code.lines()
        .filter_map(|line| line.trim().strip_prefix(PREFIX))
        .filter_map(|d| {
            let (sel, act) = d.split_once("->")?;
            Some((parse_selector(sel)?, parse_action(act)?))
        })
        .collect()
}

fn selects(sel: &Selector, data: &Value) -> bool {
    match sel {
        Selector::Any => true,
        Selector::Field(k, v) => data.get(k) == Some(v),
    }
}

/// Executes a request against the stub semantics.
pub fn execute(request: &RunnerRequest) -> StubOutcome {
    let started = Instant::now();
    let elapsed_ms = || started.elapsed().as_secs_f64() * 1e3;
    let verdict = |status, solution, objective, log: String, wall_ms| {
        StubOutcome::Respond(Verdict {
            status,
            solution,
            objective,
            solver_log: log,
            wall_ms,
        })
    };

    let action = directives(&request.code)
        .into_iter()
        .find(|(sel, _)| selects(sel, &request.data))
        .map(|(_, a)| a);
    match action {
        None => verdict(
            Status::RuntimeError,
            None,
            None,
            "Traceback (most recent call last):\n  File \"model.py\", line 1\nRuntimeError: model produced no result for this instance".into(),
            elapsed_ms(),
        ),
        Some(Action::Sat { objective, solution }) => verdict(
            Status::Sat,
            Some(solution),
            objective,
            "stub runner: solution found".into(),
            elapsed_ms(),
        ),
        Some(Action::Unsat) => verdict(Status::Unsat, None, None, "stub runner: unsatisfiable".into(), elapsed_ms()),
        Some(Action::Raise(msg)) => verdict(
            Status::RuntimeError,
            None,
            None,
            format!("Traceback (most recent call last):\n  File \"model.py\", line 1, in <module>\n{msg}"),
            elapsed_ms(),
        ),
        Some(Action::Sleep(secs)) => {
            let limit = request.time_limit_s.max(0.0);
            std::thread::sleep(Duration::from_secs_f64(secs.min(limit).max(0.0)));
            if secs >= limit {
                let wall = elapsed_ms().max(limit * 1e3);
                verdict(Status::Timeout, None, None, format!("time limit of {limit} s reached"), wall)
            } else {
                verdict(
                    Status::Sat,
                    Some(Value::Object(Default::default())),
                    None,
                    "stub runner: solution found after sleeping".into(),
                    elapsed_ms(),
                )
            }
        }
        Some(Action::Garble) => StubOutcome::Garble,
        Some(Action::Exit(code)) => StubOutcome::Exit(code),
    }
}

/// In-process runner with the stub semantics.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubRunner;

impl Runner for StubRunner {
    fn run(&self, request: &RunnerRequest) -> Result<Verdict, RunnerUnavailable> {
        Ok(match execute(request) {
            StubOutcome::Respond(v) => v,
            StubOutcome::Garble => Verdict::protocol_error("unreadable runner response", 0.0),
            StubOutcome::Exit(code) => Verdict::protocol_error(format!("runner exited with {code}"), 0.0),
        })
    }
}
