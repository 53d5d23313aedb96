//! Acceptance suite: the ten checks at full scale, one status line each.
//!
//! Runs outside the libtest harness so the checks execute in order and the
//! output is exactly one line per criterion (details follow failures).
//! `CURVES_ACCEPTANCE_SCALE=quick` selects the reduced smoke-test scale.

use curves_cli::checks::{run_all, Scale};

fn main() {
    let scale = match std::env::var("CURVES_ACCEPTANCE_SCALE").as_deref() {
        Ok("quick") => Scale::Quick,
        _ => Scale::Full,
    };
    println!("acceptance suite ({scale:?} scale)");
    let outcomes = run_all(scale, |o| {
        println!("{}", o.line());
        if !o.passed {
            for d in &o.details {
                println!("       {d}");
            }
        }
    });
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
