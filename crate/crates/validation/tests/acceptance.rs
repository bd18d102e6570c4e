use std::process::ExitCode;
use std::time::Instant;

use amis_validation::{Context, CRITERIA};

fn main() -> ExitCode {
    // Optional substring filter; harness flags such as `--nocapture` are ignored.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with("--")).collect();
    let mut ctx = Context::default();
    let mut failed = 0;
    for c in CRITERIA {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match (c.check)(&mut ctx) {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "{} {}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            c.name,
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
