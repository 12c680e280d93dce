//! Runs the finite-difference gradient matrix and prints the error table.
//!
//! cargo run --release --example gradient_check -- [seed]

use mghf::gradcheck::{run_gradcheck, GradCheckConfig};

fn main() -> mghf::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed must be an integer"));
    let report = run_gradcheck(&GradCheckConfig { seed, points: 3, ..GradCheckConfig::default() })?;
    print!("{report}");
    println!("{}", if report.all_passed() { "all checks passed" } else { "some checks FAILED" });
    Ok(())
}
