//! Relative error through a 4-layer toy network quantized to ternary weights.
//!
//! Later layers see inputs already perturbed by earlier quantized layers;
//! Qronos accounts for that mismatch, OPTQ does not.

use qronos::netsim::{run_simulation, SimulationConfig};

fn main() -> qronos::Result<()> {
    let mut config = SimulationConfig::new(4, 64, 3);
    config.seeds = (0..5).collect();
    let report = run_simulation(&config)?;
    println!("{:<8} per-layer mean relative error", "method");
    for s in &report.summary {
        let curve: Vec<String> = s.mean_relative_errors.iter().map(|e| format!("{e:.3}")).collect();
        println!("{:<8} {}", s.method, curve.join("  "));
    }
    Ok(())
}
