//! Solve a radial feeder with the backward-forward sweep.

use gridweave::components::{bfs_powerflow, linear_feeder, Injection, PowerFlowError};

fn main() {
    let feeder = linear_feeder(10, 0.2, 0.1, 400.0);
    for load_w in [0.0, 1_000.0, 2_000.0, 4_000.0] {
        let loads: Vec<Injection> = (1..10).map(|i| Injection::new(format!("b{i}"), load_w, 0.2 * load_w)).collect();
        let sol = bfs_powerflow(&feeder, &loads).expect("feasible");
        let tail = sol.voltages["b9"];
        println!(
            "{load_w:>6} W per bus: {} iterations, end of feeder {:.2} V ({:.4} pu, {:+.3} deg)",
            sol.iterations,
            tail.volts,
            tail.pu,
            tail.angle_rad.to_degrees()
        );
    }

    let short = linear_feeder(2, 0.5, 0.25, 230.0);
    match bfs_powerflow(&short, &[Injection::new("b1", 1e6, 0.0)]) {
        Err(PowerFlowError::Diverged { iterations, .. }) => {
            println!("1 MW on a 230 V line: diverged after {iterations} sweeps")
        }
        other => println!("1 MW on a 230 V line: {other:?}"),
    }
}
