//! Drives the plateau schedule and early stopping with a loss curve that
//! improves and then stalls.
//!
//! cargo run --example learning_rate_schedule

use blastoseg::train::{Decision, EarlyStopping, ReduceLrOnPlateau};

fn main() {
    let mut schedule = ReduceLrOnPlateau::new(1e-4, 0.95, 5);
    let mut stopper = EarlyStopping::new(15);
    for epoch in 1..=100 {
        let loss = if epoch <= 10 { 1.0 / epoch as f64 } else { 0.1 + 0.001 * (epoch % 3) as f64 };
        let lr = schedule.lr();
        let next = schedule.step(loss);
        let decision = stopper.step(loss);
        if next != lr || decision == Decision::Stop || epoch <= 2 {
            println!("epoch {epoch:>3}  loss {loss:.4}  lr {lr:.4e} -> {next:.4e}");
        }
        if decision == Decision::Stop {
            println!("stopped after epoch {epoch}; best loss {:.4}", stopper.best().unwrap_or(f64::NAN));
            break;
        }
    }
}
