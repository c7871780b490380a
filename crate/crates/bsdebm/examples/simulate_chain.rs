//! Simulate a finite-state Markov chain, inspect one trajectory, and check
//! the compensated jump counts against their closed-form expectation.
//!
//! Run with: cargo run --release --example simulate_chain

use bsdebm::chain::{count_jumps, simulate_chain, RateMatrix};
use bsdebm::paths::stream_rng;

fn main() {
    // Transition-rate matrix in column convention: entry (j, i) is the jump
    // rate from state i to state j, so every column sums to zero.
    let a = RateMatrix::two_state_symmetric(1.0, 0.5).unwrap();
    println!("generator ({} states, rate band [c, 1/c] with c = {}):", a.n_states(), a.c());
    println!("{}", a.entries());

    // One trajectory in detail.
    let mut rng = stream_rng(42, 0, 1);
    let path = simulate_chain(&a, 0, 1.0, &mut rng);
    println!("one path over [0, 1], starting in state 0:");
    for (start, end, state) in path.segments() {
        println!("  [{start:.4}, {end:.4})  state {state}");
    }
    println!("  jumps: {}, terminal state: {}", path.n_jumps(), path.terminal_state());
    println!("  occupation of state 0: {:.4}", path.occupation(a.n_states())[0]);

    // The compensator of the 0 -> 1 counting process is rate(0 -> 1) times
    // the occupation of state 0, so counts minus compensators average to
    // zero, and the mean count itself has a closed form for this chain.
    let n_paths = 50_000;
    let (mut count_sum, mut comp_sum) = (0.0, 0.0);
    for i in 0..n_paths {
        let mut rng = stream_rng(42, i, 1);
        let path = simulate_chain(&a, 0, 1.0, &mut rng);
        let jumps = count_jumps(&path, &a);
        count_sum += jumps.counts[(0, 1)] as f64;
        comp_sum += jumps.compensators[(0, 1)];
    }
    let nf = n_paths as f64;
    let expected = 0.5 + (1.0 - (-2.0f64).exp()) / 4.0;
    println!("over {n_paths} paths:");
    println!("  mean N(0->1)            = {:.5}", count_sum / nf);
    println!("  mean compensator        = {:.5}", comp_sum / nf);
    println!("  closed-form expectation = {expected:.5}");
    println!("  mean compensated count  = {:+.5}  (a martingale at T: near zero)",
        (count_sum - comp_sum) / nf);
}
