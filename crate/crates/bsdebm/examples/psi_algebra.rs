//! The jump-covariance matrix psi of a chain state: symmetry, positive
//! semidefiniteness, the constant-vector kernel, and the pseudoinverse used
//! to turn jump-coefficient vectors into canonical representatives.
//!
//! Run with: cargo run --release --example psi_algebra

use nalgebra::{DMatrix, DVector};

use bsdebm::chain::RateMatrix;

fn main() {
    // A 3-state chain with asymmetric rates (column convention).
    let entries = DMatrix::from_row_slice(
        3,
        3,
        &[
            -1.5, 0.5, 1.0, //
            0.5, -1.2, 0.8, //
            1.0, 0.7, -1.8,
        ],
    );
    let a = RateMatrix::new(entries, 0.3).unwrap();

    for state in 0..3 {
        let psi = a.psi(state);
        let m = psi.matrix();
        println!("state {state}: psi =");
        println!("{m:.4}");
        let eigs = psi.eigenvalues();
        println!(
            "  eigenvalues: [{}]",
            eigs.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>().join(", ")
        );
        let ones = DVector::from_element(3, 1.0);
        println!("  |psi * 1|_inf = {:.2e}  (constants are in the kernel)", (m * &ones).amax());
        println!(
            "  asymmetry     = {:.2e}",
            (m - m.transpose()).amax()
        );

        // The pseudoinverse inverts psi on its range and annihilates the
        // kernel; the seminorm it induces ignores constant shifts.
        let p = psi.pinv();
        println!(
            "  |psi psi+ psi - psi|_inf = {:.2e}",
            (m * &p * m - m).amax()
        );
        let z = DVector::from_vec(vec![1.0, -1.0, 0.5]);
        let shifted = &z + DVector::from_element(3, 10.0);
        println!(
            "  seminorm(z) = {:.4}, seminorm(z + 10) = {:.4}  (shift-invariant)",
            psi.seminorm(&z).unwrap(),
            psi.seminorm(&shifted).unwrap()
        );
    }
}
