//! Run the invariant checks, then again with density weights of the wrong sign.

use adrbc::verify::{render_report, run_checks, Mutation};

fn main() {
    print!("{}", render_report(&run_checks(Mutation::None)));
    println!("\nwith flipped weight sign:");
    print!("{}", render_report(&run_checks(Mutation::FlipWeightSign)));
}
