//! DPO loss and its gradient for a handful of log-probability settings.
//!
//! ```bash
//! cargo run -p clarify-core --example dpo_loss
//! ```

use clarify_core::prefs::dpo_loss;

fn main() {
    let beta = 0.1;
    // (theta preferred, ref preferred, theta rejected, ref rejected)
    let cases = [
        ("no margin", -3.0, -3.0, -5.0, -5.0),
        ("policy favors preferred", -1.0, -2.0, -3.0, -2.0),
        ("policy favors rejected", -4.0, -2.0, -1.0, -2.0),
        ("large margin", -1.0, -30.0, -30.0, -1.0),
    ];
    println!("{:<26} {:>10}  gradient", "case", "loss");
    for (name, tp, rp, tr, rr) in cases {
        let out = dpo_loss(tp, rp, tr, rr, beta).expect("finite inputs");
        println!("{name:<26} {:>10.6}  {:?}", out.loss, out.grad.map(|g| (g * 1e6).round() / 1e6));
    }

    match dpo_loss(f64::NAN, 0.0, 0.0, 0.0, beta) {
        Ok(_) => unreachable!(),
        Err(e) => println!("\nrejected input: {e}"),
    }
}
