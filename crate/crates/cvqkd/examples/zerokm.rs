use cvqkd::keyrate::*;
use std::time::Instant;

fn main() {
    let s = PointSettings::default();
    for a in [0.3, 0.6, 0.9, 1.2, 1.5] {
        let t = Instant::now();
        match keyrate_point(0.0, a, &VoaSetting::Ideal, &s) {
            Ok(p) => println!("alpha {a}: ok rate {:.6e} it {} cutoff {}  [{:?}]", p.key_rate, p.iterations, p.cutoff_used, t.elapsed()),
            Err(e) => println!("alpha {a}: ERR {e}  [{:?}]", t.elapsed()),
        }
    }
}
