use cvqkd::keyrate::*;
use std::time::Instant;

fn main() {
    let s = PointSettings::default();
    let search = AlphaSearch::default();
    for voa in [VoaSetting::Ideal, VoaSetting::Db(30.0)] {
        let mut hint = None;
        for d in [0.0, 10.0, 50.0, 60.0, 100.0] {
            let t = Instant::now();
            match optimize_alpha_with_hint(d, &voa, &s, &search, hint) {
                Ok(p) => {
                    hint = Some(p.alpha_opt);
                    println!(
                        "{:?} {:>5.0} km: alpha {:.3} rate {:.6e} it {} cert {}  [{:?}]",
                        voa, d, p.alpha_opt, p.key_rate, p.iterations, p.certified, t.elapsed()
                    );
                }
                Err(e) => println!("{:?} {:>5.0} km: ERR {e}  [{:?}]", voa, d, t.elapsed()),
            }
        }
    }
}
