use cvqkd::channel::ChannelParams;
use cvqkd::fock::{eigh, eigvalsh, CMat, C};
use cvqkd::keyrate::*;
use std::time::Instant;

fn main() {
    let dim = 52;
    let m = CMat::from_fn(dim, dim, |i, j| C::new((i * j % 7) as f64, 0.0));
    let h = (&m + m.adjoint()).scale(0.5);
    let t = Instant::now();
    for _ in 0..100 { let _ = eigvalsh(&h); }
    println!("eigvalsh 52x52: {:?}/call", t.elapsed() / 100);
    let t = Instant::now();
    for _ in 0..100 { let _ = eigh(&h); }
    println!("eigh 52x52:     {:?}/call", t.elapsed() / 100);

    let c = ChannelParams { distance_km: 35.0, loss_db_per_km: 0.2, excess_noise_xi: 0.0, extra_attenuation_db: 0.0 };
    let t = Instant::now();
    let setup = build_protocol_state_setup(0.8, &c, 12).unwrap();
    println!("build setup (loss-only): {:?}", t.elapsed());

    let rho = setup.rho_start.clone();
    let t = Instant::now();
    for _ in 0..20 { let _ = objective(&rho, &setup).unwrap(); }
    println!("objective: {:?}/call", t.elapsed() / 20);
    let t = Instant::now();
    for _ in 0..20 { let _ = gradient(&rho, &setup); }
    println!("gradient:  {:?}/call", t.elapsed() / 20);

    let t = Instant::now();
    let fw = frank_wolfe_minimize(&setup, 1e-5, 300).unwrap();
    println!("FW 3 iters: {:?}  (gap {:.3e}, primal {:.6})", t.elapsed(), fw.gap, fw.primal);

    let c2 = ChannelParams { distance_km: 35.0, loss_db_per_km: 0.2, excess_noise_xi: 0.01, extra_attenuation_db: 0.0 };
    let t = Instant::now();
    let setup2 = build_protocol_state_setup(0.8, &c2, 12).unwrap();
    println!("build setup (noisy): {:?}", t.elapsed());
    let t = Instant::now();
    let fw2 = frank_wolfe_minimize(&setup2, 1e-5, 300).unwrap();
    println!("FW 30 iters noisy: {:?} (gap {:.3e}, primal {:.6}, converged {})", t.elapsed(), fw2.gap, fw2.primal, fw2.converged);
}
