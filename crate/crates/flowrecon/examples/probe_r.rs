use flowrecon::encoding::measured_acceleration;
use flowrecon::sampling::{golden_angle_mask, mask_for_acceleration};
fn main() {
    for s in 1..30 {
        let m = golden_angle_mask(32, 16, 8, s, 1);
        print!("{:.1} ", measured_acceleration(&m));
    }
    println!();
    for target in [6.0, 10.0, 16.0, 22.0] {
        for seed in 0..5 {
            match mask_for_acceleration(32, 16, 8, target, seed) {
                Ok((_, r)) => print!("R{target}/s{seed}={r:.2} "),
                Err(e) => print!("R{target}/s{seed}=ERR({e}) "),
            }
        }
        println!();
    }
}
