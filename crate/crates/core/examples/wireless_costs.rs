//! Per-device computation and upload costs under the OFDMA model.

use fmlsim::wireless::{comm_cost, comp_cost, transmission_rate, sample_environment, EnvironmentSpec};

pub fn run_example() -> fmlsim::Result<Vec<(f64, f64)>> {
    let mut rng = fmlsim::rng::keyed_rng(&[11]);
    let env = sample_environment(&mut rng, &EnvironmentSpec { rb_count: 3, ..EnvironmentSpec::default() }, &[5, 10, 20])?;
    let mut out = Vec::new();
    for (i, (cp, r)) in env.compute.iter().zip(&env.radios).enumerate() {
        let (t_cmp, e_cmp) = comp_cost(cp, 1, cp.nu_max)?;
        let (t_com, e_com) = comm_cost(r, &env.net, i, r.p_max)?;
        let rate = transmission_rate(r, &env.net, i, r.p_max)?;
        println!(
            "device {i}: nu_max {:.3}, compute {:.3} J / {:.3} s; RB {i} rate {:.3} bit/s, upload {:.3} J / {:.3} s",
            cp.nu_max, e_cmp, t_cmp, rate, e_com, t_com
        );
        out.push((e_cmp + e_com, t_cmp + t_com));
    }
    Ok(out)
}

fn main() -> fmlsim::Result<()> {
    run_example().map(|_| ())
}
