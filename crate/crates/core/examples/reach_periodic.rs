//! Surrogate flowpipe over a partitioned initial set, checked against
//! sampled network outputs.

use conformal_flowpipe::reach::{partition, surrogate_flowpipe, Hyperbox};
use conformal_flowpipe::surrogate::SurrogateNet;
use rand::{Rng, SeedableRng};

fn main() -> conformal_flowpipe::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let net = SurrogateNet::random(&[2, 16, 16, 10], &mut rng)?;
    let init = Hyperbox::new(vec![-0.5, -0.5], vec![0.5, 0.5])?;
    for splits in [1, 4, 10] {
        let fp = surrogate_flowpipe(&net, &partition(&init, &[splits, splits])?)?;
        let width: f64 = fp
            .project(0, 1..=5)?
            .iter()
            .map(|p| p.upper - p.lower)
            .sum();
        println!("{splits:>2} x {splits:<2} partitions: summed x0 width over 5 steps {width:.4}");
    }
    let fp = surrogate_flowpipe(&net, &partition(&init, &[4, 4])?)?;
    let mut inside = 0;
    for _ in 0..10_000 {
        let s0 = vec![rng.gen_range(-0.5..=0.5), rng.gen_range(-0.5..=0.5)];
        let mut point = s0.clone();
        point.extend(net.forward(&s0)?);
        inside += fp.contains_values(&point)? as usize;
    }
    println!("{inside} / 10000 sampled network outputs inside the flowpipe");
    Ok(())
}
