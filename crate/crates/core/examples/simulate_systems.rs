//! Samples the three built-in systems and prints the spread of the final state.

use conformal_flowpipe::dynamics::{
    apply_shift, sample_dataset, InitialSet, ShiftSpec, SystemModel,
};

fn spread(name: &str, data: &conformal_flowpipe::dynamics::TrajectoryDataset) {
    let n = data.n;
    let k = data.horizon;
    for d in 0..n.min(3) {
        let last: Vec<f64> = (0..data.len())
            .map(|i| data.trajectory(i).state(k)[d])
            .collect();
        let lo = last.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = last.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!("{name:>14}  x{d} at K={k}: [{lo:+.4}, {hi:+.4}]");
    }
}

fn main() -> conformal_flowpipe::Result<()> {
    let periodic = SystemModel::periodic2d();
    let i1 = InitialSet::uniform(vec![-0.5, -0.5], vec![0.5, 0.5]);
    spread("periodic2d", &sample_dataset(&periodic, &i1, 20, 1000, 1)?);

    let trvdp = SystemModel::trvdp();
    let i3 = InitialSet::uniform(vec![-1.2, -1.2], vec![-1.195, -1.195]);
    spread("trvdp", &sample_dataset(&trvdp, &i3, 10, 1000, 1)?);
    let shifted = apply_shift(&trvdp, &ShiftSpec::NoiseCov(vec![0.1378f64.powi(2); 2]))?;
    spread(
        &shifted.label(),
        &sample_dataset(&shifted, &i3, 10, 1000, 1)?,
    );

    let quad = SystemModel::quadcopter12d();
    let mut lo = vec![-0.2; 6];
    lo.extend([0.0; 6]);
    let mut hi = vec![0.2; 6];
    hi.extend([0.0; 6]);
    spread(
        "quadcopter12d",
        &sample_dataset(&quad, &InitialSet::uniform(lo, hi), 20, 500, 1)?,
    );
    Ok(())
}
