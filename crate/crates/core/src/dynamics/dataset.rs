use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{simulate_recorded, InitialSet, SystemModel, Trajectory};
use crate::linalg::Matrix;
use crate::{Error, Result};

/// Independent random stream for trajectory `index` of a dataset seeded with `seed`.
///
/// ChaCha streams are counter based, so trajectory `i` is reproducible on
/// its own regardless of how many others were drawn before it.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// I.i.d. trajectories sampled from one system.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub n: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Model label, including any shift tag.
    pub source: String,
    /// `L x n`.
    pub initial_states: Matrix,
    /// `L x nK`, row `i` continues `initial_states` row `i`.
    pub tails: Matrix,
    /// Per-trajectory additive noise, `L x nK`, when recorded.
    pub noise: Option<Matrix>,
}

/// Samples `count` trajectories of `horizon` steps with initial states drawn from `init`.
pub fn sample_dataset(
    model: &SystemModel,
    init: &InitialSet,
    horizon: usize,
    count: usize,
    seed: u64,
) -> Result<TrajectoryDataset> {
    sample_dataset_inner(model, init, horizon, count, seed, false)
}

impl TrajectoryDataset {
    /// As [`sample_dataset`], keeping the noise draws for replay.
    pub fn sample_recorded(
        model: &SystemModel,
        init: &InitialSet,
        horizon: usize,
        count: usize,
        seed: u64,
    ) -> Result<Self> {
        sample_dataset_inner(model, init, horizon, count, seed, true)
    }

    pub fn len(&self) -> usize {
        self.initial_states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn initial_state(&self, i: usize) -> &[f64] {
        self.initial_states.row(i)
    }

    pub fn tail(&self, i: usize) -> &[f64] {
        self.tails.row(i)
    }

    pub fn trajectory(&self, i: usize) -> Trajectory {
        let mut v = self.initial_state(i).to_vec();
        v.extend_from_slice(self.tail(i));
        Trajectory::new(self.n, v).expect("dataset rows have trajectory layout")
    }

    /// Keeps every `factor`-th time step (`factor, 2 factor, ..., K`).
    pub fn subsample_steps(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.horizon % factor != 0 {
            return Err(Error::invalid(format!(
                "horizon {} is not a multiple of {factor}",
                self.horizon
            )));
        }
        let n = self.n;
        let k = self.horizon / factor;
        let mut data = Vec::with_capacity(self.len() * n * k);
        for i in 0..self.len() {
            let row = self.tail(i);
            for step in 1..=k {
                let t = step * factor;
                data.extend_from_slice(&row[(t - 1) * n..t * n]);
            }
        }
        Ok(Self {
            n,
            horizon: k,
            seed: self.seed,
            source: self.source.clone(),
            initial_states: self.initial_states.clone(),
            tails: Matrix::from_row_major(self.len(), n * k, data)?,
            noise: None,
        })
    }

    /// CSV layout: a header row `n,K,L,seed,model` carrying those values,
    /// then one row of `n (K + 1)` numbers per trajectory. Floats use the
    /// shortest representation that round-trips.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().flexible(true).from_writer(w);
        wr.write_record([
            self.n.to_string(),
            self.horizon.to_string(),
            self.len().to_string(),
            self.seed.to_string(),
            self.source.clone(),
        ])?;
        for i in 0..self.len() {
            let rec: Vec<String> = self
                .initial_state(i)
                .iter()
                .chain(self.tail(i))
                .map(|v| format!("{v:?}"))
                .collect();
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(r);
        let mut records = rd.records();
        let header = records
            .next()
            .ok_or_else(|| Error::invalid("empty dataset file"))??;
        if header.len() != 5 {
            return Err(Error::invalid("dataset header must be `n,K,L,seed,model`"));
        }
        let parse = |i: usize| -> Result<u64> {
            header[i]
                .trim()
                .parse::<u64>()
                .map_err(|e| Error::invalid(format!("dataset header field {i}: {e}")))
        };
        let n = parse(0)? as usize;
        let horizon = parse(1)? as usize;
        let count = parse(2)? as usize;
        let seed = parse(3)?;
        let source = header[4].to_string();
        let width = n * (horizon + 1);
        let mut init = Vec::with_capacity(count * n);
        let mut tails = Vec::with_capacity(count * n * horizon);
        let mut rows = 0;
        for rec in records {
            let rec = rec?;
            if rec.len() != width {
                return Err(Error::dim("dataset row", width, rec.len()));
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|e| Error::invalid(format!("dataset row {rows}: {e}")))?;
                if j < n {
                    init.push(v);
                } else {
                    tails.push(v);
                }
            }
            rows += 1;
        }
        if rows != count {
            return Err(Error::dim("dataset rows", count, rows));
        }
        Ok(Self {
            n,
            horizon,
            seed,
            source,
            initial_states: Matrix::from_row_major(count, n, init)?,
            tails: Matrix::from_row_major(count, n * horizon, tails)?,
            noise: None,
        })
    }
}

fn sample_dataset_inner(
    model: &SystemModel,
    init: &InitialSet,
    horizon: usize,
    count: usize,
    seed: u64,
    record_noise: bool,
) -> Result<TrajectoryDataset> {
    model.validate()?;
    init.validate()?;
    let n = model.n();
    if init.dim() != n {
        return Err(Error::dim("initial set", n, init.dim()));
    }
    if count == 0 {
        return Err(Error::invalid("dataset size L must be >= 1"));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon K must be >= 1"));
    }
    let mut init_data = Vec::with_capacity(count * n);
    let mut tail_data = Vec::with_capacity(count * n * horizon);
    let mut noise_data = Vec::with_capacity(if record_noise { count * n * horizon } else { 0 });
    for i in 0..count {
        let mut rng = substream(seed, i as u64);
        let s0 = init.sample(&mut rng)?;
        let (traj, noise) = simulate_recorded(model, &s0, horizon, &mut rng)?;
        init_data.extend_from_slice(traj.initial_state());
        tail_data.extend_from_slice(traj.tail());
        if record_noise {
            noise_data.extend_from_slice(&noise);
        }
    }
    Ok(TrajectoryDataset {
        n,
        horizon,
        seed,
        source: model.label(),
        initial_states: Matrix::from_row_major(count, n, init_data)?,
        tails: Matrix::from_row_major(count, n * horizon, tail_data)?,
        noise: if record_noise {
            Some(Matrix::from_row_major(count, n * horizon, noise_data)?)
        } else {
            None
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::simulate_with_noise;

    fn box1() -> InitialSet {
        InitialSet::uniform(vec![-0.5, -0.5], vec![0.5, 0.5])
    }

    #[test]
    fn same_seed_same_dataset() {
        let m = SystemModel::periodic2d();
        let a = sample_dataset(&m, &box1(), 10, 5, 7).unwrap();
        let b = sample_dataset(&m, &box1(), 10, 5, 7).unwrap();
        assert_eq!(a, b);
        let c = sample_dataset(&m, &box1(), 10, 5, 8).unwrap();
        assert_ne!(a.tails, c.tails);
    }

    #[test]
    fn shapes() {
        let d = sample_dataset(&SystemModel::periodic2d(), &box1(), 50, 10_000, 3).unwrap();
        assert_eq!((d.tails.rows(), d.tails.cols()), (10_000, 100));
        assert_eq!(
            (d.initial_states.rows(), d.initial_states.cols()),
            (10_000, 2)
        );
    }

    #[test]
    fn initial_states_in_box() {
        let d = sample_dataset(&SystemModel::periodic2d(), &box1(), 1, 2000, 11).unwrap();
        let b = box1();
        assert!((0..d.len()).all(|i| b.contains(d.initial_state(i))));
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(sample_dataset(&SystemModel::periodic2d(), &box1(), 5, 0, 1).is_err());
    }

    #[test]
    fn recorded_noise_replays() {
        let m = SystemModel::trvdp();
        let init = InitialSet::uniform(vec![-1.2, -1.2], vec![-1.195, -1.195]);
        let d = TrajectoryDataset::sample_recorded(&m, &init, 15, 20, 5).unwrap();
        let noise = d.noise.as_ref().unwrap();
        for i in 0..d.len() {
            let t = simulate_with_noise(&m, d.initial_state(i), 15, noise.row(i)).unwrap();
            assert_eq!(t.values(), d.trajectory(i).values());
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = sample_dataset(
            &SystemModel::trvdp(),
            &InitialSet::uniform(vec![-1.2, -1.2], vec![-1.195, -1.195]),
            7,
            13,
            2,
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = TrajectoryDataset::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn subsampling_keeps_every_other_step() {
        let d = sample_dataset(&SystemModel::periodic2d(), &box1(), 4, 3, 1).unwrap();
        let s = d.subsample_steps(2).unwrap();
        assert_eq!(s.horizon, 2);
        assert_eq!(
            s.tail(1),
            &[d.tail(1)[2..4].to_vec(), d.tail(1)[6..8].to_vec()].concat()[..]
        );
        assert!(d.subsample_steps(3).is_err());
    }
}
