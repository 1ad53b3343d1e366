//! Binary trajectory files.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic `CHLBTRJ1` | 8 bytes |
//! | engine kind code | u8 |
//! | diffusion mode (0 field, 1 off, 2 constant) | u8 |
//! | constant covariance scale (0 unless mode 2) | f64 |
//! | alpha, beta, gamma | 3 x f64 |
//! | batch | u64 |
//! | eta, horizon, dt | 3 x f64 |
//! | p, particle count N, engine steps | 3 x u64 |
//! | step duration | f64 |
//! | snapshot count S | u64 |
//! | particle ids | N x u64 |
//! | per snapshot: step index u64, time f64, positions N x p f64 | S times |
//! | SHA-256 of every preceding byte | 32 bytes |

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dynamics::{DiffusionMode, Kind, Trajectory};
use crate::error::{Error, Result};
use crate::model::Hyperparams;

pub const MAGIC: &[u8; 8] = b"CHLBTRJ1";

pub fn encode_trajectory(t: &Trajectory) -> Vec<u8> {
    let n = t.ids.len();
    let mut buf = Vec::with_capacity(160 + 8 * n + t.snapshots.len() * (16 + 8 * n * t.p) + 32);
    buf.extend_from_slice(MAGIC);
    buf.push(t.kind.code());
    let (mode, scale) = match t.diffusion {
        DiffusionMode::Field => (0u8, 0.0),
        DiffusionMode::Off => (1, 0.0),
        DiffusionMode::Constant(s) => (2, s),
    };
    buf.push(mode);
    let h = &t.hyper;
    for v in [scale, h.alpha, h.beta, h.gamma] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&(h.batch as u64).to_le_bytes());
    for v in [h.eta, h.horizon, h.dt] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in [t.p as u64, n as u64, t.steps as u64] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&t.step.to_le_bytes());
    buf.extend_from_slice(&(t.snapshots.len() as u64).to_le_bytes());
    for id in &t.ids {
        buf.extend_from_slice(&id.to_le_bytes());
    }
    for ((&idx, &time), snap) in t.step_indices.iter().zip(&t.times).zip(&t.snapshots) {
        buf.extend_from_slice(&(idx as u64).to_le_bytes());
        buf.extend_from_slice(&time.to_le_bytes());
        for v in snap {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, k: usize) -> Option<&[u8]> {
        let out = self.bytes.get(self.at..self.at.checked_add(k)?)?;
        self.at += k;
        Some(out)
    }
    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
    fn len(&mut self) -> Option<usize> {
        self.u64().and_then(|v| usize::try_from(v).ok())
    }
}

/// Decodes a checksummed trajectory; `path` only labels errors.
pub fn decode_trajectory(bytes: &[u8], path: &Path) -> Result<Trajectory> {
    let checksum = || Error::Checksum(path.to_path_buf());
    let malformed = |message: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: message.into(),
    };
    if bytes.len() < MAGIC.len() + 32 || &bytes[..8] != MAGIC {
        return Err(if bytes.starts_with(MAGIC) { checksum() } else { malformed("not a trajectory file") });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(checksum());
    }
    let mut c = Cursor { bytes: body, at: 8 };
    let short = || malformed("file ends inside the header");
    let kind = Kind::from_code(c.u8().ok_or_else(short)?).ok_or_else(|| malformed("unknown engine kind"))?;
    let mode = c.u8().ok_or_else(short)?;
    let scale = c.f64().ok_or_else(short)?;
    let diffusion = match mode {
        0 => DiffusionMode::Field,
        1 => DiffusionMode::Off,
        2 => DiffusionMode::Constant(scale),
        _ => return Err(malformed("unknown diffusion mode")),
    };
    let alpha = c.f64().ok_or_else(short)?;
    let beta = c.f64().ok_or_else(short)?;
    let gamma = c.f64().ok_or_else(short)?;
    let batch = c.len().ok_or_else(short)?;
    let eta = c.f64().ok_or_else(short)?;
    let horizon = c.f64().ok_or_else(short)?;
    let dt = c.f64().ok_or_else(short)?;
    let hyper = Hyperparams {
        alpha,
        beta,
        gamma,
        batch,
        eta,
        horizon,
        dt,
    };
    let p = c.len().ok_or_else(short)?;
    let n = c.len().ok_or_else(short)?;
    let steps = c.len().ok_or_else(short)?;
    let step = c.f64().ok_or_else(short)?;
    let count = c.len().ok_or_else(short)?;
    let expected = n
        .checked_mul(p)
        .and_then(|np| np.checked_mul(8)?.checked_add(16)?.checked_mul(count)?.checked_add(8 * n))
        .ok_or_else(|| malformed("sizes overflow"))?;
    if body.len() - c.at != expected {
        return Err(malformed("payload size does not match the header"));
    }
    let ids = (0..n).map(|_| c.u64().expect("size checked")).collect();
    let mut step_indices = Vec::with_capacity(count);
    let mut times = Vec::with_capacity(count);
    let mut snapshots = Vec::with_capacity(count);
    for _ in 0..count {
        step_indices.push(c.len().expect("size checked"));
        times.push(c.f64().expect("size checked"));
        snapshots.push((0..n * p).map(|_| c.f64().expect("size checked")).collect());
    }
    Ok(Trajectory {
        kind,
        hyper,
        p,
        ids,
        step,
        steps,
        diffusion,
        step_indices,
        times,
        snapshots,
    })
}

/// Writes through a temporary file and renames, so readers never see a
/// partial file.
pub fn save_trajectory(path: &Path, t: &Trajectory) -> Result<()> {
    super::write_atomic(path, &encode_trajectory(t))
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    decode_trajectory(&std::fs::read(path)?, path)
}

/// Long-format CSV: `time, particle, w_1, ..., w_p`.
pub fn write_trajectory_csv(t: &Trajectory, writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> = ["time".to_owned(), "particle".to_owned()]
        .into_iter()
        .chain((1..=t.p).map(|i| format!("w_{i}")))
        .collect();
    w.write_record(&header)?;
    for (time, snap) in t.times.iter().zip(&t.snapshots) {
        for (id, pos) in t.ids.iter().zip(snap.chunks(t.p)) {
            let row: Vec<String> = [time.to_string(), id.to_string()]
                .into_iter()
                .chain(pos.iter().map(f64::to_string))
                .collect();
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{meanfield_sde_run, EngineOptions, InitLaw, InitialState, SnapshotPolicy};
    use crate::model::{DataDistribution, ModelSpec};
    use crate::rng::NoisePlan;

    fn sample() -> Trajectory {
        let model = ModelSpec::builtin("tanh-dot", "square", 0.01, 2).unwrap();
        let pi = DataDistribution::uniform(vec![(vec![1.0, 0.0], 1.0), (vec![0.0, 1.0], -1.0)]).unwrap();
        let init = InitialState::sample(&InitLaw::Uniform { half_width: 0.5 }, 2, 5, 0, &NoisePlan::new(1)).unwrap();
        let hyper = Hyperparams {
            horizon: 0.2,
            dt: 0.05,
            ..Hyperparams::default()
        };
        let opts = EngineOptions {
            snapshots: SnapshotPolicy::Times(vec![0.1]),
            diffusion: DiffusionMode::Constant(0.3),
            ..EngineOptions::default()
        };
        meanfield_sde_run(&model, &pi, &hyper, &init, &NoisePlan::new(1), &opts).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let t = sample();
        assert_eq!(t.snapshots.len(), 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.traj");
        save_trajectory(&path, &t).unwrap();
        let back = load_trajectory(&path).unwrap();
        assert_eq!(back, t);
        let bits = |t: &Trajectory| -> Vec<u64> { t.snapshots.concat().iter().chain(&t.times).map(|v| v.to_bits()).collect() };
        assert_eq!(bits(&back), bits(&t));
    }

    #[test]
    fn truncation_and_corruption_fail_the_checksum() {
        let bytes = encode_trajectory(&sample());
        let path = Path::new("mem.traj");
        for cut in [bytes.len() - 1, bytes.len() - 40, 60] {
            assert!(matches!(decode_trajectory(&bytes[..cut], path), Err(Error::Checksum(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(matches!(decode_trajectory(&flipped, path), Err(Error::Checksum(_))));
        assert!(matches!(decode_trajectory(b"hello", path), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_export_has_one_row_per_particle_and_time() {
        let t = sample();
        let mut buf = Vec::new();
        write_trajectory_csv(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time,particle,w_1,w_2\n"));
        assert_eq!(text.lines().count(), 1 + 3 * 5);
    }
}
