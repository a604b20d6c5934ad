//! CSV export of trajectories.
//!
//! Trajectory file: header `t,x1,...,xN,is_jump`, one row per record. A jump
//! epoch produces two rows at the same time: the left limit with
//! `is_jump = 0` and the post-jump state with `is_jump = 1`.
//!
//! Jump-mark file: header `tau,zeta1,...,zetaN` with the per-rank
//! displacement of each jump.

use std::io::{Read, Write};

use super::{JumpMark, RecordKind, Trajectory};
use crate::{Error, Result};

fn header(first: &str, prefix: &str, n: usize, last: Option<&str>) -> Vec<String> {
    std::iter::once(first.to_string())
        .chain((1..=n).map(|i| format!("{prefix}{i}")))
        .chain(last.map(str::to_string))
        .collect()
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let n = traj.n_particles();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header("t", "x", n, Some("is_jump")))?;
    let mut row = Vec::with_capacity(n + 2);
    for (j, state) in traj.states().enumerate() {
        row.clear();
        row.push(traj.times()[j].to_string());
        row.extend(state.iter().map(f64::to_string));
        row.push(u8::from(traj.kinds()[j] == RecordKind::PostJump).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jump_marks_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header("tau", "zeta", traj.n_particles(), None))?;
    for m in traj.jump_marks() {
        let row: Vec<String> =
            std::iter::once(m.time).chain(m.displacement.iter().copied()).map(|v| v.to_string()).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn parse(field: &str) -> Result<f64> {
    field.trim().parse().map_err(|_| Error::Config(format!("not a number: {field:?}")))
}

/// Reads a trajectory back from its CSV files. Without a jump-mark file the
/// displacements are left empty.
pub fn read_trajectory<R: Read, J: Read>(traj_csv: R, jumps_csv: Option<J>, replication: u64) -> Result<Trajectory> {
    let mut r = csv::Reader::from_reader(traj_csv);
    let n = r
        .headers()?
        .len()
        .checked_sub(2)
        .filter(|n| *n >= 1)
        .ok_or_else(|| Error::Config("trajectory CSV needs t, x1.., is_jump".into()))?;
    let mut traj = Trajectory::empty(n, replication, String::new());
    let mut state = vec![0.0; n];
    let mut post_rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != n + 2 {
            return Err(Error::Dimension { expected: n + 2, got: rec.len() });
        }
        let t = parse(&rec[0])?;
        for (i, s) in state.iter_mut().enumerate() {
            *s = parse(&rec[i + 1])?;
        }
        let kind = match rec[n + 1].trim() {
            "1" => RecordKind::PostJump,
            "0" => RecordKind::Grid,
            other => return Err(Error::Config(format!("is_jump must be 0 or 1, got {other:?}"))),
        };
        if kind == RecordKind::PostJump {
            let j = traj.len();
            if j == 0 || traj.times[j - 1] != t {
                return Err(Error::Config(format!("jump row at t = {t} lacks a pre-jump row")));
            }
            traj.kinds[j - 1] = RecordKind::PreJump;
            post_rows.push(j);
        }
        traj.push(t, &state, kind);
    }

    let mut displacements: Vec<(f64, Vec<f64>)> = Vec::new();
    if let Some(j) = jumps_csv {
        let mut r = csv::Reader::from_reader(j);
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != n + 1 {
                return Err(Error::Dimension { expected: n + 1, got: rec.len() });
            }
            let tau = parse(&rec[0])?;
            let zeta = (1..=n).map(|i| parse(&rec[i])).collect::<Result<Vec<_>>>()?;
            displacements.push((tau, zeta));
        }
        if displacements.len() != post_rows.len() {
            return Err(Error::Config(format!("{} jump rows but {} jump marks", post_rows.len(), displacements.len())));
        }
    }
    for (i, record) in post_rows.into_iter().enumerate() {
        let time = traj.times[record];
        let displacement = match displacements.get(i) {
            Some((tau, z)) if *tau == time => z.clone(),
            Some((tau, _)) => return Err(Error::Config(format!("jump mark at {tau} does not match row at {time}"))),
            None => Vec::new(),
        };
        traj.push_mark(JumpMark { time, displacement, record });
    }
    Ok(traj)
}
