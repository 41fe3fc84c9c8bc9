use std::fmt::Write as _;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::mesh::Axis;

/// Positions of tracked nodes over time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub point_ids: Vec<usize>,
    /// `positions[t][p]`.
    pub positions: Vec<Vec<[f64; 3]>>,
}

impl Trajectory {
    pub fn new(point_ids: Vec<usize>) -> Self {
        Trajectory {
            times: Vec::new(),
            point_ids,
            positions: Vec::new(),
        }
    }

    /// Samples the tracked nodes from a full position vector.
    pub fn push(&mut self, t: f64, q: &[f64]) {
        self.times.push(t);
        self.positions.push(
            self.point_ids
                .iter()
                .map(|&n| [q[3 * n], q[3 * n + 1], q[3 * n + 2]])
                .collect(),
        );
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn point_count(&self) -> usize {
        self.point_ids.len()
    }

    pub fn point(&self, step: usize, p: usize) -> Vector3<f64> {
        Vector3::from(self.positions[step][p])
    }

    pub fn last(&self, p: usize) -> Vector3<f64> {
        self.point(self.len() - 1, p)
    }

    pub fn axis_series(&self, p: usize, axis: Axis) -> Vec<f64> {
        self.positions.iter().map(|row| row[p][axis.index()]).collect()
    }

    /// CSV with header `t,point_id,x,y,z`, one row per point per step and
    /// 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,point_id,x,y,z\n");
        for (t, row) in self.times.iter().zip(&self.positions) {
            for (id, x) in self.point_ids.iter().zip(row) {
                let _ = writeln!(out, "{t:.16e},{id},{:.16e},{:.16e},{:.16e}", x[0], x[1], x[2]);
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "t,point_id,x,y,z" => {}
            _ => return Err(Error::parse(1, "expected header `t,point_id,x,y,z`")),
        }
        let mut traj = Trajectory::new(Vec::new());
        let mut ids_done = false;
        let mut col = 0;
        for (i, line) in lines {
            let ln = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::parse(ln, "expected 5 fields"));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(ln, format!("`{s}`: {e}")))
            };
            let t = num(fields[0])?;
            let id: usize = fields[1]
                .trim()
                .parse()
                .map_err(|e| Error::parse(ln, format!("point id: {e}")))?;
            let x = [num(fields[2])?, num(fields[3])?, num(fields[4])?];
            let new_step = traj.times.last() != Some(&t) || (ids_done && col == traj.point_ids.len());
            if new_step {
                if !traj.times.is_empty() {
                    ids_done = true;
                    if col != traj.point_ids.len() {
                        return Err(Error::parse(ln, "previous step has missing points"));
                    }
                }
                traj.times.push(t);
                traj.positions.push(Vec::new());
                col = 0;
            }
            if ids_done {
                if traj.point_ids.get(col) != Some(&id) {
                    return Err(Error::parse(ln, format!("unexpected point id {id}")));
                }
            } else {
                traj.point_ids.push(id);
            }
            traj.positions.last_mut().expect("step row").push(x);
            col += 1;
        }
        if ids_done && col != traj.point_ids.len() {
            return Err(Error::parse(text.lines().count(), "last step has missing points"));
        }
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let mut t = Trajectory::new(vec![4, 9]);
        t.push(0.0, &(0..30).map(|i| (i as f64).sqrt() / 7.0).collect::<Vec<_>>());
        t.push(0.01, &(0..30).map(|i| -(i as f64) * 1e-7 + 0.1).collect::<Vec<_>>());
        let csv = t.to_csv();
        assert!(csv.starts_with("t,point_id,x,y,z\n0.0000000000000000e0,4,"));
        assert_eq!(Trajectory::from_csv(&csv).unwrap(), t);
        assert_eq!(t.axis_series(1, Axis::Y), vec![28f64.sqrt() / 7.0, 0.1 - 28e-7]);
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(Trajectory::from_csv("t,x\n").is_err());
        let bad = "t,point_id,x,y,z\n0,1,0,0,0\n0,2,0,0,0\n0.1,1,0,0,0\n";
        assert!(matches!(Trajectory::from_csv(bad), Err(Error::Parse { .. })));
    }
}
