use std::io::{Read, Write};

use super::{CoState, State, Trajectory};
use crate::error::{Error, Result};

const STATE_COLS: [&str; 5] = ["t", "s", "v_s", "theta", "v_theta"];
const COSTATE_COLS: [&str; 4] = ["l_s", "l_vs", "l_th", "l_vth"];

/// Column names for a trajectory with `m` controls.
pub fn trajectory_csv_header(m: usize, with_costates: bool) -> Vec<String> {
    let mut cols: Vec<String> = STATE_COLS.iter().map(|c| c.to_string()).collect();
    cols.extend((1..=m).map(|k| format!("u_{k}")));
    if with_costates {
        cols.extend(COSTATE_COLS.iter().map(|c| c.to_string()));
    }
    cols
}

/// Writes one row per node. The last node repeats the final interval's
/// control so every row has the same width. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    traj.validate()?;
    let m = traj.control_dim();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_csv_header(m, traj.costates.is_some()))?;
    let mut row: Vec<String> = Vec::new();
    for (i, (t, x)) in traj.times.iter().zip(&traj.states).enumerate() {
        row.clear();
        row.push(t.to_string());
        row.extend(x.to_array().iter().map(f64::to_string));
        if m > 0 {
            row.extend(traj.control_at_node(i).iter().map(f64::to_string));
        }
        if let Some(c) = &traj.costates {
            row.extend(c[i].to_array().iter().map(f64::to_string));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_trajectory_csv`].
pub fn read_trajectory_csv<R: Read>(input: R) -> Result<Trajectory> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.len() < STATE_COLS.len() || header[..STATE_COLS.len()] != STATE_COLS {
        return Err(Error::Parse(format!("unexpected trajectory header {header:?}")));
    }
    let with_costates = header.ends_with(&COSTATE_COLS.map(String::from));
    let m = header.len() - STATE_COLS.len() - if with_costates { COSTATE_COLS.len() } else { 0 };
    if header != trajectory_csv_header(m, with_costates) {
        return Err(Error::Parse(format!("unexpected trajectory header {header:?}")));
    }

    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut controls = Vec::new();
    let mut costates = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("row {}: {e}", line + 1)))?;
        if vals.len() != header.len() {
            return Err(Error::Parse(format!("row {} has {} fields", line + 1, vals.len())));
        }
        times.push(vals[0]);
        states.push(State::from_slice(&vals[1..5]));
        controls.push(vals[5..5 + m].to_vec());
        if with_costates {
            costates.push(CoState::new(vals[5 + m], vals[6 + m], vals[7 + m], vals[8 + m]));
        }
    }
    controls.pop();
    let traj = Trajectory::new(times, states, controls)?;
    if with_costates {
        traj.with_costates(costates)
    } else {
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trajectory {
        let states = vec![
            State::new(5.0, 0.0, 0.0, 0.1 + 0.2),
            State::new(4.9, -1e-17, 0.3, 2.852220659),
            State::new(4.8, 1.0 / 3.0, 0.6, f64::MIN_POSITIVE),
        ];
        Trajectory::new(vec![0.0, 0.1, 0.2], states, vec![vec![0.5, -0.25], vec![1e-300, 7.0]]).unwrap()
    }

    #[test]
    fn header_layout() {
        assert_eq!(trajectory_csv_header(0, false).join(","), "t,s,v_s,theta,v_theta");
        assert_eq!(
            trajectory_csv_header(2, true).join(","),
            "t,s,v_s,theta,v_theta,u_1,u_2,l_s,l_vs,l_th,l_vth"
        );
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let traj = sample();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let back = read_trajectory_csv(buf.as_slice()).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn round_trip_with_costates() {
        let traj = sample()
            .with_costates(vec![
                CoState::new(1.0, 2.0, 0.0, -3.5),
                CoState::default(),
                CoState::new(0.1, 0.2, 0.3, 0.4),
            ])
            .unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,s,v_s,theta,v_theta,u_1,u_2,l_s,l_vs,l_th,l_vth\n"));
        assert_eq!(text.lines().count(), 4);
        assert_eq!(read_trajectory_csv(buf.as_slice()).unwrap(), traj);
    }

    #[test]
    fn malformed_input_is_rejected() {
        assert!(read_trajectory_csv("a,b\n1,2\n".as_bytes()).is_err());
        assert!(read_trajectory_csv("t,s,v_s,theta,v_theta\n0,1,x,0,0\n".as_bytes()).is_err());
    }
}
