//! Trajectory and control-trace CSV files.
//!
//! Columns are a fixed schema; values are written with 17 significant
//! digits so they round-trip exactly through text.

use plate_swarm_core::geom::rotation_to_quaternion;
use plate_swarm_core::sim::Trajectory;
use std::fmt::Write as _;

/// Fixed header of `trajectory.csv` (76 columns).
pub const TRAJECTORY_HEADER: &str = "t,o_px,o_py,o_pz,v_px,v_py,v_pz,quat_pw,quat_px,quat_py,quat_pz,Omega_px,Omega_py,Omega_pz,r_b1,r_b2,rdot_b1,rdot_b2,q_1x,q_1y,q_1z,omega_1x,omega_1y,omega_1z,q_2x,q_2y,q_2z,omega_2x,omega_2y,omega_2z,q_3x,q_3y,q_3z,omega_3x,omega_3y,omega_3z,quat_1w,quat_1x,quat_1y,quat_1z,Omega_1x,Omega_1y,Omega_1z,f_1,M_1x,M_1y,M_1z,quat_2w,quat_2x,quat_2y,quat_2z,Omega_2x,Omega_2y,Omega_2z,f_2,M_2x,M_2y,M_2z,quat_3w,quat_3x,quat_3y,quat_3z,Omega_3x,Omega_3y,Omega_3z,f_3,M_3x,M_3y,M_3z,E_kin,E_pot,V,V2,res_q_max,res_omega_max,res_R_max";

/// Fixed header of `controls.csv`.
pub const CONTROLS_HEADER: &str = "t,U1x,U1y,U1z,U2x,U2y,U2z,Fx,Fy,Fz,taux,tauy,tauz,mu_1x,mu_1y,mu_1z,upar_1x,upar_1y,upar_1z,uperp_1x,uperp_1y,uperp_1z,u_1x,u_1y,u_1z,q_id1x,q_id1y,q_id1z,omega_id1x,omega_id1y,omega_id1z,quat_id1w,quat_id1x,quat_id1y,quat_id1z,Omega_id1x,Omega_id1y,Omega_id1z,e_R1,e_Omega1,mu_2x,mu_2y,mu_2z,upar_2x,upar_2y,upar_2z,uperp_2x,uperp_2y,uperp_2z,u_2x,u_2y,u_2z,q_id2x,q_id2y,q_id2z,omega_id2x,omega_id2y,omega_id2z,quat_id2w,quat_id2x,quat_id2y,quat_id2z,Omega_id2x,Omega_id2y,Omega_id2z,e_R2,e_Omega2,mu_3x,mu_3y,mu_3z,upar_3x,upar_3y,upar_3z,uperp_3x,uperp_3y,uperp_3z,u_3x,u_3y,u_3z,q_id3x,q_id3y,q_id3z,omega_id3x,omega_id3y,omega_id3z,quat_id3w,quat_id3x,quat_id3y,quat_id3z,Omega_id3x,Omega_id3y,Omega_id3z,e_R3,e_Omega3";

fn push(row: &mut String, value: f64) {
    if !row.is_empty() {
        row.push(',');
    }
    // 17 significant digits: exact f64 round-trip.
    write!(row, "{value:.16e}").expect("write to string");
}

/// Renders the whole trajectory as CSV text.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(traj.len() * 1500 + 1000);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for sample in &traj.samples {
        let s = &sample.state;
        let mut row = String::with_capacity(1500);
        push(&mut row, sample.t);
        for v in [&s.o_p, &s.v_p] {
            for k in 0..3 {
                push(&mut row, v[k]);
            }
        }
        let quat = rotation_to_quaternion(&s.r_p);
        for q in quat {
            push(&mut row, q);
        }
        for k in 0..3 {
            push(&mut row, s.omega_p[k]);
        }
        for k in 0..2 {
            push(&mut row, s.r_b[k]);
        }
        for k in 0..2 {
            push(&mut row, s.rdot_b[k]);
        }
        for t in &s.tethers {
            for k in 0..3 {
                push(&mut row, t.q.as_vec()[k]);
            }
            for k in 0..3 {
                push(&mut row, t.omega[k]);
            }
        }
        for i in 0..3 {
            let quat = rotation_to_quaternion(&s.quads[i].r);
            for q in quat {
                push(&mut row, q);
            }
            for k in 0..3 {
                push(&mut row, s.quads[i].omega[k]);
            }
            let (f, m) = match &sample.trace {
                Some(trace) => (trace.f[i], trace.moment[i]),
                None => (0.0, plate_swarm_core::geom::Vec3::zeros()),
            };
            push(&mut row, f);
            for k in 0..3 {
                push(&mut row, m[k]);
            }
        }
        let d = &sample.diag;
        for v in [
            d.e_kin,
            d.e_pot,
            d.v_lyap,
            d.v2,
            d.res_q_max,
            d.res_omega_max,
            d.res_rot_max,
        ] {
            push(&mut row, v);
        }
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// Renders the per-tick control traces as CSV text (rows only for samples
/// that carry a trace).
pub fn controls_csv(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(traj.len() * 2000 + 1000);
    out.push_str(CONTROLS_HEADER);
    out.push('\n');
    for sample in &traj.samples {
        let Some(trace) = &sample.trace else { continue };
        let mut row = String::with_capacity(2000);
        push(&mut row, sample.t);
        for v in [&trace.u1, &trace.u2, &trace.force, &trace.torque] {
            for k in 0..3 {
                push(&mut row, v[k]);
            }
        }
        for i in 0..3 {
            for v in [
                &trace.mu[i],
                &trace.u_par[i],
                &trace.u_perp[i],
                &trace.u_cmd[i],
            ] {
                for k in 0..3 {
                    push(&mut row, v[k]);
                }
            }
            for k in 0..3 {
                push(&mut row, trace.q_id[i].as_vec()[k]);
            }
            for k in 0..3 {
                push(&mut row, trace.omega_id[i][k]);
            }
            let quat = rotation_to_quaternion(&trace.r_id[i]);
            for q in quat {
                push(&mut row, q);
            }
            for k in 0..3 {
                push(&mut row, trace.omega_qid[i][k]);
            }
            push(&mut row, trace.e_r_norm[i]);
            push(&mut row, trace.e_omega_norm[i]);
        }
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// A parsed CSV table with named columns.
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Table, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty CSV")?;
        let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
        if columns.is_empty() || columns.iter().any(|c| c.is_empty()) {
            return Err("malformed CSV header".into());
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| format!("line {}: {e}", lineno + 2))?;
            if row.len() != columns.len() {
                return Err(format!(
                    "line {}: expected {} fields, found {}",
                    lineno + 2,
                    columns.len(),
                    row.len()
                ));
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err("CSV has no data rows".into());
        }
        Ok(Table { columns, rows })
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, String> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| format!("missing column {name:?}"))?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }
}
