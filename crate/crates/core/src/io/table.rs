//! Flat tab-separated tables for plotting, and the float formatter shared by
//! every writer.

use crate::integrator::Trajectory;
use crate::shooting::IterationRecord;
use nalgebra::DVector;

/// 17 significant digits: enough to reproduce any f64 bit pattern on parse.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Landmark trajectory as `step  scale  index  q...  p...` rows, scales
/// labeled 1-based coarse to fine.
pub fn write_trajectory_table(traj: &Trajectory) -> String {
    let dim = traj.initial().q.shape().dim;
    let mut header = vec!["step".to_string(), "scale".into(), "index".into()];
    for c in 0..dim {
        header.push(format!("q{c}"));
    }
    for c in 0..dim {
        header.push(format!("p{c}"));
    }
    let mut out = header.join("\t");
    out.push('\n');
    for (step, state) in traj.states.iter().enumerate() {
        for (scale, (qs, ps)) in state.q.scales.iter().zip(&state.p.scales).enumerate() {
            for (index, (x, pv)) in qs.iter().zip(ps).enumerate() {
                let mut cells = vec![step.to_string(), (scale + 1).to_string(), index.to_string()];
                cells.extend(x.iter().map(|&v| fmt_float(v)));
                cells.extend(pv.iter().map(|&v| fmt_float(v)));
                out.push_str(&cells.join("\t"));
                out.push('\n');
            }
        }
    }
    out
}

/// Similarity state and momentum per step:
/// `step  rho  R(row-major)...  tau...  p_rho  p_R...  p_tau...`.
pub fn write_sim_trajectory_table(traj: &Trajectory) -> String {
    let d = traj.initial().sim.dim();
    let mut header = vec!["step".to_string(), "rho".into()];
    for i in 0..d {
        for j in 0..d {
            header.push(format!("R{i}{j}"));
        }
    }
    for c in 0..d {
        header.push(format!("tau{c}"));
    }
    header.push("p_rho".into());
    for i in 0..d {
        for j in 0..d {
            header.push(format!("pR{i}{j}"));
        }
    }
    for c in 0..d {
        header.push(format!("p_tau{c}"));
    }
    let mut out = header.join("\t");
    out.push('\n');
    for (step, state) in traj.states.iter().enumerate() {
        let mut cells = vec![step.to_string(), fmt_float(state.sim.scaling)];
        for i in 0..d {
            for j in 0..d {
                cells.push(fmt_float(state.sim.rotation[(i, j)]));
            }
        }
        cells.extend(state.sim.translation.iter().map(|&v| fmt_float(v)));
        cells.push(fmt_float(state.sim_momentum.scaling));
        for i in 0..d {
            for j in 0..d {
                cells.push(fmt_float(state.sim_momentum.rotation[(i, j)]));
            }
        }
        cells.extend(state.sim_momentum.translation.iter().map(|&v| fmt_float(v)));
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    out
}

/// Probe paths as `step  probe  x...` rows.
pub fn write_probe_table(paths: &[Vec<DVector<f64>>]) -> String {
    let dim = paths
        .first()
        .and_then(|step| step.first())
        .map_or(0, |x| x.len());
    let mut header = vec!["step".to_string(), "probe".into()];
    for c in 0..dim {
        header.push(format!("x{c}"));
    }
    let mut out = header.join("\t");
    out.push('\n');
    for (step, positions) in paths.iter().enumerate() {
        for (probe, x) in positions.iter().enumerate() {
            let mut cells = vec![step.to_string(), probe.to_string()];
            cells.extend(x.iter().map(|&v| fmt_float(v)));
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
    }
    out
}

/// Optimizer history as `iteration  objective  grad_norm  step` rows.
pub fn write_history_table(history: &[IterationRecord]) -> String {
    let mut out = String::from("iteration\tobjective\tgrad_norm\tstep\n");
    for record in history {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            record.iteration,
            fmt_float(record.objective),
            fmt_float(record.grad_norm),
            fmt_float(record.step)
        ));
    }
    out
}
