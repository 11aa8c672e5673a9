//! Plain-text serializations shared by the command-line driver and tests.
//!
//! Floats are written in Rust's shortest round-trip form, so equal values
//! always produce equal bytes.

use crate::particles::Snapshot;
use crate::pde::{DensityProvider, GridDensity};

/// `t,particle_id,x_1..x_d,reflection_total`, one line per particle and
/// snapshot.
pub fn snapshots_csv(snaps: &[Snapshot], dim: usize) -> String {
    let mut s = String::from("t,particle_id");
    for k in 1..=dim {
        s.push_str(&format!(",x_{k}"));
    }
    s.push_str(",reflection_total\n");
    for snap in snaps {
        for (i, (p, r)) in snap.positions.chunks_exact(dim).zip(&snap.reflection_totals).enumerate() {
            s.push_str(&format!("{},{i}", snap.time));
            for v in p {
                s.push_str(&format!(",{v}"));
            }
            s.push_str(&format!(",{r}\n"));
        }
    }
    s
}

/// `cell,c_1..c_d,value` for one density.
pub fn density_csv(rho: &GridDensity) -> String {
    let mesh = rho.mesh();
    let mut s = String::from("cell");
    for k in 1..=mesh.dim() {
        s.push_str(&format!(",c_{k}"));
    }
    s.push_str(",value\n");
    for (f, v) in rho.values().iter().enumerate() {
        s.push_str(&f.to_string());
        for c in mesh.center(&mesh.multi_index(f)) {
            s.push_str(&format!(",{c}"));
        }
        s.push_str(&format!(",{v}\n"));
    }
    s
}

/// `t,mass,linf,min` for every snapshot of a solution.
pub fn pde_summary_csv(provider: &DensityProvider) -> String {
    let mut s = String::from("t,mass,linf,min\n");
    for snap in provider.snapshots() {
        s.push_str(&format!("{},{},{},{}\n", snap.time(), snap.mass(), snap.linf(), snap.min_value()));
    }
    s
}

/// `t,linf` after every step.
pub fn linf_history_csv(provider: &DensityProvider) -> String {
    let mut s = String::from("t,linf\n");
    for (t, l) in provider.linf_history() {
        s.push_str(&format!("{t},{l}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_layout() {
        let snap = Snapshot { time: 0.5, positions: vec![0.1, 0.2, 0.3, 0.4], reflection_totals: vec![0.0, 1.5] };
        let csv = snapshots_csv(&[snap], 2);
        assert_eq!(csv, "t,particle_id,x_1,x_2,reflection_total\n0.5,0,0.1,0.2,0\n0.5,1,0.3,0.4,1.5\n");
    }
}
