//! Raw spatiotemporal correlation of measurement records at zero spatial offset.

use std::io::Write;

use crate::circuits::TrajectoryRecord;
use crate::decoder::Estimate;
use crate::stats::Welford;
use crate::{Error, Result};

/// `C(δt, δx = 0)`: the product `m(t0, x0) · m(t0 + δt, x0)` averaged over
/// trajectories, sites and start times. The standard error is taken over the
/// `L · (2L − δt)` spacetime points, each averaged over trajectories first.
pub fn spatiotemporal_corr(records: &[TrajectoryRecord], dt: usize) -> Result<Estimate> {
    let first = records.first().ok_or_else(|| Error::InsufficientData("no records".into()))?;
    let l = first.l;
    let times = 2 * l;
    if dt == 0 || dt >= times {
        return Err(Error::invalid(format!("dt = {dt} outside [1, {})", times)));
    }
    if records.iter().any(|r| r.l != l) {
        return Err(Error::Metadata("records have different L".into()));
    }
    let npoints = l * (times - dt);
    let mut sums = vec![0u64; npoints];
    for r in records {
        for t0 in 0..times - dt {
            let (now, later) = (r.time_slice(t0), r.time_slice(t0 + dt));
            for x in 0..l {
                sums[t0 * l + x] += u64::from(now[x] & later[x]);
            }
        }
    }
    let m = records.len() as f64;
    let w: Welford = sums.into_iter().map(|s| s as f64 / m).collect();
    Ok(Estimate { value: w.mean(), stderr: w.stderr() })
}

/// CSV rows `gamma,L,dt,C,stderr`.
pub fn write_csv<W: Write>(mut out: W, rows: &[(f64, usize, usize, Estimate)]) -> Result<()> {
    writeln!(out, "gamma,L,dt,C,stderr")?;
    for (gamma, l, dt, e) in rows {
        writeln!(out, "{gamma},{l},{dt},{},{}", e.value, e.stderr)?;
    }
    Ok(())
}
