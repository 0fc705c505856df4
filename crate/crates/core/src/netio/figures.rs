//! Channel-by-time activity grids and the active-minicolumn trace.

use std::fmt::Write as _;

use super::auditory::AuditoryLayout;
use super::records::EventRecord;

/// Per-channel spike counts of the given neuron types in `bin_ms` bins,
/// scaled so the largest cell is 1 (an all-zero grid stays zero).
pub fn activity_grid(
    events: &[EventRecord],
    layout: &AuditoryLayout,
    types: &[usize],
    bin_ms: u64,
    duration_ms: u64,
) -> Vec<Vec<f64>> {
    let bin_ms = bin_ms.max(1);
    let bins = duration_ms.div_ceil(bin_ms) as usize;
    let mut grid = vec![vec![0.0; bins]; layout.channels as usize];
    for e in events {
        if !types.contains(&e.ty) {
            continue;
        }
        let Some(c) = layout.channel_of(e.addr) else {
            continue;
        };
        let b = (e.t / bin_ms) as usize;
        if (c as usize) < grid.len() && b < bins {
            grid[c as usize][b] += e.count as f64;
        }
    }
    let max = grid.iter().flatten().fold(0.0f64, |m, &x| m.max(x));
    if max > 0.0 {
        for x in grid.iter_mut().flatten() {
            *x /= max;
        }
    }
    grid
}

/// Long-form CSV: `channel,bin_start_ms,value`.
pub fn grid_csv(grid: &[Vec<f64>], bin_ms: u64) -> String {
    let mut s = String::from("channel,bin_start_ms,value\n");
    for (c, row) in grid.iter().enumerate() {
        for (b, v) in row.iter().enumerate() {
            writeln!(s, "{c},{},{v}", b as u64 * bin_ms).unwrap();
        }
    }
    s
}

pub fn trace_csv(stats: &[(u64, usize)]) -> String {
    let mut s = String::from("t,active\n");
    for (t, a) in stats {
        writeln!(s, "{t},{a}").unwrap();
    }
    s
}
