//! Placement of a ternary 13-6-3 network onto the 15x15 array, and the
//! inverse: recovering effective weights from a measured conductance map.
//!
//! Differential encoding: every weight occupies an adjacent pair of cells,
//! an excitatory cell g_e and an inhibitory cell g_i, and decodes as
//! (g_e - g_i)/g_norm. Layer 1 weight w1[i][n] lives in row i at column
//! pair (2n, 2n+1) with g_e on the left; layer 2 weight w2[n][c] lives in
//! column 12+c at row pair (2n, 2n+1) with g_e on top. The two bottom rows,
//! and the layer-2 columns of row 12, carry no weights and stay off.

use serde::{Deserialize, Serialize};

use crate::crossbar::{Crossbar, ProgramReport, VerifyConfig};
use crate::error::{Error, Result};
use crate::solver::{COLS, ROWS};
use crate::ternary::TernarySolution;

/// How a zero weight maps to its device pair. Both-off is the default: data
/// patterns with fewer on-devices suffer less sneak-path disturbance during
/// writes. Both-on is retained so the study can be rerun under the
/// alternative encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroEncoding {
    #[default]
    BothOff,
    BothOn,
}

/// Zero-weight encoding used by `map_weights`.
pub const ZERO_WEIGHT_ENCODING: ZeroEncoding = ZeroEncoding::BothOff;

/// Measured conductance of every cell, row-major, in uS.
pub type ConductanceMap = [[f64; COLS]; ROWS];

/// Desired on/off state of every device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetStateMap {
    pub on: [[bool; COLS]; ROWS],
}

impl TargetStateMap {
    pub fn on_count(&self) -> usize {
        self.on.iter().flatten().filter(|&&b| b).count()
    }

    /// 15x15 binary CSV (1 = on).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.on {
            let line: Vec<&str> = row.iter().map(|&b| if b { "1" } else { "0" }).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Cell pair of layer-1 weight (i, n): (excitatory, inhibitory), row-major
/// coordinates.
fn l1_pair(i: usize, n: usize) -> ((usize, usize), (usize, usize)) {
    ((i, 2 * n), (i, 2 * n + 1))
}

/// Cell pair of layer-2 weight (n, c).
fn l2_pair(n: usize, c: usize) -> ((usize, usize), (usize, usize)) {
    ((2 * n, 12 + c), (2 * n + 1, 12 + c))
}

fn pair_states(w: i8, zero: ZeroEncoding) -> (bool, bool) {
    match w {
        1 => (true, false),
        -1 => (false, true),
        0 => match zero {
            ZeroEncoding::BothOff => (false, false),
            ZeroEncoding::BothOn => (true, true),
        },
        _ => unreachable!("weights are ternary"),
    }
}

/// Target states for a solution under the default zero encoding.
pub fn map_weights(net: &TernarySolution) -> TargetStateMap {
    map_weights_with(net, ZERO_WEIGHT_ENCODING)
}

pub fn map_weights_with(net: &TernarySolution, zero: ZeroEncoding) -> TargetStateMap {
    let mut on = [[false; COLS]; ROWS];
    for i in 0..13 {
        for n in 0..6 {
            let (e, g) = l1_pair(i, n);
            let (se, si) = pair_states(net.w1[i][n], zero);
            on[e.0][e.1] = se;
            on[g.0][g.1] = si;
        }
    }
    for n in 0..6 {
        for c in 0..3 {
            let (e, g) = l2_pair(n, c);
            let (se, si) = pair_states(net.w2[n][c], zero);
            on[e.0][e.1] = se;
            on[g.0][g.1] = si;
        }
    }
    TargetStateMap { on }
}

/// Effective hardware weights from a measured map: (g_e - g_i)/g_norm per
/// cell pair, in the same layout map_weights writes.
pub fn extract_weights(
    g: &ConductanceMap,
    g_norm: f64,
) -> Result<([[f64; 6]; 13], [[f64; 3]; 6])> {
    if !(g_norm > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "g_norm must be positive, got {g_norm}"
        )));
    }
    let mut w1 = [[0.0; 6]; 13];
    for (i, row) in w1.iter_mut().enumerate() {
        for (n, w) in row.iter_mut().enumerate() {
            let (e, h) = l1_pair(i, n);
            *w = (g[e.0][e.1] - g[h.0][h.1]) / g_norm;
        }
    }
    let mut w2 = [[0.0; 3]; 6];
    for (n, row) in w2.iter_mut().enumerate() {
        for (c, w) in row.iter_mut().enumerate() {
            let (e, h) = l2_pair(n, c);
            *w = (g[e.0][e.1] - g[h.0][h.1]) / g_norm;
        }
    }
    Ok((w1, w2))
}

/// Clear the array and write the solution's on-cells.
pub fn program_solution(
    xbar: &mut Crossbar,
    net: &TernarySolution,
    vcfg: &VerifyConfig,
) -> Result<ProgramReport> {
    let targets = map_weights(net);
    xbar.program_array(&targets.on, vcfg)
}
