//! Bijective 2D → 1D visiting orders and their locality diagnostics.
//!
//! Trajectory conventions (cells are `(row, col)`, indices row-major):
//!
//! * `Horizontal`: rows top-down, each left-to-right.
//! * `Vertical`: columns left-right, each top-to-bottom.
//! * `Diagonal`: anti-diagonals `d = r + c` ascending, `r` ascending within each.
//! * `FlippedDiagonal`: `Diagonal` on the horizontally mirrored grid.
//! * `Zigzag`: anti-diagonals with alternating direction (JPEG order:
//!   odd `d` runs with `r` ascending, even `d` with `r` descending).
//! * `ZOrder`: Morton order of the enclosing power-of-two square, column
//!   bits in even positions, out-of-grid cells skipped.
//! * `Hilbert`: Hilbert curve of the enclosing power-of-two square,
//!   out-of-grid cells skipped.
//!
//! A reversed curve visits the exact reverse of its base order.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScanKind {
    Horizontal,
    Vertical,
    Diagonal,
    FlippedDiagonal,
    Zigzag,
    ZOrder,
    Hilbert,
}

impl ScanKind {
    pub const ALL: [ScanKind; 7] = [
        ScanKind::Horizontal,
        ScanKind::Vertical,
        ScanKind::Diagonal,
        ScanKind::FlippedDiagonal,
        ScanKind::Zigzag,
        ScanKind::ZOrder,
        ScanKind::Hilbert,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScanKind::Horizontal => "horizontal",
            ScanKind::Vertical => "vertical",
            ScanKind::Diagonal => "diagonal",
            ScanKind::FlippedDiagonal => "flipped_diagonal",
            ScanKind::Zigzag => "zigzag",
            ScanKind::ZOrder => "zorder",
            ScanKind::Hilbert => "hilbert",
        }
    }
}

impl fmt::Display for ScanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScanKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScanKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown scan kind '{s}'")))
    }
}

/// A scan kind plus orientation; the unit of a scan strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CurveSpec {
    pub kind: ScanKind,
    pub reversed: bool,
}

impl CurveSpec {
    pub const fn new(kind: ScanKind, reversed: bool) -> Self {
        CurveSpec { kind, reversed }
    }

    pub fn build(self, height: usize, width: usize) -> Result<ScanCurve> {
        build_curve(self.kind, self.reversed, height, width)
    }
}

impl fmt::Display for CurveSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.reversed {
            write!(f, "{}_rev", self.kind)
        } else {
            write!(f, "{}", self.kind)
        }
    }
}

impl FromStr for CurveSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_suffix("_rev") {
            Some(base) => Ok(CurveSpec::new(base.parse()?, true)),
            None => Ok(CurveSpec::new(s.parse()?, false)),
        }
    }
}

/// Named scan strategy: which curves the scan groups cycle through.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScanSet {
    /// horizontal, vertical and both reversals.
    TwoD,
    /// diagonal, flipped diagonal and both reversals.
    Diagonal,
    Zigzag,
    ZOrder,
    Hilbert,
    /// `TwoD` followed by `Diagonal`: eight sequences.
    AllAround,
    Explicit(Vec<CurveSpec>),
}

impl ScanSet {
    pub fn curves(&self) -> Vec<CurveSpec> {
        use ScanKind::*;
        let pair = |k| [CurveSpec::new(k, false), CurveSpec::new(k, true)];
        let quad = |a, b| {
            vec![
                CurveSpec::new(a, false),
                CurveSpec::new(b, false),
                CurveSpec::new(a, true),
                CurveSpec::new(b, true),
            ]
        };
        match self {
            ScanSet::TwoD => quad(Horizontal, Vertical),
            ScanSet::Diagonal => quad(Diagonal, FlippedDiagonal),
            ScanSet::Zigzag => pair(Zigzag).to_vec(),
            ScanSet::ZOrder => pair(ZOrder).to_vec(),
            ScanSet::Hilbert => pair(Hilbert).to_vec(),
            ScanSet::AllAround => {
                let mut v = quad(Horizontal, Vertical);
                v.extend(quad(Diagonal, FlippedDiagonal));
                v
            }
            ScanSet::Explicit(v) => v.clone(),
        }
    }
}

impl fmt::Display for ScanSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScanSet::TwoD => f.write_str("2d"),
            ScanSet::Diagonal => f.write_str("diagonal"),
            ScanSet::Zigzag => f.write_str("zigzag"),
            ScanSet::ZOrder => f.write_str("zorder"),
            ScanSet::Hilbert => f.write_str("hilbert"),
            ScanSet::AllAround => f.write_str("all_around"),
            ScanSet::Explicit(v) => {
                let names: Vec<String> = v.iter().map(|c| c.to_string()).collect();
                f.write_str(&names.join(","))
            }
        }
    }
}

impl FromStr for ScanSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "2d" => ScanSet::TwoD,
            "diagonal" => ScanSet::Diagonal,
            "zigzag" => ScanSet::Zigzag,
            "zorder" => ScanSet::ZOrder,
            "hilbert" => ScanSet::Hilbert,
            "all_around" => ScanSet::AllAround,
            list => {
                let curves = list
                    .split(',')
                    .map(|p| p.trim().parse())
                    .collect::<Result<Vec<CurveSpec>>>()?;
                if curves.is_empty() {
                    return Err(Error::config("empty scan set"));
                }
                ScanSet::Explicit(curves)
            }
        })
    }
}

/// A bijective visiting order over an `H × W` grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanCurve {
    kind: ScanKind,
    reversed: bool,
    height: usize,
    width: usize,
    order: Vec<usize>,
    inverse: Vec<usize>,
}

/// Statistics of sequence distance between 4-neighbor cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalityProfile {
    pub mean_1d_distance: f64,
    pub max_1d_distance: usize,
    /// Number of horizontally or vertically adjacent cell pairs.
    pub pairs: usize,
}

fn diagonal_cells(h: usize, w: usize, alternate: bool) -> Vec<(usize, usize)> {
    let mut cells = Vec::with_capacity(h * w);
    for d in 0..h + w - 1 {
        let r_lo = d.saturating_sub(w - 1);
        let r_hi = d.min(h - 1);
        if alternate && d % 2 == 0 {
            cells.extend((r_lo..=r_hi).rev().map(|r| (r, d - r)));
        } else {
            cells.extend((r_lo..=r_hi).map(|r| (r, d - r)));
        }
    }
    cells
}

fn enclosing_pow2(h: usize, w: usize) -> usize {
    h.max(w).next_power_of_two()
}

/// Splits a Morton code into `(row, col)`; column bits occupy even positions.
fn morton_decode(code: usize) -> (usize, usize) {
    let (mut row, mut col) = (0, 0);
    let mut bit = 0;
    let mut c = code;
    while c != 0 {
        col |= (c & 1) << bit;
        row |= ((c >> 1) & 1) << bit;
        c >>= 2;
        bit += 1;
    }
    (row, col)
}

/// Distance `d` along a Hilbert curve on an `n × n` grid (`n` a power of
/// two) to `(row, col)`.
fn hilbert_decode(n: usize, d: usize) -> (usize, usize) {
    let (mut x, mut y) = (0usize, 0usize);
    let mut t = d;
    let mut s = 1;
    while s < n {
        let rx = 1 & (t / 2);
        let ry = 1 & (t ^ rx);
        if ry == 0 {
            if rx == 1 {
                x = s - 1 - x;
                y = s - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        x += s * rx;
        y += s * ry;
        t /= 4;
        s *= 2;
    }
    (x, y)
}

/// Builds the visiting order for `kind` over an `height × width` grid.
pub fn build_curve(kind: ScanKind, reversed: bool, height: usize, width: usize) -> Result<ScanCurve> {
    if height == 0 || width == 0 {
        return Err(Error::config(format!(
            "scan curve needs positive extents, got {height}×{width}"
        )));
    }
    let (h, w) = (height, width);
    let idx = |(r, c): (usize, usize)| r * w + c;
    let mut order: Vec<usize> = match kind {
        ScanKind::Horizontal => (0..h * w).collect(),
        ScanKind::Vertical => (0..w).flat_map(|c| (0..h).map(move |r| r * w + c)).collect(),
        ScanKind::Diagonal => diagonal_cells(h, w, false).into_iter().map(idx).collect(),
        ScanKind::FlippedDiagonal => diagonal_cells(h, w, false)
            .into_iter()
            .map(|(r, c)| idx((r, w - 1 - c)))
            .collect(),
        ScanKind::Zigzag => diagonal_cells(h, w, true).into_iter().map(idx).collect(),
        ScanKind::ZOrder => {
            let n = enclosing_pow2(h, w);
            (0..n * n)
                .map(morton_decode)
                .filter(|&(r, c)| r < h && c < w)
                .map(idx)
                .collect()
        }
        ScanKind::Hilbert => {
            let n = enclosing_pow2(h, w);
            (0..n * n)
                .map(|d| hilbert_decode(n, d))
                .filter(|&(r, c)| r < h && c < w)
                .map(idx)
                .collect()
        }
    };
    if reversed {
        order.reverse();
    }
    let mut inverse = vec![0; order.len()];
    for (t, &cell) in order.iter().enumerate() {
        inverse[cell] = t;
    }
    Ok(ScanCurve {
        kind,
        reversed,
        height,
        width,
        order,
        inverse,
    })
}

impl ScanCurve {
    pub fn kind(&self) -> ScanKind {
        self.kind
    }

    pub fn reversed(&self) -> bool {
        self.reversed
    }

    pub fn spec(&self) -> CurveSpec {
        CurveSpec::new(self.kind, self.reversed)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `order()[t]` is the row-major cell visited at step `t`.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// `inverse()[cell]` is the step at which `cell` is visited.
    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn cell(&self, step: usize) -> (usize, usize) {
        let i = self.order[step];
        (i / self.width, i % self.width)
    }

    /// `step,row,col` lines with a header, LF-terminated.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,row,col\n");
        for t in 0..self.len() {
            let (r, c) = self.cell(t);
            s.push_str(&format!("{t},{r},{c}\n"));
        }
        s
    }

    pub fn locality_profile(&self) -> LocalityProfile {
        let (h, w) = (self.height, self.width);
        let pos = &self.inverse;
        let mut total = 0usize;
        let mut max = 0usize;
        let mut pairs = 0usize;
        let mut visit = |a: usize, b: usize| {
            let d = pos[a].abs_diff(pos[b]);
            total += d;
            max = max.max(d);
            pairs += 1;
        };
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                if c + 1 < w {
                    visit(i, i + 1);
                }
                if r + 1 < h {
                    visit(i, i + w);
                }
            }
        }
        LocalityProfile {
            mean_1d_distance: if pairs == 0 { 0.0 } else { total as f64 / pairs as f64 },
            max_1d_distance: max,
            pairs,
        }
    }

    /// Flat gather index taking `H×W×C` storage to `L×C` sequence order.
    pub fn gather_index(&self, channels: usize) -> Vec<usize> {
        self.order
            .iter()
            .flat_map(|&cell| (0..channels).map(move |ch| cell * channels + ch))
            .collect()
    }

    /// Flat gather index taking `L×C` sequence storage back to `H×W×C`.
    pub fn scatter_index(&self, channels: usize) -> Vec<usize> {
        self.inverse
            .iter()
            .flat_map(|&t| (0..channels).map(move |ch| t * channels + ch))
            .collect()
    }
}

pub fn locality_profile(curve: &ScanCurve) -> LocalityProfile {
    curve.locality_profile()
}

/// Flattens `x: H×W×C` into `L×C` following `curve`.
pub fn apply_curve<T: Real>(g: &mut Graph<T>, x: Var, curve: &ScanCurve) -> Result<Var> {
    let s = g.shape(x);
    if s.len() != 3 || s[0] != curve.height || s[1] != curve.width {
        return Err(Error::dim(
            "apply_curve",
            format!("tensor {s:?} vs curve {}×{}", curve.height, curve.width),
        ));
    }
    let c = s[2];
    g.gather(x, Arc::new(curve.gather_index(c)), &[curve.len(), c])
}

/// Restores `seq: L×C` to `H×W×C`; exact inverse of [`apply_curve`].
pub fn invert_curve<T: Real>(g: &mut Graph<T>, seq: Var, curve: &ScanCurve) -> Result<Var> {
    let s = g.shape(seq);
    if s.len() != 2 || s[0] != curve.len() {
        return Err(Error::dim(
            "invert_curve",
            format!("sequence {s:?} vs curve length {}", curve.len()),
        ));
    }
    let c = s[1];
    g.gather(
        seq,
        Arc::new(curve.scatter_index(c)),
        &[curve.height, curve.width, c],
    )
}
