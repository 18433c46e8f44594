//! Planar point patterns on rectangular windows, summary geometry, and the
//! on-disk pattern format.

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

/// A point in the plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, other: &Point) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn dist_sq(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// An axis-aligned rectangular observation window `[x0,x1] x [y0,y1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Window {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite()) {
            return Err(Error::InvalidWindow("window bounds must be finite".into()));
        }
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::InvalidWindow(format!(
                "window must have positive side lengths, got [{x0},{x1}]x[{y0},{y1}]"
            )));
        }
        Ok(Window { x0, x1, y0, y1 })
    }

    /// The unit square `[0,1]^2`.
    pub fn unit() -> Self {
        Window {
            x0: 0.0,
            x1: 1.0,
            y0: 0.0,
            y1: 1.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn shorter_side(&self) -> f64 {
        self.width().min(self.height())
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }
}

/// A finite point pattern observed on a window.
#[derive(Clone, Debug, PartialEq)]
pub struct PointPattern {
    window: Window,
    points: Vec<Point>,
}

impl PointPattern {
    /// Build a pattern, checking every point lies in the window (closed
    /// boundary) and has finite, pairwise bitwise-distinct coordinates.
    /// Duplicate locations are rejected: the processes modelled here are
    /// simple, and several estimators divide by inter-point distances.
    pub fn new(window: Window, points: Vec<Point>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite()) {
                return Err(Error::InvalidPattern(format!(
                    "point {i} has non-finite coordinates"
                )));
            }
            if !window.contains(p) {
                return Err(Error::InvalidPattern(format!(
                    "point {i} = ({}, {}) lies outside the window",
                    p.x, p.y
                )));
            }
        }
        let mut sorted: Vec<(u64, u64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.x.to_bits(), p.y.to_bits(), i))
            .collect();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::InvalidPattern(format!(
                    "points {} and {} coincide",
                    w[0].2.min(w[1].2),
                    w[0].2.max(w[1].2)
                )));
            }
        }
        Ok(PointPattern { window, points })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Number of unordered pairs at distance <= r (closed inequality).
    pub fn close_pair_count(&self, r: f64) -> usize {
        let r2 = r * r;
        let pts = &self.points;
        let mut count = 0usize;
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                if pts[i].dist_sq(&pts[j]) <= r2 {
                    count += 1;
                }
            }
        }
        count
    }

    /// Number of pattern points within distance r of `u` (closed), not
    /// counting a pattern point bitwise equal to `u` itself.
    pub fn neighbour_count(&self, u: &Point, r: f64) -> usize {
        let r2 = r * r;
        self.points
            .iter()
            .filter(|p| !(p.x == u.x && p.y == u.y) && p.dist_sq(u) <= r2)
            .count()
    }

    /// Smallest inter-point distance, or None for patterns with < 2 points.
    pub fn min_pairwise_distance(&self) -> Option<f64> {
        let pts = &self.points;
        if pts.len() < 2 {
            return None;
        }
        let mut best = f64::INFINITY;
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let d = pts[i].dist_sq(&pts[j]);
                if d < best {
                    best = d;
                }
            }
        }
        Some(best.sqrt())
    }

    /// Map a pattern affinely onto the unit square.
    pub fn rescale_to_unit(&self) -> PointPattern {
        let w = &self.window;
        let points = self
            .points
            .iter()
            .map(|p| Point::new((p.x - w.x0) / w.width(), (p.y - w.y0) / w.height()))
            .collect();
        PointPattern {
            window: Window::unit(),
            points,
        }
    }
}

/// Isotropic edge-correction weight for an ordered pair `(u, v)` in `w`:
/// the reciprocal of the fraction of the circle centred at `u` through `v`
/// that lies inside the window.
///
/// The exterior angle is accumulated per edge (`2*acos(d_e/r)` whenever the
/// edge is closer than `r`), then corner lobes double-counted by two adjacent
/// edges are subtracted: at a corner with perpendicular distances `a`, `b`
/// and `a^2 + b^2 < r^2`, the overlap is `asin(a/r) + asin(b/r) - pi/2`.
/// Exact for circles reaching at most two adjacent edges, which is
/// guaranteed for `r` up to half the shorter window side; the weight then
/// lies in `[1, 4]`.
pub fn isotropic_edge_weight(u: &Point, v: &Point, w: &Window) -> Result<f64> {
    let r = u.dist(v);
    if r == 0.0 {
        return Err(Error::EstimatorUndefined(
            "edge weight undefined for coincident points".into(),
        ));
    }
    // Perpendicular distances from u to the four edges.
    let d_left = u.x - w.x0;
    let d_right = w.x1 - u.x;
    let d_bottom = u.y - w.y0;
    let d_top = w.y1 - u.y;

    let mut exterior = 0.0;
    for d in [d_left, d_right, d_bottom, d_top] {
        if d < r {
            exterior += 2.0 * (d / r).acos();
        }
    }
    // Corner overlaps: (horizontal edge, vertical edge) pairs.
    for (a, b) in [
        (d_left, d_bottom),
        (d_left, d_top),
        (d_right, d_bottom),
        (d_right, d_top),
    ] {
        if a * a + b * b < r * r {
            exterior += (a / r).asin() + (b / r).asin() - std::f64::consts::FRAC_PI_2;
        }
    }
    let inside_fraction = 1.0 - exterior / std::f64::consts::TAU;
    Ok(1.0 / inside_fraction)
}

/// Ripley's K estimate at radius `r` with isotropic edge correction:
/// `|S| / (n(n-1)) * sum over ordered pairs with 0 < d <= r of e(x_i, x_j)`.
///
/// Requires at least two points and `r` no larger than half the shorter
/// window side (the validity bound of the edge correction).
pub fn ripley_k_hat(pattern: &PointPattern, r: f64) -> Result<f64> {
    let n = pattern.len();
    if n < 2 {
        return Err(Error::EstimatorUndefined(format!(
            "K estimate requires at least 2 points, pattern has {n}"
        )));
    }
    if !(r > 0.0) {
        return Err(Error::EstimatorUndefined(format!(
            "K estimate requires r > 0, got {r}"
        )));
    }
    let w = pattern.window();
    let max_r = 0.5 * w.shorter_side();
    if r > max_r {
        return Err(Error::EstimatorUndefined(format!(
            "K estimate radius {r} exceeds half the shorter window side ({max_r})"
        )));
    }
    let pts = pattern.points();
    let r2 = r * r;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d2 = pts[i].dist_sq(&pts[j]);
            if d2 > 0.0 && d2 <= r2 {
                acc += isotropic_edge_weight(&pts[i], &pts[j], w)?;
            }
        }
    }
    Ok(w.area() / (n as f64 * (n - 1) as f64) * acc)
}

/// Format an f64 for the pattern/chain file formats: shortest representation
/// that round-trips (Rust's default Display for f64).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// Read a pattern from the CSV format written by [`write_pattern`]:
/// a `# window: x0 x1 y0 y1` comment, a `x,y` header, one point per line.
pub fn read_pattern(path: &Path) -> Result<PointPattern> {
    let text = std::fs::read_to_string(path)?;
    parse_pattern(&text)
}

pub fn parse_pattern(text: &str) -> Result<PointPattern> {
    let mut window: Option<Window> = None;
    let mut points = Vec::new();
    let mut saw_header = false;
    for (row, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(spec) = rest.strip_prefix("window:") {
                let vals: Vec<f64> = spec
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<f64>().map_err(|_| Error::PatternFormat {
                            row,
                            msg: format!("bad window coordinate {t:?}"),
                        })
                    })
                    .collect::<Result<_>>()?;
                if vals.len() != 4 {
                    return Err(Error::PatternFormat {
                        row,
                        msg: format!("window comment needs 4 values, got {}", vals.len()),
                    });
                }
                window = Some(Window::new(vals[0], vals[1], vals[2], vals[3])?);
            }
            continue;
        }
        if !saw_header {
            if line != "x,y" {
                return Err(Error::PatternFormat {
                    row,
                    msg: format!("expected header \"x,y\", got {line:?}"),
                });
            }
            saw_header = true;
            continue;
        }
        let mut it = line.split(',');
        let (xs, ys) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a.trim(), b.trim()),
            _ => {
                return Err(Error::PatternFormat {
                    row,
                    msg: format!("expected two comma-separated fields, got {line:?}"),
                })
            }
        };
        let x = xs.parse::<f64>().map_err(|_| Error::PatternFormat {
            row,
            msg: format!("bad x coordinate {xs:?}"),
        })?;
        let y = ys.parse::<f64>().map_err(|_| Error::PatternFormat {
            row,
            msg: format!("bad y coordinate {ys:?}"),
        })?;
        points.push(Point::new(x, y));
    }
    let window = window.ok_or(Error::PatternFormat {
        row: 0,
        msg: "missing \"# window: x0 x1 y0 y1\" comment".into(),
    })?;
    if !saw_header {
        return Err(Error::PatternFormat {
            row: 0,
            msg: "missing \"x,y\" header".into(),
        });
    }
    PointPattern::new(window, points)
}

/// Write a pattern as CSV: window comment, header, one `x,y` row per point.
pub fn write_pattern(pattern: &PointPattern, path: &Path) -> Result<()> {
    std::fs::write(path, pattern_to_string(pattern))?;
    Ok(())
}

pub fn pattern_to_string(pattern: &PointPattern) -> String {
    let w = pattern.window();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# window: {} {} {} {}",
        fmt_f64(w.x0),
        fmt_f64(w.x1),
        fmt_f64(w.y0),
        fmt_f64(w.y1)
    );
    out.push_str("x,y\n");
    for p in pattern.points() {
        let _ = writeln!(out, "{},{}", fmt_f64(p.x), fmt_f64(p.y));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pat(points: &[(f64, f64)]) -> PointPattern {
        PointPattern::new(
            Window::unit(),
            points.iter().map(|&(x, y)| Point::new(x, y)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn close_pairs_counts_closed_ball() {
        let p = pat(&[(0.1, 0.1), (0.1, 0.2), (0.9, 0.9)]);
        // distance between first two is exactly 0.1
        assert_eq!(p.close_pair_count(0.1), 1);
        assert_eq!(p.close_pair_count(0.0999), 0);
        assert_eq!(p.close_pair_count(2.0), 3);
    }

    #[test]
    fn neighbour_count_excludes_self() {
        let p = pat(&[(0.5, 0.5), (0.5, 0.55)]);
        assert_eq!(p.neighbour_count(&Point::new(0.5, 0.5), 0.1), 1);
        assert_eq!(p.neighbour_count(&Point::new(0.5, 0.52), 0.1), 2);
    }

    #[test]
    fn duplicate_points_rejected() {
        let err = PointPattern::new(
            Window::unit(),
            vec![Point::new(0.3, 0.3), Point::new(0.3, 0.3)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidPattern(_)));
    }

    #[test]
    fn outside_point_rejected() {
        let err = PointPattern::new(Window::unit(), vec![Point::new(1.2, 0.3)]).unwrap_err();
        assert!(matches!(err, Error::InvalidPattern(_)));
    }

    #[test]
    fn interior_pair_has_unit_weight() {
        let w = Window::unit();
        let u = Point::new(0.5, 0.5);
        let v = Point::new(0.55, 0.5);
        let e = isotropic_edge_weight(&u, &v, &w).unwrap();
        assert!((e - 1.0).abs() < 1e-15);
    }

    /// Monte Carlo oracle: the edge weight is 1 over the fraction of the
    /// circle inside the window, so sample the circle directly.
    fn mc_edge_weight(u: &Point, r: f64, w: &Window, n: usize) -> f64 {
        let mut inside = 0usize;
        for k in 0..n {
            let t = std::f64::consts::TAU * (k as f64 + 0.5) / n as f64;
            let p = Point::new(u.x + r * t.cos(), u.y + r * t.sin());
            if w.contains(&p) {
                inside += 1;
            }
        }
        n as f64 / inside as f64
    }

    #[test]
    fn edge_weight_matches_arc_oracle_edge_case() {
        let w = Window::unit();
        // circle crossing one edge
        let u = Point::new(0.05, 0.5);
        let v = Point::new(0.05, 0.58);
        let e = isotropic_edge_weight(&u, &v, &w).unwrap();
        let oracle = mc_edge_weight(&u, 0.08, &w, 4_000_000);
        assert!((e - oracle).abs() < 1e-5, "{e} vs {oracle}");
    }

    #[test]
    fn edge_weight_matches_arc_oracle_corner_case() {
        let w = Window::unit();
        // circle spilling over a corner: a=0.03, b=0.04, r=0.08
        let u = Point::new(0.03, 0.04);
        let v = Point::new(0.11, 0.04);
        let e = isotropic_edge_weight(&u, &v, &w).unwrap();
        let oracle = mc_edge_weight(&u, 0.08, &w, 4_000_000);
        assert!((e - oracle).abs() < 2e-5, "{e} vs {oracle}");
        assert!(e > 1.0 && e <= 4.0);
    }

    #[test]
    fn edge_weight_corner_point_is_four() {
        // A point exactly on a corner sees a quarter circle.
        let w = Window::unit();
        let u = Point::new(0.0, 0.0);
        let v = Point::new(0.05, 0.0);
        let e = isotropic_edge_weight(&u, &v, &w).unwrap();
        assert!((e - 4.0).abs() < 1e-12);
    }

    #[test]
    fn edge_weight_coincident_errors() {
        let w = Window::unit();
        let u = Point::new(0.4, 0.4);
        assert!(isotropic_edge_weight(&u, &u, &w).is_err());
    }

    /// Hand-computed two-point oracle: both points interior with all edges
    /// farther than d, so both weights are 1 and
    /// K = |S| / (n(n-1)) * 2 = 1/2 * 2 * 1 = 1 * ... spelled out below.
    #[test]
    fn k_hat_two_interior_points() {
        let p = pat(&[(0.4, 0.5), (0.45, 0.5)]);
        // n = 2, area 1, both ordered pairs contribute weight 1 each:
        // K = 1/(2*1) * 2 = 1
        let k = ripley_k_hat(&p, 0.1).unwrap();
        assert!((k - 1.0).abs() < 1e-12);
        // below the pair distance nothing contributes
        let k0 = ripley_k_hat(&p, 0.04).unwrap();
        assert_eq!(k0, 0.0);
    }

    #[test]
    fn k_hat_counts_closed_distance() {
        let p = pat(&[(0.4, 0.5), (0.5, 0.5)]);
        // pair distance exactly 0.1: included at r = 0.1
        let k = ripley_k_hat(&p, 0.1).unwrap();
        assert!(k > 0.0);
    }

    #[test]
    fn k_hat_rejects_degenerate_inputs() {
        let p1 = pat(&[(0.4, 0.5)]);
        assert!(ripley_k_hat(&p1, 0.1).is_err());
        let p2 = pat(&[(0.4, 0.5), (0.6, 0.5)]);
        assert!(ripley_k_hat(&p2, 0.6).is_err()); // beyond half shorter side
        assert!(ripley_k_hat(&p2, 0.0).is_err());
    }

    /// For a binomial (uniform) process, E K(r) = pi r^2. With one fixed
    /// large sample the estimate should land within a few percent.
    #[test]
    fn k_hat_near_poisson_expectation() {
        use crate::runtime::{draw, StreamFamily};
        let fam = StreamFamily::new(2024);
        let mut rng = fam.stream(&[99]);
        let pts: Vec<Point> = (0..400)
            .map(|_| Point::new(draw::unit(&mut rng), draw::unit(&mut rng)))
            .collect();
        let p = PointPattern::new(Window::unit(), pts).unwrap();
        let r = 0.08;
        let k = ripley_k_hat(&p, r).unwrap();
        let expect = std::f64::consts::PI * r * r;
        assert!(
            (k - expect).abs() < 0.25 * expect,
            "K({r}) = {k}, expected about {expect}"
        );
    }

    #[test]
    fn pattern_roundtrip() {
        let p = pat(&[(0.123456789012345, 0.5), (0.9, 0.000001)]);
        let text = pattern_to_string(&p);
        let q = parse_pattern(&text).unwrap();
        assert_eq!(p, q);
        // bitwise round-trip of coordinates
        for (a, b) in p.points().iter().zip(q.points()) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
        }
    }

    #[test]
    fn pattern_parse_errors_carry_row() {
        let text = "# window: 0 1 0 1\nx,y\n0.5,0.5\nnot-a-number,0.2\n";
        let err = parse_pattern(text).unwrap_err();
        match err {
            Error::PatternFormat { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn pattern_missing_window_rejected() {
        let err = parse_pattern("x,y\n0.1,0.1\n").unwrap_err();
        assert!(matches!(err, Error::PatternFormat { .. }));
    }

    #[test]
    fn rescale_maps_onto_unit_square() {
        let w = Window::new(2.0, 6.0, -1.0, 1.0).unwrap();
        let p = PointPattern::new(w, vec![Point::new(4.0, 0.0), Point::new(2.0, -1.0)]).unwrap();
        let u = p.rescale_to_unit();
        assert_eq!(u.window(), &Window::unit());
        assert_eq!(u.points()[0], Point::new(0.5, 0.5));
        assert_eq!(u.points()[1], Point::new(0.0, 0.0));
    }
}
