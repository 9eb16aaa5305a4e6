//! Arclength-parameterized reference paths built from cubic splines.

use crate::sim::vehicle::{wrap_angle, VehicleState};
use crate::{Error, Result};

/// Natural cubic spline through `(t_i, v_i)`.
#[derive(Debug, Clone)]
struct CubicSpline {
    knots: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
}

impl CubicSpline {
    fn new(knots: &[f64], values: &[f64]) -> Self {
        let n = knots.len();
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        // Tridiagonal system for second-derivative coefficients (natural ends).
        let mut diag = vec![1.0; n];
        let mut upper = vec![0.0; n];
        let mut lower = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 1..n - 1 {
            lower[i] = h[i - 1];
            diag[i] = 2.0 * (h[i - 1] + h[i]);
            upper[i] = h[i];
            rhs[i] = 3.0 * ((values[i + 1] - values[i]) / h[i] - (values[i] - values[i - 1]) / h[i - 1]);
        }
        // Thomas algorithm
        for i in 1..n {
            let w = lower[i] / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        let mut c = vec![0.0; n];
        c[n - 1] = rhs[n - 1] / diag[n - 1];
        for i in (0..n - 1).rev() {
            c[i] = (rhs[i] - upper[i] * c[i + 1]) / diag[i];
        }
        let mut b = vec![0.0; n - 1];
        let mut d = vec![0.0; n - 1];
        for i in 0..n - 1 {
            b[i] = (values[i + 1] - values[i]) / h[i] - h[i] * (c[i + 1] + 2.0 * c[i]) / 3.0;
            d[i] = (c[i + 1] - c[i]) / (3.0 * h[i]);
        }
        Self {
            knots: knots.to_vec(),
            a: values[..n - 1].to_vec(),
            b,
            c: c[..n - 1].to_vec(),
            d,
        }
    }

    fn segment(&self, t: f64) -> (usize, f64) {
        let last = self.a.len() - 1;
        let i = match self.knots.binary_search_by(|k| k.total_cmp(&t)) {
            Ok(i) => i.min(last),
            Err(i) => i.saturating_sub(1).min(last),
        };
        (i, t - self.knots[i])
    }

    /// Value, first and second derivative at `t`.
    fn eval(&self, t: f64) -> [f64; 3] {
        let (i, dt) = self.segment(t);
        let (a, b, c, d) = (self.a[i], self.b[i], self.c[i], self.d[i]);
        [
            a + dt * (b + dt * (c + dt * d)),
            b + dt * (2.0 * c + 3.0 * dt * d),
            2.0 * c + 6.0 * dt * d,
        ]
    }
}

/// Vehicle pose relative to the path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingError {
    /// Signed lateral offset, left of the path positive.
    pub lateral: f64,
    pub heading: f64,
    pub station: f64,
}

/// Lookahead target in the current body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionFeatures {
    pub dy_body: f64,
    pub dpsi: f64,
}

/// Expresses pose `to` in the body frame of pose `from`.
pub fn relative_pose(from: (f64, f64, f64), to: (f64, f64, f64)) -> TransitionFeatures {
    let (sin, cos) = from.2.sin_cos();
    let dx = to.0 - from.0;
    let dy = to.1 - from.1;
    TransitionFeatures {
        dy_body: -sin * dx + cos * dy,
        dpsi: wrap_angle(to.2 - from.2),
    }
}

const SAMPLE_SPACING: f64 = 0.5;
/// How far behind the previous foot point the local search may look.
const MAX_STATION_REGRESS: f64 = 1.0;
const SEARCH_AHEAD: f64 = 15.0;

#[derive(Debug, Clone)]
pub struct ReferencePath {
    waypoints: Vec<(f64, f64)>,
    arclength: Vec<f64>,
    headings: Vec<f64>,
    curvatures: Vec<f64>,
    section_boundaries: Vec<f64>,
    sx: CubicSpline,
    sy: CubicSpline,
}

impl ReferencePath {
    /// Fits a spline through `waypoints`, parameterized by arclength.
    ///
    /// `section_boundaries` are the arclength marks where each section starts;
    /// an empty list means a single section starting at 0.
    pub fn from_waypoints(waypoints: &[(f64, f64)], section_boundaries: Vec<f64>) -> Result<Self> {
        if waypoints.len() < 4 {
            return Err(Error::BadWaypoints(format!(
                "need at least 4 points, got {}",
                waypoints.len()
            )));
        }
        if waypoints.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::BadWaypoints("non-finite coordinate".into()));
        }
        let mut knots = vec![0.0];
        for w in waypoints.windows(2) {
            let chord = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
            if chord < 1e-9 {
                return Err(Error::BadWaypoints("duplicate consecutive waypoints".into()));
            }
            knots.push(knots.last().unwrap() + chord);
        }
        let xs: Vec<f64> = waypoints.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = waypoints.iter().map(|p| p.1).collect();
        let mut sx = CubicSpline::new(&knots, &xs);
        let mut sy = CubicSpline::new(&knots, &ys);
        // Chord-length knots only approximate arclength; refit on measured
        // segment lengths until the parameter is arclength.
        for _ in 0..4 {
            let mut next = vec![0.0];
            for i in 0..knots.len() - 1 {
                let len = segment_length(&sx, &sy, knots[i], knots[i + 1]);
                next.push(next.last().unwrap() + len);
            }
            knots = next;
            sx = CubicSpline::new(&knots, &xs);
            sy = CubicSpline::new(&knots, &ys);
        }
        let mut section_boundaries = section_boundaries;
        if section_boundaries.is_empty() {
            section_boundaries.push(0.0);
        }
        let mut path = Self {
            waypoints: waypoints.to_vec(),
            arclength: knots.clone(),
            headings: Vec::new(),
            curvatures: Vec::new(),
            section_boundaries,
            sx,
            sy,
        };
        path.headings = knots.iter().map(|&s| path.heading(s)).collect();
        path.curvatures = knots.iter().map(|&s| path.curvature(s)).collect();
        Ok(path)
    }

    pub fn length(&self) -> f64 {
        *self.arclength.last().unwrap()
    }

    pub fn waypoints(&self) -> &[(f64, f64)] {
        &self.waypoints
    }

    pub fn arclength_table(&self) -> &[f64] {
        &self.arclength
    }

    pub fn headings(&self) -> &[f64] {
        &self.headings
    }

    pub fn curvatures(&self) -> &[f64] {
        &self.curvatures
    }

    pub fn section_boundaries(&self) -> &[f64] {
        &self.section_boundaries
    }

    pub fn section_count(&self) -> usize {
        self.section_boundaries.len()
    }

    /// Index of the section containing station `s`.
    pub fn section_at(&self, s: f64) -> usize {
        self.section_boundaries
            .iter()
            .rposition(|&b| b <= s)
            .unwrap_or(0)
    }

    /// End station of section `i`.
    pub fn section_end(&self, i: usize) -> f64 {
        self.section_boundaries
            .get(i + 1)
            .copied()
            .unwrap_or_else(|| self.length())
    }

    pub fn position(&self, s: f64) -> (f64, f64) {
        (self.sx.eval(s)[0], self.sy.eval(s)[0])
    }

    pub fn heading(&self, s: f64) -> f64 {
        let dx = self.sx.eval(s)[1];
        let dy = self.sy.eval(s)[1];
        dy.atan2(dx)
    }

    pub fn curvature(&self, s: f64) -> f64 {
        let [_, dx, ddx] = self.sx.eval(s);
        let [_, dy, ddy] = self.sy.eval(s);
        (dx * ddy - dy * ddx) / (dx * dx + dy * dy).powf(1.5)
    }

    pub fn pose(&self, s: f64) -> (f64, f64, f64) {
        let (x, y) = self.position(s);
        (x, y, self.heading(s))
    }

    /// Nearest station over the whole path; used once at episode start.
    pub fn global_station(&self, x: f64, y: f64) -> f64 {
        self.nearest_in(x, y, 0.0, self.length())
    }

    fn nearest_in(&self, x: f64, y: f64, lo: f64, hi: f64) -> f64 {
        let n = ((hi - lo) / SAMPLE_SPACING).ceil().max(1.0) as usize;
        let mut best = (f64::INFINITY, lo);
        for i in 0..=n {
            let s = (lo + (hi - lo) * i as f64 / n as f64).min(hi);
            let (px, py) = self.position(s);
            let d = (px - x).powi(2) + (py - y).powi(2);
            if d < best.0 {
                best = (d, s);
            }
        }
        // Newton refinement of (p(s) - q) . p'(s) = 0
        let mut s = best.1;
        for _ in 0..20 {
            let [px, dx, ddx] = self.sx.eval(s);
            let [py, dy, ddy] = self.sy.eval(s);
            let (ex, ey) = (px - x, py - y);
            let f = ex * dx + ey * dy;
            let df = dx * dx + dy * dy + ex * ddx + ey * ddy;
            if df <= 0.0 {
                break;
            }
            let next = (s - f / df).clamp(lo, hi);
            let done = (next - s).abs() < 1e-13;
            s = next;
            if done {
                break;
            }
        }
        s
    }

    /// Foot point and errors of `state`, searching near `prev_station`.
    pub fn tracking_error(&self, state: &VehicleState, prev_station: f64) -> Result<TrackingError> {
        let len = self.length();
        let lo = (prev_station - MAX_STATION_REGRESS).max(0.0);
        let hi = (prev_station + SEARCH_AHEAD).min(len);
        let station = self.nearest_in(state.pos_x, state.pos_y, lo, hi);
        if station >= len - 1e-9 {
            return Err(Error::PathExhausted { station, length: len });
        }
        let (px, py, heading) = self.pose(station);
        let (sin, cos) = heading.sin_cos();
        let lateral = -sin * (state.pos_x - px) + cos * (state.pos_y - py);
        Ok(TrackingError {
            lateral,
            heading: wrap_angle(state.yaw - heading),
            station,
        })
    }

    /// The path pose `vx * window` ahead of `station`, in the vehicle body frame.
    pub fn lookahead_target(
        &self,
        state: &VehicleState,
        station: f64,
        window: f64,
    ) -> Result<TransitionFeatures> {
        let target = station + state.vx * window;
        if target > self.length() {
            return Err(Error::PathExhausted {
                station: target,
                length: self.length(),
            });
        }
        Ok(relative_pose(
            (state.pos_x, state.pos_y, state.yaw),
            self.pose(target),
        ))
    }
}

fn segment_length(sx: &CubicSpline, sy: &CubicSpline, a: f64, b: f64) -> f64 {
    // 5-point Gauss-Legendre on |p'(t)|
    const NODES: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683,
        0.538_469_310_105_683,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_889,
        0.478_628_670_499_366,
        0.478_628_670_499_366,
        0.236_926_885_056_189,
        0.236_926_885_056_189,
    ];
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    NODES
        .iter()
        .zip(WEIGHTS)
        .map(|(&n, w)| {
            let t = mid + half * n;
            w * sx.eval(t)[1].hypot(sy.eval(t)[1])
        })
        .sum::<f64>()
        * half
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight() -> ReferencePath {
        let pts: Vec<(f64, f64)> = (0..=100).map(|i| (i as f64, 0.0)).collect();
        ReferencePath::from_waypoints(&pts, vec![]).unwrap()
    }

    fn circle(radius: f64) -> ReferencePath {
        // counter-clockwise arc starting at the origin heading east
        let pts: Vec<(f64, f64)> = (0..=300)
            .map(|i| {
                let th = i as f64 * 0.5 / radius;
                (radius * th.sin(), radius * (1.0 - th.cos()))
            })
            .collect();
        ReferencePath::from_waypoints(&pts, vec![]).unwrap()
    }

    #[test]
    fn on_path_state_has_zero_error() {
        let p = straight();
        let s = VehicleState::new(30.0, 0.0, 0.0, 10.0);
        let e = p.tracking_error(&s, 29.0).unwrap();
        assert!(e.lateral.abs() < 1e-12 && e.heading.abs() < 1e-12);
        assert!((e.station - 30.0).abs() < 1e-9);
    }

    #[test]
    fn left_offset_is_positive() {
        let p = straight();
        let s = VehicleState::new(30.0, 0.5, 0.0, 10.0);
        let e = p.tracking_error(&s, 30.0).unwrap();
        assert!((e.lateral - 0.5).abs() < 1e-12);
        assert!(e.heading.abs() < 1e-12);
    }

    #[test]
    fn rotated_heading_error() {
        let p = straight();
        let s = VehicleState::new(30.0, 0.0, 0.1, 10.0);
        let e = p.tracking_error(&s, 30.0).unwrap();
        assert!(e.lateral.abs() < 1e-12);
        assert!((e.heading - 0.1).abs() < 1e-12);
    }

    #[test]
    fn path_end_is_exhausted() {
        let p = straight();
        let s = VehicleState::new(105.0, 0.0, 0.0, 10.0);
        assert!(matches!(
            p.tracking_error(&s, 99.5),
            Err(Error::PathExhausted { .. })
        ));
    }

    #[test]
    fn station_does_not_jump_backwards() {
        let p = straight();
        let s = VehicleState::new(10.0, 0.0, 0.0, 10.0);
        let e = p.tracking_error(&s, 40.0).unwrap();
        assert!(e.station >= 39.0 - 1e-12);
    }

    #[test]
    fn straight_lookahead() {
        let p = straight();
        let s = VehicleState::new(10.0, 0.0, 0.0, 10.0);
        let t = p.lookahead_target(&s, 10.0, 0.5).unwrap();
        assert!(t.dy_body.abs() < 1e-12 && t.dpsi.abs() < 1e-12);
        let s = VehicleState::new(10.0, 1.0, 0.0, 10.0);
        let t = p.lookahead_target(&s, 10.0, 0.5).unwrap();
        assert!((t.dy_body + 1.0).abs() < 1e-12 && t.dpsi.abs() < 1e-12);
    }

    #[test]
    fn circle_lookahead_matches_geometry() {
        let p = circle(50.0);
        let s = VehicleState::new(0.0, 0.0, 0.0, 10.0);
        let t = p.lookahead_target(&s, 0.0, 0.5).unwrap();
        // dpsi = vx dt / R = 0.1 ; dy = R (1 - cos 0.1) = 0.24979...
        assert!((t.dpsi - 0.1).abs() < 1e-6, "{}", t.dpsi);
        let expect = 50.0 * (1.0 - 0.1f64.cos());
        assert!((t.dy_body - expect).abs() < 1e-5, "{} vs {expect}", t.dy_body);
        assert!((p.curvature(40.0) - 0.02).abs() < 1e-4);
    }

    #[test]
    fn arclength_is_true_length() {
        let p = circle(50.0);
        // 300 half-meter arcs
        assert!((p.length() - 150.0).abs() < 1e-5, "{}", p.length());
        assert!(p.arclength_table().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rejects_short_or_duplicate_waypoints() {
        let three = [(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)];
        assert!(matches!(
            ReferencePath::from_waypoints(&three, vec![]),
            Err(Error::BadWaypoints(_))
        ));
        let dup = [(0.0, 0.0), (1.0, 0.0), (1.0, 0.0), (2.0, 0.0)];
        assert!(matches!(
            ReferencePath::from_waypoints(&dup, vec![]),
            Err(Error::BadWaypoints(_))
        ));
    }

    #[test]
    fn sections() {
        let pts: Vec<(f64, f64)> = (0..=30).map(|i| (i as f64 * 10.0, 0.0)).collect();
        let p = ReferencePath::from_waypoints(&pts, vec![0.0, 100.0, 200.0]).unwrap();
        assert_eq!(p.section_at(50.0), 0);
        assert_eq!(p.section_at(100.0), 1);
        assert_eq!(p.section_at(250.0), 2);
        assert!((p.section_end(2) - 300.0).abs() < 1e-9);
    }
}
