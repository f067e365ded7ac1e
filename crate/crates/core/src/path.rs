//! Reference paths built from lines, arcs and clothoids, indexed by arc length.

use serde::{Deserialize, Serialize};

use crate::{Result, SteerError};

/// Road curvature bound (1/m).
pub const KAPPA_LIMIT: f64 = 0.0658;
const TANGENT_TOL: f64 = 1e-9;
const POSITION_TOL: f64 = 1e-6;
/// Clothoid positions are tabulated at this spacing and refined locally.
const KNOT_SPACING: f64 = 2.0;
const QUAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Line,
    Arc,
    Clothoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// One segment as described in a path spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub kind: SegmentKind,
    pub length: f64,
    #[serde(default)]
    pub kappa_start: f64,
    #[serde(default)]
    pub kappa_end: f64,
    #[serde(default)]
    pub label: Option<String>,
    /// Optional explicit start pose; must agree with the previous segment's end.
    #[serde(default)]
    pub start_pose: Option<Pose>,
}

impl SegmentSpec {
    pub fn line(length: f64) -> Self {
        Self::new(SegmentKind::Line, length, 0.0, 0.0)
    }

    /// Arc of signed radius `radius` (positive turns left).
    pub fn arc(radius: f64, length: f64) -> Self {
        Self::new(SegmentKind::Arc, length, 1.0 / radius, 1.0 / radius)
    }

    pub fn clothoid(kappa_start: f64, kappa_end: f64, length: f64) -> Self {
        Self::new(SegmentKind::Clothoid, length, kappa_start, kappa_end)
    }

    fn new(kind: SegmentKind, length: f64, k0: f64, k1: f64) -> Self {
        SegmentSpec {
            kind,
            length,
            kappa_start: k0,
            kappa_end: k1,
            label: None,
            start_pose: None,
        }
    }

    pub fn labeled(mut self, label: &str) -> Self {
        self.label = Some(label.to_string());
        self
    }

    /// Heading change across the segment.
    pub fn sweep(&self) -> f64 {
        0.5 * (self.kappa_start + self.kappa_end) * self.length
    }

    fn validate(&self, idx: usize) -> Result<()> {
        let err = |msg: String| Err(SteerError::Path(format!("segment {idx}: {msg}")));
        if !(self.length.is_finite() && self.length > 0.0) {
            return err(format!("length must be positive, got {}", self.length));
        }
        let (k0, k1) = (self.kappa_start, self.kappa_end);
        if !(k0.is_finite() && k1.is_finite()) {
            return err("non-finite curvature".into());
        }
        match self.kind {
            SegmentKind::Line if k0 != 0.0 || k1 != 0.0 => {
                return err("line must have zero curvature".into())
            }
            SegmentKind::Arc if k0 != k1 || k0 == 0.0 => {
                return err("arc needs equal, nonzero end curvatures".into())
            }
            _ => {}
        }
        if k0.abs() > KAPPA_LIMIT || k1.abs() > KAPPA_LIMIT {
            return err(format!("curvature exceeds {KAPPA_LIMIT} 1/m"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefSample {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    /// Tangent heading, continuous (not wrapped) along the path.
    pub theta: f64,
    pub kappa: f64,
    /// dκ/ds.
    pub dkappa: f64,
    pub seg_index: usize,
    /// Set when the query fell outside `[0, length]`.
    pub clamped: bool,
}

#[derive(Debug, Clone)]
struct Segment {
    spec: SegmentSpec,
    s0: f64,
    start: Pose,
    /// Clothoid only: (local s, x, y) knots.
    knots: Vec<(f64, f64, f64)>,
}

impl Segment {
    fn rate(&self) -> f64 {
        (self.spec.kappa_end - self.spec.kappa_start) / self.spec.length
    }

    fn heading(&self, u: f64) -> f64 {
        self.start.theta + self.spec.kappa_start * u + 0.5 * self.rate() * u * u
    }

    fn position(&self, u: f64) -> (f64, f64) {
        let p = self.start;
        match self.spec.kind {
            SegmentKind::Line => (p.x + u * p.theta.cos(), p.y + u * p.theta.sin()),
            SegmentKind::Arc => {
                let k = self.spec.kappa_start;
                let th = p.theta + k * u;
                (
                    p.x + (th.sin() - p.theta.sin()) / k,
                    p.y - (th.cos() - p.theta.cos()) / k,
                )
            }
            SegmentKind::Clothoid => {
                let i = ((u / KNOT_SPACING) as usize).min(self.knots.len() - 1);
                let (u0, x0, y0) = self.knots[i];
                let (dx, dy) = self.integrate(u0, u);
                (x0 + dx, y0 + dy)
            }
        }
    }

    /// ∫ (cos θ, sin θ) du over [a, b].
    fn integrate(&self, a: f64, b: f64) -> (f64, f64) {
        if b <= a {
            return (0.0, 0.0);
        }
        let f = |u: f64| {
            let (s, c) = self.heading(u).sin_cos();
            (c, s)
        };
        adaptive_gl(&f, a, b, QUAD_TOL, 0)
    }
}

const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
    0.236_926_885_056_189_1,
];

fn gl5(f: &impl Fn(f64) -> (f64, f64), a: f64, b: f64) -> (f64, f64) {
    let m = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = (0.0, 0.0);
    for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
        let v = f(m + h * x);
        acc.0 += w * v.0;
        acc.1 += w * v.1;
    }
    (acc.0 * h, acc.1 * h)
}

fn adaptive_gl(f: &impl Fn(f64) -> (f64, f64), a: f64, b: f64, tol: f64, depth: u32) -> (f64, f64) {
    let whole = gl5(f, a, b);
    let m = 0.5 * (a + b);
    let l = gl5(f, a, m);
    let r = gl5(f, m, b);
    let split = (l.0 + r.0, l.1 + r.1);
    let err = (split.0 - whole.0).abs().max((split.1 - whole.1).abs());
    if err < tol || depth > 30 {
        split
    } else {
        let l = adaptive_gl(f, a, m, 0.5 * tol, depth + 1);
        let r = adaptive_gl(f, m, b, 0.5 * tol, depth + 1);
        (l.0 + r.0, l.1 + r.1)
    }
}

#[derive(Debug, Clone)]
pub struct Path {
    segments: Vec<Segment>,
    length: f64,
}

pub fn build_path(specs: &[SegmentSpec]) -> Result<Path> {
    build_path_from(specs, Pose::default())
}

pub fn build_path_from(specs: &[SegmentSpec], origin: Pose) -> Result<Path> {
    if specs.is_empty() {
        return Err(SteerError::Path("no segments".into()));
    }
    let mut segments: Vec<Segment> = Vec::with_capacity(specs.len());
    let mut s0 = 0.0;
    let mut pose = origin;
    for (idx, spec) in specs.iter().enumerate() {
        spec.validate(idx)?;
        if let Some(p) = spec.start_pose {
            if idx == 0 {
                pose = p;
            } else {
                let dth = crate::wrap_angle(p.theta - pose.theta).abs();
                if dth > TANGENT_TOL {
                    return Err(SteerError::Path(format!(
                        "segment {idx}: tangent discontinuity of {dth:.3e} rad"
                    )));
                }
                let dpos = (p.x - pose.x).hypot(p.y - pose.y);
                if dpos > POSITION_TOL {
                    return Err(SteerError::Path(format!(
                        "segment {idx}: position gap of {dpos:.3e} m"
                    )));
                }
            }
        }
        let mut seg = Segment {
            spec: spec.clone(),
            s0,
            start: pose,
            knots: Vec::new(),
        };
        if spec.kind == SegmentKind::Clothoid {
            let n = (spec.length / KNOT_SPACING).ceil() as usize;
            let mut acc = (pose.x, pose.y);
            seg.knots.push((0.0, acc.0, acc.1));
            for k in 1..n {
                let a = (k - 1) as f64 * KNOT_SPACING;
                let b = k as f64 * KNOT_SPACING;
                let d = seg.integrate(a, b);
                acc = (acc.0 + d.0, acc.1 + d.1);
                seg.knots.push((b, acc.0, acc.1));
            }
        }
        let (xe, ye) = seg.position(spec.length);
        pose = Pose {
            x: xe,
            y: ye,
            theta: seg.heading(spec.length),
        };
        s0 += spec.length;
        segments.push(seg);
    }
    Ok(Path {
        segments,
        length: s0,
    })
}

impl Path {
    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn segment_spec(&self, i: usize) -> &SegmentSpec {
        &self.segments[i].spec
    }

    /// `(start, end)` arc length of segment `i`.
    pub fn segment_bounds(&self, i: usize) -> (f64, f64) {
        let seg = &self.segments[i];
        (seg.s0, seg.s0 + seg.spec.length)
    }

    /// Labels, falling back to `seg<i>`.
    pub fn labels(&self) -> Vec<String> {
        self.segments
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.spec
                    .label
                    .clone()
                    .unwrap_or_else(|| format!("seg{}", i + 1))
            })
            .collect()
    }

    fn locate(&self, s: f64) -> usize {
        // segments are few; linear scan is fine
        self.segments
            .iter()
            .rposition(|seg| s >= seg.s0)
            .unwrap_or(0)
    }

    pub fn sample(&self, s: f64) -> RefSample {
        let clamped = !(0.0..=self.length).contains(&s);
        let s = s.clamp(0.0, self.length);
        let i = self.locate(s);
        let seg = &self.segments[i];
        let u = (s - seg.s0).min(seg.spec.length);
        let (x, y) = seg.position(u);
        RefSample {
            s,
            x,
            y,
            theta: seg.heading(u),
            kappa: seg.spec.kappa_start + seg.rate() * u,
            dkappa: seg.rate(),
            seg_index: i,
            clamped,
        }
    }

    /// Uniformly resampled polyline for export.
    pub fn polyline(&self, step: f64) -> Vec<RefSample> {
        let n = (self.length / step).ceil() as usize;
        (0..=n)
            .map(|k| self.sample((k as f64 * step).min(self.length)))
            .collect()
    }
}

/// 40 m line, 50 m radius quarter turn, 40 m line.
pub fn l_path_specs() -> Vec<SegmentSpec> {
    vec![
        SegmentSpec::line(40.0).labeled("seg1"),
        SegmentSpec::arc(50.0, 50.0 * std::f64::consts::FRAC_PI_2).labeled("seg2"),
        SegmentSpec::line(40.0).labeled("seg3"),
    ]
}

/// Two clothoids sweeping curvature from 100 m right to 100 m left.
pub fn s_path_specs() -> Vec<SegmentSpec> {
    vec![
        SegmentSpec::clothoid(-0.01, 0.0, 100.0).labeled("seg1"),
        SegmentSpec::clothoid(0.0, 0.01, 100.0).labeled("seg2"),
    ]
}

/// The six-segment comprehensive path, using the tabulated lengths.
pub fn comprehensive_specs() -> Vec<SegmentSpec> {
    vec![
        SegmentSpec::line(120.0).labeled("a1"),
        SegmentSpec::arc(50.0, 50.0 * 225f64.to_radians()).labeled("b1"),
        SegmentSpec::clothoid(0.02, 0.0, 17.5).labeled("c1"),
        SegmentSpec::clothoid(0.0, -0.01, 34.9).labeled("d1"),
        SegmentSpec::arc(-100.0, 17.5).labeled("e1"),
        SegmentSpec::arc(100.0, 17.5).labeled("f1"),
    ]
}
