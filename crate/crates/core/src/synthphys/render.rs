//! Per-kind simulation and anti-aliased rasterisation into brightness in [0, 1].

use std::f64::consts::PI;

use rand::Rng;

use super::{Axis, Scenario, ScenarioKind, ScenarioParams};

const SUPERSAMPLE: usize = 8;
const SUBSTEPS: usize = 32;

pub(crate) struct Rendered {
    /// Frame-major brightness.
    pub frames: Vec<f64>,
    /// Characteristic event time in frames (first impact, period, melt time).
    pub event_frames: f64,
}

struct Canvas {
    h: usize,
    w: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn new(h: usize, w: usize, level: f64) -> Self {
        Self {
            h,
            w,
            px: vec![level; h * w],
        }
    }

    /// Adds a disc with supersampled coverage.
    fn disc(&mut self, cx: f64, cy: f64, r: f64, intensity: f64) {
        let n = SUPERSAMPLE as f64;
        let y0 = ((cy - r).floor().max(0.0)) as usize;
        let y1 = ((cy + r).ceil().max(0.0) as usize).min(self.h);
        let x0 = ((cx - r).floor().max(0.0)) as usize;
        let x1 = ((cx + r).ceil().max(0.0) as usize).min(self.w);
        for y in y0..y1 {
            for x in x0..x1 {
                let mut hits = 0;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let dx = x as f64 + (sx as f64 + 0.5) / n - cx;
                        let dy = y as f64 + (sy as f64 + 0.5) / n - cy;
                        if dx * dx + dy * dy <= r * r {
                            hits += 1;
                        }
                    }
                }
                self.px[y * self.w + x] += intensity * hits as f64 / (n * n);
            }
        }
    }

    /// Adds an axis-aligned box with exact area coverage.
    fn rect(&mut self, left: f64, top: f64, right: f64, bottom: f64, intensity: f64) {
        for y in 0..self.h {
            let oy = (bottom.min(y as f64 + 1.0) - top.max(y as f64)).max(0.0);
            if oy == 0.0 {
                continue;
            }
            for x in 0..self.w {
                let ox = (right.min(x as f64 + 1.0) - left.max(x as f64)).max(0.0);
                self.px[y * self.w + x] += intensity * ox * oy;
            }
        }
    }

    /// Adds an anisotropic Gaussian blob evaluated at pixel centres.
    fn blob(&mut self, cx: f64, cy: f64, sx: f64, sy: f64, intensity: f64) {
        for y in 0..self.h {
            for x in 0..self.w {
                let dx = (x as f64 + 0.5 - cx) / sx;
                let dy = (y as f64 + 0.5 - cy) / sy;
                self.px[y * self.w + x] += intensity * (-0.5 * (dx * dx + dy * dy)).exp();
            }
        }
    }

    /// Copies the first half onto the second, mirrored and attenuated.
    fn mirror(&mut self, axis: Axis, attenuation: f64) {
        let (h, w) = (self.h, self.w);
        match axis {
            Axis::Horizontal => {
                for y in h / 2..h {
                    for x in 0..w {
                        self.px[y * w + x] = attenuation * self.px[(h - 1 - y) * w + x];
                    }
                }
            }
            Axis::Vertical => {
                for y in 0..h {
                    for x in w / 2..w {
                        self.px[y * w + x] = attenuation * self.px[y * w + (w - 1 - x)];
                    }
                }
            }
        }
    }
}

fn signed<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let m = rng.random_range(lo..hi);
    if rng.random::<bool>() {
        m
    } else {
        -m
    }
}

/// Damped small-angle pendulum: `θ(t) = θ₀ e^{-γ t} cos(ω t)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PendulumMotion {
    pub theta0: f64,
    pub omega: f64,
    pub damping: f64,
}

impl PendulumMotion {
    pub fn angle(&self, t: f64) -> f64 {
        self.theta0 * (-self.damping * t).exp() * (self.omega * t).cos()
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }
}

/// Ball under gravity between walls, with restitution at the floor.
#[derive(Clone, Debug)]
pub(crate) struct BallMotion {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl BallMotion {
    /// Positions at each frame start and the floor-impact times in frames.
    pub fn simulate(&self, p: &ScenarioParams, h: f64, w: f64, frames: usize) -> (Vec<(f64, f64)>, Vec<f64>) {
        let r = p.radius;
        let dt = 1.0 / SUBSTEPS as f64;
        let (mut x, mut y, mut vx, mut vy) = (self.x, self.y, self.vx, self.vy);
        let mut out = Vec::with_capacity(frames);
        let mut impacts = Vec::new();
        for f in 0..frames {
            out.push((x, y));
            for k in 0..SUBSTEPS {
                vy += p.gravity * dt;
                x += vx * dt;
                y += vy * dt;
                if y > h - r {
                    y = 2.0 * (h - r) - y;
                    vy = -p.restitution * vy.abs();
                    impacts.push(f as f64 + (k + 1) as f64 * dt);
                }
                if y < r {
                    y = 2.0 * r - y;
                    vy = vy.abs();
                }
                if x < r {
                    x = 2.0 * r - x;
                    vx = vx.abs();
                }
                if x > w - r {
                    x = 2.0 * (w - r) - x;
                    vx = -vx.abs();
                }
            }
        }
        (out, impacts)
    }
}

pub(crate) fn render<R: Rng + ?Sized>(s: &Scenario, rng: &mut R) -> Rendered {
    let (h, w) = (s.height as f64, s.width as f64);
    let p = &s.params;
    let r = p.radius;
    let mut frames = Vec::with_capacity(s.frames * s.height * s.width);
    let mut push = |c: Canvas| frames.extend(c.px);
    let event_frames = match s.kind {
        ScenarioKind::Bounce => {
            let ball = BallMotion {
                x: rng.random_range(r + 0.5..w - r - 0.5),
                y: rng.random_range(r + 0.5..h / 2.0),
                vx: signed(rng, 0.4, 1.2),
                vy: rng.random_range(-0.3..0.3),
            };
            let intensity = rng.random_range(0.75..0.95);
            let (path, impacts) = ball.simulate(p, h, w, s.frames);
            for (x, y) in path {
                let mut c = Canvas::new(s.height, s.width, 0.0);
                c.disc(x, y, r, intensity);
                push(c);
            }
            impacts.first().copied().unwrap_or(s.frames as f64)
        }
        ScenarioKind::Pendulum => {
            let (px, py) = (w / 2.0, 1.5);
            let theta_max: f64 = 0.8;
            let reach = ((w / 2.0 - r - 0.5) / theta_max.sin()).min(h - py - r - 0.5);
            let length = reach * rng.random_range(0.75..1.0);
            let motion = PendulumMotion {
                theta0: signed(rng, 0.4, theta_max),
                omega: 2.0 * PI / rng.random_range(6.0..10.0),
                damping: p.damping,
            };
            let intensity = rng.random_range(0.75..0.95);
            for f in 0..s.frames {
                let th = motion.angle(f as f64);
                let mut c = Canvas::new(s.height, s.width, 0.0);
                c.disc(px + length * th.sin(), py + length * th.cos(), r, intensity);
                push(c);
            }
            motion.period()
        }
        ScenarioKind::Flow => {
            let vx = signed(rng, 0.8, 1.4);
            let x0 = if vx > 0.0 { 2.5 } else { w - 2.5 };
            let y0 = rng.random_range(5.0..h - 5.0);
            let sy = rng.random_range(1.5..2.2);
            let phase = rng.random_range(0.0..2.0 * PI);
            let intensity = rng.random_range(0.7..0.9);
            for f in 0..s.frames {
                let t = f as f64;
                let mut c = Canvas::new(s.height, s.width, 0.0);
                c.blob(x0 + vx * t, y0 + 1.2 * (0.8 * t + phase).sin(), 1.5 * sy, sy, intensity);
                push(c);
            }
            s.frames as f64
        }
        ScenarioKind::Melt => {
            let w0 = rng.random_range(5.0..8.0);
            let h0 = rng.random_range(5.0..8.0);
            let cx = w / 2.0 + rng.random_range(-2.0..2.0);
            let intensity = rng.random_range(0.75..0.95);
            for f in 0..s.frames {
                let k = 1.0 - p.melt_rate * f as f64;
                let (bw, bh) = (w0 * (1.0 - 0.3 * p.melt_rate * f as f64), h0 * k);
                let mut c = Canvas::new(s.height, s.width, 0.0);
                c.rect(cx - bw / 2.0, h - 1.0 - bh, cx + bw / 2.0, h - 1.0, intensity);
                push(c);
            }
            1.0 / p.melt_rate
        }
        ScenarioKind::CombustionFlicker => {
            let freq = p.flicker_freq * rng.random_range(0.9..1.1);
            let phase = rng.random_range(0.0..2.0 * PI);
            let sx = rng.random_range(1.2..1.8);
            let cx = w / 2.0 + rng.random_range(-1.5..1.5);
            for f in 0..s.frames {
                let t = f as f64;
                let osc = (2.0 * PI * freq * t + phase).sin();
                let sy = 2.0 * sx * (1.0 + 0.25 * osc);
                let mut c = Canvas::new(s.height, s.width, 0.0);
                c.blob(cx + 0.5 * (1.7 * t).sin(), 0.65 * h, sx, sy, 0.6 + 0.35 * osc);
                push(c);
            }
            1.0 / freq
        }
        ScenarioKind::Reflection => {
            // the ball stays inside the unmirrored half
            let (half_h, half_w) = match p.axis {
                Axis::Horizontal => (h / 2.0, w),
                Axis::Vertical => (h, w / 2.0),
            };
            let mut x = rng.random_range(r + 0.5..half_w - r - 0.5);
            let mut y = rng.random_range(r + 0.5..half_h - r - 0.5);
            let mut vx = signed(rng, 0.6, 1.2);
            let mut vy = signed(rng, 0.0, 0.4);
            let intensity = rng.random_range(0.75..0.95);
            for _ in 0..s.frames {
                let mut c = Canvas::new(s.height, s.width, 0.0);
                c.disc(x, y, r, intensity);
                c.mirror(p.axis, p.attenuation);
                push(c);
                x += vx;
                y += vy;
                if x < r || x > half_w - r {
                    vx = -vx;
                    x = x.clamp(r, half_w - r);
                }
                if y < r || y > half_h - r {
                    vy = -vy;
                    y = y.clamp(r, half_h - r);
                }
            }
            s.frames as f64
        }
        ScenarioKind::Static => {
            let level = rng.random_range(0.0..0.25);
            for _ in 0..s.frames {
                push(Canvas::new(s.height, s.width, level));
            }
            0.0
        }
    };
    Rendered {
        frames,
        event_frames,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elastic_bounce_preserves_speed_across_impacts() {
        let p = ScenarioParams {
            restitution: 1.0,
            gravity: 0.3,
            ..ScenarioParams::default()
        };
        let ball = BallMotion {
            x: 5.0,
            y: 4.0,
            vx: 0.9,
            vy: 0.0,
        };
        let (path, impacts) = ball.simulate(&p, 16.0, 16.0, 60);
        let speed = |k: usize| {
            let (a, b) = (path[k], path[k + 1]);
            ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt()
        };
        let mut checked = 0;
        for &t in &impacts {
            // compare the frame intervals on either side of the one holding the impact
            let k = t.floor() as usize;
            if k >= 1 && k + 2 < path.len() && !impacts.iter().any(|&u| u != t && (u - t).abs() < 3.0) {
                assert!((speed(k - 1) - speed(k + 1)).abs() <= 1.0, "impact at {t}");
                checked += 1;
            }
        }
        assert!(checked >= 2, "{impacts:?}");
    }

    #[test]
    fn damped_pendulum_peaks_never_grow() {
        let m = PendulumMotion {
            theta0: 0.7,
            omega: 2.0 * PI / 8.0,
            damping: 0.05,
        };
        // dense sampling, one peak per half period
        let half = m.period() / 2.0;
        let peaks: Vec<f64> = (0..12)
            .map(|c| {
                (0..2000)
                    .map(|i| m.angle(c as f64 * half + half * i as f64 / 2000.0).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!(peaks.windows(2).all(|w| w[1] <= w[0]), "{peaks:?}");
        assert!(peaks[11] < peaks[0]);
    }

    #[test]
    fn disc_coverage_approximates_area() {
        let mut c = Canvas::new(16, 16, 0.0);
        c.disc(8.0, 8.0, 3.0, 1.0);
        let area: f64 = c.px.iter().sum();
        assert!((area - PI * 9.0).abs() < 0.2);
    }

    #[test]
    fn rect_coverage_is_exact() {
        let mut c = Canvas::new(8, 8, 0.0);
        c.rect(1.25, 2.5, 4.0, 7.0, 1.0);
        let area: f64 = c.px.iter().sum();
        assert!((area - 2.75 * 4.5).abs() < 1e-12);
    }
}
