//! Pixel-only detectors used to audit clip labels.
//!
//! None of these look at scenario parameters or renderer internals; they read
//! a `[frames, height, width]` clip in [-1, 1] and nothing else.

use crate::numcore::Tensor;

/// Mean-square difference below which consecutive frames count as equal.
pub const MOTION_EPS: f64 = 1e-8;

fn brightness(v: f64) -> f64 {
    (v + 1.0) / 2.0
}

fn dims(clip: &Tensor) -> (usize, usize, usize) {
    let s = clip.shape();
    assert_eq!(s.len(), 3, "clip must be [frames, height, width]");
    (s[0], s[1], s[2])
}

/// Mean squared frame-to-frame difference.
pub fn motion_energy(clip: &Tensor) -> f64 {
    let (f, h, w) = dims(clip);
    if f < 2 {
        return 0.0;
    }
    let n = h * w;
    let d = clip.data();
    let total: f64 = (n..f * n).map(|i| (d[i] - d[i - n]).powi(2)).sum();
    total / ((f - 1) * n) as f64
}

pub fn has_motion(clip: &Tensor) -> bool {
    motion_energy(clip) > MOTION_EPS
}

/// Total brightness of each frame.
pub fn frame_mass(clip: &Tensor) -> Vec<f64> {
    let (_, h, w) = dims(clip);
    clip.data()
        .chunks(h * w)
        .map(|fr| fr.iter().map(|&v| brightness(v)).sum())
        .collect()
}

/// Bright mass strictly decreasing every frame and down by at least 20%.
pub fn is_melting(clip: &Tensor) -> bool {
    let m = frame_mass(clip);
    m.len() >= 2 && m.windows(2).all(|w| w[1] < w[0]) && m[m.len() - 1] < 0.8 * m[0]
}

/// Frame brightness reverses direction at least twice with steps above 10%
/// of the mean.
pub fn is_flickering(clip: &Tensor) -> bool {
    let m = frame_mass(clip);
    let mean = m.iter().sum::<f64>() / m.len() as f64;
    if mean <= 0.0 {
        return false;
    }
    let steps: Vec<f64> = m
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| d.abs() > 0.1 * mean)
        .collect();
    steps.windows(2).filter(|w| w[0].signum() != w[1].signum()).count() >= 2
}

/// Least-squares fit `second ≈ a · mirrored(first)` over all frames; returns
/// `(a, relative residual)` or `None` when the first half is dark.
fn mirror_fit(clip: &Tensor, vertical_axis: bool) -> Option<(f64, f64)> {
    let (f, h, w) = dims(clip);
    let d = clip.data();
    let (mut ss, mut sp, mut pp) = (0.0, 0.0, 0.0);
    let mut pairs = Vec::new();
    for t in 0..f {
        let at = |y: usize, x: usize| brightness(d[(t * h + y) * w + x]);
        if vertical_axis {
            for y in 0..h {
                for x in w / 2..w {
                    pairs.push((at(y, w - 1 - x), at(y, x)));
                }
            }
        } else {
            for y in h / 2..h {
                for x in 0..w {
                    pairs.push((at(h - 1 - y, x), at(y, x)));
                }
            }
        }
    }
    for &(src, dst) in &pairs {
        ss += src * src;
        sp += src * dst;
        pp += dst * dst;
    }
    if ss < 1e-6 || pp < 1e-6 {
        return None;
    }
    let a = sp / ss;
    let resid: f64 = pairs.iter().map(|&(s, p)| (p - a * s).powi(2)).sum();
    Some((a, resid / pp))
}

/// One half of the frame is a dimmed mirror image of the other.
pub fn is_reflection(clip: &Tensor) -> bool {
    [false, true].into_iter().any(|v| {
        mirror_fit(clip, v).is_some_and(|(a, resid)| (0.1..=0.9).contains(&a) && resid < 1e-3)
    })
}

/// Labels implied by the pixels, keyed by what each detector decides.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Detected {
    pub motion: bool,
    pub melting: bool,
    pub flicker: bool,
    pub reflection: bool,
}

pub fn detect(clip: &Tensor) -> Detected {
    Detected {
        motion: has_motion(clip),
        melting: is_melting(clip),
        flicker: is_flickering(clip),
        reflection: is_reflection(clip),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_clip_has_no_signal() {
        let c = Tensor::full(&[4, 8, 8], -0.6);
        assert_eq!(
            detect(&c),
            Detected {
                motion: false,
                melting: false,
                flicker: false,
                reflection: false
            }
        );
    }

    #[test]
    fn hand_built_mirror_detected() {
        let (h, w) = (8, 4);
        let mut d = vec![-1.0; 2 * h * w];
        for t in 0..2 {
            let set = |d: &mut Vec<f64>, y: usize, x: usize, b: f64| d[(t * h + y) * w + x] = 2.0 * b - 1.0;
            set(&mut d, 1, t + 1, 0.8);
            set(&mut d, h - 2, t + 1, 0.4);
        }
        let c = Tensor::new(&[2, h, w], d).unwrap();
        assert!(is_reflection(&c));
        assert!(has_motion(&c));
    }

    #[test]
    fn monotone_decay_is_melting_not_flicker() {
        let d: Vec<f64> = (0..5)
            .flat_map(|t| std::iter::repeat_n(0.8 - 0.3 * t as f64, 4))
            .collect();
        let c = Tensor::new(&[5, 2, 2], d).unwrap();
        assert!(is_melting(&c));
        assert!(!is_flickering(&c));
    }
}
