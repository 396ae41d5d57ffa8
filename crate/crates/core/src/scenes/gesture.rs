//! Stick-figure gesture renderer.
//!
//! Coordinates are normalized to the unit square (x to the right, y downward)
//! and scaled to the pixel grid at render time. Limbs are anti-aliased capsules,
//! the head is a soft-edged disk.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::physics::SceneGrid;
use crate::rng::{rng_from, tag};

pub const GESTURE_CLASSES: usize = 3;

/// Which gesture to draw and whose style distribution to draw it from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GestureSpec {
    pub class_id: usize,
    pub person_id: u64,
}

/// Mean body proportions of one "person". Sampled once per person id.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonProfile {
    pub height: f64,
    pub shoulder_width: f64,
    pub arm_length: f64,
    pub center_x: f64,
    pub thickness: f64,
    pub arm_spread: f64,
}

impl PersonProfile {
    pub fn from_id(person_id: u64) -> Self {
        let mut rng = rng_from(person_id, &[tag::PERSON]);
        Self {
            height: rng.random_range(0.78..0.92),
            shoulder_width: rng.random_range(0.16..0.24),
            arm_length: rng.random_range(0.22..0.30),
            center_x: rng.random_range(0.44..0.56),
            thickness: rng.random_range(0.055..0.075),
            arm_spread: rng.random_range(0.25..0.45),
        }
    }
}

/// Per-sample body parameters, all in normalized units or radians.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureStyle {
    pub height: f64,
    pub shoulder_width: f64,
    pub arm_length: f64,
    pub center_x: f64,
    pub top: f64,
    pub thickness: f64,
    /// Angle of each arm measured from straight down, outward positive.
    pub left_arm: f64,
    pub right_arm: f64,
    pub leg_spread: f64,
    pub intensity: f64,
}

impl GestureStyle {
    pub fn sample<R: Rng>(class_id: usize, person: &PersonProfile, rng: &mut R) -> Result<Self> {
        if class_id >= GESTURE_CLASSES {
            return Err(Error::Domain(format!(
                "gesture class {class_id} out of range (< {GESTURE_CLASSES})"
            )));
        }
        let n = |rng: &mut R, s: f64| -> f64 { Normal::new(0.0, s).expect("positive std").sample(rng) };
        let down = |rng: &mut R| (person.arm_spread + n(rng, 0.12)).clamp(0.05, 0.8);
        let up = |rng: &mut R| (PI - person.arm_spread - n(rng, 0.15)).clamp(2.2, 3.0);
        let (left_arm, right_arm) = match class_id {
            0 => (down(rng), down(rng)),
            1 => (up(rng), up(rng)),
            _ => {
                if rng.random::<bool>() {
                    (up(rng), down(rng))
                } else {
                    (down(rng), up(rng))
                }
            }
        };
        let height = (person.height + n(rng, 0.02)).clamp(0.7, 0.95);
        Ok(Self {
            height,
            shoulder_width: (person.shoulder_width + n(rng, 0.01)).clamp(0.12, 0.28),
            arm_length: (person.arm_length + n(rng, 0.015)).clamp(0.18, 0.33),
            center_x: (person.center_x + n(rng, 0.03)).clamp(0.35, 0.65),
            top: (1.0 - height) * rng.random_range(0.3..0.7),
            thickness: (person.thickness + n(rng, 0.004)).clamp(0.045, 0.085),
            left_arm,
            right_arm,
            leg_spread: rng.random_range(0.15..0.35),
            intensity: rng.random_range(0.8..1.0),
        })
    }
}

fn segment_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((px - a.0 - t * dx).powi(2) + (py - a.1 - t * dy).powi(2)).sqrt()
}

/// Draws the figure described by `style` with gesture label `class_id`.
pub fn render_gesture(class_id: usize, style: &GestureStyle, width: usize, height: usize) -> Result<SceneGrid> {
    if width < 8 || height < 8 {
        return Err(Error::Domain(format!(
            "scene must be at least 8x8, got {width}x{height}"
        )));
    }
    let s = style.height;
    let cx = style.center_x;
    let head_r = 0.075 * s;
    let head_c = (cx, style.top + head_r);
    let neck = (cx, style.top + 2.0 * head_r);
    let shoulder_y = neck.1 + 0.05 * s;
    let hip = (cx, style.top + 0.55 * s);
    let foot_y = style.top + s;
    let half = style.shoulder_width / 2.0;
    let l_sh = (cx - half, shoulder_y);
    let r_sh = (cx + half, shoulder_y);
    let l_hand = (
        l_sh.0 - style.arm_length * style.left_arm.sin(),
        l_sh.1 + style.arm_length * style.left_arm.cos(),
    );
    let r_hand = (
        r_sh.0 + style.arm_length * style.right_arm.sin(),
        r_sh.1 + style.arm_length * style.right_arm.cos(),
    );
    let segments = [
        (neck, hip),
        (l_sh, r_sh),
        (l_sh, l_hand),
        (r_sh, r_hand),
        (hip, (cx - style.leg_spread / 2.0, foot_y)),
        (hip, (cx + style.leg_spread / 2.0, foot_y)),
    ];

    // Soft edges one pixel wide, in normalized units.
    let px_size = 1.0 / width.min(height) as f64;
    let half_t = style.thickness / 2.0;
    let mut values = Vec::with_capacity(width * height);
    for i in 0..height {
        for j in 0..width {
            let x = (j as f64 + 0.5) / width as f64;
            let y = (i as f64 + 0.5) / height as f64;
            let d_limb = segments
                .iter()
                .map(|&(a, b)| segment_distance(x, y, a, b))
                .fold(f64::INFINITY, f64::min)
                - half_t;
            let d_head = ((x - head_c.0).powi(2) + (y - head_c.1).powi(2)).sqrt() - head_r;
            let d = d_limb.min(d_head);
            let coverage = (0.5 - d / px_size).clamp(0.0, 1.0);
            values.push(coverage * style.intensity);
        }
    }
    SceneGrid::new(width, height, values, Some(class_id))
}

/// Renders one gesture with style drawn from the person's distribution.
pub fn generate_scene(spec: GestureSpec, width: usize, height: usize, seed: u64) -> Result<SceneGrid> {
    let person = PersonProfile::from_id(spec.person_id);
    let mut rng = rng_from(seed, &[tag::SCENE, spec.person_id, spec.class_id as u64]);
    let style = GestureStyle::sample(spec.class_id, &person, &mut rng)?;
    render_gesture(spec.class_id, &style, width, height)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_labelled() {
        let spec = GestureSpec {
            class_id: 2,
            person_id: 4,
        };
        let a = generate_scene(spec, 32, 32, 11).unwrap();
        let b = generate_scene(spec, 32, 32, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.label(), Some(2));
        assert_ne!(a, generate_scene(spec, 32, 32, 12).unwrap());
    }

    #[test]
    fn degenerate_sizes_and_classes_rejected() {
        let spec = GestureSpec {
            class_id: 0,
            person_id: 1,
        };
        assert!(generate_scene(spec, 7, 32, 0).is_err());
        let bad = GestureSpec {
            class_id: 3,
            person_id: 1,
        };
        assert!(generate_scene(bad, 32, 32, 0).is_err());
    }

    #[test]
    fn raised_arms_put_mass_above_the_shoulders() {
        let top_mass = |class_id| {
            let s = generate_scene(GestureSpec { class_id, person_id: 0 }, 32, 32, 3).unwrap();
            (0..10)
                .flat_map(|i| (0..32).map(move |j| (i, j)))
                .map(|(i, j)| s.at(i, j))
                .sum::<f64>()
        };
        assert!(top_mass(1) > top_mass(0) + 2.0);
    }
}
