//! Procedural full-body motion: a walk cycle or stationary stance, per-joint
//! sinusoidal variation, and Poisson-scheduled "raise hand into view" episodes.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{MotionSequence, Pose};
use crate::rotation::{euler_to_matrix, matrix_to_rot6d};
use crate::skeleton::Skeleton;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RootStyle {
    Walk,
    Stationary,
    /// Each sequence walks with probability `walk_probability`.
    Mixed { walk_probability: f64 },
}

/// Upper bounds on joint-angle amplitudes, degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeLimits {
    pub spine_deg: f64,
    pub head_deg: f64,
    pub arm_deg: f64,
    pub leg_deg: f64,
    /// Peak shoulder flexion of a hand-raise episode.
    pub raise_deg: f64,
    /// Peak hip flexion of the walk cycle.
    pub gait_deg: f64,
}

impl AmplitudeLimits {
    pub fn zero() -> Self {
        Self {
            spine_deg: 0.0,
            head_deg: 0.0,
            arm_deg: 0.0,
            leg_deg: 0.0,
            raise_deg: 0.0,
            gait_deg: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Frames per generated sequence.
    pub frames: usize,
    pub fps: f64,
    pub amplitudes: AmplitudeLimits,
    pub root_style: RootStyle,
    /// At most three sinusoids per joint axis.
    pub sinusoids: usize,
    pub freq_range_hz: (f64, f64),
    pub walk_speed_m_s: (f64, f64),
    pub gait_hz: (f64, f64),
    pub heading_range_deg: f64,
    /// Poisson rate of hand-raise episodes, per hand per second.
    pub raise_rate_hz: f64,
    pub raise_duration_s: (f64, f64),
    pub pelvis_height_m: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            frames: 120,
            fps: crate::motion::DEFAULT_FPS,
            amplitudes: AmplitudeLimits {
                spine_deg: 6.0,
                head_deg: 10.0,
                arm_deg: 12.0,
                leg_deg: 5.0,
                raise_deg: 95.0,
                gait_deg: 25.0,
            },
            root_style: RootStyle::Mixed {
                walk_probability: 0.6,
            },
            sinusoids: 3,
            freq_range_hz: (0.1, 1.2),
            walk_speed_m_s: (0.6, 1.4),
            gait_hz: (0.8, 1.1),
            heading_range_deg: 20.0,
            raise_rate_hz: 0.2,
            raise_duration_s: (1.0, 2.2),
            pelvis_height_m: 0.95,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Config("frames must be positive".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {}", self.fps)));
        }
        if self.sinusoids > 3 {
            return Err(Error::Config("at most 3 sinusoids per joint axis".into()));
        }
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if !ordered(self.freq_range_hz)
            || !ordered(self.walk_speed_m_s)
            || !ordered(self.gait_hz)
            || !ordered(self.raise_duration_s)
            || self.raise_duration_s.0 <= 0.0
        {
            return Err(Error::Config("ranges must be finite and ordered (min <= max)".into()));
        }
        if self.raise_rate_hz < 0.0 {
            return Err(Error::Config("raise rate must be non-negative".into()));
        }
        if let RootStyle::Mixed { walk_probability } = self.root_style {
            if !(0.0..=1.0).contains(&walk_probability) {
                return Err(Error::Config("walk probability must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// Sum of sinusoids `Σ a_k sin(2π f_k t + φ_k)`.
#[derive(Clone, Debug, Default)]
struct Oscillator {
    terms: Vec<(f64, f64, f64)>,
}

impl Oscillator {
    fn random(rng: &mut ChaCha8Rng, count: usize, amplitude: f64, freq: (f64, f64)) -> Self {
        if count == 0 || amplitude == 0.0 {
            return Self::default();
        }
        let terms = (0..count)
            .map(|_| {
                let a = rng.random_range(0.0..=1.0) * amplitude / count as f64;
                let f = if freq.0 < freq.1 { rng.random_range(freq.0..freq.1) } else { freq.0 };
                let phase = rng.random_range(0.0..TAU);
                (a, f, phase)
            })
            .collect();
        Self { terms }
    }

    fn at(&self, t: f64) -> f64 {
        self.terms.iter().map(|&(a, f, p)| a * (TAU * f * t + p).sin()).sum()
    }
}

/// A smooth bump that rises from 0 to 1 and back over `[start, start + duration]`.
#[derive(Clone, Copy, Debug)]
struct Episode {
    start: f64,
    duration: f64,
    shoulder: f64,
    elbow: f64,
    adduction: f64,
    look_down: f64,
}

impl Episode {
    fn envelope(&self, t: f64) -> f64 {
        let u = (t - self.start) / self.duration;
        if (0.0..=1.0).contains(&u) {
            (PI * u).sin().powi(2)
        } else {
            0.0
        }
    }
}

fn schedule_episodes(rng: &mut ChaCha8Rng, cfg: &GeneratorConfig, span: f64) -> Vec<Episode> {
    let raise = cfg.amplitudes.raise_deg.to_radians();
    if cfg.raise_rate_hz <= 0.0 || raise == 0.0 {
        return Vec::new();
    }
    let gap = Exp::new(cfg.raise_rate_hz).expect("positive rate");
    let (dmin, dmax) = cfg.raise_duration_s;
    let mut episodes = Vec::new();
    // Start early so sequences can open mid-episode.
    let mut t = -dmax + gap.sample(rng);
    while t < span {
        let duration = if dmin < dmax { rng.random_range(dmin..dmax) } else { dmin };
        episodes.push(Episode {
            start: t,
            duration,
            shoulder: raise * rng.random_range(0.75..=1.0),
            elbow: raise * rng.random_range(0.2..0.7),
            adduction: raise * rng.random_range(0.0..0.25),
            look_down: raise * rng.random_range(0.05..0.2),
        });
        t += duration + gap.sample(rng);
    }
    episodes
}

// Joint indices of `Skeleton::humanoid`.
const SPINE: [usize; 3] = [3, 6, 9];
const NECK: usize = 12;
const HEAD: usize = 15;
const HIPS: [usize; 2] = [1, 2];
const KNEES: [usize; 2] = [4, 5];
const ANKLES: [usize; 2] = [7, 8];
const COLLARS: [usize; 2] = [13, 14];
const SHOULDERS: [usize; 2] = [16, 17];
const ELBOWS: [usize; 2] = [18, 19];
const WRISTS: [usize; 2] = [20, 21];

/// Generates one sequence on the humanoid skeleton. Deterministic per seed.
pub fn generate_motion(cfg: &GeneratorConfig, seed: u64) -> Result<MotionSequence> {
    cfg.validate()?;
    let skeleton = Arc::new(Skeleton::humanoid());
    let joints = skeleton.joint_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = &cfg.amplitudes;
    let freq = cfg.freq_range_hz;
    let n = cfg.sinusoids;

    let walking = match cfg.root_style {
        RootStyle::Walk => true,
        RootStyle::Stationary => false,
        RootStyle::Mixed { walk_probability } => rng.random_bool(walk_probability),
    };
    let sample = |rng: &mut ChaCha8Rng, (a, b): (f64, f64)| if a < b { rng.random_range(a..b) } else { a };
    let speed = sample(&mut rng, cfg.walk_speed_m_s);
    let gait_hz = sample(&mut rng, cfg.gait_hz);
    let gait_phase = rng.random_range(0.0..TAU);
    let heading = if cfg.heading_range_deg > 0.0 {
        rng.random_range(-cfg.heading_range_deg..cfg.heading_range_deg).to_radians()
    } else {
        0.0
    };
    let start_xz = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));

    // One oscillator per (joint, axis); limits depend on the joint group.
    let limit_for = |j: usize| -> f64 {
        let deg = if SPINE.contains(&j) || j == 0 {
            amp.spine_deg
        } else if j == NECK || j == HEAD {
            amp.head_deg
        } else if COLLARS.contains(&j) {
            amp.spine_deg * 0.5
        } else if SHOULDERS.contains(&j) || ELBOWS.contains(&j) || WRISTS.contains(&j) {
            amp.arm_deg
        } else {
            amp.leg_deg
        };
        deg.to_radians()
    };
    let oscillators: Vec<[Oscillator; 3]> = (0..joints)
        .map(|j| std::array::from_fn(|_| Oscillator::random(&mut rng, n, limit_for(j), freq)))
        .collect();
    let root_bob = Oscillator::random(&mut rng, n.min(1), 0.01 * (amp.spine_deg / 6.0).min(1.0), freq);

    let span = cfg.frames as f64 / cfg.fps;
    let episodes: [Vec<Episode>; 2] = std::array::from_fn(|_| schedule_episodes(&mut rng, cfg, span));

    let gait_amp = if walking { amp.gait_deg.to_radians() } else { 0.0 };
    let frames = (0..cfg.frames)
        .map(|k| {
            let t = k as f64 / cfg.fps;
            let mut angles: Vec<[f64; 3]> = oscillators
                .iter()
                .map(|o| [o[0].at(t), o[1].at(t), o[2].at(t)])
                .collect();

            let phase = TAU * gait_hz * t + gait_phase;
            for side in 0..2 {
                let s = if side == 0 { phase } else { phase + PI };
                // Negative rotation about +X swings a hanging limb forward.
                angles[HIPS[side]][0] -= gait_amp * s.sin();
                angles[KNEES[side]][0] += gait_amp * 1.2 * (0.5 - 0.5 * (s + 0.6).cos());
                angles[ANKLES[side]][0] -= gait_amp * 0.3 * s.cos();
                angles[SHOULDERS[side]][0] += gait_amp * 0.6 * s.sin();
                angles[ELBOWS[side]][0] -= gait_amp * 0.4 * (0.5 + 0.5 * s.sin());

                for e in &episodes[side] {
                    let w = e.envelope(t);
                    if w == 0.0 {
                        continue;
                    }
                    let toward_midline = if side == 0 { -1.0 } else { 1.0 };
                    angles[SHOULDERS[side]][0] -= w * e.shoulder;
                    angles[SHOULDERS[side]][2] += w * e.adduction * toward_midline;
                    angles[ELBOWS[side]][0] -= w * e.elbow;
                    angles[NECK][0] += w * e.look_down * 0.4;
                    angles[HEAD][0] += w * e.look_down * 0.6;
                }
            }

            let mut root = Vector3::new(start_xz.0, cfg.pelvis_height_m + root_bob.at(t), start_xz.1);
            if walking {
                let d = speed * t;
                root.x += d * heading.sin();
                root.z += d * heading.cos();
                root.y += 0.02 * gait_amp / 25f64.to_radians() * (2.0 * phase).cos();
            }
            angles[0][1] += heading;

            Pose {
                root,
                rotations: angles
                    .iter()
                    .map(|a| matrix_to_rot6d(&euler_to_matrix(a[0], a[1], a[2])))
                    .collect(),
            }
        })
        .collect();
    MotionSequence::new(cfg.fps, frames, skeleton)
}
