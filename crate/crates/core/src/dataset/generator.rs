//! Parametric synthetic analogs of the target, auxiliary and generic
//! pretraining datasets.
//!
//! Every class owns a smooth base pattern `μ`. A frame is
//! `clip(μ + s_seq + ε_frame, 0, 1)` where `s_seq` is a smooth field shared
//! by all frames of a sequence (scaled by `sigma_seq`) and `ε_frame` is
//! per-pixel Gaussian noise (scaled by `sigma_frame`).
//!
//! Patterns come from a [`PatternWorld`] keyed by its own seed, so the three
//! generators agree on what "Home" looks like while their sampling seeds differ.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{SceneDataset, Sequence, CHANNELS};
use crate::error::{Error, Result};
use crate::seed;

/// Target class list, in the order used throughout the crate.
pub const TARGET_CLASSES: [&str; 4] = ["Vehicle", "Home", "Restaurant", "Workplace"];

/// Which base pattern a class draws from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PatternOrigin {
    Home,
    Restaurant,
    Workplace,
    /// Target Vehicle class: alternates car and bus sub-patterns when bimodal.
    Vehicle,
    VehicleCar,
    VehicleBus,
    /// A fresh pattern keyed by the class name, unrelated to the targets.
    Unrelated,
}

impl PatternOrigin {
    fn is_target(&self) -> bool {
        !matches!(self, PatternOrigin::Unrelated)
    }
}

impl TryFrom<String> for PatternOrigin {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        Ok(match s.as_str() {
            "Home" => Self::Home,
            "Restaurant" => Self::Restaurant,
            "Workplace" => Self::Workplace,
            "Vehicle" => Self::Vehicle,
            "Vehicle/car" => Self::VehicleCar,
            "Vehicle/bus" => Self::VehicleBus,
            "unrelated" => Self::Unrelated,
            other => return Err(format!("unknown pattern origin `{other}`")),
        })
    }
}

impl From<PatternOrigin> for String {
    fn from(o: PatternOrigin) -> String {
        o.to_string()
    }
}

impl fmt::Display for PatternOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Home => "Home",
            Self::Restaurant => "Restaurant",
            Self::Workplace => "Workplace",
            Self::Vehicle => "Vehicle",
            Self::VehicleCar => "Vehicle/car",
            Self::VehicleBus => "Vehicle/bus",
            Self::Unrelated => "unrelated",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    pub sequences: usize,
    pub origin: PatternOrigin,
}

impl ClassSpec {
    pub fn new(name: &str, sequences: usize, origin: PatternOrigin) -> Self {
        Self {
            name: name.into(),
            sequences,
            origin,
        }
    }
}

/// Shape of the pattern world shared by all generators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternSpec {
    pub seed: u64,
    /// Coarse control grid per side; smaller means smoother patterns.
    pub grid: usize,
    /// Half-range of base patterns around 0.5; must be in (0, 0.5].
    pub amplitude: f64,
    /// Home–Restaurant aliasing α in [0, 1): `μ_R = α·μ_H + (1−α)·ν_R`.
    pub aliasing: f64,
    /// Vehicle sub-pattern aliasing β in [0, 1): the car view blends toward
    /// Home and the bus view toward Workplace by β.
    pub vehicle_aliasing: f64,
    pub vehicle_bimodal: bool,
    /// Minimum RMS distance between unrelated patterns.
    pub min_distance: f64,
}

impl Default for PatternSpec {
    fn default() -> Self {
        Self {
            seed: 2024,
            grid: 4,
            amplitude: 0.35,
            aliasing: 0.6,
            vehicle_aliasing: 0.5,
            vehicle_bimodal: true,
            min_distance: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub classes: Vec<ClassSpec>,
    pub frames_min: usize,
    pub frames_max: usize,
    pub height: usize,
    pub width: usize,
    pub patterns: PatternSpec,
    pub sigma_seq: f64,
    pub sigma_frame: f64,
    /// Scale of the per-source-class domain shift; used by the auxiliary generator only.
    pub domain_shift: f64,
}

impl GeneratorConfig {
    /// 2 Vehicle / 64 Home / 13 Restaurant / 10 Workplace sequences of 30–90 frames.
    pub fn target_default() -> Self {
        use PatternOrigin::*;
        Self {
            classes: vec![
                ClassSpec::new("Vehicle", 2, Vehicle),
                ClassSpec::new("Home", 64, Home),
                ClassSpec::new("Restaurant", 13, Restaurant),
                ClassSpec::new("Workplace", 10, Workplace),
            ],
            frames_min: 30,
            frames_max: 90,
            height: 16,
            width: 16,
            patterns: PatternSpec::default(),
            sigma_seq: 0.12,
            sigma_frame: 0.08,
            domain_shift: 0.0,
        }
    }

    /// 20 source classes, 400 sequences: 12 relevant classes that merge into
    /// the four targets at 160/60/50/20 sequences and 8 irrelevant ones.
    pub fn auxiliary_default() -> Self {
        use PatternOrigin::*;
        let mut classes = vec![
            ClassSpec::new("dining_room", 60, Home),
            ClassSpec::new("living_room", 50, Home),
            ClassSpec::new("kitchen", 50, Home),
            ClassSpec::new("restaurant", 25, Restaurant),
            ClassSpec::new("cafeteria", 20, Restaurant),
            ClassSpec::new("food_court", 15, Restaurant),
            ClassSpec::new("office", 20, Workplace),
            ClassSpec::new("conference_room", 15, Workplace),
            ClassSpec::new("computer_room", 15, Workplace),
            ClassSpec::new("car_interior", 8, VehicleCar),
            ClassSpec::new("bus_interior", 7, VehicleBus),
            ClassSpec::new("train_interior", 5, VehicleBus),
        ];
        let irrelevant = [
            ("beach", 14),
            ("forest_path", 14),
            ("mountain", 14),
            ("ocean", 14),
            ("desert", 14),
            ("field", 14),
            ("waterfall", 13),
            ("glacier", 13),
        ];
        classes.extend(
            irrelevant
                .iter()
                .map(|&(n, k)| ClassSpec::new(n, k, Unrelated)),
        );
        Self {
            classes,
            frames_min: 10,
            frames_max: 30,
            domain_shift: 0.1,
            ..Self::target_default()
        }
    }

    /// 20 balanced classes of unrelated patterns.
    pub fn generic_default() -> Self {
        Self {
            classes: (0..20)
                .map(|i| ClassSpec::new(&format!("generic_{i:02}"), 8, PatternOrigin::Unrelated))
                .collect(),
            frames_min: 10,
            frames_max: 20,
            ..Self::target_default()
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    fn validate(&self) -> Result<()> {
        let nonempty = self.classes.iter().filter(|c| c.sequences > 0).count();
        if nonempty < 2 {
            return Err(Error::invalid(
                "generator needs at least two non-empty classes",
            ));
        }
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return Err(Error::invalid(format!(
                "frame range [{}, {}] is invalid",
                self.frames_min, self.frames_max
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        for (name, v) in [
            ("sigma_seq", self.sigma_seq),
            ("sigma_frame", self.sigma_frame),
            ("domain_shift", self.domain_shift),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} = {v} must be non-negative")));
            }
        }
        let p = &self.patterns;
        if p.grid < 2 {
            return Err(Error::invalid("pattern grid must be at least 2"));
        }
        if !(p.amplitude > 0.0 && p.amplitude <= 0.5) {
            return Err(Error::invalid(format!(
                "amplitude {} outside (0, 0.5]",
                p.amplitude
            )));
        }
        for (name, v) in [
            ("aliasing", p.aliasing),
            ("vehicle_aliasing", p.vehicle_aliasing),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Bilinear upsampling of a random `grid × grid × 3` lattice in [-1, 1].
fn smooth_field(rng: &mut impl Rng, grid: usize, h: usize, w: usize) -> Vec<f64> {
    let lattice: Vec<f64> = (0..grid * grid * CHANNELS)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let at = |gy: usize, gx: usize, c: usize| lattice[(gy * grid + gx) * CHANNELS + c];
    let coord = |i: usize, n: usize| {
        if n == 1 {
            0.0
        } else {
            i as f64 * (grid - 1) as f64 / (n - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(h * w * CHANNELS);
    for y in 0..h {
        let fy = coord(y, h);
        let y0 = (fy.floor() as usize).min(grid - 2);
        let ty = fy - y0 as f64;
        for x in 0..w {
            let fx = coord(x, w);
            let x0 = (fx.floor() as usize).min(grid - 2);
            let tx = fx - x0 as f64;
            for c in 0..CHANNELS {
                let top = at(y0, x0, c) * (1.0 - tx) + at(y0, x0 + 1, c) * tx;
                let bottom = at(y0 + 1, x0, c) * (1.0 - tx) + at(y0 + 1, x0 + 1, c) * tx;
                out.push(top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    out
}

/// RMS difference between two patterns.
pub fn pattern_distance(a: &[f64], b: &[f64]) -> f64 {
    let ss: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (ss / a.len().max(1) as f64).sqrt()
}

fn blend(a: &[f64], b: &[f64], alpha: f64) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
        .collect()
}

/// Deterministic base patterns for a given [`PatternSpec`] and image size.
#[derive(Clone, Debug)]
pub struct PatternWorld {
    spec: PatternSpec,
    height: usize,
    width: usize,
}

impl PatternWorld {
    pub fn new(spec: &PatternSpec, height: usize, width: usize) -> Self {
        Self {
            spec: spec.clone(),
            height,
            width,
        }
    }

    fn field(&self, key: &str) -> Vec<f64> {
        let mut rng = seed::rng(self.spec.seed, &format!("pattern/{key}"));
        smooth_field(&mut rng, self.spec.grid, self.height, self.width)
    }

    /// `0.5 + amplitude · field(key)`, inside [0, 1].
    pub fn base(&self, key: &str) -> Vec<f64> {
        self.field(key)
            .into_iter()
            .map(|v| 0.5 + self.spec.amplitude * v)
            .collect()
    }

    /// Mean pattern of a target-derived origin. `Vehicle` resolves to its car
    /// view; use [`PatternWorld::vehicle_views`] for both.
    pub fn target_pattern(&self, origin: &PatternOrigin) -> Option<Vec<f64>> {
        let s = &self.spec;
        Some(match origin {
            PatternOrigin::Home => self.base("Home"),
            PatternOrigin::Workplace => self.base("Workplace"),
            PatternOrigin::Restaurant => {
                blend(&self.base("Home"), &self.base("Restaurant"), s.aliasing)
            }
            PatternOrigin::Vehicle | PatternOrigin::VehicleCar => blend(
                &self.base("Home"),
                &self.base("Vehicle/car"),
                s.vehicle_aliasing,
            ),
            PatternOrigin::VehicleBus if s.vehicle_bimodal => blend(
                &self.base("Workplace"),
                &self.base("Vehicle/bus"),
                s.vehicle_aliasing,
            ),
            PatternOrigin::VehicleBus => return self.target_pattern(&PatternOrigin::VehicleCar),
            PatternOrigin::Unrelated => return None,
        })
    }

    /// The car and bus views; identical when bimodality is off.
    pub fn vehicle_views(&self) -> [Vec<f64>; 2] {
        [
            self.target_pattern(&PatternOrigin::VehicleCar).unwrap(),
            self.target_pattern(&PatternOrigin::VehicleBus).unwrap(),
        ]
    }

    /// Zero-mean shift direction for an auxiliary source class.
    pub fn shift(&self, class_name: &str) -> Vec<f64> {
        self.field(&format!("shift/{class_name}"))
    }

    /// Unrelated pattern for `class_name`, re-drawn until it is at least
    /// `min_distance` away from every pattern in `existing`.
    pub fn unrelated(&self, class_name: &str, existing: &[Vec<f64>]) -> Result<Vec<f64>> {
        for attempt in 0..64 {
            let p = self.base(&format!("unrelated/{class_name}/{attempt}"));
            if existing
                .iter()
                .all(|e| pattern_distance(&p, e) >= self.spec.min_distance)
            {
                return Ok(p);
            }
        }
        Err(Error::invalid(format!(
            "could not place pattern `{class_name}` at distance {}",
            self.spec.min_distance
        )))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Target,
    Auxiliary,
    Generic,
}

impl Kind {
    fn tag(self) -> &'static str {
        match self {
            Kind::Target => "target",
            Kind::Auxiliary => "auxiliary",
            Kind::Generic => "generic",
        }
    }
}

/// Per-class list of mean patterns (more than one for the bimodal Vehicle class).
fn class_patterns(config: &GeneratorConfig, kind: Kind) -> Result<Vec<Vec<Vec<f64>>>> {
    let world = PatternWorld::new(&config.patterns, config.height, config.width);
    let mut placed: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::with_capacity(config.classes.len());
    for spec in &config.classes {
        let views = match (&spec.origin, kind) {
            (PatternOrigin::Unrelated, Kind::Target) => {
                return Err(Error::invalid(format!(
                    "target class `{}` must derive from a target pattern",
                    spec.name
                )))
            }
            (o, Kind::Generic) if o.is_target() => {
                return Err(Error::invalid(format!(
                    "generic class `{}` must be unrelated to the targets",
                    spec.name
                )))
            }
            (PatternOrigin::Unrelated, _) => {
                let p = world.unrelated(&spec.name, &placed)?;
                placed.push(p.clone());
                vec![p]
            }
            (PatternOrigin::Vehicle, _) if config.patterns.vehicle_bimodal => {
                world.vehicle_views().to_vec()
            }
            (origin, _) => vec![world.target_pattern(origin).unwrap()],
        };
        let views =
            if kind == Kind::Auxiliary && spec.origin.is_target() && config.domain_shift > 0.0 {
                let shift = world.shift(&spec.name);
                views
                    .into_iter()
                    .map(|v| {
                        v.iter()
                            .zip(&shift)
                            .map(|(m, s)| m + config.domain_shift * s)
                            .collect()
                    })
                    .collect()
            } else {
                views
            };
        out.push(views);
    }
    Ok(out)
}

fn generate(config: &GeneratorConfig, seed: u64, kind: Kind) -> Result<SceneDataset> {
    config.validate()?;
    let patterns = class_patterns(config, kind)?;
    let (h, w) = (config.height, config.width);
    let frame_len = h * w * CHANNELS;
    let mut rng = seed::rng(seed, kind.tag());
    let mut sequences = Vec::new();
    let mut id = 0u32;
    for (label, (spec, views)) in config.classes.iter().zip(&patterns).enumerate() {
        for k in 0..spec.sequences {
            let mean = &views[k % views.len()];
            let frames = rng.random_range(config.frames_min..=config.frames_max);
            let latent: Vec<f64> = smooth_field(&mut rng, config.patterns.grid, h, w)
                .into_iter()
                .map(|v| config.sigma_seq * v)
                .collect();
            let mut pixels = Vec::with_capacity(frames * frame_len);
            for _ in 0..frames {
                for (m, s) in mean.iter().zip(&latent) {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    let v = (m + s + config.sigma_frame * eps).clamp(0.0, 1.0);
                    pixels.push(v as f32);
                }
            }
            sequences.push(Sequence::new(id, label, frame_len, pixels)?);
            id += 1;
        }
    }
    SceneDataset::new(
        config.class_names(),
        sequences,
        h,
        w,
        format!("{} generator, seed {seed}", kind.tag()),
    )
}

/// Sequence-labeled target analog; every class must derive from a target pattern.
pub fn generate_target(config: &GeneratorConfig, seed: u64) -> Result<SceneDataset> {
    generate(config, seed, Kind::Target)
}

/// Many-class auxiliary analog: target-derived source classes get a per-class
/// domain shift of scale `domain_shift`, unrelated ones get fresh patterns.
pub fn generate_auxiliary(config: &GeneratorConfig, seed: u64) -> Result<SceneDataset> {
    generate(config, seed, Kind::Auxiliary)
}

/// Generic pretraining analog; every class must be unrelated to the targets.
pub fn generate_generic_pretrain(config: &GeneratorConfig, seed: u64) -> Result<SceneDataset> {
    generate(config, seed, Kind::Generic)
}
