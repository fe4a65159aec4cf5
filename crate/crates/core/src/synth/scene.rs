//! Scene description and clean rendering.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImagePair;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VesselClass {
    CargoShip,
    FishingBoat,
    SandDredger,
    Speedboat,
}

impl VesselClass {
    pub const ALL: [VesselClass; 4] = [
        VesselClass::CargoShip,
        VesselClass::FishingBoat,
        VesselClass::SandDredger,
        VesselClass::Speedboat,
    ];

    /// Mask id, 1..=4.
    pub fn id(self) -> u8 {
        match self {
            VesselClass::CargoShip => 1,
            VesselClass::FishingBoat => 2,
            VesselClass::SandDredger => 3,
            VesselClass::Speedboat => 4,
        }
    }

    /// Hull outline in units of hull length, bow pointing along +x.
    fn outline(self) -> &'static [(f64, f64)] {
        match self {
            // Long and low with a pointed bow.
            VesselClass::CargoShip => &[(-0.5, -0.11), (0.36, -0.11), (0.5, 0.0), (0.36, 0.11), (-0.5, 0.11)],
            // Beamy, rounded stern, fine bow.
            VesselClass::FishingBoat => &[
                (-0.5, -0.12),
                (-0.4, -0.18),
                (0.2, -0.18),
                (0.5, 0.0),
                (0.2, 0.18),
                (-0.4, 0.18),
                (-0.5, 0.12),
            ],
            // Boxy barge with chamfered bow corners.
            VesselClass::SandDredger => &[(-0.5, -0.2), (0.4, -0.2), (0.5, -0.1), (0.5, 0.1), (0.4, 0.2), (-0.5, 0.2)],
            // Short wedge.
            VesselClass::Speedboat => &[(-0.5, -0.2), (0.1, -0.2), (0.5, 0.0), (0.1, 0.2), (-0.5, 0.2)],
        }
    }

    fn beam_ratio(self) -> f64 {
        let ys = self.outline().iter().map(|p| p.1);
        ys.clone().fold(f64::NEG_INFINITY, f64::max) - ys.fold(f64::INFINITY, f64::min)
    }

    /// Hull length range as a fraction of the shorter canvas side.
    fn length_range(self) -> (f64, f64) {
        match self {
            VesselClass::CargoShip => (0.4, 0.6),
            VesselClass::FishingBoat => (0.22, 0.32),
            VesselClass::SandDredger => (0.28, 0.4),
            VesselClass::Speedboat => (0.14, 0.22),
        }
    }

    fn hotspot_range(self) -> (f64, f64) {
        match self {
            VesselClass::Speedboat => (0.45, 0.55),
            _ => (0.2, 0.35),
        }
    }

    fn color(self) -> [f64; 3] {
        match self {
            VesselClass::CargoShip => [0.6, 0.22, 0.18],
            VesselClass::FishingBoat => [0.88, 0.87, 0.82],
            VesselClass::SandDredger => [0.46, 0.44, 0.38],
            VesselClass::Speedboat => [0.95, 0.85, 0.25],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Normal,
    Foggy,
    LowLight,
    Reflection,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Normal, Regime::Foggy, Regime::LowLight, Regime::Reflection];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Normal => "normal",
            Regime::Foggy => "foggy",
            Regime::LowLight => "low-light",
            Regime::Reflection => "reflection",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vessel {
    pub class: VesselClass,
    /// Hull centre, pixels (x right, y down).
    pub x: f64,
    pub y: f64,
    /// Hull length in pixels.
    pub length: f64,
    /// Bow direction, radians from +x.
    pub heading: f64,
    pub hotspot: f64,
}

/// Narrowest hull a vessel may have, in pixels.
pub const MIN_BEAM: f64 = 3.0;

impl Vessel {
    pub fn beam(&self) -> f64 {
        self.length * self.class.beam_ratio()
    }

    /// Outline vertices in canvas coordinates. Hulls are widened so the beam
    /// is never below [`MIN_BEAM`].
    pub fn polygon(&self) -> Vec<(f64, f64)> {
        let widen = (MIN_BEAM / self.beam()).max(1.0);
        let (s, c) = self.heading.sin_cos();
        self.class
            .outline()
            .iter()
            .map(|&(u, v)| {
                let (u, v) = (u * self.length, v * self.length * widen);
                (self.x + u * c - v * s, self.y + u * s + v * c)
            })
            .collect()
    }

    /// Engine position near the stern.
    fn engine(&self) -> (f64, f64) {
        let (s, c) = self.heading.sin_cos();
        let back = -0.32 * self.length;
        (self.x + back * c, self.y + back * s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub vessels: Vec<Vessel>,
    pub regime: Regime,
    pub strength: f64,
    /// Additive infrared noise, off unless requested.
    #[serde(default)]
    pub ir_noise: bool,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::Spec(format!("canvas {}x{} is too small", self.height, self.width)));
        }
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::Spec(format!("degradation strength {} outside [0, 1]", self.strength)));
        }
        for (i, v) in self.vessels.iter().enumerate() {
            if !(v.length > 0.0) || !(0.0..=1.0).contains(&v.hotspot) {
                return Err(Error::Spec(format!("vessel {i} has invalid length or hotspot")));
            }
            let inside = v.polygon().iter().all(|&(x, y)| {
                (0.0..=self.width as f64).contains(&x) && (0.0..=self.height as f64).contains(&y)
            });
            if !inside {
                return Err(Error::Spec(format!("vessel {i} extends outside the canvas")));
            }
        }
        Ok(())
    }

    /// Draws a scene with 1–3 vessels fully inside the canvas.
    pub fn random(seed: u64, height: usize, width: usize, regime: Regime, strength: f64) -> Self {
        let mut rng = Rng::for_label(seed, "scene");
        let count = 1 + rng.below(3);
        let side = height.min(width) as f64;
        let vessels = (0..count)
            .map(|_| {
                let class = VesselClass::ALL[rng.below(4)];
                let (lo, hi) = class.length_range();
                let (hlo, hhi) = class.hotspot_range();
                let mut v = Vessel {
                    class,
                    x: 0.0,
                    y: 0.0,
                    length: side * rng.uniform(lo, hi),
                    heading: rng.uniform(-PI, PI),
                    hotspot: rng.uniform(hlo, hhi),
                };
                let poly = v.polygon();
                let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
                for (x, y) in poly {
                    (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
                }
                let margin = 1.0;
                let span_x = (width as f64 - (x1 - x0) - 2.0 * margin).max(0.0);
                let span_y = (height as f64 - (y1 - y0) - 2.0 * margin).max(0.0);
                v.x = margin - x0 + rng.uniform(0.0, 1.0) * span_x;
                v.y = margin - y0 + rng.uniform(0.0, 1.0) * span_y;
                v
            })
            .collect();
        SceneSpec {
            seed,
            height,
            width,
            vessels,
            regime,
            strength,
            ir_noise: false,
        }
    }
}

/// Rendered pair with its mask and the scene description that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    /// Always carries the mask.
    pub pair: ImagePair,
    pub spec: SceneSpec,
}

impl LabeledSample {
    pub fn mask(&self) -> &Tensor {
        self.pair.mask.as_ref().expect("labeled samples carry a mask")
    }
}

/// Even-odd test of a point against a closed polygon.
pub fn point_in_polygon(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Renders the undegraded scene; later vessels occlude earlier ones.
pub fn render_clean(spec: &SceneSpec) -> Result<LabeledSample> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = Rng::for_label(spec.seed, "waves");
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| (rng.uniform(0.1, 0.6), rng.uniform(0.02, 0.2), rng.uniform(0.0, 2.0 * PI), rng.uniform(0.5, 1.0)))
        .collect();
    let texture = |i: usize, j: usize| {
        waves
            .iter()
            .map(|&(fy, fx, ph, a)| a * (fy * i as f64 + fx * j as f64 + ph).sin())
            .sum::<f64>()
            / waves.len() as f64
    };

    let mut vis = Tensor::zeros(&[3, h, w]);
    let mut ir = Tensor::zeros(&[1, h, w]);
    let mut mask = Tensor::zeros(&[h, w]);
    let base = [0.12, 0.3, 0.48];
    for i in 0..h {
        // Brighter towards the top of the frame (the horizon).
        let lift = 0.25 * (1.0 - i as f64 / (h - 1) as f64);
        for j in 0..w {
            let t = texture(i, j);
            for c in 0..3 {
                vis.set(&[c, i, j], base[c] + lift + 0.04 * t);
            }
            ir.set(&[0, i, j], 0.25 + 0.1 * lift + 0.03 * t);
        }
    }

    for v in &spec.vessels {
        let poly = v.polygon();
        let color = v.class.color();
        let (ex, ey) = v.engine();
        let sigma = 0.12 * v.length;
        for i in 0..h {
            for j in 0..w {
                let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
                if point_in_polygon(&poly, x, y) {
                    mask.set(&[i, j], v.class.id() as f64);
                    for (c, &col) in color.iter().enumerate() {
                        vis.set(&[c, i, j], col);
                    }
                    ir.set(&[0, i, j], 0.45);
                }
                let d2 = (x - ex).powi(2) + (y - ey).powi(2);
                let blob = v.hotspot * (-d2 / (2.0 * sigma * sigma)).exp();
                if blob > 1e-6 {
                    let cur = ir.at(&[0, i, j]);
                    ir.set(&[0, i, j], cur + blob);
                }
            }
        }
    }
    let clip = |t: Tensor| t.map(|v| v.clamp(0.0, 1.0));
    Ok(LabeledSample {
        pair: ImagePair::new(clip(vis), clip(ir), Some(mask))?,
        spec: spec.clone(),
    })
}
