//! Procedural pseudo-CXR rendering.
//!
//! Image columns follow radiological convention: the patient's right lung is
//! drawn on the image left. Every random draw for the base anatomy and noise
//! comes from one stream, and each finding uses its own stream, so changing the
//! findings never shifts the noise field.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::finding::{Finding, Kind, Severity, Side};
use crate::numcore::rng::stream_rng;

pub const IMAGE_SIZE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Frontal,
    Lateral,
}

/// Grayscale image with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(height * width, data.len());
        Image { height, width, data }
    }

    pub fn filled(height: usize, width: usize, v: f32) -> Self {
        Image { height, width, data: vec![v; height * width] }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Ellipse {
    /// Normalized radius: < 1 inside.
    pub fn rho(&self, x: f64, y: f64) -> f64 {
        (((x - self.cx) / self.rx).powi(2) + ((y - self.cy) / self.ry).powi(2)).sqrt()
    }

    /// Soft inside-indicator with a ~0.6 px edge.
    pub fn soft(&self, x: f64, y: f64) -> f64 {
        let r = self.rho(x, y);
        let edge = 0.6 / self.rx.min(self.ry);
        1.0 / (1.0 + ((r - 1.0) / edge).exp())
    }

    fn scaled(&self, sx: f64, sy: f64) -> Ellipse {
        Ellipse { rx: self.rx * sx, ry: self.ry * sy, ..*self }
    }
}

/// Seed-dependent base geometry of one study.
#[derive(Clone, Debug, PartialEq)]
pub struct Anatomy {
    pub view: View,
    pub body: Ellipse,
    /// Patient-right lung (image left) and patient-left lung; identical on lateral views.
    pub right_lung: Ellipse,
    pub left_lung: Ellipse,
    pub heart: Ellipse,
    pub rib_phase: f64,
}

impl Anatomy {
    pub fn lung(&self, side: Side) -> Vec<Ellipse> {
        match (self.view, side) {
            (View::Lateral, Side::None) => vec![],
            (View::Lateral, _) => vec![self.right_lung],
            (_, Side::Left) => vec![self.left_lung],
            (_, Side::Right) => vec![self.right_lung],
            (_, Side::Bilateral) => vec![self.right_lung, self.left_lung],
            (_, Side::None) => vec![],
        }
    }

    fn lung_soft(&self, side: Side, x: f64, y: f64) -> f64 {
        self.lung(side).iter().map(|e| e.soft(x, y)).fold(0.0, f64::max)
    }

    /// Binary lung-field mask for one side (`Bilateral` = both).
    pub fn lung_mask(&self, side: Side) -> Vec<bool> {
        pixel_centers().map(|(x, y)| self.lung(side).iter().any(|e| e.rho(x, y) < 1.0)).collect()
    }

    /// Bounding box around the cardiac silhouette, enlarged to cover cardiomegaly.
    pub fn heart_region_mask(&self) -> Vec<bool> {
        let e = self.heart.scaled(1.6, 1.35);
        pixel_centers().map(|(x, y)| e.rho(x, y) < 1.0).collect()
    }

    /// Mask of the area a finding can touch.
    pub fn region_mask(&self, finding: &Finding) -> Vec<bool> {
        match finding.kind {
            Kind::Cardiomegaly => self.heart_region_mask(),
            Kind::NoFinding => vec![false; IMAGE_SIZE * IMAGE_SIZE],
            _ => self.lung_mask(finding.side),
        }
    }
}

fn pixel_centers() -> impl Iterator<Item = (f64, f64)> {
    (0..IMAGE_SIZE).flat_map(|y| (0..IMAGE_SIZE).map(move |x| (x as f64 + 0.5, y as f64 + 0.5)))
}

pub fn anatomy(view: View, seed: u64) -> Anatomy {
    let mut rng = stream_rng(seed, "anatomy", 0);
    let dx = rng.random_range(-0.75..0.75);
    let dy = rng.random_range(-0.75..0.75);
    let s = rng.random_range(0.95..1.05);
    let rib_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let body = Ellipse { cx: 16.0 + dx, cy: 16.5 + dy, rx: 15.0 * s, ry: 16.5 * s };
    match view {
        View::Frontal => Anatomy {
            view,
            body,
            right_lung: Ellipse { cx: 10.0 + dx, cy: 14.5 + dy, rx: 5.6 * s, ry: 10.0 * s },
            left_lung: Ellipse { cx: 22.0 + dx, cy: 14.5 + dy, rx: 5.6 * s, ry: 10.0 * s },
            heart: Ellipse { cx: 18.0 + dx, cy: 21.0 + dy, rx: 5.0 * s, ry: 4.0 * s },
            rib_phase,
        },
        View::Lateral => {
            let lung = Ellipse { cx: 17.5 + dx, cy: 14.5 + dy, rx: 8.5 * s, ry: 10.5 * s };
            Anatomy {
                view,
                body,
                right_lung: lung,
                left_lung: lung,
                heart: Ellipse { cx: 11.5 + dx, cy: 20.5 + dy, rx: 4.5 * s, ry: 4.5 * s },
                rib_phase,
            }
        }
    }
}

const NOISE_STD: f64 = 0.015;

fn by_level(sev: Severity, v: [f64; 3]) -> f64 {
    v[sev.level()]
}

/// Frontal rendering; see [`render_view`].
pub fn render_image(findings: &[Finding], seed: u64) -> Image {
    render_view(findings, View::Frontal, seed)
}

/// Deterministic pseudo-CXR for `(findings, view, seed)`.
pub fn render_view(findings: &[Finding], view: View, seed: u64) -> Image {
    let an = anatomy(view, seed);
    let n = IMAGE_SIZE * IMAGE_SIZE;
    let mut noise_rng = stream_rng(seed, "noise", 0);
    let normal = Normal::new(0.0, NOISE_STD).expect("valid std");
    let noise: Vec<f64> = (0..n).map(|_| normal.sample(&mut noise_rng)).collect();

    let heart = match findings.iter().find(|f| f.kind == Kind::Cardiomegaly) {
        Some(f) => an.heart.scaled(
            by_level(f.severity, [1.18, 1.33, 1.48]),
            by_level(f.severity, [1.08, 1.15, 1.22]),
        ),
        None => an.heart,
    };
    let ptx: Vec<&Finding> = findings.iter().filter(|f| f.kind == Kind::Pneumothorax).collect();

    let mut out = Vec::with_capacity(n);
    for (i, (x, y)) in pixel_centers().enumerate() {
        let body = an.body.soft(x, y);
        let lung = an.lung_soft(Side::Bilateral, x, y);
        let mut v = 0.08 + 0.47 * body;
        v -= 0.33 * lung;
        let rib = 0.5 + 0.5 * (std::f64::consts::TAU * y / 4.5 + an.rib_phase + 0.25 * (x - 16.0).abs()).sin();
        let mut rib_weight = 1.0;
        for f in &ptx {
            rib_weight *= 1.0 - pneumothorax_weight(&an, f, x, y);
        }
        v += 0.05 * rib * lung * rib_weight;
        let h = heart.soft(x, y);
        v = v * (1.0 - h) + 0.76 * h;
        out.push(v);
        debug_assert_eq!(out.len(), i + 1);
    }

    for f in findings {
        let mut frng = stream_rng(seed, f.kind.name(), 0);
        match f.kind {
            Kind::Opacity => {
                let amp = by_level(f.severity, [0.18, 0.30, 0.42]);
                let sigma = by_level(f.severity, [1.8, 2.5, 3.2]);
                for lung in an.lung(f.side) {
                    let bx = lung.cx + frng.random_range(-1.5..1.5);
                    let by = lung.cy + frng.random_range(-3.5..3.5);
                    for (i, (x, y)) in pixel_centers().enumerate() {
                        let r2 = (x - bx).powi(2) + (y - by).powi(2);
                        out[i] += amp * (-r2 / (2.0 * sigma * sigma)).exp() * lung.soft(x, y);
                    }
                }
            }
            Kind::Effusion => {
                let height = by_level(f.severity, [3.0, 5.5, 8.0]);
                for lung in an.lung(f.side) {
                    let level = lung.cy + lung.ry - height;
                    for (i, (x, y)) in pixel_centers().enumerate() {
                        let meniscus = 0.8 * ((x - lung.cx) / lung.rx).abs();
                        let band = 1.0 / (1.0 + (-(y - (level - meniscus)) / 0.7).exp());
                        out[i] += 0.38 * band * lung.soft(x, y);
                    }
                }
            }
            Kind::Edema => {
                let amp = by_level(f.severity, [0.08, 0.14, 0.20]);
                let hilum_x = (an.right_lung.cx + an.left_lung.cx) / 2.0;
                for (i, (x, y)) in pixel_centers().enumerate() {
                    let l = an.lung_soft(Side::Bilateral, x, y);
                    let perihilar = 0.6 + 0.4 * (-(x - hilum_x).powi(2) / 50.0).exp();
                    out[i] += amp * perihilar * l;
                }
            }
            Kind::Pneumothorax => {
                let dark = by_level(f.severity, [0.10, 0.15, 0.20]);
                for (i, (x, y)) in pixel_centers().enumerate() {
                    out[i] -= dark * pneumothorax_weight(&an, f, x, y);
                }
            }
            Kind::Cardiomegaly | Kind::NoFinding => {}
        }
    }

    let data = out.iter().zip(&noise).map(|(&v, &e)| (v + e).clamp(0.0, 1.0) as f32).collect();
    Image::new(IMAGE_SIZE, IMAGE_SIZE, data)
}

/// Soft weight of the apical crescent for a pneumothorax finding.
fn pneumothorax_weight(an: &Anatomy, f: &Finding, x: f64, y: f64) -> f64 {
    let width = by_level(f.severity, [0.25, 0.38, 0.50]);
    an.lung(f.side)
        .iter()
        .map(|lung| {
            if y > lung.cy {
                return 0.0;
            }
            let rho = lung.rho(x, y);
            let inner = 1.0 / (1.0 + (-(rho - (1.0 - width)) / 0.05).exp());
            inner * lung.soft(x, y)
        })
        .fold(0.0, f64::max)
}

/// Mean absolute difference against the finding-free rendering inside the finding's region.
pub fn finding_region_deviation(finding: &Finding, view: View, seed: u64) -> f64 {
    let an = anatomy(view, seed);
    let mask = an.region_mask(finding);
    let base = render_view(&[Finding::no_finding()], view, seed);
    let img = render_view(&[*finding], view, seed);
    let (mut s, mut n) = (0.0, 0usize);
    for ((&m, &a), &b) in mask.iter().zip(&img.data).zip(&base.data) {
        if m {
            s += (a as f64 - b as f64).abs();
            n += 1;
        }
    }
    s / n.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn masked_mean(img: &Image, mask: &[bool]) -> f64 {
        let (s, n) = img.data.iter().zip(mask).filter(|(_, &m)| m).fold((0.0, 0), |(s, n), (&v, _)| (s + v as f64, n + 1));
        s / n as f64
    }

    #[test]
    fn deterministic() {
        let f = [Finding::no_finding()];
        assert_eq!(render_image(&f, 7), render_image(&f, 7));
        assert_ne!(render_image(&f, 7), render_image(&f, 8));
    }

    #[test]
    fn values_in_unit_range() {
        let f = [
            Finding::new(Kind::Opacity, Side::Bilateral, Severity::Severe).unwrap(),
            Finding::new(Kind::Effusion, Side::Left, Severity::Severe).unwrap(),
        ];
        for seed in 0..5 {
            for view in [View::Frontal, View::Lateral] {
                let img = render_view(&f, view, seed);
                assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn severe_opacity_brighter_than_mild() {
        let seed = 3;
        let mask = anatomy(View::Frontal, seed).lung_mask(Side::Left);
        let mild = render_image(&[Finding::new(Kind::Opacity, Side::Left, Severity::Mild).unwrap()], seed);
        let severe = render_image(&[Finding::new(Kind::Opacity, Side::Left, Severity::Severe).unwrap()], seed);
        assert!(masked_mean(&severe, &mask) > masked_mean(&mild, &mask));
    }

    #[test]
    fn right_effusion_leaves_left_lung_alone() {
        for seed in 0..10 {
            let mask = anatomy(View::Frontal, seed).lung_mask(Side::Left);
            let base = render_image(&[Finding::no_finding()], seed);
            let eff = render_image(&[Finding::new(Kind::Effusion, Side::Right, Severity::Severe).unwrap()], seed);
            let d = (masked_mean(&eff, &mask) - masked_mean(&base, &mask)).abs();
            assert!(d < 0.01, "seed {seed}: {d}");
        }
    }

    #[test]
    fn severity_is_monotone_for_every_kind_and_side() {
        for seed in 0..6 {
            for kind in Kind::PATHOLOGIES {
                for &side in kind.allowed_sides() {
                    let dev: Vec<f64> = Severity::GRADED
                        .iter()
                        .map(|&s| finding_region_deviation(&Finding::new(kind, side, s).unwrap(), View::Frontal, seed))
                        .collect();
                    assert!(dev[0] < dev[1] && dev[1] < dev[2], "{kind:?} {side:?} seed {seed}: {dev:?}");
                    assert!(dev[0] > 0.0);
                }
            }
        }
    }
}
