//! Parametric tag renderer and the geometry-aware reference decoder.
//!
//! A tag is a flat disk: an outer ring of twelve 30° bit cells, a thin black
//! gap, and an inner disk split into a white half (toward the orientation
//! arrow, `+u` in the tag plane) and a black half. The disk is rotated by
//! yaw (in-plane), pitch and roll, then projected orthographically.
//!
//! Label positions and radii live in a 64-pixel reference frame; rendering
//! at another resolution scales the frame uniformly.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const NUM_BITS: usize = 12;
/// Region index of the white reference semicircle.
pub const WHITE_REFERENCE: usize = 12;
/// Region index of the black reference semicircle.
pub const BLACK_REFERENCE: usize = 13;
pub const NUM_REGIONS: usize = 14;
pub const MIN_RESOLUTION: usize = 16;
pub const REFERENCE_RESOLUTION: f64 = 64.0;

pub type Bits = [bool; NUM_BITS];

/// Ground-truth label: the ID bits and the tag pose.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagLabel {
    pub bits: Bits,
    /// Tag center in the 64-pixel reference frame.
    pub center_x: f64,
    pub center_y: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub scale: f64,
}

impl TagLabel {
    /// Centered, unrotated tag at scale 1.
    pub fn identity(bits: Bits) -> Self {
        Self {
            bits,
            center_x: REFERENCE_RESOLUTION / 2.0,
            center_y: REFERENCE_RESOLUTION / 2.0,
            yaw: 0.0,
            pitch: 0.0,
            roll: 0.0,
            scale: 1.0,
        }
    }

    pub fn with_bits(mut self, bits: Bits) -> Self {
        self.bits = bits;
        self
    }
}

/// Parses a `"100110100010"` style bit string.
pub fn parse_bits(s: &str) -> Result<Bits> {
    let chars: Vec<char> = s.chars().collect();
    if chars.len() != NUM_BITS {
        return Err(Error::InvalidParameter(format!(
            "expected {NUM_BITS} bits, got {:?}",
            s
        )));
    }
    let mut bits = [false; NUM_BITS];
    for (b, c) in bits.iter_mut().zip(chars) {
        *b = match c {
            '0' => false,
            '1' => true,
            other => {
                return Err(Error::InvalidParameter(format!("bad bit character {other:?}")))
            }
        };
    }
    Ok(bits)
}

pub fn format_bits(bits: &Bits) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// Renderer constants. Radii are in reference pixels at scale 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TagGeometry {
    pub outer_radius: f64,
    pub ring_inner_ratio: f64,
    pub inner_disk_ratio: f64,
    pub supersample: usize,
    /// Exclusive bound on |pitch| and |roll|.
    pub max_tilt: f64,
    pub background_value: f64,
    /// Erosion margin of the decode regions, in output pixels.
    pub erosion_margin: f64,
}

impl Default for TagGeometry {
    fn default() -> Self {
        Self {
            outer_radius: 22.0,
            ring_inner_ratio: 0.55,
            inner_disk_ratio: 0.45,
            supersample: 4,
            max_tilt: PI / 3.0,
            background_value: 0.0,
            erosion_margin: 1.5,
        }
    }
}

/// Clean render: tag image, background mask (1 = background) and depth.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    pub bg_mask: Image,
    pub depth: Image,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Region {
    Background,
    Gap,
    Cell(usize),
}

/// Orthographic projection of the tag plane for one label and resolution.
struct Projection {
    /// Tag plane (reference px) -> image offset (output px).
    a: [[f64; 2]; 2],
    inv: [[f64; 2]; 2],
    /// z = dz[0] * u + dz[1] * v
    dz: [f64; 2],
    center: [f64; 2],
    r_out: f64,
    r_ring: f64,
    r_disk: f64,
    yaw: f64,
}

impl Projection {
    fn new(label: &TagLabel, geom: &TagGeometry, resolution: usize) -> Self {
        let px = resolution as f64 / REFERENCE_RESOLUTION;
        let (sp, cp) = label.pitch.sin_cos();
        let (sr, cr) = label.roll.sin_cos();
        // M = R_roll(y) * R_pitch(x); yaw is applied in the tag plane below.
        let m = [
            [cr, sr * sp, sr * cp],
            [0.0, cp, -sp],
            [-sr, cr * sp, cr * cp],
        ];
        let a = [[m[0][0] * px, m[0][1] * px], [m[1][0] * px, m[1][1] * px]];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let inv = [
            [a[1][1] / det, -a[0][1] / det],
            [-a[1][0] / det, a[0][0] / det],
        ];
        let r_out = geom.outer_radius * label.scale;
        Self {
            a,
            inv,
            dz: [m[2][0], m[2][1]],
            center: [label.center_x * px, label.center_y * px],
            r_out,
            r_ring: r_out * geom.ring_inner_ratio,
            r_disk: r_out * geom.inner_disk_ratio,
            yaw: label.yaw,
        }
    }

    /// Image point (output px) -> tag plane point (reference px), before
    /// removing the yaw.
    fn to_plane(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        (
            self.inv[0][0] * dx + self.inv[0][1] * dy,
            self.inv[1][0] * dx + self.inv[1][1] * dy,
        )
    }

    /// Tag-frame point (after undoing yaw) -> image point.
    pub(crate) fn from_tag(&self, u: f64, v: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        let (pu, pv) = (c * u - s * v, s * u + c * v);
        (
            self.center[0] + self.a[0][0] * pu + self.a[0][1] * pv,
            self.center[1] + self.a[1][0] * pu + self.a[1][1] * pv,
        )
    }

    fn region(&self, x: f64, y: f64) -> Region {
        let (pu, pv) = self.to_plane(x, y);
        let rho = pu.hypot(pv);
        if rho > self.r_out {
            return Region::Background;
        }
        // Undo yaw to land in the tag's own frame.
        let (s, c) = self.yaw.sin_cos();
        let u = c * pu + s * pv;
        let v = -s * pu + c * pv;
        if rho >= self.r_ring {
            let theta = v.atan2(u).rem_euclid(TAU);
            let cell = ((theta / (TAU / NUM_BITS as f64)) as usize).min(NUM_BITS - 1);
            Region::Cell(cell)
        } else if rho <= self.r_disk {
            if u >= 0.0 {
                Region::Cell(WHITE_REFERENCE)
            } else {
                Region::Cell(BLACK_REFERENCE)
            }
        } else {
            Region::Gap
        }
    }

    fn depth(&self, x: f64, y: f64) -> f64 {
        let (u, v) = self.to_plane(x, y);
        self.dz[0] * u + self.dz[1] * v
    }
}

fn region_value(region: Region, bits: &Bits) -> f64 {
    match region {
        Region::Cell(WHITE_REFERENCE) => 1.0,
        Region::Cell(BLACK_REFERENCE) | Region::Gap => -1.0,
        Region::Cell(i) => {
            if bits[i] {
                1.0
            } else {
                -1.0
            }
        }
        Region::Background => unreachable!("background has no tag value"),
    }
}

pub fn validate_label(label: &TagLabel, geom: &TagGeometry) -> Result<()> {
    let finite = [
        label.center_x,
        label.center_y,
        label.yaw,
        label.pitch,
        label.roll,
        label.scale,
    ]
    .iter()
    .all(|v| v.is_finite());
    if !finite {
        return Err(Error::PoseOutOfBounds("non-finite pose value".into()));
    }
    if label.scale <= 0.0 {
        return Err(Error::PoseOutOfBounds(format!("scale {} <= 0", label.scale)));
    }
    if label.pitch.abs() >= geom.max_tilt || label.roll.abs() >= geom.max_tilt {
        return Err(Error::PoseOutOfBounds(format!(
            "pitch {:.3} / roll {:.3} exceed tilt bound {:.3}",
            label.pitch, label.roll, geom.max_tilt
        )));
    }
    let r = geom.outer_radius * label.scale;
    let inside = |c: f64| c - r >= 0.0 && c + r <= REFERENCE_RESOLUTION;
    if !inside(label.center_x) || !inside(label.center_y) {
        return Err(Error::PoseOutOfBounds(format!(
            "tag disk of radius {r:.2} at ({:.2}, {:.2}) leaves the canvas",
            label.center_x, label.center_y
        )));
    }
    Ok(())
}

fn check_resolution(resolution: usize) -> Result<()> {
    if resolution < MIN_RESOLUTION {
        return Err(Error::ResolutionTooSmall {
            resolution,
            minimum: MIN_RESOLUTION,
        });
    }
    Ok(())
}

/// Renders the clean tag image, background mask and depth map.
pub fn render(label: &TagLabel, resolution: usize, geom: &TagGeometry) -> Result<RenderOutput> {
    check_resolution(resolution)?;
    validate_label(label, geom)?;
    let proj = Projection::new(label, geom, resolution);
    let ss = geom.supersample.max(1);
    let samples = (ss * ss) as f64;

    let mut image = Image::zeros(resolution, resolution);
    let mut bg_mask = Image::zeros(resolution, resolution);
    let mut depth = Image::zeros(resolution, resolution);
    let mut fg_depth = Vec::new();

    for py in 0..resolution {
        for px in 0..resolution {
            let mut value = 0.0;
            let mut covered = 0usize;
            for sy in 0..ss {
                for sx in 0..ss {
                    let x = px as f64 + (sx as f64 + 0.5) / ss as f64;
                    let y = py as f64 + (sy as f64 + 0.5) / ss as f64;
                    let region = proj.region(x, y);
                    if region != Region::Background {
                        value += region_value(region, &label.bits);
                        covered += 1;
                    }
                }
            }
            if (covered as f64) / samples < 0.5 {
                image.set(px, py, geom.background_value);
                bg_mask.set(px, py, 1.0);
            } else {
                let bg = (samples - covered as f64) * geom.background_value;
                image.set(px, py, (value + bg) / samples);
                let z = proj.depth(px as f64 + 0.5, py as f64 + 0.5);
                depth.set(px, py, z);
                fg_depth.push((px, py));
            }
        }
    }

    let (lo, hi) = fg_depth
        .iter()
        .map(|&(x, y)| depth.get(x, y))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), z| {
            (lo.min(z), hi.max(z))
        });
    for &(x, y) in &fg_depth {
        let z = depth.get(x, y);
        let d = if hi - lo > 1e-12 { (z - lo) / (hi - lo) } else { 0.5 };
        depth.set(x, y, d);
    }

    Ok(RenderOutput {
        image,
        bg_mask,
        depth,
    })
}

/// `W(x)`: 1 where the pixel is white (`x > 0`), 0 elsewhere.
pub fn white_mask(x: &Image) -> Image {
    x.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

/// Interior pixels of the twelve bit cells and the two reference halves.
#[derive(Clone, Debug, PartialEq)]
pub struct CellRegions {
    width: usize,
    height: usize,
    pixels: Vec<Vec<usize>>,
}

impl CellRegions {
    /// Pixel indices (row-major) belonging to region `i` (0..14).
    pub fn pixels(&self, i: usize) -> &[usize] {
        &self.pixels[i]
    }

    pub fn mask(&self, i: usize) -> Image {
        let mut m = Image::zeros(self.width, self.height);
        for &p in &self.pixels[i] {
            m.data_mut()[p] = 1.0;
        }
        m
    }

    pub fn region_mean(&self, x: &Image, i: usize) -> f64 {
        let px = &self.pixels[i];
        px.iter().map(|&p| x.data()[p]).sum::<f64>() / px.len() as f64
    }

    /// Reads the bits relative to the midpoint of the two references.
    pub fn decode(&self, x: &Image) -> Result<Bits> {
        if x.dims() != (self.width, self.height) {
            return Err(Error::dims((self.width, self.height), x.dims()));
        }
        let white = self.region_mean(x, WHITE_REFERENCE);
        let black = self.region_mean(x, BLACK_REFERENCE);
        if white <= black || !white.is_finite() || !black.is_finite() {
            return Err(Error::DecodeFailure { white, black });
        }
        let mid = 0.5 * (white + black);
        let mut bits = [false; NUM_BITS];
        for (i, b) in bits.iter_mut().enumerate() {
            *b = self.region_mean(x, i) > mid;
        }
        Ok(bits)
    }
}

/// Eroded decode regions. Depends on the pose only, never on the bits.
pub fn cell_regions(label: &TagLabel, resolution: usize, geom: &TagGeometry) -> Result<CellRegions> {
    check_resolution(resolution)?;
    validate_label(label, geom)?;
    let proj = Projection::new(label, geom, resolution);
    let margin = geom.erosion_margin;
    let probes: Vec<(f64, f64)> = (0..16)
        .map(|k| {
            let a = TAU * k as f64 / 16.0;
            (margin * a.cos(), margin * a.sin())
        })
        .chain((0..8).map(|k| {
            let a = TAU * (k as f64 + 0.5) / 8.0;
            (0.5 * margin * a.cos(), 0.5 * margin * a.sin())
        }))
        .collect();

    let mut pixels = vec![Vec::new(); NUM_REGIONS];
    for py in 0..resolution {
        for px in 0..resolution {
            let (cx, cy) = (px as f64 + 0.5, py as f64 + 0.5);
            let Region::Cell(r) = proj.region(cx, cy) else {
                continue;
            };
            if probes
                .iter()
                .all(|&(dx, dy)| proj.region(cx + dx, cy + dy) == Region::Cell(r))
            {
                pixels[r].push(py * resolution + px);
            }
        }
    }
    if let Some(region) = pixels.iter().position(|p| p.is_empty()) {
        return Err(Error::UndecodableGeometry { region });
    }
    Ok(CellRegions {
        width: resolution,
        height: resolution,
        pixels,
    })
}

/// Ground-truth decode of `x` given the known tag geometry.
pub fn decode_oracle(x: &Image, label: &TagLabel, geom: &TagGeometry) -> Result<Bits> {
    if x.width() != x.height() {
        return Err(Error::InvalidParameter("decode expects a square image".into()));
    }
    cell_regions(label, x.width(), geom)?.decode(x)
}

/// Maps a point of the unrotated tag frame (reference px, origin at the tag
/// center) to output-pixel coordinates of an image at `resolution`.
pub fn tag_to_image(label: &TagLabel, geom: &TagGeometry, resolution: usize, u: f64, v: f64) -> (f64, f64) {
    Projection::new(label, geom, resolution).from_tag(u, v)
}

/// Sampling distribution for labels; stands in for a learned label
/// distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseDistribution {
    pub tilt_sigma: f64,
    pub tilt_bound: f64,
    pub center_jitter: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for PoseDistribution {
    fn default() -> Self {
        Self {
            tilt_sigma: 0.3,
            tilt_bound: PI / 3.0,
            center_jitter: 4.0,
            scale_min: 0.8,
            scale_max: 1.1,
        }
    }
}

impl PoseDistribution {
    pub fn validate(&self, geom: &TagGeometry) -> Result<()> {
        let ok = self.tilt_sigma > 0.0
            && self.tilt_bound > 0.0
            && self.tilt_bound <= geom.max_tilt
            && self.center_jitter >= 0.0
            && self.scale_min > 0.0
            && self.scale_min <= self.scale_max
            && REFERENCE_RESOLUTION / 2.0 - self.center_jitter - geom.outer_radius * self.scale_max
                >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid pose distribution {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TagLabel {
        let mut bits = [false; NUM_BITS];
        for b in bits.iter_mut() {
            *b = rng.random_bool(0.5);
        }
        let tilt = Normal::new(0.0, self.tilt_sigma).expect("tilt sigma");
        let truncated = |rng: &mut R| loop {
            let v: f64 = tilt.sample(rng);
            if v.abs() < self.tilt_bound {
                return v;
            }
        };
        let pitch = truncated(rng);
        let roll = truncated(rng);
        let c = REFERENCE_RESOLUTION / 2.0;
        let j = self.center_jitter;
        TagLabel {
            bits,
            center_x: c + rng.random_range(-j..=j),
            center_y: c + rng.random_range(-j..=j),
            yaw: rng.random_range(0.0..TAU),
            pitch,
            roll,
            scale: rng.random_range(self.scale_min..=self.scale_max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geom() -> TagGeometry {
        TagGeometry::default()
    }

    #[test]
    fn all_zero_bits_render_black_cells() {
        let label = TagLabel::identity([false; NUM_BITS]);
        let out = render(&label, 64, &geom()).unwrap();
        let regions = cell_regions(&label, 64, &geom()).unwrap();
        for i in 0..NUM_BITS {
            assert!(regions.region_mean(&out.image, i) < 0.0, "cell {i}");
        }
        assert!(regions.region_mean(&out.image, WHITE_REFERENCE) > 0.0);
    }

    #[test]
    fn figure_id_round_trips() {
        let bits = parse_bits("100110100010").unwrap();
        let label = TagLabel::identity(bits);
        let out = render(&label, 64, &geom()).unwrap();
        let decoded = decode_oracle(&out.image, &label, &geom()).unwrap();
        assert_eq!(format_bits(&decoded), "100110100010");
    }

    #[test]
    fn pitch_foreshortens_the_disk() {
        let flat = TagLabel::identity([true; NUM_BITS]);
        let tilted = TagLabel { pitch: 0.5, ..flat };
        let fg = |l: &TagLabel| {
            let out = render(l, 64, &geom()).unwrap();
            out.bg_mask.data().iter().filter(|&&m| m == 0.0).count() as f64
        };
        let (a0, a1) = (fg(&flat), fg(&tilted));
        assert!(a1 < a0);
        assert!((a1 / a0 - 0.5f64.cos()).abs() < 0.03, "ratio {}", a1 / a0);
    }

    #[test]
    fn resolution_below_minimum_is_rejected() {
        let label = TagLabel::identity([false; NUM_BITS]);
        assert!(matches!(
            render(&label, 8, &geom()),
            Err(Error::ResolutionTooSmall { .. })
        ));
    }

    #[test]
    fn extreme_tilt_is_rejected() {
        let label = TagLabel {
            pitch: 1.1,
            ..TagLabel::identity([false; NUM_BITS])
        };
        assert!(matches!(
            render(&label, 64, &geom()),
            Err(Error::PoseOutOfBounds(_))
        ));
    }

    #[test]
    fn white_mask_of_constants() {
        assert!(white_mask(&Image::filled(8, 8, -1.0)).data().iter().all(|&v| v == 0.0));
        assert!(white_mask(&Image::filled(8, 8, 1.0)).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn white_mask_covers_cells_of_all_ones_tag() {
        let label = TagLabel::identity([true; NUM_BITS]);
        let out = render(&label, 64, &geom()).unwrap();
        let w = white_mask(&out.image);
        let regions = cell_regions(&label, 64, &geom()).unwrap();
        for i in (0..NUM_BITS).chain([WHITE_REFERENCE]) {
            assert!(regions.pixels(i).iter().all(|&p| w.data()[p] == 1.0), "region {i}");
        }
        assert!(regions.pixels(BLACK_REFERENCE).iter().all(|&p| w.data()[p] == 0.0));
    }

    #[test]
    fn identity_regions_are_nonempty_and_disjoint() {
        let label = TagLabel::identity([false; NUM_BITS]);
        let regions = cell_regions(&label, 64, &geom()).unwrap();
        let mut seen = std::collections::HashSet::new();
        for i in 0..NUM_REGIONS {
            assert!(!regions.pixels(i).is_empty());
            for &p in regions.pixels(i) {
                assert!(seen.insert(p), "pixel {p} in two regions");
            }
        }
    }

    #[test]
    fn regions_ignore_bits() {
        let a = TagLabel { yaw: 0.7, pitch: 0.2, ..TagLabel::identity([false; NUM_BITS]) };
        let b = a.with_bits([true; NUM_BITS]);
        assert_eq!(cell_regions(&a, 64, &geom()).unwrap(), cell_regions(&b, 64, &geom()).unwrap());
    }

    #[test]
    fn regions_are_periodic_in_yaw() {
        let a = TagLabel { yaw: 0.4, ..TagLabel::identity([false; NUM_BITS]) };
        let b = TagLabel { yaw: 0.4 + TAU, ..a };
        let ra = cell_regions(&a, 64, &geom()).unwrap();
        let rb = cell_regions(&b, 64, &geom()).unwrap();
        for i in 0..NUM_REGIONS {
            let sa: std::collections::HashSet<_> = ra.pixels(i).iter().collect();
            let sb: std::collections::HashSet<_> = rb.pixels(i).iter().collect();
            assert!(sa.symmetric_difference(&sb).count() <= 1, "region {i}");
        }
    }

    #[test]
    fn decode_is_invariant_to_affine_intensity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let label = PoseDistribution::default().sample(&mut rng);
        let out = render(&label, 64, &geom()).unwrap();
        let scaled = out.image.map(|v| 0.5 * v + 0.1);
        assert_eq!(
            decode_oracle(&scaled, &label, &geom()).unwrap(),
            decode_oracle(&out.image, &label, &geom()).unwrap()
        );
    }

    #[test]
    fn negating_one_cell_flips_exactly_that_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let label = PoseDistribution::default().sample(&mut rng);
        let out = render(&label, 64, &geom()).unwrap();
        let regions = cell_regions(&label, 64, &geom()).unwrap();
        for cell in 0..NUM_BITS {
            let mut img = out.image.clone();
            let mask = regions.mask(cell);
            for (v, m) in img.data_mut().iter_mut().zip(mask.data()) {
                if *m == 1.0 {
                    *v = -*v;
                }
            }
            let decoded = regions.decode(&img).unwrap();
            let flipped: Vec<usize> = (0..NUM_BITS).filter(|&i| decoded[i] != label.bits[i]).collect();
            assert_eq!(flipped, vec![cell]);
        }
    }

    #[test]
    fn swapped_references_are_a_decode_failure() {
        let label = TagLabel::identity([true; NUM_BITS]);
        let out = render(&label, 64, &geom()).unwrap();
        let inverted = out.image.map(|v| -v);
        assert!(matches!(
            decode_oracle(&inverted, &label, &geom()),
            Err(Error::DecodeFailure { .. })
        ));
    }

    #[test]
    fn low_resolution_regions_vanish() {
        let label = TagLabel::identity([true; NUM_BITS]);
        assert!(matches!(
            cell_regions(&label, 16, &geom()),
            Err(Error::UndecodableGeometry { .. })
        ));
    }

    #[test]
    fn rendering_is_deterministic_and_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let label = PoseDistribution::default().sample(&mut rng);
            let a = render(&label, 64, &geom()).unwrap();
            let b = render(&label, 64, &geom()).unwrap();
            assert_eq!(a, b);
            for i in 0..a.image.len() {
                if a.bg_mask.data()[i] == 1.0 {
                    assert_eq!(a.depth.data()[i], 0.0);
                }
                let v = a.image.data()[i];
                assert!((-1.0..=1.0).contains(&v));
                let d = a.depth.data()[i];
                assert!((0.0..=1.0).contains(&d));
            }
        }
    }

    #[test]
    fn sampled_poses_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dist = PoseDistribution::default();
        dist.validate(&geom()).unwrap();
        for _ in 0..2000 {
            validate_label(&dist.sample(&mut rng), &geom()).unwrap();
        }
    }
}
