//! Per-pixel confidence maps built from detection boxes.
//!
//! Every static detection box carries a clamped, axis-aligned 2D Gaussian:
//! the box center gets the peak confidence, the ellipse through the edge
//! midpoints gets the floor, and anything below the floor (box corners,
//! pixels outside every box) is held at the floor. Where boxes overlap the
//! larger value wins. Dynamic-class detections are ignored, so the pixels
//! they cover stay at background confidence.

use nalgebra::{Matrix2, Vector2};

use crate::error::ProbMapError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    center: Vector2<f64>,
    half_width: f64,
    half_height: f64,
}

impl BoundingBox {
    pub fn new(center: Vector2<f64>, half_width: f64, half_height: f64) -> Result<Self, ProbMapError> {
        let ok = half_width.is_finite()
            && half_height.is_finite()
            && half_width > 0.0
            && half_height > 0.0
            && center.iter().all(|v| v.is_finite());
        if !ok {
            return Err(ProbMapError::InvalidBox {
                half_width,
                half_height,
            });
        }
        Ok(Self {
            center,
            half_width,
            half_height,
        })
    }

    pub fn center(&self) -> Vector2<f64> {
        self.center
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn half_height(&self) -> f64 {
        self.half_height
    }

    /// Edges are inclusive.
    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        (pixel.x - self.center.x).abs() <= self.half_width
            && (pixel.y - self.center.y).abs() <= self.half_height
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub label: String,
    pub bbox: BoundingBox,
    /// Carried through from the detector; does not affect the map.
    pub detector_score: f64,
    /// Whether the class belongs to the predefined static-object set.
    pub is_static: bool,
}

impl Detection {
    pub fn new(
        label: impl Into<String>,
        bbox: BoundingBox,
        detector_score: f64,
        is_static: bool,
    ) -> Result<Self, ProbMapError> {
        if !(0.0..=1.0).contains(&detector_score) {
            return Err(ProbMapError::InvalidScore(detector_score));
        }
        Ok(Self {
            label: label.into(),
            bbox,
            detector_score,
            is_static,
        })
    }
}

/// Peak/floor calibration of the per-box Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianWeightModel {
    peak: f64,
    floor: f64,
}

impl Default for GaussianWeightModel {
    fn default() -> Self {
        Self {
            peak: 0.99,
            floor: 0.1,
        }
    }
}

impl GaussianWeightModel {
    pub fn new(peak: f64, floor: f64) -> Result<Self, ProbMapError> {
        if !(floor > 0.0 && floor < peak && peak <= 1.0) {
            return Err(ProbMapError::InvalidModel { peak, floor });
        }
        Ok(Self { peak, floor })
    }

    pub fn peak(&self) -> f64 {
        self.peak
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Number of standard deviations between the center and an edge midpoint,
    /// chosen so the Gaussian decays from `peak` to exactly `floor` there.
    pub fn kappa(&self) -> f64 {
        self.kappa_sq().sqrt()
    }

    fn kappa_sq(&self) -> f64 {
        2.0 * (self.peak / self.floor).ln()
    }

    /// Diagonal covariance (pixels^2) implied for `bbox`.
    pub fn covariance(&self, bbox: &BoundingBox) -> Matrix2<f64> {
        let k = self.kappa();
        let sx = bbox.half_width / k;
        let sy = bbox.half_height / k;
        Matrix2::new(sx * sx, 0.0, 0.0, sy * sy)
    }
}

/// Confidence that `bbox` assigns to `pixel`.
///
/// The Mahalanobis distance is evaluated in box-normalized coordinates so the
/// edge midpoints land exactly on the floor. Pixels outside the box get the
/// floor as well.
pub fn box_weight(model: &GaussianWeightModel, bbox: &BoundingBox, pixel: &Vector2<f64>) -> f64 {
    if !bbox.contains(pixel) {
        return model.floor;
    }
    let u = (pixel.x - bbox.center.x) / bbox.half_width;
    let v = (pixel.y - bbox.center.y) / bbox.half_height;
    let r_sq = u * u + v * v;
    if r_sq >= 1.0 {
        return model.floor;
    }
    let w = model.peak * (-0.5 * model.kappa_sq() * r_sq).exp();
    w.max(model.floor)
}

/// Row-major confidence raster. Pixel `(x, y)` sits at integer coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl ProbabilityMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self, ProbMapError> {
        if width == 0 || height == 0 {
            return Err(ProbMapError::EmptyMap { width, height });
        }
        let expected = width as usize * height as usize;
        if values.len() != expected {
            return Err(ProbMapError::SizeMismatch {
                expected,
                got: values.len(),
            });
        }
        if let Some(&bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ProbMapError::ValueOutOfRange(bad));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn uniform(width: u32, height: u32, value: f64) -> Result<Self, ProbMapError> {
        if width == 0 || height == 0 {
            return Err(ProbMapError::EmptyMap { width, height });
        }
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// Nearest-pixel lookup: coordinates are rounded, then clamped to the raster.
    pub fn sample(&self, pixel: &Vector2<f64>) -> f64 {
        let (x, y) = self.nearest_pixel(pixel);
        self.get(x, y)
    }

    pub fn nearest_pixel(&self, pixel: &Vector2<f64>) -> (u32, u32) {
        let clamp = |v: f64, len: u32| -> u32 {
            let r = v.round();
            if r.is_nan() || r <= 0.0 {
                0
            } else if r >= f64::from(len - 1) {
                len - 1
            } else {
                r as u32
            }
        };
        (clamp(pixel.x, self.width), clamp(pixel.y, self.height))
    }
}

/// Builds the confidence map for one frame.
///
/// Boxes may extend past the image; they are clipped but the Gaussian keeps
/// its true center. The exponential is separable for a diagonal covariance,
/// so each box costs one `exp` per covered row and column.
pub fn build_map(
    detections: &[Detection],
    width: u32,
    height: u32,
    model: &GaussianWeightModel,
) -> Result<ProbabilityMap, ProbMapError> {
    if width == 0 || height == 0 {
        return Err(ProbMapError::EmptyMap { width, height });
    }
    let stride = width as usize;
    let mut values = vec![model.floor; stride * height as usize];
    let half_k_sq = 0.5 * model.kappa_sq();
    let mut col_u_sq = Vec::new();
    let mut col_g = Vec::new();

    for det in detections.iter().filter(|d| d.is_static) {
        let b = &det.bbox;
        let Some((x0, x1)) = covered_range(b.center.x, b.half_width, width) else {
            continue;
        };
        let Some((y0, y1)) = covered_range(b.center.y, b.half_height, height) else {
            continue;
        };

        col_u_sq.clear();
        col_g.clear();
        for x in x0..=x1 {
            let u = (x as f64 - b.center.x) / b.half_width;
            let u_sq = u * u;
            col_u_sq.push(u_sq);
            col_g.push(model.peak * (-half_k_sq * u_sq).exp());
        }

        for y in y0..=y1 {
            let v = (y as f64 - b.center.y) / b.half_height;
            let v_sq = v * v;
            if v_sq >= 1.0 {
                continue;
            }
            let row_g = (-half_k_sq * v_sq).exp();
            let row = &mut values[y * stride + x0..=y * stride + x1];
            for ((cell, &u_sq), &g) in row.iter_mut().zip(&col_u_sq).zip(&col_g) {
                if u_sq + v_sq < 1.0 {
                    let w = g * row_g;
                    if w > *cell {
                        *cell = w;
                    }
                }
            }
        }
    }

    Ok(ProbabilityMap {
        width,
        height,
        values,
    })
}

// Integer pixel range [lo, hi] with |p - center| <= half, clipped to [0, len-1].
fn covered_range(center: f64, half: f64, len: u32) -> Option<(usize, usize)> {
    let lo = (center - half).ceil().max(0.0);
    let hi = (center + half).floor().min(f64::from(len - 1));
    if lo > hi {
        return None;
    }
    let (lo, hi) = (lo as usize, hi as usize);
    // Guard against rounding in center +- half admitting a pixel just outside.
    let lo = if (lo as f64 - center).abs() > half { lo + 1 } else { lo };
    let hi = if (hi as f64 - center).abs() > half { hi.checked_sub(1)? } else { hi };
    (lo <= hi).then_some((lo, hi))
}

/// Encodes the map as binary PGM (P5, maxval 255), byte = round(255 * value).
pub fn render_pgm(map: &ProbabilityMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.reserve(map.values.len());
    out.extend(map.values.iter().map(|v| (255.0 * v).round().clamp(0.0, 255.0) as u8));
    out
}

/// Decodes a P5 image with maxval 255 back into a map of `byte / 255` values.
pub fn parse_pgm(bytes: &[u8]) -> Result<ProbabilityMap, ProbMapError> {
    let err = |m: &str| ProbMapError::Pgm(m.to_string());
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| err("non-ascii header"))?);
    }
    if fields[0] != "P5" {
        return Err(err("magic is not P5"));
    }
    let parse = |s: &str| s.parse::<u32>().map_err(|_| err("bad header number"));
    let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(err("maxval must be 255"));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    let n = width as usize * height as usize;
    let raster = bytes.get(pos..pos + n).ok_or_else(|| err("truncated raster"))?;
    ProbabilityMap::new(width, height, raster.iter().map(|&b| f64::from(b) / 255.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn static_det(cx: f64, cy: f64, hw: f64, hh: f64) -> Detection {
        Detection::new("cup", BoundingBox::new(Vector2::new(cx, cy), hw, hh).unwrap(), 0.9, true).unwrap()
    }

    // Brute-force per-pixel maximum over every static box.
    fn oracle(dets: &[Detection], w: u32, h: u32, model: &GaussianWeightModel) -> Vec<f64> {
        let mut out = Vec::with_capacity((w * h) as usize);
        for y in 0..h {
            for x in 0..w {
                let p = Vector2::new(f64::from(x), f64::from(y));
                let best = dets
                    .iter()
                    .filter(|d| d.is_static && d.bbox.contains(&p))
                    .map(|d| box_weight(model, &d.bbox, &p))
                    .fold(model.floor(), f64::max);
                out.push(best);
            }
        }
        out
    }

    #[test]
    fn box_weight_calibration_points() {
        let m = GaussianWeightModel::default();
        let b = BoundingBox::new(Vector2::new(50.0, 40.0), 20.0, 10.0).unwrap();
        assert_eq!(box_weight(&m, &b, &b.center()), 0.99);
        assert_eq!(box_weight(&m, &b, &Vector2::new(70.0, 40.0)), 0.1);
        assert_eq!(box_weight(&m, &b, &Vector2::new(30.0, 40.0)), 0.1);
        assert_eq!(box_weight(&m, &b, &Vector2::new(50.0, 50.0)), 0.1);
        // corners fall below the floor before clamping
        assert_eq!(box_weight(&m, &b, &Vector2::new(70.0, 50.0)), 0.1);

        let expected = 0.99 * (-(9.9f64).ln() / 4.0).exp();
        let got = box_weight(&m, &b, &Vector2::new(60.0, 40.0));
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.558).abs() < 5e-4);
    }

    #[test]
    fn covariance_is_diagonal_from_half_extents() {
        let m = GaussianWeightModel::default();
        let b = BoundingBox::new(Vector2::new(0.0, 0.0), 30.0, 12.0).unwrap();
        let c = m.covariance(&b);
        let k_sq = 2.0 * (0.99f64 / 0.1).ln();
        assert!((c[(0, 0)] - 900.0 / k_sq).abs() < 1e-9);
        assert!((c[(1, 1)] - 144.0 / k_sq).abs() < 1e-9);
        assert_eq!(c[(0, 1)], 0.0);
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(BoundingBox::new(Vector2::new(0.0, 0.0), 0.0, 1.0).is_err());
        assert!(BoundingBox::new(Vector2::new(0.0, 0.0), 1.0, -1.0).is_err());
        let b = BoundingBox::new(Vector2::new(0.0, 0.0), 1.0, 1.0).unwrap();
        assert!(Detection::new("x", b, 1.5, true).is_err());
        assert!(GaussianWeightModel::new(0.5, 0.5).is_err());
        assert!(GaussianWeightModel::new(1.1, 0.1).is_err());
        assert!(GaussianWeightModel::new(0.9, 0.0).is_err());
        assert!(build_map(&[], 0, 10, &GaussianWeightModel::default()).is_err());
        assert!(ProbabilityMap::uniform(0, 0, 0.1).is_err());
    }

    #[test]
    fn empty_detection_list_is_uniform_floor() {
        let map = build_map(&[], 640, 480, &GaussianWeightModel::default()).unwrap();
        assert!(map.values().iter().all(|&v| v == 0.1));
    }

    #[test]
    fn single_box_both_branches() {
        let m = GaussianWeightModel::default();
        let map = build_map(&[static_det(320.0, 240.0, 100.0, 80.0)], 640, 480, &m).unwrap();
        assert_eq!(map.get(320, 240), 0.99);
        assert_eq!(map.get(0, 0), 0.1);
        assert_eq!(map.get(420, 240), 0.1);
        assert_eq!(map.get(320, 160), 0.1);
    }

    #[test]
    fn dynamic_detections_are_background() {
        let m = GaussianWeightModel::default();
        let mut person = static_det(100.0, 100.0, 40.0, 60.0);
        person.is_static = false;
        let map = build_map(&[person], 200, 200, &m).unwrap();
        assert!(map.values().iter().all(|&v| v == 0.1));
    }

    #[test]
    fn boxes_beyond_the_border_are_clipped() {
        let m = GaussianWeightModel::default();
        let dets = [static_det(-5.0, 10.0, 12.0, 8.0), static_det(35.0, 25.0, 9.5, 20.0), static_det(100.0, 100.0, 5.0, 5.0)];
        let map = build_map(&dets, 32, 24, &m).unwrap();
        for (a, b) in map.values().iter().zip(oracle(&dets, 32, 24, &m)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn overlapping_boxes_take_the_max() {
        let m = GaussianWeightModel::default();
        let dets = [static_det(20.0, 20.0, 15.0, 10.0), static_det(28.5, 22.0, 10.0, 14.0)];
        let map = build_map(&dets, 48, 40, &m).unwrap();
        let p = Vector2::new(25.0, 21.0);
        let expected = box_weight(&m, &dets[0].bbox, &p).max(box_weight(&m, &dets[1].bbox, &p));
        assert!((map.get(25, 21) - expected).abs() < 1e-12);
        for (a, b) in map.values().iter().zip(oracle(&dets, 48, 40, &m)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_rounds_and_clamps() {
        let mut values = vec![0.1; 640 * 480];
        values[240 * 640] = 0.5;
        let map = ProbabilityMap::new(640, 480, values).unwrap();
        assert_eq!(map.nearest_pixel(&Vector2::new(-0.4, 239.6)), (0, 240));
        assert_eq!(map.sample(&Vector2::new(-0.4, 239.6)), 0.5);
        assert_eq!(map.nearest_pixel(&Vector2::new(1e6, -3.0)), (639, 0));
    }

    #[test]
    fn pgm_golden_bytes() {
        let floor = ProbabilityMap::uniform(2, 2, 0.1).unwrap();
        let mut expected = b"P5\n2 2\n255\n".to_vec();
        expected.extend([26u8; 4]);
        assert_eq!(render_pgm(&floor), expected);

        let peak = ProbabilityMap::uniform(1, 1, 0.99).unwrap();
        assert_eq!(render_pgm(&peak), b"P5\n1 1\n255\n\xfc".to_vec());
    }

    #[test]
    fn pgm_round_trip_within_quantization() {
        let m = GaussianWeightModel::default();
        let map = build_map(&[static_det(30.0, 20.0, 25.0, 15.0)], 64, 48, &m).unwrap();
        let back = parse_pgm(&render_pgm(&map)).unwrap();
        assert_eq!((back.width(), back.height()), (64, 48));
        for (a, b) in map.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    fn scene_strategy() -> impl Strategy<Value = (u32, u32, Vec<Detection>)> {
        (1u32..=64, 1u32..=64).prop_flat_map(|(w, h)| {
            let det = (
                -10.0f64..74.0,
                -10.0f64..74.0,
                0.5f64..30.0,
                0.5f64..30.0,
                any::<bool>(),
            )
                .prop_map(|(cx, cy, hw, hh, st)| {
                    let mut d = static_det(cx, cy, hw, hh);
                    d.is_static = st;
                    d
                });
            (Just(w), Just(h), prop::collection::vec(det, 0..=8))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn build_map_matches_brute_force((w, h, dets) in scene_strategy()) {
            let m = GaussianWeightModel::default();
            let map = build_map(&dets, w, h, &m).unwrap();
            for (a, b) in map.values().iter().zip(oracle(&dets, w, h, &m)) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((0.1..=0.99).contains(a));
            }
        }
    }
}
