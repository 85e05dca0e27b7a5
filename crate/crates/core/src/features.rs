//! Salient-feature extraction: local binary pattern maps, block-mean maps
//! backed by integral images, and normalized cross-correlation template
//! matching used to localize the lung region before cropping.

use crate::imaging::{BBox, GrayImage};
use thiserror::Error;

/// Default block-mean window at the 64x64 working resolution.
pub const DEFAULT_BLOCK_WINDOW: usize = 15;
/// Default detection threshold on the NCC score.
pub const DEFAULT_TAU: f64 = 0.6;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("window size {k} must be odd")]
    WindowEven { k: usize },
    #[error("window size {k} exceeds image dimension {dim}")]
    WindowTooLarge { k: usize, dim: usize },
    #[error("image {width}x{height} is smaller than the 3x3 minimum")]
    ImageTooSmall { width: usize, height: usize },
    #[error("template {tw}x{th} larger than feature image {fw}x{fh}")]
    TemplateTooLarge {
        tw: usize,
        th: usize,
        fw: usize,
        fh: usize,
    },
    #[error("template has zero variance")]
    ZeroVarianceTemplate,
    #[error("cannot average an empty image set")]
    EmptyImageSet,
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

/// Summed-area table: `S(i, j)` holds the sum of all pixels above and to
/// the left of `(i, j)`, with a zero first row and column. Rectangle sums
/// come out of the 4-corner formula in constant time.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    sums: Vec<f64>,
}

impl IntegralImage {
    /// Source image width (the table itself is one larger on each axis).
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.sums[j * (self.width + 1) + i]
    }

    /// Sum over the rectangle with top-left `(x, y)` and size `w x h`.
    #[inline]
    pub fn rect_sum(&self, x: usize, y: usize, w: usize, h: usize) -> f64 {
        debug_assert!(x + w <= self.width && y + h <= self.height);
        self.at(x + w, y + h) - self.at(x, y + h) - self.at(x + w, y) + self.at(x, y)
    }
}

/// Builds the summed-area table of `img` in one pass.
pub fn integral_image(img: &GrayImage) -> IntegralImage {
    let values: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    integral_of(&values, img.width(), img.height())
}

fn integral_of(values: &[f64], w: usize, h: usize) -> IntegralImage {
    let stride = w + 1;
    let mut sums = vec![0.0f64; stride * (h + 1)];
    for y in 0..h {
        let row = &values[y * w..(y + 1) * w];
        let mut run = 0.0f64;
        for x in 0..w {
            run += row[x];
            sums[(y + 1) * stride + (x + 1)] = sums[y * stride + (x + 1)] + run;
        }
    }
    IntegralImage {
        width: w,
        height: h,
        sums,
    }
}

/// Replaces each pixel with the mean of the `k x k` window centered on it,
/// the window clipped to the image bounds. `k` must be odd and no larger
/// than either image dimension. `k = 1` is the identity.
pub fn block_mean_map(img: &GrayImage, k: usize) -> Result<GrayImage, FeatureError> {
    if k % 2 == 0 || k == 0 {
        return Err(FeatureError::WindowEven { k });
    }
    let (w, h) = (img.width(), img.height());
    if k > w.min(h) {
        return Err(FeatureError::WindowTooLarge { k, dim: w.min(h) });
    }
    let half = k / 2;
    let table = integral_image(img);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let y0 = y.saturating_sub(half);
        let y1 = (y + half + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(half);
            let x1 = (x + half + 1).min(w);
            let count = ((x1 - x0) * (y1 - y0)) as f64;
            let mean = table.rect_sum(x0, y0, x1 - x0, y1 - y0) / count;
            data.push(mean.clamp(0.0, 1.0) as f32);
        }
    }
    GrayImage::from_vec(w, h, data).map_err(|_| FeatureError::ImageTooSmall {
        width: w,
        height: h,
    })
}

/// Per-pixel 8-bit local binary pattern codes. Border pixels carry code 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LBPMap {
    width: usize,
    height: usize,
    codes: Vec<u8>,
}

impl LBPMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.codes[y * self.width + x]
    }
}

// Neighbor offsets clockwise from the top-left corner; bit i carries
// weight 2^i. A bit is set when the neighbor is >= the center pixel.
const LBP_OFFSETS: [(isize, isize); 8] = [
    (-1, -1), // TL
    (0, -1),  // T
    (1, -1),  // TR
    (1, 0),   // R
    (1, 1),   // BR
    (0, 1),   // B
    (-1, 1),  // BL
    (-1, 0),  // L
];

/// Computes the LBP code of every interior pixel; the image must be at
/// least 3x3. Codes are invariant under strictly monotone intensity
/// transforms of the input.
pub fn lbp_map(img: &GrayImage) -> Result<LBPMap, FeatureError> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(FeatureError::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let mut codes = vec![0u8; w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let center = img.get(x, y);
            let mut code = 0u8;
            for (bit, (dx, dy)) in LBP_OFFSETS.iter().enumerate() {
                let nx = (x as isize + dx) as usize;
                let ny = (y as isize + dy) as usize;
                if img.get(nx, ny) >= center {
                    code |= 1 << bit;
                }
            }
            codes[y * w + x] = code;
        }
    }
    Ok(LBPMap {
        width: w,
        height: h,
        codes,
    })
}

/// Renders an LBP map as a grayscale image, `code / 255` per pixel.
pub fn lbp_to_image(map: &LBPMap) -> GrayImage {
    let data = map.codes().iter().map(|&c| c as f32 / 255.0).collect();
    GrayImage::from_vec(map.width(), map.height(), data)
        .expect("LBP codes always produce a valid image")
}

/// Outcome of sliding a template over a feature image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemplateMatchResult {
    /// Best-scoring placement; dimensions equal the template's.
    pub best: BBox,
    /// Zero-mean normalized cross-correlation at `best`, in `[-1, 1]`.
    pub score: f64,
    /// Whether `score` reached the configured threshold.
    pub success: bool,
}

/// Slides `template` over every valid placement in `feature` and returns
/// the placement with the highest zero-mean normalized cross-correlation,
/// ties broken by the smallest row and then the smallest column.
///
/// Windows with zero variance score 0. `success` is `score >= tau`.
pub fn match_template(
    feature: &GrayImage,
    template: &GrayImage,
    tau: f64,
) -> Result<TemplateMatchResult, FeatureError> {
    let (fw, fh) = (feature.width(), feature.height());
    let (tw, th) = (template.width(), template.height());
    if tw > fw || th > fh {
        return Err(FeatureError::TemplateTooLarge { tw, th, fw, fh });
    }
    let n = (tw * th) as f64;
    let t_sum: f64 = template.data().iter().map(|&v| v as f64).sum();
    let t_mean = t_sum / n;
    let t_zero_mean: Vec<f64> = template.data().iter().map(|&v| v as f64 - t_mean).collect();
    let t_ss: f64 = t_zero_mean.iter().map(|v| v * v).sum();
    if t_ss <= f64::EPSILON * n {
        return Err(FeatureError::ZeroVarianceTemplate);
    }

    // The score is invariant to shifting the feature by a constant (window
    // means absorb it, and the cross term pairs with a zero-mean template),
    // so center the feature on its global mean first. That keeps the window
    // variance subtraction below from cancelling catastrophically. Window
    // sums and sums of squares then come from integral images so each
    // placement only pays for the cross term.
    let f_mean = feature.data().iter().map(|&v| v as f64).sum::<f64>() / (fw * fh) as f64;
    let centered: Vec<f64> = feature.data().iter().map(|&v| v as f64 - f_mean).collect();
    let squares: Vec<f64> = centered.iter().map(|&v| v * v).collect();
    let table = integral_of(&centered, fw, fh);
    let table_sq = integral_of(&squares, fw, fh);

    let mut best = BBox::new(0, 0, tw, th);
    let mut best_score = f64::NEG_INFINITY;
    for y in 0..=fh - th {
        for x in 0..=fw - tw {
            let f_sum = table.rect_sum(x, y, tw, th);
            let f_ss = table_sq.rect_sum(x, y, tw, th) - f_sum * f_sum / n;
            let score = if f_ss <= 1e-12 {
                0.0
            } else {
                let mut cross = 0.0f64;
                for j in 0..th {
                    let frow = &centered[(y + j) * fw + x..(y + j) * fw + x + tw];
                    let trow = &t_zero_mean[j * tw..(j + 1) * tw];
                    for (fv, tv) in frow.iter().zip(trow) {
                        cross += fv * tv;
                    }
                }
                (cross / (f_ss * t_ss).sqrt()).clamp(-1.0, 1.0)
            };
            if score > best_score {
                best_score = score;
                best = BBox::new(x, y, tw, th);
            }
        }
    }
    Ok(TemplateMatchResult {
        best,
        score: best_score,
        success: best_score >= tau,
    })
}

/// Which feature space a detection runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoiMethod {
    /// Match against the block-mean map of the image.
    Haar,
    /// Match against the rendered LBP map of the image.
    Lbp,
}

impl std::fmt::Display for RoiMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RoiMethod::Haar => write!(f, "haar"),
            RoiMethod::Lbp => write!(f, "lbp"),
        }
    }
}

/// Localizes the region of interest by template matching in the chosen
/// feature space. The template must live in the same space (a block-mean
/// template for [`RoiMethod::Haar`], a rendered LBP template for
/// [`RoiMethod::Lbp`]). Failed detections are the noisy-data candidates.
pub fn detect_roi(
    img: &GrayImage,
    template: &GrayImage,
    method: RoiMethod,
    k: usize,
    tau: f64,
) -> Result<TemplateMatchResult, FeatureError> {
    let feature = feature_image(img, method, k)?;
    match_template(&feature, template, tau)
}

/// The feature-space rendering `detect_roi` matches in.
pub fn feature_image(
    img: &GrayImage,
    method: RoiMethod,
    k: usize,
) -> Result<GrayImage, FeatureError> {
    match method {
        RoiMethod::Haar => block_mean_map(img, k),
        RoiMethod::Lbp => Ok(lbp_to_image(&lbp_map(img)?)),
    }
}

/// Intersection-over-union of two boxes, in `[0, 1]`.
pub fn iou(a: BBox, b: BBox) -> f64 {
    let ix0 = a.x.max(b.x);
    let iy0 = a.y.max(b.y);
    let ix1 = (a.x + a.w).min(b.x + b.w);
    let iy1 = (a.y + a.h).min(b.y + b.h);
    if ix1 <= ix0 || iy1 <= iy0 {
        return 0.0;
    }
    let inter = ((ix1 - ix0) * (iy1 - iy0)) as f64;
    let union = (a.area() + b.area()) as f64 - inter;
    inter / union
}

/// Pixel-wise mean of a set of equal-size images; used to build reference
/// templates from cropped feature maps.
pub fn mean_image(images: &[GrayImage]) -> Result<GrayImage, FeatureError> {
    let first = images.first().ok_or(FeatureError::EmptyImageSet)?;
    let (w, h) = (first.width(), first.height());
    let mut acc = vec![0.0f64; w * h];
    for img in images {
        if img.width() != w || img.height() != h {
            return Err(FeatureError::DimensionMismatch(
                w,
                h,
                img.width(),
                img.height(),
            ));
        }
        for (a, &v) in acc.iter_mut().zip(img.data()) {
            *a += v as f64;
        }
    }
    let scale = 1.0 / images.len() as f64;
    let data = acc.iter().map(|&a| (a * scale) as f32).collect();
    GrayImage::from_vec(w, h, data).map_err(|_| FeatureError::EmptyImageSet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::crop;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h).map(|_| rng.random::<f32>()).collect();
        GrayImage::from_vec(w, h, data).unwrap()
    }

    /// Independent oracle: plain double-loop rectangle sum.
    fn naive_rect_sum(img: &GrayImage, x: usize, y: usize, w: usize, h: usize) -> f64 {
        let mut sum = 0.0f64;
        for j in y..y + h {
            for i in x..x + w {
                sum += img.get(i, j) as f64;
            }
        }
        sum
    }

    /// Independent oracle: per-pixel clipped-window mean.
    fn naive_block_mean(img: &GrayImage, k: usize) -> Vec<f64> {
        let half = k / 2;
        let (w, h) = (img.width(), img.height());
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let mut sum = 0.0f64;
                let mut count = 0usize;
                for dy in -(half as isize)..=half as isize {
                    for dx in -(half as isize)..=half as isize {
                        let nx = x as isize + dx;
                        let ny = y as isize + dy;
                        if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                            sum += img.get(nx as usize, ny as usize) as f64;
                            count += 1;
                        }
                    }
                }
                out.push(sum / count as f64);
            }
        }
        out
    }

    /// Independent oracle: per-pixel 8-neighbor comparison.
    fn naive_lbp(img: &GrayImage) -> Vec<u8> {
        let (w, h) = (img.width(), img.height());
        let mut codes = vec![0u8; w * h];
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let c = img.get(x, y);
                let neighbors = [
                    img.get(x - 1, y - 1),
                    img.get(x, y - 1),
                    img.get(x + 1, y - 1),
                    img.get(x + 1, y),
                    img.get(x + 1, y + 1),
                    img.get(x, y + 1),
                    img.get(x - 1, y + 1),
                    img.get(x - 1, y),
                ];
                let mut code = 0u8;
                for (bit, &nv) in neighbors.iter().enumerate() {
                    if nv >= c {
                        code |= 1 << bit;
                    }
                }
                codes[y * w + x] = code;
            }
        }
        codes
    }

    /// Independent oracle: exhaustive NCC over all placements.
    fn naive_ncc(feature: &GrayImage, template: &GrayImage) -> (BBox, f64) {
        let (fw, fh) = (feature.width(), feature.height());
        let (tw, th) = (template.width(), template.height());
        let n = (tw * th) as f64;
        let t_mean: f64 = template.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let mut best = BBox::new(0, 0, tw, th);
        let mut best_score = f64::NEG_INFINITY;
        for y in 0..=fh - th {
            for x in 0..=fw - tw {
                let mut f_mean = 0.0f64;
                for j in 0..th {
                    for i in 0..tw {
                        f_mean += feature.get(x + i, y + j) as f64;
                    }
                }
                f_mean /= n;
                let (mut cross, mut f_ss, mut t_ss) = (0.0f64, 0.0f64, 0.0f64);
                for j in 0..th {
                    for i in 0..tw {
                        let fv = feature.get(x + i, y + j) as f64 - f_mean;
                        let tv = template.get(i, j) as f64 - t_mean;
                        cross += fv * tv;
                        f_ss += fv * fv;
                        t_ss += tv * tv;
                    }
                }
                let score = if f_ss <= 1e-12 {
                    0.0
                } else {
                    cross / (f_ss * t_ss).sqrt()
                };
                if score > best_score {
                    best_score = score;
                    best = BBox::new(x, y, tw, th);
                }
            }
        }
        (best, best_score)
    }

    #[test]
    fn integral_zero_image() {
        let img = GrayImage::zeros(4, 3).unwrap();
        let table = integral_image(&img);
        assert_eq!(table.rect_sum(0, 0, 4, 3), 0.0);
    }

    #[test]
    fn integral_single_pixel() {
        let img = GrayImage::from_vec(1, 1, vec![0.5]).unwrap();
        let table = integral_image(&img);
        assert!((table.rect_sum(0, 0, 1, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn integral_ramp_matches_naive_sums() {
        let data: Vec<f32> = (0..9).map(|i| i as f32 / 8.0).collect();
        let img = GrayImage::from_vec(3, 3, data).unwrap();
        let table = integral_image(&img);
        for y in 0..3 {
            for x in 0..3 {
                for h in 1..=3 - y {
                    for w in 1..=3 - x {
                        let fast = table.rect_sum(x, y, w, h);
                        let slow = naive_rect_sum(&img, x, y, w, h);
                        assert!((fast - slow).abs() < 1e-9, "rect ({x},{y},{w},{h})");
                    }
                }
            }
        }
    }

    #[test]
    fn block_mean_k1_is_identity() {
        let img = random_image(6, 5, 3);
        let out = block_mean_map(&img, 1).unwrap();
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn block_mean_constant_image() {
        let img = GrayImage::from_vec(5, 5, vec![0.7; 25]).unwrap();
        let out = block_mean_map(&img, 3).unwrap();
        for &v in out.data() {
            assert!((v - 0.7).abs() < 1e-6);
        }
    }

    #[test]
    fn block_mean_center_of_3x3_example() {
        let data: Vec<f32> = [5.0, 3.0, 8.0, 1.0, 4.0, 9.0, 2.0, 7.0, 6.0]
            .iter()
            .map(|v| v / 10.0)
            .collect();
        let img = GrayImage::from_vec(3, 3, data).unwrap();
        let out = block_mean_map(&img, 3).unwrap();
        assert!((out.get(1, 1) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn block_mean_rejects_bad_window() {
        let img = random_image(4, 4, 1);
        assert!(matches!(
            block_mean_map(&img, 2),
            Err(FeatureError::WindowEven { k: 2 })
        ));
        assert!(matches!(
            block_mean_map(&img, 5),
            Err(FeatureError::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn lbp_constant_image_codes_255() {
        let img = GrayImage::from_vec(4, 4, vec![0.5; 16]).unwrap();
        let map = lbp_map(&img).unwrap();
        for y in 1..3 {
            for x in 1..3 {
                assert_eq!(map.get(x, y), 255);
            }
        }
        // Border stays zero.
        assert_eq!(map.get(0, 0), 0);
        assert_eq!(map.get(3, 3), 0);
    }

    #[test]
    fn lbp_dominant_center_codes_0() {
        let mut data = vec![0.2f32; 9];
        data[4] = 0.9;
        let img = GrayImage::from_vec(3, 3, data).unwrap();
        let map = lbp_map(&img).unwrap();
        assert_eq!(map.get(1, 1), 0);
    }

    #[test]
    fn lbp_worked_example_code_61() {
        let data: Vec<f32> = [5.0, 3.0, 8.0, 1.0, 4.0, 9.0, 2.0, 7.0, 6.0]
            .iter()
            .map(|v| v / 10.0)
            .collect();
        let img = GrayImage::from_vec(3, 3, data).unwrap();
        let map = lbp_map(&img).unwrap();
        assert_eq!(map.get(1, 1), 61);
    }

    #[test]
    fn lbp_rejects_small_images() {
        let img = GrayImage::zeros(2, 3).unwrap();
        assert!(matches!(
            lbp_map(&img),
            Err(FeatureError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn lbp_render_scaling() {
        let img = GrayImage::from_vec(3, 3, vec![0.5; 9]).unwrap();
        let rendered = lbp_to_image(&lbp_map(&img).unwrap());
        assert!((rendered.get(1, 1) - 1.0).abs() < 1e-6);
        assert_eq!(rendered.get(0, 0), 0.0);
    }

    #[test]
    fn ncc_self_match_scores_one() {
        let img = random_image(12, 12, 7);
        let template = crop(&img, BBox::new(3, 4, 5, 5)).unwrap();
        let result = match_template(&img, &template, DEFAULT_TAU).unwrap();
        assert!((result.score - 1.0).abs() < 1e-6, "score {}", result.score);
        assert_eq!(result.best, BBox::new(3, 4, 5, 5));
        assert!(result.success);
    }

    #[test]
    fn ncc_constant_feature_scores_zero() {
        let img = GrayImage::from_vec(8, 8, vec![0.4; 64]).unwrap();
        let template = random_image(3, 3, 5);
        let result = match_template(&img, &template, DEFAULT_TAU).unwrap();
        assert_eq!(result.score, 0.0);
        assert!(!result.success);
    }

    #[test]
    fn ncc_zero_variance_template_rejected() {
        let img = random_image(8, 8, 5);
        let template = GrayImage::from_vec(3, 3, vec![0.6; 9]).unwrap();
        assert!(matches!(
            match_template(&img, &template, DEFAULT_TAU),
            Err(FeatureError::ZeroVarianceTemplate)
        ));
    }

    #[test]
    fn ncc_template_too_large() {
        let img = random_image(4, 4, 5);
        let template = random_image(5, 5, 6);
        assert!(matches!(
            match_template(&img, &template, DEFAULT_TAU),
            Err(FeatureError::TemplateTooLarge { .. })
        ));
    }

    #[test]
    fn ncc_matches_naive_oracle() {
        for seed in 0..20 {
            let feature = random_image(16, 16, seed);
            let template = random_image(4, 4, seed + 1000);
            let fast = match_template(&feature, &template, DEFAULT_TAU).unwrap();
            let (slow_box, slow_score) = naive_ncc(&feature, &template);
            assert_eq!(fast.best, slow_box, "seed {seed}");
            assert!(
                (fast.score - slow_score).abs() < 1e-9,
                "seed {seed}: {} vs {}",
                fast.score,
                slow_score
            );
        }
    }

    #[test]
    fn detect_roi_self_template() {
        let img = random_image(20, 20, 11);
        let haar = block_mean_map(&img, 3).unwrap();
        let template = crop(&haar, BBox::new(5, 6, 7, 7)).unwrap();
        let result = detect_roi(&img, &template, RoiMethod::Haar, 3, 0.9).unwrap();
        assert!(result.success);
        assert!(result.score > 0.999);
        assert_eq!(result.best, BBox::new(5, 6, 7, 7));
    }

    #[test]
    fn detect_roi_tau_above_one_never_succeeds() {
        let img = random_image(20, 20, 11);
        let haar = block_mean_map(&img, 3).unwrap();
        let template = crop(&haar, BBox::new(5, 6, 7, 7)).unwrap();
        let result = detect_roi(&img, &template, RoiMethod::Haar, 3, 1.1).unwrap();
        assert!(!result.success);
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0, 0, 2, 2);
        assert_eq!(iou(a, a), 1.0);
        assert_eq!(iou(a, BBox::new(5, 5, 2, 2)), 0.0);
        let b = BBox::new(1, 1, 2, 2);
        assert!((iou(a, b) - 1.0 / 7.0).abs() < 1e-9);
    }

    #[test]
    fn mean_image_averages() {
        let a = GrayImage::from_vec(2, 1, vec![0.0, 1.0]).unwrap();
        let b = GrayImage::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        let m = mean_image(&[a, b]).unwrap();
        assert!((m.get(0, 0) - 0.5).abs() < 1e-6);
        assert!((m.get(1, 0) - 0.5).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn integral_rect_sums_match_naive(w in 1usize..10, h in 1usize..10, seed in 0u64..500) {
            let img = random_image(w, h, seed);
            let table = integral_image(&img);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            for _ in 0..8 {
                let x = rng.random_range(0..w);
                let y = rng.random_range(0..h);
                let rw = rng.random_range(1..=w - x);
                let rh = rng.random_range(1..=h - y);
                let fast = table.rect_sum(x, y, rw, rh);
                let slow = naive_rect_sum(&img, x, y, rw, rh);
                let denom = slow.abs().max(1.0);
                prop_assert!((fast - slow).abs() / denom < 1e-9);
            }
        }

        #[test]
        fn lbp_matches_brute_force(w in 3usize..12, h in 3usize..12, seed in 0u64..500) {
            let img = random_image(w, h, seed);
            let map = lbp_map(&img).unwrap();
            let naive = naive_lbp(&img);
            prop_assert_eq!(map.codes(), naive.as_slice());
        }

        #[test]
        fn lbp_monotone_invariance(w in 3usize..10, h in 3usize..10, seed in 0u64..200) {
            let img = random_image(w, h, seed);
            // Strictly monotone map on [0,1]: x -> x^3 * 0.9 + 0.05 * x.
            let transformed = GrayImage::from_vec(
                w,
                h,
                img.data().iter().map(|&v| v * v * v * 0.9 + 0.05 * v).collect(),
            )
            .unwrap();
            let plain = lbp_map(&img).unwrap();
            let mapped = lbp_map(&transformed).unwrap();
            prop_assert_eq!(plain.codes(), mapped.codes());
        }

        #[test]
        fn block_mean_matches_naive_and_stays_in_range(
            w in 3usize..10, h in 3usize..10, half in 0usize..2, seed in 0u64..200,
        ) {
            let k = 2 * half + 1;
            prop_assume!(k <= w.min(h));
            let img = random_image(w, h, seed);
            let out = block_mean_map(&img, k).unwrap();
            let oracle = naive_block_mean(&img, k);
            let lo = img.data().iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = img.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            for (i, (&got, want)) in out.data().iter().zip(&oracle).enumerate() {
                prop_assert!((got as f64 - want).abs() < 1e-6, "pixel {i}");
                prop_assert!(got >= lo - 1e-6 && got <= hi + 1e-6);
            }
        }

        #[test]
        fn ncc_affine_intensity_invariance(seed in 0u64..200) {
            let feature = random_image(12, 12, seed);
            let template = crop(&feature, BBox::new(2, 3, 4, 4)).unwrap();
            // a*x + b with a > 0, keeping values in [0,1].
            let rescaled = GrayImage::from_vec(
                12,
                12,
                feature.data().iter().map(|&v| 0.5 * v + 0.2).collect(),
            )
            .unwrap();
            let base = match_template(&feature, &template, DEFAULT_TAU).unwrap();
            let scaled = match_template(&rescaled, &template, DEFAULT_TAU).unwrap();
            prop_assert_eq!(base.best, scaled.best);
            prop_assert!((base.score - scaled.score).abs() < 1e-6);
            prop_assert!(base.score >= -1.0 && base.score <= 1.0);
        }
    }
}
