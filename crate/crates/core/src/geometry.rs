//! Axis-aligned box arithmetic shared by every stage of the pipeline.
//!
//! Boxes are stored as `(x, y, w, h)` with `(x, y)` the top-left corner in
//! pixels. Inputs using corner notation are converted at ingestion with
//! [`BoundingBox::from_corners`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let finite = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        if !finite || w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox { x, y, w, h });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::new(x1, y1, x2 - x1, y2 - y1)
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    /// Area from corner differences, so that it agrees exactly with the
    /// intersection computed in [`iou`].
    #[inline]
    pub fn area(&self) -> f64 {
        (self.right() - self.x) * (self.bottom() - self.y)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// True when `other` lies entirely inside `self` (boundaries inclusive).
    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x <= other.x
            && self.y <= other.y
            && self.right() >= other.right()
            && self.bottom() >= other.bottom()
    }

    /// Clip to the image rectangle. Returns `None` when nothing remains.
    pub fn clip(&self, img: ImageSize) -> Option<BoundingBox> {
        let x1 = self.x.max(0.0);
        let y1 = self.y.max(0.0);
        let x2 = self.right().min(img.width);
        let y2 = self.bottom().min(img.height);
        BoundingBox::from_corners(x1, y1, x2, y2).ok()
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ImageSizeRepr")]
pub struct ImageSize {
    pub width: f64,
    pub height: f64,
}

#[derive(Deserialize)]
struct ImageSizeRepr {
    width: f64,
    height: f64,
}

impl TryFrom<ImageSizeRepr> for ImageSize {
    type Error = Error;

    fn try_from(r: ImageSizeRepr) -> Result<Self> {
        ImageSize::new(r.width, r.height)
    }
}

impl ImageSize {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
            return Err(Error::InvalidImageSize { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn full_box(&self) -> BoundingBox {
        BoundingBox {
            x: 0.0,
            y: 0.0,
            w: self.width,
            h: self.height,
        }
    }
}

/// Intersection over union. Exactly 0 for a zero-area intersection.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Smallest box containing all inputs.
pub fn union_hull(boxes: &[BoundingBox]) -> Result<BoundingBox> {
    let first = boxes.first().ok_or(Error::NoBoxes)?;
    let (mut x1, mut y1, mut x2, mut y2) = (first.x, first.y, first.right(), first.bottom());
    for b in &boxes[1..] {
        x1 = x1.min(b.x);
        y1 = y1.min(b.y);
        x2 = x2.max(b.right());
        y2 = y2.max(b.bottom());
    }
    let mut hull = BoundingBox::from_corners(x1, y1, x2, y2)?;
    // x + (x2 - x) can round below x2
    while hull.right() < x2 {
        hull.w = hull.w.next_up();
    }
    while hull.bottom() < y2 {
        hull.h = hull.h.next_up();
    }
    Ok(hull)
}

/// `[cx/W, cy/H, (w*h)/(W*H), w/h]`.
pub fn position_feature(b: &BoundingBox, img: ImageSize) -> [f64; 4] {
    let (cx, cy) = b.center();
    [
        cx / img.width,
        cy / img.height,
        (b.w * b.h) / img.area(),
        b.w / b.h,
    ]
}

/// Relative layout of `b2` with respect to `b`:
/// `[(x - x')/w, (y - y')/h, w'/w, h'/h]`.
pub fn spatial_pair_feature(b: &BoundingBox, b2: &BoundingBox) -> [f64; 4] {
    [
        (b.x - b2.x) / b.w,
        (b.y - b2.y) / b.h,
        b2.w / b.w,
        b2.h / b.h,
    ]
}

/// Greedy non-maximum suppression.
///
/// Returns kept indices in descending score order. A box is suppressed when
/// its IOU with an already kept box is strictly greater than `iou_threshold`.
/// Equal scores are ordered by lower input index.
pub fn nms(boxes: &[BoundingBox], scores: &[f64], iou_threshold: f64) -> Result<Vec<usize>> {
    if boxes.len() != scores.len() {
        return Err(Error::LengthMismatch {
            what: "nms boxes/scores",
            left: boxes.len(),
            right: scores.len(),
        });
    }
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "nms threshold {iou_threshold} outside (0, 1]"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("nms scores"));
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));

    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|&k| iou(&boxes[k], &boxes[i]) <= iou_threshold)
        {
            kept.push(i);
        }
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    /// Counts overlapping unit cells on an integer grid.
    fn grid_iou(a: (i32, i32, i32, i32), b: (i32, i32, i32, i32)) -> f64 {
        let inside = |r: (i32, i32, i32, i32), cx: i32, cy: i32| {
            cx >= r.0 && cx < r.0 + r.2 && cy >= r.1 && cy < r.1 + r.3
        };
        let (mut inter, mut uni) = (0, 0);
        for cx in -5..60 {
            for cy in -5..60 {
                let (ia, ib) = (inside(a, cx, cy), inside(b, cx, cy));
                if ia && ib {
                    inter += 1;
                }
                if ia || ib {
                    uni += 1;
                }
            }
        }
        inter as f64 / uni as f64
    }

    #[test]
    fn iou_examples() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(20.0, 20.0, 5.0, 5.0)), 0.0);
        let expected = grid_iou((0, 0, 10, 10), (5, 5, 10, 10));
        assert!((expected - 25.0 / 175.0).abs() < 1e-12);
        assert!((iou(&a, &bb(5.0, 5.0, 10.0, 10.0)) - expected).abs() < 1e-12);
    }

    #[test]
    fn iou_matches_grid_count() {
        let cases = [
            ((0, 0, 10, 10), (3, 4, 12, 7)),
            ((2, 2, 5, 30), (0, 10, 40, 3)),
            ((1, 1, 4, 4), (5, 1, 4, 4)),
        ];
        for (a, b) in cases {
            let got = iou(
                &bb(a.0 as f64, a.1 as f64, a.2 as f64, a.3 as f64),
                &bb(b.0 as f64, b.1 as f64, b.2 as f64, b.3 as f64),
            );
            assert!((got - grid_iou(a, b)).abs() < 1e-12, "{a:?} {b:?}");
        }
    }

    #[test]
    fn touching_edges_have_zero_iou() {
        assert_eq!(iou(&bb(0.0, 0.0, 10.0, 10.0), &bb(10.0, 0.0, 10.0, 10.0)), 0.0);
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(serde_json::from_str::<BoundingBox>("[0, 0, -1, 2]").is_err());
        assert!(ImageSize::new(0.0, 10.0).is_err());
    }

    #[test]
    fn union_hull_examples() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(union_hull(&[a]).unwrap(), a);
        assert_eq!(
            union_hull(&[a, bb(20.0, 0.0, 10.0, 10.0)]).unwrap(),
            bb(0.0, 0.0, 30.0, 10.0)
        );
        assert_eq!(union_hull(&[bb(5.0, 5.0, 1.0, 1.0), a]).unwrap(), a);
        assert!(matches!(union_hull(&[]), Err(Error::NoBoxes)));
    }

    #[test]
    fn position_feature_examples() {
        let img = ImageSize::new(100.0, 100.0).unwrap();
        assert_eq!(position_feature(&img.full_box(), img), [0.5, 0.5, 1.0, 1.0]);
        assert_eq!(
            position_feature(&bb(0.0, 0.0, 50.0, 100.0), img),
            [0.25, 0.5, 0.5, 0.5]
        );
        assert_eq!(
            position_feature(&bb(25.0, 25.0, 50.0, 50.0), img),
            [0.5, 0.5, 0.25, 1.0]
        );
    }

    #[test]
    fn spatial_pair_feature_examples() {
        let b = bb(10.0, 20.0, 40.0, 80.0);
        assert_eq!(spatial_pair_feature(&b, &b), [0.0, 0.0, 1.0, 1.0]);
        assert_eq!(
            spatial_pair_feature(&b, &bb(30.0, 60.0, 20.0, 40.0)),
            [-0.5, -0.5, 0.5, 0.5]
        );
        assert_eq!(
            spatial_pair_feature(&bb(0.0, 0.0, 10.0, 10.0), &bb(10.0, 0.0, 10.0, 10.0)),
            [-1.0, 0.0, 1.0, 1.0]
        );
    }

    #[test]
    fn nms_examples() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(nms(&[a], &[0.3], 0.8).unwrap(), vec![0]);
        assert_eq!(nms(&[a, a], &[0.9, 0.8], 0.8).unwrap(), vec![0]);
        let far = bb(50.0, 50.0, 10.0, 10.0);
        assert_eq!(nms(&[a, far], &[0.1, 0.7], 0.8).unwrap(), vec![1, 0]);
        assert!(nms(&[a], &[0.1, 0.2], 0.8).is_err());
        assert!(nms(&[a], &[0.1], 0.0).is_err());
    }

    #[test]
    fn nms_ties_prefer_lower_index() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(nms(&[a, a, a], &[0.5, 0.5, 0.5], 0.8).unwrap(), vec![0]);
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0..100.0f64, 0.0..100.0f64, 0.5..60.0f64, 0.5..60.0f64)
            .prop_map(|(x, y, w, h)| bb(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric(a in arb_box(), b in arb_box()) {
            prop_assert_eq!(iou(&a, &b), iou(&b, &a));
            prop_assert_eq!(iou(&a, &a), 1.0);
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn hull_contains_inputs(boxes in prop::collection::vec(arb_box(), 1..8)) {
            let hull = union_hull(&boxes).unwrap();
            for b in &boxes {
                prop_assert!(hull.contains(b));
            }
        }

        #[test]
        fn self_pair_feature_is_identity(b in arb_box()) {
            prop_assert_eq!(spatial_pair_feature(&b, &b), [0.0, 0.0, 1.0, 1.0]);
        }

        #[test]
        fn nms_output_well_formed(
            items in prop::collection::vec((arb_box(), 0.0..1.0f64), 1..25),
            thr in 0.1..1.0f64,
        ) {
            let (boxes, scores): (Vec<_>, Vec<_>) = items.into_iter().unzip();
            let kept = nms(&boxes, &scores, thr).unwrap();
            prop_assert!(!kept.is_empty());
            let mut seen = std::collections::HashSet::new();
            for w in kept.windows(2) {
                prop_assert!(scores[w[0]] >= scores[w[1]]);
            }
            for (n, &i) in kept.iter().enumerate() {
                prop_assert!(i < boxes.len());
                prop_assert!(seen.insert(i));
                for &j in &kept[..n] {
                    prop_assert!(iou(&boxes[i], &boxes[j]) <= thr);
                }
            }
        }
    }
}
