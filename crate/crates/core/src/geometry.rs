//! Box overlap and the IoU-weighted entropy analysis.
//!
//! All logarithms are natural. Probabilities below [`PROB_FLOOR`] are
//! treated as zero and contribute nothing (`0 * log 0 = 0`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BoundingBox;

pub const PROB_FLOOR: f64 = 1e-12;
const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Intersection over union; zero when the union is empty.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2().min(b.x2()) - a.x1().max(b.x1())).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y1().max(b.y1())).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// `w_i = 1 / (1 + sum_{j != i} IoU(B_i, B_j))`.
pub fn iou_weights(boxes: &[BoundingBox]) -> Result<Vec<f64>> {
    if boxes.is_empty() {
        return Err(Error::EmptyInput("iou_weights needs at least one box"));
    }
    Ok(boxes
        .iter()
        .enumerate()
        .map(|(i, bi)| {
            let overlap: f64 = boxes
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, bj)| iou(bi, bj))
                .sum();
            1.0 / (1.0 + overlap)
        })
        .collect())
}

fn plogp(p: f64) -> f64 {
    if p < PROB_FLOOR {
        0.0
    } else {
        p * p.ln()
    }
}

/// `H_w(Y) = -sum_i (P(y_i) * w_i) * log P(y_i)` with `P(y_i)` the
/// detector confidence of object `i`.
pub fn weighted_entropy(probs: &[f64], boxes: &[BoundingBox]) -> Result<f64> {
    if probs.len() != boxes.len() {
        return Err(Error::Validation(format!(
            "{} probabilities for {} boxes",
            probs.len(),
            boxes.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Validation(format!("probability {p} outside [0, 1]")));
    }
    if probs.is_empty() {
        return Ok(0.0);
    }
    let weights = iou_weights(boxes)?;
    let h = probs.iter().zip(&weights).map(|(&p, &w)| -w * plogp(p)).sum::<f64>();
    Ok(h.max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationEntry {
    pub i: usize,
    pub j: usize,
    pub label: String,
    pub relation: String,
    pub p: f64,
}

/// An explicit joint distribution `P(y_i, r_ij)` over object pairs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelationTable {
    n: usize,
    entries: Vec<RelationEntry>,
}

impl RelationTable {
    /// Object count is inferred as one past the largest index.
    pub fn new(entries: Vec<RelationEntry>) -> Result<Self> {
        let n = entries.iter().map(|e| e.i.max(e.j) + 1).max().unwrap_or(0);
        Self::with_objects(n, entries)
    }

    pub fn with_objects(n: usize, entries: Vec<RelationEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyInput("relation table has no entries"));
        }
        for (k, e) in entries.iter().enumerate() {
            if e.i == e.j {
                return Err(Error::Validation(format!("entry {k} relates object {} to itself", e.i)));
            }
            if e.i >= n || e.j >= n {
                return Err(Error::Validation(format!(
                    "entry {k} index out of range for {n} objects"
                )));
            }
            if !(e.p >= 0.0 && e.p.is_finite()) {
                return Err(Error::Validation(format!("entry {k} has probability {}", e.p)));
            }
        }
        let table = Self { n, entries };
        table.check_normalized()?;
        Ok(table)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let entries: Vec<RelationEntry> = serde_json::from_str(text).map_err(|e| Error::from_json(e, text))?;
        Self::new(entries)
    }

    pub fn objects(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[RelationEntry] {
        &self.entries
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.p).sum()
    }

    fn check_normalized(&self) -> Result<()> {
        let sum = self.total();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::NotNormalized { sum });
        }
        Ok(())
    }
}

/// `H(Y, R) = -sum_i sum_{j != i} P(y_i, r_ij) log P(y_i, r_ij)`.
pub fn global_entropy(table: &RelationTable) -> Result<f64> {
    table.check_normalized()?;
    let h = table.entries.iter().map(|e| -plogp(e.p)).sum::<f64>();
    Ok(h.max(0.0))
}

/// `IG = H_w(Y) - H(Y, R)`; negative values are kept.
pub fn information_gain(weighted: f64, global: f64) -> f64 {
    weighted - global
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    /// Pixel-count IoU on a grid of `res` cells per unit.
    fn raster_iou(a: &BoundingBox, b: &BoundingBox, res: f64) -> f64 {
        let lo = a.x1().min(b.x1()).min(a.y1()).min(b.y1());
        let hi = a.x2().max(b.x2()).max(a.y2()).max(b.y2());
        let n = ((hi - lo) * res).ceil() as usize;
        let (mut inter, mut union) = (0u64, 0u64);
        for iy in 0..n {
            for ix in 0..n {
                let x = lo + (ix as f64 + 0.5) / res;
                let y = lo + (iy as f64 + 0.5) / res;
                let ina = x >= a.x1() && x < a.x2() && y >= a.y1() && y < a.y2();
                let inb = x >= b.x1() && x < b.x2() && y >= b.y1() && y < b.y2();
                inter += (ina && inb) as u64;
                union += (ina || inb) as u64;
            }
        }
        inter as f64 / union as f64
    }

    fn rel(i: usize, j: usize, p: f64) -> RelationEntry {
        RelationEntry {
            i,
            j,
            label: "obj".into(),
            relation: "near".into(),
            p,
        }
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&bx(0.0, 0.0, 1.0, 1.0), &bx(5.0, 5.0, 6.0, 6.0)), 0.0);
        let b = bx(1.0, 0.0, 3.0, 2.0);
        let oracle = raster_iou(&a, &b, 200.0);
        assert!((oracle - 1.0 / 3.0).abs() < 1e-9);
        assert!((iou(&a, &b) - oracle).abs() < 1e-12);
        let p = bx(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&p, &p), 0.0);
    }

    #[test]
    fn weights_examples() {
        assert!(iou_weights(&[]).is_err());
        assert_eq!(iou_weights(&[bx(0.0, 0.0, 1.0, 1.0)]).unwrap(), vec![1.0]);
        let disjoint = [bx(0.0, 0.0, 1.0, 1.0), bx(5.0, 5.0, 6.0, 6.0)];
        assert_eq!(iou_weights(&disjoint).unwrap(), vec![1.0, 1.0]);
        let same = [bx(0.0, 0.0, 2.0, 2.0), bx(0.0, 0.0, 2.0, 2.0)];
        assert_eq!(iou_weights(&same).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn weighted_entropy_examples() {
        let one = [bx(0.0, 0.0, 1.0, 1.0)];
        assert_eq!(weighted_entropy(&[1.0], &one).unwrap(), 0.0);
        let disjoint = [bx(0.0, 0.0, 1.0, 1.0), bx(5.0, 5.0, 6.0, 6.0)];
        let h = weighted_entropy(&[0.5, 0.5], &disjoint).unwrap();
        assert!((h - std::f64::consts::LN_2).abs() < 1e-12);
        let same = [bx(0.0, 0.0, 2.0, 2.0), bx(0.0, 0.0, 2.0, 2.0)];
        let h = weighted_entropy(&[0.5, 0.5], &same).unwrap();
        assert!((h - 0.346574).abs() < 1e-6);
        assert!(weighted_entropy(&[0.5], &same).is_err());
        assert_eq!(weighted_entropy(&[0.0, 1.0], &disjoint).unwrap(), 0.0);
    }

    #[test]
    fn global_entropy_examples() {
        let point = RelationTable::new(vec![rel(0, 1, 1.0)]).unwrap();
        assert_eq!(global_entropy(&point).unwrap(), 0.0);
        let uniform =
            RelationTable::new(vec![rel(0, 1, 0.25), rel(1, 0, 0.25), rel(0, 2, 0.25), rel(2, 0, 0.25)]).unwrap();
        assert!((global_entropy(&uniform).unwrap() - 1.386294).abs() < 1e-6);
        let skew = RelationTable::new(vec![rel(0, 1, 0.7), rel(1, 0, 0.3)]).unwrap();
        assert!((global_entropy(&skew).unwrap() - 0.610864).abs() < 1e-6);
    }

    #[test]
    fn relation_table_validation() {
        let err = RelationTable::new(vec![rel(0, 1, 0.5), rel(1, 0, 0.3)]).unwrap_err();
        assert!(matches!(err, Error::NotNormalized { sum } if (sum - 0.8).abs() < 1e-12));
        assert!(RelationTable::new(vec![rel(1, 1, 1.0)]).is_err());
        assert!(RelationTable::with_objects(2, vec![rel(0, 2, 1.0)]).is_err());
        assert!(RelationTable::new(vec![rel(0, 1, -0.5), rel(1, 0, 1.5)]).is_err());
        let t = RelationTable::from_json(r#"[{"i":0,"j":1,"label":"airplane","relation":"above","p":1.0}]"#).unwrap();
        assert_eq!(t.objects(), 2);
    }

    #[test]
    fn information_gain_examples() {
        assert_eq!(information_gain(0.5, 0.5), 0.0);
        assert_eq!(information_gain(2f64.ln(), 0.0), 2f64.ln());
        assert!((information_gain(0.346574, 0.610864) + 0.264290).abs() < 1e-12);
    }

    /// Enumerates distributions over `k` outcomes on a 1/steps grid.
    fn grid_tables(k: usize, steps: usize) -> Vec<Vec<f64>> {
        fn rec(k: usize, left: usize, steps: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
            if k == 1 {
                cur.push(left as f64 / steps as f64);
                out.push(cur.clone());
                cur.pop();
                return;
            }
            for a in 0..=left {
                cur.push(a as f64 / steps as f64);
                rec(k - 1, left - a, steps, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(k, steps, steps, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn global_entropy_is_maximal_for_uniform_and_zero_only_for_point_mass() {
        for k in 2..=4 {
            let uniform = (k as f64).ln();
            for probs in grid_tables(k, 12) {
                let entries = probs.iter().enumerate().map(|(idx, &p)| rel(0, idx + 1, p)).collect();
                let h = global_entropy(&RelationTable::new(entries).unwrap()).unwrap();
                assert!(h <= uniform + 1e-12);
                let point_mass = probs.contains(&1.0);
                assert_eq!(h == 0.0, point_mass, "{probs:?}");
            }
        }
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-100f64..100.0, -100f64..100.0, 0f64..50.0, 0f64..50.0).prop_map(|(x, y, w, h)| bx(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let v = iou(&a, &b);
            prop_assert_eq!(v, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&v));
        }

        #[test]
        fn weights_bounded_and_one_iff_isolated(boxes in prop::collection::vec(arb_box(), 1..8)) {
            let w = iou_weights(&boxes).unwrap();
            for (i, wi) in w.iter().enumerate() {
                prop_assert!(*wi > 0.0 && *wi <= 1.0);
                let isolated = boxes.iter().enumerate().all(|(j, b)| j == i || iou(&boxes[i], b) == 0.0);
                prop_assert_eq!(*wi == 1.0, isolated);
            }
        }

        #[test]
        fn translation_leaves_weights_and_entropy_unchanged(
            boxes in prop::collection::vec(arb_box(), 1..6),
            dx in -500f64..500.0, dy in -500f64..500.0,
            seed_probs in prop::collection::vec(0.01f64..1.0, 6),
        ) {
            let probs = &seed_probs[..boxes.len()];
            let moved: Vec<_> = boxes.iter().map(|b| b.translate(dx, dy)).collect();
            let (w0, w1) = (iou_weights(&boxes).unwrap(), iou_weights(&moved).unwrap());
            for (a, b) in w0.iter().zip(&w1) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            let h0 = weighted_entropy(probs, &boxes).unwrap();
            let h1 = weighted_entropy(probs, &moved).unwrap();
            prop_assert!((h0 - h1).abs() <= 1e-9);
        }
    }
}
