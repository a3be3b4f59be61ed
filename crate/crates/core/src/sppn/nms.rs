use std::cmp::Ordering;

use super::ProposalBox;

/// Ranking used everywhere proposals are ordered: higher score first, then
/// lower pyramid level, then `(y0, x0, y1, x1)` ascending.
pub fn proposal_order(a: &ProposalBox, b: &ProposalBox) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.level.cmp(&b.level))
        .then(a.y0.total_cmp(&b.y0))
        .then(a.x0.total_cmp(&b.x0))
        .then(a.y1.total_cmp(&b.y1))
        .then(a.x1.total_cmp(&b.x1))
}

pub fn sort_proposals(boxes: &mut [ProposalBox]) {
    boxes.sort_by(proposal_order);
}

pub fn iou(a: &ProposalBox, b: &ProposalBox) -> f32 {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Greedy suppression: walk boxes in ranking order, keep a box unless it
/// overlaps an already kept box with IoU above `iou_threshold`.
pub fn nms(boxes: &[ProposalBox], iou_threshold: f32) -> Vec<ProposalBox> {
    let mut order = boxes.to_vec();
    sort_proposals(&mut order);
    let mut suppressed = vec![false; order.len()];
    let mut keep = Vec::new();
    for i in 0..order.len() {
        if suppressed[i] {
            continue;
        }
        keep.push(order[i]);
        for j in i + 1..order.len() {
            if !suppressed[j] && iou(&order[i], &order[j]) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f32, y0: f32, x1: f32, y1: f32, score: f32) -> ProposalBox {
        ProposalBox::new(x0, y0, x1, y1, score, 1)
    }

    #[test]
    fn single_and_duplicate_boxes() {
        let one = [b(0.0, 0.0, 4.0, 4.0, 0.3)];
        assert_eq!(nms(&one, 0.25), one.to_vec());
        let dup = [b(1.0, 1.0, 5.0, 5.0, 0.8), b(1.0, 1.0, 5.0, 5.0, 0.9)];
        let kept = nms(&dup, 0.25);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn threshold_is_strict() {
        // IoU exactly 1/3: 2x4 overlap of two 4x4 boxes -> 8 / (16 + 16 - 8)
        let pair = [b(0.0, 0.0, 4.0, 4.0, 0.9), b(2.0, 0.0, 6.0, 4.0, 0.5)];
        assert!((iou(&pair[0], &pair[1]) - 1.0 / 3.0).abs() < 1e-7);
        assert_eq!(nms(&pair, 0.4).len(), 2);
        assert_eq!(nms(&pair, 0.25).len(), 1);
    }

    #[test]
    fn ties_prefer_lower_level_then_coordinates() {
        let mut v = [
            ProposalBox::new(5.0, 0.0, 9.0, 4.0, 0.5, 2),
            ProposalBox::new(9.0, 0.0, 12.0, 4.0, 0.5, 1),
            ProposalBox::new(0.0, 0.0, 4.0, 4.0, 0.5, 1),
        ];
        sort_proposals(&mut v);
        assert_eq!((v[0].x0, v[0].level), (0.0, 1));
        assert_eq!((v[1].x0, v[1].level), (9.0, 1));
        assert_eq!(v[2].level, 2);
    }
}
