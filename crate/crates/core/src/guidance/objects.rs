use crate::perception::{BBox, Detection};

/// An object followed across frames by box overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedObject {
    pub id: u64,
    pub class_id: u8,
    pub bbox: BBox,
    pub last_seen: u64,
    /// Frame and box of the sighting before `last_seen`.
    pub previous: Option<(u64, BBox)>,
    /// `(frame_index, depth_stat)`, oldest first.
    pub depth_history: Vec<(u64, f32)>,
}

/// Associates each frame's detections with objects from earlier frames:
/// greedy by descending IoU among same-class pairs.
#[derive(Debug, Clone)]
pub struct ObjectTracker {
    objects: Vec<TrackedObject>,
    next_id: u64,
    min_iou: f64,
    max_missed: u64,
    history_len: usize,
}

impl ObjectTracker {
    pub fn new(min_iou: f64, max_missed: u64, history_len: usize) -> Self {
        Self { objects: Vec::new(), next_id: 0, min_iou, max_missed, history_len: history_len.max(2) }
    }

    pub fn objects(&self) -> &[TrackedObject] {
        &self.objects
    }

    pub fn get(&self, id: u64) -> Option<&TrackedObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Records this frame's detections and their depth statistics; returns
    /// the object id of each detection, in order.
    pub fn observe(&mut self, frame: u64, detections: &[Detection], depth_stats: &[f32]) -> Vec<u64> {
        assert_eq!(detections.len(), depth_stats.len());
        self.objects.retain(|o| frame.saturating_sub(o.last_seen) <= self.max_missed);

        let mut pairs = Vec::new();
        for (i, d) in detections.iter().enumerate() {
            for (j, o) in self.objects.iter().enumerate() {
                if o.class_id == d.class_id && o.last_seen < frame {
                    let iou = d.bbox.iou(&o.bbox);
                    if iou >= self.min_iou {
                        pairs.push((iou, i, j));
                    }
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut assigned: Vec<Option<usize>> = vec![None; detections.len()];
        let mut taken = vec![false; self.objects.len()];
        for (_, i, j) in pairs {
            if assigned[i].is_none() && !taken[j] {
                assigned[i] = Some(j);
                taken[j] = true;
            }
        }

        let mut ids = Vec::with_capacity(detections.len());
        for (i, d) in detections.iter().enumerate() {
            let j = match assigned[i] {
                Some(j) => j,
                None => {
                    self.objects.push(TrackedObject {
                        id: self.next_id,
                        class_id: d.class_id,
                        bbox: d.bbox,
                        last_seen: frame,
                        previous: None,
                        depth_history: Vec::new(),
                    });
                    self.next_id += 1;
                    self.objects.len() - 1
                }
            };
            let o = &mut self.objects[j];
            if o.last_seen < frame {
                o.previous = Some((o.last_seen, o.bbox));
            }
            o.bbox = d.bbox;
            o.last_seen = frame;
            o.depth_history.push((frame, depth_stats[i]));
            if o.depth_history.len() > self.history_len {
                let excess = o.depth_history.len() - self.history_len;
                o.depth_history.drain(..excess);
            }
            ids.push(o.id);
        }
        ids
    }
}

impl Default for ObjectTracker {
    fn default() -> Self {
        Self::new(0.3, 3, 16)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: f64, class_id: u8) -> Detection {
        Detection::new(BBox::new(x, 10.0, x + 40.0, 90.0), class_id, 0.9).unwrap()
    }

    #[test]
    fn follows_moving_box_and_keeps_history() {
        let mut t = ObjectTracker::default();
        let a = t.observe(0, &[det(100.0, 0)], &[200.0]);
        let b = t.observe(1, &[det(104.0, 0)], &[195.0]);
        assert_eq!(a, b);
        let o = t.get(a[0]).unwrap();
        assert_eq!(o.depth_history, vec![(0, 200.0), (1, 195.0)]);
        assert_eq!(o.previous, Some((0, det(100.0, 0).bbox)));
    }

    #[test]
    fn class_and_overlap_gate_association() {
        let mut t = ObjectTracker::default();
        let a = t.observe(0, &[det(100.0, 0), det(300.0, 2)], &[200.0, 150.0]);
        let b = t.observe(1, &[det(300.0, 0), det(101.0, 2)], &[200.0, 150.0]);
        assert!(a.iter().all(|id| !b.contains(id)));
    }

    #[test]
    fn survives_short_dropouts_only() {
        let mut t = ObjectTracker::new(0.3, 3, 16);
        let a = t.observe(0, &[det(100.0, 0)], &[200.0]);
        let b = t.observe(3, &[det(102.0, 0)], &[190.0]);
        assert_eq!(a, b);
        let c = t.observe(8, &[det(102.0, 0)], &[190.0]);
        assert_ne!(b, c);
    }
}
