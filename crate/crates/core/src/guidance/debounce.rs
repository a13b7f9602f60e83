use super::{WarningEvent, Zone};

/// Per-zone cooldown: a warning is suppressed when the same zone fired fewer
/// than `cooldown` frames earlier.
#[derive(Debug, Clone)]
pub struct Debouncer {
    cooldown: u64,
    last: [Option<u64>; 3],
}

impl Debouncer {
    pub fn new(cooldown: u64) -> Self {
        Self { cooldown, last: [None; 3] }
    }

    pub fn cooldown(&self) -> u64 {
        self.cooldown
    }

    pub fn last_emitted(&self, zone: Zone) -> Option<u64> {
        self.last[zone.index()]
    }

    /// Passes `candidate` through and records it, or returns `None` if suppressed.
    pub fn admit(&mut self, candidate: WarningEvent) -> Option<WarningEvent> {
        let slot = &mut self.last[candidate.zone.index()];
        if let Some(prev) = *slot {
            if candidate.frame_index.saturating_sub(prev) < self.cooldown {
                return None;
            }
        }
        *slot = Some(candidate.frame_index);
        Some(candidate)
    }
}

impl Default for Debouncer {
    fn default() -> Self {
        Self::new(30)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(frame: u64, zone: Zone) -> WarningEvent {
        WarningEvent::new(frame, zone, "person", 100.0)
    }

    #[test]
    fn cooldown_examples() {
        let mut d = Debouncer::default();
        assert!(d.admit(ev(100, Zone::Left)).is_some());
        assert!(d.admit(ev(110, Zone::Left)).is_none());
        assert!(d.admit(ev(105, Zone::Center)).is_some());
        assert!(d.admit(ev(131, Zone::Left)).is_some());
        assert_eq!(d.last_emitted(Zone::Left), Some(131));
    }

    #[test]
    fn first_event_per_zone_always_passes() {
        for zone in Zone::ALL {
            let mut d = Debouncer::new(1000);
            assert!(d.admit(ev(0, zone)).is_some());
        }
    }
}
