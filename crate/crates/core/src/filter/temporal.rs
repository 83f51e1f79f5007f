use std::collections::{BTreeMap, VecDeque};

use crate::geometry::Vec2;

use super::FilterError;

/// Time-ordered observations of one keypoint and its per-frame displacements.
///
/// Displacement `i` runs from observation `i` to observation `i + 1` and is
/// expressed per frame (divided by the frame gap). Callers that compensate
/// camera motion supply their own displacement through [`Track::push_with_displacement`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Track {
    pub track_id: i64,
    pub observations: Vec<(i64, Vec2)>,
    pub displacements: Vec<Vec2>,
}

impl Track {
    pub fn new(track_id: i64) -> Self {
        Self {
            track_id,
            observations: Vec::new(),
            displacements: Vec::new(),
        }
    }

    pub fn from_pixels(track_id: i64, obs: &[(i64, Vec2)]) -> Result<Self, FilterError> {
        let mut t = Self::new(track_id);
        for (f, p) in obs {
            t.push(*f, *p)?;
        }
        Ok(t)
    }

    pub fn last_frame(&self) -> Option<i64> {
        self.observations.last().map(|o| o.0)
    }

    fn check_order(&self, frame: i64) -> Result<Option<(i64, Vec2)>, FilterError> {
        match self.observations.last() {
            Some(&(last, _)) if frame <= last => Err(FilterError::NonIncreasingFrame {
                track_id: self.track_id,
                frame,
                last,
            }),
            other => Ok(other.copied()),
        }
    }

    /// Appends an observation with the raw image displacement.
    pub fn push(&mut self, frame: i64, pixel: Vec2) -> Result<(), FilterError> {
        if let Some((last, px)) = self.check_order(frame)? {
            self.displacements
                .push((pixel - px) / (frame - last) as f64);
        }
        self.observations.push((frame, pixel));
        Ok(())
    }

    /// Appends an observation whose displacement since the previous one is
    /// `displacement` pixels (ignored for the first observation).
    pub fn push_with_displacement(
        &mut self,
        frame: i64,
        pixel: Vec2,
        displacement: Vec2,
    ) -> Result<(), FilterError> {
        if let Some((last, _)) = self.check_order(frame)? {
            self.displacements
                .push(displacement / (frame - last) as f64);
        }
        self.observations.push((frame, pixel));
        Ok(())
    }

    /// Drops observations older than the newest `keep`.
    pub fn truncate_front(&mut self, keep: usize) {
        if self.observations.len() > keep {
            let drop = self.observations.len() - keep;
            self.observations.drain(..drop);
            self.displacements
                .drain(..drop.min(self.displacements.len()));
        }
    }
}

/// Mean displacement magnitude over the newest `window` displacements that end
/// at or before frame `t`; 0 without displacements.
pub fn temporal_motion(track: &Track, window: usize, t: i64) -> f64 {
    let upto = track
        .observations
        .iter()
        .skip(1)
        .take_while(|(f, _)| *f <= t)
        .count()
        .min(track.displacements.len());
    let n = window.min(upto);
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = track.displacements[upto - n..upto]
        .iter()
        .map(|d| d.norm())
        .sum();
    sum / n as f64
}

/// Votes needed in a window of `n` frames: `⌈quota·n⌉`.
fn required_votes(quota: f64, n: usize) -> usize {
    // 0.6 · 5 evaluates to 3.0000000000000004
    ((quota * n as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Dynamic iff the newest `min(window, len)` entries hold at least
/// `⌈quota·min(window, len)⌉` votes. An empty history is never dynamic.
pub fn temporal_vote(history: &[bool], window: usize, quota: f64) -> bool {
    let n = window.min(history.len());
    if n == 0 {
        return false;
    }
    let votes = history[history.len() - n..].iter().filter(|v| **v).count();
    votes >= required_votes(quota, n)
}

/// Per-track evidence history from previous frames.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VoteState {
    history: BTreeMap<i64, VecDeque<bool>>,
}

impl VoteState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn history(&self, track_id: i64) -> Option<&VecDeque<bool>> {
        self.history.get(&track_id)
    }

    /// History with `current` appended, trimmed to `window`.
    pub fn with_current(&self, track_id: i64, current: bool, window: usize) -> Vec<bool> {
        let mut h: Vec<bool> = self
            .history
            .get(&track_id)
            .map(|d| d.iter().copied().collect())
            .unwrap_or_default();
        h.push(current);
        let start = h.len().saturating_sub(window);
        h.split_off(start)
    }

    pub fn record(&mut self, track_id: i64, evidence: bool, window: usize) {
        let h = self.history.entry(track_id).or_default();
        h.push_back(evidence);
        while h.len() > window {
            h.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Forgets tracks not in `alive`.
    pub fn retain(&mut self, alive: impl Fn(i64) -> bool) {
        self.history.retain(|k, _| alive(*k));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn track(pixels: &[(f64, f64)]) -> Track {
        let obs: Vec<_> = pixels
            .iter()
            .enumerate()
            .map(|(i, p)| (i as i64, Vec2::new(p.0, p.1)))
            .collect();
        Track::from_pixels(7, &obs).unwrap()
    }

    #[test]
    fn motion_examples() {
        let stat = track(&[(5.0, 5.0); 6]);
        assert_eq!(temporal_motion(&stat, 5, 5), 0.0);
        let cv: Vec<(f64, f64)> = (0..8).map(|i| (2.0 * i as f64, 1.0)).collect();
        assert_eq!(temporal_motion(&track(&cv), 5, 7), 2.0);
        let t = track(&[(0.0, 0.0), (3.0, 4.0), (3.0, 4.0)]);
        assert_eq!(temporal_motion(&t, 5, 2), 2.5);
        assert_eq!(temporal_motion(&track(&[(1.0, 1.0)]), 5, 0), 0.0);
    }

    #[test]
    fn motion_ignores_future_and_scales_gaps() {
        let t = Track::from_pixels(
            1,
            &[
                (0, Vec2::new(0.0, 0.0)),
                (2, Vec2::new(4.0, 0.0)),
                (3, Vec2::new(20.0, 0.0)),
            ],
        )
        .unwrap();
        assert_eq!(temporal_motion(&t, 5, 2), 2.0);
        assert_eq!(temporal_motion(&t, 5, 3), 9.0);
    }

    #[test]
    fn track_rejects_out_of_order_frames() {
        let mut t = Track::new(3);
        t.push(4, Vec2::zeros()).unwrap();
        assert!(matches!(
            t.push(4, Vec2::zeros()),
            Err(FilterError::NonIncreasingFrame { .. })
        ));
        assert_eq!(t.displacements.len() + 1, t.observations.len());
    }

    #[test]
    fn vote_examples() {
        assert!(!temporal_vote(&[false; 6], 5, 0.6));
        assert!(temporal_vote(&[true; 6], 5, 1.0));
        assert!(temporal_vote(&[true; 2], 5, 0.3));
        assert!(temporal_vote(&[false, true, false, true, true], 5, 0.6));
        assert!(!temporal_vote(&[false, true, false, false, true], 5, 0.6));
        assert!(!temporal_vote(&[], 5, 0.6));
        // only the last W entries count
        assert!(!temporal_vote(
            &[true, true, true, false, false, false, true, false],
            5,
            0.6
        ));
    }

    #[test]
    fn vote_state_window() {
        let mut s = VoteState::new();
        for e in [true, true, false, false, false, false] {
            s.record(9, e, 5);
        }
        assert_eq!(s.history(9).unwrap().len(), 5);
        assert_eq!(
            s.with_current(9, true, 5),
            vec![false, false, false, false, true]
        );
        assert_eq!(s.with_current(1, true, 5), vec![true]);
    }

    proptest! {
        #[test]
        fn identical_pixels_have_zero_motion(n in 1usize..20, x in -100.0..1000.0f64, w in 1usize..10) {
            let t = track(&vec![(x, -x); n]);
            prop_assert_eq!(temporal_motion(&t, w, n as i64), 0.0);
        }
    }
}
