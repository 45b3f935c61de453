use std::collections::VecDeque;

use nalgebra::Vector3;

use super::filter::{predict_step, Cov15, ErrorStateFilter, FilterConfig, MeasurementKind, TimedMeasurement};
use crate::error::{Error, Result};
use crate::sins::{ImuSample, NavState};

/// Default replay horizon, s.
pub const DEFAULT_HORIZON: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    pub nav: NavState,
    pub p: Cov15,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FusionStats {
    pub accepted: usize,
    pub rejected: usize,
    pub dropped: usize,
    pub replays: usize,
}

#[derive(Debug, Clone)]
struct Entry {
    sample: ImuSample,
    dt: f64,
    prior: Snapshot,
    post: Snapshot,
    measurements: Vec<TimedMeasurement>,
    accepted: Vec<bool>,
}

/// Real-time navigation filter with a replay buffer for delayed and
/// out-of-order measurements.
///
/// The live state is advanced on every IMU sample. A late measurement is
/// attached to the buffered epoch nearest its occurrence time, then the
/// filter rewinds to that epoch and re-runs every buffered sample and
/// measurement up to the present, overwriting the buffered history.
/// Measurements sharing an epoch are applied in a canonical order, so the
/// result does not depend on arrival order.
#[derive(Debug, Clone)]
pub struct FusionEngine {
    filter: ErrorStateFilter,
    nav: NavState,
    buffer: VecDeque<Entry>,
    pending: Vec<TimedMeasurement>,
    horizon: f64,
    history: Vec<Snapshot>,
    keep_history: bool,
    stats: FusionStats,
}

fn align(m: &TimedMeasurement, nav: &NavState, t: f64, model: crate::sins::EarthModel) -> MeasurementKind {
    let dt = t - m.t_occurred;
    if dt == 0.0 {
        return m.kind;
    }
    // carry the fix along the current velocity to the epoch time
    let shift: Vector3<f64> = match model.params(&nav.pos, &nav.vel) {
        Ok(ep) => ep.rc.component_mul(&nav.vel) * dt,
        Err(_) => Vector3::zeros(),
    };
    match m.kind {
        MeasurementKind::LidarPose { pos, heading, r } => MeasurementKind::LidarPose {
            pos: pos + shift,
            heading,
            r,
        },
        MeasurementKind::GnssPosition { pos, r } => MeasurementKind::GnssPosition { pos: pos + shift, r },
    }
}

impl FusionEngine {
    pub fn new(config: FilterConfig, nav: NavState) -> Result<Self> {
        Ok(Self::with_filter(ErrorStateFilter::new(config, &nav)?, nav))
    }

    pub fn with_filter(filter: ErrorStateFilter, nav: NavState) -> Self {
        Self {
            filter,
            nav,
            buffer: VecDeque::new(),
            pending: Vec::new(),
            horizon: DEFAULT_HORIZON,
            history: Vec::new(),
            keep_history: true,
            stats: FusionStats::default(),
        }
    }

    pub fn set_horizon(&mut self, horizon: f64) {
        self.horizon = horizon;
    }

    /// Stop recording finalized epochs (saves memory on long runs).
    pub fn discard_history(&mut self) {
        self.keep_history = false;
    }

    pub fn nav(&self) -> &NavState {
        &self.nav
    }

    pub fn covariance(&self) -> &Cov15 {
        &self.filter.p
    }

    pub fn stats(&self) -> FusionStats {
        self.stats
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            nav: self.nav,
            p: self.filter.p,
        }
    }

    /// Buffered state at the epoch nearest `t`, or `None` outside the buffer.
    pub fn state_at(&self, t: f64) -> Option<Snapshot> {
        let front = self.buffer.front()?;
        let back = self.buffer.back()?;
        if t < front.post.nav.t - 0.5 * front.dt || t > back.post.nav.t + 0.5 * back.dt {
            return None;
        }
        let k = self.buffer.partition_point(|e| e.post.nav.t < t);
        let best = [k.saturating_sub(1), k.min(self.buffer.len() - 1)]
            .into_iter()
            .min_by(|&a, &b| {
                (self.buffer[a].post.nav.t - t)
                    .abs()
                    .total_cmp(&(self.buffer[b].post.nav.t - t).abs())
            })?;
        Some(self.buffer[best].post)
    }

    fn apply_sorted(&mut self, mut nav: NavState, entry: &mut Entry) -> Result<NavState> {
        entry.accepted.clear();
        for m in &entry.measurements {
            let kind = align(m, &nav, nav.t, self.filter.config.earth);
            match self.filter.apply(&nav, &kind) {
                Ok((next, out)) => {
                    nav = next;
                    entry.accepted.push(out.accepted);
                }
                Err(Error::CorrectionTooLarge(n)) => {
                    log::warn!("correction of {n:.3} rad rejected at t={:.3}", nav.t);
                    entry.accepted.push(false);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(nav)
    }

    /// Advance the live state by one IMU sample and return it.
    pub fn push_imu(&mut self, sample: &ImuSample) -> Result<Snapshot> {
        let dt = sample.t - self.nav.t;
        let prior = self.snapshot();
        let nav = predict_step(&mut self.filter, &self.nav, sample, dt)?;
        let mut entry = Entry {
            sample: *sample,
            dt,
            prior,
            post: prior,
            measurements: Vec::new(),
            accepted: Vec::new(),
        };
        let half = 0.5 * dt;
        let (due, later): (Vec<_>, Vec<_>) = self.pending.drain(..).partition(|m| m.t_occurred <= nav.t + half);
        self.pending = later;
        entry.measurements = due;
        entry.measurements.sort_by(|a, b| a.canonical_cmp(b));
        let nav = self.apply_sorted(nav, &mut entry)?;
        self.nav = nav;
        entry.post = self.snapshot();
        self.buffer.push_back(entry);
        self.trim();
        Ok(self.snapshot())
    }

    fn trim(&mut self) {
        while let Some(front) = self.buffer.front() {
            if front.post.nav.t >= self.nav.t - self.horizon {
                break;
            }
            let e = self.buffer.pop_front().expect("front exists");
            self.retire(e);
        }
    }

    fn retire(&mut self, e: Entry) {
        let acc = e.accepted.iter().filter(|a| **a).count();
        self.stats.accepted += acc;
        self.stats.rejected += e.accepted.len() - acc;
        if self.keep_history {
            self.history.push(e.post);
        }
    }

    /// Deliver a measurement; late ones trigger a replay from their epoch.
    pub fn push_measurement(&mut self, m: TimedMeasurement) -> Result<()> {
        let Some(back) = self.buffer.back() else {
            self.pending.push(m);
            return Ok(());
        };
        if m.t_occurred > back.post.nav.t + 0.5 * back.dt {
            self.pending.push(m);
            return Ok(());
        }
        let front = self.buffer.front().expect("non-empty");
        if m.t_occurred < front.post.nav.t - 0.5 * front.dt {
            log::warn!(
                "measurement at t={:.3} older than the replay horizon, dropped",
                m.t_occurred
            );
            self.stats.dropped += 1;
            return Ok(());
        }
        // epoch with the nearest time; ties go to the earlier epoch
        let k = self
            .buffer
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1.post.nav.t - m.t_occurred)
                    .abs()
                    .total_cmp(&(b.1.post.nav.t - m.t_occurred).abs())
            })
            .map(|(k, _)| k)
            .expect("non-empty");
        let n_entries = self.buffer.len();
        let list = &mut self.buffer[k].measurements;
        let pos = list.partition_point(|x| x.canonical_cmp(&m).is_le());
        list.insert(pos, m);
        let last = k + 1 == n_entries && pos + 1 == list.len();
        if last {
            // appended to the newest epoch: continue from the live state
            let mut entry = self.buffer.pop_back().expect("non-empty");
            let kind = align(&m, &self.nav, self.nav.t, self.filter.config.earth);
            match self.filter.apply(&self.nav, &kind) {
                Ok((next, out)) => {
                    self.nav = next;
                    entry.accepted.push(out.accepted);
                }
                Err(Error::CorrectionTooLarge(_)) => entry.accepted.push(false),
                Err(e) => return Err(e),
            }
            entry.post = self.snapshot();
            self.buffer.push_back(entry);
            return Ok(());
        }
        self.replay_from(k)
    }

    fn replay_from(&mut self, k: usize) -> Result<()> {
        self.stats.replays += 1;
        let start = self.buffer[k].prior;
        self.filter.p = start.p;
        let mut nav = start.nav;
        for j in k..self.buffer.len() {
            let mut entry = std::mem::replace(
                &mut self.buffer[j],
                Entry {
                    sample: ImuSample::new(0.0, Vector3::zeros(), Vector3::zeros()),
                    dt: 0.0,
                    prior: start,
                    post: start,
                    measurements: Vec::new(),
                    accepted: Vec::new(),
                },
            );
            entry.prior = Snapshot { nav, p: self.filter.p };
            nav = predict_step(&mut self.filter, &nav, &entry.sample, entry.dt)?;
            nav = self.apply_sorted(nav, &mut entry)?;
            entry.post = Snapshot { nav, p: self.filter.p };
            self.buffer[j] = entry;
        }
        self.nav = nav;
        Ok(())
    }

    /// Flush the buffer and return every finalized epoch in time order.
    pub fn finish(mut self) -> (Vec<Snapshot>, FusionStats) {
        self.stats.dropped += self.pending.len();
        while let Some(e) = self.buffer.pop_front() {
            self.retire(e);
        }
        (self.history, self.stats)
    }
}
