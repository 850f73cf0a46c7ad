//! Events and fixed-duration event windows.

use crate::error::{Error, Result};

/// A single brightness-change measurement.
///
/// Coordinates are pixel positions with pixel centers on integer values.
/// Real-valued coordinates are allowed (undistorted or warped streams).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    /// +1 or -1.
    pub p: i8,
}

impl Event {
    pub fn new(x: f64, y: f64, t: f64, p: i8) -> Self {
        Self { x, y, t, p }
    }

    /// Nearest integer pixel, if inside a `width` x `height` sensor.
    #[inline]
    pub fn pixel(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        let xi = self.x.round();
        let yi = self.y.round();
        if xi < 0.0 || yi < 0.0 || xi >= width as f64 || yi >= height as f64 {
            return None;
        }
        Some((xi as usize, yi as usize))
    }
}

/// Checks the per-event invariants: finite coordinates, `t >= 0`, polarity in {-1, +1}.
pub fn validate_event(e: &Event) -> Result<()> {
    if !(e.x.is_finite() && e.y.is_finite() && e.t.is_finite()) {
        return Err(Error::Validation(format!("non-finite event {e:?}")));
    }
    if e.t < 0.0 {
        return Err(Error::Validation(format!("negative timestamp {}", e.t)));
    }
    if e.p != 1 && e.p != -1 {
        return Err(Error::Validation("polarity must be -1 or 1".into()));
    }
    Ok(())
}

/// Returns an error naming the first index at which `t` decreases.
pub fn check_sorted(stream: &[Event]) -> Result<()> {
    for (i, w) in stream.windows(2).enumerate() {
        if w[1].t < w[0].t {
            return Err(Error::Validation(format!(
                "event stream not sorted by time at index {} ({} < {})",
                i + 1,
                w[1].t,
                w[0].t
            )));
        }
    }
    Ok(())
}

/// All events inside `[t_start, t_end)`, warped towards `t_ref`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventWindow {
    pub events: Vec<Event>,
    pub t_start: f64,
    pub t_end: f64,
    pub t_ref: f64,
}

impl EventWindow {
    /// Window with `t_ref = t_start`.
    pub fn new(events: Vec<Event>, t_start: f64, t_end: f64) -> Self {
        Self {
            events,
            t_start,
            t_end,
            t_ref: t_start,
        }
    }

    pub fn dt(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Same time span, different events.
    pub fn with_events(&self, events: Vec<Event>) -> Self {
        Self {
            events,
            t_start: self.t_start,
            t_end: self.t_end,
            t_ref: self.t_ref,
        }
    }
}

/// Partitions a sorted stream into consecutive windows of width `dt`.
///
/// Windows start at the first timestamp. The last window is closed on the
/// right so that the final event is always included; the window count is
/// `ceil(span / dt)` (at least one for a non-empty stream).
pub fn slice_windows(stream: &[Event], dt: f64) -> Result<Vec<EventWindow>> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParam(format!("dt must be > 0, got {dt}")));
    }
    check_sorted(stream)?;
    let (first, last) = match (stream.first(), stream.last()) {
        (Some(f), Some(l)) => (f.t, l.t),
        _ => return Ok(Vec::new()),
    };
    let span = last - first;
    // Guard against 1.0 / 0.05 = 20.000000000000004 style round-off.
    let ratio = span / dt;
    let mut n = ratio.ceil() as usize;
    if n > 0 && (ratio - (n - 1) as f64).abs() < 1e-9 {
        n -= 1;
    }
    let n = n.max(1);

    let mut windows: Vec<EventWindow> = (0..n)
        .map(|i| {
            let t_start = first + i as f64 * dt;
            EventWindow::new(Vec::new(), t_start, t_start + dt)
        })
        .collect();
    for e in stream {
        let mut i = ((e.t - first) / dt).floor() as usize;
        // floor() can land one past a boundary that was computed by multiplication.
        while i > 0 && e.t < windows[i.min(n - 1)].t_start {
            i -= 1;
        }
        while i + 1 < n && e.t >= windows[i + 1].t_start {
            i += 1;
        }
        windows[i.min(n - 1)].events.push(*e);
    }
    Ok(windows)
}

/// Partitions a sorted stream into windows holding `count` events each
/// (the last window may hold fewer). Window bounds are the first and last
/// event times of each chunk.
pub fn slice_windows_by_count(stream: &[Event], count: usize) -> Result<Vec<EventWindow>> {
    if count == 0 {
        return Err(Error::InvalidParam("count must be > 0".into()));
    }
    check_sorted(stream)?;
    Ok(stream
        .chunks(count)
        .map(|c| {
            let t_start = c[0].t;
            let t_end = c[c.len() - 1].t.max(t_start + f64::EPSILON);
            EventWindow::new(c.to_vec(), t_start, t_end)
        })
        .collect())
}
