//! Plain-text file formats, honeycomb masks and hot-pixel filtering.
//!
//! Numbers are written with Rust's shortest round-trip `Display` form, so
//! reading a file and writing it back reproduces it byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::event::{validate_event, Event};
use crate::mask::RegionMask;
use crate::warp::{AngularVelocity3, ImuSample};

/// Event stream together with its sensor size.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub width: usize,
    pub height: usize,
    pub events: Vec<Event>,
}

/// Per-window ground-truth depths: `(t_start, region id -> z)`.
pub type GtDepths = Vec<(f64, BTreeMap<u32, f64>)>;

/// Per-window masks: `(t_start, mask)`.
pub type MaskSequence = Vec<(f64, RegionMask)>;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Line cursor that produces located parse errors.
struct Lines<'a> {
    label: &'a str,
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, label: &'a str) -> Self {
        Self {
            label,
            iter: text.lines().enumerate(),
            line: 0,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.label.to_string(),
            line: self.line,
            msg: msg.into(),
        }
    }

    /// Next non-empty line, split into fields.
    fn next_fields(&mut self) -> Option<Vec<&'a str>> {
        for (i, l) in self.iter.by_ref() {
            self.line = i + 1;
            let l = l.trim_end_matches('\r');
            if l.trim().is_empty() {
                continue;
            }
            return Some(l.split_whitespace().collect());
        }
        None
    }

    fn expect_fields(&mut self, what: &str) -> Result<Vec<&'a str>> {
        self.next_fields().ok_or_else(|| {
            let mut e = self.err(format!("unexpected end of file, expected {what}"));
            if let Error::Parse { line, .. } = &mut e {
                *line += 1;
            }
            e
        })
    }

    fn num<T: std::str::FromStr>(&self, s: &str, what: &str) -> Result<T> {
        s.parse()
            .map_err(|_| self.err(format!("invalid {what} '{s}'")))
    }

    fn header(&mut self, magic: &str, n_args: usize) -> Result<Vec<&'a str>> {
        let f = self.expect_fields(&format!("'{magic}' header"))?;
        if f[0] != magic {
            return Err(self.err(format!("expected '{magic}' header, found '{}'", f[0])));
        }
        if f.len() != n_args + 1 {
            return Err(self.err(format!(
                "'{magic}' header takes {n_args} fields, found {}",
                f.len() - 1
            )));
        }
        Ok(f[1..].to_vec())
    }

    fn arity(&self, f: &[&str], n: usize, what: &str) -> Result<()> {
        if f.len() != n {
            return Err(self.err(format!("{what} needs {n} fields, found {}", f.len())));
        }
        Ok(())
    }

    fn window_header(&mut self) -> Result<f64> {
        let f = self.expect_fields("'win' line")?;
        if f[0] != "win" || f.len() != 2 {
            return Err(self.err("expected 'win <t_start>'"));
        }
        let t: f64 = self.num(f[1], "window start")?;
        if !t.is_finite() {
            return Err(self.err("window start must be finite"));
        }
        Ok(t)
    }
}

// ---------------------------------------------------------------- events

pub fn parse_events(text: &str, label: &str) -> Result<EventStream> {
    let mut lines = Lines::new(text, label);
    let h = lines.header("evt1", 2)?;
    let width: usize = lines.num(h[0], "width")?;
    let height: usize = lines.num(h[1], "height")?;
    if width == 0 || height == 0 {
        return Err(lines.err("sensor dimensions must be positive"));
    }
    let mut events = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    while let Some(f) = lines.next_fields() {
        lines.arity(&f, 4, "event")?;
        let t: f64 = lines.num(f[0], "timestamp")?;
        let x: f64 = lines.num(f[1], "x")?;
        let y: f64 = lines.num(f[2], "y")?;
        let p: i8 = match f[3] {
            "1" | "+1" => 1,
            "-1" => -1,
            _ => return Err(lines.err("polarity must be -1 or 1")),
        };
        let e = Event::new(x, y, t, p);
        validate_event(&e).map_err(|err| lines.err(err.to_string()))?;
        if t < last_t {
            return Err(lines.err(format!("timestamp {t} decreases (previous {last_t})")));
        }
        last_t = t;
        events.push(e);
    }
    Ok(EventStream {
        width,
        height,
        events,
    })
}

pub fn format_events(s: &EventStream) -> String {
    let mut out = String::with_capacity(24 * s.events.len() + 16);
    let _ = writeln!(out, "evt1 {} {}", s.width, s.height);
    for e in &s.events {
        let _ = writeln!(out, "{} {} {} {}", e.t, e.x, e.y, e.p);
    }
    out
}

/// Reads an event file; the stream comes back validated and time-sorted.
pub fn read_events(path: impl AsRef<Path>) -> Result<EventStream> {
    let path = path.as_ref();
    parse_events(&read_text(path)?, &path.display().to_string())
}

pub fn write_events(path: impl AsRef<Path>, s: &EventStream) -> Result<()> {
    write_text(path.as_ref(), &format_events(s))
}

// ---------------------------------------------------------------- masks

pub fn parse_masks(text: &str, label: &str) -> Result<MaskSequence> {
    let mut lines = Lines::new(text, label);
    let h = lines.header("msk1", 3)?;
    let width: usize = lines.num(h[0], "width")?;
    let height: usize = lines.num(h[1], "height")?;
    let n: usize = lines.num(h[2], "window count")?;
    if width == 0 || height == 0 {
        return Err(lines.err("mask dimensions must be positive"));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t = lines.window_header()?;
        let mut labels = Vec::with_capacity(width * height);
        for _ in 0..height {
            let f = lines.expect_fields("mask row")?;
            lines.arity(&f, width, "mask row")?;
            for v in f {
                labels.push(lines.num::<u32>(v, "label")?);
            }
        }
        out.push((t, RegionMask::new(width, height, labels)?));
    }
    if lines.next_fields().is_some() {
        return Err(lines.err("trailing data after last mask"));
    }
    Ok(out)
}

pub fn format_masks(masks: &[(f64, RegionMask)]) -> Result<String> {
    let (w, h) = masks
        .first()
        .map(|(_, m)| (m.width(), m.height()))
        .ok_or_else(|| Error::Validation("no masks to write".into()))?;
    let mut out = String::new();
    let _ = writeln!(out, "msk1 {w} {h} {}", masks.len());
    for (t, m) in masks {
        if m.width() != w || m.height() != h {
            return Err(Error::Validation("masks differ in size".into()));
        }
        let _ = writeln!(out, "win {t}");
        for row in m.labels().chunks(w) {
            let mut first = true;
            for l in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{l}");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn read_masks(path: impl AsRef<Path>) -> Result<MaskSequence> {
    let path = path.as_ref();
    parse_masks(&read_text(path)?, &path.display().to_string())
}

pub fn write_masks(path: impl AsRef<Path>, masks: &[(f64, RegionMask)]) -> Result<()> {
    write_text(path.as_ref(), &format_masks(masks)?)
}

/// Mask in effect at `t`: the last one starting at or before `t` (the first
/// mask for earlier times).
pub fn mask_at(masks: &[(f64, RegionMask)], t: f64) -> Option<&RegionMask> {
    let i = masks.partition_point(|(s, _)| *s <= t + 1e-9);
    masks.get(i.saturating_sub(1)).map(|(_, m)| m)
}

// ---------------------------------------------------------------- IMU

pub fn parse_imu(text: &str, label: &str) -> Result<Vec<ImuSample>> {
    let mut lines = Lines::new(text, label);
    lines.header("imu1", 0)?;
    let mut out: Vec<ImuSample> = Vec::new();
    while let Some(f) = lines.next_fields() {
        lines.arity(&f, 4, "IMU sample")?;
        let t: f64 = lines.num(f[0], "timestamp")?;
        let w = [
            lines.num::<f64>(f[1], "wx")?,
            lines.num::<f64>(f[2], "wy")?,
            lines.num::<f64>(f[3], "wz")?,
        ];
        if !(t.is_finite() && w.iter().all(|v| v.is_finite())) {
            return Err(lines.err("IMU values must be finite"));
        }
        if let Some(prev) = out.last() {
            if t <= prev.t {
                return Err(lines.err(format!(
                    "IMU timestamps must be strictly increasing ({} then {t})",
                    prev.t
                )));
            }
        }
        out.push(ImuSample {
            t,
            omega: AngularVelocity3::new(w[0], w[1], w[2]),
        });
    }
    Ok(out)
}

pub fn format_imu(samples: &[ImuSample]) -> String {
    let mut out = String::from("imu1\n");
    for s in samples {
        let _ = writeln!(out, "{} {} {} {}", s.t, s.omega.wx, s.omega.wy, s.omega.wz);
    }
    out
}

pub fn read_imu(path: impl AsRef<Path>) -> Result<Vec<ImuSample>> {
    let path = path.as_ref();
    parse_imu(&read_text(path)?, &path.display().to_string())
}

pub fn write_imu(path: impl AsRef<Path>, samples: &[ImuSample]) -> Result<()> {
    write_text(path.as_ref(), &format_imu(samples))
}

// ---------------------------------------------------------------- ground-truth depth

pub fn parse_gt_depths(text: &str, label: &str) -> Result<GtDepths> {
    let mut lines = Lines::new(text, label);
    let h = lines.header("gtd1", 1)?;
    let n: usize = lines.num(h[0], "window count")?;
    let mut out: GtDepths = Vec::with_capacity(n);
    let mut current: Option<(f64, BTreeMap<u32, f64>)> = None;
    while let Some(f) = lines.next_fields() {
        if f[0] == "win" {
            lines.arity(&f, 2, "'win' line")?;
            if let Some(w) = current.take() {
                out.push(w);
            }
            let t: f64 = lines.num(f[1], "window start")?;
            current = Some((t, BTreeMap::new()));
            continue;
        }
        lines.arity(&f, 2, "depth line")?;
        let id: u32 = lines.num(f[0], "region id")?;
        let z: f64 = lines.num(f[1], "depth")?;
        if !(z > 0.0 && z.is_finite()) {
            return Err(lines.err("depth must be > 0"));
        }
        let Some((_, map)) = current.as_mut() else {
            return Err(lines.err("depth line before first 'win' line"));
        };
        if map.insert(id, z).is_some() {
            return Err(lines.err(format!("region {id} listed twice")));
        }
    }
    if let Some(w) = current.take() {
        out.push(w);
    }
    if out.len() != n {
        return Err(Error::Parse {
            path: label.to_string(),
            line: lines.line,
            msg: format!("header announces {n} windows, found {}", out.len()),
        });
    }
    Ok(out)
}

pub fn format_gt_depths(gt: &[(f64, BTreeMap<u32, f64>)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "gtd1 {}", gt.len());
    for (t, map) in gt {
        let _ = writeln!(out, "win {t}");
        for (id, z) in map {
            let _ = writeln!(out, "{id} {z}");
        }
    }
    out
}

pub fn read_gt_depths(path: impl AsRef<Path>) -> Result<GtDepths> {
    let path = path.as_ref();
    parse_gt_depths(&read_text(path)?, &path.display().to_string())
}

pub fn write_gt_depths(path: impl AsRef<Path>, gt: &[(f64, BTreeMap<u32, f64>)]) -> Result<()> {
    write_text(path.as_ref(), &format_gt_depths(gt))
}

// ---------------------------------------------------------------- honeycomb

pub const MIN_CELL_RADIUS: f64 = 4.0;

/// Pointy-top hexagonal tiling with circumradius `cell_radius`.
///
/// Cell centers sit on rows `1.5 r` apart, columns `sqrt(3) r` apart, odd
/// rows shifted by half a column, with the first center at pixel (0, 0).
/// Every pixel joins its nearest center (ties go to the earlier cell in
/// row-major order), which yields exact hexagons. Non-empty cells are
/// labeled from 1 in row-major order.
pub fn honeycomb_mask(width: usize, height: usize, cell_radius: f64) -> Result<RegionMask> {
    if !(cell_radius >= MIN_CELL_RADIUS && cell_radius.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "cell radius must be >= {MIN_CELL_RADIUS}, got {cell_radius}"
        )));
    }
    let r = cell_radius;
    let dy = 1.5 * r;
    let dx = 3f64.sqrt() * r;
    let n_rows = (height as f64 / dy).ceil() as i64 + 2;
    let n_cols = (width as f64 / dx).ceil() as i64 + 2;
    let center = |row: i64, col: i64| {
        let shift = if row.rem_euclid(2) == 1 { 0.5 * dx } else { 0.0 };
        (col as f64 * dx + shift, row as f64 * dy)
    };
    // Provisional key: row-major index over the padded cell grid.
    let key = |row: i64, col: i64| ((row + 1) * (n_cols + 2) + (col + 1)) as usize;
    let mut cell = vec![0usize; width * height];
    for y in 0..height {
        let yf = y as f64;
        let r0 = (yf / dy).floor() as i64;
        for x in 0..width {
            let xf = x as f64;
            let mut best = (f64::INFINITY, usize::MAX);
            for row in (r0 - 1)..=(r0 + 1) {
                if row < -1 || row > n_rows {
                    continue;
                }
                let c0 = (xf / dx).floor() as i64;
                for col in (c0 - 1)..=(c0 + 1) {
                    let (cx, cy) = center(row, col);
                    let d = (xf - cx).powi(2) + (yf - cy).powi(2);
                    let k = key(row, col);
                    if d < best.0 || (d == best.0 && k < best.1) {
                        best = (d, k);
                    }
                }
            }
            cell[y * width + x] = best.1;
        }
    }
    let mut used: Vec<usize> = cell.clone();
    used.sort_unstable();
    used.dedup();
    let relabel: BTreeMap<usize, u32> = used
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, i as u32 + 1))
        .collect();
    let labels = cell.iter().map(|k| relabel[k]).collect();
    RegionMask::new(width, height, labels)
}

// ---------------------------------------------------------------- hot pixels

/// Default multiple of the median per-pixel count a hot pixel must exceed.
pub const HOT_PIXEL_MEDIAN_FACTOR: f64 = 20.0;

/// Removes all events of pixels that fire faster than `rate_threshold`
/// (events/s over the stream's span) and more than
/// [`HOT_PIXEL_MEDIAN_FACTOR`] times the median count of active pixels.
pub fn filter_hot_pixels(stream: &[Event], width: usize, height: usize, rate_threshold: f64) -> Vec<Event> {
    filter_hot_pixels_with(stream, width, height, rate_threshold, HOT_PIXEL_MEDIAN_FACTOR)
}

/// [`filter_hot_pixels`] with an explicit median factor.
///
/// Detection is repeated on the filtered stream until nothing changes, so
/// the filter is idempotent.
pub fn filter_hot_pixels_with(
    stream: &[Event],
    width: usize,
    height: usize,
    rate_threshold: f64,
    median_factor: f64,
) -> Vec<Event> {
    let mut current: Vec<Event> = stream.to_vec();
    loop {
        let hot = hot_pixels(&current, width, height, rate_threshold, median_factor);
        if hot.is_empty() {
            return current;
        }
        for &(x, y) in &hot {
            log::info!("removing hot pixel ({x}, {y})");
        }
        current.retain(|e| match e.pixel(width, height) {
            Some((x, y)) => hot.binary_search(&(x, y)).is_err(),
            None => true,
        });
    }
}

/// Sorted list of pixels flagged as hot.
pub fn hot_pixels(
    stream: &[Event],
    width: usize,
    height: usize,
    rate_threshold: f64,
    median_factor: f64,
) -> Vec<(usize, usize)> {
    if stream.len() < 2 {
        return Vec::new();
    }
    let span = stream[stream.len() - 1].t - stream[0].t;
    if !(span > 0.0) {
        return Vec::new();
    }
    let mut counts = vec![0u64; width * height];
    for e in stream {
        if let Some((x, y)) = e.pixel(width, height) {
            counts[y * width + x] += 1;
        }
    }
    let mut active: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
    if active.is_empty() {
        return Vec::new();
    }
    let mid = active.len() / 2;
    let median = if active.len() % 2 == 1 {
        *active.select_nth_unstable(mid).1 as f64
    } else {
        let hi = *active.select_nth_unstable(mid).1 as f64;
        let lo = *active[..mid].iter().max().expect("mid > 0") as f64;
        0.5 * (lo + hi)
    };
    let mut hot: Vec<(usize, usize)> = counts
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c as f64 / span > rate_threshold && c as f64 > median_factor * median)
        .map(|(i, _)| (i % width, i / width))
        .collect();
    hot.sort_unstable();
    hot
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_event_file() {
        let s = parse_events("evt1 240 180\n", "mem").unwrap();
        assert_eq!((s.width, s.height), (240, 180));
        assert!(s.events.is_empty());
    }

    #[test]
    fn bad_polarity_reports_line() {
        let err = parse_events("evt1 10 10\n0.1 1 2 1\n0.5 3 4 2\n", "f.txt").unwrap_err();
        assert_eq!(
            err,
            Error::Parse {
                path: "f.txt".into(),
                line: 3,
                msg: "polarity must be -1 or 1".into()
            }
        );
        assert_eq!(err.to_string(), "f.txt:3: polarity must be -1 or 1");
    }

    #[test]
    fn decreasing_time_is_rejected() {
        let err = parse_events("evt1 10 10\n0.2 1 2 1\n0.1 1 2 -1\n", "f").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(parse_events("evt2 1 1\n", "f"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_events("evt1 4 4\n0.1 1 x 1\n", "f"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(parse_events("", "f"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_imu("imu1\n0.1 0 0 0\n0.1 0 0 0\n", "f"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_gt_depths("gtd1 1\nwin 0\n1 -2\n", "f"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_masks("msk1 2 2 1\nwin 0\n1 1\n1\n", "f"),
            Err(Error::Parse { line: 4, .. })
        ));
    }

    #[test]
    fn event_round_trip() {
        let s = EventStream {
            width: 8,
            height: 6,
            events: vec![
                Event::new(1.0, 2.0, 0.0, 1),
                Event::new(3.25, 4.5, 0.1 + 0.2, -1),
                Event::new(7.0, 5.0, 1.0 / 3.0, 1),
            ],
        };
        let text = format_events(&s);
        let back = parse_events(&text, "mem").unwrap();
        assert_eq!(back, s);
        assert_eq!(format_events(&back), text);
    }

    #[test]
    fn mask_gt_imu_round_trip() {
        let m = RegionMask::new(3, 2, vec![0, 1, 1, 2, 2, 0]).unwrap();
        let masks = vec![(0.0, m.clone()), (0.05, m)];
        let text = format_masks(&masks).unwrap();
        assert_eq!(text, "msk1 3 2 2\nwin 0\n0 1 1\n2 2 0\nwin 0.05\n0 1 1\n2 2 0\n");
        assert_eq!(parse_masks(&text, "m").unwrap(), masks);

        let gt = vec![
            (0.0, BTreeMap::from([(1, 2.0), (2, 4.5)])),
            (0.05, BTreeMap::from([(1, 1.9)])),
        ];
        let text = format_gt_depths(&gt);
        assert_eq!(parse_gt_depths(&text, "g").unwrap(), gt);

        let imu = vec![
            ImuSample { t: 0.0, omega: AngularVelocity3::new(0.1, -0.2, 0.3) },
            ImuSample { t: 0.001, omega: AngularVelocity3::new(0.0, 0.0, 1e-9) },
        ];
        let text = format_imu(&imu);
        assert_eq!(parse_imu(&text, "i").unwrap(), imu);
    }

    #[test]
    fn mask_lookup_by_time() {
        let a = RegionMask::full(2, 2);
        let b = RegionMask::new(2, 2, vec![2; 4]).unwrap();
        let seq = vec![(0.0, a.clone()), (0.05, b.clone())];
        assert_eq!(mask_at(&seq, 0.0), Some(&a));
        assert_eq!(mask_at(&seq, 0.07), Some(&b));
        assert_eq!(mask_at(&seq, 0.05), Some(&b));
        assert_eq!(mask_at(&seq, -1.0), Some(&a));
    }

    #[test]
    fn honeycomb_small_radius_rejected() {
        assert!(honeycomb_mask(10, 10, 3.9).is_err());
    }

    #[test]
    fn honeycomb_is_complete_and_row_major() {
        let m = honeycomb_mask(100, 80, 10.0).unwrap();
        assert!(m.labels().iter().all(|&l| l > 0));
        let ids: Vec<u32> = m.region_ids().collect();
        assert_eq!(ids, (1..=ids.len() as u32).collect::<Vec<_>>());
        // First pixel sits on the first cell center.
        assert_eq!(m.label_at(0, 0), 1);
        assert_eq!(m, honeycomb_mask(100, 80, 10.0).unwrap());
    }

    #[test]
    fn hot_pixel_filter_basics() {
        assert!(filter_hot_pixels(&[], 4, 4, 10.0).is_empty());
        let quiet: Vec<Event> = (0..100)
            .map(|i| Event::new((i % 4) as f64, (i / 25) as f64, i as f64 * 0.01, 1))
            .collect();
        assert_eq!(filter_hot_pixels(&quiet, 4, 4, 10.0), quiet);
    }
}
