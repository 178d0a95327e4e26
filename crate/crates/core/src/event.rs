//! Event and slice types, text ingestion/serialization, time-window slicing.
//!
//! The interchange format is one event per line, `t x y p`, whitespace
//! separated, with `#` comment lines. Timestamps are seconds (decimal),
//! coordinates are pixels, polarity is one of {0, 1, -1, +1} and is
//! normalized to {-1, +1} on load ({0,1} maps to {-1,+1}).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One brightness-change sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    /// Pixel column.
    pub x: f64,
    /// Pixel row.
    pub y: f64,
    /// Timestamp in seconds.
    pub t: f64,
    /// Polarity, +1 or -1 after normalization.
    pub p: i8,
}

/// Sensor size and pinhole intrinsics (pixels). Inputs are assumed rectified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorGeometry {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl SensorGeometry {
    pub fn new(width: u32, height: u32, fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Geometry(format!(
                "sensor size must be positive, got {width}x{height}"
            )));
        }
        if !(fx > 0.0) || !(fy > 0.0) {
            return Err(Error::Geometry(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        Ok(SensorGeometry {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
        })
    }

    /// Geometry without meaningful intrinsics, for purely translational use.
    pub fn with_size(width: u32, height: u32) -> Self {
        SensorGeometry {
            width,
            height,
            fx: 1.0,
            fy: 1.0,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && x < self.width as f64 && y >= 0.0 && y < self.height as f64
    }
}

/// Time-ordered batch of events plus sensor geometry; the unit of processing.
///
/// Values are immutable after construction; all operations on slices are
/// pure functions.
#[derive(Debug, Clone)]
pub struct EventSlice {
    events: Vec<Event>,
    geometry: SensorGeometry,
    t_ref: f64,
}

impl EventSlice {
    /// Build a slice from pre-validated events. Timestamps must be
    /// non-decreasing; `t_ref` defaults to the first event's time.
    pub fn new(events: Vec<Event>, geometry: SensorGeometry) -> Result<Self> {
        for w in events.windows(2) {
            if w[1].t < w[0].t {
                return Err(Error::Order {
                    line: 0,
                    t: w[1].t,
                    prev: w[0].t,
                });
            }
        }
        let t_ref = events.first().map_or(0.0, |e| e.t);
        Ok(EventSlice {
            events,
            geometry,
            t_ref,
        })
    }

    /// As `new`, with an explicit reference time. A window's start may
    /// precede its first event, so the only requirement is that t_ref is
    /// finite and not after the last event.
    pub fn with_t_ref(events: Vec<Event>, geometry: SensorGeometry, t_ref: f64) -> Result<Self> {
        let mut slice = Self::new(events, geometry)?;
        if !t_ref.is_finite() {
            return Err(Error::Spec(format!("t_ref must be finite, got {t_ref}")));
        }
        if let Some(last) = slice.events.last() {
            if t_ref > last.t {
                return Err(Error::Spec(format!(
                    "t_ref {} is after the last event at {}",
                    t_ref, last.t
                )));
            }
        }
        slice.t_ref = t_ref;
        Ok(slice)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn geometry(&self) -> &SensorGeometry {
        &self.geometry
    }

    pub fn t_ref(&self) -> f64 {
        self.t_ref
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Sub-slice containing the given events, sharing geometry and t_ref.
    /// Indices must be sorted if the caller relies on event order.
    pub fn subset(&self, indices: &[usize]) -> EventSlice {
        let events = indices.iter().map(|&i| self.events[i]).collect();
        EventSlice {
            events,
            geometry: self.geometry,
            t_ref: self.t_ref,
        }
    }
}

fn normalize_polarity(raw: i64) -> Option<i8> {
    match raw {
        0 | -1 => Some(-1),
        1 => Some(1),
        _ => None,
    }
}

/// Load events from a `t x y p` text file. Rejects out-of-bounds
/// coordinates and decreasing timestamps.
pub fn load_events(path: &Path, geometry: SensorGeometry) -> Result<EventSlice> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut prev_t: Option<f64> = None;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let mut next_field = |name: &str| {
            fields.next().ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("missing field `{name}`"),
            })
        };
        let t: f64 = next_field("t")?.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: "bad timestamp".into(),
        })?;
        let x: f64 = next_field("x")?.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: "bad x coordinate".into(),
        })?;
        let y: f64 = next_field("y")?.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: "bad y coordinate".into(),
        })?;
        let p_raw: i64 = next_field("p")?.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: "bad polarity".into(),
        })?;
        if fields.next().is_some() {
            return Err(Error::Parse {
                line: line_no,
                msg: "trailing fields".into(),
            });
        }
        let p = normalize_polarity(p_raw).ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("polarity must be 0, 1, -1 or +1, got {p_raw}"),
        })?;
        if !geometry.contains(x, y) {
            return Err(Error::Bounds {
                line: line_no,
                x,
                y,
                width: geometry.width,
                height: geometry.height,
            });
        }
        if let Some(prev) = prev_t {
            if t < prev {
                return Err(Error::Order {
                    line: line_no,
                    t,
                    prev,
                });
            }
        }
        prev_t = Some(t);
        events.push(Event { x, y, t, p });
    }

    EventSlice::new(events, geometry)
}

/// Write events as `%.6f %d %d %d` lines. Coordinates are rounded to the
/// nearest integer; round-trips are bit-exact for integer coordinates and
/// microsecond-resolution timestamps.
pub fn save_events<W: Write>(writer: &mut W, slice: &EventSlice) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for e in slice.events() {
        writeln!(
            w,
            "{:.6} {} {} {}",
            e.t,
            e.x.round() as i64,
            e.y.round() as i64,
            e.p
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_events_to_path(path: &Path, slice: &EventSlice) -> Result<()> {
    let mut file = File::create(path)?;
    save_events(&mut file, slice)
}

/// Split a slice into consecutive half-open windows `[t0 + k*w, t0 + (k+1)*w)`
/// of the given duration, `t0` being the first event's time. Each sub-slice's
/// t_ref is its window start; empty windows are omitted.
pub fn slice_by_duration(slice: &EventSlice, window: f64) -> Result<Vec<EventSlice>> {
    if !(window > 0.0) {
        return Err(Error::Spec(format!("window must be positive, got {window}")));
    }
    let events = slice.events();
    if events.is_empty() {
        return Ok(Vec::new());
    }
    let t0 = events[0].t;
    let mut out: Vec<EventSlice> = Vec::new();
    let mut current: Vec<Event> = Vec::new();
    let mut current_k: u64 = 0;
    for &e in events {
        let k = ((e.t - t0) / window).floor().max(0.0) as u64;
        if k != current_k && !current.is_empty() {
            let start = t0 + current_k as f64 * window;
            out.push(EventSlice {
                events: std::mem::take(&mut current),
                geometry: *slice.geometry(),
                t_ref: start,
            });
        }
        current_k = k;
        current.push(e);
    }
    if !current.is_empty() {
        let start = t0 + current_k as f64 * window;
        out.push(EventSlice {
            events: current,
            geometry: *slice.geometry(),
            t_ref: start,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> SensorGeometry {
        SensorGeometry::with_size(100, 80)
    }

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_basic_line() {
        let f = write_temp("0.010000 12 34 1\n");
        let slice = load_events(f.path(), geom()).unwrap();
        assert_eq!(slice.len(), 1);
        let e = slice.events()[0];
        assert_eq!(e.t, 0.01);
        assert_eq!(e.x, 12.0);
        assert_eq!(e.y, 34.0);
        assert_eq!(e.p, 1);
    }

    #[test]
    fn zero_polarity_maps_to_negative() {
        let f = write_temp("0.010000 12 34 0\n");
        let slice = load_events(f.path(), geom()).unwrap();
        assert_eq!(slice.events()[0].p, -1);
    }

    #[test]
    fn rejects_decreasing_timestamps() {
        let f = write_temp("0.020000 1 1 1\n0.010000 2 2 1\n");
        match load_events(f.path(), geom()) {
            Err(Error::Order { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected OrderError, got {other:?}"),
        }
    }

    #[test]
    fn rejects_out_of_bounds() {
        let f = write_temp("0.010000 100 34 1\n"); // x == width
        assert!(matches!(
            load_events(f.path(), geom()),
            Err(Error::Bounds { line: 1, .. })
        ));
    }

    #[test]
    fn rejects_malformed_line() {
        let f = write_temp("0.010000 12 nope 1\n");
        assert!(matches!(
            load_events(f.path(), geom()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn skips_comments_and_blank_lines() {
        let f = write_temp("# header\n\n0.010000 12 34 1\n");
        assert_eq!(load_events(f.path(), geom()).unwrap().len(), 1);
    }

    #[test]
    fn rejects_unknown_polarity() {
        let f = write_temp("0.010000 12 34 7\n");
        assert!(matches!(
            load_events(f.path(), geom()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let text = "0.010000 12 34 1\n0.020000 99 79 -1\n0.020001 0 0 1\n";
        let f = write_temp(text);
        let slice = load_events(f.path(), geom()).unwrap();
        let mut buf = Vec::new();
        save_events(&mut buf, &slice).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn slices_30ms_into_three_10ms_windows() {
        let events: Vec<Event> = (0..30)
            .map(|i| Event {
                x: 1.0,
                y: 1.0,
                t: i as f64 * 0.001,
                p: 1,
            })
            .collect();
        let slice = EventSlice::new(events, geom()).unwrap();
        let subs = slice_by_duration(&slice, 0.010).unwrap();
        assert_eq!(subs.len(), 3);
        assert_eq!(subs[0].len(), 10);
        assert_eq!(subs[1].t_ref(), 0.010);
    }

    #[test]
    fn single_window_covers_all() {
        let events: Vec<Event> = (0..50)
            .map(|i| Event {
                x: 1.0,
                y: 1.0,
                t: i as f64 * 0.001,
                p: 1,
            })
            .collect();
        let slice = EventSlice::new(events, geom()).unwrap();
        let subs = slice_by_duration(&slice, 0.050).unwrap();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].len(), 50);
    }

    #[test]
    fn empty_input_gives_empty_sequence() {
        let slice = EventSlice::new(Vec::new(), geom()).unwrap();
        assert!(slice_by_duration(&slice, 0.010).unwrap().is_empty());
    }

    #[test]
    fn slicing_partitions_events() {
        // Irregular timestamps, including one exactly on a window boundary.
        let ts = [0.0, 0.0031, 0.0099, 0.01, 0.0150, 0.0299, 0.031];
        let events: Vec<Event> = ts
            .iter()
            .map(|&t| Event {
                x: 2.0,
                y: 3.0,
                t,
                p: 1,
            })
            .collect();
        let slice = EventSlice::new(events.clone(), geom()).unwrap();
        let subs = slice_by_duration(&slice, 0.010).unwrap();
        let total: usize = subs.iter().map(|s| s.len()).sum();
        assert_eq!(total, events.len());
        // Boundary event 0.01 belongs to the second window (half-open).
        assert_eq!(subs[0].len(), 3);
        assert_eq!(subs[1].events()[0].t, 0.01);
    }
}
