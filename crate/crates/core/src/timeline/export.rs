//! Plot-ready timeline files: CSV rows sorted by start and an SVG Gantt
//! chart with one lane per instruction kind.

use std::fmt::Write as _;
use std::path::Path;

use super::{ps_to_us, TimelineError, TimelineEvent};
use crate::hwmodel::InstrKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimelineFormat {
    Csv,
    Svg,
}

impl TimelineFormat {
    /// Format named by the file extension.
    pub fn from_path(path: &Path) -> Result<Self, TimelineError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(Self::Csv),
            Some("svg") => Ok(Self::Svg),
            other => Err(TimelineError::Format(other.unwrap_or("").into())),
        }
    }
}

fn sorted(events: &[TimelineEvent]) -> Vec<&TimelineEvent> {
    let mut v: Vec<&TimelineEvent> = events.iter().collect();
    v.sort_by_key(|e| (e.start_ps, e.instr));
    v
}

pub fn events_csv(events: &[TimelineEvent]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(["layer", "group", "instruction", "lane", "start_us", "duration_us"]);
    for e in sorted(events) {
        let _ = w.write_record([
            e.layer.clone(),
            e.group.name().to_string(),
            e.instr.to_string(),
            e.lane.name().to_string(),
            format!("{:.6}", ps_to_us(e.start_ps)),
            format!("{:.6}", ps_to_us(e.duration_ps)),
        ]);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}

fn color(k: InstrKind) -> &'static str {
    match k {
        InstrKind::Load => "#4e79a7",
        InstrKind::LoadW => "#f28e2b",
        InstrKind::LoadFm => "#76b7b2",
        InstrKind::LoadWm => "#edc948",
        InstrKind::Comp => "#e15759",
        InstrKind::WriteFm => "#59a14f",
        InstrKind::Write => "#b07aa1",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn events_svg(events: &[TimelineEvent]) -> String {
    const LANE: f64 = 24.0;
    const LABEL: f64 = 80.0;
    const WIDTH: f64 = 1200.0;
    let end = events.iter().map(TimelineEvent::end_ps).max().unwrap_or(0).max(1);
    let scale = (WIDTH - LABEL - 10.0) / end as f64;
    let height = LANE * (InstrKind::ALL.len() as f64 + 1.0);
    let mut s = String::new();
    let _ =
        writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="monospace" font-size="11">"#);
    for (n, k) in InstrKind::ALL.iter().enumerate() {
        let y = LANE * n as f64;
        let _ = writeln!(s, r#"<text x="4" y="{:.1}">{}</text>"#, y + LANE * 0.65, k.name());
        let _ = writeln!(s, r##"<line x1="{LABEL}" y1="{:.1}" x2="{WIDTH}" y2="{:.1}" stroke="#ddd"/>"##, y + LANE, y + LANE);
    }
    for e in sorted(events) {
        let lane = InstrKind::ALL.iter().position(|k| *k == e.lane).unwrap_or(0);
        let x = LABEL + e.start_ps as f64 * scale;
        let w = (e.duration_ps as f64 * scale).max(0.5);
        let y = LANE * lane as f64 + 3.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{y:.1}" width="{w:.2}" height="{:.1}" fill="{}"><title>{} {} #{} {:.3}us</title></rect>"#,
            LANE - 6.0,
            color(e.lane),
            escape(&e.layer),
            e.group.name(),
            e.instr,
            ps_to_us(e.duration_ps)
        );
    }
    let _ = writeln!(s, r#"<text x="{LABEL}" y="{:.1}">0 .. {:.3} us</text>"#, height - 6.0, ps_to_us(end));
    s.push_str("</svg>\n");
    s
}

pub fn write_timeline(events: &[TimelineEvent], path: &Path) -> Result<(), TimelineError> {
    let text = match TimelineFormat::from_path(path)? {
        TimelineFormat::Csv => events_csv(events),
        TimelineFormat::Svg => events_svg(events),
    };
    std::fs::write(path, text).map_err(|source| TimelineError::Io { path: path.display().to_string(), source })
}
