//! Standalone SVG of an executed trace with non-smooth points circled.

use serde::{Deserialize, Serialize};

use crate::envs::{TaskInstance, WORKSPACE};
use crate::error::{FrmdError, Result};
use crate::metrics::SmoothnessReport;

/// Written next to each evaluated trace; the plot command reads it back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeArtifact {
    pub policy: String,
    pub task: TaskInstance,
    pub success: bool,
    pub smoothness: SmoothnessReport,
}

/// Reads `x, y` from a trace CSV with a `step,x,y,...` header.
pub fn parse_trace_csv(text: &str) -> Result<Vec<[f64; 2]>> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or("");
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let col = |name: &str| {
        cols.iter().position(|c| *c == name).ok_or_else(|| FrmdError::Parse {
            line: 1,
            reason: format!("header lacks a `{name}` column"),
        })
    };
    let (ix, iy) = (col("x")?, col("y")?);
    let mut points = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let get = |j: usize| -> Result<f64> {
            let raw = fields.get(j).map(|s| s.trim()).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| FrmdError::Parse {
                    line: i + 1,
                    reason: format!("expected a finite number, got `{raw}`"),
                })
        };
        points.push([get(ix)?, get(iy)?]);
    }
    Ok(points)
}

fn pt(p: [f64; 2]) -> String {
    format!("{:.5},{:.5}", p[0], -p[1])
}

fn square(p: [f64; 2], half: f64, fill: &str) -> String {
    format!(
        "<rect x=\"{:.5}\" y=\"{:.5}\" width=\"{w:.5}\" height=\"{w:.5}\" fill=\"{fill}\"/>\n",
        p[0] - half,
        -p[1] - half,
        w = 2.0 * half
    )
}

fn diamond(p: [f64; 2], r: f64, fill: &str) -> String {
    let (x, y) = (p[0], -p[1]);
    format!(
        "<polygon points=\"{:.5},{:.5} {:.5},{:.5} {:.5},{:.5} {:.5},{:.5}\" fill=\"{fill}\"/>\n",
        x, y - r, x + r, y, x, y + r, x - r, y
    )
}

/// SVG in workspace coordinates (y up). Start is a square, goal a diamond,
/// vias hollow squares; every flagged index gets exactly one `<circle>`.
pub fn render_svg(trace: &[[f64; 2]], task: Option<&TaskInstance>, nonsmooth: &[usize]) -> Result<String> {
    if let Some(&bad) = nonsmooth.iter().find(|&&i| i >= trace.len()) {
        return Err(FrmdError::Validation(format!(
            "non-smooth index {bad} is outside a trace of {} points",
            trace.len()
        )));
    }
    let m = WORKSPACE + 0.1;
    let mut s = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{:.2} {:.2} {:.2} {:.2}\" width=\"600\" height=\"600\">\n",
        -m,
        -m,
        2.0 * m,
        2.0 * m
    );
    s.push_str(&format!(
        "<rect x=\"{w:.2}\" y=\"{w:.2}\" width=\"{d:.2}\" height=\"{d:.2}\" fill=\"white\" stroke=\"#bbbbbb\" stroke-width=\"0.005\"/>\n",
        w = -WORKSPACE,
        d = 2.0 * WORKSPACE
    ));
    if let Some(task) = task {
        for v in &task.vias {
            s.push_str(&format!(
                "<rect x=\"{:.5}\" y=\"{:.5}\" width=\"{w:.5}\" height=\"{w:.5}\" fill=\"none\" stroke=\"#7a4fb0\" stroke-width=\"0.008\"/>\n",
                v[0] - task.via_radius,
                -v[1] - task.via_radius,
                w = 2.0 * task.via_radius
            ));
        }
        s.push_str(&square(task.start, 0.025, "#2b6cb0"));
        s.push_str(&diamond(task.goal, 0.04, "#c53030"));
    }
    if !trace.is_empty() {
        let points: Vec<String> = trace.iter().map(|&p| pt(p)).collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#1a202c\" stroke-width=\"0.006\"/>\n",
            points.join(" ")
        ));
    }
    for &i in nonsmooth {
        let p = trace[i];
        s.push_str(&format!(
            "<circle cx=\"{:.5}\" cy=\"{:.5}\" r=\"0.03\" fill=\"none\" stroke=\"#2f855a\" stroke-width=\"0.006\"/>\n",
            p[0], -p[1]
        ));
    }
    s.push_str("</svg>\n");
    Ok(s)
}
