//! JSON-lines demonstration files.
//!
//! One demonstration object per line, followed by a summary line
//! `{"count":..,"obs_dim":..,"action_dim":..}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envs::{Demonstration, ACTION_DIM, OBS_DIM};
use crate::error::{FrmdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub count: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
}

pub fn to_jsonl(demos: &[Demonstration]) -> Result<String> {
    let mut out = String::new();
    for d in demos {
        let line = serde_json::to_string(d).map_err(|e| FrmdError::Validation(e.to_string()))?;
        out.push_str(&line);
        out.push('\n');
    }
    let summary = Summary { count: demos.len(), obs_dim: OBS_DIM, action_dim: ACTION_DIM };
    out.push_str(&serde_json::to_string(&summary).expect("plain struct"));
    out.push('\n');
    Ok(out)
}

fn check(d: &Demonstration, record: usize) -> Result<()> {
    let bad = |reason: String| Err(FrmdError::Validation(format!("dataset record {record}: {reason}")));
    if d.obs.len() != d.actions.len() {
        return bad(format!("{} observations but {} actions", d.obs.len(), d.actions.len()));
    }
    if let Some(o) = d.obs.iter().find(|o| o.len() != OBS_DIM) {
        return bad(format!("observation of length {}, expected {OBS_DIM}", o.len()));
    }
    let finite = d.obs.iter().flatten().chain(d.actions.iter().flatten()).all(|v| v.is_finite());
    if !finite {
        return bad("non-finite value".into());
    }
    Ok(())
}

pub fn from_jsonl(text: &str) -> Result<Vec<Demonstration>> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let (last, records) = lines
        .split_last()
        .ok_or_else(|| FrmdError::Validation("dataset is empty".into()))?;
    let summary: Summary = serde_json::from_str(last)
        .map_err(|e| FrmdError::Validation(format!("dataset summary line: {e}")))?;
    if summary.obs_dim != OBS_DIM || summary.action_dim != ACTION_DIM {
        return Err(FrmdError::Validation(format!(
            "dataset dims obs {} / action {} do not match {OBS_DIM} / {ACTION_DIM}",
            summary.obs_dim, summary.action_dim
        )));
    }
    if summary.count != records.len() {
        return Err(FrmdError::Validation(format!(
            "summary announces {} records, file has {}",
            summary.count,
            records.len()
        )));
    }
    records
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let d: Demonstration = serde_json::from_str(line)
                .map_err(|e| FrmdError::Validation(format!("dataset record {}: {e}", i + 1)))?;
            check(&d, i + 1)?;
            Ok(d)
        })
        .collect()
}

pub fn read(path: &Path) -> Result<Vec<Demonstration>> {
    let text = std::fs::read_to_string(path).map_err(|e| FrmdError::io(path, e))?;
    from_jsonl(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{expert_demo, make_task, EnvConfig, TaskKind};

    fn demos(n: u64) -> Vec<Demonstration> {
        let env = EnvConfig::default();
        (0..n)
            .map(|s| expert_demo(&make_task(TaskKind::ViaPoint, s, &env), s, &env))
            .collect()
    }

    #[test]
    fn round_trip_and_summary() {
        let d = demos(3);
        let text = to_jsonl(&d).unwrap();
        assert_eq!(text.lines().count(), 4);
        let summary: Summary = serde_json::from_str(text.lines().last().unwrap()).unwrap();
        assert_eq!(summary, Summary { count: 3, obs_dim: OBS_DIM, action_dim: ACTION_DIM });
        assert_eq!(from_jsonl(&text).unwrap(), d);
        assert_eq!(to_jsonl(&d).unwrap(), text);
    }

    #[test]
    fn corrupt_records_are_named() {
        let text = to_jsonl(&demos(2)).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[1] = lines[1].replacen("\"obs\":[[", "\"obs\":[[\"x\",", 1);
        let err = from_jsonl(&lines.join("\n")).unwrap_err();
        assert!(err.to_string().contains("record 2"), "{err}");

        let truncated: Vec<&str> = text.lines().skip(1).collect();
        assert!(from_jsonl(&truncated.join("\n")).is_err());
        assert!(from_jsonl("").is_err());
    }
}
