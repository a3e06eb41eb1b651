//! Tab-separated on-disk formats.
//!
//! Classification data is a directory with `features.tsv` (`index`, then
//! `x0..x{d-1}`), `labels.tsv` (`index`, `label`) and `meta.json`
//! (`classes`, `dim`).
//!
//! Session data is a directory with `labels.tsv` (`session user label
//! duration`), `alphanumeric.tsv` (`session step duration since_last dx dy`),
//! `special.tsv` (`session step` plus one 0/1 column per special key) and
//! `accelerometer.tsv` (`session step ax ay az`). Rows of a session appear in
//! step order. Floats are written in shortest round-trip form.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sessions::{MultiViewSession, SpecialKey, SPECIAL_DIM};
use super::LabeledVectorDataset;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct ClassificationMeta {
    classes: usize,
    dim: usize,
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::WriterBuilder::new().delimiter(b'\t').from_path(path)?)
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    Ok(csv::ReaderBuilder::new().delimiter(b'\t').from_path(path)?)
}

fn format_err(file: &str, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{file}: {msg}"))
}

pub fn write_classification(dir: &Path, data: &LabeledVectorDataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut f = writer(&dir.join("features.tsv"))?;
    let mut header = vec!["index".to_string()];
    header.extend((0..data.dim).map(|j| format!("x{j}")));
    f.write_record(&header)?;
    for (i, x) in data.features.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        f.write_record(&row)?;
    }
    f.flush()?;
    let mut l = writer(&dir.join("labels.tsv"))?;
    l.write_record(["index", "label"])?;
    for (i, y) in data.labels.iter().enumerate() {
        l.write_record([i.to_string(), y.to_string()])?;
    }
    l.flush()?;
    let meta = ClassificationMeta {
        classes: data.classes,
        dim: data.dim,
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn read_classification(dir: &Path) -> Result<LabeledVectorDataset> {
    let meta: ClassificationMeta =
        serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    let mut features = Vec::new();
    for (i, rec) in reader(&dir.join("features.tsv"))?.records().enumerate() {
        let rec = rec?;
        if rec.len() != meta.dim + 1 {
            return Err(format_err(
                "features.tsv",
                format!("row {i} has {} columns", rec.len()),
            ));
        }
        check_index("features.tsv", i, &rec[0])?;
        let x = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|e| format_err("features.tsv", e)))
            .collect::<Result<Vec<_>>>()?;
        features.push(x);
    }
    let mut labels = Vec::new();
    for (i, rec) in reader(&dir.join("labels.tsv"))?
        .deserialize::<(usize, usize)>()
        .enumerate()
    {
        let (idx, y) = rec?;
        if idx != i {
            return Err(format_err(
                "labels.tsv",
                format!("expected index {i}, found {idx}"),
            ));
        }
        if y >= meta.classes {
            return Err(format_err(
                "labels.tsv",
                format!("label {y} out of range for {} classes", meta.classes),
            ));
        }
        labels.push(y);
    }
    if labels.len() != features.len() {
        return Err(Error::Format(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    Ok(LabeledVectorDataset {
        features,
        labels,
        classes: meta.classes,
        dim: meta.dim,
    })
}

fn check_index(file: &str, expected: usize, field: &str) -> Result<()> {
    match field.parse::<usize>() {
        Ok(i) if i == expected => Ok(()),
        _ => Err(format_err(
            file,
            format!("expected index {expected}, found {field:?}"),
        )),
    }
}

#[derive(Serialize, Deserialize)]
struct SessionRow {
    session: usize,
    user: usize,
    label: usize,
    duration: f64,
}

#[derive(Serialize, Deserialize)]
struct AlphaRow {
    session: usize,
    step: usize,
    duration: f64,
    since_last: f64,
    dx: f64,
    dy: f64,
}

#[derive(Serialize, Deserialize)]
struct AccelRow {
    session: usize,
    step: usize,
    ax: f64,
    ay: f64,
    az: f64,
}

const SPECIAL_COLUMNS: [&str; SPECIAL_DIM] = [
    "auto_correct",
    "backspace",
    "space",
    "suggestion",
    "switching_keyboard",
    "other",
];

pub fn write_sessions(dir: &Path, sessions: &[MultiViewSession]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut labels = writer(&dir.join("labels.tsv"))?;
    let mut alpha = writer(&dir.join("alphanumeric.tsv"))?;
    let mut accel = writer(&dir.join("accelerometer.tsv"))?;
    let mut special = writer(&dir.join("special.tsv"))?;
    let mut header = vec!["session", "step"];
    header.extend(SPECIAL_COLUMNS);
    special.write_record(&header)?;

    for (id, s) in sessions.iter().enumerate() {
        labels.serialize(SessionRow {
            session: id,
            user: s.user,
            label: s.label,
            duration: s.duration,
        })?;
        for (step, r) in s.alphanumeric.iter().enumerate() {
            alpha.serialize(AlphaRow {
                session: id,
                step,
                duration: r[0],
                since_last: r[1],
                dx: r[2],
                dy: r[3],
            })?;
        }
        for (step, k) in s.special.iter().enumerate() {
            let mut row = vec![id.to_string(), step.to_string()];
            row.extend(k.one_hot().iter().map(|&v| (v as u8).to_string()));
            special.write_record(&row)?;
        }
        for (step, r) in s.accelerometer.iter().enumerate() {
            accel.serialize(AccelRow {
                session: id,
                step,
                ax: r[0],
                ay: r[1],
                az: r[2],
            })?;
        }
    }
    labels.flush()?;
    alpha.flush()?;
    accel.flush()?;
    special.flush()?;
    Ok(())
}

/// Appends `value` to session `session`'s view, checking that steps arrive in order.
fn push_step<V>(
    file: &str,
    views: &mut [Vec<V>],
    session: usize,
    step: usize,
    value: V,
) -> Result<()> {
    let view = views
        .get_mut(session)
        .ok_or_else(|| format_err(file, format!("unknown session {session}")))?;
    if step != view.len() {
        return Err(format_err(
            file,
            format!(
                "session {session}: expected step {}, found {step}",
                view.len()
            ),
        ));
    }
    view.push(value);
    Ok(())
}

pub fn read_sessions(dir: &Path) -> Result<Vec<MultiViewSession>> {
    let mut sessions = Vec::new();
    for (i, rec) in reader(&dir.join("labels.tsv"))?
        .deserialize::<SessionRow>()
        .enumerate()
    {
        let r = rec?;
        if r.session != i {
            return Err(format_err(
                "labels.tsv",
                format!("expected session {i}, found {}", r.session),
            ));
        }
        sessions.push(MultiViewSession {
            user: r.user,
            duration: r.duration,
            alphanumeric: Vec::new(),
            special: Vec::new(),
            accelerometer: Vec::new(),
            label: r.label,
        });
    }
    let n = sessions.len();

    let mut alpha = vec![Vec::new(); n];
    for rec in reader(&dir.join("alphanumeric.tsv"))?.deserialize::<AlphaRow>() {
        let r = rec?;
        push_step(
            "alphanumeric.tsv",
            &mut alpha,
            r.session,
            r.step,
            [r.duration, r.since_last, r.dx, r.dy],
        )?;
    }
    let mut accel = vec![Vec::new(); n];
    for rec in reader(&dir.join("accelerometer.tsv"))?.deserialize::<AccelRow>() {
        let r = rec?;
        push_step(
            "accelerometer.tsv",
            &mut accel,
            r.session,
            r.step,
            [r.ax, r.ay, r.az],
        )?;
    }
    let mut special = vec![Vec::new(); n];
    for rec in reader(&dir.join("special.tsv"))?.deserialize::<(usize, usize, [u8; SPECIAL_DIM])>()
    {
        let (session, step, hot) = rec?;
        let key = match hot.iter().filter(|&&v| v != 0).count() {
            1 if hot.iter().all(|&v| v <= 1) => {
                SpecialKey::from_index(hot.iter().position(|&v| v == 1).unwrap())
            }
            _ => None,
        }
        .ok_or_else(|| {
            format_err(
                "special.tsv",
                format!("session {session} step {step} is not one-hot"),
            )
        })?;
        push_step("special.tsv", &mut special, session, step, key)?;
    }

    for (((s, a), k), c) in sessions.iter_mut().zip(alpha).zip(special).zip(accel) {
        s.alphanumeric = a;
        s.special = k;
        s.accelerometer = c;
        s.validate()?;
    }
    Ok(sessions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{
        gen_classification, gen_multiview_sessions, ClassificationSpec, SessionSpec,
    };

    #[test]
    fn classification_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = gen_classification(
            1,
            &ClassificationSpec {
                n: 40,
                classes: 3,
                dim: 5,
                separation: 2.0,
            },
        )
        .unwrap();
        write_classification(dir.path(), &d).unwrap();
        assert_eq!(read_classification(dir.path()).unwrap(), d);
    }

    #[test]
    fn sessions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = gen_multiview_sessions(
            4,
            &SessionSpec {
                users: 2,
                sessions_per_user: 5,
                classes: 2,
                signal: 1.0,
            },
        )
        .unwrap();
        write_sessions(dir.path(), &s).unwrap();
        assert_eq!(read_sessions(dir.path()).unwrap(), s);
    }

    #[test]
    fn malformed_special_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = gen_multiview_sessions(
            4,
            &SessionSpec {
                users: 1,
                sessions_per_user: 1,
                classes: 2,
                signal: 1.0,
            },
        )
        .unwrap();
        write_sessions(dir.path(), &s).unwrap();
        let path = dir.path().join("special.tsv");
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[1] = "0\t0\t1\t1\t0\t0\t0\t0".into();
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        assert!(matches!(read_sessions(dir.path()), Err(Error::Format(_))));
    }
}
