//! CSV dataset schema:
//!
//! `cell_id,cycle_index,time_s,current_a,voltage_v[,soc,theta_q,theta_r]`
//!
//! One row per sample, rows grouped by (cell_id, cycle_index) and sorted by
//! time within a cycle. The three ground-truth columns are optional but come
//! together.

use std::collections::HashSet;
use std::path::Path;

use super::{CycleSeries, Dataset, GroundTruth, Provenance, NOMINAL_DT_S};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 5] = ["cell_id", "cycle_index", "time_s", "current_a", "voltage_v"];
pub const CSV_TRUTH_HEADER: [&str; 3] = ["soc", "theta_q", "theta_r"];

struct Columns {
    base: [usize; 5],
    truth: Option<[usize; 3]>,
}

fn locate(headers: &csv::StringRecord, path: &Path) -> Result<Columns> {
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut base = [0; 5];
    for (slot, name) in base.iter_mut().zip(CSV_HEADER) {
        *slot = find(name).ok_or_else(|| {
            Error::Data(format!(
                "{}: missing required column `{name}`",
                path.display()
            ))
        })?;
    }
    let truth: Vec<Option<usize>> = CSV_TRUTH_HEADER.iter().map(|n| find(n)).collect();
    let truth = match truth.as_slice() {
        [Some(a), Some(b), Some(c)] => Some([*a, *b, *c]),
        [None, None, None] => None,
        _ => {
            return Err(Error::Data(format!(
                "{}: ground-truth columns soc, theta_q, theta_r must appear together",
                path.display()
            )))
        }
    };
    Ok(Columns { base, truth })
}

struct Builder {
    cycle: CycleSeries,
    soc: Vec<f64>,
    theta: Option<(f64, f64)>,
}

impl Builder {
    fn finish(self) -> CycleSeries {
        let mut cycle = self.cycle;
        if let Some((theta_q, theta_r)) = self.theta {
            cycle.truth = Some(GroundTruth {
                soc: self.soc,
                theta_q,
                theta_r,
            });
        }
        let spacing = cycle.time_s.windows(2).map(|w| w[1] - w[0]);
        if let Some(dt) = spacing
            .into_iter()
            .find(|dt| (dt - NOMINAL_DT_S).abs() > 0.1 * NOMINAL_DT_S)
        {
            log::warn!(
                "cycle {} of `{}`: sample spacing {dt} s deviates from the nominal {NOMINAL_DT_S} s",
                cycle.cycle_index,
                cycle.cell_id
            );
        }
        cycle
    }
}

/// Reads a dataset. Errors name the offending line (1-based, header = 1).
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let cols = locate(&headers, path)?;

    let mut cycles = Vec::new();
    let mut seen: HashSet<(String, usize)> = HashSet::new();
    let mut current: Option<Builder> = None;
    let mut record = csv::StringRecord::new();
    let mut line = 1usize;
    while reader
        .read_record(&mut record)
        .map_err(|e| Error::csv(path, e))?
    {
        line += 1;
        let field = |i: usize, name: &str| -> Result<&str> {
            record.get(i).map(str::trim).ok_or_else(|| {
                Error::Data(format!(
                    "{} line {line}: missing field `{name}`",
                    path.display()
                ))
            })
        };
        let number = |i: usize, name: &str| -> Result<f64> {
            let raw = field(i, name)?;
            let v: f64 = raw.parse().map_err(|_| {
                Error::Data(format!(
                    "{} line {line}: `{name}` is not a number: `{raw}`",
                    path.display()
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "{} line {line}: `{name}` is not finite",
                    path.display()
                )));
            }
            Ok(v)
        };

        let cell = field(cols.base[0], "cell_id")?;
        let raw_index = field(cols.base[1], "cycle_index")?;
        let cycle_index: usize = raw_index.parse().map_err(|_| {
            Error::Data(format!(
                "{} line {line}: `cycle_index` is not a non-negative integer: `{raw_index}`",
                path.display()
            ))
        })?;
        let t = number(cols.base[2], "time_s")?;
        let i = number(cols.base[3], "current_a")?;
        let v = number(cols.base[4], "voltage_v")?;
        let truth = match cols.truth {
            Some([s, q, r]) => Some((
                number(s, "soc")?,
                number(q, "theta_q")?,
                number(r, "theta_r")?,
            )),
            None => None,
        };

        let same = current
            .as_ref()
            .is_some_and(|b| b.cycle.cell_id == cell && b.cycle.cycle_index == cycle_index);
        if !same {
            if let Some(b) = current.take() {
                cycles.push(b.finish());
            }
            if !seen.insert((cell.to_owned(), cycle_index)) {
                return Err(Error::Data(format!(
                    "{} line {line}: rows of cycle {cycle_index} of `{cell}` are not contiguous",
                    path.display()
                )));
            }
            current = Some(Builder {
                cycle: CycleSeries {
                    cell_id: cell.to_owned(),
                    cycle_index,
                    time_s: Vec::new(),
                    current_a: Vec::new(),
                    voltage_v: Vec::new(),
                    truth: None,
                    truncated: false,
                },
                soc: Vec::new(),
                theta: truth.map(|(_, q, r)| (q, r)),
            });
        }
        let b = current.as_mut().expect("builder exists");
        if let Some(&prev) = b.cycle.time_s.last() {
            if t <= prev {
                return Err(Error::Data(format!(
                    "{} line {line}: time {t} s does not increase within cycle {cycle_index} of `{cell}` (previous {prev} s)",
                    path.display()
                )));
            }
        }
        if let Some((s, q, r)) = truth {
            if b.theta != Some((q, r)) {
                return Err(Error::Data(format!(
                    "{} line {line}: theta_q/theta_r change within cycle {cycle_index} of `{cell}`",
                    path.display()
                )));
            }
            b.soc.push(s);
        }
        b.cycle.time_s.push(t);
        b.cycle.current_a.push(i);
        b.cycle.voltage_v.push(v);
    }
    if let Some(b) = current.take() {
        cycles.push(b.finish());
    }
    if cycles.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    Dataset::new(cycles, Provenance::Csv)
}

/// Writes a raw (unnormalized) dataset, with ground-truth columns when every
/// cycle carries them. Floats are written in shortest round-trip form.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if dataset.is_normalized() {
        return Err(Error::Data("refusing to write a normalized dataset".into()));
    }
    let with_truth = !dataset.cycles.is_empty() && dataset.cycles.iter().all(|c| c.truth.is_some());
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header: Vec<&str> = CSV_HEADER.to_vec();
    if with_truth {
        header.extend(CSV_TRUTH_HEADER);
    }
    writer
        .write_record(&header)
        .map_err(|e| Error::csv(path, e))?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for c in &dataset.cycles {
        for k in 0..c.len() {
            row.clear();
            row.push(c.cell_id.clone());
            row.push(c.cycle_index.to_string());
            row.push(c.time_s[k].to_string());
            row.push(c.current_a[k].to_string());
            row.push(c.voltage_v[k].to_string());
            if let (true, Some(t)) = (with_truth, &c.truth) {
                row.push(t.soc[k].to_string());
                row.push(t.theta_q.to_string());
                row.push(t.theta_r.to_string());
            }
            writer.write_record(&row).map_err(|e| Error::csv(path, e))?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
