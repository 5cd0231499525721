//! Tables over evaluation and calibration reports.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::calibrate::CalibrationResult;
use crate::metrics::AggregateReport;
use crate::samplers::Method;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("invalid report JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unrecognised report document: expected an evaluation report, a calibration result, or an array of them")]
    UnknownShape,
    #[error("no rows to render")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Markdown,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            other => Err(format!(
                "unknown format {other:?} (expected markdown or csv)"
            )),
        }
    }
}

/// One table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ReportRow<T> {
    pub method: Method,
    pub param: T,
    pub avg_risk: T,
    #[serde(rename = "RSE")]
    pub rse: T,
    #[serde(rename = "AR")]
    pub ar: T,
}

impl<T: Scalar> From<&AggregateReport<T>> for ReportRow<T> {
    fn from(r: &AggregateReport<T>) -> Self {
        Self {
            method: r.method,
            param: r.theta,
            avg_risk: r.average_risk,
            rse: r.rse,
            ar: r.average_recall,
        }
    }
}

impl<T: Scalar> From<&CalibrationResult<T>> for ReportRow<T> {
    fn from(c: &CalibrationResult<T>) -> Self {
        (&c.report).into()
    }
}

fn rows_from_value<T: Scalar>(
    value: Value,
    out: &mut Vec<ReportRow<T>>,
) -> Result<(), ReportError> {
    match value {
        Value::Array(items) => {
            for item in items {
                rows_from_value(item, out)?;
            }
            Ok(())
        }
        Value::Object(ref map) if map.contains_key("report") && map.contains_key("target_risk") => {
            let c: CalibrationResult<T> = serde_json::from_value(value)?;
            out.push((&c).into());
            Ok(())
        }
        Value::Object(ref map) if map.contains_key("per_node") => {
            let r: AggregateReport<T> = serde_json::from_value(value)?;
            out.push((&r).into());
            Ok(())
        }
        _ => Err(ReportError::UnknownShape),
    }
}

/// Rows from a report document: an evaluation report, a calibration result,
/// or an array mixing both.
pub fn parse_rows<T: Scalar>(text: &str) -> Result<Vec<ReportRow<T>>, ReportError> {
    let mut rows = Vec::new();
    rows_from_value(serde_json::from_str(text)?, &mut rows)?;
    Ok(rows)
}

/// Method name order, then parameter.
pub fn sort_rows<T: Scalar>(rows: &mut [ReportRow<T>]) {
    rows.sort_by(|a, b| {
        a.method.name().cmp(b.method.name()).then(
            a.param
                .partial_cmp(&b.param)
                .unwrap_or(std::cmp::Ordering::Equal),
        )
    });
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mark {
    None,
    Best,
    Worst,
}

fn marks<T: Scalar>(values: &[T], lower_is_better: bool) -> Vec<Mark> {
    if values.len() < 2 {
        return vec![Mark::None; values.len()];
    }
    let min = values.iter().copied().fold(T::infinity(), T::min);
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    if min == max {
        return vec![Mark::None; values.len()];
    }
    let (best, worst) = if lower_is_better {
        (min, max)
    } else {
        (max, min)
    };
    values
        .iter()
        .map(|&v| {
            if v == best {
                Mark::Best
            } else if v == worst {
                Mark::Worst
            } else {
                Mark::None
            }
        })
        .collect()
}

/// Integers as-is, small values in scientific notation, others to four
/// decimals without trailing zeros.
fn format_param<T: Scalar>(param: T) -> String {
    let v = param.to_f64().unwrap_or(f64::NAN);
    if v.fract() == 0.0 {
        format!("{v}")
    } else if v.abs() < 1e-3 {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn decorate(text: String, mark: Mark) -> String {
    match mark {
        Mark::None => text,
        Mark::Best => format!("**{text}**"),
        Mark::Worst => format!("<u>{text}</u>"),
    }
}

/// Markdown table; with two or more rows the best RSE (lowest) and AR
/// (highest) are bold and the worst underlined.
pub fn render_markdown<T: Scalar>(rows: &[ReportRow<T>]) -> String {
    let rse = marks(&rows.iter().map(|r| r.rse).collect::<Vec<_>>(), true);
    let ar = marks(&rows.iter().map(|r| r.ar).collect::<Vec<_>>(), false);
    let mut out =
        String::from("| method | param | avg_risk | RSE | AR |\n|---|---:|---:|---:|---:|\n");
    for (i, r) in rows.iter().enumerate() {
        out.push_str(&format!(
            "| {} | {} | {:.4} | {} | {} |\n",
            r.method,
            format_param(r.param),
            r.avg_risk,
            decorate(format!("{:.4}", r.rse), rse[i]),
            decorate(format!("{:.4}", r.ar), ar[i]),
        ));
    }
    out
}

pub fn write_csv<T: Scalar, W: Write>(out: W, rows: &[ReportRow<T>]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: Scalar, R: Read>(input: R) -> Result<Vec<ReportRow<T>>, ReportError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(ReportError::from))
        .collect()
}

pub fn render<T: Scalar>(rows: &[ReportRow<T>], format: Format) -> Result<String, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    match format {
        Format::Markdown => Ok(render_markdown(rows)),
        Format::Csv => {
            let mut buf = Vec::new();
            write_csv(&mut buf, rows)?;
            Ok(String::from_utf8(buf).expect("csv writer emits UTF-8"))
        }
    }
}
