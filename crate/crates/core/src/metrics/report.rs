use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric keys in column order, with their table headers.
pub const METRIC_COLUMNS: [(&str, &str); 6] = [
    ("dice", "DC"),
    ("iou", "IoU"),
    ("precision", "Precision"),
    ("recall", "Recall"),
    ("bf", "BF"),
    ("assd", "ASSD"),
];

/// Columns of the basic table; the remainder appear only in extended output.
const BASE_COLUMNS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegRecord {
    pub patient_id: String,
    pub image_id: String,
    pub model: String,
    pub strata: BTreeMap<String, String>,
    /// Missing entries (e.g. an undefined ASSD) are skipped when averaging.
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Overall,
    SkinTone,
    Gender,
    AgeGroup,
    Site,
}

impl GroupKey {
    pub const ALL: [GroupKey; 5] = [
        GroupKey::Overall,
        GroupKey::SkinTone,
        GroupKey::Gender,
        GroupKey::AgeGroup,
        GroupKey::Site,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupKey::Overall => "overall",
            GroupKey::SkinTone => "skin_tone",
            GroupKey::Gender => "gender",
            GroupKey::AgeGroup => "age_group",
            GroupKey::Site => "site",
        }
    }

    fn title(self) -> &'static str {
        match self {
            GroupKey::Overall => "Overall",
            GroupKey::SkinTone => "Skin Color",
            GroupKey::Gender => "Gender",
            GroupKey::AgeGroup => "Age Group",
            GroupKey::Site => "Anatomical Region",
        }
    }
}

impl FromStr for GroupKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GroupKey::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownGroup {
                key: s.to_string(),
                valid: GroupKey::ALL.map(|k| k.as_str()).join(", "),
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub group: String,
    pub model: String,
    pub count: usize,
    /// Per-column mean, aligned with [`METRIC_COLUMNS`].
    pub means: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub key: GroupKey,
    pub rows: Vec<ReportRow>,
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

impl ReportTable {
    fn header(extended: bool) -> Vec<&'static str> {
        let mut h = vec!["Group", "Model"];
        if extended {
            h.push("N");
        }
        let n = if extended { METRIC_COLUMNS.len() } else { BASE_COLUMNS };
        h.extend(METRIC_COLUMNS[..n].iter().map(|c| c.1));
        h
    }

    fn cells(row: &ReportRow, extended: bool) -> Vec<String> {
        let mut c = vec![row.group.clone(), row.model.clone()];
        if extended {
            c.push(row.count.to_string());
        }
        let n = if extended { METRIC_COLUMNS.len() } else { BASE_COLUMNS };
        c.extend(row.means[..n].iter().map(|&v| fmt_value(v)));
        c
    }

    /// Comma-separated table; `extended` adds the count, BF and ASSD columns.
    pub fn to_csv(&self, extended: bool) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::header(extended))?;
        for row in &self.rows {
            w.write_record(Self::cells(row, extended))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Pipe-delimited text table.
    pub fn to_markdown(&self, extended: bool) -> String {
        let header = Self::header(extended);
        let mut out = String::new();
        let _ = writeln!(out, "| {} |", header.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
        for row in &self.rows {
            let _ = writeln!(out, "| {} |", Self::cells(row, extended).join(" | "));
        }
        out
    }
}

/// Per-group, per-model means of every metric. Records with an empty label for
/// the key are dropped with a warning.
pub fn stratified_report(records: &[SegRecord], key: GroupKey) -> Result<ReportTable> {
    let mut groups: BTreeMap<String, Vec<&SegRecord>> = BTreeMap::new();
    for r in records {
        let label = if key == GroupKey::Overall {
            "all".to_string()
        } else {
            match r.strata.get(key.as_str()) {
                Some(l) => l.clone(),
                None => {
                    return Err(Error::Param(format!(
                        "record {}/{} has no `{}` label",
                        r.patient_id,
                        r.image_id,
                        key.as_str()
                    )))
                }
            }
        };
        if label.trim().is_empty() {
            log::warn!("record {}/{} has an empty `{}` label; skipped", r.patient_id, r.image_id, key.as_str());
            continue;
        }
        groups.entry(label).or_default().push(r);
    }
    let mut rows = Vec::new();
    for (label, members) in groups {
        let mut models: Vec<&str> = Vec::new();
        for r in &members {
            if !models.contains(&r.model.as_str()) {
                models.push(&r.model);
            }
        }
        let group = if key == GroupKey::Overall {
            key.title().to_string()
        } else {
            format!("{}: {}", key.title(), label)
        };
        for model in models {
            let rs: Vec<&&SegRecord> = members.iter().filter(|r| r.model == model).collect();
            let means = METRIC_COLUMNS
                .iter()
                .map(|(name, _)| {
                    let vals: Vec<f64> = rs.iter().filter_map(|r| r.metrics.get(*name).copied()).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect();
            rows.push(ReportRow {
                group: group.clone(),
                model: model.to_string(),
                count: rs.len(),
                means,
            });
        }
    }
    Ok(ReportTable { key, rows })
}
