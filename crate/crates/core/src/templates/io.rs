use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Alphabet, Dataset, Label, SampleLabel, SubstitutionDist, Template, TemplateTask};
use crate::error::{Error, Result};

/// JSON document form of a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDoc {
    pub k: usize,
    pub vocab_size: usize,
    pub templates: Vec<Template>,
    pub weights: Vec<f64>,
    pub sigma: f64,
}

impl From<&TemplateTask> for TaskDoc {
    fn from(t: &TemplateTask) -> Self {
        TaskDoc {
            k: t.k(),
            vocab_size: t.vocab_size,
            templates: t.templates.clone(),
            weights: t.weights.clone(),
            sigma: t.sigma,
        }
    }
}

impl TaskDoc {
    pub fn into_task(self, name: &str) -> Result<TemplateTask> {
        if self.templates.iter().any(|z| z.len() != self.k) {
            return Err(Error::Validation(format!(
                "declared k = {} does not match template lengths",
                self.k
            )));
        }
        let mut t = TemplateTask {
            name: name.to_string(),
            templates: self.templates,
            weights: self.weights,
            substitution: SubstitutionDist::Uniform(Alphabet::new(vec![])),
            sigma: self.sigma,
            vocab_size: self.vocab_size,
            cls: None,
            disjoint: true,
        };
        t.substitution = SubstitutionDist::Uniform(Alphabet::new(t.free_tokens()));
        t.validate()?;
        Ok(t)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Dataset as CSV: `idx,template_idx,tok_0..tok_{k-1},label`. Symbolic
/// labels are written as token indices.
pub fn dataset_to_csv(ds: &Dataset, comment: Option<&str>) -> String {
    let k = ds.samples.first().map_or(0, |s| s.tokens.len());
    let mut out = String::new();
    if let Some(c) = comment {
        for line in c.lines() {
            let _ = writeln!(out, "# {line}");
        }
    }
    out.push_str("idx,template_idx");
    for i in 0..k {
        let _ = write!(out, ",tok_{i}");
    }
    out.push_str(",label\n");
    for (i, s) in ds.samples.iter().enumerate() {
        let _ = write!(out, "{i},{}", s.template);
        for t in &s.tokens {
            let _ = write!(out, ",{t}");
        }
        match s.label {
            SampleLabel::Real(v) => {
                let _ = writeln!(out, ",{v}");
            }
            SampleLabel::Token(t) => {
                let _ = writeln!(out, ",{t}");
            }
        }
    }
    out
}

impl Label {
    pub fn real(&self) -> Option<f64> {
        match self {
            Label::Real(v) => Some(*v),
            Label::Sym(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templates::{builtin, sample_dataset, Builtin};

    #[test]
    fn json_shape() {
        let t = builtin(&Builtin::SameDifferent).unwrap();
        let doc = TaskDoc::from(&t);
        let v: serde_json::Value = serde_json::from_str(&doc.to_json().unwrap()).unwrap();
        assert_eq!(v["k"], 2);
        assert_eq!(v["templates"][0]["symbols"][0], serde_json::json!({"wild": 0}));
        assert_eq!(v["templates"][1]["label"], serde_json::json!({"real": -1.0}));
        let copy = builtin(&Builtin::Copy).unwrap();
        let v = serde_json::to_value(TaskDoc::from(&copy)).unwrap();
        assert_eq!(v["templates"][0]["label"], serde_json::json!({"sym": {"wild": 0}}));
    }

    #[test]
    fn unknown_keys_rejected() {
        let s = r#"{"k":1,"vocab_size":3,"templates":[],"weights":[],"sigma":0,"extra":1}"#;
        assert!(TaskDoc::from_json(s).is_err());
    }

    #[test]
    fn csv_columns() {
        let t = builtin(&Builtin::AbaVsAbb).unwrap();
        let ds = sample_dataset(&t, 5, &Alphabet::range(0, 20), 1).unwrap();
        let csv = dataset_to_csv(&ds, Some("manifest abc"));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# manifest abc");
        assert_eq!(lines[1], "idx,template_idx,tok_0,tok_1,tok_2,label");
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[2].split(',').count(), 6);
    }
}
