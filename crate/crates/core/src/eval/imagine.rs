use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{render_table, EvalError, ScoreRecord};

/// Categories that get fixed leading columns; any other task string is
/// reported after them in sorted order.
pub const IMAGINE_CATEGORIES: [&str; 4] = [
    "Attribute shift",
    "Spatiotemporal",
    "Hybridization",
    "Multi-Object",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagineScores {
    pub fantasy_fulfillment: f64,
    pub identity_preservation: f64,
    pub aesthetic_quality: f64,
}

impl ImagineScores {
    pub fn new(
        fantasy_fulfillment: f64,
        identity_preservation: f64,
        aesthetic_quality: f64,
    ) -> Self {
        Self {
            fantasy_fulfillment,
            identity_preservation,
            aesthetic_quality,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        for (field, value) in [
            ("fantasy_fulfillment", self.fantasy_fulfillment),
            ("identity_preservation", self.identity_preservation),
            ("aesthetic_quality", self.aesthetic_quality),
        ] {
            if !(0.0..=10.0).contains(&value) {
                return Err(EvalError::OutOfRange { field, value });
            }
        }
        Ok(())
    }
}

/// `0.8 * min(FF, IP) + 0.2 * AQ`.
pub fn imagine_final_score(s: &ImagineScores) -> Result<f64, EvalError> {
    s.validate()?;
    Ok(0.8 * s.fantasy_fulfillment.min(s.identity_preservation) + 0.2 * s.aesthetic_quality)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: String,
    pub count: usize,
    /// `None` when the category has no prompts.
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagineReport {
    pub per_category: Vec<CategoryScore>,
    /// Mean final score over every prompt.
    pub overall: CategoryScore,
}

fn canonical_category(task: &str) -> String {
    IMAGINE_CATEGORIES
        .iter()
        .find(|c| c.eq_ignore_ascii_case(task.trim()))
        .map_or_else(|| task.trim().to_string(), |c| c.to_string())
}

/// Per-category and overall mean of the final scores. Records without a
/// task are grouped under `uncategorized`.
pub fn imagine_report(records: &[ScoreRecord]) -> Result<ImagineReport, EvalError> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut all = Vec::with_capacity(records.len());
    for r in records {
        let scores = r
            .imagine_scores
            .as_ref()
            .ok_or_else(|| EvalError::MissingField {
                prompt_id: r.prompt_id.clone(),
                field: "imagine_scores",
            })?;
        let f = imagine_final_score(scores)?;
        let cat = r
            .task_type
            .as_deref()
            .filter(|t| !t.trim().is_empty())
            .map_or_else(|| "uncategorized".to_string(), canonical_category);
        groups.entry(cat).or_default().push(f);
        all.push(f);
    }
    let summarize = |category: &str, xs: &[f64]| CategoryScore {
        category: category.to_string(),
        count: xs.len(),
        mean: (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64),
    };
    let mut per_category: Vec<CategoryScore> = IMAGINE_CATEGORIES
        .iter()
        .map(|c| summarize(c, groups.remove(*c).as_deref().unwrap_or(&[])))
        .collect();
    per_category.extend(groups.iter().map(|(c, xs)| summarize(c, xs)));
    Ok(ImagineReport {
        per_category,
        overall: summarize("Overall", &all),
    })
}

fn cell(c: &CategoryScore) -> String {
    c.mean
        .map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

impl ImagineReport {
    /// Plain-text table with one column per category plus the overall column.
    pub fn to_table(&self, method: &str) -> String {
        let mut header = vec!["Method".to_string()];
        header.extend(self.per_category.iter().map(|c| c.category.clone()));
        header.push("Overall".into());
        let mut row = vec![method.to_string()];
        row.extend(self.per_category.iter().map(cell));
        row.push(cell(&self.overall));
        let mut n = vec!["n".to_string()];
        n.extend(self.per_category.iter().map(|c| c.count.to_string()));
        n.push(self.overall.count.to_string());
        render_table(&header, &[row, n])
    }
}
