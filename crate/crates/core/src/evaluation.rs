//! Item-weighted B-Cubed precision, recall and F1.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::ClusteringOutput;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BCubed {
    #[serde(rename = "b3_precision")]
    pub precision: f64,
    #[serde(rename = "b3_recall")]
    pub recall: f64,
    #[serde(rename = "b3_f1")]
    pub f1: f64,
    pub n_items: usize,
}

/// Scores `pred` against `gold`; both must cover the same items.
///
/// For item `i` with predicted cluster `C` and gold class `G`,
/// precision is `|C ∩ G| / |C|` and recall `|C ∩ G| / |G|`, averaged over
/// items.
pub fn b_cubed<K, P, G>(pred: &BTreeMap<K, P>, gold: &BTreeMap<K, G>) -> Result<BCubed>
where
    K: Ord + std::fmt::Debug,
    P: Eq + Hash,
    G: Eq + Hash,
{
    if pred.len() != gold.len() || pred.keys().zip(gold.keys()).any(|(a, b)| a != b) {
        let missing = pred
            .keys()
            .find(|k| !gold.contains_key(k))
            .map(|k| format!("{k:?} has no gold label"))
            .or_else(|| gold.keys().find(|k| !pred.contains_key(k)).map(|k| format!("{k:?} has no prediction")))
            .unwrap_or_default();
        return Err(Error::ItemMismatch(missing));
    }
    let n = pred.len();
    if n == 0 {
        return Ok(BCubed {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            n_items: 0,
        });
    }
    let mut cluster_size: HashMap<&P, usize> = HashMap::new();
    let mut class_size: HashMap<&G, usize> = HashMap::new();
    let mut joint: HashMap<(&P, &G), usize> = HashMap::new();
    for (p, g) in pred.values().zip(gold.values()) {
        *cluster_size.entry(p).or_default() += 1;
        *class_size.entry(g).or_default() += 1;
        *joint.entry((p, g)).or_default() += 1;
    }
    let (mut precision, mut recall) = (0.0, 0.0);
    for (p, g) in pred.values().zip(gold.values()) {
        let both = joint[&(p, g)] as f64;
        precision += both / cluster_size[p] as f64;
        recall += both / class_size[g] as f64;
    }
    precision /= n as f64;
    recall /= n as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(BCubed {
        precision,
        recall,
        f1,
        n_items: n,
    })
}

/// Gold class of one candidate; `role` is `"trigger"` or `"argument"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldLabel {
    pub id: String,
    pub role: String,
    pub label: String,
}

pub fn read_gold_jsonl(path: impl AsRef<Path>) -> Result<Vec<GoldLabel>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let g: GoldLabel = serde_json::from_str(line).map_err(|e| Error::Json {
            line: i + 1,
            message: e.to_string(),
        })?;
        if g.role != "trigger" && g.role != "argument" {
            return Err(Error::Json {
                line: i + 1,
                message: format!("role must be \"trigger\" or \"argument\", got {:?}", g.role),
            });
        }
        out.push(g);
    }
    Ok(out)
}

pub fn write_gold_jsonl(path: impl AsRef<Path>, gold: &[GoldLabel]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for g in gold {
        text.push_str(&serde_json::to_string(g).expect("plain struct"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Gold labels of one role keyed by candidate id.
pub fn gold_map(gold: &[GoldLabel], role: &str) -> BTreeMap<String, String> {
    gold.iter()
        .filter(|g| g.role == role)
        .map(|g| (g.id.clone(), g.label.clone()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringScores {
    pub triggers: BCubed,
    pub arguments: BCubed,
}

/// B-Cubed scores of both sides of a clustering against gold labels.
pub fn score_clustering(output: &ClusteringOutput, gold: &[GoldLabel]) -> Result<ClusteringScores> {
    Ok(ClusteringScores {
        triggers: b_cubed(&output.triggers, &gold_map(gold, "trigger"))?,
        arguments: b_cubed(&output.arguments, &gold_map(gold, "argument"))?,
    })
}
