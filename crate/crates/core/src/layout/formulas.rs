use regex::Regex;
use tracing::debug;

use super::{Cluster, ClusterLabel, LayoutConfig, LayoutError, TextCell, UnionFind};

/// Matches equation labels such as `(1)`, `(2a)` and `(A5)`.
pub const DEFAULT_FORMULA_NUMBER_PATTERN: &str = r"\(([A-Za-z]?\d+[a-z]?)\)";

// Base overlap requirement for close-but-misaligned and for farther pairs.
const LOOSE_REQUIRED_OVERLAP: f64 = 0.85;

#[derive(Debug, Clone)]
pub struct FormulaNumberPattern(Regex);

impl FormulaNumberPattern {
    pub fn new(pattern: &str) -> Result<Self, regex::Error> {
        Regex::new(pattern).map(Self)
    }

    /// Label of the rightmost match in `text`.
    pub fn extract(&self, text: &str) -> Option<String> {
        self.0
            .captures_iter(text)
            .last()
            .and_then(|c| c.get(1).or_else(|| c.get(0)))
            .map(|m| m.as_str().to_string())
    }
}

impl Default for FormulaNumberPattern {
    fn default() -> Self {
        Self::new(DEFAULT_FORMULA_NUMBER_PATTERN).unwrap()
    }
}

pub fn extract_formula_number(c: &Cluster) -> Option<String> {
    FormulaNumberPattern::default().extract(&c.text())
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn alignment_factor(c1: &Cluster, c2: &Cluster) -> f64 {
    let avg_width = ((c1.bbox.width() + c2.bbox.width()) / 2.0).max(1e-6);
    let left = (c1.bbox.l - c2.bbox.l).abs();
    let right = (c1.bbox.r - c2.bbox.r).abs();
    (left / avg_width).max(right / avg_width)
}

fn should_merge(
    c1: &Cluster,
    c2: &Cluster,
    num1: Option<&str>,
    num2: Option<&str>,
    vertical_threshold: f64,
    cfg: &LayoutConfig,
) -> bool {
    let gap = c2.bbox.t - c1.bbox.b;
    if gap < 0.0 || gap > vertical_threshold {
        return false;
    }

    let (l1, r1) = (c1.bbox.l - cfg.padding, c1.bbox.r + cfg.padding);
    let (l2, r2) = (c2.bbox.l - cfg.padding, c2.bbox.r + cfg.padding);
    let overlap = r1.min(r2) - l1.max(l2);
    let min_width = (r1 - l1).min(r2 - l2);
    let overlap_ratio = if min_width > 0.0 { overlap / min_width } else { 0.0 };

    let left_diff = (c1.bbox.l - c2.bbox.l).abs();
    let right_diff = (c1.bbox.r - c2.bbox.r).abs();

    if let (Some(a), Some(b)) = (num1, num2) {
        if a != b {
            return false;
        }
    }

    let mut required = if gap <= 0.5 * vertical_threshold {
        if left_diff <= cfg.alignment_threshold && right_diff <= cfg.alignment_threshold {
            cfg.horizontal_overlap_threshold
        } else {
            LOOSE_REQUIRED_OVERLAP
        }
    } else if alignment_factor(c1, c2) <= cfg.max_alignment_ratio {
        LOOSE_REQUIRED_OVERLAP
    } else {
        return false;
    };

    match (num1.is_some(), num2.is_some()) {
        (false, false) => {
            if gap > cfg.unnumbered_max_gap {
                return false;
            }
            required = required.max(cfg.unnumbered_min_overlap);
        }
        (true, false) | (false, true) => {
            if gap > cfg.mixed_max_gap {
                return false;
            }
            required = required.max(cfg.mixed_min_overlap);
        }
        (true, true) => {}
    }

    overlap_ratio >= required
}

fn dedup_and_sort_cells(cells: Vec<TextCell>) -> Vec<TextCell> {
    let mut unique: Vec<TextCell> = Vec::with_capacity(cells.len());
    for c in cells {
        if !unique.contains(&c) {
            unique.push(c);
        }
    }
    unique.sort_by(|a, b| a.bbox.t.total_cmp(&b.bbox.t).then(a.bbox.l.total_cmp(&b.bbox.l)));
    unique
}

fn collapse(group: Vec<Cluster>) -> Cluster {
    let mut iter = group.into_iter();
    let mut merged = iter.next().expect("groups are non-empty");
    let mut cells = std::mem::take(&mut merged.cells);
    for c in iter {
        merged.bbox = merged.bbox.envelope(&c.bbox);
        cells.extend(c.cells);
        merged.children.extend(c.children);
    }
    merged.cells = dedup_and_sort_cells(cells);
    merged
}

/// One sweep over all ordered FORMULA pairs. Returns the new cluster list and
/// whether any group was merged.
fn merge_pass(clusters: &[Cluster], cfg: &LayoutConfig, pattern: &FormulaNumberPattern) -> (Vec<Cluster>, bool) {
    let (mut formulas, others): (Vec<Cluster>, Vec<Cluster>) =
        clusters.iter().cloned().partition(|c| c.label == ClusterLabel::Formula);
    if formulas.is_empty() {
        return (clusters.to_vec(), false);
    }
    formulas.sort_by(|a, b| a.bbox.t.total_cmp(&b.bbox.t));

    let mut heights: Vec<f64> = formulas.iter().map(|c| c.bbox.height()).collect();
    let vertical_threshold = median(&mut heights) * cfg.vertical_threshold_factor;
    let numbers: Vec<Option<String>> = formulas.iter().map(|c| pattern.extract(&c.text())).collect();

    let n = formulas.len();
    let mut uf = UnionFind::new(n);
    // equation label carried by each set, indexed by member
    let mut group_number: Vec<Option<String>> = numbers.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let (ri, rj) = (uf.find(i), uf.find(j));
            if ri == rj {
                continue;
            }
            if let (Some(a), Some(b)) = (&group_number[ri], &group_number[rj]) {
                if a != b {
                    continue;
                }
            }
            if should_merge(
                &formulas[i],
                &formulas[j],
                numbers[i].as_deref(),
                numbers[j].as_deref(),
                vertical_threshold,
                cfg,
            ) {
                debug!(a = formulas[i].id, b = formulas[j].id, "merging formula fragments");
                let number = group_number[ri].clone().or_else(|| group_number[rj].clone());
                uf.union(i, j);
                let root = uf.find(i);
                group_number[root] = number;
            }
        }
    }

    let groups = uf.groups();
    let merged_any = groups.iter().any(|g| g.len() > 1);
    let mut slots: Vec<Option<Cluster>> = formulas.into_iter().map(Some).collect();
    let mut out = others;
    for group in groups {
        let members: Vec<Cluster> = group.iter().map(|&i| slots[i].take().unwrap()).collect();
        out.push(if members.len() == 1 { members.into_iter().next().unwrap() } else { collapse(members) });
    }
    (out, merged_any)
}

/// Merges vertically adjacent FORMULA clusters that belong to one equation.
///
/// Non-formula clusters keep their relative order and come first; formula
/// clusters follow in top-to-bottom order. A merged cluster keeps the id,
/// label and confidence of its topmost member, takes the envelope of the
/// member boxes and the de-duplicated union of their cells in reading order.
/// Two sets are never joined when their members carry different equation
/// labels, even through an unlabeled fragment between them.
/// Sweeps repeat until no pair qualifies, so the result is a fixed point.
pub fn merge_adjacent_formulas(clusters: &[Cluster], cfg: &LayoutConfig) -> Result<Vec<Cluster>, LayoutError> {
    let pattern = FormulaNumberPattern::new(&cfg.formula_number_pattern)?;
    let (mut current, mut merged) = merge_pass(clusters, cfg, &pattern);
    while merged {
        (current, merged) = merge_pass(&current, cfg, &pattern);
    }
    Ok(current)
}
