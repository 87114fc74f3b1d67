//! Geometric repair of layout-detector output.
//!
//! Pages arrive as pre-detected clusters (label, box, text cells). The
//! heuristics here drop margin line numbers, relabel sparse page-sized
//! tables as text, merge formulas split across several boxes, and compute
//! the rectangles to blank out when cropping formulas from a rendered page.
//! All coordinates use a top-left origin.

mod formulas;
mod heuristics;
mod union_find;

use serde::{Deserialize, Serialize};

pub use formulas::{extract_formula_number, merge_adjacent_formulas, FormulaNumberPattern};
pub use heuristics::{compute_mask_regions, filter_margin_line_numbers, reclassify_sparse_tables};
pub use union_find::UnionFind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub l: f64,
    pub t: f64,
    pub r: f64,
    pub b: f64,
}

impl BoundingBox {
    pub fn new(l: f64, t: f64, r: f64, b: f64) -> Self {
        Self { l, t, r, b }
    }

    pub fn width(&self) -> f64 {
        self.r - self.l
    }

    pub fn height(&self) -> f64 {
        self.b - self.t
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_valid(&self) -> bool {
        self.l <= self.r && self.t <= self.b && [self.l, self.t, self.r, self.b].iter().all(|v| v.is_finite())
    }

    pub fn envelope(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            l: self.l.min(other.l),
            t: self.t.min(other.t),
            r: self.r.max(other.r),
            b: self.b.max(other.b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextCell {
    pub bbox: BoundingBox,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClusterLabel {
    Caption,
    Checkbox,
    Code,
    DocumentIndex,
    Footnote,
    Form,
    Formula,
    KeyValueRegion,
    ListItem,
    PageFooter,
    PageHeader,
    Picture,
    SectionHeader,
    Table,
    Text,
    Title,
}

impl ClusterLabel {
    /// Wrapper labels that sometimes swallow a whole page of body text.
    pub fn is_large_wrapper(self) -> bool {
        matches!(
            self,
            ClusterLabel::Table | ClusterLabel::DocumentIndex | ClusterLabel::KeyValueRegion | ClusterLabel::Form
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: i64,
    pub label: ClusterLabel,
    #[serde(default = "full_confidence")]
    pub confidence: f64,
    pub bbox: BoundingBox,
    #[serde(default)]
    pub cells: Vec<TextCell>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<Cluster>,
}

fn full_confidence() -> f64 {
    1.0
}

impl Cluster {
    pub fn text(&self) -> String {
        self.cells.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join(" ")
    }

    /// Cells of this cluster and, recursively, of its children.
    pub fn all_cells(&self) -> Vec<&TextCell> {
        let mut out: Vec<&TextCell> = self.cells.iter().collect();
        for child in &self.children {
            out.extend(child.all_cells());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PageGeometry {
    pub width: f64,
    pub height: f64,
    /// Rendered-image pixels per page unit.
    #[serde(default = "unit_scale")]
    pub image_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl PageGeometry {
    pub fn is_valid(&self) -> bool {
        self.width > 0.0 && self.height > 0.0 && self.image_scale > 0.0
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

/// Thresholds for every layout heuristic. Pixel values are page pixels at
/// detector resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutConfig {
    pub vertical_threshold_factor: f64,
    pub horizontal_overlap_threshold: f64,
    pub padding: f64,
    pub alignment_threshold: f64,
    pub max_alignment_ratio: f64,
    pub unnumbered_max_gap: f64,
    pub mixed_max_gap: f64,
    pub unnumbered_min_overlap: f64,
    pub mixed_min_overlap: f64,
    pub min_area_ratio: f64,
    pub min_cells_threshold: usize,
    pub min_density_threshold: f64,
    pub left_margin_threshold: f64,
    pub min_height_threshold: f64,
    pub mask_top_expansion: f64,
    pub mask_bottom_expansion: f64,
    /// Equation label pattern; capture group 1 is the label.
    pub formula_number_pattern: String,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            vertical_threshold_factor: 1.8,
            horizontal_overlap_threshold: 0.7,
            padding: 50.0,
            alignment_threshold: 20.0,
            max_alignment_ratio: 0.2,
            unnumbered_max_gap: 3.0,
            mixed_max_gap: 12.8,
            unnumbered_min_overlap: 0.9,
            mixed_min_overlap: 0.95,
            min_area_ratio: 0.70,
            min_cells_threshold: 50,
            min_density_threshold: 0.001,
            left_margin_threshold: 0.08,
            min_height_threshold: 5.0,
            mask_top_expansion: 0.045,
            mask_bottom_expansion: 0.045,
            formula_number_pattern: formulas::DEFAULT_FORMULA_NUMBER_PATTERN.to_string(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LayoutError {
    #[error("invalid page geometry: width and height must be positive")]
    InvalidPage,
    #[error("invalid formula number pattern: {0}")]
    Pattern(#[from] regex::Error),
}

/// One page of detector output as exchanged on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageLayout {
    pub page: PageGeometry,
    pub clusters: Vec<Cluster>,
    /// Raw text cells of the page, when the producer supplies them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cells: Vec<TextCell>,
}

/// Image-space rectangle to paint white before cropping formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskRect {
    pub cluster_id: i64,
    pub l: f64,
    pub t: f64,
    pub r: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPage {
    pub layout: PageLayout,
    pub masks: Vec<MaskRect>,
}

fn strip_margin_cells(cluster: &mut Cluster, page: &PageGeometry, cfg: &LayoutConfig) {
    cluster.cells = filter_margin_line_numbers(&cluster.cells, page, cfg);
    for child in &mut cluster.children {
        strip_margin_cells(child, page, cfg);
    }
}

/// Full post-processing of one page: margin filtering, sparse-table
/// relabeling, formula merging, then mask computation on the result.
pub fn fix_page(input: &PageLayout, cfg: &LayoutConfig) -> Result<FixedPage, LayoutError> {
    let page = input.page;
    if !page.is_valid() {
        return Err(LayoutError::InvalidPage);
    }
    let cells = filter_margin_line_numbers(&input.cells, &page, cfg);
    let mut clusters = input.clusters.clone();
    for c in &mut clusters {
        strip_margin_cells(c, &page, cfg);
    }
    let clusters = reclassify_sparse_tables(&clusters, &page, cfg);
    let clusters = merge_adjacent_formulas(&clusters, cfg)?;
    let masks = compute_mask_regions(&clusters, &page, cfg);
    Ok(FixedPage { layout: PageLayout { page, clusters, cells }, masks })
}
