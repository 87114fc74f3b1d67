use tracing::debug;

use super::{Cluster, ClusterLabel, LayoutConfig, MaskRect, PageGeometry, TextCell};

fn is_left_margin_line_number(cell: &TextCell, page: &PageGeometry, cfg: &LayoutConfig) -> bool {
    let max_width = page.width * cfg.left_margin_threshold;
    let b = &cell.bbox;
    b.l < max_width && b.width() < max_width && b.height() >= cfg.min_height_threshold
}

/// Drops narrow cells in the left margin band (line numbers of pre-prints).
/// Very short cells such as footnote marks are kept.
pub fn filter_margin_line_numbers(cells: &[TextCell], page: &PageGeometry, cfg: &LayoutConfig) -> Vec<TextCell> {
    cells
        .iter()
        .filter(|c| !is_left_margin_line_number(c, page, cfg))
        .cloned()
        .collect()
}

/// Relabels page-sized table-like clusters as TEXT when they hold too few
/// cells or the cells are too sparse to be a real table.
pub fn reclassify_sparse_tables(clusters: &[Cluster], page: &PageGeometry, cfg: &LayoutConfig) -> Vec<Cluster> {
    let page_area = page.area();
    clusters
        .iter()
        .map(|c| {
            let mut c = c.clone();
            if !c.label.is_large_wrapper() {
                return c;
            }
            let area = c.bbox.area();
            if area / page_area < cfg.min_area_ratio {
                return c;
            }
            let cells = c.all_cells().len();
            let density = cells as f64 / area;
            if cells < cfg.min_cells_threshold || density < cfg.min_density_threshold {
                debug!(id = c.id, cells, density, "relabeling sparse page-sized table as text");
                c.label = ClusterLabel::Text;
            }
            c
        })
        .collect()
}

/// Rectangles covering every non-formula cluster, grown vertically by the
/// configured fractions of the cluster height and scaled to image pixels.
pub fn compute_mask_regions(clusters: &[Cluster], page: &PageGeometry, cfg: &LayoutConfig) -> Vec<MaskRect> {
    let scale = page.image_scale;
    clusters
        .iter()
        .filter(|c| c.label != ClusterLabel::Formula)
        .map(|c| {
            let h = c.bbox.height();
            MaskRect {
                cluster_id: c.id,
                l: c.bbox.l * scale,
                t: (c.bbox.t - h * cfg.mask_top_expansion) * scale,
                r: c.bbox.r * scale,
                b: (c.bbox.b + h * cfg.mask_bottom_expansion) * scale,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::BoundingBox;
    use super::*;

    fn page() -> PageGeometry {
        PageGeometry { width: 1000.0, height: 1000.0, image_scale: 2.0 }
    }

    fn cell(l: f64, w: f64, h: f64) -> TextCell {
        TextCell { bbox: BoundingBox::new(l, 100.0, l + w, 100.0 + h), text: "1".into() }
    }

    fn cluster(label: ClusterLabel, w: f64, h: f64, n_cells: usize) -> Cluster {
        Cluster {
            id: 1,
            label,
            confidence: 0.7,
            bbox: BoundingBox::new(0.0, 0.0, w, h),
            cells: (0..n_cells).map(|i| cell(i as f64, 1.0, 1.0)).collect(),
            children: vec![],
        }
    }

    #[test]
    fn margin_examples() {
        let cfg = LayoutConfig::default();
        assert!(filter_margin_line_numbers(&[cell(20.0, 30.0, 10.0)], &page(), &cfg).is_empty());
        assert_eq!(filter_margin_line_numbers(&[cell(20.0, 30.0, 3.0)], &page(), &cfg).len(), 1);
        assert_eq!(filter_margin_line_numbers(&[cell(200.0, 30.0, 10.0)], &page(), &cfg).len(), 1);
    }

    #[test]
    fn margin_keeps_order() {
        let cfg = LayoutConfig::default();
        let cells = vec![cell(300.0, 5.0, 10.0), cell(10.0, 5.0, 10.0), cell(100.0, 5.0, 10.0)];
        let out = filter_margin_line_numbers(&cells, &page(), &cfg);
        assert_eq!(out, vec![cells[0].clone(), cells[2].clone()]);
    }

    #[test]
    fn table_examples() {
        let cfg = LayoutConfig::default();
        let out = reclassify_sparse_tables(&[cluster(ClusterLabel::Table, 800.0, 900.0, 10)], &page(), &cfg);
        assert_eq!(out[0].label, ClusterLabel::Text);
        let out = reclassify_sparse_tables(&[cluster(ClusterLabel::Table, 700.0, 700.0, 0)], &page(), &cfg);
        assert_eq!(out[0].label, ClusterLabel::Table);
        let out = reclassify_sparse_tables(&[cluster(ClusterLabel::Table, 800.0, 900.0, 800)], &page(), &cfg);
        assert_eq!(out[0].label, ClusterLabel::Table);
    }

    #[test]
    fn only_wrapper_labels_are_touched() {
        let cfg = LayoutConfig::default();
        for label in [ClusterLabel::Form, ClusterLabel::KeyValueRegion, ClusterLabel::DocumentIndex] {
            let out = reclassify_sparse_tables(&[cluster(label, 900.0, 900.0, 3)], &page(), &cfg);
            assert_eq!(out[0].label, ClusterLabel::Text);
        }
        let out = reclassify_sparse_tables(&[cluster(ClusterLabel::Picture, 900.0, 900.0, 3)], &page(), &cfg);
        assert_eq!(out[0].label, ClusterLabel::Picture);
    }

    #[test]
    fn children_cells_count() {
        let cfg = LayoutConfig::default();
        let mut c = cluster(ClusterLabel::Table, 1000.0, 1000.0, 25);
        let mut child = cluster(ClusterLabel::Text, 10.0, 10.0, 975);
        child.children.push(cluster(ClusterLabel::Text, 1.0, 1.0, 0));
        c.children.push(child);
        let out = reclassify_sparse_tables(&[c], &page(), &cfg);
        assert_eq!(out[0].label, ClusterLabel::Table);
    }

    #[test]
    fn mask_example() {
        let cfg = LayoutConfig::default();
        let text = Cluster { bbox: BoundingBox::new(100.0, 200.0, 300.0, 400.0), ..cluster(ClusterLabel::Text, 1.0, 1.0, 0) };
        let formula = Cluster { label: ClusterLabel::Formula, ..text.clone() };
        let masks = compute_mask_regions(&[text, formula], &page(), &cfg);
        assert_eq!(masks.len(), 1);
        let m = masks[0];
        assert!((m.l - 200.0).abs() < 1e-9);
        assert!((m.t - 382.0).abs() < 1e-9);
        assert!((m.r - 600.0).abs() < 1e-9);
        assert!((m.b - 818.0).abs() < 1e-9);
        assert!(compute_mask_regions(&[], &page(), &cfg).is_empty());
    }
}
