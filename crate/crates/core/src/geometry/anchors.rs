use super::{Box3, GeometryError};

/// One pyramid level of anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorLevel {
    pub stride: usize,
    /// Number of cells per axis, `ceil(shape / stride)`.
    pub cells: [usize; 3],
    /// Template extents `(z, y, x)`, in template-index order.
    pub templates: Vec<[f64; 3]>,
    /// Cell-major (z, y, x), then template index.
    pub anchors: Vec<Box3>,
}

impl AnchorLevel {
    pub fn num_cells(&self) -> usize {
        self.cells.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub levels: Vec<AnchorLevel>,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.levels.iter().map(|l| l.anchors.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All anchors in level-major order.
    pub fn iter(&self) -> impl Iterator<Item = &Box3> {
        self.levels.iter().flat_map(|l| l.anchors.iter())
    }

    pub fn to_vec(&self) -> Vec<Box3> {
        self.iter().copied().collect()
    }
}

/// Volume-preserving template extents: each aspect ratio triple is scaled so
/// that `rz * ry * rx = 1`, giving a template of volume `base_size^3`.
pub fn anchor_templates(
    base_sizes: &[f64],
    aspect_ratios: &[[f64; 3]],
) -> Result<Vec<[f64; 3]>, GeometryError> {
    if base_sizes.is_empty() || aspect_ratios.is_empty() {
        return Err(GeometryError::NoTemplates);
    }
    let mut out = Vec::with_capacity(base_sizes.len() * aspect_ratios.len());
    for &size in base_sizes {
        if !(size > 0.0 && size.is_finite()) {
            return Err(GeometryError::InvalidParameter(format!(
                "anchor base size {size}"
            )));
        }
        for r in aspect_ratios {
            if r.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(GeometryError::InvalidParameter(format!(
                    "aspect ratio {r:?}"
                )));
            }
            let norm = (r[0] * r[1] * r[2]).cbrt();
            out.push([
                size * r[0] / norm,
                size * r[1] / norm,
                size * r[2] / norm,
            ]);
        }
    }
    Ok(out)
}

/// Tile templates over every level. `base_sizes[i]` holds the sizes of level
/// `i`; aspect ratios are shared by all levels.
pub fn generate_anchors(
    image_shape: [usize; 3],
    level_strides: &[usize],
    base_sizes: &[Vec<f64>],
    aspect_ratios: &[[f64; 3]],
) -> Result<AnchorGrid, GeometryError> {
    if level_strides.len() != base_sizes.len() {
        return Err(GeometryError::InvalidParameter(format!(
            "{} strides but {} base-size lists",
            level_strides.len(),
            base_sizes.len()
        )));
    }
    if image_shape.contains(&0) {
        return Err(GeometryError::InvalidParameter(format!(
            "image shape {image_shape:?}"
        )));
    }
    let mut levels = Vec::with_capacity(level_strides.len());
    let mut prev = 0;
    for (&stride, sizes) in level_strides.iter().zip(base_sizes) {
        if stride == 0 || stride <= prev {
            return Err(GeometryError::InvalidParameter(format!(
                "strides must be positive and strictly increasing, got {level_strides:?}"
            )));
        }
        prev = stride;
        let templates = anchor_templates(sizes, aspect_ratios)?;
        let cells = image_shape.map(|n| n.div_ceil(stride));
        let mut anchors = Vec::with_capacity(cells.iter().product::<usize>() * templates.len());
        let s = stride as f64;
        for z in 0..cells[0] {
            for y in 0..cells[1] {
                for x in 0..cells[2] {
                    let center = [(z as f64 + 0.5) * s, (y as f64 + 0.5) * s, (x as f64 + 0.5) * s];
                    for t in &templates {
                        anchors.push(Box3::from_center_extent(center, *t)?);
                    }
                }
            }
        }
        levels.push(AnchorLevel {
            stride,
            cells,
            templates,
            anchors,
        });
    }
    Ok(AnchorGrid { levels })
}
