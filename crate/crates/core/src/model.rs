//! Block-structured data model.
//!
//! A feature instance stacks `c` consecutive frames, most recent first. Each
//! frame is the concatenation of the `m` modality vectors in layout order, so
//! row `k * q + offset(i) + j` of an instance holds feature `j` of modality `i`
//! observed `k` frames ago. Difference vectors use the same frame-major
//! ordering with `r` behavior channels per frame.
//!
//! Modality and frame indices are zero-based throughout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Block structure shared by every matrix in the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LayoutSpec", into = "LayoutSpec")]
pub struct ModalityLayout {
    widths: Vec<usize>,
    offsets: Vec<usize>,
    history: usize,
    behavior_dim: usize,
}

/// Serialized form of [`ModalityLayout`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutSpec {
    pub widths: Vec<usize>,
    pub history: usize,
    pub behavior_dim: usize,
}

impl TryFrom<LayoutSpec> for ModalityLayout {
    type Error = Error;

    fn try_from(spec: LayoutSpec) -> Result<Self> {
        ModalityLayout::new(spec.widths, spec.history, spec.behavior_dim)
    }
}

impl From<ModalityLayout> for LayoutSpec {
    fn from(layout: ModalityLayout) -> Self {
        LayoutSpec {
            widths: layout.widths,
            history: layout.history,
            behavior_dim: layout.behavior_dim,
        }
    }
}

impl ModalityLayout {
    pub fn new(widths: Vec<usize>, history: usize, behavior_dim: usize) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::InvalidLayout("at least one modality is required".into()));
        }
        if let Some(i) = widths.iter().position(|&w| w == 0) {
            return Err(Error::InvalidLayout(format!("modality {i} has zero width")));
        }
        if history == 0 {
            return Err(Error::InvalidLayout("history length must be >= 1".into()));
        }
        if behavior_dim == 0 {
            return Err(Error::InvalidLayout("behavior dimension must be >= 1".into()));
        }
        let offsets = widths
            .iter()
            .scan(0, |acc, &w| {
                let start = *acc;
                *acc += w;
                Some(start)
            })
            .collect();
        Ok(Self {
            widths,
            offsets,
            history,
            behavior_dim,
        })
    }

    /// Number of feature modalities `m`.
    pub fn modalities(&self) -> usize {
        self.widths.len()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Width of one frame, `q = Σ q_j`.
    pub fn frame_width(&self) -> usize {
        self.widths.iter().sum()
    }

    /// History window length `c`.
    pub fn history(&self) -> usize {
        self.history
    }

    /// Behavior dimensionality `r`.
    pub fn behavior_dim(&self) -> usize {
        self.behavior_dim
    }

    /// Feature instance length `d = c * q`.
    pub fn feature_dim(&self) -> usize {
        self.history * self.frame_width()
    }

    /// Difference vector length `r * c`.
    pub fn difference_dim(&self) -> usize {
        self.history * self.behavior_dim
    }

    /// Offset of modality `i` inside a single frame.
    pub fn modality_offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    fn check_modality(&self, i: usize) -> Result<()> {
        if i >= self.modalities() {
            return Err(Error::IndexOutOfRange {
                what: "modality",
                index: i,
                len: self.modalities(),
            });
        }
        Ok(())
    }

    fn check_frame(&self, k: usize) -> Result<()> {
        if k >= self.history {
            return Err(Error::IndexOutOfRange {
                what: "frame",
                index: k,
                len: self.history,
            });
        }
        Ok(())
    }

    /// Rows of the feature instance that belong to modality `i`, across all
    /// frames, in frame order.
    pub fn modality_rows(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let q = self.frame_width();
        let (off, w) = (self.offsets[i], self.widths[i]);
        (0..self.history).flat_map(move |k| (k * q + off)..(k * q + off + w))
    }

    /// Modality index owning each row of a feature instance.
    pub fn row_modalities(&self) -> Vec<usize> {
        let frame: Vec<usize> = self
            .widths
            .iter()
            .enumerate()
            .flat_map(|(i, &w)| std::iter::repeat_n(i, w))
            .collect();
        frame.iter().copied().cycle().take(self.feature_dim()).collect()
    }

    /// Column names for a feature instance: `mod{i}_f{k}_dim{j}` (1-based modality).
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.feature_dim());
        for k in 0..self.history {
            for (i, &w) in self.widths.iter().enumerate() {
                for j in 0..w {
                    names.push(format!("mod{}_f{k}_dim{j}", i + 1));
                }
            }
        }
        names
    }

    /// Column names for a difference vector: `f{k}_b{j}`.
    pub fn difference_names(&self) -> Vec<String> {
        (0..self.history)
            .flat_map(|k| (0..self.behavior_dim).map(move |j| format!("f{k}_b{j}")))
            .collect()
    }

    pub fn behavior_names(&self) -> Vec<String> {
        (0..self.behavior_dim).map(|j| format!("b{j}")).collect()
    }
}

/// A stacked window of `c` feature frames, most recent first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureInstance(DVector<f64>);

impl FeatureInstance {
    pub fn from_vector(values: DVector<f64>, layout: &ModalityLayout) -> Result<Self> {
        if values.len() != layout.feature_dim() {
            return Err(Error::dim("feature instance length", layout.feature_dim(), values.len()));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    /// Splits the instance back into its frames, most recent first.
    pub fn frames(&self, layout: &ModalityLayout) -> Vec<Vec<f64>> {
        self.0
            .as_slice()
            .chunks(layout.frame_width())
            .map(<[f64]>::to_vec)
            .collect()
    }
}

/// Stacks `c` frames (most recent first) into one feature instance.
pub fn build_instance<F: AsRef<[f64]>>(frames: &[F], layout: &ModalityLayout) -> Result<FeatureInstance> {
    if frames.len() != layout.history() {
        return Err(Error::dim("frame count", layout.history(), frames.len()));
    }
    let q = layout.frame_width();
    let mut values = Vec::with_capacity(layout.feature_dim());
    for frame in frames {
        let frame = frame.as_ref();
        if frame.len() != q {
            return Err(Error::dim("frame width", q, frame.len()));
        }
        values.extend_from_slice(frame);
    }
    Ok(FeatureInstance(DVector::from_vec(values)))
}

/// Stacks per-frame `actual - expected` differences, most recent first.
pub fn build_differences<E: AsRef<[f64]>, A: AsRef<[f64]>>(
    expected: &[E],
    actual: &[A],
    layout: &ModalityLayout,
) -> Result<DVector<f64>> {
    let (c, r) = (layout.history(), layout.behavior_dim());
    if expected.len() != c {
        return Err(Error::dim("expected behavior count", c, expected.len()));
    }
    if actual.len() != c {
        return Err(Error::dim("actual behavior count", c, actual.len()));
    }
    let mut out = Vec::with_capacity(c * r);
    for (y, y_hat) in expected.iter().zip(actual) {
        let (y, y_hat) = (y.as_ref(), y_hat.as_ref());
        if y.len() != r {
            return Err(Error::dim("expected behavior width", r, y.len()));
        }
        if y_hat.len() != r {
            return Err(Error::dim("actual behavior width", r, y_hat.len()));
        }
        out.extend(y_hat.iter().zip(y).map(|(a, e)| a - e));
    }
    Ok(DVector::from_vec(out))
}

/// Aligned training matrices, one column per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    layout: ModalityLayout,
    features: DMatrix<f64>,
    expected: DMatrix<f64>,
    actual: DMatrix<f64>,
    differences: DMatrix<f64>,
}

impl TrainingSet {
    /// `features` is `d x n`, `expected` and `actual` are `r x n`, `differences`
    /// is `(r c) x n`.
    pub fn new(
        layout: ModalityLayout,
        features: DMatrix<f64>,
        expected: DMatrix<f64>,
        actual: DMatrix<f64>,
        differences: DMatrix<f64>,
    ) -> Result<Self> {
        let n = features.ncols();
        if n == 0 {
            return Err(Error::dim("instance count", 1, 0));
        }
        let checks = [
            ("feature rows", layout.feature_dim(), features.nrows()),
            ("expected behavior rows", layout.behavior_dim(), expected.nrows()),
            ("actual behavior rows", layout.behavior_dim(), actual.nrows()),
            ("difference rows", layout.difference_dim(), differences.nrows()),
            ("expected behavior columns", n, expected.ncols()),
            ("actual behavior columns", n, actual.ncols()),
            ("difference columns", n, differences.ncols()),
        ];
        for (what, want, got) in checks {
            if want != got {
                return Err(Error::dim(what, want, got));
            }
        }
        Ok(Self {
            layout,
            features,
            expected,
            actual,
            differences,
        })
    }

    pub fn layout(&self) -> &ModalityLayout {
        &self.layout
    }

    /// Number of instances `n`.
    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `X`, `d x n`.
    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    /// `Y`, `r x n`.
    pub fn expected(&self) -> &DMatrix<f64> {
        &self.expected
    }

    /// `Ŷ`, `r x n`.
    pub fn actual(&self) -> &DMatrix<f64> {
        &self.actual
    }

    /// `E`, `(r c) x n`.
    pub fn differences(&self) -> &DMatrix<f64> {
        &self.differences
    }
}

/// Feature weights, `d x r`, grouped by modality.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightW {
    values: DMatrix<f64>,
    layout: ModalityLayout,
}

impl WeightW {
    pub fn new(values: DMatrix<f64>, layout: ModalityLayout) -> Result<Self> {
        if values.nrows() != layout.feature_dim() {
            return Err(Error::dim("W rows", layout.feature_dim(), values.nrows()));
        }
        if values.ncols() != layout.behavior_dim() {
            return Err(Error::dim("W columns", layout.behavior_dim(), values.ncols()));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: &ModalityLayout) -> Self {
        Self {
            values: DMatrix::zeros(layout.feature_dim(), layout.behavior_dim()),
            layout: layout.clone(),
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn layout(&self) -> &ModalityLayout {
        &self.layout
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Modality block `W_i`, shape `(c q_i) x r`: the rows of modality `i` from
    /// every frame, in frame order.
    pub fn block(&self, i: usize) -> Result<DMatrix<f64>> {
        self.layout.check_modality(i)?;
        let rows: Vec<usize> = self.layout.modality_rows(i).collect();
        Ok(self.values.select_rows(rows.iter()))
    }

    /// Overwrites modality block `i`.
    pub fn set_block(&mut self, i: usize, block: &DMatrix<f64>) -> Result<()> {
        self.layout.check_modality(i)?;
        let rows: Vec<usize> = self.layout.modality_rows(i).collect();
        if block.nrows() != rows.len() || block.ncols() != self.layout.behavior_dim() {
            return Err(Error::dim("W block rows", rows.len(), block.nrows()));
        }
        for (src, &dst) in rows.iter().enumerate() {
            self.values.row_mut(dst).copy_from(&block.row(src));
        }
        Ok(())
    }

    /// Reassembles `W` from its `m` modality blocks.
    pub fn from_blocks(blocks: &[DMatrix<f64>], layout: &ModalityLayout) -> Result<Self> {
        if blocks.len() != layout.modalities() {
            return Err(Error::dim("W block count", layout.modalities(), blocks.len()));
        }
        let mut w = Self::zeros(layout);
        for (i, block) in blocks.iter().enumerate() {
            w.set_block(i, block)?;
        }
        Ok(w)
    }

    /// Frame slice `W^(k)`, shape `q x r`: rows of every modality for frame `k`.
    pub fn frame(&self, k: usize) -> Result<DMatrix<f64>> {
        self.layout.check_frame(k)?;
        let q = self.layout.frame_width();
        Ok(self.values.rows(k * q, q).into_owned())
    }
}

/// Difference weights, `(r c) x r`, grouped by history frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightU {
    values: DMatrix<f64>,
    layout: ModalityLayout,
}

impl WeightU {
    pub fn new(values: DMatrix<f64>, layout: ModalityLayout) -> Result<Self> {
        if values.nrows() != layout.difference_dim() {
            return Err(Error::dim("U rows", layout.difference_dim(), values.nrows()));
        }
        if values.ncols() != layout.behavior_dim() {
            return Err(Error::dim("U columns", layout.behavior_dim(), values.ncols()));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: &ModalityLayout) -> Self {
        Self {
            values: DMatrix::zeros(layout.difference_dim(), layout.behavior_dim()),
            layout: layout.clone(),
        }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn layout(&self) -> &ModalityLayout {
        &self.layout
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Temporal block `U^(k)`, `r x r`; `k = 0` is the most recent frame.
    pub fn block(&self, k: usize) -> Result<DMatrix<f64>> {
        self.layout.check_frame(k)?;
        let r = self.layout.behavior_dim();
        Ok(self.values.rows(k * r, r).into_owned())
    }

    pub fn from_blocks(blocks: &[DMatrix<f64>], layout: &ModalityLayout) -> Result<Self> {
        if blocks.len() != layout.history() {
            return Err(Error::dim("U block count", layout.history(), blocks.len()));
        }
        let r = layout.behavior_dim();
        let mut values = DMatrix::zeros(layout.difference_dim(), r);
        for (k, block) in blocks.iter().enumerate() {
            if block.shape() != (r, r) {
                return Err(Error::dim("U block rows", r, block.nrows()));
            }
            values.rows_mut(k * r, r).copy_from(block);
        }
        Ok(Self {
            values,
            layout: layout.clone(),
        })
    }
}
