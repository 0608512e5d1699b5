use std::sync::Arc;

use super::ObjectiveError;

/// Name and shape of one parameter block (a weight matrix or bias vector).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl BlockSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered list of blocks shared by every PE in a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelLayout {
    blocks: Vec<BlockSpec>,
}

impl ModelLayout {
    pub fn new(blocks: Vec<BlockSpec>) -> Result<Self, ObjectiveError> {
        if blocks.is_empty() {
            return Err(ObjectiveError::EmptyLayout);
        }
        if let Some(b) = blocks.iter().find(|b| b.is_empty()) {
            return Err(ObjectiveError::EmptyBlock(b.name.clone()));
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_len(&self, block: usize) -> usize {
        self.blocks[block].len()
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(BlockSpec::len).sum()
    }
}

/// One PE's model: a flattened value vector per block.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    layout: Arc<ModelLayout>,
    blocks: Vec<Vec<f64>>,
}

impl ModelState {
    pub fn zeros(layout: Arc<ModelLayout>) -> Self {
        let blocks = layout.blocks().iter().map(|b| vec![0.0; b.len()]).collect();
        Self { layout, blocks }
    }

    pub fn from_blocks(
        layout: Arc<ModelLayout>,
        blocks: Vec<Vec<f64>>,
    ) -> Result<Self, ObjectiveError> {
        if blocks.len() != layout.num_blocks() {
            return Err(ObjectiveError::DimensionMismatch {
                expected: layout.num_blocks(),
                got: blocks.len(),
            });
        }
        for (spec, b) in layout.blocks().iter().zip(&blocks) {
            if spec.len() != b.len() {
                return Err(ObjectiveError::DimensionMismatch {
                    expected: spec.len(),
                    got: b.len(),
                });
            }
        }
        Ok(Self { layout, blocks })
    }

    pub fn from_flat(layout: Arc<ModelLayout>, flat: &[f64]) -> Result<Self, ObjectiveError> {
        if flat.len() != layout.total_dim() {
            return Err(ObjectiveError::DimensionMismatch {
                expected: layout.total_dim(),
                got: flat.len(),
            });
        }
        let mut blocks = Vec::with_capacity(layout.num_blocks());
        let mut offset = 0;
        for spec in layout.blocks() {
            blocks.push(flat[offset..offset + spec.len()].to_vec());
            offset += spec.len();
        }
        Ok(Self { layout, blocks })
    }

    pub fn layout(&self) -> &Arc<ModelLayout> {
        &self.layout
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn total_dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.blocks[i]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.blocks[i]
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn set_block(&mut self, i: usize, values: &[f64]) {
        self.blocks[i].copy_from_slice(values);
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.iter().flatten().copied().collect()
    }

    pub fn same_layout(&self, other: &ModelState) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ModelState) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for x in self.blocks.iter_mut().flatten() {
            *x *= alpha;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.blocks.iter().flatten().map(|x| x * x).sum()
    }

    pub fn distance_sq(&self, other: &ModelState) -> f64 {
        self.blocks
            .iter()
            .flatten()
            .zip(other.blocks.iter().flatten())
            .map(|(a, b)| (a - b).powi(2))
            .sum()
    }

    /// Arithmetic mean of equally shaped models.
    pub fn average(models: &[ModelState]) -> ModelState {
        assert!(!models.is_empty(), "cannot average zero models");
        let mut out = ModelState::zeros(models[0].layout.clone());
        let inv = 1.0 / models.len() as f64;
        for m in models {
            out.axpy(1.0, m);
        }
        out.scale(inv);
        out
    }
}
