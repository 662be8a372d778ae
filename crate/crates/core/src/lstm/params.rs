use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::codec::SequenceCodec;
use crate::error::ModelError;

/// Embedding and hidden widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingDims {
    pub token: usize,
    pub value: usize,
    pub taxonomy: usize,
    pub hidden: usize,
}

impl Default for EmbeddingDims {
    fn default() -> Self {
        Self {
            token: 16,
            value: 4,
            taxonomy: 4,
            hidden: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub vocab: usize,
    pub dims: EmbeddingDims,
    /// Category counts at taxonomy levels 1..=3. Each embedding table has
    /// one extra row 0 used by tokens without a taxonomy position.
    pub taxonomy_sizes: [usize; 3],
}

impl ModelShape {
    pub fn for_codec(codec: &SequenceCodec, dims: EmbeddingDims) -> Self {
        Self {
            vocab: codec.vocab().len(),
            dims,
            taxonomy_sizes: codec.level_sizes(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.dims.token + self.dims.value + 3 * self.dims.taxonomy
    }

    pub fn hidden(&self) -> usize {
        self.dims.hidden
    }
}

/// All learned parameters of the next-token model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub shape: ModelShape,
    pub token_embedding: Matrix,
    /// Scalar value feature → `value` dims: `w · v + b`.
    pub value_weight: Matrix,
    pub value_bias: Matrix,
    pub taxonomy_embeddings: [Matrix; 3],
    pub w_input: Matrix,
    pub w_forget: Matrix,
    pub w_output: Matrix,
    pub w_candidate: Matrix,
    pub b_input: Matrix,
    pub b_forget: Matrix,
    pub b_output: Matrix,
    pub b_candidate: Matrix,
    pub head_weight: Matrix,
    pub head_bias: Matrix,
}

pub const TENSOR_NAMES: [&str; 16] = [
    "token_embedding",
    "value_weight",
    "value_bias",
    "taxonomy_embedding_l1",
    "taxonomy_embedding_l2",
    "taxonomy_embedding_leaf",
    "w_input",
    "w_forget",
    "w_output",
    "w_candidate",
    "b_input",
    "b_forget",
    "b_output",
    "b_candidate",
    "head_weight",
    "head_bias",
];

impl LstmParams {
    /// All-zero parameters of the given shape.
    pub fn zeros(shape: ModelShape) -> Self {
        let h = shape.hidden();
        let z = shape.input_dim() + h;
        let d = shape.dims;
        let [l1, l2, l3] = shape.taxonomy_sizes;
        Self {
            shape,
            token_embedding: Matrix::zeros(shape.vocab, d.token),
            value_weight: Matrix::zeros(d.value, 1),
            value_bias: Matrix::zeros(d.value, 1),
            taxonomy_embeddings: [
                Matrix::zeros(l1 + 1, d.taxonomy),
                Matrix::zeros(l2 + 1, d.taxonomy),
                Matrix::zeros(l3 + 1, d.taxonomy),
            ],
            w_input: Matrix::zeros(h, z),
            w_forget: Matrix::zeros(h, z),
            w_output: Matrix::zeros(h, z),
            w_candidate: Matrix::zeros(h, z),
            b_input: Matrix::zeros(h, 1),
            b_forget: Matrix::zeros(h, 1),
            b_output: Matrix::zeros(h, 1),
            b_candidate: Matrix::zeros(h, 1),
            head_weight: Matrix::zeros(shape.vocab, h),
            head_bias: Matrix::zeros(shape.vocab, 1),
        }
    }

    /// Uniform(±1/√h) recurrent and head weights, Uniform(±0.1) embeddings,
    /// zero biases except the forget gate at 1.0.
    pub fn init(shape: ModelShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(shape);
        let k = 1.0 / (shape.hidden() as f64).sqrt();
        let mut fill = |m: &mut Matrix, scale: f64| {
            for v in &mut m.data {
                *v = rng.random_range(-scale..scale);
            }
        };
        fill(&mut params.token_embedding, 0.1);
        fill(&mut params.value_weight, 0.1);
        for table in &mut params.taxonomy_embeddings {
            fill(table, 0.1);
        }
        fill(&mut params.w_input, k);
        fill(&mut params.w_forget, k);
        fill(&mut params.w_output, k);
        fill(&mut params.w_candidate, k);
        fill(&mut params.head_weight, k);
        params.b_forget.data.fill(1.0);
        params
    }

    pub fn tensors(&self) -> [(&'static str, &Matrix); 16] {
        let [t1, t2, t3] = &self.taxonomy_embeddings;
        [
            (TENSOR_NAMES[0], &self.token_embedding),
            (TENSOR_NAMES[1], &self.value_weight),
            (TENSOR_NAMES[2], &self.value_bias),
            (TENSOR_NAMES[3], t1),
            (TENSOR_NAMES[4], t2),
            (TENSOR_NAMES[5], t3),
            (TENSOR_NAMES[6], &self.w_input),
            (TENSOR_NAMES[7], &self.w_forget),
            (TENSOR_NAMES[8], &self.w_output),
            (TENSOR_NAMES[9], &self.w_candidate),
            (TENSOR_NAMES[10], &self.b_input),
            (TENSOR_NAMES[11], &self.b_forget),
            (TENSOR_NAMES[12], &self.b_output),
            (TENSOR_NAMES[13], &self.b_candidate),
            (TENSOR_NAMES[14], &self.head_weight),
            (TENSOR_NAMES[15], &self.head_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Matrix); 16] {
        let [t1, t2, t3] = &mut self.taxonomy_embeddings;
        [
            (TENSOR_NAMES[0], &mut self.token_embedding),
            (TENSOR_NAMES[1], &mut self.value_weight),
            (TENSOR_NAMES[2], &mut self.value_bias),
            (TENSOR_NAMES[3], t1),
            (TENSOR_NAMES[4], t2),
            (TENSOR_NAMES[5], t3),
            (TENSOR_NAMES[6], &mut self.w_input),
            (TENSOR_NAMES[7], &mut self.w_forget),
            (TENSOR_NAMES[8], &mut self.w_output),
            (TENSOR_NAMES[9], &mut self.w_candidate),
            (TENSOR_NAMES[10], &mut self.b_input),
            (TENSOR_NAMES[11], &mut self.b_forget),
            (TENSOR_NAMES[12], &mut self.b_output),
            (TENSOR_NAMES[13], &mut self.b_candidate),
            (TENSOR_NAMES[14], &mut self.head_weight),
            (TENSOR_NAMES[15], &mut self.head_bias),
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape)
    }

    pub fn add_assign(&mut self, other: &LstmParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, m) in self.tensors_mut() {
            m.scale(factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().map(|(_, m)| m.sum_squares()).sum::<f64>().sqrt()
    }

    /// First tensor holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.tensors().into_iter().find(|(_, m)| !m.all_finite()).map(|(name, _)| name)
    }

    /// Checks every tensor against the shape record.
    pub fn check_shapes(&self) -> Result<(), ModelError> {
        let expected = Self::zeros(self.shape);
        for ((name, got), (_, want)) in self.tensors().into_iter().zip(expected.tensors()) {
            if got.rows != want.rows || got.cols != want.cols || got.data.len() != want.data.len() {
                return Err(ModelError::ShapeMismatch(format!(
                    "{name}: expected {}x{}, found {}x{} ({} values)",
                    want.rows,
                    want.cols,
                    got.rows,
                    got.cols,
                    got.data.len()
                )));
            }
        }
        Ok(())
    }
}
