//! Software emulation of the low-precision number formats and accumulated
//! matrix multiplies the kernels are built from.

mod fp16;
mod fp8;
mod matmul;

pub use fp16::{round_to_fp16, round_to_fp16_value, Fp16, FP16_MAX, FP16_MIN_NORMAL};
pub use fp8::{encode_fp8, round_to_fp8_value, Fp8, Fp8Format};
pub use matmul::{
    fp16_matmul_fp16acc, int8_matmul_i32acc, matmul_fp32acc, MAX_INT8_INNER_DIM,
};

pub(crate) use matmul::{dot_i8, fp16_gemm_accumulate};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NumericError {
    #[error("dimension mismatch: lhs is {lhs:?}, rhs is {rhs:?}")]
    DimensionMismatch {
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("inner dimension {k} exceeds the i32 overflow guard of {max}")]
    InnerDimTooLarge { k: usize, max: usize },
    #[error("INT8 operand outside the symmetric range [-127, 127]")]
    Int8OutOfRange,
    #[error("non-finite operand")]
    NonFinite,
    #[error("binary16 accumulator overflowed at ({row}, {col})")]
    Fp16Overflow { row: usize, col: usize },
}
