//! Binary tensor files, checkpoints and dataset directories. All integers
//! are little-endian.

mod checkpoint;
mod dataset;
mod tensor_file;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_model, model_from_records,
    model_records, save_checkpoint, save_model, Records, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
    CONFIG_RECORD,
};
pub use dataset::{load_dataset, save_dataset, IMAGES_DIR, INSTANCES_DIR, LABELS_DIR};
pub use tensor_file::{
    decode_tensor, encode_tensor, encode_tensor_into, load_tensor, save_tensor, AnyTensor,
    DTYPE_INT32, DTYPE_REAL32, TENSOR_MAGIC, TENSOR_VERSION,
};
