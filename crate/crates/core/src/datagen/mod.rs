//! Synthetic multimodal phantoms and perturbed training pairs.

mod perturb;
mod phantom;
mod store;

pub use perturb::{gen_training_set, sample_perturbation, scale_to_tre, PerturbationRanges};
pub use phantom::{make_phantom, PhantomCase, PhantomConfig};
pub use store::{
    list_cases, read_case, read_dataset, read_index, read_sample, write_case, write_dataset, DatasetEntry,
    DatasetIndex, DATASET_VERSION,
};
