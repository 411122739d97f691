//! Character-level CNN over embedding sequences, with training, whole-sample
//! evaluation and sliding-window document classification.

mod eval;
mod model;
mod train;

pub use eval::{evaluate_sliding, evaluate_whole, load_classifier, save_classifier, ClcnnMeta, SlidingResult, WholeEval, WindowScore};
pub use model::{argmax, build_network, init_params, softmax, ClcnnArch, ClcnnModel, MIN_WINDOW};
pub use train::{ce_step, check_ce_gradients, predict_probs, train_classifier, CeOutput, ClcnnConfig, EpochRecord, History};
