//! Minimal neural-network core: dense, bilinear and LSTM layers with exact
//! manual gradients, losses, Adam and finite-difference checking.

mod adam;
mod gradcheck;
mod lstm;
mod loss;
mod ops;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use lstm::{lstm_cell, LstmCell, LstmStep};
pub use loss::{log_sum_exp, sigmoid, sigmoid_bce_loss, softmax, softmax_ce_loss};
pub use ops::{affine_backward, affine_forward, bilinear, bilinear_backward, Affine, AffineGrads, BilinearGrads};
pub use tensor::{HasParams, Initializer, Parameter, Tensor};

pub(crate) use ops::{add_assign, dot, matvec_acc, matvec_t_acc, outer_acc};
