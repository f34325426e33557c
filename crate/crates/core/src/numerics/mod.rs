//! Fully connected networks with hand-written backprop, Adam, and a
//! central-difference gradient checker.

mod adam;
mod grad_check;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use grad_check::{grad_check, GradCheckReport, FD_STEP};
pub use mlp::{Mlp, Tape};

/// `target <- tau * online + (1 - tau) * target`, elementwise.
pub fn polyak(online: &[f64], target: &mut [f64], tau: f64) {
    debug_assert_eq!(online.len(), target.len());
    for (t, &o) in target.iter_mut().zip(online) {
        *t = tau * o + (1.0 - tau) * *t;
    }
}
