//! Small dense-network toolkit in double precision: forward and exact
//! reverse-mode passes for fixed MLP shapes, Adam, checkpoints and a
//! central-difference gradient checker.

mod adam;
mod checkpoint;
mod gradcheck;
mod mlp;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, CheckpointKind};
pub use gradcheck::{grad_check, relative_error, GRAD_CHECK_FLOOR, GRAD_CHECK_STEP};
pub use mlp::{Activation, Dense, ForwardCache, NetParams, NetSpec};

/// Anything exposing its trainable values as an ordered list of flat slices.
///
/// Gradients use the same type, so optimizers can zip the two lists.
pub trait Parameters {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }
}

/// `target <- (1 - tau) * target + tau * source`, element-wise.
pub fn soft_update<P: Parameters>(target: &mut P, source: &P, tau: f64) -> crate::Result<()> {
    let src = source.param_slices();
    let mut dst = target.param_slices_mut();
    if src.len() != dst.len() || src.iter().zip(dst.iter()).any(|(a, b)| a.len() != b.len()) {
        return Err(crate::Error::shape(
            format!("{} slices", dst.len()),
            format!("{} slices", src.len()),
        ));
    }
    for (d, s) in dst.iter_mut().zip(src) {
        for (t, v) in d.iter_mut().zip(s) {
            *t = (1.0 - tau) * *t + tau * v;
        }
    }
    Ok(())
}
