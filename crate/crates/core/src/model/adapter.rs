//! Per-block trainable refinement applied after each frozen encoder block.
//!
//! A residual low-rank update `x + U·V·x`. `U` starts at zero so a fresh
//! adapter is the identity.

use rand::Rng;

use crate::autograd::{Tape, Var};

use super::params::{normal, Graph, ParamId, ParamStore};
use crate::autograd::Matrix;

#[derive(Clone, Copy, Debug)]
pub struct StageAdapter {
    /// `Ĉ × rank`.
    pub up: ParamId,
    /// `rank × Ĉ`.
    pub down: ParamId,
}

pub fn low_rank_refine(tape: &mut Tape, x: Var, up: Var, down: Var) -> Var {
    let z = tape.matmul(down, x);
    let z = tape.matmul(up, z);
    tape.add(x, z)
}

impl StageAdapter {
    pub fn register(
        store: &mut ParamStore,
        block: usize,
        channels: usize,
        rank: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let up = store.add(
            format!("adapter.block{block}.up"),
            Matrix::zeros((channels, rank)),
            true,
        );
        let down = store.add(
            format!("adapter.block{block}.down"),
            normal(rng, rank, channels, 1.0 / (channels as f64).sqrt()),
            true,
        );
        Self { up, down }
    }

    pub fn apply(&self, g: &mut Graph<'_>, x: Var) -> Var {
        let up = g.param(self.up);
        let down = g.param(self.down);
        low_rank_refine(&mut g.tape, x, up, down)
    }
}
