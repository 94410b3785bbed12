//! Small shared layer helpers: linear maps and layer-norm parameter pairs.

use crate::error::Result;
use crate::params::{Init, ParamId, ParamStore};
use crate::real::Real;
use crate::rng::Prng;
use crate::tape::{Tape, Var};

/// Tokens with the spatial extents they were flattened from.
#[derive(Debug, Clone, Copy)]
pub struct TokenMap {
    pub var: Var,
    pub h: usize,
    pub w: usize,
}

impl TokenMap {
    pub fn new<T: Real>(tape: &Tape<T>, var: Var, h: usize, w: usize) -> Result<TokenMap> {
        let sh = tape.shape(var);
        if sh.len() != 2 || sh[0] != h * w {
            return Err(crate::error::Error::contract(format!(
                "token map needs [{h}*{w}={}, C] tokens with spatial metadata, got {sh:?}",
                h * w
            )));
        }
        Ok(TokenMap { var, h, w })
    }
}

pub fn linear<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    w: ParamId,
) -> Result<Var> {
    let wv = tape.param(store, w);
    tape.matmul(x, wv)
}

pub fn linear_bias<T: Real>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    x: Var,
    w: ParamId,
    b: ParamId,
) -> Result<Var> {
    let wv = tape.param(store, w);
    let bv = tape.param(store, b);
    let y = tape.matmul(x, wv)?;
    tape.add(y, bv)
}

#[derive(Debug, Clone, Copy)]
pub struct LnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LnParams {
    pub fn register<T: Real>(store: &mut ParamStore<T>, prefix: &str, dim: usize) -> LnParams {
        let mut unused = Prng::new(0);
        LnParams {
            gamma: store.register(&format!("{prefix}.gamma"), &[dim], Init::Ones, &mut unused),
            beta: store.register(&format!("{prefix}.beta"), &[dim], Init::Zeros, &mut unused),
            eps: 1e-6,
        }
    }

    pub fn apply<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
    ) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layernorm(x, g, b, self.eps)
    }
}
