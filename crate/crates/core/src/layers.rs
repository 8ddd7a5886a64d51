//! Building blocks shared by the encoders, interaction module and decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Float, ParamId, ParameterStore, Result, Tape, Tensor, Var};

/// Registers parameters with Gaussian initial values.
pub struct Init<'s> {
    store: &'s mut ParameterStore,
    rng: ChaCha8Rng,
    std: Float,
}

impl<'s> Init<'s> {
    pub fn new(store: &'s mut ParameterStore, seed: u64, std: Float) -> Self {
        Init {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            std,
        }
    }

    pub fn normal(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let t = Tensor::randn(shape.to_vec(), self.std, &mut self.rng);
        self.store.insert(name, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: Float) -> Result<ParamId> {
        self.store.insert(name, Tensor::filled(shape.to_vec(), value))
    }
}

/// `x · W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, inputs: usize, outputs: usize) -> Result<Self> {
        Ok(Linear {
            w: init.normal(&format!("{name}.w"), &[inputs, outputs])?,
            b: init.normal(&format!("{name}.b"), &[1, outputs])?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.w), tape.param(self.b));
        tape.affine(x, w, b)
    }
}

/// Single-direction LSTM with gate order input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

/// Per-step outputs of an LSTM run, in input order.
pub struct LstmRun {
    pub states: Var,
    pub last_h: Var,
    pub last_c: Var,
}

impl LstmCell {
    pub fn new(init: &mut Init, name: &str, inputs: usize, hidden: usize) -> Result<Self> {
        Ok(LstmCell {
            w_x: init.normal(&format!("{name}.w_x"), &[inputs, 4 * hidden])?,
            w_h: init.normal(&format!("{name}.w_h"), &[hidden, 4 * hidden])?,
            b: init.normal(&format!("{name}.b"), &[1, 4 * hidden])?,
            hidden,
        })
    }

    /// Input projection `x · W_x + b` for a block of rows.
    pub fn project_inputs(&self, tape: &mut Tape, xs: Var) -> Result<Var> {
        let (w, b) = (tape.param(self.w_x), tape.param(self.b));
        tape.affine(xs, w, b)
    }

    /// One recurrence step from a projected input row.
    pub fn step(&self, tape: &mut Tape, x_proj: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let w_h = tape.param(self.w_h);
        let rec = tape.matmul(h, w_h)?;
        let z = tape.add(x_proj, rec)?;
        let n = self.hidden;
        let i = tape.slice(z, 1, 0, n)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice(z, 1, n, n)?;
        let f = tape.sigmoid(f)?;
        let g = tape.slice(z, 1, 2 * n, n)?;
        let g = tape.tanh(g)?;
        let o = tape.slice(z, 1, 3 * n, n)?;
        let o = tape.sigmoid(o)?;
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        let c_new = tape.add(keep, write)?;
        let squashed = tape.tanh(c_new)?;
        let h_new = tape.mul(o, squashed)?;
        Ok((h_new, c_new))
    }

    /// Runs over the rows of `xs` from zero initial state, optionally right to left.
    pub fn run(&self, tape: &mut Tape, xs: Var, reverse: bool) -> Result<LstmRun> {
        let steps = tape.shape(xs)[0];
        let proj = self.project_inputs(tape, xs)?;
        let mut h = tape.zeros(&[1, self.hidden]);
        let mut c = tape.zeros(&[1, self.hidden]);
        let mut hs = vec![h; steps];
        let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
        for t in order {
            let x = tape.row(proj, t)?;
            (h, c) = self.step(tape, x, h, c)?;
            hs[t] = h;
        }
        let states = tape.concat(&hs, 0)?;
        Ok(LstmRun {
            states,
            last_h: h,
            last_c: c,
        })
    }
}

/// Bidirectional LSTM whose per-step output is `[forward; backward]`.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

pub struct BiLstmOutput {
    /// `T × 2h` per-step states.
    pub states: Var,
    /// `1 × 2h`: last forward state and the backward state after reaching position 0.
    pub final_state: Var,
    /// `T × h` forward half, kept for directional checks.
    pub forward: Var,
}

impl BiLstm {
    pub fn new(init: &mut Init, name: &str, inputs: usize, hidden_per_direction: usize) -> Result<Self> {
        Ok(BiLstm {
            fwd: LstmCell::new(init, &format!("{name}.fwd"), inputs, hidden_per_direction)?,
            bwd: LstmCell::new(init, &format!("{name}.bwd"), inputs, hidden_per_direction)?,
        })
    }

    /// Both directions share one cell.
    pub fn tied(cell: LstmCell) -> Self {
        BiLstm {
            fwd: cell.clone(),
            bwd: cell,
        }
    }

    pub fn forward(&self, tape: &mut Tape, xs: Var) -> Result<BiLstmOutput> {
        let f = self.fwd.run(tape, xs, false)?;
        let b = self.bwd.run(tape, xs, true)?;
        let states = tape.concat(&[f.states, b.states], 1)?;
        let final_state = tape.concat(&[f.last_h, b.last_h], 1)?;
        Ok(BiLstmOutput {
            states,
            final_state,
            forward: f.states,
        })
    }
}
