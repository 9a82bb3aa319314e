use rand::Rng;

use super::graph::{Graph, Var};
use super::matrix::Matrix;
use super::params::{xavier_uniform, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Parameters of a single-layer GRU.
///
/// Gate columns are laid out as `[update | reset | candidate]`:
///
/// ```text
/// z  = σ(x W_z + h U_z + b_z)
/// r  = σ(x W_r + h U_r + b_r)
/// n  = tanh(x W_n + (r ⊙ h) U_n + b_n)
/// h' = (1 - z) ⊙ h + z ⊙ n
/// ```
#[derive(Clone, Copy, Debug)]
pub struct Gru {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_input: ParamId,
    pub w_hidden_gates: ParamId,
    pub w_hidden_candidate: ParamId,
    pub bias: ParamId,
}

impl Gru {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let h = hidden_dim;
        let w_input = store.register(
            format!("{prefix}.w_input"),
            xavier_uniform(input_dim, 3 * h, rng),
        )?;
        let w_hidden_gates =
            store.register(format!("{prefix}.w_hidden_gates"), xavier_uniform(h, 2 * h, rng))?;
        let w_hidden_candidate =
            store.register(format!("{prefix}.w_hidden_candidate"), xavier_uniform(h, h, rng))?;
        let bias = store.register(format!("{prefix}.bias"), Matrix::zeros(1, 3 * h))?;
        Ok(Self {
            input_dim,
            hidden_dim,
            w_input,
            w_hidden_gates,
            w_hidden_candidate,
            bias,
        })
    }

    /// Input-side gate pre-activations `x W + b` for every row of `inputs`.
    pub fn project_inputs(&self, g: &mut Graph, inputs: Var) -> Result<Var> {
        let w = g.param(self.w_input);
        let b = g.param(self.bias);
        let xw = g.matmul(inputs, w)?;
        g.add_row(xw, b)
    }

    /// One recurrence step from precomputed input projections (`1 x 3h`).
    pub fn step(&self, g: &mut Graph, x_proj: Var, h_prev: Var) -> Result<Var> {
        let h = self.hidden_dim;
        if g.shape(h_prev) != (1, h) || g.shape(x_proj) != (1, 3 * h) {
            return Err(Error::Dimension {
                op: "gru_cell",
                left: g.shape(x_proj),
                right: g.shape(h_prev),
            });
        }
        let u_gates = g.param(self.w_hidden_gates);
        let u_cand = g.param(self.w_hidden_candidate);

        let x_gates = g.slice_cols(x_proj, 0, 2 * h)?;
        let x_cand = g.slice_cols(x_proj, 2 * h, 3 * h)?;
        let hu = g.matmul(h_prev, u_gates)?;
        let gate_pre = g.add(x_gates, hu)?;
        let gates = g.sigmoid(gate_pre);
        let z = g.slice_cols(gates, 0, h)?;
        let r = g.slice_cols(gates, h, 2 * h)?;

        let rh = g.mul(r, h_prev)?;
        let rhu = g.matmul(rh, u_cand)?;
        let cand_pre = g.add(x_cand, rhu)?;
        let n = g.tanh(cand_pre);

        let delta = g.sub(n, h_prev)?;
        let zd = g.mul(z, delta)?;
        g.add(h_prev, zd)
    }

    /// Left-to-right scan from a zero state. Returns all states (`l x h`)
    /// and the final state (`1 x h`).
    pub fn run(&self, g: &mut Graph, inputs: Var) -> Result<(Var, Var)> {
        let (len, dim) = g.shape(inputs);
        if len == 0 {
            return Err(Error::Domain("GRU over an empty sequence".into()));
        }
        if dim != self.input_dim {
            return Err(Error::Dimension {
                op: "gru_run",
                left: (len, dim),
                right: (self.input_dim, self.hidden_dim),
            });
        }
        let proj = self.project_inputs(g, inputs)?;
        let mut h = g.constant(Matrix::zeros(1, self.hidden_dim));
        let mut states = Vec::with_capacity(len);
        for t in 0..len {
            let x_t = g.row(proj, t)?;
            h = self.step(g, x_t, h)?;
            states.push(h);
        }
        let all = g.concat_rows(&states)?;
        Ok((all, h))
    }
}

/// Single GRU update on plain vectors.
pub fn gru_cell(store: &ParamStore, gru: &Gru, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    let mut g = Graph::new(store);
    let x = g.constant(Matrix::row_vector(x)?);
    let h = g.constant(Matrix::row_vector(h_prev)?);
    let proj = gru.project_inputs(&mut g, x)?;
    let out = gru.step(&mut g, proj, h)?;
    Ok(g.value(out).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::matrix::sigmoid_scalar;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(d_in: usize, h: usize, seed: u64) -> (ParamStore, Gru) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let gru = Gru::register(&mut store, "gru", d_in, h, &mut rng).unwrap();
        let bias = store.get_mut(gru.bias);
        for v in bias.value.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        (store, gru)
    }

    /// Straight-line evaluation of the gate equations, independent of the graph.
    fn oracle(store: &ParamStore, gru: &Gru, x: &[f64], hp: &[f64]) -> Vec<f64> {
        let h = gru.hidden_dim;
        let wi = store.value(gru.w_input);
        let ug = store.value(gru.w_hidden_gates);
        let uc = store.value(gru.w_hidden_candidate);
        let b = store.value(gru.bias);
        let xw = |col: usize| -> f64 { (0..x.len()).map(|k| x[k] * wi.get(k, col)).sum::<f64>() + b.get(0, col) };
        let z: Vec<f64> = (0..h)
            .map(|j| sigmoid_scalar(xw(j) + (0..h).map(|k| hp[k] * ug.get(k, j)).sum::<f64>()))
            .collect();
        let r: Vec<f64> = (0..h)
            .map(|j| sigmoid_scalar(xw(h + j) + (0..h).map(|k| hp[k] * ug.get(k, h + j)).sum::<f64>()))
            .collect();
        let n: Vec<f64> = (0..h)
            .map(|j| (xw(2 * h + j) + (0..h).map(|k| r[k] * hp[k] * uc.get(k, j)).sum::<f64>()).tanh())
            .collect();
        (0..h).map(|j| (1.0 - z[j]) * hp[j] + z[j] * n[j]).collect()
    }

    #[test]
    fn zero_weights_halve_previous_state() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gru = Gru::register(&mut store, "gru", 3, 2, &mut rng).unwrap();
        for p in store.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        let out = gru_cell(&store, &gru, &[0.3, -1.0, 2.0], &[0.8, -0.4]).unwrap();
        assert_eq!(out, vec![0.4, -0.2]);
    }

    #[test]
    fn matches_straight_line_oracle() {
        let (store, gru) = setup(4, 3, 11);
        let x = [0.2, -0.7, 1.1, 0.05];
        let hp = [0.3, -0.1, 0.6];
        let got = gru_cell(&store, &gru, &x, &hp).unwrap();
        let want = oracle(&store, &gru, &x, &hp);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn length_one_sequence_equals_single_step() {
        let (store, gru) = setup(4, 3, 12);
        let x = [0.5, 0.1, -0.3, 0.9];
        let mut g = Graph::new(&store);
        let xs = g.constant(Matrix::row_vector(&x).unwrap());
        let (states, last) = gru.run(&mut g, xs).unwrap();
        let step = gru_cell(&store, &gru, &x, &[0.0; 3]).unwrap();
        assert_eq!(g.value(last).data(), step.as_slice());
        assert_eq!(g.value(states).data(), step.as_slice());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (store, gru) = setup(4, 3, 13);
        assert!(gru_cell(&store, &gru, &[1.0; 4], &[0.0; 2]).is_err());
    }
}
