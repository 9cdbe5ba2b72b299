//! Stacked GRU with a linear head, batched forward pass and exact BPTT.
//!
//! Batches are column-major: every input step is an `input_dim × B` matrix,
//! one column per window.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::loss::{huber_grad, huber_loss};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Uniform on `±√(6 / (fan_in + fan_out))` with `fan_in = cols`, `fan_out = rows`.
pub fn glorot_init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    assert!(rows > 0 && cols > 0, "glorot_init needs positive dims");
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    // fill row by row so the draw order matches the row-major file layout
    let data: Vec<f64> = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruLayerParams {
    pub w_uz: DMatrix<f64>,
    pub w_ur: DMatrix<f64>,
    pub w_uh: DMatrix<f64>,
    pub w_hz: DMatrix<f64>,
    pub w_hr: DMatrix<f64>,
    pub w_hh: DMatrix<f64>,
    pub b_z: DVector<f64>,
    pub b_r: DVector<f64>,
    pub b_h: DVector<f64>,
}

impl GruLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        GruLayerParams {
            w_uz: DMatrix::zeros(hidden, input),
            w_ur: DMatrix::zeros(hidden, input),
            w_uh: DMatrix::zeros(hidden, input),
            w_hz: DMatrix::zeros(hidden, hidden),
            w_hr: DMatrix::zeros(hidden, hidden),
            w_hh: DMatrix::zeros(hidden, hidden),
            b_z: DVector::zeros(hidden),
            b_r: DVector::zeros(hidden),
            b_h: DVector::zeros(hidden),
        }
    }

    pub fn glorot<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        GruLayerParams {
            w_uz: glorot_init(hidden, input, rng),
            w_ur: glorot_init(hidden, input, rng),
            w_uh: glorot_init(hidden, input, rng),
            w_hz: glorot_init(hidden, hidden, rng),
            w_hr: glorot_init(hidden, hidden, rng),
            w_hh: glorot_init(hidden, hidden, rng),
            ..Self::zeros(input, hidden)
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_uz.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_uz.nrows()
    }

    /// One cell update for a single input vector.
    pub fn step(&self, u: &DVector<f64>, h_prev: &DVector<f64>) -> DVector<f64> {
        let z = (&self.w_uz * u + &self.w_hz * h_prev + &self.b_z).map(sigmoid);
        let r = (&self.w_ur * u + &self.w_hr * h_prev + &self.b_r).map(sigmoid);
        let c = (&self.w_uh * u + &self.w_hh * r.component_mul(h_prev) + &self.b_h).map(f64::tanh);
        h_prev + z.component_mul(&(c - h_prev))
    }

    fn slices(&self) -> [&[f64]; 9] {
        [
            self.w_uz.as_slice(),
            self.w_ur.as_slice(),
            self.w_uh.as_slice(),
            self.w_hz.as_slice(),
            self.w_hr.as_slice(),
            self.w_hh.as_slice(),
            self.b_z.as_slice(),
            self.b_r.as_slice(),
            self.b_h.as_slice(),
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 9] {
        let GruLayerParams {
            w_uz,
            w_ur,
            w_uh,
            w_hz,
            w_hr,
            w_hh,
            b_z,
            b_r,
            b_h,
        } = self;
        [
            w_uz.as_mut_slice(),
            w_ur.as_mut_slice(),
            w_uh.as_mut_slice(),
            w_hz.as_mut_slice(),
            w_hr.as_mut_slice(),
            w_hh.as_mut_slice(),
            b_z.as_mut_slice(),
            b_r.as_mut_slice(),
            b_h.as_mut_slice(),
        ]
    }

    /// `(rows, cols)` of each tensor in [`Self::slices`] order.
    fn shapes(&self) -> [(usize, usize); 9] {
        let (h, i) = (self.hidden_dim(), self.input_dim());
        [
            (h, i),
            (h, i),
            (h, i),
            (h, h),
            (h, h),
            (h, h),
            (h, 1),
            (h, 1),
            (h, 1),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Per-layer hidden vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub h: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruNetwork {
    pub layers: Vec<GruLayerParams>,
    pub head: Linear,
}

/// Everything the backward pass needs from one cell evaluation.
struct StepCache {
    x: DMatrix<f64>,
    h_prev: DMatrix<f64>,
    z: DMatrix<f64>,
    r: DMatrix<f64>,
    rh: DMatrix<f64>,
    c: DMatrix<f64>,
}

fn add_bias(mut m: DMatrix<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    for mut col in m.column_iter_mut() {
        col += b;
    }
    m
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    m.column_iter()
        .fold(DVector::zeros(m.nrows()), |acc, c| acc + c)
}

impl GruNetwork {
    pub fn zeros(input: usize, hidden: usize, layers: usize, output: usize) -> Self {
        assert!(layers > 0);
        GruNetwork {
            layers: (0..layers)
                .map(|l| GruLayerParams::zeros(if l == 0 { input } else { hidden }, hidden))
                .collect(),
            head: Linear {
                w: DMatrix::zeros(output, hidden),
                b: DVector::zeros(output),
            },
        }
    }

    pub fn glorot<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        layers: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        assert!(layers > 0);
        let layers = (0..layers)
            .map(|l| GruLayerParams::glorot(if l == 0 { input } else { hidden }, hidden, rng))
            .collect();
        GruNetwork {
            layers,
            head: Linear {
                w: glorot_init(output, hidden, rng),
                b: DVector::zeros(output),
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.input_dim(),
            self.hidden_dim(),
            self.num_layers(),
            self.output_dim(),
        )
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].hidden_dim()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn output_dim(&self) -> usize {
        self.head.w.nrows()
    }

    /// All parameter tensors in a fixed order; storage is column-major.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.layers.iter().flat_map(|l| l.slices()).collect();
        out.push(self.head.w.as_slice());
        out.push(self.head.b.as_slice());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let Linear { w, b } = &mut self.head;
        let mut out: Vec<&mut [f64]> = self
            .layers
            .iter_mut()
            .flat_map(|l| l.slices_mut())
            .collect();
        out.push(w.as_mut_slice());
        out.push(b.as_mut_slice());
        out
    }

    /// `(rows, cols)` of each entry of [`Self::tensors`].
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<_> = self.layers.iter().flat_map(|l| l.shapes()).collect();
        out.push(self.head.w.shape());
        out.push((self.head.b.len(), 1));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn zero_state(&self) -> HiddenState {
        HiddenState {
            h: vec![DVector::zeros(self.hidden_dim()); self.num_layers()],
        }
    }

    /// Advance every layer by one input step.
    pub fn step(&self, u: &DVector<f64>, state: &HiddenState) -> HiddenState {
        let mut x = u.clone();
        let mut h = Vec::with_capacity(self.layers.len());
        for (layer, h_prev) in self.layers.iter().zip(&state.h) {
            x = layer.step(&x, h_prev);
            h.push(x.clone());
        }
        HiddenState { h }
    }

    pub fn readout(&self, state: &HiddenState) -> DVector<f64> {
        &self.head.w * state.h.last().expect("at least one layer") + &self.head.b
    }

    /// Many-to-one evaluation of one window from a zero hidden state.
    pub fn forward_window(&self, window: &[DVector<f64>]) -> DVector<f64> {
        let state = window
            .iter()
            .fold(self.zero_state(), |s, u| self.step(u, &s));
        self.readout(&state)
    }

    fn forward_cached(&self, inputs: &[DMatrix<f64>]) -> (DMatrix<f64>, Vec<Vec<StepCache>>) {
        let batch = inputs[0].ncols();
        let hidden = self.hidden_dim();
        let mut caches: Vec<Vec<StepCache>> = (0..self.layers.len())
            .map(|_| Vec::with_capacity(inputs.len()))
            .collect();
        let mut h: Vec<DMatrix<f64>> = vec![DMatrix::zeros(hidden, batch); self.layers.len()];
        for u in inputs {
            let mut x = u.clone();
            for (l, p) in self.layers.iter().enumerate() {
                let h_prev = std::mem::replace(&mut h[l], DMatrix::zeros(0, 0));
                let z = add_bias(&p.w_uz * &x + &p.w_hz * &h_prev, &p.b_z).map(sigmoid);
                let r = add_bias(&p.w_ur * &x + &p.w_hr * &h_prev, &p.b_r).map(sigmoid);
                let rh = r.component_mul(&h_prev);
                let c = add_bias(&p.w_uh * &x + &p.w_hh * &rh, &p.b_h).map(f64::tanh);
                let h_new = &h_prev + z.component_mul(&(&c - &h_prev));
                caches[l].push(StepCache {
                    x,
                    h_prev,
                    z,
                    r,
                    rh,
                    c,
                });
                h[l] = h_new.clone();
                x = h_new;
            }
        }
        let top = h.last().expect("at least one layer");
        let y = add_bias(&self.head.w * top, &self.head.b);
        (y, caches)
    }

    /// Predictions for a batch: `inputs[t]` is `input_dim × B`, result `output_dim × B`.
    pub fn forward_batch(&self, inputs: &[DMatrix<f64>]) -> DMatrix<f64> {
        self.forward_cached(inputs).0
    }

    /// Summed Huber loss over the batch and its exact gradient.
    pub fn loss_and_gradient(
        &self,
        inputs: &[DMatrix<f64>],
        targets: &DMatrix<f64>,
        delta: f64,
    ) -> (f64, GruNetwork) {
        assert!(!inputs.is_empty() && inputs[0].ncols() > 0);
        let (y, caches) = self.forward_cached(inputs);
        let residual = &y - targets;
        let loss: f64 = residual.iter().map(|&r| huber_loss(r, delta)).sum();
        let dy = residual.map(|r| huber_grad(r, delta));

        let mut g = self.zeros_like();
        let last = caches.last().expect("at least one layer");
        let top_h = {
            let s = last.last().expect("non-empty window");
            &s.h_prev + s.z.component_mul(&(&s.c - &s.h_prev))
        };
        g.head.w = &dy * top_h.transpose();
        g.head.b = row_sums(&dy);

        let batch = targets.ncols();
        let hidden = self.hidden_dim();
        // gradient flowing into h[l] from step t + 1
        let mut dh_next: Vec<DMatrix<f64>> = vec![DMatrix::zeros(hidden, batch); self.layers.len()];
        let n_layers = self.layers.len();
        dh_next[n_layers - 1] = self.head.w.transpose() * &dy;

        for t in (0..inputs.len()).rev() {
            let mut from_above: Option<DMatrix<f64>> = None;
            for l in (0..n_layers).rev() {
                let p = &self.layers[l];
                let gl = &mut g.layers[l];
                let s = &caches[l][t];
                let mut dh = std::mem::replace(&mut dh_next[l], DMatrix::zeros(0, 0));
                if let Some(a) = from_above.take() {
                    dh += a;
                }

                let dc = dh.component_mul(&s.z);
                let dz = dh.component_mul(&(&s.c - &s.h_prev));
                let mut dh_prev = dh.component_mul(&s.z.map(|z| 1.0 - z));

                let da_h = dc.zip_map(&s.c, |d, c| d * (1.0 - c * c));
                let xt = s.x.transpose();
                gl.w_uh += &da_h * &xt;
                gl.w_hh += &da_h * s.rh.transpose();
                gl.b_h += row_sums(&da_h);
                let drh = p.w_hh.transpose() * &da_h;
                let dr = drh.component_mul(&s.h_prev);
                dh_prev += drh.component_mul(&s.r);
                let mut dx = p.w_uh.transpose() * &da_h;

                let hpt = s.h_prev.transpose();
                let da_r = dr.zip_map(&s.r, |d, r| d * r * (1.0 - r));
                gl.w_ur += &da_r * &xt;
                gl.w_hr += &da_r * &hpt;
                gl.b_r += row_sums(&da_r);
                dx += p.w_ur.transpose() * &da_r;
                dh_prev += p.w_hr.transpose() * &da_r;

                let da_z = dz.zip_map(&s.z, |d, z| d * z * (1.0 - z));
                gl.w_uz += &da_z * &xt;
                gl.w_hz += &da_z * &hpt;
                gl.b_z += row_sums(&da_z);
                dx += p.w_uz.transpose() * &da_z;
                dh_prev += p.w_hz.transpose() * &da_z;

                dh_next[l] = dh_prev;
                if l > 0 {
                    from_above = Some(dx);
                }
            }
        }
        (loss, g)
    }
}
