use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::window::WindowedDataset;
use super::{LstmError, Result};

/// Gate slots, in storage order.
pub const GATE_F: usize = 0;
pub const GATE_I: usize = 1;
pub const GATE_O: usize = 2;
pub const GATE_G: usize = 3;
const GATE_NAMES: [&str; 4] = ["f", "i", "o", "g"];

/// Weights of a single-layer LSTM with a scalar linear head.
/// `w[q]` is hidden x input and `u[q]` is hidden x hidden, both row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct LstmParams {
    pub hidden: usize,
    pub input: usize,
    pub w: [Vec<f64>; 4],
    pub u: [Vec<f64>; 4],
    pub b: [Vec<f64>; 4],
    pub w_out: Vec<f64>,
    pub b_out: f64,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let z = |n: usize| [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        Self {
            hidden,
            input,
            w: z(hidden * input),
            u: z(hidden * hidden),
            b: z(hidden),
            w_out: vec![0.0; hidden],
            b_out: 0.0,
        }
    }

    /// Weights uniform in ±1/√hidden, biases zero except the forget gate at +1.
    pub fn init(hidden: usize, input: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut p = Self::zeros(hidden, input);
        for q in 0..4 {
            p.w[q].iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
            p.u[q].iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        }
        p.w_out.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        p.b[GATE_F].iter_mut().for_each(|v| *v = 1.0);
        p
    }

    pub fn len(&self) -> usize {
        4 * self.hidden * (self.input + self.hidden + 1) + self.hidden + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All fourteen tensors, gate-major, then the head.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(14);
        for (q, g) in GATE_NAMES.iter().enumerate() {
            out.push((format!("w_{g}"), self.w[q].as_slice()));
        }
        for (q, g) in GATE_NAMES.iter().enumerate() {
            out.push((format!("u_{g}"), self.u[q].as_slice()));
        }
        for (q, g) in GATE_NAMES.iter().enumerate() {
            out.push((format!("b_{g}"), self.b[q].as_slice()));
        }
        out.push(("w_out".into(), self.w_out.as_slice()));
        out.push(("b_out".into(), std::slice::from_ref(&self.b_out)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(14);
        out.extend(self.w.iter_mut().map(|v| v.as_mut_slice()));
        out.extend(self.u.iter_mut().map(|v| v.as_mut_slice()));
        out.extend(self.b.iter_mut().map(|v| v.as_mut_slice()));
        out.push(self.w_out.as_mut_slice());
        out.push(std::slice::from_mut(&mut self.b_out));
        out
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len(), "flat parameter length");
        let mut at = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[at..at + t.len()]);
            at += t.len();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, n) = (self.hidden, self.input);
        let shapes_ok = h >= 1
            && self.w.iter().all(|t| t.len() == h * n)
            && self.u.iter().all(|t| t.len() == h * h)
            && self.b.iter().all(|t| t.len() == h)
            && self.w_out.len() == h;
        if !shapes_ok {
            return Err(LstmError::ShapeMismatch(format!("inconsistent tensors for hidden {h}, input {n}")));
        }
        if !self.to_flat().iter().all(|v| v.is_finite()) {
            return Err(LstmError::NonFiniteActivation("non-finite parameter".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRepr {
    hidden_size: usize,
    input_size: usize,
    w_f: Vec<f64>,
    w_i: Vec<f64>,
    w_o: Vec<f64>,
    w_g: Vec<f64>,
    u_f: Vec<f64>,
    u_i: Vec<f64>,
    u_o: Vec<f64>,
    u_g: Vec<f64>,
    b_f: Vec<f64>,
    b_i: Vec<f64>,
    b_o: Vec<f64>,
    b_g: Vec<f64>,
    w_out: Vec<f64>,
    b_out: f64,
}

impl From<LstmParams> for ParamsRepr {
    fn from(p: LstmParams) -> Self {
        let [w_f, w_i, w_o, w_g] = p.w;
        let [u_f, u_i, u_o, u_g] = p.u;
        let [b_f, b_i, b_o, b_g] = p.b;
        Self {
            hidden_size: p.hidden,
            input_size: p.input,
            w_f, w_i, w_o, w_g,
            u_f, u_i, u_o, u_g,
            b_f, b_i, b_o, b_g,
            w_out: p.w_out,
            b_out: p.b_out,
        }
    }
}

impl TryFrom<ParamsRepr> for LstmParams {
    type Error = LstmError;

    fn try_from(r: ParamsRepr) -> Result<Self> {
        let p = Self {
            hidden: r.hidden_size,
            input: r.input_size,
            w: [r.w_f, r.w_i, r.w_o, r.w_g],
            u: [r.u_f, r.u_i, r.u_o, r.u_g],
            b: [r.b_f, r.b_i, r.b_o, r.b_g],
            w_out: r.w_out,
            b_out: r.b_out,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Per-step activations from one forward pass, each `steps x hidden`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub steps: usize,
    pub gates: [Vec<f64>; 4],
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl ForwardCache {
    pub fn h_last(&self, hidden: usize) -> &[f64] {
        &self.h[(self.steps - 1) * hidden..]
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Run one window (`steps x input`, row-major) from zero state.
pub fn lstm_forward(params: &LstmParams, window: &[f64]) -> Result<(f64, ForwardCache)> {
    let (hid, inp) = (params.hidden, params.input);
    if inp == 0 || window.len() % inp != 0 || window.is_empty() {
        return Err(LstmError::ShapeMismatch(format!(
            "window of {} values for {} inputs",
            window.len(),
            inp
        )));
    }
    let steps = window.len() / inp;
    let mut cache = ForwardCache {
        steps,
        gates: std::array::from_fn(|_| vec![0.0; steps * hid]),
        c: vec![0.0; steps * hid],
        tanh_c: vec![0.0; steps * hid],
        h: vec![0.0; steps * hid],
    };
    let zero = vec![0.0; hid];
    let mut pre = [0.0f64; 4];
    for t in 0..steps {
        let x = &window[t * inp..(t + 1) * inp];
        let (h_prev, c_prev) = if t == 0 {
            (zero.clone(), zero.clone())
        } else {
            (
                cache.h[(t - 1) * hid..t * hid].to_vec(),
                cache.c[(t - 1) * hid..t * hid].to_vec(),
            )
        };
        for j in 0..hid {
            for (q, a) in pre.iter_mut().enumerate() {
                let wr = &params.w[q][j * inp..(j + 1) * inp];
                let ur = &params.u[q][j * hid..(j + 1) * hid];
                *a = params.b[q][j] + dot(wr, x) + dot(ur, &h_prev);
            }
            let f = sigmoid(pre[GATE_F]);
            let i = sigmoid(pre[GATE_I]);
            let o = sigmoid(pre[GATE_O]);
            let g = pre[GATE_G].tanh();
            let c = f * c_prev[j] + i * g;
            let tc = c.tanh();
            let at = t * hid + j;
            cache.gates[GATE_F][at] = f;
            cache.gates[GATE_I][at] = i;
            cache.gates[GATE_O][at] = o;
            cache.gates[GATE_G][at] = g;
            cache.c[at] = c;
            cache.tanh_c[at] = tc;
            cache.h[at] = o * tc;
        }
    }
    let pred = params.b_out + dot(&params.w_out, cache.h_last(hid));
    if !pred.is_finite() {
        return Err(LstmError::NonFiniteActivation(format!("prediction {pred}")));
    }
    Ok((pred, cache))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn predict(params: &LstmParams, window: &[f64]) -> Result<f64> {
    lstm_forward(params, window).map(|(p, _)| p)
}

pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(predictions, targets)?;
    Ok(predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / predictions.len() as f64)
}

pub fn mae(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_lengths(predictions, targets)?;
    Ok(predictions.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / predictions.len() as f64)
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(LstmError::LengthMismatch { left: a.len(), right: b.len() });
    }
    Ok(())
}

fn check_batch(params: &LstmParams, batch: &WindowedDataset) -> Result<()> {
    if batch.is_empty() {
        return Err(LstmError::EmptyBatch);
    }
    if batch.n_features != params.input {
        return Err(LstmError::ShapeMismatch(format!(
            "dataset has {} features, model expects {}",
            batch.n_features, params.input
        )));
    }
    Ok(())
}

/// Mean-squared-error loss over the batch.
pub fn batch_loss(params: &LstmParams, batch: &WindowedDataset) -> Result<f64> {
    check_batch(params, batch)?;
    let preds = (0..batch.len()).map(|k| predict(params, batch.window(k))).collect::<Result<Vec<_>>>()?;
    mse_loss(&preds, &batch.targets)
}

/// Analytic gradient of the batch MSE, averaged over windows. Returns the
/// loss evaluated at `params` alongside.
pub fn bptt_gradients(params: &LstmParams, batch: &WindowedDataset) -> Result<(LstmParams, f64)> {
    check_batch(params, batch)?;
    let (hid, inp) = (params.hidden, params.input);
    let n = batch.len() as f64;
    let mut grad = LstmParams::zeros(hid, inp);
    let mut loss = 0.0;

    let mut dh = vec![0.0; hid];
    let mut dc = vec![0.0; hid];
    let mut da = [vec![0.0; hid], vec![0.0; hid], vec![0.0; hid], vec![0.0; hid]];
    for k in 0..batch.len() {
        let window = batch.window(k);
        let (pred, cache) = lstm_forward(params, window)?;
        let err = pred - batch.targets[k];
        loss += err * err;
        let dpred = 2.0 * err / n;

        grad.b_out += dpred;
        for (g, h) in grad.w_out.iter_mut().zip(cache.h_last(hid)) {
            *g += dpred * h;
        }
        for j in 0..hid {
            dh[j] = dpred * params.w_out[j];
            dc[j] = 0.0;
        }

        for t in (0..cache.steps).rev() {
            let x = &window[t * inp..(t + 1) * inp];
            let at = t * hid;
            for j in 0..hid {
                let f = cache.gates[GATE_F][at + j];
                let i = cache.gates[GATE_I][at + j];
                let o = cache.gates[GATE_O][at + j];
                let g = cache.gates[GATE_G][at + j];
                let tc = cache.tanh_c[at + j];
                let c_prev = if t == 0 { 0.0 } else { cache.c[at - hid + j] };

                let d_c = dc[j] + dh[j] * o * (1.0 - tc * tc);
                da[GATE_O][j] = dh[j] * tc * o * (1.0 - o);
                da[GATE_F][j] = d_c * c_prev * f * (1.0 - f);
                da[GATE_I][j] = d_c * g * i * (1.0 - i);
                da[GATE_G][j] = d_c * i * (1.0 - g * g);
                dc[j] = d_c * f;
            }
            let h_prev = if t == 0 { None } else { Some(&cache.h[at - hid..at]) };
            dh.iter_mut().for_each(|v| *v = 0.0);
            for q in 0..4 {
                for j in 0..hid {
                    let d = da[q][j];
                    grad.b[q][j] += d;
                    let wr = &mut grad.w[q][j * inp..(j + 1) * inp];
                    for (w, xv) in wr.iter_mut().zip(x) {
                        *w += d * xv;
                    }
                    if let Some(hp) = h_prev {
                        let ur = &mut grad.u[q][j * hid..(j + 1) * hid];
                        for (u, hv) in ur.iter_mut().zip(hp) {
                            *u += d * hv;
                        }
                        let pr = &params.u[q][j * hid..(j + 1) * hid];
                        for (acc, pv) in dh.iter_mut().zip(pr) {
                            *acc += d * pv;
                        }
                    }
                }
            }
        }
    }
    Ok((grad, loss / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn dataset(windows: Vec<Vec<f64>>, targets: Vec<f64>, n_features: usize) -> WindowedDataset {
        let steps = windows[0].len() / n_features;
        let d = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        WindowedDataset {
            feature_names: (0..n_features).map(|i| format!("x{i}")).collect(),
            target_name: "y".into(),
            steps,
            n_features,
            inputs: windows.concat(),
            start_dates: vec![d; targets.len()],
            target_dates: vec![d; targets.len()],
            row_spans: vec![0..steps + 1; targets.len()],
            targets,
        }
    }

    fn random_dataset(seed: u64, windows: usize, steps: usize, n_features: usize) -> WindowedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ws = (0..windows)
            .map(|_| (0..steps * n_features).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ts = (0..windows).map(|_| rng.random_range(-1.0..1.0)).collect();
        dataset(ws, ts, n_features)
    }

    #[test]
    fn zero_params_predict_bias() {
        let mut p = LstmParams::zeros(3, 2);
        p.b_out = 0.75;
        let (pred, cache) = lstm_forward(&p, &[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(pred, 0.75);
        assert!(cache.h.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn scalar_unroll() {
        let mut p = LstmParams::zeros(1, 1);
        let (wf, wi, wo, wg) = (0.3, -0.2, 0.5, 0.8);
        let (uf, ui, uo, ug) = (0.1, 0.4, -0.3, 0.6);
        let (bf, bi, bo, bg) = (1.0, 0.05, -0.1, 0.2);
        p.w = [vec![wf], vec![wi], vec![wo], vec![wg]];
        p.u = [vec![uf], vec![ui], vec![uo], vec![ug]];
        p.b = [vec![bf], vec![bi], vec![bo], vec![bg]];
        p.w_out = vec![1.5];
        p.b_out = -0.25;

        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let (x1, x2) = (0.7, -1.1);
        let c1 = s(bi + wi * x1) * (bg + wg * x1).tanh();
        let h1 = s(bo + wo * x1) * c1.tanh();
        let f2 = s(bf + wf * x2 + uf * h1);
        let i2 = s(bi + wi * x2 + ui * h1);
        let o2 = s(bo + wo * x2 + uo * h1);
        let g2 = (bg + wg * x2 + ug * h1).tanh();
        let c2 = f2 * c1 + i2 * g2;
        let expected = 1.5 * o2 * c2.tanh() - 0.25;

        let (pred, _) = lstm_forward(&p, &[x1, x2]).unwrap();
        assert!((pred - expected).abs() < 1e-15, "{pred} vs {expected}");
    }

    #[test]
    fn b_out_shift() {
        let p = LstmParams::init(4, 2, 9);
        let mut q = p.clone();
        q.b_out += 0.5;
        let x = [0.1, 0.2, -0.3, 0.4, 0.5, -0.6];
        let d = predict(&q, &x).unwrap() - predict(&p, &x).unwrap();
        assert!((d - 0.5).abs() < 1e-14);
    }

    #[test]
    fn loss_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 2.5);
        assert_eq!(mse_loss(&[3.0], &[3.0]).unwrap(), 0.0);
        assert!(matches!(mse_loss(&[1.0], &[1.0, 2.0]), Err(LstmError::LengthMismatch { .. })));
        assert!(mse_loss(&[], &[]).is_err());
    }

    #[test]
    fn zero_batch_gradient() {
        let p = LstmParams::zeros(2, 2);
        let ds = dataset(vec![vec![0.5; 6], vec![-0.5; 6]], vec![0.0, 0.0], 2);
        let (g, loss) = bptt_gradients(&p, &ds).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.b_out, 0.0);
    }

    #[test]
    fn finite_differences_hidden4() {
        let p = LstmParams::init(4, 3, 17);
        let ds = random_dataset(3, 3, 23, 3);
        let (g, _) = bptt_gradients(&p, &ds).unwrap();
        let analytic = g.to_flat();
        let base = p.to_flat();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for idx in 0..base.len() {
            let mut q = p.clone();
            let mut v = base.clone();
            v[idx] += h;
            q.set_flat(&v);
            let up = batch_loss(&q, &ds).unwrap();
            v[idx] -= 2.0 * h;
            q.set_flat(&v);
            let down = batch_loss(&q, &ds).unwrap();
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[idx] - numeric).abs() / analytic[idx].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let p = LstmParams::init(3, 2, 1);
        let ds = random_dataset(8, 3, 5, 2);
        let doubled = ds.subset(&[0, 1, 2, 0, 1, 2]);
        let (g1, l1) = bptt_gradients(&p, &ds).unwrap();
        let (g2, l2) = bptt_gradients(&p, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.to_flat().iter().zip(g2.to_flat()) {
            assert!((a - b).abs() <= 1e-13 * a.abs().max(1.0));
        }
    }

    #[test]
    fn permuted_columns_same_prediction() {
        let p = LstmParams::init(5, 3, 4);
        let ds = random_dataset(2, 1, 6, 3);
        let perm = [2usize, 0, 1];
        let mut q = p.clone();
        for g in 0..4 {
            for j in 0..5 {
                for (new, &old) in perm.iter().enumerate() {
                    q.w[g][j * 3 + new] = p.w[g][j * 3 + old];
                }
            }
        }
        let x = ds.window(0);
        let px: Vec<f64> = x.chunks(3).flat_map(|r| perm.iter().map(|&o| r[o]).collect::<Vec<_>>()).collect();
        let a = predict(&p, x).unwrap();
        let b = predict(&q, &px).unwrap();
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn flat_round_trip_and_json() {
        let p = LstmParams::init(3, 2, 42);
        let mut q = LstmParams::zeros(3, 2);
        q.set_flat(&p.to_flat());
        assert_eq!(p, q);
        assert_eq!(p.len(), p.to_flat().len());
        assert_eq!(p.tensors().len(), 14);
        let back: LstmParams = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(p, back);
        let bad = serde_json::to_string(&p).unwrap().replace("\"hidden_size\":3", "\"hidden_size\":4");
        assert!(serde_json::from_str::<LstmParams>(&bad).is_err());
    }

    #[test]
    fn init_forget_bias() {
        let p = LstmParams::init(8, 3, 0);
        assert!(p.b[GATE_F].iter().all(|&v| v == 1.0));
        let bound = 1.0 / 8f64.sqrt();
        assert!(p.w.iter().flatten().all(|v| v.abs() <= bound));
        assert_eq!(p, LstmParams::init(8, 3, 0));
    }
}
