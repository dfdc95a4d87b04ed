use crate::error::{Error, Result};
use crate::tensor::{GradientMatrix, RngStream};

use super::data::Dataset;

pub const INPUTS: usize = 784;
pub const CLASSES: usize = 10;

/// Linear softmax classifier: logits = W·x + b. Parameters are kept as two
/// layers, the 10×784 weight and the 10×1 bias.
#[derive(Clone, Debug, PartialEq)]
pub struct OneLayerNN {
    pub layers: Vec<GradientMatrix>,
}

impl OneLayerNN {
    pub fn zeros() -> Self {
        Self {
            layers: vec![GradientMatrix::zeros(CLASSES, INPUTS), GradientMatrix::zeros(CLASSES, 1)],
        }
    }

    /// Weights uniform in `±1/sqrt(784)`, zero bias.
    pub fn init(stream: RngStream) -> Self {
        use rand::Rng;
        let bound = 1.0 / (INPUTS as f64).sqrt();
        let mut rng = stream.rng();
        let w = GradientMatrix::from_fn(CLASSES, INPUTS, |_, _| rng.random_range(-bound..bound));
        Self {
            layers: vec![w, GradientMatrix::zeros(CLASSES, 1)],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    fn logits(&self, x: &[f32], out: &mut [f64; CLASSES]) {
        let (w, b) = (&self.layers[0], &self.layers[1]);
        for (c, o) in out.iter_mut().enumerate() {
            *o = b.as_slice()[c] + w.row(c).iter().zip(x).map(|(wi, xi)| wi * *xi as f64).sum::<f64>();
        }
    }

    pub fn predict(&self, x: &[f32]) -> usize {
        let mut z = [0.0; CLASSES];
        self.logits(x, &mut z);
        let mut best = 0;
        for c in 1..CLASSES {
            if z[c] > z[best] {
                best = c;
            }
        }
        best
    }

    /// Fraction of `data` classified correctly.
    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct = (0..data.len())
            .filter(|&i| self.predict(data.image(i)) == data.label(i) as usize)
            .count();
        correct as f64 / data.len() as f64
    }

    /// Mean cross-entropy over `data`.
    pub fn loss(&self, data: &Dataset) -> Result<f64> {
        let idx: Vec<usize> = (0..data.len()).collect();
        nn_loss(self, data, &idx)
    }
}

fn log_softmax(z: &[f64; CLASSES], out: &mut [f64; CLASSES]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for (o, v) in out.iter_mut().zip(z) {
        *o = v - lse;
    }
}

fn check_batch(data: &Dataset, batch: &[usize]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if data.dim() != INPUTS {
        return Err(Error::InvalidShape(format!("expected {INPUTS} inputs, got {}", data.dim())));
    }
    for &i in batch {
        if i >= data.len() {
            return Err(Error::InvalidArgument(format!("sample {i} out of range")));
        }
        if data.label(i) as usize >= CLASSES {
            return Err(Error::InvalidArgument(format!("label {} out of range", data.label(i))));
        }
    }
    Ok(())
}

fn nn_loss(model: &OneLayerNN, data: &Dataset, batch: &[usize]) -> Result<f64> {
    check_batch(data, batch)?;
    let (mut z, mut lp) = ([0.0; CLASSES], [0.0; CLASSES]);
    let mut total = 0.0;
    for &i in batch {
        model.logits(data.image(i), &mut z);
        log_softmax(&z, &mut lp);
        total -= lp[data.label(i) as usize];
    }
    Ok(total / batch.len() as f64)
}

/// Mean softmax cross-entropy over the samples `batch` of `data`, with its
/// exact gradient for each parameter layer.
pub fn nn_forward_backward(model: &OneLayerNN, data: &Dataset, batch: &[usize]) -> Result<(f64, Vec<GradientMatrix>)> {
    check_batch(data, batch)?;
    let mut gw = GradientMatrix::zeros(CLASSES, INPUTS);
    let mut gb = GradientMatrix::zeros(CLASSES, 1);
    let (mut z, mut lp) = ([0.0; CLASSES], [0.0; CLASSES]);
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for &i in batch {
        let x = data.image(i);
        let y = data.label(i) as usize;
        model.logits(x, &mut z);
        log_softmax(&z, &mut lp);
        total -= lp[y];
        for c in 0..CLASSES {
            let delta = (lp[c].exp() - if c == y { 1.0 } else { 0.0 }) * scale;
            if delta == 0.0 {
                continue;
            }
            gb.as_mut_slice()[c] += delta;
            let row = &mut gw.as_mut_slice()[c * INPUTS..(c + 1) * INPUTS];
            for (g, xi) in row.iter_mut().zip(x) {
                *g += delta * *xi as f64;
            }
        }
    }
    Ok((total * scale, vec![gw, gb]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_data(count: usize, stream: RngStream) -> Dataset {
        let mut rng = stream.rng();
        let images = (0..count * INPUTS).map(|_| rng.random::<f32>()).collect();
        let labels = (0..count).map(|_| rng.random_range(0..CLASSES as u8)).collect();
        Dataset::new(images, labels, INPUTS).unwrap()
    }

    #[test]
    fn parameter_count() {
        assert_eq!(OneLayerNN::zeros().parameter_count(), 7850);
    }

    #[test]
    fn uniform_logits_give_ln10() {
        let data = toy_data(5, RngStream::new(0, 0));
        let (loss, _) = nn_forward_backward(&OneLayerNN::zeros(), &data, &[0, 1, 2, 3, 4]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_drives_loss_to_zero() {
        let data = toy_data(1, RngStream::new(0, 1));
        let y = data.label(0) as usize;
        let mut last = f64::INFINITY;
        for logit in 0..=20 {
            let mut model = OneLayerNN::zeros();
            model.layers[1].as_mut_slice()[y] = logit as f64;
            let (loss, _) = nn_forward_backward(&model, &data, &[0]).unwrap();
            assert!(loss < last);
            last = loss;
        }
        // Nine competing zero logits: ln(1 + 9e^-20) ≈ 1.9e-8.
        let exact = (9.0 * (-20f64).exp()).ln_1p();
        assert!((last - exact).abs() <= 1e-6 * exact, "{last} vs {exact}");
        assert!(last < 2e-8);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = toy_data(8, RngStream::new(1, 0));
        let batch: Vec<usize> = (0..8).collect();
        let model = OneLayerNN::init(RngStream::new(1, 1));
        let (_, grads) = nn_forward_backward(&model, &data, &batch).unwrap();
        let mut rng = RngStream::new(1, 2).rng();
        let h = 1e-5;
        for _ in 0..20 {
            let layer = if rng.random_bool(0.8) { 0 } else { 1 };
            let idx = rng.random_range(0..model.layers[layer].len());
            let mut plus = model.clone();
            plus.layers[layer].as_mut_slice()[idx] += h;
            let mut minus = model.clone();
            minus.layers[layer].as_mut_slice()[idx] -= h;
            let fd = (nn_loss(&plus, &data, &batch).unwrap() - nn_loss(&minus, &data, &batch).unwrap()) / (2.0 * h);
            let an = grads[layer].as_slice()[idx];
            assert!((fd - an).abs() <= 1e-4 * an.abs().max(1e-3), "layer {layer} idx {idx}: {fd} vs {an}");
        }
    }

    #[test]
    fn bad_labels_are_rejected() {
        let data = Dataset::new(vec![0.0; INPUTS], vec![10], INPUTS).unwrap();
        assert!(nn_forward_backward(&OneLayerNN::zeros(), &data, &[0]).is_err());
    }
}
