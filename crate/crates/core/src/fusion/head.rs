use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::{FusionError, Result};

/// Probabilities are clamped into `[BCE_CLAMP, 1 - BCE_CLAMP]` before logs.
pub const BCE_CLAMP: f64 = 1e-12;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Binary cross entropy of probability `y_hat` against label `y`.
pub fn bce_loss(y_hat: f64, y: bool) -> f64 {
    let p = y_hat.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionHead {
    audio_dim: usize,
    text_dim: usize,
    hidden: usize,
    normalize_inputs: bool,
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    w_a: usize,
    b_a: usize,
    w_t: usize,
    b_t: usize,
    w_out: usize,
    b_out: usize,
    total: usize,
}

impl Layout {
    fn new(audio_dim: usize, text_dim: usize, hidden: usize) -> Self {
        let w_a = 0;
        let b_a = w_a + hidden * audio_dim;
        let w_t = b_a + hidden;
        let b_t = w_t + hidden * text_dim;
        let w_out = b_t + hidden;
        let b_out = w_out + hidden;
        Layout {
            w_a,
            b_a,
            w_t,
            b_t,
            w_out,
            b_out,
            total: b_out + 1,
        }
    }
}

/// Intermediate values of one forward pass, consumed by [`FusionHead::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub input_a: Vec<f64>,
    pub input_t: Vec<f64>,
    pub pre_a: Vec<f64>,
    pub pre_t: Vec<f64>,
    pub act_a: Vec<f64>,
    pub act_t: Vec<f64>,
    pub fused: Vec<f64>,
    pub logit: f64,
    pub y_hat: f64,
}

/// Gradient buffer in parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub score: f64,
    pub hallucinated: bool,
}

impl FusionHead {
    pub fn zeros(audio_dim: usize, text_dim: usize, hidden: usize) -> Result<Self> {
        if audio_dim == 0 || text_dim == 0 || hidden == 0 {
            return Err(FusionError::ZeroSize);
        }
        let n = Layout::new(audio_dim, text_dim, hidden).total;
        Ok(FusionHead {
            audio_dim,
            text_dim,
            hidden,
            normalize_inputs: false,
            params: vec![0.0; n],
        })
    }

    pub fn from_params(audio_dim: usize, text_dim: usize, hidden: usize, params: Vec<f64>) -> Result<Self> {
        let mut head = FusionHead::zeros(audio_dim, text_dim, hidden)?;
        if params.len() != head.params.len() {
            return Err(FusionError::ParamCount {
                expected: head.params.len(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(FusionError::NonFinite("parameters"));
        }
        head.params = params;
        Ok(head)
    }

    /// Kaiming-uniform weights on the ReLU branches (bound `sqrt(6/fan_in)`),
    /// Xavier-uniform output weights (bound `sqrt(6/(d+1))`), zero biases.
    /// Values are drawn as f32 so the head is exactly representable in a
    /// checkpoint.
    pub fn init<R: Rng + ?Sized>(audio_dim: usize, text_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let mut head = FusionHead::zeros(audio_dim, text_dim, hidden)?;
        let l = head.layout();
        let mut fill = |range: std::ops::Range<usize>, bound: f64, params: &mut [f64]| {
            let dist = Uniform::new_inclusive(-bound as f32, bound as f32).expect("finite bound");
            for p in &mut params[range] {
                *p = f64::from(dist.sample(rng));
            }
        };
        fill(l.w_a..l.b_a, (6.0 / audio_dim as f64).sqrt(), &mut head.params);
        fill(l.w_t..l.b_t, (6.0 / text_dim as f64).sqrt(), &mut head.params);
        fill(l.w_out..l.b_out, (6.0 / (hidden as f64 + 1.0)).sqrt(), &mut head.params);
        Ok(head)
    }

    pub fn with_normalized_inputs(mut self, normalize: bool) -> Self {
        self.normalize_inputs = normalize;
        self
    }

    fn layout(&self) -> Layout {
        Layout::new(self.audio_dim, self.text_dim, self.hidden)
    }

    pub fn audio_dim(&self) -> usize {
        self.audio_dim
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Whether inputs are L2-normalized before the branch layers.
    pub fn normalize_inputs(&self) -> bool {
        self.normalize_inputs
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn w_a(&self) -> &[f64] {
        let l = self.layout();
        &self.params[l.w_a..l.b_a]
    }

    pub fn b_a(&self) -> &[f64] {
        let l = self.layout();
        &self.params[l.b_a..l.w_t]
    }

    pub fn w_t(&self) -> &[f64] {
        let l = self.layout();
        &self.params[l.w_t..l.b_t]
    }

    pub fn b_t(&self) -> &[f64] {
        let l = self.layout();
        &self.params[l.b_t..l.w_out]
    }

    pub fn w_out(&self) -> &[f64] {
        let l = self.layout();
        &self.params[l.w_out..l.b_out]
    }

    pub fn b_out(&self) -> f64 {
        self.params[self.layout().b_out]
    }

    /// Copy with every parameter rounded through f32, i.e. what a checkpoint holds.
    pub fn rounded_to_f32(&self) -> FusionHead {
        let mut out = self.clone();
        for p in &mut out.params {
            *p = f64::from(*p as f32);
        }
        out
    }

    fn prepare<T: Copy + Into<f64>>(&self, x: &[T], expected: usize, what: &'static str) -> Result<Vec<f64>> {
        if x.len() != expected {
            return Err(FusionError::DimMismatch {
                what,
                expected,
                got: x.len(),
            });
        }
        let mut v: Vec<f64> = x.iter().map(|&a| a.into()).collect();
        if v.iter().any(|a| !a.is_finite()) {
            return Err(FusionError::NonFinite(what));
        }
        if self.normalize_inputs {
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|a| *a /= norm);
            }
        }
        Ok(v)
    }

    pub fn forward<T: Copy + Into<f64>>(&self, h_a: &[T], h_t: &[T]) -> Result<ForwardPass> {
        let input_a = self.prepare(h_a, self.audio_dim, "audio input")?;
        let input_t = self.prepare(h_t, self.text_dim, "text input")?;
        let l = self.layout();
        let d = self.hidden;
        let affine = |w: usize, b: usize, dim: usize, x: &[f64]| -> Vec<f64> {
            (0..d)
                .map(|j| {
                    let row = &self.params[w + j * dim..w + (j + 1) * dim];
                    self.params[b + j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect()
        };
        let pre_a = affine(l.w_a, l.b_a, self.audio_dim, &input_a);
        let pre_t = affine(l.w_t, l.b_t, self.text_dim, &input_t);
        let act_a: Vec<f64> = pre_a.iter().map(|&x| relu(x)).collect();
        let act_t: Vec<f64> = pre_t.iter().map(|&x| relu(x)).collect();
        let fused: Vec<f64> = act_a.iter().zip(&act_t).map(|(a, t)| a * t).collect();
        let logit = self.params[l.b_out]
            + self.params[l.w_out..l.b_out]
                .iter()
                .zip(&fused)
                .map(|(w, h)| w * h)
                .sum::<f64>();
        if !logit.is_finite() {
            return Err(FusionError::NonFinite("logit"));
        }
        Ok(ForwardPass {
            input_a,
            input_t,
            pre_a,
            pre_t,
            act_a,
            act_t,
            fused,
            logit,
            y_hat: sigmoid(logit),
        })
    }

    pub fn loss<T: Copy + Into<f64>>(&self, h_a: &[T], h_t: &[T], y: bool) -> Result<f64> {
        Ok(bce_loss(self.forward(h_a, h_t)?.y_hat, y))
    }

    pub fn backward(&self, cache: &ForwardPass, y: bool) -> Result<Gradients> {
        let mut g = vec![0.0; self.params.len()];
        self.backward_into(cache, y, 1.0, &mut g)?;
        Ok(Gradients(g))
    }

    /// Adds `scale` times the loss gradient into `grads`.
    ///
    /// Uses `d loss / d logit = y_hat - y`; the ReLU derivative at exactly 0
    /// is taken as 0.
    pub fn backward_into(&self, cache: &ForwardPass, y: bool, scale: f64, grads: &mut [f64]) -> Result<()> {
        let d = self.hidden;
        let shapes_ok = cache.input_a.len() == self.audio_dim
            && cache.input_t.len() == self.text_dim
            && [&cache.pre_a, &cache.pre_t, &cache.act_a, &cache.act_t, &cache.fused]
                .iter()
                .all(|v| v.len() == d)
            && grads.len() == self.params.len();
        if !shapes_ok {
            return Err(FusionError::StaleCache);
        }
        let l = self.layout();
        let delta = scale * (cache.y_hat - if y { 1.0 } else { 0.0 });
        grads[l.b_out] += delta;
        for j in 0..d {
            grads[l.w_out + j] += delta * cache.fused[j];
            let w = self.params[l.w_out + j];
            let ga = if cache.pre_a[j] > 0.0 { delta * w * cache.act_t[j] } else { 0.0 };
            let gt = if cache.pre_t[j] > 0.0 { delta * w * cache.act_a[j] } else { 0.0 };
            if ga != 0.0 {
                grads[l.b_a + j] += ga;
                let row = &mut grads[l.w_a + j * self.audio_dim..l.w_a + (j + 1) * self.audio_dim];
                row.iter_mut().zip(&cache.input_a).for_each(|(g, x)| *g += ga * x);
            }
            if gt != 0.0 {
                grads[l.b_t + j] += gt;
                let row = &mut grads[l.w_t + j * self.text_dim..l.w_t + (j + 1) * self.text_dim];
                row.iter_mut().zip(&cache.input_t).for_each(|(g, x)| *g += gt * x);
            }
        }
        Ok(())
    }

    /// Positive ("hallucinated") iff `y_hat >= threshold`.
    pub fn predict<T: Copy + Into<f64>>(&self, h_a: &[T], h_t: &[T], threshold: f64) -> Result<Prediction> {
        let score = self.forward(h_a, h_t)?.y_hat;
        Ok(Prediction {
            score,
            hallucinated: score >= threshold,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_head(w_a: f64, w_t: f64, w_out: f64, b_out: f64) -> FusionHead {
        // layout for D=1, d=1: W_a, b_a, W_t, b_t, w_out, b_out
        FusionHead::from_params(1, 1, 1, vec![w_a, 0.0, w_t, 0.0, w_out, b_out]).unwrap()
    }

    #[test]
    fn zero_head_outputs_half() {
        let head = FusionHead::zeros(3, 5, 4).unwrap();
        let p = head.forward(&[1.0f32, -2.0, 3.0], &[0.5f32; 5]).unwrap();
        assert_eq!(p.y_hat, 0.5);
        assert_eq!(head.num_params(), 4 * 3 + 4 + 4 * 5 + 4 + 4 + 1);
    }

    #[test]
    fn scalar_forward_by_hand() {
        let p = scalar_head(1.0, 1.0, 1.0, 0.0).forward(&[2.0f64], &[3.0f64]).unwrap();
        assert_eq!(p.fused, vec![6.0]);
        assert!((p.y_hat - 0.997_527_376_843_365_3).abs() < 1e-15);
    }

    #[test]
    fn relu_kill_leaves_output_bias() {
        let p = scalar_head(-1.0, 1.0, 5.0, 0.7).forward(&[2.0f64], &[3.0f64]).unwrap();
        assert_eq!(p.fused, vec![0.0]);
        assert_eq!(p.y_hat, sigmoid(0.7));
    }

    #[test]
    fn bce_values() {
        assert!((bce_loss(0.5, true) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(0.5, false) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(0.9, true) - 0.105_360_515_657_826_3).abs() < 1e-15);
        assert!(bce_loss(1.0, true) < 1e-11);
        assert!(bce_loss(0.0, true).is_finite());
        assert!(bce_loss(1.0, false) > 27.0);
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        let head = scalar_head(1.0, 1.0, 1.0, 0.0);
        let mut cache = head.forward(&[2.0f64], &[3.0f64]).unwrap();
        cache.y_hat = 1.0;
        assert!(head.backward(&cache, true).unwrap().0.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_head_output_bias_gradient() {
        let head = FusionHead::zeros(2, 2, 3).unwrap();
        let cache = head.forward(&[1.0f64, 2.0], &[3.0f64, 4.0]).unwrap();
        let g = head.backward(&cache, true).unwrap();
        assert_eq!(*g.0.last().unwrap(), -0.5);
    }

    #[test]
    fn stale_cache_rejected() {
        let small = FusionHead::zeros(2, 2, 3).unwrap();
        let big = FusionHead::zeros(2, 2, 4).unwrap();
        let cache = small.forward(&[1.0f64, 2.0], &[3.0f64, 4.0]).unwrap();
        assert!(matches!(big.backward(&cache, true), Err(FusionError::StaleCache)));
    }

    #[test]
    fn input_dimension_checked() {
        let head = FusionHead::zeros(2, 3, 1).unwrap();
        assert!(matches!(head.forward(&[1.0f64], &[1.0f64; 3]), Err(FusionError::DimMismatch { .. })));
        assert!(matches!(head.forward(&[1.0f64, f64::NAN], &[1.0f64; 3]), Err(FusionError::NonFinite(_))));
    }

    #[test]
    fn predict_boundary_and_threshold_one() {
        let head = FusionHead::zeros(1, 1, 1).unwrap();
        assert!(head.predict(&[1.0f64], &[1.0f64], 0.5).unwrap().hallucinated);
        assert!(!head.predict(&[1.0f64], &[1.0f64], 1.0).unwrap().hallucinated);
        let saturated = scalar_head(1.0, 1.0, 100.0, 0.0);
        assert!(saturated.predict(&[1.0f64], &[1.0f64], 1.0).unwrap().hallucinated);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = FusionHead::init(8, 4, 16, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = FusionHead::init(8, 4, 16, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, a.rounded_to_f32());
        let bound = (6.0f64 / 8.0).sqrt() + 1e-6;
        assert!(a.w_a().iter().all(|w| w.abs() <= bound));
        assert!(a.b_a().iter().chain(a.b_t()).all(|&b| b == 0.0));
        assert_eq!(a.b_out(), 0.0);
    }

    #[test]
    fn swapping_branches_keeps_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let head = FusionHead::init(5, 3, 6, &mut rng).unwrap();
            let mut swapped = Vec::new();
            swapped.extend_from_slice(head.w_t());
            swapped.extend_from_slice(head.b_t());
            swapped.extend_from_slice(head.w_a());
            swapped.extend_from_slice(head.b_a());
            swapped.extend_from_slice(head.w_out());
            swapped.push(head.b_out());
            let swapped = FusionHead::from_params(3, 5, 6, swapped).unwrap();
            let a: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert_eq!(head.forward(&a, &t).unwrap().y_hat, swapped.forward(&t, &a).unwrap().y_hat);
        }
    }

    #[test]
    fn normalized_inputs_ignore_scale() {
        let head = FusionHead::init(4, 4, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap().with_normalized_inputs(true);
        let a = [1.0f64, 2.0, -1.0, 0.5];
        let t = [0.3f64, -0.2, 0.9, 1.0];
        let a10: Vec<f64> = a.iter().map(|x| x * 10.0).collect();
        let y1 = head.forward(&a, &t).unwrap().y_hat;
        let y2 = head.forward(&a10, &t).unwrap().y_hat;
        assert!((y1 - y2).abs() < 1e-12);
    }
}
