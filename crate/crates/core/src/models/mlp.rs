use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 128;

const CHECKPOINT_TAG: &str = "dilate-mlp v1";

/// One-hidden-layer relu network mapping `n` inputs to a `k`-step forecast.
///
/// Weights are row-major: `w1` is `hidden x n`, `w2` is `k x hidden`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub n: usize,
    pub hidden: usize,
    pub k: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// Bumped on every in-place update so forward caches can detect staleness.
    #[serde(skip)]
    version: u64,
}

/// Activations kept by [`mlp_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    version: u64,
    input: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
}

/// Gradients laid out like [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpGrads {
    pub fn zeros_like(p: &MlpParams) -> Self {
        Self {
            w1: vec![0.0; p.w1.len()],
            b1: vec![0.0; p.b1.len()],
            w2: vec![0.0; p.w2.len()],
            b2: vec![0.0; p.b2.len()],
        }
    }

    pub fn blocks(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn fill_zero(&mut self) {
        for b in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            b.fill(0.0);
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (dst, src) in [
            (&mut self.w1, &other.w1),
            (&mut self.b1, &other.b1),
            (&mut self.w2, &other.w2),
            (&mut self.b2, &other.b2),
        ] {
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }
}

impl MlpParams {
    pub fn zeros(n: usize, hidden: usize, k: usize) -> Self {
        Self {
            n,
            hidden,
            k,
            w1: vec![0.0; hidden * n],
            b1: vec![0.0; hidden],
            w2: vec![0.0; k * hidden],
            b2: vec![0.0; k],
            version: 0,
        }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialisation per layer.
    pub fn init<R: Rng>(n: usize, hidden: usize, k: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(n, hidden, k);
        let a1 = 1.0 / (n as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        for v in p.w1.iter_mut().chain(p.b1.iter_mut()) {
            *v = rng.gen_range(-a1..a1);
        }
        for v in p.w2.iter_mut().chain(p.b2.iter_mut()) {
            *v = rng.gen_range(-a2..a2);
        }
        p
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 4] {
        self.version += 1;
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn is_finite(&self) -> bool {
        [&self.w1, &self.b1, &self.w2, &self.b2]
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn check_shapes(&self) -> Result<()> {
        let ok = self.w1.len() == self.hidden * self.n
            && self.b1.len() == self.hidden
            && self.w2.len() == self.k * self.hidden
            && self.b2.len() == self.k;
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("parameter blocks inconsistent with (n, hidden, k)".into()))
        }
    }

    /// Plain-text checkpoint: a version tag, the shape line, then one block
    /// per line in `w1, b1, w2, b2` order with row-major values.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(CHECKPOINT_TAG);
        out.push('\n');
        out.push_str(&format!("{} {} {}\n", self.n, self.hidden, self.k));
        for block in [&self.w1, &self.b1, &self.w2, &self.b2] {
            let line: Vec<String> = block.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<String> = std::io::BufReader::new(f)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(path, e))?;
        let bad = |row: usize, message: &str| Error::Parse {
            path: path.to_path_buf(),
            row,
            column: 0,
            message: message.to_string(),
        };
        if lines.first().map(String::as_str) != Some(CHECKPOINT_TAG) {
            return Err(bad(1, "missing checkpoint version tag"));
        }
        let dims: Vec<usize> = lines
            .get(1)
            .ok_or_else(|| bad(2, "missing shape line"))?
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(2, "invalid shape line"))?;
        let [n, hidden, k] = dims[..] else {
            return Err(bad(2, "shape line must hold n, hidden, k"));
        };
        let mut p = Self::zeros(n, hidden, k);
        for (i, block) in [&mut p.w1, &mut p.b1, &mut p.w2, &mut p.b2].into_iter().enumerate() {
            let row = i + 3;
            let line = lines.get(i + 2).ok_or_else(|| bad(row, "missing parameter block"))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad(row, "invalid number"))?;
            if vals.len() != block.len() {
                return Err(bad(row, "parameter block has the wrong length"));
            }
            *block = vals;
        }
        Ok(p)
    }
}

/// `pred = w2 * relu(w1 * input + b1) + b2`.
pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
    params.check_shapes()?;
    if input.len() != params.n {
        return Err(Error::ShapeMismatch(format!(
            "input has {} values, network expects {}",
            input.len(),
            params.n
        )));
    }
    let (n, hid, k) = (params.n, params.hidden, params.k);
    let mut pre = params.b1.clone();
    for (u, z) in pre.iter_mut().enumerate() {
        let row = &params.w1[u * n..(u + 1) * n];
        *z += row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
    }
    let hidden: Vec<f64> = pre.iter().map(|z| z.max(0.0)).collect();
    let mut pred = params.b2.clone();
    for (o, y) in pred.iter_mut().enumerate() {
        let row = &params.w2[o * hid..(o + 1) * hid];
        *y += row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
    }
    debug_assert_eq!(pred.len(), k);
    Ok((
        pred,
        MlpCache {
            version: params.version,
            input: input.to_vec(),
            pre,
            hidden,
        },
    ))
}

/// Reverse-mode gradients of `<grad_pred, pred>` with respect to every
/// parameter. The relu subgradient at zero is zero.
pub fn mlp_backward(params: &MlpParams, cache: &MlpCache, grad_pred: &[f64]) -> Result<MlpGrads> {
    let mut g = MlpGrads::zeros_like(params);
    mlp_backward_into(params, cache, grad_pred, &mut g)?;
    Ok(g)
}

/// Like [`mlp_backward`] but accumulates into `grads`.
pub fn mlp_backward_into(
    params: &MlpParams,
    cache: &MlpCache,
    grad_pred: &[f64],
    grads: &mut MlpGrads,
) -> Result<()> {
    if cache.version != params.version || cache.pre.len() != params.hidden || cache.input.len() != params.n {
        return Err(Error::usage("forward cache does not belong to these parameters"));
    }
    if grad_pred.len() != params.k {
        return Err(Error::ShapeMismatch(format!(
            "output gradient has {} values, network emits {}",
            grad_pred.len(),
            params.k
        )));
    }
    let (n, hid) = (params.n, params.hidden);
    let mut grad_hidden = vec![0.0; hid];
    for (o, &go) in grad_pred.iter().enumerate() {
        if go == 0.0 {
            continue;
        }
        grads.b2[o] += go;
        let wrow = &params.w2[o * hid..(o + 1) * hid];
        let grow = &mut grads.w2[o * hid..(o + 1) * hid];
        for u in 0..hid {
            grow[u] += go * cache.hidden[u];
            grad_hidden[u] += go * wrow[u];
        }
    }
    for u in 0..hid {
        if cache.pre[u] <= 0.0 {
            continue;
        }
        let gu = grad_hidden[u];
        grads.b1[u] += gu;
        let grow = &mut grads.w1[u * n..(u + 1) * n];
        for (gw, x) in grow.iter_mut().zip(&cache.input) {
            *gw += gu * x;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bias_passthrough() {
        let mut p = MlpParams::zeros(3, 4, 2);
        p.b2 = vec![0.25, 0.25];
        let (y, _) = mlp_forward(&p, &[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.25, 0.25]);
    }

    #[test]
    fn scalar_net() {
        let mut p = MlpParams::zeros(1, 1, 1);
        p.w1 = vec![2.0];
        p.b1 = vec![0.5];
        p.w2 = vec![-3.0];
        p.b2 = vec![1.0];
        let x = 1.5;
        let (y, cache) = mlp_forward(&p, &[x]).unwrap();
        assert_eq!(y, vec![-3.0 * (2.0 * x + 0.5) + 1.0]);

        let g = mlp_backward(&p, &cache, &[1.0]).unwrap();
        assert_eq!(g.b2, vec![1.0]);
        assert_eq!(g.w2, vec![2.0 * x + 0.5]);
        assert_eq!(g.b1, vec![-3.0]);
        assert_eq!(g.w1, vec![-3.0 * x]);
    }

    #[test]
    fn zero_output_gradient() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = MlpParams::init(5, 8, 3, &mut rng);
        let (_, cache) = mlp_forward(&p, &[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let g = mlp_backward(&p, &cache, &[0.0; 3]).unwrap();
        assert!(g.blocks().iter().all(|b| b.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut p = MlpParams::zeros(2, 3, 1);
        let (_, cache) = mlp_forward(&p, &[1.0, 1.0]).unwrap();
        p.blocks_mut()[0][0] = 1.0;
        assert!(matches!(mlp_backward(&p, &cache, &[1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn shape_errors() {
        let p = MlpParams::zeros(2, 3, 1);
        assert!(matches!(mlp_forward(&p, &[1.0]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let p = MlpParams::init(4, 5, 3, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.txt");
        p.save(&path).unwrap();
        let q = MlpParams::load(&path).unwrap();
        assert_eq!(p, q);
    }

    use rand::SeedableRng;
}
