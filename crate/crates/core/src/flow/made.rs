//! Conditional MADE block: a masked MLP emitting per-coordinate location and
//! log-scale heads, wired so that coordinate i only sees coordinates ranked
//! before it, while the conditioning features bypass the masks.
//!
//! Forward map per coordinate: `z_i = (y_i − μ_i(y_<i, x)) · exp(−s_i(y_<i, x))`,
//! so the Jacobian in `y` is triangular and `log|det| = −Σ_i s_i` exactly.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{leaky_relu, leaky_relu_backward, AffineCache, AffineLayer, LEAKY_SLOPE};

/// Log-scales are clamped to ±S_CLAMP before exponentiation; the map stays
/// bijective while the scale factor stays within e^±7.
pub const S_CLAMP: f64 = 7.0;

/// Connectivity masks for one MADE block.
#[derive(Debug, Clone)]
pub struct MadeMasks {
    /// One mask per hidden layer; the first covers the `[y | x]` input, with
    /// all-ones columns for `x`.
    pub hidden: Vec<Vec<f64>>,
    /// Shared by the μ and s heads: `[d × last_hidden]`.
    pub output: Vec<f64>,
}

/// Degree-based MADE masks.
///
/// Inputs take degrees 1..d from the ordering; the conditioning features act
/// as degree 0, so hidden units draw uniform degrees from {0..d−1} (all zero
/// when d = 1, making the heads functions of x alone). Degree-0 hidden units
/// see only x and feed every head, which is what lets the conditioning reach
/// the first-ranked coordinate. A connection is kept iff
/// `degree(target) ≥ degree(source)` for hidden targets and
/// `degree(target) > degree(source)` for head outputs.
pub fn build_made_masks(
    d: usize,
    p: usize,
    hidden_sizes: &[usize],
    ordering: &[usize],
    rng: &mut ChaCha20Rng,
) -> Result<MadeMasks> {
    if d < 1 {
        return Err(Error::InvalidArgument("response dimension must be at least 1".into()));
    }
    if hidden_sizes.is_empty() {
        return Err(Error::InvalidArgument("hidden_sizes must be non-empty".into()));
    }
    validate_ordering(d, ordering)?;

    let degrees_per_layer: Vec<Vec<usize>> = hidden_sizes
        .iter()
        .map(|&h| (0..h).map(|_| rng.gen_range(0..d)).collect())
        .collect();

    let mut hidden = Vec::with_capacity(hidden_sizes.len());
    // First hidden layer: y columns by degree rule, x columns unmasked.
    let h0 = hidden_sizes[0];
    let mut first = vec![0.0; h0 * (d + p)];
    for (u, &du) in degrees_per_layer[0].iter().enumerate() {
        let row = &mut first[u * (d + p)..(u + 1) * (d + p)];
        for j in 0..d {
            row[j] = if du >= ordering[j] { 1.0 } else { 0.0 };
        }
        for item in row[d..].iter_mut() {
            *item = 1.0;
        }
    }
    hidden.push(first);

    for l in 1..hidden_sizes.len() {
        let (src, dst) = (&degrees_per_layer[l - 1], &degrees_per_layer[l]);
        let mut mask = vec![0.0; dst.len() * src.len()];
        for (u, &du) in dst.iter().enumerate() {
            for (v, &dv) in src.iter().enumerate() {
                if du >= dv {
                    mask[u * src.len() + v] = 1.0;
                }
            }
        }
        hidden.push(mask);
    }

    let last = degrees_per_layer.last().expect("non-empty hidden sizes");
    let mut output = vec![0.0; d * last.len()];
    for i in 0..d {
        for (v, &dv) in last.iter().enumerate() {
            if ordering[i] > dv {
                output[i * last.len() + v] = 1.0;
            }
        }
    }

    Ok(MadeMasks { hidden, output })
}

fn validate_ordering(d: usize, ordering: &[usize]) -> Result<()> {
    if ordering.len() != d {
        return Err(Error::InvalidArgument(format!(
            "ordering has {} entries for d = {}",
            ordering.len(),
            d
        )));
    }
    let mut seen = vec![false; d];
    for &r in ordering {
        if r < 1 || r > d || seen[r - 1] {
            return Err(Error::InvalidArgument(format!("ordering is not a permutation of 1..{d}")));
        }
        seen[r - 1] = true;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct MadeBlock {
    d: usize,
    p: usize,
    /// `ordering[i]` is the 1-based autoregressive rank of coordinate i.
    ordering: Vec<usize>,
    layers: Vec<AffineLayer>,
    mu_head: AffineLayer,
    s_head: AffineLayer,
    slope: f64,
}

/// Everything the block backward pass needs from a forward pass.
pub struct BlockCache {
    affine: Vec<AffineCache>,
    pre_activations: Vec<Matrix>,
    mu_cache: AffineCache,
    s_cache: AffineCache,
    s_raw: Matrix,
    s: Matrix,
    pub z: Matrix,
    /// Per-sample `log|det ∂z/∂y| = −Σ_i s_i`.
    pub log_abs_det: Vec<f64>,
}

impl MadeBlock {
    pub fn init(
        d: usize,
        p: usize,
        hidden_sizes: &[usize],
        ordering: Vec<usize>,
        rng: &mut ChaCha20Rng,
    ) -> Result<Self> {
        let masks = build_made_masks(d, p, hidden_sizes, &ordering, rng)?;
        let mut layers = Vec::with_capacity(hidden_sizes.len());
        let mut in_dim = d + p;
        for (l, &h) in hidden_sizes.iter().enumerate() {
            layers.push(AffineLayer::init(in_dim, h, Some(masks.hidden[l].clone()), rng)?);
            in_dim = h;
        }
        let mu_head = AffineLayer::init(in_dim, d, Some(masks.output.clone()), rng)?;
        let s_head = AffineLayer::init(in_dim, d, Some(masks.output), rng)?;
        Ok(MadeBlock {
            d,
            p,
            ordering,
            layers,
            mu_head,
            s_head,
            slope: LEAKY_SLOPE,
        })
    }

    pub fn ordering(&self) -> &[usize] {
        &self.ordering
    }

    /// Head outputs (μ, clamped s) for one `(y, x)` pair.
    pub fn heads(&self, y: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let input = Matrix::from_flat(1, self.d + self.p, [y, x].concat())?;
        let (mu, s) = self.eval_heads(&input)?;
        Ok((mu.row(0).to_vec(), s.row(0).to_vec()))
    }

    /// Batched head evaluation without backward caches (sampling hot path).
    fn eval_heads(&self, input: &Matrix) -> Result<(Matrix, Matrix)> {
        let mut cur = self.layers[0].apply(input)?;
        for layer in &self.layers[1..] {
            cur = layer.apply(&leaky_relu(&cur, self.slope))?;
        }
        let hidden = leaky_relu(&cur, self.slope);
        let mu = self.mu_head.apply(&hidden)?;
        let mut s = self.s_head.apply(&hidden)?;
        for v in s.data_mut() {
            *v = v.clamp(-S_CLAMP, S_CLAMP);
        }
        Ok((mu, s))
    }

    #[allow(clippy::type_complexity)]
    fn run_net(&self, input: &Matrix) -> Result<(Matrix, Matrix, Vec<AffineCache>, Vec<Matrix>, (AffineCache, AffineCache, Matrix))> {
        let mut affine = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut cur = input.clone();
        for layer in &self.layers {
            let (out, cache) = layer.forward_owned(cur)?;
            affine.push(cache);
            cur = leaky_relu(&out, self.slope);
            pre.push(out);
        }
        let (mu, mu_cache) = self.mu_head.forward(&cur)?;
        let (s_raw, s_cache) = self.s_head.forward_owned(cur)?;
        let mut s = s_raw.clone();
        for v in s.data_mut() {
            *v = v.clamp(-S_CLAMP, S_CLAMP);
        }
        Ok((mu, s, affine, pre, (mu_cache, s_cache, s_raw)))
    }

    /// Batch forward: one non-sequential pass computing every coordinate.
    pub fn forward(&self, y: &Matrix, x: &Matrix) -> Result<BlockCache> {
        if y.cols() != self.d || x.cols() != self.p || y.rows() != x.rows() {
            return Err(Error::shape(
                "MadeBlock::forward",
                format!(
                    "y {}x{}, x {}x{} vs d={} p={}",
                    y.rows(),
                    y.cols(),
                    x.rows(),
                    x.cols(),
                    self.d,
                    self.p
                ),
            ));
        }
        let input = y.hcat(x)?;
        let (mu, s, affine, pre_activations, (mu_cache, s_cache, s_raw)) = self.run_net(&input)?;
        let batch = y.rows();
        let mut z = Matrix::zeros(batch, self.d);
        let mut log_abs_det = vec![0.0; batch];
        for b in 0..batch {
            let mut ld = 0.0;
            for i in 0..self.d {
                let si = s.get(b, i);
                z.set(b, i, (y.get(b, i) - mu.get(b, i)) * (-si).exp());
                ld -= si;
            }
            log_abs_det[b] = ld;
        }
        if !z.is_finite() || log_abs_det.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MadeBlock::forward".into()));
        }
        Ok(BlockCache {
            affine,
            pre_activations,
            mu_cache,
            s_cache,
            s_raw,
            s,
            z,
            log_abs_det,
        })
    }

    /// Backward through the block. `grad_z` is ∂L/∂z; `grad_log_det[b]` is
    /// ∂L/∂(log|det|) for sample b. Returns flat parameter gradients in
    /// canonical order (hidden layers, μ head, s head) and ∂L/∂y.
    pub fn backward(&self, cache: &BlockCache, grad_z: &Matrix, grad_log_det: &[f64]) -> Result<(Vec<f64>, Matrix)> {
        let batch = cache.z.rows();
        let mut d_mu = Matrix::zeros(batch, self.d);
        let mut d_s = Matrix::zeros(batch, self.d);
        let mut d_y = Matrix::zeros(batch, self.d);
        for b in 0..batch {
            for i in 0..self.d {
                let gz = grad_z.get(b, i);
                let s = cache.s.get(b, i);
                let e = (-s).exp();
                // z = (y − μ)·e^{−s}: ∂z/∂μ = −e^{−s}, ∂z/∂s = −z, ∂z/∂y = e^{−s};
                // log|det| = −Σ s gives each s an extra −grad_log_det.
                d_mu.set(b, i, -gz * e);
                let mut ds = -gz * cache.z.get(b, i) - grad_log_det[b];
                let raw = cache.s_raw.get(b, i);
                if !(-S_CLAMP..=S_CLAMP).contains(&raw) {
                    ds = 0.0;
                }
                d_s.set(b, i, ds);
                d_y.set(b, i, gz * e);
            }
        }

        let mu_grads = self.mu_head.backward(&cache.mu_cache, &d_mu)?;
        let s_grads = self.s_head.backward(&cache.s_cache, &d_s)?;
        let mut grad_hidden = mu_grads.input;
        for (g, &gs) in grad_hidden.data_mut().iter_mut().zip(s_grads.input.data()) {
            *g += gs;
        }

        let mut per_layer: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        let mut grad = grad_hidden;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            grad = leaky_relu_backward(&cache.pre_activations[l], &grad, self.slope);
            let grads = layer.backward(&cache.affine[l], &grad)?;
            grad = grads.input;
            per_layer.push((grads.weights, grads.biases));
        }
        per_layer.reverse();

        // ∂L/∂y = direct path through z plus the path through the masked net.
        for b in 0..batch {
            for i in 0..self.d {
                let v = d_y.get(b, i) + grad.get(b, i);
                d_y.set(b, i, v);
            }
        }

        let mut flat = Vec::with_capacity(self.param_count());
        for (w, bias) in per_layer {
            flat.extend_from_slice(&w);
            flat.extend_from_slice(&bias);
        }
        flat.extend_from_slice(&mu_grads.weights);
        flat.extend_from_slice(&mu_grads.biases);
        flat.extend_from_slice(&s_grads.weights);
        flat.extend_from_slice(&s_grads.biases);
        Ok((flat, d_y))
    }

    /// Sequential inverse for one sample: coordinates are recovered in rank
    /// order via `y_i = z_i·exp(s_i) + μ_i`. Also returns `log|det ∂z/∂y|`
    /// evaluated at the recovered y, reusing the s values computed here.
    pub fn inverse(&self, z: &[f64], x: &[f64]) -> Result<(Vec<f64>, f64)> {
        let zm = Matrix::from_flat(1, z.len(), z.to_vec())?;
        let (y, ld) = self.inverse_batch(&zm, x)?;
        Ok((y.row(0).to_vec(), ld[0]))
    }

    /// Inverts many latent rows for one conditioning input in d sequential
    /// head evaluations instead of d per row.
    pub fn inverse_batch(&self, z: &Matrix, x: &[f64]) -> Result<(Matrix, Vec<f64>)> {
        if z.cols() != self.d || x.len() != self.p {
            return Err(Error::shape(
                "MadeBlock::inverse",
                format!("z width {} x len {} vs d={} p={}", z.cols(), x.len(), self.d, self.p),
            ));
        }
        let rows = z.rows();
        let mut coord_by_rank = vec![0usize; self.d];
        for (i, &r) in self.ordering.iter().enumerate() {
            coord_by_rank[r - 1] = i;
        }
        let mut y = Matrix::zeros(rows, self.d);
        let mut log_abs_det = vec![0.0; rows];
        let mut input = Matrix::zeros(rows, self.d + self.p);
        for &i in &coord_by_rank {
            for b in 0..rows {
                let row = input.row_mut(b);
                row[..self.d].copy_from_slice(y.row(b));
                row[self.d..].copy_from_slice(x);
            }
            let (mu, s) = self.eval_heads(&input)?;
            for b in 0..rows {
                let si = s.get(b, i);
                y.set(b, i, z.get(b, i) * si.exp() + mu.get(b, i));
                log_abs_det[b] -= si;
            }
        }
        if !y.is_finite() || log_abs_det.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MadeBlock::inverse".into()));
        }
        Ok((y, log_abs_det))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum::<usize>()
            + self.mu_head.param_count()
            + self.s_head.param_count()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            layer.write_params(out);
        }
        self.mu_head.write_params(out);
        self.s_head.write_params(out);
    }

    pub fn read_params(&mut self, mut src: &[f64]) {
        for layer in &mut self.layers {
            let n = layer.param_count();
            layer.read_params(&src[..n]);
            src = &src[n..];
        }
        let n = self.mu_head.param_count();
        self.mu_head.read_params(&src[..n]);
        src = &src[n..];
        self.s_head.read_params(&src[..self.s_head.param_count()]);
    }

    pub fn param_groups(&self, prefix: &str) -> Vec<(String, usize)> {
        let mut groups = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            groups.push((format!("{prefix}.hidden{i}.weights"), l.param_count() - l.out_dim()));
            groups.push((format!("{prefix}.hidden{i}.biases"), l.out_dim()));
        }
        groups.push((format!("{prefix}.mu.weights"), self.mu_head.param_count() - self.d));
        groups.push((format!("{prefix}.mu.biases"), self.d));
        groups.push((format!("{prefix}.s.weights"), self.s_head.param_count() - self.d));
        groups.push((format!("{prefix}.s.biases"), self.d));
        groups
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn rejects_bad_orderings() {
        let mut rng = rng_from_seed(0);
        assert!(build_made_masks(2, 1, &[4], &[1, 1], &mut rng).is_err());
        assert!(build_made_masks(2, 1, &[4], &[1], &mut rng).is_err());
        assert!(build_made_masks(2, 1, &[], &[1, 2], &mut rng).is_err());
    }

    #[test]
    fn d1_heads_depend_on_x_only() {
        let mut rng = rng_from_seed(7);
        let block = MadeBlock::init(1, 2, &[8, 8], vec![1], &mut rng).unwrap();
        let x = [0.4, -1.1];
        let (mu_a, s_a) = block.heads(&[0.0], &x).unwrap();
        let (mu_b, s_b) = block.heads(&[123.0], &x).unwrap();
        assert_eq!(mu_a, mu_b);
        assert_eq!(s_a, s_b);
        let (mu_c, _) = block.heads(&[0.0], &[9.0, 2.0]).unwrap();
        assert_ne!(mu_a, mu_c);
    }

    #[test]
    fn d2_identity_ordering_dependencies() {
        let mut rng = rng_from_seed(11);
        let block = MadeBlock::init(2, 1, &[16, 16], vec![1, 2], &mut rng).unwrap();
        let x = [0.3];
        let base = block.heads(&[0.5, -0.7], &x).unwrap();
        // Coordinate 1 heads never see either y.
        let moved_both = block.heads(&[5.5, 3.3], &x).unwrap();
        assert_eq!(base.0[0], moved_both.0[0]);
        assert_eq!(base.1[0], moved_both.1[0]);
        // Coordinate 2 heads may see y_1 only.
        let moved_y2 = block.heads(&[0.5, 9.9], &x).unwrap();
        assert_eq!(base.0[1], moved_y2.0[1]);
        assert_eq!(base.1[1], moved_y2.1[1]);
    }

    #[test]
    fn d3_perturbation_scan_respects_ordering() {
        let mut rng = rng_from_seed(13);
        let ordering = vec![2, 1, 3];
        let block = MadeBlock::init(3, 1, &[12, 12], ordering.clone(), &mut rng).unwrap();
        let x = [0.8];
        let y0 = [0.1, -0.4, 0.7];
        let (mu0, s0) = block.heads(&y0, &x).unwrap();
        for j in 0..3 {
            let mut y1 = y0;
            y1[j] += 0.37;
            let (mu1, s1) = block.heads(&y1, &x).unwrap();
            for i in 0..3 {
                if ordering[j] >= ordering[i] {
                    assert_eq!(mu0[i], mu1[i], "mu[{i}] changed by y[{j}]");
                    assert_eq!(s0[i], s1[i], "s[{i}] changed by y[{j}]");
                }
            }
        }
    }

    #[test]
    fn inverse_recovers_forward_exactly_per_block() {
        let mut rng = rng_from_seed(19);
        let block = MadeBlock::init(3, 2, &[10, 10], vec![3, 1, 2], &mut rng).unwrap();
        let y = Matrix::from_rows(&[vec![0.4, -1.2, 0.9]]).unwrap();
        let x = Matrix::from_rows(&[vec![0.1, 0.6]]).unwrap();
        let cache = block.forward(&y, &x).unwrap();
        let (y_rec, ld) = block.inverse(cache.z.row(0), x.row(0)).unwrap();
        for (a, b) in y_rec.iter().zip(y.row(0)) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert!((ld - cache.log_abs_det[0]).abs() < 1e-9);
    }
}
