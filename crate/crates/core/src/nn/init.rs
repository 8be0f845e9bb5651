use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

/// `fan_in × fan_out` row-major matrix drawn from U(±√(6/(fan_in+fan_out))).
pub fn glorot_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).unwrap();
    (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect()
}

/// `rows × cols` row-major matrix with orthonormal rows (rows ≤ cols) or
/// orthonormal columns (rows > cols), from Gram-Schmidt on a Gaussian draw.
pub fn orthogonal(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<f64> {
    let (k, n) = if rows <= cols {
        (rows, cols)
    } else {
        (cols, rows)
    };
    // k vectors of length n, orthonormalised in turn.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= p * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let mut out = vec![0.0; rows * cols];
    for (i, b) in basis.iter().enumerate() {
        for (j, &x) in b.iter().enumerate() {
            if rows <= cols {
                out[i * cols + j] = x;
            } else {
                out[j * cols + i] = x;
            }
        }
    }
    out
}
