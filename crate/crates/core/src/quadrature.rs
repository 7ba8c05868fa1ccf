//! Gauss–Legendre rules and barycentric interpolation on their nodes.

/// Nodes (ascending) and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = n.div_ceil(2);
    for i in 0..half {
        // Tricomi initial guess, then Newton on P_n.
        let theta = std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5);
        let mut z = theta.cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() <= 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_interval(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    (x.iter().map(|t| c + r * t).collect(), w.iter().map(|v| r * v).collect())
}

/// Barycentric Lagrange interpolant through arbitrary distinct nodes.
pub struct Barycentric {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Barycentric {
    pub fn new(nodes: &[f64]) -> Self {
        let n = nodes.len();
        let mut weights = vec![1.0; n];
        // Rescaled by the interval length to keep the products in range.
        let scale = if n > 1 { 4.0 / (nodes[n - 1] - nodes[0]).abs().max(f64::MIN_POSITIVE) } else { 1.0 };
        for j in 0..n {
            let mut p = 1.0;
            for k in 0..n {
                if k != j {
                    p *= scale * (nodes[j] - nodes[k]);
                }
            }
            weights[j] = 1.0 / p;
        }
        Self { nodes: nodes.to_vec(), weights }
    }

    /// Coefficients `c_j(t)` with `p(t) = Σ c_j f_j`.
    pub fn coefficients(&self, t: f64) -> Vec<f64> {
        let n = self.nodes.len();
        let mut c = vec![0.0; n];
        if let Some(j) = self.nodes.iter().position(|&x| x == t) {
            c[j] = 1.0;
            return c;
        }
        let mut sum = 0.0;
        for j in 0..n {
            c[j] = self.weights[j] / (t - self.nodes[j]);
            sum += c[j];
        }
        for v in &mut c {
            *v /= sum;
        }
        c
    }
}
