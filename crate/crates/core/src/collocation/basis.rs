use super::CollocationError;

/// Clamped cubic B-spline basis.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisConfig {
    knots: Vec<f64>,
}

const DEGREE: usize = 3;

impl BasisConfig {
    /// Basis with the given breakpoints (the first and last are the domain
    /// ends, the rest become interior knots).
    pub fn cubic(breakpoints: &[f64]) -> Result<Self, CollocationError> {
        if breakpoints.len() < 2 || breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CollocationError::InvalidBasis("breakpoints must be strictly increasing, at least two".into()));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(CollocationError::InvalidBasis("breakpoints must be finite".into()));
        }
        let (a, b) = (breakpoints[0], *breakpoints.last().unwrap());
        let mut knots = vec![a; DEGREE + 1];
        knots.extend_from_slice(&breakpoints[1..breakpoints.len() - 1]);
        knots.extend(std::iter::repeat_n(b, DEGREE + 1));
        Ok(Self { knots })
    }

    /// One knot per observation time.
    pub fn at_times(times: &[f64]) -> Result<Self, CollocationError> {
        Self::cubic(times)
    }

    pub fn uniform(a: f64, b: f64, n_intervals: usize) -> Result<Self, CollocationError> {
        let n = n_intervals.max(1);
        let pts: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
        Self::cubic(&pts)
    }

    /// Same space plus one more interior knot; the old space is a subspace.
    pub fn with_knot(&self, t: f64) -> Result<Self, CollocationError> {
        let mut pts = self.breakpoints();
        if !(t > pts[0] && t < *pts.last().unwrap()) || pts.contains(&t) {
            return Err(CollocationError::InvalidBasis(format!("cannot insert knot at {t}")));
        }
        pts.push(t);
        pts.sort_by(f64::total_cmp);
        Self::cubic(&pts)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        self.knots[DEGREE..self.knots.len() - DEGREE].to_vec()
    }

    pub fn n_basis(&self) -> usize {
        self.knots.len() - DEGREE - 1
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    fn span(&self, t: f64) -> usize {
        let n = self.n_basis();
        if t >= self.knots[n] {
            return n - 1;
        }
        if t <= self.knots[DEGREE] {
            return DEGREE;
        }
        // last index s with knots[s] <= t
        self.knots.partition_point(|&k| k <= t) - 1
    }

    /// Index of the first non-zero function and the values and first
    /// derivatives of the four non-zero functions at `t`.
    pub fn eval(&self, t: f64) -> (usize, [f64; 4], [f64; 4]) {
        let u = &self.knots;
        let s = self.span(t);
        let mut n = [0.0; 4];
        let mut left = [0.0; 4];
        let mut right = [0.0; 4];
        let mut quad = [0.0; 3];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = t - u[s + 1 - j];
            right[j] = u[s + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
            if j == DEGREE - 1 {
                quad.copy_from_slice(&n[..3]);
            }
        }
        let mut d = [0.0; 4];
        for (j, dj) in d.iter_mut().enumerate() {
            let i = s - DEGREE + j;
            let a = if j >= 1 { ratio(quad[j - 1], u[i + 3] - u[i]) } else { 0.0 };
            let b = if j <= 2 { ratio(quad[j], u[i + 4] - u[i + 1]) } else { 0.0 };
            *dj = DEGREE as f64 * (a - b);
        }
        (s - DEGREE, n, d)
    }

    /// `(x(t), x'(t))` for coefficients `c`.
    pub fn value(&self, c: &[f64], t: f64) -> (f64, f64) {
        let (i0, b, db) = self.eval(t);
        let mut x = 0.0;
        let mut dx = 0.0;
        for j in 0..4 {
            x += c[i0 + j] * b[j];
            dx += c[i0 + j] * db[j];
        }
        (x, dx)
    }

    /// Least-squares coefficients interpolating or smoothing `(t_i, y_i)`.
    pub fn least_squares(&self, times: &[f64], y: &[f64]) -> Vec<f64> {
        let n = self.n_basis();
        let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut rhs = nalgebra::DVector::<f64>::zeros(n);
        for (&t, &v) in times.iter().zip(y) {
            let (i0, b, _) = self.eval(t);
            for p in 0..4 {
                rhs[i0 + p] += b[p] * v;
                for q in 0..4 {
                    a[(i0 + p, i0 + q)] += b[p] * b[q];
                }
            }
        }
        // small ridge keeps the extra end coefficients determined
        let scale = a.diagonal().max().max(1.0);
        for i in 0..n {
            a[(i, i)] += 1e-10 * scale;
        }
        match a.cholesky() {
            Some(ch) => ch.solve(&rhs).iter().copied().collect(),
            None => vec![0.0; n],
        }
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}
