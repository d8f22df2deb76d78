//! Trajectory storage, block-Hankel construction, persistency-of-excitation
//! checks and simplex-coefficient utilities.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A finite input/measured-state trajectory, stored column-per-time-step so
/// Hankel blocks are stride views into contiguous memory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Inputs, `m x T`.
    pub u: DMatrix<f64>,
    /// Measured states, `n x T`.
    pub x_hat: DMatrix<f64>,
    /// Generation seed, when synthetic.
    pub seed: Option<u64>,
    /// Label of the noise set the data was generated under.
    pub noise_ref: Option<String>,
}

impl Trajectory {
    pub fn new(u: DMatrix<f64>, x_hat: DMatrix<f64>) -> Result<Self> {
        if u.ncols() != x_hat.ncols() {
            return Err(Error::DimensionMismatch { expected: u.ncols(), got: x_hat.ncols() });
        }
        if u.ncols() == 0 {
            return Err(Error::Format("trajectory must have at least one sample".into()));
        }
        Ok(Self { u, x_hat, seed: None, noise_ref: None })
    }

    pub fn len(&self) -> usize {
        self.u.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.u.ncols() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.x_hat.nrows()
    }

    /// CSV with header `t,u_1..u_m,xhat_1..xhat_n`. Values print in Rust's
    /// shortest round-trip form, so decimal-representable data survives
    /// import/export bit-exactly.
    pub fn to_csv(&self) -> String {
        let m = self.input_dim();
        let n = self.state_dim();
        let mut out = String::from("t");
        for j in 1..=m {
            out.push_str(&format!(",u_{j}"));
        }
        for j in 1..=n {
            out.push_str(&format!(",xhat_{j}"));
        }
        out.push('\n');
        for t in 0..self.len() {
            out.push_str(&t.to_string());
            for i in 0..m {
                out.push_str(&format!(",{}", self.u[(i, t)]));
            }
            for i in 0..n {
                out.push_str(&format!(",{}", self.x_hat[(i, t)]));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty csv".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        let m = cols.iter().filter(|c| c.starts_with("u_")).count();
        let n = cols.iter().filter(|c| c.starts_with("xhat_")).count();
        if m == 0 || n == 0 || cols.len() != 1 + m + n {
            return Err(Error::Format(format!("unexpected csv header: {header}")));
        }
        let mut us: Vec<f64> = Vec::new();
        let mut xs: Vec<f64> = Vec::new();
        let mut t_count = 0usize;
        for line in lines {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 1 + m + n {
                return Err(Error::Format(format!("bad csv row: {line}")));
            }
            for p in &parts[1..=m] {
                us.push(p.parse::<f64>().map_err(|e| Error::Format(e.to_string()))?);
            }
            for p in &parts[m + 1..] {
                xs.push(p.parse::<f64>().map_err(|e| Error::Format(e.to_string()))?);
            }
            t_count += 1;
        }
        let u = DMatrix::from_vec(m, t_count, us_to_col_major(&us, m, t_count));
        let x_hat = DMatrix::from_vec(n, t_count, us_to_col_major(&xs, n, t_count));
        Trajectory::new(u, x_hat)
    }
}

fn us_to_col_major(row_major_by_time: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    // Input is time-major (each row of the csv holds one column of the
    // matrix), which is already nalgebra's column-major layout.
    debug_assert_eq!(row_major_by_time.len(), rows * cols);
    row_major_by_time.to_vec()
}

/// Block Hankel matrices of an input/state trajectory at depth `L+1`.
#[derive(Debug, Clone)]
pub struct HankelSystem {
    pub h_u: DMatrix<f64>,
    pub h_xhat: DMatrix<f64>,
    pub horizon: usize,
    pub data_len: usize,
    pub input_dim: usize,
    pub state_dim: usize,
}

/// Build depth-`depth` block Hankels (so `L = depth - 1`).
pub fn build_hankel(traj: &Trajectory, depth: usize) -> Result<HankelSystem> {
    let t = traj.len();
    if depth == 0 || depth > t {
        return Err(Error::DepthTooLarge { depth, len: t });
    }
    let cols = t - depth + 1;
    let h_u = hankelize(&traj.u, depth, cols);
    let h_xhat = hankelize(&traj.x_hat, depth, cols);
    Ok(HankelSystem {
        h_u,
        h_xhat,
        horizon: depth - 1,
        data_len: t,
        input_dim: traj.input_dim(),
        state_dim: traj.state_dim(),
    })
}

fn hankelize(series: &DMatrix<f64>, depth: usize, cols: usize) -> DMatrix<f64> {
    let p = series.nrows();
    let mut h = DMatrix::<f64>::zeros(p * depth, cols);
    for block in 0..depth {
        for c in 0..cols {
            for r in 0..p {
                h[(block * p + r, c)] = series[(r, block + c)];
            }
        }
    }
    h
}

impl HankelSystem {
    pub fn num_cols(&self) -> usize {
        self.h_u.ncols()
    }

    /// Input block row `l` (an `m x (T-L)` view).
    pub fn block_u(&self, l: usize) -> DMatrix<f64> {
        self.h_u
            .rows(l * self.input_dim, self.input_dim)
            .into_owned()
    }

    /// Measured-state block row `l` (an `n x (T-L)` view).
    pub fn block_x(&self, l: usize) -> DMatrix<f64> {
        self.h_xhat
            .rows(l * self.state_dim, self.state_dim)
            .into_owned()
    }

    /// Stacked input block rows `i..=j`.
    pub fn blocks_u(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.h_u
            .rows(i * self.input_dim, (j - i + 1) * self.input_dim)
            .into_owned()
    }

    /// Stacked measured-state block rows `i..=j`.
    pub fn blocks_x(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.h_xhat
            .rows(i * self.state_dim, (j - i + 1) * self.state_dim)
            .into_owned()
    }

    /// Feedback-transformed input Hankel `H_u - (I ⊗ K) H_x` together with
    /// the state Hankel, computed blockwise.
    pub fn closed_loop(&self, k: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if k.nrows() != self.input_dim || k.ncols() != self.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim * self.state_dim,
                got: k.nrows() * k.ncols(),
            });
        }
        let mut hv = self.h_u.clone();
        for l in 0..=self.horizon {
            let xb = self.h_xhat.rows(l * self.state_dim, self.state_dim);
            let mut ub = hv.rows_mut(l * self.input_dim, self.input_dim);
            ub -= k * xb;
        }
        Ok((hv, self.h_xhat.clone()))
    }
}

/// Nonnegative coefficient vector summing to `theta`.
#[derive(Debug, Clone)]
pub struct SimplexCoefficient {
    pub g: DVector<f64>,
    pub theta: f64,
}

impl SimplexCoefficient {
    pub fn new(g: DVector<f64>, theta: f64) -> Result<Self> {
        if g.min() < -1e-10 {
            return Err(Error::InvalidSimplex(format!("negative entry {}", g.min())));
        }
        let sum: f64 = g.iter().sum();
        if (sum - theta).abs() > 1e-10 * (1.0 + theta.abs()) {
            return Err(Error::InvalidSimplex(format!("sum {sum} != theta {theta}")));
        }
        Ok(Self { g, theta })
    }

    pub fn unit(index: usize, len: usize) -> Self {
        let mut g = DVector::zeros(len);
        g[index] = 1.0;
        Self { g, theta: 1.0 }
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }
}

/// Persistency-of-excitation report for a given order.
#[derive(Debug, Clone)]
pub struct PeReport {
    pub ok: bool,
    pub rank: usize,
    pub required: usize,
    pub singular_values: Vec<f64>,
    pub reason: Option<String>,
}

/// Rank check on the depth-`order` input Hankel: persistently exciting of
/// that order iff the numeric rank equals `m * order`.
pub fn check_pe(u: &DMatrix<f64>, order: usize) -> PeReport {
    let m = u.nrows();
    let t = u.ncols();
    let required = m * order;
    if order == 0 || t < order {
        return PeReport {
            ok: false,
            rank: 0,
            required,
            singular_values: Vec::new(),
            reason: Some(format!("data length {t} shorter than order {order}")),
        };
    }
    let cols = t - order + 1;
    let h = hankelize(u, order, cols);
    let dim_scale = h.nrows().max(h.ncols()) as f64;
    let svd = h.svd(false, false);
    let smax = svd.singular_values.max();
    let thresh = smax * dim_scale * f64::EPSILON * 100.0;
    let rank = svd.singular_values.iter().filter(|&&s| s > thresh).count();
    PeReport {
        ok: rank == required,
        rank,
        required,
        singular_values: svd.singular_values.iter().copied().collect(),
        reason: if rank == required {
            None
        } else {
            Some(format!("numeric rank {rank} < {required} at threshold {thresh:.3e}"))
        },
    }
}

/// Feedback-transformed window selected by a simplex coefficient:
/// `v = (H_u - K̃ H_x) g` and `z = H_x g`, split into per-step vectors.
pub fn trajectory_from_coefficient(
    hs: &HankelSystem,
    k: &DMatrix<f64>,
    g: &SimplexCoefficient,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    if g.len() != hs.num_cols() {
        return Err(Error::DimensionMismatch { expected: hs.num_cols(), got: g.len() });
    }
    let (hv, hx) = hs.closed_loop(k)?;
    let v_stack = &hv * &g.g;
    let z_stack = &hx * &g.g;
    let m = hs.input_dim;
    let n = hs.state_dim;
    let v = (0..=hs.horizon)
        .map(|l| v_stack.rows(l * m, m).into_owned())
        .collect();
    let z = (0..=hs.horizon)
        .map(|l| z_stack.rows(l * n, n).into_owned())
        .collect();
    Ok((v, z))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj_from_scalar(u: &[f64], x: &[f64]) -> Trajectory {
        Trajectory::new(
            DMatrix::from_row_slice(1, u.len(), u),
            DMatrix::from_row_slice(1, x.len(), x),
        )
        .unwrap()
    }

    #[test]
    fn hankel_definition_unrolled() {
        let t = traj_from_scalar(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 0.0, 0.0]);
        let hs = build_hankel(&t, 2).unwrap();
        assert_eq!(hs.h_u, DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn hankel_constant_columns_equal() {
        let t = traj_from_scalar(&[5.0; 6], &[1.0; 6]);
        let hs = build_hankel(&t, 3).unwrap();
        for c in 1..hs.num_cols() {
            assert_eq!(hs.h_u.column(c), hs.h_u.column(0));
        }
    }

    #[test]
    fn hankel_paper_scale_dimensions() {
        let t = traj_from_scalar(&vec![0.5; 100], &vec![0.1; 100]);
        let hs = build_hankel(&t, 9).unwrap();
        assert_eq!(hs.h_u.nrows(), 9);
        assert_eq!(hs.h_u.ncols(), 92);
    }

    #[test]
    fn depth_too_large_rejected() {
        let t = traj_from_scalar(&[1.0, 2.0], &[0.0, 0.0]);
        assert!(matches!(build_hankel(&t, 3), Err(Error::DepthTooLarge { .. })));
    }

    #[test]
    fn pe_zero_and_constant_inputs() {
        let zero = DMatrix::<f64>::zeros(1, 10);
        assert!(!check_pe(&zero, 2).ok);
        let constant = DMatrix::from_element(1, 10, 3.0);
        let rep = check_pe(&constant, 2);
        assert!(!rep.ok);
        assert_eq!(rep.rank, 1);
    }

    #[test]
    fn pe_random_input_minimal_length() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        // m = 1, L = 3, n = 2: minimal length (m+1)(L+n+1)-1 = 11.
        let order = 6;
        let len = 11;
        let u = DMatrix::from_fn(1, len, |_, _| rng.random_range(-1.0..1.0));
        let rep = check_pe(&u, order);
        assert!(rep.ok, "rank {} of {}", rep.rank, rep.required);
    }

    #[test]
    fn closed_loop_zero_gain_is_identity() {
        let t = traj_from_scalar(&[1.0, 2.0, 3.0, 4.0], &[0.5, 0.25, 0.125, 0.0625]);
        let hs = build_hankel(&t, 2).unwrap();
        let (hv, hx) = hs.closed_loop(&DMatrix::zeros(1, 1)).unwrap();
        assert_eq!(hv, hs.h_u);
        assert_eq!(hx, hs.h_xhat);
    }

    #[test]
    fn closed_loop_per_sample_recomputation() {
        let t = traj_from_scalar(&[1.0, 2.0, 3.0, 4.0], &[0.5, 0.25, 0.125, 0.0625]);
        let hs = build_hankel(&t, 2).unwrap();
        let k = DMatrix::from_row_slice(1, 1, &[2.0]);
        let (hv, _) = hs.closed_loop(&k).unwrap();
        for l in 0..=1 {
            for c in 0..hs.num_cols() {
                let expect = t.u[(0, l + c)] - 2.0 * t.x_hat[(0, l + c)];
                assert!((hv[(l, c)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn coefficient_unit_vector_reproduces_window() {
        let t = traj_from_scalar(&[1.0, 2.0, 3.0, 4.0], &[0.5, 0.25, 0.125, 0.0625]);
        let hs = build_hankel(&t, 3).unwrap();
        let k = DMatrix::from_row_slice(1, 1, &[0.5]);
        let g = SimplexCoefficient::unit(1, hs.num_cols());
        let (v, z) = trajectory_from_coefficient(&hs, &k, &g).unwrap();
        for l in 0..3 {
            assert!((z[l][0] - t.x_hat[(0, 1 + l)]).abs() < 1e-15);
            let expect_v = t.u[(0, 1 + l)] - 0.5 * t.x_hat[(0, 1 + l)];
            assert!((v[l][0] - expect_v).abs() < 1e-15);
        }
    }

    #[test]
    fn coefficient_mean_of_two_windows() {
        let t = traj_from_scalar(&[1.0, 2.0, 3.0, 4.0], &[8.0, 4.0, 2.0, 1.0]);
        let hs = build_hankel(&t, 2).unwrap();
        let g = SimplexCoefficient::new(
            DVector::from_row_slice(&[0.5, 0.0, 0.5]),
            1.0,
        )
        .unwrap();
        let (_, z) = trajectory_from_coefficient(&hs, &DMatrix::zeros(1, 1), &g).unwrap();
        assert!((z[0][0] - 5.0).abs() < 1e-15); // (8+2)/2
        assert!((z[1][0] - 2.5).abs() < 1e-15); // (4+1)/2
    }

    #[test]
    fn simplex_validation() {
        assert!(SimplexCoefficient::new(DVector::from_row_slice(&[0.5, 0.5]), 1.0).is_ok());
        assert!(SimplexCoefficient::new(DVector::from_row_slice(&[0.5, 0.6]), 1.0).is_err());
        assert!(SimplexCoefficient::new(DVector::from_row_slice(&[-0.1, 1.1]), 1.0).is_err());
        assert!(SimplexCoefficient::new(DVector::from_row_slice(&[1.0, 1.0]), 2.0).is_ok());
    }

    #[test]
    fn csv_round_trip_bit_exact() {
        let t = traj_from_scalar(&[1.0, 0.25, -3.5, 0.1], &[0.5, -0.125, 2.0, 0.3]);
        let text = t.to_csv();
        let back = Trajectory::from_csv(&text).unwrap();
        assert_eq!(t.u, back.u);
        assert_eq!(t.x_hat, back.x_hat);
        // And the serialized text is stable under a second round trip.
        assert_eq!(text, back.to_csv());
    }
}
