//! Per-encoder loss construction: top-n high-frequency selection on the
//! token spectrum, cosine cost matrices, entropic optimal transport via
//! log-domain Sinkhorn, and the combined global + frequency loss.

use crate::error::{FraError, Result, Warning};
use crate::spectral::SpectralStack;
use crate::tensor::{dot, ensure_finite, norm, Matrix};

/// The n most energetic frequency components at or above the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct HighFreqSelection {
    indices: Vec<usize>,
    features: Matrix,
}

impl HighFreqSelection {
    /// Selected frequency indices in ascending order.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// n x d matrix of the selected coefficient rows, in index order.
    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn count(&self) -> usize {
        self.indices.len()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Re-gather features for the same (frozen) indices from another stack.
    /// Used by the frozen-selection gradient checks.
    pub fn regather(&self, stack: &SpectralStack) -> HighFreqSelection {
        let features = gather_rows(stack.coeffs(), &self.indices);
        HighFreqSelection {
            indices: self.indices.clone(),
            features,
        }
    }
}

fn gather_rows(m: &Matrix, indices: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(indices.len(), m.cols());
    for (a, &k) in indices.iter().enumerate() {
        out.row_mut(a).copy_from_slice(m.row(k));
    }
    out
}

/// Select the `n` indices in `[theta, P-1]` with the largest energies, ties
/// broken toward the lower index. Features are copied in ascending index
/// order.
pub fn select_high_freq(
    stack: &SpectralStack,
    theta: usize,
    n: usize,
) -> Result<HighFreqSelection> {
    let p = stack.token_count();
    if theta < 1 || theta >= p {
        return Err(FraError::InvalidParam {
            name: "theta",
            reason: format!("need 1 <= theta < P (theta={theta}, P={p})"),
        });
    }
    if n < 1 || n > p - theta {
        return Err(FraError::InvalidParam {
            name: "n",
            reason: format!("need 1 <= n <= P - theta (n={n}, P={p}, theta={theta})"),
        });
    }
    let mut candidates: Vec<usize> = (theta..p).collect();
    candidates.sort_by(|&a, &b| {
        stack.energy()[b]
            .partial_cmp(&stack.energy()[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut indices: Vec<usize> = candidates.into_iter().take(n).collect();
    indices.sort_unstable();
    let features = gather_rows(stack.coeffs(), &indices);
    Ok(HighFreqSelection { indices, features })
}

/// Normalize every row to unit length. Zero-norm rows are replaced by the
/// uniform unit vector `(1/sqrt(d), ..., 1/sqrt(d))` and a warning is
/// recorded; the replacement is a constant, so no gradient flows through it.
fn normalized_rows(m: &Matrix, side: &'static str, warnings: &mut Vec<Warning>) -> Matrix {
    let d = m.cols();
    let uniform = 1.0 / (d as f64).sqrt();
    let mut out = m.clone();
    for r in 0..m.rows() {
        let len = norm(m.row(r));
        let row = out.row_mut(r);
        if len == 0.0 {
            row.fill(uniform);
            warnings.push(Warning::ZeroNormRow { side, row: r });
        } else {
            for v in row {
                *v /= len;
            }
        }
    }
    out
}

/// Cosine-distance cost matrix between l2-normalized feature rows:
/// `C[a][b] = 1 - <src_a / |src_a|, tgt_b / |tgt_b|>`, entries in [0, 2].
pub fn cost_matrix(src: &Matrix, tgt: &Matrix, warnings: &mut Vec<Warning>) -> Result<Matrix> {
    if src.cols() != tgt.cols() {
        return Err(FraError::ShapeMismatch {
            what: "cost_matrix feature dim",
            expected: format!("{}", src.cols()),
            actual: format!("{}", tgt.cols()),
        });
    }
    ensure_finite(src.data(), "cost_matrix src")?;
    ensure_finite(tgt.data(), "cost_matrix tgt")?;
    let s = normalized_rows(src, "src", warnings);
    let t = normalized_rows(tgt, "tgt", warnings);
    Ok(Matrix::from_fn(src.rows(), tgt.rows(), |a, b| {
        1.0 - dot(s.row(a), t.row(b)).clamp(-1.0, 1.0)
    }))
}

/// Entropic-OT solver settings. The stopping rule is a cap on the maximum
/// marginal residual, checked once per full Sinkhorn round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornParams {
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        SinkhornParams {
            lambda: 0.1,
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

impl SinkhornParams {
    pub fn with_lambda(lambda: f64) -> Self {
        SinkhornParams {
            lambda,
            ..Default::default()
        }
    }
}

/// Entropic transport plan between uniform marginals together with the cost
/// it was solved against.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    plan: Matrix,
    cost: Matrix,
    lambda: f64,
    converged: bool,
}

impl TransportPlan {
    pub fn plan(&self) -> &Matrix {
        &self.plan
    }

    pub fn cost(&self) -> &Matrix {
        &self.cost
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// True when the stopping tolerance was met within the iteration budget;
    /// a capped run returns the best-effort renormalized plan instead.
    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn size(&self) -> usize {
        self.plan.rows()
    }

    /// Transport objective `<C, pi>`.
    pub fn objective(&self) -> f64 {
        dot(self.plan.data(), self.cost.data())
    }

    /// Largest deviation of any row or column sum from the uniform marginal.
    pub fn marginal_residual(&self) -> f64 {
        marginal_residual(&self.plan)
    }
}

fn marginal_residual(plan: &Matrix) -> f64 {
    let n = plan.rows();
    let target = 1.0 / n as f64;
    let mut worst: f64 = 0.0;
    for a in 0..n {
        worst = worst.max((plan.row(a).iter().sum::<f64>() - target).abs());
    }
    for b in 0..n {
        let col: f64 = (0..n).map(|a| plan.get(a, b)).sum();
        worst = worst.max((col - target).abs());
    }
    worst
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Scale rows to the uniform marginal, then columns. Run after the final
/// iteration so both marginal invariants hold to the tested tolerance.
fn renormalize(plan: &mut Matrix) {
    let n = plan.rows();
    let target = 1.0 / n as f64;
    for a in 0..n {
        let sum: f64 = plan.row(a).iter().sum();
        if sum > 0.0 {
            for v in plan.row_mut(a) {
                *v *= target / sum;
            }
        }
    }
    for b in 0..n {
        let sum: f64 = (0..n).map(|a| plan.get(a, b)).sum();
        if sum > 0.0 {
            for a in 0..n {
                plan.set(a, b, plan.get(a, b) * target / sum);
            }
        }
    }
}

/// Per-iteration convergence record. The dual objective rises monotonically
/// (each half-update is an exact block maximization of the concave dual);
/// the primal objective of the renormalized iterate converges but is NOT
/// monotone in general and is reported for diagnostics only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornCheckpoint {
    pub primal_objective: f64,
    pub dual_objective: f64,
}

/// Log-domain Sinkhorn between uniform marginals. Alternates the exact
/// potential updates, stops on the marginal residual or the iteration cap,
/// and renormalizes the returned plan once (rows, then columns).
pub fn sinkhorn(cost: &Matrix, params: SinkhornParams) -> Result<TransportPlan> {
    Ok(sinkhorn_with_checkpoints(cost, params)?.0)
}

/// [`sinkhorn`] plus a checkpoint per iteration.
pub fn sinkhorn_with_checkpoints(
    cost: &Matrix,
    params: SinkhornParams,
) -> Result<(TransportPlan, Vec<SinkhornCheckpoint>)> {
    if cost.rows() != cost.cols() || cost.rows() == 0 {
        return Err(FraError::ShapeMismatch {
            what: "sinkhorn cost",
            expected: "non-empty square matrix".to_string(),
            actual: format!("{}x{}", cost.rows(), cost.cols()),
        });
    }
    ensure_finite(cost.data(), "sinkhorn cost")?;
    if !params.lambda.is_finite() || params.lambda <= 0.0 {
        return Err(FraError::InvalidParam {
            name: "lambda",
            reason: format!("entropic regularization must be > 0, got {}", params.lambda),
        });
    }
    let n = cost.rows();
    let lambda = params.lambda;
    let log_marginal = -(n as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];

    let implied_plan = |f: &[f64], g: &[f64]| -> Matrix {
        Matrix::from_fn(n, n, |a, b| ((f[a] + g[b] - cost.get(a, b)) / lambda).exp())
    };
    // Dual of the entropic problem with uniform marginals:
    // (1/n) sum f + (1/n) sum g - lambda * sum_ab exp((f_a + g_b - C_ab)/lambda).
    let dual = |f: &[f64], g: &[f64], plan: &Matrix| -> f64 {
        (f.iter().sum::<f64>() + g.iter().sum::<f64>()) / n as f64
            - lambda * plan.data().iter().sum::<f64>()
    };

    let mut checkpoints = Vec::new();
    let mut converged = false;
    for _ in 0..params.max_iters {
        for (a, fa) in f.iter_mut().enumerate() {
            let lse = log_sum_exp((0..n).map(|b| (g[b] - cost.get(a, b)) / lambda));
            *fa = lambda * (log_marginal - lse);
        }
        for (b, gb) in g.iter_mut().enumerate() {
            let lse = log_sum_exp((0..n).map(|a| (f[a] - cost.get(a, b)) / lambda));
            *gb = lambda * (log_marginal - lse);
        }
        let plan = implied_plan(&f, &g);
        let mut snapshot = plan.clone();
        renormalize(&mut snapshot);
        checkpoints.push(SinkhornCheckpoint {
            primal_objective: dot(snapshot.data(), cost.data()),
            dual_objective: dual(&f, &g, &plan),
        });
        // Stop on the residual of the plan that would actually be returned.
        if marginal_residual(&plan) < params.tol && marginal_residual(&snapshot) < params.tol {
            converged = true;
            break;
        }
    }

    let mut plan = implied_plan(&f, &g);
    renormalize(&mut plan);
    Ok((
        TransportPlan {
            plan,
            cost: cost.clone(),
            lambda,
            converged,
        },
        checkpoints,
    ))
}

/// High-frequency alignment loss `sum_ab C_ab pi*_ab` between two selections,
/// together with the plan it was computed from.
pub fn ot_loss(
    src_sel: &HighFreqSelection,
    tgt_sel: &HighFreqSelection,
    params: SinkhornParams,
    warnings: &mut Vec<Warning>,
) -> Result<(f64, TransportPlan)> {
    if src_sel.count() != tgt_sel.count() || src_sel.dim() != tgt_sel.dim() {
        return Err(FraError::ShapeMismatch {
            what: "ot_loss selections",
            expected: format!("{}x{}", src_sel.count(), src_sel.dim()),
            actual: format!("{}x{}", tgt_sel.count(), tgt_sel.dim()),
        });
    }
    let cost = cost_matrix(src_sel.features(), tgt_sel.features(), warnings)?;
    let plan = sinkhorn(&cost, params)?;
    let loss = plan.objective();
    Ok((loss, plan))
}

/// Cosine distance `1 - cos(a, b)` with the zero-norm replacement policy of
/// [`cost_matrix`].
pub fn cosine_distance(a: &[f64], b: &[f64], warnings: &mut Vec<Warning>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(FraError::ShapeMismatch {
            what: "cosine_distance",
            expected: format!("{}", a.len()),
            actual: format!("{}", b.len()),
        });
    }
    ensure_finite(a, "cosine_distance lhs")?;
    ensure_finite(b, "cosine_distance rhs")?;
    let ma = Matrix::from_vec(1, a.len(), a.to_vec());
    let mb = Matrix::from_vec(1, b.len(), b.to_vec());
    Ok(cost_matrix(&ma, &mb, warnings)?.get(0, 0))
}

/// Decomposed per-encoder loss.
#[derive(Debug, Clone)]
pub struct EncoderLossParts {
    pub total: f64,
    pub global: f64,
    pub frequency: f64,
    pub plan: TransportPlan,
}

/// `w_g * (1 - cos(global_src, global_tgt)) + w_l * ot_loss(...)`.
#[allow(clippy::too_many_arguments)]
pub fn per_encoder_loss(
    global_src: &[f64],
    global_tgt: &[f64],
    src_sel: &HighFreqSelection,
    tgt_sel: &HighFreqSelection,
    w_g: f64,
    w_l: f64,
    params: SinkhornParams,
    warnings: &mut Vec<Warning>,
) -> Result<EncoderLossParts> {
    if w_g < 0.0 || w_l < 0.0 {
        return Err(FraError::InvalidParam {
            name: "w_g/w_l",
            reason: format!("loss weights must be >= 0, got ({w_g}, {w_l})"),
        });
    }
    let global = cosine_distance(global_src, global_tgt, warnings)?;
    let (frequency, plan) = ot_loss(src_sel, tgt_sel, params, warnings)?;
    Ok(EncoderLossParts {
        total: w_g * global + w_l * frequency,
        global,
        frequency,
        plan,
    })
}

/// Gradients of the per-encoder loss with respect to the source-side global
/// feature and the source-side selected coefficient rows.
///
/// The transport plan and the selected indices are treated as constants
/// (detached-plan convention), so this is the exact gradient of the frozen
/// surrogate `w_g * (1 - cos) + w_l * <C(. ), pi>`. Rows that were replaced
/// by the uniform-unit-vector fallback receive a zero gradient.
pub fn per_encoder_loss_adjoints(
    global_src: &[f64],
    global_tgt: &[f64],
    src_sel: &HighFreqSelection,
    tgt_sel: &HighFreqSelection,
    plan: &TransportPlan,
    w_g: f64,
    w_l: f64,
) -> Result<(Vec<f64>, Matrix)> {
    let d_global = cosine_distance_grad_lhs(global_src, global_tgt)
        .into_iter()
        .map(|v| v * w_g)
        .collect();

    let n = src_sel.count();
    if plan.size() != n {
        return Err(FraError::ShapeMismatch {
            what: "plan size",
            expected: format!("{n}"),
            actual: format!("{}", plan.size()),
        });
    }
    let d = src_sel.dim();
    let mut d_selected = Matrix::zeros(n, d);
    // Unit target rows (constants under differentiation).
    let mut t_hat = tgt_sel.features().clone();
    for b in 0..n {
        let len = norm(t_hat.row(b));
        let row = t_hat.row_mut(b);
        if len == 0.0 {
            row.fill(1.0 / (d as f64).sqrt());
        } else {
            for v in row {
                *v /= len;
            }
        }
    }
    for a in 0..n {
        let s = src_sel.features().row(a);
        let len = norm(s);
        if len == 0.0 {
            continue; // replaced by a constant; no gradient
        }
        let s_hat: Vec<f64> = s.iter().map(|v| v / len).collect();
        // m_a = sum_b pi_ab * t_hat_b
        let mut m = vec![0.0; d];
        for b in 0..n {
            let pi = plan.plan().get(a, b);
            for (mv, tv) in m.iter_mut().zip(t_hat.row(b)) {
                *mv += pi * tv;
            }
        }
        let q = dot(&s_hat, &m);
        let out = d_selected.row_mut(a);
        for i in 0..d {
            out[i] = -w_l * (m[i] - q * s_hat[i]) / len;
        }
    }
    Ok((d_global, d_selected))
}

/// `d/da (1 - cos(a, b))`; zero when `a` has zero norm (the fallback row is
/// a constant).
pub fn cosine_distance_grad_lhs(a: &[f64], b: &[f64]) -> Vec<f64> {
    let d = a.len();
    let na = norm(a);
    if na == 0.0 {
        return vec![0.0; d];
    }
    let nb = norm(b);
    let b_hat: Vec<f64> = if nb == 0.0 {
        vec![1.0 / (d as f64).sqrt(); d]
    } else {
        b.iter().map(|v| v / nb).collect()
    };
    let a_hat: Vec<f64> = a.iter().map(|v| v / na).collect();
    let cos = dot(&a_hat, &b_hat);
    (0..d).map(|i| -(b_hat[i] - cos * a_hat[i]) / na).collect()
}

/// Scatter an n x d selected-row adjoint back to the full P x d
/// coefficient-domain adjoint (zeros elsewhere).
pub fn scatter_selection_adjoint(
    selection: &HighFreqSelection,
    d_selected: &Matrix,
    token_count: usize,
) -> Matrix {
    let mut out = Matrix::zeros(token_count, d_selected.cols());
    for (a, &k) in selection.indices().iter().enumerate() {
        out.row_mut(k).copy_from_slice(d_selected.row(a));
    }
    out
}
