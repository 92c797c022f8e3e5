//! Same-timestep InfoNCE distillation loss plus the sequential-contrast
//! ablation variant.
//!
//! A batch pairs source embeddings (projected actor latents) with target
//! embeddings (projected privileged context). Row `t` of the two matrices
//! forms the positive pair; every other target row in the batch serves as
//! a negative. The loss is source-anchored: the softmax normalizes over
//! targets only,
//!
//! ```text
//! L = −(1/B) Σ_t log[ exp(s_t·t_t/τ) / Σ_{t'} exp(s_t·t_{t'}/τ) ]
//! ```
//!
//! computed via logsumexp for stability. The sequential variant applies the
//! identical formula to pairs shifted one control step apart; only the pair
//! construction differs.

use crate::error::{Error, Result};
use crate::tensor::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Default temperature for L2-normalized embeddings.
pub const DEFAULT_TAU: f64 = 0.1;

/// Maximum tolerated deviation of any row norm from 1.
const NORM_TOL: f64 = 1e-6;

/// Shared precondition checks: matching [B, E] shapes with B ≥ 2, positive
/// temperature, and unit-norm rows on both sides.
pub fn validate_batch(source: &Tensor, target: &Tensor, tau: f64) -> Result<()> {
    if tau <= 0.0 {
        return Err(Error::config(format!(
            "contrastive temperature must be positive, got {tau}"
        )));
    }
    if source.shape() != target.shape() {
        return Err(Error::config(format!(
            "contrastive batch shapes differ: source {:?}, target {:?}",
            source.shape(),
            target.shape()
        )));
    }
    let b = source.rows();
    if b < 2 {
        return Err(Error::config(format!(
            "contrastive batch needs at least 2 pairs, got {b}"
        )));
    }
    for (name, m) in [("source", source), ("target", target)] {
        for r in 0..b {
            let norm: f64 = m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOL {
                return Err(Error::config(format!(
                    "contrastive {name} row {r} has norm {norm}, expected 1"
                )));
            }
        }
    }
    Ok(())
}

/// Eager InfoNCE loss. Serves as the oracle for the taped version.
pub fn info_nce(source: &Tensor, target: &Tensor, tau: f64) -> Result<f64> {
    validate_batch(source, target, tau)?;
    let b = source.rows();
    let logits = source.matmul_nt(target)?.scale(1.0 / tau)?;
    let lse = logits.logsumexp_rows()?;
    let mut loss = 0.0;
    for t in 0..b {
        let positive = logits.data()[t * b + t];
        loss += lse.data()[t] - positive;
    }
    Ok(loss / b as f64)
}

/// Taped InfoNCE loss over embedding nodes; differentiable w.r.t. both
/// sides. The positive diagonal is obtained as the row-sum of the
/// elementwise product, which avoids needing a diagonal-extraction op.
pub fn info_nce_on_tape(tape: &mut Tape, source: NodeId, target: NodeId, tau: f64) -> Result<NodeId> {
    validate_batch(tape.value(source), tape.value(target), tau)?;
    let b = tape.value(source).rows() as f64;
    let prod = tape.mul(source, target)?;
    let pos_sum = tape.sum(prod)?;
    let pos_scaled = tape.scale(pos_sum, 1.0 / tau)?;
    let logits = tape.matmul_nt(source, target)?;
    let logits = tape.scale(logits, 1.0 / tau)?;
    let lse = tape.logsumexp_rows(logits)?;
    let lse_sum = tape.sum(lse)?;
    let gap = tape.sub(lse_sum, pos_scaled)?;
    tape.scale(gap, 1.0 / b)
}

/// Sequential-contrast variant: the caller supplies source embeddings at
/// step t paired against target embeddings at step t+1. The formula is
/// identical; only the pairing differs, so this delegates after the same
/// validation.
pub fn info_nce_sequential(source_t: &Tensor, target_tplus1: &Tensor, tau: f64) -> Result<f64> {
    info_nce(source_t, target_tplus1, tau)
}

/// Build the shifted (t, t+1) pairing from per-step embedding matrices.
/// Element `i` of each slice is the [B, E] embedding batch at control step
/// `i`; the result pairs steps 0..T−1 of `source_steps` with steps 1..T of
/// `target_steps`, stacking everything into one batch of B·(T−1) pairs. The
/// final step of the rollout has no successor and is excluded, so a
/// length-1 rollout leaves an empty batch and is rejected.
pub fn shifted_pairs(source_steps: &[Tensor], target_steps: &[Tensor]) -> Result<(Tensor, Tensor)> {
    let t = source_steps.len();
    if target_steps.len() != t {
        return Err(Error::config(format!(
            "shifted pairing needs equal sequence lengths, got {t} and {}",
            target_steps.len()
        )));
    }
    if t < 2 {
        return Err(Error::config(format!(
            "sequential contrast needs a rollout of length >= 2, got {t}"
        )));
    }
    let src: Vec<&Tensor> = source_steps[..t - 1].iter().collect();
    let tgt: Vec<&Tensor> = target_steps[1..].iter().collect();
    Ok((Tensor::concat_rows(&src)?, Tensor::concat_rows(&tgt)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use approx::assert_relative_eq;
    use rand::Rng;

    /// Random batch with exactly unit rows.
    fn random_unit(rows: usize, cols: usize, label: &str) -> Tensor {
        let mut rng = SeedStream::new(77).with_str(label).rng();
        Tensor::from_rows(rows, cols, |_| {
            let v: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n.max(1e-9)).collect()
        })
        .unwrap()
    }

    /// One-hot basis row batch (orthonormal).
    fn basis(rows: usize, cols: usize) -> Tensor {
        Tensor::from_rows(rows, cols, |r| {
            let mut v = vec![0.0; cols];
            v[r] = 1.0;
            v
        })
        .unwrap()
    }

    #[test]
    fn identical_embeddings_give_ln_b_exactly() {
        for b in [2usize, 8, 64] {
            let row: Vec<f64> = {
                let mut v = vec![0.0; 8];
                v[3] = 1.0;
                v
            };
            let m = Tensor::from_rows(b, 8, |_| row.clone()).unwrap();
            let loss = info_nce(&m, &m, 0.1).unwrap();
            assert_relative_eq!(loss, (b as f64).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn two_orthonormal_pairs_match_the_closed_form() {
        // Logits = I/τ; per-row softmax gives e/(e+1) at τ=1, so
        // L = ln(1 + e^{-1}).
        let m = basis(2, 2);
        let loss = info_nce(&m, &m, 1.0).unwrap();
        assert_relative_eq!(loss, (1.0 + (-1.0f64).exp()).ln(), epsilon = 1e-12);
    }

    #[test]
    fn loss_decreases_as_positive_similarity_rises() {
        // Row 0's positive similarity sweeps over [−1, 1] while every other
        // dot product stays fixed; the loss must fall strictly.
        let target = basis(2, 3);
        let mut last = f64::INFINITY;
        for s in [-1.0f64, -0.5, 0.0, 0.5, 1.0] {
            let ortho = (1.0 - s * s).max(0.0).sqrt();
            let source = Tensor::from_rows(2, 3, |r| {
                if r == 0 {
                    vec![s, 0.0, ortho]
                } else {
                    vec![0.0, 1.0, 0.0]
                }
            })
            .unwrap();
            let loss = info_nce(&source, &target, 0.5).unwrap();
            assert!(loss < last, "loss {loss} did not drop below {last} at s={s}");
            last = loss;
        }
    }

    #[test]
    fn loss_stays_inside_the_normalized_bounds() {
        // For unit rows every logit lies in [−1/τ, 1/τ], so the softmax's
        // log-denominator exceeds the positive logit by at most ln B + 2/τ
        // and never undershoots it.
        let mut rng = SeedStream::new(5).with_str("bounds").rng();
        for trial in 0..200 {
            let b = rng.gen_range(2..=16);
            let e = rng.gen_range(3..=8);
            let tau = rng.gen_range(0.05..5.0);
            let s = random_unit(b, e, &format!("s{trial}"));
            let t = random_unit(b, e, &format!("t{trial}"));
            let loss = info_nce(&s, &t, tau).unwrap();
            let bound = (b as f64).ln() + 2.0 / tau;
            assert!(
                (0.0..=bound).contains(&loss),
                "loss {loss} outside [0, {bound}] at B={b} tau={tau}"
            );
        }
    }

    #[test]
    fn permuting_rows_together_leaves_the_loss_unchanged() {
        let s = random_unit(7, 16, "perm-s");
        let t = random_unit(7, 16, "perm-t");
        let base = info_nce(&s, &t, 0.1).unwrap();
        let perm = [3usize, 0, 6, 1, 5, 2, 4];
        let sp = Tensor::from_rows(7, 16, |r| s.row(perm[r]).to_vec()).unwrap();
        let tp = Tensor::from_rows(7, 16, |r| t.row(perm[r]).to_vec()).unwrap();
        let permuted = info_nce(&sp, &tp, 0.1).unwrap();
        assert_relative_eq!(base, permuted, epsilon = 1e-12);
    }

    #[test]
    fn huge_temperature_flattens_the_softmax_to_ln_b() {
        let s = random_unit(8, 32, "flat-s");
        let t = random_unit(8, 32, "flat-t");
        let loss = info_nce(&s, &t, 1e6).unwrap();
        assert!((loss - 8.0f64.ln()).abs() < 1e-6, "loss {loss}");
    }

    #[test]
    fn invalid_batches_are_rejected() {
        let m = basis(2, 2);
        assert!(info_nce(&m, &m, 0.0).is_err());
        assert!(info_nce(&m, &m, -0.1).is_err());
        let single = basis(1, 2);
        assert!(info_nce(&single, &single, 0.1).is_err());
        let unnormalized = Tensor::from_rows(2, 2, |_| vec![0.5, 0.5]).unwrap();
        assert!(info_nce(&unnormalized, &m, 0.1).is_err());
        let wide = basis(2, 3);
        assert!(info_nce(&m, &wide, 0.1).is_err());
    }

    #[test]
    fn taped_loss_matches_the_eager_oracle_and_reaches_both_sides() {
        let s = random_unit(6, 12, "tape-s");
        let t = random_unit(6, 12, "tape-t");
        let eager = info_nce(&s, &t, 0.1).unwrap();
        let mut tape = Tape::new();
        let s_n = tape.param(s);
        let t_n = tape.param(t);
        let loss = info_nce_on_tape(&mut tape, s_n, t_n, 0.1).unwrap();
        assert_relative_eq!(tape.value(loss).item().unwrap(), eager, epsilon = 1e-12);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(s_n).is_some());
        assert!(grads.get(t_n).is_some());
    }

    #[test]
    fn taped_gradient_matches_finite_differences() {
        use crate::tensor::tape::numeric_gradient;
        // Small dims keep the FD sweep cheap. Embeddings must stay unit
        // rows under perturbation, so normalize inside the loss closure and
        // differentiate through the normalization.
        let s0 = random_unit(3, 4, "fd-s");
        let t0 = random_unit(3, 4, "fd-t");
        let eval = |s_t: &Tensor, t_t: &Tensor| -> (f64, Tensor, Tensor) {
            let mut tape = Tape::new();
            let s_raw = tape.param(s_t.clone());
            let t_raw = tape.param(t_t.clone());
            let s_n = tape.l2_normalize_rows(s_raw, 1e-12).unwrap();
            let t_n = tape.l2_normalize_rows(t_raw, 1e-12).unwrap();
            let loss = info_nce_on_tape(&mut tape, s_n, t_n, 0.3).unwrap();
            let val = tape.value(loss).item().unwrap();
            let grads = tape.backward(loss).unwrap();
            (
                val,
                grads.get(s_raw).unwrap().clone(),
                grads.get(t_raw).unwrap().clone(),
            )
        };
        let (_, gs, gt) = eval(&s0, &t0);
        let numeric = numeric_gradient(
            |ps| Ok(eval(&ps[0], &ps[1]).0),
            &[s0.clone(), t0.clone()],
            1e-5,
        )
        .unwrap();
        for (analytic, fd) in [(&gs, &numeric[0]), (&gt, &numeric[1])] {
            for (a, n) in analytic.data().iter().zip(fd.data().iter()) {
                assert!(
                    (a - n).abs() / n.abs().max(1e-6) < 1e-4,
                    "analytic {a} vs numeric {n}"
                );
            }
        }
    }

    #[test]
    fn sequential_variant_reduces_to_info_nce_on_equal_steps() {
        let s = random_unit(5, 8, "seq-s");
        let t = random_unit(5, 8, "seq-t");
        let a = info_nce_sequential(&s, &t, 0.1).unwrap();
        let b = info_nce(&s, &t, 0.1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shifted_pairing_offsets_targets_by_one_step() {
        // Three steps of B=2: sources from steps {0,1} pair with targets
        // from steps {1,2}. The step index is encoded in the one-hot slot.
        let mk = |k: usize| {
            Tensor::from_rows(2, 4, |r| {
                let mut v = vec![0.0; 4];
                v[(r + k) % 4] = 1.0;
                v
            })
            .unwrap()
        };
        let source_steps: Vec<Tensor> = (0..3).map(mk).collect();
        let target_steps: Vec<Tensor> = (0..3).map(mk).collect();
        let (s, t) = shifted_pairs(&source_steps, &target_steps).unwrap();
        assert_eq!(s.shape(), &[4, 4]);
        assert_eq!(s.row(0), source_steps[0].row(0));
        assert_eq!(s.row(3), source_steps[1].row(1));
        assert_eq!(t.row(0), target_steps[1].row(0));
        assert_eq!(t.row(3), target_steps[2].row(1));
    }

    #[test]
    fn length_one_rollout_is_rejected() {
        let only = basis(2, 4);
        let err = shifted_pairs(
            std::slice::from_ref(&only),
            std::slice::from_ref(&only),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn shifted_orthonormal_case_matches_the_closed_form() {
        // Two steps of B=1 won't do (B≥2), so two steps of B=2 with basis
        // rows arranged so the stacked 4-pair batch is orthonormal in R⁴.
        let source_steps = vec![
            Tensor::from_rows(2, 4, |r| {
                let mut v = vec![0.0; 4];
                v[r] = 1.0;
                v
            })
            .unwrap(),
            Tensor::from_rows(2, 4, |r| {
                let mut v = vec![0.0; 4];
                v[2 + r] = 1.0;
                v
            })
            .unwrap(),
        ];
        // Targets at step 1 mirror sources at step 0, so after shifting the
        // stacked batch pairs each basis vector with itself.
        let target_steps = vec![source_steps[1].clone(), source_steps[0].clone()];
        let (s, t) = shifted_pairs(&source_steps[..], &target_steps[..]).unwrap();
        assert_eq!(s.shape(), &[2, 4]);
        let loss = info_nce_sequential(&s, &t, 1.0).unwrap();
        assert_relative_eq!(loss, (1.0 + (-1.0f64).exp()).ln(), epsilon = 1e-12);
    }
}
