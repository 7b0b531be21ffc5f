//! Graph readout and classification: mean‖max pooling over nodes, a two
//! layer MLP per particle, particle-weighted probability averaging and the
//! cross-entropy sequence loss.
//!
//! Every function has a plain and a tape form with identical operation
//! order, so probabilities computed during training match inference bitwise.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{MlpHead, TapedMlpHead};
use crate::tape::{Tape, Var};

/// Probability floor inside the cross-entropy, guarding log(0).
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean‖max pooling over nodes: (R×d) → (1×2d).
pub fn readout(h: &Array2<f64>) -> Result<Array2<f64>> {
    let (r, d) = h.dim();
    if r == 0 || d == 0 {
        return Err(Error::input("cannot read out an empty graph"));
    }
    let mut z = Array2::<f64>::zeros((1, 2 * d));
    for j in 0..d {
        z[[0, j]] = h.column(j).sum() / r as f64;
    }
    for j in 0..d {
        let mut best = h[[0, j]];
        for i in 1..r {
            if h[[i, j]] > best {
                best = h[[i, j]];
            }
        }
        z[[0, d + j]] = best;
    }
    Ok(z)
}

/// Tape mirror of [`readout`].
pub fn readout_tape(tape: &mut Tape, h: Var) -> Result<Var> {
    let (r, d) = tape.value(h).dim();
    if r == 0 || d == 0 {
        return Err(Error::input("cannot read out an empty graph"));
    }
    let mean = tape.row_mean(h);
    let max = tape.row_max(h);
    Ok(tape.concat_cols(mean, max))
}

/// Two affine maps with ReLU between: (1×2d) → logits (1×C).
pub fn mlp_logits(z: &Array2<f64>, head: &MlpHead) -> Result<Array2<f64>> {
    if z.ncols() != head.w1.value.nrows() {
        return Err(Error::input(format!(
            "embedding width {} does not match head input width {}",
            z.ncols(),
            head.w1.value.nrows()
        )));
    }
    let mut h1 = z.dot(&head.w1.value);
    for mut row in h1.rows_mut() {
        row += &head.b1.value.row(0);
    }
    h1.mapv_inplace(|x| x.max(0.0));
    let mut logits = h1.dot(&head.w2.value);
    for mut row in logits.rows_mut() {
        row += &head.b2.value.row(0);
    }
    Ok(logits)
}

/// Tape mirror of [`mlp_logits`].
pub fn mlp_logits_tape(tape: &mut Tape, z: Var, head: &TapedMlpHead) -> Result<Var> {
    if tape.value(z).ncols() != tape.value(head.w1).nrows() {
        return Err(Error::input(format!(
            "embedding width {} does not match head input width {}",
            tape.value(z).ncols(),
            tape.value(head.w1).nrows()
        )));
    }
    let a = tape.matmul(z, head.w1);
    let a = tape.add_row(a, head.b1);
    let a = tape.relu(a);
    let logits = tape.matmul(a, head.w2);
    Ok(tape.add_row(logits, head.b2))
}

/// Row softmax mirroring the tape operation bit for bit.
pub fn softmax_row(logits: &Array2<f64>) -> Array2<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|x| (x - max).exp());
    let total: f64 = exps.sum();
    exps / total
}

/// Particle-weighted class probabilities: ŷ = Σ_k w_k·softmax(MLP(z_k)).
/// Softmax comes before the convex combination so ŷ stays on the simplex.
pub fn predict(
    weights: &[f64],
    embeddings: &[Array2<f64>],
    head: &MlpHead,
) -> Result<Array2<f64>> {
    if weights.len() != embeddings.len() || weights.is_empty() {
        return Err(Error::input(format!(
            "{} weights for {} embeddings",
            weights.len(),
            embeddings.len()
        )));
    }
    let mut acc: Option<Array2<f64>> = None;
    for (w, emb) in weights.iter().zip(embeddings.iter()) {
        let z = readout(emb)?;
        let probs = softmax_row(&mlp_logits(&z, head)?);
        let term = &probs * *w;
        acc = Some(match acc {
            None => term,
            Some(a) => a + term,
        });
    }
    Ok(acc.expect("nonempty ensemble"))
}

/// Tape mirror of [`predict`]; weights are 1×1 tape scalars.
pub fn predict_tape(
    tape: &mut Tape,
    weights: &[Var],
    embeddings: &[Var],
    head: &TapedMlpHead,
) -> Result<Var> {
    if weights.len() != embeddings.len() || weights.is_empty() {
        return Err(Error::input(format!(
            "{} weights for {} embeddings",
            weights.len(),
            embeddings.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for (&w, &emb) in weights.iter().zip(embeddings.iter()) {
        let z = readout_tape(tape, emb)?;
        let logits = mlp_logits_tape(tape, z, head)?;
        let probs = tape.softmax(logits);
        let term = tape.mul_scalar(probs, w);
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term),
        });
    }
    Ok(acc.expect("nonempty ensemble"))
}

/// Mean cross-entropy over the per-step predictions:
/// (1/T)·Σ_t −log ŷ_t[label], probabilities floored at [`PROB_FLOOR`].
pub fn sequence_loss(predictions: &[Array2<f64>], label: usize) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::input("sequence loss needs at least one prediction"));
    }
    let classes = predictions[0].ncols();
    if label >= classes {
        return Err(Error::input(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    let mut total = 0.0;
    for yhat in predictions {
        let p = yhat[[0, label]].max(PROB_FLOOR);
        total += p.ln() * -1.0;
    }
    Ok(total * (1.0 / predictions.len() as f64))
}

/// Tape mirror of [`sequence_loss`].
pub fn sequence_loss_tape(tape: &mut Tape, predictions: &[Var], label: usize) -> Result<Var> {
    if predictions.is_empty() {
        return Err(Error::input("sequence loss needs at least one prediction"));
    }
    let classes = tape.value(predictions[0]).ncols();
    if label >= classes {
        return Err(Error::input(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    let mut total: Option<Var> = None;
    for &yhat in predictions {
        let picked = tape.take_col(yhat, label);
        let floored = tape.clamp_min(picked, PROB_FLOOR);
        let ln = tape.ln(floored);
        let ce = tape.scale(ln, -1.0);
        total = Some(match total {
            None => ce,
            Some(t) => tape.add(t, ce),
        });
    }
    Ok(tape.scale(total.expect("nonempty"), 1.0 / predictions.len() as f64))
}

/// One sample's filter outputs: per-step class probabilities plus the two
/// summary predictions (step average, and the last step alone).
#[derive(Debug, Clone)]
pub struct PredictionRecord {
    pub sample_id: usize,
    pub label: usize,
    pub per_step: Vec<Vec<f64>>,
    pub averaged: Vec<f64>,
    pub last: Vec<f64>,
}

impl PredictionRecord {
    pub fn from_steps(sample_id: usize, label: usize, steps: &[Array2<f64>]) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::input("prediction record needs at least one step"));
        }
        let classes = steps[0].ncols();
        let per_step: Vec<Vec<f64>> = steps.iter().map(|y| y.row(0).to_vec()).collect();
        let mut averaged = vec![0.0; classes];
        for row in &per_step {
            for (a, v) in averaged.iter_mut().zip(row.iter()) {
                *a += v;
            }
        }
        for a in &mut averaged {
            *a /= per_step.len() as f64;
        }
        let last = per_step.last().expect("nonempty").clone();
        Ok(PredictionRecord {
            sample_id,
            label,
            per_step,
            averaged,
            last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParameters;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((r, c), |_| rng.sample::<f64, _>(StandardNormal))
    }

    fn test_head(d_hidden: usize, seed: u64) -> MlpHead {
        ModelParameters::init(6, d_hidden, 4, 2, 2, 2, seed).unwrap().head
    }

    #[test]
    fn identical_rows_read_out_as_value_twice() {
        let h = array![[0.3, -0.7, 2.0], [0.3, -0.7, 2.0], [0.3, -0.7, 2.0]];
        let z = readout(&h).unwrap();
        let expect = array![[0.3, -0.7, 2.0, 0.3, -0.7, 2.0]];
        for (a, b) in z.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn single_row_reads_out_as_itself_twice() {
        let h = array![[1.5, -2.5]];
        let z = readout(&h).unwrap();
        assert_eq!(z, array![[1.5, -2.5, 1.5, -2.5]]);
    }

    #[test]
    fn explicit_three_by_two_readout() {
        let h = array![[1.0, 4.0], [2.0, -1.0], [6.0, 0.0]];
        let z = readout(&h).unwrap();
        assert_eq!(z, array![[3.0, 1.0, 6.0, 4.0]]);
    }

    #[test]
    fn empty_graph_is_rejected() {
        let h = Array2::<f64>::zeros((0, 3));
        assert!(readout(&h).is_err());
    }

    #[test]
    fn readout_is_permutation_invariant() {
        let h = random_matrix(7, 4, 1);
        let z = readout(&h).unwrap();
        let perm = [4usize, 1, 6, 0, 2, 5, 3];
        let mut hp = Array2::<f64>::zeros((7, 4));
        for i in 0..7 {
            for j in 0..4 {
                hp[[i, j]] = h[[perm[i], j]];
            }
        }
        let zp = readout(&hp).unwrap();
        for (a, b) in z.iter().zip(zp.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn single_particle_prediction_is_the_softmax() {
        let head = test_head(3, 2);
        let emb = random_matrix(6, 3, 3);
        let got = predict(&[1.0], &[emb.clone()], &head).unwrap();
        let z = readout(&emb).unwrap();
        let direct = softmax_row(&mlp_logits(&z, &head).unwrap());
        assert_eq!(got, direct);
    }

    #[test]
    fn identical_embeddings_collapse_to_one_prediction() {
        let head = test_head(3, 4);
        let emb = random_matrix(6, 3, 5);
        let pair = predict(&[0.3, 0.7], &[emb.clone(), emb.clone()], &head).unwrap();
        let solo = predict(&[1.0], &[emb], &head).unwrap();
        for (a, b) in pair.iter().zip(solo.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn three_particles_match_the_weighted_sum_oracle() {
        let head = test_head(3, 6);
        let embs: Vec<Array2<f64>> = (0..3).map(|i| random_matrix(6, 3, 10 + i)).collect();
        let weights = [0.5, 0.3, 0.2];
        let got = predict(&weights, &embs, &head).unwrap();
        let mut expect = Array2::<f64>::zeros((1, 2));
        for (w, emb) in weights.iter().zip(embs.iter()) {
            let z = readout(emb).unwrap();
            let p = softmax_row(&mlp_logits(&z, &head).unwrap());
            expect = expect + &p * *w;
        }
        for (a, b) in got.iter().zip(expect.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn predictions_stay_on_the_simplex(seed in 0u64..200) {
            let head = test_head(3, 7);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<f64> = (0..4).map(|_| rng.random::<f64>() + 1e-3).collect();
            let weights = crate::smc::normalize_weights(&raw).unwrap();
            let embs: Vec<Array2<f64>> =
                (0..4).map(|i| random_matrix(6, 3, seed * 7 + i)).collect();
            let y = predict(&weights, &embs, &head).unwrap();
            let total: f64 = y.sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
            prop_assert!(y.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn loss_examples() {
        let perfect = vec![array![[1.0, 0.0]]; 4];
        assert!(sequence_loss(&perfect, 0).unwrap() <= 1e-11);
        let uniform = vec![array![[0.5, 0.5]]; 3];
        assert!((sequence_loss(&uniform, 1).unwrap() - 2.0f64.ln()).abs() < 1e-12);
        // explicit T=3 arithmetic
        let preds = vec![
            array![[0.8, 0.2]],
            array![[0.6, 0.4]],
            array![[0.9, 0.1]],
        ];
        let expect = -(0.8f64.ln() + 0.6f64.ln() + 0.9f64.ln()) / 3.0;
        assert!((sequence_loss(&preds, 0).unwrap() - expect).abs() < 1e-12);
        assert!(sequence_loss(&preds, 2).is_err());
    }

    #[test]
    fn plain_and_tape_paths_agree_bitwise() {
        let model = ModelParameters::init(6, 3, 4, 2, 2, 2, 8).unwrap();
        let embs: Vec<Array2<f64>> = (0..3).map(|i| random_matrix(6, 3, 20 + i)).collect();
        let raw: Vec<f64> = vec![0.2, 0.5, 0.3];
        let plain_pred = predict(&raw, &embs, &model.head).unwrap();
        let plain_loss = sequence_loss(&[plain_pred.clone()], 1).unwrap();

        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let wv: Vec<Var> = raw
            .iter()
            .map(|w| tape.constant(Array2::from_elem((1, 1), *w)))
            .collect();
        let ev: Vec<Var> = embs.iter().map(|e| tape.constant(e.clone())).collect();
        let pred = predict_tape(&mut tape, &wv, &ev, &bound.head).unwrap();
        let loss = sequence_loss_tape(&mut tape, &[pred], 1).unwrap();
        assert_eq!(tape.value(pred), &plain_pred);
        assert_eq!(tape.scalar_value(loss).to_bits(), plain_loss.to_bits());
    }

    #[test]
    fn prediction_record_averages_steps() {
        let steps = vec![array![[0.8, 0.2]], array![[0.4, 0.6]]];
        let rec = PredictionRecord::from_steps(3, 1, &steps).unwrap();
        assert_eq!(rec.sample_id, 3);
        assert_eq!(rec.averaged, vec![0.6000000000000001, 0.4]);
        assert_eq!(rec.last, vec![0.4, 0.6]);
        assert_eq!(rec.per_step.len(), 2);
    }
}
