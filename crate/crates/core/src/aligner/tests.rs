use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::gradcheck::{self, project, random_tensor, Probe};
use crate::numerics::Tape;
use crate::verify::check_with_params;

/// Every monotonic full-coverage path for `t` frames over `n` tokens.
fn enumerate_paths(t: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0];
    fn rec(t: usize, n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == t {
            if *cur.last().unwrap() == n - 1 {
                out.push(cur.clone());
            }
            return;
        }
        let last = *cur.last().unwrap();
        for step in 0..2 {
            if last + step < n {
                cur.push(last + step);
                rec(t, n, cur, out);
                cur.pop();
            }
        }
    }
    rec(t, n, &mut cur, &mut out);
    out
}

fn path_score(lp: &[f64], n: usize, path: &[usize]) -> f64 {
    path.iter().enumerate().map(|(t, &s)| lp[t * n + s]).sum()
}

fn random_lattice(rng: &mut impl Rng, t: usize, n: usize, spread: f64) -> AlignmentLattice<f64> {
    let mut data = Vec::with_capacity(t * n);
    for _ in 0..t {
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-spread..spread)).collect();
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        data.extend(row.iter().map(|v| v - lse));
    }
    AlignmentLattice::new(Tensor::new(&[t, n], data).unwrap()).unwrap()
}

fn lattice_from_rows(rows: &[&[f64]]) -> AlignmentLattice<f64> {
    let n = rows[0].len();
    let mut data = Vec::new();
    for r in rows {
        let lse = r.iter().map(|v| v.exp()).sum::<f64>().ln();
        data.extend(r.iter().map(|v| v - lse));
    }
    AlignmentLattice::new(Tensor::new(&[rows.len(), n], data).unwrap()).unwrap()
}

fn loss_value(l: &AlignmentLattice<f64>) -> f64 {
    forward_sum_loss(&Tape::no_grad(), l).unwrap().item().unwrap()
}

#[test]
fn path_enumeration_counts() {
    // C(T-1, N-1) paths
    assert_eq!(enumerate_paths(3, 2).len(), 2);
    assert_eq!(enumerate_paths(8, 4).len(), 35);
    assert_eq!(enumerate_paths(5, 5).len(), 1);
}

#[test]
fn all_equal_encodings_give_uniform_rows() {
    let tape = Tape::no_grad();
    let text = Tensor::<f64>::full(&[3, 4], 0.5);
    let mel = Tensor::<f64>::full(&[5, 4], 0.5);
    let l = soft_alignment(&tape, &text, &mel, None).unwrap();
    for v in l.log_probs.data() {
        assert_abs_diff_eq!(*v, -(3f64.ln()), epsilon = 1e-12);
    }
}

#[test]
fn separated_encodings_concentrate_mass() {
    let tape = Tape::no_grad();
    let text = Tensor::<f64>::new(&[2, 1], vec![0.0, 10.0]).unwrap();
    let mel = Tensor::<f64>::new(&[2, 1], vec![0.0, 10.0]).unwrap();
    let l = soft_alignment(&tape, &text, &mel, None).unwrap();
    let p: Vec<f64> = l.log_probs.data().iter().map(|v| v.exp()).collect();
    // softmax(0, -10) by hand
    let expect = 1.0 / (1.0 + (-10f64).exp());
    assert_abs_diff_eq!(p[0], expect, epsilon = 1e-12);
    assert_abs_diff_eq!(p[3], expect, epsilon = 1e-12);
    assert!(p[0] >= 0.99 && p[3] >= 0.99);
}

#[test]
fn soft_alignment_rows_normalized_with_prior() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tape = Tape::no_grad();
    let text = random_tensor(&mut rng, &[4, 6], 2.0);
    let mel = random_tensor(&mut rng, &[9, 6], 2.0);
    let prior = beta_binomial_log_prior::<f64>(9, 4).unwrap();
    let l = soft_alignment(&tape, &text, &mel, Some(&prior)).unwrap();
    for row in l.log_probs.data().chunks(4) {
        let s: f64 = row.iter().map(|v| v.exp()).sum();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
    }
}

#[test]
fn prior_rows_are_distributions_peaking_on_diagonal() {
    let prior = beta_binomial_log_prior::<f64>(20, 5).unwrap();
    for (t, row) in prior.data().chunks(5).enumerate() {
        let s: f64 = row.iter().map(|v| v.exp()).sum();
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-9);
        let argmax = (0..5).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        let diag = t as f64 * 4.0 / 19.0;
        assert!((argmax as f64 - diag).abs() <= 1.0, "t={t} argmax={argmax}");
    }
}

#[test]
fn unnormalized_lattice_rejected() {
    let t = Tensor::<f64>::new(&[2, 2], vec![0.0, 0.0, -1.0, -1.0]).unwrap();
    assert!(AlignmentLattice::new(t).is_err());
}

#[test]
fn single_token_loss_is_row_sum() {
    let l = lattice_from_rows(&[&[0.0], &[0.0], &[0.0]]);
    assert_abs_diff_eq!(loss_value(&l), 0.0, epsilon = 1e-12);
    let (_, d) = viterbi_durations(&l).unwrap();
    assert_eq!(d, vec![3]);
}

#[test]
fn two_paths_match_logsumexp() {
    let l = lattice_from_rows(&[&[0.3, -0.2], &[1.0, 0.1], &[-0.5, 0.7]]);
    let lp = l.log_probs.data();
    let a = path_score(lp, 2, &[0, 0, 1]);
    let b = path_score(lp, 2, &[0, 1, 1]);
    let expect = -(a.exp() + b.exp()).ln();
    assert_abs_diff_eq!(loss_value(&l), expect, epsilon = 1e-12);
}

#[test]
fn square_lattice_has_only_diagonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let l = random_lattice(&mut rng, 4, 4, 2.0);
    let lp = l.log_probs.data();
    let trace: f64 = (0..4).map(|i| lp[i * 4 + i]).sum();
    assert_abs_diff_eq!(loss_value(&l), -trace, epsilon = 1e-12);
    let (path, d) = viterbi_durations(&l).unwrap();
    assert_eq!(path.assignment, vec![0, 1, 2, 3]);
    assert_eq!(d, vec![1; 4]);
}

#[test]
fn infeasible_lattice_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let l = random_lattice(&mut rng, 2, 3, 1.0);
    assert!(matches!(
        forward_sum_loss(&Tape::no_grad(), &l),
        Err(Error::AlignmentInfeasible { tokens: 3, frames: 2 })
    ));
    assert!(matches!(viterbi_durations(&l), Err(Error::AlignmentInfeasible { .. })));
}

#[test]
fn viterbi_picks_favoured_path() {
    let l = lattice_from_rows(&[&[2.0, 0.0], &[2.0, 0.0], &[0.0, 2.0]]);
    let (path, d) = viterbi_durations(&l).unwrap();
    assert_eq!(path.assignment, vec![0, 0, 1]);
    assert_eq!(d, vec![2, 1]);
}

#[test]
fn viterbi_ties_prefer_staying() {
    let l = lattice_from_rows(&[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]]);
    let (path, _) = viterbi_durations(&l).unwrap();
    path.validate(2).unwrap();
    // backtracking from the end, the predecessor on the same token wins a tie
    assert_eq!(path.assignment, vec![0, 1, 1]);
}

#[test]
fn brute_force_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for n in 1..=4 {
        for t in n..=8 {
            let paths = enumerate_paths(t, n);
            for _ in 0..100 {
                let l = random_lattice(&mut rng, t, n, 3.0);
                let lp = l.log_probs.data();
                let scores: Vec<f64> = paths.iter().map(|p| path_score(lp, n, p)).collect();
                let total: f64 = scores.iter().map(|s| s.exp()).sum();
                let loss = loss_value(&l);
                assert!(((-loss).exp() - total).abs() <= 1e-9, "N={n} T={t}");
                let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let (path, d) = viterbi_durations(&l).unwrap();
                path.validate(n).unwrap();
                assert!((path.score(&l) - best).abs() <= 1e-12);
                assert!(d.iter().all(|&x| x > 0));
                assert_eq!(d.iter().sum::<usize>(), t);
                assert!(-loss >= best - 1e-12);
            }
        }
    }
}

#[test]
fn forward_sum_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (t, n) in [(3, 2), (6, 3), (8, 4), (5, 5)] {
        let raw = random_tensor(&mut rng, &[t, n], 2.0);
        let res = gradcheck::check(&[raw], &[0], Probe::All, &mut rng, |tape, v| {
            let lp = tape.log_softmax(&v[0], 1)?;
            forward_sum_loss(tape, &AlignmentLattice::new(lp)?)
        })
        .unwrap();
        assert!(res.max_rel_err <= 1e-4, "{res:?}");
    }
}

#[test]
fn forward_sum_gradient_is_negative_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let l = random_lattice(&mut rng, 6, 3, 2.0);
    let tape = Tape::new();
    let lp = tape.leaf(&l.log_probs);
    let loss = forward_sum_loss(&tape, &AlignmentLattice::new(lp.clone()).unwrap()).unwrap();
    tape.backward(&loss).unwrap();
    let g = tape.grad(&lp).unwrap();
    // each frame sits on exactly one token in every path
    for row in g.data().chunks(3) {
        assert_abs_diff_eq!(row.iter().sum::<f64>(), -1.0, epsilon = 1e-12);
    }
}

#[test]
fn pairwise_distance_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let text = random_tensor(&mut rng, &[3, 4], 1.0);
    let mel = random_tensor(&mut rng, &[5, 4], 1.0);
    let res = gradcheck::check(&[text, mel], &[0, 1], Probe::All, &mut rng, |tape, v| {
        let l = soft_alignment(tape, &v[0], &v[1], None)?;
        forward_sum_loss(tape, &l)
    })
    .unwrap();
    assert!(res.max_rel_err <= 1e-4, "{res:?}");
}

fn small_aligner(seed: u64, use_prior: bool) -> (Aligner, ParamStore<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let cfg = AlignerConfig { dim: 5, use_prior };
    let a = Aligner::new(cfg, 4, 3, &mut store, &mut Init { rng: &mut rng }).unwrap();
    (a, store)
}

#[test]
fn encoders_share_dim_and_preserve_lengths() {
    let (a, store) = small_aligner(1, false);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let text = random_tensor(&mut rng, &[1, 6, 4], 1.0);
    let mel = random_tensor(&mut rng, &[1, 11, 3], 1.0);
    let tape = Tape::no_grad();
    let ctx = Ctx::eval(&tape, &store);
    let (te, me) = a.encode_for_alignment(&ctx, &text, &[6], &mel, &[11]).unwrap();
    assert_eq!(te.shape(), &[1, 6, 5]);
    assert_eq!(me.shape(), &[1, 11, 5]);
    assert_eq!(Aligner::count(&a.cfg, 4, 3), store.num_scalars_with_prefix("aligner."));
}

#[test]
fn aligner_gradients_reach_both_branches() {
    let (a, store) = small_aligner(7, false);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let text = random_tensor(&mut rng, &[2, 4, 4], 1.0);
    let mel = random_tensor(&mut rng, &[2, 7, 3], 1.0);
    let tape = Tape::new();
    let ctx = Ctx::eval(&tape, &store);
    let ls = a.lattices(&ctx, &text, &[4, 3], &mel, &[7, 5]).unwrap();
    let mut total = forward_sum_loss(&tape, &ls[0]).unwrap();
    total = tape.add(&total, &forward_sum_loss(&tape, &ls[1]).unwrap()).unwrap();
    tape.backward(&total).unwrap();
    let grads = ctx.param_grads();
    for id in [a.text_conv1.0, a.text_conv2.0, a.mel_conv1.0, a.mel_conv2.0] {
        let g = grads[id.index()].as_ref().expect("gradient present");
        assert!(g.data().iter().any(|v| v.abs() > 0.0), "{}", store.name(id));
    }
}

#[test]
fn aligner_end_to_end_gradcheck() {
    for (seed, prior) in [(21, false), (22, true)] {
        let (a, store) = small_aligner(seed, prior);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = random_tensor(&mut rng, &[2, 3, 4], 1.0);
        let mel = random_tensor(&mut rng, &[2, 6, 3], 1.0);
        let ids = [a.text_conv1.0, a.text_conv2.1, a.mel_conv1.0, a.mel_conv2.0];
        let res = check_with_params(&store, &ids, &[text, mel], &mut rng, Probe::Sample(30), |ctx, v| {
            let ls = a.lattices(ctx, &v[0], &[3, 2], &v[1], &[6, 4])?;
            let l0 = forward_sum_loss(ctx.tape, &ls[0])?;
            let l1 = forward_sum_loss(ctx.tape, &ls[1])?;
            let s = ctx.tape.add(&l0, &l1)?;
            let extra = project(ctx.tape, &ls[1].log_probs, seed)?;
            ctx.tape.add(&s, &extra)
        })
        .unwrap();
        assert!(res.max_rel_err <= 1e-4, "{res:?}");
    }
}

proptest! {
    #[test]
    fn viterbi_durations_valid(seed in 0u64..5000, n in 1usize..6, extra in 0usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = n + extra;
        let l = random_lattice(&mut rng, t, n, 4.0);
        let (path, d) = viterbi_durations(&l).unwrap();
        prop_assert!(path.validate(n).is_ok());
        prop_assert!(d.iter().all(|&x| x > 0));
        prop_assert_eq!(d.iter().sum::<usize>(), t);
        prop_assert!(-loss_value(&l) >= path.score(&l) - 1e-9);
    }
}
