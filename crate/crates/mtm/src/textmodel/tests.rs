use rand::Rng;

use crate::autodiff::{finite_difference, max_relative_error, Graph, Tensor};
use crate::seeds;

use super::*;

fn tiny_dims() -> EncoderDims {
    EncoderDims { vocab: 12, embed: 3, hidden: 4, classes_max: 3 }
}

fn seq(ids: &[u32], max_len: usize) -> TokenSeq {
    let mut v = ids.to_vec();
    let len = v.len();
    v.resize(max_len, PAD_ID);
    TokenSeq { ids: v, len }
}

fn random_batch(rng: &mut impl Rng, dims: &EncoderDims, n: usize, max_len: usize) -> Vec<TokenSeq> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            let ids: Vec<u32> =
                (0..len).map(|_| rng.random_range(3..dims.vocab as u32)).collect();
            seq(&ids, max_len)
        })
        .collect()
}

#[test]
fn zero_embedding_logits_equal_head_bias() {
    let dims = tiny_dims();
    let mut p = EncoderParams::init(dims, 9);
    p.embedding = Tensor::zeros(vec![dims.vocab, dims.embed]);
    p.b_hidden = Tensor::zeros(vec![1, dims.hidden]);
    p.b_out = Tensor::new(vec![1, 3], vec![0.5, -0.25, 1.5]).unwrap();

    let mut g = Graph::new();
    let nodes = p.into_graph(&mut g);
    let batch = vec![seq(&[3, 4, 5], 6), seq(&[7], 6)];
    let logits = classify_forward(&mut g, &nodes, &batch, 2).unwrap();
    // Zero embeddings zero the pooled input, tanh(0)=0, so only the bias
    // remains; num_classes=2 slices the first two columns.
    assert_eq!(g.shape_of(logits).unwrap(), &[2, 2]);
    for row in 0..2 {
        let v = &g.values_of(logits).unwrap()[row * 2..row * 2 + 2];
        assert_eq!(v, &[0.5, -0.25]);
    }
}

#[test]
fn token_permutation_leaves_logits_unchanged() {
    let dims = tiny_dims();
    let p = EncoderParams::init(dims, 3);
    let run = |ids: &[u32]| {
        let mut g = Graph::new();
        let nodes = p.into_graph(&mut g);
        let logits = classify_forward(&mut g, &nodes, &[seq(ids, 8)], 3).unwrap();
        g.values_of(logits).unwrap().to_vec()
    };
    let a = run(&[3, 5, 7, 9]);
    let b = run(&[9, 7, 3, 5]);
    // Order-invariant up to float summation order.
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn appending_pad_never_changes_logits() {
    let dims = tiny_dims();
    let p = EncoderParams::init(dims, 4);
    let run = |max_len: usize| {
        let mut g = Graph::new();
        let nodes = p.into_graph(&mut g);
        let logits = classify_forward(&mut g, &nodes, &[seq(&[4, 6, 8], max_len)], 3).unwrap();
        g.values_of(logits).unwrap().to_vec()
    };
    assert_eq!(run(3), run(10));
}

#[test]
fn empty_sequence_rejected() {
    let dims = tiny_dims();
    let p = EncoderParams::init(dims, 5);
    let mut g = Graph::new();
    let nodes = p.into_graph(&mut g);
    let batch = vec![seq(&[3], 4), seq(&[], 4)];
    match classify_forward(&mut g, &nodes, &batch, 2).unwrap_err() {
        TextModelError::EmptySequence { index } => assert_eq!(index, 1),
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn empty_batch_rejected() {
    let dims = tiny_dims();
    let p = EncoderParams::init(dims, 5);
    let mut g = Graph::new();
    let nodes = p.into_graph(&mut g);
    assert!(matches!(
        classify_forward(&mut g, &nodes, &[], 2),
        Err(TextModelError::EmptyBatch)
    ));
}

#[test]
fn too_many_classes_rejected() {
    let dims = tiny_dims();
    let p = EncoderParams::init(dims, 5);
    let mut g = Graph::new();
    let nodes = p.into_graph(&mut g);
    assert!(matches!(
        classify_forward(&mut g, &nodes, &[seq(&[3], 4)], 4),
        Err(TextModelError::TooManyClasses { requested: 4, available: 3 })
    ));
}

#[test]
fn classifier_gradients_match_finite_differences() {
    let dims = tiny_dims();
    let params = EncoderParams::init(dims, 21);
    let mut rng = seeds::stream(21, "textmodel-fd", 0);
    let batch = random_batch(&mut rng, &dims, 4, 6);
    let targets: Vec<usize> = (0..4).map(|_| rng.random_range(0..2)).collect();

    let loss_of = |tensors: &[Tensor]| {
        let p = EncoderParams::from_named(&[
            ("embedding".to_owned(), tensors[0].clone()),
            ("w_hidden".to_owned(), tensors[1].clone()),
            ("b_hidden".to_owned(), tensors[2].clone()),
            ("w_out".to_owned(), tensors[3].clone()),
            ("b_out".to_owned(), tensors[4].clone()),
        ])
        .expect("consistent shapes");
        let mut g = Graph::new();
        let nodes = p.into_graph(&mut g);
        let logits = classify_forward(&mut g, &nodes, &batch, 2).expect("forward");
        let loss = g.softmax_cross_entropy(logits, targets.clone())?;
        Ok(g.values_of(loss)?[0])
    };
    let flat: Vec<Tensor> = params.tensors().iter().map(|(_, t)| (*t).clone()).collect();
    let fd = finite_difference(loss_of, &flat, 1e-5).unwrap();

    let mut g = Graph::new();
    let nodes = params.into_graph(&mut g);
    let logits = classify_forward(&mut g, &nodes, &batch, 2).unwrap();
    let loss = g.softmax_cross_entropy(logits, targets).unwrap();
    let grads = g.backward(loss, &nodes.list(), false).unwrap();

    for (i, id) in nodes.list().into_iter().enumerate() {
        let err = max_relative_error(grads.tensor(id).unwrap().values(), fd[i].values());
        assert!(err < 1e-6, "param {i}: relative error {err}");
    }
}

#[test]
fn all_parameters_receive_gradients() {
    let dims = tiny_dims();
    let params = EncoderParams::init(dims, 33);
    let mut rng = seeds::stream(33, "textmodel-probe", 0);
    let batch = random_batch(&mut rng, &dims, 6, 5);
    let targets: Vec<usize> = (0..6).map(|_| rng.random_range(0..2)).collect();

    let mut g = Graph::new();
    let nodes = params.into_graph(&mut g);
    let logits = classify_forward(&mut g, &nodes, &batch, 2).unwrap();
    let loss = g.softmax_cross_entropy(logits, targets).unwrap();
    let grads = g.backward(loss, &nodes.list(), false).unwrap();
    for (i, id) in nodes.list().into_iter().enumerate() {
        let nonzero = grads.tensor(id).unwrap().values().iter().any(|&v| v != 0.0);
        assert!(nonzero, "parameter {i} received an all-zero gradient");
    }
}

#[test]
fn batch_rows_are_independent() {
    let dims = tiny_dims();
    let p = EncoderParams::init(dims, 6);
    let run = |batch: &[TokenSeq]| {
        let mut g = Graph::new();
        let nodes = p.into_graph(&mut g);
        let logits = classify_forward(&mut g, &nodes, batch, 3).unwrap();
        g.values_of(logits).unwrap().to_vec()
    };
    let s1 = seq(&[3, 4], 6);
    let s2 = seq(&[5, 6, 7], 6);
    let joint = run(&[s1.clone(), s2.clone()]);
    let solo1 = run(&[s1]);
    let solo2 = run(&[s2]);
    assert_eq!(&joint[..3], &solo1[..]);
    assert_eq!(&joint[3..], &solo2[..]);
}

#[test]
fn init_is_seed_deterministic() {
    let dims = tiny_dims();
    assert_eq!(EncoderParams::init(dims, 7), EncoderParams::init(dims, 7));
    assert_ne!(EncoderParams::init(dims, 7), EncoderParams::init(dims, 8));
}
