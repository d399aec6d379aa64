//! Finite-difference checks of every differentiable primitive and of both
//! full model graphs.

#[path = "support/grad.rs"]
mod grad;

use grad::{CASES, TOL};

macro_rules! cases {
    ($($test:ident => $name:literal),* $(,)?) => {$(
        #[test]
        fn $test() {
            let (_, case) = CASES.iter().find(|(n, _)| *n == $name).expect("registered case");
            let err = case();
            assert!(err < TOL, "{}: relative error {err}", $name);
        }
    )*};
}

cases! {
    matmul => "matmul",
    matvec => "matvec",
    add => "add",
    mul => "mul",
    mul_self => "mul-self",
    sigmoid => "sigmoid",
    tanh => "tanh",
    scale => "scale",
    slice_concat => "slice+concat",
    row => "row",
    sum => "sum",
    gather => "gather",
    softmax_xent => "softmax-xent",
    add_n => "add_n",
    max_over => "max_over",
    clip_to_ball => "clip-to-ball",
    lstm_cell => "lstm-cell",
    autoencoder_graph => "autoencoder-graph",
    classifier_graph => "classifier-graph",
}

